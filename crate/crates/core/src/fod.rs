//! Cumulative fraction-of-death curves, naive estimators and model comparison.

use serde::{Deserialize, Serialize};

use crate::cohort::StateId;
use crate::counts::DailyCounts;
use crate::error::{MortalityError, Result};
use crate::estimation::{TransitionTable, Variant};
use crate::special::{normal_two_sided, PValue};

/// Cumulative death, recovery and remaining fractions of one state's chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionCurves {
    /// Index `t - 1` holds the value after day `t`.
    pub death: Vec<f64>,
    pub recovery: Vec<f64>,
    pub remaining: Vec<f64>,
}

/// Runs the recovery/death chain of one state without transfer.
pub fn absorption_curves(tt: &TransitionTable, state: StateId) -> AbsorptionCurves {
    let s = state.0;
    let mut survive = 1.0;
    let mut dead = 0.0;
    let mut recovered = 0.0;
    let mut curves = AbsorptionCurves {
        death: Vec::with_capacity(tt.horizon),
        recovery: Vec::with_capacity(tt.horizon),
        remaining: Vec::with_capacity(tt.horizon),
    };
    for t in 1..=tt.horizon {
        let (a, v) = (tt.alpha.get(t, s), tt.nu.get(t, s));
        dead += v * survive;
        recovered += a * survive;
        survive *= 1.0 - a - v;
        curves.death.push(dead);
        curves.recovery.push(recovered);
        curves.remaining.push(survive);
    }
    curves
}

/// `scFOD(t, s) = Σ_{k≤t} ν(k, s) Π_{i<k} (1 − α(i, s) − ν(i, s))`, indexed by `t - 1`.
pub fn scfod_curve(tt: &TransitionTable, state: StateId) -> Vec<f64> {
    absorption_curves(tt, state).death
}

/// Population-weighted mean of the per-state curves.
pub fn cfod(tt: &TransitionTable, counts: &DailyCounts) -> Result<Vec<f64>> {
    check_compatible(tt, counts)?;
    let total = counts.total();
    if total == 0 {
        return Err(MortalityError::Domain("cFOD of an empty cohort".into()));
    }
    let mut curve = vec![0.0; tt.horizon];
    for s in tt.partition.states() {
        let weight = counts.initial(s.0) as f64;
        if weight == 0.0 {
            continue;
        }
        for (acc, v) in curve.iter_mut().zip(scfod_curve(tt, s)) {
            *acc += v * weight;
        }
    }
    for v in &mut curve {
        *v /= total as f64;
    }
    Ok(curve)
}

pub(crate) fn check_compatible(tt: &TransitionTable, counts: &DailyCounts) -> Result<()> {
    if !tt.partition.is_compatible(&counts.partition) {
        return Err(MortalityError::Mismatch(format!(
            "transition table uses partition {}, counts use {}",
            tt.partition, counts.partition
        )));
    }
    if tt.horizon != counts.horizon {
        return Err(MortalityError::Mismatch(format!(
            "transition table horizon {} differs from counts horizon {}",
            tt.horizon, counts.horizon
        )));
    }
    Ok(())
}

/// Outcomes visible to the registry at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTotals {
    pub alive: f64,
    pub dead: f64,
    pub unknown: f64,
}

impl OutcomeTotals {
    pub fn from_counts(counts: &DailyCounts) -> Self {
        let n = counts.n_states();
        let dead: u64 = (0..n).map(|s| counts.deaths(s)).sum();
        let unknown: u64 = (0..n).map(|s| counts.transfers(s)).sum();
        let alive: u64 = (0..n).map(|s| counts.known_alive(s)).sum();
        OutcomeTotals {
            alive: alive as f64,
            dead: dead as f64,
            unknown: unknown as f64,
        }
    }

    pub fn total(&self) -> f64 {
        self.alive + self.dead + self.unknown
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NaiveMode {
    /// Drop every record with an unknown outcome.
    AvailableCase,
    /// Count every transferred patient as alive.
    AllTransferredAlive,
}

pub fn naive_fod(totals: OutcomeTotals, mode: NaiveMode) -> Result<f64> {
    let OutcomeTotals { alive, dead, unknown } = totals;
    if alive < 0.0 || dead < 0.0 || unknown < 0.0 {
        return Err(MortalityError::Domain("outcome totals must be non-negative".into()));
    }
    if alive + dead <= 0.0 {
        return Err(MortalityError::Domain("no known outcomes".into()));
    }
    Ok(match mode {
        NaiveMode::AvailableCase => dead / (alive + dead),
        NaiveMode::AllTransferredAlive => dead / (alive + dead + unknown),
    })
}

/// Corrected mortality for one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FodReport {
    pub partition: String,
    pub variant: Variant,
    pub horizon: usize,
    pub state_labels: Vec<String>,
    /// `scfod[s][t - 1]`
    pub scfod: Vec<Vec<f64>>,
    /// `cfod[t - 1]`
    pub cfod: Vec<f64>,
    /// `cFOD(horizon)`
    pub corrected_fod: f64,
    /// `H_0`
    pub total: f64,
    pub corrected_dead: f64,
    pub corrected_alive: f64,
    pub observed: OutcomeTotals,
    pub naive_available_case: f64,
    pub naive_all_alive: f64,
}

pub fn fod_report(tt: &TransitionTable, counts: &DailyCounts) -> Result<FodReport> {
    let cfod = cfod(tt, counts)?;
    let corrected_fod = *cfod.last().unwrap_or(&0.0);
    let total = counts.total() as f64;
    let corrected_dead = total * corrected_fod;
    let observed = OutcomeTotals::from_counts(counts);
    Ok(FodReport {
        partition: tt.partition.name().to_string(),
        variant: tt.variant,
        horizon: tt.horizon,
        state_labels: tt.partition.labels().to_vec(),
        scfod: tt.partition.states().map(|s| scfod_curve(tt, s)).collect(),
        cfod,
        corrected_fod,
        total,
        corrected_dead,
        corrected_alive: total - corrected_dead,
        observed,
        naive_available_case: naive_fod(observed, NaiveMode::AvailableCase)?,
        naive_all_alive: naive_fod(observed, NaiveMode::AllTransferredAlive)?,
    })
}

/// One line of a model comparison: a death count over a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub label: String,
    pub dead: f64,
    pub total: f64,
}

impl ComparisonEntry {
    pub fn new(label: impl Into<String>, dead: f64, total: f64) -> Self {
        ComparisonEntry {
            label: label.into(),
            dead,
            total,
        }
    }

    pub fn from_report(label: impl Into<String>, report: &FodReport) -> Self {
        Self::new(label, report.corrected_dead, report.total)
    }

    pub fn fod(&self) -> f64 {
        self.dead / self.total
    }
}

/// How the difference from the reference proportion is tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComparisonTest {
    /// z-test of each proportion against the reference proportion taken as
    /// known, on the reference entry's number of trials.
    AgainstReference,
    /// Pooled two-proportion z-test using each entry's own total.
    TwoProportionPooled,
}

impl ComparisonTest {
    pub fn describe(self) -> &'static str {
        match self {
            ComparisonTest::AgainstReference => {
                "two-sided z-test against the reference proportion on the reference trials"
            }
            ComparisonTest::TwoProportionPooled => "two-sided pooled two-proportion z-test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub alive: f64,
    pub dead: f64,
    pub total: f64,
    pub fod: f64,
    pub p_value: PValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub reference: String,
    pub method: ComparisonTest,
    pub method_description: String,
    pub rows: Vec<ComparisonRow>,
}

pub fn model_comparison_report(
    entries: &[ComparisonEntry],
    reference: usize,
    method: ComparisonTest,
) -> Result<ComparisonReport> {
    let reference_entry = entries
        .get(reference)
        .ok_or_else(|| MortalityError::Domain(format!("reference index {reference} out of range")))?;
    if entries
        .iter()
        .any(|e| !(e.total > 0.0) || e.dead < 0.0 || e.dead > e.total)
    {
        return Err(MortalityError::Domain(
            "comparison entries need 0 <= dead <= total, total > 0".into(),
        ));
    }
    let p_ref = reference_entry.fod();
    let rows = entries
        .iter()
        .map(|e| {
            let p = e.fod();
            let z = match method {
                ComparisonTest::AgainstReference => {
                    let se = (p_ref * (1.0 - p_ref) / reference_entry.total).sqrt();
                    if se > 0.0 {
                        (p - p_ref) / se
                    } else {
                        0.0
                    }
                }
                ComparisonTest::TwoProportionPooled => {
                    let pooled = (e.dead + reference_entry.dead) / (e.total + reference_entry.total);
                    let se = (pooled * (1.0 - pooled) * (1.0 / e.total + 1.0 / reference_entry.total)).sqrt();
                    if se > 0.0 {
                        (p - p_ref) / se
                    } else {
                        0.0
                    }
                }
            };
            ComparisonRow {
                label: e.label.clone(),
                alive: e.total - e.dead,
                dead: e.dead,
                total: e.total,
                fod: p,
                p_value: normal_two_sided(z),
            }
        })
        .collect();
    Ok(ComparisonReport {
        reference: reference_entry.label.clone(),
        method,
        method_description: method.describe().to_string(),
        rows,
    })
}
