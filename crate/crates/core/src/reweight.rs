//! Death-case weights for the dataset truncated to known outcomes.
//!
//! Transferred patients are removed; each death on day `t` in state `s` gets
//! weight `w(t, s)` so that the weighted death share of every state equals
//! the model-corrected probability `p_d(s)`. Alive cases keep weight 1.

use serde::{Deserialize, Serialize};

use crate::cohort::{assign_cohort, horizon_outcome, CohortClass, HorizonOutcome, PatientRecord, StatePartition};
use crate::counts::DailyCounts;
use crate::error::{MortalityError, Result};
use crate::estimation::{TransitionTable, Variant};
use crate::fod::check_compatible;
use crate::grid::DayMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub variant: Variant,
    pub horizon: usize,
    pub state_labels: Vec<String>,
    /// `w(t, s)`, present only where `ΔD(t, s) > 0`.
    pub w: DayMatrix<Option<f64>>,
    /// Weighted initial population `H_0^w(s)`.
    pub h0w: Vec<f64>,
    /// Model-corrected probability of death within the horizon.
    pub p_d: Vec<f64>,
    /// Model-corrected probability of death on day `t`.
    pub p_dt: DayMatrix<f64>,
    /// Expected deaths among transferred patients, `D_L(horizon, s)`.
    pub dead_outside: Vec<f64>,
}

impl WeightTable {
    pub fn weight(&self, day: usize, state: usize) -> Option<f64> {
        if day < 1 || day > self.horizon {
            return None;
        }
        self.w.get(day, state)
    }

    /// All defined weights, one per death case, in (state, day) order.
    pub fn case_weights(&self, counts: &DailyCounts) -> Vec<f64> {
        let mut out = Vec::new();
        for s in 0..self.state_labels.len() {
            for t in 1..=self.horizon {
                if let Some(w) = self.w.get(t, s) {
                    out.extend(std::iter::repeat_n(w, counts.dd.get(t, s) as usize));
                }
            }
        }
        out
    }
}

/// Expected daily deaths of the transferred population.
///
/// Transferred patients keep the in-registry `α`, `ν` and are never
/// transferred again. Under the retarded ordering a patient transferred on day
/// `t` first faces the lottery on day `t+1`; under the advanced ordering the
/// transfer precedes the lottery of day `t`.
fn outside_deaths(tt: &TransitionTable, counts: &DailyCounts, s: usize) -> Vec<f64> {
    let mut outside = 0.0;
    let mut deaths = Vec::with_capacity(tt.horizon);
    for t in 1..=tt.horizon {
        let (a, v) = (tt.alpha.get(t, s), tt.nu.get(t, s));
        let moved = counts.dl.get(t, s) as f64;
        match tt.variant {
            Variant::RetardedTransfer => {
                deaths.push(v * outside);
                outside = outside * (1.0 - a - v) + moved;
            }
            Variant::AdvancedTransfer => {
                let exposed = outside + moved;
                deaths.push(v * exposed);
                outside = exposed * (1.0 - a - v);
            }
        }
    }
    deaths
}

pub fn death_weights(tt: &TransitionTable, counts: &DailyCounts) -> Result<WeightTable> {
    check_compatible(tt, counts)?;
    let n = counts.n_states();
    let horizon = counts.horizon;
    let mut w = DayMatrix::new(1, horizon, n);
    let mut p_dt = DayMatrix::new(1, horizon, n);
    let mut h0w = vec![0.0; n];
    let mut p_d = vec![0.0; n];
    let mut dead_outside = vec![0.0; n];

    for s in 0..n {
        let h0 = counts.initial(s) as f64;
        if h0 == 0.0 {
            continue;
        }
        let outside = outside_deaths(tt, counts, s);
        let d_inside = counts.deaths(s) as f64;
        let d_outside: f64 = outside.iter().sum();
        let alive = counts.known_alive(s) as f64;
        let survivors = h0 - d_inside - d_outside;
        if survivors <= 0.0 || alive == 0.0 {
            return Err(MortalityError::Domain(format!(
                "state {} has no alive pool (p_d = 1)",
                counts.partition.labels()[s]
            )));
        }
        // alive / (1 - p_d), arranged to be exactly H_0 when nobody is transferred
        let weighted_initial = alive * h0 / survivors;
        let scale = weighted_initial / h0;
        for t in 1..=horizon {
            let dd = counts.dd.get(t, s) as f64;
            let dd_outside = outside[t - 1];
            p_dt.set(t, s, (dd + dd_outside) / h0);
            if dd > 0.0 {
                w.set(t, s, Some((dd + dd_outside) / dd * scale));
            } else if dd_outside > 1e-12 {
                return Err(MortalityError::Precondition(format!(
                    "expected outside deaths on day {t} in state {} without any in-registry death; \
                     the transition table was not estimated from these counts",
                    counts.partition.labels()[s]
                )));
            }
        }
        h0w[s] = weighted_initial;
        p_d[s] = (d_inside + d_outside) / h0;
        dead_outside[s] = d_outside;
    }

    Ok(WeightTable {
        variant: tt.variant,
        horizon,
        state_labels: counts.partition.labels().to_vec(),
        w,
        h0w,
        p_d,
        p_dt,
        dead_outside,
    })
}

/// Effective sample size `(Σw)² / Σw²` of a weighted dataset.
pub fn effective_dof(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(MortalityError::Domain("weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq == 0.0 {
        return Err(MortalityError::Domain("all weights are zero".into()));
    }
    Ok(sum * sum / sum_sq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedRecord {
    pub record: PatientRecord,
    pub weight: f64,
}

/// Attaches weights to known-outcome records, preserving order.
pub fn emit_weighted_dataset(
    records: &[PatientRecord],
    partition: &StatePartition,
    weights: &WeightTable,
) -> Result<Vec<WeightedRecord>> {
    if partition.labels() != weights.state_labels.as_slice() {
        return Err(MortalityError::Mismatch(
            "weight table built for another partition".into(),
        ));
    }
    let horizon = weights.horizon;
    records
        .iter()
        .map(|record| {
            if assign_cohort(record, horizon)? != CohortClass::AvailableW30D {
                return Err(MortalityError::Precondition(format!(
                    "record {} does not have a known outcome",
                    record.patient_id
                )));
            }
            let weight = match horizon_outcome(record, horizon) {
                HorizonOutcome::Dead => {
                    let s = partition.classify(record)?.0;
                    let day = record.event_day as usize;
                    weights.weight(day, s).ok_or_else(|| {
                        MortalityError::Precondition(format!(
                            "no weight for death of {} on day {day} in state {}",
                            record.patient_id,
                            partition.labels()[s]
                        ))
                    })?
                }
                _ => 1.0,
            };
            Ok(WeightedRecord {
                record: record.clone(),
                weight,
            })
        })
        .collect()
}

/// Weighted share of deaths within the horizon, per state.
pub fn weighted_death_share(
    weighted: &[WeightedRecord],
    partition: &StatePartition,
    horizon: usize,
) -> Result<Vec<f64>> {
    let n = partition.len();
    let mut dead = vec![0.0; n];
    let mut total = vec![0.0; n];
    for wr in weighted {
        let s = partition.classify(&wr.record)?.0;
        total[s] += wr.weight;
        if horizon_outcome(&wr.record, horizon) == HorizonOutcome::Dead {
            dead[s] += wr.weight;
        }
    }
    Ok(dead
        .iter()
        .zip(&total)
        .map(|(d, t)| if *t > 0.0 { d / t } else { 0.0 })
        .collect())
}
