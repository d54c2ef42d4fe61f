//! Transition coefficient estimation, Wilson intervals and the independence test.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortClass, PatientRecord, StatePartition};
use crate::counts::{aggregate_counts, DailyCounts};
use crate::error::{MortalityError, Result};
use crate::grid::DayMatrix;
use crate::special::{chi_square_sf, PValue};

/// Default normal quantile for 95% intervals.
pub const DEFAULT_Z: f64 = 1.96;

/// Order of the transfer lottery relative to the recovery/death lottery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Transfer is drawn before recovery/death each day.
    AdvancedTransfer,
    /// Transfer is drawn after recovery/death each day.
    RetardedTransfer,
}

impl Variant {
    pub const ALL: &'static [Variant] = &[Variant::AdvancedTransfer, Variant::RetardedTransfer];

    pub fn flag(self) -> &'static str {
        match self {
            Variant::AdvancedTransfer => "advanced",
            Variant::RetardedTransfer => "retarded",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "advanced" => Ok(Variant::AdvancedTransfer),
            "retarded" => Ok(Variant::RetardedTransfer),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

/// Wilson score interval for a proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionCI {
    pub p_hat: f64,
    pub lower: f64,
    pub upper: f64,
    pub z: f64,
    /// Sample size or effective degrees of freedom; need not be integral.
    pub n: f64,
}

impl ProportionCI {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Centre of the Wilson interval.
    pub fn midpoint(&self) -> f64 {
        let z2n = self.z * self.z / self.n;
        (self.p_hat + z2n / 2.0) / (1.0 + z2n)
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }

    pub fn overlaps(&self, other: &ProportionCI) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

/// Spread term of the score interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum WilsonForm {
    /// `z sqrt(p(1−p)/n + z²/4n²)`
    #[default]
    Score,
    /// `z sqrt(p(1−p)/n)`: same centre, slightly narrower for small `n`.
    SimplifiedSpread,
}

impl WilsonForm {
    pub fn flag(self) -> &'static str {
        match self {
            WilsonForm::Score => "score",
            WilsonForm::SimplifiedSpread => "simplified",
        }
    }
}

impl FromStr for WilsonForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        [WilsonForm::Score, WilsonForm::SimplifiedSpread]
            .into_iter()
            .find(|f| f.flag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown interval form `{s}`"))
    }
}

pub fn wilson_interval(p_hat: f64, n: f64, z: f64) -> Result<ProportionCI> {
    wilson_interval_with(p_hat, n, z, WilsonForm::Score)
}

pub fn wilson_interval_with(p_hat: f64, n: f64, z: f64, form: WilsonForm) -> Result<ProportionCI> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(MortalityError::Domain(format!("Wilson interval needs n > 0, got {n}")));
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(MortalityError::Domain(format!("proportion {p_hat} outside [0, 1]")));
    }
    let z2 = z * z;
    let scale = 1.0 / (1.0 + z2 / n);
    let centre = p_hat + z2 / (2.0 * n);
    let second_order = match form {
        WilsonForm::Score => z2 / (4.0 * n * n),
        WilsonForm::SimplifiedSpread => 0.0,
    };
    let spread = z * (p_hat * (1.0 - p_hat) / n + second_order).sqrt();
    Ok(ProportionCI {
        p_hat,
        lower: (scale * (centre - spread)).max(0.0),
        upper: (scale * (centre + spread)).min(1.0),
        z,
        n,
    })
}

/// Daily transition probabilities for one lottery ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub variant: Variant,
    pub partition: StatePartition,
    pub horizon: usize,
    /// Recovery probability `α(t, s)`.
    pub alpha: DayMatrix<f64>,
    /// Death probability `ν(t, s)`.
    pub nu: DayMatrix<f64>,
    /// Transfer probability `μ(t, s)`.
    pub mu: DayMatrix<f64>,
    /// Population `H(t, s)` behind each cell; zero marks an empty cell.
    pub n_eff: DayMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coefficient {
    Alpha,
    Nu,
    Mu,
}

impl TransitionTable {
    /// Builds a table from explicit coefficients, checking the probability bounds.
    pub fn from_coefficients(
        variant: Variant,
        partition: StatePartition,
        alpha: DayMatrix<f64>,
        nu: DayMatrix<f64>,
        mu: DayMatrix<f64>,
        n_eff: DayMatrix<f64>,
    ) -> Result<Self> {
        let horizon = alpha.days();
        let shape_ok = alpha.first_day() == 1
            && alpha.states() == partition.len()
            && alpha.same_shape(&nu)
            && alpha.same_shape(&mu)
            && alpha.same_shape(&n_eff);
        if !shape_ok {
            return Err(MortalityError::Mismatch(
                "coefficient matrices disagree in shape".into(),
            ));
        }
        let table = TransitionTable {
            variant,
            partition,
            horizon,
            alpha,
            nu,
            mu,
            n_eff,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for t in 1..=self.horizon {
            for s in 0..self.n_states() {
                let (a, v, m) = (self.alpha.get(t, s), self.nu.get(t, s), self.mu.get(t, s));
                let ok = (0.0..=1.0).contains(&a)
                    && (0.0..=1.0).contains(&v)
                    && (0.0..=1.0).contains(&m)
                    && a + v <= 1.0 + 1e-12;
                if !ok {
                    return Err(MortalityError::Domain(format!(
                        "coefficients at day {t}, state {s} are not probabilities: alpha={a}, nu={v}, mu={m}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.partition.len()
    }

    pub fn get(&self, coefficient: Coefficient, day: usize, state: usize) -> f64 {
        match coefficient {
            Coefficient::Alpha => self.alpha.get(day, state),
            Coefficient::Nu => self.nu.get(day, state),
            Coefficient::Mu => self.mu.get(day, state),
        }
    }

    /// Number of patients exposed to the lottery that produced the coefficient.
    pub fn denominator(&self, coefficient: Coefficient, day: usize, state: usize) -> f64 {
        let h = self.n_eff.get(day, state);
        match (self.variant, coefficient) {
            (Variant::AdvancedTransfer, Coefficient::Mu) => h,
            (Variant::AdvancedTransfer, _) => (1.0 - self.mu.get(day, state)) * h,
            (Variant::RetardedTransfer, Coefficient::Mu) => {
                (1.0 - self.alpha.get(day, state) - self.nu.get(day, state)) * h
            }
            (Variant::RetardedTransfer, _) => h,
        }
    }

    /// Wilson interval for one coefficient; `None` for empty cells.
    pub fn interval(&self, coefficient: Coefficient, day: usize, state: usize, z: f64) -> Option<ProportionCI> {
        let n = self.denominator(coefficient, day, state);
        if n <= 0.0 {
            return None;
        }
        wilson_interval(self.get(coefficient, day, state), n, z).ok()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Estimates `α`, `ν`, `μ` from daily counts under the given ordering.
///
/// Advanced: `μ = ΔL/H`, `ν = ΔD/((1−μ)H)`, `α = ΔR/((1−μ)H)`.
/// Retarded: `ν = ΔD/H`, `α = ΔR/H`, `μ = ΔL/((1−α−ν)H)`.
/// `(1−μ)H` and `(1−α−ν)H` are evaluated as the exact integers `H−ΔL` and
/// `H−ΔD−ΔR`; zero denominators give zero coefficients.
pub fn estimate_transitions(counts: &DailyCounts, variant: Variant) -> TransitionTable {
    let n = counts.n_states();
    let horizon = counts.horizon;
    let mut alpha = DayMatrix::new(1, horizon, n);
    let mut nu = DayMatrix::new(1, horizon, n);
    let mut mu = DayMatrix::new(1, horizon, n);
    let mut n_eff = DayMatrix::new(1, horizon, n);
    for t in 1..=horizon {
        for s in 0..n {
            let h = counts.h.get(t, s);
            let (dd, dr, dl) = (counts.dd.get(t, s), counts.dr.get(t, s), counts.dl.get(t, s));
            let (a, v, m) = match variant {
                Variant::AdvancedTransfer => {
                    let stay = h.saturating_sub(dl);
                    (ratio(dr, stay), ratio(dd, stay), ratio(dl, h))
                }
                Variant::RetardedTransfer => {
                    let stay = h.saturating_sub(dd + dr);
                    (ratio(dr, h), ratio(dd, h), ratio(dl, stay))
                }
            };
            alpha.set(t, s, a);
            nu.set(t, s, v);
            mu.set(t, s, m);
            n_eff.set(t, s, h as f64);
        }
    }
    TransitionTable {
        variant,
        partition: counts.partition.clone(),
        horizon,
        alpha,
        nu,
        mu,
        n_eff,
    }
}

/// Share of a state's patients transferred out before the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFractionRow {
    pub state: String,
    pub out30: u64,
    pub total: u64,
    pub fraction: f64,
    /// `None` for an empty state.
    pub ci: Option<ProportionCI>,
}

fn fraction_row(state: String, out30: u64, total: u64, z: f64, form: WilsonForm) -> TransferFractionRow {
    let fraction = ratio(out30, total);
    let ci = if total > 0 {
        wilson_interval_with(fraction, total as f64, z, form).ok()
    } else {
        None
    };
    TransferFractionRow {
        state,
        out30,
        total,
        fraction,
        ci,
    }
}

/// Per-state transfer fractions plus a final all-states row.
pub fn transfer_fractions(counts: &DailyCounts, z: f64, form: WilsonForm) -> Vec<TransferFractionRow> {
    let mut rows: Vec<_> = counts
        .partition
        .states()
        .map(|s| {
            fraction_row(
                counts.partition.label(s).to_string(),
                counts.transfers(s.0),
                counts.initial(s.0),
                z,
                form,
            )
        })
        .collect();
    let out: u64 = rows.iter().map(|r| r.out30).sum();
    let total: u64 = rows.iter().map(|r| r.total).sum();
    rows.push(fraction_row("all".to_string(), out, total, z, form));
    rows
}

/// Transfer fractions over the main group (patients present from day 1).
pub fn transfer_fraction_report(
    records: &[PatientRecord],
    partition: &StatePartition,
    horizon: usize,
    z: f64,
    form: WilsonForm,
) -> Result<Vec<TransferFractionRow>> {
    let counts = aggregate_counts(records, partition, CohortClass::MAIN, horizon)?;
    Ok(transfer_fractions(&counts, z, form))
}

/// State × {transferred, not transferred} table; empty states are dropped.
pub fn transfer_contingency(counts: &DailyCounts) -> Vec<Vec<f64>> {
    (0..counts.n_states())
        .filter(|&s| counts.initial(s) > 0)
        .map(|s| {
            let out = counts.transfers(s);
            vec![out as f64, (counts.initial(s) - out) as f64]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: PValue,
    pub continuity_correction: bool,
}

/// Pearson chi-square test of independence on a contingency table.
///
/// `continuity_correction` applies Yates' correction and is only accepted
/// for 2×2 tables.
pub fn chi_square_independence(table: &[Vec<f64>], continuity_correction: bool) -> Result<ChiSquareResult> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 || table.iter().any(|r| r.len() != cols) {
        return Err(MortalityError::Domain(
            "contingency table must be at least 2x2 and rectangular".into(),
        ));
    }
    if table.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(MortalityError::Domain(
            "contingency counts must be finite and non-negative".into(),
        ));
    }
    if continuity_correction && (rows != 2 || cols != 2) {
        return Err(MortalityError::Domain(
            "continuity correction applies to 2x2 tables only".into(),
        ));
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    if row_sums.iter().chain(&col_sums).any(|&m| m <= 0.0) {
        return Err(MortalityError::Domain("contingency table has a zero marginal".into()));
    }
    let total: f64 = row_sums.iter().sum();
    let mut statistic = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / total;
            let mut diff = (observed - expected).abs();
            if continuity_correction {
                diff = (diff - 0.5).max(0.0);
            }
            statistic += diff * diff / expected;
        }
    }
    let dof = (rows - 1) * (cols - 1);
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof as f64),
        continuity_correction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::PartitionKind;
    use approx::assert_relative_eq;

    #[test]
    fn wilson_boundary_and_domain() {
        let ci = wilson_interval(0.0, 100.0, 1.96).unwrap();
        assert_eq!(ci.lower, 0.0);
        assert!(ci.upper > 0.0);
        assert!(wilson_interval(0.5, 0.0, 1.96).is_err());
        assert!(wilson_interval(0.5, -3.0, 1.96).is_err());
    }

    #[test]
    fn wilson_accepts_fractional_dof() {
        let ci = wilson_interval(0.07, 143_574.85, 1.96).unwrap();
        assert!(ci.lower < 0.07 && ci.upper > 0.07);
    }

    fn counts_one_cell(h: u64, dd: u64, dr: u64, dl: u64) -> DailyCounts {
        let p = StatePartition::builtin(PartitionKind::Coarsest);
        let mut c = DailyCounts::zeros(&p, 1);
        c.h.set(1, 0, h);
        c.dd.set(1, 0, dd);
        c.dr.set(1, 0, dr);
        c.dl.set(1, 0, dl);
        c.h.set(2, 0, h - dd - dr - dl);
        c
    }

    #[test]
    fn coefficient_substitution() {
        let c = counts_one_cell(100, 5, 10, 10);
        let adv = estimate_transitions(&c, Variant::AdvancedTransfer);
        assert_relative_eq!(adv.mu.get(1, 0), 0.10, max_relative = 1e-15);
        assert_relative_eq!(adv.nu.get(1, 0), 5.0 / 90.0, max_relative = 1e-15);
        assert_relative_eq!(adv.alpha.get(1, 0), 10.0 / 90.0, max_relative = 1e-15);

        let ret = estimate_transitions(&c, Variant::RetardedTransfer);
        assert_relative_eq!(ret.nu.get(1, 0), 0.05, max_relative = 1e-15);
        assert_relative_eq!(ret.alpha.get(1, 0), 0.10, max_relative = 1e-15);
        assert_relative_eq!(ret.mu.get(1, 0), 10.0 / 85.0, max_relative = 1e-15);
    }

    #[test]
    fn no_transfers_means_identical_tables() {
        let c = counts_one_cell(100, 5, 10, 0);
        let adv = estimate_transitions(&c, Variant::AdvancedTransfer);
        let ret = estimate_transitions(&c, Variant::RetardedTransfer);
        assert_eq!(adv.alpha, ret.alpha);
        assert_eq!(adv.nu, ret.nu);
        assert_eq!(adv.mu, ret.mu);
    }

    #[test]
    fn degenerate_cells() {
        let empty = estimate_transitions(&counts_one_cell(0, 0, 0, 0), Variant::RetardedTransfer);
        assert_eq!(
            (empty.alpha.get(1, 0), empty.nu.get(1, 0), empty.mu.get(1, 0)),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(empty.n_eff.get(1, 0), 0.0);
        assert!(empty.interval(Coefficient::Nu, 1, 0, 1.96).is_none());

        // everyone absorbed, no one left to transfer
        let absorbed = estimate_transitions(&counts_one_cell(10, 4, 6, 0), Variant::RetardedTransfer);
        assert_eq!(absorbed.mu.get(1, 0), 0.0);

        // everyone transferred first
        let gone = estimate_transitions(&counts_one_cell(10, 0, 0, 10), Variant::AdvancedTransfer);
        assert_eq!((gone.mu.get(1, 0), gone.nu.get(1, 0)), (1.0, 0.0));
    }

    #[test]
    fn chi_square_proportional_rows() {
        let r = chi_square_independence(&[vec![10.0, 20.0], vec![30.0, 60.0]], false).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert_eq!(r.dof, 1);
        assert_relative_eq!(r.p_value.value(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn chi_square_hand_computed() {
        // oracle: expected counts 70/30 in both rows of 100
        let expected = 2.0 * ((50.0f64 - 70.0).powi(2) / 70.0 + (50.0f64 - 30.0).powi(2) / 30.0);
        let r = chi_square_independence(&[vec![50.0, 50.0], vec![90.0, 10.0]], false).unwrap();
        assert_relative_eq!(r.statistic, expected, max_relative = 1e-12);
        assert!((r.statistic - 38.1).abs() < 0.1);
        assert_eq!(r.dof, 1);

        let yates = chi_square_independence(&[vec![50.0, 50.0], vec![90.0, 10.0]], true).unwrap();
        assert!(yates.statistic < r.statistic);
    }

    #[test]
    fn chi_square_zero_marginal_is_domain_error() {
        assert!(chi_square_independence(&[vec![0.0, 5.0], vec![0.0, 7.0]], false).is_err());
        assert!(chi_square_independence(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], true).is_err());
    }
}
