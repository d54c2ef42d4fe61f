//! Stratified analyses: daily death-coefficient curves, combined-severity
//! tables with their smoothed quadratic fits, and mortality by age.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::{horizon_outcome, HorizonOutcome, StateId};
use crate::error::{MortalityError, Result};
use crate::estimation::TransitionTable;
use crate::reweight::WeightedRecord;

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_START_DAY: usize = 3;
pub const DEFAULT_AGE_CUT: f64 = 65.0;
pub const MAX_SEVERITY: u8 = 6;

/// The three largest injury severities of a patient, in non-increasing order.
/// Zero marks an absent injury.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u8; 3]", into = "[u8; 3]")]
pub struct SeverityTriple {
    s1: u8,
    s2: u8,
    s3: u8,
}

impl SeverityTriple {
    pub fn new(s1: u8, s2: u8, s3: u8) -> Result<Self> {
        if !(1..=MAX_SEVERITY).contains(&s1) || s2 > s1 || s3 > s2 {
            return Err(MortalityError::Domain(format!(
                "severity triple ({s1}, {s2}, {s3}) must satisfy 6 >= s1 >= s2 >= s3 >= 0 and s1 >= 1"
            )));
        }
        Ok(Self { s1, s2, s3 })
    }

    /// Sorts arbitrary severities into a triple.
    pub fn from_unordered(mut values: [u8; 3]) -> Result<Self> {
        values.sort_unstable_by(|a, b| b.cmp(a));
        Self::new(values[0], values[1], values[2])
    }

    pub fn s1(self) -> u8 {
        self.s1
    }

    pub fn s2(self) -> u8 {
        self.s2
    }

    pub fn s3(self) -> u8 {
        self.s3
    }
}

impl TryFrom<[u8; 3]> for SeverityTriple {
    type Error = MortalityError;

    fn try_from(v: [u8; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<SeverityTriple> for [u8; 3] {
    fn from(t: SeverityTriple) -> Self {
        [t.s1, t.s2, t.s3]
    }
}

/// One known-outcome case of the weighted dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedCase {
    pub triple: SeverityTriple,
    pub age: Option<f64>,
    pub weight: f64,
    pub dead: bool,
}

/// Joins weighted records with their severity triples.
pub fn weighted_cases(
    weighted: &[WeightedRecord],
    triples: &HashMap<String, SeverityTriple>,
    horizon: usize,
) -> Result<Vec<WeightedCase>> {
    weighted
        .iter()
        .map(|wr| {
            let id = &wr.record.patient_id;
            let triple = *triples
                .get(id)
                .ok_or_else(|| MortalityError::Precondition(format!("no severity triple for record {id}")))?;
            if triple.s1 != wr.record.max_severity {
                return Err(MortalityError::Mismatch(format!(
                    "record {id}: triple s1 = {} but max_severity = {}",
                    triple.s1, wr.record.max_severity
                )));
            }
            Ok(WeightedCase {
                triple,
                age: wr.record.age_years,
                weight: wr.weight,
                dead: horizon_outcome(&wr.record, horizon) == HorizonOutcome::Dead,
            })
        })
        .collect()
}

/// Conditional probability of death on day `t` for the union of `states`.
///
/// Each state's `ν(t, s)` is weighted by its modelled surviving population
/// `H(1, s) Π_{k<t} (1 − α − ν)`.
pub fn daily_mortality_curve(tt: &TransitionTable, states: &[StateId]) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(MortalityError::Precondition("empty stratum".into()));
    }
    if let Some(bad) = states.iter().find(|s| s.0 >= tt.n_states()) {
        return Err(MortalityError::Precondition(format!("state {} out of range", bad.0)));
    }
    if let [only] = states {
        return Ok(tt.nu.column(only.0));
    }
    let mut mass: Vec<f64> = states.iter().map(|s| tt.n_eff.get(1, s.0)).collect();
    if mass.iter().all(|&m| m == 0.0) {
        return Err(MortalityError::Precondition("stratum has no patients".into()));
    }
    let mut curve = Vec::with_capacity(tt.horizon);
    for t in 1..=tt.horizon {
        let (mut num, mut den) = (0.0, 0.0);
        for (m, s) in mass.iter_mut().zip(states) {
            let (a, v) = (tt.alpha.get(t, s.0), tt.nu.get(t, s.0));
            num += *m * v;
            den += *m;
            *m *= 1.0 - a - v;
        }
        curve.push(if den > 0.0 { num / den } else { 0.0 });
    }
    Ok(curve)
}

/// Centred moving average for days `>= start_day` (day 1 is index 0).
///
/// The window is truncated where it runs past either end of the series;
/// earlier days are returned unfiltered.
pub fn moving_average(curve: &[f64], window: usize, start_day: usize) -> Result<Vec<f64>> {
    if window.is_multiple_of(2) {
        return Err(MortalityError::Domain(format!(
            "moving-average window must be odd, got {window}"
        )));
    }
    if start_day == 0 {
        return Err(MortalityError::Domain("start day is 1-based".into()));
    }
    let half = window / 2;
    Ok(curve
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if i + 1 < start_day {
                return x;
            }
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(curve.len() - 1);
            curve[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

/// Weighted FOD by `(s2, s3)` for a fixed maximal severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityPairTable {
    pub s1: u8,
    /// `fod[s2][s3]`; `None` marks an empty cell.
    pub fod: Vec<Vec<Option<f64>>>,
    pub weight: Vec<Vec<f64>>,
    pub cases: Vec<Vec<u64>>,
}

/// A `(s2, s3)` cell as input to [`smoothed_fod_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FodCell {
    pub s2: u8,
    pub s3: u8,
    pub fod: f64,
    pub weight: f64,
}

impl SeverityPairTable {
    pub fn get(&self, s2: u8, s3: u8) -> Option<f64> {
        self.fod.get(s2 as usize)?.get(s3 as usize).copied().flatten()
    }

    pub fn cells(&self) -> Vec<FodCell> {
        let mut out = Vec::new();
        for (s2, row) in self.fod.iter().enumerate() {
            for (s3, fod) in row.iter().enumerate() {
                if let Some(fod) = fod {
                    out.push(FodCell {
                        s2: s2 as u8,
                        s3: s3 as u8,
                        fod: *fod,
                        weight: self.weight[s2][s3],
                    });
                }
            }
        }
        out
    }
}

pub fn severity_pair_fod(cases: &[WeightedCase], s1: u8) -> SeverityPairTable {
    let n = s1 as usize + 1;
    let mut dead = vec![vec![0.0; n]; n];
    let mut weight = vec![vec![0.0; n]; n];
    let mut count = vec![vec![0u64; n]; n];
    for case in cases.iter().filter(|c| c.triple.s1 == s1) {
        let (i, j) = (case.triple.s2 as usize, case.triple.s3 as usize);
        weight[i][j] += case.weight;
        count[i][j] += 1;
        if case.dead {
            dead[i][j] += case.weight;
        }
    }
    let fod = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (count[i][j] > 0 && weight[i][j] > 0.0).then(|| dead[i][j] / weight[i][j]))
                .collect()
        })
        .collect();
    SeverityPairTable {
        s1,
        fod,
        weight,
        cases: count,
    }
}

/// Weighted least squares by QR of the row-scaled design.
/// Returns the coefficients and the weighted residual sum of squares.
pub fn weighted_least_squares(
    design: &[Vec<f64>],
    response: &[f64],
    weights: &[f64],
    names: &[&str],
) -> Result<(Vec<f64>, f64)> {
    let rows = design.len();
    let cols = names.len();
    if response.len() != rows || weights.len() != rows || design.iter().any(|r| r.len() != cols) {
        return Err(MortalityError::Precondition(
            "design, response and weights disagree in shape".into(),
        ));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(MortalityError::Domain(
            "regression weights must be finite and non-negative".into(),
        ));
    }
    if rows < cols {
        return Err(MortalityError::RankDeficient(format!(
            "{rows} observations for {cols} coefficients"
        )));
    }
    let a = DMatrix::from_fn(rows, cols, |i, j| design[i][j] * weights[i].sqrt());
    let b = DVector::from_fn(rows, |i, _| response[i] * weights[i].sqrt());
    let qr = a.clone().qr();
    let r = qr.r();
    let scale = (0..cols).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    for j in 0..cols {
        if r[(j, j)].abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(MortalityError::RankDeficient(format!(
                "column `{}` is linearly dependent on the preceding columns",
                names[j]
            )));
        }
    }
    let qtb = qr.q().transpose() * &b;
    let beta = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| MortalityError::RankDeficient("singular triangular factor".into()))?;
    let residual = (&a * &beta - &b).norm_squared();
    Ok((beta.iter().copied().collect(), residual))
}

/// Quadratic smoothing of FOD over the secondary severities.
///
/// The full form is `c0 + c_s2 s2 + c_s3 s3 + c_s2sq s2² + c_s3sq s3²`. For
/// `s1 = 6` the coarse form `c0 + c_shat ŝ + c_shatsq ŝ²` over the binned
/// second severity ŝ is used and `c_s3`, `c_s3sq` are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub s1: u8,
    pub coarse: bool,
    pub intercept: f64,
    pub c_s2: f64,
    pub c_s3: f64,
    pub c_s2sq: f64,
    pub c_s3sq: f64,
    pub weighted_residual: f64,
    pub cells: usize,
}

/// Bins of the second severity used for `s1 = 6`.
pub fn coarse_severity(s2: u8) -> u8 {
    match s2 {
        0..=2 => 0,
        3..=4 => 1,
        _ => 2,
    }
}

impl QuadraticFit {
    pub fn predict(&self, s2: u8, s3: u8) -> f64 {
        if self.coarse {
            let x = coarse_severity(s2) as f64;
            self.intercept + self.c_s2 * x + self.c_s2sq * x * x
        } else {
            let (x, y) = (s2 as f64, s3 as f64);
            self.intercept + self.c_s2 * x + self.c_s3 * y + self.c_s2sq * x * x + self.c_s3sq * y * y
        }
    }

    /// Coefficients named after the terms they multiply.
    pub fn named_coefficients(&self) -> Vec<(&'static str, f64)> {
        if self.coarse {
            vec![("1", self.intercept), ("s_hat2", self.c_s2), ("s_hat2^2", self.c_s2sq)]
        } else {
            vec![
                ("1", self.intercept),
                ("s2", self.c_s2),
                ("s3", self.c_s3),
                ("s2^2", self.c_s2sq),
                ("s3^2", self.c_s3sq),
            ]
        }
    }
}

pub fn smoothed_fod_fit(cells: &[FodCell], s1: u8) -> Result<QuadraticFit> {
    if let Some(c) = cells.iter().find(|c| c.s2 > s1 || c.s3 > c.s2) {
        return Err(MortalityError::Domain(format!(
            "cell (s2 = {}, s3 = {}) is not valid for s1 = {s1}",
            c.s2, c.s3
        )));
    }
    let coarse = s1 == MAX_SEVERITY;
    let used: Vec<&FodCell> = cells.iter().filter(|c| c.weight > 0.0).collect();
    let distinct = {
        let mut keys: Vec<(u8, u8)> = used
            .iter()
            .map(|c| {
                if coarse {
                    (coarse_severity(c.s2), 0)
                } else {
                    (c.s2, c.s3)
                }
            })
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    };
    let needed = if coarse { 3 } else { 5 };
    if distinct < needed {
        return Err(MortalityError::Precondition(format!(
            "{distinct} distinct populated cells, at least {needed} required"
        )));
    }
    let design: Vec<Vec<f64>> = used
        .iter()
        .map(|c| {
            if coarse {
                let x = coarse_severity(c.s2) as f64;
                vec![1.0, x, x * x]
            } else {
                let (x, y) = (c.s2 as f64, c.s3 as f64);
                vec![1.0, x, y, x * x, y * y]
            }
        })
        .collect();
    let response: Vec<f64> = used.iter().map(|c| c.fod).collect();
    let weights: Vec<f64> = used.iter().map(|c| c.weight).collect();
    let names: &[&str] = if coarse {
        &["1", "s_hat2", "s_hat2^2"]
    } else {
        &["1", "s2", "s3", "s2^2", "s3^2"]
    };
    let (beta, residual) = weighted_least_squares(&design, &response, &weights, names)?;
    let (c_s3, c_s3sq) = if coarse { (0.0, 0.0) } else { (beta[2], beta[4]) };
    let c_s2sq = if coarse { beta[2] } else { beta[3] };
    Ok(QuadraticFit {
        s1,
        coarse,
        intercept: beta[0],
        c_s2: beta[1],
        c_s3,
        c_s2sq,
        c_s3sq,
        weighted_residual: residual,
        cells: used.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBin {
    pub lower: f64,
    pub upper: f64,
    pub fod: f64,
    pub weight: f64,
    pub cases: u64,
}

impl AgeBin {
    pub fn centre(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Continuous two-segment fit `a + b x + c max(0, x − k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HingeFit {
    pub breakpoint: f64,
    pub intercept: f64,
    pub slope_below: f64,
    pub slope_above: f64,
    pub weighted_residual: f64,
    /// Both segments are flat, so the breakpoint carries no information.
    pub degenerate: bool,
}

impl HingeFit {
    pub fn predict(&self, age: f64) -> f64 {
        self.intercept
            + self.slope_below * age
            + (self.slope_above - self.slope_below) * (age - self.breakpoint).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeFitOptions {
    pub bin_width: f64,
    /// Ages outside `[min_age, max_age)` are ignored.
    pub min_age: f64,
    pub max_age: f64,
    pub min_bins_per_segment: usize,
    /// Largest FOD change across a segment still considered flat.
    pub flat_tolerance: f64,
}

impl Default for AgeFitOptions {
    fn default() -> Self {
        Self {
            bin_width: 2.0,
            min_age: 18.0,
            max_age: 100.0,
            min_bins_per_segment: 4,
            flat_tolerance: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeProfile {
    pub bins: Vec<AgeBin>,
    pub fit: HingeFit,
}

pub fn fod_by_age(cases: &[WeightedCase], options: &AgeFitOptions) -> Result<AgeProfile> {
    let width = options.bin_width;
    if !(width > 0.0) || !(options.max_age > options.min_age) {
        return Err(MortalityError::Domain(
            "age bins need a positive width and a non-empty range".into(),
        ));
    }
    let n_bins = ((options.max_age - options.min_age) / width).ceil() as usize;
    let mut dead = vec![0.0; n_bins];
    let mut weight = vec![0.0; n_bins];
    let mut count = vec![0u64; n_bins];
    for case in cases {
        let Some(age) = case.age else { continue };
        if age < options.min_age || age >= options.max_age {
            continue;
        }
        let i = (((age - options.min_age) / width) as usize).min(n_bins - 1);
        weight[i] += case.weight;
        count[i] += 1;
        if case.dead {
            dead[i] += case.weight;
        }
    }
    let bins: Vec<AgeBin> = (0..n_bins)
        .filter(|&i| weight[i] > 0.0)
        .map(|i| AgeBin {
            lower: options.min_age + i as f64 * width,
            upper: (options.min_age + (i + 1) as f64 * width).min(options.max_age),
            fod: dead[i] / weight[i],
            weight: weight[i],
            cases: count[i],
        })
        .collect();

    let centres: Vec<f64> = bins.iter().map(AgeBin::centre).collect();
    let response: Vec<f64> = bins.iter().map(|b| b.fod).collect();
    let weights: Vec<f64> = bins.iter().map(|b| b.weight).collect();
    let m = options.min_bins_per_segment;
    let mut best: Option<HingeFit> = None;
    for k in (options.min_age.ceil() as i64)..=(options.max_age.floor() as i64) {
        let k = k as f64;
        let below = centres.iter().filter(|&&x| x < k).count();
        if below < m || centres.len() - below < m {
            continue;
        }
        let design: Vec<Vec<f64>> = centres.iter().map(|&x| vec![1.0, x, (x - k).max(0.0)]).collect();
        let Ok((beta, residual)) = weighted_least_squares(&design, &response, &weights, &["1", "age", "hinge"]) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| residual < b.weighted_residual) {
            best = Some(HingeFit {
                breakpoint: k,
                intercept: beta[0],
                slope_below: beta[1],
                slope_above: beta[1] + beta[2],
                weighted_residual: residual,
                degenerate: false,
            });
        }
    }
    let mut fit = best.ok_or_else(|| {
        MortalityError::Precondition(format!(
            "{} populated age bins; a breakpoint needs at least {m} on each side",
            bins.len()
        ))
    })?;
    let first = centres[0];
    let last = centres[centres.len() - 1];
    let rise_below = (fit.slope_below * (fit.breakpoint - first)).abs();
    let rise_above = (fit.slope_above * (last - fit.breakpoint)).abs();
    fit.degenerate = rise_below <= options.flat_tolerance && rise_above <= options.flat_tolerance;
    Ok(AgeProfile { bins, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{PartitionKind, StatePartition};
    use crate::estimation::Variant;
    use crate::grid::DayMatrix;
    use approx::assert_abs_diff_eq;

    fn table(nu: impl Fn(usize, usize) -> f64, n_states: usize) -> TransitionTable {
        let partition = StatePartition::builtin(PartitionKind::NissBinned);
        let h = 30;
        let n = partition.len();
        let mut alpha = DayMatrix::new(1, h, n);
        let mut nu_m = DayMatrix::new(1, h, n);
        let mut n_eff = DayMatrix::new(1, h, n);
        for t in 1..=h {
            for s in 0..n {
                alpha.set(t, s, 0.05);
                nu_m.set(t, s, nu(t, s));
                n_eff.set(t, s, if s < n_states { 100.0 * (s + 1) as f64 } else { 0.0 });
            }
        }
        let mu = DayMatrix::new(1, h, n);
        TransitionTable::from_coefficients(Variant::RetardedTransfer, partition, alpha, nu_m, mu, n_eff).unwrap()
    }

    #[test]
    fn triple_ordering() {
        assert!(SeverityTriple::new(5, 3, 1).is_ok());
        assert!(SeverityTriple::new(3, 5, 1).is_err());
        assert!(SeverityTriple::new(0, 0, 0).is_err());
        assert!(SeverityTriple::new(7, 0, 0).is_err());
        assert_eq!(
            SeverityTriple::from_unordered([1, 5, 3]).unwrap(),
            SeverityTriple::new(5, 3, 1).unwrap()
        );
        let json = serde_json::to_string(&SeverityTriple::new(4, 4, 2).unwrap()).unwrap();
        assert_eq!(json, "[4,4,2]");
        assert!(serde_json::from_str::<SeverityTriple>("[2,4,2]").is_err());
    }

    #[test]
    fn curve_single_state_is_nu() {
        let tt = table(|t, s| 0.001 * (t + s) as f64, 7);
        let curve = daily_mortality_curve(&tt, &[StateId(3)]).unwrap();
        assert_eq!(curve, tt.nu.column(3));
    }

    #[test]
    fn curve_constant_nu_is_constant() {
        let tt = table(|_, _| 0.02, 7);
        let states: Vec<StateId> = (0..7).map(StateId).collect();
        for v in daily_mortality_curve(&tt, &states).unwrap() {
            assert_abs_diff_eq!(v, 0.02, epsilon = 1e-15);
        }
    }

    #[test]
    fn curve_weights_by_surviving_mass() {
        // state 0: H=100, ν=0.5 ; state 1: H=200, ν=0.0 ; α=0.05
        let tt = table(|_, s| if s == 0 { 0.5 } else { 0.0 }, 2);
        let curve = daily_mortality_curve(&tt, &[StateId(0), StateId(1)]).unwrap();
        assert_abs_diff_eq!(curve[0], 50.0 / 300.0, epsilon = 1e-15);
        let m0 = 100.0 * 0.45;
        let m1 = 200.0 * 0.95;
        assert_abs_diff_eq!(curve[1], m0 * 0.5 / (m0 + m1), epsilon = 1e-15);
    }

    #[test]
    fn curve_errors() {
        let tt = table(|_, _| 0.02, 2);
        assert!(daily_mortality_curve(&tt, &[]).is_err());
        assert!(daily_mortality_curve(&tt, &[StateId(5), StateId(6)]).is_err());
        assert!(daily_mortality_curve(&tt, &[StateId(99)]).is_err());
    }

    #[test]
    fn moving_average_cases() {
        let mut impulse = vec![0.0; 30];
        impulse[9] = 1.0;
        let out = moving_average(&impulse, 5, 3).unwrap();
        for (i, v) in out.iter().enumerate() {
            let expected = if (7..=11).contains(&i) { 0.2 } else { 0.0 };
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-15);
        }
        let ramp: Vec<f64> = (0..30).map(|i| 0.5 + 0.1 * i as f64).collect();
        let out = moving_average(&ramp, 5, 3).unwrap();
        for i in 2..28 {
            assert_abs_diff_eq!(out[i], ramp[i], epsilon = 1e-12);
        }
        // before the start day: untouched; at the end: truncated window
        let series: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let out = moving_average(&series, 5, 3).unwrap();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 1.0);
        assert_abs_diff_eq!(out[9], (49.0 + 64.0 + 81.0) / 3.0, epsilon = 1e-12);
        assert!(moving_average(&series, 4, 3).is_err());
        assert!(moving_average(&series, 0, 3).is_err());
        assert!(moving_average(&[], 5, 3).unwrap().is_empty());
    }

    fn case(s: [u8; 3], weight: f64, dead: bool) -> WeightedCase {
        WeightedCase {
            triple: SeverityTriple::new(s[0], s[1], s[2]).unwrap(),
            age: Some(40.0),
            weight,
            dead,
        }
    }

    #[test]
    fn pair_table_counts_and_weights() {
        let cases = vec![
            case([5, 0, 0], 1.0, true),
            case([5, 0, 0], 1.0, false),
            case([5, 0, 0], 2.0, false),
            case([5, 2, 1], 1.5, true),
            case([4, 2, 1], 1.0, true),
        ];
        let t = severity_pair_fod(&cases, 5);
        assert_eq!(t.get(0, 0), Some(0.25));
        assert_eq!(t.cases[0][0], 3);
        assert_eq!(t.get(2, 1), Some(1.0));
        assert_eq!(t.get(1, 1), None);
        assert_eq!(t.cells().len(), 2);
        let alive: Vec<_> = cases.iter().map(|c| WeightedCase { dead: false, ..*c }).collect();
        assert!(severity_pair_fod(&alive, 5).cells().iter().all(|c| c.fod == 0.0));
    }

    fn grid_cells(s1: u8, f: impl Fn(f64, f64) -> f64) -> Vec<FodCell> {
        let mut cells = Vec::new();
        for s2 in 0..=s1 {
            for s3 in 0..=s2 {
                cells.push(FodCell {
                    s2,
                    s3,
                    fod: f(s2 as f64, s3 as f64),
                    weight: 1.0 + (s2 * 7 + s3 * 3) as f64,
                });
            }
        }
        cells
    }

    #[test]
    fn exact_quadratic_recovered() {
        let c = [0.35899, -0.13335, -0.10879, 0.02963, 0.02748];
        let cells = grid_cells(5, |x, y| c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * y * y);
        let fit = smoothed_fod_fit(&cells, 5).unwrap();
        for (got, want) in [fit.intercept, fit.c_s2, fit.c_s3, fit.c_s2sq, fit.c_s3sq]
            .iter()
            .zip(c)
        {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
        assert!(fit.weighted_residual < 1e-20);
    }

    #[test]
    fn constant_fit() {
        let fit = smoothed_fod_fit(&grid_cells(4, |_, _| 0.07), 4).unwrap();
        assert_abs_diff_eq!(fit.intercept, 0.07, epsilon = 1e-12);
        for c in [fit.c_s2, fit.c_s3, fit.c_s2sq, fit.c_s3sq] {
            assert_abs_diff_eq!(c, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn coarse_fit_interpolates_three_bins() {
        let c = [0.80297, -0.08750, 0.06102];
        let cells = grid_cells(6, |x, _| {
            let h = coarse_severity(x as u8) as f64;
            c[0] + c[1] * h + c[2] * h * h
        });
        let fit = smoothed_fod_fit(&cells, 6).unwrap();
        assert!(fit.coarse);
        assert_abs_diff_eq!(fit.intercept, c[0], epsilon = 1e-10);
        assert_abs_diff_eq!(fit.c_s2, c[1], epsilon = 1e-10);
        assert_abs_diff_eq!(fit.c_s2sq, c[2], epsilon = 1e-10);
        assert_eq!(fit.named_coefficients()[1].0, "s_hat2");
        assert_abs_diff_eq!(fit.predict(6, 6), c[0] + 2.0 * c[1] + 4.0 * c[2], epsilon = 1e-10);
    }

    #[test]
    fn fit_preconditions() {
        let cells = grid_cells(2, |_, _| 0.1);
        // s1 = 2 has six cells but s3 only takes 0..=2: rank is fine
        assert!(smoothed_fod_fit(&cells, 2).is_ok());
        let few: Vec<FodCell> = grid_cells(5, |_, _| 0.1).into_iter().take(4).collect();
        assert!(matches!(
            smoothed_fod_fit(&few, 5),
            Err(MortalityError::Precondition(_))
        ));
        // five cells on the s3 = 0 line: s3 and s3² columns vanish
        let line: Vec<FodCell> = (0..=4u8)
            .map(|s2| FodCell {
                s2,
                s3: 0,
                fod: 0.1,
                weight: 1.0,
            })
            .collect();
        match smoothed_fod_fit(&line, 5) {
            Err(MortalityError::RankDeficient(msg)) => assert!(msg.contains("s3"), "{msg}"),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        let bad = vec![FodCell {
            s2: 3,
            s3: 4,
            fod: 0.1,
            weight: 1.0,
        }];
        assert!(matches!(smoothed_fod_fit(&bad, 5), Err(MortalityError::Domain(_))));
    }

    fn age_cases(fod: impl Fn(f64) -> f64) -> Vec<WeightedCase> {
        // 1000 cases per year of age with deterministic outcomes
        let mut out = Vec::new();
        for age in 20..95 {
            let dead = (fod(age as f64 + 0.5) * 1000.0).round() as usize;
            for i in 0..1000 {
                out.push(WeightedCase {
                    triple: SeverityTriple::new(3, 0, 0).unwrap(),
                    age: Some(age as f64 + 0.5),
                    weight: 1.0,
                    dead: i < dead,
                });
            }
        }
        out
    }

    #[test]
    fn hinge_recovered() {
        let cases = age_cases(|a| 0.02 + 0.004 * (a - 62.0).max(0.0));
        let profile = fod_by_age(&cases, &AgeFitOptions::default()).unwrap();
        assert!((profile.fit.breakpoint - 62.0).abs() <= 2.0, "{:?}", profile.fit);
        assert!(!profile.fit.degenerate);
        assert_abs_diff_eq!(profile.fit.slope_below, 0.0, epsilon = 5e-4);
        assert_abs_diff_eq!(profile.fit.slope_above, 0.004, epsilon = 5e-4);
    }

    #[test]
    fn flat_profile_is_degenerate() {
        let profile = fod_by_age(&age_cases(|_| 0.05), &AgeFitOptions::default()).unwrap();
        assert!(profile.fit.degenerate);
    }

    #[test]
    fn linear_profile_has_one_slope() {
        let profile = fod_by_age(&age_cases(|a| 0.001 * a), &AgeFitOptions::default()).unwrap();
        assert_abs_diff_eq!(profile.fit.slope_below, profile.fit.slope_above, epsilon = 1e-4);
    }

    #[test]
    fn too_few_bins() {
        let cases: Vec<WeightedCase> = age_cases(|_| 0.05)
            .into_iter()
            .filter(|c| c.age.unwrap() < 34.0)
            .collect();
        assert!(fod_by_age(&cases, &AgeFitOptions::default()).is_err());
    }
}
