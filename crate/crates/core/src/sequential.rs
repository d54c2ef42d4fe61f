//! Sequential-choice model: a day split into `M` interleaved fractional
//! recovery/death and transfer steps, and numerical checks that its daily
//! outcome probabilities stay between the advanced and retarded orderings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MortalityError, Result};

/// Tolerance for the consistency conditions and the bounds.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

/// Fractional step probabilities for one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalSchedule {
    pub alpha_i: Vec<f64>,
    pub nu_i: Vec<f64>,
    pub mu_i: Vec<f64>,
    pub daily_alpha: f64,
    pub daily_nu: f64,
    pub daily_mu: f64,
}

/// Largest absolute deviation in each consistency condition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyError {
    pub alpha_sum: f64,
    pub nu_sum: f64,
    pub no_absorption_product: f64,
    pub mu_sum: f64,
    pub mu_product: f64,
}

impl ConsistencyError {
    pub fn max(&self) -> f64 {
        self.alpha_sum
            .max(self.nu_sum)
            .max(self.no_absorption_product)
            .max(self.mu_sum)
            .max(self.mu_product)
    }
}

fn check_daily(alpha: f64, nu: f64, mu: f64) -> Result<()> {
    let prob = |x: f64| (0.0..=1.0).contains(&x);
    if !prob(alpha) || !prob(nu) || !prob(mu) {
        return Err(MortalityError::Domain(format!(
            "daily probabilities out of range: alpha={alpha}, nu={nu}, mu={mu}"
        )));
    }
    if alpha + nu > 1.0 {
        return Err(MortalityError::Domain(format!("alpha + nu = {} exceeds 1", alpha + nu)));
    }
    Ok(())
}

/// Uniform geometric split: every fractional step keeps the same share of
/// patients in place, `q_i = (1 − α − ν)^{1/M}` and `1 − μ_i = (1 − μ)^{1/M}`.
pub fn fractional_split(alpha: f64, nu: f64, mu: f64, steps: usize) -> Result<FractionalSchedule> {
    check_daily(alpha, nu, mu)?;
    if steps == 0 {
        return Err(MortalityError::Domain(
            "at least one fractional step is required".into(),
        ));
    }
    let m = steps as f64;
    let absorbed = alpha + nu;
    // 1 - q^{1/M}, evaluated without cancellation
    let step_absorb = if absorbed == 0.0 {
        0.0
    } else {
        -((-absorbed).ln_1p() / m).exp_m1()
    };
    let (alpha_step, nu_step) = if absorbed == 0.0 {
        (0.0, 0.0)
    } else {
        (step_absorb * alpha / absorbed, step_absorb * nu / absorbed)
    };
    let mu_step = -((-mu).ln_1p() / m).exp_m1();
    Ok(FractionalSchedule {
        alpha_i: vec![alpha_step; steps],
        nu_i: vec![nu_step; steps],
        mu_i: vec![mu_step; steps],
        daily_alpha: alpha,
        daily_nu: nu,
        daily_mu: mu,
    })
}

impl FractionalSchedule {
    /// Arbitrary schedule; rejected unless it is consistent with the daily
    /// probabilities to [`ORACLE_TOLERANCE`].
    pub fn manual(
        daily_alpha: f64,
        daily_nu: f64,
        daily_mu: f64,
        alpha_i: Vec<f64>,
        nu_i: Vec<f64>,
        mu_i: Vec<f64>,
    ) -> Result<Self> {
        check_daily(daily_alpha, daily_nu, daily_mu)?;
        let m = alpha_i.len();
        if m == 0 || nu_i.len() != m || mu_i.len() != m {
            return Err(MortalityError::Precondition(
                "step vectors must share a non-zero length".into(),
            ));
        }
        for i in 0..m {
            if check_daily(alpha_i[i], nu_i[i], mu_i[i]).is_err() {
                return Err(MortalityError::Precondition(format!(
                    "step {} is not a probability triple",
                    i + 1
                )));
            }
        }
        let sched = FractionalSchedule {
            alpha_i,
            nu_i,
            mu_i,
            daily_alpha,
            daily_nu,
            daily_mu,
        };
        let err = sched.consistency_error();
        if err.max() > ORACLE_TOLERANCE {
            return Err(MortalityError::Precondition(format!(
                "schedule inconsistent with daily probabilities (max deviation {:e})",
                err.max()
            )));
        }
        Ok(sched)
    }

    pub fn steps(&self) -> usize {
        self.alpha_i.len()
    }

    pub fn consistency_error(&self) -> ConsistencyError {
        let mut stay = 1.0; // Π_{i<j} (1 − α_i − ν_i)
        let mut keep = 1.0; // Π_{i<j} (1 − μ_i)
        let mut alpha_sum = 0.0;
        let mut nu_sum = 0.0;
        let mut mu_sum = 0.0;
        for j in 0..self.steps() {
            alpha_sum += self.alpha_i[j] * stay;
            nu_sum += self.nu_i[j] * stay;
            mu_sum += self.mu_i[j] * keep;
            stay *= 1.0 - self.alpha_i[j] - self.nu_i[j];
            keep *= 1.0 - self.mu_i[j];
        }
        ConsistencyError {
            alpha_sum: (alpha_sum - self.daily_alpha).abs(),
            nu_sum: (nu_sum - self.daily_nu).abs(),
            no_absorption_product: (stay - (1.0 - self.daily_alpha - self.daily_nu)).abs(),
            mu_sum: (mu_sum - self.daily_mu).abs(),
            mu_product: (keep - (1.0 - self.daily_mu)).abs(),
        }
    }
}

/// Probabilities of each outcome of one day of the sequential chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayOutcome {
    pub death: f64,
    pub recovery: f64,
    pub leave: f64,
    pub stay: f64,
}

/// Evaluates the three outcome series and the remaining mass.
pub fn day_outcome_probabilities(sched: &FractionalSchedule) -> DayOutcome {
    let mut reach = 1.0; // Π_{i<j} (1 − α_i − ν_i)(1 − μ_i)
    let mut out = DayOutcome {
        death: 0.0,
        recovery: 0.0,
        leave: 0.0,
        stay: 0.0,
    };
    for j in 0..sched.steps() {
        let (a, v, m) = (sched.alpha_i[j], sched.nu_i[j], sched.mu_i[j]);
        out.death += v * reach;
        out.recovery += a * reach;
        out.leave += m * (1.0 - a - v) * reach;
        reach *= (1.0 - a - v) * (1.0 - m);
    }
    out.stay = reach;
    out
}

/// Worst-case slack over a batch of schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub schedules_checked: usize,
    /// Largest excursion outside `ν(1−μ) ≤ P(death) ≤ ν`.
    pub max_death_violation: f64,
    /// Largest excursion outside `α(1−μ) ≤ P(recovery) ≤ α`.
    pub max_recovery_violation: f64,
    /// Largest excursion outside `μ(1−α−ν) ≤ P(leave) ≤ μ`.
    pub max_leave_violation: f64,
    pub max_consistency_error: f64,
    /// Largest `|P(death) + P(recovery) + P(leave) + P(stay) − 1|`.
    pub max_conservation_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl BoundsReport {
    fn empty() -> Self {
        BoundsReport {
            schedules_checked: 0,
            max_death_violation: 0.0,
            max_recovery_violation: 0.0,
            max_leave_violation: 0.0,
            max_consistency_error: 0.0,
            max_conservation_error: 0.0,
            tolerance: ORACLE_TOLERANCE,
            passed: true,
        }
    }

    fn merge(self, other: BoundsReport) -> BoundsReport {
        let mut out = BoundsReport {
            schedules_checked: self.schedules_checked + other.schedules_checked,
            max_death_violation: self.max_death_violation.max(other.max_death_violation),
            max_recovery_violation: self.max_recovery_violation.max(other.max_recovery_violation),
            max_leave_violation: self.max_leave_violation.max(other.max_leave_violation),
            max_consistency_error: self.max_consistency_error.max(other.max_consistency_error),
            max_conservation_error: self.max_conservation_error.max(other.max_conservation_error),
            tolerance: self.tolerance,
            passed: true,
        };
        out.passed = out.max_slack() <= out.tolerance;
        out
    }

    /// Largest of all recorded violations and errors.
    pub fn max_slack(&self) -> f64 {
        self.max_death_violation
            .max(self.max_recovery_violation)
            .max(self.max_leave_violation)
            .max(self.max_consistency_error)
            .max(self.max_conservation_error)
    }
}

fn excursion(value: f64, lower: f64, upper: f64) -> f64 {
    (lower - value).max(value - upper).max(0.0)
}

fn bounds_of(sched: &FractionalSchedule) -> BoundsReport {
    let (a, v, m) = (sched.daily_alpha, sched.daily_nu, sched.daily_mu);
    let day = day_outcome_probabilities(sched);
    let mut r = BoundsReport::empty();
    r.schedules_checked = 1;
    r.max_death_violation = excursion(day.death, v * (1.0 - m), v);
    r.max_recovery_violation = excursion(day.recovery, a * (1.0 - m), a);
    r.max_leave_violation = excursion(day.leave, m * (1.0 - a - v), m);
    r.max_consistency_error = sched.consistency_error().max();
    r.max_conservation_error = (day.death + day.recovery + day.leave + day.stay - 1.0).abs();
    r.passed = r.max_slack() <= r.tolerance;
    r
}

/// Checks the between-orderings inequalities for every schedule.
///
/// Each schedule must carry the given daily probabilities and satisfy the
/// consistency conditions.
pub fn proposition_bounds_check(
    alpha: f64,
    nu: f64,
    mu: f64,
    schedules: &[FractionalSchedule],
) -> Result<BoundsReport> {
    check_daily(alpha, nu, mu)?;
    let mut report = BoundsReport::empty();
    for (i, sched) in schedules.iter().enumerate() {
        if (sched.daily_alpha, sched.daily_nu, sched.daily_mu) != (alpha, nu, mu) {
            return Err(MortalityError::Precondition(format!(
                "schedule {i} was built for different daily probabilities"
            )));
        }
        let err = sched.consistency_error().max();
        if err > ORACLE_TOLERANCE {
            return Err(MortalityError::Precondition(format!(
                "schedule {i} is inconsistent (max deviation {err:e})"
            )));
        }
        report = report.merge(bounds_of(sched));
    }
    Ok(report)
}

/// Draws `(α, ν, μ)` with `α + ν ≤ 1`, occasionally pinning values to the
/// edges of the domain.
fn draw_daily(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let edge = |rng: &mut ChaCha8Rng, x: f64| match rng.random_range(0..20u8) {
        0 => 0.0,
        1 => 1.0,
        _ => x,
    };
    let a_raw: f64 = rng.random();
    let a = edge(rng, a_raw);
    let v_raw: f64 = rng.random::<f64>() * (1.0 - a);
    let v = if rng.random_range(0..20u8) == 0 { 1.0 - a } else { v_raw };
    let v = if rng.random_range(0..20u8) == 0 { 0.0 } else { v };
    let m_raw: f64 = rng.random();
    let m = edge(rng, m_raw);
    (a, v, m)
}

/// Randomized sweep over daily probabilities and step counts `1..=max_steps`
/// using the uniform split. Sample `i` draws from its own stream of `seed`,
/// so the result does not depend on the thread count.
pub fn random_sweep(samples: usize, max_steps: usize, seed: u64) -> Result<BoundsReport> {
    if max_steps == 0 {
        return Err(MortalityError::Domain("max_steps must be at least 1".into()));
    }
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (a, v, m) = draw_daily(&mut rng);
            let steps = rng.random_range(1..=max_steps);
            let sched = fractional_split(a, v, m, steps)?;
            proposition_bounds_check(a, v, m, std::slice::from_ref(&sched))
        })
        .try_reduce(BoundsReport::empty, |x, y| Ok(x.merge(y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_is_identity() {
        let s = fractional_split(0.1, 0.05, 0.2, 1).unwrap();
        assert_eq!((s.alpha_i[0], s.nu_i[0], s.mu_i[0]), (0.1, 0.05, 0.2));
        let d = day_outcome_probabilities(&s);
        assert_eq!(d.death, 0.05);
        assert_eq!(d.recovery, 0.1);
        assert!((d.leave - 0.2 * 0.85).abs() < 1e-15);
    }

    #[test]
    fn two_step_split_values() {
        let s = fractional_split(0.1, 0.05, 0.2, 2).unwrap();
        assert!((s.mu_i[0] - (1.0 - 0.8f64.sqrt())).abs() < 1e-15);
        assert!((s.mu_i[0] - 0.10557).abs() < 1e-5);
        assert!(s.consistency_error().max() <= ORACLE_TOLERANCE);
    }

    #[test]
    fn no_absorption() {
        for m in 1..=5 {
            let s = fractional_split(0.0, 0.0, 0.37, m).unwrap();
            assert!(s.alpha_i.iter().chain(&s.nu_i).all(|&x| x == 0.0));
            let keep: f64 = s.mu_i.iter().map(|x| 1.0 - x).product();
            assert!((keep - 0.63).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_transfer_gives_daily_values() {
        let s = fractional_split(0.2, 0.07, 0.0, 4).unwrap();
        let d = day_outcome_probabilities(&s);
        assert!((d.death - 0.07).abs() < 1e-12);
        assert!((d.recovery - 0.2).abs() < 1e-12);
        assert_eq!(d.leave, 0.0);
    }

    #[test]
    fn split_rejects_invalid_input() {
        assert!(fractional_split(0.7, 0.4, 0.1, 2).is_err());
        assert!(fractional_split(0.1, 0.1, 0.1, 0).is_err());
    }

    #[test]
    fn mass_front_schedule_attains_lower_bound() {
        let (a, v, m) = (0.1, 0.05, 0.2);
        let s = FractionalSchedule::manual(a, v, m, vec![0.0, a], vec![0.0, v], vec![m, 0.0]).unwrap();
        let d = day_outcome_probabilities(&s);
        assert!((d.death - v * (1.0 - m)).abs() < 1e-15);
        assert!((d.recovery - a * (1.0 - m)).abs() < 1e-15);
        let r = proposition_bounds_check(a, v, m, &[s]).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn upper_bound_attained_by_single_step() {
        let s = fractional_split(0.3, 0.2, 0.5, 1).unwrap();
        assert_eq!(day_outcome_probabilities(&s).death, 0.2);
    }

    #[test]
    fn inconsistent_schedule_rejected() {
        let bad = FractionalSchedule::manual(0.1, 0.05, 0.2, vec![0.1, 0.1], vec![0.05, 0.05], vec![0.2, 0.0]);
        assert!(matches!(bad, Err(MortalityError::Precondition(_))));
        let other = fractional_split(0.1, 0.05, 0.3, 2).unwrap();
        assert!(proposition_bounds_check(0.1, 0.05, 0.2, &[other]).is_err());
    }

    #[test]
    fn sweep_is_deterministic() {
        let a = random_sweep(500, 6, 42).unwrap();
        let b = random_sweep(500, 6, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.passed, "{a:?}");
    }
}
