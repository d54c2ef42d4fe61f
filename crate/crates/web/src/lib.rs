//! Browser demo: sequential-choice bounds, the transfer correction on a
//! simulated cohort, and Wilson interval curves.
//!
//! Every exported function returns a JSON string; `www/index.html` draws it.

use mortality_core::cohort::CohortClass;
use mortality_core::counts::aggregate_counts;
use mortality_core::estimation::{estimate_transitions, wilson_interval, wilson_interval_with, Variant, WilsonForm};
use mortality_core::fod::fod_report;
use mortality_core::sequential::{day_outcome_probabilities, fractional_split, DayOutcome};
use mortality_core::simulator::{paper_calibration, simulate_cohort, LotteryOrdering};
use mortality_core::{MortalityError, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest cohort the explorer will simulate in one call.
pub const MAX_PATIENTS: usize = 200_000;

#[derive(Debug, Clone, Serialize)]
pub struct StepOutcome {
    pub steps: usize,
    #[serde(flatten)]
    pub outcome: DayOutcome,
}

/// Daily outcome probabilities as the day is cut into more sub-steps,
/// together with the advanced (`M -> ∞` side) and retarded limits.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsCurve {
    pub alpha: f64,
    pub nu: f64,
    pub mu: f64,
    pub death_bounds: (f64, f64),
    pub recovery_bounds: (f64, f64),
    pub leave_bounds: (f64, f64),
    pub points: Vec<StepOutcome>,
}

pub fn bounds_curve(alpha: f64, nu: f64, mu: f64, max_steps: usize) -> Result<BoundsCurve> {
    if max_steps == 0 || max_steps > 1000 {
        return Err(MortalityError::Domain("max_steps must be in 1..=1000".into()));
    }
    let points = (1..=max_steps)
        .map(|steps| {
            let sched = fractional_split(alpha, nu, mu, steps)?;
            Ok(StepOutcome {
                steps,
                outcome: day_outcome_probabilities(&sched),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundsCurve {
        alpha,
        nu,
        mu,
        death_bounds: (nu * (1.0 - mu), nu),
        recovery_bounds: (alpha * (1.0 - mu), alpha),
        leave_bounds: (mu * (1.0 - alpha - nu), mu),
        points,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub label: String,
    pub fod: f64,
    pub lower: f64,
    pub upper: f64,
}

/// One simulated cohort and every estimate of its 30-day mortality.
#[derive(Debug, Clone, Serialize)]
pub struct CorrectionRun {
    pub patients: usize,
    pub transferred_share: f64,
    pub true_fod: f64,
    pub estimates: Vec<Estimate>,
    /// `cfod[t - 1]` for the advanced and retarded fits.
    pub cfod_advanced: Vec<f64>,
    pub cfod_retarded: Vec<f64>,
}

/// Simulates the calibrated cohort with transfer hazards scaled by
/// `transfer_scale` and compares the naive and corrected estimators.
pub fn correction_run(patients: usize, transfer_scale: f64, advanced_truth: bool, seed: u64) -> Result<CorrectionRun> {
    if patients == 0 || patients > MAX_PATIENTS {
        return Err(MortalityError::Domain(format!(
            "patients must be in 1..={MAX_PATIENTS}"
        )));
    }
    if !(0.0..=5.0).contains(&transfer_scale) {
        return Err(MortalityError::Domain("transfer scale must be in [0, 5]".into()));
    }
    let mut gt = paper_calibration();
    gt.seed = seed;
    if advanced_truth {
        gt.ordering = LotteryOrdering::AdvancedTransfer;
    }
    for t in 1..=gt.horizon {
        for s in 0..gt.n_states() {
            gt.mu.set(t, s, (gt.mu.get(t, s) * transfer_scale).min(1.0));
        }
    }
    let cohort = simulate_cohort(&gt, patients)?;
    let counts = aggregate_counts(&cohort.records, &gt.partition, CohortClass::MAIN, gt.horizon)?;
    let n = counts.total() as f64;
    let advanced = fod_report(&estimate_transitions(&counts, Variant::AdvancedTransfer), &counts)?;
    let retarded = fod_report(&estimate_transitions(&counts, Variant::RetardedTransfer), &counts)?;
    let known = advanced.observed.alive + advanced.observed.dead;

    let estimate = |label: &str, fod: f64, trials: f64| -> Result<Estimate> {
        let ci = wilson_interval(fod, trials.max(1.0), 1.96)?;
        Ok(Estimate {
            label: label.to_string(),
            fod,
            lower: ci.lower,
            upper: ci.upper,
        })
    };
    let truth = &cohort.truth;
    Ok(CorrectionRun {
        patients,
        transferred_share: advanced.observed.unknown / n,
        true_fod: truth.true_fod,
        estimates: vec![
            estimate("truth", truth.true_fod, n)?,
            estimate("available case", advanced.naive_available_case, known)?,
            estimate("corrected, advanced", advanced.corrected_fod, n)?,
            estimate("corrected, retarded", retarded.corrected_fod, n)?,
            estimate("all transferred alive", advanced.naive_all_alive, n)?,
        ],
        cfod_advanced: advanced.cfod,
        cfod_retarded: retarded.cfod,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WilsonPoint {
    pub n: f64,
    pub score: (f64, f64),
    pub simplified: (f64, f64),
}

/// Wilson bounds for a fixed proportion over log-spaced sample sizes.
pub fn wilson_curve(p: f64, z: f64, n_min: f64, n_max: f64, points: usize) -> Result<Vec<WilsonPoint>> {
    if !(n_min >= 1.0 && n_max > n_min) || points < 2 {
        return Err(MortalityError::Domain(
            "need 1 <= n_min < n_max and at least 2 points".into(),
        ));
    }
    let ratio = (n_max / n_min).ln() / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let n = n_min * (ratio * i as f64).exp();
            let score = wilson_interval_with(p, n, z, WilsonForm::Score)?;
            let simplified = wilson_interval_with(p, n, z, WilsonForm::SimplifiedSpread)?;
            Ok(WilsonPoint {
                n,
                score: (score.lower, score.upper),
                simplified: (simplified.lower, simplified.upper),
            })
        })
        .collect()
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = boundsCurve)]
pub fn bounds_curve_js(alpha: f64, nu: f64, mu: f64, max_steps: usize) -> std::result::Result<String, JsError> {
    to_js(bounds_curve(alpha, nu, mu, max_steps))
}

#[wasm_bindgen(js_name = correctionRun)]
pub fn correction_run_js(
    patients: usize,
    transfer_scale: f64,
    advanced_truth: bool,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(correction_run(patients, transfer_scale, advanced_truth, seed.into()))
}

#[wasm_bindgen(js_name = wilsonCurve)]
pub fn wilson_curve_js(p: f64, z: f64, n_min: f64, n_max: f64, points: usize) -> std::result::Result<String, JsError> {
    to_js(wilson_curve(p, z, n_min, n_max, points))
}
