//! Projection of outcomes for patients arriving after the day of injury.

use serde::{Deserialize, Serialize};

use crate::counts::FluxCounts;
use crate::error::{MortalityError, Result};
use crate::estimation::{wilson_interval, ProportionCI, TransitionTable, Variant};
use crate::grid::DayMatrix;

/// Expected in-hospital population, cumulative recoveries and deaths.
///
/// All matrices cover days `0..=horizon`; day 0 is the zero initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflowProjection {
    pub variant: Variant,
    pub h: DayMatrix<f64>,
    pub recovered: DayMatrix<f64>,
    pub dead: DayMatrix<f64>,
    pub totals: ProjectionTotals,
    /// Number of cells where the in-hospital mass went negative and was clamped.
    pub clamped_cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionTotals {
    pub alive: f64,
    pub dead: f64,
    pub total: f64,
}

/// Runs the inflow recurrences with coefficients fitted on the main cohort.
///
/// Advanced: arrivals and departures of day `t+1` join before that day's
/// recovery/death lottery. Retarded: the lottery acts on the population
/// carried over from day `t`, then arrivals and departures are applied.
/// A negative in-hospital mass means the fluxes are inconsistent with the
/// model; it is clamped to zero and logged.
pub fn project_inflow(tt: &TransitionTable, flux: &FluxCounts, variant: Variant) -> Result<InflowProjection> {
    if tt.variant != variant {
        return Err(MortalityError::Mismatch(format!(
            "projection requested for {variant} but the table was fitted as {}",
            tt.variant
        )));
    }
    if !tt.partition.is_compatible(flux.partition()) || tt.horizon != flux.horizon() {
        return Err(MortalityError::Mismatch(
            "transition table and flux counts differ in partition or horizon".into(),
        ));
    }
    let horizon = tt.horizon;
    let n = tt.n_states();
    let mut h = DayMatrix::new(0, horizon + 1, n);
    let mut recovered = DayMatrix::new(0, horizon + 1, n);
    let mut dead = DayMatrix::new(0, horizon + 1, n);
    let mut clamped_cells = 0;

    for s in 0..n {
        for t in 0..horizon {
            let day = t + 1;
            let (a, v) = (tt.alpha.get(day, s), tt.nu.get(day, s));
            let net_flux = flux.l_in.get(day, s) as f64 - flux.l_out.get(day, s) as f64;
            let prev = h.get(t, s);
            let (exposed, carried) = match variant {
                Variant::AdvancedTransfer => {
                    let mut bracket = prev + net_flux;
                    if bracket < 0.0 {
                        log::warn!("negative in-hospital mass {bracket} on day {day}, state {s}; clamped to 0");
                        clamped_cells += 1;
                        bracket = 0.0;
                    }
                    (bracket, bracket * (1.0 - a - v))
                }
                Variant::RetardedTransfer => {
                    let mut next = prev * (1.0 - a - v) + net_flux;
                    if next < 0.0 {
                        log::warn!("negative in-hospital mass {next} on day {day}, state {s}; clamped to 0");
                        clamped_cells += 1;
                        next = 0.0;
                    }
                    (prev, next)
                }
            };
            h.set(day, s, carried);
            recovered.set(day, s, recovered.get(t, s) + a * exposed);
            dead.set(day, s, dead.get(t, s) + v * exposed);
        }
    }

    let total = flux.total_arrivals() as f64;
    let dead_total: f64 = (0..n).map(|s| dead.get(horizon, s)).sum();
    Ok(InflowProjection {
        variant,
        h,
        recovered,
        dead,
        totals: ProjectionTotals {
            alive: total - dead_total,
            dead: dead_total,
            total,
        },
        clamped_cells,
    })
}

/// Observed outcomes of the inflow cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalOutcome {
    pub alive: f64,
    pub dead: f64,
    pub total: f64,
}

impl EmpiricalOutcome {
    pub fn fod(&self) -> f64 {
        self.dead / self.total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub label: String,
    pub alive_projected: f64,
    pub dead_projected: f64,
    pub total: f64,
    pub fod_projected: f64,
    pub ci_projected: ProportionCI,
    pub fod_empirical: f64,
    pub ci_empirical: ProportionCI,
    pub intervals_overlap: bool,
}

pub fn validation_report(
    label: &str,
    totals: &ProjectionTotals,
    empirical: &EmpiricalOutcome,
    z: f64,
) -> Result<ValidationRow> {
    if (totals.total - empirical.total).abs() > 1e-9 {
        return Err(MortalityError::Mismatch(format!(
            "projection covers {} patients but the empirical cohort has {}",
            totals.total, empirical.total
        )));
    }
    let fod_projected = totals.dead / totals.total;
    let ci_projected = wilson_interval(fod_projected, totals.total, z)?;
    let ci_empirical = wilson_interval(empirical.fod(), empirical.total, z)?;
    Ok(ValidationRow {
        label: label.to_string(),
        alive_projected: totals.alive,
        dead_projected: totals.dead,
        total: totals.total,
        fod_projected,
        intervals_overlap: ci_projected.overlaps(&ci_empirical),
        ci_projected,
        fod_empirical: empirical.fod(),
        ci_empirical,
    })
}
