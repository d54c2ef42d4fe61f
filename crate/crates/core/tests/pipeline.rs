//! End-to-end runs on simulated cohorts with known ground truth.

use mortality_core::cohort::{CohortClass, Event, PartitionKind, StateId, StatePartition};
use mortality_core::counts::{aggregate_counts, check_balance, flux_counts};
use mortality_core::estimation::{
    chi_square_independence, estimate_transitions, transfer_contingency, wilson_interval, Coefficient, Variant,
    DEFAULT_Z,
};
use mortality_core::fod::{cfod, fod_report};
use mortality_core::grid::DayMatrix;
use mortality_core::inflow::project_inflow;
use mortality_core::io::{read_weighted_records, write_weighted_records};
use mortality_core::reweight::{death_weights, emit_weighted_dataset, weighted_death_share};
use mortality_core::simulator::{paper_calibration, simulate_cohort, simulate_inflow, GroundTruth, LotteryOrdering};
use mortality_core::stratify::{daily_mortality_curve, moving_average};

fn with_ordering(ordering: LotteryOrdering, seed: u64) -> GroundTruth {
    let mut gt = paper_calibration();
    gt.ordering = ordering;
    gt.seed = seed;
    gt
}

#[test]
fn estimates_converge_to_ground_truth() {
    for (ordering, variant) in [
        (LotteryOrdering::RetardedTransfer, Variant::RetardedTransfer),
        (LotteryOrdering::AdvancedTransfer, Variant::AdvancedTransfer),
    ] {
        let gt = with_ordering(ordering, 11);
        let cohort = simulate_cohort(&gt, 200_000).unwrap();
        let counts = aggregate_counts(&cohort.records, &gt.partition, CohortClass::MAIN, 30).unwrap();
        let tt = estimate_transitions(&counts, variant);
        let (mut cells, mut inside) = (0, 0);
        for t in 1..=30 {
            for s in 0..gt.n_states() {
                for (c, truth) in [
                    (Coefficient::Alpha, &gt.alpha),
                    (Coefficient::Nu, &gt.nu),
                    (Coefficient::Mu, &gt.mu),
                ] {
                    let n = tt.denominator(c, t, s);
                    if n < 500.0 {
                        continue;
                    }
                    let p = truth.get(t, s);
                    cells += 1;
                    if (tt.get(c, t, s) - p).abs() <= 3.0 * (p * (1.0 - p) / n).sqrt() + 1e-12 {
                        inside += 1;
                    }
                }
            }
        }
        assert!(cells > 300, "{cells}");
        assert!(inside as f64 >= 0.99 * cells as f64, "{variant}: {inside}/{cells}");
    }
}

#[test]
fn corrected_fod_tracks_truth_and_bias_ordering() {
    let gt = paper_calibration();
    let cohort = simulate_cohort(&gt, 200_000).unwrap();
    let truth = &cohort.truth;
    let band = wilson_interval(truth.true_fod, truth.n_patients as f64, DEFAULT_Z).unwrap();
    let counts = aggregate_counts(&cohort.records, &gt.partition, CohortClass::MAIN, 30).unwrap();
    assert!(check_balance(&counts).is_empty());
    let retarded = fod_report(&estimate_transitions(&counts, Variant::RetardedTransfer), &counts).unwrap();
    let advanced = fod_report(&estimate_transitions(&counts, Variant::AdvancedTransfer), &counts).unwrap();
    assert!(
        band.contains(retarded.corrected_fod),
        "{} not in {:?}",
        retarded.corrected_fod,
        band
    );
    assert!(retarded.naive_available_case >= retarded.corrected_fod);
    assert!(retarded.corrected_fod >= retarded.naive_all_alive);
    assert!(advanced.corrected_fod >= retarded.corrected_fod);

    // visible and hidden outcomes account for every patient
    let transferred = cohort.records.iter().filter(|r| r.event == Event::TransferOut).count() as u64;
    let h = &truth.hidden;
    assert_eq!(h.dead + h.recovered + h.alive_at_horizon, transferred);
    let visible_dead = cohort.records.iter().filter(|r| r.event == Event::Death).count() as u64;
    assert_eq!(visible_dead + h.dead, truth.true_dead);
}

#[test]
fn calibration_marginals() {
    let gt = paper_calibration();
    let cohort = simulate_cohort(&gt, 165_559).unwrap();
    let counts = aggregate_counts(&cohort.records, &gt.partition, CohortClass::MAIN, 30).unwrap();
    let out: u64 = (0..gt.n_states()).map(|s| counts.transfers(s)).sum();
    assert!((out as f64 / 165_559.0 - 0.1165).abs() < 0.005);
    let low = counts.transfers(0) as f64 / counts.initial(0) as f64;
    assert!((low - 0.6339).abs() < 0.03, "{low}");
}

#[test]
fn severity_dependent_transfer_rejects_independence() {
    let gt = paper_calibration();
    let cohort = simulate_cohort(&gt, 50_000).unwrap();
    let counts = aggregate_counts(&cohort.records, &gt.partition, CohortClass::MAIN, 30).unwrap();
    let result = chi_square_independence(&transfer_contingency(&counts), false).unwrap();
    assert_eq!(result.dof, 6);
    assert!(result.p_value.value() < 1e-3);
}

#[test]
fn inflow_fod_matches_analytic_value() {
    let partition = StatePartition::builtin(PartitionKind::Coarsest);
    let mut gt = paper_calibration();
    let (alpha, nu) = (0.08, 0.004);
    let mut a = DayMatrix::new(1, 30, 1);
    let mut v = DayMatrix::new(1, 30, 1);
    for t in 1..=30 {
        a.set(t, 0, alpha);
        v.set(t, 0, nu);
    }
    gt.partition = partition;
    gt.alpha = a;
    gt.nu = v;
    gt.mu = DayMatrix::new(1, 30, 1);
    gt.state_mix = vec![1.0];
    gt.age_ranges = vec![(20.0, 80.0)];
    let mut schedule = DayMatrix::new(1, 30, 1);
    for t in 2..=11 {
        schedule.set(t, 0, 100);
    }
    let cohort = simulate_inflow(&gt, &schedule).unwrap();
    assert_eq!(cohort.records.len(), 1000);
    // retarded arrivals on day a face days a+1..=30
    let analytic: f64 = (2..=11)
        .map(|arrival: i32| {
            let days = 30 - arrival;
            nu / (alpha + nu) * (1.0 - (1.0 - alpha - nu).powi(days))
        })
        .sum::<f64>()
        / 10.0;
    let dead = cohort.records.iter().filter(|r| r.event == Event::Death).count() as f64;
    let sigma = (analytic * (1.0 - analytic) / 1000.0).sqrt();
    assert!(
        (dead / 1000.0 - analytic).abs() <= 3.0 * sigma,
        "{} vs {analytic}",
        dead / 1000.0
    );
}

#[test]
fn inflow_projection_matches_simulated_deaths() {
    let gt = paper_calibration();
    let main = simulate_cohort(&gt, 165_559).unwrap();
    let counts = aggregate_counts(&main.records, &gt.partition, CohortClass::MAIN, 30).unwrap();
    // arrivals mirror the main cohort's own transfers out, shifted by one day
    let mut schedule = DayMatrix::new(1, 30, gt.n_states());
    for s in 0..gt.n_states() {
        for t in 1..30 {
            schedule.set(t + 1, s, counts.dl.get(t, s) / 2);
        }
    }
    let inflow = simulate_inflow(&gt, &schedule).unwrap();
    let flux = flux_counts(&inflow.records, &gt.partition, 30).unwrap();
    assert!(flux.check_balance().is_empty());
    let empirical = inflow.records.iter().filter(|r| r.event == Event::Death).count() as f64;
    let total = inflow.records.len() as f64;

    let retarded = project_inflow(
        &estimate_transitions(&counts, Variant::RetardedTransfer),
        &flux,
        Variant::RetardedTransfer,
    )
    .unwrap();
    let advanced = project_inflow(
        &estimate_transitions(&counts, Variant::AdvancedTransfer),
        &flux,
        Variant::AdvancedTransfer,
    )
    .unwrap();
    let p = retarded.totals.dead / total;
    let sigma = (total * p * (1.0 - p)).sqrt();
    assert!(
        (retarded.totals.dead - empirical).abs() <= 3.0 * sigma,
        "{} vs {empirical}",
        retarded.totals.dead
    );
    assert!(advanced.totals.dead >= retarded.totals.dead);
    assert_eq!(retarded.clamped_cells, 0);
}

#[test]
fn planted_hazard_bump_is_recovered() {
    let mut gt = paper_calibration();
    gt.partition = StatePartition::builtin(PartitionKind::MaxSeverity);
    let n = gt.partition.len();
    gt.alpha = DayMatrix::new(1, 30, n);
    gt.nu = DayMatrix::new(1, 30, n);
    gt.mu = DayMatrix::new(1, 30, n);
    for t in 1..=30 {
        for s in 0..n {
            gt.alpha.set(t, s, 0.02);
            gt.mu.set(t, s, 0.03);
            let bump = if (14..=21).contains(&t) {
                0.012 * (1.0 - (t as f64 - 17.5).abs() / 4.0)
            } else {
                0.0
            };
            gt.nu.set(t, s, 0.002 + bump * (1.0 + s as f64 / 6.0));
        }
    }
    gt.state_mix = vec![1.0 / n as f64; n];
    gt.age_ranges = vec![(18.0, 90.0); n];
    let cohort = simulate_cohort(&gt, 300_000).unwrap();
    let counts = aggregate_counts(&cohort.records, &gt.partition, CohortClass::MAIN, 30).unwrap();
    let tt = estimate_transitions(&counts, Variant::RetardedTransfer);
    let stratum: Vec<StateId> = (2..n).map(StateId).collect();
    let smoothed = moving_average(&daily_mortality_curve(&tt, &stratum).unwrap(), 5, 3).unwrap();
    let peak = 1 + (0..30).max_by(|&a, &b| smoothed[a].total_cmp(&smoothed[b])).unwrap();
    // planted maximum spans days 17 and 18
    assert!((16..=19).contains(&peak), "{peak}");
}

#[test]
fn weighted_dataset_survives_csv_round_trip() {
    let gt = paper_calibration();
    let cohort = simulate_cohort(&gt, 60_000).unwrap();
    let counts = aggregate_counts(&cohort.records, &gt.partition, CohortClass::MAIN, 30).unwrap();
    for variant in Variant::ALL {
        let tt = estimate_transitions(&counts, *variant);
        let weights = death_weights(&tt, &counts).unwrap();
        let known: Vec<_> = cohort
            .records
            .iter()
            .filter(|r| r.event != Event::TransferOut)
            .cloned()
            .collect();
        let weighted = emit_weighted_dataset(&known, &gt.partition, &weights).unwrap();
        let mut buf = Vec::new();
        write_weighted_records(&mut buf, &[], &weighted).unwrap();
        let back = read_weighted_records(buf.as_slice()).unwrap();
        assert_eq!(back, weighted);
        let share = weighted_death_share(&back, &gt.partition, 30).unwrap();
        for s in 0..gt.n_states() {
            assert!((share[s] - weights.p_d[s]).abs() < 1e-9);
            assert!(weights.h0w[s] <= counts.initial(s) as f64);
        }
        let corrected = cfod(&tt, &counts).unwrap()[29];
        let weighted_dead: f64 = (0..gt.n_states())
            .map(|s| counts.initial(s) as f64 * weights.p_d[s])
            .sum();
        assert!((weighted_dead - counts.total() as f64 * corrected).abs() < 1e-6);
    }
}
