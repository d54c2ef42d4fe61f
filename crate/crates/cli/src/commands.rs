use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use mortality_core::cohort::{
    assign_cohort, horizon_outcome, CohortClass, HorizonOutcome, PartitionKind, PatientRecord, StateId, StatePartition,
};
use mortality_core::counts::{aggregate_counts, check_balance, flux_counts, DailyCounts};
use mortality_core::estimation::{
    chi_square_independence, estimate_transitions, transfer_contingency, transfer_fractions, TransitionTable, Variant,
};
use mortality_core::fod::{fod_report, model_comparison_report, ComparisonEntry, ComparisonTest, OutcomeTotals};
use mortality_core::grid::DayMatrix;
use mortality_core::inflow::{project_inflow, validation_report, EmpiricalOutcome};
use mortality_core::io::{
    read_records, read_triples, write_counts, write_flux_counts, write_records, write_transitions, write_triples,
    write_weighted_records, Metadata,
};
use mortality_core::reweight::{death_weights, effective_dof, emit_weighted_dataset, weighted_death_share};
use mortality_core::sequential::random_sweep;
use mortality_core::simulator::{paper_calibration, simulate_cohort, simulate_inflow, GroundTruth};
use mortality_core::stratify::{
    daily_mortality_curve, fod_by_age, moving_average, severity_pair_fod, smoothed_fod_fit, weighted_cases,
    AgeFitOptions, MAX_SEVERITY,
};
use mortality_core::MortalityError;
use serde_json::{json, Value};

use crate::args::{GlobalArgs, InputArgs, OracleArgs, SimulateArgs, StratifyArgs, ValidateArgs};
use crate::error::CliError;
use crate::output::{Cell, Sink};

type Result<T> = std::result::Result<T, CliError>;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn load_records(path: &Path) -> Result<Vec<PatientRecord>> {
    Ok(read_records(open(path)?)?)
}

fn partition(g: &GlobalArgs) -> StatePartition {
    StatePartition::with_age_threshold(g.partition, g.age_threshold)
}

fn with(metadata: &Metadata, extra: &[(&str, String)]) -> Metadata {
    let mut out = metadata.clone();
    out.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    out
}

fn main_counts(records: &[PatientRecord], p: &StatePartition, horizon: usize) -> Result<DailyCounts> {
    let counts = aggregate_counts(records, p, CohortClass::MAIN, horizon)?;
    if let Some(v) = check_balance(&counts).first() {
        return Err(MortalityError::Precondition(format!(
            "balance identity H(t+1) = H(t) - dD - dR - dL fails at day {}, state {}",
            v.day,
            p.label(StateId(v.state))
        ))
        .into());
    }
    Ok(counts)
}

fn of_class(records: &[PatientRecord], class: CohortClass, horizon: usize) -> Result<Vec<PatientRecord>> {
    let mut out = Vec::new();
    for r in records {
        if assign_cohort(r, horizon)? == class {
            out.push(r.clone());
        }
    }
    Ok(out)
}

/// Transfers of day `t` become arrivals on day `t + 1`.
fn mirrored_schedule(counts: &DailyCounts, horizon: usize) -> DayMatrix<u64> {
    let n = counts.n_states();
    let mut schedule = DayMatrix::new(1, horizon, n);
    for s in 0..n {
        for t in 1..horizon {
            schedule.set(t + 1, s, counts.dl.get(t, s));
        }
    }
    schedule
}

pub fn simulate(g: &GlobalArgs, a: &SimulateArgs, metadata: &Metadata) -> Result<Sink> {
    let mut gt: GroundTruth = match &a.truth {
        Some(path) => serde_json::from_reader(open(path)?)?,
        None => paper_calibration(),
    };
    if let Some(seed) = g.seed {
        gt.seed = seed;
    }
    gt.validate()?;
    let main = simulate_cohort(&gt, a.patients)?;
    let mut truth = json!({ "main": main.truth });
    let mut records = main.records;
    let mut triples = main.triples;
    if a.inflow {
        let counts = aggregate_counts(&records, &gt.partition, CohortClass::MAIN, gt.horizon)?;
        let late = simulate_inflow(&gt, &mirrored_schedule(&counts, gt.horizon))?;
        truth["inflow"] = serde_json::to_value(&late.truth)?;
        records.extend(late.records);
        triples.extend(late.triples);
    }

    let source = a
        .truth
        .as_ref()
        .map_or("built-in calibration".to_string(), |p| p.display().to_string());
    let md = with(
        metadata,
        &[
            ("truth", source),
            ("seed", gt.seed.to_string()),
            ("patients", a.patients.to_string()),
            ("inflow", a.inflow.to_string()),
            ("truth_partition", gt.partition.kind().flag().to_string()),
            ("truth_horizon", gt.horizon.to_string()),
        ],
    );
    let mut sink = Sink::new(&g.output_dir, md.clone(), g.format)?;
    sink.file("records.csv", |out| Ok(write_records(out, &md, &records)?))?;
    sink.file("triples.csv", |out| Ok(write_triples(out, &md, &records, &triples)?))?;
    sink.json("truth.json", truth)?;
    sink.json("ground_truth.json", serde_json::to_value(&gt)?)?;
    println!("simulated {} records (seed {})", records.len(), gt.seed);
    Ok(sink)
}

pub fn fit(g: &GlobalArgs, a: &InputArgs, metadata: &Metadata) -> Result<Sink> {
    let records = load_records(&a.input)?;
    let p = partition(g);
    let counts = main_counts(&records, &p, g.horizon)?;
    let late = of_class(&records, CohortClass::In30, g.horizon)?;
    let flux = flux_counts(&late, &p, g.horizon)?;
    let tt = estimate_transitions(&counts, g.variant);

    let md = with(
        metadata,
        &[("input", a.input.display().to_string()), ("yates", a.yates.to_string())],
    );
    let mut sink = Sink::new(&g.output_dir, md.clone(), g.format)?;
    sink.file("counts.csv", |out| Ok(write_counts(out, &md, &counts)?))?;
    if flux.total_arrivals() > 0 {
        sink.file("flux.csv", |out| Ok(write_flux_counts(out, &md, &flux)?))?;
    }
    sink.file("transitions.csv", |out| Ok(write_transitions(out, &md, &tt, g.z)?))?;

    let rows = transfer_fractions(&counts, g.z, g.interval_form)
        .into_iter()
        .map(|r| {
            vec![
                r.state.into(),
                r.out30.into(),
                r.total.into(),
                r.fraction.into(),
                r.ci.map(|c| c.lower).into(),
                r.ci.map(|c| c.upper).into(),
            ]
        })
        .collect();
    sink.table(
        "transfer_fractions",
        &["state", "out30", "total", "fraction", "lower", "upper"],
        rows,
    )?;

    let independence = chi_square_independence(&transfer_contingency(&counts), a.yates)?;
    sink.json(
        "fit_summary.json",
        json!({
            "main_group": counts.total(),
            "late_arrivals": flux.total_arrivals(),
            "states": p.labels(),
            "transfer_independence": {
                "statistic": independence.statistic,
                "dof": independence.dof,
                "p_value": independence.p_value.value(),
                "log10_p_value": independence.p_value.log10(),
                "continuity_correction": independence.continuity_correction,
            },
        }),
    )?;
    println!(
        "fitted {} variant on {} patients in {} states; transfer independence p = {}",
        g.variant,
        counts.total(),
        p.len(),
        independence.p_value
    );
    Ok(sink)
}

fn corrected(records: &[PatientRecord], p: &StatePartition, variant: Variant, horizon: usize) -> Result<f64> {
    let counts = main_counts(records, p, horizon)?;
    let report = fod_report(&estimate_transitions(&counts, variant), &counts)?;
    Ok(report.corrected_dead)
}

pub fn fod(g: &GlobalArgs, a: &InputArgs, metadata: &Metadata) -> Result<Sink> {
    let records = load_records(&a.input)?;
    let p = partition(g);
    let counts = main_counts(&records, &p, g.horizon)?;
    let tt = estimate_transitions(&counts, g.variant);
    let report = fod_report(&tt, &counts)?;

    let md = with(metadata, &[("input", a.input.display().to_string())]);
    let mut sink = Sink::new(&g.output_dir, md, g.format)?;

    let h = g.horizon;
    let mut rows: Vec<Vec<Cell>> = p
        .states()
        .map(|s| {
            let i = s.0;
            let scfod = report.scfod[i][h - 1];
            vec![
                p.label(s).into(),
                counts.initial(i).into(),
                counts.deaths(i).into(),
                counts.transfers(i).into(),
                scfod.into(),
                (scfod * counts.initial(i) as f64).into(),
            ]
        })
        .collect();
    rows.push(vec![
        "all".into(),
        counts.total().into(),
        report.observed.dead.into(),
        report.observed.unknown.into(),
        report.corrected_fod.into(),
        report.corrected_dead.into(),
    ]);
    sink.table(
        "fod",
        &[
            "state",
            "patients",
            "observed_dead",
            "transferred",
            "corrected_fod",
            "corrected_dead",
        ],
        rows,
    )?;

    let mut header = vec!["t".to_string(), "cfod".to_string()];
    header.extend(p.labels().iter().map(|l| format!("scfod {l}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..h)
        .map(|i| {
            let mut row: Vec<Cell> = vec![(i + 1).into(), report.cfod[i].into()];
            row.extend(report.scfod.iter().map(|c| Cell::from(c[i])));
            row
        })
        .collect();
    sink.table("fod_curves", &header, rows)?;

    // Reference: the coarsest partition under the advanced ordering.
    let observed = OutcomeTotals::from_counts(&counts);
    let mut entries = vec![];
    for kind in PartitionKind::ALL {
        let q = StatePartition::with_age_threshold(*kind, g.age_threshold);
        for variant in Variant::ALL {
            let dead = if *kind == g.partition && *variant == g.variant {
                report.corrected_dead
            } else {
                match corrected(&records, &q, *variant, h) {
                    Ok(dead) => dead,
                    Err(CliError::Core(MortalityError::Classification { .. })) if *kind != g.partition => {
                        eprintln!("warning: records cannot be classified under {}; skipped", kind.flag());
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            };
            entries.push(ComparisonEntry::new(
                format!("{} {}", kind.flag(), variant),
                dead,
                counts.total() as f64,
            ));
        }
    }
    let reference = entries
        .iter()
        .position(|e| e.label == "coarsest advanced")
        .ok_or_else(|| MortalityError::Precondition("reference model unavailable".into()))?;
    // Naive rows: deaths over known outcomes, then over everyone.
    entries.insert(
        0,
        ComparisonEntry::new("available case", observed.dead, observed.alive + observed.dead),
    );
    entries.insert(
        1,
        ComparisonEntry::new("all transferred alive", observed.dead, observed.total()),
    );
    let comparison = model_comparison_report(&entries, reference + 2, ComparisonTest::AgainstReference)?;
    let rows = comparison
        .rows
        .iter()
        .map(|r| {
            vec![
                r.label.as_str().into(),
                r.alive.into(),
                r.dead.into(),
                r.total.into(),
                r.fod.into(),
                r.p_value.value().into(),
                r.p_value.log10().into(),
            ]
        })
        .collect();
    sink.table(
        "comparison",
        &["model", "alive", "dead", "total", "fod", "p_value", "log10_p_value"],
        rows,
    )?;

    println!(
        "corrected FOD({h}) = {:.4} ({} {}); available case {:.4}, all transferred alive {:.4}",
        report.corrected_fod, report.partition, report.variant, report.naive_available_case, report.naive_all_alive
    );
    Ok(sink)
}

pub fn validate(g: &GlobalArgs, a: &ValidateArgs, metadata: &Metadata) -> Result<Sink> {
    let records = load_records(&a.input)?;
    let p = partition(g);
    let counts = main_counts(&records, &p, g.horizon)?;
    let late = of_class(&records, CohortClass::In30, g.horizon)?;
    let flux = flux_counts(&late, &p, g.horizon)?;
    if flux.total_arrivals() == 0 {
        return Err(MortalityError::Precondition("no patients arrive after the day of injury".into()).into());
    }
    let empirical = match (a.empirical_alive, a.empirical_dead) {
        (Some(alive), Some(dead)) => EmpiricalOutcome {
            alive: alive as f64,
            dead: dead as f64,
            total: (alive + dead) as f64,
        },
        _ => {
            let total = late.len() as f64;
            let dead = late
                .iter()
                .filter(|r| horizon_outcome(r, g.horizon) == HorizonOutcome::Dead)
                .count() as f64;
            let alive = total - dead;
            EmpiricalOutcome {
                alive,
                dead,
                total: alive + dead,
            }
        }
    };

    let ci = mortality_core::estimation::wilson_interval(empirical.fod(), empirical.total, g.z)?;
    let mut rows: Vec<Vec<Cell>> = vec![vec![
        "empirical".into(),
        empirical.alive.into(),
        empirical.dead.into(),
        empirical.total.into(),
        empirical.fod().into(),
        ci.lower.into(),
        ci.upper.into(),
        Cell::Empty,
        Cell::Empty,
    ]];
    for variant in Variant::ALL {
        let tt = estimate_transitions(&counts, *variant);
        let projection = project_inflow(&tt, &flux, *variant)?;
        let label = format!("{} {}", p.kind().flag(), variant);
        let row = validation_report(&label, &projection.totals, &empirical, g.z)?;
        rows.push(vec![
            row.label.into(),
            row.alive_projected.into(),
            row.dead_projected.into(),
            row.total.into(),
            row.fod_projected.into(),
            row.ci_projected.lower.into(),
            row.ci_projected.upper.into(),
            row.intervals_overlap.into(),
            projection.clamped_cells.into(),
        ]);
    }

    let md = with(
        metadata,
        &[
            ("input", a.input.display().to_string()),
            (
                "empirical",
                if a.empirical_alive.is_some() {
                    "override"
                } else {
                    "records"
                }
                .to_string(),
            ),
        ],
    );
    let mut sink = Sink::new(&g.output_dir, md, g.format)?;
    sink.table(
        "validation",
        &[
            "model",
            "alive",
            "dead",
            "total",
            "fod",
            "lower",
            "upper",
            "overlaps_empirical",
            "clamped_cells",
        ],
        rows,
    )?;
    println!(
        "{} late arrivals, {} observed deaths (FOD {:.4})",
        empirical.total,
        empirical.dead,
        empirical.fod()
    );
    Ok(sink)
}

pub fn reweight(g: &GlobalArgs, a: &InputArgs, metadata: &Metadata) -> Result<Sink> {
    let records = load_records(&a.input)?;
    let p = partition(g);
    let counts = main_counts(&records, &p, g.horizon)?;
    let weights = death_weights(&estimate_transitions(&counts, g.variant), &counts)?;
    let known = of_class(&records, CohortClass::AvailableW30D, g.horizon)?;
    let weighted = emit_weighted_dataset(&known, &p, &weights)?;
    let share = weighted_death_share(&weighted, &p, g.horizon)?;

    let md = with(metadata, &[("input", a.input.display().to_string())]);
    let mut sink = Sink::new(&g.output_dir, md.clone(), g.format)?;
    sink.file("weighted.csv", |out| Ok(write_weighted_records(out, &md, &weighted)?))?;

    let mut rows = Vec::new();
    for t in 1..=g.horizon {
        for s in p.states() {
            if let Some(w) = weights.weight(t, s.0) {
                rows.push(vec![
                    t.into(),
                    p.label(s).into(),
                    counts.dd.get(t, s.0).into(),
                    w.into(),
                ]);
            }
        }
    }
    sink.table("death_weights", &["t", "state", "deaths", "weight"], rows)?;

    let mut by_state: Vec<Vec<f64>> = vec![Vec::new(); p.len()];
    for wr in &weighted {
        by_state[p.classify(&wr.record)?.0].push(wr.weight);
    }
    let mut rows = Vec::new();
    for s in p.states() {
        let w = &by_state[s.0];
        let n_w = if w.is_empty() { None } else { Some(effective_dof(w)?) };
        rows.push(vec![
            p.label(s).into(),
            counts.initial(s.0).into(),
            weights.h0w[s.0].into(),
            weights.p_d[s.0].into(),
            weights.dead_outside[s.0].into(),
            share[s.0].into(),
            w.len().into(),
            n_w.into(),
        ]);
    }
    let all: Vec<f64> = weighted.iter().map(|r| r.weight).collect();
    let h0 = counts.total() as f64;
    let p_all = (0..p.len())
        .map(|s| counts.initial(s) as f64 * weights.p_d[s])
        .sum::<f64>()
        / h0;
    let n_w = effective_dof(&all)?;
    rows.push(vec![
        "all".into(),
        counts.total().into(),
        weights.h0w.iter().sum::<f64>().into(),
        p_all.into(),
        weights.dead_outside.iter().sum::<f64>().into(),
        Cell::Empty,
        all.len().into(),
        n_w.into(),
    ]);
    sink.table(
        "reweight_summary",
        &[
            "state",
            "patients",
            "weighted_patients",
            "p_dead",
            "dead_outside",
            "weighted_death_share",
            "cases",
            "effective_cases",
        ],
        rows,
    )?;
    println!(
        "{} known-outcome cases, effective {:.2} ({:.4} of n)",
        all.len(),
        n_w,
        n_w / all.len() as f64
    );
    Ok(sink)
}

fn fit_or_error(result: std::result::Result<Value, MortalityError>) -> Value {
    match result {
        Ok(v) => json!({ "fit": v }),
        Err(e) => json!({ "error": e.kind(), "message": e.to_string() }),
    }
}

pub fn stratify(g: &GlobalArgs, a: &StratifyArgs, metadata: &Metadata) -> Result<Sink> {
    let records = load_records(&a.input)?;
    let triples = read_triples(open(&a.triples)?)?;
    let p = partition(g);
    let h = g.horizon;
    let counts = main_counts(&records, &p, h)?;
    let weights = death_weights(&estimate_transitions(&counts, g.variant), &counts)?;
    let weighted = emit_weighted_dataset(&of_class(&records, CohortClass::AvailableW30D, h)?, &p, &weights)?;
    let cases = weighted_cases(&weighted, &triples, h)?;

    let md = with(
        metadata,
        &[
            ("input", a.input.display().to_string()),
            ("triples", a.triples.display().to_string()),
            ("window", a.window.to_string()),
            ("start_day", a.start_day.to_string()),
            ("age_cut", a.age_cut.to_string()),
            ("age_bin_width", a.age_bin_width.to_string()),
            (
                "moving_average_edges",
                "truncated window; days before start_day unfiltered".to_string(),
            ),
        ],
    );
    let mut sink = Sink::new(&g.output_dir, md, g.format)?;

    let cut = a.age_cut;
    // None keeps everyone; Some(older) keeps one side of the cut, dropping unknown ages.
    let groups = [
        ("all ages".to_string(), None),
        (format!("age < {cut}"), Some(false)),
        (format!("age >= {cut}"), Some(true)),
    ];
    let mut rows = Vec::new();
    for (group, side) in &groups {
        let subset: Vec<PatientRecord> = records
            .iter()
            .filter(|r| side.is_none_or(|older| r.age_years.is_some_and(|x| (x >= cut) == older)))
            .cloned()
            .collect();
        let counts = aggregate_counts(&subset, &p, CohortClass::MAIN, h)?;
        if counts.total() == 0 {
            continue;
        }
        let tt: TransitionTable = estimate_transitions(&counts, g.variant);
        let populated: Vec<StateId> = p.states().filter(|s| counts.initial(s.0) > 0).collect();
        let mut strata: Vec<(String, Vec<StateId>)> =
            populated.iter().map(|&s| (p.label(s).to_string(), vec![s])).collect();
        if populated.len() > 1 {
            strata.push(("all states".to_string(), populated.clone()));
        }
        for (label, states) in strata {
            let curve = daily_mortality_curve(&tt, &states)?;
            let smooth = moving_average(&curve, a.window, a.start_day)?;
            for (i, (raw, avg)) in curve.iter().zip(&smooth).enumerate() {
                rows.push(vec![
                    group.as_str().into(),
                    label.as_str().into(),
                    (i + 1).into(),
                    (*raw).into(),
                    (*avg).into(),
                ]);
            }
        }
    }
    sink.table(
        "daily_mortality",
        &["age_group", "stratum", "t", "nu", "smoothed"],
        rows,
    )?;

    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for s1 in 1..=MAX_SEVERITY {
        let table = severity_pair_fod(&cases, s1);
        for s2 in 0..=s1 {
            for s3 in 0..=s2 {
                let (i, j) = (s2 as usize, s3 as usize);
                rows.push(vec![
                    u64::from(s1).into(),
                    u64::from(s2).into(),
                    u64::from(s3).into(),
                    table.get(s2, s3).into(),
                    table.weight[i][j].into(),
                    table.cases[i][j].into(),
                ]);
            }
        }
        let fit = smoothed_fod_fit(&table.cells(), s1).map(|f| {
            let coefficients: serde_json::Map<String, Value> =
                f.named_coefficients().into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
            json!({ "coefficients": coefficients, "weighted_residual": f.weighted_residual, "cells": f.cells, "coarse": f.coarse })
        });
        let mut entry = fit_or_error(fit);
        entry["s1"] = json!(s1);
        fits.push(entry);
    }
    sink.table("severity_pairs", &["s1", "s2", "s3", "fod", "weight", "cases"], rows)?;

    let options = AgeFitOptions {
        bin_width: a.age_bin_width,
        ..AgeFitOptions::default()
    };
    let profile = fod_by_age(&cases, &options);
    if let Ok(profile) = &profile {
        let rows = profile
            .bins
            .iter()
            .map(|b| {
                vec![
                    b.lower.into(),
                    b.upper.into(),
                    b.fod.into(),
                    b.weight.into(),
                    b.cases.into(),
                    profile.fit.predict(b.centre()).into(),
                ]
            })
            .collect();
        sink.table(
            "age_profile",
            &["lower", "upper", "fod", "weight", "cases", "fitted"],
            rows,
        )?;
    }
    sink.json(
        "fits.json",
        json!({
            "severity": fits,
            "age": fit_or_error(profile.and_then(|p| Ok(serde_json::to_value(p.fit)?))),
        }),
    )?;
    println!("stratified {} weighted cases", cases.len());
    Ok(sink)
}

pub fn oracle_check(g: &GlobalArgs, a: &OracleArgs, metadata: &Metadata) -> Result<Sink> {
    let seed = g.seed.unwrap_or(0);
    let report = random_sweep(a.samples, a.max_steps, seed)?;
    let md = with(
        metadata,
        &[
            ("seed", seed.to_string()),
            ("samples", a.samples.to_string()),
            ("max_steps", a.max_steps.to_string()),
        ],
    );
    let mut sink = Sink::new(&g.output_dir, md, g.format)?;
    let rows = [
        ("schedules_checked", Cell::from(report.schedules_checked)),
        ("max_death_violation", report.max_death_violation.into()),
        ("max_recovery_violation", report.max_recovery_violation.into()),
        ("max_leave_violation", report.max_leave_violation.into()),
        ("max_consistency_error", report.max_consistency_error.into()),
        ("max_conservation_error", report.max_conservation_error.into()),
        ("max_slack", report.max_slack().into()),
        ("tolerance", report.tolerance.into()),
        ("passed", report.passed.into()),
    ]
    .into_iter()
    .map(|(k, v)| vec![k.into(), v])
    .collect();
    sink.table("oracle", &["quantity", "value"], rows)?;
    println!(
        "{}: {} schedules, max slack {:.2e} (tolerance {:e})",
        if report.passed { "PASS" } else { "FAIL" },
        report.schedules_checked,
        report.max_slack(),
        report.tolerance
    );
    if !report.passed {
        return Err(CliError::OracleFailed {
            max_slack: report.max_slack(),
            tolerance: report.tolerance,
        });
    }
    Ok(sink)
}
