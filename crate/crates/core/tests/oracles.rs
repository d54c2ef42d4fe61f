//! Results checked against independent computations: Monte Carlo runs of the
//! chains, hand-written normal equations and a reference chi-square tail.

use mortality_core::cohort::{PartitionKind, StateId, StatePartition};
use mortality_core::counts::{check_balance, DailyCounts};
use mortality_core::estimation::{chi_square_independence, TransitionTable, Variant};
use mortality_core::fod::scfod_curve;
use mortality_core::grid::DayMatrix;
use mortality_core::sequential::{day_outcome_probabilities, fractional_split};
use mortality_core::stratify::{smoothed_fod_fit, FodCell};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const TRIALS: usize = 1_000_000;

fn random_table(rng: &mut ChaCha20Rng, horizon: usize) -> TransitionTable {
    let partition = StatePartition::builtin(PartitionKind::MaxSeverity);
    let n = partition.len();
    let mut alpha = DayMatrix::new(1, horizon, n);
    let mut nu = DayMatrix::new(1, horizon, n);
    let mu = DayMatrix::new(1, horizon, n);
    let mut n_eff = DayMatrix::new(1, horizon, n);
    for t in 1..=horizon {
        for s in 0..n {
            let a = rng.random_range(0.0..0.15);
            alpha.set(t, s, a);
            nu.set(t, s, rng.random_range(0.0..0.05));
            n_eff.set(t, s, 1000.0);
        }
    }
    TransitionTable::from_coefficients(Variant::RetardedTransfer, partition, alpha, nu, mu, n_eff).unwrap()
}

#[test]
fn scfod_matches_monte_carlo() {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let horizon = 30;
    let tt = random_table(&mut rng, horizon);
    for s in [0usize, 3, 5] {
        let curve = scfod_curve(&tt, StateId(s));
        let mut dead_by = vec![0u64; horizon];
        for _ in 0..TRIALS {
            for t in 1..=horizon {
                let u: f64 = rng.random();
                let (a, v) = (tt.alpha.get(t, s), tt.nu.get(t, s));
                if u < v {
                    dead_by[t - 1] += 1;
                    break;
                }
                if u < v + a {
                    break;
                }
            }
        }
        let mut cumulative = 0u64;
        for t in 0..horizon {
            cumulative += dead_by[t];
            let freq = cumulative as f64 / TRIALS as f64;
            let p = curve[t];
            let sigma = (p * (1.0 - p) / TRIALS as f64).sqrt().max(1e-9);
            if t == 9 || t == horizon - 1 {
                assert!(
                    (freq - p).abs() <= 3.0 * sigma,
                    "state {s} day {}: {freq} vs {p}",
                    t + 1
                );
            }
        }
    }
}

#[test]
fn sequential_day_matches_monte_carlo() {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    for (alpha, nu, mu, steps) in [(0.1, 0.05, 0.2, 2), (0.3, 0.2, 0.6, 4), (0.05, 0.01, 0.9, 6)] {
        let sched = fractional_split(alpha, nu, mu, steps).unwrap();
        let expected = day_outcome_probabilities(&sched);
        let mut tally = [0u64; 4];
        for _ in 0..TRIALS {
            let mut outcome = 3;
            for j in 0..steps {
                let u: f64 = rng.random();
                if u < sched.nu_i[j] {
                    outcome = 0;
                    break;
                }
                if u < sched.nu_i[j] + sched.alpha_i[j] {
                    outcome = 1;
                    break;
                }
                if rng.random::<f64>() < sched.mu_i[j] {
                    outcome = 2;
                    break;
                }
            }
            tally[outcome] += 1;
        }
        for (count, p) in tally
            .iter()
            .zip([expected.death, expected.recovery, expected.leave, expected.stay])
        {
            let freq = *count as f64 / TRIALS as f64;
            let sigma = (p * (1.0 - p) / TRIALS as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "{freq} vs {p} for {alpha} {nu} {mu} M={steps}"
            );
        }
    }
}

/// Solves the weighted normal equations `XᵀWX β = XᵀWy` by Gaussian
/// elimination with partial pivoting.
fn normal_equations(rows: &[[f64; 5]], y: &[f64], w: &[f64]) -> [f64; 5] {
    let mut m = [[0.0; 6]; 5];
    for ((x, yi), wi) in rows.iter().zip(y).zip(w) {
        for i in 0..5 {
            for j in 0..5 {
                m[i][j] += wi * x[i] * x[j];
            }
            m[i][5] += wi * x[i] * yi;
        }
    }
    for col in 0..5 {
        let pivot = (col..5)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for r in 0..5 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..6 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    std::array::from_fn(|i| m[i][5] / m[i][i])
}

#[test]
fn wls_matches_normal_equations() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    for _ in 0..50 {
        let mut cells = Vec::new();
        for s2 in 0..=5u8 {
            for s3 in 0..=s2 {
                if rng.random_bool(0.8) || s3 == 0 {
                    cells.push(FodCell {
                        s2,
                        s3,
                        fod: rng.random_range(0.0..0.8),
                        weight: rng.random_range(1.0..3000.0),
                    });
                }
            }
        }
        let Ok(fit) = smoothed_fod_fit(&cells, 5) else { continue };
        let rows: Vec<[f64; 5]> = cells
            .iter()
            .map(|c| {
                let (x, y) = (c.s2 as f64, c.s3 as f64);
                [1.0, x, y, x * x, y * y]
            })
            .collect();
        let y: Vec<f64> = cells.iter().map(|c| c.fod).collect();
        let w: Vec<f64> = cells.iter().map(|c| c.weight).collect();
        let beta = normal_equations(&rows, &y, &w);
        let got = [fit.intercept, fit.c_s2, fit.c_s3, fit.c_s2sq, fit.c_s3sq];
        for (g, b) in got.iter().zip(beta) {
            assert!((g - b).abs() < 1e-9, "{got:?} vs {beta:?}");
        }
    }
}

#[test]
fn chi_square_matches_reference_tail() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..100 {
        let rows = rng.random_range(2..8);
        let cols = rng.random_range(2..4);
        let table: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(1..500) as f64).collect())
            .collect();
        let result = chi_square_independence(&table, false).unwrap();
        // independent statistic
        let total: f64 = table.iter().flatten().sum();
        let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        let mut stat = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                let e = row_sums[i] * col_sums[j] / total;
                stat += (table[i][j] - e).powi(2) / e;
            }
        }
        assert!((result.statistic - stat).abs() <= 1e-9 * stat.max(1.0));
        assert_eq!(result.dof, (rows - 1) * (cols - 1));
        let reference = ChiSquared::new(result.dof as f64).unwrap().sf(stat);
        let p = result.p_value.value();
        assert!((p - reference).abs() <= 1e-10 + 1e-8 * reference, "{p} vs {reference}");
    }
}

#[test]
fn balance_faults_located_exactly() {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let partition = StatePartition::builtin(PartitionKind::MaxSeverity);
    for _ in 0..200 {
        let horizon = rng.random_range(1..=30);
        let mut counts = DailyCounts::zeros(&partition, horizon);
        for s in 0..partition.len() {
            let mut h = rng.random_range(0..5000u64);
            for t in 1..=horizon {
                counts.h.set(t, s, h);
                let d = rng.random_range(0..=h / 10);
                let r = rng.random_range(0..=h / 5);
                let l = rng.random_range(0..=h / 10);
                counts.dd.set(t, s, d);
                counts.dr.set(t, s, r);
                counts.dl.set(t, s, l);
                h -= d + r + l;
            }
            counts.h.set(horizon + 1, s, h);
        }
        assert!(check_balance(&counts).is_empty());

        // one fault anywhere in H, ΔD, ΔR or ΔL
        let s = rng.random_range(0..partition.len());
        let which = rng.random_range(0..4);
        let t = rng.random_range(1..=horizon);
        let day = if which == 0 {
            rng.random_range(1..=horizon + 1)
        } else {
            t
        };
        let cell = match which {
            0 => counts.h.get_mut(day, s),
            1 => counts.dd.get_mut(day, s),
            2 => counts.dr.get_mut(day, s),
            _ => counts.dl.get_mut(day, s),
        };
        *cell += rng.random_range(1..10);

        // independent recomputation of where the identity fails
        let mut expected = Vec::new();
        for st in 0..partition.len() {
            for tt in 1..=horizon {
                let lhs = counts.h.get(tt + 1, st) as i64;
                let rhs = counts.h.get(tt, st) as i64
                    - counts.dd.get(tt, st) as i64
                    - counts.dr.get(tt, st) as i64
                    - counts.dl.get(tt, st) as i64;
                if lhs != rhs {
                    expected.push((tt, st));
                }
            }
        }
        let got: Vec<(usize, usize)> = check_balance(&counts).iter().map(|v| (v.day, v.state)).collect();
        assert_eq!(got, expected);
        let days: Vec<usize> = got.iter().map(|g| g.0).collect();
        let want: Vec<usize> = match which {
            0 if day == 1 => vec![1],
            0 if day == horizon + 1 => vec![horizon],
            0 => vec![day - 1, day],
            _ => vec![day],
        };
        assert_eq!(days, want);
    }
}
