//! Per-day, per-state counts and the balance identity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{assign_cohort, CohortClass, Event, PatientRecord, StatePartition};
use crate::error::{MortalityError, Result};
use crate::grid::DayMatrix;

/// Daily population and event counts for a fixed-arrival cohort.
///
/// `h` covers days `1..=horizon + 1`; event matrices cover `1..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyCounts {
    pub partition: StatePartition,
    pub horizon: usize,
    pub h: DayMatrix<u64>,
    pub dd: DayMatrix<u64>,
    pub dr: DayMatrix<u64>,
    pub dl: DayMatrix<u64>,
}

impl DailyCounts {
    pub fn zeros(partition: &StatePartition, horizon: usize) -> Self {
        let n = partition.len();
        DailyCounts {
            partition: partition.clone(),
            horizon,
            h: DayMatrix::new(1, horizon + 1, n),
            dd: DayMatrix::new(1, horizon, n),
            dr: DayMatrix::new(1, horizon, n),
            dl: DayMatrix::new(1, horizon, n),
        }
    }

    pub fn n_states(&self) -> usize {
        self.partition.len()
    }

    /// `H(1, s)`, the initial population of a state.
    pub fn initial(&self, state: usize) -> u64 {
        self.h.get(1, state)
    }

    /// Total initial population `H_0`.
    pub fn total(&self) -> u64 {
        (0..self.n_states()).map(|s| self.initial(s)).sum()
    }

    pub fn deaths(&self, state: usize) -> u64 {
        self.dd.column(state).iter().sum()
    }

    pub fn recoveries(&self, state: usize) -> u64 {
        self.dr.column(state).iter().sum()
    }

    pub fn transfers(&self, state: usize) -> u64 {
        self.dl.column(state).iter().sum()
    }

    /// Alive at the horizon with a known outcome: `H(horizon+1, s) + R(horizon, s)`.
    pub fn known_alive(&self, state: usize) -> u64 {
        self.h.get(self.horizon + 1, state) + self.recoveries(state)
    }

    /// Rebuilds `h` from `H(1, ·)` and the event matrices.
    fn fill_population(&mut self, initial: &[u64]) {
        for (s, &n) in initial.iter().enumerate() {
            let mut alive = n;
            self.h.set(1, s, alive);
            for t in 1..=self.horizon {
                alive -= self.dd.get(t, s) + self.dr.get(t, s) + self.dl.get(t, s);
                self.h.set(t + 1, s, alive);
            }
        }
    }
}

/// Event tallies collected from a shard of records.
#[derive(Clone)]
struct Tally {
    initial: Vec<u64>,
    dd: DayMatrix<u64>,
    dr: DayMatrix<u64>,
    dl: DayMatrix<u64>,
    l_in: DayMatrix<u64>,
}

impl Tally {
    fn new(states: usize, horizon: usize) -> Self {
        Tally {
            initial: vec![0; states],
            dd: DayMatrix::new(1, horizon, states),
            dr: DayMatrix::new(1, horizon, states),
            dl: DayMatrix::new(1, horizon, states),
            l_in: DayMatrix::new(1, horizon, states),
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.initial.iter_mut().zip(&other.initial) {
            *a += b;
        }
        self.dd.add_assign(&other.dd);
        self.dr.add_assign(&other.dr);
        self.dl.add_assign(&other.dl);
        self.l_in.add_assign(&other.l_in);
        self
    }

    fn record_event(&mut self, record: &PatientRecord, state: usize, horizon: usize) {
        let day = record.event_day as usize;
        if day > horizon {
            return;
        }
        let target = match record.event {
            Event::Death => &mut self.dd,
            Event::Recovery => &mut self.dr,
            Event::TransferOut => &mut self.dl,
            Event::StillInHospital => return,
        };
        *target.get_mut(day, state) += 1;
    }
}

const SHARD: usize = 8192;

/// Aggregates counts over records whose cohort is in `cohort_filter`.
///
/// Only patients present from day 1 enter the fixed-arrival counts; inflow
/// patients are handled by [`flux_counts`]. Events after the horizon leave the
/// patient in `H` through day `horizon + 1`.
pub fn aggregate_counts(
    records: &[PatientRecord],
    partition: &StatePartition,
    cohort_filter: &[CohortClass],
    horizon: usize,
) -> Result<DailyCounts> {
    let n = partition.len();
    let tally = records
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut tally = Tally::new(n, horizon);
            for record in chunk {
                let class = assign_cohort(record, horizon)?;
                if !cohort_filter.contains(&class) || record.arrival_day > 1 {
                    continue;
                }
                let s = partition.classify(record)?.0;
                tally.initial[s] += 1;
                tally.record_event(record, s, horizon);
            }
            Ok::<Tally, MortalityError>(tally)
        })
        .try_reduce(|| Tally::new(n, horizon), |a, b| Ok(a.merge(b)))?;

    let mut counts = DailyCounts::zeros(partition, horizon);
    counts.dd = tally.dd;
    counts.dr = tally.dr;
    counts.dl = tally.dl;
    counts.fill_population(&tally.initial);
    Ok(counts)
}

/// Arrival and departure fluxes of an inflow cohort.
///
/// `counts.h(t, s)` is the number present at any time during day `t`, so
/// `H(t+1) = H(t) − ΔD(t) − ΔR(t) − ΔL(t) + L_in(t+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxCounts {
    pub l_in: DayMatrix<u64>,
    pub l_out: DayMatrix<u64>,
    pub counts: DailyCounts,
}

impl FluxCounts {
    pub fn partition(&self) -> &StatePartition {
        &self.counts.partition
    }

    pub fn horizon(&self) -> usize {
        self.counts.horizon
    }

    pub fn total_arrivals(&self) -> u64 {
        self.l_in.as_slice().iter().sum()
    }

    /// Balance violations of the inflow identity.
    pub fn check_balance(&self) -> Vec<BalanceViolation> {
        let c = &self.counts;
        let mut out = Vec::new();
        for s in 0..c.n_states() {
            if c.h.get(1, s) != self.l_in.get(1, s) {
                out.push(BalanceViolation {
                    day: 0,
                    state: s,
                    lhs: c.h.get(1, s) as i64,
                    rhs: self.l_in.get(1, s) as i64,
                });
            }
            for t in 1..=c.horizon {
                let arrivals = if t < c.horizon { self.l_in.get(t + 1, s) } else { 0 };
                let rhs =
                    c.h.get(t, s) as i64 - (c.dd.get(t, s) + c.dr.get(t, s) + c.dl.get(t, s)) as i64 + arrivals as i64;
                let lhs = c.h.get(t + 1, s) as i64;
                if lhs != rhs {
                    out.push(BalanceViolation {
                        day: t,
                        state: s,
                        lhs,
                        rhs,
                    });
                }
            }
        }
        out
    }
}

/// Fluxes and daily counts for inflow (`In30`) records.
pub fn flux_counts(records: &[PatientRecord], partition: &StatePartition, horizon: usize) -> Result<FluxCounts> {
    let n = partition.len();
    let tally = records
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut tally = Tally::new(n, horizon);
            for record in chunk {
                if assign_cohort(record, horizon)? != CohortClass::In30 {
                    return Err(MortalityError::Precondition(format!(
                        "record {} is not in the inflow cohort",
                        record.patient_id
                    )));
                }
                let s = partition.classify(record)?.0;
                *tally.l_in.get_mut(record.arrival_day as usize, s) += 1;
                tally.record_event(record, s, horizon);
            }
            Ok(tally)
        })
        .try_reduce(|| Tally::new(n, horizon), |a, b| Ok(a.merge(b)))?;

    let mut counts = DailyCounts::zeros(partition, horizon);
    for s in 0..n {
        let mut present = 0u64;
        for t in 1..=horizon + 1 {
            if t <= horizon {
                present += tally.l_in.get(t, s);
            }
            counts.h.set(t, s, present);
            if t <= horizon {
                present -= tally.dd.get(t, s) + tally.dr.get(t, s) + tally.dl.get(t, s);
            }
        }
    }
    counts.dd = tally.dd;
    counts.dr = tally.dr;
    counts.dl = tally.dl.clone();
    Ok(FluxCounts {
        l_in: tally.l_in,
        l_out: tally.dl,
        counts,
    })
}

/// One failure of `H(t+1, s) = H(t, s) − ΔD(t, s) − ΔR(t, s) − ΔL(t, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceViolation {
    pub day: usize,
    pub state: usize,
    /// `H(t+1, s)`
    pub lhs: i64,
    /// `H(t, s) − ΔD − ΔR − ΔL`
    pub rhs: i64,
}

pub fn check_balance(counts: &DailyCounts) -> Vec<BalanceViolation> {
    let mut out = Vec::new();
    for s in 0..counts.n_states() {
        for t in 1..=counts.horizon {
            let rhs =
                counts.h.get(t, s) as i64 - (counts.dd.get(t, s) + counts.dr.get(t, s) + counts.dl.get(t, s)) as i64;
            let lhs = counts.h.get(t + 1, s) as i64;
            if lhs != rhs {
                out.push(BalanceViolation {
                    day: t,
                    state: s,
                    lhs,
                    rhs,
                });
            }
        }
    }
    out
}
