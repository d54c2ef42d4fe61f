//! Record schema, cohort classification and state partitions.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MortalityError, Result};

/// Outcome horizon in days after injury; day 1 is the day of injury.
pub const DEFAULT_HORIZON: usize = 30;

/// Default age cut for the low-severity refinement.
pub const DEFAULT_AGE_THRESHOLD: f64 = 54.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    Death,
    Recovery,
    TransferOut,
    StillInHospital,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Destination {
    HomeOwn,
    HomeCarer,
    NursingHome,
    Rehabilitation,
    Mortuary,
    OtherAcuteHospital,
    OtherInstitution,
    Unknown,
}

macro_rules! enum_names {
    ($ty:ident, $what:literal, [$($variant:ident),+ $(,)?]) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => stringify!($variant)),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                let s = s.trim();
                $ty::ALL
                    .iter()
                    .copied()
                    .find(|v| v.name().eq_ignore_ascii_case(s))
                    .ok_or_else(|| format!("unknown {} `{}`", $what, s))
            }
        }
    };
}

enum_names!(Event, "event", [Death, Recovery, TransferOut, StillInHospital]);
enum_names!(
    Destination,
    "destination",
    [
        HomeOwn,
        HomeCarer,
        NursingHome,
        Rehabilitation,
        Mortuary,
        OtherAcuteHospital,
        OtherInstitution,
        Unknown,
    ]
);

impl Destination {
    pub fn is_recovery(self) -> bool {
        matches!(
            self,
            Destination::HomeOwn | Destination::HomeCarer | Destination::NursingHome | Destination::Rehabilitation
        )
    }

    pub fn is_transfer(self) -> bool {
        matches!(
            self,
            Destination::OtherAcuteHospital | Destination::OtherInstitution | Destination::Unknown
        )
    }
}

/// One trauma case after episode joining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    /// `None` when the registry has no age for the patient.
    pub age_years: Option<f64>,
    pub niss: u32,
    pub max_severity: u8,
    pub arrival_day: u32,
    pub event_day: u32,
    pub event: Event,
    pub destination: Destination,
}

impl PatientRecord {
    /// Checks the schema invariants, naming the first one violated.
    pub fn validate(&self) -> Result<()> {
        let fail = |invariant: &'static str| {
            Err(MortalityError::InvalidRecord {
                patient_id: self.patient_id.clone(),
                invariant,
            })
        };
        if let Some(age) = self.age_years {
            if !age.is_finite() || age < 0.0 {
                return fail("age_years >= 0");
            }
        }
        if self.niss < 1 {
            return fail("niss >= 1");
        }
        if !(1..=6).contains(&self.max_severity) {
            return fail("max_severity in 1..=6");
        }
        if self.arrival_day < 1 {
            return fail("arrival_day >= 1");
        }
        if self.event_day < self.arrival_day {
            return fail("event_day >= arrival_day");
        }
        let consistent = match self.event {
            Event::Recovery => self.destination.is_recovery(),
            Event::Death => self.destination == Destination::Mortuary,
            Event::TransferOut => self.destination.is_transfer(),
            // no discharge yet, so no known destination
            Event::StillInHospital => self.destination == Destination::Unknown,
        };
        if !consistent {
            return fail("event matches destination");
        }
        Ok(())
    }
}

/// Cohort groups of the main analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CohortClass {
    AvailableW30D,
    Out30,
    In30,
    LateArrivalExcluded,
}

impl CohortClass {
    /// Main group: every patient arriving on the day of injury.
    pub const MAIN: &'static [CohortClass] = &[CohortClass::AvailableW30D, CohortClass::Out30];
}

/// Outcome at the horizon as visible to the registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HorizonOutcome {
    Alive,
    Dead,
    /// Transferred out of the registry before the horizon.
    Unknown,
}

pub fn horizon_outcome(record: &PatientRecord, horizon: usize) -> HorizonOutcome {
    let within = record.event_day as usize <= horizon;
    match record.event {
        Event::Death if within => HorizonOutcome::Dead,
        Event::TransferOut if within => HorizonOutcome::Unknown,
        _ => HorizonOutcome::Alive,
    }
}

pub fn assign_cohort(record: &PatientRecord, horizon: usize) -> Result<CohortClass> {
    record.validate()?;
    let arrival = record.arrival_day as usize;
    if arrival > horizon {
        return Ok(CohortClass::LateArrivalExcluded);
    }
    if arrival > 1 {
        return Ok(CohortClass::In30);
    }
    match record.event {
        Event::TransferOut if record.event_day as usize <= horizon => Ok(CohortClass::Out30),
        Event::StillInHospital if (record.event_day as usize) < horizon => Err(MortalityError::InvalidRecord {
            patient_id: record.patient_id.clone(),
            invariant: "still-in-hospital record observed through the horizon",
        }),
        _ => Ok(CohortClass::AvailableW30D),
    }
}

/// Index of a state within its partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PartitionKind {
    Coarsest,
    MaxSeverity,
    NissBinned,
    NissBinnedAgeRefined,
}

impl PartitionKind {
    pub const ALL: &'static [PartitionKind] = &[
        PartitionKind::Coarsest,
        PartitionKind::MaxSeverity,
        PartitionKind::NissBinned,
        PartitionKind::NissBinnedAgeRefined,
    ];

    /// Flag spelling used on the command line.
    pub fn flag(self) -> &'static str {
        match self {
            PartitionKind::Coarsest => "coarsest",
            PartitionKind::MaxSeverity => "max-severity",
            PartitionKind::NissBinned => "niss",
            PartitionKind::NissBinnedAgeRefined => "niss-age",
        }
    }
}

impl FromStr for PartitionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        PartitionKind::ALL
            .iter()
            .copied()
            .find(|k| k.flag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown partition `{s}`"))
    }
}

/// NISS bin upper bounds (inclusive); the last bin is open.
const NISS_BIN_UPPER: [u32; 6] = [3, 8, 9, 16, 24, 35];
const NISS_BIN_LABELS: [&str; 7] = [
    "NISS 1-3",
    "NISS 4-8",
    "NISS 9",
    "NISS 10-16",
    "NISS 17-24",
    "NISS 25-35",
    "NISS 36+",
];

fn niss_bin(niss: u32) -> usize {
    NISS_BIN_UPPER
        .iter()
        .position(|&upper| niss <= upper)
        .unwrap_or(NISS_BIN_UPPER.len())
}

/// A fixed-at-injury classification of patients into model states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePartition {
    kind: PartitionKind,
    age_threshold: f64,
    labels: Vec<String>,
}

impl StatePartition {
    pub fn builtin(kind: PartitionKind) -> Self {
        Self::with_age_threshold(kind, DEFAULT_AGE_THRESHOLD)
    }

    /// The age threshold only matters for [`PartitionKind::NissBinnedAgeRefined`].
    pub fn with_age_threshold(kind: PartitionKind, age_threshold: f64) -> Self {
        let labels: Vec<String> = match kind {
            PartitionKind::Coarsest => vec!["all".to_string()],
            PartitionKind::MaxSeverity => (1..=6).map(|s| format!("max severity {s}")).collect(),
            PartitionKind::NissBinned => NISS_BIN_LABELS.iter().map(|s| s.to_string()).collect(),
            PartitionKind::NissBinnedAgeRefined => {
                let mut v = vec!["NISS 1-3 y".to_string(), "NISS 1-3 o".to_string()];
                v.extend(NISS_BIN_LABELS[1..].iter().map(|s| s.to_string()));
                v
            }
        };
        StatePartition {
            kind,
            age_threshold,
            labels,
        }
    }

    pub fn kind(&self) -> PartitionKind {
        self.kind
    }

    pub fn age_threshold(&self) -> f64 {
        self.age_threshold
    }

    pub fn name(&self) -> &'static str {
        self.kind.flag()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.labels.len()).map(StateId)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, state: StateId) -> &str {
        &self.labels[state.0]
    }

    pub fn state_by_label(&self, label: &str) -> Option<StateId> {
        self.labels.iter().position(|l| l == label).map(StateId)
    }

    /// Maps a record to its state from injury-time attributes only.
    pub fn classify(&self, record: &PatientRecord) -> Result<StateId> {
        let err = |reason: String| MortalityError::Classification {
            patient_id: record.patient_id.clone(),
            partition: self.name().to_string(),
            reason,
        };
        match self.kind {
            PartitionKind::Coarsest => Ok(StateId(0)),
            PartitionKind::MaxSeverity => match record.max_severity {
                s @ 1..=6 => Ok(StateId(s as usize - 1)),
                s => Err(err(format!("max_severity {s} outside 1..=6"))),
            },
            PartitionKind::NissBinned => {
                if record.niss < 1 {
                    return Err(err("niss must be >= 1".into()));
                }
                Ok(StateId(niss_bin(record.niss)))
            }
            PartitionKind::NissBinnedAgeRefined => {
                if record.niss < 1 {
                    return Err(err("niss must be >= 1".into()));
                }
                let bin = niss_bin(record.niss);
                if bin > 0 {
                    return Ok(StateId(bin + 1));
                }
                match record.age_years {
                    Some(age) if age.is_finite() => Ok(StateId(if age < self.age_threshold { 0 } else { 1 })),
                    _ => Err(err("age required for the low-severity split".into())),
                }
            }
        }
    }

    /// Same labels, same classification rule.
    pub fn is_compatible(&self, other: &StatePartition) -> bool {
        self.kind == other.kind && self.labels == other.labels && self.age_threshold == other.age_threshold
    }
}

impl fmt::Display for StatePartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Collapses per-hospital episodes into one record per trauma case.
///
/// Rows for one patient must be in admission order. The first row supplies
/// arrival day and injury attributes, the last row supplies the terminal event.
/// Only the final episode may end in death or recovery.
pub fn join_episodes(rows: &[PatientRecord]) -> Result<Vec<PatientRecord>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&PatientRecord>> = HashMap::new();
    for row in rows {
        groups
            .entry(row.patient_id.as_str())
            .or_insert_with(|| {
                order.push(row.patient_id.as_str());
                Vec::new()
            })
            .push(row);
    }

    let mut joined = Vec::with_capacity(order.len());
    for id in order {
        let episodes = &groups[id];
        let (last, earlier) = episodes.split_last().expect("group is non-empty");
        if earlier
            .iter()
            .any(|e| matches!(e.event, Event::Death | Event::Recovery))
        {
            return Err(MortalityError::JoinConflict(id.to_string()));
        }
        let first = episodes[0];
        let record = PatientRecord {
            patient_id: id.to_string(),
            age_years: first.age_years,
            niss: first.niss,
            max_severity: first.max_severity,
            arrival_day: first.arrival_day,
            event_day: last.event_day,
            event: last.event,
            destination: last.destination,
        };
        record.validate()?;
        joined.push(record);
    }
    Ok(joined)
}
