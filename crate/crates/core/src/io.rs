//! CSV reading and writing for records, counts and report tables.
//!
//! Output files may start with `# key=value` metadata lines; readers skip any
//! line starting with `#`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Trim};

use crate::cohort::{Destination, Event, PatientRecord};
use crate::counts::{DailyCounts, FluxCounts};
use crate::error::{MortalityError, Result};
use crate::estimation::{Coefficient, TransitionTable};
use crate::reweight::WeightedRecord;
use crate::stratify::SeverityTriple;

pub const RECORD_COLUMNS: [&str; 8] = [
    "patient_id",
    "age_years",
    "niss",
    "max_severity",
    "arrival_day",
    "event_day",
    "event",
    "destination",
];

pub const TRIPLE_COLUMNS: [&str; 4] = ["patient_id", "s1", "s2", "s3"];

/// Ordered `key=value` pairs written ahead of the CSV header.
pub type Metadata = Vec<(String, String)>;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(Trim::All)
        .flexible(false)
        .from_reader(input)
}

fn parse_error(record: &StringRecord, message: String) -> MortalityError {
    MortalityError::Parse {
        line: record.position().map_or(0, |p| p.line()),
        message,
    }
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(MortalityError::Parse {
            line: header.position().map_or(1, |p| p.line()),
            message: format!("expected columns {}, found {}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn field<T: FromStr>(record: &StringRecord, index: usize, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = record.get(index).unwrap_or("");
    raw.parse()
        .map_err(|e| parse_error(record, format!("column {name}: cannot parse `{raw}`: {e}")))
}

fn parse_record(row: &StringRecord) -> Result<PatientRecord> {
    let age = match row.get(1).unwrap_or("") {
        "" | "NA" | "na" => None,
        _ => Some(field::<f64>(row, 1, "age_years")?),
    };
    Ok(PatientRecord {
        patient_id: row.get(0).unwrap_or("").to_string(),
        age_years: age,
        niss: field(row, 2, "niss")?,
        max_severity: field(row, 3, "max_severity")?,
        arrival_day: field(row, 4, "arrival_day")?,
        event_day: field(row, 5, "event_day")?,
        event: field::<Event>(row, 6, "event")?,
        destination: field::<Destination>(row, 7, "destination")?,
    })
}

fn record_fields(r: &PatientRecord) -> Vec<String> {
    vec![
        r.patient_id.clone(),
        r.age_years.map(|a| a.to_string()).unwrap_or_default(),
        r.niss.to_string(),
        r.max_severity.to_string(),
        r.arrival_day.to_string(),
        r.event_day.to_string(),
        r.event.to_string(),
        r.destination.to_string(),
    ]
}

/// Reads the eight-column record schema. Empty or `NA` ages are missing.
pub fn read_records<R: Read>(input: R) -> Result<Vec<PatientRecord>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &RECORD_COLUMNS)?;
    rdr.records().map(|row| parse_record(&row?)).collect()
}

/// Reads the record schema followed by a `weight` column.
pub fn read_weighted_records<R: Read>(input: R) -> Result<Vec<WeightedRecord>> {
    let mut rdr = reader(input);
    let mut columns = RECORD_COLUMNS.to_vec();
    columns.push("weight");
    check_header(&mut rdr, &columns)?;
    rdr.records()
        .map(|row| {
            let row = row?;
            Ok(WeightedRecord {
                record: parse_record(&row)?,
                weight: field(&row, 8, "weight")?,
            })
        })
        .collect()
}

pub fn read_triples<R: Read>(input: R) -> Result<HashMap<String, SeverityTriple>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &TRIPLE_COLUMNS)?;
    let mut out = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let id = row.get(0).unwrap_or("").to_string();
        let triple = SeverityTriple::new(field(&row, 1, "s1")?, field(&row, 2, "s2")?, field(&row, 3, "s3")?)
            .map_err(|e| parse_error(&row, e.to_string()))?;
        if out.insert(id.clone(), triple).is_some() {
            return Err(parse_error(&row, format!("duplicate patient_id {id}")));
        }
    }
    Ok(out)
}

fn write_metadata<W: Write>(out: &mut W, metadata: &[(String, String)]) -> Result<()> {
    for (k, v) in metadata {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(())
}

/// Writes a table: metadata lines, header, then rows.
pub fn write_table<W: Write>(
    mut out: W,
    metadata: &[(String, String)],
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    write_metadata(&mut out, metadata)?;
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_records<W: Write>(out: W, metadata: &[(String, String)], records: &[PatientRecord]) -> Result<()> {
    write_table(out, metadata, &RECORD_COLUMNS, records.iter().map(record_fields))
}

pub fn write_weighted_records<W: Write>(
    out: W,
    metadata: &[(String, String)],
    records: &[WeightedRecord],
) -> Result<()> {
    let mut header = RECORD_COLUMNS.to_vec();
    header.push("weight");
    write_table(
        out,
        metadata,
        &header,
        records.iter().map(|wr| {
            let mut f = record_fields(&wr.record);
            f.push(wr.weight.to_string());
            f
        }),
    )
}

pub fn write_triples<W: Write>(
    out: W,
    metadata: &[(String, String)],
    records: &[PatientRecord],
    triples: &[SeverityTriple],
) -> Result<()> {
    if records.len() != triples.len() {
        return Err(MortalityError::Precondition("one triple per record required".into()));
    }
    write_table(
        out,
        metadata,
        &TRIPLE_COLUMNS,
        records.iter().zip(triples).map(|(r, t)| {
            vec![
                r.patient_id.clone(),
                t.s1().to_string(),
                t.s2().to_string(),
                t.s3().to_string(),
            ]
        }),
    )
}

fn count_rows(counts: &DailyCounts) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (s, label) in counts.partition.labels().iter().enumerate() {
        for t in 1..=counts.horizon {
            rows.push(vec![
                t.to_string(),
                label.clone(),
                counts.h.get(t, s).to_string(),
                counts.dd.get(t, s).to_string(),
                counts.dr.get(t, s).to_string(),
                counts.dl.get(t, s).to_string(),
            ]);
        }
    }
    rows
}

pub fn write_counts<W: Write>(out: W, metadata: &[(String, String)], counts: &DailyCounts) -> Result<()> {
    write_table(
        out,
        metadata,
        &["t", "state_label", "H", "dD", "dR", "dL"],
        count_rows(counts),
    )
}

pub fn write_flux_counts<W: Write>(out: W, metadata: &[(String, String)], flux: &FluxCounts) -> Result<()> {
    let horizon = flux.counts.horizon;
    let n = flux.counts.n_states();
    let mut rows = count_rows(&flux.counts);
    for s in 0..n {
        for t in 1..=horizon {
            let row = &mut rows[s * horizon + t - 1];
            row.push(flux.l_in.get(t, s).to_string());
            row.push(flux.l_out.get(t, s).to_string());
        }
    }
    write_table(
        out,
        metadata,
        &["t", "state_label", "H", "dD", "dR", "dL", "L_in", "L_out"],
        rows,
    )
}

/// One row per day and state with each coefficient and its Wilson bounds.
pub fn write_transitions<W: Write>(out: W, metadata: &[(String, String)], tt: &TransitionTable, z: f64) -> Result<()> {
    let header = [
        "t",
        "state_label",
        "H",
        "alpha",
        "alpha_lo",
        "alpha_hi",
        "nu",
        "nu_lo",
        "nu_hi",
        "mu",
        "mu_lo",
        "mu_hi",
    ];
    let mut rows = Vec::new();
    for (s, label) in tt.partition.labels().iter().enumerate() {
        for t in 1..=tt.horizon {
            let mut row = vec![t.to_string(), label.clone(), tt.n_eff.get(t, s).to_string()];
            for c in [Coefficient::Alpha, Coefficient::Nu, Coefficient::Mu] {
                row.push(tt.get(c, t, s).to_string());
                match tt.interval(c, t, s, z) {
                    Some(ci) => {
                        row.push(ci.lower.to_string());
                        row.push(ci.upper.to_string());
                    }
                    None => {
                        row.push(String::new());
                        row.push(String::new());
                    }
                }
            }
            rows.push(row);
        }
    }
    write_table(out, metadata, &header, rows)
}

/// `t, value` rows with `t` starting at 1.
pub fn write_curve<W: Write>(out: W, metadata: &[(String, String)], values: &[f64]) -> Result<()> {
    write_table(
        out,
        metadata,
        &["t", "value"],
        values
            .iter()
            .enumerate()
            .map(|(i, v)| vec![(i + 1).to_string(), v.to_string()]),
    )
}
