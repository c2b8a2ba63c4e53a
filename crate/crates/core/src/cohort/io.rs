//! Cohort persistence: a visits CSV plus companion JSONL files for SDoH
//! texts and raw vitals, keyed by visit id. Timestamps are RFC 3339.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{CohortError, GeneratedCohort, GoldCategories, VisitRecord, VitalReading};

pub const COHORT_CSV_HEADER: [&str; 14] = [
    "patient_id",
    "visit_id",
    "arrival",
    "age_years",
    "gender",
    "marital_status",
    "race",
    "ethnic_group",
    "language",
    "insurance",
    "esi_level",
    "icd_code",
    "chief_complaint_text",
    "visits_past_2_months",
];

#[derive(Serialize, Deserialize)]
struct SdohRow {
    visit_id: String,
    texts: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct VitalsRow {
    visit_id: String,
    readings: Vec<VitalReadingRow>,
}

#[derive(Serialize, Deserialize)]
struct VitalReadingRow {
    kind: String,
    value: f64,
    timestamp: String,
}

#[derive(Serialize, Deserialize)]
struct GoldRow {
    visit_id: String,
    chief_complaint: String,
    sdoh: BTreeMap<String, String>,
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_rfc3339(s: &str, visit_id: &str) -> Result<DateTime<Utc>, CohortError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| CohortError::InvalidRecord {
            visit_id: visit_id.to_string(),
            reason: format!("bad timestamp {s:?}: {e}"),
        })
}

/// Write `visits.csv`, `sdoh.jsonl`, `vitals.jsonl` and, when gold categories
/// are provided, `gold.jsonl` under `dir`.
pub fn write_cohort(
    dir: &Path,
    visits: &[VisitRecord],
    gold: Option<&BTreeMap<String, GoldCategories>>,
) -> Result<(), CohortError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("visits.csv"))?;
    w.write_record(COHORT_CSV_HEADER)?;
    for v in visits {
        w.write_record([
            v.patient_id.as_str(),
            v.visit_id.as_str(),
            &rfc3339(v.arrival),
            &v.age_years.to_string(),
            &v.gender,
            &v.marital_status,
            &v.race,
            &v.ethnic_group,
            &v.language,
            &v.insurance,
            &v.esi_level.to_string(),
            &v.icd_code,
            &v.chief_complaint_text,
            &v.visits_past_2_months.to_string(),
        ])?;
    }
    w.flush()?;

    let mut sdoh = BufWriter::new(File::create(dir.join("sdoh.jsonl"))?);
    for v in visits {
        let row = SdohRow {
            visit_id: v.visit_id.clone(),
            texts: v.sdoh_texts.clone(),
        };
        serde_json::to_writer(&mut sdoh, &row)?;
        sdoh.write_all(b"\n")?;
    }
    sdoh.flush()?;

    let mut vit = BufWriter::new(File::create(dir.join("vitals.jsonl"))?);
    for v in visits {
        let row = VitalsRow {
            visit_id: v.visit_id.clone(),
            readings: v
                .vitals_raw
                .iter()
                .map(|r| VitalReadingRow {
                    kind: r.kind.clone(),
                    value: r.value,
                    timestamp: rfc3339(r.timestamp),
                })
                .collect(),
        };
        serde_json::to_writer(&mut vit, &row)?;
        vit.write_all(b"\n")?;
    }
    vit.flush()?;

    if let Some(gold) = gold {
        let mut g = BufWriter::new(File::create(dir.join("gold.jsonl"))?);
        for v in visits {
            if let Some(cats) = gold.get(&v.visit_id) {
                let row = GoldRow {
                    visit_id: v.visit_id.clone(),
                    chief_complaint: cats.chief_complaint.clone(),
                    sdoh: cats.sdoh.clone(),
                };
                serde_json::to_writer(&mut g, &row)?;
                g.write_all(b"\n")?;
            }
        }
        g.flush()?;
    }
    Ok(())
}

/// Read a cohort previously written by [`write_cohort`]. Gold categories are
/// returned when `gold.jsonl` exists.
pub fn read_cohort(dir: &Path) -> Result<GeneratedCohort, CohortError> {
    let mut sdoh_by_visit: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for line in BufReader::new(File::open(dir.join("sdoh.jsonl"))?).lines() {
        let row: SdohRow = serde_json::from_str(&line?)?;
        sdoh_by_visit.insert(row.visit_id, row.texts);
    }
    let mut vitals_by_visit: BTreeMap<String, Vec<VitalReading>> = BTreeMap::new();
    for line in BufReader::new(File::open(dir.join("vitals.jsonl"))?).lines() {
        let row: VitalsRow = serde_json::from_str(&line?)?;
        let readings = row
            .readings
            .into_iter()
            .map(|r| {
                Ok(VitalReading {
                    timestamp: parse_rfc3339(&r.timestamp, &row.visit_id)?,
                    kind: r.kind,
                    value: r.value,
                })
            })
            .collect::<Result<Vec<_>, CohortError>>()?;
        vitals_by_visit.insert(row.visit_id.clone(), readings);
    }

    let mut reader = csv::Reader::from_path(dir.join("visits.csv"))?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != COHORT_CSV_HEADER {
            return Err(CohortError::InvalidSpec(format!(
                "unexpected visits.csv header: {got:?}"
            )));
        }
    }
    let mut visits = Vec::new();
    for record in reader.records() {
        let r = record?;
        let visit_id = r[1].to_string();
        let field = |i: usize| r[i].to_string();
        let parse_u32 = |i: usize, what: &str| {
            r[i].parse::<u32>().map_err(|_| CohortError::InvalidRecord {
                visit_id: visit_id.clone(),
                reason: format!("bad {what} {:?}", &r[i]),
            })
        };
        visits.push(VisitRecord {
            patient_id: field(0),
            visit_id: visit_id.clone(),
            arrival: parse_rfc3339(&r[2], &visit_id)?,
            age_years: parse_u32(3, "age_years")?,
            gender: field(4),
            marital_status: field(5),
            race: field(6),
            ethnic_group: field(7),
            language: field(8),
            insurance: field(9),
            esi_level: parse_u32(10, "esi_level")? as u8,
            icd_code: field(11),
            chief_complaint_text: field(12),
            visits_past_2_months: parse_u32(13, "visits_past_2_months")?,
            sdoh_texts: sdoh_by_visit.remove(&visit_id).unwrap_or_default(),
            vitals_raw: vitals_by_visit.remove(&visit_id).unwrap_or_default(),
        });
    }

    let gold_path = dir.join("gold.jsonl");
    let mut gold = BTreeMap::new();
    if gold_path.exists() {
        for line in BufReader::new(File::open(gold_path)?).lines() {
            let row: GoldRow = serde_json::from_str(&line?)?;
            gold.insert(
                row.visit_id,
                GoldCategories {
                    chief_complaint: row.chief_complaint,
                    sdoh: row.sdoh,
                },
            );
        }
    }

    let labels = super::label_returns(&visits)?;
    let realized = labels.values().filter(|&&b| b).count() as f64 / visits.len().max(1) as f64;
    Ok(GeneratedCohort {
        visits,
        gold,
        realized_return_rate: realized,
        bias: f64::NAN,
    })
}
