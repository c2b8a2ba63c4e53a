//! Raw visit records to model-ready feature matrix: vital averaging,
//! clinical binning, temporal features, missing-data policy, KNN
//! imputation, and one-hot / z-score encoding.

mod encode;
mod impute;

pub use encode::{
    read_matrix, write_matrix, ColumnKind, ColumnMeta, EncodeOutcome, Encoder, FeatureMatrix,
};
pub use impute::knn_impute;

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Timelike, Utc, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{VisitRecord, VitalReading};
use crate::tables;

#[derive(Debug, Error)]
pub enum HarmonizeError {
    #[error("non-finite vital value for kind {0}")]
    NonFiniteValue(String),
    #[error("invalid bin scheme {kind}: {reason}")]
    InvalidScheme { kind: String, reason: String },
    #[error("age {0} below the adult eligibility floor")]
    UnderageRecord(u32),
    #[error("column {0} not found")]
    UnknownColumn(String),
    #[error("column {column} still has {count} missing values at encode time")]
    MissingResidual { column: String, count: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One threshold of a binning scheme: values below `upper` (or equal, when
/// `inclusive`) and above every earlier threshold fall into `category`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinThreshold {
    pub upper: f64,
    pub inclusive: bool,
    pub category: String,
}

/// An ordered, exhaustive binning of the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinScheme {
    pub kind: String,
    pub thresholds: Vec<BinThreshold>,
    /// Category for values above the last threshold.
    pub top_category: String,
}

impl BinScheme {
    pub fn validate(&self) -> Result<(), HarmonizeError> {
        for w in self.thresholds.windows(2) {
            if w[1].upper <= w[0].upper {
                return Err(HarmonizeError::InvalidScheme {
                    kind: self.kind.clone(),
                    reason: "thresholds must be strictly increasing".into(),
                });
            }
        }
        if self.thresholds.is_empty() {
            return Err(HarmonizeError::InvalidScheme {
                kind: self.kind.clone(),
                reason: "at least one threshold required".into(),
            });
        }
        Ok(())
    }

    pub fn categories(&self) -> Vec<&str> {
        self.thresholds
            .iter()
            .map(|t| t.category.as_str())
            .chain(std::iter::once(self.top_category.as_str()))
            .collect()
    }
}

fn scheme(kind: &str, cuts: &[(f64, bool, &str)], top: &str) -> BinScheme {
    BinScheme {
        kind: kind.to_string(),
        thresholds: cuts
            .iter()
            .map(|(upper, inclusive, category)| BinThreshold {
                upper: *upper,
                inclusive: *inclusive,
                category: category.to_string(),
            })
            .collect(),
        top_category: top.to_string(),
    }
}

/// Standard clinical cutoffs: CDC adult BMI bands, ACC/AHA blood-pressure
/// stages, and the usual 60/100 bpm and 35/36.1/38 degree boundaries.
pub fn default_bin_schemes() -> Vec<BinScheme> {
    vec![
        scheme(
            "age",
            &[(30.0, true, "18_30"), (45.0, true, "31_45"), (60.0, true, "46_60")],
            "Over_60",
        ),
        scheme(
            "bmi",
            &[
                (18.5, false, "Underweight"),
                (25.0, false, "Normal Weight"),
                (30.0, false, "Overweight"),
            ],
            "Obese",
        ),
        scheme(
            "systolic_bp",
            &[(90.0, false, "Low"), (120.0, false, "Normal"), (130.0, false, "Elevated")],
            "Hypertension",
        ),
        scheme(
            "diastolic_bp",
            &[(60.0, false, "Low"), (80.0, false, "Normal"), (90.0, false, "Elevated")],
            "Hypertension",
        ),
        scheme(
            "heart_rate",
            &[(60.0, false, "Bradycardia"), (100.0, true, "Normal")],
            "Tachycardia",
        ),
        scheme(
            "temperature",
            &[
                (35.0, false, "Hypothermia"),
                (36.1, false, "Below Normal"),
                (38.0, true, "Normal"),
            ],
            "Fever",
        ),
    ]
}

/// Map a finite value to its unique category.
pub fn bin_clinical(scheme: &BinScheme, value: f64) -> Result<String, HarmonizeError> {
    if !value.is_finite() {
        return Err(HarmonizeError::NonFiniteValue(scheme.kind.clone()));
    }
    for t in &scheme.thresholds {
        if value < t.upper || (t.inclusive && value == t.upper) {
            return Ok(t.category.clone());
        }
    }
    Ok(scheme.top_category.clone())
}

/// Adult age bands. Ages below 18 violate the eligibility contract.
pub fn bin_age(age_years: u32) -> Result<&'static str, HarmonizeError> {
    match age_years {
        0..=17 => Err(HarmonizeError::UnderageRecord(age_years)),
        18..=30 => Ok("18_30"),
        31..=45 => Ok("31_45"),
        46..=60 => Ok("46_60"),
        _ => Ok("Over_60"),
    }
}

/// Arithmetic mean per vital kind. Kinds with no readings are simply absent.
pub fn average_vitals(
    vitals_raw: &[VitalReading],
) -> Result<BTreeMap<String, f64>, HarmonizeError> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in vitals_raw {
        if !r.value.is_finite() {
            return Err(HarmonizeError::NonFiniteValue(r.kind.clone()));
        }
        let e = sums.entry(&r.kind).or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (s, n))| (k.to_string(), s / n as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalFeatures {
    pub hour_of_day: u8,
    pub day_of_month: u8,
    pub month: u8,
    pub is_weekend: bool,
}

/// Calendar decomposition of an arrival timestamp.
pub fn derive_temporal(arrival: DateTime<Utc>) -> TemporalFeatures {
    TemporalFeatures {
        hour_of_day: arrival.hour() as u8,
        day_of_month: arrival.day() as u8,
        month: arrival.month() as u8,
        is_weekend: matches!(arrival.weekday(), Weekday::Sat | Weekday::Sun),
    }
}

/// Column-oriented intermediate table between raw records and the encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Categorical(Vec<Option<String>>),
    Continuous(Vec<Option<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub data: ColumnData,
}

impl RawColumn {
    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Categorical(v) => v.len(),
            ColumnData::Continuous(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn missing_fraction(&self) -> f64 {
        let missing = match &self.data {
            ColumnData::Categorical(v) => v.iter().filter(|c| c.is_none()).count(),
            ColumnData::Continuous(v) => v.iter().filter(|c| c.is_none()).count(),
        };
        missing as f64 / self.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut RawColumn> {
        self.columns.iter_mut().find(|c| c.name == name)
    }
}

/// Sentinel strings treated as missing answers.
pub const MISSING_SENTINELS: [&str; 2] = ["Unknown", "Missing Response"];

/// Recode sentinel categorical answers to missing markers. Returns the
/// number of recoded cells.
pub fn recode_unknown(table: &mut RawTable) -> usize {
    let mut recoded = 0;
    for col in &mut table.columns {
        if let ColumnData::Categorical(values) = &mut col.data {
            for cell in values.iter_mut() {
                if let Some(v) = cell {
                    if MISSING_SENTINELS.contains(&v.as_str()) {
                        *cell = None;
                        recoded += 1;
                    }
                }
            }
        }
    }
    recoded
}

/// Fold categories rarer than `min_fraction` (over observed cells) into a
/// single replacement category.
pub fn collapse_low_frequency(
    table: &mut RawTable,
    column: &str,
    min_fraction: f64,
    replacement: &str,
) -> Result<usize, HarmonizeError> {
    let col = table
        .column_mut(column)
        .ok_or_else(|| HarmonizeError::UnknownColumn(column.to_string()))?;
    let ColumnData::Categorical(values) = &mut col.data else {
        return Err(HarmonizeError::InvalidArgument(format!(
            "column {column} is not categorical"
        )));
    };
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut observed = 0usize;
    for v in values.iter().flatten() {
        *counts.entry(v.as_str()).or_insert(0) += 1;
        observed += 1;
    }
    let rare: Vec<String> = counts
        .iter()
        .filter(|(_, &n)| (n as f64) < min_fraction * observed as f64)
        .map(|(name, _)| name.to_string())
        .collect();
    let mut collapsed = 0;
    for v in values.iter_mut().flatten() {
        if rare.iter().any(|r| r == v) {
            *v = replacement.to_string();
            collapsed += 1;
        }
    }
    Ok(collapsed)
}

/// Drop categorical columns whose missing fraction strictly exceeds
/// `threshold`, then fill surviving categorical gaps with the literal
/// `Unknown` category. Returns the dropped column names.
pub fn drop_sparse_categoricals(table: &mut RawTable, threshold: f64) -> Vec<String> {
    let mut dropped = Vec::new();
    table.columns.retain(|col| {
        let is_cat = matches!(col.data, ColumnData::Categorical(_));
        if is_cat && col.missing_fraction() > threshold {
            dropped.push(col.name.clone());
            false
        } else {
            true
        }
    });
    for col in &mut table.columns {
        if let ColumnData::Categorical(values) = &mut col.data {
            for cell in values.iter_mut() {
                if cell.is_none() {
                    *cell = Some(tables::UNKNOWN.to_string());
                }
            }
        }
    }
    dropped
}

/// Harmonization settings consumed by the pipeline; serializable as the
/// stage's JSON config document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmonizeConfig {
    #[serde(default = "default_bin_schemes")]
    pub bin_schemes: Vec<BinScheme>,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default = "default_drop_threshold")]
    pub drop_threshold: f64,
    /// (column, min_fraction, replacement) folds applied before the drop
    /// rule.
    #[serde(default = "default_collapse_rules")]
    pub collapse: Vec<(String, f64, String)>,
}

fn default_knn_k() -> usize {
    5
}

fn default_drop_threshold() -> f64 {
    0.20
}

fn default_collapse_rules() -> Vec<(String, f64, String)> {
    vec![("sexual_orientation".to_string(), 0.005, "Other".to_string())]
}

impl Default for HarmonizeConfig {
    fn default() -> Self {
        HarmonizeConfig {
            bin_schemes: default_bin_schemes(),
            knn_k: default_knn_k(),
            drop_threshold: default_drop_threshold(),
            collapse: default_collapse_rules(),
        }
    }
}

impl HarmonizeConfig {
    pub fn scheme(&self, kind: &str) -> Result<&BinScheme, HarmonizeError> {
        self.bin_schemes
            .iter()
            .find(|s| s.kind == kind)
            .ok_or_else(|| HarmonizeError::InvalidScheme {
                kind: kind.to_string(),
                reason: "missing from config".into(),
            })
    }
}

/// Raw table plus the row identity needed downstream.
#[derive(Debug, Clone)]
pub struct AssembledTable {
    pub table: RawTable,
    pub visit_ids: Vec<String>,
    pub patient_ids: Vec<String>,
}

/// Build the pre-encoding table from visit records: averaged + binned
/// vitals, temporal features, demographics, and (optionally) extracted text
/// categories keyed `visit_id -> feature -> category`.
pub fn assemble(
    visits: &[VisitRecord],
    extracted: Option<&BTreeMap<String, BTreeMap<String, String>>>,
    config: &HarmonizeConfig,
) -> Result<AssembledTable, HarmonizeError> {
    let n = visits.len();
    let mut continuous: Vec<(String, Vec<Option<f64>>)> = [
        "visits_past_2_months",
        "esi_level",
        "hour_of_day",
        "day_of_month",
        "month",
    ]
    .iter()
    .map(|name| (name.to_string(), Vec::with_capacity(n)))
    .collect();
    for kind in tables::VITAL_KINDS {
        continuous.push((kind.to_string(), Vec::with_capacity(n)));
    }
    let mut categorical: Vec<(String, Vec<Option<String>>)> = tables::DEMOGRAPHIC_FEATURES
        .iter()
        .map(|name| (name.to_string(), Vec::with_capacity(n)))
        .collect();
    categorical.push(("age_band".to_string(), Vec::with_capacity(n)));
    categorical.push(("is_weekend".to_string(), Vec::with_capacity(n)));
    for kind in tables::VITAL_KINDS {
        categorical.push((tables::vital_category_feature(kind), Vec::with_capacity(n)));
    }
    let extracted_features: Vec<String> = if extracted.is_some() {
        std::iter::once("chief_complaint".to_string())
            .chain(tables::SDOH_KINDS.iter().map(|k| k.to_string()))
            .collect()
    } else {
        Vec::new()
    };
    for f in &extracted_features {
        categorical.push((f.clone(), Vec::with_capacity(n)));
    }

    let mut visit_ids = Vec::with_capacity(n);
    let mut patient_ids = Vec::with_capacity(n);
    for v in visits {
        visit_ids.push(v.visit_id.clone());
        patient_ids.push(v.patient_id.clone());
        let temporal = derive_temporal(v.arrival);
        let means = average_vitals(&v.vitals_raw)?;

        for (name, col) in continuous.iter_mut() {
            let value = match name.as_str() {
                "visits_past_2_months" => Some(v.visits_past_2_months as f64),
                "esi_level" => Some(v.esi_level as f64),
                "hour_of_day" => Some(temporal.hour_of_day as f64),
                "day_of_month" => Some(temporal.day_of_month as f64),
                "month" => Some(temporal.month as f64),
                kind => means.get(kind).copied(),
            };
            col.push(value);
        }
        for (name, col) in categorical.iter_mut() {
            let value: Option<String> = match name.as_str() {
                "gender" => Some(v.gender.clone()),
                "marital_status" => Some(v.marital_status.clone()),
                "race" => Some(v.race.clone()),
                "ethnic_group" => Some(v.ethnic_group.clone()),
                "language" => Some(v.language.clone()),
                "insurance" => Some(v.insurance.clone()),
                "age_band" => Some(bin_age(v.age_years)?.to_string()),
                "is_weekend" => Some(temporal.is_weekend.to_string()),
                name if name.ends_with("_category") => {
                    let kind = name.trim_end_matches("_category");
                    match means.get(kind) {
                        Some(mean) => Some(bin_clinical(config.scheme(kind)?, *mean)?),
                        None => None,
                    }
                }
                name => extracted
                    .and_then(|e| e.get(&v.visit_id))
                    .and_then(|cats| cats.get(name))
                    .cloned(),
            };
            col.push(value);
        }
    }

    let mut columns = Vec::new();
    for (name, data) in continuous {
        columns.push(RawColumn {
            name,
            data: ColumnData::Continuous(data),
        });
    }
    for (name, data) in categorical {
        columns.push(RawColumn {
            name,
            data: ColumnData::Categorical(data),
        });
    }
    Ok(AssembledTable {
        table: RawTable { columns },
        visit_ids,
        patient_ids,
    })
}
