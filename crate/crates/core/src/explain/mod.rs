//! Patient-level narrative explanations: risk classification, context
//! bundles built from cohort statistics, deterministic templated prose, a
//! machine-checkable claim sidecar, and an optional LLM polish pass under a
//! numeric-preservation contract.

mod narrative;
mod polish;

pub use narrative::{
    generate_narrative, numeric_tokens, verify_token_bijection, Claim, ClaimKind, ClaimSidecar,
    ClaimSource, Narrative, RelativePosition, RiskPolarity, StatedValue,
};
pub use polish::{llm_polish, PolishReport};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{CohortStatistics, MeanStd, RiskGroup};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("probability {0} outside [0,1]")]
    InvalidProbability(f64),
    #[error("narrative and sidecar disagree: {0}")]
    TokenMismatch(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// High iff the predicted probability reaches the threshold.
pub fn classify_risk(probability: f64, threshold: f64) -> RiskGroup {
    if probability >= threshold {
        RiskGroup::High
    } else {
        RiskGroup::Low
    }
}

/// Human-facing names for narrative factors. Spelled without digits so the
/// narrative's numeric tokens stay claim-backed.
pub fn display_name(feature: &str) -> String {
    match feature {
        "visits_past_2_months" => "Number of Visits in Past Two Months".to_string(),
        "esi_level" => "Acuity Level (ESI)".to_string(),
        "hour_of_day" => "Hour of Day".to_string(),
        "day_of_month" => "Day of Month".to_string(),
        "month" => "Month of Year".to_string(),
        "age_years" => "Age in Years".to_string(),
        "systolic_bp" => "Systolic Blood Pressure".to_string(),
        "diastolic_bp" => "Diastolic Blood Pressure".to_string(),
        "heart_rate" => "Heart Rate".to_string(),
        "temperature" => "Body Temperature".to_string(),
        "bmi" => "Body Mass Index".to_string(),
        other => other.replace('_', " "),
    }
}

/// One explanation factor: a feature, its attribution, the patient's raw
/// value and both risk groups' statistics where available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorContext {
    pub feature: String,
    pub display_name: String,
    pub phi: f64,
    pub patient_value: Option<f64>,
    pub low: Option<MeanStd>,
    pub high: Option<MeanStd>,
    /// Observed value range among predicted-high-risk training samples.
    pub high_risk_range: Option<(f64, f64)>,
}

/// Everything the narrative generator needs for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub patient_id: String,
    pub probability: f64,
    pub risk: RiskGroup,
    /// Top-k factors by |phi|, name-tie-broken, over the eligible features.
    pub factors: Vec<FactorContext>,
    /// True when any comparison slice is missing; the narrative must omit
    /// (never invent) those comparisons.
    pub partial: bool,
}

/// Assemble the context bundle for one patient.
///
/// `shap` maps eligible feature names to margin-scale attributions,
/// `patient_values` holds the raw (unencoded) numeric profile, and `ranges`
/// the per-feature value ranges observed among high-risk predictions.
#[allow(clippy::too_many_arguments)]
pub fn build_context(
    patient_id: &str,
    patient_values: &BTreeMap<String, f64>,
    probability: f64,
    stats: &CohortStatistics,
    shap: &BTreeMap<String, f64>,
    ranges: &BTreeMap<String, (f64, f64)>,
    k: usize,
    threshold: f64,
) -> Result<ContextBundle, ExplainError> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(ExplainError::InvalidProbability(probability));
    }
    let mut ordered: Vec<(&String, &f64)> = shap.iter().collect();
    ordered.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap()
            .then(a.0.cmp(b.0))
    });
    let take = k.min(ordered.len());

    let mut partial = false;
    let mut factors = Vec::with_capacity(take);
    for (feature, phi) in ordered.into_iter().take(take) {
        let low = stats
            .group(RiskGroup::Low)
            .and_then(|g| g.numeric.get(feature))
            .copied();
        let high = stats
            .group(RiskGroup::High)
            .and_then(|g| g.numeric.get(feature))
            .copied();
        let patient_value = patient_values.get(feature).copied();
        if low.is_none() || high.is_none() || patient_value.is_none() {
            partial = true;
        }
        factors.push(FactorContext {
            feature: feature.clone(),
            display_name: display_name(feature),
            phi: *phi,
            patient_value,
            low,
            high,
            high_risk_range: ranges.get(feature).copied(),
        });
    }
    Ok(ContextBundle {
        patient_id: patient_id.to_string(),
        probability,
        risk: classify_risk(probability, threshold),
        factors,
        partial,
    })
}
