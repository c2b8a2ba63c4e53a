//! Narrative reliability assessment: every sidecar claim is cross-checked
//! against the patient record, cohort statistics, attribution values and
//! the prediction, across four dimensions, with severities assigned by a
//! fixed rule table.
//!
//! Severity rules: a numeric deviation of at most one unit at display
//! precision (risk class unchanged) is minor; larger numeric deviations,
//! direction/ordering contradictions and internal inconsistencies are
//! moderate; risk-class mismatches and fabricated entities are severe.

pub mod inject;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{CohortStatistics, RiskGroup};
use crate::explain::{
    classify_risk, Claim, ClaimKind, ClaimSidecar, ClaimSource, Narrative, RelativePosition,
    RiskPolarity, StatedValue,
};

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("missing sources for patient {0}")]
    MissingSources(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Minor,
    Moderate,
    Severe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Factual,
    ClinicalConsistency,
    Coherence,
    Attribution,
}

/// One detected discrepancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub patient_id: String,
    pub claim_id: Option<String>,
    pub dimension: Dimension,
    pub severity: Severity,
    pub expected: String,
    pub stated: String,
}

/// Ground truth a narrative is checked against.
#[derive(Debug, Clone)]
pub struct Sources {
    /// Raw numeric feature profile of the patient.
    pub patient_values: BTreeMap<String, f64>,
    pub cohort_stats: CohortStatistics,
    /// Margin-scale attribution per narrative-eligible feature.
    pub shap: BTreeMap<String, f64>,
    pub probability: f64,
    pub threshold: f64,
}

/// Direction rulebase: expected risk association for elevated values of a
/// feature. Direction claims on features absent from the rulebase are
/// skipped.
pub type Rulebase = BTreeMap<String, RiskPolarity>;

/// Rulebase matching the synthetic cohort's injected signal.
pub fn default_rulebase() -> Rulebase {
    let mut r = Rulebase::new();
    r.insert("visits_past_2_months".into(), RiskPolarity::Increasing);
    r.insert("esi_level".into(), RiskPolarity::Decreasing);
    r.insert("hour_of_day".into(), RiskPolarity::Increasing);
    r.insert("day_of_month".into(), RiskPolarity::Increasing);
    r.insert("month".into(), RiskPolarity::Increasing);
    r
}

fn round_at(v: f64, precision: u8) -> f64 {
    let scale = 10f64.powi(precision as i32);
    (v * scale).round() / scale
}

/// Resolve a cohort-stats key of the form `{group}/{feature}/mean`.
fn resolve_cohort_key(stats: &CohortStatistics, key: &str) -> Option<f64> {
    let mut parts = key.splitn(3, '/');
    let group = match parts.next()? {
        "low" => RiskGroup::Low,
        "high" => RiskGroup::High,
        _ => return None,
    };
    let feature = parts.next()?;
    match parts.next()? {
        "mean" => Some(stats.group(group)?.numeric.get(feature)?.mean),
        "std" => Some(stats.group(group)?.numeric.get(feature)?.std),
        _ => None,
    }
}

fn numeric_severity(stated: f64, expected: f64, precision: u8) -> Severity {
    let unit = 10f64.powi(-(precision as i32));
    let diff = (round_at(stated, precision) - round_at(expected, precision)).abs();
    if diff <= unit + 1e-9 {
        Severity::Minor
    } else {
        Severity::Moderate
    }
}

fn finding(
    sidecar: &ClaimSidecar,
    claim: &Claim,
    dimension: Dimension,
    severity: Severity,
    expected: String,
    stated: String,
) -> Finding {
    Finding {
        patient_id: sidecar.patient_id.clone(),
        claim_id: Some(claim.claim_id.clone()),
        dimension,
        severity,
        expected,
        stated,
    }
}

/// Factual accuracy: numeric claims about the patient record and cohort
/// statistics, and ordering claims relating the two. Attribution-sourced
/// values are checked in their own dimension.
pub fn check_factual(sidecar: &ClaimSidecar, sources: &Sources) -> Vec<Finding> {
    let mut findings = Vec::new();
    for claim in &sidecar.claims {
        match (&claim.kind, &claim.source) {
            (ClaimKind::Numeric, ClaimSource::Patient) => {
                let StatedValue::Number(stated) = claim.stated else { continue };
                match sources.patient_values.get(&claim.source_key) {
                    Some(&expected) => {
                        if round_at(stated, claim.display_precision)
                            != round_at(expected, claim.display_precision)
                        {
                            findings.push(finding(
                                sidecar,
                                claim,
                                Dimension::Factual,
                                numeric_severity(stated, expected, claim.display_precision),
                                format!("{expected:.*}", claim.display_precision as usize),
                                claim.display.clone(),
                            ));
                        }
                    }
                    None => findings.push(finding(
                        sidecar,
                        claim,
                        Dimension::Factual,
                        Severity::Severe,
                        format!("no record field {:?}", claim.source_key),
                        claim.display.clone(),
                    )),
                }
            }
            (ClaimKind::Numeric, ClaimSource::CohortStats) => {
                let StatedValue::Number(stated) = claim.stated else { continue };
                match resolve_cohort_key(&sources.cohort_stats, &claim.source_key) {
                    Some(expected) => {
                        if round_at(stated, claim.display_precision)
                            != round_at(expected, claim.display_precision)
                        {
                            findings.push(finding(
                                sidecar,
                                claim,
                                Dimension::Factual,
                                numeric_severity(stated, expected, claim.display_precision),
                                format!("{expected:.*}", claim.display_precision as usize),
                                claim.display.clone(),
                            ));
                        }
                    }
                    None => findings.push(finding(
                        sidecar,
                        claim,
                        Dimension::Factual,
                        Severity::Severe,
                        format!("unresolvable statistic {:?}", claim.source_key),
                        claim.display.clone(),
                    )),
                }
            }
            (ClaimKind::Ordering, _) => {
                let StatedValue::Ordering(stated) = claim.stated else { continue };
                let feature = claim.source_key.split('/').nth(1).unwrap_or_default();
                let patient = sources.patient_values.get(feature).copied();
                let mean = resolve_cohort_key(&sources.cohort_stats, &claim.source_key);
                match (patient, mean) {
                    (Some(p), Some(m)) => {
                        let expected = if p >= m {
                            RelativePosition::Above
                        } else {
                            RelativePosition::Below
                        };
                        if expected != stated {
                            findings.push(finding(
                                sidecar,
                                claim,
                                Dimension::Factual,
                                Severity::Moderate,
                                format!("{expected:?}"),
                                claim.display.clone(),
                            ));
                        }
                    }
                    _ => findings.push(finding(
                        sidecar,
                        claim,
                        Dimension::Factual,
                        Severity::Severe,
                        format!("unresolvable comparison {:?}", claim.source_key),
                        claim.display.clone(),
                    )),
                }
            }
            _ => {}
        }
    }
    findings
}

/// Clinical consistency: direction claims must match the attribution sign,
/// gated on the feature having a rulebase entry. Features without a rule
/// are skipped (and reported back for logging).
pub fn check_consistency(
    sidecar: &ClaimSidecar,
    rulebase: &Rulebase,
    sources: &Sources,
) -> (Vec<Finding>, Vec<String>) {
    let mut findings = Vec::new();
    let mut skipped = Vec::new();
    for claim in &sidecar.claims {
        if claim.kind != ClaimKind::Direction {
            continue;
        }
        let StatedValue::Polarity(stated) = claim.stated else { continue };
        if !rulebase.contains_key(&claim.source_key) {
            skipped.push(claim.source_key.clone());
            continue;
        }
        let Some(&phi) = sources.shap.get(&claim.source_key) else {
            skipped.push(claim.source_key.clone());
            continue;
        };
        let expected = if phi >= 0.0 {
            RiskPolarity::Increasing
        } else {
            RiskPolarity::Decreasing
        };
        if expected != stated {
            findings.push(finding(
                sidecar,
                claim,
                Dimension::ClinicalConsistency,
                Severity::Moderate,
                format!("{expected:?} (phi {phi:+.4})"),
                claim.display.clone(),
            ));
        }
    }
    (findings, skipped)
}

/// Logical coherence: the stated risk class must equal the classification
/// of the prediction, and duplicate claims about one source must agree.
pub fn check_coherence(
    _narrative: &Narrative,
    sidecar: &ClaimSidecar,
    sources: &Sources,
) -> Vec<Finding> {
    let mut findings = Vec::new();
    let expected_class = classify_risk(sources.probability, sources.threshold);
    for claim in &sidecar.claims {
        if claim.kind == ClaimKind::RiskClass {
            let StatedValue::Class(stated) = claim.stated else { continue };
            if stated != expected_class {
                findings.push(finding(
                    sidecar,
                    claim,
                    Dimension::Coherence,
                    Severity::Severe,
                    format!("{expected_class:?}"),
                    claim.display.clone(),
                ));
            }
        }
    }
    // Duplicate numeric claims about one source key must agree.
    let mut first_seen: BTreeMap<(&ClaimSource, &str), (&Claim, f64)> = BTreeMap::new();
    for claim in &sidecar.claims {
        if claim.kind != ClaimKind::Numeric {
            continue;
        }
        let StatedValue::Number(v) = claim.stated else { continue };
        let key = (&claim.source, claim.source_key.as_str());
        match first_seen.get(&key) {
            None => {
                first_seen.insert(key, (claim, v));
            }
            Some((_, prior)) => {
                let precision = claim.display_precision;
                if round_at(*prior, precision) != round_at(v, precision) {
                    findings.push(finding(
                        sidecar,
                        claim,
                        Dimension::Coherence,
                        Severity::Moderate,
                        format!("{prior} stated earlier for the same source"),
                        claim.display.clone(),
                    ));
                }
            }
        }
    }
    findings
}

/// Attribution accuracy: the named factor set must equal the true top-k by
/// |phi| (membership errors severe, order errors moderate) and stated
/// magnitudes must match at display precision.
pub fn check_attribution(sidecar: &ClaimSidecar, sources: &Sources, k: usize) -> Vec<Finding> {
    let mut findings = Vec::new();
    let named: Vec<&Claim> = sidecar
        .claims
        .iter()
        .filter(|c| c.kind == ClaimKind::Numeric && c.source == ClaimSource::Shap)
        .collect();
    if named.is_empty() {
        return findings;
    }
    let mut truth: Vec<(&String, &f64)> = sources.shap.iter().collect();
    truth.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap()
            .then(a.0.cmp(b.0))
    });
    let expected: Vec<&str> = truth
        .iter()
        .take(k.min(truth.len()))
        .map(|(name, _)| name.as_str())
        .collect();
    let named_features: Vec<&str> = named.iter().map(|c| c.source_key.as_str()).collect();

    let mut named_sorted = named_features.clone();
    named_sorted.sort_unstable();
    let mut expected_sorted = expected.clone();
    expected_sorted.sort_unstable();
    if named_sorted != expected_sorted {
        findings.push(Finding {
            patient_id: sidecar.patient_id.clone(),
            claim_id: None,
            dimension: Dimension::Attribution,
            severity: Severity::Severe,
            expected: format!("top factors {expected:?}"),
            stated: format!("named factors {named_features:?}"),
        });
        return findings;
    }
    if named_features != expected {
        findings.push(Finding {
            patient_id: sidecar.patient_id.clone(),
            claim_id: None,
            dimension: Dimension::Attribution,
            severity: Severity::Moderate,
            expected: format!("order {expected:?}"),
            stated: format!("order {named_features:?}"),
        });
    }
    for claim in named {
        let StatedValue::Number(stated) = claim.stated else { continue };
        let Some(&phi) = sources.shap.get(&claim.source_key) else { continue };
        // Magnitude at display precision; the sign is consistency territory.
        if round_at(stated.abs(), claim.display_precision)
            != round_at(phi.abs(), claim.display_precision)
        {
            findings.push(finding(
                sidecar,
                claim,
                Dimension::Attribution,
                numeric_severity(stated.abs(), phi.abs(), claim.display_precision),
                format!("{:+.*}", claim.display_precision as usize, phi),
                claim.display.clone(),
            ));
        }
    }
    findings
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NarrativeAssessment {
    pub patient_id: String,
    pub pass: bool,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub n: usize,
    pub failing: usize,
    /// failing / n, exactly.
    pub error_rate: f64,
    pub findings: Vec<Finding>,
    pub per_narrative: Vec<NarrativeAssessment>,
    pub dimension_counts: BTreeMap<String, usize>,
    /// Free-form space for a human reviewer's sign-off.
    pub reviewer_notes: Option<String>,
}

/// Run all four checks on one narrative/sidecar pair.
pub fn assess_one(
    narrative: &Narrative,
    sidecar: &ClaimSidecar,
    sources: &Sources,
    rulebase: &Rulebase,
    k: usize,
) -> Vec<Finding> {
    let mut findings = check_factual(sidecar, sources);
    let (consistency, _skipped) = check_consistency(sidecar, rulebase, sources);
    findings.extend(consistency);
    findings.extend(check_coherence(narrative, sidecar, sources));
    findings.extend(check_attribution(sidecar, sources, k));
    findings
}

/// Assess a batch and aggregate the error rate (fraction of narratives with
/// at least one finding).
pub fn assess_batch(
    pairs: &[(Narrative, ClaimSidecar)],
    sources_by_patient: &BTreeMap<String, Sources>,
    rulebase: &Rulebase,
    k: usize,
) -> Result<AssessmentReport, AssessError> {
    if pairs.is_empty() {
        return Err(AssessError::EmptyBatch);
    }
    let mut all_findings = Vec::new();
    let mut per_narrative = Vec::with_capacity(pairs.len());
    let mut dimension_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut failing = 0usize;
    for (narrative, sidecar) in pairs {
        let sources = sources_by_patient
            .get(&sidecar.patient_id)
            .ok_or_else(|| AssessError::MissingSources(sidecar.patient_id.clone()))?;
        let findings = assess_one(narrative, sidecar, sources, rulebase, k);
        let pass = findings.is_empty();
        if !pass {
            failing += 1;
        }
        for f in &findings {
            *dimension_counts
                .entry(format!("{:?}", f.dimension))
                .or_insert(0) += 1;
        }
        per_narrative.push(NarrativeAssessment {
            patient_id: sidecar.patient_id.clone(),
            pass,
            findings: findings.clone(),
        });
        all_findings.extend(findings);
    }
    Ok(AssessmentReport {
        n: pairs.len(),
        failing,
        error_rate: failing as f64 / pairs.len() as f64,
        findings: all_findings,
        per_narrative,
        dimension_counts,
        reviewer_notes: None,
    })
}

/// Markdown summary table for the report.
pub fn report_markdown(report: &AssessmentReport) -> String {
    let mut out = String::from("# Narrative Reliability Assessment\n\n");
    out.push_str(&format!(
        "Narratives assessed: {}\nNarratives with findings: {}\nError rate: {:.2}\n\n",
        report.n, report.failing, report.error_rate
    ));
    out.push_str("| Patient | Claim | Dimension | Severity | Expected | Stated |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for f in &report.findings {
        out.push_str(&format!(
            "| {} | {} | {:?} | {:?} | {} | {} |\n",
            f.patient_id,
            f.claim_id.as_deref().unwrap_or("-"),
            f.dimension,
            f.severity,
            f.expected,
            f.stated
        ));
    }
    if report.findings.is_empty() {
        out.push_str("| - | - | - | - | - | - |\n");
    }
    out.push_str("\nReviewer notes: _pending human sign-off_\n");
    out
}
