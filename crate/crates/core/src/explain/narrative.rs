//! Deterministic narrative templating and the claim sidecar.
//!
//! Every numeric token printed in the narrative is mirrored by exactly one
//! numeric claim in the sidecar (and vice versa); direction, ordering and
//! risk-class wording is mirrored by word-valued claims. The text itself
//! never carries a digit outside a claim-backed token, which is why spelled
//! numbers ("thirty days") appear in the fixed prose.

use serde::{Deserialize, Serialize};

use super::{ContextBundle, ExplainError};
use crate::cohort::RiskGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimKind {
    Numeric,
    Direction,
    Ordering,
    RiskClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimSource {
    Patient,
    CohortStats,
    Shap,
    Prediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskPolarity {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativePosition {
    Above,
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum StatedValue {
    Number(f64),
    Polarity(RiskPolarity),
    Ordering(RelativePosition),
    Class(RiskGroup),
}

/// One machine-checkable assertion made by the narrative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: String,
    pub kind: ClaimKind,
    pub source: ClaimSource,
    /// Where to look the truth up: a feature name, `{group}/{feature}/mean`,
    /// or `risk_class`.
    pub source_key: String,
    pub stated: StatedValue,
    pub display_precision: u8,
    /// Exact token or phrase as rendered in the narrative.
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSidecar {
    pub patient_id: String,
    pub claims: Vec<Claim>,
}

impl ClaimSidecar {
    pub fn claim(&self, id: &str) -> Option<&Claim> {
        self.claims.iter().find(|c| c.claim_id == id)
    }

    pub fn numeric_displays(&self) -> Vec<&str> {
        self.claims
            .iter()
            .filter(|c| c.kind == ClaimKind::Numeric)
            .map(|c| c.display.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub patient_id: String,
    pub text: String,
}

fn fmt_value(v: f64, precision: u8) -> String {
    format!("{v:.*}", precision as usize)
}

fn fmt_signed(v: f64, precision: u8) -> String {
    format!("{v:+.*}", precision as usize)
}

fn round_at(v: f64, precision: u8) -> f64 {
    let scale = 10f64.powi(precision as i32);
    (v * scale).round() / scale
}

/// Standalone numeric tokens in a text: optionally signed decimal literals
/// not glued to word characters (so `P000123` and `18_30` contribute none).
pub fn numeric_tokens(text: &str) -> Vec<String> {
    let bytes: Vec<char> = text.chars().collect();
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let signed = (c == '+' || c == '-')
            && i + 1 < bytes.len()
            && bytes[i + 1].is_ascii_digit();
        if !(c.is_ascii_digit() || signed) {
            i += 1;
            continue;
        }
        // Must not ride on the tail of a word (identifier, id, unit); skip
        // past the sign or digit and the rest of the glued run.
        if i > 0 && is_word(bytes[i - 1]) {
            i += 1;
            while i < bytes.len() && is_word(bytes[i]) {
                i += 1;
            }
            continue;
        }
        let start = i;
        if signed {
            i += 1;
        }
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i + 1 < bytes.len() && bytes[i] == '.' && bytes[i + 1].is_ascii_digit() {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
        // Reject tokens glued to a following word character ("18_30").
        if i < bytes.len() && is_word(bytes[i]) {
            while i < bytes.len() && is_word(bytes[i]) {
                i += 1;
            }
            continue;
        }
        out.push(bytes[start..i].iter().collect());
    }
    out
}

/// Check the numeric-token bijection between a narrative text and its
/// sidecar: same multiset on both sides.
pub fn verify_token_bijection(text: &str, sidecar: &ClaimSidecar) -> Result<(), ExplainError> {
    let mut in_text = numeric_tokens(text);
    let mut in_claims: Vec<String> = sidecar
        .numeric_displays()
        .iter()
        .map(|s| s.to_string())
        .collect();
    in_text.sort_unstable();
    in_claims.sort_unstable();
    if in_text != in_claims {
        return Err(ExplainError::TokenMismatch(format!(
            "text tokens {in_text:?} vs claimed {in_claims:?}"
        )));
    }
    Ok(())
}

fn risk_phrase(risk: RiskGroup) -> &'static str {
    match risk {
        RiskGroup::High => "High Risk",
        RiskGroup::Low => "Low Risk",
    }
}

/// Render the narrative for a context bundle and record every checkable
/// statement in the sidecar. Pure function: identical bundles produce
/// identical bytes.
pub fn generate_narrative(bundle: &ContextBundle) -> (Narrative, ClaimSidecar) {
    let mut claims = Vec::new();
    let mut claim_seq = 0usize;
    let mut next_id = || {
        let id = format!("c{claim_seq:02}");
        claim_seq += 1;
        id
    };

    let mut text = String::new();
    text.push_str(&format!("# Patient Risk Report: {}\n\n", bundle.patient_id));

    // Section 1: risk classification.
    text.push_str("## Patient Risk Classification\n\n");
    let phrase = risk_phrase(bundle.risk);
    text.push_str(&format!(
        "Based on the model output and SHAP analysis, patient {} has been \
         classified as **{phrase}** for returning to the emergency department \
         with a mental health emergency within thirty days of this encounter.\n\n",
        bundle.patient_id
    ));
    claims.push(Claim {
        claim_id: next_id(),
        kind: ClaimKind::RiskClass,
        source: ClaimSource::Prediction,
        source_key: "risk_class".into(),
        stated: StatedValue::Class(bundle.risk),
        display_precision: 0,
        display: phrase.to_string(),
    });

    // Section 2: top factors with signed contributions.
    text.push_str("## Risk Assessment Summary\n\n");
    if bundle.factors.is_empty() {
        text.push_str("No individual factors are highlighted for this prediction.\n\n");
    } else {
        text.push_str("Key factors behind this classification:\n\n");
        for f in &bundle.factors {
            let display = fmt_signed(f.phi, 2);
            text.push_str(&format!(
                "- {}: SHAP Value Contribution: {display}.\n",
                f.display_name
            ));
            claims.push(Claim {
                claim_id: next_id(),
                kind: ClaimKind::Numeric,
                source: ClaimSource::Shap,
                source_key: f.feature.clone(),
                stated: StatedValue::Number(round_at(f.phi, 2)),
                display_precision: 2,
                display,
            });
        }
        text.push('\n');
    }

    // Section 3: direction analysis.
    if !bundle.factors.is_empty() {
        text.push_str("## Analysis\n\n");
        for f in &bundle.factors {
            let polarity = if f.phi >= 0.0 {
                RiskPolarity::Increasing
            } else {
                RiskPolarity::Decreasing
            };
            let word = match polarity {
                RiskPolarity::Increasing => "increased",
                RiskPolarity::Decreasing => "decreased",
            };
            text.push_str(&format!(
                "- {}: this factor {word} the predicted return risk for this patient.\n",
                f.display_name
            ));
            claims.push(Claim {
                claim_id: next_id(),
                kind: ClaimKind::Direction,
                source: ClaimSource::Shap,
                source_key: f.feature.clone(),
                stated: StatedValue::Polarity(polarity),
                display_precision: 0,
                display: word.to_string(),
            });
        }
        text.push('\n');
    }

    // Section 4: comparison against the patient's risk group.
    let group_word = match bundle.risk {
        RiskGroup::High => "high",
        RiskGroup::Low => "low",
    };
    let mut comparison_lines = Vec::new();
    for f in &bundle.factors {
        let group_stats = match bundle.risk {
            RiskGroup::High => f.high,
            RiskGroup::Low => f.low,
        };
        let (Some(value), Some(stats)) = (f.patient_value, group_stats) else {
            continue; // partial bundle: omit, never invent
        };
        let value_display = fmt_value(value, 1);
        let mean_display = fmt_value(stats.mean, 1);
        let position = if value >= stats.mean {
            RelativePosition::Above
        } else {
            RelativePosition::Below
        };
        let position_word = match position {
            RelativePosition::Above => "above",
            RelativePosition::Below => "below",
        };
        comparison_lines.push(format!(
            "- {}: the recorded value {value_display} is {position_word} the \
             {group_word}-risk group average of {mean_display}.\n",
            f.display_name
        ));
        claims.push(Claim {
            claim_id: next_id(),
            kind: ClaimKind::Numeric,
            source: ClaimSource::Patient,
            source_key: f.feature.clone(),
            stated: StatedValue::Number(round_at(value, 1)),
            display_precision: 1,
            display: value_display,
        });
        claims.push(Claim {
            claim_id: next_id(),
            kind: ClaimKind::Ordering,
            source: ClaimSource::CohortStats,
            source_key: format!("{group_word}/{}/mean", f.feature),
            stated: StatedValue::Ordering(position),
            display_precision: 0,
            display: position_word.to_string(),
        });
        claims.push(Claim {
            claim_id: next_id(),
            kind: ClaimKind::Numeric,
            source: ClaimSource::CohortStats,
            source_key: format!("{group_word}/{}/mean", f.feature),
            stated: StatedValue::Number(round_at(stats.mean, 1)),
            display_precision: 1,
            display: mean_display,
        });
    }
    if !comparison_lines.is_empty() {
        text.push_str("## Population Comparison\n\n");
        for line in comparison_lines {
            text.push_str(&line);
        }
        text.push('\n');
    } else if bundle.partial && !bundle.factors.is_empty() {
        text.push_str(
            "## Population Comparison\n\nCohort statistics are unavailable for \
             this prediction, so no population comparison is made.\n\n",
        );
    }

    (
        Narrative {
            patient_id: bundle.patient_id.clone(),
            text,
        },
        ClaimSidecar {
            patient_id: bundle.patient_id.clone(),
            claims,
        },
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::explain::tests::toy_stats;
    use crate::explain::{build_context, ContextBundle};
    use std::collections::BTreeMap;

    pub(crate) fn complete_bundle(probability: f64) -> ContextBundle {
        let patient: BTreeMap<String, f64> = [
            ("hour_of_day", 14.0),
            ("day_of_month", 22.0),
            ("visits_past_2_months", 4.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let shap: BTreeMap<String, f64> = [
            ("hour_of_day", 0.35),
            ("day_of_month", -0.28),
            ("visits_past_2_months", 0.42),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        build_context(
            "P000060",
            &patient,
            probability,
            &toy_stats(),
            &shap,
            &BTreeMap::new(),
            3,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn sections_follow_the_reference_order() {
        let (narrative, _) = generate_narrative(&complete_bundle(0.7));
        let t = &narrative.text;
        let pos = |s: &str| t.find(s).unwrap_or_else(|| panic!("missing section {s}"));
        assert!(pos("## Patient Risk Classification") < pos("## Risk Assessment Summary"));
        assert!(pos("## Risk Assessment Summary") < pos("## Analysis"));
        assert!(pos("## Analysis") < pos("## Population Comparison"));
        assert!(t.contains("SHAP Value Contribution: +0.42"));
        assert!(t.contains("**High Risk**"));
    }

    #[test]
    fn claim_count_is_five_per_factor_plus_class() {
        let (_, sidecar) = generate_narrative(&complete_bundle(0.7));
        // Per factor: contribution, direction, patient value, ordering,
        // group mean. Plus one risk-class claim.
        assert_eq!(sidecar.claims.len(), 5 * 3 + 1);
        let count = |k: ClaimKind| sidecar.claims.iter().filter(|c| c.kind == k).count();
        assert_eq!(count(ClaimKind::Numeric), 9);
        assert_eq!(count(ClaimKind::Direction), 3);
        assert_eq!(count(ClaimKind::Ordering), 3);
        assert_eq!(count(ClaimKind::RiskClass), 1);
        let ids: std::collections::BTreeSet<&String> =
            sidecar.claims.iter().map(|c| &c.claim_id).collect();
        assert_eq!(ids.len(), sidecar.claims.len(), "claim ids must be unique");
    }

    #[test]
    fn zero_factors_yield_a_single_risk_class_claim() {
        let mut bundle = complete_bundle(0.2);
        bundle.factors.clear();
        let (narrative, sidecar) = generate_narrative(&bundle);
        assert_eq!(sidecar.claims.len(), 1);
        assert_eq!(sidecar.claims[0].kind, ClaimKind::RiskClass);
        assert!(narrative.text.contains("**Low Risk**"));
        assert!(numeric_tokens(&narrative.text).is_empty());
    }

    #[test]
    fn every_numeric_token_resolves_to_exactly_one_claim() {
        let (narrative, sidecar) = generate_narrative(&complete_bundle(0.7));
        verify_token_bijection(&narrative.text, &sidecar).unwrap();
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let a = generate_narrative(&complete_bundle(0.7));
        let b = generate_narrative(&complete_bundle(0.7));
        assert_eq!(a.0.text.as_bytes(), b.0.text.as_bytes());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn risk_wording_tracks_the_classification() {
        let (low, _) = generate_narrative(&complete_bundle(0.2));
        assert!(low.text.contains("**Low Risk**"));
        assert!(!low.text.contains("**High Risk**"));
        let (high, _) = generate_narrative(&complete_bundle(0.9));
        assert!(high.text.contains("**High Risk**"));
    }

    #[test]
    fn summary_names_are_the_top_k_in_order() {
        let (narrative, _) = generate_narrative(&complete_bundle(0.7));
        let summary_start = narrative.text.find("## Risk Assessment Summary").unwrap();
        let analysis_start = narrative.text.find("## Analysis").unwrap();
        let section = &narrative.text[summary_start..analysis_start];
        let i1 = section.find("Number of Visits in Past Two Months").unwrap();
        let i2 = section.find("Hour of Day").unwrap();
        let i3 = section.find("Day of Month").unwrap();
        assert!(i1 < i2 && i2 < i3);
    }

    #[test]
    fn partial_bundle_suppresses_comparisons() {
        let mut bundle = complete_bundle(0.7);
        for f in bundle.factors.iter_mut() {
            f.patient_value = None;
        }
        bundle.partial = true;
        let (narrative, sidecar) = generate_narrative(&bundle);
        assert!(narrative.text.contains("no population comparison"));
        assert!(!sidecar.claims.iter().any(|c| c.kind == ClaimKind::Ordering));
        verify_token_bijection(&narrative.text, &sidecar).unwrap();
    }

    #[test]
    fn token_extraction_handles_ids_signs_and_units() {
        let text = "Patient P000123-0 scored +0.42 and -1.30; value 14.0 vs 12.1, \
                    band 18_30 excluded, plain 92 kept.";
        assert_eq!(
            numeric_tokens(text),
            vec!["+0.42", "-1.30", "14.0", "12.1", "92"]
        );
        // Hyphenated id tails and signs inside words terminate.
        assert!(numeric_tokens("P1-2-3 A-4 x+5 end").is_empty());
    }

    #[test]
    fn negative_contributions_render_signed_and_direction_decreased() {
        let (narrative, sidecar) = generate_narrative(&complete_bundle(0.7));
        assert!(narrative.text.contains("SHAP Value Contribution: -0.28"));
        let dir = sidecar
            .claims
            .iter()
            .find(|c| c.kind == ClaimKind::Direction && c.source_key == "day_of_month")
            .unwrap();
        assert_eq!(dir.stated, StatedValue::Polarity(RiskPolarity::Decreasing));
        assert_eq!(dir.display, "decreased");
    }
}
