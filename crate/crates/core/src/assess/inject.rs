//! Seeded error injectors for the reliability fixtures. Each injector
//! mutates a clean narrative/sidecar pair into one carrying a specific
//! error class, editing text and sidecar together so the pair stays
//! internally aligned while contradicting its sources.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Rulebase;
use crate::cohort::RiskGroup;
use crate::explain::{ClaimKind, ClaimSidecar, ClaimSource, Narrative, RiskPolarity, StatedValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    /// One display unit off on a record/statistic value (risk unchanged).
    NumericMutation,
    /// Direction wording flipped against the attribution sign.
    SignFlip,
    /// Risk classification flipped against the prediction.
    ClassFlip,
    /// A factor that exists nowhere in the attribution.
    Fabrication,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 4] = [
        ErrorClass::NumericMutation,
        ErrorClass::SignFlip,
        ErrorClass::ClassFlip,
        ErrorClass::Fabrication,
    ];
}

/// Replace the first occurrence of `from` in `text`; panics if absent,
/// which would mean the sidecar and text already disagree.
fn swap_token(text: &str, from: &str, to: &str) -> String {
    let at = text
        .find(from)
        .unwrap_or_else(|| panic!("token {from:?} not found in narrative"));
    let mut out = String::with_capacity(text.len());
    out.push_str(&text[..at]);
    out.push_str(to);
    out.push_str(&text[at + from.len()..]);
    out
}

/// Apply one seeded injection. Returns `None` when the pair carries no
/// claim the class could target (e.g. a zero-factor narrative).
pub fn inject_error(
    narrative: &Narrative,
    sidecar: &ClaimSidecar,
    class: ErrorClass,
    rulebase: &Rulebase,
    seed: u64,
) -> Option<(Narrative, ClaimSidecar)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut narrative = narrative.clone();
    let mut sidecar = sidecar.clone();
    match class {
        ErrorClass::NumericMutation => {
            let targets: Vec<usize> = sidecar
                .claims
                .iter()
                .enumerate()
                .filter(|(_, c)| {
                    c.kind == ClaimKind::Numeric
                        && matches!(c.source, ClaimSource::Patient | ClaimSource::CohortStats)
                })
                .map(|(i, _)| i)
                .collect();
            if targets.is_empty() {
                return None;
            }
            let idx = targets[rng.random_range(0..targets.len())];
            let claim = &mut sidecar.claims[idx];
            let StatedValue::Number(v) = claim.stated else { return None };
            let unit = 10f64.powi(-(claim.display_precision as i32));
            let mutated = v - unit;
            let new_display = format!("{mutated:.*}", claim.display_precision as usize);
            narrative.text = swap_token(&narrative.text, &claim.display, &new_display);
            claim.stated = StatedValue::Number(mutated);
            claim.display = new_display;
        }
        ErrorClass::SignFlip => {
            let targets: Vec<usize> = sidecar
                .claims
                .iter()
                .enumerate()
                .filter(|(_, c)| {
                    c.kind == ClaimKind::Direction && rulebase.contains_key(&c.source_key)
                })
                .map(|(i, _)| i)
                .collect();
            if targets.is_empty() {
                return None;
            }
            let idx = targets[rng.random_range(0..targets.len())];
            let claim = &mut sidecar.claims[idx];
            let StatedValue::Polarity(p) = claim.stated else { return None };
            let (flipped, word) = match p {
                RiskPolarity::Increasing => (RiskPolarity::Decreasing, "decreased"),
                RiskPolarity::Decreasing => (RiskPolarity::Increasing, "increased"),
            };
            // The direction word follows the factor name on its line; swap
            // the phrase to keep other lines untouched.
            let from = format!("this factor {} the", claim.display);
            let to = format!("this factor {word} the");
            narrative.text = swap_token(&narrative.text, &from, &to);
            claim.stated = StatedValue::Polarity(flipped);
            claim.display = word.to_string();
        }
        ErrorClass::ClassFlip => {
            let idx = sidecar
                .claims
                .iter()
                .position(|c| c.kind == ClaimKind::RiskClass)?;
            let claim = &mut sidecar.claims[idx];
            let StatedValue::Class(class_stated) = claim.stated else { return None };
            let (flipped, phrase) = match class_stated {
                RiskGroup::High => (RiskGroup::Low, "Low Risk"),
                RiskGroup::Low => (RiskGroup::High, "High Risk"),
            };
            let from = format!("**{}**", claim.display);
            let to = format!("**{phrase}**");
            narrative.text = swap_token(&narrative.text, &from, &to);
            claim.stated = StatedValue::Class(flipped);
            claim.display = phrase.to_string();
        }
        ErrorClass::Fabrication => {
            let anchor = "## Analysis";
            if !narrative.text.contains(anchor) {
                return None;
            }
            let fake_value = 0.9 + rng.random_range(0..9) as f64 / 100.0;
            let display = format!("{fake_value:+.2}");
            let line = format!(
                "- Telemetry Risk Index: SHAP Value Contribution: {display}.\n\n"
            );
            narrative.text = swap_token(&narrative.text, anchor, &format!("{line}{anchor}"));
            // Insert after the last contribution claim so factor order is
            // preserved up to the fabricated tail entry.
            let insert_at = sidecar
                .claims
                .iter()
                .rposition(|c| c.kind == ClaimKind::Numeric && c.source == ClaimSource::Shap)
                .map(|i| i + 1)
                .unwrap_or(sidecar.claims.len());
            sidecar.claims.insert(
                insert_at,
                crate::explain::Claim {
                    claim_id: format!("cx{seed:02}"),
                    kind: ClaimKind::Numeric,
                    source: ClaimSource::Shap,
                    source_key: "telemetry_risk_index".into(),
                    stated: StatedValue::Number((fake_value * 100.0).round() / 100.0),
                    display_precision: 2,
                    display,
                },
            );
        }
    }
    Some((narrative, sidecar))
}

/// Dimension and severity the assessment protocol must assign to each
/// injected class.
pub fn expected_detection(class: ErrorClass) -> (super::Dimension, super::Severity) {
    use super::{Dimension, Severity};
    match class {
        ErrorClass::NumericMutation => (Dimension::Factual, Severity::Minor),
        ErrorClass::SignFlip => (Dimension::ClinicalConsistency, Severity::Moderate),
        ErrorClass::ClassFlip => (Dimension::Coherence, Severity::Severe),
        ErrorClass::Fabrication => (Dimension::Attribution, Severity::Severe),
    }
}
