//! Optional LLM rewrite of a templated narrative under a numeric
//! preservation contract: the polished text must carry exactly the same
//! numeric tokens as the sidecar, or it is rejected.

use serde::{Deserialize, Serialize};

use super::narrative::{numeric_tokens, ClaimSidecar, Narrative};
use crate::extract::ExtractClient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolishReport {
    /// True when the polished text replaced the template.
    pub applied: bool,
    pub warning: Option<String>,
}

const POLISH_SYSTEM: &str =
    "You rewrite clinical risk reports into flowing prose for clinicians. \
     Keep every numeric value exactly as written, keep the risk classification \
     wording, and do not add any new numbers.";

fn tokens_match(candidate: &str, sidecar: &ClaimSidecar) -> bool {
    let mut got = numeric_tokens(candidate);
    let mut want: Vec<String> = sidecar
        .numeric_displays()
        .iter()
        .map(|s| s.to_string())
        .collect();
    got.sort_unstable();
    want.sort_unstable();
    got == want
}

/// Rewrite the narrative through the configured client. Offline mode and
/// every failure path return the templated narrative unchanged.
pub fn llm_polish(
    narrative: &Narrative,
    sidecar: &ClaimSidecar,
    client: &ExtractClient,
) -> (Narrative, PolishReport) {
    let chat = match client {
        ExtractClient::Offline => {
            return (
                narrative.clone(),
                PolishReport { applied: false, warning: None },
            )
        }
        ExtractClient::Endpoint(chat) => chat,
    };
    let prompt = format!(
        "Rewrite the following report as cohesive clinical prose. Preserve \
         every number exactly and the risk classification verbatim.\n\n{}",
        narrative.text
    );
    match chat.complete(POLISH_SYSTEM, &prompt) {
        Ok(candidate) => {
            if tokens_match(&candidate, sidecar) {
                (
                    Narrative {
                        patient_id: narrative.patient_id.clone(),
                        text: candidate,
                    },
                    PolishReport { applied: true, warning: None },
                )
            } else {
                (
                    narrative.clone(),
                    PolishReport {
                        applied: false,
                        warning: Some(
                            "polished text changed a numeric value; template kept".into(),
                        ),
                    },
                )
            }
        }
        Err(e) => (
            narrative.clone(),
            PolishReport {
                applied: false,
                warning: Some(format!("polish transport failure: {e}; template kept")),
            },
        ),
    }
}
