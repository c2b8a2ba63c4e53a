//! Few-shot text classification of chief complaints and SDoH notes, with a
//! deterministic offline fallback and a weighted-metrics evaluator.

mod client;
mod fixtures;
mod rules;

pub use client::{
    ChatClient, ExtractClient, FailingClient, HttpChatClient, ScriptedClient, API_KEY_ENV,
};
pub use fixtures::{fixture_corpus, read_fixtures, write_fixtures, FixtureItem};
pub use rules::rule_fallback_classify;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tables;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("empty input text")]
    EmptyText,
    #[error("shots must be 5, 10 or 20, got {0}")]
    InvalidShots(usize),
    #[error("shot bank too small: {bank} exemplars for {shots} shots")]
    ShortShotBank { bank: usize, shots: usize },
    #[error("exemplar label {0:?} outside the label set")]
    ForeignShotLabel(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("evaluation input invalid: {0}")]
    InvalidEvaluation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// What is being classified.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    ChiefComplaint,
    /// SDoH kind id, e.g. `tobacco_use`.
    Sdoh(String),
}

impl Task {
    pub fn feature_id(&self) -> &str {
        match self {
            Task::ChiefComplaint => "chief_complaint",
            Task::Sdoh(kind) => kind,
        }
    }

    pub fn label_set(&self) -> Vec<String> {
        tables::label_set(self.feature_id())
    }

    /// Label used when the input is empty or the model output never
    /// conforms.
    pub fn unclear_label(&self) -> String {
        self.label_set()
            .iter()
            .find(|l| l.contains("Unclear"))
            .cloned()
            .unwrap_or_else(|| "Unclear".to_string())
    }

    fn describe(&self) -> String {
        match self {
            Task::ChiefComplaint => "the emergency department chief complaint".to_string(),
            Task::Sdoh(kind) => format!("the {} note", tables::sdoh_title(kind).to_lowercase()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task: Task,
    pub shots: usize,
    pub shot_bank: Vec<Exemplar>,
    pub system_instruction: String,
    pub label_set: Vec<String>,
    pub seed: u64,
}

pub const DEFAULT_SYSTEM_INSTRUCTION: &str =
    "You are a careful clinical coding assistant. Read the text and assign \
     exactly one category from the list you are given. Reply with the \
     category name only.";

impl PromptSpec {
    /// Spec with the task's closed label set and a shot bank drawn from the
    /// fixture templates.
    pub fn for_task(task: Task, shots: usize, seed: u64) -> Self {
        let label_set = task.label_set();
        let bank = crate::text::bank_for(task.feature_id());
        let shot_bank = bank
            .categories
            .iter()
            .flat_map(|c| {
                c.templates.iter().map(|t| Exemplar {
                    text: t.to_string(),
                    label: c.label.to_string(),
                })
            })
            .collect();
        PromptSpec {
            task,
            shots,
            shot_bank,
            system_instruction: DEFAULT_SYSTEM_INSTRUCTION.to_string(),
            label_set,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ExtractError> {
        if ![5, 10, 20].contains(&self.shots) {
            return Err(ExtractError::InvalidShots(self.shots));
        }
        if self.shot_bank.len() < self.shots {
            return Err(ExtractError::ShortShotBank {
                bank: self.shot_bank.len(),
                shots: self.shots,
            });
        }
        for shot in &self.shot_bank {
            if !self.label_set.contains(&shot.label) {
                return Err(ExtractError::ForeignShotLabel(shot.label.clone()));
            }
        }
        Ok(())
    }

    /// Label-stratified shot selection: per-label pools are shuffled with
    /// the configured seed, then drained round-robin in label-set order, as evenly
    /// as the pools allow.
    fn select_shots(&self) -> Vec<&Exemplar> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut pools: Vec<Vec<&Exemplar>> = self
            .label_set
            .iter()
            .map(|label| {
                let mut pool: Vec<&Exemplar> =
                    self.shot_bank.iter().filter(|e| &e.label == label).collect();
                pool.shuffle(&mut rng);
                pool
            })
            .collect();
        let mut selected = Vec::with_capacity(self.shots);
        while selected.len() < self.shots {
            let mut advanced = false;
            for pool in pools.iter_mut() {
                if selected.len() == self.shots {
                    break;
                }
                if let Some(e) = pool.pop() {
                    selected.push(e);
                    advanced = true;
                }
            }
            if !advanced {
                break;
            }
        }
        selected
    }
}

/// Deterministic few-shot prompt: instruction, exactly `shots` exemplars,
/// then the query with a verbatim-label demand.
pub fn build_prompt(spec: &PromptSpec, text: &str) -> Result<String, ExtractError> {
    spec.validate()?;
    let text = text.trim();
    if text.is_empty() {
        return Err(ExtractError::EmptyText);
    }
    let labels = spec.label_set.join(", ");
    let mut prompt = format!(
        "Classify {} into exactly one of these categories: {labels}.\n",
        spec.task.describe()
    );
    for shot in spec.select_shots() {
        prompt.push_str(&format!("\nText: {}\nLabel: {}\n", shot.text, shot.label));
    }
    prompt.push_str(&format!(
        "\nText: {text}\nAnswer with exactly one of: {labels}."
    ));
    Ok(prompt)
}

const STRICT_SUFFIX: &str =
    "\nYour previous reply was not a valid category. Respond with only the \
     category name, spelled exactly as listed, and nothing else.";

fn parse_label(response: &str, label_set: &[String]) -> Option<String> {
    let cleaned = response
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c == ':')
        .trim();
    if let Some(found) = label_set.iter().find(|l| l.as_str() == cleaned) {
        return Some(found.clone());
    }
    let mut ci: Vec<&String> = label_set
        .iter()
        .filter(|l| l.eq_ignore_ascii_case(cleaned))
        .collect();
    if ci.len() == 1 {
        return Some(ci.remove(0).clone());
    }
    None
}

/// Classify one text. Offline clients use the keyword fallback; endpoint
/// clients get the few-shot prompt, one stricter retry on a non-conforming
/// reply, and the unclear label after that. Transport failures propagate.
pub fn classify(
    spec: &PromptSpec,
    text: &str,
    client: &ExtractClient,
) -> Result<String, ExtractError> {
    if text.trim().is_empty() {
        return Ok(spec.task.unclear_label());
    }
    match client {
        ExtractClient::Offline => Ok(rule_fallback_classify(&spec.task, text)),
        ExtractClient::Endpoint(chat) => {
            let prompt = build_prompt(spec, text)?;
            let first = chat.complete(&spec.system_instruction, &prompt)?;
            if let Some(label) = parse_label(&first, &spec.label_set) {
                return Ok(label);
            }
            let strict = format!("{prompt}{STRICT_SUFFIX}");
            let second = chat.complete(&spec.system_instruction, &strict)?;
            Ok(parse_label(&second, &spec.label_set).unwrap_or_else(|| spec.task.unclear_label()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

/// Accuracy plus support-weighted one-vs-rest metrics and the full
/// confusion matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_specificity: f64,
    pub weighted_f1: f64,
    pub label_order: Vec<String>,
    /// confusion[i][j] counts gold `label_order[i]` predicted as
    /// `label_order[j]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: BTreeMap<String, PerClassMetrics>,
    /// Labels seen only in predictions; excluded from weighting.
    pub zero_support_labels: Vec<String>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Evaluate single-label predictions against gold labels.
pub fn evaluate_classifier(
    predictions: &[String],
    gold: &[String],
) -> Result<ClassificationMetrics, ExtractError> {
    if predictions.is_empty() || predictions.len() != gold.len() {
        return Err(ExtractError::InvalidEvaluation(format!(
            "{} predictions against {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    let n = gold.len();
    let mut label_order: Vec<String> = gold.iter().chain(predictions).cloned().collect();
    label_order.sort_unstable();
    label_order.dedup();
    let index: BTreeMap<&str, usize> = label_order
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let k = label_order.len();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0usize;
    for (p, g) in predictions.iter().zip(gold) {
        confusion[index[g.as_str()]][index[p.as_str()]] += 1;
        correct += usize::from(p == g);
    }

    let mut per_class = BTreeMap::new();
    let mut zero_support = Vec::new();
    let (mut wp, mut wr, mut ws, mut wf) = (0.0, 0.0, 0.0, 0.0);
    let mut weight_total = 0usize;
    for (i, label) in label_order.iter().enumerate() {
        let tp = confusion[i][i];
        let support: usize = confusion[i].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[i]).sum();
        let fp = predicted - tp;
        let fn_ = support - tp;
        let tn = n - tp - fp - fn_;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let specificity = ratio(tn, tn + fp);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.insert(
            label.clone(),
            PerClassMetrics {
                support,
                tp,
                fp,
                fn_,
                tn,
                precision,
                recall,
                specificity,
                f1,
            },
        );
        if support == 0 {
            zero_support.push(label.clone());
            continue;
        }
        weight_total += support;
        wp += support as f64 * precision;
        wr += support as f64 * recall;
        ws += support as f64 * specificity;
        wf += support as f64 * f1;
    }
    let w = weight_total as f64;
    Ok(ClassificationMetrics {
        n,
        accuracy: correct as f64 / n as f64,
        weighted_precision: wp / w,
        weighted_recall: wr / w,
        weighted_specificity: ws / w,
        weighted_f1: wf / w,
        label_order,
        confusion,
        per_class,
        zero_support_labels: zero_support,
    })
}

/// One row of a classification report (a model or an SDoH category).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub n: usize,
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub specificity_weighted: f64,
    pub f1_weighted: f64,
}

impl ReportRow {
    pub fn from_metrics(name: &str, m: &ClassificationMetrics) -> Self {
        ReportRow {
            name: name.to_string(),
            n: m.n,
            accuracy: m.accuracy,
            precision_weighted: m.weighted_precision,
            recall_weighted: m.weighted_recall,
            specificity_weighted: m.weighted_specificity,
            f1_weighted: m.weighted_f1,
        }
    }
}

/// Render report rows as a Markdown table.
pub fn report_markdown(title: &str, rows: &[ReportRow]) -> String {
    let mut out = format!(
        "## {title}\n\n| Category | Accuracy | Precision (Weighted) | \
         Sensitivity/Recall (Weighted) | Specificity (Weighted) | F1 Score (Weighted) |\n\
         |---|---|---|---|---|---|\n"
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} |\n",
            r.name,
            r.accuracy,
            r.precision_weighted,
            r.recall_weighted,
            r.specificity_weighted,
            r.f1_weighted
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cc_spec(seed: u64) -> PromptSpec {
        PromptSpec::for_task(Task::ChiefComplaint, 10, seed)
    }

    #[test]
    fn prompt_carries_ten_exemplars_and_the_label_set() {
        let spec = cc_spec(1);
        let prompt = build_prompt(&spec, "chest pain").unwrap();
        assert_eq!(prompt.matches("\nText: ").count(), 11); // 10 shots + query
        assert_eq!(prompt.matches("\nLabel: ").count(), 10);
        for label in tables::CHIEF_COMPLAINT_CLASSES {
            assert!(prompt.contains(label), "missing {label}");
        }
        assert!(prompt.trim_end().ends_with(
            "Answer with exactly one of: Infection, Injury, Pain, Psychiatric, Unclear."
        ));
    }

    #[test]
    fn sdoh_prompt_lists_the_kind_label_set() {
        let spec = PromptSpec::for_task(Task::Sdoh("alcohol_use".into()), 10, 1);
        let prompt = build_prompt(&spec, "denies etoh").unwrap();
        for label in tables::label_set("alcohol_use") {
            assert!(prompt.contains(&label), "missing {label}");
        }
    }

    #[test]
    fn prompts_are_deterministic_per_seed() {
        let a = build_prompt(&cc_spec(7), "headache").unwrap();
        let b = build_prompt(&cc_spec(7), "headache").unwrap();
        assert_eq!(a, b);
        let c = build_prompt(&cc_spec(8), "headache").unwrap();
        assert_ne!(a, c, "different seed should reorder shots");
    }

    #[test]
    fn shots_are_label_stratified() {
        let spec = cc_spec(3);
        let prompt = build_prompt(&spec, "query text").unwrap();
        // 10 shots over 5 classes: each class appears exactly twice.
        for label in tables::CHIEF_COMPLAINT_CLASSES {
            let count = prompt.matches(&format!("\nLabel: {label}\n")).count();
            assert_eq!(count, 2, "{label} appeared {count} times");
        }
    }

    #[test]
    fn invalid_shot_counts_are_rejected() {
        let mut spec = cc_spec(1);
        spec.shots = 7;
        assert!(matches!(
            build_prompt(&spec, "x"),
            Err(ExtractError::InvalidShots(7))
        ));
    }

    #[test]
    fn empty_text_short_circuits_without_a_call() {
        let scripted = ScriptedClient::new(vec!["Pain"]);
        let calls_before = scripted.call_count();
        let client = ExtractClient::Endpoint(Box::new(ScriptedClient::new(vec!["Pain"])));
        let spec = cc_spec(1);
        assert_eq!(classify(&spec, "   ", &client).unwrap(), "Unclear");
        assert_eq!(scripted.call_count(), calls_before);
    }

    #[test]
    fn offline_client_uses_the_rule_fallback() {
        let spec = cc_spec(1);
        let label = classify(&spec, "fell off ladder, wrist deformity", &ExtractClient::Offline)
            .unwrap();
        assert_eq!(label, "Injury");
    }

    #[test]
    fn conforming_endpoint_reply_is_accepted() {
        let client = ExtractClient::Endpoint(Box::new(ScriptedClient::new(vec!["Psychiatric"])));
        assert_eq!(classify(&cc_spec(1), "text", &client).unwrap(), "Psychiatric");
    }

    #[test]
    fn sloppy_but_unambiguous_reply_is_normalized() {
        let client = ExtractClient::Endpoint(Box::new(ScriptedClient::new(vec!["  \"pain\".  "])));
        assert_eq!(classify(&cc_spec(1), "text", &client).unwrap(), "Pain");
    }

    #[test]
    fn nonconforming_reply_retries_once_then_falls_back() {
        let scripted = ScriptedClient::new(vec!["I think this is probably an injury"]);
        let client = ExtractClient::Endpoint(Box::new(scripted));
        assert_eq!(classify(&cc_spec(1), "text", &client).unwrap(), "Unclear");
        let recovered = ScriptedClient::new(vec!["no idea".to_string(), "Injury".to_string()]);
        let client = ExtractClient::Endpoint(Box::new(recovered));
        assert_eq!(classify(&cc_spec(1), "text", &client).unwrap(), "Injury");
    }

    #[test]
    fn transport_failure_is_an_error_not_a_label() {
        let client = ExtractClient::Endpoint(Box::new(FailingClient));
        assert!(matches!(
            classify(&cc_spec(1), "text", &client),
            Err(ExtractError::Transport(_))
        ));
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gold: Vec<String> = ["A", "B", "A", "C"].iter().map(|s| s.to_string()).collect();
        let m = evaluate_classifier(&gold.clone(), &gold).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.weighted_precision, 1.0);
        assert_eq!(m.weighted_recall, 1.0);
        assert_eq!(m.weighted_f1, 1.0);
        assert_eq!(m.weighted_specificity, 1.0);
    }

    #[test]
    fn two_class_confusion_matches_hand_arithmetic() {
        // Class P: TP=2, FP=1, FN=1, TN=2.
        let gold: Vec<String> = ["P", "P", "P", "N", "N", "N"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let pred: Vec<String> = ["P", "P", "N", "P", "N", "N"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let m = evaluate_classifier(&pred, &gold).unwrap();
        let p = &m.per_class["P"];
        assert_eq!((p.tp, p.fp, p.fn_, p.tn), (2, 1, 1, 2));
        assert!((p.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.specificity - 2.0 / 3.0).abs() < 1e-12);
        let total: usize = m.confusion.iter().flatten().sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn weighted_metrics_recombine_from_per_class_values() {
        let gold: Vec<String> = ["A", "A", "B", "C", "C", "C", "B", "A"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let pred: Vec<String> = ["A", "B", "B", "C", "A", "C", "C", "A"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let m = evaluate_classifier(&pred, &gold).unwrap();
        let mut manual_f1 = 0.0;
        let mut total = 0usize;
        for (label, pc) in &m.per_class {
            if m.zero_support_labels.contains(label) {
                continue;
            }
            manual_f1 += pc.support as f64 * pc.f1;
            total += pc.support;
        }
        assert!((m.weighted_f1 - manual_f1 / total as f64).abs() < 1e-12);
    }

    #[test]
    fn micro_recall_equals_accuracy() {
        let gold: Vec<String> = ["A", "B", "B", "C", "A", "C"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let pred: Vec<String> = ["B", "B", "A", "C", "A", "A"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let m = evaluate_classifier(&pred, &gold).unwrap();
        let micro_tp: usize = m.per_class.values().map(|c| c.tp).sum();
        let micro_fn: usize = m.per_class.values().map(|c| c.fn_).sum();
        assert!((micro_tp as f64 / (micro_tp + micro_fn) as f64 - m.accuracy).abs() < 1e-12);
    }

    #[test]
    fn zero_support_labels_are_flagged_and_unweighted() {
        let gold: Vec<String> = ["A", "A"].iter().map(|s| s.to_string()).collect();
        let pred: Vec<String> = ["A", "Z"].iter().map(|s| s.to_string()).collect();
        let m = evaluate_classifier(&pred, &gold).unwrap();
        assert_eq!(m.zero_support_labels, vec!["Z".to_string()]);
        assert_eq!(m.per_class["Z"].support, 0);
        assert!((m.weighted_recall - 0.5).abs() < 1e-12);
    }
}
