//! End-to-end orchestration: generate, harmonize, extract, train/evaluate,
//! attribute, explain, assess, and write a summary. Every stage emits its
//! artifacts under the run directory as it completes, so a failing stage
//! leaves earlier outputs in place.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assess::{self, Rulebase, Sources};
use crate::attribution::{self, ShapVector, TreeExplainer};
use crate::cohort::{self, CohortSpec, RiskGroup, VisitRecord};
use crate::explain::{self, ClaimSidecar, Narrative};
use crate::extract::{self, ExtractClient, PromptSpec, Task};
use crate::harmonize::{self, ColumnKind, Encoder, FeatureMatrix, HarmonizeConfig};
use crate::learn::{self, ModelFamily, ModelMetrics, ModelSpec, TrainedModel};
use crate::tables;

#[derive(Debug, Error)]
#[error("stage {stage} failed: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError>;
}

impl<T, E: std::fmt::Display> StageContext<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithoutLlm,
    WithLlm,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::WithoutLlm => "without_llm",
            Variant::WithLlm => "with_llm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSelection {
    WithoutLlm,
    WithLlm,
    Both,
}

impl VariantSelection {
    pub fn variants(&self) -> Vec<Variant> {
        match self {
            VariantSelection::WithoutLlm => vec![Variant::WithoutLlm],
            VariantSelection::WithLlm => vec![Variant::WithLlm],
            VariantSelection::Both => vec![Variant::WithoutLlm, Variant::WithLlm],
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "without_llm" => Some(VariantSelection::WithoutLlm),
            "with_llm" => Some(VariantSelection::WithLlm),
            "both" => Some(VariantSelection::Both),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    #[default]
    Offline,
    Endpoint,
}

/// Chat-completion endpoint settings; the credential comes from the
/// environment, never from config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
}

/// Full pipeline configuration; fields mirror the run-config JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub n_visits: usize,
    #[serde(default = "default_return_rate")]
    pub target_return_rate: f64,
    #[serde(default)]
    pub extraction_mode: ExtractionMode,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    #[serde(default)]
    pub harmonize: HarmonizeConfig,
    #[serde(default = "default_models")]
    pub models: Vec<ModelSpec>,
    #[serde(default = "default_variant")]
    pub variant: VariantSelection,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    /// Keep all visits of a patient on one side of the split.
    #[serde(default = "default_true")]
    pub patient_grouped_split: bool,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_threshold")]
    pub decision_threshold: f64,
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default = "default_narrative_k")]
    pub narrative_k: usize,
    #[serde(default = "default_narrative_count")]
    pub narrative_count: usize,
    /// Cap on attribution samples from the test split (0 = all).
    #[serde(default)]
    pub attribution_sample_cap: usize,
}

fn default_return_rate() -> f64 {
    0.266
}
fn default_models() -> Vec<ModelSpec> {
    ModelFamily::ALL.into_iter().map(ModelSpec::default_for).collect()
}
fn default_variant() -> VariantSelection {
    VariantSelection::Both
}
fn default_ratio() -> f64 {
    0.8
}
fn default_true() -> bool {
    true
}
fn default_folds() -> usize {
    3
}
fn default_threshold() -> f64 {
    0.5
}
fn default_shots() -> usize {
    10
}
fn default_narrative_k() -> usize {
    3
}
fn default_narrative_count() -> usize {
    100
}

impl PipelineConfig {
    pub fn new(n_visits: usize, seed: u64) -> Self {
        PipelineConfig {
            seed,
            n_visits,
            target_return_rate: default_return_rate(),
            extraction_mode: ExtractionMode::Offline,
            endpoint: None,
            harmonize: HarmonizeConfig::default(),
            models: default_models(),
            variant: VariantSelection::Both,
            split_ratio: default_ratio(),
            patient_grouped_split: true,
            cv_folds: default_folds(),
            decision_threshold: default_threshold(),
            shots: default_shots(),
            narrative_k: default_narrative_k(),
            narrative_count: default_narrative_count(),
            attribution_sample_cap: 0,
        }
    }

    pub fn cohort_spec(&self) -> CohortSpec {
        let mut spec = CohortSpec::new(self.n_visits, self.seed);
        spec.target_return_rate = self.target_return_rate;
        spec
    }

    /// Build the extraction client. `force_offline` (the `--offline` flag)
    /// always wins over the config.
    pub fn make_client(&self, force_offline: bool) -> Result<ExtractClient, String> {
        if force_offline || self.extraction_mode == ExtractionMode::Offline {
            return Ok(ExtractClient::Offline);
        }
        let endpoint = self
            .endpoint
            .as_ref()
            .ok_or("extraction_mode is endpoint but no endpoint is configured")?;
        Ok(ExtractClient::Endpoint(Box::new(
            extract::HttpChatClient::new(&endpoint.url, &endpoint.model),
        )))
    }
}

/// One Table-style metrics row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    #[serde(flatten)]
    pub metrics: ModelMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub mode: String,
    pub chief_complaint: extract::ReportRow,
    pub sdoh: Vec<extract::ReportRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessmentSummary {
    pub n: usize,
    pub failing: usize,
    pub error_rate: f64,
}

/// Top-level run summary; serialized as `summary.json`, byte-stable for a
/// fixed config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub n_visits: usize,
    pub realized_return_rate: f64,
    pub variants: BTreeMap<String, Vec<MetricsRow>>,
    pub top_feature: BTreeMap<String, String>,
    pub extraction: Option<ExtractionSummary>,
    pub assessment: Option<AssessmentSummary>,
}

/// Everything a run produces that callers may want in memory.
pub struct PipelineOutcome {
    pub summary: Summary,
    pub cohort: cohort::GeneratedCohort,
    pub labels: BTreeMap<String, bool>,
    /// Per variant: trained models with their held-out metrics.
    pub models: BTreeMap<String, Vec<(TrainedModel, ModelMetrics)>>,
    /// SHAP vectors from the explanation variant's boosted model.
    pub shap: Vec<ShapVector>,
    pub shap_feature_names: Vec<String>,
    pub explainer_base_value: f64,
    pub narratives: Vec<(Narrative, ClaimSidecar)>,
    pub sources: BTreeMap<String, Sources>,
    pub rulebase: Rulebase,
    pub assessment: Option<assess::AssessmentReport>,
}

struct VariantArtifacts {
    matrix_train: FeatureMatrix,
    matrix_test: FeatureMatrix,
    models: Vec<(TrainedModel, ModelMetrics)>,
}

fn write_json<T: Serialize>(dir: Option<&Path>, rel: &str, value: &T) -> Result<(), String> {
    let Some(dir) = dir else { return Ok(()) };
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| e.to_string())?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| e.to_string())
}

fn write_text(dir: Option<&Path>, rel: &str, text: &str) -> Result<(), String> {
    let Some(dir) = dir else { return Ok(()) };
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| e.to_string())?;
    }
    std::fs::write(path, text).map_err(|e| e.to_string())
}

/// Extract text categories for every visit: the chief complaint plus all
/// seven SDoH kinds.
pub fn extract_categories(
    visits: &[VisitRecord],
    client: &ExtractClient,
    shots: usize,
    seed: u64,
) -> Result<BTreeMap<String, BTreeMap<String, String>>, extract::ExtractError> {
    let mut specs: Vec<(String, PromptSpec)> = vec![(
        "chief_complaint".to_string(),
        PromptSpec::for_task(Task::ChiefComplaint, shots, seed),
    )];
    for kind in tables::SDOH_KINDS {
        specs.push((
            kind.to_string(),
            PromptSpec::for_task(Task::Sdoh(kind.to_string()), shots, seed),
        ));
    }
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for v in visits {
        let mut cats = BTreeMap::new();
        for (feature, spec) in &specs {
            let text = if feature == "chief_complaint" {
                v.chief_complaint_text.as_str()
            } else {
                v.sdoh_texts.get(feature).map(|s| s.as_str()).unwrap_or("")
            };
            cats.insert(feature.clone(), extract::classify(spec, text, client)?);
        }
        out.insert(v.visit_id.clone(), cats);
    }
    Ok(out)
}

/// Score the configured classifier on templated fixture corpora and shape
/// the per-task reports.
pub fn extraction_reports(
    client: &ExtractClient,
    shots: usize,
    seed: u64,
    dir: Option<&Path>,
) -> Result<ExtractionSummary, String> {
    let cc_items = extract::fixture_corpus("chief_complaint", 500, seed);
    if let Some(dir) = dir {
        extract::write_fixtures(
            &dir.join("extract/chief_complaint_fixtures.jsonl"),
            &cc_items,
        )
        .map_err(|e| e.to_string())?;
    }
    let cc_spec = PromptSpec::for_task(Task::ChiefComplaint, shots, seed);
    let mut predictions = Vec::with_capacity(cc_items.len());
    for item in &cc_items {
        predictions
            .push(extract::classify(&cc_spec, &item.text, client).map_err(|e| e.to_string())?);
    }
    let gold: Vec<String> = cc_items.iter().map(|i| i.gold_label.clone()).collect();
    let cc_metrics =
        extract::evaluate_classifier(&predictions, &gold).map_err(|e| e.to_string())?;
    let mode = if client.is_offline() { "offline" } else { "endpoint" };
    let cc_row = extract::ReportRow::from_metrics(&format!("{mode} classifier"), &cc_metrics);

    let mut sdoh_rows = Vec::new();
    let mut all_sdoh_items = Vec::new();
    for (idx, kind) in tables::SDOH_KINDS.iter().enumerate() {
        let items = extract::fixture_corpus(kind, 120, seed.wrapping_add(idx as u64 + 1));
        let spec = PromptSpec::for_task(Task::Sdoh(kind.to_string()), shots, seed);
        let mut predictions = Vec::with_capacity(items.len());
        for item in &items {
            predictions
                .push(extract::classify(&spec, &item.text, client).map_err(|e| e.to_string())?);
        }
        let gold: Vec<String> = items.iter().map(|i| i.gold_label.clone()).collect();
        let metrics =
            extract::evaluate_classifier(&predictions, &gold).map_err(|e| e.to_string())?;
        sdoh_rows.push(extract::ReportRow::from_metrics(tables::sdoh_title(kind), &metrics));
        all_sdoh_items.extend(items);
    }
    if let Some(dir) = dir {
        extract::write_fixtures(&dir.join("extract/sdoh_fixtures.jsonl"), &all_sdoh_items)
            .map_err(|e| e.to_string())?;
    }
    let summary = ExtractionSummary {
        mode: mode.to_string(),
        chief_complaint: cc_row,
        sdoh: sdoh_rows,
    };
    write_json(dir, "extract/report.json", &summary)?;
    let mut md = extract::report_markdown(
        "Chief Complaint Classification",
        std::slice::from_ref(&summary.chief_complaint),
    );
    md.push('\n');
    md.push_str(&extract::report_markdown("SDoH Classification", &summary.sdoh));
    write_text(dir, "extract/report.md", &md)?;
    Ok(summary)
}

/// Run the complete pipeline. `out_dir` of `None` keeps everything in
/// memory; otherwise artifacts land in deterministic paths beneath it.
pub fn run_pipeline(
    config: &PipelineConfig,
    out_dir: Option<&Path>,
    client: &ExtractClient,
) -> Result<PipelineOutcome, PipelineError> {
    // Stage: generate.
    let cohort_spec = config.cohort_spec();
    let generated = cohort::generate_cohort(&cohort_spec).stage("generate")?;
    if let Some(dir) = out_dir {
        cohort::write_cohort(&dir.join("cohort"), &generated.visits, Some(&generated.gold))
            .stage("generate")?;
    }
    let eligible = cohort::filter_eligible(&generated.visits);
    let labels = cohort::label_returns(&eligible).stage("generate")?;

    // Stage: extract. Fixture reports always run; per-visit categories only
    // when a with-LLM variant is requested.
    let variants = config.variant.variants();
    let needs_llm = variants.contains(&Variant::WithLlm);
    let extraction =
        extraction_reports(client, config.shots, config.seed, out_dir).stage("extract")?;
    let extracted = if needs_llm {
        let cats =
            extract_categories(&eligible, client, config.shots, config.seed).stage("extract")?;
        if let Some(dir) = out_dir {
            let path = dir.join("extract/extracted.jsonl");
            std::fs::create_dir_all(path.parent().unwrap()).stage("extract")?;
            let mut w =
                std::io::BufWriter::new(std::fs::File::create(path).stage("extract")?);
            for (visit_id, cats) in &cats {
                let row = serde_json::json!({"visit_id": visit_id, "categories": cats});
                serde_json::to_writer(&mut w, &row).stage("extract")?;
                w.write_all(b"\n").stage("extract")?;
            }
            w.flush().stage("extract")?;
        }
        Some(cats)
    } else {
        None
    };

    // Stage: harmonize + train/evaluate per variant.
    let mut variant_artifacts: BTreeMap<Variant, VariantArtifacts> = BTreeMap::new();
    let mut summary_variants = BTreeMap::new();
    for variant in &variants {
        let use_extracted = match variant {
            Variant::WithLlm => extracted.as_ref(),
            Variant::WithoutLlm => None,
        };
        let harmonized = harmonize_stage(
            config,
            &eligible,
            &labels,
            use_extracted,
            variant.as_str(),
            out_dir,
        )?;
        let matrix_train = harmonized.matrix.subset(&harmonized.train_rows);
        let matrix_test = harmonized.matrix.subset(&harmonized.test_rows);
        let (models, rows) =
            train_stage(config, &matrix_train, &matrix_test, variant.as_str(), out_dir)?;
        summary_variants.insert(variant.as_str().to_string(), rows);
        variant_artifacts.insert(
            *variant,
            VariantArtifacts {
                matrix_train,
                matrix_test,
                models,
            },
        );
    }

    // Stage: attribute. Explanations come from the with-LLM variant when it
    // was trained.
    let explain_variant = if variant_artifacts.contains_key(&Variant::WithLlm) {
        Variant::WithLlm
    } else {
        Variant::WithoutLlm
    };
    let mut top_feature = BTreeMap::new();
    let mut explain_attr: Option<AttributeOutput> = None;

    for (variant, artifacts) in &variant_artifacts {
        let Some((gbt_model, _)) = artifacts
            .models
            .iter()
            .find(|(m, _)| m.family == ModelFamily::Gbt)
        else {
            continue;
        };
        let attr = attribute_stage(
            variant.as_str(),
            &artifacts.matrix_train,
            &artifacts.matrix_test,
            gbt_model,
            config.attribution_sample_cap,
            out_dir,
        )?;
        top_feature.insert(variant.as_str().to_string(), attr.top_feature.clone());
        if *variant == explain_variant {
            explain_attr = Some(attr);
        }
    }
    let explain_attr = explain_attr.ok_or(PipelineError {
        stage: "attribute",
        message: "no boosted model available for attribution".into(),
    })?;

    // Stage: explain.
    let artifacts = &variant_artifacts[&explain_variant];
    let (gbt_model, _) = artifacts
        .models
        .iter()
        .find(|(m, _)| m.family == ModelFamily::Gbt)
        .expect("attribution stage required a boosted model");
    let explained = explain_stage(
        config,
        &eligible,
        &labels,
        &artifacts.matrix_train,
        &artifacts.matrix_test,
        gbt_model,
        &explain_attr.vectors,
        &explain_attr.names,
        client,
        out_dir,
    )?;
    let narratives = explained.narratives;
    let sources_by_patient = explained.sources;
    let rulebase = assess::default_rulebase();

    // Stage: assess.
    let assessment = if narratives.is_empty() {
        None
    } else {
        Some(assess_stage(
            &narratives,
            &sources_by_patient,
            &rulebase,
            config.narrative_k,
            out_dir,
        )?)
    };

    let summary = Summary {
        seed: config.seed,
        n_visits: config.n_visits,
        realized_return_rate: generated.realized_return_rate,
        variants: summary_variants,
        top_feature,
        extraction: Some(extraction),
        assessment: assessment.as_ref().map(|r| AssessmentSummary {
            n: r.n,
            failing: r.failing,
            error_rate: r.error_rate,
        }),
    };
    write_json(out_dir, "summary.json", &summary).stage("summary")?;

    let models = variant_artifacts
        .iter()
        .map(|(v, a)| (v.as_str().to_string(), a.models.clone()))
        .collect();
    Ok(PipelineOutcome {
        summary,
        cohort: generated,
        labels,
        models,
        shap: explain_attr.vectors,
        shap_feature_names: explain_attr.names,
        explainer_base_value: explain_attr.base_value,
        narratives,
        sources: sources_by_patient,
        rulebase,
        assessment,
    })
}

pub struct HarmonizeOutput {
    pub matrix: FeatureMatrix,
    pub encoder: Encoder,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Assemble, recode, collapse, drop/fill, impute, split and encode one
/// variant's feature matrix. Normalization is fitted on the train rows.
pub fn harmonize_stage(
    config: &PipelineConfig,
    eligible: &[VisitRecord],
    labels: &BTreeMap<String, bool>,
    extracted: Option<&BTreeMap<String, BTreeMap<String, String>>>,
    variant_label: &str,
    out_dir: Option<&Path>,
) -> Result<HarmonizeOutput, PipelineError> {
    let mut assembled =
        harmonize::assemble(eligible, extracted, &config.harmonize).stage("harmonize")?;
    harmonize::recode_unknown(&mut assembled.table);
    for (column, min_fraction, replacement) in &config.harmonize.collapse {
        if assembled.table.column(column).is_some() {
            harmonize::collapse_low_frequency(
                &mut assembled.table,
                column,
                *min_fraction,
                replacement,
            )
            .stage("harmonize")?;
        }
    }
    harmonize::drop_sparse_categoricals(&mut assembled.table, config.harmonize.drop_threshold);
    harmonize::knn_impute(&mut assembled.table, config.harmonize.knn_k).stage("harmonize")?;

    let row_labels: Vec<bool> = assembled.visit_ids.iter().map(|id| labels[id]).collect();
    let (train_rows, test_rows) = split_rows(
        config,
        &row_labels,
        &assembled.patient_ids,
    )?;
    let encoder = Encoder::fit(&assembled.table, &train_rows).stage("harmonize")?;
    let encoded = encoder
        .transform(
            &assembled.table,
            &row_labels,
            &assembled.visit_ids,
            &assembled.patient_ids,
        )
        .stage("harmonize")?;
    if let Some(dir) = out_dir {
        harmonize::write_matrix(
            &dir.join("harmonize"),
            &format!("features_{variant_label}"),
            &encoded.matrix,
            &encoder,
        )
        .stage("harmonize")?;
    }
    Ok(HarmonizeOutput {
        matrix: encoded.matrix,
        encoder,
        train_rows,
        test_rows,
    })
}

/// The deterministic row split used throughout a run.
pub fn split_rows(
    config: &PipelineConfig,
    labels: &[bool],
    group_ids: &[String],
) -> Result<(Vec<usize>, Vec<usize>), PipelineError> {
    if config.patient_grouped_split {
        learn::split_indices_grouped(labels, group_ids, config.split_ratio, config.seed)
            .stage("harmonize")
    } else {
        learn::split_indices(labels, config.split_ratio, config.seed).stage("harmonize")
    }
}

type TrainedSuite = Vec<(TrainedModel, ModelMetrics)>;

/// Grid search, final fit on the oversampled train split, held-out
/// evaluation, and model/metrics artifacts for one variant.
pub fn train_stage(
    config: &PipelineConfig,
    matrix_train: &FeatureMatrix,
    matrix_test: &FeatureMatrix,
    variant_label: &str,
    out_dir: Option<&Path>,
) -> Result<(TrainedSuite, Vec<MetricsRow>), PipelineError> {
    let mut models = Vec::new();
    let mut rows = Vec::new();
    for spec in &config.models {
        let search =
            learn::grid_search(spec, matrix_train, config.cv_folds, config.seed).stage("train")?;
        let balanced = learn::oversample(matrix_train, config.seed).stage("train")?;
        let mut model =
            learn::train(spec.family, &search.best, &balanced, config.seed).stage("train")?;
        model.meta.cv_score = search.best_score;
        let metrics =
            learn::evaluate(&model, matrix_test, config.decision_threshold).stage("train")?;
        if let Some(dir) = out_dir {
            learn::write_model(
                &dir.join(format!(
                    "train/model_{}_{variant_label}.json",
                    spec.family.as_str()
                )),
                &model,
            )
            .stage("train")?;
        }
        rows.push(MetricsRow {
            model: spec.family.as_str().to_string(),
            metrics: metrics.clone(),
        });
        models.push((model, metrics));
    }
    write_json(out_dir, &format!("train/metrics_{variant_label}.json"), &rows).stage("train")?;
    Ok((models, rows))
}

/// Attribution artifacts for one variant's boosted model.
pub struct AttributeOutput {
    pub vectors: Vec<ShapVector>,
    pub names: Vec<String>,
    pub base_value: f64,
    pub top_feature: String,
}

/// SHAP over the test split against a training-split background, plus
/// global importance exports.
pub fn attribute_stage(
    variant_label: &str,
    matrix_train: &FeatureMatrix,
    matrix_test: &FeatureMatrix,
    model: &TrainedModel,
    sample_cap: usize,
    out_dir: Option<&Path>,
) -> Result<AttributeOutput, PipelineError> {
    let learn::ModelParams::Gbt(gbt) = &model.params else {
        return Err(PipelineError {
            stage: "attribute",
            message: "attribution requires a boosted-tree model".into(),
        });
    };
    let explainer =
        TreeExplainer::new(gbt, &matrix_train.values, matrix_train.n_cols()).stage("attribute")?;
    let cap = if sample_cap == 0 {
        matrix_test.n_rows()
    } else {
        sample_cap.min(matrix_test.n_rows())
    };
    let mut vectors = Vec::with_capacity(cap);
    for i in 0..cap {
        vectors.push(
            explainer
                .shap(matrix_test.row(i), &matrix_test.row_ids[i])
                .stage("attribute")?,
        );
    }
    let names: Vec<String> = matrix_test.columns.iter().map(|c| c.name.clone()).collect();
    let ranking = attribution::global_importance(&vectors, &names).stage("attribute")?;
    if let Some(dir) = out_dir {
        attribution::write_attributions(
            &dir.join(format!("attribution/shap_{variant_label}.jsonl")),
            &vectors,
            &names,
        )
        .stage("attribute")?;
    }
    write_json(
        out_dir,
        &format!("attribution/importance_{variant_label}.json"),
        &ranking,
    )
    .stage("attribute")?;
    write_text(
        out_dir,
        &format!("attribution/importance_{variant_label}.svg"),
        &attribution::importance_svg(&ranking, 15),
    )
    .stage("attribute")?;
    Ok(AttributeOutput {
        base_value: explainer.base_value(),
        top_feature: ranking
            .entries
            .first()
            .map(|(n, _)| n.clone())
            .unwrap_or_default(),
        vectors,
        names,
    })
}

/// Per-patient slice of the narrative ground truth, as persisted in
/// `explain/sources.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientSources {
    pub patient_values: BTreeMap<String, f64>,
    pub shap: BTreeMap<String, f64>,
    pub probability: f64,
}

/// File form of the assessment ground truth so the assess stage can run
/// against explain artifacts alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourcesFile {
    pub threshold: f64,
    pub narrative_k: usize,
    pub cohort_stats: cohort::CohortStatistics,
    pub per_patient: BTreeMap<String, PatientSources>,
}

impl SourcesFile {
    pub fn to_sources(&self) -> BTreeMap<String, Sources> {
        self.per_patient
            .iter()
            .map(|(id, p)| {
                (
                    id.clone(),
                    Sources {
                        patient_values: p.patient_values.clone(),
                        cohort_stats: self.cohort_stats.clone(),
                        shap: p.shap.clone(),
                        probability: p.probability,
                        threshold: self.threshold,
                    },
                )
            })
            .collect()
    }
}

pub struct ExplainOutput {
    pub narratives: Vec<(Narrative, ClaimSidecar)>,
    pub sources: BTreeMap<String, Sources>,
    pub stats: cohort::CohortStatistics,
}

/// Cohort statistics, risk-factor ranges, narrative generation and the
/// sources file, all derived from the training split. With an endpoint
/// client the templated narrative goes through the polish pass; offline
/// runs keep the template verbatim.
#[allow(clippy::too_many_arguments)]
pub fn explain_stage(
    config: &PipelineConfig,
    eligible: &[VisitRecord],
    labels: &BTreeMap<String, bool>,
    matrix_train: &FeatureMatrix,
    matrix_test: &FeatureMatrix,
    model: &TrainedModel,
    shap: &[ShapVector],
    shap_names: &[String],
    client: &ExtractClient,
    out_dir: Option<&Path>,
) -> Result<ExplainOutput, PipelineError> {
    let visit_by_id: BTreeMap<&str, &VisitRecord> =
        eligible.iter().map(|v| (v.visit_id.as_str(), v)).collect();

    let mut train_partition = BTreeMap::new();
    let mut high_risk_train_rows = Vec::new();
    for i in 0..matrix_train.n_rows() {
        let p = model.predict_proba(matrix_train.row(i)).stage("explain")?;
        let group = explain::classify_risk(p, config.decision_threshold);
        train_partition.insert(matrix_train.row_ids[i].clone(), group);
        if group == RiskGroup::High {
            high_risk_train_rows.push(i);
        }
    }
    let train_visits: Vec<VisitRecord> = matrix_train
        .row_ids
        .iter()
        .map(|id| (*visit_by_id[id.as_str()]).clone())
        .collect();
    let train_labels: BTreeMap<String, bool> = matrix_train
        .row_ids
        .iter()
        .map(|id| (id.clone(), labels[id]))
        .collect();
    let stats = cohort::cohort_statistics(&train_visits, &train_labels, &train_partition)
        .stage("explain")?;
    write_json(out_dir, "explain/cohort_statistics.json", &stats).stage("explain")?;

    // Narrative-eligible features: the continuous encoded columns, whose
    // names match the raw numeric profile keys.
    let eligible_features: Vec<String> = matrix_test
        .columns
        .iter()
        .filter(|c| c.kind == ColumnKind::Continuous)
        .map(|c| c.name.clone())
        .collect();
    let mut ranges: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for feature in &eligible_features {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in &high_risk_train_rows {
            if let Some(v) = cohort::numeric_profile(&train_visits[i]).get(feature) {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        if lo.is_finite() {
            ranges.insert(feature.clone(), (lo, hi));
        }
    }

    let shap_by_id: BTreeMap<&str, &ShapVector> =
        shap.iter().map(|v| (v.sample_id.as_str(), v)).collect();
    let name_index: BTreeMap<&str, usize> = shap_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    // Deterministic narrative sample: evenly spaced test rows.
    let count = config.narrative_count.min(matrix_test.n_rows());
    let stride = if count == 0 {
        1
    } else {
        (matrix_test.n_rows() / count.max(1)).max(1)
    };
    let chosen: Vec<usize> = (0..count).map(|i| i * stride).collect();

    let mut narratives = Vec::with_capacity(count);
    let mut sources_by_patient = BTreeMap::new();
    let mut per_patient = BTreeMap::new();
    let mut manifest = Vec::new();
    for &i in &chosen {
        let visit_id = &matrix_test.row_ids[i];
        let Some(shap_vec) = shap_by_id.get(visit_id.as_str()) else { continue };
        let probability = model.predict_proba(matrix_test.row(i)).stage("explain")?;
        let visit = visit_by_id[visit_id.as_str()];
        let patient_values = cohort::numeric_profile(visit);
        let eligible_shap: BTreeMap<String, f64> = eligible_features
            .iter()
            .filter_map(|name| {
                name_index.get(name.as_str()).map(|&j| (name.clone(), shap_vec.phi[j]))
            })
            .collect();
        let bundle = explain::build_context(
            visit_id,
            &patient_values,
            probability,
            &stats,
            &eligible_shap,
            &ranges,
            config.narrative_k,
            config.decision_threshold,
        )
        .stage("explain")?;
        let (templated, sidecar) = explain::generate_narrative(&bundle);
        explain::verify_token_bijection(&templated.text, &sidecar).stage("explain")?;
        let (narrative, _polish) = explain::llm_polish(&templated, &sidecar, client);
        if let Some(dir) = out_dir {
            write_text(
                Some(dir),
                &format!("explain/narratives/{visit_id}.md"),
                &narrative.text,
            )
            .stage("explain")?;
            write_json(
                Some(dir),
                &format!("explain/narratives/{visit_id}.claims.json"),
                &sidecar,
            )
            .stage("explain")?;
        }
        manifest.push(serde_json::json!({
            "patient_id": visit_id,
            "narrative": format!("narratives/{visit_id}.md"),
            "claims": format!("narratives/{visit_id}.claims.json"),
        }));
        per_patient.insert(
            visit_id.clone(),
            PatientSources {
                patient_values: patient_values.clone(),
                shap: eligible_shap.clone(),
                probability,
            },
        );
        sources_by_patient.insert(
            visit_id.clone(),
            Sources {
                patient_values,
                cohort_stats: stats.clone(),
                shap: eligible_shap,
                probability,
                threshold: config.decision_threshold,
            },
        );
        narratives.push((narrative, sidecar));
    }
    write_json(out_dir, "explain/manifest.json", &manifest).stage("explain")?;
    let sources_file = SourcesFile {
        threshold: config.decision_threshold,
        narrative_k: config.narrative_k,
        cohort_stats: stats.clone(),
        per_patient,
    };
    write_json(out_dir, "explain/sources.json", &sources_file).stage("explain")?;

    Ok(ExplainOutput {
        narratives,
        sources: sources_by_patient,
        stats,
    })
}

/// Run the four-dimension checks over a batch and write the report.
pub fn assess_stage(
    narratives: &[(Narrative, ClaimSidecar)],
    sources: &BTreeMap<String, Sources>,
    rulebase: &Rulebase,
    k: usize,
    out_dir: Option<&Path>,
) -> Result<assess::AssessmentReport, PipelineError> {
    let report = assess::assess_batch(narratives, sources, rulebase, k).stage("assess")?;
    write_json(out_dir, "assess/report.json", &report).stage("assess")?;
    write_text(out_dir, "assess/report.md", &assess::report_markdown(&report)).stage("assess")?;
    Ok(report)
}

/// Next run directory under `out`: timestamped, never reusing an existing
/// path, so completed runs stay immutable.
pub fn fresh_run_dir(out: &Path) -> Result<PathBuf, std::io::Error> {
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let mut n = 0u32;
    loop {
        let candidate = if n == 0 {
            out.join(format!("run-{stamp}"))
        } else {
            out.join(format!("run-{stamp}-{n}"))
        };
        if !candidate.exists() {
            std::fs::create_dir_all(&candidate)?;
            return Ok(candidate);
        }
        n += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> PipelineConfig {
        let mut config = PipelineConfig::new(1_200, 42);
        config.narrative_count = 20;
        config
    }

    #[test]
    fn offline_pipeline_runs_end_to_end() {
        let config = small_config();
        let outcome = run_pipeline(&config, None, &ExtractClient::Offline).unwrap();
        assert_eq!(outcome.summary.variants.len(), 2);
        for rows in outcome.summary.variants.values() {
            assert_eq!(rows.len(), 4);
        }
        let report = outcome.assessment.unwrap();
        assert_eq!(report.error_rate, 0.0, "clean narratives must assess clean");
        assert!(!outcome.shap.is_empty());
    }

    #[test]
    fn artifacts_land_in_deterministic_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config();
        config.n_visits = 600;
        config.narrative_count = 5;
        run_pipeline(&config, Some(dir.path()), &ExtractClient::Offline).unwrap();
        for rel in [
            "cohort/visits.csv",
            "cohort/sdoh.jsonl",
            "cohort/vitals.jsonl",
            "cohort/gold.jsonl",
            "extract/report.json",
            "extract/extracted.jsonl",
            "harmonize/features_with_llm.csv",
            "harmonize/features_without_llm.csv",
            "train/metrics_with_llm.json",
            "attribution/importance_with_llm.svg",
            "explain/manifest.json",
            "assess/report.json",
            "summary.json",
        ] {
            assert!(dir.path().join(rel).exists(), "missing artifact {rel}");
        }
    }

    #[test]
    fn summary_bytes_are_reproducible() {
        let config = small_config();
        let a = run_pipeline(&config, None, &ExtractClient::Offline).unwrap();
        let b = run_pipeline(&config, None, &ExtractClient::Offline).unwrap();
        assert_eq!(
            serde_json::to_string(&a.summary).unwrap(),
            serde_json::to_string(&b.summary).unwrap()
        );
    }

    #[test]
    fn without_llm_variant_omits_extracted_columns() {
        let mut config = small_config();
        config.variant = VariantSelection::WithoutLlm;
        config.n_visits = 600;
        config.narrative_count = 3;
        let outcome = run_pipeline(&config, None, &ExtractClient::Offline).unwrap();
        assert!(outcome.summary.variants.contains_key("without_llm"));
        assert!(!outcome.summary.variants.contains_key("with_llm"));
        assert!(!outcome
            .shap_feature_names
            .iter()
            .any(|n| n.starts_with("chief_complaint=")));
    }

    #[test]
    fn fresh_run_dirs_never_collide() {
        let dir = tempfile::tempdir().unwrap();
        let a = fresh_run_dir(dir.path()).unwrap();
        let b = fresh_run_dir(dir.path()).unwrap();
        assert_ne!(a, b);
        assert!(a.exists() && b.exists());
    }
}
