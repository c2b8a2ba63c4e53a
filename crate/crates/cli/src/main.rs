//! `edrk`: composable subcommands over the synthetic ED-return pipeline.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 stage failure,
//! 4 built-in acceptance-check failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edrk_core::cohort;
use edrk_core::explain::{ClaimSidecar, Narrative};
use edrk_core::harmonize;
use edrk_core::learn;
use edrk_core::pipeline::{self, PipelineConfig, VariantSelection};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;
const EXIT_CHECK: u8 = 4;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: message.into() }
    }

    fn stage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_STAGE, message: message.into() }
    }

    fn check(message: impl Into<String>) -> Self {
        CliError { code: EXIT_CHECK, message: message.into() }
    }
}

trait StageResult<T> {
    fn or_stage(self) -> Result<T, CliError>;
}

impl<T, E: std::fmt::Display> StageResult<T> for Result<T, E> {
    fn or_stage(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::stage(e.to_string()))
    }
}

#[derive(Parser)]
#[command(
    name = "edrk",
    version,
    about = "Synthetic 30-day ED-return pipeline: cohort generation, feature \
             harmonization, text extraction, risk models, SHAP attribution, \
             narrative explanations, and narrative reliability assessment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Force the deterministic offline classifier (no network).
    #[arg(long)]
    offline: bool,
    /// Feature-set variant: with_llm, without_llm, or both.
    #[arg(long)]
    variant: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, CliError> {
        let text = std::fs::read_to_string(&self.config).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", self.config.display()))
        })?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(v) = &self.variant {
            config.variant = VariantSelection::parse(v)
                .ok_or_else(|| CliError::config(format!("unknown variant {v:?}")))?;
        }
        Ok(config)
    }

    fn client(&self, config: &PipelineConfig) -> Result<edrk_core::extract::ExtractClient, CliError> {
        config.make_client(self.offline).map_err(CliError::config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a calibrated synthetic cohort (visits CSV + JSONL sidecars).
    Generate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Output directory; cohort files land under <out>/cohort.
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify chief-complaint and SDoH texts; write fixture reports and
    /// per-visit categories.
    Extract {
        #[command(flatten)]
        common: ConfigArgs,
        /// Directory holding visits.csv / sdoh.jsonl / vitals.jsonl.
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the encoded feature matrix for one variant.
    Harmonize {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        cohort: PathBuf,
        /// extracted.jsonl from the extract stage (required for with_llm).
        #[arg(long)]
        extracted: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the model suite on a persisted feature matrix.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Directory holding features_<variant>.csv/.meta.json.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute SHAP, build context bundles, and write narrative + claims
    /// pairs from a completed run directory.
    Explain {
        #[command(flatten)]
        common: ConfigArgs,
        /// A run directory containing cohort/, harmonize/ and train/.
        #[arg(long)]
        run: PathBuf,
    },
    /// Cross-check narratives against their sources and report error rates.
    Assess {
        /// A run directory containing explain/.
        #[arg(long)]
        run: PathBuf,
    },
    /// Execute the full pipeline into a fresh timestamped run directory.
    Run {
        #[command(flatten)]
        common: ConfigArgs,
        /// Parent directory for run outputs (default: runs).
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

/// Single-variant resolution for the stage subcommands.
fn single_variant(config: &PipelineConfig) -> Result<pipeline::Variant, CliError> {
    match config.variant {
        VariantSelection::WithLlm | VariantSelection::Both => Ok(pipeline::Variant::WithLlm),
        VariantSelection::WithoutLlm => Ok(pipeline::Variant::WithoutLlm),
    }
}

fn load_extracted(
    path: &Path,
) -> Result<BTreeMap<String, BTreeMap<String, String>>, CliError> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.or_stage()?;
        let row: serde_json::Value = serde_json::from_str(&line).or_stage()?;
        let visit_id = row["visit_id"]
            .as_str()
            .ok_or_else(|| CliError::stage("extracted.jsonl row missing visit_id"))?
            .to_string();
        let mut cats = BTreeMap::new();
        if let Some(map) = row["categories"].as_object() {
            for (k, v) in map {
                if let Some(s) = v.as_str() {
                    cats.insert(k.clone(), s.to_string());
                }
            }
        }
        out.insert(visit_id, cats);
    }
    Ok(out)
}

fn eligible_and_labels(
    cohort_dir: &Path,
) -> Result<(Vec<cohort::VisitRecord>, BTreeMap<String, bool>), CliError> {
    let generated = cohort::read_cohort(cohort_dir).or_stage()?;
    let eligible = cohort::filter_eligible(&generated.visits);
    let labels = cohort::label_returns(&eligible).or_stage()?;
    Ok((eligible, labels))
}

fn cmd_generate(common: ConfigArgs, out: PathBuf) -> Result<(), CliError> {
    let config = common.load()?;
    let generated = cohort::generate_cohort(&config.cohort_spec()).or_stage()?;
    cohort::write_cohort(&out.join("cohort"), &generated.visits, Some(&generated.gold))
        .or_stage()?;
    println!(
        "generated {} visits (realized return rate {:.4}) under {}",
        generated.visits.len(),
        generated.realized_return_rate,
        out.join("cohort").display()
    );
    Ok(())
}

fn cmd_extract(common: ConfigArgs, cohort_dir: PathBuf, out: PathBuf) -> Result<(), CliError> {
    let config = common.load()?;
    let client = common.client(&config)?;
    let (eligible, _) = eligible_and_labels(&cohort_dir)?;
    let summary =
        pipeline::extraction_reports(&client, config.shots, config.seed, Some(&out))
            .map_err(CliError::stage)?;
    let cats = pipeline::extract_categories(&eligible, &client, config.shots, config.seed)
        .or_stage()?;
    let path = out.join("extract/extracted.jsonl");
    std::fs::create_dir_all(path.parent().unwrap()).or_stage()?;
    let mut body = String::new();
    for (visit_id, categories) in &cats {
        let row = serde_json::json!({"visit_id": visit_id, "categories": categories});
        body.push_str(&serde_json::to_string(&row).or_stage()?);
        body.push('\n');
    }
    std::fs::write(&path, body).or_stage()?;
    println!(
        "extracted categories for {} visits; fixture accuracy {:.3}",
        cats.len(),
        summary.chief_complaint.accuracy
    );
    Ok(())
}

fn cmd_harmonize(
    common: ConfigArgs,
    cohort_dir: PathBuf,
    extracted: Option<PathBuf>,
    out: PathBuf,
) -> Result<(), CliError> {
    let config = common.load()?;
    let variant = single_variant(&config)?;
    let (eligible, labels) = eligible_and_labels(&cohort_dir)?;
    let extracted_map = match (&extracted, variant) {
        (Some(path), _) => Some(load_extracted(path)?),
        (None, pipeline::Variant::WithLlm) => {
            return Err(CliError::config(
                "with_llm harmonization needs --extracted <extracted.jsonl>",
            ))
        }
        (None, pipeline::Variant::WithoutLlm) => None,
    };
    let output = pipeline::harmonize_stage(
        &config,
        &eligible,
        &labels,
        extracted_map.as_ref(),
        variant.as_str(),
        Some(&out),
    )
    .map_err(|e| CliError::stage(e.to_string()))?;
    println!(
        "encoded {} rows x {} columns into {}",
        output.matrix.n_rows(),
        output.matrix.n_cols(),
        out.join("harmonize").display()
    );
    Ok(())
}

fn cmd_train(common: ConfigArgs, features: PathBuf, out: PathBuf) -> Result<(), CliError> {
    let config = common.load()?;
    let variant = single_variant(&config)?;
    let matrix = harmonize::read_matrix(&features, &format!("features_{}", variant.as_str()))
        .or_stage()?;
    let (train_rows, test_rows) =
        pipeline::split_rows(&config, &matrix.labels, &matrix.group_ids)
            .map_err(|e| CliError::stage(e.to_string()))?;
    let matrix_train = matrix.subset(&train_rows);
    let matrix_test = matrix.subset(&test_rows);
    let (_, rows) =
        pipeline::train_stage(&config, &matrix_train, &matrix_test, variant.as_str(), Some(&out))
            .map_err(|e| CliError::stage(e.to_string()))?;
    for row in &rows {
        println!(
            "{:<10} auc {}",
            row.model,
            row.metrics
                .auc_roc
                .map(|a| format!("{a:.3}"))
                .unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}

fn cmd_explain(common: ConfigArgs, run: PathBuf) -> Result<(), CliError> {
    let config = common.load()?;
    let variant = single_variant(&config)?;
    let (eligible, labels) = eligible_and_labels(&run.join("cohort"))?;
    let matrix = harmonize::read_matrix(
        &run.join("harmonize"),
        &format!("features_{}", variant.as_str()),
    )
    .or_stage()?;
    let (train_rows, test_rows) =
        pipeline::split_rows(&config, &matrix.labels, &matrix.group_ids)
            .map_err(|e| CliError::stage(e.to_string()))?;
    let matrix_train = matrix.subset(&train_rows);
    let matrix_test = matrix.subset(&test_rows);
    let model = learn::read_model(&run.join(format!(
        "train/model_gbt_{}.json",
        variant.as_str()
    )))
    .or_stage()?;
    let attr = pipeline::attribute_stage(
        variant.as_str(),
        &matrix_train,
        &matrix_test,
        &model,
        config.attribution_sample_cap,
        Some(&run),
    )
    .map_err(|e| CliError::stage(e.to_string()))?;
    let client = common.client(&config)?;
    let output = pipeline::explain_stage(
        &config,
        &eligible,
        &labels,
        &matrix_train,
        &matrix_test,
        &model,
        &attr.vectors,
        &attr.names,
        &client,
        Some(&run),
    )
    .map_err(|e| CliError::stage(e.to_string()))?;
    println!(
        "wrote {} narrative/claims pairs under {}",
        output.narratives.len(),
        run.join("explain/narratives").display()
    );
    Ok(())
}

fn read_narratives(run: &Path) -> Result<Vec<(Narrative, ClaimSidecar)>, CliError> {
    let manifest: Vec<serde_json::Value> = serde_json::from_str(
        &std::fs::read_to_string(run.join("explain/manifest.json")).map_err(|e| {
            CliError::config(format!("cannot read explain manifest under {}: {e}", run.display()))
        })?,
    )
    .or_stage()?;
    let mut pairs = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let patient_id = entry["patient_id"]
            .as_str()
            .ok_or_else(|| CliError::stage("manifest entry missing patient_id"))?
            .to_string();
        let text = std::fs::read_to_string(
            run.join("explain").join(entry["narrative"].as_str().unwrap_or_default()),
        )
        .or_stage()?;
        let sidecar: ClaimSidecar = serde_json::from_str(
            &std::fs::read_to_string(
                run.join("explain").join(entry["claims"].as_str().unwrap_or_default()),
            )
            .or_stage()?,
        )
        .or_stage()?;
        pairs.push((Narrative { patient_id, text }, sidecar));
    }
    Ok(pairs)
}

fn cmd_assess(run: PathBuf) -> Result<(), CliError> {
    let pairs = read_narratives(&run)?;
    let sources_file: pipeline::SourcesFile = serde_json::from_str(
        &std::fs::read_to_string(run.join("explain/sources.json")).map_err(|e| {
            CliError::config(format!("cannot read explain/sources.json: {e}"))
        })?,
    )
    .or_stage()?;
    let sources = sources_file.to_sources();
    let rulebase = edrk_core::assess::default_rulebase();
    let report =
        pipeline::assess_stage(&pairs, &sources, &rulebase, sources_file.narrative_k, Some(&run))
            .map_err(|e| CliError::stage(e.to_string()))?;
    println!(
        "assessed {} narratives: {} failing, error rate {:.2}",
        report.n, report.failing, report.error_rate
    );
    Ok(())
}

fn cmd_run(common: ConfigArgs, out: PathBuf) -> Result<(), CliError> {
    let config = common.load()?;
    let client = common.client(&config)?;
    let run_dir = pipeline::fresh_run_dir(&out).or_stage()?;
    let outcome = pipeline::run_pipeline(&config, Some(&run_dir), &client)
        .map_err(|e| CliError::stage(e.to_string()))?;
    println!("run directory: {}", run_dir.display());
    for (variant, rows) in &outcome.summary.variants {
        for row in rows {
            println!(
                "{variant:<12} {:<10} acc {:.3} auc {}",
                row.model,
                row.metrics.accuracy,
                row.metrics
                    .auc_roc
                    .map(|a| format!("{a:.3}"))
                    .unwrap_or_else(|| "n/a".into())
            );
        }
    }
    // Built-in check: untampered narratives must assess perfectly clean.
    if let Some(assessment) = &outcome.assessment {
        if assessment.error_rate != 0.0 {
            return Err(CliError::check(format!(
                "clean-narrative assessment error rate {} (expected 0.0); see {}",
                assessment.error_rate,
                run_dir.join("assess/report.md").display()
            )));
        }
    }
    println!("summary: {}", run_dir.join("summary.json").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { common, out } => cmd_generate(common, out),
        Command::Extract { common, cohort, out } => cmd_extract(common, cohort, out),
        Command::Harmonize { common, cohort, extracted, out } => {
            cmd_harmonize(common, cohort, extracted, out)
        }
        Command::Train { common, features, out } => cmd_train(common, features, out),
        Command::Explain { common, run } => cmd_explain(common, run),
        Command::Assess { run } => cmd_assess(run),
        Command::Run { common, out } => cmd_run(common, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
