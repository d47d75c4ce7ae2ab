// SPDX-License-Identifier: MIT OR Apache-2.0

//! `headlens` command-line interface.
//!
//! Exit codes: 0 success, 1 stage failure, 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use headlens::patching::AblationMode;
use headlens::pipeline::{Pipeline, RunConfig};
use headlens::HeadIndex;

#[derive(Parser)]
#[command(
    name = "headlens",
    version,
    about = "Circuit discovery, explanation and faithfulness for IOI in GPT-2"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    run: RunArgs,

    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
}

#[derive(Subcommand)]
enum Command {
    /// Build the IOI prompt set and its manifest.
    GenerateDataset,
    /// Patch every head on every prompt and record effect recovery.
    RunPatching,
    /// Select the circuit and compute faithfulness, baselines and failure analysis.
    Evaluate,
    /// Extract circuit evidence and generate template (and LLM) explanations.
    Explain,
    /// Score explanations and compare generation methods.
    Compare,
    /// Write the summary and SVG figures from existing results.
    Report,
    /// Run every stage in order.
    RunPipeline {
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Print the effective configuration as JSON.
    ShowConfig,
}

/// Overrides applied on top of the defaults (or `--config`).
#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `model.safetensors` or a directory containing it.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Directory with vocab.json and merges.txt.
    #[arg(long, global = true)]
    tokenizer: Option<PathBuf>,
    /// `IO,S` name-pair file.
    #[arg(long, global = true)]
    name_pairs: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of prompts.
    #[arg(long, global = true)]
    size: Option<usize>,
    /// Prompts used for the explanation comparison.
    #[arg(long, global = true)]
    subset: Option<usize>,
    /// Circuit size.
    #[arg(short, long, global = true)]
    k: Option<usize>,
    /// `zero` or `mean-substitute`.
    #[arg(long, global = true)]
    ablation: Option<AblationMode>,
    /// Comma-separated random-baseline seeds; the first is the headline row.
    #[arg(long, global = true, value_delimiter = ',')]
    baseline_seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    low_threshold: Option<f64>,
    #[arg(long, global = true)]
    high_threshold: Option<f64>,
    #[arg(long, global = true)]
    single_head_share: Option<f64>,
    /// Head added in the augmentation test, e.g. L10H10.
    #[arg(long, global = true)]
    augmentation_head: Option<HeadIndex>,
    /// OpenAI-compatible base URL, e.g. https://api.openai.com/v1.
    #[arg(long, global = true)]
    llm_endpoint: Option<String>,
    #[arg(long, global = true)]
    llm_model: Option<String>,
    /// Environment variable holding the LLM bearer token.
    #[arg(long, global = true)]
    llm_api_key_env: Option<String>,
    /// Replay canned LLM responses from this JSON file instead of calling an endpoint.
    #[arg(long, global = true)]
    llm_mock: Option<PathBuf>,
    #[arg(long, global = true)]
    llm_concurrency: Option<usize>,
    /// Log LLM request and response bodies (token redacted).
    #[arg(long, global = true)]
    llm_debug: bool,
    /// Output directory.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> headlens::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set!(
            weights => weights,
            tokenizer => tokenizer,
            seed => seed,
            size => dataset_size,
            subset => subset_size,
            k => k,
            ablation => ablation,
            baseline_seeds => baseline_seeds,
            low_threshold => thresholds.low,
            high_threshold => thresholds.high,
            single_head_share => thresholds.single_head_share,
            augmentation_head => augmentation_head,
            llm_model => llm.model,
            llm_api_key_env => llm.api_key_env,
            llm_concurrency => llm.concurrency,
            out => output_dir,
        );
        if self.name_pairs.is_some() {
            c.name_pairs = self.name_pairs;
        }
        if self.llm_endpoint.is_some() {
            c.llm.endpoint = self.llm_endpoint;
        }
        if self.llm_mock.is_some() {
            c.llm.mock_responses = self.llm_mock;
        }
        c.llm.debug |= self.llm_debug;
        c.validate()?;
        Ok(c)
    }
}

fn run(command: Command, config: RunConfig) -> headlens::Result<()> {
    if let Command::ShowConfig = command {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(());
    }
    let out = config.output_dir.clone();
    let p = Pipeline::new(config)?;
    match command {
        Command::GenerateDataset => {
            let m = p.generate_dataset().map_err(|e| e.in_stage("generate-dataset"))?;
            println!(
                "wrote {} prompts (seed {}) to {}",
                m.size,
                m.seed,
                out.join("dataset.jsonl").display()
            );
        }
        Command::RunPatching => {
            let a = p.run_patching().map_err(|e| e.in_stage("run-patching"))?;
            let top: Vec<String> = a
                .sweep
                .mean_effect
                .ranked()
                .iter()
                .take(6)
                .map(|(h, v)| format!("{h} {:.1}%", v * 100.0))
                .collect();
            println!(
                "accuracy {}/{}; top heads: {}",
                a.behavior.correct,
                a.behavior.n,
                top.join(", ")
            );
        }
        Command::Evaluate => {
            let e = p.evaluate().map_err(|e| e.in_stage("evaluate"))?;
            let g = &e.circuit_report.aggregates;
            println!(
                "circuit {}: sufficiency {:.1}%, comprehensiveness {:.1}%, F1 {:.1}%",
                e.circuit.names().join(" "),
                g.sufficiency_mean * 100.0,
                g.comprehensiveness_mean * 100.0,
                g.f1 * 100.0
            );
        }
        Command::Explain => {
            let x = p.explain().map_err(|e| e.in_stage("explain"))?;
            let llm = x.llm.as_ref().map(|b| b.explanations.len()).unwrap_or(0);
            println!("{} template and {llm} LLM explanations", x.template.len());
        }
        Command::Compare => {
            let c = p.compare().map_err(|e| e.in_stage("compare"))?;
            print!("{}", c.to_csv());
        }
        Command::Report => {
            let r = p.report().map_err(|e| e.in_stage("report"))?;
            print!("{}", r.summary.to_text(p.provenance()));
        }
        Command::RunPipeline { force } => {
            let s = p.run_all(force)?;
            print!("{}", s.to_text(p.provenance()));
        }
        Command::ShowConfig => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .parse_default_env()
        .init();
    let config = match cli.run.into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
