// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end orchestration: run configuration, stages and on-disk artifacts.
//!
//! Every stage reads its inputs from and writes its outputs to the run's
//! output directory, so stages can be run one at a time or all at once.
//!
//! | stage              | reads                                  | writes |
//! |--------------------|----------------------------------------|--------|
//! | `generate-dataset` | tokenizer, name pairs                  | `dataset.jsonl`, `dataset_manifest.json` |
//! | `run-patching`     | dataset, weights                       | `patching.json`, `mean_effect.csv`, `per_example_effects.csv` |
//! | `evaluate`         | dataset, weights, `patching.json`      | `evaluation.json`, `circuit.json`, several CSVs |
//! | `explain`          | dataset, weights, `circuit.json`       | `evidence.json`, `explanations.json` |
//! | `compare`          | `evidence.json`, `explanations.json`   | `quality.json`, `quality.csv` |
//! | `report`           | all of the above                       | `summary.json`, `summary.txt`, `figures/*.svg` |

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuit::{
    augmentation_test, classify_failures, comprehensiveness_histogram, select_circuit, AugmentationResult,
    ComprehensivenessHistogram, FailureSummary, FailureThresholds,
};
use crate::dataset::{
    default_templates, generate_dataset, parse_name_pairs, read_jsonl, write_jsonl, IoiExample, PromptTemplate,
    DEFAULT_NAME_PAIRS,
};
use crate::error::{Error, Result};
use crate::explain::{
    backend_from_config, extract_evidence, generate_llm_explanations, summarize_quality, template_explain,
    CircuitEvidence, Explanation, LlmBatch, LlmConfig, QualityComparison,
};
use crate::faithfulness::{
    attention_entropy_circuit, evaluate_circuit, mean_std, random_circuit, Aggregates, Circuit, CleanRunSummary,
    FaithfulnessReport,
};
use crate::model::{all_head_contributions, forward, load_weights, HeadIndex, ModelConfig, WeightStore};
use crate::patching::{logit_diff, run_patching_sweep, AblationMode, HeadMatrix, MeanActivations, SweepOutput};
use crate::tokenizer::BpeTokenizer;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const STAGES: [&str; 6] = [
    "generate-dataset",
    "run-patching",
    "evaluate",
    "explain",
    "compare",
    "report",
];

/// Everything that determines a run. The defaults are the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// A `model.safetensors` file or a directory holding one (plus an optional `config.json`).
    pub weights: PathBuf,
    /// Directory with `vocab.json` and `merges.txt`.
    pub tokenizer: PathBuf,
    /// `IO,S` name-pair file; the bundled list when unset.
    pub name_pairs: Option<PathBuf>,
    pub seed: u64,
    pub dataset_size: usize,
    pub subset_size: usize,
    pub k: usize,
    pub ablation: AblationMode,
    /// Random-baseline seeds; the first one is the headline row.
    pub baseline_seeds: Vec<u64>,
    pub thresholds: FailureThresholds,
    pub augmentation_head: HeadIndex,
    pub llm: LlmConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            weights: PathBuf::from("data/gpt2"),
            tokenizer: PathBuf::from("data/gpt2"),
            name_pairs: None,
            seed: 42,
            dataset_size: 50,
            subset_size: 30,
            k: 6,
            ablation: AblationMode::MeanSubstitute,
            baseline_seeds: (42..62).collect(),
            thresholds: FailureThresholds::default(),
            augmentation_head: HeadIndex::new(10, 10),
            llm: LlmConfig::default(),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return bad("circuit size k must be at least 1");
        }
        if self.baseline_seeds.is_empty() {
            return bad("at least one random-baseline seed is required");
        }
        let t = &self.thresholds;
        if !(0.0..=1.0).contains(&t.low) || !(t.low..=1.0).contains(&t.high) {
            return bad("failure thresholds must satisfy 0 <= low <= high <= 1");
        }
        if !(t.single_head_share > 0.0 && t.single_head_share <= 1.0) {
            return bad("single-head share must lie in (0, 1]");
        }
        if self.llm.concurrency == 0 {
            return bad("LLM concurrency must be at least 1");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Identifies the code, configuration and conventions behind an artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub ablation_mode: AblationMode,
    pub notes: Vec<String>,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            tool: "headlens".into(),
            version: CODE_VERSION.into(),
            config_hash: config.hash(),
            seed: config.seed,
            ablation_mode: config.ablation,
            notes: vec![
                "effect recovery patches a head's clean output into the corrupted run at every position".into(),
                "direct logit attribution freezes the final layer-norm scale at its clean-run value".into(),
                "sufficiency and comprehensiveness are clamped to [0, 1]; raw values are kept".into(),
                "headline F1 is the harmonic mean of mean sufficiency and mean comprehensiveness".into(),
                "standard deviations are population standard deviations".into(),
            ],
            config: config.clone(),
        }
    }

    /// `#`-prefixed header for CSV and text outputs.
    pub fn comment_header(&self) -> String {
        format!(
            "# {} {} config={} seed={} ablation={}\n",
            self.tool, self.version, self.config_hash, self.seed, self.ablation_mode
        )
    }
}

/// A JSON artifact together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    pub data: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub size: usize,
    pub available: usize,
    pub subset_size: usize,
    pub n_name_pairs: usize,
    pub n_templates: usize,
    pub name_pairs_sha256: String,
    pub templates: Vec<PromptTemplate>,
}

/// Clean and corrupted logit differences of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleBehavior {
    pub example_id: usize,
    pub ld_clean: f32,
    pub ld_corrupt: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_ld_clean: f64,
    pub mean_ld_corrupt: f64,
    pub examples: Vec<ExampleBehavior>,
}

impl Behavior {
    pub fn from_examples(examples: Vec<ExampleBehavior>) -> Self {
        let n = examples.len();
        let correct = examples.iter().filter(|e| e.ld_clean > 0.0).count();
        let clean: Vec<f64> = examples.iter().map(|e| e.ld_clean as f64).collect();
        let corrupt: Vec<f64> = examples.iter().map(|e| e.ld_corrupt as f64).collect();
        Self {
            n,
            correct,
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            mean_ld_clean: mean_std(&clean).0,
            mean_ld_corrupt: mean_std(&corrupt).0,
            examples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchingArtifact {
    pub behavior: Behavior,
    pub sweep: SweepOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSeedRow {
    pub seed: u64,
    pub heads: Vec<HeadIndex>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sufficiency: f64,
    pub comprehensiveness: f64,
    pub f1: f64,
}

impl From<&Aggregates> for MetricRow {
    fn from(a: &Aggregates) -> Self {
        Self {
            sufficiency: a.sufficiency_mean,
            comprehensiveness: a.comprehensiveness_mean,
            f1: a.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationArtifact {
    pub circuit: Circuit,
    /// Sum of the circuit heads' mean effects.
    pub coverage: f64,
    pub circuit_report: FaithfulnessReport,
    pub attention_baseline: FaithfulnessReport,
    /// First baseline seed.
    pub random_baseline: FaithfulnessReport,
    pub random_seeds: Vec<RandomSeedRow>,
    /// Mean over all baseline seeds.
    pub random_mean: MetricRow,
    pub histogram: ComprehensivenessHistogram,
    pub failures: FailureSummary,
    pub augmentation: Option<AugmentationResult>,
    pub augmentation_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationsArtifact {
    pub prompt_version: String,
    pub template: Vec<Explanation>,
    pub llm: Option<LlmBatch>,
}

/// Where a stage stands inside `run-pipeline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub status: String,
    pub completed_stages: Vec<String>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
}

pub const STATUS_FILE: &str = "run_status.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(path, &(text + "\n"))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        let stage = producing_stage(path);
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            stage,
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

/// The stage that writes the artifact at `path`.
fn producing_stage(path: &Path) -> &'static str {
    match path.file_name().and_then(|n| n.to_str()).unwrap_or_default() {
        "dataset.jsonl" | "dataset_manifest.json" => "generate-dataset",
        "patching.json" | "mean_effect.csv" => "run-patching",
        "evaluation.json" | "circuit.json" => "evaluate",
        "evidence.json" | "explanations.json" => "explain",
        "quality.json" => "compare",
        _ => "run-pipeline",
    }
}

/// Resolves the checkpoint file and its architecture.
pub fn resolve_weights(path: &Path) -> Result<(PathBuf, ModelConfig)> {
    let (file, dir) = if path.is_dir() {
        (path.join("model.safetensors"), path.to_path_buf())
    } else {
        (
            path.to_path_buf(),
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        )
    };
    if !file.is_file() {
        return Err(Error::io(
            &file,
            std::io::Error::new(std::io::ErrorKind::NotFound, "weights file not found"),
        ));
    }
    let config_json = dir.join("config.json");
    let config = if config_json.is_file() {
        ModelConfig::from_hf_config(&config_json)?
    } else {
        ModelConfig::gpt2_small()
    };
    Ok((file, config))
}

/// One run: configuration plus lazily loaded model and tokenizer.
pub struct Pipeline {
    config: RunConfig,
    provenance: Provenance,
    weights: OnceLock<WeightStore>,
    tokenizer: OnceLock<BpeTokenizer>,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            provenance: Provenance::new(&config),
            config,
            weights: OnceLock::new(),
            tokenizer: OnceLock::new(),
        })
    }

    /// Uses `weights` instead of loading the configured checkpoint.
    pub fn with_weights(config: RunConfig, weights: WeightStore) -> Result<Self> {
        let p = Self::new(config)?;
        let _ = p.weights.set(weights);
        Ok(p)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    pub fn weights(&self) -> Result<&WeightStore> {
        if let Some(w) = self.weights.get() {
            return Ok(w);
        }
        let (file, cfg) = resolve_weights(&self.config.weights)?;
        log::info!("loading weights from {}", file.display());
        let w = load_weights(&file, &cfg)?;
        Ok(self.weights.get_or_init(|| w))
    }

    pub fn tokenizer(&self) -> Result<&BpeTokenizer> {
        if let Some(t) = self.tokenizer.get() {
            return Ok(t);
        }
        let t = BpeTokenizer::from_dir(&self.config.tokenizer)?;
        Ok(self.tokenizer.get_or_init(|| t))
    }

    fn artifact<T>(&self, data: T) -> Artifact<T> {
        Artifact {
            provenance: self.provenance.clone(),
            data,
        }
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<()> {
        write_text(&self.out(name), &(self.provenance.comment_header() + body))
    }

    pub fn load_dataset(&self) -> Result<Vec<IoiExample>> {
        let path = self.out("dataset.jsonl");
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                stage: "generate-dataset",
            });
        }
        read_jsonl(&path)
    }

    fn nonempty_dataset(&self) -> Result<Vec<IoiExample>> {
        let data = self.load_dataset()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(data)
    }

    pub fn generate_dataset(&self) -> Result<DatasetManifest> {
        let pairs_text = match &self.config.name_pairs {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => DEFAULT_NAME_PAIRS.to_string(),
        };
        let pairs = parse_name_pairs(&pairs_text)?;
        let templates = default_templates();
        let mut data = generate_dataset(self.tokenizer()?, &pairs, &templates, self.config.seed)?;
        let available = data.len();
        if self.config.dataset_size > available {
            return Err(Error::Config(format!(
                "dataset size {} exceeds the {available} available prompts",
                self.config.dataset_size
            )));
        }
        data.truncate(self.config.dataset_size);
        let dir = &self.config.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&self.out("dataset.jsonl"), &data)?;
        let manifest = DatasetManifest {
            seed: self.config.seed,
            size: data.len(),
            available,
            subset_size: self.config.subset_size.min(data.len()),
            n_name_pairs: pairs.len(),
            n_templates: templates.len(),
            name_pairs_sha256: hex(&Sha256::digest(pairs_text.as_bytes())),
            templates,
        };
        write_json(&self.out("dataset_manifest.json"), &self.artifact(&manifest))?;
        Ok(manifest)
    }

    pub fn run_patching(&self) -> Result<PatchingArtifact> {
        let data = self.nonempty_dataset()?;
        let w = self.weights()?;
        let behavior = data
            .par_iter()
            .map(|ex| {
                let clean = crate::model::final_logits(w, &ex.clean_tokens, &[])?;
                let corrupt = crate::model::final_logits(w, &ex.corrupt_tokens, &[])?;
                Ok(ExampleBehavior {
                    example_id: ex.id,
                    ld_clean: logit_diff(&clean, ex.io_id, ex.s_id),
                    ld_corrupt: logit_diff(&corrupt, ex.io_id, ex.s_id),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let behavior = Behavior::from_examples(behavior);
        log::info!(
            "accuracy {}/{}; mean LD clean {:.3}, corrupt {:.3}",
            behavior.correct,
            behavior.n,
            behavior.mean_ld_clean,
            behavior.mean_ld_corrupt
        );
        let sweep = run_patching_sweep(w, &data)?;

        let mut long = String::from("example_id,head,effect,contribution\n");
        for r in &sweep.results {
            for ((h, e), (_, c)) in r.effect.heads().zip(r.contribution.heads()) {
                long.push_str(&format!("{},{h},{e},{c}\n", r.example_id));
            }
        }
        self.write_csv("per_example_effects.csv", &long)?;
        self.write_csv("mean_effect.csv", &sweep.mean_effect.to_csv())?;
        let artifact = PatchingArtifact { behavior, sweep };
        write_json(&self.out("patching.json"), &self.artifact(&artifact))?;
        Ok(artifact)
    }

    fn clean_pass(&self, data: &[IoiExample]) -> Result<(Vec<crate::model::ForwardOutput>, Vec<CleanRunSummary>)> {
        let w = self.weights()?;
        let runs = data
            .par_iter()
            .map(|ex| forward(w, &ex.clean_tokens, &[]))
            .collect::<Result<Vec<_>>>()?;
        let summaries = data
            .iter()
            .zip(&runs)
            .map(|(ex, r)| CleanRunSummary::new(w, ex, &r.cache, &r.logits))
            .collect();
        Ok((runs, summaries))
    }

    pub fn evaluate(&self) -> Result<EvaluationArtifact> {
        let data = self.nonempty_dataset()?;
        let w = self.weights()?;
        let cfg = w.config();
        let patching: Artifact<PatchingArtifact> = read_json(&self.out("patching.json"))?;
        let mean_effect = &patching.data.sweep.mean_effect;
        if (mean_effect.n_layers, mean_effect.n_heads) != (cfg.n_layers, cfg.n_heads) {
            return Err(Error::Dataset("patching.json was produced by a different model".into()));
        }
        let circuit = select_circuit(mean_effect, self.config.k)?;
        let coverage: f64 = circuit.entries().iter().filter_map(|c| c.mean_effect).sum();

        let (runs, clean) = self.clean_pass(&data)?;
        let mode = self.config.ablation;
        let means = match mode {
            AblationMode::MeanSubstitute => Some(MeanActivations::compute(w, &data)?),
            AblationMode::Zero => None,
        };
        let means = means.as_ref();
        let circuit_report = evaluate_circuit(w, &data, &clean, &circuit, mode, means)?;

        let caches: Vec<_> = runs.iter().map(|r| &r.cache).collect();
        let entropy = attention_entropy_circuit(cfg, &caches, self.config.k)?;
        let attention_baseline = evaluate_circuit(w, &data, &clean, &entropy, mode, means)?;

        let mut random_seeds = Vec::new();
        let mut random_baseline = None;
        for &seed in &self.config.baseline_seeds {
            let rc = random_circuit(cfg, seed, self.config.k)?;
            let report = evaluate_circuit(w, &data, &clean, &rc, mode, means)?;
            random_seeds.push(RandomSeedRow {
                seed,
                heads: rc.heads(),
                aggregates: report.aggregates.clone(),
            });
            random_baseline.get_or_insert(report);
        }
        let random_baseline = random_baseline.expect("at least one seed");
        let avg =
            |f: fn(&Aggregates) -> f64| mean_std(&random_seeds.iter().map(|r| f(&r.aggregates)).collect::<Vec<_>>()).0;
        let random_mean = MetricRow {
            sufficiency: avg(|a| a.sufficiency_mean),
            comprehensiveness: avg(|a| a.comprehensiveness_mean),
            f1: avg(|a| a.f1),
        };

        let thresholds = self.config.thresholds;
        let histogram = comprehensiveness_histogram(&circuit_report, &thresholds);
        let failures = classify_failures(&circuit_report, &clean, &circuit, &thresholds);

        let extra = self.config.augmentation_head;
        let (augmentation, augmentation_note) = if extra.check(cfg).is_err() {
            (
                None,
                Some(format!("{extra} does not exist in this model; augmentation skipped")),
            )
        } else if circuit.contains(extra) {
            (
                None,
                Some(format!("{extra} is already in the circuit; augmentation skipped")),
            )
        } else {
            let r = augmentation_test(w, &data, &clean, &circuit, &circuit_report, extra, mode, means)?;
            (Some(r), None)
        };
        if let Some(note) = &augmentation_note {
            log::warn!("{note}");
        }

        let artifact = EvaluationArtifact {
            circuit,
            coverage,
            circuit_report,
            attention_baseline,
            random_baseline,
            random_seeds,
            random_mean,
            histogram,
            failures,
            augmentation,
            augmentation_note,
        };
        self.write_evaluation(&artifact)?;
        Ok(artifact)
    }

    fn write_evaluation(&self, a: &EvaluationArtifact) -> Result<()> {
        write_json(&self.out("evaluation.json"), &self.artifact(a))?;
        write_json(&self.out("circuit.json"), &self.artifact(&a.circuit))?;
        self.write_csv("faithfulness_examples.csv", &a.circuit_report.to_csv())?;

        let mut circuit_csv = String::from("head,role,mean_effect\n");
        for c in a.circuit.entries() {
            circuit_csv.push_str(&format!(
                "{},{},{}\n",
                c.head,
                c.role,
                c.mean_effect.unwrap_or(f64::NAN)
            ));
        }
        self.write_csv("circuit.csv", &circuit_csv)?;

        let mut baselines = String::from(
            "method,seed,heads,n,sufficiency_mean,sufficiency_std,comprehensiveness_mean,comprehensiveness_std,f1\n",
        );
        let mut row = |method: &str, seed: Option<u64>, heads: &[HeadIndex], g: &Aggregates| {
            let heads: Vec<String> = heads.iter().map(ToString::to_string).collect();
            baselines.push_str(&format!(
                "{method},{},{},{},{},{},{},{},{}\n",
                seed.map(|s| s.to_string()).unwrap_or_default(),
                heads.join(" "),
                g.n,
                g.sufficiency_mean,
                g.sufficiency_std,
                g.comprehensiveness_mean,
                g.comprehensiveness_std,
                g.f1
            ));
        };
        row("circuit", None, &a.circuit_report.circuit, &a.circuit_report.aggregates);
        row(
            "attention_entropy",
            None,
            &a.attention_baseline.circuit,
            &a.attention_baseline.aggregates,
        );
        for r in &a.random_seeds {
            row("random", Some(r.seed), &r.heads, &r.aggregates);
        }
        self.write_csv("baselines.csv", &baselines)?;
        self.write_csv("histogram.csv", &a.histogram.to_csv())?;
        self.write_csv("failures.csv", &a.failures.to_csv())?;
        if let Some(aug) = &a.augmentation {
            self.write_csv("augmentation.csv", &aug.to_csv())?;
        }
        Ok(())
    }

    /// Evidence for the comparison subset (the first `subset_size` examples).
    pub fn collect_evidence(&self, circuit: &Circuit) -> Result<Vec<CircuitEvidence>> {
        let data = self.nonempty_dataset()?;
        let n = self.config.subset_size.min(data.len());
        let w = self.weights()?;
        let tok = self.tokenizer()?;
        data[..n]
            .par_iter()
            .map(|ex| {
                let run = forward(w, &ex.clean_tokens, &[])?;
                let contrib = HeadMatrix::from_array(&all_head_contributions(w, &run.cache, ex.io_id, ex.s_id));
                extract_evidence(tok, ex, &run.cache, &run.logits, circuit, &contrib)
            })
            .collect()
    }

    pub fn explain(&self) -> Result<ExplanationsArtifact> {
        let circuit: Artifact<Circuit> = read_json(&self.out("circuit.json"))?;
        let evidence = self.collect_evidence(&circuit.data)?;
        let template = evidence.iter().map(template_explain).collect::<Result<Vec<_>>>()?;
        let llm = match backend_from_config(&self.config.llm)? {
            Some(client) => Some(generate_llm_explanations(
                &evidence,
                client.as_ref(),
                self.config.llm.concurrency,
            )?),
            None => {
                log::info!("no LLM endpoint or mock configured; writing template explanations only");
                None
            }
        };
        let artifact = ExplanationsArtifact {
            prompt_version: crate::explain::llm::PROMPT_VERSION.into(),
            template,
            llm,
        };
        write_json(&self.out("evidence.json"), &self.artifact(&evidence))?;
        write_json(&self.out("explanations.json"), &self.artifact(&artifact))?;
        Ok(artifact)
    }

    pub fn compare(&self) -> Result<QualityComparison> {
        let evidence: Artifact<Vec<CircuitEvidence>> = read_json(&self.out("evidence.json"))?;
        let explanations: Artifact<ExplanationsArtifact> = read_json(&self.out("explanations.json"))?;
        let cmp = summarize_quality(&evidence.data, explanations.data.template, explanations.data.llm)?;
        write_json(&self.out("quality.json"), &self.artifact(&cmp))?;
        self.write_csv("quality.csv", &cmp.to_csv())?;

        let mut rows = String::from("example_id,method,overall,word_count,text\n");
        for s in cmp.template_explanations.iter().chain(&cmp.llm_explanations) {
            let text = s.explanation.text.replace('"', "\"\"");
            rows.push_str(&format!(
                "{},{},{},{},\"{text}\"\n",
                s.explanation.evidence_id, s.explanation.method, s.score.overall, s.explanation.word_count
            ));
        }
        self.write_csv("explanations.csv", &rows)?;
        Ok(cmp)
    }

    pub fn report(&self) -> Result<crate::report::ReportFiles> {
        crate::report::write_report(&self.config.output_dir, &self.provenance)
    }

    fn run_stage<T>(&self, stage: &'static str, status: &mut RunStatus, f: impl FnOnce() -> Result<T>) -> Result<T> {
        log::info!("stage {stage}");
        match f() {
            Ok(v) => {
                status.completed_stages.push(stage.into());
                write_json(&self.out(STATUS_FILE), status)?;
                Ok(v)
            }
            Err(e) => {
                status.status = "incomplete".into();
                status.failed_stage = Some(stage.into());
                status.error = Some(e.to_string());
                if let Err(io) = write_json(&self.out(STATUS_FILE), status) {
                    log::error!("could not record run status: {io}");
                }
                Err(e.in_stage(stage))
            }
        }
    }

    /// Runs every stage in order. Refuses a non-empty output directory unless `force`.
    pub fn run_all(&self, force: bool) -> Result<crate::report::RunSummary> {
        let dir = &self.config.output_dir;
        let occupied = std::fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
        if occupied && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&self.out("run_config.json"), &self.artifact(&self.config))?;
        let mut status = RunStatus {
            status: "running".into(),
            completed_stages: Vec::new(),
            failed_stage: None,
            error: None,
        };
        write_json(&self.out(STATUS_FILE), &status)?;

        self.run_stage("generate-dataset", &mut status, || self.generate_dataset())?;
        self.run_stage("run-patching", &mut status, || self.run_patching())?;
        self.run_stage("evaluate", &mut status, || self.evaluate())?;
        self.run_stage("explain", &mut status, || self.explain())?;
        self.run_stage("compare", &mut status, || self.compare())?;
        let files = self.run_stage("report", &mut status, || self.report())?;

        status.status = "complete".into();
        write_json(&self.out(STATUS_FILE), &status)?;
        let mut summary = files.summary;
        summary.status = status.status;
        write_json(&self.out("summary.json"), &self.artifact(&summary))?;
        Ok(summary)
    }
}

/// Completed stages recorded in the output directory, if any.
pub fn read_status(dir: &Path) -> Option<RunStatus> {
    read_json(&dir.join(STATUS_FILE)).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_configuration() {
        let c = RunConfig::default();
        assert_eq!((c.seed, c.dataset_size, c.subset_size, c.k), (42, 50, 30, 6));
        assert_eq!(c.ablation, AblationMode::MeanSubstitute);
        assert_eq!(c.baseline_seeds.len(), 20);
        assert_eq!(c.baseline_seeds[0], 42);
        assert_eq!(c.augmentation_head.to_string(), "L10H10");
        assert_eq!(
            (c.thresholds.low, c.thresholds.high, c.thresholds.single_head_share),
            (0.15, 0.25, 0.10)
        );
        c.validate().unwrap();
    }

    #[test]
    fn default_config_hash_is_pinned() {
        assert_eq!(
            RunConfig::default().hash(),
            "04ba0cd4cae5758286c7958e66eb0d900eb1f21db422afd09fc8f587cf6bdd52"
        );
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let c = RunConfig::default();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.k, 6);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 7}"#).is_err());
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let mut c = RunConfig {
            k: 0,
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().is_config_error());
        c.k = 6;
        c.thresholds.low = 0.5;
        assert!(c.validate().is_err());
        c.thresholds.low = 0.15;
        c.baseline_seeds.clear();
        assert!(c.validate().is_err());
    }
}
