// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run summary, plain-text report and SVG figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::explain::QualityComparison;
use crate::faithfulness::Role;
use crate::model::HeadIndex;
use crate::patching::HeadMatrix;
use crate::pipeline::{
    read_json, read_status, write_text, Artifact, EvaluationArtifact, MetricRow, PatchingArtifact, Provenance,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitRow {
    pub head: HeadIndex,
    pub role: Role,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRow {
    pub head: HeadIndex,
    pub f1_before: f64,
    pub f1_after: f64,
}

/// Headline numbers of a run, one field per reported metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// `complete`, or `incomplete` when some stage did not finish.
    pub status: String,
    pub n_examples: usize,
    pub model_accuracy: f64,
    pub clean_logit_difference: f64,
    pub corrupt_logit_difference: f64,
    pub circuit: Vec<CircuitRow>,
    pub circuit_coverage: f64,
    pub sufficiency_mean: f64,
    pub sufficiency_std: f64,
    pub comprehensiveness_mean: f64,
    pub comprehensiveness_std: f64,
    pub f1: f64,
    pub f1_per_example_mean: f64,
    pub confidence_comprehensiveness_r: Option<f64>,
    pub attention_baseline: MetricRow,
    pub attention_baseline_heads: Vec<HeadIndex>,
    pub random_baseline: MetricRow,
    pub random_baseline_seed: u64,
    pub random_baseline_seed_mean: MetricRow,
    pub low_comprehensiveness_fraction: f64,
    pub near_threshold_fraction: f64,
    pub high_comprehensiveness_fraction: f64,
    pub failure_categories: BTreeMap<String, usize>,
    pub top_non_circuit_head: Option<(HeadIndex, f64)>,
    pub augmentation: Option<AugmentationRow>,
    pub template_quality: Option<f64>,
    pub template_word_count: Option<f64>,
    pub llm_quality: Option<f64>,
    pub llm_word_count: Option<f64>,
    pub quality_improvement: Option<f64>,
    pub excluded_examples: usize,
}

impl RunSummary {
    pub fn from_artifacts(
        patching: &PatchingArtifact,
        eval: &EvaluationArtifact,
        quality: Option<&QualityComparison>,
    ) -> Self {
        let agg = &eval.circuit_report.aggregates;
        let (low, near, high) = eval.histogram.fractions();
        Self {
            status: "complete".into(),
            n_examples: patching.behavior.n,
            model_accuracy: patching.behavior.accuracy,
            clean_logit_difference: patching.behavior.mean_ld_clean,
            corrupt_logit_difference: patching.behavior.mean_ld_corrupt,
            circuit: eval
                .circuit
                .entries()
                .iter()
                .map(|c| CircuitRow {
                    head: c.head,
                    role: c.role,
                    effect: c.mean_effect.unwrap_or(0.0),
                })
                .collect(),
            circuit_coverage: eval.coverage,
            sufficiency_mean: agg.sufficiency_mean,
            sufficiency_std: agg.sufficiency_std,
            comprehensiveness_mean: agg.comprehensiveness_mean,
            comprehensiveness_std: agg.comprehensiveness_std,
            f1: agg.f1,
            f1_per_example_mean: agg.f1_per_example_mean,
            confidence_comprehensiveness_r: agg.confidence_comprehensiveness_r,
            attention_baseline: (&eval.attention_baseline.aggregates).into(),
            attention_baseline_heads: eval.attention_baseline.circuit.clone(),
            random_baseline: (&eval.random_baseline.aggregates).into(),
            random_baseline_seed: eval.random_seeds.first().map(|r| r.seed).unwrap_or_default(),
            random_baseline_seed_mean: eval.random_mean,
            low_comprehensiveness_fraction: low,
            near_threshold_fraction: near,
            high_comprehensiveness_fraction: high,
            failure_categories: eval
                .failures
                .by_category
                .iter()
                .map(|(c, n)| (c.to_string(), *n))
                .collect(),
            top_non_circuit_head: eval.failures.top_non_circuit_frequency.first().copied(),
            augmentation: eval.augmentation.as_ref().map(|a| AugmentationRow {
                head: a.extra_head,
                f1_before: a.f1_before,
                f1_after: a.f1_after,
            }),
            template_quality: quality.map(|q| q.template.overall),
            template_word_count: quality.map(|q| q.template.mean_word_count),
            llm_quality: quality.and_then(|q| q.llm.as_ref().map(|l| l.overall)),
            llm_word_count: quality.and_then(|q| q.llm.as_ref().map(|l| l.mean_word_count)),
            quality_improvement: quality.and_then(|q| q.relative_improvement),
            excluded_examples: eval.circuit_report.excluded.len(),
        }
    }

    pub fn to_text(&self, provenance: &Provenance) -> String {
        let pct = |v: f64| format!("{:.1}%", v * 100.0);
        let opt = |v: Option<f64>| v.map(pct).unwrap_or_else(|| "n/a".into());
        let mut s = provenance.comment_header();
        let _ = writeln!(s, "status: {}", self.status);
        let _ = writeln!(s, "\n== Circuit identification ({} prompts)", self.n_examples);
        let _ = writeln!(s, "model accuracy            {}", pct(self.model_accuracy));
        let _ = writeln!(s, "clean logit difference    {:.2}", self.clean_logit_difference);
        let _ = writeln!(s, "corrupt logit difference  {:.2}", self.corrupt_logit_difference);
        for c in &self.circuit {
            let _ = writeln!(
                s,
                "  {:<6} {:<18} {}",
                c.head.to_string(),
                c.role.to_string(),
                pct(c.effect)
            );
        }
        let _ = writeln!(s, "circuit coverage          {}", pct(self.circuit_coverage));
        let _ = writeln!(s, "\n== Faithfulness");
        let _ = writeln!(
            s,
            "circuit      suff {} +/- {}  comp {} +/- {}  F1 {}",
            pct(self.sufficiency_mean),
            pct(self.sufficiency_std),
            pct(self.comprehensiveness_mean),
            pct(self.comprehensiveness_std),
            pct(self.f1)
        );
        for (name, row) in [
            ("attention", &self.attention_baseline),
            ("random", &self.random_baseline),
            ("random avg", &self.random_baseline_seed_mean),
        ] {
            let _ = writeln!(
                s,
                "{name:<12} suff {}  comp {}  F1 {}",
                pct(row.sufficiency),
                pct(row.comprehensiveness),
                pct(row.f1)
            );
        }
        let r = self
            .confidence_comprehensiveness_r
            .map(|r| format!("{r:.3}"))
            .unwrap_or_else(|| "undefined".into());
        let _ = writeln!(s, "confidence vs comprehensiveness r = {r}");
        let _ = writeln!(s, "\n== Failure analysis");
        let _ = writeln!(
            s,
            "comprehensiveness buckets  low {}  near {}  high {}",
            pct(self.low_comprehensiveness_fraction),
            pct(self.near_threshold_fraction),
            pct(self.high_comprehensiveness_fraction)
        );
        for (c, n) in &self.failure_categories {
            let _ = writeln!(s, "  {c:<24} {n}");
        }
        if let Some((h, f)) = self.top_non_circuit_head {
            let _ = writeln!(s, "top non-circuit contributor: {h} in {} of failures", pct(f));
        }
        match &self.augmentation {
            Some(a) => {
                let _ = writeln!(
                    s,
                    "augmentation +{}: F1 {} -> {}",
                    a.head,
                    pct(a.f1_before),
                    pct(a.f1_after)
                );
            }
            None => {
                let _ = writeln!(s, "augmentation: not run");
            }
        }
        let _ = writeln!(s, "\n== Explanation quality");
        let _ = writeln!(
            s,
            "template  {} ({} words)",
            opt(self.template_quality),
            self.template_word_count
                .map(|w| format!("{w:.1}"))
                .unwrap_or_else(|| "n/a".into())
        );
        let _ = writeln!(
            s,
            "llm       {} ({} words)",
            opt(self.llm_quality),
            self.llm_word_count
                .map(|w| format!("{w:.1}"))
                .unwrap_or_else(|| "n/a".into())
        );
        if let Some(q) = self.quality_improvement {
            let _ = writeln!(s, "relative improvement {:+.0}%", q * 100.0);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub summary: RunSummary,
    pub files: Vec<PathBuf>,
}

/// Reads the stage artifacts in `dir` and writes the summary and figures.
pub fn write_report(dir: &Path, provenance: &Provenance) -> Result<ReportFiles> {
    let patching: Artifact<PatchingArtifact> = read_json(&dir.join("patching.json"))?;
    let eval: Artifact<EvaluationArtifact> = read_json(&dir.join("evaluation.json"))?;
    let quality: Option<Artifact<QualityComparison>> = if dir.join("quality.json").exists() {
        Some(read_json(&dir.join("quality.json"))?)
    } else {
        log::warn!("quality.json not found; explanation quality omitted from the report");
        None
    };
    let (patching, eval, quality) = (patching.data, eval.data, quality.map(|q| q.data));
    let mut summary = RunSummary::from_artifacts(&patching, &eval, quality.as_ref());
    let finished = read_status(dir).map(|s| s.failed_stage.is_none()).unwrap_or(true);
    if !finished || quality.is_none() {
        summary.status = "incomplete".into();
    }

    let figures = dir.join("figures");
    let outputs = [
        ("heatmap.svg", heatmap_svg(&patching.sweep.mean_effect, provenance)),
        ("baselines.svg", baselines_svg(&summary, provenance)),
        ("quality.svg", quality_svg(quality.as_ref(), provenance)),
        ("histogram.svg", histogram_svg(&eval, provenance)),
        ("augmentation.svg", augmentation_svg(&eval, provenance)),
    ];
    let mut files = Vec::new();
    for (name, svg) in outputs {
        let path = figures.join(name);
        write_text(&path, &svg)?;
        files.push(path);
    }
    let text = dir.join("summary.txt");
    write_text(&text, &summary.to_text(provenance))?;
    files.push(text);
    let json = dir.join("summary.json");
    let artifact = Artifact {
        provenance: provenance.clone(),
        data: &summary,
    };
    write_text(&json, &(serde_json::to_string_pretty(&artifact)? + "\n"))?;
    files.push(json);
    Ok(ReportFiles { summary, files })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Minimal SVG writer.
struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64, title: &str, provenance: &Provenance) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            "<desc>{}</desc>",
            escape(provenance.comment_header().trim_start_matches("# ").trim())
        );
        let _ = writeln!(body, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
        let mut svg = Self { body, width, height };
        svg.text(width / 2.0, 24.0, title, 16.0, "middle", "title");
        svg
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, tooltip: Option<&str>) {
        let _ = write!(
            self.body,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\""
        );
        match tooltip {
            Some(t) => {
                let _ = writeln!(self.body, "><title>{}</title></rect>", escape(t));
            }
            None => self.body.push_str("/>\n"),
        }
    }

    fn text(&mut self, x: f64, y: f64, text: &str, size: f64, anchor: &str, class: &str) {
        let _ = writeln!(
            self.body,
            "<text class=\"{class}\" x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\">{}</text>",
            escape(text)
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Diverging blue-white-red scale over `[-max, max]`.
fn diverging(v: f64, max: f64) -> String {
    let t = if max > 0.0 { (v / max).clamp(-1.0, 1.0) } else { 0.0 };
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("rgb({},{},{})", r.round(), g.round(), b.round())
}

/// Mean effect per head; each cell is labelled with its value in percent (one decimal).
pub fn heatmap_svg(m: &HeadMatrix, provenance: &Provenance) -> String {
    let cell = 44.0;
    let (left, top) = (50.0, 60.0);
    let width = left + cell * m.n_heads as f64 + 20.0;
    let height = top + cell * m.n_layers as f64 + 30.0;
    let mut svg = Svg::new(width, height, "Mean effect recovery per head (%)", provenance);
    let max = m.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for h in 0..m.n_heads {
        svg.text(
            left + cell * (h as f64 + 0.5),
            top - 8.0,
            &format!("H{h}"),
            11.0,
            "middle",
            "axis",
        );
    }
    for (head, v) in m.heads() {
        let (x, y) = (left + cell * head.head as f64, top + cell * head.layer as f64);
        if head.head == 0 {
            svg.text(
                left - 8.0,
                y + cell / 2.0 + 4.0,
                &format!("L{}", head.layer),
                11.0,
                "end",
                "axis",
            );
        }
        svg.rect(
            x,
            y,
            cell - 1.0,
            cell - 1.0,
            &diverging(v, max),
            Some(&format!("{head}: {v}")),
        );
        svg.text(
            x + cell / 2.0,
            y + cell / 2.0 + 4.0,
            &format!("{:.1}", v * 100.0),
            10.0,
            "middle",
            "cell",
        );
    }
    svg.finish()
}

const PALETTE: [&str; 5] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3"];

/// Grouped vertical bars of values in `[0, 1]`, shown as percentages.
fn grouped_bars(
    title: &str,
    groups: &[(String, Vec<f64>)],
    series: &[&str],
    notice: Option<&str>,
    provenance: &Provenance,
) -> String {
    let (left, top, plot_h) = (60.0, 70.0, 260.0);
    let bar = 26.0;
    let group_w = bar * series.len().max(1) as f64 + 30.0;
    let width = (left + group_w * groups.len().max(1) as f64 + 40.0).max(420.0);
    let height = top + plot_h + 90.0;
    let mut svg = Svg::new(width, height, title, provenance);
    for tick in 0..=4 {
        let v = tick as f64 * 0.25;
        let y = top + plot_h * (1.0 - v);
        svg.rect(left, y, width - left - 20.0, 0.5, "#cccccc", None);
        svg.text(left - 6.0, y + 4.0, &format!("{:.0}%", v * 100.0), 10.0, "end", "axis");
    }
    for (gi, (label, values)) in groups.iter().enumerate() {
        let gx = left + 15.0 + gi as f64 * group_w;
        for (si, &v) in values.iter().enumerate() {
            let h = plot_h * v.clamp(0.0, 1.0);
            let x = gx + si as f64 * bar;
            svg.rect(
                x,
                top + plot_h - h,
                bar - 2.0,
                h,
                PALETTE[si % PALETTE.len()],
                Some(&format!("{}: {v}", series[si])),
            );
            svg.text(
                x + bar / 2.0 - 1.0,
                top + plot_h - h - 4.0,
                &format!("{:.1}", v * 100.0),
                9.0,
                "middle",
                "value",
            );
        }
        svg.text(
            gx + bar * values.len() as f64 / 2.0,
            top + plot_h + 16.0,
            label,
            11.0,
            "middle",
            "axis",
        );
    }
    for (si, name) in series.iter().enumerate() {
        let x = left + si as f64 * 120.0;
        svg.rect(x, top + plot_h + 34.0, 10.0, 10.0, PALETTE[si % PALETTE.len()], None);
        svg.text(x + 14.0, top + plot_h + 43.0, name, 11.0, "start", "legend");
    }
    if let Some(n) = notice {
        svg.text(width / 2.0, top + plot_h + 72.0, n, 11.0, "middle", "notice");
    }
    svg.finish()
}

fn metric_values(r: &MetricRow) -> Vec<f64> {
    vec![r.sufficiency, r.comprehensiveness, r.f1]
}

pub fn baselines_svg(s: &RunSummary, provenance: &Provenance) -> String {
    let circuit = MetricRow {
        sufficiency: s.sufficiency_mean,
        comprehensiveness: s.comprehensiveness_mean,
        f1: s.f1,
    };
    let groups = vec![
        ("Circuit".to_string(), metric_values(&circuit)),
        ("Attention".to_string(), metric_values(&s.attention_baseline)),
        (
            format!("Random (seed {})", s.random_baseline_seed),
            metric_values(&s.random_baseline),
        ),
    ];
    grouped_bars(
        "Faithfulness by head-selection method",
        &groups,
        &["Sufficiency", "Comprehensiveness", "F1"],
        None,
        provenance,
    )
}

pub fn quality_svg(q: Option<&QualityComparison>, provenance: &Provenance) -> String {
    let criteria = ["Heads", "Percentages", "Prediction", "IO name", "S name", "Overall"];
    let rows = |m: &crate::explain::MethodQuality| {
        vec![
            m.mentions_heads,
            m.uses_percentages,
            m.mentions_prediction,
            m.mentions_io_name,
            m.mentions_s_name,
            m.overall,
        ]
    };
    let mut series = vec!["Template"];
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut notice = None;
    match q {
        Some(q) => {
            cols.push(rows(&q.template));
            match &q.llm {
                Some(l) => {
                    series.push("LLM-generated");
                    cols.push(rows(l));
                }
                None => notice = Some("LLM explanations not available: template column only"),
            }
        }
        None => {
            cols.push(vec![0.0; criteria.len()]);
            notice = Some("explanation quality not computed");
        }
    }
    let groups: Vec<(String, Vec<f64>)> = criteria
        .iter()
        .enumerate()
        .map(|(i, c)| (c.to_string(), cols.iter().map(|col| col[i]).collect()))
        .collect();
    grouped_bars("Explanation quality by criterion", &groups, &series, notice, provenance)
}

pub fn histogram_svg(eval: &EvaluationArtifact, provenance: &Provenance) -> String {
    let h = &eval.histogram;
    let (lo, hi) = h.thresholds;
    let (a, b, c) = h.fractions();
    let groups = vec![
        (format!("< {:.0}% ({})", lo * 100.0, h.low), vec![a]),
        (format!("{:.0}-{:.0}% ({})", lo * 100.0, hi * 100.0, h.near), vec![b]),
        (format!("> {:.0}% ({})", hi * 100.0, h.high), vec![c]),
    ];
    grouped_bars(
        "Comprehensiveness distribution",
        &groups,
        &["Share of prompts"],
        None,
        provenance,
    )
}

pub fn augmentation_svg(eval: &EvaluationArtifact, provenance: &Provenance) -> String {
    let series = ["Sufficiency", "Comprehensiveness", "F1"];
    match &eval.augmentation {
        Some(a) => {
            let row = |g: &crate::faithfulness::Aggregates| vec![g.sufficiency_mean, g.comprehensiveness_mean, g.f1];
            let groups = vec![
                ("Circuit".to_string(), row(&a.before)),
                (format!("Circuit + {}", a.extra_head), row(&a.after)),
            ];
            grouped_bars("Circuit augmentation", &groups, &series, None, provenance)
        }
        None => {
            let note = eval.augmentation_note.as_deref().unwrap_or("augmentation not run");
            grouped_bars("Circuit augmentation", &[], &series, Some(note), provenance)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::RunConfig;

    fn labels(svg: &str, class: &str) -> Vec<String> {
        let open = format!("<text class=\"{class}\"");
        svg.lines()
            .filter(|l| l.starts_with(&open))
            .map(|l| {
                let start = l.find('>').unwrap() + 1;
                let end = l.rfind("</text>").unwrap();
                l[start..end].to_string()
            })
            .collect()
    }

    #[test]
    fn heatmap_labels_match_csv_values() {
        let mut m = HeadMatrix::zeros(3, 4);
        for (i, v) in m.values.iter_mut().enumerate() {
            *v = (i as f64 * 0.0371).sin() * 0.2 - 0.03;
        }
        let prov = Provenance::new(&RunConfig::default());
        let svg = heatmap_svg(&m, &prov);
        let parsed = HeadMatrix::from_csv(&m.to_csv()).unwrap();
        let cells = labels(&svg, "cell");
        assert_eq!(cells.len(), 12);
        for (label, v) in cells.iter().zip(&parsed.values) {
            assert_eq!(label, &format!("{:.1}", v * 100.0));
            assert!((label.parse::<f64>().unwrap() - v * 100.0).abs() <= 0.05 + 1e-9);
        }
        assert!(svg.contains(&prov.config_hash));
    }

    #[test]
    fn quality_chart_without_llm_shows_notice() {
        let prov = Provenance::new(&RunConfig::default());
        let svg = quality_svg(None, &prov);
        assert_eq!(labels(&svg, "notice").len(), 1);
        assert_eq!(labels(&svg, "legend"), vec!["Template"]);
    }
}
