//! Automatic evaluation: content preservation (BLEU), target-style accuracy,
//! fluency (perplexity), semantic similarity and the instability margin.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::argmax;
use crate::corpus::StyleId;
use crate::deleter::StyleScorer;
use crate::error::{Error, Result};
use crate::generator::GeneratorParams;
use crate::lm::{perplexity, LanguageModel};
use crate::tokenizer::Vocabulary;

const MAX_ORDER: usize = 4;
const SMOOTH_EPS: f64 = 0.1;

fn ngram_counts<S: AsRef<str>>(words: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

fn check_alignment(candidates: usize, references: usize) -> Result<()> {
    if candidates != references {
        return Err(Error::Alignment {
            what: "references".into(),
            expected: candidates,
            found: references,
        });
    }
    Ok(())
}

/// Corpus BLEU in `[0, 100]` with up to 4-grams.
///
/// Clipped n-gram matches and candidate n-gram totals are summed over the
/// corpus. An order with no matches scores `0.1 / total`; orders with no
/// candidate n-grams at all are dropped from the mean. The reference length
/// is the one closest to the candidate (the shorter on ties).
pub fn bleu_corpus<S: AsRef<str> + Sync>(candidates: &[Vec<S>], references: &[Vec<Vec<S>>]) -> Result<f64> {
    check_alignment(candidates.len(), references.len())?;
    if candidates.is_empty() {
        return Err(Error::Input("BLEU of an empty corpus is undefined".into()));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (i, (cand, refs)) in candidates.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(Error::Input(format!("candidate {i} has no reference")));
        }
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
        for n in 1..=MAX_ORDER {
            let counts = ngram_counts(cand, n);
            let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            matches[n - 1] += counts.iter().map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0))).sum::<usize>();
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    let mut log_sum = 0.0;
    let mut order = 0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            break;
        }
        let p = if matches[n] == 0 {
            SMOOTH_EPS / totals[n] as f64
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
        order += 1;
    }
    if order == 0 {
        return Ok(0.0);
    }
    let bp = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * (log_sum / order as f64).exp())
}

/// `sqrt(a * b)` for positive `a`, `b`.
pub fn geometric_mean(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("geometric mean needs positive finite inputs, got {a} and {b}")));
    }
    Ok((a * b).sqrt())
}

fn geometric_mean_or_zero(a: f64, b: f64) -> Result<f64> {
    if a == 0.0 || b == 0.0 {
        return Ok(0.0);
    }
    geometric_mean(a, b)
}

/// Fraction of outputs the scorer assigns to their target style. Empty
/// outputs count as misses.
pub fn style_accuracy<S: StyleScorer + ?Sized>(scorer: &S, outputs: &[(Vec<String>, StyleId)]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::Input("style accuracy of an empty output list is undefined".into()));
    }
    let scored: Vec<&(Vec<String>, StyleId)> = outputs.iter().filter(|(w, _)| !w.is_empty()).collect();
    let batch: Vec<Vec<&str>> = scored.iter().map(|(w, _)| w.iter().map(String::as_str).collect()).collect();
    let probs = if batch.is_empty() { Vec::new() } else { scorer.score_batch(&batch)? };
    let hits = probs
        .iter()
        .zip(&scored)
        .filter(|(p, (_, target))| argmax(p) == target.0)
        .count();
    Ok(hits as f64 / outputs.len() as f64)
}

/// Maps a sentence to one contextual vector per word.
pub trait SemanticEncoder: Sync {
    fn dim(&self) -> usize;

    fn embed(&self, words: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Generator encoder states averaged over each word's subwords.
pub struct EncoderStates<'a> {
    generator: &'a GeneratorParams,
    vocab: &'a Vocabulary,
}

impl<'a> EncoderStates<'a> {
    pub fn new(generator: &'a GeneratorParams, vocab: &'a Vocabulary) -> Result<Self> {
        generator.check_vocab(vocab)?;
        Ok(EncoderStates { generator, vocab })
    }
}

impl SemanticEncoder for EncoderStates<'_> {
    fn dim(&self) -> usize {
        self.generator.config().dim
    }

    fn embed(&self, words: &[String]) -> Result<Vec<Vec<f64>>> {
        if words.is_empty() {
            return Ok(Vec::new());
        }
        let states = self
            .generator
            .encode(self.vocab, words)
            .map_err(|e| Error::Adapter(e.to_string()))?
            .to_dtype(candle_core::DType::F64)?
            .to_vec2::<f64>()?;
        let mut out = Vec::with_capacity(words.len());
        let mut pos = 0;
        for w in words {
            let pieces = self.vocab.encode_word(w).len();
            let mut mean = vec![0.0; self.dim()];
            for row in &states[pos..pos + pieces] {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v / pieces as f64;
                }
            }
            out.push(mean);
            pos += pieces;
        }
        Ok(out)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy-matching F1 between two embedded sentences: every token takes its
/// most similar counterpart.
pub fn greedy_match_f1(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let sim: Vec<Vec<f64>> = candidate.iter().map(|c| reference.iter().map(|r| cosine(c, r)).collect()).collect();
    let precision = sim.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / candidate.len() as f64;
    let recall = (0..reference.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / reference.len() as f64;
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean best-reference greedy-matching F1, times 100, clamped to `[0, 100]`.
pub fn semantic_score<E: SemanticEncoder + ?Sized>(
    encoder: &E,
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
) -> Result<f64> {
    check_alignment(candidates.len(), references.len())?;
    if candidates.is_empty() {
        return Err(Error::Input("semantic score of an empty corpus is undefined".into()));
    }
    let per: Vec<f64> = candidates
        .par_iter()
        .zip(references)
        .map(|(c, refs)| {
            if refs.is_empty() {
                return Err(Error::Input("candidate without reference".into()));
            }
            let ce = encoder.embed(c)?;
            let mut best = f64::NEG_INFINITY;
            for r in refs {
                best = best.max(greedy_match_f1(&ce, &encoder.embed(r)?));
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((100.0 * mean).clamp(0.0, 100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SBleu,
    HBleu,
    GBleu,
    Accuracy,
    DPpl,
    GPpl,
    TPpl,
    Semantic,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::SBleu,
        Metric::HBleu,
        Metric::GBleu,
        Metric::Accuracy,
        Metric::DPpl,
        Metric::GPpl,
        Metric::TPpl,
        Metric::Semantic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::SBleu => "s-BLEU",
            Metric::HBleu => "h-BLEU",
            Metric::GBleu => "G-BLEU",
            Metric::Accuracy => "acc",
            Metric::DPpl => "d-PPL",
            Metric::GPpl => "g-PPL",
            Metric::TPpl => "t-PPL",
            Metric::Semantic => "semantic",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::DPpl | Metric::GPpl | Metric::TPpl)
    }
}

/// Scores of one system. The two geometric means are derived on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    system_name: String,
    s_bleu: f64,
    h_bleu: f64,
    g_bleu: f64,
    style_accuracy: f64,
    d_ppl: f64,
    g_ppl: f64,
    t_ppl: f64,
    semantic: f64,
    flags: BTreeSet<Metric>,
}

impl EvalReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system_name: impl Into<String>,
        s_bleu: f64,
        h_bleu: f64,
        style_accuracy: f64,
        d_ppl: f64,
        g_ppl: f64,
        semantic: f64,
    ) -> Result<Self> {
        for (name, v) in [("s-BLEU", s_bleu), ("h-BLEU", h_bleu), ("semantic", semantic)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::Domain(format!("{name} {v} outside [0, 100]")));
            }
        }
        if !(0.0..=1.0).contains(&style_accuracy) {
            return Err(Error::Domain(format!("accuracy {style_accuracy} outside [0, 1]")));
        }
        Ok(EvalReport {
            system_name: system_name.into(),
            s_bleu,
            h_bleu,
            g_bleu: geometric_mean_or_zero(s_bleu, h_bleu)?,
            style_accuracy,
            d_ppl,
            g_ppl,
            t_ppl: geometric_mean(d_ppl, g_ppl)?,
            semantic,
            flags: BTreeSet::new(),
        })
    }

    pub fn system_name(&self) -> &str {
        &self.system_name
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::SBleu => self.s_bleu,
            Metric::HBleu => self.h_bleu,
            Metric::GBleu => self.g_bleu,
            Metric::Accuracy => self.style_accuracy,
            Metric::DPpl => self.d_ppl,
            Metric::GPpl => self.g_ppl,
            Metric::TPpl => self.t_ppl,
            Metric::Semantic => self.semantic,
        }
    }

    pub fn flags(&self) -> &BTreeSet<Metric> {
        &self.flags
    }

    pub fn is_flagged(&self, metric: Metric) -> bool {
        self.flags.contains(&metric)
    }
}

/// Width of the band below the mean that counts as unstable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginRule {
    /// `z * s / sqrt(n)`: the lower confidence bound of the mean.
    StandardError,
    /// `z * s`: the lower bound of the spread of individual systems.
    Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub z: f64,
    pub rule: MarginRule,
    pub metrics: Vec<Metric>,
    /// Systems neither pooled nor flagged (human references, input copy).
    #[serde(default)]
    pub exclude: Vec<String>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            z: 1.96,
            rule: MarginRule::StandardError,
            metrics: Metric::ALL.to_vec(),
            exclude: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub margin: f64,
    /// In the metric's own orientation: values past this are flagged.
    pub threshold: f64,
}

/// Flags, per metric, every pooled system that falls below
/// `mean - margin` (perplexities negated so that higher is better). The
/// standard deviation is the sample one.
pub fn stability_report(reports: &mut [EvalReport], cfg: &StabilityConfig) -> Vec<Threshold> {
    let pooled: Vec<usize> = (0..reports.len())
        .filter(|&i| !cfg.exclude.iter().any(|e| e == &reports[i].system_name))
        .collect();
    if pooled.len() < 2 {
        log::warn!("stability report needs at least two systems; {} given, no flags set", pooled.len());
        return Vec::new();
    }
    if pooled.len() < 3 {
        log::warn!("stability margin over {} systems is not meaningful", pooled.len());
    }
    let n = pooled.len() as f64;
    let mut out = Vec::new();
    for &metric in &cfg.metrics {
        let sign = if metric.higher_is_better() { 1.0 } else { -1.0 };
        let values: Vec<f64> = pooled.iter().map(|&i| sign * reports[i].get(metric)).collect();
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        let margin = match cfg.rule {
            MarginRule::StandardError => cfg.z * std / n.sqrt(),
            MarginRule::Spread => cfg.z * std,
        };
        let bound = mean - margin;
        for (&i, v) in pooled.iter().zip(&values) {
            if *v < bound {
                reports[i].flags.insert(metric);
            }
        }
        out.push(Threshold {
            metric,
            mean: sign * mean,
            std,
            margin,
            threshold: sign * bound,
        });
    }
    out
}

/// Everything needed to score one system output.
pub struct EvalContext<'a> {
    pub style_scorer: &'a dyn StyleScorer,
    pub data_lm: &'a dyn LanguageModel,
    pub general_lm: &'a dyn LanguageModel,
    pub semantic: &'a dyn SemanticEncoder,
}

/// Inputs shared by every evaluated system: the test sentences, their
/// target styles and human references, in the same order.
pub struct EvalSet {
    pub inputs: Vec<Vec<String>>,
    pub targets: Vec<StyleId>,
    pub references: Vec<Vec<Vec<String>>>,
}

impl EvalSet {
    pub fn new(inputs: Vec<Vec<String>>, targets: Vec<StyleId>, references: Vec<Vec<Vec<String>>>) -> Result<Self> {
        check_alignment(inputs.len(), references.len())?;
        if targets.len() != inputs.len() {
            return Err(Error::Alignment {
                what: "target styles".into(),
                expected: inputs.len(),
                found: targets.len(),
            });
        }
        Ok(EvalSet { inputs, targets, references })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub fn evaluate_system(name: &str, outputs: &[Vec<String>], set: &EvalSet, ctx: &EvalContext<'_>) -> Result<EvalReport> {
    if outputs.len() != set.len() {
        return Err(Error::Alignment {
            what: format!("system {name}"),
            expected: set.len(),
            found: outputs.len(),
        });
    }
    let self_refs: Vec<Vec<Vec<String>>> = set.inputs.iter().map(|s| vec![s.clone()]).collect();
    let s_bleu = bleu_corpus(outputs, &self_refs)?;
    let h_bleu = bleu_corpus(outputs, &set.references)?;
    let labelled: Vec<(Vec<String>, StyleId)> = outputs.iter().cloned().zip(set.targets.iter().copied()).collect();
    let acc = style_accuracy(ctx.style_scorer, &labelled)?;
    let d_ppl = perplexity(ctx.data_lm, outputs)?;
    let g_ppl = perplexity(ctx.general_lm, outputs)?;
    let semantic = semantic_score(ctx.semantic, outputs, &set.references)?;
    EvalReport::new(name, s_bleu, h_bleu, acc, d_ppl, g_ppl, semantic)
}

/// Reads a system output file and checks it is aligned with the test set.
pub fn read_system_output(name: &str, path: &Path, expected: usize) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect();
    if lines.len() != expected {
        return Err(Error::Alignment {
            what: format!("system {name} ({})", path.display()),
            expected,
            found: lines.len(),
        });
    }
    Ok(lines)
}

pub const REPORT_CONVENTIONS: &str =
    "BLEU: corpus 4-gram, floor smoothing 0.1, closest-reference brevity; \
     PPL: exp of corpus-mean per-subword NLL, end token included; \
     semantic: mean best-reference greedy-matching F1 x 100";

/// One JSON record per system, preceded by a header record.
pub fn write_reports_jsonl(path: &Path, reports: &[EvalReport], header: &serde_json::Value) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "{}", serde_json::to_string(header)?).map_err(|e| Error::io(path, e))?;
    for r in reports {
        writeln!(file, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Plain-text table; flagged cells carry a `*`.
pub fn render_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.system_name.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "# {REPORT_CONVENTIONS}");
    let _ = write!(out, "{:width$}", "system");
    for m in Metric::ALL {
        let _ = write!(out, " {:>10}", m.name());
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:width$}", r.system_name);
        for m in Metric::ALL {
            let v = if m == Metric::Accuracy { 100.0 * r.get(m) } else { r.get(m) };
            let mark = if r.is_flagged(m) { "*" } else { "" };
            let _ = write!(out, " {:>10}", format!("{v:.2}{mark}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn identical_corpus_scores_100() {
        let c = vec![w("the food was great"), w("ok"), w("a b c")];
        let r: Vec<Vec<Vec<String>>> = c.iter().map(|s| vec![s.clone()]).collect();
        assert_eq!(bleu_corpus(&c, &r).unwrap(), 100.0);
    }

    #[test]
    fn misaligned_references_are_rejected() {
        let c = vec![w("a b")];
        assert!(matches!(bleu_corpus(&c, &[]), Err(Error::Alignment { .. })));
    }

    #[test]
    fn brevity_prefers_shorter_reference_on_ties() {
        // Lengths 2 and 4 are equally close to 3; the shorter one means no penalty.
        let c = vec![w("a b c")];
        let tie = bleu_corpus(&c, &[vec![w("a b"), w("a b c d")]]).unwrap();
        assert!((tie - 100.0).abs() < 1e-12);
        let long = bleu_corpus(&c, &[vec![w("a b c d")]]).unwrap();
        assert!((long - 100.0 * (-1.0f64 / 3.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn geometric_mean_examples() {
        assert!((geometric_mean(185.26, 321.84).unwrap() - 244.18).abs() < 0.01);
        assert!((geometric_mean(100.0, 21.01).unwrap() - 45.84).abs() < 0.01);
        assert_eq!(geometric_mean(7.5, 7.5).unwrap(), 7.5);
        assert!(matches!(geometric_mean(0.0, 3.0), Err(Error::Domain(_))));
        assert!(matches!(geometric_mean(-1.0, 3.0), Err(Error::Domain(_))));
    }

    #[test]
    fn report_identities_hold() {
        let r = EvalReport::new("x", 39.05, 21.01, 0.795, 185.26, 321.84, 88.72).unwrap();
        assert_eq!(r.get(Metric::GBleu), (39.05f64 * 21.01).sqrt());
        assert_eq!(r.get(Metric::TPpl), (185.26f64 * 321.84).sqrt());
    }

    fn reports(values: &[f64]) -> Vec<EvalReport> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| EvalReport::new(format!("s{i}"), 10.0, 10.0, 0.5, 100.0, 100.0, *v).unwrap())
            .collect()
    }

    #[test]
    fn equal_systems_are_never_flagged() {
        let mut rs = reports(&[80.0, 80.0, 80.0, 80.0]);
        stability_report(&mut rs, &StabilityConfig::default());
        assert!(rs.iter().all(|r| r.flags().is_empty()));
    }

    #[test]
    fn single_system_gets_no_flags() {
        let mut rs = reports(&[10.0]);
        assert!(stability_report(&mut rs, &StabilityConfig::default()).is_empty());
    }

    #[test]
    fn perplexity_flags_high_values() {
        let mut rs: Vec<EvalReport> = [100.0, 100.0, 100.0, 100.0, 400.0]
            .iter()
            .enumerate()
            .map(|(i, p)| EvalReport::new(format!("s{i}"), 10.0, 10.0, 0.5, *p, 100.0, 50.0).unwrap())
            .collect();
        let cfg = StabilityConfig {
            metrics: vec![Metric::DPpl],
            ..StabilityConfig::default()
        };
        stability_report(&mut rs, &cfg);
        assert!(rs[4].is_flagged(Metric::DPpl));
        assert!(rs[..4].iter().all(|r| r.flags().is_empty()));
    }

    #[test]
    fn excluded_systems_are_neither_pooled_nor_flagged() {
        let mut rs = reports(&[80.0, 81.0, 82.0, 0.0]);
        let cfg = StabilityConfig {
            metrics: vec![Metric::Semantic],
            exclude: vec!["s3".into()],
            ..StabilityConfig::default()
        };
        let th = stability_report(&mut rs, &cfg);
        assert!((th[0].mean - 81.0).abs() < 1e-12);
        assert!(!rs[3].is_flagged(Metric::Semantic));
    }

    #[test]
    fn greedy_match_of_identical_sentence_is_one() {
        let e = vec![vec![1.0, 2.0], vec![0.5, -1.0]];
        assert!((greedy_match_f1(&e, &e) - 1.0).abs() < 1e-12);
        assert_eq!(greedy_match_f1(&[], &e), 0.0);
    }

    #[test]
    fn table_marks_flagged_cells() {
        let mut rs = reports(&[80.0, 80.0, 80.0, 80.0, 80.0, 80.0, 20.0]);
        stability_report(&mut rs, &StabilityConfig::default());
        let table = render_table(&rs);
        assert!(table.lines().last().unwrap().contains("20.00*"));
    }
}
