//! Greedy removal of style attribute markers.
//!
//! A word's importance is the drop in source-style probability when that
//! word is occluded. Each round deletes the most important remaining word
//! until the source-style probability falls below `alpha` or one more
//! deletion would push the retained fraction of words below `beta`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{StyleId, StyledSentence};
use crate::error::{Error, Result};

/// Anything that maps word sequences to a distribution over styles.
pub trait StyleScorer: Sync {
    fn num_styles(&self) -> usize;

    /// One distribution per input sequence, in input order.
    fn score_batch(&self, batch: &[Vec<&str>]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeleterConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl DeleterConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let cfg = DeleterConfig { alpha, beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

impl Default for DeleterConfig {
    fn default() -> Self {
        DeleterConfig { alpha: 0.7, beta: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AlphaReached,
    BetaFloor,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionStep {
    /// Position of the deleted word in the original sentence.
    pub word_index: usize,
    pub word: String,
    pub importance: f64,
    pub prob_before: f64,
    pub prob_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionTrace {
    pub source: Vec<String>,
    pub style: StyleId,
    pub steps: Vec<DeletionStep>,
    pub content: Vec<String>,
    pub stop_reason: StopReason,
}

impl DeletionTrace {
    pub fn deleted_words(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.word.as_str()).collect()
    }

    pub fn deleted_count(&self) -> usize {
        self.steps.len()
    }
}

fn style_prob(dist: &[f64], style: StyleId) -> Result<f64> {
    dist.get(style.0)
        .copied()
        .ok_or_else(|| Error::Input(format!("scorer has no probability for style {style}")))
}

/// Importance of every word: `p(style | words) - p(style | words without i)`.
pub fn importance_scores<S: StyleScorer + ?Sized>(scorer: &S, words: &[&str], style: StyleId) -> Result<Vec<f64>> {
    if words.is_empty() {
        return Err(Error::Input("cannot score an empty word list".into()));
    }
    let mut batch = Vec::with_capacity(words.len() + 1);
    batch.push(words.to_vec());
    batch.extend(occlusions(words));
    let probs = scorer.score_batch(&batch)?;
    let full = style_prob(&probs[0], style)?;
    probs[1..]
        .iter()
        .map(|p| Ok(full - style_prob(p, style)?))
        .collect()
}

fn occlusions<'a>(words: &[&'a str]) -> Vec<Vec<&'a str>> {
    (0..words.len())
        .map(|i| {
            words
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, w)| *w)
                .collect()
        })
        .collect()
}

/// Runs the delete loop on one sentence.
pub fn delete<S: StyleScorer + ?Sized>(scorer: &S, sentence: &StyledSentence, cfg: &DeleterConfig) -> Result<DeletionTrace> {
    cfg.validate()?;
    if sentence.tokens.is_empty() {
        return Err(Error::Input("cannot delete from an empty sentence".into()));
    }
    let original_len = sentence.tokens.len();
    let mut remaining: Vec<(usize, &str)> = sentence.tokens.iter().map(String::as_str).enumerate().collect();
    let words: Vec<&str> = remaining.iter().map(|(_, w)| *w).collect();
    let mut prob = style_prob(&scorer.score_batch(&[words])?[0], sentence.style)?;
    let mut steps = Vec::new();

    let stop_reason = loop {
        if prob < cfg.alpha {
            break StopReason::AlphaReached;
        }
        if remaining.len() == 1 {
            break StopReason::Exhausted;
        }
        let words: Vec<&str> = remaining.iter().map(|(_, w)| *w).collect();
        let probs = scorer.score_batch(&occlusions(&words))?;
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        let mut best_after = prob;
        for (i, dist) in probs.iter().enumerate() {
            let after = style_prob(dist, sentence.style)?;
            let score = prob - after;
            if score > best_score {
                best = i;
                best_score = score;
                best_after = after;
            }
        }
        if ((remaining.len() - 1) as f64 / original_len as f64) < cfg.beta {
            break StopReason::BetaFloor;
        }
        let (word_index, word) = remaining.remove(best);
        steps.push(DeletionStep {
            word_index,
            word: word.to_owned(),
            importance: best_score,
            prob_before: prob,
            prob_after: best_after,
        });
        prob = best_after;
    };

    Ok(DeletionTrace {
        source: sentence.tokens.clone(),
        style: sentence.style,
        steps,
        content: remaining.into_iter().map(|(_, w)| w.to_owned()).collect(),
        stop_reason,
    })
}

/// Deletes every sentence independently, preserving input order.
pub fn delete_all<S: StyleScorer + ?Sized>(
    scorer: &S,
    sentences: &[StyledSentence],
    cfg: &DeleterConfig,
) -> Result<Vec<DeletionTrace>> {
    sentences.par_iter().map(|s| delete(scorer, s, cfg)).collect()
}

pub fn write_traces(path: &Path, traces: &[DeletionTrace]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for t in traces {
        let line = serde_json::to_string(t)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<DeletionTrace>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
