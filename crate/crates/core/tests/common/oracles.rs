#![allow(dead_code)]

use std::collections::HashMap;

use candle_core::DType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sst::classifier::{train_classifier_with, ClassifierConfig, ClassifierParams};
use sst::corpus::{SplitName, StyleId, StyledSentence};
use sst::deleter::{StopReason, StyleScorer};
use sst::evaluator::SemanticEncoder;
use sst::lm::LanguageModel;
use sst::tokenizer::{train_bpe, Vocabulary};
use sst::Error;

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

pub fn read_tsv(text: &str) -> Vec<(Vec<String>, Vec<Vec<String>>)> {
    text.lines()
        .map(|l| {
            let mut cols = l.split('\t');
            let cand = words(cols.next().unwrap());
            (cand, cols.map(words).collect())
        })
        .collect()
}

pub const PAIRS: &str = include_str!("../data/bleu_pairs.tsv");
pub const MULTI: &str = include_str!("../data/bleu_multiref.tsv");

/// Per-pair and corpus scores from sacrebleu 2.6.0 with `tokenize="none"`,
/// `smooth_method="floor"`, `smooth_value=0.1`, `effective_order=True`.
pub const SACREBLEU_PAIRS: [f64; 20] = [
    100.0,
    39.76353643835254,
    43.167001068522545,
    18.803015465431972,
    16.06856837889303,
    24.117803988461304,
    100.0,
    14.938015821857212,
    48.892302243490086,
    23.060112469885112,
    21.71185208108769,
    27.494162035211286,
    9.55442792204367,
    39.76353643835254,
    11.36219366467499,
    5.7950534707339525,
    4.279677428117006,
    17.286039232097053,
    12.574334296829349,
    4.9787068367863965,
];
pub const SACREBLEU_CORPUS: f64 = 26.342303800555573;
pub const SACREBLEU_MULTI: f64 = 56.587738197973366;

/// Second BLEU implementation: explicit position scans, no hashing.
pub fn oracle_bleu(data: &[(Vec<String>, Vec<Vec<String>>)]) -> f64 {
    let count = |seq: &[String], gram: &[String]| seq.windows(gram.len()).filter(|w| *w == gram).count();
    let mut hits = [0f64; 4];
    let mut total = [0f64; 4];
    let (mut c_len, mut r_len) = (0f64, 0f64);
    for (cand, refs) in data {
        c_len += cand.len() as f64;
        let mut best = refs[0].len();
        for r in refs {
            let (d_new, d_old) = ((r.len() as i64 - cand.len() as i64).abs(), (best as i64 - cand.len() as i64).abs());
            if d_new < d_old || (d_new == d_old && r.len() < best) {
                best = r.len();
            }
        }
        r_len += best as f64;
        for n in 1..=4 {
            if cand.len() < n {
                continue;
            }
            let mut seen: Vec<&[String]> = Vec::new();
            for g in cand.windows(n) {
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let in_cand = count(cand, g);
                let in_refs = refs.iter().map(|r| count(r, g)).max().unwrap();
                hits[n - 1] += in_cand.min(in_refs) as f64;
            }
            total[n - 1] += (cand.len() - n + 1) as f64;
        }
    }
    let orders: Vec<usize> = (0..4).take_while(|&n| total[n] > 0.0).collect();
    let mean_log = orders
        .iter()
        .map(|&n| if hits[n] > 0.0 { (hits[n] / total[n]).ln() } else { (0.1 / total[n]).ln() })
        .sum::<f64>()
        / orders.len() as f64;
    let bp = if c_len < r_len { (1.0 - r_len / c_len).exp() } else { 1.0 };
    100.0 * bp * mean_log.exp()
}

/// Fixed random vector per word.
pub struct TableEncoder {
    pub dim: usize,
    pub table: HashMap<String, Vec<f64>>,
}

impl TableEncoder {
    pub fn random(words: &[&str], dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = words
            .iter()
            .map(|w| (w.to_string(), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        TableEncoder { dim, table }
    }

    /// Mutually orthogonal unit vectors (Gram-Schmidt on random draws).
    pub fn orthogonal(words: &[&str], seed: u64) -> Self {
        let dim = words.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for _ in 0..dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
        TableEncoder {
            dim,
            table: words.iter().map(|w| w.to_string()).zip(basis).collect(),
        }
    }
}

impl SemanticEncoder for TableEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, words: &[String]) -> sst::Result<Vec<Vec<f64>>> {
        words
            .iter()
            .map(|w| self.table.get(w).cloned().ok_or_else(|| Error::Adapter(format!("no vector for {w}"))))
            .collect()
    }
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Best total similarity over every assignment of `from` tokens to `to`
/// tokens, enumerated exhaustively.
pub fn exhaustive_side(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let (m, n) = (from.len(), to.len());
    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![0usize; m];
    loop {
        let total: f64 = choice.iter().enumerate().map(|(i, &j)| cos(&from[i], &to[j])).sum();
        best = best.max(total);
        let mut k = 0;
        while k < m {
            choice[k] += 1;
            if choice[k] < n {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == m {
            break;
        }
    }
    best / m as f64
}

pub fn exhaustive_f1(c: &[Vec<f64>], r: &[Vec<f64>]) -> f64 {
    let (p, rc) = (exhaustive_side(c, r), exhaustive_side(r, c));
    if p + rc <= 0.0 {
        0.0
    } else {
        2.0 * p * rc / (p + rc)
    }
}

pub struct Uniform(pub usize);

impl LanguageModel for Uniform {
    fn score(&self, sentences: &[Vec<String>]) -> sst::Result<Vec<(f64, usize)>> {
        Ok(sentences.iter().map(|s| ((s.len() + 1) as f64 * (self.0 as f64).ln(), s.len() + 1)).collect())
    }
}

pub fn toy_classifier() -> (Vocabulary, ClassifierParams) {
    let train = super::synthetic(150, 21);
    let vocab = train_bpe(&train, 2, 150).unwrap();
    let cfg = ClassifierConfig {
        filter_widths: vec![1, 2],
        maps_per_filter: 8,
        embedding_dim: 16,
        dropout: 0.1,
        epochs: 6,
        batch_size: 32,
        learning_rate: 1e-2,
        ..ClassifierConfig::default()
    };
    let split = super::split(SplitName::Train, train);
    let dev = super::split(SplitName::Dev, super::synthetic(30, 22));
    let params = train_classifier_with(&split, &dev, &vocab, &cfg, DType::F32).unwrap();
    (vocab, params)
}

pub fn prob(scorer: &dyn StyleScorer, words: &[String], style: StyleId) -> f64 {
    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    scorer.score_batch(&[refs]).unwrap()[0][style.0]
}

/// Re-derives the deletion from scratch: every round rebuilds each candidate
/// sentence explicitly and scores it alone.
pub fn oracle(scorer: &dyn StyleScorer, s: &StyledSentence, alpha: f64, beta: f64) -> (Vec<usize>, StopReason) {
    let n = s.tokens.len();
    let mut kept: Vec<usize> = (0..n).collect();
    let mut deleted = Vec::new();
    loop {
        let words: Vec<String> = kept.iter().map(|&i| s.tokens[i].clone()).collect();
        let p = prob(scorer, &words, s.style);
        if p < alpha {
            return (deleted, StopReason::AlphaReached);
        }
        if kept.len() == 1 {
            return (deleted, StopReason::Exhausted);
        }
        let mut best: Option<(usize, f64)> = None;
        for pos in 0..kept.len() {
            let without: Vec<String> = kept
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != pos)
                .map(|(_, &i)| s.tokens[i].clone())
                .collect();
            let drop = p - prob(scorer, &without, s.style);
            if best.is_none_or(|(_, d)| drop > d) {
                best = Some((pos, drop));
            }
        }
        if (((kept.len() - 1) as f64) / n as f64) < beta {
            return (deleted, StopReason::BetaFloor);
        }
        deleted.push(kept.remove(best.unwrap().0));
    }
}
