//! One PASS/FAIL line per acceptance criterion.
//!
//! Criteria that need the Yelp release read it from `SST_YELP_DIR`
//! (default `data/yelp`). When it is absent they print FAIL marked
//! `blocked`; the process exits non-zero only for failures that ran.

mod common;

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sst::classifier::{ClassifierConfig, ClassifierParams, CnnScorer};
use sst::corpus::{StyleId, StyledSentence};
use sst::deleter::{self, DeleterConfig, DeletionTrace, StopReason};
use sst::evaluator::{
    bleu_corpus, geometric_mean, greedy_match_f1, semantic_score, stability_report, EvalReport, Metric, SemanticEncoder,
    StabilityConfig,
};
use sst::experiment::{self, ExperimentConfig};
use sst::generator::{self, GeneratorConfig, GeneratorParams, Reduction, Rollout, TrainConfig};
use sst::lm::{perplexity, train_lm, LmConfig, SubwordLm};
use sst::nn::{self, Mode};
use sst::tokenizer::{train_bpe, Vocabulary};

use common::oracles::*;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

use Outcome::{Blocked, Fail, Pass};

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

// ---------------------------------------------------------------- 1

/// (system, s-BLEU, h-BLEU, G-BLEU, d-PPL, g-PPL, t-PPL) as published.
type Row = (&'static str, f64, f64, f64, f64, f64, f64);

const YELP: [Row; 16] = [
    ("SST (0.7, 0.5)", 39.05, 10.85, 20.58, 185.26, 321.84, 244.18),
    ("SST (0.7, 0.75)", 49.09, 12.66, 24.93, 197.82, 295.9, 241.94),
    ("CrossAligned", 17.02, 4.34, 8.59, 69.13, 319.1, 148.53),
    ("StyleEmbedding", 71.8, 13.65, 31.3, 121.66, 379.81, 214.96),
    ("multi_decoder", 40.81, 8.24, 18.33, 201.59, 642.13, 359.79),
    ("TemplateBased", 48.67, 12.86, 25.02, 3258.19, 375.62, 1106.28),
    ("DeleteOnly", 33.94, 9.29, 17.75, 171.66, 279.55, 219.06),
    ("DeleteAndRetrieve", 34.48, 9.82, 18.4, 137.04, 343.75, 217.04),
    ("RetrieveOnly", 0.88, 0.43, 0.61, 150.54, 150.62, 150.58),
    ("BackTranslation", 0.67, 0.52, 0.59, 30.53, 148.77, 67.39),
    ("UnpairedRL", 42.29, 10.6, 21.17, 328.8, 735.1, 491.63),
    ("DualRL", 58.72, 17.71, 32.25, 87.72, 273.73, 154.96),
    ("B_GST", 43.45, 13.49, 24.21, 165.59, 184.02, 174.57),
    ("G_GST", 43.94, 13.28, 24.15, 441.38, 274.25, 347.92),
    ("human: DRG", 26.97, 53.35, 37.93, 121.17, 153.45, 136.36),
    ("human: DualRL", 36.79, 33.02, 34.86, 178.63, 196.15, 187.19),
];

const YELP_INPUT_COPY: Row = ("input copy", 100.0, 21.01, 45.84, 69.72, 131.91, 95.9);

const AMAZON: [Row; 12] = [
    ("SST (0.6, 0.5)", 45.47, 20.34, 30.41, 4.51, 367.73, 40.72),
    ("CrossAligned", 0.76, 0.61, 0.68, 1.11, 119.37, 11.51),
    ("StyleEmbedding", 32.03, 12.95, 20.37, 3.42, 369.24, 35.54),
    ("multi_decoder", 16.48, 6.61, 10.44, 1.39, 343.72, 21.86),
    ("TemplateBased", 68.54, 33.79, 48.12, 5.36, 368.41, 44.44),
    ("DeleteOnly", 57.48, 28.56, 40.52, 2.78, 251.24, 26.43),
    ("DeleteAndRetrieve", 60.75, 30.83, 43.28, 2.43, 221.92, 23.22),
    ("RetrieveOnly", 2.82, 1.23, 1.86, 5.65, 135.22, 27.64),
    ("B_GST", 58.21, 25.47, 38.5, 12448.44, 193.73, 1552.94),
    ("G_GST", 51.02, 21.1, 32.81, 18106.0, 458.93, 2882.6),
    ("human: DRG", 47.67, 100.0, 69.04, 12.38, 132.18, 40.45),
    ("input copy", 100.0, 47.6, 68.99, 3.76, 188.33, 26.61),
];

fn c1_geometric_means() -> Outcome {
    let mut bad = Vec::new();
    let rows = YELP.iter().chain([&YELP_INPUT_COPY]).map(|r| ("yelp", r)).chain(AMAZON.iter().map(|r| ("amazon", r)));
    let mut n = 0;
    for (table, &(name, s, h, g, d, gp, t)) in rows {
        let g_hat = geometric_mean(s, h).unwrap();
        let t_hat = geometric_mean(d, gp).unwrap();
        if (g_hat - g).abs() > 0.02 {
            bad.push(format!("{table}/{name} G-BLEU {g_hat:.3} vs {g}"));
        }
        if (t_hat - t).abs() > 0.02 {
            bad.push(format!("{table}/{name} t-PPL {t_hat:.3} vs {t}"));
        }
        n += 1;
    }
    check(bad.is_empty(), if bad.is_empty() { format!("{n} rows within 0.02") } else { bad.join("; ") })
}

// ---------------------------------------------------------------- 2, 3

fn c2_deleter_oracle() -> Outcome {
    let (vocab, params) = toy_classifier();
    let scorer = CnnScorer::new(&params, &vocab).unwrap();
    let sentences = common::synthetic(100, 99);
    let cfg = DeleterConfig::new(0.7, 0.5).unwrap();
    let traces = deleter::delete_all(&scorer, &sentences, &cfg).unwrap();
    let exact = sentences
        .iter()
        .zip(&traces)
        .filter(|(s, t)| {
            let (expected, reason) = oracle(&scorer, s, cfg.alpha, cfg.beta);
            let got: Vec<usize> = t.steps.iter().map(|st| st.word_index).collect();
            got == expected && t.stop_reason == reason
        })
        .count();
    let deleted: usize = traces.iter().map(DeletionTrace::deleted_count).sum();
    check(
        exact == sentences.len() && deleted > 0,
        format!("{exact}/{} traces equal the oracle ({deleted} deletions)", sentences.len()),
    )
}

fn c3_monotone_counts() -> Outcome {
    let (vocab, params) = toy_classifier();
    let scorer = CnnScorer::new(&params, &vocab).unwrap();
    let sentences = common::synthetic(100, 31);
    let counts = |alpha: f64, beta: f64| -> Vec<usize> {
        deleter::delete_all(&scorer, &sentences, &DeleterConfig::new(alpha, beta).unwrap())
            .unwrap()
            .iter()
            .map(DeletionTrace::deleted_count)
            .collect()
    };
    let alphas = [0.5, 0.6, 0.7, 0.8, 0.9];
    let betas = [0.0, 0.25, 0.5, 0.75];
    let grid: Vec<Vec<Vec<usize>>> = alphas.iter().map(|&a| betas.iter().map(|&b| counts(a, b)).collect()).collect();
    let mut violations = 0;
    for ai in 0..alphas.len() {
        for bi in 0..betas.len() {
            for i in 0..sentences.len() {
                if ai > 0 && grid[ai][bi][i] > grid[ai - 1][bi][i] {
                    violations += 1;
                }
                if bi > 0 && grid[ai][bi][i] > grid[ai][bi - 1][i] {
                    violations += 1;
                }
            }
        }
    }
    let total_low: usize = grid[0][0].iter().sum();
    let total_high: usize = grid[4][3].iter().sum();
    check(
        violations == 0,
        format!("{violations} violations over {} sentences; deletions {total_low} at (0.5, 0) vs {total_high} at (0.9, 0.75)", sentences.len()),
    )
}

// ---------------------------------------------------------------- 4

fn c4_soft_equals_hard() -> Outcome {
    let (vocab, params) = toy_classifier();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let first = vocab.special_count() as u32;
    let size = vocab.len() as u32;
    let mut worst = 0f64;
    for _ in 0..1000 {
        let len = rng.random_range(1..=20);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(first..size)).collect();
        let mut rows = vec![0f32; ids.len() * vocab.len()];
        for (t, &id) in ids.iter().enumerate() {
            rows[t * vocab.len() + id as usize] = 1.0;
        }
        let dists = Tensor::from_vec(rows, (ids.len(), vocab.len()), &Device::Cpu).unwrap();
        let soft: Vec<f64> = params
            .predict_proba_soft(&dists)
            .unwrap()
            .to_dtype(DType::F64)
            .unwrap()
            .to_vec1()
            .unwrap();
        let hard = params.predict_proba(&ids).unwrap();
        for (a, b) in soft.iter().zip(&hard) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-5, format!("max |soft - hard| = {worst:.2e} over 1000 sentences"))
}

// ---------------------------------------------------------------- 5, 6

const NOUNS: [&str; 32] = [
    "food", "staff", "pizza", "service", "room", "bar", "menu", "owner", "waiter", "coffee", "salad", "steak",
    "music", "patio", "price", "wine", "bread", "soup", "sushi", "manager", "lobby", "pool", "view", "beer",
    "cake", "tea", "burger", "pasta", "chef", "table", "noodles", "fries",
];
const GOOD: [&str; 4] = ["great", "lovely", "amazing", "friendly"];
const BAD: [&str; 4] = ["awful", "rude", "bland", "terrible"];

fn template_corpus() -> Vec<StyledSentence> {
    let mut out = Vec::new();
    for (i, noun) in NOUNS.iter().enumerate() {
        for style in 0..2 {
            let adj = if style == 0 { BAD[i % 4] } else { GOOD[(i / 4) % 4] };
            out.push(StyledSentence::parse(&format!("the {noun} was {adj} today"), StyleId(style)).unwrap());
        }
    }
    out
}

fn content_of(s: &StyledSentence) -> Vec<String> {
    s.tokens.iter().filter(|w| !GOOD.contains(&w.as_str()) && !BAD.contains(&w.as_str())).cloned().collect()
}

/// Worst relative error between autograd and central differences over
/// three entries of every parameter.
fn gradient_error(gen: &GeneratorParams, loss_fn: impl Fn(&GeneratorParams) -> Tensor) -> (f64, usize) {
    let grads = loss_fn(gen).backward().unwrap();
    let eps = 1e-6;
    let mut worst = 0f64;
    let mut checked = 0;
    for (_, var) in gen.store().named() {
        let Some(g) = grads.get(var) else { continue };
        let analytic: Vec<f64> = g.flatten_all().unwrap().to_vec1().unwrap();
        let base: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let n = base.len();
        for &i in &[0, n / 2, n - 1] {
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, var.shape(), var.device()).unwrap()).unwrap();
                nn::scalar(&loss_fn(gen)).unwrap()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            var.set(&Tensor::from_vec(base.clone(), var.shape(), var.device()).unwrap()).unwrap();
            let scale = analytic[i].abs().max(numeric.abs());
            // Entries whose gradient is below the finite-difference noise floor
            // carry no relative information.
            if scale > 1e-7 {
                worst = worst.max((analytic[i] - numeric).abs() / scale);
            }
            checked += 1;
        }
    }
    (worst, checked)
}

fn c5_gradients() -> Outcome {
    let data: Vec<StyledSentence> = template_corpus().into_iter().take(16).collect();
    let vocab = train_bpe(&data, 2, 50).unwrap();
    let arch = GeneratorConfig {
        dim: 8,
        layers: 1,
        heads: 2,
        ff_hidden: 12,
        max_len: 32,
        dropout: 0.0,
        tie_output: true,
        seed: 5,
    };
    let gen = GeneratorParams::init(&arch, &vocab, 2, DType::F64).unwrap();
    let clf_cfg = ClassifierConfig {
        filter_widths: vec![1, 2],
        maps_per_filter: 3,
        embedding_dim: 6,
        dropout: 0.0,
        ..ClassifierConfig::default()
    };
    let clf = ClassifierParams::init(&clf_cfg, &vocab, 2, DType::F64).unwrap();
    let contents: Vec<Vec<u32>> = data[..3].iter().map(|s| vocab.encode(&content_of(s))).collect();
    let originals: Vec<Vec<u32>> = data[..3].iter().map(|s| vocab.encode(&s.tokens)).collect();
    let styles: Vec<StyleId> = data[..3].iter().map(|s| s.style).collect();
    let targets = [StyleId(1), StyleId(0), StyleId(1)];
    let (rec, n_rec) = gradient_error(&gen, |g| {
        g.reconstruction_loss_batch(&contents, &styles, &originals, Reduction::Mean, &mut Mode::Eval).unwrap()
    });
    let (sty, n_sty) = gradient_error(&gen, |g| g.style_loss_batch(&clf, &contents, &targets, Rollout::GreedyFeed).unwrap());
    check(
        vocab.len() <= 50 && rec < 1e-3 && sty < 1e-3,
        format!(
            "vocab {}, dim 8; reconstruction rel err {rec:.2e} ({n_rec} entries), style rel err {sty:.2e} ({n_sty} entries)",
            vocab.len()
        ),
    )
}

fn identity_traces(data: &[StyledSentence]) -> Vec<DeletionTrace> {
    data.iter()
        .map(|s| DeletionTrace {
            source: s.tokens.clone(),
            style: s.style,
            steps: Vec::new(),
            content: content_of(s),
            stop_reason: StopReason::AlphaReached,
        })
        .collect()
}

fn c6_memorization() -> Outcome {
    let data = template_corpus();
    let vocab = train_bpe(&data, 2, 120).unwrap();
    let clf = ClassifierParams::init(
        &ClassifierConfig {
            filter_widths: vec![1, 2],
            maps_per_filter: 3,
            embedding_dim: 6,
            dropout: 0.0,
            ..ClassifierConfig::default()
        },
        &vocab,
        2,
        DType::F32,
    )
    .unwrap();
    let arch = GeneratorConfig {
        dim: 64,
        layers: 2,
        heads: 4,
        ff_hidden: 128,
        max_len: 24,
        dropout: 0.0,
        tie_output: true,
        seed: 7,
    };
    let cfg = TrainConfig {
        lambda_style: 0.0,
        epochs: 60,
        batch_size: 16,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let gen = generator::fit_on_traces(&identity_traces(&data), 2, &clf, &vocab, &arch, &cfg, DType::F32).unwrap();
    let exact = data
        .iter()
        .filter(|s| gen.generate(&vocab, &content_of(s), s.style, 20).unwrap().0 == s.tokens)
        .count();
    let loss = data
        .iter()
        .map(|s| gen.reconstruction_loss(&vocab, &content_of(s), s.style, &s.tokens, Reduction::Mean).unwrap())
        .sum::<f64>()
        / data.len() as f64;
    let rate = exact as f64 / data.len() as f64;
    check(
        loss < 0.1 && rate >= 0.9,
        format!("{} sentences: loss {loss:.4} nats/token, exact {exact} ({:.1}%)", data.len(), 100.0 * rate),
    )
}

// ---------------------------------------------------------------- 7, 8

fn yelp_dir() -> PathBuf {
    std::env::var_os("SST_YELP_DIR").map_or_else(|| PathBuf::from("data/yelp"), PathBuf::from)
}

/// Desk-scale Yelp run: 10K sentences per style, one classifier pair, and
/// one generator per style-loss weight, each transferred at (0.7, 0.5).
/// Returns (lambda, s-BLEU, target accuracy) rows.
fn desk_scale_runs(lambdas: &[f64]) -> Result<Vec<(f64, f64, f64)>, String> {
    let root = yelp_dir();
    if !root.join("sentiment.train.0").is_file() {
        return Err(format!("Yelp release not found under {}", root.display()));
    }
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::default();
    cfg.data.root = root;
    cfg.data.subsample = Some(10_000);
    cfg.out_dir = out.path().to_owned();
    cfg.vocab_size = 8000;
    cfg.classifier.epochs = 3;
    cfg.eval_classifier.epochs = 3;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 64;
    let styles = cfg.style_set().map_err(|e| e.to_string())?;
    let directions = experiment::parse_directions(None, &styles).map_err(|e| e.to_string())?;
    experiment::train_classifiers(&cfg).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for &lambda in lambdas {
        cfg.train.lambda_style = lambda;
        experiment::train_generator(&cfg).map_err(|e| e.to_string())?;
        let point = experiment::run_sweep(&cfg, &[0.7], &[0.5], &directions).map_err(|e| e.to_string())?;
        rows.push((lambda, point[0].s_bleu, point[0].accuracy));
    }
    Ok(rows)
}

fn c7_c8_yelp() -> (Outcome, Outcome) {
    match desk_scale_runs(&[1.0, 0.0]) {
        Err(reason) => (Blocked(reason.clone()), Blocked(reason)),
        Ok(rows) => {
            let (_, s_bleu, acc) = rows[0];
            let (_, _, acc0) = rows[1];
            (
                check(acc >= 0.5 && s_bleu >= 20.0, format!("accuracy {:.1}%, s-BLEU {s_bleu:.2}", 100.0 * acc)),
                check(acc > acc0, format!("accuracy {:.1}% with style loss vs {:.1}% without", 100.0 * acc, 100.0 * acc0)),
            )
        }
    }
}

// ---------------------------------------------------------------- 9

fn c9_bleu() -> Outcome {
    let data = read_tsv(PAIRS);
    let mut worst = 0f64;
    for (i, (c, r)) in data.iter().enumerate() {
        let ours = bleu_corpus(std::slice::from_ref(c), std::slice::from_ref(r)).unwrap();
        let pair = [(c.clone(), r.clone())];
        worst = worst.max((ours - oracle_bleu(&pair)).abs()).max((ours - SACREBLEU_PAIRS[i]).abs());
    }
    let cands: Vec<Vec<String>> = data.iter().map(|d| d.0.clone()).collect();
    let identity: Vec<Vec<Vec<String>>> = cands.iter().map(|s| vec![s.clone()]).collect();
    let id_score = bleu_corpus(&cands, &identity).unwrap();
    // Input copy: the synthetic test inputs scored against themselves.
    let inputs: Vec<Vec<String>> = common::synthetic(250, 9).into_iter().map(|s| s.tokens).collect();
    let self_refs: Vec<Vec<Vec<String>>> = inputs.iter().map(|s| vec![s.clone()]).collect();
    let copy = bleu_corpus(&inputs, &self_refs).unwrap();
    check(
        data.len() == 20 && worst < 0.1 && id_score == 100.0 && copy == 100.0,
        format!("20 pairs max deviation {worst:.2e}; identity {id_score}; input-copy self-BLEU {copy}"),
    )
}

// ---------------------------------------------------------------- 10

fn c10_perplexity() -> Outcome {
    let sents: Vec<Vec<String>> = common::synthetic(50, 1).into_iter().map(|s| s.tokens).collect();
    let uniform = perplexity(&Uniform(300), &sents).unwrap();

    let data = common::synthetic(150, 21);
    let vocab = train_bpe(&data, 2, 200).unwrap();
    let train: Vec<Vec<String>> = data.iter().map(|s| s.tokens.clone()).collect();
    let cfg = LmConfig {
        dim: 32,
        layers: 1,
        heads: 2,
        ff_hidden: 64,
        max_len: 32,
        dropout: 0.0,
        epochs: 6,
        batch_size: 16,
        learning_rate: 3e-3,
        ..LmConfig::default()
    };
    let params = train_lm(&train, &[], &vocab, &cfg).unwrap();
    let lm = SubwordLm::new(&params, &vocab).unwrap();
    let subset = &train[..100];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shuffled: Vec<Vec<String>> = subset
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.shuffle(&mut rng);
            s
        })
        .collect();
    let ordered = perplexity(&lm, subset).unwrap();
    let mixed = perplexity(&lm, &shuffled).unwrap();
    check(
        (uniform - 300.0).abs() < 1e-6 && ordered < mixed,
        format!("uniform PPL {uniform} for |V| = 300; trained LM {ordered:.3} in order vs {mixed:.3} shuffled"),
    )
}

// ---------------------------------------------------------------- 11

fn c11_semantic() -> Outcome {
    const LEX: [&str; 12] = ["the", "food", "was", "good", "bad", "staff", "very", "rude", "nice", "and", "slow", "place"];
    let enc = TableEncoder::random(&LEX, 8, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let len = rng.random_range(1..=8);
        (0..len).map(|_| LEX[rng.random_range(0..LEX.len())].to_string()).collect()
    };
    let sents: Vec<Vec<String>> = (0..20).map(|_| sentence(&mut rng)).collect();
    let refs: Vec<Vec<Vec<String>>> = sents.iter().map(|s| vec![s.clone()]).collect();
    let identity = semantic_score(&enc, &sents, &refs).unwrap();
    let mut worst = 0f64;
    for _ in 0..50 {
        let (c, r) = (sentence(&mut rng), sentence(&mut rng));
        let (ce, re) = (enc.embed(&c).unwrap(), enc.embed(&r).unwrap());
        worst = worst.max((greedy_match_f1(&ce, &re) - exhaustive_f1(&ce, &re)).abs());
    }
    check(
        (identity - 100.0).abs() < 1e-4 && worst < 1e-12,
        format!("identity {identity:.6}; greedy vs exhaustive max deviation {worst:.1e} over 50 pairs"),
    )
}

// ---------------------------------------------------------------- 12

fn c12_walk_endpoints() -> Outcome {
    let data = template_corpus();
    let vocab: Vocabulary = train_bpe(&data, 2, 120).unwrap();
    let arch = GeneratorConfig {
        dim: 16,
        layers: 1,
        heads: 2,
        ff_hidden: 32,
        max_len: 32,
        dropout: 0.0,
        tie_output: true,
        seed: 12,
    };
    let gen = GeneratorParams::init(&arch, &vocab, 2, DType::F32).unwrap();
    let mut mismatches = 0;
    for s in data.iter().take(20) {
        let content = content_of(s);
        let cap = generator::max_decode_len(vocab.encode(&s.tokens).len());
        let walk = gen.latent_walk(&vocab, &content, StyleId(0), StyleId(1), &[0.0, 1.0], cap).unwrap();
        let (src, _) = gen.generate(&vocab, &content, StyleId(0), cap).unwrap();
        let (tgt, _) = gen.generate(&vocab, &content, StyleId(1), cap).unwrap();
        if walk[0].1.join(" ").as_bytes() != src.join(" ").as_bytes() || walk[1].1.join(" ").as_bytes() != tgt.join(" ").as_bytes() {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches over 20 contents at w = 0 and w = 1"))
}

// ---------------------------------------------------------------- 13

/// Machine systems of the Yelp BERTscore column. Human references and the
/// input copy are not systems under comparison.
const YELP_BERTSCORE: [(&str, f64); 13] = [
    ("SST (0.7, 0.5)", 88.72),
    ("CrossAligned", 88.12),
    ("StyleEmbedding", 90.56),
    ("multi_decoder", 88.35),
    ("TemplateBased", 89.71),
    ("DeleteOnly", 89.28),
    ("DeleteAndRetrieve", 89.39),
    ("RetrieveOnly", 86.33),
    ("BackTranslation", 87.36),
    ("UnpairedRL", 88.51),
    ("DualRL", 92.14),
    ("B_GST", 91.78),
    ("G_GST", 91.15),
];

fn c13_flagged_set() -> Outcome {
    let mut reports: Vec<EvalReport> = YELP_BERTSCORE
        .iter()
        .map(|&(name, v)| {
            let row = YELP.iter().find(|r| r.0 == name).unwrap();
            EvalReport::new(name, row.1, row.2, 0.5, row.4, row.5, v).unwrap()
        })
        .collect();
    let cfg = StabilityConfig {
        metrics: vec![Metric::Semantic],
        ..StabilityConfig::default()
    };
    let th = stability_report(&mut reports, &cfg);
    let flagged: BTreeSet<&str> = reports.iter().filter(|r| r.is_flagged(Metric::Semantic)).map(|r| r.system_name()).collect();
    let expected: BTreeSet<&str> = ["CrossAligned", "multi_decoder", "RetrieveOnly", "BackTranslation"].into_iter().collect();
    check(
        flagged == expected,
        format!("threshold {:.3} (mean {:.3}, margin {:.3}); flagged {:?}", th[0].threshold, th[0].mean, th[0].margin, flagged),
    )
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        }
    }
}

fn main() {
    let mut outcomes: Vec<(u32, &str, Outcome)> = Vec::new();
    let simple: [(u32, &str, fn() -> Outcome); 6] = [
        (1, "published geometric means", c1_geometric_means),
        (2, "deleter equals occlusion oracle", c2_deleter_oracle),
        (3, "deletions non-increasing in alpha and beta", c3_monotone_counts),
        (4, "soft one-hot equals hard prediction", c4_soft_equals_hard),
        (5, "loss gradients match finite differences", c5_gradients),
        (6, "reconstruction on 64 sentences", c6_memorization),
    ];
    for (id, name, f) in simple {
        outcomes.push((id, name, guarded(f)));
    }
    let (c7, c8) = match panic::catch_unwind(c7_c8_yelp) {
        Ok(pair) => pair,
        Err(_) => (Fail("panicked".into()), Fail("panicked".into())),
    };
    outcomes.push((7, "Yelp desk-scale accuracy and s-BLEU", c7));
    outcomes.push((8, "style loss raises target accuracy", c8));
    let rest: [(u32, &str, fn() -> Outcome); 5] = [
        (9, "BLEU oracle, identity, input copy", c9_bleu),
        (10, "perplexity conventions", c10_perplexity),
        (11, "semantic score identity and greedy matching", c11_semantic),
        (12, "latent walk endpoints", c12_walk_endpoints),
        (13, "BERTscore stability flags", c13_flagged_set),
    ];
    for (id, name, f) in rest {
        outcomes.push((id, name, guarded(f)));
    }

    let mut failed = 0;
    let mut blocked = 0;
    for (id, name, outcome) in &outcomes {
        match outcome {
            Pass(d) => println!("PASS {id:>2} {name}: {d}"),
            Fail(d) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {d}");
            }
            Blocked(d) => {
                blocked += 1;
                println!("FAIL {id:>2} {name}: blocked, {d}");
            }
        }
    }
    let passed = outcomes.len() - failed - blocked;
    println!("acceptance: {passed} passed, {} failed ({blocked} blocked on missing data)", failed + blocked);
    if failed > 0 {
        std::process::exit(1);
    }
}
