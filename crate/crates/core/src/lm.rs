//! Causal subword language models for fluency scoring.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use candle_core::{DType, Tensor, D};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{self, attention_bias, ids_tensor, LayerNorm, Mode, ParamStore, Trainer, TransformerBlock};
use crate::tokenizer::{Vocabulary, END, PAD, START};

/// Anything that assigns a log-likelihood to word sequences.
pub trait LanguageModel: Sync {
    /// Per sentence: summed negative log-likelihood (nats) and the number of
    /// predicted tokens, end token included.
    fn score(&self, sentences: &[Vec<String>]) -> Result<Vec<(f64, usize)>>;
}

/// `exp` of the corpus-mean per-token negative log-likelihood.
pub fn perplexity<L: LanguageModel + ?Sized>(lm: &L, sentences: &[Vec<String>]) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::Input("perplexity of an empty corpus is undefined".into()));
    }
    let scores = lm.score(sentences)?;
    let (nll, tokens) = scores.iter().fold((0.0, 0usize), |(a, n), (l, t)| (a + l, n + t));
    if tokens == 0 {
        return Err(Error::Input("language model predicted no tokens".into()));
    }
    Ok((nll / tokens as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            dim: 128,
            layers: 2,
            heads: 4,
            ff_hidden: 512,
            max_len: 256,
            dropout: 0.1,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: 1.0,
            patience: 2,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: LmConfig,
    vocab_hash: String,
    vocab_size: usize,
    dtype: String,
    history: Vec<LmEpoch>,
    provenance: HashMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmEpoch {
    pub epoch: usize,
    pub train_nll: f64,
    pub heldout_ppl: f64,
}

/// Decoder-only Transformer over `[<s>, y_1, ..., y_n]` predicting
/// `y_1, ..., y_n, </s>`, with the output layer tied to the embeddings.
pub struct LmParams {
    config: LmConfig,
    vocab_hash: String,
    vocab_size: usize,
    store: ParamStore,
    token_embedding: Tensor,
    position_embedding: Tensor,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    output_bias: Tensor,
    history: Vec<LmEpoch>,
    provenance: HashMap<String, String>,
}

impl std::fmt::Debug for LmParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LmParams")
            .field("config", &self.config)
            .field("vocab_size", &self.vocab_size)
            .finish_non_exhaustive()
    }
}

impl LmParams {
    pub fn init(config: &LmConfig, vocab: &Vocabulary, dtype: DType) -> Result<Self> {
        Self::init_raw(config, vocab.hash(), vocab.len(), dtype)
    }

    fn init_raw(config: &LmConfig, vocab_hash: String, vocab_size: usize, dtype: DType) -> Result<Self> {
        if config.dim == 0 || config.layers == 0 || config.max_len < 2 || config.batch_size == 0 {
            return Err(Error::Config("language model sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        let mut rng = nn::seeded_rng(config.seed, 0);
        let mut store = ParamStore::new(dtype);
        let bound = (3.0 / config.dim as f64).sqrt();
        let token_embedding = store.uniform("token_embedding", &[vocab_size, config.dim], bound, &mut rng)?;
        let position_embedding = store.uniform("position_embedding", &[config.max_len, config.dim], bound, &mut rng)?;
        let blocks = (0..config.layers)
            .map(|i| TransformerBlock::new(&mut store, &format!("block.{i}"), config.dim, config.heads, config.ff_hidden, false, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(&mut store, "norm", config.dim)?;
        let output_bias = store.constant("output.bias", &[vocab_size], 0.0)?;
        Ok(LmParams {
            config: config.clone(),
            vocab_hash,
            vocab_size,
            store,
            token_embedding,
            position_embedding,
            blocks,
            norm,
            output_bias,
            history: Vec::new(),
            provenance: HashMap::new(),
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn history(&self) -> &[LmEpoch] {
        &self.history
    }

    pub fn fingerprint(&self) -> Result<String> {
        self.store.fingerprint()
    }

    pub fn provenance_mut(&mut self) -> &mut HashMap<String, String> {
        &mut self.provenance
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.hash() != self.vocab_hash {
            return Err(Error::Config("language model was trained against a different vocabulary".into()));
        }
        Ok(())
    }

    /// Logits `(batch, T + 1, vocab)` for id rows of length `T` (padded).
    fn logits(&self, rows: &[Vec<u32>], mode: &mut Mode) -> Result<Tensor> {
        let inputs: Vec<Vec<u32>> = rows
            .iter()
            .map(|r| std::iter::once(START).chain(r.iter().copied()).collect())
            .collect();
        let (ids, lengths) = ids_tensor(&inputs, PAD, self.store.device())?;
        let (b, l) = ids.dims2()?;
        if l > self.config.max_len {
            return Err(Error::Length { len: l, max: self.config.max_len });
        }
        let emb = self.token_embedding.index_select(&ids.flatten_all()?, 0)?.reshape((b, l, self.config.dim))?;
        let mut x = mode.dropout(&emb.broadcast_add(&self.position_embedding.narrow(0, 0, l)?)?)?;
        let bias = attention_bias(&lengths, l, l, true, self.store.dtype(), self.store.device())?;
        for block in &self.blocks {
            x = block.forward(&x, &bias, None, mode)?;
        }
        let x = self.norm.forward(&x)?;
        Ok(x.broadcast_matmul(&self.token_embedding.t()?)?.broadcast_add(&self.output_bias)?)
    }

    /// Per-row summed NLL `(batch,)` and the token counts.
    fn row_nll(&self, rows: &[Vec<u32>], mode: &mut Mode) -> Result<(Tensor, Vec<usize>)> {
        let logits = self.logits(rows, mode)?;
        let (b, steps, _) = logits.dims3()?;
        let mut targets = Vec::with_capacity(b * steps);
        let mut mask = Vec::with_capacity(b * steps);
        for row in rows {
            for j in 0..steps {
                let (t, m) = match j.cmp(&row.len()) {
                    std::cmp::Ordering::Less => (row[j], 1.0f32),
                    std::cmp::Ordering::Equal => (END, 1.0),
                    std::cmp::Ordering::Greater => (PAD, 0.0),
                };
                targets.push(t);
                mask.push(m);
            }
        }
        let device = logits.device();
        let targets = Tensor::from_vec(targets, (b, steps, 1), device)?;
        let mask = Tensor::from_vec(mask, (b, steps), device)?.to_dtype(logits.dtype())?;
        let log_probs = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
        let nll = (log_probs.gather(&targets, 2)?.squeeze(2)? * mask)?.sum(1)?.neg()?;
        Ok((nll, rows.iter().map(|r| r.len() + 1).collect()))
    }

    /// Summed NLL and token count per id row.
    pub fn score_ids(&self, rows: &[Vec<u32>]) -> Result<Vec<(f64, usize)>> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(self.config.batch_size.max(1)) {
            let (nll, counts) = self.row_nll(chunk, &mut Mode::Eval)?;
            let nll: Vec<f64> = nll.to_dtype(DType::F64)?.to_vec1()?;
            out.extend(nll.into_iter().zip(counts));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            kind: "lm".into(),
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            vocab_size: self.vocab_size,
            dtype: format!("{:?}", self.store.dtype()),
            history: self.history.clone(),
            provenance: self.provenance.clone(),
        };
        checkpoint::save(path, &header, &self.store.tensors())
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let (header, tensors): (Header, _) = checkpoint::load(path)?;
        if header.kind != "lm" {
            return Err(Error::Checkpoint(format!("{} holds a {} checkpoint", path.display(), header.kind)));
        }
        if header.vocab_hash != vocab.hash() {
            return Err(Error::Config(format!("{} was trained against a different vocabulary", path.display())));
        }
        let dtype = if header.dtype == "F64" { DType::F64 } else { DType::F32 };
        let mut params = Self::init_raw(&header.config, header.vocab_hash, header.vocab_size, dtype)?;
        params.store.assign(&tensors)?;
        params.history = header.history;
        params.provenance = header.provenance;
        Ok(params)
    }
}

/// A trained [`LmParams`] paired with its vocabulary.
pub struct SubwordLm<'a> {
    params: &'a LmParams,
    vocab: &'a Vocabulary,
}

impl<'a> SubwordLm<'a> {
    pub fn new(params: &'a LmParams, vocab: &'a Vocabulary) -> Result<Self> {
        params.check_vocab(vocab)?;
        Ok(SubwordLm { params, vocab })
    }
}

impl LanguageModel for SubwordLm<'_> {
    fn score(&self, sentences: &[Vec<String>]) -> Result<Vec<(f64, usize)>> {
        let rows: Vec<Vec<u32>> = sentences.iter().map(|s| self.vocab.encode(s)).collect();
        self.params.score_ids(&rows)
    }
}

/// Scores precomputed by an external model, looked up by sentence text.
///
/// The file holds one JSON object per line:
/// `{"text": "...", "nll": <nats>, "tokens": <count>}`.
#[derive(Debug, Clone)]
pub struct PrecomputedLm {
    scores: HashMap<String, (f64, usize)>,
}

#[derive(Deserialize)]
struct PrecomputedLine {
    text: String,
    nll: f64,
    tokens: usize,
}

impl PrecomputedLm {
    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut scores = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PrecomputedLine = serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })?;
            scores.insert(rec.text, (rec.nll, rec.tokens));
        }
        Ok(PrecomputedLm { scores })
    }
}

impl LanguageModel for PrecomputedLm {
    fn score(&self, sentences: &[Vec<String>]) -> Result<Vec<(f64, usize)>> {
        sentences
            .iter()
            .map(|s| {
                let text = s.join(" ");
                self.scores
                    .get(&text)
                    .copied()
                    .ok_or_else(|| Error::Adapter(format!("no precomputed score for {text:?}")))
            })
            .collect()
    }
}

/// Trains on `train` with early stopping on the perplexity of `heldout`
/// (the training text itself when `heldout` is empty); the best epoch wins.
pub fn train_lm(train: &[Vec<String>], heldout: &[Vec<String>], vocab: &Vocabulary, config: &LmConfig) -> Result<LmParams> {
    train_lm_with(train, heldout, vocab, config, DType::F32)
}

pub fn train_lm_with(
    train: &[Vec<String>],
    heldout: &[Vec<String>],
    vocab: &Vocabulary,
    config: &LmConfig,
    dtype: DType,
) -> Result<LmParams> {
    let limit = config.max_len - 1;
    let rows: Vec<Vec<u32>> = train
        .iter()
        .map(|s| vocab.encode(s))
        .filter(|r| r.len() <= limit)
        .collect();
    if rows.is_empty() {
        return Err(Error::Training("language model corpus is empty".into()));
    }
    if rows.len() < train.len() {
        log::warn!("skipped {} sentences longer than {limit} subwords", train.len() - rows.len());
    }
    let held: Vec<Vec<u32>> = if heldout.is_empty() {
        rows.clone()
    } else {
        heldout.iter().map(|s| vocab.encode(s)).filter(|r| r.len() <= limit).collect()
    };

    let mut params = LmParams::init(config, vocab, dtype)?;
    let mut trainer = Trainer::new(&params.store, config.learning_rate, Some(config.clip_norm))?;
    let mut mode = Mode::train(config.seed, config.dropout);
    let mut order_rng = nn::seeded_rng(config.seed, 1);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut best: Option<(f64, HashMap<String, Tensor>)> = None;
    let mut stale = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let (mut total, mut tokens) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Vec<u32>> = chunk.iter().map(|&i| rows[i].clone()).collect();
            let (nll, counts) = params.row_nll(&batch, &mut mode)?;
            let n: usize = counts.iter().sum();
            let loss = (nll.sum_all()? / n as f64)?;
            let value = nn::scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Divergence(format!("language model loss {value} at epoch {epoch}")));
            }
            trainer.step(&loss)?;
            total += value * n as f64;
            tokens += n;
        }
        let scores = params.score_ids(&held)?;
        let (h_nll, h_tok) = scores.iter().fold((0.0, 0usize), |(a, n), (l, t)| (a + l, n + t));
        let ppl = (h_nll / h_tok.max(1) as f64).exp();
        log::info!("lm epoch {epoch} train nll {:.4} held-out ppl {ppl:.3}", total / tokens as f64);
        params.history.push(LmEpoch {
            epoch,
            train_nll: total / tokens as f64,
            heldout_ppl: ppl,
        });
        if best.as_ref().is_none_or(|(b, _)| ppl < *b) {
            best = Some((ppl, params.store.snapshot()?));
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }
    if let Some((_, tensors)) = best {
        params.store.assign(&tensors)?;
    }
    Ok(params)
}
