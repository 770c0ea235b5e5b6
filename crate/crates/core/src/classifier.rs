//! Convolutional style classifier: embedding table, parallel filter banks with
//! max-over-time pooling, and an affine map to style logits.
//!
//! Two forward paths share the parameters. The tensor path handles training
//! and soft (distribution-valued) inputs and is differentiable. The inference
//! path scores id sequences in plain `f64` arithmetic, one sequence at a time,
//! so a batched call returns exactly what sequential calls would.
//!
//! Inputs shorter than the widest filter are right-padded with `<pad>`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use candle_core::{DType, Device, Tensor, D};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::{DatasetSplit, StyleId};
use crate::deleter::StyleScorer;
use crate::error::{Error, Result};
use crate::nn::{self, ids_tensor, Linear, Mode, ParamStore, Trainer};
use crate::tokenizer::{Vocabulary, PAD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub filter_widths: Vec<usize>,
    pub maps_per_filter: usize,
    pub embedding_dim: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    /// The deletion / style-loss classifier: five banks of widths 1..=5.
    fn default() -> Self {
        ClassifierConfig {
            filter_widths: vec![1, 2, 3, 4, 5],
            maps_per_filter: 100,
            embedding_dim: 256,
            dropout: 0.5,
            epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 1,
        }
    }
}

impl ClassifierConfig {
    /// The held-out evaluation classifier: different widths and seed.
    pub fn evaluation_default() -> Self {
        ClassifierConfig {
            filter_widths: vec![2, 3, 4],
            seed: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return Err(Error::Config("filter widths must be non-empty and positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.maps_per_filter == 0 || self.embedding_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("classifier sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn min_len(&self) -> usize {
        self.filter_widths.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: ClassifierConfig,
    vocab_hash: String,
    vocab_size: usize,
    n_styles: usize,
    dtype: String,
    history: Vec<EpochStats>,
    provenance: HashMap<String, String>,
}

struct Bank {
    width: usize,
    weight: Tensor,
    bias: Tensor,
}

pub struct ClassifierParams {
    config: ClassifierConfig,
    vocab_hash: String,
    vocab_size: usize,
    n_styles: usize,
    store: ParamStore,
    embedding: Tensor,
    banks: Vec<Bank>,
    output: Linear,
    history: Vec<EpochStats>,
    provenance: HashMap<String, String>,
    inference: OnceLock<CnnInference>,
}

impl std::fmt::Debug for ClassifierParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClassifierParams")
            .field("config", &self.config)
            .field("vocab_size", &self.vocab_size)
            .field("n_styles", &self.n_styles)
            .finish_non_exhaustive()
    }
}

impl ClassifierParams {
    /// Freshly initialized parameters.
    pub fn init(config: &ClassifierConfig, vocab: &Vocabulary, n_styles: usize, dtype: DType) -> Result<Self> {
        Self::init_raw(config, vocab.hash(), vocab.len(), n_styles, dtype)
    }

    pub(crate) fn init_raw(
        config: &ClassifierConfig,
        vocab_hash: String,
        vocab_size: usize,
        n_styles: usize,
        dtype: DType,
    ) -> Result<Self> {
        config.validate()?;
        if n_styles < 2 {
            return Err(Error::Config("a classifier needs at least 2 styles".into()));
        }
        let mut rng = nn::seeded_rng(config.seed, 0);
        let mut store = ParamStore::new(dtype);
        let embedding = store.uniform("embedding", &[vocab_size, config.embedding_dim], 0.25, &mut rng)?;
        let mut banks = Vec::new();
        for (i, &width) in config.filter_widths.iter().enumerate() {
            let fan_in = config.embedding_dim * width;
            let bound = (6.0 / (fan_in + config.maps_per_filter) as f64).sqrt();
            banks.push(Bank {
                width,
                weight: store.uniform(
                    &format!("conv{i}.weight"),
                    &[config.maps_per_filter, config.embedding_dim, width],
                    bound,
                    &mut rng,
                )?,
                bias: store.constant(&format!("conv{i}.bias"), &[config.maps_per_filter], 0.0)?,
            });
        }
        let features = config.maps_per_filter * config.filter_widths.len();
        let output = Linear::new(&mut store, "output", features, n_styles, &mut rng)?;
        Ok(ClassifierParams {
            config: config.clone(),
            vocab_hash,
            vocab_size,
            n_styles,
            store,
            embedding,
            banks,
            output,
            history: Vec::new(),
            provenance: HashMap::new(),
            inference: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn n_styles(&self) -> usize {
        self.n_styles
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn provenance_mut(&mut self) -> &mut HashMap<String, String> {
        &mut self.provenance
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.hash() != self.vocab_hash {
            return Err(Error::Config(
                "classifier was trained against a different vocabulary".into(),
            ));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Result<String> {
        self.store.fingerprint()
    }

    /// Logits from already-embedded inputs `(batch, len, dim)`.
    ///
    /// `lengths[b]` is the number of real positions in row `b`. Rows must be
    /// padded with the `<pad>` embedding up to at least the widest filter;
    /// windows past `max(lengths[b], min_len)` are excluded from pooling.
    pub fn logits_from_embeddings(&self, embedded: &Tensor, lengths: &[usize], mode: &mut Mode) -> Result<Tensor> {
        let (batch, len, _) = embedded.dims3()?;
        let min_len = self.config.min_len();
        if len < min_len {
            return Err(Error::Input(format!("embedded input shorter than {min_len} positions")));
        }
        let x = mode.dropout(embedded)?;
        let dim = self.config.embedding_dim;
        let mut pooled = Vec::with_capacity(self.banks.len());
        for bank in &self.banks {
            let windows = len - bank.width + 1;
            // Unfolded windows (batch, windows, dim * width) against the
            // (maps, dim, width) filter, flattened to match.
            let taps: Vec<Tensor> = (0..bank.width).map(|k| x.narrow(1, k, windows)).collect::<candle_core::Result<_>>()?;
            let unfolded = Tensor::stack(&taps, 3)?.reshape((batch, windows, dim * bank.width))?;
            let filters = bank.weight.reshape((self.config.maps_per_filter, dim * bank.width))?;
            let conv = unfolded
                .broadcast_matmul(&filters.t()?)?
                .broadcast_add(&bank.bias)?
                .relu()?;
            let mut mask = Vec::with_capacity(batch * windows);
            for &l in lengths {
                let valid = l.max(min_len) - bank.width + 1;
                mask.extend((0..windows).map(|i| if i < valid { 1.0f32 } else { 0.0 }));
            }
            let mask = Tensor::from_vec(mask, (batch, windows, 1), embedded.device())?.to_dtype(embedded.dtype())?;
            // ReLU outputs are non-negative, so zeroing masked windows leaves the max intact.
            let masked = conv.broadcast_mul(&mask)?;
            let best = masked.argmax_keepdim(1)?;
            pooled.push(masked.gather(&best, 1)?.squeeze(1)?);
        }
        let features = Tensor::cat(&pooled, 1)?;
        let features = mode.dropout(&features)?;
        self.output.forward(&features)
    }

    /// Logits for padded id rows.
    pub fn logits_from_ids(&self, rows: &[Vec<u32>], mode: &mut Mode) -> Result<Tensor> {
        let min_len = self.config.min_len();
        let mut padded = rows.to_vec();
        if let Some(first) = padded.first_mut() {
            if first.len() < min_len {
                first.resize(min_len, PAD);
            }
        }
        let lengths: Vec<usize> = rows.iter().map(Vec::len).collect();
        if lengths.contains(&0) {
            return Err(Error::Input("cannot classify an empty sequence".into()));
        }
        let (ids, _) = ids_tensor(&padded, PAD, self.store.device())?;
        let (b, l) = ids.dims2()?;
        let embedded = self
            .embedding
            .index_select(&ids.flatten_all()?, 0)?
            .reshape((b, l, self.config.embedding_dim))?;
        self.logits_from_embeddings(&embedded, &lengths, mode)
    }

    /// Logits for soft inputs `(batch, len, vocab)` without validating the
    /// distributions. Positions at or past `lengths[b]` are replaced by the
    /// one-hot `<pad>` distribution.
    pub fn logits_from_distributions(&self, dists: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        let (batch, len, vocab) = dists.dims3()?;
        if vocab != self.vocab_size {
            return Err(Error::Config(format!(
                "distribution width {vocab} does not match classifier vocabulary {}",
                self.vocab_size
            )));
        }
        let min_len = self.config.min_len();
        let dists = if len < min_len {
            let pad = Tensor::zeros((batch, min_len - len, vocab), dists.dtype(), dists.device())?;
            Tensor::cat(&[dists, &pad], 1)?
        } else {
            dists.clone()
        };
        let total = dists.dim(1)?;
        let mut keep = Vec::with_capacity(batch * total);
        for &l in lengths {
            keep.extend((0..total).map(|t| u8::from(t < l)));
        }
        let keep = Tensor::from_vec(keep, (batch, total, 1), dists.device())?.broadcast_as(dists.shape())?;
        let mut pad_row = vec![0f32; vocab];
        pad_row[PAD as usize] = 1.0;
        let pad = Tensor::from_vec(pad_row, (1, 1, vocab), dists.device())?
            .to_dtype(dists.dtype())?
            .broadcast_as(dists.shape())?;
        let dists = keep.where_cond(&dists, &pad)?;
        let embedded = dists.broadcast_matmul(&self.embedding)?;
        self.logits_from_embeddings(&embedded, lengths, &mut Mode::Eval)
    }

    /// Style distribution for a soft input `(len, vocab)`; differentiable with
    /// respect to `dists`. Each row must sum to 1 within 1e-4.
    pub fn predict_proba_soft(&self, dists: &Tensor) -> Result<Tensor> {
        let (len, _) = dists.dims2()?;
        if len == 0 {
            return Err(Error::Input("cannot classify an empty sequence".into()));
        }
        let sums: Vec<f64> = dists.sum(D::Minus1)?.to_dtype(DType::F64)?.to_vec1()?;
        if let Some((i, s)) = sums.iter().enumerate().find(|(_, s)| (*s - 1.0).abs() > 1e-4) {
            return Err(Error::Input(format!("position {i} distribution sums to {s}")));
        }
        let logits = self.logits_from_distributions(&dists.unsqueeze(0)?, &[len])?;
        Ok(candle_nn::ops::softmax(&logits, D::Minus1)?.squeeze(0)?)
    }

    fn inference(&self) -> Result<&CnnInference> {
        if let Some(inf) = self.inference.get() {
            return Ok(inf);
        }
        let inf = CnnInference::from_params(self)?;
        Ok(self.inference.get_or_init(|| inf))
    }

    /// Style distribution for one id sequence (inference mode).
    pub fn predict_proba(&self, ids: &[u32]) -> Result<Vec<f64>> {
        let mut out = self.predict_proba_batch(&[ids.to_vec()])?;
        Ok(out.pop().expect("one row in, one row out"))
    }

    pub fn predict_proba_batch(&self, rows: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        self.inference()?.predict_batch(rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            kind: "classifier".into(),
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            vocab_size: self.vocab_size,
            n_styles: self.n_styles,
            dtype: format!("{:?}", self.store.dtype()),
            history: self.history.clone(),
            provenance: self.provenance.clone(),
        };
        checkpoint::save(path, &header, &self.store.tensors())
    }

    /// Loads a checkpoint, refusing one trained against another vocabulary.
    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let (header, tensors): (Header, _) = checkpoint::load(path)?;
        if header.kind != "classifier" {
            return Err(Error::Checkpoint(format!("{} holds a {} checkpoint", path.display(), header.kind)));
        }
        if header.vocab_hash != vocab.hash() {
            return Err(Error::Config(format!(
                "{} was trained against a different vocabulary",
                path.display()
            )));
        }
        let dtype = if header.dtype == "F64" { DType::F64 } else { DType::F32 };
        let mut params = Self::init_raw(&header.config, header.vocab_hash, header.vocab_size, header.n_styles, dtype)?;
        params.store.assign(&tensors)?;
        params.history = header.history;
        params.provenance = header.provenance;
        Ok(params)
    }
}

/// Plain-arithmetic mirror of the classifier for id inputs.
struct CnnInference {
    dim: usize,
    maps: usize,
    min_len: usize,
    n_styles: usize,
    embedding: Vec<f64>,
    widths: Vec<usize>,
    /// Per bank, layout `[map][channel][offset]`.
    conv_weights: Vec<Vec<f64>>,
    conv_biases: Vec<Vec<f64>>,
    /// Layout `[feature][style]`.
    out_weight: Vec<f64>,
    out_bias: Vec<f64>,
}

fn flat_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)
}

impl CnnInference {
    fn from_params(p: &ClassifierParams) -> Result<Self> {
        Ok(CnnInference {
            dim: p.config.embedding_dim,
            maps: p.config.maps_per_filter,
            min_len: p.config.min_len(),
            n_styles: p.n_styles,
            embedding: flat_f64(&p.embedding)?,
            widths: p.banks.iter().map(|b| b.width).collect(),
            conv_weights: p.banks.iter().map(|b| flat_f64(&b.weight)).collect::<Result<_>>()?,
            conv_biases: p.banks.iter().map(|b| flat_f64(&b.bias)).collect::<Result<_>>()?,
            out_weight: flat_f64(&p.output_weight())?,
            out_bias: flat_f64(&p.output_bias())?,
        })
    }

    /// Contribution of one token at every (bank, offset, map) slot.
    fn project(&self, token: u32) -> Vec<f64> {
        let e = &self.embedding[token as usize * self.dim..(token as usize + 1) * self.dim];
        let mut out = Vec::with_capacity(self.maps * self.widths.iter().sum::<usize>());
        for (bank, &w) in self.widths.iter().enumerate() {
            let weight = &self.conv_weights[bank];
            for j in 0..w {
                for m in 0..self.maps {
                    let mut acc = 0.0;
                    for (c, ec) in e.iter().enumerate() {
                        acc += weight[(m * self.dim + c) * w + j] * ec;
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    fn predict_one(&self, ids: &[u32], cache: &HashMap<u32, Vec<f64>>) -> Vec<f64> {
        let len = ids.len().max(self.min_len);
        let token_at = |i: usize| if i < ids.len() { ids[i] } else { PAD };
        let mut features = Vec::with_capacity(self.maps * self.widths.len());
        let mut bank_offset = 0;
        for (bank, &w) in self.widths.iter().enumerate() {
            let bias = &self.conv_biases[bank];
            for m in 0..self.maps {
                let mut best = 0.0f64;
                for start in 0..=(len - w) {
                    let mut acc = bias[m];
                    for j in 0..w {
                        acc += cache[&token_at(start + j)][bank_offset + j * self.maps + m];
                    }
                    best = best.max(acc);
                }
                features.push(best);
            }
            bank_offset += w * self.maps;
        }
        let mut logits = self.out_bias.clone();
        for (f, x) in features.iter().enumerate() {
            for (s, l) in logits.iter_mut().enumerate() {
                *l += x * self.out_weight[f * self.n_styles + s];
            }
        }
        softmax(&logits)
    }

    fn predict_batch(&self, rows: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        let vocab = self.embedding.len() / self.dim;
        let mut cache: HashMap<u32, Vec<f64>> = HashMap::new();
        cache.insert(PAD, self.project(PAD));
        for row in rows {
            if row.is_empty() {
                return Err(Error::Input("cannot classify an empty sequence".into()));
            }
            for &t in row {
                if t as usize >= vocab {
                    return Err(Error::Range { id: t, size: vocab });
                }
                cache.entry(t).or_insert_with(|| self.project(t));
            }
        }
        Ok(rows.iter().map(|r| self.predict_one(r, &cache)).collect())
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl ClassifierParams {
    fn output_weight(&self) -> Tensor {
        self.output_parts().0
    }

    fn output_bias(&self) -> Tensor {
        self.output_parts().1
    }

    fn output_parts(&self) -> (Tensor, Tensor) {
        let w = self.store.get("output.weight").expect("output weight registered");
        let b = self.store.get("output.bias").expect("output bias registered");
        (w.as_tensor().clone(), b.as_tensor().clone())
    }
}

/// Word-level adapter exposing the classifier to the deleter and evaluator.
pub struct CnnScorer<'a> {
    pub params: &'a ClassifierParams,
    pub vocab: &'a Vocabulary,
}

impl<'a> CnnScorer<'a> {
    pub fn new(params: &'a ClassifierParams, vocab: &'a Vocabulary) -> Result<Self> {
        params.check_vocab(vocab)?;
        Ok(CnnScorer { params, vocab })
    }
}

impl StyleScorer for CnnScorer<'_> {
    fn num_styles(&self) -> usize {
        self.params.n_styles()
    }

    fn score_batch(&self, batch: &[Vec<&str>]) -> Result<Vec<Vec<f64>>> {
        let mut pieces: HashMap<&str, Vec<u32>> = HashMap::new();
        let rows: Vec<Vec<u32>> = batch
            .iter()
            .map(|words| {
                words
                    .iter()
                    .flat_map(|w| pieces.entry(w).or_insert_with(|| self.vocab.encode_word(w)).clone())
                    .collect()
            })
            .collect();
        self.params.predict_proba_batch(&rows)
    }
}

fn encode_split(split: &DatasetSplit, vocab: &Vocabulary) -> Vec<(Vec<u32>, usize)> {
    split
        .iter()
        .map(|s| (vocab.encode(&s.tokens), s.style.0))
        .filter(|(ids, _)| !ids.is_empty())
        .collect()
}

fn accuracy(params: &ClassifierParams, data: &[(Vec<u32>, usize)], batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in data.chunks(batch_size.max(1)) {
        let rows: Vec<Vec<u32>> = chunk.iter().map(|(ids, _)| ids.clone()).collect();
        let logits = params.logits_from_ids(&rows, &mut Mode::Eval)?;
        let predicted: Vec<u32> = logits.argmax(D::Minus1)?.to_vec1()?;
        correct += predicted
            .iter()
            .zip(chunk)
            .filter(|(p, (_, label))| **p as usize == *label)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains with Adam on cross-entropy and returns the parameters of the epoch
/// with the best dev accuracy (train accuracy when `dev` is empty).
pub fn train_classifier(
    train: &DatasetSplit,
    dev: &DatasetSplit,
    vocab: &Vocabulary,
    config: &ClassifierConfig,
) -> Result<ClassifierParams> {
    train_classifier_with(train, dev, vocab, config, DType::F32)
}

pub fn train_classifier_with(
    train: &DatasetSplit,
    dev: &DatasetSplit,
    vocab: &Vocabulary,
    config: &ClassifierConfig,
    dtype: DType,
) -> Result<ClassifierParams> {
    let populated = train.populated_styles();
    if populated.len() < 2 {
        return Err(Error::Training(format!(
            "training data covers {} style(s); at least 2 are required",
            populated.len()
        )));
    }
    let n_styles = train.style_count();
    let mut params = ClassifierParams::init(config, vocab, n_styles, dtype)?;
    let mut data = encode_split(train, vocab);
    let dev_data = encode_split(dev, vocab);
    let mut trainer = Trainer::new(&params.store, config.learning_rate, None)?;
    let mut mode = Mode::train(config.seed, config.dropout);
    let mut shuffle_rng = nn::seeded_rng(config.seed, 1);
    let mut best: Option<(f64, HashMap<String, Tensor>)> = None;

    for epoch in 0..config.epochs {
        data.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in data.chunks(config.batch_size) {
            let rows: Vec<Vec<u32>> = chunk.iter().map(|(ids, _)| ids.clone()).collect();
            let labels: Vec<u32> = chunk.iter().map(|(_, l)| *l as u32).collect();
            let labels = Tensor::from_vec(labels, chunk.len(), &Device::Cpu)?;
            let logits = params.logits_from_ids(&rows, &mut mode)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &labels)?;
            let value = nn::scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Divergence(format!("classifier loss {value} at epoch {epoch}")));
            }
            trainer.step(&loss)?;
            loss_sum += value;
            batches += 1;
        }
        let eval_on = if dev_data.is_empty() { &data } else { &dev_data };
        let acc = accuracy(&params, eval_on, config.batch_size)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            dev_accuracy: acc,
        };
        log::info!(
            "classifier epoch {} loss {:.4} dev accuracy {:.4}",
            stats.epoch,
            stats.train_loss,
            stats.dev_accuracy
        );
        params.history.push(stats);
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, params.store.snapshot()?));
        }
    }
    if let Some((_, tensors)) = best {
        params.store.assign(&tensors)?;
    }
    Ok(params)
}

/// Fraction of `(ids, label)` pairs the inference path labels correctly.
pub fn hard_accuracy(params: &ClassifierParams, data: &[(Vec<u32>, StyleId)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("no examples to score".into()));
    }
    let rows: Vec<Vec<u32>> = data.iter().map(|(ids, _)| ids.clone()).collect();
    let probs = params.predict_proba_batch(&rows)?;
    let correct = probs
        .iter()
        .zip(data)
        .filter(|(p, (_, label))| argmax(p) == label.0)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
