//! Style-conditioned Transformer encoder-decoder.
//!
//! The encoder reads the content subwords (token + position embeddings,
//! unmasked self-attention). The decoder input is
//! `[style, <s>, y_1 + pos_0, y_2 + pos_1, ...]`: the style and start slots
//! carry no position embedding, and the logits read at slot `1 + j` predict
//! `y_{j+1}` (or `</s>`).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, D};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::classifier::{ClassifierParams, CnnScorer};
use crate::corpus::{DatasetSplit, StyleId, StyledSentence};
use crate::deleter::{self, DeleterConfig, DeletionTrace};
use crate::error::{Error, Result};
use crate::nn::{self, attention_bias, ids_tensor, LayerNorm, Linear, Mode, ParamStore, Trainer, TransformerBlock};
use crate::tokenizer::{Vocabulary, END, PAD, START};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    /// Size of the position table; bounds content and output length.
    pub max_len: usize,
    pub dropout: f64,
    pub tie_output: bool,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            dim: 256,
            layers: 3,
            heads: 4,
            ff_hidden: 1024,
            max_len: 128,
            dropout: 0.1,
            tie_output: true,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rollout {
    /// Feed argmax tokens back; the classifier sees the full distributions.
    GreedyFeed,
    /// Feed the expected embedding of each step's distribution.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Mean negative log-likelihood per target token.
    Mean,
    /// Summed negative log-likelihood per sentence, averaged over the batch.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_style: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub alpha_train: f64,
    pub beta_train: f64,
    pub rollout: Rollout,
    pub reduction: Reduction,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_style: 1.0,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-4,
            clip_norm: 1.0,
            seed: 1,
            alpha_train: 0.7,
            beta_train: 0.5,
            rollout: Rollout::GreedyFeed,
            reduction: Reduction::Mean,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_style >= 0.0) {
            return Err(Error::Config(format!("lambda_style {} must be non-negative", self.lambda_style)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        DeleterConfig::new(self.alpha_train, self.beta_train).map(|_| ())
    }
}

/// Output cap for a source of `source_len` subwords: `ceil(1.5 n) + 5`.
pub fn max_decode_len(source_len: usize) -> usize {
    (3 * source_len).div_ceil(2) + 5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEpoch {
    pub epoch: usize,
    pub reconstruction: f64,
    pub style: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: GeneratorConfig,
    train: Option<TrainConfig>,
    vocab_hash: String,
    classifier_hash: Option<String>,
    vocab_size: usize,
    n_styles: usize,
    dtype: String,
    history: Vec<GeneratorEpoch>,
    provenance: HashMap<String, String>,
}

enum OutputProjection {
    Tied(Tensor),
    Untied(Linear),
}

/// One decoded sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub ids: Vec<u32>,
    /// True when the cap was hit before `</s>`.
    pub truncated: bool,
}

pub struct GeneratorParams {
    config: GeneratorConfig,
    train_config: Option<TrainConfig>,
    vocab_hash: String,
    classifier_hash: Option<String>,
    vocab_size: usize,
    n_styles: usize,
    store: ParamStore,
    token_embedding: Tensor,
    position_embedding: Tensor,
    style_embedding: Tensor,
    encoder: Vec<TransformerBlock>,
    encoder_norm: LayerNorm,
    decoder: Vec<TransformerBlock>,
    decoder_norm: LayerNorm,
    output: OutputProjection,
    history: Vec<GeneratorEpoch>,
    provenance: HashMap<String, String>,
}

impl std::fmt::Debug for GeneratorParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneratorParams")
            .field("config", &self.config)
            .field("vocab_size", &self.vocab_size)
            .field("n_styles", &self.n_styles)
            .finish_non_exhaustive()
    }
}

impl GeneratorParams {
    pub fn init(config: &GeneratorConfig, vocab: &Vocabulary, n_styles: usize, dtype: DType) -> Result<Self> {
        Self::init_raw(config, vocab.hash(), vocab.len(), n_styles, dtype)
    }

    fn init_raw(config: &GeneratorConfig, vocab_hash: String, vocab_size: usize, n_styles: usize, dtype: DType) -> Result<Self> {
        if config.dim == 0 || config.layers == 0 || config.max_len == 0 {
            return Err(Error::Config("generator sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        let mut rng = nn::seeded_rng(config.seed, 0);
        let mut store = ParamStore::new(dtype);
        let d = config.dim;
        let emb_bound = (3.0 / d as f64).sqrt();
        let token_embedding = store.uniform("token_embedding", &[vocab_size, d], emb_bound, &mut rng)?;
        let position_embedding = store.uniform("position_embedding", &[config.max_len, d], emb_bound, &mut rng)?;
        let style_embedding = store.uniform("style_embedding", &[n_styles, d], emb_bound, &mut rng)?;
        let encoder = (0..config.layers)
            .map(|i| TransformerBlock::new(&mut store, &format!("encoder.{i}"), d, config.heads, config.ff_hidden, false, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let encoder_norm = LayerNorm::new(&mut store, "encoder.norm", d)?;
        let decoder = (0..config.layers)
            .map(|i| TransformerBlock::new(&mut store, &format!("decoder.{i}"), d, config.heads, config.ff_hidden, true, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let decoder_norm = LayerNorm::new(&mut store, "decoder.norm", d)?;
        let output = if config.tie_output {
            OutputProjection::Tied(store.constant("output.bias", &[vocab_size], 0.0)?)
        } else {
            OutputProjection::Untied(Linear::new(&mut store, "output", d, vocab_size, &mut rng)?)
        };
        Ok(GeneratorParams {
            config: config.clone(),
            train_config: None,
            vocab_hash,
            classifier_hash: None,
            vocab_size,
            n_styles,
            store,
            token_embedding,
            position_embedding,
            style_embedding,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            output,
            history: Vec::new(),
            provenance: HashMap::new(),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn n_styles(&self) -> usize {
        self.n_styles
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn history(&self) -> &[GeneratorEpoch] {
        &self.history
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn style_embedding(&self) -> &Tensor {
        &self.style_embedding
    }

    pub fn provenance_mut(&mut self) -> &mut HashMap<String, String> {
        &mut self.provenance
    }

    pub fn fingerprint(&self) -> Result<String> {
        self.store.fingerprint()
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.hash() != self.vocab_hash {
            return Err(Error::Config("generator was trained against a different vocabulary".into()));
        }
        Ok(())
    }

    fn check_style(&self, style: StyleId) -> Result<()> {
        if style.0 >= self.n_styles {
            return Err(Error::Input(format!("style {style} is outside the {} known styles", self.n_styles)));
        }
        Ok(())
    }

    fn device(&self) -> &Device {
        self.store.device()
    }

    /// Encoder states `(batch, len, dim)` for padded content rows.
    pub fn encode_ids(&self, rows: &[Vec<u32>], mode: &mut Mode) -> Result<(Tensor, Vec<usize>)> {
        let longest = rows.iter().map(Vec::len).max().unwrap_or(0);
        if longest > self.config.max_len {
            return Err(Error::Length { len: longest, max: self.config.max_len });
        }
        if rows.iter().any(Vec::is_empty) {
            return Err(Error::Input("content must hold at least one subword".into()));
        }
        let (ids, lengths) = ids_tensor(rows, PAD, self.device())?;
        let (b, l) = ids.dims2()?;
        let tokens = self.token_embedding.index_select(&ids.flatten_all()?, 0)?.reshape((b, l, self.config.dim))?;
        let positions = self.position_embedding.narrow(0, 0, l)?;
        let mut x = mode.dropout(&tokens.broadcast_add(&positions)?)?;
        let bias = attention_bias(&lengths, l, l, false, self.dtype(), self.device())?;
        for block in &self.encoder {
            x = block.forward(&x, &bias, None, mode)?;
        }
        Ok((self.encoder_norm.forward(&x)?, lengths))
    }

    /// Encoder states `(subwords, dim)` for one content word list.
    pub fn encode(&self, vocab: &Vocabulary, content: &[String]) -> Result<Tensor> {
        let ids = vocab.encode(content);
        let (states, _) = self.encode_ids(&[ids], &mut Mode::Eval)?;
        Ok(states.squeeze(0)?)
    }

    pub fn style_vectors(&self, styles: &[StyleId]) -> Result<Tensor> {
        for s in styles {
            self.check_style(*s)?;
        }
        let ids: Vec<u32> = styles.iter().map(|s| s.0 as u32).collect();
        let ids = Tensor::from_vec(ids, styles.len(), self.device())?;
        Ok(self.style_embedding.index_select(&ids, 0)?)
    }

    /// `w * E[target] + (1 - w) * E[source]`.
    pub fn interpolated_style(&self, source: StyleId, target: StyleId, w: f64) -> Result<Tensor> {
        let v = self.style_vectors(&[source, target])?;
        let src = v.get(0)?;
        let tgt = v.get(1)?;
        Ok(((tgt * w)? + (src * (1.0 - w))?)?)
    }

    fn embed_tokens(&self, rows: &[Vec<u32>]) -> Result<(Tensor, Vec<usize>)> {
        let (ids, lengths) = ids_tensor(rows, PAD, self.device())?;
        let (b, t) = ids.dims2()?;
        let emb = self.token_embedding.index_select(&ids.flatten_all()?, 0)?.reshape((b, t, self.config.dim))?;
        Ok((emb, lengths))
    }

    /// Decoder logits `(batch, T + 1, vocab)` given target-side input
    /// embeddings `(batch, T, dim)` (without positions).
    fn decoder_logits(
        &self,
        memory: &Tensor,
        memory_lengths: &[usize],
        styles: &Tensor,
        targets: &Tensor,
        target_lengths: &[usize],
        mode: &mut Mode,
    ) -> Result<Tensor> {
        let (b, t, d) = targets.dims3()?;
        if t > self.config.max_len {
            return Err(Error::Length { len: t, max: self.config.max_len });
        }
        let start = self
            .token_embedding
            .get(START as usize)?
            .reshape((1, 1, d))?
            .broadcast_as((b, 1, d))?;
        let mut parts = vec![styles.reshape((b, 1, d))?, start];
        if t > 0 {
            let positions = self.position_embedding.narrow(0, 0, t)?;
            parts.push(targets.broadcast_add(&positions)?);
        }
        let x = Tensor::cat(&parts, 1)?;
        let mut x = mode.dropout(&x)?;
        let slots: Vec<usize> = target_lengths.iter().map(|l| l + 2).collect();
        let self_bias = attention_bias(&slots, t + 2, t + 2, true, self.dtype(), self.device())?;
        let cross_bias = attention_bias(memory_lengths, t + 2, memory.dim(1)?, false, self.dtype(), self.device())?;
        for block in &self.decoder {
            x = block.forward(&x, &self_bias, Some((memory, &cross_bias)), mode)?;
        }
        let hidden = self.decoder_norm.forward(&x.narrow(1, 1, t + 1)?)?;
        self.project(&hidden)
    }

    fn project(&self, hidden: &Tensor) -> Result<Tensor> {
        match &self.output {
            OutputProjection::Tied(bias) => Ok(hidden.broadcast_matmul(&self.token_embedding.t()?)?.broadcast_add(bias)?),
            OutputProjection::Untied(linear) => linear.forward(hidden),
        }
    }

    /// Teacher-forced logits for `(content, style, original)` rows.
    pub fn teacher_forced_logits(
        &self,
        contents: &[Vec<u32>],
        styles: &Tensor,
        originals: &[Vec<u32>],
        mode: &mut Mode,
    ) -> Result<Tensor> {
        let (memory, memory_lengths) = self.encode_ids(contents, mode)?;
        let (targets, target_lengths) = self.embed_tokens(originals)?;
        self.decoder_logits(&memory, &memory_lengths, styles, &targets, &target_lengths, mode)
    }

    /// Negative log-likelihood of `originals` followed by `</s>`.
    pub fn reconstruction_loss_batch(
        &self,
        contents: &[Vec<u32>],
        styles: &[StyleId],
        originals: &[Vec<u32>],
        reduction: Reduction,
        mode: &mut Mode,
    ) -> Result<Tensor> {
        let style_vecs = self.style_vectors(styles)?;
        let logits = self.teacher_forced_logits(contents, &style_vecs, originals, mode)?;
        reconstruction_nll(&logits, originals, reduction)
    }

    pub fn reconstruction_loss(
        &self,
        vocab: &Vocabulary,
        content: &[String],
        source_style: StyleId,
        original: &[String],
        reduction: Reduction,
    ) -> Result<f64> {
        let loss = self.reconstruction_loss_batch(
            &[vocab.encode(content)],
            &[source_style],
            &[vocab.encode(original)],
            reduction,
            &mut Mode::Eval,
        )?;
        nn::scalar(&loss)
    }

    /// Greedy decoding of every row under the given style vectors `(batch, dim)`.
    pub fn greedy_decode(&self, contents: &[Vec<u32>], styles: &Tensor, caps: &[usize]) -> Result<Vec<Decoded>> {
        let mut mode = Mode::Eval;
        let (memory, memory_lengths) = self.encode_ids(contents, &mut mode)?;
        let memory = memory.detach();
        let styles = styles.detach();
        let b = contents.len();
        let cap = caps.iter().copied().max().unwrap_or(0).min(self.config.max_len);
        let mut prefixes: Vec<Vec<u32>> = vec![Vec::new(); b];
        let mut done: Vec<Option<bool>> = caps.iter().map(|&c| if c == 0 { Some(true) } else { None }).collect();
        for step in 0..cap {
            if done.iter().all(Option::is_some) {
                break;
            }
            let targets = if step == 0 {
                Tensor::zeros((b, 0, self.config.dim), self.dtype(), self.device())?
            } else {
                self.embed_tokens(&prefixes)?.0
            };
            let lengths = vec![step; b];
            let logits = self.decoder_logits(&memory, &memory_lengths, &styles, &targets, &lengths, &mut mode)?;
            let next: Vec<u32> = logits.get_on_dim(1, step)?.argmax(D::Minus1)?.to_vec1()?;
            for (row, &token) in next.iter().enumerate() {
                if done[row].is_some() {
                    prefixes[row].push(PAD);
                    continue;
                }
                if token == END {
                    done[row] = Some(false);
                    prefixes[row].push(PAD);
                } else {
                    prefixes[row].push(token);
                    if prefixes[row].len() >= caps[row].min(self.config.max_len) {
                        done[row] = Some(true);
                    }
                }
            }
        }
        Ok(prefixes
            .into_iter()
            .zip(done)
            .map(|(ids, d)| Decoded {
                ids: ids.into_iter().filter(|&t| t != PAD).collect(),
                truncated: d.unwrap_or(true),
            })
            .collect())
    }

    /// Greedy transfer of one content word list to `style`.
    pub fn generate(&self, vocab: &Vocabulary, content: &[String], style: StyleId, cap: usize) -> Result<(Vec<String>, Decoded)> {
        let styles = self.style_vectors(&[style])?;
        let decoded = self.greedy_decode(&[vocab.encode(content)], &styles, &[cap])?.remove(0);
        Ok((vocab.decode(&decoded.ids)?, decoded))
    }

    /// Decodes `content` once per weight with the interpolated style slot.
    pub fn latent_walk(
        &self,
        vocab: &Vocabulary,
        content: &[String],
        source: StyleId,
        target: StyleId,
        weights: &[f64],
        cap: usize,
    ) -> Result<Vec<(f64, Vec<String>)>> {
        if self.n_styles != 2 {
            return Err(Error::Input("latent walking interpolates between exactly two styles".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Input(format!("walk weight {w} is outside [0, 1]")));
        }
        let ids = vocab.encode(content);
        weights
            .iter()
            .map(|&w| {
                let style = self.interpolated_style(source, target, w)?.unsqueeze(0)?;
                let decoded = self.greedy_decode(&[ids.clone()], &style, &[cap])?.remove(0);
                Ok((w, vocab.decode(&decoded.ids)?))
            })
            .collect()
    }

    /// Style loss for a batch: roll out, then score the per-step output
    /// distributions with the frozen classifier.
    pub fn style_loss_batch(
        &self,
        clf: &ClassifierParams,
        contents: &[Vec<u32>],
        targets: &[StyleId],
        rollout: Rollout,
    ) -> Result<Tensor> {
        if clf.vocab_hash() != self.vocab_hash {
            return Err(Error::Config("classifier and generator use different vocabularies".into()));
        }
        let caps: Vec<usize> = contents.iter().map(|c| max_decode_len(c.len())).collect();
        let style_vecs = self.style_vectors(targets)?;
        let (logits, lengths) = match rollout {
            Rollout::GreedyFeed => {
                let decoded = self.greedy_decode(contents, &style_vecs, &caps)?;
                let generated: Vec<Vec<u32>> = decoded.into_iter().map(|d| d.ids).collect();
                let logits = self.teacher_forced_logits(contents, &style_vecs, &generated, &mut Mode::Eval)?;
                (logits, generated.iter().map(Vec::len).collect::<Vec<_>>())
            }
            Rollout::Soft => self.soft_rollout(contents, &style_vecs, &caps)?,
        };
        style_loss_from_logits(clf, &logits, &lengths, targets)
    }

    fn soft_rollout(&self, contents: &[Vec<u32>], styles: &Tensor, caps: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut mode = Mode::Eval;
        let (memory, memory_lengths) = self.encode_ids(contents, &mut mode)?;
        let b = contents.len();
        let cap = caps.iter().copied().max().unwrap_or(1).min(self.config.max_len);
        let mut inputs: Vec<Tensor> = Vec::new();
        let mut step_logits = Vec::new();
        let mut lengths: Vec<Option<usize>> = vec![None; b];
        for step in 0..cap {
            let targets = if inputs.is_empty() {
                Tensor::zeros((b, 0, self.config.dim), self.dtype(), self.device())?
            } else {
                Tensor::cat(&inputs, 1)?
            };
            let logits = self.decoder_logits(&memory, &memory_lengths, styles, &targets, &vec![step; b], &mut mode)?;
            let last = logits.narrow(1, step, 1)?;
            let argmax: Vec<u32> = last.squeeze(1)?.argmax(D::Minus1)?.to_vec1()?;
            for (row, &token) in argmax.iter().enumerate() {
                if lengths[row].is_none() && (token == END || step + 1 >= caps[row]) {
                    lengths[row] = Some(if token == END { step } else { step + 1 });
                }
            }
            let dist = candle_nn::ops::softmax(&last, D::Minus1)?;
            inputs.push(dist.broadcast_matmul(&self.token_embedding)?);
            step_logits.push(last);
            if lengths.iter().all(Option::is_some) {
                break;
            }
        }
        let steps = step_logits.len();
        let logits = Tensor::cat(&step_logits, 1)?;
        Ok((logits, lengths.into_iter().map(|l| l.unwrap_or(steps)).collect()))
    }

    /// Style loss of one content word list under `target_style`.
    pub fn style_loss(&self, clf: &ClassifierParams, vocab: &Vocabulary, content: &[String], target_style: StyleId) -> Result<f64> {
        self.check_vocab(vocab)?;
        let loss = self.style_loss_batch(clf, &[vocab.encode(content)], &[target_style], Rollout::GreedyFeed)?;
        nn::scalar(&loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            kind: "generator".into(),
            config: self.config.clone(),
            train: self.train_config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            classifier_hash: self.classifier_hash.clone(),
            vocab_size: self.vocab_size,
            n_styles: self.n_styles,
            dtype: format!("{:?}", self.store.dtype()),
            history: self.history.clone(),
            provenance: self.provenance.clone(),
        };
        checkpoint::save(path, &header, &self.store.tensors())
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let (header, tensors): (Header, _) = checkpoint::load(path)?;
        if header.kind != "generator" {
            return Err(Error::Checkpoint(format!("{} holds a {} checkpoint", path.display(), header.kind)));
        }
        if header.vocab_hash != vocab.hash() {
            return Err(Error::Config(format!("{} was trained against a different vocabulary", path.display())));
        }
        let dtype = if header.dtype == "F64" { DType::F64 } else { DType::F32 };
        let mut params = Self::init_raw(&header.config, header.vocab_hash, header.vocab_size, header.n_styles, dtype)?;
        params.store.assign(&tensors)?;
        params.train_config = header.train;
        params.classifier_hash = header.classifier_hash;
        params.history = header.history;
        params.provenance = header.provenance;
        Ok(params)
    }

    pub fn classifier_hash(&self) -> Option<&str> {
        self.classifier_hash.as_deref()
    }
}

/// Token-level NLL of `originals + </s>` under teacher-forced `logits`.
pub fn reconstruction_nll(logits: &Tensor, originals: &[Vec<u32>], reduction: Reduction) -> Result<Tensor> {
    let (b, steps, _) = logits.dims3()?;
    let mut targets = Vec::with_capacity(b * steps);
    let mut mask = Vec::with_capacity(b * steps);
    for row in originals {
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
    let count: f32 = mask.iter().sum();
    let device = logits.device();
    let targets = Tensor::from_vec(targets, (b, steps, 1), device)?;
    let mask = Tensor::from_vec(mask, (b, steps), device)?.to_dtype(logits.dtype())?;
    let log_probs = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = log_probs.gather(&targets, 2)?.squeeze(2)?;
    let total = (picked * mask)?.sum_all()?.neg()?;
    let denom = match reduction {
        Reduction::Mean => count as f64,
        Reduction::Sum => b as f64,
    };
    Ok((total / denom)?)
}

/// `-log p(target)` averaged over the batch, where the classifier reads the
/// softmax of `logits[b, ..lengths[b]]` as soft inputs (at least one step).
pub fn style_loss_from_logits(clf: &ClassifierParams, logits: &Tensor, lengths: &[usize], targets: &[StyleId]) -> Result<Tensor> {
    let steps = logits.dim(1)?;
    let lengths: Vec<usize> = lengths.iter().map(|&l| l.clamp(1, steps)).collect();
    let used = lengths.iter().copied().max().unwrap_or(1);
    let dists = candle_nn::ops::softmax(&logits.narrow(1, 0, used)?.contiguous()?, D::Minus1)?;
    let clf_logits = clf.logits_from_distributions(&dists, &lengths)?;
    let log_probs = candle_nn::ops::log_softmax(&clf_logits, D::Minus1)?;
    let ids: Vec<u32> = targets.iter().map(|s| s.0 as u32).collect();
    let ids = Tensor::from_vec(ids, (targets.len(), 1), logits.device())?;
    Ok(log_probs.gather(&ids, 1)?.neg()?.mean_all()?)
}

/// The other style in the binary case; a uniformly drawn non-source style otherwise.
pub fn target_style<R: Rng>(source: StyleId, n_styles: usize, rng: &mut R) -> StyleId {
    if n_styles == 2 {
        return StyleId(1 - source.0);
    }
    let mut pick = rng.random_range(0..n_styles - 1);
    if pick >= source.0 {
        pick += 1;
    }
    StyleId(pick)
}

struct Example {
    content: Vec<u32>,
    original: Vec<u32>,
    style: StyleId,
}

/// Trains the generator on deleter output with reconstruction loss plus
/// `lambda_style` times the style loss toward a non-source style.
pub fn fit(
    train: &DatasetSplit,
    clf: &ClassifierParams,
    vocab: &Vocabulary,
    arch: &GeneratorConfig,
    cfg: &TrainConfig,
) -> Result<GeneratorParams> {
    fit_with(train, clf, vocab, arch, cfg, DType::F32)
}

pub fn fit_with(
    train: &DatasetSplit,
    clf: &ClassifierParams,
    vocab: &Vocabulary,
    arch: &GeneratorConfig,
    cfg: &TrainConfig,
    dtype: DType,
) -> Result<GeneratorParams> {
    cfg.validate()?;
    let scorer = CnnScorer::new(clf, vocab)?;
    let sentences: Vec<StyledSentence> = train.iter().cloned().collect();
    let deleter_cfg = DeleterConfig::new(cfg.alpha_train, cfg.beta_train)?;
    let traces = deleter::delete_all(&scorer, &sentences, &deleter_cfg)?;
    fit_on_traces(&traces, train.style_count(), clf, vocab, arch, cfg, dtype)
}

/// Same as [`fit`] with deletion already done.
pub fn fit_on_traces(
    traces: &[DeletionTrace],
    n_styles: usize,
    clf: &ClassifierParams,
    vocab: &Vocabulary,
    arch: &GeneratorConfig,
    cfg: &TrainConfig,
    dtype: DType,
) -> Result<GeneratorParams> {
    cfg.validate()?;
    clf.check_vocab(vocab)?;
    let mut params = GeneratorParams::init(arch, vocab, n_styles, dtype)?;
    params.train_config = Some(cfg.clone());
    params.classifier_hash = Some(clf.fingerprint()?);

    let mut examples = Vec::with_capacity(traces.len());
    let mut skipped = 0usize;
    for t in traces {
        let content = vocab.encode(&t.content);
        let original = vocab.encode(&t.source);
        if content.is_empty() || content.len() > arch.max_len || original.len() > arch.max_len {
            skipped += 1;
            continue;
        }
        examples.push(Example { content, original, style: t.style });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} sentences with no content left or longer than {} subwords", arch.max_len);
    }
    if examples.is_empty() {
        return Err(Error::Training("no usable training sentences".into()));
    }

    let mut trainer = Trainer::new(&params.store, cfg.learning_rate, Some(cfg.clip_norm))?;
    let mut mode = Mode::train(arch.seed ^ cfg.seed, arch.dropout);
    let mut order_rng = nn::seeded_rng(cfg.seed, 1);
    let mut style_rng = nn::seeded_rng(cfg.seed, 2);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut rec_sum, mut style_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let contents: Vec<Vec<u32>> = chunk.iter().map(|&i| examples[i].content.clone()).collect();
            let originals: Vec<Vec<u32>> = chunk.iter().map(|&i| examples[i].original.clone()).collect();
            let sources: Vec<StyleId> = chunk.iter().map(|&i| examples[i].style).collect();
            let rec = params.reconstruction_loss_batch(&contents, &sources, &originals, cfg.reduction, &mut mode)?;
            let rec_value = nn::scalar(&rec)?;
            let loss = if cfg.lambda_style > 0.0 {
                let targets: Vec<StyleId> = sources.iter().map(|&s| target_style(s, n_styles, &mut style_rng)).collect();
                let style = params.style_loss_batch(clf, &contents, &targets, cfg.rollout)?;
                style_sum += nn::scalar(&style)?;
                (rec + (style * cfg.lambda_style)?)?
            } else {
                rec
            };
            let total = nn::scalar(&loss)?;
            if !total.is_finite() {
                return Err(Error::Divergence(format!(
                    "generator loss {total} at epoch {epoch} (reconstruction {rec_value})"
                )));
            }
            trainer.step(&loss)?;
            rec_sum += rec_value;
            batches += 1;
        }
        let stats = GeneratorEpoch {
            epoch,
            reconstruction: rec_sum / batches.max(1) as f64,
            style: (cfg.lambda_style > 0.0).then(|| style_sum / batches.max(1) as f64),
        };
        log::info!(
            "generator epoch {} reconstruction {:.4} style {}",
            epoch,
            stats.reconstruction,
            stats.style.map_or("-".to_string(), |s| format!("{s:.4}"))
        );
        params.history.push(stats);
        if let Some(dir) = &cfg.checkpoint_dir {
            params.save(&dir.join(format!("generator.epoch{epoch}.safetensors")))?;
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub source: StyledSentence,
    pub content: Vec<String>,
    pub target_style: StyleId,
    pub output: Vec<String>,
    pub trace: DeletionTrace,
    pub decode_len: usize,
    pub truncated: bool,
}

/// Delete-then-generate for a batch of sentences.
pub fn transfer(
    gen: &GeneratorParams,
    clf: &ClassifierParams,
    vocab: &Vocabulary,
    sentences: &[StyledSentence],
    targets: &[StyleId],
    deleter_cfg: &DeleterConfig,
    batch_size: usize,
) -> Result<Vec<TransferResult>> {
    if sentences.len() != targets.len() {
        return Err(Error::Input("one target style is required per sentence".into()));
    }
    gen.check_vocab(vocab)?;
    let scorer = CnnScorer::new(clf, vocab)?;
    let traces = deleter::delete_all(&scorer, sentences, deleter_cfg)?;
    transfer_traces(gen, vocab, traces, targets, batch_size)
}

/// Generation step of [`transfer`] for precomputed deletion traces.
pub fn transfer_traces(
    gen: &GeneratorParams,
    vocab: &Vocabulary,
    traces: Vec<DeletionTrace>,
    targets: &[StyleId],
    batch_size: usize,
) -> Result<Vec<TransferResult>> {
    let mut out = Vec::with_capacity(traces.len());
    let mut traces = traces.into_iter();
    for target_chunk in targets.chunks(batch_size.max(1)) {
        let chunk: Vec<DeletionTrace> = traces.by_ref().take(target_chunk.len()).collect();
        let contents: Vec<Vec<u32>> = chunk.iter().map(|t| vocab.encode(&t.content)).collect();
        let caps: Vec<usize> = chunk.iter().map(|t| max_decode_len(vocab.encode(&t.source).len())).collect();
        let styles = gen.style_vectors(target_chunk)?;
        let decoded = gen.greedy_decode(&contents, &styles, &caps)?;
        for ((trace, target), d) in chunk.into_iter().zip(target_chunk).zip(decoded) {
            out.push(TransferResult {
                source: StyledSentence {
                    tokens: trace.source.clone(),
                    style: trace.style,
                },
                content: trace.content.clone(),
                target_style: *target,
                output: vocab.decode(&d.ids)?,
                trace,
                decode_len: d.ids.len(),
                truncated: d.truncated,
            });
        }
    }
    Ok(out)
}
