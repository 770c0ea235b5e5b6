//! Building blocks shared by the classifier, the generator and the language
//! models. Parameters live in a [`ParamStore`]; initialization and dropout
//! draw from a seeded ChaCha stream so runs are reproducible.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Named trainable tensors in creation order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        ParamStore {
            dtype,
            device: Device::Cpu,
            entries: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn add(&mut self, name: &str, values: Vec<f64>, dims: &[usize]) -> Result<Tensor> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let t = Tensor::from_vec(values, dims, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.entries.push((name.to_owned(), var));
        Ok(handle)
    }

    pub fn uniform(&mut self, name: &str, dims: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, values, dims)
    }

    pub fn constant(&mut self, name: &str, dims: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        self.add(name, vec![value; n], dims)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Detached copies of every parameter.
    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        self.entries
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites every parameter from `tensors`; names and shapes must match.
    pub fn assign(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        if tensors.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                tensors.len()
            )));
        }
        for (name, var) in &self.entries {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (name, var) in &self.entries {
            hasher.update(name.as_bytes());
            let values: Vec<f32> = var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(format!("{:x}", hasher.finalize()))
    }
}

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Forward mode. Training carries its own dropout stream.
pub enum Mode {
    Eval,
    Train { rng: ChaCha8Rng, rate: f64 },
}

impl Mode {
    pub fn train(seed: u64, rate: f64) -> Self {
        Mode::Train {
            rng: seeded_rng(seed, 7),
            rate,
        }
    }

    pub fn dropout(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Mode::Eval => Ok(x.clone()),
            Mode::Train { rate, .. } if *rate <= 0.0 => Ok(x.clone()),
            Mode::Train { rng, rate } => {
                let keep = 1.0 - *rate;
                let scale = 1.0 / keep;
                let mask: Vec<f32> = (0..x.elem_count())
                    .map(|_| if rng.random::<f64>() < keep { scale as f32 } else { 0.0 })
                    .collect();
                let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
                Ok(x.mul(&mask)?)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Ok(Linear {
            weight: store.uniform(&format!("{name}.weight"), &[input, output], bound, rng)?,
            bias: store.constant(&format!("{name}.bias"), &[output], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: Tensor,
    shift: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.constant(&format!("{name}.gain"), &[dim], 1.0)?,
            shift: store.constant(&format!("{name}.shift"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.shift)?)
    }
}

/// Additive attention bias of shape `(batch, 1, q_len, k_len)`: 0 where
/// attention is allowed, a large negative number elsewhere.
pub fn attention_bias(
    key_lengths: &[usize],
    q_len: usize,
    k_len: usize,
    causal: bool,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let mut values = Vec::with_capacity(key_lengths.len() * q_len * k_len);
    for &len in key_lengths {
        for q in 0..q_len {
            for k in 0..k_len {
                let allowed = k < len && (!causal || k <= q);
                values.push(if allowed { 0.0f32 } else { -1e9 });
            }
        }
    }
    Ok(Tensor::from_vec(values, (key_lengths.len(), 1, q_len, k_len), device)?.to_dtype(dtype)?)
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("width {dim} is not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng)?,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        Ok(x.reshape((b, l, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    pub fn forward(&self, queries: &Tensor, memory: &Tensor, bias: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let (b, lq, d) = queries.dims3()?;
        let head_dim = d / self.heads;
        let q = self.split_heads(&self.query.forward(queries)?)?;
        let k = self.split_heads(&self.key.forward(memory)?)?;
        let v = self.split_heads(&self.value.forward(memory)?)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (head_dim as f64).sqrt())?;
        let weights = candle_nn::ops::softmax(&scores.broadcast_add(bias)?, D::Minus1)?;
        let weights = mode.dropout(&weights)?;
        let context = weights.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, lq, d))?;
        self.output.forward(&context)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    inner: Linear,
    outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), dim, hidden, rng)?,
            outer: Linear::new(store, &format!("{name}.outer"), hidden, dim, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let h = mode.dropout(&self.inner.forward(x)?.relu()?)?;
        self.outer.forward(&h)
    }
}

/// Pre-norm self-attention block, optionally followed by cross-attention.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross: Option<(LayerNorm, MultiHeadAttention)>,
    ff_norm: LayerNorm,
    ff: FeedForward,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        with_cross: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let self_norm = LayerNorm::new(store, &format!("{name}.self_norm"), dim)?;
        let self_attn = MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, rng)?;
        let cross = if with_cross {
            Some((
                LayerNorm::new(store, &format!("{name}.cross_norm"), dim)?,
                MultiHeadAttention::new(store, &format!("{name}.cross_attn"), dim, heads, rng)?,
            ))
        } else {
            None
        };
        Ok(TransformerBlock {
            self_norm,
            self_attn,
            cross,
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), dim)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, hidden, rng)?,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        self_bias: &Tensor,
        memory: Option<(&Tensor, &Tensor)>,
        mode: &mut Mode,
    ) -> Result<Tensor> {
        let h = self.self_norm.forward(x)?;
        let attended = self.self_attn.forward(&h, &h, self_bias, mode)?;
        let x = (x + mode.dropout(&attended)?)?;
        let x = match (&self.cross, memory) {
            (Some((norm, attn)), Some((mem, mem_bias))) => {
                let h = norm.forward(&x)?;
                let attended = attn.forward(&h, mem, mem_bias, mode)?;
                (&x + mode.dropout(&attended)?)?
            }
            (None, None) => x,
            _ => return Err(Error::Config("cross-attention memory mismatch".into())),
        };
        let h = self.ff_norm.forward(&x)?;
        let fed = self.ff.forward(&h, mode)?;
        Ok((&x + mode.dropout(&fed)?)?)
    }
}

/// Adam step with global gradient-norm clipping.
pub struct Trainer {
    optimizer: candle_nn::AdamW,
    vars: Vec<Var>,
    clip_norm: Option<f64>,
}

impl Trainer {
    pub fn new(store: &ParamStore, learning_rate: f64, clip_norm: Option<f64>) -> Result<Self> {
        use candle_nn::Optimizer;
        let vars = store.vars();
        let optimizer = candle_nn::AdamW::new(
            vars.clone(),
            candle_nn::ParamsAdamW {
                lr: learning_rate,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        Ok(Trainer {
            optimizer,
            vars,
            clip_norm,
        })
    }

    /// Back-propagates `loss` and applies one update. Returns the gradient norm.
    pub fn step(&mut self, loss: &Tensor) -> Result<f64> {
        use candle_nn::Optimizer;
        let mut grads = loss.backward()?;
        let mut sq = 0.0f64;
        for var in &self.vars {
            if let Some(g) = grads.get(var) {
                sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::Divergence(format!("gradient norm is {norm}")));
        }
        if let Some(max) = self.clip_norm {
            if norm > max {
                let scale = max / norm;
                for var in &self.vars {
                    if let Some(g) = grads.remove(var) {
                        grads.insert(var, (g * scale)?);
                    }
                }
            }
        }
        self.optimizer.step(&grads)?;
        Ok(norm)
    }
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn ids_tensor(rows: &[Vec<u32>], pad: u32, device: &Device) -> Result<(Tensor, Vec<usize>)> {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut flat = Vec::with_capacity(rows.len() * width);
    for row in rows {
        flat.extend_from_slice(row);
        flat.extend(std::iter::repeat_n(pad, width - row.len()));
    }
    let lengths = rows.iter().map(Vec::len).collect();
    Ok((Tensor::from_vec(flat, (rows.len(), width), device)?, lengths))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let make = || {
            let mut store = ParamStore::new(DType::F32);
            let mut rng = seeded_rng(3, 0);
            Linear::new(&mut store, "l", 4, 3, &mut rng).unwrap();
            store.fingerprint().unwrap()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut store = ParamStore::new(DType::F64);
        let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 10.0]], &Device::Cpu).unwrap();
        let y: Vec<f64> = ln.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn causal_bias_blocks_future_and_padding() {
        let bias = attention_bias(&[2], 3, 3, true, DType::F32, &Device::Cpu).unwrap();
        let v: Vec<f32> = bias.flatten_all().unwrap().to_vec1().unwrap();
        let allowed: Vec<bool> = v.iter().map(|&x| x == 0.0).collect();
        assert_eq!(allowed, vec![true, false, false, true, true, false, true, true, false]);
    }

    #[test]
    fn eval_dropout_is_identity() {
        let x = Tensor::new(&[1.0f32, 2.0, 3.0], &Device::Cpu).unwrap();
        let y = Mode::Eval.dropout(&x).unwrap();
        assert_eq!(y.to_vec1::<f32>().unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
