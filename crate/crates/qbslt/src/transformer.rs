//! Post-norm transformer encoder and decoder stacks. Residual first, then
//! layer norm. Attention masks are additive: masked slots get a finite
//! large-negative value that underflows to zero weight after softmax.

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::seq::{CLS, EOS};
use crate::tensor::{Tape, Tensor};

pub const MASK_VALUE: f64 = -1e30;
pub const LN_EPS: f64 = 1e-5;

/// Dense layer with weight [d_in×d_out] and bias [d_out]. Weights start
/// Gaussian with std 1/sqrt(d_in), biases at zero.
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Linear> {
        let std = 1.0 / (d_in as f64).sqrt();
        Ok(Linear {
            w: store.register(&format!("{name}.w"), Tensor::randn(vec![d_in, d_out], std, rng).trainable())?,
            b: store.register(&format!("{name}.b"), Tensor::zeros(vec![d_out]).trainable())?,
        })
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        tape.add_bias(&tape.matmul(x, &self.w)?, &self.b)
    }
}

/// Learned affine for layer normalization.
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParameterStore, name: &str, d: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: store.register(&format!("{name}.gamma"), Tensor::full(vec![d], 1.0).trainable())?,
            beta: store.register(&format!("{name}.beta"), Tensor::zeros(vec![d]).trainable())?,
        })
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        tape.layer_norm(x, &self.gamma, &self.beta, LN_EPS)
    }
}

pub struct FeedForward {
    lift: Linear,
    drop: Linear,
}

impl FeedForward {
    fn new(
        store: &mut ParameterStore,
        name: &str,
        d: usize,
        d_ff: usize,
        rng: &mut impl Rng,
    ) -> Result<FeedForward> {
        Ok(FeedForward {
            lift: Linear::new(store, &format!("{name}.lift"), d, d_ff, rng)?,
            drop: Linear::new(store, &format!("{name}.drop"), d_ff, d, rng)?,
        })
    }

    fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let h = tape.relu(&self.lift.forward(tape, x)?)?;
        self.drop.forward(tape, &h)
    }
}

pub struct MultiHeadAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    n_heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    fn new(
        store: &mut ParameterStore,
        name: &str,
        d: usize,
        n_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<MultiHeadAttention> {
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d} is not divisible by n_heads {n_heads}"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(store, &format!("{name}.wq"), d, d, rng)?,
            wk: Linear::new(store, &format!("{name}.wk"), d, d, rng)?,
            wv: Linear::new(store, &format!("{name}.wv"), d, d, rng)?,
            wo: Linear::new(store, &format!("{name}.wo"), d, d, rng)?,
            n_heads,
            head_dim: d / n_heads,
        })
    }

    /// Scaled dot-product attention of `queries` over `keys_values`, with an
    /// optional additive [Lq×Lk] mask shared by all heads.
    fn forward(
        &self,
        tape: &Tape,
        queries: &Tensor,
        keys_values: &Tensor,
        mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        let q = self.wq.forward(tape, queries)?;
        let k = self.wk.forward(tape, keys_values)?;
        let v = self.wv.forward(tape, keys_values)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let lo = h * self.head_dim;
            let hi = lo + self.head_dim;
            let qh = tape.slice_cols(&q, lo, hi)?;
            let kh = tape.slice_cols(&k, lo, hi)?;
            let vh = tape.slice_cols(&v, lo, hi)?;
            let mut scores = tape.scale(&tape.matmul(&qh, &tape.transpose(&kh)?)?, scale)?;
            if let Some(m) = mask {
                scores = tape.add(&scores, m)?;
            }
            let attn = tape.softmax(&scores, 1)?;
            heads.push(tape.matmul(&attn, &vh)?);
        }
        let ctx = tape.concat(&heads, 1)?;
        self.wo.forward(tape, &ctx)
    }
}

/// Additive mask that hides padded key positions from every query.
fn key_padding_mask(rows: usize, padded: &[bool]) -> Option<Tensor> {
    if !padded.iter().any(|&p| p) {
        return None;
    }
    let cols = padded.len();
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for (c, &p) in padded.iter().enumerate() {
            if p {
                data[r * cols + c] = MASK_VALUE;
            }
        }
    }
    Some(Tensor::from_vec(vec![rows, cols], data).expect("sized above"))
}

/// Additive mask hiding positions after each query.
fn causal_mask(len: usize) -> Tensor {
    let mut data = vec![0.0; len * len];
    for i in 0..len {
        for j in i + 1..len {
            data[i * len + j] = MASK_VALUE;
        }
    }
    Tensor::from_vec(vec![len, len], data).expect("sized above")
}

struct EncoderLayer {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

impl EncoderLayer {
    fn forward(&self, tape: &Tape, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let a = self.attn.forward(tape, x, x, mask)?;
        let x = self.ln1.forward(tape, &tape.add(x, &a)?)?;
        let f = self.ffn.forward(tape, &x)?;
        self.ln2.forward(tape, &tape.add(&x, &f)?)
    }
}

pub struct EncoderStack {
    layers: Vec<EncoderLayer>,
}

impl EncoderStack {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut impl Rng,
    ) -> Result<EncoderStack> {
        let mut layers = Vec::with_capacity(cfg.enc_layers);
        for i in 0..cfg.enc_layers {
            let name = format!("{prefix}.layer{i}");
            layers.push(EncoderLayer {
                attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg.d_model, cfg.n_heads, rng)?,
                ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.d_model)?,
                ffn: FeedForward::new(store, &format!("{name}.ffn"), cfg.d_model, cfg.d_ff, rng)?,
                ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.d_model)?,
            });
        }
        Ok(EncoderStack { layers })
    }

    /// Contextual states for an embedded sequence [L×d]. `padded[j]` hides
    /// position j from attention everywhere.
    pub fn encode(&self, tape: &Tape, x: &Tensor, padded: &[bool]) -> Result<Tensor> {
        let rows = x.shape()[0];
        if padded.len() != rows {
            return Err(Error::invalid(format!(
                "padding mask length {} for {} positions",
                padded.len(),
                rows
            )));
        }
        if padded.iter().all(|&p| p) {
            return Err(Error::invalid("cannot encode a fully padded sequence"));
        }
        let mask = key_padding_mask(rows, padded);
        let mut state = x.clone();
        for layer in &self.layers {
            state = layer.forward(tape, &state, mask.as_ref())?;
        }
        Ok(state)
    }
}

struct DecoderLayer {
    self_attn: MultiHeadAttention,
    ln1: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
    ln3: LayerNorm,
}

pub struct DecoderStack {
    layers: Vec<DecoderLayer>,
    out: Linear,
}

impl DecoderStack {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: &ModelConfig,
        vocab: usize,
        rng: &mut impl Rng,
    ) -> Result<DecoderStack> {
        let mut layers = Vec::with_capacity(cfg.dec_layers);
        for i in 0..cfg.dec_layers {
            let name = format!("{prefix}.layer{i}");
            layers.push(DecoderLayer {
                self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), cfg.d_model, cfg.n_heads, rng)?,
                ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.d_model)?,
                cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), cfg.d_model, cfg.n_heads, rng)?,
                ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.d_model)?,
                ffn: FeedForward::new(store, &format!("{name}.ffn"), cfg.d_model, cfg.d_ff, rng)?,
                ln3: LayerNorm::new(store, &format!("{name}.ln3"), cfg.d_model)?,
            });
        }
        Ok(DecoderStack {
            layers,
            out: Linear::new(store, &format!("{prefix}.out"), cfg.d_model, vocab, rng)?,
        })
    }

    /// Next-token logits [T×vocab] for embedded decoder inputs [T×d] over
    /// encoder memory [L×d]. Self-attention is causal; cross-attention sees
    /// every non-padded memory position.
    pub fn decode(
        &self,
        tape: &Tape,
        x: &Tensor,
        memory: &Tensor,
        memory_padded: &[bool],
    ) -> Result<Tensor> {
        let t = x.shape()[0];
        let mem_rows = memory.shape()[0];
        if memory_padded.len() != mem_rows {
            return Err(Error::invalid(format!(
                "memory padding mask length {} for {} positions",
                memory_padded.len(),
                mem_rows
            )));
        }
        if memory_padded.iter().all(|&p| p) {
            return Err(Error::invalid("cannot attend over fully padded memory"));
        }
        let causal = causal_mask(t);
        let cross = key_padding_mask(t, memory_padded);
        let mut state = x.clone();
        for layer in &self.layers {
            let a = layer.self_attn.forward(tape, &state, &state, Some(&causal))?;
            state = layer.ln1.forward(tape, &tape.add(&state, &a)?)?;
            let c = layer.cross_attn.forward(tape, &state, memory, cross.as_ref())?;
            state = layer.ln2.forward(tape, &tape.add(&state, &c)?)?;
            let f = layer.ffn.forward(tape, &state)?;
            state = layer.ln3.forward(tape, &tape.add(&state, &f)?)?;
        }
        self.out.forward(tape, &state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    /// Row of the first CLS token.
    Cls,
    /// Row of the first EOS token.
    Eos,
}

/// Single-vector summary of encoded states: the state at the sequence's
/// CLS or EOS position.
pub fn pool_representation(
    tape: &Tape,
    states: &Tensor,
    ids: &[usize],
    kind: PoolKind,
) -> Result<Tensor> {
    let rows = states.shape()[0];
    if ids.len() != rows {
        return Err(Error::invalid(format!(
            "{} ids for {} state rows",
            ids.len(),
            rows
        )));
    }
    let wanted = match kind {
        PoolKind::Cls => CLS,
        PoolKind::Eos => EOS,
    };
    let pos = ids
        .iter()
        .position(|&id| id == wanted)
        .ok_or_else(|| Error::invalid(format!("no token {wanted} to pool at in {ids:?}")))?;
    tape.select_index(states, pos)
}
