//! From-scratch transformer encoder producing sentence embeddings.
//!
//! Post-norm blocks (layer norm after each residual), learned absolute
//! position embeddings, GELU feed-forward, and a final layer norm. The
//! sentence embedding is the mean of the final hidden states over non-PAD
//! positions; callers normalize it when they need cosine geometry.
//!
//! PAD positions are dropped before any computation: each sequence's graph
//! is built over its active tokens only, so appending padding can never
//! change an embedding, and attention needs no masking term.

use crate::error::{read_file_bytes, write_file_bytes, Error, Result};
use crate::math::{cst, Mat, Real};
use crate::tape::{Tape, Var};
use crate::tokenizer::TokenSeq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const CHECKPOINT_MAGIC: &[u8; 4] = b"FSKM";
const CHECKPOINT_VERSION: u32 = 1;

/// Fixed-size checkpoint header: magic, version, six config words.
pub const CHECKPOINT_HEADER_BYTES: u64 = 32;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: u32,
    pub hidden: u32,
    pub heads: u32,
    pub ffn_dim: u32,
    pub vocab_size: u32,
    pub max_seq_len: u32,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::config("encoder needs at least 1 layer"));
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "hidden size {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.ffn_dim < self.hidden {
            return Err(Error::config(format!(
                "ffn_dim {} must be at least hidden size {}",
                self.ffn_dim, self.hidden
            )));
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return Err(Error::config("vocab_size and max_seq_len must be positive"));
        }
        Ok(())
    }

    /// Exact parameter count and checkpoint file size in bytes.
    pub fn param_count(&self) -> (u64, u64) {
        let d = self.hidden as u64;
        let f = self.ffn_dim as u64;
        let per_layer = 4 * (d * d + d) + 4 * d + (d * f + f) + (f * d + d);
        let count = (self.vocab_size as u64) * d
            + (self.max_seq_len as u64) * d
            + (self.layers as u64) * per_layer
            + 2 * d;
        (count, 4 * count + CHECKPOINT_HEADER_BYTES)
    }
}

/// One transformer block's tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub wq: Mat<F>,
    pub bq: Mat<F>,
    pub wk: Mat<F>,
    pub bk: Mat<F>,
    pub wv: Mat<F>,
    pub bv: Mat<F>,
    pub wo: Mat<F>,
    pub bo: Mat<F>,
    pub ln_attn_gamma: Mat<F>,
    pub ln_attn_beta: Mat<F>,
    pub ffn_w1: Mat<F>,
    pub ffn_b1: Mat<F>,
    pub ffn_w2: Mat<F>,
    pub ffn_b2: Mat<F>,
    pub ln_ffn_gamma: Mat<F>,
    pub ln_ffn_beta: Mat<F>,
}

/// All model tensors. The canonical tensor order used by checkpoints,
/// initialization, and gradient collection is the field order here:
/// embeddings, then each layer's fields in declaration order, then the
/// final layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub token_emb: Mat<F>,
    pub pos_emb: Mat<F>,
    pub layers: Vec<LayerParams<F>>,
    pub final_ln_gamma: Mat<F>,
    pub final_ln_beta: Mat<F>,
}

impl<F: Real> ModelParams<F> {
    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Mat<F>> {
        let mut out = vec![&self.token_emb, &self.pos_emb];
        for l in &self.layers {
            out.extend([
                &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                &l.ln_attn_gamma, &l.ln_attn_beta,
                &l.ffn_w1, &l.ffn_b1, &l.ffn_w2, &l.ffn_b2,
                &l.ln_ffn_gamma, &l.ln_ffn_beta,
            ]);
        }
        out.extend([&self.final_ln_gamma, &self.final_ln_beta]);
        out
    }

    /// Mutable tensors in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Mat<F>> {
        let mut out: Vec<&mut Mat<F>> = vec![&mut self.token_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend([
                &mut l.wq, &mut l.bq, &mut l.wk, &mut l.bk,
                &mut l.wv, &mut l.bv, &mut l.wo, &mut l.bo,
                &mut l.ln_attn_gamma, &mut l.ln_attn_beta,
                &mut l.ffn_w1, &mut l.ffn_b1, &mut l.ffn_w2, &mut l.ffn_b2,
                &mut l.ln_ffn_gamma, &mut l.ln_ffn_beta,
            ]);
        }
        out.extend([&mut self.final_ln_gamma, &mut self.final_ln_beta]);
        out
    }

    pub fn zeros(config: &EncoderConfig) -> Self {
        let d = config.hidden as usize;
        let f = config.ffn_dim as usize;
        let layer = || LayerParams {
            wq: Mat::zeros(d, d),
            bq: Mat::zeros(1, d),
            wk: Mat::zeros(d, d),
            bk: Mat::zeros(1, d),
            wv: Mat::zeros(d, d),
            bv: Mat::zeros(1, d),
            wo: Mat::zeros(d, d),
            bo: Mat::zeros(1, d),
            ln_attn_gamma: Mat::zeros(1, d),
            ln_attn_beta: Mat::zeros(1, d),
            ffn_w1: Mat::zeros(d, f),
            ffn_b1: Mat::zeros(1, f),
            ffn_w2: Mat::zeros(f, d),
            ffn_b2: Mat::zeros(1, d),
            ln_ffn_gamma: Mat::zeros(1, d),
            ln_ffn_beta: Mat::zeros(1, d),
        };
        ModelParams {
            token_emb: Mat::zeros(config.vocab_size as usize, d),
            pos_emb: Mat::zeros(config.max_seq_len as usize, d),
            layers: (0..config.layers).map(|_| layer()).collect(),
            final_ln_gamma: Mat::zeros(1, d),
            final_ln_beta: Mat::zeros(1, d),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    pub fn cast<T: Real>(&self) -> ModelParams<T> {
        ModelParams {
            token_emb: self.token_emb.cast(),
            pos_emb: self.pos_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: l.wq.cast(),
                    bq: l.bq.cast(),
                    wk: l.wk.cast(),
                    bk: l.bk.cast(),
                    wv: l.wv.cast(),
                    bv: l.bv.cast(),
                    wo: l.wo.cast(),
                    bo: l.bo.cast(),
                    ln_attn_gamma: l.ln_attn_gamma.cast(),
                    ln_attn_beta: l.ln_attn_beta.cast(),
                    ffn_w1: l.ffn_w1.cast(),
                    ffn_b1: l.ffn_b1.cast(),
                    ffn_w2: l.ffn_w2.cast(),
                    ffn_b2: l.ffn_b2.cast(),
                    ln_ffn_gamma: l.ln_ffn_gamma.cast(),
                    ln_ffn_beta: l.ln_ffn_beta.cast(),
                })
                .collect(),
            final_ln_gamma: self.final_ln_gamma.cast(),
            final_ln_beta: self.final_ln_beta.cast(),
        }
    }
}

/// Xavier-uniform draw for a weight matrix; one RNG stream, canonical order.
pub(crate) fn xavier<F: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| cst(rng.gen_range(-limit..limit))).collect();
    Mat::from_vec(rows, cols, data)
}

/// Initialize parameters: Xavier-uniform matrices, zero biases, ones/zeros
/// layer norms. Bitwise deterministic given `seed`.
pub fn init_params<F: Real>(config: &EncoderConfig, seed: u64) -> Result<ModelParams<F>> {
    config.validate()?;
    let d = config.hidden as usize;
    let f = config.ffn_dim as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(config);
    params.token_emb = xavier(&mut rng, config.vocab_size as usize, d);
    params.pos_emb = xavier(&mut rng, config.max_seq_len as usize, d);
    for layer in &mut params.layers {
        layer.wq = xavier(&mut rng, d, d);
        layer.wk = xavier(&mut rng, d, d);
        layer.wv = xavier(&mut rng, d, d);
        layer.wo = xavier(&mut rng, d, d);
        layer.ln_attn_gamma = Mat::filled(1, d, F::one());
        layer.ffn_w1 = xavier(&mut rng, d, f);
        layer.ffn_w2 = xavier(&mut rng, f, d);
        layer.ln_ffn_gamma = Mat::filled(1, d, F::one());
    }
    params.final_ln_gamma = Mat::filled(1, d, F::one());
    Ok(params)
}

/// Tape handles for every parameter tensor.
pub struct BoundParams {
    pub token_emb: Var,
    pub pos_emb: Var,
    pub layers: Vec<BoundLayer>,
    pub final_ln_gamma: Var,
    pub final_ln_beta: Var,
}

pub struct BoundLayer {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln_attn_gamma: Var,
    pub ln_attn_beta: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub ln_ffn_gamma: Var,
    pub ln_ffn_beta: Var,
}

/// Put every parameter tensor on the tape as a leaf.
pub fn bind<F: Real>(tape: &mut Tape<F>, params: &ModelParams<F>) -> BoundParams {
    BoundParams {
        token_emb: tape.leaf(params.token_emb.clone()),
        pos_emb: tape.leaf(params.pos_emb.clone()),
        layers: params
            .layers
            .iter()
            .map(|l| BoundLayer {
                wq: tape.leaf(l.wq.clone()),
                bq: tape.leaf(l.bq.clone()),
                wk: tape.leaf(l.wk.clone()),
                bk: tape.leaf(l.bk.clone()),
                wv: tape.leaf(l.wv.clone()),
                bv: tape.leaf(l.bv.clone()),
                wo: tape.leaf(l.wo.clone()),
                bo: tape.leaf(l.bo.clone()),
                ln_attn_gamma: tape.leaf(l.ln_attn_gamma.clone()),
                ln_attn_beta: tape.leaf(l.ln_attn_beta.clone()),
                ffn_w1: tape.leaf(l.ffn_w1.clone()),
                ffn_b1: tape.leaf(l.ffn_b1.clone()),
                ffn_w2: tape.leaf(l.ffn_w2.clone()),
                ffn_b2: tape.leaf(l.ffn_b2.clone()),
                ln_ffn_gamma: tape.leaf(l.ln_ffn_gamma.clone()),
                ln_ffn_beta: tape.leaf(l.ln_ffn_beta.clone()),
            })
            .collect(),
        final_ln_gamma: tape.leaf(params.final_ln_gamma.clone()),
        final_ln_beta: tape.leaf(params.final_ln_beta.clone()),
    }
}

/// Gradients accumulated on the bound tensors, shaped like [`ModelParams`].
/// Tensors off the loss path get zeros.
pub fn collect_grads<F: Real>(
    tape: &Tape<F>,
    bound: &BoundParams,
    config: &EncoderConfig,
) -> ModelParams<F> {
    let mut grads = ModelParams::zeros(config);
    let mut vars = vec![bound.token_emb, bound.pos_emb];
    for l in &bound.layers {
        vars.extend([
            l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo,
            l.ln_attn_gamma, l.ln_attn_beta,
            l.ffn_w1, l.ffn_b1, l.ffn_w2, l.ffn_b2,
            l.ln_ffn_gamma, l.ln_ffn_beta,
        ]);
    }
    vars.extend([bound.final_ln_gamma, bound.final_ln_beta]);
    for (slot, var) in grads.tensors_mut().into_iter().zip(vars) {
        if let Some(g) = tape.grad(var) {
            *slot = g.clone();
        }
    }
    grads
}

/// Final hidden states for one sequence, `active_len × hidden`, built on
/// the tape over the sequence's non-PAD positions only.
pub fn seq_hidden<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    config: &EncoderConfig,
    seq: &TokenSeq,
) -> Result<Var> {
    let mut token_rows = Vec::new();
    let mut positions = Vec::new();
    for (pos, (&id, &m)) in seq.ids.iter().zip(seq.attention_mask.iter()).enumerate() {
        if m != 1 {
            continue;
        }
        if id >= config.vocab_size {
            return Err(Error::validation(format!(
                "token id {id} out of range for vocab size {}",
                config.vocab_size
            )));
        }
        if pos >= config.max_seq_len as usize {
            return Err(Error::validation(format!(
                "token position {pos} exceeds max sequence length {}",
                config.max_seq_len
            )));
        }
        token_rows.push(id as usize);
        positions.push(pos);
    }
    if token_rows.is_empty() {
        return Err(Error::validation("sequence has no active tokens"));
    }

    let d = config.hidden as usize;
    let heads = config.heads as usize;
    let dh = d / heads;
    let attn_scale: F = cst(1.0 / (dh as f64).sqrt());

    let tok = tape.gather_rows(bound.token_emb, &token_rows);
    let pos = tape.gather_rows(bound.pos_emb, &positions);
    let mut x = tape.add(tok, pos);

    for (layer_index, layer) in bound.layers.iter().enumerate() {
        let q0 = tape.matmul(x, layer.wq);
        let q = tape.add_row(q0, layer.bq);
        let k0 = tape.matmul(x, layer.wk);
        let k = tape.add_row(k0, layer.bk);
        let v0 = tape.matmul(x, layer.wv);
        let v = tape.add_row(v0, layer.bv);

        let mut head_outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let scores0 = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores0, attn_scale);
            let attn = tape.softmax_rows(scores);
            head_outputs.push(tape.matmul(attn, vh));
        }
        let ctx = tape.concat_cols(&head_outputs);
        let o0 = tape.matmul(ctx, layer.wo);
        let o = tape.add_row(o0, layer.bo);
        let res1 = tape.add(x, o);
        let normed1 = tape.layer_norm(res1, layer.ln_attn_gamma, layer.ln_attn_beta);

        let f0 = tape.matmul(normed1, layer.ffn_w1);
        let f1 = tape.add_row(f0, layer.ffn_b1);
        let f2 = tape.gelu(f1);
        let f3 = tape.matmul(f2, layer.ffn_w2);
        let f4 = tape.add_row(f3, layer.ffn_b2);
        let res2 = tape.add(normed1, f4);
        x = tape.layer_norm(res2, layer.ln_ffn_gamma, layer.ln_ffn_beta);

        if !tape.value(x).all_finite() {
            return Err(Error::numeric(format!(
                "non-finite activation in layer {layer_index}"
            )));
        }
    }

    let out = tape.layer_norm(x, bound.final_ln_gamma, bound.final_ln_beta);
    if !tape.value(out).all_finite() {
        return Err(Error::numeric("non-finite activation in final layer norm"));
    }
    Ok(out)
}

/// Mean-pooled sentence embedding for one sequence, `1 × hidden`,
/// unnormalized.
pub fn seq_embedding<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    config: &EncoderConfig,
    seq: &TokenSeq,
) -> Result<Var> {
    let hidden = seq_hidden(tape, bound, config, seq)?;
    let rows: Vec<usize> = (0..tape.value(hidden).rows()).collect();
    Ok(tape.mean_pool_rows(hidden, &rows))
}

/// Embedding vars for a whole batch on one shared tape.
pub fn batch_embedding_graph<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    config: &EncoderConfig,
    batch: &[TokenSeq],
) -> Result<Vec<Var>> {
    batch.iter().map(|seq| seq_embedding(tape, bound, config, seq)).collect()
}

/// A pooled sentence embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub values: Vec<f32>,
    pub normalized: bool,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f32 {
        self.values.iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    /// Scale to unit Euclidean norm (norm floored to avoid dividing by 0).
    pub fn normalize(mut self) -> Embedding {
        let n = self.norm().max(1e-12);
        for v in &mut self.values {
            *v /= n;
        }
        self.normalized = true;
        self
    }

    pub fn dot(&self, other: &Embedding) -> f32 {
        self.values.iter().zip(other.values.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Encode a batch into unnormalized embeddings.
pub fn forward(
    params: &ModelParams<f32>,
    config: &EncoderConfig,
    batch: &[TokenSeq],
) -> Result<Vec<Embedding>> {
    let mut tape: Tape<f32> = Tape::new();
    let bound = bind(&mut tape, params);
    let vars = batch_embedding_graph(&mut tape, &bound, config, batch)?;
    Ok(vars
        .into_iter()
        .map(|v| Embedding { values: tape.value(v).data().to_vec(), normalized: false })
        .collect())
}

/// Loss and parameter gradients for a batch under a caller-supplied loss.
///
/// `loss_fn` receives the tape and one embedding var per batch element and
/// must return a `1×1` loss node.
pub fn grad<F: Real>(
    params: &ModelParams<F>,
    config: &EncoderConfig,
    batch: &[TokenSeq],
    loss_fn: impl FnOnce(&mut Tape<F>, &[Var]) -> Var,
) -> Result<(F, ModelParams<F>)> {
    let mut tape: Tape<F> = Tape::new();
    let bound = bind(&mut tape, params);
    let vars = batch_embedding_graph(&mut tape, &bound, config, batch)?;
    let loss = loss_fn(&mut tape, &vars);
    let loss_value = tape.scalar(loss);
    if !loss_value.is_finite() {
        return Err(Error::numeric(format!("non-finite loss {loss_value}")));
    }
    tape.backward(loss);
    Ok((loss_value, collect_grads(&tape, &bound, config)))
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Write `params` and `config` as a little-endian binary checkpoint.
pub fn save_checkpoint(
    params: &ModelParams<f32>,
    config: &EncoderConfig,
    path: &Path,
) -> Result<()> {
    config.validate()?;
    let (count, total_bytes) = config.param_count();
    let mut buf = Vec::with_capacity(total_bytes as usize);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut buf, CHECKPOINT_VERSION);
    push_u32(&mut buf, config.layers);
    push_u32(&mut buf, config.hidden);
    push_u32(&mut buf, config.heads);
    push_u32(&mut buf, config.ffn_dim);
    push_u32(&mut buf, config.vocab_size);
    push_u32(&mut buf, config.max_seq_len);
    let mut written = 0u64;
    for tensor in params.tensors() {
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        written += tensor.data().len() as u64;
    }
    debug_assert_eq!(written, count, "tensor shapes disagree with param_count");
    write_file_bytes(path, &buf)
}

fn take_u32(bytes: &[u8], offset: &mut usize, path: &Path) -> Result<u32> {
    let end = *offset + 4;
    if end > bytes.len() {
        return Err(Error::format(format!("{}: truncated checkpoint", path.display())));
    }
    let v = u32::from_le_bytes(bytes[*offset..end].try_into().expect("4 bytes"));
    *offset = end;
    Ok(v)
}

/// Read a checkpoint back; validates magic, version, config, and length.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f32>, EncoderConfig)> {
    let bytes = read_file_bytes(path)?;
    if bytes.len() < CHECKPOINT_HEADER_BYTES as usize {
        return Err(Error::format(format!("{}: truncated checkpoint", path.display())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(format!("{}: not a model checkpoint (bad magic)", path.display())));
    }
    let mut offset = 4;
    let version = take_u32(&bytes, &mut offset, path)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let config = EncoderConfig {
        layers: take_u32(&bytes, &mut offset, path)?,
        hidden: take_u32(&bytes, &mut offset, path)?,
        heads: take_u32(&bytes, &mut offset, path)?,
        ffn_dim: take_u32(&bytes, &mut offset, path)?,
        vocab_size: take_u32(&bytes, &mut offset, path)?,
        max_seq_len: take_u32(&bytes, &mut offset, path)?,
    };
    config.validate().map_err(|e| {
        Error::format(format!("{}: checkpoint config invalid: {e}", path.display()))
    })?;
    let (_, expected_bytes) = config.param_count();
    if bytes.len() as u64 != expected_bytes {
        return Err(Error::format(format!(
            "{}: checkpoint is {} bytes but its config requires {expected_bytes}",
            path.display(),
            bytes.len()
        )));
    }

    let mut params = ModelParams::zeros(&config);
    for tensor in params.tensors_mut() {
        for slot in tensor.data_mut() {
            *slot = f32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"));
            offset += 4;
        }
    }
    if !params.all_finite() {
        return Err(Error::format(format!(
            "{}: checkpoint contains non-finite values",
            path.display()
        )));
    }
    Ok((params, config))
}
