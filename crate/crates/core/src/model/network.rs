//! Encoder-decoder forward pass, token-level loss and hand-derived gradients.
//!
//! Layers are post-norm: `x = LN(x + Dropout(Sublayer(x)))`. When
//! `final_layer_norm` is set, one more layer norm is applied to the last
//! encoder states (before cross-attention reads them) and to the last decoder
//! states (before the tied output projection).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layers::*;
use super::params::Parameters;
use super::tensor::{add_assign, matmul, matmul_a_bt, matmul_at_b_acc, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::noising::TrainingTriple;
use crate::tokenizer::PAD;

/// A padded batch. Row `b` of every matrix belongs to the same example.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub encoder_ids: Vec<Vec<u32>>,
    pub encoder_mask: Vec<Vec<bool>>,
    pub decoder_ids: Vec<Vec<u32>>,
    pub decoder_mask: Vec<Vec<bool>>,
    pub targets: Vec<Vec<u32>>,
}

fn pad_rows(rows: &[&[u32]]) -> (Vec<Vec<u32>>, Vec<Vec<bool>>) {
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    rows.iter()
        .map(|r| {
            let mut ids = r.to_vec();
            let mut mask = vec![true; r.len()];
            ids.resize(width, PAD);
            mask.resize(width, false);
            (ids, mask)
        })
        .unzip()
}

impl Batch {
    /// Rows of `(encoder input, decoder input, target)`; decoder input and
    /// target must have equal length.
    pub fn from_rows(rows: &[(Vec<u32>, Vec<u32>, Vec<u32>)]) -> Batch {
        let enc: Vec<&[u32]> = rows.iter().map(|r| r.0.as_slice()).collect();
        let dec: Vec<&[u32]> = rows.iter().map(|r| r.1.as_slice()).collect();
        let tgt: Vec<&[u32]> = rows.iter().map(|r| r.2.as_slice()).collect();
        let (encoder_ids, encoder_mask) = pad_rows(&enc);
        let (decoder_ids, decoder_mask) = pad_rows(&dec);
        let (targets, _) = pad_rows(&tgt);
        Batch {
            encoder_ids,
            encoder_mask,
            decoder_ids,
            decoder_mask,
            targets,
        }
    }

    pub fn from_triples(triples: &[TrainingTriple]) -> Batch {
        let rows: Vec<_> = triples
            .iter()
            .map(|t| (t.encoder_input.clone(), t.decoder_input.clone(), t.target.clone()))
            .collect();
        Batch::from_rows(&rows)
    }

    /// Classification rows feed the same ids to encoder and decoder.
    pub fn classification(rows: &[Vec<u32>]) -> Batch {
        let refs: Vec<&[u32]> = rows.iter().map(|r| r.as_slice()).collect();
        let (ids, mask) = pad_rows(&refs);
        Batch {
            encoder_ids: ids.clone(),
            encoder_mask: mask.clone(),
            targets: ids.iter().map(|r| vec![PAD; r.len()]).collect(),
            decoder_ids: ids,
            decoder_mask: mask,
        }
    }

    pub fn len(&self) -> usize {
        self.encoder_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoder_ids.is_empty()
    }

    /// Number of target positions that count toward the loss.
    pub fn target_tokens(&self) -> usize {
        self.targets
            .iter()
            .zip(&self.decoder_mask)
            .map(|(t, m)| t.iter().zip(m).filter(|(&id, &m)| m && id != PAD).count())
            .sum()
    }

    pub fn validate(&self, vocab_size: usize, max_positions: usize) -> Result<()> {
        for ids in [&self.encoder_ids, &self.decoder_ids] {
            for row in ids {
                if row.len() > max_positions {
                    return Err(Error::PositionOverflow {
                        len: row.len(),
                        limit: max_positions,
                    });
                }
                if let Some(&id) = row.iter().find(|&&id| id as usize >= vocab_size) {
                    return Err(Error::TokenOutOfRange { id, vocab_size });
                }
            }
        }
        for (t, d) in self.targets.iter().zip(&self.decoder_ids) {
            if t.len() != d.len() {
                return Err(Error::Config("targets and decoder inputs differ in length".into()));
            }
            if let Some(&id) = t.iter().find(|&&id| id as usize >= vocab_size) {
                return Err(Error::TokenOutOfRange { id, vocab_size });
            }
        }
        Ok(())
    }
}

pub(crate) struct EncoderLayerCache<T> {
    attn: AttnCache<T>,
    attn_drop: Option<Vec<T>>,
    attn_norm: NormCache<T>,
    ffn: FfnCache<T>,
    ffn_drop: Option<Vec<T>>,
    ffn_norm: NormCache<T>,
}

pub(crate) struct DecoderLayerCache<T> {
    self_attn: AttnCache<T>,
    self_drop: Option<Vec<T>>,
    self_norm: NormCache<T>,
    cross_attn: AttnCache<T>,
    cross_drop: Option<Vec<T>>,
    cross_norm: NormCache<T>,
    ffn: FfnCache<T>,
    ffn_drop: Option<Vec<T>>,
    ffn_norm: NormCache<T>,
}

pub(crate) struct StackCache<T, L> {
    ids: Vec<u32>,
    embed_drop: Option<Vec<T>>,
    layers: Vec<L>,
    final_norm: Option<NormCache<T>>,
}

pub(crate) type EncoderCache<T> = StackCache<T, EncoderLayerCache<T>>;
pub(crate) type DecoderCache<T> = StackCache<T, DecoderLayerCache<T>>;

fn embed<T: Scalar>(p: &Parameters<T>, positions: &Tensor<T>, ids: &[u32]) -> Vec<T> {
    let d = p.config.d_model;
    let mut x = Vec::with_capacity(ids.len() * d);
    for (i, &id) in ids.iter().enumerate() {
        let e = p.embed_tokens.row(id as usize);
        let pos = positions.row(i);
        x.extend(e.iter().zip(pos).map(|(&a, &b)| a + b));
    }
    x
}

fn embed_backward<T: Scalar>(g: &mut Parameters<T>, decoder: bool, ids: &[u32], dx: &[T]) {
    let d = g.config.d_model;
    for (i, &id) in ids.iter().enumerate() {
        let row = &dx[i * d..(i + 1) * d];
        add_assign(g.embed_tokens.row_mut(id as usize), row);
        let positions = if decoder {
            &mut g.decoder_positions
        } else {
            &mut g.encoder_positions
        };
        add_assign(positions.row_mut(i), row);
    }
}

fn residual<T: Scalar>(x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(&a, &b)| a + b).collect()
}

pub(crate) fn encode<T: Scalar>(
    p: &Parameters<T>,
    ids: &[u32],
    mask: &[bool],
    dropout: f64,
    mut rng: Option<&mut dyn RngCore>,
) -> (Vec<T>, EncoderCache<T>) {
    let n = ids.len();
    let heads = p.config.heads;
    let d = p.config.d_model;
    let mut x = embed(p, &p.encoder_positions, ids);
    let embed_drop = dropout_mask(n * d, dropout, rng.as_deref_mut());
    apply_mask(&mut x, &embed_drop);
    let attn_mask = AttnMask {
        keys: mask,
        causal: false,
    };
    let mut layers = Vec::with_capacity(p.encoder_layers.len());
    for layer in &p.encoder_layers {
        let (mut a, attn) = attention_forward(&layer.self_attn, &x, n, &x, n, attn_mask, heads);
        let attn_drop = dropout_mask(n * d, dropout, rng.as_deref_mut());
        apply_mask(&mut a, &attn_drop);
        let (h, attn_norm) = layer_norm_forward(&layer.self_attn_norm, &residual(&x, &a), n);
        let (mut f, ffn) = ffn_forward(&layer.ffn, &h, n);
        let ffn_drop = dropout_mask(n * d, dropout, rng.as_deref_mut());
        apply_mask(&mut f, &ffn_drop);
        let (out, ffn_norm) = layer_norm_forward(&layer.ffn_norm, &residual(&h, &f), n);
        x = out;
        layers.push(EncoderLayerCache {
            attn,
            attn_drop,
            attn_norm,
            ffn,
            ffn_drop,
            ffn_norm,
        });
    }
    let final_norm = p.encoder_final_norm.as_ref().map(|ln| {
        let (y, c) = layer_norm_forward(ln, &x, n);
        x = y;
        c
    });
    (
        x,
        StackCache {
            ids: ids.to_vec(),
            embed_drop,
            layers,
            final_norm,
        },
    )
}

fn encode_backward<T: Scalar>(p: &Parameters<T>, g: &mut Parameters<T>, c: &EncoderCache<T>, dout: Vec<T>) {
    let n = c.ids.len();
    let heads = p.config.heads;
    let mut dx = dout;
    if let (Some(ln), Some(cache)) = (&p.encoder_final_norm, &c.final_norm) {
        dx = layer_norm_backward(ln, g.encoder_final_norm.as_mut().unwrap(), cache, &dx, n);
    }
    for (li, lc) in c.layers.iter().enumerate().rev() {
        let layer = &p.encoder_layers[li];
        let gl = &mut g.encoder_layers[li];
        // out = LN2(h + drop(ffn(h)))
        let dsum = layer_norm_backward(&layer.ffn_norm, &mut gl.ffn_norm, &lc.ffn_norm, &dx, n);
        let mut df = dsum.clone();
        apply_mask(&mut df, &lc.ffn_drop);
        let mut dh = ffn_backward(&layer.ffn, &mut gl.ffn, &lc.ffn, &df, n);
        add_assign(&mut dh, &dsum);
        // h = LN1(x + drop(attn(x)))
        let dsum = layer_norm_backward(&layer.self_attn_norm, &mut gl.self_attn_norm, &lc.attn_norm, &dh, n);
        let mut da = dsum.clone();
        apply_mask(&mut da, &lc.attn_drop);
        let (dq, dkv) = attention_backward(&layer.self_attn, &mut gl.self_attn, &lc.attn, &da, heads);
        dx = dsum;
        add_assign(&mut dx, &dq);
        add_assign(&mut dx, &dkv);
    }
    apply_mask(&mut dx, &c.embed_drop);
    embed_backward(g, false, &c.ids, &dx);
}

pub(crate) fn decode<T: Scalar>(
    p: &Parameters<T>,
    ids: &[u32],
    mask: &[bool],
    memory: &[T],
    memory_mask: &[bool],
    dropout: f64,
    mut rng: Option<&mut dyn RngCore>,
) -> (Vec<T>, DecoderCache<T>) {
    let n = ids.len();
    let m = memory_mask.len();
    let heads = p.config.heads;
    let d = p.config.d_model;
    let mut x = embed(p, &p.decoder_positions, ids);
    let embed_drop = dropout_mask(n * d, dropout, rng.as_deref_mut());
    apply_mask(&mut x, &embed_drop);
    let self_mask = AttnMask {
        keys: mask,
        causal: true,
    };
    let cross_mask = AttnMask {
        keys: memory_mask,
        causal: false,
    };
    let mut layers = Vec::with_capacity(p.decoder_layers.len());
    for layer in &p.decoder_layers {
        let (mut a, self_attn) = attention_forward(&layer.self_attn, &x, n, &x, n, self_mask, heads);
        let self_drop = dropout_mask(n * d, dropout, rng.as_deref_mut());
        apply_mask(&mut a, &self_drop);
        let (h1, self_norm) = layer_norm_forward(&layer.self_attn_norm, &residual(&x, &a), n);
        let (mut cr, cross_attn) = attention_forward(&layer.cross_attn, &h1, n, memory, m, cross_mask, heads);
        let cross_drop = dropout_mask(n * d, dropout, rng.as_deref_mut());
        apply_mask(&mut cr, &cross_drop);
        let (h2, cross_norm) = layer_norm_forward(&layer.cross_attn_norm, &residual(&h1, &cr), n);
        let (mut f, ffn) = ffn_forward(&layer.ffn, &h2, n);
        let ffn_drop = dropout_mask(n * d, dropout, rng.as_deref_mut());
        apply_mask(&mut f, &ffn_drop);
        let (out, ffn_norm) = layer_norm_forward(&layer.ffn_norm, &residual(&h2, &f), n);
        x = out;
        layers.push(DecoderLayerCache {
            self_attn,
            self_drop,
            self_norm,
            cross_attn,
            cross_drop,
            cross_norm,
            ffn,
            ffn_drop,
            ffn_norm,
        });
    }
    let final_norm = p.decoder_final_norm.as_ref().map(|ln| {
        let (y, c) = layer_norm_forward(ln, &x, n);
        x = y;
        c
    });
    (
        x,
        StackCache {
            ids: ids.to_vec(),
            embed_drop,
            layers,
            final_norm,
        },
    )
}

/// Returns the gradient with respect to the encoder memory.
fn decode_backward<T: Scalar>(
    p: &Parameters<T>,
    g: &mut Parameters<T>,
    c: &DecoderCache<T>,
    dout: Vec<T>,
    memory_len: usize,
) -> Vec<T> {
    let n = c.ids.len();
    let heads = p.config.heads;
    let mut dmemory = vec![T::zero(); memory_len * p.config.d_model];
    let mut dx = dout;
    if let (Some(ln), Some(cache)) = (&p.decoder_final_norm, &c.final_norm) {
        dx = layer_norm_backward(ln, g.decoder_final_norm.as_mut().unwrap(), cache, &dx, n);
    }
    for (li, lc) in c.layers.iter().enumerate().rev() {
        let layer = &p.decoder_layers[li];
        let gl = &mut g.decoder_layers[li];
        let dsum = layer_norm_backward(&layer.ffn_norm, &mut gl.ffn_norm, &lc.ffn_norm, &dx, n);
        let mut df = dsum.clone();
        apply_mask(&mut df, &lc.ffn_drop);
        let mut dh2 = ffn_backward(&layer.ffn, &mut gl.ffn, &lc.ffn, &df, n);
        add_assign(&mut dh2, &dsum);

        let dsum = layer_norm_backward(&layer.cross_attn_norm, &mut gl.cross_attn_norm, &lc.cross_norm, &dh2, n);
        let mut dc = dsum.clone();
        apply_mask(&mut dc, &lc.cross_drop);
        let (dq, dmem) = attention_backward(&layer.cross_attn, &mut gl.cross_attn, &lc.cross_attn, &dc, heads);
        add_assign(&mut dmemory, &dmem);
        let mut dh1 = dsum;
        add_assign(&mut dh1, &dq);

        let dsum = layer_norm_backward(&layer.self_attn_norm, &mut gl.self_attn_norm, &lc.self_norm, &dh1, n);
        let mut da = dsum.clone();
        apply_mask(&mut da, &lc.self_drop);
        let (dq, dkv) = attention_backward(&layer.self_attn, &mut gl.self_attn, &lc.self_attn, &da, heads);
        dx = dsum;
        add_assign(&mut dx, &dq);
        add_assign(&mut dx, &dkv);
    }
    apply_mask(&mut dx, &c.embed_drop);
    embed_backward(g, true, &c.ids, &dx);
    dmemory
}

/// Tied output projection: `states (n×d) · Eᵀ`.
pub(crate) fn project<T: Scalar>(p: &Parameters<T>, states: &[T], n: usize) -> Vec<T> {
    matmul_a_bt(states, &p.embed_tokens.data, n, p.config.d_model, p.config.vocab_size)
}

pub(crate) fn log_softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row.iter_mut().for_each(|v| *v -= lse);
}

fn example_seeds(n: usize, rng: Option<&mut dyn RngCore>) -> Vec<Option<u64>> {
    match rng {
        Some(r) => (0..n).map(|_| Some(r.next_u64())).collect(),
        None => vec![None; n],
    }
}

fn check<T: Scalar>(p: &Parameters<T>, batch: &Batch) -> Result<()> {
    batch.validate(p.config.vocab_size, p.config.max_positions)
}

/// Logits `[B, T, vocab_size]`. Dropout is active only when `rng` is given.
pub fn forward<T: Scalar>(
    p: &Parameters<T>,
    batch: &Batch,
    dropout: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<Tensor<T>> {
    check(p, batch)?;
    let seeds = example_seeds(batch.len(), rng);
    let v = p.config.vocab_size;
    let t = batch.decoder_ids.first().map_or(0, |r| r.len());
    let rows: Vec<Vec<T>> = (0..batch.len())
        .into_par_iter()
        .map(|b| {
            let mut local = seeds[b].map(ChaCha8Rng::seed_from_u64);
            let (memory, _) = encode(
                p,
                &batch.encoder_ids[b],
                &batch.encoder_mask[b],
                dropout,
                local.as_mut().map(|r| r as &mut dyn RngCore),
            );
            let (states, _) = decode(
                p,
                &batch.decoder_ids[b],
                &batch.decoder_mask[b],
                &memory,
                &batch.encoder_mask[b],
                dropout,
                local.as_mut().map(|r| r as &mut dyn RngCore),
            );
            project(p, &states, batch.decoder_ids[b].len())
        })
        .collect();
    let mut data = Vec::with_capacity(batch.len() * t * v);
    rows.into_iter().for_each(|r| data.extend(r));
    Ok(Tensor {
        shape: vec![batch.len(), t, v],
        data,
    })
}

/// Mean negative log-likelihood over non-pad targets and its gradient.
pub fn loss_and_grads<T: Scalar>(
    p: &Parameters<T>,
    batch: &Batch,
    dropout: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<(T, Parameters<T>)> {
    check(p, batch)?;
    let count = batch.target_tokens();
    if count == 0 {
        return Ok((T::zero(), p.zeros_like()));
    }
    let inv = T::lit(1.0 / count as f64);
    let seeds = example_seeds(batch.len(), rng);
    let v = p.config.vocab_size;
    let d = p.config.d_model;
    let parts: Vec<(T, Parameters<T>)> = (0..batch.len())
        .into_par_iter()
        .map(|b| {
            let mut g = p.zeros_like();
            let mut local = seeds[b].map(ChaCha8Rng::seed_from_u64);
            let enc_ids = &batch.encoder_ids[b];
            let (memory, ecache) = encode(
                p,
                enc_ids,
                &batch.encoder_mask[b],
                dropout,
                local.as_mut().map(|r| r as &mut dyn RngCore),
            );
            let n = batch.decoder_ids[b].len();
            let (states, dcache) = decode(
                p,
                &batch.decoder_ids[b],
                &batch.decoder_mask[b],
                &memory,
                &batch.encoder_mask[b],
                dropout,
                local.as_mut().map(|r| r as &mut dyn RngCore),
            );
            let mut logits = project(p, &states, n);
            let mut loss = T::zero();
            for i in 0..n {
                let row = &mut logits[i * v..(i + 1) * v];
                let tgt = batch.targets[b][i];
                if !batch.decoder_mask[b][i] || tgt == PAD {
                    row.iter_mut().for_each(|x| *x = T::zero());
                    continue;
                }
                log_softmax_in_place(row);
                loss -= row[tgt as usize];
                // d(-log softmax)/dlogits = softmax - onehot, scaled by 1/count
                for x in row.iter_mut() {
                    *x = x.exp() * inv;
                }
                row[tgt as usize] -= inv;
            }
            // logits = states · Eᵀ
            matmul_at_b_acc(&mut g.embed_tokens.data, &logits, &states, n, v, d);
            let dstates = matmul(&logits, &p.embed_tokens.data, n, v, d);
            let dmemory = decode_backward(p, &mut g, &dcache, dstates, enc_ids.len());
            encode_backward(p, &mut g, &ecache, dmemory);
            (loss, g)
        })
        .collect();
    let mut total = T::zero();
    let mut grads = p.zeros_like();
    for (l, g) in parts {
        total += l;
        grads.add_assign(&g);
    }
    Ok((total * inv, grads))
}

fn readout_index(mask: &[bool]) -> usize {
    mask.iter().rposition(|&m| m).unwrap_or(0)
}

/// Label logits per row, read from the final decoder state of the last
/// non-pad token.
pub fn classify_batch<T: Scalar>(p: &Parameters<T>, batch: &Batch) -> Result<Vec<Vec<T>>> {
    check(p, batch)?;
    let head = p
        .classifier
        .as_ref()
        .ok_or_else(|| Error::Config("model has no classification head".into()))?;
    let d = p.config.d_model;
    Ok((0..batch.len())
        .into_par_iter()
        .map(|b| {
            let (memory, _) = encode(p, &batch.encoder_ids[b], &batch.encoder_mask[b], 0.0, None);
            let (states, _) = decode(
                p,
                &batch.decoder_ids[b],
                &batch.decoder_mask[b],
                &memory,
                &batch.encoder_mask[b],
                0.0,
                None,
            );
            let r = readout_index(&batch.decoder_mask[b]);
            linear_forward(head, &states[r * d..(r + 1) * d], 1)
        })
        .collect())
}

pub fn classify<T: Scalar>(p: &Parameters<T>, ids: &[u32]) -> Result<Vec<T>> {
    Ok(classify_batch(p, &Batch::classification(&[ids.to_vec()]))?.remove(0))
}

/// Mean cross-entropy of the classification head and its gradient.
pub fn classification_loss_and_grads<T: Scalar>(
    p: &Parameters<T>,
    batch: &Batch,
    labels: &[usize],
    dropout: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<(T, Parameters<T>)> {
    check(p, batch)?;
    let head = p
        .classifier
        .as_ref()
        .ok_or_else(|| Error::Config("model has no classification head".into()))?;
    let k = p.config.num_labels;
    if labels.len() != batch.len() || labels.iter().any(|&l| l >= k) {
        return Err(Error::Config(format!("expected {} labels in 0..{k}", batch.len())));
    }
    if batch.is_empty() {
        return Ok((T::zero(), p.zeros_like()));
    }
    let inv = T::lit(1.0 / batch.len() as f64);
    let seeds = example_seeds(batch.len(), rng);
    let d = p.config.d_model;
    let parts: Vec<(T, Parameters<T>)> = (0..batch.len())
        .into_par_iter()
        .map(|b| {
            let mut g = p.zeros_like();
            let mut local = seeds[b].map(ChaCha8Rng::seed_from_u64);
            let enc_ids = &batch.encoder_ids[b];
            let (memory, ecache) = encode(
                p,
                enc_ids,
                &batch.encoder_mask[b],
                dropout,
                local.as_mut().map(|r| r as &mut dyn RngCore),
            );
            let n = batch.decoder_ids[b].len();
            let (states, dcache) = decode(
                p,
                &batch.decoder_ids[b],
                &batch.decoder_mask[b],
                &memory,
                &batch.encoder_mask[b],
                dropout,
                local.as_mut().map(|r| r as &mut dyn RngCore),
            );
            let r = readout_index(&batch.decoder_mask[b]);
            let h = &states[r * d..(r + 1) * d];
            let mut logits = linear_forward(head, h, 1);
            log_softmax_in_place(&mut logits);
            let loss = -logits[labels[b]];
            for x in logits.iter_mut() {
                *x = x.exp() * inv;
            }
            logits[labels[b]] -= inv;
            let dh = linear_backward(head, g.classifier.as_mut().unwrap(), h, &logits, 1);
            let mut dstates = vec![T::zero(); n * d];
            dstates[r * d..(r + 1) * d].copy_from_slice(&dh);
            let dmemory = decode_backward(p, &mut g, &dcache, dstates, enc_ids.len());
            encode_backward(p, &mut g, &ecache, dmemory);
            (loss, g)
        })
        .collect();
    let mut total = T::zero();
    let mut grads = p.zeros_like();
    for (l, g) in parts {
        total += l;
        grads.add_assign(&g);
    }
    Ok((total * inv, grads))
}
