//! Single-head cross-attention from BEV queries to their unfolded kernel
//! features.
//!
//! For query `q` and the `P` unfolded positions `f_j` (views, scales and
//! kernel positions flattened into one set):
//!
//! ```text
//! k_j = W_kᵀ f_j + b_k        v_j = W_vᵀ f_j + b_v
//! α   = softmax((W_qᵀ q) · k_j / √d)
//! out = W_oᵀ Σ_j α_j v_j + b_o + q
//! ```
//!
//! No positional encoding is applied across kernel positions, so the output
//! is invariant to permuting them. Zero-filled (invalid) positions still take
//! part in the softmax unless `mask_invalid` is set.
//!
//! Keys and values are never materialized: `(W_qᵀ q)·k_j` is evaluated as
//! `(W_k W_qᵀ q)·f_j + (W_qᵀ q)·b_k`, and the value sum as
//! `W_vᵀ (Σ α_j f_j) + (Σ α_j) b_v`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{dim, to_u32, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::gather::UnfoldedFeatures;
use crate::tensor::{FeatureMap, FeaturePyramid};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"GKTW";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbeddings {
    pub num_queries: usize,
    pub d_model: usize,
    pub seed: u64,
    /// `[num_queries][d_model]`.
    pub data: Vec<f32>,
}

impl QueryEmbeddings {
    pub fn query(&self, i: usize) -> &[f32] {
        &self.data[i * self.d_model..(i + 1) * self.d_model]
    }
}

/// Projection parameters. Matrices are row-major `[in][out]`, applied as
/// `Wᵀ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub channels: usize,
    pub d_model: usize,
    pub w_q: Vec<f32>,
    pub w_k: Vec<f32>,
    pub b_k: Vec<f32>,
    pub w_v: Vec<f32>,
    pub b_v: Vec<f32>,
    pub w_o: Vec<f32>,
    pub b_o: Vec<f32>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn init_bound(d_model: usize) -> f32 {
    1.0 / (d_model as f32).sqrt()
}

/// Uniform(−1/√d, 1/√d) embeddings, fully determined by `seed`.
pub fn init_embeddings(num_queries: usize, d_model: usize, seed: u64) -> Result<QueryEmbeddings> {
    if num_queries == 0 || d_model == 0 {
        return Err(Error::invalid("embeddings", "dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(QueryEmbeddings {
        num_queries,
        d_model,
        seed,
        data: uniform(&mut rng, num_queries * d_model, init_bound(d_model)),
    })
}

/// Uniform(−1/√d, 1/√d) weights, drawn in file order (W_q, W_k, b_k, W_v,
/// b_v, W_o, b_o).
pub fn init_weights(channels: usize, d_model: usize, seed: u64) -> Result<AttentionWeights> {
    if channels == 0 || d_model == 0 {
        return Err(Error::invalid("weights", "dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = init_bound(d_model);
    let (c, d) = (channels, d_model);
    Ok(AttentionWeights {
        channels,
        d_model,
        w_q: uniform(&mut rng, d * d, b),
        w_k: uniform(&mut rng, c * d, b),
        b_k: uniform(&mut rng, d, b),
        w_v: uniform(&mut rng, c * d, b),
        b_v: uniform(&mut rng, d, b),
        w_o: uniform(&mut rng, d * d, b),
        b_o: uniform(&mut rng, d, b),
    })
}

impl AttentionWeights {
    pub fn validate(&self) -> Result<()> {
        let (c, d) = (self.channels, self.d_model);
        let expect = [d * d, c * d, d, c * d, d, d * d, d];
        for (name, (buf, n)) in ["w_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o"]
            .iter()
            .zip(self.buffers().iter().zip(expect))
        {
            if buf.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has {} values, expected {n}",
                    buf.len()
                )));
            }
            if buf.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "weights",
                    format!("{name} has non-finite values"),
                ));
            }
        }
        Ok(())
    }

    fn buffers(&self) -> [&Vec<f32>; 7] {
        [
            &self.w_q, &self.w_k, &self.b_k, &self.w_v, &self.b_v, &self.w_o, &self.b_o,
        ]
    }

    /// Zeroes every bias.
    pub fn without_biases(mut self) -> Self {
        self.b_k.fill(0.0);
        self.b_v.fill(0.0);
        self.b_o.fill(0.0);
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(&WEIGHTS_MAGIC, WEIGHTS_VERSION);
        w.u32(to_u32(self.channels, "channels"));
        w.u32(to_u32(self.d_model, "d_model"));
        for b in self.buffers() {
            w.f32s(b);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::with_header(bytes, &WEIGHTS_MAGIC, WEIGHTS_VERSION)?;
        let c = dim(r.u32()?, "channels")?;
        let d = dim(r.u32()?, "d_model")?;
        let mut next = |n: usize| r.f32s(n);
        let weights = AttentionWeights {
            channels: c,
            d_model: d,
            w_q: next(d * d)?,
            w_k: next(c * d)?,
            b_k: next(d)?,
            w_v: next(c * d)?,
            b_v: next(d)?,
            w_o: next(d * d)?,
            b_o: next(d)?,
        };
        r.finish()?;
        if weights
            .buffers()
            .iter()
            .any(|b| b.iter().any(|v| !v.is_finite()))
        {
            return Err(FormatError::Inconsistent("non-finite weight".into()));
        }
        Ok(weights)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AttendOptions {
    /// Drop LUT-invalid positions from the softmax. A query with no valid
    /// position gets a zero context, i.e. `out = b_o + q`.
    pub mask_invalid: bool,
}

/// `[rows][cols][d_model]` BEV features.
#[derive(Debug, Clone, PartialEq)]
pub struct BevFeatureMap {
    pub rows: usize,
    pub cols: usize,
    pub d_model: usize,
    pub data: Vec<f32>,
}

impl BevFeatureMap {
    pub fn num_queries(&self) -> usize {
        self.rows * self.cols
    }

    pub fn query(&self, i: usize) -> &[f32] {
        &self.data[i * self.d_model..(i + 1) * self.d_model]
    }

    /// Reinterprets the query axis as a `rows x cols` grid.
    pub fn with_grid(self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.num_queries() {
            return Err(Error::ShapeMismatch(format!(
                "{} queries cannot form a {rows}x{cols} grid",
                self.num_queries()
            )));
        }
        Ok(BevFeatureMap { rows, cols, ..self })
    }

    /// One-view one-scale pyramid with C = d_model, H = rows, W = cols.
    pub fn to_pyramid(&self) -> Result<FeaturePyramid> {
        let (d, plane) = (self.d_model, self.rows * self.cols);
        let mut chw = vec![0.0; self.data.len()];
        for q in 0..plane {
            for c in 0..d {
                chw[c * plane + q] = self.data[q * d + c];
            }
        }
        FeaturePyramid::new(1, 1, vec![FeatureMap::new(d, self.rows, self.cols, chw)?])
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_pyramid()?.write(path)
    }
}

/// Softmax weights and output of one query over a `[P][C]` position matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryAttention {
    pub alpha: Vec<f32>,
    pub output: Vec<f32>,
}

/// Attends one query over explicit positions. `positions` is `[P][C]`;
/// `mask`, when given, marks the positions allowed into the softmax.
pub fn attend_positions(
    query: &[f32],
    positions: &[f32],
    mask: Option<&[bool]>,
    weights: &AttentionWeights,
) -> Option<QueryAttention> {
    let (c, d) = (weights.channels, weights.d_model);
    let p = positions.len() / c;
    let scale = 1.0 / (d as f32).sqrt();

    // q' = W_qᵀ q
    let mut qp = vec![0.0f32; d];
    for (i, &qi) in query.iter().enumerate() {
        let row = &weights.w_q[i * d..(i + 1) * d];
        for (o, &w) in qp.iter_mut().zip(row) {
            *o += qi * w;
        }
    }
    // a = W_k q'
    let a: Vec<f32> = (0..c)
        .map(|ch| {
            weights.w_k[ch * d..(ch + 1) * d]
                .iter()
                .zip(&qp)
                .map(|(w, q)| w * q)
                .sum()
        })
        .collect();
    let bias_logit: f32 = qp.iter().zip(&weights.b_k).map(|(q, b)| q * b).sum();

    let allowed = |j: usize| mask.is_none_or(|m| m[j]);
    let logits: Vec<f32> = positions
        .chunks_exact(c)
        .map(|f| (f.iter().zip(&a).map(|(x, y)| x * y).sum::<f32>() + bias_logit) * scale)
        .collect();
    let max = (0..p)
        .filter(|&j| allowed(j))
        .map(|j| logits[j])
        .fold(f32::NEG_INFINITY, f32::max);
    let mut alpha = vec![0.0f32; p];
    if max.is_finite() {
        let mut exps = vec![0.0f64; p];
        for j in (0..p).filter(|&j| allowed(j)) {
            exps[j] = ((logits[j] - max) as f64).exp();
        }
        let total: f64 = exps.iter().sum();
        for (a, e) in alpha.iter_mut().zip(&exps) {
            *a = (e / total) as f32;
        }
    } else if (0..p).any(allowed) {
        return None;
    }

    // pooled = Σ α_j f_j ; ctx = W_vᵀ pooled + (Σα) b_v
    let mut pooled = vec![0.0f32; c];
    for (f, &w) in positions.chunks_exact(c).zip(&alpha) {
        if w != 0.0 {
            for (o, &x) in pooled.iter_mut().zip(f) {
                *o += w * x;
            }
        }
    }
    let mass: f32 = alpha.iter().sum();
    let mut ctx: Vec<f32> = weights.b_v.iter().map(|b| mass * b).collect();
    for (ch, &x) in pooled.iter().enumerate() {
        let row = &weights.w_v[ch * d..(ch + 1) * d];
        for (o, &w) in ctx.iter_mut().zip(row) {
            *o += x * w;
        }
    }
    let mut output: Vec<f32> = weights.b_o.iter().zip(query).map(|(b, q)| b + q).collect();
    for (i, &x) in ctx.iter().enumerate() {
        let row = &weights.w_o[i * d..(i + 1) * d];
        for (o, &w) in output.iter_mut().zip(row) {
            *o += x * w;
        }
    }
    if output.iter().chain(&alpha).any(|v| !v.is_finite()) {
        return None;
    }
    Some(QueryAttention { alpha, output })
}

fn check_shapes(
    queries: &QueryEmbeddings,
    unfolded: &UnfoldedFeatures,
    weights: &AttentionWeights,
) -> Result<()> {
    weights.validate()?;
    if queries.num_queries != unfolded.num_queries() {
        return Err(Error::ShapeMismatch(format!(
            "{} query embeddings for {} unfolded queries",
            queries.num_queries,
            unfolded.num_queries()
        )));
    }
    if queries.d_model != weights.d_model
        || queries.data.len() != queries.num_queries * queries.d_model
    {
        return Err(Error::ShapeMismatch(format!(
            "embedding width {} does not match weights d_model {}",
            queries.d_model, weights.d_model
        )));
    }
    if unfolded.channels() != weights.channels {
        return Err(Error::ShapeMismatch(format!(
            "features have {} channels, weights expect {}",
            unfolded.channels(),
            weights.channels
        )));
    }
    Ok(())
}

fn attend_one(
    queries: &QueryEmbeddings,
    unfolded: &UnfoldedFeatures,
    weights: &AttentionWeights,
    options: &AttendOptions,
    i: usize,
) -> Result<QueryAttention> {
    let positions = unfolded.query_positions(i);
    let mask = options.mask_invalid.then(|| unfolded.block_valid(i));
    attend_positions(queries.query(i), &positions, mask, weights)
        .ok_or(Error::NonFinite { query: i })
}

/// Runs every query. The result is shaped `num_queries x 1`; use
/// [`BevFeatureMap::with_grid`] to restore the BEV layout.
pub fn attend(
    queries: &QueryEmbeddings,
    unfolded: &UnfoldedFeatures,
    weights: &AttentionWeights,
    options: &AttendOptions,
) -> Result<BevFeatureMap> {
    check_shapes(queries, unfolded, weights)?;
    let d = weights.d_model;
    let mut data = vec![0.0f32; queries.num_queries * d];
    data.par_chunks_mut(d)
        .enumerate()
        .try_for_each(|(i, out)| -> Result<()> {
            out.copy_from_slice(&attend_one(queries, unfolded, weights, options, i)?.output);
            Ok(())
        })?;
    Ok(BevFeatureMap {
        rows: queries.num_queries,
        cols: 1,
        d_model: d,
        data,
    })
}

/// Softmax weights of one query, in (view, scale, position) order.
pub fn attention_map(
    queries: &QueryEmbeddings,
    unfolded: &UnfoldedFeatures,
    weights: &AttentionWeights,
    options: &AttendOptions,
    query_index: usize,
) -> Result<Vec<f32>> {
    check_shapes(queries, unfolded, weights)?;
    if query_index >= queries.num_queries {
        return Err(Error::OutOfRange {
            what: "query",
            index: query_index,
            len: queries.num_queries,
        });
    }
    Ok(attend_one(queries, unfolded, weights, options, query_index)?.alpha)
}

/// Binary PGM (P5) of attention weights laid out as `rows x cols`
/// (e.g. (view·scale) x kernel position), each cell drawn `cell` pixels wide,
/// normalized so the largest weight is white.
pub fn heatmap_pgm(alpha: &[f32], rows: usize, cols: usize, cell: usize) -> Result<Vec<u8>> {
    if rows * cols != alpha.len() || cell == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} weights cannot fill a {rows}x{cols} heatmap",
            alpha.len()
        )));
    }
    let max = alpha.iter().cloned().fold(0.0f32, f32::max);
    let (h, w) = (rows * cell, cols * cell);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let a = alpha[(y / cell) * cols + x / cell];
            let level = if max > 0.0 {
                (a / max * 255.0).round()
            } else {
                0.0
            };
            out.push(level.clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    /// Unvectorized reference: materializes every k_j and v_j.
    fn oracle(query: &[f32], positions: &[f32], w: &AttentionWeights) -> (Vec<f64>, Vec<f64>) {
        let (c, d) = (w.channels, w.d_model);
        let p = positions.len() / c;
        let mut qp = vec![0.0f64; d];
        for o in 0..d {
            for i in 0..d {
                qp[o] += w.w_q[i * d + o] as f64 * query[i] as f64;
            }
        }
        let mut logits = vec![0.0f64; p];
        let mut vals = vec![vec![0.0f64; d]; p];
        for j in 0..p {
            for o in 0..d {
                let mut k = w.b_k[o] as f64;
                let mut v = w.b_v[o] as f64;
                for ch in 0..c {
                    k += w.w_k[ch * d + o] as f64 * positions[j * c + ch] as f64;
                    v += w.w_v[ch * d + o] as f64 * positions[j * c + ch] as f64;
                }
                logits[j] += qp[o] * k;
                vals[j][o] = v;
            }
            logits[j] /= (d as f64).sqrt();
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let alpha: Vec<f64> = e.iter().map(|x| x / s).collect();
        let mut ctx = vec![0.0f64; d];
        for j in 0..p {
            for o in 0..d {
                ctx[o] += alpha[j] * vals[j][o];
            }
        }
        let mut out = vec![0.0f64; d];
        for o in 0..d {
            out[o] = w.b_o[o] as f64 + query[o] as f64;
            for i in 0..d {
                out[o] += w.w_o[i * d + o] as f64 * ctx[i];
            }
        }
        (alpha, out)
    }

    #[test]
    fn equal_features_give_uniform_weights() {
        let w = init_weights(3, 4, 1).unwrap();
        let q = init_embeddings(1, 4, 2).unwrap();
        let positions = [0.5f32, -1.0, 2.0].repeat(6);
        let r = attend_positions(q.query(0), &positions, None, &w).unwrap();
        for a in &r.alpha {
            assert!((a - 1.0 / 6.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_position_passes_value_through() {
        let w = init_weights(3, 3, 4).unwrap();
        let q = init_embeddings(1, 3, 5).unwrap();
        let f = [0.3f32, -0.2, 0.9];
        let r = attend_positions(q.query(0), &f, None, &w).unwrap();
        assert_eq!(r.alpha, vec![1.0]);
        // out = W_oᵀ v_0 + b_o + q
        let v: Vec<f32> = (0..3)
            .map(|o| w.b_v[o] + (0..3).map(|c| w.w_v[c * 3 + o] * f[c]).sum::<f32>())
            .collect();
        for o in 0..3 {
            let expect =
                w.b_o[o] + q.query(0)[o] + (0..3).map(|i| w.w_o[i * 3 + o] * v[i]).sum::<f32>();
            assert!((r.output[o] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_scalar_oracle_on_small_instance() {
        // 2 queries, P = 4, C = 3, d_model = 3
        let w = init_weights(3, 3, 11).unwrap();
        let q = init_embeddings(2, 3, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for i in 0..2 {
            let positions = uniform(&mut rng, 12, 2.0);
            let r = attend_positions(q.query(i), &positions, None, &w).unwrap();
            let (alpha, out) = oracle(q.query(i), &positions, &w);
            for (a, b) in r.alpha.iter().zip(&alpha) {
                assert!((*a as f64 - b).abs() < 1e-5);
            }
            for (a, b) in r.output.iter().zip(&out) {
                assert!((*a as f64 - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn masking_drops_invalid_positions() {
        let w = init_weights(2, 2, 3).unwrap();
        let q = init_embeddings(1, 2, 3).unwrap();
        let positions = [1.0f32, 2.0, 0.0, 0.0, -1.0, 0.5];
        let mask = [true, false, true];
        let r = attend_positions(q.query(0), &positions, Some(&mask), &w).unwrap();
        assert_eq!(r.alpha[1], 0.0);
        assert!((r.alpha.iter().sum::<f32>() - 1.0).abs() < 1e-6);

        let none = [false; 3];
        let r = attend_positions(q.query(0), &positions, Some(&none), &w).unwrap();
        assert!(r.alpha.iter().all(|&a| a == 0.0));
        let expect: Vec<f32> = w.b_o.iter().zip(q.query(0)).map(|(b, q)| b + q).collect();
        assert_eq!(r.output, expect);
    }

    #[test]
    fn zero_position_contributes_zero_value_without_bias() {
        let w = init_weights(2, 2, 8).unwrap().without_biases();
        let q = init_embeddings(1, 2, 9).unwrap();
        let f = [0.4f32, -0.7];
        let with_zero = [0.4f32, -0.7, 0.0, 0.0];
        let a = attend_positions(q.query(0), &f, None, &w).unwrap();
        let b = attend_positions(q.query(0), &with_zero, None, &w).unwrap();
        // The zero position still draws attention mass ...
        assert!(b.alpha[1] > 0.0);
        // ... but only rescales the single real value: ctx_b = α_0 · ctx_a.
        let qv: Vec<f32> = q.query(0).to_vec();
        for o in 0..2 {
            let da = a.output[o] - qv[o];
            let db = b.output[o] - qv[o];
            assert!((db - b.alpha[0] * da).abs() < 1e-6);
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        assert_eq!(
            init_weights(4, 8, 1).unwrap(),
            init_weights(4, 8, 1).unwrap()
        );
        assert_ne!(
            init_weights(4, 8, 1).unwrap(),
            init_weights(4, 8, 2).unwrap()
        );
        let e = init_embeddings(10, 16, 3).unwrap();
        assert_eq!(e, init_embeddings(10, 16, 3).unwrap());
        assert_ne!(e.data, init_embeddings(10, 16, 4).unwrap().data);
        assert!(e.data.iter().all(|v| v.abs() <= 0.25));
        assert!(init_embeddings(0, 4, 1).is_err());
        assert!(init_weights(4, 0, 1).is_err());
    }

    #[test]
    fn weights_file_roundtrip_and_errors() {
        let w = init_weights(3, 2, 7).unwrap();
        let bytes = w.to_bytes();
        assert_eq!(AttentionWeights::from_bytes(&bytes).unwrap(), w);
        assert_eq!(bytes.len(), 6 + 8 + 4 * (4 + 6 + 2 + 6 + 2 + 4 + 2));
        let mut bad = bytes.clone();
        bad[3] = b'F';
        assert!(matches!(
            AttentionWeights::from_bytes(&bad),
            Err(FormatError::BadMagic { .. })
        ));
        assert!(matches!(
            AttentionWeights::from_bytes(&bytes[..20]),
            Err(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn heatmap_header_and_scaling() {
        let pgm = heatmap_pgm(&[0.25, 0.5, 0.0, 0.25], 2, 2, 2).unwrap();
        let header = b"P5\n4 4\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let px = &pgm[header.len()..];
        assert_eq!(px.len(), 16);
        assert_eq!(px[0], 128);
        assert_eq!(px[2], 255);
        assert_eq!(px[8], 0);
        assert!(heatmap_pgm(&[1.0], 2, 2, 1).is_err());
    }
}
