//! Forward-only reference of the 2D/3D token fusion: a linear alignment of
//! geometry tokens followed by multi-head cross-attention with the visual
//! tokens as queries.

use nalgebra::DMatrix;

use crate::config::FusionConfig;
use crate::error::{Error, Result};

/// `L × C` token matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix(DMatrix<f64>);

impl TokenMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::ShapeMismatch("token matrix must be non-empty".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token matrix"));
        }
        Ok(Self(m))
    }

    pub fn from_row_slice(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix from {} values",
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, values))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Projects geometry tokens `L_g × C_g` to `L_g × C_v` through `projection`
/// (`C_g × C_v`).
pub fn align(geo: &TokenMatrix, projection: &DMatrix<f64>) -> Result<TokenMatrix> {
    if geo.cols() != projection.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "geometry tokens have {} columns, projection expects {}",
            geo.cols(),
            projection.nrows()
        )));
    }
    TokenMatrix::new(&geo.0 * projection)
}

/// Per-head projections plus output projection, all `d × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub num_heads: usize,
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub w_o: DMatrix<f64>,
}

impl AttentionWeights {
    pub fn new(
        num_heads: usize,
        w_q: DMatrix<f64>,
        w_k: DMatrix<f64>,
        w_v: DMatrix<f64>,
        w_o: DMatrix<f64>,
    ) -> Result<Self> {
        let w = Self {
            num_heads,
            w_q,
            w_k,
            w_v,
            w_o,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn model_dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim() / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model_dim();
        if self.num_heads == 0 || d == 0 || d % self.num_heads != 0 {
            return Err(Error::ShapeMismatch(format!(
                "model dimension {d} is not divisible into {} heads",
                self.num_heads
            )));
        }
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            if m.shape() != (d, d) {
                return Err(Error::ShapeMismatch(format!(
                    "attention projection is {:?}, expected ({d}, {d})",
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("attention weights"));
            }
        }
        Ok(())
    }
}

/// Intermediate values of one attention pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// Per head, `L_q × L_k` row-stochastic weights.
    pub weights: Vec<DMatrix<f64>>,
    /// Per head, projected values `L_k × d_h`.
    pub values: Vec<DMatrix<f64>>,
    /// Per head, `L_q × d_h` attended values.
    pub head_outputs: Vec<DMatrix<f64>>,
    pub output: TokenMatrix,
}

/// Max-subtracted softmax of one row of logits, in place.
fn softmax_row(row: &mut [f64]) -> Result<()> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("attention logits"));
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    if !(sum.is_finite() && sum > 0.0) {
        return Err(Error::NonFinite("softmax normalizer"));
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

fn layer_norm_rows(m: &mut DMatrix<f64>) {
    let n = m.ncols() as f64;
    for mut row in m.row_iter_mut() {
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
}

/// Multi-head scaled dot-product cross-attention, returning every stage.
pub fn cross_attend_trace(
    queries: &TokenMatrix,
    keys_values: &TokenMatrix,
    w: &AttentionWeights,
    opts: &FusionConfig,
) -> Result<AttentionTrace> {
    w.validate()?;
    let d = w.model_dim();
    if queries.cols() != d || keys_values.cols() != d {
        return Err(Error::ShapeMismatch(format!(
            "queries have {} columns and keys {}, model dimension is {d}",
            queries.cols(),
            keys_values.cols()
        )));
    }
    let q = &queries.0 * &w.w_q;
    let k = &keys_values.0 * &w.w_k;
    let v = &keys_values.0 * &w.w_v;
    let dh = w.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut concat = DMatrix::zeros(queries.rows(), d);
    let mut trace_weights = Vec::with_capacity(w.num_heads);
    let mut trace_values = Vec::with_capacity(w.num_heads);
    let mut head_outputs = Vec::with_capacity(w.num_heads);
    for h in 0..w.num_heads {
        let qh = q.columns(h * dh, dh);
        let kh = k.columns(h * dh, dh);
        let vh = v.columns(h * dh, dh).into_owned();
        let mut scores = (qh * kh.transpose()) * scale;
        for i in 0..scores.nrows() {
            let mut row: Vec<f64> = scores.row(i).iter().copied().collect();
            softmax_row(&mut row)?;
            for (j, p) in row.into_iter().enumerate() {
                scores[(i, j)] = p;
            }
        }
        let out = &scores * &vh;
        concat.columns_mut(h * dh, dh).copy_from(&out);
        trace_weights.push(scores);
        trace_values.push(vh);
        head_outputs.push(out);
    }
    let mut output = concat * &w.w_o;
    if opts.residual {
        output += &queries.0;
    }
    if opts.layer_norm {
        layer_norm_rows(&mut output);
    }
    Ok(AttentionTrace {
        weights: trace_weights,
        values: trace_values,
        head_outputs,
        output: TokenMatrix::new(output)?,
    })
}

/// Fused tokens: one output row per query row.
pub fn cross_attend(
    queries: &TokenMatrix,
    keys_values: &TokenMatrix,
    w: &AttentionWeights,
) -> Result<TokenMatrix> {
    cross_attend_trace(queries, keys_values, w, &FusionConfig::default()).map(|t| t.output)
}
