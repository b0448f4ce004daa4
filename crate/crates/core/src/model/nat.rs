//! Position-wise non-autoregressive decoder and length predictor.
//!
//! Decoder input at target position `t` is built by uniform copy: with a
//! source of length `m` and target length `T`, position `t` reads source
//! position `j = floor(t * m / T)`. The input sums the embedding of
//! `src[j]`, separate embeddings of its neighbours `src[j-1]` and
//! `src[j+1]` (the `<pad>` row marks a sentence boundary) and a learned
//! positional embedding. A residual tanh MLP and a softmax projection give
//! an independent distribution for every position.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, TokenSequence, PAD_ID};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::probmodel::ProbTable;

/// Half-width of the uniform weight initialization.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Total vocabulary size, reserved ids included.
    pub vocab: usize,
    pub d_model: usize,
    pub hidden: usize,
    /// Longest target the positional table covers.
    pub max_len: usize,
    /// Largest absolute source/target length difference the length
    /// predictor can emit.
    pub max_len_diff: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 || self.d_model == 0 || self.hidden == 0 || self.max_len == 0 {
            return Err(Error::Config(format!(
                "degenerate model dimensions {self:?}"
            )));
        }
        Ok(())
    }

    pub fn length_classes(&self) -> usize {
        2 * self.max_len_diff + 1
    }
}

/// Uniform-copy source index for target position `t`.
pub fn copy_index(t: usize, src_len: usize, tgt_len: usize) -> usize {
    t * src_len / tgt_len
}

fn uniform_init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Parameters of the decoder. Also used as the gradient accumulator of the
/// same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NatModel {
    dims: ModelDims,
    pub src_embed: Matrix,
    pub left_embed: Matrix,
    pub right_embed: Matrix,
    pub pos_embed: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    /// (center, left, right) source ids feeding each position.
    inputs: Vec<[TokenId; 3]>,
    x: Matrix,
    h: Matrix,
    z: Matrix,
    table: ProbTable,
}

impl Forward {
    pub fn table(&self) -> &ProbTable {
        &self.table
    }

    pub fn into_table(self) -> ProbTable {
        self.table
    }
}

impl NatModel {
    pub const PARAM_NAMES: [&'static str; 10] = [
        "src_embed",
        "left_embed",
        "right_embed",
        "pos_embed",
        "w1",
        "b1",
        "w2",
        "b2",
        "w_out",
        "b_out",
    ];

    pub fn zeros(dims: ModelDims) -> Self {
        let ModelDims {
            vocab: v,
            d_model: d,
            hidden: h,
            max_len: p,
            ..
        } = dims;
        NatModel {
            dims,
            src_embed: Matrix::zeros(v, d),
            left_embed: Matrix::zeros(v, d),
            right_embed: Matrix::zeros(v, d),
            pos_embed: Matrix::zeros(p, d),
            w1: Matrix::zeros(d, h),
            b1: Matrix::zeros(1, h),
            w2: Matrix::zeros(h, d),
            b2: Matrix::zeros(1, d),
            w_out: Matrix::zeros(d, v),
            b_out: Matrix::zeros(1, v),
        }
    }

    /// Every parameter drawn uniformly from `[-INIT_SCALE, INIT_SCALE]`,
    /// in [`PARAM_NAMES`](Self::PARAM_NAMES) order.
    pub fn init<R: Rng>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let mut model = Self::zeros(dims);
        for (_, m) in model.params_mut() {
            *m = uniform_init(m.rows(), m.cols(), rng);
        }
        Ok(model)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> [(&'static str, &Matrix); 10] {
        let n = Self::PARAM_NAMES;
        [
            (n[0], &self.src_embed),
            (n[1], &self.left_embed),
            (n[2], &self.right_embed),
            (n[3], &self.pos_embed),
            (n[4], &self.w1),
            (n[5], &self.b1),
            (n[6], &self.w2),
            (n[7], &self.b2),
            (n[8], &self.w_out),
            (n[9], &self.b_out),
        ]
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Matrix); 10] {
        let n = Self::PARAM_NAMES;
        [
            (n[0], &mut self.src_embed),
            (n[1], &mut self.left_embed),
            (n[2], &mut self.right_embed),
            (n[3], &mut self.pos_embed),
            (n[4], &mut self.w1),
            (n[5], &mut self.b1),
            (n[6], &mut self.w2),
            (n[7], &mut self.b2),
            (n[8], &mut self.w_out),
            (n[9], &mut self.b_out),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    fn check_source(&self, source: &TokenSequence) -> Result<()> {
        if source.is_empty() {
            return Err(Error::arg("empty source sentence"));
        }
        if let Some(bad) = source.iter().find(|&w| w as usize >= self.dims.vocab) {
            return Err(Error::arg(format!("source token {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Output distributions for a target of length `len`.
    pub fn forward(&self, source: &TokenSequence, len: usize) -> Result<ProbTable> {
        Ok(self.forward_cached(source, len)?.table)
    }

    pub fn forward_cached(&self, source: &TokenSequence, len: usize) -> Result<Forward> {
        self.check_source(source)?;
        if len == 0 {
            return Err(Error::arg("target length must be at least 1"));
        }
        if len > self.dims.max_len {
            return Err(Error::Capacity {
                requested: len,
                max: self.dims.max_len,
            });
        }
        let ModelDims {
            vocab: v,
            d_model: d,
            hidden: hd,
            ..
        } = self.dims;
        let src = source.ids();
        let m = src.len();

        let mut inputs = Vec::with_capacity(len);
        let mut x = Matrix::zeros(len, d);
        let mut h = Matrix::zeros(len, hd);
        let mut z = Matrix::zeros(len, d);
        let mut probs = Matrix::zeros(len, v);

        for t in 0..len {
            let j = copy_index(t, m, len);
            let center = src[j];
            let left = if j > 0 { src[j - 1] } else { PAD_ID };
            let right = if j + 1 < m { src[j + 1] } else { PAD_ID };
            inputs.push([center, left, right]);

            let xt = x.row_mut(t);
            let rows = [
                self.src_embed.row(center as usize),
                self.left_embed.row(left as usize),
                self.right_embed.row(right as usize),
                self.pos_embed.row(t),
            ];
            for k in 0..d {
                xt[k] = rows[0][k] + rows[1][k] + rows[2][k] + rows[3][k];
            }

            let ht = h.row_mut(t);
            ht.copy_from_slice(self.b1.row(0));
            for (k, &xk) in x.row(t).iter().enumerate() {
                for (hj, &w) in ht.iter_mut().zip(self.w1.row(k)) {
                    *hj += xk * w;
                }
            }
            ht.iter_mut().for_each(|a| *a = a.tanh());

            let zt = z.row_mut(t);
            for ((zk, &xk), &bk) in zt.iter_mut().zip(x.row(t)).zip(self.b2.row(0)) {
                *zk = xk + bk;
            }
            for (i, &hi) in h.row(t).iter().enumerate() {
                for (zk, &w) in zt.iter_mut().zip(self.w2.row(i)) {
                    *zk += hi * w;
                }
            }

            let logits = probs.row_mut(t);
            logits.copy_from_slice(self.b_out.row(0));
            for (k, &zk) in z.row(t).iter().enumerate() {
                for (l, &w) in logits.iter_mut().zip(self.w_out.row(k)) {
                    *l += zk * w;
                }
            }
            softmax_in_place(logits);
        }

        Ok(Forward {
            inputs,
            x,
            h,
            z,
            table: ProbTable::new(probs)?,
        })
    }

    /// Accumulates into `grads` the parameter gradient given
    /// `d_probs = dL / dp`.
    pub fn backward(&self, fwd: &Forward, d_probs: &Matrix, grads: &mut NatModel) {
        let ModelDims {
            d_model: d,
            hidden: hd,
            ..
        } = self.dims;
        let len = fwd.table.len();
        debug_assert_eq!((d_probs.rows(), d_probs.cols()), (len, self.dims.vocab));

        let mut dlogits = vec![0.0; self.dims.vocab];
        let mut dz = vec![0.0; d];
        let mut dh = vec![0.0; hd];
        let mut dx = vec![0.0; d];

        for t in 0..len {
            // softmax backward: dl_w = p_w * (g_w - sum_u p_u g_u)
            let p = fwd.table.row(t);
            let g = d_probs.row(t);
            let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            for ((dl, &pw), &gw) in dlogits.iter_mut().zip(p).zip(g) {
                *dl = pw * (gw - dot);
            }

            let zt = fwd.z.row(t);
            for (k, &zk) in zt.iter().enumerate() {
                let row = grads.w_out.row_mut(k);
                for (gw, &dl) in row.iter_mut().zip(&dlogits) {
                    *gw += zk * dl;
                }
                dz[k] = self
                    .w_out
                    .row(k)
                    .iter()
                    .zip(&dlogits)
                    .map(|(w, dl)| w * dl)
                    .sum();
            }
            for (gb, &dl) in grads.b_out.row_mut(0).iter_mut().zip(&dlogits) {
                *gb += dl;
            }

            // z = x + h W2 + b2
            let ht = fwd.h.row(t);
            for (i, &hi) in ht.iter().enumerate() {
                let row = grads.w2.row_mut(i);
                for (gw, &dzk) in row.iter_mut().zip(&dz) {
                    *gw += hi * dzk;
                }
                let back: f64 = self.w2.row(i).iter().zip(&dz).map(|(w, g)| w * g).sum();
                dh[i] = back * (1.0 - hi * hi);
            }
            for (gb, &dzk) in grads.b2.row_mut(0).iter_mut().zip(&dz) {
                *gb += dzk;
            }

            // h = tanh(x W1 + b1)
            dx.copy_from_slice(&dz);
            let xt = fwd.x.row(t);
            for (k, &xk) in xt.iter().enumerate() {
                let row = grads.w1.row_mut(k);
                for (gw, &dhi) in row.iter_mut().zip(&dh) {
                    *gw += xk * dhi;
                }
                dx[k] += self
                    .w1
                    .row(k)
                    .iter()
                    .zip(&dh)
                    .map(|(w, g)| w * g)
                    .sum::<f64>();
            }
            for (gb, &dhi) in grads.b1.row_mut(0).iter_mut().zip(&dh) {
                *gb += dhi;
            }

            let [center, left, right] = fwd.inputs[t];
            for (dst, src_row) in [
                (&mut grads.src_embed, center as usize),
                (&mut grads.left_embed, left as usize),
                (&mut grads.right_embed, right as usize),
                (&mut grads.pos_embed, t),
            ] {
                for (a, &b) in dst.row_mut(src_row).iter_mut().zip(&dx) {
                    *a += b;
                }
            }
        }
    }

    /// Sum of source embeddings, the input of the length predictor.
    pub fn encode_summary(&self, source: &TokenSequence) -> Vec<f64> {
        let mut sum = vec![0.0; self.dims.d_model];
        for w in source.iter() {
            for (s, &e) in sum.iter_mut().zip(self.src_embed.row(w as usize)) {
                *s += e;
            }
        }
        sum
    }
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    xs.iter_mut().for_each(|x| *x /= sum);
}

/// Softmax classifier over length differences `-max_diff ..= max_diff`,
/// applied to the summed source embeddings. It reads the decoder's
/// embeddings but does not train them.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthPredictor {
    max_diff: usize,
    pub weight: Matrix,
    pub bias: Matrix,
}

impl LengthPredictor {
    pub const PARAM_NAMES: [&'static str; 2] = ["len_w", "len_b"];

    pub fn zeros(dims: &ModelDims) -> Self {
        let classes = dims.length_classes();
        LengthPredictor {
            max_diff: dims.max_len_diff,
            weight: Matrix::zeros(dims.d_model, classes),
            bias: Matrix::zeros(1, classes),
        }
    }

    pub fn init<R: Rng>(dims: &ModelDims, rng: &mut R) -> Self {
        let mut lp = Self::zeros(dims);
        for (_, m) in lp.params_mut() {
            *m = uniform_init(m.rows(), m.cols(), rng);
        }
        lp
    }

    pub fn max_diff(&self) -> usize {
        self.max_diff
    }

    pub fn params(&self) -> [(&'static str, &Matrix); 2] {
        [
            (Self::PARAM_NAMES[0], &self.weight),
            (Self::PARAM_NAMES[1], &self.bias),
        ]
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Matrix); 2] {
        [
            (Self::PARAM_NAMES[0], &mut self.weight),
            (Self::PARAM_NAMES[1], &mut self.bias),
        ]
    }

    /// Class index for a length difference, clamped to the boundary classes.
    pub fn class_of(&self, diff: i64) -> usize {
        let m = self.max_diff as i64;
        (diff.clamp(-m, m) + m) as usize
    }

    pub fn diff_of(&self, class: usize) -> i64 {
        class as i64 - self.max_diff as i64
    }

    pub fn distribution(&self, summary: &[f64]) -> Vec<f64> {
        let mut out = self.bias.row(0).to_vec();
        for (k, &s) in summary.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.weight.row(k)) {
                *o += s * w;
            }
        }
        softmax_in_place(&mut out);
        out
    }

    /// Most likely length difference, lowest class on ties.
    pub fn predict(&self, model: &NatModel, source: &TokenSequence) -> i64 {
        let dist = self.distribution(&model.encode_summary(source));
        let class = crate::probmodel::argmax_excluding(&dist, &[]) as usize;
        self.diff_of(class)
    }

    /// Cross-entropy of the true difference class; accumulates
    /// `scale * gradient` into `grads`.
    pub fn loss_and_grad(
        &self,
        summary: &[f64],
        diff: i64,
        scale: f64,
        grads: &mut LengthPredictor,
    ) -> f64 {
        let dist = self.distribution(summary);
        let class = self.class_of(diff);
        let loss = -dist[class].max(crate::loss::LOG_CLAMP).ln();
        for (k, &s) in summary.iter().enumerate() {
            for (c, g) in grads.weight.row_mut(k).iter_mut().enumerate() {
                let d = dist[c] - if c == class { 1.0 } else { 0.0 };
                *g += scale * s * d;
            }
        }
        for (c, g) in grads.bias.row_mut(0).iter_mut().enumerate() {
            *g += scale * (dist[c] - if c == class { 1.0 } else { 0.0 });
        }
        loss
    }
}
