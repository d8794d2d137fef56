use ndarray::{s, Array2};

use super::layers::{expect_cols, softmax_rows, softmax_rows_backward};
use super::{Ctx, Layer, Linear, Module, Param, Rng};
use crate::error::{Error, Result};

/// Multi-head scaled dot-product self-attention over stacked sequences of
/// length `seq_len` (input rows = batch · seq_len). No masking.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub head_dim: usize,
    pub seq_len: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    cache: Option<AttentionCache>,
}

#[derive(Clone, Debug)]
struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights per (sequence, head), in sequence-major order.
    weights: Vec<Array2<f64>>,
}

impl MultiHeadAttention {
    pub fn new(name: &str, heads: usize, head_dim: usize, seq_len: usize, rng: &mut Rng) -> Self {
        let d = heads * head_dim;
        Self {
            heads,
            head_dim,
            seq_len,
            wq: Linear::new(&format!("{name}.q"), d, d, rng),
            wk: Linear::new(&format!("{name}.k"), d, d, rng),
            wv: Linear::new(&format!("{name}.v"), d, d, rng),
            wo: Linear::new(&format!("{name}.o"), d, d, rng),
            cache: None,
        }
    }

    pub fn d_model(&self) -> usize {
        self.heads * self.head_dim
    }

    fn sequences(&self, rows: usize) -> Result<usize> {
        if self.seq_len == 0 || !rows.is_multiple_of(self.seq_len) {
            return Err(Error::Contract(format!(
                "attention: {rows} rows is not a whole number of length-{} sequences",
                self.seq_len
            )));
        }
        Ok(rows / self.seq_len)
    }
}

impl Module for MultiHeadAttention {
    fn params(&self) -> Vec<&Param> {
        [&self.wq, &self.wk, &self.wv, &self.wo]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
            .into_iter()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

impl Layer for MultiHeadAttention {
    fn forward(&mut self, x: &Array2<f64>, ctx: &mut Ctx) -> Result<Array2<f64>> {
        expect_cols(x, self.d_model(), "attention")?;
        let batch = self.sequences(x.nrows())?;
        let q = self.wq.forward(x, ctx)?;
        let k = self.wk.forward(x, ctx)?;
        let v = self.wv.forward(x, ctx)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let (l, hd) = (self.seq_len, self.head_dim);
        let mut mixed = Array2::zeros(x.raw_dim());
        let mut weights = Vec::with_capacity(batch * self.heads);
        for b in 0..batch {
            for h in 0..self.heads {
                let (rows, cols) = (b * l..(b + 1) * l, h * hd..(h + 1) * hd);
                let qs = q.slice(s![rows.clone(), cols.clone()]);
                let ks = k.slice(s![rows.clone(), cols.clone()]);
                let vs = v.slice(s![rows.clone(), cols.clone()]);
                let a = softmax_rows(&(qs.dot(&ks.t()) * scale));
                mixed.slice_mut(s![rows, cols]).assign(&a.dot(&vs));
                weights.push(a);
            }
        }
        let out = self.wo.forward(&mixed, ctx)?;
        self.cache = Some(AttentionCache { q, k, v, weights });
        Ok(out)
    }

    fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let dmixed = self.wo.backward(grad);
        let cache = self.cache.as_ref().expect("attention backward before forward");
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let (l, hd) = (self.seq_len, self.head_dim);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (idx, a) in cache.weights.iter().enumerate() {
            let (b, h) = (idx / self.heads, idx % self.heads);
            let (rows, cols) = (b * l..(b + 1) * l, h * hd..(h + 1) * hd);
            let go = dmixed.slice(s![rows.clone(), cols.clone()]);
            let qs = cache.q.slice(s![rows.clone(), cols.clone()]);
            let ks = cache.k.slice(s![rows.clone(), cols.clone()]);
            let vs = cache.v.slice(s![rows.clone(), cols.clone()]);
            let da = go.dot(&vs.t());
            dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&a.t().dot(&go));
            let dscores = softmax_rows_backward(a, &da) * scale;
            dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&dscores.dot(&ks));
            dk.slice_mut(s![rows, cols]).assign(&dscores.t().dot(&qs));
        }
        self.wq.backward(&dq) + self.wk.backward(&dk) + self.wv.backward(&dv)
    }
}
