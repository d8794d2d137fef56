use ndarray::{Array2, Axis, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use super::{Ctx, Layer, Module, Param, Rng};
use crate::error::{Error, Result};

pub(crate) fn expect_cols(x: &Array2<f64>, cols: usize, layer: &str) -> Result<()> {
    if x.ncols() != cols {
        return Err(Error::Contract(format!(
            "{layer}: expected {cols} input features, got {}",
            x.ncols()
        )));
    }
    Ok(())
}

/// `y = x·W + b` with `W` stored as in×out.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Array2<f64>>,
}

impl Linear {
    /// Uniform(±1/√in) initialization for weight and bias.
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || dist.sample(rng));
        let bias = Array2::from_shape_simple_fn((1, outputs), || dist.sample(rng));
        Self {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Some(Param::new(format!("{name}.bias"), bias)),
            input: None,
        }
    }

    pub fn without_bias(name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let mut layer = Self::new(name, inputs, outputs, rng);
        layer.bias = None;
        layer
    }

    pub fn zeros(name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), Array2::zeros((inputs, outputs))),
            bias: Some(Param::new(format!("{name}.bias"), Array2::zeros((1, outputs)))),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.ncols()
    }

    /// Forward without caching, for inference.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        expect_cols(x, self.inputs(), &self.weight.name)?;
        let mut y = x.dot(&self.weight.value);
        if let Some(b) = &self.bias {
            y += &b.value;
        }
        Ok(y)
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Array2<f64>, _ctx: &mut Ctx) -> Result<Array2<f64>> {
        let y = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let x = self.input.as_ref().expect("Linear::backward before forward");
        self.weight.grad += &x.t().dot(grad);
        if let Some(b) = &mut self.bias {
            b.grad += &grad.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        grad.dot(&self.weight.value.t())
    }
}

/// Normalizes each row over its features, then applies gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
    cache: Option<(Array2<f64>, Vec<f64>)>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Array2::ones((1, dim))),
            beta: Param::new(format!("{name}.beta"), Array2::zeros((1, dim))),
            eps: 1e-5,
            cache: None,
        }
    }

    fn normalize(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
        let dim = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / dim;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim;
            let inv = 1.0 / (var + self.eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        (xhat, inv_std)
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        expect_cols(x, self.gamma.value.ncols(), &self.gamma.name)?;
        let (xhat, _) = self.normalize(x);
        Ok(xhat * &self.gamma.value + &self.beta.value)
    }
}

impl Module for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

impl Layer for LayerNorm {
    fn forward(&mut self, x: &Array2<f64>, _ctx: &mut Ctx) -> Result<Array2<f64>> {
        expect_cols(x, self.gamma.value.ncols(), &self.gamma.name)?;
        let (xhat, inv_std) = self.normalize(x);
        let y = &xhat * &self.gamma.value + &self.beta.value;
        self.cache = Some((xhat, inv_std));
        Ok(y)
    }

    fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let (xhat, inv_std) = self.cache.as_ref().expect("LayerNorm::backward before forward");
        self.gamma.grad += &(grad * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.grad += &grad.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = grad * &self.gamma.value;
        let dim = grad.ncols() as f64;
        let mut dx = Array2::zeros(grad.raw_dim());
        for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
            let g = dxhat.row(r);
            let xh = xhat.row(r);
            let sum_g = g.sum();
            let sum_gx = g.dot(&xh);
            Zip::from(&mut out).and(&g).and(&xh).for_each(|o, &gi, &xi| {
                *o = inv_std[r] / dim * (dim * gi - sum_g - xi * sum_gx);
            });
        }
        dx
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    input: Option<Array2<f64>>,
}

impl Module for Relu {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Array2<f64>, _ctx: &mut Ctx) -> Result<Array2<f64>> {
        self.input = Some(x.clone());
        Ok(x.mapv(|v| v.max(0.0)))
    }

    fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let x = self.input.as_ref().expect("Relu::backward before forward");
        Zip::from(grad).and(x).map_collect(|&g, &v| if v > 0.0 { g } else { 0.0 })
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU with the tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x.powi(3))).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x.powi(3))).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Clone, Debug, Default)]
pub struct Gelu {
    input: Option<Array2<f64>>,
}

impl Module for Gelu {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Layer for Gelu {
    fn forward(&mut self, x: &Array2<f64>, _ctx: &mut Ctx) -> Result<Array2<f64>> {
        self.input = Some(x.clone());
        Ok(x.mapv(gelu))
    }

    fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let x = self.input.as_ref().expect("Gelu::backward before forward");
        Zip::from(grad).and(x).map_collect(|&g, &v| g * gelu_grad(v))
    }
}

/// Inverted dropout; the identity outside training or when `p == 0`.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub p: f64,
    mask: Option<Array2<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        Self { p, mask: None }
    }
}

impl Module for Dropout {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Array2<f64>, ctx: &mut Ctx) -> Result<Array2<f64>> {
        if !ctx.train || self.p == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let keep = 1.0 - self.p;
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
            if ctx.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let y = x * &mask;
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        match &self.mask {
            Some(mask) => grad * mask,
            None => grad.clone(),
        }
    }
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

/// Gradient of row-wise softmax given its output `y`.
pub(crate) fn softmax_rows_backward(y: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let mut dx = grad * y;
    for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
        let s = row.sum();
        Zip::from(&mut row).and(&y.row(r)).for_each(|d, &yi| *d -= yi * s);
    }
    dx
}

#[derive(Clone, Debug, Default)]
pub struct Softmax {
    output: Option<Array2<f64>>,
}

impl Module for Softmax {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Layer for Softmax {
    fn forward(&mut self, x: &Array2<f64>, _ctx: &mut Ctx) -> Result<Array2<f64>> {
        let y = softmax_rows(x);
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let y = self.output.as_ref().expect("Softmax::backward before forward");
        softmax_rows_backward(y, grad)
    }
}

/// Lookup table; rows are selected by integer id.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: Param,
    ids: Option<Vec<usize>>,
}

impl Embedding {
    pub fn new(name: &str, count: usize, dim: usize, rng: &mut Rng) -> Self {
        let dist = Uniform::new_inclusive(-0.1, 0.1).expect("finite bound");
        let table = Array2::from_shape_simple_fn((count, dim), || dist.sample(rng));
        Self {
            table: Param::new(format!("{name}.table"), table),
            ids: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.table.value.ncols()
    }

    pub fn lookup(&mut self, ids: &[usize]) -> Result<Array2<f64>> {
        let count = self.table.value.nrows();
        if let Some(&bad) = ids.iter().find(|&&i| i >= count) {
            return Err(Error::Contract(format!("{}: id {bad} out of range {count}", self.table.name)));
        }
        let out = self.table.value.select(Axis(0), ids);
        self.ids = Some(ids.to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Array2<f64>) {
        let ids = self.ids.as_ref().expect("Embedding::backward before lookup");
        for (row, &id) in ids.iter().enumerate() {
            let mut target = self.table.grad.row_mut(id);
            target += &grad.row(row);
        }
    }
}

impl Module for Embedding {
    fn params(&self) -> Vec<&Param> {
        vec![&self.table]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.table]
    }
}
