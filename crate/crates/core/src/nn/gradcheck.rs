//! Central finite-difference gradient checks.

use ndarray::Array2;
use rand_distr::{Distribution, Uniform};

use super::{rng_from_seed, Ctx, Layer, Module};

pub const STEP: f64 = 1e-4;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
/// Smaller step for whole models, where a ReLU pre-activation within
/// `STEP` of zero would otherwise bias the central difference.
pub const END_TO_END_STEP: f64 = 1e-6;
/// Denominator floor so that gradients near zero are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_relative_error: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradReport {
    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_relative_error || self.worst.is_empty() {
            self.max_relative_error = self.max_relative_error.max(err);
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", label());
        }
    }

    pub fn merge(mut self, other: GradReport) -> Self {
        if other.max_relative_error > self.max_relative_error {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self
    }
}

/// Checks input and parameter gradients of `layer` for the scalar
/// `Σ r ⊙ layer(x)` with a random upstream `r`. Every forward gets a freshly
/// seeded training context, so dropout masks repeat.
pub fn check_layer(layer: &mut dyn Layer, x: &Array2<f64>, seed: u64) -> GradReport {
    let ctx = || Ctx::train(rng_from_seed(seed ^ 0x5eed));
    let y = layer.forward(x, &mut ctx()).expect("forward");
    let mut rng = rng_from_seed(seed);
    let dist = Uniform::new(-1.0, 1.0).unwrap();
    let upstream = Array2::from_shape_simple_fn(y.raw_dim(), || dist.sample(&mut rng));

    layer.zero_grad();
    layer.forward(x, &mut ctx()).expect("forward");
    let dx = layer.backward(&upstream);
    let analytic: Vec<Array2<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let loss = |layer: &mut dyn Layer, input: &Array2<f64>| -> f64 {
        (&layer.forward(input, &mut ctx()).expect("forward") * &upstream).sum()
    };

    let mut report = GradReport::default();
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let orig = probe.as_slice().unwrap()[idx];
        probe.as_slice_mut().unwrap()[idx] = orig + STEP;
        let plus = loss(layer, &probe);
        probe.as_slice_mut().unwrap()[idx] = orig - STEP;
        let minus = loss(layer, &probe);
        probe.as_slice_mut().unwrap()[idx] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        report.record(|| format!("input[{idx}]"), dx.as_slice().unwrap()[idx], numeric);
    }
    for (p, grad) in analytic.iter().enumerate() {
        for idx in 0..grad.len() {
            let orig = perturb(layer, p, idx, None);
            perturb(layer, p, idx, Some(orig + STEP));
            let plus = loss(layer, x);
            perturb(layer, p, idx, Some(orig - STEP));
            let minus = loss(layer, x);
            perturb(layer, p, idx, Some(orig));
            let numeric = (plus - minus) / (2.0 * STEP);
            let name = layer.params()[p].name.clone();
            report.record(|| format!("{name}[{idx}]"), grad.as_slice().unwrap()[idx], numeric);
        }
    }
    report
}

/// Reads (and optionally overwrites) entry `idx` of parameter `p`.
fn perturb<M: Module + ?Sized>(model: &mut M, p: usize, idx: usize, value: Option<f64>) -> f64 {
    let mut params = model.params_mut();
    let slot = &mut params[p].value.as_slice_mut().expect("contiguous parameter")[idx];
    let old = *slot;
    if let Some(v) = value {
        *slot = v;
    }
    old
}

/// Checks parameter gradients of an arbitrary scalar `loss(model)` against the
/// gradients already accumulated in `model`. `stride` > 1 samples every
/// stride-th entry of each parameter; `step` is the central-difference step.
pub fn check_params<M: Module + ?Sized>(
    model: &mut M,
    mut loss: impl FnMut(&mut M) -> f64,
    stride: usize,
    step: f64,
) -> GradReport {
    let analytic: Vec<(String, Array2<f64>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();
    let mut report = GradReport::default();
    for (p, (name, grad)) in analytic.iter().enumerate() {
        for idx in (0..grad.len()).step_by(stride.max(1)) {
            let orig = perturb(model, p, idx, None);
            perturb(model, p, idx, Some(orig + step));
            let plus = loss(model);
            perturb(model, p, idx, Some(orig - step));
            let minus = loss(model);
            perturb(model, p, idx, Some(orig));
            let numeric = (plus - minus) / (2.0 * step);
            report.record(|| format!("{name}[{idx}]"), grad.as_slice().unwrap()[idx], numeric);
        }
    }
    report
}
