//! Learned per-series embeddings trained with a coboundary-consistency loss:
//!
//! `λ_c Σ w_ij ‖R E_i − R E_j‖² + λ_r Σ (dec(E_i) − x_i)² − β Var_n(R E_n)`
//!
//! with a shared linear restriction `R`, a linear decoder onto the
//! cross-series z-scored series mean `x_i`, and full-batch gradient descent.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{SheafCoordinates, SHEAF_DIM};
use crate::corpus::{context_stats, SeriesCorpus};
use crate::error::{Error, Result};
use crate::manifold::WeightGraph;
use crate::nn::{Ctx, Layer, Linear, Module, Param};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralSheafConfig {
    pub embed_dim: usize,
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub beta: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Neighbours per node in the coboundary graph.
    pub knn_k: usize,
}

impl Default for NeuralSheafConfig {
    fn default() -> Self {
        Self {
            embed_dim: SHEAF_DIM,
            lambda_c: 1.0,
            lambda_r: 1.0,
            beta: 0.1,
            epochs: 100,
            learning_rate: 1e-3,
            knn_k: 10,
        }
    }
}

impl NeuralSheafConfig {
    fn validate(&self) -> Result<()> {
        let coeffs = [self.lambda_c, self.lambda_r, self.beta, self.learning_rate];
        if coeffs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Config("neural sheaf coefficients must be finite and non-negative".into()));
        }
        if self.embed_dim != SHEAF_DIM {
            return Err(Error::Config(format!("embedding width must be {SHEAF_DIM}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct NeuralSheafResult {
    pub coordinates: SheafCoordinates,
    /// Loss before each epoch's update, then the final loss.
    pub curve: Vec<f64>,
    /// Mean edge disagreement `‖R E_i − R E_j‖` at the same points.
    pub disagreement: Vec<f64>,
}

struct Model {
    embeddings: Param,
    restriction: Linear,
    decoder: Linear,
}

impl Module for Model {
    fn params(&self) -> Vec<&Param> {
        let mut p = vec![&self.embeddings];
        p.extend(self.restriction.params());
        p.extend(self.decoder.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = vec![&mut self.embeddings];
        p.extend(self.restriction.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }
}

impl Model {
    /// Loss, mean edge disagreement, and (when `grad`) accumulated gradients.
    fn evaluate(
        &mut self,
        graph: &WeightGraph,
        target: &Array1<f64>,
        cfg: &NeuralSheafConfig,
        grad: bool,
    ) -> Result<(f64, f64)> {
        let mut ctx = Ctx::eval();
        let e = self.embeddings.value.clone();
        let proj = self.restriction.forward(&e, &mut ctx)?;
        let decoded = self.decoder.forward(&e, &mut ctx)?;
        let n = e.nrows() as f64;

        let mut loss = 0.0;
        let mut dproj = Array2::zeros(proj.raw_dim());
        let mut gap = 0.0;
        for &(i, j, w) in &graph.edges {
            let diff = &proj.row(i) - &proj.row(j);
            let sq = diff.dot(&diff);
            gap += sq.sqrt();
            loss += cfg.lambda_c * w * sq;
            let g = &diff * (2.0 * cfg.lambda_c * w);
            let mut ri = dproj.row_mut(i);
            ri += &g;
            let mut rj = dproj.row_mut(j);
            rj -= &g;
        }
        let gap = if graph.edges.is_empty() { 0.0 } else { gap / graph.edges.len() as f64 };

        let residual = &decoded.column(0) - target;
        loss += cfg.lambda_r * residual.dot(&residual);
        let ddec = (&residual * (2.0 * cfg.lambda_r)).insert_axis(Axis(1));

        let centered = &proj - &proj.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        let variance = centered.iter().map(|x| x * x).sum::<f64>() / n;
        loss -= cfg.beta * variance;
        dproj = dproj - centered * (2.0 * cfg.beta / n);

        if !loss.is_finite() {
            return Err(Error::Divergence(format!("neural sheaf loss became {loss}")));
        }
        if grad {
            let de = self.restriction.backward(&dproj) + self.decoder.backward(&ddec);
            self.embeddings.grad += &de;
        }
        Ok((loss, gap))
    }
}

/// Trains embeddings warm-started from `warm` with `R = I` and a zero decoder.
pub fn neural_sheaf_train(
    corpus: &SeriesCorpus,
    graph: &WeightGraph,
    warm: &SheafCoordinates,
    config: &NeuralSheafConfig,
) -> Result<NeuralSheafResult> {
    config.validate()?;
    if graph.n != corpus.n() || warm.n() != corpus.n() {
        return Err(Error::Contract("graph, corpus and warm start disagree on N".into()));
    }
    let target = Array1::from_iter(context_stats(corpus).iter().map(|s| s.mean));
    let mut restriction = Linear::zeros("sheaf.restriction", SHEAF_DIM, SHEAF_DIM);
    restriction.weight.value = Array2::eye(SHEAF_DIM);
    restriction.bias = None;
    let mut model = Model {
        embeddings: Param::new("sheaf.embeddings", warm.coords.clone()),
        restriction,
        decoder: Linear::zeros("sheaf.decoder", SHEAF_DIM, 1),
    };

    let mut curve = Vec::with_capacity(config.epochs + 1);
    let mut disagreement = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        model.zero_grad();
        let (loss, gap) = model.evaluate(graph, &target, config, true)?;
        log::debug!("neural sheaf epoch {epoch}: loss {loss:.6e}");
        curve.push(loss);
        disagreement.push(gap);
        for p in model.params_mut() {
            p.value.scaled_add(-config.learning_rate, &p.grad);
        }
    }
    let (loss, gap) = model.evaluate(graph, &target, config, false)?;
    curve.push(loss);
    disagreement.push(gap);

    Ok(NeuralSheafResult {
        coordinates: SheafCoordinates {
            coords: model.embeddings.value,
            blocks: warm.blocks.clone(),
            group_map: warm.group_map.clone(),
        },
        curve,
        disagreement,
    })
}
