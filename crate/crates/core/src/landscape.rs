//! Persistence-landscape vectorization into the fixed 125-dimensional
//! fingerprint.
//!
//! Layout: H0 λ1 and λ2 at dims 0–49, H1 λ1 and λ2 at dims 50–99, H2 λ1 at
//! dims 100–124, each layer sampled at 25 grid points on `[0, cap_value]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persistence::{bottleneck_distance, PersistenceDiagram};

pub const GRID_POINTS: usize = 25;
pub const FINGERPRINT_DIM: usize = 125;
pub const LAYOUT: &str = "125:h0(50)h1(50)h2(25)";

/// (homology dimension, landscape layer) for each 25-wide block, in order.
pub const BLOCKS: [(usize, usize); 5] = [(0, 1), (0, 2), (1, 1), (1, 2), (2, 1)];

/// ℓ-th largest tent value `max(0, min(t − b, d − t))` over `pairs`; zero
/// when there are fewer than ℓ pairs.
pub fn landscape_value(pairs: &[(f64, f64)], layer: usize, t: f64) -> f64 {
    assert!(layer >= 1, "landscape layers are 1-based");
    if pairs.len() < layer {
        return 0.0;
    }
    let mut tents: Vec<f64> = pairs
        .iter()
        .map(|&(b, d)| (t - b).min(d - t).max(0.0))
        .collect();
    tents.sort_by(|x, y| y.total_cmp(x));
    tents[layer - 1]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl Grid {
    pub fn new(t_max: f64) -> Self {
        Self {
            t_min: 0.0,
            t_max,
            points: GRID_POINTS,
        }
    }

    pub fn samples(&self) -> Vec<f64> {
        let steps = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| self.t_min + (self.t_max - self.t_min) * i as f64 / steps)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub layout: String,
    pub grid: Grid,
    /// Value substituted for infinite deaths before sampling.
    pub cap_value: f64,
    pub values: Vec<f64>,
}

impl Fingerprint {
    pub fn block(&self, index: usize) -> &[f64] {
        &self.values[index * GRID_POINTS..(index + 1) * GRID_POINTS]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layout != LAYOUT || self.values.len() != FINGERPRINT_DIM || self.grid.points != GRID_POINTS
        {
            return Err(Error::Contract(format!(
                "fingerprint layout {:?} with {} values does not match {LAYOUT}",
                self.layout,
                self.values.len()
            )));
        }
        Ok(())
    }
}

/// Finite (birth, death) list for one dimension with infinite deaths capped.
fn capped_pairs(diagram: &PersistenceDiagram, dim: usize, cap: f64) -> Vec<(f64, f64)> {
    diagram
        .pairs(dim)
        .iter()
        .map(|p| (p.birth, if p.death.is_finite() { p.death } else { cap }))
        .collect()
}

/// Default cap: the largest finite death in any dimension, or 1 when there is none.
pub fn default_cap(diagram: &PersistenceDiagram) -> f64 {
    diagram.max_finite_death().unwrap_or(1.0)
}

pub fn fingerprint(diagram: &PersistenceDiagram) -> Fingerprint {
    fingerprint_with_cap(diagram, default_cap(diagram))
}

/// Fingerprint on the grid `[0, cap]`, for comparing several diagrams on one grid.
pub fn fingerprint_with_cap(diagram: &PersistenceDiagram, cap: f64) -> Fingerprint {
    let grid = Grid::new(cap);
    let samples = grid.samples();
    let per_dim: Vec<Vec<(f64, f64)>> = (0..3).map(|d| capped_pairs(diagram, d, cap)).collect();
    let values = BLOCKS
        .iter()
        .flat_map(|&(dim, layer)| {
            let pairs = &per_dim[dim];
            samples.iter().map(move |&t| landscape_value(pairs, layer, t))
        })
        .collect();
    Fingerprint {
        layout: LAYOUT.to_string(),
        grid,
        cap_value: cap,
        values,
    }
}

/// Both sides of `‖h_a − h_b‖₂ ≤ C · max_k d_B(D_a, D_b)_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    /// Per-dimension bottleneck distances.
    pub bottleneck: [f64; 3],
    /// Per-dimension fingerprint differences (H0 and H1 blocks span 50 dims, H2 25).
    pub lhs_per_dim: [f64; 3],
    pub holds: bool,
}

pub const STABILITY_SLACK: f64 = 1e-9;

pub fn default_stability_constant() -> f64 {
    (FINGERPRINT_DIM as f64).sqrt()
}

/// Checks the stability bound for two diagrams on a shared grid whose cap is
/// the larger of the two default caps.
pub fn stability_check(a: &PersistenceDiagram, b: &PersistenceDiagram, constant: f64) -> Result<StabilityReport> {
    let cap = default_cap(a).max(default_cap(b));
    stability_from_parts(
        &fingerprint_with_cap(a, cap),
        &fingerprint_with_cap(b, cap),
        a,
        b,
        constant,
    )
}

pub fn stability_from_parts(
    fa: &Fingerprint,
    fb: &Fingerprint,
    a: &PersistenceDiagram,
    b: &PersistenceDiagram,
    constant: f64,
) -> Result<StabilityReport> {
    fa.validate()?;
    fb.validate()?;
    if fa.grid != fb.grid || fa.cap_value != fb.cap_value {
        return Err(Error::Contract(format!(
            "fingerprints use different grids ({:?} vs {:?})",
            fa.grid, fb.grid
        )));
    }
    let mut bottleneck = [0.0; 3];
    for (dim, slot) in bottleneck.iter_mut().enumerate() {
        *slot = bottleneck_distance(a, b, dim)?;
    }
    let diff: Vec<f64> = fa.values.iter().zip(&fb.values).map(|(x, y)| x - y).collect();
    let lhs = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let mut lhs_per_dim = [0.0; 3];
    for (block, &(dim, _)) in BLOCKS.iter().enumerate() {
        lhs_per_dim[dim] += diff[block * GRID_POINTS..(block + 1) * GRID_POINTS]
            .iter()
            .map(|d| d * d)
            .sum::<f64>();
    }
    lhs_per_dim.iter_mut().for_each(|v| *v = v.sqrt());
    let rhs = constant * bottleneck.iter().copied().fold(0.0, f64::max);
    Ok(StabilityReport {
        lhs,
        rhs,
        constant,
        bottleneck,
        lhs_per_dim,
        holds: lhs <= rhs + STABILITY_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persistence::PersistencePair;
    use proptest::prelude::*;

    fn diagram(dims: [&[(f64, f64)]; 3]) -> PersistenceDiagram {
        let mut d = PersistenceDiagram::default();
        for (k, pairs) in dims.iter().enumerate() {
            d.pairs[k] = pairs
                .iter()
                .map(|&(birth, death)| PersistencePair { birth, death })
                .collect();
        }
        d.canonicalize();
        d
    }

    #[test]
    fn landscape_examples() {
        assert_eq!(landscape_value(&[(0.0, 2.0)], 1, 1.0), 1.0);
        for t in [-1.0, 0.0, 0.7, 1.0, 3.0] {
            assert_eq!(landscape_value(&[(0.0, 2.0)], 2, t), 0.0);
        }
        assert_eq!(landscape_value(&[(0.0, 2.0), (1.0, 3.0)], 2, 1.5), 0.5);
    }

    #[test]
    fn empty_diagram_is_all_zero() {
        let f = fingerprint(&PersistenceDiagram::default());
        assert_eq!(f.cap_value, 1.0);
        assert_eq!(f.values, vec![0.0; FINGERPRINT_DIM]);
    }

    #[test]
    fn two_point_h0() {
        // two points at distance 0.5: H0 = {(0, 0.5), (0, ∞)}; cap = 0.5
        let d = diagram([&[(0.0, 0.5), (0.0, f64::INFINITY)], &[], &[]]);
        let f = fingerprint(&d);
        assert_eq!(f.cap_value, 0.5);
        // Both pairs become the tent of (0, 0.5) once the essential death is capped.
        for (i, t) in f.grid.samples().into_iter().enumerate() {
            let tent = t.min(0.5 - t).max(0.0);
            assert!((f.block(0)[i] - tent).abs() < 1e-15);
            assert!((f.block(1)[i] - tent).abs() < 1e-15);
        }
        assert!(f.values[50..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_mismatch_is_a_contract_error() {
        let d = diagram([&[(0.0, 0.5)], &[], &[]]);
        let fa = fingerprint_with_cap(&d, 0.5);
        let fb = fingerprint_with_cap(&d, 0.6);
        assert!(matches!(
            stability_from_parts(&fa, &fb, &d, &d, 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn shifted_pair_respects_bound() {
        let a = diagram([&[(0.0, f64::INFINITY)], &[(0.2, 0.9)], &[]]);
        let b = diagram([&[(0.0, f64::INFINITY)], &[(0.3, 1.0)], &[]]);
        let r = stability_check(&a, &b, default_stability_constant()).unwrap();
        assert!((r.bottleneck[1] - 0.1).abs() < 1e-12);
        assert!(r.holds, "{r:?}");
        assert!(r.lhs > 0.0);
    }

    fn arb_pairs(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.0f64..1.0, 0.001f64..1.0), 0..max)
            .prop_map(|v| v.into_iter().map(|(b, p)| (b, b + p)).collect())
    }

    proptest! {
        #[test]
        fn blocks_match_direct_evaluation(h0 in arb_pairs(6), h1 in arb_pairs(6), h2 in arb_pairs(3)) {
            let d = diagram([&h0, &h1, &h2]);
            let f = fingerprint(&d);
            let samples = f.grid.samples();
            for (block, &(dim, layer)) in BLOCKS.iter().enumerate() {
                let pairs: Vec<(f64, f64)> =
                    d.pairs(dim).iter().map(|p| (p.birth, p.death)).collect();
                for (i, &t) in samples.iter().enumerate() {
                    prop_assert_eq!(f.block(block)[i], landscape_value(&pairs, layer, t));
                }
            }
            for dim in 0..2 {
                let (l1, l2) = (f.block(2 * dim), f.block(2 * dim + 1));
                prop_assert!(l1.iter().zip(l2).all(|(a, b)| a >= b));
            }
            prop_assert!(f.values.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn first_layer_is_one_lipschitz(pairs in arb_pairs(8), t in 0.0f64..2.0, s in 0.0f64..2.0) {
            let a = landscape_value(&pairs, 1, t);
            let b = landscape_value(&pairs, 1, s);
            prop_assert!((a - b).abs() <= (t - s).abs() + 1e-15);
        }

        #[test]
        fn scale_covariance(h1 in arb_pairs(6), s in 0.1f64..5.0) {
            let d = diagram([&[(0.0, f64::INFINITY)], &h1, &[]]);
            let scaled_pairs: Vec<(f64, f64)> = h1.iter().map(|&(b, e)| (b * s, e * s)).collect();
            let ds = diagram([&[(0.0, f64::INFINITY)], &scaled_pairs, &[]]);
            let f = fingerprint(&d);
            let fs = fingerprint_with_cap(&ds, f.cap_value * s);
            for (a, b) in f.values.iter().zip(&fs.values) {
                prop_assert!((a * s - b).abs() < 1e-12 * (1.0 + s));
            }
        }
    }
}
