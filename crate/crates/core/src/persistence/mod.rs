//! Vietoris–Rips persistent homology (dimensions 0–2) and diagram distances.

mod betti;
mod distance;
mod filtration;
mod reduction;

pub use betti::betti_numbers_at;
pub use distance::{bottleneck_distance, wasserstein2_distance};
pub use filtration::{build_vr_filtration, FilteredSimplex, MAX_HOMOLOGY_DIM};
pub use reduction::compute_persistence;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::DistanceGraph;
use crate::par::{self, Execution};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersistencePair {
    pub birth: f64,
    /// `f64::INFINITY` for essential classes.
    pub death: f64,
}

impl PersistencePair {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }

    pub fn alive_at(&self, epsilon: f64) -> bool {
        self.birth <= epsilon && epsilon < self.death
    }
}

/// Birth-death pairs for homology dimensions 0, 1 and 2.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PersistenceDiagram {
    pub pairs: [Vec<PersistencePair>; 3],
}

impl PersistenceDiagram {
    pub fn pairs(&self, dim: usize) -> &[PersistencePair] {
        &self.pairs[dim]
    }

    /// Sorts every dimension by (birth, death) so equal diagrams compare equal.
    pub fn canonicalize(&mut self) {
        for dim in &mut self.pairs {
            dim.sort_by(|a, b| a.birth.total_cmp(&b.birth).then(a.death.total_cmp(&b.death)));
        }
    }

    /// Number of classes in dimension `dim` alive at scale `epsilon`.
    pub fn betti_at(&self, dim: usize, epsilon: f64) -> usize {
        self.pairs[dim].iter().filter(|p| p.alive_at(epsilon)).count()
    }

    pub fn max_finite_death(&self) -> Option<f64> {
        self.pairs
            .iter()
            .flatten()
            .map(|p| p.death)
            .filter(|d| d.is_finite())
            .reduce(f64::max)
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.iter().all(Vec::is_empty)
    }

    pub fn to_json(&self) -> Vec<DiagramJson> {
        self.pairs
            .iter()
            .enumerate()
            .map(|(dim, pairs)| DiagramJson {
                dim,
                pairs: pairs
                    .iter()
                    .map(|p| (p.birth, p.death.is_finite().then_some(p.death)))
                    .collect(),
            })
            .collect()
    }

    pub fn from_json(dims: &[DiagramJson]) -> Result<Self> {
        let mut out = Self::default();
        for d in dims {
            if d.dim > 2 {
                return Err(Error::Contract(format!("diagram dimension {} out of range", d.dim)));
            }
            for &(birth, death) in &d.pairs {
                let death = death.unwrap_or(f64::INFINITY);
                if !(birth >= 0.0 && death > birth) {
                    return Err(Error::Contract(format!("invalid pair ({birth}, {death})")));
                }
                out.pairs[d.dim].push(PersistencePair { birth, death });
            }
        }
        out.canonicalize();
        Ok(out)
    }
}

/// One homology dimension in the artifact format `{"dim":k,"pairs":[[b,d|null],…]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagramJson {
    pub dim: usize,
    pub pairs: Vec<(f64, Option<f64>)>,
}

/// Filtration plus reduction in one call.
pub fn diagram_of_graph(graph: &DistanceGraph, exec: Execution) -> Result<PersistenceDiagram> {
    let filtration = build_vr_filtration(graph, MAX_HOMOLOGY_DIM, exec)?;
    compute_persistence(&filtration)
}

/// Diagrams for several graphs (e.g. one per group), reduced in parallel.
pub fn diagrams_of_graphs(graphs: &[DistanceGraph], exec: Execution) -> Result<Vec<PersistenceDiagram>> {
    par::map_slice(graphs, exec, |g| diagram_of_graph(g, Execution::Sequential))
        .into_iter()
        .collect()
}
