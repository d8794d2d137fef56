use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::DistanceGraph;
use crate::par::{self, Execution};

/// A simplex with its entry value in the filtration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilteredSimplex {
    /// Sorted vertex ids.
    pub vertices: Vec<usize>,
    pub filtration_value: f64,
}

impl FilteredSimplex {
    pub fn dim(&self) -> usize {
        self.vertices.len() - 1
    }

    pub(crate) fn order(&self, other: &Self) -> Ordering {
        self.filtration_value
            .total_cmp(&other.filtration_value)
            .then(self.vertices.len().cmp(&other.vertices.len()))
            .then_with(|| self.vertices.cmp(&other.vertices))
    }
}

/// Highest homology dimension the pipeline tracks.
pub const MAX_HOMOLOGY_DIM: usize = 2;

/// Vietoris–Rips (clique) filtration of `graph`.
///
/// Homology up to dimension 2 is supported. Besides vertices, edges and
/// triangles the filtration carries the 3-simplices needed to give finite
/// deaths to 2-dimensional classes. Triangles and tetrahedra are only formed
/// from edges present in the graph, so a kNN graph yields its clique complex.
/// The result is sorted by (value, dimension, lexicographic vertices).
pub fn build_vr_filtration(
    graph: &DistanceGraph,
    max_dim: usize,
    exec: Execution,
) -> Result<Vec<FilteredSimplex>> {
    if max_dim != MAX_HOMOLOGY_DIM {
        return Err(Error::Config(format!(
            "only homology up to dimension {MAX_HOMOLOGY_DIM} is supported, got {max_dim}"
        )));
    }
    let n = graph.n();
    let adj = graph.adjacency();
    let mut out: Vec<FilteredSimplex> = (0..n)
        .map(|v| FilteredSimplex {
            vertices: vec![v],
            filtration_value: 0.0,
        })
        .collect();
    out.extend(graph.edges().iter().map(|e| FilteredSimplex {
        vertices: vec![e.i, e.j],
        filtration_value: e.d,
    }));

    // Upper neighbourhoods make each clique appear once, from its lowest vertex.
    let upper: Vec<Vec<usize>> = (0..n)
        .map(|i| ((i + 1)..n).filter(|&j| adj[i][j].is_some()).collect())
        .collect();
    let higher: Vec<Vec<FilteredSimplex>> = par::map_range(n, exec, |i| {
        let mut local = Vec::new();
        let nb = &upper[i];
        for (a, &j) in nb.iter().enumerate() {
            let dij = adj[i][j].unwrap();
            for (b, &k) in nb.iter().enumerate().skip(a + 1) {
                let Some(djk) = adj[j][k] else { continue };
                let tri = dij.max(adj[i][k].unwrap()).max(djk);
                local.push(FilteredSimplex {
                    vertices: vec![i, j, k],
                    filtration_value: tri,
                });
                for &l in &nb[b + 1..] {
                    let (Some(djl), Some(dkl)) = (adj[j][l], adj[k][l]) else {
                        continue;
                    };
                    local.push(FilteredSimplex {
                        vertices: vec![i, j, k, l],
                        filtration_value: tri.max(adj[i][l].unwrap()).max(djl).max(dkl),
                    });
                }
            }
        }
        local
    });
    out.extend(higher.into_iter().flatten());
    out.sort_by(FilteredSimplex::order);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(f: &[FilteredSimplex], dim: usize) -> Vec<f64> {
        f.iter()
            .filter(|s| s.dim() == dim)
            .map(|s| s.filtration_value)
            .collect()
    }

    #[test]
    fn equilateral_triangle() {
        let g = DistanceGraph::from_edges(3, [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)]).unwrap();
        let f = build_vr_filtration(&g, 2, Execution::Sequential).unwrap();
        assert_eq!(count(&f, 0), vec![0.0; 3]);
        assert_eq!(count(&f, 1), vec![1.0; 3]);
        assert_eq!(count(&f, 2), vec![1.0]);
        // triangle sorts after its edges at equal value
        assert_eq!(f.last().unwrap().vertices, vec![0, 1, 2]);
    }

    #[test]
    fn two_points() {
        let g = DistanceGraph::from_edges(2, [(0, 1, 0.3)]).unwrap();
        let f = build_vr_filtration(&g, 2, Execution::Sequential).unwrap();
        let values: Vec<(usize, f64)> = f.iter().map(|s| (s.dim(), s.filtration_value)).collect();
        assert_eq!(values, vec![(0, 0.0), (0, 0.0), (1, 0.3)]);
    }

    #[test]
    fn square_corners() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        let g = DistanceGraph::from_points(&pts).unwrap();
        let f = build_vr_filtration(&g, 2, Execution::Sequential).unwrap();
        // every triple contains a diagonal, so each triangle enters at sqrt 2
        let tri = count(&f, 2);
        assert_eq!(tri.len(), 4);
        for v in tri {
            assert!((v - 2f64.sqrt()).abs() < 1e-15);
        }
        assert_eq!(count(&f, 3).len(), 1);
    }

    #[test]
    fn faces_precede_cofaces() {
        let pts: Vec<Vec<f64>> = (0..7)
            .map(|i| vec![(i as f64 * 1.3).sin(), (i as f64 * 0.7).cos()])
            .collect();
        let g = DistanceGraph::from_points(&pts).unwrap();
        let f = build_vr_filtration(&g, 2, Execution::Parallel).unwrap();
        for (idx, s) in f.iter().enumerate() {
            if s.dim() == 0 {
                continue;
            }
            for skip in 0..s.vertices.len() {
                let face: Vec<usize> = s
                    .vertices
                    .iter()
                    .enumerate()
                    .filter(|(p, _)| *p != skip)
                    .map(|(_, v)| *v)
                    .collect();
                let pos = f.iter().position(|t| t.vertices == face).unwrap();
                assert!(pos < idx);
                assert!(f[pos].filtration_value <= s.filtration_value);
            }
        }
        assert_eq!(f, build_vr_filtration(&g, 2, Execution::Sequential).unwrap());
    }

    #[test]
    fn rejects_other_dimensions() {
        let g = DistanceGraph::from_edges(2, [(0, 1, 0.3)]).unwrap();
        assert!(matches!(
            build_vr_filtration(&g, 3, Execution::Sequential),
            Err(Error::Config(_))
        ));
    }
}
