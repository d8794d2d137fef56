//! Per-series spectral coordinates from a truncated SVD of the entity-time
//! matrix, optionally block-wise per group, plus the learned alternative.

mod neural;
mod svd;

pub use neural::{neural_sheaf_train, NeuralSheafConfig, NeuralSheafResult};
pub use svd::{svd_truncated, Svd};

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::{zscore_per_series, SeriesCorpus};
use crate::error::{Error, Result};
use crate::manifold::WeightGraph;
use crate::par::{self, Execution};

pub const SHEAF_DIM: usize = 256;
pub const SIGN_RULE: &str = "largest-magnitude-entry-positive";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Per-series z-scoring before the SVD.
    pub normalize: bool,
    /// Upper bound on retained directions per block (default: all available).
    pub max_rank: Option<usize>,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            max_rank: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub label: String,
    pub members: Vec<usize>,
    pub effective_rank: usize,
    pub singular_values: Vec<f64>,
    /// Retained singular values contain ties, so the ordering among them
    /// falls back to the position of each vector's dominant entry.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SheafCoordinates {
    /// N×256; columns past a block's effective rank are zero on its rows.
    pub coords: Array2<f64>,
    pub blocks: Vec<BlockInfo>,
    pub group_map: Option<Vec<String>>,
}

impl SheafCoordinates {
    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.coords.row(i)
    }

    pub fn effective_rank(&self) -> usize {
        self.blocks.iter().map(|b| b.effective_rank).max().unwrap_or(0)
    }

    pub fn header(&self, series_ids: &[String]) -> CoordinatesHeader {
        CoordinatesHeader {
            n: self.n(),
            dim: self.coords.ncols(),
            sign_rule: SIGN_RULE.to_string(),
            blocks: self.blocks.clone(),
            series_ids: series_ids.to_vec(),
        }
    }

    /// CSV body: `series_id,z0,…,z255`, values in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, series_ids: &[String], w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["series_id".to_string()];
        header.extend((0..self.coords.ncols()).map(|j| format!("z{j}")));
        out.write_record(&header).map_err(csv_error)?;
        for (id, row) in series_ids.iter().zip(self.coords.rows()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Structure(format!("coordinates CSV: {e}"))
}

/// Reads a coordinates CSV written by [`SheafCoordinates::write_csv`].
pub fn read_coordinates_csv<R: Read>(r: R) -> Result<(Vec<String>, Array2<f64>)> {
    let mut reader = csv::Reader::from_reader(r);
    let width = reader.headers().map_err(csv_error)?.len().saturating_sub(1);
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != width + 1 {
            return Err(Error::Structure(format!("coordinates row {} has {} fields", line + 2, rec.len())));
        }
        ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            data.push(field.parse::<f64>().map_err(|_| Error::Parse {
                line: line as u64 + 2,
                message: format!("not a number: {field:?}"),
            })?);
        }
    }
    let n = ids.len();
    Ok((ids, Array2::from_shape_vec((n, width), data).expect("row widths checked")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinatesHeader {
    pub n: usize,
    pub dim: usize,
    pub sign_rule: String,
    pub blocks: Vec<BlockInfo>,
    pub series_ids: Vec<String>,
}

fn block_coordinates(values: ArrayView2<f64>, max_rank: Option<usize>) -> Result<(Array2<f64>, Svd)> {
    let (n, t) = values.dim();
    let k = n.min(t).min(SHEAF_DIM).min(max_rank.unwrap_or(usize::MAX));
    let svd = svd_truncated(values, k)?;
    let mut coords = Array2::zeros((n, SHEAF_DIM));
    coords.slice_mut(ndarray::s![.., ..k]).assign(&svd.u);
    Ok((coords, svd))
}

/// Spectral coordinates, one SVD per group when `groups` is given (group
/// order by first appearance), otherwise one global SVD.
pub fn spectral_coordinates(
    corpus: &SeriesCorpus,
    groups: Option<&[String]>,
    options: &SpectralOptions,
    exec: Execution,
) -> Result<SheafCoordinates> {
    let normalized;
    let corpus = if options.normalize {
        normalized = zscore_per_series(corpus);
        &normalized
    } else {
        corpus
    };
    let blocks: Vec<(String, Vec<usize>)> = match groups {
        None => vec![("all".to_string(), (0..corpus.n()).collect())],
        Some(labels) => {
            if labels.len() != corpus.n() {
                return Err(Error::Contract(format!(
                    "{} group labels for {} series",
                    labels.len(),
                    corpus.n()
                )));
            }
            let mut out: Vec<(String, Vec<usize>)> = Vec::new();
            for (i, label) in labels.iter().enumerate() {
                match out.iter_mut().find(|(l, _)| l == label) {
                    Some((_, members)) => members.push(i),
                    None => out.push((label.clone(), vec![i])),
                }
            }
            out
        }
    };
    let solved = par::map_slice(&blocks, exec, |(_, members)| {
        let sub = corpus.values().select(ndarray::Axis(0), members);
        block_coordinates(sub.view(), options.max_rank)
    });
    let mut coords = Array2::zeros((corpus.n(), SHEAF_DIM));
    let mut infos = Vec::with_capacity(blocks.len());
    for ((label, members), result) in blocks.into_iter().zip(solved) {
        let (block, svd) = result?;
        for (r, &row) in members.iter().enumerate() {
            coords.row_mut(row).assign(&block.row(r));
        }
        infos.push(BlockInfo {
            label,
            effective_rank: svd.s.iter().filter(|&&s| s > 0.0).count(),
            singular_values: svd.s,
            degenerate: svd.degenerate,
            members,
        });
    }
    Ok(SheafCoordinates {
        coords,
        blocks: infos,
        group_map: groups.map(<[String]>::to_vec),
    })
}

/// `Σ_edges w_ij ‖z_i − z_j‖²` with identity restriction maps.
pub fn sheaf_dirichlet_energy(graph: &WeightGraph, coords: ArrayView2<f64>) -> Result<f64> {
    if graph.n != coords.nrows() {
        return Err(Error::Contract(format!(
            "graph has {} nodes but coordinates have {} rows",
            graph.n,
            coords.nrows()
        )));
    }
    Ok(graph
        .edges
        .iter()
        .map(|&(i, j, w)| {
            let diff = &coords.row(i) - &coords.row(j);
            w * diff.dot(&diff)
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::GraphMode;
    use crate::nn::rng_from_seed;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn random_corpus(n: usize, t: usize, seed: u64) -> SeriesCorpus {
        let mut rng = rng_from_seed(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..t).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        SeriesCorpus::from_rows(&rows).unwrap()
    }

    #[test]
    fn single_series_block_is_unit_vector() {
        let c = random_corpus(3, 8, 1);
        let groups: Vec<String> = ["a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let sc = spectral_coordinates(&c, Some(&groups), &SpectralOptions::default(), Execution::Sequential).unwrap();
        assert_eq!(sc.coords[[0, 0]], 1.0);
        assert!(sc.coords.row(0).iter().skip(1).all(|&x| x == 0.0));
        assert_eq!(sc.blocks[0].effective_rank, 1);
        assert_eq!(sc.blocks[1].members, vec![1, 2]);
    }

    #[test]
    fn zero_padding_and_orthonormality() {
        let c = random_corpus(12, 7, 2);
        let sc = spectral_coordinates(&c, None, &SpectralOptions::default(), Execution::Sequential).unwrap();
        // z-scored rows sum to zero, so the rank is at most T − 1 = 6.
        assert_eq!(sc.effective_rank(), 6);
        assert!(sc.coords.columns().into_iter().skip(6).all(|col| col.iter().all(|&x| x == 0.0)));
        let u = sc.coords.slice(ndarray::s![.., ..6]);
        let gram = u.t().dot(&u);
        for ((i, j), g) in gram.indexed_iter() {
            assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6);
        }
    }

    #[test]
    fn block_and_parallel_agree_with_sequential() {
        let c = random_corpus(20, 15, 3);
        let groups: Vec<String> = (0..20).map(|i| format!("g{}", i % 3)).collect();
        let o = SpectralOptions::default();
        let a = spectral_coordinates(&c, Some(&groups), &o, Execution::Sequential).unwrap();
        let b = spectral_coordinates(&c, Some(&groups), &o, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn energy_examples() {
        let g = WeightGraph {
            n: 2,
            edges: vec![(0, 1, 1.0)],
            mode: GraphMode::Dense,
        };
        assert_eq!(sheaf_dirichlet_energy(&g, array![[1.0, 2.0], [1.0, 2.0]].view()).unwrap(), 0.0);
        assert_eq!(sheaf_dirichlet_energy(&g, array![[1.0, 0.0], [0.0, 0.0]].view()).unwrap(), 1.0);
        assert!(sheaf_dirichlet_energy(&g, array![[1.0]].view()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = random_corpus(4, 6, 5);
        let sc = spectral_coordinates(&c, None, &SpectralOptions::default(), Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        sc.write_csv(c.series_ids(), &mut buf).unwrap();
        let (ids, m) = read_coordinates_csv(buf.as_slice()).unwrap();
        assert_eq!(ids, c.series_ids());
        assert_eq!(m, sc.coords);
    }
}
