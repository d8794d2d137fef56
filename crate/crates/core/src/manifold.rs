//! Correlation-distance manifold over a series population and its kNN
//! sparsification.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::SeriesCorpus;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Pearson correlation. Returns 0 when either sequence is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Contract(format!(
            "pearson: lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Contract("pearson: need at least two observations".into()));
    }
    Ok(pearson_unchecked(x, y))
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Full symmetric matrix of absolute correlations, row-major `n*n`, unit diagonal.
pub fn abs_correlation_matrix(corpus: &SeriesCorpus, exec: Execution) -> Vec<f64> {
    let n = corpus.n();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| corpus.row(i).to_vec()).collect();
    let upper: Vec<Vec<f64>> = par::map_range(n, exec, |i| {
        ((i + 1)..n)
            .map(|j| pearson_unchecked(&rows[i], &rows[j]).abs())
            .collect()
    });
    let mut m = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        m[i * n + i] = 1.0;
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "k")]
pub enum GraphMode {
    Dense,
    Knn(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub d: f64,
}

/// Undirected graph with distance-labelled edges, canonical `(i, j)` order, `i < j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceGraph {
    n: usize,
    edges: Vec<Edge>,
    mode: GraphMode,
    /// Rows that were constant and therefore sit at distance 1 from everything.
    degenerate: Vec<usize>,
}

impl DistanceGraph {
    /// Validates and canonicalizes an arbitrary edge list (distances may exceed 1).
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut out: Vec<Edge> = Vec::new();
        for (a, b, d) in edges {
            if a == b {
                return Err(Error::Contract(format!("self-loop on vertex {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Contract(format!("edge ({a}, {b}) out of range for {n} vertices")));
            }
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::Contract(format!("edge ({a}, {b}) has invalid distance {d}")));
            }
            out.push(Edge { i: a.min(b), j: a.max(b), d });
        }
        out.sort_by_key(|x| (x.i, x.j));
        if out.windows(2).any(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(Error::Contract("duplicate edge".into()));
        }
        Ok(Self {
            n,
            edges: out,
            mode: GraphMode::Dense,
            degenerate: Vec::new(),
        })
    }

    /// Complete graph from a symmetric row-major distance matrix.
    pub fn from_matrix(n: usize, dist: &[f64]) -> Result<Self> {
        if dist.len() != n * n {
            return Err(Error::Contract("distance matrix has wrong size".into()));
        }
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j, dist[i * n + j])));
        Self::from_edges(n, edges)
    }

    /// Euclidean distances between points (rows).
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
            }
        }
        Self::from_matrix(n, &dist)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn degenerate(&self) -> &[usize] {
        &self.degenerate
    }

    pub fn max_distance(&self) -> f64 {
        self.edges.iter().map(|e| e.d).fold(0.0, f64::max)
    }

    /// Distance lookup table, `None` where no edge exists.
    pub fn adjacency(&self) -> Vec<Vec<Option<f64>>> {
        let mut adj = vec![vec![None; self.n]; self.n];
        for e in &self.edges {
            adj[e.i][e.j] = Some(e.d);
            adj[e.j][e.i] = Some(e.d);
        }
        adj
    }

    /// JSON-lines export, one `{"i":…,"j":…,"d":…}` object per edge.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.edges {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Weighted graph with `w = |ρ|` on each edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub mode: GraphMode,
}

impl WeightGraph {
    pub fn from_distances(graph: &DistanceGraph) -> Self {
        Self {
            n: graph.n,
            edges: graph.edges.iter().map(|e| (e.i, e.j, 1.0 - e.d)).collect(),
            mode: graph.mode,
        }
    }
}

/// Distance `1 − |ρ|` graph; dense when `k` is `None`, symmetrized kNN otherwise.
pub fn correlation_distance_graph(
    corpus: &SeriesCorpus,
    k: Option<usize>,
    exec: Execution,
) -> Result<DistanceGraph> {
    let n = corpus.n();
    if n < 2 {
        return Err(Error::Contract("correlation graph needs at least two series".into()));
    }
    if corpus.t() < 2 {
        return Err(Error::Contract("correlation graph needs at least two time steps".into()));
    }
    if let Some(k) = k {
        if k == 0 || k >= n {
            return Err(Error::Config(format!("k = {k} must be in 1..{n}")));
        }
    }
    let corr = abs_correlation_matrix(corpus, exec);
    let degenerate: Vec<usize> = (0..n)
        .filter(|&i| is_constant(&corpus.row(i).to_vec()))
        .collect();
    if !degenerate.is_empty() {
        log::warn!("{} constant series treated as topological outliers", degenerate.len());
    }
    let dist = |i: usize, j: usize| 1.0 - corr[i * n + j];
    let edges: Vec<Edge> = match k {
        None => (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| Edge { i, j, d: dist(i, j) })
            .collect(),
        Some(k) => {
            let neighbours: Vec<Vec<usize>> = par::map_range(n, exec, |i| {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                // stable sort keeps lower index first on ties
                others.sort_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)));
                others.truncate(k);
                others
            });
            let mut keep = vec![false; n * n];
            for (i, nb) in neighbours.iter().enumerate() {
                for &j in nb {
                    keep[i.min(j) * n + i.max(j)] = true;
                }
            }
            (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .filter(|&(i, j)| keep[i * n + j])
                .map(|(i, j)| Edge { i, j, d: dist(i, j) })
                .collect()
        }
    };
    Ok(DistanceGraph {
        n,
        edges,
        mode: k.map_or(GraphMode::Dense, GraphMode::Knn),
        degenerate,
    })
}

pub fn knn_weight_graph(corpus: &SeriesCorpus, k: Option<usize>, exec: Execution) -> Result<WeightGraph> {
    Ok(WeightGraph::from_distances(&correlation_distance_graph(
        corpus, k, exec,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Textbook two-pass formula, kept separate from the implementation.
    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(pearson(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-15);
        let y = [1.0, 2.0, 3.0, 5.0];
        // 6.5 / sqrt(5 * 8.75)
        let frozen = 0.982_707_629_823_990_8;
        assert_abs_diff_eq!(pearson_oracle(&x, &y), frozen, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson(&x, &y).unwrap(), frozen, epsilon = 1e-12);
        assert_eq!(pearson(&x, &[2.0; 4]).unwrap(), 0.0);
        assert!(pearson(&x, &y[..3]).is_err());
    }

    fn corpus(rows: &[Vec<f64>]) -> SeriesCorpus {
        SeriesCorpus::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_pair_has_zero_distance() {
        let c = corpus(&[vec![1.0, 3.0, 2.0], vec![1.0, 3.0, 2.0]]);
        let g = correlation_distance_graph(&c, None, Execution::Sequential).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_abs_diff_eq!(g.edges()[0].d, 0.0, epsilon = 1e-15);
        let w = WeightGraph::from_distances(&g);
        assert_abs_diff_eq!(w.edges[0].2, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn quadrature_sinusoids_are_far_apart() {
        let t = 2000;
        let period = 50.0;
        let phase = |shift: f64| -> Vec<f64> {
            (0..t)
                .map(|s| (2.0 * std::f64::consts::PI * (s as f64 / period + shift)).sin())
                .collect()
        };
        let c = corpus(&[phase(0.0), phase(0.25)]);
        let g = correlation_distance_graph(&c, None, Execution::Sequential).unwrap();
        let oracle = 1.0 - pearson_oracle(&c.row(0).to_vec(), &c.row(1).to_vec()).abs();
        assert_abs_diff_eq!(g.edges()[0].d, oracle, epsilon = 1e-9);
        assert!((g.edges()[0].d - 1.0).abs() < 0.05);
    }

    #[test]
    fn anti_correlated_weight_is_one() {
        let c = corpus(&[vec![1.0, 2.0, 4.0], vec![-1.0, -2.0, -4.0]]);
        let w = knn_weight_graph(&c, None, Execution::Sequential).unwrap();
        assert_abs_diff_eq!(w.edges[0].2, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dense_edge_count_and_k_validation() {
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..8).map(|t| ((t * (i + 1)) as f64).sin()).collect())
            .collect();
        let c = corpus(&rows);
        let g = correlation_distance_graph(&c, None, Execution::Parallel).unwrap();
        assert_eq!(g.edges().len(), 10);
        assert!(matches!(
            correlation_distance_graph(&c, Some(5), Execution::Sequential),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn constant_series_is_an_outlier() {
        let c = corpus(&[vec![1.0, 2.0, 3.0], vec![5.0; 3], vec![3.0, 1.0, 2.0]]);
        let g = correlation_distance_graph(&c, None, Execution::Sequential).unwrap();
        assert_eq!(g.degenerate(), &[1]);
        for e in g.edges().iter().filter(|e| e.i == 1 || e.j == 1) {
            assert_eq!(e.d, 1.0);
        }
    }

    #[test]
    fn jsonl_export() {
        let g = DistanceGraph::from_edges(3, [(1, 0, 0.5), (2, 1, 0.25)]).unwrap();
        let mut buf = Vec::new();
        g.write_jsonl(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"i\":0,\"j\":1,\"d\":0.5}\n{\"i\":1,\"j\":2,\"d\":0.25}\n"
        );
    }

    fn random_rows(n: usize, t: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..t).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    proptest! {
        #[test]
        fn knn_graph_is_symmetrized_union(n in 3usize..14, k in 1usize..6, seed in 0u64..500) {
            prop_assume!(k < n);
            let c = corpus(&random_rows(n, 12, seed));
            let g = correlation_distance_graph(&c, Some(k), Execution::Sequential).unwrap();
            let dense = correlation_distance_graph(&c, None, Execution::Sequential).unwrap();
            let adj = dense.adjacency();
            let knn_of = |i: usize| {
                let mut o: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                o.sort_by(|&a, &b| adj[i][a].unwrap().total_cmp(&adj[i][b].unwrap()).then(a.cmp(&b)));
                o.truncate(k);
                o
            };
            let sparse = g.adjacency();
            for i in 0..n {
                let ni = knn_of(i);
                for j in 0..n {
                    if i == j { continue; }
                    let expect = ni.contains(&j) || knn_of(j).contains(&i);
                    prop_assert_eq!(sparse[i][j].is_some(), expect);
                }
                prop_assert!(sparse[i].iter().flatten().count() >= k);
            }
            for e in g.edges() {
                prop_assert!(e.i < e.j);
                prop_assert!((0.0..=1.0).contains(&e.d));
            }
            let par = correlation_distance_graph(&c, Some(k), Execution::Parallel).unwrap();
            prop_assert_eq!(par, g);
        }
    }
}
