use crate::manifold::DistanceGraph;

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Betti numbers (β0, β1) of the clique complex at scale `epsilon`, computed
/// directly rather than through a filtration.
///
/// β0 comes from union-find over edges with `d ≤ ε`; β1 is
/// `dim ker ∂1 − rank ∂2` over Z/2, with `rank ∂2` found by Gaussian
/// elimination on triangle boundary bitsets. Intended for small graphs.
pub fn betti_numbers_at(graph: &DistanceGraph, epsilon: f64) -> (usize, usize) {
    let n = graph.n();
    let edges: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .filter(|e| e.d <= epsilon)
        .map(|e| (e.i, e.j))
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    let mut merges = 0;
    for &(a, b) in &edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            merges += 1;
        }
    }
    let beta0 = n - merges;
    let rank_d1 = merges;

    let mut edge_id = vec![vec![usize::MAX; n]; n];
    for (k, &(a, b)) in edges.iter().enumerate() {
        edge_id[a][b] = k;
        edge_id[b][a] = k;
    }
    let words = edges.len().div_ceil(64).max(1);
    let mut rows: Vec<Vec<u64>> = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if edge_id[a][b] == usize::MAX {
                continue;
            }
            for c in (b + 1)..n {
                if edge_id[a][c] == usize::MAX || edge_id[b][c] == usize::MAX {
                    continue;
                }
                let mut bits = vec![0u64; words];
                for e in [edge_id[a][b], edge_id[a][c], edge_id[b][c]] {
                    bits[e / 64] |= 1 << (e % 64);
                }
                rows.push(bits);
            }
        }
    }
    let rank_d2 = gf2_rank(rows, edges.len());
    let beta1 = edges.len() - rank_d1 - rank_d2;
    (beta0, beta1)
}

fn gf2_rank(mut rows: Vec<Vec<u64>>, bits: usize) -> usize {
    let mut rank = 0;
    for bit in 0..bits {
        let (w, mask) = (bit / 64, 1u64 << (bit % 64));
        let Some(p) = (rank..rows.len()).find(|&r| rows[r][w] & mask != 0) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot = rows[rank].clone();
        for r in 0..rows.len() {
            if r != rank && rows[r][w] & mask != 0 {
                for (x, y) in rows[r].iter_mut().zip(&pivot) {
                    *x ^= y;
                }
            }
        }
        rank += 1;
    }
    rank
}
