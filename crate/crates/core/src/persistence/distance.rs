//! Exact bottleneck and Wasserstein-2 distances between persistence diagrams.
//!
//! Both reduce to bipartite problems on the usual diagonal-augmented point
//! sets: each diagram is padded with one diagonal slot per point of the other
//! diagram. Essential (infinite) classes are matched separately by sorted
//! birth, which is optimal for both costs on the line.

use super::{PersistenceDiagram, PersistencePair};
use crate::error::{Error, Result};

fn split(pairs: &[PersistencePair]) -> (Vec<(f64, f64)>, Vec<f64>) {
    let mut finite = Vec::new();
    let mut essential = Vec::new();
    for p in pairs {
        if p.death.is_finite() {
            finite.push((p.birth, p.death));
        } else {
            essential.push(p.birth);
        }
    }
    essential.sort_by(f64::total_cmp);
    (finite, essential)
}

fn essential_offsets(a: &[f64], b: &[f64], dim: usize) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "H{dim}: diagrams have {} and {} essential classes",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect())
}

fn linf(p: (f64, f64), q: (f64, f64)) -> f64 {
    (p.0 - q.0).abs().max((p.1 - q.1).abs())
}

fn half_persistence(p: (f64, f64)) -> f64 {
    (p.1 - p.0) / 2.0
}

/// Bottleneck distance in homology dimension `dim` (L∞ ground metric).
pub fn bottleneck_distance(a: &PersistenceDiagram, b: &PersistenceDiagram, dim: usize) -> Result<f64> {
    let (fa, ea) = split(a.pairs(dim));
    let (fb, eb) = split(b.pairs(dim));
    let essential = essential_offsets(&ea, &eb, dim)?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(essential.max(bottleneck_finite(&fa, &fb)))
}

fn bottleneck_finite(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut candidates: Vec<f64> = a
        .iter()
        .flat_map(|&p| b.iter().map(move |&q| linf(p, q)))
        .chain(a.iter().chain(b).map(|&p| half_persistence(p)))
        .collect();
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    // The largest candidate (everything to the diagonal) is always feasible.
    let (mut lo, mut hi) = (0, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if has_perfect_matching(a, b, candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    candidates[lo]
}

/// Left: points of `a` then diagonal slots for `b`. Right: points of `b` then
/// diagonal slots for `a`.
fn has_perfect_matching(a: &[(f64, f64)], b: &[(f64, f64)], radius: f64) -> bool {
    let (n, m) = (a.len(), b.len());
    let size = n + m;
    let admissible = |l: usize, r: usize| -> bool {
        match (l < n, r < m) {
            (true, true) => linf(a[l], b[r]) <= radius,
            (true, false) => r - m == l && half_persistence(a[l]) <= radius,
            (false, true) => l - n == r && half_persistence(b[r]) <= radius,
            (false, false) => true,
        }
    };
    let adj: Vec<Vec<usize>> = (0..size)
        .map(|l| (0..size).filter(|&r| admissible(l, r)).collect())
        .collect();
    let mut match_right: Vec<Option<usize>> = vec![None; size];
    for l in 0..size {
        let mut seen = vec![false; size];
        if !augment(l, &adj, &mut seen, &mut match_right) {
            return false;
        }
    }
    true
}

fn augment(l: usize, adj: &[Vec<usize>], seen: &mut [bool], match_right: &mut [Option<usize>]) -> bool {
    for &r in &adj[l] {
        if seen[r] {
            continue;
        }
        seen[r] = true;
        if match_right[r].is_none_or(|other| augment(other, adj, seen, match_right)) {
            match_right[r] = Some(l);
            return true;
        }
    }
    false
}

/// Wasserstein-2 distance in dimension `dim`: squared Euclidean ground cost,
/// points may be sent to their orthogonal projection on the diagonal.
pub fn wasserstein2_distance(a: &PersistenceDiagram, b: &PersistenceDiagram, dim: usize) -> Result<f64> {
    let (fa, ea) = split(a.pairs(dim));
    let (fb, eb) = split(b.pairs(dim));
    let essential: f64 = essential_offsets(&ea, &eb, dim)?.iter().map(|x| x * x).sum();
    let (n, m) = (fa.len(), fb.len());
    let size = n + m;
    if size == 0 {
        return Ok(essential.sqrt());
    }
    let to_diag = |p: (f64, f64)| (p.1 - p.0).powi(2) / 2.0;
    let mut cost = vec![0.0; size * size];
    for l in 0..size {
        for r in 0..size {
            cost[l * size + r] = match (l < n, r < m) {
                (true, true) => (fa[l].0 - fb[r].0).powi(2) + (fa[l].1 - fb[r].1).powi(2),
                (true, false) => to_diag(fa[l]),
                (false, true) => to_diag(fb[r]),
                (false, false) => 0.0,
            };
        }
    }
    let assignment = hungarian(&cost, size);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(l, &r)| cost[l * size + r])
        .sum();
    Ok((total + essential).sqrt())
}

/// Minimum-cost perfect assignment on a dense square matrix (row → column).
pub(crate) fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // Potentials formulation with 1-based sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diagram(h1: &[(f64, f64)]) -> PersistenceDiagram {
        let mut d = PersistenceDiagram::default();
        d.pairs[1] = h1
            .iter()
            .map(|&(birth, death)| PersistencePair { birth, death })
            .collect();
        d
    }

    /// Exhaustive search over every partial matching of the two point sets;
    /// unmatched points go to the diagonal.
    fn brute_force(a: &[(f64, f64)], b: &[(f64, f64)], bottleneck: bool) -> f64 {
        fn rec(
            i: usize,
            a: &[(f64, f64)],
            b: &[(f64, f64)],
            used: &mut Vec<bool>,
            acc: f64,
            bottleneck: bool,
            best: &mut f64,
        ) {
            let combine = |x: f64, y: f64| if bottleneck { x.max(y) } else { x + y };
            let diag = |p: (f64, f64)| {
                if bottleneck {
                    (p.1 - p.0) / 2.0
                } else {
                    (p.1 - p.0).powi(2) / 2.0
                }
            };
            if i == a.len() {
                let mut total = acc;
                for (j, &q) in b.iter().enumerate() {
                    if !used[j] {
                        total = combine(total, diag(q));
                    }
                }
                *best = best.min(total);
                return;
            }
            rec(i + 1, a, b, used, combine(acc, diag(a[i])), bottleneck, best);
            for j in 0..b.len() {
                if used[j] {
                    continue;
                }
                used[j] = true;
                let c = if bottleneck {
                    (a[i].0 - b[j].0).abs().max((a[i].1 - b[j].1).abs())
                } else {
                    (a[i].0 - b[j].0).powi(2) + (a[i].1 - b[j].1).powi(2)
                };
                rec(i + 1, a, b, used, combine(acc, c), bottleneck, best);
                used[j] = false;
            }
        }
        let mut best = f64::INFINITY;
        rec(0, a, b, &mut vec![false; b.len()], 0.0, bottleneck, &mut best);
        if bottleneck {
            best
        } else {
            best.sqrt()
        }
    }

    #[test]
    fn bottleneck_examples() {
        let d = diagram(&[(0.0, 2.0), (0.3, 0.9)]);
        assert_eq!(bottleneck_distance(&d, &d, 1).unwrap(), 0.0);
        let one = diagram(&[(0.0, 2.0)]);
        let empty = diagram(&[]);
        assert_eq!(bottleneck_distance(&one, &empty, 1).unwrap(), 1.0);
        let shifted = diagram(&[(0.5, 2.5)]);
        assert_eq!(bottleneck_distance(&one, &shifted, 1).unwrap(), 0.5);
    }

    #[test]
    fn wasserstein_examples() {
        let d = diagram(&[(0.0, 2.0), (0.3, 0.9)]);
        assert!(wasserstein2_distance(&d, &d, 1).unwrap().abs() < 1e-12);
        let one = diagram(&[(0.0, 2.0)]);
        let w = wasserstein2_distance(&one, &diagram(&[]), 1).unwrap();
        assert!((w - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn essential_classes() {
        let mut a = PersistenceDiagram::default();
        let mut b = PersistenceDiagram::default();
        a.pairs[0] = vec![PersistencePair { birth: 0.0, death: f64::INFINITY }];
        b.pairs[0] = vec![
            PersistencePair { birth: 0.0, death: 0.4 },
            PersistencePair { birth: 0.0, death: f64::INFINITY },
        ];
        assert!((bottleneck_distance(&a, &b, 0).unwrap() - 0.2).abs() < 1e-15);
        b.pairs[0].push(PersistencePair { birth: 0.1, death: f64::INFINITY });
        assert!(bottleneck_distance(&a, &b, 0).is_err());
        assert!(wasserstein2_distance(&a, &b, 0).is_err());
    }

    fn arb_diagram() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.0f64..1.0, 0.01f64..1.0), 0..5)
            .prop_map(|v| v.into_iter().map(|(b, p)| (b, b + p)).collect())
    }

    proptest! {
        #[test]
        fn matches_brute_force(a in arb_diagram(), b in arb_diagram()) {
            let (da, db) = (diagram(&a), diagram(&b));
            let bn = bottleneck_distance(&da, &db, 1).unwrap();
            prop_assert!((bn - brute_force(&a, &b, true)).abs() < 1e-12);
            let w = wasserstein2_distance(&da, &db, 1).unwrap();
            prop_assert!((w - brute_force(&a, &b, false)).abs() < 1e-9);
            let w_rev = wasserstein2_distance(&db, &da, 1).unwrap();
            prop_assert!((w - w_rev).abs() < 1e-9);
            prop_assert_eq!(bn, bottleneck_distance(&db, &da, 1).unwrap());
        }
    }
}
