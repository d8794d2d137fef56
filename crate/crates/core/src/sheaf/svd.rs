//! Thin SVD by one-sided (Hestenes) Jacobi rotations.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

#[derive(Clone, Debug, PartialEq)]
pub struct Svd {
    /// N×k left singular vectors.
    pub u: Array2<f64>,
    /// k singular values, non-increasing.
    pub s: Vec<f64>,
    /// T×k right singular vectors.
    pub v: Array2<f64>,
    /// Some retained singular values coincide (relative gap below 1e-10),
    /// so the corresponding vectors are not unique.
    pub degenerate: bool,
}

/// Orthogonalizes the columns of `cols` in place and applies the same
/// rotations to `basis`; returns when a full sweep needs no rotation.
fn hestenes(cols: &mut [Vec<f64>], basis: &mut [Vec<f64>]) {
    let q = cols.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..q {
            for j in (i + 1)..q {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                let gamma = dot(&cols[i], &cols[j]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut *cols, &mut *basis] {
                    let (left, right) = m.split_at_mut(j);
                    for (x, y) in left[i].iter_mut().zip(right[0].iter_mut()) {
                        let (xi, yj) = (*x, *y);
                        *x = c * xi - s * yj;
                        *y = s * xi + c * yj;
                    }
                }
            }
        }
        if !rotated {
            return;
        }
    }
    log::warn!("Jacobi SVD did not converge in {MAX_SWEEPS} sweeps");
}

fn column(m: &ArrayView2<f64>, j: usize) -> Vec<f64> {
    m.column(j).to_vec()
}

fn identity_columns(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Index of the first entry whose magnitude is maximal.
pub(crate) fn argmax_abs(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

/// Leading `k` singular triplets of `m`, signs fixed so that each left
/// singular vector's largest-magnitude entry is positive. Directions with a
/// zero singular value have zero vectors.
pub fn svd_truncated(m: ArrayView2<f64>, k: usize) -> Result<Svd> {
    let (n, t) = m.dim();
    if k > n.min(t) {
        return Err(Error::Config(format!("rank {k} exceeds min({n}, {t})")));
    }
    // (left vector, singular value, right vector) for every direction.
    let mut triplets: Vec<(Vec<f64>, f64, Vec<f64>)> = if n <= t {
        // Columns of mᵀ are the rows of m; the rotation basis becomes U.
        let mut cols: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
        let mut basis = identity_columns(n);
        hestenes(&mut cols, &mut basis);
        cols.into_iter()
            .zip(basis)
            .map(|(c, u)| {
                let sigma = norm(&c);
                let v = c.iter().map(|x| if sigma > 0.0 { x / sigma } else { 0.0 }).collect();
                (u, sigma, v)
            })
            .collect()
    } else {
        let mut cols: Vec<Vec<f64>> = (0..t).map(|j| column(&m, j)).collect();
        let mut basis = identity_columns(t);
        hestenes(&mut cols, &mut basis);
        cols.into_iter()
            .zip(basis)
            .map(|(c, v)| {
                let sigma = norm(&c);
                let u = c.iter().map(|x| if sigma > 0.0 { x / sigma } else { 0.0 }).collect();
                (u, sigma, v)
            })
            .collect()
    };

    let sigma_max = triplets.iter().map(|x| x.1).fold(0.0, f64::max);
    let zero_tol = sigma_max * 1e-13 * (n.max(t) as f64);
    for trip in &mut triplets {
        if trip.1 <= zero_tol {
            trip.1 = 0.0;
            trip.0.iter_mut().for_each(|x| *x = 0.0);
            trip.2.iter_mut().for_each(|x| *x = 0.0);
        } else {
            let idx = argmax_abs(&trip.0);
            if trip.0[idx] < 0.0 {
                trip.0.iter_mut().for_each(|x| *x = -*x);
                trip.2.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
    let tie = |a: f64, b: f64| (a - b).abs() <= 1e-10 * sigma_max;
    triplets.sort_by(|a, b| b.1.total_cmp(&a.1));
    // Within runs of tied singular values, order by position of the dominant entry.
    let mut start = 0;
    while start < triplets.len() {
        let mut end = start + 1;
        while end < triplets.len() && tie(triplets[end - 1].1, triplets[end].1) {
            end += 1;
        }
        triplets[start..end].sort_by_key(|trip| argmax_abs(&trip.0));
        start = end;
    }
    let degenerate = triplets
        .windows(2)
        .take(k)
        .any(|w| w[0].1 > 0.0 && tie(w[0].1, w[1].1));

    let mut u = Array2::zeros((n, k));
    let mut v = Array2::zeros((t, k));
    let mut s = Vec::with_capacity(k);
    for (j, (uj, sj, vj)) in triplets.into_iter().take(k).enumerate() {
        u.column_mut(j).assign(&ndarray::Array1::from(uj));
        v.column_mut(j).assign(&ndarray::Array1::from(vj));
        s.push(sj);
    }
    Ok(Svd { u, s, v, degenerate })
}
