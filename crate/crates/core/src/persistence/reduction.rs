use std::collections::HashMap;

use super::filtration::FilteredSimplex;
use super::{PersistenceDiagram, PersistencePair};
use crate::error::{contract, Result};

fn pack(vertices: &[usize]) -> u64 {
    vertices.iter().fold(0u64, |k, &v| (k << 16) | (v as u64 + 1))
}

/// Sorted boundary columns (row = filtration index of each codimension-1 face).
fn boundary_columns(filtration: &[FilteredSimplex]) -> Result<Vec<Vec<usize>>> {
    let mut index: HashMap<u64, usize> = HashMap::with_capacity(filtration.len());
    let mut columns = Vec::with_capacity(filtration.len());
    for (pos, s) in filtration.iter().enumerate() {
        if s.vertices.is_empty() || s.vertices.len() > 4 {
            return Err(contract(format!("simplex {pos} has {} vertices", s.vertices.len())));
        }
        if s.vertices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(contract(format!("simplex {pos} vertices are not strictly sorted")));
        }
        if s.vertices.iter().any(|&v| v >= u16::MAX as usize) {
            return Err(contract("vertex ids must fit in 16 bits"));
        }
        if !(s.filtration_value >= 0.0) {
            return Err(contract(format!("simplex {pos} has invalid value {}", s.filtration_value)));
        }
        if pos > 0 && filtration[pos - 1].order(s).is_gt() {
            return Err(contract(format!("filtration is not sorted at position {pos}")));
        }
        let mut col = Vec::with_capacity(s.vertices.len());
        if s.vertices.len() > 1 {
            let mut face = Vec::with_capacity(s.vertices.len() - 1);
            for skip in 0..s.vertices.len() {
                face.clear();
                face.extend(
                    s.vertices
                        .iter()
                        .enumerate()
                        .filter(|(p, _)| *p != skip)
                        .map(|(_, v)| *v),
                );
                match index.get(&pack(&face)) {
                    Some(&row) => col.push(row),
                    None => {
                        return Err(contract(format!(
                            "face {face:?} of simplex {:?} missing or out of order",
                            s.vertices
                        )))
                    }
                }
            }
            col.sort_unstable();
        }
        if index.insert(pack(&s.vertices), pos).is_some() {
            return Err(contract(format!("duplicate simplex {:?}", s.vertices)));
        }
        columns.push(col);
    }
    Ok(columns)
}

/// Symmetric difference of two sorted index lists (addition over Z/2).
fn add_columns(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Persistence pairs of a sorted, face-closed filtration over Z/2.
///
/// Standard left-to-right column reduction with low-pivot lookup, run one
/// dimension at a time from the top so that columns already known to be
/// positive (pivots of a higher-dimensional column) are skipped. Pairs with
/// zero persistence are discarded; unpaired simplices of dimension ≤ 2 give
/// essential classes with infinite death.
pub fn compute_persistence(filtration: &[FilteredSimplex]) -> Result<PersistenceDiagram> {
    let mut columns = boundary_columns(filtration)?;
    let m = filtration.len();
    let mut pivot_of_row: Vec<Option<usize>> = vec![None; m];
    let mut cleared = vec![false; m];
    let max_dim = filtration.iter().map(FilteredSimplex::dim).max().unwrap_or(0);

    for dim in (1..=max_dim).rev() {
        for j in 0..m {
            if filtration[j].dim() != dim {
                continue;
            }
            if cleared[j] {
                columns[j].clear();
                continue;
            }
            let mut col = std::mem::take(&mut columns[j]);
            while let Some(&low) = col.last() {
                match pivot_of_row[low] {
                    Some(k) => col = add_columns(&col, &columns[k]),
                    None => {
                        pivot_of_row[low] = Some(j);
                        cleared[low] = true;
                        break;
                    }
                }
            }
            columns[j] = col;
        }
    }

    let mut diagram = PersistenceDiagram::default();
    for (j, col) in columns.iter().enumerate() {
        if let Some(&low) = col.last() {
            let dim = filtration[low].dim();
            let (birth, death) = (filtration[low].filtration_value, filtration[j].filtration_value);
            if dim <= 2 && death > birth {
                diagram.pairs[dim].push(PersistencePair { birth, death });
            }
        } else if pivot_of_row[j].is_none() && filtration[j].dim() <= 2 {
            diagram.pairs[filtration[j].dim()].push(PersistencePair {
                birth: filtration[j].filtration_value,
                death: f64::INFINITY,
            });
        }
    }
    diagram.canonicalize();
    Ok(diagram)
}
