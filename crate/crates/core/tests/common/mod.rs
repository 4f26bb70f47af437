#![allow(dead_code)]

use sdsim_core::{build_hierarchy, make_dataset, DMatrix, Dataset, TreeSpec};

pub fn dataset(branching: usize, depth: usize) -> Dataset {
    make_dataset(
        &build_hierarchy(&TreeSpec {
            branching,
            depth,
            seed: 0,
        })
        .unwrap(),
    )
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix. Returns
/// eigenvalues in decreasing order with matching eigenvector columns.
/// Deliberately independent of any library decomposition.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m[b][b].total_cmp(&m[a][a]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// Singular values of `m` via the eigenvalues of `mᵀm`.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let gram: Vec<Vec<f64>> = (0..m.ncols())
        .map(|i| {
            (0..m.ncols())
                .map(|j| m.column(i).dot(&m.column(j)))
                .collect()
        })
        .collect();
    jacobi_eigen(&gram)
        .0
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

/// Rank-`r` truncation built from the eigenvectors of `mᵀm`:
/// `Σ_{i<r} (m v_i) v_iᵀ`.
pub fn truncation(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let gram: Vec<Vec<f64>> = (0..m.ncols())
        .map(|i| {
            (0..m.ncols())
                .map(|j| m.column(i).dot(&m.column(j)))
                .collect()
        })
        .collect();
    let (_, vecs) = jacobi_eigen(&gram);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for v in vecs.iter().take(r) {
        let v = sdsim_core::DVector::from_column_slice(v);
        out += (m * &v) * v.transpose();
    }
    out
}
