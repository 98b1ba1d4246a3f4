//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues of a symmetric matrix, sorted ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut vals: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Largest eigenvalue of a symmetric matrix (0 for an empty matrix).
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Smallest eigenvalue of a symmetric matrix (0 for an empty matrix).
pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Largest absolute entry of `a - aᵀ`.
pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// `a ⊗ I_width`.
pub fn kron_identity(a: &DMatrix<f64>, width: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() * width, a.ncols() * width);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let v = a[(i, j)];
            if v != 0.0 {
                for s in 0..width {
                    out[(i * width + s, j * width + s)] = v;
                }
            }
        }
    }
    out
}

/// Block-diagonal assembly.
pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Concatenates vectors end to end.
pub fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.len()).copy_from(p);
        at += p.len();
    }
    out
}

/// Numerical rank from singular values, relative threshold `rel_tol`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_with_identity_places_scaled_identities() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron_identity(&a, 2);
        assert_eq!(k.nrows(), 4);
        assert_eq!(k[(0, 2)], 2.0);
        assert_eq!(k[(1, 3)], 2.0);
        assert_eq!(k[(0, 3)], 0.0);
        assert_eq!(k[(3, 1)], 3.0);
    }

    #[test]
    fn rank_of_rank_one_matrix() {
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &u * u.transpose();
        assert_eq!(numerical_rank(&m, 1e-12), 1);
        assert_eq!(numerical_rank(&DMatrix::<f64>::identity(3, 3), 1e-12), 3);
    }
}
