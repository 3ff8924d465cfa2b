//! Small dense linear-algebra helpers shared by the rank tests.

use nalgebra::{DMatrix, DVector};

/// Singular values (descending) and the full right singular basis of `m`.
///
/// nalgebra's thin SVD of a wide matrix does not expose the null space, so
/// wide inputs are padded with zero rows to make `V` square.
pub fn svd_full_v(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let cols = m.ncols();
    let padded = if m.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("SVD requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    let sigmas: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v_sorted = DMatrix::zeros(v_t.nrows(), v_t.ncols());
    for (row, &i) in order.iter().enumerate() {
        v_sorted.set_row(row, &v_t.row(i));
    }
    (sigmas, v_sorted)
}

/// Number of singular values above `rel_tol` times the largest one.
pub fn numeric_rank(sigmas: &[f64], rel_tol: f64) -> usize {
    let max = sigmas.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    sigmas.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Orthonormal basis of the subspace orthogonal to every row of `rows`.
///
/// Rows are treated as directions; zero rows are ignored.
pub fn orthogonal_complement(rows: &[DVector<f64>], dim: usize, rel_tol: f64) -> Vec<DVector<f64>> {
    let nonzero: Vec<&DVector<f64>> = rows.iter().filter(|r| r.norm() > 0.0).collect();
    if nonzero.is_empty() {
        return (0..dim)
            .map(|i| {
                let mut e = DVector::zeros(dim);
                e[i] = 1.0;
                e
            })
            .collect();
    }
    let mut m = DMatrix::zeros(nonzero.len(), dim);
    for (i, r) in nonzero.iter().enumerate() {
        m.set_row(i, &(*r / r.norm()).transpose());
    }
    let (sigmas, v) = svd_full_v(&m);
    let rank = numeric_rank(&sigmas, rel_tol);
    (rank..dim).map(|i| v.row(i).transpose()).collect()
}

/// Unit vector spanning the null space of the stacked rows, when the rows
/// have rank exactly `dim - 1`. Returns the rank and the vector if so.
pub fn one_dim_nullvector(
    m: &DMatrix<f64>,
    rel_tol: f64,
) -> (usize, Option<DVector<f64>>) {
    let dim = m.ncols();
    let (sigmas, v) = svd_full_v(m);
    let rank = numeric_rank(&sigmas, rel_tol);
    if rank + 1 == dim {
        (rank, Some(v.row(dim - 1).transpose()))
    } else {
        (rank, None)
    }
}

/// Flip the sign so the first coordinate with magnitude above `tol` is
/// positive. Identity for the zero vector.
pub fn canonical_sign(mut v: DVector<f64>, tol: f64) -> DVector<f64> {
    if let Some(first) = v.iter().find(|x| x.abs() > tol) {
        if *first < 0.0 {
            v = -v;
        }
    }
    v
}

/// |cosine| of the angle between two vectors (0 when either is zero).
pub fn abs_cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_of_two_axes() {
        let rows = vec![
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
        ];
        let basis = orthogonal_complement(&rows, 3, 1e-10);
        assert_eq!(basis.len(), 1);
        assert!((basis[0][2].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nullvector_of_plane() {
        // rows spanning the plane x0 = 0
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0],
        );
        let (rank, v) = one_dim_nullvector(&m, 1e-10);
        assert_eq!(rank, 2);
        let v = v.unwrap();
        assert!(v[0].abs() > 1.0 - 1e-12);
    }

    #[test]
    fn rank_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let (sigmas, v) = svd_full_v(&m);
        assert_eq!(numeric_rank(&sigmas, 1e-12), 1);
        assert_eq!(v.nrows(), 4);
    }
}
