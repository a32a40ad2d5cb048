//! Small dense helpers built on a one-sided Jacobi SVD: numerical rank,
//! column range and null space. All rank decisions in the crate go through here.
//!
//! nalgebra's bidiagonal SVD occasionally returns factors that do not
//! reproduce the input (seen on rank-deficient 4x3 blocks), so it is not used.

use nalgebra::{DMatrix, DVector};

/// Default relative tolerance for numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// `m = u * diag(singular_values) * v^T`, singular values descending.
///
/// `u` is `rows x p` and `v` is `cols x cols`, with `p = cols`. Columns of `u`
/// belonging to singular values at rounding level are not meaningful (zero
/// for exact zeros). When `rows < cols` the trailing
/// singular values are zero and the matching columns of `v` span the rest of
/// the null space.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

const MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(m: &DMatrix<f64>) -> Svd {
    let (rows, cols) = m.shape();
    let work_rows = rows.max(cols);
    let mut a = DMatrix::zeros(work_rows, cols);
    a.view_mut((0, 0), (rows, cols)).copy_from(m);
    let mut v = DMatrix::<f64>::identity(cols, cols);
    // Columns below rounding level of the whole matrix are left alone; their
    // relative orthogonality cannot be resolved and they only feed zero
    // singular values.
    let negligible = (f64::EPSILON * m.norm()).powi(2);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if alpha <= negligible || beta <= negligible || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DMatrix::zeros(rows, cols);
    let mut v_sorted = DMatrix::zeros(cols, cols);
    for (dst, &src) in order.iter().enumerate() {
        if norms[src] > 0.0 {
            u.set_column(dst, &(a.column(src).rows(0, rows) / norms[src]));
        }
        v_sorted.set_column(dst, &v.column(src));
    }
    Svd {
        u,
        singular_values: order.iter().map(|&i| norms[i]).collect(),
        v: v_sorted,
    }
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, p)], m[(r, q)]);
        m[(r, p)] = c * x - s * y;
        m[(r, q)] = s * x + c * y;
    }
}

/// Singular values of `m` (any shape), descending. Empty matrices have none.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv = svd(m).singular_values;
    sv.truncate(m.nrows().min(m.ncols()));
    sv
}

/// Number of singular values above `rel_tol * scale`. `scale` defaults to the
/// largest singular value; a zero scale gives rank 0.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64, scale: Option<f64>) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    let scale = scale.unwrap_or(smax);
    if scale <= 0.0 || !scale.is_finite() {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * scale).count()
}

/// Orthonormal basis (as columns) for the column span of `m`.
pub fn column_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    column_basis_scaled(m, rel_tol, None)
}

/// Column span keeping left singular vectors with singular value above
/// `rel_tol * scale`; `scale` defaults to the largest singular value.
pub fn column_basis_scaled(m: &DMatrix<f64>, rel_tol: f64, scale: Option<f64>) -> DMatrix<f64> {
    let rows = m.nrows();
    if rows == 0 || m.ncols() == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let svd = svd(m);
    let u = &svd.u;
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    let scale = scale.unwrap_or(smax);
    if !(scale > 0.0) || smax <= 0.0 {
        return DMatrix::zeros(rows, 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rel_tol * scale)
        .collect();
    let cols: Vec<DVector<f64>> = keep.iter().map(|&i| u.column(i).into_owned()).collect();
    from_columns(rows, &cols)
}

/// Orthonormal basis (as columns) for the right null space of `m`.
///
/// Singular values at or below `rel_tol * scale` count as zero; `scale`
/// defaults to the largest singular value.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64, scale: Option<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(cols, cols);
    }
    let svd = svd(m);
    let sv = &svd.singular_values;
    let smax = sv.first().copied().unwrap_or(0.0);
    let scale = scale.unwrap_or(smax);
    let threshold = if scale > 0.0 && scale.is_finite() {
        rel_tol * scale
    } else {
        f64::INFINITY
    };
    let null: Vec<DVector<f64>> = (0..sv.len())
        .filter(|&i| !(sv[i] > threshold))
        .map(|i| svd.v.column(i).into_owned())
        .collect();
    from_columns(cols, &null)
}

pub fn from_columns(rows: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).into_iter().fold(0.0, f64::max)
}
