//! Linear symplectic algebra on R^{2m}.
//!
//! Vectors are laid out as `(δq, δp)`: the first `m` entries are position
//! components and the last `m` are momentum components. The canonical form is
//!
//! ```text
//! ω((δq1, δp1), (δq2, δp2)) = ⟨δp1, δq2⟩ − ⟨δp2, δq1⟩
//! ```
//!
//! so that `ω(e_q, e_p) = −1` for a base direction `e_q` and its conjugate
//! momentum `e_p`. Pairing a horizontal vector against a vertical one,
//! `ω((δq, 0), (0, f')) = −⟨f', δq⟩`. Every subspace computation in the crate
//! uses this orientation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_RANK_TOL};

/// Residual bound for subspace containment and equality tests.
pub const SUBSPACE_EQ_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymplecticSpace {
    m: usize,
}

impl SymplecticSpace {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter(
                "symplectic half-dimension must be positive".into(),
            ));
        }
        Ok(Self { m })
    }

    pub fn half_dim(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        2 * self.m
    }

    /// Matrix `Ω` with `ω(u, v) = uᵀ Ω v`.
    pub fn form_matrix(&self) -> DMatrix<f64> {
        let m = self.m;
        let mut om = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            om[(i, m + i)] = -1.0;
            om[(m + i, i)] = 1.0;
        }
        om
    }

    pub fn omega(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check(u.len())?;
        self.check(v.len())?;
        let m = self.m;
        let (uq, up) = u.split_at(m);
        let (vq, vp) = v.split_at(m);
        let a: f64 = up.iter().zip(vq).map(|(p, q)| p * q).sum();
        let b: f64 = vp.iter().zip(uq).map(|(p, q)| p * q).sum();
        Ok(a - b)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }
}

/// A linear subspace given by spanning vectors. The orthonormal basis is
/// computed once at construction; its column count is the numerical rank of
/// the spanning set at `rank_tol`.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    ambient_dim: usize,
    vectors: Vec<Vec<f64>>,
    rank_tol: f64,
    basis: DMatrix<f64>,
}

impl SubspaceBasis {
    pub fn new(ambient_dim: usize, vectors: Vec<Vec<f64>>, rank_tol: f64) -> Result<Self> {
        for v in &vectors {
            if v.len() != ambient_dim {
                return Err(Error::DimensionMismatch {
                    expected: ambient_dim,
                    got: v.len(),
                });
            }
        }
        let cols: Vec<DVector<f64>> = vectors.iter().map(|v| DVector::from_column_slice(v)).collect();
        let m = linalg::from_columns(ambient_dim, &cols);
        let basis = linalg::column_basis(&m, rank_tol);
        Ok(Self {
            ambient_dim,
            vectors,
            rank_tol,
            basis,
        })
    }

    /// Subspace spanned by the columns of `m`.
    pub fn from_matrix_columns(m: &DMatrix<f64>, rank_tol: f64) -> Self {
        let vectors = m.column_iter().map(|c| c.iter().copied().collect()).collect();
        Self {
            ambient_dim: m.nrows(),
            vectors,
            rank_tol,
            basis: linalg::column_basis(m, rank_tol),
        }
    }

    /// Subspace spanned by the columns of `m`, with rank decided against an
    /// absolute `scale` instead of the largest singular value. Use when the
    /// spanning vectors can all be negligible.
    pub fn from_matrix_columns_scaled(m: &DMatrix<f64>, rank_tol: f64, scale: f64) -> Self {
        let vectors = m.column_iter().map(|c| c.iter().copied().collect()).collect();
        Self {
            ambient_dim: m.nrows(),
            vectors,
            rank_tol,
            basis: linalg::column_basis_scaled(m, rank_tol, Some(scale)),
        }
    }

    fn from_orthonormal(basis: DMatrix<f64>, rank_tol: f64) -> Self {
        let vectors = basis.column_iter().map(|c| c.iter().copied().collect()).collect();
        Self {
            ambient_dim: basis.nrows(),
            vectors,
            rank_tol,
            basis,
        }
    }

    pub fn zero(ambient_dim: usize) -> Self {
        Self::from_orthonormal(DMatrix::zeros(ambient_dim, 0), DEFAULT_RANK_TOL)
    }

    pub fn full(ambient_dim: usize) -> Self {
        Self::from_orthonormal(DMatrix::identity(ambient_dim, ambient_dim), DEFAULT_RANK_TOL)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// The spanning vectors as supplied.
    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Orthonormal basis, one vector per column.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Largest residual of `v` after orthogonal projection onto this subspace,
    /// relative to `|v|`.
    pub fn residual_of(&self, v: &DVector<f64>) -> f64 {
        let norm = v.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let proj = &self.basis * (self.basis.transpose() * v);
        (v - proj).norm() / norm
    }

    pub fn contains_vector(&self, v: &[f64]) -> bool {
        v.len() == self.ambient_dim && self.residual_of(&DVector::from_column_slice(v)) <= SUBSPACE_EQ_TOL
    }

    /// `other ⊆ self`, tested on the orthonormal basis of `other`.
    pub fn contains(&self, other: &SubspaceBasis) -> bool {
        if other.ambient_dim != self.ambient_dim {
            return false;
        }
        other
            .basis
            .column_iter()
            .all(|c| self.residual_of(&c.into_owned()) <= SUBSPACE_EQ_TOL)
    }

    pub fn same_subspace(&self, other: &SubspaceBasis) -> bool {
        self.dim() == other.dim() && self.contains(other) && other.contains(self)
    }

    fn check_ambient(&self, other: &SubspaceBasis) -> Result<()> {
        if self.ambient_dim != other.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                got: other.ambient_dim,
            });
        }
        Ok(())
    }
}

/// Symplectic polar `{u : ω(u, v) = 0 for all v ∈ V}`.
pub fn polar(space: &SymplecticSpace, v: &SubspaceBasis) -> Result<SubspaceBasis> {
    space.check(v.ambient_dim)?;
    // Rows of (Ω B)^T; orthonormal since Ω is orthogonal.
    let pairing = (space.form_matrix() * v.basis()).transpose();
    let null = if pairing.nrows() == 0 {
        DMatrix::identity(space.dim(), space.dim())
    } else {
        linalg::null_space(&pairing, v.rank_tol, Some(1.0))
    };
    Ok(SubspaceBasis::from_orthonormal(null, v.rank_tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubspaceKind {
    Lagrangian,
    Isotropic,
    Symplectic,
    Coisotropic,
    Generic,
}

/// All containment relations between `V` and its polar. A subspace may have
/// several (the whole space is both symplectic and coisotropic).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubspaceClass {
    pub isotropic: bool,
    pub coisotropic: bool,
    pub symplectic: bool,
}

impl SubspaceClass {
    pub fn lagrangian(&self) -> bool {
        self.isotropic && self.coisotropic
    }

    /// Most specific kind: lagrangian, then isotropic, symplectic, coisotropic.
    pub fn kind(&self) -> SubspaceKind {
        if self.lagrangian() {
            SubspaceKind::Lagrangian
        } else if self.isotropic {
            SubspaceKind::Isotropic
        } else if self.symplectic {
            SubspaceKind::Symplectic
        } else if self.coisotropic {
            SubspaceKind::Coisotropic
        } else {
            SubspaceKind::Generic
        }
    }
}

pub fn classify_relations(space: &SymplecticSpace, v: &SubspaceBasis) -> Result<SubspaceClass> {
    let p = polar(space, v)?;
    let (cap, _) = intersect_sum(v, &p)?;
    Ok(SubspaceClass {
        isotropic: p.contains(v),
        coisotropic: v.contains(&p),
        symplectic: cap.dim() == 0,
    })
}

pub fn classify(space: &SymplecticSpace, v: &SubspaceBasis) -> Result<SubspaceKind> {
    Ok(classify_relations(space, v)?.kind())
}

/// Intersection and sum of two subspaces, from the SVD of `[A, −B]` with a
/// single threshold, so that `dim A + dim B = dim(A ∩ B) + dim(A + B)` holds
/// by construction.
pub fn intersect_sum(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<(SubspaceBasis, SubspaceBasis)> {
    a.check_ambient(b)?;
    let tol = a.rank_tol.max(b.rank_tol);
    let n = a.ambient_dim;
    let (da, db) = (a.dim(), b.dim());
    if da + db == 0 {
        return Ok((SubspaceBasis::zero(n), SubspaceBasis::zero(n)));
    }
    let mut stacked = DMatrix::zeros(n, da + db);
    stacked.view_mut((0, 0), (n, da)).copy_from(a.basis());
    stacked.view_mut((0, da), (n, db)).copy_from(&(-b.basis()));

    // Singular values of a stack of two orthonormal blocks lie in [0, √2].
    let sum = linalg::column_basis_scaled(&stacked, tol, Some(1.0));
    let null = linalg::null_space(&stacked, tol, Some(1.0));
    debug_assert_eq!(sum.ncols() + null.ncols(), da + db);
    // For a null vector (a; b) of [A, −B], Aa = Bb and |a| = |b| = 1/√2, so
    // √2·A·a is an orthonormal basis of the intersection.
    let cap = (a.basis() * null.rows(0, da)) * std::f64::consts::SQRT_2;
    Ok((
        SubspaceBasis::from_orthonormal(cap, tol),
        SubspaceBasis::from_orthonormal(sum, tol),
    ))
}

/// `C_given = A ∩ B` as subspaces.
pub fn is_clean(a: &SubspaceBasis, b: &SubspaceBasis, c_given: &SubspaceBasis) -> Result<bool> {
    let (cap, _) = intersect_sum(a, b)?;
    Ok(cap.same_subspace(c_given))
}

/// `A + B` is the whole space.
pub fn is_transverse(space: &SymplecticSpace, a: &SubspaceBasis, b: &SubspaceBasis) -> Result<bool> {
    space.check(a.ambient_dim)?;
    let (_, sum) = intersect_sum(a, b)?;
    Ok(sum.dim() == space.dim())
}

/// Graph `{(x, S x)}` of a square matrix `S`, as a subspace of R^{2m}.
pub fn graph(s: &DMatrix<f64>, rank_tol: f64) -> SubspaceBasis {
    let m = s.nrows();
    let mut cols = DMatrix::zeros(2 * m, m);
    cols.view_mut((0, 0), (m, m)).fill_with_identity();
    cols.view_mut((m, 0), (m, m)).copy_from(s);
    SubspaceBasis::from_matrix_columns(&cols, rank_tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(n: usize, vs: &[&[f64]]) -> SubspaceBasis {
        SubspaceBasis::new(n, vs.iter().map(|v| v.to_vec()).collect(), DEFAULT_RANK_TOL).unwrap()
    }

    #[test]
    fn omega_examples() {
        let s1 = SymplecticSpace::new(1).unwrap();
        assert_eq!(s1.omega(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), -1.0);
        assert_eq!(s1.omega(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        let s2 = SymplecticSpace::new(2).unwrap();
        assert_eq!(s2.omega(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn omega_rejects_wrong_length() {
        let s = SymplecticSpace::new(2).unwrap();
        assert!(matches!(
            s.omega(&[1.0, 0.0], &[0.0, 1.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn horizontal_vertical_pairing_sign() {
        // ω((δq,0),(0,f')) = −⟨f', δq⟩
        let s = SymplecticSpace::new(2).unwrap();
        let w = s.omega(&[1.0, 2.0, 0.0, 0.0], &[0.0, 0.0, 3.0, -1.0]).unwrap();
        assert_eq!(w, -(3.0 * 1.0 + -1.0 * 2.0));
    }

    #[test]
    fn form_matrix_matches_omega() {
        let s = SymplecticSpace::new(2).unwrap();
        let u = [0.3, -1.0, 2.0, 0.5];
        let v = [1.5, 0.2, -0.7, 1.1];
        let om = s.form_matrix();
        let via_matrix = (DVector::from_row_slice(&u).transpose() * om * DVector::from_row_slice(&v))[0];
        assert!((via_matrix - s.omega(&u, &v).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn polar_examples() {
        let s1 = SymplecticSpace::new(1).unwrap();
        let line = span(2, &[&[1.0, 0.0]]);
        assert!(polar(&s1, &line).unwrap().same_subspace(&line));
        assert_eq!(polar(&s1, &SubspaceBasis::zero(2)).unwrap().dim(), 2);

        // Brute force: u ∈ polar iff ω(u, e1) = 0, i.e. u_p1 = 0.
        let s2 = SymplecticSpace::new(2).unwrap();
        let v = span(4, &[&[1.0, 0.0, 0.0, 0.0]]);
        let p = polar(&s2, &v).unwrap();
        assert_eq!(p.dim(), 3);
        assert!(p.contains(&v));
        let expected = span(4, &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0]]);
        assert!(p.same_subspace(&expected));
    }

    #[test]
    fn classify_examples() {
        let s1 = SymplecticSpace::new(1).unwrap();
        assert_eq!(classify(&s1, &span(2, &[&[1.0, 0.0]])).unwrap(), SubspaceKind::Lagrangian);
        let s2 = SymplecticSpace::new(2).unwrap();
        assert_eq!(classify(&s2, &span(4, &[&[1.0, 0.0, 0.0, 0.0]])).unwrap(), SubspaceKind::Isotropic);
        let full = classify_relations(&s1, &SubspaceBasis::full(2)).unwrap();
        assert_eq!(full.kind(), SubspaceKind::Symplectic);
        assert!(full.coisotropic);
        // A symplectic plane in R^4: span{e_q1, e_p1}.
        assert_eq!(
            classify(&s2, &span(4, &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]])).unwrap(),
            SubspaceKind::Symplectic
        );
        // Three-dimensional: coisotropic.
        assert_eq!(
            classify(
                &s2,
                &span(4, &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]])
            )
            .unwrap(),
            SubspaceKind::Coisotropic
        );
    }

    #[test]
    fn intersect_sum_examples() {
        let a = span(2, &[&[1.0, 0.0]]);
        let b = span(2, &[&[0.0, 1.0]]);
        let (cap, sum) = intersect_sum(&a, &b).unwrap();
        assert_eq!((cap.dim(), sum.dim()), (0, 2));

        let (cap, sum) = intersect_sum(&a, &a).unwrap();
        assert!(cap.same_subspace(&a) && sum.same_subspace(&a));

        // Row reduction by hand: A ∩ B = span{e2}, A + B = span{e1, e2, e3}.
        let a = span(4, &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]);
        let b = span(4, &[&[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]]);
        let (cap, sum) = intersect_sum(&a, &b).unwrap();
        assert!(cap.same_subspace(&span(4, &[&[0.0, 1.0, 0.0, 0.0]])));
        assert_eq!(sum.dim(), 3);
        assert!(sum.contains(&a) && sum.contains(&b));
    }

    #[test]
    fn clean_and_transverse_examples() {
        let a = span(2, &[&[1.0, 0.0]]);
        let b = span(2, &[&[0.0, 1.0]]);
        assert!(is_clean(&a, &a, &a).unwrap());
        assert!(is_clean(&a, &b, &SubspaceBasis::zero(2)).unwrap());
        assert!(!is_clean(&a, &b, &a).unwrap());
        let s1 = SymplecticSpace::new(1).unwrap();
        assert!(is_transverse(&s1, &a, &b).unwrap());
        assert!(!is_transverse(&s1, &a, &a).unwrap());
    }

    #[test]
    fn graph_of_symmetric_matrix_is_lagrangian() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 0.5]);
        let sp = SymplecticSpace::new(2).unwrap();
        assert_eq!(classify(&sp, &graph(&s, DEFAULT_RANK_TOL)).unwrap(), SubspaceKind::Lagrangian);
        let ns = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_ne!(classify(&sp, &graph(&ns, DEFAULT_RANK_TOL)).unwrap(), SubspaceKind::Lagrangian);
    }

    #[test]
    fn orthonormalized_basis_is_orthogonal() {
        let v = span(3, &[&[1.0, 1.0, 0.0], &[1.0, 2.0, 0.0], &[2.0, 3.0, 0.0]]);
        assert_eq!(v.dim(), 2);
        let g = v.basis().transpose() * v.basis();
        assert!((g - DMatrix::identity(2, 2)).amax() < 1e-12);
    }
}
