//! Family Hessian at a critical point, its rank and kernel, an estimate of the
//! local geometry of the critical set, and the Morse / regular / degenerate
//! classification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::{jet2_eval, Jet2, ScalarFunction};
use crate::error::{Error, Result};
use crate::family::{norm, FamilySpec};
use crate::linalg::{self, DEFAULT_RANK_TOL};
use crate::symplin::SubspaceBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Morse,
    Regular,
    Degenerate,
    IrregularNonconstantRank,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Morse => "morse",
            Classification::Regular => "regular",
            Classification::Degenerate => "degenerate",
            Classification::IrregularNonconstantRank => "irregular-nonconstant-rank",
        }
    }

    /// Morse families are regular too.
    pub fn is_regular(&self) -> bool {
        matches!(self, Classification::Morse | Classification::Regular)
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianOptions {
    /// Largest residual norm accepted as critical.
    pub residual_tol: f64,
    /// Relative rank tolerance, measured against the spectral norm of the full Hessian.
    pub rank_tol: f64,
    /// Step of the symmetric probes used to estimate the critical set's tangent space.
    pub probe_step: f64,
    /// Singular-value threshold separating tangent from normal probe responses.
    pub tangent_threshold: f64,
    /// Iteration cap of the projection onto the critical set.
    pub projection_iters: usize,
}

impl Default for HessianOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-8,
            rank_tol: DEFAULT_RANK_TOL,
            probe_step: 1e-4,
            tangent_threshold: 0.5,
            projection_iters: 200,
        }
    }
}

/// Coordinate Hessian data at a critical point `(q, λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianReport {
    pub n: usize,
    pub k: usize,
    /// `(n+k) × (n+k)` Hessian of `Ū`.
    pub full: DMatrix<f64>,
    /// Last `k` rows of `full`.
    pub m: DMatrix<f64>,
    pub rank: usize,
    pub kernel_dim: usize,
    /// Codimension of the critical set near the point, when estimated.
    pub cr_codim_estimate: Option<usize>,
    pub classification: Option<Classification>,
    /// Reference magnitude used for the rank decision.
    pub scale: f64,
    pub rank_tol: f64,
}

impl HessianReport {
    pub fn total_dim(&self) -> usize {
        self.n + self.k
    }

    pub fn is_morse_point(&self) -> bool {
        self.rank == self.k
    }

    /// Numerical rank of `mat` under this report's tolerance and scale.
    pub fn rank_of(&self, mat: &DMatrix<f64>) -> usize {
        linalg::numerical_rank(mat, self.rank_tol, Some(self.scale))
    }

    /// Orthonormal basis of `ker M` in the total space, as columns.
    pub fn null_m(&self) -> DMatrix<f64> {
        linalg::null_space(&self.m, self.rank_tol, Some(self.scale))
    }
}

/// Hessian of the family at a critical point; classification is left unset.
pub fn family_hessian(fam: &FamilySpec, q: &[f64], lambda: &[f64], opts: &HessianOptions) -> Result<HessianReport> {
    let jet = fam.jet(q, lambda)?;
    let (n, k) = (fam.n(), fam.k());
    let residual = norm(&jet.grad()[n..]);
    if !(residual <= opts.residual_tol) {
        return Err(Error::NotCritical { residual, tol: opts.residual_tol });
    }
    Ok(report_from_jet(&jet, n, k, opts.rank_tol))
}

fn report_from_jet(jet: &Jet2, n: usize, k: usize, rank_tol: f64) -> HessianReport {
    let full = jet.hess_matrix(n + k);
    let m = full.rows(n, k).into_owned();
    let scale = linalg::spectral_norm(&full);
    let rank = linalg::numerical_rank(&m, rank_tol, Some(scale));
    HessianReport {
        n,
        k,
        full,
        m,
        rank,
        kernel_dim: k - rank,
        cr_codim_estimate: None,
        classification: None,
        scale,
        rank_tol,
    }
}

/// Kernel of the family Hessian: vertical vectors `(0, δλ)` with `δλᵀ M = 0`.
pub fn hessian_kernel(report: &HessianReport) -> SubspaceBasis {
    let d = report.total_dim();
    let left = linalg::null_space(&report.m.transpose(), report.rank_tol, Some(report.scale));
    let vectors = left
        .column_iter()
        .map(|c| {
            let mut v = vec![0.0; d];
            v[report.n..].copy_from_slice(c.as_slice());
            v
        })
        .collect();
    SubspaceBasis::new(d, vectors, report.rank_tol).expect("kernel vectors have the ambient length")
}

/// Local tangent data of the critical set at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct CrTangent {
    pub dim: usize,
    pub codim: usize,
    /// Orthonormal basis of the tangent space, as columns of an `(n+k) × dim` matrix.
    pub basis: DMatrix<f64>,
}

/// Project `x` onto the critical set by minimum-norm Gauss-Newton steps in
/// the joint `(q, λ)` coordinates. The Jacobian of the residual map is `M`.
pub fn project_to_critical(fam: &FamilySpec, x: &[f64], opts: &HessianOptions) -> Result<Vec<f64>> {
    gauss_newton_project(fam, x, opts.rank_tol, opts.residual_tol, opts.projection_iters).map(|(x, _)| x)
}

/// Gauss-Newton projection; returns the point and the number of steps taken.
/// Iterates until the step is negligible (so that linearly convergent
/// degenerate cases still get close), then checks the residual.
pub(crate) fn gauss_newton_project(
    fam: &FamilySpec,
    x0: &[f64],
    rank_tol: f64,
    residual_tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize)> {
    let (n, k) = (fam.n(), fam.k());
    let mut x = DVector::from_column_slice(x0);
    let mut iters = 0;
    while iters < max_iters {
        let jet = jet2_eval(fam, x.as_slice())?;
        let r = DVector::from_column_slice(&jet.grad()[n..]);
        if r.iter().all(|v| *v == 0.0) {
            break;
        }
        let m = jet.hess_matrix(n + k).rows(n, k).into_owned();
        // Cut-off relative to the Jacobian itself, so that a small but nonzero
        // M near a degenerate critical set still drives the residual down.
        let step = pseudo_solve(&m, &r, rank_tol, linalg::spectral_norm(&m));
        let step_norm = step.norm();
        x -= step;
        iters += 1;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::ProjectionFailed { residual: f64::NAN });
        }
        if step_norm <= 1e-15 * (1.0 + x.norm()) {
            break;
        }
    }
    let residual = norm(&fam.residual(&x.as_slice()[..n], &x.as_slice()[n..])?);
    if residual <= residual_tol {
        Ok((x.as_slice().to_vec(), iters))
    } else {
        Err(Error::ProjectionFailed { residual })
    }
}

/// Minimum-norm least-squares solution of `a · s = b`, dropping singular
/// values at or below `rel_tol · scale`.
pub(crate) fn pseudo_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64, scale: f64) -> DVector<f64> {
    let cols = a.ncols();
    if a.nrows() == 0 || cols == 0 {
        return DVector::zeros(cols);
    }
    let svd = linalg::svd(a);
    let (u, v) = (&svd.u, &svd.v);
    let mut out = DVector::zeros(cols);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * scale && s > 0.0 {
            let coef = u.column(i).dot(b) / s;
            out += v.column(i) * coef;
        }
    }
    out
}

/// Estimate the tangent space of the critical set at a critical point from
/// symmetric probes `x ± h eᵢ` projected back onto the set.
///
/// The derivative of the projection at a point of a smooth critical set is
/// the orthogonal projector onto its tangent space, so the probe responses
/// have singular values near 1 along tangent directions and near 0 across.
/// The tangent basis is taken inside `ker M`, which always contains it.
pub fn estimate_cr_tangent(
    fam: &FamilySpec,
    q: &[f64],
    lambda: &[f64],
    report: &HessianReport,
    opts: &HessianOptions,
) -> Result<CrTangent> {
    let d = fam.n() + fam.k();
    let x = fam.point(q, lambda)?;
    let h = opts.probe_step;
    let mut responses = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut plus = x.clone();
        plus[i] += h;
        let mut minus = x.clone();
        minus[i] -= h;
        let pp = project_to_critical(fam, &plus, opts)?;
        let pm = project_to_critical(fam, &minus, opts)?;
        for r in 0..d {
            responses[(r, i)] = (pp[r] - pm[r]) / (2.0 * h);
        }
    }
    let svd = linalg::svd(&responses);
    let u = &svd.u;
    let tangent: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > opts.tangent_threshold)
        .map(|i| u.column(i).into_owned())
        .collect();
    let dim = tangent.len();
    let null_m = report.null_m();
    let basis = if null_m.ncols() == dim {
        null_m
    } else {
        let projected: Vec<DVector<f64>> = tangent.iter().map(|t| &null_m * (null_m.transpose() * t)).collect();
        linalg::column_basis(&linalg::from_columns(d, &projected), 1e-6)
    };
    let dim = basis.ncols();
    Ok(CrTangent {
        dim,
        codim: d - dim,
        basis,
    })
}

/// Hessian report with the critical-set codimension filled in.
pub fn analyze_point(
    fam: &FamilySpec,
    q: &[f64],
    lambda: &[f64],
    opts: &HessianOptions,
) -> Result<(HessianReport, CrTangent)> {
    let mut report = family_hessian(fam, q, lambda, opts)?;
    let tangent = estimate_cr_tangent(fam, q, lambda, &report, opts)?;
    report.cr_codim_estimate = Some(tangent.codim);
    Ok((report, tangent))
}

/// Rank data of one critical sample, as needed for classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankSample {
    pub branch_id: usize,
    pub rank: usize,
    pub fiber_dim: usize,
    pub cr_codim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchEvidence {
    pub branch_id: usize,
    pub samples: usize,
    pub ranks: BTreeSet<usize>,
    pub codims: BTreeSet<usize>,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationEvidence {
    pub classification: Classification,
    pub branches: Vec<BranchEvidence>,
}

fn classify_branch(samples: &[RankSample]) -> Classification {
    let ranks: BTreeSet<usize> = samples.iter().map(|s| s.rank).collect();
    let codims: BTreeSet<usize> = samples.iter().map(|s| s.cr_codim).collect();
    if samples.iter().all(|s| s.rank == s.fiber_dim) {
        return Classification::Morse;
    }
    if ranks.len() == 1 && codims.len() == 1 {
        let (rank, codim) = (*ranks.first().unwrap(), *codims.first().unwrap());
        if rank == codim {
            return Classification::Regular;
        }
        if rank < codim {
            return Classification::Degenerate;
        }
    }
    Classification::IrregularNonconstantRank
}

/// Classify per branch, then globally: branches must agree, otherwise the
/// family is irregular.
pub fn classify_family(samples: &[RankSample]) -> Result<ClassificationEvidence> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut by_branch: BTreeMap<usize, Vec<RankSample>> = BTreeMap::new();
    for s in samples {
        by_branch.entry(s.branch_id).or_default().push(*s);
    }
    let branches: Vec<BranchEvidence> = by_branch
        .into_iter()
        .map(|(branch_id, group)| BranchEvidence {
            branch_id,
            samples: group.len(),
            ranks: group.iter().map(|s| s.rank).collect(),
            codims: group.iter().map(|s| s.cr_codim).collect(),
            classification: classify_branch(&group),
        })
        .collect();
    let first = branches[0].classification;
    let classification = if branches.iter().all(|b| b.classification == first) {
        first
    } else {
        Classification::IrregularNonconstantRank
    };
    Ok(ClassificationEvidence { classification, branches })
}

/// Hessian of a function on the base at a critical point, or the relative
/// Hessian of `f − reference` at a point where the two differentials agree.
pub fn function_hessian(
    f: &dyn ScalarFunction,
    q: &[f64],
    reference: Option<&dyn ScalarFunction>,
    grad_tol: f64,
) -> Result<DMatrix<f64>> {
    let n = q.len();
    let mut jet = jet2_eval(f, q)?;
    if let Some(r) = reference {
        jet = jet - jet2_eval(r, q)?;
    }
    let g = norm(jet.grad());
    if !(g <= grad_tol) {
        return Err(Error::NotCritical { residual: g, tol: grad_tol });
    }
    Ok(jet.hess_matrix(n))
}
