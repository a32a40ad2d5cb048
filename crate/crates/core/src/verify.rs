//! Tangent-level checks at sampled critical points: the tangent space of the
//! graph of `dŪ`, its intersection with the tangent space of the vertical
//! polar, the image of the tangent map of κ and its isotropy, and the
//! dimension identities tying all of these to the rank of the family Hessian.
//!
//! Phase-space vectors are laid out as `(positions, momenta)`, so at a point
//! of `T*Q̄` a tangent vector is `(δq, δλ, δf_q, δf_λ)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::family::FamilySpec;
use crate::hessian::{analyze_point, classify_family, ClassificationEvidence, CrTangent, HessianOptions, HessianReport, RankSample};
use crate::linalg;
use crate::solver::CriticalPoint;
use crate::symplin::{self, SubspaceBasis, SubspaceKind, SymplecticSpace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub hessian: HessianOptions,
    /// Largest accepted `|ω(u, v)| / (|u| |v|)` over pairs of image basis vectors.
    pub isotropy_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            hessian: HessianOptions::default(),
            isotropy_tol: 1e-6,
        }
    }
}

/// Tangent space of the graph of `dŪ` at a point with full Hessian `full`:
/// `{(δx, full · δx)}`, Lagrangian because `full` is symmetric.
pub fn tangent_s_bar_from_hessian(full: &DMatrix<f64>, rank_tol: f64) -> SubspaceBasis {
    symplin::graph(full, rank_tol)
}

pub fn tangent_s_bar(fam: &FamilySpec, q: &[f64], lambda: &[f64], opts: &HessianOptions) -> Result<SubspaceBasis> {
    let jet = fam.jet(q, lambda)?;
    Ok(tangent_s_bar_from_hessian(&jet.hess_matrix(fam.n() + fam.k()), opts.rank_tol))
}

/// Tangent space of the vertical polar: all position directions and the
/// base momentum directions, dimension `2n + k`.
pub fn tangent_vertical_polar(n: usize, k: usize) -> SubspaceBasis {
    let d = n + k;
    let mut cols = DMatrix::zeros(2 * d, d + n);
    for i in 0..d {
        cols[(i, i)] = 1.0;
    }
    for i in 0..n {
        cols[(d + i, d + i)] = 1.0;
    }
    SubspaceBasis::from_matrix_columns(&cols, linalg::DEFAULT_RANK_TOL)
}

/// Vectors `(0, δλ, 0, 0)`: the kernel of the tangent of the reduction map.
pub fn reduction_kernel(n: usize, k: usize) -> SubspaceBasis {
    let d = n + k;
    let mut cols = DMatrix::zeros(2 * d, k);
    for j in 0..k {
        cols[(n + j, j)] = 1.0;
    }
    SubspaceBasis::from_matrix_columns(&cols, linalg::DEFAULT_RANK_TOL)
}

/// `{(t, full · t) : t ∈ T Cr}`, the tangent space of the critical part of the graph.
fn lifted_tangent(report: &HessianReport, tangent: &CrTangent) -> SubspaceBasis {
    let d = report.total_dim();
    let mut cols = DMatrix::zeros(2 * d, tangent.dim);
    cols.view_mut((0, 0), (d, tangent.dim)).copy_from(&tangent.basis);
    cols.view_mut((d, 0), (d, tangent.dim)).copy_from(&(&report.full * &tangent.basis));
    SubspaceBasis::from_matrix_columns(&cols, report.rank_tol)
}

/// Image of the tangent map of κ: `{(t_q, (full · t)_q) : t ∈ T Cr}` in R^{2n}.
///
/// The rank is decided against the operator scale `max(1, ‖full‖)`, so an
/// image made of negligible vectors has dimension 0.
pub fn tangent_kappa_image(report: &HessianReport, tangent: &CrTangent) -> SubspaceBasis {
    let (n, d) = (report.n, report.total_dim());
    let ht = &report.full * &tangent.basis;
    let mut cols = DMatrix::zeros(2 * n, tangent.dim);
    cols.view_mut((0, 0), (n, tangent.dim)).copy_from(&tangent.basis.rows(0, n));
    cols.view_mut((n, 0), (n, tangent.dim)).copy_from(&ht.rows(0, n));
    debug_assert_eq!(ht.nrows(), d);
    SubspaceBasis::from_matrix_columns_scaled(&cols, report.rank_tol, report.scale.max(1.0))
}

/// `max |ω(u, v)| / (|u| |v|)` over pairs of the supplied spanning vectors.
pub fn check_isotropy(space: &SymplecticSpace, basis: &SubspaceBasis) -> Result<f64> {
    let vs: Vec<(&Vec<f64>, f64)> = basis
        .vectors()
        .iter()
        .map(|v| (v, DVector::from_column_slice(v).norm()))
        .filter(|(_, n)| *n > 0.0)
        .collect();
    let mut worst = 0.0_f64;
    for (i, (u, nu)) in vs.iter().enumerate() {
        for (v, nv) in &vs[i + 1..] {
            worst = worst.max(space.omega(u, v)?.abs() / (nu * nv));
        }
    }
    Ok(worst)
}

/// Orthonormal basis vectors of `s`, as a spanning set.
fn orthonormal_span(s: &SubspaceBasis) -> SubspaceBasis {
    SubspaceBasis::from_matrix_columns(s.basis(), s.rank_tol())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVerification {
    pub rank: usize,
    pub kernel_dim: usize,
    pub cr_codim: usize,
    pub dim_tcr: usize,
    pub dim_im_tkappa: usize,
    pub isotropy_max_violation: f64,
    pub isotropic: bool,
    pub ts_bar_lagrangian: bool,
    pub dim_ts_cap_tv: usize,
    pub dim_ts_plus_tv: usize,
    /// Dimension of the reduction kernel inside the graph tangent space.
    pub dim_kernel_cap_ts: usize,
    pub clean_flag: bool,
    pub transverse_flag: bool,
    pub regular_flag: bool,
    pub morse_flag: bool,
}

/// All tangent-level checks at one critical point.
pub fn verify_point(fam: &FamilySpec, point: &CriticalPoint, opts: &VerifyOptions) -> Result<SampleVerification> {
    let (n, k) = (fam.n(), fam.k());
    let d = n + k;
    let (report, tangent) = analyze_point(fam, &point.q, &point.lambda, &opts.hessian)?;
    let big = SymplecticSpace::new(d)?;
    let ts = tangent_s_bar_from_hessian(&report.full, report.rank_tol);
    let tv = tangent_vertical_polar(n, k);
    let (cap, sum) = symplin::intersect_sum(&ts, &tv)?;
    let lifted = lifted_tangent(&report, &tangent);
    let clean_flag = cap.dim() == d - report.rank && symplin::is_clean(&ts, &tv, &lifted)?;
    let transverse_flag = sum.dim() == 2 * d;
    let (kernel_cap, _) = symplin::intersect_sum(&reduction_kernel(n, k), &ts)?;

    let image = orthonormal_span(&tangent_kappa_image(&report, &tangent));
    let isotropy_max_violation = check_isotropy(&SymplecticSpace::new(n)?, &image)?;
    Ok(SampleVerification {
        rank: report.rank,
        kernel_dim: report.kernel_dim,
        cr_codim: tangent.codim,
        dim_tcr: tangent.dim,
        dim_im_tkappa: image.dim(),
        isotropy_max_violation,
        isotropic: isotropy_max_violation <= opts.isotropy_tol,
        ts_bar_lagrangian: symplin::classify(&big, &ts)? == SubspaceKind::Lagrangian,
        dim_ts_cap_tv: cap.dim(),
        dim_ts_plus_tv: sum.dim(),
        dim_kernel_cap_ts: kernel_cap.dim(),
        clean_flag,
        transverse_flag,
        regular_flag: report.rank == tangent.codim,
        morse_flag: report.rank == k,
    })
}

/// Family-level verdicts over all samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    /// The graph tangent space is Lagrangian at every sample.
    pub ts_bar_lagrangian: bool,
    /// `dim(TS̄ ∩ TV°) = (n+k) − rank` and `dim(TS̄ + TV°) = 2(n+k) − (k − rank)` everywhere.
    pub intersection_dims: bool,
    /// The reduction kernel meets the graph tangent space in `k − rank` dimensions everywhere.
    pub kernel_dims: bool,
    /// The κ image is isotropic at every sample.
    pub isotropic: bool,
    /// Clean exactly at the samples of a family classified regular (or Morse).
    pub clean_matches_regular: bool,
    /// Transverse exactly where the Hessian has full rank `k`.
    pub transverse_matches_morse: bool,
    /// For regular or Morse families: image dimension `n` and isotropic at every
    /// sample. `None` when the family is neither.
    pub lagrangian_immersed: Option<bool>,
}

impl Verdicts {
    pub fn passed(&self) -> bool {
        self.ts_bar_lagrangian
            && self.intersection_dims
            && self.kernel_dims
            && self.isotropic
            && self.clean_matches_regular
            && self.transverse_matches_morse
            && self.lagrangian_immersed != Some(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub samples: Vec<SampleVerification>,
    pub classification: ClassificationEvidence,
    pub verdicts: Verdicts,
}

/// Verify every point (in parallel), classify, and combine the verdicts.
pub fn verify_samples(fam: &FamilySpec, points: &[CriticalPoint], opts: &VerifyOptions) -> Result<VerifyReport> {
    let samples: Vec<SampleVerification> = points
        .par_iter()
        .map(|p| verify_point(fam, p, opts))
        .collect::<Result<_>>()?;
    let ranks: Vec<RankSample> = points
        .iter()
        .zip(&samples)
        .map(|(p, s)| RankSample {
            branch_id: p.branch_id,
            rank: s.rank,
            fiber_dim: fam.k(),
            cr_codim: s.cr_codim,
        })
        .collect();
    let classification = classify_family(&ranks)?;
    let verdicts = combine(fam.n(), fam.k(), &samples, &classification);
    Ok(VerifyReport {
        samples,
        classification,
        verdicts,
    })
}

/// Recompute the family verdicts from per-sample data.
pub fn combine(n: usize, k: usize, samples: &[SampleVerification], classification: &ClassificationEvidence) -> Verdicts {
    let d = n + k;
    let regular = classification.classification.is_regular();
    Verdicts {
        ts_bar_lagrangian: samples.iter().all(|s| s.ts_bar_lagrangian),
        intersection_dims: samples
            .iter()
            .all(|s| s.dim_ts_cap_tv == d - s.rank && s.dim_ts_plus_tv + k == 2 * d + s.rank),
        kernel_dims: samples.iter().all(|s| s.dim_kernel_cap_ts == k - s.rank && s.kernel_dim == k - s.rank),
        isotropic: samples.iter().all(|s| s.isotropic),
        clean_matches_regular: samples.iter().all(|s| s.clean_flag == regular),
        transverse_matches_morse: samples.iter().all(|s| s.transverse_flag == (s.rank == k)),
        lagrangian_immersed: regular.then(|| samples.iter().all(|s| s.dim_im_tkappa == n && s.isotropic)),
    }
}
