//! Critical points of a family: Newton on the fiber, multistart with
//! deduplication, joint projection onto the critical set, and continuation of
//! branches along a path of base points.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{norm, FamilySpec};
use crate::hessian::gauss_newton_project;
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub newton_tol: f64,
    pub max_iters: usize,
    pub seeds: usize,
    /// Per-coordinate `[lo, hi]` seed box for `λ`. Falls back to the family's
    /// preferred box, then to `[-2, 2]^k`.
    pub seed_box: Option<Vec<[f64; 2]>>,
    pub dedup_radius: f64,
    /// Largest base-point step taken by continuation; longer steps are subdivided.
    pub continuation_step: f64,
    pub rng_seed: u64,
    pub rank_tol: f64,
    /// Tikhonov damping of the Newton step, relative to the squared norm of the block.
    pub damping: f64,
    /// Relative threshold below which a vertical-vertical eigenvalue counts as zero for fold detection.
    pub fold_tol: f64,
    /// A continuation step whose κ change rate exceeds this multiple of the largest previous rate is a jump.
    pub jump_factor: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            max_iters: 50,
            seeds: 32,
            seed_box: None,
            dedup_radius: 1e-6,
            continuation_step: 0.25,
            rng_seed: 0,
            rank_tol: linalg::DEFAULT_RANK_TOL,
            damping: 1e-10,
            fold_tol: 1e-6,
            jump_factor: 10.0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("newton_tol", self.newton_tol),
            ("dedup_radius", self.dedup_radius),
            ("continuation_step", self.continuation_step),
            ("rank_tol", self.rank_tol),
            ("fold_tol", self.fold_tol),
            ("jump_factor", self.jump_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("solve.{name} must be positive, got {v}")));
            }
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::InvalidParameter("solve.damping must be non-negative".into()));
        }
        if self.seeds == 0 {
            return Err(Error::InvalidParameter("solve.seeds must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("solve.max_iters must be at least 1".into()));
        }
        if let Some(b) = &self.seed_box {
            if b.iter().any(|[lo, hi]| !(lo <= hi && lo.is_finite() && hi.is_finite())) {
                return Err(Error::InvalidParameter("solve.seed_box entries must be finite [lo, hi] with lo <= hi".into()));
            }
        }
        Ok(())
    }

    fn resolved_box(&self, fam: &FamilySpec) -> Result<Vec<[f64; 2]>> {
        let k = fam.k();
        let b = match &self.seed_box {
            Some(b) => b.clone(),
            None => fam
                .energy()
                .seed_box()
                .map(|b| b.into_iter().map(|(lo, hi)| [lo, hi]).collect())
                .unwrap_or_else(|| vec![[-2.0, 2.0]; k]),
        };
        if b.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: b.len() });
        }
        Ok(b)
    }
}

/// A point of the critical set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
    pub residual_norm: f64,
    pub branch_id: usize,
    pub newton_iters: usize,
}

#[derive(Debug)]
pub enum NewtonFailure {
    /// Iteration cap reached, or the iterate left the finite range.
    Diverged { iters: usize, residual: f64 },
    /// Converged onto a point where the fiber chart is singular.
    ChartSingular { lambda: Vec<f64> },
    /// The step vanished while the residual did not: no critical point reachable along the fiber.
    Stagnated { iters: usize, residual: f64 },
    Domain(Error),
}

impl fmt::Display for NewtonFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NewtonFailure::Diverged { iters, residual } => {
                write!(f, "diverged after {iters} iterations (residual {residual:e})")
            }
            NewtonFailure::Stagnated { iters, residual } => {
                write!(f, "stagnated after {iters} iterations (residual {residual:e})")
            }
            NewtonFailure::ChartSingular { lambda } => write!(f, "converged onto a chart singularity at λ = {lambda:?}"),
            NewtonFailure::Domain(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for NewtonFailure {}

impl From<Error> for NewtonFailure {
    fn from(e: Error) -> Self {
        NewtonFailure::Domain(e)
    }
}

/// Damped pseudo-inverse solve of `a · s = r`:
/// `s = Σ σᵢ / (σᵢ² + μ) (uᵢᵀ r) vᵢ` over singular values above `rank_tol · σmax`,
/// with `μ = damping · σmax²`.
fn damped_step(a: &DMatrix<f64>, r: &DVector<f64>, rank_tol: f64, damping: f64) -> DVector<f64> {
    let cols = a.ncols();
    if cols == 0 {
        return DVector::zeros(0);
    }
    let svd = linalg::svd(a);
    let (u, v) = (&svd.u, &svd.v);
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    let mu = damping * smax * smax;
    let mut out = DVector::zeros(cols);
    if smax == 0.0 {
        return out;
    }
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rank_tol * smax {
            out += v.column(i) * (s / (s * s + mu) * u.column(i).dot(r));
        }
    }
    out
}

/// Newton's method on the residual over a fixed base point `q`, using the
/// `k × k` vertical-vertical Hessian block.
pub fn newton_solve(
    fam: &FamilySpec,
    q: &[f64],
    lambda0: &[f64],
    cfg: &SolveConfig,
) -> std::result::Result<CriticalPoint, NewtonFailure> {
    let (n, k) = (fam.n(), fam.k());
    fam.point(q, lambda0)?;
    let mut lambda = DVector::from_column_slice(lambda0);
    let mut iters = 0;
    loop {
        let jet = fam.jet(q, lambda.as_slice())?;
        let r = DVector::from_column_slice(&jet.grad()[n..]);
        let residual = r.norm();
        if residual <= cfg.newton_tol {
            break;
        }
        if iters >= cfg.max_iters || !residual.is_finite() {
            return Err(NewtonFailure::Diverged { iters, residual });
        }
        let full = jet.hess_matrix(n + k);
        let block = full.view((n, n), (k, k)).into_owned();
        let step = damped_step(&block, &r, cfg.rank_tol, cfg.damping);
        if step.norm() <= f64::EPSILON * (1.0 + lambda.norm()) {
            return Err(NewtonFailure::Stagnated { iters, residual });
        }
        lambda -= step;
        iters += 1;
        if !lambda.iter().all(|x| x.is_finite()) {
            return Err(NewtonFailure::Diverged { iters, residual });
        }
    }
    let mut lambda: Vec<f64> = lambda.iter().copied().collect();
    fam.canonicalize_fiber(&mut lambda);
    finish(fam, q.to_vec(), lambda, iters, cfg)
}

/// Post-check the residual at the final point rather than trusting the loop.
fn finish(
    fam: &FamilySpec,
    q: Vec<f64>,
    lambda: Vec<f64>,
    iters: usize,
    cfg: &SolveConfig,
) -> std::result::Result<CriticalPoint, NewtonFailure> {
    let residual_norm = norm(&fam.residual(&q, &lambda)?);
    if !(residual_norm <= cfg.newton_tol) {
        return Err(NewtonFailure::Diverged { iters, residual: residual_norm });
    }
    if !fam.fiber_chart_regular(&lambda) {
        return Err(NewtonFailure::ChartSingular { lambda });
    }
    Ok(CriticalPoint {
        q,
        lambda,
        residual_norm,
        branch_id: 0,
        newton_iters: iters,
    })
}

fn nth_prime(i: usize) -> u64 {
    (2u64..)
        .filter(|&c| (2..c).take_while(|d| d * d <= c).all(|d| c % d != 0))
        .nth(i)
        .expect("primes are infinite")
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut out, mut f) = (0.0, inv);
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// `count` seeds in `bounds`: a Halton sequence with a random shift (mod 1)
/// drawn from a ChaCha stream seeded by `rng_seed`.
pub fn seed_points(bounds: &[[f64; 2]], count: usize, rng_seed: u64) -> Vec<Vec<f64>> {
    let dim = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let bases: Vec<u64> = (0..dim).map(nth_prime).collect();
    (1..=count as u64)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    let u = (radical_inverse(i, bases[d]) + shift[d]).fract();
                    let [lo, hi] = bounds[d];
                    lo + (hi - lo) * u
                })
                .collect()
        })
        .collect()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn point_distance(fam: &FamilySpec, a: &CriticalPoint, b: &CriticalPoint) -> f64 {
    let dq: f64 = a.q.iter().zip(&b.q).map(|(x, y)| (x - y).powi(2)).sum();
    let dl = fam.fiber_distance(&a.lambda, &b.lambda);
    (dq + dl * dl).sqrt()
}

/// Sort by `(q, λ)` and keep the first of every cluster closer than `radius`;
/// branch ids follow the sorted order.
fn dedup(fam: &FamilySpec, mut points: Vec<CriticalPoint>, radius: f64) -> Vec<CriticalPoint> {
    points.sort_by(|a, b| lex_cmp(&a.q, &b.q).then_with(|| lex_cmp(&a.lambda, &b.lambda)));
    let mut kept: Vec<CriticalPoint> = Vec::new();
    for p in points {
        if kept.iter().all(|k| point_distance(fam, k, &p) > radius) {
            kept.push(p);
        }
    }
    for (i, p) in kept.iter_mut().enumerate() {
        p.branch_id = i;
    }
    kept
}

/// Newton from every seed over `q`, merged deterministically. An empty
/// result means no critical point was found over `q`.
pub fn multistart(fam: &FamilySpec, q: &[f64], cfg: &SolveConfig) -> Result<Vec<CriticalPoint>> {
    cfg.validate()?;
    fam.point(q, &vec![0.0; fam.k()])?;
    let seeds = seed_points(&cfg.resolved_box(fam)?, cfg.seeds, cfg.rng_seed);
    let found: Vec<CriticalPoint> = seeds
        .par_iter()
        .filter_map(|s| newton_solve(fam, q, s, cfg).ok())
        .collect();
    Ok(dedup(fam, found, cfg.dedup_radius))
}

/// Project `(q, λ0)` onto the critical set moving both `q` and `λ`.
pub fn joint_solve(
    fam: &FamilySpec,
    q0: &[f64],
    lambda0: &[f64],
    cfg: &SolveConfig,
) -> std::result::Result<CriticalPoint, NewtonFailure> {
    let n = fam.n();
    let x0 = fam.point(q0, lambda0)?;
    let (x, iters) = match gauss_newton_project(fam, &x0, cfg.rank_tol, cfg.newton_tol, 4 * cfg.max_iters) {
        Ok(v) => v,
        Err(Error::ProjectionFailed { residual }) => {
            return Err(NewtonFailure::Diverged { iters: 4 * cfg.max_iters, residual })
        }
        Err(e) => return Err(NewtonFailure::Domain(e)),
    };
    let mut lambda = x[n..].to_vec();
    fam.canonicalize_fiber(&mut lambda);
    finish(fam, x[..n].to_vec(), lambda, iters, cfg)
}

/// Multistart in joint mode: seeds `(q, λ_seed)` are projected onto the
/// critical set, so the returned points generally lie over other base points.
pub fn joint_multistart(fam: &FamilySpec, q: &[f64], cfg: &SolveConfig) -> Result<Vec<CriticalPoint>> {
    cfg.validate()?;
    fam.point(q, &vec![0.0; fam.k()])?;
    let seeds = seed_points(&cfg.resolved_box(fam)?, cfg.seeds, cfg.rng_seed);
    let found: Vec<CriticalPoint> = seeds
        .par_iter()
        .filter_map(|s| joint_solve(fam, q, s, cfg).ok())
        .collect();
    Ok(dedup(fam, found, cfg.dedup_radius))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// The vertical-vertical block lost rank or an eigenvalue changed sign.
    Fold,
    Diverged,
    /// κ changed much faster than along the earlier part of the path.
    Jump,
    Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStop {
    /// Index into the base path of the point that could not be reached.
    pub index: usize,
    pub reason: StopReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Continuation {
    /// Critical points over `base_path[0..points.len()]`.
    pub points: Vec<CriticalPoint>,
    pub stop: Option<ContinuationStop>,
}

/// Rank and signature of the vertical-vertical block at a critical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BlockShape {
    rank: usize,
    negatives: usize,
}

fn block_shape(fam: &FamilySpec, p: &CriticalPoint, fold_tol: f64) -> Result<BlockShape> {
    let n = fam.n();
    let k = fam.k();
    let full = fam.jet(&p.q, &p.lambda)?.hess_matrix(n + k);
    let m = full.rows(n, k).into_owned();
    let scale = linalg::spectral_norm(&m);
    let block = full.view((n, n), (k, k)).into_owned();
    let eig = block.symmetric_eigenvalues();
    let significant = |e: f64| scale > 0.0 && e.abs() > fold_tol * scale;
    Ok(BlockShape {
        rank: eig.iter().filter(|e| significant(**e)).count(),
        negatives: eig.iter().filter(|e| significant(**e) && **e < 0.0).count(),
    })
}

fn kappa_of(fam: &FamilySpec, p: &CriticalPoint) -> Result<Vec<f64>> {
    Ok(fam.jet(&p.q, &p.lambda)?.grad()[..fam.n()].to_vec())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Follow the branch through `start` along `base_path`, warm-starting Newton
/// from the previous fiber point. Steps longer than `continuation_step` are
/// subdivided. Stops (without failing) at a fold, a divergence, a domain
/// error or a κ jump.
pub fn continue_branch(
    fam: &FamilySpec,
    base_path: &[Vec<f64>],
    start: &CriticalPoint,
    cfg: &SolveConfig,
) -> Result<Continuation> {
    cfg.validate()?;
    let Some(first) = base_path.first() else {
        return Ok(Continuation { points: Vec::new(), stop: None });
    };
    fam.point(first, &start.lambda)?;
    if distance(first, &start.q) > 1e-12 * (1.0 + norm(first)) {
        return Err(Error::InvalidParameter("continuation must start over the first base point".into()));
    }
    let mut points = vec![CriticalPoint {
        q: first.clone(),
        ..start.clone()
    }];
    let mut shape = block_shape(fam, start, cfg.fold_tol)?;
    let mut kappa = kappa_of(fam, start)?;
    let mut max_rate = 0.0_f64;
    for (index, target) in base_path.iter().enumerate().skip(1) {
        fam.point(target, &start.lambda)?;
        let prev = points.last().expect("nonempty").clone();
        let span = distance(&prev.q, target);
        let substeps = ((span / cfg.continuation_step).ceil() as usize).max(1);
        let mut current = prev.clone();
        let mut iters = 0;
        let mut stop = None;
        for s in 1..=substeps {
            let t = s as f64 / substeps as f64;
            let q: Vec<f64> = prev.q.iter().zip(target).map(|(a, b)| a + t * (b - a)).collect();
            match newton_solve(fam, &q, &current.lambda, cfg) {
                Ok(p) => {
                    iters += p.newton_iters;
                    let next_shape = block_shape(fam, &p, cfg.fold_tol)?;
                    if next_shape != shape {
                        stop = Some((
                            StopReason::Fold,
                            format!(
                                "vertical block changed from rank {} ({} negative) to rank {} ({} negative)",
                                shape.rank, shape.negatives, next_shape.rank, next_shape.negatives
                            ),
                        ));
                        break;
                    }
                    current = p;
                }
                Err(NewtonFailure::Domain(e)) => {
                    stop = Some((StopReason::Domain, e.to_string()));
                    break;
                }
                Err(e) => {
                    stop = Some((StopReason::Diverged, e.to_string()));
                    break;
                }
            }
        }
        if stop.is_none() {
            let next_kappa = kappa_of(fam, &current)?;
            if span > 0.0 {
                let rate = distance(&next_kappa, &kappa) / span;
                if max_rate > 0.0 && rate > cfg.jump_factor * max_rate {
                    stop = Some((
                        StopReason::Jump,
                        format!("kappa changed at rate {rate:e}, previous maximum {max_rate:e}"),
                    ));
                } else {
                    max_rate = max_rate.max(rate);
                    kappa = next_kappa;
                }
            }
        }
        if let Some((reason, detail)) = stop {
            return Ok(Continuation {
                points,
                stop: Some(ContinuationStop { index, reason, detail }),
            });
        }
        shape = block_shape(fam, &current, cfg.fold_tol)?;
        points.push(CriticalPoint {
            q: target.clone(),
            branch_id: start.branch_id,
            newton_iters: iters,
            ..current
        });
    }
    Ok(Continuation { points, stop: None })
}

/// Multistart over the first base point, then continue every branch found.
pub fn track_branches(fam: &FamilySpec, base_path: &[Vec<f64>], cfg: &SolveConfig) -> Result<Vec<Continuation>> {
    let Some(first) = base_path.first() else {
        return Ok(Vec::new());
    };
    multistart(fam, first, cfg)?
        .iter()
        .map(|start| continue_branch(fam, base_path, start, cfg))
        .collect()
}
