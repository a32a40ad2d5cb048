//! Generating families over a trivial fibration `η: Q × F → Q`.
//!
//! Total-space coordinates are `(q1..qn, l1..lk)` and `η` drops the last `k`.
//! The vertical bundle is spanned by the last `k` coordinate directions, so a
//! covector on the total space lies in the vertical polar exactly when its
//! last `k` components vanish, and the reduction map keeps the first `n`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{jet2_eval, Jet2, ScalarFunction};
use crate::error::{Error, Result};
use crate::expr::{self, ExprAst};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fibration {
    n: usize,
    k: usize,
}

impl Fibration {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("base dimension must be at least 1".into()));
        }
        Ok(Self { n, k })
    }

    pub fn base_dim(&self) -> usize {
        self.n
    }

    pub fn fiber_dim(&self) -> usize {
        self.k
    }

    pub fn total_dim(&self) -> usize {
        self.n + self.k
    }

    pub fn project<'a>(&self, point: &'a [f64]) -> &'a [f64] {
        &point[..self.n]
    }

    /// Orthonormal basis of the vertical subspace, one vector per fiber direction.
    pub fn vertical_basis(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|j| {
                let mut v = vec![0.0; self.n + self.k];
                v[self.n + j] = 1.0;
                v
            })
            .collect()
    }
}

/// Scalar energy on the total space, evaluable over numbers and jets.
///
/// Implementations with a non-Euclidean fiber chart (angles) override the
/// canonicalization and distance hooks so that equivalent chart points are
/// recognised as one.
pub trait Energy: Send + Sync + fmt::Debug {
    fn eval_f64(&self, x: &[f64]) -> Result<f64>;
    fn eval_jet(&self, x: &[Jet2]) -> Result<Jet2>;

    /// Map `lambda` to a canonical representative of its chart class.
    fn canonicalize_fiber(&self, _lambda: &mut [f64]) {}

    fn fiber_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    /// Preferred seed box for multistart, if the chart has a natural one.
    fn seed_box(&self) -> Option<Vec<(f64, f64)>> {
        None
    }

    /// False where the fiber chart is not a local diffeomorphism (the poles of
    /// spherical angles). Critical points of the chart expression found there
    /// are artifacts of the coordinates and are discarded by the solvers.
    fn fiber_chart_regular(&self, _lambda: &[f64]) -> bool {
        true
    }

    fn describe(&self) -> String;
}

impl Energy for ExprAst {
    fn eval_f64(&self, x: &[f64]) -> Result<f64> {
        self.eval(x)
    }
    fn eval_jet(&self, x: &[Jet2]) -> Result<Jet2> {
        self.eval(x)
    }
    fn describe(&self) -> String {
        self.to_string()
    }
}

/// `Ū − F ∘ η` for a reference function `F` on the base.
#[derive(Debug)]
struct RelativeEnergy {
    base: Arc<dyn Energy>,
    reference: ExprAst,
    n: usize,
}

impl Energy for RelativeEnergy {
    fn eval_f64(&self, x: &[f64]) -> Result<f64> {
        Ok(self.base.eval_f64(x)? - self.reference.eval(&x[..self.n])?)
    }
    fn eval_jet(&self, x: &[Jet2]) -> Result<Jet2> {
        Ok(self.base.eval_jet(x)? - self.reference.eval(&x[..self.n])?)
    }
    fn canonicalize_fiber(&self, lambda: &mut [f64]) {
        self.base.canonicalize_fiber(lambda)
    }
    fn fiber_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.base.fiber_distance(a, b)
    }
    fn seed_box(&self) -> Option<Vec<(f64, f64)>> {
        self.base.seed_box()
    }
    fn fiber_chart_regular(&self, lambda: &[f64]) -> bool {
        self.base.fiber_chart_regular(lambda)
    }
    fn describe(&self) -> String {
        format!("{} - ({})", self.base.describe(), self.reference)
    }
}

/// A covector `f ∈ T*_q Q` on the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covector {
    pub q: Vec<f64>,
    pub f: Vec<f64>,
}

/// A covector on the total space, attached at `point = (q, λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleCovector {
    pub point: Vec<f64>,
    pub components: Vec<f64>,
}

#[derive(Clone)]
pub struct FamilySpec {
    fibration: Fibration,
    energy: Arc<dyn Energy>,
    params: BTreeMap<String, f64>,
    metric: DMatrix<f64>,
}

impl fmt::Debug for FamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FamilySpec")
            .field("fibration", &self.fibration)
            .field("energy", &self.energy.describe())
            .field("params", &self.params)
            .finish()
    }
}

/// Check that `g` is a symmetric positive-definite `n × n` matrix.
pub fn validate_metric(g: &DMatrix<f64>, n: usize) -> Result<()> {
    if g.nrows() != n || g.ncols() != n {
        return Err(Error::InvalidParameter(format!(
            "metric must be {n}x{n}, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    let scale = g.amax().max(f64::MIN_POSITIVE);
    if (g - g.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidParameter("metric is not symmetric".into()));
    }
    let eig = g.clone().symmetric_eigenvalues();
    if eig.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter("metric is not positive definite".into()));
    }
    Ok(())
}

impl FamilySpec {
    pub fn new(
        fibration: Fibration,
        energy: Arc<dyn Energy>,
        params: BTreeMap<String, f64>,
        metric: DMatrix<f64>,
    ) -> Result<Self> {
        validate_metric(&metric, fibration.base_dim())?;
        Ok(Self {
            fibration,
            energy,
            params,
            metric,
        })
    }

    /// Family from a user expression, with the identity metric.
    pub fn from_expression(n: usize, k: usize, src: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let fibration = Fibration::new(n, k)?;
        let ast = expr::parse(src, n, k, params)?;
        Self::new(fibration, Arc::new(ast), params.clone(), DMatrix::identity(n, n))
    }

    /// The family `Ū − F ∘ η` for a reference function `F` over the base
    /// variables `q1..qn`.
    pub fn relative_to(&self, reference: ExprAst) -> Result<Self> {
        if reference.base_dim() != self.n() || reference.fiber_dim() != 0 {
            return Err(Error::InvalidParameter(format!(
                "reference function must be an expression over q1..q{} only",
                self.n()
            )));
        }
        Ok(Self {
            fibration: self.fibration,
            energy: Arc::new(RelativeEnergy {
                base: self.energy.clone(),
                reference,
                n: self.n(),
            }),
            params: self.params.clone(),
            metric: self.metric.clone(),
        })
    }

    pub fn fibration(&self) -> Fibration {
        self.fibration
    }

    pub fn n(&self) -> usize {
        self.fibration.base_dim()
    }

    pub fn k(&self) -> usize {
        self.fibration.fiber_dim()
    }

    pub fn energy(&self) -> &Arc<dyn Energy> {
        &self.energy
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn describe(&self) -> String {
        self.energy.describe()
    }

    pub fn point(&self, q: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: q.len() });
        }
        if lambda.len() != self.k() {
            return Err(Error::DimensionMismatch { expected: self.k(), got: lambda.len() });
        }
        Ok(q.iter().chain(lambda).copied().collect())
    }

    pub fn value(&self, q: &[f64], lambda: &[f64]) -> Result<f64> {
        self.energy.eval_f64(&self.point(q, lambda)?)
    }

    pub fn jet(&self, q: &[f64], lambda: &[f64]) -> Result<Jet2> {
        jet2_eval(self, &self.point(q, lambda)?)
    }

    /// Vertical derivatives `(∂Ū/∂l1, …, ∂Ū/∂lk)`; zero exactly on the
    /// critical set.
    pub fn residual(&self, q: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        Ok(self.jet(q, lambda)?.grad()[self.n()..].to_vec())
    }

    /// `dŪ(q, λ)`.
    pub fn differential(&self, q: &[f64], lambda: &[f64]) -> Result<BundleCovector> {
        let point = self.point(q, lambda)?;
        let jet = jet2_eval(self, &point)?;
        Ok(BundleCovector {
            point,
            components: jet.grad().to_vec(),
        })
    }

    /// The generated covector `(q, ∂Ū/∂q)`. Only defined on the critical set:
    /// refused when the residual norm exceeds `tol`.
    pub fn kappa(&self, q: &[f64], lambda: &[f64], tol: f64) -> Result<Covector> {
        let jet = self.jet(q, lambda)?;
        let n = self.n();
        let residual = norm(&jet.grad()[n..]);
        if !(residual <= tol) {
            return Err(Error::NotCritical { residual, tol });
        }
        Ok(Covector {
            q: q.to_vec(),
            f: jet.grad()[..n].to_vec(),
        })
    }

    fn check_bundle_covector(&self, cov: &BundleCovector) -> Result<()> {
        let d = self.fibration.total_dim();
        for len in [cov.point.len(), cov.components.len()] {
            if len != d {
                return Err(Error::DimensionMismatch { expected: d, got: len });
            }
        }
        Ok(())
    }

    /// Whether `cov` annihilates vertical vectors (fiber part within `tol`).
    pub fn in_vertical_polar(&self, cov: &BundleCovector, tol: f64) -> Result<bool> {
        self.check_bundle_covector(cov)?;
        Ok(norm(&cov.components[self.n()..]) <= tol)
    }

    /// Strict reduction `(q, λ; f_q, 0) ↦ (q; f_q)` of a vertical-polar covector.
    pub fn reduce(&self, cov: &BundleCovector, tol: f64) -> Result<Covector> {
        self.check_bundle_covector(cov)?;
        let n = self.n();
        let fiber_norm = norm(&cov.components[n..]);
        if !(fiber_norm <= tol) {
            return Err(Error::NotInVerticalPolar { norm: fiber_norm });
        }
        Ok(Covector {
            q: cov.point[..n].to_vec(),
            f: cov.components[..n].to_vec(),
        })
    }

    pub fn canonicalize_fiber(&self, lambda: &mut [f64]) {
        self.energy.canonicalize_fiber(lambda)
    }

    pub fn fiber_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.energy.fiber_distance(a, b)
    }

    pub fn fiber_chart_regular(&self, lambda: &[f64]) -> bool {
        self.energy.fiber_chart_regular(lambda)
    }
}

impl ScalarFunction for FamilySpec {
    fn dim(&self) -> usize {
        self.fibration.total_dim()
    }
    fn eval_f64(&self, x: &[f64]) -> Result<f64> {
        self.energy.eval_f64(x)
    }
    fn eval_jet(&self, x: &[Jet2]) -> Result<Jet2> {
        self.energy.eval_jet(x)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
