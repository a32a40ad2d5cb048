//! Built-in families with closed-form oracles.
//!
//! * `rod_spring`: a point `q` tied by a spring (constant `k`) to a point `q2`
//!   constrained to the sphere `‖q2 − q0‖_g = a`. The sphere is charted by
//!   angles (one for `n = 2`, polar/azimuth for `n = 3`).
//! * `two_springs`: `q` tied to `q0` by a zero-length spring `k1`, and `λ`
//!   tied to `q` by a spring `k2` of rest length `a`.
//! * `lambda_x2`: `Ū(x, λ) = λx²`, whose Hessian vanishes on its critical set.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet2, Scalar};
use crate::error::{Error, Result};
use crate::family::{validate_metric, Covector, Energy, Fibration, FamilySpec};
use crate::hessian::Classification;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogId {
    RodSpring,
    TwoSprings,
    LambdaX2,
}

impl CatalogId {
    pub const ALL: [CatalogId; 3] = [CatalogId::RodSpring, CatalogId::TwoSprings, CatalogId::LambdaX2];

    pub fn as_str(&self) -> &'static str {
        match self {
            CatalogId::RodSpring => "rod_spring",
            CatalogId::TwoSprings => "two_springs",
            CatalogId::LambdaX2 => "lambda_x2",
        }
    }
}

impl fmt::Display for CatalogId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CatalogId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CatalogId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownCatalog(s.to_string()))
    }
}

/// A parameter override: a number, a vector (`q0`) or a matrix given by rows (`g`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

pub type CatalogParams = BTreeMap<String, ParamValue>;

/// Fully resolved parameters of a catalog entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolved {
    RodSpring {
        g: DMatrix<f64>,
        q0: DVector<f64>,
        a: f64,
        k: f64,
    },
    TwoSprings {
        g: DMatrix<f64>,
        q0: DVector<f64>,
        k1: f64,
        k2: f64,
        a: f64,
    },
    LambdaX2,
}

/// A catalog family together with its resolved parameters and oracles.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    id: CatalogId,
    params: Resolved,
    family: FamilySpec,
}

struct Overrides<'a> {
    map: &'a CatalogParams,
}

impl Overrides<'_> {
    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::InvalidParameter(format!(
                    "unknown parameter `{key}` (expected one of: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn scalar(&self, name: &str, default: f64) -> Result<f64> {
        match self.map.get(name) {
            None => Ok(default),
            Some(ParamValue::Scalar(x)) if x.is_finite() => Ok(*x),
            Some(_) => Err(Error::InvalidParameter(format!("`{name}` must be a finite number"))),
        }
    }

    fn positive(&self, name: &str, default: f64) -> Result<f64> {
        let x = self.scalar(name, default)?;
        if !(x > 0.0) {
            return Err(Error::InvalidParameter(format!("`{name}` must be positive, got {x}")));
        }
        Ok(x)
    }

    fn dim(&self, allowed: &[usize]) -> Result<usize> {
        let x = self.scalar("n", 2.0)?;
        let n = x as usize;
        if n as f64 != x || !allowed.contains(&n) {
            return Err(Error::InvalidParameter(format!("`n` must be one of {allowed:?}, got {x}")));
        }
        Ok(n)
    }

    fn vector(&self, name: &str, n: usize) -> Result<DVector<f64>> {
        match self.map.get(name) {
            None => Ok(DVector::zeros(n)),
            Some(ParamValue::Vector(v)) if v.len() == n && v.iter().all(|x| x.is_finite()) => {
                Ok(DVector::from_column_slice(v))
            }
            Some(ParamValue::Scalar(x)) if n == 1 && x.is_finite() => Ok(DVector::from_element(1, *x)),
            Some(_) => Err(Error::InvalidParameter(format!("`{name}` must be a vector of {n} finite numbers"))),
        }
    }

    fn metric(&self, n: usize) -> Result<DMatrix<f64>> {
        let g = match self.map.get("g") {
            None => DMatrix::identity(n, n),
            Some(ParamValue::Matrix(rows)) if rows.len() == n && rows.iter().all(|r| r.len() == n) => {
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            }
            Some(ParamValue::Scalar(x)) if n == 1 => DMatrix::from_element(1, 1, *x),
            Some(_) => return Err(Error::InvalidParameter(format!("`g` must be a {n}x{n} matrix given by rows"))),
        };
        validate_metric(&g, n)?;
        Ok(g)
    }
}

/// Build the family for `id` with `overrides` applied to the defaults.
pub fn instantiate(id: CatalogId, overrides: &CatalogParams) -> Result<FamilySpec> {
    Ok(CatalogEntry::new(id, overrides)?.family)
}

/// Closed-form constitutive covectors over `q` for catalog entry `id`.
pub fn oracle_constitutive(id: CatalogId, overrides: &CatalogParams, q: &[f64]) -> Result<Vec<Covector>> {
    CatalogEntry::new(id, overrides)?.oracle_constitutive(q)
}

fn g_norm(g: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(g * v)).sqrt()
}

impl CatalogEntry {
    pub fn new(id: CatalogId, overrides: &CatalogParams) -> Result<Self> {
        let o = Overrides { map: overrides };
        let params = match id {
            CatalogId::RodSpring => {
                o.check_keys(&["n", "g", "q0", "a", "k"])?;
                let n = o.dim(&[2, 3])?;
                Resolved::RodSpring {
                    g: o.metric(n)?,
                    q0: o.vector("q0", n)?,
                    a: o.positive("a", 1.0)?,
                    k: o.positive("k", 1.0)?,
                }
            }
            CatalogId::TwoSprings => {
                o.check_keys(&["n", "g", "q0", "k1", "k2", "a"])?;
                let n = o.dim(&[1, 2, 3])?;
                Resolved::TwoSprings {
                    g: o.metric(n)?,
                    q0: o.vector("q0", n)?,
                    k1: o.positive("k1", 1.0)?,
                    k2: o.positive("k2", 1.0)?,
                    a: o.positive("a", 1.0)?,
                }
            }
            CatalogId::LambdaX2 => {
                o.check_keys(&[])?;
                Resolved::LambdaX2
            }
        };
        let family = build_family(&params)?;
        Ok(Self { id, params, family })
    }

    pub fn with_defaults(id: CatalogId) -> Self {
        Self::new(id, &CatalogParams::new()).expect("catalog defaults are valid")
    }

    pub fn id(&self) -> CatalogId {
        self.id
    }

    pub fn params(&self) -> &Resolved {
        &self.params
    }

    pub fn family(&self) -> &FamilySpec {
        &self.family
    }

    pub fn expected_classification(&self) -> Classification {
        match self.id {
            CatalogId::RodSpring => Classification::Morse,
            CatalogId::TwoSprings => Classification::Regular,
            CatalogId::LambdaX2 => Classification::Degenerate,
        }
    }

    /// Closed-form set of covectors generated over `q`.
    ///
    /// `rod_spring` returns the `−` branch first, then the `+` branch; it is
    /// undefined at `q = q0`, where the constitutive set is a whole sphere.
    pub fn oracle_constitutive(&self, q: &[f64]) -> Result<Vec<Covector>> {
        let n = self.family.n();
        if q.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: q.len() });
        }
        let qv = DVector::from_column_slice(q);
        let cov = |f: DVector<f64>| Covector {
            q: q.to_vec(),
            f: f.iter().copied().collect(),
        };
        Ok(match &self.params {
            Resolved::RodSpring { g, q0, a, k } => {
                let d = &qv - q0;
                let r = g_norm(g, &d);
                if !(r > 1e-12 * (1.0 + a)) {
                    return Err(Error::ExcludedRegion(format!(
                        "rod_spring constitutive set is not a graph over q = q0 (|q - q0| = {r:e})"
                    )));
                }
                let gd = g * &d;
                vec![cov(&gd * (k * (1.0 - a / r))), cov(&gd * (k * (1.0 + a / r)))]
            }
            Resolved::TwoSprings { g, q0, k1, .. } => vec![cov(g * (&qv - q0) * *k1)],
            Resolved::LambdaX2 => {
                if q[0].abs() <= 1e-9 {
                    vec![cov(DVector::zeros(1))]
                } else {
                    Vec::new()
                }
            }
        })
    }

    /// Closed-form membership test for the critical set.
    pub fn is_critical(&self, q: &[f64], lambda: &[f64], tol: f64) -> Result<bool> {
        self.family.point(q, lambda)?;
        let qv = DVector::from_column_slice(q);
        Ok(match &self.params {
            Resolved::RodSpring { g, q0, a, .. } => {
                // q2 − q0 is ±a times the g-unit vector along q − q0.
                let d = &qv - q0;
                let r = g_norm(g, &d);
                let q2 = rod_anchor(g, q0, *a, lambda)?;
                let lhs = (&q2 - q0) * r;
                (&lhs - &d * *a).norm() <= tol || (&lhs + &d * *a).norm() <= tol
            }
            Resolved::TwoSprings { g, a, .. } => {
                let d = DVector::from_column_slice(lambda) - qv;
                (g_norm(g, &d) - a).abs() <= tol
            }
            Resolved::LambdaX2 => q[0].abs() <= tol,
        })
    }
}

/// Unit vector of the sphere chart: `(cos θ, sin θ)` or
/// `(sin θ cos φ, sin θ sin φ, cos θ)`.
fn chart_unit<S: Scalar>(angles: &[S]) -> Vec<S> {
    match angles.len() {
        1 => vec![angles[0].clone().cos(), angles[0].clone().sin()],
        2 => {
            let (t, p) = (angles[0].clone(), angles[1].clone());
            let st = t.clone().sin();
            vec![st.clone() * p.clone().cos(), st * p.sin(), t.cos()]
        }
        _ => unreachable!("rod_spring charts have one or two angles"),
    }
}

fn rod_anchor(g: &DMatrix<f64>, q0: &DVector<f64>, a: f64, angles: &[f64]) -> Result<DVector<f64>> {
    let b = anchor_map(g, a)?;
    Ok(q0 + b * DVector::from_vec(chart_unit(angles)))
}

/// `a · L⁻ᵀ` for the Cholesky factor `g = L Lᵀ`, so that `‖a L⁻ᵀ u‖_g = a` for unit `u`.
fn anchor_map(g: &DMatrix<f64>, a: f64) -> Result<DMatrix<f64>> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("metric is not positive definite".into()))?;
    let l_t = chol.l().transpose();
    let inv = l_t
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("metric is singular".into()))?;
    Ok(inv * a)
}

#[derive(Debug)]
struct RodSpring {
    n: usize,
    g: DMatrix<f64>,
    q0: DVector<f64>,
    b: DMatrix<f64>,
    k: f64,
}

impl RodSpring {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        let n = self.n;
        let u = chart_unit(&x[n..]);
        // e = q − q2 = (q − q0) − B u
        let e: Vec<S> = (0..n)
            .map(|i| {
                let mut acc = x[i].clone() - S::from_f64(self.q0[i]);
                for (j, uj) in u.iter().enumerate() {
                    if self.b[(i, j)] != 0.0 {
                        acc = acc - S::from_f64(self.b[(i, j)]) * uj.clone();
                    }
                }
                acc
            })
            .collect();
        Ok(quadratic_form(&self.g, &e) * S::from_f64(0.5 * self.k))
    }
}

fn quadratic_form<S: Scalar>(g: &DMatrix<f64>, e: &[S]) -> S {
    let mut acc = S::from_f64(0.0);
    for i in 0..e.len() {
        for j in 0..e.len() {
            if g[(i, j)] != 0.0 {
                acc = acc + S::from_f64(g[(i, j)]) * e[i].clone() * e[j].clone();
            }
        }
    }
    acc
}

fn wrap_angle(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

impl Energy for RodSpring {
    fn eval_f64(&self, x: &[f64]) -> Result<f64> {
        self.eval(x)
    }
    fn eval_jet(&self, x: &[Jet2]) -> Result<Jet2> {
        self.eval(x)
    }

    fn canonicalize_fiber(&self, lambda: &mut [f64]) {
        match lambda.len() {
            1 => lambda[0] = wrap_angle(lambda[0]),
            2 => {
                let mut t = lambda[0].rem_euclid(TAU);
                let mut p = lambda[1];
                if t > PI {
                    t = TAU - t;
                    p += PI;
                }
                lambda[0] = t;
                lambda[1] = wrap_angle(p);
            }
            _ => {}
        }
    }

    /// Chord distance between the chart points on the unit sphere.
    fn fiber_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let (ua, ub) = (chart_unit(a), chart_unit(b));
        ua.iter().zip(&ub).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    /// The polar-angle chart degenerates where `sin θ = 0`.
    fn fiber_chart_regular(&self, lambda: &[f64]) -> bool {
        lambda.len() != 2 || lambda[0].sin().abs() > POLE_TOL
    }

    fn seed_box(&self) -> Option<Vec<(f64, f64)>> {
        Some(match self.n {
            2 => vec![(-PI, PI)],
            _ => vec![(0.1, PI - 0.1), (-PI, PI)],
        })
    }

    fn describe(&self) -> String {
        format!("rod_spring(n={}, k={})", self.n, self.k)
    }
}

/// `|sin θ|` below which a point counts as a pole of the spherical chart.
const POLE_TOL: f64 = 1e-6;

#[derive(Debug)]
struct TwoSprings {
    n: usize,
    g: DMatrix<f64>,
    q0: DVector<f64>,
    k1: f64,
    k2: f64,
    a: f64,
}

impl TwoSprings {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        let n = self.n;
        let e: Vec<S> = (0..n).map(|i| x[i].clone() - S::from_f64(self.q0[i])).collect();
        let d: Vec<S> = (0..n).map(|i| x[n + i].clone() - x[i].clone()).collect();
        let len = quadratic_form(&self.g, &d).sqrt().map_err(|e| e.with_context("spring length"))?;
        let stretch = len - S::from_f64(self.a);
        Ok(quadratic_form(&self.g, &e) * S::from_f64(0.5 * self.k1)
            + stretch.clone() * stretch * S::from_f64(0.5 * self.k2))
    }
}

impl Energy for TwoSprings {
    fn eval_f64(&self, x: &[f64]) -> Result<f64> {
        self.eval(x)
    }
    fn eval_jet(&self, x: &[Jet2]) -> Result<Jet2> {
        self.eval(x)
    }
    fn describe(&self) -> String {
        format!("two_springs(n={}, k1={}, k2={}, a={})", self.n, self.k1, self.k2, self.a)
    }
}

#[derive(Debug)]
struct LambdaX2;

impl LambdaX2 {
    fn eval<S: Scalar>(x: &[S]) -> Result<S> {
        Ok(x[1].clone() * x[0].clone() * x[0].clone())
    }
}

impl Energy for LambdaX2 {
    fn eval_f64(&self, x: &[f64]) -> Result<f64> {
        Self::eval(x)
    }
    fn eval_jet(&self, x: &[Jet2]) -> Result<Jet2> {
        Self::eval(x)
    }
    fn describe(&self) -> String {
        "lambda_x2".into()
    }
}

fn build_family(params: &Resolved) -> Result<FamilySpec> {
    match params {
        Resolved::RodSpring { g, q0, a, k } => {
            let n = q0.len();
            let energy = RodSpring {
                n,
                g: g.clone(),
                q0: q0.clone(),
                b: anchor_map(g, *a)?,
                k: *k,
            };
            let scalars = BTreeMap::from([("n".to_string(), n as f64), ("a".into(), *a), ("k".into(), *k)]);
            FamilySpec::new(Fibration::new(n, n - 1)?, Arc::new(energy), scalars, g.clone())
        }
        Resolved::TwoSprings { g, q0, k1, k2, a } => {
            let n = q0.len();
            let energy = TwoSprings {
                n,
                g: g.clone(),
                q0: q0.clone(),
                k1: *k1,
                k2: *k2,
                a: *a,
            };
            let scalars = BTreeMap::from([
                ("n".to_string(), n as f64),
                ("k1".into(), *k1),
                ("k2".into(), *k2),
                ("a".into(), *a),
            ]);
            FamilySpec::new(Fibration::new(n, n)?, Arc::new(energy), scalars, g.clone())
        }
        Resolved::LambdaX2 => FamilySpec::new(
            Fibration::new(1, 1)?,
            Arc::new(LambdaX2),
            BTreeMap::new(),
            DMatrix::identity(1, 1),
        ),
    }
}
