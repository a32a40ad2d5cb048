//! Second-order forward-mode differentiation.
//!
//! A [`Jet2`] carries a value, its gradient and its Hessian with respect to a
//! fixed set of `d` seed variables, truncated after the second-order Taylor
//! term. One evaluation over jets gives the full Hessian, so
//! `hess[i][j] = ∂²f/∂x_i∂x_j` equals the mixed derivative
//! `D^(1,1)(f ∘ θ)(0,0)` along the coordinate map `θ(s1, s2) = x + s1 e_i + s2 e_j`.
//!
//! Jets whose derivative storage is empty are constants; they mix freely with
//! seeded jets of any dimension.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{DomainError, Error, Result};

/// Arithmetic needed to evaluate an energy either over plain numbers or over
/// jets. Partial primitives report a [`DomainError`] instead of returning NaN.
pub trait Scalar:
    Clone + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn from_f64(c: f64) -> Self;
    fn value(&self) -> f64;

    fn recip(self) -> Result<Self, DomainError>;
    fn powi(self, n: i32) -> Result<Self, DomainError>;
    fn sqrt(self) -> Result<Self, DomainError>;
    fn ln(self) -> Result<Self, DomainError>;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;

    fn div(self, rhs: Self) -> Result<Self, DomainError> {
        Ok(self * rhs.recip()?)
    }
}

fn check_recip(x: f64) -> Result<(), DomainError> {
    if x == 0.0 {
        Err(DomainError { op: "division", arg: x })
    } else {
        Ok(())
    }
}

fn check_powi(x: f64, n: i32) -> Result<(), DomainError> {
    if n < 0 && x == 0.0 {
        Err(DomainError { op: "negative power", arg: x })
    } else {
        Ok(())
    }
}

// sqrt is excluded at 0: norms written as sqrt of a sum of squares are not
// differentiable at the origin, and the plain and jet paths must agree.
fn check_sqrt(x: f64) -> Result<(), DomainError> {
    if x > 0.0 {
        Ok(())
    } else {
        Err(DomainError { op: "sqrt", arg: x })
    }
}

fn check_ln(x: f64) -> Result<(), DomainError> {
    if x > 0.0 {
        Ok(())
    } else {
        Err(DomainError { op: "log", arg: x })
    }
}

impl Scalar for f64 {
    fn from_f64(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn recip(self) -> Result<Self, DomainError> {
        check_recip(self)?;
        Ok(1.0 / self)
    }
    fn powi(self, n: i32) -> Result<Self, DomainError> {
        check_powi(self, n)?;
        Ok(f64::powi(self, n))
    }
    fn sqrt(self) -> Result<Self, DomainError> {
        check_sqrt(self)?;
        Ok(f64::sqrt(self))
    }
    fn ln(self) -> Result<Self, DomainError> {
        check_ln(self)?;
        Ok(f64::ln(self))
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// Value, gradient and symmetric Hessian, the Hessian stored as a packed lower
/// triangle (`(i, j)` with `j <= i` at `i (i + 1) / 2 + j`).
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    let (i, j) = if j > i { (j, i) } else { (i, j) };
    i * (i + 1) / 2 + j
}

impl Jet2 {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            grad: Vec::new(),
            hess: Vec::new(),
        }
    }

    /// The `index`-th of `dim` seed variables, at `value`.
    pub fn variable(value: f64, index: usize, dim: usize) -> Self {
        assert!(index < dim, "seed index {index} out of range for dimension {dim}");
        let mut grad = vec![0.0; dim];
        grad[index] = 1.0;
        Self {
            value,
            grad,
            hess: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    /// Build a jet from explicit Taylor data; `hess` must be `d × d`.
    pub fn from_parts(value: f64, grad: Vec<f64>, hess: &DMatrix<f64>) -> Self {
        let d = grad.len();
        assert_eq!((hess.nrows(), hess.ncols()), (d, d), "Hessian shape");
        let mut packed = vec![0.0; d * (d + 1) / 2];
        for i in 0..d {
            for j in 0..=i {
                packed[tri(i, j)] = 0.5 * (hess[(i, j)] + hess[(j, i)]);
            }
        }
        Self {
            value,
            grad,
            hess: packed,
        }
    }

    /// Seed all coordinates of `x`.
    pub fn seed(x: &[f64]) -> Vec<Self> {
        let d = x.len();
        x.iter().enumerate().map(|(i, &v)| Self::variable(v, i, d)).collect()
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Number of seed variables; 0 for constants.
    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn is_constant(&self) -> bool {
        self.grad.is_empty()
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_vector(&self, dim: usize) -> DVector<f64> {
        if self.is_constant() {
            DVector::zeros(dim)
        } else {
            DVector::from_column_slice(&self.grad)
        }
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            self.hess[tri(i, j)]
        }
    }

    /// Full `dim × dim` Hessian; constants expand to zeros.
    pub fn hess_matrix(&self, dim: usize) -> DMatrix<f64> {
        if self.is_constant() {
            return DMatrix::zeros(dim, dim);
        }
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.hess[tri(i, j)])
    }

    /// Apply a univariate function given `φ(a)`, `φ'(a)`, `φ''(a)`.
    fn chain(&self, f0: f64, f1: f64, f2: f64) -> Self {
        if self.is_constant() {
            return Self::constant(f0);
        }
        let d = self.dim();
        let grad = self.grad.iter().map(|g| f1 * g).collect();
        let mut hess = Vec::with_capacity(self.hess.len());
        for i in 0..d {
            for j in 0..=i {
                hess.push(f1 * self.hess[tri(i, j)] + f2 * self.grad[i] * self.grad[j]);
            }
        }
        Self {
            value: f0,
            grad,
            hess,
        }
    }

    fn zip_linear(&self, rhs: &Self, a: f64, b: f64) -> Self {
        let value = a * self.value + b * rhs.value;
        match (self.is_constant(), rhs.is_constant()) {
            (true, true) => Self::constant(value),
            (false, true) => Self {
                value,
                grad: self.grad.iter().map(|g| a * g).collect(),
                hess: self.hess.iter().map(|h| a * h).collect(),
            },
            (true, false) => Self {
                value,
                grad: rhs.grad.iter().map(|g| b * g).collect(),
                hess: rhs.hess.iter().map(|h| b * h).collect(),
            },
            (false, false) => {
                debug_assert_eq!(self.dim(), rhs.dim(), "jets seeded over different variables");
                Self {
                    value,
                    grad: self.grad.iter().zip(&rhs.grad).map(|(x, y)| a * x + b * y).collect(),
                    hess: self.hess.iter().zip(&rhs.hess).map(|(x, y)| a * x + b * y).collect(),
                }
            }
        }
    }

    fn product(&self, rhs: &Self) -> Self {
        let value = self.value * rhs.value;
        match (self.is_constant(), rhs.is_constant()) {
            (true, true) => Self::constant(value),
            (false, true) => self.zip_linear(&Self::constant(0.0), rhs.value, 0.0),
            (true, false) => rhs.zip_linear(&Self::constant(0.0), self.value, 0.0),
            (false, false) => {
                debug_assert_eq!(self.dim(), rhs.dim(), "jets seeded over different variables");
                let d = self.dim();
                let (a, b) = (self, rhs);
                let grad = (0..d).map(|i| a.value * b.grad[i] + b.value * a.grad[i]).collect();
                let mut hess = Vec::with_capacity(a.hess.len());
                for i in 0..d {
                    for j in 0..=i {
                        let k = tri(i, j);
                        hess.push(
                            a.value * b.hess[k]
                                + b.value * a.hess[k]
                                + a.grad[i] * b.grad[j]
                                + a.grad[j] * b.grad[i],
                        );
                    }
                }
                Self { value, grad, hess }
            }
        }
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        self.zip_linear(&rhs, 1.0, 1.0)
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        self.zip_linear(&rhs, 1.0, -1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        self.product(&rhs)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.zip_linear(&Jet2::constant(0.0), -1.0, 0.0)
    }
}

impl Scalar for Jet2 {
    fn from_f64(c: f64) -> Self {
        Jet2::constant(c)
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn recip(self) -> Result<Self, DomainError> {
        let a = self.value;
        check_recip(a)?;
        let r = 1.0 / a;
        Ok(self.chain(r, -r * r, 2.0 * r * r * r))
    }

    fn powi(self, n: i32) -> Result<Self, DomainError> {
        let a = self.value;
        check_powi(a, n)?;
        let nf = n as f64;
        let (f0, f1, f2) = match n {
            0 => (1.0, 0.0, 0.0),
            1 => (a, 1.0, 0.0),
            2 => (a * a, 2.0 * a, 2.0),
            _ => (
                f64::powi(a, n),
                nf * f64::powi(a, n - 1),
                nf * (nf - 1.0) * f64::powi(a, n - 2),
            ),
        };
        Ok(self.chain(f0, f1, f2))
    }

    fn sqrt(self) -> Result<Self, DomainError> {
        let a = self.value;
        check_sqrt(a)?;
        let s = a.sqrt();
        Ok(self.chain(s, 0.5 / s, -0.25 / (s * a)))
    }

    fn ln(self) -> Result<Self, DomainError> {
        let a = self.value;
        check_ln(a)?;
        Ok(self.chain(a.ln(), 1.0 / a, -1.0 / (a * a)))
    }

    fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }

    fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }
}

/// A scalar function of `dim()` real variables evaluable over plain numbers
/// and over jets.
pub trait ScalarFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_f64(&self, x: &[f64]) -> Result<f64>;
    /// Evaluate on arbitrary input jets (not necessarily coordinate seeds).
    fn eval_jet(&self, x: &[Jet2]) -> Result<Jet2>;
}

fn check_dim(f: &dyn ScalarFunction, len: usize) -> Result<()> {
    if f.dim() != len {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: len,
        });
    }
    Ok(())
}

/// Value, gradient and Hessian of `f` at `x`.
pub fn jet2_eval(f: &dyn ScalarFunction, x: &[f64]) -> Result<Jet2> {
    check_dim(f, x.len())?;
    let mut jet = f.eval_jet(&Jet2::seed(x))?;
    if jet.is_constant() {
        // Expand so callers can always index the full gradient and Hessian.
        let d = x.len();
        jet = Jet2 {
            value: jet.value,
            grad: vec![0.0; d],
            hess: vec![0.0; d * (d + 1) / 2],
        };
    }
    Ok(jet)
}

/// `uᵀ · hess f(x) · v`.
pub fn mixed_second(f: &dyn ScalarFunction, x: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
    check_dim(f, u.len())?;
    check_dim(f, v.len())?;
    let jet = jet2_eval(f, x)?;
    let d = x.len();
    let mut acc = 0.0;
    for i in 0..d {
        if u[i] == 0.0 {
            continue;
        }
        for j in 0..d {
            acc += u[i] * jet.hess(i, j) * v[j];
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Closure<F>(usize, F);

    impl<F> ScalarFunction for Closure<F>
    where
        F: Fn(&[Jet2]) -> std::result::Result<Jet2, DomainError> + Send + Sync,
    {
        fn dim(&self) -> usize {
            self.0
        }
        fn eval_f64(&self, x: &[f64]) -> Result<f64> {
            let jets: Vec<Jet2> = x.iter().map(|&v| Jet2::constant(v)).collect();
            Ok((self.1)(&jets).map_err(|e| e.with_context("test"))?.value())
        }
        fn eval_jet(&self, x: &[Jet2]) -> Result<Jet2> {
            (self.1)(x).map_err(|e| e.with_context("test"))
        }
    }

    #[test]
    fn product_xy() {
        let f = Closure(2, |x: &[Jet2]| Ok(x[0].clone() * x[1].clone()));
        let j = jet2_eval(&f, &[2.0, 3.0]).unwrap();
        assert_eq!(j.value(), 6.0);
        assert_eq!(j.grad(), &[3.0, 2.0]);
        assert_eq!(j.hess_matrix(2), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn lambda_x_squared() {
        // (x, λ) ↦ λ x²
        let f = Closure(2, |x: &[Jet2]| Ok(x[1].clone() * x[0].clone().powi(2)?));
        let j = jet2_eval(&f, &[1.0, 2.0]).unwrap();
        assert_eq!(j.value(), 2.0);
        assert_eq!(j.grad(), &[4.0, 1.0]);
        assert_eq!(j.hess_matrix(2), DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 0.0]));
        assert_eq!(mixed_second(&f, &[0.0, 5.0], &[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn euclidean_norm() {
        let f = Closure(2, |x: &[Jet2]| (x[0].clone().powi(2)? + x[1].clone().powi(2)?).sqrt());
        let j = jet2_eval(&f, &[3.0, 4.0]).unwrap();
        assert!((j.value() - 5.0).abs() < 1e-15);
        assert!((j.grad()[0] - 0.6).abs() < 1e-15 && (j.grad()[1] - 0.8).abs() < 1e-15);
        let g = DVector::from_row_slice(&[0.6, 0.8]);
        let expected = (DMatrix::identity(2, 2) - &g * g.transpose()) / 5.0;
        assert!((j.hess_matrix(2) - expected).amax() < 1e-15);
    }

    #[test]
    fn sqrt_at_origin_is_a_domain_error() {
        let f = Closure(2, |x: &[Jet2]| (x[0].clone().powi(2)? + x[1].clone().powi(2)?).sqrt());
        assert!(matches!(jet2_eval(&f, &[0.0, 0.0]), Err(Error::Domain { op: "sqrt", .. })));
    }

    #[test]
    fn mixed_second_basics() {
        let f = Closure(2, |x: &[Jet2]| Ok(x[0].clone() * x[1].clone()));
        assert_eq!(mixed_second(&f, &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mixed_second(&f, &[0.3, 0.7], &[0.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(mixed_second(&f, &[0.3, 0.7], &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn constants_mix_with_seeded_jets() {
        let x = Jet2::variable(2.0, 0, 3);
        let y = Jet2::constant(5.0) - x.clone() * Jet2::constant(3.0);
        assert_eq!(y.value(), -1.0);
        assert_eq!(y.grad(), &[-3.0, 0.0, 0.0]);
        let z = Jet2::constant(1.0) + Jet2::constant(2.0);
        assert!(z.is_constant());
    }

    #[test]
    fn division_and_transcendentals() {
        // f = exp(x) sin(y) / (1 + x^2)
        let f = Closure(2, |x: &[Jet2]| {
            let num = x[0].clone().exp() * x[1].clone().sin();
            num.div(Jet2::constant(1.0) + x[0].clone().powi(2)?)
        });
        let (x, y) = (0.4_f64, -1.3_f64);
        let j = jet2_eval(&f, &[x, y]).unwrap();
        let d = 1.0 + x * x;
        let fx = x.exp() * y.sin();
        assert!((j.value() - fx / d).abs() < 1e-15);
        // ∂/∂y and ∂²/∂y² by hand
        assert!((j.grad()[1] - x.exp() * y.cos() / d).abs() < 1e-15);
        assert!((j.hess(1, 1) + x.exp() * y.sin() / d).abs() < 1e-15);
    }
}
