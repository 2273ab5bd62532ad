//! Field abstractions shared across the solver: scalar/vector fields on
//! space-time, diffusion matrices, C^{1,2} test functions, and scalar paths
//! of time with derivatives.

use std::sync::Arc;

use crate::linalg;
use crate::Result;

/// Scalar field (t, x) ↦ ℝ.
pub trait ScalarField: Send + Sync {
    fn eval(&self, t: f64, x: &[f64]) -> f64;
}

impl<F> ScalarField for F
where
    F: Fn(f64, &[f64]) -> f64 + Send + Sync,
{
    fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self(t, x)
    }
}

/// Constant scalar field.
pub fn constant_scalar(v: f64) -> Arc<dyn ScalarField> {
    Arc::new(move |_t: f64, _x: &[f64]| v)
}

/// Vector field (t, x) ↦ ℝ^q, written into `out`.
pub trait VectorField: Send + Sync {
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]);
}

impl<F> VectorField for F
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self(t, x, out)
    }
}

/// The zero vector field.
pub fn zero_drift() -> Arc<dyn VectorField> {
    Arc::new(|_t: f64, _x: &[f64], out: &mut [f64]| out.fill(0.0))
}

/// x ↦ gain · x.
pub fn linear_drift(gain: f64) -> Arc<dyn VectorField> {
    Arc::new(move |_t: f64, x: &[f64], out: &mut [f64]| {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = gain * xi;
        }
    })
}

/// Constant vector field.
pub fn constant_drift(v: Vec<f64>) -> Arc<dyn VectorField> {
    Arc::new(move |_t: f64, _x: &[f64], out: &mut [f64]| out.copy_from_slice(&v))
}

/// Function of class C^{1,2} with explicit derivative evaluators, as needed
/// by the generator L_t = ∂_t + b'∇ + ½ Σ a^{ij} ∂²_{ij}.
pub trait C12Field: Send + Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn time_deriv(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Row-major q×q Hessian in space.
    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// Diffusion matrix field σ(t, x). Fast paths for the common shapes.
#[derive(Clone)]
pub enum Sigma {
    Identity,
    /// c · I
    Scalar(f64),
    Diagonal(Vec<f64>),
    /// Row-major q×q constant matrix.
    Constant(Vec<f64>),
    /// Writes a row-major q×q matrix.
    Fn(Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>),
}

impl Sigma {
    pub fn is_state_dependent(&self) -> bool {
        matches!(self, Sigma::Fn(_))
    }

    /// Write σ(t,x) into a row-major q×q buffer.
    pub fn write(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let q = x.len();
        debug_assert_eq!(out.len(), q * q);
        match self {
            Sigma::Identity => {
                out.fill(0.0);
                for i in 0..q {
                    out[i * q + i] = 1.0;
                }
            }
            Sigma::Scalar(c) => {
                out.fill(0.0);
                for i in 0..q {
                    out[i * q + i] = *c;
                }
            }
            Sigma::Diagonal(d) => {
                out.fill(0.0);
                for i in 0..q {
                    out[i * q + i] = d[i];
                }
            }
            Sigma::Constant(m) => out.copy_from_slice(m),
            Sigma::Fn(f) => f(t, x, out),
        }
    }

    /// out = σ(t,x) · v. `scratch` must hold q² values for the general case.
    pub fn apply(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        match self {
            Sigma::Identity => out.copy_from_slice(v),
            Sigma::Scalar(c) => {
                for (o, vi) in out.iter_mut().zip(v) {
                    *o = c * vi;
                }
            }
            Sigma::Diagonal(d) => {
                for i in 0..v.len() {
                    out[i] = d[i] * v[i];
                }
            }
            Sigma::Constant(m) => linalg::matvec(m, v, out),
            Sigma::Fn(f) => {
                f(t, x, scratch);
                linalg::matvec(scratch, v, out);
            }
        }
    }

    /// out = σ'(t,x) · v.
    pub fn apply_transpose(
        &self,
        t: f64,
        x: &[f64],
        v: &[f64],
        out: &mut [f64],
        scratch: &mut [f64],
    ) {
        match self {
            Sigma::Identity | Sigma::Scalar(_) | Sigma::Diagonal(_) => {
                self.apply(t, x, v, out, scratch)
            }
            Sigma::Constant(m) => linalg::matvec_t(m, v, out),
            Sigma::Fn(f) => {
                f(t, x, scratch);
                linalg::matvec_t(scratch, v, out);
            }
        }
    }

    /// Write a = σσ' into a row-major q×q buffer.
    pub fn write_a(&self, t: f64, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let q = x.len();
        match self {
            Sigma::Identity => self.write(t, x, out),
            Sigma::Scalar(c) => {
                out.fill(0.0);
                for i in 0..q {
                    out[i * q + i] = c * c;
                }
            }
            Sigma::Diagonal(d) => {
                out.fill(0.0);
                for i in 0..q {
                    out[i * q + i] = d[i] * d[i];
                }
            }
            Sigma::Constant(m) => linalg::aat(m, out, q),
            Sigma::Fn(f) => {
                f(t, x, scratch);
                linalg::aat(scratch, out, q);
            }
        }
    }

    /// 1-norm condition estimate of σ(t,x).
    pub fn cond_probe(&self, t: f64, x: &[f64]) -> f64 {
        let q = x.len();
        match self {
            Sigma::Identity => 1.0,
            Sigma::Scalar(c) => {
                if *c == 0.0 {
                    f64::INFINITY
                } else {
                    1.0
                }
            }
            Sigma::Diagonal(d) => {
                let mx = d.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
                let mn = d.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
                if mn == 0.0 {
                    f64::INFINITY
                } else {
                    mx / mn
                }
            }
            _ => {
                let mut m = vec![0.0; q * q];
                self.write(t, x, &mut m);
                linalg::cond_1(&m, q)
            }
        }
    }
}

/// Axis-aligned box in ℝ^q.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(crate::Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l < h) {
                return Err(crate::Error::invalid(format!(
                    "degenerate bounding box: lo {l} >= hi {h}"
                )));
            }
        }
        Ok(BoundingBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(xi, (l, h))| xi >= l && xi <= h)
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - l)
            .product()
    }

    /// Wrap a point periodically into the box, coordinate by coordinate.
    pub fn wrap(&self, x: &mut [f64]) {
        for (xi, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            let w = h - l;
            if *xi < *l || *xi > *h {
                *xi = l + (*xi - l).rem_euclid(w);
            }
        }
    }
}

/// Scalar path of time with derivative, e.g. a mean or variance trajectory.
#[derive(Clone)]
pub struct TimePath {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    df: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl TimePath {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TimePath {
            f: Arc::new(f),
            df: Arc::new(df),
        }
    }

    pub fn constant(v: f64) -> Self {
        TimePath::new(move |_| v, |_| 0.0)
    }

    /// a + b t
    pub fn affine(a: f64, b: f64) -> Self {
        TimePath::new(move |t| a + b * t, move |_| b)
    }

    /// Polynomial Σ c_k t^k.
    pub fn poly(coeffs: Vec<f64>) -> Self {
        let c2 = coeffs.clone();
        TimePath::new(
            move |t| {
                let mut v = 0.0;
                for &c in coeffs.iter().rev() {
                    v = v * t + c;
                }
                v
            },
            move |t| {
                let mut v = 0.0;
                for (k, &c) in c2.iter().enumerate().skip(1).rev() {
                    v = v * t + c * k as f64;
                }
                v
            },
        )
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        (self.df)(t)
    }

    /// Path multiplied by (1 + (factor-1) · t/h), preserving the t = 0 value.
    pub fn scale_ramp(&self, factor: f64, horizon: f64) -> Self {
        let f = self.f.clone();
        let df = self.df.clone();
        let f2 = self.f.clone();
        TimePath::new(
            move |t| f(t) * (1.0 + (factor - 1.0) * t / horizon),
            move |t| {
                df(t) * (1.0 + (factor - 1.0) * t / horizon) + f2(t) * (factor - 1.0) / horizon
            },
        )
    }

    /// Path plus shift · t/h, preserving the t = 0 value.
    pub fn shift_ramp(&self, shift: f64, horizon: f64) -> Self {
        let f = self.f.clone();
        let df = self.df.clone();
        TimePath::new(
            move |t| f(t) + shift * t / horizon,
            move |t| df(t) + shift / horizon,
        )
    }

    /// Path multiplied by (1 + amp · bump((t-c)/w)) with the C² bump
    /// (1-u²)³ on [-1,1]; the factor is 1 outside the bump's support.
    pub fn bump_scale(&self, amp: f64, center: f64, halfwidth: f64) -> Self {
        let f = self.f.clone();
        let df = self.df.clone();
        let f2 = self.f.clone();
        let bump = move |t: f64| {
            let u: f64 = (t - center) / halfwidth;
            if u.abs() >= 1.0 {
                (0.0, 0.0)
            } else {
                let s = 1.0 - u * u;
                (s * s * s, -6.0 * u * s * s / halfwidth)
            }
        };
        let bump2 = bump;
        TimePath::new(
            move |t| {
                let (b, _) = bump(t);
                f(t) * (1.0 + amp * b)
            },
            move |t| {
                let (b, db) = bump2(t);
                df(t) * (1.0 + amp * b) + f2(t) * amp * db
            },
        )
    }
}
