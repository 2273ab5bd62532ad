//! Finite-dimensional surrogate of the compactly supported C^{1,2} test
//! functions: tensor products of a clamped-trimmed time spline basis
//! (vanishing at t ∈ {0, T}) with interior space splines (or isotropic
//! Gaussian bumps), plus the Luxemburg gauge norm
//! ‖ψ‖_g = inf{ℓ : ∬ g(t,x,σ'ψ/ℓ) dμ_t dt ≤ 1}.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bspline::CubicSplineBasis;
use crate::cost::CostFunction;
use crate::defaults;
use crate::diffusion::{apply_generator, DiffusionSpec};
use crate::error::Error;
use crate::fields::{BoundingBox, C12Field, VectorField};
use crate::marginals::{MarginalFlow, Quadrature, QuadratureOpts};
use crate::Result;

pub const MAX_DIM: usize = 3;

/// Serializable geometry of a basis (enough to rebuild it exactly).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: String,
    pub time_knots: usize,
    pub space_knots: usize,
    pub horizon: f64,
    pub bbox: BoundingBox,
}

#[derive(Clone)]
pub enum SpaceBasis {
    /// Per-dimension interior cubic splines (tensor product).
    Spline(Vec<CubicSplineBasis>),
    /// Isotropic Gaussian bumps on a grid (approximately supported).
    Rbf {
        dim: usize,
        /// centers flattened k×dim
        centers: Vec<f64>,
        inv_two_w2: f64,
    },
}

impl SpaceBasis {
    fn len(&self) -> usize {
        match self {
            SpaceBasis::Spline(dims) => dims.iter().map(|b| b.len()).product(),
            SpaceBasis::Rbf { dim, centers, .. } => centers.len() / dim,
        }
    }
}

/// Tensor basis for test functions w(t, x) = Σ_k θ_k φ_k(t, x) with
/// supp φ_k ⊂ (0, T) × box.
#[derive(Clone)]
pub struct TestFunctionBasis {
    pub dim: usize,
    pub horizon: f64,
    pub time: CubicSplineBasis,
    pub space: SpaceBasis,
    pub bbox: BoundingBox,
    kind: String,
}

/// Expand a mass box so the interior-spline full-power region covers it
/// exactly, with `BOX_PAD_KNOTS` knots of padding.
pub fn padded_box(mass_box: &BoundingBox, space_knots: usize) -> Result<BoundingBox> {
    let pad = defaults::BOX_PAD_KNOTS as f64;
    let denom = (space_knots as i64 - 1 - 2 * defaults::BOX_PAD_KNOTS as i64).max(1) as f64;
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for (l, h) in mass_box.lo.iter().zip(&mass_box.hi) {
        let step = (h - l) / denom;
        lo.push(l - pad * step);
        hi.push(h + pad * step);
    }
    BoundingBox::new(lo, hi)
}

impl TestFunctionBasis {
    pub fn build(spec: &BasisSpec) -> Result<Self> {
        let dim = spec.bbox.dim();
        if dim > MAX_DIM {
            return Err(Error::invalid(format!(
                "tensor bases are limited to dim ≤ {MAX_DIM}, got {dim}"
            )));
        }
        let time = CubicSplineBasis::clamped_trimmed(0.0, spec.horizon, spec.time_knots);
        let space = match spec.kind.as_str() {
            "bspline" => SpaceBasis::Spline(
                (0..dim)
                    .map(|d| {
                        CubicSplineBasis::interior(spec.bbox.lo[d], spec.bbox.hi[d], spec.space_knots)
                    })
                    .collect(),
            ),
            "rbf" => {
                let per_dim = spec.space_knots.max(2);
                let mut centers = Vec::new();
                let mut idx = vec![0usize; dim];
                loop {
                    for d in 0..dim {
                        let f = idx[d] as f64 / (per_dim - 1) as f64;
                        centers.push(spec.bbox.lo[d] + f * (spec.bbox.hi[d] - spec.bbox.lo[d]));
                    }
                    let mut d = 0;
                    loop {
                        idx[d] += 1;
                        if idx[d] < per_dim {
                            break;
                        }
                        idx[d] = 0;
                        d += 1;
                        if d == dim {
                            break;
                        }
                    }
                    if d == dim {
                        break;
                    }
                }
                let w = (spec.bbox.hi[0] - spec.bbox.lo[0]) / (per_dim - 1) as f64;
                SpaceBasis::Rbf {
                    dim,
                    centers,
                    inv_two_w2: 1.0 / (2.0 * w * w),
                }
            }
            other => {
                return Err(Error::schema(
                    "basis.kind",
                    format!("expected \"bspline\" or \"rbf\", got \"{other}\""),
                ))
            }
        };
        Ok(TestFunctionBasis {
            dim,
            horizon: spec.horizon,
            time,
            space,
            bbox: spec.bbox.clone(),
            kind: spec.kind.clone(),
        })
    }

    /// Basis over the automatic box of a flow.
    pub fn for_flow(
        flow: &MarginalFlow,
        kind: &str,
        time_knots: usize,
        space_knots: usize,
    ) -> Result<Self> {
        let mass_box = flow.mass_box(defaults::BOX_MASS_QUANTILE)?;
        let bbox = padded_box(&mass_box, space_knots)?;
        Self::build(&BasisSpec {
            kind: kind.to_string(),
            time_knots,
            space_knots,
            horizon: flow.horizon(),
            bbox,
        })
    }

    pub fn spec(&self) -> BasisSpec {
        let space_knots = match &self.space {
            SpaceBasis::Spline(dims) => dims[0].len() + 4,
            SpaceBasis::Rbf { dim, centers, .. } => {
                ((centers.len() / dim) as f64).powf(1.0 / *dim as f64).round() as usize
            }
        };
        BasisSpec {
            kind: self.kind.clone(),
            time_knots: self.time.len(),
            space_knots,
            horizon: self.horizon,
            bbox: self.bbox.clone(),
        }
    }

    pub fn n_space(&self) -> usize {
        self.space.len()
    }

    pub fn n_basis(&self) -> usize {
        self.time.len() * self.n_space()
    }

    /// Per-dimension spline cell edges, for cell-aligned space quadrature.
    /// `None` for radial-bump bases (smooth integrands, Hermite suffices).
    pub fn space_cell_edges(&self) -> Option<Vec<Vec<f64>>> {
        match &self.space {
            SpaceBasis::Spline(dims) => Some(dims.iter().map(|b| b.grid_points()).collect()),
            SpaceBasis::Rbf { .. } => None,
        }
    }

    /// Knot-aligned time grid with `panels` Simpson panels per interval.
    pub fn time_quadrature_grid(&self, panels: usize) -> Vec<f64> {
        let grid = self.time.grid_points();
        let mut out = Vec::new();
        for w in grid.windows(2) {
            let m = 2 * panels;
            for k in 0..m {
                out.push(w[0] + (w[1] - w[0]) * k as f64 / m as f64);
            }
        }
        out.push(self.horizon);
        out
    }

    /// Doubled resolution in both time and space over the same box.
    pub fn refine_double(&self) -> Result<Self> {
        let s = self.spec();
        Self::build(&BasisSpec {
            kind: s.kind,
            time_knots: 2 * s.time_knots - 1,
            space_knots: 2 * s.space_knots - 1,
            horizon: s.horizon,
            bbox: s.bbox,
        })
    }

    /// Visit the active basis functions at (t, x) with value and spatial
    /// gradient. Outside (0,T) × box nothing is visited (compact support).
    pub fn for_each_active_grad(
        &self,
        t: f64,
        x: &[f64],
        mut f: impl FnMut(usize, f64, &[f64; MAX_DIM]),
    ) {
        let Some(ts) = self.time.eval(t) else { return };
        let n_space = self.n_space();
        match &self.space {
            SpaceBasis::Spline(dims) => {
                let mut spans = Vec::with_capacity(self.dim);
                for (d, b) in dims.iter().enumerate() {
                    match b.eval(x[d]) {
                        Some(s) => spans.push(s),
                        None => return,
                    }
                }
                let strides = space_strides(dims);
                let mut combo = [0usize; MAX_DIM];
                loop {
                    // product of space values and gradient per dim
                    let mut vx = 1.0;
                    for d in 0..self.dim {
                        vx *= spans[d].val[combo[d]];
                    }
                    let mut grad = [0.0f64; MAX_DIM];
                    let mut sj = 0usize;
                    for d in 0..self.dim {
                        let mut gd = spans[d].d1[combo[d]];
                        for e in 0..self.dim {
                            if e != d {
                                gd *= spans[e].val[combo[e]];
                            }
                        }
                        grad[d] = gd;
                        sj += (spans[d].start + combo[d]) * strides[d];
                    }
                    for it in 0..ts.count {
                        let tv = ts.val[it];
                        let k = (ts.start + it) * n_space + sj;
                        let mut g = [0.0f64; MAX_DIM];
                        for d in 0..self.dim {
                            g[d] = tv * grad[d];
                        }
                        f(k, tv * vx, &g);
                    }
                    if !advance(&mut combo, &spans, self.dim) {
                        break;
                    }
                }
            }
            SpaceBasis::Rbf {
                dim,
                centers,
                inv_two_w2,
            } => {
                if !self.bbox.contains(x) {
                    return;
                }
                let count = centers.len() / dim;
                for c in 0..count {
                    let ctr = &centers[c * dim..(c + 1) * dim];
                    let mut r2 = 0.0;
                    for d in 0..*dim {
                        let dd = x[d] - ctr[d];
                        r2 += dd * dd;
                    }
                    let e = (-r2 * inv_two_w2).exp();
                    if e < 1e-14 {
                        continue;
                    }
                    for it in 0..ts.count {
                        let tv = ts.val[it];
                        let k = (ts.start + it) * n_space + c;
                        let mut g = [0.0f64; MAX_DIM];
                        for d in 0..*dim {
                            g[d] = tv * e * -2.0 * inv_two_w2 * (x[d] - ctr[d]);
                        }
                        f(k, tv * e, &g);
                    }
                }
            }
        }
    }

    /// Visit active functions with value, time derivative, gradient and
    /// Hessian (row-major dim×dim).
    pub fn for_each_active_full(
        &self,
        t: f64,
        x: &[f64],
        mut f: impl FnMut(usize, f64, f64, &[f64; MAX_DIM], &[f64; MAX_DIM * MAX_DIM]),
    ) {
        let Some(ts) = self.time.eval(t) else { return };
        let n_space = self.n_space();
        match &self.space {
            SpaceBasis::Spline(dims) => {
                let mut spans = Vec::with_capacity(self.dim);
                for (d, b) in dims.iter().enumerate() {
                    match b.eval(x[d]) {
                        Some(s) => spans.push(s),
                        None => return,
                    }
                }
                let strides = space_strides(dims);
                let mut combo = [0usize; MAX_DIM];
                loop {
                    let mut vals = [0.0f64; MAX_DIM];
                    let mut d1s = [0.0f64; MAX_DIM];
                    let mut d2s = [0.0f64; MAX_DIM];
                    let mut sj = 0usize;
                    for d in 0..self.dim {
                        vals[d] = spans[d].val[combo[d]];
                        d1s[d] = spans[d].d1[combo[d]];
                        d2s[d] = spans[d].d2[combo[d]];
                        sj += (spans[d].start + combo[d]) * strides[d];
                    }
                    let mut vx = 1.0;
                    for d in 0..self.dim {
                        vx *= vals[d];
                    }
                    let mut grad = [0.0f64; MAX_DIM];
                    let mut hess = [0.0f64; MAX_DIM * MAX_DIM];
                    for d in 0..self.dim {
                        let mut gd = d1s[d];
                        for e in 0..self.dim {
                            if e != d {
                                gd *= vals[e];
                            }
                        }
                        grad[d] = gd;
                        for e in 0..=d {
                            let mut h = if e == d { d2s[d] } else { d1s[d] * d1s[e] };
                            for r in 0..self.dim {
                                if r != d && r != e {
                                    h *= vals[r];
                                }
                            }
                            hess[d * MAX_DIM + e] = h;
                            hess[e * MAX_DIM + d] = h;
                        }
                    }
                    for it in 0..ts.count {
                        let tv = ts.val[it];
                        let td = ts.d1[it];
                        let k = (ts.start + it) * n_space + sj;
                        let mut g = [0.0f64; MAX_DIM];
                        let mut hh = [0.0f64; MAX_DIM * MAX_DIM];
                        for d in 0..self.dim {
                            g[d] = tv * grad[d];
                            for e in 0..self.dim {
                                hh[d * MAX_DIM + e] = tv * hess[d * MAX_DIM + e];
                            }
                        }
                        f(k, tv * vx, td * vx, &g, &hh);
                    }
                    if !advance(&mut combo, &spans, self.dim) {
                        break;
                    }
                }
            }
            SpaceBasis::Rbf {
                dim,
                centers,
                inv_two_w2,
            } => {
                if !self.bbox.contains(x) {
                    return;
                }
                let count = centers.len() / dim;
                for c in 0..count {
                    let ctr = &centers[c * dim..(c + 1) * dim];
                    let mut r2 = 0.0;
                    for d in 0..*dim {
                        let dd = x[d] - ctr[d];
                        r2 += dd * dd;
                    }
                    let e = (-r2 * inv_two_w2).exp();
                    if e < 1e-14 {
                        continue;
                    }
                    for it in 0..ts.count {
                        let tv = ts.val[it];
                        let td = ts.d1[it];
                        let k = (ts.start + it) * n_space + c;
                        let mut g = [0.0f64; MAX_DIM];
                        let mut hh = [0.0f64; MAX_DIM * MAX_DIM];
                        let a = 2.0 * inv_two_w2;
                        for d in 0..*dim {
                            g[d] = tv * e * -a * (x[d] - ctr[d]);
                            for ee in 0..*dim {
                                let dd = x[d] - ctr[d];
                                let de = x[ee] - ctr[ee];
                                let mut h = a * a * dd * de * e;
                                if d == ee {
                                    h -= a * e;
                                }
                                hh[d * MAX_DIM + ee] = tv * h;
                            }
                        }
                        f(k, tv * e, td * e, &g, &hh);
                    }
                }
            }
        }
    }

    pub fn eval_w(&self, theta: &[f64], t: f64, x: &[f64]) -> f64 {
        let mut v = 0.0;
        self.for_each_active_grad(t, x, |k, val, _| v += theta[k] * val);
        v
    }

    pub fn eval_grad_w(&self, theta: &[f64], t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.for_each_active_grad(t, x, |k, _, g| {
            for d in 0..self.dim {
                out[d] += theta[k] * g[d];
            }
        });
    }

    /// L_t w_θ = ∂_t w + b'∇w + ½ Σ a^{ij} ∂²_{ij} w via the generator.
    pub fn eval_lt_w(&self, theta: &[f64], spec: &DiffusionSpec, t: f64, x: &[f64]) -> f64 {
        let w = WTheta { basis: self, theta };
        apply_generator(spec, &w, t, x)
    }
}

fn space_strides(dims: &[CubicSplineBasis]) -> [usize; MAX_DIM] {
    let mut strides = [0usize; MAX_DIM];
    let mut s = 1usize;
    for d in (0..dims.len()).rev() {
        strides[d] = s;
        s *= dims[d].len();
    }
    strides
}

fn advance(
    combo: &mut [usize; MAX_DIM],
    spans: &[crate::bspline::ActiveSpan],
    dim: usize,
) -> bool {
    for d in 0..dim {
        combo[d] += 1;
        if combo[d] < spans[d].count {
            return true;
        }
        combo[d] = 0;
    }
    false
}

/// w_θ as a C^{1,2} field (adaptor used by the generator).
pub struct WTheta<'a> {
    pub basis: &'a TestFunctionBasis,
    pub theta: &'a [f64],
}

impl C12Field for WTheta<'_> {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.basis.eval_w(self.theta, t, x)
    }
    fn time_deriv(&self, t: f64, x: &[f64]) -> f64 {
        let mut v = 0.0;
        self.basis
            .for_each_active_full(t, x, |k, _, dt, _, _| v += self.theta[k] * dt);
        v
    }
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.basis.eval_grad_w(self.theta, t, x, out);
    }
    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let dim = self.basis.dim;
        out.fill(0.0);
        self.basis.for_each_active_full(t, x, |k, _, _, _, h| {
            for d in 0..dim {
                for e in 0..dim {
                    out[d * dim + e] += self.theta[k] * h[d * MAX_DIM + e];
                }
            }
        });
    }
}

/// Ψ = ∇w_θ as an owned vector field.
#[derive(Clone)]
pub struct PsiField {
    pub basis: Arc<TestFunctionBasis>,
    pub theta: Arc<Vec<f64>>,
}

impl VectorField for PsiField {
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.basis.eval_grad_w(&self.theta, t, x, out);
    }
}

/// Record of one ascent iteration.
#[derive(Clone, Debug, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
}

/// Certified dual maximizer over a basis span.
#[derive(Clone)]
pub struct DualSolution {
    pub basis: Arc<TestFunctionBasis>,
    pub theta: Vec<f64>,
    pub dual_value: f64,
    /// max |∂J/∂θ_k| at the accepted iterate (the FOC residual).
    pub grad_norm_at_opt: f64,
    pub tol_foc: f64,
    /// ∬ (1 + ‖x‖) dμ dt, the scale the tolerance was derived from.
    pub scale: f64,
    pub luxemburg_norm_psi: f64,
    pub iterations: usize,
    pub converged: bool,
    /// dual-value change under one knot doubling, when requested.
    pub refinement_delta: Option<f64>,
    pub log: Vec<IterRecord>,
}

impl DualSolution {
    pub fn psi(&self) -> PsiField {
        PsiField {
            basis: self.basis.clone(),
            theta: Arc::new(self.theta.clone()),
        }
    }
}

/// Luxemburg gauge of ψ against a fixed quadrature:
/// inf{ℓ : Σ w g(t,x,σ'ψ/ℓ) ≤ 1}, by bisection on the monotone modular.
pub fn luxemburg_norm_quad(
    quad: &Quadrature,
    spec: &DiffusionSpec,
    cost: &CostFunction,
    psi: &dyn VectorField,
) -> Result<f64> {
    let dim = spec.dim;
    // cache z = σ'ψ per node
    let mut zs: Vec<(f64, Vec<f64>, f64)> = Vec::with_capacity(quad.nodes.len());
    let mut pv = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    let mut scratch = vec![0.0; dim * dim];
    let mut all_zero = true;
    for n in &quad.nodes {
        psi.eval(n.t, &n.x, &mut pv);
        spec.sigma.apply_transpose(n.t, &n.x, &pv, &mut z, &mut scratch);
        if z.iter().any(|v| *v != 0.0) {
            all_zero = false;
        }
        zs.push((n.t, z.clone(), n.w));
    }
    if all_zero {
        return Ok(0.0);
    }
    let mut scaled = vec![0.0; dim];
    let mut modular = |ell: f64| -> f64 {
        let mut acc = 0.0;
        for (i, (t, z, w)) in zs.iter().enumerate() {
            for d in 0..dim {
                scaled[d] = z[d] / ell;
            }
            let x = &quad.nodes[i].x;
            match cost.eval_g(*t, x, &scaled) {
                Ok(v) => acc += w * v,
                Err(_) => return f64::INFINITY,
            }
            if !acc.is_finite() {
                return f64::INFINITY;
            }
        }
        acc
    };

    let (mut lo, mut hi);
    if modular(1.0) > 1.0 {
        lo = 1.0;
        hi = 2.0;
        let mut guard = 0;
        while modular(hi) > 1.0 {
            lo = hi;
            hi *= 2.0;
            guard += 1;
            if guard > 80 {
                return Err(Error::NotInLg {
                    modular: modular(hi),
                    cap: hi,
                });
            }
        }
    } else {
        hi = 1.0;
        lo = 0.5;
        let mut guard = 0;
        while modular(lo) <= 1.0 {
            hi = lo;
            lo *= 0.5;
            guard += 1;
            if guard > 80 {
                // modular stays ≤ 1 at arbitrarily small scales: zero field
                return Ok(0.0);
            }
        }
    }
    while (hi - lo) > defaults::LUXEMBURG_REL_WIDTH * hi {
        let mid = 0.5 * (lo + hi);
        if modular(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Luxemburg gauge with the flow's default quadrature.
pub fn luxemburg_norm(
    flow: &MarginalFlow,
    spec: &DiffusionSpec,
    cost: &CostFunction,
    psi: &dyn VectorField,
) -> Result<f64> {
    let quad = flow.quadrature(&QuadratureOpts::default())?;
    luxemburg_norm_quad(&quad, spec, cost, psi)
}
