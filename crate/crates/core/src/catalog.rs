//! Worked benchmark constructions with independent oracles:
//! - Gaussian flows with stressed variance, where the optimal drift c(t)·x
//!   follows from substituting N(0, v(t)) into the Fokker–Planck equation;
//! - the reflected singular-drift process and its sign-flipped companion,
//!   with the integrability boundary and the non-Markovianity probe;
//! - the 2D curl obstruction showing the optimizer depends on the cost in
//!   dimension ≥ 2.

use std::sync::Arc;

use rand::prelude::*;
use rayon::prelude::*;
use serde::Serialize;

use crate::diffusion::{
    path_rng, run_one_path, DiffusionSpec, DriftSource, InitialLaw, StepBuffers, StepTransform,
};
use crate::error::Error;
use crate::fields::{zero_drift, Sigma, TimePath, VectorField};
use crate::marginals::{GaussianFlow, MarginalFlow};
use crate::primal::{PrimalControl, YEnsemble};
use crate::Result;

/// Gaussian benchmark: reference Brownian motion (σ = 1) started from
/// N(0, v(0)), target marginals N(0, v(t)), and the Fokker–Planck oracle
/// drift c(t)·x with c = (v̇ − 1)/(2v) and value ∫ c²v/2 dt.
pub struct GaussianEntropicCase {
    pub horizon: f64,
    pub variance: TimePath,
    pub spec: DiffusionSpec,
    pub flow: MarginalFlow,
    pub oracle_value: f64,
}

impl GaussianEntropicCase {
    pub fn oracle_c(&self, t: f64) -> f64 {
        (self.variance.deriv(t) - 1.0) / (2.0 * self.variance.value(t))
    }

    /// The identified drift field c(t)·x.
    pub fn oracle_drift(&self) -> Arc<dyn VectorField> {
        let v = self.variance.clone();
        Arc::new(move |t: f64, x: &[f64], out: &mut [f64]| {
            let c = (v.deriv(t) - 1.0) / (2.0 * v.value(t));
            out[0] = c * x[0];
        })
    }

    /// The oracle drift as a feasible primal control (σ = 1, b = 0 so
    /// σ'β = c(t)·x as well).
    pub fn oracle_control(&self) -> PrimalControl {
        PrimalControl::Explicit {
            drift: self.oracle_drift(),
            sigma_t_beta: self.oracle_drift(),
            label: "fokker-planck-oracle".into(),
        }
    }
}

/// Build the Gaussian benchmark from a variance path v(t) = s(t)².
pub fn gaussian_entropic_case(variance: TimePath, horizon: f64) -> Result<GaussianEntropicCase> {
    // v must stay positive on [0, T]
    for k in 0..=200 {
        let t = horizon * k as f64 / 200.0;
        if variance.value(t) <= 0.0 {
            return Err(Error::invalid(format!(
                "variance path hits zero at t={t}"
            )));
        }
    }
    let v0 = variance.value(0.0);
    let spec = DiffusionSpec::new(
        1,
        horizon,
        zero_drift(),
        Sigma::Identity,
        InitialLaw::Gaussian {
            mean: vec![0.0],
            var: vec![v0],
        },
    );
    let flow = MarginalFlow::Gaussian(GaussianFlow::new_1d(
        horizon,
        TimePath::constant(0.0),
        variance.clone(),
    ));
    // oracle value by fine Simpson, independent of the solver pipeline
    let n = 4001usize;
    let ts: Vec<f64> = (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect();
    let w = crate::marginals::time_weights(&ts);
    let oracle_value = ts
        .iter()
        .zip(&w)
        .map(|(t, wi)| {
            let v = variance.value(*t);
            let c = (variance.deriv(*t) - 1.0) / (2.0 * v);
            wi * c * c * v / 2.0
        })
        .sum();
    Ok(GaussianEntropicCase {
        horizon,
        variance,
        spec,
        flow,
        oracle_value,
    })
}

/// How the sign flip of the companion process is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlipLabel {
    /// sign(X_{τ/2} − 1), the construction under test.
    FromPath,
    /// An independent fair coin — the negative control for the statistic.
    Randomized,
}

/// The reflected singular-drift benchmark with dimension parameter
/// δ ∈ (1, 2), index ν = δ/2 − 1, and a p-power cost.
pub struct BesselCase {
    pub delta: f64,
    pub nu: f64,
    pub p: f64,
    pub q_conj: f64,
    /// p is integrable iff 1 < p < 2ν + 2.
    pub admissible: bool,
    pub horizon: f64,
    pub x0: f64,
}

/// Exponent for the evaluation floor of the singular integrand: the floor
/// max(x, c·h^FLOOR_EXP) vanishes under refinement, so the discretized
/// functional stabilizes iff the continuous one is finite and keeps growing
/// under step-halving iff it is not.
pub const INTEGRABILITY_FLOOR_EXP: f64 = 1.1;
pub const INTEGRABILITY_FLOOR_COEF: f64 = 1.0;

pub fn bessel_case(delta: f64, p: f64, horizon: f64) -> Result<BesselCase> {
    if !(delta > 1.0 && delta < 2.0) {
        return Err(Error::invalid(format!(
            "dimension parameter must lie in (1,2), got {delta}"
        )));
    }
    let nu = delta / 2.0 - 1.0;
    Ok(BesselCase {
        delta,
        nu,
        p,
        q_conj: p / (p - 1.0),
        admissible: p > 1.0 && p < 2.0 * nu + 2.0,
        horizon,
        x0: 1.0,
    })
}

impl BesselCase {
    /// Clip radius tied to the step so it vanishes under refinement.
    pub fn clip_radius(&self, n_steps: usize) -> f64 {
        10.0 * (self.horizon / n_steps as f64).sqrt()
    }

    /// Reference spec with the singular drift (δ−1)/(2x) clipped at
    /// |x| ≥ clip and hard reflection |X| ← |X| after every step.
    pub fn spec(&self, n_steps: usize) -> DiffusionSpec {
        let clip = self.clip_radius(n_steps);
        let delta = self.delta;
        let drift = Arc::new(move |_t: f64, x: &[f64], out: &mut [f64]| {
            let v = x[0];
            let mag = v.abs().max(clip);
            out[0] = (delta - 1.0) / (2.0 * mag) * if v < 0.0 { -1.0 } else { 1.0 };
        });
        let mut spec = DiffusionSpec::new(
            1,
            self.horizon,
            drift,
            Sigma::Identity,
            InitialLaw::Dirac(vec![self.x0]),
        );
        spec.post_step = StepTransform::ReflectAbs;
        spec
    }

    /// Closed-form dual optimizer for the p-cost:
    /// Ψ(t,x) = −((δ−1)/(2|x|))^{1/(q−1)} sign(x).
    pub fn psi(&self, eval_floor: f64) -> Arc<dyn VectorField> {
        let delta = self.delta;
        let qm1 = self.q_conj - 1.0;
        Arc::new(move |_t: f64, x: &[f64], out: &mut [f64]| {
            let v = x[0];
            let mag = v.abs().max(eval_floor);
            let base = (delta - 1.0) / (2.0 * mag);
            out[0] = -base.powf(1.0 / qm1) * if v < 0.0 { -1.0 } else { 1.0 };
        })
    }

    /// Monte-Carlo estimate of E[∫₀ᵀ max(X_t, floor)^{-p} dt] under the
    /// clipped reflected scheme, with the refinement-sensitive floor
    /// c·h^{FLOOR_EXP}.
    pub fn integrability_estimate(
        &self,
        p: f64,
        n_paths: usize,
        n_steps: usize,
        seed: u64,
    ) -> Result<f64> {
        let spec = self.spec(n_steps);
        let h = self.horizon / n_steps as f64;
        let floor = INTEGRABILITY_FLOOR_COEF * h.powf(INTEGRABILITY_FLOOR_EXP);
        let vals = crate::diffusion::simulate_fold(
            &spec,
            &DriftSource::Reference,
            n_paths,
            n_steps,
            seed,
            &|_t, x| x[0].abs().max(floor).powf(-p),
        )?;
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Estimates at step counts n and 2n and their relative change.
    pub fn integrability_refinement(
        &self,
        p: f64,
        n_paths: usize,
        base_steps: usize,
        seed: u64,
    ) -> Result<RefinementStudy> {
        let coarse = self.integrability_estimate(p, n_paths, base_steps, seed)?;
        let fine = self.integrability_estimate(p, n_paths, 2 * base_steps, seed ^ 0x9d2f)?;
        Ok(RefinementStudy {
            coarse,
            fine,
            rel_change: (fine - coarse) / coarse,
        })
    }

    /// Simulate the flipped process: Y = X up to the (discretized) hitting
    /// time τ of the origin, then Y = label · X, with the label either
    /// sign(X_{τ/2} − 1) or an independent coin. Records what the
    /// Markov-property statistic needs.
    pub fn simulate_y(
        &self,
        n_paths: usize,
        n_steps: usize,
        seed: u64,
        s_time: f64,
        label: FlipLabel,
    ) -> Result<YEnsemble> {
        let spec = self.spec(n_steps);
        let h = self.horizon / n_steps as f64;
        let touch = self.clip_radius(n_steps);
        let s_idx = ((s_time / h).round() as usize).min(n_steps);
        let rows: Vec<(f64, f64, f64, f64, bool)> = (0..n_paths)
            .into_par_iter()
            .map(|pidx| {
                let mut rng = path_rng(seed, pidx);
                let mut buf = StepBuffers::new(1);
                let mut x = vec![0.0];
                let mut path = vec![0.0f64; n_steps + 1];
                let ok = run_one_path(
                    &spec,
                    spec.drift.as_ref(),
                    n_steps,
                    &mut rng,
                    &mut buf,
                    &mut x,
                    |i, _t, s| path[i] = s[0],
                    |_i, _dw| {},
                );
                if !ok {
                    return (f64::NAN, f64::NAN, f64::NAN, f64::NAN, false);
                }
                let mut tau_idx: Option<usize> = None;
                for (i, &v) in path.iter().enumerate() {
                    if i > 0 && v <= touch {
                        tau_idx = Some(i);
                        break;
                    }
                }
                let (tau, x_half, flip) = match tau_idx {
                    None => (f64::NAN, f64::NAN, 1.0),
                    Some(i) => {
                        let xh = path[i / 2];
                        let fl = match label {
                            FlipLabel::FromPath => {
                                if xh - 1.0 >= 0.0 {
                                    1.0
                                } else {
                                    -1.0
                                }
                            }
                            FlipLabel::Randomized => {
                                if rng.random::<f64>() < 0.5 {
                                    1.0
                                } else {
                                    -1.0
                                }
                            }
                        };
                        (i as f64 * h, xh, fl)
                    }
                };
                let y_at = |i: usize| -> f64 {
                    match tau_idx {
                        Some(ti) if i > ti => flip * path[i],
                        _ => path[i],
                    }
                };
                // The statistic always conditions on the true past marker
                // A = {X_{τ/2} > 1}; the randomized control only decouples
                // the flip from it, so the future sign carries no signal.
                (y_at(s_idx), y_at(n_steps), tau, x_half, true)
            })
            .collect();
        let flagged = rows.iter().filter(|r| !r.4).count();
        if (flagged as f64) > crate::defaults::FLAGGED_PATH_LIMIT * n_paths as f64 {
            return Err(Error::TooManyFlaggedPaths {
                flagged,
                total: n_paths,
                limit_pct: crate::defaults::FLAGGED_PATH_LIMIT * 100.0,
            });
        }
        let mut y_s = Vec::with_capacity(n_paths);
        let mut y_t = Vec::with_capacity(n_paths);
        let mut tau = Vec::with_capacity(n_paths);
        let mut x_half = Vec::with_capacity(n_paths);
        for r in rows.into_iter().filter(|r| r.4) {
            y_s.push(r.0);
            y_t.push(r.1);
            tau.push(r.2);
            x_half.push(r.3);
        }
        Ok(YEnsemble {
            s_time: s_idx as f64 * h,
            horizon: self.horizon,
            y_s,
            y_t,
            tau,
            x_half_tau: x_half,
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RefinementStudy {
    pub coarse: f64,
    pub fine: f64,
    pub rel_change: f64,
}

/// A C² scalar surface on ℝ² with first and second derivatives.
pub struct SurfaceC2 {
    pub f: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub fx: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub fy: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub fxx: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub fxy: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub fyy: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

/// C²-smooth bump (1−u²)³ on [−1, 1], scaled and shifted.
#[derive(Clone, Copy, Debug)]
pub struct Bump1D {
    pub center: f64,
    pub halfwidth: f64,
    pub amplitude: f64,
}

impl Bump1D {
    pub fn value(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.halfwidth;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - u * u;
        self.amplitude * s * s * s
    }
    pub fn d1(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.halfwidth;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - u * u;
        self.amplitude * -6.0 * u * s * s / self.halfwidth
    }
    pub fn d2(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.halfwidth;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - u * u;
        self.amplitude * (24.0 * u * u * s - 6.0 * s * s) / (self.halfwidth * self.halfwidth)
    }
}

/// Separable surface B(x, y) = p(x) q(y).
pub fn separable_surface(p: Bump1D, q: Bump1D) -> SurfaceC2 {
    SurfaceC2 {
        f: Box::new(move |x, y| p.value(x) * q.value(y)),
        fx: Box::new(move |x, y| p.d1(x) * q.value(y)),
        fy: Box::new(move |x, y| p.value(x) * q.d1(y)),
        fxx: Box::new(move |x, y| p.d2(x) * q.value(y)),
        fxy: Box::new(move |x, y| p.d1(x) * q.d1(y)),
        fyy: Box::new(move |x, y| p.value(x) * q.d2(y)),
    }
}

/// Radial surface B = ρ(x² + y²) with ρ a bump in the squared radius.
pub fn radial_surface(rho: Bump1D) -> SurfaceC2 {
    SurfaceC2 {
        f: Box::new(move |x, y| rho.value(x * x + y * y)),
        fx: Box::new(move |x, y| 2.0 * x * rho.d1(x * x + y * y)),
        fy: Box::new(move |x, y| 2.0 * y * rho.d1(x * x + y * y)),
        fxx: Box::new(move |x, y| {
            let u = x * x + y * y;
            2.0 * rho.d1(u) + 4.0 * x * x * rho.d2(u)
        }),
        fxy: Box::new(move |x, y| 4.0 * x * y * rho.d2(x * x + y * y)),
        fyy: Box::new(move |x, y| {
            let u = x * x + y * y;
            2.0 * rho.d1(u) + 4.0 * y * y * rho.d2(u)
        }),
    }
}

/// The default separable bumps.
pub fn default_separable() -> SurfaceC2 {
    separable_surface(
        Bump1D {
            center: 0.0,
            halfwidth: 1.0,
            amplitude: 1.0,
        },
        Bump1D {
            center: 0.1,
            halfwidth: 0.9,
            amplitude: 0.8,
        },
    )
}

/// Curl of F := ‖∇B‖∇B at a point. The mixed second derivatives of any
/// potential cancel, leaving r = (∂_x‖∇B‖) B_y − (∂_y‖∇B‖) B_x.
pub fn curl_residual_at(b: &SurfaceC2, x: f64, y: f64) -> f64 {
    let bx = (b.fx)(x, y);
    let by = (b.fy)(x, y);
    let bxx = (b.fxx)(x, y);
    let bxy = (b.fxy)(x, y);
    let byy = (b.fyy)(x, y);
    let norm = (bx * bx + by * by).sqrt();
    if norm < 1e-14 {
        return 0.0;
    }
    let numer = by * (bx * bxx + by * bxy) - bx * (bx * bxy + by * byy);
    numer / norm
}

#[derive(Clone, Debug, Serialize)]
pub struct CurlReport {
    pub max_residual: f64,
    /// max over the grid of the two mixed-partial terms being compared.
    pub scale: f64,
    pub tol_curl: f64,
    /// true when ‖∇B‖∇B cannot be a gradient field: the quadratic-cost
    /// optimizer then differs from every p ≠ 2 optimizer.
    pub fails_universality: bool,
    pub grid_n: usize,
}

/// Evaluate the curl certificate of F = ‖∇B‖∇B on an n×n grid over
/// [−half, half]².
pub fn nonuniversality_case(b: &SurfaceC2, half: f64, grid_n: usize) -> CurlReport {
    let mut max_res: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..grid_n {
        for j in 0..grid_n {
            let x = -half + 2.0 * half * i as f64 / (grid_n - 1) as f64;
            let y = -half + 2.0 * half * j as f64 / (grid_n - 1) as f64;
            let r = curl_residual_at(b, x, y);
            max_res = max_res.max(r.abs());
            // the two terms whose equality is being tested
            let bx = (b.fx)(x, y);
            let by = (b.fy)(x, y);
            let bxx = (b.fxx)(x, y);
            let bxy = (b.fxy)(x, y);
            let byy = (b.fyy)(x, y);
            let norm = (bx * bx + by * by).sqrt().max(1e-14);
            let t1 = (by * (bx * bxx + by * bxy) / norm).abs();
            let t2 = (bx * (bx * bxy + by * byy) / norm).abs();
            scale = scale.max(t1).max(t2);
        }
    }
    let tol = crate::defaults::CURL_SCALE * scale.max(1e-30);
    CurlReport {
        max_residual: max_res,
        scale,
        tol_curl: tol,
        fails_universality: max_res > tol,
        grid_n,
    }
}

/// Result of the optional long 2D comparison on the truncated-torus
/// Lebesgue flow: the quadratic-cost optimizer keeps the stationary
/// (zero-drift) law, while the cubic-cost optimizer recovers a genuinely
/// different drift — the curl obstruction made quantitative.
#[derive(Clone, Debug, Serialize)]
pub struct FullNonuniversalityReport {
    pub dual_value_quadratic: f64,
    pub dual_value_cubic: f64,
    /// L²(μ̄) norms (mass-normalized) of the recovered drifts and their gap.
    pub norm_drift_quadratic: f64,
    pub norm_drift_cubic: f64,
    pub drift_gap: f64,
    pub norm_reference_drift: f64,
    /// Gap large relative to the quadratic optimizer's residual drift.
    pub optimizers_differ: bool,
}

/// The long-running 2D scenario behind the fast curl certificate: reference
/// dX = ∇B dt + dW wrapped on a box with σ-finite uniform marginals, solved
/// for the quadratic and cubic costs.
pub fn nonuniversality_full_solve(seed: u64) -> Result<FullNonuniversalityReport> {
    use crate::cost::CostFunction;
    use crate::dual_solver::{maximize_dual_allow_unconverged, SolverOpts};
    use crate::fields::{BoundingBox, Sigma};
    use crate::function_space::{BasisSpec, TestFunctionBasis};
    use crate::marginals::{GridFlow, MassMode};

    let half = 1.5;
    let horizon = 0.5;
    let b_surface = Arc::new(default_separable());
    let bbox = BoundingBox::new(vec![-half, -half], vec![half, half])?;

    let bs = b_surface.clone();
    let drift = Arc::new(move |_t: f64, x: &[f64], out: &mut [f64]| {
        out[0] = (bs.fx)(x[0], x[1]);
        out[1] = (bs.fy)(x[0], x[1]);
    });
    let wrap_box = bbox.clone();
    let sampler_box = bbox.clone();
    let mut spec = DiffusionSpec::new(
        2,
        horizon,
        drift,
        Sigma::Identity,
        InitialLaw::Sampler(Arc::new(move |rng, out| {
            for d in 0..2 {
                let u: f64 = rng.random();
                out[d] = sampler_box.lo[d] + u * (sampler_box.hi[d] - sampler_box.lo[d]);
            }
        })),
    );
    spec.post_step = StepTransform::Wrap(wrap_box);

    // σ-finite uniform flow truncated to the box
    let cells = 40usize;
    let n_slices = 7usize;
    let area = (2.0 * half) * (2.0 * half);
    let dens = vec![1.0; cells * cells];
    let flow = MarginalFlow::Grid(GridFlow {
        times: (0..n_slices)
            .map(|i| horizon * i as f64 / (n_slices - 1) as f64)
            .collect(),
        bbox: bbox.clone(),
        shape: vec![cells, cells],
        densities: vec![dens; n_slices],
        mass: MassMode::TruncatedSigmaFinite { total: area },
    });

    let basis = Arc::new(TestFunctionBasis::build(&BasisSpec {
        kind: "bspline".into(),
        time_knots: 6,
        space_knots: 12,
        horizon,
        bbox: bbox.clone(),
    })?);
    let opts = SolverOpts {
        seed,
        restarts: 1,
        ..Default::default()
    };
    let quad_cost = Arc::new(CostFunction::quadratic());
    let cubic_cost = Arc::new(CostFunction::power(
        3.0,
        crate::fields::constant_scalar(1.0 / 3.0),
    )?);
    let sol_q = maximize_dual_allow_unconverged(basis.clone(), &spec, &flow, &quad_cost, &opts)?;
    let sol_c = maximize_dual_allow_unconverged(basis, &spec, &flow, &cubic_cost, &opts)?;

    let drift_q = crate::primal::recover_drift(&sol_q, &spec, quad_cost);
    let drift_c = crate::primal::recover_drift(&sol_c, &spec, cubic_cost);

    let quad = flow.quadrature(&crate::marginals::QuadratureOpts::default())?;
    let mass = area * horizon;
    let mut nq = 0.0;
    let mut nc = 0.0;
    let mut gap = 0.0;
    let mut nref = 0.0;
    let mut vq = vec![0.0; 2];
    let mut vc = vec![0.0; 2];
    let mut vr = vec![0.0; 2];
    for node in &quad.nodes {
        use crate::fields::VectorField;
        drift_q.eval(node.t, &node.x, &mut vq);
        drift_c.eval(node.t, &node.x, &mut vc);
        spec.drift.eval(node.t, &node.x, &mut vr);
        for d in 0..2 {
            nq += node.w * vq[d] * vq[d];
            nc += node.w * vc[d] * vc[d];
            gap += node.w * (vq[d] - vc[d]).powi(2);
            nref += node.w * vr[d] * vr[d];
        }
    }
    let norm = |v: f64| (v / mass).sqrt();
    let report = FullNonuniversalityReport {
        dual_value_quadratic: sol_q.dual_value,
        dual_value_cubic: sol_c.dual_value,
        norm_drift_quadratic: norm(nq),
        norm_drift_cubic: norm(nc),
        drift_gap: norm(gap),
        norm_reference_drift: norm(nref),
        optimizers_differ: norm(gap) > 3.0 * norm(nq).max(0.02 * norm(nref)),
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::DriftSource;
    use crate::primal::{default_slice_times, verify_marginals};

    #[test]
    fn gaussian_affine_variance_is_reference() {
        // v = 1 + t is the natural Brownian spread: c ≡ 0, value 0
        let case = gaussian_entropic_case(TimePath::affine(1.0, 1.0), 1.0).unwrap();
        assert_eq!(case.oracle_value, 0.0);
        for t in [0.0, 0.4, 1.0] {
            assert_eq!(case.oracle_c(t), 0.0);
        }
    }

    #[test]
    fn gaussian_frozen_variance_value() {
        // v ≡ 1: c = −1/2, value = T/8
        let case = gaussian_entropic_case(TimePath::constant(1.0), 1.0).unwrap();
        assert!((case.oracle_c(0.3) + 0.5).abs() < 1e-15);
        assert!((case.oracle_value - 1.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_stressed_variance_closed_form() {
        // v = (1+t)²: ∫ c²v/2 dt = (4.5 − 4 ln 2)/8
        let case = gaussian_entropic_case(TimePath::poly(vec![1.0, 2.0, 1.0]), 1.0).unwrap();
        let closed = (4.5 - 4.0 * std::f64::consts::LN_2) / 8.0;
        assert!(
            (case.oracle_value - closed).abs() < 1e-10,
            "{} vs {closed}",
            case.oracle_value
        );
    }

    #[test]
    fn gaussian_oracle_drift_reproduces_flow() {
        let case = gaussian_entropic_case(TimePath::poly(vec![1.0, 2.0, 1.0]), 1.0).unwrap();
        let times = default_slice_times(1.0, 9);
        let rep = verify_marginals(
            &case.spec,
            &DriftSource::custom(case.oracle_drift(), "oracle"),
            &case.flow,
            30_000,
            200,
            13,
            &times,
        )
        .unwrap();
        assert!(rep.pass, "max W1 {} vs tol {}", rep.max_w1, rep.tol);
    }

    #[test]
    fn gaussian_rejects_vanishing_variance() {
        assert!(gaussian_entropic_case(TimePath::affine(0.5, -1.0), 1.0).is_err());
    }

    #[test]
    fn bessel_admissibility_window() {
        let c = bessel_case(1.5, 1.2, 1.0).unwrap();
        assert!((c.nu + 0.25).abs() < 1e-15);
        assert!(c.admissible);
        assert!(!bessel_case(1.5, 1.8, 1.0).unwrap().admissible);
        assert!(!bessel_case(1.5, 0.9, 1.0).unwrap().admissible);
        assert!(bessel_case(0.9, 1.2, 1.0).is_err());
        assert!(bessel_case(2.0, 1.2, 1.0).is_err());
    }

    #[test]
    fn bessel_psi_closed_form_value() {
        // q = 2 (p = 2): at x = (δ−1)/2 the base is 1, so Ψ = −1 for x > 0
        let c = bessel_case(1.5, 2.0, 1.0).unwrap();
        let psi = c.psi(1e-12);
        let x = (c.delta - 1.0) / 2.0;
        let mut out = [0.0];
        psi.eval(0.3, &[x], &mut out);
        assert!((out[0] + 1.0).abs() < 1e-12, "{}", out[0]);
        psi.eval(0.3, &[-x], &mut out);
        assert!((out[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bessel_admissible_exponent_is_grid_stable() {
        let c = bessel_case(1.5, 1.2, 1.0).unwrap();
        let study = c.integrability_refinement(1.2, 20_000, 200, 7).unwrap();
        assert!(
            study.rel_change.abs() < 0.10,
            "coarse {} fine {} change {}",
            study.coarse,
            study.fine,
            study.rel_change
        );
    }

    #[test]
    fn y_and_x_share_magnitude_marginals() {
        // |Y| has the law of the reflected process itself: compare |Y_T|
        // from the flip construction against X_T from an independent run.
        let c = bessel_case(1.5, 1.2, 1.0).unwrap();
        let y = c
            .simulate_y(20_000, 400, 31, 0.5, FlipLabel::FromPath)
            .unwrap();
        let spec = c.spec(400);
        let x = crate::diffusion::simulate_slices(
            &spec,
            &DriftSource::Reference,
            20_000,
            400,
            77,
            &[1.0],
        )
        .unwrap();
        let ys = crate::marginals::SliceSamples::from_flat(
            1,
            y.y_t.iter().map(|v| v.abs()).collect(),
        );
        let xs = crate::marginals::SliceSamples::from_flat(1, x.slices[0].clone());
        let w = crate::marginals::w1_slice_distance(&ys, &xs).unwrap();
        assert!(w < 0.02, "W1 {w}");
    }

    #[test]
    fn markov_statistic_flags_y_and_clears_control() {
        let c = bessel_case(1.5, 1.2, 1.0).unwrap();
        let y = c
            .simulate_y(20_000, 400, 41, 0.5, FlipLabel::FromPath)
            .unwrap();
        let r = crate::primal::markov_statistic(&y, 8, 100, 5);
        assert!(r.outside_band, "{r:?}");
        let ctl = c
            .simulate_y(20_000, 400, 42, 0.5, FlipLabel::Randomized)
            .unwrap();
        let rc = crate::primal::markov_statistic(&ctl, 8, 100, 6);
        assert!(!rc.outside_band, "{rc:?}");
    }

    #[test]
    fn curl_zero_surface() {
        let zero = SurfaceC2 {
            f: Box::new(|_, _| 0.0),
            fx: Box::new(|_, _| 0.0),
            fy: Box::new(|_, _| 0.0),
            fxx: Box::new(|_, _| 0.0),
            fxy: Box::new(|_, _| 0.0),
            fyy: Box::new(|_, _| 0.0),
        };
        let rep = nonuniversality_case(&zero, 1.2, 41);
        assert_eq!(rep.max_residual, 0.0);
        assert!(!rep.fails_universality);
    }

    #[test]
    fn curl_radial_surface_vanishes() {
        // for radial B, ‖∇B‖∇B is again radial times position: a gradient
        let rho = Bump1D {
            center: 0.4,
            halfwidth: 0.5,
            amplitude: 1.3,
        };
        let rep = nonuniversality_case(&radial_surface(rho), 1.2, 97);
        assert!(
            rep.max_residual <= rep.tol_curl.max(1e-8),
            "residual {} tol {}",
            rep.max_residual,
            rep.tol_curl
        );
        assert!(!rep.fails_universality);
    }

    #[test]
    fn curl_separable_surface_obstructed() {
        let rep = nonuniversality_case(&default_separable(), 1.2, 97);
        assert!(rep.fails_universality);
        assert!(
            rep.max_residual > 100.0 * rep.tol_curl,
            "residual {} vs tol {}",
            rep.max_residual,
            rep.tol_curl
        );
    }

    #[test]
    fn curl_antisymmetric_under_axis_swap() {
        let b = default_separable();
        let swapped = separable_surface(
            Bump1D {
                center: 0.1,
                halfwidth: 0.9,
                amplitude: 0.8,
            },
            Bump1D {
                center: 0.0,
                halfwidth: 1.0,
                amplitude: 1.0,
            },
        );
        for &(x, y) in &[(0.3, -0.2), (0.5, 0.45), (-0.7, 0.1)] {
            let r1 = curl_residual_at(&b, x, y);
            let r2 = curl_residual_at(&swapped, y, x);
            assert!((r1 + r2).abs() < 1e-12, "({x},{y}): {r1} vs {r2}");
        }
    }
}
