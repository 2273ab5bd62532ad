//! Potential mean-field-game layer: minimize
//! value(P[μ]) + ∫ R_t[μ_t] dt over a parametrized family of Gaussian
//! marginal flows, and certify the equilibrium variational inequality
//! value(P[μ]) + ∬∇R_t[μ_t] dμ_t dt ≤ value(P[μ̄]) + ∬∇R_t[μ_t] dμ̄_t dt
//! against a panel of perturbation flows.

use std::sync::Arc;

use serde::Serialize;

use crate::cost::CostFunction;
use crate::defaults;
use crate::diffusion::DiffusionSpec;
use crate::dual_solver::{maximize_dual, SolverOpts};
use crate::error::Error;
use crate::fields::TimePath;
use crate::function_space::{DualSolution, TestFunctionBasis};
use crate::linalg::solve_tridiag;
use crate::marginals::{time_weights, GaussianFlow, MarginalFlow};
use crate::Result;

/// Mean-field coupling cost R_t[m] with a bounded derivative kernel
/// ∇R_t[m](y).
#[derive(Clone)]
pub enum RFunctional {
    Zero,
    /// R_t[m] = λ (M₂(m) − v*(t))² with the second moment clipped at
    /// y_clip² so that ∇R_t[m](y) = 2λ(M₂ − v*) min(y², y_clip²) stays
    /// bounded (the clip is far in the Gaussian tail at default sizes).
    VarianceTarget {
        lambda: f64,
        v_star: TimePath,
        y_clip: f64,
    },
    /// Pairwise interaction R_t[m] = λ/2 ∬ min(|y−z|², (2 y_clip)²) dm dm,
    /// with ∇R_t[m](y) = λ ∫ min(|y−z|², (2 y_clip)²) m(dz).
    MeanFieldQuadratic { lambda: f64, y_clip: f64 },
}

const MAX_PAIRWISE_NODES: usize = 2048;

impl RFunctional {
    fn m2(&self, flow: &MarginalFlow, t: f64) -> Result<f64> {
        let clip = match self {
            RFunctional::Zero | RFunctional::MeanFieldQuadratic { .. } => f64::INFINITY,
            RFunctional::VarianceTarget { y_clip, .. } => *y_clip,
        };
        flow.slice_second_moment_clipped(t, clip, defaults::GH_ORDER)
    }

    fn pairwise(&self, a: &MarginalFlow, b: &MarginalFlow, t: f64, clip2: f64) -> Result<f64> {
        let na = a.space_nodes(t, defaults::GH_ORDER)?;
        let nb = b.space_nodes(t, defaults::GH_ORDER)?;
        if na.len() * nb.len() > MAX_PAIRWISE_NODES * MAX_PAIRWISE_NODES {
            return Err(Error::invalid(
                "pairwise coupling needs node-bounded slices (analytic flows)",
            ));
        }
        let mut acc = 0.0;
        for (x, wx) in &na {
            for (z, wz) in &nb {
                let d = x[0] - z[0];
                acc += wx * wz * (d * d).min(clip2);
            }
        }
        Ok(acc)
    }

    /// R_t[μ_t].
    pub fn value(&self, t: f64, flow: &MarginalFlow) -> Result<f64> {
        match self {
            RFunctional::Zero => Ok(0.0),
            RFunctional::VarianceTarget { lambda, v_star, .. } => {
                let m2 = self.m2(flow, t)?;
                let d = m2 - v_star.value(t);
                Ok(lambda * d * d)
            }
            RFunctional::MeanFieldQuadratic { lambda, y_clip } => {
                let clip2 = (2.0 * y_clip) * (2.0 * y_clip);
                Ok(0.5 * lambda * self.pairwise(flow, flow, t, clip2)?)
            }
        }
    }

    /// ∫ ∇R_t[μ_t](y) ν_t(dy) dt — the pairing of the derivative kernel at μ
    /// with any flow ν (= μ for the left side of the inequality).
    pub fn grad_pairing(
        &self,
        mu: &MarginalFlow,
        nu: &MarginalFlow,
        n_time: usize,
    ) -> Result<f64> {
        let horizon = mu.horizon();
        let ts: Vec<f64> = (0..n_time)
            .map(|i| horizon * i as f64 / (n_time - 1) as f64)
            .collect();
        let w = time_weights(&ts);
        match self {
            RFunctional::Zero => Ok(0.0),
            RFunctional::VarianceTarget { lambda, v_star, .. } => {
                let mut acc = 0.0;
                for (t, wi) in ts.iter().zip(&w) {
                    let fac = 2.0 * lambda * (self.m2(mu, *t)? - v_star.value(*t));
                    acc += wi * fac * self.m2(nu, *t)?;
                }
                Ok(acc)
            }
            RFunctional::MeanFieldQuadratic { lambda, y_clip } => {
                let clip2 = (2.0 * y_clip) * (2.0 * y_clip);
                let mut acc = 0.0;
                for (t, wi) in ts.iter().zip(&w) {
                    acc += wi * lambda * self.pairwise(nu, mu, *t, clip2)?;
                }
                Ok(acc)
            }
        }
    }

    /// ∫ R_t[μ_t] dt.
    pub fn time_integral(&self, flow: &MarginalFlow, n_time: usize) -> Result<f64> {
        let horizon = flow.horizon();
        let ts: Vec<f64> = (0..n_time)
            .map(|i| horizon * i as f64 / (n_time - 1) as f64)
            .collect();
        let w = time_weights(&ts);
        let mut acc = 0.0;
        for (t, wi) in ts.iter().zip(&w) {
            acc += wi * self.value(*t, flow)?;
        }
        Ok(acc)
    }

    /// Reported bound sup_y |∇R_t[μ_t](y)| over a time grid.
    pub fn grad_bound(&self, flow: &MarginalFlow) -> Result<f64> {
        match self {
            RFunctional::Zero => Ok(0.0),
            RFunctional::VarianceTarget {
                lambda,
                v_star,
                y_clip,
            } => {
                let mut b: f64 = 0.0;
                for k in 0..=32 {
                    let t = flow.horizon() * k as f64 / 32.0;
                    let fac = 2.0 * lambda * (self.m2(flow, t)? - v_star.value(t));
                    b = b.max(fac.abs() * y_clip * y_clip);
                }
                Ok(b)
            }
            RFunctional::MeanFieldQuadratic { lambda, y_clip } => {
                Ok(lambda * (2.0 * y_clip) * (2.0 * y_clip))
            }
        }
    }
}

/// Natural cubic interpolant through uniformly spaced control points.
struct NaturalCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalCubic {
    fn fit(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::invalid("need at least two control points"));
        }
        if n == 2 {
            return Ok(NaturalCubic {
                xs,
                ys,
                m: vec![0.0, 0.0],
            });
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let k = n - 2;
        let mut sub = vec![0.0; k.saturating_sub(1)];
        let mut diag = vec![0.0; k];
        let mut sup = vec![0.0; k.saturating_sub(1)];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = (h[i] + h[i + 1]) / 3.0;
            if i > 0 {
                sub[i - 1] = h[i] / 6.0;
            }
            if i < k - 1 {
                sup[i] = h[i + 1] / 6.0;
            }
            rhs[i] = (ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i];
        }
        let inner = solve_tridiag(&sub, &diag, &sup, &rhs)?;
        let mut m = vec![0.0; n];
        m[1..n - 1].copy_from_slice(&inner);
        Ok(NaturalCubic { xs, ys, m })
    }

    fn locate(&self, t: f64) -> usize {
        let n = self.xs.len();
        let h = self.xs[1] - self.xs[0];
        (((t - self.xs[0]) / h).floor() as i64).clamp(0, n as i64 - 2) as usize
    }

    fn value(&self, t: f64) -> f64 {
        let i = self.locate(t);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - t) / h;
        let b = (t - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    fn deriv(&self, t: f64) -> f64 {
        let i = self.locate(t);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - t) / h;
        let b = (t - self.xs[i]) / h;
        (self.ys[i + 1] - self.ys[i]) / h
            + ((1.0 - 3.0 * a * a) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0
    }
}

/// Centered Gaussian flows with a spline-parametrized log-variance path:
/// η holds ln v at the control knots τ_1..τ_{K−1}; v(0) is pinned to the
/// initial law so every member satisfies μ₀ = m₀.
#[derive(Clone)]
pub struct GaussianPathFamily {
    pub horizon: f64,
    pub v0: f64,
    pub knots: usize,
}

impl GaussianPathFamily {
    pub fn n_params(&self) -> usize {
        self.knots - 1
    }

    pub fn knot_times(&self) -> Vec<f64> {
        (0..self.knots)
            .map(|i| self.horizon * i as f64 / (self.knots - 1) as f64)
            .collect()
    }

    pub fn variance_path(&self, eta: &[f64]) -> Result<TimePath> {
        assert_eq!(eta.len(), self.n_params());
        let mut ys = vec![self.v0.ln()];
        ys.extend_from_slice(eta);
        let spline = Arc::new(NaturalCubic::fit(self.knot_times(), ys)?);
        let s2 = spline.clone();
        Ok(TimePath::new(
            move |t| spline.value(t).exp(),
            move |t| s2.value(t).exp() * s2.deriv(t),
        ))
    }

    pub fn flow(&self, eta: &[f64]) -> Result<MarginalFlow> {
        Ok(MarginalFlow::Gaussian(GaussianFlow::new_1d(
            self.horizon,
            TimePath::constant(0.0),
            self.variance_path(eta)?,
        )))
    }

    /// η matching the reference Brownian spread v(t) = v0 + t.
    pub fn reference_eta(&self) -> Vec<f64> {
        self.knot_times()
            .iter()
            .skip(1)
            .map(|&t| (self.v0 + t).ln())
            .collect()
    }
}

/// A potential-MFG problem: reference diffusion, entropy cost, coupling R,
/// and the flow family the outer minimization searches over.
pub struct MfgProblem {
    pub spec: DiffusionSpec,
    pub cost: Arc<CostFunction>,
    pub r: RFunctional,
    pub family: GaussianPathFamily,
    pub time_knots: usize,
    pub space_knots: usize,
    pub solver: SolverOpts,
}

impl MfgProblem {
    fn inner_solve(&self, flow: &MarginalFlow, warm: Option<&[f64]>) -> Result<DualSolution> {
        let basis = Arc::new(TestFunctionBasis::for_flow(
            flow,
            "bspline",
            self.time_knots,
            self.space_knots,
        )?);
        let mut opts = self.solver.clone();
        opts.warm_start = warm
            .filter(|w| w.len() == basis.n_basis())
            .map(|w| w.to_vec());
        maximize_dual(basis, &self.spec, flow, &self.cost, &opts)
    }
}

/// value(P[μ(η)]) + ∫ R_t[μ_t(η)] dt via the inner dual solve (no-gap
/// substitution of the primal value). Also returns the inner solution.
pub fn mkv_objective(
    eta: &[f64],
    problem: &MfgProblem,
    warm: Option<&[f64]>,
) -> Result<(f64, DualSolution)> {
    let flow = problem.family.flow(eta)?;
    let sol = problem.inner_solve(&flow, warm)?;
    let r_term = problem.r.time_integral(&flow, 65)?;
    Ok((sol.dual_value + r_term, sol))
}

#[derive(Clone, Debug)]
pub struct MkvOpts {
    pub max_outer: usize,
    pub init_step: f64,
    pub min_step: f64,
}

impl Default for MkvOpts {
    fn default() -> Self {
        MkvOpts {
            max_outer: 60,
            init_step: 0.4,
            min_step: 1e-3,
        }
    }
}

pub struct MkvSolution {
    pub eta: Vec<f64>,
    pub flow: MarginalFlow,
    pub inner: DualSolution,
    pub value: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Derivative-free coordinate/pattern search over η, warm-starting each
/// inner dual solve from the previous coefficients.
pub fn minimize_mkv(problem: &MfgProblem, opts: &MkvOpts) -> Result<MkvSolution> {
    let mut eta = problem.family.reference_eta();
    let (mut best_val, mut best_sol) = mkv_objective(&eta, problem, None)?;
    let mut step = opts.init_step;
    let mut evals = 1usize;
    let mut outer = 0usize;
    while step >= opts.min_step && outer < opts.max_outer {
        outer += 1;
        let mut improved = false;
        for i in 0..eta.len() {
            for dir in [1.0, -1.0] {
                let mut cand = eta.clone();
                cand[i] += dir * step;
                match mkv_objective(&cand, problem, Some(&best_sol.theta)) {
                    Ok((v, s)) => {
                        evals += 1;
                        if v < best_val - 1e-12 {
                            best_val = v;
                            best_sol = s;
                            eta = cand;
                            improved = true;
                            break;
                        }
                    }
                    Err(Error::DualNonConvergence { .. }) => {
                        evals += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let flow = problem.family.flow(&eta)?;
    Ok(MkvSolution {
        flow,
        inner: best_sol,
        value: best_val,
        converged: step < opts.min_step || outer < opts.max_outer,
        eta,
        evaluations: evals,
    })
}

/// Closed-form value(P[μ]) for a centered Gaussian flow against a 1D
/// Brownian reference with quadratic cost: ∫ c²v/2 dt, c = (v̇−1)/(2v).
/// Used as the outer-search oracle; the equilibrium certificate itself runs
/// real dual solves.
pub fn gaussian_quadratic_value_oracle(var: &TimePath, horizon: f64) -> f64 {
    let n = 2001usize;
    let ts: Vec<f64> = (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect();
    let w = time_weights(&ts);
    ts.iter()
        .zip(&w)
        .map(|(t, wi)| {
            let v = var.value(*t);
            let c = (var.deriv(*t) - 1.0) / (2.0 * v);
            wi * c * c * v / 2.0
        })
        .sum()
}

/// Coordinate descent on the closed-form objective over the Gaussian
/// family — produces an equilibrium candidate without inner solves.
/// Valid only for the 1D Brownian-reference quadratic-cost setting.
pub fn oracle_minimize_gaussian_quadratic(
    problem: &MfgProblem,
    opts: &MkvOpts,
) -> Result<Vec<f64>> {
    let objective = |eta: &[f64]| -> Result<f64> {
        let var = problem.family.variance_path(eta)?;
        let flow = problem.family.flow(eta)?;
        Ok(gaussian_quadratic_value_oracle(&var, problem.family.horizon)
            + problem.r.time_integral(&flow, 65)?)
    };
    let mut eta = problem.family.reference_eta();
    let mut best = objective(&eta)?;
    let mut step = opts.init_step;
    let mut outer = 0usize;
    while step >= opts.min_step && outer < 400 {
        outer += 1;
        let mut improved = false;
        for i in 0..eta.len() {
            for dir in [1.0, -1.0] {
                let mut cand = eta.clone();
                cand[i] += dir * step;
                let v = objective(&cand)?;
                if v < best - 1e-12 {
                    best = v;
                    eta = cand;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(eta)
}

/// Perturbation panel around a candidate flow, all members preserving
/// μ₀ = m₀: mean-shift ramps ±0.2, variance scalings ×0.8 / ×1.25, and a
/// time-localized variance bump.
pub fn perturbation_panel(var: &TimePath, horizon: f64) -> Vec<(String, MarginalFlow)> {
    let mk = |mean: TimePath, v: TimePath| {
        MarginalFlow::Gaussian(GaussianFlow::new_1d(horizon, mean, v))
    };
    vec![
        (
            "mean_shift_+0.2".into(),
            mk(
                TimePath::constant(0.0).shift_ramp(0.2, horizon),
                var.clone(),
            ),
        ),
        (
            "mean_shift_-0.2".into(),
            mk(
                TimePath::constant(0.0).shift_ramp(-0.2, horizon),
                var.clone(),
            ),
        ),
        (
            "var_scale_0.8".into(),
            mk(TimePath::constant(0.0), var.scale_ramp(0.8, horizon)),
        ),
        (
            "var_scale_1.25".into(),
            mk(TimePath::constant(0.0), var.scale_ramp(1.25, horizon)),
        ),
        (
            "var_bump_mid".into(),
            mk(
                TimePath::constant(0.0),
                var.bump_scale(0.3, 0.5 * horizon, 0.2 * horizon),
            ),
        ),
    ]
}

#[derive(Clone, Debug, Serialize)]
pub struct EquilibriumRow {
    pub label: String,
    pub rhs: f64,
    /// rhs + slack − lhs; negative means the inequality failed.
    pub margin: f64,
    pub pass: bool,
    pub inconclusive: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquilibriumReport {
    pub lhs: f64,
    pub value_mu: f64,
    pub slack: f64,
    pub grad_bound: f64,
    pub rows: Vec<EquilibriumRow>,
    pub pass: bool,
}

/// Verify the equilibrium inequality of a candidate flow against a panel of
/// perturbations; each side carries one inner dual solve, so the slack is
/// twice the per-solve gap budget.
pub fn verify_equilibrium(
    candidate_flow: &MarginalFlow,
    candidate_sol: &DualSolution,
    problem: &MfgProblem,
    perturbations: &[(String, MarginalFlow)],
) -> Result<EquilibriumReport> {
    let value_mu = candidate_sol.dual_value;
    let lhs = value_mu + problem.r.grad_pairing(candidate_flow, candidate_flow, 65)?;
    let grad_bound = problem.r.grad_bound(candidate_flow)?;
    let mut rows = Vec::new();
    let mut pass = true;
    for (label, bar) in perturbations {
        match problem.inner_solve(bar, None) {
            Ok(sol_bar) => {
                let rhs = sol_bar.dual_value + problem.r.grad_pairing(candidate_flow, bar, 65)?;
                let slack = 2.0
                    * (defaults::GAP_REL * lhs.abs().max(rhs.abs())
                        + defaults::GAP_ABS_FLOOR_SCALE * candidate_sol.scale);
                let ok = lhs <= rhs + slack;
                pass &= ok;
                rows.push(EquilibriumRow {
                    label: label.clone(),
                    rhs,
                    margin: rhs + slack - lhs,
                    pass: ok,
                    inconclusive: false,
                });
            }
            Err(Error::DualNonConvergence { .. }) => {
                rows.push(EquilibriumRow {
                    label: label.clone(),
                    rhs: f64::NAN,
                    margin: f64::NAN,
                    pass: false,
                    inconclusive: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let slack = rows
        .iter()
        .filter(|r| !r.inconclusive)
        .map(|r| r.margin)
        .fold(f64::INFINITY, f64::min);
    Ok(EquilibriumReport {
        lhs,
        value_mu,
        slack,
        grad_bound,
        rows,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::InitialLaw;
    use crate::fields::{zero_drift, Sigma};

    fn problem(lambda: f64, v_star_mult: f64) -> MfgProblem {
        let r = if lambda == 0.0 {
            RFunctional::Zero
        } else {
            RFunctional::VarianceTarget {
                lambda,
                v_star: TimePath::affine(v_star_mult, v_star_mult),
                y_clip: 20.0,
            }
        };
        MfgProblem {
            spec: DiffusionSpec::new(
                1,
                1.0,
                zero_drift(),
                Sigma::Identity,
                InitialLaw::Gaussian {
                    mean: vec![0.0],
                    var: vec![1.0],
                },
            ),
            cost: Arc::new(CostFunction::quadratic()),
            r,
            family: GaussianPathFamily {
                horizon: 1.0,
                v0: 1.0,
                knots: 4,
            },
            time_knots: 8,
            space_knots: 12,
            solver: SolverOpts::default(),
        }
    }

    #[test]
    fn natural_cubic_interpolates_and_differentiates() {
        let xs: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&t| (1.0 + t).ln()).collect();
        let s = NaturalCubic::fit(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((s.value(*x) - y).abs() < 1e-12);
        }
        for &t in &[0.1, 0.55, 0.9] {
            let h = 1e-6;
            let fd = (s.value(t + h) - s.value(t - h)) / (2.0 * h);
            assert!((s.deriv(t) - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn family_reference_eta_matches_brownian_spread() {
        let fam = GaussianPathFamily {
            horizon: 1.0,
            v0: 1.0,
            knots: 5,
        };
        let eta = fam.reference_eta();
        let v = fam.variance_path(&eta).unwrap();
        for &t in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            assert!((v.value(t) - (1.0 + t)).abs() < 5e-3, "t={t}: {}", v.value(t));
        }
    }

    #[test]
    fn zero_coupling_objective_vanishes_at_reference() {
        let p = problem(0.0, 1.0);
        let eta = p.family.reference_eta();
        let (v, sol) = mkv_objective(&eta, &p, None).unwrap();
        assert!(v.abs() < 2e-3, "{v}");
        assert!(sol.converged);
    }

    #[test]
    fn variance_target_pulls_objective_down() {
        // with a target 2× the reference spread, moving toward the target
        // beats staying at the reference
        let p = problem(0.5, 2.0);
        let eta_ref = p.family.reference_eta();
        let eta_tgt: Vec<f64> = p
            .family
            .knot_times()
            .iter()
            .skip(1)
            .map(|&t| (2.0 * (1.0 + t)).ln())
            .collect();
        let (v_ref, _) = mkv_objective(&eta_ref, &p, None).unwrap();
        let (v_tgt, _) = mkv_objective(&eta_tgt, &p, None).unwrap();
        assert!(v_tgt < v_ref, "target {v_tgt} vs reference {v_ref}");
    }

    #[test]
    fn r_term_linear_in_lambda() {
        let p1 = problem(0.5, 2.0);
        let p2 = problem(1.0, 2.0);
        let flow = p1.family.flow(&p1.family.reference_eta()).unwrap();
        let r1 = p1.r.time_integral(&flow, 65).unwrap();
        let r2 = p2.r.time_integral(&flow, 65).unwrap();
        assert!((r2 - 2.0 * r1).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_inner_solver_on_family() {
        let p = problem(0.5, 2.0);
        let eta = p.family.reference_eta();
        let var = p.family.variance_path(&eta).unwrap();
        let oracle = gaussian_quadratic_value_oracle(&var, 1.0);
        let (val, _) = mkv_objective(&eta, &p, None).unwrap();
        let r = p
            .r
            .time_integral(&p.family.flow(&eta).unwrap(), 65)
            .unwrap();
        let inner = val - r;
        assert!(
            (inner - oracle).abs() < 0.05 * (1.0 + oracle.abs()),
            "inner {inner} vs oracle {oracle}"
        );
    }

    #[test]
    fn directional_derivative_of_r_matches_kernel() {
        // (R[m + ε(m̄−m)] − R[m])/ε → ∫ ∇R[m] d(m̄−m)
        let p = problem(0.7, 2.0);
        let mu = p.family.flow(&p.family.reference_eta()).unwrap();
        let bar = MarginalFlow::Gaussian(GaussianFlow::new_1d(
            1.0,
            TimePath::constant(0.0),
            TimePath::affine(1.0, 1.0).scale_ramp(1.4, 1.0),
        ));
        let t = 0.6;
        let eps = 1e-4;
        let mix = MarginalFlow::Mixture(vec![(1.0 - eps, mu.clone()), (eps, bar.clone())]);
        let fd = (p.r.value(t, &mix).unwrap() - p.r.value(t, &mu).unwrap()) / eps;
        // kernel form at a single time: 2λ(M₂(μ)−v*)(M₂(m̄)−M₂(m))
        let RFunctional::VarianceTarget { lambda, v_star, y_clip } = &p.r else {
            unreachable!()
        };
        let m2mu = mu.slice_second_moment_clipped(t, *y_clip, 20).unwrap();
        let m2bar = bar.slice_second_moment_clipped(t, *y_clip, 20).unwrap();
        let kernel = 2.0 * lambda * (m2mu - v_star.value(t)) * (m2bar - m2mu);
        assert!(
            (fd - kernel).abs() < 1e-2 * (1.0 + kernel.abs()),
            "fd {fd} vs kernel {kernel}"
        );
    }

    #[test]
    fn minimize_mkv_zero_coupling_stays_at_reference() {
        let mut p = problem(0.0, 1.0);
        p.time_knots = 6;
        p.space_knots = 10;
        let sol = minimize_mkv(
            &p,
            &MkvOpts {
                max_outer: 6,
                init_step: 0.2,
                min_step: 0.05,
            },
        )
        .unwrap();
        assert!(sol.value.abs() < 5e-3, "value {}", sol.value);
        let eta_ref = p.family.reference_eta();
        for (a, b) in sol.eta.iter().zip(&eta_ref) {
            assert!((a - b).abs() <= 0.21, "{a} vs {b}");
        }
    }

    #[test]
    fn equilibrium_equality_at_identical_perturbation() {
        let p = problem(0.5, 2.0);
        let eta = oracle_minimize_gaussian_quadratic(
            &p,
            &MkvOpts {
                max_outer: 200,
                init_step: 0.4,
                min_step: 1e-4,
            },
        )
        .unwrap();
        let flow = p.family.flow(&eta).unwrap();
        let sol = p.inner_solve(&flow, None).unwrap();
        let rep =
            verify_equilibrium(&flow, &sol, &p, &[("self".into(), flow.clone())]).unwrap();
        assert!(rep.pass, "{rep:?}");
        // μ̄ = μ: both sides equal up to solver noise, well inside slack
        let row = &rep.rows[0];
        assert!((rep.lhs - row.rhs).abs() <= rep.lhs.abs().max(row.rhs.abs()) * 0.05 + 1e-3);
    }
}
