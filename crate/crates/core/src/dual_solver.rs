//! Maximization of the dual functional
//! J(θ) = ∬ { L_t w_θ − g(t,x,σ'∇w_θ) } μ_t(dx) dt
//! over basis coefficients, using the exact gradient of the fixed-quadrature
//! objective, with a first-order stationarity certificate and the energy-form
//! value ∬ g*(t,x,∇g(σ'Ψ)) dμ dt.

use std::cell::RefCell;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::cost::CostFunction;
use crate::defaults;
use crate::diffusion::DiffusionSpec;
use crate::error::Error;
use crate::function_space::{
    luxemburg_norm_quad, DualSolution, IterRecord, TestFunctionBasis, MAX_DIM,
};
use crate::lbfgs::{self, LbfgsOpts};
use crate::marginals::{MarginalFlow, Quadrature, QuadratureOpts};
use crate::Result;

/// Dual-solver options. `tol_foc = None` resolves to
/// `FOC_SCALE · ∬(1+‖x‖) dμ dt`.
#[derive(Clone, Debug)]
pub struct SolverOpts {
    pub tol_foc: Option<f64>,
    pub max_iter: usize,
    pub restarts: usize,
    pub lbfgs_mem: usize,
    pub time_panels: usize,
    pub gh_order: usize,
    pub seed: u64,
    pub warm_start: Option<Vec<f64>>,
    /// Re-solve on a knot-doubled basis and report the value delta.
    pub refine_check: bool,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            tol_foc: None,
            max_iter: defaults::MAX_ITER,
            restarts: defaults::RESTARTS,
            lbfgs_mem: 20,
            time_panels: defaults::TIME_PANELS_PER_INTERVAL,
            gh_order: defaults::GH_ORDER,
            seed: 0,
            warm_start: None,
            refine_check: false,
        }
    }
}

struct NodeInfo {
    t: f64,
    x: [f64; MAX_DIM],
    w: f64,
    /// σ'(t,x), row-major dim×dim.
    sigma_t: [f64; MAX_DIM * MAX_DIM],
}

struct NodeEntry {
    k: u32,
    ltphi: f64,
    grad: [f64; MAX_DIM],
}

/// Quadrature, σ', and per-node active-basis data assembled once and shared
/// by objective, gradient and energy evaluations (the gradient is exact for
/// this discretized objective).
pub struct DualProblem {
    pub dim: usize,
    pub n_theta: usize,
    nodes: Vec<NodeInfo>,
    entries: Vec<NodeEntry>,
    node_ptr: Vec<u32>,
    pub scale: f64,
    pub quadrature: Quadrature,
}

/// Quadrature options for a basis/flow pair: knot-aligned Simpson panels for
/// flows continuous in time (the native slice grid otherwise), and —
/// decisive for stationarity accuracy — spline-cell-aligned Gauss–Legendre
/// in space for Gaussian slices, since Hermite nodes straddle the knots of
/// the piecewise-cubic integrands.
pub fn quad_opts_for(
    basis: &TestFunctionBasis,
    flow: &MarginalFlow,
    time_panels: usize,
    gh_order: usize,
) -> QuadratureOpts {
    let times = if flow.has_native_times() {
        None
    } else {
        Some(basis.time_quadrature_grid(time_panels))
    };
    QuadratureOpts {
        time_nodes: 129,
        times,
        gh_order,
        space_cells: basis.space_cell_edges(),
    }
}

impl DualProblem {
    pub fn assemble(
        basis: &TestFunctionBasis,
        spec: &DiffusionSpec,
        flow: &MarginalFlow,
        opts: &QuadratureOpts,
    ) -> Result<DualProblem> {
        let dim = spec.dim;
        if dim != flow.dim() || dim != basis.dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: flow.dim(),
            });
        }
        let quadrature = flow.quadrature(opts)?;
        let mut nodes = Vec::with_capacity(quadrature.nodes.len());
        let mut entries = Vec::new();
        let mut node_ptr = Vec::with_capacity(quadrature.nodes.len() + 1);
        node_ptr.push(0u32);
        let mut scale = 0.0;
        let mut b = vec![0.0; dim];
        let mut a = vec![0.0; dim * dim];
        let mut sm = vec![0.0; dim * dim];
        let mut scratch = vec![0.0; dim * dim];
        for qn in &quadrature.nodes {
            let mut info = NodeInfo {
                t: qn.t,
                x: [0.0; MAX_DIM],
                w: qn.w,
                sigma_t: [0.0; MAX_DIM * MAX_DIM],
            };
            info.x[..dim].copy_from_slice(&qn.x);
            spec.sigma.write(qn.t, &qn.x, &mut sm);
            for i in 0..dim {
                for j in 0..dim {
                    // store σ' row-major
                    info.sigma_t[i * MAX_DIM + j] = sm[j * dim + i];
                }
            }
            spec.drift.eval(qn.t, &qn.x, &mut b);
            spec.sigma.write_a(qn.t, &qn.x, &mut a, &mut scratch);
            basis.for_each_active_full(qn.t, &qn.x, |k, _val, dt, grad, hess| {
                let mut lt = dt;
                for d in 0..dim {
                    lt += b[d] * grad[d];
                    for e in 0..dim {
                        lt += 0.5 * a[d * dim + e] * hess[d * MAX_DIM + e];
                    }
                }
                entries.push(NodeEntry {
                    k: k as u32,
                    ltphi: lt,
                    grad: *grad,
                });
            });
            node_ptr.push(entries.len() as u32);
            scale += qn.w * (1.0 + crate::linalg::norm2(&qn.x));
            nodes.push(info);
        }
        Ok(DualProblem {
            dim,
            n_theta: basis.n_basis(),
            nodes,
            entries,
            node_ptr,
            scale,
            quadrature,
        })
    }

    fn node_fields(&self, i: usize, theta: &[f64]) -> (f64, [f64; MAX_DIM]) {
        let mut lt = 0.0;
        let mut v = [0.0f64; MAX_DIM];
        let lo = self.node_ptr[i] as usize;
        let hi = self.node_ptr[i + 1] as usize;
        for e in &self.entries[lo..hi] {
            let th = theta[e.k as usize];
            lt += th * e.ltphi;
            for d in 0..self.dim {
                v[d] += th * e.grad[d];
            }
        }
        (lt, v)
    }

    fn sigma_t_apply(&self, i: usize, v: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        let n = &self.nodes[i];
        let mut z = [0.0f64; MAX_DIM];
        for r in 0..self.dim {
            let mut s = 0.0;
            for c in 0..self.dim {
                s += n.sigma_t[r * MAX_DIM + c] * v[c];
            }
            z[r] = s;
        }
        z
    }

    /// (σ')' u = σ u with the stored transpose.
    fn sigma_apply(&self, i: usize, u: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        let n = &self.nodes[i];
        let mut z = [0.0f64; MAX_DIM];
        for r in 0..self.dim {
            let mut s = 0.0;
            for c in 0..self.dim {
                s += n.sigma_t[c * MAX_DIM + r] * u[c];
            }
            z[r] = s;
        }
        z
    }

    pub fn objective(&self, cost: &CostFunction, theta: &[f64]) -> Result<f64> {
        let mut j = 0.0;
        for i in 0..self.nodes.len() {
            let (lt, v) = self.node_fields(i, theta);
            let z = self.sigma_t_apply(i, &v);
            let n = &self.nodes[i];
            let g = cost.eval_g(n.t, &n.x[..self.dim], &z[..self.dim])?;
            j += n.w * (lt - g);
        }
        Ok(j)
    }

    /// Exact gradient of the discretized objective:
    /// ∂_k = Σ w [L_tφ_k − ∇g(σ'∇w)'σ'∇φ_k].
    pub fn gradient(&self, cost: &CostFunction, theta: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        let mut u = vec![0.0; self.dim];
        for i in 0..self.nodes.len() {
            let (_lt, v) = self.node_fields(i, theta);
            let z = self.sigma_t_apply(i, &v);
            let n = &self.nodes[i];
            cost.grad_g(n.t, &n.x[..self.dim], &z[..self.dim], &mut u)?;
            let mut ufix = [0.0f64; MAX_DIM];
            ufix[..self.dim].copy_from_slice(&u);
            let su = self.sigma_apply(i, &ufix);
            let lo = self.node_ptr[i] as usize;
            let hi = self.node_ptr[i + 1] as usize;
            for e in &self.entries[lo..hi] {
                let mut dot = 0.0;
                for d in 0..self.dim {
                    dot += su[d] * e.grad[d];
                }
                out[e.k as usize] += n.w * (e.ltphi - dot);
            }
        }
        Ok(())
    }

    /// Diagonal curvature proxy D_k = Σ w ‖σ'∇φ_k‖², the exact Hessian
    /// diagonal for the quadratic cost. Used to precondition the ascent:
    /// basis elements carry wildly different μ-mass, and the raw problem is
    /// too ill-conditioned for a limited-memory method near the optimum.
    pub fn curvature_diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_theta];
        for i in 0..self.nodes.len() {
            let n = &self.nodes[i];
            let lo = self.node_ptr[i] as usize;
            let hi = self.node_ptr[i + 1] as usize;
            for e in &self.entries[lo..hi] {
                let z = self.sigma_t_apply(i, &e.grad);
                let mut s = 0.0;
                for dd in 0..self.dim {
                    s += z[dd] * z[dd];
                }
                d[e.k as usize] += n.w * s;
            }
        }
        d
    }

    /// Energy-form value ∬ g*(t, x, ∇g(σ'Ψ)) dμ dt.
    pub fn energy_value(&self, cost: &CostFunction, theta: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        let mut u = vec![0.0; self.dim];
        for i in 0..self.nodes.len() {
            let (_, v) = self.node_fields(i, theta);
            let z = self.sigma_t_apply(i, &v);
            let n = &self.nodes[i];
            cost.grad_g(n.t, &n.x[..self.dim], &z[..self.dim], &mut u)?;
            acc += n.w * cost.eval_gstar(n.t, &n.x[..self.dim], &u)?;
        }
        Ok(acc)
    }
}

/// Dual objective at θ (one-shot convenience wrapper).
pub fn dual_objective(
    theta: &[f64],
    basis: &TestFunctionBasis,
    spec: &DiffusionSpec,
    flow: &MarginalFlow,
    cost: &CostFunction,
) -> Result<f64> {
    let opts = quad_opts_for(
        basis,
        flow,
        defaults::TIME_PANELS_PER_INTERVAL,
        defaults::GH_ORDER,
    );
    DualProblem::assemble(basis, spec, flow, &opts)?.objective(cost, theta)
}

/// Exact coefficient gradient of the dual objective at θ.
pub fn dual_gradient(
    theta: &[f64],
    basis: &TestFunctionBasis,
    spec: &DiffusionSpec,
    flow: &MarginalFlow,
    cost: &CostFunction,
) -> Result<Vec<f64>> {
    let opts = quad_opts_for(
        basis,
        flow,
        defaults::TIME_PANELS_PER_INTERVAL,
        defaults::GH_ORDER,
    );
    let p = DualProblem::assemble(basis, spec, flow, &opts)?;
    let mut g = vec![0.0; p.n_theta];
    p.gradient(cost, theta, &mut g)?;
    Ok(g)
}

/// Energy-form dual value at a solution, re-deriving the identical
/// quadrature from the solution's basis.
pub fn dual_value_energy(
    sol: &DualSolution,
    spec: &DiffusionSpec,
    flow: &MarginalFlow,
    cost: &CostFunction,
) -> Result<f64> {
    let opts = quad_opts_for(
        &sol.basis,
        flow,
        defaults::TIME_PANELS_PER_INTERVAL,
        defaults::GH_ORDER,
    );
    DualProblem::assemble(&sol.basis, spec, flow, &opts)?.energy_value(cost, &sol.theta)
}

/// Maximize the dual over the basis span; returns the best iterate across
/// restarts even when uncertified (`converged = false`).
pub fn maximize_dual_allow_unconverged(
    basis: Arc<TestFunctionBasis>,
    spec: &DiffusionSpec,
    flow: &MarginalFlow,
    cost: &CostFunction,
    opts: &SolverOpts,
) -> Result<DualSolution> {
    let qopts = quad_opts_for(&basis, flow, opts.time_panels, opts.gh_order);
    let problem = DualProblem::assemble(&basis, spec, flow, &qopts)?;
    let tol = opts.tol_foc.unwrap_or(defaults::FOC_SCALE * problem.scale);
    let n = problem.n_theta;

    // diagonal preconditioner: optimize in θ̃ = d ⊙ θ with d = √D
    let diag = problem.curvature_diagonal();
    let dmax = diag.iter().fold(0.0f64, |a, &b| a.max(b));
    let d: Vec<f64> = diag
        .iter()
        .map(|&v| v.max(1e-10 * dmax).max(1e-300).sqrt())
        .collect();
    // ‖g̃‖∞ ≤ tol / max d ⟹ |g_k| = d_k |g̃_k| ≤ tol for every k
    let gtol_scaled = tol / d.iter().fold(0.0f64, |a, &b| a.max(b));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x50f7_3a2d);
    let err_cell: RefCell<Option<Error>> = RefCell::new(None);
    let mut best: Option<(Vec<f64>, f64, f64, usize, bool, Vec<IterRecord>)> = None;
    let mut total_iters = 0usize;
    let mut theta_buf = vec![0.0; n];
    for attempt in 0..opts.restarts.max(1) {
        // first attempt from the warm start (or zero); later attempts
        // continue from the best iterate with fresh curvature memory, the
        // last one jittered to guard against line-search stalls
        let start: Vec<f64> = match (attempt, &best) {
            (0, _) => opts.warm_start.clone().unwrap_or_else(|| vec![0.0; n]),
            (_, Some(b)) => {
                if attempt + 1 == opts.restarts.max(1) && opts.restarts > 2 {
                    b.0.iter()
                        .map(|v| v + 0.001 * (rng.random::<f64>() - 0.5))
                        .collect()
                } else {
                    b.0.clone()
                }
            }
            (_, None) => (0..n).map(|_| 0.01 * (rng.random::<f64>() - 0.5)).collect(),
        };
        let mut log = Vec::new();
        let start_scaled: Vec<f64> = start.iter().zip(&d).map(|(x, dk)| x * dk).collect();
        let mut fg = |xs: &[f64], g: &mut [f64]| -> f64 {
            let theta: Vec<f64> = xs.iter().zip(&d).map(|(x, dk)| x / dk).collect();
            match problem.gradient(cost, &theta, g) {
                Ok(()) => {}
                Err(e) => {
                    *err_cell.borrow_mut() = Some(e);
                    return f64::INFINITY;
                }
            }
            for (v, dk) in g.iter_mut().zip(&d) {
                *v = -*v / dk;
            }
            match problem.objective(cost, &theta) {
                Ok(j) => -j,
                Err(e) => {
                    *err_cell.borrow_mut() = Some(e);
                    f64::INFINITY
                }
            }
        };
        let r = lbfgs::minimize(
            &start_scaled,
            &mut fg,
            &LbfgsOpts {
                mem: opts.lbfgs_mem,
                max_iter: opts.max_iter,
                gtol_inf: gtol_scaled,
                ..Default::default()
            },
            &mut |it, f, ginf, step| {
                log.push(IterRecord {
                    iter: it,
                    objective: -f,
                    grad_norm: ginf,
                    step,
                });
            },
        );
        if let Some(e) = err_cell.borrow_mut().take() {
            return Err(e);
        }
        total_iters += r.iterations;
        // certify on the original-coordinate gradient
        let theta: Vec<f64> = r.x.iter().zip(&d).map(|(x, dk)| x / dk).collect();
        problem.gradient(cost, &theta, &mut theta_buf)?;
        let ginf_orig = theta_buf.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let converged = ginf_orig <= tol;
        let better = match &best {
            None => true,
            Some((_, _, _, _, bconv, _)) => {
                (converged && !bconv) || (converged == *bconv && -r.f > best.as_ref().unwrap().1)
            }
        };
        if better {
            best = Some((theta, -r.f, ginf_orig, r.iterations, converged, log));
        }
        if best.as_ref().is_some_and(|b| b.4) {
            break;
        }
    }
    let (theta, dual_value, ginf_orig, _iters, converged, log) =
        best.expect("at least one restart ran");
    let psi = crate::function_space::PsiField {
        basis: basis.clone(),
        theta: Arc::new(theta.clone()),
    };
    let lux = luxemburg_norm_quad(&problem.quadrature, spec, cost, &psi)?;
    Ok(DualSolution {
        basis,
        theta,
        dual_value,
        grad_norm_at_opt: ginf_orig,
        tol_foc: tol,
        scale: problem.scale,
        luxemburg_norm_psi: lux,
        iterations: total_iters,
        converged,
        refinement_delta: None,
        log,
    })
}

/// Maximize the dual and certify stationarity; errs on non-convergence.
/// With `refine_check`, re-solves on a knot-doubled basis and records the
/// value delta as a surrogate-gap diagnostic.
pub fn maximize_dual(
    basis: Arc<TestFunctionBasis>,
    spec: &DiffusionSpec,
    flow: &MarginalFlow,
    cost: &CostFunction,
    opts: &SolverOpts,
) -> Result<DualSolution> {
    let mut sol = maximize_dual_allow_unconverged(basis, spec, flow, cost, opts)?;
    if !sol.converged {
        return Err(Error::DualNonConvergence {
            grad_norm: sol.grad_norm_at_opt,
            tol: sol.tol_foc,
            iters: sol.iterations,
            restarts: opts.restarts,
        });
    }
    if opts.refine_check {
        let fine = Arc::new(sol.basis.refine_double()?);
        let fine_opts = SolverOpts {
            refine_check: false,
            warm_start: None,
            ..opts.clone()
        };
        let fine_sol = maximize_dual_allow_unconverged(fine, spec, flow, cost, &fine_opts)?;
        sol.refinement_delta = Some(fine_sol.dual_value - sol.dual_value);
    }
    Ok(sol)
}
