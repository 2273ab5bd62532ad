//! Limited-memory BFGS minimizer with Armijo backtracking line search.

use std::collections::VecDeque;

use crate::linalg::dot;

#[derive(Clone, Debug)]
pub struct LbfgsOpts {
    pub mem: usize,
    pub max_iter: usize,
    /// Convergence: ‖∇f‖_∞ ≤ gtol_inf.
    pub gtol_inf: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_ls: usize,
}

impl Default for LbfgsOpts {
    fn default() -> Self {
        LbfgsOpts {
            mem: 10,
            max_iter: 500,
            gtol_inf: 1e-8,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_ls: 50,
        }
    }
}

pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub grad_inf: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// Minimize f with value+gradient callback `fg(x, grad) -> f`.
/// `on_iter(iter, f, ginf, step)` fires after every accepted step.
pub fn minimize(
    x0: &[f64],
    fg: &mut dyn FnMut(&[f64], &mut [f64]) -> f64,
    opts: &LbfgsOpts,
    on_iter: &mut dyn FnMut(usize, f64, f64, f64),
) -> LbfgsResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut ginf = inf_norm(&g);
    on_iter(0, f, ginf, 0.0);

    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new(); // (s, y, rho)
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iter = 0usize;

    while iter < opts.max_iter {
        if ginf <= opts.gtol_inf {
            return LbfgsResult {
                x,
                f,
                grad_inf: ginf,
                grad: g,
                iterations: iter,
                converged: true,
            };
        }
        // two-loop recursion: d = -H g
        d.copy_from_slice(&g);
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            for i in 0..n {
                d[i] -= a * y[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y).max(1e-300);
            for v in d.iter_mut() {
                *v *= gamma;
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for i in 0..n {
                d[i] += (a - b) * s[i];
            }
        }
        for v in d.iter_mut() {
            *v = -*v;
        }
        let mut gd = dot(&g, &d);
        if gd >= 0.0 {
            // not a descent direction: fall back to steepest descent
            hist.clear();
            for i in 0..n {
                d[i] = -g[i];
            }
            gd = -dot(&g, &g);
        }

        // Armijo backtracking
        let mut step = if hist.is_empty() {
            1.0 / (1.0 + inf_norm(&g))
        } else {
            1.0
        };
        let mut accepted = false;
        for _ in 0..opts.max_ls {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = fg(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + opts.armijo_c1 * step * gd {
                // curvature pair
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * crate::linalg::norm2(&s) * crate::linalg::norm2(&y) {
                    if hist.len() == opts.mem {
                        hist.pop_front();
                    }
                    hist.push_back((s, y, 1.0 / sy));
                }
                x.copy_from_slice(&x_new);
                g.copy_from_slice(&g_new);
                f = f_new;
                ginf = inf_norm(&g);
                accepted = true;
                break;
            }
            step *= opts.backtrack;
        }
        iter += 1;
        if !accepted {
            // line search stalled; give up from this start
            return LbfgsResult {
                x,
                f,
                grad_inf: ginf,
                grad: g,
                iterations: iter,
                converged: ginf <= opts.gtol_inf,
            };
        }
        on_iter(iter, f, ginf, step);
    }
    LbfgsResult {
        converged: ginf <= opts.gtol_inf,
        x,
        f,
        grad_inf: ginf,
        grad: g,
        iterations: iter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        // f = ½ Σ c_i x_i², minimum at 0
        let c = [1.0, 4.0, 0.25, 9.0];
        let mut fg = |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..4 {
                f += 0.5 * c[i] * x[i] * x[i];
                g[i] = c[i] * x[i];
            }
            f
        };
        let r = minimize(
            &[1.0, -2.0, 3.0, 0.5],
            &mut fg,
            &LbfgsOpts {
                gtol_inf: 1e-10,
                ..Default::default()
            },
            &mut |_, _, _, _| {},
        );
        assert!(r.converged);
        assert!(r.x.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn rosenbrock_2d() {
        let mut fg = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (1.0, 100.0);
            let f = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
            g[0] = -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]);
            g[1] = 2.0 * b * (x[1] - x[0] * x[0]);
            f
        };
        let r = minimize(
            &[-1.2, 1.0],
            &mut fg,
            &LbfgsOpts {
                gtol_inf: 1e-8,
                max_iter: 2000,
                ..Default::default()
            },
            &mut |_, _, _, _| {},
        );
        assert!(r.converged, "grad_inf={}", r.grad_inf);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn monotone_decrease() {
        let mut fg = |x: &[f64], g: &mut [f64]| {
            let f = (x[0] - 3.0).powi(4) + x[1] * x[1];
            g[0] = 4.0 * (x[0] - 3.0).powi(3);
            g[1] = 2.0 * x[1];
            f
        };
        let mut last = f64::INFINITY;
        minimize(
            &[0.0, 5.0],
            &mut fg,
            &LbfgsOpts::default(),
            &mut |_, f, _, _| {
                assert!(f <= last + 1e-15);
                last = f;
            },
        );
    }
}
