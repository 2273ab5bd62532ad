//! Reference diffusion dX = b dt + σ dW: generator application,
//! Euler–Maruyama path simulation with drift overrides, and Girsanov
//! stochastic-exponential reweighting.
//!
//! Randomness is counter-based: path p of a run with seed s uses an
//! independent ChaCha stream keyed by splitmix64(s, p), so results are
//! bit-identical for any worker count.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::defaults;
use crate::error::Error;
use crate::fields::{BoundingBox, C12Field, Sigma, VectorField};
use crate::Result;

/// Initial law m₀.
#[derive(Clone)]
pub enum InitialLaw {
    Dirac(Vec<f64>),
    /// Independent Gaussian coordinates.
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
    Sampler(Arc<dyn Fn(&mut ChaCha8Rng, &mut [f64]) + Send + Sync>),
}

impl InitialLaw {
    pub fn dim_hint(&self) -> Option<usize> {
        match self {
            InitialLaw::Dirac(p) => Some(p.len()),
            InitialLaw::Gaussian { mean, .. } => Some(mean.len()),
            InitialLaw::Sampler(_) => None,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            InitialLaw::Dirac(p) => out.copy_from_slice(p),
            InitialLaw::Gaussian { mean, var } => {
                for i in 0..out.len() {
                    let z: f64 = rng.sample(StandardNormal);
                    out[i] = mean[i] + var[i].sqrt() * z;
                }
            }
            InitialLaw::Sampler(f) => f(rng, out),
        }
    }

    /// A representative center point, used for σ-invertibility probes.
    pub fn center(&self, dim: usize) -> Vec<f64> {
        match self {
            InitialLaw::Dirac(p) => p.clone(),
            InitialLaw::Gaussian { mean, .. } => mean.clone(),
            InitialLaw::Sampler(_) => vec![0.0; dim],
        }
    }
}

/// State transform applied after every Euler step.
#[derive(Clone)]
pub enum StepTransform {
    None,
    /// x ← |x| coordinate-wise (reflecting boundary at the origin).
    ReflectAbs,
    /// Periodic wrap into a box.
    Wrap(BoundingBox),
}

/// Reference diffusion coefficients with horizon and initial law.
#[derive(Clone)]
pub struct DiffusionSpec {
    pub dim: usize,
    pub horizon: f64,
    pub drift: Arc<dyn VectorField>,
    pub sigma: Sigma,
    pub m0: InitialLaw,
    /// Optional bounding box for grid methods.
    pub domain: Option<BoundingBox>,
    pub post_step: StepTransform,
}

impl DiffusionSpec {
    pub fn new(
        dim: usize,
        horizon: f64,
        drift: Arc<dyn VectorField>,
        sigma: Sigma,
        m0: InitialLaw,
    ) -> Self {
        DiffusionSpec {
            dim,
            horizon,
            drift,
            sigma,
            m0,
            domain: None,
            post_step: StepTransform::None,
        }
    }

    /// Probe σ for invertibility at a handful of space-time points.
    pub fn validate(&self) -> Result<()> {
        if self.horizon <= 0.0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        let center = self.m0.center(self.dim);
        if center.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: center.len(),
            });
        }
        let mut probes = vec![center.clone()];
        for k in 0..3 {
            let mut p = center.clone();
            for (i, v) in p.iter_mut().enumerate() {
                *v += ((k * 7 + i * 3 + 1) % 5) as f64 - 2.0;
            }
            probes.push(p);
        }
        for t in [0.0, 0.5 * self.horizon, self.horizon] {
            for p in &probes {
                let cond = self.sigma.cond_probe(t, p);
                if !cond.is_finite() || cond > 1e12 {
                    return Err(Error::SingularSigma {
                        t,
                        x: p.clone(),
                        cond,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Which drift to simulate under.
#[derive(Clone)]
pub enum DriftSource {
    Reference,
    Custom {
        field: Arc<dyn VectorField>,
        label: String,
    },
}

impl DriftSource {
    pub fn custom(field: Arc<dyn VectorField>, label: impl Into<String>) -> Self {
        DriftSource::Custom {
            field,
            label: label.into(),
        }
    }

    fn label(&self) -> &str {
        match self {
            DriftSource::Reference => "reference",
            DriftSource::Custom { label, .. } => label,
        }
    }
}

/// Simulated trajectories on a uniform grid, with per-path validity flags
/// and optionally the Brownian increments needed for reweighting.
pub struct PathEnsemble {
    pub dim: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub seed: u64,
    pub drift_label: String,
    states: Vec<f64>,
    increments: Option<Vec<f64>>,
    pub valid: Vec<bool>,
    pub flagged: usize,
}

impl PathEnsemble {
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| i as f64 * self.dt()).collect()
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let w = (self.n_steps + 1) * self.dim;
        let o = path * w + step * self.dim;
        &self.states[o..o + self.dim]
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let inc = self
            .increments
            .as_ref()
            .expect("increments were not retained");
        let w = self.n_steps * self.dim;
        let o = path * w + step * self.dim;
        &inc[o..o + self.dim]
    }

    pub fn has_increments(&self) -> bool {
        self.increments.is_some()
    }

    /// States of all valid paths at a grid index, flattened n×dim.
    pub fn slice_at(&self, step: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_paths * self.dim);
        for p in 0..self.n_paths {
            if self.valid[p] {
                out.extend_from_slice(self.state(p, step));
            }
        }
        out
    }

    /// Nearest grid index for a time.
    pub fn grid_index(&self, t: f64) -> usize {
        let i = (t / self.dt()).round() as i64;
        i.clamp(0, self.n_steps as i64) as usize
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent RNG for path `p` of a run seeded with `seed`.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(path as u64 + 1)))
}

pub(crate) struct StepBuffers {
    b: Vec<f64>,
    dw: Vec<f64>,
    sdw: Vec<f64>,
    scratch: Vec<f64>,
}

impl StepBuffers {
    pub(crate) fn new(dim: usize) -> Self {
        StepBuffers {
            b: vec![0.0; dim],
            dw: vec![0.0; dim],
            sdw: vec![0.0; dim],
            scratch: vec![0.0; dim * dim],
        }
    }
}

/// Run a single Euler–Maruyama path, invoking `on_state` for every grid
/// index 0..=n_steps and `on_incr` with each Brownian increment. Returns
/// false if the drift or state went non-finite (the path is then truncated).
pub(crate) fn run_one_path(
    spec: &DiffusionSpec,
    drift: &dyn VectorField,
    n_steps: usize,
    rng: &mut ChaCha8Rng,
    buf: &mut StepBuffers,
    x: &mut [f64],
    mut on_state: impl FnMut(usize, f64, &[f64]),
    mut on_incr: impl FnMut(usize, &[f64]),
) -> bool {
    let dim = spec.dim;
    let dt = spec.horizon / n_steps as f64;
    let sqdt = dt.sqrt();
    spec.m0.sample(rng, x);
    on_state(0, 0.0, x);
    for i in 0..n_steps {
        let t = i as f64 * dt;
        drift.eval(t, x, &mut buf.b);
        if !buf.b.iter().all(|v| v.is_finite()) {
            return false;
        }
        for d in buf.dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *d = sqdt * z;
        }
        spec.sigma
            .apply(t, x, &buf.dw, &mut buf.sdw, &mut buf.scratch);
        for j in 0..dim {
            x[j] += buf.b[j] * dt + buf.sdw[j];
        }
        match &spec.post_step {
            StepTransform::None => {}
            StepTransform::ReflectAbs => {
                for v in x.iter_mut() {
                    *v = v.abs();
                }
            }
            StepTransform::Wrap(b) => b.wrap(x),
        }
        if !x.iter().all(|v| v.is_finite()) {
            return false;
        }
        on_incr(i, &buf.dw);
        on_state(i + 1, t + dt, x);
    }
    true
}

fn check_flagged(flagged: usize, total: usize) -> Result<()> {
    if (flagged as f64) > defaults::FLAGGED_PATH_LIMIT * total as f64 {
        return Err(Error::TooManyFlaggedPaths {
            flagged,
            total,
            limit_pct: defaults::FLAGGED_PATH_LIMIT * 100.0,
        });
    }
    Ok(())
}

/// Euler–Maruyama simulation with full path storage.
pub fn simulate(
    spec: &DiffusionSpec,
    drift: &DriftSource,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    retain_increments: bool,
) -> Result<PathEnsemble> {
    assert!(n_paths >= 1 && n_steps >= 1);
    let dim = spec.dim;
    let drift_field: &dyn VectorField = match drift {
        DriftSource::Reference => spec.drift.as_ref(),
        DriftSource::Custom { field, .. } => field.as_ref(),
    };
    let stride_s = (n_steps + 1) * dim;
    let stride_i = n_steps * dim;
    let mut states = vec![0.0; n_paths * stride_s];
    let mut incs = if retain_increments {
        vec![0.0; n_paths * stride_i]
    } else {
        Vec::new()
    };

    let valid: Vec<bool> = if retain_increments {
        states
            .par_chunks_mut(stride_s)
            .zip(incs.par_chunks_mut(stride_i))
            .enumerate()
            .map(|(p, (sc, ic))| {
                let mut rng = path_rng(seed, p);
                let mut buf = StepBuffers::new(dim);
                let mut x = vec![0.0; dim];
                run_one_path(
                    spec,
                    drift_field,
                    n_steps,
                    &mut rng,
                    &mut buf,
                    &mut x,
                    |i, _t, s| sc[i * dim..(i + 1) * dim].copy_from_slice(s),
                    |i, dw| ic[i * dim..(i + 1) * dim].copy_from_slice(dw),
                )
            })
            .collect()
    } else {
        states
            .par_chunks_mut(stride_s)
            .enumerate()
            .map(|(p, sc)| {
                let mut rng = path_rng(seed, p);
                let mut buf = StepBuffers::new(dim);
                let mut x = vec![0.0; dim];
                run_one_path(
                    spec,
                    drift_field,
                    n_steps,
                    &mut rng,
                    &mut buf,
                    &mut x,
                    |i, _t, s| sc[i * dim..(i + 1) * dim].copy_from_slice(s),
                    |_i, _dw| {},
                )
            })
            .collect()
    };

    let flagged = valid.iter().filter(|v| !**v).count();
    check_flagged(flagged, n_paths)?;
    Ok(PathEnsemble {
        dim,
        n_paths,
        n_steps,
        horizon: spec.horizon,
        seed,
        drift_label: drift.label().to_string(),
        states,
        increments: retain_increments.then_some(incs),
        valid,
        flagged,
    })
}

/// States recorded at a subset of grid indices (memory-light verification).
pub struct SliceStates {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Per slice: states of valid paths, flattened n×dim.
    pub slices: Vec<Vec<f64>>,
    pub flagged: usize,
    pub n_paths: usize,
}

/// Simulate and keep only the states at the given slice times.
pub fn simulate_slices(
    spec: &DiffusionSpec,
    drift: &DriftSource,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    slice_times: &[f64],
) -> Result<SliceStates> {
    let dim = spec.dim;
    let dt = spec.horizon / n_steps as f64;
    let idx: Vec<usize> = slice_times
        .iter()
        .map(|t| ((t / dt).round() as i64).clamp(0, n_steps as i64) as usize)
        .collect();
    let drift_field: &dyn VectorField = match drift {
        DriftSource::Reference => spec.drift.as_ref(),
        DriftSource::Custom { field, .. } => field.as_ref(),
    };
    let per_path: Vec<(Vec<f64>, bool)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut buf = StepBuffers::new(dim);
            let mut x = vec![0.0; dim];
            let mut rec = vec![f64::NAN; idx.len() * dim];
            let ok = run_one_path(
                spec,
                drift_field,
                n_steps,
                &mut rng,
                &mut buf,
                &mut x,
                |i, _t, s| {
                    for (k, &want) in idx.iter().enumerate() {
                        if want == i {
                            rec[k * dim..(k + 1) * dim].copy_from_slice(s);
                        }
                    }
                },
                |_i, _dw| {},
            );
            (rec, ok)
        })
        .collect();

    let flagged = per_path.iter().filter(|(_, ok)| !ok).count();
    check_flagged(flagged, n_paths)?;
    let mut slices = vec![Vec::with_capacity((n_paths - flagged) * dim); idx.len()];
    for (rec, ok) in &per_path {
        if !ok {
            continue;
        }
        for (k, s) in slices.iter_mut().enumerate() {
            s.extend_from_slice(&rec[k * dim..(k + 1) * dim]);
        }
    }
    Ok(SliceStates {
        dim,
        times: idx.iter().map(|&i| i as f64 * dt).collect(),
        slices,
        flagged,
        n_paths,
    })
}

/// Simulate and fold each path into ∫₀ᵀ f(t, X_t) dt (left-endpoint rule).
/// Returns the per-path integrals of the valid paths.
pub fn simulate_fold(
    spec: &DiffusionSpec,
    drift: &DriftSource,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    f: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
) -> Result<Vec<f64>> {
    let dim = spec.dim;
    let dt = spec.horizon / n_steps as f64;
    let drift_field: &dyn VectorField = match drift {
        DriftSource::Reference => spec.drift.as_ref(),
        DriftSource::Custom { field, .. } => field.as_ref(),
    };
    let per_path: Vec<(f64, bool)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut buf = StepBuffers::new(dim);
            let mut x = vec![0.0; dim];
            let mut acc = 0.0;
            let ok = run_one_path(
                spec,
                drift_field,
                n_steps,
                &mut rng,
                &mut buf,
                &mut x,
                |i, t, s| {
                    if i < n_steps {
                        acc += f(t, s) * dt;
                    }
                },
                |_i, _dw| {},
            );
            (acc, ok)
        })
        .collect();
    let flagged = per_path.iter().filter(|(_, ok)| !ok).count();
    check_flagged(flagged, n_paths)?;
    Ok(per_path
        .into_iter()
        .filter_map(|(v, ok)| ok.then_some(v))
        .collect())
}

/// Per-path Girsanov weights and their summary statistics.
pub struct GirsanovWeights {
    /// Aligned with ensemble paths; NaN for flagged paths.
    pub weights: Vec<f64>,
    pub flagged: usize,
    pub mean: f64,
    pub std_error: f64,
    /// Mean deviated from 1 by more than 5 standard errors.
    pub mean_warning: bool,
}

/// Discretized stochastic exponential of −∫ ∇g(σ'Ψ)' σ⁻¹ dM along each path
/// of a reference-drift ensemble. Since dM = σ dW under the reference law,
/// the discretized log-weight is −Σ u·ΔW − ½ Σ ‖u‖² Δt with u = ∇g(σ'Ψ).
pub fn girsanov_weight(
    ensemble: &PathEnsemble,
    spec: &DiffusionSpec,
    psi: &dyn VectorField,
    cost: &crate::cost::CostFunction,
) -> Result<GirsanovWeights> {
    if !ensemble.has_increments() {
        return Err(Error::invalid(
            "girsanov_weight needs an ensemble simulated with retained increments",
        ));
    }
    if ensemble.drift_label != "reference" {
        return Err(Error::invalid(format!(
            "girsanov_weight reweights the reference law, got drift `{}`",
            ensemble.drift_label
        )));
    }
    let dim = ensemble.dim;
    let dt = ensemble.dt();
    let weights: Vec<f64> = (0..ensemble.n_paths)
        .into_par_iter()
        .map(|p| {
            if !ensemble.valid[p] {
                return f64::NAN;
            }
            let mut psiv = vec![0.0; dim];
            let mut z = vec![0.0; dim];
            let mut u = vec![0.0; dim];
            let mut scratch = vec![0.0; dim * dim];
            let mut logw = 0.0;
            for i in 0..ensemble.n_steps {
                let t = i as f64 * dt;
                let x = ensemble.state(p, i);
                psi.eval(t, x, &mut psiv);
                spec.sigma.apply_transpose(t, x, &psiv, &mut z, &mut scratch);
                if cost.grad_g(t, x, &z, &mut u).is_err() {
                    return f64::NAN;
                }
                let dw = ensemble.increment(p, i);
                let mut udw = 0.0;
                let mut uu = 0.0;
                for j in 0..dim {
                    udw += u[j] * dw[j];
                    uu += u[j] * u[j];
                }
                logw -= udw + 0.5 * uu * dt;
            }
            let w = logw.exp();
            if w.is_finite() {
                w
            } else {
                f64::NAN
            }
        })
        .collect();

    let good: Vec<f64> = weights.iter().copied().filter(|w| w.is_finite()).collect();
    let flagged = weights.len() - good.len();
    if good.is_empty() {
        return Err(Error::invalid("all Girsanov weights overflowed"));
    }
    let n = good.len() as f64;
    let mean = good.iter().sum::<f64>() / n;
    let var = good.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let std_error = (var / n).sqrt();
    let mean_warning = (mean - 1.0).abs() > 5.0 * std_error;
    Ok(GirsanovWeights {
        weights,
        flagged,
        mean,
        std_error,
        mean_warning,
    })
}

/// L_t w = ∂_t w + b'∇w + ½ Σ_{ij} a^{ij} ∂²_{ij} w at (t, x).
pub fn apply_generator(spec: &DiffusionSpec, w: &dyn C12Field, t: f64, x: &[f64]) -> f64 {
    let dim = spec.dim;
    let mut grad = vec![0.0; dim];
    let mut hess = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    let mut a = vec![0.0; dim * dim];
    let mut scratch = vec![0.0; dim * dim];
    w.gradient(t, x, &mut grad);
    w.hessian(t, x, &mut hess);
    spec.drift.eval(t, x, &mut b);
    spec.sigma.write_a(t, x, &mut a, &mut scratch);
    let mut v = w.time_deriv(t, x);
    for i in 0..dim {
        v += b[i] * grad[i];
        for j in 0..dim {
            v += 0.5 * a[i * dim + j] * hess[i * dim + j];
        }
    }
    v
}
