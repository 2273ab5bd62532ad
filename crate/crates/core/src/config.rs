//! Run configuration: strict JSON schema (unknown keys rejected), defaults,
//! and construction of the cost / diffusion / marginals / basis objects.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::defaults;
use crate::diffusion::{DiffusionSpec, InitialLaw};
use crate::dual_solver::SolverOpts;
use crate::error::Error;
use crate::fields::{
    constant_drift, constant_scalar, linear_drift, zero_drift, BoundingBox, Sigma, TimePath,
};
use crate::function_space::{BasisSpec, TestFunctionBasis};
use crate::marginals::{EmpiricalFlow, GaussianFlow, GridFlow, MarginalFlow, MassMode};
use crate::mfg::{GaussianPathFamily, MfgProblem, RFunctional};
use crate::Result;

fn default_seed() -> u64 {
    12345
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub cost: CostConfig,
    pub diffusion: DiffusionConfig,
    pub marginals: MarginalsConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub mc: McConfig,
    /// Worker threads (0 = library default); has no effect on results.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub kind: String,
    #[serde(default)]
    pub p: Option<f64>,
    /// "constant:<v>"
    #[serde(default)]
    pub scale: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// "zero" | "linear:<gain>" | "constant:<v1,...,vq>"
    #[serde(default = "zero_string")]
    pub b: String,
    #[serde(default)]
    pub sigma: SigmaConfig,
    pub m0: M0Config,
}

fn one() -> usize {
    1
}
fn zero_string() -> String {
    "zero".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaConfig {
    /// "identity" | "scalar:<c>" | "diag:<v1,...,vq>"
    Named(String),
    /// Row-major constant matrix.
    Matrix(Vec<Vec<f64>>),
}

impl Default for SigmaConfig {
    fn default() -> Self {
        SigmaConfig::Named("identity".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct M0Config {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub point: Option<Vec<f64>>,
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default)]
    pub var: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalsConfig {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub mean: Option<PathSpec>,
    #[serde(default)]
    pub cov: Option<PathSpec>,
    #[serde(default)]
    pub file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathSpec {
    /// "zero" | "constant:<v>"
    Named(String),
    Poly { coeffs: Vec<f64> },
}

impl PathSpec {
    pub fn build(&self, key: &str) -> Result<TimePath> {
        match self {
            PathSpec::Named(s) => {
                if s == "zero" {
                    Ok(TimePath::constant(0.0))
                } else if let Some(v) = s.strip_prefix("constant:") {
                    let v: f64 = v
                        .parse()
                        .map_err(|_| Error::schema(key, format!("bad constant `{s}`")))?;
                    Ok(TimePath::constant(v))
                } else {
                    Err(Error::schema(
                        key,
                        format!("expected \"zero\", \"constant:<v>\" or {{coeffs}}, got `{s}`"),
                    ))
                }
            }
            PathSpec::Poly { coeffs } => {
                if coeffs.is_empty() {
                    return Err(Error::schema(key, "poly coeffs must be non-empty"));
                }
                Ok(TimePath::poly(coeffs.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(default = "default_time_knots")]
    pub time_knots: usize,
    #[serde(default = "default_space_knots")]
    pub space_knots: usize,
    #[serde(default = "bspline_string")]
    pub kind: String,
    #[serde(rename = "box", default)]
    pub bbox: BoxConfig,
}

fn default_time_knots() -> usize {
    defaults::TIME_KNOTS
}
fn default_space_knots() -> usize {
    defaults::SPACE_KNOTS
}
fn bspline_string() -> String {
    "bspline".into()
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            time_knots: defaults::TIME_KNOTS,
            space_knots: defaults::SPACE_KNOTS,
            kind: "bspline".into(),
            bbox: BoxConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoxConfig {
    Named(String),
    Explicit { lo: Vec<f64>, hi: Vec<f64> },
}

impl Default for BoxConfig {
    fn default() -> Self {
        BoxConfig::Named("auto".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub tol_foc: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_time_panels")]
    pub time_panels: usize,
    #[serde(default = "default_gh_order")]
    pub gh_order: usize,
}

fn default_max_iter() -> usize {
    defaults::MAX_ITER
}
fn default_restarts() -> usize {
    defaults::RESTARTS
}
fn default_time_panels() -> usize {
    defaults::TIME_PANELS_PER_INTERVAL
}
fn default_gh_order() -> usize {
    defaults::GH_ORDER
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_foc: None,
            max_iter: defaults::MAX_ITER,
            restarts: defaults::RESTARTS,
            time_panels: defaults::TIME_PANELS_PER_INTERVAL,
            gh_order: defaults::GH_ORDER,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default = "default_slices")]
    pub slices: usize,
}

fn default_n_paths() -> usize {
    defaults::N_PATHS
}
fn default_n_steps() -> usize {
    defaults::N_STEPS
}
fn default_slices() -> usize {
    defaults::N_SLICES
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_paths: defaults::N_PATHS,
            n_steps: defaults::N_STEPS,
            slices: defaults::N_SLICES,
        }
    }
}

/// Everything a run needs, built and cross-validated from a config.
pub struct BuiltProblem {
    pub config: RunConfig,
    pub cost: Arc<CostFunction>,
    pub spec: DiffusionSpec,
    pub flow: MarginalFlow,
    pub basis: Arc<TestFunctionBasis>,
    pub solver_opts: SolverOpts,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_str_validated(&text)
    }

    pub fn from_str_validated(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.cost.kind.as_str() {
            "quadratic" => {}
            "power" | "power_log" => {
                let p = self
                    .cost
                    .p
                    .ok_or_else(|| Error::schema("cost.p", "required for power costs"))?;
                if !(p > 1.0) {
                    return Err(Error::schema(
                        "cost.p",
                        format!("superlinear growth requires p > 1, got {p}"),
                    ));
                }
            }
            other => {
                return Err(Error::schema(
                    "cost.kind",
                    format!("expected quadratic|power|power_log, got `{other}`"),
                ))
            }
        }
        if self.diffusion.horizon <= 0.0 {
            return Err(Error::schema("diffusion.T", "horizon must be positive"));
        }
        if self.diffusion.dim == 0 || self.diffusion.dim > 3 {
            return Err(Error::schema("diffusion.dim", "dim must be 1..=3"));
        }
        if self.mc.n_paths == 0 || self.mc.n_steps == 0 {
            return Err(Error::schema("mc", "n_paths and n_steps must be ≥ 1"));
        }
        Ok(())
    }

    /// The fully-populated config (defaults filled), for echoing to logs.
    pub fn echo_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    pub fn build(&self) -> Result<BuiltProblem> {
        let cost = build_cost(&self.cost)?;
        let spec = build_diffusion(&self.diffusion)?;
        spec.validate()?;
        let flow = build_marginals(&self.marginals, &self.diffusion)?;
        if flow.dim() != spec.dim {
            return Err(Error::schema(
                "marginals",
                format!(
                    "flow dimension {} does not match diffusion dim {}",
                    flow.dim(),
                    spec.dim
                ),
            ));
        }
        if (flow.horizon() - spec.horizon).abs() > 1e-9 * spec.horizon {
            return Err(Error::schema(
                "marginals",
                format!(
                    "flow horizon {} does not match diffusion T {}",
                    flow.horizon(),
                    spec.horizon
                ),
            ));
        }
        let basis = Arc::new(match &self.basis.bbox {
            BoxConfig::Named(s) if s == "auto" => TestFunctionBasis::for_flow(
                &flow,
                &self.basis.kind,
                self.basis.time_knots,
                self.basis.space_knots,
            )?,
            BoxConfig::Named(other) => {
                return Err(Error::schema(
                    "basis.box",
                    format!("expected \"auto\" or {{lo, hi}}, got `{other}`"),
                ))
            }
            BoxConfig::Explicit { lo, hi } => TestFunctionBasis::build(&BasisSpec {
                kind: self.basis.kind.clone(),
                time_knots: self.basis.time_knots,
                space_knots: self.basis.space_knots,
                horizon: spec.horizon,
                bbox: BoundingBox::new(lo.clone(), hi.clone())?,
            })?,
        });
        let solver_opts = SolverOpts {
            tol_foc: self.solver.tol_foc,
            max_iter: self.solver.max_iter,
            restarts: self.solver.restarts,
            time_panels: self.solver.time_panels,
            gh_order: self.solver.gh_order,
            seed: self.seed,
            warm_start: None,
            refine_check: false,
            lbfgs_mem: 10,
        };
        Ok(BuiltProblem {
            config: self.clone(),
            cost,
            spec,
            flow,
            basis,
            solver_opts,
        })
    }
}

pub fn build_cost(cfg: &CostConfig) -> Result<Arc<CostFunction>> {
    let scale = match &cfg.scale {
        None => constant_scalar(1.0),
        Some(s) => {
            if let Some(v) = s.strip_prefix("constant:") {
                let v: f64 = v
                    .parse()
                    .map_err(|_| Error::schema("cost.scale", format!("bad constant `{s}`")))?;
                if v <= 0.0 {
                    return Err(Error::schema("cost.scale", "scale must be positive"));
                }
                constant_scalar(v)
            } else {
                return Err(Error::schema(
                    "cost.scale",
                    format!("expected \"constant:<v>\", got `{s}`"),
                ));
            }
        }
    };
    match cfg.kind.as_str() {
        "quadratic" => Ok(Arc::new(CostFunction::quadratic())),
        "power" => Ok(Arc::new(CostFunction::power(cfg.p.unwrap(), scale)?)),
        "power_log" => Ok(Arc::new(CostFunction::power_log(cfg.p.unwrap(), scale)?)),
        other => Err(Error::schema("cost.kind", format!("unknown kind `{other}`"))),
    }
}

pub fn build_diffusion(cfg: &DiffusionConfig) -> Result<DiffusionSpec> {
    let dim = cfg.dim;
    let drift = if cfg.b == "zero" {
        zero_drift()
    } else if let Some(g) = cfg.b.strip_prefix("linear:") {
        let gain: f64 = g
            .parse()
            .map_err(|_| Error::schema("diffusion.b", format!("bad gain `{}`", cfg.b)))?;
        linear_drift(gain)
    } else if let Some(v) = cfg.b.strip_prefix("constant:") {
        let vals: Vec<f64> = v
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::schema("diffusion.b", format!("bad vector `{}`", cfg.b)))?;
        if vals.len() != dim {
            return Err(Error::schema(
                "diffusion.b",
                format!("expected {dim} components, got {}", vals.len()),
            ));
        }
        constant_drift(vals)
    } else {
        return Err(Error::schema(
            "diffusion.b",
            format!("expected zero|linear:<g>|constant:<v,..>, got `{}`", cfg.b),
        ));
    };
    let sigma = match &cfg.sigma {
        SigmaConfig::Named(s) => {
            if s == "identity" {
                Sigma::Identity
            } else if let Some(c) = s.strip_prefix("scalar:") {
                let c: f64 = c
                    .parse()
                    .map_err(|_| Error::schema("diffusion.sigma", format!("bad scalar `{s}`")))?;
                Sigma::Scalar(c)
            } else if let Some(d) = s.strip_prefix("diag:") {
                let vals: Vec<f64> = d
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::schema("diffusion.sigma", format!("bad diag `{s}`")))?;
                if vals.len() != dim {
                    return Err(Error::schema(
                        "diffusion.sigma",
                        format!("expected {dim} diagonal entries"),
                    ));
                }
                Sigma::Diagonal(vals)
            } else {
                return Err(Error::schema(
                    "diffusion.sigma",
                    format!("expected identity|scalar:<c>|diag:<..>|matrix, got `{s}`"),
                ));
            }
        }
        SigmaConfig::Matrix(rows) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(Error::schema(
                    "diffusion.sigma",
                    format!("matrix must be {dim}×{dim}"),
                ));
            }
            Sigma::Constant(rows.iter().flatten().copied().collect())
        }
    };
    let m0 = match cfg.m0.kind.as_str() {
        "dirac" => {
            let p = cfg
                .m0
                .point
                .clone()
                .ok_or_else(|| Error::schema("diffusion.m0.point", "required for dirac"))?;
            if p.len() != dim {
                return Err(Error::schema("diffusion.m0.point", "wrong dimension"));
            }
            InitialLaw::Dirac(p)
        }
        "gaussian" => {
            let mean = cfg
                .m0
                .mean
                .clone()
                .ok_or_else(|| Error::schema("diffusion.m0.mean", "required for gaussian"))?;
            let var = cfg
                .m0
                .var
                .clone()
                .ok_or_else(|| Error::schema("diffusion.m0.var", "required for gaussian"))?;
            if mean.len() != dim || var.len() != dim {
                return Err(Error::schema("diffusion.m0", "wrong dimension"));
            }
            if var.iter().any(|v| *v <= 0.0) {
                return Err(Error::schema("diffusion.m0.var", "variances must be > 0"));
            }
            InitialLaw::Gaussian { mean, var }
        }
        other => {
            return Err(Error::schema(
                "diffusion.m0.type",
                format!("expected dirac|gaussian, got `{other}`"),
            ))
        }
    };
    Ok(DiffusionSpec::new(dim, cfg.horizon, drift, sigma, m0))
}

pub fn build_marginals(cfg: &MarginalsConfig, diff: &DiffusionConfig) -> Result<MarginalFlow> {
    match cfg.kind.as_str() {
        "gaussian" => {
            let mean = cfg
                .mean
                .clone()
                .unwrap_or(PathSpec::Named("zero".into()))
                .build("marginals.mean")?;
            let cov = cfg
                .cov
                .as_ref()
                .ok_or_else(|| Error::schema("marginals.cov", "required for gaussian flows"))?
                .build("marginals.cov")?;
            let mut means = Vec::new();
            let mut vars = Vec::new();
            for _ in 0..diff.dim {
                means.push(mean.clone());
                vars.push(cov.clone());
            }
            Ok(MarginalFlow::Gaussian(GaussianFlow {
                horizon: diff.horizon,
                mean: means,
                var: vars,
            }))
        }
        "grid" => {
            let file = cfg
                .file
                .as_ref()
                .ok_or_else(|| Error::schema("marginals.file", "required for grid flows"))?;
            read_grid_csv(Path::new(file))
        }
        "empirical" => {
            let file = cfg
                .file
                .as_ref()
                .ok_or_else(|| Error::schema("marginals.file", "required for empirical flows"))?;
            read_empirical_csv(Path::new(file), diff.dim)
        }
        other => Err(Error::schema(
            "marginals.type",
            format!("expected gaussian|grid|empirical, got `{other}`"),
        )),
    }
}

/// CSV rows `t,x,density` (1D), header optional; x-grid must be uniform and
/// identical across slices; densities are cell values row-major.
pub fn read_grid_csv(path: &Path) -> Result<MarginalFlow> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        if i == 0 && parts[0].parse::<f64>().is_err() {
            continue; // header
        }
        if parts.len() != 3 {
            return Err(Error::schema(
                "marginals.file",
                format!("line {}: expected t,x,density", i + 1),
            ));
        }
        let vals: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::schema("marginals.file", format!("line {}: bad number", i + 1)))?;
        rows.push((vals[0], vals[1], vals[2]));
    }
    if rows.is_empty() {
        return Err(Error::schema("marginals.file", "no data rows"));
    }
    let mut times: Vec<f64> = rows.iter().map(|r| r.0).collect();
    times.dedup();
    let mut xs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    let cells = xs.len();
    let w = if cells > 1 { xs[1] - xs[0] } else { 1.0 };
    let mut densities = vec![vec![0.0; cells]; times.len()];
    for (t, x, d) in &rows {
        let ti = times
            .iter()
            .position(|v| (v - t).abs() < 1e-12)
            .ok_or_else(|| Error::schema("marginals.file", "times must be grouped"))?;
        let xi = ((x - xs[0]) / w).round() as usize;
        densities[ti][xi.min(cells - 1)] = *d;
    }
    Ok(MarginalFlow::Grid(GridFlow {
        times,
        bbox: BoundingBox::new(vec![xs[0] - 0.5 * w], vec![xs[cells - 1] + 0.5 * w])?,
        shape: vec![cells],
        densities,
        mass: MassMode::Probability,
    }))
}

/// CSV rows `t,x_1,...,x_q`; particles grouped by time in file order.
pub fn read_empirical_csv(path: &Path, dim: usize) -> Result<MarginalFlow> {
    let text = std::fs::read_to_string(path)?;
    let mut times: Vec<f64> = Vec::new();
    let mut slices: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        if i == 0 && parts[0].parse::<f64>().is_err() {
            continue;
        }
        if parts.len() != dim + 1 {
            return Err(Error::schema(
                "marginals.file",
                format!("line {}: expected t and {dim} coordinates", i + 1),
            ));
        }
        let vals: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::schema("marginals.file", format!("line {}: bad number", i + 1)))?;
        let t = vals[0];
        if times.last().map_or(true, |lt| (lt - t).abs() > 1e-12) {
            times.push(t);
            slices.push(Vec::new());
        }
        slices.last_mut().unwrap().extend_from_slice(&vals[1..]);
    }
    if times.is_empty() {
        return Err(Error::schema("marginals.file", "no data rows"));
    }
    Ok(MarginalFlow::Empirical(EmpiricalFlow {
        dim,
        times,
        slices,
        weights: None,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfgConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub cost: CostConfig,
    pub diffusion: DiffusionConfig,
    #[serde(rename = "R")]
    pub r: RConfig,
    #[serde(default)]
    pub flow_family: FamilyConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RConfig {
    pub kind: String,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub v_star: Option<PathSpec>,
    #[serde(default = "default_y_clip")]
    pub y_clip: f64,
}

fn default_y_clip() -> f64 {
    20.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    #[serde(default = "default_family_knots")]
    pub knots: usize,
}

fn default_family_knots() -> usize {
    5
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig {
            knots: default_family_knots(),
        }
    }
}

impl MfgConfig {
    pub fn from_path(path: &Path) -> Result<MfgConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: MfgConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn build(&self) -> Result<MfgProblem> {
        let cost = build_cost(&self.cost)?;
        let spec = build_diffusion(&self.diffusion)?;
        spec.validate()?;
        if spec.dim != 1 {
            return Err(Error::schema(
                "diffusion.dim",
                "the mean-field layer is 1D (Gaussian flow family)",
            ));
        }
        let v0 = match &spec.m0 {
            InitialLaw::Gaussian { var, .. } => var[0],
            _ => {
                return Err(Error::schema(
                    "diffusion.m0",
                    "the flow family needs a gaussian initial law",
                ))
            }
        };
        let r = match self.r.kind.as_str() {
            "variance_target" => RFunctional::VarianceTarget {
                lambda: self
                    .r
                    .lambda
                    .ok_or_else(|| Error::schema("R.lambda", "required"))?,
                v_star: self
                    .r
                    .v_star
                    .as_ref()
                    .ok_or_else(|| Error::schema("R.v_star", "required"))?
                    .build("R.v_star")?,
                y_clip: self.r.y_clip,
            },
            "zero" => RFunctional::Zero,
            "mean_field_quadratic" => RFunctional::MeanFieldQuadratic {
                lambda: self
                    .r
                    .lambda
                    .ok_or_else(|| Error::schema("R.lambda", "required"))?,
                y_clip: self.r.y_clip,
            },
            other => {
                return Err(Error::schema(
                    "R.kind",
                    format!("expected variance_target|mean_field_quadratic|zero, got `{other}`"),
                ))
            }
        };
        Ok(MfgProblem {
            spec,
            cost,
            r,
            family: GaussianPathFamily {
                horizon: self.diffusion.horizon,
                v0,
                knots: self.flow_family.knots,
            },
            time_knots: self.basis.time_knots,
            space_knots: self.basis.space_knots,
            solver: SolverOpts {
                tol_foc: self.solver.tol_foc,
                max_iter: self.solver.max_iter,
                restarts: self.solver.restarts,
                time_panels: self.solver.time_panels,
                gh_order: self.solver.gh_order,
                seed: self.seed,
                warm_start: None,
                refine_check: false,
                lbfgs_mem: 10,
            },
        })
    }
}
