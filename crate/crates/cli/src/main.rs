//! Command-line driver: dual solve, gap verification, simulation export,
//! benchmark catalog, mean-field solve, and cost validation.
//!
//! Exit codes: 0 — all pass flags true; 1 — a verification failed;
//! 2 — configuration or runtime error (structured JSON on stderr).

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nelson::catalog;
use nelson::config::{MfgConfig, RunConfig};
use nelson::defaults;
use nelson::diffusion::{simulate, simulate_slices, DriftSource};
use nelson::dual_solver::{dual_value_energy, maximize_dual};
use nelson::fields::TimePath;
use nelson::mfg;
use nelson::primal::{
    self, default_slice_times, duality_gap_report, markov_statistic, recover_drift,
};
use nelson::report::{self, Envelope, SolutionFile};

#[derive(Parser)]
#[command(name = "nelson", version, about = "Entropy-minimal diffusions under prescribed marginal flows")]
struct Cli {
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (also NELSON_WORKERS); no effect on results.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximize the dual objective and write the solution artifact.
    SolveDual(SolveDualArgs),
    /// Verify the duality gap and marginal reproduction of a solution.
    CheckGap(CheckGapArgs),
    /// Simulate under the reference or recovered drift; export CSVs.
    Simulate(SimulateArgs),
    /// Run a benchmark catalog case.
    Catalog(CatalogArgs),
    /// Solve the potential mean-field game and certify the equilibrium.
    MfgSolve(MfgSolveArgs),
    /// Numerically probe the growth/convexity conditions of the cost.
    ValidateCost(ValidateCostArgs),
}

#[derive(Args)]
struct SolveDualArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Iteration log CSV (iter, objective, grad_norm, step).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Re-solve on a knot-doubled basis and record the value delta.
    #[arg(long)]
    refine_check: bool,
}

#[derive(Args)]
struct CheckGapArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// "reference" or "recovered".
    #[arg(long, default_value = "reference")]
    drift: String,
    /// Solution artifact (required for --drift recovered).
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Paths CSV (path_id, t, x_1..x_q); truncated to --max-paths.
    #[arg(long)]
    out: PathBuf,
    /// Per-slice states CSV for the full ensemble.
    #[arg(long)]
    slices_out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    max_paths: usize,
}

#[derive(Args)]
struct CatalogArgs {
    #[command(subcommand)]
    action: CatalogAction,
}

#[derive(Subcommand)]
enum CatalogAction {
    /// Run one catalog case.
    Run(CatalogRunArgs),
}

#[derive(Args)]
struct CatalogRunArgs {
    /// gaussian | bessel | nonuniversality
    name: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Case parameters as key=value (see README).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// For nonuniversality: also run the long 2D dual solves comparing the
    /// quadratic and cubic optimizers on the truncated-torus flow.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct MfgSolveArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateCostArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    samples: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli
        .workers
        .or_else(|| {
            std::env::var("NELSON_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if workers > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    match run(cli) {
        Ok(all_pass) => {
            if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            let msg = serde_json::json!({ "error": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

fn load_run_config(path: &PathBuf, seed: Option<u64>) -> nelson::Result<(RunConfig, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let mut cfg = RunConfig::from_str_validated(std::str::from_utf8(&bytes).map_err(|_| {
        nelson::Error::invalid("config is not valid UTF-8")
    })?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((cfg, bytes))
}

fn run(cli: Cli) -> nelson::Result<bool> {
    match cli.command {
        Command::SolveDual(a) => {
            let (cfg, bytes) = load_run_config(&a.config, cli.seed)?;
            eprintln!("config with defaults:\n{}", cfg.echo_json());
            let built = cfg.build()?;
            let mut opts = built.solver_opts.clone();
            opts.refine_check = a.refine_check;
            let sol = maximize_dual(
                built.basis.clone(),
                &built.spec,
                &built.flow,
                &built.cost,
                &opts,
            )?;
            if let Some(log_path) = &a.log {
                let mut f = std::fs::File::create(log_path)?;
                report::iterations_to_csv(&sol.log, &mut f)?;
            }
            let file = SolutionFile::from_solution(&sol, report::sha256_hex(&bytes));
            report::write_json(&a.out, &file)?;
            eprintln!(
                "dual value {:.6e}, grad norm {:.3e} (tol {:.3e}), ‖Ψ‖_g {:.4}",
                sol.dual_value, sol.grad_norm_at_opt, sol.tol_foc, sol.luxemburg_norm_psi
            );
            Ok(sol.converged)
        }
        Command::CheckGap(a) => {
            let (cfg, bytes) = load_run_config(&a.config, cli.seed)?;
            let built = cfg.build()?;
            let sol = SolutionFile::load(&a.solution)?.to_solution()?;
            let gap = duality_gap_report(
                &sol,
                &built.spec,
                &built.flow,
                &built.cost,
                cfg.mc.n_paths,
                cfg.mc.n_steps,
                cfg.seed,
            )?;
            let rd = recover_drift(&sol, &built.spec, built.cost.clone());
            let times = default_slice_times(built.spec.horizon, cfg.mc.slices);
            let mut marg = primal::verify_marginals(
                &built.spec,
                &DriftSource::custom(rd.clone(), "recovered"),
                &built.flow,
                cfg.mc.n_paths,
                cfg.mc.n_steps,
                cfg.seed ^ 0x51,
                &times,
            )?;
            marg.support_exit_fraction = Some(rd.exited_fraction());
            marg.support_exit_flag =
                Some(rd.exited_fraction() > defaults::SUPPORT_EXIT_LIMIT);
            let pass = gap.pass && marg.pass;
            #[derive(Serialize)]
            struct CheckGapReport {
                gap: nelson::primal::GapReport,
                marginals: nelson::primal::MarginalReport,
            }
            report::write_json(
                &a.out,
                &Envelope::new(
                    &bytes,
                    cfg.seed,
                    Some(pass),
                    CheckGapReport {
                        gap,
                        marginals: marg,
                    },
                ),
            )?;
            Ok(pass)
        }
        Command::Simulate(a) => {
            let (cfg, _bytes) = load_run_config(&a.config, cli.seed)?;
            let built = cfg.build()?;
            let drift = match a.drift.as_str() {
                "reference" => DriftSource::Reference,
                "recovered" => {
                    let sol_path = a.solution.as_ref().ok_or_else(|| {
                        nelson::Error::invalid("--drift recovered needs --solution")
                    })?;
                    let sol = SolutionFile::load(sol_path)?.to_solution()?;
                    let rd = recover_drift(&sol, &built.spec, built.cost.clone());
                    DriftSource::custom(rd, "recovered")
                }
                other => {
                    return Err(nelson::Error::invalid(format!(
                        "--drift must be reference|recovered, got `{other}`"
                    )))
                }
            };
            let n_export = a.max_paths.min(cfg.mc.n_paths);
            let ens = simulate(
                &built.spec,
                &drift,
                n_export,
                cfg.mc.n_steps,
                cfg.seed,
                false,
            )?;
            let mut f = std::fs::File::create(&a.out)?;
            report::paths_to_csv(&ens, &mut f)?;
            if let Some(sl) = &a.slices_out {
                let times = default_slice_times(built.spec.horizon, cfg.mc.slices);
                let ss = simulate_slices(
                    &built.spec,
                    &drift,
                    cfg.mc.n_paths,
                    cfg.mc.n_steps,
                    cfg.seed,
                    &times,
                )?;
                let mut f = std::fs::File::create(sl)?;
                report::slices_to_csv(&ss.times, &ss.slices, ss.dim, &mut f)?;
            }
            Ok(true)
        }
        Command::Catalog(c) => {
            let CatalogAction::Run(a) = c.action;
            run_catalog(a, cli.seed)
        }
        Command::MfgSolve(a) => {
            let bytes = std::fs::read(&a.config)?;
            let mut cfg = MfgConfig::from_path(&a.config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let problem = cfg.build()?;
            let sol = mfg::minimize_mkv(&problem, &mfg::MkvOpts::default())?;
            let var = problem.family.variance_path(&sol.eta)?;
            let panel = mfg::perturbation_panel(&var, problem.family.horizon);
            let rep = mfg::verify_equilibrium(&sol.flow, &sol.inner, &problem, &panel)?;
            let pass = rep.pass;
            #[derive(Serialize)]
            struct MfgReport {
                eta: Vec<f64>,
                value: f64,
                inner_dual_value: f64,
                evaluations: usize,
                equilibrium: mfg::EquilibriumReport,
            }
            report::write_json(
                &a.out,
                &Envelope::new(
                    &bytes,
                    cfg.seed,
                    Some(pass),
                    MfgReport {
                        eta: sol.eta.clone(),
                        value: sol.value,
                        inner_dual_value: sol.inner.dual_value,
                        evaluations: sol.evaluations,
                        equilibrium: rep,
                    },
                ),
            )?;
            Ok(pass)
        }
        Command::ValidateCost(a) => {
            let (cfg, bytes) = load_run_config(&a.config, cli.seed)?;
            let built = cfg.build()?;
            let rep =
                nelson::cost::validate_assumptions(&built.cost, &built.flow, a.samples, cfg.seed)?;
            let pass = rep.pass;
            report::write_json(&a.out, &Envelope::new(&bytes, cfg.seed, Some(pass), rep))?;
            Ok(pass)
        }
    }
}

fn param_map(params: &[String]) -> nelson::Result<std::collections::HashMap<String, String>> {
    let mut m = std::collections::HashMap::new();
    for p in params {
        let (k, v) = p.split_once('=').ok_or_else(|| {
            nelson::Error::invalid(format!("--param expects KEY=VALUE, got `{p}`"))
        })?;
        m.insert(k.to_string(), v.to_string());
    }
    Ok(m)
}

fn get_f64(
    m: &std::collections::HashMap<String, String>,
    k: &str,
    default: f64,
) -> nelson::Result<f64> {
    match m.get(k) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| nelson::Error::invalid(format!("bad --param {k}={v}"))),
    }
}

fn get_usize(
    m: &std::collections::HashMap<String, String>,
    k: &str,
    default: usize,
) -> nelson::Result<usize> {
    match m.get(k) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| nelson::Error::invalid(format!("bad --param {k}={v}"))),
    }
}

fn run_catalog(a: CatalogRunArgs, seed_override: Option<u64>) -> nelson::Result<bool> {
    let params = param_map(&a.params)?;
    let seed = seed_override.unwrap_or(get_usize(&params, "seed", 12345)? as u64);
    let config_bytes = format!("catalog:{}:{:?}", a.name, a.params).into_bytes();
    match a.name.as_str() {
        "gaussian" => {
            let horizon = get_f64(&params, "T", 1.0)?;
            let coeffs: Vec<f64> = match params.get("v_poly") {
                None => vec![1.0, 2.0, 1.0],
                Some(s) => s
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| nelson::Error::invalid("bad v_poly"))?,
            };
            let n_paths = get_usize(&params, "n_paths", defaults::N_PATHS)?;
            let n_steps = get_usize(&params, "n_steps", defaults::N_STEPS)?;
            let case = catalog::gaussian_entropic_case(TimePath::poly(coeffs), horizon)?;
            let basis = Arc::new(nelson::function_space::TestFunctionBasis::for_flow(
                &case.flow,
                "bspline",
                defaults::TIME_KNOTS,
                defaults::SPACE_KNOTS,
            )?);
            let mut opts = nelson::dual_solver::SolverOpts::default();
            opts.seed = seed;
            let cost = Arc::new(nelson::cost::CostFunction::quadratic());
            let sol = maximize_dual(basis, &case.spec, &case.flow, &cost, &opts)?;
            let energy = dual_value_energy(&sol, &case.spec, &case.flow, &cost)?;
            let gap = duality_gap_report(
                &sol, &case.spec, &case.flow, &cost, n_paths, n_steps, seed,
            )?;
            let oracle_rel = (sol.dual_value - case.oracle_value).abs()
                / case.oracle_value.abs().max(1e-12);
            let pass = gap.pass && oracle_rel <= defaults::ORACLE_REL;
            #[derive(Serialize)]
            struct GaussianReport {
                oracle_value: f64,
                dual_value: f64,
                dual_energy_value: f64,
                oracle_rel_error: f64,
                gap: nelson::primal::GapReport,
            }
            let rep = GaussianReport {
                oracle_value: case.oracle_value,
                dual_value: sol.dual_value,
                dual_energy_value: energy,
                oracle_rel_error: oracle_rel,
                gap,
            };
            if let Some(out) = &a.out {
                report::write_json(out, &Envelope::new(&config_bytes, seed, Some(pass), &rep))?;
            }
            eprintln!("gaussian: dual {:.5} vs oracle {:.5}", rep.dual_value, rep.oracle_value);
            Ok(pass)
        }
        "bessel" => {
            let delta = get_f64(&params, "delta", 1.5)?;
            let p_adm = get_f64(&params, "p_admissible", 1.2)?;
            let p_div = get_f64(&params, "p_divergent", 1.8)?;
            let n_paths = get_usize(&params, "n_paths", defaults::N_PATHS)?;
            let n_steps = get_usize(&params, "n_steps", defaults::N_STEPS)?;
            let s_probe = get_f64(&params, "s", 0.5)?;
            let case = catalog::bessel_case(delta, p_adm, 1.0)?;
            let adm = case.integrability_refinement(p_adm, n_paths, n_steps, seed)?;
            let div = case.integrability_refinement(p_div, n_paths, n_steps, seed ^ 0x7)?;
            let y = case.simulate_y(n_paths, n_steps, seed ^ 0x11, s_probe, catalog::FlipLabel::FromPath)?;
            let markov = markov_statistic(&y, 8, defaults::MARKOV_SHUFFLES, seed ^ 0x13);
            let ctl = case.simulate_y(
                n_paths,
                n_steps,
                seed ^ 0x17,
                s_probe,
                catalog::FlipLabel::Randomized,
            )?;
            let control = markov_statistic(&ctl, 8, defaults::MARKOV_SHUFFLES, seed ^ 0x19);
            let pass = adm.rel_change.abs() <= 0.10
                && div.rel_change >= 0.50
                && markov.outside_band
                && !control.outside_band;
            #[derive(Serialize)]
            struct BesselReport {
                delta: f64,
                nu: f64,
                admissible_window: (f64, f64),
                refinement_admissible: catalog::RefinementStudy,
                refinement_divergent: catalog::RefinementStudy,
                markov: nelson::primal::MarkovReport,
                markov_control: nelson::primal::MarkovReport,
            }
            let rep = BesselReport {
                delta,
                nu: case.nu,
                admissible_window: (1.0, 2.0 * case.nu + 2.0),
                refinement_admissible: adm,
                refinement_divergent: div,
                markov,
                markov_control: control,
            };
            if let Some(out) = &a.out {
                report::write_json(out, &Envelope::new(&config_bytes, seed, Some(pass), &rep))?;
            }
            Ok(pass)
        }
        "nonuniversality" => {
            let half = get_f64(&params, "half", 1.2)?;
            let grid = get_usize(&params, "grid", 97)?;
            let sep = catalog::nonuniversality_case(&catalog::default_separable(), half, grid);
            let radial = catalog::nonuniversality_case(
                &catalog::radial_surface(catalog::Bump1D {
                    center: 0.4,
                    halfwidth: 0.5,
                    amplitude: 1.3,
                }),
                half,
                grid,
            );
            let pass = sep.fails_universality
                && sep.max_residual > 100.0 * sep.tol_curl
                && !radial.fails_universality;
            #[derive(Serialize)]
            struct NonuniReport {
                separable: catalog::CurlReport,
                radial: catalog::CurlReport,
                full: Option<catalog::FullNonuniversalityReport>,
            }
            let full = if a.full {
                eprintln!("running the long 2D quadratic-vs-cubic comparison ...");
                Some(catalog::nonuniversality_full_solve(seed)?)
            } else {
                None
            };
            let rep = NonuniReport {
                separable: sep,
                radial,
                full,
            };
            if let Some(out) = &a.out {
                report::write_json(out, &Envelope::new(&config_bytes, seed, Some(pass), &rep))?;
            }
            Ok(pass)
        }
        other => Err(nelson::Error::invalid(format!(
            "unknown catalog case `{other}` (gaussian|bessel|nonuniversality)"
        ))),
    }
}
