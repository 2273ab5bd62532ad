//! Default resolutions and verification tolerances used across the library.
//!
//! Each constant states where it enters the verification pipeline. The gap
//! and marginal tolerances budget three stacked error sources — basis
//! surrogate, quadrature, Monte-Carlo — at roughly 1% each.

/// Relative duality-gap tolerance: |primal − dual| ≤ GAP_REL·|dual| + 3 s.e.
pub const GAP_REL: f64 = 0.03;

/// Absolute floor added to gap checks so that the all-zero reference case
/// (feasible at zero cost) passes without a division by zero.
pub const GAP_ABS_FLOOR_SCALE: f64 = 1e-6;

/// Dual value vs. the closed-form drift-identification oracle.
pub const ORACLE_REL: f64 = 0.05;

/// Energy-form value vs. dual objective at a certified optimum, relative,
/// same quadrature on both sides.
pub const ENERGY_IDENTITY_REL: f64 = 1e-4;

/// First-order-condition tolerance = FOC_SCALE · ∬(1+‖x‖) dμ dt.
pub const FOC_SCALE: f64 = 1e-6;

/// Marginal reproduction: per-slice W₁ ≤ max(MARGINAL_REL·scale, 3 s.e.).
pub const MARGINAL_REL: f64 = 0.02;

/// Recovered drifts for different costs on one 1D flow: relative L²(μ) gap.
pub const DRIFT_AGREEMENT_REL: f64 = 0.05;

/// Curl certificate threshold = CURL_SCALE · max grid magnitude of the two
/// mixed-partial terms.
pub const CURL_SCALE: f64 = 1e-6;

/// Relative bracket width for the Luxemburg-norm bisection.
pub const LUXEMBURG_REL_WIDTH: f64 = 1e-8;

/// Golden-section location width for numerical convex conjugation.
pub const CONJUGATION_WIDTH: f64 = 1e-10;

/// Alternating-ascent iteration cap for non-radial numerical conjugation.
pub const CONJUGATION_ALT_ITERS: usize = 200;

/// Fraction of non-finite simulated paths above which a run fails.
pub const FLAGGED_PATH_LIMIT: f64 = 0.01;

/// Fraction of recovered-drift evaluations outside the basis box above which
/// the marginal report raises a support-exit flag.
pub const SUPPORT_EXIT_LIMIT: f64 = 0.005;

/// Default spline resolution: time basis functions / space knots per dim.
pub const TIME_KNOTS: usize = 12;
pub const SPACE_KNOTS: usize = 16;

/// Gauss–Hermite order for Gaussian slices (exact through degree 39).
pub const GH_ORDER: usize = 20;

/// Simpson panels per time-knot interval in the dual quadrature.
pub const TIME_PANELS_PER_INTERVAL: usize = 4;

/// Default Monte-Carlo sizes.
pub const N_PATHS: usize = 100_000;
pub const N_STEPS: usize = 400;

/// Default number of verification slices (odd, includes both endpoints).
pub const N_SLICES: usize = 17;

/// Mass quantile defining the automatic bounding box (99.9% of each slice).
pub const BOX_MASS_QUANTILE: f64 = 0.999;

/// Knots of padding added beyond the mass box.
pub const BOX_PAD_KNOTS: usize = 3;

/// Dual-ascent iteration budget and restart count.
pub const MAX_ITER: usize = 500;
pub const RESTARTS: usize = 3;

/// Permutation replicates for the Markov-property null band.
pub const MARKOV_SHUFFLES: usize = 200;

/// Minimum bin occupancy for the Markov statistic.
pub const MARKOV_MIN_BIN: usize = 30;

/// Fixed seed for the sliced-W₁ projection directions.
pub const SLICED_W1_SEED: u64 = 0x77a5_1de5;

/// Number of random directions for sliced W₁ in dimension ≥ 2.
pub const SLICED_W1_DIRECTIONS: usize = 64;

/// Samples per slice when a continuous slice is discretized for W₁.
pub const W1_SLICE_SAMPLES: usize = 2048;
