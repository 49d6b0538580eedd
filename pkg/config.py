# config.py

CODE_VERSION = "0.4.0"

DEFAULT_DIMENSION = 3

# --- Potential theory ---
GREEN_CUTOFF: float = 30.0  # beyond this norm G(0,x) uses the calibrated a_d * |x|^(2-d) tail
GREEN_CALIBRATION_WIDTH: float = 3.0  # tail is fitted on the shell cutoff - width < |x| <= cutoff
GREEN_EPSABS: float = 1e-14
GREEN_EPSREL: float = 1e-11
QUADRATURE_LIMIT: int = 400  # max subintervals of the adaptive vector quadrature
GREEN_TAIL_START: float = 1e8  # Bessel integrand is replaced by its large-t expansion past this time

EQUILIBRIUM_RESIDUAL_TOL: float = 1e-8
MAX_CONDITION_NUMBER: float = 1e12
CLAMP_TOL: float = 1e-10  # negatives above -CLAMP_TOL are round-off, below it a bug
KERNEL_ROW_TOL: float = 1e-8

# Dense/sparse exact solves are used while the ball B_R has at most this many sites;
# bigger scenes estimate the exit kernel by Monte Carlo.
MAX_EXACT_BALL_SITES: int = 60_000
MC_EXIT_SAMPLES: int = 20_000  # total walks, spread over the start sites
MC_EXIT_MIN_PER_SITE: int = 500
MATRIX_CHUNK_ROWS: int = 20_000
XHAT_SEARCH_WIDTH: int = 8  # axis norms tried when placing K2 at a requested distance

# --- Simulation ---
VALIDATE_FRACTION: int = 100  # validate 1 excursion in VALIDATE_FRACTION (by digest)
STEP_CHUNK_MIN: int = 64
SHIFT_TAIL_QUANTILE: float = 1e-12
POISSON_SERIES_TAIL: float = 1e-15  # smallest upper-tail mass scipy inverts reliably
EXACT_HISTOGRAM_MAX_SITES: int = 20
CENSOR_MIN_FAILURES: int = 5
BOOTSTRAP_RESAMPLES: int = 1000
REPLICA_BATCH: int = 256

# Purpose tags for seed derivation. The numeric codes are part of the on-disk
# reproducibility contract: never renumber.
PURPOSE_TAGS = {
    "counts": 1,
    "zeta": 2,
    "clocks": 3,
    "paths": 4,
    "coupling": 5,
    "resample": 6,
    "glue": 7,
    "direct": 8,
    "tables": 9,
    "bootstrap": 10,
}

# --- Output schemas (versioned: bump CSV_SCHEMA_VERSION on any change) ---
CSV_SCHEMA_VERSION = 1

COUPLING_COLUMNS = [
    "replica", "seed", "N1", "N1p", "N21", "N21p", "N22", "Theta", "D", "Upsilon",
    "psi_sup_dev", "spread", "H", "ri_trace", "ns_trace",
]

RI_COLUMNS = ["replica", "seed", "N1", "Theta", "N2", "Ntot", "T", "trace"]

NS_COLUMNS = ["replica", "seed", "Nprime", "trace"]

POTENTIAL_COLUMNS = ["kind", "site", "value"]

RUNG_COLUMNS = ["x", "phat", "ci_low", "ci_high", "failures", "replicas", "censored"]

LEMMA_COLUMNS = [
    "R", "dist", "q", "one_minus_q", "escape_ratio", "regime_ok", "sup_g_dev",
    "harmonic_margin", "inv_sqrt_moment", "inv_sqrt_shape", "inv_cube_moment",
    "p_n1_no_n22", "p_n1_no_n22_bound", "decoupling_shape",
]

COVARIANCE_COLUMNS = ["dist", "cov", "ci_low", "ci_high", "ns_cov", "ns_ci_low", "ns_ci_high", "shape_new", "shape_old"]

TV_COLUMNS = ["dist", "tv", "tv_ci_low", "tv_ci_high", "phat", "ci_low", "ci_high", "consistent"]

EXPERIMENTS = ["scaling", "covariance", "lemmas", "tv"]

DEFAULT_OUT_DIR = "data"
DEFAULT_CONFIG_PATH = "scenes/default.ini"
