"""config.py — Central configuration. All constants live here.

To add a motion model: register its constructor in core.motions.MODEL_BUILDERS
and list its name in MODEL_NAMES.
To add an experiment: implement it in core.experiment and list it in
EXPERIMENTS.

The env-derived / scalar settings are centralized in the typed ``Settings``
dataclass (single source of truth, validated once at import). The flat
module-level names (WORKERS, DEFAULT_STEP_DT, ...) are re-exported from
``settings`` so ``from config import X`` keeps working everywhere.
"""
import os
from dataclasses import dataclass, field
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

BASE_DIR    = Path(__file__).parent
PRESETS_DIR = BASE_DIR / "presets"

VERSION = "0.1.0"


@dataclass(frozen=True)
class Settings:
    """Typed, validated simulation defaults.

    Built once from environment + constants. Immutable; worker processes
    rebuild the same values from the same environment.
    """

    # ── Execution ────────────────────────────────────────────────────
    workers:      int = field(default_factory=lambda: int(os.getenv("BRANCH_LLN_WORKERS", "1")))
    default_seed: int = field(default_factory=lambda: int(os.getenv("BRANCH_LLN_SEED", "20240101")))
    output_dir:  Path = field(default_factory=lambda: Path(os.getenv("BRANCH_LLN_OUTPUT", str(BASE_DIR / "output"))))

    # ── Simulation ───────────────────────────────────────────────────
    step_dt:        float = 0.01
    max_population: int   = 1_000_000

    # ── Tolerances ───────────────────────────────────────────────────
    pmf_tolerance:    float = 1e-12
    nu_tolerance:     float = 1e-10
    quad_rel_tol:     float = 1e-8
    quad_tail_mass:   float = 1e-10
    phi_tol:          float = 1e-9
    phi_slope_margin: float = 1e-6
    phi_t_max:        float = 200.0
    phi_mc_grid:      int   = 201

    # ── Estimators ───────────────────────────────────────────────────
    low_ess_threshold: float = 100.0
    sigma_eps:         float = 0.01
    sigma_T:           float = 12.0
    g_boundary_mass:   float = 0.01

    # ── CLI ──────────────────────────────────────────────────────────
    overflow_exit_fraction: float = 0.5
    error_log_max:          int   = 500

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"BRANCH_LLN_WORKERS must be >= 1, got {self.workers}")


settings = Settings()

WORKERS      = settings.workers
DEFAULT_SEED = settings.default_seed
OUTPUT_DIR   = settings.output_dir

DEFAULT_STEP_DT        = settings.step_dt
DEFAULT_MAX_POPULATION = settings.max_population

PMF_TOLERANCE    = settings.pmf_tolerance
NU_TOLERANCE     = settings.nu_tolerance
QUAD_REL_TOL     = settings.quad_rel_tol
QUAD_TAIL_MASS   = settings.quad_tail_mass
PHI_TOL          = settings.phi_tol
PHI_T_MAX        = settings.phi_t_max
PHI_MC_GRID      = settings.phi_mc_grid
PHI_SLOPE_MARGIN = settings.phi_slope_margin

LOW_ESS_THRESHOLD = settings.low_ess_threshold
SIGMA_EPS         = settings.sigma_eps
SIGMA_T           = settings.sigma_T
G_BOUNDARY_MASS   = settings.g_boundary_mass

OVERFLOW_EXIT_FRACTION = settings.overflow_exit_fraction
ERROR_LOG_MAX          = settings.error_log_max

# ── Motion models ─────────────────────────────────────────────────────────────
# name → required parameter names (see core.motions for the constructors)
MODEL_NAMES: dict[str, tuple[str, ...]] = {
    "killed_drifted_bm":   ("c",),
    "killed_recurrent_ou": ("lam",),
    "transient_ou":        ("lam", "sigma2"),
    "subcritical_gw":      ("rho",),
    "ergodic_ctmc":        ("Q", "pi"),
    "single_state":        (),
}

# ── Experiments ───────────────────────────────────────────────────────────────
EXPERIMENTS: tuple[str, ...] = (
    "simulate",
    "phi",
    "lln",
    "qsd",
    "extinction",
    "sigma",
    "spine-check",
    "g-iterate",
    "sb-curve",
    "local-survival",
)

# ── Exit codes ────────────────────────────────────────────────────────────────
EXIT_OK         = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME    = 3
EXIT_OVERFLOW   = 4

# ── Output schemas (fixed CSV headers per experiment) ─────────────────────────
CSV_HEADERS: dict[str, tuple[str, ...]] = {
    "simulate":       ("replica_id", "t", "live", "absorbed", "dead", "branched", "births", "D_t"),
    "phi":            ("s", "E_M2", "integrand"),
    "lln":            ("replica_id", "t", "count_B", "count_Bprime", "D_t", "W_t"),
    "qsd":            ("replica_id", "particle_index", "position", "weight"),
    "extinction":     ("replica_id", "extinct", "extinct_late"),
    "sigma":          ("replica_id", "extinct", "D_T"),
    "spine-check":    ("estimator", "mean", "stderr", "n"),
    "g-iterate":      ("iteration", "x", "g"),
    "sb-curve":       ("t", "estimate", "stderr", "n_eff"),
    "local-survival": ("replica_id", "count_K", "live"),
}
