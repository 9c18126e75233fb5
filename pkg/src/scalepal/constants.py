"""Constants for scaling-law analysis."""

# Run file schema (header order is canonical)
RUN_COLUMNS = (
    "run_id",
    "step",
    "tokens",
    "loss",
    "params",
    "flops",
    "model_scale",
    "experts",
    "batch_size",
    "seq_len",
    "learning_rate",
    "loss_kind",
)

# Columns that may be left empty
OPTIONAL_RUN_COLUMNS = ("params", "flops", "model_scale", "loss_kind")

RUN_UNITS = {"tokens": "count", "flops": "count", "loss": "nats"}
UNITS_COMMENT = "# units: tokens=count, flops=count, loss=nats"
UNITS_KEY = "_units"

HEATMAP_COLUMNS = ("token_level", "knob_value", "loss")
GRADIENT_NORM_COLUMNS = ("batch_size", "grad_norm_sq")

# Model scale / compute
SIX_PD_FACTOR = 6.0
SCALE_CONSISTENCY_TOL = 1e-6
MAX_EXPERTS = 100  # exclusive upper bound for the expert-aware law

# Robust fitting
DEFAULT_HUBER_DELTA = 1e-3
DEFAULT_MAX_ITER = 500
DEFAULT_GRAD_TOL = 1e-12
DEFAULT_STEP_TOL = 1e-10
FINITE_DIFF_STEP = 1e-6
START_FACTORS = (0.1, 1.0, 10.0)
EXPONENT_STARTS = (0.1, 0.3, 0.6)
EXPERT_EXPONENT_STARTS = (0.05, 0.2, 0.5)
FLOOR_FRACTIONS = (0.05, 0.5, 0.9)
SCREEN_ITER = 40
POLISH_TOP = 3

# Bootstrap
MIN_RESAMPLES = 100
DEFAULT_RESAMPLES = 200
DEFAULT_CI_LEVEL = 0.95

# Smoothing
DEFAULT_SMOOTH_WINDOW = 10
DEFAULT_SMOOTH_SIGMA = 2.0

# Allocation
BRUTE_FORCE_LOW = 0.1
BRUTE_FORCE_HIGH = 0.9
MIN_GRID_POINTS = 100
DEFAULT_GRID_POINTS = 10000

# Published allocation exponents: (label, alpha_D, alpha_N)
PUBLISHED_REFERENCE_ROWS = (
    ("OpenAI (OpenWebText2)", 0.27, 0.73),
    ("Chinchilla (MassiveText)", 0.51, 0.49),
    ("DeepSeek (OpenWebText2)", 0.422, 0.578),
)
PUBLISHED_FIXTURE_ROWS = (
    ("Dense Model", 0.493, 0.507),
    ("MoE Model", 0.410, 0.590),
)
PUBLISHED_PROVENANCE = "Table 1"
FITTED_PROVENANCE = "fitted"

# Hyperparameter contours
MIN_KNOB_VALUES = 3
MIN_POWER_LAW_POINTS = 3
DEFAULT_REL_TOL = 1e-9

# Exit codes
EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_REFUSED = 3

# Environment
OUTPUT_DIR_ENV = "SCALEPAL_OUTPUT_DIR"
RNG_ALGORITHM = "numpy.PCG64"
