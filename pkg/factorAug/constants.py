import numpy as np

# Binary matrix container
BIN_MAGIC = b"FARMAUG1"
BIN_HEADER_SIZE = 8 + 8 + 8

# Exit codes
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_NUMERICAL_ERROR = 4

# Transforms
DEFAULT_N0 = 500
DEFAULT_POLY_DEGREE = 2
DEFAULT_POLY_COEF0 = 1.0
DEFAULT_HIDDEN_WIDTH = 128
DEFAULT_FNN_EPOCHS = 20
DEFAULT_FNN_LEARN_RATE = 1e-3
DEFAULT_DROPOUT = 0.2
DEFAULT_BATCH_SIZE = 64
DEFAULT_EPSILON_FLOOR = 1e-2

# Factors
DEFAULT_N_PRIME = 1000
EIGEN_CLIP_TOLERANCE = 1e-10
EIGEN_RATIO_SKIP = 1e-12
RANK_TOLERANCE = 1e-10

# Augmentation
CONDITION_QR_SWITCH = 1e6
CONDITION_LIMIT = 1e10

# Screening
DEFAULT_SCREEN_M_OTHER = 100
LOGISTIC_GRAD_TOL = 1e-8
LOGISTIC_MAX_ITER = 200

# Learners
LASSO_TOL = 1e-7
DEFAULT_MAX_ITER = 100
DEFAULT_FOLDS = 5
STANDARD_LASSO_GRID = tuple(np.logspace(-10, -3, 15))
STANDARD_RIDGE_GRID = tuple(np.logspace(-3, 3, 10))
FINE_GRID = tuple(np.logspace(-3, 3, 20))
DEFAULT_EXTERNAL_TIMEOUT = 600

# Finance
EVENT_OFFSETS = tuple(range(-13, 15))
DEFAULT_EVENT_QUANTILE = 0.05
DEFAULT_TOP_N = 50
DEFAULT_SCORE_THRESHOLD = 0.5
DEFAULT_COST_BPS = 13.0
TRADING_DAYS_PER_YEAR = 252
DEMEAN_TOL = 1e-10
DEMEAN_MAX_ITER = 10_000


FACTORS_SUMMARY_MESSAGE = """
Factor spectrum ({source}, n={n}, p={p}, mode={mode})
  eigen-ratio window: [{k_min}, {k_max}]
  chosen K: {k}
  top eigenvalues: {top}
  files: {files}
"""

RUN_SUMMARY_MESSAGE = """
Pipeline finished ({n_designs} design(s), {repetitions} repetition(s))
{lines}
  metrics: {path}
"""

BACKTEST_SUMMARY_MESSAGE = """
Backtest over {n_days} day(s), cost {cost_bps} bps round trip
  L+S  APR {ls_apr}  SR {ls_sr}
  L    APR {l_apr}  SR {l_sr}
  S    APR {s_apr}  SR {s_sr}
  ledger: {path}
"""

NO_POSITIONS_MESSAGE = "No positions were opened: APR and SR are undefined."

SYNTH_KINDS = (
    "factor-regression",
    "interaction-signal",
    "screening-sparse",
    "event-panel",
    "portfolio-fixture",
)
