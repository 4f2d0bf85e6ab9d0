import os
from enum import Enum, IntEnum
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()


class InitScheme(Enum):
    UNIFORM_FAN_IN = "uniform_fan_in"
    GAUSSIAN = "gaussian"


class Normalize(Enum):
    UNIT_RANGE = "unit_range"
    NONE = "none"


class Axis(Enum):
    ROWS = "rows"
    COLS = "cols"


class Stream(IntEnum):
    """Named random substreams. All derive from one user seed."""

    INIT = 1
    SHUFFLE = 2
    LABELS = 3
    SAMPLING = 4
    DATA = 5


class GammaSource(Enum):
    TRAIN = "train"
    TEST = "test"


class RademacherMode(Enum):
    EXACT = "exact"
    SAMPLED = "sampled"


class ExitCode(IntEnum):
    OK = 0
    FAILURE = 1
    USAGE = 2
    MISSING_FILE = 3
    BAD_CONFIG = 4
    DATA_ERROR = 5
    NUMERIC_ERROR = 6
    SELFTEST_FAILED = 7


class Config:
    EXPORT_DIR = Path(os.environ.get("CAPMETER_EXPORT_DIR", "."))
    MNIST_DIR = Path(os.environ["CAPMETER_MNIST_DIR"]) if os.getenv("CAPMETER_MNIST_DIR") else None

    THREADS = int(os.environ.get("CAPMETER_THREADS", os.cpu_count() or 1))
    LOG_LEVEL = os.environ.get("CAPMETER_LOG_LEVEL", "INFO")
    LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # Training protocol
    LR = 0.01
    MOMENTUM = 0.9
    BATCH_SIZE = 64
    STOP_LOSS = 0.01
    MAX_EPOCHS = 1000
    LOG_EVERY = 25
    SEED = 0

    # Linear algebra
    POWER_TOL = 1e-9
    POWER_MAX_ITER = 10_000
    HADAMARD_MAX_SIZE = 2**14
    DEGENERATE_NORM = 1e-30

    # Measurement
    GAMMA_PERCENTILE = 5.0
    DELTA = 0.01
    ANGLE_BINS = 36
    MARGIN_BINS = 50
    THM4_P = ("2", "4", "lnh")

    # Enumeration guards
    EXACT_MAX_SAMPLES = 20
    ABS_SUM_MAX_N = 40
    CONTRACTION_MAX_DIM = 20
    LINEAR_MAX_SAMPLES = 12
    LINEAR_MAX_SIGNS = 20
    COVER_MAX_DIM = 12
    COVER_MAX_BOXES = 2_000_000
    SAMPLED_TRIALS = 100_000
    SAMPLED_CHUNK = 10_000
    SIGN_CHUNK = 2**16

    # Desk-scale reproduction
    SWEEP_WIDTHS = (64, 256, 1024, 4096)
    MNIST_LIMIT = 2000
    MNIST_FILES = {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }
    IDX_IMAGE_MAGIC = 0x00000803
    IDX_LABEL_MAGIC = 0x00000801
    MNIST_CLASSES = 10

    # Files
    CHECKPOINT_MAGIC = b"CAPM"
    CHECKPOINT_VERSION = 1
    CHECKPOINT_SUFFIX = ".capm"
    REPORT_SUFFIX = ".report.json"
    SCHEMA_PREFIX = "#schema="

    # Conventions recorded in every output's metadata
    CONVENTIONS = {
        "ramp_loss": "continuous 1 - mu/gamma on [0, gamma]",
        "tie_margin": "mu = 0 counts as a classification error",
        "group_norm_axis": "hidden-unit axis: rows of U and U-U0, columns of V (rows of V^T)",
        "inf_1_norm": "max over rows of U and rows of V of row l1 norms",
        "percentile": "nearest rank",
        "design_matrix": "X is d x m (samples as columns) in ||X||_F and ||U0 X||_F",
        "bound_denominator": "gamma * sqrt(m) with unnormalized ||X||_F, as in the exact lemmas",
        "margin_normalizer": "sqrt(c)*||V||_F*(||U-U0||_F*||X||_F + ||U0 X||_F)",
        "cover_count": "N = binom(K+D-1, D-1), the larger of the two printed values",
    }

    # Colors
    BRAND_PRIMARY = "#3E552B"
    COLORWAY = [BRAND_PRIMARY, "#f26157", "#3a5683", "#8e3b46", "#82B756", "#C3AC77", "#6475B3"]
    FONT = "Arial"

    # Summary columns
    H = "h"
    TRAIN_ERROR = "train_error"
    TEST_ERROR = "test_error"
    EPOCHS = "epochs"
    GAMMA = "gamma_5pct"
    NORMALIZED_SUFFIX = "_norm"
    BOUND_COLUMNS = [
        "thm1_first_form",
        "thm1_second_form",
        "thm2_bound",
        "thm4_bound_p2",
        "thm4_bound_lnh",
        "table1_row1",
        "table1_row2",
        "table1_row3",
        "table1_row4",
        "table1_row5",
        "table1_row6",
    ]
