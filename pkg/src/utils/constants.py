"""Constants used throughout the application."""

import numpy as np

# Local Pauli matrices, basis order (up, down) = (sigma^z = +1, sigma^z = -1)
IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

# Pauli labels in the binary symplectic encoding used by pauli-dressed basis points:
# index = x_bit + 2 * z_bit, so composing two Paulis (up to phase) is an XOR.
PAULIS = {0: IDENTITY, 1: SIGMA_X, 2: SIGMA_Z, 3: SIGMA_Y}
PAULI_NAMES = {0: 'I', 1: 'X', 2: 'Z', 3: 'Y'}

# Benchmark couplings (J, g, h)
BENCHMARK_COUPLINGS = (1.0, -1.05, 0.5)

# Truncation defaults
DEFAULT_MAX_BOND = 64
DEFAULT_SV_CUTOFF = 1e-10
ISOMETRY_TOLERANCE = 1e-10

# Evolution defaults
DEFAULT_DT = 0.02
DEFAULT_DBETA = 0.02
DEFAULT_ERROR_CEILING = 1e-3
DEFAULT_MEMORY_BUDGET_MB = 4096
GRID_ROUNDING_TOLERANCE = 1e-9

# Filter defaults
DEFAULT_X = 3.0
DENOMINATOR_FLOOR = 1e-12
DOS_WEIGHT_FLOOR = 1e-10
IMAG_RESIDUE_CEILING = 1e-6

# Sampler defaults
DEFAULT_CUTOFF_REL = 1e-4
DEFAULT_BATCHES = 50
DEFAULT_N_SAMPLES = 50000
DEFAULT_BURN_IN = 1000
NEGATIVE_WEIGHT_TOLERANCE = 1e-10
GREEDY_STARTS = 32
EXHAUSTIVE_SEED_MAX_SITES = 20

# Variance minimisation defaults
DEFAULT_MAX_SWEEPS = 20
DEFAULT_SWEEP_TOL = 1e-10
DENSE_EIGH_MAX_DIM = 512
PADDING_NOISE = 1e-4
EIGENSTATE_WIDTH = 1e-6

# Exact diagonalisation
ED_MAX_SITES = 14
DEFAULT_WINDOW = 0.5

# Binary formats
TENSOR_TRAIN_MAGIC = b'FETT1'
TENSOR_TRAIN_VERSION = 1
SPECTRUM_MAGIC = b'FESD1'

# Output and storage
DB_PATH = 'results.db'
DEFAULT_OUTPUT_DIR = 'runs'
MANIFEST_NAME = 'manifest.txt'
LOCK_NAME = '.writer.lock'
LOCK_STALE_SECONDS = 3600
CODE_VERSION = '0.3.0'

# Exit codes
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CACHE = 4

# Run status markers for the terminal views
STATUS_EMOJIS = {
    'pass': '✅',
    'fail': '❌'
}
