"""
Constants used throughout the simulator and the experiment harness.
"""

# Default velocity dimension
DEFAULT_DIMENSION = 3

# Inverse-CDF tables for the deviation angle
THETA_TABLE_NODES = 2 ** 14

# Pair selection switches to the majorant-rate path beyond this size
FICTITIOUS_COLLISION_THRESHOLD = 4096

# Cached hard-sphere rate sums are rebuilt every REFRESH_FACTOR * N events
RATE_REFRESH_FACTOR = 1

# Generator quadrature
MIN_QUADRATURE_ORDER = 8
QUADRATURE_TOLERANCE = 1e-6

# Optimal transport budgets (support points per measure)
ASSIGNMENT_BUDGET = 1024
NETWORK_SIMPLEX_BUDGET = 4096
NETWORK_SIMPLEX_MAX_ITER = 10_000_000

# Fourier grids
TOSCANI_GRID = {
    "r_min": 1e-2,
    "r_max": 1e2,
    "n_radii": 64,
    "n_directions": 32,
}

SOBOLEV_QUADRATURE = {
    "r_low": 1e-3,
    "r_max": 1e2,
    "n_log_nodes": 96,
    "panel_width": 0.25,
    "nodes_per_panel": 8,
    "n_directions": 64,
}

MOMENT_TOLERANCE = 1e-8

# Reference samples for continuous laws
REFERENCE_SAMPLE_RATIO = 50
MIN_REFERENCE_PARTICLES = 1000

# Kac sphere MCMC
MCMC_DEFAULTS = {
    "burn_in": 2000,
    "thinning": 10,
    "step": 0.3,
    "chains": 4,
}
RHAT_THRESHOLD = 1.1

# Relaxation fits
MIN_R_SQUARED = 0.9

# Dictionary of test functions
DICTIONARY_DEFAULTS = {
    "n_packets": 32,
    "n_ramps": 16,
    "freq_min": 0.25,
    "freq_max": 4.0,
    "seed": 20240501,
}

# Substream stage ids (keyed together with the replica index)
STAGE_IDS = {
    "simulate": 1,
    "initial": 2,
    "reference": 3,
    "reference_sample": 4,
    "lln": 5,
    "chaos": 6,
    "contraction": 7,
    "mehler": 8,
    "battery": 9,
    "bootstrap": 10,
    "mcmc": 11,
}

# Exit codes of the command line
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

WORKERS_ENV = "KACSIM_WORKERS"
