"""
Configuration Module for the Damped NLS Extinction Lab
Author: Solver Engineer (Person 2)

Centralized defaults for the resolvent solver, time stepping, mass ledger,
extinction post-processing and the command-line harness.
"""

# ============================================================================
# COEFFICIENT SETS - C(m) cone and D(m) critical ray
# ============================================================================

MEMBERSHIP_RTOL = 1e-12             # Relative tolerance for the D(m) equality


class CoefficientClass:
    """Classification of a damping coefficient a against C(m) and D(m)"""
    IN_D = "InD"                    # On the critical ray D(m)
    IN_C_ONLY = "InCOnly"           # Inside the cone C(m), off the ray
    OUTSIDE = "Outside"             # Not accretive, never integrated


# Allowed (dimension, derivative order) pairs for the extinction exponents
EXTINCTION_PAIRS = {
    1: (1, 2, 3),                   # l = 1: gradient form, N <= 3
    2: (1, 2, 3, 4, 5),             # l = 2: Laplacian form, N <= 5
}

# ============================================================================
# RESOLVENT SOLVER
# ============================================================================

SOLVER_CONFIG = {
    'tol': 1e-10,                   # Residual tolerance in the discrete L2 norm
    'max_iter': 60,                 # Newton iteration budget
    'method': 'newton',             # newton | picard | hybrid
    'picard_max_iter': 5000,        # Relaxed fixed-point budget (fallback)
    'picard_omega': 1.0,            # Initial relaxation factor
    'picard_omega_min': 1e-3,       # Relaxation floor before giving up
    'hybrid_sweeps': 3,             # Picard sweeps before Newton in hybrid mode
    'line_search_min': 1e-10,       # Smallest Newton damping step
    'linear_rtol': 1e-4,            # Inexact-Newton forcing term
    'ilu_drop_tol': 1e-12,          # Incomplete LU preconditioner
    'ilu_fill_factor': 20.0,
    'gmres_restart': 50,
    'gmres_cycles': 20,             # Restart cycles after a fresh factorization
    'lagged_gmres_cycles': 1,       # Restart cycles allowed on a kept factorization
    'apriori_rtol': 1e-10,          # Nonexpansivity check slack
    'oracle_max_nodes': 64,         # Dense oracle size cap
}

# ============================================================================
# TIME STEPPING
# ============================================================================

RUN_DEFAULTS = {
    'eps': 1e-12,                   # Regularization for time-dependent runs
    'dt': 1e-3,
    'steps': 1000,
    'stride': 1,                    # Snapshot every k-th step
    'scheme': 'implicit_euler',     # implicit_euler | crank_nicolson
    'seed': 0,
    'beta': 1.0,                    # Integrability margin of V2 when N = 2
}

SCHEMES = ('implicit_euler', 'crank_nicolson')

# ============================================================================
# MASS LEDGER
# ============================================================================

LEDGER_CONFIG = {
    'snap_mass': 1e-18,             # States below this mass are set to zero
    'identity_factor': 10.0,        # identity_residual <= factor * tol
    'columns': (
        't', 'mass', 'absorption', 'lmp1', 'work',
        'step_defect', 'identity_residual', 'h1', 'lapl2',
    ),
}

# ============================================================================
# EXTINCTION POST-PROCESSING
# ============================================================================

EXTINCTION_CONFIG = {
    'mass_threshold': 1e-12,        # Extinction threshold on ||u||^2
    'gn_mass_floor': 1e-16,         # Ledger entries used for the GN ratio
    'bound_slack': 0.05,            # Relative slack on time/bound comparisons
    'exponent_slack': 0.15,         # Relative slack on fitted exponents
    'fit_mass_floor': 1e-14,        # Ledger entries usable by decay fits
    'fit_min_points': 10,
    'fit_scale_edge': 1e-3,         # Algebraic scale this close to a search bound is rejected
    'h1_tolerance': 0.05,           # Relative slack of the gradient monitor
    'p_list': (1.0, 4.0),           # Extra Lebesgue norms in the vanishing monitor
    'decay_window': (0.9, 0.08),    # Exponential window as fractions of y(T0)
    'ode_stop_ratio': 1e-8,         # Oracle stops once y^(1-delta) drops by this
}

# ============================================================================
# HARNESS
# ============================================================================

REPORT_SCHEMA_VERSION = 1

HARNESS_CONFIG = {
    'presets_file': 'config.json',
    'output_root': 'runs',
    'workers': 1,
}

EXIT_CODES = {
    'ok': 0,
    'config_error': 1,
    'solver_failure': 2,
    'check_failure': 3,
}
