"""
Core Package
Contains shared configuration and the exception hierarchy
"""
from parafact.core.config import *

__all__ = [
    "DEFAULT_SAMPLES",
    "DEFAULT_TOL",
    "SUBMERSION_TOL",
    "DEFAULT_SEED",
    "DEFAULT_PAIRS",
    "SINGULAR_BUDGET",
    "SAMPLING_METHOD",
    "SAMPLE_RADIUS",
    "EIG_TOL",
    "NEWTON_TOL",
    "NEWTON_MAX_ITER",
    "NEWTON_RESTARTS",
    "NEWTON_PATIENCE",
    "RK4_STEPS",
    "QUADRATURE_NODES",
    "ACLASS_GRID",
    "ACLASS_SCAN",
    "ACLASS_TOL",
    "ACLASS_WINDOW_RADIUS",
    "ACLASS_MIN_WINDOW",
    "ACLASS_MAX_U0",
    "LATTICE_FILE",
    "CORPUS_DIR",
    "CACHE_DIR",
    "L1_CACHE_SIZE",
    "CACHE_ENABLED",
    "DATABASE_URL",
    "RUN_LOG_ENABLED",
    "APP_NAME",
    "LOG_JSON",
    "DEBUG"
]
