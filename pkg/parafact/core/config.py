"""
Application Configuration
Centralized configuration management for the parabolic factorization toolkit
"""
import os
from dotenv import load_dotenv

load_dotenv()

# Sampling and identity testing
DEFAULT_SAMPLES = int(os.getenv("PARAFACT_SAMPLES", 1000))
DEFAULT_TOL = float(os.getenv("PARAFACT_TOL", 1e-6))  # relative
SUBMERSION_TOL = float(os.getenv("PARAFACT_SUBMERSION_TOL", 1e-7))
DEFAULT_SEED = int(os.getenv("PARAFACT_SEED", 0))
DEFAULT_PAIRS = int(os.getenv("PARAFACT_PAIRS", 200))
SINGULAR_BUDGET = float(os.getenv("PARAFACT_SINGULAR_BUDGET", 0.2))  # fraction of samples
SAMPLING_METHOD = os.getenv("PARAFACT_SAMPLING", "halton")  # halton | uniform
SAMPLE_RADIUS = float(os.getenv("PARAFACT_SAMPLE_RADIUS", 10.0))  # window for unbounded intervals
EIG_TOL = float(os.getenv("PARAFACT_EIG_TOL", 1e-9))

# Newton inversion
NEWTON_TOL = float(os.getenv("NEWTON_TOL", 1e-10))
NEWTON_MAX_ITER = int(os.getenv("NEWTON_MAX_ITER", 100))
NEWTON_RESTARTS = int(os.getenv("NEWTON_RESTARTS", 32))
NEWTON_PATIENCE = int(os.getenv("NEWTON_PATIENCE", 12))  # stalled iterations before giving up

# Flows and quadratures
RK4_STEPS = int(os.getenv("RK4_STEPS", 200))
QUADRATURE_NODES = int(os.getenv("QUADRATURE_NODES", 64))

# Diffusion-law classification
ACLASS_GRID = int(os.getenv("ACLASS_GRID", 4096))
ACLASS_SCAN = int(os.getenv("ACLASS_SCAN", 512))  # candidate periods
ACLASS_TOL = float(os.getenv("ACLASS_TOL", 1e-4))  # normalized variance
ACLASS_WINDOW_RADIUS = float(os.getenv("ACLASS_WINDOW_RADIUS", 50.0))
ACLASS_MIN_WINDOW = float(os.getenv("ACLASS_MIN_WINDOW", 12.0))
ACLASS_MAX_U0 = int(os.getenv("ACLASS_MAX_U0", 64))

# Lattice dataset and example corpus
_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
LATTICE_FILE = os.getenv("LATTICE_FILE", os.path.join(_ROOT, "data", "lattice.facts"))
CORPUS_DIR = os.getenv("CORPUS_DIR", os.path.join(_ROOT, "corpus"))

# Artifact cache (L1 in-process, L2 binary tables on disk)
CACHE_DIR = os.getenv("PARAFACT_CACHE_DIR", ".parafact")
L1_CACHE_SIZE = int(os.getenv("L1_CACHE_SIZE", 512))
CACHE_ENABLED = os.getenv("CACHE_ENABLED", "True").lower() == "true"

# Run history (SQLite by default)
DATABASE_URL = os.getenv("DATABASE_URL", f"sqlite:///{CACHE_DIR}/runs.db")
RUN_LOG_ENABLED = os.getenv("RUN_LOG_ENABLED", "True").lower() == "true"

# Application Settings
APP_NAME = os.getenv("APP_NAME", "parafact")
LOG_JSON = os.getenv("LOG_JSON", "False").lower() == "true"
DEBUG = os.getenv("DEBUG", "False").lower() == "true"
