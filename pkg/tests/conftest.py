"""
Shared fixtures. The environment is set before any parafact import so that
settings read at import time point at a scratch directory.
"""
import os
import tempfile

_SCRATCH = tempfile.mkdtemp(prefix="parafact-tests-")
os.environ["PARAFACT_CACHE_DIR"] = _SCRATCH
os.environ["RUN_LOG_ENABLED"] = "false"
os.environ.setdefault("PARAFACT_SAMPLES", "400")
os.environ.setdefault("PARAFACT_PAIRS", "60")

import pytest  # noqa: E402

from parafact.fileio import load_equation, load_map  # noqa: E402

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CORPUS = os.path.join(ROOT, "corpus")


def equation_path(name: str) -> str:
    return os.path.join(CORPUS, "equations", f"{name}.eq")


def map_path(name: str) -> str:
    return os.path.join(CORPUS, "maps", f"{name}.map")


@pytest.fixture
def corpus_dir():
    return CORPUS


@pytest.fixture
def equation():
    """Loader for corpus equations by stem."""
    return lambda name: load_equation(equation_path(name))


@pytest.fixture
def fmap():
    """Loader for corpus maps by stem."""
    return lambda name: load_map(map_path(name))
