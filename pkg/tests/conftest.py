import numpy as np
import pytest

from app.core.sparse_space import GridKind, enumerate_dofs


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Keep outputs, logs and worker counts inside the test sandbox."""
    monkeypatch.setenv("SGIIF_OUTPUT_DIR", str(tmp_path / "output"))
    monkeypatch.setenv("SGIIF_LOG_FILE", str(tmp_path / "sgiif.log"))
    monkeypatch.setenv("SGIIF_THREADS", "1")
    monkeypatch.delenv("SGIIF_CACHE_DIR", raising=False)
    return tmp_path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sparse_2d():
    return enumerate_dofs(2, 1, 3, GridKind.SPARSE)


@pytest.fixture
def full_2d():
    return enumerate_dofs(2, 1, 3, GridKind.FULL)
