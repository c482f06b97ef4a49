import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile(
    "default", max_examples=50, deadline=None, derandomize=True
)
hypothesis.settings.register_profile(
    "fast", max_examples=10, deadline=None, derandomize=True
)
hypothesis.settings.load_profile("default")


def random_density_bell(rng: np.random.Generator) -> np.ndarray:
    """Random full-rank density matrix (Bell-basis array), Hilbert-Schmidt-ish."""
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    mat = g @ g.conj().T
    return mat / mat.trace().real


def random_xstate_bell(rng: np.random.Generator) -> np.ndarray:
    """Random Bell-basis X-state: diagonal plus 14 and 23 couplings."""
    p = rng.dirichlet(np.ones(4))
    r14 = np.sqrt(p[0] * p[3]) * rng.uniform(0.0, 1.0) * np.exp(1j * rng.uniform(0, 2 * np.pi))
    r23 = np.sqrt(p[1] * p[2]) * rng.uniform(0.0, 1.0) * np.exp(1j * rng.uniform(0, 2 * np.pi))
    mat = np.diag(p).astype(complex)
    mat[0, 3], mat[3, 0] = r14, np.conj(r14)
    mat[1, 2], mat[2, 1] = r23, np.conj(r23)
    return mat


def random_closed_class_bell(rng: np.random.Generator) -> np.ndarray:
    """Random state in the measurement-closed class: rho_14 = 0, rho_23 = i y."""
    p = rng.dirichlet(np.ones(4))
    y = np.sqrt(p[1] * p[2]) * rng.uniform(-1.0, 1.0)
    mat = np.diag(p).astype(complex)
    mat[1, 2], mat[2, 1] = 1j * y, -1j * y
    return mat


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260814)
