import ctypes

import pytest

from hsad.dictionary import init_dictionary
from hsad.hsi_io import SyntheticSceneSpec, cube_to_matrix, generate_synthetic_scene

# In sandboxed container runtimes, glibc returning freed >128KB blocks to the
# kernel makes every solver sweep re-fault its working set; keeping the heap
# cuts suite runtime several-fold. Numeric results are unaffected.
try:
    _libc = ctypes.CDLL("libc.so.6")
    _libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    _libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
except OSError:  # pragma: no cover - non-glibc platform
    pass

# The standard desk-scale scene used across solver and acceptance tests:
# 30 bands, 40x40 pixels, rank-3 background, 5 anomalous pixels, noise 0.01.
STANDARD_SPEC = SyntheticSceneSpec(
    bands=30,
    rows=40,
    cols=40,
    background_rank=3,
    n_anomalies=5,
    anomaly_fraction=5 / 1600,
    noise_sigma=0.01,
    seed=7,
)


@pytest.fixture(scope="session")
def standard_scene():
    cube, mask = generate_synthetic_scene(STANDARD_SPEC)
    return cube, mask


@pytest.fixture(scope="session")
def standard_matrix(standard_scene):
    cube, mask = standard_scene
    return cube_to_matrix(cube), mask


@pytest.fixture(scope="session")
def standard_init(standard_matrix):
    x, _ = standard_matrix
    return init_dictionary(x, k=15, seed=0)


def random_instance(rng, n_bands=8, k=4, n_pixels=20, scale=1.0):
    """A small random solver state for descent/oracle tests."""
    from hsad.admm import LrrState

    return LrrState(
        d_atoms=scale * rng.standard_normal((n_bands, k)),
        l_coef=scale * rng.standard_normal((k, n_pixels)),
        s_anom=scale * rng.standard_normal((n_bands, n_pixels)),
        j_aux=scale * rng.standard_normal((k, n_pixels)),
        d_mult=scale * rng.standard_normal((k, n_pixels)),
        mu=float(rng.uniform(0.5, 3.0)),
    )
