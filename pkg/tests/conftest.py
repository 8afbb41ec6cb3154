import numpy as np
import pytest

from anisonet.synthetic import box_tet_mesh
from anisonet.tetmesh import TetMesh

UNIT_TET_NODES = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)


def random_rotation(rng):
    """Haar-ish random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_spd_sym6(rng, n, spacing_lo=0.2, spacing_hi=5.0, min_gap=0.0):
    """Random SPD tensors in 6-component storage, built from random frames.

    ``min_gap`` enforces a relative gap between consecutive metric
    eigenvalues (useful for roundtrip tests that need distinct spectra).
    """
    from anisonet.metric import frame_field_to_metric

    axes = np.stack([random_rotation(rng) for _ in range(n)])
    log_lo, log_hi = np.log(spacing_lo), np.log(spacing_hi)
    d = np.sort(np.exp(rng.uniform(log_lo, log_hi, size=(n, 3))), axis=1)
    if min_gap > 0.0:
        lam = 1.0 / d[:, ::-1] ** 2  # descending spacings -> ascending eigenvalues
        for k in (1, 2):
            lam[:, k] = np.maximum(lam[:, k], lam[:, k - 1] * (1.0 + 4.0 * min_gap))
        d = 1.0 / np.sqrt(lam[:, ::-1])
    return frame_field_to_metric(d, axes)


def jittered_box_mesh(cells=4, seed=0, amplitude=0.25) -> TetMesh:
    """Structured box mesh with interior nodes jittered (breaks symmetry)."""
    mesh = box_tet_mesh(cells)
    rng = np.random.default_rng(seed)
    nodes = mesh.nodes.copy()
    h = 1.0 / cells
    interior = ~mesh.boundary
    nodes[interior] += rng.uniform(-amplitude * h, amplitude * h, size=(interior.sum(), 3))
    return TetMesh(nodes, mesh.tets)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def small_box():
    return box_tet_mesh(3)


@pytest.fixture(scope="session")
def jittered_box():
    return jittered_box_mesh(cells=4, seed=3)
