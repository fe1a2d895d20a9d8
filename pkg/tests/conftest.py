import numpy as np
import pytest

import halfplane_fmm as hf


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile/load the numba kernels once so timed sections stay honest."""
    rng = np.random.default_rng(0)
    pos = np.column_stack([rng.uniform(0, 1, 64), rng.uniform(0.05, 1, 64)])
    system = hf.ChargeSystem(pos, rng.uniform(-1, 1, 64))
    params = hf.FmmParams(order=6, leaf_capacity=16)
    hf.half_plane_fmm(system, pos, params)
    hf.direct_total(system, pos, hf.BoundaryKind.ROBIN, hf.Impedance(1.0))
    hf.ei_pv(np.array([1.0 + 1.0j]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
