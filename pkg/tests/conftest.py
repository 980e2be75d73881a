import numpy as np
import pytest

from rpencounter.qcore import HilbertLayout, build_subspace_ops
from rpencounter.spinham import SpinSystemSpec, build_hamiltonian_matrix, make_nucleus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def bare():
    """No nuclei: the 5-dimensional S, T0, T+, T-, P space."""
    layout = HilbertLayout()
    return layout, build_subspace_ops(layout)


@pytest.fixture
def one_nucleus():
    """One spin-1/2 nucleus on radical 1 (dimension 10)."""
    layout = HilbertLayout((2,))
    return layout, build_subspace_ops(layout)


def isotropic_hamiltonian(a=1.0, field=(0.0, 0.0, 0.0)):
    spec = SpinSystemSpec(np.array(field, dtype=float), (1.0, 1.0), (make_nucleus(1, 0.5, a),))
    layout = spec.layout()
    return spec, layout, build_hamiltonian_matrix(spec, layout)
