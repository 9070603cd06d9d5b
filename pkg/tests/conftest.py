import numpy as np
import pytest

from cimbi.model import JumpMeasure, ModelSpec


def one_d(eta=0.2, sigma=1.0, b=-1.0, c=-1.0, x0=0.5, **kw):
    return ModelSpec([x0], [eta], [sigma], [[b]], [[c]], **kw)


@pytest.fixture
def never_hits_spec():
    return ModelSpec([2.0, 2.0], [2.0, 2.0], [1.0, 1.0], np.zeros((2, 2)), [[-0.1, -0.02], [-0.03, -0.1]],
                     nu=JumpMeasure.from_atoms([(0.5, [0.5, 0.5])]),
                     mu=(JumpMeasure.from_atoms([(0.2, [0.3, 0.1])]), JumpMeasure.from_atoms([(0.2, [0.1, 0.3])])))


@pytest.fixture
def zu_spec():
    return ModelSpec([1.0, 1.0], [0.1, 0.1], [1.0, 1.0], -np.eye(2), [[-1.0, -0.2], [-0.2, -1.0]])


def random_spec(rng, d, jumps=True, strict=True):
    """A valid random spec; used by property tests."""
    B = rng.uniform(0, 1, (d, d))
    B[np.diag_indices(d)] = rng.uniform(-2, 1, d)
    C = rng.uniform(-1, 1, (d, d))
    C[np.diag_indices(d)] = -rng.uniform(0.1, 2, d)
    nu = mu = None
    if jumps:
        nu = JumpMeasure.from_atoms([(rng.uniform(0.1, 1), rng.uniform(0, 1, d) + 0.01)])
        mu = tuple(JumpMeasure.from_atoms([(rng.uniform(0.1, 1), rng.uniform(0, 1, d) + 0.01)]) for _ in range(d))
    return ModelSpec(rng.uniform(0.2, 3, d), rng.uniform(0, 3, d), rng.uniform(0, 2, d), B, C,
                     nu=nu, mu=mu, strict_interaction=strict)
