import numpy as np
import pytest

import nonbloch as nb


@pytest.fixture(scope="session")
def model_1d():
    return nb.builtin_1d()


@pytest.fixture(scope="session")
def model_2d():
    return nb.builtin_2d()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_model(rng, dim=1, n_orb=1, max_range=2, scale=1.0):
    """Random Laurent model with finite support and a guaranteed onsite block."""
    coeffs = {}
    offsets = [tuple(v) for v in np.ndindex(*([2 * max_range + 1] * dim))]
    for off in offsets:
        alpha = tuple(o - max_range for o in off)
        if rng.random() < 0.6 and alpha != (0,) * dim:
            continue
        mat = scale * (rng.standard_normal((n_orb, n_orb)) +
                       1j * rng.standard_normal((n_orb, n_orb)))
        coeffs[alpha] = mat
    return nb.LaurentModel(dim, n_orb, coeffs)
