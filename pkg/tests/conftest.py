import numpy as np
import pytest

import unimap as um

# demo quadratic map coefficients used throughout the suite
A, B, C = 0.25123, 0.60123, -0.10123


def quadratic_fixed_point():
    """Attracting root of A x^2 + (B - 1) x + C = 0 by the quadratic formula."""
    disc = (B - 1.0) ** 2 - 4.0 * A * C
    r1 = (-(B - 1.0) + np.sqrt(disc)) / (2.0 * A)
    r2 = (-(B - 1.0) - np.sqrt(disc)) / (2.0 * A)
    root = r2 if -1.0 < r2 < 1.0 else r1
    return root, 2.0 * A * root + B


@pytest.fixture(scope="session")
def sample_map():
    return um.quadratic_map(A, B, C, domain=(-1.0, 1.0), name="demo")


@pytest.fixture(scope="session")
def basis200():
    return um.spatial_basis(200, (-1.0, 1.0))


@pytest.fixture(scope="session")
def V_sample(sample_map, basis200):
    return um.compute_truncated_matrix(sample_map, basis200)


@pytest.fixture(scope="session")
def Vf_sample(V_sample):
    return um.filter_threshold(V_sample, 0.1)


@pytest.fixture(scope="session")
def part_sample(Vf_sample):
    return um.detect_blocks(Vf_sample)


@pytest.fixture(scope="session")
def U_block(Vf_sample, part_sample):
    return um.unitarize_blocks(Vf_sample, part_sample)


@pytest.fixture(scope="session")
def U_global(V_sample):
    return um.unitarize_polar_global(V_sample)


@pytest.fixture(scope="session")
def double_well_map():
    # descent on f with minima at +-0.5: grad f = 4x(x^2 - 0.25)
    return um.gradient_descent_map(
        eta=0.3,
        grad_f=lambda x: 4.0 * np.asarray(x) ** 3 - np.asarray(x),
        grad2_f=lambda x: 12.0 * np.asarray(x) ** 2 - 1.0,
        domain=(-0.55, 0.55),
        name="double_well",
    )


def unitarity_defect(U):
    e = U.entries
    return float(np.max(np.abs(e.conj().T @ e - np.eye(e.shape[0]))))
