"""Shared fixtures: the reference double-well model and its solved fields.

Session scope keeps the grid solves (about half a second each) from being
repeated by every test module.
"""

import numpy as np
import pytest

import levytpt as lt

# Reference jump-diffusion: b = x - x^3, sigma = 0.5, additive jumps with
# amplitude 0.3 and a symmetric uniform mark measure of mass 2 on +-[0.1, 1).
DW_CONFIG = {
    "family": "double-well",
    "sigma": 0.5,
    "sigma_l": 0.3,
    "measure": {"kind": "uniform", "r_min": 0.1, "r_max": 1.0, "mass": 2.0},
}

A_LO, A_HI = -1.25, -0.75
B_LO, B_HI = 0.75, 1.25


@pytest.fixture(scope="session")
def model():
    return lt.build_model(DW_CONFIG)


@pytest.fixture(scope="session")
def regions():
    a = lt.Region.interval(A_LO, A_HI, label="A")
    b = lt.Region.interval(B_LO, B_HI, label="B")
    return a, b


@pytest.fixture(scope="session")
def diffusion_model():
    # Same drift and sigma, jumps removed.
    return lt.build_model({"family": "double-well", "sigma": 0.5, "sigma_l": 0.0})


@pytest.fixture(scope="session")
def ou_model():
    return lt.build_model({"family": "ornstein-uhlenbeck", "theta": 1.0, "sigma": np.sqrt(2.0)})


@pytest.fixture(scope="session")
def solver_cfg():
    return lt.SolverConfig(lo=-3.0, hi=3.0, n=1000, n_quad=64, n_theta=16)


@pytest.fixture(scope="session")
def solved(model, regions, solver_cfg):
    """rho, q, qbar of the reference model on the 1000-node grid."""
    a, b = regions
    rho = lt.solve_stationary_density_1d(model, solver_cfg)
    q = lt.solve_forward_committor_1d(model, a, b, solver_cfg)
    qbar = lt.solve_backward_committor_1d(model, rho.field, a, b, solver_cfg)
    return {"rho": rho, "q": q, "qbar": qbar}


@pytest.fixture(scope="session")
def hitting_fields(model, regions, solver_cfg):
    a, b = regions
    u_a = lt.solve_mean_hitting_time_1d(model, a, solver_cfg)
    u_b = lt.solve_mean_hitting_time_1d(model, b, solver_cfg)
    return {"u_a": u_a, "u_b": u_b}
