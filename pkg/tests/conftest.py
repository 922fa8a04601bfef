"""Shared builders for desk-scale test problems.

The default kernel (gaussian, strength 5, width 0.5 on the unit square) gives
a_star ~ 1.84, C0 ~ 0.84 for the quartic well and eps0 ~ 7.2e-3, so the full
regime runs with eps ~ 3e-3 and tau ~ 0.2 inside the admissible ranges.
"""

import numpy as np
import pytest

from nloch.grid import Field, Grid2D
from nloch.kernel import KernelSpec, build_kernel
from nloch.potentials import PotentialSpec, ProliferationSpec, eval_F
from nloch.state import ControlBounds, ControlVector, ModelConfig

DEFAULT_EPS = 3.0e-3
DEFAULT_TAU = 0.2


def make_grid(n=24, nt=40, T=0.2):
    return Grid2D(nx=n, ny=n, lx=1.0, ly=1.0, dt=T / nt, nt=nt)


def default_kernel_spec():
    return KernelSpec(family="gaussian", strength=5.0, width=0.5)


def blob_phi0(grid, amplitude=0.6, radius=0.28, width=0.1):
    def fn(x, y):
        d = np.hypot(x - 0.5, y - 0.5)
        return amplitude * np.tanh((radius - d) / width)

    return Field.from_function(grid, fn)


def cosine_phi0(grid, mean=0.0, amplitude=0.2):
    return Field.from_function(
        grid, lambda x, y: mean + amplitude * np.cos(np.pi * x) * np.cos(np.pi * y)
    )


def nutrient0(grid, base=0.9, dip=0.4, phi0=None):
    if phi0 is None:
        return Field.full(grid, base)
    return Field(grid, np.clip(base - dip * (1.0 + phi0.values) / 2.0, 0.0, 1.0))


def consistent_mu0(grid, kernel_spec, potential, phi0):
    op = build_kernel(kernel_spec, grid)
    vals = op.a_field * phi0.values - op.apply(phi0.values) + eval_F(potential, phi0.values, 1)
    return Field(grid, vals)


def make_model(
    n=24,
    nt=40,
    T=0.2,
    eps=DEFAULT_EPS,
    tau=DEFAULT_TAU,
    potential_family="polynomial",
    phi0=None,
    sigma0=None,
    A=0.05,
    B=0.5,
    sigma_S=1.0,
    f_max=1.0,
    kernel_spec=None,
):
    grid = make_grid(n=n, nt=nt, T=T)
    kernel_spec = kernel_spec or default_kernel_spec()
    if potential_family == "logarithmic":
        potential = PotentialSpec(family="logarithmic", theta=0.3, theta0=1.0)
    else:
        potential = PotentialSpec(family="polynomial")
    prolif = ProliferationSpec(family="smoothstep", f_max=f_max)
    if phi0 is None:
        phi0 = blob_phi0(grid)
    if sigma0 is None:
        sigma0 = nutrient0(grid, phi0=phi0)
    mu0 = consistent_mu0(grid, kernel_spec, potential, phi0) if eps > 0 else None
    return ModelConfig(
        grid=grid,
        kernel=kernel_spec,
        potential=potential,
        prolif=prolif,
        phi0=phi0,
        sigma0=sigma0,
        mu0=mu0,
        A=A,
        B=B,
        sigma_S=sigma_S,
        eps=eps,
        tau=tau,
    )


def default_bounds():
    return ControlBounds(P_max=5.0, chi_max=0.2, eta_max=0.3, C_max=2.0)


def default_controls():
    return ControlVector(P=1.2, chi=0.08, eta=0.12, C=0.6)


@pytest.fixture
def small_model():
    return make_model(n=16, nt=16, T=0.08)
