import numpy as np
import pytest

from nloch.errors import GridMismatch, InvalidKernel
from nloch.grid import Field, Grid2D
from nloch.kernel import KernelSpec, build_kernel, coercivity_check, convolve
from nloch.potentials import PotentialSpec

POLY = PotentialSpec(family="polynomial")


def make_grid(n=16):
    return Grid2D(nx=n, ny=n, lx=1.0, ly=1.0, dt=1e-2, nt=10)




def direct_convolution_loops(op, u):
    grid = op.grid
    nx, ny = grid.nx, grid.ny
    out = np.zeros((nx, ny))
    for i in range(nx):
        for j in range(ny):
            acc = 0.0
            for k in range(nx):
                for l in range(ny):
                    acc += op.table[i - k + nx - 1, j - l + ny - 1] * u[k, l]
            out[i, j] = acc * grid.cell_area
    return out


def test_constant_kernel_a_field():
    g = make_grid(12)
    c = 1.5  # so a(x) = c * |Omega| = 1.5 on the unit square
    op = build_kernel(KernelSpec(family="constant", strength=c), g)
    assert np.allclose(op.a_field, c * g.area, rtol=0, atol=1e-12)
    assert op.a_star == pytest.approx(op.a_sup, rel=1e-12)


def test_gaussian_a_field_against_direct_quadrature():
    g = make_grid(16)
    spec = KernelSpec(family="gaussian", strength=8.0, width=0.12)
    op = build_kernel(spec, g)
    oracle = direct_convolution_loops(op, np.ones(g.shape))
    assert np.max(np.abs(op.a_field - oracle)) <= 1e-12
    # boundary sees truncated mass; the minimum sits at a corner
    interior = op.a_field[g.nx // 2, g.ny // 2]
    corner = op.a_field[0, 0]
    assert corner < interior
    assert op.a_star == pytest.approx(corner, rel=1e-12)


def test_kernel_table_even():
    g = make_grid(10)
    for family, kw in [
        ("gaussian", dict(width=0.15)),
        ("constant", {}),
        ("truncated_newtonian", dict(cutoff=0.4)),
    ]:
        op = build_kernel(KernelSpec(family=family, strength=2.0, **kw), g)
        assert np.array_equal(op.table, op.table[::-1, ::-1])


def test_convolve_matches_direct_sum():
    g = make_grid(16)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(g.shape)
    for family, kw in [
        ("gaussian", dict(width=0.2)),
        ("truncated_newtonian", dict(cutoff=0.35)),
    ]:
        op = build_kernel(KernelSpec(family=family, strength=3.0, **kw), g)
        fast = convolve(op, Field(g, u)).values
        slow = direct_convolution_loops(op, u)
        assert np.max(np.abs(fast - slow)) <= 1e-12


def test_convolve_ones_equals_stored_a_field():
    g = make_grid(16)
    op = build_kernel(KernelSpec(family="gaussian", strength=5.0, width=0.15), g)
    out = convolve(op, Field(g, np.ones(g.shape))).values
    assert np.array_equal(out, op.a_field)


def test_adjointness_on_random_pairs():
    g = make_grid(16)
    op = build_kernel(KernelSpec(family="gaussian", strength=4.0, width=0.18), g)
    rng = np.random.default_rng(1)
    for _ in range(100):
        u = rng.standard_normal(g.shape)
        v = rng.standard_normal(g.shape)
        a = np.sum(op.apply(u) * v)
        b = np.sum(u * op.apply(v))
        assert abs(a - b) <= 1e-12 * max(abs(a), abs(b), 1.0)


def test_nonnegative_kernel_preserves_sign():
    g = make_grid(16)
    op = build_kernel(KernelSpec(family="gaussian", strength=4.0, width=0.18), g)
    rng = np.random.default_rng(2)
    u = rng.random(g.shape)
    assert np.min(op.apply(u)) >= -1e-12


def test_grid_mismatch():
    g1, g2 = make_grid(16), make_grid(12)
    op = build_kernel(KernelSpec(family="constant", strength=1.0), g1)
    with pytest.raises(GridMismatch):
        convolve(op, Field.zeros(g2))


def test_invalid_kernel_spec():
    with pytest.raises(InvalidKernel):
        KernelSpec(family="mystery")
    with pytest.raises(InvalidKernel):
        KernelSpec(family="gaussian", strength=-1.0)


def test_coercivity_constant_kernel():
    g = make_grid(12)
    op = build_kernel(KernelSpec(family="constant", strength=1.5), g)
    rep = coercivity_check(op, POLY)
    # a_star = 1.5, min F'' = -1  =>  C0 = 0.5
    assert rep.c0 == pytest.approx(0.5, abs=1e-6)
    assert rep.ok
    assert rep.tau0 == 1.0
    assert rep.eps0 > 0.0


def test_coercivity_failure_with_zero_kernel():
    g = make_grid(12)
    op = build_kernel(KernelSpec(family="constant", strength=0.0), g)
    rep = coercivity_check(op, POLY)
    assert rep.c0 == pytest.approx(-1.0, abs=1e-6)
    assert not rep.ok


def test_tau0_is_always_one():
    g = make_grid(12)
    for s in (0.0, 1.5, 10.0):
        op = build_kernel(KernelSpec(family="constant", strength=s), g)
        assert coercivity_check(op, POLY).tau0 == 1.0
