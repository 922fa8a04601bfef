"""Cell-centered rectangular grid, scalar fields, and discrete Neumann operators.

The grid covers [0, lx] x [0, ly] with nx x ny cells; cell (i, j) is centered
at ((i + 1/2) hx, (j + 1/2) hy).  Homogeneous Neumann conditions are realized
by mirror-reflection ghost cells, which makes the 5-point Laplacian symmetric
and exactly flux-conservative: the sum of the Laplacian over all cells cancels
pairwise.  All heavy lifting happens on raw float64 arrays of shape (nx, ny);
the thin Field / FieldSeries / Trajectory wrappers carry grid metadata and are
immutable after construction.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft

from .errors import GridMismatch, NonConvergence, ShapeMismatch

__all__ = [
    "Grid2D",
    "Field",
    "FieldSeries",
    "Trajectory",
    "laplacian_neumann",
    "integrate",
    "norms",
    "solve_helmholtz",
    "vstar_norm",
]


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell-centered grid on [0, lx] x [0, ly] plus the time grid."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    dt: float = 1e-2
    nt: int = 1

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid must have nx, ny >= 4, got {self.nx} x {self.ny}")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError("domain side lengths must be positive")
        if self.dt <= 0:
            raise ValueError("time step must be positive")
        if self.nt < 1:
            raise ValueError("need at least one time step")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def T(self) -> float:
        return self.nt * self.dt

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (indexing='ij') of cell-center coordinates."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def refined_time(self, factor: int) -> "Grid2D":
        """Same spatial grid with dt/factor and nt*factor (same final time)."""
        return replace(self, dt=self.dt / factor, nt=self.nt * factor)

    def refined_space(self, factor: int) -> "Grid2D":
        return replace(self, nx=self.nx * factor, ny=self.ny * factor)

    def compatible(self, other: "Grid2D") -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and np.isclose(self.lx, other.lx)
            and np.isclose(self.ly, other.ly)
        )


def _as_values(grid: Grid2D, values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != grid.shape:
        raise ShapeMismatch(f"expected values of shape {grid.shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    return arr


@dataclass(frozen=True)
class Field:
    """A scalar function sampled at cell centers; immutable after construction."""

    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _as_values(self.grid, self.values).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, grid: Grid2D) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def full(cls, grid: Grid2D, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "Field":
        X, Y = grid.cell_centers()
        return cls(grid, np.asarray(fn(X, Y), dtype=np.float64))

    def same_grid(self, other: "Field") -> None:
        if not self.grid.compatible(other.grid):
            raise GridMismatch("fields live on different grids")


@dataclass(frozen=True)
class FieldSeries:
    """A time-indexed sequence of scalar fields sharing one grid."""

    grid: Grid2D
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)  # shape (len(times), nx, ny)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] != t.shape[0] or v.shape[1:] != self.grid.shape:
            raise ShapeMismatch(
                f"series shape {v.shape} incompatible with {t.shape[0]} times on grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("series values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    def at(self, n: int) -> Field:
        return Field(self.grid, self.values[n])

    def interpolated(self, new_times: np.ndarray, grid: Grid2D | None = None) -> "FieldSeries":
        """Linear-in-time resampling onto a new time grid (clamped at the ends)."""
        t_new = np.asarray(new_times, dtype=np.float64)
        t_old = self.times
        idx = np.clip(np.searchsorted(t_old, t_new, side="right") - 1, 0, len(t_old) - 2)
        span = t_old[idx + 1] - t_old[idx]
        w = np.clip((t_new - t_old[idx]) / np.where(span > 0, span, 1.0), 0.0, 1.0)
        vals = (1.0 - w)[:, None, None] * self.values[idx] + w[:, None, None] * self.values[idx + 1]
        return FieldSeries(grid or self.grid, t_new, vals)


_STATE_ROLES = ("phi", "mu", "sigma")


@dataclass(frozen=True)
class Trajectory:
    """Three time-indexed fields (state, tangent, or adjoint triple) on one grid.

    ``roles`` names the components, e.g. ('phi','mu','sigma') for states,
    ('xi','nu','zeta') for tangents, ('p','q','r') for adjoints.
    """

    grid: Grid2D
    times: np.ndarray = field(repr=False)
    roles: tuple[str, str, str]
    data: dict = field(repr=False)
    diagnostics: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        object.__setattr__(self, "times", t)
        if len(self.roles) != 3:
            raise ShapeMismatch("a trajectory carries exactly three components")
        for role in self.roles:
            arr = np.asarray(self.data[role], dtype=np.float64)
            if arr.shape != (t.shape[0],) + self.grid.shape:
                raise ShapeMismatch(
                    f"component {role!r} has shape {arr.shape}, expected {(t.shape[0],) + self.grid.shape}"
                )
            self.data[role] = arr

    def __getitem__(self, role: str) -> np.ndarray:
        return self.data[role]

    @property
    def nt(self) -> int:
        return len(self.times) - 1

    def series(self, role: str) -> FieldSeries:
        return FieldSeries(self.grid, self.times, self.data[role])

    def component_at(self, role: str, n: int) -> Field:
        return Field(self.grid, self.data[role][n])

    def final(self, role: str) -> Field:
        return self.component_at(role, self.nt)


# ---------------------------------------------------------------------------
# array-level operators (hot path: no Field wrappers)
# ---------------------------------------------------------------------------


def lap_array(u: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """5-point Laplacian with mirror ghost cells (homogeneous Neumann)."""
    out = np.zeros_like(u)
    inv_hx2 = 1.0 / (hx * hx)
    inv_hy2 = 1.0 / (hy * hy)
    # x-direction second difference; mirror ghosts make boundary fluxes vanish
    out[1:-1, :] += (u[2:, :] - 2.0 * u[1:-1, :] + u[:-2, :]) * inv_hx2
    out[0, :] += (u[1, :] - u[0, :]) * inv_hx2
    out[-1, :] += (u[-2, :] - u[-1, :]) * inv_hx2
    out[:, 1:-1] += (u[:, 2:] - 2.0 * u[:, 1:-1] + u[:, :-2]) * inv_hy2
    out[:, 0] += (u[:, 1] - u[:, 0]) * inv_hy2
    out[:, -1] += (u[:, -2] - u[:, -1]) * inv_hy2
    return out


def grad_sq_array(u: np.ndarray, hx: float, hy: float) -> float:
    """Discrete Dirichlet energy: sum over interior faces of |du/h|^2 * cell area."""
    gx = (u[1:, :] - u[:-1, :]) / hx
    gy = (u[:, 1:] - u[:, :-1]) / hy
    return float((np.sum(gx * gx) + np.sum(gy * gy)) * hx * hy)


def integrate_array(u: np.ndarray, grid: Grid2D) -> float:
    """Midpoint quadrature of a cell-centered field."""
    return float(np.sum(u) * grid.cell_area)


def dot_array(u: np.ndarray, v: np.ndarray, grid: Grid2D) -> float:
    """Discrete L2(Omega) inner product."""
    return float(np.sum(u * v) * grid.cell_area)


def l2_array(u: np.ndarray, grid: Grid2D) -> float:
    return float(np.sqrt(max(dot_array(u, u, grid), 0.0)))


@functools.lru_cache(maxsize=32)
def _neumann_eigenvalues(nx: int, ny: int, hx: float, hy: float) -> np.ndarray:
    """Eigenvalues of -Laplacian under the DCT-II basis of the mirror grid."""
    kx = np.arange(nx)
    ky = np.arange(ny)
    lx = (4.0 / (hx * hx)) * np.sin(np.pi * kx / (2 * nx)) ** 2
    ly = (4.0 / (hy * hy)) * np.sin(np.pi * ky / (2 * ny)) ** 2
    return lx[:, None] + ly[None, :]


def _dct2(u: np.ndarray) -> np.ndarray:
    return scipy.fft.dctn(u, type=2, norm="ortho")


def _idct2(u: np.ndarray) -> np.ndarray:
    return scipy.fft.idctn(u, type=2, norm="ortho")


def helmholtz_dct_array(alpha: float, beta: float, rhs: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Direct solve of (beta I - alpha Lap) u = rhs by cosine-transform diagonalization."""
    lam = _neumann_eigenvalues(grid.nx, grid.ny, grid.hx, grid.hy)
    return _idct2(_dct2(rhs) / (beta + alpha * lam))


def _pcg(apply_a, rhs, x0, apply_minv, tol_rel, maxiter):
    """Preconditioned conjugate gradients on flattened arrays.

    Returns (x, iterations, relative_residual); raises NonConvergence at the cap.
    """
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    x = np.array(x0, dtype=np.float64, copy=True)
    r = rhs - apply_a(x)
    res = float(np.linalg.norm(r))
    if res <= tol_rel * rhs_norm:
        return x, 0, res / rhs_norm
    z = apply_minv(r)
    p = z.copy()
    rz = float(np.sum(r * z))
    for k in range(1, maxiter + 1):
        ap = apply_a(p)
        pap = float(np.sum(p * ap))
        if pap <= 0.0:
            raise NonConvergence("CG operator lost positive definiteness", iterations=k)
        step = rz / pap
        x += step * p
        r -= step * ap
        res = float(np.linalg.norm(r))
        if res <= tol_rel * rhs_norm:
            return x, k, res / rhs_norm
        z = apply_minv(r)
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergence(
        f"CG did not reach tol {tol_rel:g} in {maxiter} iterations "
        f"(relative residual {res / rhs_norm:.3e})",
        iterations=maxiter,
        residual=res / rhs_norm,
    )


def helmholtz_cg_array(
    alpha: float,
    beta: float,
    rhs: np.ndarray,
    grid: Grid2D,
    tol: float = 1e-12,
    maxiter: int | None = None,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """(beta I - alpha Lap) u = rhs by conjugate gradients (SPD operator)."""
    if maxiter is None:
        maxiter = 10 * (grid.nx + grid.ny)
    hx, hy = grid.hx, grid.hy

    def apply_a(u):
        return beta * u - alpha * lap_array(u, hx, hy)

    lam = _neumann_eigenvalues(grid.nx, grid.ny, hx, hy)
    denom = beta + alpha * lam

    def apply_minv(v):
        return _idct2(_dct2(v) / denom)

    x0 = np.zeros_like(rhs) if x0 is None else x0
    x, _, _ = _pcg(apply_a, rhs, x0, apply_minv, tol, maxiter)
    return x


def spd_reaction_diffusion_solve(
    diag: np.ndarray | float,
    alpha: float,
    rhs: np.ndarray,
    grid: Grid2D,
    x0: np.ndarray | None = None,
    tol: float = 1e-12,
    maxiter: int | None = None,
) -> np.ndarray:
    """Solve (D(x) I - alpha Lap) u = rhs with pointwise D > 0.

    Preconditioned CG with the constant-coefficient cosine-transform inverse
    (mean of D) as preconditioner; warm starts cut the iteration count in
    time-stepping loops.
    """
    diag_arr = np.asarray(diag, dtype=np.float64)
    if diag_arr.ndim == 0:
        if alpha == 0.0:
            return rhs / float(diag_arr)
        return helmholtz_dct_array(alpha, float(diag_arr), rhs, grid)
    dmin = float(diag_arr.min())
    if dmin <= 0.0:
        raise NonConvergence(f"reaction coefficient must be positive, min = {dmin:g}")
    if alpha == 0.0:
        return rhs / diag_arr
    if maxiter is None:
        maxiter = max(400, 10 * (grid.nx + grid.ny))
    hx, hy = grid.hx, grid.hy

    def apply_a(u):
        return diag_arr * u - alpha * lap_array(u, hx, hy)

    dbar = float(diag_arr.mean())
    lam = _neumann_eigenvalues(grid.nx, grid.ny, hx, hy)
    denom = dbar + alpha * lam

    def apply_minv(v):
        return _idct2(_dct2(v) / denom)

    x0 = np.zeros_like(rhs) if x0 is None else x0
    x, _, _ = _pcg(apply_a, rhs, x0, apply_minv, tol, maxiter)
    return x


# ---------------------------------------------------------------------------
# public Field-level operations
# ---------------------------------------------------------------------------


def laplacian_neumann(u: Field) -> Field:
    """Discrete Laplacian with zero-flux boundary; its integral vanishes."""
    return Field(u.grid, lap_array(u.values, u.grid.hx, u.grid.hy))


def integrate(u: Field) -> float:
    """Midpoint-rule integral over the domain."""
    return integrate_array(u.values, u.grid)


def _series_norms(s: FieldSeries) -> dict:
    grid = s.grid
    m = len(s)
    l2_sq = np.array([dot_array(s.values[n], s.values[n], grid) for n in range(m)])
    v_sq = l2_sq + np.array(
        [grad_sq_array(s.values[n], grid.hx, grid.hy) for n in range(m)]
    )
    if m == 1:
        return {
            "L2_Q": 0.0,
            "L2_0T_V": 0.0,
            "C0_0T_H": float(np.sqrt(l2_sq[0])),
        }
    dts = np.diff(s.times)
    # trapezoid in time
    l2q_sq = float(np.sum(0.5 * dts * (l2_sq[:-1] + l2_sq[1:])))
    v_int = float(np.sum(0.5 * dts * (v_sq[:-1] + v_sq[1:])))
    return {
        "L2_Q": float(np.sqrt(max(l2q_sq, 0.0))),
        "L2_0T_V": float(np.sqrt(max(v_int, 0.0))),
        "C0_0T_H": float(np.sqrt(l2_sq.max())),
    }


def norms(u: Field | FieldSeries) -> dict:
    """Discrete norms of a field (space) or a field series (space-time).

    Fields get L2_Omega and Linf_Omega; series get L2_Q, L2_0T_V (H^1 seminorm
    by one-sided differences with Neumann closure) and C0_0T_H.
    """
    if isinstance(u, Field):
        return {
            "L2_Omega": l2_array(u.values, u.grid),
            "Linf_Omega": float(np.max(np.abs(u.values))),
        }
    if isinstance(u, FieldSeries):
        return _series_norms(u)
    raise TypeError(f"norms() expects Field or FieldSeries, got {type(u)!r}")


def solve_helmholtz(
    alpha: float,
    beta: float,
    rhs: Field,
    method: str = "dct",
    tol: float = 1e-12,
    maxiter: int | None = None,
) -> Field:
    """Solve (beta I - alpha Lap) u = rhs with Neumann boundary conditions.

    Both solution paths are exposed so they can cross-check each other:
    'dct' diagonalizes the operator exactly, 'cg' iterates on the SPD system
    and raises NonConvergence past 10 (nx + ny) iterations.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    grid = rhs.grid
    if alpha == 0.0:
        return Field(grid, rhs.values / beta)
    if method == "dct":
        return Field(grid, helmholtz_dct_array(alpha, beta, rhs.values, grid))
    if method == "cg":
        return Field(grid, helmholtz_cg_array(alpha, beta, rhs.values, grid, tol, maxiter))
    raise ValueError(f"unknown method {method!r}")


def vstar_norm(u: Field | np.ndarray, grid: Grid2D | None = None) -> float:
    """Dual-space surrogate norm: sqrt(<u, (I - Lap)^(-1) u>)."""
    if isinstance(u, Field):
        grid = u.grid
        arr = u.values
    else:
        if grid is None:
            raise ValueError("grid required for raw arrays")
        arr = u
    w = helmholtz_dct_array(1.0, 1.0, arr, grid)
    return float(np.sqrt(max(dot_array(arr, w, grid), 0.0)))
