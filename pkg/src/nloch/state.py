"""Forward-in-time solver for the coupled phase-field / nutrient system.

One time step of the first-order stabilized IMEX scheme:

(i)  nutrient solve with the reaction coefficient lagged to the old phase
     field (a single SPD solve),

         (1/dt + B + C f(phi_n)) sigma_new - Lap sigma_new
             = sigma_n/dt + B sigma_S - eta Lap phi_n

(ii) coupled chemical-potential / phase pair, reduced by substitution to one
     SPD system.  With M(x) = tau/dt + S + a(x) and the explicit part
     c = a phi_n - J*phi_n + F'(phi_n) - chi sigma_new, the new potential is
     mu_new = M dphi + c, and w = M dphi solves

         (1 + eps M)/(dt M) w - Lap w
             = (P sigma_new - A) f(phi_n) + eps (mu_n - c)/dt + Lap c .

The relaxation limits eps = 0 and/or tau = 0 run through the same code path
with the corresponding coefficients zeroed, so the limits are code-continuous.
Summing equation (ii) over cells reproduces the discrete mass identity

    int(eps mu + phi)_new - int(eps mu + phi)_old = dt int (P sigma_new - A) f(phi_n)

exactly up to the linear-solve tolerance, because the discrete Laplacian sums
to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainViolation, NonConvergence, RegimeViolation, StepRejected
from .grid import (
    Field,
    Grid2D,
    Trajectory,
    integrate_array,
    lap_array,
    spd_reaction_diffusion_solve,
)
from .kernel import KernelOp, KernelSpec, build_kernel, coercivity_check
from .potentials import (
    PotentialSpec,
    ProliferationSpec,
    eval_F,
    eval_f,
    stabilization_default,
)

__all__ = ["ControlVector", "ControlBounds", "ModelConfig", "step_state", "solve_state"]

# dt halvings attempted on a rejected step before giving up
_MAX_HALVINGS = 8

_LINSOLVE_TOL = 1e-13

CONTROL_NAMES = ("P", "chi", "eta", "C")


@dataclass(frozen=True)
class ControlVector:
    """The four identifiable parameters: proliferation, chemotaxis, active
    transport, and nutrient consumption."""

    P: float = 0.0
    chi: float = 0.0
    eta: float = 0.0
    C: float = 0.0

    def __post_init__(self):
        for name in CONTROL_NAMES:
            if getattr(self, name) < 0:
                raise ValueError(f"control {name} must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array([self.P, self.chi, self.eta, self.C], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "ControlVector":
        p, chi, eta, c = (float(v) for v in arr)
        return cls(P=p, chi=chi, eta=eta, C=c)


@dataclass(frozen=True)
class ControlBounds:
    """The admissible box: componentwise [0, max]."""

    P_max: float = 1.0
    chi_max: float = 1.0
    eta_max: float = 1.0
    C_max: float = 1.0

    def __post_init__(self):
        for name in CONTROL_NAMES:
            if getattr(self, f"{name}_max") < 0:
                raise ValueError(f"bound {name}_max must be nonnegative")

    def upper(self) -> np.ndarray:
        return np.array([self.P_max, self.chi_max, self.eta_max, self.C_max])

    def contains(self, ctrl: ControlVector, slack: float = 1e-12) -> bool:
        arr = ctrl.as_array()
        return bool(np.all(arr >= -slack) and np.all(arr <= self.upper() + slack))

    def clip(self, arr: np.ndarray) -> np.ndarray:
        return np.clip(arr, 0.0, self.upper())


@dataclass
class ModelConfig:
    """Fixed physics: rates, relaxation parameters, kernel, wells, initial data."""

    grid: Grid2D
    kernel: KernelSpec
    potential: PotentialSpec
    prolif: ProliferationSpec
    phi0: Field
    sigma0: Field
    mu0: Field | None = None
    A: float = 0.0           # apoptosis rate
    B: float = 0.0           # nutrient supply/consumption against sigma_S
    sigma_S: float | Field = 1.0
    eps: float = 0.0
    tau: float = 0.0
    S_stab: float | None = None  # None -> max(0, -min F'')
    _kernel_op: KernelOp | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.A < 0 or self.B < 0:
            raise ValueError("apoptosis and consumption rates must be nonnegative")
        if self.eps < 0 or self.tau < 0:
            raise ValueError("relaxation parameters must be nonnegative")
        if self.eps > 0 and self.mu0 is None:
            raise ValueError("eps > 0 requires initial data for the chemical potential")
        if self.potential.family == "logarithmic":
            r0 = float(np.max(np.abs(self.phi0.values)))
            if r0 > self.potential.r_max:
                raise DomainViolation(
                    f"initial phase field reaches |phi| = {r0:.6g}, outside the "
                    f"logarithmic well margin {self.potential.r_max:.6g}"
                )

    @property
    def kernel_op(self) -> KernelOp:
        if self._kernel_op is None or not self._kernel_op.grid.compatible(self.grid):
            self._kernel_op = build_kernel(self.kernel, self.grid)
        return self._kernel_op

    @property
    def stabilization(self) -> float:
        if self.S_stab is not None:
            return self.S_stab
        return stabilization_default(self.potential)

    @property
    def regime(self) -> str:
        if self.eps > 0 and self.tau > 0:
            return "full_eps_tau"
        if self.eps == 0 and self.tau > 0:
            return "eps_zero"
        if self.eps > 0 and self.tau == 0:
            return "tau_zero"
        return "joint_zero"

    def sigma_s_values(self) -> np.ndarray:
        if isinstance(self.sigma_S, Field):
            return self.sigma_S.values
        return np.full(self.grid.shape, float(self.sigma_S))

    def with_relaxation(self, eps: float | None = None, tau: float | None = None) -> "ModelConfig":
        kwargs = {"_kernel_op": None}
        if eps is not None:
            kwargs["eps"] = eps
        if tau is not None:
            kwargs["tau"] = tau
        new = replace(self, **kwargs)
        new._kernel_op = self._kernel_op  # spatial grid unchanged
        return new

    def with_time_refinement(self, factor: int) -> "ModelConfig":
        """Same problem with dt/factor; spatial fields carry over."""
        g = self.grid.refined_time(factor)
        new = replace(self, grid=g, _kernel_op=None)
        new._kernel_op = self._kernel_op
        return new

    def coercivity(self):
        return coercivity_check(self.kernel_op, self.potential)

    def tau_zero_smallness(self, ctrl: ControlVector) -> dict:
        """The tau -> 0 coefficient condition: (chi+eta+4 c_a chi)^2 < 8 c_a C0 + 4 chi eta."""
        rep = self.coercivity()
        lhs = (ctrl.chi + ctrl.eta + 4.0 * rep.c_a * ctrl.chi) ** 2
        rhs = 8.0 * rep.c_a * rep.c0 + 4.0 * ctrl.chi * ctrl.eta
        return {"lhs": lhs, "rhs": rhs, "ok": bool(lhs < rhs)}


def _step_arrays(cfg, ctrl, phi_n, mu_n, sigma_n, dt, work):
    """One IMEX step on raw arrays; returns (phi, mu, sigma, dt*source integral)."""
    grid = cfg.grid
    op = cfg.kernel_op
    a = op.a_field
    S = work["S"]
    eps, tau = cfg.eps, cfg.tau

    f_n = eval_f(cfg.prolif, phi_n, 0)

    # (i) nutrient step, reaction coefficient lagged to phi_n
    diag_sigma = (1.0 / dt + cfg.B) + ctrl.C * f_n
    rhs_sigma = sigma_n / dt + cfg.B * work["sigma_s"]
    if ctrl.eta != 0.0:
        rhs_sigma = rhs_sigma - ctrl.eta * lap_array(phi_n, grid.hx, grid.hy)
    try:
        sigma_new = spd_reaction_diffusion_solve(
            diag_sigma, 1.0, rhs_sigma, grid,
            x0=work.get("sigma_guess", sigma_n), tol=_LINSOLVE_TOL,
        )
    except NonConvergence as exc:
        raise StepRejected(f"nutrient solve diverged: {exc}") from exc

    # (ii) reduced phase / chemical-potential step
    try:
        fprime_pot = eval_F(cfg.potential, phi_n, 1)
    except DomainViolation as exc:
        raise StepRejected(f"separation lost before the step: {exc}") from exc
    conv_phi = op.apply(phi_n)
    m_coef = tau / dt + S + a
    if float(m_coef.min()) <= 0.0:
        raise StepRejected("phase-step operator lost positivity (tau/dt + S + a <= 0)")
    c_explicit = a * phi_n - conv_phi + fprime_pot - ctrl.chi * sigma_new
    source = (ctrl.P * sigma_new - cfg.A) * f_n
    rhs_w = source + lap_array(c_explicit, grid.hx, grid.hy)
    if eps > 0.0:
        rhs_w = rhs_w + (eps / dt) * (mu_n - c_explicit)
    diag_w = (1.0 + eps * m_coef) / (dt * m_coef)
    try:
        w = spd_reaction_diffusion_solve(
            diag_w, 1.0, rhs_w, grid, x0=work.get("w_guess"), tol=_LINSOLVE_TOL,
        )
    except NonConvergence as exc:
        raise StepRejected(f"phase solve diverged: {exc}") from exc

    dphi = w / m_coef
    phi_new = phi_n + dphi
    mu_new = m_coef * dphi + c_explicit

    if not (np.all(np.isfinite(phi_new)) and np.all(np.isfinite(mu_new)) and np.all(np.isfinite(sigma_new))):
        raise StepRejected("step produced non-finite values")
    if cfg.potential.family == "logarithmic":
        worst = float(np.max(np.abs(phi_new)))
        if worst > cfg.potential.r_max:
            raise StepRejected(
                f"separation violated: |phi| reached {worst:.6g} > {cfg.potential.r_max:.6g}"
            )

    work["sigma_guess"] = sigma_new
    work["w_guess"] = w
    src_integral = dt * integrate_array(source, grid)
    return phi_new, mu_new, sigma_new, src_integral


def step_state(cfg: ModelConfig, ctrl: ControlVector, phi: Field, mu: Field | None, sigma: Field):
    """Advance the state one time step; returns (phi, mu, sigma) Fields.

    mu may be None in the eps = 0 regimes (it is then purely diagnostic and
    reconstructed from the algebraic relation).
    """
    work = {
        "S": cfg.stabilization,
        "sigma_s": cfg.sigma_s_values(),
    }
    mu_vals = mu.values if mu is not None else np.zeros(cfg.grid.shape)
    phi1, mu1, sigma1, _ = _step_arrays(
        cfg, ctrl, phi.values, mu_vals, sigma.values, cfg.grid.dt, work
    )
    return Field(cfg.grid, phi1), Field(cfg.grid, mu1), Field(cfg.grid, sigma1)


def _advance_with_substeps(cfg, ctrl, phi, mu, sigma, dt, work, step_index):
    """Advance by dt, halving the local step on rejection (up to the cap)."""
    try:
        return _step_arrays(cfg, ctrl, phi, mu, sigma, dt, work)
    except StepRejected as first:
        last = first
        for k in range(1, _MAX_HALVINGS + 1):
            sub = 2**k
            dt_sub = dt / sub
            p, m, s = phi, mu, sigma
            acc = 0.0
            try:
                for _ in range(sub):
                    p, m, s, src = _step_arrays(cfg, ctrl, p, m, s, dt_sub, work)
                    acc += src
                return p, m, s, acc
            except StepRejected as exc:
                last = exc
                continue
        raise StepRejected(
            f"step {step_index} still rejected after {_MAX_HALVINGS} halvings: {last}",
            step=step_index,
            diagnostics={"dt": dt, "halvings": _MAX_HALVINGS},
        ) from last


def solve_state(cfg: ModelConfig, ctrl: ControlVector) -> Trajectory:
    """Solve the state system over [0, T]; returns the (phi, mu, sigma) trajectory.

    Regime prerequisites: eps = 0 (alone or jointly with tau = 0) requires a
    vanishing active-transport coefficient; the tau = 0 coefficient smallness
    condition is evaluated and attached to the diagnostics rather than
    enforced.  Rejected steps are retried on halved local steps (up to 8
    halvings) without changing the snapshot grid.
    """
    grid = cfg.grid
    if cfg.eps == 0.0 and ctrl.eta != 0.0:
        raise RegimeViolation(
            "the eps = 0 regimes require a vanishing active-transport coefficient (eta = 0)"
        )
    regime_info = {"regime": cfg.regime}
    if cfg.tau == 0.0:
        regime_info["tau_zero_smallness"] = cfg.tau_zero_smallness(ctrl)

    nt = grid.nt
    phi = np.empty((nt + 1,) + grid.shape)
    mu = np.empty_like(phi)
    sigma = np.empty_like(phi)
    phi[0] = cfg.phi0.values
    sigma[0] = cfg.sigma0.values
    if cfg.mu0 is not None:
        mu[0] = cfg.mu0.values
    else:
        # eps = 0: no initial potential is prescribed; record the algebraic
        # relation at t = 0 as a diagnostic value
        op = cfg.kernel_op
        mu[0] = (
            op.a_field * phi[0]
            - op.apply(phi[0])
            + eval_F(cfg.potential, phi[0], 1)
            - ctrl.chi * sigma[0]
        )

    work = {"S": cfg.stabilization, "sigma_s": cfg.sigma_s_values()}
    diagnostics = [regime_info]
    mass = integrate_array(cfg.eps * mu[0] + phi[0], grid)
    diagnostics.append(
        {
            "n": 0,
            "t": 0.0,
            "mass": mass,
            "source": 0.0,
            "mass_defect": 0.0,
            "phi_linf": float(np.max(np.abs(phi[0]))),
            "sigma_min": float(sigma[0].min()),
            "sigma_max": float(sigma[0].max()),
        }
    )
    for n in range(nt):
        phi[n + 1], mu[n + 1], sigma[n + 1], src = _advance_with_substeps(
            cfg, ctrl, phi[n], mu[n], sigma[n], grid.dt, work, n
        )
        new_mass = integrate_array(cfg.eps * mu[n + 1] + phi[n + 1], grid)
        diagnostics.append(
            {
                "n": n + 1,
                "t": (n + 1) * grid.dt,
                "mass": new_mass,
                "source": src,
                "mass_defect": new_mass - mass - src,
                "phi_linf": float(np.max(np.abs(phi[n + 1]))),
                "sigma_min": float(sigma[n + 1].min()),
                "sigma_max": float(sigma[n + 1].max()),
            }
        )
        mass = new_mass

    return Trajectory(
        grid=grid,
        times=grid.times(),
        roles=("phi", "mu", "sigma"),
        data={"phi": phi, "mu": mu, "sigma": sigma},
        diagnostics=diagnostics,
    )
