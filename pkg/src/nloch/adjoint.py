"""Tangent (linearized) and backward adjoint solvers.

The tangent solver is the exact Jacobian action of the discrete forward map:
every coefficient is frozen at the same time level the forward step used, so
directional derivatives of the discrete solution are reproduced to roundoff
and the Taylor remainder of the nonlinear solve is cleanly second order.

The adjoint solver discretizes the continuous backward system on the mirror
of the forward stencil (optimize-then-discretize).  Spatial operators are
self-adjoint (symmetric Laplacian, even kernel, pointwise coefficients), so
the only deviation from the exact transpose of the forward map is the time
alignment of coefficients and terminal data, which is O(dt); the duality and
finite-difference gradient checks quantify exactly this gap.

Backward step (level m from m+1), with H_d = tau/dt + S and W = H_d + a + F''(phi_m):

    (p_m - p_m1)/dt + H_d (q_m - q_m1) + (a + F''(phi_m)) q_m - J*q_m1 = Src_m
    q_m = (eps/dt)(p_m - p_m1) - Lap p_m
    (1/dt + B + C f(phi_m)) r_m - Lap r_m = r_m1/dt + P f(phi_m) p_m + chi q_m

which reduces to one SPD solve for p_m: ((1 + eps W)/(W dt)) p_m - Lap p_m = rhs/W.
The coercivity bound a_star + F'' >= C0 > 0 keeps W positive in every regime,
including tau = eps = 0 where no stabilization helps.

Regimes differ only in the terminal data:

    full:        p(T) = 0,  q(T) = beta_Omega (phi(T) - phi_Omega) / tau
    eps = 0:     (I - tau Lap) p(T) = beta_Omega (phi(T) - phi_Omega),  q = -Lap p
    tau = 0:     p(T) = 0 (requires beta_Omega = 0), q(T) treated as 0
    joint:       p(T) = beta_Omega (phi(T) - phi_Omega),  q = -Lap p
    adapted joint (eps,tau > 0):  p(T) = beta_Omega (phi(T) - phi_Omega),
                                  q(T) = (eps/tau) beta_Omega mu(T)

and the tau-adapted problem adds the tracking correction (phi - phi_ref) to
the forcing of the first equation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, RegimeViolation, StepRejected
from .grid import (
    FieldSeries,
    Trajectory,
    dot_array,
    helmholtz_dct_array,
    lap_array,
    spd_reaction_diffusion_solve,
)
from .potentials import eval_F, eval_f
from .state import ControlVector, ModelConfig

__all__ = ["Increment", "AdjointRegime", "solve_tangent", "solve_adjoint", "tracking_gradient"]

_LINSOLVE_TOL = 1e-13

_KINDS = ("full_eps_tau", "eps_zero", "tau_zero", "joint_zero")
_ADAPTED = (None, "eps", "tau", "joint")


@dataclass(frozen=True)
class Increment:
    """A direction in control space."""

    hP: float = 0.0
    hchi: float = 0.0
    heta: float = 0.0
    hC: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.hP, self.hchi, self.heta, self.hC])

    @classmethod
    def from_array(cls, arr) -> "Increment":
        a, b, c, d = (float(v) for v in arr)
        return cls(a, b, c, d)

    def scaled(self, s: float) -> "Increment":
        return Increment(s * self.hP, s * self.hchi, s * self.heta, s * self.hC)


@dataclass(frozen=True)
class AdjointRegime:
    """Which backward system to solve, and with which adapted corrections.

    Adapted problems anchor at a fixed limit-problem minimizer: ``ctrl_ref``
    is that anchor control, and the tau-adapted variant additionally tracks
    its reference phase trajectory ``phi_ref`` in the forcing.
    """

    kind: str = "full_eps_tau"
    adapted: str | None = None
    phi_ref: FieldSeries | None = None  # tau-adapted forcing reference
    ctrl_ref: tuple | None = None       # anchor control of the adapted problem

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise RegimeViolation(f"unknown adjoint regime {self.kind!r}")
        if self.adapted not in _ADAPTED:
            raise RegimeViolation(f"unknown adaptation {self.adapted!r}")
        if self.adapted is not None and self.kind != "full_eps_tau":
            raise RegimeViolation("adapted corrections only apply at eps, tau > 0")
        if self.adapted == "tau" and self.phi_ref is None:
            raise RegimeViolation("tau-adapted adjoint needs the reference trajectory")
        if self.adapted is not None and self.ctrl_ref is None:
            raise RegimeViolation("adapted problems need the anchor control")
        if self.ctrl_ref is not None:
            object.__setattr__(self, "ctrl_ref", tuple(float(v) for v in self.ctrl_ref))

    @property
    def eta_masked(self) -> bool:
        """Is the active-transport component frozen in this regime?"""
        return self.kind in ("eps_zero", "joint_zero") or self.adapted in ("eps", "joint")

    @classmethod
    def for_config(cls, cfg: ModelConfig, adapted: str | None = None, phi_ref=None, ctrl_ref=None):
        return cls(kind=cfg.regime, adapted=adapted, phi_ref=phi_ref, ctrl_ref=ctrl_ref)

    def validate(self, cfg: ModelConfig, ctrl: ControlVector, cost) -> None:
        if self.kind != cfg.regime:
            raise RegimeViolation(
                f"adjoint regime {self.kind!r} does not match the state regime {cfg.regime!r}"
            )
        if self.kind in ("eps_zero", "joint_zero") and ctrl.eta != 0.0:
            raise RegimeViolation("the eps = 0 adjoint regimes require eta = 0")
        if self.kind == "tau_zero" and cost.beta_Omega != 0.0:
            raise RegimeViolation(
                "tau = 0 admits no terminal tracking: beta_Omega must vanish"
            )
        if self.adapted == "tau" and cost.beta_Omega != 0.0:
            raise RegimeViolation("tau-adapted problems require beta_Omega = 0")
        if self.adapted in ("eps", "joint") and ctrl.eta != 0.0:
            raise RegimeViolation("eps- and joint-adapted problems require eta = 0")
        if self.adapted == "joint" and cost.beta_Omega > 0.0 and cost.phi_Omega is None:
            raise RegimeViolation("joint-adapted problem needs the terminal target")


def solve_tangent(state: Trajectory, cfg: ModelConfig, ctrl: ControlVector, h: Increment) -> Trajectory:
    """Linearized trajectory (xi, nu, zeta) for the direction h, zero initial data.

    Only defined in the full regime (eps, tau > 0), where the control-to-state
    map is differentiable.
    """
    if cfg.eps <= 0.0 or cfg.tau <= 0.0:
        raise RegimeViolation("the tangent solver requires eps > 0 and tau > 0")
    grid = cfg.grid
    if not grid.compatible(state.grid) or state.nt != grid.nt:
        raise RegimeViolation("state trajectory does not match the configuration grid")
    op = cfg.kernel_op
    a = op.a_field
    S = cfg.stabilization
    dt = grid.dt
    eps, tau = cfg.eps, cfg.tau
    nt = grid.nt
    phi_bar = state["phi"]
    sigma_bar = state["sigma"]

    xi = np.zeros((nt + 1,) + grid.shape)
    nu = np.zeros_like(xi)
    zeta = np.zeros_like(xi)

    m_coef = tau / dt + S + a
    diag_w = (1.0 + eps * m_coef) / (dt * m_coef)
    zeta_guess = None
    w_guess = None
    for n in range(nt):
        f_n = eval_f(cfg.prolif, phi_bar[n], 0)
        fp_n = eval_f(cfg.prolif, phi_bar[n], 1)
        fpp_pot = eval_F(cfg.potential, phi_bar[n], 2)
        s_new = sigma_bar[n + 1]

        # zeta step (mirrors the nutrient step: reaction lagged, transport explicit)
        diag_zeta = (1.0 / dt + cfg.B) + ctrl.C * f_n
        rhs_zeta = zeta[n] / dt - ctrl.C * s_new * fp_n * xi[n] - h.hC * s_new * f_n
        if ctrl.eta != 0.0 or h.heta != 0.0:
            rhs_zeta = rhs_zeta - lap_array(
                ctrl.eta * xi[n] + h.heta * phi_bar[n], grid.hx, grid.hy
            )
        try:
            zeta[n + 1] = spd_reaction_diffusion_solve(
                diag_zeta, 1.0, rhs_zeta, grid, x0=zeta_guess, tol=_LINSOLVE_TOL
            )
        except NonConvergence as exc:
            raise StepRejected(f"tangent nutrient solve diverged at step {n}: {exc}") from exc
        zeta_guess = zeta[n + 1]

        # xi / nu step (exact linearization of the reduced phase step)
        c_lin = a * xi[n] - op.apply(xi[n]) + fpp_pot * xi[n] - ctrl.chi * zeta[n + 1] - h.hchi * s_new
        d_source = (
            ctrl.P * zeta[n + 1] * f_n
            + h.hP * s_new * f_n
            + (ctrl.P * s_new - cfg.A) * fp_n * xi[n]
        )
        rhs_w = d_source + lap_array(c_lin, grid.hx, grid.hy) + (eps / dt) * (nu[n] - c_lin)
        try:
            w = spd_reaction_diffusion_solve(
                diag_w, 1.0, rhs_w, grid, x0=w_guess, tol=_LINSOLVE_TOL
            )
        except NonConvergence as exc:
            raise StepRejected(f"tangent phase solve diverged at step {n}: {exc}") from exc
        w_guess = w
        dxi = w / m_coef
        xi[n + 1] = xi[n] + dxi
        nu[n + 1] = m_coef * dxi + c_lin

    return Trajectory(
        grid=grid,
        times=state.times.copy(),
        roles=("xi", "nu", "zeta"),
        data={"xi": xi, "nu": nu, "zeta": zeta},
    )


def _tracked_terminal(state, cfg, cost, regime):
    """Literal continuous terminal data: eps p(T) = 0, (p + tau q)(T) = terminal misfit.

    Resolves the backward eps*tau-layer explicitly when dt permits; the
    stored values are exactly the printed conditions of each regime.
    """
    grid = cfg.grid
    shape = grid.shape
    phi_t = state["phi"][-1]
    p_t = np.zeros(shape)
    q_t = np.zeros(shape)
    if cost.beta_Omega > 0.0:
        misfit = cost.terminal_misfit(phi_t)
        if regime.kind == "full_eps_tau":
            q_t = misfit / cfg.tau
        elif regime.kind == "eps_zero":
            p_t = helmholtz_dct_array(cfg.tau, 1.0, misfit, grid)
            q_t = -lap_array(p_t, grid.hx, grid.hy)
        elif regime.kind == "joint_zero":
            p_t = misfit
            q_t = -lap_array(p_t, grid.hx, grid.hy)
        # tau_zero is excluded by validate(): beta_Omega must be 0 there
    r_t = np.zeros(shape)
    return p_t, q_t, r_t


def _landed_terminal(state, cfg, ctrl, cost, regime):
    """Coupled terminal slab: the L-stable landing of the continuous data.

    When dt does not resolve the eps*tau relaxation layer behind t = T, the
    first-order-consistent terminal values are the solution of the coupled
    block (the backward step's own discretization applied to the final slab):

        p_T + (tau + (S + a) dt) q_T = beta_Om (phi(T) - phi_Om) + dt extras
        q_T = (eps/dt) p_T - Lap p_T
        (1/dt + B + C f) r_T - Lap r_T = P f p_T + chi q_T

    As dt -> 0 these approach the limit-regime conditions (the outer branch);
    the dt-weighted extras carry the final slab of the space-time tracking.
    """
    grid = cfg.grid
    dt = grid.dt
    phi_t = state["phi"][-1]
    rhs_t = cost.terminal_misfit(phi_t) + dt * cost.q_misfit(phi_t, grid.nt)
    if regime.adapted == "tau":
        rhs_t = rhs_t + dt * (phi_t - regime.phi_ref.values[-1])
    coef_t = cfg.tau + (cfg.stabilization + cfg.kernel_op.a_field) * dt
    if not np.any(rhs_t):
        p_t = np.zeros(grid.shape)
        q_t = np.zeros(grid.shape)
    else:
        diag_t = (1.0 + coef_t * cfg.eps / dt) / coef_t
        p_t = spd_reaction_diffusion_solve(diag_t, 1.0, rhs_t / coef_t, grid, tol=_LINSOLVE_TOL)
        q_t = (cfg.eps / dt) * p_t - lap_array(p_t, grid.hx, grid.hy)
    return p_t, q_t


def _terminal_r_lift(p_t, q_t, state, cfg, ctrl):
    """Terminal value of r from the coupled block (carries the final-slab coupling)."""
    grid = cfg.grid
    if not (np.any(p_t) or np.any(q_t)):
        return np.zeros(grid.shape)
    f_t = eval_f(cfg.prolif, state["phi"][grid.nt - 1], 0)
    diag = (1.0 / grid.dt + cfg.B) + ctrl.C * f_t
    rhs = ctrl.P * f_t * p_t + ctrl.chi * q_t
    return spd_reaction_diffusion_solve(diag, 1.0, rhs, grid, tol=_LINSOLVE_TOL)


def solve_adjoint(
    state: Trajectory,
    cfg: ModelConfig,
    ctrl: ControlVector,
    cost,
    regime: AdjointRegime | None = None,
    terminal: str = "landed",
) -> Trajectory:
    """Backward sweep for the adjoint triple (p, q, r).

    ``terminal`` selects how the final-time data enter the sweep: "landed"
    (default) solves the coupled terminal slab, which is the first-order
    consistent treatment when dt does not resolve the eps*tau terminal layer
    and is what the reduced-gradient pairings assume; "tracked" stores the
    literal pointwise conditions (p(T) = 0, q(T) = misfit/tau in the full
    regime) and resolves the layer explicitly, which is the right tool when
    dt is small against eps*tau.  The adapted joint problem carries its own
    compatible terminal data and uses them exactly in both modes.
    """
    if regime is None:
        regime = AdjointRegime.for_config(cfg)
    regime.validate(cfg, ctrl, cost)
    if terminal not in ("landed", "tracked"):
        raise ValueError(f"unknown terminal mode {terminal!r}")
    grid = cfg.grid
    if not grid.compatible(state.grid) or state.nt != grid.nt:
        raise RegimeViolation("state trajectory does not match the configuration grid")
    op = cfg.kernel_op
    a = op.a_field
    S = cfg.stabilization
    dt = grid.dt
    eps, tau = cfg.eps, cfg.tau
    nt = grid.nt
    phi_bar = state["phi"]
    sigma_bar = state["sigma"]
    phi_ref = regime.phi_ref.values if regime.adapted == "tau" else None

    p = np.zeros((nt + 1,) + grid.shape)
    q = np.zeros_like(p)
    r = np.zeros_like(p)
    if regime.adapted == "joint":
        # the adapted terminal data are compatible by construction: no layer
        if cost.beta_Omega > 0.0:
            p[nt] = cost.terminal_misfit(phi_bar[-1])
            q[nt] = (eps / tau) * cost.beta_Omega * state["mu"][-1]
        if terminal == "landed":
            r[nt] = _terminal_r_lift(p[nt], q[nt], state, cfg, ctrl)
    elif terminal == "landed":
        p[nt], q[nt] = _landed_terminal(state, cfg, ctrl, cost, regime)
        r[nt] = _terminal_r_lift(p[nt], q[nt], state, cfg, ctrl)
    else:
        p[nt], q[nt], r[nt] = _tracked_terminal(state, cfg, cost, regime)

    h_d = tau / dt + S
    p_guess = None
    r_guess = None
    for m in range(nt - 1, -1, -1):
        fp_m = eval_f(cfg.prolif, phi_bar[m], 1)
        fpp_m = eval_F(cfg.potential, phi_bar[m], 2)
        s_right = sigma_bar[m + 1]

        # the well curvature splits by sign: the (possibly unbounded) convex
        # part is implicit, the concave part is explicit and bounded by the
        # coercivity margin a + F'' >= C0, so the sweep is stable in every
        # regime including tau = eps = 0
        fpp_pos = np.maximum(fpp_m, 0.0)
        fpp_neg = fpp_m - fpp_pos
        w_coef = h_d + a + fpp_pos

        src = cost.q_misfit(phi_bar[m], m)
        if phi_ref is not None:
            src = src + (phi_bar[m] - phi_ref[m])
        if ctrl.eta != 0.0:
            src = src - ctrl.eta * lap_array(r[m + 1], grid.hx, grid.hy)
        src = src - ctrl.C * s_right * fp_m * r[m + 1]
        src = src + (ctrl.P * s_right - cfg.A) * fp_m * p[m + 1]

        rhs = (
            src
            + p[m + 1] / dt
            + h_d * q[m + 1]
            + op.apply(q[m + 1])
            - fpp_neg * q[m + 1]
            + w_coef * (eps / dt) * p[m + 1]
        )
        diag_p = (1.0 + eps * w_coef) / (w_coef * dt)
        try:
            p[m] = spd_reaction_diffusion_solve(
                diag_p, 1.0, rhs / w_coef, grid, x0=p_guess if p_guess is not None else p[m + 1],
                tol=_LINSOLVE_TOL,
            )
        except NonConvergence as exc:
            raise StepRejected(f"adjoint phase solve diverged at step {m}: {exc}") from exc
        p_guess = p[m]
        q[m] = (eps / dt) * (p[m] - p[m + 1]) - lap_array(p[m], grid.hx, grid.hy)

        # the nutrient multiplier pairs with the forward step that produced
        # level m, whose reaction coefficient was lagged to level m-1
        f_left = eval_f(cfg.prolif, phi_bar[m - 1] if m > 0 else phi_bar[0], 0)
        diag_r = (1.0 / dt + cfg.B) + ctrl.C * f_left
        rhs_r = r[m + 1] / dt + ctrl.P * f_left * p[m] + ctrl.chi * q[m]
        try:
            r[m] = spd_reaction_diffusion_solve(
                diag_r, 1.0, rhs_r, grid, x0=r_guess if r_guess is not None else r[m + 1],
                tol=_LINSOLVE_TOL,
            )
        except NonConvergence as exc:
            raise StepRejected(f"adjoint nutrient solve diverged at step {m}: {exc}") from exc
        r_guess = r[m]

    return Trajectory(
        grid=grid,
        times=state.times.copy(),
        roles=("p", "q", "r"),
        data={"p": p, "q": q, "r": r},
        diagnostics=[{"terminal": terminal, "regime": regime.kind, "adapted": regime.adapted}],
    )


def tracking_gradient(
    state: Trajectory,
    adjoint: Trajectory,
    cfg: ModelConfig,
    s_chi: float = 1.0,
) -> np.ndarray:
    """Tracking part of the reduced gradient: the four space-time pairings.

    The quadrature pairs the adjoint at the right end of each step with the
    state coefficients exactly as the forward step consumed them (sigma at the
    new level, the phase-field coefficients at the old level), which is the
    alignment the transposed step would produce.  One exception: if the
    adjoint was solved with "tracked" terminal data, q carries the pointwise
    terminal layer q(T) = beta_Omega (phi(T) - phi_Omega)/tau whose analytic
    pairing contribution is only O(eps); lumping an unresolved layer level
    with weight dt would overcount it by dt/(eps tau), so the q-pairing then
    uses the left (outer) levels.
    """
    grid = cfg.grid
    dt = grid.dt
    phi_bar = state["phi"]
    sigma_bar = state["sigma"]
    p, q, r = adjoint["p"], adjoint["q"], adjoint["r"]
    tracked = bool(adjoint.diagnostics) and adjoint.diagnostics[0].get("terminal") == "tracked"
    g = np.zeros(4)
    for n in range(1, grid.nt + 1):
        f_left = eval_f(cfg.prolif, phi_bar[n - 1], 0)
        sf = sigma_bar[n] * f_left
        lap_phi_left = lap_array(phi_bar[n - 1], grid.hx, grid.hy)
        g[0] += dt * dot_array(sf, p[n], grid)
        g[1] += dt * dot_array(sigma_bar[n], q[n - 1 if tracked else n], grid) * s_chi
        g[2] -= dt * dot_array(lap_phi_left, r[n], grid)
        g[3] -= dt * dot_array(sf, r[n], grid)
    return g
