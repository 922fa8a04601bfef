"""Tracking cost, reduced gradient, projected-gradient identification, twins.

The reduced gradient combines the adjoint pairings with the Tikhonov terms:

    g_P   =  int_Q sigma f(phi) p       + alpha_P   (P - P_star)
    g_chi =  s_chi int_Q sigma q        + alpha_chi (chi - chi_star)
    g_eta = -int_Q (Lap phi) r          + alpha_eta (eta - eta_star)
    g_C   = -int_Q sigma f(phi) r       + alpha_C   (C - C_star)

The chemotaxis pairing sign s_chi is fixed once by the finite-difference
calibration test (shipped default +1, see tests/test_calibration.py); adapted
problems add the anchor distance (ctrl - ctrl_ref) on their free components.

The optimizer is projected gradient with a safeguarded Barzilai-Borwein step
and Armijo backtracking along the projection arc; its stationary points are
exactly the points satisfying the box variational inequality, which the
audit samples directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import AdjointRegime, solve_adjoint, tracking_gradient
from .errors import MaxIterations, RegimeViolation, ShapeMismatch
from .grid import Field, FieldSeries, Trajectory, dot_array
from .state import ControlBounds, ControlVector, ModelConfig, solve_state

__all__ = [
    "CostSpec",
    "IdentifyOptions",
    "IdentifyReport",
    "eval_cost",
    "eval_cost_parts",
    "reduced_gradient",
    "project_box",
    "identify",
    "twin_experiment",
    "vi_audit",
    "duality_check",
    "fd_gradient",
]

DEFAULT_S_CHI = 1.0


@dataclass
class CostSpec:
    """Tracking targets, weights, and parameter priors."""

    beta_Omega: float = 0.0
    beta_Q: float = 0.0
    alpha_P: float = 0.0
    alpha_chi: float = 0.0
    alpha_eta: float = 0.0
    alpha_C: float = 0.0
    P_star: float = 0.0
    chi_star: float = 0.0
    eta_star: float = 0.0
    C_star: float = 0.0
    phi_Omega: Field | None = None
    phi_Q: Field | FieldSeries | None = None

    def __post_init__(self):
        weights = (
            self.beta_Omega, self.beta_Q,
            self.alpha_P, self.alpha_chi, self.alpha_eta, self.alpha_C,
        )
        if any(w < 0 for w in weights):
            raise ValueError("cost weights must be nonnegative")
        if all(w == 0 for w in weights):
            raise ValueError("at least one cost weight must be positive")
        if any(v < 0 for v in (self.P_star, self.chi_star, self.eta_star, self.C_star)):
            raise ValueError("priors must be nonnegative")
        if self.beta_Omega > 0 and self.phi_Omega is None:
            raise ValueError("beta_Omega > 0 requires a terminal target")
        if self.beta_Q > 0 and self.phi_Q is None:
            raise ValueError("beta_Q > 0 requires a space-time target")

    def alphas(self) -> np.ndarray:
        return np.array([self.alpha_P, self.alpha_chi, self.alpha_eta, self.alpha_C])

    def priors(self) -> np.ndarray:
        return np.array([self.P_star, self.chi_star, self.eta_star, self.C_star])

    def phi_q_values(self, n: int) -> np.ndarray | None:
        if self.phi_Q is None:
            return None
        if isinstance(self.phi_Q, FieldSeries):
            return self.phi_Q.values[n]
        return self.phi_Q.values

    def with_times(self, times: np.ndarray, grid=None) -> "CostSpec":
        """The same cost with the space-time target resampled onto new times."""
        if not isinstance(self.phi_Q, FieldSeries):
            return self
        return replace(self, phi_Q=self.phi_Q.interpolated(times, grid))

    def q_misfit(self, phi_values: np.ndarray, n: int) -> np.ndarray:
        """beta_Q (phi^n - phi_Q^n), zeros when the weight vanishes."""
        if self.beta_Q == 0.0:
            return np.zeros_like(phi_values)
        target = self.phi_q_values(n)
        if target.shape != phi_values.shape:
            raise ShapeMismatch("space-time target does not match the state shape")
        return self.beta_Q * (phi_values - target)

    def terminal_misfit(self, phi_t: np.ndarray) -> np.ndarray:
        if self.beta_Omega == 0.0:
            return np.zeros_like(phi_t)
        if self.phi_Omega.values.shape != phi_t.shape:
            raise ShapeMismatch("terminal target does not match the state shape")
        return self.beta_Omega * (phi_t - self.phi_Omega.values)


def eval_cost_parts(
    traj: Trajectory,
    ctrl: ControlVector,
    cost: CostSpec,
    regime: AdjointRegime | None = None,
    eps: float | None = None,
) -> dict:
    """All cost contributions; 'total' is the (possibly adapted) value.

    The space-time quadrature is the right-endpoint rule over the snapshot
    levels, matching the adjoint pairings exactly; the joint-adapted terminal
    correction (eps mu(T), beta_Omega (phi(T) - phi_Omega)) is sign-indefinite
    and reported separately.
    """
    grid = traj.grid
    dt = grid.dt
    phi = traj["phi"]
    parts = {"tracking_Omega": 0.0, "tracking_Q": 0.0, "tikhonov": 0.0,
             "adapted_penalty": 0.0, "adapted_Q": 0.0, "adapted_terminal": 0.0}
    if cost.beta_Omega > 0.0:
        m = cost.phi_Omega.values
        if m.shape != phi[-1].shape:
            raise ShapeMismatch("terminal target does not match the state shape")
        d = phi[-1] - m
        parts["tracking_Omega"] = 0.5 * cost.beta_Omega * dot_array(d, d, grid)
    if cost.beta_Q > 0.0:
        acc = 0.0
        for n in range(1, traj.nt + 1):
            d = phi[n] - cost.phi_q_values(n)
            acc += dt * dot_array(d, d, grid)
        parts["tracking_Q"] = 0.5 * cost.beta_Q * acc
    dctrl = ctrl.as_array() - cost.priors()
    parts["tikhonov"] = 0.5 * float(np.sum(cost.alphas() * dctrl * dctrl))

    if regime is not None and regime.adapted is not None:
        ref = np.asarray(regime.ctrl_ref)
        dref = ctrl.as_array() - ref
        if regime.adapted in ("eps", "joint"):
            free = np.array([1.0, 1.0, 0.0, 1.0])  # eta is frozen at zero
        else:
            free = np.ones(4)
        parts["adapted_penalty"] = 0.5 * float(np.sum(free * dref * dref))
        if regime.adapted == "tau":
            acc = 0.0
            for n in range(1, traj.nt + 1):
                d = phi[n] - regime.phi_ref.values[n]
                acc += dt * dot_array(d, d, grid)
            parts["adapted_Q"] = 0.5 * acc
        if regime.adapted == "joint" and cost.beta_Omega > 0.0:
            if eps is None:
                raise ValueError("joint-adapted cost needs the eps in force")
            parts["adapted_terminal"] = eps * dot_array(
                traj["mu"][-1], cost.terminal_misfit(phi[-1]), grid
            )
    parts["total"] = sum(v for k, v in parts.items() if k != "total")
    return parts


def eval_cost(
    traj: Trajectory,
    ctrl: ControlVector,
    cost: CostSpec,
    regime: AdjointRegime | None = None,
    eps: float | None = None,
) -> float:
    return eval_cost_parts(traj, ctrl, cost, regime, eps=eps)["total"]


def reduced_gradient(
    state: Trajectory,
    adjoint: Trajectory,
    ctrl: ControlVector,
    cost: CostSpec,
    cfg: ModelConfig,
    regime: AdjointRegime | None = None,
    s_chi: float = DEFAULT_S_CHI,
) -> np.ndarray:
    """Gradient of the reduced (possibly adapted) cost at ctrl."""
    g = tracking_gradient(state, adjoint, cfg, s_chi=s_chi)
    g += cost.alphas() * (ctrl.as_array() - cost.priors())
    if regime is not None and regime.adapted is not None:
        ref = np.asarray(regime.ctrl_ref)
        g += ctrl.as_array() - ref
    if regime is not None and regime.eta_masked:
        g[2] = 0.0
    return g


def project_box(ctrl: ControlVector | np.ndarray, bounds: ControlBounds) -> ControlVector:
    """Componentwise clamp onto the admissible box."""
    arr = ctrl.as_array() if isinstance(ctrl, ControlVector) else np.asarray(ctrl, dtype=float)
    return ControlVector.from_array(bounds.clip(arr))


@dataclass
class IdentifyOptions:
    bounds: ControlBounds
    k_max: int = 200
    tol: float | None = None
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    step_min: float = 1e-6
    step_max: float = 1e3
    step0: float = 1.0
    max_backtracks: int = 40
    s_chi: float = DEFAULT_S_CHI


@dataclass
class IdentifyReport:
    iterates: list = field(default_factory=list)
    ctrl: ControlVector | None = None
    gradient: np.ndarray | None = None
    cost: float = np.inf
    stationarity: float = np.inf
    converged: bool = False
    reason: str = ""
    n_state_solves: int = 0

    def history_rows(self) -> list:
        return [dict(it) for it in self.iterates]


def _stationarity(ctrl_arr: np.ndarray, g: np.ndarray, bounds: ControlBounds) -> float:
    return float(np.linalg.norm(ctrl_arr - bounds.clip(ctrl_arr - g)))


def identify(
    cfg: ModelConfig,
    cost: CostSpec,
    ctrl0: ControlVector,
    opts: IdentifyOptions,
    regime: AdjointRegime | None = None,
) -> IdentifyReport:
    """Projected-gradient descent over the admissible box.

    Steps are Barzilai-Borwein (safeguarded into [step_min, step_max]) with
    Armijo backtracking along the projection arc; the loop stops when the
    projected-gradient stationarity measure drops under tol (default
    1e-6 (1 + |g_0|)) or at k_max iterations, whichever first.  The report's
    accepted-cost history is strictly decreasing by construction.
    """
    if regime is None:
        regime = AdjointRegime.for_config(cfg)
    bounds = opts.bounds
    report = IdentifyReport()

    ctrl = project_box(ctrl0, bounds)
    if regime.eta_masked and ctrl.eta != 0.0:
        raise RegimeViolation("masked regimes require the frozen eta component to be zero")

    def evaluate(c: ControlVector):
        state = solve_state(cfg, c)
        report.n_state_solves += 1
        j = eval_cost(state, c, cost, regime, eps=cfg.eps)
        return state, j

    def gradient_at(c: ControlVector, state: Trajectory):
        adj = solve_adjoint(state, cfg, c, cost, regime)
        return reduced_gradient(state, adj, c, cost, cfg, regime, s_chi=opts.s_chi)

    state, j_val = evaluate(ctrl)
    g = gradient_at(ctrl, state)
    tol = opts.tol if opts.tol is not None else 1e-6 * (1.0 + float(np.linalg.norm(g)))
    stat = _stationarity(ctrl.as_array(), g, bounds)
    report.iterates.append(
        {"k": 0, "ctrl": ctrl.as_array().tolist(), "cost": j_val, "stationarity": stat, "step": 0.0}
    )

    step = opts.step0
    for k in range(1, opts.k_max + 1):
        if stat <= tol:
            report.converged = True
            report.reason = f"stationarity {stat:.3e} <= tol {tol:.3e}"
            break
        accepted = False
        trial = ctrl
        j_trial = j_val
        state_trial = state
        s = step
        for _ in range(opts.max_backtracks):
            trial_arr = bounds.clip(ctrl.as_array() - s * g)
            d = trial_arr - ctrl.as_array()
            if float(np.linalg.norm(d)) == 0.0:
                break
            trial = ControlVector.from_array(trial_arr)
            state_trial, j_trial = evaluate(trial)
            if j_trial <= j_val + opts.armijo_c * float(np.dot(g, d)):
                accepted = True
                break
            s *= opts.backtrack
        if not accepted:
            report.reason = f"line search exhausted at iteration {k} (stationarity {stat:.3e})"
            break

        g_new = gradient_at(trial, state_trial)
        d = trial.as_array() - ctrl.as_array()
        y = g_new - g
        dy = float(np.dot(d, y))
        if dy > 0.0:
            step = float(np.clip(np.dot(d, d) / dy, opts.step_min, opts.step_max))
        else:
            step = float(np.clip(s / opts.backtrack, opts.step_min, opts.step_max))
        ctrl, state, j_val, g = trial, state_trial, j_trial, g_new
        stat = _stationarity(ctrl.as_array(), g, bounds)
        report.iterates.append(
            {"k": k, "ctrl": ctrl.as_array().tolist(), "cost": j_val, "stationarity": stat, "step": s}
        )
    else:
        report.reason = f"iteration cap {opts.k_max} reached (stationarity {stat:.3e})"

    if not report.converged and stat <= tol:
        report.converged = True
        report.reason = f"stationarity {stat:.3e} <= tol {tol:.3e}"
    report.ctrl = ctrl
    report.gradient = g
    report.cost = j_val
    report.stationarity = stat
    return report


def vi_audit(
    ctrl: ControlVector,
    g: np.ndarray,
    bounds: ControlBounds,
    tol: float = 1e-5,
    n_random: int = 100,
    seed: int = 0,
    eta_masked: bool = False,
) -> dict:
    """Sample the box variational inequality <g, theta - ctrl> >= 0.

    Tests the 8 axis-extreme points (each component pushed to its bound) and
    n_random uniform feasible points; the inequality is accepted down to
    -tol (1 + |g|) |theta - ctrl| per direction.
    """
    arr = ctrl.as_array()
    upper = bounds.upper()
    directions = []
    for i in range(4):
        if eta_masked and i == 2:
            continue
        for v in (0.0, upper[i]):
            theta = arr.copy()
            theta[i] = v
            directions.append(theta)
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        theta = rng.uniform(0.0, upper)
        if eta_masked:
            theta[2] = arr[2]
        directions.append(theta)
    gnorm = float(np.linalg.norm(g))
    worst = np.inf
    worst_theta = None
    ok = True
    for theta in directions:
        d = theta - arr
        dn = float(np.linalg.norm(d))
        if dn == 0.0:
            continue
        val = float(np.dot(g, d))
        margin = val / ((1.0 + gnorm) * dn)
        if margin < worst:
            worst, worst_theta = margin, theta
        if margin < -tol:
            ok = False
    return {"ok": ok, "worst_margin": worst, "worst_direction": None if worst_theta is None else worst_theta.tolist(), "tol": tol}


def fd_gradient(
    cfg: ModelConfig,
    cost: CostSpec,
    ctrl: ControlVector,
    regime: AdjointRegime | None = None,
    rel_step: float = 1e-4,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Central finite differences of the reduced cost (the gradient oracle)."""
    if regime is None:
        regime = AdjointRegime.for_config(cfg)
    base = ctrl.as_array()
    g = np.zeros(4)
    if mask is None:
        mask = np.ones(4, dtype=bool)
        if regime.eta_masked:
            mask[2] = False
    for i in range(4):
        if not mask[i]:
            continue
        h = rel_step * max(abs(base[i]), 1.0)
        up = base.copy()
        up[i] += h
        down = base.copy()
        down[i] -= h
        j_up = eval_cost(solve_state(cfg, ControlVector.from_array(up)),
                         ControlVector.from_array(up), cost, regime, eps=cfg.eps)
        j_down = eval_cost(solve_state(cfg, ControlVector.from_array(down)),
                           ControlVector.from_array(down), cost, regime, eps=cfg.eps)
        g[i] = (j_up - j_down) / (2.0 * h)
    return g


def duality_check(
    cfg: ModelConfig,
    ctrl: ControlVector,
    cost: CostSpec,
    h,
    s_chi: float = DEFAULT_S_CHI,
    terminal: str = "tracked",
) -> dict:
    """Compare the tangent and adjoint representations of the cost derivative.

    Left side: d/ds J_tracking(phi(ctrl + s h)) via the tangent trajectory;
    right side: the adjoint pairings contracted with h.  Only meaningful in
    the full regime where the tangent solver is defined.  By default the
    adjoint uses the "tracked" terminal data (the literal pointwise terminal
    conditions), so the residual quantifies the discretization gap of the
    continuous-form duality identity and shrinks at first order under
    refinement; with terminal="landed" it measures the production gradient
    path instead, which is accurate to roundoff levels.
    """
    from .adjoint import solve_tangent  # local import keeps module load light

    state = solve_state(cfg, ctrl)
    tangent = solve_tangent(state, cfg, ctrl, h)
    adj = solve_adjoint(state, cfg, ctrl, cost, AdjointRegime.for_config(cfg), terminal=terminal)

    grid = cfg.grid
    dt = grid.dt
    lhs = 0.0
    for n in range(1, grid.nt + 1):
        lhs += dt * dot_array(cost.q_misfit(state["phi"][n], n), tangent["xi"][n], grid)
    lhs += dot_array(cost.terminal_misfit(state["phi"][-1]), tangent["xi"][-1], grid)

    g_track = tracking_gradient(state, adj, cfg, s_chi=s_chi)
    rhs = float(np.dot(g_track, h.as_array()))
    denom = max(abs(lhs), abs(rhs), 1e-300)
    return {"lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs) / denom}


def twin_experiment(
    cfg: ModelConfig,
    ctrl_true: ControlVector,
    noise: float,
    seed: int,
    bounds: ControlBounds,
    alpha: float = 1e-6,
    beta_Omega: float = 1.0,
    beta_Q: float = 1.0,
    opts: IdentifyOptions | None = None,
) -> tuple[CostSpec, IdentifyReport]:
    """Identification against self-generated targets with known ground truth.

    The target trajectory is simulated at ctrl_true; optional i.i.d. Gaussian
    noise (seeded) is added to the space-time target; priors are the truth
    perturbed by a seeded +-10 percent; the optimizer starts from a
    deterministic +-25 percent offset of the truth.
    """
    if not bounds.contains(ctrl_true):
        raise ValueError("the ground-truth control must be admissible")
    rng = np.random.default_rng(seed)
    truth_traj = solve_state(cfg, ctrl_true)
    phi_q_values = truth_traj["phi"].copy()
    if noise > 0.0:
        phi_q_values = phi_q_values + noise * rng.standard_normal(phi_q_values.shape)
    phi_q = FieldSeries(cfg.grid, truth_traj.times.copy(), phi_q_values)
    phi_omega = Field(cfg.grid, truth_traj["phi"][-1])

    truth = ctrl_true.as_array()
    priors = truth * (1.0 + rng.uniform(-0.1, 0.1, size=4))
    priors = np.maximum(priors, 0.0)
    cost = CostSpec(
        beta_Omega=beta_Omega,
        beta_Q=beta_Q,
        alpha_P=alpha, alpha_chi=alpha, alpha_eta=alpha, alpha_C=alpha,
        P_star=priors[0], chi_star=priors[1], eta_star=priors[2], C_star=priors[3],
        phi_Omega=phi_omega,
        phi_Q=phi_q,
    )
    offset = np.array([1.25, 0.75, 1.25, 0.75])
    start = project_box(truth * offset, bounds)
    if opts is None:
        opts = IdentifyOptions(bounds=bounds)
    report = identify(cfg, cost, start, opts)
    return cost, report
