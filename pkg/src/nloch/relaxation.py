"""Relaxation-limit experiments: parameter ladders, convergence tables, floors.

Each sweep solves the limit problem once (eps and/or tau set to zero) and a
geometric ladder of relaxed problems, then tabulates trajectory distances in
the norms the limit statements use, together with the quantities that must
vanish with the parameters (eps-weighted potentials, tau-weighted phase rates,
and their adjoint counterparts).  Convergence is tested as monotone decrease
down the ladder rather than as a rate, and the vanishing columns are compared
against a discretization floor measured from a dt-refinement pair at the last
rung.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointRegime, solve_adjoint
from .calibration import CostSpec, IdentifyOptions, IdentifyReport, eval_cost, identify
from .errors import RegimeViolation
from .grid import Trajectory, dot_array, grad_sq_array, vstar_norm
from .state import ControlVector, ModelConfig, solve_state

__all__ = ["SweepPlan", "ConvergenceTable", "sweep_states", "sweep_adjoints", "sweep_adapted_identify"]

_REGIMES = ("eps_to_zero", "tau_to_zero", "joint")


@dataclass(frozen=True)
class SweepPlan:
    """A relaxation sweep: which parameter vanishes and along which ladder."""

    regime: str
    cfg: ModelConfig
    ctrl: ControlVector
    rungs: int = 6
    ratio: float = 0.5
    start_eps: float | None = None   # default: eps0 / 2 from the coercivity check
    start_tau: float | None = None   # default: tau0 / 2
    rho_cap: float | None = None     # joint sweeps: eps/tau stays below this

    def __post_init__(self):
        if self.regime not in _REGIMES:
            raise RegimeViolation(f"unknown sweep regime {self.regime!r}")
        if not (0.0 < self.ratio < 1.0):
            raise ValueError("ladder ratio must lie in (0, 1)")
        if self.rungs < 1:
            raise ValueError("need at least one rung")
        if self.regime in ("eps_to_zero", "joint") and self.ctrl.eta != 0.0:
            raise RegimeViolation("eps -> 0 sweeps require a vanishing active transport")

    def ladder(self) -> list[tuple[float, float]]:
        """(eps, tau) pairs, strictly decreasing in the vanishing parameters."""
        rep = self.cfg.coercivity()
        eps0 = self.start_eps if self.start_eps is not None else 0.5 * rep.eps0
        tau0 = self.start_tau if self.start_tau is not None else 0.5 * rep.tau0
        pairs = []
        for k in range(self.rungs):
            fac = self.ratio**k
            if self.regime == "eps_to_zero":
                pairs.append((eps0 * fac, self.cfg.tau))
            elif self.regime == "tau_to_zero":
                pairs.append((self.cfg.eps, tau0 * fac))
            else:
                eps_k, tau_k = eps0 * fac, tau0 * fac
                if self.rho_cap is not None and eps_k / tau_k > self.rho_cap:
                    eps_k = self.rho_cap * tau_k
                pairs.append((eps_k, tau_k))
        for (e, t) in pairs:
            if e >= max(rep.eps0, 1e-300) and e > 0:
                raise RegimeViolation(f"ladder eps {e:g} outside (0, {rep.eps0:g})")
            if t >= rep.tau0 and t > 0:
                raise RegimeViolation(f"ladder tau {t:g} outside (0, {rep.tau0:g})")
        return pairs

    def limit_relaxation(self) -> tuple[float, float]:
        if self.regime == "eps_to_zero":
            return (0.0, self.cfg.tau)
        if self.regime == "tau_to_zero":
            return (self.cfg.eps, 0.0)
        return (0.0, 0.0)


@dataclass
class ConvergenceTable:
    regime: str
    columns: list
    rows: list = field(default_factory=list)       # dicts: eps, tau, col -> value
    floors: dict = field(default_factory=dict)     # col -> discretization floor
    mandated: list = field(default_factory=list)   # columns whose decrease is asserted

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    def monotone(self, name: str, slack: float = 1.05) -> bool:
        vals = self.column(name)
        tiny = 1e-14 * max(vals.max(initial=0.0), 1.0)
        return bool(np.all(vals[1:] <= slack * vals[:-1] + tiny))

    def vanishing_ok(self, name: str, factor: float = 10.0) -> bool:
        floor = self.floors.get(name)
        if floor is None:
            return True
        return bool(self.column(name)[-1] <= factor * floor)

    def as_records(self) -> list:
        return [dict(r) for r in self.rows]


# --- discrete norms of trajectory differences -------------------------------


def _c0h(diff: np.ndarray, grid) -> float:
    return float(max(np.sqrt(max(dot_array(d, d, grid), 0.0)) for d in diff))


def _l2q(diff: np.ndarray, grid, dt: float) -> float:
    acc = sum(dot_array(d, d, grid) for d in diff[1:])
    return float(np.sqrt(max(dt * acc, 0.0)))


def _l2v(diff: np.ndarray, grid, dt: float) -> float:
    acc = sum(
        dot_array(d, d, grid) + grad_sq_array(d, grid.hx, grid.hy) for d in diff[1:]
    )
    return float(np.sqrt(max(dt * acc, 0.0)))


def _c0vstar(diff: np.ndarray, grid) -> float:
    return float(max(vstar_norm(d, grid) for d in diff))


def _h1h(series: np.ndarray, grid, dt: float) -> float:
    rate = np.diff(series, axis=0) / dt
    acc = sum(dot_array(u, u, grid) for u in series[1:]) + sum(
        dot_array(u, u, grid) for u in rate
    )
    return float(np.sqrt(max(dt * acc, 0.0)))


def _state_columns(regime: str) -> tuple[list, list]:
    columns = ["phi_C0H", "phi_L2Q", "sigma_C0Vstar", "sigma_L2H"]
    mandated = {
        # strong-convergence clauses of the limit statements
        "eps_to_zero": ["phi_C0H", "phi_L2Q", "sigma_L2H", "eps_mu_C0H"],
        "tau_to_zero": ["phi_L2Q", "sigma_C0Vstar", "sigma_L2H", "tau_phi_H1H"],
        "joint": ["phi_L2Q", "sigma_C0Vstar", "sigma_L2H", "eps_mu_C0H", "tau_phi_H1H"],
    }[regime]
    if regime in ("eps_to_zero", "joint"):
        columns.append("eps_mu_C0H")
    if regime in ("tau_to_zero", "joint"):
        columns.append("tau_phi_H1H")
    return columns, mandated


def _state_row(traj: Trajectory, limit: Trajectory, eps: float, tau: float, regime: str) -> dict:
    grid = traj.grid
    dt = grid.dt
    row = {"eps": eps, "tau": tau}
    dphi = traj["phi"] - limit["phi"]
    dsigma = traj["sigma"] - limit["sigma"]
    row["phi_C0H"] = _c0h(dphi, grid)
    row["phi_L2Q"] = _l2q(dphi, grid, dt)
    row["sigma_C0Vstar"] = _c0vstar(dsigma, grid)
    row["sigma_L2H"] = _l2q(dsigma, grid, dt)
    if regime in ("eps_to_zero", "joint"):
        row["eps_mu_C0H"] = eps * _c0h(traj["mu"], grid)
    if regime in ("tau_to_zero", "joint"):
        row["tau_phi_H1H"] = tau * _h1h(traj["phi"], grid, dt)
    return row


def _refinement_floor_state(plan: SweepPlan, eps: float, tau: float) -> dict:
    """Discretization floor per vanishing column: the dt-pair difference of the
    corresponding field at the last rung (without the prefactor)."""
    cfg = plan.cfg.with_relaxation(eps=eps, tau=tau)
    coarse = solve_state(cfg, plan.ctrl)
    fine = solve_state(cfg.with_time_refinement(2), plan.ctrl)
    grid = cfg.grid
    floors = {}
    dmu = coarse["mu"] - fine["mu"][::2]
    floors["eps_mu_C0H"] = _c0h(dmu, grid)
    dphi = coarse["phi"] - fine["phi"][::2]
    floors["tau_phi_H1H"] = _h1h(dphi, grid, grid.dt)
    return floors


def sweep_states(plan: SweepPlan) -> ConvergenceTable:
    """Trajectory distances to the limit problem down the relaxation ladder."""
    columns, mandated = _state_columns(plan.regime)
    table = ConvergenceTable(regime=plan.regime, columns=columns, mandated=mandated)
    eps_l, tau_l = plan.limit_relaxation()
    limit = solve_state(plan.cfg.with_relaxation(eps=eps_l, tau=tau_l), plan.ctrl)
    ladder = plan.ladder()
    for eps, tau in ladder:
        traj = solve_state(plan.cfg.with_relaxation(eps=eps, tau=tau), plan.ctrl)
        table.rows.append(_state_row(traj, limit, eps, tau, plan.regime))
    floors = _refinement_floor_state(plan, *ladder[-1])
    table.floors = {k: v for k, v in floors.items() if k in columns}
    return table


def _adjoint_columns(regime: str) -> tuple[list, list]:
    columns = ["p_C0H", "p_L2V", "q_L2Q", "r_C0H", "r_L2V", "r_L2H"]
    mandated = {
        "eps_to_zero": ["r_C0H", "r_L2V"],
        "tau_to_zero": ["p_C0H", "p_L2V", "r_C0H", "r_L2V", "tau_q_L2H"],
        "joint": ["r_C0H", "r_L2H", "eps_p_H1H", "tau_q_C0H"],
    }[regime]
    if regime == "eps_to_zero":
        columns.append("eps_p_H1H")
        mandated.append("eps_p_H1H")
    if regime == "tau_to_zero":
        columns.append("tau_q_L2H")
    if regime == "joint":
        columns.extend(["eps_p_H1H", "tau_q_C0H"])
    return columns, mandated


def _adjoint_regime_for(plan: SweepPlan, limit_state: Trajectory, anchor: np.ndarray):
    """Adjoint problems down the ladder follow the adapted program of the
    corresponding limit analysis (the eps ladder needs no adaptation of the
    adjoint itself)."""
    if plan.regime == "eps_to_zero":
        return lambda cfg: AdjointRegime(kind="full_eps_tau")
    if plan.regime == "tau_to_zero":
        phi_ref = limit_state.series("phi")
        return lambda cfg: AdjointRegime(
            kind="full_eps_tau", adapted="tau", phi_ref=phi_ref, ctrl_ref=anchor
        )
    return lambda cfg: AdjointRegime(kind="full_eps_tau", adapted="joint", ctrl_ref=anchor)


def _limit_kind(regime: str) -> str:
    return {"eps_to_zero": "eps_zero", "tau_to_zero": "tau_zero", "joint": "joint_zero"}[regime]


def _adjoint_row(adj, limit_adj, eps, tau, regime, grid) -> dict:
    dt = grid.dt
    row = {"eps": eps, "tau": tau}
    dp = adj["p"] - limit_adj["p"]
    dq = adj["q"] - limit_adj["q"]
    dr = adj["r"] - limit_adj["r"]
    row["p_C0H"] = _c0h(dp, grid)
    row["p_L2V"] = _l2v(dp, grid, dt)
    row["q_L2Q"] = _l2q(dq, grid, dt)
    row["r_C0H"] = _c0h(dr, grid)
    row["r_L2V"] = _l2v(dr, grid, dt)
    row["r_L2H"] = _l2q(dr, grid, dt)
    if regime in ("eps_to_zero", "joint"):
        row["eps_p_H1H"] = eps * _h1h(adj["p"], grid, dt)
    if regime == "tau_to_zero":
        row["tau_q_L2H"] = tau * _l2q(adj["q"], grid, dt)
    if regime == "joint":
        row["tau_q_C0H"] = tau * _c0h(adj["q"], grid)
    return row


def sweep_adjoints(plan: SweepPlan, cost: CostSpec) -> ConvergenceTable:
    """Adjoint distances to the limit-regime adjoint down the ladder.

    The tau ladder uses the adapted forcing anchored at the limit state and
    requires beta_Omega = 0; the joint ladder uses the adapted terminal data.
    """
    if plan.regime == "tau_to_zero" and cost.beta_Omega != 0.0:
        raise RegimeViolation("tau -> 0 adjoint sweeps require beta_Omega = 0")
    columns, mandated = _adjoint_columns(plan.regime)
    table = ConvergenceTable(regime=plan.regime, columns=columns, mandated=mandated)

    eps_l, tau_l = plan.limit_relaxation()
    limit_cfg = plan.cfg.with_relaxation(eps=eps_l, tau=tau_l)
    limit_state = solve_state(limit_cfg, plan.ctrl)
    limit_adj = solve_adjoint(
        limit_state, limit_cfg, plan.ctrl, cost, AdjointRegime(kind=_limit_kind(plan.regime))
    )
    anchor = plan.ctrl.as_array()
    regime_factory = _adjoint_regime_for(plan, limit_state, anchor)

    ladder = plan.ladder()
    grid = plan.cfg.grid
    for eps, tau in ladder:
        cfg = plan.cfg.with_relaxation(eps=eps, tau=tau)
        state = solve_state(cfg, plan.ctrl)
        adj = solve_adjoint(state, cfg, plan.ctrl, cost, regime_factory(cfg))
        table.rows.append(_adjoint_row(adj, limit_adj, eps, tau, plan.regime, grid))

    # floor from a dt-refined pair at the last rung
    eps, tau = ladder[-1]
    cfg = plan.cfg.with_relaxation(eps=eps, tau=tau)
    state_c = solve_state(cfg, plan.ctrl)
    adj_c = solve_adjoint(state_c, cfg, plan.ctrl, cost, regime_factory(cfg))
    cfg_f = cfg.with_time_refinement(2)
    cost_f = cost.with_times(cfg_f.grid.times(), cfg_f.grid)
    state_f = solve_state(cfg_f, plan.ctrl)
    if plan.regime == "tau_to_zero":
        # rebuild the adapted forcing reference on the refined time grid
        limit_f = solve_state(limit_cfg.with_time_refinement(2), plan.ctrl)
        rf_obj = AdjointRegime(kind="full_eps_tau", adapted="tau",
                               phi_ref=limit_f.series("phi"), ctrl_ref=anchor)
    else:
        rf_obj = regime_factory(cfg_f)
    adj_f = solve_adjoint(state_f, cfg_f, plan.ctrl, cost_f, rf_obj)
    floors = {}
    floors["eps_p_H1H"] = _h1h(adj_c["p"] - adj_f["p"][::2], grid, grid.dt)
    floors["tau_q_L2H"] = _l2q(adj_c["q"] - adj_f["q"][::2], grid, grid.dt)
    floors["tau_q_C0H"] = _c0h(adj_c["q"] - adj_f["q"][::2], grid)
    table.floors = {k: v for k, v in floors.items() if k in columns}
    return table


def sweep_adapted_identify(
    plan: SweepPlan,
    cost: CostSpec,
    anchor_report: IdentifyReport,
    bounds,
    opts: IdentifyOptions | None = None,
) -> ConvergenceTable:
    """Adapted identification down the ladder against a converged limit anchor.

    Each rung minimizes the adapted cost (anchored at the limit minimizer) and
    the table reports control distance and cost gap to the anchor.
    """
    anchor = anchor_report.ctrl.as_array()
    eps_l, tau_l = plan.limit_relaxation()
    limit_cfg = plan.cfg.with_relaxation(eps=eps_l, tau=tau_l)
    anchor_state = solve_state(limit_cfg, anchor_report.ctrl)
    limit_regime = AdjointRegime(kind=_limit_kind(plan.regime))
    anchor_cost_value = eval_cost(anchor_state, anchor_report.ctrl, cost, None)

    adapted = {"eps_to_zero": "eps", "tau_to_zero": "tau", "joint": "joint"}[plan.regime]
    phi_ref = anchor_state.series("phi") if adapted == "tau" else None

    table = ConvergenceTable(
        regime=plan.regime,
        columns=["ctrl_dist", "cost_gap"],
        mandated=["ctrl_dist", "cost_gap"],
    )
    if opts is None:
        opts = IdentifyOptions(bounds=bounds)
    for eps, tau in plan.ladder():
        cfg = plan.cfg.with_relaxation(eps=eps, tau=tau)
        regime = AdjointRegime(
            kind="full_eps_tau", adapted=adapted, phi_ref=phi_ref, ctrl_ref=anchor
        )
        start = anchor_report.ctrl
        report = identify(cfg, cost, start, opts, regime=regime)
        dist = float(np.linalg.norm(report.ctrl.as_array() - anchor))
        gap = abs(report.cost - anchor_cost_value)
        table.rows.append({"eps": eps, "tau": tau, "ctrl_dist": dist, "cost_gap": gap})
    return table
