import numpy as np
import pytest

from conftest import make_model
from nloch.calibration import CostSpec, IdentifyOptions, identify
from nloch.errors import RegimeViolation
from nloch.grid import Field, FieldSeries
from nloch.relaxation import SweepPlan, sweep_adapted_identify, sweep_adjoints, sweep_states
from nloch.state import ControlBounds, ControlVector, solve_state

CTRL = ControlVector(P=1.2, chi=0.1, eta=0.0, C=0.8)


def sweep_model(nt=24, T=0.12):
    return make_model(n=16, nt=nt, T=T, B=0.4, A=0.1, eps=3e-3, tau=0.4)


def tracking_cost(cfg, beta_Omega=0.0):
    state = solve_state(cfg.with_relaxation(eps=0.0, tau=0.0), CTRL)
    kw = dict(beta_Q=1.0, phi_Q=FieldSeries(cfg.grid, state.times.copy(), 0.9 * state["phi"]))
    if beta_Omega:
        kw.update(beta_Omega=beta_Omega, phi_Omega=Field(cfg.grid, 0.9 * state["phi"][-1]))
    return CostSpec(**kw)


def test_ladder_structure_and_caps():
    cfg = sweep_model()
    plan = SweepPlan(regime="joint", cfg=cfg, ctrl=CTRL, rungs=6, rho_cap=0.01)
    ladder = plan.ladder()
    assert len(ladder) == 6
    eps = np.array([e for e, _ in ladder])
    tau = np.array([t for _, t in ladder])
    assert np.all(np.diff(eps) < 0) and np.all(np.diff(tau) < 0)
    assert np.all(eps / tau <= 0.01 + 1e-15)


def test_eps_sweep_requires_zero_eta():
    cfg = sweep_model()
    with pytest.raises(RegimeViolation):
        SweepPlan(regime="eps_to_zero", cfg=cfg, ctrl=ControlVector(P=1.0, chi=0.1, eta=0.1, C=0.5))


def test_single_rung_at_limit_gives_zero_columns():
    cfg = sweep_model(nt=10, T=0.05)
    plan = SweepPlan(regime="eps_to_zero", cfg=cfg, ctrl=CTRL, rungs=1, start_eps=0.0)
    table = sweep_states(plan)
    for col in ("phi_C0H", "phi_L2Q", "sigma_C0Vstar", "sigma_L2H", "eps_mu_C0H"):
        assert table.rows[0][col] == 0.0


@pytest.mark.parametrize("regime", ["eps_to_zero", "tau_to_zero", "joint"])
def test_state_sweep_monotone_and_vanishing(regime):
    cfg = sweep_model()
    plan = SweepPlan(regime=regime, cfg=cfg, ctrl=CTRL, rungs=5)
    table = sweep_states(plan)
    assert len(table.rows) == 5
    for col in table.mandated:
        assert table.monotone(col), f"{col} not monotone: {table.column(col)}"
    for col in table.floors:
        assert table.vanishing_ok(col), (
            f"{col} above floor: {table.column(col)[-1]} vs {table.floors[col]}"
        )


def test_adjoint_sweep_zero_cost_gives_zero_table():
    cfg = sweep_model(nt=10, T=0.05)
    plan = SweepPlan(regime="eps_to_zero", cfg=cfg, ctrl=CTRL, rungs=2)
    cost = CostSpec(alpha_P=1.0)  # no tracking: homogeneous adjoints everywhere
    table = sweep_adjoints(plan, cost)
    for row in table.rows:
        for col in table.columns:
            assert row[col] == 0.0


@pytest.mark.parametrize("regime", ["eps_to_zero", "tau_to_zero", "joint"])
def test_adjoint_sweep_monotone_and_vanishing(regime):
    cfg = sweep_model()
    # the adjoint difference enters its asymptotic (monotone) range a little
    # below tau0/2, so the tau ladder starts at tau0/4
    start_tau = 0.25 if regime == "tau_to_zero" else None
    plan = SweepPlan(regime=regime, cfg=cfg, ctrl=CTRL, rungs=5, start_tau=start_tau)
    beta_om = 0.0 if regime == "tau_to_zero" else 0.5
    cost = tracking_cost(cfg, beta_Omega=beta_om)
    table = sweep_adjoints(plan, cost)
    for col in table.mandated:
        assert table.monotone(col), f"{col} not monotone: {table.column(col)}"
    for col in table.floors:
        assert table.vanishing_ok(col), (
            f"{col} above floor: {table.column(col)[-1]} vs {table.floors[col]}"
        )


def test_tau_adjoint_sweep_rejects_terminal_tracking():
    cfg = sweep_model(nt=10, T=0.05)
    plan = SweepPlan(regime="tau_to_zero", cfg=cfg, ctrl=CTRL, rungs=2)
    cost = tracking_cost(cfg, beta_Omega=1.0)
    with pytest.raises(RegimeViolation):
        sweep_adjoints(plan, cost)


def test_adapted_identify_sweep_decreases():
    cfg = sweep_model(nt=16, T=0.08)
    bounds = ControlBounds(P_max=5.0, chi_max=0.2, eta_max=0.3, C_max=2.0)
    cost = tracking_cost(cfg)
    limit_cfg = cfg.with_relaxation(eps=0.0, tau=0.0)
    opts = IdentifyOptions(bounds=bounds, k_max=40)
    anchor = identify(limit_cfg, cost, ControlVector(P=1.0, chi=0.08, eta=0.0, C=0.6), opts)
    plan = SweepPlan(regime="joint", cfg=cfg, ctrl=CTRL, rungs=3)
    table = sweep_adapted_identify(plan, cost, anchor, bounds,
                                   IdentifyOptions(bounds=bounds, k_max=25))
    dist = table.column("ctrl_dist")
    gap = table.column("cost_gap")
    tiny = 1e-12
    assert dist[-1] <= dist[0] + tiny
    assert gap[-1] <= gap[0] + tiny


def test_determinism_of_tables():
    cfg = sweep_model(nt=10, T=0.05)
    plan = SweepPlan(regime="eps_to_zero", cfg=cfg, ctrl=CTRL, rungs=3)
    t1 = sweep_states(plan)
    t2 = sweep_states(plan)
    assert t1.as_records() == t2.as_records()
