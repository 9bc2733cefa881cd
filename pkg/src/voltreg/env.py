"""The volt-VAR control MDP: exogenous states, bounded actions, rewards.

States carry the hourly operating point (load P/Q and PV output) and never
depend on past actions.  Actions live in [-1, 1]^m and map onto the device
feasibility boxes: the SVC box directly, the PV inverter headroom
sqrt(s_rated^2 - p(t)^2) at the state's instantaneous PV output, so every
executed setpoint is feasible by construction.  Rewards come from either the
learned surrogate or the true power flow:

    r = -(sum of |V| deviations from v0) - penalty * (bound violations)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import powerflow
from .powerflow import Injection, VoltageCollapseError, ZBusSolver
from .surrogate import SurrogateModel, predict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class State:
    """Exogenous observation: per-unit load/PV vectors plus the hour tag.

    Only the three vectors feed the agent; the hour is bookkeeping.
    """

    p_load: np.ndarray
    p_pv: np.ndarray
    q_load: np.ndarray
    hour: int


@dataclass(frozen=True)
class RewardConfig:
    v0: float = 1.0
    v_min: float = 0.95
    v_max: float = 1.05
    penalty_per_violation: float = 0.5
    nonconverged_penalty: float = 50.0

    def __post_init__(self):
        if not self.v_min < self.v0 < self.v_max:
            raise ValueError("need v_min < v0 < v_max")
        if self.penalty_per_violation < 0:
            raise ValueError("penalty must be >= 0")


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool


@dataclass(frozen=True)
class StepResult:
    reward: float
    v_mag: np.ndarray   # full node-phase layout
    violations: int
    converged: bool


class TrueModelBackend:
    """Voltage magnitudes from the ground-truth solver (counts solves)."""

    name = "truemodel"

    def __init__(self, feeder, tol=1e-8, max_iter=100):
        self._solver = ZBusSolver(feeder, tol=tol, max_iter=max_iter)

    def voltages(self, p, q):
        try:
            sol = self._solver.solve(Injection(p, q))
        except VoltageCollapseError:
            return None, False
        if not sol.converged:
            return None, False
        return np.abs(sol.v), True


class SurrogateBackend:
    """Voltage magnitudes from the trained surrogate; never solves."""

    name = "surrogate"

    def __init__(self, model: SurrogateModel):
        self._model = model

    def voltages(self, p, q):
        return predict(self._model, p, q), True


def denormalize_action(a, state, feeder):
    """Map u in [-1, 1]^m to feasible per-unit setpoints (q_pv, q_svc).

    PVs come first (file order), then SVCs.  PV headroom uses the state's
    instantaneous active output, so the apparent-power circle is respected
    exactly; the SVC box is an affine stretch of [-1, 1].
    """
    a = np.asarray(a, dtype=float)
    m = feeder.n_controls
    if a.shape != (m,):
        raise ValueError("action length %s != %d controls" % (a.shape, m))
    if np.any(np.abs(a) > 1.0 + 1e-12):
        raise ValueError("action outside [-1, 1]")
    n_pv = len(feeder.pvs)
    q_lim = np.sqrt(np.maximum(
        feeder.pv_s_rated_pu ** 2 - state.p_pv[feeder.pv_npidx] ** 2, 0.0))
    q_pv = a[:n_pv] * q_lim
    u_svc = a[n_pv:]
    q_svc = feeder.svc_q_min_pu + (u_svc + 1.0) / 2.0 * (
        feeder.svc_q_max_pu - feeder.svc_q_min_pu)
    return q_pv, q_svc


class VoltVarEnv:
    """Feeder + profiles + reward + one voltage backend.

    Instances are cheap value objects; run parallel episodes by giving each
    worker its own env around the shared immutable feeder/profiles.
    """

    def __init__(self, feeder, profiles, backend, reward=None):
        self.feeder = feeder
        self.profiles = profiles
        self.backend = backend
        self.reward_cfg = reward or RewardConfig(v0=feeder.v0)
        self.state_dim = 3 * len(feeder.nonslack_indices)
        self.action_dim = feeder.n_controls

    # -- states ---------------------------------------------------------------

    def state(self, day, hour):
        p_load, p_pv, q_load = self.profiles.at(day, hour)
        return State(p_load=p_load, p_pv=p_pv, q_load=q_load, hour=hour)

    def flatten(self, state):
        ns = self.feeder.nonslack_indices
        return np.concatenate([state.p_load[ns], state.p_pv[ns],
                               state.q_load[ns]])

    # -- dynamics ---------------------------------------------------------------

    def injections(self, state, action):
        """Net injections implied by (state, action)."""
        q_pv, q_svc = denormalize_action(action, state, self.feeder)
        p = state.p_pv - state.p_load
        q = -state.q_load.copy()
        for k, idx in enumerate(self.feeder.pv_npidx):
            q[idx] += q_pv[k]
        for k, idx in enumerate(self.feeder.svc_npidx):
            q[idx] += q_svc[k]
        return Injection(p=p, q=q)

    def step(self, state, action):
        """Reward and voltages for one decision; the successor state is read
        from the profiles (exogenous transition)."""
        cfg = self.reward_cfg
        inj = self.injections(state, action)
        v_mag, ok = self.backend.voltages(inj.p, inj.q)
        if not ok:
            log.warning("non-converged step at hour %d; fixed penalty applied",
                        state.hour)
            return StepResult(reward=-cfg.nonconverged_penalty,
                              v_mag=np.full(self.feeder.nph, np.nan),
                              violations=0, converged=False)
        ns = self.feeder.nonslack_indices
        dev = powerflow.deviation_objective(v_mag[ns], cfg.v0)
        violations = len(powerflow.bound_violations(
            v_mag[ns], cfg.v_min, cfg.v_max))
        reward = -dev - cfg.penalty_per_violation * violations
        return StepResult(reward=reward, v_mag=v_mag, violations=violations,
                          converged=True)

    def episode(self, day, policy):
        """Roll a policy over the 24 hours of one profile day.

        policy maps a flattened state to an action in [-1, 1]^m.  The final
        transition is terminal; its successor entry is a zero marker.
        """
        transitions = []
        state = self.state(day, 0)
        for hour in range(24):
            flat = self.flatten(state)
            action = np.asarray(policy(flat), dtype=float)
            result = self.step(state, action)
            terminal = hour == 23
            if terminal:
                flat_next = np.zeros_like(flat)
            else:
                state = self.state(day, hour + 1)
                flat_next = self.flatten(state)
            transitions.append(Transition(s=flat, a=action, r=result.reward,
                                          s_next=flat_next, terminal=terminal))
        return transitions
