"""Ground-truth physics: Z-bus fixed-point power flow and voltage metrics.

The solver iterates ``V <- w + Z conj(S / V)`` on the non-slack node-phases,
where ``w`` is the no-load voltage induced by the slack bus and ``Z`` is the
inverse of the non-slack admittance partition.  Constant-power (PQ) loads
only.  ``mismatch`` evaluates the power-balance residuals in rectangular
coordinates through the real G/B matrices and acts as an independent oracle
for the solver.

A module-level call counter tracks every solve; the surrogate-trained control
path is required to leave it untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import PHASE_INDEX, build_ybus, build_zbus

# slack angle pattern: 0, -120, +120 degrees for phases a, b, c
_SLACK_ANGLES = np.array([0.0, -2.0 * np.pi / 3.0, 2.0 * np.pi / 3.0])

# |V| below this mid-iteration means the fixed point is collapsing
COLLAPSE_FLOOR = 0.1


class VoltageCollapseError(RuntimeError):
    """Iteration drove a voltage magnitude below the collapse floor."""


class CallCounter:
    """Counts power-flow solves (used to assert the model-free property)."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


solve_calls = CallCounter()


@dataclass(frozen=True)
class Injection:
    """Net per-unit injections: p = P_pv - P_load, q = Q_pv + Q_svc - Q_load.

    Slack entries are ignored by the solver.
    """

    p: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class VoltageSolution:
    v: np.ndarray          # complex, full node-phase layout
    converged: bool
    iterations: int
    residual: float        # max power mismatch, per-unit


def slack_voltages(feeder):
    """Every node-phase set to its phase's slack phasor (flat-start pattern)."""
    v = np.empty(feeder.nph, dtype=complex)
    for k, (_, phase) in enumerate(feeder.node_phases):
        v[k] = feeder.v0 * np.exp(1j * _SLACK_ANGLES[PHASE_INDEX[phase]])
    return v


class ZBusSolver:
    """Per-feeder factorised solver; build once, solve many.

    Pure given the immutable feeder matrices, so instances may be shared for
    concurrent solves.
    """

    def __init__(self, feeder, tol=1e-8, max_iter=100):
        self.feeder = feeder
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.ybus = build_ybus(feeder)
        self.zbus = build_zbus(feeder, self.ybus)
        self._ns = feeder.nonslack_indices
        self._sl = feeder.slack_indices
        v_sl = slack_voltages(feeder)[self._sl]
        y_ns_sl = self.ybus[np.ix_(self._ns, self._sl)]
        # no-load voltage: what the non-slack nodes see with zero injections
        self.w = -self.zbus @ (y_ns_sl @ v_sl)

    def solve(self, inj, tol=None, max_iter=None):
        tol = self.tol if tol is None else float(tol)
        max_iter = self.max_iter if max_iter is None else int(max_iter)
        if tol <= 0:
            raise ValueError("tol must be > 0")
        if inj.p.shape != (self.feeder.nph,) or inj.q.shape != (self.feeder.nph,):
            raise ValueError("injection length does not match feeder node-phases")
        solve_calls.count += 1

        ns = self._ns
        s_spec = inj.p[ns] + 1j * inj.q[ns]
        v = slack_voltages(self.feeder)
        residual = np.inf
        iterations = 0
        converged = False
        for iterations in range(1, max_iter + 1):
            vn = v[ns]
            mags = np.abs(vn)
            if np.min(mags) < COLLAPSE_FLOOR:
                k = ns[int(np.argmin(mags))]
                bus, phase = self.feeder.node_phases[k]
                raise VoltageCollapseError(
                    "voltage %.4f p.u. at (bus %d, phase %s) during iteration %d"
                    % (np.min(mags), bus, phase, iterations))
            v_new = self.w + self.zbus @ np.conj(s_spec / vn)
            v[ns] = v_new
            s_calc = v_new * np.conj((self.ybus @ v)[ns])
            residual = float(np.max(np.abs(s_spec - s_calc)))
            if residual < tol:
                converged = True
                break
        return VoltageSolution(v=v, converged=converged,
                               iterations=iterations, residual=residual)


def solve(feeder, inj, tol=1e-8, max_iter=100):
    """One-shot convenience wrapper; builds the factorisation each call.

    Reuse a ZBusSolver instance in loops.
    """
    return ZBusSolver(feeder, tol=tol, max_iter=max_iter).solve(inj)


def mismatch(feeder, v, inj, ybus=None):
    """Power-balance residuals (dP, dQ) at (v, inj), in rectangular form.

    Uses the real/imaginary parts of the admittance matrix explicitly, which
    keeps this an oracle independent of the complex-arithmetic solve path.
    Slack entries are zeroed: the slack carries the balancing injection.
    """
    if ybus is None:
        ybus = build_ybus(feeder)
    g, b = ybus.real, ybus.imag
    e, f = v.real, v.imag
    ge_bf = g @ e - b @ f
    gf_be = g @ f + b @ e
    dp = inj.p - (e * ge_bf + f * gf_be)
    dq = inj.q - (f * ge_bf - e * gf_be)
    dp[feeder.slack_indices] = 0.0
    dq[feeder.slack_indices] = 0.0
    return dp, dq


def deviation_objective(v, v0):
    """Total absolute voltage-magnitude deviation from v0 over the entries
    given.

    Accepts complex voltages or real magnitudes.  Slack entries contribute
    zero whenever the slack magnitude equals v0, so passing the full layout
    is fine; slice to non-slack otherwise.
    """
    return float(np.sum(np.abs(np.abs(v) - v0)))


def bound_violations(v, v_min=0.95, v_max=1.05):
    """Node-phase indices (with magnitudes) outside the closed band
    [v_min, v_max].

    Magnitudes exactly on a bound are compliant.
    """
    if not v_min < v_max:
        raise ValueError("v_min must be < v_max")
    mags = np.abs(v)
    bad = np.flatnonzero((mags < v_min) | (mags > v_max))
    return [(int(k), float(mags[k])) for k in bad]
