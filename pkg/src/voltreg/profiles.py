"""Exogenous operating-point data: load and PV profiles.

A ProfileSet holds hourly per-unit node-phase arrays for a stack of days.
The bundled generator synthesises a smooth diurnal load shape plus a
bell-shaped PV curve with per-day cloudiness, which is enough to exercise
over-voltage around noon and under-voltage at the evening peak.  Real data
can be ingested from CSV (see docs/formats.md).

Load reactive power is tied to active power through a constant power factor
(0.95 lagging by default).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import Feeder

PF_TAN_DEFAULT = float(np.tan(np.arccos(0.95)))  # 0.95 lagging


@dataclass(frozen=True)
class ProfileSet:
    """Hourly per-unit profiles, full node-phase layout, slack entries zero."""

    p_load: np.ndarray  # (days, 24, nph)
    p_pv: np.ndarray    # (days, 24, nph)
    q_load: np.ndarray  # (days, 24, nph)

    @property
    def n_days(self):
        return self.p_load.shape[0]

    def at(self, day, hour):
        """(p_load, p_pv, q_load) views for one hour."""
        return (self.p_load[day, hour], self.p_pv[day, hour],
                self.q_load[day, hour])


def _load_shape(hours):
    """Diurnal demand multiplier: night valley, morning bump, evening peak."""
    h = np.asarray(hours, dtype=float)
    return (0.50
            + 0.14 * np.exp(-((h - 8.5) / 2.5) ** 2)
            + 0.50 * np.exp(-((h - 19.5) / 3.0) ** 2))


def _pv_shape(hours):
    """Clear-sky production multiplier, zero outside daylight."""
    h = np.asarray(hours, dtype=float)
    s = np.exp(-((h - 12.5) / 3.5) ** 2)
    return np.where((h >= 5.0) & (h <= 20.0), s, 0.0)


def synthetic_profiles(feeder, n_days, seed, base_load_mw=(0.012, 0.04),
                       pf_tan=PF_TAN_DEFAULT):
    """Seeded synthetic profiles for every load node-phase and PV unit.

    Each non-slack node-phase draws a base demand (MW) once; days then vary
    by a global factor and small hourly noise.  PV output follows the
    clear-sky bell scaled by a per-day cloudiness factor with hourly dips.
    Identical (feeder, n_days, seed) inputs reproduce bit-identical arrays.
    """
    rng = np.random.default_rng(seed)
    nph = feeder.nph
    hours = np.arange(24)

    base = np.zeros(nph)
    base[feeder.nonslack_indices] = rng.uniform(
        base_load_mw[0], base_load_mw[1], size=len(feeder.nonslack_indices))
    base = feeder.mva_to_pu(base)

    day_factor = rng.uniform(0.85, 1.15, size=n_days)
    load_noise = np.clip(rng.normal(1.0, 0.04, size=(n_days, 24, nph)), 0.7, 1.3)
    shape = _load_shape(hours)[None, :, None]
    p_load = base[None, None, :] * shape * day_factor[:, None, None] * load_noise
    q_load = p_load * pf_tan

    p_pv = np.zeros((n_days, 24, nph))
    if len(feeder.pvs) > 0:
        cloud = rng.uniform(0.55, 1.0, size=n_days)
        dips = 1.0 - (1.0 - cloud)[:, None, None] * rng.uniform(
            0.0, 0.8, size=(n_days, 24, len(feeder.pvs)))
        sky = _pv_shape(hours)[None, :, None]
        out = (feeder.pv_p_rated_pu[None, None, :] * sky
               * cloud[:, None, None] * dips)
        out = np.clip(out, 0.0, feeder.pv_p_rated_pu[None, None, :])
        for k, idx in enumerate(feeder.pv_npidx):
            p_pv[:, :, idx] += out[:, :, k]

    return ProfileSet(p_load=p_load, p_pv=p_pv, q_load=q_load)


# -- CSV ingestion -----------------------------------------------------------

def _col(bus, phase, kind):
    return "%s_%d_%s" % (kind, bus, phase)


def save_profiles_csv(profiles, feeder, path):
    """Write profiles in the documented CSV layout (physical units)."""
    load_nps = [feeder.node_phases[k] for k in feeder.nonslack_indices]
    pv_nps = sorted({feeder.node_phases[k] for k in feeder.pv_npidx})
    header = (["day", "hour"]
              + [_col(b, p, "pload_mw") for b, p in load_nps]
              + [_col(b, p, "qload_mvar") for b, p in load_nps]
              + [_col(b, p, "ppv_mw") for b, p in pv_nps])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for d in range(profiles.n_days):
            for h in range(24):
                pl, pv, ql = profiles.at(d, h)
                row = [d, h]
                row += ["%.9g" % feeder.pu_to_mva(pl[feeder.npidx(b, p)])
                        for b, p in load_nps]
                row += ["%.9g" % feeder.pu_to_mva(ql[feeder.npidx(b, p)])
                        for b, p in load_nps]
                row += ["%.9g" % feeder.pu_to_mva(pv[feeder.npidx(b, p)])
                        for b, p in pv_nps]
                w.writerow(row)


def load_profiles_csv(path, feeder):
    """Read profiles from CSV; unknown node-phase columns are an error,
    missing ones default to zero."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "day" not in reader.fieldnames \
                or "hour" not in reader.fieldnames:
            raise ValueError("profile CSV needs day and hour columns")
        targets = {}
        for name in reader.fieldnames:
            if name in ("day", "hour"):
                continue
            try:
                kind, bus, phase = name.rsplit("_", 2)
            except ValueError:
                raise ValueError("unrecognised profile column %r" % name)
            if kind not in ("pload_mw", "qload_mvar", "ppv_mw"):
                raise ValueError("unrecognised profile column %r" % name)
            targets[name] = (kind, feeder.npidx(int(bus), phase))
        rows = list(reader)
    if not rows:
        raise ValueError("profile CSV has no data rows")
    n_days = max(int(r["day"]) for r in rows) + 1
    shape = (n_days, 24, feeder.nph)
    p_load = np.zeros(shape)
    q_load = np.zeros(shape)
    p_pv = np.zeros(shape)
    dest = {"pload_mw": p_load, "qload_mvar": q_load, "ppv_mw": p_pv}
    seen = np.zeros((n_days, 24), dtype=bool)
    for r in rows:
        d, h = int(r["day"]), int(r["hour"])
        if not 0 <= h < 24:
            raise ValueError("hour %d out of range" % h)
        seen[d, h] = True
        for name, (kind, idx) in targets.items():
            dest[kind][d, h, idx] += feeder.mva_to_pu(float(r[name]))
    if not np.all(seen):
        d, h = np.argwhere(~seen)[0]
        raise ValueError("profile CSV missing day %d hour %d" % (d, h))
    return ProfileSet(p_load=p_load, p_pv=p_pv, q_load=q_load)


# -- fast-fluctuation ramp ----------------------------------------------------

def pv_ramp_mw(seconds=60, p_high_mw=0.6, p_low_mw=0.3):
    """Per-second PV output trace: linear drop to p_low at mid-ramp, then a
    symmetric recovery."""
    t = np.arange(seconds, dtype=float)
    half = seconds / 2.0
    down = p_high_mw + (p_low_mw - p_high_mw) * (t / half)
    up = p_low_mw + (p_high_mw - p_low_mw) * ((t - half) / half)
    return np.where(t < half, down, up)


def ramp_profiles(feeder, base_p_load, base_q_load, seconds=60,
                  p_high_mw=0.6, p_low_mw=0.3):
    """One-second-resolution States for the cloud-transient scenario.

    Loads are frozen at the given operating point; every PV unit follows the
    ramp (clipped to its rating).  Returns (p_load, p_pv, q_load) arrays of
    shape (seconds, nph).
    """
    ramp = feeder.mva_to_pu(pv_ramp_mw(seconds, p_high_mw, p_low_mw))
    n = len(ramp)
    p_load = np.tile(base_p_load, (n, 1))
    q_load = np.tile(base_q_load, (n, 1))
    p_pv = np.zeros((n, feeder.nph))
    for k, idx in enumerate(feeder.pv_npidx):
        p_pv[:, idx] += np.minimum(ramp, feeder.pv_p_rated_pu[k])
    return p_load, p_pv, q_load
