"""Learned voltage model: dataset generation, training, prediction, scoring.

The surrogate regresses non-slack voltage magnitudes on net node-phase power
injections.  Samples come from the ground-truth solver under profile-driven
operating points with reactive controls drawn uniformly from the device
feasibility boxes.  Inputs are standardised per node-phase on the training
split; targets are stored as offsets from 1.0 p.u. so the tanh layers see
centred data.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .nn import Mlp, load_mlp, save_mlp
from .powerflow import Injection, VoltageCollapseError, ZBusSolver

log = logging.getLogger(__name__)

TARGET_OFFSET = 1.0  # predicted quantity is |V| - 1.0


@dataclass(frozen=True)
class Sample:
    """One solver-verified (injection, voltage) triple, full layout."""

    p: np.ndarray
    q: np.ndarray
    v_mag: np.ndarray


@dataclass
class Dataset:
    """Stacked samples plus a deterministic train/test split."""

    p: np.ndarray        # (n, nph) net active injections
    q: np.ndarray        # (n, nph) net reactive injections
    v: np.ndarray        # (n, nph) converged |V|
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __len__(self):
        return self.p.shape[0]

    def sample(self, i):
        return Sample(self.p[i], self.q[i], self.v[i])


@dataclass
class SurrogateConfig:
    hidden: tuple[int, ...] = (400, 400)
    batch: int = 32
    lr: float = 1e-4
    epochs: int = 2000
    seed: int = 0
    lr_decay: float = 1.0  # per-epoch multiplier on the SGD step size


@dataclass
class SurrogateModel:
    """Trained net plus the feeder-layout and normalisation metadata needed
    to map full NodePhaseVectors in and out."""

    net: Mlp
    x_mean: np.ndarray
    x_std: np.ndarray
    nonslack_idx: np.ndarray
    nph: int
    v0: float = 1.0

    def predict(self, p, q):
        return predict(self, p, q)


def random_feasible_controls(feeder, p_pv, rng):
    """Reactive setpoints drawn uniformly from the device boxes.

    PV headroom shrinks with the instantaneous active output; SVC boxes are
    fixed.  Returns a full node-phase reactive vector.
    """
    qc = feeder.zeros()
    if len(feeder.pvs):
        q_lim = np.sqrt(np.maximum(
            feeder.pv_s_rated_pu ** 2 - p_pv[feeder.pv_npidx] ** 2, 0.0))
        draws = rng.uniform(-q_lim, q_lim)
        for k, idx in enumerate(feeder.pv_npidx):
            qc[idx] += draws[k]
    if len(feeder.svcs):
        draws = rng.uniform(feeder.svc_q_min_pu, feeder.svc_q_max_pu)
        for k, idx in enumerate(feeder.svc_npidx):
            qc[idx] += draws[k]
    return qc


def generate_dataset(feeder, profiles, n, seed, train_frac=10000.0 / 12000.0,
                     tol=1e-8, max_iter=100):
    """Solve n random operating points and record (P, Q, |V|).

    Operating points pair a uniformly drawn (day, hour) from the profiles
    with uniformly drawn feasible reactive controls.  Non-converged or
    collapsing draws are discarded and redrawn (counts logged); more than a
    50% discard rate aborts.  Bit-reproducible for fixed inputs and seed.
    """
    if n <= 0:
        raise ValueError("n must be > 0")
    rng = np.random.default_rng(seed)
    solver = ZBusSolver(feeder, tol=tol, max_iter=max_iter)
    p_rows = np.empty((n, feeder.nph))
    q_rows = np.empty((n, feeder.nph))
    v_rows = np.empty((n, feeder.nph))
    kept = 0
    discarded = 0
    while kept < n:
        day = int(rng.integers(profiles.n_days))
        hour = int(rng.integers(24))
        p_load, p_pv, q_load = profiles.at(day, hour)
        qc = random_feasible_controls(feeder, p_pv, rng)
        p = p_pv - p_load
        q = qc - q_load
        try:
            sol = solver.solve(Injection(p, q))
        except VoltageCollapseError:
            sol = None
        if sol is None or not sol.converged:
            discarded += 1
            attempts = kept + discarded
            if attempts >= 50 and discarded / attempts > 0.5:
                raise RuntimeError(
                    "dataset generation aborted: %d of %d draws failed to "
                    "converge" % (discarded, attempts))
            continue
        p_rows[kept] = p
        q_rows[kept] = q
        v_rows[kept] = np.abs(sol.v)
        kept += 1
    if discarded:
        log.info("dataset generation discarded %d non-converged draws", discarded)

    perm = rng.permutation(n)
    n_train = int(round(n * train_frac))
    return Dataset(p=p_rows, q=q_rows, v=v_rows,
                   train_idx=np.sort(perm[:n_train]),
                   test_idx=np.sort(perm[n_train:])), discarded


def _features(ds_p, ds_q, nonslack_idx):
    return np.hstack([ds_p[:, nonslack_idx], ds_q[:, nonslack_idx]])


def train_surrogate(dataset, feeder, cfg=None):
    """Minimise batch MSE with plain SGD; returns (model, per-epoch loss).

    One epoch is a full shuffled pass over the training split.  The loss
    series is the mean minibatch MSE per epoch.  NaN loss aborts with the
    epoch index.
    """
    cfg = cfg or SurrogateConfig()
    if len(dataset.train_idx) == 0:
        raise ValueError("empty training split")
    ns = feeder.nonslack_indices
    x = _features(dataset.p, dataset.q, ns)[dataset.train_idx]
    y = dataset.v[np.ix_(dataset.train_idx, ns)] - TARGET_OFFSET

    x_mean = x.mean(axis=0)
    x_std = x.std(axis=0)
    x_std[x_std == 0.0] = 1.0
    xn = (x - x_mean) / x_std

    dims = [xn.shape[1], *cfg.hidden, y.shape[1]]
    net = Mlp.init(dims, hidden_act="tanh", out_act="linear", seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)

    n = xn.shape[0]
    batch = min(cfg.batch, n)
    losses = np.empty(cfg.epochs)
    lr = cfg.lr
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            yhat, cache = net.forward_cached(xn[rows])
            err = yhat - y[rows]
            loss = float(np.mean(err * err))
            epoch_loss += loss
            n_batches += 1
            grads, _ = net.backward(cache, 2.0 * err / err.size)
            net.sgd_step(grads, lr)
        losses[epoch] = epoch_loss / n_batches
        lr *= cfg.lr_decay
        if not np.isfinite(losses[epoch]):
            raise FloatingPointError("surrogate training diverged at epoch %d"
                                     % epoch)
    model = SurrogateModel(net=net, x_mean=x_mean, x_std=x_std,
                           nonslack_idx=ns.copy(), nph=feeder.nph,
                           v0=feeder.v0)
    return model, losses


def predict(model, p, q):
    """Voltage magnitudes for one injection pair (full node-phase layout).

    Slack entries are the known fixed magnitude.
    """
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    q2 = np.atleast_2d(q)
    if p2.shape[1] != model.nph:
        raise ValueError("injection length does not match the trained layout")
    x = _features(p2, q2, model.nonslack_idx)
    yhat = model.net.forward((x - model.x_mean) / model.x_std)
    v = np.full((p2.shape[0], model.nph), model.v0)
    v[:, model.nonslack_idx] = yhat + TARGET_OFFSET
    return v[0] if single else v


def evaluate_mae(model, p, q, v_true):
    """Mean absolute voltage error over samples and non-slack node-phases.

    Returns (mae, per-node-phase MAE over the non-slack columns).
    """
    if p.shape[0] == 0:
        raise ValueError("empty evaluation set")
    vhat = predict(model, p, q)
    err = np.abs(vhat[:, model.nonslack_idx] - v_true[:, model.nonslack_idx])
    return float(err.mean()), err.mean(axis=0)


# -- persistence ---------------------------------------------------------

def save_surrogate(model, path, meta=None):
    extras = {
        "x_mean": model.x_mean,
        "x_std": model.x_std,
        "nonslack_idx": model.nonslack_idx,
        "layout": np.array([model.nph, len(model.nonslack_idx)]),
        "v0": np.array([model.v0]),
    }
    save_mlp(model.net, path, extras=extras,
             meta={"kind": "surrogate", **(meta or {})})


def load_surrogate(path):
    net, extras, meta = load_mlp(path)
    if meta.get("kind") != "surrogate":
        raise ValueError("%s is not a surrogate checkpoint" % path)
    return SurrogateModel(net=net,
                          x_mean=extras["x_mean"],
                          x_std=extras["x_std"],
                          nonslack_idx=extras["nonslack_idx"].astype(int),
                          nph=int(extras["layout"][0]),
                          v0=float(extras["v0"][0]))


def save_dataset_csv(dataset, feeder, path):
    """One sample per row; columns p_<bus>_<phase>, q_..., v_..., split."""
    names = ["%s_%d_%s" % (kind, b, ph)
             for kind in ("p", "q", "v") for b, ph in feeder.node_phases]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["split"])
        split = np.full(len(dataset), "train", dtype=object)
        split[dataset.test_idx] = "test"
        for i in range(len(dataset)):
            row = ["%.17g" % x for x in
                   np.concatenate([dataset.p[i], dataset.q[i], dataset.v[i]])]
            w.writerow(row + [split[i]])


def load_dataset_csv(path, feeder):
    expected = ["%s_%d_%s" % (kind, b, ph)
                for kind in ("p", "q", "v") for b, ph in feeder.node_phases]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != expected + ["split"]:
            raise ValueError("dataset CSV columns do not match the feeder layout")
        rows = [r for r in reader]
    n = len(rows)
    nph = feeder.nph
    data = np.array([[float(x) for x in r[:-1]] for r in rows])
    split = np.array([r[-1] for r in rows])
    return Dataset(p=data[:, :nph], q=data[:, nph:2 * nph], v=data[:, 2 * nph:],
                   train_idx=np.flatnonzero(split == "train"),
                   test_idx=np.flatnonzero(split == "test"))
