"""Minimal fully-connected network engine: explicit forward, manual
backpropagation, plain SGD, soft target tracking, npz checkpoints.

Shared by the voltage surrogate, the actor and the critic.  Everything is
float64; shapes follow the row-batch convention (inputs ``(B, in_dim)``,
weights ``(fan_in, fan_out)``).  1-D inputs are accepted and returned 1-D.

Plain SGD is the default update rule.  An optional momentum mode exists for
experimentation but stays off in every shipped configuration.
"""

from __future__ import annotations

import json
import zipfile

import numpy as np

CHECKPOINT_VERSION = 1

ACTIVATIONS = ("tanh", "linear", "scaled_tanh")


def _apply_act(z, act, scale):
    if act == "tanh":
        return np.tanh(z)
    if act == "linear":
        return z
    if act == "scaled_tanh":
        return scale * np.tanh(z)
    raise ValueError("unknown activation %r" % act)


def _act_deriv(a, act, scale):
    # derivative w.r.t. the pre-activation, from the cached output a
    if act == "tanh":
        return 1.0 - a * a
    if act == "linear":
        return np.ones_like(a)
    if act == "scaled_tanh":
        return scale - a * a / scale
    raise ValueError("unknown activation %r" % act)


class Mlp:
    """Feedforward net as parallel lists of weights/biases/activations."""

    def __init__(self, weights, biases, activations, scales=None):
        self.w = [np.asarray(w, dtype=float) for w in weights]
        self.b = [np.asarray(b, dtype=float) for b in biases]
        self.acts = list(activations)
        self.scales = [1.0] * len(self.w) if scales is None else [float(s) for s in scales]
        if not (len(self.w) == len(self.b) == len(self.acts) == len(self.scales)):
            raise ValueError("layer lists must have equal length")
        for k, (w, b) in enumerate(zip(self.w, self.b)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("layer %d: shapes %s / %s do not chain"
                                 % (k, w.shape, b.shape))
            if k > 0 and w.shape[0] != self.w[k - 1].shape[1]:
                raise ValueError("layer %d: fan-in %d != previous fan-out %d"
                                 % (k, w.shape[0], self.w[k - 1].shape[1]))
            if self.acts[k] not in ACTIVATIONS:
                raise ValueError("unknown activation %r" % self.acts[k])

    @classmethod
    def init(cls, dims, hidden_act="tanh", out_act="linear", seed=0, out_scale=1.0):
        """Seeded init: weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
        biases zero."""
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        rng = np.random.default_rng(seed)
        ws, bs, acts, scales = [], [], [], []
        for k in range(len(dims) - 1):
            fan_in, fan_out = dims[k], dims[k + 1]
            bound = 1.0 / np.sqrt(fan_in)
            ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
            last = k == len(dims) - 2
            acts.append(out_act if last else hidden_act)
            scales.append(out_scale if last else 1.0)
        return cls(ws, bs, acts, scales)

    @property
    def in_dim(self):
        return self.w[0].shape[0]

    @property
    def out_dim(self):
        return self.w[-1].shape[1]

    @property
    def dims(self):
        return [self.in_dim] + [w.shape[1] for w in self.w]

    def copy(self):
        return Mlp([w.copy() for w in self.w], [b.copy() for b in self.b],
                   list(self.acts), list(self.scales))

    # -- forward / backward ------------------------------------------------

    def forward(self, x):
        y, _ = self.forward_cached(x, keep=False)
        return y

    def forward_cached(self, x, keep=True):
        """Run the net; optionally keep the per-layer tape for backward.

        Returns (y, cache).  cache is a list of (layer_input, layer_output)
        pairs, or None when keep is False.
        """
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        a = x[None, :] if squeeze else x
        if a.shape[1] != self.in_dim:
            raise ValueError("input dim %d != %d" % (a.shape[1], self.in_dim))
        cache = [] if keep else None
        for w, b, act, sc in zip(self.w, self.b, self.acts, self.scales):
            z = a @ w + b
            out = _apply_act(z, act, sc)
            if keep:
                cache.append((a, out))
            a = out
        return (a[0] if squeeze else a), cache

    def backward(self, cache, grad_out):
        """Reverse-mode pass from an output gradient.

        grad_out carries any loss scaling (e.g. 2*(yhat-y)/B for a batch-mean
        squared error); gradients are summed over the batch.  Returns
        (grads, grad_in) where grads is a list of (dW, db) mirroring the
        layers.
        """
        if cache is None or len(cache) != len(self.w):
            raise ValueError("stale or missing forward cache")
        g = np.asarray(grad_out, dtype=float)
        squeeze = g.ndim == 1
        if squeeze:
            g = g[None, :]
        if g.shape != (cache[-1][1].shape[0], self.out_dim):
            raise ValueError("grad_out shape %s does not match cached forward"
                             % (g.shape,))
        grads = [None] * len(self.w)
        for k in range(len(self.w) - 1, -1, -1):
            a_in, a_out = cache[k]
            gz = g * _act_deriv(a_out, self.acts[k], self.scales[k])
            grads[k] = (a_in.T @ gz, gz.sum(axis=0))
            g = gz @ self.w[k].T
        return grads, (g[0] if squeeze else g)

    # -- updates -------------------------------------------------------------

    def sgd_step(self, grads, lr, momentum=0.0):
        """In-place theta <- theta - lr * grad.  Aborts on NaN gradients."""
        if lr <= 0:
            raise ValueError("lr must be > 0")
        if len(grads) != len(self.w):
            raise ValueError("gradient set does not mirror the net")
        for k, (dw, db) in enumerate(grads):
            if dw.shape != self.w[k].shape or db.shape != self.b[k].shape:
                raise ValueError("gradient shape mismatch at layer %d" % k)
            if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
                raise FloatingPointError("non-finite gradient at layer %d" % k)
        if momentum:
            if not hasattr(self, "_vel"):
                self._vel = [(np.zeros_like(w), np.zeros_like(b))
                             for w, b in zip(self.w, self.b)]
            for k, (dw, db) in enumerate(grads):
                vw, vb = self._vel[k]
                vw *= momentum
                vw += dw
                vb *= momentum
                vb += db
                self.w[k] -= lr * vw
                self.b[k] -= lr * vb
        else:
            for k, (dw, db) in enumerate(grads):
                self.w[k] -= lr * dw
                self.b[k] -= lr * db
        for k in range(len(self.w)):
            if not (np.all(np.isfinite(self.w[k])) and np.all(np.isfinite(self.b[k]))):
                raise FloatingPointError("non-finite parameters at layer %d" % k)
        return self


def soft_update(target, online, tau):
    """theta' <- tau * theta + (1 - tau) * theta', elementwise, in place.

    tau = 1 copies the online net exactly.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must be in (0, 1]")
    if target.dims != online.dims or target.acts != online.acts:
        raise ValueError("architecture mismatch between target and online nets")
    for k in range(len(target.w)):
        if tau == 1.0:
            target.w[k][:] = online.w[k]
            target.b[k][:] = online.b[k]
        else:
            target.w[k] *= 1.0 - tau
            target.w[k] += tau * online.w[k]
            target.b[k] *= 1.0 - tau
            target.b[k] += tau * online.b[k]
    return target


# -- checkpoints -------------------------------------------------------------

def save_mlp(net, path, extras=None, meta=None):
    """Write an npz checkpoint; float64 arrays round-trip bit-exactly.

    extras: named float arrays stored alongside the parameters (e.g.
    normalisation stats).  meta: JSON-serialisable dict.
    """
    payload = {
        "version": np.array(CHECKPOINT_VERSION),
        "meta": np.array(json.dumps({
            "dims": net.dims,
            "acts": net.acts,
            "scales": net.scales,
            "user": meta or {},
        })),
    }
    for k, (w, b) in enumerate(zip(net.w, net.b)):
        payload["w%d" % k] = w
        payload["b%d" % k] = b
    for name, arr in (extras or {}).items():
        payload["extra_" + name] = np.asarray(arr)
    np.savez(path, **payload)


def load_mlp(path):
    """Read a checkpoint; returns (net, extras, meta)."""
    try:
        with np.load(path, allow_pickle=False) as data:
            if "version" not in data:
                raise ValueError("not a checkpoint: missing version field")
            version = int(data["version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError("checkpoint version %d unsupported" % version)
            info = json.loads(str(data["meta"]))
            dims = info["dims"]
            n_layers = len(dims) - 1
            ws, bs = [], []
            for k in range(n_layers):
                w = data["w%d" % k]
                b = data["b%d" % k]
                if w.shape != (dims[k], dims[k + 1]):
                    raise ValueError("checkpoint layer %d shape mismatch" % k)
                ws.append(w)
                bs.append(b)
            net = Mlp(ws, bs, info["acts"], info["scales"])
            extras = {name[len("extra_"):]: data[name]
                      for name in data.files if name.startswith("extra_")}
            return net, extras, info.get("user", {})
    except (OSError, KeyError, json.JSONDecodeError, zipfile.BadZipFile) as exc:
        raise ValueError("unreadable checkpoint %s: %s" % (path, exc))
