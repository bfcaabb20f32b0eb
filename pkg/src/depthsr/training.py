"""ADAM training loop, training log and finite-difference gradient checks."""
import csv
import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .losses import LossWeights
from .network import (
    batch_loss_gradients,
    forward_batch,
    init_parameters,
    sample_arrays,
)

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteLossError(RuntimeError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs: int = 5
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    scale: int = 4
    checkpoint_every: int = 0
    precision: str = "double"
    max_steps: int = 0

    def __post_init__(self):
        # zero is accepted as a dry run that leaves parameters untouched
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.precision not in ("double", "single"):
            raise ValueError("precision must be 'double' or 'single'")
        if self.max_steps < 0 or self.checkpoint_every < 0:
            raise ValueError("max_steps and checkpoint_every must be >= 0")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32


@dataclass(frozen=True)
class StepRecord:
    step: int
    epoch: int
    total: float
    l1: float
    edge: float
    structure: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    parameter_digest: str = ""
    adam: tuple = (ADAM_BETA1, ADAM_BETA2, ADAM_EPS)

    def append(self, rec):
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("training steps must increase")
        self.records.append(rec)

    def losses(self):
        return [r.total for r in self.records]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "epoch", "total", "l1", "edge", "structure", "seconds"])
            for r in self.records:
                wr.writerow([r.step, r.epoch, repr(r.total), repr(r.l1), repr(r.edge),
                             repr(r.structure), f"{r.seconds:.6f}"])


def parameter_digest(p):
    h = hashlib.sha256()
    for name, arr in p.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


class Adam:
    """Plain ADAM with a fixed learning rate."""

    def __init__(self, params, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        if self.lr == 0:
            return
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            upd = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            params.arrays[name] = (params.arrays[name] - upd).astype(params.arrays[name].dtype)


def _as_samples(data):
    from .data import PatchSet, make_sr_sample

    if isinstance(data, PatchSet):
        raise TypeError("pass SrSamples; build them from a PatchSet with make_sr_sample")
    return list(data)


def train(cfg, data, net_cfg, params=None, on_step=None):
    """Train on a list of :class:`SrSample` and return ``(params, TrainLog)``.

    ``cfg.max_steps`` (when > 0) stops early; otherwise ``cfg.epochs``
    full passes are made.  ``on_step(step, params)`` is called after each
    update.
    """
    samples = _as_samples(data)
    if not samples:
        raise ValueError("training data is empty")
    bad = [s.source_id for s in samples if s.scale != cfg.scale]
    if bad:
        raise ValueError(f"samples {bad[:3]} do not have scale {cfg.scale}")
    dtype = cfg.dtype
    p = (init_parameters(net_cfg) if params is None else params.copy()).astype(dtype)
    up, col, gt = sample_arrays(samples, dtype)
    opt = Adam(p, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    tlog = TrainLog()
    step = 0
    t0 = time.perf_counter()
    n = len(samples)
    for epoch in range(1, 10 ** 9 if cfg.max_steps else cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            value, grads, _ = batch_loss_gradients(p, up[idx], col[idx], gt[idx], cfg.loss_weights)
            step += 1
            if not np.isfinite(value.total):
                raise NonFiniteLossError(step, value.total)
            opt.step(p, grads)
            tlog.append(StepRecord(step, epoch, value.total, value.l1, value.edge,
                                   value.structure, time.perf_counter() - t0))
            if step % 50 == 0 or step == 1:
                log.info("step %d epoch %d loss %.6f", step, epoch, value.total)
            if on_step is not None:
                on_step(step, p)
            if cfg.max_steps and step >= cfg.max_steps:
                break
        if cfg.max_steps and step >= cfg.max_steps:
            break
    tlog.parameter_digest = parameter_digest(p)
    return p, tlog


def predict_batch(p, samples, batch_size=16):
    """Clipped network predictions for a list of samples, shape (N, H, W)."""
    dtype = next(iter(p.arrays.values())).dtype
    outs = []
    for start in range(0, len(samples), batch_size):
        up, col, _ = sample_arrays(samples[start:start + batch_size], dtype)
        out, _, _ = forward_batch(p, up, col)
        outs.append(np.clip(out[:, 0], 0.0, 1.0).astype(np.float64))
    return np.concatenate(outs)


# --- gradient verification ---------------------------------------------

@dataclass(frozen=True)
class GradCheckResult:
    max_relative_error: float
    checked: int
    skipped_small: int
    skipped_kinks: int
    worst_parameter: str


def _gradcheck_inputs(p, seed):
    from .network import _Tape

    d = 2 ** p.config.levels
    size = d * -(-24 // d)
    rng = np.random.default_rng(seed)
    color = rng.random((1, 3, size, size))
    lr = rng.uniform(0.35, 0.65, (size // 4, size // 4))
    from .imaging import bicubic_resample

    up = bicubic_resample(lr, size, size)[None, None]
    out, _, _ = forward_batch(p, up, color, _Tape(p))
    # keep every pixel well away from the L1 kink and the clip bounds
    offset = rng.choice([-1.0, 1.0], out.shape) * rng.uniform(0.01, 0.05, out.shape)
    gt = out + offset
    if out.min() < 0.02 or out.max() > 0.98 or gt.min() < 0.0 or gt.max() > 1.0:
        raise ValueError("gradcheck prediction drifted towards the clip bounds; "
                         "use a smaller initialization or another seed")
    return up, color, gt


def _signature(p, up, color, gt, w):
    """Loss value plus a digest of every active piecewise-linear branch."""
    from .imaging import sobel_gradients
    from .losses import total_loss
    from .network import _Tape

    trace = []
    out, _, _ = forward_batch(p, up, color, _Tape(p, trace))
    pred = np.clip(out, 0.0, 1.0)
    trace.append((out > 0.0) & (out < 1.0))
    total = 0.0
    for s in range(pred.shape[0]):
        total += total_loss(pred[s, 0], gt[s, 0], w).total
        trace.append(np.sign(pred[s, 0] - gt[s, 0]).astype(np.int8))
        if w.lambda2 > 0:
            pgx, pgy = sobel_gradients(pred[s, 0])
            tgx, tgy = sobel_gradients(gt[s, 0])
            diff = np.abs(pgx) + np.abs(pgy) - np.abs(tgx) - np.abs(tgy)
            for a in (pgx, pgy, diff):
                trace.append(np.sign(a).astype(np.int8))
    h = hashlib.sha1()
    for a in trace:
        h.update(np.ascontiguousarray(a).tobytes())
    return total / pred.shape[0], h.digest()


def grad_check_detailed(net_cfg, w=None, eps=1e-4, seed=0, max_entries=5000, params=None,
                        corrupt=None):
    """Compare analytic parameter gradients with central differences.

    Entries whose +/- perturbations activate different ReLU / pooling /
    clip / absolute-value branches are skipped (the loss is not
    differentiable across them), as are entries with
    ``|analytic| <= 1e-6``.  ``corrupt`` names a parameter whose analytic
    gradient is scaled by 1.1, as a negative control.
    """
    w = LossWeights() if w is None else w
    p = init_parameters(net_cfg) if params is None else params.copy()
    p = p.astype(np.float64)
    up, color, gt = _gradcheck_inputs(p, seed)
    _, grads, _ = batch_loss_gradients(p, up, color, gt, w)
    if corrupt is not None:
        grads[corrupt] = grads[corrupt] * 1.1
    entries = [(name, idx) for name, a in p.items() for idx in np.ndindex(a.shape)]
    if len(entries) > max_entries:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(entries), min(len(entries), max(max_entries, 500)), replace=False)
        keep = set(pick.tolist())
        # the corrupted tensor is always part of the sample
        keep.update(i for i, (name, _) in enumerate(entries) if name == corrupt)
        entries = [entries[i] for i in sorted(keep)]
    worst, worst_name = 0.0, ""
    checked = small = kinks = 0
    for name, idx in entries:
        an = float(grads[name][idx])
        if abs(an) <= 1e-6:
            small += 1
            continue
        arr = p.arrays[name]
        old = arr[idx]
        arr[idx] = old + eps
        fp, sp = _signature(p, up, color, gt, w)
        arr[idx] = old - eps
        fm, sm = _signature(p, up, color, gt, w)
        arr[idx] = old
        if sp != sm:
            kinks += 1
            continue
        num = (fp - fm) / (2.0 * eps)
        rel = abs(an - num) / max(abs(an), abs(num))
        checked += 1
        if rel > worst:
            worst, worst_name = rel, f"{name}{list(idx)}"
    return GradCheckResult(worst, checked, small, kinks, worst_name)


def grad_check(net_cfg, w=None, eps=1e-4, seed=0, **kwargs):
    """Max relative error between analytic and central-difference gradients."""
    return grad_check_detailed(net_cfg, w, eps, seed, **kwargs).max_relative_error
