"""Multi-scale progressive fusion network with hand-written reverse mode.

Layout (``L = levels``):

* color encoder: 3x3 conv + ReLU + max-pool, then ``L - 1`` rounds of
  dense block + convpool.  Feature ``j`` (1-based) sits at ``H / 2**j``.
* depth encoder: two 3x3 conv + ReLU at full resolution, then ``L``
  convpool stages.  Feature ``j`` sits at ``H / 2**(j - 1)``.
* reconstruction: a first fusion of the two deepest features, ``L - 1``
  middle fusions (concat -> conv -> 2x up), and a last fusion of the
  previous feature, the raw color image and the first depth feature,
  followed by a linear 1-channel conv.  The result is added to the
  bicubic-upscaled depth and clipped to [0, 1].
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .imaging import ColorImage, DepthMap, FeatureMap, bicubic_resample
from .losses import LossValue, LossWeights, total_loss

SCALES = (2, 4, 8, 16)
UPSAMPLE_MODES = ("nearest", "transposed")
OUTPUT_GAIN = 0.1


@dataclass(frozen=True)
class NetworkConfig:
    levels: int = 3
    base_channels: int = 8
    dense_layers_per_block: int = 2
    dense_growth: int = 4
    transition_channels: int = 4
    depth_channels: int = 4
    decoder_channels: tuple = (3, 3, 3, 3)
    upsample_mode: str = "nearest"
    residual: bool = True
    seed: int = 0
    min_input_size: int = 16

    def __post_init__(self):
        dec = self.decoder_channels
        if isinstance(dec, int):
            dec = (dec,) * (self.levels + 1)
        object.__setattr__(self, "decoder_channels", tuple(int(c) for c in dec))
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        for name in ("base_channels", "dense_layers_per_block", "dense_growth",
                     "transition_channels", "depth_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if len(self.decoder_channels) != self.levels + 1:
            raise ValueError(f"decoder_channels needs {self.levels + 1} entries "
                             f"(first, {self.levels - 1} middle, last), got {len(self.decoder_channels)}")
        if min(self.decoder_channels) < 1:
            raise ValueError("decoder channel widths must be >= 1")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ValueError(f"upsample_mode must be one of {UPSAMPLE_MODES}")
        if self.min_input_size // 2 ** self.levels < 1:
            raise ValueError(f"{self.levels} levels collapse a {self.min_input_size}px input below 1x1")

    @classmethod
    def toy(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def paper_scale(cls, **overrides):
        kw = dict(levels=5, base_channels=64, dense_layers_per_block=6, dense_growth=32,
                  transition_channels=128, depth_channels=64, decoder_channels=64,
                  min_input_size=128)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self):
        d = asdict(self)
        d["decoder_channels"] = list(self.decoder_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def color_channels(self, j):
        return self.base_channels if j == 1 else self.transition_channels


@dataclass(frozen=True)
class FusionStep:
    i: int
    depth_source: int
    color_source: int
    resolution: tuple


@dataclass(frozen=True)
class FusionSchedule:
    """Which encoder features each middle fusion consumes.

    With ``k = levels + 2`` modules, step ``i`` takes color feature
    ``k - i - 2`` and depth feature ``k - i - 1``: the only pairing whose
    resolutions agree, because the depth branch starts at full size.
    """

    k: int
    steps: tuple
    input_size: tuple

    @classmethod
    def build(cls, config, height, width):
        L = config.levels
        d = 2 ** L
        if height % d or width % d:
            raise ValueError(f"input {height}x{width} is not divisible by 2**levels = {d}")
        k = L + 2
        color_res = {j: (height >> j, width >> j) for j in range(1, L + 1)}
        depth_res = {j: (height >> (j - 1), width >> (j - 1)) for j in range(1, L + 2)}
        if color_res[L] != depth_res[L + 1]:
            raise ValueError("deepest color and depth features disagree in size")
        steps = []
        for i in range(1, L):
            m, n = k - i - 2, k - i - 1
            if color_res[m] != depth_res[n]:
                raise ValueError(f"fusion step {i}: color {color_res[m]} vs depth {depth_res[n]}")
            steps.append(FusionStep(i, n, m, color_res[m]))
        return cls(k, tuple(steps), (height, width))


def parameter_shapes(config):
    """Ordered ``name -> shape`` map for every weight and bias."""
    shapes = {}

    def conv(name, cin, cout, k=3):
        shapes[name + ".w"] = (cout, cin, k, k)
        shapes[name + ".b"] = (cout,)

    def up(name, cin, cout):
        if config.upsample_mode == "transposed":
            shapes[name + ".w"] = (cin, cout, 2, 2)
            shapes[name + ".b"] = (cout,)
        else:
            conv(name, cin, cout)

    L, g = config.levels, config.dense_growth
    conv("color.conv0", 3, config.base_channels)
    for lvl in range(2, L + 1):
        cin = config.color_channels(lvl - 1)
        for j in range(config.dense_layers_per_block):
            conv(f"color.dense{lvl}.layer{j}", cin + j * g, g)
        conv(f"color.pool{lvl}", cin + config.dense_layers_per_block * g, config.transition_channels)
    dc = config.depth_channels
    conv("depth.conv0", 1, dc)
    conv("depth.conv1", dc, dc)
    for j in range(2, L + 2):
        conv(f"depth.pool{j}", dc, dc)
    dec = config.decoder_channels
    up("recon.first.up", config.color_channels(L) + dc, dec[0])
    for i in range(1, L):
        color_idx = L - i
        conv(f"recon.fuse{i}.conv", dec[i - 1] + config.color_channels(color_idx) + dc, dec[i])
        up(f"recon.fuse{i}.up", dec[i], dec[i])
    conv("recon.last.conv", dec[L - 1] + 3 + dc, dec[L])
    conv("recon.last.refine", dec[L], dec[L])
    conv("recon.out", dec[L], 1)
    return shapes


@dataclass(eq=False)
class Parameters:
    """Named weights and biases plus the config they were built for."""

    config: NetworkConfig
    arrays: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def items(self):
        return self.arrays.items()

    def count(self):
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self):
        return Parameters(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype):
        return Parameters(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def zeros_like(self):
        return Parameters(self.config, {k: np.zeros_like(v) for k, v in self.arrays.items()})

    def validate(self):
        expected = parameter_shapes(self.config)
        if list(expected) != list(self.arrays):
            missing = set(expected) ^ set(self.arrays)
            raise ValueError(f"parameter names do not match config: {sorted(missing)[:5]}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"parameter {name}: shape {self.arrays[name].shape} != {shape}")
            if not np.all(np.isfinite(self.arrays[name])):
                raise ValueError(f"parameter {name} has non-finite entries")


def init_parameters(config, dtype=np.float64):
    """He-normal weights (fan-in scaled), zero biases, seeded by ``config.seed``.

    The linear output conv is damped by ``OUTPUT_GAIN`` so an untrained
    network starts close to plain bicubic upscaling.
    """
    rng = np.random.default_rng(config.seed)
    arrays = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape, dtype=dtype)
            continue
        if config.upsample_mode == "transposed" and name.endswith(".up.w"):
            fan_in = shape[0]  # stride-2 2x2: one input pixel per channel
        else:
            fan_in = shape[1] * shape[2] * shape[3]
        std = np.sqrt(2.0 / fan_in)
        if name == "recon.out.w":
            std *= OUTPUT_GAIN
        arrays[name] = (rng.standard_normal(shape) * std).astype(dtype)
    return Parameters(config, arrays)


# --- reverse-mode tape --------------------------------------------------

class _Var:
    __slots__ = ("value", "grad", "backward")

    def __init__(self, value, backward=None):
        self.value = value
        self.grad = None
        self.backward = backward

    def accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g


def _acc_param(grads, name, g):
    prev = grads.get(name)
    grads[name] = g if prev is None else prev + g


class _Tape:
    """Records backward closures; ``trace`` (a list) collects the ReLU
    masks and pooling choices so callers can detect kink crossings."""

    def __init__(self, params, trace=None):
        self.params = params
        self.nodes = []
        self.param_grads = {}
        self.trace = trace

    def _node(self, value, backward):
        v = _Var(value, backward)
        self.nodes.append(v)
        return v


    def conv(self, x, name, relu=True):
        w, b = self.params[name + ".w"], self.params[name + ".b"]
        out = kernels.conv2d(x.value, w, b)
        grads = self.param_grads  # closures hold this, not the tape, so no ref cycle
        if relu:
            np.maximum(out, 0.0, out=out)
            if self.trace is not None:
                self.trace.append(out > 0)

        def back(g):
            if relu:
                g = g * (out > 0)
            gx, gw, gb = kernels.conv2d_backward(x.value, w, g)
            _acc_param(grads, name + ".w", gw)
            _acc_param(grads, name + ".b", gb)
            x.accumulate(gx)

        return self._node(out, back)

    def up(self, x, name):
        """2x upsampling stage: nearest + conv + ReLU, or transposed conv + ReLU."""
        if self.params.config.upsample_mode == "nearest":
            return self.conv(self.nearest(x), name)
        w, b = self.params[name + ".w"], self.params[name + ".b"]
        out = np.maximum(kernels.conv_transpose2(x.value, w, b), 0.0)
        grads = self.param_grads
        if self.trace is not None:
            self.trace.append(out > 0)

        def back(g):
            gx, gw, gb = kernels.conv_transpose2_backward(x.value, w, g * (out > 0))
            _acc_param(grads, name + ".w", gw)
            _acc_param(grads, name + ".b", gb)
            x.accumulate(gx)

        return self._node(out, back)

    def nearest(self, x):
        return self._node(kernels.upsample2(x.value),
                          lambda g: x.accumulate(kernels.upsample2_backward(g)))

    def pool(self, x):
        out, idx = kernels.maxpool2(x.value)
        if self.trace is not None:
            self.trace.append(idx)
        return self._node(out, lambda g: x.accumulate(kernels.maxpool2_backward(g, idx)))

    def concat(self, xs):
        sizes = np.cumsum([v.value.shape[1] for v in xs])[:-1]

        def back(g):
            for v, part in zip(xs, np.split(g, sizes, axis=1)):
                v.accumulate(part)

        return self._node(np.concatenate([v.value for v in xs], axis=1), back)

    def run_backward(self, out, gout):
        out.grad = gout
        for node in reversed(self.nodes):
            if node.grad is not None and node.backward is not None:
                node.backward(node.grad)
                node.grad = None


def _color_branch(tape, color):
    cfg = tape.params.config
    feats = [tape.pool(tape.conv(color, "color.conv0"))]
    for lvl in range(2, cfg.levels + 1):
        stack = [feats[-1]]
        for j in range(cfg.dense_layers_per_block):
            inp = stack[0] if len(stack) == 1 else tape.concat(stack)
            stack.append(tape.conv(inp, f"color.dense{lvl}.layer{j}"))
        feats.append(tape.pool(tape.conv(tape.concat(stack), f"color.pool{lvl}")))
    return feats


def _depth_branch(tape, depth):
    cfg = tape.params.config
    feats = [tape.conv(tape.conv(depth, "depth.conv0"), "depth.conv1")]
    for j in range(2, cfg.levels + 2):
        feats.append(tape.pool(tape.conv(feats[-1], f"depth.pool{j}")))
    return feats


def _fuse(tape, prev, color_feat, depth_feat, i):
    fused = tape.conv(tape.concat([prev, color_feat, depth_feat]), f"recon.fuse{i}.conv")
    return tape.up(fused, f"recon.fuse{i}.up")


def _network(tape, depth_up, color):
    """Full graph on batched NCHW inputs; returns the residual node."""
    cfg = tape.params.config
    h, w = depth_up.value.shape[2:]
    schedule = FusionSchedule.build(cfg, h, w)
    cf = _color_branch(tape, color)
    df = _depth_branch(tape, depth_up)
    x = tape.up(tape.concat([cf[-1], df[-1]]), "recon.first.up")
    for step in schedule.steps:
        x = _fuse(tape, x, cf[step.color_source - 1], df[step.depth_source - 1], step.i)
    x = tape.conv(tape.concat([x, color, df[0]]), "recon.last.conv")
    x = tape.conv(x, "recon.last.refine")
    return tape.conv(x, "recon.out", relu=False)


# --- public single-image API ---------------------------------------------

def _as_nchw(arr):
    arr = np.asarray(arr)
    if arr.ndim == 2:
        return arr[None, None]
    return arr.transpose(2, 0, 1)[None]


def _dtype(p):
    return next(iter(p.arrays.values())).dtype


def _check_color(img, config):
    d = 2 ** config.levels
    if img.height % d or img.width % d:
        raise ValueError(f"color image {img.height}x{img.width} is not divisible by {d}")


def color_encoder_forward(img, p):
    _check_color(img, p.config)
    tape = _Tape(p)
    x = _Var(_as_nchw(img.values).astype(_dtype(p)))
    return [FeatureMap(f.value[0], f"color{j}") for j, f in enumerate(_color_branch(tape, x), 1)]


def depth_encoder_forward(depth_up, p, color_shape=None):
    values = getattr(depth_up, "values", depth_up)
    if color_shape is not None and tuple(values.shape) != tuple(color_shape):
        raise ValueError(f"depth {values.shape} does not match color {tuple(color_shape)}")
    d = 2 ** p.config.levels
    if values.shape[0] % d or values.shape[1] % d:
        raise ValueError(f"depth {values.shape} is not divisible by {d}")
    tape = _Tape(p)
    x = _Var(_as_nchw(values).astype(_dtype(p)))
    return [FeatureMap(f.value[0], f"depth{j}") for j, f in enumerate(_depth_branch(tape, x), 1)]


def fusion_step(prev, color_feat, depth_feat, p, step, grad_output=None):
    """One middle fusion: concat -> conv + ReLU -> 2x up stage.

    With ``grad_output`` the gradients of ``sum(out * grad_output)`` with
    respect to the three inputs are returned as well.
    """
    feats = [np.asarray(getattr(f, "values", f)) for f in (prev, color_feat, depth_feat)]
    if len({f.shape[1:] for f in feats}) != 1:
        raise ValueError(f"fusion inputs disagree spatially: {[f.shape[1:] for f in feats]}")
    tape = _Tape(p)
    ins = [_Var(f[None].astype(_dtype(p))) for f in feats]
    out = _fuse(tape, *ins, step)
    result = FeatureMap(out.value[0], f"recon{step}")
    if grad_output is None:
        return result
    tape.run_backward(out, np.asarray(grad_output)[None])
    return result, [v.grad[0] for v in ins]


def validate_pair(lr_shape, hr_shape, config):
    """Return the integer scale factor or raise for an unusable pair."""
    lh, lw = lr_shape
    hh, hw = hr_shape
    if hh % lh or hw % lw or hh // lh != hw // lw:
        raise ValueError(f"color {hh}x{hw} is not an integer multiple of depth {lh}x{lw}")
    s = hh // lh
    if s not in SCALES:
        raise ValueError(f"scale {s} not in {SCALES}")
    d = 2 ** config.levels
    if hh % d or hw % d:
        raise ValueError(f"color {hh}x{hw} is not divisible by 2**levels = {d}")
    return s


def upscale_input(lr_values, hr_shape):
    return bicubic_resample(lr_values, *hr_shape)


def forward_batch(p, depth_up, color, tape=None):
    """Batched forward on ``(N,1,H,W)`` upscaled depth and ``(N,3,H,W)`` color.

    Returns ``(unclipped_output, tape, residual_node)``.
    """
    tape = _Tape(p) if tape is None else tape
    res = _network(tape, _Var(depth_up), _Var(color))
    out = depth_up + res.value if p.config.residual else res.value
    return out, tape, res


def forward(lr_depth, hr_color, p):
    validate_pair(lr_depth.shape, hr_color.shape, p.config)
    dt = _dtype(p)
    up = upscale_input(lr_depth.values, hr_color.shape)
    out, _, _ = forward_batch(p, up[None, None].astype(dt), _as_nchw(hr_color.values).astype(dt))
    return DepthMap(np.clip(out[0, 0], 0.0, 1.0).astype(np.float64), unit_scale=lr_depth.unit_scale)


def batch_loss_gradients(p, depth_up, color, gt, w):
    """Mean per-sample loss over a batch and the parameter gradients."""
    out, tape, res = forward_batch(p, depth_up, color)
    pred = np.clip(out, 0.0, 1.0)
    inside = (out > 0.0) & (out < 1.0)
    n = out.shape[0]
    g_out = np.empty_like(out)
    values = []
    for s in range(n):
        lv = total_loss(pred[s, 0], gt[s, 0], w)
        values.append(lv)
        g_out[s, 0] = lv.grad_wrt_prediction / n
    g_out *= inside
    tape.run_backward(res, g_out.astype(out.dtype))
    grads = {name: tape.param_grads.get(name, np.zeros_like(a)) for name, a in p.items()}
    mean = LossValue(
        total=float(np.mean([v.total for v in values])),
        l1=float(np.mean([v.l1 for v in values])),
        edge=float(np.mean([v.edge for v in values])),
        structure=float(np.mean([v.structure for v in values])),
        grad_wrt_prediction=g_out[:, 0],
    )
    return mean, grads, pred[:, 0]


def sample_arrays(samples, dtype=np.float64):
    """Stack samples into the ``(depth_up, color, gt)`` batch arrays."""
    ups, cols, gts = [], [], []
    for s in samples:
        ups.append(upscale_input(s.lr_depth.values, s.hr_color.shape))
        cols.append(s.hr_color.values.transpose(2, 0, 1))
        gts.append(s.hr_depth_gt.values)
    return (np.stack(ups)[:, None].astype(dtype), np.stack(cols).astype(dtype),
            np.stack(gts)[:, None].astype(np.float64))


def loss_gradients(sample, p, w=None):
    w = LossWeights() if w is None else w
    validate_pair(sample.lr_depth.shape, sample.hr_color.shape, p.config)
    up, col, gt = sample_arrays([sample], _dtype(p))
    value, grads, _ = batch_loss_gradients(p, up, col, gt, w)
    return value, grads


# --- checkpoints --------------------------------------------------------

MAGIC = b"DSRCKPT1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(p, path, config=None):
    """Write ``MAGIC | u64 header length | JSON header | raw little-endian arrays``."""
    config = p.config if config is None else config
    records, payloads = [], []
    for name, arr in p.items():
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        records.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                        "nbytes": le.nbytes})
        payloads.append(le.tobytes())
    header = json.dumps({"config": config.to_dict(), "arrays": records}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 8 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"corrupt checkpoint {path}: bad magic or truncated preamble")
    hlen = int.from_bytes(data[len(MAGIC):len(MAGIC) + 8], "little")
    start = len(MAGIC) + 8
    if start + hlen > len(data):
        raise CheckpointError(f"corrupt checkpoint {path}: header truncated")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
        config = NetworkConfig.from_dict(header["config"])
        records = header["arrays"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: unreadable header ({exc})") from exc
    offset = start + hlen
    arrays = {}
    for rec in records:
        name = rec["name"]
        dt = np.dtype(rec["dtype"])
        shape = tuple(rec["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if rec["nbytes"] != expected:
            raise CheckpointError(f"array {name}: header says {rec['nbytes']} bytes, shape needs {expected}")
        if offset + expected > len(data):
            raise CheckpointError(f"array {name}: payload truncated "
                                  f"({len(data) - offset} of {expected} bytes present)")
        arr = np.frombuffer(data, dtype=dt, count=expected // dt.itemsize, offset=offset)
        arrays[name] = arr.reshape(shape).astype(dt.newbyteorder("="))
        offset += expected
    if offset != len(data):
        raise CheckpointError(f"corrupt checkpoint {path}: {len(data) - offset} trailing bytes")
    p = Parameters(config, arrays)
    try:
        p.validate()
    except ValueError as exc:
        raise CheckpointError(f"checkpoint {path} does not match its config: {exc}") from exc
    return p, config
