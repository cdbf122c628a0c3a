"""Two-stream shared-weight CNN with a binary softmax head, in numpy.

Both input slots go through one parameter set. Internally the two streams are
stacked into a single batch of ``2N`` images, which makes weight sharing
structural: the shared filters see both halves and their gradients add up.

Activations are NHWC. Parameter layout follows the usual convention:
conv weights ``(out, in, k, k)``, fc weights ``(out, in)``. The stream output
is flattened in channel-major ``(C, H, W)`` order before concatenation.
"""

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidConfig, ShapeMismatch

EPS = 1e-12
SAME, DIFFERENT = 1, 0


@dataclass
class ModelConfig:
    input_size: int = 100
    conv_channels: tuple = (16, 16, 32, 32)
    conv_kernel: int = 3
    conv_stride: int = 1
    conv_padding: int = 1
    pool_positions: tuple = (2, 4)  # 1-based conv indices followed by a pool
    pool_kernel: int = 2
    pool_stride: int = 2
    fc_sizes: tuple = (512, 256, 2)
    dropout_keep: float = 0.5

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.pool_positions = tuple(int(p) for p in self.pool_positions)
        self.fc_sizes = tuple(int(s) for s in self.fc_sizes)
        self.validate()

    def validate(self):
        if len(self.conv_channels) != 4 or min(self.conv_channels) < 1:
            raise InvalidConfig("need exactly 4 conv layers with positive widths")
        if len(self.pool_positions) != 2 or not set(self.pool_positions) <= {1, 2, 3, 4}:
            raise InvalidConfig("need exactly 2 pooling layers after conv layers 1-4")
        if len(set(self.pool_positions)) != 2:
            raise InvalidConfig("pool positions must differ")
        if len(self.fc_sizes) != 3 or self.fc_sizes[-1] != 2 or min(self.fc_sizes) < 1:
            raise InvalidConfig("need exactly 3 fc layers ending in 2 outputs")
        if not 0 < self.dropout_keep <= 1:
            raise InvalidConfig("dropout_keep must lie in (0, 1]")
        if self.pool_kernel != self.pool_stride:
            raise InvalidConfig("only non-overlapping pooling is supported")
        if self.conv_kernel < 1 or self.conv_stride < 1 or self.conv_padding < 0:
            raise InvalidConfig("bad conv geometry")
        if min(self.stream_shape()) < 1:
            raise InvalidConfig(f"input_size {self.input_size} collapses to nothing")

    def stream_shape(self):
        """``(C, H, W)`` of the final pooled map of one stream."""
        s = self.input_size
        for i in range(1, 5):
            s = (s + 2 * self.conv_padding - self.conv_kernel) // self.conv_stride + 1
            if i in self.pool_positions:
                s = (s - self.pool_kernel) // self.pool_stride + 1
        return self.conv_channels[-1], s, s

    @property
    def stream_dim(self):
        c, h, w = self.stream_shape()
        return c * h * w

    def param_shapes(self):
        shapes = {}
        cin, k = 1, self.conv_kernel
        for i, cout in enumerate(self.conv_channels, 1):
            shapes[f"conv{i}.weight"] = (cout, cin, k, k)
            shapes[f"conv{i}.bias"] = (cout,)
            cin = cout
        fin = 2 * self.stream_dim
        for i, fout in enumerate(self.fc_sizes, 1):
            shapes[f"fc{i}.weight"] = (fout, fin)
            shapes[f"fc{i}.bias"] = (fout,)
            fin = fout
        return shapes

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict
    trained_epochs: int = 0
    rng_seed: int = 0
    metadata: dict = field(default_factory=dict)

    def copy(self):
        return ModelCheckpoint(self.config, {k: v.copy() for k, v in self.params.items()},
                               self.trained_epochs, self.rng_seed, dict(self.metadata))

    def astype(self, dtype):
        m = self.copy()
        m.params = {k: v.astype(dtype) for k, v in m.params.items()}
        return m

    def save(self, path):
        """Zip archive: ``config.json``, ``metadata.json`` and one ``.npy``
        (float32, C order) per parameter under ``params/``."""
        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("config.json", json.dumps(self.config.to_dict(), indent=1, sort_keys=True))
            meta = dict(self.metadata, trained_epochs=self.trained_epochs, rng_seed=self.rng_seed)
            zf.writestr("metadata.json", json.dumps(meta, indent=1, sort_keys=True))
            for name in sorted(self.params):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(self.params[name], dtype=np.float32))
                zf.writestr(f"params/{name}.npy", buf.getvalue())

    @classmethod
    def load(cls, path):
        with zipfile.ZipFile(path) as zf:
            config = ModelConfig.from_dict(json.loads(zf.read("config.json")))
            meta = json.loads(zf.read("metadata.json"))
            params = {}
            for name in zf.namelist():
                if name.startswith("params/") and name.endswith(".npy"):
                    params[name[7:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)))
        _check_shapes(config, params)
        epochs, seed = meta.pop("trained_epochs", 0), meta.pop("rng_seed", 0)
        return cls(config, params, epochs, seed, meta)


def _check_shapes(config, params):
    want = config.param_shapes()
    if set(want) != set(params):
        raise ShapeMismatch(f"parameter names {sorted(params)} != {sorted(want)}")
    for k, shape in want.items():
        if params[k].shape != shape:
            raise ShapeMismatch(f"{k}: {params[k].shape} != {shape}")


def init_params(config, seed, dtype=np.float32):
    """Fan-in scaled normal weights, zero biases.

    Hidden layers use the ReLU gain (std ``sqrt(2/fan_in)``); the output layer
    uses ``sqrt(1/fan_in)`` so initial predictions stay near 0.5.
    """
    if not isinstance(config, ModelConfig):
        raise InvalidConfig("config must be a ModelConfig")
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            gain = 1.0 if name == "fc3.weight" else 2.0
            params[name] = (rng.standard_normal(shape) * np.sqrt(gain / fan_in)).astype(dtype)
    return ModelCheckpoint(config, params, 0, seed)


# ---------------------------------------------------------------------------
# layer primitives (NHWC)


def _im2col(x, k, stride, pad):
    """Rows of ``k*k*C`` window values in (ky, kx, c) order."""
    n, _, _, c = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1:3]
    # (N, Ho, Wo, C, k, k) -> (N, Ho, Wo, k, k, C); this order copies much faster
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c), (n, ho, wo)


def _wmat(w):
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _conv_forward(x, w, b, stride, pad):
    cols, (n, ho, wo) = _im2col(x, w.shape[-1], stride, pad)
    y = cols @ _wmat(w).T
    y += b
    return y.reshape(n, ho, wo, -1), cols


def _conv_backward(dy, cols, w, x_shape, stride, pad, need_dx=True):
    n, h, wd, c = x_shape
    cout, _, k, _ = w.shape
    dy2 = dy.reshape(-1, cout)
    dw = (dy2.T @ cols).reshape(cout, k, k, c).transpose(0, 3, 1, 2)
    db = dy2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    if stride == 1 and pad <= k - 1:
        # full correlation of dy with the flipped, in/out-swapped kernel
        w_t = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        dx, _ = _conv_forward(dy, w_t, np.zeros(c, dtype=dy.dtype), 1, k - 1 - pad)
        return dx, dw, db
    ho, wo = dy.shape[1:3]
    dcols = (dy2 @ _wmat(w)).reshape(n, ho, wo, k, k, c)
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, i, j]
    return dxp[:, pad:pad + h, pad:pad + wd], dw, db


def _pool_forward(x, q):
    n, h, w, c = x.shape
    ho, wo = h // q, w // q
    xv = x[:, :ho * q, :wo * q].reshape(n, ho, q, wo, q, c).transpose(0, 1, 3, 5, 2, 4)
    xv = xv.reshape(n, ho, wo, c, q * q)
    idx = xv.argmax(axis=-1)  # first maximum wins ties
    out = np.take_along_axis(xv, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape, q):
    n, h, w, c = x_shape
    ho, wo = dout.shape[1:3]
    dxv = np.zeros((n, ho, wo, c, q * q), dtype=dout.dtype)
    np.put_along_axis(dxv, idx[..., None], dout[..., None], axis=-1)
    dxv = dxv.reshape(n, ho, wo, c, q, q).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * q, wo * q, c)
    if (ho * q, wo * q) == (h, w):
        return dxv
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :ho * q, :wo * q] = dxv
    return dx


def _dropout_mask(rng, shape, keep, dtype):
    return (rng.random(shape) < keep).astype(dtype) / dtype.type(keep)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# network


@dataclass
class StreamFeatures:
    per_layer_maps: list  # [(name, array (C, H, W) or (N, C, H, W))]
    last_conv: np.ndarray
    flat: np.ndarray


def _as_batch(model, images):
    x = np.asarray(images, dtype=model.params["conv1.weight"].dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    s = model.config.input_size
    if x.ndim != 3 or x.shape[1:] != (s, s):
        raise ShapeMismatch(f"expected image(s) of shape ({s}, {s}), got {np.shape(images)}")
    return x[..., None], single


def _stream(model, x, train_mode, rng, cache=None):
    """Run stacked NHWC images through the shared stream; returns the last map."""
    cfg, p = model.config, model.params
    maps = []
    first_pool = True
    for i in range(1, 5):
        w, b = p[f"conv{i}.weight"], p[f"conv{i}.bias"]
        x_in = x
        z, cols = _conv_forward(x_in, w, b, cfg.conv_stride, cfg.conv_padding)
        x = np.maximum(z, 0)
        maps.append((f"conv{i}", x))
        if cache is not None:
            cache[f"conv{i}"] = (cols, x_in.shape, z > 0)
        if i in cfg.pool_positions:
            pre = x
            x, idx = _pool_forward(pre, cfg.pool_stride)
            maps.append((f"pool{cfg.pool_positions.index(i) + 1}", x))
            if cache is not None:
                cache[f"pool@{i}"] = (idx, pre.shape)
            if first_pool:
                first_pool = False
                if train_mode and cfg.dropout_keep < 1:
                    mask = _dropout_mask(rng, x.shape, cfg.dropout_keep, x.dtype)
                    x = x * mask
                    if cache is not None:
                        cache["stream_drop"] = mask
    return x, maps


def _flatten(x):
    return x.transpose(0, 3, 1, 2).reshape(x.shape[0], -1)


def _head(model, h, train_mode, rng, cache=None):
    p, keep = model.params, model.config.dropout_keep
    for i in (1, 2, 3):
        if cache is not None:
            cache[f"fc{i}_in"] = h
        z = h @ p[f"fc{i}.weight"].T + p[f"fc{i}.bias"]
        if i == 3:
            return z
        h = np.maximum(z, 0)
        if cache is not None:
            cache[f"fc{i}_act"] = z > 0
        if train_mode and keep < 1:
            mask = _dropout_mask(rng, h.shape, keep, h.dtype)
            h = h * mask
            if cache is not None:
                cache[f"fc{i}_drop"] = mask


def stream_forward(model, image, train_mode=False, dropout_seed=None):
    """Features of one stream for a single image ``(H, W)`` or a batch ``(N, H, W)``."""
    x, single = _as_batch(model, image)
    rng = np.random.default_rng(dropout_seed)
    last, maps = _stream(model, x, train_mode, rng)
    flat = _flatten(last)
    maps = [(name, m.transpose(0, 3, 1, 2)) for name, m in maps]
    last_chw = last.transpose(0, 3, 1, 2)
    if single:
        return StreamFeatures([(n, m[0]) for n, m in maps], last_chw[0], flat[0])
    return StreamFeatures(maps, last_chw, flat)


def _run(model, image_a, image_b, train_mode, dropout_seed, cache=None):
    xa, single = _as_batch(model, image_a)
    xb, single_b = _as_batch(model, image_b)
    if xa.shape != xb.shape:
        raise ShapeMismatch("slot a and slot b batches differ in shape")
    n = xa.shape[0]
    rng = np.random.default_rng(dropout_seed)
    last, _ = _stream(model, np.concatenate([xa, xb]), train_mode, rng, cache)
    flat = _flatten(last)
    logits = _head(model, np.concatenate([flat[:n], flat[n:]], axis=1), train_mode, rng, cache)
    if cache is not None:
        cache["last_shape"] = last.shape
        cache["last"] = last
    return logits, single


def logits(model, image_a, image_b, train_mode=False, dropout_seed=None):
    z, single = _run(model, image_a, image_b, train_mode, dropout_seed)
    return z[0] if single else z


def forward(model, image_a, image_b, train_mode=False, dropout_seed=None):
    """Softmax output ``(p_different, p_same)`` per pair."""
    return softmax(logits(model, image_a, image_b, train_mode, dropout_seed))


def head_logits(model, flat_a, flat_b):
    """Eval-mode logits from already flattened stream outputs."""
    fa, fb = np.atleast_2d(flat_a), np.atleast_2d(flat_b)
    z = _head(model, np.concatenate([fa, fb], axis=1), False, None)
    return z[0] if np.ndim(flat_a) == 1 else z


def loss(probs, label):
    """Cross-entropy ``-log p[label]`` with the probability floored at 1e-12."""
    probs = np.asarray(probs)
    label = np.asarray(label, dtype=np.int64)
    p = np.take_along_axis(np.atleast_2d(probs), np.atleast_1d(label)[:, None], axis=1)[:, 0]
    out = -np.log(np.maximum(p, EPS))
    return float(out[0]) if probs.ndim == 1 else out


def _backprop(model, cache, dlogits, need_params=True):
    """Push ``dlogits`` (N, 2) back through head and streams.

    Returns ``(grads, d_last)`` where ``d_last`` is the gradient w.r.t. the
    stacked last stream maps ``(2N, H, W, C)``.
    """
    cfg, p = model.config, model.params
    grads = {}
    d = dlogits
    for i in (3, 2, 1):
        h = cache[f"fc{i}_in"]
        if need_params:
            grads[f"fc{i}.weight"] = d.T @ h
            grads[f"fc{i}.bias"] = d.sum(axis=0)
        d = d @ p[f"fc{i}.weight"]
        if i > 1:
            if f"fc{i - 1}_drop" in cache:
                d = d * cache[f"fc{i - 1}_drop"]
            d = d * cache[f"fc{i - 1}_act"]
    n = d.shape[0]
    c, hh, ww = cfg.stream_shape()
    d_flat = np.concatenate([d[:, : d.shape[1] // 2], d[:, d.shape[1] // 2:]])
    d_last = d_flat.reshape(2 * n, c, hh, ww).transpose(0, 2, 3, 1)
    if not need_params:
        return grads, d_last
    dx = d_last
    for i in (4, 3, 2, 1):
        if i in cfg.pool_positions:
            if cfg.pool_positions.index(i) == 0 and "stream_drop" in cache:
                dx = dx * cache["stream_drop"]
            idx, pre_shape = cache[f"pool@{i}"]
            dx = _pool_backward(dx, idx, pre_shape, cfg.pool_stride)
        cols, x_shape, active = cache[f"conv{i}"]
        dx = dx * active
        dx, dw, db = _conv_backward(dx, cols, p[f"conv{i}.weight"], x_shape,
                                    cfg.conv_stride, cfg.conv_padding, need_dx=i > 1)
        grads[f"conv{i}.weight"] = dw
        grads[f"conv{i}.bias"] = db
    return grads, d_last


def loss_and_grad(model, image_a, image_b, labels, train_mode=True, dropout_seed=None):
    """Mean cross-entropy over the batch, softmax outputs and exact gradients."""
    cache = {}
    z, single = _run(model, image_a, image_b, train_mode, dropout_seed, cache)
    probs = softmax(z)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = len(labels)
    if n != z.shape[0]:
        raise ShapeMismatch(f"{n} labels for {z.shape[0]} pairs")
    per = loss(probs, labels)
    onehot = np.eye(2, dtype=z.dtype)[labels]
    dlogits = (probs - onehot) / n
    floored = probs[np.arange(n), labels] < EPS  # loss is flat there
    dlogits[floored] = 0
    grads, _ = _backprop(model, cache, dlogits)
    return float(per.mean()), probs, grads


def backward(model, image_a, image_b, label, dropout_seed=None):
    """Gradients of the (batch-mean) loss; dropout is applied iff a seed is given."""
    _, _, grads = loss_and_grad(model, image_a, image_b, label, dropout_seed is not None, dropout_seed)
    return grads


def target_gradients(model, image_a, image_b, target):
    """Eval-mode last stream maps and d(logit[target])/d(map) for both slots.

    Returns arrays of shape ``(N, C, H, W)``: ``maps_a, maps_b, grads_a, grads_b``.
    """
    cache = {}
    z, _ = _run(model, image_a, image_b, False, None, cache)
    n = z.shape[0]
    target = np.broadcast_to(np.asarray(target, dtype=np.int64), (n,))
    dlogits = np.zeros_like(z)
    dlogits[np.arange(n), target] = 1
    _, d_last = _backprop(model, cache, dlogits, need_params=False)
    last = cache["last"].transpose(0, 3, 1, 2)
    d_last = d_last.transpose(0, 3, 1, 2)
    return last[:n], last[n:], d_last[:n], d_last[n:]
