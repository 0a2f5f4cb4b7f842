"""Day-adapted recurrent decoder: affine input layers, GRU stack, logit head.

The model is a plain parameter dictionary plus metadata. Input features
are z-scored with statistics frozen at seed-training time, passed through
the affine layer of the recording day, then through a stack of GRU layers
and a linear head producing log-softmax character probabilities.

All gradients are analytic (batched BPTT); there is no autograd anywhere.
Models are value-like: ``clone_model`` produces an independent snapshot,
training mutates an exclusively-owned copy, and inference on a snapshot is
safe from any number of readers.

GRU cell, per time step (x is the layer input, h the carried state):
    z = sigmoid(x Wz + h Uz + bz)          update gate
    r = sigmoid(x Wr + h Ur + br)          reset gate
    c = tanh(x Wh + (r * h) Uh + bh)       candidate state
    h' = z * h + (1 - z) * c
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteGradient, UnknownDay
from .text import NUM_CLASSES

CHECKPOINT_FORMAT = "corplab-checkpoint-1"


@dataclass
class DecoderModel:
    channels: int
    hidden_size: int
    num_layers: int
    num_classes: int
    params: dict[str, np.ndarray]
    input_mean: np.ndarray
    input_std: np.ndarray
    days: list[int]
    version: int = 0

    def day_keys(self, day: int) -> tuple[str, str]:
        return f"day{day}.W", f"day{day}.b"

    def has_day(self, day: int) -> bool:
        return day in self.days


@dataclass(frozen=True)
class AugmentationConfig:
    """Additive input noise used to enrich small recalibration batches."""

    white_noise_std: float = 0.0
    offset_std: float = 0.0

    def __post_init__(self) -> None:
        if self.white_noise_std < 0 or self.offset_std < 0:
            raise ValueError("augmentation stds must be non-negative")


@dataclass
class OptimizerState:
    learning_rate: float
    rule: str = "sgd"  # "sgd" | "adam"
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.rule not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer rule {self.rule!r}")


def _uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(
    channels: int,
    hidden_size: int,
    num_layers: int,
    rng: np.random.Generator,
    num_classes: int = NUM_CLASSES,
    first_day: int = 0,
) -> DecoderModel:
    """Fresh model with one identity day layer and fan-in uniform weights."""
    params: dict[str, np.ndarray] = {}
    params[f"day{first_day}.W"] = np.eye(channels)
    params[f"day{first_day}.b"] = np.zeros(channels)
    for layer in range(num_layers):
        in_dim = channels if layer == 0 else hidden_size
        for gate in ("z", "r", "h"):
            params[f"gru{layer}.W{gate}"] = _uniform_init(rng, in_dim, (in_dim, hidden_size))
            params[f"gru{layer}.U{gate}"] = _uniform_init(rng, hidden_size, (hidden_size, hidden_size))
            params[f"gru{layer}.b{gate}"] = np.zeros(hidden_size)
    params["head.W"] = _uniform_init(rng, hidden_size, (hidden_size, num_classes))
    params["head.b"] = np.zeros(num_classes)
    return DecoderModel(
        channels=channels,
        hidden_size=hidden_size,
        num_layers=num_layers,
        num_classes=num_classes,
        params=params,
        input_mean=np.zeros(channels),
        input_std=np.ones(channels),
        days=[first_day],
    )


def clone_model(model: DecoderModel) -> DecoderModel:
    return replace(
        model,
        params={k: v.copy() for k, v in model.params.items()},
        input_mean=model.input_mean.copy(),
        input_std=model.input_std.copy(),
        days=list(model.days),
    )


def model_digest(model: DecoderModel) -> str:
    """Hash of every parameter tensor; equal digests mean equal models."""
    h = hashlib.sha256()
    for key in sorted(model.params):
        h.update(key.encode())
        h.update(np.ascontiguousarray(model.params[key]).tobytes())
    h.update(model.input_mean.tobytes())
    h.update(model.input_std.tobytes())
    return h.hexdigest()


def set_input_stats(model: DecoderModel, features: np.ndarray) -> None:
    """Freeze per-channel z-scoring statistics from pooled seed features."""
    model.input_mean = features.mean(axis=0)
    std = features.std(axis=0)
    model.input_std = np.where(std < 1e-6, 1.0, std)


def add_day_layer(model: DecoderModel, new_day: int) -> DecoderModel:
    """Add an affine layer for ``new_day``, copying the latest existing day."""
    if model.has_day(new_day):
        raise ValueError(f"day {new_day} already has a layer")
    source = max(model.days)
    out = clone_model(model)
    out.params[f"day{new_day}.W"] = model.params[f"day{source}.W"].copy()
    out.params[f"day{new_day}.b"] = model.params[f"day{source}.b"].copy()
    out.days = sorted(model.days + [new_day])
    return out


def latest_day_at_or_before(model: DecoderModel, day: int) -> int:
    """Nearest prior day with a layer; the earliest layer if none precede."""
    prior = [d for d in model.days if d <= day]
    return max(prior) if prior else min(model.days)


from scipy.special import expit as _sigmoid


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def normalize_inputs(model: DecoderModel, features: np.ndarray) -> np.ndarray:
    return (features - model.input_mean) / model.input_std


def forward_batch(
    model: DecoderModel,
    day: int,
    features: np.ndarray,
    return_cache: bool = False,
):
    """Batched forward pass. ``features`` is (B, T, C) raw (un-normalized).

    Returns (B, T, K) log probabilities, plus the activation cache needed
    by :func:`backward_batch` when requested.
    """
    if not model.has_day(day):
        raise UnknownDay(
            f"model has no affine layer for day {day}; call add_day_layer first"
        )
    p = model.params
    x = normalize_inputs(model, features)
    wd, bd = (p[k] for k in model.day_keys(day))
    a = x @ wd + bd
    B, T, _ = a.shape
    H = model.hidden_size

    layer_inputs = []
    zs, rs, cs, hs = [], [], [], []
    inp = a
    for layer in range(model.num_layers):
        wz, wr, wh = p[f"gru{layer}.Wz"], p[f"gru{layer}.Wr"], p[f"gru{layer}.Wh"]
        uz, ur, uh = p[f"gru{layer}.Uz"], p[f"gru{layer}.Ur"], p[f"gru{layer}.Uh"]
        bz, br, bh = p[f"gru{layer}.bz"], p[f"gru{layer}.br"], p[f"gru{layer}.bh"]
        # input projections for all steps at once; the z and r gates share
        # one fused matmul per step, only the recurrence stays sequential
        uzr = np.concatenate([uz, ur], axis=1)
        px_zr = inp @ np.concatenate([wz, wr], axis=1) + np.concatenate([bz, br])
        px_h = inp @ wh + bh
        z = np.empty((B, T, H))
        r = np.empty((B, T, H))
        c = np.empty((B, T, H))
        h = np.empty((B, T, H))
        h_prev = np.zeros((B, H))
        for t in range(T):
            gates = _sigmoid(px_zr[:, t] + h_prev @ uzr)
            z_t = gates[:, :H]
            r_t = gates[:, H:]
            c_t = np.tanh(px_h[:, t] + (r_t * h_prev) @ uh)
            h_prev = z_t * h_prev + (1.0 - z_t) * c_t
            z[:, t], r[:, t], c[:, t], h[:, t] = z_t, r_t, c_t, h_prev
        layer_inputs.append(inp)
        zs.append(z)
        rs.append(r)
        cs.append(c)
        hs.append(h)
        inp = h

    logits = inp @ p["head.W"] + p["head.b"]
    log_probs = _log_softmax(logits)
    if not return_cache:
        return log_probs
    cache = {
        "x_norm": x,
        "affine_out": a,
        "layer_inputs": layer_inputs,
        "z": zs,
        "r": rs,
        "c": cs,
        "h": hs,
        "log_probs": log_probs,
        "day": day,
    }
    return log_probs, cache


def forward(model: DecoderModel, day: int, features: np.ndarray) -> np.ndarray:
    """Log-probabilities (T, K) for a single trial's features (T, C)."""
    return forward_batch(model, day, features[None])[0]


def backward_batch(
    model: DecoderModel,
    cache: dict,
    grad_log_probs: np.ndarray,
) -> dict[str, np.ndarray]:
    """Exact gradients for every parameter given d(loss)/d(log_probs).

    Frames the caller wants masked out (padding) must carry zero rows in
    ``grad_log_probs``.
    """
    p = model.params
    day = cache["day"]
    B, T, H = cache["h"][0].shape

    # through the shared log-softmax head
    probs = np.exp(cache["log_probs"])
    g_sum = grad_log_probs.sum(axis=-1, keepdims=True)
    d_logits = grad_log_probs - probs * g_sum

    h_top = cache["h"][-1]
    K = d_logits.shape[-1]
    grads: dict[str, np.ndarray] = {}
    grads["head.W"] = h_top.reshape(-1, H).T @ d_logits.reshape(-1, K)
    grads["head.b"] = d_logits.sum(axis=(0, 1))
    d_out = d_logits @ p["head.W"].T  # gradient w.r.t. top layer's h sequence

    for layer in range(model.num_layers - 1, -1, -1):
        z, r, c, h = (cache[k][layer] for k in ("z", "r", "c", "h"))
        inp = cache["layer_inputs"][layer]
        uz, ur, uh = p[f"gru{layer}.Uz"], p[f"gru{layer}.Ur"], p[f"gru{layer}.Uh"]
        wz, wr, wh = p[f"gru{layer}.Wz"], p[f"gru{layer}.Wr"], p[f"gru{layer}.Wh"]
        h_prev_seq = np.concatenate([np.zeros((B, 1, H)), h[:, :-1]], axis=1)

        uzr_t = np.concatenate([uz, ur], axis=1).T
        uh_t = uh.T
        dz_pre = np.empty_like(z)
        dr_pre = np.empty_like(r)
        dc_pre = np.empty_like(c)
        dh_carry = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = d_out[:, t] + dh_carry
            h_prev = h_prev_seq[:, t]
            z_t, r_t, c_t = z[:, t], r[:, t], c[:, t]
            dcp = (dh - dh * z_t) * (1.0 - c_t * c_t)
            dzp = dh * (h_prev - c_t) * z_t * (1.0 - z_t)
            d_rh = dcp @ uh_t
            drp = (d_rh * h_prev) * r_t * (1.0 - r_t)
            dh_carry = dh * z_t + d_rh * r_t + np.concatenate([dzp, drp], axis=1) @ uzr_t
            dz_pre[:, t], dr_pre[:, t], dc_pre[:, t] = dzp, drp, dcp

        in_dim = inp.shape[-1]
        inp2 = inp.reshape(-1, in_dim)
        hp2 = h_prev_seq.reshape(-1, H)
        dz2 = dz_pre.reshape(-1, H)
        dr2 = dr_pre.reshape(-1, H)
        dc2 = dc_pre.reshape(-1, H)
        grads[f"gru{layer}.Wz"] = inp2.T @ dz2
        grads[f"gru{layer}.Wr"] = inp2.T @ dr2
        grads[f"gru{layer}.Wh"] = inp2.T @ dc2
        grads[f"gru{layer}.Uz"] = hp2.T @ dz2
        grads[f"gru{layer}.Ur"] = hp2.T @ dr2
        grads[f"gru{layer}.Uh"] = (r * h_prev_seq).reshape(-1, H).T @ dc2
        grads[f"gru{layer}.bz"] = dz2.sum(axis=0)
        grads[f"gru{layer}.br"] = dr2.sum(axis=0)
        grads[f"gru{layer}.bh"] = dc2.sum(axis=0)
        d_out = dz_pre @ wz.T + dr_pre @ wr.T + dc_pre @ wh.T

    wd_key, bd_key = model.day_keys(day)
    C = d_out.shape[-1]
    grads[wd_key] = cache["x_norm"].reshape(-1, C).T @ d_out.reshape(-1, C)
    grads[bd_key] = d_out.sum(axis=(0, 1))
    return grads


def backward(
    model: DecoderModel,
    day: int,
    features: np.ndarray,
    grad_log_probs: np.ndarray,
) -> dict[str, np.ndarray]:
    """Single-trial convenience wrapper around the batched backward pass."""
    _, cache = forward_batch(model, day, features[None], return_cache=True)
    return backward_batch(model, cache, grad_log_probs[None])


def augment(
    features: np.ndarray,
    cfg: AugmentationConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """White noise per bin plus one constant per-channel offset per trial."""
    out = features
    if cfg.white_noise_std > 0:
        out = out + rng.normal(0.0, cfg.white_noise_std, size=features.shape)
    if cfg.offset_std > 0:
        out = out + rng.normal(0.0, cfg.offset_std, size=features.shape[-1])
    if out is features:
        out = features.copy()
    return out


def zero_grads_like(model: DecoderModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def grad_global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = grad_global_norm(grads)
    if max_norm > 0 and norm > max_norm and np.isfinite(norm):
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


def sgd_step(
    model: DecoderModel,
    grads: dict[str, np.ndarray],
    opt: OptimizerState,
) -> tuple[DecoderModel, OptimizerState]:
    """Apply one update in place. Only keys present in ``grads`` change.

    Rejects the whole step (no parameter is touched) if any gradient
    tensor is non-finite.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    opt.step_count += 1
    lr = opt.learning_rate
    for name, g in grads.items():
        param = model.params[name]
        if opt.rule == "sgd":
            if opt.momentum > 0:
                slot = opt.slots.setdefault(name, {"v": np.zeros_like(param)})
                slot["v"] = opt.momentum * slot["v"] + g
                param -= lr * slot["v"]
            else:
                param -= lr * g
        else:  # adam
            slot = opt.slots.setdefault(
                name, {"m": np.zeros_like(param), "v": np.zeros_like(param)}
            )
            slot["m"] = opt.beta1 * slot["m"] + (1 - opt.beta1) * g
            slot["v"] = opt.beta2 * slot["v"] + (1 - opt.beta2) * g * g
            m_hat = slot["m"] / (1 - opt.beta1 ** opt.step_count)
            v_hat = slot["v"] / (1 - opt.beta2 ** opt.step_count)
            param -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return model, opt


def save_checkpoint(model: DecoderModel, path) -> None:
    """Single file: JSON header line, then float32 little-endian blocks."""
    names = sorted(model.params)
    header = {
        "format": CHECKPOINT_FORMAT,
        "channels": model.channels,
        "hidden_size": model.hidden_size,
        "num_layers": model.num_layers,
        "num_classes": model.num_classes,
        "days": model.days,
        "version": model.version,
        "input_mean": model.input_mean.tolist(),
        "input_std": model.input_std.tolist(),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for n in names:
            f.write(np.ascontiguousarray(model.params[n], dtype="<f4").tobytes())


def load_checkpoint(path) -> DecoderModel:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unrecognized checkpoint format in {path}")
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            block = f.read(4 * count)
            arr = np.frombuffer(block, dtype="<f4", count=count).astype(np.float64)
            params[entry["name"]] = arr.reshape(shape)
    return DecoderModel(
        channels=header["channels"],
        hidden_size=header["hidden_size"],
        num_layers=header["num_layers"],
        num_classes=header["num_classes"],
        params=params,
        input_mean=np.array(header["input_mean"], dtype=np.float64),
        input_std=np.array(header["input_std"], dtype=np.float64),
        days=list(header["days"]),
        version=header["version"],
    )
