"""The Numerion forecaster.

Per channel: mean-normalize the lookback, embed it with a multi-level patch
encoder, run one RHR-MLP per enabled space (real, complex, quaternion,
octonion, sedenion) in parallel, fuse their forecasts with a per-position
softmax over spaces, and add the mean back.

Channels are modelled independently, so a batch ``[B, F, T]`` is processed
as ``B*F`` rows.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from numerion.algebra import table_for_dim
from numerion.autodiff import (
    Tensor,
    op_abs,
    op_concat,
    op_gelu,
    op_matmul,
    op_mean,
    op_mul,
    op_reshape,
    op_softmax,
    op_square,
    op_stack,
    op_sum,
)
from numerion.hyperlayers import HLinearParams, RhrMlpParams, init_rhr_mlp, rhr_mlp

SPACES = (1, 2, 4, 8, 16)
SPACE_NAMES = {1: "Real", 2: "Comp", 4: "Quat", 8: "Octo", 16: "Sede"}
CHECKPOINT_FORMAT = "numerion-checkpoint/1"


@dataclass
class NumerionConfig:
    lookback: int = 96
    horizon: int = 96
    channels: int = 7
    patch_levels: int = 3
    embed_dim: int = 64
    rhr_layers: int = 2
    rhr_hidden: int = 64
    dropout: float = 0.5
    p_norm: float = 6.0
    fusion_hidden: int | None = None
    enabled_spaces: tuple[int, ...] = SPACES
    fusion_enabled: bool = True

    def __post_init__(self):
        self.enabled_spaces = tuple(sorted(int(s) for s in self.enabled_spaces))
        if not self.enabled_spaces:
            raise ValueError("at least one space must be enabled")
        bad = [s for s in self.enabled_spaces if s not in SPACES]
        if bad:
            raise ValueError(f"unsupported spaces {bad}; choose from {SPACES}")
        if self.patch_levels < 1:
            raise ValueError("patch_levels must be >= 1")
        if self.lookback // 2 ** (self.patch_levels - 1) < 1:
            raise ValueError(f"lookback {self.lookback} too short for {self.patch_levels} patch levels")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.p_norm < 1:
            raise ValueError("p_norm must be >= 1")
        if self.fusion_hidden is None:
            self.fusion_hidden = self.horizon

    def segment_lengths(self) -> list[int]:
        return [self.lookback // 2 ** i for i in range(self.patch_levels)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enabled_spaces"] = list(self.enabled_spaces)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NumerionConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class NumerionParams:
    patch_maps: list[tuple[Tensor, Tensor]]  # per level: W [s_i, d_e], b [d_e]
    rhr: dict[int, RhrMlpParams]
    fusion: tuple[Tensor, Tensor, Tensor, Tensor] | None  # W1 [P, H], b1 [H], W2 [H, P], b2 [P]
    extra: dict = field(default_factory=dict)

    def named(self) -> dict[str, Tensor]:
        """Flat ``name -> Tensor`` view, the checkpoint and optimizer key space."""
        out = {}
        for i, (w, b) in enumerate(self.patch_maps):
            out[f"patch{i}.weight"] = w
            out[f"patch{i}.bias"] = b
        for n, p in self.rhr.items():
            for k, t in p.tensors().items():
                out[f"rhr{n}.{k}"] = t
        if self.fusion is not None:
            for k, t in zip(("w1", "b1", "w2", "b2"), self.fusion):
                out[f"fusion.{k}"] = t
        return out

    def zero_grad(self) -> None:
        for t in self.named().values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        named = self.named()
        missing = set(named) - set(state)
        if missing:
            raise KeyError(f"state lacks {sorted(missing)}")
        for k, t in named.items():
            if state[k].shape != t.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {t.shape}")
            t.data[...] = state[k]


def _affine_init(fan_in: int, fan_out: int, rng: np.random.Generator):
    bound = 1.0 / np.sqrt(fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(rng.uniform(-bound, bound, size=fan_out), requires_grad=True)
    return w, b


def init_params(cfg: NumerionConfig, seed: int = 0) -> NumerionParams:
    rng = np.random.default_rng(seed)
    patch = [_affine_init(s, cfg.embed_dim, rng) for s in cfg.segment_lengths()]
    d_x = cfg.embed_dim * cfg.patch_levels
    rhr = {n: init_rhr_mlp(d_x, cfg.rhr_hidden, cfg.rhr_layers, cfg.horizon, n, rng,
                           cfg.dropout, cfg.p_norm)
           for n in cfg.enabled_spaces}
    fusion = None
    if cfg.fusion_enabled:
        w1, b1 = _affine_init(cfg.horizon, cfg.fusion_hidden, rng)
        w2, b2 = _affine_init(cfg.fusion_hidden, cfg.horizon, rng)
        fusion = (w1, b1, w2, b2)
    return NumerionParams(patch, rhr, fusion)


def normalize(x: Tensor) -> tuple[Tensor, Tensor]:
    """Subtract each row's lookback mean; returns ``(centered, means[.., 1])``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    means = op_mean(x, axis=-1, keepdims=True)
    return x - means, means


def denormalize(y: Tensor, means: Tensor) -> Tensor:
    return y + means


def patch_embed(x: Tensor, params: NumerionParams, cfg: NumerionConfig) -> Tensor:
    """``[.., T]`` -> ``[.., d_e * l_p]``: per level, encode each segment and average."""
    T = x.shape[-1]
    lead = x.shape[:-1]
    levels = []
    for (w, b), s in zip(params.patch_maps, cfg.segment_lengths()):
        if s < 1 or s > T:
            raise ValueError(f"segment length {s} invalid for T={T}")
        count = T // s
        segs = x[..., :count * s] if count * s != T else x
        segs = op_reshape(segs, (*lead, count, s))
        enc = op_matmul(segs, w) + b
        levels.append(op_mean(enc, axis=-2))
    return levels[0] if len(levels) == 1 else op_concat(levels, axis=-1)


def adaptive_fusion(per_space: Tensor, params: NumerionParams, cfg: NumerionConfig):
    """``[S, .., P]`` -> fused ``[.., P]`` and weights ``[S, .., P]`` (softmax over S)."""
    S = per_space.shape[0]
    if not cfg.fusion_enabled or params.fusion is None:
        weights = Tensor(np.full(per_space.shape, 1.0 / S))
    else:
        w1, b1, w2, b2 = params.fusion
        hidden = op_gelu(op_matmul(per_space, w1) + b1)
        scores = op_matmul(hidden, w2) + b2
        weights = op_softmax(scores, axis=0)
    fused = op_sum(op_mul(weights, per_space), axis=0)
    return fused, weights


def numerion_forward(x, params: NumerionParams, cfg: NumerionConfig, training: bool = False,
                     rng: np.random.Generator | None = None):
    """Forecast ``[.., F, T]`` -> ``[.., F, P]``.

    Returns ``(y_hat, per_space, weights)``; ``per_space`` holds each space's
    forecast before fusion, in the mean-removed frame, stacked ``[S, .., F, P]``
    in the order of ``cfg.enabled_spaces``.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != cfg.lookback:
        raise ValueError(f"expected lookback {cfg.lookback}, got {x.shape[-1]}")
    lead = x.shape[:-1]
    rows = op_reshape(x, (-1, cfg.lookback))
    centered, means = normalize(rows)
    xp = patch_embed(centered, params, cfg)
    outs = [rhr_mlp(xp, params.rhr[n], table_for_dim(n), training, rng)
            for n in cfg.enabled_spaces]
    stacked = outs[0].reshape(1, *outs[0].shape) if len(outs) == 1 else op_stack(outs, axis=0)
    fused, weights = adaptive_fusion(stacked, params, cfg)
    y = denormalize(fused, means)
    S = len(outs)
    return (op_reshape(y, (*lead, cfg.horizon)),
            op_reshape(stacked, (S, *lead, cfg.horizon)),
            op_reshape(weights, (S, *lead, cfg.horizon)))


def mae_loss(y_hat, y) -> Tensor:
    y_hat, y = _pair(y_hat, y)
    return op_mean(op_abs(y_hat - y))


def mse_metric(y_hat, y) -> Tensor:
    y_hat, y = _pair(y_hat, y)
    return op_mean(op_square(y_hat - y))


def _pair(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


# checkpoint: a numpy .npz archive holding "__format__", "__config__" (JSON
# text) and one float64 array per parameter under its dotted name


def save_checkpoint(path, params: NumerionParams, cfg: NumerionConfig, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: t.data for k, t in params.named().items()}
    meta = {"config": cfg.to_dict(), "extra": extra or {}}
    with path.open("wb") as fh:
        np.savez(fh, __format__=np.array(CHECKPOINT_FORMAT),
                 __config__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path) -> tuple[NumerionParams, NumerionConfig, dict]:
    with np.load(path, allow_pickle=False) as z:
        if str(z["__format__"]) != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unknown checkpoint format {z['__format__']}")
        meta = json.loads(str(z["__config__"]))
        cfg = NumerionConfig.from_dict(meta["config"])
        state = {k: z[k] for k in z.files if not k.startswith("__")}
    params = init_params(cfg)
    params.load_state(state)
    return params, cfg, meta.get("extra", {})


__all__ = [
    "CHECKPOINT_FORMAT",
    "HLinearParams",
    "NumerionConfig",
    "NumerionParams",
    "SPACES",
    "SPACE_NAMES",
    "adaptive_fusion",
    "denormalize",
    "init_params",
    "load_checkpoint",
    "mae_loss",
    "mse_metric",
    "normalize",
    "numerion_forward",
    "patch_embed",
    "save_checkpoint",
]
