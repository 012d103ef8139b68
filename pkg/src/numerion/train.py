"""Adam, the early-stopping training loop, evaluation and the ablation runner."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from numerion.autodiff import backward, no_grad
from numerion.data import WindowedDataset
from numerion.model import (
    SPACE_NAMES,
    SPACES,
    NumerionConfig,
    NumerionParams,
    init_params,
    mae_loss,
    numerion_forward,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Non-finite gradients or losses; carries the last good parameter state."""

    def __init__(self, message: str, last_good: dict | None = None):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 512
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    eval_batch_size: int = 1024

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")
        if not 1e-4 <= self.learning_rate <= 1e-2:
            log.warning("learning rate %g outside the usual [1e-4, 1e-2] range", self.learning_rate)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """In-place Adam update of ``params`` (``name -> ndarray``) with bias correction.

    All gradients are checked before any parameter moves, so a non-finite
    gradient leaves both parameters and state untouched.
    """
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            raise KeyError(f"no gradient for parameter {k!r}")
        if g.shape != p.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise TrainingError(f"non-finite gradient in {k!r} ({bad} of {g.size} entries) "
                                f"at step {state.step + 1}")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    val_mae: float
    seconds: float
    improved: bool


@dataclass
class TrainResult:
    params: NumerionParams
    history: list[EpochRecord]
    best_epoch: int | None
    best_val_mae: float | None
    stopped_early: bool


def predict(params: NumerionParams, cfg: NumerionConfig, x: np.ndarray, batch_size: int = 1024,
            return_parts: bool = False):
    """Evaluation-mode forecasts for ``x [B, F, T]``, optionally with per-space parts."""
    ys, parts, weights = [], [], []
    with no_grad():
        for lo in range(0, x.shape[0], batch_size):
            y, ps, w = numerion_forward(x[lo:lo + batch_size], params, cfg, training=False)
            ys.append(y.data)
            if return_parts:
                parts.append(ps.data)
                weights.append(w.data)
    y = np.concatenate(ys, axis=0)
    if return_parts:
        return y, np.concatenate(parts, axis=1), np.concatenate(weights, axis=1)
    return y


def evaluate_predictor(fn, dataset: WindowedDataset, batch_size: int = 1024) -> dict:
    """MAE and MSE of ``fn(x [B, F, T]) -> [B, F, P]`` over every window of ``dataset``."""
    if len(dataset) == 0:
        raise ValueError(f"{dataset.split} split has no windows")
    abs_sum = sq_sum = 0.0
    count = 0
    for lo in range(0, len(dataset), batch_size):
        x, y = dataset.batch(np.arange(lo, min(lo + batch_size, len(dataset))))
        err = fn(x) - y
        abs_sum += float(np.abs(err).sum())
        sq_sum += float((err * err).sum())
        count += err.size
    return {"mae": abs_sum / count, "mse": sq_sum / count}


def evaluate(params: NumerionParams, cfg: NumerionConfig, dataset: WindowedDataset,
             batch_size: int = 1024) -> dict:
    """Test metrics in the standardized space of ``dataset``."""
    return evaluate_predictor(lambda x: predict(params, cfg, x, batch_size), dataset, batch_size)


def persistence(x: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat each channel's last observed value across the horizon."""
    return np.repeat(x[..., -1:], horizon, axis=-1)


def persistence_metrics(dataset: WindowedDataset) -> dict:
    return evaluate_predictor(lambda x: persistence(x, dataset.horizon), dataset)


def train(cfg: NumerionConfig, tcfg: TrainConfig, train_set: WindowedDataset,
          val_set: WindowedDataset, params: NumerionParams | None = None,
          callback=None) -> TrainResult:
    """Minibatch MAE training with validation early stopping.

    One generator seeded from ``tcfg.seed`` drives both shuffling and dropout,
    and parameters are initialized from the same seed, so a run is
    reproducible from its configuration. The returned parameters are those of
    the best validation epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation splits must be non-empty")
    if train_set.lookback != cfg.lookback or train_set.horizon != cfg.horizon:
        raise ValueError(f"dataset windows (T={train_set.lookback}, P={train_set.horizon}) "
                         f"do not match the model (T={cfg.lookback}, P={cfg.horizon})")
    if params is None:
        params = init_params(cfg, tcfg.seed)
    rng = np.random.default_rng(tcfg.seed + 1)
    named = params.named()
    arrays = {k: t.data for k, t in named.items()}
    state = AdamState()
    history: list[EpochRecord] = []
    best_val, best_epoch, best_state = None, None, params.state()
    stale = 0
    stopped = False
    for epoch in range(1, tcfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for lo in range(0, len(order), tcfg.batch_size):
            idx = order[lo:lo + tcfg.batch_size]
            x, y = train_set.batch(idx)
            params.zero_grad()
            y_hat, _, _ = numerion_forward(x, params, cfg, training=True, rng=rng)
            loss = mae_loss(y_hat, y)
            value = loss.item()
            if not np.isfinite(value):
                params.load_state(best_state)
                raise TrainingError(f"loss became non-finite in epoch {epoch}", best_state)
            backward(loss)
            grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                     for k, t in named.items()}
            try:
                adam_step(arrays, grads, state, tcfg.learning_rate, tcfg.betas, tcfg.eps)
            except TrainingError as exc:
                params.load_state(best_state)
                raise TrainingError(str(exc), best_state) from None
            total += value * len(idx)
            seen += len(idx)
        params.zero_grad()
        val_mae = evaluate(params, cfg, val_set, tcfg.eval_batch_size)["mae"]
        improved = best_val is None or val_mae < best_val
        if improved:
            best_val, best_epoch, best_state, stale = val_mae, epoch, params.state(), 0
        else:
            stale += 1
        rec = EpochRecord(epoch, total / seen, val_mae, time.perf_counter() - t0, improved)
        history.append(rec)
        log.info("epoch %d train %.4f val %.4f (%.1fs)%s", epoch, rec.train_mae, val_mae,
                 rec.seconds, " *" if improved else "")
        if callback is not None:
            callback(rec)
        if stale >= tcfg.patience:
            stopped = True
            break
    params.load_state(best_state)
    return TrainResult(params, history, best_epoch, best_val, stopped)


# ablations: name -> config overrides


def _without(space: int, fusion: bool = True) -> dict:
    return {"enabled_spaces": tuple(s for s in SPACES if s != space), "fusion_enabled": fusion}


ABLATION_CASES: dict[int, tuple[str, dict]] = {
    **{i + 1: (f"w/o {SPACE_NAMES[s]}", _without(s)) for i, s in enumerate(SPACES)},
    6: ("w/o Adaptive Fusion", {"fusion_enabled": False}),
    **{i + 7: (f"{SPACE_NAMES[s]} only", {"enabled_spaces": (s,), "fusion_enabled": False})
       for i, s in enumerate(SPACES)},
    12: ("w/o Multi-Level Patch", {"patch_levels": 1}),
    **{i + 13: (f"w/o {SPACE_NAMES[s]}, w/o Adaptive Fusion", _without(s, fusion=False))
       for i, s in enumerate(SPACES)},
}
ABLATION_NAMES = {name: case for case, (name, _) in ABLATION_CASES.items()}


def resolve_case(case) -> int:
    if isinstance(case, str) and case.strip().isdigit():
        case = int(case)
    if isinstance(case, int):
        if case == 0 or case in ABLATION_CASES:
            return case
    elif case in ABLATION_NAMES:
        return ABLATION_NAMES[case]
    elif isinstance(case, str) and case.lower() == "full":
        return 0
    raise KeyError(f"unknown ablation case {case!r}; use 0 (full), 1-17 or one of "
                   f"{sorted(ABLATION_NAMES)}")


def ablation_config(case, base: NumerionConfig) -> NumerionConfig:
    case = resolve_case(case)
    if case == 0:
        return replace(base)
    return replace(base, **ABLATION_CASES[case][1])


@dataclass
class AblationRow:
    case: int
    name: str
    mae: float
    mse: float
    delta_mae_pct: float | None = None
    delta_mse_pct: float | None = None
    epochs: int = 0
    seconds: float = 0.0


def run_ablation(cases, base: NumerionConfig, tcfg: TrainConfig, splits, full_metrics: dict | None = None,
                 callback=None) -> list[AblationRow]:
    """Train and test every case; case 0 (the full model) is trained unless supplied.

    Deltas follow the sign convention of the published ablation table:
    ``(full - case) / full * 100``, so a negative delta means the ablation hurt.
    """
    train_set, val_set, test_set = splits
    rows = []
    if full_metrics is None:
        full_metrics = _run_case(0, base, tcfg, train_set, val_set, test_set, callback)
    full = AblationRow(0, "Numerion", full_metrics["mae"], full_metrics["mse"],
                       epochs=full_metrics.get("epochs", 0), seconds=full_metrics.get("seconds", 0.0))
    rows.append(full)
    for case in cases:
        c = resolve_case(case)
        if c == 0:
            continue
        m = _run_case(c, base, tcfg, train_set, val_set, test_set, callback)
        rows.append(AblationRow(c, ABLATION_CASES[c][0], m["mae"], m["mse"],
                                (full.mae - m["mae"]) / full.mae * 100.0,
                                (full.mse - m["mse"]) / full.mse * 100.0,
                                m["epochs"], m["seconds"]))
    return rows


def _run_case(case, base, tcfg, train_set, val_set, test_set, callback) -> dict:
    cfg = ablation_config(case, base)
    t0 = time.perf_counter()
    res = train(cfg, tcfg, train_set, val_set)
    metrics = evaluate(res.params, cfg, test_set, tcfg.eval_batch_size)
    metrics.update(epochs=len(res.history), seconds=time.perf_counter() - t0)
    if callback is not None:
        callback(case, metrics)
    return metrics


def format_ablation(rows: list[AblationRow]) -> str:
    lines = [f"{'case':>4}  {'name':<36} {'MSE':>7} {'dMSE%':>8} {'MAE':>7} {'dMAE%':>8}"]
    for r in rows:
        dmse = "" if r.delta_mse_pct is None else f"{r.delta_mse_pct:+.2f}%"
        dmae = "" if r.delta_mae_pct is None else f"{r.delta_mae_pct:+.2f}%"
        lines.append(f"{r.case:>4}  {r.name:<36} {r.mse:7.4f} {dmse:>8} {r.mae:7.4f} {dmae:>8}")
    return "\n".join(lines)


__all__ = [
    "ABLATION_CASES",
    "ABLATION_NAMES",
    "AblationRow",
    "AdamState",
    "EpochRecord",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "ablation_config",
    "adam_step",
    "evaluate",
    "evaluate_predictor",
    "format_ablation",
    "persistence",
    "persistence_metrics",
    "predict",
    "resolve_case",
    "run_ablation",
    "train",
]
