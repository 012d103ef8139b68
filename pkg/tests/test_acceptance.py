"""Acceptance criteria, each at its stated tolerance and runtime limit.

Every test records one ``PASS``/``FAIL`` line that is printed in the
terminal summary.  Criteria 8-10 share one ETTh1 training session (about
25 minutes on one CPU core); deselect them with ``-m "not slow"``.
"""

import contextlib
import io
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from numerion.algebra import build_table, find_zero_divisor, hmul, hmul_recursive
from numerion.autodiff import Tensor
from numerion.analysis import BIN_EDGES, decomposition_report, maf, power_share_bins, pve
from numerion.cli import run_cli
from numerion.data import ETT_HOURLY_ROWS, ETTH1_TABLE_PARTITION, load_csv, split_standardize_window
from numerion.gradcheck import hntanh_jacobian_error, model_gradient_errors
from numerion.hyperlayers import HLinearParams, hlinear, hlinear_naive, hntanh
from numerion.model import SPACE_NAMES, NumerionConfig, init_params, numerion_forward
from numerion.train import TrainConfig, evaluate, persistence_metrics, run_ablation, train

ETTH1 = Path(__file__).resolve().parents[1] / "data" / "ETTh1.csv"

# printed quaternion and octonion matrices (selection, sign)
QUAT = (
    [[0, 1, 2, 3], [1, 0, 3, 2], [2, 3, 0, 1], [3, 2, 1, 0]],
    [[1, -1, -1, -1], [1, 1, 1, -1], [1, -1, 1, 1], [1, 1, -1, 1]],
)
OCT = (
    [[0, 1, 2, 3, 4, 5, 6, 7], [1, 0, 3, 2, 5, 4, 7, 6], [2, 3, 0, 1, 6, 7, 4, 5],
     [3, 2, 1, 0, 7, 6, 5, 4], [4, 5, 6, 7, 0, 1, 2, 3], [5, 4, 7, 6, 1, 0, 3, 2],
     [6, 7, 4, 5, 2, 3, 0, 1], [7, 6, 5, 4, 3, 2, 1, 0]],
    [[1, -1, -1, -1, -1, -1, -1, -1], [1, 1, -1, 1, -1, 1, 1, -1], [1, 1, 1, -1, -1, -1, 1, 1],
     [1, -1, 1, 1, -1, 1, -1, 1], [1, 1, 1, 1, 1, -1, -1, -1], [1, -1, 1, -1, 1, 1, 1, -1],
     [1, -1, -1, 1, 1, -1, 1, 1], [1, 1, -1, -1, 1, 1, -1, 1]],
)

# the desk-scale configuration of criterion 8
DESK_MODEL = NumerionConfig(lookback=96, horizon=96, channels=7, embed_dim=64, rhr_layers=2,
                            rhr_hidden=64, dropout=0.5)
DESK_TRAIN = TrainConfig(learning_rate=1e-3, batch_size=128, max_epochs=12, patience=3, seed=0)


def _terms(v):
    out = ""
    for i in np.nonzero(v)[0]:
        sign = "-" if v[i] < 0 else ("+" if out else "")
        out += f" {sign} e{i}" if out else f"{sign}e{i}"
    return out


class Verdict:
    """Collects sub-checks for one criterion and records its summary line."""

    def __init__(self, number, title, limit_s=None):
        self.number, self.title, self.limit = number, title, limit_s
        self.t0 = time.perf_counter()
        self.failures, self.notes = [], []

    def check(self, ok, message):
        if not ok:
            self.failures.append(message)
        return ok

    def note(self, message):
        self.notes.append(message)

    def finish(self, seconds=None):
        seconds = time.perf_counter() - self.t0 if seconds is None else seconds
        if self.limit is not None:
            self.check(seconds < self.limit, f"runtime {seconds:.1f}s over the {self.limit}s limit")
        status = "PASS" if not self.failures else "FAIL"
        detail = "; ".join(self.failures + self.notes)
        line = f"criterion {self.number}: {status} {self.title} ({seconds:.1f}s)" + (f" | {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert not self.failures, line


def test_criterion_1_algebra_exactness():
    v = Verdict(1, "published quaternion/octonion tables, rules output", 1.0)
    for k, (sel, sign), layout in ((2, QUAT, "right"), (3, OCT, "left")):
        t = build_table(k, layout)
        v.check(np.array_equal(t.select, sel) and np.array_equal(t.sign, sign),
                f"build_table({k}) differs from the printed matrices")
    for dim, (sel, sign) in ((4, QUAT), (8, OCT)):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = run_cli(["rules", "--dim", str(dim)])
        rows = buf.getvalue().splitlines()[1:]
        parsed_sel = [[int(c) for c in r.split("|")[0].split()] for r in rows]
        parsed_sign = [[int(c) for c in r.split("|")[1].split()] for r in rows]
        v.check(code == 0 and parsed_sel == sel and parsed_sign == sign,
                f"rules --dim {dim} output does not diff clean")
    v.note("quaternion printed in right layout, octonion in left layout")
    v.finish()


def test_criterion_2_oracle_equivalence():
    v = Verdict(2, "hmul vs recursion 1e-12, hlinear vs naive 1e-10", 30.0)
    rng = np.random.default_rng(2)
    worst_mul = worst_lin = 0.0
    for n in (1, 2, 4, 8, 16):
        a, b = rng.standard_normal((2, 1000, n))
        worst_mul = max(worst_mul, np.abs(hmul(a, b) - hmul_recursive(a, b)).max())
        for _ in range(100):
            d_in, d_out = rng.integers(1, 6, size=2)
            p = HLinearParams(Tensor(rng.standard_normal((d_out, d_in, n))),
                              Tensor(rng.standard_normal((d_out, n))))
            x = Tensor(rng.standard_normal((int(rng.integers(1, 4)), d_in, n)))
            worst_lin = max(worst_lin, np.abs(hlinear(x, p).data - hlinear_naive(x, p)).max())
    v.check(worst_mul <= 1e-12, f"hmul max error {worst_mul:.2e}")
    v.check(worst_lin <= 1e-10, f"hlinear max error {worst_lin:.2e}")
    v.note(f"hmul max err {worst_mul:.1e}, hlinear max err {worst_lin:.1e}")
    v.finish()


def test_criterion_3_composition_boundary():
    v = Verdict(3, "norm multiplicativity n<=8, sedenion zero divisor", 60.0)
    rng = np.random.default_rng(3)
    worst = 0.0
    for n in (1, 2, 4, 8):
        a, b = rng.standard_normal((2, 1000, n))
        lhs = np.linalg.norm(hmul(a, b), axis=-1)
        rhs = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
        worst = max(worst, (np.abs(lhs - rhs) / rhs).max())
    v.check(worst <= 1e-9, f"norm multiplicativity rel err {worst:.2e}")
    pair = find_zero_divisor(16)
    v.check(pair is not None, "no zero divisor found for n=16")
    if pair is not None:
        x, y = pair
        v.check(np.all(hmul_recursive(x, y) == 0) and x.any() and y.any(), "pair product is not zero")
        v.note(f"rel err {worst:.1e}; zero divisor ({_terms(x)})({_terms(y)}) = 0")
    v.finish()


def test_criterion_4_activation():
    v = Verdict(4, "HNTanh = tanh on reals 1e-12, Jacobian vs finite differences 1e-5", 60.0)
    grid = np.linspace(-10, 10, 1000)
    err_real = np.abs(hntanh(Tensor(grid[:, None]), 6.0).data[:, 0] - np.tanh(grid)).max()
    v.check(err_real <= 1e-12, f"real HNTanh error {err_real:.2e}")
    rng = np.random.default_rng(4)
    worst = 0.0
    for n in (2, 4, 8, 16):
        for p in (2.0, 3.0, 6.0):
            worst = max(worst, hntanh_jacobian_error(rng, n, p, 500))
    v.check(worst <= 1e-5, f"Jacobian rel err {worst:.2e}")
    v.note(f"real err {err_real:.1e}; Jacobian rel err {worst:.1e} over 500 samples per (n, p)")
    v.finish()


def test_criterion_5_end_to_end_gradients():
    v = Verdict(5, "tiny all-space model grad_check 1e-4 per tensor", 300.0)
    errors = model_gradient_errors(seed=0)
    bad = {k: e for k, e in errors.items() if not e <= 1e-4}
    v.check(not bad, f"tensors over tolerance: {bad}")
    worst = max(errors, key=errors.get)
    v.note(f"{len(errors)} tensors, worst {worst} at {errors[worst]:.1e}")
    v.finish()


def test_criterion_6_fusion_contract():
    v = Verdict(6, "fusion weights sum to 1, channel permutation exact")
    cfg = NumerionConfig(lookback=48, horizon=12, channels=5, embed_dim=16, rhr_hidden=16, dropout=0.0)
    params = init_params(cfg, seed=6)
    x = np.random.default_rng(6).standard_normal((8, 5, 48)) * 3
    y, _, w = numerion_forward(x, params, cfg)
    dev = np.abs(w.data.sum(axis=0) - 1.0).max()
    v.check(dev <= 1e-6, f"weight sums deviate by {dev:.2e}")
    perm = np.random.default_rng(7).permutation(5)
    yp = numerion_forward(x[:, perm], params, cfg)[0].data
    v.check(np.array_equal(yp, y.data[:, perm]), "permuted outputs are not bit-identical")
    v.note(f"max |sum w - 1| = {dev:.1e}; permutation exact")
    v.finish()


def test_criterion_7_spectral_metrics():
    v = Verdict(7, "MAF tone, power-share sum, PVE identity (1e-9)", 10.0)
    t = np.arange(96)
    worst_maf = max(abs(maf(np.cos(2 * np.pi * k / 96 * t + 0.4)) - k / 96) for k in range(1, 49))
    v.check(worst_maf <= 1e-9, f"MAF error {worst_maf:.2e}")
    rng = np.random.default_rng(8)
    worst_share = worst_pve = 0.0
    defined = 0
    for _ in range(100):
        y = rng.standard_normal(96)
        worst_share = max(worst_share, abs(power_share_bins(y).sum() - 1.0))
        for band in zip(BIN_EDGES[:-1], BIN_EDGES[1:]):
            r = pve(y, y, band)
            if r is not None:
                defined += 1
                worst_pve = max(worst_pve, abs(r - 1.0))
    v.check(worst_share <= 1e-9, f"power share sum error {worst_share:.2e}")
    v.check(worst_pve <= 1e-9 and defined >= 600, f"PVE error {worst_pve:.2e} ({defined} bands)")
    v.note(f"MAF err {worst_maf:.1e}, share err {worst_share:.1e}, PVE err {worst_pve:.1e}")
    v.finish()


# ETTh1 desk-scale session shared by criteria 8-10


@pytest.fixture(scope="module")
def etth1_run():
    if not ETTH1.exists():
        pytest.skip("data/ETTh1.csv not present")
    table = load_csv(ETTH1)
    splits = split_standardize_window(table, 96, 96, ETT_HOURLY_ROWS, "rows")
    t0 = time.perf_counter()
    res = train(DESK_MODEL, DESK_TRAIN, splits[0], splits[1])
    seconds = time.perf_counter() - t0
    metrics = evaluate(res.params, DESK_MODEL, splits[2])
    return {"table": table, "splits": splits, "result": res, "metrics": metrics, "seconds": seconds}


@pytest.mark.slow
def test_criterion_8_desk_scale_etth1(etth1_run):
    v = Verdict(8, "ETTh1 T=96 P=96 test MAE <= 0.42 in under 45 min", 45 * 60)
    m, res = etth1_run["metrics"], etth1_run["result"]
    v.check(m["mae"] <= 0.42, f"test MAE {m['mae']:.4f} > 0.42")
    base = persistence_metrics(etth1_run["splits"][2])
    # the window-count partition is trained and reported alongside
    alt = split_standardize_window(etth1_run["table"], 96, 96, ETTH1_TABLE_PARTITION, "windows")
    t0 = time.perf_counter()
    alt_res = train(DESK_MODEL, DESK_TRAIN, alt[0], alt[1])
    alt_m = evaluate(alt_res.params, DESK_MODEL, alt[2])
    alt_s = time.perf_counter() - t0
    v.note(f"rows split (8640/2880/2880): MAE {m['mae']:.4f} MSE {m['mse']:.4f}, best epoch "
           f"{res.best_epoch}, {etth1_run['seconds']:.0f}s; persistence MAE {base['mae']:.4f}; "
           f"window split (8545/2881/2881): MAE {alt_m['mae']:.4f} MSE {alt_m['mse']:.4f}, {alt_s:.0f}s")
    v.finish(etth1_run["seconds"])


@pytest.mark.slow
def test_criterion_9_ablation_directionality(etth1_run):
    v = Verdict(9, "w/o Adaptive Fusion and w/o Multi-Level Patch degrade test MAE")
    rows = run_ablation([6, 12], DESK_MODEL, DESK_TRAIN, etth1_run["splits"],
                        full_metrics=etth1_run["metrics"])
    full = rows[0].mae
    for r in rows[1:]:
        v.check(r.mae > full, f"{r.name}: MAE {r.mae:.4f} does not exceed full {full:.4f}")
    v.note(f"full {full:.4f}; " + "; ".join(f"{r.name} {r.mae:.4f} ({r.delta_mae_pct:+.2f}%)"
                                             for r in rows[1:]))
    v.finish()


@pytest.mark.slow
def test_criterion_10_decomposition_ordering(etth1_run):
    v = Verdict(10, "MAF: Real at or near the top, 16-dim space below it")
    splits, params = etth1_run["splits"], etth1_run["result"].params
    channel = splits[2].n_channels - 1  # OT, the forecasting target of ETT
    rep = decomposition_report(params, DESK_MODEL, splits[2], channel)
    order = rep.maf_order()
    v.check(order.index(1) <= 1, f"Real ranks {order.index(1) + 1} of {len(order)}")
    v.check(order.index(16) > order.index(1), "16-dim space is not below Real")
    names = " > ".join(SPACE_NAMES[s] for s in order)
    mafs = ", ".join(f"{SPACE_NAMES[s.space]} {s.maf:.4f}" for s in rep.spaces)
    others = []
    for ch in range(splits[2].n_channels - 1):
        o = decomposition_report(params, DESK_MODEL, splits[2], ch).maf_order()
        others.append(f"{ch}:" + ">".join(str(s) for s in o))
    v.note(f"OT order {names} ({mafs}); other channels " + " ".join(others))
    v.finish()
