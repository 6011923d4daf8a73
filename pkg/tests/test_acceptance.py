"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line before asserting.

Trained models come from ``model_cache`` (built on first use, then reused).
"""

from __future__ import annotations

import time

import numpy as np
import pytest

import model_cache
from longmem.cli import bench
from longmem.estimators import METHODS, estimate
from longmem.experiment import default_prior, evaluate, stress_run
from longmem.fgn import FgnEngine, circulant_spectrum, fgn_autocov
from longmem.nn import (
    CnnModel,
    check_model_gradient,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    mse_loss,
    numerical_grad,
    prelu_backward,
    prelu_forward,
    relative_error,
    tiny_topology,
)
from longmem.rng import make_rng

pytestmark = pytest.mark.slow

COUNT = 10_000


def _within(value: float, target: float, rel: float) -> bool:
    return abs(value - target) <= rel * target


def _mse(method, process: str, n: int, count: int = COUNT, seed: int = 0) -> float:
    return evaluate(method, default_prior(process), n, count=count, seed=seed).mse


def test_criterion_01_generator(criterion_report):
    t0 = time.process_time()
    eng = FgnEngine()
    rng = make_rng(101)
    worst = 0.0
    spectra_ok = True
    for H in np.round(np.arange(0.1, 0.91, 0.1), 1):
        X = eng.sample_fgn_batch(4096, H, 2000, rng)
        for k in range(6):
            per_path = np.mean(X[:, k:] * X[:, : X.shape[1] - k], axis=1)
            se = per_path.std(ddof=1) / np.sqrt(per_path.size)
            worst = max(worst, abs(per_path.mean() - fgn_autocov(k, H)) / se)
        spectra_ok &= bool(np.all(circulant_spectrum(4096, H).eigenvalues >= 0))
    cpu = time.process_time() - t0
    ok = worst <= 3.0 and spectra_ok and cpu < 120
    criterion_report(1, ok, f"max |z| over 9 H x 6 lags = {worst:.2f} (<= 3), spectra non-negative "
                            f"{spectra_ok}, {cpu:.0f}s CPU")
    assert ok


def test_criterion_02_table1_classical(criterion_report):
    t0 = time.process_time()
    checks = []
    for name, n, target, rel in [("whittle-fgn", 100, 4.33, 0.20), ("whittle-fgn", 1600, 0.324, 0.20),
                                 ("higuchi", 100, 10.6, 0.25), ("higuchi", 1600, 0.593, 0.25),
                                 ("variogram", 100, 9.30, 0.40), ("rs", 100, 27.6, 0.40)]:
        got = _mse(name, "fbm", n, seed=n) * 1e3
        checks.append((f"{name}@{n} {got:.3f} vs {target}+-{rel:.0%}", _within(got, target, rel)))
    rs = [_mse("rs", "fbm", n, seed=n) for n in (200, 400, 800, 1600)]
    rs = [_mse("rs", "fbm", 100, seed=100)] + rs
    mono = all(b < a for a, b in zip(rs, rs[1:]))
    checks.append((f"R/S trend {[round(v * 1e3, 2) for v in rs]} decreasing", mono))
    cpu = time.process_time() - t0
    ok = all(c for _, c in checks) and cpu < 1800
    failed = [d for d, c in checks if not c]
    criterion_report(2, ok, "; ".join(d for d, _ in checks) + f"; {cpu:.0f}s CPU"
                     + (f" | failing: {failed}" if failed else ""))
    assert ok


def test_criterion_03_whittle_arfima(criterion_report):
    t0 = time.process_time()
    a = _mse("whittle-arfima", "arfima", 100, seed=3) * 1e3
    b = _mse("whittle-arfima", "arfima", 800, seed=4) * 1e3
    cpu = time.process_time() - t0
    ok = _within(a, 9.51, 0.25) and _within(b, 0.846, 0.25) and cpu < 1200
    criterion_report(3, ok, f"n=100 {a:.3f} vs 9.51; n=800 {b:.3f} vs 0.846 (+-25%); {cpu:.0f}s CPU")
    assert ok


def test_criterion_04_qgv_fou(criterion_report):
    t0 = time.process_time()
    a = _mse("qgv", "fou", 100, seed=5) * 1e3
    b = _mse("qgv", "fou", 800, seed=6) * 1e3
    cpu = time.process_time() - t0
    ok = _within(a, 41.0, 0.25) and _within(b, 25.0, 0.25) and cpu < 1200
    criterion_report(4, ok, f"n=100 {a:.2f} vs 41.0; n=800 {b:.2f} vs 25.0 (+-25%); {cpu:.0f}s CPU")
    assert ok


def test_criterion_05_neural_training(criterion_report):
    model, _, trace = model_cache.fbm100_model()
    spec = default_prior("fbm")
    cnn = evaluate(model, spec, 100, count=COUNT, seed=55).mse
    vario = evaluate("variogram", spec, 100, count=COUNT, seed=55).mse
    hig = evaluate("higuchi", spec, 100, count=COUNT, seed=55).mse
    ok = cnn <= 6e-3 and cnn < vario and cnn < hig
    criterion_report(5, ok, f"M_conv eval MSE {cnn * 1e3:.3f}e-3 (<= 6e-3) vs variogram "
                            f"{vario * 1e3:.2f}e-3, Higuchi {hig * 1e3:.2f}e-3 on the same paths; "
                            f"last train epoch {trace[-1][2] * 1e3:.3f}e-3")
    assert ok


def test_criterion_06_invariance(criterion_report):
    model, _, _ = model_cache.fbm100_model()
    x = np.cumsum(FgnEngine().sample_fgn_batch(200, 0.3, 16, make_rng(61)), axis=1)
    t = np.arange(x.shape[1], dtype=float)
    base = model.predict(x)
    worst_model = 0.0
    for lam in (0.1, 1.0, 10.0):
        for c in (-5.0, 0.0, 5.0):
            for mu in (-1.0, 0.0, 1.0):
                worst_model = max(worst_model, np.max(np.abs(model.predict(lam * x + c + mu * t) - base)))
    worst_classic = 0.0
    inc = FgnEngine().sample_fgn_values(1024, 0.6, make_rng(62))
    for name, info in METHODS.items():
        v = np.cumsum(inc) if info.consumes == "path" else inc
        ref = estimate(name, v).value
        for lam in (0.1, 10.0):
            worst_classic = max(worst_classic, abs(estimate(name, lam * v).value - ref))
    ok = worst_model <= 1e-6 and worst_classic <= 1e-9
    criterion_report(6, ok, f"model max deviation {worst_model:.2e} (<= 1e-6); classical "
                            f"{worst_classic:.2e} (<= 1e-9)")
    assert ok


def test_criterion_07_gradients(criterion_report):
    rng = make_rng(71)
    errs = {}
    x = rng.standard_normal((2, 10, 3))
    w = rng.standard_normal((4, 3, 2))
    b = rng.standard_normal(2)
    proj = rng.standard_normal((2, 7, 2))
    f = lambda: float(np.sum(conv1d_forward(x, w, b) * proj))  # noqa: E731
    dx, dw, db = conv1d_backward(x, w, proj)
    errs["conv"] = max(relative_error(dx, numerical_grad(f, x)), relative_error(dw, numerical_grad(f, w)),
                       relative_error(db, numerical_grad(f, b)))
    z = rng.standard_normal((3, 8))
    s = np.array([0.25])
    pz = rng.standard_normal(z.shape)
    f = lambda: float(np.sum(prelu_forward(z, s[0]) * pz))  # noqa: E731
    dz, ds = prelu_backward(z, s[0], pz)
    errs["prelu"] = max(relative_error(dz, numerical_grad(f, z)), relative_error([ds], numerical_grad(f, s)))
    xd = rng.standard_normal((4, 5))
    wd = rng.standard_normal((5, 3))
    bd = rng.standard_normal(3)
    pd = rng.standard_normal((4, 3))
    f = lambda: float(np.sum(dense_forward(xd, wd, bd) * pd))  # noqa: E731
    gx, gw, gb = dense_backward(xd, wd, pd)
    errs["dense"] = max(relative_error(gx, numerical_grad(f, xd)), relative_error(gw, numerical_grad(f, wd)),
                        relative_error(gb, numerical_grad(f, bd)))
    pred, target = rng.standard_normal(4), rng.standard_normal(4)
    errs["mse"] = relative_error(mse_loss(pred, target)[1],
                                 numerical_grad(lambda: mse_loss(pred, target)[0], pred))
    model = CnnModel.init(tiny_topology(), make_rng(72))
    batch = np.cumsum(make_rng(73).standard_normal((2, 24)), axis=1)
    errs["tiny model"] = check_model_gradient(model, batch, np.array([0.25, 0.75]))
    ok = max(errs.values()) < 1e-4
    criterion_report(7, ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (< 1e-4)")
    assert ok


def test_criterion_08_consistency(criterion_report):
    short, _, _ = model_cache.fbm200_model()
    long, _, _ = model_cache.fbm3200_model()
    spec = default_prior("fbm")
    curve = [evaluate(short, spec, n, count=2000, seed=80 + i).mse for i, n in enumerate((200, 800, 3200))]
    tuned = evaluate(long, spec, 3200, count=2000, seed=82).mse
    decreasing = all(b < a for a, b in zip(curve, curve[1:]))
    ok = decreasing and tuned < curve[-1]
    criterion_report(8, ok, f"n=200-only model MSE x1e3 at 200/800/3200: "
                            f"{', '.join(f'{v * 1e3:.3f}' for v in curve)}; fine-tuned at 3200 {tuned * 1e3:.3f}")
    assert ok


def test_criterion_09_stress_anchors(criterion_report):
    model, _, _ = model_cache.fbm3200_model()
    ou = stress_run(model, "ou-alpha-sweep", n=1600, count=2000, seed=91, knobs=[0.0])
    levy = stress_run(model, "levy-sweep", n=1600, count=2000, seed=92, knobs=[2.0])
    a, b = float(np.nanmean(ou.estimate)), float(np.nanmean(levy.estimate))
    ok = 0.45 <= a <= 0.55 and 0.45 <= b <= 0.55
    criterion_report(9, ok, f"fOU alpha=0 mean H {a:.4f}; Levy alpha=2 mean H {b:.4f} (both in [0.45, 0.55])")
    assert ok


def test_criterion_10_bench(criterion_report):
    cached = bench("circulant-cached", 100_000, 100, seed=10)
    chol = bench("cholesky", 8192, 100, seed=10)
    ratio = chol["total_seconds"] / cached["total_seconds"]
    ok = ratio >= 5 and cached["first_seconds"] > cached["steady_per_sequence_seconds"]
    criterion_report(10, ok, f"cached circulant x100 @1e5 {cached['total_seconds']:.2f}s vs Cholesky x100 "
                             f"@8192 {chol['total_seconds']:.2f}s (ratio {ratio:.1f} >= 5); first "
                             f"{cached['first_seconds'] * 1e3:.1f}ms > steady "
                             f"{cached['steady_per_sequence_seconds'] * 1e3:.1f}ms")
    assert ok
