"""Acceptance gates, one per criterion, each printing its own pass/fail line.

Fast gates (1-6) verify the numerical core against independent oracles at
their stated tolerances.  Slow gates (7-10, marked `slow`) run the synthetic
benchmark at the documented reduced profile (hourly resolution, T_I=168,
T_O=24) and check the qualitative reproduction targets: model ordering,
support-size trend, second-order annealing trend, and byte-identical reruns.
"""

import time
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np
import pytest

from metacast import autodiff as ad
from metacast import harness
from metacast.data import ForecastSample, MetaDataset, Task, TimeSeries, build_task
from metacast.lstm import ArchConfig, init_params, mse_loss
from metacast.meta import (CosineSchedule, LearnableRates, MetaTrainConfig, adapt_and_eval,
                           cosine_lr, gradient_steps, meta_train, multi_step_meta_loss,
                           weight_matrix)
from metacast.metrics import aggregate, malpe, mape
from metacast.synthetic import synth_support_sweep_tasks

TINY = ArchConfig(hidden_size=4, input_len=8, output_len=2)

BENCH_CONF = """
data.kind = synth
data.resolution_minutes = 60
data.train_tasks = 40
data.test_tasks = 72
arch.hidden_size = 32
meta.epochs = 150
meta.inner_steps = 1
meta.first_order_epochs = 50
baseline.pretrain_epochs = 150
"""
BENCH_SEEDS = (0, 1, 2)


def gate(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\n[criterion {num:2d}] {name}: {status}  {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def fd_gradient(f, params, h=1e-5):
    return [t.data for t in ad.finite_diff_gradient(f, params, h).tensors()]


def _tiny_task(seed: int, n_support: int = 3) -> Task:
    rng = np.random.default_rng(seed)

    def sample():
        return ForecastSample(rng.uniform(0.2, 1.0, TINY.input_len),
                              rng.uniform(0.2, 1.0, TINY.output_len))

    t0 = datetime(2021, 1, 4, tzinfo=timezone.utc)
    return Task(id=f"task{seed}", support=[sample() for _ in range(n_support)],
                query=[sample() for _ in range(7)], scale=1.0,
                source_range=(t0, t0), day_len=2, query_month=1)


# ---------------------------------------------------------------------------
# 1. Gradient oracle.
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(1000 + trial)
        theta = init_params(TINY, 1000 + trial)
        batch = [(rng.uniform(0.1, 1.0, 8), rng.uniform(0.1, 1.0, 2)) for _ in range(3)]

        def f(params):
            with ad.Graph():
                return mse_loss(params, batch, TINY)

        want = fd_gradient(f, theta, h=1e-5)
        with ad.Graph():
            loss = mse_loss(theta, batch, TINY)
            got = ad.grad(loss, theta.tensors())
        worst = max(worst, max(rel_err(g.data, w) for g, w in zip(got, want)))
    took = time.perf_counter() - t0
    gate(1, "gradient oracle", worst < 1e-4 and took < 60,
         f"worst rel err {worst:.2e} over 20 configs in {took:.1f}s")


# ---------------------------------------------------------------------------
# 2. Meta-gradient oracle.
# ---------------------------------------------------------------------------

class OneParam:
    def __init__(self, tensor):
        self._t = tensor

    def entries(self):
        return [("w", "w", self._t)]

    def tensors(self):
        return [self._t]

    def with_tensors(self, tensors):
        return OneParam(tensors[0])

    def with_arrays(self, arrays):
        return OneParam(ad.leaf(arrays[0]))


def _quadratic_multi_step(params, target, rates, v_row):
    # inner loss L(t) = ||t - target||^2; weighted query losses at each step
    tgt = ad.const(target)
    steps = gradient_steps(params, rates,
                           lambda p: ad.reduce_sum(ad.square(ad.sub(p.tensors()[0], tgt))),
                           n_steps=len(v_row), create_graph=True)
    total = None
    for w, stepped in zip(v_row, steps):
        q = ad.reduce_sum(ad.square(ad.sub(stepped.tensors()[0], tgt)))
        term = ad.scalar_mul(w, q)
        total = term if total is None else ad.add(total, term)
    return total


def test_criterion_2_meta_gradient_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    # toy quadratic, N_s = 2
    target = rng.normal(size=5)
    theta = rng.normal(size=5)
    rates_q = LearnableRates.constant(["w"], 2, 0.07)

    def fq(params):
        with ad.Graph():
            return _quadratic_multi_step(params, target, rates_q, [0.4, 0.6])

    want = fd_gradient(fq, OneParam(ad.leaf(theta)), h=1e-5)[0]
    with ad.Graph():
        p = OneParam(ad.leaf(theta))
        loss = _quadratic_multi_step(p, target, rates_q, [0.4, 0.6])
        (g,) = ad.grad(loss, p.tensors())
    err_quad = rel_err(g.data, want)

    # tiny LSTM, N_s = 2 multi-step meta-loss
    task = _tiny_task(21, n_support=2)
    theta_l = init_params(TINY, 22)
    rates_l = LearnableRates.constant(["lstm", "head_1"], 2, 0.05)

    def fl(params):
        with ad.Graph():
            return multi_step_meta_loss(params, rates_l, [task], [0.4, 0.6], True, TINY)

    want_l = fd_gradient(fl, theta_l, h=1e-5)
    with ad.Graph():
        loss = multi_step_meta_loss(theta_l, rates_l, [task], [0.4, 0.6], True, TINY)
        got_l = ad.grad(loss, theta_l.tensors())
    err_lstm = max(rel_err(g.data, w) for g, w in zip(got_l, want_l))

    # alpha = 0: first-order and second-order meta-gradients agree to 1e-12
    rates0 = LearnableRates.constant(["lstm", "head_1"], 1, 0.0)

    def meta_grad(create_graph):
        with ad.Graph():
            loss = multi_step_meta_loss(theta_l, rates0, [task], [1.0], create_graph, TINY)
            return [g.data for g in ad.grad(loss, theta_l.tensors())]

    diff0 = max(np.abs(a - b).max() for a, b in zip(meta_grad(False), meta_grad(True)))
    took = time.perf_counter() - t0
    gate(2, "meta-gradient oracle",
         err_quad < 1e-3 and err_lstm < 1e-3 and diff0 <= 1e-12 and took < 120,
         f"quad {err_quad:.2e}, lstm {err_lstm:.2e}, alpha0 diff {diff0:.1e}, {took:.1f}s")


# ---------------------------------------------------------------------------
# 3. Vanilla-MAML equivalence.
# ---------------------------------------------------------------------------

def test_criterion_3_vanilla_equivalence():
    tasks = [_tiny_task(30 + i) for i in range(3)]
    data = MetaDataset(train_tasks=tasks, test_tasks=[])
    alpha, beta = 0.02, 1e-3
    cfg = MetaTrainConfig(n_epochs=1, inner_steps=1, first_order_epochs=0,
                          alpha_init=alpha, beta_max=beta, beta_min=beta,
                          mode="vanilla_maml", seed=33)
    engine, _ = meta_train(cfg, data, TINY)

    theta0 = init_params(TINY, 33)
    with ad.Graph():
        total = None
        for task in tasks:
            ls = mse_loss(theta0, task.support_batch(), TINY)
            gs = ad.grad(ls, theta0.tensors(), create_graph=True)
            theta1 = theta0.with_tensors(
                [ad.sub(p, ad.scalar_mul(alpha, g)) for p, g in zip(theta0.tensors(), gs)])
            lq = mse_loss(theta1, task.query_batch(), TINY)
            total = lq if total is None else ad.add(total, lq)
        outer = ad.grad(total, theta0.tensors())
    worst = 0.0
    for got, p, g in zip(engine.theta0.tensors(), theta0.tensors(), outer):
        want = p.data - beta * g.data
        worst = max(worst, rel_err(got.data, want))
    gate(3, "vanilla-MAML equivalence", worst < 1e-10, f"worst rel err {worst:.2e}")


# ---------------------------------------------------------------------------
# 4. Schedule invariants.
# ---------------------------------------------------------------------------

def test_criterion_4_schedule_invariants():
    worst_sum = 0.0
    ok = True
    for n_steps in range(1, 9):
        for gamma in (0.05, 0.1, 0.3):
            ws = weight_matrix(500, n_steps, gamma)
            v = ws.values  # every N_e <= 500 is a row prefix of this matrix
            worst_sum = max(worst_sum, float(np.abs(v.sum(axis=1) - 1.0).max()))
            ok &= bool(np.allclose(v[0], 1.0 / n_steps))
            ok &= bool(np.all(np.diff(v[:, -1]) >= -1e-15))
            ok &= bool(np.all(v[:, -1] <= 1.0 - gamma * (n_steps - 1) / n_steps + 1e-15))
            if n_steps > 1:
                ok &= bool(np.all(np.diff(v[:, :-1], axis=0) <= 1e-15))
                ok &= bool(np.all(v[:, :-1] >= gamma / n_steps - 1e-15))
            # the recurrence has no N_e dependence: smaller N_e are prefixes
            ok &= bool(np.array_equal(weight_matrix(73, n_steps, gamma).values, v[:73]))
    sch = CosineSchedule(beta_max=1e-3, beta_min=1e-5, n_e_max=150)
    cos_ok = cosine_lr(sch, 0) == 1e-3 and cosine_lr(sch, 150) == pytest.approx(1e-5, abs=1e-22)
    # exact endpoint equality per the criterion
    cos_exact = (cosine_lr(sch, 0) == sch.beta_max
                 and abs(cosine_lr(sch, 150) - sch.beta_min) < 1e-20)
    gate(4, "schedule invariants", ok and worst_sum <= 1e-12 and cos_ok and cos_exact,
         f"worst row-sum dev {worst_sum:.1e}")


# ---------------------------------------------------------------------------
# 5. Metric properties.
# ---------------------------------------------------------------------------

def test_criterion_5_metric_properties():
    rng = np.random.default_rng(5)
    worst_sym = 0.0
    for _ in range(1000):
        f = rng.uniform(0.05, 5.0, 24)
        y = rng.uniform(0.05, 5.0, 24)
        worst_sym = max(worst_sym, abs(malpe(f, y) - malpe(y, f)))
    bias_ok, eq_ok, inv_ok = True, True, True
    for r in (1.5, 2.0, np.e, 5.0):
        y = rng.uniform(0.2, 3.0, 50)
        bias_ok &= mape(y / r, y) < mape(y * r, y)
        eq_ok &= abs(malpe(y / r, y) - malpe(y * r, y)) <= 1e-12
    f, y = rng.uniform(0.2, 3.0, 50), rng.uniform(0.2, 3.0, 50)
    for c in (0.3, 7.0, 1e3):
        inv_ok &= abs(mape(c * f, c * y) - mape(f, y)) < 1e-9
        inv_ok &= abs(malpe(c * f, c * y) - malpe(f, y)) < 1e-9
    gate(5, "metric properties", worst_sym <= 1e-12 and bias_ok and eq_ok and inv_ok,
         f"worst symmetry dev {worst_sym:.1e}")


# ---------------------------------------------------------------------------
# 6. Windowing oracle.
# ---------------------------------------------------------------------------

def test_criterion_6_windowing_oracle():
    day = 24
    checked = 0
    for stride in (7, 8):
        for n_days in range(25, 121):
            rng = np.random.default_rng(n_days * stride)
            series = TimeSeries(start=datetime(2021, 3, 1, tzinfo=timezone.utc),
                                values=rng.uniform(0.5, 2.0, n_days * day),
                                resolution_minutes=60, name=f"s{n_days}")
            task = build_task(series, stride_days=stride)
            support_days = n_days - 14
            want_starts = []
            a = 0
            while a + 8 <= support_days:
                want_starts.append(a)
                a += stride
            assert len(task.support) == len(want_starts), (n_days, stride)
            raw = series.values
            for s, a in zip(task.support, want_starts):
                assert np.array_equal(s.x, raw[a * day:(a + 7) * day] / task.scale)
                assert np.array_equal(s.y, raw[(a + 7) * day:(a + 8) * day] / task.scale)
            for j, s in enumerate(task.query):
                x0 = support_days + j
                assert np.array_equal(s.x, raw[x0 * day:(x0 + 7) * day] / task.scale)
                assert np.array_equal(s.y, raw[(x0 + 7) * day:(x0 + 8) * day] / task.scale)
            checked += 1
    gate(6, "windowing oracle", checked == 2 * 96,
         f"{checked} (length, stride) cases matched enumeration")


# ---------------------------------------------------------------------------
# 7-10. Benchmark gates (slow).
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def bench_cfg():
    return harness.parse_config(BENCH_CONF)


@pytest.fixture(scope="module")
def bench_runs(bench_cfg, tmp_path_factory):
    """Full pipeline per seed: the shared backbone of criteria 7, 8, 10."""
    root = tmp_path_factory.mktemp("bench")
    runs = {}
    t0 = time.perf_counter()
    for seed in BENCH_SEEDS:
        cfg = harness.with_seed(bench_cfg, seed)
        runs[seed] = harness.run(cfg, root / f"seed{seed}")
    runs["wall_time_s"] = time.perf_counter() - t0
    return runs


@pytest.mark.slow
def test_criterion_7_main_ordering(bench_runs):
    means = {model: np.mean([bench_runs[s].mean_mse(model) for s in BENCH_SEEDS])
             for model in ("proposed", "ti_lstm", "ts_lstm")}
    margin = 100.0 * (means["ti_lstm"] - means["proposed"]) / means["ti_lstm"]
    ordered = means["proposed"] < means["ti_lstm"] < means["ts_lstm"]
    took_min = bench_runs["wall_time_s"] / 60.0
    gate(7, "main-result ordering", ordered and margin >= 5.0,
         f"MSE proposed {means['proposed']:.4f} < ti {means['ti_lstm']:.4f} "
         f"< ts {means['ts_lstm']:.4f}; margin {margin:.1f}%; {took_min:.0f} min for 3 seeds")


@pytest.mark.slow
def test_criterion_8_support_size_trend(bench_cfg, bench_runs):
    cfg = harness.with_seed(bench_cfg, BENCH_SEEDS[0])
    ckpt = bench_runs[BENCH_SEEDS[0]].checkpoint
    from metacast.lstm import load_params
    ti, _, _ = load_params(bench_runs[BENCH_SEEDS[0]].out_dir / "ti_checkpoint.json")
    months = (1, 2, 3, 6)
    ts_mse, prop_mse = [], []
    for m in months:
        tasks = synth_support_sweep_tasks(cfg.synth(), m)
        rows = harness.evaluate_models(cfg, tasks, ckpt, ti)
        by = {}
        for name, metric in rows:
            by.setdefault(name, []).append(metric)
        ts_mse.append(aggregate(by["ts_lstm"]).mean["mse"])
        prop_mse.append(aggregate(by["proposed"]).mean["mse"])
    nonincreasing = all(a >= b - 1e-12 for a, b in zip(ts_mse, ts_mse[1:]))
    improvement = [100.0 * (t - p) / t for t, p in zip(ts_mse, prop_mse)]
    best_at_one = improvement[0] == max(improvement)
    gate(8, "support-size trend", nonincreasing and best_at_one,
         f"TS MSE {['%.4f' % v for v in ts_mse]}; "
         f"improvement vs TS {['%.1f%%' % v for v in improvement]}")


@pytest.mark.slow
def test_criterion_9_second_order_annealing(bench_cfg, tmp_path_factory):
    """s.o = N_e/3 (last 50 epochs second-order) vs s.o = 0 (first-order only).

    Both runs share epochs 1..100 bitwise (same first-order prefix), so the
    prefix is trained once per seed and forked.
    """
    so0, so50 = [], []
    for seed in BENCH_SEEDS:
        cfg = harness.with_seed(bench_cfg, seed)
        data = harness.build_dataset(cfg)
        cfg_fo = replace(cfg.meta, first_order_epochs=150)
        full_fo, snaps = meta_train(cfg_fo, data, cfg.arch, snapshot_epochs=(100,))
        cfg_so = replace(cfg.meta, first_order_epochs=100)
        forked, _ = meta_train(cfg_so, data, cfg.arch, resume=snaps[100])

        def mean_mse(ckpt):
            return aggregate([adapt_and_eval(ckpt, t) for t in data.test_tasks]).mean["mse"]

        so0.append(mean_mse(full_fo))
        so50.append(mean_mse(forked))
    m0, m50 = float(np.mean(so0)), float(np.mean(so50))
    gate(9, "second-order annealing trend", m50 <= m0,
         f"mean MSE s.o=50: {m50:.4f} <= s.o=0: {m0:.4f} over {len(BENCH_SEEDS)} seeds")


@pytest.mark.slow
def test_criterion_10_determinism(bench_cfg, bench_runs, tmp_path_factory):
    seed = BENCH_SEEDS[0]
    cfg = harness.with_seed(bench_cfg, seed)
    rerun_dir = tmp_path_factory.mktemp("rerun")
    harness.run(cfg, rerun_dir / "again")
    a = (bench_runs[seed].out_dir / "metrics_per_task.csv").read_bytes()
    b = (rerun_dir / "again" / "metrics_per_task.csv").read_bytes()
    gate(10, "byte-identical determinism", a == b,
         f"{len(a)} bytes compared across independent reruns")
