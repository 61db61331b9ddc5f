"""Acceptance criteria 1-11, one verdict line each (see the terminal summary)."""

import json
import time

import numpy as np
import pytest

from dnrsurv import cli, descriptor, dnr, embank, stain
from dnrsurv.descriptor import SlideGrid
from dnrsurv.dnr import LinearCodec
from dnrsurv.embank import MemoryBank, NeighborSets
from dnrsurv.survival import (c_index, efron_loglik, fit_cox, forward_select, kaplan_meier, log_rank,
                              loocv_linear_predictors)
from dnrsurv.synth import cox_sample

from oracles import breslow_exact, c_index_pairs, central_diff, rel_err
from test_metrics import E10, G10, T10


def unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


# ---------------------------------------------------------------- 1

def test_c01_gradient_fidelity(report):
    start = time.perf_counter()
    worst = {"mse": 0.0, "divide": 0.0, "rule": 0.0, "cox_grad": 0.0, "cox_hess": 0.0}
    n_inst = 20
    for seed in range(n_inst):
        rng = np.random.default_rng(seed)
        codec = LinearCodec.init(5, 4, 3, seed=seed)
        u, x = rng.standard_normal((6, 5)), rng.standard_normal((6, 4))
        _, g_enc, g_dec = dnr.mse_loss(codec, u, x)
        fd_e = central_diff(lambda w: dnr.mse_loss(LinearCodec(w, codec.decoder), u, x)[0], codec.encoder)
        fd_d = central_diff(lambda w: dnr.mse_loss(LinearCodec(codec.encoder, w), u, x)[0], codec.decoder)
        worst["mse"] = max(worst["mse"], rel_err(g_enc, fd_e), rel_err(g_dec, fd_d))

        bank = MemoryBank.random(8, 4, seed=seed, include_self=bool(seed % 2))
        nb = NeighborSets(spatial={i: frozenset({(i + 1) % 8, (i - 1) % 8}) for i in range(8)},
                          feature={i: [(i + 3) % 8] for i in range(8)})
        batch = [0, 2, 5]
        live = unit_rows(rng.standard_normal((3, 4)))
        for key, fn in (("divide", dnr.divide_loss), ("rule", dnr.rule_loss)):
            _, g = fn(bank, nb, batch, live)
            worst[key] = max(worst[key], rel_err(g, central_diff(lambda z: fn(bank, nb, batch, z)[0], live)))

        X = rng.standard_normal((15, 3))
        t = rng.integers(1, 6, 15).astype(float)
        e = (rng.random(15) < 0.7).astype(int)
        e[0] = 1
        beta = 0.5 * rng.standard_normal(3)
        _, g, h = efron_loglik(beta, X, t, e)
        fd_g = central_diff(lambda b: efron_loglik(b, X, t, e, derivatives=False), beta)
        fd_h = np.column_stack([central_diff(lambda b: efron_loglik(b, X, t, e)[1][k], beta) for k in range(3)])
        worst["cox_grad"] = max(worst["cox_grad"], rel_err(g, fd_g))
        worst["cox_hess"] = max(worst["cox_hess"], rel_err(h, fd_h))
    elapsed = time.perf_counter() - start
    ok = (max(worst["mse"], worst["divide"], worst["rule"]) < 1e-5
          and max(worst["cox_grad"], worst["cox_hess"]) < 1e-6 and elapsed < 10)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(1, ok, f"gradient fidelity on {n_inst} instances each: max rel err {detail}; {elapsed:.2f}s")


# ---------------------------------------------------------------- 2

def test_c02_likelihood_oracle(report):
    worst = 0.0
    count = 0
    for n in range(1, 13):
        for seed in range(10):
            rng = np.random.default_rng(1000 * n + seed)
            X = rng.standard_normal((n, 2))
            t = rng.permutation(n) + 1.0
            e = rng.integers(0, 2, n)
            e[0] = 1
            beta = rng.standard_normal(2)
            ll = efron_loglik(beta, X, t, e, derivatives=False)
            worst = max(worst, abs(ll - breslow_exact(beta, X, t, e)))
            count += 1
    tied = efron_loglik([0.0], np.zeros((3, 1)), [1, 1, 2], [1, 1, 0], derivatives=False)
    tied_err = abs(tied + np.log(3) + np.log(2))
    ok = worst <= 1e-12 and tied_err <= 1e-12
    assert report(2, ok, f"Efron vs enumerated Breslow on {count} tie-free sets (n<=12): max |diff| {worst:.1e}; "
                         f"tied d=2,n=3 example err {tied_err:.1e}")


# ---------------------------------------------------------------- 3

def test_c03_beta_recovery(report):
    start = time.perf_counter()
    X, t, e = cox_sample([0.8, -0.5], 2000, seed=0)
    fit = fit_cox(X, t, e)
    elapsed = time.perf_counter() - start
    err = np.abs(fit.beta - [0.8, -0.5])
    ok = bool(np.all(err <= 0.1)) and elapsed < 5
    assert report(3, ok, f"beta recovery n=2000: beta_hat=({fit.beta[0]:.4f}, {fit.beta[1]:.4f}), "
                         f"max err {err.max():.4f}; {elapsed:.2f}s")


# ---------------------------------------------------------------- 4

def test_c04_selection_calibration(report):
    reps = 200
    accepted = 0
    for seed in range(reps):
        rng = np.random.default_rng(seed)
        n = 200
        X = rng.standard_normal((n, 1))
        t = rng.exponential(size=n)
        c = rng.exponential(2.0, n)
        trace, _ = forward_select(X, np.minimum(t, c), (t <= c).astype(int), alpha=0.05)
        accepted += trace.n_feat > 0
    rate = accepted / reps
    ok = abs(rate - 0.05) <= 0.04
    assert report(4, ok, f"null first-step acceptance over {reps} replicates: {rate:.3f} (target 0.05 +- 0.04)")


# ---------------------------------------------------------------- 5

def test_c05_c_index_exactness(report):
    mismatches = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        eta = rng.integers(0, 6, 20).astype(float)
        t = rng.integers(1, 12, 20).astype(float)
        e = rng.integers(0, 2, 20)
        e[np.argmin(t)] = 1
        t[np.argmin(t)] = 0.5  # guarantees a comparable pair
        mismatches += c_index(eta, t, e) != c_index_pairs(eta, t, e)
    const = c_index(np.zeros(20), np.arange(1.0, 21.0), np.ones(20))
    ok = mismatches == 0 and const == 0.5
    assert report(5, ok, f"C-index vs pairwise oracle: {mismatches}/100 mismatches; constant eta -> {const}")


# ---------------------------------------------------------------- 6

def test_c06_km_log_rank(report):
    km3 = kaplan_meier([1, 2, 3], [1, 1, 1]).survival
    ok_3 = np.allclose(km3, [2 / 3, 1 / 3, 0], atol=1e-15)
    km10 = kaplan_meier(T10, E10).survival
    ok_10 = np.allclose(km10, [9 / 10, 8 / 10, 24 / 35, 16 / 35, 32 / 105, 16 / 105], atol=1e-15)
    table = [(10, 5, 1, 1), (9, 4, 1, 0), (7, 3, 1, 0), (6, 3, 2, 1), (3, 1, 1, 0), (2, 1, 1, 1)]
    o = sum(r[3] for r in table)
    ex = sum(d * na / n for n, na, d, _ in table)
    v = sum(d * (n - d) / (n - 1) * na * (n - na) / n ** 2 for n, na, d, _ in table)
    lr = log_rank(T10, E10, G10)
    lr_err = abs(lr.statistic - (o - ex) ** 2 / v)
    same = log_rank(np.r_[T10, T10], np.r_[E10, E10], np.repeat([0, 1], 10))
    ok = ok_3 and ok_10 and lr_err < 1e-10 and same.p_value == 1.0
    assert report(6, ok, f"KM (1,2,3) {'ok' if ok_3 else 'bad'}, 10-patient worksheet {'ok' if ok_10 else 'bad'}; "
                         f"log-rank err {lr_err:.1e}; identical groups p={same.p_value}")


# ---------------------------------------------------------------- 7

def test_c07_descriptor(report):
    d = descriptor.build("p", [SlideGrid.from_labels("s", np.array([[0, 0, 1, 1]]))], 2, neighborhood=4)
    ok_chain = np.allclose(d.h_c, [0.5, 0.5]) and np.allclose(d.h_t, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]])
    lens = {k: len(descriptor.flatten(descriptor.build("p", [SlideGrid.from_labels("s", np.zeros((2, 2), int))], k)))
            for k in (8, 16)}
    ok = ok_chain and lens == {8: 72, 16: 272}
    assert report(7, ok, f"1x4 chain h_c={d.h_c.tolist()}, h_t rows ok={ok_chain}; lengths {lens}")


# ---------------------------------------------------------------- 8 and 11

@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    runs = {}
    start = time.perf_counter()
    for name, beta in (("signal", "default"), ("null", "zero")):
        out = root / name
        code = cli.main(["pipeline", "--out", str(out), "--seed", "0", "--beta-star", beta])
        metrics = json.loads((out / "metrics.json").read_text()) if code == 0 else {}
        runs[name] = (code, out, metrics)
    return runs, time.perf_counter() - start


@pytest.mark.slow
def test_c08_end_to_end(report, e2e):
    runs, elapsed = e2e
    c_sig = runs["signal"][2].get("c_index_loocv", float("nan"))
    c_null = runs["null"][2].get("c_index_loocv", float("nan"))
    ok = c_sig > 0.65 and abs(c_null - 0.5) <= 0.05 and elapsed < 300
    assert report(8, ok, f"pipeline LOOCV C-index planted {c_sig:.4f} (>0.65), null {c_null:.4f} (0.5 +- 0.05); "
                         f"both runs {elapsed:.1f}s")


@pytest.mark.slow
def test_c11_determinism(report, e2e, tmp_path):
    runs, _ = e2e
    out = runs["signal"][1]
    bad = []
    for stage in ("synth", "train", "cluster", "describe", "select", "evaluate", "km"):
        ok, status = cli.replay(out / f"manifest.{stage}.json", tmp_path / stage)
        if not ok:
            bad.append((stage, [k for k, v in status.items() if not v]))
    X, t, e = cox_sample([0.6, -0.3, 0.2], 120, seed=11, censoring_rate=0.3)
    base = loocv_linear_predictors(X, t, e)
    perm = np.random.default_rng(1).permutation(120)
    par = loocv_linear_predictors(X, t, e, n_jobs=4, order=perm)
    rev = loocv_linear_predictors(X, t, e, order=perm[::-1])
    diff = max(np.max(np.abs(base - par)), np.max(np.abs(base - rev)))
    ok = not bad and diff <= 1e-10
    assert report(11, ok, f"manifest replay of 7 stages: {'all byte-identical' if not bad else bad}; "
                          f"LOOCV schedule max diff {diff:.1e}")


# ---------------------------------------------------------------- 9

def blob_task(seed, n=12, d=16, noise=0.3):
    rng = np.random.default_rng(seed)
    r, c = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    r, c = r.ravel(), c.ravel()
    proto = unit_rows(rng.standard_normal((2, d)))
    x = proto[(c >= n // 2).astype(int)] + noise * rng.standard_normal((r.size, d))
    return x, embank.grid_neighbors(["s"] * r.size, r, c, 8)


def test_c09_curriculum(report):
    gains = []
    nested = True
    for seed in range(10):
        x, sp = blob_task(seed)
        cfg = dict(epochs_pretrain=10, epochs_divide=10, epochs_rule=10, rounds=3,
                   lam=1e-2, lr=0.5, batch_size=64, seed=seed)
        after_a = dnr.train(x, sp, dnr.TrainConfig(**{**cfg, "epochs_divide": 0, "rounds": 0}))
        full = dnr.train(x, sp, dnr.TrainConfig(**cfg))
        gains.append(dnr.mean_spatial_similarity(full.codec.embed(x), sp)
                     - dnr.mean_spatial_similarity(after_a.codec.embed(x), sp))
        parts = full.partitions
        nested &= all(a.expansion_set <= b.expansion_set for a, b in zip(parts, parts[1:]))
        nested &= parts[-1].expansion_set == frozenset(range(len(x)))
    ok = min(gains) > 0 and nested
    assert report(9, ok, f"2-blob within-S_i cosine gain phase (a) -> end of (c): min {min(gains):+.4f}, "
                         f"mean {np.mean(gains):+.4f} over 10 seeds; partitions nested={nested}")


# ---------------------------------------------------------------- 10

def test_c10_stain_round_trip(report):
    h = np.array([0.65, 0.70, 0.29])
    e = np.array([0.07, 0.99, 0.11])
    truth = stain.StainMatrix(h / np.linalg.norm(h), e / np.linalg.norm(e))
    worst_c = worst_a = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        c = rng.uniform(0.1, 1.2, (32, 32, 2))
        u = rng.random((32, 32))
        c[u < 0.2, 1] = 0.0
        c[(u >= 0.2) & (u < 0.4), 0] = 0.0
        rgb = stain.render_rgb(c, truth)
        od = stain.rgb_to_od(rgb)
        est = stain.estimate_stain_matrix(od)
        he = stain.deconvolve(od, est)
        worst_c = max(worst_c, float(np.max(np.abs(he.channels - c))))
        for a, b in ((est.h_vector, truth.h_vector), (est.e_vector, truth.e_vector)):
            worst_a = max(worst_a, float(np.arccos(np.clip(a @ b, -1, 1))))
    ok = worst_c < 1e-3 and worst_a < 1e-6
    assert report(10, ok, f"noiseless two-stain render: max conc err {worst_c:.1e}, max angle err {worst_a:.1e} rad")
