"""Shared oracles and fixtures.

The finite-difference helpers here are the independent gradient oracles:
they only ever evaluate functions numerically and never touch the
engine's backward machinery.
"""

import numpy as np
import pytest


def fd_grad(f, arrays, h=1e-6):
    """Central finite differences of scalar f(*arrays) w.r.t. each array."""
    grads = []
    for k, base in enumerate(arrays):
        base = np.asarray(base, dtype=np.float64)
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        for i in range(base.size):
            hi = [a.copy() for a in arrays]
            lo = [a.copy() for a in arrays]
            hi[k].reshape(-1)[i] += h
            lo[k].reshape(-1)[i] -= h
            flat[i] = (f(*hi) - f(*lo)) / (2.0 * h)
        grads.append(g)
    return grads


def assert_close(actual, expected, rel, what=""):
    """|a - e| <= rel * max(1, |e|), elementwise."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    assert actual.shape == expected.shape, f"{what}: shape {actual.shape} vs {expected.shape}"
    err = np.abs(actual - expected)
    bound = rel * np.maximum(1.0, np.abs(expected))
    worst = float((err - bound).max())
    assert np.all(err <= bound), f"{what}: exceeds tolerance by {worst:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_benchmark():
    """Train/test splits at the default benchmark configuration."""
    from hintnet.synthdata import GenConfig, generate_benchmark

    cfg = GenConfig()
    train, test = generate_benchmark(cfg)
    return cfg, train, test


@pytest.fixture(scope="session")
def reference_runs(default_benchmark):
    """The full reference experiment: 3 seeds x (base, hint, attn_align, 1.5%).

    Pretraining uses the documented base defaults (lr 5e-4, 20 epochs);
    tuning uses the fine-tune defaults (lr 1e-3, 10 epochs). Timing covers
    the pretrain+hint path, which is what the runtime budget constrains.
    """
    import time

    from hintnet.evalsuite import accuracy, evaluate, faithfulness
    from hintnet.hint import TrainConfig, finetune
    from hintnet.model import HyperParams, init_params
    from hintnet.synthdata import generate_split

    cfg, train, test = default_benchmark
    id_test = generate_split(cfg, cfg.bias_train, cfg.n_test, cfg.seed + 2)
    hp = HyperParams(D=cfg.D, K=cfg.K, A=cfg.A)
    seeds = (0, 1, 2)
    runs = {}
    timed_seconds = 0.0
    for seed in seeds:
        t0 = time.perf_counter()
        base, base_log = finetune(
            init_params(hp, seed), train,
            TrainConfig(mode="base", lr=5e-4, epochs=20, seed=seed),
        )
        hint, hint_log = finetune(
            base, train, TrainConfig(mode="hint", lr=1e-3, epochs=10, seed=seed)
        )
        timed_seconds += time.perf_counter() - t0
        attn, attn_log = finetune(
            base, train, TrainConfig(mode="attn_align", lr=1e-3, epochs=10, seed=seed)
        )
        f015, _ = finetune(
            base, train,
            TrainConfig(mode="hint", lr=1e-3, epochs=10, seed=seed, supervised_fraction=0.015),
        )
        entry = {"logs": {"base": base_log, "hint": hint_log, "attn": attn_log}}
        for name, params in (("base", base), ("hint", hint), ("attn", attn), ("f015", f015)):
            entry[name] = {
                "params": params,
                "ood": accuracy(params, test),
                "id": accuracy(params, id_test),
                "train": accuracy(params, train),
            }
        for name in ("base", "hint", "attn"):
            report = evaluate(entry[name]["params"], test, occlusion_examples=0)
            entry[name]["sp_grad"] = report.spearman_grad_human
            entry[name]["sp_attn"] = report.spearman_attn_human
        cg, ca, _ = faithfulness(entry["base"]["params"], test)
        entry["base"]["occ_grad"] = cg
        entry["base"]["occ_attn"] = ca
        runs[seed] = entry
    return {
        "cfg": cfg,
        "hp": hp,
        "train": train,
        "test": test,
        "id_test": id_test,
        "seeds": seeds,
        "runs": runs,
        "timed_seconds": timed_seconds,
    }
