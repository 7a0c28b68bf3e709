import csv
import json

import numpy as np
import pytest

from hintnet.checkpoint import load_checkpoint
from hintnet.cli import main
from hintnet.model import HyperParams, init_params
from hintnet.synthdata import read_jsonl

TINY = {
    "grid": 8,
    "K": 3,
    "C": 3,
    "A": 3,
    "noise_dims": 0,
    "min_side": 2,
    "max_side": 5,
    "n_train": 30,
    "n_test": 12,
    "V": 8,
    "E": 5,
    "H": 6,
    "epochs": 2,
    "batch_size": 8,
}


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture()
def tiny_dataset(tmp_path, tiny_config):
    train = tmp_path / "train.jsonl"
    test = tmp_path / "test.jsonl"
    rc = main(["gen", "--config", str(tiny_config), "--out-train", str(train), "--out-test", str(test)])
    assert rc == 0
    return train, test


def test_gen_counts_and_determinism(tmp_path, tiny_config, tiny_dataset):
    train, test = tiny_dataset
    assert len(read_jsonl(train)) == TINY["n_train"]
    assert len(read_jsonl(test)) == TINY["n_test"]
    train2 = tmp_path / "train2.jsonl"
    test2 = tmp_path / "test2.jsonl"
    main(["gen", "--config", str(tiny_config), "--out-train", str(train2), "--out-test", str(test2)])
    assert train.read_bytes() == train2.read_bytes()
    assert test.read_bytes() == test2.read_bytes()


def test_gen_full_bias_determinism_of_answers(tmp_path, tiny_config):
    cfg = dict(TINY, bias_train=1.0)
    cfg_path = tmp_path / "b1.json"
    cfg_path.write_text(json.dumps(cfg))
    train = tmp_path / "t.jsonl"
    main(["gen", "--config", str(cfg_path), "--out-train", str(train), "--out-test", str(tmp_path / "x.jsonl")])
    for ex in read_jsonl(train):
        assert ex.answer == (ex.question[1] - 1) % cfg["A"]


def test_gen_rejects_unknown_keys(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"grids": 8}))
    rc = main(["gen", "--config", str(bad), "--out-train", str(tmp_path / "a"), "--out-test", str(tmp_path / "b")])
    assert rc == 2


def test_train_writes_artifacts_and_echo(tmp_path, tiny_config, tiny_dataset):
    train, _ = tiny_dataset
    out = tmp_path / "run"
    rc = main(["train", "--config", str(tiny_config), "--data", str(train), "--out", str(out), "--seed", "0"])
    assert rc == 0
    hp = HyperParams(V=8, E=5, H=6, D=6, K=3, A=3)
    params = load_checkpoint(out / "model.ckpt", hp)
    log = [json.loads(line) for line in (out / "log.jsonl").read_text().splitlines()]
    assert len(log) == TINY["epochs"]
    echo = json.loads((out / "config.json").read_text())
    assert echo["command"] == "train"
    assert echo["epochs"] == TINY["epochs"]
    assert echo["mode"] == "base"
    assert echo["data"] == str(train)


def test_train_zero_epochs_equals_init(tmp_path, tiny_config, tiny_dataset):
    train, _ = tiny_dataset
    out = tmp_path / "run0"
    rc = main([
        "train", "--config", str(tiny_config), "--data", str(train),
        "--out", str(out), "--seed", "3", "--epochs", "0",
    ])
    assert rc == 0
    hp = HyperParams(V=8, E=5, H=6, D=6, K=3, A=3)
    params = load_checkpoint(out / "model.ckpt", hp)
    fresh = init_params(hp, 3)
    for name in fresh:
        np.testing.assert_array_equal(params[name], fresh[name])
    assert (out / "log.jsonl").read_text() == ""


def test_train_data_schema_mismatch(tmp_path, tiny_config, tiny_dataset):
    train, _ = tiny_dataset
    cfg = dict(TINY, K=5)
    cfg_path = tmp_path / "k5.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["train", "--config", str(cfg_path), "--data", str(train), "--out", str(tmp_path / "x")])
    assert rc == 2


def run_pipeline(tmp_path, tiny_config, tiny_dataset, mode="hint", frac=None, seed="0"):
    train, test = tiny_dataset
    base_dir = tmp_path / f"base_{seed}"
    main(["train", "--config", str(tiny_config), "--data", str(train), "--out", str(base_dir), "--seed", seed])
    tune_dir = tmp_path / f"{mode}_{frac}_{seed}"
    cmd = [
        "hint", "--config", str(tiny_config), "--data", str(train),
        "--ckpt", str(base_dir / "model.ckpt"), "--out", str(tune_dir),
        "--mode", mode, "--seed", seed,
    ]
    if frac is not None:
        cmd += ["--frac", frac]
    rc = main(cmd)
    assert rc == 0
    return base_dir, tune_dir


def test_hint_frac_zero_continues_base_training(tmp_path, tiny_config, tiny_dataset):
    train, _ = tiny_dataset
    base_dir, tune_dir = run_pipeline(tmp_path, tiny_config, tiny_dataset, frac="0")
    # continued base-mode training from the same checkpoint, same seed
    cont_dir = tmp_path / "cont"
    hp = HyperParams(V=8, E=5, H=6, D=6, K=3, A=3)
    from hintnet.hint import TrainConfig, finetune
    from hintnet.synthdata import read_jsonl as rj

    params = load_checkpoint(base_dir / "model.ckpt", hp)
    cont, _ = finetune(
        params, rj(train),
        TrainConfig(mode="base", epochs=2, batch_size=8, lr=1e-3, seed=0),
    )
    tuned = load_checkpoint(tune_dir / "model.ckpt", hp)
    for name in cont:
        np.testing.assert_array_equal(cont[name], tuned[name])


def test_hint_attn_align_dispatch(tmp_path, tiny_config, tiny_dataset):
    _, tune_dir = run_pipeline(tmp_path, tiny_config, tiny_dataset, mode="attn_align")
    echo = json.loads((tune_dir / "config.json").read_text())
    assert echo["mode"] == "attn_align"
    assert echo["supervised_fraction"] == 0.06


def test_eval_reports_and_determinism(tmp_path, tiny_config, tiny_dataset):
    train, test = tiny_dataset
    base_dir, tune_dir = run_pipeline(tmp_path, tiny_config, tiny_dataset)
    r1 = tmp_path / "r1.json"
    r2 = tmp_path / "r2.json"
    for r in (r1, r2):
        rc = main([
            "eval", "--config", str(tiny_config), "--data", str(test),
            "--ckpt", str(tune_dir / "model.ckpt"), "--report", str(r),
        ])
        assert rc == 0
    assert r1.read_bytes() == r2.read_bytes()
    report = json.loads(r1.read_text())
    assert set(report) == {
        "accuracy", "spearman_grad_human", "spearman_attn_human",
        "corr_grad_occlusion", "corr_attn_occlusion", "iou_top",
        "n_examples", "per_type_accuracy", "degenerate_correlations",
    }
    assert report["n_examples"] == TINY["n_test"]


def test_eval_checkpoint_mismatch(tmp_path, tiny_config, tiny_dataset):
    train, test = tiny_dataset
    from hintnet.checkpoint import save_checkpoint

    wrong = tmp_path / "wrong.ckpt"
    save_checkpoint(wrong, init_params(HyperParams(V=8, E=5, H=9, D=6, K=3, A=3), 0))
    rc = main([
        "eval", "--config", str(tiny_config), "--data", str(test),
        "--ckpt", str(wrong), "--report", str(tmp_path / "r.json"),
    ])
    assert rc == 2


def test_sweep_csv_shape_and_frac_zero_row(tmp_path, tiny_config, tiny_dataset):
    train, test = tiny_dataset
    out = tmp_path / "sweep"
    rc = main([
        "sweep", "--config", str(tiny_config), "--data", str(train),
        "--test-data", str(test), "--out", str(out),
        "--fracs", "0,0.5", "--seeds", "0,1",
    ])
    assert rc == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["frac", "seed", "ood_accuracy", "spearman"]
    assert len(rows) == 1 + 2 * 2
    # frac 0 rows must equal the base checkpoint's own accuracy
    hp = HyperParams(V=8, E=5, H=6, D=6, K=3, A=3)
    from hintnet.evalsuite import accuracy

    for seed in (0, 1):
        base = load_checkpoint(out / f"base_s{seed}" / "model.ckpt", hp)
        base_acc = accuracy(base, read_jsonl(test))
        row = next(r for r in rows[1:] if r[0] == "0" and int(r[1]) == seed)
        assert float(row[2]) == pytest.approx(base_acc, abs=1e-6)


def test_explain_matches_evalsuite(tmp_path, tiny_config, tiny_dataset, capsys):
    train, test = tiny_dataset
    base_dir, tune_dir = run_pipeline(tmp_path, tiny_config, tiny_dataset)
    examples = read_jsonl(test)
    ex = examples[0]
    capsys.readouterr()  # drop pipeline output
    rc = main([
        "explain", "--config", str(tiny_config), "--data", str(test),
        "--ckpt", str(tune_dir / "model.ckpt"), "--id", ex.id,
    ])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    hp = HyperParams(V=8, E=5, H=6, D=6, K=3, A=3)
    params = load_checkpoint(tune_dir / "model.ckpt", hp)
    from hintnet.autodiff import Graph
    from hintnet.evalsuite import occlusion_importance
    from hintnet.importance import network_importance
    from hintnet.model import forward, insert_params

    g = Graph()
    out = forward(insert_params(g, params), ex)
    alpha = network_importance(out, ex.answer).values
    deltas = occlusion_importance(params, ex)
    rows = [l.split() for l in lines[2:]]
    assert len(rows) == 3
    for k, row in enumerate(rows):
        assert abs(float(row[3]) - alpha[k]) <= 1e-12 * max(1.0, abs(alpha[k]))
        assert abs(float(row[5]) - deltas[k]) <= 1e-12 * max(1.0, abs(deltas[k]))


def test_explain_unknown_id(tmp_path, tiny_config, tiny_dataset):
    train, test = tiny_dataset
    base_dir, _ = run_pipeline(tmp_path, tiny_config, tiny_dataset)
    rc = main([
        "explain", "--config", str(tiny_config), "--data", str(test),
        "--ckpt", str(base_dir / "model.ckpt"), "--id", "nope",
    ])
    assert rc == 2
