"""Command-line surface: generate data, pretrain, tune, evaluate, sweep.

Configuration is a flat JSON object whose keys are the union of the
model, generator, and trainer knobs; command-line flags override file
values. Unknown keys are rejected. Every run directory receives an
``config.json`` echo of the effective configuration, so any artifact can
be reproduced from its output directory alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evalsuite import evaluate, occlusion_importance
from .hint import TrainConfig, finetune
from .importance import human_importance, network_importance
from .model import HyperParams, forward, init_params, insert_params
from .synthdata import GenConfig, check_dataset, generate_split, read_jsonl, write_jsonl
from .autodiff import Graph


class ConfigError(Exception):
    pass


# every accepted config key with its global default; lr/epochs/mode have
# per-command defaults and stay None here
CONFIG_DEFAULTS = {
    # model dims (proposal dims D, K and answer count A come from the generator keys)
    "V": 32,
    "E": 16,
    "H": 32,
    # benchmark generator
    "grid": 32,
    "K": 8,
    "C": 8,
    "A": 4,
    "noise_dims": 4,
    "sigma": 0.1,
    "bias_train": 0.9,
    "bias_test": 0.25,
    "n_train": 5000,
    "n_test": 1000,
    "min_side": 4,
    "max_side": 16,
    # training
    "mode": None,
    "lambda_task": 10.0,
    "lr": None,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "epochs": None,
    "batch_size": 64,
    "tie_eps": 1e-6,
    "supervised_fraction": 0.06,
    "seed": 0,
}

COMMAND_DEFAULTS = {
    "train": {"mode": "base", "lr": 5e-4, "epochs": 20},
    "hint": {"mode": "hint", "lr": 1e-3, "epochs": 10},
    "sweep": {"mode": "hint", "lr": 1e-3, "epochs": 10},
}


def load_config(path, overrides: dict, command: str) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        unknown = set(data) - set(CONFIG_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    for key, value in COMMAND_DEFAULTS.get(command, {}).items():
        if cfg[key] is None:
            cfg[key] = value
    return cfg


def gen_config(cfg: dict) -> GenConfig:
    try:
        return GenConfig(
            grid=cfg["grid"],
            K=cfg["K"],
            C=cfg["C"],
            A=cfg["A"],
            noise_dims=cfg["noise_dims"],
            sigma=cfg["sigma"],
            bias_train=cfg["bias_train"],
            bias_test=cfg["bias_test"],
            n_train=cfg["n_train"],
            n_test=cfg["n_test"],
            min_side=cfg["min_side"],
            max_side=cfg["max_side"],
            seed=cfg["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def hyper_params(cfg: dict) -> HyperParams:
    try:
        return HyperParams(
            V=cfg["V"],
            E=cfg["E"],
            H=cfg["H"],
            D=cfg["C"] + cfg["A"] + cfg["noise_dims"],
            K=cfg["K"],
            A=cfg["A"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def train_config(cfg: dict, **kw) -> TrainConfig:
    merged = dict(
        mode=cfg["mode"],
        lambda_task=cfg["lambda_task"],
        lr=cfg["lr"],
        beta1=cfg["beta1"],
        beta2=cfg["beta2"],
        eps=cfg["eps"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        tie_eps=cfg["tie_eps"],
        supervised_fraction=cfg["supervised_fraction"],
        seed=cfg["seed"],
    )
    merged.update(kw)
    try:
        return TrainConfig(**merged)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def echo_config(out_dir: Path, cfg: dict, command: str, paths: dict) -> None:
    payload = {"command": command, **{k: cfg[k] for k in sorted(cfg)}, **paths}
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_log(path, log: list[dict]) -> None:
    with open(path, "w") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True))
            fh.write("\n")


def cmd_gen(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed}, "gen")
    gcfg = gen_config(cfg)
    train = generate_split(gcfg, gcfg.bias_train, gcfg.n_train, gcfg.seed)
    test = generate_split(gcfg, gcfg.bias_test, gcfg.n_test, gcfg.seed + 1)
    write_jsonl(args.out_train, train)
    write_jsonl(args.out_test, test)
    print(f"wrote {len(train)} train examples to {args.out_train}")
    print(f"wrote {len(test)} test examples to {args.out_test}")
    return 0


def _load_dataset(path, hp: HyperParams):
    dataset = read_jsonl(path)
    check_dataset(dataset, hp)
    return dataset


def cmd_train(args) -> int:
    overrides = {
        "mode": args.mode,
        "lr": args.lr,
        "epochs": args.epochs,
        "seed": args.seed,
        "batch_size": args.batch_size,
        "lambda_task": getattr(args, "lambda_task", None),
    }
    cfg = load_config(args.config, overrides, "train")
    hp = hyper_params(cfg)
    dataset = _load_dataset(args.data, hp)
    tcfg = train_config(cfg)
    params = init_params(hp, tcfg.seed)
    params, log = finetune(params, dataset, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", params)
    write_log(out / "log.jsonl", log)
    echo_config(out, cfg, "train", {"data": str(args.data)})
    if log:
        print(f"trained {tcfg.epochs} epochs; final task loss {log[-1]['mean_task_loss']:.4f}")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def cmd_hint(args) -> int:
    overrides = {
        "mode": args.mode,
        "lr": args.lr,
        "epochs": args.epochs,
        "seed": args.seed,
        "batch_size": args.batch_size,
        "lambda_task": args.lambda_task,
        "supervised_fraction": args.frac,
    }
    cfg = load_config(args.config, overrides, "hint")
    if cfg["mode"] not in ("hint", "attn_align"):
        raise ConfigError(f"hint command supports modes hint/attn_align, got {cfg['mode']!r}")
    hp = hyper_params(cfg)
    dataset = _load_dataset(args.data, hp)
    params = load_checkpoint(args.ckpt, hp)
    tcfg = train_config(cfg)
    params, log = finetune(params, dataset, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", params)
    write_log(out / "log.jsonl", log)
    echo_config(out, cfg, "hint", {"data": str(args.data), "base_ckpt": str(args.ckpt)})
    if log:
        print(
            f"tuned {tcfg.epochs} epochs ({tcfg.mode}); final rank loss "
            f"{log[-1]['mean_rank_loss']:.4f} over {log[-1]['supervised_count']} supervised examples"
        )
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed}, "eval")
    hp = hyper_params(cfg)
    dataset = _load_dataset(args.data, hp)
    params = load_checkpoint(args.ckpt, hp)
    report = evaluate(params, dataset, occlusion_examples=args.occlusion)
    payload = report.to_json()
    with open(args.report, "w") as fh:
        fh.write(payload)
        fh.write("\n")
    print(f"accuracy: {report.accuracy:.4f} over {report.n_examples} examples")
    if report.spearman_grad_human is not None:
        print(f"spearman grad/attn vs human: {report.spearman_grad_human:+.4f} / {report.spearman_attn_human:+.4f}")
    if report.corr_grad_occlusion is not None:
        print(f"occlusion corr grad/attn: {report.corr_grad_occlusion:+.4f} / {report.corr_attn_occlusion:+.4f}")
    print(f"report: {args.report}")
    return 0


def cmd_sweep(args) -> int:
    overrides = {
        "mode": args.mode,
        "lr": args.lr,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lambda_task": args.lambda_task,
    }
    cfg = load_config(args.config, overrides, "sweep")
    hp = hyper_params(cfg)
    train = _load_dataset(args.data, hp)
    test = _load_dataset(args.test_data, hp)
    fracs = [float(f) for f in args.fracs.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in seeds:
        pretrain_cfg = dict(cfg, seed=seed)
        base_cfg = train_config(
            pretrain_cfg, mode="base", lr=COMMAND_DEFAULTS["train"]["lr"],
            epochs=COMMAND_DEFAULTS["train"]["epochs"],
        )
        base = init_params(hp, seed)
        base, base_log = finetune(base, train, base_cfg)
        base_dir = out / f"base_s{seed}"
        base_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(base_dir / "model.ckpt", base)
        write_log(base_dir / "log.jsonl", base_log)
        for frac in fracs:
            if frac == 0.0:
                # no supervision means no tuning: the base model is the
                # zero point of the sweep
                tuned = base
            else:
                tcfg = train_config(dict(cfg, seed=seed), supervised_fraction=frac)
                tuned, tuned_log = finetune(dict(base), train, tcfg)
                run_dir = out / f"{cfg['mode']}_f{frac:g}_s{seed}"
                run_dir.mkdir(parents=True, exist_ok=True)
                save_checkpoint(run_dir / "model.ckpt", tuned)
                write_log(run_dir / "log.jsonl", tuned_log)
            report = evaluate(tuned, test, occlusion_examples=0)
            sp = report.spearman_grad_human
            rows.append((frac, seed, report.accuracy, 0.0 if sp is None else sp))
            print(f"frac={frac:g} seed={seed}: ood_accuracy={report.accuracy:.4f} spearman={rows[-1][3]:+.4f}")
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frac", "seed", "ood_accuracy", "spearman"])
        for frac, seed, acc, sp in rows:
            writer.writerow([f"{frac:g}", seed, f"{acc:.6f}", f"{sp:.6f}"])
    echo_config(out, cfg, "sweep", {
        "data": str(args.data), "test_data": str(args.test_data),
        "fracs": args.fracs, "seeds": args.seeds,
    })
    print(f"sweep csv: {out / 'sweep.csv'}")
    return 0


def cmd_explain(args) -> int:
    cfg = load_config(args.config, {}, "eval")
    hp = hyper_params(cfg)
    dataset = _load_dataset(args.data, hp)
    matches = [ex for ex in dataset if ex.id == args.id]
    if not matches:
        raise ConfigError(f"no example with id {args.id!r} in {args.data}")
    ex = matches[0]
    params = load_checkpoint(args.ckpt, hp)
    g = Graph()
    out = forward(insert_params(g, params), ex)
    alpha = network_importance(out, ex.answer).values
    attn = out.attention_weights.value
    deltas = occlusion_importance(params, ex)
    scores = None
    if ex.attention is not None:
        hi = human_importance(ex.attention, [p.box for p in ex.proposals])
        if hi.supervisable:
            scores = hi.s
    pred = int(out.logits.value.argmax())
    print(f"example {ex.id}: question={ex.question} answer={ex.answer} predicted={pred}")
    header = f"{'prop':>4} {'box':>16} {'human_s':>20} {'alpha_gt':>22} {'attention':>22} {'occlusion':>22}"
    print(header)
    for k, p in enumerate(ex.proposals):
        box = f"[{p.box.x1},{p.box.y1},{p.box.x2},{p.box.y2}]"
        human = f"{scores[k]:.15g}" if scores is not None else "-"
        print(
            f"{k:>4} {box:>16} {human:>20} {alpha[k]:>22.15g} {attn[k]:>22.15g} {deltas[k]:>22.15g}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hintnet",
        description="importance-aligned tuning of a toy attention classifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the synthetic changing-priors benchmark")
    p.add_argument("--config", default=None)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="pretrain with the task loss")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["base"], default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("hint", help="fine-tune a base checkpoint with importance alignment")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["hint", "attn_align"], default=None)
    p.add_argument("--lambda", type=float, default=None, dest="lambda_task")
    p.add_argument("--frac", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_hint)

    p = sub.add_parser("eval", help="compute the metrics report for a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--occlusion", type=int, default=None, help="occlusion example budget (default: all)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="supervision-fraction sweep over seeds")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", required=True, dest="test_data")
    p.add_argument("--out", required=True)
    p.add_argument("--fracs", default="0,0.015,0.06,0.25,1.0")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--mode", choices=["hint", "attn_align"], default=None)
    p.add_argument("--lambda", type=float, default=None, dest="lambda_task")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("explain", help="per-proposal importance dump for one example")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--id", required=True)
    p.set_defaults(func=cmd_explain)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
