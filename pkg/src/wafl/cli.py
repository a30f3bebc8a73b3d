"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 data/format error,
3 numeric failure (non-finite loss or a failed gradient check).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, storage
from .config import dump_json, from_dict, read_json
from .errors import ConfigError, DataError, GradcheckFailed, WaflError
from .evaluation import EvalConfig, evaluate, score_dataset
from .loss import LOSS_KINDS
from .model import init_bundle, load_checkpoint
from .synth import SynthConfig, generate, split
from .trainer import TrainConfig, pad_from_checkpoint, train

log = logging.getLogger("wafl")

RUN_ECHO = "run.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _echo(directory, command: str, resolved: dict) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    dump_json({"command": command, **resolved}, d / RUN_ECHO)


def _write_report(doc: dict, path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def cmd_synth(args) -> int:
    doc = read_json(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = from_dict(SynthConfig, doc, where="synth")
    dataset = generate(cfg)
    out = Path(args.out)
    if cfg.n_test:
        tr, te = split(dataset, cfg.n_test)
        storage.save_dataset(tr, out / "train")
        storage.save_dataset(te, out / "test")
    else:
        storage.save_dataset(dataset, out)
    _echo(out, "synth", {"config": dataclasses.asdict(cfg)})
    labels = dataset.labels()
    print(f"wrote {len(dataset.videos)} videos, {dataset.n_tokens} tokens "
          f"({labels[:, 2].mean() if len(labels) else 0:.3f} fake) to {out}")
    return 0


def _train_config(path, seed) -> TrainConfig:
    doc = read_json(path)
    if seed is not None:
        doc["seed"] = seed
    return TrainConfig.from_dict(doc)


def cmd_train(args) -> int:
    cfg = _train_config(args.config, args.seed)
    dataset = storage.load_dataset(storage.resolve_split(args.data, "train"))
    k_v, k_a = dataset.feature_dims or (0, 0)
    if not k_v:
        raise DataError("training set has no tokens")
    bundle = init_bundle(k_v, k_a, cfg.model, seed=cfg.seed)
    result = train(dataset, bundle, cfg, out_dir=args.out)
    _echo(args.out, "train", {"config": cfg.as_dict(), "data": str(args.data)})
    if result.log:
        print(f"trained {cfg.iterations} iterations: total loss "
              f"{result.log[0]['total']:.4f} -> {result.log[-1]['total']:.4f}")
    return 0


def _eval_config(args) -> EvalConfig:
    doc = read_json(args.config) if args.config else {}
    if args.merge_adjacent:
        doc["merge_adjacent"] = True
    if args.merge_threshold is not None:
        doc["merge_score_threshold"] = args.merge_threshold
    return from_dict(EvalConfig, doc, where="eval")


def _read_scores(path) -> dict[str, np.ndarray]:
    doc = read_json(path)
    try:
        return {str(k): np.asarray(v, dtype=np.float64) for k, v in doc.items()}
    except (AttributeError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: scores must map video id to a list of numbers") from exc


def cmd_eval(args) -> int:
    if (args.ckpt is None) == (args.scores is None):
        raise ConfigError("eval needs exactly one of --ckpt or --scores")
    cfg = _eval_config(args)
    data_dir = storage.resolve_split(args.data, "test")
    if args.scores:
        dataset = storage.load_dataset(data_dir, with_features=False)
        scores = _read_scores(args.scores)
    else:
        bundle, ck_cfg = load_checkpoint(args.ckpt)
        dataset = storage.load_dataset(data_dir)
        scores = score_dataset(bundle, dataset, pad_from_checkpoint(ck_cfg))
    report = evaluate(dataset, scores, cfg)
    doc = report.to_json()
    _write_report(doc, args.report)
    _echo(Path(args.report).parent, "eval", {
        "config": dataclasses.asdict(cfg),
        "data": str(args.data),
        "ckpt": args.ckpt,
        "scores": args.scores,
    })
    print(json.dumps(doc, indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all()
    print(gradcheck.format_table(results))
    if args.out:
        _echo(args.out, "gradcheck", {"results": [
            {"name": r.name, "max_rel_err": r.max_rel_err, "points": r.n_points, "passed": r.passed}
            for r in results
        ]})
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise GradcheckFailed(f"failed: {', '.join(failed)}")
    return 0


@dataclasses.dataclass
class AblateConfig:
    train: dict = dataclasses.field(default_factory=dict)
    eval: dict = dataclasses.field(default_factory=dict)
    seeds: list = dataclasses.field(default_factory=lambda: [0])


def run_ablation(train_set, test_set, base: TrainConfig, eval_cfg: EvalConfig,
                 losses: list[str], seeds: list[int]) -> dict:
    k_v, k_a = train_set.feature_dims
    out = {}
    for kind in losses:
        runs = []
        for seed in seeds:
            cfg = dataclasses.replace(base, loss_kind=kind, seed=int(seed))
            bundle = init_bundle(k_v, k_a, cfg.model, seed=cfg.seed)
            train(train_set, bundle, cfg)
            report = evaluate(test_set, score_dataset(bundle, test_set, cfg.pad), eval_cfg)
            runs.append({"seed": int(seed), **report.to_json()})
            log.info("ablate %s seed %s: AP@0.95 %.4f", kind, seed, report.ap.get(0.95, float("nan")))
        median = {
            "ap": {k: float(np.median([r["ap"][k] for r in runs])) for k in runs[0]["ap"]},
            "ar": {k: float(np.median([r["ar"][k] for r in runs])) for k in runs[0]["ar"]},
        }
        out[kind] = {"runs": runs, "median": median}
    return out


def cmd_ablate(args) -> int:
    doc = read_json(args.config)
    acfg = from_dict(AblateConfig, doc, where="ablate")
    base = TrainConfig.from_dict(acfg.train)
    eval_cfg = from_dict(EvalConfig, acfg.eval, where="ablate.eval")
    losses = [s.strip() for s in args.losses.split(",") if s.strip()]
    bad = [s for s in losses if s not in LOSS_KINDS]
    if bad or not losses:
        raise ConfigError(f"unknown loss kind(s) {bad}; choose from {LOSS_KINDS}")
    seeds = acfg.seeds if args.seed is None else [args.seed]
    train_set = storage.load_dataset(storage.resolve_split(args.data, "train"))
    test_set = storage.load_dataset(storage.resolve_split(args.data, "test"))
    table = run_ablation(train_set, test_set, base, eval_cfg, losses, seeds)
    _write_report({"losses": table, "seeds": list(seeds)}, args.report)
    _echo(Path(args.report).parent, "ablate", {
        "config": {"train": base.as_dict(), "eval": dataclasses.asdict(eval_cfg), "seeds": list(seeds)},
        "losses": losses,
        "data": str(args.data),
    })
    ap_keys = list(next(iter(table.values()))["median"]["ap"])
    ar_keys = list(next(iter(table.values()))["median"]["ar"])
    print("loss   " + "  ".join(f"AP@{k}" for k in ap_keys) + "  " + "  ".join(f"AR@{k}" for k in ar_keys))
    for kind, entry in table.items():
        med = entry["median"]
        print(f"{kind:<6} " + "  ".join(f"{med['ap'][k]:7.4f}" for k in ap_keys) + "  "
              + "  ".join(f"{med['ar'][k]:6.4f}" for k in ar_keys))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wafl", description="Word-anchored temporal forgery localization toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model on word tokens")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score proposals with AP@IoU and AR@N")
    e.add_argument("--ckpt")
    e.add_argument("--scores", help="JSON mapping video id to per-token fused scores")
    e.add_argument("--data", required=True)
    e.add_argument("--config")
    e.add_argument("--report", required=True)
    e.add_argument("--merge-adjacent", action="store_true")
    e.add_argument("--merge-threshold", type=float)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="retrain per loss kind and compare metrics")
    a.add_argument("--config", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--losses", default=",".join(LOSS_KINDS))
    a.add_argument("--report", required=True)
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except WaflError as exc:
        print(f"wafl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"wafl {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
