"""Command-line entry point: collect -> train -> eval / ablate / sweep-c / report."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from gsbh import __version__
from gsbh import demos as D
from gsbh import evaluator as E
from gsbh import trainer as TR
from gsbh import world as W
from gsbh.checkpoint import load_checkpoint
from gsbh.config import RunConfig, help_text, parse_config
from gsbh.errors import ConfigError, FormatError
from gsbh.parallel import default_workers

log = logging.getLogger("gsbh")

COMMANDS = ("collect", "train", "eval", "ablate", "sweep-c", "report")

ABLATION_VARIANTS = [
    ("gsb+horizon", dict()),
    ("gsb-horizon", dict(use_horizon_conditioning=False, use_horizon_loss=False)),
    ("concat+horizon", dict(use_gsb=False)),
    ("concat-horizon", dict(use_gsb=False, use_horizon_conditioning=False, use_horizon_loss=False)),
    ("no-horizon-loss", dict(use_horizon_loss=False)),
    ("no-extra-obs", dict(use_extra_obs=False)),
    ("no-goal-condition", dict(use_goal_condition=False)),
]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key=value config file (see --help-config)")
    p.add_argument("--seed", type=int, default=None, help="run seed (overrides $GSBH_SEED; default 0)")
    p.add_argument("--out", metavar="DIR", required=True, help="output directory (nothing is written elsewhere)")
    p.add_argument("--workers", type=int, default=None, help="process budget (default: available CPUs)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gsbh", description=(
        "Goal-conditioned behavior cloning on a procedural gridworld.\n\n"
        "subcommands:\n"
        "  collect   roll out the proxy policy and write a goal-labelled dataset\n"
        "  train     behavior-cloning training from a dataset\n"
        "  eval      closed-loop success rate / precision of a checkpoint\n"
        "  ablate    train and evaluate the 7-variant ablation matrix\n"
        "  sweep-c   success rate as a function of the horizon shrink c\n"
        "  report    successful-trajectory length histograms of a dataset"),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--help-config", action="store_true", help="list every config key with its default")
    parser.add_argument("--version", action="version", version=f"gsbh {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", parser_class=_Parser)

    p = sub.add_parser("collect", help="roll out the proxy policy and write a dataset")
    _common(p)
    p.add_argument("--episodes", type=int, default=None, help="override world.collect_episodes")

    p = sub.add_parser("train", help="train a policy")
    _common(p)
    p.add_argument("--dataset", required=True, metavar="PATH")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint with optimizer state")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", metavar="PATH", help="checkpoint to evaluate (required)")
    p.add_argument("--train-biome", choices=W.BIOMES, help="zero-shot: restrict to goals shared with this biome")
    p.add_argument("--condition-free", action="store_true", help="also report the per-goal skew statistic")
    p.add_argument("--c", type=int, default=None, help="override eval.c")

    p = sub.add_parser("ablate", help="ablation matrix")
    _common(p)
    p.add_argument("--dataset", required=True, metavar="PATH")

    p = sub.add_parser("sweep-c", help="sweep the horizon shrink c")
    _common(p)
    p.add_argument("--checkpoint", metavar="PATH", help="checkpoint to evaluate (required)")

    p = sub.add_parser("report", help="trajectory length report")
    _common(p)
    p.add_argument("--dataset", required=True, metavar="PATH")
    return parser


# -- helpers --------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_manifest(out: Path, args, cfg: RunConfig, seed: int, started: str, inputs: dict) -> None:
    outputs = {str(p.relative_to(out)): _sha256(p) for p in sorted(out.rglob("*"))
               if p.is_file() and p.name != "manifest.json"}
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config_digest": cfg.digest(),
        "config": cfg.canonical(),
        "seed": seed,
        "tool_version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "inputs": inputs,
        "outputs": outputs,
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _need(args, name: str) -> str:
    value = getattr(args, name)
    if not value:
        raise UsageError(f"gsbh {args.command}: missing required flag --{name}")
    return value


# -- subcommands ------------------------------------------------------------------------

def cmd_collect(args, cfg: RunConfig, seed: int, out: Path) -> dict:
    world = cfg.world()
    n = args.episodes or cfg["world.collect_episodes"]
    logs = D.collect_episodes(world, n, seed, args.workers)
    trajs = D.filter_and_relabel(logs, world)
    kept = D.balance(trajs, [g.id for g in W.goal_registry(world.biome)], seed) if cfg["world.balance"] else trajs
    D.write_dataset(kept, out / "dataset.gsbd")
    counts_raw = {W.GOALS[g].name: sum(t.goal == g for t in trajs) for g in sorted({t.goal for t in trajs})}
    summary = {
        "episodes": n, "successful": len(trajs), "success_fraction": len(trajs) / n,
        "kept": len(kept), "per_goal_raw": counts_raw,
        "per_goal_kept": {W.GOALS[g].name: sum(t.goal == g for t in kept) for g in sorted({t.goal for t in kept})},
        "steps": int(sum(t.length for t in kept)), "log_digest": D.log_digest(logs),
    }
    _write(out / "collect_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("collected %d/%d successful episodes, kept %d", len(trajs), n, len(kept))
    return {}


def cmd_train(args, cfg: RunConfig, seed: int, out: Path) -> dict:
    data = D.read_dataset(args.dataset)
    TR.train(cfg.train(seed), data, out, cfg.model(), resume_from=args.resume)
    inputs = {"dataset": _sha256(Path(args.dataset))}
    if args.resume:
        inputs["resume"] = _sha256(Path(args.resume))
    return inputs


def cmd_eval(args, cfg: RunConfig, seed: int, out: Path) -> dict:
    ckpt = _need(args, "checkpoint")
    params, _ = load_checkpoint(ckpt)
    world = cfg.world()
    c = cfg["eval.c"] if args.c is None else args.c
    kw = dict(c=c, n_episodes=cfg["eval.episodes"], seed=seed, n_seeds=cfg["eval.seeds"], workers=args.workers)
    if args.train_biome:
        rep = E.generalization_eval(params, args.train_biome, world, **kw)
    elif args.condition_free:
        rep, skew = E.condition_free_eval(params, world, **kw)
        rep.extra["skew"] = skew
    else:
        rep = E.evaluate(params, world, cap=cfg["eval.cap"], **kw)
    _write(out / "report.csv", rep.to_csv())
    _write(out / "report.json", rep.to_json())
    log.info("macro SR %.3f  macro precision %s", rep.macro_sr, rep.macro_precision)
    return {"checkpoint": _sha256(Path(ckpt))}


def cmd_sweep(args, cfg: RunConfig, seed: int, out: Path) -> dict:
    ckpt = _need(args, "checkpoint")
    params, _ = load_checkpoint(ckpt)
    rows = E.c_sweep(params, cfg.world(), cfg["eval.c_values"], cfg["eval.episodes"], seed,
                     cfg["eval.seeds"], args.workers)
    _write(out / "sweep.csv", E.sweep_csv(rows))
    return {"checkpoint": _sha256(Path(ckpt))}


def cmd_report(args, cfg: RunConfig, seed: int, out: Path) -> dict:
    data = D.read_dataset(args.dataset)
    rep = E.horizon_report(data)
    _write(out / "horizon_hist.csv", rep.to_csv())
    _write(out / "horizon_summary.csv", rep.summary_csv())
    return {"dataset": _sha256(Path(args.dataset))}


def run_ablation(cfg: RunConfig, data, out: Path, workers: int, seed: int = 0) -> list[dict]:
    world = cfg.world()
    rows = []
    for name, flags in ABLATION_VARIANTS:
        srs, precs = [], []
        for ts in cfg["eval.train_seeds"]:
            vdir = out / name / f"seed{ts}"
            params, _ = TR.train(cfg.train(ts, **flags), data, vdir, cfg.model())
            rep = E.evaluate(params, world, None, cfg["eval.c"], cfg["eval.episodes"], seed,
                             cfg["eval.seeds"], workers=workers, tag=name)
            _write(vdir / "report.csv", rep.to_csv())
            srs.append(rep.macro_sr)
            precs.append(rep.macro_precision)
        tc = cfg.train(0, **flags)
        rows.append({"variant": name, **{k: tc.flags[k] for k in TR.ABLATION_FLAGS},
                     "sr_mean": sum(srs) / len(srs), "sr_std": _std(srs),
                     "prec_mean": _mean_opt(precs), "prec_std": _std([p for p in precs if p is not None]),
                     "n_train_seeds": len(srs)})
    return rows


def _std(vals):
    if not vals:
        return None
    m = sum(vals) / len(vals)
    return (sum((v - m) ** 2 for v in vals) / len(vals)) ** 0.5


def _mean_opt(vals):
    vals = [v for v in vals if v is not None]
    return sum(vals) / len(vals) if vals else None


def ablation_csv(rows: list[dict]) -> str:
    cols = ["variant", *TR.ABLATION_FLAGS, "sr_mean", "sr_std", "prec_mean", "prec_std", "n_train_seeds"]
    lines = [",".join(cols)]
    for r in rows:
        vals = []
        for c in cols:
            v = r[c]
            vals.append("" if v is None else (str(v).lower() if isinstance(v, bool) else
                                              f"{v:.6f}" if isinstance(v, float) else str(v)))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def cmd_ablate(args, cfg: RunConfig, seed: int, out: Path) -> dict:
    data = D.read_dataset(args.dataset)
    rows = run_ablation(cfg, data, out, args.workers, seed)
    _write(out / "ablation.csv", ablation_csv(rows))
    return {"dataset": _sha256(Path(args.dataset))}


HANDLERS = {"collect": cmd_collect, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "sweep-c": cmd_sweep, "report": cmd_report}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.help_config:
        print(help_text())
        return 0
    if not args.command:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config)
        seed = args.seed if args.seed is not None else int(os.environ.get("GSBH_SEED", "0"))
        args.workers = args.workers or default_workers()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        started = datetime.now(timezone.utc).isoformat()
        inputs = HANDLERS[args.command](args, cfg, seed, out)
        _write_manifest(out, args, cfg, seed, started, inputs)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"gsbh: configuration error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, FileNotFoundError) as exc:
        print(f"gsbh: data error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
