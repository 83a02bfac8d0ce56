"""Command line entry points.

Four subcommands cover the experiment cycle:

  prepare   generate the synthetic demo corpus, or pre-sample few-shot
            episodes from a real corpus so later runs reuse them
  run       one continual run per seed, each writing results.json,
            per-step prediction dumps and a final checkpoint
  ablate    the same runs across component-switch variants
  report    collect results.json files into comparison tables

Configuration is layered: built-in defaults, then an optional JSON config
file, then explicit flags, later layers winning. Every run directory gets
the effective configuration echoed into manifest.json; result files
themselves contain no timing, so reruns with the same seed are
byte-identical. Scores live as fractions in results.json and as
percentages in the CSV and markdown tables.
"""
from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import time
from dataclasses import asdict
from dataclasses import replace as dataclasses_replace
from pathlib import Path

from .continual import (
    ABLATION_SWITCHES,
    HEAD_MODES,
    CorpusBundle,
    RunConfig,
    RunResult,
    base_stage_defaults,
    derive_seed,
    incremental_stage_defaults,
    run_config_from_dict,
    run_continual,
)
from .corpus import (
    TaskSchedule,
    greedy_sample,
    load_schedules,
    mention_counts,
    read_conll_file,
    to_conll,
)
from .errors import AnchorNerError, NoResultsFoundError
from .evaluate import DECODE_MODES, dump_predictions
from .model import save_checkpoint
from .prompting import TEMPLATE_FORMATS
from .resources import DATASETS, bundled_anchor_words, bundled_schedules
from .synth import write_synthetic

try:
    from importlib.metadata import version as _pkg_version

    VERSION = _pkg_version("anchorner")
except Exception:  # not installed, running from a checkout
    VERSION = "0.0.0"

_TRAIN_MODE_OF = {"toa": "ToA", "tof": "ToF"}
_EVAL_MODE_OF = {"eoa": "EoA", "eof": "EoF"}


def _pct(value: float, places: int = 2) -> str:
    """Fraction as a percentage string."""
    return f"{100.0 * value:.{places}f}"


# configuration layering ----------------------------------------------------


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


# maps a flag destination to its place in the nested config dict
_FLAG_PATHS = {
    "shots": ("shots",),
    "train_mode": ("train_mode",),
    "eval_mode": ("eval_mode",),
    "decode_mode": ("decode_mode",),
    "mdt_format": ("mdt_format",),
    "head_mode": ("head_mode",),
    "alpha": ("alpha",),
    "beta": ("beta",),
    "base_epochs": ("base", "epochs"),
    "base_batch_size": ("base", "batch_size"),
    "base_freeze_fraction": ("base", "freeze_fraction"),
    "base_lr": ("base", "lr"),
    "epochs": ("incremental", "epochs"),
    "batch_size": ("incremental", "batch_size"),
    "freeze_fraction": ("incremental", "freeze_fraction"),
    "lr": ("incremental", "lr"),
    "mdt_per_class": ("incremental", "mdt_per_class"),
    "d_model": ("encoder", "d_model"),
    "n_layers": ("encoder", "n_layers"),
    "n_heads": ("encoder", "n_heads"),
}


def effective_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then --config file, then explicit flags."""
    layered = asdict(
        RunConfig(
            base=base_stage_defaults(),
            incremental=incremental_stage_defaults(),
        )
    )
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as handle:
            layered = _merge(layered, json.load(handle))
    for dest, path in _FLAG_PATHS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if dest == "train_mode":
            value = _TRAIN_MODE_OF[value]
        elif dest == "eval_mode":
            value = _EVAL_MODE_OF[value]
        node = layered
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
    return run_config_from_dict(layered)


# data loading ---------------------------------------------------------------


def load_bundle(args: argparse.Namespace) -> CorpusBundle:
    data = Path(args.data_dir)
    return CorpusBundle(
        train=tuple(read_conll_file(data / args.train_file)),
        validation=tuple(read_conll_file(data / args.valid_file)),
        test=tuple(read_conll_file(data / args.test_file)),
    )


def load_schedule(args: argparse.Namespace) -> TaskSchedule:
    if args.schedule:
        schedules = load_schedules(args.schedule)
    elif args.dataset in DATASETS:
        schedules = bundled_schedules(args.dataset)
    else:
        candidate = Path(args.data_dir) / "schedules.json"
        if not candidate.exists():
            raise AnchorNerError(
                "no schedule source: pass --schedule, a bundled --dataset, "
                "or keep schedules.json next to the data"
            )
        schedules = load_schedules(candidate)
    if args.permutation not in schedules:
        raise AnchorNerError(
            f"permutation {args.permutation!r} not in {sorted(schedules)}"
        )
    return schedules[args.permutation]


def load_word_table(args: argparse.Namespace) -> dict:
    if args.anchor_words_file:
        with open(args.anchor_words_file, "r", encoding="utf-8") as handle:
            return json.load(handle)
    if args.dataset in DATASETS:
        return bundled_anchor_words(args.dataset)
    candidate = Path(args.data_dir) / "anchor_words.json"
    if not candidate.exists():
        raise AnchorNerError(
            "no representative-word source: pass --anchor-words-file, a "
            "bundled --dataset, or keep anchor_words.json next to the data"
        )
    with candidate.open("r", encoding="utf-8") as handle:
        return json.load(handle)


def load_prepared_episodes(prepared_dir: str | None):
    if not prepared_dir:
        return None
    prepared = Path(prepared_dir)
    manifest = prepared / "prepared.json"
    if not manifest.exists():
        raise AnchorNerError(f"{manifest} not found; run prepare first")
    with manifest.open("r", encoding="utf-8") as handle:
        spec = json.load(handle)
    return {
        int(step): tuple(read_conll_file(prepared / fname))
        for step, fname in spec["episodes"].items()
    }


# output writers -------------------------------------------------------------


def write_run_outputs(
    out_dir: Path,
    result: RunResult,
    save_predictions: bool,
    save_ckpt: bool,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "results.json").write_text(
        result.to_json() + "\n", encoding="utf-8"
    )
    if save_predictions:
        for dataset, preds in zip(result.eval_datasets, result.predictions):
            dump_predictions(
                dataset, preds, out_dir / f"predictions_step{dataset.step}.txt"
            )
    if save_ckpt and result.model is not None:
        save_checkpoint(
            result.model,
            result.vocab,
            out_dir / "checkpoint.pt",
            config_echo=result.config,
        )


def _aggregate_rows(results: list[tuple[str, int, RunResult]]) -> list[dict]:
    rows = []
    for variant, seed, result in results:
        row = {
            "variant": variant,
            "seed": seed,
            "permutation": result.permutation_id,
            "avg_ge2": result.avg_ge2_score,
        }
        for i, score in enumerate(result.macro_by_step, 1):
            row[f"step{i}"] = score
        rows.append(row)
    return rows


def write_aggregates(out: Path, rows: list[dict]) -> None:
    """aggregate.csv (per seed), table.md (mean ± std), plot_series.csv.

    CSV scores carry four decimals so the Avg>=2 column stays consistent
    with a mean recomputed from the rounded step columns; the markdown
    table rounds to two, the usual reporting style.
    """
    if not rows:
        return
    step_keys = sorted(
        {k for row in rows for k in row if k.startswith("step")},
        key=lambda s: int(s[4:]),
    )
    header = ["variant", "seed", "permutation", *step_keys, "avg_ge2"]
    with (out / "aggregate.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        for row in rows:
            cells = {}
            for key in header:
                value = row.get(key, "")
                if key.startswith("step") or key == "avg_ge2":
                    value = (
                        _pct(value, 4)
                        if value != "" and value is not None
                        else ""
                    )
                cells[key] = value
            writer.writerow(cells)

    variants = sorted({r["variant"] for r in rows})
    lines = ["| variant | " + " | ".join(step_keys) + " | avg_ge2 |"]
    lines.append("|" + " --- |" * (len(step_keys) + 2))
    plot_rows = []
    for variant in variants:
        group = [r for r in rows if r["variant"] == variant]
        cells = [variant]
        for key in step_keys:
            values = [r[key] for r in group if key in r]
            mean = statistics.mean(values)
            std = statistics.stdev(values) if len(values) > 1 else 0.0
            cells.append(f"{_pct(mean)} ± {_pct(std)}")
            plot_rows.append(
                {
                    "variant": variant,
                    "step": int(key[4:]),
                    "mean": _pct(mean, 4),
                    "std": _pct(std, 4),
                }
            )
        scores = [r["avg_ge2"] for r in group if r["avg_ge2"] is not None]
        if scores:
            mean = statistics.mean(scores)
            std = statistics.stdev(scores) if len(scores) > 1 else 0.0
            cells.append(f"{_pct(mean)} ± {_pct(std)}")
        else:
            cells.append("n/a")
        lines.append("| " + " | ".join(cells) + " |")
    (out / "table.md").write_text("\n".join(lines) + "\n", encoding="utf-8")

    with (out / "plot_series.csv").open(
        "w", newline="", encoding="utf-8"
    ) as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "step", "mean", "std"])
        writer.writeheader()
        for row in plot_rows:
            writer.writerow(row)


def write_manifest(out: Path, args: argparse.Namespace, config: RunConfig,
                   timings: dict) -> None:
    manifest = {
        "version": VERSION,
        "command": args.command,
        "argv": sys.argv[1:],
        "effective_config": config.to_dict(),
        "wall_time_s": timings,
        "created_unix": time.time(),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


# subcommands ----------------------------------------------------------------


def cmd_prepare(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if args.synthetic:
        write_synthetic(
            out, args.seed, args.n_train, args.n_validation, args.n_test
        )
        print(f"synthetic corpus written to {out}")
        return 0
    if not args.data_dir:
        raise AnchorNerError("--data-dir is required unless --synthetic")
    schedule = load_schedule(args)
    bundle = load_bundle(args)
    out.mkdir(parents=True, exist_ok=True)
    episodes = {}
    counts_by_step = {}
    for t in range(2, schedule.num_tasks + 1):
        types = schedule.types_at(t)
        episode = greedy_sample(
            bundle.validation,
            types,
            args.shots,
            derive_seed(args.seed, f"episode{t}"),
        )
        fname = f"episode_step{t}.txt"
        (out / fname).write_text(to_conll(episode), encoding="utf-8")
        episodes[str(t)] = fname
        totals = {etype: 0 for etype in types}
        for sentence in episode:
            for etype, n in mention_counts(sentence, types).items():
                totals[etype] += n
        counts_by_step[str(t)] = totals
    (out / "prepared.json").write_text(
        json.dumps(
            {
                "permutation": schedule.permutation_id,
                "shots": args.shots,
                "seed": args.seed,
                "episodes": episodes,
                "mention_counts": counts_by_step,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    print(f"prepared {len(episodes)} episodes in {out}")
    return 0


def _parse_seeds(spec: str) -> list[int]:
    return [int(part) for part in spec.split(",") if part.strip() != ""]


def _parse_variants(spec: str) -> dict[str, tuple[str, ...]]:
    """Comma-separated variants; '+' composes switches; 'full' is no switch."""
    variants: dict[str, tuple[str, ...]] = {}
    for name in (v.strip() for v in spec.split(",")):
        if not name:
            continue
        if name == "full":
            variants[name] = ()
        else:
            variants[name] = tuple(name.split("+"))
    return variants


def _execute_runs(
    args: argparse.Namespace, variants: dict[str, tuple[str, ...]]
) -> int:
    config = effective_config(args)
    bundle = load_bundle(args)
    schedule = load_schedule(args)
    word_table = load_word_table(args)
    episodes = load_prepared_episodes(args.prepared)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(json.dumps({"effective_config": config.to_dict()}, sort_keys=True))

    seeds = _parse_seeds(args.seed)
    collected: list[tuple[str, int, RunResult]] = []
    timings: dict[str, float] = {}
    for variant, switches in variants.items():
        for seed in seeds:
            run_cfg = dataclasses_replace(config, seed=seed)
            result = run_continual(
                bundle, schedule, word_table, run_cfg, switches, episodes
            )
            run_dir = (
                out / variant / f"seed_{seed}"
                if len(variants) > 1
                else out / f"seed_{seed}"
            )
            write_run_outputs(
                run_dir, result, args.save_predictions, args.save_checkpoint
            )
            timings[f"{variant}/seed_{seed}"] = result.wall_time_s
            collected.append((variant, seed, result))
            print(
                f"{variant} seed={seed} "
                f"macro_by_step={[round(m, 4) for m in result.macro_by_step]} "
                f"avg_ge2={None if result.avg_ge2_score is None else round(result.avg_ge2_score, 4)}"
            )
    write_aggregates(out, _aggregate_rows(collected))
    write_manifest(out, args, config, timings)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    return _execute_runs(args, {"full": ()})


def cmd_ablate(args: argparse.Namespace) -> int:
    variants = _parse_variants(args.variants)
    if not variants:
        raise AnchorNerError("no variants given")
    return _execute_runs(args, variants)


def _report_rows(run_dirs: list[str]) -> list[dict]:
    rows = []
    for root in run_dirs:
        for path in sorted(Path(root).rglob("results.json")):
            with path.open("r", encoding="utf-8") as handle:
                data = json.load(handle)
            switches = tuple(data.get("switches", ()))
            final = data["steps"][-1]["metrics"] if data["steps"] else {}
            rows.append(
                {
                    "path": str(path),
                    "variant": "+".join(switches) if switches else "full",
                    "train_mode": data["config"]["train_mode"],
                    "eval_mode": data["config"]["eval_mode"],
                    "shots": data["config"]["shots"],
                    "seed": data["config"]["seed"],
                    "macro_by_step": data["macro_by_step"],
                    "avg_ge2": data["avg_ge2"],
                    "final_per_type": final.get("per_type", {}),
                }
            )
    return rows


def cmd_report(args: argparse.Namespace) -> int:
    rows = _report_rows(args.runs)
    if not rows:
        raise NoResultsFoundError(
            f"no results.json under {', '.join(args.runs)}"
        )
    lines: list[str] = []
    for eval_mode in sorted({r["eval_mode"] for r in rows}):
        mode_rows = [r for r in rows if r["eval_mode"] == eval_mode]
        groups: dict[tuple, list[dict]] = {}
        for row in mode_rows:
            key = (row["train_mode"], row["shots"], row["variant"])
            groups.setdefault(key, []).append(row)
        n_steps = max(len(r["macro_by_step"]) for r in mode_rows)
        lines.append(f"## evaluation {eval_mode}")
        lines.append("")
        header = (
            "| train | shots | variant | seeds | "
            + " | ".join(f"step{i}" for i in range(1, n_steps + 1))
            + " | avg_ge2 |"
        )
        lines.append(header)
        lines.append("|" + " --- |" * (n_steps + 5))
        for key in sorted(groups):
            group = groups[key]
            train_mode, shots, variant = key
            cells = [train_mode, str(shots), variant, str(len(group))]
            for i in range(n_steps):
                values = [
                    r["macro_by_step"][i]
                    for r in group
                    if i < len(r["macro_by_step"])
                ]
                cells.append(_pct(statistics.mean(values)) if values else "")
            scores = [r["avg_ge2"] for r in group if r["avg_ge2"] is not None]
            cells.append(_pct(statistics.mean(scores)) if scores else "n/a")
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
        lines.append(f"### final-step per-type F1, evaluation {eval_mode}")
        lines.append("")
        lines.append("| train | shots | variant | type | f1 |")
        lines.append("|" + " --- |" * 5)
        for key in sorted(groups):
            group = groups[key]
            train_mode, shots, variant = key
            types = sorted({t for r in group for t in r["final_per_type"]})
            for etype in types:
                values = [
                    r["final_per_type"][etype]["f1"]
                    for r in group
                    if etype in r["final_per_type"]
                ]
                lines.append(
                    f"| {train_mode} | {shots} | {variant} | {etype} "
                    f"| {_pct(statistics.mean(values))} |"
                )
        lines.append("")
    table = "\n".join(lines).rstrip() + "\n"
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


# parser ---------------------------------------------------------------------


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data-dir", required=True, help="split directory")
    parser.add_argument("--train-file", default="train.txt")
    parser.add_argument("--valid-file", default="valid.txt")
    parser.add_argument("--test-file", default="test.txt")
    parser.add_argument(
        "--dataset",
        default=None,
        help=f"bundled schedule/word-list name, one of {DATASETS}",
    )
    parser.add_argument("--schedule", default=None,
                        help="JSON file of named task permutations")
    parser.add_argument("--permutation", default="P1")
    parser.add_argument("--anchor-words-file", default=None)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    _add_data_flags(parser)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--prepared", default=None,
                        help="directory from the prepare subcommand")
    parser.add_argument("--seed", default="0",
                        help="comma-separated list of master seeds")
    parser.add_argument("--shots", type=int, default=None,
                        help="labeled mentions per new type")
    parser.add_argument("--train-mode", dest="train_mode", type=str.lower,
                        choices=sorted(_TRAIN_MODE_OF), default=None)
    parser.add_argument("--eval-mode", dest="eval_mode", type=str.lower,
                        choices=sorted(_EVAL_MODE_OF), default=None)
    parser.add_argument("--decode-mode", dest="decode_mode",
                        choices=DECODE_MODES, default=None)
    parser.add_argument("--mdt-format", dest="mdt_format",
                        choices=TEMPLATE_FORMATS, default=None)
    parser.add_argument("--head-mode", dest="head_mode",
                        choices=HEAD_MODES, default=None)
    parser.add_argument("--alpha", type=float, default=None,
                        help="distillation weight")
    parser.add_argument("--beta", type=float, default=None,
                        help="prediction weight")
    parser.add_argument("--base-epochs", dest="base_epochs", type=int,
                        default=None)
    parser.add_argument("--base-batch-size", dest="base_batch_size", type=int,
                        default=None)
    parser.add_argument("--base-freeze-fraction", dest="base_freeze_fraction",
                        type=float, default=None)
    parser.add_argument("--base-lr", dest="base_lr", type=float, default=None)
    parser.add_argument("--epochs", type=int, default=None,
                        help="incremental-stage epochs")
    parser.add_argument("--batch-size", dest="batch_size", type=int,
                        default=None, help="incremental-stage batch size")
    parser.add_argument("--freeze-fraction", dest="freeze_fraction",
                        type=float, default=None,
                        help="fraction of lower blocks frozen incrementally")
    parser.add_argument("--lr", type=float, default=None,
                        help="incremental-stage learning rate")
    parser.add_argument("--mdt-per-class", dest="mdt_per_class", type=int,
                        default=None)
    parser.add_argument("--d-model", dest="d_model", type=int, default=None)
    parser.add_argument("--n-layers", dest="n_layers", type=int, default=None)
    parser.add_argument("--n-heads", dest="n_heads", type=int, default=None)
    parser.add_argument("--save-predictions", action="store_true")
    parser.add_argument("--save-checkpoint", dest="save_checkpoint",
                        action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anchorner",
        description="Few-shot continual NER via anchor-word prompting.",
    )
    parser.add_argument("--version", action="version", version=VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    prepare = sub.add_parser(
        "prepare", help="generate demo data or pre-sample episodes"
    )
    prepare.add_argument("--out", required=True)
    prepare.add_argument("--synthetic", action="store_true")
    prepare.add_argument("--seed", type=int, default=0)
    prepare.add_argument("--n-train", dest="n_train", type=int, default=200)
    prepare.add_argument(
        "--n-validation", dest="n_validation", type=int, default=120
    )
    prepare.add_argument("--n-test", dest="n_test", type=int, default=80)
    prepare.add_argument("--data-dir", default=None)
    prepare.add_argument("--train-file", default="train.txt")
    prepare.add_argument("--valid-file", default="valid.txt")
    prepare.add_argument("--test-file", default="test.txt")
    prepare.add_argument("--dataset", default=None)
    prepare.add_argument("--schedule", default=None)
    prepare.add_argument("--permutation", default="P1")
    prepare.add_argument("--anchor-words-file", default=None)
    prepare.add_argument("--shots", type=int, default=5)
    prepare.set_defaults(func=cmd_prepare)

    run = sub.add_parser("run", help="continual runs over seeds")
    _add_run_flags(run)
    run.set_defaults(func=cmd_run)

    ablate = sub.add_parser("ablate", help="runs across component variants")
    _add_run_flags(ablate)
    ablate.add_argument(
        "--variants",
        default="full," + ",".join(ABLATION_SWITCHES),
        help="comma-separated variants; compose switches with '+'",
    )
    ablate.set_defaults(func=cmd_ablate)

    report = sub.add_parser("report", help="tabulate collected results")
    report.add_argument("runs", nargs="+", help="run directories to scan")
    report.add_argument("--out", default=None, help="write the tables here")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AnchorNerError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
