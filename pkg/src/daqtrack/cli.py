"""Command-line surface.

Subcommands: gen, train, eval, gap, ablate, baseline, pad.  Every report
path writes machine JSON and/or CSV plus a rendered PNG figure alongside
(unless --no-figures).  Exit codes: 0 success, 2 configuration/usage
error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCENARIO_PRESETS, RunConfig, parse_set_overrides
from .engine import DAQ_ENGINE, STATIC_ENGINE, Engine, prediction_to_dict
from .errors import ConfigError, EmptyReportError, ScenarioFormatError, TrainingDiverged
from .metrics import evaluate, recall_csv_rows, report_json_bytes, transition_gap
from .padding import (
    extract_sequences,
    naive_associate,
    save_padded_grid,
    spatial_pad,
    temporal_pad,
)
from .scenario import generate_scenario, load_scenario, save_scenario
from .training import load_checkpoint, save_checkpoint, train, write_trace_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _add_common(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--no-figures", action="store_true",
                   help="skip PNG figure rendering")


def build_parser() -> argparse.ArgumentParser:
    root = argparse.ArgumentParser(prog="daqtrack",
                                   description=__doc__.splitlines()[0])
    root.add_argument("--version", action="version", version=__version__)
    sub = root.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate scenario files from a preset")
    p.add_argument("--preset", required=True, choices=sorted(SCENARIO_PRESETS))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True,
                   help="output file (or directory with --count > 1)")
    p.add_argument("--count", type=int, default=1)
    _add_common(p)

    p = sub.add_parser("train", help="train an engine on scenario files")
    p.add_argument("--scenarios", nargs="+", required=True,
                   help="scenario files or directories")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--engine", choices=(DAQ_ENGINE, STATIC_ENGINE), default=DAQ_ENGINE)
    p.add_argument("-o", "--output", required=True, help="checkpoint path")
    p.add_argument("--trace", help="loss trace CSV (default: <output>.trace.csv)")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on scenarios")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenarios", nargs="+", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="report JSON path")
    p.add_argument("--csv", help="recall table CSV (default: <output stem>.csv)")
    p.add_argument("--dump-predictions", metavar="DIR",
                   help="also write per-scenario prediction JSON files")
    _add_common(p)

    p = sub.add_parser("gap", help="transition-gap report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenarios", nargs="+", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="report JSON path")
    _add_common(p)

    p = sub.add_parser("ablate", help="sweep one config axis: train + eval per value")
    p.add_argument("--axis", required=True, metavar="KEY=V1,V2,...",
                   help="e.g. eds.es_threshold=0.01,0.1,0.5")
    p.add_argument("--scenarios", nargs="+", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--engine", choices=(DAQ_ENGINE, STATIC_ENGINE), default=DAQ_ENGINE)
    p.add_argument("-o", "--output", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("baseline",
                       help="train and evaluate the static-anchor engine")
    p.add_argument("--scenarios", nargs="+", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True,
                   help="output stem (writes <stem>.ckpt, <stem>.report.json, ...)")
    _add_common(p)

    p = sub.add_parser("pad", help="emit the refiner-input padded feature grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True,
                   help="output stem (writes <stem>.bin and <stem>.json)")
    _add_common(p)

    return root


# ---------------------------------------------------------------------------
# helpers


def _load_config(args) -> RunConfig:
    return RunConfig.load(path=args.config,
                          overrides=parse_set_overrides(args.overrides))


def _collect_scenarios(paths: list[str]):
    files = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files.extend(sorted(p.glob("*.json")))
        elif p.exists():
            files.append(p)
        else:
            raise ConfigError(f"scenario path does not exist: {raw}")
    if not files:
        raise ConfigError("no scenario files found")
    return [load_scenario(f) for f in files]


def _check_dims(cfg: RunConfig, scenarios) -> None:
    dim = cfg.get_int("model.dim")
    for scn in scenarios:
        if scn.feature_dim != dim:
            raise ConfigError(
                f"scenario (seed {scn.seed}) has feature dim {scn.feature_dim}, "
                f"model.dim is {dim}")


def _write_json(path, doc: dict) -> None:
    Path(path).write_bytes(report_json_bytes(doc))


def _train_one(cfg: RunConfig, kind: str, scenarios, seed: int) -> tuple[Engine, list]:
    engine = Engine.fresh(kind, cfg.model_config(), seed)
    trace = train(engine, scenarios, cfg.train_config(), cfg.noise_spec(),
                  cfg.eds_config(), cfg.loss_config(), seed)
    return engine, trace


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    spec = cfg.scenario_spec(args.preset)
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    if args.count == 1:
        save_scenario(generate_scenario(spec, args.seed), args.output)
        print(f"wrote {args.output}")
    else:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        for i in range(args.count):
            path = out / f"scenario_{i:03d}.json"
            save_scenario(generate_scenario(spec, args.seed + i), path)
        print(f"wrote {args.count} scenarios to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    scenarios = _collect_scenarios(args.scenarios)
    _check_dims(cfg, scenarios)
    engine, trace = _train_one(cfg, args.engine, scenarios, args.seed)
    save_checkpoint(args.output, engine)
    trace_path = args.trace or (str(args.output) + ".trace.csv")
    write_trace_csv(trace, trace_path)
    if not args.no_figures and trace:
        from .plots import fig_loss_curve, save_figure
        save_figure(fig_loss_curve(trace), str(args.output) + ".loss.png")
    final = trace[-1][1] if trace else float("nan")
    print(f"trained {args.engine} engine for {len(trace)} steps "
          f"(final loss {final:.4f}); checkpoint: {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    scenarios = _collect_scenarios(args.scenarios)
    _check_dims(cfg, scenarios)
    engine = load_checkpoint(args.checkpoint, cfg.model_config())
    recall, subset, predictions = evaluate(
        engine, scenarios, cfg.noise_spec(), args.seed,
        iou_thresh=cfg.get_float("eval.iou_thresh"),
        frame_tol=cfg.get_int("eval.frame_tol"))
    doc = recall.to_dict()
    doc["subset"] = subset.to_dict()
    doc["engine"] = engine.kind
    _write_json(args.output, doc)
    csv_path = args.csv or str(Path(args.output).with_suffix(".csv"))
    with open(csv_path, "w", newline="") as fh:
        csv.writer(fh).writerows(recall_csv_rows(recall))
    if args.dump_predictions:
        dump = Path(args.dump_predictions)
        dump.mkdir(parents=True, exist_ok=True)
        for idx, pred in enumerate(predictions):
            _write_json(dump / f"prediction_{idx:03d}.json",
                        prediction_to_dict(pred))
    if not args.no_figures:
        from .plots import fig_recall, save_figure
        save_figure(fig_recall(recall), str(Path(args.output).with_suffix(".png")))
    emg = recall.emergence_recall
    dis = recall.disappearance_recall
    print(f"emergence recall: {'-' if emg is None else f'{emg:.3f}'}  "
          f"disappearance recall: {'-' if dis is None else f'{dis:.3f}'}  "
          f"({args.output})")
    return EXIT_OK


def cmd_gap(args) -> int:
    cfg = _load_config(args)
    scenarios = _collect_scenarios(args.scenarios)
    _check_dims(cfg, scenarios)
    engine = load_checkpoint(args.checkpoint, cfg.model_config())
    report = transition_gap(engine, scenarios, cfg.noise_spec(), args.seed)
    doc = report.to_dict()
    doc["engine"] = engine.kind
    _write_json(args.output, doc)
    if not args.no_figures:
        from .plots import fig_gap, save_figure
        save_figure(fig_gap(report), str(Path(args.output).with_suffix(".png")))
    print(f"transition gap over {report.count} events: "
          f"CS {report.cs_mean:.3f}+-{report.cs_std:.3f}  "
          f"NED {report.ned_mean:.3f}+-{report.ned_std:.3f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if "=" not in args.axis:
        raise ConfigError("--axis expects KEY=V1,V2,...")
    key, raw_values = args.axis.split("=", 1)
    key = key.strip()
    values = [v.strip() for v in raw_values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--axis needs at least one value")
    scenarios = _collect_scenarios(args.scenarios)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        cfg = RunConfig.load(path=args.config,
                             overrides={**parse_set_overrides(args.overrides),
                                        key: value})
        _check_dims(cfg, scenarios)
        engine, _ = _train_one(cfg, args.engine, scenarios, args.seed)
        recall, _, _ = evaluate(engine, scenarios, cfg.noise_spec(), args.seed,
                                iou_thresh=cfg.get_float("eval.iou_thresh"),
                                frame_tol=cfg.get_int("eval.frame_tol"))
        emg = recall.emergence_recall or 0.0
        dis = recall.disappearance_recall or 0.0
        combined = recall.combined() or 0.0
        rows.append((value, emg, dis, combined))
        print(f"{key}={value}: emergence {emg:.3f} disappearance {dis:.3f} "
              f"combined {combined:.3f}")
    table = out / "ablation.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key, "emergence_recall", "disappearance_recall", "combined"])
        for row in rows:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
    if not args.no_figures:
        from .plots import fig_ablation, save_figure
        save_figure(fig_ablation(key, rows), out / "ablation.png")
    print(f"wrote {table}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _load_config(args)
    scenarios = _collect_scenarios(args.scenarios)
    _check_dims(cfg, scenarios)
    engine, trace = _train_one(cfg, STATIC_ENGINE, scenarios, args.seed)
    stem = str(args.output)
    save_checkpoint(stem + ".ckpt", engine)
    write_trace_csv(trace, stem + ".trace.csv")
    recall, subset, _ = evaluate(engine, scenarios, cfg.noise_spec(), args.seed,
                                 iou_thresh=cfg.get_float("eval.iou_thresh"),
                                 frame_tol=cfg.get_int("eval.frame_tol"))
    doc = recall.to_dict()
    doc["subset"] = subset.to_dict()
    doc["engine"] = STATIC_ENGINE
    _write_json(stem + ".report.json", doc)
    if not args.no_figures:
        from .plots import fig_loss_curve, fig_recall, save_figure
        if trace:
            save_figure(fig_loss_curve(trace), stem + ".loss.png")
        save_figure(fig_recall(recall), stem + ".report.png")
    emg = recall.emergence_recall
    dis = recall.disappearance_recall
    print(f"baseline: emergence {'-' if emg is None else f'{emg:.3f}'} "
          f"disappearance {'-' if dis is None else f'{dis:.3f}'}")
    return EXIT_OK


def cmd_pad(args) -> int:
    cfg = _load_config(args)
    scn = load_scenario(args.scenario)
    _check_dims(cfg, [scn])
    engine = load_checkpoint(args.checkpoint, cfg.model_config())
    seqs, obs_list = extract_sequences(scn, engine, cfg.noise_spec(), args.seed)
    total = cfg.get_int("segmenter.n_queries")
    if seqs:
        tracked = temporal_pad(seqs, scn.frames)
        ids = [s.track_id for s in seqs]
    else:
        tracked = np.zeros((0, scn.frames, cfg.get_int("model.dim")))
        ids = []
    naive = naive_associate(obs_list)
    grid = spatial_pad(tracked, ids, naive, total)
    save_padded_grid(grid, str(args.output) + ".bin", str(args.output) + ".json")
    print(f"padded grid {grid.grid.shape} -> {args.output}.bin/.json "
          f"({grid.padded_flags.count('tracked')} tracked, "
          f"{grid.padded_flags.count('naive')} naive, "
          f"{grid.padded_flags.count('zero')} zero)")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "gap": cmd_gap,
    "ablate": cmd_ablate,
    "baseline": cmd_baseline,
    "pad": cmd_pad,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ScenarioFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        dump_path = Path("divergence_dump.json")
        dump_path.write_text(json.dumps(e.dump, indent=2, sort_keys=True) + "\n")
        print(f"diagnostics written to {dump_path}", file=sys.stderr)
        return EXIT_RUNTIME
    except EmptyReportError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - the CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
