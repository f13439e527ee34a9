"""Command-line entry point: ``ichloc <subcommand> ...``.

Exit codes: 0 success, 2 usage or format error, 3 I/O error, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io
from .bayesopt import DEFAULT_SPACE, SearchSpace, optimize_detector
from .core import DetectorParams, FormatError, NumericalError, ParameterError, ShapeError
from .metrics import aggregate, evaluate_slices, report
from .mil import (
    TrainConfig,
    activation_map_from_features,
    attention_map_from_weights,
    gated_attention_weights,
    load_bag,
    load_params,
    save_bag,
    save_params,
    train_mil_head,
)
from .morphology import Footprint
from .pipeline import DiceObjective, detect_all, split_ids
from .synth import BagConfig, SceneConfig, generate_bags, generate_scene, scene_id
from .windowing import (
    BRAIN_WINDOW,
    SUBDURAL_WINDOW,
    StandardizationStats,
    WindowSpec,
    build_input_channels,
    compute_channel_stats,
    compute_stats,
    window_channels,
)

log = logging.getLogger("ichloc")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

# published optima for the two heads, used when a run fixes no parameters
PUBLISHED_PARAMS = {
    "pooling": DetectorParams(h=0.024, T=0.76, d=10),
    "attention": DetectorParams(h=0.0038, T=0.024, d=58),
}
MAP_SUFFIXES = (".amap", ".csv")


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------ helpers

def list_matrix_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise FileNotFoundError(f"no such file or directory: {path}")
    return sorted(p for p in path.iterdir() if p.suffix.lower() in MAP_SUFFIXES and p.is_file())


def load_maps(path) -> dict[str, np.ndarray]:
    maps = {}
    for f in list_matrix_files(Path(path)):
        if f.stem in maps:
            raise FormatError(f"duplicate slice id {f.stem!r} in {path}")
        maps[f.stem] = io.read_matrix(f)
    return maps


def parse_detector_params(obj) -> tuple[DetectorParams, Footprint]:
    if not isinstance(obj, dict):
        raise FormatError("detector params must be a JSON object")
    try:
        params = DetectorParams(h=obj["h"], T=obj["T"], d=obj["d"])
        fp = Footprint(int(obj.get("footprint_radius", 1)))
    except KeyError as exc:
        raise FormatError(f"detector params missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid detector params: {exc}") from None
    return params, fp


def params_to_json(params: DetectorParams, fp: Footprint) -> dict:
    return {"h": params.h, "T": params.T, "d": params.d, "footprint_radius": fp.radius}


def write_history(history, path: Path) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "h", "T", "d", "dice"])
    for t in history:
        w.writerow([t.iteration, repr(t.params["h"]), repr(t.params["T"]), repr(t.params["d"]), repr(t.objective)])
    io._atomic_write(path, buf.getvalue().encode("utf-8"))


def run_bo(maps, boxes, fp: Footprint, space: SearchSpace, budget: int, seed: int):
    if budget < 5:
        raise UsageError(f"--budget must be >= 5, got {budget}")
    objective = DiceObjective(maps, boxes, fp)
    return optimize_detector(objective, space, budget=budget, seed=seed)


# -------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "scenes":
        cfg = SceneConfig(rows=args.rows, cols=args.cols, blob_count=(args.min_blobs, args.max_blobs),
                          noise=args.noise, seed=args.seed)
        maps_dir = out / "maps"
        maps_dir.mkdir(exist_ok=True)
        boxes = []
        for i in range(args.start, args.start + args.n):
            m, b = generate_scene(cfg, i)
            io.write_matrix(m, maps_dir / f"{scene_id(i)}.amap")
            boxes.extend(b)
        io.write_boxes(boxes, out / "boxes.csv")
        manifest = {"kind": "scenes", "config": cfg.to_dict(), "indices": [args.start, args.start + args.n]}
    else:
        cfg = BagConfig(seed=args.seed)
        bags_dir = out / "bags"
        bags_dir.mkdir(exist_ok=True)
        for i, (bag, label) in enumerate(generate_bags(cfg, args.n_pos, args.n_neg)):
            save_bag(bag, label, bags_dir / f"bag_{i:04d}.amap")
        manifest = {"kind": "bags", "n_pos": args.n_pos, "n_neg": args.n_neg,
                    "config": {k.name: getattr(cfg, k.name) for k in fields(cfg)}}
    io.write_json(manifest, out / "manifest.json")
    return EXIT_OK


def cmd_window(args) -> int:
    files = list_matrix_files(Path(args.input))
    slices = {f.stem: io.read_matrix(f) for f in files}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.stats:
        raw = io.read_json(args.stats)
        stats = ([StandardizationStats.from_dict(s) for s in raw] if isinstance(raw, list)
                 else StandardizationStats.from_dict(raw))
    elif not slices:
        stats = None
    elif args.per_channel:
        stats = compute_channel_stats(list(slices.values()))
    else:
        stats = compute_stats([c for hu in slices.values() for c in window_channels(hu)])
    if stats is not None and not args.stats:
        payload = [s.to_dict() for s in stats] if isinstance(stats, list) else stats.to_dict()
        io.write_json(payload, out / "stats.json")
    for sid, hu in slices.items():
        channels = build_input_channels(hu, stats)
        io.write_matrix(np.vstack(channels), out / f"{sid}.amap")
    return EXIT_OK


def cmd_attend(args) -> int:
    bag, _ = load_bag(args.bag)
    rows = args.rows or 4 * bag.grid_rows
    cols = args.cols or 4 * bag.grid_cols
    if args.head == "pooling":
        amap = activation_map_from_features(bag, rows, cols)
    else:
        if not args.params:
            raise UsageError("--params is required for the attention head")
        p, _ = load_params(args.params)
        amap = attention_map_from_weights(gated_attention_weights(bag, p), bag, rows, cols)
    io.write_matrix(amap, args.out)
    return EXIT_OK


def cmd_train_head(args) -> int:
    files = sorted(Path(args.bags).glob("*.amap"))
    if not files:
        raise FileNotFoundError(f"no bags found in {args.bags}")
    dataset = []
    for f in files:
        bag, label = load_bag(f)
        if label is None:
            raise FormatError(f"{f}: bag has no label")
        dataset.append((bag, label))
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, pos_weight=args.pos_weight,
                      seed=args.seed, momentum=args.momentum, L_dim=args.l_dim)
    p, head, history = train_mil_head(dataset, cfg)
    if history and not np.isfinite(history[-1]):
        raise NumericalError("training diverged")
    save_params(p, head, args.out, extra={"train_config": {k.name: getattr(cfg, k.name) for k in fields(cfg)}})
    io._atomic_write(Path(args.out) / "loss_history.csv",
                     ("epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(history))).encode())
    return EXIT_OK


def cmd_detect(args) -> int:
    params, fp = parse_detector_params(io.read_json(args.params))
    if args.footprint_radius is not None:
        fp = Footprint(args.footprint_radius)
    maps = load_maps(args.maps)
    detections = detect_all(maps, params, fp, jobs=args.jobs)
    io.write_detections(detections, args.out)
    log.info("%d detections over %d maps", len(detections), len(maps))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    detections = io.read_detections(args.detections)
    boxes = io.read_boxes(args.boxes)
    per_slice = evaluate_slices(detections, boxes)
    rep = report(aggregate(per_slice.values()))
    if rep.degenerate:
        log.warning("degenerate counts %s: undefined metrics reported as 0", rep.counts)
    io.write_json(rep.to_dict(), args.out)
    if args.per_slice:
        io.write_json({sid: {"tp": c.tp, "fp": c.fp, "fn": c.fn} for sid, c in per_slice.items()}, args.per_slice)
    return EXIT_OK


def cmd_optimize(args) -> int:
    if args.budget < 5:
        raise UsageError(f"--budget must be >= 5, got {args.budget}")
    space = SearchSpace.from_dict(io.read_json(args.space)) if args.space else DEFAULT_SPACE
    if set(space.names) != {"h", "T", "d"}:
        raise UsageError("search space must define exactly h, T and d")
    maps = load_maps(args.maps)
    if not maps:
        raise UsageError(f"no maps found in {args.maps}")
    boxes = io.read_boxes(args.boxes)
    fp = Footprint(args.footprint_radius)
    best, history = run_bo(maps, boxes, fp, space, args.budget, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_history(history, out / "history.csv")
    io.write_json({**params_to_json(best.detector_params(), fp), "dice": best.objective}, out / "best_params.json")
    return EXIT_OK


# -------------------------------------------------------------- end to end

@dataclass
class PipelineConfig:
    maps_dir: str | None = None
    boxes: str | None = None
    out_dir: str = "run"
    head: str = "pooling"
    detector_params: dict | None = None
    optimize: bool = False
    footprint_radius: int = 1
    tune_fraction: float = 0.4
    budget: int = 60
    seed: int = 0
    jobs: int = 1
    space: dict | None = None
    hu_dir: str | None = None
    windows: list = field(default_factory=lambda: [
        {"level": BRAIN_WINDOW.level, "width": BRAIN_WINDOW.width},
        {"level": SUBDURAL_WINDOW.level, "width": SUBDURAL_WINDOW.width},
    ])
    stats: str | None = None
    per_channel_stats: bool = False
    bags_dir: str | None = None
    head_params: str | None = None
    map_rows: int | None = None
    map_cols: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.head not in ("pooling", "attention"):
            raise UsageError(f"head must be 'pooling' or 'attention', got {self.head!r}")
        if self.optimize and self.detector_params is not None:
            raise UsageError("config sets both fixed detector_params and optimize")
        if self.maps_dir is None and self.bags_dir is None:
            raise UsageError("config needs maps_dir or bags_dir")
        if self.boxes is None:
            raise UsageError("config needs boxes")
        if not 0 < self.tune_fraction < 1 and self.optimize:
            raise UsageError("tune_fraction must lie in (0, 1)")


def _attend_stage(cfg: PipelineConfig, out: Path) -> Path:
    maps_dir = out / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    p = load_params(cfg.head_params)[0] if cfg.head == "attention" else None
    for f in sorted(Path(cfg.bags_dir).glob("*.amap")):
        bag, _ = load_bag(f)
        rows = cfg.map_rows or 4 * bag.grid_rows
        cols = cfg.map_cols or 4 * bag.grid_cols
        if p is None:
            amap = activation_map_from_features(bag, rows, cols)
        else:
            amap = attention_map_from_weights(gated_attention_weights(bag, p), bag, rows, cols)
        io.write_matrix(amap, maps_dir / f"{f.stem}.amap")
    return maps_dir


def run_end_to_end(cfg: PipelineConfig) -> dict:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.hu_dir:
        windows = [WindowSpec(float(w["level"]), float(w["width"])) for w in cfg.windows]
        slices = {f.stem: io.read_matrix(f) for f in list_matrix_files(Path(cfg.hu_dir))}
        if slices:
            if cfg.stats:
                stats = StandardizationStats.from_dict(io.read_json(cfg.stats))
            elif cfg.per_channel_stats:
                stats = compute_channel_stats(list(slices.values()), windows)
            else:
                stats = compute_stats([c for hu in slices.values() for c in window_channels(hu, windows)])
            (out / "channels").mkdir(exist_ok=True)
            for sid, hu in slices.items():
                io.write_matrix(np.vstack(build_input_channels(hu, stats, windows)), out / "channels" / f"{sid}.amap")

    if cfg.maps_dir is None:
        if cfg.head == "attention" and not cfg.head_params:
            raise UsageError("attention maps from bags need head_params")
        maps_dir = _attend_stage(cfg, out)
    else:
        maps_dir = Path(cfg.maps_dir)
    maps = load_maps(maps_dir)
    boxes = io.read_boxes(cfg.boxes)
    fp = Footprint(cfg.footprint_radius)

    if cfg.optimize:
        tune_ids, test_ids = split_ids(maps, cfg.tune_fraction)
        if not tune_ids or not test_ids:
            raise UsageError("tuning/test split left one side empty")
        space = SearchSpace.from_dict(cfg.space) if cfg.space else DEFAULT_SPACE
        best, history = run_bo({s: maps[s] for s in tune_ids}, boxes, fp, space, cfg.budget, cfg.seed)
        params = best.detector_params()
        write_history(history, out / "history.csv")
        io.write_json({**params_to_json(params, fp), "dice": best.objective}, out / "best_params.json")
    else:
        tune_ids, test_ids = [], sorted(maps)
        if cfg.detector_params is not None:
            params, fp = parse_detector_params({"footprint_radius": cfg.footprint_radius, **cfg.detector_params})
        else:
            params = PUBLISHED_PARAMS[cfg.head]
    io.write_json({"tune": tune_ids, "test": test_ids}, out / "split.json")

    test_maps = {s: maps[s] for s in test_ids}
    detections = detect_all(test_maps, params, fp, jobs=cfg.jobs)
    io.write_detections(detections, out / "detections.json")
    test_boxes = [b for b in boxes if b.slice_id in test_maps]
    per_slice = evaluate_slices(detections, test_boxes, test_ids)
    rep = report(aggregate(per_slice.values()))
    result = {**rep.to_dict(), "params": params_to_json(params, fp), "n_slices": len(test_ids)}
    io.write_json(result, out / "report.json")
    return result


def cmd_run(args) -> int:
    raw = io.read_json(args.config)
    if not isinstance(raw, dict):
        raise FormatError(f"{args.config}: config must be a JSON object")
    for key in ("out_dir", "seed", "budget", "jobs"):
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    result = run_end_to_end(PipelineConfig.from_dict(raw))
    log.info("dice %.2f%% over %d slices", result["dice"], result["n_slices"])
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ichloc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes or MIL bags")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("scenes", "bags"), default="scenes")
    p.add_argument("--n", type=int, default=50, help="number of scenes")
    p.add_argument("--start", type=int, default=0, help="first scene index")
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--min-blobs", type=int, default=1)
    p.add_argument("--max-blobs", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--n-pos", type=int, default=200)
    p.add_argument("--n-neg", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("window", help="build 3-channel standardized network input from HU slices")
    p.add_argument("--input", required=True, help="HU matrix file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", help="JSON {mean, std} (or a list of 3) to use instead of computing")
    p.add_argument("--per-channel", action="store_true", help="compute one mean/std per channel")
    p.set_defaults(func=cmd_window)

    p = sub.add_parser("attend", help="attention or activation map for one bag")
    p.add_argument("--bag", required=True)
    p.add_argument("--params", help="trained head directory")
    p.add_argument("--head", choices=("attention", "pooling"), default="attention")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attend)

    p = sub.add_parser("train-head", help="train the gated-attention head on labelled bags")
    p.add_argument("--bags", required=True)
    p.add_argument("--out", required=True)
    defaults = TrainConfig()
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--momentum", type=float, default=defaults.momentum)
    p.add_argument("--pos-weight", type=float, default=defaults.pos_weight)
    p.add_argument("--l-dim", type=int, default=defaults.L_dim)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.set_defaults(func=cmd_train_head)

    p = sub.add_parser("detect", help="detect peaks in attention maps")
    p.add_argument("--maps", required=True, help="map file or directory of .amap/.csv maps")
    p.add_argument("--params", required=True, help="JSON {h, T, d, footprint_radius}")
    p.add_argument("--footprint-radius", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score detections against boxes")
    p.add_argument("--detections", required=True)
    p.add_argument("--boxes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-slice", help="optional JSON with per-slice counts")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("optimize", help="Bayesian optimization of (h, T, d) for Dice")
    p.add_argument("--maps", required=True)
    p.add_argument("--boxes", required=True)
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--space", help="search-space JSON")
    p.add_argument("--footprint-radius", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("run", help="end-to-end pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (FormatError, UsageError, ParameterError, ShapeError, ValueError, KeyError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
