"""Command-line entry point: ``curriloc {gen-synth,train,evaluate,perturb,report,replay}``.

Every command accepts ``--config FILE`` holding ``[section] key = value``
pairs; the section is the command name (``[train]`` etc).  Explicit flags
override the config file, which overrides built-in defaults.

Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import sys
from datetime import datetime, timezone
from pathlib import Path


from . import __version__, kernels
from .core import derive_seed
from .data import (SynthSpec, generate_synthetic, load_dataset, read_pgm, save_dataset, select,
                   split_dataset, write_pgm)
from .effects import EffectSpec, perturb_records
from .encoder import load_checkpoint, save_checkpoint
from .errors import CurrilocError, FormatVersionError, MissingParam
from .losses import ALL_KINDS, LossParams, LossSpec, WeightSchedule
from .mining import MiningConfig, TripletIndex, make_sampler, subsample_dataset, write_triplets_csv
from .retrieval import (RetrievalConfig, build_visual_map, evaluate, metrics_csv, query_rows_csv,
                        room_representatives, save_visual_map)
from .trainer import TrainConfig, train

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    """Invalid flag value; the message names the flag."""


class _Parser(argparse.ArgumentParser):
    """Reports bad flags through :class:`UsageError` so they exit with code 1, not argparse's 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).split(",") if t.strip())


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _jsonable(value):
    if isinstance(value, Path):
        return str(value.resolve())
    if isinstance(value, tuple):
        return list(value)
    return value


class RunManifest:
    """``manifest.json`` of one command invocation, written before the work starts."""

    def __init__(self, out_dir: Path, command: str, args: argparse.Namespace, seeds: dict):
        self.path = out_dir / "manifest.json"
        config = {k: _jsonable(v) for k, v in vars(args).items() if k not in ("func",)}
        self.data = {"tool": "curriloc", "version": __version__, "kernel_backend": kernels.BACKEND,
                     "command": command, "config": config, "seeds": seeds, "artifacts": {},
                     "started": _now(), "finished": None}
        self.write()

    def artifact(self, name: str, path: Path) -> None:
        self.data["artifacts"][name] = str(path)

    def write(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def finish(self, **extra) -> None:
        self.data.update(extra)
        self.data["finished"] = _now()
        self.write()


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# gen-synth

def cmd_gen_synth(args) -> int:
    for flag, value in (("--rooms", args.rooms), ("--per-room", args.per_room),
                        ("--image-rows", args.image_rows), ("--image-cols", args.image_cols)):
        if value < 1:
            raise UsageError(f"{flag} must be a positive integer, got {value}")
    for flag, value in (("--room-size", args.room_size),):
        if value <= 0:
            raise UsageError(f"{flag} must be positive, got {value}")
    for flag, value in (("--appearance-noise", args.appearance_noise),
                        ("--condition-shift", args.condition_shift),
                        ("--illumination-jitter", args.illumination_jitter)):
        if value < 0:
            raise UsageError(f"{flag} must be >= 0, got {value}")
    conditions = tuple(c.strip() for c in args.conditions.split(",") if c.strip())
    if not conditions:
        raise UsageError("--conditions must list at least one label")
    if not 0.0 <= args.train_fraction <= 1.0:
        raise UsageError(f"--train-fraction must lie in [0, 1], got {args.train_fraction}")

    spec = SynthSpec(rooms=args.rooms, images_per_room=args.per_room, room_size=args.room_size,
                     image_shape=(args.image_rows, args.image_cols),
                     appearance_noise=args.appearance_noise, condition_shift=args.condition_shift,
                     illumination_jitter=args.illumination_jitter, conditions=conditions,
                     seed=derive_seed(args.seed, "synth"))
    records = generate_synthetic(spec)
    splits = split_dataset(records, args.train_fraction, reference_condition=conditions[0],
                           seed=derive_seed(args.seed, "splits"))
    out = _out_dir(args.out)
    save_dataset(records, out, splits, conditions, conditions[0])
    rooms = len({r.room for r in records})
    print(f"wrote {len(records)} records ({rooms} rooms, conditions {','.join(conditions)}) to {out}")
    for name, ids in splits.items():
        print(f"  split {name}: {len(ids)}")
    return EXIT_OK


# --------------------------------------------------------------------------
# train

def _loss_spec(args) -> LossSpec:
    kind = args.loss.upper()
    if kind not in ALL_KINDS:
        raise UsageError(f"--loss must be one of {', '.join(ALL_KINDS)}, got {args.loss!r}")
    p1 = LossParams(margin=args.m1, gamma=args.gamma, alpha_deg=args.alpha)
    p2 = None
    if kind.startswith("CV_"):
        p2 = LossParams(margin=args.m2, gamma=args.gamma2, alpha_deg=args.alpha2)
    try:
        return LossSpec(kind, p1, p2, WeightSchedule(args.schedule))
    except MissingParam as exc:
        raise UsageError(f"--loss {kind}: {exc} (flags --m1/--m2, --gamma/--gamma2, --alpha/--alpha2)")


def _split_records(records, manifest, name):
    if name not in manifest.splits:
        raise UsageError(f"split {name!r} not in dataset (have: {', '.join(manifest.splits) or 'none'})")
    return select(records, manifest.splits[name])


def cmd_train(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be a positive integer, got {args.n}")
    if args.triplets < 1:
        raise UsageError(f"--triplets must be a positive integer, got {args.triplets}")
    if args.lr < 0:
        raise UsageError(f"--lr must be >= 0, got {args.lr}")
    loss = _loss_spec(args)
    config = TrainConfig(loss=loss, learning_rate=args.lr, batch_size=args.n, total_triplets=args.triplets,
                         hidden=_ints(args.hidden), dim=args.dim, grid=_ints(args.grid))
    seeds = {"seed": args.seed, "mining": derive_seed(args.seed, f"mining:{args.stage}"),
             "init": derive_seed(args.seed, f"init:{args.stage}"),
             "subsample": derive_seed(args.seed, "subsample")}
    mining = MiningConfig(stage=args.stage, r_plus=args.r_plus, r_minus=args.r_minus, seed=seeds["mining"],
                          count=args.triplets, positive_same_room=not args.positive_any_room)

    records, manifest = load_dataset(args.data)
    train_set = _split_records(records, manifest, args.split)
    if args.subsample:
        train_set = subsample_dataset(train_set, args.subsample, seeds["subsample"])
    make_sampler(train_set, mining)  # reject unusable datasets before writing anything

    out = _out_dir(args.out)
    run = RunManifest(out, "train", args, seeds)
    run.data["loss"] = loss.to_config()

    validate = None
    if args.val_split:
        val_set = _split_records(records, manifest, args.val_split)
        validate = _validator(args.stage, train_set, val_set, config, args.d)

    batches = []
    on_batch = (lambda step, idx: batches.append(idx)) if args.dump_triplets else None
    params, log = train(train_set, mining, config, seeds["init"], validate=validate, on_batch=on_batch)

    ckpt = out / "model.mloc"
    save_checkpoint(params, ckpt)
    run.artifact("checkpoint", ckpt)
    (out / "train_log.csv").write_text(log.to_csv(), encoding="utf-8", newline="\n")
    run.artifact("train_log", out / "train_log.csv")
    if log.best_params is not None:
        save_checkpoint(log.best_params, out / "best.mloc")
        run.artifact("best_checkpoint", out / "best.mloc")
        (out / "validation.csv").write_text(
            "step,score\n" + "".join(f"{s},{v!r}\n" for s, v in log.validation), encoding="utf-8")
    if args.dump_triplets:
        ids = [r.id for r in train_set]
        triples = (TripletIndex(ids[a], ids[p], ids[n]) for idx in batches for a, p, n in idx)
        write_triplets_csv(args.dump_triplets, triples)
        run.artifact("triplets", Path(args.dump_triplets))
    run.finish(steps=len(log.steps), duration_s=round(log.duration, 3))
    print(f"{args.stage} model: {len(log.steps)} steps, final loss {log.losses[-1]:.4f}, "
          f"{log.duration:.1f}s -> {ckpt}")
    return EXIT_OK


def _validator(stage, database, queries, config: TrainConfig, d: float):
    def score(params):
        vmap = build_visual_map(database, params, config.grid)
        if stage == "coarse":
            res = evaluate(queries, vmap, d=d, mode="hierarchical", reps=room_representatives(vmap),
                           coarse=params, fine=params, grid=config.grid)
            return res.room_accuracy
        return evaluate(queries, vmap, d=d, mode="single_step", fine=params, grid=config.grid).recall_at_1
    return score


# --------------------------------------------------------------------------
# evaluate

def _effect_from_args(args, seed) -> EffectSpec | None:
    if not args.effect:
        return None
    if args.kernel < 1 or args.kernel % 2 == 0:
        raise UsageError(f"--kernel must be an odd integer >= 1, got {args.kernel}")
    if args.sigma < 0:
        raise UsageError(f"--sigma must be >= 0, got {args.sigma}")
    if args.columns < 0:
        raise UsageError(f"--columns must be >= 0, got {args.columns}")
    return EffectSpec(args.effect, sigma=args.sigma, columns=args.columns, start=args.start,
                      kernel=args.kernel, seed=seed)


def _model_loss(ckpt: Path) -> str:
    manifest = ckpt.parent / "manifest.json"
    try:
        return json.loads(manifest.read_text(encoding="utf-8"))["loss"]["kind"]
    except (OSError, KeyError, ValueError):
        return ""


def cmd_evaluate(args) -> int:
    if args.d <= 0:
        raise UsageError(f"--d must be positive, got {args.d}")
    mode = args.mode.replace("-", "_")
    if mode == "hierarchical" and not args.coarse:
        raise UsageError("--coarse is required in hierarchical mode")
    cfg = RetrievalConfig(h1=args.h1, h2=args.h2, tau=args.tau, metric=args.metric)
    seeds = {"seed": args.seed, "effects_queries": derive_seed(args.seed, "effects:queries"),
             "effects_map": derive_seed(args.seed, "effects:map")}
    fine = load_checkpoint(args.fine)
    coarse = load_checkpoint(args.coarse) if mode == "hierarchical" else None
    records, manifest = load_dataset(args.data)
    queries = _split_records(records, manifest, args.split)
    database = _split_records(records, manifest, args.map_split)

    q_effect = _effect_from_args(args, seeds["effects_queries"])
    if q_effect is not None:
        queries = perturb_records(queries, q_effect)
        # noise hits the map as well as the queries; other effects only on request
        if q_effect.kind == "noise" or args.perturb_map:
            m_effect = _effect_from_args(args, seeds["effects_map"])
            database = perturb_records(database, m_effect)

    out = _out_dir(args.out)
    run = RunManifest(out, "evaluate", args, seeds)
    run.data["labels"] = {
        "split": args.split, "mode": mode,
        "loss_coarse": _model_loss(Path(args.coarse)) if args.coarse else "",
        "loss_fine": _model_loss(Path(args.fine)),
        "effect": args.effect or "none",
        "level": q_effect.level if q_effect is not None else 0,
    }
    run.write()

    grid = _ints(args.grid)
    fine_map = build_visual_map(database, fine, grid)
    reps = None
    if mode == "hierarchical":
        reps = room_representatives(build_visual_map(database, coarse, grid))
    result = evaluate(queries, fine_map, d=args.d, mode=mode, reps=reps, coarse=coarse, fine=fine,
                      cfg=cfg, grid=grid)

    save_visual_map(fine_map, out, "map")
    (out / "metrics.csv").write_text(metrics_csv(result.summary()), encoding="utf-8", newline="\n")
    (out / "queries.csv").write_text(query_rows_csv(result.rows), encoding="utf-8", newline="\n")
    for name in ("metrics.csv", "queries.csv", "map_poses.csv", "map_descriptors.mloc"):
        run.artifact(name, out / name)
    run.finish()
    print(f"{mode} on {args.split}: room_accuracy={result.room_accuracy:.4f} "
          f"recall_at_1={result.recall_at_1:.4f} (d={args.d}, {result.n_queries} queries)")
    return EXIT_OK


# --------------------------------------------------------------------------
# perturb

def cmd_perturb(args) -> int:
    effect = _effect_from_args(args, derive_seed(args.seed, "effects"))
    if effect is None:
        raise UsageError("--effect is required")
    src, out = Path(args.input), _out_dir(args.out)
    files = sorted(src.glob("*.pgm"))
    if not files:
        raise UsageError(f"--in directory {src} holds no .pgm files")
    for i, path in enumerate(files):
        write_pgm(out / path.name, effect.apply(read_pgm(path), i))
    print(f"applied {effect.kind} (level {effect.level}) to {len(files)} images -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# report

def _read_metrics(path: Path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["metric", "value"]:
        raise UsageError(f"{path}: expected header 'metric,value'")
    return {name: float(value) for name, value in rows[1:]}


def build_report(run_dirs) -> tuple[list[str], list[list]]:
    entries = []
    schema = None
    for order, run_dir in enumerate(run_dirs):
        run_dir = Path(run_dir)
        metrics = _read_metrics(run_dir / "metrics.csv")
        if schema is None:
            schema = list(metrics)
        elif set(metrics) != set(schema):
            raise UsageError(f"{run_dir}: metric columns {sorted(metrics)} differ from {sorted(schema)}")
        labels = {}
        manifest = run_dir / "manifest.json"
        if manifest.exists():
            labels = json.loads(manifest.read_text(encoding="utf-8")).get("labels", {})
        entries.append((labels.get("effect", "none"), float(labels.get("level", 0)), order, run_dir, labels, metrics))
    entries.sort(key=lambda e: (e[0] != "none", e[0], e[1], e[2]))
    header = ["run", "split", "mode", "loss_coarse", "loss_fine", "effect", "level"] + schema
    rows = []
    for effect, level, _, run_dir, labels, metrics in entries:
        rows.append([str(run_dir), labels.get("split", ""), labels.get("mode", ""),
                     labels.get("loss_coarse", ""), labels.get("loss_fine", ""), effect, level]
                    + [metrics[k] for k in schema])
    return header, rows


def cmd_report(args) -> int:
    header, rows = build_report(args.runs)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# --------------------------------------------------------------------------
# replay

def cmd_replay(args) -> int:
    """Re-run the command recorded in a manifest, optionally into a new output directory."""
    data = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    command, config = data.get("command"), dict(data.get("config", {}))
    parser = build_parser()
    sub = _subparser(parser, command) if command else None
    if sub is None or command == "replay":
        raise UsageError(f"{args.manifest}: manifest records no replayable command")
    path_dests = {a.dest for a in sub._actions if a.type is Path}
    for key, value in config.items():
        if key in path_dests and value is not None:
            config[key] = [Path(v) for v in value] if isinstance(value, list) else Path(value)
    config.pop("config", None)
    if args.out is not None:
        config["out"] = args.out
    ns = argparse.Namespace(**config)
    ns.config = None
    ns.command = command
    return sub.get_default("func")(ns)


# --------------------------------------------------------------------------
# argument parsing

def _effect_flags(p):
    p.add_argument("--effect", choices=["noise", "occlusion", "blur"], default=None)
    p.add_argument("--sigma", type=float, default=0.0, help="noise SD in 8-bit intensity units")
    p.add_argument("--columns", type=int, default=0, help="occluded column count")
    p.add_argument("--start", type=int, default=None, help="first occluded column (default: seeded random)")
    p.add_argument("--kernel", type=int, default=1, help="odd blur kernel length in pixels")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="curriloc", description="Curriculum triplet-loss training and hierarchical localization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="config file with a [%s] section" % name)
        p.set_defaults(func=func)
        return p

    p = command("gen-synth", cmd_gen_synth, "generate a synthetic multi-room dataset")
    synth = SynthSpec()
    p.add_argument("--rooms", type=int, default=synth.rooms)
    p.add_argument("--per-room", type=int, default=synth.images_per_room,
                   help="records per room, spread over the conditions")
    p.add_argument("--room-size", type=float, default=synth.room_size, help="room side length")
    p.add_argument("--image-rows", type=int, default=synth.image_shape[0])
    p.add_argument("--image-cols", type=int, default=synth.image_shape[1])
    p.add_argument("--appearance-noise", type=float, default=synth.appearance_noise)
    p.add_argument("--condition-shift", type=float, default=synth.condition_shift)
    p.add_argument("--illumination-jitter", type=float, default=synth.illumination_jitter)
    p.add_argument("--conditions", default=",".join(synth.conditions),
                   help="comma list; the first is the reference")
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = command("train", cmd_train, "train a coarse or fine model")
    p.add_argument("--stage", choices=["coarse", "fine"], required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--subsample", type=int, default=0, help="train on a room-stratified subset of this size")
    p.add_argument("--loss", default="TL")
    p.add_argument("--m1", type=float, default=None, help="margin (first component for curriculum kinds)")
    p.add_argument("--m2", type=float, default=None, help="margin of the second curriculum component")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--gamma2", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None, help="angle in degrees")
    p.add_argument("--alpha2", type=float, default=None)
    p.add_argument("--schedule", default="linear", choices=["linear", "cosine"])
    p.add_argument("--n", type=int, default=8, help="batch size")
    p.add_argument("--triplets", type=int, default=50000)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--hidden", default="256,64")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--grid", default="16,64")
    p.add_argument("--r-plus", type=float, default=0.4)
    p.add_argument("--r-minus", type=float, default=0.4)
    p.add_argument("--positive-any-room", action="store_true")
    p.add_argument("--val-split", default=None)
    p.add_argument("--d", type=float, default=0.5, help="Recall@1 threshold used for fine validation")
    p.add_argument("--dump-triplets", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = command("evaluate", cmd_evaluate, "localize a query split against a map split")
    p.add_argument("--mode", choices=["hierarchical", "single-step"], default="hierarchical")
    p.add_argument("--coarse", type=Path, default=None)
    p.add_argument("--fine", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--map-split", default="train")
    p.add_argument("--d", type=float, default=0.5)
    p.add_argument("--h1", type=float, default=0.5)
    p.add_argument("--h2", type=float, default=0.1)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--grid", default="16,64")
    _effect_flags(p)
    p.add_argument("--perturb-map", action="store_true", help="also perturb map images (always on for noise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = command("perturb", cmd_perturb, "apply an effect to every PGM in a directory")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _effect_flags(p)
    p.add_argument("--seed", type=int, default=0)

    p = command("report", cmd_report, "tabulate evaluation runs")
    p.add_argument("runs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=None)

    p = command("replay", cmd_replay, "re-run a command from its manifest.json")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, default=None, help="output directory (default: as recorded)")
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str):
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices.get(name)


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    """Load ``--config`` and install its values as subparser defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None or known.command is None:
        return
    cp = configparser.ConfigParser(interpolation=None)
    if not cp.read(known.config, encoding="utf-8"):
        raise FileNotFoundError(f"config file {known.config} not found")
    if not cp.has_section(known.command):
        return
    sub = _subparser(parser, known.command)
    if sub is None:
        return
    dests = {a.dest for a in sub._actions}
    values = {}
    for key, value in cp.items(known.command):
        dest = key.replace("-", "_")
        if dest not in dests:
            raise UsageError(f"--config: unknown key {key!r} in [{known.command}]")
        values[dest] = value
    for action in sub._actions:
        if action.dest in values and isinstance(action, argparse._StoreTrueAction):
            values[action.dest] = values[action.dest].strip().lower() in ("1", "true", "yes", "on")
    sub.set_defaults(**values)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, FormatVersionError, CurrilocError, ValueError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
