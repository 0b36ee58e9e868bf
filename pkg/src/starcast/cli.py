"""Command-line interface.

Verbs: ``synth``, ``preprocess``, ``train``, ``eval``, ``predict``, ``render``.
Global flags ``--config``, ``--seed`` and ``--out`` come before the verb;
``--set key=value`` overrides single config entries. Failures exit nonzero
and print ``error[<category>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_overrides
from .dataset import (
    FrameRateMismatch,
    ParseError,
    SampleRecord,
    build_samples,
    load_recording,
    read_samples,
    sample_windows,
    select_joint_candidates,
    synthetic_recording,
    write_recording,
    write_samples,
)
from .decoder import TrajectoryPrediction
from .model import ModelConfig, Sample, TrajectoryModel, prepare_sample, to_global_prediction
from .nn import CheckpointError, read_checkpoint
from .synthetic import TEMPLATES, SyntheticSpec, generate_synthetic
from .training import TrainingDiverged, ade_fde, evaluate, train, write_history_csv

log = logging.getLogger("starcast")

EXIT_CODES = {"usage": 2, "io": 3, "parse": 4, "config": 5, "checkpoint": 6, "training": 7}

CONFIG_FILE = "config.json"
CHECKPOINT_FILE = "checkpoint.npz"
METRICS_FILE = "metrics.csv"
CURVES_FILE = "training_curves.png"


class CliError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


# -- helpers -----------------------------------------------------------------------
def _out_dir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args, extra=None) -> RunConfig:
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    overrides.update(extra or {})
    return RunConfig.load(args.config, overrides)


def _prepare(records, cfg: ModelConfig):
    data = []
    for r in records:
        if r.scene.t_future != cfg.decoder.horizon:
            raise CliError("config", f"samples have a {r.scene.t_future}-step future, model horizon is {cfg.decoder.horizon}")
        data.append(prepare_sample(Sample(r.scene, r.targets(joint=True)), cfg))
    return data


def _load_samples(path):
    try:
        return read_samples(path)
    except FileNotFoundError as exc:
        raise CliError("io", str(exc)) from None


def _load_model(checkpoint, run_cfg: RunConfig | None = None, explicit=False):
    if not Path(checkpoint).is_file():
        raise CliError("io", f"checkpoint {checkpoint} not found")
    meta, arrays = read_checkpoint(checkpoint)
    extra = meta.get("extra", {})
    if "run_config" not in extra:
        raise CliError("checkpoint", f"{checkpoint} carries no run configuration")
    saved = RunConfig.from_dict(extra["run_config"])
    if explicit and run_cfg is not None and run_cfg.model_dict() != saved.model_dict():
        diff = sorted(k for k, v in run_cfg.model_dict().items() if saved.model_dict()[k] != v)
        raise CliError("checkpoint", f"checkpoint/config mismatch on {', '.join(diff)}")
    model = TrajectoryModel(saved.model_config(), seed=saved.seed)
    try:
        model.store.load_state(arrays)
    except CheckpointError as exc:
        raise CliError("checkpoint", str(exc)) from None
    return model, saved


def _prediction_rows(records, preds, frames, mode):
    """Rows in the predictions file format: one per (sample, target)."""
    out = []
    i = 0
    for s, rec in enumerate(records):
        for agent in rec.targets(joint=True):
            f = frames[i]
            g = to_global_prediction(preds[i], f.pose)
            out.append({
                "sample": s,
                "agent": agent,
                "mode": mode,
                "modes": g.modes.tolist(),
                "scores": g.scores.tolist(),
            })
            i += 1
    return out


def _read_predictions(path):
    preds = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                if line.strip():
                    try:
                        d = json.loads(line)
                        modes = np.asarray(d["modes"], dtype=float)
                        scores = np.asarray(d.get("scores", np.full(len(modes), 1.0 / len(modes))), dtype=float)
                        preds[(int(d["sample"]), int(d["agent"]))] = TrajectoryPrediction(modes, [], scores)
                    except (KeyError, TypeError, ValueError) as exc:
                        raise CliError("parse", f"{path}:{n}: {exc}") from None
    except FileNotFoundError:
        raise CliError("io", f"predictions file {path} not found") from None
    return preds


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(r[h]) if isinstance(r[h], float) else r[h] for h in header])


# -- verbs --------------------------------------------------------------------------
def cmd_synth(args):
    out = _out_dir(args, "synthetic")
    cfg = _run_config(args)
    if args.kind == "recording":
        rec = synthetic_recording(cfg.seed, n_frames=args.frames, n_agents=args.agents)
        write_recording(rec, out / "tracks.csv", out / "map.json")
        print(f"wrote {out / 'tracks.csv'} and {out / 'map.json'} ({len(rec.agents)} agents, {rec.num_frames} frames)")
        return
    templates = tuple(args.templates.split(","))
    try:
        spec = SyntheticSpec(n_scenes=args.scenes, agents_per_scene=args.agents, templates=templates,
                             t_past=cfg.t_past, t_future=cfg.horizon, dt=cfg.dt)
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    scenes = generate_synthetic(cfg.seed, spec)
    records = [SampleRecord(s, 1, select_joint_candidates(s, 1, cfg.radius), 0, f"synthetic-{i}")
               for i, s in enumerate(scenes)]
    manifest = write_samples(records, out, {"seed": cfg.seed, "spec": repr(spec)})
    print(f"wrote {manifest['count']} samples to {out}")


def cmd_preprocess(args):
    out = _out_dir(args, "samples")
    cfg = _run_config(args)
    try:
        rec = load_recording(args.tracks, args.map, cfg.frame_rate)
    except FileNotFoundError as exc:
        raise CliError("io", str(exc)) from None
    n_windows = len(sample_windows(rec, cfg.t_past, cfg.horizon, cfg.stride))
    samples = build_samples(rec, cfg.radius, cfg.t_past, cfg.horizon, cfg.stride, source=Path(args.tracks).name)
    config = {k: getattr(cfg, k) for k in ("t_past", "horizon", "stride", "radius", "frame_rate")}
    manifest = write_samples(samples, out, config, {"window_count": n_windows, "frames": rec.num_frames})
    print(f"{manifest['count']} samples from {n_windows} windows -> {out}")


def cmd_train(args):
    out = _out_dir(args, "run")
    cfg = _run_config(args, {"mode": args.mode} if args.mode else None)
    cfg.write(out / CONFIG_FILE)
    _, records = _load_samples(args.samples)
    if not records:
        raise CliError("usage", f"no samples in {args.samples}")
    model = TrajectoryModel(cfg.model_config(), seed=cfg.seed)
    data = _prepare(records, model.cfg)
    val = _prepare(_load_samples(args.val)[1], model.cfg) if args.val else None
    try:
        result = train(model, data, cfg.train_config(), val)
    except TrainingDiverged as exc:
        raise CliError("training", str(exc)) from None
    model.store.save(out / CHECKPOINT_FILE, {"run_config": cfg.to_dict(), "epochs_run": result.epochs_run})
    write_history_csv(out / METRICS_FILE, result.history)
    from .plotting import plot_history

    plot_history(result.history, out / CURVES_FILE)
    last = [r for r in result.history if r["epoch"] == result.epochs_run]
    for r in last:
        print(f"epoch {r['epoch']} {r['split']}: loss={r['loss']:.4f} ADE={r['ade']:.4f} FDE={r['fde']:.4f}")
    print(f"checkpoint: {out / CHECKPOINT_FILE}")


def _evaluate_predictions(records, preds, mode, select):
    rows = []
    for s, rec in enumerate(records):
        for agent in rec.targets(joint=True):
            if (s, agent) not in preds:
                raise CliError("parse", f"no prediction for sample {s}, agent {agent}")
            a, f = ade_fde(preds[(s, agent)], rec.scene.futures[agent], select)
            rows.append({"sample": s, "agent": agent, "ade": a, "fde": f})
    return rows


def cmd_eval(args):
    out = _out_dir(args, "eval")
    _, records = _load_samples(args.samples)
    if not records:
        raise CliError("usage", f"no samples in {args.samples}")
    mode = args.mode
    if args.predictions:
        rows = _evaluate_predictions(records, _read_predictions(args.predictions), mode, args.select)
    else:
        if not args.checkpoint:
            raise CliError("usage", "eval needs --checkpoint or --predictions")
        explicit = bool(args.config or args.set)
        cfg = _run_config(args) if explicit else None
        model, saved = _load_model(args.checkpoint, cfg, explicit)
        data = _prepare(records, model.cfg)
        res = evaluate(model, data, mode == "joint", saved.batch, saved.loss_config(), args.select)
        rows = [{"sample": r["sample"], "agent": r["agent"], "ade": r["ade"], "fde": r["fde"]} for r in res.rows]
    label = "joint" if mode == "joint" else "single"
    for r in rows:
        r["mode"] = label
    _write_csv(out / f"eval_{label}.csv", ["mode", "sample", "agent", "ade", "fde"], rows)
    ade = float(np.mean([r["ade"] for r in rows]))
    fde = float(np.mean([r["fde"] for r in rows]))
    summary = [{"mode": label, "targets": len(rows), "ade": ade, "fde": fde}]
    _write_csv(out / f"eval_{label}_summary.csv", ["mode", "targets", "ade", "fde"], summary)
    from .plotting import plot_errors

    plot_errors(rows, out / f"eval_{label}.png", f"{label} ({len(rows)} targets)")
    print(f"mode,targets,ade,fde\n{label},{len(rows)},{ade:.6f},{fde:.6f}")


def cmd_predict(args):
    out = _out_dir(args, "predictions")
    _, records = _load_samples(args.samples)
    explicit = bool(args.config or args.set)
    model, saved = _load_model(args.checkpoint, _run_config(args) if explicit else None, explicit)
    data = _prepare(records, model.cfg)
    rows = []
    for start in range(0, len(data), saved.batch):
        preds, fwd = model.predict(data[start : start + saved.batch], args.mode == "joint")
        for r in _prediction_rows(records[start : start + saved.batch], preds, fwd.frames, args.mode):
            r["sample"] += start
            rows.append(r)
    path = out / "predictions.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    print(f"{len(rows)} predictions -> {path}")


def cmd_render(args):
    from .plotting import render_scene

    _, records = _load_samples(args.samples)
    if not 0 <= args.index < len(records):
        raise CliError("usage", f"sample index {args.index} out of range (0..{len(records) - 1})")
    rec = records[args.index]
    agent = rec.ego if args.agent is None else args.agent
    modes = None
    if args.predictions:
        preds = _read_predictions(args.predictions)
        pred = preds.get((args.index, agent))
        modes = None if pred is None else pred.modes
    gt = rec.scene.futures.get(agent)
    out = Path(args.out or f"sample_{args.index}.svg")
    if out.suffix != ".svg":
        out = out / f"sample_{args.index}.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    render_scene(rec.scene, out, modes=modes, gt=gt, ego_id=agent)
    print(f"rendered {out}")


# -- parser -------------------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="starcast", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="flat JSON run configuration")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory (file for render)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("synth", help="write a synthetic recording or sample set")
    s.add_argument("--kind", choices=("recording", "samples"), default="samples")
    s.add_argument("--scenes", type=int, default=32)
    s.add_argument("--agents", type=int, default=3)
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--templates", default="straight,curve,intersection",
                   help=f"comma separated, from {','.join(TEMPLATES)}")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="window a recording into samples")
    s.add_argument("--tracks", required=True)
    s.add_argument("--map", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a model on a sample directory")
    s.add_argument("--samples", required=True)
    s.add_argument("--val", help="validation sample directory")
    s.add_argument("--mode", choices=("single", "joint"))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="ADE/FDE report")
    s.add_argument("--checkpoint")
    s.add_argument("--predictions", help="predictions.jsonl to score instead of a checkpoint")
    s.add_argument("--samples", required=True)
    s.add_argument("--mode", choices=("single", "joint"), default="single")
    s.add_argument("--select", choices=("min", "score"), default="min")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="write predictions.jsonl in global coordinates")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--samples", required=True)
    s.add_argument("--mode", choices=("single", "joint"), default="single")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("render", help="SVG of a sample with predicted modes")
    s.add_argument("--samples", required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--agent", type=int)
    s.add_argument("--predictions")
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except CliError as exc:
        return _fail(exc.category, str(exc))
    except ConfigError as exc:
        return _fail("config", str(exc))
    except (ParseError, FrameRateMismatch) as exc:
        return _fail("parse", str(exc))
    except CheckpointError as exc:
        return _fail("checkpoint", str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    return 0


def _fail(category, message):
    print(f"error[{category}]: {message}", file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
