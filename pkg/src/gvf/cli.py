"""Command-line entry point wiring the pipeline stages together.

Every run writes ``manifest.json`` into ``--out`` next to its reports.
Exit codes: 0 success, 1 invalid input, 2 numerical failure, 64 unknown
subcommand.
"""

import argparse
import itertools
import logging
import os
import sys
import time

import numpy as np

from . import __version__, jsonio
from .complex.build import ThresholdConfig, build_complex
from .complex.events import read_jsonl, write_jsonl
from .complex.simplicial import SimplicialComplex
from .complex.topology import betti_numbers, select_plateau, sweep_thresholds
from .dec import Cochain
from .errors import ConvergenceError, GvfError, NumericalError, TrainingDiverged, ValidationError

log = logging.getLogger("gvf")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2, 64
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _load_config(path):
    if path is None:
        return {}
    try:
        cfg = jsonio.load(path)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    return cfg


def _load_json(path, what):
    try:
        return jsonio.load(path)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read {what} {path}: {exc}") from exc


def _read_events(path):
    try:
        return read_jsonl(path)
    except OSError as exc:
        raise ValidationError(f"cannot read events {path}: {exc}") from exc


def _load_complex(path):
    return SimplicialComplex.from_dict(_load_json(path, "complex"))


def flow_to_dict(K, F):
    """Edge flow keyed by vertex-id pairs so it can be re-attached to any equal complex."""
    ids = K.ids
    return {"edges": [[ids[a], ids[b]] for a, b in K.edges], "flow": F.to_dict()}


def flow_from_dict(d, K):
    """Align a stored edge flow with the canonical edges of ``K``."""
    try:
        F = Cochain.from_dict(d["flow"])
        pairs = [tuple(e) for e in d["edges"]]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed flow document: {exc}") from exc
    if len(pairs) != len(F):
        raise ValidationError("flow rows do not match its edge list")
    ids = K.ids
    rows = {}
    for r, (a, b) in enumerate(pairs):
        rows[(a, b)] = (r, 1.0)
        rows[(b, a)] = (r, -1.0)
    out = np.zeros((K.n_edges, F.channels))
    for e, (i, j) in enumerate(K.edges):
        key = (ids[i], ids[j])
        if key not in rows:
            raise ValidationError(f"flow has no value on edge {key}")
        r, sign = rows[key]
        out[e] = sign * F.values[r]
    if len(pairs) != K.n_edges:
        raise ValidationError(f"flow has {len(pairs)} edges, complex has {K.n_edges}")
    return Cochain(1, out)


# subcommands ------------------------------------------------------------


def cmd_simulate(args, cfg):
    from .synth import DEFAULT_THRESHOLDS, CohortConfig, generate

    cfg = dict(cfg)
    thresholds = ThresholdConfig.from_dict(cfg.pop("thresholds", DEFAULT_THRESHOLDS.to_dict()))
    if args.seed is not None:
        cfg["seed"] = args.seed
    cohort = CohortConfig.from_dict(cfg)
    stream, truth = generate(cohort, thresholds)
    write_jsonl(stream, os.path.join(args.out, "events.jsonl"))
    jsonio.dump(truth.to_dict(), os.path.join(args.out, "ground_truth.json"))
    K = truth.complex()
    jsonio.dump(flow_to_dict(K, truth.flow_cochain()), os.path.join(args.out, "flow.json"))
    return {"seed": cohort.seed, "outputs": ["events.jsonl", "ground_truth.json", "flow.json"]}


def cmd_build_complex(args, cfg):
    from .synth import DEFAULT_THRESHOLDS

    cfg = dict(cfg)
    t0 = float(cfg.pop("t0", args.t0))
    thresholds = ThresholdConfig.from_dict({**DEFAULT_THRESHOLDS.to_dict(), **cfg})
    stream = _read_events(args.events)
    K = build_complex(stream, t0, thresholds)
    summary = betti_numbers(K)
    jsonio.dump(K.to_dict(), os.path.join(args.out, "complex.json"))
    report = {
        "t0": t0,
        "thresholds": thresholds.to_dict(),
        "n_vertices": K.n_vertices,
        "n_edges": K.n_edges,
        "n_triangles": K.n_triangles,
        "topology": summary.to_dict(),
    }
    jsonio.dump(report, os.path.join(args.out, "topology.json"))
    return {"inputs": [args.events], "outputs": ["complex.json", "topology.json"]}


def _threshold_grid(cfg):
    if "grid" in cfg:
        return [ThresholdConfig.from_dict(g) for g in cfg["grid"]]
    try:
        axes = [[float(v) for v in cfg[k]] for k in ("tau_prox", "tau_sync", "tau_dwell")]
        window = float(cfg["window"])
    except (KeyError, TypeError) as exc:
        raise ValidationError("sweep config needs 'grid' or tau_prox/tau_sync/tau_dwell lists and window") from exc
    extra = {"sync_channel": cfg["sync_channel"]} if "sync_channel" in cfg else {}
    return [ThresholdConfig(p, s, d, window, **extra) for p, s, d in itertools.product(*axes)]


def cmd_sweep_thresholds(args, cfg):
    grid = _threshold_grid(cfg)
    t0 = float(cfg.get("t0", args.t0))
    stream = _read_events(args.events)
    results = sweep_thresholds(stream, grid, t0)
    choice = select_plateau(results)
    report = {
        "t0": t0,
        "sweep": [{"config": c.to_dict(), "topology": s.to_dict()} for c, s in results],
        "selected": choice.to_dict(),
    }
    jsonio.dump(report, os.path.join(args.out, "plateau.json"))
    return {"inputs": [args.events], "outputs": ["plateau.json"]}


def cmd_decompose(args, cfg):
    from .hhd import SolverConfig, decompose

    solver = SolverConfig(**{k: cfg[k] for k in ("tol", "max_iter") if k in cfg})
    K = _load_complex(args.complex)
    F = flow_from_dict(_load_json(args.flow, "flow"), K)
    d = decompose(K, F, solver)
    report = d.to_report(include_values=not cfg.get("summary_only", False))
    report["dominant_component"] = max(report["energy_fractions"], key=report["energy_fractions"].get) \
        if any(report["energy_fractions"].values()) else "none"
    report["solver"] = {"tol": solver.tol, "max_iter": solver.max_iter}
    jsonio.dump(report, os.path.join(args.out, "hhd.json"))
    return {"inputs": [args.complex, args.flow], "outputs": ["hhd.json"]}


def _score_config(cfg, model, channels):
    from .monitor import ScoreConfig

    if model is not None:
        sc = ScoreConfig.uniform(model.bundle, model.axes())
    else:
        sc = ScoreConfig.single(channels)
    if "weights" in cfg or "axes" in cfg:
        axes = [np.asarray(u, float) for u in cfg.get("axes", sc.axes)]
        sc = ScoreConfig(tuple(axes), tuple(cfg.get("weights", sc.weights)), sc.fiber_slices)
    return sc


def cmd_scores(args, cfg):
    from .hhd import SolverConfig, decompose
    from .model.network import GvfModel
    from .monitor import annotate

    K = _load_complex(args.complex)
    F = flow_from_dict(_load_json(args.flow, "flow"), K)
    model = GvfModel.from_dict(_load_json(args.checkpoint, "checkpoint")) if args.checkpoint else None
    sc = _score_config(cfg, model, F.channels)
    d = decompose(K, F, SolverConfig(**{k: cfg[k] for k in ("tol", "max_iter") if k in cfg}))
    report = annotate(K, F, d, sc)
    jsonio.dump(report, os.path.join(args.out, "scores.json"))
    inputs = [args.complex, args.flow] + ([args.checkpoint] if args.checkpoint else [])
    return {"inputs": inputs, "outputs": ["scores.json"]}


def cmd_shift_detect(args, cfg):
    from .monitor import spectral_shift

    K = _load_complex(args.complex)
    K_prev = _load_complex(args.previous)
    summary = spectral_shift(K, K_prev, cfg.get("threshold"))
    jsonio.dump(summary.to_dict(int(cfg.get("limit", 128))), os.path.join(args.out, "spectrum.json"))
    return {"inputs": [args.complex, args.previous], "outputs": ["spectrum.json"]}


def cmd_train(args, cfg):
    from .model.bundle import default_bundle
    from .model.network import GvfModel, flow_field, moe_forward
    from .model.whitening import whiten_fit
    from .synth import DEFAULT_THRESHOLDS, GroundTruth, training_windows
    from .training import LossConfig, accuracy, train, write_history_csv

    seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
    thresholds = ThresholdConfig.from_dict(cfg.get("thresholds", DEFAULT_THRESHOLDS.to_dict()))
    loss_cfg = LossConfig.from_dict(cfg.get("loss", {}))
    epochs = int(cfg.get("epochs", 200))
    bundle = default_bundle(int(cfg.get("fiber_dim", 2)))
    stream = _read_events(args.events)
    truth = GroundTruth.from_dict(_load_json(args.truth, "ground truth"))
    windows = training_windows(stream, truth, thresholds, bundle)
    if not windows:
        raise ValidationError("no nonempty windows in the event stream")
    calib = np.vstack([w.X[w.labeled] for w in windows])
    whitening = whiten_fit(calib, bundle)
    model = GvfModel.init(bundle, windows[0].E.shape[1], loss_cfg.num_classes, hidden=int(cfg.get("hidden", 32)),
                          seed=seed, whitening=whitening, confine=bool(cfg.get("confine", True)),
                          spectral_norm=bool(cfg.get("spectral_norm", True)))
    model, history = train(model, windows, loss_cfg, epochs=epochs, seed=seed)
    jsonio.dump(model.to_dict(), os.path.join(args.out, "checkpoint.json"))
    write_history_csv(history, os.path.join(args.out, "history.csv"))
    w0 = windows[0]
    r = moe_forward(w0.K, whitening.apply(w0.X), model, w0.M)
    F = flow_field(w0.K, r, w0.E, model)
    jsonio.dump(flow_to_dict(w0.K, F), os.path.join(args.out, "learned_flow.json"))
    jsonio.dump(w0.K.to_dict(), os.path.join(args.out, "learned_complex.json"))
    summary = {
        "epochs": epochs,
        "windows": len(windows),
        "train_accuracy": accuracy(model, windows),
        "final": history[-1] if history else {},
        "whitening": {"residual_delta": whitening.residual_delta, "regularized": whitening.regularized},
    }
    jsonio.dump(summary, os.path.join(args.out, "train_summary.json"))
    return {"seed": seed, "inputs": [args.events, args.truth],
            "outputs": ["checkpoint.json", "history.csv", "learned_flow.json", "learned_complex.json",
                        "train_summary.json"]}


COMMANDS = {
    "simulate": cmd_simulate,
    "build-complex": cmd_build_complex,
    "sweep-thresholds": cmd_sweep_thresholds,
    "decompose": cmd_decompose,
    "train": cmd_train,
    "scores": cmd_scores,
    "shift-detect": cmd_shift_detect,
}


def _parser():
    p = _Parser(prog="gvf", description="Risk-flow pipeline on multimodal simplicial complexes.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", default="json", choices=["json"])
    s = {name: sub.add_parser(name, parents=[common]) for name in COMMANDS}
    for name in ("build-complex", "sweep-thresholds", "train"):
        s[name].add_argument("--events", required=True)
    for name in ("build-complex", "sweep-thresholds"):
        s[name].add_argument("--t0", type=float, default=0.0)
    s["train"].add_argument("--truth", required=True, help="ground-truth JSON holding the labels")
    for name in ("decompose", "scores"):
        s[name].add_argument("--complex", required=True)
        s[name].add_argument("--flow", required=True)
    s["scores"].add_argument("--checkpoint")
    s["shift-detect"].add_argument("--complex", required=True)
    s["shift-detect"].add_argument("--previous", required=True)
    return p


def usage():
    return _parser().format_usage() + "commands: " + ", ".join(COMMANDS) + "\n"


def _setup_logging():
    level = os.environ.get("GVF_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise ValidationError(f"GVF_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] in ("-h", "--help"):
        sys.stdout.write(_parser().format_help())
        return EXIT_OK
    if not argv or argv[0] not in COMMANDS:
        sys.stderr.write(usage())
        return EXIT_USAGE
    start = time.perf_counter()
    try:
        _setup_logging()
        args = _parser().parse_args(argv)
        cfg = _load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        info = COMMANDS[args.command](args, cfg)
    except ConvergenceError as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL
    except TrainingDiverged as exc:
        log.error("training diverged: %s", exc)
        return EXIT_NUMERICAL
    except NumericalError as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL
    except (ValidationError, GvfError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except SystemExit as exc:  # --help inside a subcommand
        return int(exc.code or 0)
    manifest = {
        "command": args.command,
        "config": args.config,
        "inputs": info.get("inputs", []),
        "out": args.out,
        "outputs": info.get("outputs", []),
        "seed": info.get("seed", args.seed),
        "version": __version__,
        "wall_clock_seconds": time.perf_counter() - start,
    }
    jsonio.dump(manifest, os.path.join(args.out, "manifest.json"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
