"""Batch command-line front end.

Subcommands: ``synth`` (build a planted test scene), ``detect`` (run one
detector and export score maps, traces, ROC, and figures), ``train``
(fit the unfolded solver's stage scalars), ``eval`` (re-score an exported
map against a mask).

Option values resolve as: built-in defaults, then a TOML or JSON config
file (``--config``), then ``HSAD_*`` environment variables, then explicit
flags. Every run writes ``manifest.json`` with the fully resolved config;
re-running a manifest reproduces all numeric outputs bit-identically.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical abort.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import tomli

from . import admm, dictionary, evaluation, hsi_io, rx, unfolded
from .admm import AdmmConfig, NumericalAbort
from .evaluation import AnomalyScoreMap, DegenerateMaskError
from .hsi_io import DataFormatError, SyntheticSceneSpec
from .numerics import SingularSystemError

ENV_PREFIX = "HSAD_"


class UsageProblem(ValueError):
    """Bad argument combination or value; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _opt(name, type_, default, help_):
    return {"name": name, "type": type_, "default": default, "help": help_}


_COMMON_ADMM_OPTS = [
    _opt("atoms", int, 15, "dictionary atom count (k-means clusters)"),
    _opt("lambda1", float, 0.5, "atom ridge weight"),
    _opt("lambda2", float, 1.2e-5, "nuclear-norm weight"),
    _opt("lambda3", float, 1e-5, "column-sparsity weight"),
    _opt("mu", float, 1.0, "initial coupling weight"),
    _opt("rho", float, 1.5, "coupling growth factor"),
    _opt("mu-max", float, 1e6, "coupling weight cap"),
    _opt("eps-primal", float, None, "coupling residual tolerance (default 1e-6*||X||)"),
    _opt("eps-recon", float, None, "squared recon-change tolerance (default 1e-8*||X||^2)"),
    _opt("max-iters", int, 100, "sweep cap for the classical solver"),
    _opt("normalize-atoms", bool, True, "renormalize atoms each sweep (classical solver)"),
]

OPTIONS = {
    "synth": [
        _opt("out", str, None, "output directory"),
        _opt("bands", int, 30, "spectral band count"),
        _opt("rows", int, 40, "image rows"),
        _opt("cols", int, 40, "image columns"),
        _opt("background-rank", int, 3, "planted background subspace dimension"),
        _opt("n-anomalies", int, 5, "anomaly cluster count"),
        _opt("anomaly-fraction", float, 5 / 1600, "fraction of pixels that are anomalous"),
        _opt("noise-sigma", float, 0.01, "additive noise standard deviation"),
        _opt("seed", int, 7, "random seed"),
        _opt("interleave", str, "bsq", "raster interleave to write (bsq/bil/bip)"),
    ],
    "detect": [
        _opt("method", str, None, "detector: grx, lrx, lrr-admm, lrr-net+"),
        _opt("input", str, None, "ENVI header path"),
        _opt("raw", str, None, "ENVI raw path (default: header with .raw suffix)"),
        _opt("mask", str, None, "ground-truth mask path (CSV or PGM)"),
        _opt("out", str, None, "output directory"),
        _opt("seed", int, 0, "random seed (dictionary init)"),
        _opt("ridge", float, 1e-6, "covariance ridge scale (rx methods)"),
        _opt("w-in", int, 3, "inner (guard) window size, odd (lrx)"),
        _opt("w-out", int, 9, "outer window size, odd (lrx)"),
        _opt("stages", int, 10, "stage count for lrr-net+ without a checkpoint"),
        _opt("checkpoint", str, None, "model checkpoint JSON (lrr-net+)"),
        _opt("normalize-stages", bool, False, "per-stage atom normalization (lrr-net+)"),
        _opt("figures", bool, True, "render PNG figures next to the CSV outputs"),
        *_COMMON_ADMM_OPTS,
    ],
    "train": [
        _opt("input", str, None, "ENVI header path"),
        _opt("raw", str, None, "ENVI raw path (default: header with .raw suffix)"),
        _opt("out", str, None, "output directory"),
        _opt("stages", int, 10, "stage count"),
        _opt("budget", int, 400, "loss evaluation budget (at least 4*stages)"),
        _opt("seed", int, 0, "random seed (dictionary init and coordinate order)"),
        _opt("normalize-stages", bool, False, "per-stage atom normalization"),
        _opt("figures", bool, True, "render PNG figures next to the CSV outputs"),
        *_COMMON_ADMM_OPTS,
    ],
    "eval": [
        _opt("scores", str, None, "score map CSV (as written by detect)"),
        _opt("s-field", str, None, "unnormalized anomaly-field CSV for the PRE metric"),
        _opt("mask", str, None, "ground-truth mask path (CSV or PGM)"),
        _opt("out", str, None, "output directory"),
        _opt("figures", bool, True, "render PNG figures next to the CSV outputs"),
    ],
}

_REQUIRED = {
    "synth": ("out",),
    "detect": ("method", "input", "out"),
    "train": ("input", "out"),
    "eval": ("scores", "mask", "out"),
}


def build_parser() -> _Parser:
    parser = _Parser(prog="hsad", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command, opts in OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", help="TOML or JSON config file (flags win)")
        for opt in opts:
            flag = "--" + opt["name"]
            if opt["type"] is bool:
                p.add_argument(flag, action=argparse.BooleanOptionalAction,
                               default=None, help=opt["help"])
            else:
                p.add_argument(flag, type=opt["type"], default=None, help=opt["help"])
    return parser


def _load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"config file not found: {path}")
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text())
    else:
        doc = tomli.loads(path.read_text())
    # a manifest written by a previous run is directly reusable
    if isinstance(doc, dict) and set(doc) == {"command", "config"}:
        doc = doc["config"]
    if not isinstance(doc, dict):
        raise DataFormatError(f"config file must hold a table/object: {path}")
    return doc


def _coerce(opt, value, source):
    if opt["type"] is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            lowered = value.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
        raise UsageProblem(f"{source}: expected a boolean for {opt['name']!r}, got {value!r}")
    if value is None:
        return None
    try:
        return opt["type"](value)
    except (TypeError, ValueError) as exc:
        raise UsageProblem(f"{source}: bad value for {opt['name']!r}: {value!r}") from exc


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults < config file < environment < flags; unknown keys rejected."""
    opts = {o["name"].replace("-", "_"): o for o in OPTIONS[command]}
    resolved = {key: opt["default"] for key, opt in opts.items()}
    if args.config:
        doc = _load_config_file(args.config)
        for key, value in doc.items():
            norm = str(key).replace("-", "_")
            if norm not in opts:
                raise UsageProblem(f"unknown config key {key!r} for command {command!r}")
            resolved[norm] = _coerce(opts[norm], value, f"config {args.config}")
    for key, opt in opts.items():
        env_key = ENV_PREFIX + key.upper()
        if env_key in os.environ:
            resolved[key] = _coerce(opt, os.environ[env_key], f"environment {env_key}")
    for key, opt in opts.items():
        value = getattr(args, key)
        if value is not None:
            resolved[key] = value
    for key in _REQUIRED[command]:
        if resolved[key] is None:
            raise UsageProblem(f"missing required option --{key.replace('_', '-')}")
    return resolved


def _check_readable(cfg: dict, keys) -> None:
    for key in keys:
        value = cfg.get(key)
        if value is not None and not Path(value).is_file():
            raise DataFormatError(f"--{key.replace('_', '-')}: file not readable: {value}")


def _write_manifest(command: str, cfg: dict, out: Path) -> None:
    with open(out / "manifest.json", "w") as fh:
        json.dump({"command": command, "config": cfg}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _admm_config(cfg: dict) -> AdmmConfig:
    return AdmmConfig(
        lambda1=cfg["lambda1"],
        lambda2=cfg["lambda2"],
        lambda3=cfg["lambda3"],
        mu=cfg["mu"],
        rho=cfg["rho"],
        mu_max=cfg["mu_max"],
        eps_primal=cfg["eps_primal"],
        eps_recon=cfg["eps_recon"],
        max_iters=cfg["max_iters"],
        normalize_atoms=cfg["normalize_atoms"],
    )


def _load_input(cfg: dict):
    cube = hsi_io.load_envi(cfg["input"], cfg["raw"])
    mask = None
    if cfg.get("mask"):
        mask = hsi_io.load_mask(cfg["mask"], cube.rows, cube.cols)
    return cube, mask


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(cfg: dict) -> int:
    spec = SyntheticSceneSpec(
        bands=cfg["bands"],
        rows=cfg["rows"],
        cols=cfg["cols"],
        background_rank=cfg["background_rank"],
        n_anomalies=cfg["n_anomalies"],
        anomaly_fraction=cfg["anomaly_fraction"],
        noise_sigma=cfg["noise_sigma"],
        seed=cfg["seed"],
    )
    out = _out_dir(cfg)
    cube, mask = hsi_io.generate_synthetic_scene(spec)
    hsi_io.save_envi(cube, out / "scene.hdr", out / "scene.raw", interleave=cfg["interleave"])
    hsi_io.save_mask(mask, out / "mask.pgm")
    _write_manifest("synth", cfg, out)
    print(f"scene = {out / 'scene.hdr'}")
    print(f"mask = {out / 'mask.pgm'} ({mask.n_anomalies} anomalous pixels)")
    print(f"seed = {cfg['seed']}")
    return 0


def _detect_scores(cfg: dict, cube, x):
    """Dispatch a detector; returns (score map, s_field or None, trace or None)."""
    method = cfg["method"]
    if method == "grx":
        return rx.global_rx(x, ridge=cfg["ridge"]), None, None
    if method == "lrx":
        lrx_cfg = rx.LocalRxConfig(w_in=cfg["w_in"], w_out=cfg["w_out"], ridge=cfg["ridge"])
        return rx.local_rx(cube, lrx_cfg), None, None
    d0, l0 = dictionary.init_dictionary(x, k=cfg["atoms"], seed=cfg["seed"])
    if method == "lrr-admm":
        result = admm.admm_run(x, _admm_config(cfg), init=(d0, l0))
        state, trace = result.state, result.trace
        print(f"stop_reason = {result.stop_reason} after {result.n_iters} sweeps", file=sys.stderr)
    elif method == "lrr-net+":
        if cfg["checkpoint"]:
            model = unfolded.load_checkpoint(
                cfg["checkpoint"], normalize_each_stage=cfg["normalize_stages"]
            )
            d0, l0 = dictionary.init_dictionary(x, k=model.k_atoms, seed=cfg["seed"])
        else:
            model = unfolded.init_from_admm(cfg["stages"], k_atoms=cfg["atoms"], cfg=_admm_config(cfg))
            if cfg["normalize_stages"]:
                model = unfolded.UnfoldedModel(
                    stages=model.stages, k_atoms=model.k_atoms, normalize_each_stage=True
                )
        state, trace = unfolded.forward(model, x, (d0, l0))
    else:
        raise UsageProblem(f"unknown method {cfg['method']!r} (grx, lrx, lrr-admm, lrr-net+)")
    smap = admm.anomaly_scores(state, rows=x.rows, cols=x.cols)
    s_field = np.linalg.norm(state.s_anom, axis=0).reshape(x.rows, x.cols)
    return smap, s_field, (state, trace)


_METHOD_ALIASES = {"lrr_admm": "lrr-admm", "lrr_net_plus": "lrr-net+", "lrr-net-plus": "lrr-net+"}


def cmd_detect(cfg: dict) -> int:
    cfg["method"] = _METHOD_ALIASES.get(cfg["method"], cfg["method"])
    if cfg["method"] not in ("grx", "lrx", "lrr-admm", "lrr-net+"):
        raise UsageProblem(f"unknown method {cfg['method']!r} (grx, lrx, lrr-admm, lrr-net+)")
    _check_readable(cfg, ("input", "raw", "mask", "checkpoint"))
    out = _out_dir(cfg)
    cube, mask = _load_input(cfg)
    x = hsi_io.cube_to_matrix(cube)

    smap, s_field, solver_out = _detect_scores(cfg, cube, x)
    hsi_io.save_scores_csv(smap.scores, out / "scores.csv")
    hsi_io.save_scores_pgm(smap.scores, out / "scores.pgm")
    metrics = {}
    trace = None
    if solver_out is not None:
        state, trace = solver_out
        recon = admm.reconstruction(state)
        metrics["mse"] = evaluation.metric_mse(x.values, recon)
        hsi_io.save_scores_csv(s_field, out / "s_field.csv")
        if isinstance(trace[0] if trace else None, admm.IterationRecord):
            admm.write_trace_csv(trace, out / "trace.csv")
        elif trace:
            _write_stage_trace(trace, out / "trace.csv")
        if mask is not None:
            metrics["pre"] = evaluation.metric_pre(s_field, mask.labels.astype(float))

    curve = None
    if mask is not None:
        curve = evaluation.roc(smap, mask)
        evaluation.write_roc_csv(curve, out / "roc.csv")
        metrics["auc"] = curve.auc
        print(f"auc = {curve.auc!r}")
    else:
        print("no mask given; ROC step skipped", file=sys.stderr)
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest("detect", cfg, out)

    if cfg["figures"]:
        from . import report

        report.plot_score_map(smap.scores, out / "scores.png", mask=mask)
        if curve is not None:
            report.plot_roc(curve, out / "roc.png")
        if trace:
            report.plot_trace(trace, out / "trace.png")
    return 0


def _write_stage_trace(trace, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "loss", "primal_residual", "recon_error", "mu"])
        for rec in trace:
            writer.writerow(
                [rec.stage, repr(rec.loss), repr(rec.primal_residual),
                 repr(rec.recon_error), repr(rec.mu)]
            )


def cmd_train(cfg: dict) -> int:
    if cfg["stages"] < 1:
        raise UsageProblem(f"--stages must be at least 1, got {cfg['stages']}")
    if cfg["budget"] < 4 * cfg["stages"]:
        raise UsageProblem(
            f"--budget {cfg['budget']} is below 4*stages = {4 * cfg['stages']}"
        )
    _check_readable(cfg, ("input", "raw"))
    out = _out_dir(cfg)
    cube, _ = _load_input(cfg)
    x = hsi_io.cube_to_matrix(cube)
    d0, l0 = dictionary.init_dictionary(x, k=cfg["atoms"], seed=cfg["seed"])
    model = unfolded.init_from_admm(cfg["stages"], k_atoms=cfg["atoms"], cfg=_admm_config(cfg))
    if cfg["normalize_stages"]:
        model = unfolded.UnfoldedModel(
            stages=model.stages, k_atoms=model.k_atoms, normalize_each_stage=True
        )
    trained, history = unfolded.train(model, x, (d0, l0), budget=cfg["budget"], seed=cfg["seed"])
    unfolded.save_checkpoint(trained, out / "checkpoint.json")
    unfolded.write_loss_history_csv(history, out / "loss_history.csv")
    _write_manifest("train", cfg, out)
    print(f"initial_loss = {history[0]!r}")
    print(f"final_loss = {history[-1]!r}")
    if cfg["figures"]:
        from . import report

        report.plot_loss_history(history, out / "loss.png")
    return 0


def cmd_eval(cfg: dict) -> int:
    _check_readable(cfg, ("scores", "s_field", "mask"))
    out = _out_dir(cfg)
    scores = hsi_io.load_scores_csv(cfg["scores"])
    smap = AnomalyScoreMap(scores=scores)
    mask = hsi_io.load_mask(cfg["mask"], smap.rows, smap.cols)
    curve = evaluation.roc(smap, mask)
    evaluation.write_roc_csv(curve, out / "roc.csv")
    metrics = {"auc": curve.auc}
    if cfg["s_field"]:
        s_field = hsi_io.load_scores_csv(cfg["s_field"])
        metrics["pre"] = evaluation.metric_pre(s_field, mask.labels.astype(float))
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest("eval", cfg, out)
    print(f"auc = {curve.auc!r}")
    if cfg["figures"]:
        from . import report

        report.plot_roc(curve, out / "roc.png")
    return 0


_COMMANDS = {"synth": cmd_synth, "detect": cmd_detect, "train": cmd_train, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args.command, args)
        return _COMMANDS[args.command](cfg)
    except UsageProblem as exc:
        print(f"hsad {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalAbort, SingularSystemError, np.linalg.LinAlgError) as exc:
        print(f"hsad {args.command}: numerical abort: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, DegenerateMaskError, OSError, ValueError) as exc:
        print(f"hsad {args.command}: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
