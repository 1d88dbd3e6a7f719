"""Command line entry point: ``clever <subcommand> [options]``.

Exit status is 0 on success, 1 when a run fails, and 2 for usage or
configuration errors.  ``CLEVER_LOG`` selects the log level (error, info, debug).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, make_manifest, parse_config, write_manifest
from .data_io import SHAPES, SynthSpec, load_dataset, load_idx, load_ppm_dir, synth_shapes, train_test_split
from .errors import CleverError, ConfigError
from .evaluation import (
    DEFAULT_BINS,
    SOURCES,
    ProbeConfig,
    RobustnessReport,
    equivariance_diagnostics,
    linear_probe,
    robustness_eval,
    rotation_sensitivity_task,
    rotational_invariance_eval,
)
from .report import render_file
from .trainer import COLLAPSE_HEADER, TRAIN_LOG_HEADER, load_checkpoint, rows_to_csv, save_checkpoint, train
from .vision import SUITES

log = logging.getLogger("clever")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
DIAG_FAMILIES = ("rotation", "elastic", "jitter")
COLLAPSE_COLUMNS = ("epoch", "h_ir", "h_ef", "z_ir", "z_ef")
ABLATABLE = ("rho", "lam", "alpha", "beta", "K", "D", "hidden", "tau_s", "tau_t", "ema_momentum",
             "base_lr", "weight_decay", "epochs", "n_local")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def load_data(data: dict):
    kind = data["kind"]
    if kind == "synth":
        spec = SynthSpec(classes=tuple(data["classes"]) if data["classes"] else SHAPES,
                         samples_per_class=data["samples_per_class"], resolution=data["resolution"],
                         channels=data["channels"], palette=data["palette"],
                         noise_amplitude=data["noise_amplitude"], seed=data["seed"])
        return synth_shapes(spec)
    if kind == "idx":
        return load_idx(data["images"], data["labels"])
    if kind == "ppm":
        return load_ppm_dir(data["root"], data["resolution"])
    return load_dataset(data["path"])


def _split(cfg: RunConfig):
    ds = load_data(cfg.data)
    tr, te = train_test_split(ds, cfg.data.get("seed", 0), cfg.eval.test_fraction)
    log.info("data: %d train / %d test images, %d classes", len(tr), len(te), len(ds.class_names))
    return tr, te


def _load_config(args) -> tuple[RunConfig, dict]:
    if not args.config:
        raise UsageError("--config is required")
    return parse_config(args.config, args.seed)


def _manifest(args, cfg, base, artifacts, out_dir, extra=None):
    m = dict(base)
    m["command"] = args.command
    m["artifacts"] = dict(artifacts)
    if extra:
        m.update(extra)
    path = write_manifest(m, out_dir)
    log.info("manifest written to %s", path)
    return m


def _teacher(args):
    if not args.checkpoint:
        raise UsageError(f"{args.command} needs --checkpoint")
    state = load_checkpoint(args.checkpoint)
    return state.pair.teacher


def _sources(net):
    return [s for s in SOURCES if not (s == "ef" and net.cfg.d_ef == 0)]


def _probe_cfg(cfg: RunConfig, source: str) -> ProbeConfig:
    return dataclasses.replace(cfg.probe, source=source)


def _progress(state):
    if state.train_log and log.isEnabledFor(logging.DEBUG):
        r = state.train_log[-1]
        log.debug("step %d l_total %.4f l_cl %.4f l_orth %.4f", r["step"], r["l_total"], r["l_cl"], r["l_orth"])


def _collapse_rows(collapse_log):
    return [(r["epoch"], r["log10_h_ir"], r["log10_h_ef"], r["log10_z_ir"], r["log10_z_ef"]) for r in collapse_log]


def _train_run(cfg: RunConfig, images, out_dir, workers, resume=None):
    state = train(cfg.train, images, workers=workers, resume=resume, callback=_progress)
    save_checkpoint(state, os.path.join(out_dir, "checkpoint.clvr"))
    _write(os.path.join(out_dir, "train_log.csv"), rows_to_csv(TRAIN_LOG_HEADER, state.train_log))
    _write(os.path.join(out_dir, "collapse_log.csv"), rows_to_csv(COLLAPSE_HEADER, state.collapse_log))
    render_file(os.path.join(out_dir, "collapse_log.csv"), os.path.join(out_dir, "collapse_log.svg"),
                "line", "log10 mean |weight| per head")
    log.info("trained %d steps; checkpoint in %s", state.step, out_dir)
    return state


TRAIN_ARTIFACTS = {"checkpoint": "checkpoint.clvr", "train_log": "train_log.csv",
                   "collapse_log": "collapse_log.csv", "collapse_chart": "collapse_log.svg"}


# ---------------------------------------------------------------- subcommands


def cmd_pretrain(args):
    cfg, base = _load_config(args)
    _manifest(args, cfg, base, TRAIN_ARTIFACTS, args.out,
              {"resumed_from": args.checkpoint} if args.checkpoint else None)
    tr, _ = _split(cfg)
    resume = load_checkpoint(args.checkpoint) if args.checkpoint else None
    _train_run(cfg, tr.images, args.out, args.workers, resume)


def cmd_linear_probe(args):
    cfg, base = _load_config(args)
    _manifest(args, cfg, base, {"probe": "probe.csv"}, args.out, {"checkpoint": args.checkpoint})
    net = _teacher(args)
    tr, te = _split(cfg)
    rows = []
    for source in _sources(net):
        acc, _ = linear_probe(net, tr.images, tr.labels, te.images, te.labels, _probe_cfg(cfg, source))
        log.info("%s probe accuracy %.4f", source, acc)
        rows.append((source, acc))
    _write(os.path.join(args.out, "probe.csv"), _csv(("source", "accuracy"), rows))


def cmd_robustness(args):
    cfg, base = _load_config(args)
    suites = tuple(args.suite.split(",")) if args.suite else tuple(cfg.eval.suites)
    for s in suites:
        if s not in SUITES:
            raise ConfigError(f"--suite: unknown suite {s!r}; expected a subset of {list(SUITES)}")
    _manifest(args, cfg, base, {"table": "robustness.csv", "chart": "robustness.svg"}, args.out,
              {"checkpoint": args.checkpoint, "suites": list(suites)})
    net = _teacher(args)
    tr, te = _split(cfg)
    report = RobustnessReport(columns=suites)
    for source in _sources(net):
        robustness_eval(net, tr.images, tr.labels, te.images, te.labels, suites, _probe_cfg(cfg, source),
                        label=source, seed=cfg.seed, report=report)
    _write(os.path.join(args.out, "robustness.csv"), report.to_csv())
    render_file(os.path.join(args.out, "robustness.csv"), os.path.join(args.out, "robustness.svg"), "bar",
                "probe accuracy under perturbation")


def cmd_equiv_diag(args):
    cfg, base = _load_config(args)
    _manifest(args, cfg, base, {"table": "equivariance.csv"}, args.out, {"checkpoint": args.checkpoint})
    net = _teacher(args)
    tr, te = _split(cfg)
    rows = []
    for fam in DIAG_FAMILIES:
        bins = cfg.eval.n_bins if fam == cfg.eval.family else DEFAULT_BINS[fam]
        d = equivariance_diagnostics(net, te.images, fam, bins, cfg.seed, _probe_cfg(cfg, "joint"),
                                     cfg.eval.test_fraction)
        log.info("%s: residual ir %.4f ef %.4f; bin accuracy ir %.3f ef %.3f (chance %.3f)", fam,
                 d.residual_ir, d.residual_ef, d.predictability_ir, d.predictability_ef, d.chance)
        rows.append((fam, bins, d.residual_ir, d.residual_ef, d.predictability_ir, d.predictability_ef, d.chance))
    header = ("family", "bins", "residual_ir", "residual_ef", "predictability_ir", "predictability_ef", "chance")
    _write(os.path.join(args.out, "equivariance.csv"), _csv(header, rows))


def cmd_rotation_task(args):
    cfg, base = _load_config(args)
    _manifest(args, cfg, base, {"table": "rotation_task.csv"}, args.out, {"checkpoint": args.checkpoint})
    net = _teacher(args)
    tr, te = _split(cfg)
    rows = []
    for source in _sources(net):
        pc = _probe_cfg(cfg, source)
        rot4 = rotation_sensitivity_task(net, tr.images, te.images, pc, cfg.seed)
        inv = rotational_invariance_eval(net, tr.images, tr.labels, te.images, te.labels, pc, cfg.seed)
        log.info("%s: rot4 %.4f, invariance %s", source, rot4, inv)
        rows.append((source, rot4, *inv.values()))
    header = ("source", "rot4", "Orig", "Ro(90)", "Ro(180)")
    _write(os.path.join(args.out, "rotation_task.csv"), _csv(header, rows))


def _arms(cfg: RunConfig):
    lam = cfg.train.lam if cfg.train.lam > 0 else 0.001
    return [("lambda_0", dataclasses.replace(cfg.train, lam=0.0, beta=1.0)),
            (f"lambda_{lam:g}", dataclasses.replace(cfg.train, lam=lam, beta=1.0))]


def cmd_collapse_study(args):
    cfg, base = _load_config(args)
    arms = _arms(cfg)
    artifacts = {"summary": "collapse_study.csv", "chart": "collapse_study.svg"}
    for name, _ in arms:
        artifacts[name] = f"{name}/collapse.csv"
    _manifest(args, cfg, base, artifacts, args.out,
              {"arms": {name: {"lam": t.lam, "beta": t.beta} for name, t in arms}})
    tr, _ = _split(cfg)
    summary = []
    for name, tcfg in arms:
        log.info("collapse arm %s", name)
        arm_cfg = dataclasses.replace(cfg, train=tcfg)
        arm_dir = os.path.join(args.out, name)
        write_manifest(make_manifest(arm_cfg, command="collapse-study arm", artifacts=TRAIN_ARTIFACTS), arm_dir)
        state = _train_run(arm_cfg, tr.images, arm_dir, args.workers)
        rows = _collapse_rows(state.collapse_log)
        _write(os.path.join(arm_dir, "collapse.csv"), _csv(COLLAPSE_COLUMNS, rows))
        last = rows[-1]
        summary.append((name, tcfg.lam, last[0], last[1], last[2], last[1] - last[2]))
    header = ("arm", "lam", "epoch", "h_ir", "h_ef", "gap")
    _write(os.path.join(args.out, "collapse_study.csv"), _csv(header, summary))
    # one chart with the EF head trajectory of both arms
    epochs = [r[0] for r in _collapse_rows(state.collapse_log)]
    series = {}
    for name, _ in arms:
        with open(os.path.join(args.out, name, "collapse.csv"), encoding="utf-8") as fh:
            series[name] = [row["h_ef"] for row in csv.DictReader(fh)]
    rows = [(e, *(series[name][i] for name, _ in arms)) for i, e in enumerate(epochs)]
    _write(os.path.join(args.out, "collapse_h_ef.csv"), _csv(("epoch", *(f"h_ef_{n}" for n, _ in arms)), rows))
    render_file(os.path.join(args.out, "collapse_h_ef.csv"), os.path.join(args.out, "collapse_study.svg"),
                "line", "log10 mean |EF head weight|")


def _parse_grid(param: str, grid: str, cfg: RunConfig):
    if param not in ABLATABLE:
        raise ConfigError(f"--param must be one of {ABLATABLE}, got {param!r}")
    kind = type(getattr(cfg.train, param))
    values = []
    for tok in grid.split(","):
        try:
            values.append(kind(tok) if kind is float else int(tok))
        except ValueError:
            raise ConfigError(f"--grid: {tok!r} is not a valid {kind.__name__} for {param}") from None
    if not values:
        raise ConfigError("--grid is empty")
    return values


def cmd_ablate(args):
    cfg, base = _load_config(args)
    if not args.param or not args.grid:
        raise UsageError("ablate needs --param and --grid")
    values = _parse_grid(args.param, args.grid, cfg)
    runs = [(f"{args.param}_{v:g}" if isinstance(v, float) else f"{args.param}_{v}", v) for v in values]
    arm_cfgs = []
    for name, v in runs:  # validate every arm before any training
        arm_cfgs.append(dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **{args.param: v})))
    _manifest(args, cfg, base, {"summary": "ablation.csv", "chart": "ablation.svg",
                                **{name: f"{name}/manifest.json" for name, _ in runs}}, args.out,
              {"param": args.param, "grid": values})
    for (name, _), arm_cfg in zip(runs, arm_cfgs):
        write_manifest(make_manifest(arm_cfg, command=f"ablate {args.param}", artifacts=TRAIN_ARTIFACTS),
                       os.path.join(args.out, name))
    tr, te = _split(cfg)
    rows = []
    for (name, v), arm_cfg in zip(runs, arm_cfgs):
        log.info("ablation arm %s", name)
        state = _train_run(arm_cfg, tr.images, os.path.join(args.out, name), args.workers)
        net = state.pair.teacher
        rep = robustness_eval(net, tr.images, tr.labels, te.images, te.labels, ("Orig", "CJ+Ro"),
                              _probe_cfg(cfg, "joint"), seed=cfg.seed)
        cells = rep.rows[0][1]
        rows.append((v, cells["Orig"], cells["CJ+Ro"]))
    _write(os.path.join(args.out, "ablation.csv"), _csv((args.param, "Orig", "CJ+Ro"), rows))
    render_file(os.path.join(args.out, "ablation.csv"), os.path.join(args.out, "ablation.svg"), "line",
                f"joint probe accuracy versus {args.param}")


def cmd_report(args):
    if not args.csv:
        raise UsageError("report needs --csv")
    out = args.out if args.out.endswith(".svg") else os.path.join(args.out, "report.svg")
    with open(args.csv, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    manifest = {"command": "report", "artifacts": {"chart": os.path.basename(out)}, "input": args.csv,
                "input_sha256": digest, "kind": args.kind, "title": args.title, "tool_version": __version__}
    write_manifest(manifest, os.path.dirname(out) or ".", os.path.basename(out) + ".manifest.json")
    render_file(args.csv, out, args.kind, args.title)
    log.info("wrote %s", out)


COMMANDS = {
    "pretrain": (cmd_pretrain, "pre-train a student/teacher pair and save a checkpoint"),
    "linear-probe": (cmd_linear_probe, "linear probe accuracy for IR, EF and joint features"),
    "robustness": (cmd_robustness, "probe accuracy on perturbed test sets"),
    "equiv-diag": (cmd_equiv_diag, "invariance residuals and transform predictability per branch"),
    "rotation-task": (cmd_rotation_task, "four-way rotation prediction and rotated-test accuracy"),
    "collapse-study": (cmd_collapse_study, "train with and without head regularization; log head magnitudes"),
    "ablate": (cmd_ablate, "sweep one training hyperparameter"),
    "report": (cmd_report, "render a CSV table to an SVG chart"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clever", description=__doc__.splitlines()[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                                epilog="Log level: CLEVER_LOG=error|info|debug (default info).")
    p.add_argument("--version", action="version", version=f"clever {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, (_, helptext) in COMMANDS.items():
        sp = sub.add_parser(name, help=helptext, description=helptext,
                            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        if name == "report":
            sp.add_argument("--csv", required=True, help="input CSV: a header row, then a label column and numeric columns")
            sp.add_argument("--out", default="report.svg", help="output SVG path (or a directory)")
            sp.add_argument("--kind", choices=("line", "bar"), default="line", help="chart type")
            sp.add_argument("--title", default="", help="chart title")
            continue
        sp.add_argument("--config", required=True, help="TOML config, or a manifest.json from an earlier run")
        sp.add_argument("--seed", type=int, default=None, help="run seed; overrides the config's seed")
        sp.add_argument("--out", default=os.path.join("runs", name), help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="threads for view generation; results do not depend on it")
        sp.add_argument("--checkpoint", default=None,
                        help="checkpoint to evaluate (resume point for pretrain)")
        if name == "robustness":
            sp.add_argument("--suite", default=None, help="comma-separated perturbation suites; default: all")
        if name == "ablate":
            sp.add_argument("--param", default=None, help=f"training field to sweep, one of {', '.join(ABLATABLE)}")
            sp.add_argument("--grid", default=None, help="comma-separated values, e.g. 0.5,0.6,0.7,0.8,0.9,1.0")
    return p


def _setup_logging():
    level = os.environ.get("CLEVER_LOG", "info").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"CLEVER_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(LOG_LEVELS[level])
    log.propagate = False


def main(argv=None) -> int:
    parser = build_parser()
    try:
        _setup_logging()
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"clever: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse: --help / --version exit 0, usage errors exit 2
        return int(exc.code or 0)
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        print("clever: error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command][0](args)
    except (UsageError, ConfigError) as exc:
        print(f"clever: error: {exc}", file=sys.stderr)
        return 2
    except (CleverError, OSError) as exc:
        print(f"clever: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
