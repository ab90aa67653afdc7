"""Command-line front end.

Usage::

    pendantss generate   --config CFG --out DIR [--seed N]
    pendantss solve      --config CFG --out DIR [--seed N]
    pendantss gridsearch --config CFG --out DIR [--seed N] [--jobs J]
    pendantss battery    --config CFG --out DIR [--seed N] [--jobs J]
    pendantss report     --out DIR [--artifacts DIR]

``CFG`` is a JSON file or ``preset:NAME`` for a bundled preset. Exit status is
0 on success, 1 for invalid configurations or parameters, 2 for I/O failures
and 3 when ``report`` finds a violated invariant.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__, io, plotting, spoq
from .filters import FilterSpec
from .metrics import evaluate
from .projections import BoxSet
from .signal_model import GenerationError
from .solver import (ProblemInstance, SolverConfig, center_shift_postprocess, descent_report,
                     solve, stationarity_residuals)
from .tuning import (METRIC_NAMES, EmptyGridError, aggregate, best_row, run_trial_battery,
                     tune_cutoff, tune_pair)

logger = logging.getLogger("pendantss")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3
TRACE_SLACK = 1e-9
SUMMARY_RTOL = 1e-12


class InvariantViolation(Exception):
    """An emitted artifact fails a validation check."""


# ---------------------------------------------------------------- helpers


def _problem(cfg: io.RunConfig, y, truth, spec) -> ProblemInstance:
    kernel_len = spec.kernel_len if spec is not None else (
        truth.kernel.size if truth is not None else 21)
    known = None
    if not cfg.solver.blind:
        if truth is None:
            raise io.ConfigError("non-blind solve needs a dataset with a known kernel")
        known = truth.kernel
    filt = cfg.filter
    if filt is None:
        choice = tune_cutoff(y, truth, cfg.spoq, cfg.solver, kernel_len, cfg.box,
                             cfg.transition_bins)
        filt = choice.filter
        logger.info("selected cutoff bin %d", filt.cutoff_bin)
    filt.check_length(len(y))
    return ProblemInstance(y, filt, cfg.spoq, cfg.box, kernel_len, known)


def _trace_rows(trace: Sequence[float], blind: bool):
    yield [0, 0, "init", trace[0]]
    per = 2 if blind else 1
    for j, v in enumerate(trace[1:]):
        block = "signal" if (j % per == 0) else "kernel"
        yield [j + 1, j // per + 1, block, v]


def _config_doc(cfg: io.RunConfig, filt: Optional[FilterSpec] = None) -> dict:
    d = cfg.to_dict()
    if filt is not None:
        d["filter"] = filt.to_dict()
    return d


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: io.RunConfig, out: Path, args) -> int:
    spec, truth, y = cfg.load_observation()
    if truth is None:
        raise io.ConfigError("generate needs a synthetic dataset specification")
    io.write_dataset(out / "dataset.json", spec, truth, y, cfg.noise_seed)
    io.write_table(out / "dataset.csv", ["index", "observation", "trend", "spikes", "peaks", "noise"],
                   zip(range(len(y)), y, truth.trend, truth.spikes, truth.peak_signal, truth.noise))
    logger.info("wrote %d samples with %d spikes", len(y), len(truth.support))
    return EXIT_OK


def cmd_solve(cfg: io.RunConfig, out: Path, args) -> int:
    spec, truth, y = cfg.load_observation()
    inst = _problem(cfg, y, truth, spec)
    res = solve(inst, cfg.solver)
    s_c, pi_c = center_shift_postprocess(res.s_hat, res.pi_hat)
    metrics = evaluate(truth, s_c, pi_c, res.t_hat) if truth is not None else None
    desc = descent_report(res, cfg.solver)
    r1, r2 = stationarity_residuals(res.s_hat, res.pi_hat, inst, cfg.solver.blind)
    extra = {
        "config": _config_doc(cfg, inst.filter),
        "s_centered": s_c,
        "pi_centered": pi_c,
        "s0": res.s0,
        "pi0": res.pi0,
        "descent": {k: desc[k] for k in ("lambda_low", "mu1", "mu2", "min_margin")},
        "stationarity": {"signal": r1, "kernel": r2},
        "metrics": metrics.to_dict() if metrics is not None else None,
    }
    io.write_json(out / "result.json", io.result_document(res, extra))
    io.write_table(out / "trace.csv", ["step", "iteration", "block", "objective"],
                   _trace_rows(res.objective_trace, cfg.solver.blind))
    io.write_table(out / "diagnostics.csv", io.DIAGNOSTIC_COLUMNS, io.diagnostic_rows(res))
    n = len(y)
    t_true = truth.trend if truth is not None else [None] * n
    s_true = truth.spikes if truth is not None else [None] * n
    io.write_table(out / "overlay_signal.csv",
                   ["index", "observation", "s_hat", "s_true", "t_hat", "t_true", "fit"],
                   zip(range(n), y, s_c, s_true, res.t_hat, t_true, res.peak_signal + res.t_hat))
    taps = np.arange(inst.kernel_len) - (inst.kernel_len - 1) // 2
    pi_true = truth.kernel if truth is not None else [None] * inst.kernel_len
    io.write_table(out / "overlay_kernel.csv", ["tap", "pi_hat", "pi_true"],
                   zip(taps, pi_c, pi_true))
    if metrics is not None:
        io.write_json(out / "metrics.json", metrics.to_dict())
        logger.info("SNR_s %.2f dB, SNR_t %.2f dB, SNR_pi %.2f dB",
                    metrics.snr_s, metrics.snr_t, metrics.snr_pi)
    logger.info("%s after %d iterations", res.stop_reason.value, res.iterations)
    return EXIT_OK


def cmd_gridsearch(cfg: io.RunConfig, out: Path, args) -> int:
    spec, truth, y = cfg.load_observation()
    if truth is None:
        raise io.ConfigError("grid search needs a dataset with known ground truth")
    kernel_len = truth.kernel.size
    rows: List[dict] = []
    per_pair = []
    for pq in cfg.grid.pq_pairs:
        tuned = tune_pair(y, truth, cfg.grid, pq, cfg.solver, kernel_len, cfg.box, cfg.filter,
                          cfg.transition_bins, args.jobs)
        rows.extend(tuned.rows)
        best_cfg = _config_doc(cfg, tuned.filter)
        best_cfg["spoq"] = tuned.best.to_dict()
        best_cfg.pop("grid", None)
        per_pair.append({"p": pq[0], "q": pq[1], "config": best_cfg,
                         "metrics": tuned.best_metrics,
                         "cutoff_scores": [[c.cutoff_bin, v] for c, v in tuned.cutoff.scores]})
    header = ["cutoff_bin", "transition_bins", "p", "q", "alpha", "beta", "eta", "lambda",
              "status", "iterations", "stop_reason", "objective", *METRIC_NAMES]
    io.write_dict_table(out / "grid.csv", rows, header)
    overall = max(per_pair, key=lambda d: d["metrics"]["weighted"])
    io.write_json(out / "best.json", {"best": overall, "per_pq": per_pair})
    io.write_json(out / "best_config.json", overall["config"])
    logger.info("best weighted score %.2f at %s", overall["metrics"]["weighted"],
                overall["config"]["spoq"])
    return EXIT_OK


def cmd_battery(cfg: io.RunConfig, out: Path, args) -> int:
    if cfg.dataset is None:
        raise io.ConfigError("battery needs a dataset specification")
    filt = cfg.filter
    if filt is None:
        _, truth, y = cfg.load_observation()
        filt = tune_cutoff(y, truth, cfg.spoq, cfg.solver, cfg.dataset.kernel_len, cfg.box,
                           cfg.transition_bins).filter
    bat = run_trial_battery(cfg.dataset, cfg.spoq, filt, cfg.solver, cfg.n_seeds,
                            cfg.first_seed, box=cfg.box, jobs=args.jobs)
    header = ["noise_seed", "status", *METRIC_NAMES, "iterations", "stop_reason", "monotone",
              "certificate_failures"]
    io.write_dict_table(out / "battery.csv", bat.rows, header)
    summary_header = ["noise_seed", "status"] + [f"{m}_{s}" for m in METRIC_NAMES
                                                 for s in ("mean", "std")]
    io.write_dict_table(out / "battery_summary.csv", bat.rows + [bat.summary_row()],
                        summary_header)
    io.write_json(out / "summary.json", {"config": _config_doc(cfg, filt), "n_ok": bat.n_ok,
                                         "n_failed": bat.n_failed, "summary": bat.summary})
    logger.info("battery: %d ok, %d failed, median SNR_s %.2f dB", bat.n_ok, bat.n_failed,
                bat.summary["snr_s"]["median"])
    return EXIT_OK


# ---------------------------------------------------------------- report


class Checks:
    def __init__(self):
        self.rows: List[list] = []

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.rows.append([name, bool(ok), detail])
        (logger.info if ok else logger.error)("%s: %s %s", name, "ok" if ok else "FAILED", detail)

    @property
    def failures(self) -> List[str]:
        return [r[0] for r in self.rows if not r[1]]


def _check_trace(checks: Checks, values: Sequence[float], label: str) -> None:
    vals = np.asarray(values, dtype=float)
    if vals.size == 0 or not np.all(np.isfinite(vals)):
        checks.add(f"finite_trace[{label}]", False, "trace empty or non-finite")
        return
    inc = np.diff(vals)
    bad = np.flatnonzero(inc > TRACE_SLACK)
    detail = "" if bad.size == 0 else f"step {bad[0] + 1} increases by {inc[bad[0]]!r}"
    checks.add(f"monotone_trace[{label}]", bad.size == 0, detail)


def _validate_result(checks: Checks, art: Path) -> Optional[dict]:
    doc = io.read_json(art / "result.json")
    box = BoxSet(**doc["config"]["box"])
    s = np.asarray(doc["s_hat"], dtype=float)
    pi = np.asarray(doc["pi_hat"], dtype=float)
    checks.add("signal_feasible", box.contains(s))
    checks.add("kernel_feasible", bool(np.all(pi >= 0) and abs(pi.sum() - 1) <= 1e-9),
               f"sum={pi.sum()!r}, min={pi.min()!r}")
    _check_trace(checks, doc["objective_trace"], "result.json")
    checks.add("trials_within_budget",
               all(t <= doc["config"]["solver"]["max_tr_trials"] for t in doc["tr_trials_per_iter"]))
    checks.add("stop_reason_valid", doc["stop_reason"] in ("tolerance", "max_iter"))
    if (art / "trace.csv").exists():
        trace = [r["objective"] for r in io.read_table(art / "trace.csv")]
        _check_trace(checks, trace, "trace.csv")
        checks.add("trace_matches_result", len(trace) == len(doc["objective_trace"]) and all(
            a == b for a, b in zip(trace, doc["objective_trace"])))
    if (art / "diagnostics.csv").exists():
        diag = io.read_table(art / "diagnostics.csv")
        for flag in ("certificate_ok", "s_feasible", "pi_feasible"):
            bad = [r["k"] for r in diag if r[flag] is not True]
            checks.add(f"{flag}_flags", not bad, f"iterations {bad[:5]}" if bad else "")
        checks.add("diagnostics_count", len(diag) == doc["iterations"])
    return doc


def _validate_battery(checks: Checks, art: Path) -> List[dict]:
    rows = io.read_table(art / "battery.csv")
    seeds = [r for r in rows if r["noise_seed"] != "summary"]
    for r in seeds:
        if r["status"] == "ok":
            m = evaluate_weighted(r)
            if not math.isclose(m, r["weighted"], rel_tol=SUMMARY_RTOL, abs_tol=SUMMARY_RTOL):
                checks.add("battery_weighted", False, f"seed {r['noise_seed']}")
                break
    else:
        checks.add("battery_weighted", True)
    checks.add("battery_monotone", all(r.get("monotone") is not False for r in seeds))
    checks.add("battery_certificates",
               all(not r.get("certificate_failures") for r in seeds if r["status"] == "ok"))
    sum_path = art / "battery_summary.csv"
    if sum_path.exists():
        srows = io.read_table(sum_path)
        summary = [r for r in srows if r["noise_seed"] == "summary"]
        checks.add("battery_summary_rows", len(srows) == len(seeds) + 1 and len(summary) == 1,
                   f"{len(srows)} rows for {len(seeds)} seeds")
        if summary:
            agg = aggregate(seeds)
            bad = []
            for name in METRIC_NAMES:
                for stat in ("mean", "std"):
                    want, got = agg[name][stat], summary[0].get(f"{name}_{stat}")
                    if got is None and math.isnan(want):
                        continue
                    if got is None or not math.isclose(want, got, rel_tol=SUMMARY_RTOL,
                                                       abs_tol=SUMMARY_RTOL):
                        bad.append(f"{name}_{stat}")
            checks.add("battery_summary_reproducible", not bad, ", ".join(bad))
    return seeds


def evaluate_weighted(row: dict) -> float:
    return 2 * row["snr_s"] + row["snr_pi"] + row["snr_t"]


def _validate_grid(checks: Checks, art: Path) -> None:
    rows = io.read_table(art / "grid.csv")
    best = io.read_json(art / "best.json")
    for entry in best["per_pq"]:
        sub = [r for r in rows if r["p"] == entry["p"] and r["q"] == entry["q"]]
        try:
            r = sub[best_row(sub)]
        except EmptyGridError:
            checks.add("grid_best_consistent", False, "no scored rows")
            return
        want = entry["config"]["spoq"]
        same = all(r[k] == want[k] for k in ("p", "q", "alpha", "beta", "eta", "lambda"))
        checks.add(f"grid_best_consistent[p={entry['p']},q={entry['q']}]", same)


def _fmt(mean, std=None) -> str:
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return "-"
    return f"{mean:.2f}" if std is None or math.isnan(std) else f"{mean:.2f} +/- {std:.2f}"


def cmd_report(out: Path, art: Path) -> int:
    if not art.is_dir():
        raise FileNotFoundError(f"artifact directory {art} does not exist")
    known = ["result.json", "battery.csv", "grid.csv", "dataset.json"]
    present = [n for n in known if (art / n).exists()]
    if not present:
        raise InvariantViolation(f"no recognized artifacts in {art}")
    checks = Checks()
    table: List[list] = []
    try:
        if (art / "dataset.json").exists():
            spec, truth, y = io.load_dataset(art / "dataset.json")
            checks.add("dataset_length", truth is None or len(truth.spikes) == len(y))
            plotting.plot_dataset(out / "dataset.png", y, truth)
        if (art / "result.json").exists():
            doc = _validate_result(checks, art)
            m = doc.get("metrics")
            if m:
                table.append(["solve", 1] + [_fmt(m[k]) for k in METRIC_NAMES])
            plotting.plot_trace(out / "trace.png", doc["objective_trace"])
            truth = None
            if (art / "overlay_signal.csv").exists():
                ov = io.read_table(art / "overlay_signal.csv")
                y = np.array([r["observation"] for r in ov])
            else:
                y = np.zeros(len(doc["s_hat"]))
            plotting.plot_solution(out / "solution.png", y, doc["s_centered"], doc["pi_centered"],
                                   doc["t_hat"])
        if (art / "battery.csv").exists():
            seeds = _validate_battery(checks, art)
            agg = aggregate(seeds)
            table.append(["battery", agg["snr_s"]["count"]]
                         + [_fmt(agg[k]["mean"], agg[k]["std"]) for k in METRIC_NAMES])
            plotting.plot_battery(out / "battery.png", seeds)
        if (art / "grid.csv").exists() and (art / "best.json").exists():
            _validate_grid(checks, art)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise InvariantViolation(f"malformed artifact: {exc!r}") from exc

    io.write_table(out / "report_checks.csv", ["check", "ok", "detail"], checks.rows)
    header = ["run", "n"] + [f"{m}_db" for m in METRIC_NAMES]
    io.write_table(out / "report.csv", header, table)
    lines = ["  ".join(f"{h:>18}" for h in header)]
    lines += ["  ".join(f"{str(c):>18}" for c in row) for row in table]
    io.atomic_write_text(out / "report.txt", "\n".join(lines) + "\n")
    if checks.failures:
        raise InvariantViolation("invariant violated: " + ", ".join(checks.failures))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "gridsearch": cmd_gridsearch,
            "battery": cmd_battery}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pendantss",
                                     description="Blind sparse deconvolution with trend removal.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "report",
                       help="JSON configuration file or preset:NAME")
        p.add_argument("--out", required=True, type=Path, help="existing output directory")
        p.add_argument("--seed", type=int, default=None, help="override the dataset seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for fan-out")
        p.add_argument("--log-level", default="WARNING",
                       choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        if name == "report":
            p.add_argument("--artifacts", type=Path, default=None,
                           help="directory to validate (default: --out)")
    sub.add_parser("presets", help="list bundled presets")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "presets":
        print("\n".join(io.list_presets()))
        return EXIT_OK
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    try:
        if args.jobs < 1:
            raise io.ConfigError("--jobs must be at least 1")
        if not args.out.is_dir():
            raise FileNotFoundError(f"output directory {args.out} does not exist")
        if args.command == "report":
            return cmd_report(args.out, args.artifacts or args.out)
        cfg = io.load_config(args.config).with_seed(args.seed)
        return COMMANDS[args.command](cfg, args.out, args)
    except InvariantViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except spoq.ParameterInvalid as exc:
        print(f"error: invalid SPOQ parameters: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (io.ConfigError, EmptyGridError, GenerationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
