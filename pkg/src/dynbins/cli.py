"""Command-line front end: ``dynbins run|sweep|audit|fit``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness, metrics, plots
from .groups import family_from_name
from .learner import DebugRow, Transcript, run

log = logging.getLogger("dynbins")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 bits: {text}")
    return v


def _overrides(cfg, args):
    if args.schedule:
        cfg = replace(cfg, schedule=args.schedule)
    if args.record:
        cfg = replace(cfg, record_level=args.record)
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    cfg, _ = harness.load_config(args.config)
    cfg = _overrides(cfg, args)
    if args.seed is not None:
        cfg = replace(cfg, learner_seed=args.seed, env_seed=args.seed + 1)
    out = Path(args.out)
    (out / "transcripts").mkdir(parents=True, exist_ok=True)
    family = family_from_name(cfg.family)
    debug: list[DebugRow] | None = [] if args.debug_experts else None
    tr = run(cfg, family, debug)
    rep = metrics.report(tr, family)

    summary = rep.to_dict()
    summary["config"] = cfg.to_dict()
    summary["ever_active_total"] = tr.ever_active()
    summary["max_depth_reached"] = tr.max_depth_reached()
    summary["experts_spawned"] = tr.experts_spawned
    _write_json(out / "report.json", summary)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(harness.CSV_COLUMNS[:-1])
        w.writerow(["T", cfg.T, 0, cfg.learner_seed, repr(rep.mcerr), repr(rep.calerr),
                    tr.ever_active(), tr.max_depth_reached(), ""])
    with open(out / "groups.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_id", "bias_sum"])
        for name, val in rep.per_group.items():
            w.writerow([name, repr(val)])
    tr.to_jsonl(out / "transcripts" / "run.jsonl")
    if debug is not None:
        with open(out / "experts_debug.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "active_experts", "max_omega", "phi_hat"])
            for row in debug:
                w.writerow([row.t, row.experts, repr(row.max_omega), repr(row.phi_hat)])
    if not args.no_plots:
        plots.run_curves(out, tr)
        plots.run_figure(out, tr)
    print(f"mcerr={rep.mcerr:.6g} calerr={rep.calerr:.6g} leaves_ever={tr.ever_active()} "
          f"depth={tr.max_depth_reached()}")
    return 0


def cmd_sweep(args) -> int:
    base, sweep = harness.load_config(args.config)
    if sweep is None:
        raise SystemExit("sweep needs a 'sweep' section in the config")
    base = _overrides(base, args)
    spec = harness.SweepSpec.from_dict(sweep, base)
    if args.seed is not None:
        spec = replace(spec, master_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keep = args.transcripts or base.record_level == "full"
    log.info("sweep over %s=%s, %d replicas", spec.axis, list(spec.values), spec.replicas)
    rep = harness.run_sweep(spec, jobs=args.jobs, keep_transcripts=keep)

    (out / "report.csv").write_text(rep.to_csv(timing=args.timing))
    _write_json(out / "report.json", rep.to_dict())
    if keep:
        tdir = out / "transcripts"
        tdir.mkdir(exist_ok=True)
        for (value, r), tr in rep.transcripts.items():
            tr.to_jsonl(tdir / f"{spec.axis}{value}_r{r:02d}.jsonl")
    plots.sweep_curves(out, rep)
    if not args.no_plots:
        plots.sweep_figure(out, rep)
    for metric, fit in rep.to_dict()["fits"].items():
        if fit is not None:
            print(f"{metric}: exponent={fit['exponent']:.3f} stderr={fit['stderr']:.3f}")
    return 0


def cmd_audit(args) -> int:
    tr = Transcript.from_jsonl(args.transcript)
    family = family_from_name(args.family or tr.family)
    inv = metrics.check_invariants(tr, args.tol)
    result = {"invariants": inv.checks, "details": inv.details}
    if tr.ledger is not None:
        audit = metrics.bias_audit(tr, family)
        result["bias_audit"] = {
            "worst_ratio": audit.worst_ratio,
            "worst": audit.worst,
            "blocks_checked": audit.blocks_checked,
        }
    else:
        result["bias_audit"] = None
        log.warning("transcript has no forecast ledger (record summary); bias audit skipped")
    json.dump(result, sys.stdout, indent=2)
    print()
    return 0 if inv.ok else 1


def cmd_fit(args) -> int:
    pts = harness.read_csv_points(args.csv, args.column)
    fit = harness.fit_scaling(pts)
    print(f"exponent={fit.exponent:.6g} intercept={fit.intercept:.6g} stderr={fit.stderr:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynbins", description="Dynamic-bin online multicalibration experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON config with 'run' (and 'sweep') sections")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=_u64, help="seed override (master seed for sweeps)")
        sp.add_argument("--schedule", choices=["dyadic", "full"])
        sp.add_argument("--record", choices=["summary", "full"])
        sp.add_argument("--no-plots", action="store_true", help="skip matplotlib figures")

    sp = sub.add_parser("run", help="single run")
    common(sp)
    sp.add_argument("--debug-experts", action="store_true",
                    help="write per-round active expert count, max weight and phi_hat")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="replicated sweep over T, J or m")
    common(sp)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--timing", action="store_true", help="fill runtime_ms (breaks byte determinism)")
    sp.add_argument("--transcripts", action="store_true", help="write one JSONL transcript per run")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("audit", help="bias audit and invariant checks on a stored transcript")
    sp.add_argument("--transcript", required=True)
    sp.add_argument("--family", help="group family name (defaults to the transcript's)")
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("fit", help="log-log scaling fit on a report CSV")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--column", default="calerr")
    sp.set_defaults(func=cmd_fit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, RuntimeError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
