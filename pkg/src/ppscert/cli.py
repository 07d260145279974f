"""Command-line front end.

Exit codes: 0 PASS (or success), 1 FAIL, 2 configuration error,
3 estimator error, 4 ledger contains a term that cannot back a certificate.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from ppscert import canonical, streams
from ppscert.config import RunConfig, schema
from ppscert.core import BoundedTerm, ErrorLedger, Method, Verdict, assemble_certificate
from ppscert.estimators import run_estimator
from ppscert.errors import ConfigError, NonCertifiableError, PPSError, UnsupportedOracleError
from ppscert.gaps import CERTIFIED_METHODS, GapMethod, GapReport, gap_terms, zero_gap
from ppscert.region import conditional_tail_estimate, outside_mass
from ppscert.testbeds import truth_oracle

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_ESTIMATOR, EXIT_NONCERT = 0, 1, 2, 3, 4
OUT_ENV = "PPSCERT_OUT"
DEFAULT_OUT = "ppscert_out"
TRACE_COLUMNS = ("stage", "estimate", "bound", "ess", "acceptance", "threshold")
SWEEP_COLUMNS = ("value", "point", "upper_bound", "width", "confidence", "n_samples", "err_pi", "err_phi", "total")


# -- formatting -----------------------------------------------------------------------


def short_float(x: float) -> str:
    """Four significant digits with a bare exponent: ``1.000e-3``; exact zero prints ``0``."""
    if x == 0:
        return "0"
    mant, exp = f"{x:.3e}".split("e")
    return f"{mant}e{int(exp)}"


def _cell(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns])
    path.write_text(buf.getvalue())


def _seeds(cfg: RunConfig) -> dict:
    return {
        "seed": cfg.seed,
        "chunk_size": streams.CHUNK_SIZE,
        "streams": {
            "main": streams.STREAM_MAIN,
            "proposal": streams.STREAM_PROPOSAL,
            "pilot": streams.STREAM_PILOT,
            "mass": streams.STREAM_MASS,
            "replication": streams.STREAM_REPLICATION,
        },
    }


def _envelope(command: str, cfg: RunConfig) -> dict:
    return {"command": command, "config": cfg.document(), "config_digest": cfg.digest, "seeds": _seeds(cfg)}


def _write(out: Path, name: str, doc: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(canonical.dumps(doc))
    return path


# -- pipeline pieces ------------------------------------------------------------------


def run_estimate(cfg: RunConfig, workers: int = 1, law: Optional[str] = None):
    """``(bed, region, estimate)`` for the configured law, conditioned on the region if any."""
    bed = cfg.bed()
    ecfg = cfg.estimator_config()
    region = cfg.region(bed)
    dist = cfg.estimation_law(bed, law)
    proposal = cfg.proposal(bed)
    f = bed.outcome()
    if region.is_empty:
        est = run_estimator(cfg.method, dist, f, ecfg, proposal=proposal, workers=workers)
    else:
        est = conditional_tail_estimate(dist, region, f, ecfg, cfg.method, bed=bed, proposal=proposal,
                                        workers=workers)
    return bed, region, est


def run_gaps(cfg: RunConfig, bed, region, workers: int = 1) -> tuple[GapReport, GapReport]:
    block = cfg.gap_block
    if block is None or not cfg.surrogate_knob:
        return zero_gap("pi"), zero_gap("phi")
    cfg.check_surrogate(bed)
    return gap_terms(bed, cfg.surrogate_knob, block["method"], region, cfg.gap_config(), bed.outcome(),
                     workers=workers)


def certify(cfg: RunConfig, workers: int = 1):
    """Verify the region, bound the tail, bound both gaps and assemble the certificate."""
    if cfg.theta is None:
        raise ConfigError("certify needs 'theta'")
    if cfg.gap_block is not None and GapMethod(cfg.gap_block["method"]) not in CERTIFIED_METHODS:
        raise NonCertifiableError(f"gap method {cfg.gap_block['method']} carries no guarantee")
    if Method(cfg.method) is Method.GEV:
        raise NonCertifiableError("the GEV tail bound is a bootstrap approximation")
    bed, region, est = run_estimate(cfg, workers, law="surrogate")
    err_pi, err_phi = run_gaps(cfg, bed, region, workers)
    ecfg = cfg.estimator_config()
    ledger = ErrorLedger(
        empirical=est,
        err_E=BoundedTerm(est.width, est.confidence, f"{est.method.value}:{ecfg.bound}"),
        err_phi=err_phi.to_term(),
        err_pi=err_pi.to_term(),
    )
    region_report = {"region": region.to_document(), "outside_mass": dict(est.diagnostics).get("outside_mass")}
    provenance = {
        "testbed": bed.bed_id,
        "config": cfg.document(),
        "config_digest": cfg.digest,
        "seeds": _seeds(cfg),
        "gap_reports": {"pi": err_pi.to_document(), "phi": err_phi.to_document()},
    }
    return assemble_certificate(ledger, cfg.theta, region_report=region_report, provenance=provenance), est


# -- commands ---------------------------------------------------------------------------


def cmd_truth(cfg: RunConfig, out: Path, workers: int) -> int:
    bed = cfg.bed()
    try:
        value = truth_oracle(bed, bed.distribution())
    except UnsupportedOracleError as exc:
        raise ConfigError(str(exc)) from exc
    print(short_float(value))
    print(f"numerical error: {bed.truth_error()}")
    return EXIT_PASS


def cmd_estimate(cfg: RunConfig, out: Path, workers: int) -> int:
    _, region, est = run_estimate(cfg, workers)
    doc = _envelope("estimate", cfg)
    doc["estimate"] = est.to_document()
    doc["region"] = region.to_document()
    path = _write(out, "estimate.json", doc)
    write_csv(out / "estimate.csv", TRACE_COLUMNS, list(est.diagnostics.get("trace", [])))
    print(f"{est.method.value} point={short_float(est.point)} upper={short_float(est.upper_bound)} "
          f"confidence={est.confidence:g} n={est.n_samples}")
    print(f"wrote {path}")
    return EXIT_PASS


def cmd_certify(cfg: RunConfig, out: Path, workers: int) -> int:
    cert, est = certify(cfg, workers)
    path = _write(out, "certificate.json", cert.to_document())
    write_csv(out / "certify.csv", TRACE_COLUMNS, list(est.diagnostics.get("trace", [])))
    print(f"{cert.verdict.value} total={short_float(cert.total)} theta={short_float(cert.theta)} "
          f"joint_confidence={cert.joint_confidence:.6g}")
    print(f"wrote {path}")
    return EXIT_PASS if cert.verdict is Verdict.PASS else EXIT_FAIL


def cmd_region(cfg: RunConfig, out: Path, workers: int) -> int:
    bed = cfg.bed()
    region = cfg.region(bed)
    mass = outside_mass(region, bed.distribution(), bed, seed=cfg.seed, workers=workers)
    doc = _envelope("region", cfg)
    doc["region"] = region.to_document()
    doc["outside_mass"] = mass.to_document()
    path = _write(out, "region.json", doc)
    size = len(region.cells) if region.kind == "cells" else len(region.boxes) if region.kind == "boxes" else 0
    print(f"region kind={region.kind} pieces={size} outside_mass={short_float(mass.value)} "
          f"(upper {short_float(mass.upper)}, {mass.method})")
    print(f"wrote {path}")
    return EXIT_PASS


def cmd_gap(cfg: RunConfig, out: Path, workers: int) -> int:
    if cfg.gap_block is None:
        raise ConfigError("gap needs a 'gap' block")
    bed = cfg.bed()
    region = cfg.region(bed)
    err_pi, err_phi = run_gaps(cfg, bed, region, workers)
    doc = _envelope("gap", cfg)
    doc["gaps"] = {"pi": err_pi.to_document(), "phi": err_phi.to_document()}
    path = _write(out, "gap.json", doc)
    for g in (err_pi, err_phi):
        tag = "certified" if g.certified else "NOT certified"
        print(f"err_{g.term} bound={short_float(g.bound)} confidence={g.confidence:g} {g.method.value} ({tag})")
    print(f"wrote {path}")
    return EXIT_PASS


def cmd_sweep(cfg: RunConfig, out: Path, workers: int, axis: Optional[str] = None,
              values: Optional[Sequence[float]] = None) -> int:
    block = cfg.doc.get("sweep") or {}
    axis = axis or block.get("axis")
    values = list(values) if values is not None else list(block.get("values", []))
    if not axis or not values:
        raise ConfigError("sweep needs an axis and values (config 'sweep' block or --axis/--values)")
    rows = []
    for v in values:
        point_cfg = cfg.with_value(axis, v)
        bed, region, est = run_estimate(point_cfg, workers)
        row = {"value": float(v), "point": est.point, "upper_bound": est.upper_bound, "width": est.width,
               "confidence": est.confidence, "n_samples": est.n_samples}
        if point_cfg.gap_block is not None:
            err_pi, err_phi = run_gaps(point_cfg, bed, region, workers)
            row.update(err_pi=err_pi.bound, err_phi=err_phi.bound,
                       total=est.upper_bound + err_pi.bound + err_phi.bound)
        rows.append(row)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    write_csv(path, SWEEP_COLUMNS, rows)
    print(f"swept {axis} over {len(rows)} points")
    print(f"wrote {path}")
    return EXIT_PASS


def cmd_schema(cfg, out, workers) -> int:
    print(json.dumps(schema(), indent=2, sort_keys=True))
    return EXIT_PASS


COMMANDS = {
    "truth": cmd_truth,
    "estimate": cmd_estimate,
    "certify": cmd_certify,
    "sweep": cmd_sweep,
    "region": cmd_region,
    "gap": cmd_gap,
    "schema": cmd_schema,
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("workers must be >= 1")
    return v


def _values(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--values must be comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppscert", description="Probabilistic safety certification on analyzable testbeds.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "schema":
            continue
        sp.add_argument("--config", required=True, help="YAML or JSON run configuration")
        sp.add_argument("--out", help=f"output directory (default: config output_dir, ${OUT_ENV}, ./{DEFAULT_OUT})")
        sp.add_argument("--workers", type=_positive, default=1, help="parallel chunk workers; output does not depend on it")
        sp.add_argument("--seed-override", type=_u64, help="replace the config seed (embedded in every report)")
        if name == "sweep":
            sp.add_argument("--axis", help="dotted config path, e.g. estimator.n or gap.surrogate.slip")
            sp.add_argument("--values", type=_values, help="comma-separated axis values")
    return p


def output_dir(flag: Optional[str], cfg: RunConfig) -> Path:
    return Path(flag or cfg.doc.get("output_dir") or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    if args.command == "schema":
        return cmd_schema(None, None, 1)
    try:
        cfg = RunConfig.from_path(args.config)
        if args.seed_override is not None:
            cfg = cfg.with_seed(args.seed_override)
        out = output_dir(args.out, cfg)
        fn = COMMANDS[args.command]
        if args.command == "sweep":
            return fn(cfg, out, args.workers, args.axis, args.values)
        return fn(cfg, out, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonCertifiableError as exc:
        print(f"refusing to certify: {exc}", file=sys.stderr)
        return EXIT_NONCERT
    except PPSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR


if __name__ == "__main__":
    sys.exit(main())
