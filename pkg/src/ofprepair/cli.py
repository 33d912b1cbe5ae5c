"""Command-line front end: detect, classify, repair, eval, run-all.

Inputs are ``.fpdsl`` files or the builtin corpus (``--corpus``). Every
command writes one JSON report (schema ``ofp-report/1``) to ``--out`` or
stdout. Exit codes: 0 ok, 1 a gate failed (``--ceiling``), 2 usage or IO
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import __version__, oracle
from .corpus import CorpusEntry, builtin_corpus
from .detect import (
    THETA_ATOMIC,
    THETA_FUNC,
    ClassificationInconclusive,
    Label,
    atomic_conditions,
    classify,
    search_error_inputs,
)
from .expr import DSLError, FunctionDef, eval_working, parse_file
from .measure import REL_METRICS, Region, improvement_orders, measure, reports_to_csv
from .repair import DEGRADED, RepairError, TaylorPatch, emit_patch_source, plan_repair

log = logging.getLogger("ofprepair")

SCHEMA = "ofp-report/1"
COMMANDS = ("detect", "classify", "repair", "eval", "run-all")
SEED_ENV = "OFP_SEED"
DEFAULT_RADIUS = 0.01


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = "run-all"
    inputs: list[str] = field(default_factory=list)
    corpus: bool = False
    theta_atomic: float = THETA_ATOMIC
    theta_func: float = THETA_FUNC
    radius: float | None = None  # None: the corpus region radius, else DEFAULT_RADIUS
    samples: int = 1000
    precision_bits: int = oracle.DEFAULT_PRECISION
    seed: int = 0
    budget: int = 2000
    jobs: int = 1
    max_points: int = 3
    points: list[list[float]] = field(default_factory=list)
    centers: dict[str, float] = field(default_factory=dict)
    force: bool = False
    ceiling: float | None = None
    out: str | None = None
    csv: str | None = None
    patch_dir: str | None = None

    def validate(self) -> "RunConfig":
        for name in ("theta_atomic", "theta_func", "radius"):
            v = getattr(self, name)
            if v is None and name == "radius":
                continue
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise UsageError(f"{name.replace('_', '-')} must be a positive number, got {v!r}")
        for name in ("samples", "budget", "jobs", "max_points"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v > 0):
                raise UsageError(f"{name.replace('_', '-')} must be a positive integer, got {v!r}")
        if self.precision_bits < 128:
            raise UsageError("precision-bits must be at least 128")
        if self.ceiling is not None and not self.ceiling > 0:
            raise UsageError("ceiling must be positive")
        if not -(2**63) <= self.seed < 2**64:
            raise UsageError("seed must fit in 64 bits")
        if not self.corpus and not self.inputs:
            raise UsageError("no input: give .fpdsl files or --corpus")
        return self

    @property
    def rng_seed(self) -> int:
        return self.seed % 2**64

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("out", "csv", "patch_dir"):
            d.pop(k)
        return d


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def _parse_point(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad point {text!r}; expected comma-separated numbers") from None


def _parse_center(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    try:
        if not sep:
            raise ValueError
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad center {text!r}; expected NAME=VALUE") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ofprepair",
        description="Find floating-point errors that can be repaired in working precision and patch them.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("inputs", nargs="*", metavar="FILE", help=".fpdsl files to process")
    common.add_argument("--corpus", action="store_true", default=None, help="use the builtin corpus")
    common.add_argument("--config", metavar="JSON", help="JSON config file; flags take precedence")
    common.add_argument("--theta-atomic", type=float, help="atomic condition threshold (default 1e5)")
    common.add_argument("--theta-func", type=float, help="function condition threshold (default 1e5)")
    common.add_argument("--radius", type=float, help="patch validity radius (default 0.01)")
    common.add_argument("--samples", type=int, help="samples per area in eval (default 1000)")
    common.add_argument("--precision-bits", type=int, help="oracle precision (default 256)")
    common.add_argument("--seed", type=int, help=f"RNG seed (default ${SEED_ENV} or 0)")
    common.add_argument("--budget", type=int, help="detection samples per function (default 2000)")
    common.add_argument("-j", "--jobs", type=int, help="worker threads (default 1)")
    common.add_argument("--max-points", type=int, help="flagged points kept per function (default 3)")
    common.add_argument(
        "--point", dest="points", action="append", type=_parse_point, metavar="X[,Y...]",
        help="analyse this input instead of searching; repeatable",
    )
    common.add_argument(
        "--center", dest="centers", action="append", type=_parse_center, metavar="NAME=VALUE",
        help="expansion center for a parameter; repeatable",
    )
    common.add_argument("--force", action="store_true", default=None, help="repair regardless of the label")
    common.add_argument("--ceiling", type=float, help="fail (exit 1) if a patched relative metric exceeds this")
    common.add_argument("-o", "--out", help="write the JSON report here instead of stdout")
    common.add_argument("--csv", help="write eval metrics as CSV")
    common.add_argument("--patch-dir", help="write <name>_patched.fpdsl files here")
    common.add_argument("-v", "--verbose", action="count", default=0)

    helps = {
        "detect": "search for inputs with large atomic condition numbers",
        "classify": "label flagged inputs by their function condition numbers",
        "repair": "synthesize Taylor patches for repairable inputs",
        "eval": "measure naive and patched accuracy against the oracle",
        "run-all": "detect, classify, repair and eval in one report",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def load_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    """Defaults, then ``$OFP_SEED``, then the config file, then flags."""
    values: dict[str, Any] = {}
    if environ.get(SEED_ENV):
        try:
            values["seed"] = int(environ[SEED_ENV], 0)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}") from None
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        for key, v in data.items():
            name = key.replace("-", "_")
            if name not in _FIELDS or name == "command":
                raise UsageError(f"unknown config key {key!r}")
            values[name] = v
    for name in _FIELDS - {"command", "inputs", "points", "centers"}:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if args.inputs:
        values["inputs"] = list(args.inputs)
    if args.points:
        values["points"] = args.points
    if args.centers:
        values["centers"] = dict(values.get("centers", {}), **dict(args.centers))
    values["command"] = args.command
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    for name in ("theta_atomic", "theta_func", "radius"):
        v = getattr(cfg, name)
        if isinstance(v, int) and not isinstance(v, bool):
            setattr(cfg, name, float(v))
    return cfg.validate()


# -- pipeline -----------------------------------------------------------------


@dataclass
class Job:
    """One function plus whatever the corpus knows about it."""

    function: FunctionDef
    source: str
    entry: CorpusEntry | None = None


def load_jobs(cfg: RunConfig) -> list[Job]:
    jobs: list[Job] = []
    if cfg.corpus:
        jobs.extend(Job(e.function, e.kind, e) for e in builtin_corpus())
    for path in cfg.inputs:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None
        try:
            defs = parse_file(text)
        except DSLError as exc:
            raise UsageError(f"{path}: {exc}") from None
        jobs.extend(Job(f, path) for f in defs)
    return jobs


def _profile(f: FunctionDef, point) -> list[dict]:
    _, trace = eval_working(f, point)
    return [
        {"node": r.node_id, "op": r.op, "conditions": list(r.conditions)}
        for r in atomic_conditions(trace)
    ]


def _detect(job: Job, cfg: RunConfig) -> dict:
    f = job.function
    box = job.entry.search_box if job.entry else None
    findings = search_error_inputs(
        f, budget=cfg.budget, seed=cfg.rng_seed, box=box,
        theta_atomic=cfg.theta_atomic, n_jobs=cfg.jobs,
    )[: cfg.max_points]
    return {
        "function": f.name,
        "source": job.source,
        "points": [dict(x.to_dict(), profile=_profile(f, x.point)) for x in findings],
    }


def _points(job: Job, cfg: RunConfig, detected: dict | None) -> list[tuple[float, ...]]:
    f = job.function
    if cfg.points:
        pts = [tuple(p) for p in cfg.points if len(p) == f.arity]
        if not pts:
            log.warning("%s: no --point with %d coordinate(s); skipped", f.name, f.arity)
        return pts
    if job.entry is not None:
        return [job.entry.peak]
    if detected is None:
        detected = _detect(job, cfg)
    return [tuple(p["point"]) for p in detected["points"]]


def _classify(job: Job, cfg: RunConfig, points) -> list[dict]:
    out = []
    for p in points:
        try:
            c = classify(job.function, p, cfg.theta_atomic, cfg.theta_func)
        except ClassificationInconclusive as exc:
            out.append({"point": list(p), "label": "Inconclusive", "evidence": str(exc)})
            continue
        d = c.to_dict()
        if job.entry is not None:
            d["expected"] = job.entry.expected.value
        out.append(d)
    return out


def _centers(job: Job, cfg: RunConfig) -> dict[int, float]:
    f = job.function
    centers: dict[int, float] = {}
    if job.entry is not None and not cfg.centers:
        centers[job.entry.region.var] = job.entry.region.midpoint
    for name, v in cfg.centers.items():
        if name in f.param_names:
            centers[f.param_names.index(name)] = v
    return centers


def _repair(job: Job, cfg: RunConfig, classified: list[dict]) -> tuple[list[tuple[TaylorPatch, dict]], list[dict], list[dict]]:
    f = job.function
    patches, failures, skipped = [], [], []
    radius = cfg.radius
    if radius is None:
        radius = job.entry.region.radius if job.entry is not None else DEFAULT_RADIUS
    for c in classified:
        point = tuple(c["point"])
        if c["label"] != Label.ORIGINAL_PRECISION_REPAIRABLE.value and not cfg.force:
            skipped.append({"function": f.name, "point": list(point), "label": c["label"]})
            continue
        try:
            patch = plan_repair(f, point, radius=radius, centers=_centers(job, cfg), theta_atomic=cfg.theta_atomic)
        except RepairError as exc:
            failures.append({"function": f.name, "point": list(point), "reason": exc.reason, "message": str(exc)})
            continue
        d = dict(patch.to_dict(), point=list(point))
        if cfg.patch_dir:
            d["file"] = _write_patch(cfg.patch_dir, patch)
        if patch.degraded:
            failures.append({
                "function": f.name, "point": list(point), "reason": DEGRADED,
                "message": f"{DEGRADED}: derivative size cap reached; patch kept with {patch.terms} terms",
            })
        patches.append((patch, d))
        # one patch per function covers every flagged point inside its radius
        break
    return patches, failures, skipped


def _write_patch(directory: str, patch: TaylorPatch) -> str:
    path = Path(directory) / f"{patch.patched.name}.fpdsl"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(emit_patch_source(patch) + "\n", encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror or exc}") from None
    return str(path)


def _region(job: Job, patch: TaylorPatch, cfg: RunConfig) -> Region:
    if job.entry is not None:
        return job.entry.region
    point = patch.point
    var = patch.var if isinstance(patch.var, int) else 0
    mid = patch.center if isinstance(patch.var, int) else point[var]
    radius = patch.radius if isinstance(patch.var, int) else (cfg.radius or DEFAULT_RADIUS)
    return Region(var, mid, radius, point)


def _eval(job: Job, cfg: RunConfig, patch: TaylorPatch):
    region = _region(job, patch, cfg)
    naive, patched = measure(
        job.function, patch, region, cfg.samples, cfg.samples,
        precision_bits=cfg.precision_bits, seed=cfg.rng_seed,
    )
    summary = {
        "function": job.function.name,
        "region": region.to_dict(),
        "metrics": {"naive": naive.to_dict()["metrics"], "patched": patched.to_dict()["metrics"]},
        "improvementOrders": improvement_orders(naive, patched),
        "excluded": naive.excluded,
    }
    return summary, [naive, patched]


def _gate(evaluations: list[dict], ceiling: float | None) -> list[dict]:
    if ceiling is None:
        return []
    bad = []
    for ev in evaluations:
        for m in REL_METRICS:
            v = ev["metrics"]["patched"][m]
            v = float(v) if isinstance(v, str) else v
            if not v <= ceiling:
                bad.append({"function": ev["function"], "metric": m, "value": v, "ceiling": ceiling})
    return bad


def run(cfg: RunConfig) -> tuple[dict, int, str | None]:
    """Execute ``cfg.command``; returns (report, exit code, csv text)."""
    jobs = load_jobs(cfg)
    cmd = cfg.command
    report: dict[str, Any] = {"schema": SCHEMA, "command": cmd, "version": __version__, "config": cfg.to_dict()}
    functions: list[dict] = []
    patches_out: list[dict] = []
    failures: list[dict] = []
    skipped: list[dict] = []
    evaluations: list[dict] = []
    eval_reports = []

    for job in jobs:
        entry: dict[str, Any] = {"function": job.function.name, "source": job.source}
        detected = None
        if cmd in ("detect", "run-all") or (not cfg.points and job.entry is None):
            detected = _detect(job, cfg)
            entry["points"] = detected["points"]
        if cmd == "detect":
            functions.append(entry)
            continue
        points = _points(job, cfg, detected)
        classified = _classify(job, cfg, points)
        entry["classifications"] = classified
        functions.append(entry)
        if cmd == "classify":
            continue
        got, fails, skips = _repair(job, cfg, classified)
        failures.extend(fails)
        skipped.extend(skips)
        patches_out.extend(d for _, d in got)
        if cmd == "repair":
            continue
        for patch, _ in got:
            summary, reps = _eval(job, cfg, patch)
            evaluations.append(summary)
            eval_reports.extend(reps)

    report["functions"] = functions
    if cmd in ("repair", "eval", "run-all"):
        report["patches"] = patches_out
        report["failures"] = failures
        report["skipped"] = skipped
    code = 0
    csv_text = None
    if cmd in ("eval", "run-all"):
        report["evaluations"] = evaluations
        gate = _gate(evaluations, cfg.ceiling)
        report["gate"] = {"ceiling": cfg.ceiling, "passed": not gate, "violations": gate}
        code = 1 if gate else 0
        csv_text = reports_to_csv(eval_reports)
    return _jsonable(report), code, csv_text


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror or exc}") from None


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args)
        report, code, csv_text = run(cfg)
        _write(cfg.out, json.dumps(report, indent=2, allow_nan=False) + "\n")
        if cfg.csv and csv_text is not None:
            _write(cfg.csv, csv_text)
    except UsageError as exc:
        print(f"ofprepair: error: {exc}", file=sys.stderr)
        return 2
    if code:
        for v in report["gate"]["violations"]:
            print(f"ofprepair: gate: {v['function']} {v['metric']} = {v['value']} > {v['ceiling']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
