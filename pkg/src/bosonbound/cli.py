"""``bosonbound`` command line: bounds, sweeps, oracle runs and comparisons."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any

from .algebra import ExactComplex, OperatorPolynomial, annihilation, creation, multiply
from .basis import build_tensors, enumerate_basis
from .fock import (
    KernelError,
    EscalationError,
    MemoryCapError,
    TruncationSetting,
    oracle_extremal,
    stationary_state,
)
from .lindblad import LindbladSpec, build_model, parse_parameters, spec_from_json
from .relaxation import RelaxationOptions, records_to_jsonl, solve_bounds
from .sdp import MAX_ITERS, NUMERICAL_FAILURE

log = logging.getLogger("bosonbound")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_BRACKET, EXIT_RESOURCE = 0, 1, 2, 3, 4
COMMANDS = ("bound", "sweep", "oracle", "compare")
CSV_COLUMNS = ("D", "lower", "upper", "gap", "rel_gap", "residual", "time")
ORACLE_COLUMNS = ("value", "min", "max", "kernel_dim", "residual", "cutoffs")
FAILED = (MAX_ITERS, NUMERICAL_FAILURE)


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class RunConfig:
    command: str = "bound"
    model: str | None = None
    params: dict[str, str] = field(default_factory=dict)
    model_json: dict | None = None
    observable: Any = "n"
    degrees: list[int] = field(default_factory=lambda: [2])
    precision_bits: int | None = None
    tol: float | None = None
    sweep: dict | None = None  # {"name": str, "values": [str, ...]}
    cutoff: list[int] | None = None
    out: str | None = None
    format: str = "csv"
    jobs: int = 1
    scale: str = "auto"
    max_iters: int = 200
    max_dimension: int = 4096
    timing: bool = True
    test_corrupt_tensor: bool = False

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if (self.model is None) == (self.model_json is None):
            raise UsageError("give exactly one model source: a built-in name or an inline JSON model")
        if self.model_json is not None and self.params:
            raise UsageError("parameter overrides only apply to built-in models")
        if not self.degrees or any(int(d) < 1 for d in self.degrees):
            raise UsageError("degrees must be >= 1")
        self.degrees = sorted({int(d) for d in self.degrees})
        self.params = {k: str(v) for k, v in self.params.items()}
        if self.sweep is not None:
            if not self.sweep.get("name") or not self.sweep.get("values"):
                raise UsageError("sweep needs a parameter name and at least one value")
            vals = [str(v) for v in self.sweep["values"]]
            for v in vals:
                try:
                    Fraction(v)
                except ValueError:
                    raise UsageError(f"sweep value {v!r} is not a finite real number") from None
            self.sweep = {"name": str(self.sweep["name"]), "values": vals}
        if self.command == "sweep" and self.sweep is None:
            raise UsageError("the sweep command needs --sweep name=v1,v2,...")
        if self.format not in ("csv", "jsonl"):
            raise UsageError("format must be csv or jsonl")
        if self.jobs < 1:
            raise UsageError("jobs must be >= 1")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls.from_json(json.loads(text))


def shipped_configs() -> dict[str, str]:
    root = resources.files("bosonbound") / "configs"
    return {p.name.removesuffix(".json"): p.read_text() for p in root.iterdir() if p.name.endswith(".json")}


def _load_config_source(ref: str) -> dict:
    path = Path(ref)
    if path.exists():
        return json.loads(path.read_text())
    shipped = shipped_configs()
    if ref in shipped:
        return json.loads(shipped[ref])
    raise UsageError(f"no config file or shipped config named {ref!r} (shipped: {sorted(shipped)})")


# --------------------------------------------------------------------------
# models and observables
# --------------------------------------------------------------------------


def point_spec(config: RunConfig, sweep_value: str | None = None) -> LindbladSpec:
    if config.model_json is not None:
        spec = spec_from_json(config.model_json)
        if sweep_value is not None:
            raise UsageError("sweeps need a built-in model")
        return spec
    params = dict(config.params)
    if sweep_value is not None:
        params[config.sweep["name"]] = sweep_value
    return build_model(config.model, params)


def observable_for(spec: LindbladSpec, ref) -> OperatorPolynomial:
    n = spec.mode_count
    if isinstance(ref, list):
        return OperatorPolynomial.from_literal(ref, n)
    if isinstance(ref, str) and ref.lstrip().startswith("["):
        return OperatorPolynomial.from_literal(json.loads(ref), n)

    def num(j):
        return multiply(creation(j, n), annihilation(j, n))

    if ref == "n":
        out = num(0)
        for j in range(1, n):
            out = out + num(j)
        return out
    if ref == "n_a":
        return num(0)
    if ref == "n_b":
        if n < 2:
            raise UsageError("n_b needs a second mode")
        return num(1)
    if ref == "x":
        # (a + a^+)/2 keeps the coefficients rational
        return (annihilation(0, n) + creation(0, n)).scale(Fraction(1, 2))
    if ref in ("1", "identity"):
        return OperatorPolynomial.scalar(1, n)
    raise UsageError(f"unknown observable {ref!r}; use n, n_a, n_b, x, 1 or a JSON term list")


def _observable_name(ref) -> str:
    return ref if isinstance(ref, str) else json.dumps(ref, sort_keys=True)


def _corrupt(tensors):
    # negative control: shift the observable by the identity
    B = dict(tensors.B)
    B[0] = B.get(0, ExactComplex(0)) + ExactComplex(1)
    tensors.B = B
    return tensors


# --------------------------------------------------------------------------
# work units (module level so they pickle for the process pool)
# --------------------------------------------------------------------------


def _bound_point(config_doc: dict, sweep_value, D: int) -> dict:
    config = RunConfig.from_json(config_doc)
    spec = point_spec(config, sweep_value)
    obs = observable_for(spec, config.observable)
    scale = config.scale
    if scale not in ("auto", None):
        scale = Fraction(scale)
    opts = RelaxationOptions(
        mantissa_bits=config.precision_bits, tol=config.tol, max_iters=config.max_iters, scale=scale
    )
    tensors = None
    if config.test_corrupt_tensor:
        tensors = _corrupt(build_tensors(spec, enumerate_basis(spec.mode_count, D), obs))
    res = solve_bounds(spec, obs, D, opts, tensors=tensors)
    records = res.records(spec.name, spec.parameters, _observable_name(config.observable))
    failed = any(s.status in FAILED for s in res.sides.values())
    return {
        "sweep_value": sweep_value,
        "D": D,
        "lower": res.lower,
        "upper": res.upper,
        "residual": res.max_residual,
        "time": res.wall_time,
        "failed": failed,
        "records": records,
    }


def _oracle_point(config_doc: dict, sweep_value) -> dict:
    config = RunConfig.from_json(config_doc)
    spec = point_spec(config, sweep_value)
    obs = observable_for(spec, config.observable)
    trunc = TruncationSetting.default_for(spec, max_dimension=config.max_dimension)
    if config.cutoff:
        cut = tuple(config.cutoff)
        if len(cut) == 1 and spec.mode_count > 1:
            cut = cut * spec.mode_count
        trunc = TruncationSetting(cut, max_dimension=config.max_dimension)
    res = stationary_state(spec, trunc, {"O": obs})
    value = res.expectations["O"]
    if res.kernel_dim == 1:
        lo = hi = value
    else:
        ext = oracle_extremal(spec, obs, trunc)
        lo, hi = ext.min, ext.max
    record = {
        "source": "oracle",
        "model": spec.name,
        "parameters": {k: float(v) for k, v in spec.parameters.items()},
        "observable": _observable_name(config.observable),
        "value": value,
        "min": lo,
        "max": hi,
        "kernel_dim": res.kernel_dim,
        "residual": res.residual,
        "cutoffs": list(res.cutoffs),
        "method": res.method,
    }
    return {"sweep_value": sweep_value, "record": record}


def _run_pool(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


def _sweep_points(config: RunConfig):
    return list(config.sweep["values"]) if config.sweep else [None]


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def bound_row(point: dict, timing: bool = True) -> dict:
    lo, up = point["lower"], point["upper"]
    gap = rel = None
    if lo is not None and up is not None:
        gap = up - lo
        rel = gap / (up + lo) if (up + lo) != 0 else None
    return {
        "D": point["D"],
        "lower": lo,
        "upper": up,
        "gap": gap,
        "rel_gap": rel,
        "residual": point["residual"],
        "time": point["time"] if timing else None,
    }


def write_bound_csv(points: list[dict], sweep_name: str | None, timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ([sweep_name] if sweep_name else []) + list(CSV_COLUMNS)
    w.writerow(cols)
    for p in points:
        row = bound_row(p, timing)
        w.writerow(([p["sweep_value"]] if sweep_name else []) + [_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_oracle_csv(points: list[dict], sweep_name: str | None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(([sweep_name] if sweep_name else []) + list(ORACLE_COLUMNS))
    for p in points:
        r = p["record"]
        vals = [r["value"], r["min"], r["max"], r["kernel_dim"], r["residual"], " ".join(map(str, r["cutoffs"]))]
        w.writerow(([p["sweep_value"]] if sweep_name else []) + [_fmt(v) for v in vals])
    return buf.getvalue()


def _emit(config: RunConfig, csv_text: str, records: list[dict]) -> None:
    jsonl = records_to_jsonl(records)
    if config.out is None:
        sys.stdout.write(csv_text if config.format == "csv" else jsonl)
        return
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if config.format == "csv":
        out.write_text(csv_text)
        out.with_suffix(".jsonl").write_text(jsonl)
    else:
        out.write_text(jsonl)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _bound_points(config: RunConfig) -> list[dict]:
    doc = config.to_json()
    tasks = [(doc, v, D) for v in _sweep_points(config) for D in config.degrees]
    return _run_pool(_bound_point, tasks, config.jobs)


def cmd_bound(config: RunConfig) -> tuple[int, list[dict]]:
    points = _bound_points(config)
    records = [r for p in points for r in p["records"]]
    sweep_name = config.sweep["name"] if config.sweep else None
    _emit(config, write_bound_csv(points, sweep_name, config.timing), records)
    status = EXIT_SOLVER if any(p["failed"] for p in points) else EXIT_OK
    return status, records


def cmd_sweep(config: RunConfig) -> tuple[int, list[dict]]:
    return cmd_bound(config)


def cmd_oracle(config: RunConfig) -> tuple[int, list[dict]]:
    doc = config.to_json()
    points = _run_pool(_oracle_point, [(doc, v) for v in _sweep_points(config)], config.jobs)
    records = [p["record"] for p in points]
    sweep_name = config.sweep["name"] if config.sweep else None
    _emit(config, write_oracle_csv(points, sweep_name), records)
    return EXIT_OK, records


def bracket_check(lower, upper, lo, hi, residual) -> tuple[bool, float]:
    """``lower - eps <= lo`` and ``hi <= upper + eps`` with ``eps = 10 * residual``.

    A missing side (infeasible or failed) constrains nothing.
    """
    eps = 10.0 * residual
    ok = True
    if lower is not None and not lower - eps <= lo:
        ok = False
    if upper is not None and not hi <= upper + eps:
        ok = False
    return ok, eps


def cmd_compare(config: RunConfig) -> tuple[int, list[dict]]:
    doc = config.to_json()
    oracles = {p["sweep_value"]: p["record"] for p in _run_pool(_oracle_point, [(doc, v) for v in _sweep_points(config)], config.jobs)}
    points = _bound_points(config)
    report, failures, solver_failed = [], 0, False
    for p in points:
        orc = oracles[p["sweep_value"]]
        ok, eps = bracket_check(p["lower"], p["upper"], orc["min"], orc["max"], p["residual"])
        solver_failed |= p["failed"]
        entry = {
            "source": "compare",
            "sweep_value": p["sweep_value"],
            "D": p["D"],
            "lower": p["lower"],
            "upper": p["upper"],
            "oracle_min": orc["min"],
            "oracle_max": orc["max"],
            "kernel_dim": orc["kernel_dim"],
            "epsilon": eps,
            "pass": ok,
        }
        if not ok:
            failures += 1
            entry["violation"] = {
                "below_lower": None if p["lower"] is None else (p["lower"] - eps) - orc["min"],
                "above_upper": None if p["upper"] is None else orc["max"] - (p["upper"] + eps),
            }
        report.append(entry)
        tag = "PASS" if ok else "FAIL"
        where = f"{config.sweep['name']}={p['sweep_value']} " if config.sweep else ""
        print(
            f"{tag} {where}D={p['D']}: [{_fmt(p['lower'])}, {_fmt(p['upper'])}] vs oracle "
            f"[{orc['min']!r}, {orc['max']!r}] eps={eps:.3e}",
            file=sys.stderr,
        )
    records = [r for p in points for r in p["records"]] + list(oracles.values()) + report
    sweep_name = config.sweep["name"] if config.sweep else None
    _emit(config, write_bound_csv(points, sweep_name, config.timing), records)
    if failures:
        return EXIT_BRACKET, records
    return (EXIT_SOLVER if solver_failed else EXIT_OK), records


HANDLERS = {"bound": cmd_bound, "sweep": cmd_sweep, "oracle": cmd_oracle, "compare": cmd_compare}


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_degrees(text: str) -> list[int]:
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        sep = ".." if ".." in part else ("-" if "-" in part else None)
        if sep:
            lo, hi = part.split(sep)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def parse_sweep(text: str) -> dict:
    if "=" not in text:
        raise UsageError("--sweep expects name=v1,v2,...")
    name, vals = text.split("=", 1)
    return {"name": name.strip(), "values": [v.strip() for v in vals.split(",") if v.strip()]}


def parse_params(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        for piece in item.split(","):
            if not piece:
                continue
            if "=" not in piece:
                raise UsageError(f"--params expects k=v, got {piece!r}")
            k, v = piece.split("=", 1)
            parse_parameters({k: v})  # validates the number
            out[k.strip()] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bosonbound", description="Semidefinite bounds on stationary expectation values of bosonic Lindblad models.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    S = argparse.SUPPRESS
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", default=S, help="JSON config file or shipped config name (fig1, fig2, fig3)")
        c.add_argument("--model", default=S, help="built-in model name or path to a JSON model")
        c.add_argument("--params", nargs="*", default=S, metavar="K=V")
        c.add_argument("--observable", default=S, help="n, n_a, n_b, x, 1 or a JSON term list")
        c.add_argument("--degrees", default=S, help="e.g. 3-8 or 3,4,6")
        c.add_argument("--precision-bits", type=int, default=S)
        c.add_argument("--tol", type=float, default=S)
        c.add_argument("--sweep", default=S, metavar="NAME=V1,V2,...")
        c.add_argument("--cutoff", default=S, help="Fock cutoff(s), comma separated")
        c.add_argument("--out", default=S)
        c.add_argument("--format", choices=("csv", "jsonl"), default=S)
        c.add_argument("--jobs", type=int, default=S)
        c.add_argument("--scale", default=S, help="'auto' or a positive number")
        c.add_argument("--max-iters", type=int, default=S)
        c.add_argument("--max-dimension", type=int, default=S, help="cap on the truncated Hilbert-space dimension")
        c.add_argument("--no-timing", dest="timing", action="store_false", default=S, help="leave the time column empty")
        c.add_argument("--corrupt-tensor", dest="test_corrupt_tensor", action="store_true", default=S, help=S)
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    given = vars(ns)
    doc: dict = {}
    if "config" in given:
        doc.update(_load_config_source(given["config"]))
    doc["command"] = ns.command
    if "model" in given:
        ref = given["model"]
        if Path(ref).suffix == ".json" and Path(ref).exists():
            doc["model_json"] = json.loads(Path(ref).read_text())
            doc["model"] = None
        else:
            doc["model"] = ref
            doc["model_json"] = None
    if "params" in given:
        doc["params"] = {**doc.get("params", {}), **parse_params(given["params"])}
    if "observable" in given:
        doc["observable"] = given["observable"]
    if "degrees" in given:
        doc["degrees"] = parse_degrees(given["degrees"])
    if "sweep" in given:
        doc["sweep"] = parse_sweep(given["sweep"])
    if "cutoff" in given:
        doc["cutoff"] = [int(x) for x in given["cutoff"].split(",") if x]
    for key in ("precision_bits", "tol", "out", "format", "jobs", "scale", "max_iters", "max_dimension", "timing", "test_corrupt_tensor"):
        if key in given:
            doc[key] = given[key]
    return RunConfig.from_json(doc).validate()


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(ns)
        status, _ = HANDLERS[config.command](config)
        return status
    except (UsageError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"bosonbound: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MemoryCapError, MemoryError) as exc:
        print(f"bosonbound: resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (KernelError, EscalationError, ArithmeticError) as exc:
        print(f"bosonbound: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
