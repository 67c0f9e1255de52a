"""Command line scenario runner.

    calabi classify --n 2 --k 1 --a0 1 --b0 3
    calabi run --n 2 --k 2 --a0 1 --b0 5 --out-dir out/collapse
    calabi certify out/collapse/series.csv
    calabi batch scenarios.txt --jobs 4

Scenario settings come from flags, a flat ``key = value`` config file
(``--config``), or both; flags win. ``CALABI_OUT`` sets the default output
directory.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shlex
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

from . import __version__
from .analytics import DiagnosticsRecord, certify, certify_records
from .errors import CalabiError, FlowError, NonKahlerClass, UsageError
from .flow import RunConfig, run
from .geometry import (
    KahlerClass,
    ManifoldParams,
    classify_singularity,
    limit_class,
    limit_description,
    singular_time,
    validate_class,
)
from .profile import MIN_NODES

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "t", "a_t", "b_t", "volume", "usec_max", "fiber_len", "fiber_diam_bound",
    "tr_chi_max", "trace_ref_max", "H_max", "contraction_env", "gh_bound", "phi_tilde_sup",
]
DEFAULT_OUT = "calabi_out"

# config-file keys and their ScenarioConfig field
CONFIG_KEYS = {
    "n": "n", "k": "k", "a0": "a0", "b0": "b0",
    "m": "m", "grid": "m",
    "cfl": "cfl",
    "t_stop_margin": "t_stop_margin",
    "snapshot_interval": "snapshot_interval",
    "out_dir": "out_dir",
}


@dataclass
class ScenarioConfig:
    n: int
    k: int
    a0: Fraction | float
    b0: Fraction | float
    m: int = 401
    cfl: float = 0.4
    t_stop_margin: float = 1e-3
    snapshot_interval: float | None = None
    out_dir: str = DEFAULT_OUT

    @property
    def params(self) -> ManifoldParams:
        return ManifoldParams(self.n, self.k)

    @property
    def cls0(self) -> KahlerClass:
        return KahlerClass(self.a0, self.b0)

    def as_json(self) -> dict:
        out = asdict(self)
        out["a0"], out["b0"] = str(self.a0), str(self.b0)
        return out


def _number(raw: str, key: str):
    """Class coefficients stay rational so the equality case is decided exactly."""
    try:
        return Fraction(raw.strip())
    except (ValueError, ZeroDivisionError):
        pass
    try:
        return float(raw)
    except ValueError:
        raise UsageError(f"{key}: not a number: {raw!r}") from None


def _coerce(field: str, raw, key: str):
    if raw is None:
        return None
    if not isinstance(raw, str):
        return raw
    try:
        if field in ("n", "k", "m"):
            return int(raw)
        if field in ("a0", "b0"):
            return _number(raw, key)
        if field in ("cfl", "t_stop_margin", "snapshot_interval"):
            return float(raw)
    except ValueError:
        raise UsageError(f"{key}: bad value {raw!r}") from None
    return raw


def read_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        field = CONFIG_KEYS[key]
        values[field] = _coerce(field, raw, key)
    return values


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    return read_config_text(text, str(path))


def build_scenario(values: dict) -> ScenarioConfig:
    missing = [key for key in ("n", "k", "a0", "b0") if values.get(key) is None]
    if missing:
        raise UsageError(f"missing scenario setting(s): {', '.join(missing)}")
    kwargs = {key: value for key, value in values.items() if value is not None}
    kwargs.setdefault("out_dir", os.environ.get("CALABI_OUT", DEFAULT_OUT))
    config = ScenarioConfig(**kwargs)
    try:
        params = config.params
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        validate_class(params, config.cls0)
    except NonKahlerClass as exc:
        raise UsageError(f"NonKahlerClass: {exc}") from None
    if config.m < MIN_NODES:
        raise UsageError(f"m: need at least {MIN_NODES} nodes, got {config.m}")
    if not 0 < config.cfl < 1:
        raise UsageError(f"cfl: must lie in (0, 1), got {config.cfl}")
    T = float(singular_time(params, config.cls0))
    if not 0 <= config.t_stop_margin <= T:
        raise UsageError(f"t_stop_margin: must lie in [0, T={T:g}]")
    return config


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value scenario file")
    p.add_argument("--n", type=str)
    p.add_argument("--k", type=str)
    p.add_argument("--a0", type=str)
    p.add_argument("--b0", type=str)
    p.add_argument("--m", type=str, help="grid size (default 401)")
    p.add_argument("--cfl", type=str, help="step safety factor (default 0.4)")
    p.add_argument("--t-stop-margin", dest="t_stop_margin", type=str, help="stop at T - margin (default 1e-3)")
    p.add_argument("--snapshot-interval", dest="snapshot_interval", type=str, help="default T/50")
    p.add_argument("--out-dir", dest="out_dir", type=str)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="calabi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_scenario_flags(sub.add_parser("classify", help="print case, singular time and limit"))
    _add_scenario_flags(sub.add_parser("run", help="run the flow and write series.csv and report.json"))
    p = sub.add_parser("certify", help="re-check certificates on an existing series.csv")
    p.add_argument("series", help="path to series.csv")
    _add_scenario_flags(p)
    p = sub.add_parser("batch", help="run one scenario per line of FILE")
    p.add_argument("file")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", dest="out_dir", type=str)
    return parser


def scenario_from_args(args: argparse.Namespace, base: dict | None = None) -> ScenarioConfig:
    values = dict(base or {})
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for field in ("n", "k", "a0", "b0", "m", "cfl", "t_stop_margin", "snapshot_interval", "out_dir"):
        raw = getattr(args, field, None)
        if raw is not None:
            values[field] = _coerce(field, raw, "--" + field.replace("_", "-"))
    return build_scenario(values)


def parse(argv: list[str]) -> tuple[str, argparse.Namespace, ScenarioConfig | None]:
    """Parse a command line; the scenario is None for ``batch`` and ``certify``."""
    args = make_parser().parse_args(argv)
    if args.command in ("classify", "run"):
        return args.command, args, scenario_from_args(args)
    return args.command, args, None


# -- output -------------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_series(records) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for rec in records:
        row = rec.as_dict()
        buf.write(",".join(f"{float(row[c]):.16e}" for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()


def read_series(path: str | Path) -> list[DiagnosticsRecord]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != CSV_COLUMNS:
            raise UsageError(f"{path}: unexpected header {reader.fieldnames}")
        nan = float("nan")
        return [
            DiagnosticsRecord(**{c: float(row[c]) for c in CSV_COLUMNS}, utr_min=nan, utr_max=nan)
            for row in reader
        ]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return float(obj)
    if isinstance(obj, float) and obj != obj:
        return None
    return obj


# -- commands -----------------------------------------------------------------

def classify(config: ScenarioConfig) -> str:
    params, cls0 = config.params, config.cls0
    case = classify_singularity(params, cls0)
    T = singular_time(params, cls0)
    a_T, b_T = limit_class(params, cls0)
    lines = [
        f"M_{{{params.n},{params.k}}} with a0={config.a0}, b0={config.b0}",
        f"case: {case.value}",
        f"T: {float(T):.12g}" + (f" (= {T})" if isinstance(T, Fraction) and T.denominator != 1 else ""),
        f"a_T: {a_T:.12g}",
        f"b_T: {b_T:.12g}",
        f"limit: {limit_description(params, cls0)}",
    ]
    return "\n".join(lines)


def run_scenario(config: ScenarioConfig) -> int:
    params, cls0 = config.params, config.cls0
    T = float(singular_time(params, cls0))
    out = Path(config.out_dir)
    run_config = RunConfig(
        params, cls0, m=config.m, cfl=config.cfl,
        t_stop=T - config.t_stop_margin,
        snapshot_interval=config.snapshot_interval,
    )
    report = {
        "case": classify_singularity(params, cls0).value,
        "T": T,
        "limit": limit_description(params, cls0),
        "scenario": config.as_json(),
    }
    try:
        series = run(run_config)
    except FlowError as exc:
        report.update({"error": str(exc), "failed_at": exc.t, "all_pass": False})
        _atomic_write(out / "report.json", json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
        logger.error("flow failed: %s", exc)
        return 1
    _atomic_write(out / "series.csv", format_series([rec for _, rec in series]))
    result = certify(series)
    report["certificates"] = result["certificates"]
    report["all_pass"] = result["all_pass"]
    _atomic_write(out / "report.json", json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    failed = [name for name, c in result["certificates"].items() if not c["pass"]]
    print(f"{report['case']}: T={T:.12g}, {len(series)} snapshots -> {out}")
    for name, c in result["certificates"].items():
        tag = "PASS" if c["pass"] else "FAIL"
        if c.get("provisional"):
            tag += " (provisional)"
        print(f"  {name}: {tag}")
    if failed:
        logger.warning("certificate(s) failed: %s", ", ".join(failed))
    return 0 if result["all_pass"] else 1


def certify_series_file(path: str | Path, config: ScenarioConfig) -> dict:
    records = read_series(path)
    if not records:
        raise UsageError(f"{path}: no rows")
    return certify_records(records, config.params, config.cls0)


def _scenario_for_certify(args: argparse.Namespace) -> ScenarioConfig:
    base = {}
    report = Path(args.series).with_name("report.json")
    if report.exists():
        stored = json.loads(report.read_text(encoding="utf-8")).get("scenario", {})
        for key in ("n", "k", "a0", "b0"):
            if key in stored:
                base[key] = _coerce(key, str(stored[key]), key)
    return scenario_from_args(args, base)


def _batch_one(job: tuple[int, str, str]) -> tuple[int, int, str]:
    index, line, out_base = job
    try:
        values = {}
        for token in shlex.split(line):
            values.update(read_config_text(token, f"line {index + 1}"))
        values.setdefault("out_dir", str(Path(out_base) / f"scenario_{index:03d}"))
        config = build_scenario(values)
        return index, run_scenario(config), config.out_dir
    except CalabiError as exc:
        return index, 2, str(exc)


def run_batch(path: str | Path, jobs: int = 1, out_base: str | None = None) -> int:
    out_base = out_base or os.environ.get("CALABI_OUT", DEFAULT_OUT)
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    work = [
        (i, line, out_base)
        for i, line in enumerate(lines)
        if line.split("#", 1)[0].strip()
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_batch_one, work))
    else:
        results = [_batch_one(job) for job in work]
    worst = 0
    for index, status, detail in sorted(results):
        print(f"line {index + 1}: exit {status} ({detail})")
        worst = max(worst, status)
    return worst


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        command, args, config = parse(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if command == "classify":
            print(classify(config))
            return 0
        if command == "run":
            return run_scenario(config)
        if command == "certify":
            result = certify_series_file(args.series, _scenario_for_certify(args))
            print(json.dumps(_jsonable(result), indent=2, sort_keys=True))
            return 0 if result["all_pass"] else 1
        return run_batch(args.file, args.jobs, args.out_dir)
    except UsageError as exc:
        print(f"calabi: usage error: {exc}", file=sys.stderr)
        return 2
    except CalabiError as exc:
        print(f"calabi: {exc}", file=sys.stderr)
        return 1
