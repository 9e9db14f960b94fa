"""CSV ingestion, run configuration and JSON/CSV emission.

CSV dialect is fixed: comma separator, ``.`` decimals, mandatory header,
UTF-8, LF line endings.  Sample files carry a column ``x`` and either
``y`` or ``y1..yd``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources

import numpy as np

from .errors import ConfigError, ParseError
from .quadrature import QuadratureSpec
from .ranking import Sample, TiePolicy

SCHEMA_VERSION = "1"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def parse_sample_csv(text: str, source: str = "<csv>", min_rows: int = 3) -> Sample:
    if "\r" in text:
        raise ParseError(f"{source}: CR characters found; files must use LF line endings")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if not lines:
        raise ParseError(f"{source}: empty file, header required")
    header = [h.strip() for h in next(csv.reader([lines[0]]))]
    if not header or header[0] != "x":
        raise ParseError(f"{source}: line 1: first column must be 'x', got {header[:1]}")
    ycols = header[1:]
    if ycols == ["y"]:
        d = None
    elif ycols and ycols == [f"y{k}" for k in range(1, len(ycols) + 1)]:
        d = len(ycols)
    else:
        raise ParseError(f"{source}: line 1: expected columns x,y or x,y1..yd, got {','.join(header)}")
    rows = []
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if len(row) != len(header):
            raise ParseError(f"{source}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        vals = []
        for col, cell in zip(header, row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{source}: line {lineno}, column {col!r}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{source}: line {lineno}, column {col!r}: non-finite value {cell!r}")
            vals.append(v)
        rows.append(vals)
    if len(rows) < min_rows:
        raise ParseError(f"{source}: need at least {min_rows} data rows, got {len(rows)}")
    arr = np.array(rows)
    ys = arr[:, 1] if d is None else arr[:, 1:]
    return Sample(arr[:, 0], ys)


def read_sample_csv(path, min_rows: int = 3) -> Sample:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8 ({exc.reason} at byte {exc.start})") from None
    return parse_sample_csv(text, str(path), min_rows)


def sample_to_csv(sample: Sample) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if sample.ys.ndim == 1:
        w.writerow(["x", "y"])
        for x, y in zip(sample.xs, sample.ys):
            w.writerow([_fmt(x), _fmt(y)])
    else:
        w.writerow(["x"] + [f"y{k}" for k in range(1, sample.d + 1)])
        for x, y in zip(sample.xs, sample.ys):
            w.writerow([_fmt(x)] + [_fmt(v) for v in y])
    return buf.getvalue()


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_text(path, text: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


# -- JSON ----------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return v
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def envelope(command: str, result: dict, ok: bool = True) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "ok": bool(ok), "result": _plain(result)}


def dumps(obj) -> str:
    """Deterministic JSON; floats use Python's shortest round-trip repr."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_schema() -> dict:
    return json.loads(resources.files("sensindex").joinpath("schema/report.schema.json").read_text("utf-8"))


# -- configuration -------------------------------------------------------------


@dataclass
class RunConfig:
    model: str | None = None
    params: dict = field(default_factory=dict)
    index: str | None = None
    n: int | None = None
    reps: int | None = None
    seed: int | None = None
    level: float | None = None
    tie_policy: str | None = None
    quadrature: dict = field(default_factory=dict)
    out: str | None = None
    emit_plot_data: str | None = None
    suite: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, source: str = "<config>") -> "RunConfig":
        if not isinstance(data, dict):
            raise ParseError(f"{source}: top level must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{source}: unknown keys {unknown}; allowed: {sorted(known)}")
        cfg = cls(**data)
        cfg.validate(source)
        return cfg

    def validate(self, source: str = "<config>") -> None:
        if not isinstance(self.params, dict) or not isinstance(self.suite, dict):
            raise ConfigError(f"{source}: 'params' and 'suite' must be objects")
        for name in ("n", "reps", "seed"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < 0):
                raise ConfigError(f"{source}: {name!r} must be a nonnegative integer")
        if self.tie_policy is not None:
            try:
                TiePolicy(self.tie_policy)
            except ValueError:
                raise ConfigError(f"{source}: unknown tie_policy {self.tie_policy!r}") from None
        allowed_q = {"nodes", "rtol", "max_nodes", "order", "atol"}
        bad = sorted(set(self.quadrature) - allowed_q)
        if bad:
            raise ConfigError(f"{source}: unknown quadrature keys {bad}")

    def quadrature_spec(self, base: QuadratureSpec) -> QuadratureSpec:
        merged = base.to_dict()
        merged.update(self.quadrature)
        return QuadratureSpec(**merged)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return RunConfig.from_dict(data, str(path))


def parse_param(text: str):
    """``key=value`` with value read as JSON when possible, else as a string."""
    if "=" not in text:
        raise ConfigError(f"parameter {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value

