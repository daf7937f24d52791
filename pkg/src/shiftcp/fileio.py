"""Score-matrix CSV files, result JSON/CSV emission and their schemas."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .auxiliary import ScoreMatrix
from .errors import ValidationError

FORMAT_VERSION = 1
UNLABELED = -1

MALFORMED = "malformed"
OUT_OF_RANGE = "out_of_range"
RAGGED = "ragged"
LABEL_RANGE = "label_range"


class ScoreFileError(ValidationError):
    """A problem at a specific line (1-based, header is line 1) and column of a score file."""

    def __init__(self, path, kind: str, line: int, message: str, column: str | None = None):
        self.path = str(path)
        self.kind = kind
        self.line = line
        self.column = column
        where = f"line {line}" + (f", column {column}" if column else "")
        super().__init__(f"{self.path}: {where}: {message} [{kind}]")


@dataclass(frozen=True)
class ScoreFileHeader:
    version: int
    n_classes: int
    has_labels: bool
    has_probs: bool

    def __post_init__(self):
        if self.version != FORMAT_VERSION:
            raise ValidationError(f"unsupported score file version {self.version}")
        if self.n_classes < 2:
            raise ValidationError("a score file needs at least two classes")


def probs_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".probs" + p.suffix)


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".json")


def _parse(path, prefix: str):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ScoreFileError(path, MALFORMED, 1, "empty file") from None
        k = len(header) - 2
        expected = ["id", "label"] + [f"{prefix}_{j}" for j in range(max(k, 0))]
        if k < 2 or header != expected:
            raise ScoreFileError(path, MALFORMED, 1, f"header must be id,label,{prefix}_0,...,{prefix}_(K-1) with K >= 2")
        ids, labels, rows = [], [], []
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != k + 2:
                raise ScoreFileError(path, RAGGED, line, f"expected {k + 2} fields, found {len(rec)}")
            try:
                lab = int(rec[1])
            except ValueError:
                raise ScoreFileError(path, MALFORMED, line, f"label {rec[1]!r} is not an integer", "label") from None
            if lab < UNLABELED or lab >= k:
                raise ScoreFileError(path, LABEL_RANGE, line, f"label {lab} outside -1..{k - 1}", "label")
            vals = []
            for j, text in enumerate(rec[2:]):
                col = f"{prefix}_{j}"
                try:
                    v = float(text)
                except ValueError:
                    raise ScoreFileError(path, MALFORMED, line, f"value {text!r} is not a number", col) from None
                if not (0.0 <= v <= 1.0):
                    raise ScoreFileError(path, OUT_OF_RANGE, line, f"value {v!r} outside [0, 1]", col)
                vals.append(v)
            ids.append(rec[0])
            labels.append(lab)
            rows.append(vals)
    if not rows:
        raise ScoreFileError(path, MALFORMED, 2, "no data rows")
    return ids, np.array(labels, dtype=int), np.array(rows, dtype=float)


@dataclass(frozen=True, eq=False)
class ScoreFile:
    matrix: ScoreMatrix
    labels: np.ndarray
    ids: list
    header: ScoreFileHeader

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.labels != UNLABELED

    def labeled(self) -> tuple[ScoreMatrix, np.ndarray]:
        """Rows with a known label only."""
        mask = self.labeled_mask
        if not mask.any():
            raise ValidationError("file has no labeled rows")
        probs = None if self.matrix.probs is None else self.matrix.probs[mask]
        return ScoreMatrix(self.matrix.scores[mask], probs), self.labels[mask]


def read_score_file(path) -> ScoreFile:
    ids, labels, scores = _parse(path, "s")
    probs = None
    pp = probs_path(path)
    if pp.exists():
        p_ids, p_labels, probs = _parse(pp, "p")
        if probs.shape != scores.shape or p_ids != ids:
            raise ScoreFileError(pp, RAGGED, 1, "probability file does not match the score file row for row")
    try:
        matrix = ScoreMatrix(scores, probs)
    except ValidationError as exc:
        raise ScoreFileError(pp if probs is not None else path, MALFORMED, 1, str(exc)) from None
    header = ScoreFileHeader(FORMAT_VERSION, scores.shape[1], bool(np.any(labels != UNLABELED)), probs is not None)
    return ScoreFile(matrix, labels, ids, header)


def load_score_matrix(path):
    """(ScoreMatrix, labels) with -1 marking unlabeled rows; labels is None if no row is labeled."""
    f = read_score_file(path)
    return f.matrix, (f.labels if f.header.has_labels else None)


def _fmt(v: float, precision: int | None) -> str:
    return repr(float(v)) if precision is None else format(float(v), f".{precision}g")


def _write(path, prefix, values, labels, ids, precision):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"{prefix}_{j}" for j in range(values.shape[1])])
        for i in range(values.shape[0]):
            w.writerow([ids[i], int(labels[i])] + [_fmt(v, precision) for v in values[i]])


def save_score_matrix(path, matrix: ScoreMatrix, labels=None, ids=None, precision: int | None = None):
    """Write scores (and a probability companion when present).

    The default writes shortest round-trip floats, so loading gives back the
    identical matrix; ``precision`` trades that for smaller files.
    """
    n = matrix.n_rows
    labels = np.full(n, UNLABELED) if labels is None else np.asarray(labels, dtype=int)
    if labels.shape != (n,):
        raise ValidationError("need one label per row")
    ids = [str(i) for i in range(n)] if ids is None else [str(i) for i in ids]
    _write(path, "s", matrix.scores, labels, ids, precision)
    if matrix.probs is not None:
        _write(probs_path(path), "p", matrix.probs, labels, ids, precision)


# ---------------------------------------------------------------------------
# JSON

_NUM = {"type": "number"}
_NUM_ARRAY = {"type": "array", "items": _NUM}

BOUND_SCHEMA = {
    "type": "object",
    "required": ["report", "config"],
    "properties": {
        "report": {
            "type": "object",
            "required": ["value", "flavor", "labeled", "estimator", "grid_size", "max_density", "bandwidth",
                         "dominance_verified", "raw_value", "components", "dkw", "display_value"],
            "properties": {
                "value": _NUM,
                "raw_value": _NUM,
                "display_value": _NUM,
                "flavor": {"enum": ["weighted_cdf", "w1"]},
                "estimator": {"enum": ["grid", "expectation"]},
                "labeled": {"type": "boolean"},
                "grid_size": {"type": "integer", "minimum": 2},
                "max_density": _NUM,
                "bandwidth": {"type": "number", "exclusiveMinimum": 0},
                "dominance_verified": {"type": "boolean"},
                "components": {"type": "object"},
                "dkw": {"type": ["object", "null"]},
            },
        },
        "config": {"type": "object"},
    },
}

WEIGHTS_SCHEMA = {
    "type": "object",
    "required": ["weights", "objective_trace", "config"],
    "properties": {
        "weights": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "log_weights": _NUM_ARRAY,
        "objective_trace": _NUM_ARRAY,
        "config": {"type": "object"},
    },
}

COVERAGE_SCHEMA = {
    "type": "object",
    "required": ["report", "config"],
    "properties": {
        "report": {
            "type": "object",
            "required": ["method", "convention", "total_gap", "alpha_grid", "coverage", "mean_size"],
            "properties": {
                "method": {"type": "string"},
                "convention": {"enum": ["plain", "conformal"]},
                "total_gap": {"type": "number", "minimum": 0, "maximum": 1},
                "alpha_grid": _NUM_ARRAY,
                "coverage": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "mean_size": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "thresholds": _NUM_ARRAY,
            },
        },
        "config": {"type": "object"},
    },
}

SYNTH_SCHEMA = {
    "type": "object",
    "required": ["summary", "config"],
    "properties": {
        "summary": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["n_sims", "coverage_mean", "coverage_sd", "mean_size_mean", "mean_size_sd"],
            },
        },
        "descent": {"type": "object"},
        "config": {"type": "object"},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["config"],
    "properties": {"config": {"type": "object"}},
}


def _clean(obj):
    """JSON-ready copy: numpy scalars and arrays become Python values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValidationError("refusing to write a non-finite number to JSON")
        return v
    return obj


def dump_json(obj, schema: dict | None = None) -> str:
    data = _clean(obj)
    if schema is not None:
        jsonschema.validate(data, schema)
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_json(path, obj, schema: dict | None = None):
    Path(path).write_text(dump_json(obj, schema))


def read_json(path, schema: dict | None = None) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if schema is not None:
        try:
            jsonschema.validate(data, schema)
        except jsonschema.ValidationError as exc:
            raise ValidationError(f"{path}: {exc.message}") from None
    return data


def write_rows_csv(path, columns, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def read_rows_csv(path, numeric=()) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in numeric:
            r[k] = float(r[k])
    return rows
