"""Dataset CSV and model export formats.

Dataset CSV: header ``t_1,...,t_d,channel,y``; one row per observation;
``channel`` is 0 for a function value and ``j`` for ``df/dt_j`` (1-based in
the file).  Values are written with 17 significant digits.

Model export: a JSON object (decimal text, floats written with round-trip
precision) holding the feature configuration and seed, rescaling box,
weights, lambda, response means and the full coefficient vector.  The
feature frequencies are not stored; they are re-drawn from the seed.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .estimator import FittedModel, MixedDataset
from .features import augmented_rows, build_feature_map
from .kernels import KernelSpec

__all__ = [
    "DataFormatError",
    "SchemaError",
    "write_dataset_csv",
    "read_dataset_csv",
    "model_record",
    "save_model",
    "load_model",
    "materialize_coef",
]

MODEL_FORMAT = "mixgrad-model"
MODEL_VERSION = 1


class DataFormatError(ValueError):
    """Malformed input file."""


class SchemaError(ValueError):
    """Well-formed file whose contents do not match the declared layout."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset_csv(dataset: MixedDataset, path) -> None:
    d = dataset.d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"t_{j + 1}" for j in range(d)] + ["channel", "y"])
        groups = [(0, dataset.func_t, dataset.func_y)]
        groups += [(j + 1, t, y) for j, (t, y) in enumerate(zip(dataset.grad_t, dataset.grad_y))]
        for ch, t, y in groups:
            for row, val in zip(t, y):
                w.writerow([_fmt(v) for v in row] + [ch, _fmt(val)])


def read_dataset_csv(path, d: int = None, p: int = None, box=None) -> MixedDataset:
    """Parse a dataset CSV.

    Without ``box`` the domain is the bounding box of the design points.

    Raises
    ------
    DataFormatError
        Unparseable content; the message names the line.
    SchemaError
        Dimension or channel layout inconsistent with ``d`` / ``p``.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[-2:] != ["channel", "y"]:
        raise DataFormatError(f"{path}:1: header must be t_1..t_d,channel,y")
    file_d = len(header) - 2
    if header[:file_d] != [f"t_{j + 1}" for j in range(file_d)]:
        raise DataFormatError(f"{path}:1: coordinate columns must be named t_1..t_{file_d}")
    if d is not None and d != file_d:
        raise SchemaError(f"{path}: file has d={file_d}, expected d={d}")

    pts, chans, ys = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != file_d + 2:
            raise DataFormatError(f"{path}:{lineno}: expected {file_d + 2} fields, got {len(row)}")
        try:
            pts.append([float(c) for c in row[:file_d]])
            ch = float(row[file_d])
            ys.append(float(row[file_d + 1]))
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
        if not all(np.isfinite(pts[-1])) or not np.isfinite(ys[-1]):
            raise DataFormatError(f"{path}:{lineno}: non-finite value")
        if ch != int(ch):
            raise DataFormatError(f"{path}:{lineno}: channel must be an integer")
        chans.append(int(ch))
    if not pts:
        raise DataFormatError(f"{path}: no data rows")

    pts = np.array(pts)
    chans = np.array(chans)
    ys = np.array(ys)
    top = int(chans.max())
    if chans.min() < 0 or top > file_d or (p is not None and top > p):
        bad = int(chans[(chans < 0) | (chans > (file_d if p is None else p))][0])
        raise SchemaError(f"{path}: unknown channel index {bad}")
    p = top if p is None else p
    present = set(chans.tolist())
    missing = [c for c in range(p + 1) if c not in present]
    if missing:
        raise SchemaError(f"{path}: channels {missing} have no observations")
    sel = [chans == c for c in range(p + 1)]
    if box is None:
        # bounding box of the data; a constant coordinate gets a unit-width interval
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        flat = hi <= lo
        box = np.column_stack([np.where(flat, lo - 0.5, lo), np.where(flat, hi + 0.5, hi)])
    try:
        return MixedDataset(
            pts[sel[0]],
            ys[sel[0]],
            grad_t=tuple(pts[m] for m in sel[1:]),
            grad_y=tuple(ys[m] for m in sel[1:]),
            box=box,
        )
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def materialize_coef(model: FittedModel, chunk: int = 16) -> np.ndarray:
    """Primal coefficients of a model, forming them from the dual solution
    in row chunks if necessary."""
    if model.coef is not None:
        return model.coef
    beta, rows = model.dual
    coef = np.zeros((model.p + 1) * model.M)
    offset = 0
    for deriv, u in rows:
        for start in range(0, u.shape[0], chunk):
            part = u[start : start + chunk]
            b = beta[offset + start : offset + start + part.shape[0]]
            coef += b @ augmented_rows(model.feature_map, part, model.p, deriv)
        offset += u.shape[0]
    return coef


def model_record(model: FittedModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "features": model.feature_map.config_record(),
        "p": model.p,
        "lambda": model.lam,
        "weights": [float(w) for w in model.weights],
        "y_means": [float(x) for x in model.y_means],
        "center": [float(x) for x in model.center],
        "box_lo": [float(x) for x in model.lo],
        "box_width": [float(x) for x in model.width],
        "coef": [float(x) for x in materialize_coef(model)],
    }


def save_model(model: FittedModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_record(model), fh)
        fh.write("\n")


def load_model(path) -> FittedModel:
    with open(path) as fh:
        rec = json.load(fh)
    if rec.get("format") != MODEL_FORMAT:
        raise DataFormatError(f"{path}: not a {MODEL_FORMAT} file")
    if rec.get("version") != MODEL_VERSION:
        raise DataFormatError(f"{path}: unsupported model version {rec.get('version')}")
    fc = rec["features"]
    fmap = build_feature_map(
        fc["d"],
        fc["r"],
        fc["s"],
        tuple(KernelSpec.from_record(k) for k in fc["kernels"]),
        p_max=fc["p_max"],
        seed=fc["seed"],
        cap=None,
    )
    coef = np.array(rec["coef"], dtype=float)
    if coef.size != (rec["p"] + 1) * fmap.M:
        raise SchemaError(f"{path}: coefficient vector has wrong length")
    return FittedModel(
        feature_map=fmap,
        p=int(rec["p"]),
        coef=coef,
        y_means=np.array(rec["y_means"]),
        center=np.array(rec["center"]),
        lo=np.array(rec["box_lo"]),
        width=np.array(rec["box_width"]),
        lam=float(rec["lambda"]),
        weights=tuple(rec["weights"]),
    )
