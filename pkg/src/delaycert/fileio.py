"""JSON model files, certificates and atomic writes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DimensionError, ModelFormatError
from .model import DelayedLfrModel, LfrBlock
from .polytope import UncertaintyPolytope

_REQUIRED = ("n", "m", "r", "delays", "theta", "blocks")
_BLOCK_FIELDS = ("A0", "Bq", "Cp", "Dpq", "degrees")


def _matrix(value, field):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"field {field!r} is not a numeric matrix", field) from exc
    if arr.size and arr.ndim != 2:
        raise ModelFormatError(f"field {field!r} must be an array of rows", field)
    return arr


def model_from_dict(data: dict) -> DelayedLfrModel:
    """Parse the JSON document layout into a model (no stability checks)."""
    if not isinstance(data, dict):
        raise ModelFormatError("model file must hold a JSON object", "<root>")
    for key in _REQUIRED:
        if key not in data:
            raise ModelFormatError(f"missing required field {key!r}", key)
    try:
        n, m, r = int(data["n"]), int(data["m"]), int(data["r"])
    except (TypeError, ValueError) as exc:
        raise ModelFormatError("n, m and r must be integers", "n") from exc
    delays = data["delays"]
    if not isinstance(delays, list):
        raise ModelFormatError("field 'delays' must be a list", "delays")
    theta = theta_from_dict(data["theta"])
    if not isinstance(data["blocks"], list):
        raise ModelFormatError("field 'blocks' must be a list", "blocks")
    blocks = []
    for i, raw in enumerate(data["blocks"]):
        if not isinstance(raw, dict):
            raise ModelFormatError(f"blocks[{i}] must be an object", f"blocks[{i}]")
        for key in _BLOCK_FIELDS:
            if key not in raw:
                raise ModelFormatError(f"missing required field 'blocks[{i}].{key}'", f"blocks[{i}].{key}")
        mats = {k: _matrix(raw[k], f"blocks[{i}].{k}") for k in _BLOCK_FIELDS[:4]}
        try:
            degrees = tuple(int(s) for s in raw["degrees"])
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(f"blocks[{i}].degrees must be integers", f"blocks[{i}].degrees") from exc
        try:
            blocks.append(LfrBlock(mats["A0"], mats["Bq"], mats["Cp"], mats["Dpq"], degrees))
        except (ValueError, DimensionError) as exc:
            raise ModelFormatError(f"blocks[{i}]: {exc}", f"blocks[{i}]") from exc
    try:
        delays = tuple(float(h) for h in delays)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError("delays must be numbers", "delays") from exc
    return DelayedLfrModel(n, m, r, delays, tuple(blocks), theta, data.get("forced"))


def theta_from_dict(raw) -> UncertaintyPolytope:
    if not isinstance(raw, dict) or "type" not in raw:
        raise ModelFormatError("field 'theta' needs a 'type'", "theta.type")
    kind = raw["type"]
    try:
        if kind == "box":
            for key in ("lower", "upper"):
                if key not in raw:
                    raise ModelFormatError(f"missing required field 'theta.{key}'", f"theta.{key}")
            return UncertaintyPolytope.from_box(raw["lower"], raw["upper"])
        if kind == "vertices":
            if "vertices" not in raw:
                raise ModelFormatError("missing required field 'theta.vertices'", "theta.vertices")
            return UncertaintyPolytope(raw["vertices"])
    except (ValueError, TypeError, DimensionError) as exc:
        raise ModelFormatError(f"theta: {exc}", "theta") from exc
    raise ModelFormatError(f"theta.type must be 'box' or 'vertices', got {kind!r}", "theta.type")


def model_to_dict(model: DelayedLfrModel) -> dict:
    th = model.theta
    if th.box is not None:
        theta = {"type": "box", "lower": th.box[0].tolist(), "upper": th.box[1].tolist()}
    else:
        theta = {"type": "vertices", "vertices": th.vertices.tolist()}
    out = {
        "n": model.n, "m": model.m, "r": model.r, "delays": list(model.delays), "theta": theta,
        "blocks": [{"A0": b.A0.tolist(), "Bq": b.Bq.tolist() if b.d else [],
                    "Cp": b.Cp.tolist() if b.d else [], "Dpq": b.Dpq.tolist() if b.d else [],
                    "degrees": list(b.degrees)} for b in model.blocks],
    }
    if model.forced is not None:
        out["forced"] = model.forced
    return out


def read_model(path) -> DelayedLfrModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ModelFormatError(f"cannot read {path}: {exc.strerror}", "<file>") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})", "<file>") from exc
    return model_from_dict(data)


def model_digest(model: DelayedLfrModel) -> str:
    """SHA-256 of the canonical (sorted-key, compact) JSON form."""
    blob = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_json(path, data) -> None:
    atomic_write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def atomic_write(path, text: str) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
