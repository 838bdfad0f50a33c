"""JSON round-trips for networks, instances, and covariance files.

Matrices are stored as row-major nested lists; floats survive the round
trip exactly because the encoder emits shortest-repr literals. Unknown
fields are ignored with a warning; missing or ill-typed fields raise
:class:`SchemaError` naming the offending path.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path
from typing import Any

import numpy as np

from .clca import Clca, StructureMatrix
from .errors import SchemaError
from .measures import GaussianMeasure
from .network import CanEdge, CanNode, CanSpec
from .synth import CanInstance, LocalInstance


def _warn_unknown(obj: dict, known: set[str], path: str) -> None:
    for key in obj:
        if key not in known:
            warnings.warn(f"ignoring unknown field {path}.{key}", stacklevel=3)


def _get(obj: dict, key: str, path: str):
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing required field")
    return obj[key]


def _matrix(value, path: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(path, f"not a numeric matrix: {exc}") from None
    if arr.ndim != 2:
        raise SchemaError(path, f"expected a 2-d matrix, got shape {arr.shape}")
    return arr


def _mat_list(arr: np.ndarray) -> list:
    return np.asarray(arr, dtype=float).tolist()


# -- network -----------------------------------------------------------------


def can_to_dict(can: CanSpec) -> dict:
    nodes = []
    for n in can.nodes:
        entry: dict[str, Any] = {"id": n.id, "dim": n.dim}
        if n.measure is not None:
            entry["cov"] = _mat_list(n.measure.cov)
        nodes.append(entry)
    edges = [
        {
            "fine": e.fine,
            "coarse": e.coarse,
            "structure": _mat_list(e.clca.structure.entries),
            "weights": _mat_list(e.clca.weights),
        }
        for e in can.edges
    ]
    return {"kind": "can", "nodes": nodes, "edges": edges}


def can_from_dict(doc: dict, path: str = "can") -> CanSpec:
    _warn_unknown(doc, {"kind", "nodes", "edges"}, path)
    nodes = []
    for i, entry in enumerate(_get(doc, "nodes", path)):
        npath = f"{path}.nodes[{i}]"
        _warn_unknown(entry, {"id", "dim", "cov"}, npath)
        measure = None
        if "cov" in entry:
            measure = GaussianMeasure(_matrix(entry["cov"], f"{npath}.cov"))
        nodes.append(CanNode(int(_get(entry, "id", npath)), int(_get(entry, "dim", npath)), measure))
    edges = []
    for i, entry in enumerate(doc.get("edges", [])):
        epath = f"{path}.edges[{i}]"
        _warn_unknown(entry, {"fine", "coarse", "structure", "weights"}, epath)
        structure = StructureMatrix(_matrix(_get(entry, "structure", epath), f"{epath}.structure"))
        weights = _matrix(_get(entry, "weights", epath), f"{epath}.weights")
        edges.append(
            CanEdge(int(_get(entry, "fine", epath)), int(_get(entry, "coarse", epath)), Clca(structure, weights))
        )
    return CanSpec(tuple(nodes), tuple(edges))


def serialize_can(can: CanSpec, path) -> None:
    Path(path).write_text(json.dumps(can_to_dict(can), indent=1) + "\n")


def deserialize_can(path) -> CanSpec:
    return can_from_dict(_load(path))


# -- instances ---------------------------------------------------------------


def local_instance_to_dict(instance: LocalInstance) -> dict:
    return {
        "kind": "local_instance",
        "ell": instance.sigma_l.dim,
        "h": instance.sigma_h.dim,
        "sigma_l": _mat_list(instance.sigma_l.cov),
        "sigma_h": _mat_list(instance.sigma_h.cov),
        "structure": _mat_list(instance.truth.structure.entries),
        "truth_weights": _mat_list(instance.truth.weights),
    }


def local_instance_from_dict(doc: dict, path: str = "local_instance") -> LocalInstance:
    _warn_unknown(doc, {"kind", "ell", "h", "sigma_l", "sigma_h", "structure", "truth_weights"}, path)
    sigma_l = GaussianMeasure(_matrix(_get(doc, "sigma_l", path), f"{path}.sigma_l"))
    sigma_h = GaussianMeasure(_matrix(_get(doc, "sigma_h", path), f"{path}.sigma_h"))
    truth = Clca(
        StructureMatrix(_matrix(_get(doc, "structure", path), f"{path}.structure")),
        _matrix(_get(doc, "truth_weights", path), f"{path}.truth_weights"),
    )
    return LocalInstance(sigma_l, sigma_h, truth)


def can_instance_to_dict(instance: CanInstance) -> dict:
    return {
        "kind": "can_instance",
        "topology": instance.topology,
        "can": can_to_dict(instance.can),
        "truth_closure": np.asarray(instance.truth_closure, dtype=int).tolist(),
        "structures": [
            {"fine_pos": c, "coarse_pos": r, "entries": _mat_list(b.entries)}
            for (c, r), b in sorted(instance.structures.items())
        ],
    }


def can_instance_from_dict(doc: dict, path: str = "can_instance") -> CanInstance:
    _warn_unknown(doc, {"kind", "topology", "can", "truth_closure", "structures"}, path)
    can = can_from_dict(_get(doc, "can", path), f"{path}.can")
    closure = np.array(_get(doc, "truth_closure", path), dtype=bool)
    structures = {}
    for i, entry in enumerate(_get(doc, "structures", path)):
        spath = f"{path}.structures[{i}]"
        _warn_unknown(entry, {"fine_pos", "coarse_pos", "entries"}, spath)
        key = (int(_get(entry, "fine_pos", spath)), int(_get(entry, "coarse_pos", spath)))
        structures[key] = StructureMatrix(_matrix(_get(entry, "entries", spath), f"{spath}.entries"))
    section = can.measures()
    truth_maps = {}  # planted maps are not persisted; closure pairs re-derivable
    return CanInstance(
        str(_get(doc, "topology", path)), can, section, closure, structures, truth_maps
    )


# -- misc --------------------------------------------------------------------


def load_covariance(path) -> GaussianMeasure:
    doc = _load(path)
    _warn_unknown(doc, {"cov", "kind"}, "covariance")
    return GaussianMeasure(_matrix(_get(doc, "cov", "covariance"), "covariance.cov"))


def save_covariance(mu: GaussianMeasure, path) -> None:
    Path(path).write_text(json.dumps({"kind": "covariance", "cov": _mat_list(mu.cov)}) + "\n")


def save_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _load(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError(str(path), "top-level document must be an object")
    return doc
