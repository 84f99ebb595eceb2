"""Schema-versioned JSON/binary serialization for spaces, atlases, sections.

JSON payloads are written canonically (sorted keys, fixed separators) so a
rerun with the same inputs produces byte-identical files.  Dense distance
tables live next to the space file as little-endian float64, row-major.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .atlas import Atlas, Chart, RefinementTree
from .space import Space
from .tangent import GHBundle, Section

__all__ = [
    "StorageError", "save_space", "load_space", "save_atlas", "load_atlas",
    "save_section", "load_section", "save_scalar_field", "load_scalar_field",
    "save_refinement", "load_refinement", "write_csv", "canonical_json",
]

SCHEMAS = {
    "space": "rectatlas/space/1",
    "atlas": "rectatlas/atlas/1",
    "section": "rectatlas/section/1",
    "scalar": "rectatlas/scalar-field/1",
    "refinement": "rectatlas/refinement/1",
}


class StorageError(ValueError):
    """Malformed file or schema mismatch."""


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def _write(path, payload):
    Path(path).write_text(canonical_json(payload))


def _read(path, schema_key):
    try:
        payload = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise StorageError(f"malformed file {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("schema") != SCHEMAS[schema_key]:
        raise StorageError(
            f"{path}: expected schema {SCHEMAS[schema_key]!r}, "
            f"found {payload.get('schema')!r}" if isinstance(payload, dict)
            else f"{path}: not a JSON object")
    return payload


def save_space(path, space: Space, table_name: str | None = None) -> None:
    """Write a space file; a dense metric goes to a sibling binary table."""
    path = Path(path)
    payload = {
        "schema": SCHEMAS["space"],
        "points": space.n_points,
        "weights": space.weights.tolist(),
    }
    if space.dim_label is not None:
        payload["dim_label"] = space.dim_label.tolist()
    if space.coords is not None:
        payload["coords"] = space.coords.tolist()
    else:
        table_name = table_name or (path.stem + ".dist.bin")
        table = np.ascontiguousarray(space.dist_table, dtype="<f8")
        (path.parent / table_name).write_bytes(table.tobytes())
        payload["dist_table"] = table_name
    _write(path, payload)


def load_space(path) -> Space:
    path = Path(path)
    payload = _read(path, "space")
    n = payload["points"]
    weights = np.asarray(payload["weights"], dtype=float)
    dim_label = payload.get("dim_label")
    has_coords = "coords" in payload
    has_table = "dist_table" in payload
    if has_coords == has_table:
        raise StorageError(f"{path}: exactly one of coords/dist_table required")
    if has_coords:
        return Space(weights=weights, coords=np.asarray(payload["coords"], dtype=float),
                     dim_label=dim_label)
    raw = (path.parent / payload["dist_table"]).read_bytes()
    if len(raw) != 8 * n * n:
        raise StorageError(f"{path}: distance table has wrong size")
    table = np.frombuffer(raw, dtype="<f8").reshape(n, n)
    return Space(weights=weights, dist_table=table.copy(), dim_label=dim_label)


def save_atlas(path, atlas: Atlas) -> None:
    payload = {
        "schema": SCHEMAS["atlas"],
        "level": atlas.level,
        "eps": atlas.eps,
        "delta": atlas.delta,
        "charts": [
            {"k": c.k, "domain": c.domain.tolist(), "phi": c.phi.tolist(),
             "eps": c.eps, "comp": c.comp}
            for c in atlas.charts
        ],
    }
    _write(path, payload)


def load_atlas(path) -> Atlas:
    payload = _read(path, "atlas")
    charts = [Chart(k=c["k"], domain=np.asarray(c["domain"], dtype=np.int64),
                    phi=np.asarray(c["phi"], dtype=float),
                    eps=c.get("eps", 0.0), comp=c.get("comp", 1.0))
              for c in payload["charts"]]
    return Atlas(charts=charts, level=payload["level"],
                 eps=payload.get("eps", 0.0), delta=payload.get("delta", 0.0))


def save_section(path, section: Section, bundle_ref: str = "") -> None:
    payload = {
        "schema": SCHEMAS["section"],
        "bundle": bundle_ref,
        "fiber_dim": section.bundle.fiber_dim.tolist(),
        "vectors": section.values.tolist(),
    }
    _write(path, payload)


def load_section(path, space: Space) -> Section:
    payload = _read(path, "section")
    bundle = GHBundle(space=space, fiber_dim=np.asarray(payload["fiber_dim"],
                                                        dtype=np.int64))
    return Section(bundle=bundle, values=np.asarray(payload["vectors"], dtype=float))


def save_scalar_field(path, values) -> None:
    vals = [None if (v is None or (isinstance(v, float) and np.isnan(v))) else float(v)
            for v in np.asarray(values, dtype=float).tolist()]
    _write(path, {"schema": SCHEMAS["scalar"], "values": vals})


def load_scalar_field(path) -> np.ndarray:
    payload = _read(path, "scalar")
    return np.asarray([np.nan if v is None else v for v in payload["values"]],
                      dtype=float)


def save_refinement(path, tree: RefinementTree) -> None:
    payload = {
        "schema": SCHEMAS["refinement"],
        "pairs": [[int(c), int(p)] for c, p in enumerate(tree.parent_of)],
        "splits": tree.splits,
        "dropped_mass": tree.dropped_mass,
    }
    _write(path, payload)


def load_refinement(path) -> dict:
    return _read(path, "refinement")


def write_csv(path, header: list, rows: list) -> None:
    """Plain delimited report; values are formatted with repr-fidelity."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[h] if isinstance(row, dict) else row[i]
                             for i, h in enumerate(header)])
