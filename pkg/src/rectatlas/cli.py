"""Batch pipelines: generate fixtures, align towers, transport sections,
sweep blow-up defects.  Every command reads one JSON config, writes CSV
reports plus rendered figures into the output directory, and exits nonzero
when an assertion of the run fails.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import figures
from .atlas import AlignmentError, align
from .blowup import BlowupConfig, blowup_sweep
from .fixtures import FixtureSpec, make_atlas_tower, generate
from .space import ball
from .storage import canonical_json, save_atlas, save_space, write_csv
from .tangent import (build_transport_plan, combine, contraction_profile,
                      iso_inverse, iso_step, l2_norm, pointwise_norm,
                      random_section)

DEFAULTS = {
    "fixture": {"kind": "euclidean_patch", "k": 2, "n_points": 2000},
    "levels": 4,
    "tower": "rotation",
    "eta": 0.02,
    "probes": 20,
    "window": 2.0,
    "tol": 0.2,
    "base_points": 4,
    "grid_step": 0.25,
    "scales": None,
}


def _load_config(path: str | None, overrides: dict) -> dict:
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS.items()}
    if path:
        user = json.loads(Path(path).read_text())
        for key, val in user.items():
            if key == "fixture":
                cfg["fixture"].update(val)
            else:
                cfg[key] = val
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    return cfg


def _fixture_spec(cfg: dict) -> FixtureSpec:
    f = dict(cfg["fixture"])
    if "seed" in cfg and cfg["seed"] is not None:
        f["seed"] = cfg["seed"]
    f.setdefault("seed", 0)
    if "angles" in f:
        f["angles"] = tuple(f["angles"])
    return FixtureSpec(**f)


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def _manifest(out: Path, command: str, cfg: dict, outputs: list, status: str):
    payload = {
        "command": command,
        "config_sha256": _config_hash(cfg),
        "seed": cfg.get("seed", cfg["fixture"].get("seed", 0)),
        "outputs": sorted(outputs),
        "status": status,
    }
    (out / "manifest.json").write_text(canonical_json(payload))


def cmd_gen(cfg: dict, out: Path) -> int:
    spec = _fixture_spec(cfg)
    space, atlas, truth = generate(spec)
    save_space(out / "space.json", space)
    save_atlas(out / "atlas_level0.json", atlas)
    rows = [{"chart": i, "k": c.k, "points": int(c.domain.size),
             "eps": c.eps, "comp": c.comp} for i, c in enumerate(atlas.charts)]
    write_csv(out / "charts.csv", ["chart", "k", "points", "eps", "comp"], rows)
    outputs = ["space.json", "atlas_level0.json", "charts.csv"]
    _manifest(out, "gen", cfg, outputs, "pass")
    return 0


def cmd_align(cfg: dict, out: Path) -> int:
    spec = _fixture_spec(cfg)
    levels = int(cfg["levels"])
    space, atlases, planted, _ = make_atlas_tower(spec, levels, kind=cfg["tower"])
    save_space(out / "space.json", space)
    rows, status = [], "pass"
    prev = atlases[0]
    nets: dict = {}
    for m in range(1, levels + 1):
        delta_m = 2.0 ** (-m)
        try:
            aligned, tree, report = align(space, prev, atlases[m], delta_m,
                                          mass_tol=cfg["eta"], nets=nets)
            for r in report.rows:
                rows.append({"level": m, "delta_n": delta_m, **r,
                             "exceptional_mass": report.exceptional_mass,
                             "status": "ok"})
            save_atlas(out / f"atlas_aligned_{m}.json", aligned)
            prev = aligned
        except AlignmentError as exc:
            rows.append({"level": m, "delta_n": delta_m, "k": -1, "parent": -1,
                         "member": -1, "points": 0, "defect": float("nan"),
                         "net_resolution": delta_m, "exceptional_mass": float("nan"),
                         "status": f"fail: {exc}"})
            status = "fail"
            break
    header = ["level", "delta_n", "k", "parent", "member", "points", "defect",
              "net_resolution", "exceptional_mass", "status"]
    write_csv(out / "alignment.csv", header, rows)
    ok_rows = [r for r in rows if r["status"] == "ok"]
    if ok_rows:
        figures.fig_alignment(ok_rows, out / "alignment.png")
    outputs = ["space.json", "alignment.csv"] + (
        ["alignment.png"] if ok_rows else []) + [
        f"atlas_aligned_{m}.json" for m in range(1, levels + 1)
        if (out / f"atlas_aligned_{m}.json").exists()]
    _manifest(out, "align", cfg, outputs, status)
    return 0 if status == "pass" else 1


def cmd_transport(cfg: dict, out: Path, threads: int = 1) -> int:
    spec = _fixture_spec(cfg)
    levels = int(cfg["levels"])
    space, atlases, planted, _ = make_atlas_tower(spec, levels, kind=cfg["tower"])
    plan = build_transport_plan(space, atlases, mass_tol=cfg["eta"])
    rng = np.random.default_rng(spec.seed + 1)
    probes = [random_section(plan.bundle, rng) for _ in range(int(cfg["probes"]))]

    status = "pass"
    profile = contraction_profile(plan, probes)
    contraction_rows = []
    for r in profile:
        bound = 2.0 ** (-r["level"]) * 1.1
        ok = r["empirical"] <= bound
        if cfg["tower"] == "rotation" and not ok:
            status = "fail"
        contraction_rows.append({**r, "bound": bound, "status": "ok" if ok else "fail"})
    write_csv(out / "contraction.csv",
              ["level", "matrix_sup", "empirical", "bound", "status"],
              contraction_rows)
    figures.fig_contraction(profile, out / "contraction.png")

    norm_rows, trip_rows = [], []
    floor = 1e-12
    for n in range(levels + 1):
        worst_trip, worst_dev = 0.0, 0.0
        for v in probes:
            w = iso_step(plan, v, n)
            v2 = iso_inverse(plan, w, n)
            worst_trip = max(worst_trip, float(np.max(np.abs(
                v2.values[plan.covered] - v.values[plan.covered]), initial=0.0)))
            nv, nw = pointwise_norm(v), pointwise_norm(w)
            dev = np.abs(nw - nv)[plan.covered] / np.maximum(nv[plan.covered], floor)
            worst_dev = max(worst_dev, float(np.max(dev, initial=0.0)))
        bound = (1 + 2.0 ** (-n)) ** 2 - 1 if n else 0.0
        trip_ok = worst_trip <= 1e-10
        if not trip_ok:
            status = "fail"
        trip_rows.append({"level": n, "roundtrip": worst_trip,
                          "status": "ok" if trip_ok else "fail"})
        norm_rows.append({"level": n, "deviation": worst_dev, "bound": max(bound, 1e-10),
                          "exceptional_mass": plan.exceptional_mass})
    write_csv(out / "roundtrip.csv", ["level", "roundtrip", "status"], trip_rows)
    write_csv(out / "norm.csv", ["level", "deviation", "bound", "exceptional_mass"],
              norm_rows)
    figures.fig_norm(norm_rows, out / "norm.png")
    outputs = ["contraction.csv", "contraction.png", "roundtrip.csv", "norm.csv",
               "norm.png"]
    _manifest(out, "transport", cfg, outputs, status)
    return 0 if status == "pass" else 1


def cmd_blowup(cfg: dict, out: Path, threads: int = 1) -> int:
    spec = _fixture_spec(cfg)
    space, atlas, truth = generate(spec)
    rng = np.random.default_rng(spec.seed + 2)
    covered = np.concatenate([c.domain for c in atlas.charts])
    bases = rng.choice(covered, size=min(int(cfg["base_points"]), covered.size),
                       replace=False)
    scales = cfg["scales"] or [0.25 * 2.0 ** (-n) for n in range(int(cfg["levels"]) + 1)]
    R, eps = float(cfg["window"]), float(cfg["tol"])
    resolution = space.resolution()

    def sweep(x):
        bc = BlowupConfig(x=int(x), scales=tuple(scales), window=R, tol=eps)
        return blowup_sweep(space, atlas, bc, grid_step=float(cfg["grid_step"]))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(sweep, bases))

    rows, status = [], "pass"
    for x, (records, n0) in zip(bases, results):
        for rec in records:
            row = {"base_point": int(x), "n": rec.n, "r_n": rec.r_n,
                   "distortion": rec.distortion, "coverage_gap": rec.coverage_gap,
                   "pairs_used": rec.pairs_used, "grid_points": rec.grid_points,
                   "n0": n0 if n0 is not None else -1,
                   "status": "uncovered" if rec.uncovered else "ok"}
            if spec.kind == "euclidean_patch" and not rec.uncovered:
                bound = max(1e-9, resolution / rec.r_n)
                gap_bound = float(cfg["grid_step"]) + resolution / rec.r_n
                if rec.distortion > bound or rec.coverage_gap > gap_bound:
                    row["status"] = "fail"
                    status = "fail"
            rows.append(row)
    header = ["base_point", "n", "r_n", "distortion", "coverage_gap",
              "pairs_used", "grid_points", "n0", "status"]
    write_csv(out / "blowup.csv", header, rows)
    plot_rows = [r for r in rows if r["base_point"] == rows[0]["base_point"]]
    for r in plot_rows:
        r["tol"] = eps
    figures.fig_blowup(plot_rows, out / "blowup.png")
    _manifest(out, "blowup", cfg, ["blowup.csv", "blowup.png"], status)
    return 0 if status == "pass" else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rectatlas",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "align", "transport", "blowup"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--out", type=str, required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--levels", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)

    cfg = _load_config(args.config, {"seed": args.seed, "levels": args.levels})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "gen":
        return cmd_gen(cfg, out)
    if args.command == "align":
        return cmd_align(cfg, out)
    if args.command == "transport":
        return cmd_transport(cfg, out, args.threads)
    return cmd_blowup(cfg, out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
