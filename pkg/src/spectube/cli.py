"""Batch driver: the registration/segmentation/flattening pipeline as
composable subcommands with a JSON config.

    spectube <fiedler|segment-folds|register|flatten|synth|eval>
             --config cfg.json [--out DIR] [--seed N]

Exit codes: 0 success, 2 validation failure, 3 numerical failure; failures
emit a machine-readable JSON line on stderr. All outputs are deterministic
for a fixed config.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import registration as reg
from . import synth
from .errors import (
    DegenerateFaceError,
    NonManifoldError,
    ParseError,
    SpectubeError,
    SpecValidationError,
    VertexNotOnLoopError,
)
from .evaluate import distance_error, score_detection, score_table, score_to_json
from .fileio import load_mesh, rainbow_colormap, write_ply
from .flatten import extract_consistent_cut, flatten, flat_to_obj, flat_to_svg, geodesic_cut
from .folds import detect_and_segment, fold_face_labels, folds_to_json
from .mesh import validate_cylinder_topology
from .spectral import compute_fiedler, compute_spectrum, dump_eigenpairs
from .levelset import parameterize_tube

_ALLOWED_KEYS = {
    "mesh", "src_mesh", "dst_mesh", "base_vertex", "src_base", "dst_base",
    "ground_truth", "src_ground_truth", "dst_ground_truth", "landmarks",
    "n_levels", "n_curves", "bundle_quorum", "sigma", "sigma_fractions",
    "flow_step", "flow_iters", "flow_tol", "beta", "grid", "out_dir", "seed",
    "control_fraction", "cut_start", "cut_end", "tube_spec", "deformation",
    "corpus", "detected", "truth",
}

_RANGES = {
    "n_levels": (2, 4096),
    "n_curves": (8, 1024),
    "bundle_quorum": (0.0, 1.0),
    "flow_step": (1e-6, 1e3),
    "flow_iters": (1, 100000),
    "flow_tol": (0.0, 1.0),
    "beta": (0.0, 100.0),
    "grid": (16, 2048),
    "control_fraction": (0.0, 1.0),
}


@dataclass
class PipelineConfig:
    raw: dict = dc_field(default_factory=dict)

    @classmethod
    def load(cls, path, overrides=None):
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        unknown = set(raw) - _ALLOWED_KEYS
        if unknown:
            raise SpecValidationError(f"unknown config keys: {sorted(unknown)}")
        for key, (lo, hi) in _RANGES.items():
            if key in raw and not (lo <= float(raw[key]) <= hi):
                raise SpecValidationError(
                    f"config {key}={raw[key]} outside [{lo}, {hi}]"
                )
        cfg = cls(raw=raw)
        for k, v in (overrides or {}).items():
            if v is not None:
                cfg.raw[k] = v
        return cfg

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def require(self, key):
        if key not in self.raw:
            raise SpecValidationError(f"config key {key!r} required")
        return self.raw[key]

    def out_dir(self):
        out = self.get("out_dir", ".")
        os.makedirs(out, exist_ok=True)
        return out


def _load_cylinder(cfg, key="mesh"):
    mesh = load_mesh(cfg.require(key))
    report = validate_cylinder_topology(mesh)
    if not report.is_cylinder:
        raise SpecValidationError(
            f"{cfg.require(key)}: not a cylinder "
            f"(genus={report.genus}, boundaries={report.boundary_count})"
        )
    return mesh


def _pipeline(mesh, cfg, base_key="base_vertex"):
    field = compute_fiedler(mesh)
    base = cfg.get(base_key)
    kw = {}
    if cfg.get("n_curves"):
        kw["n_curves"] = int(cfg.get("n_curves"))
    param = parameterize_tube(mesh, field,
                              base_vertex=None if base is None else int(base),
                              **kw)
    result = detect_and_segment(
        mesh, field, param=param,
        n_levels=int(cfg.get("n_levels", 128)),
        quorum=float(cfg.get("bundle_quorum", 0.25)),
    )
    return field, result


def _load_truth_folds(path):
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return data


# ---- subcommands ------------------------------------------------------------------


def cmd_fiedler(cfg):
    mesh = _load_cylinder(cfg)
    field = compute_fiedler(mesh)
    out = cfg.out_dir()
    colors = rainbow_colormap(field.values)
    write_ply(os.path.join(out, "fiedler.ply"), mesh.vertices, mesh.faces,
              vertex_colors=colors)
    spectrum = compute_spectrum(mesh, k=2)
    dump_eigenpairs(os.path.join(out, "eigen"), spectrum)
    with open(os.path.join(out, "fiedler.json"), "w", encoding="utf-8") as fh:
        json.dump({
            "lambda1": field.lambda1,
            "min_vertex": field.min_vertex,
            "max_vertex": field.max_vertex,
        }, fh, indent=2, sort_keys=True)
    return 0


def cmd_segment_folds(cfg):
    mesh = _load_cylinder(cfg)
    field, result = _pipeline(mesh, cfg)
    out = cfg.out_dir()
    labels = fold_face_labels(mesh, result.folds)
    lab_norm = np.where(labels >= 0, (labels % 17) / 16.0, 0.0)
    face_colors = rainbow_colormap(lab_norm)
    face_colors[labels < 0] = (128, 128, 128)
    write_ply(os.path.join(out, "folds.ply"), mesh.vertices, mesh.faces,
              face_colors=face_colors)
    folds_to_json(os.path.join(out, "folds.json"), result)
    if cfg.get("ground_truth"):
        data = _load_truth_folds(cfg.get("ground_truth"))
        gt = [g["faces"] for g in data["folds"] if not g.get("in_collapsed")]
        score = score_detection(gt, [f.faces for f in result.folds], mesh)
        score_to_json(os.path.join(out, "score.json"), {"scan": score})
        with open(os.path.join(out, "score.txt"), "w", encoding="utf-8") as fh:
            fh.write(score_table({"scan": score}) + "\n")
    return 0


def cmd_register(cfg):
    src = _load_cylinder(cfg, "src_mesh")
    dst = _load_cylinder(cfg, "dst_mesh")
    f1 = compute_fiedler(src)
    f2 = compute_fiedler(dst)
    b1 = int(cfg.get("src_base", src.boundary_loops[0][0]))
    b2 = int(cfg.get("dst_base", dst.boundary_loops[0][0]))
    pairing, f1, f2 = reg.match_boundaries(src, f1, dst, f2, b1, b2)
    if pairing.src_flipped or pairing.dst_flipped:
        print(f"field flip applied: src={pairing.src_flipped} "
              f"dst={pairing.dst_flipped}")
    r1 = detect_and_segment(src, f1, n_levels=int(cfg.get("n_levels", 128)))
    r2 = detect_and_segment(dst, f2, n_levels=int(cfg.get("n_levels", 128)))
    p1, p2 = r1.parameterization, r2.parameterization
    grid = int(cfg.get("grid", 256))
    gmap = reg.global_register(p1, p2, pairing, grid, grid)
    sig = cfg.get("sigma_fractions", (0.06, 0.03, 0.015, 0.008))
    rmap, traces, _ = reg.refine_multiscale(
        gmap, r1.folds, p1, src, r2.folds, p2, dst, grid, grid,
        sigma_fractions=tuple(sig),
        step=float(cfg.get("flow_step", 4.0)),
        max_iters=int(cfg.get("flow_iters", 500)),
        tol=float(cfg.get("flow_tol", 1e-7)),
        beta=float(cfg.get("beta", 0.1)),
    )
    out = cfg.out_dir()
    reg.save_registration(os.path.join(out, "map_global"), gmap)
    reg.save_registration(os.path.join(out, "map_refined"), rmap)
    merged = reg.ConvergenceTrace()
    it = 0
    for tr in traces:
        for row in tr.iterations:
            merged.append(it, *row[1:])
            it += 1
    merged.to_csv(os.path.join(out, "trace.csv"))

    if cfg.get("landmarks"):
        with open(cfg.get("landmarks"), "r", encoding="utf-8") as fh:
            lm = json.load(fh)
        lm_src = np.asarray(lm["src"])
        lm_dst = np.asarray(lm["dst"])
        seed = int(cfg.get("seed", 42))
        frac = float(cfg.get("control_fraction", 0.75))
        reports = {}
        for name, m in (("global", gmap), ("refined", rmap)):
            rep = distance_error(m, src, p1, dst, p2, lm_src, lm_dst,
                                 control_fraction=frac, seed=seed)
            reports[name] = rep.to_dict()
        with open(os.path.join(out, "distance_errors.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(reports, fh, indent=2, sort_keys=True)
    return 0


def cmd_flatten(cfg):
    mesh = _load_cylinder(cfg)
    field, result = _pipeline(mesh, cfg)
    out = cfg.out_dir()
    start = cfg.get("cut_start")
    end = cfg.get("cut_end")
    start = None if start is None else int(start)
    end = None if end is None else int(end)
    cuts = {
        "consistent": extract_consistent_cut(
            mesh, field, result.folds, result.bundles,
            result.parameterization, start=start, end=end),
        "geodesic": geodesic_cut(mesh, field, start=start, end=end),
    }
    labels = fold_face_labels(mesh, result.folds)
    distortion = {}
    for kind, cut in cuts.items():
        flat = flatten(mesh, cut, field)
        distortion[kind] = flat.distortion_summary
        flat_to_obj(os.path.join(out, f"flat_{kind}.obj"), flat)
        flat_to_svg(os.path.join(out, f"flat_{kind}_fiedler.svg"), flat,
                    vertex_values=field.values[flat.orig_index])
        flat_to_svg(os.path.join(out, f"flat_{kind}_folds.svg"), flat,
                    face_labels=labels)
    with open(os.path.join(out, "distortion.json"), "w", encoding="utf-8") as fh:
        json.dump(distortion, fh, indent=2, sort_keys=True)
    return 0


def cmd_synth(cfg):
    out = cfg.out_dir()
    seed = cfg.get("seed")
    if cfg.get("corpus"):
        from .fileio import save_mesh
        for name, spec in synth.corpus_specs().items():
            mesh, truth = synth.generate_tube(spec)
            save_mesh(os.path.join(out, f"{name}.ply"), mesh)
            _truth_to_json(os.path.join(out, f"{name}_truth.json"), truth)
        return 0
    spec = synth.spec_from_json(json.dumps(cfg.require("tube_spec")))
    if seed is not None:
        spec = synth.TubeSpec(**{**spec.__dict__, "seed": int(seed)})
    from .fileio import save_mesh
    if cfg.get("deformation"):
        d = cfg.get("deformation")
        allowed = {"axial_stretch", "twist", "bend_change", "noise_mm", "seed"}
        unknown = set(d) - allowed
        if unknown:
            raise SpecValidationError(f"unknown deformation keys: {sorted(unknown)}")
        deform = synth.Deformation(**d)
        src, dst, truth = synth.deform_pair(spec, deform)
        save_mesh(os.path.join(out, "src.ply"), src)
        save_mesh(os.path.join(out, "dst.ply"), dst)
        _truth_to_json(os.path.join(out, "truth.json"), truth)
    else:
        mesh, truth = synth.generate_tube(spec)
        save_mesh(os.path.join(out, "tube.ply"), mesh)
        _truth_to_json(os.path.join(out, "truth.json"), truth)
    return 0


def _truth_to_json(path, truth):
    payload = {
        "folds": [
            {"label": f.label, "faces": [int(x) for x in f.faces],
             "in_collapsed": bool(f.in_collapsed),
             "center": [float(x) for x in f.center]}
            for f in truth.folds
        ],
        "collapsed_s_ranges": [list(map(float, r))
                               for r in truth.collapsed_s_ranges],
    }
    if truth.landmarks_src is not None:
        payload["landmarks"] = {
            "src": truth.landmarks_src.tolist(),
            "dst": truth.landmarks_dst.tolist(),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def cmd_eval(cfg):
    mesh = _load_cylinder(cfg)
    truth = _load_truth_folds(cfg.require("truth"))
    detected = _load_truth_folds(cfg.require("detected"))
    gt = [g["faces"] for g in truth["folds"] if not g.get("in_collapsed")]
    det = [d["faces"] for d in detected["folds"]]
    score = score_detection(gt, det, mesh)
    out = cfg.out_dir()
    score_to_json(os.path.join(out, "eval_score.json"), {"scan": score})
    print(score_table({"scan": score}))
    return 0


_COMMANDS = {
    "fiedler": cmd_fiedler,
    "segment-folds": cmd_segment_folds,
    "register": cmd_register,
    "flatten": cmd_flatten,
    "synth": cmd_synth,
    "eval": cmd_eval,
}

_VALIDATION_ERRORS = (SpecValidationError, ParseError, NonManifoldError,
                      DegenerateFaceError, VertexNotOnLoopError,
                      FileNotFoundError, KeyError)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="spectube", description=__doc__)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        cfg = PipelineConfig.load(args.config,
                                  overrides={"out_dir": args.out,
                                             "seed": args.seed})
        return _COMMANDS[args.command](cfg)
    except _VALIDATION_ERRORS as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc), "code": 2},
                  sys.stderr)
        sys.stderr.write("\n")
        return 2
    except SpectubeError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc), "code": 3},
                  sys.stderr)
        sys.stderr.write("\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
