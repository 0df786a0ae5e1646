#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Compares iso-contour extraction and gradient streamline tracing on a corpus
tube. Run from the repository root:

    python benchmarks/bench_kernels.py [--tube NAME] [--levels N] [--curves N]
"""

import argparse
import time

import numpy as np

from spectube import synth
from spectube._kernels import available_backends
from spectube.levelset import (
    _seed_on_loop,
    _vertex_face_csr,
    designate_gamma_loops,
    face_gradients,
)
from spectube.mesh import boundary_arc_length_parameterization
from spectube.spectral import compute_fiedler


def bench(tube="tube_bent_gap", n_levels=120, n_curves=64, repeats=3):
    spec = synth.corpus_specs()[tube]
    mesh, _ = synth.generate_tube(spec)
    field = compute_fiedler(mesh)
    vals = field.values
    grads = face_gradients(mesh, vals)
    vf_off, vf_ids = _vertex_face_csr(mesh)
    bmask = mesh.is_boundary_vertex()
    g0, _ = designate_gamma_loops(mesh, vals)
    loop, lth = boundary_arc_length_parameterization(
        mesh, g0, int(mesh.boundary_loops[g0][0]))
    seeds = [_seed_on_loop(mesh, loop, lth, 2 * np.pi * k / n_curves)
             for k in range(n_curves)]
    tvals = np.linspace(0.02, 0.98, n_levels)

    backends = available_backends()
    print(f"mesh: {tube} ({mesh.n_vertices} vertices, {mesh.n_faces} faces)")
    print(f"{'backend':<10} {'iso x' + str(n_levels):>14} "
          f"{'trace x' + str(n_curves):>14}")
    rows = {}
    for kind, be in backends.items():
        iso_best = np.inf
        trace_best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            for t in tvals:
                t_eff = float(t)
                while np.any(vals == t_eff):
                    t_eff += 1e-12
                be.extract_iso_segments(vals, mesh.faces,
                                        mesh.face_neighbors, t_eff)
            iso_best = min(iso_best, time.perf_counter() - t0)
            t0 = time.perf_counter()
            for f, bary in seeds:
                be.trace_streamline(mesh.vertices, mesh.faces,
                                    mesh.face_neighbors, vf_off, vf_ids,
                                    vals, grads, f, bary, 200000, bmask)
            trace_best = min(trace_best, time.perf_counter() - t0)
        rows[kind] = (iso_best, trace_best)
        print(f"{kind:<10} {iso_best:>12.4f}s {trace_best:>12.4f}s")
    if "pure" in rows and "compiled" in rows:
        pi, pt = rows["pure"]
        ci, ct = rows["compiled"]
        print(f"{'speedup':<10} {pi / ci:>12.1f}x {pt / ct:>12.1f}x")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--tube", default="tube_bent_gap")
    ap.add_argument("--levels", type=int, default=120)
    ap.add_argument("--curves", type=int, default=64)
    args = ap.parse_args()
    bench(args.tube, args.levels, args.curves)
