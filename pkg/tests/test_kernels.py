"""Parity of the compiled and pure kernel backends on a corpus tube."""

import numpy as np
import pytest

from spectube._kernels import available_backends
from spectube.levelset import (
    _seed_on_loop,
    _vertex_face_csr,
    designate_gamma_loops,
    face_gradients,
)
from spectube.mesh import boundary_arc_length_parameterization

BACKENDS = available_backends()

needs_both = pytest.mark.skipif(
    "compiled" not in BACKENDS, reason="compiled kernel not built"
)


@pytest.fixture(scope="module")
def setup(request):
    corpus = request.getfixturevalue("corpus")
    mesh, _ = corpus.mesh("tube_bent_gap")
    field = corpus.field("tube_bent_gap")
    vals = field.values
    grads = face_gradients(mesh, vals)
    vf_off, vf_ids = _vertex_face_csr(mesh)
    g0, _ = designate_gamma_loops(mesh, vals)
    loop, lth = boundary_arc_length_parameterization(
        mesh, g0, int(mesh.boundary_loops[g0][0]))
    return mesh, vals, grads, vf_off, vf_ids, loop, lth


@needs_both
def test_iso_segment_parity(setup):
    mesh, vals, *_ = setup
    for t in (0.08, 0.25, 0.5, 0.75, 0.93):
        t_eff = float(t)
        while np.any(vals == t_eff):
            t_eff += 1e-12
        out = {k: be.extract_iso_segments(vals, mesh.faces,
                                          mesh.face_neighbors, t_eff)
               for k, be in BACKENDS.items()}
        a, b = out["pure"], out["compiled"]
        assert len(a) == len(b)
        for ca, cb in zip(a, b):
            assert np.array_equal(ca[0], cb[0])
            assert np.array_equal(ca[1], cb[1])
            assert np.array_equal(ca[2], cb[2])
            assert np.array_equal(ca[3], cb[3])
            assert ca[4] == cb[4]


@needs_both
def test_streamline_parity(setup):
    mesh, vals, grads, vf_off, vf_ids, loop, lth = setup
    bmask = mesh.is_boundary_vertex()
    for k in range(0, 64, 3):
        f, bary = _seed_on_loop(mesh, loop, lth, 2 * np.pi * k / 64)
        res = {kk: be.trace_streamline(
            mesh.vertices, mesh.faces, mesh.face_neighbors, vf_off, vf_ids,
            vals, grads, f, bary, 200000, bmask)
            for kk, be in BACKENDS.items()}
        pa, ta, sa = res["pure"]
        pb, tb, sb = res["compiled"]
        assert sa == sb
        assert pa.shape == pb.shape
        assert np.allclose(pa, pb, atol=1e-12)
        assert np.allclose(ta, tb, atol=1e-12)
