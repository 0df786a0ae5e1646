"""Shared fixtures: corpus tubes, fields, and detection results are expensive,
so they are computed once per session and cached by name."""

import numpy as np
import pytest

from spectube import synth
from spectube.folds import detect_and_segment
from spectube.spectral import compute_fiedler


class CorpusCache:
    def __init__(self):
        self._meshes = {}
        self._fields = {}
        self._detections = {}
        self._pairs = {}

    def mesh(self, name):
        if name not in self._meshes:
            spec = synth.corpus_specs()[name]
            self._meshes[name] = synth.generate_tube(spec)
        return self._meshes[name]

    def field(self, name):
        if name not in self._fields:
            mesh, _ = self.mesh(name)
            self._fields[name] = compute_fiedler(mesh)
        return self._fields[name]

    def detection(self, name):
        if name not in self._detections:
            mesh, _ = self.mesh(name)
            self._detections[name] = detect_and_segment(mesh, self.field(name))
        return self._detections[name]

    def pair(self, name):
        if name not in self._pairs:
            spec, deform = synth.corpus_pairs()[name]
            self._pairs[name] = synth.deform_pair(spec, deform)
        return self._pairs[name]


@pytest.fixture(scope="session")
def corpus():
    return CorpusCache()


@pytest.fixture(scope="session")
def cylinder(corpus):
    mesh, truth = corpus.mesh("cyl_plain")
    return mesh, truth, corpus.field("cyl_plain")


def make_grid_tube(radius_of_s, length, na, nc):
    """Open tube around the z axis with radius profile radius_of_s(s)."""
    s = np.linspace(0.0, length, na)
    theta = 2 * np.pi * np.arange(nc) / nc
    ss, tt = np.meshgrid(s, theta, indexing="ij")
    r = radius_of_s(ss)
    verts = np.stack([r * np.cos(tt), r * np.sin(tt), ss], axis=-1).reshape(-1, 3)
    from spectube.synth import _grid_faces
    from spectube.mesh import TriMesh
    return TriMesh(verts, _grid_faces(na, nc))
