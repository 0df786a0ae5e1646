import numpy as np
import pytest

from spectube import synth
from spectube.errors import SelfIntersectionError, SpecValidationError
from spectube.fileio import save_mesh
from spectube.mesh import validate_cylinder_topology


def test_flat_cylinder_valid():
    spec = synth.corpus_specs()["cyl_plain"]
    mesh, truth = synth.generate_tube(spec)
    rep = validate_cylinder_topology(mesh)
    assert rep.is_cylinder and rep.euler_characteristic == 0
    assert truth.folds == []


def test_ring_fold_counts():
    spec = synth.TubeSpec(
        spine="straight", length=120.0, radius=12.0,
        rings=(synth.FoldRing(s_center=60.0, n_folds=3, fold_depth=4.0,
                              fold_width=24.0, theta_gap=0.8),),
        resolution=(64, 48),
    )
    _, truth = synth.generate_tube(spec)
    assert len(truth.folds) == 3


def test_generator_determinism(tmp_path):
    spec = synth.corpus_specs()["tube_straight_rings"]
    m1, _ = synth.generate_tube(spec)
    m2, _ = synth.generate_tube(spec)
    assert np.array_equal(m1.vertices, m2.vertices)
    p1 = tmp_path / "a.ply"
    p2 = tmp_path / "b.ply"
    save_mesh(p1, m1)
    save_mesh(p2, m2)
    assert p1.read_bytes() == p2.read_bytes()


def test_pinch_measurement():
    spec = synth.corpus_specs()["tube_pinch05"]
    mesh, truth = synth.generate_tube(spec)
    na, nc = spec.resolution
    rows = mesh.vertices.reshape(na, nc, 3)
    radii = np.linalg.norm(rows[:, :, :2], axis=2).max(axis=1)
    assert radii.min() / np.median(radii) < 0.1
    assert truth.collapsed_s_ranges
    assert any(f.in_collapsed for f in truth.folds)

    spec10 = synth.corpus_specs()["tube_pinch10"]
    mesh10, truth10 = synth.generate_tube(spec10)
    rows10 = mesh10.vertices.reshape(na, nc, 3)
    radii10 = np.linalg.norm(rows10[:, :, :2], axis=2).max(axis=1)
    assert radii10.min() / np.median(radii10) >= 0.1 - 1e-12
    assert not truth10.collapsed_s_ranges
    del na, nc


def test_identity_deformation():
    spec = synth.TubeSpec(
        spine="straight", length=120.0, radius=12.0,
        rings=(synth.FoldRing(s_center=60.0, n_folds=3, fold_depth=4.0,
                              fold_width=24.0, theta_gap=0.8),),
        resolution=(48, 48),
    )
    src, dst, truth = synth.deform_pair(spec, synth.Deformation())
    assert np.allclose(src.vertices, dst.vertices)
    d = np.linalg.norm(truth.landmarks_src - truth.landmarks_dst, axis=1)
    assert d.max() < 1e-12


def test_noise_bounded():
    spec = synth.TubeSpec(
        spine="straight", length=120.0, radius=12.0,
        rings=(synth.FoldRing(s_center=60.0, n_folds=3, fold_depth=4.0,
                              fold_width=24.0, theta_gap=0.8),),
        resolution=(48, 48),
    )
    clean = synth.deform_pair(spec, synth.Deformation(twist=0.2, seed=9))
    noisy = synth.deform_pair(spec, synth.Deformation(twist=0.2, noise_mm=0.2,
                                                      seed=9))
    d = np.linalg.norm(clean[1].vertices - noisy[1].vertices, axis=1)
    assert d.max() <= 0.2 + 1e-12
    lm = np.linalg.norm(clean[2].landmarks_dst - noisy[2].landmarks_dst, axis=1)
    assert lm.max() <= 0.2 + 1e-9


def test_fold_truth_has_negative_axial_curvature():
    spec = synth.corpus_specs()["tube_straight_rings"]
    mesh, truth = synth.generate_tube(spec)
    na, nc = spec.resolution
    # axial second difference of the radius at each truth fold's center
    for f in truth.folds[:4]:
        s = np.array([f.s_center - 2.0, f.s_center, f.s_center + 2.0])
        r = synth.surface_radius(spec, s, np.full(3, f.theta_center))
        d2 = r[0] - 2 * r[1] + r[2]
        assert d2 < 0


def test_spec_validation():
    with pytest.raises(SpecValidationError):
        synth.TubeSpec(resolution=(8, 8)).validate()
    with pytest.raises(SpecValidationError):
        synth.TubeSpec(
            rings=(synth.FoldRing(s_center=10, fold_depth=20.0),),
            radius=12.0).validate()
    with pytest.raises(SpecValidationError):
        synth.TubeSpec(spine="bend", bend_angle=0.0).validate()


def test_self_intersection_guard():
    spec = synth.TubeSpec(spine="bend", length=60.0, radius=12.0,
                          bend_angle=3.0, resolution=(32, 32))
    with pytest.raises(SelfIntersectionError):
        synth.deform_pair(spec, synth.Deformation(bend_change=2.0))


def test_spec_json_roundtrip():
    spec = synth.corpus_specs()["tube_bent_gap"]
    text = synth.spec_to_json(spec)
    again = synth.spec_from_json(text)
    assert again == spec


def test_spec_json_unknown_key():
    with pytest.raises(SpecValidationError):
        synth.spec_from_json('{"spine": "straight", "bogus": 1}')


def test_landmark_pairs_bijective():
    spec, deform = synth.corpus_pairs()["pair_straight"]
    _, _, truth = synth.deform_pair(spec, deform)
    assert truth.landmarks_src.shape == truth.landmarks_dst.shape
    assert truth.landmarks_src.shape[0] == len(truth.folds)
