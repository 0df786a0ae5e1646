import numpy as np
import pytest

from spectube import synth
from spectube.errors import EmptyLevelSetError, StagnationError
from spectube.levelset import (
    centerline,
    corresponding_point,
    designate_gamma_loops,
    extract_level_set,
    face_gradients,
    parameterize_tube,
    trace_integration_curve,
    uniform_level_sets,
)

def test_mid_level_circle_length(cylinder):
    mesh, _, field = cylinder
    loops = extract_level_set(mesh, field, 0.5)
    assert len(loops) == 1
    assert abs(loops[0].total_length - 2 * np.pi * 1.0) < 0.01 * 2 * np.pi


def test_level_set_closed_and_adjacent(cylinder):
    mesh, _, field = cylinder
    ls = extract_level_set(mesh, field, 0.37)[0]
    assert np.allclose(ls.points[0], ls.points[-1])
    nbr = mesh.face_neighbors
    for a, b in zip(ls.faces, np.roll(ls.faces, -1)):
        assert b in set(int(x) for x in nbr[a]) or a == b


def test_vertex_hit_perturbation(cylinder):
    mesh, _, field = cylinder
    t_hit = float(field.values[mesh.n_vertices // 2])
    loops = extract_level_set(mesh, field, t_hit)
    assert loops  # perturbation resolves the hit without duplication
    pts = loops[0].points[:-1]
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    assert d.min() >= 0.0


def test_empty_level_raises(cylinder):
    mesh, _, field = cylinder
    with pytest.raises(EmptyLevelSetError):
        # perturbed out of range: min of field is 0 exactly
        extract_level_set(mesh, np.clip(field.values, 0.2, 0.8), 0.1)


def test_uniform_levels_spacing(cylinder):
    mesh, _, field = cylinder
    levels = uniform_level_sets(mesh, field, 3)
    assert sorted({ls.t for ls in levels}) == [0.25, 0.5, 0.75]
    single = uniform_level_sets(mesh, field, 1)
    assert {ls.t for ls in single} == {0.5}


def test_distinct_levels_do_not_intersect(cylinder):
    mesh, _, field = cylinder
    a = extract_level_set(mesh, field, 0.4)[0].points
    b = extract_level_set(mesh, field, 0.6)[0].points
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    assert d.min() > 0


def test_trace_vertical_rule_line(cylinder):
    mesh, _, field = cylinder
    param = parameterize_tube(mesh, field)
    for c in param.curves[::8]:
        az0 = np.arctan2(c.points[0, 1], c.points[0, 0])
        az1 = np.arctan2(c.points[-1, 1], c.points[-1, 0])
        d = (az1 - az0 + np.pi) % (2 * np.pi) - np.pi
        assert abs(d) < 1e-3
        assert np.all(np.diff(c.tvals) > 0)


def test_parallel_curves_never_intersect(cylinder):
    mesh, _, field = cylinder
    param = parameterize_tube(mesh, field)
    a = param.curves[0].points
    b = param.curves[len(param.curves) // 2].points
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    assert d.min() > 0.1


def test_stagnation_at_interior_maximum():
    # height field capped in the middle: gradient vanishes on the plateau ring
    spec = synth.TubeSpec(spine="straight", length=10.0, radius=1.0,
                          resolution=(32, 24), rings=())
    mesh, _ = synth.generate_tube(spec)
    h = mesh.vertices[:, 2]
    values = np.minimum(h / 10.0, 0.5)  # flat upper half
    grads = face_gradients(mesh, values)
    from spectube.levelset import _seed_on_loop
    from spectube.mesh import boundary_arc_length_parameterization
    g0, _ = designate_gamma_loops(mesh, values)
    loop, lth = boundary_arc_length_parameterization(
        mesh, g0, int(mesh.boundary_loops[g0][0]))
    f, bary = _seed_on_loop(mesh, loop, lth, 0.3)
    with pytest.raises(StagnationError):
        trace_integration_curve(mesh, values, f, bary, grads=grads)


def test_parameterization_matches_azimuth_and_field(cylinder):
    mesh, _, field = cylinder
    param = parameterize_tube(mesh, field)
    az = np.arctan2(mesh.vertices[:, 1], mesh.vertices[:, 0]) % (2 * np.pi)
    base_az = az[param.base_vertex]
    d = (param.theta - (az - base_az)) % (2 * np.pi)
    d = np.minimum(d, 2 * np.pi - d)
    assert d.max() < 1e-2
    assert np.array_equal(param.t, field.values)
    # analytic t along the tube: the scaled axial cosine mode
    h = mesh.vertices[:, 2]
    analytic = (1 - np.cos(np.pi * h / h.max())) / 2
    assert np.abs(param.t - analytic).max() < 1e-2


def test_base_vertex_shift_rotates_theta(cylinder):
    mesh, _, field = cylinder
    g0, _ = designate_gamma_loops(mesh, field.values)
    loop = mesh.boundary_loops[g0]
    base = int(loop[0])
    anti = int(loop[loop.shape[0] // 2])
    p1 = parameterize_tube(mesh, field, base_vertex=base)
    p2 = parameterize_tube(mesh, field, base_vertex=anti)
    d = (p1.theta - p2.theta - np.pi) % (2 * np.pi)
    d = np.minimum(d, 2 * np.pi - d)
    assert np.quantile(d, 0.98) < 0.05


def test_centerline_straight_cylinder(cylinder):
    mesh, _, field = cylinder
    line = centerline(mesh, field, 9)
    assert line.points.shape[0] == 9
    assert np.abs(line.points[:, :2]).max() < 1e-3 * 1.0
    assert np.all(np.diff(line.tvals) > 0)


def test_centerline_tracks_bend(corpus):
    mesh, truth = corpus.mesh("tube_bent_gap")
    field = corpus.field("tube_bent_gap")
    line = centerline(mesh, field, 24)
    spine = truth.spine_points
    d = np.linalg.norm(line.points[:, None, :] - spine[None, :, :], axis=2)
    assert d.min(axis=1).max() < 12.0 / 5


def test_centerline_single_level(cylinder):
    mesh, _, field = cylinder
    line = centerline(mesh, field, 1)
    assert line.points.shape == (1, 3)
    assert abs(line.points[0, 2] - 5.0) < 0.2


def test_corresponding_point_identity(cylinder):
    mesh, _, field = cylinder
    line = centerline(mesh, field, 9)
    out = corresponding_point(line, line, line.points[4])
    assert np.allclose(out, line.points[4])
    q = line.points[2] + np.array([0.05, 0.0, 0.1])
    out = corresponding_point(line, line, q)
    assert np.allclose(out, line.points[2])


def test_corresponding_point_deformed_pair():
    # twist preserves the longitudinal coordinate of material points, so
    # equal-index centerline lookup recovers the true spine correspondence
    from spectube.spectral import compute_fiedler, flip_field
    from spectube.synth import Deformation, corpus_specs, deform_pair
    spec = corpus_specs()["tube_straight_rings"]
    src, dst, truth = deform_pair(
        spec, Deformation(twist=0.3, noise_mm=0.1, seed=5))
    f_src = compute_fiedler(src)
    f_dst = compute_fiedler(dst)
    # orient both fields the same way along the tube
    if (dst.vertices[f_dst.min_vertex, 2] - 120.0) * \
       (src.vertices[f_src.min_vertex, 2] - 120.0) < 0:
        f_dst = flip_field(f_dst)
    n = 40
    c1 = centerline(src, f_src, n)
    c2 = centerline(dst, f_dst, n)
    spacing = np.linalg.norm(np.diff(c2.points, axis=0), axis=1).mean()
    s_query = 120.0
    out = corresponding_point(c1, c2, np.array([0.0, 0.0, s_query]))
    assert abs(out[2] - s_query) < 2 * spacing


def test_dense_level_sweep_all_closed(corpus):
    mesh, _ = corpus.mesh("tube_straight_rings")
    field = corpus.field("tube_straight_rings")
    levels = uniform_level_sets(mesh, field, 400)
    # no collapse on this tube: every level closed and single-loop
    assert len(levels) == 400
    by_t = {}
    for ls in levels:
        by_t.setdefault(ls.t, []).append(ls)
        assert np.allclose(ls.points[0], ls.points[-1])
    assert all(len(v) == 1 for v in by_t.values())


def test_fold_ring_level_concavity(corpus):
    from scipy.spatial import ConvexHull
    from spectube.folds import fit_plane
    mesh, truth = corpus.mesh("tube_bent_gap")
    field = corpus.field("tube_bent_gap")
    # a level inside the first fold ring (ring s=40)
    t_ring = float(np.interp(40.0, truth.spine_s,
                             [field.values[i * 128] for i in range(128)]))
    loops = extract_level_set(mesh, field, t_ring)
    assert len(loops) == 1
    ls = loops[0]
    pl = fit_plane(ls)
    pts = ls.points[:-1] - pl.center
    q = np.column_stack([pts @ pl.e1, pts @ pl.e2])
    hull = ConvexHull(q)
    hull_perimeter = 0.0
    hv = q[hull.vertices]
    for a, b in zip(hv, np.roll(hv, -1, axis=0)):
        hull_perimeter += float(np.linalg.norm(a - b))
    proj_len = float(np.linalg.norm(np.diff(
        np.vstack([q, q[:1]]), axis=0), axis=1).sum())
    assert proj_len > hull_perimeter  # concavities between folds


def test_level_and_centerline_exports(tmp_path, cylinder):
    import json
    from spectube.levelset import (centerline_to_json, level_sets_to_json,
                                   level_sets_to_obj)
    mesh, _, field = cylinder
    levels = uniform_level_sets(mesh, field, 3)
    level_sets_to_obj(tmp_path / "levels.obj", levels)
    level_sets_to_json(tmp_path / "levels.json", levels)
    line = centerline(mesh, field, 3)
    centerline_to_json(tmp_path / "center.json", line)
    assert (tmp_path / "levels.obj").read_text().count("l ") == 3
    data = json.loads((tmp_path / "levels.json").read_text())
    assert len(data) == 3 and all("total_length" in d for d in data)
    c = json.loads((tmp_path / "center.json").read_text())
    assert len(c["points"]) == 3
