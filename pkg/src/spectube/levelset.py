"""Level sets of the Fiedler field, gradient curves, and the (theta, t) chart.

The tube chart assigns every vertex an angular coordinate theta in [0, 2*pi)
propagated from the arc-length parameterization of the low boundary loop
along traced gradient curves, and a longitudinal coordinate t equal to the
scaled Fiedler value. Points on a level ring between two traced curves get
theta by linear interpolation between the bracketing curves.
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._kernels import extract_iso_segments, trace_streamline
from .errors import (
    EmptyCenterlineError,
    EmptyLevelSetError,
    StagnationError,
    VertexNotOnLoopError,
)
from .fileio import write_polyline_obj
from .mesh import boundary_arc_length_parameterization

logger = logging.getLogger(__name__)

VERTEX_HIT_PERTURBATION = 1e-12
DEFAULT_N_CURVES = 64


@dataclass
class LevelSet:
    """One closed iso-contour loop of a scalar field."""

    t: float
    points: np.ndarray          # (k+1, 3), first point repeated at the end
    faces: np.ndarray           # (k,) face of each sample
    edge_u: np.ndarray          # (k,) canonical edge endpoints (u < v)
    edge_v: np.ndarray
    alpha: np.ndarray           # (k,) point = verts[u] + alpha*(verts[v]-verts[u])
    total_length: float

    @property
    def n_samples(self):
        return self.faces.shape[0]


@dataclass
class IntegrationCurve:
    """Gradient streamline from the low boundary to the high boundary."""

    theta: float
    points: np.ndarray          # (k, 3)
    tvals: np.ndarray           # (k,), strictly increasing


@dataclass
class TubeParameterization:
    theta: np.ndarray           # (n,) in [0, 2*pi)
    t: np.ndarray               # (n,), equals the field values
    base_vertex: int
    gamma0_loop: int
    gamma1_loop: int
    curves: list = dc_field(default_factory=list)

    @property
    def seam(self):
        return self.curves[0] if self.curves else None


@dataclass
class Centerline:
    points: np.ndarray          # (k, 3)
    tvals: np.ndarray           # (k,), strictly increasing


def field_values(field):
    """Accept a FiedlerField, a bare array, or anything with .values."""
    if hasattr(field, "values"):
        return np.asarray(field.values, dtype=np.float64)
    return np.asarray(field, dtype=np.float64)


def face_gradients(mesh, values):
    """(m, 3) gradient of the piecewise-linear interpolant per face."""
    v = mesh.vertices
    t = mesh.faces
    f0 = values[t[:, 0]]
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    d1 = values[t[:, 1]] - f0
    d2 = values[t[:, 2]] - f0
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    det = g11 * g22 - g12 * g12
    a = (g22 * d1 - g12 * d2) / det
    b = (g11 * d2 - g12 * d1) / det
    return a[:, None] * e1 + b[:, None] * e2


def _vertex_face_csr(mesh):
    if getattr(mesh, "_vf_csr", None) is None:
        m = mesh.n_faces
        vals = mesh.faces.ravel()
        face_ids = np.repeat(np.arange(m, dtype=np.int64), 3)
        order = np.argsort(vals, kind="stable")
        vf_ids = np.ascontiguousarray(face_ids[order])
        vf_off = np.searchsorted(vals[order], np.arange(mesh.n_vertices + 1))
        mesh._vf_csr = (vf_off.astype(np.int64), vf_ids)
    return mesh._vf_csr


def _boundary_edge_faces(mesh):
    """Map canonical boundary edge (u, v) -> (face, edge index)."""
    if getattr(mesh, "_bnd_edge_faces", None) is None:
        out = {}
        nbr = mesh.face_neighbors
        for f, k in zip(*np.nonzero(nbr == -1)):
            a = int(mesh.faces[f, k])
            b = int(mesh.faces[f, (k + 1) % 3])
            out[(min(a, b), max(a, b))] = (int(f), int(k))
        mesh._bnd_edge_faces = out
    return mesh._bnd_edge_faces


# ---- iso-contours ------------------------------------------------------------


def extract_level_set(mesh, field, t):
    """Extract the iso-contour loops of the field at value t.

    Marching triangles with linear interpolation along edges; a vertex
    exactly at the iso-value is handled by perturbing the iso-value up by
    1e-12 until clear. Loops run with higher field values to the left of
    travel (consistent with the outward orientation).

    Returns
    -------
    list of LevelSet
        One entry per closed loop; open chains (possible only in the
        boundary bands of deformed tubes) are dropped with a notice.

    Raises
    ------
    EmptyLevelSetError
        If the level produces no closed loop.
    """
    values = field_values(field)
    t_eff = float(t)
    guard = 0
    while np.any(values == t_eff):
        t_eff += VERTEX_HIT_PERTURBATION
        guard += 1
        if guard > 64:
            raise EmptyLevelSetError(f"cannot clear vertex hits at t={t}")
    comps = extract_iso_segments(values, mesh.faces, mesh.face_neighbors, t_eff)
    out = []
    for fid, eu, ev, al, closed in comps:
        if not closed:
            logger.info("open iso-chain at t=%.6g skipped (%d samples)", t, len(fid))
            continue
        pts = mesh.vertices[eu] + al[:, None] * (mesh.vertices[ev] - mesh.vertices[eu])
        pts = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        out.append(LevelSet(
            t=float(t), points=pts, faces=fid, edge_u=eu, edge_v=ev, alpha=al,
            total_length=float(seg.sum()),
        ))
    if not out:
        raise EmptyLevelSetError(f"no closed level set at t={t}")
    return out


def uniform_level_sets(mesh, field, n):
    """Level sets at t_i = i/(n+1), i = 1..n; empty levels skipped with notice.

    Honors the SPECTUBE_THREADS environment variable for concurrent
    extraction of independent levels.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    tvals = [(i + 1) / (n + 1) for i in range(n)]

    def one(ti):
        try:
            return extract_level_set(mesh, field, ti)
        except EmptyLevelSetError:
            logger.info("level t=%.6g empty, skipped", ti)
            return []

    threads = int(os.environ.get("SPECTUBE_THREADS", "1") or "1")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            groups = list(pool.map(one, tvals))
    else:
        groups = [one(ti) for ti in tvals]
    return [ls for group in groups for ls in group]


# ---- gradient curves ---------------------------------------------------------


def designate_gamma_loops(mesh, field):
    """(gamma0, gamma1) boundary loop indices: gamma0 has the lower mean value."""
    values = field_values(field)
    loops = mesh.boundary_loops
    if len(loops) != 2:
        raise ValueError(f"expected 2 boundary loops, found {len(loops)}")
    means = [float(np.mean(values[lp])) for lp in loops]
    return (0, 1) if means[0] <= means[1] else (1, 0)


def trace_integration_curve(mesh, field, start_face, start_bary, theta=0.0,
                            grads=None, max_steps=None):
    """Trace the gradient streamline from a point toward the high boundary.

    Raises
    ------
    StagnationError
        If the gradient vanishes or the tracer stalls before reaching the
        far boundary (saddle without escape).
    """
    values = field_values(field)
    if grads is None:
        grads = face_gradients(mesh, values)
    if max_steps is None:
        max_steps = 4 * mesh.n_faces + 1000
    vf_off, vf_ids = _vertex_face_csr(mesh)
    pts, tv, status = trace_streamline(
        mesh.vertices, mesh.faces, mesh.face_neighbors, vf_off, vf_ids,
        values, grads, start_face, start_bary, max_steps,
        mesh.is_boundary_vertex(),
    )
    if status == 0 and tv[-1] < 0.5 * (values.min() + values.max()):
        status = 1  # exited through the low boundary, not an arrival
    if status != 0:
        why = "gradient stagnation" if status == 1 else "step cap exceeded"
        raise StagnationError(
            f"integration curve stalled ({why}) at {pts[-1]} (t={tv[-1]:.4f})",
            location=pts[-1],
        )
    keep = np.empty(tv.shape[0], dtype=bool)
    keep[0] = True
    last = tv[0]
    for i in range(1, tv.shape[0]):
        keep[i] = tv[i] > last
        if keep[i]:
            last = tv[i]
    return IntegrationCurve(theta=float(theta), points=pts[keep], tvals=tv[keep])


def _seed_on_loop(mesh, loop, loop_theta, theta):
    """Point at angular position theta on the loop: face, barycentric coords."""
    theta = theta % (2 * np.pi)
    k = int(np.searchsorted(loop_theta, theta, side="right") - 1)
    a = int(loop[k])
    b = int(loop[(k + 1) % loop.shape[0]])
    th0 = loop_theta[k]
    th1 = loop_theta[k + 1] if k + 1 < loop_theta.shape[0] else 2 * np.pi
    w = 0.0 if th1 == th0 else (theta - th0) / (th1 - th0)
    f, e = _boundary_edge_faces(mesh)[(min(a, b), max(a, b))]
    bary = np.zeros(3)
    for i in range(3):
        vtx = mesh.faces[f, i]
        if vtx == a:
            bary[i] = 1.0 - w
        elif vtx == b:
            bary[i] = w
    return f, bary


def trace_curves_from_boundary(mesh, field, base_vertex, n_curves=DEFAULT_N_CURVES,
                               grads=None):
    """Trace n uniformly seeded curves from the gamma0 loop."""
    values = field_values(field)
    g0, _ = designate_gamma_loops(mesh, values)
    loop, loop_theta = boundary_arc_length_parameterization(mesh, g0, base_vertex)
    if grads is None:
        grads = face_gradients(mesh, values)
    curves = []
    for k in range(n_curves):
        th = 2 * np.pi * k / n_curves
        f, bary = _seed_on_loop(mesh, loop, loop_theta, th)
        curves.append(trace_integration_curve(mesh, field, f, bary, theta=th,
                                              grads=grads))
    return curves


def parameterize_tube(mesh, field, base_vertex=None, n_curves=DEFAULT_N_CURVES):
    """Build the (theta, t) chart of a cylinder-topology mesh.

    theta is propagated from the arc-length parameterization of gamma0
    (starting at base_vertex) along n_curves traced gradient curves, and
    interpolated linearly between the two bracketing curves on each level
    ring; t is the field value itself. gamma0-loop vertices take their
    exact boundary theta.
    """
    values = field_values(field)
    g0, g1 = designate_gamma_loops(mesh, values)
    loops = mesh.boundary_loops
    if base_vertex is None:
        base_vertex = int(loops[g0][0])
    elif base_vertex not in set(int(v) for v in loops[g0]):
        raise VertexNotOnLoopError(
            f"base vertex {base_vertex} not on the gamma0 loop"
        )
    curves = trace_curves_from_boundary(mesh, field, base_vertex, n_curves)

    n = mesh.n_vertices
    tv = values
    # position of every curve at each vertex's own level
    dists = np.empty((n_curves, n))
    for k, c in enumerate(curves):
        qx = np.interp(tv, c.tvals, c.points[:, 0])
        qy = np.interp(tv, c.tvals, c.points[:, 1])
        qz = np.interp(tv, c.tvals, c.points[:, 2])
        dists[k] = np.sqrt(
            (qx - mesh.vertices[:, 0]) ** 2
            + (qy - mesh.vertices[:, 1]) ** 2
            + (qz - mesh.vertices[:, 2]) ** 2
        )
    k0 = np.argmin(dists, axis=0)
    d0 = dists[k0, np.arange(n)]
    km = (k0 - 1) % n_curves
    kp = (k0 + 1) % n_curves
    dm = dists[km, np.arange(n)]
    dp = dists[kp, np.arange(n)]
    dtheta = 2 * np.pi / n_curves
    use_minus = dm < dp
    denom_m = dm + d0
    denom_p = d0 + dp
    frac_m = np.divide(dm, denom_m, out=np.zeros_like(dm), where=denom_m > 0)
    frac_p = np.divide(d0, denom_p, out=np.zeros_like(dp), where=denom_p > 0)
    theta = np.where(
        use_minus,
        km * dtheta + dtheta * frac_m,
        k0 * dtheta + dtheta * frac_p,
    ) % (2 * np.pi)

    loop, loop_theta = boundary_arc_length_parameterization(mesh, g0, base_vertex)
    theta[loop] = loop_theta
    return TubeParameterization(
        theta=theta, t=tv.copy(), base_vertex=int(base_vertex),
        gamma0_loop=g0, gamma1_loop=g1, curves=curves,
    )


# ---- centerline ---------------------------------------------------------------


def centerline(mesh, field, n_levels):
    """Polyline of length-weighted level-set means at uniform levels."""
    levels = uniform_level_sets(mesh, field, n_levels)
    by_t = {}
    for ls in levels:
        by_t.setdefault(ls.t, []).append(ls)
    pts = []
    tv = []
    for t in sorted(by_t):
        wsum = 0.0
        acc = np.zeros(3)
        for ls in by_t[t]:
            mids = 0.5 * (ls.points[:-1] + ls.points[1:])
            seg = np.linalg.norm(np.diff(ls.points, axis=0), axis=1)
            acc += (mids * seg[:, None]).sum(axis=0)
            wsum += seg.sum()
        if wsum > 0:
            pts.append(acc / wsum)
            tv.append(t)
    return Centerline(points=np.asarray(pts), tvals=np.asarray(tv))


def corresponding_point(src, dst, query):
    """Map a point near the source centerline to the target centerline.

    The nearest source point's index is looked up on the target (both
    centerlines must be sampled with the same level count).
    """
    if src.points.shape[0] == 0 or dst.points.shape[0] == 0:
        raise EmptyCenterlineError("empty centerline")
    if src.points.shape[0] != dst.points.shape[0]:
        raise ValueError("centerlines must share the same level count")
    q = np.asarray(query, dtype=np.float64)
    i = int(np.argmin(np.linalg.norm(src.points - q, axis=1)))
    return dst.points[i].copy()


# ---- export -------------------------------------------------------------------


def level_sets_to_obj(path, levels):
    write_polyline_obj(path, [ls.points for ls in levels])


def level_sets_to_json(path, levels):
    data = [
        {"t": ls.t, "total_length": ls.total_length,
         "points": ls.points.tolist()}
        for ls in levels
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)


def centerline_to_json(path, line):
    data = {"t": line.tvals.tolist(), "points": line.points.tolist()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
