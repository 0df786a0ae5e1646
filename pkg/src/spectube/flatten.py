"""Fold-aware cuts, rectangle flattening, and the angle-distortion metric.

A cut runs from the low boundary to the high boundary; the consistent cut
threads the gaps between folds bundle by bundle, the baseline geodesic cut
takes the shortest edge path regardless of folds. Cutting opens the
cylinder into a disk, which is flattened to a rectangle: the angular
coordinate is harmonic with seam sides pinned to 0 and 2*pi and arc-length
Dirichlet data on the boundary arcs; the longitudinal coordinate is the
arccos-linearized Fiedler value scaled by the tube's estimated conformal
modulus, so a developable cylinder flattens with no distortion.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra as sp_dijkstra

from .errors import (
    DegenerateFaceError,
    DisconnectedCorridorError,
    FlipError,
    NoGapError,
)
from .fileio import rainbow_colormap
from .levelset import designate_gamma_loops, face_gradients, field_values
from .mesh import TriMesh, vertex_graph_distances
from .spectral import harmonic_field


@dataclass
class CutPath:
    vertices: np.ndarray     # ordered vertex indices, gamma0 side first
    kind: str                # "consistent" | "geodesic"


@dataclass
class FlatMesh:
    mesh: TriMesh            # the cut-open mesh
    uv: np.ndarray           # (n_open, 2) coordinates in [0,2pi]x[0,M]
    orig_index: np.ndarray   # (n_open,) original vertex id per open vertex
    singular_values: np.ndarray  # (m, 2) sigma1 >= sigma2 per face
    distortion_summary: float
    modulus: float           # rectangle height M


# ---- cut extraction -----------------------------------------------------------


def _cut_endpoints(mesh, field):
    """Boundary vertices adjacent to (or nearest) the field extremes."""
    values = field_values(field)
    g0, g1 = designate_gamma_loops(mesh, values)
    loops = mesh.boundary_loops
    ends = []
    for extreme, loop_idx in ((int(np.argmin(values)), g0),
                              (int(np.argmax(values)), g1)):
        loop = set(int(v) for v in loops[loop_idx])
        ring = set(int(v) for v in np.nonzero(
            np.asarray(mesh.adj_sym[extreme].todense()).ravel() > 0)[0])
        cand = sorted(ring & loop)
        if cand:
            ends.append(cand[0])
        else:
            # extreme sits off the loop: snap to the nearest loop vertex
            dist = vertex_graph_distances(mesh, extreme)[0]
            loop_arr = np.asarray(sorted(loop))
            ends.append(int(loop_arr[np.argmin(dist[loop_arr])]))
    return ends[0], ends[1], int(np.argmin(values)), int(np.argmax(values))


def _edge_graph(mesh, blocked=None, field=None, lateral_penalty=0.0):
    """Euclidean edge graph; optionally penalize edges level with the field.

    A cut segment running along a level set flattens to a v-degenerate
    sliver; penalizing low-slope edges makes corridor paths climb
    diagonally instead of sideways.
    """
    e = mesh.edges
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    if field is not None and lateral_penalty > 0:
        values = field_values(field)
        slope = np.abs(values[e[:, 0]] - values[e[:, 1]]) / np.maximum(w, 1e-12)
        s0 = 0.3 * np.median(slope[slope > 0])
        w = w * (1.0 + lateral_penalty * np.exp(-((slope / s0) ** 2)))
    if blocked is not None and blocked.size:
        mask = ~(np.isin(e[:, 0], blocked) | np.isin(e[:, 1], blocked))
        e = e[mask]
        w = w[mask]
    n = mesh.n_vertices
    g = sparse.csr_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n))
    return g + g.T


def _shortest_path(graph, start, goal):
    """Dijkstra path on a csr graph; None when unreachable."""
    dist, pred = sp_dijkstra(graph, directed=False, indices=start,
                             return_predecessors=True)
    if not np.isfinite(dist[goal]):
        return None
    path = [goal]
    cur = goal
    while cur != start:
        cur = int(pred[cur])
        if cur < 0:
            return None
        path.append(cur)
    return path[::-1]


def _circle_covered(intervals):
    """Total measure of a union of circular intervals (start, length)."""
    if not intervals:
        return 0.0
    segs = []
    for start, length in intervals:
        length = min(length, 2 * np.pi)
        s = start % (2 * np.pi)
        if s + length <= 2 * np.pi:
            segs.append((s, s + length))
        else:
            segs.append((s, 2 * np.pi))
            segs.append((0.0, s + length - 2 * np.pi))
    segs.sort()
    total = 0.0
    cur_s, cur_e = segs[0]
    for s, e in segs[1:]:
        if s > cur_e:
            total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    total += cur_e - cur_s
    return total


def _trim_boundary_runs(mesh, field, path):
    """Clip the path to one vertex on each boundary loop.

    Shortest paths can snake along a boundary ring before stopping; a cut
    must meet each boundary exactly once, so the leading run on gamma0 and
    the trailing run on gamma1 are trimmed to their last/first contact.
    """
    values = field_values(field)
    g0, g1 = designate_gamma_loops(mesh, values)
    loops = mesh.boundary_loops
    s0 = set(int(v) for v in loops[g0])
    s1 = set(int(v) for v in loops[g1])
    i = 0
    while i + 1 < len(path) and path[i + 1] in s0:
        i += 1
    j = len(path) - 1
    while j - 1 > i and path[j - 1] in s1:
        j -= 1
    return path[i:j + 1]


def _shortcut_corners(mesh, path):
    """Replace v[i], v[i+1], v[i+2] by v[i], v[i+2] when they span a face.

    A cut with three consecutive vertices on one triangle pins that whole
    face to a single rectangle side, collapsing it to zero area.
    """
    adj = mesh.adj_sym
    changed = True
    path = list(path)
    while changed:
        changed = False
        i = 0
        while i + 2 < len(path):
            if adj[path[i], path[i + 2]] > 0:
                del path[i + 1]
                changed = True
            else:
                i += 1
    return path


def _simplify(path):
    """Drop loops so the vertex path is simple."""
    seen = {}
    out = []
    for v in path:
        if v in seen:
            del out[seen[v] + 1:]
            for u in list(seen):
                if seen[u] > seen[v]:
                    del seen[u]
        else:
            seen[v] = len(out)
            out.append(v)
    return out


def geodesic_cut(mesh, field, start=None, end=None):
    """Shortest edge path between the boundary points nearest the extremes.

    start/end override the extreme-adjacent endpoint choice (useful on
    rotationally symmetric tubes, where the discrete extremes are
    floating-point-degenerate along their boundary rings).
    """
    v0, v1, mn, mx = _cut_endpoints(mesh, field)
    if start is not None:
        v0 = int(start)
    if end is not None:
        v1 = int(end)
    blocked = np.asarray([v for v in (mn, mx) if v not in (v0, v1)],
                         dtype=np.int64)
    graph = _edge_graph(mesh, blocked=blocked)
    path = _shortest_path(graph, v0, v1)
    if path is None:
        raise DisconnectedCorridorError("no edge path between the extremes")
    path = _trim_boundary_runs(mesh, field,
                               _shortcut_corners(mesh, _simplify(path)))
    return CutPath(vertices=np.asarray(path, dtype=np.int64), kind="geodesic")


def extract_consistent_cut(mesh, field, folds, bundles, param,
                           start=None, end=None):
    """Thread a cut through the inter-fold gaps, bundle by bundle.

    Starting adjacent to the field minimum, each fold-bearing bundle
    contributes a waypoint: the mesh vertex nearest the midpoint of the
    facing endpoints of the gap pair chosen closest to the previous
    reference (the extreme first, then the previous pair's centroid).
    Waypoints are joined by shortest edge paths on the fold-free subgraph.

    Raises
    ------
    NoGapError
        If a bundle's folds cover the whole circumference.
    DisconnectedCorridorError
        If the fold-free subgraph disconnects two waypoints.
    """
    v0, v1, mn, mx = _cut_endpoints(mesh, field)
    if start is not None:
        v0 = int(start)
    if end is not None:
        v1 = int(end)
    fold_vertices = set()
    for f in folds:
        fold_vertices.update(int(v) for v in mesh.faces[f.faces].ravel())
    fold_vertices.discard(v0)
    fold_vertices.discard(v1)
    blocked = np.asarray(
        sorted((fold_vertices | {mn, mx}) - {v0, v1}), dtype=np.int64)
    # without folds there is nothing to thread: match the plain geodesic
    penalty = 3.0 if folds else 0.0
    graph = _edge_graph(mesh, blocked=blocked, field=field,
                        lateral_penalty=penalty)

    by_bundle = {}
    for f in folds:
        by_bundle.setdefault(f.bundle_index, []).append(f)
    ordered = sorted(by_bundle, key=lambda bi: bundles[bi].t_min)

    waypoints = []
    reference = mesh.vertices[mn]
    theta_v = param.theta if param is not None else None
    for bi in ordered:
        group = sorted(by_bundle[bi],
                       key=lambda f: (f.theta_range[0] + 0.5 * (
                           (f.theta_range[1] - f.theta_range[0]) % (2 * np.pi)
                       )) % (2 * np.pi))
        # corridor check on the actual fold faces' angular extents
        intervals = []
        for f in group:
            th = theta_v[mesh.faces[f.faces].ravel()]
            c = (f.theta_range[0] + 0.5 * (
                (f.theta_range[1] - f.theta_range[0]) % (2 * np.pi))) % (2 * np.pi)
            rel = (th - c + np.pi) % (2 * np.pi) - np.pi
            intervals.append(((c + rel.min()) % (2 * np.pi),
                              float(rel.max() - rel.min())))
        # a corridor narrower than a couple of face columns is no corridor
        if _circle_covered(intervals) >= 2 * np.pi * (1.0 - 1.0 / 32.0):
            raise NoGapError(f"bundle {bi} folds cover the circumference",
                             bundle_index=bi)
        best = None
        for k, fa in enumerate(group):
            fb = group[(k + 1) % len(group)]
            pa = _fold_gap_endpoint(mesh, fa, param, side="high")
            pb = _fold_gap_endpoint(mesh, fb, param, side="low")
            mid = 0.5 * (pa + pb)
            d = np.linalg.norm(mid - reference)
            if best is None or d < best[0]:
                best = (d, mid, fa, fb)
        _, mid, fa, fb = best
        cand = np.asarray(sorted(
            set(range(mesh.n_vertices)) - fold_vertices - {mn, mx}))
        w = int(cand[np.argmin(np.linalg.norm(mesh.vertices[cand] - mid, axis=1))])
        waypoints.append(w)
        cent = 0.5 * (mesh.vertices[mesh.faces[fa.faces]].mean(axis=(0, 1))
                      + mesh.vertices[mesh.faces[fb.faces]].mean(axis=(0, 1)))
        reference = cent

    path = []
    stations = [v0] + waypoints + [v1]
    for a, b in zip(stations, stations[1:]):
        seg = _shortest_path(graph, a, b)
        if seg is None:
            raise DisconnectedCorridorError(
                f"fold-free corridor disconnected between {a} and {b}"
            )
        path.extend(seg if not path else seg[1:])
    path = _trim_boundary_runs(mesh, field,
                               _shortcut_corners(mesh, _simplify(path)))
    return CutPath(vertices=np.asarray(path, dtype=np.int64), kind="consistent")


def _fold_gap_endpoint(mesh, fold, param, side):
    """Contour point at the fold's extremal chart angle (gap-facing end)."""
    pts = fold.contour[:-1] if fold.contour.shape[0] > 1 else fold.contour
    if pts.shape[0] == 0:
        return mesh.vertices[mesh.faces[fold.faces]].mean(axis=(0, 1))
    th_l, th_r = fold.theta_range
    span = (th_r - th_l) % (2 * np.pi)
    center = (th_l + 0.5 * span) % (2 * np.pi)
    # chart angle of contour points: nearest-vertex lookup
    from scipy.spatial import cKDTree
    if getattr(mesh, "_kdtree", None) is None:
        mesh._kdtree = cKDTree(mesh.vertices)
    _, idx = mesh._kdtree.query(pts)
    th = param.theta[idx]
    rel = (th - center + np.pi) % (2 * np.pi) - np.pi
    k = int(np.argmax(rel)) if side == "high" else int(np.argmin(rel))
    return pts[k]


# ---- cutting the mesh into a disk ----------------------------------------------


def cut_mesh(mesh, cut):
    """Duplicate the cut-path vertices and open the mesh along the path.

    The path must run from one boundary loop to the other. For each path
    vertex, the fan of faces on the left of the directed path (starting at
    the face owning the outgoing path edge, sweeping to the incoming path
    edge or the boundary) is reassigned to a duplicate vertex, turning the
    cylinder into a topological disk.

    Returns
    -------
    (TriMesh, orig_index) with orig_index mapping open vertices to input ids.
    """
    path = [int(v) for v in cut.vertices]
    nxt = {path[i]: path[i + 1] for i in range(len(path) - 1)}
    prv = {path[i + 1]: path[i] for i in range(len(path) - 1)}

    owner = {}
    for f in range(mesh.n_faces):
        tri = mesh.faces[f]
        for k in range(3):
            owner[(int(tri[k]), int(tri[(k + 1) % 3]))] = (f, k)

    faces = mesh.faces.copy()
    nbr = mesh.face_neighbors
    orig_index = list(range(mesh.n_vertices))
    dup_rows = []

    for v in path:
        out_v = nxt.get(v)
        in_v = prv.get(v)
        if out_v is not None and (v, out_v) in owner:
            start, _ = owner[(v, out_v)]
            came_from = out_v
        elif in_v is not None and (in_v, v) in owner:
            start, _ = owner[(in_v, v)]
            came_from = in_v
        else:
            continue

        side = []
        cur = int(start)
        while True:
            side.append(cur)
            tri = mesh.faces[cur]
            k = 0 if tri[0] == v else (1 if tri[1] == v else 2)
            a = int(tri[(k + 1) % 3])   # edge (v, a) has edge index k
            b = int(tri[(k + 2) % 3])   # edge (b, v) has edge index (k+2)%3
            other, eidx = (b, (k + 2) % 3) if a == came_from else (a, k)
            if other == in_v or other == out_v:
                break
            g = int(nbr[cur, eidx])
            if g < 0 or g in side:
                break
            came_from = other
            cur = g

        dup = len(orig_index)
        orig_index.append(v)
        dup_rows.append(v)
        for f in side:
            tri0 = mesh.faces[f]
            k = 0 if tri0[0] == v else (1 if tri0[1] == v else 2)
            faces[f, k] = dup

    open_mesh = TriMesh(
        np.vstack([mesh.vertices, mesh.vertices[dup_rows]]), faces)
    return open_mesh, np.asarray(orig_index, dtype=np.int64)

# ---- flattening ------------------------------------------------------------------


def conformal_modulus(mesh, field):
    """Rectangle height M = 2*pi / Dirichlet energy of the 0..1 harmonic
    coordinate between the two boundary loops (exactly H/r for a cylinder)."""
    values = field_values(field)
    g0, g1 = designate_gamma_loops(mesh, values)
    loops = mesh.boundary_loops
    bc = {int(v): 0.0 for v in loops[g0]}
    bc.update({int(v): 1.0 for v in loops[g1]})
    w = harmonic_field(mesh, bc)
    grads = face_gradients(mesh, w)
    energy = float((mesh.face_areas * np.einsum("ij,ij->i", grads, grads)).sum())
    return 2.0 * np.pi / energy


def _boundary_sections(open_mesh, orig_index, cut):
    """Split the disk boundary into the two arcs and the two seam copies.

    Returns (g0_arc from v0 to its duplicate, seam B, g1_arc from the end
    vertex's duplicate to the end vertex, seam A, duplicate map). The disk
    boundary visits the four section corners in one of the two cyclic
    orders depending on which side was duplicated.
    """
    loops = open_mesh.boundary_loops
    if len(loops) != 1:
        raise FlipError(
            f"cutting produced {len(loops)} boundary loops, expected a disk")
    loop = [int(v) for v in loops[0]]
    path = [int(v) for v in cut.vertices]
    n = int(orig_index.shape[0])
    dup_of = {int(orig_index[i]): i for i in range(n) if i != orig_index[i]}
    v0, vk = path[0], path[-1]
    v0b = dup_of.get(v0, v0)
    vkb = dup_of.get(vk, vk)

    loop = loop[loop.index(v0):] + loop[:loop.index(v0)]
    idx = {v: i for i, v in enumerate(loop)}
    if idx[v0b] < idx[vk]:
        # v0 -> gamma0 -> v0b -> seam B -> vkb -> gamma1 -> vk -> seam A
        g0_arc = loop[:idx[v0b] + 1]
        seamb = loop[idx[v0b]:idx[vkb] + 1]
        g1_arc = loop[idx[vkb]:idx[vk] + 1]
        seama = loop[idx[vk]:] + loop[:1]
    else:
        # mirror order: v0 -> seam A -> vk -> gamma1 -> vkb -> seam B -> v0b
        seama = loop[:idx[vk] + 1]
        g1_arc = loop[idx[vk]:idx[vkb] + 1][::-1]
        seamb = loop[idx[vkb]:idx[v0b] + 1][::-1]
        g0_arc = (loop[idx[v0b]:] + loop[:1])[::-1]
    return g0_arc, seamb, g1_arc, seama, dup_of


def _arc_dirichlet(open_mesh, arc, lo=0.0, hi=2 * np.pi):
    """Cumulative arc-length values along a boundary arc, scaled lo..hi."""
    pts = open_mesh.vertices[np.asarray(arc, dtype=np.int64)]
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1] if cum[-1] > 0 else 1.0
    return {int(v): lo + (hi - lo) * c / total for v, c in zip(arc, cum)}


def _mean_value_laplacian(mesh):
    """Mean-value-weight Laplacian (positive weights, generally asymmetric).

    Positive weights make the rectangle embedding a Tutte embedding:
    mapping the disk boundary homeomorphically onto a convex polygon
    guarantees an injective interior, so the flattening cannot flip faces.
    """
    t = mesh.faces
    p = mesh.vertices
    n = mesh.n_vertices
    ii = []
    jj = []
    ww = []
    for c in range(3):
        i = t[:, c]
        j = t[:, (c + 1) % 3]
        k = t[:, (c + 2) % 3]
        e1 = p[j] - p[i]
        e2 = p[k] - p[i]
        l1 = np.linalg.norm(e1, axis=1)
        l2 = np.linalg.norm(e2, axis=1)
        cosang = np.clip(np.einsum("ab,ab->a", e1, e2) / (l1 * l2), -1.0, 1.0)
        tanh2 = np.tan(0.5 * np.arccos(cosang))
        ii.extend([i, i])
        jj.extend([j, k])
        ww.extend([tanh2 / l1, tanh2 / l2])
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    w = np.concatenate(ww)
    W = sparse.csr_matrix((w, (i, j)), shape=(n, n))
    d = np.asarray(W.sum(axis=1)).ravel()
    return (sparse.diags(d) - W).tocsr()


def _dirichlet_solve(L, fixed):
    """Solve L x = 0 with Dirichlet values; returns the full vector."""
    from scipy.sparse.linalg import spsolve

    n = L.shape[0]
    fixed_idx = np.fromiter(fixed.keys(), dtype=np.int64)
    fixed_val = np.fromiter((fixed[i] for i in fixed_idx), dtype=np.float64)
    free = np.setdiff1d(np.arange(n), fixed_idx)
    x = np.zeros(n)
    x[fixed_idx] = fixed_val
    if free.size:
        A = L[free][:, free]
        b = -L[free][:, fixed_idx] @ fixed_val
        x[free] = spsolve(A.tocsc(), b)
    return x


def _seamless_u(mesh, open_mesh, orig_index, g0_arc, g1_arc, dup_of, cut):
    """Angular coordinate: harmonic across the cut with a 2*pi holonomy jump.

    The duplicated copy of every seam vertex carries u + 2*pi of its
    original; folding the open mesh's cotangent Laplacian through that
    identification gives one unknown per original vertex, so the seam shape
    itself causes no shear. The boundary arcs carry arc-length Dirichlet
    data, mapping them to the straight rectangle edges.
    """
    from .mesh import cotangent_laplacian

    n_open = open_mesh.n_vertices
    n = mesh.n_vertices
    P = sparse.csr_matrix(
        (np.ones(n_open), (np.arange(n_open), orig_index)), shape=(n_open, n))
    s = (np.arange(n_open) >= n).astype(np.float64)
    L = cotangent_laplacian(open_mesh)
    A = (P.T @ L @ P).tocsr()
    b = -2.0 * np.pi * (P.T @ (L @ s))

    bc = {}
    for arc in (g0_arc, list(reversed(g1_arc))):
        vals = _arc_dirichlet(open_mesh, arc)
        for vtx, val in vals.items():
            o = int(orig_index[vtx])
            if vtx >= n:   # the duplicate copy's value is implied by the jump
                continue
            bc[o] = val
    fixed_idx = np.fromiter(bc.keys(), dtype=np.int64)
    fixed_val = np.fromiter((bc[i] for i in fixed_idx), dtype=np.float64)
    free = np.setdiff1d(np.arange(n), fixed_idx)
    u = np.zeros(n)
    u[fixed_idx] = fixed_val
    if free.size:
        from scipy.sparse.linalg import spsolve
        rhs = b[free] - A[free][:, fixed_idx] @ fixed_val
        u[free] = spsolve(A[free][:, free].tocsc(), rhs)
    return np.asarray(P @ u).ravel() + 2.0 * np.pi * s


def flatten(mesh, cut, field, modulus=None):
    """Flatten the cut-open tube to the rectangle [0, 2*pi] x [0, M].

    The angular coordinate u is harmonic on the closed tube with a 2*pi
    jump across the cut (the seam's shape causes no shear) and arc-length
    Dirichlet data on the two boundary arcs; the longitudinal coordinate v
    is the arccos-linearized field value scaled by the conformal modulus M,
    so a developable cylinder flattens isometrically up to scale. Residual
    sliver flips are untangled locally.

    Raises
    ------
    FlipError
        If flipped faces survive untangling.
    """
    values = field_values(field)
    if modulus is None:
        modulus = conformal_modulus(mesh, field)
    open_mesh, orig_index = cut_mesh(mesh, cut)
    g0_arc, seamb, g1_arc, seama, dup_of = _boundary_sections(
        open_mesh, orig_index, cut)

    u = _seamless_u(mesh, open_mesh, orig_index, g0_arc, g1_arc, dup_of, cut)
    xi = np.clip(values[orig_index], 0.0, 1.0)
    v = np.arccos(1.0 - 2.0 * xi) / np.pi * modulus
    uv = np.column_stack([u, v])

    arc_pins = set(int(x) for x in g0_arc) | set(int(x) for x in g1_arc)
    uv = _untangle(open_mesh, uv,
                   pinned=np.asarray(sorted(arc_pins), dtype=np.int64))
    sv, flipped = _face_singular_values(open_mesh, uv)
    if flipped:
        raise FlipError(f"{flipped} flipped faces after flattening",
                        flipped_count=flipped)
    areas = open_mesh.face_areas
    ratio = sv[:, 0] / sv[:, 1] + sv[:, 1] / sv[:, 0]
    summary = float((ratio * areas).sum() / areas.sum())
    return FlatMesh(mesh=open_mesh, uv=uv, orig_index=orig_index,
                    singular_values=sv, distortion_summary=summary,
                    modulus=float(modulus))


def _untangle(mesh, uv, pinned, max_rounds=60):
    """Resolve flipped faces by local averaging of their free vertices.

    Near-degenerate slivers (three nearly equal v values along a jagged
    seam) can flip by interpolation noise; pulling their free corners to
    the one-ring average restores orientation without moving pinned seam
    or boundary values.
    """
    pinned_mask = np.zeros(mesh.n_vertices, dtype=bool)
    pinned_mask[pinned] = True
    adj = mesh.adj_sym
    t = mesh.faces
    out = uv.copy()
    for _ in range(max_rounds):
        e1 = out[t[:, 1]] - out[t[:, 0]]
        e2 = out[t[:, 2]] - out[t[:, 0]]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        bad = np.nonzero(det <= 0)[0]
        if bad.size == 0:
            break
        move = np.unique(t[bad].ravel())
        move = move[~pinned_mask[move]]
        if move.size == 0:
            break
        for v in move:
            ring = adj[int(v)].indices
            out[v] = out[ring].mean(axis=0)
    return out


def _face_singular_values(mesh, uv):
    """Per-face singular values of the 3D->2D linear map; counts flips."""
    t = mesh.faces
    p = mesh.vertices
    e1 = p[t[:, 1]] - p[t[:, 0]]
    e2 = p[t[:, 2]] - p[t[:, 0]]
    # orthonormal in-plane frame
    n = np.cross(e1, e2)
    a2 = np.linalg.norm(n, axis=1)
    if np.any(a2 < 1e-300):
        raise DegenerateFaceError("zero-area face in flattening")
    x = e1 / np.linalg.norm(e1, axis=1)[:, None]
    y = np.cross(n / a2[:, None], x)
    E1 = np.column_stack([np.einsum("ij,ij->i", e1, x),
                          np.einsum("ij,ij->i", e1, y)])
    E2 = np.column_stack([np.einsum("ij,ij->i", e2, x),
                          np.einsum("ij,ij->i", e2, y)])
    q1 = uv[t[:, 1]] - uv[t[:, 0]]
    q2 = uv[t[:, 2]] - uv[t[:, 0]]
    # J @ [E1 E2] = [q1 q2]  ->  J = [q1 q2] @ inv([E1 E2])
    det = E1[:, 0] * E2[:, 1] - E1[:, 1] * E2[:, 0]
    inv00 = E2[:, 1] / det
    inv01 = -E2[:, 0] / det
    inv10 = -E1[:, 1] / det
    inv11 = E1[:, 0] / det
    j00 = q1[:, 0] * inv00 + q2[:, 0] * inv10
    j01 = q1[:, 0] * inv01 + q2[:, 0] * inv11
    j10 = q1[:, 1] * inv00 + q2[:, 1] * inv10
    j11 = q1[:, 1] * inv01 + q2[:, 1] * inv11
    jdet = j00 * j11 - j01 * j10
    flipped = int((jdet <= 0).sum())
    # singular values via the 2x2 closed form
    fro = j00**2 + j01**2 + j10**2 + j11**2
    disc = np.sqrt(np.maximum(fro**2 - 4.0 * jdet**2, 0.0))
    s1 = np.sqrt(np.maximum((fro + disc) / 2.0, 1e-300))
    s2 = np.abs(jdet) / s1
    return np.column_stack([s1, s2]), flipped


def angle_distortion(flat):
    """Area-weighted mean of sigma1/sigma2 + sigma2/sigma1 over faces."""
    sv = flat.singular_values
    if np.any(sv[:, 1] <= 0):
        raise DegenerateFaceError("degenerate face in distortion metric")
    areas = flat.mesh.face_areas
    ratio = sv[:, 0] / sv[:, 1] + sv[:, 1] / sv[:, 0]
    return float((ratio * areas).sum() / areas.sum())


# ---- export ----------------------------------------------------------------------


def flat_to_obj(path, flat):
    """OBJ with the 2D rectangle coordinates as positions (z = 0)."""
    from .fileio import write_obj
    v = np.column_stack([flat.uv, np.zeros(flat.uv.shape[0])])
    write_obj(path, v, flat.mesh.faces)


def flat_to_svg(path, flat, vertex_values=None, face_labels=None, width=1200):
    """SVG of the flattened triangles.

    Colored by per-vertex values (rainbow, averaged per face) or by integer
    face labels; label -1 renders as background gray.
    """
    uv = flat.uv
    u_span = float(uv[:, 0].max() - uv[:, 0].min()) or 1.0
    v_span = float(uv[:, 1].max() - uv[:, 1].min()) or 1.0
    height = int(round(width * v_span / u_span))
    sx = width / u_span
    sy = height / v_span
    u0 = uv[:, 0].min()
    v0 = uv[:, 1].min()

    def xy(i):
        return ((uv[i, 0] - u0) * sx, height - (uv[i, 1] - v0) * sy)

    if vertex_values is not None:
        fv = np.asarray(vertex_values, dtype=np.float64)
        face_col = rainbow_colormap(fv[flat.mesh.faces].mean(axis=1))
    elif face_labels is not None:
        lab = np.asarray(face_labels)
        palette = rainbow_colormap(
            (lab % 17) / 16.0 if lab.max() > 0 else np.zeros(lab.shape))
        face_col = np.where(lab[:, None] >= 0, palette,
                            np.full((lab.shape[0], 3), 200, dtype=np.uint8))
    else:
        face_col = np.full((flat.mesh.n_faces, 3), 180, dtype=np.uint8)

    rows = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">'
    ]
    for f in range(flat.mesh.n_faces):
        tri = flat.mesh.faces[f]
        pts = " ".join(f"{xy(i)[0]:.2f},{xy(i)[1]:.2f}" for i in tri)
        c = face_col[f]
        tag = ""
        if face_labels is not None and int(np.asarray(face_labels)[f]) >= 0:
            tag = f' class="fold fold-{int(np.asarray(face_labels)[f])}"'
        rows.append(
            f'<polygon points="{pts}" fill="rgb({c[0]},{c[1]},{c[2]})"{tag}/>'
        )
    rows.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows))
