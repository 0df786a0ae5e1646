"""Pure-Python/numpy fallback for the hot kernels.

Two kernels run tight per-face walks that dominate runtime on fine meshes:
iso-contour extraction (marching triangles with chaining) and gradient
streamline tracing. The compiled Cython twin in ``_core.pyx`` implements
the identical algorithms step for step; keep the two in sync.
"""

import numpy as np

KERNEL_KIND = "pure"

_EPS_DIR = 1e-14


def extract_iso_segments(values, faces, neighbors, level):
    """March one iso-level across the mesh.

    Walks crossing faces by adjacency, emitting one chain per contour
    component. Any vertex exactly on the level must be perturbed away by
    the caller beforehand.

    Parameters
    ----------
    values : (n,) float64 per-vertex field
    faces : (m, 3) int64
    neighbors : (m, 3) int64, neighbor across edge k=(f[k], f[(k+1)%3]), -1 boundary
    level : float

    Returns
    -------
    list of (face_ids, edge_u, edge_v, alpha, closed) per component, ordered
    so that higher field values lie to the left of travel (w.r.t. outward
    normals); edge endpoints are canonical (u < v) and the crossing point is
    verts[u] + alpha * (verts[v] - verts[u]).
    """
    values = np.asarray(values, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    above = values > level
    fa = above[faces]
    crossing = np.nonzero(fa.any(axis=1) & ~fa.all(axis=1))[0]
    if crossing.size == 0:
        return []

    # lone corner: the single vertex on the minority side
    n_above = fa[crossing].sum(axis=1)
    lone = np.empty(crossing.size, dtype=np.int64)
    lone_above = n_above == 1
    sub = fa[crossing]
    lone[lone_above] = np.argmax(sub[lone_above], axis=1)
    lone[~lone_above] = np.argmin(sub[~lone_above], axis=1)
    # exit edge index per the orientation rule (higher values on the left):
    # lone above -> exit through edge entering the lone corner (c-1);
    # lone below -> exit through edge leaving the lone corner (c).
    exit_edge = np.where(lone_above, (lone + 2) % 3, lone)

    exit_of = -np.ones(faces.shape[0], dtype=np.int64)
    exit_of[crossing] = exit_edge
    unvisited = set(int(f) for f in crossing)

    def crossing_record(f):
        e = exit_of[f]
        va = faces[f, e]
        vb = faces[f, (e + 1) % 3]
        u, v = (va, vb) if va < vb else (vb, va)
        alpha = (level - values[u]) / (values[v] - values[u])
        return u, v, alpha

    out = []
    while unvisited:
        start = min(unvisited)
        chain = []
        f = start
        closed = False
        while True:
            unvisited.discard(f)
            chain.append(f)
            nf = neighbors[f, exit_of[f]]
            if nf == -1:
                break
            if nf == start:
                closed = True
                break
            f = int(nf)
        if not closed:
            # walk backward from start through enter edges to the other end
            back = []
            f = start
            while True:
                # the two crossing edges surround the lone corner lc:
                # (lc+2)%3 enters it, lc leaves it; enter is the non-exit one
                c = faces[f]
                s0, s1 = above[c[0]], above[c[1]]
                if s0 == s1:
                    lc = 2
                elif s1 == above[c[2]]:
                    lc = 0
                else:
                    lc = 1
                e_enter = lc if exit_of[f] == (lc + 2) % 3 else (lc + 2) % 3
                nf = neighbors[f, e_enter]
                if nf == -1:
                    break
                f = int(nf)
                unvisited.discard(f)
                back.append(f)
            chain = back[::-1] + chain
        m = len(chain)
        fid = np.asarray(chain, dtype=np.int64)
        eu = np.empty(m, dtype=np.int64)
        ev = np.empty(m, dtype=np.int64)
        al = np.empty(m, dtype=np.float64)
        for i, f in enumerate(chain):
            eu[i], ev[i], al[i] = crossing_record(f)
        out.append((fid, eu, ev, al, closed))
    return out


def _bary_velocity(verts, faces, f, g):
    """Barycentric velocity of direction g inside face f. Returns (db0,db1,db2)."""
    a, b, c = faces[f]
    e1 = verts[b] - verts[a]
    e2 = verts[c] - verts[a]
    g11 = e1 @ e1
    g12 = e1 @ e2
    g22 = e2 @ e2
    det = g11 * g22 - g12 * g12
    if det <= 0:
        return 0.0, 0.0, 0.0
    r1 = g @ e1
    r2 = g @ e2
    db1 = (g22 * r1 - g12 * r2) / det
    db2 = (g11 * r2 - g12 * r1) / det
    return -(db1 + db2), db1, db2


def _escape_face(verts, faces, grads, vf_off, vf_ids, v, skip_face):
    """Incident face whose own gradient points strictly into its wedge at v."""
    best = -1
    for k in range(vf_off[v], vf_off[v + 1]):
        h = int(vf_ids[k])
        if h == skip_face:
            continue
        tri = faces[h]
        c = 0 if tri[0] == v else (1 if tri[1] == v else 2)
        pa = verts[tri[(c + 1) % 3]] - verts[v]
        pb = verts[tri[(c + 2) % 3]] - verts[v]
        n = np.cross(pa, pb)
        d = grads[h]
        s1 = np.cross(pa, d) @ n
        s2 = np.cross(d, pb) @ n
        tol = -1e-12 * (np.linalg.norm(n) * np.linalg.norm(d) + 1e-300)
        if s1 >= tol and s2 >= tol and (d @ (pa + pb)) > 0:
            if best == -1 or h < best:
                best = h
    return best


def _steepest_edge_neighbor(verts, faces, vf_off, vf_ids, values, v):
    """Adjacent vertex with the largest positive value gain per length."""
    best_u = -1
    best_gain = 0.0
    for k in range(vf_off[v], vf_off[v + 1]):
        tri = faces[int(vf_ids[k])]
        for j in range(3):
            u = int(tri[j])
            if u == v:
                continue
            dv = values[u] - values[v]
            if dv <= 0:
                continue
            gain = dv / np.linalg.norm(verts[u] - verts[v])
            if gain > best_gain or (gain == best_gain and u < best_u):
                best_gain = gain
                best_u = u
    return best_u


def trace_streamline(verts, faces, neighbors, vf_off, vf_ids, values, grads,
                     start_face, start_bary, max_steps, boundary_mask,
                     stall_limit=100):
    """Walk the per-face-constant gradient field from a start point.

    Follows the gradient across faces; at sliver oscillations (the next
    face's gradient points back across the shared edge) it slides along the
    edge toward the higher-value endpoint and escapes through the vertex
    fan. Stops at a boundary edge or boundary vertex, on gradient
    vanishing, or when the stall limit is exhausted near a saddle.

    Returns
    -------
    points : (k, 3) float64 samples from start to stop
    tvals : (k,) field values at the samples
    status : 0 reached boundary, 1 stagnated, 2 step cap hit
    """
    verts = np.asarray(verts, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    boundary_mask = np.asarray(boundary_mask, dtype=np.uint8)

    f = int(start_face)
    bary = np.asarray(start_bary, dtype=np.float64).copy()
    tri = faces[f]
    p = bary[0] * verts[tri[0]] + bary[1] * verts[tri[1]] + bary[2] * verts[tri[2]]
    t = bary[0] * values[tri[0]] + bary[1] * values[tri[1]] + bary[2] * values[tri[2]]
    points = [p]
    tvals = [float(t)]
    status = 2
    stall = 0
    t_best = float(t)

    def enter_vertex(v, skip):
        """Walk the vertex fan (with steepest-edge hops as fallback) until a
        face whose gradient enters its wedge is found.

        Returns (face, final_vertex); face -1 means no continuation (local
        maximum or boundary reached). Each hop strictly increases the field
        value, so the loop terminates; hops never leave a boundary vertex
        (arrival, not a saddle).
        """
        hops = 0
        while True:
            points.append(verts[v].copy())
            tvals.append(float(values[v]))
            nf = _escape_face(verts, faces, grads, vf_off, vf_ids, v, skip)
            if nf >= 0:
                return nf, v
            u = _steepest_edge_neighbor(verts, faces, vf_off, vf_ids, values, v)
            if u < 0 or hops > 10000:
                return -1, v
            if boundary_mask[v] and boundary_mask[u]:
                return -1, v   # hopping along a boundary ring means arrival
            hops += 1
            v = u
            skip = -1

    step = 0
    while step < int(max_steps):
        step += 1
        g = grads[f]
        if g @ g < 1e-24:
            status = 1
            break
        db = _bary_velocity(verts, faces, f, g)
        db_scale = max(abs(db[0]), abs(db[1]), abs(db[2]))
        db_tol = 1e-9 * db_scale
        tau = np.inf
        exit_c = -1
        for i in range(3):
            if db[i] < -db_tol and bary[i] > 1e-12:
                ti = -bary[i] / db[i]
                if ti < tau:
                    tau = ti
                    exit_c = i

        tri = faces[f]
        if exit_c < 0 or not np.isfinite(tau):
            # direction leaves through the current corner or along the edge
            cmax = int(np.argmax(bary))
            if bary[cmax] > 1.0 - 1e-9:
                nf, vend = enter_vertex(int(tri[cmax]), f)
                stall += 1
                if nf == -1 or stall > stall_limit:
                    status = 0 if (nf == -1 and boundary_mask[vend]) else 1
                    break
                f = nf
                tri = faces[f]
                bary = np.zeros(3)
                bary[0 if tri[0] == vend else (1 if tri[1] == vend else 2)] = 1.0
                if tvals[-1] > t_best:
                    t_best = tvals[-1]
                    stall = 0
                continue
            zi = int(np.argmin(bary))
            if bary[zi] > _EPS_DIR:
                status = 1
                break
            exit_c = zi
            nb = bary.copy()
            nb[exit_c] = 0.0
        else:
            nb = bary + tau * np.asarray(db)
            nb[exit_c] = 0.0
        nb = np.clip(nb, 0.0, None)
        nb /= nb.sum()
        c1 = (exit_c + 1) % 3
        c2 = (exit_c + 2) % 3
        va = int(tri[c1])
        vb = int(tri[c2])
        w = nb[c2]
        if w < 1e-12 or w > 1.0 - 1e-12:
            nf, vend = enter_vertex(va if w < 1e-12 else vb, f)
            stall += 1
            if nf == -1 or stall > stall_limit:
                status = 0 if (nf == -1 and boundary_mask[vend]) else 1
                break
            f = nf
            tri = faces[f]
            bary = np.zeros(3)
            bary[0 if tri[0] == vend else (1 if tri[1] == vend else 2)] = 1.0
            if tvals[-1] > t_best:
                t_best = tvals[-1]
                stall = 0
            continue
        p = (1.0 - w) * verts[va] + w * verts[vb]
        t = (1.0 - w) * values[va] + w * values[vb]
        points.append(p)
        tvals.append(float(t))
        e = c1  # edge (tri[c1], tri[c2]) is edge index c1
        nf = int(neighbors[f, e])
        if nf == -1:
            status = 0
            break
        # oscillation check: does the neighbor's gradient leave the shared edge?
        ntri = faces[nf]
        opp = 0
        for i in range(3):
            if ntri[i] != va and ntri[i] != vb:
                opp = i
        dbn = _bary_velocity(verts, faces, nf, grads[nf])
        if dbn[opp] <= _EPS_DIR:
            # slide along the edge toward increasing field value
            nf2, vend = enter_vertex(va if values[va] > values[vb] else vb, f)
            stall += 1
            if nf2 == -1 or stall > stall_limit:
                status = 0 if (nf2 == -1 and boundary_mask[vend]) else 1
                break
            f = nf2
            tri = faces[f]
            bary = np.zeros(3)
            bary[0 if tri[0] == vend else (1 if tri[1] == vend else 2)] = 1.0
            if tvals[-1] > t_best:
                t_best = tvals[-1]
                stall = 0
            continue
        stall = 0
        f = nf
        bary = np.zeros(3)
        for i in range(3):
            if ntri[i] == va:
                bary[i] = 1.0 - w
            elif ntri[i] == vb:
                bary[i] = w
        if t > t_best:
            t_best = t

    return np.asarray(points), np.asarray(tvals), status
