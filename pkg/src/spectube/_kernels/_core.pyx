# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: iso-contour marching and gradient streamline tracing.

Mirrors ``_impl.py`` step for step (same arithmetic order); the parity
tests compare the two backends on the synthetic corpus.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt, INFINITY

cnp.import_array()

KERNEL_KIND = "compiled"

cdef double _EPS_DIR = 1e-14


def extract_iso_segments(values, faces, neighbors, double level):
    """See _impl.extract_iso_segments."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    neighbors = np.ascontiguousarray(neighbors, dtype=np.int64)

    cdef const double[::1] vals = values
    cdef const long long[:, ::1] tri = faces
    cdef const long long[:, ::1] nbr = neighbors
    cdef Py_ssize_t m = tri.shape[0]
    cdef Py_ssize_t f, i
    cdef int s0, s1, s2, n_above, lone

    above = values > level
    cdef const cnp.uint8_t[::1] ab = above.view(np.uint8)

    exit_of_np = -np.ones(m, dtype=np.int64)
    cdef long long[::1] exit_of = exit_of_np
    crossing = []
    for f in range(m):
        s0 = ab[tri[f, 0]]
        s1 = ab[tri[f, 1]]
        s2 = ab[tri[f, 2]]
        n_above = s0 + s1 + s2
        if n_above == 0 or n_above == 3:
            continue
        if n_above == 1:
            lone = 0 if s0 else (1 if s1 else 2)
            exit_of[f] = (lone + 2) % 3
        else:
            lone = 0 if not s0 else (1 if not s1 else 2)
            exit_of[f] = lone
        crossing.append(f)

    if not crossing:
        return []

    unvisited = set(crossing)
    out = []
    cdef long long nf, va, vb, u, v
    cdef int lc, e_enter
    while unvisited:
        start = min(unvisited)
        chain = []
        f = start
        closed = False
        while True:
            unvisited.discard(f)
            chain.append(f)
            nf = nbr[f, exit_of[f]]
            if nf == -1:
                break
            if nf == start:
                closed = True
                break
            f = <Py_ssize_t>nf
        if not closed:
            back = []
            f = start
            while True:
                s0 = ab[tri[f, 0]]
                s1 = ab[tri[f, 1]]
                if s0 == s1:
                    lc = 2
                elif s1 == ab[tri[f, 2]]:
                    lc = 0
                else:
                    lc = 1
                e_enter = lc if exit_of[f] == (lc + 2) % 3 else (lc + 2) % 3
                nf = nbr[f, e_enter]
                if nf == -1:
                    break
                f = <Py_ssize_t>nf
                unvisited.discard(f)
                back.append(f)
            chain = back[::-1] + chain

        n = len(chain)
        fid = np.empty(n, dtype=np.int64)
        eu = np.empty(n, dtype=np.int64)
        ev = np.empty(n, dtype=np.int64)
        al = np.empty(n, dtype=np.float64)
        cdef_fill(chain, exit_of, tri, vals, level, fid, eu, ev, al)
        out.append((fid, eu, ev, al, closed))
    return out


cdef void cdef_fill(list chain, long long[::1] exit_of, const long long[:, ::1] tri,
                    const double[::1] vals, double level,
                    cnp.ndarray fid_np, cnp.ndarray eu_np,
                    cnp.ndarray ev_np, cnp.ndarray al_np):
    cdef long long[::1] fid = fid_np
    cdef long long[::1] eu = eu_np
    cdef long long[::1] ev = ev_np
    cdef double[::1] al = al_np
    cdef Py_ssize_t i, f
    cdef int e
    cdef long long va, vb, u, v
    for i in range(len(chain)):
        f = chain[i]
        e = <int>exit_of[f]
        va = tri[f, e]
        vb = tri[f, (e + 1) % 3]
        if va < vb:
            u = va
            v = vb
        else:
            u = vb
            v = va
        fid[i] = f
        eu[i] = u
        ev[i] = v
        al[i] = (level - vals[u]) / (vals[v] - vals[u])


cdef inline void _bary_velocity_c(const double[:, ::1] verts, const long long[:, ::1] faces,
                                  Py_ssize_t f, double gx, double gy, double gz,
                                  double* db) nogil:
    cdef long long a = faces[f, 0]
    cdef long long b = faces[f, 1]
    cdef long long c = faces[f, 2]
    cdef double e1x = verts[b, 0] - verts[a, 0]
    cdef double e1y = verts[b, 1] - verts[a, 1]
    cdef double e1z = verts[b, 2] - verts[a, 2]
    cdef double e2x = verts[c, 0] - verts[a, 0]
    cdef double e2y = verts[c, 1] - verts[a, 1]
    cdef double e2z = verts[c, 2] - verts[a, 2]
    cdef double g11 = e1x * e1x + e1y * e1y + e1z * e1z
    cdef double g12 = e1x * e2x + e1y * e2y + e1z * e2z
    cdef double g22 = e2x * e2x + e2y * e2y + e2z * e2z
    cdef double det = g11 * g22 - g12 * g12
    cdef double r1, r2, db1, db2
    if det <= 0:
        db[0] = 0.0
        db[1] = 0.0
        db[2] = 0.0
        return
    r1 = gx * e1x + gy * e1y + gz * e1z
    r2 = gx * e2x + gy * e2y + gz * e2z
    db1 = (g22 * r1 - g12 * r2) / det
    db2 = (g11 * r2 - g12 * r1) / det
    db[0] = -(db1 + db2)
    db[1] = db1
    db[2] = db2


cdef long long _escape_face_c(const double[:, ::1] verts, const long long[:, ::1] faces,
                              const double[:, ::1] grads, const long long[::1] vf_off,
                              const long long[::1] vf_ids, long long v,
                              long long skip_face) nogil:
    cdef long long best = -1
    cdef Py_ssize_t k, h
    cdef int c
    cdef long long ta, tb
    cdef double pax, pay, paz, pbx, pby, pbz
    cdef double nx, ny, nz, dx, dy, dz
    cdef double s1, s2, tol, nn, dn, fwd
    for k in range(vf_off[v], vf_off[v + 1]):
        h = <Py_ssize_t>vf_ids[k]
        if h == skip_face:
            continue
        if faces[h, 0] == v:
            c = 0
        elif faces[h, 1] == v:
            c = 1
        else:
            c = 2
        ta = faces[h, (c + 1) % 3]
        tb = faces[h, (c + 2) % 3]
        pax = verts[ta, 0] - verts[v, 0]
        pay = verts[ta, 1] - verts[v, 1]
        paz = verts[ta, 2] - verts[v, 2]
        pbx = verts[tb, 0] - verts[v, 0]
        pby = verts[tb, 1] - verts[v, 1]
        pbz = verts[tb, 2] - verts[v, 2]
        nx = pay * pbz - paz * pby
        ny = paz * pbx - pax * pbz
        nz = pax * pby - pay * pbx
        dx = grads[h, 0]
        dy = grads[h, 1]
        dz = grads[h, 2]
        s1 = ((pay * dz - paz * dy) * nx + (paz * dx - pax * dz) * ny
              + (pax * dy - pay * dx) * nz)
        s2 = ((dy * pbz - dz * pby) * nx + (dz * pbx - dx * pbz) * ny
              + (dx * pby - dy * pbx) * nz)
        nn = sqrt(nx * nx + ny * ny + nz * nz)
        dn = sqrt(dx * dx + dy * dy + dz * dz)
        tol = -1e-12 * (nn * dn + 1e-300)
        fwd = dx * (pax + pbx) + dy * (pay + pby) + dz * (paz + pbz)
        if s1 >= tol and s2 >= tol and fwd > 0:
            if best == -1 or h < best:
                best = h
    return best


cdef long long _steepest_edge_c(const double[:, ::1] verts, const long long[:, ::1] faces,
                                const long long[::1] vf_off, const long long[::1] vf_ids,
                                const double[::1] values, long long v) nogil:
    cdef long long best_u = -1
    cdef double best_gain = 0.0
    cdef Py_ssize_t k, j
    cdef long long u
    cdef double dv, dx, dy, dz, gain
    for k in range(vf_off[v], vf_off[v + 1]):
        for j in range(3):
            u = faces[<Py_ssize_t>vf_ids[k], j]
            if u == v:
                continue
            dv = values[u] - values[v]
            if dv <= 0:
                continue
            dx = verts[u, 0] - verts[v, 0]
            dy = verts[u, 1] - verts[v, 1]
            dz = verts[u, 2] - verts[v, 2]
            gain = dv / sqrt(dx * dx + dy * dy + dz * dz)
            if gain > best_gain or (gain == best_gain and u < best_u):
                best_gain = gain
                best_u = u
    return best_u


def trace_streamline(verts_in, faces_in, neighbors_in, vf_off_in, vf_ids_in,
                     values_in, grads_in, start_face, start_bary, max_steps,
                     boundary_mask_in, stall_limit=100):
    """See _impl.trace_streamline."""
    verts_np = np.ascontiguousarray(verts_in, dtype=np.float64)
    faces_np = np.ascontiguousarray(faces_in, dtype=np.int64)
    nbr_np = np.ascontiguousarray(neighbors_in, dtype=np.int64)
    vfo_np = np.ascontiguousarray(vf_off_in, dtype=np.int64)
    vfi_np = np.ascontiguousarray(vf_ids_in, dtype=np.int64)
    vals_np = np.ascontiguousarray(values_in, dtype=np.float64)
    grads_np = np.ascontiguousarray(grads_in, dtype=np.float64)
    bmask_np = np.ascontiguousarray(boundary_mask_in, dtype=np.uint8)

    cdef const double[:, ::1] verts = verts_np
    cdef const long long[:, ::1] faces = faces_np
    cdef const long long[:, ::1] nbr = nbr_np
    cdef const long long[::1] vf_off = vfo_np
    cdef const long long[::1] vf_ids = vfi_np
    cdef const double[::1] values = vals_np
    cdef const double[:, ::1] grads = grads_np
    cdef const cnp.uint8_t[::1] bmask = bmask_np

    cdef Py_ssize_t f = int(start_face)
    cdef double bary[3]
    cdef double nb[3]
    cdef double db[3]
    sb = np.asarray(start_bary, dtype=np.float64)
    bary[0] = sb[0]
    bary[1] = sb[1]
    bary[2] = sb[2]

    pts = []
    tvs = []
    cdef long long a0 = faces[f, 0]
    cdef long long a1 = faces[f, 1]
    cdef long long a2 = faces[f, 2]
    cdef double px = (bary[0] * verts[a0, 0] + bary[1] * verts[a1, 0]
                      + bary[2] * verts[a2, 0])
    cdef double py = (bary[0] * verts[a0, 1] + bary[1] * verts[a1, 1]
                      + bary[2] * verts[a2, 1])
    cdef double pz = (bary[0] * verts[a0, 2] + bary[1] * verts[a1, 2]
                      + bary[2] * verts[a2, 2])
    cdef double t = (bary[0] * values[a0] + bary[1] * values[a1]
                     + bary[2] * values[a2])
    pts.append((px, py, pz))
    tvs.append(t)

    cdef int status = 2
    cdef long long stall = 0
    cdef long long limit = int(stall_limit)
    cdef double t_best = t
    cdef long long steps = int(max_steps)
    cdef long long step = 0
    cdef double gx, gy, gz, db_scale, db_tol, tau, ti, ssum, w
    cdef int exit_c, c1, c2, i, opp, cmax
    cdef long long va, vb, nf, hit, vend, tgt
    cdef double dbn[3]

    while step < steps:
        step += 1
        gx = grads[f, 0]
        gy = grads[f, 1]
        gz = grads[f, 2]
        if gx * gx + gy * gy + gz * gz < 1e-24:
            status = 1
            break
        _bary_velocity_c(verts, faces, f, gx, gy, gz, db)
        db_scale = max(fabs(db[0]), max(fabs(db[1]), fabs(db[2])))
        db_tol = 1e-9 * db_scale
        tau = INFINITY
        exit_c = -1
        for i in range(3):
            if db[i] < -db_tol and bary[i] > 1e-12:
                ti = -bary[i] / db[i]
                if ti < tau:
                    tau = ti
                    exit_c = i

        if exit_c < 0 or tau == INFINITY:
            cmax = 0
            if bary[1] > bary[cmax]:
                cmax = 1
            if bary[2] > bary[cmax]:
                cmax = 2
            if bary[cmax] > 1.0 - 1e-9:
                hit = faces[f, cmax]
                nf, vend = _enter_vertex(verts, faces, grads, vf_off, vf_ids,
                                         values, bmask, hit, f, pts, tvs)
                stall += 1
                if nf == -1 or stall > limit:
                    status = 0 if (nf == -1 and bmask[vend]) else 1
                    break
                f = <Py_ssize_t>nf
                bary[0] = 1.0 if faces[f, 0] == vend else 0.0
                bary[1] = 1.0 if faces[f, 1] == vend else 0.0
                bary[2] = 1.0 if faces[f, 2] == vend else 0.0
                if tvs[len(tvs) - 1] > t_best:
                    t_best = tvs[len(tvs) - 1]
                    stall = 0
                continue
            exit_c = 0
            if bary[1] < bary[exit_c]:
                exit_c = 1
            if bary[2] < bary[exit_c]:
                exit_c = 2
            if bary[exit_c] > _EPS_DIR:
                status = 1
                break
            nb[0] = bary[0]
            nb[1] = bary[1]
            nb[2] = bary[2]
            nb[exit_c] = 0.0
        else:
            nb[0] = bary[0] + tau * db[0]
            nb[1] = bary[1] + tau * db[1]
            nb[2] = bary[2] + tau * db[2]
            nb[exit_c] = 0.0
        for i in range(3):
            if nb[i] < 0.0:
                nb[i] = 0.0
        ssum = nb[0] + nb[1] + nb[2]
        nb[0] /= ssum
        nb[1] /= ssum
        nb[2] /= ssum
        c1 = (exit_c + 1) % 3
        c2 = (exit_c + 2) % 3
        va = faces[f, c1]
        vb = faces[f, c2]
        w = nb[c2]
        if w < 1e-12 or w > 1.0 - 1e-12:
            hit = va if w < 1e-12 else vb
            nf, vend = _enter_vertex(verts, faces, grads, vf_off, vf_ids,
                                     values, bmask, hit, f, pts, tvs)
            stall += 1
            if nf == -1 or stall > limit:
                status = 0 if (nf == -1 and bmask[vend]) else 1
                break
            f = <Py_ssize_t>nf
            bary[0] = 1.0 if faces[f, 0] == vend else 0.0
            bary[1] = 1.0 if faces[f, 1] == vend else 0.0
            bary[2] = 1.0 if faces[f, 2] == vend else 0.0
            if tvs[len(tvs) - 1] > t_best:
                t_best = tvs[len(tvs) - 1]
                stall = 0
            continue
        px = (1.0 - w) * verts[va, 0] + w * verts[vb, 0]
        py = (1.0 - w) * verts[va, 1] + w * verts[vb, 1]
        pz = (1.0 - w) * verts[va, 2] + w * verts[vb, 2]
        t = (1.0 - w) * values[va] + w * values[vb]
        pts.append((px, py, pz))
        tvs.append(t)
        nf = nbr[f, c1]
        if nf == -1:
            status = 0
            break
        opp = 0
        for i in range(3):
            if faces[nf, i] != va and faces[nf, i] != vb:
                opp = i
        _bary_velocity_c(verts, faces, <Py_ssize_t>nf, grads[nf, 0],
                         grads[nf, 1], grads[nf, 2], dbn)
        if dbn[opp] <= _EPS_DIR:
            tgt = va if values[va] > values[vb] else vb
            nf, vend = _enter_vertex(verts, faces, grads, vf_off, vf_ids,
                                     values, bmask, tgt, f, pts, tvs)
            stall += 1
            if nf == -1 or stall > limit:
                status = 0 if (nf == -1 and bmask[vend]) else 1
                break
            f = <Py_ssize_t>nf
            bary[0] = 1.0 if faces[f, 0] == vend else 0.0
            bary[1] = 1.0 if faces[f, 1] == vend else 0.0
            bary[2] = 1.0 if faces[f, 2] == vend else 0.0
            if tvs[len(tvs) - 1] > t_best:
                t_best = tvs[len(tvs) - 1]
                stall = 0
            continue
        stall = 0
        f = <Py_ssize_t>nf
        for i in range(3):
            if faces[f, i] == va:
                bary[i] = 1.0 - w
            elif faces[f, i] == vb:
                bary[i] = w
            else:
                bary[i] = 0.0
        if t > t_best:
            t_best = t

    return (np.asarray(pts, dtype=np.float64), np.asarray(tvs, dtype=np.float64),
            status)


cdef tuple _enter_vertex(const double[:, ::1] verts, const long long[:, ::1] faces,
                         const double[:, ::1] grads, const long long[::1] vf_off,
                         const long long[::1] vf_ids, const double[::1] values,
                         const cnp.uint8_t[::1] bmask,
                         long long v, long long skip, list pts, list tvs):
    cdef long long nf, u
    cdef long long hops = 0
    while True:
        pts.append((verts[v, 0], verts[v, 1], verts[v, 2]))
        tvs.append(values[v])
        nf = _escape_face_c(verts, faces, grads, vf_off, vf_ids, v, skip)
        if nf >= 0:
            return nf, v
        u = _steepest_edge_c(verts, faces, vf_off, vf_ids, values, v)
        if u < 0 or hops > 10000:
            return -1, v
        if bmask[v] and bmask[u]:
            return -1, v   # hopping along a boundary ring means arrival
        hops += 1
        v = u
        skip = -1
