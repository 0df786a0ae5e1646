"""Global tube registration and fold-driven local refinement.

Two tubes with matched (theta, t) charts are registered globally by the
chart identity (theta offset from the boundary pairing, t preserved), then
refined by gradient descent on the fold-matching energy

    E(phi) = int |chi1(p) - chi2(phi(p))|^2 dA + beta int |grad phi|^2 dA

over a periodic-in-theta displacement grid, with the t-displacement
clamped at the two boundaries. The descent uses explicit Euler steps with
halving on energy increase and a fold-over (Jacobian) guard.
"""

import csv
import json
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.spatial import cKDTree

from .errors import FoldOverError, OrientationMismatchError
from .levelset import designate_gamma_loops
from .mesh import boundary_arc_length_parameterization
from .spectral import flip_field

DEFAULT_GRID = 256
DEFAULT_SIGMA_FRACTION = 0.02   # Gaussian width per axis, fraction of extent
DEFAULT_BETA = 1.0
DEFAULT_STEP = 0.1
MAX_HALVINGS = 20


@dataclass
class BoundaryPairing:
    """Correspondence of the two gamma0 loops via arc-length charts."""

    src_loop: np.ndarray
    src_theta: np.ndarray
    dst_loop: np.ndarray
    dst_theta: np.ndarray
    theta_offset: float          # phi maps src theta to theta + offset
    src_flipped: bool
    dst_flipped: bool


@dataclass
class RegistrationMap:
    """Displacement field on a regular (theta, t) grid.

    displacement[i, j] = (dtheta, dt) at node (theta_i = 2*pi*i/n_theta,
    t_j = j/(n_t - 1)); theta wraps, t rows 0 and n_t-1 stay fixed.
    """

    displacement: np.ndarray     # (n_theta, n_t, 2)

    @property
    def n_theta(self):
        return self.displacement.shape[0]

    @property
    def n_t(self):
        return self.displacement.shape[1]

    def node_coords(self):
        th = 2 * np.pi * np.arange(self.n_theta) / self.n_theta
        tt = np.linspace(0.0, 1.0, self.n_t)
        return th, tt

    def apply(self, theta, t):
        """Map (theta, t) points through the displacement (bilinear)."""
        dth = _bilinear(self.displacement[:, :, 0], theta, t)
        dt = _bilinear(self.displacement[:, :, 1], theta, t)
        return (np.asarray(theta) + dth) % (2 * np.pi), np.clip(
            np.asarray(t) + dt, 0.0, 1.0)


@dataclass
class CharacteristicField:
    """Fold indicator on the chart grid, optionally Gaussian-smoothed."""

    values: np.ndarray           # (n_theta, n_t) in [0, 1]
    sigma: float                 # smoothing width in grid units

    @property
    def n_theta(self):
        return self.values.shape[0]

    @property
    def n_t(self):
        return self.values.shape[1]


@dataclass
class ConvergenceTrace:
    iterations: list = dc_field(default_factory=list)  # (it, E, data, smooth, step)

    def append(self, it, energy, data, smooth, step):
        self.iterations.append((it, energy, data, smooth, step))

    def energies(self):
        return np.asarray([row[1] for row in self.iterations])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "energy", "data_term", "smooth_term", "step"])
            for row in self.iterations:
                w.writerow([row[0]] + [f"{x:.17g}" for x in row[1:]])


def _bilinear(grid, theta, t):
    """Bilinear sample of an (n_theta, n_t) grid, periodic in theta."""
    n_th, n_t = grid.shape
    th = (np.asarray(theta, dtype=np.float64) % (2 * np.pi)) / (2 * np.pi) * n_th
    i0 = np.floor(th).astype(int) % n_th
    i1 = (i0 + 1) % n_th
    wi = th - np.floor(th)
    tt = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0) * (n_t - 1)
    j0 = np.clip(np.floor(tt).astype(int), 0, n_t - 2)
    wj = tt - j0
    return ((1 - wi) * ((1 - wj) * grid[i0, j0] + wj * grid[i0, j0 + 1])
            + wi * ((1 - wj) * grid[i1, j0] + wj * grid[i1, j0 + 1]))


# ---- boundary matching ---------------------------------------------------------


def match_boundaries(src_mesh, src_field, dst_mesh, dst_field,
                     src_base, dst_base, orientation_flip=False):
    """Pair the gamma0 loops of two tubes by arc length from base points.

    The base vertices designate the gamma0 loops (e.g. both at the rectum
    end); a field whose minimum is not on its designated gamma0 is flipped
    (values -> 1 - values) automatically. The pairing's theta offset is the
    dst chart angle of dst_base, so registering charts built from other
    seams still sends base to base.

    Returns
    -------
    (BoundaryPairing, src_field, dst_field)
        The fields after flip resolution.

    Raises
    ------
    OrientationMismatchError
        If a field's minimum cannot be brought onto the designated gamma0.
    """
    out_fields = []
    flips = []
    for mesh, field, base in ((src_mesh, src_field, src_base),
                              (dst_mesh, dst_field, dst_base)):
        loops = mesh.boundary_loops
        which = [i for i, lp in enumerate(loops) if base in set(int(v) for v in lp)]
        if not which:
            raise OrientationMismatchError(
                f"base vertex {base} not on any boundary loop"
            )
        designated = which[0]
        g0, _ = designate_gamma_loops(mesh, field)
        flipped = False
        if g0 != designated:
            field = flip_field(field)
            flipped = True
            g0, _ = designate_gamma_loops(mesh, field)
            if g0 != designated:
                raise OrientationMismatchError(
                    "field minimum not on the designated gamma0 after flip"
                )
        out_fields.append(field)
        flips.append(flipped)

    src_field, dst_field = out_fields
    rev = "cw" if orientation_flip else "ccw"
    src_loop, src_theta = boundary_arc_length_parameterization(
        src_mesh, [i for i, lp in enumerate(src_mesh.boundary_loops)
                   if src_base in set(int(v) for v in lp)][0], src_base)
    dst_loop, dst_theta = boundary_arc_length_parameterization(
        dst_mesh, [i for i, lp in enumerate(dst_mesh.boundary_loops)
                   if dst_base in set(int(v) for v in lp)][0], dst_base,
        orientation=rev)
    pairing = BoundaryPairing(
        src_loop=src_loop, src_theta=src_theta,
        dst_loop=dst_loop, dst_theta=dst_theta,
        theta_offset=0.0,
        src_flipped=flips[0], dst_flipped=flips[1],
    )
    return pairing, src_field, dst_field


def pairing_offset(src_param, dst_param, pairing):
    """Theta offset sending the src base to the dst base in the two charts."""
    src_th = float(src_param.theta[pairing.src_loop[0]])
    dst_th = float(dst_param.theta[pairing.dst_loop[0]])
    return (dst_th - src_th) % (2 * np.pi)


# ---- global registration --------------------------------------------------------


def global_register(src_param, dst_param, pairing, n_theta=DEFAULT_GRID,
                    n_t=DEFAULT_GRID):
    """Initial chart-to-chart map: constant theta offset, t preserved."""
    offset = pairing.theta_offset
    if src_param is not None and dst_param is not None:
        offset = (offset + pairing_offset(src_param, dst_param, pairing)) % (2 * np.pi)
    disp = np.zeros((n_theta, n_t, 2))
    # represent the offset in (-pi, pi] so the displacement stays small
    off = offset if offset <= np.pi else offset - 2 * np.pi
    disp[:, :, 0] = off
    return RegistrationMap(displacement=disp)


# ---- characteristic fields -------------------------------------------------------


def build_characteristic(folds, param, mesh, n_theta=DEFAULT_GRID,
                         n_t=DEFAULT_GRID, sigma=None):
    """Rasterize fold membership onto the chart grid and smooth it.

    Each fold face's (theta, t) triangle is rasterized (1 inside); the
    indicator is then convolved with a Gaussian, periodic in theta and
    renormalized at the clamped t-boundaries.
    """
    if sigma is None:
        sigma = DEFAULT_SIGMA_FRACTION * max(n_theta, n_t)
    raw = np.zeros((n_theta, n_t))
    th_v = param.theta[mesh.faces]   # (m, 3)
    t_v = param.t[mesh.faces]
    for f in folds:
        for fi in f.faces:
            tri_th = th_v[fi]
            ref = tri_th[0]
            d = tri_th - ref
            d = np.where(d > np.pi, d - 2 * np.pi, d)
            d = np.where(d < -np.pi, d + 2 * np.pi, d)
            tri_th = ref + d
            tri_t = t_v[fi]
            _rasterize_triangle(raw, tri_th, tri_t)
    smoothed = raw
    if sigma > 0:
        smoothed = gaussian_filter1d(raw, sigma, axis=0, mode="wrap")
        ones = np.ones(raw.shape[1])
        smoothed = gaussian_filter1d(smoothed, sigma, axis=1, mode="constant")
        norm = gaussian_filter1d(ones, sigma, mode="constant")
        smoothed = smoothed / norm[None, :]
    return CharacteristicField(values=np.clip(smoothed, 0.0, 1.0),
                               sigma=float(sigma))


def _rasterize_triangle(grid, tri_theta, tri_t):
    """Mark grid nodes whose (theta, t) falls inside the chart triangle."""
    n_th, n_t = grid.shape
    dth = 2 * np.pi / n_th
    dt = 1.0 / (n_t - 1)
    th_min, th_max = tri_theta.min(), tri_theta.max()
    t_min, t_max = tri_t.min(), tri_t.max()
    i0 = int(np.floor(th_min / dth))
    i1 = int(np.ceil(th_max / dth))
    j0 = max(int(np.floor(t_min / dt)), 0)
    j1 = min(int(np.ceil(t_max / dt)), n_t - 1)
    if i1 < i0 or j1 < j0:
        return
    ii = np.arange(i0, i1 + 1)
    jj = np.arange(j0, j1 + 1)
    TH, TT = np.meshgrid(ii * dth, jj * dt, indexing="ij")
    # barycentric containment
    x1, x2, x3 = tri_theta
    y1, y2, y3 = tri_t
    det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
    if abs(det) < 1e-30:
        return
    l1 = ((y2 - y3) * (TH - x3) + (x3 - x2) * (TT - y3)) / det
    l2 = ((y3 - y1) * (TH - x3) + (x1 - x3) * (TT - y3)) / det
    l3 = 1.0 - l1 - l2
    eps = -1e-12
    inside = (l1 >= eps) & (l2 >= eps) & (l3 >= eps)
    grid[ii[:, None] % n_th, jj[None, :]] = np.where(
        inside, 1.0, grid[ii[:, None] % n_th, jj[None, :]])


# ---- energy and flow -------------------------------------------------------------


def _grad_theta(grid):
    """Central difference along theta (periodic), in grid units."""
    return 0.5 * (np.roll(grid, -1, axis=0) - np.roll(grid, 1, axis=0))


def _grad_t(grid):
    """Central difference along t (one-sided at the clamped boundaries)."""
    out = np.empty_like(grid)
    out[:, 1:-1] = 0.5 * (grid[:, 2:] - grid[:, :-2])
    out[:, 0] = grid[:, 1] - grid[:, 0]
    out[:, -1] = grid[:, -1] - grid[:, -2]
    return out


def _laplacian(grid):
    """5-point stencil, periodic in theta, Neumann in t (grid units)."""
    up = np.roll(grid, -1, axis=0)
    dn = np.roll(grid, 1, axis=0)
    lt = np.empty_like(grid)
    rt = np.empty_like(grid)
    lt[:, 1:] = grid[:, :-1]
    lt[:, 0] = grid[:, 1]
    rt[:, :-1] = grid[:, 1:]
    rt[:, -1] = grid[:, -2]
    return up + dn + lt + rt - 4.0 * grid


def _grid_units(disp):
    """Displacement in grid cells per axis: (dtheta/h_theta, dt/h_t)."""
    n_th, n_t = disp.shape[:2]
    uv = np.empty_like(disp)
    uv[:, :, 0] = disp[:, :, 0] / (2 * np.pi / n_th)
    uv[:, :, 1] = disp[:, :, 1] * (n_t - 1)
    return uv


def _chart_units(uv):
    n_th, n_t = uv.shape[:2]
    disp = np.empty_like(uv)
    disp[:, :, 0] = uv[:, :, 0] * (2 * np.pi / n_th)
    disp[:, :, 1] = uv[:, :, 1] / (n_t - 1)
    return disp


def _map_energy_terms(uv, chi1, chi2, beta):
    """Energy of a grid-unit displacement: data + smoothness (cell measure)."""
    n_th, n_t = chi1.values.shape
    th, tt = np.meshgrid(2 * np.pi * np.arange(n_th) / n_th,
                         np.linspace(0.0, 1.0, n_t), indexing="ij")
    mth = (th + uv[:, :, 0] * (2 * np.pi / n_th)) % (2 * np.pi)
    mtt = np.clip(tt + uv[:, :, 1] / (n_t - 1), 0.0, 1.0)
    chi2_at = _bilinear(chi2.values, mth, mtt)
    diff = chi1.values - chi2_at
    cell = (2 * np.pi / n_th) * (1.0 / (n_t - 1))
    data = float((diff**2).sum() * cell)
    g = 0.0
    for k in range(2):
        g += (_grad_theta(uv[:, :, k]) ** 2 + _grad_t(uv[:, :, k]) ** 2).sum()
    smooth = float(beta * g * cell)
    return data, smooth, diff, mth, mtt


def energy(reg_map, chi1, chi2, beta=DEFAULT_BETA):
    """Discrete registration energy: data term plus beta-weighted smoothness.

    The smoothness term differentiates the displacement in grid cells per
    grid cell, making the two axes commensurable on anisotropic charts.
    """
    data, smooth, _, _, _ = _map_energy_terms(
        _grid_units(reg_map.displacement), chi1, chi2, beta)
    return data + smooth


def _jacobian_ok(uv):
    """True when the grid-unit map (i+u, j+v) preserves orientation."""
    a11 = 1.0 + _grad_theta(uv[:, :, 0])
    a12 = _grad_t(uv[:, :, 0])
    a21 = _grad_theta(uv[:, :, 1])
    a22 = 1.0 + _grad_t(uv[:, :, 1])
    det = a11 * a22 - a12 * a21
    return bool((det[:, 1:-1] > 0).all())


MAX_CELLS_PER_STEP = 0.45


def refine_registration(reg_map, chi1, chi2, step=DEFAULT_STEP, max_iters=500,
                        tol=1e-6, beta=DEFAULT_BETA):
    """Gradient descent on the fold-matching energy.

    Explicit Euler on the displacement field in grid units: the data term
    pulls each mapped point along the target characteristic's gradient to
    match the source value, the Laplacian of the displacement smooths the
    map. Per-node motion is clipped to under half a cell per step, steps
    that would increase the energy are halved (up to MAX_HALVINGS), the
    t-displacement at the two boundaries stays zero, and every accepted
    step must keep the map orientation-preserving.

    Returns
    -------
    (RegistrationMap, ConvergenceTrace)

    Raises
    ------
    FoldOverError
        If no acceptable step size preserves the Jacobian sign.
    """
    uv = _grid_units(reg_map.displacement)
    n_th, n_t = chi1.values.shape
    hth = 2 * np.pi / n_th
    ht = 1.0 / (n_t - 1)

    trace = ConvergenceTrace()
    data, smooth, diff, mth, mtt = _map_energy_terms(uv, chi1, chi2, beta)
    e_prev = data + smooth
    trace.append(0, e_prev, data, smooth, step)

    window = []
    for it in range(1, max_iters + 1):
        # negative gradient w.r.t. the grid-unit displacement (up to
        # 2*cell): the data derivative is a half-cell secant of the sampled
        # interpolant so the line search sees a consistent slope
        gth_at = (_bilinear(chi2.values, mth + 0.5 * hth, mtt)
                  - _bilinear(chi2.values, mth - 0.5 * hth, mtt))
        gt_at = (_bilinear(chi2.values, mth, np.minimum(mtt + 0.5 * ht, 1.0))
                 - _bilinear(chi2.values, mth, np.maximum(mtt - 0.5 * ht, 0.0)))
        flow_u = diff * gth_at + beta * _laplacian(uv[:, :, 0])
        flow_v = diff * gt_at + beta * _laplacian(uv[:, :, 1])
        cur = step
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            du = np.clip(cur * flow_u, -MAX_CELLS_PER_STEP, MAX_CELLS_PER_STEP)
            dv = np.clip(cur * flow_v, -MAX_CELLS_PER_STEP, MAX_CELLS_PER_STEP)
            cand = uv.copy()
            cand[:, :, 0] += du
            cand[:, :, 1] += dv
            cand[:, 0, 1] = 0.0   # boundaries stay matched by the pairing
            cand[:, -1, 1] = 0.0
            if not _jacobian_ok(cand):
                cur *= 0.5
                continue
            d2, s2, diff2, mth2, mtt2 = _map_energy_terms(cand, chi1, chi2, beta)
            e_new = d2 + s2
            if e_new <= e_prev * (1.0 + 1e-12):
                uv = cand
                data, smooth, diff, mth, mtt = d2, s2, diff2, mth2, mtt2
                accepted = True
                break
            cur *= 0.5
        if not accepted:
            if not _jacobian_ok(uv):
                raise FoldOverError("refinement lost injectivity")
            break
        trace.append(it, e_new, data, smooth, cur)
        window.append(e_prev - e_new)
        e_prev = e_new
        if len(window) >= 10:
            rel = sum(window[-10:]) / max(e_new, 1e-300)
            if rel < tol:
                break
    return RegistrationMap(displacement=_chart_units(uv)), trace


def select_reliable_folds(folds, min_area_fraction=0.4):
    """Drop low-area detections before building characteristic fields.

    On noisy meshes the detector emits small fragments alongside the real
    folds (an order of magnitude larger); fragments at wrong locations act
    as false attractors for the refinement flow.
    """
    if not folds:
        return folds
    med = float(np.median([f.area for f in folds]))
    return [f for f in folds if f.area >= min_area_fraction * med]


def refine_multiscale(reg_map, folds_src, param_src, mesh_src,
                      folds_dst, param_dst, mesh_dst,
                      n_theta=DEFAULT_GRID, n_t=DEFAULT_GRID,
                      sigma_fractions=(0.06, 0.03, 0.015, 0.008),
                      step=4.0, max_iters=500, tol=1e-7,
                      beta=0.1):
    """Coarse-to-fine refinement: wide Gaussians capture large offsets,
    narrow ones sharpen the final alignment.

    Returns (RegistrationMap, list of ConvergenceTrace, list of
    (chi1, chi2) per stage).
    """
    folds_src = select_reliable_folds(folds_src)
    folds_dst = select_reliable_folds(folds_dst)
    cur = reg_map
    traces = []
    chis = []
    for frac in sigma_fractions:
        sigma = frac * max(n_theta, n_t)
        chi1 = build_characteristic(folds_src, param_src, mesh_src,
                                    n_theta, n_t, sigma=sigma)
        chi2 = build_characteristic(folds_dst, param_dst, mesh_dst,
                                    n_theta, n_t, sigma=sigma)
        cur, trace = refine_registration(cur, chi1, chi2, step=step,
                                         max_iters=max_iters, tol=tol,
                                         beta=beta)
        traces.append(trace)
        chis.append((chi1, chi2))
    return cur, traces, chis


# ---- point mapping ----------------------------------------------------------------


def _chart_lookup(mesh, param, points):
    """(theta, t) of surface points by barycentric interpolation on the
    nearest face (seam-aware)."""
    if getattr(mesh, "_face_centroid_tree", None) is None:
        cent = mesh.vertices[mesh.faces].mean(axis=1)
        mesh._face_centroid_tree = cKDTree(cent)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    _, fidx = mesh._face_centroid_tree.query(pts)
    th_out = np.empty(pts.shape[0])
    t_out = np.empty(pts.shape[0])
    for k, (p, fi) in enumerate(zip(pts, fidx)):
        tri = mesh.faces[fi]
        v = mesh.vertices[tri]
        e1 = v[1] - v[0]
        e2 = v[2] - v[0]
        r = p - v[0]
        g11, g12, g22 = e1 @ e1, e1 @ e2, e2 @ e2
        det = g11 * g22 - g12 * g12
        b1 = (g22 * (r @ e1) - g12 * (r @ e2)) / det
        b2 = (g11 * (r @ e2) - g12 * (r @ e1)) / det
        b = np.clip(np.array([1 - b1 - b2, b1, b2]), 0.0, 1.0)
        b /= b.sum()
        th = param.theta[tri]
        ref = th[0]
        d = th - ref
        d = np.where(d > np.pi, d - 2 * np.pi, d)
        d = np.where(d < -np.pi, d + 2 * np.pi, d)
        th_out[k] = (ref + (b * d).sum()) % (2 * np.pi)
        t_out[k] = float(b @ param.t[tri])
    return th_out, t_out


def _chart_inverse(mesh, param, theta, t):
    """Surface points at chart coordinates (nearest-face barycentric walk)."""
    key = getattr(mesh, "_chart_tree", None)
    if key is None or key[0] is not param:
        th_c = param.theta[mesh.faces]
        ref = th_c[:, :1]
        d = th_c - ref
        d = np.where(d > np.pi, d - 2 * np.pi, d)
        d = np.where(d < -np.pi, d + 2 * np.pi, d)
        th_cent = (ref[:, 0] + d.mean(axis=1)) % (2 * np.pi)
        t_cent = param.t[mesh.faces].mean(axis=1)
        emb = np.column_stack([np.cos(th_cent), np.sin(th_cent), 2.0 * t_cent])
        mesh._chart_tree = (param, cKDTree(emb), th_cent, t_cent)
    _, tree, _, _ = mesh._chart_tree

    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    q = np.column_stack([np.cos(theta), np.sin(theta), 2.0 * t])
    _, cand = tree.query(q, k=min(8, mesh.n_faces))
    out = np.empty((theta.shape[0], 3))
    for k in range(theta.shape[0]):
        # containment test in chart coordinates over candidate faces
        found = False
        for fi in np.atleast_1d(cand[k]):
            tri = mesh.faces[fi]
            th = param.theta[tri]
            ref = th[0]
            d = th - ref
            d = np.where(d > np.pi, d - 2 * np.pi, d)
            d = np.where(d < -np.pi, d + 2 * np.pi, d)
            x = ref + d
            y = param.t[tri]
            qx = ref + ((theta[k] - ref + np.pi) % (2 * np.pi) - np.pi)
            det = (y[1] - y[2]) * (x[0] - x[2]) + (x[2] - x[1]) * (y[0] - y[2])
            if abs(det) < 1e-30:
                continue
            l1 = ((y[1] - y[2]) * (qx - x[2]) + (x[2] - x[1]) * (t[k] - y[2])) / det
            l2 = ((y[2] - y[0]) * (qx - x[2]) + (x[0] - x[2]) * (t[k] - y[2])) / det
            l3 = 1.0 - l1 - l2
            lam = np.array([l1, l2, l3])
            if (lam >= -1e-9).all():
                out[k] = lam @ mesh.vertices[tri]
                found = True
                break
        if not found:
            fi = np.atleast_1d(cand[k])[0]
            tri = mesh.faces[fi]
            out[k] = mesh.vertices[tri].mean(axis=0)
    return out


def map_point(reg_map, src_mesh, src_param, dst_mesh, dst_param, points):
    """Map surface points: src chart lookup, map evaluation, dst inverse."""
    th, tt = _chart_lookup(src_mesh, src_param, points)
    mth, mtt = reg_map.apply(th, tt)
    return _chart_inverse(dst_mesh, dst_param, mth, mtt)


# ---- serialization -----------------------------------------------------------------


def save_registration(path_prefix, reg_map):
    """JSON header plus npy binary grid."""
    grid_path = f"{path_prefix}_grid.npy"
    np.save(grid_path, reg_map.displacement)
    meta = {
        "grid": grid_path.rsplit("/", 1)[-1],
        "n_theta": reg_map.n_theta,
        "n_t": reg_map.n_t,
        "domain": "[0,2pi)x[0,1]",
    }
    with open(f"{path_prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
