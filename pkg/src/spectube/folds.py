"""Fold detection and segmentation from level-set bundles.

Pipeline: normal-curvature profiles along the traced gradient curves give
(inflection, minimum, inflection) triples in t; triples voted by enough
curves become level-set bundles; each bundle's level sets are fitted with
PCA planes, projected, and aligned to the middle plane; cross-curve lengths
over the aligned stack separate the folds (length maxima are fold centers,
adjacent minima their boundaries); collapsed bundles (tiny normalized
radius) are excluded from segmentation.
"""

import json
import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateGeometryError,
    NoExtremaError,
    TooFewSamplesError,
)
from .levelset import (
    extract_level_set,
    field_values,
    parameterize_tube,
    uniform_level_sets,
)

logger = logging.getLogger(__name__)

DEFAULT_QUORUM = 0.25
MIN_LEVELS_PER_BUNDLE = 8
PROMINENCE_FRACTION = 0.02
COLLAPSE_RADIUS_RULE = 0.1


@dataclass
class CurvatureProfile:
    """Normal curvature along one integration curve."""

    curve_theta: float
    tvals: np.ndarray        # (k,) t at interior samples
    kappa: np.ndarray        # (k,) discrete normal curvature, 1/mm
    inflections: np.ndarray  # t values of sign crossings
    min_points: np.ndarray   # t values of negative local minima
    triples: list            # (t0, t_min, t2, kappa_min) fold candidates


@dataclass
class FittingPlane:
    center: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    normal: np.ndarray
    eigvals: np.ndarray      # descending


@dataclass
class LevelSetBundle:
    t_range: tuple           # (t0, t2)
    t_min: float
    votes: int
    level_sets: list = dc_field(default_factory=list)
    planes: list = dc_field(default_factory=list)
    reference: FittingPlane = None
    collapsed: bool = False
    min_radius: float = float("nan")   # min encl. radius of aligned members


@dataclass
class FoldSegment:
    label: int
    faces: np.ndarray
    contour: np.ndarray      # (k, 3) closed boundary polyline
    theta_range: tuple
    theta_center: float      # chart angle of the cross-curve length maximum
    t_range: tuple
    area: float
    bundle_index: int


# ---- curvature profiles -------------------------------------------------------


def _sample_normals(mesh, points):
    if getattr(mesh, "_kdtree", None) is None:
        mesh._kdtree = cKDTree(mesh.vertices)
    _, idx = mesh._kdtree.query(points)
    return mesh.vertex_normals[idx]


def _resample_uniform(points, tvals, spacing=None):
    """Resample a polyline at uniform arc length (t interpolated along)."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    good = seg > 0
    if spacing is None:
        spacing = float(np.median(seg[good])) if good.any() else 1.0
    n = max(int(np.floor(arc[-1] / spacing)) + 1, 3)
    s = np.linspace(0.0, arc[-1], n)
    out = np.column_stack([np.interp(s, arc, points[:, k]) for k in range(3)])
    tv = np.interp(s, arc, tvals)
    return out, tv


def normal_curvature_profile(mesh, curve):
    """Discrete normal curvature along an integration curve.

    kappa(i) = <p[i+1] - 2 p[i] + p[i-1], n(p[i])> / sbar^2 with n the
    outward surface normal at the sample and sbar the mean adjacent segment
    length. Fold interiors (surface receding from the tube axis) give
    kappa < 0; inflections are located by sign change with linear
    interpolation in t.

    The raw traced polyline is resampled at uniform arc length first: the
    tracer emits clustered samples around vertex fans, and second
    differences need comparable segment lengths.
    """
    if curve.points.shape[0] < 3:
        raise TooFewSamplesError(
            f"curve at theta={curve.theta:.3f} has {curve.points.shape[0]} samples"
        )
    pts, ctv = _resample_uniform(curve.points, curve.tvals)
    if pts.shape[0] >= 11:
        # pointwise surface noise enters the second difference at
        # sigma/h^2; averaging the polyline first suppresses it by the
        # window^2 while folds span many windows
        w = 5
        h = w // 2
        pad = np.vstack([pts[h:0:-1], pts, pts[-2:-(h + 2):-1]])
        kern = np.ones(w) / w
        pts = np.column_stack(
            [np.convolve(pad[:, k], kern, mode="valid") for k in range(3)]
        )
    nrm = _sample_normals(mesh, pts[1:-1])
    d2 = pts[2:] - 2.0 * pts[1:-1] + pts[:-2]
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    sbar = 0.5 * (seg[1:] + seg[:-1])
    kappa = np.einsum("ij,ij->i", d2, nrm) / sbar**2
    tv = ctv[1:-1]
    if kappa.shape[0] >= 7:
        # average out the mesh-cell staircase: its wavelength is the local
        # edge scale, while folds span many edges
        spacing = float(np.median(sbar))
        k = int(round(3.0 * mesh.mean_edge_length() / max(spacing, 1e-9)))
        k = min(max(k, 3), 9) | 1
        h = k // 2
        pad = np.concatenate([kappa[h:0:-1], kappa, kappa[-2:-(h + 2):-1]])
        kappa = np.convolve(pad, np.ones(k) / k, mode="valid")

    infl = []
    for i in range(kappa.shape[0] - 1):
        if kappa[i] * kappa[i + 1] < 0:
            frac = kappa[i] / (kappa[i] - kappa[i + 1])
            infl.append(tv[i] + frac * (tv[i + 1] - tv[i]))
    infl = np.asarray(infl)

    neg_min = []
    for i in range(1, kappa.shape[0] - 1):
        if kappa[i] < 0 and kappa[i] <= kappa[i - 1] and kappa[i] <= kappa[i + 1]:
            if kappa[i] < kappa[i - 1] or kappa[i] < kappa[i + 1]:
                neg_min.append(i)

    triples = []
    for i in neg_min:
        t_m = tv[i]
        below = infl[infl < t_m]
        above = infl[infl > t_m]
        if below.size and above.size:
            triples.append((float(below[-1]), float(t_m), float(above[0]),
                            float(kappa[i])))
    # keep only the deepest minimum per (t0, t2) bracket
    dedup = {}
    for t0, tm, t2, km in triples:
        key = (round(t0, 12), round(t2, 12))
        if key not in dedup or km < dedup[key][3]:
            dedup[key] = (t0, tm, t2, km)
    triples = sorted(dedup.values(), key=lambda x: x[1])

    return CurvatureProfile(
        curve_theta=curve.theta,
        tvals=tv,
        kappa=kappa,
        inflections=infl,
        min_points=np.asarray([tv[i] for i in neg_min]),
        triples=triples,
    )


# ---- bundle construction --------------------------------------------------------


def build_bundles(profiles, initial_levels, n_levels=None, quorum=DEFAULT_QUORUM,
                  delta_t=None, kappa_floor=0.0):
    """Cluster fold-candidate triples into level-set bundles.

    A bundle needs at least ``quorum`` of the traced curves to vote a triple
    whose curvature-minimum t agrees within ``delta_t``. The default
    delta_t is max(0.5/n_levels, twice the median curve sample spacing);
    the sample-spacing floor keeps votes together on bent tubes where level
    rings and mesh rows do not coincide exactly. Triples shallower than
    ``kappa_floor`` in curvature magnitude are ignored (micro-wiggle of the
    field near fold shoulders, a few orders below real fold curvature).

    Bundles whose range fully contains two or more other bundles are
    rejected (global bend curvature, not fold rings), overlapping survivors
    are trimmed to disjoint ranges, and every initial level set inside a
    surviving range is attached to exactly one bundle; levels outside any
    bundle are discarded. Each bundle is later densified to at least
    MIN_LEVELS_PER_BUNDLE members.
    """
    if n_levels is None:
        n_levels = max(len(initial_levels), 1)
    if delta_t is None:
        spacings = []
        for pr in profiles:
            if pr.tvals.shape[0] > 1:
                spacings.append(np.median(np.diff(pr.tvals)))
        med = float(np.median(spacings)) if spacings else 0.0
        delta_t = max(0.5 / n_levels, 2.0 * med)

    votes = []
    for ci, pr in enumerate(profiles):
        for t0, tm, t2, km in pr.triples:
            if km <= -kappa_floor:
                votes.append((ci, t0, tm, t2, km))
    if not votes:
        return []
    votes.sort(key=lambda x: x[2])
    tm = np.asarray([v[2] for v in votes])
    widths = np.asarray([v[3] - v[1] for v in votes])

    # two votes belong together when their minima agree within delta_t or
    # within a quarter of their own extent (field spacing varies strongly
    # along necks, where triples are wide in t)
    clusters = []
    start = 0
    for i in range(1, tm.shape[0] + 1):
        if i == tm.shape[0]:
            clusters.append(votes[start:i])
            break
        link = max(delta_t, 0.25 * min(widths[i], widths[i - 1]))
        if tm[i] - tm[i - 1] > link:
            clusters.append(votes[start:i])
            start = i

    need = max(1, int(np.ceil(quorum * max(len(profiles), 1))))
    bundles = []
    for cl in clusters:
        n_voters = len({c[0] for c in cl})
        if n_voters < need:
            continue
        # quartile envelope rather than median: inflection votes quantize to
        # curve samples, and the bundle should cover the fold's full extent
        t0 = float(np.percentile([c[1] for c in cl], 25))
        t2 = float(np.percentile([c[3] for c in cl], 75))
        tmn = float(np.median([c[2] for c in cl]))
        if t2 <= t0:
            continue
        bundles.append(LevelSetBundle(t_range=(t0, t2), t_min=tmn, votes=n_voters))

    # reject super-bundles that swallow >= 2 smaller ones (bend curvature)
    def contains(b, o):
        return b.t_range[0] <= o.t_range[0] and o.t_range[1] <= b.t_range[1]

    keep = []
    for b in bundles:
        inner = sum(1 for o in bundles if o is not b and contains(b, o))
        if inner >= 2:
            logger.info("dropping super-bundle %s containing %d bundles",
                        b.t_range, inner)
            continue
        keep.append(b)
    keep.sort(key=lambda b: b.t_min)

    # trim overlaps to disjoint ranges
    for a, b in zip(keep, keep[1:]):
        if a.t_range[1] > b.t_range[0]:
            mid = 0.5 * (a.t_range[1] + b.t_range[0])
            mid = min(max(mid, a.t_min), b.t_min)
            a.t_range = (a.t_range[0], mid)
            b.t_range = (mid, b.t_range[1])

    for ls in initial_levels:
        for b in keep:
            if b.t_range[0] <= ls.t <= b.t_range[1]:
                b.level_sets.append(ls)
                break
    return keep


def densify_bundle(mesh, field, bundle, min_levels=MIN_LEVELS_PER_BUNDLE):
    """Ensure the bundle has at least min_levels member level sets."""
    have = {round(ls.t, 12) for ls in bundle.level_sets}
    t0, t2 = bundle.t_range
    n = max(min_levels, len(have))
    for t in np.linspace(t0, t2, n + 2)[1:-1]:
        if round(float(t), 12) in have:
            continue
        try:
            for ls in extract_level_set(mesh, field, float(t)):
                bundle.level_sets.append(ls)
        except Exception:
            continue
    bundle.level_sets.sort(key=lambda ls: ls.t)


# ---- plane fitting and alignment ------------------------------------------------


def _arc_weights(pts, closed=True):
    """Trapezoidal arc-length weight per polyline sample."""
    if closed:
        seg = np.linalg.norm(pts - np.roll(pts, -1, axis=0), axis=1)
        w = 0.5 * (seg + np.roll(seg, 1))
    else:
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        w = np.empty(pts.shape[0])
        w[0] = 0.5 * seg[0]
        w[-1] = 0.5 * seg[-1]
        w[1:-1] = 0.5 * (seg[1:] + seg[:-1])
    s = w.sum()
    return w / s if s > 0 else np.full(pts.shape[0], 1.0 / pts.shape[0])


def fit_plane(level_set):
    """PCA best-fit plane of a level-set polyline.

    Center is the arc-length-weighted sample mean (marching samples crowd
    unevenly along the loop, and the plain mean jitters with the sampling)
    and the covariance uses the same weights; basis vectors are covariance
    eigenvectors in descending eigenvalue order, the normal being the
    smallest-eigenvalue direction. Signs are fixed deterministically
    (largest-magnitude component positive, right-handed e2).
    """
    pts = level_set.points[:-1] if level_set.points.shape[0] > 1 else level_set.points
    wts = _arc_weights(pts)
    c = wts @ pts
    d = pts - c
    cov = (d * wts[:, None]).T @ d
    w, v = np.linalg.eigh(cov)
    if w[1] <= 1e-12 * max(w[2], 1e-300):
        raise DegenerateGeometryError(
            f"level set at t={level_set.t:.4f} is collinear"
        )

    def orient(vec):
        i = int(np.argmax(np.abs(vec)))
        return vec if vec[i] >= 0 else -vec

    normal = orient(v[:, 0])
    e1 = orient(v[:, 2])
    e2 = np.cross(normal, e1)
    return FittingPlane(center=c, e1=e1, e2=e2, normal=normal,
                        eigvals=w[::-1].copy())


def _rotation_between(n_from, n_to, fallback_axis):
    """Rodrigues rotation taking n_from to n_to."""
    c = float(np.clip(n_from @ n_to, -1.0, 1.0))
    axis = np.cross(n_from, n_to)
    s = np.linalg.norm(axis)
    if s < 1e-9:
        if c > 0:
            return np.eye(3)
        # antiparallel normals: axis undefined, use the reference in-plane axis
        axis = fallback_axis / np.linalg.norm(fallback_axis)
        K = np.array([[0, -axis[2], axis[1]],
                      [axis[2], 0, -axis[0]],
                      [-axis[1], axis[0], 0]])
        return np.eye(3) + 2.0 * K @ K
    axis = axis / s
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + s * K + (1.0 - c) * K @ K


def project_and_align(bundle):
    """Project members to their planes and align all to the middle plane.

    Returns the list of (k, 2) arrays in the reference plane's (e1, e2)
    coordinates, ordered like bundle.level_sets. Fills bundle.planes and
    bundle.reference.
    """
    if len(bundle.level_sets) < 2:
        raise ValueError("bundle needs at least 2 level sets with valid planes")
    bundle.planes = [fit_plane(ls) for ls in bundle.level_sets]
    ref = bundle.planes[len(bundle.planes) // 2]
    bundle.reference = ref
    out = []
    for ls, pl in zip(bundle.level_sets, bundle.planes):
        pts = ls.points[:-1]
        proj = pts - ((pts - pl.center) @ pl.normal)[:, None] * pl.normal[None, :]
        R = _rotation_between(pl.normal, ref.normal, ref.e1)
        ali = (R @ (proj - pl.center).T).T + ref.center
        d = ali - ref.center
        out.append(np.column_stack([d @ ref.e1, d @ ref.e2]))
    return out


def enclosing_radius(points2d):
    """Radius of the centroid-centered enclosing circle of 2D samples."""
    c = _arc_weights(points2d) @ points2d
    return float(np.linalg.norm(points2d - c, axis=1).max())


def level_set_radius(level_set):
    """Enclosing radius of one level set projected to its own plane."""
    pl = fit_plane(level_set)
    pts = level_set.points[:-1]
    d = pts - pl.center
    q = np.column_stack([d @ pl.e1, d @ pl.e2])
    return enclosing_radius(q)


def normalization_radius(levels):
    """Tube-wide median level radius, weighted by arc length along the tube.

    Iso-values sampled uniformly in the field crowd into necks (the field's
    variation concentrates where the tube is thin), so a plain median would
    measure the neck; weighting each level by its spacing along the
    centerline restores the intended typical radius.
    """
    order = sorted(range(len(levels)), key=lambda i: levels[i].t)
    radii = []
    centers = []
    for i in order:
        ls = levels[i]
        radii.append(level_set_radius(ls))
        centers.append(ls.points[:-1].mean(axis=0))
    radii = np.asarray(radii)
    centers = np.asarray(centers)
    if radii.shape[0] < 3:
        return float(np.median(radii))
    seg = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    w = np.empty(radii.shape[0])
    w[0] = seg[0]
    w[-1] = seg[-1]
    w[1:-1] = 0.5 * (seg[1:] + seg[:-1])
    idx = np.argsort(radii)
    cum = np.cumsum(w[idx])
    half = 0.5 * cum[-1]
    return float(radii[idx[np.searchsorted(cum, half)]])


def detect_collapsed(bundle, aligned, normalization_radius):
    """Mark the bundle collapsed if its smallest aligned enclosing radius,
    normalized by the tube-wide median level radius, is below 0.1."""
    radii = [enclosing_radius(a) for a in aligned]
    bundle.min_radius = float(min(radii))
    bundle.collapsed = bool(
        bundle.min_radius / normalization_radius < COLLAPSE_RADIUS_RULE
    )
    return bundle.collapsed


# ---- fold segmentation ----------------------------------------------------------


VALLEY_FRACTION = 0.25


def _circular_extrema(values, prominence_fraction=PROMINENCE_FRACTION):
    """Indices of maxima and minima of a circular sequence.

    Exact plateaus collapse to their midpoint; extrema below the prominence
    floor are pruned pairwise with their weaker neighbor minima. The floor
    is the larger of the configured fraction of the global maximum and a
    quarter of the profile range: fold boundaries must descend into real
    valleys, not the shallow dips that plane alignment leaves on top of
    wide fold plateaus.
    """
    n = values.shape[0]
    vmax = float(values.max())
    if vmax <= 0 or np.ptp(values) <= 1e-12 * max(abs(vmax), 1.0):
        return [], []

    # plateau grouping
    groups = []  # (start, end inclusive) circular
    i = 0
    used = np.zeros(n, dtype=bool)
    while i < n:
        if used[i]:
            i += 1
            continue
        j = i
        while values[(j + 1) % n] == values[i] and (j + 1) % n != i:
            j += 1
            used[j % n] = True
        groups.append((i, j))
        i = j + 1
    reps = []
    for a, b in groups:
        mid = (a + (b - a) // 2) % n
        reps.append(mid)
    reps.sort()
    vals = values[reps]
    m = len(reps)
    if m < 2:
        return [], []

    maxima = []
    minima = []
    for k in range(m):
        prev_v = vals[(k - 1) % m]
        next_v = vals[(k + 1) % m]
        if vals[k] > prev_v and vals[k] > next_v:
            maxima.append(k)
        elif vals[k] < prev_v and vals[k] < next_v:
            minima.append(k)
    floor = max(prominence_fraction * vmax, VALLEY_FRACTION * float(np.ptp(values)))
    # prune the weakest maximum and its shallower adjacent minimum until all
    # surviving maxima clear the prominence floor
    while maxima and minima:
        worst = None
        worst_prom = np.inf
        for mk in maxima:
            after = min((mn - mk) % m for mn in minima)
            before = min((mk - mn) % m for mn in minima)
            mn_after = [mn for mn in minima if (mn - mk) % m == after][0]
            mn_before = [mn for mn in minima if (mk - mn) % m == before][0]
            prom = vals[mk] - max(vals[mn_after], vals[mn_before])
            if prom < worst_prom:
                worst_prom = prom
                worst = (mk, mn_after, mn_before)
        if worst is None or worst_prom >= floor:
            break
        mk, mn_after, mn_before = worst
        maxima.remove(mk)
        if mn_after != mn_before:
            weaker = mn_after if vals[mn_after] >= vals[mn_before] else mn_before
            minima.remove(weaker)
    return [reps[k] for k in maxima], [reps[k] for k in minima]


def _unwrap_ramp(angles):
    """Monotone unwrapped ramp of circular values along a loop traversal.

    Returns (ramp starting at 0, reversed flag): samples stay in loop
    order, small backward wiggles are flattened; reversed marks loops
    traversed in the decreasing direction.
    """
    d = np.diff(angles)
    d = np.where(d > np.pi, d - 2 * np.pi, d)
    d = np.where(d < -np.pi, d + 2 * np.pi, d)
    reverse = d.sum() < 0
    if reverse:
        d = -d[::-1]
    ramp = np.concatenate([[0.0], np.cumsum(d)])
    ramp = np.maximum.accumulate(ramp)
    ramp = np.minimum(ramp, 2 * np.pi)
    return ramp, reverse


def _circular_interp(query, base, ramp, samples):
    """Interpolate per-sample values at circular query positions.

    ramp is the monotone unwrap of the samples' own angular positions
    (starting at angle ``base``); the loop is closed at 2*pi.
    """
    q = (np.asarray(query) - base) % (2 * np.pi)
    ramp_c = np.concatenate([ramp, [2 * np.pi]])
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        closed = np.concatenate([arr, arr[:1]])
        return np.interp(q, ramp_c, closed)
    closed = np.vstack([arr, arr[:1]])
    return np.column_stack(
        [np.interp(q, ramp_c, closed[:, k]) for k in range(closed.shape[1])]
    )


def _level_sample_thetas(level_set, param):
    """Angular label of every level-set sample, by seam-aware interpolation
    of the per-vertex chart along the crossed edge."""
    tu = param.theta[level_set.edge_u]
    tv = param.theta[level_set.edge_v]
    d = tv - tu
    d = np.where(d > np.pi, d - 2 * np.pi, d)
    d = np.where(d < -np.pi, d + 2 * np.pi, d)
    return (tu + level_set.alpha * d) % (2 * np.pi)


def cross_curve_lengths(bundle, aligned, param, n_probe, smooth=3):
    """Cross-curve lengths over the aligned stack, probed by loop arc length.

    Each aligned loop is parameterized by its normalized arc length (scaled
    to 2*pi) from a common anchor (its crossing of the polar zero ray, with
    a consistent winding); the cross curve at probe u connects the levels'
    equal-arc points, and its total 2D length peaks on folds. Arc length is
    exact and monotone, immune to both chart-label noise and the polar
    distortion of tilted or offset rings.

    Returns
    -------
    probes : (n_probe,) arc parameters in [0, 2*pi)
    lengths : (n_probe,) cross-curve lengths, lightly smoothed circularly
    probe_theta : (n_probe,) chart theta at each probe (middle level)
    """
    center = np.vstack(aligned).mean(axis=0)
    probes = 2 * np.pi * np.arange(n_probe) / n_probe
    rows = []
    mid = len(aligned) // 2
    mid_arc = mid_theta = None
    for li, (ls, a) in enumerate(zip(bundle.level_sets, aligned)):
        phi = np.arctan2(a[:, 1] - center[1], a[:, 0] - center[0])
        _, rev = _unwrap_ramp(phi % (2 * np.pi))
        pts = a[::-1] if rev else a
        ph = phi[::-1] if rev else phi
        k0 = int(np.argmin(np.abs((ph + np.pi) % (2 * np.pi) - np.pi)))
        pts = np.roll(pts, -k0, axis=0)
        seg = np.linalg.norm(pts - np.roll(pts, -1, axis=0), axis=1)
        total = seg.sum()
        arc = np.concatenate([[0.0], np.cumsum(seg[:-1])]) * (2 * np.pi / total)
        rows.append(_circular_interp(probes, 0.0, arc, pts))
        if li == mid:
            th = _level_sample_thetas(ls, param)
            th_ord = th[::-1] if rev else th
            mid_theta = np.roll(th_ord, -k0)
            mid_arc = arc
    stack = np.asarray(rows)  # (n_levels, n_probe, 2)
    seg = np.linalg.norm(np.diff(stack, axis=0), axis=2)
    lengths = seg.sum(axis=0)
    if smooth > 1:
        k = smooth | 1
        pad = np.concatenate([lengths[-(k // 2):], lengths, lengths[:k // 2]])
        lengths = np.convolve(pad, np.ones(k) / k, mode="valid")

    # chart theta per probe, from the middle level; the chart may wind
    # either way along the loop, so its ramp keeps its own direction
    d_th = np.diff(mid_theta)
    d_th = np.where(d_th > np.pi, d_th - 2 * np.pi, d_th)
    d_th = np.where(d_th < -np.pi, d_th + 2 * np.pi, d_th)
    sgn = 1.0 if d_th.sum() >= 0 else -1.0
    cum = np.concatenate([[0.0], np.cumsum(d_th)])
    cum = sgn * np.maximum.accumulate(sgn * cum)
    cum = sgn * np.minimum(sgn * cum, 2 * np.pi)
    arc_c = np.concatenate([mid_arc, [2 * np.pi]])
    th_c = np.concatenate([cum, [sgn * 2 * np.pi]])
    probe_theta = (mid_theta[0] + np.interp(probes, arc_c, th_c)) % (2 * np.pi)
    return probes, lengths, probe_theta


def _face_footprints(mesh, param):
    """Seam-aware (theta, t) centroid per face, cached on the mesh."""
    key = getattr(mesh, "_footprint_key", None)
    if key is not None and key[0] is param:
        return key[1], key[2]
    th = param.theta[mesh.faces]
    ref = th[:, :1]
    d = th - ref
    d = np.where(d > np.pi, d - 2 * np.pi, d)
    d = np.where(d < -np.pi, d + 2 * np.pi, d)
    theta_c = (ref[:, 0] + d.mean(axis=1)) % (2 * np.pi)
    t_c = param.t[mesh.faces].mean(axis=1)
    mesh._footprint_key = (param, theta_c, t_c)
    return theta_c, t_c


def _largest_edge_connected(mesh, faces):
    if faces.size == 0:
        return faces
    sel = set(int(f) for f in faces)
    nbr = mesh.face_neighbors
    seen = set()
    best = []
    for f0 in faces:
        f0 = int(f0)
        if f0 in seen:
            continue
        comp = [f0]
        seen.add(f0)
        stack = [f0]
        while stack:
            f = stack.pop()
            for k in range(3):
                g = int(nbr[f, k])
                if g >= 0 and g in sel and g not in seen:
                    seen.add(g)
                    comp.append(g)
                    stack.append(g)
        if len(comp) > len(best):
            best = comp
    return np.asarray(sorted(best), dtype=np.int64)


def _face_set_contour(mesh, faces):
    """Closed boundary polyline (longest loop) of a face set."""
    sel = set(int(f) for f in faces)
    nbr = mesh.face_neighbors
    nxt = {}
    for f in faces:
        f = int(f)
        for k in range(3):
            g = int(nbr[f, k])
            if g < 0 or g not in sel:
                a = int(mesh.faces[f, k])
                b = int(mesh.faces[f, (k + 1) % 3])
                nxt[a] = b
    if not nxt:
        return np.zeros((0, 3))
    loops = []
    remaining = dict(nxt)
    while remaining:
        start = min(remaining)
        loop = [start]
        cur = remaining.pop(start)
        while cur != start and cur in remaining:
            loop.append(cur)
            cur = remaining.pop(cur)
        loop.append(start)
        loops.append(loop)
    longest = max(loops, key=len)
    return mesh.vertices[np.asarray(longest, dtype=np.int64)]


def kappa_grid(profiles, t_grid, detrend_fraction=0.25):
    """(n_curves, len(t_grid)) curvature table resampled on a common t grid.

    Each row is detrended by its rolling median over a window much wider
    than a fold: the slowly-varying wall curvature of bent tubes (order
    1/bend-radius) would otherwise bias the sign test that classifies fold
    faces, clipping fold flanks on one side of the bend and admitting bare
    wall on the other.
    """
    from scipy.ndimage import median_filter

    rows = []
    win = max(3, int(detrend_fraction * t_grid.shape[0]) | 1)
    for pr in profiles:
        row = np.interp(t_grid, pr.tvals, pr.kappa, left=0.0, right=0.0)
        row = row - median_filter(row, size=win, mode="nearest")
        rows.append(row)
    return np.asarray(rows)


def _kappa_at(profiles_grid, t_grid, theta_c, t_c, n_curves):
    """Curvature lookup: nearest curve in theta, linear in t.

    Nearest-theta keeps the sign boundary of a fold within half a curve
    spacing; interpolating across it would smear negative curvature a full
    spacing outward.
    """
    gt = np.clip(
        np.searchsorted(t_grid, t_c) - 1, 0, t_grid.shape[0] - 2
    )
    wt = (t_c - t_grid[gt]) / (t_grid[gt + 1] - t_grid[gt])
    th = (theta_c % (2 * np.pi)) / (2 * np.pi) * n_curves
    k0 = np.rint(th).astype(int) % n_curves
    return (1 - wt) * profiles_grid[k0, gt] + wt * profiles_grid[k0, gt + 1]


DEFAULT_N_PROBE = 256


def segment_folds(mesh, bundle, aligned, param, profiles_grid, t_grid,
                  claimed=None, n_probe=DEFAULT_N_PROBE, label_start=0,
                  bundle_index=0, kappa_floor=0.0):
    """Segment the folds of one bundle from cross-curve length extrema.

    Fold centers sit at local maxima of the aligned cross-curve length over
    theta, fold boundaries at the adjacent minima; a fold's faces are those
    whose footprint lies in boundary-window x bundle range with negative
    normal curvature (below -kappa_floor, guarding against the field's
    micro-wiggle around exactly-flat regions).

    Raises
    ------
    NoExtremaError
        If the length profile is constant (no theta structure).
    """
    n_curves = profiles_grid.shape[0]
    if n_probe is None:
        n_probe = DEFAULT_N_PROBE
    probes, lengths, probe_theta = cross_curve_lengths(
        bundle, aligned, param, n_probe, smooth=max(3, (3 * n_probe // 64) | 1))
    maxima, minima = _circular_extrema(lengths)
    if not maxima or not minima:
        raise NoExtremaError(
            f"cross-curve length constant in bundle {bundle.t_range}"
        )

    theta_c, t_c = _face_footprints(mesh, param)
    in_t = (t_c >= bundle.t_range[0]) & (t_c <= bundle.t_range[1])
    kap = _kappa_at(profiles_grid, t_grid, theta_c, t_c, n_curves)
    negative = kap < -kappa_floor
    if claimed is None:
        claimed = np.zeros(mesh.n_faces, dtype=bool)

    minima_sorted = sorted(minima)
    folds = []
    label = label_start
    areas = mesh.face_areas
    for mk in sorted(maxima):
        lows_before = [mn for mn in minima_sorted if mn < mk]
        lows_after = [mn for mn in minima_sorted if mn > mk]
        left = lows_before[-1] if lows_before else (minima_sorted[-1] - n_probe)
        right = lows_after[0] if lows_after else (minima_sorted[0] + n_probe)
        th_a = probe_theta[left % n_probe]
        th_b = probe_theta[right % n_probe]
        th_c0 = probe_theta[mk]
        # the window is the chart arc between the boundary minima that
        # contains the maximum (the chart may wind either way vs the probes)
        if (th_c0 - th_a) % (2 * np.pi) <= (th_b - th_a) % (2 * np.pi):
            th_l, th_r = th_a, th_b
        else:
            th_l, th_r = th_b, th_a
        span = (th_r - th_l) % (2 * np.pi)
        rel = (theta_c - th_l) % (2 * np.pi)
        in_window = rel <= span
        cand = np.nonzero(in_t & in_window & negative & ~claimed)[0]
        cand = _largest_edge_connected(mesh, cand)
        if cand.size == 0:
            continue
        claimed[cand] = True
        # curvature-weighted circular mean: emphasizes the fold core and
        # suppresses the window-edge asymmetry of shallow flank faces
        wgt = areas[cand] * np.maximum(-kap[cand], 0.0)
        z = (wgt * np.exp(1j * theta_c[cand])).sum()
        folds.append(FoldSegment(
            label=label,
            faces=cand,
            contour=_face_set_contour(mesh, cand),
            theta_range=(float(th_l), float(th_r)),
            theta_center=float(np.angle(z) % (2 * np.pi)),
            t_range=bundle.t_range,
            area=float(areas[cand].sum()),
            bundle_index=bundle_index,
        ))
        label += 1
    return folds


# ---- full detection driver -------------------------------------------------------


@dataclass
class FoldDetectionResult:
    folds: list
    bundles: list
    parameterization: object
    profiles: list
    normalization_radius: float


def detect_and_segment(mesh, field, param=None, n_levels=128,
                       quorum=DEFAULT_QUORUM, n_curves=None, delta_t=None):
    """Run the full fold pipeline: curves, profiles, bundles, segmentation.

    Collapsed bundles are flagged and contribute no folds; bundles whose
    cross-curve length has no theta structure (rotationally symmetric
    bulges) are skipped.
    """
    values = field_values(field)
    if param is None:
        kw = {} if n_curves is None else {"n_curves": n_curves}
        param = parameterize_tube(mesh, field, **kw)
    profiles = [normal_curvature_profile(mesh, c) for c in param.curves]
    initial = uniform_level_sets(mesh, field, n_levels)
    norm_radius = normalization_radius(initial)
    # folds must curve at least a few percent of the tube's own curvature;
    # this rejects micro-wiggle triples without touching shallow real folds
    kappa_floor = 0.06 / norm_radius
    bundles = build_bundles(profiles, initial, n_levels=n_levels, quorum=quorum,
                            delta_t=delta_t, kappa_floor=kappa_floor)

    t_grid = np.linspace(0.0, 1.0, 512)
    pg = kappa_grid(profiles, t_grid)
    face_floor = kappa_floor

    folds = []
    claimed = np.zeros(mesh.n_faces, dtype=bool)
    for bi, b in enumerate(bundles):
        densify_bundle(mesh, field, b)
        if len(b.level_sets) < 2:
            continue
        aligned = project_and_align(b)
        if detect_collapsed(b, aligned, norm_radius):
            logger.info("bundle %s collapsed (radius %.3f), folds skipped",
                        b.t_range, b.min_radius / norm_radius)
            continue
        try:
            folds.extend(segment_folds(
                mesh, b, aligned, param, pg, t_grid, claimed=claimed,
                label_start=len(folds), bundle_index=bi,
                kappa_floor=face_floor,
            ))
        except NoExtremaError:
            logger.info("bundle %s has no theta structure, skipped", b.t_range)
    return FoldDetectionResult(
        folds=folds, bundles=bundles, parameterization=param,
        profiles=profiles, normalization_radius=norm_radius,
    )


# ---- export ----------------------------------------------------------------------


def folds_to_json(path, result):
    data = []
    for f in result.folds:
        data.append({
            "label": f.label,
            "faces": [int(x) for x in f.faces],
            "area_mm2": f.area,
            "theta_range": list(f.theta_range),
            "t_range": list(f.t_range),
        })
    payload = {
        "folds": data,
        "bundles": [
            {"t_range": list(b.t_range), "collapsed": bool(b.collapsed),
             "votes": b.votes}
            for b in result.bundles
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def fold_face_labels(mesh, folds):
    """(m,) int label layer: fold label per face, -1 outside folds."""
    lab = -np.ones(mesh.n_faces, dtype=np.int64)
    for f in folds:
        lab[f.faces] = f.label
    return lab
