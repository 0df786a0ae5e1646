"""Synthetic ground-truth tube generator.

Parametric tubes around an analytic spine (straight, single bend, S-bend)
with haustral-like fold rings, optional pinch (collapse) regions, known
smooth deformations producing registered pairs, and landmark oracles.
Everything is deterministic for a fixed spec and seed.

Geometry conventions: a fold is a compact outward radial bump (raised
cosine along the spine, tapered raised-cosine plateau around the
circumference), so axial curves crossing a fold interior have negative
normal curvature under the outward-normal convention. Ground-truth fold
faces are exactly those whose parametric centroid displacement exceeds
half the ring's nominal depth.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import SelfIntersectionError, SpecValidationError
from .mesh import TriMesh


@dataclass(frozen=True)
class FoldRing:
    """One ring of folds centered at arc length ``s_center``."""

    s_center: float
    n_folds: int = 3
    fold_depth: float = 4.0     # mm, radial bump amplitude
    fold_width: float = 28.0    # mm, full axial support of the bump
    theta_offset: float = 0.0   # rad
    theta_gap: float = 0.8      # rad, contiguous fold-free corridor
    depth_scales: tuple = ()    # optional per-fold depth multipliers


@dataclass(frozen=True)
class Pinch:
    s_center: float
    factor: float               # radius multiplier at the pinch center
    width: float = 70.0         # mm, full axial support


@dataclass(frozen=True)
class TubeSpec:
    spine: str = "straight"     # straight | bend | sbend
    length: float = 240.0
    radius: float = 12.0
    bend_angle: float = 0.0     # rad, total tangent turn for bend/sbend
    rings: tuple = ()
    pinch: Pinch = None
    resolution: tuple = (64, 256)   # (n_axial, n_circumferential)
    seed: int = 42

    def validate(self):
        na, nc = self.resolution
        if na < 16 or nc < 16:
            raise SpecValidationError("resolution must be at least (16, 16)")
        if self.spine not in ("straight", "bend", "sbend"):
            raise SpecValidationError(f"unknown spine kind {self.spine!r}")
        if self.spine != "straight" and self.bend_angle <= 0:
            raise SpecValidationError("bent spine needs bend_angle > 0")
        if self.length <= 0 or self.radius <= 0:
            raise SpecValidationError("length and radius must be positive")
        for ring in self.rings:
            if ring.fold_depth >= self.radius:
                raise SpecValidationError("fold_depth must be below the tube radius")
            if ring.n_folds < 1:
                raise SpecValidationError("ring needs at least one fold")
            if not 0 <= ring.theta_gap < 2 * np.pi:
                raise SpecValidationError("theta_gap must be in [0, 2*pi)")
        if self.pinch is not None and not 0 < self.pinch.factor <= 1:
            raise SpecValidationError("pinch factor must be in (0, 1]")


@dataclass(frozen=True)
class Deformation:
    """Smooth deformation producing a registered pair (stands in for a
    second acquisition position)."""

    axial_stretch: float = 0.0  # peak local stretch fraction, ends fixed
    twist: float = 0.0          # rad, peak circumferential twist at mid-tube
    bend_change: float = 0.0    # rad added to bend_angle
    noise_mm: float = 0.0       # bounded radial vertex noise
    seed: int = 0


@dataclass
class GroundTruthFold:
    label: int
    faces: np.ndarray           # face indices
    center: np.ndarray          # 3D area-weighted centroid (mm)
    s_center: float
    theta_center: float
    in_collapsed: bool = False


@dataclass
class GroundTruth:
    folds: list = field(default_factory=list)
    collapsed_s_ranges: list = field(default_factory=list)
    landmarks_src: np.ndarray = None    # (k, 3), deformed pairs only
    landmarks_dst: np.ndarray = None
    spine_s: np.ndarray = None          # arc-length samples of the spine
    spine_points: np.ndarray = None     # (k, 3) analytic spine


# ---- analytic spine ----------------------------------------------------------


def spine_frame(spec, s):
    """Spine point, tangent and in-plane/out-of-plane normals at arc length s.

    All spines are planar (x-z plane); the frame (n1, n2, tangent) is
    right-handed with n2 = +y, so it is rotation-minimizing by construction.
    """
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    if spec.spine == "straight":
        phi = np.zeros_like(s)
        x = np.zeros_like(s)
        z = s.copy()
    elif spec.spine == "bend":
        r_b = spec.length / spec.bend_angle
        phi = s / r_b
        x = r_b * (1.0 - np.cos(phi))
        z = r_b * np.sin(phi)
    elif spec.spine == "sbend":
        half = spec.length / 2.0
        b = spec.bend_angle / 2.0
        r_b = half / b
        phi = np.where(s <= half, s / r_b, b - (s - half) / r_b)
        x1 = r_b * (1.0 - np.cos(np.minimum(s, half) / r_b))
        z1 = r_b * np.sin(np.minimum(s, half) / r_b)
        u = np.clip(s - half, 0.0, None)
        x2 = r_b * (np.cos(b - u / r_b) - np.cos(b))
        z2 = r_b * (np.sin(b) - np.sin(b - u / r_b))
        x = x1 + x2
        z = z1 + z2
    else:
        raise SpecValidationError(f"unknown spine kind {spec.spine!r}")
    p = np.stack([x, np.zeros_like(s), z], axis=-1)
    tangent = np.stack([np.sin(phi), np.zeros_like(s), np.cos(phi)], axis=-1)
    n1 = np.stack([np.cos(phi), np.zeros_like(s), -np.sin(phi)], axis=-1)
    n2 = np.broadcast_to(np.array([0.0, 1.0, 0.0]), p.shape)
    return p, tangent, n1, n2


def _raised_cosine(u):
    """cos^2(pi*u/2) on |u| < 1, 0 outside. Support [-1, 1], value 1 at 0."""
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros_like(u)
    m = np.abs(u) < 1.0
    out[m] = np.cos(0.5 * np.pi * u[m]) ** 2
    return out


def _tapered_plateau(u, taper=0.35):
    """Plateau 1 on |u| <= 1-taper, raised-cosine flanks to 0 at |u| = 1."""
    u = np.abs(np.asarray(u, dtype=np.float64))
    out = np.zeros_like(u)
    out[u <= 1.0 - taper] = 1.0
    m = (u > 1.0 - taper) & (u < 1.0)
    out[m] = np.cos(0.5 * np.pi * (u[m] - (1.0 - taper)) / taper) ** 2
    return out


def _wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _ring_fold_centers(ring):
    arc = 2 * np.pi - ring.theta_gap
    slot = arc / ring.n_folds
    k = np.arange(ring.n_folds)
    centers = ring.theta_offset + ring.theta_gap / 2.0 + slot * (k + 0.5)
    return centers % (2 * np.pi), slot


FOLD_THETA_SPAN = 0.94   # fraction of the slot occupied by a fold
FOLD_THETA_TAPER = 0.15  # tapered fraction of the fold half-extent


def _fold_profiles(spec, s, theta):
    """Normalized displacement profile of every fold at points (s, theta).

    Returns a list of (ring_index, fold_index, profile-array) where profile
    is scale * rc(s) * plateau(theta), i.e. displacement / nominal depth.
    """
    out = []
    for ri, ring in enumerate(spec.rings):
        centers, slot = _ring_fold_centers(ring)
        half_s = ring.fold_width / 2.0
        half_t = FOLD_THETA_SPAN * slot / 2.0
        rc_s = _raised_cosine((s - ring.s_center) / half_s)
        for fi, tc in enumerate(centers):
            scale = ring.depth_scales[fi] if fi < len(ring.depth_scales) else 1.0
            prof = scale * rc_s * _tapered_plateau(
                _wrap_angle(theta - tc) / half_t, FOLD_THETA_TAPER
            )
            out.append((ri, fi, prof))
    return out


PINCH_PLATEAU_TAPER = 0.5


def _pinch_factor(spec, s):
    """Radius multiplier: 1 outside the pinch, ``factor`` on its flat floor.

    The floor is flat (tapered plateau) so the pinch contributes no axial
    curvature of its own where a fold ring may sit inside it.
    """
    if spec.pinch is None:
        return np.ones_like(np.asarray(s, dtype=np.float64))
    half = spec.pinch.width / 2.0
    return 1.0 - (1.0 - spec.pinch.factor) * _tapered_plateau(
        (s - spec.pinch.s_center) / half, PINCH_PLATEAU_TAPER
    )


def surface_radius(spec, s, theta):
    """Tube radius at (s, theta): pinch-scaled base plus fold bumps."""
    r = np.full(np.broadcast_shapes(np.shape(s), np.shape(theta)), spec.radius)
    for ring_i, _, prof in _fold_profiles(spec, s, theta):
        r = r + spec.rings[ring_i].fold_depth * prof
    return r * _pinch_factor(spec, s)


def _grid_faces(na, nc):
    """Faces of the (na x nc) cylinder grid, CCW viewed from outside."""
    i, j = np.meshgrid(np.arange(na - 1), np.arange(nc), indexing="ij")
    jn = (j + 1) % nc
    v00 = i * nc + j
    v01 = i * nc + jn
    v10 = (i + 1) * nc + j
    v11 = (i + 1) * nc + jn
    f1 = np.stack([v00, v01, v11], axis=-1).reshape(-1, 3)
    f2 = np.stack([v00, v11, v10], axis=-1).reshape(-1, 3)
    return np.concatenate([f1, f2], axis=0).astype(np.int64)


def _grid_params(spec):
    na, nc = spec.resolution
    s = np.linspace(0.0, spec.length, na)
    theta = 2 * np.pi * np.arange(nc) / nc
    return s, theta


def _face_param_centroids(spec):
    """Parametric (s, theta) centroid per face, seam-aware."""
    na, nc = spec.resolution
    s, theta = _grid_params(spec)
    i, j = np.meshgrid(np.arange(na - 1), np.arange(nc), indexing="ij")
    jn = j + 1  # unwrapped, may equal nc
    th = 2 * np.pi * np.stack([j, jn, jn], axis=-1) / nc
    th2 = 2 * np.pi * np.stack([j, jn, j], axis=-1) / nc
    sc1 = (s[i] + s[i] + s[i + 1]) / 3.0
    sc2 = (s[i] + s[i + 1] + s[i + 1]) / 3.0
    tc1 = th.mean(axis=-1) % (2 * np.pi)
    tc2 = th2.mean(axis=-1) % (2 * np.pi)
    s_c = np.concatenate([sc1.reshape(-1), sc2.reshape(-1)])
    t_c = np.concatenate([tc1.reshape(-1), tc2.reshape(-1)])
    return s_c, t_c


def generate_tube(spec):
    """Build the tube mesh and its analytic ground truth.

    Returns
    -------
    (TriMesh, GroundTruth)
    """
    spec.validate()
    na, nc = spec.resolution
    s, theta = _grid_params(spec)
    ss, tt = np.meshgrid(s, theta, indexing="ij")
    r = surface_radius(spec, ss, tt)
    p, _, n1, n2 = spine_frame(spec, s)
    verts = (
        p[:, None, :]
        + r[..., None] * (np.cos(tt)[..., None] * n1[:, None, :]
                          + np.sin(tt)[..., None] * n2[:, None, :])
    ).reshape(-1, 3)
    mesh = TriMesh(verts, _grid_faces(na, nc))

    truth = GroundTruth()
    s_c, t_c = _face_param_centroids(spec)
    areas = mesh.face_areas
    label = 0
    for ring_i, fold_i, prof in _fold_profiles(spec, s_c, t_c):
        ring = spec.rings[ring_i]
        faces = np.nonzero(prof > 0.5)[0]
        if faces.size == 0:
            continue
        w = areas[faces]
        centroids = mesh.vertices[mesh.faces[faces]].mean(axis=1)
        center = (centroids * w[:, None]).sum(axis=0) / w.sum()
        centers, _ = _ring_fold_centers(ring)
        in_collapsed = False
        if spec.pinch is not None and spec.pinch.factor < 0.1:
            in_collapsed = bool(
                _pinch_factor(spec, np.asarray([ring.s_center]))[0] < 0.1
            )
        truth.folds.append(GroundTruthFold(
            label=label,
            faces=faces,
            center=center,
            s_center=ring.s_center,
            theta_center=float(centers[fold_i]),
            in_collapsed=in_collapsed,
        ))
        label += 1
    if spec.pinch is not None and spec.pinch.factor < 0.1:
        half = spec.pinch.width / 2.0
        # s-range where the radius factor drops below the 0.1 rule
        u = np.linspace(-1, 1, 2001)
        inside = _pinch_factor(spec, spec.pinch.s_center + u * half) < 0.1
        if inside.any():
            lo = spec.pinch.s_center + u[inside][0] * half
            hi = spec.pinch.s_center + u[inside][-1] * half
            truth.collapsed_s_ranges.append((float(lo), float(hi)))
    truth.spine_s = s
    truth.spine_points = p
    return mesh, truth


# ---- deformed pairs ----------------------------------------------------------


def _stretch_map(spec, deform, s):
    return s + deform.axial_stretch * spec.length / np.pi * np.sin(
        np.pi * s / spec.length
    )


def _twist_map(spec, deform, s):
    return deform.twist * np.sin(np.pi * s / spec.length)


def deform_pair(spec, deform):
    """Generate a (source, target) mesh pair related by a known deformation.

    The target re-evaluates the same material surface on a modified spine:
    arc length is smoothly re-distributed (ends fixed), the circumference is
    twisted by a smooth profile, the bend angle may change, and bounded
    radial noise is added. Landmark pairs are the ground-truth fold centers
    transported by the deformation.

    Returns
    -------
    (TriMesh src, TriMesh dst, GroundTruth)
    """
    spec.validate()
    src_mesh, truth = generate_tube(spec)

    new_angle = spec.bend_angle + deform.bend_change
    dst_kind = spec.spine
    if dst_kind == "straight" and deform.bend_change > 0:
        dst_kind = "bend"
    dst_spec = TubeSpec(
        spine=dst_kind, length=spec.length, radius=spec.radius,
        bend_angle=new_angle, rings=spec.rings, pinch=spec.pinch,
        resolution=spec.resolution, seed=spec.seed,
    )
    if dst_kind != "straight":
        halves = 2.0 if dst_kind == "sbend" else 1.0
        r_b = (spec.length / halves) / (new_angle / halves)
        max_r = spec.radius + max(
            (rg.fold_depth for rg in spec.rings), default=0.0
        )
        if r_b < 2.0 * max_r:
            raise SelfIntersectionError(
                f"bend radius {r_b:.1f} mm too tight for tube radius {max_r:.1f} mm"
            )

    na, nc = spec.resolution
    s, theta = _grid_params(spec)
    ss, tt = np.meshgrid(s, theta, indexing="ij")
    r = surface_radius(spec, ss, tt)  # material radius at source params

    s_new = _stretch_map(spec, deform, s)
    tw = _twist_map(spec, deform, s)
    tt_new = tt + tw[:, None]
    p, _, n1, n2 = spine_frame(dst_spec, s_new)
    rng = np.random.default_rng(deform.seed)
    noise = np.clip(
        rng.normal(0.0, deform.noise_mm / 2.0 if deform.noise_mm else 1.0,
                   size=r.shape) * (1.0 if deform.noise_mm else 0.0),
        -deform.noise_mm, deform.noise_mm,
    )
    verts = (
        p[:, None, :]
        + (r + noise)[..., None] * (np.cos(tt_new)[..., None] * n1[:, None, :]
                                    + np.sin(tt_new)[..., None] * n2[:, None, :])
    ).reshape(-1, 3)
    dst_mesh = TriMesh(verts, _grid_faces(na, nc))

    if truth.folds:
        areas_d = dst_mesh.face_areas
        src_pts = []
        dst_pts = []
        for f in truth.folds:
            w = areas_d[f.faces]
            cend = (dst_mesh.vertices[dst_mesh.faces[f.faces]].mean(axis=1)
                    * w[:, None]).sum(axis=0) / w.sum()
            src_pts.append(f.center)
            dst_pts.append(cend)
        truth.landmarks_src = np.asarray(src_pts)
        truth.landmarks_dst = np.asarray(dst_pts)
    return src_mesh, dst_mesh, truth


# ---- committed corpus --------------------------------------------------------

CORPUS_SEED = 42


def corpus_specs():
    """The six committed desk-scale tube specs (seed 42)."""
    ring = FoldRing
    return {
        "cyl_plain": TubeSpec(
            spine="straight", length=10.0, radius=1.0, rings=(),
            resolution=(64, 32), seed=CORPUS_SEED,
        ),
        "tube_straight_rings": TubeSpec(
            spine="straight", length=240.0, radius=12.0,
            rings=tuple(
                ring(s_center=sc, n_folds=4, fold_depth=4.0, fold_width=28.0,
                     theta_offset=0.35, theta_gap=0.9)
                for sc in (40.0, 80.0, 120.0, 160.0, 200.0)
            ),
            resolution=(128, 128), seed=CORPUS_SEED,
        ),
        "tube_bent_gap": TubeSpec(
            spine="bend", length=240.0, radius=12.0, bend_angle=1.75,
            rings=tuple(
                ring(s_center=sc, n_folds=3, fold_depth=4.0, fold_width=28.0,
                     theta_offset=np.pi, theta_gap=1.0)
                for sc in (40.0, 80.0, 120.0, 160.0, 200.0)
            ),
            resolution=(128, 128), seed=CORPUS_SEED,
        ),
        "tube_sbend_rings": TubeSpec(
            spine="sbend", length=240.0, radius=12.0, bend_angle=2.1,
            rings=tuple(
                ring(s_center=sc, n_folds=4, fold_depth=3.5, fold_width=28.0,
                     theta_offset=0.9, theta_gap=0.9)
                for sc in (45.0, 85.0, 125.0, 165.0, 205.0)
            ),
            resolution=(128, 128), seed=CORPUS_SEED,
        ),
        "tube_pinch05": TubeSpec(
            spine="straight", length=240.0, radius=12.0,
            rings=(
                ring(s_center=60.0, n_folds=4, fold_depth=4.0, fold_width=28.0,
                     theta_offset=0.2, theta_gap=0.9),
                ring(s_center=120.0, n_folds=4, fold_depth=4.0, fold_width=20.0,
                     theta_offset=0.2, theta_gap=0.9),
                ring(s_center=180.0, n_folds=4, fold_depth=4.0, fold_width=28.0,
                     theta_offset=0.2, theta_gap=0.9),
            ),
            pinch=Pinch(s_center=120.0, factor=0.05, width=70.0),
            resolution=(128, 128), seed=CORPUS_SEED,
        ),
        "tube_pinch10": TubeSpec(
            spine="straight", length=240.0, radius=12.0,
            rings=(
                ring(s_center=60.0, n_folds=4, fold_depth=4.0, fold_width=28.0,
                     theta_offset=0.2, theta_gap=0.9),
                ring(s_center=120.0, n_folds=4, fold_depth=4.0, fold_width=20.0,
                     theta_offset=0.2, theta_gap=0.9),
                ring(s_center=180.0, n_folds=4, fold_depth=4.0, fold_width=28.0,
                     theta_offset=0.2, theta_gap=0.9),
            ),
            pinch=Pinch(s_center=120.0, factor=0.10, width=70.0),
            resolution=(128, 128), seed=CORPUS_SEED,
        ),
    }


def corpus_pairs():
    """Three committed deformed pairs used by the registration acceptance."""
    specs = corpus_specs()
    return {
        "pair_straight": (
            specs["tube_straight_rings"],
            Deformation(axial_stretch=0.15, twist=0.35, noise_mm=0.2, seed=CORPUS_SEED),
        ),
        "pair_bent": (
            specs["tube_bent_gap"],
            Deformation(axial_stretch=0.12, twist=0.4, bend_change=0.35,
                        noise_mm=0.2, seed=CORPUS_SEED),
        ),
        "pair_sbend": (
            specs["tube_sbend_rings"],
            Deformation(axial_stretch=0.2, twist=0.3, noise_mm=0.2, seed=CORPUS_SEED),
        ),
    }


# ---- JSON spec schema --------------------------------------------------------


def spec_to_json(spec):
    d = asdict(spec)
    d["rings"] = [asdict(r) for r in spec.rings]
    if spec.pinch is not None:
        d["pinch"] = asdict(spec.pinch)
    return json.dumps(d, indent=2, sort_keys=True)


def spec_from_json(text):
    d = json.loads(text)
    allowed = {"spine", "length", "radius", "bend_angle", "rings", "pinch",
               "resolution", "seed"}
    unknown = set(d) - allowed
    if unknown:
        raise SpecValidationError(f"unknown tube spec keys: {sorted(unknown)}")
    rings = tuple(
        FoldRing(**{**r, "depth_scales": tuple(r.get("depth_scales", ()))})
        for r in d.get("rings", ())
    )
    pinch = Pinch(**d["pinch"]) if d.get("pinch") else None
    spec = TubeSpec(
        spine=d.get("spine", "straight"),
        length=float(d.get("length", 240.0)),
        radius=float(d.get("radius", 12.0)),
        bend_angle=float(d.get("bend_angle", 0.0)),
        rings=rings,
        pinch=pinch,
        resolution=tuple(d.get("resolution", (64, 256))),
        seed=int(d.get("seed", CORPUS_SEED)),
    )
    spec.validate()
    return spec
