"""Eigen-decomposition of the Laplacian, Fiedler field, heat flow, harmonic fields.

The Fiedler field is the eigenvector of the first positive eigenvalue of the
cotangent Laplacian (optionally mass-weighted), rescaled to [0, 1]. Its sign
is fixed deterministically: after scaling, the value at the geometrically
smallest boundary vertex (lexicographically smallest position on any
boundary loop, or of the whole mesh when closed) is at most 0.5. This makes
the output invariant under vertex reindexing.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg as dla
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh, spsolve

from .errors import (
    DisconnectedMeshError,
    EigenSolveFailure,
    InsufficientModesError,
    SingularSystemError,
)
from .mesh import cotangent_laplacian, mass_matrix

EIG_MAX_ITER = 10_000


@dataclass(frozen=True)
class SpectralResult:
    """Eigenpairs of (L, M), eigenvalues ascending, eigenvectors M-orthonormal."""

    eigenvalues: np.ndarray    # (k,)
    eigenvectors: np.ndarray   # (n, k)
    mass_weighting: str

    @property
    def count(self):
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class FiedlerField:
    """Fiedler vector scaled to [0, 1] with its eigenvalue and extremal vertices."""

    values: np.ndarray
    lambda1: float
    min_vertex: int
    max_vertex: int
    mass_weighting: str


def _geometric_anchor_vertex(mesh):
    """Lexicographically smallest boundary vertex position (whole mesh if closed)."""
    loops = mesh.boundary_loops
    if loops:
        cands = np.concatenate(loops)
    else:
        cands = np.arange(mesh.n_vertices)
    pos = mesh.vertices[cands]
    order = np.lexsort((pos[:, 2], pos[:, 1], pos[:, 0]))
    return int(cands[order[0]])


def compute_spectrum(mesh, k=2, mass_weighting="barycentric-area", laplacian=None):
    """First k eigenpairs of the (generalized) cotangent Laplacian.

    Small problems are solved densely; large ones with a shift-invert
    Lanczos iteration targeted just below zero, with a deterministic
    starting vector.

    Raises
    ------
    EigenSolveFailure
        If the iterative solver hits its iteration cap.
    """
    L = cotangent_laplacian(mesh) if laplacian is None else laplacian
    M = mass_matrix(mesh, mass_weighting)
    n = mesh.n_vertices
    if k >= n - 1 or n <= 64:
        k_eff = min(k, n)
        w, v = dla.eigh(L.toarray(), M.toarray())
        return SpectralResult(w[:k_eff].copy(), v[:, :k_eff].copy(), mass_weighting)
    scale = L.diagonal().sum() / M.diagonal().sum()
    sigma = -1e-3 * scale
    v0 = np.random.default_rng(0).standard_normal(n)
    try:
        w, v = eigsh(L, k=k, M=M, sigma=sigma, which="LM", v0=v0,
                     maxiter=EIG_MAX_ITER, tol=0)
    except ArpackNoConvergence as exc:
        raise EigenSolveFailure(f"eigensolver did not converge: {exc}") from exc
    order = np.argsort(w)
    return SpectralResult(w[order], v[:, order], mass_weighting)


def compute_fiedler(mesh, mass_weighting="barycentric-area", laplacian=None):
    """Fiedler field of the mesh, scaled to [0, 1].

    Raises
    ------
    DisconnectedMeshError
        If the mesh has several components (multiplicity-2 null space).
    """
    if mesh.connected_component_count() > 1:
        raise DisconnectedMeshError("mesh has more than one connected component")
    spec = compute_spectrum(mesh, k=2, mass_weighting=mass_weighting,
                            laplacian=laplacian)
    lam1 = float(spec.eigenvalues[1])
    scale = abs(spec.eigenvalues).max()
    if lam1 < 1e-10 * max(scale, 1.0):
        raise DisconnectedMeshError(
            f"first positive eigenvalue {lam1:.3e} is numerically zero"
        )
    f = spec.eigenvectors[:, 1]
    fmin, fmax = f.min(), f.max()
    values = (f - fmin) / (fmax - fmin)
    if values[_geometric_anchor_vertex(mesh)] > 0.5:
        values = 1.0 - values
    return FiedlerField(
        values=values,
        lambda1=lam1,
        min_vertex=int(np.argmin(values)),
        max_vertex=int(np.argmax(values)),
        mass_weighting=mass_weighting,
    )


def flip_field(field):
    """Replace a Fiedler field by 1 - values (orientation flip)."""
    return FiedlerField(
        values=1.0 - field.values,
        lambda1=field.lambda1,
        min_vertex=field.max_vertex,
        max_vertex=field.min_vertex,
        mass_weighting=field.mass_weighting,
    )


def heat_evolve(mesh, initial, t, k_modes, spectrum=None, mass_weighting="uniform"):
    """Truncated spectral solution of the heat equation du/dt = -L u.

    u(t) = sum_k tau_k exp(-lambda_k t) phi_k with tau_k the M-inner
    product of phi_k with the initial field.
    """
    if spectrum is None:
        spectrum = compute_spectrum(mesh, k=k_modes, mass_weighting=mass_weighting)
    if spectrum.count < k_modes:
        raise InsufficientModesError(
            f"{spectrum.count} modes available, {k_modes} requested"
        )
    M = mass_matrix(mesh, spectrum.mass_weighting)
    phi = spectrum.eigenvectors[:, :k_modes]
    lam = spectrum.eigenvalues[:k_modes]
    tau = phi.T @ (M @ np.asarray(initial, dtype=np.float64))
    return phi @ (tau * np.exp(-np.clip(lam, 0.0, None) * t))


def harmonic_field(mesh, boundary_values, laplacian=None):
    """Solve the Laplace equation with Dirichlet data on the boundary.

    Parameters
    ----------
    boundary_values : dict
        vertex index -> value; must cover every boundary vertex.

    Returns
    -------
    (n,) array solving L u = 0 at all non-constrained vertices.
    """
    L = cotangent_laplacian(mesh) if laplacian is None else laplacian
    n = mesh.n_vertices
    fixed_idx = np.fromiter(boundary_values.keys(), dtype=np.int64)
    fixed_val = np.fromiter((boundary_values[i] for i in fixed_idx), dtype=np.float64)
    required = mesh.is_boundary_vertex()
    covered = np.zeros(n, dtype=bool)
    covered[fixed_idx] = True
    if not covered[required].all():
        missing = np.nonzero(required & ~covered)[0]
        raise ValueError(f"boundary vertex {missing[0]} has no Dirichlet value")

    free = np.nonzero(~covered)[0]
    u = np.zeros(n)
    u[fixed_idx] = fixed_val
    if free.size:
        lcsr = L.tocsr()
        A = lcsr[free][:, free]
        b = -lcsr[free][:, fixed_idx] @ fixed_val
        try:
            x = spsolve(A.tocsc(), b)
        except Exception as exc:  # scipy raises several types here
            raise SingularSystemError(str(exc)) from exc
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("harmonic solve produced non-finite values")
        u[free] = x
    return u


def eigen_residuals(mesh, spectrum, laplacian=None):
    """Per-pair residual ||L v - lambda M v||_inf / max(lambda, 1)."""
    L = cotangent_laplacian(mesh) if laplacian is None else laplacian
    M = mass_matrix(mesh, spectrum.mass_weighting)
    res = []
    for i in range(spectrum.count):
        v = spectrum.eigenvectors[:, i]
        lam = spectrum.eigenvalues[i]
        r = L @ v - lam * (M @ v)
        res.append(np.abs(r).max() / max(lam, 1.0))
    return np.asarray(res)


def dump_eigenpairs(path_prefix, spectrum):
    """Write eigenvalues as JSON with the eigenvector matrix as npy sidecar."""
    fields_path = f"{path_prefix}_fields.npy"
    np.save(fields_path, spectrum.eigenvectors)
    meta = {
        "eigenvalues": [float(x) for x in spectrum.eigenvalues],
        "fields": fields_path.rsplit("/", 1)[-1],
        "mass_weighting": spectrum.mass_weighting,
    }
    json_path = f"{path_prefix}.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return json_path


def boundary_loop_field_means(mesh, values):
    """Mean field value per boundary loop."""
    return [float(np.mean(values[loop])) for loop in mesh.boundary_loops]
