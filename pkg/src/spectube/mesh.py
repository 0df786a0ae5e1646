"""Triangle-mesh core: topology, cotangent Laplacian, boundary geometry.

The :class:`TriMesh` is the substrate for everything else in the package.
Vertex positions are interpreted as millimeters. Meshes are immutable after
construction; all derived quantities are cached on first use and safe to
query from multiple threads.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import DegenerateFaceError, NonManifoldError, VertexNotOnLoopError

DEGENERATE_AREA_MM2 = 1e-12


@dataclass(frozen=True)
class TopologyReport:
    """Result of cylinder-topology validation."""

    genus: int
    boundary_count: int
    is_cylinder: bool
    euler_characteristic: int


class TriMesh:
    """Indexed triangle surface with boundary loops and adjacency.

    Parameters
    ----------
    vertices : array_like
        (n, 3) float positions in mm.
    faces : array_like
        (m, 3) int vertex indices, counter-clockwise when viewed from
        outside. All faces must be consistently oriented.

    Raises
    ------
    NonManifoldError
        If an edge is shared by more than two faces, or two incident faces
        disagree in winding.
    DegenerateFaceError
        If any face area is below ``DEGENERATE_AREA_MM2``.
    """

    def __init__(self, vertices, faces):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        t = np.ascontiguousarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be (n, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("faces must be (m, 3)")
        if t.size and (t.min() < 0 or t.max() >= v.shape[0]):
            raise ValueError("face index out of range")
        self.vertices = v
        self.faces = t
        self.vertices.flags.writeable = False
        self.faces.flags.writeable = False

        self._boundary_loops = None
        self._face_neighbors = None
        self._face_normals = None
        self._face_areas = None
        self._vertex_normals = None

        self._check_degenerate()
        self.adj_sym = self._build_adj_sym()
        if self.adj_sym.data.size and self.adj_sym.data.max() > 2:
            bad = np.argwhere(self.adj_sym.toarray() > 2) if v.shape[0] < 512 else None
            raise NonManifoldError(f"edge shared by more than 2 faces {bad[0] if bad is not None and len(bad) else ''}")
        self.adj_dir = self._build_adj_dir()
        if self.adj_dir.data.size and self.adj_dir.data.max() > 1:
            raise NonManifoldError("inconsistently wound faces (duplicate directed edge)")

    # ---- construction helpers ----------------------------------------

    def _check_degenerate(self):
        areas = self.face_areas
        bad = np.nonzero(areas < DEGENERATE_AREA_MM2)[0]
        if bad.size:
            raise DegenerateFaceError(
                f"face {bad[0]} has area {areas[bad[0]]:.3e} mm^2 below tolerance"
            )

    def _build_adj_sym(self):
        t = self.faces
        i = np.concatenate([t[:, 0], t[:, 1], t[:, 1], t[:, 2], t[:, 2], t[:, 0]])
        j = np.concatenate([t[:, 1], t[:, 0], t[:, 2], t[:, 1], t[:, 0], t[:, 2]])
        n = self.vertices.shape[0]
        return sparse.csr_matrix(
            (np.ones(i.shape[0]), (i, j)), shape=(n, n)
        )

    def _build_adj_dir(self):
        t = self.faces
        i = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
        j = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
        n = self.vertices.shape[0]
        return sparse.csr_matrix(
            (np.ones(i.shape[0]), (i, j)), shape=(n, n)
        )

    # ---- basic quantities ---------------------------------------------

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    @property
    def face_areas(self):
        """(m,) triangle areas in mm^2."""
        if self._face_areas is None:
            v0 = self.vertices[self.faces[:, 0]]
            v1 = self.vertices[self.faces[:, 1]]
            v2 = self.vertices[self.faces[:, 2]]
            cr = np.cross(v1 - v0, v2 - v0)
            self._face_areas = 0.5 * np.linalg.norm(cr, axis=1)
            self._face_areas.flags.writeable = False
        return self._face_areas

    @property
    def face_normals(self):
        """(m, 3) unit outward normals (CCW-from-outside winding)."""
        if self._face_normals is None:
            v0 = self.vertices[self.faces[:, 0]]
            v1 = self.vertices[self.faces[:, 1]]
            v2 = self.vertices[self.faces[:, 2]]
            cr = np.cross(v1 - v0, v2 - v0)
            nrm = np.linalg.norm(cr, axis=1)
            self._face_normals = cr / nrm[:, None]
            self._face_normals.flags.writeable = False
        return self._face_normals

    @property
    def vertex_normals(self):
        """(n, 3) area-weighted unit vertex normals."""
        if self._vertex_normals is None:
            vn = np.zeros_like(self.vertices)
            weighted = self.face_normals * self.face_areas[:, None]
            for k in range(3):
                np.add.at(vn, self.faces[:, k], weighted)
            nrm = np.linalg.norm(vn, axis=1)
            nrm[nrm == 0] = 1.0
            self._vertex_normals = vn / nrm[:, None]
            self._vertex_normals.flags.writeable = False
        return self._vertex_normals

    @property
    def edges(self):
        """(e, 2) undirected edges, each row sorted ascending."""
        iu, ju = sparse.triu(self.adj_sym, k=1).nonzero()
        return np.column_stack([iu, ju])

    def mean_edge_length(self):
        e = self.edges
        d = self.vertices[e[:, 0]] - self.vertices[e[:, 1]]
        return float(np.mean(np.linalg.norm(d, axis=1)))

    @property
    def face_neighbors(self):
        """(m, 3) neighbor face across edge k=(t[f,k], t[f,(k+1)%3]); -1 on boundary."""
        if self._face_neighbors is None:
            t = self.faces
            n = self.n_vertices
            i = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
            j = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
            fid = np.tile(np.arange(self.n_faces), 3) + 1
            # directed edge (i, j) -> owning face id + 1
            owner = sparse.csr_matrix((fid, (i, j)), shape=(n, n))
            # neighbor of face f across (i, j) owns the reversed edge (j, i)
            rev = np.asarray(owner[j, i]).ravel()
            self._face_neighbors = (rev.reshape(3, -1).T - 1).astype(np.int64)
            self._face_neighbors.flags.writeable = False
        return self._face_neighbors

    # ---- topology ------------------------------------------------------

    def euler_characteristic(self):
        vnum = np.unique(self.faces).size
        enum = self.adj_sym.nnz // 2
        return int(vnum - enum + self.n_faces)

    @property
    def boundary_loops(self):
        """List of (k,) arrays: ordered vertex cycles along each boundary.

        Traversal follows the stored face orientation (a loop runs
        counter-clockwise when the surface is viewed from outside with the
        interior to its left).
        """
        if self._boundary_loops is None:
            self._boundary_loops = self._trace_boundary_loops()
        return self._boundary_loops

    def _trace_boundary_loops(self):
        # boundary directed edges = directed edges whose reverse is absent
        a = self.adj_dir.tocsr()
        at = self.adj_dir.T.tocsr()
        bnd = a - a.multiply(at > 0)
        bnd.eliminate_zeros()
        bnd = bnd.tocsr()
        nxt = {}
        ii, jj = bnd.nonzero()
        for i, j in zip(ii, jj):
            nxt[int(i)] = int(j)
        loops = []
        visited = set()
        for start in sorted(nxt):
            if start in visited:
                continue
            loop = [start]
            visited.add(start)
            cur = nxt[start]
            while cur != start:
                loop.append(cur)
                visited.add(cur)
                cur = nxt[cur]
            loops.append(np.asarray(loop, dtype=np.int64))
        return loops

    def connected_component_count(self):
        ncomp, _ = connected_components(self.adj_sym, directed=False)
        return int(ncomp)

    def is_boundary_vertex(self):
        """(n,) bool mask of vertices lying on any boundary loop."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        for loop in self.boundary_loops:
            mask[loop] = True
        return mask


def validate_cylinder_topology(mesh):
    """Classify the mesh topology.

    genus from chi = V - E + F = 2 - 2g - b; is_cylinder iff genus 0 with
    exactly two boundary loops.

    Returns
    -------
    TopologyReport
    """
    chi = mesh.euler_characteristic()
    b = len(mesh.boundary_loops)
    genus = (2 - b - chi) // 2
    return TopologyReport(
        genus=int(genus),
        boundary_count=int(b),
        is_cylinder=(genus == 0 and b == 2),
        euler_characteristic=chi,
    )


def cotangent_laplacian(mesh):
    """Assemble the cotangent-weight Laplacian matrix.

    Off-diagonal entries are -w_ij with w_ij the sum of the cotangents of
    the angles opposite edge (i, j) in its one or two incident triangles;
    the diagonal holds the row-sum of weights, so rows sum to zero and the
    matrix is symmetric positive semi-definite. Obtuse triangles produce
    negative weights and are kept as-is.

    Returns
    -------
    scipy.sparse.csr_matrix
        (n, n) symmetric matrix.
    """
    t = mesh.faces
    v = mesh.vertices
    n = mesh.n_vertices

    ii = []
    jj = []
    ww = []
    for k in range(3):
        a = t[:, k]
        b = t[:, (k + 1) % 3]
        c = t[:, (k + 2) % 3]  # corner opposite edge (a, b)
        u = v[a] - v[c]
        w = v[b] - v[c]
        cross = np.linalg.norm(np.cross(u, w), axis=1)
        if np.any(cross < 1e-300):
            bad = int(np.argmin(cross))
            raise DegenerateFaceError(f"cotangent undefined for zero-area face {bad}")
        cot = np.einsum("ij,ij->i", u, w) / cross
        ii.append(a)
        jj.append(b)
        ww.append(cot)

    i = np.concatenate(ii + jj)
    j = np.concatenate(jj + ii)
    w = np.concatenate(ww + ww)
    W = sparse.csr_matrix((w, (i, j)), shape=(n, n))
    d = np.asarray(W.sum(axis=1)).ravel()
    L = sparse.diags(d) - W
    return L.tocsr()


def mass_matrix(mesh, weighting="barycentric-area"):
    """Diagonal (lumped) mass matrix.

    weighting "barycentric-area" assigns each vertex one third of its
    incident triangle areas; "uniform" is the identity.
    """
    n = mesh.n_vertices
    if weighting == "uniform":
        return sparse.identity(n, format="csr")
    if weighting != "barycentric-area":
        raise ValueError(f"unknown mass weighting {weighting!r}")
    m = np.zeros(n)
    third = mesh.face_areas / 3.0
    for k in range(3):
        np.add.at(m, mesh.faces[:, k], third)
    return sparse.diags(m).tocsr()


def boundary_arc_length_parameterization(mesh, loop_index, base_vertex, orientation="ccw"):
    """Parameterize one boundary loop by normalized arc length.

    theta(base_vertex) = 0 and theta increases monotonically along the
    chosen traversal, with the loop's total length normalized to 2*pi.
    "ccw" follows the stored loop direction (consistent with the surface
    orientation); "cw" reverses it.

    Returns
    -------
    loop_vertices : (k,) int array in traversal order starting at base_vertex
    theta : (k,) float array in [0, 2*pi)
    """
    loop = mesh.boundary_loops[loop_index]
    pos = np.nonzero(loop == base_vertex)[0]
    if pos.size == 0:
        raise VertexNotOnLoopError(
            f"vertex {base_vertex} not on boundary loop {loop_index}"
        )
    loop = np.roll(loop, -int(pos[0]))
    if orientation == "cw":
        loop = np.concatenate([loop[:1], loop[1:][::-1]])
    elif orientation != "ccw":
        raise ValueError("orientation must be 'ccw' or 'cw'")
    pts = mesh.vertices[loop]
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    total = seg.sum()
    cum = np.concatenate([[0.0], np.cumsum(seg[:-1])])
    theta = 2.0 * np.pi * cum / total
    return loop, theta


def vertex_graph_distances(mesh, sources, weighted=True):
    """Dijkstra distances on the edge graph from a set of source vertices."""
    e = mesh.edges
    if weighted:
        w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    else:
        w = np.ones(e.shape[0])
    n = mesh.n_vertices
    g = sparse.csr_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n))
    g = g + g.T
    return dijkstra(g, directed=False, indices=np.atleast_1d(sources))


def remove_caps(mesh, seed_vertices, radius):
    """Delete all faces within a geodesic radius of two seed vertices.

    Bridges closed reconstructions to the open-cylinder precondition: the
    caps around the two seeds are removed, exposing two boundary loops.
    Geodesic distance is measured on the edge graph. Unused vertices are
    dropped and indices compacted.

    Returns
    -------
    TriMesh
        The opened mesh.
    """
    seeds = np.atleast_1d(np.asarray(seed_vertices, dtype=np.int64))
    if seeds.size != 2:
        raise ValueError("exactly two seed vertices required")
    dist = vertex_graph_distances(mesh, seeds).min(axis=0)
    drop_v = dist <= radius
    drop_f = drop_v[mesh.faces].any(axis=1)
    keep = mesh.faces[~drop_f]
    used = np.unique(keep)
    remap = -np.ones(mesh.n_vertices, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return TriMesh(mesh.vertices[used], remap[keep])
