"""Q2-P-1 discretization of the lid-driven cavity on (-1, 1)^2.

Numbering conventions
---------------------
* Nodes are lexicographic, ``node = j * (n + 1) + i`` with ``i`` running in x
  and ``j`` running in y (bottom row first).
* Velocity dofs are all x-components followed by all y-components, so the
  velocity vector has length ``2 * (n + 1)**2``.
* A Q2 element is a 2x2 block of grid cells.  Elements are numbered
  lexicographically as well, ``e = J * (n // 2) + I``.
* Each element carries three discontinuous pressure dofs ordered
  (constant, x - x_c, y - y_c) with (x_c, y_c) the element centroid.
* Subdomains form an ``n_d x n_d`` grid numbered row by row starting from the
  top-left corner of the cavity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = [
    "GridSpec",
    "Mesh",
    "SampleMesh",
    "build_mesh",
    "assemble_viscosity_blocks",
    "assemble_divergence",
    "assemble_convection",
    "assemble_convection_sampled",
    "sampled_convection_local",
    "boundary_interpolant",
    "pressure_area_vector",
    "assemble_enrichment_laplacian",
    "build_sample_mesh",
    "export_matrix_market",
    "reference_element",
]


@dataclass(frozen=True)
class GridSpec:
    """Grid resolution and subdomain layout.

    ``n`` is the number of cells per side; ``n_d`` the number of viscosity
    subdomains per side, giving ``m = n_d**2`` parameters.  When ``n_d`` does
    not divide ``n / 2`` elements are assigned to subdomains by centroid.
    """

    n: int
    n_d: int = 2

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 2 or self.n % 2:
            raise ValueError(f"n must be an even positive integer, got {self.n!r}")
        if not isinstance(self.n_d, (int, np.integer)) or self.n_d < 1:
            raise ValueError(f"n_d must be a positive integer, got {self.n_d!r}")
        if self.n_d > self.n // 2:
            raise ValueError(
                f"n_d={self.n_d} exceeds the element count per side n/2={self.n // 2}"
            )

    @property
    def m(self) -> int:
        return self.n_d**2


# --------------------------------------------------------------------------
# reference element
# --------------------------------------------------------------------------


def _lagrange_1d(s):
    s = np.asarray(s, dtype=float)
    val = np.stack([0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)], axis=-1)
    der = np.stack([s - 0.5, -2.0 * s, s + 0.5], axis=-1)
    return val, der


@dataclass(frozen=True)
class ReferenceElement:
    """Q2 shape functions tabulated at a tensor Gauss rule on [-1, 1]^2.

    Local node ``k = 3 * b + a`` sits at ``(s, t) = (a - 1, b - 1)``.
    """

    points: np.ndarray  # (nq, 2)
    weights: np.ndarray  # (nq,)
    phi: np.ndarray  # (nq, 9)
    dphi_ds: np.ndarray  # (nq, 9)
    dphi_dt: np.ndarray  # (nq, 9)


def reference_element(order: int) -> ReferenceElement:
    g, w = np.polynomial.legendre.leggauss(order)
    s, t = np.meshgrid(g, g, indexing="xy")
    s, t = s.ravel(), t.ravel()
    weights = np.outer(w, w).ravel()
    vs, ds = _lagrange_1d(s)
    vt, dt = _lagrange_1d(t)
    # local node k = 3 * b + a
    phi = np.einsum("qb,qa->qba", vt, vs).reshape(len(s), 9)
    dphi_ds = np.einsum("qb,qa->qba", vt, ds).reshape(len(s), 9)
    dphi_dt = np.einsum("qb,qa->qba", dt, vs).reshape(len(s), 9)
    return ReferenceElement(np.column_stack([s, t]), weights, phi, dphi_ds, dphi_dt)


# 3x3 Gauss integrates stiffness and divergence exactly; the convection
# trilinear form has degree 6 per direction and needs 4x4.
_REF3 = reference_element(3)
_REF4 = reference_element(4)


# --------------------------------------------------------------------------
# mesh
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Mesh:
    spec: GridSpec
    coords: np.ndarray  # (n_nodes, 2)
    elements: np.ndarray  # (n_el, 9) node ids, local order k = 3 b + a
    centroids: np.ndarray  # (n_el, 2)
    h: float  # element side length
    pressure_dofs: np.ndarray  # (n_el, 3)
    boundary_nodes: np.ndarray
    subdomain: np.ndarray  # (n_el,)
    node_elements: list = field(repr=False)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_el(self) -> int:
        return len(self.elements)

    @property
    def n_vel(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_p(self) -> int:
        return 3 * self.n_el

    @property
    def detJ(self) -> float:
        return (0.5 * self.h) ** 2

    @cached_property
    def velocity_dofs(self) -> np.ndarray:
        """(n_el, 18) velocity dofs per element, x-block then y-block."""
        return np.hstack([self.elements, self.elements + self.n_nodes])

    @cached_property
    def boundary_dofs(self) -> np.ndarray:
        return np.concatenate([self.boundary_nodes, self.boundary_nodes + self.n_nodes])

    @cached_property
    def interior_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_vel, dtype=bool)
        mask[self.boundary_dofs] = False
        return np.flatnonzero(mask)

    @cached_property
    def interior_position(self) -> np.ndarray:
        """Map from global velocity dof to position in ``interior_dofs`` (-1 on the boundary)."""
        pos = np.full(self.n_vel, -1, dtype=np.int64)
        pos[self.interior_dofs] = np.arange(len(self.interior_dofs))
        return pos


def build_mesh(spec: GridSpec) -> Mesh:
    n = spec.n
    ne = n // 2
    x = np.linspace(-1.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x, indexing="xy")
    coords = np.column_stack([X.ravel(), Y.ravel()])

    I, J = np.meshgrid(np.arange(ne), np.arange(ne), indexing="xy")
    I, J = I.ravel(), J.ravel()
    a = np.tile(np.arange(3), 3)
    b = np.repeat(np.arange(3), 3)
    elements = (2 * J[:, None] + b[None, :]) * (n + 1) + 2 * I[:, None] + a[None, :]
    centroids = coords[elements[:, 4]]
    h = 4.0 / n

    pressure_dofs = np.arange(3 * len(elements)).reshape(-1, 3)

    on_edge = (
        (np.abs(coords[:, 0]) == 1.0) | (np.abs(coords[:, 1]) == 1.0)
    )
    boundary_nodes = np.flatnonzero(on_edge)

    # elements are tagged by centroid; exact partition whenever n_d divides n/2
    cx, cy = centroids[:, 0], centroids[:, 1]
    col = np.minimum(((cx + 1.0) * 0.5 * spec.n_d).astype(int), spec.n_d - 1)
    row_from_top = np.minimum(((1.0 - cy) * 0.5 * spec.n_d).astype(int), spec.n_d - 1)
    subdomain = row_from_top * spec.n_d + col

    node_elements = [[] for _ in range(len(coords))]
    for e, nodes in enumerate(elements):
        for v in nodes:
            node_elements[v].append(e)
    node_elements = [np.asarray(lst, dtype=np.int64) for lst in node_elements]

    return Mesh(
        spec=spec,
        coords=coords,
        elements=elements,
        centroids=centroids,
        h=h,
        pressure_dofs=pressure_dofs,
        boundary_nodes=boundary_nodes,
        subdomain=subdomain,
        node_elements=node_elements,
    )


# --------------------------------------------------------------------------
# assembly kernels
# --------------------------------------------------------------------------


def _coo_sum(rows, cols, vals, shape) -> sp.csr_matrix:
    """Sum duplicate COO entries into sorted CSR.

    Entries sharing (row, col) are added in their input order, so two calls
    that see the same per-row stream produce bitwise identical rows.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    if rows.size == 0:
        return sp.csr_matrix(shape)
    key = rows * shape[1] + cols
    order = np.argsort(key, kind="stable")
    key = key[order]
    vals = vals[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    summed = np.add.reduceat(vals, starts)
    ukey = key[starts]
    r = ukey // shape[1]
    c = ukey % shape[1]
    indptr = np.zeros(shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, r + 1, 1)
    indptr = np.cumsum(indptr)
    return sp.csr_matrix((summed, c, indptr), shape=shape)


def _scalar_stiffness_local(mesh: Mesh) -> np.ndarray:
    ref = _REF3
    scale = 2.0 / mesh.h
    gx = ref.dphi_ds * scale
    gy = ref.dphi_dt * scale
    w = ref.weights * mesh.detJ
    return np.einsum("q,qi,qj->ij", w, gx, gx) + np.einsum("q,qi,qj->ij", w, gy, gy)


def _divergence_local(mesh: Mesh) -> np.ndarray:
    """(3, 18) local block of B = -(psi_k, div phi_j)."""
    ref = _REF3
    scale = 2.0 / mesh.h
    w = ref.weights * mesh.detJ
    half = 0.5 * mesh.h
    psi = np.column_stack(
        [np.ones(len(w)), half * ref.points[:, 0], half * ref.points[:, 1]]
    )
    bx = -np.einsum("q,qk,qj->kj", w, psi, ref.dphi_ds * scale)
    by = -np.einsum("q,qk,qj->kj", w, psi, ref.dphi_dt * scale)
    return np.hstack([bx, by])


def _block_diag_entries(dofs9, n_nodes, local):
    """COO entries of diag(local, local) for scalar element matrices ``local`` (E, 9, 9)."""
    E = len(dofs9)
    r = np.broadcast_to(dofs9[:, :, None], (E, 9, 9))
    c = np.broadcast_to(dofs9[:, None, :], (E, 9, 9))
    rows = np.concatenate([r, r + n_nodes], axis=1)
    cols = np.concatenate([c, c + n_nodes], axis=1)
    vals = np.concatenate([local, local], axis=1)
    return rows, cols, vals


def assemble_viscosity_blocks(mesh: Mesh) -> list[sp.csr_matrix]:
    """Unit-viscosity vector-Laplacian stiffness of each subdomain.

    ``A(xi) = sum_i xi[i] * blocks[i]``.
    """
    K = _scalar_stiffness_local(mesh)
    shape = (mesh.n_vel, mesh.n_vel)
    blocks = []
    for i in range(mesh.spec.m):
        els = np.flatnonzero(mesh.subdomain == i)
        local = np.broadcast_to(K, (len(els), 9, 9))
        rows, cols, vals = _block_diag_entries(mesh.elements[els], mesh.n_nodes, local)
        blocks.append(_coo_sum(rows, cols, vals, shape))
    return blocks


def assemble_divergence(mesh: Mesh) -> sp.csr_matrix:
    """Divergence matrix ``B`` of shape ``(n_p, n_vel)``."""
    Bl = _divergence_local(mesh)
    E = mesh.n_el
    rows = np.broadcast_to(mesh.pressure_dofs[:, :, None], (E, 3, 18))
    cols = np.broadcast_to(mesh.velocity_dofs[:, None, :], (E, 3, 18))
    vals = np.broadcast_to(Bl, (E, 3, 18))
    return _coo_sum(rows, cols, vals, (mesh.n_p, mesh.n_vel))


def _convection_local(mesh: Mesh, ux_el, uy_el) -> np.ndarray:
    """Scalar element convection matrices (E, 9, 9) for nodal velocities (E, 9)."""
    ref = _REF4
    scale = 2.0 / mesh.h
    w = ref.weights * mesh.detJ
    # einsum rather than BLAS: per-element results must not depend on how many
    # elements are batched, so that sampled rows match the full assembly bitwise
    wx = np.einsum("ek,qk->eq", ux_el, ref.phi) * w
    wy = np.einsum("ek,qk->eq", uy_el, ref.phi) * w
    return np.einsum("eq,qi,qj->eij", wx, ref.phi, ref.dphi_ds * scale) + np.einsum(
        "eq,qi,qj->eij", wy, ref.phi, ref.dphi_dt * scale
    )


def assemble_convection(mesh: Mesh, u) -> sp.csr_matrix:
    """Convection matrix ``N(u)_{ij} = ((u . grad phi_j), phi_i)``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_vel,):
        raise ValueError(f"u must have length {mesh.n_vel}, got shape {u.shape}")
    el = mesh.elements
    local = _convection_local(mesh, u[el], u[el + mesh.n_nodes])
    rows, cols, vals = _block_diag_entries(el, mesh.n_nodes, local)
    return _coo_sum(rows, cols, vals, (mesh.n_vel, mesh.n_vel))


# --------------------------------------------------------------------------
# sample mesh
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SampleMesh:
    """Elements needed to assemble selected rows of the convection matrix.

    ``local_dofs`` is the sorted union of velocity dofs touched by the sample
    elements; ``element_local`` maps each sample element's 18 dofs into it.
    """

    rows: np.ndarray  # global velocity dofs, in the requested order
    elements: np.ndarray  # sorted element ids
    local_dofs: np.ndarray
    element_local: np.ndarray  # (len(elements), 18)

    @property
    def n_elements(self) -> int:
        return len(self.elements)


def build_sample_mesh(mesh: Mesh, indices) -> SampleMesh:
    rows = np.asarray(indices, dtype=np.int64).ravel()
    if rows.size and (rows.min() < 0 or rows.max() >= mesh.n_vel):
        raise ValueError("sample rows must be valid velocity dofs")
    nodes = np.unique(rows % mesh.n_nodes)
    if nodes.size:
        elements = np.unique(np.concatenate([mesh.node_elements[v] for v in nodes]))
    else:
        elements = np.zeros(0, dtype=np.int64)
    vd = mesh.velocity_dofs[elements]
    local_dofs = np.unique(vd)
    element_local = np.searchsorted(local_dofs, vd)
    return SampleMesh(rows, elements, local_dofs, element_local)


def sampled_convection_local(mesh: Mesh, sample: SampleMesh, u_local) -> sp.csr_matrix:
    """Rows ``sample.rows`` of ``N(u)`` with columns indexed by ``sample.local_dofs``.

    ``u_local`` holds the velocity at ``sample.local_dofs`` only, so the cost
    depends on the sample size and not on the mesh size.
    """
    u_local = np.asarray(u_local, dtype=float)
    nloc = len(sample.local_dofs)
    shape = (len(sample.rows), nloc)
    if sample.n_elements == 0:
        return sp.csr_matrix(shape)
    loc = sample.element_local
    local = _convection_local(mesh, u_local[loc[:, :9]], u_local[loc[:, 9:]])
    E = sample.n_elements
    r = np.broadcast_to(loc[:, :9, None], (E, 9, 9))
    c = np.broadcast_to(loc[:, None, :9], (E, 9, 9))
    ry = np.broadcast_to(loc[:, 9:, None], (E, 9, 9))
    cy = np.broadcast_to(loc[:, None, 9:], (E, 9, 9))
    rows = np.concatenate([r, ry], axis=1).ravel()
    cols = np.concatenate([c, cy], axis=1).ravel()
    vals = np.concatenate([local, local], axis=1).ravel()

    urows, inverse = np.unique(sample.rows, return_inverse=True)
    req = np.searchsorted(sample.local_dofs, urows)
    ok = (req < nloc) & (sample.local_dofs[np.minimum(req, nloc - 1)] == urows)
    if not ok.all():
        raise ValueError(f"row {urows[~ok][0]} is not covered by the sample mesh")
    lookup = np.full(nloc, -1, dtype=np.int64)
    lookup[req] = np.arange(len(urows))
    out = lookup[rows]
    keep = out >= 0
    mat = _coo_sum(out[keep], cols[keep], vals[keep], (len(urows), nloc))
    return mat[inverse]


def assemble_convection_sampled(mesh: Mesh, sample: SampleMesh, u, rows=None):
    """Selected rows of ``N(u)`` as a CSR matrix of shape ``(len(rows), n_vel)``.

    Only the sample-mesh elements are visited; the rows are bitwise equal to
    the corresponding rows of :func:`assemble_convection`.
    """
    if rows is not None:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        sample = SampleMesh(rows, sample.elements, sample.local_dofs, sample.element_local)
    u = np.asarray(u, dtype=float)
    local = sampled_convection_local(mesh, sample, u[sample.local_dofs])
    local = local.tocoo()
    return sp.csr_matrix(
        (local.data, (local.row, sample.local_dofs[local.col])),
        shape=(len(sample.rows), mesh.n_vel),
    )


# --------------------------------------------------------------------------
# boundary data, constraints, enrichment operator
# --------------------------------------------------------------------------


def boundary_interpolant(mesh: Mesh) -> np.ndarray:
    """Lid profile ``u_x = 1 - x^4`` on ``y = 1``; zero elsewhere."""
    u = np.zeros(mesh.n_vel)
    top = mesh.boundary_nodes[mesh.coords[mesh.boundary_nodes, 1] == 1.0]
    u[top] = 1.0 - mesh.coords[top, 0] ** 4
    return u


def pressure_area_vector(mesh: Mesh) -> np.ndarray:
    pbar = np.zeros(mesh.n_p)
    pbar[mesh.pressure_dofs[:, 0]] = mesh.h**2
    return pbar


def assemble_enrichment_laplacian(mesh: Mesh) -> sp.csr_matrix:
    """Unit-viscosity vector Laplacian on interior dofs (homogeneous Dirichlet)."""
    K = sum(assemble_viscosity_blocks(mesh))
    idx = mesh.interior_dofs
    return K[idx][:, idx].tocsr()


def export_matrix_market(path, matrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)
