"""Quadratic Lagrange discretization of  Δu = N in Ω,  u = 0 on Σ,  u_ν = u on T.

Weak form, for test functions vanishing on Σ:

    ∫_Ω ∇u·∇v dx − ∫_T u v dS = −N ∫_Ω v dx.

The Steklov term makes the matrix possibly indefinite, so the system is
solved with a sparse direct LU factorization.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

try:  # sparse LDL^T for the symmetric (indefinite) system; LU is the fallback
    import qdldl
except ImportError:  # pragma: no cover
    qdldl = None

from .geometry import SIGMA, T_ARC, TAG_NAMES
from .mesh import LINE_S, LINE_W, TRI_BARY, Mesh, fsum, unique_edges, volume_quadrature


class SolverError(RuntimeError):
    """Ill-posed or near-degenerate discrete system."""


RESIDUAL_TOL = 1e-10


# ---------------------------------------------------------------------------
# reference element: vertex functions λ_i(2λ_i − 1), edge functions 4 λ_i λ_j
# local edges are (0,1), (1,2), (2,0)

_EDGE_PAIRS = ((0, 1), (1, 2), (2, 0))


def grad_lambda(p: np.ndarray) -> np.ndarray:
    """Gradients of barycentric coordinates, shape (T, 3, 2)."""
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    g = np.empty(p.shape[:1] + (3, 2))
    g[:, 0, 0], g[:, 0, 1] = y[:, 1] - y[:, 2], x[:, 2] - x[:, 1]
    g[:, 1, 0], g[:, 1, 1] = y[:, 2] - y[:, 0], x[:, 0] - x[:, 2]
    g[:, 2, 0], g[:, 2, 1] = y[:, 0] - y[:, 1], x[:, 1] - x[:, 0]
    return g / det[:, None, None]


def basis_values(bary: np.ndarray) -> np.ndarray:
    lam = np.asarray(bary)
    out = np.empty(lam.shape[:-1] + (6,))
    out[..., :3] = lam * (2 * lam - 1)
    for k, (i, j) in enumerate(_EDGE_PAIRS):
        out[..., 3 + k] = 4 * lam[..., i] * lam[..., j]
    return out


def basis_grads(bary: np.ndarray, gl: np.ndarray) -> np.ndarray:
    """Gradients at barycentric points ``bary`` (..., 3) on elements with ``gl`` (T, 3, 2).

    ``bary`` is either shared, shape (Q, 3), or per element, shape (T, Q, 3).
    Returns (T, Q, 6, 2).
    """
    lam = np.asarray(bary)
    if lam.ndim == 2:
        lam = np.broadcast_to(lam, (gl.shape[0],) + lam.shape)
    out = np.empty(lam.shape[:2] + (6, 2))
    for i in range(3):
        out[:, :, i] = (4 * lam[..., i] - 1)[..., None] * gl[:, None, i]
    for k, (i, j) in enumerate(_EDGE_PAIRS):
        out[:, :, 3 + k] = 4 * (lam[..., i, None] * gl[:, None, j] + lam[..., j, None] * gl[:, None, i])
    return out


def basis_hessians(gl: np.ndarray) -> np.ndarray:
    """Constant second derivatives, shape (T, 6, 2, 2)."""
    out = np.empty((gl.shape[0], 6, 2, 2))
    for i in range(3):
        out[:, i] = 4 * np.einsum("ta,tb->tab", gl[:, i], gl[:, i])
    for k, (i, j) in enumerate(_EDGE_PAIRS):
        out[:, 3 + k] = 4 * (np.einsum("ta,tb->tab", gl[:, i], gl[:, j]) + np.einsum("ta,tb->tab", gl[:, j], gl[:, i]))
    return out


def edge_shape(s: np.ndarray) -> np.ndarray:
    """1-D quadratic shape functions at parameter ``s`` ordered (start, middle, end)."""
    s = np.asarray(s)
    return np.stack([(1 - s) * (1 - 2 * s), 4 * s * (1 - s), s * (2 * s - 1)], axis=-1)


class P2Space:
    """Degrees of freedom: mesh vertices first, then one per edge midpoint."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.edges, self.tri_edges = unique_edges(mesh.triangles)
        nv = mesh.n_vertices
        self.ndof = nv + len(self.edges)
        self.cell_dofs = np.hstack([mesh.triangles, self.tri_edges + nv])
        self.nodes = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[self.edges[:, 0]] + mesh.vertices[self.edges[:, 1]])])
        self.gl = grad_lambda(mesh.corners())

        # boundary edge -> (owning triangle, local start/end vertex, edge dof)
        key = {tuple(e): i for i, e in enumerate(self.edges)}
        owner = np.full(len(self.edges), -1)
        loc = np.zeros(len(self.edges), dtype=int)
        for t in range(mesh.n_triangles):
            for k in range(3):
                owner[self.tri_edges[t, k]] = t
                loc[self.tri_edges[t, k]] = k
        self.bnd_edge_id = np.array([key[tuple(sorted(map(int, e)))] for e in mesh.boundary_edges], dtype=int)
        self.bnd_owner = owner[self.bnd_edge_id]
        tri = mesh.triangles[self.bnd_owner]
        self.bnd_local = np.stack([
            np.argmax(tri == mesh.boundary_edges[:, :1], axis=1),
            np.argmax(tri == mesh.boundary_edges[:, 1:], axis=1),
        ], axis=1)
        self.bnd_dofs = np.stack([mesh.boundary_edges[:, 0], self.bnd_edge_id + nv, mesh.boundary_edges[:, 1]], axis=1)

    @cached_property
    def dirichlet(self) -> np.ndarray:
        m = self.mesh
        on = self.bnd_dofs[m.edge_tags == SIGMA].ravel()
        return np.unique(np.concatenate([on, m.lambda_vertices]))

    def edge_bary(self, which: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Barycentric coordinates, in the owning triangle, of points at parameter s on boundary edges."""
        lam = np.zeros((len(which), len(s), 3))
        loc = self.bnd_local[which]
        rows = np.arange(len(which))[:, None]
        cols = np.arange(len(s))[None, :]
        lam[rows, cols, loc[:, :1]] = 1 - s[None, :]
        lam[rows, cols, loc[:, 1:]] = s[None, :]
        return lam


@dataclass
class LinearSystem:
    A: sp.csr_matrix  # reduced to free dofs
    b: np.ndarray
    dirichlet: np.ndarray
    free: np.ndarray
    space: P2Space
    A_full: sp.csr_matrix
    b_full: np.ndarray

    def symmetry_error(self) -> float:
        d = self.A - self.A.T
        return float(abs(d).max() / abs(self.A).max()) if d.nnz else 0.0


def assemble(mesh: Mesh, *, steklov: bool = True, space: P2Space | None = None) -> LinearSystem:
    """Stiffness minus boundary mass on T, load −N·∫v, Dirichlet dofs eliminated."""
    N = 2
    V = space if space is not None else P2Space(mesh)
    q = volume_quadrature(mesh)
    G = basis_grads(q.bary, V.gl)
    K = np.einsum("tq,tqid,tqjd->tij", q.weights, G, G)
    F = -N * np.einsum("tq,qi->ti", q.weights, basis_values(q.bary))
    dofs = V.cell_dofs
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    A = sp.coo_matrix((K.ravel(), (rows, cols)), shape=(V.ndof, V.ndof)).tocsr()
    if steklov:
        on_t = np.flatnonzero(mesh.edge_tags == T_ARC)
        if len(on_t):
            e = mesh.boundary_edges[on_t]
            L = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
            S = edge_shape(LINE_S)
            Mloc = np.einsum("q,qi,qj->ij", LINE_W, S, S)
            Me = L[:, None, None] * Mloc[None]
            bd = V.bnd_dofs[on_t]
            r = np.repeat(bd, 3, axis=1).ravel()
            c = np.tile(bd, (1, 3)).ravel()
            A = A - sp.coo_matrix((Me.ravel(), (r, c)), shape=(V.ndof, V.ndof)).tocsr()
    b = np.zeros(V.ndof)
    np.add.at(b, dofs.ravel(), F.ravel())
    A = ((A + A.T) * 0.5).tocsr()
    mask = np.ones(V.ndof, dtype=bool)
    mask[V.dirichlet] = False
    free = np.flatnonzero(mask)
    return LinearSystem(A[free][:, free].tocsr(), b[free], V.dirichlet, free, V, A, b)


@dataclass
class Field:
    space: P2Space
    coef: np.ndarray
    diagnostics: list[str] = dc_field(default_factory=list)
    residual: float = 0.0

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def scaled(self, t: float) -> "Field":
        return Field(self.space, t * self.coef, list(self.diagnostics), self.residual)

    @cached_property
    def _vq(self):
        return volume_quadrature(self.mesh)

    @cached_property
    def quad_values(self) -> np.ndarray:
        """u_h at volume quadrature points, (T, Q)."""
        return np.einsum("qi,ti->tq", basis_values(self._vq.bary), self.coef[self.space.cell_dofs])

    @cached_property
    def quad_grads(self) -> np.ndarray:
        """∇u_h at volume quadrature points, (T, Q, 2)."""
        G = basis_grads(self._vq.bary, self.space.gl)
        return np.einsum("tqid,ti->tqd", G, self.coef[self.space.cell_dofs])

    @cached_property
    def hessians(self) -> np.ndarray:
        H = basis_hessians(self.space.gl)
        return np.einsum("tiab,ti->tab", H, self.coef[self.space.cell_dofs])

    def values_at(self, elems: np.ndarray, bary: np.ndarray) -> np.ndarray:
        """u_h at per-element barycentric points ``bary`` (T, Q, 3)."""
        return np.einsum("tqi,ti->tq", basis_values(bary), self.coef[self.space.cell_dofs[elems]])

    def grads_at(self, elems: np.ndarray, bary: np.ndarray) -> np.ndarray:
        G = basis_grads(bary, self.space.gl[elems])
        return np.einsum("tqid,ti->tqd", G, self.coef[self.space.cell_dofs[elems]])

    def nodal_max(self) -> float:
        return float(self.coef.max())

    def to_csv(self) -> str:
        rows = ["node,x1,x2,u"]
        rows += [f"{i},{x:.17g},{y:.17g},{u:.17g}" for i, ((x, y), u) in enumerate(zip(self.space.nodes, self.coef))]
        return "\n".join(rows) + "\n"


def solve(system: LinearSystem) -> Field:
    V = system.space
    A = system.A.tocsc()
    try:
        if qdldl is not None:
            x = qdldl.Solver(sp.triu(A, format="csc"), upper=True).solve(system.b)
        else:
            x = splu(A).solve(system.b)
    except (RuntimeError, ValueError) as exc:  # singular factor
        raise SolverError(f"ill-posed or near-degenerate discrete system: {exc}") from exc
    bn = np.linalg.norm(system.b)
    res = float(np.linalg.norm(system.A @ x - system.b) / (bn if bn > 0 else 1.0))
    if not np.all(np.isfinite(x)) or res > RESIDUAL_TOL:
        raise SolverError(f"ill-posed or near-degenerate discrete system: relative residual {res:.3e}")
    coef = np.zeros(V.ndof)
    coef[system.free] = x
    f = Field(V, coef, residual=res)
    if coef.max() > 1e-8:
        f.diagnostics.append(f"sign violation: max nodal u_h = {coef.max():.3e} > 0")
    return f


def solve_mesh(mesh: Mesh) -> Field:
    return solve(assemble(mesh))


def interpolate(mesh: Mesh, fn, space: P2Space | None = None) -> Field:
    """P2 nodal interpolant of ``fn`` (callable on (M, 2) arrays)."""
    V = space if space is not None else P2Space(mesh)
    return Field(V, np.asarray(fn(V.nodes), dtype=float))


@dataclass
class FluxSample:
    tag: int
    edges: np.ndarray
    points: np.ndarray  # (E, 3, 2)
    weights: np.ndarray  # (E, 3)
    normals: np.ndarray  # (E, 2)
    u_nu: np.ndarray  # (E, 3)
    u: np.ndarray  # (E, 3)
    grad: np.ndarray  # (E, 3, 2)

    def to_csv(self, header: bool = True) -> str:
        rows = ["tag,x1,x2,u_nu"] if header else []
        name = TAG_NAMES[self.tag]
        for (x, y), v in zip(self.points.reshape(-1, 2), self.u_nu.ravel()):
            rows.append(f"{name},{x:.17g},{y:.17g},{v:.17g}")
        return "\n".join(rows) + "\n"


def normal_derivative_on(field: Field, tag: int) -> FluxSample:
    """⟨∇u_h, ν⟩ from the owning triangle at 3-point Gauss points of each tagged edge."""
    V, mesh = field.space, field.mesh
    idx = np.flatnonzero(mesh.edge_tags == tag)
    e = mesh.boundary_edges[idx]
    a, b = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    d = b - a
    L = np.linalg.norm(d, axis=1)
    nrm = np.stack([d[:, 1], -d[:, 0]], axis=1) / L[:, None]
    pts = a[:, None, :] + LINE_S[None, :, None] * d[:, None, :]
    owner = V.bnd_owner[idx]
    lam = V.edge_bary(idx, LINE_S)
    grad = field.grads_at(owner, lam)
    vals = field.values_at(owner, lam)
    unu = np.einsum("tqd,td->tq", grad, nrm)
    return FluxSample(tag, idx, pts, L[:, None] * LINE_W[None, :], nrm, unu, vals, grad)


def hessian_per_element(field: Field) -> np.ndarray:
    return field.hessians


def lipschitz_bound(field: Field) -> float:
    """max |∇u_h| over volume quadrature points and element corners."""
    corners = np.broadcast_to(np.eye(3), (field.mesh.n_triangles, 3, 3))
    gc = field.grads_at(np.arange(field.mesh.n_triangles), corners)
    return float(max(np.linalg.norm(field.quad_grads, axis=-1).max(), np.linalg.norm(gc, axis=-1).max()))


def energy_terms(field: Field) -> dict:
    w = field._vq.weights
    flux_t = normal_derivative_on(field, T_ARC)
    return {
        "int_u": fsum(field.quad_values * w),
        "dirichlet": fsum(np.sum(field.quad_grads**2, axis=-1) * w),
        "steklov": fsum(flux_t.u**2 * flux_t.weights),
    }


def torsion_ratio(field: Field) -> float:
    """(∫u)² / (∫|∇u|² − ∫_T u²) at u = u_h."""
    e = energy_terms(field)
    den = e["dirichlet"] - e["steklov"]
    if not den > 0:
        raise SolverError(f"nonpositive energy denominator {den:.3e}: outside the variational regime")
    return e["int_u"] ** 2 / den
