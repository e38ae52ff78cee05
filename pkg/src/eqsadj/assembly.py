"""Sparse assembly of linear-triangle stiffness-type matrices.

Every matrix in the solver has the form

    K[r, s] = sum_e  w_e * grad N_r . C_e . grad N_s

with a per-element coefficient ``C_e`` (scalar or symmetric 2x2 tensor) and
an element measure ``w_e`` (the area, times 2*pi*rho at the centroid for
axisymmetric meshes). Gradients of linear shape functions are constant on a
triangle, so no quadrature loop is needed.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, MeshError

_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


class Assembler:
    """Element geometry and a fixed CSR pattern for one mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        p = mesh.nodes[mesh.triangles]  # (M, 3, 2)
        area2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                 - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        # grad N_i = (y_j - y_k, x_k - x_j) / (2A) for cyclic (i, j, k)
        grads = np.empty((mesh.n_elements, 3, 2))
        for i, (j, k) in enumerate([(1, 2), (2, 0), (0, 1)]):
            grads[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / area2
            grads[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / area2
        self.grads = grads
        self.areas = 0.5 * area2
        if mesh.axisymmetric:
            self.weights = self.areas * 2.0 * np.pi * p[:, :, 0].mean(axis=1)
        else:
            self.weights = self.areas.copy()

        tri = mesh.triangles
        rows = tri[:, [r for r in range(3) for _ in range(3)]].ravel()
        cols = tri[:, [s for _ in range(3) for s in range(3)]].ravel()
        pattern = sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                                shape=(mesh.n_nodes, mesh.n_nodes))
        pattern.sort_indices()
        self._indptr = pattern.indptr
        self._indices = pattern.indices
        # position of every (element, r, s) entry inside the CSR data array
        lookup = sp.csr_matrix((np.arange(pattern.nnz, dtype=float), pattern.indices,
                                pattern.indptr), shape=pattern.shape)
        self._pos = np.asarray(lookup[rows, cols], dtype=np.int64).ravel()
        self._nnz = pattern.nnz

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    def element_matrices(self, coeff) -> np.ndarray:
        """(M, 3, 3) element matrices, exactly symmetric."""
        coeff = self._check_coeff(coeff)
        G = self.grads
        if coeff.ndim == 1:
            CG = coeff[:, None, None] * G
        else:
            CG = np.einsum("eab,eib->eia", coeff, G)
        out = np.empty((self.mesh.n_elements, 3, 3))
        for r, s in _UPPER:
            v = self.weights * np.einsum("ea,ea->e", G[:, r], CG[:, s])
            out[:, r, s] = v
            out[:, s, r] = v
        return out

    def assemble(self, coeff) -> sp.csr_matrix:
        Ke = self.element_matrices(coeff)
        data = np.bincount(self._pos, weights=Ke.ravel(), minlength=self._nnz)
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()),
                             shape=(self.n, self.n))

    def _check_coeff(self, coeff):
        coeff = np.asarray(coeff, dtype=float)
        m = self.mesh.n_elements
        if coeff.ndim == 0:
            raise ValueError("coefficient must be given per element")
        if coeff.shape[0] != m or coeff.shape not in ((m,), (m, 2, 2)):
            raise ValueError(f"coefficient shape {coeff.shape} does not match {m} elements")
        if not np.all(np.isfinite(coeff)):
            raise ValueError("non-finite coefficient")
        return coeff

    def gradients(self, u) -> np.ndarray:
        """Constant gradient of the linear interpolant of ``u`` on every element.

        ``u`` may be a single nodal vector (N,) or a stack (T, N); the result
        has shape (M, 2) or (T, M, 2).
        """
        u = np.asarray(u, dtype=float)
        ue = u[..., self.mesh.triangles]  # (..., M, 3)
        return np.einsum("...ei,eia->...ea", ue, self.grads)

    def fields(self, u) -> np.ndarray:
        return -self.gradients(u)

    def nodal_load(self, elem_vectors) -> np.ndarray:
        """Scatter per-element vectors dotted with shape gradients to nodes.

        Returns b with b[r] = sum_e w_e * v_e . grad N_r, i.e. the action of
        the element operator on a given per-element vector field.
        """
        contrib = self.weights[:, None] * np.einsum("ea,eia->ei", elem_vectors, self.grads)
        return np.bincount(self.mesh.triangles.ravel(), weights=contrib.ravel(),
                           minlength=self.n)

    @cached_property
    def region_masks(self) -> dict[int, np.ndarray]:
        return {r: self.mesh.regions == r for r in self.mesh.region_ids()}


def assemble(mesh: Mesh, coeff) -> sp.csr_matrix:
    """One-shot assembly; prefer an :class:`Assembler` when assembling repeatedly."""
    return Assembler(mesh).assemble(coeff)


def element_gradient(mesh: Mesh, u, element: int) -> np.ndarray:
    p = mesh.nodes[mesh.triangles[element]]
    area2 = ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1])
             - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]))
    g = np.empty((3, 2))
    for i, (j, k) in enumerate([(1, 2), (2, 0), (0, 1)]):
        g[i] = [(p[j, 1] - p[k, 1]) / area2, (p[k, 0] - p[j, 0]) / area2]
    return np.asarray(u, dtype=float)[mesh.triangles[element]] @ g


def element_field(mesh: Mesh, u, element: int) -> np.ndarray:
    return -element_gradient(mesh, u, element)


@dataclass
class DirichletSystem:
    """Linear system with constrained DoFs eliminated symmetrically."""

    n: int
    fixed: np.ndarray
    values: np.ndarray
    free: np.ndarray
    matrix: sp.csr_matrix  # free x free block
    rhs: np.ndarray  # reduced right-hand side

    def solve(self) -> np.ndarray:
        u = np.zeros(self.n)
        u[self.fixed] = self.values
        if len(self.free):
            u[self.free] = spla.spsolve(self.matrix.tocsc(), self.rhs)
        return u


def dirichlet_dofs(mesh: Mesh, values: Mapping[str, float]) -> tuple[np.ndarray, np.ndarray]:
    """Merge marker -> value into (sorted node indices, values)."""
    assigned: dict[int, float] = {}
    for name, val in values.items():
        for i in mesh.marker(name).tolist():
            if i in assigned and assigned[i] != float(val):
                raise MeshError(f"node {i} is fixed to conflicting values by marker {name!r}")
            assigned[i] = float(val)
    idx = np.array(sorted(assigned), dtype=np.int64)
    return idx, np.array([assigned[i] for i in idx.tolist()])


def apply_dirichlet(mesh: Mesh, matrix, rhs, values: Mapping[str, float]) -> DirichletSystem:
    fixed, vals = dirichlet_dofs(mesh, values)
    n = matrix.shape[0]
    free = np.setdiff1d(np.arange(n), fixed)
    A = sp.csr_matrix(matrix)
    red = A[free][:, free]
    b = np.asarray(rhs, dtype=float)[free] - A[free][:, fixed] @ vals
    return DirichletSystem(n, fixed, vals, free, red, b)
