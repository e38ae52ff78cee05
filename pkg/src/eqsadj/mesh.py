"""Triangular meshes with region ids and boundary markers.

A mesh is either Cartesian (x, y with unit out-of-plane depth) or
axisymmetric (rho, z). The flag lives on the mesh so assembly never has to
guess which measure to use.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

SYMMETRIES = ("cartesian", "axisymmetric")


class MeshError(ValueError):
    """Raised for invalid mesh construction arguments or malformed files."""


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray  # (N, 2) float
    triangles: np.ndarray  # (M, 3) int, counter-clockwise
    regions: np.ndarray  # (M,) int
    boundary_nodes: Mapping[str, np.ndarray] = field(default_factory=dict)
    symmetry: str = "cartesian"

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        regions = np.ascontiguousarray(self.regions, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must have shape (N, 2)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError("triangles must have shape (M, 3)")
        if regions.shape != (len(tris),):
            raise MeshError("one region id per triangle required")
        if self.symmetry not in SYMMETRIES:
            raise MeshError(f"unknown symmetry {self.symmetry!r}")
        if len(tris) and (tris.min() < 0 or tris.max() >= len(nodes)):
            raise MeshError("triangle references a node index out of range")
        if self.symmetry == "axisymmetric" and np.any(nodes[:, 0] < 0):
            raise MeshError("negative radial coordinate in axisymmetric mesh")
        if len(np.unique(np.sort(tris, axis=1), axis=0)) != len(tris):
            raise MeshError("duplicate triangles")

        area2 = _signed_area2(nodes, tris)
        if np.any(area2 == 0):
            raise MeshError("degenerate triangle with zero area")
        flip = area2 < 0
        if np.any(flip):
            tris = tris.copy()
            tris[flip, 1], tris[flip, 2] = tris[flip, 2].copy(), tris[flip, 1].copy()

        on_boundary = np.zeros(len(nodes), dtype=bool)
        on_boundary[boundary_node_indices(tris)] = True
        markers = {}
        for name, idx in self.boundary_nodes.items():
            idx = np.unique(np.asarray(idx, dtype=np.int64))
            if len(idx) and (idx.min() < 0 or idx.max() >= len(nodes)):
                raise MeshError(f"boundary {name!r} references a node out of range")
            if not np.all(on_boundary[idx]):
                raise MeshError(f"boundary {name!r} contains interior nodes")
            idx.setflags(write=False)
            markers[name] = idx

        for arr in (nodes, tris, regions):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "boundary_nodes", markers)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def axisymmetric(self) -> bool:
        return self.symmetry == "axisymmetric"

    def areas(self) -> np.ndarray:
        return 0.5 * _signed_area2(self.nodes, self.triangles)

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def region_ids(self) -> list[int]:
        return sorted(int(r) for r in np.unique(self.regions))

    def marker(self, name: str) -> np.ndarray:
        try:
            return self.boundary_nodes[name]
        except KeyError:
            raise MeshError(f"unknown boundary marker {name!r}") from None


def _signed_area2(nodes, tris):
    p = nodes[tris]
    return ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def boundary_node_indices(triangles: np.ndarray) -> np.ndarray:
    """Nodes on edges that belong to exactly one triangle."""
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]],
                            triangles[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1])


def build_tensor_mesh(xs: Sequence[float], ys: Sequence[float],
                      region_of: Callable[[float, float], int],
                      boundaries: Mapping[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] | None = None,
                      symmetry: str = "cartesian") -> Mesh:
    """Split every cell of the tensor grid ``xs`` x ``ys`` into two triangles.

    ``region_of(xc, yc)`` gets the cell centre. Each boundary predicate takes
    the node coordinate arrays and returns a boolean mask; only boundary nodes
    may be selected.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2 or len(ys) < 2 or np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
        raise MeshError("grid coordinates must be strictly increasing with >= 2 entries")
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys)  # row j = ys[j]
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    tris, regions = [], []
    for j in range(ny):
        for i in range(nx):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            reg = int(region_of(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])))
            tris += [(a, b, c), (a, c, d)]
            regions += [reg, reg]

    markers = {}
    for name, pred in (boundaries or {}).items():
        markers[name] = np.flatnonzero(pred(nodes[:, 0], nodes[:, 1]))
    return Mesh(nodes, np.array(tris), np.array(regions), markers, symmetry)


def build_layered_rect(width: float, layer_thickness: float, nx: int,
                       ny_per_layer: int) -> Mesh:
    """Two stacked layers of equal thickness between two electrodes.

    The y axis measures depth below the top electrode: region 1 (upper layer)
    spans y in [0, d], region 2 (lower layer) spans [d, 2d]. Markers
    ``top_electrode`` (y = 0) and ``bottom_electrode`` (y = 2d).
    """
    if not (width > 0 and layer_thickness > 0):
        raise MeshError("width and layer thickness must be positive")
    if int(nx) != nx or int(ny_per_layer) != ny_per_layer or nx < 1 or ny_per_layer < 1:
        raise MeshError("nx and ny_per_layer must be integers >= 1")
    nx, ny = int(nx), int(ny_per_layer)
    d = float(layer_thickness)
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.concatenate([np.linspace(0.0, d, ny + 1), np.linspace(d, 2 * d, ny + 1)[1:]])
    ys[ny] = d
    return build_tensor_mesh(
        xs, ys, lambda x, y: 1 if y < d else 2,
        {"top_electrode": lambda x, y: y == 0.0,
         "bottom_electrode": lambda x, y: y == ys[-1]})


def nearest_node(mesh: Mesh, point: Sequence[float]) -> int:
    """Index of the node closest to ``point``; ties go to the lowest index."""
    d2 = np.sum((mesh.nodes - np.asarray(point, dtype=float)) ** 2, axis=1)
    return int(np.argmin(d2))


def locate(mesh: Mesh, point: Sequence[float], tol: float = 1e-12) -> tuple[int, np.ndarray]:
    """Return (element, barycentric weights) of the first triangle containing ``point``."""
    p = np.asarray(point, dtype=float)
    v = mesh.nodes[mesh.triangles]
    a2 = _signed_area2(mesh.nodes, mesh.triangles)
    l1 = ((v[:, 1, 0] - p[0]) * (v[:, 2, 1] - p[1]) - (v[:, 2, 0] - p[0]) * (v[:, 1, 1] - p[1])) / a2
    l2 = ((v[:, 2, 0] - p[0]) * (v[:, 0, 1] - p[1]) - (v[:, 0, 0] - p[0]) * (v[:, 2, 1] - p[1])) / a2
    lam = np.column_stack([l1, l2, 1.0 - l1 - l2])
    inside = np.flatnonzero(np.all(lam >= -tol, axis=1))
    if not len(inside):
        raise MeshError(f"point {tuple(p)} lies outside the mesh")
    e = int(inside[0])
    w = np.clip(lam[e], 0.0, 1.0)
    return e, w / w.sum()


def save_mesh(mesh: Mesh, path) -> None:
    lines = [f"symmetry {mesh.symmetry}", f"nodes {mesh.n_nodes}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines.append(f"triangles {mesh.n_elements}")
    lines += [f"{i} {j} {k} {r}" for (i, j, k), r in
              zip(mesh.triangles.tolist(), mesh.regions.tolist())]
    for name, idx in mesh.boundary_nodes.items():
        lines.append(f"boundary {name} {len(idx)}")
        lines += [str(i) for i in idx.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mesh(path) -> Mesh:
    path = Path(path)
    if not path.is_file():
        raise MeshError(f"{path}: no such mesh file")
    rows = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        text = raw.split("#", 1)[0].strip()
        if text:
            rows.append((lineno, text.split()))
    it = iter(rows)

    def take(keyword=None):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise MeshError(f"{path}: unexpected end of file") from None
        if keyword is not None and tok[0] != keyword:
            raise MeshError(f"{path}:{lineno}: expected '{keyword}', got '{tok[0]}'")
        return lineno, tok

    def count(lineno, tok):
        try:
            n = int(tok[-1])
        except ValueError:
            n = -1
        if len(tok) < 2 or n < 0:
            raise MeshError(f"{path}:{lineno}: bad count in '{' '.join(tok)}'")
        return n

    lineno, tok = take("symmetry")
    if len(tok) != 2 or tok[1] not in SYMMETRIES:
        raise MeshError(f"{path}:{lineno}: symmetry must be one of {SYMMETRIES}")
    symmetry = tok[1]

    lineno, tok = take("nodes")
    n_nodes = count(lineno, tok)
    nodes = np.empty((n_nodes, 2))
    for i in range(n_nodes):
        lineno, tok = take()
        try:
            if len(tok) != 2:
                raise ValueError
            nodes[i] = [float(tok[0]), float(tok[1])]
        except ValueError:
            raise MeshError(f"{path}:{lineno}: malformed node line") from None
        if symmetry == "axisymmetric" and nodes[i, 0] < 0:
            raise MeshError(f"{path}:{lineno}: negative radius in axisymmetric mesh")

    lineno, tok = take("triangles")
    n_tris = count(lineno, tok)
    tris = np.empty((n_tris, 3), dtype=np.int64)
    regions = np.empty(n_tris, dtype=np.int64)
    for m in range(n_tris):
        lineno, tok = take()
        try:
            if len(tok) != 4:
                raise ValueError
            vals = [int(t) for t in tok]
        except ValueError:
            raise MeshError(f"{path}:{lineno}: malformed triangle line") from None
        if min(vals[:3]) < 0 or max(vals[:3]) >= n_nodes:
            raise MeshError(f"{path}:{lineno}: node index out of range")
        tris[m], regions[m] = vals[:3], vals[3]

    markers = {}
    for lineno, tok in it:
        if tok[0] != "boundary" or len(tok) != 3:
            raise MeshError(f"{path}:{lineno}: expected 'boundary <marker> K'")
        name, k = tok[1], count(lineno, tok)
        idx = []
        for _ in range(k):
            lineno, t = take()
            try:
                if len(t) != 1:
                    raise ValueError
                i = int(t[0])
            except ValueError:
                raise MeshError(f"{path}:{lineno}: malformed boundary node") from None
            if not 0 <= i < n_nodes:
                raise MeshError(f"{path}:{lineno}: node index out of range")
            idx.append(i)
        markers[name] = np.array(idx, dtype=np.int64)

    try:
        return Mesh(nodes, tris, regions, markers, symmetry)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from None
