"""
Structured triangulations of an axis-aligned rectangle.

Every square of an nx-by-ny grid is cut along its lower-left to upper-right
diagonal. Besides vertices and cells the mesh carries the full facet
topology that the hybrid unknowns live on: owners, local edge numbers,
orientation signs and one stored normal per facet.

Facet conventions:
    - local edge e of a cell is the edge opposite its vertex e
    - the first cell to visit a facet is its plus owner
    - the stored normal is the outward normal of the plus owner; the minus
      owner sees it with sign -1 (cell_facet_signs)
"""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Facet:
    """Read-only view of one facet."""

    vertices: tuple
    midpoint: np.ndarray
    normal: np.ndarray
    length: float
    kind: str
    owners: tuple

    @property
    def is_boundary(self):
        return self.kind == "boundary"


@dataclass(frozen=True)
class CellGeometry:
    """Affine map x = origin + jacobian @ xi from the reference triangle."""

    area: float
    h: float
    origin: np.ndarray
    jacobian: np.ndarray
    inverse_transpose: np.ndarray

    def map(self, ref_points):
        ref_points = np.atleast_2d(ref_points)
        return self.origin + ref_points @ self.jacobian.T


class StructuredMesh:
    """
    Triangulation of [x0, x1] x [y0, y1] with nx*ny squares, two cells each.

    Square (i, j) owns cells 2*s (lower right) and 2*s + 1 (upper left), with
    s = j*nx + i. Both are stored counter-clockwise starting from the
    lower-left corner of the square.
    """

    def __init__(self, nx, ny, bounds=(0.0, 1.0, 0.0, 1.0)):
        if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
            raise ValueError(f"Subdivision counts must be positive integers, got nx={nx}, ny={ny}")
        x0, x1, y0, y1 = (float(b) for b in bounds)
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"Degenerate rectangle bounds {bounds}")

        self.nx = int(nx)
        self.ny = int(ny)
        self.domain = (x0, x1, y0, y1)

        self._build_vertices()
        self._build_cells()
        self._build_facets()
        self._compute_geometry()

        logger.debug(
            f"📐 Mesh {self.nx}x{self.ny}: {self.n_cells} cells, "
            f"{self.n_facets} facets ({len(self.interior_facets)} interior)"
        )

    # ============================================
    # CONSTRUCTION
    # ============================================

    def _build_vertices(self):
        x0, x1, y0, y1 = self.domain
        xs = np.linspace(x0, x1, self.nx + 1)
        ys = np.linspace(y0, y1, self.ny + 1)
        xx, yy = np.meshgrid(xs, ys, indexing="xy")
        self.vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def _build_cells(self):
        cells = []
        row = self.nx + 1
        for j in range(self.ny):
            for i in range(self.nx):
                v00 = j * row + i
                v10 = v00 + 1
                v01 = v00 + row
                v11 = v01 + 1
                cells.append((v00, v10, v11))
                cells.append((v00, v11, v01))
        self.cells = np.array(cells, dtype=np.int64)

    def _build_facets(self):
        n_cells = len(self.cells)
        facet_map = {}
        facet_vertices = []
        owners = []
        local_edges = []

        cell_facets = np.empty((n_cells, 3), dtype=np.int64)
        cell_signs = np.empty((n_cells, 3), dtype=np.int64)

        for cell, verts in enumerate(self.cells):
            for edge in range(3):
                a = int(verts[(edge + 1) % 3])
                b = int(verts[(edge + 2) % 3])
                key = (min(a, b), max(a, b))
                if key in facet_map:
                    facet = facet_map[key]
                    owners[facet][1] = cell
                    local_edges[facet][1] = edge
                    cell_signs[cell, edge] = -1
                else:
                    facet = len(facet_vertices)
                    facet_map[key] = facet
                    facet_vertices.append((a, b))
                    owners.append([cell, -1])
                    local_edges.append([edge, -1])
                    cell_signs[cell, edge] = 1
                cell_facets[cell, edge] = facet

        self.facet_vertices = np.array(facet_vertices, dtype=np.int64)
        self.facet_owners = np.array(owners, dtype=np.int64)
        self.facet_local_edges = np.array(local_edges, dtype=np.int64)
        self.cell_facets = cell_facets
        self.cell_facet_signs = cell_signs

        self.boundary_mask = self.facet_owners[:, 1] < 0
        self.interior_facets = np.flatnonzero(~self.boundary_mask)
        self.boundary_facets = np.flatnonzero(self.boundary_mask)

    def _compute_geometry(self):
        a = self.vertices[self.facet_vertices[:, 0]]
        b = self.vertices[self.facet_vertices[:, 1]]
        d = b - a
        self.facet_lengths = np.hypot(d[:, 0], d[:, 1])
        # (a, b) runs counter-clockwise around the plus owner, so (dy, -dx) points out
        self.facet_normals = np.column_stack([d[:, 1], -d[:, 0]]) / self.facet_lengths[:, None]
        self.facet_midpoints = 0.5 * (a + b)

        v = self.vertices[self.cells]
        self.origins = v[:, 0, :]
        self.jacobians = np.stack([v[:, 1, :] - v[:, 0, :], v[:, 2, :] - v[:, 0, :]], axis=2)
        self.determinants = np.linalg.det(self.jacobians)
        self.inverse_transposes = np.transpose(np.linalg.inv(self.jacobians), (0, 2, 1))
        self.cell_areas = 0.5 * np.abs(self.determinants)
        self.cell_diameters = self.facet_lengths[self.cell_facets].max(axis=1)
        self.h = float(self.cell_diameters.max())

    # ============================================
    # QUERIES
    # ============================================

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_facets(self):
        return len(self.facet_vertices)

    @property
    def cell_to_facets(self):
        """Per cell, three (facet id, local edge, orientation sign) triples."""
        return [
            tuple((int(self.cell_facets[c, e]), e, int(self.cell_facet_signs[c, e])) for e in range(3))
            for c in range(self.n_cells)
        ]

    def facet(self, index):
        owners = tuple(
            (int(cell), int(edge))
            for cell, edge in zip(self.facet_owners[index], self.facet_local_edges[index])
            if cell >= 0
        )
        return Facet(
            vertices=tuple(int(v) for v in self.facet_vertices[index]),
            midpoint=self.facet_midpoints[index].copy(),
            normal=self.facet_normals[index].copy(),
            length=float(self.facet_lengths[index]),
            kind="boundary" if self.boundary_mask[index] else "interior",
            owners=owners,
        )

    @property
    def facets(self):
        return [self.facet(f) for f in range(self.n_facets)]

    def cell_normals(self):
        """Outward unit normals per (cell, local edge), shape (T, 3, 2)."""
        return self.facet_normals[self.cell_facets] * self.cell_facet_signs[..., None]

    def __repr__(self):
        return f"StructuredMesh(nx={self.nx}, ny={self.ny}, domain={self.domain})"


def build_structured_mesh(nx, ny, bounds=(0.0, 1.0, 0.0, 1.0)):
    """Build the nx-by-ny diagonal triangulation of a rectangle."""
    return StructuredMesh(nx, ny, bounds)


def unit_square_mesh(level):
    """Uniform mesh of the unit square with 2**level squares per side."""
    n = 2 ** int(level)
    return StructuredMesh(n, n)


def cell_geometry(mesh, cell):
    """Area, diameter and affine map of one cell."""
    if not 0 <= cell < mesh.n_cells:
        raise ValueError(f"Cell id {cell} out of range [0, {mesh.n_cells})")
    return CellGeometry(
        area=float(mesh.cell_areas[cell]),
        h=float(mesh.cell_diameters[cell]),
        origin=mesh.origins[cell].copy(),
        jacobian=mesh.jacobians[cell].copy(),
        inverse_transpose=mesh.inverse_transposes[cell].copy(),
    )
