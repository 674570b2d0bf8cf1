"""Two-layer quadrilateral meshes for the coupled fluid / porous geometry.

The fluid layer occupies (0,1) x (0,1), the porous layer (0,1) x (-1,0), and
the two share the flat interface y = 0.  Facets are tagged from topology:
an edge shared by a porous and a fluid cell is on the interface, a boundary
edge of a porous cell is on the outer porous boundary, and a boundary edge of
a fluid cell is on the outer fluid boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np


class Region(IntEnum):
    POROUS = 0
    FLUID = 1


class FacetTag(IntEnum):
    INTERIOR = 0
    GAMMA = 1
    GAMMA1 = 2
    GAMMA2 = 3


# local edges of a counter-clockwise quad (v0 v1 v2 v3)
_LOCAL_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    cells: np.ndarray
    cell_region: np.ndarray
    facets: np.ndarray
    facet_tag: np.ndarray
    refinement_level: int = 0
    # facet id -> (porous cell or -1, fluid cell or -1); built in __post_init__
    facet_cells: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("vertices", "cells", "cell_region", "facets", "facet_tag"):
            getattr(self, name).setflags(write=False)
        object.__setattr__(self, "facet_cells", _facet_cell_table(self))

    @property
    def h(self) -> float:
        """Longest cell edge."""
        v = self.vertices[self.facets]
        return float(np.max(np.linalg.norm(v[:, 1] - v[:, 0], axis=1)))

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cells_in(self, region: Region) -> np.ndarray:
        return np.flatnonzero(self.cell_region == region)

    def facets_tagged(self, tag: FacetTag) -> np.ndarray:
        return np.flatnonzero(self.facet_tag == tag)

    def facet_lengths(self, ids=None) -> np.ndarray:
        ids = np.arange(len(self.facets)) if ids is None else np.asarray(ids)
        v = self.vertices[self.facets[ids]]
        return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)

    def cell_areas(self, ids=None) -> np.ndarray:
        ids = np.arange(self.n_cells) if ids is None else np.asarray(ids)
        x = self.vertices[self.cells[ids], 0]
        y = self.vertices[self.cells[ids], 1]
        # shoelace
        return 0.5 * np.abs(
            np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)
        )

    def region_area(self, region: Region) -> float:
        return float(np.sum(self.cell_areas(self.cells_in(region))))


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


def _build_facets(cells, cell_region):
    owners: dict[tuple[int, int], list[int]] = {}
    for c, quad in enumerate(cells):
        for i, j in _LOCAL_EDGES:
            owners.setdefault(_edge_key(int(quad[i]), int(quad[j])), []).append(c)
    facets = np.array(sorted(owners), dtype=np.int64)
    tags = np.empty(len(facets), dtype=np.int64)
    for f, key in enumerate(map(tuple, facets)):
        regions = {int(cell_region[c]) for c in owners[key]}
        if len(owners[key]) == 2:
            tags[f] = FacetTag.GAMMA if len(regions) == 2 else FacetTag.INTERIOR
        elif Region.POROUS in regions:
            tags[f] = FacetTag.GAMMA1
        else:
            tags[f] = FacetTag.GAMMA2
    return facets, tags


def _facet_cell_table(m: Mesh) -> np.ndarray:
    index = {tuple(f): i for i, f in enumerate(m.facets.tolist())}
    table = -np.ones((len(m.facets), 2), dtype=np.int64)
    for c, quad in enumerate(m.cells.tolist()):
        col = int(m.cell_region[c])
        for i, j in _LOCAL_EDGES:
            table[index[_edge_key(quad[i], quad[j])], col] = c
    table.setflags(write=False)
    return table


def build_layered_rectangle(nx: int, ny_fluid: int, ny_porous: int) -> Mesh:
    """Structured mesh of the porous layer below and the fluid layer above y = 0."""
    for name, n in (("nx", nx), ("ny_fluid", ny_fluid), ("ny_porous", ny_porous)):
        if int(n) != n or n < 1:
            raise ValueError(f"{name} must be a positive integer, got {n!r}")
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.concatenate(
        [np.linspace(-1.0, 0.0, ny_porous + 1), np.linspace(0.0, 1.0, ny_fluid + 1)[1:]]
    )
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    ny = ny_porous + ny_fluid
    cells, region = [], []
    for j in range(ny):
        for i in range(nx):
            v0 = j * (nx + 1) + i
            cells.append((v0, v0 + 1, v0 + nx + 2, v0 + nx + 1))
            region.append(Region.POROUS if j < ny_porous else Region.FLUID)
    cells = np.array(cells, dtype=np.int64)
    region = np.array(region, dtype=np.int64)
    facets, tags = _build_facets(cells, region)
    return Mesh(vertices, cells, region, facets, tags, 0)


def refine(m: Mesh) -> Mesh:
    """Split every quadrilateral into four; tags follow from the unchanged topology."""
    verts = [tuple(v) for v in m.vertices.tolist()]
    midpoint: dict[tuple[int, int], int] = {}

    def mid(a, b):
        key = _edge_key(a, b)
        if key not in midpoint:
            midpoint[key] = len(verts)
            verts.append(tuple(0.5 * (m.vertices[a] + m.vertices[b])))
        return midpoint[key]

    cells, region = [], []
    for quad, reg in zip(m.cells.tolist(), m.cell_region.tolist()):
        a, b, c, d = quad
        ab, bc, cd, da = mid(a, b), mid(b, c), mid(c, d), mid(d, a)
        centre = len(verts)
        verts.append(tuple(m.vertices[quad].mean(axis=0)))
        cells += [(a, ab, centre, da), (ab, b, bc, centre),
                  (centre, bc, c, cd), (da, centre, cd, d)]
        region += [reg] * 4
    cells = np.array(cells, dtype=np.int64)
    region = np.array(region, dtype=np.int64)
    facets, tags = _build_facets(cells, region)
    return Mesh(np.array(verts), cells, region, facets, tags, m.refinement_level + 1)


def interface_frame(m: Mesh, facet: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit normal pointing out of the fluid (into the porous layer) and unit tangent.

    The tangent is the normal rotated by +90 degrees, so (n, t) is
    (0,-1), (1,0) on the flat interface.
    """
    if not 0 <= facet < len(m.facets) or m.facet_tag[facet] != FacetTag.GAMMA:
        raise ValueError(f"facet {facet} is not an interface facet")
    a, b = m.vertices[m.facets[facet]]
    t = (b - a) / np.linalg.norm(b - a)
    n = np.array([t[1], -t[0]])
    fluid_centre = m.vertices[m.cells[m.facet_cells[facet, Region.FLUID]]].mean(axis=0)
    if np.dot(fluid_centre - a, n) > 0:
        n = -n
    t = np.array([-n[1], n[0]])
    return n, t


def write_mesh(m: Mesh, path, coefficients: dict[str, np.ndarray] | None = None) -> None:
    """Plain-text export; optional named coefficient vectors are appended as
    ``k <name> <value> ...`` lines."""
    lines = ["dim=2"]
    lines += [f"v {x:.17g} {y:.17g}" for x, y in m.vertices.tolist()]
    lines += [
        f"c {a} {b} {c} {d} {Region(r).name}"
        for (a, b, c, d), r in zip(m.cells.tolist(), m.cell_region.tolist())
    ]
    lines += [f"f {a} {b} {FacetTag(t).name}" for (a, b), t in zip(m.facets.tolist(), m.facet_tag.tolist())]
    for name, values in (coefficients or {}).items():
        lines.append("k " + name + " " + " ".join(format(float(v), ".17g") for v in np.ravel(values)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> tuple[Mesh, dict[str, np.ndarray]]:
    verts, cells, region, facets, tags, coeffs = [], [], [], [], [], {}
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "dim=2":
        raise ValueError(f"{path}: missing 'dim=2' header")
    for line in text[1:]:
        parts = line.split()
        if not parts:
            continue
        kind = parts[0]
        if kind == "v":
            verts.append((float(parts[1]), float(parts[2])))
        elif kind == "c":
            cells.append(tuple(int(p) for p in parts[1:5]))
            region.append(Region[parts[5]])
        elif kind == "f":
            facets.append((int(parts[1]), int(parts[2])))
            tags.append(FacetTag[parts[3]])
        elif kind == "k":
            coeffs[parts[1]] = np.array([float(p) for p in parts[2:]])
        else:
            raise ValueError(f"{path}: unknown record {kind!r}")
    m = Mesh(np.array(verts), np.array(cells, dtype=np.int64), np.array(region, dtype=np.int64),
             np.array(facets, dtype=np.int64), np.array(tags, dtype=np.int64))
    return m, coeffs
