"""Room geometry description and uniform triangulation.

The room is an axis-aligned rectangle whose boundary carries three special
segments: an inlet (velocity and temperature actuation), an outlet (free
outflow) and a heater patch (temperature actuation). Everything else is a
solid wall. The mesh is the uniform right-triangle subdivision with the
diagonal running from the lower-left to the upper-right corner of each grid
cell, so that region endpoints located at multiples of the grid spacing
align exactly with mesh edges.
"""

from dataclasses import dataclass, field

import numpy as np

EDGE_NAMES = ("left", "right", "bottom", "top")
BOUNDARY_TAGS = ("inlet", "outlet", "heater", "wall")


class MeshAlignmentError(ValueError):
    """Raised when a region endpoint does not sit on the uniform grid."""


@dataclass(frozen=True)
class BoundaryInterval:
    """Interval on one side of the rectangle, e.g. ("left", 0.625, 0.875)."""
    edge: str
    start: float
    end: float

    def __post_init__(self):
        if self.edge not in EDGE_NAMES:
            raise ValueError(f"unknown boundary edge {self.edge!r}, expected one of {EDGE_NAMES}")
        if not self.start < self.end:
            raise ValueError(f"boundary interval on {self.edge!r} needs start < end")

    def overlaps(self, other):
        if self.edge != other.edge:
            return False
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class DomainRegion:
    """Closed axis-aligned rectangle inside the room."""
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError("domain region needs x0 <= x1 and y0 <= y1")


@dataclass(frozen=True)
class RoomGeometry:
    """Rectangle [0, L1] x [0, L2] with tagged boundary segments.

    Parameters
    ----------
    width, height : float
        Side lengths L1, L2 of the room.
    inlet, outlet, heater : BoundaryInterval
        Pairwise disjoint boundary segments. The heater lies on the wall
        part of the boundary (it is a wall segment with a heat flux), so it
        must not overlap the vents.
    observation_regions : dict
        Named DomainRegion / BoundaryInterval entries used by the output
        functionals.
    """
    width: float = 1.0
    height: float = 1.0
    inlet: BoundaryInterval = BoundaryInterval("left", 0.625, 0.875)
    outlet: BoundaryInterval = BoundaryInterval("right", 0.125, 0.5)
    heater: BoundaryInterval = BoundaryInterval("bottom", 0.375, 0.625)
    observation_regions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("room sides must be positive")
        named = [("inlet", self.inlet), ("outlet", self.outlet), ("heater", self.heater)]
        for i, (na, a) in enumerate(named):
            self._check_interval(na, a)
            for nb, b in named[i + 1:]:
                if a.overlaps(b):
                    raise ValueError(f"boundary regions {na!r} and {nb!r} overlap")
        for name, region in self.observation_regions.items():
            if isinstance(region, DomainRegion):
                if not (0 <= region.x0 and region.x1 <= self.width
                        and 0 <= region.y0 and region.y1 <= self.height):
                    raise ValueError(f"observation region {name!r} leaves the room")
            elif isinstance(region, BoundaryInterval):
                self._check_interval(name, region)
            else:
                raise TypeError(f"observation region {name!r} has unsupported type")

    def _check_interval(self, name, iv):
        length = self.width if iv.edge in ("bottom", "top") else self.height
        if iv.start < 0 or iv.end > length:
            raise ValueError(f"boundary region {name!r} leaves the {iv.edge} side")

    def named_intervals(self):
        """All boundary intervals that must align with the grid, by name."""
        out = {"inlet": self.inlet, "outlet": self.outlet, "heater": self.heater}
        for name, region in self.observation_regions.items():
            if isinstance(region, BoundaryInterval):
                out[name] = region
        return out


class Mesh:
    """Uniform conforming triangulation of the room.

    Attributes
    ----------
    vertices : ndarray (nv, 2)
    triangles : ndarray (nt, 3)
        Vertex index triples, counterclockwise.
    edges : ndarray (ne, 2)
        Unique vertex pairs (sorted), shared between elements.
    tri_edges : ndarray (nt, 3)
        Global edge index of the local edges (0,1), (1,2), (2,0).
    boundary_edges : ndarray (nb,)
        Edge indices lying on the boundary.
    boundary_tags : list of str
        Tag ("inlet" | "outlet" | "heater" | "wall") per boundary edge.
    h : float
        Grid spacing 1/n.
    """

    def __init__(self, geometry, n, vertices, triangles, edges, tri_edges,
                 boundary_edges, boundary_tags):
        self.geometry = geometry
        self.n = n
        self.h = 1.0 / n
        self.vertices = vertices
        self.triangles = triangles
        self.edges = edges
        self.tri_edges = tri_edges
        self.boundary_edges = boundary_edges
        self.boundary_tags = boundary_tags

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def edges_with_tag(self, tag):
        """Boundary edge indices carrying `tag`, in ascending order."""
        sel = [e for e, t in zip(self.boundary_edges, self.boundary_tags) if t == tag]
        return np.asarray(sorted(sel), dtype=int)

    def triangle_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def content_hash(self):
        """Hex digest identifying the triangulation (used as a cache key)."""
        import hashlib
        hsh = hashlib.sha256()
        hsh.update(np.ascontiguousarray(self.vertices).tobytes())
        hsh.update(np.ascontiguousarray(self.triangles).tobytes())
        hsh.update(",".join(self.boundary_tags).encode())
        return hsh.hexdigest()


def _aligned_index(value, n, name):
    scaled = value * n
    idx = round(scaled)
    if abs(scaled - idx) > 1e-9:
        raise MeshAlignmentError(
            f"region {name!r}: endpoint {value} is not a multiple of 1/{n}")
    return idx


def build_mesh(geometry, n):
    """Triangulate the room with grid spacing 1/n.

    Parameters
    ----------
    geometry : RoomGeometry
    n : int
        Subdivision count per unit length; every region endpoint must be a
        multiple of 1/n.

    Returns
    -------
    Mesh

    Raises
    ------
    MeshAlignmentError
        If a boundary region or observation region endpoint does not sit on
        the grid (the offending region is named in the message).
    """
    if n < 2:
        raise ValueError("need at least 2 subdivisions per unit length")
    nx = _aligned_index(geometry.width, n, "domain")
    ny = _aligned_index(geometry.height, n, "domain")
    for name, iv in geometry.named_intervals().items():
        _aligned_index(iv.start, n, name)
        _aligned_index(iv.end, n, name)
    for name, region in geometry.observation_regions.items():
        if isinstance(region, DomainRegion):
            for v in (region.x0, region.x1, region.y0, region.y1):
                _aligned_index(v, n, name)

    xs = np.arange(nx + 1) / n
    ys = np.arange(ny + 1) / n
    X, Y = np.meshgrid(xs, ys)  # row j = height index
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            ll, lr = vid(i, j), vid(i + 1, j)
            ul, ur = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((ll, lr, ur))  # lower-left to upper-right diagonal
            tris.append((ll, ur, ul))
    triangles = np.asarray(tris, dtype=int)

    pairs = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    pairs.sort(axis=1)
    edges, inverse, counts = np.unique(pairs, axis=0,
                                       return_inverse=True, return_counts=True)
    nt = triangles.shape[0]
    tri_edges = inverse.reshape(3, nt).T

    boundary_edges = np.flatnonzero(counts == 1)
    tags = [_tag_edge(vertices[edges[e]], geometry) for e in boundary_edges]
    return Mesh(geometry, n, vertices, triangles, edges, tri_edges,
                boundary_edges, tags)


def _tag_edge(endpoints, geometry):
    mid = endpoints.mean(axis=0)
    tol = 1e-12
    if abs(mid[0]) < tol:
        side, coord = "left", mid[1]
    elif abs(mid[0] - geometry.width) < tol:
        side, coord = "right", mid[1]
    elif abs(mid[1]) < tol:
        side, coord = "bottom", mid[0]
    elif abs(mid[1] - geometry.height) < tol:
        side, coord = "top", mid[0]
    else:  # pragma: no cover - only reachable on a broken triangulation
        raise RuntimeError("boundary edge not on the rectangle boundary")
    for tag, iv in (("inlet", geometry.inlet), ("outlet", geometry.outlet),
                    ("heater", geometry.heater)):
        if iv.edge == side and iv.start < coord < iv.end:
            return tag
    return "wall"


def locate_region(mesh, region_name):
    """Resolve a named region to mesh entities.

    For a DomainRegion the result is the (sorted) indices of all triangles
    whose closure lies inside the rectangle; for a BoundaryInterval it is
    the (sorted) indices of the boundary edges inside the interval. The
    built-in names "inlet", "outlet" and "heater" resolve to their tagged
    edges.

    Raises
    ------
    KeyError
        Unknown region name.
    """
    if region_name in ("inlet", "outlet", "heater"):
        return mesh.edges_with_tag(region_name)
    try:
        region = mesh.geometry.observation_regions[region_name]
    except KeyError:
        raise KeyError(f"unknown region {region_name!r}") from None
    if isinstance(region, DomainRegion):
        tol = 1e-12
        pts = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
        inside = ((pts[:, :, 0] >= region.x0 - tol).all(axis=1)
                  & (pts[:, :, 0] <= region.x1 + tol).all(axis=1)
                  & (pts[:, :, 1] >= region.y0 - tol).all(axis=1)
                  & (pts[:, :, 1] <= region.y1 + tol).all(axis=1))
        return np.flatnonzero(inside)
    sel = []
    for e, tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        mid = mesh.vertices[mesh.edges[e]].mean(axis=0)
        if region.edge in ("bottom", "top"):
            on_side = (abs(mid[1]) < 1e-12) if region.edge == "bottom" \
                else (abs(mid[1] - mesh.geometry.height) < 1e-12)
            coord = mid[0]
        else:
            on_side = (abs(mid[0]) < 1e-12) if region.edge == "left" \
                else (abs(mid[0] - mesh.geometry.width) < 1e-12)
            coord = mid[1]
        if on_side and region.start < coord < region.end:
            sel.append(e)
    return np.asarray(sorted(sel), dtype=int)


def write_mesh_text(mesh, path):
    """Dump vertices and triangles as a plain-text listing for inspection."""
    with open(path, "w") as fh:
        fh.write(f"# mesh h={mesh.h} vertices={mesh.num_vertices} "
                 f"triangles={mesh.num_triangles}\n")
        fh.write("# vertices: index x y\n")
        for i, (x, y) in enumerate(mesh.vertices):
            fh.write(f"{i} {x:.16g} {y:.16g}\n")
        fh.write("# triangles: index v0 v1 v2\n")
        for i, t in enumerate(mesh.triangles):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]}\n")
        fh.write("# boundary edges: v0 v1 tag\n")
        for e, tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            v0, v1 = mesh.edges[e]
            fh.write(f"{v0} {v1} {tag}\n")
