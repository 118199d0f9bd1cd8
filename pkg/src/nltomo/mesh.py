"""2-D simplicial meshes with explicit boundary structure.

Meshes are immutable after construction: node/element/boundary arrays are
frozen, so a mesh can be shared read-only across concurrent workers. Only
first-order (piecewise-linear) elements are supported; gradients of nodal
fields are constant per element, which keeps every energy integral in this
package exact for piecewise-constant material laws.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from nltomo.errors import ConfigurationError

__all__ = [
    "Mesh",
    "Inclusion",
    "Phantom",
    "generate_unit_square",
    "generate_disk",
    "rasterize_phantom",
    "boundary_loop",
    "read_mesh",
    "write_mesh",
]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation of a plane domain with oriented boundary data.

    Attributes
    ----------
    nodes : (n_nodes, 2) float array
        Vertex coordinates.
    elements : (n_elements, 3) int array
        Triangle connectivity, counterclockwise.
    boundary_edges : (n_bedges, 2) int array
        Directed boundary edges (domain on the left).
    boundary_normals : (n_bedges, 2) float array
        Outward unit normal per boundary edge.
    element_areas : (n_elements,) float array
    boundary_lengths : (n_bedges,) float array
    boundary_nodes : (n_bnodes,) int array
        Sorted node indices lying on the boundary.
    boundary_mass : (n_bnodes,) float array
        Lumped boundary mass (half the length of each adjacent edge); exact
        for integrating piecewise-linear boundary functions.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_edges: np.ndarray
    boundary_normals: np.ndarray
    element_areas: np.ndarray
    boundary_lengths: np.ndarray
    boundary_nodes: np.ndarray
    boundary_mass: np.ndarray
    # position of each node in boundary_nodes, -1 for interior nodes
    boundary_index: np.ndarray = field(repr=False)
    interior_nodes: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @classmethod
    def from_arrays(cls, nodes, elements) -> "Mesh":
        """Build a validated mesh from raw node and connectivity arrays.

        Triangles with negative signed area are flipped; zero-area triangles
        are rejected. The boundary is derived from connectivity (edges owned
        by exactly one triangle) and must consist of closed loops.
        """
        nodes = np.ascontiguousarray(np.asarray(nodes, dtype=float))
        elements = np.ascontiguousarray(np.asarray(elements, dtype=np.int64))
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError("nodes must be an (n, 2) array")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise ValueError("elements must be an (m, 3) array")
        if elements.min(initial=0) < 0 or elements.max(initial=-1) >= len(nodes):
            raise ValueError("element connectivity references unknown nodes")

        areas = _signed_areas(nodes, elements)
        flip = areas < 0.0
        if np.any(flip):
            elements = elements.copy()
            elements[flip] = elements[flip][:, [0, 2, 1]]
            areas = np.abs(areas)
        if np.any(areas <= 0.0):
            bad = int(np.flatnonzero(areas <= 0.0)[0])
            raise ValueError(f"element {bad} has zero area")

        b_edges = _boundary_edges(elements)
        a, b = nodes[b_edges[:, 0]], nodes[b_edges[:, 1]]
        d = b - a
        lengths = np.hypot(d[:, 0], d[:, 1])
        if np.any(lengths <= 0.0):
            raise ValueError("degenerate boundary edge")
        # domain lies on the left of a directed boundary edge, so rotating the
        # edge vector by -90 degrees points outward
        normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]

        boundary_nodes = np.unique(b_edges)
        counts = np.bincount(b_edges.ravel(), minlength=len(nodes))
        if np.any(counts[boundary_nodes] != 2):
            raise ValueError("boundary edges do not form closed loops")

        mass = np.zeros(len(nodes))
        np.add.at(mass, b_edges[:, 0], 0.5 * lengths)
        np.add.at(mass, b_edges[:, 1], 0.5 * lengths)

        boundary_index = np.full(len(nodes), -1, dtype=np.int64)
        boundary_index[boundary_nodes] = np.arange(len(boundary_nodes))
        interior = np.flatnonzero(boundary_index < 0)

        arrays = (
            nodes,
            elements,
            b_edges,
            normals,
            areas,
            lengths,
            boundary_nodes,
            mass[boundary_nodes],
            boundary_index,
            interior,
        )
        for arr in arrays:
            arr.flags.writeable = False
        mesh = cls(*arrays)
        _check_outward(mesh)
        return mesh

    def bounding_box(self):
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)


def _signed_areas(nodes, elements):
    p = nodes[elements]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _boundary_edges(elements):
    """Directed edges owned by exactly one triangle, in that triangle's order."""
    directed = np.concatenate(
        [elements[:, [0, 1]], elements[:, [1, 2]], elements[:, [2, 0]]], axis=0
    )
    lo = directed.min(axis=1)
    hi = directed.max(axis=1)
    key = lo * (directed.max() + 1) + hi
    _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    keep = counts[inverse] == 1
    edges = directed[keep]
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


def _check_outward(mesh):
    """Every boundary normal must point away from the owning element."""
    centroid_of = {}
    cents = mesh.centroids()
    for e, tri in enumerate(mesh.elements):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            centroid_of[(a, b)] = cents[e]
    mids = 0.5 * (mesh.nodes[mesh.boundary_edges[:, 0]] + mesh.nodes[mesh.boundary_edges[:, 1]])
    for i, (a, b) in enumerate(mesh.boundary_edges):
        c = centroid_of[(int(a), int(b))]
        if float(np.dot(mesh.boundary_normals[i], mids[i] - c)) <= 0.0:
            raise ValueError(f"boundary edge {i} has an inward normal")


def generate_unit_square(n: int) -> Mesh:
    """Structured triangulation of [0,1]^2 with n x n cells split into 2 triangles.

    Deterministic: identical ``n`` yields bit-identical arrays. The mesh has
    (n+1)^2 nodes, 2*n^2 elements and 4*n boundary edges.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    side = np.arange(n + 1) / n
    xx, yy = np.meshgrid(side, side, indexing="xy")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    elements = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b = a + 1
            c = b + (n + 1)
            d = a + (n + 1)
            elements.append((a, b, c))
            elements.append((a, c, d))
    return Mesh.from_arrays(nodes, np.asarray(elements, dtype=np.int64))


def generate_disk(radius: float, refinement: int) -> Mesh:
    """Quasi-uniform triangulation of a disk centered at the origin.

    Nodes sit on ``refinement`` concentric rings (ring k holds 6k nodes at
    radius k*radius/refinement), so boundary nodes lie on the circle to
    rounding accuracy. The boundary polygon has 6*refinement edges; its area
    deficit relative to the disk shrinks ~4x per refinement doubling.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if int(refinement) != refinement or refinement < 1:
        raise ValueError("refinement must be a positive integer")
    m = int(refinement)

    nodes = [(0.0, 0.0)]
    ring_start = [None]  # 1-based ring index -> first node id
    for k in range(1, m + 1):
        ring_start.append(len(nodes))
        r = radius * k / m
        t = 2.0 * np.pi * np.arange(6 * k) / (6 * k)
        nodes.extend(zip(r * np.cos(t), r * np.sin(t)))

    elements = []
    # innermost fan
    for j in range(6):
        elements.append((0, ring_start[1] + j, ring_start[1] + (j + 1) % 6))
    # annuli: merge the two rings by angle
    for k in range(2, m + 1):
        inner = ring_start[k - 1]
        outer = ring_start[k]
        n_in, n_out = 6 * (k - 1), 6 * k
        i = j = 0
        while i < n_in or j < n_out:
            next_in = 2.0 * np.pi * (i + 1) / n_in if i < n_in else np.inf
            next_out = 2.0 * np.pi * (j + 1) / n_out if j < n_out else np.inf
            if next_out <= next_in:
                elements.append(
                    (inner + i % n_in, outer + j % n_out, outer + (j + 1) % n_out)
                )
                j += 1
            else:
                elements.append(
                    (inner + i % n_in, inner + (i + 1) % n_in, outer + j % n_out)
                )
                i += 1
    return Mesh.from_arrays(np.asarray(nodes, dtype=float), np.asarray(elements, dtype=np.int64))


@dataclass(frozen=True)
class Inclusion:
    """One anomaly region of a phantom.

    ``shape`` is "disk" (center, radius), "rectangle" (bounds = xmin, ymin,
    xmax, ymax) or "polygon" (vertices). ``model`` names the conductivity law
    assigned to elements whose centroid falls inside.
    """

    shape: str
    model: str
    center: tuple = None
    radius: float = None
    bounds: tuple = None
    vertices: tuple = None

    def __post_init__(self):
        if self.shape == "disk":
            if self.center is None or self.radius is None or self.radius <= 0:
                raise ValueError("disk inclusion needs a center and a positive radius")
        elif self.shape == "rectangle":
            if self.bounds is None or len(self.bounds) != 4:
                raise ValueError("rectangle inclusion needs bounds (xmin, ymin, xmax, ymax)")
            xmin, ymin, xmax, ymax = self.bounds
            if not (xmin < xmax and ymin < ymax):
                raise ValueError("rectangle bounds must be ordered")
        elif self.shape == "polygon":
            if self.vertices is None or len(self.vertices) < 3:
                raise ValueError("polygon inclusion needs at least 3 vertices")
        else:
            raise ValueError(f"unknown inclusion shape {self.shape!r}")

    def bounding_box(self):
        if self.shape == "disk":
            cx, cy = self.center
            r = self.radius
            return cx - r, cy - r, cx + r, cy + r
        if self.shape == "rectangle":
            return tuple(self.bounds)
        v = np.asarray(self.vertices, dtype=float)
        return float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max())

    def contains(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.shape == "disk":
            cx, cy = self.center
            return (points[:, 0] - cx) ** 2 + (points[:, 1] - cy) ** 2 <= self.radius**2
        if self.shape == "rectangle":
            xmin, ymin, xmax, ymax = self.bounds
            return (
                (points[:, 0] >= xmin)
                & (points[:, 0] <= xmax)
                & (points[:, 1] >= ymin)
                & (points[:, 1] <= ymax)
            )
        return _points_in_polygon(points, np.asarray(self.vertices, dtype=float))


@dataclass(frozen=True)
class Phantom:
    """Background law plus a list of inclusions; later inclusions override earlier ones."""

    background: str
    inclusions: tuple = ()

    def model_ids(self):
        return {self.background, *(inc.model for inc in self.inclusions)}


def _points_in_polygon(points, vertices):
    # even-odd crossing rule, vectorized over points
    inside = np.zeros(len(points), dtype=bool)
    x, y = points[:, 0], points[:, 1]
    n = len(vertices)
    for k in range(n):
        x1, y1 = vertices[k]
        x2, y2 = vertices[(k + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xi)
    return inside


def rasterize_phantom(mesh: Mesh, phantom: Phantom, known_models=None) -> np.ndarray:
    """Assign one model id per element by centroid membership.

    Later inclusions override earlier ones. Raises ConfigurationError when a
    model id is not in ``known_models`` (if given) or an inclusion misses the
    mesh bounding box entirely.
    """
    if known_models is not None:
        unknown = sorted(phantom.model_ids() - set(known_models))
        if unknown:
            raise ConfigurationError(f"phantom references unknown model ids: {unknown}")
    bx0, by0, bx1, by1 = mesh.bounding_box()
    labels = np.array([phantom.background] * mesh.n_elements, dtype=object)
    cents = mesh.centroids()
    for inc in phantom.inclusions:
        ix0, iy0, ix1, iy1 = inc.bounding_box()
        if ix1 < bx0 or ix0 > bx1 or iy1 < by0 or iy0 > by1:
            raise ConfigurationError(
                f"inclusion {inc.shape} ({inc.model}) lies entirely outside the mesh"
            )
        labels[inc.contains(cents)] = inc.model
    labels.flags.writeable = False
    return labels


def boundary_loop(mesh: Mesh):
    """Order the boundary nodes along the (single) boundary loop.

    Returns (ordered node ids, arclength at each node, total length). The walk
    starts at the smallest boundary node index and follows the stored edge
    orientation, so the result is deterministic. Raises ValueError for meshes
    whose boundary has several loops.
    """
    succ = {}
    length_of = {}
    for (a, b), L in zip(mesh.boundary_edges, mesh.boundary_lengths):
        a, b = int(a), int(b)
        if a in succ:
            raise ValueError("non-manifold boundary")
        succ[a] = b
        length_of[a] = float(L)
    start = int(mesh.boundary_nodes[0])
    order = [start]
    arclen = [0.0]
    node = start
    while True:
        nxt = succ[node]
        arclen.append(arclen[-1] + length_of[node])
        if nxt == start:
            break
        order.append(nxt)
        node = nxt
    if len(order) != len(mesh.boundary_nodes):
        raise ValueError("mesh boundary has more than one loop")
    total = arclen.pop()
    return np.asarray(order, dtype=np.int64), np.asarray(arclen), total


def write_mesh(mesh: Mesh, path, header: str = None) -> None:
    """Write the plain-text mesh interchange format.

    Three sections (``nodes``, ``elements``, ``boundary``), each section a
    header line followed by `index value...` rows; 0-based indices, floats
    with 17 significant digits. ``header`` adds a leading comment line.
    """
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write("nodes\n")
    for i, (x, y) in enumerate(mesh.nodes):
        buf.write(f"{i} {x:.17g} {y:.17g}\n")
    buf.write("elements\n")
    for i, (a, b, c) in enumerate(mesh.elements):
        buf.write(f"{i} {a} {b} {c}\n")
    buf.write("boundary\n")
    for i, (a, b) in enumerate(mesh.boundary_edges):
        buf.write(f"{i} {a} {b}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_mesh(path) -> Mesh:
    """Read the plain-text mesh format and validate it.

    The boundary section is cross-checked against the boundary derived from
    element connectivity; a mismatch is an error.
    """
    sections = {"nodes": [], "elements": [], "boundary": []}
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line in sections:
                current = line
                continue
            if current is None:
                raise ValueError(f"{path}:{lineno}: data before any section header")
            sections[current].append(line.split())
    if not sections["nodes"] or not sections["elements"]:
        raise ValueError(f"{path}: missing nodes or elements section")

    nodes = np.zeros((len(sections["nodes"]), 2))
    for row in sections["nodes"]:
        nodes[int(row[0])] = (float(row[1]), float(row[2]))
    elements = np.zeros((len(sections["elements"]), 3), dtype=np.int64)
    for row in sections["elements"]:
        elements[int(row[0])] = (int(row[1]), int(row[2]), int(row[3]))
    mesh = Mesh.from_arrays(nodes, elements)

    if sections["boundary"]:
        stated = {frozenset((int(r[1]), int(r[2]))) for r in sections["boundary"]}
        derived = {frozenset((int(a), int(b))) for a, b in mesh.boundary_edges}
        if stated != derived:
            raise ValueError(f"{path}: boundary section disagrees with element connectivity")
    return mesh
