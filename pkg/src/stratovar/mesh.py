"""Composite hexahedral meshes with slipping interfaces.

Trilinear bricks carrying region tags (solid, fluid, vacuum), oriented
interface faces bound to analytic surface patches, and duplicated nodes along
slipping interfaces so that tangential motion can differ between the two
sides.  Interior face normals always point from the minus side to the plus
side.  A plain-text format stores meshes losslessly.

Generators: a padded box with an optional interior interface plane, and a
layered ball built from a core cube, a cube-to-sphere transition, and
concentric shells whose interface faces lie exactly on spheres.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

__all__ = [
    "HEX_CORNERS",
    "HEX_FACES",
    "Region",
    "Face",
    "CompositeMesh",
    "DofMap",
    "shape_values",
    "shape_gradients",
    "cell_quadrature",
    "face_quadrature",
    "locate_in_cell",
    "box_mesh",
    "layered_ball_mesh",
    "write_mesh",
    "read_mesh",
]

# reference corners of the trilinear brick, xi in [-1, 1]^3
HEX_CORNERS = np.array([
    [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
    [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
], dtype=float)

# local faces ordered so the parametric normal x_s x x_t points outward
HEX_FACES = {
    "-x": (0, 4, 7, 3), "+x": (1, 2, 6, 5),
    "-y": (0, 1, 5, 4), "+y": (3, 7, 6, 2),
    "-z": (0, 3, 2, 1), "+z": (4, 5, 6, 7),
}

_G = 1.0 / np.sqrt(3.0)
GAUSS_HEX = _G * HEX_CORNERS  # 2x2x2 points, unit weights


def shape_values(xi):
    """Trilinear shape functions at reference points xi (..., 3) -> (..., 8)."""
    xi = np.asarray(xi, dtype=float)
    return np.prod(1.0 + xi[..., None, :] * HEX_CORNERS, axis=-1) / 8.0


def shape_gradients(xi):
    """Reference gradients dN_a/dxi at xi (..., 3) -> (..., 8, 3)."""
    xi = np.asarray(xi, dtype=float)
    terms = 1.0 + xi[..., None, :] * HEX_CORNERS  # (..., 8, 3)
    grad = np.empty(xi.shape[:-1] + (8, 3))
    for d in range(3):
        others = [k for k in range(3) if k != d]
        grad[..., d] = (HEX_CORNERS[:, d] / 8.0) * terms[..., others[0]] * terms[..., others[1]]
    return grad


@dataclass
class Region:
    name: str
    kind: str  # solid | fluid | vacuum

    def __post_init__(self):
        if self.kind not in ("solid", "fluid", "vacuum"):
            raise ValueError(f"unknown region kind {self.kind!r}")


@dataclass
class Face:
    """Oriented quad between two regions (or the exterior).

    minus_nodes and plus_nodes list the same geometric corners; they differ
    only across slipping interfaces where the plus side uses duplicated nodes.
    Corner order is (s,t) = (0,0),(1,0),(1,1),(0,1) with x_s x x_t pointing
    from minus to plus.
    """

    minus_nodes: np.ndarray
    plus_nodes: np.ndarray
    tag: str  # SS | FS | FAULT | EXT
    region_minus: int
    region_plus: int  # -1 for exterior
    patch_id: int     # index into mesh.patches, -1 for the face's own plane
    cell_minus: int
    cell_plus: int    # -1 for exterior

    def __post_init__(self):
        if self.tag not in ("SS", "FS", "FAULT", "EXT"):
            raise ValueError(f"unknown face tag {self.tag!r}")
        self.minus_nodes = np.asarray(self.minus_nodes, dtype=int)
        self.plus_nodes = np.asarray(self.plus_nodes, dtype=int)


@dataclass
class CompositeMesh:
    nodes: np.ndarray                 # (N, 3)
    cells: np.ndarray                 # (M, 8)
    cell_region: np.ndarray           # (M,)
    regions: list
    faces: list = dataclass_field(default_factory=list)
    patches: list = dataclass_field(default_factory=list)   # {"kind": ..., params}
    geom_id: np.ndarray | None = None     # shared position id for split nodes
    split_pairs: np.ndarray | None = None  # (S, 2) rows (minus_node, plus_node)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.cells = np.asarray(self.cells, dtype=int)
        self.cell_region = np.asarray(self.cell_region, dtype=int)
        if self.geom_id is None:
            self.geom_id = np.arange(len(self.nodes))
        self.geom_id = np.asarray(self.geom_id, dtype=int)
        if self.split_pairs is None:
            self.split_pairs = np.zeros((0, 2), dtype=int)
        self.split_pairs = np.asarray(self.split_pairs, dtype=int).reshape(-1, 2)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_geom(self):
        return int(self.geom_id.max()) + 1 if len(self.nodes) else 0

    def region_kind(self, region_index):
        return self.regions[region_index].kind if region_index >= 0 else "exterior"

    def material_cells(self):
        kinds = np.array([r.kind for r in self.regions])
        return np.nonzero(kinds[self.cell_region] != "vacuum")[0]

    def material_nodes(self):
        mask = np.zeros(self.n_nodes, dtype=bool)
        for c in self.material_cells():
            mask[self.cells[c]] = True
        return mask

    def hull_geom_nodes(self):
        """Geometric ids of nodes on the outer hull of the whole mesh."""
        counts = {}
        for cell in self.cells:
            for local in HEX_FACES.values():
                key = tuple(sorted(self.geom_id[cell[list(local)]]))
                counts[key] = counts.get(key, 0) + 1
        hull = set()
        for key, cnt in counts.items():
            if cnt == 1:
                hull.update(key)
        return np.array(sorted(hull), dtype=int)

    def patch_geometry(self, patch_id, corners=None):
        """Position-based (normal, weingarten) callables for a face.

        patch_id -1 means the plane spanned by the given corner points.
        """
        if patch_id >= 0:
            desc = self.patches[patch_id]
            if desc["kind"] == "sphere":
                R = desc["radius"]
                c = np.asarray(desc["center"], dtype=float)

                def normal(x):
                    v = np.asarray(x, dtype=float) - c
                    return v / np.linalg.norm(v, axis=-1, keepdims=True)

                def weingarten(x):
                    nu = normal(x)
                    return (np.eye(3) - nu[..., :, None] * nu[..., None, :]) / R

                return normal, weingarten
            if desc["kind"] == "plane":
                nu0 = np.asarray(desc["normal"], dtype=float)
                nu0 = nu0 / np.linalg.norm(nu0)

                def normal(x):
                    x = np.asarray(x, dtype=float)
                    return np.broadcast_to(nu0, x.shape).copy()

                def weingarten(x):
                    x = np.asarray(x, dtype=float)
                    return np.zeros(x.shape[:-1] + (3, 3))

                return normal, weingarten
            raise ValueError(f"unknown patch kind {desc['kind']!r}")
        if corners is None:
            raise ValueError("plane-from-corners geometry needs corner points")
        corners = np.asarray(corners, dtype=float)
        nu0 = np.cross(corners[1] - corners[0], corners[3] - corners[0])
        nu0 = nu0 / np.linalg.norm(nu0)

        def normal(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(nu0, x.shape).copy()

        def weingarten(x):
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape[:-1] + (3, 3))

        return normal, weingarten

    def validate(self):
        """Check Jacobians, split-node coincidence, and face orientation."""
        for c, cell in enumerate(self.cells):
            X = self.nodes[cell]
            for xi in GAUSS_HEX:
                J = X.T @ shape_gradients(xi)
                if np.linalg.det(J) <= 0:
                    raise ValueError(f"cell {c} has a non-positive Jacobian")
        for m, p in self.split_pairs:
            if not np.allclose(self.nodes[m], self.nodes[p], atol=1e-12):
                raise ValueError(f"split pair ({m}, {p}) nodes do not coincide")
            if self.geom_id[m] != self.geom_id[p]:
                raise ValueError(f"split pair ({m}, {p}) has distinct geometry ids")
        centroids = self.nodes[self.cells].mean(axis=1)
        for k, f in enumerate(self.faces):
            q = face_quadrature(self, f, n=1)
            nu = q["nu"][0]
            x0 = q["x"][0]
            ref = centroids[f.cell_plus] if f.cell_plus >= 0 else x0 + nu
            if np.dot(nu, ref - centroids[f.cell_minus]) <= 0:
                raise ValueError(f"face {k} normal does not point from minus to plus")
            pm = self.nodes[f.minus_nodes]
            pp = self.nodes[f.plus_nodes]
            if not np.allclose(pm, pp, atol=1e-12):
                raise ValueError(f"face {k} sides have mismatched corner positions")
        return True


def cell_quadrature(mesh, c):
    """2x2x2 Gauss data for one cell: points, weights, shapes, gradients."""
    X = mesh.nodes[mesh.cells[c]]
    npts = len(GAUSS_HEX)
    out = {
        "x": np.empty((npts, 3)),
        "w": np.empty(npts),
        "N": shape_values(GAUSS_HEX),
        "dNdx": np.empty((npts, 8, 3)),
    }
    dN = shape_gradients(GAUSS_HEX)
    for k in range(npts):
        J = X.T @ dN[k]
        det = np.linalg.det(J)
        out["w"][k] = det
        out["dNdx"][k] = dN[k] @ np.linalg.inv(J)
        out["x"][k] = shape_values(GAUSS_HEX[k]) @ X
    return out


def _quad_shapes(s, t):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    N = np.stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t], axis=-1)
    dNds = np.stack([-(1 - t), (1 - t), t, -t], axis=-1)
    dNdt = np.stack([-(1 - s), -s, s, (1 - s)], axis=-1)
    return N, dNds, dNdt


def face_quadrature(mesh, face, n=2):
    """Gauss data on an interface face, using its analytic patch geometry.

    Faces bound to sphere patches are curved: the bilinear corner map is
    projected radially, and the tangents follow the projected map.  Returns
    per-point x, dS weights, nu, W, corner shape values N, and the surface
    gradients of the corner shapes gradN (n^2 points, 4 corners, 3 comps).
    """
    corners = mesh.nodes[face.minus_nodes]
    if n == 1:
        g, gw = np.array([0.5]), np.array([1.0])
    else:
        gl, wl = np.polynomial.legendre.leggauss(n)
        g, gw = 0.5 * (gl + 1.0), 0.5 * wl
    S, T = np.meshgrid(g, g, indexing="ij")
    WT = np.outer(gw, gw).ravel()
    s, t = S.ravel(), T.ravel()
    N, dNds, dNdt = _quad_shapes(s, t)
    y = N @ corners
    ys = dNds @ corners
    yt = dNdt @ corners

    desc = mesh.patches[face.patch_id] if face.patch_id >= 0 else None
    if desc is not None and desc["kind"] == "sphere":
        R = desc["radius"]
        c = np.asarray(desc["center"], dtype=float)
        v = y - c
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        nu = v / r
        x = c + R * nu
        proj = np.eye(3) - nu[:, :, None] * nu[:, None, :]
        xs = (R / r) * np.einsum("nij,nj->ni", proj, ys)
        xt = (R / r) * np.einsum("nij,nj->ni", proj, yt)
        W = proj / R
    else:
        x = y
        xs, xt = ys, yt
        normal, weingarten = mesh.patch_geometry(face.patch_id, corners)
        nu = normal(x)
        W = weingarten(x)

    cross = np.cross(xs, xt)
    area = np.linalg.norm(cross, axis=-1)
    if np.any(area <= 0):
        raise ValueError("degenerate face parametrization")
    # orientation sanity: parametric normal must agree with the patch normal
    if np.any(np.einsum("ni,ni->n", cross / area[:, None], nu) < 0.9):
        raise ValueError("face corner order disagrees with its patch normal")

    gradN = np.empty((len(s), 4, 3))
    for k in range(len(s)):
        A = np.column_stack([xs[k], xt[k], nu[k]])
        Ainv = np.linalg.inv(A)
        for a in range(4):
            gradN[k, a] = np.array([dNds[k, a], dNdt[k, a], 0.0]) @ Ainv
    return {"s": s, "t": t, "x": x, "w": WT * area, "nu": nu, "W": W,
            "N": N, "gradN": gradN}


def locate_in_cell(mesh, c, x, tol=1e-12):
    """Reference coordinates of physical points x inside cell c (Newton)."""
    X = mesh.nodes[mesh.cells[c]]
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.zeros_like(x)
    for _ in range(30):
        res = shape_values(xi) @ X - x
        if np.max(np.abs(res)) < tol:
            break
        for k in range(len(x)):
            J = X.T @ shape_gradients(xi[k])
            xi[k] -= np.linalg.solve(J, res[k])
    return xi


# ---------------------------------------------------------------------------
# generators

def box_mesh(n=2, extent=1.0, origin=(0.0, 0.0, 0.0), interface=None,
             kinds=("solid", "solid"), names=None, pad=0, hull="EXT"):
    """Axis-aligned box of n^3 cells, optional interior interface at mid-x.

    interface in {None, "SS", "FS", "FAULT"}; FS and FAULT interfaces
    duplicate the nodes of the mid-plane so the two sides can slip.  pad
    surrounds the material box with that many layers of vacuum cells (the
    perturbation potential lives there too).  hull="FS" marks the outer
    boundary as pressure-loaded; a box with nonzero equilibrium pressure at
    its boundary is only in equilibrium if the hull carries that load, and
    without it rigid rotations pick up spurious second-order energy.
    """
    if np.isscalar(n):
        n = (int(n), int(n), int(n))
    nx, ny, nz = n
    if interface is not None and nx % 2 != 0:
        raise ValueError("an interface at mid-x needs an even cell count")
    if np.isscalar(extent):
        extent = (float(extent),) * 3
    origin = np.asarray(origin, dtype=float)
    h = np.array([extent[0] / nx, extent[1] / ny, extent[2] / nz])
    p = int(pad)
    dims = np.array([nx + 2 * p, ny + 2 * p, nz + 2 * p])

    def node_id(i, j, k):
        return (i * (dims[1] + 1) + j) * (dims[2] + 1) + k

    grid = np.mgrid[0:dims[0] + 1, 0:dims[1] + 1, 0:dims[2] + 1]
    nodes = (grid.reshape(3, -1).T - p) * h + origin

    if names is None:
        names = ("lower", "upper") if interface else ("body",)
    regions = [Region(names[0], kinds[0])]
    if interface:
        regions.append(Region(names[1], kinds[1]))
    vacuum_region = -1
    if p > 0:
        regions.append(Region("vacuum", "vacuum"))
        vacuum_region = len(regions) - 1

    cells, cell_region = [], []
    cell_index = {}
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                conn = [node_id(i + a, j + b, k + c)
                        for a, b, c in [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                                        (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]]
                material = (p <= i < p + nx and p <= j < p + ny and p <= k < p + nz)
                if material:
                    if interface:
                        reg = 0 if (i - p) < nx // 2 else 1
                    else:
                        reg = 0
                elif p > 0:
                    reg = vacuum_region
                else:
                    continue
                cell_index[(i, j, k)] = len(cells)
                cells.append(conn)
                cell_region.append(reg)
    cells = np.array(cells, dtype=int)
    cell_region = np.array(cell_region, dtype=int)
    nodes = np.asarray(nodes)

    patches = []
    faces = []
    geom_id = np.arange(len(nodes))
    split_pairs = []

    if interface:
        imid = p + nx // 2
        xmid = origin[0] + (nx // 2) * h[0]
        patches.append({"kind": "plane", "normal": (1.0, 0.0, 0.0),
                        "point": (xmid, origin[1], origin[2])})
        plane_patch_id = 0
        split_map = {}
        if interface in ("FS", "FAULT"):
            # duplicate mid-plane nodes shared by material cells on both sides
            for j in range(p, p + ny + 1):
                for k in range(p, p + nz + 1):
                    old = node_id(imid, j, k)
                    split_map[old] = len(nodes) + len(split_pairs)
                    split_pairs.append((old, split_map[old]))
            extra = nodes[[m for m, _ in split_pairs]]
            geom_id = np.concatenate([geom_id, [m for m, _ in split_pairs]])
            nodes = np.vstack([nodes, extra])
            for (i, j, k), ci in cell_index.items():
                if i >= imid and cell_region[ci] == 1:
                    for a in range(8):
                        cells[ci, a] = split_map.get(cells[ci, a], cells[ci, a])
        for j in range(p, p + ny):
            for k in range(p, p + nz):
                cm = cell_index[(imid - 1, j, k)]
                cp = cell_index[(imid, j, k)]
                minus = [node_id(imid, j, k), node_id(imid, j + 1, k),
                         node_id(imid, j + 1, k + 1), node_id(imid, j, k + 1)]
                plus = [split_map.get(q, q) for q in minus] if split_map else list(minus)
                faces.append(Face(minus, plus, interface, 0, 1,
                                  plane_patch_id, cm, cp))

    # exterior faces of the material box (against vacuum or the mesh hull)
    axis_faces = {
        0: (("-x", (-1, 0, 0)), ("+x", (1, 0, 0))),
        1: (("-y", (0, -1, 0)), ("+y", (0, 1, 0))),
        2: (("-z", (0, 0, -1)), ("+z", (0, 0, 1))),
    }
    for (i, j, k), ci in cell_index.items():
        if cell_region[ci] == vacuum_region:
            continue
        for axis in range(3):
            for name, step in axis_faces[axis]:
                nb = (i + step[0], j + step[1], k + step[2])
                nb_ci = cell_index.get(nb)
                if nb_ci is not None and cell_region[nb_ci] != vacuum_region:
                    continue
                local = HEX_FACES[name]
                conn = cells[ci][list(local)]
                faces.append(Face(conn, conn, hull, cell_region[ci], -1, -1, ci, -1))

    mesh = CompositeMesh(nodes, cells, cell_region, regions, faces, patches,
                         geom_id, np.array(split_pairs, dtype=int).reshape(-1, 2))
    mesh.validate()
    return mesh


def _cube_surface_lattice(n):
    """Grid indices of the (n+1)^3 lattice lying on the cube surface."""
    idx = []
    lookup = {}
    for i in range(n + 1):
        for j in range(n + 1):
            for k in range(n + 1):
                if i in (0, n) or j in (0, n) or k in (0, n):
                    lookup[(i, j, k)] = len(idx)
                    idx.append((i, j, k))
    return idx, lookup


def _cube_surface_faces(n, lookup):
    """Outward-ordered quads tiling the cube surface, as surface ordinals."""
    quads = []

    def emit(corner_fn):
        for a in range(n):
            for b in range(n):
                quads.append([lookup[corner_fn(a, b)], lookup[corner_fn(a + 1, b)],
                              lookup[corner_fn(a + 1, b + 1)], lookup[corner_fn(a, b + 1)]])

    emit(lambda a, b: (0, b, a))        # -x: s=+z, t=+y -> outward -x
    emit(lambda a, b: (n, a, b))        # +x: s=+y, t=+z
    emit(lambda a, b: (a, 0, b))        # -y: s=+x, t=+z
    emit(lambda a, b: (b, n, a))        # +y: s=+z, t=+x
    emit(lambda a, b: (b, a, 0))        # -z: s=+y, t=+x
    emit(lambda a, b: (a, b, n))        # +z: s=+x, t=+y
    return quads


def layered_ball_mesh(radii=(0.5, 0.8, 1.0), kinds=("solid", "fluid", "solid"),
                      names=None, n=2, transition_layers=1, shell_layers=1,
                      center=(0.0, 0.0, 0.0)):
    """Ball of concentric layers: core cube, transition, spherical shells.

    radii are the outer radii of the layers (strictly increasing); interfaces
    sit exactly on the spheres radii[:-1] and carry sphere patches.  A fluid
    touching a solid makes the interface FS (slipping, duplicated nodes);
    solid-solid interfaces are welded SS.
    """
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] <= 0:
        raise ValueError("radii must be positive and strictly increasing")
    if len(kinds) != len(radii):
        raise ValueError("one material kind per layer")
    if names is None:
        names = [f"layer{i}" for i in range(len(radii))]
    center = np.asarray(center, dtype=float)
    a = radii[0] / 2.0  # core cube half-width

    # core cube lattice
    lin = np.linspace(-1.0, 1.0, n + 1)
    nodes = []
    core_id = {}
    for i in range(n + 1):
        for j in range(n + 1):
            for k in range(n + 1):
                core_id[(i, j, k)] = len(nodes)
                nodes.append(center + a * np.array([lin[i], lin[j], lin[k]]))

    surf_idx, surf_lookup = _cube_surface_lattice(n)
    surf_q = np.array([[lin[i], lin[j], lin[k]] for i, j, k in surf_idx])
    surf_d = surf_q / np.linalg.norm(surf_q, axis=1, keepdims=True)
    core_surface_ids = np.array([core_id[t] for t in surf_idx])

    # radial ladder: cube surface -> sphere r0 -> ... -> outer sphere
    if np.isscalar(shell_layers):
        shell_layers = [int(shell_layers)] * (len(radii) - 1)
    levels = [core_surface_ids]          # node ids per radial level
    level_radius = [None]                # sphere radius if the level is spherical
    level_region = []                    # region of cells below each new level
    for L in range(1, transition_layers + 1):
        t = L / transition_layers
        pts = center + (1 - t) * a * surf_q + t * radii[0] * surf_d
        ids = np.arange(len(nodes), len(nodes) + len(pts))
        nodes.extend(pts)
        levels.append(ids)
        level_radius.append(radii[0] if L == transition_layers else None)
        level_region.append(0)
    for shell in range(len(radii) - 1):
        r_in, r_out = radii[shell], radii[shell + 1]
        for L in range(1, shell_layers[shell] + 1):
            t = L / shell_layers[shell]
            r = (1 - t) * r_in + t * r_out
            pts = center + r * surf_d
            ids = np.arange(len(nodes), len(nodes) + len(pts))
            nodes.extend(pts)
            levels.append(ids)
            level_radius.append(r_out if L == shell_layers[shell] else None)
            level_region.append(shell + 1)
    nodes = np.array(nodes)

    regions = [Region(names[i], kinds[i]) for i in range(len(radii))]
    surf_faces = _cube_surface_faces(n, surf_lookup)

    cells, cell_region = [], []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                conn = [core_id[(i + da, j + db, k + dc)]
                        for da, db, dc in [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                                           (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]]
                cells.append(conn)
                cell_region.append(0)

    shell_cells = {}  # (level_below, quad_index) -> cell id
    for lev in range(len(levels) - 1):
        inner, outer = levels[lev], levels[lev + 1]
        for qi, quad in enumerate(surf_faces):
            conn = [inner[quad[0]], inner[quad[1]], inner[quad[2]], inner[quad[3]],
                    outer[quad[0]], outer[quad[1]], outer[quad[2]], outer[quad[3]]]
            shell_cells[(lev, qi)] = len(cells)
            cells.append(conn)
            cell_region.append(level_region[lev])
    cells = np.array(cells, dtype=int)
    cell_region = np.array(cell_region, dtype=int)
    geom_id = np.arange(len(nodes))
    split_pairs = []
    patches = []
    faces = []

    interface_levels = [lev for lev in range(1, len(levels))
                        if level_radius[lev] is not None
                        and lev < len(levels) - 1]
    for lev in interface_levels:
        inner_region = level_region[lev - 1]
        outer_region = level_region[lev]
        tag = "FS" if "fluid" in {kinds[inner_region], kinds[outer_region]} and \
                      kinds[inner_region] != kinds[outer_region] else "SS"
        patches.append({"kind": "sphere", "radius": level_radius[lev],
                        "center": tuple(center)})
        pid = len(patches) - 1
        level_ids = levels[lev]
        split_map = {}
        if tag in ("FS", "FAULT"):
            # plus ids continue from the current node array, which already
            # holds the copies made for any earlier slipping interface
            base = len(nodes)
            new_pairs = [(int(old), base + off)
                         for off, old in enumerate(level_ids)]
            split_map = dict(new_pairs)
            split_pairs.extend(new_pairs)
            geom_id = np.concatenate([geom_id, [m for m, _ in new_pairs]])
            nodes = np.vstack([nodes, nodes[[m for m, _ in new_pairs]]])
            for qi in range(len(surf_faces)):
                ci = shell_cells[(lev, qi)]
                for slot in range(8):
                    cells[ci, slot] = split_map.get(int(cells[ci, slot]), cells[ci, slot])
        for qi, quad in enumerate(surf_faces):
            minus = [int(levels[lev][q]) for q in quad]
            plus = [split_map.get(q, q) for q in minus] if split_map else list(minus)
            faces.append(Face(minus, plus, tag, inner_region, outer_region, pid,
                              shell_cells[(lev - 1, qi)], shell_cells[(lev, qi)]))

    # outer boundary faces on the last sphere
    patches.append({"kind": "sphere", "radius": radii[-1], "center": tuple(center)})
    outer_pid = len(patches) - 1
    lev = len(levels) - 1
    for qi, quad in enumerate(surf_faces):
        conn = [int(levels[lev][q]) for q in quad]
        faces.append(Face(conn, conn, "EXT", level_region[lev - 1], -1, outer_pid,
                          shell_cells[(lev - 1, qi)], -1))

    mesh = CompositeMesh(nodes, cells, cell_region, regions, faces, patches,
                         geom_id, np.array(split_pairs, dtype=int).reshape(-1, 2))
    mesh.validate()
    return mesh


# ---------------------------------------------------------------------------
# mesh file format

def write_mesh(mesh, path):
    lines = ["stratovar-mesh 1"]
    lines.append(f"nodes {mesh.n_nodes}")
    for p, g in zip(mesh.nodes, mesh.geom_id):
        lines.append(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {g}")
    lines.append(f"regions {len(mesh.regions)}")
    for r in mesh.regions:
        lines.append(f"{r.name} {r.kind}")
    lines.append(f"cells {len(mesh.cells)}")
    for conn, reg in zip(mesh.cells, mesh.cell_region):
        lines.append(str(reg) + " " + " ".join(str(q) for q in conn))
    lines.append(f"patches {len(mesh.patches)}")
    for p in mesh.patches:
        if p["kind"] == "sphere":
            c = p["center"]
            lines.append(f"sphere {p['radius']:.17g} {c[0]:.17g} {c[1]:.17g} {c[2]:.17g}")
        elif p["kind"] == "plane":
            nrm, pt = p["normal"], p["point"]
            lines.append("plane " + " ".join(f"{v:.17g}" for v in (*nrm, *pt)))
        else:
            raise ValueError(f"unknown patch kind {p['kind']!r}")
    lines.append(f"faces {len(mesh.faces)}")
    for f in mesh.faces:
        lines.append(" ".join([f.tag, str(f.region_minus), str(f.region_plus),
                               str(f.patch_id), str(f.cell_minus), str(f.cell_plus),
                               *(str(q) for q in f.minus_nodes),
                               *(str(q) for q in f.plus_nodes)]))
    lines.append(f"splits {len(mesh.split_pairs)}")
    for m, p in mesh.split_pairs:
        lines.append(f"{m} {p}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    with open(path) as fh:
        tokens = fh.read().split("\n")
    lines = [ln for ln in tokens if ln.strip()]
    if not lines or not lines[0].startswith("stratovar-mesh"):
        raise ValueError(f"{path}: not a mesh file")
    pos = 1

    def expect(section):
        nonlocal pos
        head = lines[pos].split()
        if head[0] != section:
            raise ValueError(f"{path}:{pos + 1}: expected {section!r}, got {head[0]!r}")
        pos += 1
        return int(head[1])

    n = expect("nodes")
    nodes = np.empty((n, 3))
    geom = np.empty(n, dtype=int)
    for i in range(n):
        parts = lines[pos].split()
        nodes[i] = [float(v) for v in parts[:3]]
        geom[i] = int(parts[3])
        pos += 1
    nr = expect("regions")
    regions = []
    for _ in range(nr):
        name, kind = lines[pos].split()
        regions.append(Region(name, kind))
        pos += 1
    nc = expect("cells")
    cells = np.empty((nc, 8), dtype=int)
    cell_region = np.empty(nc, dtype=int)
    for i in range(nc):
        parts = lines[pos].split()
        cell_region[i] = int(parts[0])
        cells[i] = [int(v) for v in parts[1:9]]
        pos += 1
    np_ = expect("patches")
    patches = []
    for _ in range(np_):
        parts = lines[pos].split()
        if parts[0] == "sphere":
            patches.append({"kind": "sphere", "radius": float(parts[1]),
                            "center": tuple(float(v) for v in parts[2:5])})
        elif parts[0] == "plane":
            patches.append({"kind": "plane",
                            "normal": tuple(float(v) for v in parts[1:4]),
                            "point": tuple(float(v) for v in parts[4:7])})
        else:
            raise ValueError(f"{path}:{pos + 1}: unknown patch kind {parts[0]!r}")
        pos += 1
    nf = expect("faces")
    faces = []
    for _ in range(nf):
        parts = lines[pos].split()
        faces.append(Face(np.array([int(v) for v in parts[6:10]]),
                          np.array([int(v) for v in parts[10:14]]),
                          parts[0], int(parts[1]), int(parts[2]), int(parts[3]),
                          int(parts[4]), int(parts[5])))
        pos += 1
    ns = expect("splits")
    split_pairs = np.empty((ns, 2), dtype=int)
    for i in range(ns):
        split_pairs[i] = [int(v) for v in lines[pos].split()]
        pos += 1
    mesh = CompositeMesh(nodes, cells, cell_region, regions, faces, patches,
                         geom, split_pairs)
    mesh.validate()
    return mesh


# ---------------------------------------------------------------------------
# degrees of freedom

def _tangent_basis(nu):
    seed = np.array([1.0, 0.0, 0.0]) if abs(nu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(seed, nu)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(nu, t1)
    return t1, t2


class DofMap:
    """Reduced displacement and potential dofs for a composite mesh.

    Displacement dofs live on material nodes.  At each split pair the minus
    node keeps its three components; the plus node carries two tangential
    components, its normal component being slaved to the minus side so that
    [u].nu = 0 holds exactly.  Nodes listed in fixed_nodes are clamped.  The
    perturbation potential gets one dof per geometric node, with the outer
    hull eliminated (zero boundary values).
    """

    def __init__(self, mesh, fixed_nodes=()):
        self.mesh = mesh
        N = mesh.n_nodes
        fixed = set(int(i) for i in fixed_nodes)
        material = mesh.material_nodes()
        pair_of_plus = {int(p): int(m) for m, p in mesh.split_pairs}
        if fixed & set(pair_of_plus):
            raise ValueError("cannot clamp the plus node of a split pair")

        # nodal normals on split pairs come from the bound patch geometry;
        # one-sided boundary faces carry no pairs and must not contribute
        normals = {}
        for f in mesh.faces:
            if f.tag not in ("FS", "FAULT") or f.cell_plus < 0:
                continue
            normal, _ = mesh.patch_geometry(f.patch_id, mesh.nodes[f.minus_nodes])
            for m_node, p_node in zip(f.minus_nodes, f.plus_nodes):
                if int(p_node) in pair_of_plus:
                    normals[int(p_node)] = normal(mesh.nodes[m_node])
        missing = [p for p in pair_of_plus if p not in normals]
        if missing:
            raise ValueError(f"split nodes {missing} belong to no slipping face")

        cols = []      # (node, 3-vector) pairs defining Z columns
        self.dof_names = []
        for node in range(N):
            if not material[node] or node in fixed:
                continue
            if node in pair_of_plus:
                continue
            for comp in range(3):
                e = np.zeros(3)
                e[comp] = 1.0
                cols.append([(node, e)])
                self.dof_names.append(f"u[{node}].{'xyz'[comp]}")
        self.pair_tangents = {}
        for p_node, m_node in sorted(pair_of_plus.items()):
            nu = normals[p_node]
            t1, t2 = _tangent_basis(nu)
            self.pair_tangents[p_node] = (nu, t1, t2)
            # slave normal component: u_plus gains nu (nu . u_minus)
            for comp in range(3):
                e = np.zeros(3)
                e[comp] = 1.0
                for col in cols:
                    if col[0][0] == m_node and np.allclose(col[0][1], e):
                        col.append((p_node, nu * nu[comp]))
            for tvec, label in ((t1, "t1"), (t2, "t2")):
                cols.append([(p_node, tvec)])
                self.dof_names.append(f"u[{p_node}].{label}")

        self.n_u = len(cols)
        self.Z = np.zeros((3 * N, self.n_u))
        for j, col in enumerate(cols):
            for node, vec in col:
                self.Z[3 * node:3 * node + 3, j] += vec

        hull = set(int(g) for g in mesh.hull_geom_nodes())
        self.phi_nodes = np.array([g for g in range(mesh.n_geom) if g not in hull],
                                  dtype=int)
        self.n_phi = len(self.phi_nodes)
        self.phi_index = -np.ones(mesh.n_geom, dtype=int)
        self.phi_index[self.phi_nodes] = np.arange(self.n_phi)
        self.fixed = fixed

    def expand_u(self, q):
        """Reduced dofs -> nodal displacements (N, 3)."""
        return (self.Z @ np.asarray(q, dtype=float)).reshape(-1, 3)

    def reduce_u(self, u_nodal):
        """Least-squares projection of nodal displacements onto the dof basis."""
        flat = np.asarray(u_nodal, dtype=float).ravel()
        return np.linalg.lstsq(self.Z, flat, rcond=None)[0]

    def expand_phi(self, q):
        """Reduced potential dofs -> values per geometric node (zero on hull)."""
        phi = np.zeros(self.mesh.n_geom)
        phi[self.phi_nodes] = np.asarray(q, dtype=float)
        return phi
