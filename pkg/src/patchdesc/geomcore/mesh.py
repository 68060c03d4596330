"""Triangle meshes: container, area, normalization, OFF/PLY I/O, icosphere."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DatasetIOError, DegenerateInputError, ShapeError


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V,3) float64
    faces: np.ndarray     # (F,3) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ShapeError(f"vertices must be (V,3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ShapeError(f"faces must be (F,3), got {self.faces.shape}")
        if not np.all(np.isfinite(self.vertices)):
            raise ConfigurationError("mesh vertices must be finite")
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ConfigurationError("face indices out of range")
            a, b, c = self.faces.T
            if np.any(a == b) or np.any(b == c) or np.any(a == c):
                raise ConfigurationError("degenerate face with repeated vertex")

    @property
    def n_vertices(self):
        return len(self.vertices)

    def edges(self):
        """Unique undirected edges as a sorted (E,2) array."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                            self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)


def face_areas(mesh):
    v = mesh.vertices
    f = mesh.faces
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return 0.5 * np.linalg.norm(cross, axis=1)


def mesh_area(mesh):
    """Total surface area."""
    return float(face_areas(mesh).sum())


def normalize_mesh(mesh):
    """Uniformly scale to unit total area."""
    area = mesh_area(mesh)
    if area <= 0:
        raise DegenerateInputError("mesh has zero area; cannot normalize")
    return TriMesh(vertices=mesh.vertices / np.sqrt(area), faces=mesh.faces)


def write_off(mesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {len(mesh.faces)} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def _tokens(path):
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                yield from line.split()


def read_off(path):
    toks = _tokens(path)
    try:
        magic = next(toks)
        if magic != "OFF":
            raise DatasetIOError(f"{path}: not an OFF file (header {magic!r})")
        nv, nf, _ = int(next(toks)), int(next(toks)), int(next(toks))
        verts = np.array([float(next(toks)) for _ in range(3 * nv)]).reshape(nv, 3)
        faces = []
        for _ in range(nf):
            arity = int(next(toks))
            idx = [int(next(toks)) for _ in range(arity)]
            if arity != 3:
                raise DatasetIOError(f"{path}: only triangle faces supported, got {arity}-gon")
            faces.append(idx)
    except StopIteration:
        raise DatasetIOError(f"{path}: truncated OFF file") from None
    except ValueError as exc:
        raise DatasetIOError(f"{path}: malformed OFF file: {exc}") from None
    return TriMesh(vertices=verts, faces=np.array(faces, dtype=np.int64).reshape(-1, 3))


def read_ply(path):
    """ASCII PLY reader for position + face data only."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    if not lines or lines[0] != "ply":
        raise DatasetIOError(f"{path}: not a PLY file")
    nv = nf = None
    v_props = []
    in_vertex = False
    cursor = 1
    fmt = None
    while cursor < len(lines):
        line = lines[cursor]
        cursor += 1
        if line.startswith("format"):
            fmt = line.split()[1]
        elif line.startswith("element vertex"):
            nv = int(line.split()[2])
            in_vertex = True
        elif line.startswith("element face"):
            nf = int(line.split()[2])
            in_vertex = False
        elif line.startswith("element"):
            in_vertex = False
        elif line.startswith("property") and in_vertex:
            v_props.append(line.split()[-1])
        elif line == "end_header":
            break
    else:
        raise DatasetIOError(f"{path}: PLY header never ends")
    if fmt != "ascii":
        raise DatasetIOError(f"{path}: only ascii PLY supported, got format {fmt}")
    if nv is None or nf is None:
        raise DatasetIOError(f"{path}: PLY header missing vertex or face element")
    try:
        xi, yi, zi = v_props.index("x"), v_props.index("y"), v_props.index("z")
    except ValueError:
        raise DatasetIOError(f"{path}: PLY vertices lack x/y/z properties") from None

    body = [ln for ln in lines[cursor:] if ln]
    if len(body) < nv + nf:
        raise DatasetIOError(f"{path}: truncated PLY body")
    try:
        verts = np.array(
            [[float(t) for t in ln.split()] for ln in body[:nv]], dtype=np.float64
        )[:, [xi, yi, zi]]
        faces = []
        for ln in body[nv:nv + nf]:
            parts = [int(float(t)) for t in ln.split()]
            if parts[0] != 3:
                raise DatasetIOError(f"{path}: only triangle faces supported")
            faces.append(parts[1:4])
    except (ValueError, IndexError) as exc:
        raise DatasetIOError(f"{path}: malformed PLY body: {exc}") from None
    return TriMesh(vertices=verts, faces=np.array(faces, dtype=np.int64).reshape(-1, 3))


def read_mesh(path):
    path = str(path)
    if path.endswith(".off"):
        return read_off(path)
    if path.endswith(".ply"):
        return read_ply(path)
    raise DatasetIOError(f"unsupported mesh format: {path} (expected .off or .ply)")


def icosphere(subdivisions=3, radius=1.0):
    """Subdivided icosahedron projected to a sphere.

    4 subdivisions give 2562 vertices.
    """
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)

    for _ in range(subdivisions):
        vlist = list(verts)
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = vlist[i] + vlist[j]
                m /= np.linalg.norm(m)
                midpoint[key] = len(vlist)
                vlist.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(vlist)
        faces = np.array(new_faces, dtype=np.int64)

    return TriMesh(vertices=verts * radius, faces=faces)
