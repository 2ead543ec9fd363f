"""Triangle-mesh primitives: normals, adjacency and a few procedural shapes."""

from __future__ import annotations

import logging
import warnings

import numpy as np

logger = logging.getLogger(__name__)


class MeshError(ValueError):
    pass


def face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unnormalised face normals; their length is twice the triangle area."""
    v = np.asarray(vertices, dtype=float)
    tri = v[..., faces, :]
    return np.cross(tri[..., 1, :] - tri[..., 0, :], tri[..., 2, :] - tri[..., 0, :])


def vertex_normals(vertices: np.ndarray, faces: np.ndarray, *,
                   area_eps: float = 1e-14, strict: bool = False) -> np.ndarray:
    """Area-weighted unit vertex normals.

    Works on a single mesh (V, 3) or a batch (..., V, 3). Zero-area faces are
    left out of the average with a warning. Vertices without any usable face
    get a zero normal (warning), or raise :class:`MeshError` when ``strict``.
    """
    v = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    fn = face_normals(v, faces)
    area2 = np.linalg.norm(fn, axis=-1)
    degenerate = area2 <= 2.0 * area_eps
    if np.any(degenerate):
        warnings.warn(f"{int(degenerate.sum())} degenerate face(s) excluded from vertex normals",
                      RuntimeWarning, stacklevel=2)
        fn = np.where(degenerate[..., None], 0.0, fn)

    n_vert = v.shape[-2]
    acc = np.zeros(v.shape)
    for corner in range(3):
        idx = faces[:, corner]
        # np.add.at over the vertex axis, batched over leading dims
        np.add.at(acc, (..., idx, slice(None)), fn)

    norm = np.linalg.norm(acc, axis=-1)
    isolated = norm <= 0.0
    if np.any(isolated):
        bad = np.unique(np.nonzero(isolated.reshape(-1, n_vert))[1])
        msg = f"{bad.size} vertex/vertices without incident faces (first: {bad[:5].tolist()})"
        if strict:
            raise MeshError(msg)
        warnings.warn(msg + "; zero normal assigned", RuntimeWarning, stacklevel=2)
    return acc / np.where(isolated, 1.0, norm)[..., None]


def vertex_adjacency(n_vertices: int, faces: np.ndarray) -> list[set[int]]:
    """One-ring neighbourhoods."""
    nbrs: list[set[int]] = [set() for _ in range(n_vertices)]
    for a, b, c in np.asarray(faces):
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    return nbrs


def _perpendicular_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axis = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    return u, w


def capsule(start, end, radius: float, n_around: int = 12, n_rings: int = 6,
            n_cap: int = 2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed capsule around the segment start->end.

    Returns ``(vertices, faces, axial)`` where ``axial`` is each vertex's
    fraction along the segment (< 0 on the start cap, > 1 on the end cap).
    Cylinder rings (located with :func:`capsule_ring`) are centred exactly on
    the segment axis, so a ring's vertex mean is the axis point.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    seg = end - start
    length = float(np.linalg.norm(seg))
    if length <= 0 or radius <= 0:
        raise MeshError("capsule needs a positive length and radius")
    if n_around < 3 or n_rings < 2:
        raise MeshError("capsule resolution too low")
    axis = seg / length
    u, w = _perpendicular_frame(axis)
    ang = 2 * np.pi * np.arange(n_around) / n_around
    ring_dirs = np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * w

    rows = []  # (centre offset along axis [m], ring radius) from start pole to end pole
    for k in range(n_cap, 0, -1):
        phi = 0.5 * np.pi * k / (n_cap + 1)
        rows.append((-radius * np.sin(phi), radius * np.cos(phi)))
    for k in range(n_rings):
        rows.append((length * k / (n_rings - 1), radius))
    for k in range(1, n_cap + 1):
        phi = 0.5 * np.pi * k / (n_cap + 1)
        rows.append((length + radius * np.sin(phi), radius * np.cos(phi)))

    verts = [start - radius * axis]
    axial = [-radius / length]
    for off, rad in rows:
        centre = start + off * axis
        verts.extend(centre + rad * ring_dirs)
        axial.extend([off / length] * n_around)
    verts.append(end + radius * axis)
    axial.append(1.0 + radius / length)
    verts = np.asarray(verts)

    faces = []
    n_rows = len(rows)
    first = 1
    for j in range(n_around):  # start fan, oriented outward (towards -axis)
        faces.append((0, first + (j + 1) % n_around, first + j))
    for r in range(n_rows - 1):
        a0 = first + r * n_around
        b0 = a0 + n_around
        for j in range(n_around):
            j1 = (j + 1) % n_around
            faces.append((a0 + j, a0 + j1, b0 + j))
            faces.append((a0 + j1, b0 + j1, b0 + j))
    last_ring = first + (n_rows - 1) * n_around
    end_pole = len(verts) - 1
    for j in range(n_around):
        faces.append((end_pole, last_ring + j, last_ring + (j + 1) % n_around))
    return verts, np.asarray(faces, dtype=np.int64), np.asarray(axial)


def capsule_ring(n_around: int, n_cap: int, ring: int) -> np.ndarray:
    """Local vertex indices of cylinder ring ``ring`` (0 = start of the segment)."""
    return 1 + (n_cap + ring) * n_around + np.arange(n_around)


def uv_sphere(radius: float = 1.0, n_lat: int = 24, n_lon: int = 48,
              centre=(0.0, 0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Closed latitude/longitude sphere with outward-facing triangles."""
    centre = np.asarray(centre, dtype=float)
    verts = [centre + [0.0, 0.0, radius]]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append(centre + radius * np.array([np.sin(th) * np.cos(ph),
                                                     np.sin(th) * np.sin(ph), np.cos(th)]))
    verts.append(centre + [0.0, 0.0, -radius])
    faces = []
    for j in range(n_lon):
        faces.append((0, 1 + j, 1 + (j + 1) % n_lon))
    for i in range(n_lat - 2):
        a0 = 1 + i * n_lon
        b0 = a0 + n_lon
        for j in range(n_lon):
            j1 = (j + 1) % n_lon
            faces.append((a0 + j, b0 + j, a0 + j1))
            faces.append((a0 + j1, b0 + j, b0 + j1))
    south = len(verts) - 1
    last = 1 + (n_lat - 2) * n_lon
    for j in range(n_lon):
        faces.append((south, last + (j + 1) % n_lon, last + j))
    return np.asarray(verts), np.asarray(faces, dtype=np.int64)


def box(size=(1.0, 1.0, 1.0), n_div: int = 3, centre=(0.0, 0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box with each face split into an n_div x n_div grid.

    Vertices on edges are shared between faces, so the mesh is closed.
    """
    size = np.asarray(size, dtype=float)
    centre = np.asarray(centre, dtype=float)
    index: dict[tuple[int, int, int], int] = {}
    verts: list[np.ndarray] = []
    faces: list[tuple[int, int, int]] = []

    def vid(key):
        if key not in index:
            index[key] = len(verts)
            verts.append(centre + size * (np.asarray(key, dtype=float) / n_div - 0.5))
        return index[key]

    for axis in range(3):
        for side in (0, n_div):
            a1, a2 = [a for a in range(3) if a != axis]
            for i in range(n_div):
                for j in range(n_div):
                    def key(ii, jj):
                        k = [0, 0, 0]
                        k[axis], k[a1], k[a2] = side, ii, jj
                        return tuple(k)
                    q = [vid(key(i, j)), vid(key(i + 1, j)), vid(key(i + 1, j + 1)), vid(key(i, j + 1))]
                    tri1, tri2 = (q[0], q[1], q[2]), (q[0], q[2], q[3])
                    # orient outward
                    p = np.asarray(verts)
                    n = np.cross(p[tri1[1]] - p[tri1[0]], p[tri1[2]] - p[tri1[0]])
                    if (n[axis] > 0) != (side == n_div):
                        tri1, tri2 = tri1[::-1], tri2[::-1]
                    faces.extend([tri1, tri2])
    return np.asarray(verts), np.asarray(faces, dtype=np.int64)
