"""Scene description, JSON ingestion and rest-state precomputation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

DEGENERATE_AREA = 1e-12


class SceneError(ValueError):
    """Invalid or malformed scene document."""


@dataclass(frozen=True)
class Fiber:
    i: int
    j: int
    stiffness: float
    rest_length: float


@dataclass(frozen=True)
class MaterialParams:
    mu: float
    lam: float
    density: float


@dataclass(frozen=True)
class ContactParams:
    k_collision: float = 0.0
    k_friction: float = 0.0
    eps: float = 1e-2


@dataclass(frozen=True)
class PolicyIOConfig:
    center_x: bool = True


@dataclass(frozen=True, eq=False)
class Scene:
    vertices: np.ndarray
    triangles: np.ndarray
    fibers: tuple
    material: MaterialParams
    pinned: tuple = ()
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, -9.8]))
    dt: float = 0.01
    contact: ContactParams = ContactParams()
    policy_io: PolicyIOConfig = PolicyIOConfig()

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_fibers(self) -> int:
        return len(self.fibers)

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[list(self.pinned)] = False
        return np.flatnonzero(mask)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return scene_to_dict(self) == scene_to_dict(other)


@dataclass(frozen=True, eq=False)
class RestData:
    areas: np.ndarray  # (m,)
    dm_inv: np.ndarray  # (m, 2, 2)
    rest_lengths: np.ndarray  # (f,)
    stiffness: np.ndarray  # (f,)
    fiber_ends: np.ndarray  # (f, 2) int
    masses: np.ndarray  # (n,)


@dataclass
class State:
    x: np.ndarray
    v: np.ndarray

    def copy(self) -> "State":
        return State(self.x.copy(), self.v.copy())


_TOP_KEYS = {"vertices", "triangles", "fibers", "material", "pinned", "gravity", "dt", "contact", "policy_io"}
_FIBER_KEYS = {"i", "j", "stiffness", "rest_length"}
_MATERIAL_KEYS = {"mu", "lambda", "density"}
_CONTACT_KEYS = {"k_collision", "k_friction", "eps"}
_POLICY_KEYS = {"center_x"}


def _check_keys(obj, allowed: set, where: str, required: set = frozenset()):
    if not isinstance(obj, dict):
        raise SceneError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise SceneError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise SceneError(f"{where}: missing field(s) {sorted(missing)}")


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneError(f"{where}: expected a number, got {value!r}")
    if not np.isfinite(value):
        raise SceneError(f"{where}: must be finite")
    return float(value)


def _index(value, n: int, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SceneError(f"{where}: expected an integer index, got {value!r}")
    if not 0 <= value < n:
        raise SceneError(f"{where}: index {value} out of range [0, {n})")
    return value


def _signed_area(p0, p1, p2) -> float:
    return 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))


def scene_from_dict(doc: dict) -> Scene:
    _check_keys(doc, _TOP_KEYS, "scene", required={"vertices", "triangles", "material"})

    verts = doc["vertices"]
    if not isinstance(verts, list) or not verts:
        raise SceneError("vertices: expected a non-empty list of [x, y]")
    rows = []
    for k, p in enumerate(verts):
        if not isinstance(p, list) or len(p) != 2:
            raise SceneError(f"vertices[{k}]: expected [x, y]")
        rows.append([_number(c, f"vertices[{k}]") for c in p])
    vertices = np.array(rows, dtype=np.float64)
    n = len(vertices)

    tris = doc["triangles"]
    if not isinstance(tris, list):
        raise SceneError("triangles: expected a list")
    triangles = []
    for k, t in enumerate(tris):
        if not isinstance(t, list) or len(t) != 3:
            raise SceneError(f"triangles[{k}]: expected [i, j, k]")
        a, b, c = (_index(i, n, f"triangles[{k}]") for i in t)
        area = _signed_area(vertices[a], vertices[b], vertices[c])
        if abs(area) < DEGENERATE_AREA:
            raise SceneError(f"triangles[{k}]: degenerate triangle (area {area:.3g})")
        triangles.append([a, b, c] if area > 0 else [a, c, b])
    triangles = np.array(triangles, dtype=np.intp).reshape(-1, 3)

    fibers = []
    for k, f in enumerate(doc.get("fibers", [])):
        where = f"fibers[{k}]"
        _check_keys(f, _FIBER_KEYS, where, required={"i", "j", "stiffness"})
        i, j = _index(f["i"], n, where + ".i"), _index(f["j"], n, where + ".j")
        if i == j:
            raise SceneError(f"{where}: endpoints must differ")
        stiffness = _number(f["stiffness"], where + ".stiffness")
        if stiffness < 0:
            raise SceneError(f"{where}.stiffness: must be >= 0")
        if f.get("rest_length") is None:
            rest = float(np.linalg.norm(vertices[j] - vertices[i]))
        else:
            rest = _number(f["rest_length"], where + ".rest_length")
        if rest <= 0:
            raise SceneError(f"{where}.rest_length: must be > 0")
        fibers.append(Fiber(i, j, stiffness, rest))

    mat = doc["material"]
    _check_keys(mat, _MATERIAL_KEYS, "material", required=_MATERIAL_KEYS)
    material = MaterialParams(
        _number(mat["mu"], "material.mu"),
        _number(mat["lambda"], "material.lambda"),
        _number(mat["density"], "material.density"),
    )
    if material.mu <= 0:
        raise SceneError("material.mu: must be > 0")
    if material.lam < 0:
        raise SceneError("material.lambda: must be >= 0")
    if material.density <= 0:
        raise SceneError("material.density: must be > 0")

    pinned_raw = doc.get("pinned", [])
    if not isinstance(pinned_raw, list):
        raise SceneError("pinned: expected a list")
    pinned = tuple(sorted({_index(p, n, "pinned") for p in pinned_raw}))

    g = doc.get("gravity", [0.0, -9.8])
    if not isinstance(g, list) or len(g) != 2:
        raise SceneError("gravity: expected [gx, gy]")
    gravity = np.array([_number(c, "gravity") for c in g])

    dt = _number(doc.get("dt", 0.01), "dt")
    if dt <= 0:
        raise SceneError("dt: must be > 0")

    c = doc.get("contact", {})
    _check_keys(c, _CONTACT_KEYS, "contact")
    contact = ContactParams(
        _number(c.get("k_collision", 0.0), "contact.k_collision"),
        _number(c.get("k_friction", 0.0), "contact.k_friction"),
        _number(c.get("eps", 1e-2), "contact.eps"),
    )
    if min(contact.k_collision, contact.k_friction, contact.eps) < 0:
        raise SceneError("contact: parameters must be >= 0")

    pio = doc.get("policy_io", {})
    _check_keys(pio, _POLICY_KEYS, "policy_io")
    center_x = pio.get("center_x", True)
    if not isinstance(center_x, bool):
        raise SceneError("policy_io.center_x: expected a boolean")

    return Scene(
        vertices=vertices,
        triangles=triangles,
        fibers=tuple(fibers),
        material=material,
        pinned=pinned,
        gravity=gravity,
        dt=dt,
        contact=contact,
        policy_io=PolicyIOConfig(center_x),
    )


def load_scene(text: str) -> Scene:
    """Parse and validate a JSON scene document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scene_from_dict(doc)


def load_scene_file(path) -> Scene:
    return load_scene(Path(path).read_text(encoding="utf-8"))


def builtin_scene(name: str) -> Scene:
    """Load one of the scenes shipped in ``diffsoft/scenes`` (e.g. ``"crawler"``)."""
    text = resources.files("diffsoft.scenes").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return load_scene(text)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "vertices": scene.vertices.tolist(),
        "triangles": scene.triangles.tolist(),
        "fibers": [
            {"i": f.i, "j": f.j, "stiffness": f.stiffness, "rest_length": f.rest_length}
            for f in scene.fibers
        ],
        "material": {"mu": scene.material.mu, "lambda": scene.material.lam, "density": scene.material.density},
        "pinned": list(scene.pinned),
        "gravity": scene.gravity.tolist(),
        "dt": scene.dt,
        "contact": {
            "k_collision": scene.contact.k_collision,
            "k_friction": scene.contact.k_friction,
            "eps": scene.contact.eps,
        },
        "policy_io": {"center_x": scene.policy_io.center_x},
    }


def dump_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2)


def compute_rest_data(scene: Scene) -> RestData:
    """Rest areas, inverse rest-shape matrices, fiber data and lumped masses."""
    X = scene.vertices
    tri = scene.triangles
    m = len(tri)
    # columns of Dm are the rest edge vectors x1 - x0 and x2 - x0
    Dm = np.empty((m, 2, 2))
    Dm[:, :, 0] = X[tri[:, 1]] - X[tri[:, 0]]
    Dm[:, :, 1] = X[tri[:, 2]] - X[tri[:, 0]]
    det = Dm[:, 0, 0] * Dm[:, 1, 1] - Dm[:, 0, 1] * Dm[:, 1, 0]
    if m and np.min(np.abs(det)) < 2 * DEGENERATE_AREA:
        k = int(np.argmin(np.abs(det)))
        raise SceneError(f"triangles[{k}]: degenerate triangle (singular rest shape)")
    areas = 0.5 * np.abs(det)
    dm_inv = np.linalg.inv(Dm) if m else np.zeros((0, 2, 2))

    masses = np.zeros(scene.n_vertices)
    np.add.at(masses, tri.ravel(), np.repeat(scene.material.density * areas / 3.0, 3))

    fibers = scene.fibers
    return RestData(
        areas=areas,
        dm_inv=dm_inv,
        rest_lengths=np.array([f.rest_length for f in fibers], dtype=np.float64),
        stiffness=np.array([f.stiffness for f in fibers], dtype=np.float64),
        fiber_ends=np.array([[f.i, f.j] for f in fibers], dtype=np.intp).reshape(-1, 2),
        masses=masses,
    )


def initial_state(scene: Scene) -> State:
    x = scene.vertices.copy()
    return State(x, np.zeros_like(x))
