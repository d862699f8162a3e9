"""Synthetic indoor RF scenes and ground-truth channel labels.

Scenes are 2.5-D: obstacles are full-height vertical walls (segments in the
xy-plane) and columns (axis-aligned boxes in the xy-plane). Propagation is
free-space path loss plus additive penetration losses on each leg, with
first-order specular reflections found by the image method on walls, column
faces and the room boundary.

RSSI power-sums the paths (incoherent); CSI sums them coherently over an
802.11-style 52-subcarrier grid.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

C_LIGHT = 299_792_458.0
FREQ_PRESETS = {"2.4": 2.4e9, "5.0": 5.0e9}
SUBCARRIER_SPACING = 312.5e3
# 802.11a/g/n 20 MHz data+pilot tones, DC excluded
SUBCARRIER_INDEX = np.array([k for k in range(-26, 27) if k != 0])


class DegenerateQueryError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    """Penetration loss is quoted at 2.4 GHz and scales as ``(f / 2.4 GHz) ** loss_exponent``."""

    penetration_loss_db: float = 5.0
    reflection_coeff: float = 0.3
    loss_exponent: float = 0.0

    def __post_init__(self):
        if self.penetration_loss_db < 0:
            raise ValueError("penetration loss must be >= 0 dB")
        if not 0.0 <= self.reflection_coeff <= 1.0:
            raise ValueError("reflection coefficient must lie in [0, 1]")


@dataclass(frozen=True)
class Obstacle:
    """``kind='wall'``: segment ``a``-``b``; ``kind='column'``: box with corners ``a`` (min) and ``b`` (max)."""

    name: str
    kind: str
    a: tuple[float, float]
    b: tuple[float, float]
    material: Material = Material()

    def __post_init__(self):
        if self.kind not in ("wall", "column"):
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        if self.kind == "column" and not (self.a[0] < self.b[0] and self.a[1] < self.b[1]):
            raise ValueError(f"column {self.name!r} needs min corner < max corner")

    @property
    def centroid(self) -> np.ndarray:
        return (np.asarray(self.a) + np.asarray(self.b)) / 2

    def faces(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray | None]]:
        """Reflecting segments ``(p0, p1, outward_normal)``; walls reflect on both sides (normal None)."""
        a, b = np.asarray(self.a), np.asarray(self.b)
        if self.kind == "wall":
            return [(a, b, None)]
        (x0, y0), (x1, y1) = a, b
        return [
            (np.array([x0, y0]), np.array([x1, y0]), np.array([0.0, -1.0])),
            (np.array([x1, y0]), np.array([x1, y1]), np.array([1.0, 0.0])),
            (np.array([x1, y1]), np.array([x0, y1]), np.array([0.0, 1.0])),
            (np.array([x0, y1]), np.array([x0, y0]), np.array([-1.0, 0.0])),
        ]

    def blocks(self, p: np.ndarray, q: np.ndarray) -> bool:
        """Does the xy-projection of segment p-q cross this obstacle?"""
        if self.kind == "wall":
            return _segments_cross(p, q, np.asarray(self.a), np.asarray(self.b))
        return _segment_hits_box(p, q, np.asarray(self.a), np.asarray(self.b))

    def contains(self, p: np.ndarray) -> bool:
        return self.kind == "column" and self.a[0] < p[0] < self.b[0] and self.a[1] < p[1] < self.b[1]

    def moved(self, delta: Sequence[float]) -> "Obstacle":
        d = np.asarray(delta, dtype=float)[:2]
        return dataclasses.replace(self, a=tuple(np.asarray(self.a) + d), b=tuple(np.asarray(self.b) + d))


@dataclass(frozen=True)
class SceneGraph:
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]]
    tx: tuple[float, float, float]
    frequency_hz: float = 2.4e9
    obstacles: tuple[Obstacle, ...] = ()
    boundary: Material = Material(penetration_loss_db=0.0, reflection_coeff=0.4)
    name: str = "scene"

    def __post_init__(self):
        lo, hi = (tuple(float(v) for v in c) for c in self.bounds)
        object.__setattr__(self, "bounds", (lo, hi))
        object.__setattr__(self, "tx", tuple(float(v) for v in self.tx))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if not all(l < h for l, h in zip(lo, hi)):
            raise ValueError("scene bounds must have positive extent")
        if not self.inside(self.tx):
            raise ValueError("transmitter lies outside the scene bounds")
        if self.frequency_hz <= 0:
            raise ValueError("frequency must be positive")
        for ob in self.obstacles:
            for corner in (ob.a, ob.b):
                if not (lo[0] <= corner[0] <= hi[0] and lo[1] <= corner[1] <= hi[1]):
                    raise ValueError(f"obstacle {ob.name!r} extends outside the scene bounds")

    def inside(self, p: Sequence[float]) -> bool:
        lo, hi = self.bounds
        return all(l <= v <= h for l, v, h in zip(lo, p, hi))

    @property
    def center(self) -> np.ndarray:
        lo, hi = np.asarray(self.bounds)
        return (lo + hi) / 2

    @property
    def half_extent(self) -> float:
        lo, hi = np.asarray(self.bounds)
        return float(np.max(hi - lo) / 2)

    def obstacle(self, name: str) -> Obstacle:
        for ob in self.obstacles:
            if ob.name == name:
                return ob
        raise KeyError(name)

    def boundary_faces(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        (x0, y0, _), (x1, y1, _) = self.bounds
        # inward normals: the room interior is the reflecting side
        return [
            (np.array([x0, y0]), np.array([x1, y0]), np.array([0.0, 1.0])),
            (np.array([x1, y0]), np.array([x1, y1]), np.array([-1.0, 0.0])),
            (np.array([x1, y1]), np.array([x0, y1]), np.array([0.0, -1.0])),
            (np.array([x0, y1]), np.array([x0, y0]), np.array([1.0, 0.0])),
        ]

    def with_frequency(self, frequency_hz: float) -> "SceneGraph":
        return dataclasses.replace(self, frequency_hz=float(frequency_hz))

    def with_tx(self, tx: Sequence[float]) -> "SceneGraph":
        return dataclasses.replace(self, tx=tuple(float(v) for v in tx))

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        mats: dict[str, dict] = {}
        names: dict[Material, str] = {}

        def mat_name(m: Material) -> str:
            if m not in names:
                names[m] = f"m{len(names)}"
                mats[names[m]] = dataclasses.asdict(m)
            return names[m]

        obstacles = [
            {"name": o.name, "kind": o.kind, "a": list(o.a), "b": list(o.b), "material": mat_name(o.material)}
            for o in self.obstacles
        ]
        return {
            "version": 1,
            "name": self.name,
            "bounds": [list(self.bounds[0]), list(self.bounds[1])],
            "tx": list(self.tx),
            "frequency_hz": self.frequency_hz,
            "boundary_material": mat_name(self.boundary),
            "materials": mats,
            "obstacles": obstacles,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneGraph":
        mats = {k: Material(**v) for k, v in data.get("materials", {}).items()}

        def mat(ref) -> Material:
            if isinstance(ref, dict):
                return Material(**ref)
            return mats[ref]

        obstacles = tuple(
            Obstacle(o["name"], o["kind"], tuple(o["a"]), tuple(o["b"]), mat(o["material"]) if "material" in o else Material())
            for o in data.get("obstacles", [])
        )
        kwargs = {}
        if "boundary_material" in data:
            kwargs["boundary"] = mat(data["boundary_material"])
        return cls(
            bounds=(tuple(data["bounds"][0]), tuple(data["bounds"][1])),
            tx=tuple(data["tx"]),
            frequency_hz=float(data.get("frequency_hz", 2.4e9)),
            obstacles=obstacles,
            name=data.get("name", "scene"),
            **kwargs,
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SceneGraph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class SimConfig:
    tx_power_dbm: float = 20.0
    reflections: bool = True
    shadowing_sigma_db: float = 1.0
    subcarriers: int = 52


# -- 2-D segment geometry ------------------------------------------------------


def _cross(u, v) -> float:
    return u[0] * v[1] - u[1] * v[0]


def _segment_param(p, q, a, b) -> tuple[float, float] | None:
    """Parameters (s, u) of the intersection p + s(q-p) = a + u(b-a), or None if parallel."""
    r, d = q - p, b - a
    den = _cross(r, d)
    if abs(den) < 1e-12:
        return None
    w = a - p
    return _cross(w, d) / den, _cross(w, r) / den


def _segments_cross(p, q, a, b, eps: float = 1e-9) -> bool:
    sp = _segment_param(np.asarray(p[:2], float), np.asarray(q[:2], float), a, b)
    if sp is None:
        return False
    s, u = sp
    return eps < s < 1 - eps and -eps <= u <= 1 + eps


def _segment_hits_box(p, q, lo, hi) -> bool:
    """Liang-Barsky clip of segment p-q against the open box (lo, hi)."""
    p, q = np.asarray(p[:2], float), np.asarray(q[:2], float)
    d = q - p
    t0, t1 = 0.0, 1.0
    for axis in range(2):
        if abs(d[axis]) < 1e-15:
            if not lo[axis] < p[axis] < hi[axis]:
                return False
            continue
        ta, tb = (lo[axis] - p[axis]) / d[axis], (hi[axis] - p[axis]) / d[axis]
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    return t1 - t0 > 1e-9


def _mirror(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mirror the xy part of 3-D point p across the line through a, b."""
    d = (b - a) / np.linalg.norm(b - a)
    w = p[:2] - a
    foot = a + d * np.dot(w, d)
    out = p.copy()
    out[:2] = 2 * foot - p[:2]
    return out


# -- propagation -----------------------------------------------------------------


def fspl_db(distance_m, frequency_hz):
    """Free-space path loss, 20 log10(d_km) + 20 log10(f_MHz) + 32.44."""
    return 20 * np.log10(np.asarray(distance_m) / 1e3) + 20 * np.log10(frequency_hz / 1e6) + 32.44


@dataclass(frozen=True)
class Path:
    length: float
    loss_db: float  # everything except free-space loss
    kind: str = "los"


def penetration_db(material: Material, frequency_hz: float) -> float:
    return material.penetration_loss_db * (frequency_hz / 2.4e9) ** material.loss_exponent


def _penetration(scene: SceneGraph, p, q, skip: Obstacle | None = None) -> float:
    return sum(penetration_db(o.material, scene.frequency_hz) for o in scene.obstacles if o is not skip and o.blocks(p, q))


def _check_query(scene: SceneGraph, rx) -> np.ndarray:
    rx = np.asarray(rx, dtype=float)
    if rx.shape != (3,):
        raise ValueError("receiver position must have 3 coordinates")
    if not scene.inside(rx):
        raise ValueError(f"receiver {rx.tolist()} lies outside the scene bounds")
    if np.linalg.norm(rx - np.asarray(scene.tx)) < 1e-9:
        raise DegenerateQueryError("receiver coincides with the transmitter")
    return rx


def propagation_paths(scene: SceneGraph, rx, reflections: bool = True) -> list[Path]:
    rx = _check_query(scene, rx)
    tx = np.asarray(scene.tx, dtype=float)
    paths = [Path(float(np.linalg.norm(rx - tx)), _penetration(scene, tx, rx), "los")]
    if not reflections:
        return paths
    reflectors: list[tuple[np.ndarray, np.ndarray, np.ndarray | None, Material, Obstacle | None]] = [
        (a, b, n, scene.boundary, None) for a, b, n in scene.boundary_faces()
    ]
    for ob in scene.obstacles:
        reflectors += [(a, b, n, ob.material, ob) for a, b, n in ob.faces()]
    for a, b, normal, mat, owner in reflectors:
        if mat.reflection_coeff <= 0:
            continue
        if normal is not None:
            # both ends must see the reflecting side of the face
            if np.dot(tx[:2] - a, normal) <= 0 or np.dot(rx[:2] - a, normal) <= 0:
                continue
        image = _mirror(tx, a, b)
        hit = _segment_param(image[:2], rx[:2], a, b)
        if hit is None:
            continue
        s, u = hit
        if not (1e-9 < s < 1 - 1e-9 and 0.0 <= u <= 1.0):
            continue
        point = image + s * (rx - image)
        loss = _penetration(scene, tx, point, owner) + _penetration(scene, point, rx, owner)
        loss += -20 * math.log10(mat.reflection_coeff)
        paths.append(Path(float(np.linalg.norm(rx - image)), loss, "reflection"))
    return paths


def path_powers_dbm(scene: SceneGraph, paths: Iterable[Path], cfg: SimConfig) -> np.ndarray:
    return np.array([cfg.tx_power_dbm - fspl_db(p.length, scene.frequency_hz) - p.loss_db for p in paths])


def trace_rssi(scene: SceneGraph, rx, cfg: SimConfig = SimConfig(), rng: np.random.Generator | None = None) -> float:
    """Received power in dBm; shadowing is added only when ``rng`` is given."""
    powers = path_powers_dbm(scene, propagation_paths(scene, rx, cfg.reflections), cfg)
    rssi = 10 * math.log10(np.sum(10 ** (powers / 10)))
    if rng is not None and cfg.shadowing_sigma_db > 0:
        rssi += rng.normal(0.0, cfg.shadowing_sigma_db)
    return float(rssi)


def subcarrier_frequencies(carrier_hz: float, n: int = 52) -> np.ndarray:
    if n == 52:
        idx = SUBCARRIER_INDEX
    else:
        idx = np.arange(n) - (n - 1) / 2
    return carrier_hz + idx * SUBCARRIER_SPACING


def synth_csi(scene: SceneGraph, rx, cfg: SimConfig = SimConfig(), gain_db: float = 0.0) -> np.ndarray:
    """Complex frequency response (in sqrt(mW)) on the subcarrier grid."""
    paths = propagation_paths(scene, rx, cfg.reflections)
    amp = 10 ** ((path_powers_dbm(scene, paths, cfg) + gain_db) / 20)
    tau = np.array([p.length for p in paths]) / C_LIGHT
    f = subcarrier_frequencies(scene.frequency_hz, cfg.subcarriers)
    return np.exp(-2j * np.pi * np.outer(f, tau)) @ amp


# -- datasets --------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    nx: int = 20
    ny: int = 20
    z: float = 0.5
    margin: float = 0.25
    jitter: float = 0.05

    @classmethod
    def parse(cls, text: str, **kwargs) -> "GridSpec":
        nx, ny = (int(v) for v in text.lower().split("x"))
        return cls(nx=nx, ny=ny, **kwargs)


def split_order(n: int, seed: int) -> np.ndarray:
    """Indices ranked by sha256 of ``"{seed}:{index}"``."""
    keys = [hashlib.sha256(f"{seed}:{i}".encode()).hexdigest() for i in range(n)]
    return np.array(sorted(range(n), key=lambda i: keys[i]))


def assign_splits(n: int, seed: int, fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> list[str]:
    """Deterministic split: hash-ranked, first 80% train, next 10% val, rest test."""
    if len(fractions) != 3 or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError("split fractions must be three numbers summing to 1")
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    labels = ["test"] * n
    for rank, i in enumerate(split_order(n, seed)):
        labels[i] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return labels


def grid_points(scene: SceneGraph, grid: GridSpec, seed: int) -> np.ndarray:
    (x0, y0, _), (x1, y1, _) = scene.bounds
    xs = np.linspace(x0 + grid.margin, x1 - grid.margin, grid.nx)
    ys = np.linspace(y0 + grid.margin, y1 - grid.margin, grid.ny)
    pts = np.array([[x, y, grid.z] for x in xs for y in ys])
    if grid.jitter > 0:
        rng = np.random.default_rng([seed, 0x6A17])
        pts[:, :2] += rng.uniform(-grid.jitter, grid.jitter, size=(len(pts), 2))
    lo, hi = np.asarray(scene.bounds)
    return np.clip(pts, lo, hi)


@dataclass
class ChannelSample:
    rx: tuple[float, float, float]
    tx: tuple[float, float, float]
    freq_hz: float
    rssi_db: float | None = None
    csi: np.ndarray | None = None
    split: str = "train"

    def to_record(self) -> dict:
        rec = {"rx": list(self.rx), "tx": list(self.tx), "freq_hz": self.freq_hz, "split": self.split}
        if self.rssi_db is not None:
            rec["rssi_db"] = self.rssi_db
        if self.csi is not None:
            rec["csi"] = [[float(z.real), float(z.imag)] for z in self.csi]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "ChannelSample":
        csi = None
        if rec.get("csi") is not None:
            arr = np.asarray(rec["csi"], dtype=float)
            csi = arr[:, 0] + 1j * arr[:, 1]
        return cls(tuple(rec["rx"]), tuple(rec["tx"]), float(rec["freq_hz"]), rec.get("rssi_db"), csi, rec.get("split", "train"))


def simulate_samples(
    scene: SceneGraph,
    grid: GridSpec = GridSpec(),
    seed: int = 0,
    cfg: SimConfig = SimConfig(),
    labels: Sequence[str] = ("rssi",),
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
) -> list[ChannelSample]:
    pts = grid_points(scene, grid, seed)
    keep = []
    for p in pts:
        if np.linalg.norm(p - np.asarray(scene.tx)) < 1e-9:
            log.info("skipping grid point %s: coincides with the transmitter", p.tolist())
            continue
        keep.append(p)
    splits = assign_splits(len(keep), seed, fractions)
    rng = np.random.default_rng([seed, 0x5AD0])
    out = []
    for p, split in zip(keep, splits):
        shadow = rng.normal(0.0, cfg.shadowing_sigma_db) if cfg.shadowing_sigma_db > 0 else 0.0
        s = ChannelSample(tuple(float(v) for v in p), scene.tx, scene.frequency_hz, split=split)
        if "rssi" in labels:
            s.rssi_db = trace_rssi(scene, p, cfg) + shadow
        if "csi" in labels:
            s.csi = synth_csi(scene, p, cfg, gain_db=shadow)
        out.append(s)
    return out


def write_dataset(samples: Sequence[ChannelSample], path) -> None:
    try:
        with open(path, "w") as fh:
            for s in samples:
                fh.write(json.dumps(s.to_record(), sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {os.fspath(path)!r}: {exc.strerror}") from exc


def read_dataset(path) -> list[ChannelSample]:
    with open(path) as fh:
        return [ChannelSample.from_record(json.loads(line)) for line in fh if line.strip()]


def generate_dataset(scene, grid: GridSpec, split_spec=(0.8, 0.1, 0.1), seed: int = 0, out=None,
                     cfg: SimConfig = SimConfig(), labels=("rssi",)) -> list[ChannelSample]:
    samples = simulate_samples(scene, grid, seed, cfg, labels, split_spec)
    if out is not None:
        write_dataset(samples, out)
    return samples


# -- scene edits -----------------------------------------------------------------


def edit_scene(scene: SceneGraph, edit: str, target) -> SceneGraph:
    """Return an edited copy.

    * ``("add", obstacle)`` appends an :class:`Obstacle`;
    * ``("relocate", (name, delta_xy))`` shifts the named obstacle;
    * ``("remove", name)`` drops it.
    """
    names = [o.name for o in scene.obstacles]
    if edit == "add":
        if not isinstance(target, Obstacle):
            raise ValueError("add needs an Obstacle")
        if target.name in names:
            raise ValueError(f"obstacle {target.name!r} already exists")
        return dataclasses.replace(scene, obstacles=scene.obstacles + (target,))
    if edit == "relocate":
        name, delta = target
        if name not in names:
            raise KeyError(f"unknown obstacle {name!r}")
        return dataclasses.replace(scene, obstacles=tuple(o.moved(delta) if o.name == name else o for o in scene.obstacles))
    if edit == "remove":
        if target not in names:
            raise KeyError(f"unknown obstacle {target!r}")
        return dataclasses.replace(scene, obstacles=tuple(o for o in scene.obstacles if o.name != target))
    raise ValueError(f"unknown edit {edit!r}")


# -- benchmark rooms -------------------------------------------------------------

CONCRETE = Material(penetration_loss_db=12.0, reflection_coeff=0.5, loss_exponent=0.6)
DRYWALL = Material(penetration_loss_db=5.0, reflection_coeff=0.3, loss_exponent=0.4)
DEVICE = Material(penetration_loss_db=6.0, reflection_coeff=0.6, loss_exponent=0.3)


def benchmark_rooms() -> dict[str, SceneGraph]:
    """Two ~35 m^2 rooms with columns and a partition, plus a laptop obstacle."""
    room1 = SceneGraph(
        bounds=((0.0, 0.0, 0.0), (7.0, 5.0, 2.8)),
        tx=(0.6, 0.6, 1.0),
        obstacles=(
            Obstacle("column_a", "column", (2.4, 1.6), (3.0, 2.2), CONCRETE),
            Obstacle("column_b", "column", (4.6, 3.0), (5.2, 3.6), CONCRETE),
            Obstacle("laptop", "column", (3.8, 0.9), (4.2, 1.2), DEVICE),
        ),
        name="room1",
    )
    room2 = SceneGraph(
        bounds=((0.0, 0.0, 0.0), (6.0, 6.0, 2.8)),
        tx=(5.4, 0.8, 1.0),
        obstacles=(
            Obstacle("partition", "wall", (0.0, 3.2), (3.6, 3.2), DRYWALL),
            Obstacle("column_a", "column", (3.4, 4.2), (4.0, 4.8), CONCRETE),
            Obstacle("laptop", "column", (2.0, 1.6), (2.4, 1.9), DEVICE),
        ),
        name="room2",
    )
    return {"room1": room1, "room2": room2}


def benchmark_edits(scene: SceneGraph) -> dict[str, SceneGraph]:
    """Obstacle addition (tablet set), relocation and removal of the laptop."""
    (x0, y0, _), (x1, y1, _) = scene.bounds
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    tablets = Obstacle("tablet_set", "column", (cx + 0.3, cy - 0.2), (cx + 0.8, cy + 0.1), DEVICE)
    return {
        "add": edit_scene(scene, "add", tablets),
        "relocate": edit_scene(scene, "relocate", ("laptop", (0.8, 1.2))),
        "remove": edit_scene(scene, "remove", "laptop"),
    }
