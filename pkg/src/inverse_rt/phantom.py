"""Synthetic 2-D phantoms with parallel-beam dose-influence matrices.

Voxel ``(ix, iy)`` has its centre at
``((ix + 0.5 - nx / 2) * size, (iy + 0.5 - ny / 2) * size)`` in cm and linear
index ``iy * nx + ix``.  A beam at angle ``theta`` comes *from* direction
``(cos theta, sin theta)``.  Each beam is split into parallel beamlets spaced
``beamlet_spacing`` apart across the projected extent of the targets, and

    D[v, b] = exp(-attenuation * depth(v, b)) * exp(-(s_v - s_b)^2 / (2 sigma^2))

where ``depth`` is measured from where the ray through the voxel enters the
box spanned by the voxel centres, and ``s`` is the lateral coordinate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .rtp import DvObjective, PlanProblem, Structure, Weights, parse_objective_row, objective_row


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class Shape:
    name: str
    kind: str
    geometry: str
    params: dict
    prescribed_dose: float = 0.0
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("target", "oar"):
            raise PhantomError(f"{self.name}: kind must be 'target' or 'oar'")
        if self.geometry not in ("disk", "annulus", "rectangle"):
            raise PhantomError(f"{self.name}: unknown geometry {self.geometry!r}")

    def contains(self, x, y):
        p = self.params
        try:
            if self.geometry == "rectangle":
                return (x >= p["x0"]) & (x <= p["x1"]) & (y >= p["y0"]) & (y <= p["y1"])
            cx, cy = p["center"]
            r = np.hypot(x - cx, y - cy)
            if self.geometry == "disk":
                return r <= p["radius"]
            inside = (r >= p["r_in"]) & (r <= p["r_out"])
            if "theta" in p:
                t0, t1 = p["theta"]
                ang = np.degrees(np.arctan2(y - cy, x - cx)) % 360.0
                t0, t1 = t0 % 360.0, t1 % 360.0
                inside &= ((ang >= t0) & (ang <= t1)) if t0 <= t1 else ((ang >= t0) | (ang <= t1))
            return inside
        except KeyError as exc:
            raise PhantomError(f"{self.name}: missing geometry parameter {exc}") from None


@dataclass(frozen=True)
class PhantomSpec:
    grid: tuple
    voxel_size: float
    shapes: tuple
    beams: tuple
    attenuation: float = 0.05
    pencil_sigma: float = 0.3
    beamlet_spacing: Optional[float] = None
    noise: float = 0.0
    seed: int = 0
    objectives: tuple = ()
    cutoff: float = 1e-6

    def __post_init__(self):
        nx, ny = (int(v) for v in self.grid)
        if nx < 1 or ny < 1:
            raise PhantomError("grid must be at least 1x1")
        if self.voxel_size <= 0:
            raise PhantomError("voxel_size must be positive")
        if not self.shapes:
            raise PhantomError("no shapes given")
        if not any(s.kind == "target" for s in self.shapes):
            raise PhantomError("at least one target shape is required")
        if not self.beams:
            raise PhantomError("at least one beam is required")
        if self.attenuation < 0:
            raise PhantomError("attenuation must be non-negative")
        if self.pencil_sigma <= 0:
            raise PhantomError("pencil_sigma must be positive")
        if self.noise < 0 or self.noise >= 1:
            raise PhantomError("noise must lie in [0, 1)")
        object.__setattr__(self, "grid", (nx, ny))
        object.__setattr__(self, "shapes", tuple(self.shapes))
        object.__setattr__(self, "beams", tuple(float(b) for b in self.beams))
        object.__setattr__(self, "objectives", tuple(self.objectives))

    @property
    def spacing(self) -> float:
        return self.voxel_size if self.beamlet_spacing is None else self.beamlet_spacing

    def to_dict(self) -> dict:
        d = {
            "grid": list(self.grid),
            "voxel_size": self.voxel_size,
            "shapes": [asdict(s) for s in self.shapes],
            "beams": list(self.beams),
            "attenuation": self.attenuation,
            "pencil_sigma": self.pencil_sigma,
            "beamlet_spacing": self.beamlet_spacing,
            "noise": self.noise,
            "seed": self.seed,
            "objectives": [objective_row(o) for o in self.objectives],
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        try:
            shapes = tuple(
                Shape(s["name"], s["kind"], s["geometry"], dict(s["params"]),
                      float(s.get("prescribed_dose", 0.0)), dict(s.get("weights", {})))
                for s in d["shapes"]
            )
            return cls(
                tuple(d["grid"]), float(d["voxel_size"]), shapes, tuple(d["beams"]),
                float(d.get("attenuation", 0.05)), float(d.get("pencil_sigma", 0.3)),
                d.get("beamlet_spacing"), float(d.get("noise", 0.0)), int(d.get("seed", 0)),
                tuple(parse_objective_row(r) for r in d.get("objectives", [])),
            )
        except KeyError as exc:
            raise PhantomError(f"phantom spec: missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise PhantomError(f"phantom spec: {exc}") from None


def voxel_centers(spec: PhantomSpec):
    nx, ny = spec.grid
    s = spec.voxel_size
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    x = (ix.ravel() + 0.5 - nx / 2) * s
    y = (iy.ravel() + 0.5 - ny / 2) * s
    return x, y


def label_map(spec: PhantomSpec) -> np.ndarray:
    """Index into ``spec.shapes`` for each voxel (-1 for unassigned).

    Targets outrank OARs; within a kind the earlier shape wins.
    """
    x, y = voxel_centers(spec)
    labels = np.full(x.size, -1)
    order = [i for i, s in enumerate(spec.shapes) if s.kind == "target"] + [
        i for i, s in enumerate(spec.shapes) if s.kind == "oar"
    ]
    for i in order:
        inside = spec.shapes[i].contains(x, y) & (labels < 0)
        labels[inside] = i
    return labels


def _depth(px, py, ux, uy, box):
    """Distance from box entry to each point along direction ``u``."""
    xlo, xhi, ylo, yhi = box
    t_entry = np.full(px.shape, -np.inf)
    for p, u, lo, hi in ((px, ux, xlo, xhi), (py, uy, ylo, yhi)):
        if abs(u) < 1e-12:
            continue
        t1 = (lo - p) / u
        t2 = (hi - p) / u
        t_entry = np.maximum(t_entry, np.minimum(t1, t2))
    t_entry = np.where(np.isfinite(t_entry), t_entry, 0.0)
    return np.maximum(-t_entry, 0.0)


def beamlets(spec: PhantomSpec, labels=None):
    """``(angle, lateral offset)`` of every beamlet, in column order."""
    if labels is None:
        labels = label_map(spec)
    x, y = voxel_centers(spec)
    tmask = np.isin(labels, [i for i, s in enumerate(spec.shapes) if s.kind == "target"])
    sp_ = spec.spacing
    out = []
    for ang in spec.beams:
        th = np.radians(ang)
        ux, uy = -np.cos(th), -np.sin(th)
        lat = -uy * x[tmask] + ux * y[tmask]
        margin = 0.5 * sp_ * (1 - 1e-9)
        k0 = int(np.ceil((lat.min() - margin) / sp_))
        k1 = int(np.floor((lat.max() + margin) / sp_))
        out += [(ang, k * sp_) for k in range(k0, k1 + 1)]
    return out


def dose_influence(spec: PhantomSpec, labels=None) -> np.ndarray:
    if labels is None:
        labels = label_map(spec)
    x, y = voxel_centers(spec)
    box = (x.min(), x.max(), y.min(), y.max())
    cols = []
    two_s2 = 2.0 * spec.pencil_sigma ** 2
    for ang, off in beamlets(spec, labels):
        th = np.radians(ang)
        ux, uy = -np.cos(th), -np.sin(th)
        depth = _depth(x, y, ux, uy, box)
        lat = -uy * x + ux * y
        cols.append(np.exp(-spec.attenuation * depth) * np.exp(-((lat - off) ** 2) / two_s2))
    D = np.stack(cols, axis=1)
    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed)
        D = D * (1.0 + spec.noise * rng.uniform(-1.0, 1.0, D.shape))
    D[D < spec.cutoff] = 0.0
    return np.clip(D, 0.0, 1.0)


def generate(spec: PhantomSpec) -> PlanProblem:
    labels = label_map(spec)
    structs = []
    for i, s in enumerate(spec.shapes):
        vox = np.flatnonzero(labels == i)
        if vox.size == 0:
            raise PhantomError(f"{s.name}: empty after overlap resolution")
        structs.append(Structure(s.name, s.kind, vox, s.prescribed_dose, Weights(**s.weights)))
    D = dose_influence(spec, labels)
    nx, ny = spec.grid
    return PlanProblem(tuple(structs), D, spec.objectives, (nx, ny, spec.voxel_size))


def mask_pgm(spec: PhantomSpec) -> bytes:
    """Binary PGM of the label map: background 0, shapes spread over 1..255."""
    labels = label_map(spec)
    nx, ny = spec.grid
    n = len(spec.shapes)
    img = np.where(labels < 0, 0, 1 + (labels * (254 // max(n, 1)))).astype(np.uint8)
    img = img.reshape(ny, nx)[::-1]
    return f"P5\n{nx} {ny}\n255\n".encode() + img.tobytes()


# ---------------------------------------------------------------------------
# presets

NINE_BEAMS = tuple(float(a) for a in range(0, 360, 40))
PRESCRIPTION = 36.25


def _rows(*rows):
    return tuple(parse_objective_row(dict(zip(("objective_type", "roi_name", "dose", "weight", "percentage"), r)))
                 for r in rows)


def _pelvis(ptv_r=1.5, rectum=(1.6, 2.6, 225.0, 315.0), bladder=((0.0, 2.6), 1.0),
            femurs=True, bulb=False, nodes=False):
    shapes = [Shape("PTV", "target", "disk", {"center": [0.0, 0.0], "radius": ptv_r})]
    if nodes:
        shapes.append(Shape("PTVNodes", "target", "disk", {"center": [0.0, 2.0], "radius": 0.6}))
    r_in, r_out, t0, t1 = rectum
    shapes.append(Shape("Rectum", "oar", "annulus",
                        {"center": [0.0, 0.0], "r_in": r_in, "r_out": r_out, "theta": [t0, t1]}))
    c, r = bladder
    shapes.append(Shape("Bladder", "oar", "disk", {"center": list(c), "radius": r}))
    if bulb:
        shapes.append(Shape("PenileBulb", "oar", "disk", {"center": [0.0, -3.4], "radius": 0.5}))
    if femurs:
        shapes.append(Shape("FemoralHead_L", "oar", "disk", {"center": [-3.7, 0.0], "radius": 0.8}))
        shapes.append(Shape("FemoralHead_R", "oar", "disk", {"center": [3.7, 0.0], "radius": 0.8}))
    shapes.append(Shape("ptv_ring_0-10mm", "oar", "annulus",
                        {"center": [0.0, 0.0], "r_in": 0.0, "r_out": ptv_r + 1.0}))
    shapes.append(Shape("ptv_ring_10-30mm", "oar", "annulus",
                        {"center": [0.0, 0.0], "r_in": ptv_r + 1.0, "r_out": ptv_r + 3.0}))
    return tuple(shapes)


def _pelvis_objectives(extra=()):
    P = PRESCRIPTION
    return _rows(
        ("Uniform Dose", "PTV", P, 200, None),
        ("Min DVH", "PTV", 0.97 * P, 100, 100),
        ("Min DVH", "PTV", 0.99 * P, 100, 95),
        ("Max Dose", "PTV", 1.04 * P, 100, None),
        ("Max DVH", "Rectum", P, 5, 100),
        ("Max DVH", "Rectum", 0.8 * P, 5, 20),
        ("Mean Dose", "Rectum", None, 1, None),
        ("Max DVH", "Bladder", P, 1, 100),
        ("Mean Dose", "Bladder", None, 4, None),
        ("Max DVH", "ptv_ring_0-10mm", P, 1, 100),
        ("Mean Dose", "ptv_ring_0-10mm", None, 2, None),
        ("Mean Dose", "ptv_ring_10-30mm", None, 2, None),
        *extra,
    )


def preset(name: str) -> PhantomSpec:
    """Built-in phantoms P1-P4, loosely following four pelvic structure rosters."""
    key = name.lower()
    femur = (("Max DVH", "FemoralHead_L", 0.6 * PRESCRIPTION, 1, 100),
             ("Max DVH", "FemoralHead_R", 0.6 * PRESCRIPTION, 1, 100))
    common = dict(grid=(40, 40), voxel_size=0.25, beams=NINE_BEAMS, attenuation=0.05,
                  pencil_sigma=0.3, beamlet_spacing=0.5, noise=0.02)
    if key == "p1":
        shapes = _pelvis(bulb=True)
        objs = _pelvis_objectives(femur + (("Max DVH", "PenileBulb", 0.4 * PRESCRIPTION, 1, 100),))
        return PhantomSpec(shapes=shapes, objectives=objs, seed=1, **common)
    if key == "p2":
        shapes = _pelvis()
        return PhantomSpec(shapes=shapes, objectives=_pelvis_objectives(femur), seed=2, **common)
    if key == "p3":
        shapes = _pelvis(bladder=((0.0, 3.2), 0.9), nodes=True)
        nodes = (("Uniform Dose", "PTVNodes", 0.8 * PRESCRIPTION, 100, None),
                 ("Min DVH", "PTVNodes", 0.75 * PRESCRIPTION, 100, 90))
        return PhantomSpec(shapes=shapes, objectives=_pelvis_objectives(femur + nodes), seed=3, **common)
    if key == "p4":
        shapes = _pelvis(rectum=(1.55, 2.4, 210.0, 330.0), bulb=True)
        objs = _pelvis_objectives(femur + (("Max DVH", "PenileBulb", 0.4 * PRESCRIPTION, 1, 100),))
        return PhantomSpec(shapes=shapes, objectives=objs, seed=4, **common)
    raise PhantomError(f"unknown preset {name!r}; choose p1, p2, p3 or p4")


def load_spec(path) -> PhantomSpec:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PhantomError(f"{path}: invalid JSON ({exc})") from None
    return PhantomSpec.from_dict(data)
