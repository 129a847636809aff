"""Scenario descriptions and their safety-oriented projections.

A scene is summarized as a flat set of named real-valued attributes.  The
default encoding splits the image into a grid of cells and records, per
cell, whether any object sits there and whether a *large* (close-by, hence
safety-relevant) object sits there.  Detector outputs are rewritten into
that same attribute vocabulary so real and synthetic predictions can be
compared attribute-by-attribute.
"""

from __future__ import annotations

import fnmatch
import math
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Iterator, Mapping

if TYPE_CHECKING:
    from .dataset import GroundTruthObject
    from .fidelity import DetectionSet

_CELL_NEAR_RE = re.compile(r"^cell_(\d+)_(\d+)_near$")
_CELL_ANY_RE = re.compile(r"^cell_(\d+)_(\d+)_any$")


@dataclass(frozen=True)
class Attribute:
    """A single named semantic attribute; binary attributes use 0.0/1.0."""

    name: str
    value: float

    def __post_init__(self):
        if not self.name:
            raise ValueError("attribute name must be non-empty")
        if not math.isfinite(self.value):
            raise ValueError(f"attribute {self.name!r} has non-finite value")


class ScenarioDescription:
    """An ordered name -> value map; iteration is lexicographic by name."""

    __slots__ = ("_attrs",)

    def __init__(self, attributes: Mapping[str, float] | Iterable[tuple[str, float]] = ()):
        items = attributes.items() if isinstance(attributes, Mapping) else attributes
        attrs: dict[str, float] = {}
        for name, value in items:
            Attribute(name, float(value))  # validates
            if name in attrs:
                raise ValueError(f"duplicate attribute name: {name!r}")
            attrs[name] = float(value)
        self._attrs = {name: attrs[name] for name in sorted(attrs)}

    def names(self) -> tuple[str, ...]:
        return tuple(self._attrs)

    def items(self) -> Iterator[tuple[str, float]]:
        return iter(self._attrs.items())

    def get(self, name: str, default: float | None = None) -> float | None:
        return self._attrs.get(name, default)

    def to_dict(self) -> dict[str, float]:
        return dict(self._attrs)

    def __getitem__(self, name: str) -> float:
        return self._attrs[name]

    def __contains__(self, name: str) -> bool:
        return name in self._attrs

    def __len__(self) -> int:
        return len(self._attrs)

    def __iter__(self) -> Iterator[str]:
        return iter(self._attrs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScenarioDescription):
            return NotImplemented
        return self._attrs == other._attrs

    def __hash__(self) -> int:
        return hash(tuple(self._attrs.items()))

    def __repr__(self) -> str:
        inner = ", ".join(f"({n!r}, {v})" for n, v in self._attrs.items())
        return f"ScenarioDescription([{inner}])"


def _matches_any(name: str, patterns: Iterable[str]) -> bool:
    return any(fnmatch.fnmatchcase(name, p) for p in patterns)


@dataclass(frozen=True)
class AttributeSelector:
    """Configuration for attribute selection and the grid-cell encoding.

    ``pia_names`` are fnmatch-style patterns for attributes a perception
    unit can infer at all; ``sia_names`` select the safety-influencing
    subset of those.  ``passthrough_names`` are concrete names that are
    never rewritten from detector output (scene conditions like "rain").
    ``named_kinds`` assigns existence semantics to non-cell attributes so
    they can be recomputed from detections: "near" means a detection with
    bbox area >= ``area_threshold`` exists, "far" means one below the
    threshold exists, "any" means any detection exists.
    """

    grid_rows: int = 3
    grid_cols: int = 4
    area_threshold: float = 2000.0
    score_threshold: float = 0.5
    pia_names: tuple[str, ...] = ("cell_*",)
    sia_names: tuple[str, ...] = ("cell_*_near",)
    passthrough_names: tuple[str, ...] = ()
    named_kinds: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("grid must have at least one cell")
        if self.area_threshold < 0:
            raise ValueError("area_threshold must be >= 0")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must be in [0, 1]")
        # Literal (wildcard-free) sia patterns must be covered by pia;
        # wildcard patterns are enforced dynamically by sia() refining pia().
        for pattern in self.sia_names:
            if not any(ch in pattern for ch in "*?[") and not _matches_any(
                pattern, self.pia_names
            ):
                raise ValueError(f"sia name {pattern!r} not covered by pia names")
        for name in self.passthrough_names:
            if _matches_any(name, self.pia_names):
                raise ValueError(f"passthrough name {name!r} collides with pia names")
        for kind in dict(self.named_kinds).values():
            if kind not in ("near", "far", "any"):
                raise ValueError(f"unknown attribute kind: {kind!r}")

    def cell_index(self, cx: float, cy: float, image_size: tuple[float, float]) -> tuple[int, int]:
        """Grid cell holding point (cx, cy); floor binning, far edges clamp in."""
        width, height = image_size
        col = min(int(math.floor(cx * self.grid_cols / width)), self.grid_cols - 1)
        row = min(int(math.floor(cy * self.grid_rows / height)), self.grid_rows - 1)
        return max(row, 0), max(col, 0)

    def cell_names(self) -> list[str]:
        names = []
        for r in range(self.grid_rows):
            for c in range(self.grid_cols):
                names.append(f"cell_{r}_{c}_near")
                names.append(f"cell_{r}_{c}_any")
        return names

    def to_json_dict(self) -> dict:
        out = {
            "grid_rows": self.grid_rows,
            "grid_cols": self.grid_cols,
            "area_threshold": self.area_threshold,
            "score_threshold": self.score_threshold,
            "passthrough": list(self.passthrough_names),
        }
        if self.pia_names != ("cell_*",):
            out["pia"] = list(self.pia_names)
        if self.sia_names != ("cell_*_near",):
            out["sia"] = list(self.sia_names)
        if self.named_kinds:
            out["kinds"] = dict(self.named_kinds)
        return out

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "AttributeSelector":
        kwargs = {}
        if "grid_rows" in data:
            kwargs["grid_rows"] = int(data["grid_rows"])
        if "grid_cols" in data:
            kwargs["grid_cols"] = int(data["grid_cols"])
        if "area_threshold" in data:
            kwargs["area_threshold"] = float(data["area_threshold"])
        if "score_threshold" in data:
            kwargs["score_threshold"] = float(data["score_threshold"])
        if "passthrough" in data:
            kwargs["passthrough_names"] = tuple(data["passthrough"])
        if "pia" in data:
            kwargs["pia_names"] = tuple(data["pia"])
        if "sia" in data:
            kwargs["sia_names"] = tuple(data["sia"])
        if "kinds" in data:
            kwargs["named_kinds"] = dict(data["kinds"])
        return cls(**kwargs)


def pia(sd: ScenarioDescription, sel: AttributeSelector) -> ScenarioDescription:
    """Project onto the attributes the perception unit can infer."""
    return ScenarioDescription(
        (n, v) for n, v in sd.items() if _matches_any(n, sel.pia_names)
    )


def sia(sd: ScenarioDescription, sel: AttributeSelector) -> ScenarioDescription:
    """Project onto the safety-influencing attributes; always a subset of pia."""
    return ScenarioDescription(
        (n, v) for n, v in pia(sd, sel).items() if _matches_any(n, sel.sia_names)
    )


def encode_ground_truth(
    objects: Iterable["GroundTruthObject"],
    image_size: tuple[float, float],
    sel: AttributeSelector,
    extra: ScenarioDescription | None = None,
) -> ScenarioDescription:
    """Encode labeled objects as grid-cell occupancy attributes.

    For every cell (r, c), ``cell_r_c_near`` is 1 iff a non-don't-care
    object with bbox area >= ``sel.area_threshold`` has its bbox center in
    the cell, and ``cell_r_c_any`` is 1 iff any non-don't-care object's
    center lies there.  ``extra`` attributes are appended verbatim.
    """
    width, height = image_size
    if width <= 0 or height <= 0:
        raise ValueError(f"image size must be positive, got {image_size}")
    values = {name: 0.0 for name in sel.cell_names()}
    for obj in objects:
        if obj.dont_care:
            continue
        box = obj.bbox.clamped(width, height)
        cx, cy = box.center
        row, col = sel.cell_index(cx, cy, image_size)
        values[f"cell_{row}_{col}_any"] = 1.0
        if box.area >= sel.area_threshold:
            values[f"cell_{row}_{col}_near"] = 1.0
    if extra is not None:
        for name, value in extra.items():
            if name in values:
                raise ValueError(f"extra attribute {name!r} collides with a cell attribute")
            values[name] = value
    return ScenarioDescription(values)


def _existence(dets, sel: AttributeSelector, kind: str) -> float:
    for det in dets:
        if kind == "near" and det.bbox.area < sel.area_threshold:
            continue
        if kind == "far" and det.bbox.area >= sel.area_threshold:
            continue
        return 1.0
    return 0.0


def inter(
    dets: "DetectionSet",
    sd: ScenarioDescription,
    sel: AttributeSelector,
    image_size: tuple[float, float],
) -> ScenarioDescription:
    """Rewrite detector output into the attribute vocabulary of ``sd``.

    Every pia attribute is recomputed from the detections (only those at or
    above ``sel.score_threshold`` count); everything else is copied from
    ``sd`` unchanged, since the perception unit cannot observe it.
    """
    kept = [d for d in dets.detections if d.score >= sel.score_threshold]
    cells_near: set[tuple[int, int]] = set()
    cells_any: set[tuple[int, int]] = set()
    for det in kept:
        cx, cy = det.bbox.center
        cell = sel.cell_index(cx, cy, image_size)
        cells_any.add(cell)
        if det.bbox.area >= sel.area_threshold:
            cells_near.add(cell)

    values: dict[str, float] = {}
    for name, value in sd.items():
        if not _matches_any(name, sel.pia_names):
            values[name] = value
            continue
        m = _CELL_NEAR_RE.match(name)
        if m:
            cell = (int(m.group(1)), int(m.group(2)))
            values[name] = 1.0 if cell in cells_near else 0.0
            continue
        m = _CELL_ANY_RE.match(name)
        if m:
            cell = (int(m.group(1)), int(m.group(2)))
            values[name] = 1.0 if cell in cells_any else 0.0
            continue
        kind = dict(sel.named_kinds).get(name, "any")
        values[name] = _existence(kept, sel, kind)
    return ScenarioDescription(values)


def safety_similar(
    sd: ScenarioDescription,
    dets_a: "DetectionSet",
    dets_b: "DetectionSet",
    sel: AttributeSelector,
    image_size: tuple[float, float],
) -> bool:
    """True iff both detection sets induce identical safety-influencing attributes."""
    a = sia(inter(dets_a, sd, sel, image_size), sel)
    b = sia(inter(dets_b, sd, sel, image_size), sel)
    return a == b


def attr_loss(kind: str, a: ScenarioDescription, b: ScenarioDescription) -> float:
    """Attribute-level loss between two descriptions over the same name set.

    ``neq`` is 1.0 when the descriptions differ at all, else 0.0; ``l1``
    sums absolute value differences.
    """
    if a.names() != b.names():
        only_a = sorted(set(a.names()) - set(b.names()))
        only_b = sorted(set(b.names()) - set(a.names()))
        raise ValueError(
            f"attribute name sets differ (only in first: {only_a}, only in second: {only_b})"
        )
    if kind == "neq":
        return 0.0 if a == b else 1.0
    if kind == "l1":
        return float(sum(abs(a[n] - b[n]) for n in a.names()))
    raise ValueError(f"unknown loss kind: {kind!r}")
