"""Planar rigid transforms and oriented BEV boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

TWO_PI = 2.0 * math.pi
# slack on the inclusive inside-test so cell centres that sit on a box edge up
# to float round-off (e.g. -38.4 + 97.5 * 0.4) count as inside
BOUNDARY_EPS = 1e-9


def wrap_angle(a: float) -> float:
    """Wrap into [-pi, pi); pi itself maps to -pi."""
    w = math.fmod(a + math.pi, TWO_PI)
    if w < 0:
        w += TWO_PI
    w -= math.pi
    # fmod can land exactly on +pi after the shift for inputs just below -pi
    return -math.pi if w >= math.pi else w


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @classmethod
    def identity(cls) -> Pose2:
        return cls(0.0, 0.0, 0.0)

    def apply(self, px: float, py: float) -> tuple[float, float]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return c * px - s * py + self.x, s * px + c * py + self.y

    def inverse(self) -> Pose2:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw)


def pose_compose(a: Pose2, b: Pose2) -> Pose2:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    x, y = a.apply(b.x, b.y)
    return Pose2(x, y, a.yaw + b.yaw)


def pose_inverse(p: Pose2) -> Pose2:
    return p.inverse()


@dataclass(frozen=True)
class BoxBEV:
    """Oriented box on the ground plane.

    ``l`` is the extent along the heading ``yaw``, ``w`` the lateral extent.
    """

    x: float
    y: float
    w: float
    l: float
    yaw: float
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def valid(self) -> bool:
        return self.w > 0 and self.l > 0 and 0.0 <= self.score <= 1.0

    @property
    def area(self) -> float:
        return self.w * self.l

    def corners(self) -> list[tuple[float, float]]:
        """Counter-clockwise corners."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2, self.w / 2
        out = []
        for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
            out.append((self.x + c * dx - s * dy, self.y + s * dx + c * dy))
        return out

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.x, self.y, self.w, self.l, self.yaw, self.score)


def transform_box(b: BoxBEV, t: Pose2) -> BoxBEV:
    x, y = t.apply(b.x, b.y)
    return replace(b, x=x, y=y, yaw=b.yaw + t.yaw)


def point_in_box(px: float, py: float, b: BoxBEV) -> bool:
    """Inclusive containment test in the box-local frame."""
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    dx, dy = px - b.x, py - b.y
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return abs(lx) <= b.l / 2 + BOUNDARY_EPS and abs(ly) <= b.w / 2 + BOUNDARY_EPS


def _clip_polygon(subject: list[tuple[float, float]], clip: list[tuple[float, float]]):
    """Sutherland-Hodgman clip of ``subject`` against convex CCW ``clip``."""
    output = subject
    cp1 = clip[-1]
    for cp2 in clip:
        if not output:
            break
        ex, ey = cp2[0] - cp1[0], cp2[1] - cp1[1]

        def side(p):
            return ex * (p[1] - cp1[1]) - ey * (p[0] - cp1[0])

        inputs, output = output, []
        s = inputs[-1]
        s_side = side(s)
        for e in inputs:
            e_side = side(e)
            if e_side >= 0:
                if s_side < 0:
                    output.append(_intersect(s, e, s_side, e_side))
                output.append(e)
            elif s_side >= 0:
                output.append(_intersect(s, e, s_side, e_side))
            s, s_side = e, e_side
        cp1 = cp2
    return output


def _intersect(s, e, s_side, e_side):
    t = s_side / (s_side - e_side)
    return (s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1]))


def polygon_area(poly: Sequence[tuple[float, float]]) -> float:
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return abs(acc) / 2


def rotated_iou(a: BoxBEV, b: BoxBEV) -> float:
    area_a, area_b = a.area, b.area
    if area_a <= 0 or area_b <= 0:
        return 0.0
    # cheap reject on bounding circles
    ra = math.hypot(a.w, a.l) / 2
    rb = math.hypot(b.w, b.l) / 2
    if math.hypot(a.x - b.x, a.y - b.y) > ra + rb:
        return 0.0
    inter = polygon_area(_clip_polygon(a.corners(), b.corners()))
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def nms_bev(boxes: Sequence[BoxBEV], iou_threshold: float) -> list[BoxBEV]:
    """Greedy NMS; candidates are visited by (score desc, input index asc)."""
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept: list[BoxBEV] = []
    for i in order:
        b = boxes[i]
        if all(rotated_iou(b, k) <= iou_threshold for k in kept):
            kept.append(b)
    return kept


def format_boxes(boxes: Iterable[BoxBEV]) -> str:
    return "".join(" ".join(repr(float(v)) for v in b.as_tuple()) + "\n" for b in boxes)


class BoxParseError(ValueError):
    def __init__(self, lineno: int, line: str, reason: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {reason}: {line.strip()!r}")


def parse_boxes(text: str) -> list[BoxBEV]:
    """Parse ``x y w l yaw score`` lines. Blank lines and ``#`` comments are skipped."""
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 6:
            raise BoxParseError(lineno, line, f"expected 6 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise BoxParseError(lineno, line, "non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise BoxParseError(lineno, line, "non-finite field")
        box = BoxBEV(*vals)
        if not box.valid:
            raise BoxParseError(lineno, line, "extents must be positive and score in [0, 1]")
        boxes.append(box)
    return boxes


def read_boxes(path: str | Path) -> list[BoxBEV]:
    return parse_boxes(Path(path).read_text())
