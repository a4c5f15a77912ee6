"""SVG path-data reader for the M/L/H/V/C/Q/Z subset, with adaptive flattening."""
from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from graffiti_cdpr.geometry import point_segment_distance
from graffiti_cdpr.strokes import Stroke

_TOKEN = re.compile(r"[A-Za-z]|[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_ARITY = {"M": 2, "L": 2, "H": 1, "V": 1, "C": 6, "Q": 4, "Z": 0}
_MAX_DEPTH = 24


def _tokenize(d: str) -> list:
    tokens = []
    for tok in _TOKEN.findall(d.replace(",", " ")):
        if tok.isalpha():
            if tok.upper() not in _ARITY:
                raise ValueError(f"unsupported command {tok}")
            tokens.append(tok)
        else:
            tokens.append(float(tok))
    leftover = _TOKEN.sub(" ", d.replace(",", " ")).strip()
    if leftover:
        raise ValueError(f"cannot parse path data near {leftover[:10]!r}")
    return tokens


def _flatten(ctrl: np.ndarray, tol: float, out: list, depth: int = 0) -> None:
    """Append points (excluding the first) of a Bezier given by ``ctrl``.

    The curve stays inside the hull of its control points, so once every control
    point lies within ``tol`` of the chord the chord is within ``tol`` of the curve.
    """
    a, b = ctrl[0], ctrl[-1]
    if depth >= _MAX_DEPTH or point_segment_distance(ctrl[1:-1], a, b).max() <= tol:
        out.append(b)
        return
    left, right = [ctrl[0]], [ctrl[-1]]
    pts = ctrl
    while len(pts) > 1:
        pts = 0.5 * (pts[:-1] + pts[1:])
        left.append(pts[0])
        right.append(pts[-1])
    _flatten(np.array(left), tol, out, depth + 1)
    _flatten(np.array(right[::-1]), tol, out, depth + 1)


def parse_path_data(d: str, flatten_tol: float, transform=None) -> list:
    """Polylines (one per subpath) for an SVG ``d`` attribute.

    ``transform`` maps (N, 2) user coordinates to output coordinates; it must be
    affine so that Bezier control points can be mapped before flattening.
    """
    if flatten_tol <= 0:
        raise ValueError("flatten_tol must be positive")
    tf = transform or (lambda p: p)
    tokens = _tokenize(d)
    subpaths, current = [], []
    pos = np.zeros(2)
    start = np.zeros(2)
    cmd = None
    i = 0

    def take(n):
        nonlocal i
        vals = tokens[i:i + n]
        if len(vals) < n or any(isinstance(v, str) for v in vals):
            raise ValueError(f"command {cmd} expects {n} numbers")
        i += n
        return np.array(vals, dtype=float)

    def emit(ctrl_user):
        ctrl = tf(np.asarray(ctrl_user, float))
        if len(ctrl) == 2:
            current.append(ctrl[1])
        else:
            _flatten(ctrl, flatten_tol, current)

    while i < len(tokens):
        if isinstance(tokens[i], str):
            cmd = tokens[i]
            i += 1
        elif cmd is None:
            raise ValueError("path data must start with a command")
        up, rel = cmd.upper(), cmd.islower()
        base = pos if rel else np.zeros(2)
        if up == "Z":
            if current:
                closing = tf(start[None])[0]
                if np.any(closing != current[-1]):
                    current.append(closing)
                subpaths.append(current)
                current = []
            pos = start.copy()
            cmd = None
            continue
        if up == "M":
            if len(current) > 1:
                subpaths.append(current)
            pos = base + take(2)
            start = pos.copy()
            current = [tf(pos[None])[0]]
            cmd = "l" if rel else "L"
            continue
        if not current:
            current = [tf(pos[None])[0]]
        if up == "L":
            nxt = base + take(2)
            emit([pos, nxt])
        elif up == "H":
            nxt = np.array([(pos[0] if rel else 0.0) + take(1)[0], pos[1]])
            emit([pos, nxt])
        elif up == "V":
            nxt = np.array([pos[0], (pos[1] if rel else 0.0) + take(1)[0]])
            emit([pos, nxt])
        elif up == "C":
            v = take(6).reshape(3, 2) + base
            nxt = v[2]
            emit([pos, v[0], v[1], v[2]])
        else:  # Q
            v = take(4).reshape(2, 2) + base
            nxt = v[1]
            emit([pos, v[0], v[1]])
        pos = nxt
    if len(current) > 1:
        subpaths.append(current)
    return [np.array(p) for p in subpaths if len(p) > 1]


def _strip_ns(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _viewbox_transform(root: ET.Element):
    vb = root.get("viewBox")
    if not vb:
        return None
    x0, y0, w, h = (float(v) for v in vb.replace(",", " ").split())
    if w <= 0 or h <= 0:
        raise ValueError("viewBox must have positive size")
    s = 1.0 / max(w, h)
    # unit box, y up
    return lambda p: np.column_stack([(p[:, 0] - x0) * s, (y0 + h - p[:, 1]) * s])


def parse_svg(text: str, flatten_tol: float = 1e-3, name: str = "svg") -> dict:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ValueError(f"malformed XML: {exc}") from None
    tf = _viewbox_transform(root)
    shapes = {}
    paths = [el for el in root.iter() if _strip_ns(el.tag) == "path"]
    for k, el in enumerate(paths):
        key = el.get("id") or (name if len(paths) == 1 else f"{name}_{k}")
        polylines = parse_path_data(el.get("d", ""), flatten_tol, tf)
        shapes[key] = [Stroke(p) for p in polylines]
    return shapes


def load_svg_paths(path, flatten_tol: float = 1e-3) -> dict:
    """Strokes per ``<path>`` element (keyed by id).  With a viewBox the drawing is
    normalized so its longer side spans one unit, y pointing up."""
    path = Path(path)
    return parse_svg(path.read_text(), flatten_tol, path.stem)
