"""Graffiti Markup Language (GML) stroke reader."""
from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

from graffiti_cdpr.strokes import Stroke


def _coord(pt: ET.Element, name: str, required: bool = True):
    el = pt.find(name)
    if el is None or el.text is None or not el.text.strip():
        if required:
            raise ValueError(f"missing coordinate element <{name}>")
        return None
    try:
        return float(el.text)
    except ValueError:
        raise ValueError(f"non-numeric <{name}> value {el.text!r}") from None


def parse_gml(text: str, name: str = "gml") -> dict:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ValueError(f"malformed XML: {exc}") from None
    shapes = {}
    tags = root.findall(".//tag") or [root]
    for i, tag in enumerate(tags):
        strokes = []
        for st in tag.iter("stroke"):
            pts, times = [], []
            for pt in st.findall("pt"):
                pts.append((_coord(pt, "x"), _coord(pt, "y")))
                times.append(_coord(pt, "t", required=False))
            has_t = all(t is not None for t in times) and times
            strokes.append(Stroke(pts if pts else [], times if has_t else None))
        shapes[name if len(tags) == 1 else f"{name}_{i}"] = strokes
    return shapes


def load_gml(path) -> dict:
    """One stroke per ``<stroke>``; the shape is named after the file stem."""
    path = Path(path)
    return parse_gml(path.read_text(), path.stem)
