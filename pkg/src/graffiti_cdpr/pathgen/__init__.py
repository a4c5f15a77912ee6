"""From shape inputs and a composition spec to one continuous paint path."""
from graffiti_cdpr.pathgen.compose import (
    CLOSURE_TOL,
    PaintingSpec,
    PlacedShape,
    Placement,
    add_travel_strokes,
    compose,
    order_painting,
    outline_to_polygon,
)
from graffiti_cdpr.pathgen.gml import load_gml, parse_gml
from graffiti_cdpr.pathgen.infill import DEFAULT_LINE_SPACING, decompose, infill, pass_heights
from graffiti_cdpr.pathgen.svg import load_svg_paths, parse_path_data, parse_svg

__all__ = [
    "CLOSURE_TOL", "DEFAULT_LINE_SPACING", "PaintingSpec", "PlacedShape", "Placement",
    "add_travel_strokes", "compose", "decompose", "infill", "load_gml", "load_svg_paths",
    "order_painting", "outline_to_polygon", "parse_gml", "parse_path_data", "parse_svg", "pass_heights",
]
