"""SVG rendering of ranked sequential patterns.

One horizontal stacked bar per pattern: segment widths share a common
seconds scale and follow the exemplar's spell durations, fills come from a
fixed per-category palette, and bar heights are proportional to pattern
weight. Output is standalone SVG 1.1 built via ElementTree, so documents
are well-formed by construction and byte-stable across runs.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET

from .categories import DEFAULT_CATALOG, CategoryCatalog
from .errors import DataValidationError
from .patterns import PatternCatalog

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5",
    "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
)

MARGIN_LEFT = 60.0
MARGIN_RIGHT = 200.0
MARGIN_TOP = 30.0
MARGIN_BOTTOM = 50.0
PLOT_WIDTH = 640.0
BAR_GAP = 6.0
MAX_BAR_HEIGHT = 48.0
MIN_BAR_HEIGHT = 3.0


def category_color(category: str, catalog: CategoryCatalog = DEFAULT_CATALOG) -> str:
    return PALETTE[catalog.index(category) % len(PALETTE)]


def render_pattern_plot(
    catalog_result: PatternCatalog,
    top_n: int,
    catalog: CategoryCatalog = DEFAULT_CATALOG,
) -> str:
    """Render the top-N patterns as an SVG document string."""
    if not catalog_result.patterns:
        raise DataValidationError("cannot render an empty pattern catalog")
    if top_n < 1 or top_n > len(catalog_result.patterns):
        raise DataValidationError(
            f"top_n={top_n} out of range 1..{len(catalog_result.patterns)}"
        )
    patterns = catalog_result.patterns[:top_n]

    max_weight = max(p.weight for p in patterns)
    max_duration = max(p.exemplar.total_duration_s for p in patterns)
    heights = [max(MAX_BAR_HEIGHT * p.weight / max_weight, MIN_BAR_HEIGHT) for p in patterns]
    total_height = MARGIN_TOP + sum(heights) + BAR_GAP * (len(patterns) - 1) + MARGIN_BOTTOM
    used_categories = sorted({s for p in patterns for s in p.exemplar.states}, key=catalog.index)
    width = MARGIN_LEFT + PLOT_WIDTH + MARGIN_RIGHT

    svg = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "version": "1.1",
            "width": f"{width:.0f}",
            "height": f"{total_height:.0f}",
            "viewBox": f"0 0 {width:.0f} {total_height:.0f}",
        },
    )
    ET.SubElement(svg, "title").text = "Top sequential patterns"

    def text(parent, x, y, content, size=10, anchor="start", fill="#000000"):
        el = ET.SubElement(
            parent,
            "text",
            {
                "x": f"{x:.1f}",
                "y": f"{y:.1f}",
                "font-size": str(size),
                "font-family": "sans-serif",
                "text-anchor": anchor,
                "fill": fill,
            },
        )
        el.text = content
        return el

    y = MARGIN_TOP
    for rank, (pattern, bar_h) in enumerate(zip(patterns, heights), start=1):
        text(svg, MARGIN_LEFT - 8, y + bar_h / 2 + 3, f"#{rank}", anchor="end")
        x = MARGIN_LEFT
        for state, dur in pattern.exemplar.spells:
            seg_w = PLOT_WIDTH * dur / max_duration
            ET.SubElement(
                svg,
                "rect",
                {
                    "x": f"{x:.2f}",
                    "y": f"{y:.2f}",
                    "width": f"{seg_w:.2f}",
                    "height": f"{bar_h:.2f}",
                    "fill": category_color(state, catalog),
                    "stroke": "#ffffff",
                    "stroke-width": "0.5",
                },
            )
            if seg_w >= 26 and bar_h >= 9:
                text(
                    svg,
                    x + seg_w / 2,
                    y + bar_h / 2 + 3,
                    f"{dur:.0f}s",
                    size=8,
                    anchor="middle",
                    fill="#ffffff",
                )
            x += seg_w
        text(svg, x + 6, y + bar_h / 2 + 3, f"w={pattern.weight:g}", size=8, fill="#555555")
        y += bar_h + BAR_GAP

    # Time axis with five ticks on the common seconds scale.
    axis_y = y - BAR_GAP + 12
    ET.SubElement(
        svg,
        "line",
        {
            "x1": f"{MARGIN_LEFT:.1f}",
            "y1": f"{axis_y:.1f}",
            "x2": f"{MARGIN_LEFT + PLOT_WIDTH:.1f}",
            "y2": f"{axis_y:.1f}",
            "stroke": "#333333",
            "stroke-width": "1",
        },
    )
    for i in range(6):
        tx = MARGIN_LEFT + PLOT_WIDTH * i / 5
        ET.SubElement(
            svg,
            "line",
            {
                "x1": f"{tx:.1f}",
                "y1": f"{axis_y:.1f}",
                "x2": f"{tx:.1f}",
                "y2": f"{axis_y + 4:.1f}",
                "stroke": "#333333",
                "stroke-width": "1",
            },
        )
        text(svg, tx, axis_y + 14, f"{max_duration * i / 5:.0f}", size=8, anchor="middle")
    text(svg, MARGIN_LEFT + PLOT_WIDTH / 2, axis_y + 26, "seconds", size=9, anchor="middle")

    legend_x = MARGIN_LEFT + PLOT_WIDTH + 20
    text(svg, legend_x, MARGIN_TOP - 8, "Categories", size=10)
    for i, cat in enumerate(used_categories):
        ly = MARGIN_TOP + i * 16
        ET.SubElement(
            svg,
            "rect",
            {
                "x": f"{legend_x:.1f}",
                "y": f"{ly:.1f}",
                "width": "12",
                "height": "12",
                "fill": category_color(cat, catalog),
            },
        )
        text(svg, legend_x + 18, ly + 10, cat, size=9)

    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(svg, encoding="unicode")
