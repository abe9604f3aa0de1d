"""Deterministic SVG rendering: well-formedness, geometry, escaping."""

import xml.etree.ElementTree as ET

import pytest

from vortexgraph.svg import (HEIGHT, MARGIN_B, MARGIN_L, MARGIN_R, WIDTH,
                             Axes, box_plot, scatter_plot)


def parse(svg_text):
    root = ET.fromstring(svg_text)
    assert root.tag.endswith("svg")
    return root


def tags(root, name):
    return [el for el in root.iter() if el.tag.split("}")[-1] == name]


class TestAxes:
    def test_pixel_mapping_hits_frame_corners(self):
        ax = Axes((0.0, 10.0), (-1.0, 1.0), "t", "x", "y")
        assert ax.px(0.0) == MARGIN_L
        assert ax.px(10.0) == WIDTH - MARGIN_R
        assert ax.py(-1.0) == HEIGHT - MARGIN_B
        assert ax.py(1.0) > 0  # top of frame, below the title band

    def test_render_is_well_formed(self):
        ax = Axes((0.0, 1.0), (0.0, 1.0), "title", "x", "y")
        parse(ax.render())


class TestScatterPlot:
    def test_one_circle_per_point(self):
        svg = scatter_plot([1, 2, 3], [4, 5, 6], "t", "x", "y")
        root = parse(svg)
        assert len(tags(root, "circle")) == 3

    def test_fit_line_dashed_and_optional(self):
        with_fit = scatter_plot([1, 2, 3], [1, 2, 2], "t", "x", "y")
        without = scatter_plot([1, 2, 3], [1, 2, 2], "t", "x", "y",
                               fit_line=False)
        assert "stroke-dasharray" in with_fit
        assert "stroke-dasharray" not in without

    def test_constant_xs_skip_the_fit_line(self):
        svg = scatter_plot([2, 2, 2], [1, 2, 3], "t", "x", "y")
        assert "stroke-dasharray" not in svg
        parse(svg)

    def test_single_point_renders(self):
        parse(scatter_plot([5.0], [5.0], "t", "x", "y"))

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="nothing to plot"):
            scatter_plot([], [], "t", "x", "y")

    def test_caption_and_title_escaped(self):
        svg = scatter_plot([1, 2], [3, 4], "a < b & c", "x", "y",
                           caption="p < 0.05")
        root = parse(svg)
        texts = [el.text for el in tags(root, "text")]
        assert "a < b & c" in texts
        assert "p < 0.05" in texts
        assert "<b" not in svg.replace("<body", "")

    def test_deterministic(self):
        a = scatter_plot([1.5, 2.5], [0.1, 0.9], "t", "x", "y")
        b = scatter_plot([1.5, 2.5], [0.1, 0.9], "t", "x", "y")
        assert a == b


class TestBoxPlot:
    def test_one_box_per_nonempty_group(self):
        svg = box_plot([("a", [1, 2, 3]), ("b", [2, 3, 4])], "t", "x", "y")
        root = parse(svg)
        boxes = [r for r in tags(root, "rect")
                 if r.get("fill") not in ("white", "none")]
        assert len(boxes) == 2

    def test_empty_group_keeps_label_only(self):
        svg = box_plot([("a", [1, 2, 3]), ("empty", [])], "t", "x", "y")
        root = parse(svg)
        texts = [el.text for el in tags(root, "text")]
        assert "empty" in texts
        boxes = [r for r in tags(root, "rect")
                 if r.get("fill") not in ("white", "none")]
        assert len(boxes) == 1

    def test_all_empty_rejected(self):
        with pytest.raises(ValueError, match="nothing to plot"):
            box_plot([("a", []), ("b", [])], "t", "x", "y")
        with pytest.raises(ValueError, match="nothing to plot"):
            box_plot([], "t", "x", "y")

    def test_median_line_present(self):
        svg = box_plot([("a", [1.0, 2.0, 9.0])], "t", "x", "y")
        root = parse(svg)
        medians = [ln for ln in tags(root, "line")
                   if ln.get("stroke") == "black" and ln.get("stroke-width")]
        assert len(medians) == 1

    def test_labels_escaped(self):
        svg = box_plot([("<5", [1, 2])], "t", "x", "y")
        parse(svg)
        assert "&lt;5" in svg
