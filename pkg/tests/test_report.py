import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clever.errors import FormatError
from clever.report import bar_chart, line_chart, parse_csv, render, render_file

LINE = "epoch,h_ir,h_ef\n0,-1.0,-1.1\n1,-1.2,-inf\n2,-1.3,-2.0\n"
BAR = "model,Orig,CJ,CJ+Flip,CJ+Ro,CJ+Ro+ET\nir,0.9,0.8,0.8,0.5,0.4\njoint,0.91,0.82,0.8,0.6,0.45\n"


def test_parse_keeps_labels_and_values():
    t = parse_csv(LINE)
    assert t.header == ["epoch", "h_ir", "h_ef"]
    assert t.labels == ["0", "1", "2"]
    assert t.values[1][1] == float("-inf")


@pytest.mark.parametrize("text, needle", [
    ("", "line 1"),
    ("only\n1\n", "line 1"),
    ("a,b\n1,2\n3\n", "line 3"),
    ("a,b\n1,2\n3,x\n", "line 3"),
    ("a,b\n", "line 2"),
    ("a,b\n1,2,3\n", "line 2"),
])
def test_malformed_csv_reports_line(text, needle):
    with pytest.raises(FormatError, match=needle):
        parse_csv(text)


def test_line_chart_needs_numeric_x():
    with pytest.raises(FormatError, match="numeric first column"):
        render(BAR, "line")
    with pytest.raises(FormatError, match="chart kind"):
        render(BAR, "pie")


def test_line_chart_skips_non_finite_points():
    svg = render(LINE, "line")
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<polyline") == 2
    assert svg.count("<circle") == 5  # one -inf point is dropped


def test_bar_chart_one_rect_per_cell():
    svg = bar_chart(parse_csv(BAR), "t")
    # background + 10 bars + 2 legend swatches
    assert len(re.findall(r"<rect ", svg)) == 1 + 10 + 2
    assert "CJ+Ro+ET" in svg and "joint" in svg


def test_render_is_deterministic(tmp_path):
    (tmp_path / "a.csv").write_text(BAR)
    render_file(tmp_path / "a.csv", tmp_path / "a.svg", "bar")
    render_file(tmp_path / "a.csv", tmp_path / "b.svg", "bar")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_labels_are_escaped():
    svg = line_chart(parse_csv("x,a<b&c\n0,1\n1,2\n"))
    assert "a&lt;b&amp;c" in svg


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2), min_size=1, max_size=20))
def test_any_numeric_table_renders(rows):
    text = "x,y,z\n" + "".join(f"{i},{a!r},{b!r}\n" for i, (a, b) in enumerate(rows))
    for kind in ("line", "bar"):
        svg = render(text, kind)
        assert "nan" not in svg and svg.count("<svg") == 1
