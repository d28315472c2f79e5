import pytest

from perovnet.sampling import OPAQUE_BOX, TRANSPARENT_BOX
from perovnet.stacks import StackFileError, load_stack_file, parse_stack_text, preset, resolve_stack

GOOD = """[stack]
active_layer = B
dual_side = no
layers =
    A  glass  10  20   # comment
    B  Au     30  40
"""


def test_preset_boxes():
    t, o = preset("transparent"), preset("opaque")
    assert t.box == TRANSPARENT_BOX and t.dual_side and t.channels == 2
    assert o.box == OPAQUE_BOX and not o.dual_side and o.channels == 1
    assert t.labels[t.active_index] == "PerovHMv2"


def test_parse_minimal():
    s = parse_stack_text(GOOD)
    assert s.labels == ("A", "B") and s.materials == ("glass", "Au")
    assert s.box.lower == (10, 30) and s.active_index == 1
    assert s.incident_medium == "air" and s.thicknesses is None


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[other]\nx=1\n", "missing \\[stack\\]"),
        ("[stack]\nactive_layer = A\n", "layers"),
        (GOOD.replace("A  glass  10  20", "A  glass  10"), "4 or 5 columns"),
        (GOOD.replace("10  20", "10  x"), "bad number"),
        (GOOD.replace("B  Au", "A  Au"), "unique"),
        (GOOD.replace("active_layer = B", "active_layer = Z"), "not a layer label"),
        (GOOD.replace("10  20", "20  10"), "lower"),
        (GOOD.replace("30  40", "30  40  35"), "all layers or none"),
        ("[stack]\nactive_layer = A\nlayers =\n", "no layers"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(StackFileError, match=fragment):
        parse_stack_text(text)


def test_round_trip_with_thicknesses(tmp_path):
    s = parse_stack_text(GOOD.replace("10  20", "10  20  12.5").replace("30  40", "30  40  33.25"))
    assert s.thicknesses == (12.5, 33.25)
    p = tmp_path / "d.stack"
    p.write_text(s.to_text())
    assert load_stack_file(p) == s
    assert resolve_stack(str(p)) == s


def test_instantiate(library):
    s = parse_stack_text(GOOD)
    with pytest.raises(StackFileError, match="no thicknesses"):
        s.instantiate(library)
    st = s.instantiate(library, [15, 35])
    assert st.thicknesses.tolist() == [15, 35] and st.active_index == 1
    bad = parse_stack_text(GOOD.replace("Au", "Unobtainium"))
    with pytest.raises(StackFileError, match="Unobtainium"):
        bad.instantiate(library, [15, 35])


def test_unknown_preset_and_missing_file(tmp_path):
    with pytest.raises(StackFileError, match="preset"):
        preset("bifacial")
    with pytest.raises(StackFileError, match="cannot read"):
        resolve_stack(str(tmp_path / "nope.stack"))
