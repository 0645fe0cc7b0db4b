import json

import pytest
from hypothesis import given, strategies as st

from predscene.dsl import (
    ProgramSyntaxError,
    Relation,
    analyze_solvedness,
    parse_program,
    physical_subjects,
    serialize_program,
    validate_grammar,
)


def kinds(program_json, catalog=None):
    return [i.kind for i in validate_grammar(parse_program(json.dumps(program_json)), catalog)]


def test_parse_listing_style_entry():
    p = parse_program('[["laptop_0","a slim silver laptop"],["laptop_0","PLACE-ON-BASE","root",{"x":0.0,"y":0.0}]]')
    assert len(p.descriptions) == 1 and len(p.statements) == 1
    assert p.statements[0].rel is Relation.PLACE_ON_BASE


def test_parse_empty():
    p = parse_program("[]")
    assert p.descriptions == () and p.statements == ()


@pytest.mark.parametrize("text", ['[["a","b","c"]]', "{}", "[1]", "not json"])
def test_parse_errors(text):
    with pytest.raises(ProgramSyntaxError):
        parse_program(text)


def test_example_program_valid(example_program, demo_catalog):
    assert validate_grammar(parse_program(example_program), demo_catalog) == []


def test_place_on_root():
    assert "PlaceOnRoot" in kinds([["cup_0", "a cup"], ["cup_0", "PLACE-ON", "root", {}]])


def test_forward_reference():
    prog = [["cup_0", "a cup"], ["cup_0", "PLACE-ON-BASE", "root", {}], ["cup_0", "LEFT-OF", "bottle_9", {}]]
    assert "ForwardReference" in kinds(prog)


def test_unknown_relation_and_param():
    prog = [["cup_0", "a cup"], ["cup_0", "HOVER", "root", {}], ["cup_0", "LEFT-OF", "root", {"dist": 1}]]
    k = kinds(prog)
    assert "UnknownRelation" in k and "UnknownParam" in k


def test_non_contiguous_segment():
    prog = [
        ["a_0", "a"], ["a_0", "PLACE-ON-BASE", "root", {"x": 0, "y": 0}],
        ["b_0", "b"], ["b_0", "PLACE-ON-BASE", "root", {"x": 0.2, "y": 0}],
        ["a_0", "FACING-FRONT", "root", {}],
    ]
    assert "NonContiguousSegment" in kinds(prog)


def test_place_in_unknown_category(small_catalog):
    prog = [["plate_0", "a plate"], ["plate_0", "PLACE-ON-BASE", "root", {"x": 0, "y": 0}],
            [[["xylophone", 2]], "PLACE-IN", "plate_0", {}]]
    assert "UnknownCategory" in kinds(prog, small_catalog)


def test_solvedness_partial():
    prog = parse_program(json.dumps([["a_0", "a"], ["a_0", "PLACE-ON-BASE", "root", {}], ["a_0", "FACING-FRONT", "root", {}]]))
    f = analyze_solvedness(prog)["a_0"]
    assert f.height_determined and f.yaw_determined
    assert not f.x_determined and not f.y_determined


def test_solvedness_place_anywhere():
    prog = parse_program(json.dumps([["a_0", "a"], ["a_0", "PLACE-ANYWHERE", "root", {}]]))
    assert analyze_solvedness(prog)["a_0"].fully_solved
    assert physical_subjects(prog) == {"a_0"}


def test_solvedness_full():
    prog = parse_program(json.dumps([
        ["b_0", "b"], ["b_0", "PLACE-ON-BASE", "root", {"x": 0, "y": 0}], ["b_0", "FACING-FRONT", "root", {}],
        ["a_0", "a"], ["a_0", "LEFT-OF", "b_0", {}], ["a_0", "FRONT-OF", "b_0", {}],
        ["a_0", "PLACE-ON-BASE", "root", {}], ["a_0", "RANDOM-ROT", "root", {}],
    ]))
    assert analyze_solvedness(prog).unsolved() == []


def test_copy_group_members_inherit_flags():
    prog = parse_program(json.dumps([
        ["a_0", "a"], ["a_0", "PLACE-ON-BASE", "root", {"x": 0, "y": 0}], ["a_0", "FACING-FRONT", "root", {}],
        ["group_g", "GROUP", ["a_0"], {"anchor": "a_0"}],
        ["group_h", "COPY-GROUP", "group_g", {}],
        ["group_h", "BACK-OF", "group_g", {"distance": 0.1}],
    ]))
    status = analyze_solvedness(prog)
    f = status["a_0-group_h"]
    assert f.x_determined and f.height_determined and f.yaw_determined and not f.y_determined


_ids = st.from_regex(r"[a-z]{1,6}_[0-9]", fullmatch=True)
_rel = st.sampled_from(sorted(r.value for r in Relation))
_param_val = st.one_of(st.floats(-2, 2, allow_nan=False), st.sampled_from(["stable", "unstable", "x_0"]))
_stmt = st.tuples(_ids, _rel, _ids, st.dictionaries(st.sampled_from(["distance", "x", "y", "overlap", "C"]), _param_val, max_size=2))
_desc = st.tuples(_ids, st.text(alphabet="abcdef ", min_size=1, max_size=20))


@given(st.lists(st.one_of(_stmt.map(list), _desc.map(list)), max_size=12))
def test_serialize_round_trip(entries):
    program = parse_program(json.dumps(entries))
    again = parse_program(serialize_program(program))
    assert again.to_json() == program.to_json()
    # Grammar checking never raises on parseable input.
    validate_grammar(again)
