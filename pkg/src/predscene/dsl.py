"""Predicate programs: parsing, grammar checks and solvedness analysis.

The wire format is a JSON array. Two-element entries are retrieval
descriptions ``[object_id, text]``; four-element entries are statements
``[subject, RELATION, reference, params]``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable


class Relation(str, Enum):
    LEFT_OF = "LEFT-OF"
    RIGHT_OF = "RIGHT-OF"
    FRONT_OF = "FRONT-OF"
    BACK_OF = "BACK-OF"
    ALIGN_CENTER_LR = "ALIGN-CENTER-LR"
    ALIGN_CENTER_FB = "ALIGN-CENTER-FB"
    ALIGN_LEFT = "ALIGN-LEFT"
    ALIGN_RIGHT = "ALIGN-RIGHT"
    ALIGN_FRONT = "ALIGN-FRONT"
    ALIGN_BACK = "ALIGN-BACK"
    SYMMETRY_ALONG = "SYMMETRY-ALONG"
    FACING_TO = "FACING-TO"
    FACING_SAME_AS = "FACING-SAME-AS"
    FACING_OPPOSITE_TO = "FACING-OPPOSITE-TO"
    FACING_FRONT = "FACING-FRONT"
    FACING_BACK = "FACING-BACK"
    FACING_LEFT = "FACING-LEFT"
    FACING_RIGHT = "FACING-RIGHT"
    RANDOM_ROT = "RANDOM-ROT"
    ORIENT_BY_RELATIVE_SIDE = "ORIENT-BY-RELATIVE-SIDE"
    PLACE_ON_BASE = "PLACE-ON-BASE"
    PLACE_ON = "PLACE-ON"
    GROUP = "GROUP"
    COPY_GROUP = "COPY-GROUP"
    PLACE_IN = "PLACE-IN"
    PLACE_ANYWHERE = "PLACE-ANYWHERE"
    # Listed among the yaw-determining relations but never defined;
    # evaluated exactly like ORIENT-BY-RELATIVE-SIDE.
    SIDE_SCALE_ALIGN = "SIDE-SCALE-ALIGN"


R = Relation
RELATION_NAMES = {r.value for r in Relation}

POSITIONAL = {R.LEFT_OF, R.RIGHT_OF, R.FRONT_OF, R.BACK_OF}
ALIGNMENT = {R.ALIGN_CENTER_LR, R.ALIGN_CENTER_FB, R.ALIGN_LEFT, R.ALIGN_RIGHT, R.ALIGN_FRONT, R.ALIGN_BACK}
ROTATION = {
    R.FACING_TO, R.FACING_SAME_AS, R.FACING_OPPOSITE_TO, R.FACING_FRONT, R.FACING_BACK,
    R.FACING_LEFT, R.FACING_RIGHT, R.RANDOM_ROT, R.ORIENT_BY_RELATIVE_SIDE, R.SIDE_SCALE_ALIGN,
}
SPECIAL = {R.PLACE_IN, R.PLACE_ANYWHERE}
PHYSICAL = {R.PLACE_ON, R.PLACE_IN, R.PLACE_ANYWHERE}

X_SETTERS = {R.FRONT_OF, R.BACK_OF, R.ALIGN_CENTER_FB, R.ALIGN_FRONT, R.ALIGN_BACK, R.SYMMETRY_ALONG, R.PLACE_ON}
Y_SETTERS = {R.LEFT_OF, R.RIGHT_OF, R.ALIGN_CENTER_LR, R.ALIGN_LEFT, R.ALIGN_RIGHT, R.SYMMETRY_ALONG, R.PLACE_ON}
HEIGHT_SETTERS = {R.PLACE_ON_BASE, R.PLACE_ON}
YAW_SETTERS = ROTATION

ALLOWED_PARAMS: dict[Relation, frozenset[str]] = {r: frozenset() for r in Relation}
ALLOWED_PARAMS.update({
    R.LEFT_OF: frozenset({"distance"}),
    R.RIGHT_OF: frozenset({"distance"}),
    R.FRONT_OF: frozenset({"distance"}),
    R.BACK_OF: frozenset({"distance"}),
    R.SYMMETRY_ALONG: frozenset({"C"}),
    R.PLACE_ON_BASE: frozenset({"x", "y"}),
    R.PLACE_ON: frozenset({"x_offset", "y_offset", "overlap", "stability"}),
    R.GROUP: frozenset({"anchor"}),
})
REQUIRED_PARAMS: dict[Relation, frozenset[str]] = {
    R.SYMMETRY_ALONG: frozenset({"C"}),
    R.GROUP: frozenset({"anchor"}),
}
NUMERIC_PARAMS = {"distance", "x", "y", "x_offset", "y_offset", "overlap"}
STRING_PARAMS = {"C", "anchor", "stability"}

ROOT = "root"
GROUP_PREFIX = "group_"
_OBJECT_ID = re.compile(r"^[A-Za-z][A-Za-z0-9]*(?:[ _][A-Za-z0-9]+)*_[A-Za-z0-9]+$")


class ProgramSyntaxError(ValueError):
    """Malformed JSON or an entry of the wrong arity."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at {position})")
        self.position = position


@dataclass(frozen=True)
class Description:
    object_id: str
    text: str
    index: int  # position in the raw array


@dataclass(frozen=True)
class Statement:
    subject: Any  # str, or a batch spec list of [category, count]
    relation: str
    reference: Any  # str, or member list for GROUP
    params: dict = field(default_factory=dict)
    index: int = 0  # position among statements
    raw_index: int = 0

    @property
    def rel(self) -> Relation | None:
        try:
            return Relation(self.relation)
        except ValueError:
            return None

    @property
    def is_batch(self) -> bool:
        return isinstance(self.subject, list)

    @property
    def subject_key(self) -> str:
        if self.is_batch:
            return json.dumps(self.subject)
        return str(self.subject)

    def to_json(self) -> list:
        return [self.subject, self.relation, self.reference, self.params]


@dataclass(frozen=True)
class PredicateProgram:
    descriptions: tuple[Description, ...] = ()
    statements: tuple[Statement, ...] = ()
    # Raw entry order: ("d", i) or ("s", i).
    order: tuple[tuple[str, int], ...] = ()

    def description_of(self, object_id: str) -> str | None:
        for d in self.descriptions:
            if d.object_id == object_id:
                return d.text
        return None

    def to_json(self) -> list:
        out = []
        for kind, i in self.order:
            if kind == "d":
                d = self.descriptions[i]
                out.append([d.object_id, d.text])
            else:
                out.append(self.statements[i].to_json())
        return out


def parse_program(text: str | list) -> PredicateProgram:
    """Parse the JSON-array wire format into a program.

    Unknown relation names are kept; :func:`validate_grammar` reports them.

    Raises:
        ProgramSyntaxError: malformed JSON, non-array input, or bad arity.
    """
    if isinstance(text, str):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProgramSyntaxError(f"invalid JSON: {exc.msg}", exc.pos) from None
    else:
        data = text
    if not isinstance(data, list):
        raise ProgramSyntaxError("program must be a JSON array", 0)
    descriptions: list[Description] = []
    statements: list[Statement] = []
    order: list[tuple[str, int]] = []
    for pos, entry in enumerate(data):
        if not isinstance(entry, list):
            raise ProgramSyntaxError("entry is not an array", pos)
        if len(entry) == 2:
            oid, desc = entry
            if not isinstance(oid, str) or not isinstance(desc, str):
                raise ProgramSyntaxError("description entries are [id, text] strings", pos)
            order.append(("d", len(descriptions)))
            descriptions.append(Description(oid, desc, pos))
        elif len(entry) == 4:
            subject, relation, reference, params = entry
            if not isinstance(relation, str):
                raise ProgramSyntaxError("relation must be a string", pos)
            if params is None:
                params = {}
            if not isinstance(params, dict):
                raise ProgramSyntaxError("params must be an object", pos)
            if not isinstance(subject, (str, list)):
                raise ProgramSyntaxError("subject must be a string or batch list", pos)
            order.append(("s", len(statements)))
            statements.append(Statement(subject, relation, reference, dict(params), len(statements), pos))
        else:
            raise ProgramSyntaxError(f"entry has arity {len(entry)}; expected 2 or 4", pos)
    return PredicateProgram(tuple(descriptions), tuple(statements), tuple(order))


def serialize_program(program: PredicateProgram, indent: int | None = None) -> str:
    return json.dumps(program.to_json(), indent=indent)


# ---------------------------------------------------------------------------
# Grammar
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrammarIssue:
    kind: str
    statement: int | None
    objects: tuple[str, ...]
    message: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "statement": self.statement, "objects": list(self.objects), "message": self.message}


def _batch_ok(spec) -> bool:
    return (
        isinstance(spec, list)
        and len(spec) > 0
        and all(
            isinstance(p, list) and len(p) == 2 and isinstance(p[0], str) and isinstance(p[1], int)
            and not isinstance(p[1], bool) and p[1] > 0
            for p in spec
        )
    )


def _phase(st: Statement, physical_subjects: set[str]) -> int:
    rel = st.rel
    if rel is R.PLACE_ANYWHERE:
        return 2
    if rel in (R.PLACE_ON, R.PLACE_IN) or (not st.is_batch and st.subject in physical_subjects):
        return 1
    return 0


def validate_grammar(program: PredicateProgram, catalog=None) -> list[GrammarIssue]:
    """Return every grammar issue in ``program``; an empty list means valid.

    ``catalog`` is optional; when given, PLACE-IN batch categories must be
    retrievable from it.
    """
    issues: list[GrammarIssue] = []

    def add(kind, st, objs, msg):
        issues.append(GrammarIssue(kind, None if st is None else st.index, tuple(objs), msg))

    described: dict[str, int] = {}
    for d in program.descriptions:
        if d.object_id in described:
            issues.append(GrammarIssue("DuplicateDescription", None, (d.object_id,), f"{d.object_id} is described twice"))
        described.setdefault(d.object_id, d.index)
        if not _OBJECT_ID.match(d.object_id) or d.object_id.startswith(GROUP_PREFIX):
            issues.append(GrammarIssue(
                "BadIdentifier", None, (d.object_id,),
                f"{d.object_id} does not follow the {{category}}_{{identifier}} naming convention",
            ))
        if not d.text.strip():
            issues.append(GrammarIssue("EmptyDescription", None, (d.object_id,), f"{d.object_id} has an empty description"))

    place_on_subjects = {st.subject for st in program.statements if st.rel is R.PLACE_ON and not st.is_batch}

    known: set[str] = {ROOT}
    groups: dict[str, list[str]] = {}
    seen_phase = 0
    seen_subjects: list[str] = []
    closed_segments: set[str] = set()
    subject_statements: dict[str, list[Statement]] = {}

    for st in program.statements:
        rel = st.rel
        key = st.subject_key
        subj = st.subject
        subject_statements.setdefault(key, []).append(st)

        if seen_subjects and seen_subjects[-1] != key:
            closed_segments.add(seen_subjects[-1])
        if key in closed_segments:
            add("NonContiguousSegment", st, [key], f"statements for {key} are not grouped together")
            closed_segments.discard(key)
        if not seen_subjects or seen_subjects[-1] != key:
            seen_subjects.append(key)

        if rel is None:
            add("UnknownRelation", st, [key], f"unknown relation {st.relation!r}")
            continue

        for name, value in st.params.items():
            if name not in ALLOWED_PARAMS[rel]:
                add("UnknownParam", st, [key], f"{st.relation} does not take parameter {name!r}")
                continue
            if name in NUMERIC_PARAMS:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    add("BadParamValue", st, [key], f"{name} must be a number, got {value!r}")
                elif name == "overlap" and not 0.0 <= value <= 1.0:
                    add("BadParamValue", st, [key], f"overlap must lie in [0, 1], got {value!r}")
                elif name == "distance" and value < 0:
                    add("BadParamValue", st, [key], f"distance must be non-negative, got {value!r}")
            elif name in STRING_PARAMS:
                if not isinstance(value, str):
                    add("BadParamValue", st, [key], f"{name} must be a string, got {value!r}")
                elif name == "stability" and value not in ("stable", "unstable"):
                    add("BadParamValue", st, [key], f"stability must be 'stable' or 'unstable', got {value!r}")
        for name in sorted(REQUIRED_PARAMS.get(rel, ())):
            if name not in st.params:
                add("MissingParam", st, [key], f"{st.relation} requires parameter {name!r}")

        phase = _phase(st, place_on_subjects)
        if phase < seen_phase:
            want = "PLACE-ANYWHERE statements must come last" if seen_phase == 2 else (
                "PLACE-ON statements must come after plain spatial statements"
            )
            add("OrderViolation", st, [key], f"{st.relation} for {key} is out of order: {want}")
        seen_phase = max(seen_phase, phase)

        # Subject checks.
        if st.is_batch:
            if rel is not R.PLACE_IN:
                add("BadSubject", st, [key], "batch lists are only allowed as the subject of PLACE-IN")
            elif not _batch_ok(subj):
                add("BadParamValue", st, [key], "PLACE-IN batch must be [[category, count], ...] with positive counts")
            elif catalog is not None:
                from .catalog import RetrievalFailure, retrieve

                for cat, _n in subj:
                    try:
                        retrieve(catalog, cat)
                    except (RetrievalFailure, ValueError):
                        add("UnknownCategory", st, [cat], f"no asset matches category {cat!r}")
        elif rel is R.GROUP:
            if not subj.startswith(GROUP_PREFIX):
                add("BadIdentifier", st, [subj], f"group name {subj} must start with 'group_'")
            if subj in groups or subj in known:
                add("DuplicateGroup", st, [subj], f"group {subj} is defined more than once")
            members = st.reference if isinstance(st.reference, list) else None
            if members is None or not members or not all(isinstance(m, str) for m in members):
                add("BadReference", st, [subj], "GROUP reference must be a non-empty list of object ids")
                members = []
            for m in members:
                if m not in known or m in groups:
                    add("ForwardReference", st, [subj, m], f"group member {m} was not introduced earlier")
            anchor = st.params.get("anchor")
            if isinstance(anchor, str) and anchor not in members:
                add("BadParamValue", st, [subj], f"anchor {anchor} is not a member of {subj}")
            groups[subj] = [m for m in members if isinstance(m, str)]
            known.add(subj)
            continue
        elif rel is R.COPY_GROUP:
            if not subj.startswith(GROUP_PREFIX):
                add("BadIdentifier", st, [subj], f"group name {subj} must start with 'group_'")
            if subj in groups or subj in known:
                add("DuplicateGroup", st, [subj], f"group {subj} is defined more than once")
            src = st.reference
            if not isinstance(src, str) or src not in groups:
                add("UndefinedGroup", st, [subj, str(src)], f"COPY-GROUP source {src} is not a defined group")
                groups[subj] = []
            else:
                copies = [f"{m}-{subj}" for m in groups[src]]
                groups[subj] = copies
                known.update(copies)
            known.add(subj)
            continue
        else:
            if subj in groups:
                if rel in SPECIAL or rel is R.PLACE_ON or rel is R.PLACE_ON_BASE:
                    add("BadSubject", st, [subj], f"{st.relation} cannot be applied to a group")
            elif subj not in described and subj not in known:
                add("MissingDescription", st, [subj], f"{subj} has no description before its first statement")
            elif subj in described and described[subj] > st.raw_index:
                add("MissingDescription", st, [subj], f"{subj} is described after its first statement")
            if subj == ROOT:
                add("BadSubject", st, [subj], "root cannot be a subject")
            known.add(subj)

        # Reference checks.
        ref = st.reference
        if rel is R.PLACE_ON and ref == ROOT:
            add("PlaceOnRoot", st, [key], f"{key} PLACE-ON root: the reference of PLACE-ON cannot be root")
        elif not isinstance(ref, str):
            add("BadReference", st, [key], f"reference must be an object id, got {ref!r}")
        elif ref != ROOT and ref not in known:
            add("ForwardReference", st, [key, ref], f"{ref} is referenced before it is introduced")
        elif not st.is_batch and ref == subj:
            add("BadReference", st, [key], f"{key} refers to itself")
        c_ref = st.params.get("C")
        if rel is R.SYMMETRY_ALONG and isinstance(c_ref, str) and c_ref not in known:
            add("ForwardReference", st, [key, c_ref], f"{c_ref} is referenced before it is introduced")

    for key, sts in subject_statements.items():
        rels = [s.rel for s in sts]
        specials = [r for r in rels if r in SPECIAL]
        if specials and len(sts) > 1 and not sts[0].is_batch:
            add("SpecialNotAlone", sts[0], [key],
                f"{key} uses {specials[0].value}, which must be the object's only predicate")
        if any(r is R.PLACE_ANYWHERE for r in rels) and key in groups:
            add("BadSubject", sts[0], [key], "PLACE-ANYWHERE cannot be used for a group")
        if R.PLACE_ON in rels:
            clash = [r for r in rels if r in POSITIONAL or r in ALIGNMENT or r is R.PLACE_ON_BASE or r is R.SYMMETRY_ALONG]
            if clash:
                add("PlaceOnConflict", sts[0], [key],
                    f"{key} uses PLACE-ON together with {clash[0].value}; its position comes from PLACE-ON")
            if rels.count(R.PLACE_ON) > 1:
                add("PlaceOnConflict", sts[0], [key], f"{key} has more than one PLACE-ON")
    return issues


# ---------------------------------------------------------------------------
# Solvedness
# ---------------------------------------------------------------------------


@dataclass
class Flags:
    x_determined: bool = False
    y_determined: bool = False
    height_determined: bool = False
    yaw_determined: bool = False

    @property
    def fully_solved(self) -> bool:
        return self.x_determined and self.y_determined and self.height_determined and self.yaw_determined

    def set_all(self) -> None:
        self.x_determined = self.y_determined = self.height_determined = self.yaw_determined = True

    def missing(self) -> list[str]:
        names = [("x", self.x_determined), ("y", self.y_determined), ("height", self.height_determined), ("yaw", self.yaw_determined)]
        return [n for n, ok in names if not ok]


@dataclass
class SolvednessStatus:
    flags: dict[str, Flags] = field(default_factory=dict)

    def __getitem__(self, object_id: str) -> Flags:
        return self.flags[object_id]

    def __contains__(self, object_id: str) -> bool:
        return object_id in self.flags

    def unsolved(self) -> list[str]:
        return [oid for oid, f in self.flags.items() if not f.fully_solved]


def _apply_flags(f: Flags, st: Statement) -> None:
    rel = st.rel
    if rel is None:
        return
    if rel in SPECIAL:
        f.set_all()
        return
    if rel is R.PLACE_ON_BASE:
        f.height_determined = True
        if "x" in st.params:
            f.x_determined = True
        if "y" in st.params:
            f.y_determined = True
        return
    if rel in X_SETTERS:
        f.x_determined = True
    if rel in Y_SETTERS:
        f.y_determined = True
    if rel in HEIGHT_SETTERS:
        f.height_determined = True
    if rel in YAW_SETTERS:
        f.yaw_determined = True


def analyze_solvedness(program: PredicateProgram) -> SolvednessStatus:
    """Which of x, y, height and yaw each object's statements determine.

    A copied group starts with height and yaw inherited from its source; its
    members share the group's flags.
    """
    status = SolvednessStatus()
    for d in program.descriptions:
        status.flags.setdefault(d.object_id, Flags())
    groups: dict[str, list[str]] = {}
    group_flags: dict[str, Flags] = {}
    for st in program.statements:
        rel = st.rel
        if st.is_batch:
            continue
        subj = st.subject
        if rel is R.GROUP:
            groups[subj] = [m for m in st.reference if isinstance(m, str)] if isinstance(st.reference, list) else []
            continue
        if rel is R.COPY_GROUP:
            src = groups.get(st.reference, []) if isinstance(st.reference, str) else []
            groups[subj] = [f"{m}-{subj}" for m in src]
            group_flags[subj] = Flags(height_determined=True, yaw_determined=True)
            continue
        if subj in group_flags:
            _apply_flags(group_flags[subj], st)
        elif subj in groups:
            continue  # a plain group moves already-solved members
        else:
            _apply_flags(status.flags.setdefault(subj, Flags()), st)
    for gname, gf in group_flags.items():
        for member in groups.get(gname, []):
            status.flags[member] = Flags(gf.x_determined, gf.y_determined, gf.height_determined, gf.yaw_determined)
    return status


def physical_subjects(program: PredicateProgram) -> set[str]:
    """Object ids whose pose comes from the physical solver."""
    return {st.subject for st in program.statements if st.rel in PHYSICAL and not st.is_batch}


def statements_for(program: PredicateProgram, subject: str) -> Iterable[Statement]:
    return (st for st in program.statements if not st.is_batch and st.subject == subject)
