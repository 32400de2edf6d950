"""Dialogue-state representation and the belief-span delta algebra.

A dialogue state is a set of (domain, slot, value) triples kept in
canonical form: lowercase, lexicographically sorted, no empty domains.
A lev span has the same shape but may carry the deletion marker ``NULL``
as a value.  Both serialize to the bracketed text grammar

    [dom1] slot1 val1, slot2 val2 [dom2] slot val

which round-trips through :func:`parse_state` and is the stable wire
format for index payloads and generator I/O.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ParseError, ReservedValueError

# Deletion marker in serialized spans. Reserved: never a legal state value.
NULL = "NULL"

# Masking token replacing every previous-state value under delexicalization.
VALUE_MASK = "[v]"

_DOMAIN_RE = re.compile(r"\[([^\[\]]+)\]")
_WS_RE = re.compile(r"\s+")

Entry = tuple[str, str, str]


def normalize_utterance(text: str) -> str:
    """Lowercase and collapse runs of whitespace."""
    return _WS_RE.sub(" ", text.strip()).lower()


def _clean_key(raw: str, what: str) -> str:
    key = _WS_RE.sub(" ", str(raw).strip()).lower()
    if not key or " " in key or "," in key or "[" in key or "]" in key:
        raise ReservedValueError(f"invalid {what} name: {raw!r}")
    return key


def _clean_value(raw: str, allow_null: bool) -> str:
    value = _WS_RE.sub(" ", str(raw).strip())
    if value.lower() == "null":
        if allow_null:
            return NULL
        raise ReservedValueError(f"value {raw!r} collides with the deletion marker")
    value = value.lower()
    if not value or "," in value or "[" in value or "]" in value:
        raise ReservedValueError(f"invalid slot value: {raw!r}")
    return value


def _canonical_entries(raw: dict, allow_null: bool) -> tuple[Entry, ...]:
    entries = {}
    for domain, slots in raw.items():
        dom = _clean_key(domain, "domain")
        for slot, value in dict(slots).items():
            entries[(dom, _clean_key(slot, "slot"))] = _clean_value(value, allow_null)
    return tuple((d, s, entries[(d, s)]) for d, s in sorted(entries))


@dataclass(frozen=True)
class _SlotMap:
    """Immutable sorted (domain, slot, value) triples."""

    entries: tuple[Entry, ...] = ()

    def as_dict(self) -> dict[str, dict[str, str]]:
        """Nested domain -> slot -> value view (fresh copy)."""
        out: dict[str, dict[str, str]] = {}
        for dom, slot, value in self.entries:
            out.setdefault(dom, {})[slot] = value
        return out

    def slot_names(self) -> frozenset[tuple[str, str]]:
        return frozenset((d, s) for d, s, _ in self.entries)

    def get(self, domain: str, slot: str) -> str | None:
        for d, s, v in self.entries:
            if d == domain and s == slot:
                return v
        return None

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class DialogueState(_SlotMap):
    """Accumulated user goal: every value is a real value (no NULL)."""


@dataclass(frozen=True)
class LevSpan(_SlotMap):
    """State delta: a NULL value deletes the slot; empty span means no change."""


EMPTY_STATE = DialogueState()
EMPTY_LEV = LevSpan()


def canonicalize(raw: dict | DialogueState) -> DialogueState:
    """Normalize a raw domain->slot->value map into a DialogueState.

    Lowercases keys and values, sorts entries, prunes empty domains.
    Idempotent. Raises RESERVED_VALUE for the marker string "null" and
    for keys/values that would break the serialization grammar (commas,
    brackets, embedded whitespace in names, empty strings).
    """
    if isinstance(raw, DialogueState):
        raw = raw.as_dict()
    return DialogueState(_canonical_entries(raw, allow_null=False))


def canonicalize_lev(raw: dict | LevSpan) -> LevSpan:
    """Like :func:`canonicalize` but values may be the NULL deletion marker."""
    if isinstance(raw, LevSpan):
        raw = raw.as_dict()
    return LevSpan(_canonical_entries(raw, allow_null=True))


def serialize_state(s: _SlotMap) -> str:
    """Render a state or lev span in the bracketed slot-value grammar.

    Domains appear bracketed in sorted order; slot-value pairs inside a
    domain are comma-separated. Empty input renders as "".
    """
    parts = []
    current = None
    pairs: list[str] = []
    for dom, slot, value in s.entries:
        if dom != current:
            if pairs:
                parts.append(", ".join(pairs))
            parts.append(f"[{dom}]")
            current = dom
            pairs = []
        pairs.append(f"{slot} {value}")
    if pairs:
        parts.append(", ".join(pairs))
    return " ".join(parts)


def parse_state(text: str, strict: bool = False) -> LevSpan:
    """Parse the bracketed grammar back into a LevSpan.

    Lenient by default: total on arbitrary strings. Tokens before the
    first [domain] marker are discarded, slots with a missing value are
    dropped, and later duplicates of a (domain, slot) win. With
    ``strict=True`` any such recovery raises PARSE_ERROR with the byte
    offset of the offending text.
    """
    matches = list(_DOMAIN_RE.finditer(text))
    if not matches:
        if strict and text.strip():
            raise ParseError("no [domain] marker", _byte_offset(text, 0))
        return EMPTY_LEV

    lead = text[: matches[0].start()]
    if strict and lead.strip():
        raise ParseError("stray text before first [domain]", _byte_offset(text, 0))

    entries: dict[tuple[str, str], str] = {}
    for i, m in enumerate(matches):
        domain = m.group(1).strip().lower()
        seg_start = m.end()
        seg_end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        segment = text[seg_start:seg_end]
        if strict and (not domain or " " in domain):
            raise ParseError(f"invalid domain {m.group(0)!r}", _byte_offset(text, m.start()))
        offset = seg_start
        for piece in segment.split(","):
            tokens = piece.split()
            if len(tokens) >= 2:
                slot = tokens[0].lower()
                value = " ".join(tokens[1:])
                value = NULL if value.upper() == NULL and len(tokens) == 2 else value.lower()
                entries[(domain, slot)] = value
            elif tokens and strict:
                raise ParseError(
                    f"slot {tokens[0]!r} has no value", _byte_offset(text, offset)
                )
            offset += len(piece) + 1

    return LevSpan(tuple((d, s, v) for (d, s), v in sorted(entries.items())))


def parse_dialogue_state(text: str, strict: bool = False) -> DialogueState:
    """Parse text that must contain no NULL markers into a DialogueState."""
    span = parse_state(text, strict=strict)
    for d, s, v in span.entries:
        if v == NULL:
            raise ReservedValueError(f"NULL marker in dialogue state at [{d}] {s}")
    return DialogueState(span.entries)


def _byte_offset(text: str, char_index: int) -> int:
    return len(text[:char_index].encode("utf-8"))


def lev_diff(prev: DialogueState, curr: DialogueState) -> LevSpan:
    """Minimal delta taking ``prev`` to ``curr``.

    Changed or new slots carry the new value; slots present in prev but
    absent from curr carry NULL. Satisfies lev_apply(prev, result) == curr.
    """
    prev_map = {(d, s): v for d, s, v in prev.entries}
    curr_map = {(d, s): v for d, s, v in curr.entries}
    out = {}
    for key, value in curr_map.items():
        if prev_map.get(key) != value:
            out[key] = value
    for key in prev_map:
        if key not in curr_map:
            out[key] = NULL
    return LevSpan(tuple((d, s, out[(d, s)]) for d, s in sorted(out)))


def lev_apply(prev: DialogueState, lev: LevSpan) -> DialogueState:
    """Apply a delta: non-NULL entries overwrite or insert, NULL deletes."""
    merged = {(d, s): v for d, s, v in prev.entries}
    for d, s, v in lev.entries:
        if v == NULL:
            merged.pop((d, s), None)
        else:
            merged[(d, s)] = v
    return DialogueState(tuple((d, s, merged[(d, s)]) for d, s in sorted(merged)))


def slot_f1(a: _SlotMap, b: _SlotMap, match_values: bool = False) -> float:
    """F1 overlap between two spans' slot sets.

    Compares (domain, slot) name pairs; with ``match_values`` the value
    must agree as well. Both empty scores 1.0, exactly one empty 0.0.
    Symmetric.
    """
    if match_values:
        sa: frozenset = frozenset(a.entries)
        sb: frozenset = frozenset(b.entries)
    else:
        sa = a.slot_names()
        sb = b.slot_names()
    if not sa and not sb:
        return 1.0
    if not sa or not sb:
        return 0.0
    overlap = len(sa & sb)
    return 2.0 * overlap / (len(sa) + len(sb))


@dataclass(frozen=True)
class Turn:
    """One exchange: user utterance, system response, gold state after it.

    The system response is empty on a dialogue's final turn. Utterances
    are whitespace-normalized and lowercased at construction.
    """

    user_utterance: str
    system_response: str
    gold_state: DialogueState

    def __post_init__(self):
        object.__setattr__(self, "user_utterance", normalize_utterance(self.user_utterance))
        object.__setattr__(self, "system_response", normalize_utterance(self.system_response))


@dataclass(frozen=True)
class DialogueContext:
    """Everything the tracker sees at one turn.

    prev_state is the state after the previous turn, prev_user and
    prev_system the previous exchange (all empty at turn 0), curr_user
    the utterance being tracked.
    """

    prev_state: DialogueState
    prev_user: str
    prev_system: str
    curr_user: str
    dialogue_id: str
    turn_index: int

    def __post_init__(self):
        if self.turn_index < 0:
            raise ValueError(f"turn_index must be >= 0, got {self.turn_index}")
        if self.turn_index == 0 and (self.prev_state or self.prev_user or self.prev_system):
            raise ValueError("turn 0 must have empty previous state and utterances")

    @property
    def key(self) -> tuple[str, int]:
        return (self.dialogue_id, self.turn_index)


def _boundary_pattern(value: str) -> re.Pattern:
    # Custom boundaries instead of \b so values starting or ending with
    # punctuation still anchor correctly; "_" counts as a word character,
    # which keeps [value_slot] placeholders safe from re-replacement.
    return re.compile(r"(?<![a-z0-9_])" + re.escape(value) + r"(?![a-z0-9_])", re.IGNORECASE)


def delexicalize(ctx: DialogueContext, gold_curr_state: DialogueState | None = None) -> DialogueContext:
    """Mask concrete slot values out of a context.

    Previous-state values all become the "[v]" token; utterance
    occurrences of any value from prev_state (plus gold_curr_state when
    given, i.e. at training time) become "[value_<slot>]", longest value
    first. Idempotent.
    """
    value_slots: dict[str, str] = {}
    for source in (ctx.prev_state, gold_curr_state or EMPTY_STATE):
        for _, slot, value in source.entries:
            if value != VALUE_MASK:
                value_slots.setdefault(value, slot)

    def scrub(text: str) -> str:
        for value in sorted(value_slots, key=lambda v: (-len(v), v)):
            text = _boundary_pattern(value).sub(f"[value_{value_slots[value]}]", text)
        return text

    masked_prev = DialogueState(tuple((d, s, VALUE_MASK) for d, s, _ in ctx.prev_state.entries))
    return DialogueContext(
        prev_state=masked_prev,
        prev_user=scrub(ctx.prev_user),
        prev_system=scrub(ctx.prev_system),
        curr_user=scrub(ctx.curr_user),
        dialogue_id=ctx.dialogue_id,
        turn_index=ctx.turn_index,
    )
