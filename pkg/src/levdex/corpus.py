"""Corpus loading, synthetic generation, and context assembly.

Two on-disk formats are accepted: a jsonl fixture format (one dialogue
per line) and the MultiWOZ 2.0 data.json layout. The synthetic
generator is the desk-scale stand-in for MultiWOZ: template dialogues
whose utterances mention slot values verbatim, so lexical retrieval and
delexicalization both have something to bite on.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import ArtifactIOError, SchemaError, TooManyResultsError
from .state import (
    EMPTY_STATE,
    DialogueContext,
    DialogueState,
    LevSpan,
    Turn,
    canonicalize,
    lev_diff,
    serialize_state,
)

# Separator tokens of the concatenated context, in their fixed order.
EOS_L1 = "⟨eos_l1⟩"
EOS_L2 = "⟨eos_l2⟩"
EOS_L3 = "⟨eos_l3⟩"
EOS_B = "⟨eos_b⟩"
EOS_U1 = "⟨eos_u1⟩"
EOS_R = "⟨eos_r⟩"
EOS_U = "⟨eos_u⟩"
LEV_SEPARATORS = (EOS_L1, EOS_L2, EOS_L3)
SEPARATORS = LEV_SEPARATORS + (EOS_B, EOS_U1, EOS_R, EOS_U)


@dataclass(frozen=True)
class SerializedContext:
    """Flat text form of a (possibly retrieval-augmented) context."""

    text: str
    token_ids: tuple[int, ...] | None = None


@dataclass(frozen=True)
class Corpus:
    dialogues: tuple[tuple[str, tuple[Turn, ...]], ...]
    split: str = "train"

    def __post_init__(self):
        seen = set()
        for did, turns in self.dialogues:
            if did in seen:
                raise SchemaError(f"duplicate dialogue id {did!r}")
            seen.add(did)
            if not turns:
                raise SchemaError(f"dialogue {did!r} has no turns")

    def __len__(self) -> int:
        return len(self.dialogues)

    @property
    def n_turns(self) -> int:
        return sum(len(turns) for _, turns in self.dialogues)

    def stats(self) -> dict:
        return {"split": self.split, "dialogues": len(self), "turns": self.n_turns}


def _check_reserved_tokens(did: str, text: str, where: str) -> None:
    for sep in SEPARATORS:
        if sep in text:
            raise SchemaError(f"dialogue {did!r} {where}: reserved token {sep}")


def _turn_from_fields(did: str, t: int, user, system, state) -> Turn:
    if not isinstance(user, str):
        raise SchemaError(f"dialogue {did!r} turns[{t}]: missing or non-string 'user'")
    if not isinstance(system, str):
        raise SchemaError(f"dialogue {did!r} turns[{t}]: missing or non-string 'system'")
    if not isinstance(state, dict):
        raise SchemaError(f"dialogue {did!r} turns[{t}]: missing or non-dict 'state'")
    _check_reserved_tokens(did, user, f"turns[{t}].user")
    _check_reserved_tokens(did, system, f"turns[{t}].system")
    try:
        gold = canonicalize(state)
    except Exception as exc:
        raise SchemaError(f"dialogue {did!r} turns[{t}].state: {exc}") from exc
    return Turn(user, system, gold)


def _load_jsonl(path: Path, value_map: dict[str, str] | None) -> list[tuple[str, tuple[Turn, ...]]]:
    dialogues = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid json: {exc}") from exc
            did = obj.get("id")
            if not isinstance(did, str) or not did:
                raise SchemaError(f"line {lineno}: missing dialogue 'id'")
            raw_turns = obj.get("turns")
            if not isinstance(raw_turns, list) or not raw_turns:
                raise SchemaError(f"dialogue {did!r}: missing or empty 'turns'")
            turns = []
            for t, rt in enumerate(raw_turns):
                state = rt.get("state") if isinstance(rt, dict) else None
                if value_map and isinstance(state, dict):
                    state = {
                        d: {s: value_map.get(str(v).lower(), v) for s, v in slots.items()}
                        for d, slots in state.items()
                    }
                turns.append(
                    _turn_from_fields(did, t, rt.get("user"), rt.get("system"), state)
                )
            dialogues.append((did, tuple(turns)))
    return dialogues


def _sanitize_multiwoz_value(value: str) -> str:
    # data.json values occasionally carry grammar-breaking characters.
    return " ".join(value.replace(",", " ").replace("[", " ").replace("]", " ").split())


def _map_multiwoz_metadata(did: str, t: int, metadata: dict, value_map) -> dict:
    """Flatten MultiWOZ 'metadata' belief annotations to domain->slot->value."""
    unset = {"", "not mentioned", "none"}
    state: dict[str, dict[str, str]] = {}
    for domain, groups in metadata.items():
        if not isinstance(groups, dict):
            raise SchemaError(f"dialogue {did!r} log[{t}].metadata.{domain}: not a dict")
        for group in ("book", "semi"):
            for slot, value in groups.get(group, {}).items():
                if slot == "booked" or not isinstance(value, str):
                    continue
                value = value.strip()
                if value.lower() in unset:
                    continue
                if value_map:
                    value = value_map.get(value.lower(), value)
                value = _sanitize_multiwoz_value(value)
                if value:
                    state.setdefault(domain, {})[slot] = value
    return state


def _load_multiwoz(path: Path, value_map) -> list[tuple[str, tuple[Turn, ...]]]:
    with path.open(encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid json: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("top level of a multiwoz file must be an object")
    dialogues = []
    for raw_id in sorted(data):
        did = raw_id[:-5] if raw_id.endswith(".json") else raw_id
        log = data[raw_id].get("log")
        if not isinstance(log, list) or not log:
            raise SchemaError(f"dialogue {did!r}: missing 'log'")
        if len(log) % 2 != 0:
            raise SchemaError(f"dialogue {did!r}: log has odd length {len(log)}")
        turns = []
        for t in range(0, len(log), 2):
            user = log[t].get("text")
            system = log[t + 1].get("text")
            metadata = log[t + 1].get("metadata")
            if not isinstance(metadata, dict):
                raise SchemaError(f"dialogue {did!r} log[{t + 1}]: missing 'metadata'")
            state = _map_multiwoz_metadata(did, t + 1, metadata, value_map)
            turns.append(_turn_from_fields(did, t // 2, user, system, state))
        dialogues.append((did, tuple(turns)))
    return dialogues


def load_corpus(
    path: str | Path,
    format: str = "jsonl",
    split: str = "train",
    value_map: dict[str, str] | None = None,
) -> Corpus:
    """Load dialogues from disk.

    Args:
        path: corpus file.
        format: "jsonl" (canonical fixture format) or "multiwoz-json"
            (the MultiWOZ 2.0 data.json layout).
        split: label attached to the corpus.
        value_map: optional lowercase value normalization map applied
            before canonicalization.
    """
    path = Path(path)
    if not path.is_file():
        raise ArtifactIOError(f"corpus file not found: {path}")
    if format == "jsonl":
        dialogues = _load_jsonl(path, value_map)
    elif format == "multiwoz-json":
        dialogues = _load_multiwoz(path, value_map)
    else:
        raise SchemaError(f"unknown corpus format {format!r}")
    return Corpus(tuple(dialogues), split=split)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus in the jsonl fixture format (deterministic bytes)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for did, turns in corpus.dialogues:
            obj = {
                "id": did,
                "turns": [
                    {
                        "user": t.user_utterance,
                        "system": t.system_response,
                        "state": t.gold_state.as_dict(),
                    }
                    for t in turns
                ],
            }
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


# --- synthetic corpus -------------------------------------------------------

_AREAS = ["centre", "north", "south", "east", "west"]
_PRICES = ["cheap", "moderate", "expensive"]
_DAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
_FOODS = ["thai", "french", "chinese", "indian", "italian", "british", "korean", "turkish"]
_PLACES = ["cambridge", "london", "norwich", "ely", "peterborough", "stansted", "broxbourne"]
_TIMES = ["eight", "nine", "ten", "eleven", "noon", "five", "six", "seven"]
_TYPES = ["museum", "park", "cinema", "college", "theatre", "gallery"]
_STOPS = ["hotel santa", "city centre", "old town", "river side", "market square", "north gate"]

_SCHEMA: dict[str, dict[str, list[str]]] = {
    "hotel": {"area": _AREAS, "stars": ["2", "3", "4", "5"], "price": _PRICES, "people": ["1", "2", "3", "4", "5", "6"]},
    "restaurant": {"area": _AREAS, "food": _FOODS, "price": _PRICES, "day": _DAYS},
    "train": {"destination": _PLACES, "day": _DAYS, "leave": _TIMES},
    "attraction": {"area": _AREAS, "type": _TYPES},
    "taxi": {"departure": _STOPS, "arrive": _TIMES},
    "hospital": {"department": ["cardiology", "neurology", "oncology", "surgery"]},
    "police": {"name": ["parkside", "riverside", "eastgate"]},
}

# Templates that name the domain give the tracker an easy ride; the
# "implicit" ones leave the domain to be inferred from context, which is
# where retrieved spans earn their keep.
_T_INTRO = [
    "i am looking for a {domain}",
    "i need a {domain} please",
    "can you find me a {domain}",
    "hello i want to book a {domain}",
]
_T_ADD_EXPLICIT = [
    "the {domain} should have {slot} {value}",
    "find a {domain} with {slot} {value}",
    "i want the {domain} {slot} to be {value}",
]
_T_ADD_IMPLICIT = [
    "make it {slot} {value}",
    "{slot} {value} please",
    "i would prefer {slot} {value}",
    "it should be {slot} {value}",
]
_T_CHANGE = [
    "actually change the {slot} to {value}",
    "no make the {slot} {value} instead",
    "on second thought {slot} {value} works better",
]
_T_DELETE = [
    "forget about the {slot}",
    "the {slot} does not matter anymore",
    "i do not care about the {slot} after all",
]
_T_SYSTEM = [
    "okay i found a {domain} for you",
    "sure thing . anything else ?",
    "done . your {domain} is ready",
    "alright searching for that now",
    "no problem . what else can i do ?",
]


def _pool(slot_values: list[str], vocab_size: int) -> list[str]:
    cap = max(2, vocab_size // 16)
    return slot_values[:cap]


def synth_corpus(
    seed: int,
    n_dialogues: int,
    n_domains: int = 5,
    vocab_size: int = 64,
    split: str = "train",
) -> Corpus:
    """Generate a deterministic template corpus.

    Each dialogue holds 2-6 turns over 1-2 domains; every turn updates
    the state and mentions the touched slot values verbatim in the user
    utterance. Value pools shrink with ``vocab_size``.
    """
    if n_dialogues < 1:
        raise ValueError("n_dialogues must be >= 1")
    rng = random.Random(seed)
    domains = list(_SCHEMA)[: max(1, min(n_domains, len(_SCHEMA)))]
    dialogues = []
    for i in range(n_dialogues):
        did = f"syn{seed}-{i:04d}"
        dialogues.append((did, _synth_dialogue(rng, domains, vocab_size)))
    return Corpus(tuple(dialogues), split=split)


def _synth_dialogue(rng: random.Random, domains: list[str], vocab_size: int) -> tuple[Turn, ...]:
    n_turns = rng.randint(2, 6)
    active = rng.sample(domains, min(len(domains), rng.choice([1, 1, 2])))
    state: dict[str, dict[str, str]] = {}
    turns = []
    introduced: set[str] = set()
    for t in range(n_turns):
        clauses = []
        domain = active[0] if t == 0 or len(active) == 1 else rng.choice(active)
        if domain not in introduced:
            introduced.add(domain)
            clauses.append(rng.choice(_T_INTRO).format(domain=domain))
        schema = _SCHEMA[domain]
        set_slots = state.get(domain, {})
        unset = [s for s in schema if s not in set_slots]
        action = rng.random()
        if action < 0.12 and len(set_slots) >= 1 and t >= 1:
            slot = rng.choice(sorted(set_slots))
            clauses.append(rng.choice(_T_DELETE).format(slot=slot))
            del state[domain][slot]
            if not state[domain]:
                del state[domain]
        elif action < 0.35 and set_slots:
            slot = rng.choice(sorted(set_slots))
            value = rng.choice([v for v in _pool(schema[slot], vocab_size) if v != set_slots[slot]] or [set_slots[slot]])
            clauses.append(rng.choice(_T_CHANGE).format(slot=slot, value=value))
            state[domain][slot] = value
        elif unset:
            for slot in rng.sample(unset, min(len(unset), rng.choice([1, 1, 2]))):
                value = rng.choice(_pool(schema[slot], vocab_size))
                template = _T_ADD_EXPLICIT if rng.random() < 0.5 else _T_ADD_IMPLICIT
                clauses.append(rng.choice(template).format(domain=domain, slot=slot, value=value))
                state.setdefault(domain, {})[slot] = value
        else:
            slot = rng.choice(sorted(set_slots))
            value = rng.choice([v for v in _pool(schema[slot], vocab_size) if v != set_slots[slot]] or [set_slots[slot]])
            clauses.append(rng.choice(_T_CHANGE).format(slot=slot, value=value))
            state[domain][slot] = value
        user = " and ".join(clauses)
        system = "" if t == n_turns - 1 else rng.choice(_T_SYSTEM).format(domain=domain)
        turns.append(Turn(user, system, canonicalize({d: dict(s) for d, s in state.items()})))
    return tuple(turns)


# --- enumeration and assembly ----------------------------------------------


def enumerate_contexts(corpus: Corpus) -> list[tuple[DialogueContext, LevSpan]]:
    """One (context, gold lev) per turn, in corpus order."""
    out = []
    for did, turns in corpus.dialogues:
        prev_state = EMPTY_STATE
        prev_user = prev_system = ""
        for t, turn in enumerate(turns):
            ctx = DialogueContext(
                prev_state=prev_state,
                prev_user=prev_user,
                prev_system=prev_system,
                curr_user=turn.user_utterance,
                dialogue_id=did,
                turn_index=t,
            )
            out.append((ctx, lev_diff(prev_state, turn.gold_state)))
            prev_state = turn.gold_state
            prev_user = turn.user_utterance
            prev_system = turn.system_response
    return out


def assemble_context(
    ctx: DialogueContext,
    retrieved: list[LevSpan] | tuple[LevSpan, ...] = (),
    delex: bool = False,
    gold_curr: DialogueState | None = None,
    include_prev_state: bool = True,
) -> SerializedContext:
    """Concatenate retrieved spans and the dialogue context into one string.

    Layout: lev_1 ⟨eos_l1⟩ [lev_2 ⟨eos_l2⟩ [lev_3 ⟨eos_l3⟩]] dst ⟨eos_b⟩
    u_prev ⟨eos_u1⟩ r_prev ⟨eos_r⟩ u_curr ⟨eos_u⟩. With no retrieved
    spans the lev segment and its separators are omitted entirely;
    include_prev_state=False likewise drops the dst segment and ⟨eos_b⟩.
    """
    if len(retrieved) > 3:
        raise TooManyResultsError(f"at most 3 retrieved spans, got {len(retrieved)}")
    if delex:
        from .state import delexicalize

        ctx = delexicalize(ctx, gold_curr)
    parts: list[str] = []
    for i, span in enumerate(retrieved):
        parts.extend([serialize_state(span), LEV_SEPARATORS[i]])
    if include_prev_state:
        parts.extend([serialize_state(ctx.prev_state), EOS_B])
    parts.extend([ctx.prev_user, EOS_U1, ctx.prev_system, EOS_R, ctx.curr_user, EOS_U])
    return SerializedContext(" ".join(p for p in parts if p))


def split_context(text: str) -> dict[str, str]:
    """Recover the segments of an assembled context, keyed by the
    separator that closed them."""
    segments = {}
    rest = text
    for sep in SEPARATORS:
        if sep in rest:
            seg, rest = rest.split(sep, 1)
            segments[sep] = seg.strip()
            rest = rest.lstrip()
    return segments
