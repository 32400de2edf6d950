import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levdex.errors import ParseError, ReservedValueError
from levdex.state import (
    EMPTY_LEV,
    EMPTY_STATE,
    NULL,
    DialogueContext,
    DialogueState,
    LevSpan,
    Turn,
    canonicalize,
    canonicalize_lev,
    delexicalize,
    lev_apply,
    lev_diff,
    parse_dialogue_state,
    parse_state,
    serialize_state,
    slot_f1,
)

DOMAINS = ["hotel", "restaurant", "train", "taxi", "attraction"]
SLOTS = ["area", "food", "price", "stars", "day", "people", "departure"]
VALUES = ["centre", "north", "thai", "french", "cheap", "4", "monday", "hotel santa", "2"]


def random_state(rng: random.Random, max_domains: int = 3, max_slots: int = 4) -> DialogueState:
    raw: dict = {}
    for dom in rng.sample(DOMAINS, rng.randint(0, max_domains)):
        raw[dom] = {
            slot: rng.choice(VALUES)
            for slot in rng.sample(SLOTS, rng.randint(1, max_slots))
        }
    return canonicalize(raw)


state_dicts = st.dictionaries(
    st.sampled_from(DOMAINS),
    st.dictionaries(st.sampled_from(SLOTS), st.sampled_from(VALUES), min_size=1, max_size=4),
    max_size=3,
)


class TestCanonicalize:
    def test_case_folding(self):
        assert canonicalize({"Hotel": {"Area": "Centre"}}).as_dict() == {"hotel": {"area": "centre"}}

    def test_empty(self):
        assert canonicalize({}) == EMPTY_STATE

    def test_empty_domain_pruned(self):
        assert canonicalize({"hotel": {}}) == EMPTY_STATE

    def test_reserved_null_rejected(self):
        for marker in ("null", "NULL", "Null"):
            with pytest.raises(ReservedValueError):
                canonicalize({"hotel": {"stars": marker}})

    def test_grammar_breaking_values_rejected(self):
        for bad in ("", "  ", "a,b", "a[b", "a]b"):
            with pytest.raises(ReservedValueError):
                canonicalize({"hotel": {"stars": bad}})

    def test_multiword_keys_rejected(self):
        with pytest.raises(ReservedValueError):
            canonicalize({"hotel": {"book people": "2"}})
        with pytest.raises(ReservedValueError):
            canonicalize({"ho tel": {"stars": "4"}})

    def test_sorted_iteration(self):
        s = canonicalize({"taxi": {"departure": "x"}, "hotel": {"stars": "4", "area": "north"}})
        assert [d for d, _, _ in s.entries] == ["hotel", "hotel", "taxi"]
        assert [sl for _, sl, _ in s.entries] == ["area", "stars", "departure"]

    @given(state_dicts)
    def test_idempotent(self, raw):
        once = canonicalize(raw)
        assert canonicalize(once) == once

    def test_lev_null_allowed(self):
        span = canonicalize_lev({"hotel": {"stars": "null"}})
        assert span.entries == (("hotel", "stars", NULL),)


class TestSerializeParse:
    def test_section2_example(self):
        span = canonicalize_lev({"restaurant": {"food": "thai", "price": NULL, "area": "centre"}})
        assert serialize_state(span) == "[restaurant] area centre, food thai, price NULL"

    def test_empty(self):
        assert serialize_state(EMPTY_STATE) == ""
        assert parse_state("") == EMPTY_LEV

    def test_two_domains_no_cross_comma(self):
        s = canonicalize({"hotel": {"people": "2"}, "taxi": {"departure": "hotel santa"}})
        assert serialize_state(s) == "[hotel] people 2 [taxi] departure hotel santa"

    def test_parse_paper_ordering(self):
        span = parse_state("[restaurant] food thai, price NULL, area centre")
        assert span == canonicalize_lev(
            {"restaurant": {"food": "thai", "price": NULL, "area": "centre"}}
        )

    def test_lenient_garbage_prefix(self):
        assert parse_state("garbage [hotel] stars 4").as_dict() == {"hotel": {"stars": "4"}}

    def test_lenient_missing_value_dropped(self):
        assert parse_state("[hotel] stars, area north").as_dict() == {"hotel": {"area": "north"}}

    def test_strict_errors_with_offset(self):
        with pytest.raises(ParseError) as exc:
            parse_state("garbage [hotel] stars 4", strict=True)
        assert exc.value.offset == 0
        with pytest.raises(ParseError):
            parse_state("[hotel] stars", strict=True)

    def test_parse_total_on_noise(self):
        for junk in ("][", "[]", "a b c", "[x", ",,,", "[h] , ,"):
            parse_state(junk)

    def test_dialogue_state_parser_rejects_null(self):
        with pytest.raises(ReservedValueError):
            parse_dialogue_state("[hotel] stars NULL")

    @given(state_dicts)
    def test_bijection_states(self, raw):
        s = canonicalize(raw)
        assert parse_dialogue_state(serialize_state(s)) == s

    def test_bijection_levs(self):
        rng = random.Random(7)
        for _ in range(200):
            lev = lev_diff(random_state(rng), random_state(rng))
            assert parse_state(serialize_state(lev)) == lev


class TestLevAlgebra:
    def test_section2_worked_example(self):
        prev = parse_dialogue_state("[restaurant] food french, price cheap, day sunday")
        curr = parse_dialogue_state("[restaurant] food thai, day sunday, area centre")
        lev = lev_diff(prev, curr)
        assert serialize_state(lev) == "[restaurant] area centre, food thai, price NULL"
        assert lev_apply(prev, lev) == curr

    def test_identity_diff(self):
        rng = random.Random(1)
        for _ in range(50):
            s = random_state(rng)
            assert lev_diff(s, s) == EMPTY_LEV

    def test_diff_from_empty_is_state(self):
        curr = canonicalize({"hotel": {"stars": "4"}})
        assert lev_diff(EMPTY_STATE, curr).entries == curr.entries

    def test_apply_empty_is_identity(self):
        rng = random.Random(2)
        for _ in range(50):
            s = random_state(rng)
            assert lev_apply(s, EMPTY_LEV) == s

    def test_delete_on_empty_is_noop(self):
        lev = canonicalize_lev({"hotel": {"stars": NULL}})
        assert lev_apply(EMPTY_STATE, lev) == EMPTY_STATE

    def test_roundtrip_randomized(self):
        rng = random.Random(3)
        for _ in range(500):
            prev, curr = random_state(rng), random_state(rng)
            assert lev_apply(prev, lev_diff(prev, curr)) == curr

    def test_minimality(self):
        rng = random.Random(4)
        for _ in range(200):
            prev, curr = random_state(rng), random_state(rng)
            prev_map = {(d, s): v for d, s, v in prev.entries}
            curr_map = {(d, s): v for d, s, v in curr.entries}
            for d, s, v in lev_diff(prev, curr).entries:
                assert prev_map.get((d, s)) != curr_map.get((d, s))


class TestSlotF1:
    def test_half_overlap(self):
        a = canonicalize_lev({"rest": {"food": "thai", "area": "centre"}})
        b = canonicalize_lev({"rest": {"food": "pizza", "price": "cheap"}})
        assert slot_f1(a, b) == pytest.approx(0.5)

    def test_identical(self):
        rng = random.Random(5)
        for _ in range(20):
            s = random_state(rng)
            lev = lev_diff(EMPTY_STATE, s)
            assert slot_f1(lev, lev) == 1.0

    def test_empty_cases(self):
        nonempty = canonicalize_lev({"hotel": {"stars": "4"}})
        assert slot_f1(EMPTY_LEV, EMPTY_LEV) == 1.0
        assert slot_f1(EMPTY_LEV, nonempty) == 0.0
        assert slot_f1(nonempty, EMPTY_LEV) == 0.0

    def test_symmetric(self):
        rng = random.Random(6)
        for _ in range(100):
            a = lev_diff(random_state(rng), random_state(rng))
            b = lev_diff(random_state(rng), random_state(rng))
            assert slot_f1(a, b) == slot_f1(b, a)

    def test_value_matching_variant(self):
        a = canonicalize_lev({"rest": {"food": "thai"}})
        b = canonicalize_lev({"rest": {"food": "french"}})
        assert slot_f1(a, b) == 1.0
        assert slot_f1(a, b, match_values=True) == 0.0

    def test_brute_force_oracle(self):
        rng = random.Random(8)
        for _ in range(100):
            a = lev_diff(random_state(rng), random_state(rng))
            b = lev_diff(random_state(rng), random_state(rng))
            sa, sb = set(a.slot_names()), set(b.slot_names())
            if not sa and not sb:
                expected = 1.0
            elif not sa or not sb:
                expected = 0.0
            else:
                p = len(sa & sb) / len(sb)
                r = len(sa & sb) / len(sa)
                expected = 0.0 if p + r == 0 else 2 * p * r / (p + r)
            assert slot_f1(a, b) == pytest.approx(expected)


def make_ctx(prev_state, prev_user="", prev_system="", curr_user="", turn_index=1, did="d1"):
    return DialogueContext(
        prev_state=prev_state,
        prev_user=prev_user,
        prev_system=prev_system,
        curr_user=curr_user,
        dialogue_id=did,
        turn_index=turn_index,
    )


class TestDelexicalize:
    def test_value_replaced_with_slot_placeholder(self):
        ctx = make_ctx(canonicalize({"restaurant": {"food": "thai"}}), curr_user="i want thai food")
        out = delexicalize(ctx)
        assert out.curr_user == "i want [value_food] food"

    def test_prev_state_values_masked(self):
        ctx = make_ctx(canonicalize({"hotel": {"stars": "4", "area": "north"}}))
        out = delexicalize(ctx)
        assert out.prev_state.entries == (("hotel", "area", "[v]"), ("hotel", "stars", "[v]"))

    def test_no_matches_leaves_utterances(self):
        ctx = make_ctx(
            canonicalize({"hotel": {"stars": "4"}}),
            prev_user="good morning",
            curr_user="thanks a lot",
        )
        out = delexicalize(ctx)
        assert out.prev_user == "good morning"
        assert out.curr_user == "thanks a lot"

    def test_longest_match_wins(self):
        prev = canonicalize({"taxi": {"departure": "hotel santa"}, "attraction": {"name": "santa"}})
        ctx = make_ctx(prev, curr_user="take me to hotel santa")
        out = delexicalize(ctx)
        assert out.curr_user == "take me to [value_departure]"

    def test_gold_values_used_at_training_time(self):
        ctx = make_ctx(EMPTY_STATE, curr_user="somewhere cheap please", turn_index=0)
        gold = canonicalize({"restaurant": {"price": "cheap"}})
        out = delexicalize(ctx, gold)
        assert out.curr_user == "somewhere [value_price] please"

    def test_word_boundaries(self):
        ctx = make_ctx(canonicalize({"hotel": {"people": "4"}}), curr_user="4 of us at 4pm room 44")
        out = delexicalize(ctx)
        assert out.curr_user == "[value_people] of us at 4pm room 44"

    def test_idempotent(self):
        gold = canonicalize({"restaurant": {"food": "thai", "area": "centre"}})
        ctx = make_ctx(
            canonicalize({"hotel": {"stars": "4"}}),
            prev_user="a 4 star place",
            curr_user="thai food in the centre",
        )
        once = delexicalize(ctx, gold)
        assert delexicalize(once, gold) == once


class TestTurnAndContext:
    def test_turn_normalizes(self):
        t = Turn("  Hello   THERE ", "OK then\n", EMPTY_STATE)
        assert t.user_utterance == "hello there"
        assert t.system_response == "ok then"

    def test_context_turn0_must_be_empty(self):
        with pytest.raises(ValueError):
            make_ctx(canonicalize({"hotel": {"stars": "4"}}), turn_index=0)
        with pytest.raises(ValueError):
            DialogueContext(EMPTY_STATE, "hi", "", "next", "d", 0)

    def test_negative_turn_index(self):
        with pytest.raises(ValueError):
            make_ctx(EMPTY_STATE, turn_index=-1)


@settings(max_examples=200)
@given(state_dicts, state_dicts)
def test_property_roundtrip(raw_prev, raw_curr):
    prev, curr = canonicalize(raw_prev), canonicalize(raw_curr)
    assert lev_apply(prev, lev_diff(prev, curr)) == curr
    assert parse_dialogue_state(serialize_state(curr)) == curr
