"""Contrastive training-pair mining.

For each training context: take the BM25 top-100 lexical neighbours,
score each candidate's gold lev span against the anchor's by slot F1,
sort descending, and keep the head as the positive and the tail as the
hard negative. Candidates are BM25-plausible by construction, so the
negative is never a random draw.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .bm25 import Bm25Index, bm25_topk, build_bm25
from .corpus import Corpus, assemble_context, enumerate_contexts
from .errors import InsufficientCandidatesError
from .state import DialogueContext, DialogueState, LevSpan, slot_f1


def doc_id_for(ctx: DialogueContext) -> str:
    return f"{ctx.dialogue_id}#{ctx.turn_index}"


def build_corpus_bm25(
    corpus: Corpus, delex: bool = False, k1: float = 0.9, b: float = 0.4
) -> Bm25Index:
    """BM25 index over the corpus's assembled per-turn contexts.

    Documents are the same assembled texts the dense retriever encodes,
    so retrieval methods differ only in scoring.
    """
    docs = []
    for ctx, gold_lev in enumerate_contexts(corpus):
        text = assemble_context(ctx, delex=delex).text
        docs.append((doc_id_for(ctx), text, (gold_lev, ctx.dialogue_id, ctx.turn_index)))
    return build_bm25(docs, k1=k1, b=b)


@dataclass(frozen=True)
class TrainingPair:
    anchor: DialogueContext
    positive: DialogueContext
    negative: DialogueContext
    positive_f1: float
    negative_f1: float

    def __post_init__(self):
        if self.positive_f1 < self.negative_f1:
            raise ValueError("positive_f1 must be >= negative_f1")
        keys = {self.anchor.key, self.positive.key, self.negative.key}
        if len(keys) != 3:
            raise ValueError("anchor, positive, negative must be distinct turns")


def mine_pair(
    anchor: DialogueContext,
    gold_lev: LevSpan,
    index: Bm25Index,
    contexts_by_key: dict[tuple[str, int], tuple[DialogueContext, LevSpan]],
    top: int = 100,
    exclude_same_dialogue: bool = False,
    delex: bool = False,
) -> TrainingPair:
    """One positive and one hard negative for a single anchor.

    The anchor's own turn is always excluded from the candidate pool;
    other turns of the same dialogue stay in unless
    ``exclude_same_dialogue`` is set. Candidates are ranked by slot F1
    of their lev spans (descending), ties broken by BM25 rank, and the
    head/tail become positive/negative.
    """
    query = assemble_context(anchor, delex=delex).text
    candidates = bm25_topk(
        index,
        query,
        k=top,
        exclude_doc=doc_id_for(anchor),
        exclude_dialogue=anchor.dialogue_id if exclude_same_dialogue else None,
    )
    if len(candidates) < 2:
        raise InsufficientCandidatesError(
            f"{doc_id_for(anchor)}: {len(candidates)} BM25 candidates, need >= 2"
        )
    scored = []
    for rank, (_, _, payload) in enumerate(candidates):
        cand_lev, did, turn = payload
        scored.append((slot_f1(gold_lev, cand_lev), rank, (did, turn)))
    scored.sort(key=lambda row: (-row[0], row[1]))
    pos_f1, _, pos_key = scored[0]
    neg_f1, _, neg_key = scored[-1]
    return TrainingPair(
        anchor=anchor,
        positive=contexts_by_key[pos_key][0],
        negative=contexts_by_key[neg_key][0],
        positive_f1=pos_f1,
        negative_f1=neg_f1,
    )


def mine_dataset(
    corpus: Corpus,
    index: Bm25Index,
    seed: int = 0,
    top: int = 100,
    exclude_same_dialogue: bool = False,
    delex: bool = False,
) -> tuple[list[TrainingPair], dict]:
    """Mine one pair per enumerated context; skip and count the rest.

    Deterministic: output ordered by (dialogue_id, turn_index). The seed
    is recorded in the stats for manifest bookkeeping; mining itself has
    no random component.
    """
    contexts = enumerate_contexts(corpus)
    by_key = {(ctx.dialogue_id, ctx.turn_index): (ctx, lev) for ctx, lev in contexts}
    pairs = []
    skipped = 0
    for ctx, gold_lev in contexts:
        try:
            pairs.append(
                mine_pair(ctx, gold_lev, index, by_key, top=top,
                          exclude_same_dialogue=exclude_same_dialogue, delex=delex)
            )
        except InsufficientCandidatesError:
            skipped += 1
    n = len(pairs)
    stats = {
        "seed": seed,
        "pairs": n,
        "skipped": skipped,
        "mean_positive_f1": sum(p.positive_f1 for p in pairs) / n if n else 0.0,
        "mean_negative_f1": sum(p.negative_f1 for p in pairs) / n if n else 0.0,
        "frac_perfect_positive": sum(1 for p in pairs if p.positive_f1 == 1.0) / n if n else 0.0,
    }
    return pairs, stats


def context_to_json(ctx: DialogueContext) -> dict:
    return {
        "prev_state": ctx.prev_state.as_dict(),
        "prev_user": ctx.prev_user,
        "prev_system": ctx.prev_system,
        "curr_user": ctx.curr_user,
        "dialogue_id": ctx.dialogue_id,
        "turn_index": ctx.turn_index,
    }


def context_from_json(obj: dict) -> DialogueContext:
    entries = []
    for dom, slots in obj["prev_state"].items():
        for slot, value in slots.items():
            entries.append((dom, slot, value))
    return DialogueContext(
        prev_state=DialogueState(tuple(sorted(entries))),
        prev_user=obj["prev_user"],
        prev_system=obj["prev_system"],
        curr_user=obj["curr_user"],
        dialogue_id=obj["dialogue_id"],
        turn_index=obj["turn_index"],
    )


def save_pairs(pairs: list[TrainingPair], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in pairs:
            row = {
                "anchor": context_to_json(p.anchor),
                "positive": context_to_json(p.positive),
                "negative": context_to_json(p.negative),
                "pos_f1": p.positive_f1,
                "neg_f1": p.negative_f1,
            }
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def load_pairs(path: str | Path) -> list[TrainingPair]:
    pairs = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            pairs.append(
                TrainingPair(
                    anchor=context_from_json(row["anchor"]),
                    positive=context_from_json(row["positive"]),
                    negative=context_from_json(row["negative"]),
                    positive_f1=row["pos_f1"],
                    negative_f1=row["neg_f1"],
                )
            )
    return pairs
