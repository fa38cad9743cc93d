"""Comparison rankers: random order, label-embedding similarity, and
historical co-change frequency.

Every ranker returns a permutation of the candidate ids. Ties always break
by ascending node id so rankings are reproducible.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import LabeledPair
from .errors import EmptyCandidatesError
from .graphs import StructuralDiff


def rank_random(candidates: Sequence[str], seed: int, anchor: str = "") -> list[str]:
    """Uniform permutation, deterministic per (seed, anchor)."""
    ids = sorted(candidates)
    if not ids:
        raise EmptyCandidatesError("cannot rank an empty candidate set")
    rng = random.Random(f"random:{seed}:{anchor}")
    rng.shuffle(ids)
    return ids


def semantic_scores(
    anchor_emb: np.ndarray, candidate_embs: Mapping[str, np.ndarray]
) -> dict[str, float]:
    """Cosine against the anchor; zero vectors score a sentinel below -1 so
    they always land after every defined similarity."""
    anchor = np.asarray(anchor_emb, dtype=np.float64)
    anchor_norm = float(np.linalg.norm(anchor))
    scores: dict[str, float] = {}
    for node_id, emb in candidate_embs.items():
        vec = np.asarray(emb, dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if anchor_norm == 0.0 or norm == 0.0:
            scores[node_id] = -2.0
        else:
            scores[node_id] = float(anchor @ vec) / (anchor_norm * norm)
    return scores


def rank_semantic(
    anchor_emb: np.ndarray, candidate_embs: Mapping[str, np.ndarray]
) -> list[str]:
    """Descending cosine similarity to the anchor embedding."""
    scores = semantic_scores(anchor_emb, candidate_embs)
    return sorted(scores, key=lambda node_id: (-scores[node_id], node_id))


@dataclass(frozen=True)
class CoChangeMatrix:
    """Sparse (anchor, candidate) -> count map; absent keys count 0."""

    _counts: dict

    def count(self, anchor: str, candidate: str) -> int:
        return self._counts.get((anchor, candidate), 0)

    def counts(self) -> dict[tuple[str, str], int]:
        return dict(self._counts)

    def __len__(self) -> int:
        return len(self._counts)


def build_cochange(train_pairs: Iterable[LabeledPair]) -> CoChangeMatrix:
    """Count, per anchor, how often each candidate was a positive across the
    training diffs (same positive definition as the training labels)."""
    counts: dict[tuple[str, str], int] = {}
    for pair in train_pairs:
        if pair.label == 1:
            key = (pair.anchor, pair.candidate)
            counts[key] = counts.get(key, 0) + 1
    return CoChangeMatrix(counts)


def build_cochange_literal(train_diffs: Iterable[StructuralDiff]) -> CoChangeMatrix:
    """Count ordered pairs of nodes that changed within the same diff.

    The literal changed-with-changed reading; candidates queried at ranking
    time are preserved nodes, so this variant mostly returns zero counts and
    exists for comparison.
    """
    counts: dict[tuple[str, str], int] = {}
    for d in train_diffs:
        changed = sorted(d.changed_nodes())
        for a in changed:
            for b in changed:
                if a != b:
                    counts[(a, b)] = counts.get((a, b), 0) + 1
    return CoChangeMatrix(counts)


def rank_cochange(
    matrix: CoChangeMatrix, anchor: str, candidates: Sequence[str]
) -> list[str]:
    """Descending historical count; zero-count candidates trail in id order."""
    return sorted(candidates, key=lambda c: (-matrix.count(anchor, c), c))


def save_cochange(matrix: CoChangeMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (anchor, candidate), count in sorted(matrix.counts().items()):
            fh.write(json.dumps(
                {"anchor": anchor, "candidate": candidate, "count": count},
                sort_keys=True,
            ))
            fh.write("\n")


def load_cochange(path) -> CoChangeMatrix:
    counts: dict[tuple[str, str], int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            counts[(record["anchor"], record["candidate"])] = int(record["count"])
    return CoChangeMatrix(counts)
