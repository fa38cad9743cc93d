"""Ranking evaluation: Precision@k, radius-restricted candidate sets,
prevalence baselines, per-project aggregation, and report serialization.

An evaluation walks test diffs; for each one the lexicographically smallest
changed node becomes the anchor, preserved nodes become candidates
(optionally restricted to within a distance threshold of the anchor on the
union graph), and a scorer orders them. Anchors without a single positive
candidate after filtering are skipped and counted.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import ranker as ranker_mod
from .baselines import CoChangeMatrix, rank_cochange, rank_random, semantic_scores
from .dataset import label_pairs
from .errors import NoPositivesError
from .graphs import ModelGraph, Project, union_graph
from .stats import mann_whitney_u, spearman_rho  # noqa: F401  (report-level API)

PREVALENCE_FLOOR = 1e-12


@dataclass(frozen=True)
class RankedList:
    """One anchor's ordered candidates plus the ground-truth positive set."""

    anchor: str
    ordered: tuple[str, ...]
    positives: frozenset[str]
    scores: Optional[dict[str, float]] = None

    def __post_init__(self):
        if len(set(self.ordered)) != len(self.ordered):
            raise ValueError("ranked candidates must be unique")
        if not self.positives <= set(self.ordered):
            raise ValueError("positives must be a subset of the candidates")


def precision_at_k(ranking: RankedList, k: int) -> float:
    """Hits in the top k over min(k, number of positives)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranking.positives:
        raise NoPositivesError(f"anchor {ranking.anchor} has no positive candidates")
    hits = sum(1 for v in ranking.ordered[:k] if v in ranking.positives)
    return hits / min(k, len(ranking.positives))


def dynamic_k(n_candidates: int, fraction: float = 0.01) -> int:
    """Candidate-count-proportional cutoff, never below 1."""
    return max(1, math.ceil(fraction * n_candidates))


def radius_filter(
    graph: ModelGraph, anchor: str, candidates: Sequence[str], tau: Optional[float]
) -> list[str]:
    """Candidates within undirected distance tau of the anchor.

    tau None or infinity is the identity. The threshold is inclusive: tau=1
    keeps exactly the anchor's immediate neighborhood.
    """
    if tau is None or tau == math.inf:
        return list(candidates)
    distances = graph.distances_from(anchor)
    return [v for v in candidates if distances.get(v, math.inf) <= tau]


@dataclass(frozen=True)
class EvalContext:
    """What a scorer may look at for one anchor."""

    project: str
    diff_index: int
    graph: ModelGraph
    labels: Mapping[str, str]


class Scorer:
    """Orders candidates for an anchor; subclasses implement score or order."""

    name = "scorer"

    def scores(self, anchor: str, candidates: Sequence[str], ctx: EvalContext):
        return None

    def order(self, anchor: str, candidates: Sequence[str], ctx: EvalContext) -> list[str]:
        scored = self.scores(anchor, candidates, ctx)
        if scored is None:
            raise NotImplementedError
        return sorted(candidates, key=lambda c: (-scored[c], c))


class NeuralScorer(Scorer):
    """Scores pairs with a trained checkpoint; candidates order by
    descending predicted probability."""

    name = "nextfocus"

    def __init__(self, checkpoint: ranker_mod.Checkpoint, provider):
        self.checkpoint = checkpoint
        self.provider = provider

    def scores(self, anchor, candidates, ctx):
        if not candidates:
            return {}
        texts = [ctx.labels[anchor]] + [ctx.labels[c] for c in candidates]
        embs = self.provider.embed(texts)
        anchor_emb = np.tile(embs[0], (len(candidates), 1))
        probs = ranker_mod.predict_proba(self.checkpoint.params, anchor_emb, embs[1:])
        return {c: float(p) for c, p in zip(candidates, probs)}


class RandomScorer(Scorer):
    name = "random"

    def __init__(self, seed: int):
        self.seed = seed

    def order(self, anchor, candidates, ctx):
        return rank_random(candidates, self.seed, anchor)


class SemanticScorer(Scorer):
    """Cosine similarity between anchor and candidate label embeddings."""

    name = "semantic"

    def __init__(self, provider):
        self.provider = provider

    def scores(self, anchor, candidates, ctx):
        texts = [ctx.labels[anchor]] + [ctx.labels[c] for c in candidates]
        embs = self.provider.embed(texts)
        return semantic_scores(embs[0], {c: embs[i + 1] for i, c in enumerate(candidates)})


class CoChangeScorer(Scorer):
    name = "cochange"

    def __init__(self, matrix: CoChangeMatrix):
        self.matrix = matrix

    def order(self, anchor, candidates, ctx):
        return rank_cochange(self.matrix, anchor, candidates)


@dataclass(frozen=True)
class AnchorResult:
    project: str
    diff_index: int
    ranking: RankedList

    @property
    def anchor(self) -> str:
        return self.ranking.anchor

    @property
    def n_candidates(self) -> int:
        return len(self.ranking.ordered)

    @property
    def n_positives(self) -> int:
        return len(self.ranking.positives)

    @property
    def prevalence(self) -> float:
        return self.n_positives / self.n_candidates

    def precision(self, k: int) -> float:
        return precision_at_k(self.ranking, k)

    def mean_precision(self, ks: Sequence[int]) -> float:
        return sum(self.precision(k) for k in ks) / len(ks)


@dataclass
class EvalReport:
    approach: str
    tau: Optional[float]
    k_max: int
    results: list[AnchorResult] = field(default_factory=list)
    skipped_no_positive: int = 0
    skipped_no_anchor: int = 0

    def ks(self) -> range:
        return range(1, self.k_max + 1)

    def mean_precision(self, k: int) -> float:
        if not self.results:
            return 0.0
        return sum(r.precision(k) for r in self.results) / len(self.results)

    @property
    def prevalence(self) -> float:
        if not self.results:
            return 0.0
        return sum(r.prevalence for r in self.results) / len(self.results)

    def ratio(self, k: int) -> float:
        return self.mean_precision(k) / max(self.prevalence, PREVALENCE_FLOOR)

    def margin(self, k: int) -> float:
        return self.mean_precision(k) - self.prevalence

    def per_anchor_means(self) -> list[float]:
        ks = list(self.ks())
        return [r.mean_precision(ks) for r in self.results]

    def summary(self) -> dict:
        return {
            "approach": self.approach,
            "tau": "inf" if self.tau == math.inf else self.tau,
            "k_max": self.k_max,
            "anchors": len(self.results),
            "skipped_no_positive": self.skipped_no_positive,
            "skipped_no_anchor": self.skipped_no_anchor,
            "prevalence": self.prevalence,
            "precision": {str(k): self.mean_precision(k) for k in self.ks()},
            "ratio": {str(k): self.ratio(k) for k in self.ks()},
            "margin": {str(k): self.margin(k) for k in self.ks()},
            "mean_precision_over_k": (
                sum(self.mean_precision(k) for k in self.ks()) / self.k_max
            ),
        }


def _diff_setting(project: Project, diff_index: int):
    d = project.diff_at(diff_index)
    g_target = project.versions[diff_index + 1]
    g_union = union_graph(project.versions[diff_index], g_target)
    return d, g_target, g_union


def evaluate(
    scorer: Scorer,
    corpus: Mapping[str, Project],
    items: Sequence[tuple[str, int]],
    k_max: int = 10,
    tau: Optional[float] = None,
) -> EvalReport:
    """Run one scorer over (project, diff_index) test items."""
    report = EvalReport(approach=scorer.name, tau=tau, k_max=k_max)
    for name, diff_index in items:
        project = corpus[name]
        d, g_target, g_union = _diff_setting(project, diff_index)
        changed = sorted(d.changed_nodes())
        if not changed:
            report.skipped_no_anchor += 1
            continue
        anchor = changed[0]
        pairs = label_pairs(d, g_target, [anchor], project=name)
        kept = set(radius_filter(g_union, anchor, [p.candidate for p in pairs], tau))
        candidates = [p.candidate for p in pairs if p.candidate in kept]
        positives = frozenset(p.candidate for p in pairs if p.label == 1 and p.candidate in kept)
        if not positives:
            report.skipped_no_positive += 1
            continue
        ctx = EvalContext(
            project=name,
            diff_index=diff_index,
            graph=g_union,
            labels={v: g_union.label(v) for v in [anchor] + candidates},
        )
        scored = scorer.scores(anchor, candidates, ctx)
        if scored is not None:
            ordered = sorted(candidates, key=lambda c: (-scored[c], c))
        else:
            ordered = scorer.order(anchor, candidates, ctx)
        if sorted(ordered) != sorted(candidates):
            raise ValueError(f"{scorer.name} did not return a permutation of the candidates")
        ranking = RankedList(
            anchor=anchor,
            ordered=tuple(ordered),
            positives=positives,
            scores=scored,
        )
        report.results.append(AnchorResult(project=name, diff_index=diff_index, ranking=ranking))
    return report


def aggregate_by_project(
    results: Sequence[AnchorResult],
    ks: Sequence[int] = tuple(range(1, 11)),
    dynamic: bool = False,
    dynamic_fraction: float = 0.01,
) -> dict:
    """Mean precision per project (unweighted over anchors), then the
    overall mean over projects; optionally also at a per-anchor dynamic k."""
    by_project: dict[str, list[AnchorResult]] = {}
    for r in results:
        by_project.setdefault(r.project, []).append(r)
    projects = {}
    for name in sorted(by_project):
        group = by_project[name]
        entry = {
            str(k): sum(r.precision(k) for r in group) / len(group) for k in ks
        }
        if dynamic:
            entry["dynamic"] = sum(
                r.precision(dynamic_k(r.n_candidates, dynamic_fraction)) for r in group
            ) / len(group)
        projects[name] = entry
    n = len(projects)
    overall = {}
    if n:
        keys = [str(k) for k in ks] + (["dynamic"] if dynamic else [])
        overall = {key: sum(projects[p][key] for p in projects) / n for key in keys}
    return {"projects": projects, "overall": overall}


def report_to_csv(report: EvalReport) -> str:
    """One row per anchor per k, plus per-anchor context columns."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([
        "approach", "tau", "project", "diff", "anchor",
        "k", "precision", "n_candidates", "n_positives", "prevalence",
    ])
    tau_text = "inf" if report.tau == math.inf else ("" if report.tau is None else report.tau)
    for r in report.results:
        for k in report.ks():
            writer.writerow([
                report.approach, tau_text, r.project, r.diff_index, r.anchor,
                k, repr(r.precision(k)), r.n_candidates, r.n_positives,
                repr(r.prevalence),
            ])
    return buf.getvalue()


def radius_rows(reports: Sequence[EvalReport], ks: Sequence[int]) -> list[dict]:
    """Flat (tau, k, precision, prevalence, ratio, margin) series for plots."""
    rows = []
    for report in reports:
        for k in ks:
            rows.append({
                "tau": "inf" if report.tau in (None, math.inf) else report.tau,
                "k": k,
                "precision": report.mean_precision(k),
                "prevalence": report.prevalence,
                "ratio": report.ratio(k),
                "margin": report.margin(k),
            })
    return rows


def radius_rows_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["tau", "k", "precision", "prevalence", "ratio", "margin"])
    for row in rows:
        writer.writerow([
            row["tau"], row["k"], repr(row["precision"]), repr(row["prevalence"]),
            repr(row["ratio"]), repr(row["margin"]),
        ])
    return buf.getvalue()
