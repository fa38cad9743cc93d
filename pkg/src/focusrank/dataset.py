"""Labeled anchor/candidate pairs, timeline-respecting splits, and balancing.

A pair (anchor, candidate) from one diff is positive when the candidate is a
preserved node with at least one direct successor among the diff's changed
nodes, evaluated on the target-version graph so that added successors count.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import (
    EmptyAnchorSetError,
    EmptyProjectError,
    TooFewCommitsError,
    TooFewProjectsError,
)
from .graphs import ModelGraph, StructuralDiff

PairKey = tuple[str, int]  # (project, diff_index)


@dataclass(frozen=True)
class LabeledPair:
    project: str
    diff_index: int
    anchor: str
    candidate: str
    label: int

    def to_record(self) -> dict:
        return {
            "project": self.project,
            "diff": self.diff_index,
            "anchor": self.anchor,
            "candidate": self.candidate,
            "label": self.label,
        }

    @staticmethod
    def from_record(record: Mapping) -> "LabeledPair":
        return LabeledPair(
            project=record["project"],
            diff_index=int(record["diff"]),
            anchor=record["anchor"],
            candidate=record["candidate"],
            label=int(record["label"]),
        )


def label_pairs(
    d: StructuralDiff,
    g_target: ModelGraph,
    anchors: Iterable[str],
    project: str = "",
) -> list[LabeledPair]:
    """Label every (anchor, preserved candidate) pair of one diff.

    Anchors must be changed nodes of the diff. A candidate is positive iff
    one of its direct successors in the target graph is a changed node.
    """
    anchors = set(anchors)
    if not anchors:
        raise EmptyAnchorSetError("no anchor nodes")
    changed_nodes = d.changed_nodes()
    stray = anchors - changed_nodes
    if stray:
        raise ValueError(f"anchors are not changed nodes: {sorted(stray)}")

    candidates = sorted(d.preserved_nodes())
    candidate_label = {
        v: int(bool(g_target.successors(v) & changed_nodes)) for v in candidates
    }

    pairs = []
    for anchor in sorted(anchors):
        for candidate in candidates:
            if candidate == anchor:
                continue
            pairs.append(
                LabeledPair(
                    project=project,
                    diff_index=d.source_version,
                    anchor=anchor,
                    candidate=candidate,
                    label=candidate_label[candidate],
                )
            )
    return pairs


@dataclass
class DatasetSplit:
    """Partition of (project, diff_index) keys into train/validation/test."""

    train: list[PairKey]
    validation: list[PairKey]
    test: list[PairKey]
    mode: str  # "temporal" | "cross_project"

    def to_manifest(self) -> dict:
        return {
            "mode": self.mode,
            "train": [list(key) for key in self.train],
            "validation": [list(key) for key in self.validation],
            "test": [list(key) for key in self.test],
        }

    @staticmethod
    def from_manifest(record: Mapping) -> "DatasetSplit":
        return DatasetSplit(
            train=[(p, int(i)) for p, i in record["train"]],
            validation=[(p, int(i)) for p, i in record["validation"]],
            test=[(p, int(i)) for p, i in record["test"]],
            mode=record["mode"],
        )


def split_temporal(project_diffs: Sequence[PairKey]) -> DatasetSplit:
    """Per project: all diffs but the last two train, then one val, one test.

    Requires at least three diffs per project so each partition is non-empty.
    """
    by_project: dict[str, list[int]] = {}
    for project, index in project_diffs:
        by_project.setdefault(project, []).append(index)

    train: list[PairKey] = []
    validation: list[PairKey] = []
    test: list[PairKey] = []
    for project in sorted(by_project):
        indices = sorted(by_project[project])
        n = len(indices)
        if n < 3:
            raise TooFewCommitsError(f"project {project}: {n} diffs, need >= 3")
        train.extend((project, i) for i in indices[: n - 2])
        validation.append((project, indices[n - 2]))
        test.append((project, indices[n - 1]))
    return DatasetSplit(train=train, validation=validation, test=test, mode="temporal")


def split_cross_project(
    projects: Mapping[str, int] | Sequence[tuple[str, int]],
    folds: int,
    seed: int,
) -> list[DatasetSplit]:
    """Fold projects into disjoint test groups of ceil(n/folds) projects each.

    `projects` maps project id to its diff count. Train diffs come from the
    remaining projects, except each train project's last diff, which forms
    the validation set. Deterministic given the seed.
    """
    counts = dict(projects)
    names = sorted(counts)
    if folds < 2:
        raise TooFewProjectsError(f"folds must be >= 2, got {folds}")
    if len(names) < folds:
        raise TooFewProjectsError(f"{len(names)} projects for {folds} folds")

    rng = random.Random(f"cross:{seed}")
    rng.shuffle(names)
    group_size = math.ceil(len(names) / folds)

    splits = []
    for fold in range(folds):
        held_out = set(names[fold * group_size : (fold + 1) * group_size])
        if not held_out:
            break
        train: list[PairKey] = []
        validation: list[PairKey] = []
        test: list[PairKey] = []
        for project in sorted(counts):
            indices = list(range(counts[project]))
            if project in held_out:
                test.extend((project, i) for i in indices)
            elif indices:
                train.extend((project, i) for i in indices[:-1])
                validation.append((project, indices[-1]))
        splits.append(
            DatasetSplit(train=train, validation=validation, test=test, mode="cross_project")
        )
    return splits


@dataclass(frozen=True)
class BalanceConfig:
    target_pairs_per_project: int
    seed: int

    def __post_init__(self):
        if self.target_pairs_per_project <= 0:
            raise ValueError("target_pairs_per_project must be positive")


def balance(
    pairs_by_project: Mapping[str, Sequence[LabeledPair]],
    cfg: BalanceConfig,
) -> list[LabeledPair]:
    """Resample each project's pairs to exactly the configured size.

    Over-sized groups are down-sampled without replacement (original order
    kept); under-sized groups are up-sampled with replacement. Output is
    concatenated by sorted project id, deterministic given the seed.
    """
    out: list[LabeledPair] = []
    target = cfg.target_pairs_per_project
    for project in sorted(pairs_by_project):
        group = list(pairs_by_project[project])
        if not group:
            raise EmptyProjectError(project)
        rng = random.Random(f"balance:{cfg.seed}:{project}")
        n = len(group)
        if n == target:
            chosen = group
        elif n > target:
            keep = sorted(rng.sample(range(n), target))
            chosen = [group[i] for i in keep]
        else:
            chosen = [group[rng.randrange(n)] for _ in range(target)]
        out.extend(chosen)
    return out


def group_by_project(pairs: Iterable[LabeledPair]) -> dict[str, list[LabeledPair]]:
    groups: dict[str, list[LabeledPair]] = {}
    for pair in pairs:
        groups.setdefault(pair.project, []).append(pair)
    return groups


def save_pairs(pairs: Iterable[LabeledPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_record(), sort_keys=True))
            fh.write("\n")


def load_pairs(path) -> list[LabeledPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                pairs.append(LabeledPair.from_record(json.loads(line)))
    return pairs


def save_split(split: DatasetSplit, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_manifest(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_split(path) -> DatasetSplit:
    with open(path, "r", encoding="utf-8") as fh:
        return DatasetSplit.from_manifest(json.load(fh))
