"""Versioned model graphs: structural diffs, distances, and change dispersion.

A model version is a labeled directed graph. Nodes carry stable string ids
(identity-based matching across versions) and a text label; edges are
identified by their (src, dst, label) triple and have no identity beyond it.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, Union

from .errors import UnknownNodeError

logger = logging.getLogger(__name__)

NodeId = str
EdgeKey = tuple[str, str, str]

#: Distance value for node pairs in different components.
INFINITE = math.inf


class ModelGraph:
    """One immutable model version: labeled nodes plus labeled directed edges.

    Raises ValueError when an edge endpoint is missing, a node id repeats,
    or the same (src, dst, label) triple appears twice.
    """

    __slots__ = ("_labels", "_edges", "_succ", "_undirected")

    def __init__(
        self,
        nodes: Iterable[tuple[str, str]] | Mapping[str, str],
        edges: Iterable[EdgeKey] = (),
    ):
        if isinstance(nodes, Mapping):
            labels = dict(nodes)
        else:
            labels: dict[str, str] = {}
            for node_id, label in nodes:
                if node_id in labels:
                    raise ValueError(f"duplicate node id {node_id!r}")
                labels[node_id] = label
        for node_id in labels:
            if not node_id:
                raise ValueError("node ids must be non-empty")

        edge_set: set[EdgeKey] = set()
        succ: dict[str, set[str]] = {node_id: set() for node_id in labels}
        undirected: dict[str, set[str]] = {node_id: set() for node_id in labels}
        for src, dst, label in edges:
            if src not in labels:
                raise ValueError(f"edge source {src!r} not a node")
            if dst not in labels:
                raise ValueError(f"edge target {dst!r} not a node")
            key = (src, dst, label)
            if key in edge_set:
                raise ValueError(f"duplicate edge {key!r}")
            edge_set.add(key)
            succ[src].add(dst)
            undirected[src].add(dst)
            undirected[dst].add(src)

        self._labels = labels
        self._edges = frozenset(edge_set)
        self._succ = succ
        self._undirected = undirected

    @property
    def node_ids(self) -> set[str]:
        return set(self._labels)

    @property
    def edges(self) -> frozenset[EdgeKey]:
        return self._edges

    def label(self, node_id: str) -> str:
        try:
            return self._labels[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def labels(self) -> dict[str, str]:
        return dict(self._labels)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._labels

    def __len__(self) -> int:
        return len(self._labels)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelGraph):
            return NotImplemented
        return self._labels == other._labels and self._edges == other._edges

    def __repr__(self) -> str:
        return f"ModelGraph(nodes={len(self._labels)}, edges={len(self._edges)})"

    def successors(self, node_id: str) -> set[str]:
        if node_id not in self._labels:
            raise UnknownNodeError(node_id)
        return set(self._succ[node_id])

    def neighbors(self, node_id: str) -> set[str]:
        """Undirected adjacency, used for distance computations."""
        if node_id not in self._labels:
            raise UnknownNodeError(node_id)
        return set(self._undirected[node_id])

    def distances_from(self, source: str) -> dict[str, int]:
        """Hop counts from `source` to every reachable node, edges undirected."""
        if source not in self._labels:
            raise UnknownNodeError(source)
        dist = {source: 0}
        queue = deque([source])
        while queue:
            current = queue.popleft()
            for nxt in self._undirected[current]:
                if nxt not in dist:
                    dist[nxt] = dist[current] + 1
                    queue.append(nxt)
        return dist


def succ(g: ModelGraph, v: str) -> set[str]:
    """Direct successors of v: nodes reachable via one outgoing edge."""
    return g.successors(v)


def distance(g: ModelGraph, u: str, v: str) -> float:
    """Shortest-path hop count between u and v on the undirected view.

    Dispersion of a change is a locality notion, so edge direction is
    ignored. Returns INFINITE for nodes in different components.
    """
    if v not in g:
        raise UnknownNodeError(v)
    return g.distances_from(u).get(v, INFINITE)


@dataclass(frozen=True, order=True)
class ElementRef:
    """Reference to one diffable element: a node id or an edge triple."""

    kind: str  # "node" | "edge"
    key: Union[str, EdgeKey]

    @staticmethod
    def node(node_id: str) -> "ElementRef":
        return ElementRef("node", node_id)

    @staticmethod
    def edge(src: str, dst: str, label: str) -> "ElementRef":
        return ElementRef("edge", (src, dst, label))


@dataclass(frozen=True)
class StructuralDiff:
    """Partition of two versions' elements into changed and preserved sets.

    A node present in only one version, or present in both with different
    labels, is changed; an edge is changed when its triple exists in exactly
    one version. Everything else is preserved.
    """

    changed: frozenset[ElementRef]
    preserved: frozenset[ElementRef]
    source_version: int
    target_version: int

    def changed_nodes(self) -> set[str]:
        return {ref.key for ref in self.changed if ref.kind == "node"}

    def preserved_nodes(self) -> set[str]:
        return {ref.key for ref in self.preserved if ref.kind == "node"}

    def involved_nodes(self) -> set[str]:
        """Changed nodes plus endpoints of changed edges."""
        nodes = set()
        for ref in self.changed:
            if ref.kind == "node":
                nodes.add(ref.key)
            else:
                src, dst, _ = ref.key
                nodes.add(src)
                nodes.add(dst)
        return nodes


def diff(m: ModelGraph, n: ModelGraph, source_version: int = 0, target_version: int = 1) -> StructuralDiff:
    """Structural difference between versions m and n, matched by identifier."""
    m_labels = m.labels()
    n_labels = n.labels()
    changed: set[ElementRef] = set()
    preserved: set[ElementRef] = set()

    for node_id in set(m_labels) | set(n_labels):
        in_m = node_id in m_labels
        in_n = node_id in n_labels
        if in_m and in_n and m_labels[node_id] == n_labels[node_id]:
            preserved.add(ElementRef.node(node_id))
        else:
            changed.add(ElementRef.node(node_id))

    for key in m.edges | n.edges:
        if key in m.edges and key in n.edges:
            preserved.add(ElementRef.edge(*key))
        else:
            changed.add(ElementRef.edge(*key))

    return StructuralDiff(
        changed=frozenset(changed),
        preserved=frozenset(preserved),
        source_version=source_version,
        target_version=target_version,
    )


def union_graph(m: ModelGraph, n: ModelGraph) -> ModelGraph:
    """Union of two versions, for distance queries spanning both.

    Labels are irrelevant to distances; where a node's label differs the
    target version wins.
    """
    labels = m.labels()
    labels.update(n.labels())
    return ModelGraph(labels, m.edges | n.edges)


@dataclass(frozen=True)
class ChangeRadius:
    """Size c and dispersion s of a change set.

    c counts changed elements (nodes and edges); s is the maximum pairwise
    shortest-path distance among involved nodes, INFINITE when the involved
    nodes span more than one component.
    """

    c: int
    s: float

    @property
    def is_multi_location(self) -> bool:
        return self.c > 1 and self.s > 1


def change_radius(g_union: ModelGraph, d: StructuralDiff) -> ChangeRadius:
    """Compute (c, s) for a diff on the union graph of its two versions."""
    involved = sorted(d.involved_nodes())
    for node_id in involved:
        if node_id not in g_union:
            raise UnknownNodeError(node_id)
    c = len(d.changed)
    if len(involved) <= 1:
        return ChangeRadius(c=c, s=0)
    s: float = 0
    for i, u in enumerate(involved):
        dist = g_union.distances_from(u)
        for v in involved[i + 1:]:
            s = max(s, dist.get(v, INFINITE))
            if s == INFINITE:
                return ChangeRadius(c=c, s=INFINITE)
    return ChangeRadius(c=c, s=s)


@dataclass
class Project:
    """A named project: its model versions in commit order, oldest first."""

    name: str
    versions: list[ModelGraph] = field(default_factory=list)

    @property
    def n_diffs(self) -> int:
        return max(0, len(self.versions) - 1)

    def diff_at(self, index: int) -> StructuralDiff:
        """Diff between versions index and index+1."""
        return diff(self.versions[index], self.versions[index + 1],
                    source_version=index, target_version=index + 1)

    def iter_diffs(self) -> Iterator[tuple[int, StructuralDiff]]:
        for index in range(self.n_diffs):
            yield index, self.diff_at(index)


def _clean_version(raw: dict, project: str, version_index: int) -> ModelGraph:
    """Build a graph from one raw version record, dropping malformed entries.

    Malformed node/edge records and edges with missing endpoints are skipped
    and counted in a log message rather than aborting the load.
    """
    labels: dict[str, str] = {}
    bad_nodes = 0
    for entry in raw.get("nodes", []):
        node_id = entry.get("id") if isinstance(entry, dict) else None
        label = entry.get("label") if isinstance(entry, dict) else None
        if not isinstance(node_id, str) or not node_id or not isinstance(label, str):
            bad_nodes += 1
            continue
        if node_id in labels:
            bad_nodes += 1
            continue
        labels[node_id] = label

    edges: set[EdgeKey] = set()
    bad_edges = 0
    for entry in raw.get("edges", []):
        src = entry.get("src") if isinstance(entry, dict) else None
        dst = entry.get("dst") if isinstance(entry, dict) else None
        label = entry.get("label") if isinstance(entry, dict) else None
        ok = (isinstance(src, str) and isinstance(dst, str) and isinstance(label, str)
              and src in labels and dst in labels and (src, dst, label) not in edges)
        if not ok:
            bad_edges += 1
            continue
        edges.add((src, dst, label))

    if bad_nodes or bad_edges:
        logger.warning(
            "project %s version %d: dropped %d malformed node and %d malformed edge entries",
            project, version_index, bad_nodes, bad_edges,
        )
    return ModelGraph(labels, edges)


def load_project(path) -> Project:
    """Read a project file: {"project": id, "versions": [{nodes, edges}, ...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    name = raw.get("project")
    if not isinstance(name, str) or not name:
        raise ValueError(f"{path}: missing project id")
    versions = [
        _clean_version(entry, name, i)
        for i, entry in enumerate(raw.get("versions", []))
    ]
    return Project(name=name, versions=versions)


def save_project(project: Project, path) -> None:
    """Write a project file in the format load_project reads."""
    payload = {
        "project": project.name,
        "versions": [
            {
                "nodes": [
                    {"id": node_id, "label": label}
                    for node_id, label in sorted(g.labels().items())
                ],
                "edges": [
                    {"src": src, "dst": dst, "label": label}
                    for src, dst, label in sorted(g.edges)
                ],
            }
            for g in project.versions
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_corpus(paths: Sequence) -> dict[str, Project]:
    """Load several project files into a name-keyed corpus."""
    corpus: dict[str, Project] = {}
    for path in paths:
        project = load_project(path)
        if project.name in corpus:
            raise ValueError(f"duplicate project id {project.name!r}")
        corpus[project.name] = project
    return corpus
