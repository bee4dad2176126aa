"""Dominator tree and retained sizes of a heap snapshot's reference graph.

All GC roots hang off one synthetic node, ``SUPER_ROOT``. An object is dominated
by ``SUPER_ROOT`` alone exactly when it is reachable along disjoint paths from
different roots.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import networkx as nx

from .errors import UnreachableObject
from .heap import HeapSnapshot, ObjectId

LOGGER = logging.getLogger(__name__)

SUPER_ROOT: ObjectId = -1


@dataclass(frozen=True)
class DominatorTree:
    idom: Mapping[ObjectId, ObjectId]
    reachable: frozenset[ObjectId]

    @cached_property
    def children(self) -> dict[ObjectId, list[ObjectId]]:
        children: dict[ObjectId, list[ObjectId]] = {SUPER_ROOT: []}
        for node in sorted(self.idom):
            children.setdefault(self.idom[node], []).append(node)
        return children

    def preorder(self) -> list[ObjectId]:
        """Reachable objects, each listed after its immediate dominator."""

        order: list[ObjectId] = []
        queue = deque(self.children.get(SUPER_ROOT, []))
        while queue:
            node = queue.popleft()
            order.append(node)
            queue.extend(self.children.get(node, []))
        return order


@dataclass(frozen=True)
class RetainedSizes:
    retained: Mapping[ObjectId, int]

    def __getitem__(self, object_id: ObjectId) -> int:
        return self.retained[object_id]

    def get(self, object_id: ObjectId, default: int = 0) -> int:
        return self.retained.get(object_id, default)


def reference_graph(snapshot: HeapSnapshot) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_node(SUPER_ROOT)
    graph.add_nodes_from(record.id for record in snapshot.objects)
    graph.add_edges_from(
        (record.id, ref)
        for record in snapshot.objects
        for ref in record.refs
        if ref != record.id
    )
    graph.add_edges_from((SUPER_ROOT, root) for root in snapshot.gc_roots)
    return graph


def compute_dominators(snapshot: HeapSnapshot) -> DominatorTree:
    graph = reference_graph(snapshot)
    idom = dict(nx.immediate_dominators(graph, SUPER_ROOT))
    # networkx releases disagree on whether the start node maps to itself.
    idom.pop(SUPER_ROOT, None)
    LOGGER.debug(
        "Snapshot %s: %d of %d objects reachable (%d of %d bytes)",
        snapshot.snapshot_id,
        len(idom),
        len(snapshot.objects),
        snapshot.total_shallow_size(idom),
        snapshot.total_shallow_size(),
    )
    return DominatorTree(idom=idom, reachable=frozenset(idom))


def compute_retained(snapshot: HeapSnapshot, tree: DominatorTree) -> RetainedSizes:
    retained = {node: snapshot.index[node].shallow_size for node in tree.reachable}
    for node in reversed(tree.preorder()):
        parent = tree.idom[node]
        if parent != SUPER_ROOT:
            retained[parent] += retained[node]
    return RetainedSizes(retained=retained)


def dominator_of(tree: DominatorTree, object_id: ObjectId) -> ObjectId:
    try:
        return tree.idom[object_id]
    except KeyError:
        raise UnreachableObject(f"object {object_id} is not reachable from any gc root") from None


def dominator_chain(tree: DominatorTree, object_id: ObjectId) -> list[ObjectId]:
    """Dominators of ``object_id`` from the closest up to and including ``SUPER_ROOT``."""

    chain = [dominator_of(tree, object_id)]
    while chain[-1] != SUPER_ROOT:
        chain.append(tree.idom[chain[-1]])
    return chain


__all__ = [
    "DominatorTree",
    "RetainedSizes",
    "SUPER_ROOT",
    "compute_dominators",
    "compute_retained",
    "dominator_chain",
    "dominator_of",
    "reference_graph",
]
