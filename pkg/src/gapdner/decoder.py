"""Entity decoding from a label grid by path search over boundary nodes.

Every Frag/Gap cell (h, t) becomes a directed edge h -> t+1 between token
boundary nodes 0..n, so consecutive spans chain end-to-start. Each entity
type cell (tail, head) is an anchor; every valid path from node `head` to
node `tail + 1` is one mention. Edges strictly increase, so the graph is a
DAG and no visited set is needed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from gapdner.data import FRAG, GAP, EntityMention
from gapdner.scheme import FRAG_ID, GAP_ID, GridLabelMatrix

DEFAULT_PATH_CAP = 256


class PathLimitError(RuntimeError):
    def __init__(self, anchor, cap):
        self.anchor = anchor
        self.cap = cap
        super().__init__(f"anchor (tail={anchor[0]}, head={anchor[1]}, type={anchor[2]}) has more than {cap} valid paths")


Edge = tuple  # (from_node, to_node, kind)


@dataclass(frozen=True)
class EdgeGraph:
    n: int
    edges: frozenset  # of (from, to, kind)

    def outgoing(self) -> dict[int, list[Edge]]:
        out: dict[int, list[Edge]] = {}
        for e in sorted(self.edges):
            out.setdefault(e[0], []).append(e)
        return out


@dataclass(frozen=True)
class DecodedPath:
    anchor: tuple[int, int, str]
    edges: tuple[Edge, ...]

    def is_valid(self) -> bool:
        kinds = [e[2] for e in self.edges]
        return (
            len(kinds) % 2 == 1
            and all(k == (FRAG if idx % 2 == 0 else GAP) for idx, k in enumerate(kinds))
            and all(self.edges[k][1] == self.edges[k + 1][0] for k in range(len(self.edges) - 1))
        )

    def to_mention(self) -> EntityMention:
        return EntityMention(self.anchor[2], tuple((a, b - 1) for a, b, kind in self.edges if kind == FRAG))


def build_edge_graph(grid: GridLabelMatrix):
    """Return (EdgeGraph, anchors) with anchors sorted as (tail, head, type)."""
    grid.check()
    labels = grid.labels
    edges, anchors = set(), []
    n = grid.n
    for i in range(n):
        for j in range(n):
            lab = int(grid.cells[i, j])
            if lab == FRAG_ID:
                edges.add((i, j + 1, FRAG))
            elif lab == GAP_ID:
                edges.add((i, j + 1, GAP))
            elif labels.is_entity(lab):
                anchors.append((i, j, labels.name_of(lab)))
                if i == j:
                    # one-word entities double as fragment candidates
                    edges.add((i, i + 1, FRAG))
    return EdgeGraph(n, frozenset(edges)), sorted(anchors)


def enumerate_valid_paths(graph: EdgeGraph, anchor, cap: int = DEFAULT_PATH_CAP) -> list[DecodedPath]:
    """Breadth-first search for every alternating Frag/Gap path spanning the anchor."""
    tail, head, _ = anchor
    if head > tail:
        raise ValueError(f"anchor head {head} > tail {tail}")
    goal = tail + 1
    out = graph.outgoing()
    done = []
    # state: (node, kind of last edge, edges so far); the first edge must be Frag
    frontier = deque([(head, GAP, ())])
    while frontier:
        node, last, path = frontier.popleft()
        want = FRAG if last == GAP else GAP
        for edge in out.get(node, ()):
            if edge[2] != want or edge[1] > goal:
                continue
            step = path + (edge,)
            if edge[1] == goal:
                if want == FRAG:
                    done.append(DecodedPath(anchor, step))
                    if len(done) > cap:
                        raise PathLimitError(anchor, cap)
                continue
            frontier.append((edge[1], want, step))
    done.sort(key=lambda p: p.edges)
    return done


def decode_entities(grid: GridLabelMatrix, cap: int = DEFAULT_PATH_CAP) -> set[EntityMention]:
    graph, anchors = build_edge_graph(grid)
    return {p.to_mention() for anchor in anchors for p in enumerate_valid_paths(graph, anchor, cap)}


def brute_force_decode(grid: GridLabelMatrix) -> set[EntityMention]:
    """Reference decoder: all edge sequences by DFS, then filter by the validity rules.

    Exponential; meant for test grids with n <= 12.
    """
    n = grid.n
    edges = []
    anchors = []
    for i in range(n):
        for j in range(n):
            name = grid.labels.name_of(int(grid.cells[i, j]))
            if name in (FRAG, GAP) and i <= j:
                edges.append((i, j + 1, name))
            elif grid.labels.is_entity(int(grid.cells[i, j])) and i >= j:
                anchors.append((i, j, name))
                if i == j:
                    edges.append((i, i + 1, FRAG))

    def walk(node, goal, seq):
        if node == goal:
            yield seq
            return
        for e in edges:
            if e[0] == node:
                yield from walk(e[1], goal, seq + [e])

    found = set()
    for tail, head, etype in anchors:
        for seq in walk(head, tail + 1, []):
            kinds = [e[2] for e in seq]
            if len(kinds) % 2 == 0 or kinds[0] == GAP:
                continue
            if any(kinds[k] == kinds[k + 1] for k in range(len(kinds) - 1)):
                continue
            found.add(EntityMention(etype, tuple((a, b - 1) for a, b, k in seq if k == FRAG)))
    return found
