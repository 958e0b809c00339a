"""
Smell taxonomy from the co-occurrence network.

The initial partition minimizes the two-level map equation (Infomap); clusters
that are too large to be semantically homogeneous are split again by Louvain
modularity optimization; sibling sub-communities can then be merged by hand
through a merge spec, and top-level communities get category labels.

Both optimizers share one local-moving + aggregation engine. Nodes are visited
in a seeded shuffle per pass, equal-gain moves go to the lowest community id,
and a move is only accepted when it strictly improves the objective.
Louvain results then pass through a vertex mover that may take losing moves
on the way to a better state.
"""

import copy
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Hashable, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from networkx.algorithms.community import modularity as nx_modularity

from utils import PathLike, StatisticsError, ValidationError, read_json, write_json

logger = logging.getLogger("smellscape")

Partition = Dict[Hashable, int]

MAX_DEPTH = 4
EPS = 1e-12


class HierarchyError(ValidationError):
    """A taxonomy operation would break the hierarchy invariants"""


def _plogp(x: float) -> float:
    return x * math.log2(x) if x > 0 else 0.0


def _sorted_nodes(graph: nx.Graph) -> List[Hashable]:
    return sorted(graph.nodes, key=str)


def _weight(data: Mapping[str, Any]) -> float:
    return float(data.get("weight", 1.0))


def dense_partition(labels: Mapping[Hashable, Hashable], order: Sequence[Hashable]) -> Partition:
    """Renumber community labels 0..k-1 by first appearance along `order`"""
    remap: Dict[Hashable, int] = {}
    out: Partition = {}
    for node in order:
        out[node] = remap.setdefault(labels[node], len(remap))
    return out


def communities_of(partition: Partition) -> List[List[Hashable]]:
    groups: Dict[int, List[Hashable]] = defaultdict(list)
    for node, c in partition.items():
        groups[c].append(node)
    return [sorted(groups[c], key=str) for c in sorted(groups)]


def _check_partition(graph: nx.Graph, partition: Mapping[Hashable, Hashable]) -> None:
    missing = [n for n in graph.nodes if n not in partition]
    if missing:
        raise ValidationError(f"partition does not assign {len(missing)} nodes, e.g. {missing[:3]}")


def visit_rates(graph: nx.Graph) -> Dict[Hashable, float]:
    """Stationary visit rates of an undirected random walk: weighted degree / total degree"""
    degree = {n: float(d) for n, d in graph.degree(weight="weight")}
    total = sum(degree.values())
    if total <= 0:
        return {n: 1.0 / graph.number_of_nodes() for n in graph.nodes}
    return {n: d / total for n, d in degree.items()}


def map_equation(graph: nx.Graph, partition: Mapping[Hashable, Hashable]) -> float:
    """
    Two-level map equation codelength of a partition, in bits.

    L(M) = q H(Q) + sum_i p_i H(P_i), with visit rates proportional to weighted
    degree and module exit rates from inter-module edge weight.
    """
    if graph.number_of_nodes() == 0:
        raise StatisticsError("map equation is undefined for an empty graph")
    _check_partition(graph, partition)
    rates = visit_rates(graph)
    two_m = 2.0 * graph.size(weight="weight")
    exit_flow: Dict[Hashable, float] = defaultdict(float)
    module_flow: Dict[Hashable, float] = defaultdict(float)
    for node, p in rates.items():
        module_flow[partition[node]] += p
    if two_m > 0:
        for u, v, data in graph.edges(data=True):
            if u != v and partition[u] != partition[v]:
                w = _weight(data) / two_m
                exit_flow[partition[u]] += w
                exit_flow[partition[v]] += w
    node_term = sum(_plogp(p) for p in rates.values())
    q_total = sum(exit_flow.values())
    codelength = (
        _plogp(q_total)
        - 2.0 * sum(_plogp(q) for q in exit_flow.values())
        - node_term
        + sum(_plogp(exit_flow[m] + module_flow[m]) for m in module_flow)
    )
    return max(codelength, 0.0)


def modularity(graph: nx.Graph, partition: Mapping[Hashable, Hashable]) -> float:
    """Newman-Girvan weighted modularity Q of a partition"""
    if graph.size(weight="weight") <= 0:
        raise StatisticsError("modularity is undefined for a graph without edge weight")
    _check_partition(graph, partition)
    groups: Dict[Hashable, set] = defaultdict(set)
    for node in graph.nodes:
        groups[partition[node]].add(node)
    return float(nx_modularity(graph, list(groups.values()), weight="weight"))


class _Level:
    """One level of the coarsening hierarchy: supernodes with weighted links"""

    def __init__(self, adj: List[Dict[int, float]], loops: List[float], flow: List[float], members: List[List[int]]):
        self.adj = adj
        self.loops = loops
        self.flow = flow
        self.members = members
        self.n = len(adj)
        self.degree = [sum(a.values()) + 2.0 * loops[i] for i, a in enumerate(adj)]
        self.two_m = sum(self.degree)

    @classmethod
    def from_graph(cls, graph: nx.Graph, order: Sequence[Hashable]) -> "_Level":
        index = {node: i for i, node in enumerate(order)}
        adj: List[Dict[int, float]] = [dict() for _ in order]
        loops = [0.0] * len(order)
        for node in order:
            i = index[node]
            for nbr in sorted(graph[node], key=str):
                w = _weight(graph[node][nbr])
                if nbr == node:
                    loops[i] += w
                else:
                    adj[i][index[nbr]] = w
        rates = visit_rates(graph)
        return cls(adj, loops, [rates[n] for n in order], [[i] for i in range(len(order))])

    def aggregate(self, labels: List[int]) -> "_Level":
        k = max(labels) + 1
        adj: List[Dict[int, float]] = [defaultdict(float) for _ in range(k)]
        loops = [0.0] * k
        flow = [0.0] * k
        members: List[List[int]] = [[] for _ in range(k)]
        for u in range(self.n):
            cu = labels[u]
            loops[cu] += self.loops[u]
            flow[cu] += self.flow[u]
            members[cu].extend(self.members[u])
            for v, w in self.adj[u].items():
                cv = labels[v]
                if cu == cv:
                    if u < v:
                        loops[cu] += w
                else:
                    adj[cu][cv] += w
        return _Level([dict(a) for a in adj], loops, flow, members)


def _dense(labels: List[int]) -> List[int]:
    remap: Dict[int, int] = {}
    return [remap.setdefault(c, len(remap)) for c in labels]


def _neighbor_weights(level: _Level, u: int, labels: List[int]) -> Dict[int, float]:
    weights: Dict[int, float] = defaultdict(float)
    for v, w in level.adj[u].items():
        weights[labels[v]] += w
    return weights


class _Modules:
    """Module sizes plus the sorted pool of unused module ids"""

    def __init__(self, n: int, labels: List[int]):
        self.size: Dict[int, int] = defaultdict(int)
        for c in labels:
            self.size[c] += 1
        self.empty = sorted(set(range(n)) - set(self.size))

    def spare(self, current: int) -> Optional[int]:
        """An empty module to move into, unless the node already sits alone"""
        if self.empty and self.size[current] > 1:
            return self.empty[0]
        return None

    def move(self, a: int, b: int) -> None:
        self.size[a] -= 1
        self.size[b] += 1
        if self.empty and b == self.empty[0]:
            self.empty.pop(0)
        if self.size[a] == 0:
            self.empty.append(a)
            self.empty.sort()


class _ModularityObjective:
    name = "modularity"

    def local_moving(self, level: _Level, labels: List[int], rng: np.random.Generator) -> bool:
        if level.two_m <= 0:
            return False
        m2 = level.two_m
        tot: Dict[int, float] = defaultdict(float)
        for u in range(level.n):
            tot[labels[u]] += level.degree[u]
        modules = _Modules(level.n, labels)
        moved_any = False
        while True:
            moved = False
            for u in rng.permutation(level.n):
                u = int(u)
                a = labels[u]
                k = level.degree[u]
                tot[a] -= k
                weights = _neighbor_weights(level, u, labels)
                gains = {c: weights.get(c, 0.0) - tot[c] * k / m2 for c in set(weights) | {a}}
                spare = modules.spare(a)
                if spare is not None:
                    gains[spare] = 0.0
                b = _best_move(gains, a, maximize=True)
                tot[b] += k
                if b != a:
                    labels[u] = b
                    modules.move(a, b)
                    moved = moved_any = True
            if not moved:
                return moved_any

    def refine(self, level: _Level, labels: List[int]) -> List[int]:
        """
        Vertex mover in the Kernighan-Lin manner.

        A sweep moves every node exactly once, each time taking the best
        remaining single-node move even when it lowers modularity, and keeps
        the best state it passed through. Sweeps repeat while they gain.
        """
        labels = _dense(labels)
        if level.two_m <= 0:
            return labels
        m2 = level.two_m
        while True:
            current = list(labels)
            tot: Dict[int, float] = defaultdict(float)
            size: Dict[int, int] = defaultdict(int)
            for u in range(level.n):
                tot[current[u]] += level.degree[u]
                size[current[u]] += 1
            fresh = max(current) + 1
            moved = [False] * level.n
            gained, best_gain, best_state = 0.0, 0.0, None
            for _ in range(level.n):
                choice = None
                for u in range(level.n):
                    if moved[u]:
                        continue
                    a = current[u]
                    k = level.degree[u]
                    weights = _neighbor_weights(level, u, current)
                    w_a = weights.get(a, 0.0)
                    targets = set(weights) - {a}
                    if size[a] > 1:
                        targets.add(fresh)
                    for b in sorted(targets):
                        delta = 2.0 * (weights.get(b, 0.0) - w_a) / m2 - 2.0 * k * (tot[b] - tot[a] + k) / (m2 * m2)
                        if choice is None or delta > choice[0] + EPS:
                            choice = (delta, u, b)
                if choice is None:
                    break
                delta, u, b = choice
                a = current[u]
                tot[a] -= level.degree[u]
                tot[b] += level.degree[u]
                size[a] -= 1
                size[b] += 1
                if b == fresh:
                    fresh += 1
                current[u] = b
                moved[u] = True
                gained += delta
                if gained > best_gain + EPS:
                    best_gain, best_state = gained, list(current)
            if best_state is None:
                return labels
            labels = _dense(best_state)

    def score(self, graph: nx.Graph, partition: Partition) -> float:
        return modularity(graph, partition)


class _MapEquationObjective:
    name = "map equation"

    def local_moving(self, level: _Level, labels: List[int], rng: np.random.Generator) -> bool:
        if level.two_m <= 0:
            return False
        m2 = level.two_m
        exit_node = [sum(level.adj[u].values()) / m2 for u in range(level.n)]
        moved_any = False
        while True:
            q: Dict[int, float] = defaultdict(float)
            flow: Dict[int, float] = defaultdict(float)
            for u in range(level.n):
                flow[labels[u]] += level.flow[u]
                for v, w in level.adj[u].items():
                    if labels[v] != labels[u]:
                        q[labels[u]] += w / m2
            sum_q = sum(q.values())
            sum_plogp_q = sum(_plogp(x) for x in q.values())
            sum_plogp_qp = sum(_plogp(q[c] + flow[c]) for c in flow)
            modules = _Modules(level.n, labels)
            moved = False
            for u in rng.permutation(level.n):
                u = int(u)
                a = labels[u]
                p_u, e_u = level.flow[u], exit_node[u]
                weights = {c: w / m2 for c, w in _neighbor_weights(level, u, labels).items()}
                qa_new = max(q[a] - e_u + 2.0 * weights.get(a, 0.0), 0.0)
                pa_new = flow[a] - p_u
                base_q = sum_q - q[a] + qa_new
                base_plogp_q = sum_plogp_q - _plogp(q[a]) + _plogp(qa_new)
                base_plogp_qp = sum_plogp_qp - _plogp(q[a] + flow[a]) + _plogp(qa_new + pa_new)
                current = _plogp(sum_q) - 2.0 * sum_plogp_q + sum_plogp_qp
                candidates = set(weights) - {a}
                spare = modules.spare(a)
                if spare is not None:
                    candidates.add(spare)
                deltas = {a: 0.0}
                updates = {}
                for b in candidates:
                    qb_new = max(q[b] + e_u - 2.0 * weights.get(b, 0.0), 0.0)
                    pb_new = flow[b] + p_u
                    new_q = base_q - q[b] + qb_new
                    new_plogp_q = base_plogp_q - _plogp(q[b]) + _plogp(qb_new)
                    new_plogp_qp = base_plogp_qp - _plogp(q[b] + flow[b]) + _plogp(qb_new + pb_new)
                    deltas[b] = (_plogp(new_q) - 2.0 * new_plogp_q + new_plogp_qp) - current
                    updates[b] = (qb_new, pb_new, new_q, new_plogp_q, new_plogp_qp)
                b = _best_move(deltas, a, maximize=False)
                if b == a:
                    continue
                qb_new, pb_new, sum_q, sum_plogp_q, sum_plogp_qp = updates[b]
                q[a], flow[a] = qa_new, pa_new
                q[b], flow[b] = qb_new, pb_new
                labels[u] = b
                modules.move(a, b)
                moved = moved_any = True
            if not moved:
                return moved_any

    def score(self, graph: nx.Graph, partition: Partition) -> float:
        return -map_equation(graph, partition)


def _best_move(gains: Dict[int, float], current: int, maximize: bool) -> int:
    """Candidate strictly better than staying; the best one, lowest id among ties"""
    sign = 1.0 if maximize else -1.0
    stay = sign * gains[current]
    best, best_gain = current, stay
    for c in sorted(gains):
        g = sign * gains[c]
        if g <= stay + EPS:
            continue
        if best == current or g > best_gain + EPS:
            best, best_gain = c, g
    return best


def _multilevel(level0: _Level, labels: List[int], objective, rng: np.random.Generator) -> List[int]:
    """Local moving then aggregation until a level produces no merge"""
    level = level0
    node_to_super = list(range(level0.n))
    labels = list(labels)
    while True:
        objective.local_moving(level, labels, rng)
        labels = _dense(labels)
        if max(labels) + 1 == level.n:
            break
        node_to_super = [labels[s] for s in node_to_super]
        level = level.aggregate(labels)
        labels = list(range(level.n))
    return _dense([labels[s] for s in node_to_super])


def _optimize(graph: nx.Graph, objective, seed: int, trials: int, max_rounds: int = 10) -> Partition:
    order = _sorted_nodes(graph)
    level0 = _Level.from_graph(graph, order)
    master = np.random.default_rng(seed)
    refine = getattr(objective, "refine", None)
    best: Optional[Partition] = None
    best_score = -math.inf
    for trial in range(max(trials, 1)):
        rng = np.random.default_rng(master.integers(0, 2**32))
        labels = list(range(level0.n))
        trial_best: Optional[Partition] = None
        trial_score = -math.inf
        for _ in range(max_rounds):
            labels = _multilevel(level0, labels, objective, rng)
            if refine is not None:
                labels = refine(level0, labels)
            candidate = dense_partition(dict(zip(order, labels)), order)
            score = objective.score(graph, candidate)
            if trial_best is not None and score <= trial_score + EPS:
                break
            trial_best, trial_score = candidate, score
        logger.debug(f"{objective.name} trial {trial}: score {trial_score:.6f}")
        if trial_score > best_score + EPS:
            best, best_score = trial_best, trial_score
    return best


def infomap_partition(graph: nx.Graph, seed: int = 0, trials: int = 10) -> Partition:
    """
    Partition a graph by minimizing the two-level map equation.

    Each connected component is optimized on its own; isolated nodes are
    singleton modules. The one-module solution of a component is kept when no
    split shortens its description.

    Args:
        graph: Weighted undirected graph
        seed: Seed for the node sweep order
        trials: Independent optimization runs per component; the shortest wins

    Returns:
        Dense partition, community ids ordered by each community's first node
    """
    if graph.number_of_nodes() == 0:
        raise StatisticsError("cannot partition an empty graph")
    order = _sorted_nodes(graph)
    labels: Dict[Hashable, Tuple[int, int]] = {}
    components = sorted((sorted(c, key=str) for c in nx.connected_components(graph)), key=lambda c: str(c[0]))
    objective = _MapEquationObjective()
    for ci, component in enumerate(components):
        sub = graph.subgraph(component)
        if sub.size(weight="weight") <= 0:
            for j, node in enumerate(component):
                labels[node] = (ci, j)
            continue
        part = _optimize(sub, objective, seed, trials)
        one_module = {node: 0 for node in component}
        if map_equation(sub, one_module) <= map_equation(sub, part) + EPS:
            part = one_module
        for node in component:
            labels[node] = (ci, part[node])
    partition = dense_partition(labels, order)
    logger.info(f"Infomap: {graph.number_of_nodes()} nodes in {max(partition.values()) + 1} modules")
    return partition


def louvain_refine(graph: nx.Graph, node_subset: Iterable[Hashable], seed: int = 0, trials: int = 5) -> Partition:
    """
    Split a node subset by Louvain modularity optimization on its induced subgraph.

    Args:
        graph: The full co-occurrence graph
        node_subset: Nodes whose induced subgraph is optimized
        seed: Seed for the per-pass node shuffle
        trials: Independent runs; the highest modularity wins

    Returns:
        Dense partition of the subset; every node alone when the subgraph has no edges
    """
    sub = graph.subgraph(list(node_subset))
    order = _sorted_nodes(sub)
    if sub.size(weight="weight") <= 0:
        logger.warning(f"Louvain on an edgeless subgraph of {len(order)} nodes: every node is its own community")
        return {node: i for i, node in enumerate(order)}
    return _optimize(sub, _ModularityObjective(), seed, trials)


@dataclass
class CategoryNode:
    id: str
    members: Tuple[str, ...]
    depth: int
    label: str = ""
    children: List["CategoryNode"] = field(default_factory=list)
    unclustered: bool = False

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self) -> Iterator["CategoryNode"]:
        yield self
        for child in self.children:
            yield from child.walk()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "label": self.label,
            "members": list(self.members),
            "unclustered": self.unclustered,
            "children": [c.to_dict() for c in self.children],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], depth: int = 0) -> "CategoryNode":
        return cls(
            id=str(data["id"]),
            members=tuple(sorted(data["members"])),
            depth=depth,
            label=data.get("label", ""),
            children=[cls.from_dict(c, depth + 1) for c in data.get("children", [])],
            unclustered=bool(data.get("unclustered", False)),
        )


@dataclass
class CategoryHierarchy:
    """Rooted smell taxonomy; the root (depth 0) holds the top-level categories"""

    root: CategoryNode

    @property
    def top_level(self) -> List[CategoryNode]:
        return self.root.children

    def nodes(self) -> Iterator[CategoryNode]:
        return self.root.walk()

    def find(self, node_id: str) -> Optional[CategoryNode]:
        return next((n for n in self.nodes() if n.id == node_id), None)

    def parent_of(self, node_id: str) -> Optional[CategoryNode]:
        return next((n for n in self.nodes() if any(c.id == node_id for c in n.children)), None)

    def leaves(self) -> List[CategoryNode]:
        return [n for n in self.nodes() if n.is_leaf and n is not self.root]

    @property
    def words(self) -> Tuple[str, ...]:
        return self.root.members

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes())

    def categories(self) -> List[str]:
        """Top-level category labels in hierarchy order, unclustered singletons excluded"""
        return [n.label or n.id for n in self.top_level if not n.unclustered]

    def word_to_category(self) -> Dict[str, str]:
        mapping = {}
        for node in self.top_level:
            if node.unclustered:
                continue
            for word in node.members:
                mapping[word] = node.label or node.id
        return mapping

    def to_dict(self) -> Dict[str, Any]:
        return self.root.to_dict()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CategoryHierarchy":
        hierarchy = cls(CategoryNode.from_dict(data))
        validate_hierarchy(hierarchy)
        return hierarchy


def validate_hierarchy(hierarchy: CategoryHierarchy) -> None:
    """
    Check the taxonomy invariants.

    Raises:
        HierarchyError: leaves do not partition the words, siblings overlap, a
            parent's members differ from its children's union, ids repeat, or
            the tree is deeper than the top level plus three
    """
    seen_ids = set()
    for node in hierarchy.nodes():
        if node.id in seen_ids:
            raise HierarchyError(f"duplicate node id {node.id}")
        seen_ids.add(node.id)
        if node.depth > MAX_DEPTH:
            raise HierarchyError(f"node {node.id} at depth {node.depth} exceeds {MAX_DEPTH}")
        if node is not hierarchy.root and not node.members:
            raise HierarchyError(f"node {node.id} has no members")
        if node.children:
            union: List[str] = []
            for child in node.children:
                if child.depth != node.depth + 1:
                    raise HierarchyError(f"node {child.id} has depth {child.depth}, parent {node.depth}")
                union.extend(child.members)
            if len(union) != len(set(union)):
                raise HierarchyError(f"children of {node.id} overlap")
            if set(union) != set(node.members):
                raise HierarchyError(f"children of {node.id} do not cover its members")
    leaf_words = [w for leaf in hierarchy.leaves() for w in leaf.members]
    if sorted(leaf_words) != sorted(hierarchy.words):
        raise HierarchyError("leaves do not partition the word set")


def _split(graph: nx.Graph, node: CategoryNode, size_threshold: int, seed: int, trials: int) -> None:
    if len(node.members) <= size_threshold or node.depth >= MAX_DEPTH:
        return
    sub = graph.subgraph(node.members)
    if sub.size(weight="weight") <= 0:
        return
    part = louvain_refine(graph, node.members, seed=seed, trials=trials)
    if max(part.values()) == 0:
        return
    gain = modularity(sub, part)
    if gain <= EPS:
        return
    for i, members in enumerate(communities_of(part)):
        child = CategoryNode(f"{node.id}.{i}", tuple(sorted(members)), node.depth + 1)
        node.children.append(child)
        _split(graph, child, size_threshold, seed, trials)
    logger.debug(f"Split {node.id} ({len(node.members)} words) into {len(node.children)}, Q={gain:.4f}")


def hierarchical_classify(
    graph: nx.Graph, size_threshold: int = 30, seed: int = 0, trials: int = 10
) -> CategoryHierarchy:
    """
    Build the smell taxonomy.

    Level one is the Infomap partition; every community larger than
    `size_threshold` words is split recursively by Louvain while the split
    improves modularity, down to three levels below the top.

    Args:
        graph: Co-occurrence graph
        size_threshold: Largest community size left unsplit (>= 2)
        seed: Seed shared by both optimizers
        trials: Infomap trials per component

    Returns:
        CategoryHierarchy; isolated words are top-level singletons flagged unclustered
    """
    if size_threshold < 2:
        raise ValidationError(f"size_threshold must be >= 2, got {size_threshold}")
    partition = infomap_partition(graph, seed=seed, trials=trials)
    root = CategoryNode("root", tuple(sorted(graph.nodes, key=str)), 0, label="root")
    for i, members in enumerate(communities_of(partition)):
        isolated = len(members) == 1 and graph.degree(members[0], weight="weight") == 0
        node = CategoryNode(str(i), tuple(sorted(members)), 1, unclustered=isolated)
        root.children.append(node)
        if not isolated:
            _split(graph, node, size_threshold, seed, trials=5)
    hierarchy = CategoryHierarchy(root)
    validate_hierarchy(hierarchy)
    logger.info(
        f"Taxonomy: {len(root.children)} top-level communities, "
        f"{len(hierarchy.leaves())} leaves, depth {hierarchy.depth}"
    )
    return hierarchy


def _reset_depths(node: CategoryNode, depth: int) -> None:
    node.depth = depth
    for child in node.children:
        _reset_depths(child, depth + 1)


def _renumber(node: CategoryNode, node_id: str) -> None:
    node.id = node_id
    for j, child in enumerate(node.children):
        _renumber(child, f"{node_id}.{j}")


def merge_subcommunities(hierarchy: CategoryHierarchy, merge_spec: Sequence[Mapping[str, Any]]) -> CategoryHierarchy:
    """
    Merge sibling communities named in a merge spec.

    Args:
        hierarchy: Taxonomy to merge (left untouched)
        merge_spec: Entries {parent_id, child_ids, new_label}; the parent of
            the top level is "root"

    Returns:
        A new hierarchy where each listed sibling group is one node

    Raises:
        HierarchyError: unknown ids, non-siblings, or fewer than two children
    """
    merged = copy.deepcopy(hierarchy)
    for rule in merge_spec:
        parent_id = str(rule["parent_id"])
        child_ids = [str(c) for c in rule["child_ids"]]
        parent = merged.find(parent_id)
        if parent is None:
            raise HierarchyError(f"unknown parent id {parent_id}")
        if len(set(child_ids)) < 2:
            raise HierarchyError(f"merge under {parent_id} needs at least two distinct children")
        for cid in child_ids:
            if merged.find(cid) is None:
                raise HierarchyError(f"unknown node id {cid}")
        sibling_ids = [c.id for c in parent.children]
        strangers = [cid for cid in child_ids if cid not in sibling_ids]
        if strangers:
            raise HierarchyError(f"nodes {strangers} are not children of {parent_id}")
        group = [c for c in parent.children if c.id in child_ids]
        moving = {id(c) for c in group}
        position = next(i for i, c in enumerate(parent.children) if id(c) in moving)
        remaining = [c for c in parent.children if id(c) not in moving]
        if any(c.unclustered for c in group):
            logger.warning(f"Merging unclustered words into a community under {parent_id}")
        node = CategoryNode(
            id=group[0].id,
            members=tuple(sorted(w for c in group for w in c.members)),
            depth=parent.depth + 1,
            label=str(rule.get("new_label") or group[0].label),
        )
        if any(not c.is_leaf for c in group):
            # leaves in a mixed group move one level down so the leaves still partition
            for c in group:
                node.children.extend(copy.deepcopy(c.children if c.children else [c]))
            for j, child in enumerate(node.children):
                _renumber(child, f"{node.id}.{j}")
        remaining.insert(position, node)
        parent.children = remaining
        _reset_depths(parent, parent.depth)
        logger.info(f"Merged {child_ids} under {parent_id} into {node.id} ({len(node.members)} words)")
    validate_hierarchy(merged)
    return merged


def assign_categories(
    hierarchy: CategoryHierarchy, label_map: Mapping[str, str], expected_categories: Optional[int] = None
) -> CategoryHierarchy:
    """
    Name the top-level categories.

    Args:
        hierarchy: Taxonomy to label (left untouched)
        label_map: Label per top-level community, keyed by node id or by any
            member word of the community
        expected_categories: If given, the number of categories must match

    Returns:
        Labeled hierarchy; unlabeled communities get generated names and lower
        levels are named after their top-level category

    Raises:
        HierarchyError: duplicate labels, keys matching no community, two
            labels for one community, or the wrong number of categories
    """
    labels = list(label_map.values())
    duplicates = sorted({l for l in labels if labels.count(l) > 1})
    if duplicates:
        raise HierarchyError(f"duplicate category labels: {duplicates}")
    labeled = copy.deepcopy(hierarchy)
    top = [n for n in labeled.top_level if not n.unclustered]
    by_id = {n.id: n for n in top}
    by_word = {w: n for n in top for w in n.members}
    assigned: Dict[str, str] = {}
    for key, label in sorted(label_map.items()):
        node = by_id.get(str(key)) or by_word.get(str(key))
        if node is None:
            raise HierarchyError(f"label key '{key}' matches no top-level community")
        if node.id in assigned and assigned[node.id] != label:
            raise HierarchyError(f"community {node.id} labeled both '{assigned[node.id]}' and '{label}'")
        assigned[node.id] = label
    for node in labeled.top_level:
        if node.unclustered:
            node.label = f"unclustered:{node.members[0]}"
        else:
            node.label = assigned.get(node.id, f"category-{node.id}")
        for sub in node.walk():
            if sub is not node:
                sub.label = sub.label or f"{node.label}/{sub.id}"
    names = labeled.categories()
    if len(names) != len(set(names)):
        raise HierarchyError(f"generated category names collide: {names}")
    if expected_categories is not None and len(names) != expected_categories:
        raise HierarchyError(f"expected {expected_categories} categories, found {len(names)}")
    return labeled


def write_hierarchy(hierarchy: CategoryHierarchy, path: PathLike) -> Path:
    return write_json(hierarchy.to_dict(), path)


def read_hierarchy(path: PathLike) -> CategoryHierarchy:
    return CategoryHierarchy.from_dict(read_json(path))
