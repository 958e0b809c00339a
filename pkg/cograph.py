"""
Smell-word co-occurrence network.

Nodes are matched smell words, edges count the items in which two words occur
together. Counts are kept as Counters so sharded partial counts merge by
addition (associative and commutative).
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, Mapping, Tuple, Union

import networkx as nx
import pandas as pd

from lexicon import TermMatcher
from ingest import GeoItem
from utils import PathLike, write_csv

logger = logging.getLogger("smellscape")

EDGE_COLUMNS = ["word_a", "word_b", "weight"]
NODE_COLUMNS = ["word", "count"]


@dataclass
class CooccurrenceGraph:
    node_counts: Counter = field(default_factory=Counter)
    edge_weights: Counter = field(default_factory=Counter)

    def add_item(self, terms: Iterable[str]) -> None:
        words = sorted(set(terms))
        self.node_counts.update(words)
        if len(words) > 1:
            self.edge_weights.update(combinations(words, 2))

    def merge(self, other: "CooccurrenceGraph") -> "CooccurrenceGraph":
        return CooccurrenceGraph(self.node_counts + other.node_counts, self.edge_weights + other.edge_weights)

    __add__ = merge

    def weight(self, a: str, b: str) -> int:
        return self.edge_weights.get((a, b) if a <= b else (b, a), 0)

    def to_networkx(self, min_weight: int = 1) -> nx.Graph:
        """Undirected graph with 'count' node and 'weight' edge attributes, built in sorted order"""
        graph = nx.Graph()
        for word in sorted(self.node_counts):
            graph.add_node(word, count=self.node_counts[word])
        for (a, b), w in sorted(self.edge_weights.items()):
            if w >= min_weight:
                graph.add_edge(a, b, weight=w)
        return graph

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CooccurrenceGraph):
            return NotImplemented
        return +self.node_counts == +other.node_counts and +self.edge_weights == +other.edge_weights


@dataclass(frozen=True)
class GraphStats:
    nodes: int
    edges: int
    total_weight: int
    weighted_degree: Dict[str, int]


def count_cooccurrences(term_sets: Iterable[Iterable[str]]) -> CooccurrenceGraph:
    """Count node occurrences and pair co-occurrences over already-matched term sets"""
    graph = CooccurrenceGraph()
    for terms in term_sets:
        graph.add_item(terms)
    return graph


def build_cooccurrence(
    items: Iterable[GeoItem], matcher: Union[TermMatcher, Mapping[str, TermMatcher]]
) -> CooccurrenceGraph:
    """
    Build the co-occurrence graph from raw items.

    Args:
        items: Geo items to match
        matcher: One matcher, or matchers keyed by language (items in other
            languages are ignored)

    Returns:
        CooccurrenceGraph where each item with matched set S adds 1 to every
        unordered pair of S and to each word's occurrence count
    """
    matchers = matcher if isinstance(matcher, Mapping) else None

    def term_sets():
        for item in items:
            m = matchers.get(item.language) if matchers is not None else matcher
            if m is not None:
                yield m.match(item.text)

    graph = count_cooccurrences(term_sets())
    logger.info(f"Co-occurrence graph: {len(graph.node_counts)} words, {len(graph.edge_weights)} pairs")
    return graph


def graph_stats(graph: Union[CooccurrenceGraph, nx.Graph]) -> GraphStats:
    """
    Summarize a co-occurrence graph.

    Returns:
        GraphStats with node count, edge count, total edge weight and weighted
        degree per node (degrees sum to twice the total weight)
    """
    if isinstance(graph, CooccurrenceGraph):
        graph = graph.to_networkx()
    degree = {n: int(d) for n, d in graph.degree(weight="weight")}
    return GraphStats(
        nodes=graph.number_of_nodes(),
        edges=graph.number_of_edges(),
        total_weight=int(graph.size(weight="weight")),
        weighted_degree=degree,
    )


def write_graph(graph: CooccurrenceGraph, edges_path: PathLike, nodes_path: PathLike) -> Tuple[Path, Path]:
    edges = sorted((a, b, w) for (a, b), w in graph.edge_weights.items())
    nodes = sorted(graph.node_counts.items())
    return (
        write_csv(pd.DataFrame(edges, columns=EDGE_COLUMNS), edges_path),
        write_csv(pd.DataFrame(nodes, columns=NODE_COLUMNS), nodes_path),
    )


def read_graph(edges_path: PathLike, nodes_path: PathLike) -> CooccurrenceGraph:
    edges = pd.read_csv(edges_path, dtype={"word_a": str, "word_b": str, "weight": int}, keep_default_na=False)
    nodes = pd.read_csv(nodes_path, dtype={"word": str, "count": int}, keep_default_na=False)
    graph = CooccurrenceGraph()
    graph.node_counts.update(dict(zip(nodes["word"], nodes["count"].astype(int))))
    for a, b, w in edges.itertuples(index=False):
        key = (a, b) if a <= b else (b, a)
        graph.edge_weights[key] += int(w)
    return graph
