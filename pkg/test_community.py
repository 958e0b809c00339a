"""
Tests for community detection and the smell taxonomy
"""

import math
import random

import networkx as nx
import pytest
from sklearn.metrics import adjusted_rand_score

from community import (
    CategoryHierarchy,
    HierarchyError,
    _Level,
    _ModularityObjective,
    assign_categories,
    communities_of,
    hierarchical_classify,
    infomap_partition,
    louvain_refine,
    map_equation,
    merge_subcommunities,
    modularity,
    read_hierarchy,
    write_hierarchy,
)
from utils import StatisticsError, ValidationError


def two_triangles():
    graph = nx.Graph()
    graph.add_edges_from([("a", "b"), ("b", "c"), ("a", "c"), ("d", "e"), ("e", "f"), ("d", "f"), ("c", "d")],
                         weight=1)
    return graph


CLIQUES = {"a": 0, "b": 0, "c": 0, "d": 1, "e": 1, "f": 1}


def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for smaller in set_partitions(rest):
        for i in range(len(smaller)):
            yield smaller[:i] + [[first] + smaller[i]] + smaller[i + 1:]
        yield [[first]] + smaller


def as_partition(blocks):
    return {node: i for i, block in enumerate(blocks) for node in block}


def as_sets(partition):
    return sorted(sorted(c) for c in communities_of(partition))


def entropy(graph):
    degree = dict(graph.degree(weight="weight"))
    total = sum(degree.values())
    return -sum(d / total * math.log2(d / total) for d in degree.values() if d > 0)


def test_modularity_of_cliques():
    assert modularity(two_triangles(), CLIQUES) == pytest.approx(2 * (3 / 7 - (7 / 14) ** 2))


def test_modularity_one_module_is_zero():
    graph = two_triangles()
    assert modularity(graph, {n: 0 for n in graph}) == pytest.approx(0.0)


def test_modularity_singletons_of_triangle():
    graph = nx.complete_graph(3)
    assert modularity(graph, {n: n for n in graph}) == pytest.approx(-1 / 3)


def test_modularity_needs_edges():
    graph = nx.Graph()
    graph.add_nodes_from("ab")
    with pytest.raises(StatisticsError):
        modularity(graph, {"a": 0, "b": 1})


def test_map_equation_one_module_is_entropy():
    graph = two_triangles()
    graph["a"]["b"]["weight"] = 3
    assert map_equation(graph, {n: 0 for n in graph}) == pytest.approx(entropy(graph))


def test_map_equation_prefers_the_cliques():
    graph = two_triangles()
    assert map_equation(graph, CLIQUES) < map_equation(graph, {n: 0 for n in graph})


def test_map_equation_single_node():
    graph = nx.Graph()
    graph.add_node("a")
    assert map_equation(graph, {"a": 0}) == 0.0


def test_map_equation_empty_graph():
    with pytest.raises(StatisticsError):
        map_equation(nx.Graph(), {})


def test_map_equation_missing_node():
    with pytest.raises(ValidationError):
        map_equation(two_triangles(), {"a": 0})


def test_infomap_finds_the_cliques():
    partition = infomap_partition(two_triangles(), seed=0)
    assert as_sets(partition) == [["a", "b", "c"], ["d", "e", "f"]]
    assert sorted(set(partition.values())) == [0, 1]


def test_infomap_complete_graph_is_one_module():
    partition = infomap_partition(nx.complete_graph(5), seed=0)
    assert set(partition.values()) == {0}


def test_infomap_disconnected_edges():
    graph = nx.Graph([("a", "b"), ("c", "d")])
    assert as_sets(infomap_partition(graph)) == [["a", "b"], ["c", "d"]]


def test_infomap_isolated_nodes_are_singletons():
    graph = two_triangles()
    graph.add_nodes_from(["x", "y"])
    partition = infomap_partition(graph)
    assert as_sets(partition) == [["a", "b", "c"], ["d", "e", "f"], ["x"], ["y"]]


def test_infomap_ignores_insertion_order():
    graph = two_triangles()
    edges = list(graph.edges(data=True))
    random.Random(4).shuffle(edges)
    shuffled = nx.Graph()
    shuffled.add_nodes_from(sorted(graph, reverse=True))
    shuffled.add_edges_from(edges)
    assert infomap_partition(graph, seed=9) == infomap_partition(shuffled, seed=9)


def test_louvain_ignores_insertion_order():
    graph = nx.karate_club_graph()
    shuffled = nx.Graph()
    nodes = list(graph)
    random.Random(1).shuffle(nodes)
    shuffled.add_nodes_from(nodes)
    edges = list(graph.edges(data=True))
    random.Random(2).shuffle(edges)
    shuffled.add_edges_from(edges)
    assert louvain_refine(graph, graph.nodes, seed=3) == louvain_refine(shuffled, shuffled.nodes, seed=3)


def test_louvain_induced_cliques():
    graph = two_triangles()
    graph.add_edges_from([("f", "g"), ("g", "h")])
    partition = louvain_refine(graph, "abcdef", seed=0)
    assert as_sets(partition) == [["a", "b", "c"], ["d", "e", "f"]]


def test_louvain_star_is_optimal():
    star = nx.star_graph(3)
    best = max(modularity(star, as_partition(p)) for p in set_partitions(list(star)))
    assert modularity(star, louvain_refine(star, star.nodes)) == pytest.approx(best)


def test_louvain_single_edge():
    graph = nx.Graph([("a", "b")])
    assert louvain_refine(graph, ["a", "b"]) == {"a": 0, "b": 0}


def test_louvain_edgeless_subset(caplog):
    graph = nx.Graph()
    graph.add_nodes_from("abc")
    assert louvain_refine(graph, "abc") == {"a": 0, "b": 1, "c": 2}
    assert "edgeless" in caplog.text


def random_weighted_graphs(count):
    """Weighted gnp graphs of 3 to 8 nodes at varied density, disconnected ones included"""
    rng = random.Random(17)
    seed = 0
    found = 0
    while found < count:
        seed += 1
        graph = nx.gnp_random_graph(rng.randint(3, 8), rng.uniform(0.2, 0.8), seed=seed)
        if graph.number_of_edges() == 0:
            continue
        for u, v in graph.edges:
            graph[u][v]["weight"] = rng.randint(1, 5)
        found += 1
        yield graph


@pytest.mark.slow
def test_optimizers_near_brute_force_optimum():
    graphs = list(random_weighted_graphs(200))
    assert any(not nx.is_connected(g) for g in graphs)
    for graph in graphs:
        partitions = [as_partition(p) for p in set_partitions(list(graph))]
        best_q = max(modularity(graph, p) for p in partitions)
        best_l = min(map_equation(graph, p) for p in partitions)
        q = modularity(graph, louvain_refine(graph, graph.nodes, seed=0))
        codelength = map_equation(graph, infomap_partition(graph, seed=0))
        assert q >= 0.95 * best_q - 1e-9, sorted(graph.edges(data="weight"))
        assert codelength <= 1.05 * best_l + 1e-9, sorted(graph.edges(data="weight"))


def test_refinement_swaps_misplaced_nodes():
    graph = two_triangles()
    level = _Level.from_graph(graph, sorted(graph))
    # a, b, d against c, e, f
    assert _ModularityObjective().refine(level, [0, 0, 1, 0, 1, 1]) == [0, 0, 0, 1, 1, 1]


def test_louvain_single_trial_near_optimum():
    graph = nx.Graph()
    graph.add_weighted_edges_from([
        (0, 4, 3), (0, 5, 4), (0, 6, 2), (4, 5, 2), (5, 6, 3), (4, 6, 1),
        (1, 2, 3), (1, 3, 4), (2, 3, 2), (2, 7, 3), (3, 7, 1), (1, 7, 2),
        (0, 2, 1), (3, 5, 1), (1, 4, 1), (6, 7, 1),
    ])
    best = max(modularity(graph, as_partition(p)) for p in set_partitions(list(graph)))
    for seed in range(10):
        assert modularity(graph, louvain_refine(graph, graph.nodes, seed=seed, trials=1)) >= 0.95 * best


def planted_graph(seed):
    """Three groups of three 10-cliques; half-weight edges between cliques, a few weak ones between groups"""
    rng = random.Random(seed)
    graph = nx.Graph()
    group_of, clique_of = {}, {}
    groups = []
    for g in range(3):
        nodes = [f"w{g}{c}{i}" for c in range(3) for i in range(10)]
        groups.append(nodes)
        for node in nodes:
            group_of[node] = g
            clique_of[node] = 3 * g + int(node[2])
        for i, u in enumerate(nodes):
            for v in nodes[i + 1:]:
                base = 1.0 if clique_of[u] == clique_of[v] else 0.5
                graph.add_edge(u, v, weight=base * rng.uniform(0.9, 1.1))
    for g in range(3):
        for _ in range(2):
            graph.add_edge(rng.choice(groups[g]), rng.choice(groups[(g + 1) % 3]), weight=0.2)
    return graph, group_of, clique_of


@pytest.mark.slow
def test_hierarchy_recovers_planted_levels():
    recovered = 0
    for seed in range(20):
        graph, group_of, clique_of = planted_graph(seed)
        assert nx.is_connected(graph)
        hierarchy = hierarchical_classify(graph, size_threshold=12, seed=seed)
        words = sorted(graph)
        top = {w: n.id for n in hierarchy.top_level for w in n.members}
        leaf = {w: n.id for n in hierarchy.leaves() for w in n.members}
        top_ari = adjusted_rand_score([group_of[w] for w in words], [top[w] for w in words])
        leaf_ari = adjusted_rand_score([clique_of[w] for w in words], [leaf[w] for w in words])
        recovered += top_ari > 0.9 and leaf_ari > 0.9 and hierarchy.depth >= 2
    assert recovered >= 19


def test_small_communities_stay_unsplit():
    hierarchy = hierarchical_classify(two_triangles(), size_threshold=30)
    assert hierarchy.depth == 1
    assert sorted(n.members for n in hierarchy.leaves()) == [("a", "b", "c"), ("d", "e", "f")]
    assert [n.id for n in hierarchy.top_level] == ["0", "1"]


def test_split_only_when_modularity_improves():
    hierarchy = hierarchical_classify(two_triangles(), size_threshold=2)
    assert hierarchy.depth == 1


def test_isolated_words_are_unclustered():
    graph = two_triangles()
    graph.add_node("zest")
    hierarchy = hierarchical_classify(graph)
    flagged = [n for n in hierarchy.top_level if n.unclustered]
    assert [n.members for n in flagged] == [("zest",)]
    assert "zest" not in hierarchy.word_to_category()
    assert len(hierarchy.categories()) == 2


def test_size_threshold_must_be_at_least_two():
    with pytest.raises(ValidationError):
        hierarchical_classify(two_triangles(), size_threshold=1)


def taxonomy():
    return CategoryHierarchy.from_dict({
        "id": "root",
        "members": list("abcdef"),
        "children": [
            {"id": "0", "members": list("abcd"), "children": [
                {"id": "0.0", "members": ["a", "b"]},
                {"id": "0.1", "members": ["c"]},
                {"id": "0.2", "members": ["d"]},
            ]},
            {"id": "1", "members": ["e", "f"]},
        ],
    })


def test_merge_sibling_leaves():
    merged = merge_subcommunities(taxonomy(), [{"parent_id": "0", "child_ids": ["0.0", "0.1"], "new_label": "smoke"}])
    children = merged.find("0").children
    assert [(c.id, c.members, c.label) for c in children] == [("0.0", ("a", "b", "c"), "smoke"), ("0.2", ("d",), "")]


def test_merge_top_level_with_children_keeps_leaves_partitioned():
    merged = merge_subcommunities(taxonomy(), [{"parent_id": "root", "child_ids": ["0", "1"], "new_label": "all"}])
    assert [n.id for n in merged.top_level] == ["0"]
    assert merged.top_level[0].members == tuple("abcdef")
    assert sorted(w for leaf in merged.leaves() for w in leaf.members) == list("abcdef")
    assert [c.id for c in merged.top_level[0].children] == ["0.0", "0.1", "0.2", "0.3"]


def test_merge_mixed_group_keeps_other_siblings():
    original = CategoryHierarchy.from_dict({
        "id": "root",
        "members": list("abcde"),
        "children": [
            {"id": "0", "members": list("ab"), "children": [
                {"id": "0.0", "members": ["a"]},
                {"id": "0.1", "members": ["b"]},
            ]},
            {"id": "1", "members": ["c"]},
            {"id": "2", "members": ["d", "e"]},
        ],
    })
    merged = merge_subcommunities(original, [{"parent_id": "root", "child_ids": ["0", "1"], "new_label": "ab+c"}])
    assert [(n.id, n.members) for n in merged.top_level] == [("0", ("a", "b", "c")), ("2", ("d", "e"))]
    assert [(c.id, c.members) for c in merged.top_level[0].children] == [
        ("0.0", ("a",)), ("0.1", ("b",)), ("0.2", ("c",))
    ]
    assert [c.depth for c in merged.top_level[0].children] == [2, 2, 2]
    assert original.find("1").members == ("c",)


def test_empty_merge_spec_is_identity():
    original = taxonomy()
    assert merge_subcommunities(original, []) == original


@pytest.mark.parametrize(
    "rule",
    [
        {"parent_id": "0", "child_ids": ["0.0", "1"]},
        {"parent_id": "0", "child_ids": ["0.0", "0.9"]},
        {"parent_id": "7", "child_ids": ["0.0", "0.1"]},
        {"parent_id": "0", "child_ids": ["0.0", "0.0"]},
    ],
)
def test_bad_merges(rule):
    with pytest.raises(HierarchyError):
        merge_subcommunities(taxonomy(), [rule])


def flat_taxonomy(n):
    return CategoryHierarchy.from_dict({
        "id": "root",
        "members": [f"w{i}" for i in range(n)],
        "children": [{"id": str(i), "members": [f"w{i}"]} for i in range(n)],
    })


def test_ten_labels_ten_categories():
    labels = {str(i): f"cat{i}" for i in range(10)}
    labeled = assign_categories(flat_taxonomy(10), labels, expected_categories=10)
    assert labeled.categories() == [f"cat{i}" for i in range(10)]


def test_single_community_label():
    labeled = assign_categories(flat_taxonomy(1), {"0": "nature"})
    assert labeled.categories() == ["nature"]
    assert labeled.word_to_category() == {"w0": "nature"}


def test_labels_by_anchor_word_and_generated_names():
    labeled = assign_categories(taxonomy(), {"e": "food"})
    assert labeled.categories() == ["category-0", "food"]
    assert labeled.find("0.1").label == "category-0/0.1"


@pytest.mark.parametrize(
    "labels,expected",
    [
        ({"0": "food", "1": "food"}, None),
        ({"9": "food"}, None),
        ({"0": "food", "a": "smoke"}, None),
        ({"0": "food"}, 3),
    ],
)
def test_bad_labels(labels, expected):
    with pytest.raises(HierarchyError):
        assign_categories(taxonomy(), labels, expected)


def test_hierarchy_file_reloads(tmp_path):
    labeled = assign_categories(hierarchical_classify(two_triangles()), {"a": "emissions", "d": "nature"})
    path = write_hierarchy(labeled, tmp_path / "taxonomy.json")
    assert read_hierarchy(path) == labeled


def test_invalid_hierarchy_file(tmp_path):
    data = taxonomy().to_dict()
    data["children"][1]["members"] = ["e"]
    with pytest.raises(HierarchyError):
        CategoryHierarchy.from_dict(data)
