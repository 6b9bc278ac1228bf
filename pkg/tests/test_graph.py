import numpy as np
import pytest

from semreopt.errors import ConfigError, ConvergenceError, ValidationError
from semreopt.graph import (
    DEFAULT_POSITIVE_RELATIONS,
    ConceptGraph,
    RwrConfig,
    crop_graph,
    graph_consistency,
    iter_conceptnet_edges,
    iter_tsv_edges,
    rwr_steady_state,
    write_graph_tsv,
)
from semreopt.model import LabelVocabulary

import oracles


def random_graph(rng, max_nodes=50, edge_prob=0.2):
    n = int(rng.integers(2, max_nodes + 1))
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.uniform() < edge_prob:
                edges.append((i, j, float(rng.uniform(0.1, 3.0))))
    return ConceptGraph(nodes=tuple(f"n{i}" for i in range(n)), edges=tuple(edges))


class TestConceptGraph:
    def test_rejects_self_loop(self):
        with pytest.raises(ValidationError):
            ConceptGraph(nodes=("a",), edges=((0, 0, 1.0),))

    def test_rejects_duplicate_edge(self):
        with pytest.raises(ValidationError):
            ConceptGraph(nodes=("a", "b"), edges=((0, 1, 1.0), (1, 0, 2.0)))

    def test_rejects_nonpositive_weight(self):
        with pytest.raises(ValidationError):
            ConceptGraph(nodes=("a", "b"), edges=((0, 1, 0.0),))


class TestCropGraph:
    def test_relation_filter(self):
        edges = [("a", "RelatedTo", "b", 1.0), ("a", "Antonym", "c", 1.0)]
        graph = crop_graph(edges, language_tag="en", positive_relations={"RelatedTo"})
        assert set(graph.nodes) == {"a", "b"}
        assert len(graph.edges) == 1

    def test_parallel_edges_collapse_by_sum(self):
        edges = [("a", "RelatedTo", "b", 1.0), ("b", "RelatedTo", "a", 2.0)]
        graph = crop_graph(edges, positive_relations={"RelatedTo"})
        assert graph.edges == ((0, 1, 3.0),)

    def test_language_filter_on_uris(self):
        edges = [
            ("/c/en/car", "/r/RelatedTo", "/c/en/bus", 1.0),
            ("/c/de/auto", "/r/RelatedTo", "/c/en/bus", 1.0),
            ("/c/en/car", "/r/IsA", "/c/fr/voiture", 1.0),
        ]
        graph = crop_graph(edges, language_tag="en")
        assert set(graph.nodes) == {"/c/en/car", "/c/en/bus"}
        assert len(graph.edges) == 1

    def test_self_loops_and_bad_weights_dropped(self):
        edges = [("a", "RelatedTo", "a", 1.0), ("a", "RelatedTo", "b", -2.0)]
        graph = crop_graph(edges, positive_relations={"RelatedTo"})
        assert len(graph.edges) == 0

    def test_default_relation_set_excludes_negations(self):
        assert "Antonym" not in DEFAULT_POSITIVE_RELATIONS
        assert "RelatedTo" in DEFAULT_POSITIVE_RELATIONS

    def test_tsv_roundtrip(self, tmp_path):
        graph = ConceptGraph(nodes=("a", "b", "c"), edges=((0, 1, 1.5), (1, 2, 0.25)))
        path = tmp_path / "graph.tsv"
        write_graph_tsv(graph, path)
        again = crop_graph(iter_tsv_edges(path))
        assert set(again.nodes) == set(graph.nodes)
        weights = {(again.nodes[i], again.nodes[j]): w for i, j, w in again.edges}
        assert weights == {("a", "b"): 1.5, ("b", "c"): 0.25}

    def test_tsv_parse_error_names_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("a\tRelatedTo\tb\t1.0\nbroken line\n")
        with pytest.raises(Exception, match="line 2"):
            list(iter_tsv_edges(path))

    def test_conceptnet_dump_format(self, tmp_path):
        lines = [
            "/a/x\t/r/RelatedTo\t/c/en/car\t/c/en/bus\t{\"weight\": 2.5}",
            "/a/y\t/r/Antonym\t/c/en/car\t/c/en/walk\t{\"weight\": 1.0}",
            "/a/z\t/r/IsA\t/c/de/auto\t/c/en/vehicle\t{\"weight\": 1.0}",
        ]
        path = tmp_path / "dump.csv"
        path.write_text("\n".join(lines) + "\n")
        graph = crop_graph(iter_conceptnet_edges(path), language_tag="en")
        assert set(graph.nodes) == {"/c/en/car", "/c/en/bus"}
        assert graph.edges[0][2] == 2.5


class TestRwr:
    def test_two_node_closed_form(self):
        # A -- B, restart 0.15: r_A = c / (1 - (1-c)^2)
        graph = ConceptGraph(nodes=("A", "B"), edges=((0, 1, 1.0),))
        r = rwr_steady_state(graph, 0, RwrConfig(restart_prob=0.15, tolerance=1e-12))
        r_a = 0.15 / (1.0 - 0.85**2)
        assert r[0] == pytest.approx(r_a, abs=1e-8)
        assert r[1] == pytest.approx(1.0 - r_a, abs=1e-8)
        assert r[0] == pytest.approx(0.54054, abs=1e-5)
        assert r[1] == pytest.approx(0.45946, abs=1e-5)

    def test_single_isolated_node(self):
        graph = ConceptGraph(nodes=("A",), edges=())
        r = rwr_steady_state(graph, 0)
        np.testing.assert_allclose(r, [1.0])

    def test_three_cycle_symmetry(self):
        graph = ConceptGraph(nodes=("a", "b", "c"), edges=((0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)))
        r = rwr_steady_state(graph, 0, RwrConfig(tolerance=1e-12))
        assert r[1] == pytest.approx(r[2], abs=1e-10)

    def test_probability_vector(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            graph = random_graph(rng, max_nodes=20)
            r = rwr_steady_state(graph, 0, RwrConfig(tolerance=1e-10))
            assert np.all(r >= 0.0)
            assert r.sum() == pytest.approx(1.0, abs=1e-9)

    def test_fixed_point_residual(self):
        rng = np.random.default_rng(42)
        cfg = RwrConfig(tolerance=1e-9)
        graph = random_graph(rng, max_nodes=30)
        indptr, indices, data, inv_deg, dangling = graph._csr
        r = rwr_steady_state(graph, 3, cfg)
        import scipy.sparse as sp

        adj = sp.csr_matrix((data, indices, indptr), shape=(graph.num_nodes,) * 2)
        step = 0.85 * (adj @ (r * inv_deg))
        step[3] += 0.15 + 0.85 * float(r[dangling].sum())
        assert np.abs(r - step).sum() <= cfg.tolerance

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            graph = random_graph(rng)
            start = int(rng.integers(0, graph.num_nodes))
            expected = oracles.rwr_dense_solve(graph.num_nodes, graph.edges, start, 0.15)
            r = rwr_steady_state(graph, start, RwrConfig(tolerance=1e-12))
            np.testing.assert_allclose(r, expected, atol=1e-10)

    def test_non_convergence_error(self):
        graph = ConceptGraph(nodes=("a", "b"), edges=((0, 1, 1.0),))
        with pytest.raises(ConvergenceError):
            rwr_steady_state(graph, 0, RwrConfig(tolerance=1e-15, max_iterations=2))

    def test_start_out_of_range(self):
        graph = ConceptGraph(nodes=("a",), edges=())
        with pytest.raises(ValidationError):
            rwr_steady_state(graph, 5)


class TestRwrConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            RwrConfig(restart_prob=0.0)
        with pytest.raises(ConfigError):
            RwrConfig(restart_prob=1.0)
        with pytest.raises(ConfigError):
            RwrConfig(tolerance=0.0)
        with pytest.raises(ConfigError):
            RwrConfig(max_iterations=0)


class TestGraphConsistency:
    def _two_label_vocab(self):
        return LabelVocabulary(labels=("car", "bus"), concept_map={"car": "A", "bus": "B"})

    def test_two_label_mean_symmetrized(self):
        graph = ConceptGraph(nodes=("A", "B"), edges=((0, 1, 1.0),))
        matrix = graph_consistency(graph, self._two_label_vocab(), RwrConfig(tolerance=1e-12))
        assert matrix.values[0, 1] == pytest.approx(0.45946, abs=1e-5)
        assert matrix.values[1, 0] == matrix.values[0, 1]
        assert matrix.source_tag == "knowledge_graph"

    def test_isolated_concept_keeps_unit_diagonal(self):
        graph = ConceptGraph(nodes=("A", "B", "C"), edges=((0, 1, 1.0),))
        vocab = LabelVocabulary(
            labels=("car", "bus", "island"),
            concept_map={"car": "A", "bus": "B", "island": "C"},
        )
        matrix = graph_consistency(graph, vocab, RwrConfig(tolerance=1e-12))
        assert matrix.values[2, 2] == pytest.approx(1.0, abs=1e-9)
        assert matrix.values[2, 0] == pytest.approx(0.0, abs=1e-12)
        assert matrix.values[2, 1] == pytest.approx(0.0, abs=1e-12)

    def test_missing_concept_zero_row_and_column(self, caplog):
        graph = ConceptGraph(nodes=("A",), edges=())
        vocab = LabelVocabulary(labels=("car", "ghost"), concept_map={"car": "A", "ghost": "missing"})
        with caplog.at_level("WARNING"):
            matrix = graph_consistency(graph, vocab)
        assert np.all(matrix.values[1, :] == 0.0)
        assert np.all(matrix.values[:, 1] == 0.0)
        assert "ghost" in caplog.text

    def test_missing_concept_hard_error(self):
        graph = ConceptGraph(nodes=("A",), edges=())
        vocab = LabelVocabulary(labels=("car", "ghost"), concept_map={"car": "A", "ghost": "missing"})
        with pytest.raises(ValidationError):
            graph_consistency(graph, vocab, on_missing="error")

    def test_requires_concept_map(self):
        graph = ConceptGraph(nodes=("A",), edges=())
        with pytest.raises(ValidationError):
            graph_consistency(graph, LabelVocabulary(labels=("car",)))

    def test_symmetric_for_both_modes(self):
        rng = np.random.default_rng(44)
        graph = random_graph(rng, max_nodes=12, edge_prob=0.4)
        labels = tuple(f"l{i}" for i in range(4))
        concept_map = {f"l{i}": graph.nodes[i] for i in range(4)}
        vocab = LabelVocabulary(labels=labels, concept_map=concept_map)
        for mode in ("mean", "max"):
            matrix = graph_consistency(graph, vocab, symmetrize=mode)
            assert np.array_equal(matrix.values, matrix.values.T)
            assert np.all(matrix.values >= 0.0)
            assert np.all(matrix.values <= 1.0)

    def test_node_permutation_invariance(self):
        rng = np.random.default_rng(45)
        graph = random_graph(rng, max_nodes=15, edge_prob=0.35)
        n = graph.num_nodes
        perm = rng.permutation(n)
        inverse = np.argsort(perm)
        permuted = ConceptGraph(
            nodes=tuple(graph.nodes[perm[i]] for i in range(n)),
            edges=tuple(
                (min(inverse[i], inverse[j]), max(inverse[i], inverse[j]), w)
                for i, j, w in graph.edges
            ),
        )
        labels = tuple(f"l{i}" for i in range(5))
        concept_map = {f"l{i}": graph.nodes[i] for i in range(5)}
        vocab = LabelVocabulary(labels=labels, concept_map=concept_map)
        cfg = RwrConfig(tolerance=1e-12)
        a = graph_consistency(graph, vocab, cfg)
        b = graph_consistency(permuted, vocab, cfg)
        np.testing.assert_allclose(a.values, b.values, atol=1e-9)
