import numpy as np
import pytest

from src.clustering.ccgraph import (
    alignment_scores,
    build_cc_graph,
    cc_graph_for,
    complementarity_scores,
    demand_supply,
    rarity_ranks,
)
from src.data.datamodel import LabelHistogram
from src.errors import InvalidArgumentError


@pytest.fixture
def scored_clusters():
    demand = np.array([[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    supply = np.array([[0.0, 3.0], [2.0, 0.0], [1.0, 1.0]])
    return demand, supply, np.ones((3, 3, 2))


class TestRarity:
    def test_ranks(self):
        assert rarity_ranks(LabelHistogram([5, 1, 0, 3])) == {1: 0, 3: 1, 0: 2}

    def test_ties_go_to_lower_class(self):
        assert rarity_ranks(LabelHistogram([2, 2, 2])) == {0: 0, 1: 1, 2: 2}

    def test_empty_histogram(self):
        with pytest.raises(InvalidArgumentError):
            rarity_ranks(LabelHistogram([0, 0]))


class TestDemandSupply:
    def test_values(self):
        hists = [LabelHistogram([5, 1, 0, 3]), LabelHistogram([5, 1, 0, 3]), LabelHistogram([0, 0, 4, 0])]
        demand, supply = demand_supply([0, 0, 1], hists)
        assert demand.tolist() == [[2.0, 6.0, 0.0, 4.0], [0.0, 0.0, 1.0, 0.0]]
        assert supply.tolist() == [[3.0, 1.0, 0.0, 2.0], [0.0, 0.0, 1.0, 0.0]]

    def test_empty_cluster_has_no_supply(self):
        demand, supply = demand_supply([0, 2], [LabelHistogram([1, 2]), LabelHistogram([2, 1])])
        assert demand.shape == (3, 2)
        assert np.all(supply[1] == 0.0)

    def test_histogram_count_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            demand_supply([0, 1], [LabelHistogram([1])])


class TestAlignment:
    def test_mean_over_pairs(self):
        vprime = np.zeros((3, 3, 1))
        vprime[0, 2] = vprime[2, 0] = 45.0
        vprime[1, 2] = vprime[2, 1] = 90.0
        gamma = alignment_scores(vprime, [0, 0, 1])
        assert gamma[0, 1, 0] == pytest.approx(0.25)
        assert gamma[1, 0, 0] == pytest.approx(0.25)
        assert gamma[0, 0, 0] == pytest.approx(1.0)

    def test_absent_class_scores_zero(self):
        hists = [LabelHistogram([3, 0]), LabelHistogram([2, 2])]
        gamma = alignment_scores(np.zeros((2, 2, 2)), [0, 1], hists)
        assert gamma[0, 1].tolist() == [1.0, 0.0]

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            alignment_scores(np.zeros((2, 2, 1)), [0, 1, 1])


class TestGraph:
    def test_scores(self, scored_clusters):
        h = complementarity_scores(*scored_clusters)
        assert h[0, 1] == 4.0
        assert h[1, 0] == 3.0
        assert np.all(np.isneginf(np.diag(h)))

    def test_top_k(self, scored_clusters):
        graph = build_cc_graph(*scored_clusters, k=1)
        assert graph.edges == [[1], [0], [0]]
        assert graph.sources_of(0) == [1]
        assert graph.learners_of(0) == [1, 2]
        assert graph.edge_rows()[0] == {"learner": 0, "source": 1, "score": 4.0}

    def test_k_capped_by_cluster_count(self, scored_clusters):
        graph = build_cc_graph(*scored_clusters, k=5)
        assert graph.edges == [[1, 2], [0, 2], [0, 1]]

    def test_ties_go_to_lower_id(self):
        graph = build_cc_graph(np.ones((3, 1)), np.ones((3, 1)), np.ones((3, 3, 1)), k=1)
        assert graph.edges == [[1], [0], [0]]

    def test_single_cluster(self, caplog):
        with caplog.at_level("WARNING", logger="CCGraphBuilder"):
            graph = build_cc_graph(np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 1, 2)))
        assert graph.is_empty
        assert graph.warnings
        assert "Fewer than two clusters" in caplog.text

    def test_rejects_k(self, scored_clusters):
        with pytest.raises(InvalidArgumentError):
            build_cc_graph(*scored_clusters, k=0)

    def test_rare_classes_pull_from_rich_clusters(self):
        # Cluster 0 is short on class 1, cluster 1 holds plenty, cluster 2 holds none
        hists = [
            LabelHistogram([20, 1, 0]),
            LabelHistogram([20, 1, 0]),
            LabelHistogram([2, 30, 0]),
            LabelHistogram([2, 30, 0]),
            LabelHistogram([20, 0, 5]),
            LabelHistogram([20, 0, 5]),
        ]
        graph = cc_graph_for([0, 0, 1, 1, 2, 2], hists, np.zeros((6, 6, 3)), k=1)
        assert graph.sources_of(0) == [1]
