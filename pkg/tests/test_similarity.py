import json
from dataclasses import replace

import numpy as np
import pytest

from src.data.datamodel import ClientDataset, LabelHistogram, SparseGradient
from src.errors import InvalidArgumentError
from src.linalg import OrthonormalBasis, row_softmax_entropy
from src.model import ArchSpec
from src.similarity.proximity import (
    FusionWeightLearner,
    build_proximity,
    class_angles,
    data_similarity_matrix,
    data_similarity_row,
    fuse_proximity,
    governor_matrix,
    gradient_similarity_matrix,
    gradient_similarity_row,
    idle_clients,
    normalized_class_weights,
    raw_class_weights,
    raw_weight_bounds,
)
from src.similarity.signatures import (
    ClientSignature,
    build_signature,
    class_principal_vectors,
    retained_count,
    sparse_mask,
    sparsify,
)
from src.similarity.warmup import local_warmup, warmup_init


def signature(client_id, grad, counts, bases=None):
    grad = np.asarray(grad, dtype=float)
    return ClientSignature(
        client_id=client_id,
        sparse_grad=SparseGradient(grad.size, np.arange(grad.size), grad),
        per_class_bases=bases or {},
        histogram=LabelHistogram(counts),
    )


def gaussian_client(client_id, classes, n=30, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.asarray(classes)[np.arange(n) % len(classes)]
    means = np.eye(4)[labels] * 4.0
    return ClientDataset(client_id, means + rng.normal(size=(n, 4)), labels, 4)


@pytest.fixture
def two_block_views():
    ghat = np.ones((8, 8))
    ghat[:4, :4] = 0.0
    ghat[4:, 4:] = 0.0
    np.fill_diagonal(ghat, 0.0)
    vhat = np.full((8, 8), 0.5)
    np.fill_diagonal(vhat, 0.0)
    return ghat, vhat


class TestWarmup:
    def test_shared_start_and_determinism(self):
        arch = ArchSpec(input_dim=4, num_classes=4, hidden=(6,), feature_dim=3)
        d = gaussian_client(0, [0, 1])
        a = local_warmup(d, arch, t_g=2, steps_per_round=5, lr=0.1, seed=9)
        b = local_warmup(d, arch, t_g=2, steps_per_round=5, lr=0.1, seed=9)
        assert a.model.equals(b.model)
        assert np.array_equal(a.delta, b.delta)
        start = warmup_init(arch, 9)
        assert np.allclose(a.delta, a.model.flat() - start.flat())
        assert a.delta.size == arch.single().total_size

    def test_loss_decreases(self):
        arch = ArchSpec(input_dim=4, num_classes=4, hidden=(8,), feature_dim=4)
        result = local_warmup(gaussian_client(0, [0, 1, 2]), arch, t_g=4, steps_per_round=25, lr=0.1, seed=1)
        assert result.loss_after < result.loss_before
        assert result.warm_extractor.size == arch.encoder_size

    def test_rejects_zero_rounds(self):
        arch = ArchSpec(input_dim=4, num_classes=4)
        with pytest.raises(InvalidArgumentError):
            local_warmup(gaussian_client(0, [0]), arch, t_g=0)


class TestSignatures:
    def test_retained_count(self):
        assert retained_count(0.01, 1000) == 10
        assert retained_count(0.001, 10) == 1
        assert retained_count(0.3, 10) == 3
        assert retained_count(1.0, 7) == 7

    def test_sparsify_keeps_values(self):
        delta = np.arange(20, dtype=float)
        g = sparsify(delta, 0.25, seed=4)
        assert g.nnz == 5
        assert np.array_equal(g.values, delta[g.indices])
        assert np.all(np.diff(g.indices) > 0)

    def test_mask_depends_on_seed(self):
        assert np.array_equal(sparse_mask(100, 0.1, 1), sparse_mask(100, 0.1, 1))
        assert not np.array_equal(sparse_mask(100, 0.1, 1), sparse_mask(100, 0.1, 2))

    def test_full_fraction(self):
        assert sparse_mask(6, 1.0, 0).tolist() == list(range(6))
        with pytest.raises(InvalidArgumentError):
            sparsify(np.ones(3), 0.0, 0)

    def test_principal_vectors_per_present_class(self):
        d = gaussian_client(3, [0, 2], n=40)
        bases = class_principal_vectors(d, p_fraction=0.05)
        assert set(bases) == {0, 2}
        assert all(b.p == 1 and b.dim == 4 for b in bases.values())
        assert all(b.is_orthonormal() for b in bases.values())

    def test_principal_vector_count_capped(self):
        d = gaussian_client(0, [1], n=3)
        bases = class_principal_vectors(d, p_fraction=1.0)
        assert bases[1].p == 3
        bases = class_principal_vectors(gaussian_client(0, [1], n=40), p_fraction=1.0)
        assert bases[1].p == 4

    def test_subsample(self):
        d = gaussian_client(0, [0], n=50)
        bases = class_principal_vectors(d, p_fraction=0.5, subsample=6)
        assert bases[0].p == 3

    def test_signature_json(self):
        d = gaussian_client(5, [1, 3])
        sig = build_signature(d, np.linspace(-1, 1, 40), 0.5, mask_seed=2, p_fraction=0.05)
        data = json.loads(json.dumps(sig.to_dict()))
        back = ClientSignature.from_dict(data)
        assert back.client_id == 5
        assert back.histogram == sig.histogram
        assert np.array_equal(back.sparse_grad.indices, sig.sparse_grad.indices)
        assert np.allclose(back.per_class_bases[3].vectors, sig.per_class_bases[3].vectors)
        assert sig.nbytes() == 20 * 12 + 2 * 4 * 8 + 4 * 8

    def test_bases_for_absent_class(self):
        with pytest.raises(InvalidArgumentError):
            signature(0, [1.0], [1, 0], bases={1: OrthonormalBasis(np.eye(2)[:, :1])})


class TestGradientView:
    def test_angles(self):
        sigs = [
            signature(0, [1.0, 0.0, 0.0], [1]),
            signature(1, [2.0, 0.0, 0.0], [1]),
            signature(2, [0.0, 3.0, 0.0], [1]),
            signature(3, [-1.0, 0.0, 0.0], [1]),
        ]
        g = gradient_similarity_matrix(sigs)
        assert g[0, 1] == pytest.approx(0.0, abs=1e-6)
        assert g[0, 2] == pytest.approx(90.0)
        assert g[0, 3] == pytest.approx(180.0)
        assert np.allclose(g, g.T)
        assert np.all(np.diag(g) == 0.0)

    def test_disjoint_coordinates_are_orthogonal(self):
        a = ClientSignature(0, SparseGradient(4, [0, 1], [1.0, 1.0]), {}, LabelHistogram([1]))
        b = ClientSignature(1, SparseGradient(4, [2, 3], [1.0, 1.0]), {}, LabelHistogram([1]))
        assert gradient_similarity_matrix([a, b])[0, 1] == pytest.approx(90.0)

    def test_zero_norm(self, caplog):
        sigs = [signature(0, [0.0, 0.0], [1]), signature(1, [1.0, 1.0], [1])]
        with caplog.at_level("WARNING", logger="ProximityBuilder"):
            g = gradient_similarity_matrix(sigs)
        assert g[0, 1] == 90.0
        assert "zero-norm" in caplog.text

    def test_row_matches_matrix(self):
        rng = np.random.default_rng(0)
        sigs = [signature(i, rng.normal(size=6), [1]) for i in range(4)]
        g = gradient_similarity_matrix(sigs)
        assert np.allclose(gradient_similarity_row(sigs[3], sigs[:3]), g[3, :3])

    def test_needs_two_clients(self):
        with pytest.raises(InvalidArgumentError):
            gradient_similarity_matrix([signature(0, [1.0], [1])])


class TestDataView:
    def test_raw_weights(self):
        w = raw_class_weights(LabelHistogram([10, 0, 4]), LabelHistogram([100, 5, 0]))
        assert w[0] == pytest.approx(np.log(101) / np.log(11))
        assert np.isnan(w[1]) and np.isnan(w[2])

    def test_normalized_weights(self):
        raw = np.array([1.0, 2.0, 3.0, np.nan])
        out = normalized_class_weights(raw, (1.0, 3.0), 0.2)
        assert out.tolist() == pytest.approx([0.8, 1.0, 1.2, 1.0])
        assert normalized_class_weights(raw, (2.0, 2.0), 0.2).tolist() == [1.0] * 4

    def test_class_angles(self):
        e = np.eye(3)
        a = signature(0, [1.0], [5, 5, 0], bases={0: OrthonormalBasis(e[:, 0]), 1: OrthonormalBasis(e[:, 1])})
        b = signature(1, [1.0], [5, 0, 0], bases={0: OrthonormalBasis(e[:, 1])})
        assert class_angles(a, b, 3).tolist() == pytest.approx([90.0, 90.0, 0.0])

    def test_disjoint_labels(self):
        e = np.eye(2)
        a = signature(0, [1.0], [3, 0], bases={0: OrthonormalBasis(e[:, 0])})
        b = signature(1, [1.0], [0, 3], bases={1: OrthonormalBasis(e[:, 1])})
        v, vprime = data_similarity_matrix([a, b], 2)
        assert v[0, 1] == pytest.approx(90.0)
        assert vprime[0, 1].tolist() == [90.0, 90.0]

    def test_identical_clients(self):
        d = gaussian_client(0, [0, 1])
        sigs = [build_signature(d.with_id(i), np.ones(4), 1.0, 0) for i in range(3)]
        v, _ = data_similarity_matrix(sigs, 4)
        assert np.allclose(v, 0.0, atol=1e-5)

    def test_row_matches_matrix(self):
        sigs = [build_signature(gaussian_client(i, [0, 1 + i % 3], seed=i), np.ones(4), 1.0, 0) for i in range(4)]
        bounds = raw_weight_bounds(sigs)
        v, vprime = data_similarity_matrix(sigs, 4, weight_bounds=bounds)
        row, angles = data_similarity_row(sigs[2], [sigs[0], sigs[1], sigs[3]], 4, 0.2, 1.0, bounds)
        assert np.allclose(row, v[2, [0, 1, 3]])
        assert np.allclose(angles, vprime[2, [0, 1, 3]])

    def test_rejects_delta(self):
        with pytest.raises(InvalidArgumentError):
            data_similarity_matrix([signature(0, [1.0], [1])], 1, delta=1.0)


class TestFusion:
    def test_fused_matrix(self):
        ghat = np.array([[0.0, 1.0, 0.2], [1.0, 0.0, 0.4], [0.2, 0.4, 0.0]])
        vhat = np.array([[0.0, 0.0, 0.6], [0.0, 0.0, 0.8], [0.6, 0.8, 0.0]])
        prox = fuse_proximity(vhat, ghat, np.array([0.25, 1.0, 0.0]))
        assert prox.A[0, 1] == pytest.approx(0.25)
        assert prox.A[1, 2] == pytest.approx(0.4)
        assert np.allclose(prox.A, prox.A.T)
        assert np.all(np.diag(prox.A) == 0.0)

    def test_priority_changes_governor(self):
        gov = governor_matrix(np.array([2.0, 1.0, 0.0]))
        assert gov[0, 1] == 1 and gov[0, 2] == 2 and gov[1, 2] == 2

    def test_rejects_weights_outside_unit_interval(self):
        with pytest.raises(InvalidArgumentError):
            fuse_proximity(np.zeros((2, 2)), np.zeros((2, 2)), np.array([0.5, 1.5]))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        raw_g, raw_v = rng.uniform(size=(2, 5, 5))
        ghat, vhat = (raw_g + raw_g.T) / 2, (raw_v + raw_v.T) / 2
        np.fill_diagonal(ghat, 0.0)
        np.fill_diagonal(vhat, 0.0)
        w = rng.uniform(0.2, 0.8, size=5)
        gov = governor_matrix(np.arange(5.0))
        _, grad = FusionWeightLearner.weight_gradient(vhat, ghat, w, gov)
        h = 1e-6
        for k in range(5):
            plus, minus = w.copy(), w.copy()
            plus[k] += h
            minus[k] -= h
            numeric = (
                row_softmax_entropy(fuse_proximity(vhat, ghat, plus).A)
                - row_softmax_entropy(fuse_proximity(vhat, ghat, minus).A)
            ) / (2 * h)
            assert grad[k] == pytest.approx(numeric, abs=1e-7)

    def test_learns_clustered_view(self, two_block_views):
        ghat, vhat = two_block_views
        learner = FusionWeightLearner(lr=1.0, iters=500)
        w = learner.fit(vhat, ghat)
        assert w[7] == 0.5
        assert np.mean(w) >= 0.9
        assert learner.loss_history_[-1] < learner.loss_history_[0]

    def test_learns_clustered_data_view(self, two_block_views):
        ghat, vhat = two_block_views
        w = FusionWeightLearner(lr=1.0, iters=500).fit(ghat, vhat)
        assert np.mean(w) <= 0.1

    def test_identical_views_keep_init(self, two_block_views):
        ghat, _ = two_block_views
        w = FusionWeightLearner(lr=1.0, iters=50, init_w=0.3).fit(ghat, ghat)
        assert np.all(w == 0.3)

    def test_trainable_subset(self, two_block_views):
        ghat, vhat = two_block_views
        w0 = np.linspace(0.1, 0.8, 8)
        w = FusionWeightLearner(lr=1.0, iters=100).fit(vhat, ghat, w0=w0, trainable=[0])
        assert w[1:].tobytes() == w0[1:].tobytes()
        assert w[0] > w0[0]

    def test_mlp_learner_bounds(self, two_block_views):
        ghat, vhat = two_block_views
        learner = FusionWeightLearner(lr=0.5, iters=100, learner="mlp", seed=1)
        w = learner.fit(vhat, ghat)
        assert w.shape == (8,)
        assert np.all((w >= 0.0) & (w <= 1.0))
        assert len(learner.loss_history_) == 101

    def test_unknown_learner(self):
        with pytest.raises(InvalidArgumentError):
            FusionWeightLearner(learner="adam")

    def test_last_client_keeps_init(self, two_block_views, caplog):
        ghat, vhat = two_block_views
        with caplog.at_level("DEBUG", logger="ProximityBuilder"):
            w = FusionWeightLearner(lr=1.0, iters=50, init_w=0.3).fit(vhat, ghat)
        assert w[7] == 0.3
        assert "[7] govern no pair" in caplog.text

    def test_idle_clients_follow_priority(self):
        assert idle_clients(governor_matrix(np.arange(4.0))).tolist() == [3]
        assert idle_clients(governor_matrix(np.array([3.0, 2.0, 1.0, 0.0]))).tolist() == [0]

    @pytest.mark.parametrize("seed", range(10))
    def test_entropy_never_increases(self, seed):
        rng = np.random.default_rng(seed)
        raw_g, raw_v = rng.uniform(size=(2, 8, 8))
        ghat, vhat = (raw_g + raw_g.T) / 2, (raw_v + raw_v.T) / 2
        np.fill_diagonal(ghat, 0.0)
        np.fill_diagonal(vhat, 0.0)
        learner = FusionWeightLearner(lr=0.01, iters=100, init_w=float(rng.uniform()))
        learner.fit(vhat, ghat)
        assert np.all(np.diff(learner.loss_history_) <= 1e-9)


class TestBuildProximity:
    @pytest.fixture
    def sigs(self):
        rng = np.random.default_rng(0)
        out = []
        for i in range(6):
            classes = [0, 1] if i < 3 else [2, 3]
            d = gaussian_client(i, classes, seed=i)
            out.append(build_signature(d, rng.normal(size=12), 0.5, mask_seed=0, p_fraction=0.05))
        return out

    @pytest.mark.parametrize("view,expected", [("data", 0.0), ("gradient", 1.0)])
    def test_single_views(self, sigs, view, expected):
        prox = build_proximity(sigs, 4, view=view)
        assert np.all(prox.w == expected)
        source = prox.Vhat if view == "data" else prox.Ghat
        assert np.allclose(prox.A, source)

    def test_fused(self, sigs):
        prox = build_proximity(sigs, 4, iters=20)
        assert prox.N == 6
        assert prox.A.min() >= 0.0 and prox.A.max() <= 1.0
        assert np.allclose(prox.A, prox.A.T)
        assert prox.Vprime.shape == (6, 6, 4)
        # Clients of the same class pair are closer in the data view
        assert prox.Vhat[0, 1] < prox.Vhat[0, 4]

    def test_unknown_view(self, sigs):
        with pytest.raises(InvalidArgumentError):
            build_proximity(sigs, 4, view="both")

    def test_appended_keeps_existing_entries(self, sigs):
        prox = build_proximity(sigs[:5], 4, iters=20)
        g_row = gradient_similarity_row(sigs[5], sigs[:5])
        v_row, angles = data_similarity_row(sigs[5], sigs[:5], 4, 0.2, 1.0, prox.weight_bounds)
        grown = prox.appended(g_row, v_row, angles, 0.5)
        assert grown.N == 6
        assert grown.A[:5, :5].tobytes() == prox.A.tobytes()
        assert grown.w[5] == 0.5
        assert grown.priority[5] < grown.priority[:5].min()
        assert np.all((grown.Ghat[5] >= 0.0) & (grown.Ghat[5] <= 1.0))

    def test_appended_priority_grows(self, sigs):
        prox = build_proximity(sigs[:5], 4, iters=20)
        g_row = gradient_similarity_row(sigs[5], sigs[:5])
        v_row, angles = data_similarity_row(sigs[5], sigs[:5], 4, 0.2, 1.0, prox.weight_bounds)
        grown = prox.appended(g_row, v_row, angles, 0.5)
        assert grown.priority.shape == (6,)
        refused = grown.refused(np.full(6, 0.5))
        assert refused.A.shape == (6, 6)
        assert np.allclose(refused.A, refused.A.T)

    def test_rejects_mismatched_priority(self, sigs):
        prox = build_proximity(sigs, 4, iters=5)
        with pytest.raises(InvalidArgumentError, match="priority"):
            replace(prox, priority=np.arange(4.0))

    def test_refreshed_replaces_row(self, sigs):
        prox = build_proximity(sigs, 4, iters=20)
        g_row = np.full(6, prox.G.max())
        v_row = np.full(6, prox.V.max())
        refreshed = prox.refreshed(2, g_row, v_row, np.zeros((6, 4)))
        assert refreshed.A[2, 2] == 0.0
        assert np.allclose(refreshed.Ghat[2, [0, 1, 3, 4, 5]], 1.0)
        assert np.allclose(refreshed.A, refreshed.A.T)
        mask = np.ones(6, dtype=bool)
        mask[2] = False
        assert np.array_equal(refreshed.A[np.ix_(mask, mask)], prox.A[np.ix_(mask, mask)])
