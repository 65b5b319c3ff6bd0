import numpy as np
import pytest
from scipy.optimize import linprog

from src.data.datamodel import (
    ClientDataset,
    LabelHistogram,
    ModelParams,
    SparseGradient,
    class_histogram,
    concat_datasets,
    wasserstein_1d,
)
from src.errors import DataFormatError, InvalidArgumentError


def transport_cost(a: np.ndarray, b: np.ndarray) -> float:
    """Earth mover's distance on points 0..C-1 by linear programming"""
    c = len(a)
    cost = np.abs(np.subtract.outer(np.arange(c), np.arange(c))).ravel()
    a_eq = np.zeros((2 * c, c * c))
    for i in range(c):
        a_eq[i, i * c : (i + 1) * c] = 1.0
        a_eq[c + i, i::c] = 1.0
    res = linprog(cost, A_eq=a_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    return float(res.fun)


class TestClientDataset:
    def test_arrays_are_read_only(self, small_dataset):
        with pytest.raises(ValueError):
            small_dataset.features[0, 0] = 1.0
        with pytest.raises(ValueError):
            small_dataset.labels[0] = 1

    def test_copies_inputs(self):
        x = np.zeros((2, 2))
        d = ClientDataset(0, x, [0, 1], 2)
        x[0, 0] = 5.0
        assert d.features[0, 0] == 0.0

    def test_label_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            ClientDataset(0, np.zeros((2, 2)), [0, 2], 2)

    def test_non_integer_labels(self):
        with pytest.raises(InvalidArgumentError):
            ClientDataset(0, np.zeros((2, 2)), [0.5, 1.0], 2)

    def test_row_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            ClientDataset(0, np.zeros((3, 2)), [0, 1], 2)

    def test_non_finite_features(self):
        x = np.zeros((2, 2))
        x[1, 1] = np.inf
        with pytest.raises(InvalidArgumentError):
            ClientDataset(0, x, [0, 1], 2)

    def test_rejects_empty_dataset(self):
        with pytest.raises(InvalidArgumentError, match="no samples"):
            ClientDataset(3, np.zeros((0, 4)), np.zeros(0, dtype=int), 2)

    def test_empty_subset_is_rejected(self, small_dataset):
        with pytest.raises(InvalidArgumentError):
            small_dataset.subset(np.zeros(0, dtype=np.int64))

    def test_class_slice_and_subset(self, small_dataset):
        assert small_dataset.class_slice(2).shape == (5, 3)
        assert small_dataset.class_slice(3).shape == (0, 3)
        sub = small_dataset.subset(np.array([0, 5]))
        assert sub.labels.tolist() == [0, 2]
        assert sub.client_id == small_dataset.client_id

    def test_concat(self, small_dataset):
        pooled = concat_datasets([small_dataset, small_dataset], client_id=9)
        assert pooled.n_samples == 24
        assert pooled.client_id == 9


class TestLabelHistogram:
    def test_counts(self, small_dataset):
        h = class_histogram(small_dataset)
        assert h.counts.tolist() == [4, 3, 5, 0]
        assert h.total == 12
        assert h.present_classes.tolist() == [0, 1, 2]

    def test_rejects_negative(self):
        with pytest.raises(InvalidArgumentError):
            LabelHistogram([1, -1])

    def test_equality(self):
        assert LabelHistogram([1, 2]) == LabelHistogram(np.array([1, 2]))
        assert LabelHistogram([1, 2]) != LabelHistogram([2, 1])


class TestWasserstein:
    def test_identity_and_symmetry(self):
        a = LabelHistogram([3, 0, 2, 5])
        b = LabelHistogram([1, 4, 4, 1])
        assert wasserstein_1d(a, a) == 0.0
        assert wasserstein_1d(a, b) == wasserstein_1d(b, a)

    def test_unit_shift(self):
        assert wasserstein_1d(LabelHistogram([1, 0, 0]), LabelHistogram([0, 1, 0])) == 1.0
        assert wasserstein_1d(LabelHistogram([1, 0, 0]), LabelHistogram([0, 0, 1])) == 2.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_transport_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 10, size=6)
        b = rng.permutation(a)
        expected = transport_cost(a.astype(float), b.astype(float))
        assert wasserstein_1d(LabelHistogram(a), LabelHistogram(b)) == pytest.approx(expected, abs=1e-6)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(5)
        hs = [LabelHistogram(rng.integers(0, 6, size=5)) for _ in range(3)]
        assert wasserstein_1d(hs[0], hs[2]) <= wasserstein_1d(hs[0], hs[1]) + wasserstein_1d(hs[1], hs[2])

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            wasserstein_1d(LabelHistogram([1, 2]), LabelHistogram([1, 2, 3]))


class TestSparseGradient:
    def test_dense_and_bytes(self):
        g = SparseGradient(6, [1, 4], [0.5, -2.0])
        assert g.to_dense().tolist() == [0.0, 0.5, 0.0, 0.0, -2.0, 0.0]
        assert g.nnz == 2
        assert g.density == pytest.approx(2 / 6)
        assert g.nbytes() == 24

    def test_wire_format(self):
        g = SparseGradient(10, [0, 3, 9], [1.0, 2.0, 3.0])
        back = SparseGradient.from_bytes(g.to_bytes())
        assert back.dim == 10
        assert back.indices.tolist() == [0, 3, 9]
        assert back.values.tolist() == [1.0, 2.0, 3.0]

    def test_rejects_unsorted_indices(self):
        with pytest.raises(InvalidArgumentError):
            SparseGradient(5, [3, 1], [1.0, 1.0])

    def test_rejects_index_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            SparseGradient(3, [0, 3], [1.0, 1.0])

    def test_truncated_payload(self):
        payload = SparseGradient(4, [1], [1.0]).to_bytes()
        with pytest.raises(DataFormatError):
            SparseGradient.from_bytes(payload[:-3])
        with pytest.raises(DataFormatError):
            SparseGradient.from_bytes(b"XXXX" + payload[4:])


class TestModelParams:
    def test_replace_keeps_other_blocks(self):
        p = ModelParams(np.ones(3), np.zeros(2), np.arange(4.0))
        q = p.replace(head=np.zeros(4))
        assert q.enc1.tobytes() == p.enc1.tobytes()
        assert q.enc2.tobytes() == p.enc2.tobytes()
        assert not q.equals(p)
        assert q.size == 9

    def test_copy_is_independent(self):
        p = ModelParams(np.ones(3), np.zeros(2), np.arange(4.0))
        q = p.copy()
        q.enc1[0] = 7.0
        assert p.enc1[0] == 1.0
        assert p.flat().shape == (9,)

    def test_unknown_block(self):
        p = ModelParams(np.ones(1), np.ones(1), np.ones(1))
        with pytest.raises(InvalidArgumentError):
            p.block("enc3")
        with pytest.raises(InvalidArgumentError):
            p.replace(enc3=np.ones(1))

    def test_is_finite(self):
        assert not ModelParams(np.array([np.nan]), np.ones(1), np.ones(1)).is_finite()
