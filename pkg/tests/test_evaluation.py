import numpy as np
import pytest

from src.data.datamodel import ClientDataset
from src.federation.accounting import (
    CommunicationLedger,
    block_bytes,
    full_model_bytes,
    primary_round_bytes,
    secondary_round_bytes,
)
from src.federation.evaluation import balanced_accuracy, evaluate
from src.model import ArchSpec, DualEncoderModel, init_params
from src.utils.helpers import derive_rng


@pytest.fixture
def arch() -> ArchSpec:
    return ArchSpec(input_dim=3, num_classes=3, hidden=(4,), feature_dim=2, activation="tanh")


class TestBalancedAccuracy:
    def test_mean_recall(self):
        assert balanced_accuracy(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1])) == pytest.approx(0.75)

    def test_imbalanced_classes(self):
        y = np.array([0] * 9 + [1])
        assert balanced_accuracy(y, np.zeros(10, dtype=int)) == pytest.approx(0.5)

    def test_predicting_absent_class(self):
        assert balanced_accuracy(np.array([0, 0]), np.array([0, 2])) == pytest.approx(0.5)


class TestEvaluate:
    def test_per_client_and_cluster(self, arch, small_dataset):
        models = [init_params(arch, derive_rng(0, "eval", z)) for z in range(2)]
        test = ClientDataset(0, small_dataset.features, np.clip(small_dataset.labels, 0, 2), 3)
        result = evaluate(arch, models, [0, 1, 1], [test, test.with_id(1), test.with_id(2)])
        assert set(result.per_client) == {0, 1, 2}
        assert result.per_client[1] == result.per_client[2]
        assert result.per_cluster[1] == pytest.approx(result.per_client[1])
        expected = balanced_accuracy(test.labels, DualEncoderModel(arch).predict(models[0], test.features))
        assert result.per_client[0] == pytest.approx(expected)
        assert result.mean == pytest.approx(np.mean(list(result.per_client.values())))

    def test_skips_missing_test_data(self, arch, caplog):
        models = [init_params(arch, derive_rng(0, "eval", 0))]
        test = ClientDataset(0, np.ones((2, 3)), [0, 1], 3)
        with caplog.at_level("WARNING", logger="Evaluator"):
            result = evaluate(arch, models, [0, 0, 0], [test, None, None])
        assert list(result.per_client) == [0]
        assert len(result.warnings) == 2
        assert "Client 2 has no test data" in caplog.text

    def test_nothing_to_evaluate(self, arch):
        models = [init_params(arch, derive_rng(0, "eval", 0))]
        assert np.isnan(evaluate(arch, models, [0], [None]).mean)


class TestAccounting:
    def test_block_sizes(self, arch):
        assert block_bytes(arch, "enc1") == 26 * 8
        assert full_model_bytes(arch) == (26 + 26 + 15) * 8

    def test_round_bytes(self, arch):
        assert primary_round_bytes(arch) == ((26 + 15) * 8, 67 * 8)
        assert secondary_round_bytes(arch) == (26 * 8, 26 * 8)

    def test_single_encoder_has_no_secondary_traffic(self, arch):
        assert secondary_round_bytes(arch.single()) == (0, 0)

    def test_ledger(self):
        ledger = CommunicationLedger()
        ledger.record(0, 1, 10, 20)
        ledger.record(0, 1, 5, 5)
        ledger.record(0, 2, 1, 1)
        ledger.record(1, 1, 3, 4)
        assert ledger.client_bytes(0, 1) == (15, 25)
        assert ledger.round_totals(0) == (16, 26)
        assert ledger.client_bytes(2, 1) == (0, 0)
        assert ledger.total_up == 19
        assert ledger.total_down == 30
        assert [(r["round"], r["client_id"]) for r in ledger.rows()] == [(0, 1), (0, 2), (1, 1)]
