import copy

import numpy as np
import pytest

from fedcm import model as mc
from fedcm.fedops import AggregatedClusterModel
from fedcm.matching import (ConceptModelSet, client_concept_match,
                            server_concept_match, verify_descent_contraction)
from fedcm.model import Batch, LayerShape, WeightVector

from conftest import random_batch

SHAPE = LayerShape(1, (), 3)  # parameter_count = 6


def wv(values) -> WeightVector:
    out = np.zeros(6)
    values = np.asarray(values, dtype=np.float64)
    out[:values.size] = values
    return WeightVector(SHAPE, out)


def cluster(cid, values, samples=10) -> AggregatedClusterModel:
    return AggregatedClusterModel(cid, wv(values), samples, (0,))


class TestConceptModelSet:
    def test_initialize_shares_one_draw(self):
        cms = ConceptModelSet.initialize(SHAPE, 3, seed=0)
        assert len(cms.models) == 3
        assert np.array_equal(cms.models[0].values, cms.models[2].values)
        assert np.all(np.isinf(cms.dist_record))

    def test_initialize_deterministic(self):
        a = ConceptModelSet.initialize(SHAPE, 2, seed=4)
        b = ConceptModelSet.initialize(SHAPE, 2, seed=4)
        assert np.array_equal(a.models[0].values, b.models[0].values)

    def test_record_length_must_match(self):
        with pytest.raises(ValueError):
            ConceptModelSet([wv([0])], np.array([np.inf, np.inf]))


class TestServerConceptMatch:
    def test_initial_round_picks_nearest(self):
        # Records all +inf; distances to the two models are 5 and 3, so the
        # cluster claims model 1, lowers its record to 3, leaves model 0 alone.
        cms = ConceptModelSet([wv([5]), wv([3])], np.array([np.inf, np.inf]))
        outcome = server_concept_match(cms, [cluster(0, [0])])
        a = outcome.assignments[0]
        assert (a.cluster_id, a.concept_id, a.match_distance) == (0, 1, 3.0)
        assert np.array_equal(cms.models[1].values, wv([0]).values)
        assert np.array_equal(cms.models[0].values, wv([5]).values)
        assert cms.dist_record[1] == 3.0 and np.isinf(cms.dist_record[0])

    def test_zero_distance_dominates(self):
        target = wv([1, 2, 3])
        cms = ConceptModelSet([wv([9]), target], np.array([0.5, 0.25]))
        outcome = server_concept_match(
            cms, [AggregatedClusterModel(0, target, 10, (0,))])
        a = outcome.assignments[0]
        assert a.concept_id == 1 and a.match_distance == 0.0
        assert cms.dist_record[1] == 0.0

    def test_no_qualifier_skips(self, caplog):
        cms = ConceptModelSet([wv([0]), wv([10])], np.array([1.0, 1.0]))
        before = [m.values.copy() for m in cms.models]
        with caplog.at_level("WARNING", logger="fedcm.matching"):
            outcome = server_concept_match(cms, [cluster(0, [5])])
        a = outcome.assignments[0]
        assert a.concept_id is None and a.match_distance is None
        for prev, model in zip(before, cms.models):
            assert np.array_equal(prev, model.values)
        assert np.array_equal(cms.dist_record, [1.0, 1.0])
        assert any("matched no concept model" in r.message for r in caplog.records)

    def test_clusters_processed_in_ascending_id_order(self):
        # Both clusters prefer model 0; the lower id goes first and lowers the
        # record to 1, after which the second cluster (distance 2) fails the
        # record test on model 0 and falls through to model 1.
        cms = ConceptModelSet([wv([0]), wv([30])], np.array([np.inf, np.inf]))
        outcome = server_concept_match(
            cms, [cluster(1, [2]), cluster(0, [1])])
        by_id = {a.cluster_id: a for a in outcome.assignments}
        assert by_id[0].concept_id == 0 and by_id[0].match_distance == 1.0
        assert by_id[1].concept_id == 1

    def test_later_cluster_may_rematch_with_strictly_lower_distance(self):
        cms = ConceptModelSet([wv([10])], np.array([np.inf]))
        outcome = server_concept_match(
            cms, [cluster(0, [5]), cluster(1, [6])])
        by_id = {a.cluster_id: a for a in outcome.assignments}
        # Cluster 0 matches at distance 5; cluster 1 sits at distance 1 from
        # the freshly accepted model, beating the lowered record.
        assert by_id[0].match_distance == 5.0
        assert by_id[1].match_distance == 1.0
        assert cms.dist_record[0] == 1.0
        assert np.array_equal(cms.models[0].values, wv([6]).values)

    def test_fuzz_record_monotone_and_unmatched_conserved(self):
        rng = np.random.default_rng(0)
        cms = ConceptModelSet([wv(rng.normal(size=6)) for _ in range(4)],
                              np.full(4, np.inf))
        for _ in range(300):
            clusters = [AggregatedClusterModel(j, wv(rng.normal(scale=3, size=6)),
                                               10, (j,))
                        for j in range(int(rng.integers(1, 5)))]
            before_records = cms.dist_record.copy()
            before_models = [m.values.copy() for m in cms.models]
            outcome = server_concept_match(cms, clusters)
            matched = {a.concept_id for a in outcome.assignments
                       if a.concept_id is not None}
            assert np.all(cms.dist_record <= before_records)
            for k in range(4):
                if k not in matched:
                    assert np.array_equal(cms.models[k].values, before_models[k])


class TestClientConceptMatch:
    def test_single_model(self):
        batch = random_batch(LayerShape(2, (3,), 2), 4, seed=0)
        assert client_concept_match([mc.init_weights(LayerShape(2, (3,), 2), 0)],
                                    batch) == 0

    def test_trained_model_wins(self):
        shape = LayerShape(2, (8,), 2)
        rng = np.random.default_rng(1)
        x = np.vstack([rng.normal(loc=(-3, 0), scale=0.3, size=(40, 2)),
                       rng.normal(loc=(3, 0), scale=0.3, size=(40, 2))])
        batch = Batch(x, np.array([0] * 40 + [1] * 40))
        opt = mc.OptimizerState.fresh(shape.parameter_count, learning_rate=0.01)
        trained, _ = mc.train(mc.init_weights(shape, 0), batch, opt, epochs=10,
                              minibatch_size=16, patience=3,
                              holdout_fraction=0.0, seed=0)
        models = [mc.init_weights(shape, s) for s in (10, 11)] + [trained]
        assert client_concept_match(models, batch) == 2

    def test_tie_takes_lowest_index(self):
        shape = LayerShape(2, (3,), 2)
        w = mc.init_weights(shape, 5)
        batch = random_batch(shape, 6, seed=2)
        assert client_concept_match([w, w], batch) == 0

    def test_batch_order_invariant(self):
        shape = LayerShape(2, (3,), 2)
        models = [mc.init_weights(shape, s) for s in range(3)]
        batch = random_batch(shape, 12, seed=3)
        reversed_batch = Batch(batch.inputs[::-1], batch.labels[::-1])
        assert (client_concept_match(models, batch)
                == client_concept_match(models, reversed_batch))

    def test_empty_model_list(self):
        with pytest.raises(ValueError):
            client_concept_match([], random_batch(LayerShape(2, (3,), 2), 2, 0))


class TestVerifyDescentContraction:
    def test_identity_matrix_geometric_steps(self):
        report = verify_descent_contraction(np.eye(2), np.zeros(2),
                                            np.array([1.0, 0.0]), eta=0.1,
                                            steps=10)
        assert report.passed
        expected = 0.1 * 0.9 ** np.arange(10)
        assert np.allclose(report.step_norms, expected, atol=1e-12)

    def test_diagonal_instance(self):
        report = verify_descent_contraction(np.diag([1.0, 4.0]), np.zeros(2),
                                            np.array([1.0, 1.0]), eta=0.2,
                                            steps=100)
        assert report.passed

    def test_rejects_eta_out_of_regime(self):
        with pytest.raises(ValueError):
            verify_descent_contraction(np.eye(2), np.zeros(2),
                                       np.array([1.0, 0.0]), eta=0.0, steps=5)
        with pytest.raises(ValueError):
            verify_descent_contraction(np.eye(2), np.zeros(2),
                                       np.array([1.0, 0.0]), eta=1.5, steps=5)

    def test_rejects_non_spd(self):
        with pytest.raises(ValueError):
            verify_descent_contraction(np.diag([1.0, -1.0]), np.zeros(2),
                                       np.array([1.0, 0.0]), eta=0.1, steps=5)
        with pytest.raises(ValueError):
            verify_descent_contraction(np.array([[1.0, 2.0], [0.0, 1.0]]),
                                       np.zeros(2), np.array([1.0, 0.0]),
                                       eta=0.1, steps=5)

    def test_rejects_minimizer_start(self):
        with pytest.raises(ValueError):
            verify_descent_contraction(np.eye(2), np.ones(2), np.ones(2),
                                       eta=0.1, steps=5)
