import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errcast.learn import (
    EvalReport,
    LogRegConfig,
    MlpConfig,
    Standardizer,
    decide,
    evaluate,
    fit_logreg,
    fit_mlp,
    fit_single,
    load_artifact,
    manifest_hash,
    run_protocol,
    save_artifact,
    score_with_artifact,
    stratified_split,
)


def _blobs(rng, n=400, gap=4.0):
    half = n // 2
    X = np.vstack(
        [rng.normal(-gap / 2, 0.5, size=(half, 2)), rng.normal(gap / 2, 0.5, size=(half, 2))]
    )
    y = np.array([0] * half + [1] * half)
    return X, y


def _xor(rng, n=1200, sigma=0.1):
    centers = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
    labels = np.array([0, 0, 1, 1])
    idx = rng.integers(0, 4, n)
    return centers[idx] + rng.normal(0, sigma, size=(n, 2)), labels[idx]


class TestStratifiedSplit:
    def test_exact_proportions(self):
        e = np.array([1] * 30 + [0] * 70)
        train, test = stratified_split(e, 0.8, seed=0)
        assert np.sum(e[train]) == 24 and np.sum(e[test]) == 6
        assert len(train) == 80 and len(test) == 20

    def test_deterministic_given_seed(self):
        e = np.array([0, 1] * 50)
        a = stratified_split(e, 0.8, seed=9)
        b = stratified_split(e, 0.8, seed=9)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        c = stratified_split(e, 0.8, seed=10)
        assert not np.array_equal(a[0], c[0])

    def test_small_minority_within_one(self):
        e = np.array([1] * 7 + [0] * 43)
        train, _ = stratified_split(e, 0.8, seed=3)
        assert np.sum(e[train]) in (5, 6)

    def test_disjoint_covering(self):
        e = np.array([0, 1] * 25)
        train, test = stratified_split(e, 0.8, seed=1)
        combined = np.sort(np.concatenate([train, test]))
        assert np.array_equal(combined, np.arange(len(e)))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            stratified_split(np.zeros(10, dtype=int))


class TestStandardizer:
    def test_train_statistics(self):
        rng = np.random.default_rng(0)
        X = rng.normal(3.0, 2.5, size=(200, 6))
        st_ = Standardizer.fit(X)
        Z = st_.transform(X)
        assert np.abs(Z.mean(axis=0)).max() < 1e-9
        assert np.abs(Z.std(axis=0) - 1.0).max() < 1e-9

    def test_constant_feature_maps_to_zero(self):
        X = np.column_stack([np.ones(50), np.arange(50, dtype=float)])
        Z = Standardizer.fit(X).transform(X)
        assert np.all(Z[:, 0] == 0.0)
        assert np.abs(Z[:, 1].std() - 1.0) < 1e-9

    def test_leakage_refit_changes_outputs(self):
        rng = np.random.default_rng(1)
        train = rng.normal(0, 1, size=(100, 3))
        test = rng.normal(5, 2, size=(40, 3))
        fitted_on_train = Standardizer.fit(train).transform(test)
        fitted_on_test = Standardizer.fit(test).transform(test)
        assert not np.allclose(fitted_on_train, fitted_on_test)


class TestLogReg:
    def test_separable_blobs_high_f1(self):
        rng = np.random.default_rng(7)
        X, y = _blobs(rng)
        rep = run_protocol(X, y, "logreg", seeds=(0,))
        assert rep.error_f1 >= 99.0

    def test_identical_features_predict_majority(self):
        X = np.ones((60, 4))
        y = np.array([0] * 40 + [1] * 20)
        model = fit_logreg(Standardizer.fit(X).transform(X), y)
        assert np.abs(model.weights).max() < 1e-6
        preds = decide(model.predict_proba(Standardizer.fit(X).transform(X)))
        assert np.all(preds == 0)

    def test_non_finite_rejected(self):
        X = np.array([[1.0], [np.nan]])
        with pytest.raises(ValueError, match="non-finite"):
            fit_logreg(X, [0, 1])

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        X, y = _blobs(rng, n=100)
        m1 = fit_logreg(X, y)
        m2 = fit_logreg(X, y)
        assert np.array_equal(m1.weights, m2.weights) and m1.bias == m2.bias


class TestMlp:
    def test_xor_beats_logreg(self):
        rng = np.random.default_rng(11)
        X, y = _xor(rng, n=1200)
        rep_mlp = run_protocol(X, y, "mlp", seeds=(0,))
        rep_lr = run_protocol(X, y, "logreg", seeds=(0,))
        assert rep_mlp.error_f1 >= 95.0
        assert rep_lr.error_f1 <= 70.0

    def test_config_validation(self):
        with pytest.raises(ValueError, match="epochs"):
            MlpConfig(epochs=0)
        with pytest.raises(ValueError, match="three fully connected"):
            MlpConfig(hidden_sizes=(64,))

    def test_exact_epochs_and_steps(self):
        rng = np.random.default_rng(2)
        X, y = _blobs(rng, n=100)
        model = fit_mlp(X, y, MlpConfig(epochs=3, batch_size=32), seed=0)
        assert model.epochs_run == 3
        assert model.steps_run == 3 * int(np.ceil(100 / 32))
        assert len(model.history) == 3

    def test_bit_identical_given_seed(self):
        rng = np.random.default_rng(4)
        X, y = _blobs(rng, n=80)
        cfg = MlpConfig(epochs=2)
        m1 = fit_mlp(X, y, cfg, seed=5)
        m2 = fit_mlp(X, y, cfg, seed=5)
        assert all(np.array_equal(a, b) for a, b in zip(m1.params, m2.params))
        m3 = fit_mlp(X, y, cfg, seed=6)
        assert not all(np.array_equal(a, b) for a, b in zip(m1.params, m3.params))

    def test_zero_weights_forward_is_half(self):
        model = fit_mlp(np.zeros((8, 3)), np.array([0, 1] * 4), MlpConfig(epochs=1), seed=0)
        for k in range(len(model.params)):
            model.params[k] = np.zeros_like(model.params[k])
        assert np.allclose(model.predict_proba(np.zeros((2, 3))), 0.5)


class TestDecide:
    def test_boundary_inclusive(self):
        assert decide(np.array([0.5]), 0.5)[0] == 1

    def test_extreme_threshold(self):
        p = np.linspace(0.01, 0.99, 50)
        assert decide(p, 1.0 - 1e-9).sum() == 0

    def test_invalid_tau(self):
        for tau in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(ValueError):
                decide(np.array([0.5]), tau)

    @given(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=40), st.data())
    @settings(max_examples=60, deadline=None)
    def test_raising_tau_never_increases_positives(self, probs, data):
        p = np.array(probs)
        lo = data.draw(st.floats(0.01, 0.98))
        hi = data.draw(st.floats(lo, 0.99))
        assert decide(p, hi).sum() <= decide(p, lo).sum()

    def test_monotone_rescaling_invariance(self):
        p = np.array([0.1, 0.4, 0.6, 0.9])
        tau = 0.5
        g = lambda x: x**3 / (x**3 + (1 - x) ** 3)  # strictly monotone on (0,1)
        assert np.array_equal(decide(p, tau), decide(g(p), g(tau)))


class TestEvaluate:
    def test_perfect_predictions(self):
        rep = evaluate([1, 0, 1, 0], [1, 0, 1, 0])
        assert rep.error_f1 == 100.0 and rep.accuracy == 100.0

    def test_degenerate_all_negative_is_zero(self):
        rep = evaluate([0, 0, 0, 0], [1, 0, 1, 0])
        assert rep.error_f1 == 0.0
        assert rep.error_precision == 0.0 and rep.error_recall == 0.0

    def test_f1_is_harmonic_mean(self):
        rng = np.random.default_rng(8)
        preds = rng.integers(0, 2, 200)
        e = rng.integers(0, 2, 200)
        rep = evaluate(preds, e)
        if rep.error_precision + rep.error_recall > 0:
            expected = (
                2 * rep.error_precision * rep.error_recall
                / (rep.error_precision + rep.error_recall)
            )
            assert rep.error_f1 == pytest.approx(expected, abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            evaluate([], [])

    def test_report_dict_roundtrip(self):
        rep = evaluate([1, 0], [1, 1])
        assert EvalReport.from_dict(rep.to_dict()) == rep


class TestProtocol:
    def test_mean_across_seeds(self):
        rng = np.random.default_rng(12)
        X, y = _blobs(rng, n=200, gap=1.5)
        rep = run_protocol(X, y, "logreg", seeds=(0, 1, 2))
        assert rep.seeds == (0, 1, 2)
        assert len(rep.per_seed) == 3
        assert rep.error_f1 == pytest.approx(
            np.mean([r.error_f1 for r in rep.per_seed]), abs=1e-12
        )

    def test_three_seed_reproducibility(self):
        rng = np.random.default_rng(13)
        X, y = _xor(rng, n=300)
        rep1 = run_protocol(X, y, "mlp", seeds=(0, 1, 2), mlp_config=MlpConfig(epochs=2))
        rep2 = run_protocol(X, y, "mlp", seeds=(0, 1, 2), mlp_config=MlpConfig(epochs=2))
        assert rep1.to_dict() == rep2.to_dict()

    def test_unknown_model_kind(self):
        with pytest.raises(ValueError, match="model kind"):
            run_protocol(np.zeros((10, 1)), [0, 1] * 5, "svm")


class TestArtifact:
    def test_roundtrip_and_hash_refusal(self, tmp_path):
        rng = np.random.default_rng(14)
        X, y = _blobs(rng, n=120)
        names = ("f0", "f1")
        model, standardizer, _ = fit_single(X, y, "logreg", seed=0)
        path = tmp_path / "model.json"
        save_artifact(path, model, standardizer, names, tau=0.5)
        artifact = load_artifact(path)
        p = score_with_artifact(artifact, names, X)
        assert np.allclose(p, model.predict_proba(standardizer.transform(X)))
        with pytest.raises(ValueError, match="manifest hash"):
            score_with_artifact(artifact, ("f0", "other"), X)

    def test_mlp_artifact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(15)
        X, y = _blobs(rng, n=80)
        model, standardizer, _ = fit_single(
            X, y, "mlp", seed=1, mlp_config=MlpConfig(epochs=1)
        )
        path = tmp_path / "mlp.json"
        save_artifact(path, model, standardizer, ("a", "b"), tau=0.4)
        artifact = load_artifact(path)
        assert artifact.tau == 0.4
        p = score_with_artifact(artifact, ("a", "b"), X)
        assert np.allclose(p, model.predict_proba(standardizer.transform(X)), atol=1e-12)

    def test_manifest_hash_stable(self):
        assert manifest_hash(("a", "b")) == manifest_hash(["a", "b"])
        assert manifest_hash(("a", "b")) != manifest_hash(("b", "a"))
