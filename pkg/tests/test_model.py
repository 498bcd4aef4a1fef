import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mhlr import kernels as kernels_mod
from mhlr.dataset import (
    MultiviewDataset,
    generate_two_moons_multiview,
    mask_labeled_fraction,
)
from mhlr.kernels import KernelSpec, gram_matrix
from mhlr.model import (
    CorruptModelError,
    MethodSpec,
    ModelError,
    MulticlassModel,
    VersionMismatchError,
    build_matrices,
    decision_values,
    load_model,
    method_family,
    predict,
    predict_proba,
    predict_proba_ovr,
    save_model,
    train_binary,
    train_one_vs_rest,
)
from mhlr.optimize import Hyperparams

FAST = Hyperparams(outer_max_iter=20)


@pytest.fixture(scope="module")
def moons():
    return mask_labeled_fraction(generate_two_moons_multiview(80, 0.1, 3), 0.25, 3)


def same_binary(a, b):
    np.testing.assert_array_equal(a.alpha, b.alpha)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.beta, b.beta)


class TestMethodSpec:
    def test_family_has_nine_methods(self):
        fam = method_family()
        assert set(fam) == {"VisF", "LapVF", "HesVF", "TagF", "LapTag", "HesTag",
                            "mCLR", "mLLR", "mHLR"}
        assert fam["HesTag"].view_index == 1 and fam["HesTag"].view_mode == "single"
        assert fam["mCLR"].view_mode == "concatenated" and fam["mCLR"].regularizer == "none"

    @pytest.mark.parametrize("field,value", [("regularizer", "ridge"), ("view_mode", "stacked"),
                                             ("view_index", -1), ("laplacian_weighting", "cos")])
    def test_invalid_fields(self, field, value):
        with pytest.raises(ModelError):
            MethodSpec(**{field: value})

    def test_dict_round_trip(self):
        spec = MethodSpec(kernels=(KernelSpec("linear"), KernelSpec("rbf", 0.7)),
                          hyper=Hyperparams(gamma_K=0.5), name="x")
        assert MethodSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec

    def test_none_regularizer_zeroes_gamma_I(self):
        assert MethodSpec(regularizer="none").effective_hyper().gamma_I == 0.0


class TestTraining:
    def test_concatenated_equals_single_view_on_joined_features(self, moons):
        fam = method_family(hyper=FAST)
        joined = MultiviewDataset((np.hstack(moons.views),), moons.labels, moons.labeled_mask)
        a = train_binary(moons, 0, fam["mCLR"])
        b = train_binary(joined, 0, replace(fam["VisF"], view_index=0))
        same_binary(a, b)

    def test_one_view_multiview_equals_single(self, moons):
        one = MultiviewDataset(moons.views[:1], moons.labels, moons.labeled_mask)
        fam = method_family(hyper=FAST)
        same_binary(train_binary(one, 1, fam["mHLR"]), train_binary(moons, 1, fam["HesVF"]))

    def test_regularizers_coincide_without_manifold_term(self, moons):
        hyper = replace(FAST, gamma_I=0.0)
        models = [
            train_binary(moons, 0, MethodSpec(regularizer=r, hyper=hyper))
            for r in ("none", "laplacian", "hessian")
        ]
        same_binary(models[0], models[1])
        same_binary(models[0], models[2])

    def test_gram_built_once_per_view(self, moons, monkeypatch):
        calls = []
        real = kernels_mod.gram_matrix

        def counting(X, spec):
            calls.append(X.shape)
            return real(X, spec)

        monkeypatch.setattr(kernels_mod, "gram_matrix", counting)
        train_one_vs_rest(moons, MethodSpec(regularizer="none", hyper=FAST))
        assert len(calls) == moons.n_views

    def test_unlabeled_class_named_in_error(self):
        ds = generate_two_moons_multiview(40, 0.1, 0)
        mask = np.zeros(ds.n, dtype=bool)
        mask[np.flatnonzero(ds.labels == 0)[:3]] = True
        mask[np.flatnonzero(ds.labels == 1)[:3]] = True
        labels = ds.labels.copy()
        labels[-1] = 2
        mask[-1] = False
        bad = MultiviewDataset(ds.views, labels, mask, class_names=("upper", "lower", "extra"))
        with pytest.raises(ModelError, match="extra"):
            train_one_vs_rest(bad, MethodSpec(hyper=FAST))

    def test_single_class_labels_rejected(self, moons):
        with pytest.raises(ModelError):
            train_binary(moons, 7, MethodSpec(hyper=FAST))

    def test_matrices_shape(self, moons):
        m = build_matrices(moons, method_family()["mLLR"])
        assert len(m.grams) == len(m.regularizers) == 2
        for G, R in zip(m.grams, m.regularizers):
            assert G.shape == R.shape == (moons.n, moons.n)

    def test_hessian_beats_no_manifold_on_moons(self):
        # paired runs on identical labels, default hyperparameters, mean over 5 seeds
        acc = {"none": [], "hessian": []}
        for seed in range(7, 12):
            ds = mask_labeled_fraction(generate_two_moons_multiview(200, 0.1, seed), 0.1, seed)
            test = generate_two_moons_multiview(200, 0.1, seed + 1000)
            for reg in acc:
                model = train_one_vs_rest(ds, MethodSpec(regularizer=reg))
                acc[reg].append(np.mean(predict(model, test.views) == test.labels))
        assert np.mean(acc["hessian"]) >= np.mean(acc["none"])


@pytest.fixture(scope="module")
def binary(moons):
    return train_binary(moons, 0, method_family(hyper=FAST)["mHLR"])


class TestPrediction:
    def test_zero_alpha_gives_zero(self, binary, moons):
        zero = replace(binary, alpha=np.zeros_like(binary.alpha))
        np.testing.assert_array_equal(decision_values(zero, moons.views), 0.0)

    def test_training_rows_give_K_alpha(self, binary, moons):
        K = sum(t * gram_matrix(X, s)
                for t, X, s in zip(binary.theta, binary.train_views, binary.kernel_specs))
        np.testing.assert_allclose(decision_values(binary, moons.views), K @ binary.alpha,
                                   rtol=1e-12, atol=1e-12)

    def test_linear_kernel_is_weight_vector(self, moons):
        spec = MethodSpec(regularizer="none", view_mode="single",
                          kernels=(KernelSpec("linear"),), hyper=FAST)
        b = train_binary(moons, 1, spec)
        w = moons.views[0].T @ b.alpha
        rng = np.random.default_rng(0)
        Q = rng.standard_normal((9, moons.views[0].shape[1]))
        np.testing.assert_allclose(decision_values(b, [Q, np.zeros((9, 3))]), Q @ w,
                                   rtol=1e-10, atol=1e-12)

    def test_wrong_view_count_and_width(self, binary, moons):
        with pytest.raises(ModelError):
            decision_values(binary, moons.views[:1])
        with pytest.raises(ModelError):
            decision_values(binary, [moons.views[0][:, :1], moons.views[1]])

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    def test_proba_in_open_interval_and_monotone(self, binary, a, b):
        Q = np.array([[a, b], [a + 0.5, b]])
        views = [Q, np.hstack([Q, (Q**2).sum(1, keepdims=True)])]
        p = predict_proba(binary, views)
        f = decision_values(binary, views)
        assert np.all((p > 0) & (p < 1))
        if f[0] < f[1]:
            assert p[0] <= p[1]

    def test_ovr_columns_and_argmax(self, moons):
        model = train_one_vs_rest(moons, method_family(hyper=FAST)["mCLR"])
        P = predict_proba_ovr(model, moons.views)
        assert P.shape == (moons.n, 2)
        np.testing.assert_array_equal(predict(model, moons.views),
                                      np.asarray(model.classes)[P.argmax(1)])


@pytest.fixture(scope="module")
def model(moons):
    return train_one_vs_rest(moons, method_family(hyper=FAST)["mLLR"])


class TestPersistence:
    def test_round_trip_bitwise(self, model, moons, tmp_path):
        path = tmp_path / "m.bin"
        save_model(model, str(path))
        loaded = load_model(str(path))
        assert isinstance(loaded, MulticlassModel)
        assert loaded.classes == model.classes
        assert loaded.labeled_fraction == model.labeled_fraction
        for a, b in zip(model.binaries, loaded.binaries):
            same_binary(a, b)
            assert a.method == b.method and a.kernel_specs == b.kernel_specs
            assert a.objective_trace == b.objective_trace
        np.testing.assert_array_equal(predict_proba_ovr(model, moons.views),
                                      predict_proba_ovr(loaded, moons.views))

    def test_binary_round_trip(self, model, tmp_path):
        path = str(tmp_path / "b.bin")
        save_model(model.binaries[0], path)
        same_binary(load_model(path), model.binaries[0])

    def test_save_is_deterministic(self, model, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        save_model(model, str(a))
        save_model(model, str(b))
        assert a.read_bytes() == b.read_bytes()

    @pytest.mark.parametrize("cut", [1, 100, -1])
    def test_truncated_file(self, model, tmp_path, cut):
        path = tmp_path / "m.bin"
        save_model(model, str(path))
        blob = path.read_bytes()
        path.write_bytes(blob[:cut] if cut > 0 else blob[:cut])
        with pytest.raises(CorruptModelError):
            load_model(str(path))

    def test_flipped_byte(self, model, tmp_path):
        path = tmp_path / "m.bin"
        save_model(model, str(path))
        blob = bytearray(path.read_bytes())
        blob[-5] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptModelError):
            load_model(str(path))

    def test_version_mismatch(self, model, tmp_path):
        path = tmp_path / "m.bin"
        save_model(model, str(path))
        head, payload = path.read_bytes().split(b"\n", 1)
        header = json.loads(head)
        header["format_version"] += 1
        path.write_bytes(json.dumps(header).encode() + b"\n" + payload)
        with pytest.raises(VersionMismatchError):
            load_model(str(path))
