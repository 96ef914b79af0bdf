import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rau_emotion import layers as L
from rau_emotion import rau
from rau_emotion.data import CLASS_NAMES
from rau_emotion.rau import AutoencoderConfig, RauModel, RepresentationUnit, cosine_distance

FAST = AutoencoderConfig(structure="shallow", epochs_per_class=3, embed_iterations=3)

vectors = arrays(np.float64, 6, elements=st.floats(-10, 10)).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=80)
@given(vectors, vectors, st.floats(0.01, 100))
def test_cosine_properties(a, b, c):
    assert cosine_distance(a, a) == pytest.approx(0, abs=1e-6)
    assert cosine_distance(a, -a) == pytest.approx(2, abs=1e-6)
    assert cosine_distance(a, c * b) == pytest.approx(cosine_distance(a, b), abs=1e-6)
    assert cosine_distance(a, b) == pytest.approx(cosine_distance(b, a), abs=1e-12)
    assert 0 <= cosine_distance(a, b) <= 2


def test_cosine_hand_values_and_errors():
    assert cosine_distance([1, 0], [0, 1]) == pytest.approx(1)
    assert cosine_distance([1, 1], [1, 0]) == pytest.approx(1 - np.sqrt(0.5))
    with pytest.raises(rau.UndefinedDistanceError):
        cosine_distance([0, 0], [1, 0])
    with pytest.raises(ValueError):
        cosine_distance([1, 0], [1, 0, 0])


def test_config_validation():
    with pytest.raises(ValueError):
        AutoencoderConfig(k=200)
    with pytest.raises(ValueError):
        AutoencoderConfig(structure="wide")
    deep = AutoencoderConfig().model_spec()
    assert [l.units for l in deep.layers if l.kind == "dense"] == [2800, 300, 2800, 4096]
    assert deep.output_shape == (4096,)


def images(n, seed):
    return np.random.default_rng(seed).random((n, 4096)).astype(np.float32)


def test_unit_is_centroid_of_codes():
    x = images(4, 0)
    ae = rau.train_class_autoencoder(x, FAST)
    unit = rau.compute_representation_unit(ae, x, FAST, "fear")
    # independent oracle: run the encoder half by hand
    w, b = ae.params[0]["weight"].astype(np.float64), ae.params[0]["bias"]
    codes = 1 / (1 + np.exp(-(x @ w.T + b)))
    np.testing.assert_allclose(unit.vector, codes.mean(axis=0), atol=1e-5)
    single = rau.compute_representation_unit(ae, x[:1], FAST)
    np.testing.assert_allclose(single.vector, rau.encode(ae, x[:1], 2)[0], atol=1e-7)


def test_unit_needs_trained_model():
    untrained = L.build_model(FAST.model_spec())
    with pytest.raises(ValueError, match="trained"):
        rau.compute_representation_unit(untrained, images(1, 0), FAST)


def test_embed_is_deterministic_and_zero_iterations_uses_init():
    x = images(1, 1)
    a = rau.embed_example(x, FAST)
    assert a.tobytes() == rau.embed_example(x, FAST).tobytes()
    assert a.shape == (300,)
    cfg0 = AutoencoderConfig(structure="shallow", embed_iterations=0)
    init = L.build_model(cfg0.model_spec())
    np.testing.assert_array_equal(rau.embed_example(x, cfg0), rau.encode(init, x, 2)[0])
    with pytest.raises(ValueError):
        rau.embed_example(images(2, 0), FAST)


def toy_model():
    """Units along the first seven coordinate axes."""
    cfg = AutoencoderConfig(structure="shallow", embed_mode="class_encoder")
    axes = np.eye(300, dtype=np.float32)
    units = [RepresentationUnit(name, axes[i]) for i, name in enumerate(CLASS_NAMES)]
    return RauModel(cfg, [], units)


def test_toy_ranking(monkeypatch):
    model = toy_model()
    code = np.zeros(300)
    code[[3, 0]] = [2.0, 1.0]
    monkeypatch.setattr(rau, "class_distances",
                        lambda m, img, seed=None: np.array(
                            [cosine_distance(code, u.vector) for u in m.units]))
    top = rau.classify_topk(model, images(1, 0), k=3)
    assert [name for name, _ in top] == ["happiness", "anger", "sadness"]
    assert top[0][1] < top[1][1] < top[2][1]
    for k in range(1, 8):
        names = [n for n, _ in rau.classify_topk(model, None, k)]
        assert names == [n for n, _ in rau.classify_topk(model, None, 7)][:k]
    with pytest.raises(ValueError):
        rau.classify_topk(model, None, 8)


def test_rank_ties_follow_canonical_order():
    assert rau.rank_distances([0.5, 0.2, 0.5, 0.2, 0.9, 0.0, 0.2]) == [5, 1, 3, 6, 0, 2, 4]


@settings(max_examples=30)
@given(arrays(np.float64, (7, 5), elements=st.floats(0.1, 5)), st.lists(
    st.floats(0.1, 10), min_size=7, max_size=7), arrays(np.float64, 5, elements=st.floats(0.1, 5)))
def test_ranking_ignores_unit_scale(units, scales, code):
    d1 = [cosine_distance(code, u) for u in units]
    d2 = [cosine_distance(code, s * u) for s, u in zip(scales, units)]
    np.testing.assert_allclose(d1, d2, atol=1e-9)


@pytest.fixture(scope="module")
def fast_model(synth_corpus):
    return rau.train_rau_from_manifest(synth_corpus, FAST)


def test_evaluate_rau_reports(fast_model, synth_corpus):
    sub = type(synth_corpus)(synth_corpus.select("test")[:10], root=synth_corpus.root)
    r2 = rau.evaluate_rau(fast_model, sub, k=2)
    r7 = rau.evaluate_rau(fast_model, sub, k=7)
    assert r2.n_examples == 10 and r7.topk_accuracy == 1.0
    assert r2.topk_accuracy >= r2.top1_accuracy
    assert r2.confusion.tolist() == r7.confusion.tolist()


def test_save_load_round_trip(fast_model, tmp_path):
    rau.save_rau(fast_model, tmp_path)
    back = rau.load_rau(tmp_path)
    assert back.config == fast_model.config
    for a, b in zip(fast_model.units, back.units):
        assert a.class_label == b.class_label and a.vector.tobytes() == b.vector.tobytes()
    x = images(1, 5)
    np.testing.assert_array_equal(rau.class_distances(fast_model, x),
                                  rau.class_distances(back, x))
    rau.save_rau(back, tmp_path / "again")
    assert (tmp_path / "units.bin").read_bytes() == (tmp_path / "again/units.bin").read_bytes()


def test_train_rau_requires_all_classes():
    with pytest.raises(ValueError, match="neutral"):
        rau.train_rau({n: images(1, 0) for n in CLASS_NAMES[:6]}, FAST)
