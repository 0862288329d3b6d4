import numpy as np
import pytest

from steallab import datasets as ds
from steallab.autodiff import Tensor, no_grad
from steallab.models import (ClassifierSpec, GeneratorSpec, ModelFileError, UnsupportedVersionError,
                             build_classifier, build_generator, classifier_param_count, load_model, save_model)
from steallab.training import VictimTrainConfig, train_classifier


def test_mlp_tiny_logit_shape():
    model = build_classifier(ClassifierSpec((2,), 4, "tiny", "mlp"), 0)
    assert model.classify(np.zeros((5, 2))).shape == (5, 4)


def _count_by_hand_conv_small():
    # conv 1->8 (3x3, no bias) + bn(8) ; conv 8->16 + bn(16) ; fc 16*2*2 -> 64 ; fc 64 -> 10
    return (1 * 8 * 9 + 2 * 8) + (8 * 16 * 9 + 2 * 16) + (64 * 64 + 64) + (64 * 10 + 10)


def test_conv_small_parameter_count_matches_closed_form():
    spec = ClassifierSpec((1, 8, 8), 10, "small", "conv")
    model = build_classifier(spec, 0)
    assert model.num_parameters() == _count_by_hand_conv_small() == classifier_param_count(spec)


@pytest.mark.parametrize("family,shape", [("mlp", (2,)), ("conv", (1, 8, 8))])
def test_capacity_presets_strictly_ordered(family, shape):
    counts = [classifier_param_count(ClassifierSpec(shape, 4, cap, family)) for cap in ("tiny", "small", "medium")]
    assert counts[0] < counts[1] < counts[2]


def test_same_seed_same_init():
    spec = ClassifierSpec((1, 8, 8), 10, "tiny", "conv")
    a, b = build_classifier(spec, 11).state(), build_classifier(spec, 11).state()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_spec_validation():
    with pytest.raises(ValueError):
        ClassifierSpec((2,), 1)
    with pytest.raises(ValueError):
        ClassifierSpec((1, 8, 8), 4, "small", "mlp")
    with pytest.raises(ValueError):
        GeneratorSpec((2,), num_conv_blocks=4)


@pytest.mark.parametrize("shape,blocks", [((2,), 2), ((2,), 0), ((1, 8, 8), 3), ((1, 8, 8), 0)])
def test_generator_output_in_range(shape, blocks):
    gen = build_generator(GeneratorSpec(shape, latent_dim=64, num_conv_blocks=blocks), 0)
    z = gen.sample_latent(10_000 if len(shape) == 1 else 2_000, np.random.default_rng(0)) * 5
    for mode in (True, False):
        gen.train(mode)
        with no_grad():
            x = gen.generate(z).data
        assert x.shape[1:] == shape
        assert np.abs(x).max() <= 1.0


def test_three_block_image_generator_shape():
    gen = build_generator(GeneratorSpec((1, 8, 8), num_conv_blocks=3), 0)
    assert gen.generate(np.zeros((4, 64))).shape == (4, 1, 8, 8)


def test_generate_zero_latent_eval_repeatable():
    gen = build_generator(GeneratorSpec((1, 8, 8)), 3).eval()
    z = np.zeros((1, 64))
    assert gen.generate(z).data.tobytes() == gen.generate(z).data.tobytes()


def test_shape_mismatch_errors():
    model = build_classifier(ClassifierSpec((2,), 4), 0)
    with pytest.raises(ValueError, match="expected inputs"):
        model.classify(np.zeros((3, 5)))
    gen = build_generator(GeneratorSpec((2,)), 0)
    with pytest.raises(ValueError, match="latent"):
        gen.generate(np.zeros((3, 7)))


def test_eval_batch_independence():
    model = build_classifier(ClassifierSpec((1, 8, 8), 10, "small", "conv"), 0)
    rng = np.random.default_rng(1)
    # give the batchnorm layers non-trivial running statistics first
    model.train()
    for _ in range(3):
        model.classify(Tensor(rng.normal(size=(32, 1, 8, 8))))
    model.eval()
    row = rng.uniform(-1, 1, size=(1, 1, 8, 8))
    batch = np.concatenate([row, rng.uniform(-1, 1, size=(255, 1, 8, 8))])
    with no_grad():
        single = model.classify(Tensor(row)).data[0]
        many = model.classify(Tensor(batch)).data[0]
    np.testing.assert_allclose(single, many, atol=1e-9, rtol=0)


def test_eval_forward_does_not_mutate_state():
    model = build_classifier(ClassifierSpec((1, 8, 8), 10, "tiny", "conv"), 0).eval()
    before = model.state()
    with no_grad():
        model.classify(Tensor(np.random.default_rng(0).normal(size=(8, 1, 8, 8))))
    after = model.state()
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)


def test_blobs_victim_reaches_097():
    train, test = ds.generate(ds.TaskSpec("gaussian_blobs", 4, 2, separation=4.0))
    model = build_classifier(ClassifierSpec((2,), 4, "tiny"), 0)
    train_acc = train_classifier(model, train, VictimTrainConfig(epochs=10), np.random.default_rng(0))
    assert train_acc >= 0.97


# -- serialization --------------------------------------------------------------

@pytest.mark.parametrize("kind", ["classifier", "generator"])
def test_model_round_trip(tmp_path, kind):
    if kind == "classifier":
        model = build_classifier(ClassifierSpec((1, 8, 8), 10, "small", "conv"), 5)
    else:
        model = build_generator(GeneratorSpec((1, 8, 8), num_conv_blocks=2, upsample_mode="bilinear"), 5)
    save_model(model, tmp_path / "m.stlm")
    loaded = load_model(tmp_path / "m.stlm")
    assert loaded.spec == model.spec
    a, b = model.state(), loaded.state()
    assert sorted(a) == sorted(b)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_model_file_rejects_corruption_and_versions(tmp_path):
    model = build_classifier(ClassifierSpec((2,), 4), 0)
    path = tmp_path / "m.stlm"
    save_model(model, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(ModelFileError, match="checksum"):
        load_model(path)
    bumped = bytearray(blob)
    bumped[8] = 9
    path.write_bytes(bytes(bumped))
    with pytest.raises(UnsupportedVersionError):
        load_model(path)
    path.write_bytes(b"garbage" * 4)
    with pytest.raises(ModelFileError, match="magic"):
        load_model(path)


def test_load_state_rejects_shape_mismatch():
    model = build_classifier(ClassifierSpec((2,), 4, "tiny"), 0)
    state = model.state()
    name = next(iter(state))
    state[name] = np.zeros((1, 1))
    with pytest.raises(ModelFileError, match="shape"):
        model.load_state(state)
