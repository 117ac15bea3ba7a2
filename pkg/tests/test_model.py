import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixres_lab.model import (
    SCOPES,
    ModelConfig,
    ResolutionError,
    build_model,
    forward,
    images_to_batch,
    num_params,
    split_scope,
)
from fixres_lab.tensor_core import ContractError, Parameter, Tensor, smoothed_cross_entropy
from gradcheck import REL_TOL, check_tensor_grads


def batch(n, side, seed=0, channels=1, dtype=np.float32):
    return Tensor(np.random.default_rng(seed).standard_normal((n, channels, side, side)).astype(dtype))


def test_same_seed_gives_identical_parameters():
    a, b = build_model(ModelConfig(), seed=5), build_model(ModelConfig(), seed=5)
    assert all(p.data.tobytes() == q.data.tobytes() for p, q in zip(a.parameters(), b.parameters()))
    c = build_model(ModelConfig(), seed=6)
    assert any(p.data.tobytes() != q.data.tobytes() for p, q in zip(a.parameters(), c.parameters()))


def test_width_two_doubles_every_conv_channel_count():
    one, two = build_model(ModelConfig(width_mult=1)), build_model(ModelConfig(width_mult=2))
    for b1, b2 in zip(one.blocks, two.blocks):
        assert b2.weight.shape[0] == 2 * b1.weight.shape[0]


def test_num_params_monotone_in_width_and_depth():
    counts = [num_params(build_model(ModelConfig(width_mult=w))) for w in (1.0, 1.4, 2.0)]
    assert counts[0] < counts[1] < counts[2]
    assert num_params(build_model(ModelConfig(depth_mult=2))) > num_params(build_model(ModelConfig()))


def test_init_scheme():
    m = build_model(ModelConfig(width_mult=4), seed=1)
    for block in m.blocks:
        o, _, k, _ = block.weight.shape
        assert abs(block.weight.data.std() - np.sqrt(2 / (o * k * k))) < 0.2 * np.sqrt(2 / (o * k * k))
        np.testing.assert_array_equal(block.bn.gamma.data, 1)
        np.testing.assert_array_equal(block.bn.beta.data, 0)
    np.testing.assert_array_equal(m.classifier_bias.data, 0)


def test_num_params_of_linear_layer_and_reflection_walk():
    class Lin:
        def __init__(self):
            self.w, self.b = Parameter("w", np.zeros((3, 2))), Parameter("b", np.zeros(3))

        def parameters(self):
            return [self.w, self.b]

    assert num_params(Lin()) == 9
    m = build_model(ModelConfig())
    walk = 0
    for block in m.blocks:
        for attr in vars(block).values():
            if isinstance(attr, Parameter):
                walk += attr.data.size
        walk += block.bn.gamma.data.size + block.bn.beta.data.size
    walk += m.classifier_weight.data.size + m.classifier_bias.data.size
    assert num_params(m) == walk


def test_parameter_names_unique():
    names = [p.name for p in build_model(ModelConfig(depth_mult=2)).parameters()]
    assert len(names) == len(set(names))


def test_logits_shape_independent_of_side():
    m = build_model(ModelConfig())
    a, b = forward(m, batch(2, 32)), forward(m, batch(2, 64))
    assert a.shape == b.shape == (2, 8)
    assert not np.array_equal(a.data, b.data)


@given(st.integers(16, 128))
@settings(max_examples=12, deadline=None)
def test_every_supported_side_works(side):
    m = build_model(ModelConfig(base_channels=4))
    out = m.forward(batch(1, side), "eval")
    assert out.shape == (1, 8) and np.all(np.isfinite(out.data))


def test_eval_forward_is_pure():
    m = build_model(ModelConfig())
    x = batch(3, 32)
    assert m.forward(x, "eval").data.tobytes() == m.forward(x, "eval").data.tobytes()


def test_identical_images_give_identical_rows():
    m = build_model(ModelConfig())
    one = batch(1, 32).data
    out = m.forward(Tensor(np.concatenate([one, one])), "eval").data
    assert out[0].tobytes() == out[1].tobytes()


@pytest.mark.parametrize("side", [8, 15, 129])
def test_unsupported_side_raises_resolution_error(side):
    with pytest.raises(ResolutionError):
        build_model(ModelConfig()).forward(batch(1, side), "eval")


def test_non_square_input_rejected():
    with pytest.raises(ContractError):
        build_model(ModelConfig()).forward(Tensor(np.zeros((1, 1, 32, 40), np.float32)), "eval")


@pytest.mark.parametrize("kw", [dict(width_mult=0), dict(num_stages=1), dict(num_classes=1),
                                dict(train_res=8), dict(base_channels=0)])
def test_config_validation(kw):
    with pytest.raises((ContractError, ValueError)):
        build_model(ModelConfig(**kw))


def test_scope_all_has_nothing_frozen():
    frozen, trainable = split_scope(build_model(ModelConfig()), "all")
    assert frozen == [] and len(trainable) == len(build_model(ModelConfig()).parameters())


def test_scope_classifier_trains_only_linear():
    m = build_model(ModelConfig())
    _, trainable = split_scope(m, "classifier")
    assert [p.name for p in trainable] == ["classifier.weight", "classifier.bias"]


@pytest.mark.parametrize("scope", SCOPES)
def test_scopes_partition_parameters(scope):
    m = build_model(ModelConfig(depth_mult=2))
    frozen, trainable = split_scope(m, scope)
    ids_f, ids_t = {id(p) for p in frozen}, {id(p) for p in trainable}
    assert not ids_f & ids_t and ids_f | ids_t == {id(p) for p in m.parameters()}


def test_top_block_scope_covers_last_stage():
    m = build_model(ModelConfig(depth_mult=2))
    _, trainable = split_scope(m, "classifier+top_block")
    assert {p.name.split(".")[0] for p in trainable} == {"stage2", "classifier"}


def test_unknown_scope():
    with pytest.raises(ContractError):
        split_scope(build_model(ModelConfig()), "backbone")


def test_state_dict_round_trip_includes_running_stats():
    src = build_model(ModelConfig(), seed=1)
    src.blocks[0].bn.running_mean[:] = 3.0
    dst = build_model(ModelConfig(), seed=2)
    dst.load_state_dict(src.state_dict())
    x = batch(2, 32)
    assert src.forward(x).data.tobytes() == dst.forward(x).data.tobytes()
    assert "stem.bn.running_var" in src.state_dict()


def test_load_state_dict_rejects_mismatch():
    state = build_model(ModelConfig()).state_dict()
    with pytest.raises(ContractError):
        build_model(ModelConfig(width_mult=2)).load_state_dict(state)
    del state["classifier.bias"]
    with pytest.raises(ContractError, match="classifier.bias"):
        build_model(ModelConfig()).load_state_dict(state)


def test_forward_partial_matches_full_forward_in_eval():
    m = build_model(ModelConfig(), seed=3)
    x = batch(4, 40)
    full = m.forward(x, "eval").data
    for k in range(len(m.blocks) + 1):
        np.testing.assert_allclose(m.forward_partial(x, k, "eval").data, full, rtol=1e-6, atol=1e-6)


def test_forward_partial_classifier_scope_gives_no_backbone_grads():
    m = build_model(ModelConfig(), seed=4)
    out = m.forward_partial(batch(4, 32), len(m.blocks), "eval")
    smoothed_cross_entropy(out, [0, 1, 2, 3], 0.1).backward()
    assert all(p.grad is None for b in m.blocks for p in b.parameters())
    assert m.classifier_weight.grad is not None


def test_images_to_batch_layout_and_normalisation():
    imgs = np.zeros((2, 5, 6, 3), dtype=np.uint8)
    imgs[1, 2, 3, 1] = 255
    x = images_to_batch(imgs)
    assert x.shape == (2, 3, 5, 6) and x.dtype == np.float32
    assert x.data[0, 0, 0, 0] == pytest.approx(-2.0)
    assert x.data[1, 1, 2, 3] == pytest.approx(2.0)


@pytest.mark.parametrize("seed", range(3))
def test_full_network_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(base_channels=2, num_stages=2, num_classes=3, train_res=8, depth_mult=1.5)
    m = build_model(cfg, seed=seed, dtype=np.float64)
    for _, bn in m.bn_layers():
        bn.gamma.data[:] = rng.uniform(0.5, 1.5, bn.channels)
        bn.beta.data[:] = rng.standard_normal(bn.channels) * 0.3
    x = Tensor(rng.standard_normal((3, 1, 8, 8)))
    labels = rng.integers(0, 3, 3)
    loss = lambda: smoothed_cross_entropy(m.forward(x, "train"), labels, 0.1)
    assert check_tensor_grads(loss, m.parameters(), rng, max_coords=12) < REL_TOL
