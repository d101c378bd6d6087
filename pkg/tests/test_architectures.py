from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sargazo.architectures import FAMILIES, ArchSpec, build, parse_scale
from sargazo.errors import CompatibilityError, ConfigError, ShapeError
from sargazo.graph import INPUT, NetworkGraph, Node, canonical_text, fnv1a_64, infer_shapes, param_count
from sargazo.layers import Conv2D, Dense, Flatten, ReLU, ResidualAdd, SoftmaxCEHead


def convs(net):
    return [n for n in net.nodes if n.layer.kind == "conv"]


def census(net):
    return sum(int(np.prod(v.shape)) for n in net.nodes for v in n.layer.params.values())


def test_vgg_channels_full_scale():
    net = build(ArchSpec("vgg", Fraction(1), 224))
    assert [n.layer.params["weight"].shape[0] for n in convs(net)] == \
        [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]


def test_vgg_channels_and_features_at_one_sixteenth():
    net = build(ArchSpec("vgg", Fraction(1, 16), 64))
    assert [n.layer.params["weight"].shape[0] for n in convs(net)] == [4, 4, 8, 8, 16, 16, 16, 32, 32, 32, 32, 32, 32]
    assert net.shapes["block5.pool"] == (32, 2, 2)
    assert net.shapes["flatten"] == (128,)


@pytest.mark.parametrize("scale", ["1/16", "1/8", "1/4"])
def test_vgg_block_multiplicities(scale):
    net = build(ArchSpec("vgg", scale, 64))
    blocks = [n.name.split(".")[0] for n in convs(net)]
    assert [blocks.count(f"block{i}") for i in range(1, 6)] == [2, 2, 3, 3, 3]
    assert all(n.layer.kernel_size == 3 for n in convs(net))
    assert net.count("maxpool") == 5
    assert [n.layer.kind for n in net.head_nodes() if n.layer.kind == "dense"] == ["dense"] * 3


def test_alexnet_census_and_pools():
    net = build(ArchSpec("alexnet"))
    assert net.count("conv") == 5
    assert net.count("dense") == 3
    pools = [n for n in net.nodes if n.layer.kind == "maxpool"]
    assert [n.name for n in pools] == ["pool1", "pool2", "pool5"]
    assert all((p.layer.window, p.layer.stride) == (3, 2) for p in pools)
    order = [n.layer.kind for n in net.head_nodes()]
    assert order[:2] == ["dropout", "dense"]
    assert order.index("dropout", 1) < order.index("dense", 2)


def test_googlenet_modules():
    net = build(ArchSpec("googlenet"))
    concats = [n for n in net.nodes if n.layer.kind == "concat"]
    assert len(concats) == 9
    for node in concats:
        branch_shapes = [net.shapes[s] for s in node.inputs]
        assert len(branch_shapes) == 4
        assert len({s[1:] for s in branch_shapes}) == 1
        assert net.shapes[node.name][0] == sum(s[0] for s in branch_shapes)
    kinds = [n.layer.kind for n in net.nodes]
    assert kinds[-4:] == ["avgpool", "dropout", "dense", "softmax-ce-head"]
    assert net.count("dense") == 1


def test_googlenet_stage_layout():
    net = build(ArchSpec("googlenet"))
    seq = [n.name for n in net.nodes if n.layer.kind == "concat" or n.name in ("pool3", "pool4")]
    tags = ["P" if s.startswith("pool") else "I" for s in seq]
    assert "".join(tags) == "IIPIIIIIPII"


def test_resnet_layout():
    net = build(ArchSpec("resnet"))
    assert net.count("residual-add") == 8
    main = [n for n in convs(net) if not n.name.endswith(".proj")]
    assert len(main) == 17
    assert net.count("batchnorm") == net.count("conv")
    assert net.shapes["stage4.block2.relu"][1:] == (8, 8)
    for n in convs(net):
        nxt = net.nodes[net.nodes.index(n) + 1]
        assert nxt.layer.kind == "batchnorm" and nxt.inputs == [n.name]


def test_resnet_residual_add_equals_skip_when_branch_zeroed():
    net = build(ArchSpec("resnet", "1/16", 32), seed=3)
    for n in net.nodes:
        if n.name.endswith(".conv2.bn"):
            n.layer.params["gamma"][:] = 0
            n.layer.params["beta"][:] = 0
    x = np.random.default_rng(1).standard_normal((2, 3, 32, 32)).astype(np.float32)
    outs = {INPUT: x}
    for n in net.nodes:
        ins = [outs[s] for s in n.inputs]
        out, _ = n.layer.forward(ins if n.layer.multi_input else ins[0])
        outs[n.name] = out
        if n.layer.kind == "residual-add":
            assert np.array_equal(out, outs[n.inputs[1]])


@pytest.mark.parametrize("family", FAMILIES)
def test_param_count_matches_census(family):
    net = build(ArchSpec(family))
    assert param_count(net) == census(net)


def test_param_count_small_nets():
    rng = np.random.default_rng(0)
    dense = NetworkGraph([Node("fc", Dense(10, 5, rng=rng), [INPUT]), Node("softmax", SoftmaxCEHead(5), ["fc"])],
                         (10,), 5, 0)
    assert param_count(dense) == 55
    conv = Conv2D(3, 8, 3, rng=rng)
    assert sum(v.size for v in conv.params.values()) == 224


def test_alexnet_param_census_by_hand():
    spec = ArchSpec("alexnet")
    net = build(spec)
    c = [spec.channels(b) for b in (96, 256, 384, 384, 256)]
    ks = [11, 5, 3, 3, 3]
    total, cin = 0, 3
    for co, k in zip(c, ks):
        total += co * cin * k * k + co
        cin = co
    flat = net.shapes["flatten"][0]
    fc = spec.channels(4096)
    total += flat * fc + fc + fc * fc + fc + fc * 5 + 5
    assert param_count(net) == total


@pytest.mark.parametrize("family", FAMILIES)
def test_builds_are_deterministic(family):
    a, b = build(ArchSpec(family), seed=4), build(ArchSpec(family), seed=4)
    sa, sb = a.state_dict(), b.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    c = build(ArchSpec(family), seed=5).state_dict()
    assert any(not np.array_equal(sa[k], c[k]) for k in sa)


@pytest.mark.parametrize("family", FAMILIES)
def test_forward_shapes_and_head(family):
    net = build(ArchSpec(family, "1/16", 64))
    x = np.zeros((2, 3, 64, 64), np.float32)
    trace = net.forward(x)
    assert trace.logits.shape == (2, 5)
    np.testing.assert_allclose(trace.output.sum(axis=1), 1, atol=1e-6)
    assert net.nodes[-1].layer.kind == "softmax-ce-head"


def test_too_small_input_is_config_error():
    with pytest.raises(ConfigError, match="block5.pool"):
        build(ArchSpec("vgg", input_size=16))


def test_infer_shapes_names_the_bad_node():
    rng = np.random.default_rng(0)
    nodes = [Node("a", Conv2D(2, 3, 3, padding=1, rng=rng), [INPUT]),
             Node("b", Conv2D(2, 4, 3, padding=1, rng=rng), [INPUT]),
             Node("add", ResidualAdd(), ["a", "b"]),
             Node("flat", Flatten(), ["add"]),
             Node("fc", Dense(48, 2, rng=rng), ["flat"]),
             Node("softmax", SoftmaxCEHead(2), ["fc"])]
    with pytest.raises(ShapeError, match="add"):
        NetworkGraph(nodes, (2, 4, 4), 2, 4)


def test_identity_conv_net_shapes():
    layer = Conv2D(3, 3, 1, rng=np.random.default_rng(0))
    nodes = [Node("c", layer, [INPUT]), Node("r", ReLU(), ["c"]), Node("f", Flatten(), ["r"]),
             Node("fc", Dense(48, 2, rng=np.random.default_rng(0)), ["f"]), Node("softmax", SoftmaxCEHead(2), ["fc"])]
    net = NetworkGraph(nodes, (3, 4, 4), 2, 3)
    assert infer_shapes(net, (3, 4, 4))["c"] == (3, 4, 4)


def test_fingerprint_is_fnv1a_of_canonical_text():
    net = build(ArchSpec("vgg"))
    assert net.fingerprint() == fnv1a_64(canonical_text(net).encode("utf-8"))
    assert fnv1a_64(b"") == 0xcbf29ce484222325
    assert fnv1a_64(b"a") == 0xaf63dc4c8601ec8c
    assert build(ArchSpec("vgg"), seed=9).fingerprint() == net.fingerprint()
    assert build(ArchSpec("vgg", num_classes=8)).fingerprint() != net.fingerprint()
    assert build(ArchSpec("vgg", "1/4")).fingerprint() != net.fingerprint()


def test_load_state_dict_rejects_mismatch():
    a = build(ArchSpec("vgg"))
    b = build(ArchSpec("vgg", "1/4"))
    with pytest.raises(CompatibilityError):
        a.load_state_dict(b.state_dict())
    state = a.state_dict()
    state.pop("classifier.bias")
    with pytest.raises(CompatibilityError):
        a.load_state_dict(state)


@settings(max_examples=30, deadline=None)
@given(num=st.integers(1, 64), den=st.integers(1, 64))
def test_channel_rounding(num, den):
    spec = ArchSpec("vgg", Fraction(num, den))
    for base in (64, 128, 4096):
        exact = Fraction(base * num, den)
        assert spec.channels(base) >= 1
        assert abs(spec.channels(base) - exact) <= Fraction(1, 2) or spec.channels(base) == 1


@pytest.mark.parametrize("text", ["0", "-1/8", "abc", "1/0"])
def test_bad_scale(text):
    with pytest.raises(ConfigError):
        parse_scale(text)
