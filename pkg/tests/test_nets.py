import numpy as np
import pytest

from chaoskpa import ParameterError
from chaoskpa.nets import build, build_msednet, build_unet
from chaoskpa.tensor_engine import LayerKind, grad_check_model


def conv(cin, cout, k):
    return cout * cin * k * k + cout


def bn(c):
    return 2 * c


def unet_count(c, w):
    total, cin = 0, c
    for d in range(3):
        co = w * 2 ** d
        total += conv(cin, co, 3) + conv(co, co, 3) + 2 * bn(co)
        cin = co
    total += conv(cin, 8 * w, 3) + conv(8 * w, 8 * w, 3) + 2 * bn(8 * w)
    cin = 8 * w
    for d in reversed(range(3)):
        co = w * 2 ** d
        total += conv(cin, co, 2) + conv(2 * co, co, 3) + conv(co, co, 3) + 2 * bn(co)
        cin = co
    return total + conv(cin, c, 1)


def msed_count(c, w):
    enc, dec = [w, 2 * w, 4 * w, 8 * w, 8 * w], [8 * w, 4 * w, 2 * w, w, w]
    total, cin = 0, c
    for co in enc:
        total += conv(cin, co, 3) + bn(co)
        cin = co
    total += sum(conv(co, w, 1) for co in enc[1:])
    # lateral resolutions 8,4,2,1; decoder resolutions 2,4,8,16,32
    for k, co in enumerate(dec):
        res = 2 ** (k + 1)
        n_lat = sum(1 for r in (8, 4, 2, 1) if r <= res)
        total += conv(cin, co, 2) + conv(co + w * n_lat, co, 3) + bn(co)
        cin = co
    return total + conv(cin, c, 1)


@pytest.mark.parametrize("c", [1, 3])
@pytest.mark.parametrize("w", [8, 32])
def test_param_counts(c, w):
    assert build_unet(c, w).init_params(0).param_count == unet_count(c, w)
    assert build_msednet(c, w).init_params(0).param_count == msed_count(c, w)


def test_frozen_counts():
    assert unet_count(1, 32) == 1_927_841
    assert msed_count(1, 32) == 2_640_481


@pytest.mark.parametrize("net", ["unet", "msednet"])
@pytest.mark.parametrize("c", [1, 3])
def test_output_shape(net, c):
    g = build(net, c, 8).init_params(0).eval()
    assert g.infer_shapes((2, c, 32, 32))[g.output] == (2, c, 32, 32)
    assert g.forward(np.zeros((2, c, 32, 32), np.float32)).shape == (2, c, 32, 32)


def test_unet_skip_concat_widths():
    g = build_unet(1, 8)
    shapes = g.infer_shapes((1, 1, 32, 32))
    for node in g.nodes:
        if node.spec.kind is LayerKind.CONCAT:
            up, skip = node.inputs
            assert shapes[up][2:] == shapes[skip][2:]
            assert shapes[node.name][1] == shapes[up][1] + shapes[skip][1]
    assert shapes["pool2"][2:] == (4, 4)


def test_msednet_bottom_is_1x1():
    g = build_msednet(1, 8)
    shapes = g.infer_shapes((1, 1, 32, 32))
    assert shapes["enc5.pool"] == (1, 64, 1, 1)
    assert shapes["lat5"] == (1, 8, 1, 1)


def test_dropout_placement():
    for g in (build_unet(1, 8), build_msednet(1, 8)):
        drops = [n for n in g.nodes if n.spec.kind is LayerKind.DROPOUT]
        assert len(drops) == 2 and all(n.spec.dropout == 0.5 for n in drops)


def test_eval_deterministic_train_stochastic():
    g = build_unet(1, 8).init_params(0)
    x = np.random.default_rng(0).random((2, 1, 32, 32)).astype(np.float32)
    g.eval()
    assert np.array_equal(g.forward(x).data, g.forward(x).data)
    g.train()
    a = g.forward(x, rng=np.random.default_rng(1)).data
    b = g.forward(x, rng=np.random.default_rng(2)).data
    assert not np.array_equal(a, b)


def test_init_seeded():
    a, b = build_msednet(1, 8).init_params(3), build_msednet(1, 8).init_params(3)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)


@pytest.mark.parametrize("net", ["unet", "msednet"])
def test_small_gradcheck(net):
    g = build(net, 1, 8).init_params(0)
    x = np.random.default_rng(0).random((2, 1, 32, 32))
    rep = grad_check_model(g, x, samples=2, input_samples=8)
    assert rep.passed, rep.summary()


@pytest.mark.parametrize("c,w", [(2, 32), (1, 4), (1, 8.0)])
def test_bad_params(c, w):
    with pytest.raises(ParameterError):
        build_unet(c, w)


def test_unknown_network():
    with pytest.raises(ParameterError):
        build("resnet", 1, 8)


@pytest.mark.parametrize("op", ["conv2d", "batchnorm", "deconv2x2", "avg_pool2x2"])
def test_model_gradcheck_catches_corruption(op):
    from chaoskpa.tensor_engine import corrupted_backward
    g = build_msednet(1, 8).init_params(0)
    x = np.random.default_rng(0).random((2, 1, 32, 32))
    with corrupted_backward(op, 1.5):
        rep = grad_check_model(g, x, samples=2, input_samples=8)
    assert not rep.passed
