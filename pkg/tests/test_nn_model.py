import numpy as np
import pytest
from scipy import signal

from corrnet import nn
from corrnet.errors import NoGradientPath, ShapeMismatch, VersionMismatch
from corrnet.model import (
    EncoderConfig,
    GradientTarget,
    build_model,
    load_checkpoint,
    save_checkpoint,
)


# ---- layer-level oracles --------------------------------------------------


def conv_oracle(x, w, b, stride):
    """Per-channel scipy correlation with 'same' zero padding, then stride slicing."""
    n, cin, h, wid = x.shape
    cout = w.shape[0]
    full = np.zeros((n, cout, h, wid))
    for i in range(n):
        for o in range(cout):
            acc = np.zeros((h, wid))
            for c in range(cin):
                acc += signal.correlate2d(x[i, c], w[o, c], mode="same", boundary="fill")
            full[i, o] = acc + b[o]
    return full[:, :, ::stride, ::stride]


def test_conv2d_forward_matches_scipy():
    rng = np.random.default_rng(0)
    for k, stride in ((3, 1), (3, 2), (7, 2), (1, 1)):
        conv = nn.Conv2d("c", 2, 3, k, stride=stride, rng=np.random.default_rng(1))
        x = rng.standard_normal((2, 2, 9, 11))
        y, _ = conv.forward(x)
        want = conv_oracle(x, conv.w.value.astype(np.float64), conv.b.value.astype(np.float64), stride)
        assert y.shape == want.shape
        assert np.allclose(y, want, atol=1e-10)
        assert conv.out_hw(9, 11) == y.shape[2:]


def test_im2col_col2im_are_adjoint():
    rng = np.random.default_rng(2)
    for k, stride, pad in ((3, 1, 1), (3, 2, 1), (7, 2, 3)):
        x = rng.standard_normal((2, 3, 10, 12))
        cols = nn._im2col(x, k, stride, pad)
        c = rng.standard_normal(cols.shape)
        lhs = float((cols * c).sum())
        rhs = float((x * nn._col2im(c, x.shape, k, stride, pad)).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12)


def fd_scalar(fn, arr, idx, eps):
    """Central difference of fn() under arr[idx] +- eps, measuring the real step."""
    orig = arr[idx]
    arr[idx] = orig + eps
    hi_step = float(arr[idx]) - float(orig)
    hi = fn()
    arr[idx] = orig - eps
    lo_step = float(orig) - float(arr[idx])
    lo = fn()
    arr[idx] = orig
    return (hi - lo) / (hi_step + lo_step)


def test_conv2d_backward_matches_fd():
    rng = np.random.default_rng(3)
    conv = nn.Conv2d("c", 2, 3, 3, stride=2, rng=np.random.default_rng(4))
    x = rng.standard_normal((1, 2, 6, 6))
    seed = rng.standard_normal(conv.forward(x)[0].shape)

    def loss():
        return float((conv.forward(x)[0] * seed).sum())

    y, cache = conv.forward(x)
    dx, grads = conv.backward(cache, seed, need_param_grads=True)
    for _ in range(10):
        idx = tuple(rng.integers(0, s) for s in x.shape)
        assert fd_scalar(loss, x, idx, 1e-6) == pytest.approx(dx[idx], rel=1e-5, abs=1e-9)
    for arr, key in ((conv.w.value, "c.w"), (conv.b.value, "c.b")):
        for _ in range(6):
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            got = grads[key][idx]
            assert fd_scalar(loss, arr, idx, 1e-3) == pytest.approx(got, rel=1e-3, abs=1e-5)


def test_relu_gating_truth_table():
    relu = nn.ReLU()
    x = np.array([[-1.0, 2.0], [3.0, -4.0]])
    y, mask = relu.forward(x)
    assert np.array_equal(y, [[0.0, 2.0], [3.0, 0.0]])
    dy = np.array([[5.0, -6.0], [7.0, 8.0]])
    std, _ = relu.backward(mask, dy)
    assert np.array_equal(std, [[0.0, -6.0], [7.0, 0.0]])
    # guided additionally zeroes negative incoming gradient
    guided, _ = relu.backward(mask, dy, guided=True)
    assert np.array_equal(guided, [[0.0, 0.0], [7.0, 0.0]])


def test_global_avg_pool():
    pool = nn.GlobalAvgPool()
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 4, 5))
    y, cache = pool.forward(x)
    assert np.allclose(y, x.mean(axis=(2, 3)))
    dy = rng.standard_normal((2, 3))
    dx, _ = pool.backward(cache, dy)
    assert np.allclose(dx, np.repeat(dy, 20).reshape(2, 3, 4, 5) / 20.0)


def test_dense_backward_matches_fd():
    rng = np.random.default_rng(6)
    dense = nn.Dense("d", 5, 4, rng=np.random.default_rng(7))
    x = rng.standard_normal((3, 5))
    seed = rng.standard_normal((3, 4))

    def loss():
        return float((dense.forward(x)[0] * seed).sum())

    _, cache = dense.forward(x)
    dx, grads = dense.backward(cache, seed, need_param_grads=True)
    for _ in range(8):
        idx = tuple(rng.integers(0, s) for s in x.shape)
        assert fd_scalar(loss, x, idx, 1e-6) == pytest.approx(dx[idx], rel=1e-6, abs=1e-10)
    idx = (2, 3)
    assert fd_scalar(loss, dense.w.value, idx, 1e-3) == pytest.approx(
        grads["d.w"][idx], rel=1e-3, abs=1e-5
    )


def test_l2_normalize_forward_and_jacobian():
    rng = np.random.default_rng(8)
    layer = nn.L2Normalize()
    x = rng.standard_normal((4, 6))
    y, cache = layer.forward(x)
    assert np.allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)
    seed = rng.standard_normal((4, 6))

    def loss():
        return float((layer.forward(x)[0] * seed).sum())

    dx, _ = layer.backward(cache, seed)
    for _ in range(10):
        idx = tuple(rng.integers(0, s) for s in x.shape)
        assert fd_scalar(loss, x, idx, 1e-6) == pytest.approx(dx[idx], rel=1e-5, abs=1e-9)


def test_residual_block_composes_its_sublayers():
    rng = np.random.default_rng(9)
    block = nn.Residual("r", 4, 2, 8, stride=2, rng=np.random.default_rng(10))
    x = rng.standard_normal((1, 4, 8, 8))
    out, _ = block.forward(x)
    a1 = np.maximum(block.conv1.forward(x)[0], 0.0)
    a2 = np.maximum(block.conv2.forward(a1)[0], 0.0)
    y3 = block.conv3.forward(a2)[0]
    skip = block.proj.forward(x)[0]
    assert np.allclose(out, np.maximum(y3 + skip, 0.0), atol=1e-12)
    assert out.shape == (1, 8, 4, 4)


# ---- model-level invariants -----------------------------------------------


def rand_image(rng, h=16, w=16):
    return rng.uniform(0.0, 1.0, size=(h, w, 3))


def test_forward_trace_invariants(tiny_model):
    rng = np.random.default_rng(11)
    trace = tiny_model.forward(rand_image(rng))
    assert trace.feature_maps.shape == (8, 4, 4)
    assert trace.latent.shape == (8,)
    assert trace.projection.shape == (8,)
    assert np.linalg.norm(trace.projection) == pytest.approx(1.0, abs=1e-12)
    # pooled latent is exactly the spatial mean of the last-stage maps
    assert np.allclose(trace.latent, trace.feature_maps.mean(axis=(1, 2)), atol=1e-12)


def test_forward_batch_agrees_with_single(tiny_model):
    rng = np.random.default_rng(12)
    images = np.stack([rand_image(rng) for _ in range(3)])
    z, _ = tiny_model.forward_batch(images)
    for i in range(3):
        trace = tiny_model.forward(images[i])
        assert np.allclose(z[i], trace.projection, atol=1e-9)


def test_shape_validation(tiny_model):
    rng = np.random.default_rng(13)
    with pytest.raises(ShapeMismatch):
        tiny_model.forward(rng.uniform(size=(3, 3, 3)))  # below min_input=4
    with pytest.raises(ShapeMismatch):
        tiny_model.forward(rng.uniform(size=(16, 16, 1)))
    with pytest.raises(ShapeMismatch):
        tiny_model.forward_batch(rng.uniform(size=(16, 16, 3)))  # missing batch dim


def test_min_input_scales_with_depth():
    assert build_model(EncoderConfig.small(channels_per_stage=(4, 8)), 0).min_input == 4
    assert build_model(EncoderConfig.small(), 0).min_input == 16


def test_target_value_matches_trace(tiny_model):
    rng = np.random.default_rng(14)
    trace = tiny_model.forward(rand_image(rng))
    for i in range(8):
        assert tiny_model.target_value(trace, GradientTarget("h", i)) == pytest.approx(
            trace.latent[i], abs=1e-12
        )
        assert tiny_model.target_value(trace, GradientTarget("z", i)) == pytest.approx(
            trace.projection[i], abs=1e-12
        )
    # channel-modulated latent is the mean of the scaled maps
    m = rng.uniform(0.0, 1.0, size=8)
    want = (trace.feature_maps * m[:, None, None]).mean(axis=(1, 2))[2]
    got = tiny_model.target_value(trace, GradientTarget("h", 2, modulation=m))
    assert got == pytest.approx(want, abs=1e-12)


def test_input_gradient_matches_fd(tiny_model):
    rng = np.random.default_rng(15)
    image = rand_image(rng, 12, 12)
    m = rng.uniform(0.2, 1.0, size=8)
    targets = [
        GradientTarget("h", 3),
        GradientTarget("z", 1),
        GradientTarget("h", 0, modulation=m),
        GradientTarget("z", 4, modulation=m),
    ]
    for target in targets:
        trace = tiny_model.forward(image)
        grad = tiny_model.input_gradient(trace, target, guided=False)
        fd = np.zeros_like(grad)
        for idx in [tuple(rng.integers(0, s) for s in image.shape) for _ in range(25)]:
            def value():
                return tiny_model.target_value(tiny_model.forward(image), target)

            fd[idx] = fd_scalar(value, image, idx, 1e-5)
            denom = max(abs(grad[idx]), 1e-7)
            assert abs(fd[idx] - grad[idx]) / denom < 1e-3


def test_guided_equals_standard_on_all_positive_net(tiny_config):
    model = build_model(tiny_config, seed=0)
    rng = np.random.default_rng(16)
    for p in model.params().values():
        p.value = np.abs(p.value) + np.float32(0.05)
    image = rng.uniform(0.1, 1.0, size=(12, 12, 3))
    trace = model.forward(image)
    target = GradientTarget("h", 5)
    guided = model.input_gradient(trace, target, guided=True)
    standard = model.input_gradient(trace, target, guided=False)
    assert np.array_equal(guided, standard)
    assert np.all(standard > 0)


def hand_guided_two_layer(x, conv1, conv2, seed_dy):
    """Loop-free double-gating oracle built on scipy convolutions."""
    y1 = conv_oracle(x, conv1.w.value.astype(np.float64), conv1.b.value.astype(np.float64), 1)
    a1 = np.maximum(y1, 0.0)
    y2 = conv_oracle(a1, conv2.w.value.astype(np.float64), conv2.b.value.astype(np.float64), 1)

    def conv_input_grad(dy, w):
        n, cout, h, wid = dy.shape
        cin = w.shape[1]
        dx = np.zeros((n, cin, h, wid))
        for i in range(n):
            for c in range(cin):
                acc = np.zeros((h, wid))
                for o in range(cout):
                    acc += signal.convolve2d(dy[i, o], w[o, c], mode="same", boundary="fill")
                dx[i, c] = acc
        return dx

    g = seed_dy * (y2 > 0) * (seed_dy > 0)
    g = conv_input_grad(g, conv2.w.value.astype(np.float64))
    g = g * (y1 > 0) * (g > 0)
    return conv_input_grad(g, conv1.w.value.astype(np.float64))


def test_guided_backprop_matches_hand_rolled_double_gating():
    rng = np.random.default_rng(17)
    conv1 = nn.Conv2d("g1", 1, 2, 3, stride=1, rng=np.random.default_rng(18))
    conv2 = nn.Conv2d("g2", 2, 1, 3, stride=1, rng=np.random.default_rng(19))
    net = nn.Sequential([conv1, nn.ReLU(), conv2, nn.ReLU()])
    x = rng.standard_normal((1, 1, 8, 8))
    y, caches = net.forward(x)
    seed_dy = rng.standard_normal(y.shape)
    got, _ = net.backward(caches, seed_dy, guided=True)
    want = hand_guided_two_layer(x, conv1, conv2, seed_dy)
    assert np.allclose(got, want, atol=1e-10)


def test_no_gradient_path_on_zero_modulation(tiny_model):
    rng = np.random.default_rng(20)
    trace = tiny_model.forward(rand_image(rng))
    with pytest.raises(NoGradientPath):
        tiny_model.input_gradient(trace, GradientTarget("h", 0, modulation=np.zeros(8)))


def test_modulation_and_source_validation(tiny_model):
    rng = np.random.default_rng(21)
    trace = tiny_model.forward(rand_image(rng))
    with pytest.raises(ShapeMismatch):
        tiny_model.target_value(trace, GradientTarget("h", 0, modulation=np.ones(5)))
    with pytest.raises(ValueError):
        tiny_model.input_gradient(trace, GradientTarget("q", 0))


def test_backward_batch_param_grads_match_fd(tiny_model):
    model = tiny_model.copy()
    rng = np.random.default_rng(22)
    images = np.stack([rand_image(rng, 8, 8) for _ in range(2)])
    seed = rng.standard_normal((2, 8))

    def loss():
        z, _ = model.forward_batch(images)
        return float((z * seed).sum())

    z, caches = model.forward_batch(images)
    grads = model.backward_batch(caches, seed)
    assert set(grads) == set(model.params())
    checked = 0
    for name in sorted(grads):
        arr = model.params()[name].value
        idx = tuple(rng.integers(0, s) for s in arr.shape)
        got = grads[name][idx]
        if abs(got) < 1e-4:  # skip near-zero entries, FD is all rounding there
            continue
        assert fd_scalar(loss, arr, idx, 1e-3) == pytest.approx(got, rel=2e-2), name
        checked += 1
    assert checked >= 5


# ---- config and checkpoints -----------------------------------------------


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(arch="huge")
    with pytest.raises(ValueError):
        EncoderConfig(pooling="max")
    with pytest.raises(ValueError):
        EncoderConfig(channels_per_stage=())
    with pytest.raises(ValueError):
        EncoderConfig(description_size=1)
    with pytest.raises(ValueError):
        EncoderConfig.large(description_size=64)  # large preset restricts sizes
    cfg = EncoderConfig.large()
    assert cfg.latent_size == 2048 and cfg.description_size == 512
    assert EncoderConfig.from_dict(cfg.to_dict()) == cfg


def test_build_model_is_seed_deterministic(tiny_config):
    a = build_model(tiny_config, seed=7)
    b = build_model(tiny_config, seed=7)
    c = build_model(tiny_config, seed=8)
    for name, p in a.params().items():
        assert np.array_equal(p.value, b.params()[name].value)
    assert any(
        not np.array_equal(p.value, c.params()[name].value)
        for name, p in a.params().items()
    )


def test_copy_is_independent(tiny_model):
    clone = tiny_model.copy()
    name = sorted(clone.params())[0]
    clone.params()[name].value = clone.params()[name].value + np.float32(1.0)
    assert not np.array_equal(clone.params()[name].value, tiny_model.params()[name].value)


def test_checkpoint_roundtrip_is_bit_exact(tiny_config, tmp_path):
    model = build_model(tiny_config, seed=3)
    rng = np.random.default_rng(23)
    for p in model.params().values():
        p.value = rng.standard_normal(p.value.shape).astype(np.float32)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    for name, p in model.params().items():
        assert np.array_equal(loaded.params()[name].value, p.value), name
    # saving the loaded model reproduces the file byte for byte
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_error_paths(tiny_config, tmp_path):
    model = build_model(tiny_config, seed=0)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()

    bad_magic = tmp_path / "bad_magic.ckpt"
    bad_magic.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(OSError):
        load_checkpoint(bad_magic)

    truncated = tmp_path / "truncated.ckpt"
    truncated.write_bytes(raw[:-10])
    with pytest.raises(OSError):
        load_checkpoint(truncated)

    short_header = tmp_path / "short_header.ckpt"
    short_header.write_bytes(raw[:20])
    with pytest.raises(OSError):
        load_checkpoint(short_header)

    wrong_schema = tmp_path / "wrong_schema.ckpt"
    wrong_schema.write_bytes(raw.replace(b'"schema_version": 1', b'"schema_version": 9'))
    with pytest.raises(VersionMismatch):
        load_checkpoint(wrong_schema)

    wrong_names = tmp_path / "wrong_names.ckpt"
    wrong_names.write_bytes(raw.replace(b'"name": "enc.s0.b"', b'"name": "enc.sX.b"'))
    with pytest.raises(OSError):
        load_checkpoint(wrong_names)
