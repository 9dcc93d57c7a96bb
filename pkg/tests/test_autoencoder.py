import numpy as np
import pytest

from softshape.autoencoder import (AutoencoderModel, BatchNorm, Dense, Pointwise, TrainConfig, TrainingError,
                                   activate, build_model, decoder_jacobian, pointnet_features, train)
from softshape.descriptors import chamfer_fixed, chamfer_with_grad
from softshape.shapes import generate_bar_dataset, generate_sheet_dataset, normalize


def fd_jacobian(model, z, h=1e-5):
    cols = []
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = h
        cols.append((model.decode(z + e).ravel() - model.decode(z - e).ravel()) / (2 * h))
    return np.stack(cols, axis=1)


def rel_err(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


def test_marker_parameter_count():
    # 24*8+8, 2*8 BN, 8*4+4, 2*4, 4*8+8, 2*8, 8*24+24
    assert build_model("marker").n_parameters() == 200 + 16 + 36 + 8 + 40 + 16 + 216 == 532


def test_cloud_preset_shapes():
    m = build_model("cloud", seed=1)
    assert m.latent_dim == 64
    cloud = np.random.default_rng(0).uniform(0.1, 0.9, size=(512, 3))
    z = m.encode(cloud)
    assert z.shape == (64,) and m.decode(z).shape == (512, 3)
    with pytest.raises(ValueError):
        pointnet_features(m, cloud[:100])


def test_identity_architecture():
    arch = {"encoder": [{"kind": "affine", "in": 5, "out": 5}, {"kind": "activation", "name": "identity"}],
            "decoder": [{"kind": "affine", "in": 5, "out": 5}, {"kind": "activation", "name": "identity"}],
            "input_shape": [5]}
    m = build_model(arch)
    m.set_vector(np.concatenate([np.eye(5).ravel(), np.zeros(5)] * 2))
    z = np.random.default_rng(0).normal(size=5)
    assert np.array_equal(m.decode(z), z)
    assert np.array_equal(m.decoder_jacobian(z), np.eye(5))


def test_zero_sigmoid_decoder_and_scalar_derivative():
    arch = {"encoder": [{"kind": "affine", "in": 6, "out": 2}],
            "decoder": [{"kind": "affine", "in": 2, "out": 6}, {"kind": "activation", "name": "sigmoid"}],
            "input_shape": [6]}
    m = build_model(arch)
    m.set_vector(np.zeros(m.n_parameters()))
    assert np.array_equal(m.decode(np.array([0.3, -2.0])), np.full(6, 0.5))
    scalar = {"encoder": [{"kind": "affine", "in": 1, "out": 1}],
              "decoder": [{"kind": "affine", "in": 1, "out": 1}, {"kind": "activation", "name": "sigmoid"}],
              "input_shape": [1]}
    s = build_model(scalar)
    s.set_vector(np.array([1.0, 0.0, 1.0, 0.0]))
    assert decoder_jacobian(s, np.zeros(1))[0, 0] == 0.25


def test_linear_decoder_jacobian_is_weight():
    arch = {"encoder": [{"kind": "affine", "in": 4, "out": 3}],
            "decoder": [{"kind": "affine", "in": 3, "out": 4}], "input_shape": [4]}
    m = build_model(arch, seed=3)
    W = m.decoder[0].W
    for z in np.random.default_rng(1).normal(size=(3, 3)):
        assert np.array_equal(m.decoder_jacobian(z), W)


def test_incompatible_layers():
    arch = {"encoder": [{"kind": "affine", "in": 4, "out": 3}],
            "decoder": [{"kind": "affine", "in": 2, "out": 4}], "input_shape": [4]}
    with pytest.raises(ValueError):
        build_model(arch)
    with pytest.raises(ValueError):
        build_model("bogus")


@pytest.mark.parametrize("arch", ["marker", "marker-smooth", "cloud"])
def test_jacobian_matches_finite_differences(arch):
    m = build_model(arch, seed=2)
    rng = np.random.default_rng(7)
    for _ in range(10):
        z = rng.normal(size=m.latent_dim)
        assert rel_err(m.decoder_jacobian(z), fd_jacobian(m, z)) < 1e-4


def test_trained_jacobian_matches_finite_differences(trained_marker, trained_smooth):
    rng = np.random.default_rng(8)
    for m in (trained_marker, trained_smooth):
        for _ in range(10):
            z = rng.normal(size=4) * 0.5 + 1.0
            assert rel_err(m.decoder_jacobian(z), fd_jacobian(m, z)) < 1e-4


def _frozen_loss(model, x, loss):
    """Train-mode loss as a function of the parameter vector; Chamfer correspondences frozen at theta0."""
    theta0 = model.get_vector()
    _, y0 = model.forward_train(x)
    if loss == "chamfer":
        corr = [chamfer_with_grad(y0[b], x[b])[2] for b in range(x.shape[0])]

    def f(theta):
        model.set_vector(theta)
        _, y = model.forward_train(x)
        if loss == "mse":
            return float(((y - x) ** 2).mean())
        return sum(chamfer_fixed(y[b], x[b], *corr[b]) for b in range(x.shape[0])) / x.shape[0]

    return theta0, f


def test_mse_gradient_every_parameter(normalized_bars):
    nds, _ = normalized_bars
    m = build_model("marker", seed=4)
    x = nds.feature_matrix()[[0, 50, 200]]
    m.loss_and_grad(x)
    g = m.gradient_vector()
    theta0, f = _frozen_loss(m, x, "mse")
    h = 1e-6
    fd = np.empty_like(g)
    for i in range(g.size):
        e = np.zeros_like(theta0)
        e[i] = h
        fd[i] = (f(theta0 + e) - f(theta0 - e)) / (2 * h)
    m.set_vector(theta0)
    assert rel_err(g, fd) < 1e-4


def test_chamfer_gradient_cloud_preset():
    ds = generate_sheet_dataset(1, n_raw=600, resolution=512, seed=3)
    nds, _ = normalize(ds)
    x = nds.point_tensor()[[0, 3, 6]]
    m = build_model("cloud", seed=5)
    m.loss_and_grad(x, "chamfer")
    g = m.gradient_vector()
    theta0, f = _frozen_loss(m, x, "chamfer")
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(10):  # directional derivatives
        v = rng.normal(size=g.size)
        fd = (f(theta0 + h * v) - f(theta0 - h * v)) / (2 * h)
        assert abs(fd - g @ v) <= 1e-4 * abs(g @ v)
    idx = rng.choice(g.size, 150, replace=False)
    idx = np.concatenate([idx, np.argsort(np.abs(g))[-50:]])
    fd = []
    for i in idx:
        e = np.zeros_like(theta0)
        e[i] = h
        fd.append((f(theta0 + e) - f(theta0 - e)) / (2 * h))
    m.set_vector(theta0)
    assert rel_err(g[idx], np.array(fd)) < 1e-4


def test_batch_encode_bit_identical(trained_marker, normalized_bars):
    X = normalized_bars[0].feature_matrix()[:20]
    Z = trained_marker.encode(X)
    assert all(np.array_equal(Z[i], trained_marker.encode(X[i])) for i in range(20))
    D = trained_marker.decode(Z)
    assert all(np.array_equal(D[i], trained_marker.decode(Z[i])) for i in range(20))


def test_training_reduces_loss_and_is_reproducible():
    nds, _ = normalize(generate_bar_dataset(29, seed=21))  # 203 shapes
    cfg = TrainConfig(epochs=500, seed=3)
    m1 = build_model("marker", seed=3)
    log = train(m1, nds, cfg)
    assert log.final_train_loss < 0.1 * log.initial_train_loss
    val = np.array(log.val_losses)
    assert val.min() < 0.5 * log.initial_val_loss
    tail = val[-50:]
    assert (tail.max() - tail.min()) < 0.1 * log.initial_val_loss  # plateau
    m2 = build_model("marker", seed=3)
    train(m2, nds, TrainConfig(epochs=5, seed=3))
    m3 = build_model("marker", seed=3)
    train(m3, nds, TrainConfig(epochs=5, seed=3))
    assert np.array_equal(m2.get_vector(), m3.get_vector())


def test_zero_learning_rate(normalized_bars):
    m = build_model("marker", seed=1)
    before = m.get_vector()
    log = train(m, normalized_bars[0], TrainConfig(epochs=3, learning_rate=0.0))
    assert np.array_equal(before, m.get_vector())
    assert len(set(log.train_losses + [log.initial_train_loss])) == 1


@pytest.mark.parametrize("opt", ["sgd", "sgd-momentum", "adam"])
def test_optimizers_reduce_loss(opt, normalized_bars):
    m = build_model("marker", seed=1)
    lr = {"sgd": 0.5, "sgd-momentum": 0.05, "adam": 1e-2}[opt]
    log = train(m, normalized_bars[0], TrainConfig(epochs=10, optimizer=opt, learning_rate=lr))
    assert log.final_train_loss < log.initial_train_loss


def test_training_errors(normalized_bars, bar_dataset):
    m = build_model("marker", seed=1)
    with pytest.raises(ValueError, match="chamfer"):
        train(m, normalized_bars[0], TrainConfig(epochs=1, loss="chamfer"))
    with pytest.raises(ValueError, match="normalize"):
        train(m, bar_dataset, TrainConfig(epochs=1))
    X = normalized_bars[0].feature_matrix().copy()
    X[3, 2] = np.nan
    with pytest.raises(TrainingError):
        train(m, X, TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(validation_fraction=1.0)


def test_reconstruction_within_training_spread(trained_marker, normalized_bars):
    nds, rec = normalized_bars
    X = nds.feature_matrix()
    err = ((trained_marker.reconstruct(X) - X) ** 2).mean(1)
    fresh = np.stack([rec.apply(s.features()) for s in generate_bar_dataset(10, seed=99)])
    fresh_err = ((trained_marker.reconstruct(fresh) - fresh) ** 2).mean(1)
    assert fresh_err.mean() < err.mean() + 3 * err.std()


def test_checkpoint_round_trip(tmp_path, trained_marker, normalized_bars):
    trained_marker.save(tmp_path / "m.json")
    back = AutoencoderModel.load(tmp_path / "m.json")
    X = normalized_bars[0].feature_matrix()[:5]
    assert np.array_equal(back.encode(X), trained_marker.encode(X))
    assert np.array_equal(back.normalization.minimum, trained_marker.normalization.minimum)
    assert back.log.epochs == trained_marker.log.epochs


def test_jacobian_rank_report(trained_marker, trained_smooth):
    rng = np.random.default_rng(0)
    for name, m in (("marker", trained_marker), ("marker-smooth", trained_smooth)):
        Z = m.encode(m.decode(rng.normal(size=(100, 4))))
        fails = sum(np.linalg.matrix_rank(m.decoder_jacobian(z)) < 4 for z in Z)
        print(f"{name}: Jacobian rank < 4 at {fails} of 100 codes")
        assert m.decoder_jacobian(Z[0]).shape == (24, 4)


def _naive_embedding(model, p):
    """Per-point loop through the unfolded eval-mode encoder layers, then coordinatewise max."""
    feats = []
    for point in p:
        h = list(point)
        for lay in model.encoder[:-1]:
            if isinstance(lay, Pointwise):
                h = [lay.b[o] + sum(lay.W[o, i] * h[i] for i in range(len(h))) for o in range(lay.n_out)]
            elif isinstance(lay, BatchNorm):
                h = [(h[c] - lay.running_mean[c]) / np.sqrt(lay.running_var[c] + lay.eps) * lay.gamma[c]
                     + lay.beta[c] for c in range(len(h))]
            else:
                h = list(activate(lay.name, np.array(h)))
        feats.append(h)
    return np.max(np.array(feats), axis=0)


@pytest.fixture(scope="module")
def cloud_model():
    ds = generate_sheet_dataset(1, n_raw=600, resolution=512, seed=1)
    nds, _ = normalize(ds)
    m = build_model("cloud", seed=6)
    train(m, nds, TrainConfig(epochs=1, batch_size=3, seed=0, validation_fraction=0.0))
    return m, nds


def test_pointnet_permutation_and_oracle(cloud_model):
    m, nds = cloud_model
    cloud = nds[0].points
    f = pointnet_features(m, nds[0])
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert np.array_equal(pointnet_features(m, cloud[rng.permutation(512)]), f)
    sub = cloud[:40]
    small = build_model("cloud", seed=6, resolution=40)
    for a, b in zip(small.encoder, m.encoder):
        for n in a.param_names:
            setattr(a, n, getattr(b, n))
        if isinstance(a, BatchNorm):
            a.running_mean, a.running_var = b.running_mean, b.running_var
    small.invalidate()
    assert np.allclose(pointnet_features(small, sub), _naive_embedding(m, sub), rtol=1e-12, atol=1e-12)
    rep = np.repeat(cloud[:1], 512, axis=0)
    assert np.allclose(pointnet_features(m, rep), _naive_embedding(m, cloud[:1]), rtol=1e-12, atol=1e-12)


def test_dense_layer_shapes():
    d = Dense(3, 2)
    with pytest.raises(ValueError):
        d.out_shape((4,))
