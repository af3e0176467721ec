import numpy as np
import pytest

from pathlasso.data import generate_hypercube, make_rng, split, standardize
from pathlasso.errors import ConfigError, ShapeError, TrainingError
from pathlasso.evaluation import r_squared
from pathlasso.network import Network, OptimizerState, optimizer_step
from pathlasso.penalties import PRUNE, connection_matrix, exclusive_lasso_penalty, symmetric_connection_matrix
from pathlasso.trainer import (
    Autoencoder,
    AutoencoderSpec,
    TrainConfig,
    _adam_stage,
    _proximal_stage,
    empty_mask,
    freeze_mask_apply,
    objective_gradients,
    proximal_path_step,
    substitution_stage,
    train_three_stage,
)

from conftest import central_diff

FAST = dict(adam_lr=1e-2, max_epochs=60, prox_max_epochs=15, patience=10)


@pytest.fixture(scope="module")
def small_data():
    return standardize(split(generate_hypercube(2, 40, seed=3), seed=3))


def random_ae(rng, d_x=3, d_z=2, hidden=(4,)):
    ae = AutoencoderSpec(d_x, d_z, hidden).build(rng)
    for net in ae.networks():
        for b in net.biases:
            b[:] = rng.normal(size=b.shape) * 0.2
    return ae


def test_spec_shapes():
    spec = AutoencoderSpec(4, 2, (50,))
    assert spec.encoder_dims == [4, 50, 2] and spec.decoder_dims == [2, 50, 4]
    ae = spec.build(make_rng(0))
    assert ae.encoder.activations == ["tanh", "identity"]
    with pytest.raises(ShapeError):
        Autoencoder(ae.encoder, AutoencoderSpec(4, 3).build(make_rng(0)).decoder)
    with pytest.raises(ConfigError):
        TrainConfig(lam=-1)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"lam": 1, "bogus": 2})


@pytest.mark.parametrize("path_lambda,excl", [(0.0, 0.0), (0.3, 0.0), (0.0, 0.2), (0.4, 0.15)])
def test_objective_gradients_match_finite_differences(rng, path_lambda, excl):
    ae = random_ae(rng)
    X = rng.normal(size=(8, 3))

    def value():
        return objective_gradients(ae, X, path_lambda, excl)[0]

    _, ge, gd = objective_gradients(ae, X, path_lambda, excl)
    params = ae.encoder.params() + ae.decoder.params()
    numeric = central_diff(value, params)
    for a, n in zip(ge.params() + gd.params(), numeric):
        assert np.max(np.abs(a - n)) < 1e-6


def test_objective_value_composition(rng):
    ae = random_ae(rng)
    X = rng.normal(size=(5, 3))
    conn = ae.connections()
    expected = ae.loss(X) + 0.3 * conn.sum() + 0.2 * exclusive_lasso_penalty(conn, "rows")[0]
    assert objective_gradients(ae, X, 0.3, 0.2)[0] == pytest.approx(expected, rel=1e-12)


def _sgd_copy(ae, X, config):
    ref = ae.copy()
    _, ge, gd = objective_gradients(ref, X, 0.0, config.exclusive)
    for net, g in zip(ref.networks(), (ge, gd)):
        optimizer_step(net, g, OptimizerState("plain_sgd", config.prox_lr))
    return ref


def test_proximal_step_without_penalty_is_gradient_step(rng):
    ae = random_ae(rng)
    X = rng.normal(size=(6, 3))
    config = TrainConfig(lam=0.0)
    ref = _sgd_copy(ae, X, config)
    proximal_path_step(ae, X, config, np.zeros((2, 3)))
    for a, b in zip(ae.encoder.params() + ae.decoder.params(), ref.encoder.params() + ref.decoder.params()):
        assert np.max(np.abs(a - b)) < 1e-6


def test_proximal_step_with_sentinel_prunes_everything(rng):
    ae = random_ae(rng)
    proximal_path_step(ae, rng.normal(size=(6, 3)), TrainConfig(lam=1.0), np.full((2, 3), PRUNE))
    assert np.all(ae.connections() == 0)
    assert np.all(connection_matrix(ae.encoder.weights) == 0)
    assert np.all(connection_matrix(ae.decoder.weights) == 0)


def test_proximal_step_scalar_chain(rng):
    ae = random_ae(rng, d_x=2, d_z=1, hidden=(1,))
    X = rng.normal(size=(7, 2))
    config = TrainConfig(lam=0.1, nmf_tolerance=1e-14, nmf_max_sweeps=2000)
    thresholds = np.array([[0.004, 0.02]])
    ref = _sgd_copy(ae, X, config)
    enc_paths = np.abs(ref.encoder.weights[1] @ ref.encoder.weights[0])  # (1, 2)
    dec_paths = np.abs(ref.decoder.weights[1] @ ref.decoder.weights[0])  # (2, 1)
    conn = np.sqrt(enc_paths**2 + dec_paths.T**2)
    factor = np.maximum(1 - thresholds / conn, 0)
    proximal_path_step(ae, X, config, thresholds)
    got_enc = np.abs(ae.encoder.weights[1] @ ae.encoder.weights[0])
    got_dec = np.abs(ae.decoder.weights[1] @ ae.decoder.weights[0])
    assert np.max(np.abs(got_enc - enc_paths * factor)) < 1e-6
    assert np.max(np.abs(got_dec - dec_paths * factor.T)) < 1e-6


def test_proximal_step_keeps_signs_and_bounds(rng):
    ae = random_ae(rng)
    X = rng.normal(size=(6, 3))
    config = TrainConfig(lam=0.5)
    ref = _sgd_copy(ae, X, config)
    proximal_path_step(ae, X, config, np.full((2, 3), 0.3))
    for net, r in zip(ae.networks(), ref.networks()):
        for w, rw in zip(net.weights, r.weights):
            assert np.all(np.abs(w) <= np.abs(rw) + 1e-12)
            assert np.all((w == 0) | (np.sign(w) == np.sign(rw)))


def test_threshold_shape_checked(rng):
    with pytest.raises(ShapeError):
        proximal_path_step(random_ae(rng), rng.normal(size=(3, 3)), TrainConfig(), np.zeros((3, 2)))


def test_freeze_mask(rng):
    net = random_ae(rng).encoder
    before = net.copy()
    freeze_mask_apply(net, None)
    freeze_mask_apply(net, [np.zeros(w.shape, dtype=bool) for w in net.weights])
    assert all(np.array_equal(a, b) for a, b in zip(net.weights, before.weights))
    freeze_mask_apply(net, [np.ones(w.shape, dtype=bool) for w in net.weights])
    assert all(np.all(w == 0) for w in net.weights)
    with pytest.raises(ShapeError):
        freeze_mask_apply(net, [np.ones((1, 1), dtype=bool)] * 2)


def test_masked_entries_stay_zero_under_adam(rng, small_data):
    ae = random_ae(rng, d_x=2, d_z=1, hidden=(5,))
    mask = empty_mask(ae)
    for side, net in (("encoder", ae.encoder), ("decoder", ae.decoder)):
        for w, m in zip(net.weights, mask[side]):
            m[...] = rng.random(w.shape) < 0.4
            w[m] = 0.0
    X, _ = small_data.part("train")
    Xv, _ = small_data.part("val")
    config = TrainConfig(adam_lr=1e-2, max_epochs=100, patience=1000)
    ae, curve = _adam_stage(ae, X, Xv, config, make_rng(0), "stage3", mask=mask)
    assert len(curve) == 100
    for side, net in (("encoder", ae.encoder), ("decoder", ae.decoder)):
        for w, m in zip(net.weights, mask[side]):
            assert np.all(w[m] == 0)


def test_substitution_without_penalty_equals_stage_one(rng, small_data):
    X, _ = small_data.part("train")
    Xv, _ = small_data.part("val")
    config = TrainConfig(lam=0.0, **FAST)
    ae = random_ae(rng, d_x=2, d_z=1)
    a, _ = substitution_stage(ae.copy(), X, Xv, config, make_rng(5))
    b, _ = _adam_stage(ae.copy(), X, Xv, config, make_rng(5), "stage1")
    assert all(np.array_equal(p, q) for p, q in zip(a.encoder.params(), b.encoder.params()))


def test_no_penalty_keeps_every_connection(small_data):
    ae, report = train_three_stage(small_data, AutoencoderSpec(2, 1, (5,)), TrainConfig(lam=0.0, **FAST))
    assert report.n_connections == 2
    assert set(report.curves) == {"stage1"}


def test_huge_penalty_disconnects_everything(small_data):
    ae, report = train_three_stage(small_data, AutoencoderSpec(2, 1, (5,)), TrainConfig(lam=1e6, **FAST))
    assert report.n_connections == 0
    X, _ = small_data.part("test")
    assert r_squared(X, ae.reconstruct(X)) <= 0.0
    recon = ae.reconstruct(X)
    assert np.allclose(recon, recon[0])


@pytest.fixture(scope="module")
def pruned_run(small_data):
    config = TrainConfig(lam=0.3, **FAST)
    return train_three_stage(small_data, AutoencoderSpec(2, 2, (6,)), config)


def test_report_invariants(pruned_run):
    ae, report = pruned_run
    assert report.n_connections == int(np.count_nonzero(report.connections > 0))
    assert np.array_equal(report.connections, symmetric_connection_matrix(ae.encoder.weights, ae.decoder.weights))
    assert 0 < report.n_connections < 4
    assert set(report.curves) == {"stage1", "substitution", "stage2", "stage3"}


def test_symmetric_pruning(pruned_run):
    ae, report = pruned_run
    enc = connection_matrix(ae.encoder.weights)
    dec = connection_matrix(ae.decoder.weights)
    assert np.array_equal(enc == 0, dec.T == 0)


def test_pruned_connections_have_zero_input_derivative(pruned_run, rng):
    ae, _ = pruned_run
    enc = connection_matrix(ae.encoder.weights)
    zeros = np.argwhere(enc == 0)
    assert len(zeros)
    h = 1e-5
    for _ in range(10):
        x = rng.normal(size=2)
        for j, i in zeros:
            up, down = x.copy(), x.copy()
            up[i] += h
            down[i] -= h
            d = (ae.encode(up[None])[0, j] - ae.encode(down[None])[0, j]) / (2 * h)
            assert abs(d) < 1e-8


def test_prune_permanence_during_proximal_stage(small_data):
    X, _ = small_data.part("train")
    Xv, _ = small_data.part("val")
    config = TrainConfig(lam=0.3, **FAST)
    ae = AutoencoderSpec(2, 2, (6,)).build(make_rng(1))
    ae, _ = _adam_stage(ae, X, Xv, config, make_rng(1), "stage1")
    thresholds = config.prox_lr * np.array([[0.5, 0.05], [0.05, 0.5]]) * 50
    mask = empty_mask(ae)
    pruned_so_far = np.zeros((2, 2), dtype=bool)
    for step in range(10):
        ae, _ = _proximal_stage(ae, X, Xv, TrainConfig(lam=0.3, prox_max_epochs=1), make_rng(step), thresholds, mask)
        now = ae.connections() == 0
        assert np.all(now[pruned_so_far])
        pruned_so_far |= now
    ae, _ = _adam_stage(ae, X, Xv, config, make_rng(2), "stage3", mask=mask)
    assert np.all(ae.connections()[pruned_so_far] == 0)


def test_deterministic_reports(small_data):
    config = TrainConfig(lam=0.3, **FAST)
    spec = AutoencoderSpec(2, 2, (6,))
    a = train_three_stage(small_data, spec, config)
    b = train_three_stage(small_data, spec, config)
    assert a[1] == b[1]
    assert a[1].to_dict(include_timing=False) == b[1].to_dict(include_timing=False)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_reports_stage(small_data):
    X, _ = small_data.part("train")
    ae = AutoencoderSpec(2, 1, (3,)).build(make_rng(0))
    ae.encoder.weights[0][0, 0] = 1e300
    ae.decoder.weights[1][0, 0] = 1e300
    with pytest.raises(TrainingError) as info:
        _adam_stage(ae, X * 1e10, X, TrainConfig(max_epochs=2), make_rng(0), "stage1")
    assert info.value.stage == "stage1"


def test_stage_three_improves_on_stage_two_loss(small_data):
    X, _ = small_data.part("train")
    Xv, _ = small_data.part("val")
    config = TrainConfig(lam=0.3, **FAST)
    rng = make_rng(0)
    ae = AutoencoderSpec(2, 2, (6,)).build(rng)
    ae, _ = _adam_stage(ae, X, Xv, config, rng, "stage1")
    mask = empty_mask(ae)
    thresholds = config.prox_lr * np.full((2, 2), 0.3)
    ae, _ = _proximal_stage(ae, X, Xv, config, rng, thresholds, mask)
    stage2_loss = ae.loss(X)
    ae, _ = _adam_stage(ae, X, Xv, config, rng, "stage3", mask=mask)
    assert ae.loss(X) <= stage2_loss + 1e-12


def test_substitution_shrinks_weak_connections():
    ds = standardize(split(generate_hypercube(seed=0), seed=0))
    X, _ = ds.part("train")
    Xv, _ = ds.part("val")
    config = TrainConfig(lam=0.05, adam_lr=1e-2, batch_size=128, patience=200, max_epochs=4000)
    rng = make_rng(0)
    ae = AutoencoderSpec(4, 2).build(rng)
    ae, _ = _adam_stage(ae, X, Xv, config, rng, "stage1", 0.0, config.exclusive)
    ae, _ = substitution_stage(ae, X, Xv, config, rng)
    conn = np.sort(ae.connections().ravel())
    assert np.all(conn[:4] < 0.1 * conn[-1])
