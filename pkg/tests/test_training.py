import math

import numpy as np
import pytest

from sealtw.data import SyntheticSpec, generate, split_labeled
from sealtw.hierarchy import harden, validate_adjacency
from sealtw.training import (ConfigError, LinearModel, TrainConfig, TrainState, augment,
                             build_prior, cosine_lr, evaluate, fit, forward, label_smoothing_ce,
                             learning_rate, load_checkpoint, pseudo_label, save_checkpoint,
                             semisup_step, supervised_step)


def small_data(seed=0, labels=None):
    ds = generate(SyntheticSpec(samples_per_class=40, test_per_class=20, seed=seed))
    return split_labeled(ds, labels, seed=seed) if labels else ds


def fixed_model(logits):
    # identity weights so the logits are the inputs themselves
    K = len(logits)
    return LinearModel(np.eye(K), np.zeros(K))


def test_forward_examples():
    m = LinearModel(np.zeros((4, 3)), np.zeros(4))
    np.testing.assert_array_equal(forward(m, [1.0, 2.0, 3.0]), [0.25] * 4)
    p = forward(fixed_model([1000, 0]), [1000.0, 0.0])
    assert np.all(np.isfinite(p)) and p[0] == 1.0 and p[1] == 0.0
    rng = np.random.default_rng(0)
    m = LinearModel.init(5, 7, seed=1, scale=3.0)
    assert abs(forward(m, rng.normal(size=5)).sum() - 1) <= 1e-12
    with pytest.raises(ValueError):
        forward(m, np.zeros(4))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    m = LinearModel.init(4, 3, hidden=5, seed=2, scale=0.5)
    X = rng.normal(size=(6, 4))
    G = rng.normal(size=(6, 3))
    f = lambda mod: float(np.sum(mod.logits(X) * G))
    grads = m.backward(X, G)
    h = 1e-6
    for name in m.param_names():
        P = getattr(m, name)
        fd = np.zeros_like(P)
        for idx in np.ndindex(*P.shape):
            hi, lo = m.copy(), m.copy()
            getattr(hi, name)[idx] += h
            getattr(lo, name)[idx] -= h
            fd[idx] = (f(hi) - f(lo)) / (2 * h)
        np.testing.assert_allclose(grads[name], fd, rtol=1e-5, atol=1e-7)


def test_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.lam, c.tau, c.mu_ratio, c.batch_size, c.momentum, c.lr0) == (0.003, 0.95, 7, 64, 0.9, 0.03)
    assert TrainConfig.from_dict({"lambda": 0.01}).lam == 0.01
    with pytest.raises(ConfigError) as exc:
        TrainConfig.from_dict({"lambda": -1, "tau": 2, "sigma_strong": 0.0, "bogus": 1})
    assert len(exc.value.errors) >= 4
    assert TrainConfig.from_dict(TrainConfig(gamma=0.5).to_dict()) == TrainConfig(gamma=0.5)


def test_cosine_schedule():
    assert cosine_lr(0, 100) == 0.03
    assert abs(cosine_lr(100, 100) - 0.03 * math.cos(7 * math.pi / 16)) <= 1e-12
    lrs = [cosine_lr(s, 100) for s in range(101)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))
    assert learning_rate(TrainConfig(schedule="constant", lr0=0.1), 50) == 0.1


def test_pseudo_label_examples():
    m = fixed_model([0, 0])
    z = math.log(0.97 / 0.03)
    pb = pseudo_label(m, np.array([[z, 0.0], [0.0, 0.0], [0.0, 5.0]]), 0.95)
    np.testing.assert_array_equal(pb.mask, [True, False, True])
    np.testing.assert_array_equal(pb.labels, [0, 1])
    assert pseudo_label(m, np.array([[0.0, 0.0]]), 0.0).labels[0] == 0  # tie -> lowest index
    assert pseudo_label(m, np.zeros((4, 2)), 0.0).mask.all()
    assert not pseudo_label(m, np.array([[3.0, 0.0]]), 1.0).mask.any()
    assert pseudo_label(m, np.array([[1000.0, 0.0]]), 1.0).mask.all()
    with pytest.raises(ValueError):
        pseudo_label(m, np.zeros((1, 2)), 1.5)


def test_retention_monotone_in_tau():
    rng = np.random.default_rng(2)
    m = LinearModel.init(8, 6, seed=3, scale=1.0)
    X = rng.normal(size=(448, 8))
    counts = [pseudo_label(m, X, t).mask.sum() for t in np.linspace(0, 1, 21)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_augment():
    x = np.arange(6.0)
    c0 = TrainConfig(sigma_weak=0.0, sigma_strong=0.0, dropout_strong=0.0)
    np.testing.assert_array_equal(augment(x, "weak", c0, np.random.default_rng(0)), x)
    np.testing.assert_array_equal(augment(x, "strong", c0, np.random.default_rng(0)), x)
    c = TrainConfig()
    a = augment(x, "strong", c, np.random.default_rng(5))
    b = augment(x, "strong", c, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        augment(x, "medium", c, np.random.default_rng(0))


def test_label_smoothing():
    p = np.array([0.7, 0.2, 0.1])
    assert label_smoothing_ce(p, 0, 0.0) == pytest.approx(-math.log(0.7))
    expected = -(0.9 + 0.1 / 3) * math.log(0.7) - (0.1 / 3) * (math.log(0.2) + math.log(0.1))
    assert label_smoothing_ce(p, 0, 0.1) == pytest.approx(expected)
    for alpha in (0.0, 0.1, 0.5):
        assert label_smoothing_ce(np.full(5, 0.2), 3, alpha) == pytest.approx(math.log(5), abs=1e-12)
    with pytest.raises(ValueError):
        label_smoothing_ce(p, 0, 1.0)


def _state(ds, config):
    K = ds.num_classes
    model = LinearModel.init(ds.feature_dim, K, seed=4, scale=0.1)
    return TrainState(model, build_prior(config, K, seed=5))


def test_lambda_zero_is_plain_ce():
    ds = small_data()
    X, y = ds.labeled.X[:64], ds.labeled.y[:64]
    c = TrainConfig(lam=0.0)
    s1 = s2 = _state(ds, c)
    for _ in range(5):
        s1, b1 = supervised_step(s1, X, y, c)
        s2, b2 = supervised_step(s2, X, y, TrainConfig(lam=0.0, hierarchy_update="frozen"))
    np.testing.assert_array_equal(s1.model.weight, s2.model.weight)
    np.testing.assert_array_equal(s1.spec.A2, _state(ds, c).spec.A2)
    assert b1.total == b1.ce


def test_supervised_step_updates_hierarchy():
    ds = small_data()
    c = TrainConfig(a2_step_size=0.5)
    s0 = _state(ds, c)
    s1, br = supervised_step(s0, ds.labeled.X[:64], ds.labeled.y[:64], c)
    assert not np.array_equal(s1.spec.A2, s0.spec.A2)
    assert validate_adjacency(s1.spec).ok
    assert br.total == pytest.approx(br.ce + c.lam * br.phi, abs=1e-12)
    assert s1.step == 1
    frozen, _ = supervised_step(s0.__class__(s0.model, harden(s0.spec)), ds.labeled.X[:64],
                                ds.labeled.y[:64], c)
    np.testing.assert_array_equal(frozen.spec.A2, harden(s0.spec).A2)
    with pytest.raises(ValueError):
        supervised_step(s0, ds.labeled.X[:0], ds.labeled.y[:0], c)


def test_gamma_zero_is_supervised():
    ds = small_data(labels=4)
    c = TrainConfig(gamma=0.0)
    s = _state(ds, c)
    a, ba = semisup_step(s, ds.labeled.X, ds.labeled.y, ds.unlabeled.X[:56], c,
                         np.random.default_rng(0))
    b, bb = supervised_step(s, ds.labeled.X, ds.labeled.y, c)
    np.testing.assert_array_equal(a.model.weight, b.model.weight)
    np.testing.assert_array_equal(a.spec.A2, b.spec.A2)


def test_semisup_bookkeeping_and_validity():
    ds = small_data(labels=4)
    c = TrainConfig(tau=0.0, a2_step_size=0.2, gamma=0.7, lam=0.05)
    s = _state(ds, c)
    rng = np.random.default_rng(1)
    for _ in range(5):
        s, br = semisup_step(s, ds.labeled.X, ds.labeled.y, ds.unlabeled.X[:168], c, rng)
        assert br.retained_fraction == 1.0
        expected = br.ce + c.lam * br.phi + c.gamma * br.psi + c.gamma * c.lam * br.phi_u
        assert abs(br.total - expected) <= 1e-12
        assert validate_adjacency(s.spec).ok


def test_semisup_empty_pseudo_batch():
    ds = small_data(labels=4)
    c = TrainConfig(tau=1.0)
    s = _state(ds, c)
    _, br = semisup_step(s, ds.labeled.X, ds.labeled.y, ds.unlabeled.X[:56], c,
                         np.random.default_rng(0))
    assert br.retained_fraction == 0.0 and br.psi == 0.0 and br.phi_u == 0.0


def test_separable_convergence():
    rng = np.random.default_rng(6)
    X = np.concatenate([rng.normal(-3, 0.5, (32, 2)), rng.normal(3, 0.5, (32, 2))])
    y = np.repeat([0, 1], 32)
    c = TrainConfig(lr0=0.5, steps=200)
    s = TrainState(LinearModel.init(2, 2, seed=0), build_prior(c, 2, seed=0))
    for _ in range(200):
        s, br = supervised_step(s, X, y, c)
    assert evaluate(s.model, X, y).accuracy == 1.0


def test_evaluate():
    X = np.eye(4)
    y = np.arange(4)
    m = LinearModel(10 * np.eye(4), np.zeros(4))
    ev = evaluate(m, X, y)
    assert ev.accuracy == 1.0 and ev.per_class_accuracy == [1.0] * 4
    with pytest.raises(ValueError):
        evaluate(m, X[:0], y[:0])


def test_uniform_model_chance_accuracy():
    rng = np.random.default_rng(7)
    accs = []
    for seed in range(20):
        m = LinearModel.init(6, 5, seed=seed, scale=1e-3)
        X = rng.normal(size=(500, 6))
        accs.append(evaluate(m, X, rng.integers(0, 5, 500)).accuracy)
    # 20 x 500 draws: std of the mean is about 0.004
    assert abs(np.mean(accs) - 0.2) < 0.02


def test_fit_deterministic_and_checkpoint(tmp_path):
    ds = small_data(labels=4)
    c = TrainConfig(steps=20)
    r1 = fit(ds, c, mode="semisup")
    r2 = fit(ds, c, mode="semisup")
    np.testing.assert_array_equal(r1.state.model.weight, r2.state.model.weight)
    np.testing.assert_array_equal(r1.state.spec.A2, r2.state.spec.A2)
    assert len(r1.history) == 20
    path = tmp_path / "ck.json"
    save_checkpoint(path, r1.state, c)
    model, spec, payload = load_checkpoint(path)
    np.testing.assert_array_equal(model.weight, r1.state.model.weight)
    np.testing.assert_array_equal(spec.A2, r1.state.spec.A2)
    assert payload["config"]["lambda"] == 0.003
