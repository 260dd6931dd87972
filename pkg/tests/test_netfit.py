import numpy as np
import pytest

from sabrnet.exceptions import ConfigError, DomainError, FormatError, TrainingError, VersionError
from sabrnet.netfit import (CKPT_VERSION, NetConfig, TrainConfig, dataset_mse, forward, init_network,
                            load_network, loss_and_grad, masked_mse, save_network, train,
                            write_history_csv)
from sabrnet.surfaces import Dataset, GenHyper, IvSurface, spec_for

H = GenHyper(m=4, n=5, dt=0.01)


def teacher_dataset(teacher, count, role):
    surfaces = []
    for i in range(count):
        spec = spec_for(H, 0, role, i)
        zeros = np.zeros((H.m, H.n))
        s = IvSurface(spec, zeros, zeros + 1.0, zeros.astype(bool), 100)
        s.iv = forward(teacher, s.inputs())
        surfaces.append(s)
    return Dataset(surfaces, H, 100, 0.01, 0, role)


@pytest.fixture(scope="module")
def teacher():
    # every hidden unit stays active on the input domain, so the student can
    # match it exactly
    t = init_network(NetConfig(1, 4, init_seed=42))
    t.weights[0] = np.abs(t.weights[0])
    t.biases[0][:] = 0.5
    t.weights[1] *= 0.1
    t.biases[1][:] = 0.2
    return t


def test_param_count():
    assert init_network(NetConfig(2, 16)).n_params == 385


def test_init_deterministic():
    a = init_network(NetConfig(2, 8, init_seed=3)).get_flat()
    b = init_network(NetConfig(2, 8, init_seed=3)).get_flat()
    assert np.array_equal(a, b)
    with pytest.raises(ConfigError):
        NetConfig(0, 8)
    with pytest.raises(ConfigError):
        NetConfig(1, 0)


def test_forward_pointwise_and_finite():
    net = init_network(NetConfig(2, 32, init_seed=1))
    x = np.random.default_rng(0).uniform(0, 1, (4, 5, 5))
    out = forward(net, x)
    assert out.shape == (4, 5) and np.isfinite(out).all()
    perm = np.random.default_rng(1).permutation(20)
    flat = x.reshape(20, 5)
    assert np.array_equal(forward(net, flat[perm]), out.ravel()[perm])
    bad = x.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(DomainError):
        forward(net, bad)


@pytest.mark.parametrize("layers", [1, 2, 4])
def test_gradient_check(layers):
    rng = np.random.default_rng(layers)
    net = init_network(NetConfig(layers, 12, init_seed=layers))
    for b in net.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    X = rng.uniform(0, 1, (60, 5))
    y = rng.uniform(0, 1, 60)
    valid = rng.uniform(size=60) > 0.2
    _, grads = loss_and_grad(net, X, y, valid)
    g = np.concatenate([a.ravel() for a in grads])
    w = net.get_flat()
    idx = rng.choice(w.size, max(10, w.size // 100), replace=False)
    for i in idx:
        step = 1e-4 * max(1.0, abs(w[i]))
        wp, wm = w.copy(), w.copy()
        wp[i] += step
        wm[i] -= step
        net.set_flat(wp)
        lp = loss_and_grad(net, X, y, valid)[0]
        net.set_flat(wm)
        lm = loss_and_grad(net, X, y, valid)[0]
        net.set_flat(w)
        fd = (lp - lm) / (2 * step)
        assert abs(fd - g[i]) <= 1e-3 * max(abs(fd), abs(g[i]), 1e-8)


def test_masked_mse():
    t = np.array([[0.2, 0.3], [0.4, 0.5]])
    assert masked_mse(t, t, np.zeros_like(t, bool)) == 0.0
    p = t.copy()
    p[0, 0] += 0.01
    mask = np.array([[False, True], [True, True]])
    assert masked_mse(p, t, mask) == pytest.approx(1e-4, rel=1e-9)
    q = t + np.array([[0.1, -0.2], [0.05, 0.0]])
    assert masked_mse(q, t, np.zeros_like(t, bool)) == pytest.approx(np.mean((q - t) ** 2))
    assert np.isnan(masked_mse(p, t, np.ones_like(t, bool)))


def test_teacher_student(teacher):
    tr = teacher_dataset(teacher, 200, "train")
    va = teacher_dataset(teacher, 50, "validate")
    tcfg = TrainConfig(batch_size=200, lr_initial=1e-2, lr_floor=1e-7, patience=20, max_epochs=20000)
    net = train(init_network(NetConfig(1, 4, init_seed=1)), tr, va, tcfg)
    assert dataset_mse(net, tr) < 1e-8
    assert net.history[49]["train_loss"] < net.history[0]["train_loss"]
    best = min(r["val_loss"] for r in net.history)
    assert dataset_mse(net, va) <= best * (1 + 1e-9)


def test_lr_schedule(teacher):
    tr = teacher_dataset(teacher, 20, "train")
    va = teacher_dataset(teacher, 5, "validate")
    tcfg = TrainConfig(batch_size=5, lr_initial=1e-3, lr_decay_factor=10, lr_floor=1e-6, patience=2,
                       max_epochs=5000)
    net = train(init_network(NetConfig(1, 4, init_seed=2)), tr, va, tcfg)
    h = net.history
    assert [r["epoch"] for r in h] == list(range(1, len(h) + 1))
    best, bad, lr = np.inf, 0, tcfg.lr_initial
    for r in h:
        assert r["lr"] == lr
        if r["val_loss"] < best:
            best, bad = r["val_loss"], 0
        else:
            bad += 1
            if bad == tcfg.patience:
                lr, bad = lr / 10, 0
    # training stopped exactly when the rate reached the floor
    assert lr == pytest.approx(tcfg.lr_floor, rel=1e-9)


def test_determinism(teacher):
    tr = teacher_dataset(teacher, 30, "train")
    va = teacher_dataset(teacher, 5, "validate")
    tcfg = TrainConfig(batch_size=7, lr_initial=1e-3, lr_floor=1e-5, max_epochs=50)
    a = train(init_network(NetConfig(2, 8)), tr, va, tcfg)
    b = train(init_network(NetConfig(2, 8)), tr, va, tcfg)
    assert a.get_flat().tobytes() == b.get_flat().tobytes()


def test_overlap_and_empty_rejected(teacher):
    tr = teacher_dataset(teacher, 5, "train")
    with pytest.raises(DomainError):
        train(init_network(NetConfig(1, 4)), tr, tr, TrainConfig())
    empty = Dataset([], H, 100, 0.01, 0, "validate")
    with pytest.raises(DomainError):
        train(init_network(NetConfig(1, 4)), tr, empty, TrainConfig())


def test_divergence_raises(teacher):
    tr = teacher_dataset(teacher, 5, "train")
    va = teacher_dataset(teacher, 2, "validate")
    tr.surfaces[0].iv[0, 0] = np.inf
    with pytest.raises(TrainingError) as err:
        train(init_network(NetConfig(1, 4)), tr, va, TrainConfig(lr_initial=1e-3))
    assert np.isfinite(err.value.network.get_flat()).all()


def test_checkpoint_round_trip(teacher, tmp_path):
    tr = teacher_dataset(teacher, 10, "train")
    va = teacher_dataset(teacher, 3, "validate")
    net = train(init_network(NetConfig(2, 8, standardize=True)), tr, va,
                TrainConfig(batch_size=5, lr_initial=1e-3, lr_floor=1e-5, max_epochs=5))
    p = tmp_path / "n.ckpt"
    save_network(net, p)
    back = load_network(p)
    assert back.get_flat().tobytes() == net.get_flat().tobytes()
    assert np.array_equal(back.x_shift, net.x_shift) and back.config == net.config
    assert back.history == net.history
    x = tr.surfaces[0].inputs()
    assert np.array_equal(forward(back, x), forward(net, x))
    write_history_csv(net, tmp_path / "h.csv")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "epoch,train_loss,val_loss,lr" and len(rows) == 1 + len(net.history)


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "n.ckpt"
    save_network(init_network(NetConfig(1, 4)), p)
    data = p.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(data[:-8])
    with pytest.raises(FormatError):
        load_network(tmp_path / "t.ckpt")
    (tmp_path / "v.ckpt").write_bytes(data[:6] + (CKPT_VERSION + 1).to_bytes(2, "little") + data[8:])
    with pytest.raises(VersionError):
        load_network(tmp_path / "v.ckpt")
    (tmp_path / "m.ckpt").write_bytes(b"junk" + data)
    with pytest.raises(FormatError):
        load_network(tmp_path / "m.ckpt")
