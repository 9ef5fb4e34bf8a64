import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from d2e.autodiff import Tape, Tensor
from d2e.data import gen_synthetic
from d2e.encoders import encode_ttfs
from d2e.network import build, predict_probs, tiny_mlp
from d2e.training import (
    DISTILL_LOSSES,
    LOG_COLUMNS,
    DistributionError,
    DivergenceError,
    TransferConfig,
    distillation_loss,
    lr_schedule,
    pretrain_direct,
    sgd_step,
    train_skd,
    train_tsf,
)


def test_nesterov_zero_gradient_is_noop():
    p = np.array([1.5, -2.0])
    state = [None]
    sgd_step([p], [np.zeros(2)], state, lr=0.1)
    np.testing.assert_array_equal(p, [1.5, -2.0])


def test_nesterov_one_step():
    # buf = 1; p -= 0.1 * (1 + 0.9 * 1)
    p = np.array([0.0])
    sgd_step([p], [np.array([1.0])], [None], lr=0.1)
    assert p[0] == pytest.approx(-0.19, abs=1e-15)


def test_nesterov_two_steps():
    # second buf = 0.9 + 1 = 1.9; step 0.1 * (1 + 0.9 * 1.9) = 0.271
    p = np.array([0.0])
    state = [None]
    sgd_step([p], [np.array([1.0])], state, lr=0.1)
    sgd_step([p], [np.array([1.0])], state, lr=0.1)
    assert p[0] == pytest.approx(-0.461, abs=1e-15)
    assert state[0][0] == pytest.approx(1.9)


def test_schedule_examples():
    cfg = TransferConfig(epochs=10, warmup_epochs=2, batch_size=256, lr_ref=0.1)
    assert cfg.base_lr == 0.1
    assert lr_schedule(0, cfg) == pytest.approx(0.01)
    assert lr_schedule(1, cfg) == pytest.approx(0.055)
    assert lr_schedule(2, cfg) == pytest.approx(0.1)
    assert lr_schedule(9, cfg) <= 0.01 * cfg.base_lr
    lrs = [lr_schedule(e, cfg) for e in range(2, 10)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_schedule_single_epoch_and_bounds():
    assert lr_schedule(0, TransferConfig(epochs=1, batch_size=64, lr_ref=0.6)) == pytest.approx(0.15)
    with pytest.raises(ValueError):
        lr_schedule(3, TransferConfig(epochs=3))


@given(st.integers(1, 512))
def test_batch_doubling_doubles_lr(b):
    assert TransferConfig(batch_size=2 * b).base_lr == 2 * TransferConfig(batch_size=b).base_lr


@pytest.mark.parametrize("kw", [{"alpha": 1.5}, {"alpha": -0.1}, {"batch_size": 0}, {"distill_loss": "hinge"}, {"epochs": -1}, {"temperature": 0.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TransferConfig(**kw)


simplex = arrays(np.float64, (3, 4), elements=st.floats(0.0, 1.0)).filter(lambda a: (a.sum(axis=1) > 1e-3).all()).map(lambda a: a / a.sum(axis=1, keepdims=True))


@pytest.mark.parametrize("variant", DISTILL_LOSSES)
@given(p=simplex)
def test_all_variants_vanish_at_equality(variant, p):
    assert distillation_loss(variant, p, Tensor(p)).item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("variant", DISTILL_LOSSES)
@given(p=simplex, q=simplex)
def test_all_variants_nonnegative(variant, p, q):
    assert distillation_loss(variant, p, Tensor(q)).item() >= -1e-12


@given(simplex, simplex)
def test_jensen_shannon_at_most_ln2(p, q):
    assert distillation_loss("jensen_shannon", p, Tensor(q)).item() <= math.log(2) + 1e-12


def test_kl_asymmetry_examples():
    p, q = np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])
    assert distillation_loss("forward_kl", p, Tensor(q)).item() == pytest.approx(math.log(2))
    reverse = distillation_loss("reverse_kl", p, Tensor(q)).item()
    # 0.5 ln(0.5/1) + 0.5 ln(0.5/1e-12)
    assert reverse == pytest.approx(0.5 * math.log(0.5) + 0.5 * math.log(0.5 / 1e-12), rel=1e-9)
    assert reverse > 10


def test_mse_and_l1_examples():
    p, q = np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])
    assert distillation_loss("mse_softmax", p, Tensor(q)).item() == pytest.approx(0.25)
    assert distillation_loss("l1_softmax", p, Tensor(q)).item() == pytest.approx(0.5)


def test_gradient_reaches_student_only():
    p = Tensor(np.array([[0.2, 0.8]]), requires_grad=True)
    q = Tensor(np.array([[0.6, 0.4]]), requires_grad=True)
    with Tape() as tape:
        tape.backward(distillation_loss("forward_kl", p, q))
    assert p.grad is None
    np.testing.assert_allclose(q.grad, [[-0.2 / 0.6, -0.8 / 0.4]])


def test_distillation_contract_errors():
    with pytest.raises(DistributionError):
        distillation_loss("forward_kl", np.array([[0.5, 0.6]]), Tensor([[0.5, 0.5]]))
    with pytest.raises(ValueError):
        distillation_loss("cosine", np.array([[0.5, 0.5]]), Tensor([[0.5, 0.5]]))


# ---------------------------------------------------------------- training runs


@pytest.fixture(scope="module")
def blobs():
    return gen_synthetic("two-blobs", 64, seed=5, size=6)


@pytest.fixture(scope="module")
def teacher(blobs):
    net = build(tiny_mlp(blobs.image_shape, 2, 12), 0)
    cfg = TransferConfig(epochs=6, batch_size=16, lr_ref=2.0, warmup_epochs=1, T=4)
    pretrain_direct(net, blobs, cfg)
    return net


def _params(net):
    return [p.data.copy() for p in net.parameters()]


def test_pretrain_separable_toy():
    # at 16 px the blob centres sit six standard deviations apart
    data = gen_synthetic("two-blobs", 96, seed=11)
    net = build(tiny_mlp(data.image_shape, 2, 16), 1)
    _, log = pretrain_direct(net, data, TransferConfig(epochs=50, batch_size=16, lr_ref=1.0, warmup_epochs=1, T=4))
    assert len(log) == 50
    assert log.records[-1].acc_dir_hard >= 0.95
    assert [r.epoch for r in log.records] == list(range(50))


def test_zero_epochs(blobs):
    net = build(tiny_mlp(blobs.image_shape, 2, 12), 0)
    before = _params(net)
    _, log = pretrain_direct(net, blobs, TransferConfig(epochs=0, T=4))
    assert len(log) == 0
    for a, b in zip(before, _params(net)):
        assert np.array_equal(a, b)
    tsf, log = train_tsf(net, blobs, encode_ttfs, TransferConfig(epochs=0, T=4))
    assert len(log) == 0
    np.testing.assert_array_equal(predict_probs(tsf, blobs.x, encode_ttfs, 4), predict_probs(net, blobs.x, encode_ttfs, 4))


def test_pretrain_deterministic(blobs):
    cfg = TransferConfig(epochs=2, batch_size=16, lr_ref=1.0, T=4)
    a = pretrain_direct(build(tiny_mlp(blobs.image_shape, 2, 12), 3), blobs, cfg)[0]
    b = pretrain_direct(build(tiny_mlp(blobs.image_shape, 2, 12), 3), blobs, cfg)[0]
    for p, q in zip(_params(a), _params(b)):
        assert p.tobytes() == q.tobytes()


def test_alpha_one_is_tsf_bitwise(blobs, teacher):
    cfg = TransferConfig(alpha=1.0, epochs=3, batch_size=16, lr_ref=0.5, T=4, seed=2)
    trajectory = {"tsf": [], "skd": []}
    tsf, tsf_log = train_tsf(teacher, blobs, encode_ttfs, cfg, on_epoch=lambda e, n: trajectory["tsf"].append(_params(n)))
    skd, skd_log = train_skd(teacher, teacher.copy(), blobs, encode_ttfs, cfg, on_epoch=lambda e, n: trajectory["skd"].append(_params(n)))
    for ea, eb in zip(trajectory["tsf"], trajectory["skd"]):
        for p, q in zip(ea, eb):
            assert p.tobytes() == q.tobytes()
    np.testing.assert_array_equal(tsf_log.column("loss"), skd_log.column("ce"))


def test_alpha_zero_has_no_ce_term(blobs, teacher):
    cfg = TransferConfig(alpha=0.0, epochs=1, batch_size=16, lr_ref=0.5, T=4)
    _, log = train_skd(teacher, teacher.copy(), blobs, encode_ttfs, cfg)
    assert log.records[0].loss == log.records[0].distill
    assert log.records[0].ce > 0


def test_teacher_unchanged_by_skd(blobs, teacher):
    before = _params(teacher)
    train_skd(teacher, teacher.copy(), blobs, encode_ttfs, TransferConfig(epochs=2, batch_size=16, lr_ref=1.0, T=4))
    for a, b in zip(before, _params(teacher)):
        assert a.tobytes() == b.tobytes()


def test_tsf_improves_event_accuracy(blobs, teacher):
    from d2e.training import evaluate

    base = evaluate(teacher, blobs, encode_ttfs, 4)[3]
    _, log = train_tsf(teacher, blobs, encode_ttfs, TransferConfig(epochs=5, batch_size=16, lr_ref=0.5, T=4))
    assert log.records[-1].acc_evt_hard >= base


def test_log_columns_and_csv(tmp_path, blobs, teacher):
    _, log = train_skd(teacher, teacher.copy(), blobs, encode_ttfs, TransferConfig(epochs=2, batch_size=16, T=4))
    path = tmp_path / "log.csv"
    log.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(LOG_COLUMNS)
    assert LOG_COLUMNS == ("epoch", "loss", "ce", "distill", "acc_dir_soft", "acc_dir_hard", "acc_evt_soft", "acc_evt_hard", "kl_mean", "lr")
    assert len(lines) == 3


def test_divergence_is_reported(blobs):
    net = build(tiny_mlp(blobs.image_shape, 2, 12), 0)
    # NaN in a spiking layer only silences it; the readout carries it into the loss
    net.parameters()[-2].data[...] = np.nan
    with pytest.raises(DivergenceError):
        pretrain_direct(net, blobs, TransferConfig(epochs=1, T=4))
