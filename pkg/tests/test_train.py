import math

import numpy as np
import pytest

from slowfast.data import RawVideo
from slowfast.net import NetworkInstance, tiny_config
from slowfast.tensor import NumericError, ParamStore
from slowfast.train import (ConstantLr, LrSchedule, OptimState, StepOnPlateau, TrainConfig, lr_at, sgd_step,
                            train_loop)


def test_lr_examples():
    s = LrSchedule(1.6, 1000)
    assert lr_at(s, 0) == 1.6
    assert lr_at(s, 500) == pytest.approx(0.8, abs=1e-15)
    assert lr_at(s, 1000) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        lr_at(s, 1001)
    with pytest.raises(ValueError):
        lr_at(s, -1)


@pytest.mark.parametrize("kwargs", [dict(eta=0.0, n_max=10), dict(eta=1.0, n_max=10, warmup_iters=10),
                                    dict(eta=1.0, n_max=0), dict(eta=1.0, n_max=10, warmup_start_lr=-1)])
def test_schedule_validation(kwargs):
    with pytest.raises(ValueError):
        LrSchedule(**kwargs)


def test_warmup_continuity_and_monotone_tail():
    s = LrSchedule(1.6, 600, warmup_iters=80, warmup_start_lr=0.01)
    assert lr_at(s, 0) == 0.01
    # the ramp's limit at the junction equals the cosine value there
    ramp_end = s.warmup_start_lr + (lr_at(s, 79) - s.warmup_start_lr) * 80 / 79
    assert abs(ramp_end - lr_at(s, 80)) < 1e-12
    tail = [lr_at(s, n) for n in range(80, 601)]
    assert all(a >= b for a, b in zip(tail, tail[1:]))


def test_sgd_hand_iteration():
    params = ParamStore({"w": np.array([1.0])})
    grads = ParamStore({"w": np.array([1.0])})
    state = OptimState(weight_decay=0.0)
    sgd_step(params, grads, state, 0.1)
    assert params["w"][0] == pytest.approx(0.9, abs=1e-15)
    sgd_step(params, grads, state, 0.1)
    assert params["w"][0] == pytest.approx(0.71, abs=1e-15)
    assert state.n == 2


def test_zero_gradient_no_decay_is_identity():
    params = ParamStore({"a.weight": np.arange(6.0).reshape(2, 3)})
    before = params.copy()
    sgd_step(params, params.zeros_like(), OptimState(weight_decay=0.0), 0.5)
    assert params.equals(before)


def test_decay_only_shrinks_geometrically():
    params = ParamStore({"w": np.array([2.0, -3.0]), "bn.scale": np.array([1.0])})
    state = OptimState(weight_decay=1e-4)
    trace = []
    for _ in range(50):
        sgd_step(params, params.zeros_like(), state, 0.1)
        trace.append(params["w"].copy())
    trace = np.array(trace)
    assert np.all(np.abs(np.diff(np.abs(trace), axis=0)) > 0)
    assert np.all(np.diff(np.abs(trace), axis=0) < 0) and np.all(np.sign(trace) == [1, -1])
    assert params["bn.scale"][0] == 1.0


def test_quadratic_descent():
    A = np.array([[3.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -2.0])

    def loss(p):
        return 0.5 * p @ A @ p - b @ p

    params = ParamStore({"p": np.array([4.0, 4.0])})
    state = OptimState(momentum=0.0, weight_decay=0.0)
    prev = loss(params["p"])
    for _ in range(30):
        sgd_step(params, ParamStore({"p": A @ params["p"] - b}), state, 0.05)
        cur = loss(params["p"])
        assert cur < prev
        prev = cur


def test_non_finite_gradient():
    params = ParamStore({"w": np.ones(3)})
    with pytest.raises(NumericError, match="w"):
        sgd_step(params, ParamStore({"w": np.array([0.0, np.nan, 1.0])}), OptimState(), 0.1)
    with pytest.raises(ValueError):
        sgd_step(params, ParamStore({"w": np.ones(2)}), OptimState(), 0.1)


def test_plateau():
    p = StepOnPlateau(1.0, factor=10, patience=2)
    assert [p.observe(e) for e in (0.5, 0.4, 0.45, 0.41)] == [1.0, 1.0, 1.0, 0.1]
    assert p.observe(0.3) == 0.1


def corpus(n=6, seed=0):
    r = np.random.default_rng(seed)
    return [RawVideo(r.random((8, 16, 16, 3)), k % 3) for k in range(n)]


def small_optim(**kw):
    return TrainConfig(**{"batch_size": 2, "crop": 16, "scale_range": (16, 18), **kw})


def test_train_loop_deterministic(tmp_path):
    cfg = tiny_config()
    logs, params = [], []
    for k in range(2):
        net = NetworkInstance.create(cfg, 3)
        path = tmp_path / f"log{k}.jsonl"
        train_loop(net, corpus(), LrSchedule(0.05, 4, 1), small_optim(), seed=11, log_path=path)
        logs.append(path.read_bytes())
        params.append(net.params)
    assert logs[0] == logs[1] and params[0].equals(params[1])
    assert len(logs[0].splitlines()) == 4


def test_zero_lr_constant_loss():
    net = NetworkInstance.create(tiny_config(dropout=0.0), 0)
    log = train_loop(net, corpus(1), ConstantLr(0.0, 5), small_optim(augment=False, bn_mode="eval"), seed=1)
    losses = [r["loss"] for r in log]
    assert max(losses) - min(losses) <= 1e-10


def test_train_loop_validation():
    net = NetworkInstance.create(tiny_config(), 0)
    with pytest.raises(ValueError):
        train_loop(net, [], LrSchedule(0.1, 2), small_optim())


def test_divergence_reports_iteration():
    net = NetworkInstance.create(tiny_config(), 0)
    with np.errstate(all="ignore"), pytest.raises(NumericError, match="iteration"):
        train_loop(net, corpus(), ConstantLr(1e200, 6), small_optim(), seed=0)


def test_eval_records(tmp_path):
    net = NetworkInstance.create(tiny_config(), 0)
    log = train_loop(net, corpus(), LrSchedule(0.05, 4), small_optim(eval_every=2, checkpoint_every=2,
                                                                      checkpoint_dir=str(tmp_path)),
                     seed=0, val=corpus(3, 1))
    assert ["val_top1" in r for r in log] == [False, True, False, True]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["iter_000002.sfck", "iter_000004.sfck"]
    assert all(math.isfinite(r["loss"]) for r in log)
