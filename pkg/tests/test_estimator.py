import numpy as np
import pytest
from sklearn.base import clone

from stephrl import StepHRLAgent, WorldConfig, generate_tasks
from stephrl.exceptions import ConfigError

TASKS = generate_tasks(WorldConfig(), "Seen", 6, 4)


def tiny(**kw):
    base = dict(dim=8, bc_epochs=1, bc_batch_size=32, warmup_steps=2, rl_rounds=2,
                rl_batch_size=16)
    base.update(kw)
    return StepHRLAgent(**base)


@pytest.fixture(scope="module")
def fitted():
    return tiny().fit(TASKS)


def test_params_round_trip_through_clone():
    est = tiny(beta=0.5, mix_ratio=(1, 0))
    params = est.get_params()
    assert params["beta"] == 0.5 and params["dim"] == 8
    twin = clone(est)
    assert twin.get_params() == params
    assert not hasattr(twin, "bundle_")
    est.set_params(expectile=0.7)
    assert est._train_config().expectile == 0.7


def test_fit_records_dataset_sizes(fitted):
    assert fitted.n_samples_["low"] >= fitted.n_samples_["progress"] >= 0
    assert fitted.n_samples_["high"] >= len(TASKS)
    assert len(fitted.bc_losses_) == 1
    assert fitted.bundle_.dtype == np.float32


def test_predict_and_score(fitted):
    pred = fitted.predict(TASKS[:3])
    assert pred.dtype == bool and pred.shape == (3,)
    assert fitted.score(TASKS[:3]) == pytest.approx(pred.mean())


def test_fit_offline_runs_the_rl_budget():
    est = tiny().fit(TASKS)
    est.fit_offline(TASKS[:2])
    assert est.n_collected_ > 0
    assert all(n == 2 + 2 for n in est.trainer_.critic_steps.values() if n)


def test_fit_is_deterministic():
    a = tiny().fit(TASKS[:3])
    b = tiny().fit(TASKS[:3])
    for k in a.bundle_.theta:
        assert np.array_equal(a.bundle_.theta[k], b.bundle_.theta[k])


def test_unfitted_and_bad_inputs(fitted):
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        tiny().predict(TASKS)
    with pytest.raises(ValueError):
        fitted.predict([])
    with pytest.raises(TypeError):
        fitted.predict(["put an apple in the box"])
    with pytest.raises(ConfigError):
        tiny(expectile=1.5).fit(TASKS)
