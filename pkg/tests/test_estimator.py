import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bamgp.estimator import BayesianAdditiveModel
from bamgp.hyperopt import OptConfig
from bamgp.simulate import generate_toy


def test_fit_predict_score(toy_small):
    ds, gt = toy_small
    # small beta: wide share noise inflates the renormalized predictive shares
    est = BayesianAdditiveModel(beta_r=0.002, beta_e=0.002, noise_v=0.01)
    assert est.fit(ds) is est
    mean, sd = est.predict(ds, return_std=True)
    assert mean.shape == (len(ds),) and np.all(sd > 0)
    assert est.converged_ and np.isfinite(est.log_evidence_)
    assert est.score(ds) > 0.5
    assert est.score(ds) > BayesianAdditiveModel().fit(ds).score(ds)
    rm, rv, em, ev = est.decompose()
    assert rm.shape == (len(ds),) and em.shape == (len(ds.owner),)


def test_get_set_params_and_clone():
    est = BayesianAdditiveModel(likelihood="poisson", damping=0.3)
    params = est.get_params()
    assert params["likelihood"] == "poisson" and params["damping"] == 0.3
    c = clone(est)
    assert c.get_params() == params
    c.set_params(damping=0.7)
    assert c.damping == 0.7 and est.damping == 0.3


def test_unfitted_raises(toy_small):
    with pytest.raises(NotFittedError):
        BayesianAdditiveModel().predict(toy_small[0])


def test_explicit_targets(toy_small):
    ds = toy_small[0]
    a = BayesianAdditiveModel().fit(ds)
    b = BayesianAdditiveModel().fit(ds, ds.y)
    np.testing.assert_array_equal(a.predict(ds), b.predict(ds))
    with pytest.raises(ValueError):
        BayesianAdditiveModel().fit(ds, ds.y[:-1])


def test_with_hyperopt():
    ds, _ = generate_toy(25, seed=0)
    est = BayesianAdditiveModel(optimize=True, opt_config=OptConfig(n_restarts=1, max_evals=15)).fit(ds)
    assert est.opt_result_.log_evidence >= est.opt_result_.init_log_evidence
    assert est.hyperparams_ == est.opt_result_.hyperparams
