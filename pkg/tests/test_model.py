import numpy as np
import pytest

from gradsens.model import (ModelDomainError, ModelSpec, ResponseModel, SampleRecord,
                            evaluate, evaluate_fd_gradient, fd_gradient_batch)
from gradsens.numkit import RngStream
from gradsens.responses import NormalResponse


class QuadraticModel(ResponseModel):
    """f = alpha^2, independent of x; central differences are exact here."""

    analytic_gradients = False

    def __init__(self, alpha=3.0):
        self.alpha = alpha
        self.spec = ModelSpec(name="quadratic", input_dim=1,
                              params=(("alpha", alpha),), sensitivity_params=("alpha",))

    def response_batch(self, x, alpha=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = self.alpha if alpha is None else alpha
        return np.full(x.shape[0], a * a)


class ShiftModel(ResponseModel):
    """f = x1 + used; 'unused' is a declared parameter with no effect."""

    def __init__(self, used=2.0, unused=0.0):
        self.used, self.unused = used, unused
        self.spec = ModelSpec(name="shift", input_dim=1,
                              params=(("used", used), ("unused", unused)),
                              sensitivity_params=("used", "unused"))

    def response_batch(self, x, used=None, unused=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, 0] + (self.used if used is None else used)


def test_evaluate_normal_at_origin():
    rec = evaluate(NormalResponse(), np.zeros(2))
    assert rec.y == 1.0
    assert np.array_equal(rec.g, [1.0, 0.0, 0.0])


def test_evaluate_shape_check():
    with pytest.raises(ValueError):
        evaluate(NormalResponse(), np.zeros(3))


def test_evaluate_deterministic():
    m = NormalResponse()
    x = RngStream(3).standard_normal(2)
    r1, r2 = evaluate(m, x), evaluate(m, x)
    assert r1.y == r2.y
    assert np.array_equal(r1.g, r2.g)


def test_fd_linear_parameter_exact():
    # response linear in loc: derivative 1 to roundoff
    rec = evaluate_fd_gradient(NormalResponse(), np.array([0.3, -1.2]), 1e-5)
    assert rec.g[0] == pytest.approx(1.0, abs=1e-8)


def test_fd_quadratic_exact():
    rec = evaluate_fd_gradient(QuadraticModel(alpha=3.0), np.zeros(1), 1e-3)
    assert rec.g[0] == pytest.approx(6.0, rel=1e-12)


def test_fd_unused_parameter_zero_and_zero_value_fallback():
    m = ShiftModel(used=2.0, unused=0.0)
    g = fd_gradient_batch(m, np.array([[0.7]]), 1e-3)
    assert g[0, 0] == pytest.approx(1.0, rel=1e-9)
    # 'unused' has nominal value 0: absolute-step fallback, exact cancellation
    assert g[0, 1] == 0.0


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        fd_gradient_batch(ShiftModel(), np.array([[0.0]]), 0.0)


def test_fd_matches_analytic_normal():
    m = NormalResponse()
    x = RngStream(5).standard_normal((100, 2))
    _, g = m.evaluate_batch(x)
    g_fd = fd_gradient_batch(m, x, 1e-5)
    assert np.allclose(g_fd, g, rtol=1e-3, atol=1e-6)


def test_sample_record_rejects_nonfinite():
    with pytest.raises(ModelDomainError):
        SampleRecord(x=np.zeros(1), y=float("nan"), g=np.zeros(1))
    with pytest.raises(ModelDomainError):
        SampleRecord(x=np.zeros(1), y=0.0, g=np.array([float("inf")]))


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(name="dup", input_dim=1, params=(("a", 1.0), ("a", 2.0)),
                  sensitivity_params=("a",))
    with pytest.raises(ValueError):
        ModelSpec(name="missing", input_dim=1, params=(("a", 1.0),),
                  sensitivity_params=("b",))
