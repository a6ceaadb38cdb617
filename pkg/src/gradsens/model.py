"""Response-model contract and the sample record that flows through the engine.

A model maps an i.i.d. standard-normal input vector x to a scalar response y
and, for each declared sensitivity parameter, the derivative of y with respect
to that parameter at the same x.  Evaluation is batched: the engine always
hands the model a (batch, n) block of inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ModelDomainError(RuntimeError):
    """Model-specific domain failure (non-SPD correlation, non-physical state...)."""


@dataclass(frozen=True)
class ModelSpec:
    """Identity of a response model: name, input dimension, parameter values.

    ``params`` holds every named parameter in declaration order;
    ``sensitivity_params`` names the subset gradients are requested for.
    """

    name: str
    input_dim: int
    params: tuple
    sensitivity_params: tuple

    def __post_init__(self):
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        unknown = set(self.sensitivity_params) - set(names)
        if unknown:
            raise ValueError(f"unknown sensitivity parameters: {sorted(unknown)}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")

    def value(self, name: str) -> float:
        for n, v in self.params:
            if n == name:
                return v
        raise KeyError(name)

    @property
    def sensitivity_values(self) -> np.ndarray:
        return np.array([self.value(n) for n in self.sensitivity_params])


@dataclass
class SampleRecord:
    """One input draw with its response and per-parameter response gradients."""

    x: np.ndarray
    y: float
    g: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if not np.isfinite(self.y):
            raise ModelDomainError(f"non-finite response y={self.y}")
        if not np.all(np.isfinite(self.g)):
            raise ModelDomainError("non-finite response gradient")


class ResponseModel:
    """Base class for response models.

    Subclasses must set ``spec`` and implement ``response_batch``; models with
    analytic gradients override ``evaluate_batch``.  ``eager_gradients`` tells
    the sampling engine whether gradients come essentially for free with the
    response (analytic models) or are expensive and should be computed only
    for samples that will be kept (finite-difference models).
    """

    spec: ModelSpec
    eager_gradients = True
    analytic_gradients = True
    fd_rel_step = 1e-3
    response_unit = "-"

    def response_batch(self, x: np.ndarray, **overrides) -> np.ndarray:
        """Responses for a (batch, n) input block.

        Keyword overrides replace named parameter values for this call only;
        models use them for finite differences and perturbation benchmarks.
        """
        raise NotImplementedError

    def gradient_batch(self, x: np.ndarray) -> np.ndarray:
        """(batch, n_params) gradients; default is central finite differences."""
        return fd_gradient_batch(self, x, self.fd_rel_step)

    def evaluate_batch(self, x: np.ndarray):
        """(y, g) for a (batch, n) input block."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.response_batch(x), self.gradient_batch(x)

    def param_unit(self, name: str) -> str:
        return "-"


def evaluate(model: ResponseModel, x) -> SampleRecord:
    """Evaluate one input vector: response plus all declared gradients."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.spec.input_dim,):
        raise ValueError(f"expected input of shape ({model.spec.input_dim},)")
    y, g = model.evaluate_batch(x[None, :])
    return SampleRecord(x=x, y=float(y[0]), g=g[0])


def fd_gradient_batch(model: ResponseModel, x: np.ndarray, rel_step: float) -> np.ndarray:
    """Central-difference gradients in each sensitivity parameter.

    g_j = [f(x, a_j (1+h)) - f(x, a_j (1-h))] / (2 a_j h).  A parameter whose
    nominal value is exactly zero falls back to the absolute step h * 1.0.
    """
    if not rel_step > 0.0:
        raise ValueError("rel_step must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cols = []
    for name in model.spec.sensitivity_params:
        v = model.spec.value(name)
        if v != 0.0:
            hi = model.response_batch(x, **{name: v * (1.0 + rel_step)})
            lo = model.response_batch(x, **{name: v * (1.0 - rel_step)})
            cols.append((hi - lo) / (2.0 * v * rel_step))
        else:
            hi = model.response_batch(x, **{name: rel_step})
            lo = model.response_batch(x, **{name: -rel_step})
            cols.append((hi - lo) / (2.0 * rel_step))
    return np.stack(cols, axis=1)


def evaluate_fd_gradient(model: ResponseModel, x, rel_step: float) -> SampleRecord:
    """Like ``evaluate`` but with finite-difference gradients at the given step."""
    x = np.asarray(x, dtype=float)
    y = model.response_batch(x[None, :])
    g = fd_gradient_batch(model, x[None, :], rel_step)
    return SampleRecord(x=x, y=float(y[0]), g=g[0])
