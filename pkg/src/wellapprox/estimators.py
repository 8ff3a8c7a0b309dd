"""scikit-learn style wrappers.

``fit`` takes a :class:`~wellapprox.approx_core.ProblemInstance` (or its JSON
dict) in place of a data matrix; ``transform`` maps points or frequencies.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .approx_core import (
    ProblemInstance,
    convergence_hypothesis,
    estimate_exponent,
    fourier_dimension,
    hausdorff_dimension,
    instance_from_dict,
)
from .divisors import scale_set_Q_prime
from .measure_builder import build_measure, witness_grid
from .torus_spectrum import default_order, fm_direct, fm_spectrum, make_bspline_bump


def _as_instance(X) -> ProblemInstance:
    if isinstance(X, ProblemInstance):
        return X
    if isinstance(X, dict):
        return instance_from_dict(X)
    raise TypeError("fit expects a ProblemInstance or an instance dict")


class DimensionEstimator(BaseEstimator):
    """Critical exponents and the two dimension formulas for one instance."""

    def __init__(self, tol: float = 1e-3, radii=None):
        self.tol = tol
        self.radii = radii

    def fit(self, X, y=None):
        inst = _as_instance(X)
        R = self.radii[-1] if self.radii else None
        self.s_ = estimate_exponent(inst.Q, inst.psi, "s", tol=self.tol, R_schedule=self.radii)
        self.eta_ = estimate_exponent(inst.Q, inst.psi, "eta", m=inst.m, tol=self.tol, R_schedule=self.radii)
        self.convergence_ = convergence_hypothesis(inst, R)
        self.dim_F_ = fourier_dimension(inst, self.s_, R)
        self.dim_H_ = hausdorff_dimension(inst, self.eta_)
        return self


class SingleScaleSpectrum(TransformerMixin, BaseEstimator):
    """``F_M`` at one scale; ``transform`` evaluates it at points of ``R^{mn}``."""

    def __init__(self, s: float = 0.45, M: float = 128.0, Lambda: int = 256, K=None, c: float = 0.9):
        self.s = s
        self.M = M
        self.Lambda = Lambda
        self.K = K
        self.c = c

    def fit(self, X, y=None):
        inst = _as_instance(X)
        K = self.K if self.K is not None else default_order(inst.mn, self.s)
        self.instance_ = inst
        self.phi_ = make_bspline_bump(inst.m, K, self.c)
        self.qprime_ = scale_set_Q_prime(inst.Q, inst.psi, self.s, self.M, inst.m, inst.n)
        self.spectrum_ = fm_spectrum(self.qprime_, self.phi_, inst.psi, inst.theta, self.Lambda, inst.m)
        return self

    def transform(self, X):
        check_is_fitted(self, "spectrum_")
        inst = self.instance_
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != inst.mn:
            raise ValueError(f"points must have {inst.mn} coordinates")
        return fm_direct(X, self.qprime_, self.phi_, inst.psi, inst.theta, inst.m)[:, None]


class SalemMeasure(TransformerMixin, BaseEstimator):
    """Finite-stage measure ``mu_k``; ``transform`` returns ``|mu_hat_k|`` at frequencies."""

    def __init__(self, s: float = 0.45, k_max: int = 2, K=None, c: float = 0.9, k_cap: int = 14, witness_radius: int = 1024, seed: int = 0):
        self.s = s
        self.k_max = k_max
        self.K = K
        self.c = c
        self.k_cap = k_cap
        self.witness_radius = witness_radius
        self.seed = seed

    def fit(self, X, y=None):
        inst = _as_instance(X)
        K = self.K if self.K is not None else default_order(inst.mn, self.s)
        phi = make_bspline_bump(inst.m, K, self.c)
        f0 = make_bspline_bump(inst.mn, K, self.c)
        grid = witness_grid(inst.mn, self.witness_radius, seed=self.seed)
        self.stage_ = build_measure(self.k_max, inst, self.s, phi, f0, grid=grid, k_cap=self.k_cap)
        self.scales_ = list(self.stage_.scales)
        self.mass_ = self.stage_.measure.mass()
        return self

    def transform(self, X):
        check_is_fitted(self, "stage_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.stage_.f0.dim:
            raise ValueError(f"frequencies must have {self.stage_.f0.dim} coordinates")
        return np.abs(self.stage_.measure.values(X))[:, None]
