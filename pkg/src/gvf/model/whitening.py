"""ZCA whitening of concatenated modality inputs."""

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError

RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    mean: np.ndarray
    matrix: np.ndarray
    input_slices: tuple
    residual_delta: float
    regularized: bool = False

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.mean.shape[0]:
            raise ValidationError(f"expected {self.mean.shape[0]} input columns, got {X.shape[-1]}")
        return (X - self.mean) @ self.matrix.T

    def residual(self, X):
        """Frobenius norm of the cross-block covariance after whitening."""
        return cross_block_residual(self.apply(X), self.input_slices)

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "matrix": self.matrix.tolist(),
            "input_slices": [[s.start, s.stop] for s in self.input_slices],
            "residual_delta": self.residual_delta,
            "regularized": self.regularized,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["mean"], float),
            np.asarray(d["matrix"], float),
            tuple(slice(a, b) for a, b in d["input_slices"]),
            float(d["residual_delta"]),
            bool(d.get("regularized", False)),
        )

    @classmethod
    def identity(cls, bundle):
        d = bundle.input_dim
        return cls(np.zeros(d), np.eye(d), tuple(bundle.input_slices), 0.0)


def cross_block_residual(Xw, slices):
    C = Xw.T @ Xw / len(Xw) - np.eye(Xw.shape[1])
    mask = np.ones_like(C, dtype=bool)
    for s in slices:
        mask[s, s] = False
    return float(np.linalg.norm(C[mask]))


def whiten_fit(X, bundle, holdout=0.25):
    """Fit a symmetric (ZCA) whitening transform on calibration rows.

    The last ``holdout`` fraction of rows is held out to measure the
    cross-block residual. A rank-deficient covariance gets
    ``1e-6 * trace / dim`` added to its diagonal and is flagged.
    """
    X = np.asarray(X, dtype=float)
    d = bundle.input_dim
    if X.ndim != 2 or X.shape[1] != d:
        raise ValidationError(f"calibration data must have {d} columns")
    if len(X) < 2 * d:
        raise ValidationError(f"need at least {2 * d} calibration rows, got {len(X)}")
    n_hold = int(len(X) * holdout) if len(X) - int(len(X) * holdout) >= 2 * d else 0
    fit, held = (X[: len(X) - n_hold], X[len(X) - n_hold :]) if n_hold else (X, X)

    mean = fit.mean(axis=0)
    C = (fit - mean).T @ (fit - mean) / len(fit)
    evals, evecs = np.linalg.eigh(C)
    regularized = bool(evals[0] <= RANK_RTOL * max(evals[-1], 0.0) or evals[0] <= 0)
    if regularized:
        C = C + 1e-6 * np.trace(C) / d * np.eye(d)
        evals, evecs = np.linalg.eigh(C)
    if evals[0] <= 0:
        raise ValidationError("calibration covariance is identically zero")
    W = (evecs / np.sqrt(evals)) @ evecs.T
    W = (W + W.T) / 2
    slices = tuple(bundle.input_slices)
    delta = cross_block_residual((held - mean) @ W.T, slices)
    return WhiteningTransform(mean, W, slices, delta, regularized)
