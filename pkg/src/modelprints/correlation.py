"""Correlation analysis: how distinct are the recovered fingerprints?

The central object is an M x M matrix whose (i, j) entry is the average
absolute Pearson correlation between held-out codes of model i and the
fingerprint of model j. A diagonal-dominant matrix means fingerprints are
both stable (diagonal high) and distinctive (off-diagonal low).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


def abs_pearson(u, v) -> float:
    """Absolute Pearson correlation of two equal-length vectors, in [0, 1]."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    if u.size < 2:
        raise ValueError("correlation needs length >= 2")
    du = u - u.mean()
    dv = v - v.mean()
    nu = np.sqrt(np.dot(du, du))
    nv = np.sqrt(np.dot(dv, dv))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("zero variance")
    return min(abs(float(np.dot(du, dv) / (nu * nv))), 1.0)


@dataclass
class CorrelationMatrix:
    matrix: np.ndarray  # (M, M), entries in [0, 1]
    model_ids: list
    codes_per_model: list  # N held-out codes behind each row

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        m = len(self.model_ids)
        if self.matrix.shape != (m, m):
            raise ValueError(f"matrix {self.matrix.shape} does not match "
                             f"{m} model ids")
        if np.any(self.matrix < 0) or np.any(self.matrix > 1):
            raise ValueError("correlation entries must lie in [0, 1]")


def correlation_matrix(fingerprints, codes_by_model) -> CorrelationMatrix:
    """Entry (i, j) = mean over model-i held-out codes of |corr(code, fp_j)|.

    ``fingerprints`` is an ordered mapping model_id -> vector (codes and
    fingerprints must share one flattened shape: code vectors against
    encoder fingerprints, flattened residuals against raster ones).
    A constant code or fingerprint scores 0 with a warning: a constant
    carries no fingerprint signal.
    """
    model_ids = list(fingerprints)
    if set(codes_by_model) != set(model_ids):
        raise ValueError("fingerprints and held-out codes name different models")
    fps = [np.asarray(fingerprints[m], dtype=np.float64).ravel() for m in model_ids]
    dim = {f.size for f in fps}
    if len(dim) != 1:
        raise ValueError("fingerprints have mixed shapes (kind mismatch?)")
    out = np.zeros((len(model_ids), len(model_ids)))
    counts = []
    for i, mi in enumerate(model_ids):
        codes = np.asarray(codes_by_model[mi], dtype=np.float64)
        codes = codes.reshape(codes.shape[0], -1)
        if codes.shape[0] < 1:
            raise ValueError(f"model {mi} has no held-out codes")
        if codes.shape[1] != fps[0].size:
            raise ValueError(f"model {mi}: code length {codes.shape[1]} != "
                             f"fingerprint length {fps[0].size} (kind mismatch?)")
        counts.append(codes.shape[0])
        for j in range(len(model_ids)):
            vals = []
            for row in codes:
                try:
                    vals.append(abs_pearson(row, fps[j]))
                except ValueError:
                    warnings.warn(f"constant vector in ({mi}, {model_ids[j]}) "
                                  "correlation; scoring 0")
                    vals.append(0.0)
            out[i, j] = float(np.mean(vals))
    return CorrelationMatrix(matrix=out, model_ids=model_ids, codes_per_model=counts)


def _as_square(rho):
    m = rho.matrix if isinstance(rho, CorrelationMatrix) else np.asarray(rho, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return m


def decorrelation_score(rho) -> float:
    """(1/M^2) * Frobenius norm of (rho - I); 0 when rho is the identity."""
    m = _as_square(rho)
    M = m.shape[0]
    return float(np.linalg.norm(m - np.eye(M), ord="fro") / (M * M))


def separation(rho) -> float:
    """mean(diagonal) - mean(off-diagonal); unambiguously higher-is-better."""
    m = _as_square(rho)
    M = m.shape[0]
    if M < 2:
        raise ValueError("separation needs at least 2 models")
    diag = float(np.trace(m) / M)
    off = float((m.sum() - np.trace(m)) / (M * (M - 1)))
    return diag - off


def distinctiveness_summary(rho) -> dict:
    """Both scalar summaries of one correlation matrix."""
    return {"decorrelation_score": decorrelation_score(rho), "separation": separation(rho)}


def fingerprint_distance_matrix(fingerprints) -> np.ndarray:
    """Pairwise 1 - |corr| distances between fingerprints, zero diagonal.

    ``fingerprints`` is an ordered mapping model_id -> vector. Raises on a
    constant fingerprint, which has no defined correlation with anything.
    """
    vecs = [np.asarray(v, dtype=np.float64).ravel() for v in fingerprints.values()]
    if len(vecs) < 2:
        raise ValueError("need at least 2 fingerprints")
    M = len(vecs)
    out = np.zeros((M, M))
    for i in range(M):
        for j in range(i + 1, M):
            out[i, j] = out[j, i] = 1.0 - abs_pearson(vecs[i], vecs[j])
    return out
