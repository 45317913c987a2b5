"""Consistency-based estimators over a similarity matrix of sampled answers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..types import DataError, SampleSet

# Eigenvectors at or above this eigenvalue are not used as answer embeddings.
ECCENTRICITY_EIG_CUTOFF = 0.9


def lexical_similarity_score(matrix: np.ndarray) -> float:
    n = matrix.shape[0]
    if n < 2:
        raise ValueError("needs ≥ 2 samples")
    off = matrix[~np.eye(n, dtype=bool)]
    return float(1.0 - off.mean())


def components(matrix: np.ndarray, theta: float = 0.5) -> list[int]:
    """Cluster label per sample: connected components of ``matrix >= theta``."""
    n = matrix.shape[0]
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if matrix[i, j] >= theta:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    roots = [find(i) for i in range(n)]
    relabel = {r: k for k, r in enumerate(dict.fromkeys(roots))}
    return [relabel[r] for r in roots]


def num_sem_sets(matrix: np.ndarray, theta: float = 0.5) -> float:
    return float(len(set(components(matrix, theta))))


def deg_mat_score(matrix: np.ndarray) -> float:
    n = matrix.shape[0]
    return float((1.0 - matrix).sum() / n**2)


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def laplacian_spectrum(matrix: np.ndarray) -> Spectrum:
    """Eigen-decomposition of ``I - D^-1/2 M D^-1/2``, eigenvalues ascending."""
    m = 0.5 * (matrix + matrix.T)
    deg = m.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("similarity graph has a zero-degree node")
    inv = 1.0 / np.sqrt(deg)
    lap = np.eye(len(m)) - inv[:, None] * m * inv[None, :]
    vals, vecs = np.linalg.eigh(lap)
    # eigh leaves ~1e-16 residue on exactly degenerate spectra; snap it
    near = np.abs(vals - np.round(vals)) < 1e-9
    vals = np.where(near, np.round(vals), vals)
    return Spectrum(np.clip(vals, 0.0, 2.0), vecs)


def eig_val_laplacian_score(spectrum: Spectrum) -> float:
    return float(np.maximum(0.0, 1.0 - spectrum.eigenvalues).sum())


def eccentricity_score(spectrum: Spectrum, k: int | None = None) -> float:
    """Frobenius norm of the spectral embeddings' offsets from their centroid.

    Embeddings are rows of the ``k`` lowest eigenvectors, keeping only those
    with eigenvalue below ``ECCENTRICITY_EIG_CUTOFF`` so that a degenerate
    eigenvalue-1 subspace never contributes an arbitrary basis.
    """
    n = len(spectrum.eigenvalues)
    k = min(2, n) if k is None else k
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    keep = [i for i in range(k) if spectrum.eigenvalues[i] < ECCENTRICITY_EIG_CUTOFF] or [0]
    emb = spectrum.eigenvectors[:, keep]
    offsets = emb - emb.mean(axis=0, keepdims=True)
    return float(np.linalg.norm(offsets))


def semantic_entropy(samples: SampleSet, matrix: np.ndarray, theta: float = 0.5) -> float:
    """Entropy of probability mass pooled per semantic cluster."""
    logp = np.array([s.total_logprob for s in samples.samples], dtype=float)
    if not np.isfinite(logp).any():
        raise DataError("degenerate probabilities")
    labels = np.array(components(matrix, theta))
    total = logsumexp(logp)
    ent = 0.0
    for c in np.unique(labels):
        logq = logsumexp(logp[labels == c]) - total
        if np.isfinite(logq):
            ent -= math.exp(logq) * logq
    return float(max(ent, 0.0))
