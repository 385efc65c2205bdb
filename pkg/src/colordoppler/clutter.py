"""SVD clutter filtering and slow-time decimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import IQEnsemble


@dataclass(frozen=True)
class SlowTimeSVD:
    """Right singular vectors of the ``(h*w) x n`` Casorati matrix.

    ``singular_values`` are sorted in decreasing order and the columns of
    ``vectors`` follow; each column is rotated so that its first nonzero
    entry is real and positive.
    """

    singular_values: np.ndarray
    vectors: np.ndarray


def casorati(iq: IQEnsemble) -> np.ndarray:
    n, h, w = iq.shape
    return iq.data.reshape(n, h * w).T.astype(np.complex128)


def slow_time_svd(iq: IQEnsemble) -> SlowTimeSVD:
    """Eigen-decomposition of the ``n x n`` Gram matrix ``C^H C``.

    The Casorati matrix is tall and skinny, so this costs ``O(h w n^2)``.
    """
    c = casorati(iq)
    gram = c.conj().T @ c
    eigval, eigvec = np.linalg.eigh(gram)
    order = np.argsort(eigval, kind="stable")[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]
    for col in range(eigvec.shape[1]):
        v = eigvec[:, col]
        lead = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
        eigvec[:, col] = v * (np.conj(lead) / abs(lead))
    return SlowTimeSVD(np.sqrt(np.maximum(eigval, 0.0)), eigvec)


def split_clutter(iq: IQEnsemble, discard_count: int) -> tuple[IQEnsemble, IQEnsemble]:
    """Return ``(blood, clutter)``: projections off and onto the top singular subspace."""
    n = iq.shape[0]
    if not 1 <= discard_count < n:
        raise ValueError(f"discard_count must satisfy 1 <= k < n={n}, got {discard_count}")
    c = casorati(iq)
    v = slow_time_svd(iq).vectors[:, :discard_count]
    clutter = (c @ v) @ v.conj().T
    blood = c - clutter
    shape = iq.shape
    return (
        iq.with_data(blood.T.reshape(shape)),
        iq.with_data(clutter.T.reshape(shape)),
    )


def casorati_svd_filter(iq: IQEnsemble, discard_count: int) -> IQEnsemble:
    """Remove the ``discard_count`` largest singular components of the ensemble."""
    return split_clutter(iq, discard_count)[0]


def slow_time_subsample(iq: IQEnsemble, stride: int) -> IQEnsemble:
    """Keep frames ``0, s, 2s, ...``; the PRF (and Nyquist velocity) drop by ``s``."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride == 1:
        return iq
    count = iq.shape[0] // stride
    data = iq.data[: count * stride : stride]
    if count < 2:
        raise ValueError(f"stride {stride} leaves fewer than two frames out of {iq.shape[0]}")
    return iq.with_data(data, prf_hz=iq.params.prf_hz / stride)
