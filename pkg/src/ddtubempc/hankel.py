"""Block-Hankel matrices and persistency-of-excitation checks."""

from __future__ import annotations

import numpy as np

__all__ = ["build_hankel", "is_persistently_exciting"]


def build_hankel(seq: np.ndarray, depth: int) -> np.ndarray:
    """Stack sliding windows of a vector sequence into a block-Hankel matrix.

    Args:
        seq: Sequence of samples, shape ``(length, m)`` (rows are samples).
            A 1-D array of shape ``(length,)`` is treated as ``m = 1``.
        depth: Window length (number of stacked samples per column).

    Returns:
        Array of shape ``(m * depth, length - depth + 1)`` whose column ``j``
        holds samples ``j`` through ``j + depth - 1`` stacked on top of each
        other, one block of ``m`` entries per sample.

    Raises:
        ValueError: If ``depth < 1`` or the sequence has fewer than ``depth``
            samples.

    Example:
        >>> build_hankel(np.array([1., 2., 3., 4.]), 2)
        array([[1., 2., 3.],
               [2., 3., 4.]])
    """
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    if seq.ndim != 2:
        raise ValueError(f"sequence must be 1-D or 2-D, got shape {seq.shape}")
    length, m = seq.shape
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if length < depth:
        raise ValueError(
            f"sequence has {length} samples, need at least depth={depth}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(seq, depth, axis=0)
    # windows: (cols, m, depth) -> columns of stacked samples (depth * m,)
    return windows.transpose(0, 2, 1).reshape(length - depth + 1, depth * m).T.copy()


def is_persistently_exciting(
    seq: np.ndarray, order: int, tol: float | None = None
) -> bool:
    """Check persistency of excitation of a sequence at a given order.

    The sequence is persistently exciting of order ``order`` when its
    block-Hankel matrix of depth ``order`` has full row rank ``m * order``.

    Args:
        seq: Sequence of samples, shape ``(length, m)`` or ``(length,)``.
        order: Excitation order to test (Hankel depth).
        tol: Rank cutoff for singular values.  Defaults to
            ``max(rows, cols) * eps * sigma_max``, the standard numerical
            rank tolerance.

    Returns:
        True when the Hankel matrix of depth ``order`` has rank
        ``m * order``.  A sequence too short to form the Hankel matrix is
        not persistently exciting, so this returns False rather than
        raising.

    Raises:
        ValueError: If ``order < 1``.
    """
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    length, m = seq.shape
    if length < order:
        return False
    H = build_hankel(seq, order)
    rank = np.linalg.matrix_rank(H, tol=tol)
    return bool(rank == m * order)
