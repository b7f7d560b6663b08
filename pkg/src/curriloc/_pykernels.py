"""Pure numpy implementations of the hot kernels (fallback backend)."""
import numpy as np


def nearest_index(query, matrix, candidates=None, metric="euclidean"):
    """Exhaustive scan; returns ``(row, score)`` with ties going to the lowest row.

    ``score`` is the Euclidean distance, or the dot product for ``"cosine"``.
    ``candidates`` restricts the scan to an ascending array of row indices.
    """
    rows = matrix if candidates is None else matrix[candidates]
    if rows.shape[0] == 0:
        raise ValueError("nothing to search")
    if metric == "euclidean":
        d2 = np.sum((rows - query) ** 2, axis=1)
        k = int(np.argmin(d2))
        score = float(np.sqrt(d2[k]))
    elif metric == "cosine":
        dots = rows @ query
        k = int(np.argmax(dots))
        score = float(dots[k])
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if candidates is not None:
        k = int(candidates[k])
    return k, score


def circular_box_blur(img, kernel):
    """Row-wise mean over ``kernel`` columns centred on each pixel, wrapping
    horizontally, rounded half-to-even back to uint8."""
    half = kernel // 2
    src = img.astype(np.int64)
    padded = np.pad(src, ((0, 0), (half, half)), mode="wrap")
    csum = np.concatenate([np.zeros((src.shape[0], 1), np.int64), np.cumsum(padded, axis=1)], axis=1)
    window = csum[:, kernel:] - csum[:, :-kernel]
    return np.rint(window / kernel).astype(np.uint8)
