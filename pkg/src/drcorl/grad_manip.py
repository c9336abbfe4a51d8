"""Combining a reward-ascent and a cost-ascent direction into one step.

Aligned gradients (positive inner product) are averaged. Conflicting ones
(angle of 90 degrees or more) are each projected onto the orthogonal
complement of the other before averaging, so the combined step does not
descend either objective. A gradient whose squared norm is 0 in floating
point counts as zero, and a zero gradient counts as aligned.
"""

from __future__ import annotations

import numpy as np


def _pair(g_r, g_c):
    g_r = np.asarray(g_r, dtype=np.float64).ravel()
    g_c = np.asarray(g_c, dtype=np.float64).ravel()
    if g_r.shape != g_c.shape:
        raise ValueError(f"gradient dimensions differ: {g_r.size} vs {g_c.size}")
    return g_r, g_c


def angle(g_r, g_c):
    """Angle between the two gradients in degrees (0 if either is zero)."""
    g_r, g_c = _pair(g_r, g_c)
    nr, nc = np.linalg.norm(g_r), np.linalg.norm(g_c)
    if nr == 0.0 or nc == 0.0:
        return 0.0
    cos = np.clip(g_r @ g_c / (nr * nc), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def is_conflicting(g_r, g_c):
    g_r, g_c = _pair(g_r, g_c)
    # a squared norm that underflows counts as zero
    if g_r @ g_r == 0.0 or g_c @ g_c == 0.0:
        return False
    return bool(g_r @ g_c <= 0.0)


def project_out(g, direction):
    """Component of g orthogonal to `direction` (g itself if direction is 0)."""
    nn = direction @ direction
    if nn == 0.0:
        return g
    return g - (g @ direction) / nn * direction


def combine(g_r, g_c):
    g_r, g_c = _pair(g_r, g_c)
    if not is_conflicting(g_r, g_c):
        return 0.5 * (g_r + g_c)
    return 0.5 * (project_out(g_r, g_c) + project_out(g_c, g_r))


def conflict_weights(g_r, g_c):
    """Mixture coefficients attached to a conflicting step.

    Returns (w, reward_coef, cost_coef): w = 1/2 - <g_r,g_c>/|g_r|^2 is the
    weight of the iterate in the averaged policy; the other two are
    1/2 - <g_r,g_c>/(2|g_r|^2) and 1/2 - <g_r,g_c>/(2|g_c|^2).
    """
    g_r, g_c = _pair(g_r, g_c)
    dot = g_r @ g_c
    nr2, nc2 = g_r @ g_r, g_c @ g_c
    return (0.5 - dot / nr2, 0.5 - dot / (2.0 * nr2), 0.5 - dot / (2.0 * nc2))
