"""Four-state dyad distribution and its cumulants.

A dyad ``{i, j}`` has states ``(g_ij, g_ji)`` in ``{00, 10, 01, 11}`` with
weights ``exp(g_ij*B1 + g_ji*B2 + g_ij*g_ji*C)``.  The sufficient statistics
are ``s = (g_ij, g_ji, g_ij*g_ji)``, indexed 0, 1, 2 below.  Because the log
normaliser is the cumulant generating function of ``s`` in ``(B1, B2, C)``,

    d p_a / d v_b          = k2(a, b)
    d^2 p_a / d v_b d v_c  = k3(a, b, c)

and so on, where ``p = (p_ij, p_ji, p11)`` are the means.  Every derivative the
package needs is read from these cumulants, so there is a single audited
source for them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# statistic values per state, rows: states 00, 10, 01, 11
_STATES = np.array([[0.0, 0.0, 0.0],
                    [1.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0],
                    [1.0, 1.0, 1.0]])


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class DyadProbs:
    pi00: float
    pi10: float
    pi01: float
    pi11: float

    @property
    def p_ij(self) -> float:
        return self.pi10 + self.pi11

    @property
    def p_ji(self) -> float:
        return self.pi01 + self.pi11

    @property
    def p11(self) -> float:
        return self.pi11


def log_weights(B1, B2, C):
    B1, B2, C = np.broadcast_arrays(np.asarray(B1, float), np.asarray(B2, float),
                                    np.asarray(C, float))
    return np.stack([np.zeros_like(B1), B1, B2, B1 + B2 + C])


def state_probs(B1, B2, C):
    """Return ``(pi, logK)`` with ``pi`` of shape ``(4, ...)``.

    The normaliser is computed with the largest exponent factored out so
    indices of several hundred stay accurate.
    """
    e = log_weights(B1, B2, C)
    m = e.max(axis=0)
    w = np.exp(e - m)
    s = w.sum(axis=0)
    return w / s, m + np.log(s)


def dyad_probs(B_ij: float, B_ji: float, C_ij: float) -> DyadProbs:
    vals = np.array([B_ij, B_ji, C_ij], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise KernelError(f"non-finite dyad index {vals}")
    pi, _ = state_probs(*vals)
    return DyadProbs(*(float(v) for v in pi))


class DyadMoments:
    """Means and central cumulants of the dyad statistics, elementwise.

    ``B1``, ``B2`` and ``C`` may be arrays of any common shape; the usual use
    is an ``(n, n)`` grid where entry ``[i, j]`` is read in the frame of the
    ordered pair ``(i, j)`` (``B1 = B_ij``, ``B2 = B_ji``).
    """

    def __init__(self, B1, B2, C):
        self.pi, self.logK = state_probs(B1, B2, C)
        # mean of each statistic: (3, ...)
        self.mean = np.einsum("s...,sa->a...", self.pi, _STATES)
        # centred statistic per state: (4, 3, ...)
        self._c = _STATES.reshape(4, 3, *([1] * self.logK.ndim)) - self.mean[None]
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    @property
    def p(self):
        """Marginal probability of the forward link, ``p_ij``."""
        return self.mean[0]

    @property
    def q(self):
        """Marginal probability of the reverse link, ``p_ji``."""
        return self.mean[1]

    @property
    def p11(self):
        return self.mean[2]

    def _moment(self, idx):
        prod = self.pi
        for a in idx:
            prod = prod * self._c[:, a]
        return prod.sum(axis=0)

    def cum(self, *idx: int) -> np.ndarray:
        """Joint cumulant of order 2, 3 or 4 of the listed statistics."""
        key = tuple(sorted(idx))
        if key in self._cache:
            return self._cache[key]
        k = len(key)
        if k in (2, 3):
            out = self._moment(key)
        elif k == 4:
            a, b, c, d = key
            out = self._moment(key)
            for (x, y), (u, v) in (((a, b), (c, d)), ((a, c), (b, d)), ((a, d), (b, c))):
                out = out - self._moment((x, y)) * self._moment((u, v))
        else:
            raise ValueError("cumulant order must be 2, 3 or 4")
        self._cache[key] = out
        return out

    def jacobian(self) -> np.ndarray:
        """``d(p_ij, p_ji, p11) / d(B1, B2, C)`` as a ``(3, 3, ...)`` array."""
        return np.stack([np.stack([self.cum(a, b) for b in range(3)]) for a in range(3)])


class BernoulliMoments:
    """Cumulants of a single logistic link, used by the undirected model."""

    def __init__(self, A):
        A = np.asarray(A, float)
        self.logK = np.logaddexp(0.0, A)
        self.p = np.exp(A - self.logK)
        self._v = self.p * (1.0 - self.p)

    def cum(self, order: int) -> np.ndarray:
        p, v = self.p, self._v
        if order == 2:
            return v
        if order == 3:
            return v * (1.0 - 2.0 * p)
        if order == 4:
            return v * (1.0 - 6.0 * v)
        raise ValueError("cumulant order must be 2, 3 or 4")
