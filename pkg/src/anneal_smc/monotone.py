"""Monotone piecewise-cubic Hermite interpolation (Fritsch-Carlson)."""

from __future__ import annotations

import numpy as np

__all__ = ["MonotoneCubic"]


class MonotoneCubic:
    """Monotone cubic interpolant through strictly increasing knots ``x``.

    Slopes start from three-point (centred secant) estimates and are limited
    so that ``alpha^2 + beta^2 <= 9`` on every interval, which keeps the
    interpolant monotone wherever the data are.  Outside ``[x[0], x[-1]]`` the
    end values are held constant.

    References
    ----------
    F. N. Fritsch and R. E. Carlson, "Monotone piecewise cubic interpolation",
    SIAM J. Numer. Anal. 17(2), 1980.
    """

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or len(x) < 2:
            raise ValueError("need matching 1-d knot arrays with at least two points")
        h = np.diff(x)
        if np.any(h <= 0):
            raise ValueError("knot abscissae must be strictly increasing")
        delta = np.diff(y) / h
        m = np.empty_like(x)
        m[0], m[-1] = delta[0], delta[-1]
        m[1:-1] = 0.5 * (delta[:-1] + delta[1:])
        # Local extrema or flat intervals get zero slope.
        flat = np.zeros(len(x), dtype=bool)
        flat[1:-1] = np.sign(delta[:-1]) * np.sign(delta[1:]) <= 0
        m[flat] = 0.0
        for k in range(len(delta)):
            if delta[k] == 0.0:
                m[k] = m[k + 1] = 0.0
                continue
            # alpha^2 + beta^2 > 9 written without dividing by a tiny secant.
            r = np.hypot(m[k], m[k + 1])
            if r > 3.0 * abs(delta[k]):
                tau = 3.0 * abs(delta[k]) / r
                m[k] *= tau
                m[k + 1] *= tau
        self.x, self.y, self.slopes = x, y, m
        self._h = h

    def _locate(self, t):
        t = np.clip(np.asarray(t, dtype=float), self.x[0], self.x[-1])
        k = np.clip(np.searchsorted(self.x, t, side="right") - 1, 0, len(self._h) - 1)
        h = self._h[k]
        s = (t - self.x[k]) / h
        return k, h, s

    def __call__(self, t):
        k, h, s = self._locate(t)
        s2, s3 = s * s, s * s * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        y0, y1 = self.y[k], self.y[k + 1]
        return h00 * y0 + h10 * h * self.slopes[k] + h01 * y1 + h11 * h * self.slopes[k + 1]

    def derivative(self, t):
        k, h, s = self._locate(t)
        s2 = s * s
        d00 = (6 * s2 - 6 * s) / h
        d10 = 3 * s2 - 4 * s + 1
        d01 = (-6 * s2 + 6 * s) / h
        d11 = 3 * s2 - 2 * s
        y0, y1 = self.y[k], self.y[k + 1]
        return d00 * y0 + d10 * self.slopes[k] + d01 * y1 + d11 * self.slopes[k + 1]
