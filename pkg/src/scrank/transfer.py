"""Monotone soft-threshold functions and the integrals of their inverses.

Every function here is strictly increasing and smooth on the whole real line
with range inside ``[lo, hi]``. Besides evaluation each exposes

* ``inverse(y)``: the quantile-style inverse on ``[lo, hi]``,
* ``inverse_integral(y)``: ``G(y)``, the integral of the inverse from the
  reference point ``clip(0, lo, hi)`` to ``y``, in closed form,
* ``lipschitz``: the global maximum of the derivative,
* ``drop(y_old, y_new, x)``: ``G(y_old) - G(y_new) - x * (y_old - y_new)``.

``drop`` is the decrease in a potential of the form ``G(y) - x*y`` when ``y``
moves from ``y_old`` to ``y_new`` with the input ``x`` held fixed. Near a
fixed point the two closed-form terms nearly cancel, so for short moves the
integral is evaluated with Gauss-Legendre quadrature in input space instead.

Parameters may be numpy arrays (one entry per vertex); everything broadcasts.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special

SQRT_2PI = math.sqrt(2.0 * math.pi)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
# map [-1, 1] to [0, 1]
_GL_T = (_GL_NODES + 1.0) / 2.0
_GL_W = _GL_WEIGHTS / 2.0


def norm_cdf(z):
    return special.ndtr(z)


def norm_ppf(q):
    return special.ndtri(q)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / SQRT_2PI


class UpdateFunction:
    """Base class; subclasses define the standardized shape."""

    lo: float | np.ndarray
    hi: float | np.ndarray

    def __call__(self, x):
        raise NotImplementedError

    def inverse(self, y):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def inverse_integral(self, y):
        raise NotImplementedError

    @property
    def lipschitz(self) -> float:
        raise NotImplementedError

    @property
    def scale(self):
        """Input-space width over which the derivative changes appreciably."""
        raise NotImplementedError

    @property
    def _ref(self):
        return np.clip(0.0, self.lo, self.hi)

    def _check_range(self, y):
        y = np.asarray(y, dtype=float)
        if np.any((y < self.lo) | (y > self.hi)) or np.any(np.isnan(y)):
            raise ValueError(f"argument outside [{self.lo}, {self.hi}]")
        return y

    def drop(self, y_old, y_new, x):
        y_old = np.asarray(y_old, dtype=float)
        y_new = np.asarray(y_new, dtype=float)
        x = np.asarray(x, dtype=float)
        dy = y_old - y_new
        with np.errstate(invalid="ignore", over="ignore"):
            w_new = self.inverse(y_new)
            w_old = self.inverse(y_old)
            h = w_old - w_new
            short = np.isfinite(h) & (np.abs(h) <= self.scale)
        w_new, h, short, dy, x = np.broadcast_arrays(w_new, h, short, dy, x)
        out = np.empty(w_new.shape)
        if np.any(~short):
            far = ~short
            G_old = np.broadcast_to(self.inverse_integral(y_old), far.shape)
            G_new = np.broadcast_to(self.inverse_integral(y_new), far.shape)
            out[far] = G_old[far] - G_new[far] - x[far] * dy[far]
        if np.any(short):
            hs = h[short][:, None]
            wn = w_new[short][:, None]
            t = _GL_T[None, :] * hs
            # integral over [w_new, w_old] of (w - w_new) F'(w) dw
            f1 = self._derivative_at(t + wn, short)
            quad = (f1 * t * _GL_W[None, :]).sum(axis=1) * hs[:, 0]
            out[short] = quad + (w_new[short] - x[short]) * dy[short]
        return out if out.ndim else float(out)

    def _derivative_at(self, w, mask):
        return self.derivative(w)


def _sel(p, mask, shape):
    """Select per-element parameters for a masked subset (scalars pass through)."""
    if np.ndim(p) == 0:
        return p
    return np.broadcast_to(p, shape)[mask][:, None]


class NormalCDF(UpdateFunction):
    """``lo + (hi - lo) * Phi((x - mu) / sigma)``.

    With the default range ``[0, 1]`` this is the celebrity/spammer transfer
    function; ``kind`` is a free-form tag ("celebrity" or "spammer").
    """

    def __init__(self, mu, sigma, lo=0.0, hi=1.0, kind: str | None = None):
        self.mu = np.asarray(mu, dtype=float) if np.ndim(mu) else float(mu)
        self.sigma = np.asarray(sigma, dtype=float) if np.ndim(sigma) else float(sigma)
        if np.any(np.asarray(self.sigma) <= 0):
            raise ValueError("sigma must be positive")
        if np.any(np.asarray(hi) <= np.asarray(lo)):
            raise ValueError("need lo < hi")
        self.lo = lo
        self.hi = hi
        self.kind = kind

    def __repr__(self) -> str:
        tag = f", kind={self.kind!r}" if self.kind else ""
        return f"NormalCDF(mu={self.mu!r}, sigma={self.sigma!r}{tag})"

    def _span(self):
        return np.asarray(self.hi, dtype=float) - self.lo

    def __call__(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        y = self.lo + self._span() * special.ndtr(z)
        return y if np.ndim(y) else float(y)

    def inverse(self, y):
        u = (np.asarray(y, dtype=float) - self.lo) / self._span()
        return self.mu + self.sigma * special.ndtri(u)

    def derivative(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return self._span() * norm_pdf(z) / self.sigma

    def _derivative_at(self, w, mask):
        shape = mask.shape
        mu = _sel(self.mu, mask, shape)
        sigma = _sel(self.sigma, mask, shape)
        span = _sel(self._span(), mask, shape)
        z = (w - mu) / sigma
        return span * norm_pdf(z) / sigma

    def _phi_at(self, y):
        u = (np.asarray(y, dtype=float) - self.lo) / self._span()
        with np.errstate(invalid="ignore"):
            return norm_pdf(special.ndtri(u))

    def inverse_integral(self, y):
        """``mu*(y - r) - sigma*span*(phi(Phi^-1(u(y))) - phi(Phi^-1(u(r))))``."""
        y = self._check_range(y)
        r = self._ref
        g = self.mu * (y - r) - self.sigma * self._span() * (self._phi_at(y) - self._phi_at(r))
        return g if np.ndim(g) else float(g)

    @property
    def lipschitz(self) -> float:
        return float(np.max(self._span() / (np.asarray(self.sigma) * SQRT_2PI)))

    @property
    def scale(self):
        return self.sigma


# the celebrity/spammer transfer functions are unit-range normal CDFs
TransferFunction = NormalCDF


class Logistic(UpdateFunction):
    """``lo + (hi - lo) * expit(steepness * (x - center))``."""

    def __init__(self, center, steepness, lo=0.0, hi=1.0):
        self.center = np.asarray(center, dtype=float) if np.ndim(center) else float(center)
        self.steepness = (np.asarray(steepness, dtype=float) if np.ndim(steepness)
                          else float(steepness))
        if np.any(np.asarray(self.steepness) <= 0):
            raise ValueError("steepness must be positive")
        if np.any(np.asarray(hi) <= np.asarray(lo)):
            raise ValueError("need lo < hi")
        self.lo = lo
        self.hi = hi

    def __repr__(self) -> str:
        return (f"Logistic(center={self.center!r}, steepness={self.steepness!r}, "
                f"lo={self.lo!r}, hi={self.hi!r})")

    def _span(self):
        return np.asarray(self.hi, dtype=float) - self.lo

    def __call__(self, x):
        y = self.lo + self._span() * special.expit(
            self.steepness * (np.asarray(x, dtype=float) - self.center))
        return y if np.ndim(y) else float(y)

    def inverse(self, y):
        u = (np.asarray(y, dtype=float) - self.lo) / self._span()
        return self.center + special.logit(u) / self.steepness

    def derivative(self, x):
        e = special.expit(self.steepness * (np.asarray(x, dtype=float) - self.center))
        return self._span() * self.steepness * e * (1.0 - e)

    def _derivative_at(self, w, mask):
        shape = mask.shape
        c = _sel(self.center, mask, shape)
        k = _sel(self.steepness, mask, shape)
        span = _sel(self._span(), mask, shape)
        e = special.expit(k * (w - c))
        return span * k * e * (1.0 - e)

    @staticmethod
    def _negentropy(u):
        return special.xlogy(u, u) + special.xlogy(1.0 - u, 1.0 - u)

    def inverse_integral(self, y):
        y = self._check_range(y)
        r = self._ref
        span = self._span()
        u, ur = (y - self.lo) / span, (r - self.lo) / span
        g = self.center * (y - r) + span / self.steepness * (
            self._negentropy(u) - self._negentropy(ur))
        return g if np.ndim(g) else float(g)

    @property
    def lipschitz(self) -> float:
        return float(np.max(self._span() * np.asarray(self.steepness) / 4.0))

    @property
    def scale(self):
        return 1.0 / self.steepness
