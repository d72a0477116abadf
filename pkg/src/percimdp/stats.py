"""Incomplete beta function, Clopper-Pearson intervals and logistic
regression with exact extremes over boxes."""

import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import DegenerateData, DimensionMismatch, DomainError, SingularInformation

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_TERMS = 20_000


@dataclass(frozen=True)
class BinomialSample:
    k: int
    n: int

    def __post_init__(self):
        if self.n < 0 or self.k < 0 or self.k > self.n:
            raise DomainError(f"need 0 <= k <= n, got k={self.k}, n={self.n}")

    @property
    def rate(self):
        return self.k / self.n if self.n else float("nan")


@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    level: float

    def contains(self, p):
        return self.lo <= p <= self.hi


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by per-dimension lower and upper bounds."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in np.atleast_1d(self.lower))
        hi = tuple(float(x) for x in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise DimensionMismatch("box bounds differ in dimension")
        if any(a > b for a, b in zip(lo, hi)):
            raise DomainError(f"box lower {lo} exceeds upper {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return len(self.lower)

    def corners(self):
        dims = [(a, b) for a, b in zip(self.lower, self.upper)]
        grids = np.meshgrid(*dims, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def overlap(self, other):
        """Per-dimension overlap lengths (negative when disjoint)."""
        return np.minimum(self.upper, other.upper) - np.maximum(self.lower, other.lower)

    def contains_box(self, other, tol=0.0):
        return all(a - tol <= c and d <= b + tol
                   for a, b, c, d in zip(self.lower, self.upper, other.lower, other.upper))


# -- incomplete beta --------------------------------------------------------

def _log_beta(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _beta_cf(x, a, b):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_TERMS):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise DomainError(f"incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})")


def _check_shape(a, b):
    if not (a > 0 and b > 0) or math.isinf(a) or math.isinf(b):
        raise DomainError(f"beta shape parameters must be positive and finite, got a={a}, b={b}")


def beta_cdf(x, a, b):
    """Regularized incomplete beta I_x(a, b)."""
    _check_shape(a, b)
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    if x > a / (a + b):
        return 1.0 - beta_cdf(1.0 - x, b, a)
    log_front = a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b)
    return min(1.0, math.exp(log_front) * _beta_cf(x, a, b) / a)


def beta_pdf(x, a, b):
    _check_shape(a, b)
    if x <= 0.0 or x >= 1.0:
        if (x == 0.0 and a < 1) or (x == 1.0 and b < 1):
            return math.inf
        if (x == 0.0 and a == 1) or (x == 1.0 and b == 1):
            return math.exp(-_log_beta(a, b))
        return 0.0
    return math.exp((a - 1) * math.log(x) + (b - 1) * math.log1p(-x) - _log_beta(a, b))


def beta_quantile(p, a, b):
    """x with I_x(a, b) = p.

    Bisection keeps a bracket that always shrinks; Newton steps are taken
    only when they land inside the current bracket.
    """
    _check_shape(a, b)
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    f_lo, f_hi = -p, 1.0 - p
    x = min(max(a / (a + b), 1e-12), 1 - 1e-12)
    for _ in range(2000):
        f = beta_cdf(x, a, b) - p
        if f == 0.0:
            return x
        if f < 0:
            lo, f_lo = x, f
        else:
            hi, f_hi = x, f
        if math.nextafter(lo, 1.0) >= hi:
            break
        dens = beta_pdf(x, a, b)
        step = x - f / dens if dens > 0 and math.isfinite(dens) else -1.0
        x = step if lo < step < hi else 0.5 * (lo + hi)
    # bracket is down to adjacent floats: take the closer end
    return lo if abs(f_lo) <= abs(f_hi) else hi


def clopper_pearson(s, alpha):
    """Exact two-sided binomial interval at level 1 - alpha."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if not isinstance(s, BinomialSample):
        s = BinomialSample(*s)
    if s.n == 0:
        return ConfidenceInterval(0.0, 1.0, 1.0 - alpha)
    k, n = s.k, s.n
    lo = 0.0 if k == 0 else beta_quantile(alpha / 2, k, n - k + 1)
    hi = 1.0 if k == n else beta_quantile(1 - alpha / 2, k + 1, n - k)
    return ConfidenceInterval(lo, hi, 1.0 - alpha)


def normal_quantile(p):
    return NormalDist().inv_cdf(p)


# -- logistic regression ----------------------------------------------------

def sigmoid(t):
    t = np.clip(np.asarray(t, dtype=float), -700.0, 700.0)
    return 1.0 / (1.0 + np.exp(-t))


@dataclass(frozen=True)
class LogisticModel:
    """P(z = 1 | x) = sigmoid(weights . x + intercept)."""

    weights: np.ndarray
    intercept: float
    fisher_covariance: np.ndarray = field(repr=False)
    iterations: int = 0

    @property
    def dim(self):
        return len(self.weights)

    def linear(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        # elementwise sum rather than matmul: identical rounding for one row or many
        return (x * self.weights).sum(axis=1) + self.intercept

    def predict(self, x):
        return sigmoid(self.linear(x))

    def linear_se(self, x):
        """Standard error of the linear predictor at the rows of x."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xt = np.hstack([x, np.ones((len(x), 1))])
        var = np.einsum("ij,jk,ik->i", xt, self.fisher_covariance, xt)
        return np.sqrt(np.maximum(var, 0.0))

    def as_slope_midpoint(self):
        """(k, x0) of the one-dimensional form 1 / (1 + exp(-k (x - x0)))."""
        if self.dim != 1:
            raise DimensionMismatch("slope/midpoint form needs a one-dimensional model")
        k = float(self.weights[0])
        return k, (-self.intercept / k if k != 0 else math.nan)


RIDGE = 1e-8


def penalised_score(theta, design, z, ridge=RIDGE):
    """Gradient of log-likelihood minus (ridge / 2) |theta|^2."""
    p = sigmoid(design @ theta)
    return design.T @ (z - p) - ridge * theta


def penalised_loglik(theta, design, z, ridge=RIDGE):
    t = design @ theta
    # log(sigmoid(t)) = -log1p(exp(-t)), written stably for both signs
    ll = z * -np.logaddexp(0.0, -t) + (1 - z) * -np.logaddexp(0.0, t)
    return float(ll.sum() - 0.5 * ridge * theta @ theta)


def fit_logistic(data, ridge=RIDGE, tol=1e-10, max_iter=100):
    """Maximum-likelihood logistic fit by iteratively reweighted least squares.

    ``data`` is a PerceptionDataset or an ``(x, z)`` pair.  Inputs are
    standardised internally; the returned weights are in raw units.
    """
    x, z = (data.x, data.z) if hasattr(data, "x") else data
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1 and len(np.atleast_1d(z)) != 1:
        x = x.T
    z = np.asarray(z, dtype=float)
    if len(z) != len(x):
        raise DimensionMismatch(f"{len(x)} points but {len(z)} labels")
    if len(z) < 2:
        raise DegenerateData("need at least two points")
    if z.min() == z.max():
        raise DegenerateData("only one label present")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    design = np.hstack([(x - mu) / sd, np.ones((len(x), 1))])
    dim = design.shape[1]
    theta = np.zeros(dim)
    info = None
    it = 0
    for it in range(1, max_iter + 1):
        p = sigmoid(design @ theta)
        w = p * (1 - p)
        info = design.T @ (design * w[:, None]) + ridge * np.eye(dim)
        grad = design.T @ (z - p) - ridge * theta
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularInformation(str(exc)) from exc
        theta = theta + step
        if np.max(np.abs(step)) < tol:
            break
    p = sigmoid(design @ theta)
    w = p * (1 - p)
    info = design.T @ (design * w[:, None]) + ridge * np.eye(dim)
    try:
        cov_std = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise SingularInformation(str(exc)) from exc
    if not np.all(np.isfinite(cov_std)):
        raise SingularInformation("information matrix is not invertible")
    # raw = T @ standardised, for the stacked (weights, intercept) vector
    d = dim - 1
    t = np.zeros((dim, dim))
    t[:d, :d] = np.diag(1.0 / sd)
    t[d, :d] = -mu / sd
    t[d, d] = 1.0
    raw = t @ theta
    cov = t @ cov_std @ t.T
    cov = 0.5 * (cov + cov.T)
    return LogisticModel(raw[:d].copy(), float(raw[d]), cov, it)


def _check_box(m, box):
    if box.dim != m.dim:
        raise DimensionMismatch(f"model has {m.dim} inputs, box has {box.dim}")


def extreme_corners(weights, box):
    """(argmin corner, argmax corner) of a linear form over a box."""
    w = np.asarray(weights, dtype=float)
    lo, hi = np.asarray(box.lower), np.asarray(box.upper)
    return np.where(w > 0, lo, hi), np.where(w > 0, hi, lo)


def logistic_range_over_box(m, box):
    """Exact (min, max) of the fitted probability over an axis-aligned box."""
    _check_box(m, box)
    c_min, c_max = extreme_corners(m.weights, box)
    return float(m.predict(c_min)[0]), float(m.predict(c_max)[0])


def wald_band_over_box(m, box, alpha):
    """Sigmoid of min/max over the box of linear predictor -/+ z * se.

    The standard error is convex in x, so both extremes of the band are
    attained at corners of the box.
    """
    _check_box(m, box)
    zq = normal_quantile(1 - alpha / 2)
    corners = box.corners()
    eta = m.linear(corners)
    se = m.linear_se(corners)
    return float(sigmoid((eta - zq * se).min())), float(sigmoid((eta + zq * se).max()))
