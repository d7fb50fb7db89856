"""Free-probability toolkit: moment/cumulant conversions, spectral
transforms, detection thresholds and PCA overlap formulas.

Conventions. "Square" sequences are indexed from 1 (m_1..m_K,
kappa_1..kappa_K). "Rectangular" sequences hold even orders only
(m_2, m_4, .., m_{2K} and kappa_2, .., kappa_{2K}) together with the
aspect ratio gamma = m/n in (0, 1].
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import DomainError, NoConvergenceError, TruncationWarning

SQUARE = "square"
RECTANGULAR = "rectangular"

# Relative tolerance of the tail bound before a TruncationWarning is
# attached to a truncated series value.
TAIL_RTOL = 1e-8


# ---------------------------------------------------------------------------
# dense truncated polynomial arithmetic (order-K coefficient vectors)
# ---------------------------------------------------------------------------

def _poly_mul(a: np.ndarray, b: np.ndarray, order: int) -> np.ndarray:
    """Product of two coefficient vectors truncated at z^order."""
    out = np.convolve(a, b)[: order + 1]
    if out.size < order + 1:
        out = np.pad(out, (0, order + 1 - out.size))
    return out


def _poly_powers(p: np.ndarray, jmax: int, order: int) -> list[np.ndarray]:
    """[p^1, p^2, .., p^jmax], each truncated at z^order."""
    powers = [p[: order + 1].copy()]
    for _ in range(1, jmax):
        powers.append(_poly_mul(powers[-1], p, order))
    return powers


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentSequence:
    """Truncated moment sequence of a spectral law.

    values[k-1] is m_k in the square case and m_{2k} in the rectangular
    case.
    """

    values: tuple[float, ...]
    kind: str
    gamma: float | None = None

    def __post_init__(self):
        if len(self.values) < 1:
            raise ValueError("need at least one moment")
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("moments must be finite")
        if self.kind == SQUARE:
            if len(vals) >= 2 and vals[1] < 0:
                raise ValueError("m_2 must be nonnegative")
        elif self.kind == RECTANGULAR:
            if self.gamma is None or not 0 < self.gamma <= 1:
                raise ValueError("rectangular moments need gamma in (0, 1]")
            if np.any(vals < 0):
                raise ValueError("rectangular (even) moments must be >= 0")
        else:
            raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def order(self) -> int:
        return len(self.values)

    @classmethod
    def from_sample(cls, sample, kind: str = SQUARE, order: int = 16,
                    gamma: float | None = None) -> "MomentSequence":
        """Empirical moments of a value sample (eigenvalues for the square
        kind, singular values for the rectangular kind).

        The square-case Hankel positivity check is advisory: finite
        samples can violate it mildly, so a warning is issued instead of
        an error.
        """
        x = np.asarray(sample, dtype=float)
        if kind == SQUARE:
            vals = [float(np.mean(x ** k)) for k in range(1, order + 1)]
            if order >= 2 and vals[1] - vals[0] ** 2 < -1e-12:
                warnings.warn("sample moments violate Hankel positivity "
                              f"(m2 - m1^2 = {vals[1] - vals[0]**2:.3e})")
        else:
            vals = [float(np.mean(x ** (2 * k))) for k in range(1, order + 1)]
        return cls(tuple(vals), kind, gamma)


@dataclass(frozen=True)
class CumulantSeries:
    """Truncated free cumulants.

    values[k-1] is kappa_k (square) or kappa_{2k} (rectangular).  When
    ``geometric_c`` is set, the sequence is the constant one
    kappa_k = c for every k (the Marcenko-Pastur case) and all tail
    sums are evaluated in closed form instead of being truncated.
    """

    values: tuple[float, ...]
    kind: str
    gamma: float | None = None
    geometric_c: float | None = None

    def __post_init__(self):
        if len(self.values) < 1:
            raise ValueError("need at least one cumulant")
        if self.kind == RECTANGULAR and (self.gamma is None
                                         or not 0 < self.gamma <= 1):
            raise ValueError("rectangular cumulants need gamma in (0, 1]")
        if self.kind not in (SQUARE, RECTANGULAR):
            raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def order(self) -> int:
        return len(self.values)

    def kappa(self, k: int) -> float:
        """kappa_k (square) or kappa_{2k} (rectangular); zero beyond the
        stored order unless the geometric closed form applies."""
        if k < 1:
            raise ValueError("cumulant index starts at 1")
        if k <= len(self.values):
            return self.values[k - 1]
        return self.geometric_c if self.geometric_c is not None else 0.0

    def nonnegative(self, start: int = 2) -> bool:
        """Whether kappa_k >= 0 for all stored k >= start (the fixed-point
        uniqueness hypothesis)."""
        return all(v >= 0 for v in self.values[start - 1:])


# ---------------------------------------------------------------------------
# moment <-> cumulant conversions
# ---------------------------------------------------------------------------

def moments_to_free_cumulants(m: MomentSequence) -> CumulantSeries:
    """Free cumulants from moments by the coefficient-extraction recursion

        kappa_k = m_k - [z^k] sum_{j<k} kappa_j (z + m_1 z^2 + ... +
                  m_{k-1} z^k)^j

    with kappa_1 = m_1.
    """
    if m.kind != SQUARE:
        raise ValueError("square moments required")
    K = m.order
    mom = np.concatenate(([1.0], np.asarray(m.values)))  # m_0 = 1
    kappa = np.zeros(K)
    kappa[0] = mom[1]
    for k in range(2, K + 1):
        # p(z) = z + m_1 z^2 + .. + m_{k-1} z^k, truncated at z^k
        p = np.zeros(k + 1)
        p[1:] = mom[:k]
        powers = _poly_powers(p, k - 1, k)
        acc = 0.0
        for j in range(1, k):
            acc += kappa[j - 1] * powers[j - 1][k]
        kappa[k - 1] = mom[k] - acc
    return CumulantSeries(tuple(kappa), SQUARE)


def free_cumulants_to_moments(k: CumulantSeries) -> MomentSequence:
    """Inverse of :func:`moments_to_free_cumulants` by forward recursion
    (the same coefficient extraction solved for m_k)."""
    if k.kind != SQUARE:
        raise ValueError("square cumulants required")
    K = k.order
    mom = np.zeros(K + 1)
    mom[0] = 1.0
    for n in range(1, K + 1):
        if n == 1:
            mom[1] = k.values[0]
            continue
        p = np.zeros(n + 1)
        p[1:] = mom[:n]
        powers = _poly_powers(p, n - 1, n)
        acc = 0.0
        for j in range(1, n):
            acc += k.values[j - 1] * powers[j - 1][n]
        mom[n] = k.values[n - 1] + acc
    return MomentSequence(tuple(mom[1:]), SQUARE)


def _rect_base_poly(mom: np.ndarray, order: int, gamma: float) -> np.ndarray:
    """q(z) = z (gamma M(z) + 1)(M(z) + 1) with M(z) = sum m_{2k} z^k,
    truncated at z^order."""
    M = np.zeros(order + 1)
    M[1:len(mom) + 1] = mom[:order]
    a = gamma * M.copy()
    a[0] += 1.0
    b = M.copy()
    b[0] += 1.0
    prod = _poly_mul(a, b, order)
    q = np.zeros(order + 1)
    q[1:] = prod[:order]
    return q


def moments_to_rect_cumulants(m: MomentSequence) -> CumulantSeries:
    """Rectangular free cumulants kappa_{2k} from even moments via

        kappa_{2k} = m_{2k} - [z^k] sum_{j<k} kappa_{2j}
                     (z (gamma M(z)+1)(M(z)+1))^j.
    """
    if m.kind != RECTANGULAR:
        raise ValueError("rectangular moments required")
    K = m.order
    mom = np.asarray(m.values)
    kappa = np.zeros(K)
    kappa[0] = mom[0]
    for k in range(2, K + 1):
        q = _rect_base_poly(mom[:k - 1], k, m.gamma)
        powers = _poly_powers(q, k - 1, k)
        acc = 0.0
        for j in range(1, k):
            acc += kappa[j - 1] * powers[j - 1][k]
        kappa[k - 1] = mom[k - 1] - acc
    return CumulantSeries(tuple(kappa), RECTANGULAR, gamma=m.gamma)


def rect_cumulants_to_moments(k: CumulantSeries) -> MomentSequence:
    """Inverse of :func:`moments_to_rect_cumulants` by forward recursion."""
    if k.kind != RECTANGULAR:
        raise ValueError("rectangular cumulants required")
    K = k.order
    mom = np.zeros(K)
    mom[0] = k.values[0]
    for n in range(2, K + 1):
        q = _rect_base_poly(mom[:n - 1], n, k.gamma)
        powers = _poly_powers(q, n - 1, n)
        acc = 0.0
        for j in range(1, n):
            acc += k.values[j - 1] * powers[j - 1][n]
        mom[n - 1] = k.values[n - 1] + acc
    return MomentSequence(tuple(mom), RECTANGULAR, gamma=k.gamma)


# ---------------------------------------------------------------------------
# Bernoulli numbers (exact) for the symmetric-uniform cumulants
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _bernoulli(n: int) -> Fraction:
    """B_n by the standard recurrence sum_{j<=m} C(m+1, j) B_j = 0."""
    if n == 0:
        return Fraction(1)
    total = Fraction(0)
    for j in range(n):
        total += Fraction(math.comb(n + 1, j)) * _bernoulli(j)
    return -total / (n + 1)


# ---------------------------------------------------------------------------
# spectrum models
# ---------------------------------------------------------------------------

MARCENKO_PASTUR = "marcenko_pastur"
UNIFORM_SYMMETRIC = "uniform_symmetric"
UNIFORM_SQUARED_SINGULAR = "uniform_squared_singular"
EMPIRICAL = "empirical"


@dataclass(frozen=True)
class SpectrumModel:
    """A noise spectrum: a named law with closed forms, or an empirical
    sample of eigen/singular values."""

    name: str
    kind: str
    support_sup: float
    param: float | None = None           # c for MP, halfwidth for uniform
    gamma: float | None = None           # rectangular only
    sample: np.ndarray | None = field(default=None, repr=False)

    # -- constructors -------------------------------------------------

    @staticmethod
    def marcenko_pastur(c: float) -> "SpectrumModel":
        """Eigenvalue law of W = A A^T / n with A an n x (cn) standard
        Gaussian matrix.  All free cumulants equal c."""
        if c <= 0:
            raise ValueError("c must be positive")
        b = (1.0 + math.sqrt(c)) ** 2
        model = SpectrumModel(MARCENKO_PASTUR, SQUARE, b, param=c)
        _check_named_moments(model)
        return model

    @staticmethod
    def uniform_symmetric(halfwidth: float = 0.5) -> "SpectrumModel":
        if halfwidth <= 0:
            raise ValueError("halfwidth must be positive")
        model = SpectrumModel(UNIFORM_SYMMETRIC, SQUARE, halfwidth,
                              param=halfwidth)
        _check_named_moments(model)
        return model

    @staticmethod
    def uniform_squared_singular(gamma: float) -> "SpectrumModel":
        """Singular-value law with Lambda^2 uniform on [0, 1]."""
        if not 0 < gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        model = SpectrumModel(UNIFORM_SQUARED_SINGULAR, RECTANGULAR, 1.0,
                              gamma=gamma)
        _check_named_moments(model)
        return model

    @staticmethod
    def empirical(sample, kind: str = SQUARE,
                  gamma: float | None = None) -> "SpectrumModel":
        arr = np.sort(np.asarray(sample, dtype=float))
        if arr.size == 0 or not np.all(np.isfinite(arr)):
            raise ValueError("empirical sample must be nonempty and finite")
        return SpectrumModel(EMPIRICAL, kind, float(arr[-1]), gamma=gamma,
                             sample=arr)

    # -- closed-form moments (named laws) ------------------------------

    def moment(self, k: int) -> float:
        """m_k (square) or m_{2k} (rectangular)."""
        if self.name == MARCENKO_PASTUR:
            # moments of the constant cumulant sequence kappa_j = c
            cums = CumulantSeries((self.param,) * k, SQUARE)
            return free_cumulants_to_moments(cums).values[k - 1]
        if self.name == UNIFORM_SYMMETRIC:
            h = self.param
            return h ** k / (k + 1.0) if k % 2 == 0 else 0.0
        if self.name == UNIFORM_SQUARED_SINGULAR:
            return 1.0 / (k + 1.0)
        x = self.sample
        p = k if self.kind == SQUARE else 2 * k
        return float(np.mean(x ** p))

    # -- square transforms ---------------------------------------------

    def cauchy_g(self, z: float) -> float:
        """G(z) = E{1/(z - Lambda)} for z > b."""
        self._require(SQUARE, z)
        if self.name == MARCENKO_PASTUR:
            c = self.param
            disc = (z - c + 1.0) ** 2 - 4.0 * z
            return ((z - c + 1.0) - math.sqrt(max(disc, 0.0))) / (2.0 * z)
        if self.name == UNIFORM_SYMMETRIC:
            h = self.param
            return math.log((z + h) / (z - h)) / (2.0 * h)
        return float(np.mean(1.0 / (z - self.sample)))

    def cauchy_g_prime(self, z: float) -> float:
        """dG/dz: analytic for named laws, central differences for
        empirical samples (relative step 1e-6)."""
        self._require(SQUARE, z)
        if self.name == MARCENKO_PASTUR:
            c = self.param
            g = self.cauchy_g(z)
            return (g - g * g) / (2.0 * z * g - (z - c + 1.0))
        if self.name == UNIFORM_SYMMETRIC:
            h = self.param
            return -1.0 / (z * z - h * h)
        return self._central_diff(self.cauchy_g, z)

    def g_at_edge(self) -> tuple[float, bool]:
        """(G(b+), diverged).  Named laws use the analytic limit, empirical
        samples use the descending-delta stencil."""
        if self.name == MARCENKO_PASTUR:
            c = self.param
            return 1.0 / (1.0 + math.sqrt(c)), False
        if self.name == UNIFORM_SYMMETRIC:
            return math.inf, True
        return _edge_limit(self.cauchy_g, self.support_sup)

    # -- rectangular transforms -----------------------------------------

    def phi(self, z: float) -> float:
        """phi(z) = E{z / (z^2 - Lambda^2)} for z > b."""
        self._require(RECTANGULAR, z)
        if self.name == UNIFORM_SQUARED_SINGULAR:
            return z * math.log(z * z / (z * z - 1.0))
        return float(np.mean(z / (z * z - self.sample ** 2)))

    def phi_bar(self, z: float) -> float:
        return self.gamma * self.phi(z) + (1.0 - self.gamma) / z

    def d_transform(self, z: float) -> float:
        return self.phi(z) * self.phi_bar(z)

    def phi_prime(self, z: float) -> float:
        if self.name == UNIFORM_SQUARED_SINGULAR:
            return math.log(z * z / (z * z - 1.0)) - 2.0 / (z * z - 1.0)
        return self._central_diff(self.phi, z)

    def d_prime(self, z: float) -> float:
        if self.name == UNIFORM_SQUARED_SINGULAR:
            phi = self.phi(z)
            phip = self.phi_prime(z)
            phib = self.phi_bar(z)
            phibp = self.gamma * phip - (1.0 - self.gamma) / (z * z)
            return phip * phib + phi * phibp
        return self._central_diff(self.d_transform, z)

    def d_at_edge(self) -> tuple[float, bool]:
        if self.name == UNIFORM_SQUARED_SINGULAR:
            return math.inf, True
        return _edge_limit(self.d_transform, self.support_sup)

    # -- helpers ---------------------------------------------------------

    def _require(self, kind: str, z: float):
        if self.kind != kind:
            raise DomainError(f"{self.name} is not a {kind} spectrum")
        if z <= self.support_sup:
            raise DomainError(
                f"z = {z} is not above the support supremum b = "
                f"{self.support_sup}")

    @staticmethod
    def _central_diff(fn, z: float) -> float:
        h = 1e-6 * max(1.0, abs(z))
        return (fn(z + h) - fn(z - h)) / (2.0 * h)


def _edge_limit(fn, b: float) -> tuple[float, bool]:
    """Evaluate lim_{z -> b+} fn(z) on the stencil z = b(1+delta)+delta,
    delta in {1e-3 .. 1e-8}; accept once two consecutive values agree to
    1e-6 relative, otherwise report divergence."""
    prev = None
    for expo in range(3, 9):
        delta = 10.0 ** (-expo)
        val = fn(b * (1.0 + delta) + delta)
        if prev is not None and abs(val - prev) <= 1e-6 * max(1.0, abs(val)):
            return val, False
        prev = val
    return math.inf, True


def _check_named_moments(model: SpectrumModel, orders: int = 3,
                         rtol: float = 1e-6):
    """Closed-form moments vs quadrature of the density (construction-time
    sanity check, cached per law)."""
    key = (model.name, model.param, model.gamma)
    if key in _CHECKED_LAWS:
        return
    for k in range(1, orders + 1):
        closed = model.moment(k)
        quad = _quadrature_moment(model, k)
        if abs(closed - quad) > rtol * max(1.0, abs(closed)):
            raise ValueError(
                f"closed-form moment m_{k} of {model.name} disagrees with "
                f"quadrature: {closed} vs {quad}")
    _CHECKED_LAWS.add(key)


_CHECKED_LAWS: set = set()


def mp_density(x: np.ndarray, c: float) -> np.ndarray:
    """Continuous part of the Marcenko-Pastur eigenvalue density of
    A A^T / n (atom at zero of mass 1-c when c < 1)."""
    a = (1.0 - math.sqrt(c)) ** 2
    b = (1.0 + math.sqrt(c)) ** 2
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > a) & (x < b)
    xi = x[inside]
    out[inside] = np.sqrt((b - xi) * (xi - a)) / (2.0 * np.pi * xi)
    return out


def _quadrature_moment(model: SpectrumModel, k: int) -> float:
    if model.name == MARCENKO_PASTUR:
        c = model.param
        a = (1.0 - math.sqrt(c)) ** 2
        b = (1.0 + math.sqrt(c)) ** 2
        val, _ = integrate.quad(lambda x: x ** k * mp_density(x, c), a, b,
                                limit=200)
        return val  # the atom at 0 (c < 1) contributes nothing for k >= 1
    if model.name == UNIFORM_SYMMETRIC:
        h = model.param
        val, _ = integrate.quad(lambda x: x ** k / (2.0 * h), -h, h)
        return val
    if model.name == UNIFORM_SQUARED_SINGULAR:
        val, _ = integrate.quad(lambda u: u ** k, 0.0, 1.0)
        return val
    raise ValueError("quadrature check applies to named laws only")


# ---------------------------------------------------------------------------
# named cumulants
# ---------------------------------------------------------------------------

def named_spectrum_cumulants(model: SpectrumModel, K: int) -> CumulantSeries:
    """Limit free cumulants kappa^inf of a named law.

    Marcenko-Pastur: kappa_k = c for every k (flagged so that tail sums
    use the exact geometric closed form).  Uniform[-h, h]: kappa_odd = 0
    and kappa_{2j} = B_{2j} (2h)^{2j} / (2j)! with exact Bernoulli
    numbers.  UniformSquaredSingular: even moments 1/(k+1) pushed
    through the rectangular recursion.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if model.name == MARCENKO_PASTUR:
        c = float(model.param)
        return CumulantSeries((c,) * K, SQUARE, geometric_c=c)
    if model.name == UNIFORM_SYMMETRIC:
        s = 2.0 * model.param
        vals = []
        for k in range(1, K + 1):
            if k % 2 == 1:
                vals.append(0.0)
            else:
                vals.append(float(_bernoulli(k) / math.factorial(k)) * s ** k)
        return CumulantSeries(tuple(vals), SQUARE)
    if model.name == UNIFORM_SQUARED_SINGULAR:
        mom = MomentSequence(tuple(1.0 / (k + 1.0) for k in range(1, K + 1)),
                             RECTANGULAR, gamma=model.gamma)
        return moments_to_rect_cumulants(mom)
    raise ValueError("named law required (use bulk moments + the "
                     "conversion routines for empirical spectra)")


def empirical_cumulants(model_or_moments, K: int = 16,
                        kind: str = SQUARE,
                        gamma: float | None = None) -> CumulantSeries:
    """Cumulants of an empirical spectrum via sample moments."""
    if isinstance(model_or_moments, MomentSequence):
        mom = model_or_moments
    else:
        mom = MomentSequence.from_sample(model_or_moments.sample, kind=kind,
                                         order=K, gamma=gamma)
    if mom.kind == SQUARE:
        return moments_to_free_cumulants(mom)
    return moments_to_rect_cumulants(mom)


# ---------------------------------------------------------------------------
# truncated series of cumulants (R-transform family and tail sums)
# ---------------------------------------------------------------------------

def _tail_bound_ok(terms: np.ndarray, total: float) -> bool:
    """Geometric extrapolation of the last two retained terms; True when
    the bound is within TAIL_RTOL of the partial sum."""
    if terms.size < 2:
        return False
    last, prev = abs(terms[-1]), abs(terms[-2])
    if last == 0.0:
        return True
    if prev == 0.0 or last >= prev:
        return False
    ratio = last / prev
    bound = last * ratio / (1.0 - ratio)
    return bound <= TAIL_RTOL * max(abs(total), 1e-300)


def _series(coeffs: np.ndarray, z: float) -> tuple[float, bool]:
    powers = z ** np.arange(len(coeffs))
    terms = coeffs * powers
    total = float(np.sum(terms))
    return total, _tail_bound_ok(terms, total)


def series_r(cums: CumulantSeries, z: float) -> tuple[float, bool]:
    """R(z) = sum_{i>=0} kappa_{i+1} z^i (square).  Returns (value, tail
    bound satisfied)."""
    if cums.geometric_c is not None:
        if abs(z) >= 1.0:
            raise DomainError("MP R-series requires |z| < 1")
        return cums.geometric_c / (1.0 - z), True
    coeffs = np.asarray(cums.values)
    return _series(coeffs, z)


def series_r_prime(cums: CumulantSeries, z: float) -> tuple[float, bool]:
    """R'(z) = sum_{i>=0} (i+1) kappa_{i+2} z^i (square)."""
    if cums.geometric_c is not None:
        if abs(z) >= 1.0:
            raise DomainError("MP R-series requires |z| < 1")
        return cums.geometric_c / (1.0 - z) ** 2, True
    k = np.asarray(cums.values)
    coeffs = np.arange(1, len(k)) * k[1:]
    if coeffs.size == 0:
        return 0.0, True
    return _series(coeffs, z)


def rect_series_r(cums: CumulantSeries, z: float) -> tuple[float, bool]:
    """Rectangular R(z) = sum_{i>=1} kappa_{2i} z^i."""
    k = np.asarray(cums.values)
    terms = k * z ** np.arange(1, len(k) + 1)
    total = float(np.sum(terms))
    return total, _tail_bound_ok(terms, total)


def rect_series_r_prime(cums: CumulantSeries, z: float) -> tuple[float, bool]:
    """Rectangular R'(z) = sum_{i>=0} (i+1) kappa_{2(i+1)} z^i."""
    k = np.asarray(cums.values)
    terms = np.arange(1, len(k) + 1) * k * z ** np.arange(len(k))
    total = float(np.sum(terms))
    return total, _tail_bound_ok(terms, total)


def tail_sum(cums: CumulantSeries, offset: int, z: float) -> tuple[float, bool]:
    """sum_{i>=1} kappa_{offset+i} z^i (square indexing; rectangular
    sequences interpret the index as kappa_{2(offset+i)}).

    This is the tail primitive behind the PCA-memory coefficients and
    the state-evolution series blocks.
    """
    if cums.geometric_c is not None:
        if abs(z) >= 1.0:
            raise DomainError("geometric tail requires |z| < 1")
        return cums.geometric_c * z / (1.0 - z), True
    k = np.asarray(cums.values)
    idx = np.arange(offset + 1, len(k) + 1)  # stored indices > offset
    idx = idx[idx >= 1]
    if idx.size == 0:
        return 0.0, False
    terms = k[idx - 1] * z ** (idx - offset)
    total = float(np.sum(terms))
    return total, _tail_bound_ok(terms, total)


def tail_sum_weighted(cums: CumulantSeries, offset: int,
                      z: float) -> tuple[float, bool]:
    """sum_{r>=2} (r-1) kappa_{offset+r} z^r (double-tail block)."""
    if cums.geometric_c is not None:
        if abs(z) >= 1.0:
            raise DomainError("geometric tail requires |z| < 1")
        return cums.geometric_c * z * z / (1.0 - z) ** 2, True
    k = np.asarray(cums.values)
    idx = np.arange(offset + 2, len(k) + 1)
    idx = idx[idx >= 1]
    if idx.size == 0:
        return 0.0, False
    r = idx - offset
    terms = (r - 1) * k[idx - 1] * z ** r
    total = float(np.sum(terms))
    return total, _tail_bound_ok(terms, total)


def head_sum(cums: CumulantSeries, offset: int, z: float) -> tuple[float, bool]:
    """sum_{i>=0} kappa_{offset+i} z^i = kappa_offset + tail_sum(offset)."""
    val, ok = tail_sum(cums, offset, z)
    return cums.kappa(offset) + val, ok


# ---------------------------------------------------------------------------
# eval/invert transforms (public dispatch)
# ---------------------------------------------------------------------------

_TRANSFORMS = ("G", "Gprime", "R", "Rprime", "Phi", "PhiBar", "D", "Dprime",
               "Rrect", "RrectPrime")


def eval_transform(which: str, model, z: float) -> float:
    """Evaluate a spectral transform at a real point.

    G/Phi/D-family arguments must lie strictly above the support
    supremum; R-family arguments must lie in the series convergence
    region.  A TruncationWarning is emitted when a truncated series tail
    bound exceeds tolerance.
    """
    if which in ("G", "Gprime", "Phi", "PhiBar", "D", "Dprime"):
        if not isinstance(model, SpectrumModel):
            raise TypeError("G/Phi/D transforms need a SpectrumModel")
        fn = {"G": model.cauchy_g, "Gprime": model.cauchy_g_prime,
              "Phi": model.phi, "PhiBar": model.phi_bar,
              "D": model.d_transform, "Dprime": model.d_prime}[which]
        return fn(z)
    if which in ("R", "Rprime", "Rrect", "RrectPrime"):
        if not isinstance(model, CumulantSeries):
            raise TypeError("R transforms need a CumulantSeries")
        fn = {"R": series_r, "Rprime": series_r_prime,
              "Rrect": rect_series_r, "RrectPrime": rect_series_r_prime}[which]
        val, ok = fn(model, z)
        if not ok:
            warnings.warn(f"{which}({z}): series tail bound above tolerance",
                          TruncationWarning, stacklevel=2)
        return val
    raise ValueError(f"unknown transform {which!r}; expected one of "
                     f"{_TRANSFORMS}")


def invert_transform(which: str, model: SpectrumModel, y: float,
                     tol: float = 1e-12, max_iter: int = 200) -> float:
    """Invert G (square) or D (rectangular) on (b, inf).

    Both transforms are strictly decreasing there, so the root is found
    by bracketed bisection after growing the upper bracket
    geometrically.
    """
    if which == "Ginv":
        fn, (edge, diverged) = model.cauchy_g, model.g_at_edge()
    elif which == "Dinv":
        fn, (edge, diverged) = model.d_transform, model.d_at_edge()
    else:
        raise ValueError("which must be 'Ginv' or 'Dinv'")
    if y <= 0.0:
        raise DomainError("target value must be positive")
    if not diverged and y >= edge:
        raise DomainError(f"target {y} is above the edge limit {edge}")

    b = model.support_sup
    lo = b * (1.0 + 1e-12) + 1e-12
    flo = fn(lo)
    while flo < y:
        # target above the reachable value at the bracket edge
        nxt = b + (lo - b) / 8.0
        if nxt <= b or nxt == lo:
            raise DomainError(f"target {y} outside the transform range")
        lo, flo = nxt, fn(nxt)
    hi = max(2.0 * abs(b) + 1.0, lo * 2.0)
    for _ in range(200):
        if fn(hi) < y:
            break
        hi *= 2.0
    else:
        raise NoConvergenceError("could not bracket the inverse")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = fn(mid)
        if abs(fmid - y) <= tol:
            return mid
        if fmid > y:
            lo = mid
        else:
            hi = mid
    raise NoConvergenceError(
        f"bisection did not reach |f(z)-y| <= {tol} in {max_iter} steps "
        "(malformed spectrum?)")


# ---------------------------------------------------------------------------
# thresholds and PCA overlaps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdResult:
    value: float
    diverged: bool   # edge transform diverges; threshold reported as 0


def spectral_thresholds(model: SpectrumModel,
                        gamma: float | None = None) -> ThresholdResult:
    """alpha_s = 1/G(b+) for square spectra, alpha_tilde_s = 1/sqrt(D(b+))
    for rectangular ones.  A divergent edge transform gives threshold 0
    with the diverged flag set."""
    if model.kind == SQUARE:
        edge, diverged = model.g_at_edge()
        if diverged or not math.isfinite(edge):
            return ThresholdResult(0.0, True)
        return ThresholdResult(1.0 / edge, False)
    if model.gamma is None and gamma is None:
        raise ValueError("rectangular threshold needs gamma")
    edge, diverged = model.d_at_edge()
    if diverged or not math.isfinite(edge):
        return ThresholdResult(0.0, True)
    return ThresholdResult(1.0 / math.sqrt(edge), False)


@dataclass(frozen=True)
class OverlapReport:
    """Asymptotic PCA overlap(s); rho_sq for square models, (delta_pca,
    gamma_pca) for rectangular ones."""
    rho_sq: float | None = None
    delta_pca: float | None = None
    gamma_pca: float | None = None
    below_threshold: bool = False
    spike_location: float | None = None   # G^{-1}(1/alpha) or D^{-1}(1/at^2)


def pca_overlap(model: SpectrumModel, alpha: float,
                gamma: float | None = None) -> OverlapReport:
    """Limiting squared correlation of the PCA estimate with the signal.

    Square: rho^2 = -1 / (alpha^2 G'(G^{-1}(1/alpha))).  Rectangular
    (with alpha_tilde = alpha/sqrt(gamma)):
    Delta = -2 phi(z*) / (at^2 D'(z*)), Gamma analogous with phi_bar,
    z* = D^{-1}(1/at^2).
    """
    thr = spectral_thresholds(model, gamma)
    if model.kind == SQUARE:
        if alpha <= thr.value:
            return OverlapReport(rho_sq=0.0, below_threshold=True)
        z = invert_transform("Ginv", model, 1.0 / alpha)
        gp = model.cauchy_g_prime(z)
        return OverlapReport(rho_sq=-1.0 / (alpha * alpha * gp),
                             spike_location=z)
    g = model.gamma if model.gamma is not None else gamma
    at = alpha / math.sqrt(g)
    if at <= thr.value:
        return OverlapReport(delta_pca=0.0, gamma_pca=0.0,
                             below_threshold=True)
    z = invert_transform("Dinv", model, 1.0 / at ** 2)
    dp = model.d_prime(z)
    delta = -2.0 * model.phi(z) / (at * at * dp)
    gam = -2.0 * model.phi_bar(z) / (at * at * dp)
    return OverlapReport(delta_pca=delta, gamma_pca=gam, spike_location=z)
