"""Asymptotic expansion of 1D Fourier integrals and a resolved-oscillation
quadrature oracle.

The expansion of int_a^b e^{i p(t)/eps} q(t) dt is the boundary sum

    sum_{s=0}^{m-2} (i eps)^{s+1} [ e^{i p(a)/eps} P^s(a) - e^{i p(b)/eps} P^s(b) ]

with P^s[p, q](t) = {(1/p') d/dt}^s (q / p'), valid when p' has a positive
lower bound on [a, b]. P^s is evaluated exactly from Taylor jets of p and q
(supplied analytically, or built by local polynomial fits when only point
values are available).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np


class OscIntError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Taylor-jet arithmetic (truncated series about one point)
# ---------------------------------------------------------------------------


def jet_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = min(len(a), len(b))
    out = np.zeros(n, dtype=np.result_type(a, b, complex))
    for k in range(n):
        out[k] = np.sum(a[:k + 1] * b[k::-1])
    return out


def jet_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Taylor coefficients of a/b (b[0] != 0)."""
    n = min(len(a), len(b))
    if abs(b[0]) == 0:
        raise OscIntError("division by a vanishing jet")
    out = np.zeros(n, dtype=np.result_type(a, b, complex))
    for k in range(n):
        acc = a[k]
        for j in range(k):
            acc = acc - out[j] * b[k - j]
        out[k] = acc / b[0]
    return out


def jet_diff(a: np.ndarray) -> np.ndarray:
    """Taylor coefficients of a' (one order shorter)."""
    k = np.arange(1, len(a))
    return a[1:] * k


class SmoothFunc:
    """Scalar function with derivatives, as callables or fitted locally.

    derivs[k] is the k-th derivative callable (derivs[0] = the function). If
    fewer derivatives are supplied than requested, the jet is completed by a
    local polynomial fit of the highest available derivative.
    """

    def __init__(self, *derivs, fit_halfwidth: float = 1e-2):
        if not derivs:
            raise ValueError("need at least the function itself")
        self.derivs = list(derivs)
        self.fit_halfwidth = fit_halfwidth

    def __call__(self, t):
        return self.derivs[0](t)

    def jet(self, t: float, order: int) -> np.ndarray:
        """Taylor coefficients [f(t), f'(t), f''(t)/2!, ...] up to ``order``."""
        coeffs = np.zeros(order + 1, dtype=complex)
        have = min(order + 1, len(self.derivs))
        fact = 1.0
        for k in range(have):
            coeffs[k] = self.derivs[k](t) / fact
            fact *= (k + 1)
        if have <= order:
            base = self.derivs[have - 1]
            extra = order + 1 - have
            deg = extra + 2
            h = self.fit_halfwidth
            ts = t + h * np.cos(np.pi * np.arange(2 * deg + 1) / (2 * deg))
            vals = np.array([base(x) for x in ts])
            poly = np.polynomial.polynomial.polyfit(ts - t, vals, deg)
            fact = 1.0
            for k in range(have - 1):
                fact *= (k + 1)
            for j in range(1, extra + 1):
                k = have - 1 + j
                # derivative j of the fitted polynomial at 0, as d^k f / k!
                coeffs[k] = poly[j] * math.factorial(j) / (fact * np.prod(
                    np.arange(have, k + 1)))
        return coeffs


def _poly_jet(func: SmoothFunc, t: float, order: int) -> np.ndarray:
    return func.jet(t, order)


@dataclass
class OscillatoryIntegrand:
    """e^{i p(t)/eps} q(t) on [a, b]; p real with p' bounded below."""

    phase: SmoothFunc
    amplitude: SmoothFunc
    a: float
    b: float
    epsilon: float

    def phase_slope_range(self, n_samples: int = 257):
        ts = np.linspace(self.a, self.b, n_samples)
        jets = [self.phase.jet(t, 1) for t in ts]
        slopes = np.array([j[1].real for j in jets])
        return float(slopes.min()), float(slopes.max())

    def check_regularity(self) -> float:
        lo, hi = self.phase_slope_range()
        if lo <= 0:
            raise OscIntError(f"phase slope not bounded below: min p' = {lo:.3e}")
        return lo


@dataclass
class ExpansionResult:
    value: complex
    boundary_terms: list
    order: int
    error_bound: float


def p_operator(integrand: OscillatoryIntegrand, s: int, t: float) -> complex:
    """P^s[p, q](t) = {(1/p') d/dt}^s (q/p')."""
    order = s + 1
    pj = integrand.phase.jet(t, order + 1)
    qj = integrand.amplitude.jet(t, order)
    # Taylor coefficients -> derivative jets handled implicitly: work with
    # Taylor coefficients throughout and read the constant term at the end
    dp = jet_diff(pj)  # p' as Taylor coefficients, length order+1
    u = jet_div(qj, dp[:order + 1])
    for _ in range(s):
        u = jet_div(jet_diff(u), dp[:len(u) - 1])
    return complex(u[0])


def fourier_expansion(integrand: OscillatoryIntegrand, m: int) -> ExpansionResult:
    """Boundary-term expansion of the Fourier integral to order m."""
    if m < 2:
        raise OscIntError("expansion order m must be >= 2")
    lam = integrand.check_regularity()
    eps = integrand.epsilon
    pa = integrand.phase.jet(integrand.a, 0)[0].real
    pb = integrand.phase.jet(integrand.b, 0)[0].real
    ea = np.exp(1j * pa / eps)
    eb = np.exp(1j * pb / eps)
    terms = []
    for s in range(m - 1):
        term = (1j * eps) ** (s + 1) * (
            ea * p_operator(integrand, s, integrand.a)
            - eb * p_operator(integrand, s, integrand.b))
        terms.append(term)
    value = sum(terms[:m - 1])
    # residual estimate: the next boundary order plus the order-(m-1) vs
    # order-m difference; both scale like (eps/lambda)^m
    est = abs(terms[-1]) + (eps / lam) ** m
    return ExpansionResult(value=complex(value), boundary_terms=terms,
                           order=m, error_bound=float(est))


def direct_quadrature(integrand: OscillatoryIntegrand, abs_tol: float = 1e-12,
                      max_panels: int = 200000, n_gl: int = 10) -> complex:
    """Oscillation-resolving composite Gauss quadrature (validation oracle)."""
    _, hi = integrand.phase_slope_range()
    width = integrand.epsilon / max(hi, 1e-300) / 8.0
    span = integrand.b - integrand.a
    n_panels = max(int(np.ceil(span / width)), 4)
    if n_panels > max_panels:
        raise OscIntError(
            f"panel budget exceeded: need {n_panels} panels > {max_panels}")
    x, w = np.polynomial.legendre.leggauss(n_gl)

    def evaluate(n):
        edges = np.linspace(integrand.a, integrand.b, n + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
        half = 0.5 * (edges[1:] - edges[:-1])[:, None]
        ts = (mid + half * x[None, :]).ravel()
        ph = np.array([integrand.phase(t) for t in ts], dtype=float)
        am = np.array([integrand.amplitude(t) for t in ts], dtype=complex)
        vals = np.exp(1j * ph / integrand.epsilon) * am
        wts = (half * w[None, :]).ravel()
        return complex(np.sum(vals * wts))

    v1 = evaluate(n_panels)
    v2 = evaluate(2 * n_panels)
    if abs(v2 - v1) > max(abs_tol, 1e-13 * max(1.0, abs(v2))):
        v1, v2 = v2, evaluate(4 * n_panels)
        if abs(v2 - v1) > max(abs_tol, 1e-12 * max(1.0, abs(v2))):
            raise OscIntError(
                f"direct quadrature stalled at error {abs(v2 - v1):.3e}")
    return v2


# ---------------------------------------------------------------------------
# The T_{kj}-kernel integral I_{jk}[f](a, b, p)
# ---------------------------------------------------------------------------


@dataclass
class BandPhaseContext:
    """Data for I_{jk}[f] = int T_{kj}(s) f(s) ds along one characteristic.

    lam_kj is lambda_k - lambda_j evaluated along the characteristic (a
    SmoothFunc of time); the oscillation phase is (1/eps) int_0^t lam_kj.
    """

    lam_kj: SmoothFunc
    f: SmoothFunc
    epsilon: float
    j: int = 0
    k: int = 1
    quad_n: int = 64

    def phase_value(self, t: float) -> float:
        # int_0^t lam_kj by Gauss-Legendre; lam is smooth and non-oscillatory
        x, w = np.polynomial.legendre.leggauss(self.quad_n)
        ts = 0.5 * t * (x + 1.0)
        vals = np.array([self.lam_kj(s) for s in ts], dtype=float)
        return float(0.5 * t * np.sum(w * vals))


def oscillatory_i(ctx: BandPhaseContext, a: float, b: float,
                  m: int = 3) -> ExpansionResult:
    """Boundary expansion of int_a^b T_{kj}(s) f(s) ds (j != k)."""
    if ctx.j == ctx.k:
        raise OscIntError("j == k: the integral is not oscillatory; "
                          "integrate it directly")
    phase = SmoothFunc(ctx.phase_value, ctx.lam_kj.derivs[0],
                       *ctx.lam_kj.derivs[1:])
    integrand = OscillatoryIntegrand(phase=phase, amplitude=ctx.f,
                                     a=a, b=b, epsilon=ctx.epsilon)
    lo, _ = integrand.phase_slope_range()
    if lo <= 0:
        # lambda_kj < 0: conjugate structure; expand the conjugated integral
        neg_phase = SmoothFunc(lambda t: -ctx.phase_value(t),
                               lambda t: -ctx.lam_kj(t),
                               *[(lambda d: (lambda t: -d(t)))(d)
                                 for d in ctx.lam_kj.derivs[1:]])
        conj_amp = SmoothFunc(*[(lambda d: (lambda t: np.conj(d(t))))(d)
                                for d in ctx.f.derivs])
        res = fourier_expansion(OscillatoryIntegrand(
            phase=neg_phase, amplitude=conj_amp, a=a, b=b,
            epsilon=ctx.epsilon), m)
        return ExpansionResult(value=np.conj(res.value),
                               boundary_terms=[np.conj(t) for t in res.boundary_terms],
                               order=res.order, error_bound=res.error_bound)
    return fourier_expansion(integrand, m)


def oscillatory_i_direct(ctx: BandPhaseContext, a: float, b: float,
                         abs_tol: float = 1e-12) -> complex:
    phase = SmoothFunc(ctx.phase_value, ctx.lam_kj.derivs[0])
    integrand = OscillatoryIntegrand(phase=phase, amplitude=ctx.f,
                                     a=a, b=b, epsilon=ctx.epsilon)
    # direct quadrature does not need the sign restriction
    _, hi = (lambda lohi: lohi)(integrand.phase_slope_range())
    width = integrand.epsilon / max(abs(hi), abs(integrand.phase_slope_range()[0]), 1e-300) / 8.0
    x, w = np.polynomial.legendre.leggauss(10)
    n_panels = max(int(np.ceil((b - a) / width)), 4)
    edges = np.linspace(a, b, 2 * n_panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    ts = (mid + half * x[None, :]).ravel()
    ph = np.array([ctx.phase_value(t) for t in ts])
    am = np.array([ctx.f(t) for t in ts], dtype=complex)
    wts = (half * w[None, :]).ravel()
    return complex(np.sum(np.exp(1j * ph / ctx.epsilon) * am * wts))
