"""Truncated Taylor-jet arithmetic (forward-mode derivatives of curves).

A :class:`Jet` stores the coefficients ``(u_0, ..., u_m)`` of a truncated
Taylor expansion ``u(t) = sum_k u_k t^k + O(t^{m+1})`` of one scalar curve.
Arithmetic truncates consistently at the smaller operand order.

Coefficients live in any commutative ring with the required elementary
functions: floats, numpy arrays (vectorised jets), or other jets.  The
latter is what makes nested directional derivatives work: an inner
derivative built while an outer one is in progress simply produces jets
whose coefficients are jets.  Nesting to depth three is exercised by the
modified-field terms (``d(d(df.f).f).f``).
"""

from dataclasses import dataclass

import numpy as np

from . import _mathops as _m


class Jet:
    """Truncated Taylor coefficients of a scalar curve."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        self.coeffs = list(coeffs)
        if not self.coeffs:
            raise ValueError("a jet needs at least the order-0 coefficient")

    @property
    def order(self):
        return len(self.coeffs) - 1

    def coeff(self, k):
        return self.coeffs[k]

    # -- ring operations ------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Jet):
            m = min(self.order, other.order)
            return Jet([self.coeffs[k] + other.coeffs[k] for k in range(m + 1)])
        c = list(self.coeffs)
        c[0] = c[0] + other
        return Jet(c)

    __radd__ = __add__

    def __neg__(self):
        return Jet([-c for c in self.coeffs])

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet) else -1.0 * other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            m = min(self.order, other.order)
            a, b = self.coeffs, other.coeffs
            return Jet(
                [
                    sum(a[i] * b[k - i] for i in range(1, k + 1)) + a[0] * b[k]
                    for k in range(m + 1)
                ]
            )
        return Jet([c * other for c in self.coeffs])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            raise TypeError("jet division is only supported by scalars")
        return self * (1.0 / other)

    # -- elementary functions (standard convolution recurrences) ---------

    def sin(self):
        return self._sincos()[0]

    def cos(self):
        return self._sincos()[1]

    def _sincos(self):
        u = self.coeffs
        m = self.order
        s = [_m.sin(u[0])]
        c = [_m.cos(u[0])]
        for k in range(1, m + 1):
            sk = sum(j * u[j] * c[k - j] for j in range(1, k + 1)) / k
            ck = -sum(j * u[j] * s[k - j] for j in range(1, k + 1)) / k
            s.append(sk)
            c.append(ck)
        return Jet(s), Jet(c)

    def tanh(self):
        u = self.coeffs
        m = self.order
        t = [_m.tanh(u[0])]
        v = [1.0 - t[0] * t[0]]  # v = 1 - tanh^2
        for k in range(1, m + 1):
            tk = sum(j * u[j] * v[k - j] for j in range(1, k + 1)) / k
            t.append(tk)
            v.append(-sum(t[i] * t[k - i] for i in range(k + 1)))
        return Jet(t)

    def __repr__(self):
        return f"Jet({self.coeffs!r})"


@dataclass(frozen=True)
class TaylorJet:
    """Taylor coefficients of a curve in R^d: ``coeffs[k]`` is a d-vector."""

    coeffs: np.ndarray  # shape (order + 1, d)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 2:
            raise ValueError("coeffs must have shape (order + 1, dim)")
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self):
        return self.coeffs.shape[0] - 1

    @property
    def dim(self):
        return self.coeffs.shape[1]


def _as_jet(x, order):
    """Coerce a constant component to a jet of the requested order."""
    if isinstance(x, Jet):
        return x
    return Jet([x] + [0.0 * x] * order)


def eval_components(g, comps, h=None):
    """Evaluate a field-like object ``g`` on a tuple of components.

    ``g`` either exposes ``components(comps, h)`` (vector fields, learned
    models) or is a plain callable on component tuples.
    """
    if hasattr(g, "components"):
        return tuple(g.components(tuple(comps), h))
    return tuple(g(tuple(comps)))


def lift(field, jet, h=None):
    """Push a state-space curve jet through a vector field.

    Returns the jet of ``t -> f(c(t))`` truncated at the input order.
    """
    order = jet.order
    comps = tuple(Jet(list(jet.coeffs[:, i])) for i in range(jet.dim))
    out = eval_components(field, comps, h)
    rows = [_as_jet(o, order).coeffs for o in out]
    return TaylorJet(np.array(rows, dtype=float).T)


def dd_components(g, comps, v_comps, h=None):
    """Directional derivative at the component level (nestable form).

    Components may be floats, arrays, or jets; the result is a tuple in
    the same ring.  ``dg(y) . v`` is read off as the order-1 Taylor
    coefficient of ``t -> g(y + t v)``.
    """
    seeds = tuple(Jet([c, v]) for c, v in zip(comps, v_comps))
    out = eval_components(g, seeds, h)
    res = []
    for o in out:
        if isinstance(o, Jet):
            res.append(o.coeff(1))
        else:
            res.append(0.0 * o)  # component did not depend on the input
    return tuple(res)


def directional_derivative(g, y, v, h=None):
    """Jacobian-vector product ``dg(y) . v`` for a field-like map ``g``.

    ``y`` and ``v`` are arrays shaped ``(..., d)``; leading axes are
    vectorised through array-valued jet coefficients.
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    if y.shape != v.shape:
        raise ValueError("y and v must have identical shapes")
    d = y.shape[-1]
    comps = tuple(y[..., i] for i in range(d))
    vcomps = tuple(v[..., i] for i in range(d))
    out = dd_components(g, comps, vcomps, h)
    out = np.broadcast_arrays(*(np.asarray(o, dtype=float) for o in out))
    return np.stack(out, axis=-1)
