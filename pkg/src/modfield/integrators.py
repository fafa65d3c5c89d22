"""One-step integrators: explicit Runge-Kutta, implicit midpoint, DOPRI5.

Steppers call the field as ``field(y, h)``; plain vector fields ignore the
second argument, step-dependent fields (truncated or learned modified
fields) are evaluated at the step size actually taken.

Also provides order measurement from error sequences, the a-priori global
error bound for learned fields, and a grid-based Lipschitz estimator.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import jets
from .errors import FixedPointError, IntegrationFailureError, StageOverflowError


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    """Runge-Kutta coefficients ``(a, b, c)`` with declared order.

    ``b_emb``, when present, is the embedded lower-order weight vector used
    for error estimation (DOPRI5).
    """

    name: str
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int
    b_emb: np.ndarray = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        s = b.size
        if a.shape != (s, s) or c.shape != (s,):
            raise ValueError("inconsistent tableau shapes")
        if abs(b.sum() - 1.0) > 1e-13:
            raise ValueError("weights b must sum to 1")
        if np.max(np.abs(a.sum(axis=1) - c)) > 1e-13:
            raise ValueError("row sums of a must equal c")
        if self.b_emb is not None:
            be = np.asarray(self.b_emb, dtype=float)
            object.__setattr__(self, "b_emb", be)
            if be.shape != (s,) or abs(be.sum() - 1.0) > 1e-13:
                raise ValueError("invalid embedded weights")

    @property
    def stages(self):
        return self.b.size

    @property
    def is_explicit(self):
        return bool(np.all(np.triu(self.a) == 0.0))


def _dopri5_tableau():
    a = np.zeros((7, 7))
    a[1, 0] = 1 / 5
    a[2, :2] = [3 / 40, 9 / 40]
    a[3, :3] = [44 / 45, -56 / 15, 32 / 9]
    a[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
    a[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
    a[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
    b = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
    b_emb = np.array(
        [
            5179 / 57600,
            0.0,
            7571 / 16695,
            393 / 640,
            -92097 / 339200,
            187 / 2100,
            1 / 40,
        ]
    )
    c = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
    return ButcherTableau("dopri5", a, b, c, order=5, b_emb=b_emb)


_TABLEAUS = {
    "euler": ButcherTableau(
        "euler", np.zeros((1, 1)), np.array([1.0]), np.array([0.0]), order=1
    ),
    "rk2_midpoint": ButcherTableau(
        "rk2_midpoint",
        np.array([[0.0, 0.0], [0.5, 0.0]]),
        np.array([0.0, 1.0]),
        np.array([0.0, 0.5]),
        order=2,
    ),
    "rk2_heun": ButcherTableau(
        "rk2_heun",
        np.array([[0.0, 0.0], [1.0, 0.0]]),
        np.array([0.5, 0.5]),
        np.array([0.0, 1.0]),
        order=2,
    ),
    "midpoint": ButcherTableau(
        "midpoint", np.array([[0.5]]), np.array([1.0]), np.array([0.5]), order=2
    ),
    "dopri5": _dopri5_tableau(),
}

# "rk2" resolves to the variant matching the modified-field expansion; see
# the extraction cross-check in the modified-field tests.
_ALIASES = {"rk2": "rk2_midpoint"}


def scheme_names():
    return sorted(_TABLEAUS) + sorted(_ALIASES)


def canonical_scheme(name):
    return _ALIASES.get(name, name)


def get_tableau(name):
    """Tableau by name; implicit midpoint is included for its coefficients."""
    key = canonical_scheme(name)
    try:
        return _TABLEAUS[key]
    except KeyError:
        raise ValueError(
            f"unknown scheme {name!r}; available: {scheme_names()}"
        ) from None


def rk_step(tab, field, y, h):
    """One explicit Runge-Kutta step of size ``h`` from ``y``.

    Evaluates the field exactly ``tab.stages`` times.  Raises
    :class:`StageOverflowError` naming the stage if an evaluation goes
    non-finite.
    """
    if not tab.is_explicit:
        raise ValueError(f"tableau {tab.name!r} is not explicit")
    y = np.asarray(y, dtype=float)
    ks = []
    for i in range(tab.stages):
        yi = y
        for j in range(i):
            aij = tab.a[i, j]
            if aij != 0.0:
                yi = yi + (h * aij) * ks[j]
        ki = np.asarray(field(yi, h), dtype=float)
        if not np.all(np.isfinite(ki)):
            raise StageOverflowError(
                f"non-finite field value in stage {i} of {tab.name}", stage=i
            )
        ks.append(ki)
    acc = None
    for i in range(tab.stages):
        bi = tab.b[i]
        if bi != 0.0:
            acc = bi * ks[i] if acc is None else acc + bi * ks[i]
    if acc is None:
        return y.copy()
    return y + h * acc


def implicit_midpoint_step(
    field, y, h, fp_iters=50, fp_tol=1e-12, full_output=False
):
    """One implicit-midpoint step ``y1 = y + h f((y + y1)/2)``.

    The stage equation is solved by fixed-point iteration from ``z = y``;
    the iteration count and final residual are returned when
    ``full_output`` is set.  Raises :class:`FixedPointError` (carrying the
    residual) if the residual does not fall below ``fp_tol`` within
    ``fp_iters`` iterations.
    """
    y = np.asarray(y, dtype=float)
    z = y
    residual = np.inf
    for it in range(1, fp_iters + 1):
        z_new = y + h * np.asarray(field(0.5 * (y + z), h), dtype=float)
        if not np.all(np.isfinite(z_new)):
            raise FixedPointError(
                f"fixed point diverged after {it} iterations",
                residual=float("inf"),
                iterations=it,
            )
        residual = float(np.max(np.abs(z_new - z)))
        z = z_new
        if residual <= fp_tol:
            if full_output:
                return z, {"iterations": it, "residual": residual}
            return z
    raise FixedPointError(
        f"fixed point not converged after {fp_iters} iterations "
        f"(residual {residual:.3e} > {fp_tol:.3e})",
        residual=residual,
        iterations=fp_iters,
    )


def get_stepper(name):
    """Stepper ``(field, y, h) -> y_next`` by scheme name."""
    key = canonical_scheme(name)
    if key == "midpoint":
        return implicit_midpoint_step
    tab = get_tableau(key)

    def stepper(field, y, h):
        return rk_step(tab, field, y, h)

    stepper.__name__ = f"{key}_step"
    return stepper


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Discrete trajectory: ``states[n]`` is the state at ``times[n]``."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)
        if t.ndim != 1 or s.ndim != 2 or s.shape[0] != t.size:
            raise ValueError("need times (n,) and states (n, d)")

    def __len__(self):
        return self.times.size


def _annotate_step_error(exc, i):
    if isinstance(exc, StageOverflowError):
        raise StageOverflowError(
            f"step {i}: {exc}", stage=exc.stage, step_index=i
        ) from exc
    if isinstance(exc, FixedPointError):
        raise FixedPointError(
            f"step {i}: {exc}",
            residual=exc.residual,
            iterations=exc.iterations,
            step_index=i,
        ) from exc
    raise exc


def integrate(stepper, field, y0, h, n_steps):
    """Fixed-step integration: ``n_steps`` steps of size ``h``.

    ``times[n] = n*h``.  Stepper errors are re-raised with the failing
    step index attached.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    y = np.asarray(y0, dtype=float)
    states = np.empty((n_steps + 1, y.size))
    states[0] = y
    for i in range(n_steps):
        try:
            y = stepper(field, y, h)
        except (StageOverflowError, FixedPointError) as e:
            _annotate_step_error(e, i)
        states[i + 1] = y
    return Trajectory(np.arange(n_steps + 1) * float(h), states)


def integrate_variable(stepper, field, y0, steps):
    """Integration with the given sequence of step sizes.

    The field is evaluated at each step's own ``h``, so step-dependent
    fields see the step actually taken.
    """
    steps = np.asarray(steps, dtype=float)
    if steps.ndim != 1 or steps.size == 0:
        raise ValueError("steps must be a non-empty 1-D array")
    if np.any(steps <= 0):
        raise ValueError("all steps must be positive")
    y = np.asarray(y0, dtype=float)
    states = np.empty((steps.size + 1, y.size))
    states[0] = y
    for i, h in enumerate(steps):
        try:
            y = stepper(field, y, h)
        except (StageOverflowError, FixedPointError) as e:
            _annotate_step_error(e, i)
        states[i + 1] = y
    times = np.concatenate([[0.0], np.cumsum(steps)])
    return Trajectory(times, states)


# ---------------------------------------------------------------------------
# Adaptive DOPRI5
# ---------------------------------------------------------------------------

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 5.0
_BETA = 0.04  # PI stabilisation
_EXPO = 0.2 - 0.75 * _BETA


def adaptive_flow_batch(field, y0, t_end, atol, rtol, max_steps=200_000,
                        collect=False):
    """Integrate each row of ``y0`` to its own end time adaptively.

    Embedded Dormand-Prince 5(4) pair with a PI step-size controller
    (safety 0.9, step-ratio clamp [0.2, 5]).  Every record carries its own
    controller state, so results are bitwise identical to running records
    one at a time.

    Returns ``(y, ok, t_reached)``.  Records whose step size underflows are
    flagged ``ok=False`` with the last reached time; no exception is
    raised here so that callers may resample.

    With ``collect=True`` (single record only) additionally returns the
    accepted ``(times, states)`` history.
    """
    tab = _TABLEAUS["dopri5"]
    A, B, C = tab.a, tab.b, tab.c
    E = B - tab.b_emb
    n_stages = tab.stages

    y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    t_end = np.asarray(t_end, dtype=float)
    n = y0.shape[0]
    if t_end.shape != (n,):
        raise ValueError("t_end must have one entry per record")
    if collect and n != 1:
        raise ValueError("collect requires a single record")

    out_y = y0.copy()
    out_ok = np.ones(n, dtype=bool)
    out_reached = np.where(t_end > 0, 0.0, t_end)

    live = np.flatnonzero(t_end > 0)
    if live.size == 0:
        if collect:
            return out_y, out_ok, out_reached, (np.zeros(1), y0.copy())
        return out_y, out_ok, out_reached

    idx = live.copy()
    y = y0[idx]
    tend = t_end[idx]
    t = np.zeros(idx.size)

    def F(yv, hv):
        return np.asarray(field(yv, hv), dtype=float)

    # starting step heuristic (one Euler probe)
    sc = atol + rtol * np.abs(y)
    f0 = F(y, np.zeros(idx.size))
    d0 = np.sqrt(np.mean((y / sc) ** 2, axis=1))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2, axis=1))
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    h0 = np.minimum(h0, tend)
    f1 = F(y + h0[:, None] * f0, h0)
    d2 = np.sqrt(np.mean(((f1 - f0) / sc) ** 2, axis=1)) / h0
    dmax = np.maximum(d1, d2)
    h1 = np.where(dmax <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / dmax) ** 0.2)
    h = np.minimum(np.minimum(100.0 * h0, h1), tend)

    facold = np.full(idx.size, 1e-4)
    nsteps = np.zeros(idx.size, dtype=int)
    hist_t, hist_y = [0.0], [y0[0].copy()]

    while idx.size:
        nsteps += 1
        final = h >= tend - t
        h_try = np.where(final, tend - t, h)

        ks = np.empty((n_stages, idx.size, y.shape[1]))
        for i in range(n_stages):
            yi = y.copy()
            for j in range(i):
                aij = A[i, j]
                if aij != 0.0:
                    yi += (h_try * aij)[:, None] * ks[j]
            ks[i] = F(yi, h_try)
        y_new = y + h_try[:, None] * np.einsum("s,snd->nd", B, ks)
        err_vec = h_try[:, None] * np.einsum("s,snd->nd", E, ks)

        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            err = np.sqrt(np.mean((err_vec / sc) ** 2, axis=1))
        bad = ~np.isfinite(err) | ~np.all(np.isfinite(y_new), axis=1)
        err = np.where(bad, np.inf, np.maximum(err, 1e-300))

        accept = err <= 1.0
        with np.errstate(over="ignore"):
            fac = err ** (-_EXPO)
        grow = np.clip(_SAFETY * fac * facold**_BETA, _FAC_MIN, _FAC_MAX)
        shrink = np.clip(_SAFETY * fac, _FAC_MIN, 1.0)

        t = np.where(accept, t + h_try, t)
        y = np.where(accept[:, None], y_new, y)
        facold = np.where(accept, np.maximum(err, 1e-4), facold)
        h = np.where(accept, h_try * grow, h_try * shrink)

        if collect and accept[0]:
            hist_t.append(float(t[0]))
            hist_y.append(y[0].copy())

        done = accept & final
        t = np.where(done, tend, t)
        h_floor = 1e-13 * np.maximum(1.0, tend)
        failed = ~done & ((h < h_floor) | (nsteps >= max_steps))

        if np.any(done) or np.any(failed):
            out_y[idx] = y
            out_reached[idx] = t
            out_ok[idx[failed]] = False
            keep = ~(done | failed)
            idx, y, t, tend, h, facold, nsteps = (
                idx[keep], y[keep], t[keep], tend[keep],
                h[keep], facold[keep], nsteps[keep],
            )

    if collect:
        return out_y, out_ok, out_reached, (np.array(hist_t), np.array(hist_y))
    return out_y, out_ok, out_reached


def dopri5_integrate(field, y0, t_end, atol, rtol):
    """Adaptive DOPRI5 trajectory from 0 to ``t_end`` (accepted steps).

    Raises :class:`IntegrationFailureError` carrying the last reached time
    on step-size underflow.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.ndim != 1:
        raise ValueError("y0 must be a 1-D state vector")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    _, ok, reached, (ts, ys) = adaptive_flow_batch(
        field, y0[None, :], np.array([float(t_end)]), atol, rtol, collect=True
    )
    if not ok[0]:
        raise IntegrationFailureError(
            f"step size underflow at t={reached[0]:.6g} (target {t_end:.6g})",
            t_reached=float(reached[0]),
        )
    return Trajectory(ts, ys)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def order_estimate(errors, hs):
    """Least-squares slope of log error against log step size."""
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if errors.shape != hs.shape or errors.ndim != 1 or errors.size < 2:
        raise ValueError("need matching 1-D arrays with at least 2 entries")
    if np.any(hs <= 0) or np.any(np.diff(hs) >= 0):
        raise ValueError("hs must be positive and strictly decreasing")
    if np.any(errors <= 0) or not np.all(np.isfinite(errors)):
        raise ValueError("errors must be positive and finite")
    slope, _ = np.polyfit(np.log(hs), np.log(errors), 1)
    return float(slope)


@dataclass(frozen=True)
class ErrorBoundInputs:
    """Inputs of the a-priori global error bound for a learned field.

    ``delta`` is the learning error (sup of |f_tilde - f_app|/h^p), ``lam``
    the Lipschitz bound of the learned field on the domain, ``h_plus`` the
    top of the training step range, ``T`` the integration horizon and
    ``tableau`` the scheme the bound is evaluated for.
    """

    delta: float
    lam: float
    h_plus: float
    T: float
    tableau: ButcherTableau

    def __post_init__(self):
        if self.delta < 0 or self.lam < 0 or self.h_plus <= 0 or self.T <= 0:
            raise ValueError("need delta, lam >= 0 and h_plus, T > 0")


def _expm1_over(x):
    """(e^x - 1)/x, continuous at 0."""
    if x == 0.0:
        return 1.0
    return math.expm1(x) / x


def theorem_bound(inputs, h):
    """Global error bound ``max_n |e_n|`` at step size ``h``.

    General form ``(C delta h^p / L)(e^{LT} - 1)`` with ``C = alpha``,
    ``L = alpha * lam`` and
    ``alpha = |b|_1 (1 + lam h_+ |A|_inf e^{lam h_+ |A|_inf})``.
    Euler and the explicit RK2 tableaus use their sharper constants; the
    ``lam -> 0`` limit is taken continuously.
    """
    if not (0 < h <= inputs.h_plus):
        raise ValueError("need 0 < h <= h_plus")
    tab = inputs.tableau
    delta, lam, T = inputs.delta, inputs.lam, inputs.T
    p = tab.order
    if tab.name == "euler":
        return delta * h * T * _expm1_over(lam * T)
    if tab.name in ("rk2_midpoint", "rk2_heun"):
        # (delta h^2 / lam)(e^{lam(1 + lam h_+/2)T} - 1), written through
        # expm1(x)/x so the lam -> 0 limit is delta h^2 T
        stretch = 1.0 + lam * inputs.h_plus / 2.0
        return delta * h**2 * T * stretch * _expm1_over(lam * stretch * T)
    b_norm = float(np.sum(np.abs(tab.b)))
    a_norm = float(np.max(np.sum(np.abs(tab.a), axis=1)))
    z = lam * inputs.h_plus * a_norm
    alpha = b_norm * (1.0 + z * math.exp(z))
    return alpha * delta * h**p * T * _expm1_over(alpha * lam * T)


def box_grid(box, grid_n):
    """Uniform grid over a box, endpoints included: ``(grid_n^d, d)``."""
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    axes = [np.linspace(lo, up, grid_n) for lo, up in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def estimate_lipschitz(g, box, grid_n, h=None):
    """Grid estimate of ``max_y ||dg(y)||_inf`` over the box.

    Jacobians come from jet directional derivatives along the coordinate
    directions; the operator infinity norm is the maximum absolute row
    sum.  A lower estimate, nondecreasing in ``grid_n``.
    """
    pts = box_grid(box, grid_n)
    d = pts.shape[1]
    row_sums = 0.0
    for j in range(d):
        e = np.zeros_like(pts)
        e[:, j] = 1.0
        col = jets.directional_derivative(g, pts, e, h)
        row_sums = row_sums + np.abs(col)
    return float(np.max(row_sums))
