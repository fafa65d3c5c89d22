"""Dataset generation, training loops, and the per-term alternative method.

Data records are exact one-step flows: ``y1 = flow(y0, h)`` with ``y0``
uniform on a box (optionally restricted to a norm shell) and ``log h``
uniform on ``[log h_min, log h_max]``.  Record ``i`` draws from its own
generator seeded ``[seed, i]``, so the dataset is reproducible and
independent of chunking or worker count.  Failed reference flows are
resampled from the same per-record stream and counted.

The standard method trains all networks jointly through the integrator
step.  The alternative method first extracts per-term targets from flows
at several step sizes by least squares, then regresses each network
independently (parallelizable, one job per network).
"""

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import neural
from .errors import ConditioningError, IntegrationFailureError, TrainingDivergedError
from .integrators import adaptive_flow_batch, box_grid, canonical_scheme
from .systems import DomainBox, get_system


class DatasetRecord(NamedTuple):
    y0: np.ndarray
    h: float
    y1: np.ndarray


@dataclass
class Dataset:
    """Array-backed sequence of (y0, h, y1) records."""

    y0: np.ndarray
    h: np.ndarray
    y1: np.ndarray
    system: str = ""
    scheme: str = ""
    tol: float = 0.0
    resampled: int = 0

    def __post_init__(self):
        self.y0 = np.atleast_2d(np.asarray(self.y0, dtype=float))
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        self.y1 = np.atleast_2d(np.asarray(self.y1, dtype=float))
        if not (len(self.y0) == len(self.h) == len(self.y1)):
            raise ValueError("y0, h, y1 lengths differ")

    @property
    def dim(self):
        return self.y0.shape[1]

    def __len__(self):
        return self.y0.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return DatasetRecord(self.y0[i], float(self.h[i]), self.y1[i])
        return self.subset(np.arange(len(self))[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx):
        return Dataset(self.y0[idx], self.h[idx], self.y1[idx],
                       self.system, self.scheme, self.tol, 0)


@dataclass
class TrainConfig:
    """Flat experiment configuration; serialized as ``key=value`` lines."""

    system: str = "pendulum"
    scheme: str = "euler"
    p: int = 1
    omega_lower: tuple = (-2.0, -2.0)
    omega_upper: tuple = (2.0, 2.0)
    omega_shell: tuple = None  # (r_min, r_max) norm restriction, or None
    h_min: float = 0.1
    h_max: float = 2.5
    n_records: int = 100_000
    train_fraction: float = 0.8
    n_terms: int = 1
    hidden: tuple = (50, 50)
    learning_rate: float = 2e-3
    weight_decay: float = 1e-9
    batch_size: int = 300
    epochs: int = 50
    print_every: int = 10
    seed: int = 1234
    tol: float = 1e-10
    n_steps: int = 5  # step-grid size N_h for the alternative method

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must be in (0, 1)")
        if not (0.0 < self.h_min < self.h_max):
            raise ValueError("need 0 < h_min < h_max")
        if self.n_records < 0:
            raise ValueError("n_records must be >= 0")
        if self.p < 1 or self.n_terms < 1 or self.n_steps < 1:
            raise ValueError("p, n_terms, n_steps must be >= 1")

    def domain(self):
        return DomainBox(np.asarray(self.omega_lower, dtype=float),
                         np.asarray(self.omega_upper, dtype=float),
                         shell=self.omega_shell)


def _field_type(f):
    return f.type if isinstance(f.type, type) else None


def format_config(cfg):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            lines.append(f"{f.name}=")
        elif isinstance(v, (tuple, list)):
            lines.append(f"{f.name}=" + ",".join(format(float(x), "g") for x in v))
        else:
            lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def parse_config(text, base=None):
    """Parse ``key=value`` lines into a TrainConfig (defaults from ``base``)."""
    cfg = base or TrainConfig()
    by_name = {f.name: f for f in fields(cfg)}
    updates = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in by_name:
            raise ValueError(f"config line {ln}: unknown key {key!r}")
        default = getattr(TrainConfig(), key)
        if val == "":
            updates[key] = None
        elif isinstance(default, bool):
            updates[key] = val.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            updates[key] = int(val)
        elif isinstance(default, float):
            updates[key] = float(val)
        elif isinstance(default, tuple) or key in ("omega_shell", "hidden"):
            parts = [p for p in val.split(",") if p.strip() != ""]
            conv = int if key == "hidden" else float
            updates[key] = tuple(conv(p) for p in parts)
        else:
            updates[key] = val
    return replace(cfg, **updates)


def save_config(cfg, path):
    Path(path).write_text(format_config(cfg))


def load_config(path, base=None):
    return parse_config(Path(path).read_text(), base=base)


# Desk-scale presets run in minutes; the full-scale presets reproduce the
# published configurations and take hours to days.
PRESETS = {
    "desk-pendulum-euler": TrainConfig(),
    "desk-pendulum-rk2": TrainConfig(
        scheme="rk2", p=2, learning_rate=5e-4),
    "desk-pendulum-midpoint": TrainConfig(
        scheme="midpoint", p=2, h_min=0.05, h_max=0.5),
    "desk-rigid-body-euler": TrainConfig(
        system="rigid_body", omega_lower=(-2.0, -2.0, -2.0),
        omega_upper=(2.0, 2.0, 2.0), omega_shell=(0.98, 1.02),
        h_min=0.5, h_max=2.5),
    # the per-term route needs more optimisation steps to reach the same
    # accuracy from the same record budget: it sees 5 fixed step sizes
    # instead of a fresh random h per record
    "desk-pendulum-compare-std": TrainConfig(
        h_min=0.01, h_max=0.5, n_records=50_000, n_terms=3,
        batch_size=100, epochs=50, n_steps=5),
    "desk-pendulum-compare-alt": TrainConfig(
        h_min=0.01, h_max=0.5, n_records=50_000, n_terms=3,
        batch_size=100, epochs=200, n_steps=5),
    "paper-pendulum-euler": TrainConfig(
        n_records=25_000_000, hidden=(200, 200), epochs=200, print_every=20),
    "paper-pendulum-rk2": TrainConfig(
        scheme="rk2", p=2, n_records=100_000_000, hidden=(250, 250),
        learning_rate=5e-4, epochs=200, print_every=20),
    "paper-pendulum-midpoint": TrainConfig(
        scheme="midpoint", p=2, h_min=0.05, h_max=0.5,
        n_records=20_000_000, hidden=(200, 200), epochs=200, print_every=20),
    "paper-rigid-body-euler": TrainConfig(
        system="rigid_body", omega_lower=(-2.0, -2.0, -2.0),
        omega_upper=(2.0, 2.0, 2.0), omega_shell=(0.98, 1.02),
        h_min=0.5, h_max=2.5, n_records=100_000_000, hidden=(250, 250),
        epochs=200, print_every=20),
    "paper-pendulum-compare-std": TrainConfig(
        h_min=0.01, h_max=0.5, n_records=50_000, n_terms=3,
        batch_size=100, epochs=200, print_every=20, n_steps=5),
    "paper-pendulum-compare-alt": TrainConfig(
        h_min=0.01, h_max=0.5, n_records=76_129, n_terms=3,
        batch_size=100, epochs=200, print_every=20, n_steps=5),
}


def get_preset(name):
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise KeyError(f"unknown preset {name!r}; available: {known}")
    return replace(PRESETS[name])


# -- dataset generation --------------------------------------------------


def _draw_state(rng, box):
    for _ in range(10_000):
        x = rng.uniform(box.lower, box.upper)
        if box.shell is None:
            return x
        r = float(np.linalg.norm(x))
        if box.shell[0] <= r <= box.shell[1]:
            return x
    raise RuntimeError("domain shell rejection did not terminate")


def _draw_pair(rng, box, log_lo, log_hi):
    y0 = _draw_state(rng, box)
    h = math.exp(rng.uniform(log_lo, log_hi))
    return y0, h


def _generate_range(cfg, start, stop):
    """Records [start, stop) of the dataset; pure function of cfg."""
    field_ = get_system(cfg.system)
    box = cfg.domain()
    log_lo, log_hi = math.log(cfg.h_min), math.log(cfg.h_max)
    n = stop - start
    rngs = [np.random.default_rng([cfg.seed, i]) for i in range(start, stop)]
    y0 = np.empty((n, field_.dim))
    h = np.empty(n)
    for k, rng in enumerate(rngs):
        y0[k], h[k] = _draw_pair(rng, box, log_lo, log_hi)
    y1 = np.empty_like(y0)
    pending = np.arange(n)
    resampled = 0
    for _ in range(100):
        out, ok, _reached = adaptive_flow_batch(
            field_, y0[pending], h[pending], cfg.tol, cfg.tol)
        y1[pending[ok]] = out[ok]
        failed = pending[~ok]
        if failed.size == 0:
            return y0, h, y1, resampled
        resampled += failed.size
        for k in failed:
            y0[k], h[k] = _draw_pair(rngs[k], box, log_lo, log_hi)
        pending = failed
    raise IntegrationFailureError(
        f"{pending.size} records kept failing after 100 resampling rounds")


def generate_dataset(cfg, workers=1):
    """K exact-flow records, reproducible from ``cfg.seed`` alone."""
    field_ = get_system(cfg.system)
    K = int(cfg.n_records)
    if K == 0:
        empty = np.empty((0, field_.dim))
        return Dataset(empty, np.empty(0), empty.copy(),
                       cfg.system, cfg.scheme, cfg.tol, 0)
    chunk = 20_000
    ranges = [(s, min(s + chunk, K)) for s in range(0, K, chunk)]
    if workers > 1 and len(ranges) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_generate_range,
                                  [cfg] * len(ranges),
                                  [r[0] for r in ranges],
                                  [r[1] for r in ranges]))
    else:
        parts = [_generate_range(cfg, s, e) for s, e in ranges]
    y0 = np.concatenate([p[0] for p in parts])
    h = np.concatenate([p[1] for p in parts])
    y1 = np.concatenate([p[2] for p in parts])
    resampled = sum(p[3] for p in parts)
    return Dataset(y0, h, y1, cfg.system, cfg.scheme, cfg.tol, resampled)


def _f17(x):
    return format(float(x), ".17g")


def save_dataset(ds, path):
    d = ds.dim
    cols = [f"y0_{i + 1}" for i in range(d)] + ["h"] + \
        [f"y1_{i + 1}" for i in range(d)]
    with open(path, "w") as fh:
        fh.write("# d,system,scheme,tol\n")
        fh.write(f"# {d},{ds.system},{ds.scheme},{_f17(ds.tol)}\n")
        fh.write(",".join(cols) + "\n")
        for i in range(len(ds)):
            row = [*ds.y0[i], ds.h[i], *ds.y1[i]]
            fh.write(",".join(_f17(v) for v in row) + "\n")


def load_dataset(path):
    with open(path) as fh:
        head = fh.readline()
        meta = fh.readline()
        if not head.startswith("#") or not meta.startswith("#"):
            raise ValueError(f"{path}: missing dataset comment header")
        d_str, system, scheme, tol_str = meta[1:].strip().split(",")
        d = int(d_str)
        header = fh.readline().strip().split(",")
        if len(header) != 2 * d + 1:
            raise ValueError(f"{path}: expected {2 * d + 1} columns")
        rows = [np.fromstring(line, sep=",") for line in fh if line.strip()]
    data = np.array(rows).reshape(-1, 2 * d + 1)
    return Dataset(data[:, :d], data[:, d], data[:, d + 1:],
                   system, scheme, float(tol_str), 0)


def split_dataset(ds, fraction, seed):
    """Deterministic shuffle, first ``floor(fraction*K)`` records train."""
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n0 = int(math.floor(fraction * len(ds)))
    return ds.subset(perm[:n0]), ds.subset(perm[n0:])


# -- training -------------------------------------------------------------


@dataclass
class LossReport:
    """Full-set train/test losses after each epoch, plus starting values."""

    train_losses: list = field(default_factory=list)
    test_losses: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    initial_train: float = None
    initial_test: float = None

    def __post_init__(self):
        if not (len(self.train_losses) == len(self.test_losses)
                == len(self.seconds)):
            raise ValueError("per-epoch lists must have equal length")


def _full_loss(model, scheme, ds, chunk=100_000):
    if len(ds) == 0:
        return 0.0
    total = 0.0
    for s in range(0, len(ds), chunk):
        part = ds.subset(np.arange(s, min(s + chunk, len(ds))))
        total += neural.step_loss(model, scheme, part) * len(part)
    return total / len(ds)


def train(model, scheme, train_set, test_set, cfg):
    """Mini-batch Adam on the one-step loss; deterministic from cfg.seed.

    Mutates ``model`` in place and returns ``(model, LossReport)``.  The
    report carries full-set losses after every epoch; divergence aborts
    with the (epoch, batch, record) coordinates attached.
    """
    scheme = canonical_scheme(scheme)
    report = LossReport(
        initial_train=_full_loss(model, scheme, train_set),
        initial_test=_full_loss(model, scheme, test_set))
    if cfg.epochs == 0:
        return model, report
    params = model.parameters()
    state = neural.AdamState.for_params(params, cfg.learning_rate,
                                        cfg.weight_decay)
    shuffle_rng = np.random.default_rng([cfg.seed, 977])
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        for bi, s in enumerate(range(0, n, cfg.batch_size)):
            batch = train_set.subset(perm[s:s + cfg.batch_size])
            try:
                _loss, grads = neural.step_loss_and_grad(model, scheme, batch)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}, batch {bi}: {exc}",
                    epoch=epoch, batch=bi, record=exc.record) from exc
            neural.adam_update(params, grads, state)
        lt = _full_loss(model, scheme, train_set)
        lv = _full_loss(model, scheme, test_set)
        report.train_losses.append(lt)
        report.test_losses.append(lv)
        report.seconds.append(time.perf_counter() - t0)
        if cfg.print_every and (epoch % cfg.print_every == 0
                                or epoch == cfg.epochs):
            print(f"[epoch {epoch:4d}] loss_train={lt:.6e} loss_test={lv:.6e}")
    return model, report


# -- alternative (per-term) method ----------------------------------------


def alt_extract_targets(field_, y0, steps, n_terms, p, tol=1e-12, flows=None):
    """Per-term targets at one state from flows over several step sizes.

    With ``d_j = y_j - y0 - h_j f(y0)``, fits ``d_j`` against the
    monomials ``h_j^{p+1}, ..., h_j^{n_terms+p-1}`` componentwise through
    the pseudoinverse and scales the residual at each step by
    ``h_j^{-(n_terms+p)}``.  Returns ``(coeffs, r_targets)`` shaped
    ``(n_terms-1, d)`` and ``(len(steps), d)``.  ``flows`` overrides the
    reference flows (for constructed data).
    """
    y0 = np.asarray(y0, dtype=float)
    c, r = alt_extract_targets_batch(field_, y0[None], steps, n_terms, p,
                                     tol=tol,
                                     flows=None if flows is None
                                     else np.asarray(flows, dtype=float)[None])
    return c[0], r[0]


def _alt_design(steps, n_terms, p):
    steps = np.asarray(steps, dtype=float)
    if steps.ndim != 1 or np.any(steps <= 0) or np.any(np.diff(steps) <= 0):
        raise ValueError("steps must be positive and strictly increasing")
    if steps.size < n_terms - 1:
        raise ValueError("need at least n_terms - 1 step sizes")
    powers = np.arange(p + 1, n_terms + p)
    design = steps[:, None] ** powers[None, :]
    if design.size:
        cond = np.linalg.cond(design / np.abs(design).max(axis=0))
        if cond > 1e12:
            raise ConditioningError(
                f"step design matrix condition {cond:.2e} > 1e12; "
                "spread the steps over a wider range")
    return steps, design


def alt_extract_targets_batch(field_, y0, steps, n_terms, p,
                              tol=1e-12, flows=None):
    """Vectorized target extraction for ``y0`` of shape ``(K, d)``.

    Returns ``coeffs (K, n_terms-1, d)`` and ``r_targets (K, len(steps), d)``.
    """
    y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    K, d = y0.shape
    steps, design = _alt_design(steps, n_terms, p)
    nh = steps.size
    if flows is None:
        Y = np.repeat(y0, nh, axis=0)
        T = np.tile(steps, K)
        out, ok, reached = adaptive_flow_batch(field_, Y, T, tol, tol)
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise IntegrationFailureError(
                f"reference flow failed at state {bad // nh}, "
                f"step {steps[bad % nh]}", t_reached=float(reached[bad]))
        flows = out.reshape(K, nh, d)
    else:
        flows = np.asarray(flows, dtype=float).reshape(K, nh, d)
    f0 = field_(y0)
    defect = flows - y0[:, None, :] - steps[None, :, None] * f0[:, None, :]
    if n_terms == 1:
        coeffs = np.zeros((K, 0, d))
        fitted = 0.0
    else:
        # column scaling keeps the shared pseudoinverse well behaved when
        # monomial columns span many orders of magnitude
        scale = np.abs(design).max(axis=0)
        pinv = np.linalg.pinv(design / scale) / scale[:, None]
        coeffs = np.einsum("mj,kjd->kmd", pinv, defect)
        fitted = np.einsum("jm,kmd->kjd", design, coeffs)
    resid = defect - fitted
    r_targets = resid / (steps[None, :, None] ** (n_terms + p))
    return coeffs, r_targets


def _regress_job(args):
    """Train one network against fixed targets; pure function of args."""
    (sizes, weights, biases, X, T, lr, wd, batch_size, epochs, seed) = args
    net = neural.MlpParams(list(sizes), [w.copy() for w in weights],
                           [b.copy() for b in biases])
    params = []
    for w, b in zip(net.weights, net.biases):
        params.extend((w, b))
    state = neural.AdamState.for_params(params, lr, wd)
    rng = np.random.default_rng(seed)
    n = len(X)
    losses = []
    from . import _tape
    ones = None
    for _epoch in range(epochs):
        perm = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = perm[s:s + batch_size]
            xb, tb = X[idx], T[idx]
            leaves = [_tape.Var(q) for q in params]
            layers = [(leaves[2 * i], leaves[2 * i + 1])
                      for i in range(len(net.weights))]
            pred = neural._tape_mlp(layers, _tape.const(xb))
            if ones is None or len(ones) != len(idx):
                ones = np.ones(len(idx))
            loss = _tape.weighted_sumsq(pred - tb, ones) * (1.0 / len(idx))
            if not np.isfinite(loss.value):
                raise TrainingDivergedError(
                    "regression loss is not finite", record=int(idx[0]))
            _tape.backward(loss)
            grads = [lf.grad if lf.grad is not None else np.zeros_like(lf.value)
                     for lf in leaves]
            neural.adam_update(params, grads, state)
        err = neural.mlp_forward(net, X) - T
        losses.append(float(np.mean(np.sum(err**2, axis=-1))))
    return net.weights, net.biases, losses


def alt_train(nets, term_data, remainder_data, cfg, workers=1):
    """Independently regress each term net and the remainder net.

    ``nets`` holds n_terms-1 term networks (d -> d) plus the remainder
    network ((d+1) -> d) last.  ``term_data = (X, C)`` with targets ``C``
    shaped (n_terms-1, K, d); ``remainder_data = (XR, R)`` with the step
    appended to the state in ``XR``.  Job ``j`` shuffles with seed
    ``[cfg.seed, 50+j]``, so results do not depend on execution order or
    worker count.  Returns ``(nets, per-net MSE histories)``.
    """
    X, C = term_data
    XR, R = remainder_data
    if len(nets) != len(C) + 1:
        raise ValueError("need one net per term plus the remainder net")
    jobs = []
    for j, net in enumerate(nets):
        data_x, data_t = (X, C[j]) if j < len(C) else (XR, R)
        jobs.append((tuple(net.layer_sizes), net.weights, net.biases,
                     np.asarray(data_x, dtype=float),
                     np.asarray(data_t, dtype=float),
                     cfg.learning_rate, cfg.weight_decay,
                     cfg.batch_size, cfg.epochs, [cfg.seed, 50 + j]))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_regress_job, jobs))
    else:
        results = [_regress_job(j) for j in jobs]
    histories = []
    for net, (ws, bs, losses) in zip(nets, results):
        for w, new in zip(net.weights, ws):
            w[...] = new
        for b, new in zip(net.biases, bs):
            b[...] = new
        histories.append(losses)
    return nets, histories


def build_alt_training_data(cfg, workers=1):
    """Sample base states, extract per-term and remainder targets.

    Uses ``cfg.n_records`` base states (per-record seeds ``[seed, i]`` as
    in generate_dataset) and the log-spaced step grid
    ``geomspace(h_min, h_max, cfg.n_steps)``.  Returns
    ``(X, C, XR, R, steps)``.
    """
    field_ = get_system(cfg.system)
    box = cfg.domain()
    K = int(cfg.n_records)
    rngs = [np.random.default_rng([cfg.seed, i]) for i in range(K)]
    X = np.empty((K, field_.dim))
    for i, rng in enumerate(rngs):
        X[i] = _draw_state(rng, box)
    steps = np.geomspace(cfg.h_min, cfg.h_max, cfg.n_steps)
    C, R = alt_extract_targets_batch(field_, X, steps, cfg.n_terms, cfg.p,
                                     tol=cfg.tol)
    C = np.swapaxes(C, 0, 1)  # (n_terms-1, K, d)
    XR = np.concatenate([np.repeat(X, len(steps), axis=0),
                         np.tile(steps, K)[:, None]], axis=1)
    R = R.reshape(K * len(steps), field_.dim)
    return X, C, XR, R, steps


def assemble_alt_model(base, scheme, p, n_terms, nets):
    return neural.ModifiedFieldModel(base, scheme, p, n_terms,
                                     list(nets[:-1]), nets[-1])


# -- diagnostics -----------------------------------------------------------


def learning_error_delta(model, reference, box, grid_n, h_list):
    """Max over grid and steps of ``|reference(x,h) - model(x,h)| / h^p``
    (max norm over components)."""
    X = box_grid(box, grid_n)
    worst = 0.0
    for h in np.asarray(h_list, dtype=float):
        diff = np.abs(reference(X, h) - model.eval(X, h)).max()
        worst = max(worst, float(diff) / h**model.p)
    return worst
