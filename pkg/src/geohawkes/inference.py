"""Stochastic variational EM for the latent-community spatio-temporal Hawkes model.

The ELBO decomposes into an excitation term (Monte-Carlo over community
samples), closed-form prior/category terms, the survival integral and the
entropy of the factorized variational posterior.  phi gradients use the
score-function estimator; all positivity and simplex constraints are kept by
optimizing log / logit parameterizations.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    PROB_FLOOR,
    HyperParams,
    ModelParams,
    Region,
    Trace,
    spatial_peak,
    spatial_radial_mass,
)

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8

PARAM_BLOCKS = ("mu", "eta", "A", "theta", "pi", "phi")


class FitError(RuntimeError):
    """Raised when optimization produces non-finite values."""


# ---------------------------------------------------------------------------
# survival-integral quadrature
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def spatial_rect_integral(center, h: float, region: Region,
                          kind: str = "exponential_distance",
                          n_nodes: int = 48) -> float:
    """Integral of the spatial kernel centered at ``center`` over the region.

    Uses polar coordinates about the center: the radial integral has a closed
    form (spatial_radial_mass), leaving four smooth angular segments handled
    by Gauss-Legendre quadrature.  The center must lie inside the rectangle,
    which holds for every venue by the trace invariants.
    """
    cx, cy = float(center[0]), float(center[1])
    right = region.x_max - cx
    top = region.y_max - cy
    left = cx - region.x_min
    bottom = cy - region.y_min
    if min(right, top, left, bottom) < -1e-12:
        raise ValueError("kernel center lies outside the region")
    right, top = max(right, 0.0), max(top, 0.0)
    left, bottom = max(left, 0.0), max(bottom, 0.0)

    a_tr = math.atan2(top, right)
    a_tl = math.atan2(top, -left)
    a_bl = math.atan2(-bottom, -left)
    a_br = math.atan2(-bottom, right)
    nodes, wts = _leggauss(n_nodes)

    # (lo, hi, distance to the facing side, +-cos/sin selector)
    segments = (
        (a_br, a_tr, right, "cos", 1.0),
        (a_tr, a_tl, top, "sin", 1.0),
        (a_tl, math.pi, left, "cos", -1.0),
        (-math.pi, a_bl, left, "cos", -1.0),
        (a_bl, a_br, bottom, "sin", -1.0),
    )
    total = 0.0
    n_panels = 8   # composite rule: R(theta) ~ 1/cos develops sharp knees
    for lo, hi, dist, fn, sign in segments:
        if hi - lo <= 1e-15:
            continue
        edges = np.linspace(lo, hi, n_panels + 1)
        for p_lo, p_hi in zip(edges[:-1], edges[1:]):
            span = p_hi - p_lo
            th = 0.5 * span * nodes + 0.5 * (p_hi + p_lo)
            denom = sign * (np.cos(th) if fn == "cos" else np.sin(th))
            with np.errstate(divide="ignore", over="ignore"):
                R = np.where(denom > 0, dist / np.maximum(denom, 1e-300), np.inf)
            total += 0.5 * span * float(
                np.sum(wts * spatial_radial_mass(R, h, kind)))
    return total


# ---------------------------------------------------------------------------
# precomputed trace structures
# ---------------------------------------------------------------------------

class TraceOps:
    """Kernel pairs and survival pieces for one (trace, hyper) combination.

    Pair (k, n) exists for every strictly earlier event k whose kernel value
    kappa_t * kappa_s at event n clears ``hyper.pair_threshold`` (0 keeps all
    pairs, which is exact).
    """

    def __init__(self, trace: Trace, hyper: HyperParams):
        self.trace = trace
        self.hyper = hyper
        self.n = trace.n_events
        self.I = trace.n_users
        self.V = trace.n_categories
        self.users = trace.users
        self.cats = trace.categories
        self.T = trace.region.t_end
        self.area = trace.region.area
        self.h_users = hyper.h_for_users(self.I)
        self._build_pairs()
        self._build_survival()
        self.user_counts = np.bincount(self.users, minlength=self.I).astype(float)
        uc = np.zeros((self.I, self.V))
        np.add.at(uc, (self.users, self.cats), 1.0)
        self.user_cat_counts = uc

    def _build_pairs(self):
        times = self.trace.times
        xy = self.trace.xy
        users = self.users
        nu = self.hyper.nu
        kind = self.hyper.kernel
        thr = self.hyper.pair_threshold
        if thr > 0:
            peak = max(spatial_peak(h, kind) for h in np.unique(self.h_users))
            dt_max = math.log(peak / thr) / nu if peak > thr else 0.0
        else:
            dt_max = math.inf
        src_parts, dst_parts, ker_parts = [], [], []
        for n in range(self.n):
            end = int(np.searchsorted(times, times[n], side="left"))
            start = 0
            if math.isfinite(dt_max):
                start = int(np.searchsorted(times, times[n] - dt_max, side="left"))
            if end <= start:
                continue
            k = np.arange(start, end)
            kt = np.exp(-nu * (times[n] - times[k]))
            d = np.hypot(xy[k, 0] - xy[n, 0], xy[k, 1] - xy[n, 1])
            hs = self.h_users[users[k]]
            if kind == "exponential_distance":
                ks = np.exp(-d / (2.0 * hs)) / (2.0 * math.pi * hs)
            else:
                ks = np.exp(-(d * d) / (2.0 * hs * hs)) / (2.0 * math.pi * hs * hs)
            kappa = kt * ks
            if thr > 0:
                keep = kappa >= thr
                k, kappa = k[keep], kappa[keep]
            if k.size:
                src_parts.append(k.astype(np.int32))
                dst_parts.append(np.full(k.size, n, dtype=np.int32))
                ker_parts.append(kappa)
        if src_parts:
            self.pair_src = np.concatenate(src_parts)
            self.pair_dst = np.concatenate(dst_parts)
            self.pair_kernel = np.concatenate(ker_parts)
        else:
            self.pair_src = np.empty(0, dtype=np.int32)
            self.pair_dst = np.empty(0, dtype=np.int32)
            self.pair_kernel = np.empty(0)
        self.pair_src_user = users[self.pair_src].astype(np.int64)
        self.pair_dst_user = users[self.pair_dst].astype(np.int64)
        self.pair_flat_user = self.pair_src_user * self.I + self.pair_dst_user
        self.n_pairs = self.pair_src.size

    def _build_survival(self):
        nu = self.hyper.nu
        times = self.trace.times
        self.t_integral = (1.0 - np.exp(-nu * (self.T - times))) / nu
        cache = {}
        s_int = np.empty(self.n)
        for n in range(self.n):
            vid = int(self.trace.venue_ids[n])
            h = float(self.h_users[self.users[n]])
            key = (vid, h)
            if key not in cache:
                cache[key] = spatial_rect_integral(
                    self.trace.venues.xy[vid], h, self.trace.region,
                    self.hyper.kernel, self.hyper.quad_nodes)
            s_int[n] = cache[key]
        self.s_integral = s_int
        self.surv_event = self.t_integral * s_int
        # d(survival)/dA[j, i] = surv_row[j] for every column i
        self.surv_row = np.bincount(self.users, weights=self.surv_event,
                                    minlength=self.I)

    # -- per-assignment event intensities -----------------------------------

    def event_lambda(self, params: ModelParams, g: np.ndarray) -> np.ndarray:
        """Per-event intensity at the event's own community assignment."""
        lam = params.mu[self.users] * params.eta[g]
        if self.n_pairs:
            match = g[self.pair_src] == g[self.pair_dst]
            w = params.A.ravel()[self.pair_flat_user] * self.pair_kernel
            lam = lam + np.bincount(self.pair_dst, weights=np.where(match, w, 0.0),
                                    minlength=self.n)
        return lam

    def event_loglam(self, params: ModelParams, g: np.ndarray) -> np.ndarray:
        return np.log(np.maximum(self.event_lambda(params, g), PROB_FLOOR))


def expected_intensity_matrix(params: ModelParams, hyper: HyperParams,
                              trace: Trace, ops: Optional[TraceOps] = None) -> np.ndarray:
    """(N, M) matrix of lambda-tilde: history indicators replaced by phi weights."""
    ops = ops or TraceOps(trace, hyper)
    M = params.n_communities
    out = np.outer(params.mu[ops.users], params.eta)
    if ops.n_pairs:
        w = params.A.ravel()[ops.pair_flat_user] * ops.pair_kernel
        for m in range(M):
            out[:, m] += np.bincount(
                ops.pair_dst, weights=w * params.phi[ops.pair_src_user, m],
                minlength=ops.n)
    return out


# ---------------------------------------------------------------------------
# likelihood, survival, ELBO
# ---------------------------------------------------------------------------

@dataclass
class ElboEstimate:
    """ELBO value with its additive breakdown (survival stored positive)."""

    value: float
    excitation: float
    prior: float
    category: float
    survival: float
    entropy: float
    n_samples: int

    def breakdown_consistent(self, tol: float = 1e-9) -> bool:
        s = ((self.excitation + self.prior + self.category) - self.survival) \
            + self.entropy
        return abs(s - self.value) <= tol * max(1.0, abs(self.value))


@dataclass
class FitReport:
    elbo_trace: np.ndarray
    params: ModelParams
    wall_clock: float
    converged: bool
    epochs: int
    seed: int


def survival_integral(params: ModelParams, hyper: HyperParams, trace: Trace,
                      community_assignment=None,
                      ops: Optional[TraceOps] = None) -> float:
    """Integral of the total intensity over the observation window.

    The total intensity sums the community indicator out, so the result does
    not depend on the assignment; the argument is accepted (and validated)
    for interface symmetry with the event terms.
    """
    if community_assignment is not None:
        ca = np.asarray(community_assignment)
        if ca.shape != (trace.n_events,):
            raise ValueError("community_assignment must have one entry per event")
    ops = ops or TraceOps(trace, hyper)
    base = params.mu.sum() * params.eta.sum() * ops.T * ops.area
    rowsum_a = params.A.sum(axis=1)
    return float(base + ops.surv_row @ rowsum_a)


def _floored_log(x: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(x, PROB_FLOOR))


def complete_log_likelihood(params: ModelParams, hyper: HyperParams,
                            trace: Trace, assignment=None,
                            ops: Optional[TraceOps] = None) -> float:
    """Complete-data log likelihood given per-event community labels."""
    if assignment is None:
        if trace.communities is None:
            raise ValueError("trace has no community labels; pass assignment")
        g = trace.communities
    else:
        g = np.asarray(assignment, dtype=int)
        if g.shape != (trace.n_events,):
            raise ValueError("assignment must have one entry per event")
    ops = ops or TraceOps(trace, hyper)
    exc = float(np.sum(ops.event_loglam(params, g)))
    pri = float(np.sum(_floored_log(params.pi)[ops.users, g]))
    cat = float(np.sum(_floored_log(params.theta)[g, ops.cats]))
    surv = survival_integral(params, hyper, trace, ops=ops)
    return ((exc + pri + cat) - surv) + 0.0


def sample_assignments(params: ModelParams, trace: Trace, S: int, rng) -> np.ndarray:
    """S joint community samples g ~ prod_n Categorical(phi[user_n])."""
    phi_cum = np.cumsum(params.phi, axis=1)
    cum = phi_cum[trace.users]                       # (N, M)
    u = rng.random((S, trace.n_events)) * cum[:, -1]
    return (u[:, :, None] > cum[None, :, :]).sum(axis=2).astype(np.int64)


def _closed_terms(ops: TraceOps, params: ModelParams):
    """Prior, category and entropy terms of the ELBO (event-order sums)."""
    phi_ev = params.phi[ops.users]                   # (N, M)
    pri = float(np.sum((phi_ev * _floored_log(params.pi)[ops.users]).sum(axis=1)))
    cat = float(np.sum((phi_ev * _floored_log(params.theta)[:, ops.cats].T).sum(axis=1)))
    ent = -float(np.sum((phi_ev * _floored_log(params.phi)[ops.users]).sum(axis=1)))
    return pri, cat, ent


def elbo(params: ModelParams, hyper: HyperParams, trace: Trace,
         S: Optional[int] = None, rng=None, assignments=None, weights=None,
         ops: Optional[TraceOps] = None) -> ElboEstimate:
    """Monte-Carlo ELBO estimate (exact when assignment weights are given).

    With M = 1 the variational distribution is degenerate and the estimate
    collapses to the complete-data log likelihood exactly.
    """
    ops = ops or TraceOps(trace, hyper)
    M = params.n_communities
    pri, cat, ent = _closed_terms(ops, params)
    surv = survival_integral(params, hyper, trace, ops=ops)
    if M == 1:
        exc = float(np.sum(ops.event_loglam(params, np.zeros(ops.n, dtype=int))))
        n_used = 1
    elif assignments is not None:
        assignments = np.asarray(assignments, dtype=int)
        totals = np.array([np.sum(ops.event_loglam(params, g)) for g in assignments])
        if weights is not None:
            exc = float(np.dot(np.asarray(weights, dtype=float), totals))
        else:
            exc = float(np.mean(totals))
        n_used = assignments.shape[0]
    else:
        S = hyper.S if S is None else int(S)
        rng = np.random.default_rng(hyper.seed) if rng is None else rng
        samp = sample_assignments(params, trace, S, rng)
        exc = float(np.mean([np.sum(ops.event_loglam(params, g)) for g in samp]))
        n_used = S
    value = ((exc + pri + cat) - surv) + ent
    return ElboEstimate(value=value, excitation=exc, prior=pri, category=cat,
                        survival=surv, entropy=ent, n_samples=n_used)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def _softmax_row_chain(raw: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. simplex rows to the underlying row logits."""
    inner = (raw * rows).sum(axis=1, keepdims=True)
    return rows * (raw - inner)


def _phi_closed_logit_grad(ops: TraceOps, params: ModelParams) -> np.ndarray:
    """Logit gradient of the prior + category + entropy terms w.r.t. phi."""
    counts = ops.user_counts[:, None]
    raw = counts * _floored_log(params.pi)
    raw += ops.user_cat_counts @ _floored_log(params.theta).T
    raw -= counts * (_floored_log(params.phi) + 1.0)
    return _softmax_row_chain(raw, params.phi)


def grad_phi(params: ModelParams, hyper: HyperParams, trace: Trace,
             S: Optional[int] = None, rng=None, assignments=None, weights=None,
             baseline: bool = True, causal: bool = True,
             ops: Optional[TraceOps] = None) -> np.ndarray:
    """ELBO gradient w.r.t. the phi row logits.

    The excitation term uses the score-function (REINFORCE) estimator.  In
    sampling mode a leave-one-out per-event baseline and reward-to-go
    accumulation reduce variance without changing the expectation; with
    explicit ``weights`` (full enumeration) the plain estimator is summed
    exactly.
    """
    ops = ops or TraceOps(trace, hyper)
    I, M = params.phi.shape
    grad = _phi_closed_logit_grad(ops, params)
    if M == 1:
        return np.zeros_like(grad)

    if assignments is None:
        S = hyper.S if S is None else int(S)
        rng = np.random.default_rng(hyper.seed) if rng is None else rng
        assignments = sample_assignments(params, trace, S, rng)
        weights = None
    else:
        assignments = np.asarray(assignments, dtype=int)
    n_rows = assignments.shape[0]

    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        for g, w_s in zip(assignments, weights):
            total = float(np.sum(ops.event_loglam(params, g)))
            grad += w_s * _score_accum(ops, params, g, np.full(ops.n, total))
        return grad

    loglam = np.stack([ops.event_loglam(params, g) for g in assignments])
    if baseline and n_rows > 1:
        base = (loglam.sum(axis=0, keepdims=True) - loglam) / (n_rows - 1)
    else:
        base = np.zeros_like(loglam)
    acc = np.zeros((I, M))
    for s in range(n_rows):
        w = loglam[s] - base[s]
        inner = np.cumsum(w[::-1])[::-1] if causal else np.full(ops.n, w.sum())
        acc += _score_accum(ops, params, assignments[s], inner)
    return grad + acc / n_rows


def _score_accum(ops: TraceOps, params: ModelParams, g: np.ndarray,
                 coeff: np.ndarray) -> np.ndarray:
    """sum_k coeff_k * d log phi[user_k, g_k] / d logits, as an (I, M) array."""
    I, M = params.phi.shape
    onehot_part = np.bincount(ops.users * M + g, weights=coeff,
                              minlength=I * M).reshape(I, M)
    per_user = np.bincount(ops.users, weights=coeff, minlength=I)
    return onehot_part - per_user[:, None] * params.phi


def grad_params(params: ModelParams, hyper: HyperParams, trace: Trace,
                assignments, weights=None,
                ops: Optional[TraceOps] = None) -> dict:
    """Raw-space ELBO gradients for mu, eta, A and theta.

    The same community samples must be reused for every block within one
    optimization step (common random numbers); pass enumeration weights for
    the exact gradient of the deterministic ELBO.
    """
    ops = ops or TraceOps(trace, hyper)
    I, M = params.phi.shape
    assignments = np.asarray(assignments, dtype=int)
    n_rows = assignments.shape[0]
    if weights is None:
        w_rows = np.full(n_rows, 1.0 / n_rows)
    else:
        w_rows = np.asarray(weights, dtype=float)

    g_mu = np.zeros(I)
    g_eta = np.zeros(M)
    g_A = np.zeros(I * I)
    for g, w_s in zip(assignments, w_rows):
        lam = ops.event_lambda(params, g)
        inv = np.where(lam > PROB_FLOOR, 1.0 / np.maximum(lam, PROB_FLOOR), 0.0)
        g_mu += w_s * np.bincount(ops.users, weights=params.eta[g] * inv,
                                  minlength=I)
        g_eta += w_s * np.bincount(g, weights=params.mu[ops.users] * inv,
                                   minlength=M)
        if ops.n_pairs:
            match = g[ops.pair_src] == g[ops.pair_dst]
            pw = np.where(match, ops.pair_kernel * inv[ops.pair_dst], 0.0)
            g_A += w_s * np.bincount(ops.pair_flat_user, weights=pw,
                                     minlength=I * I)
    # survival derivatives (assignment independent)
    g_mu -= params.eta.sum() * ops.T * ops.area
    g_eta -= params.mu.sum() * ops.T * ops.area
    g_A = g_A.reshape(I, I) - ops.surv_row[:, None]

    counts = np.zeros((M, ops.V))
    np.add.at(counts.T, ops.cats, params.phi[ops.users])
    g_theta = counts / np.maximum(params.theta, PROB_FLOOR)
    return {"mu": g_mu, "eta": g_eta, "A": g_A, "theta": g_theta}


def grad_params_transformed(params: ModelParams, hyper: HyperParams, trace: Trace,
                            assignments, weights=None,
                            ops: Optional[TraceOps] = None) -> dict:
    """Gradients in optimization coordinates: log mu/eta/A and theta row logits."""
    raw = grad_params(params, hyper, trace, assignments, weights, ops=ops)
    return {
        "mu": params.mu * raw["mu"],
        "eta": params.eta * raw["eta"],
        "A": params.A * raw["A"],
        "theta": _softmax_row_chain(raw["theta"], params.theta),
    }


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def default_init(trace: Trace, hyper: HyperParams) -> ModelParams:
    """Deterministic initialization in the generator's style.

    mu proportional to observed per-user counts (scaled so the base rate
    explains about half the events), A column-normalized uniform, pi and
    theta uniform rows, phi initialized at the prior pi.
    """
    I, M, V = trace.n_users, hyper.M, trace.n_categories
    counts = np.bincount(trace.users, minlength=I).astype(float)
    mu = 0.5 * (counts + 1.0) / (trace.region.t_end * trace.region.area)
    A = np.full((I, I), 1.0 / I)
    eta = np.full(M, 1.0 / M)
    pi = np.full((I, M), 1.0 / M)
    theta = np.full((M, V), 1.0 / V)
    return ModelParams(mu=mu, eta=eta, A=A, theta=theta, pi=pi, phi=pi.copy())


class _Adam:
    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = _ADAM_B1 * self.m + (1 - _ADAM_B1) * grad
        self.v = _ADAM_B2 * self.v + (1 - _ADAM_B2) * grad * grad
        mhat = self.m / (1 - _ADAM_B1 ** self.t)
        vhat = self.v / (1 - _ADAM_B2 ** self.t)
        return lr * mhat / (np.sqrt(vhat) + _ADAM_EPS)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit(trace: Trace, hyper: HyperParams, init: Optional[ModelParams] = None,
        freeze: Sequence[str] = (), no_influence: bool = False,
        no_base: bool = False, no_category: bool = False,
        seed: Optional[int] = None, epochs: Optional[int] = None,
        callback: Optional[Callable] = None,
        ops: Optional[TraceOps] = None) -> FitReport:
    """Variational EM: per-epoch phi (E-like) and parameter (M-like) steps.

    Kernel parameters nu, h and the Dirichlet prior are fixed hyperparameters.
    pi is updated in closed form as the per-user phi expectation.  Ablations:
    ``no_influence`` freezes A at 0, ``no_base`` freezes mu near 0 and
    ``no_category`` freezes theta at uniform rows (category terms constant).
    """
    t0 = time.perf_counter()
    freeze = set(freeze)
    unknown = freeze - set(PARAM_BLOCKS)
    if unknown:
        raise ValueError(f"unknown freeze blocks {sorted(unknown)}")
    seed = hyper.seed if seed is None else int(seed)
    epochs = hyper.epochs if epochs is None else int(epochs)
    ops = ops or TraceOps(trace, hyper)
    params = (init.copy() if init is not None else default_init(trace, hyper))
    params.validate()
    M = params.n_communities

    if no_influence:
        params.A = np.zeros_like(params.A)
        freeze.add("A")
    if no_base:
        params.mu = np.full_like(params.mu, 1e-12)
        freeze.add("mu")
    if no_category:
        params.theta = np.full_like(params.theta, 1.0 / params.n_categories)
        freeze.add("theta")
    if M == 1:
        freeze.update({"phi", "pi", "eta"})

    z = {
        "mu": np.log(np.maximum(params.mu, 1e-300)),
        "eta": np.log(np.maximum(params.eta, 1e-300)),
        "A": np.log(np.maximum(params.A, PROB_FLOOR * 1e-3)),
        "theta": np.log(np.maximum(params.theta, PROB_FLOOR)),
        "phi": np.log(np.maximum(params.phi, PROB_FLOOR)),
    }
    adam = {k: _Adam(v.shape) for k, v in z.items()}
    scales = dict(hyper.lr_scales)

    rng_train = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    eval_seed = np.random.SeedSequence([seed, 1]).entropy

    def rebuild():
        params.mu = np.exp(z["mu"]) if "mu" not in freeze else params.mu
        params.eta = np.exp(z["eta"]) if "eta" not in freeze else params.eta
        params.A = np.exp(z["A"]) if "A" not in freeze else params.A
        if "theta" not in freeze:
            params.theta = _softmax_rows(z["theta"])
        if "phi" not in freeze:
            params.phi = _softmax_rows(z["phi"])

    trace_vals = np.empty(epochs)
    for epoch in range(epochs):
        lr_t = hyper.lr / math.sqrt(epoch + 1.0)
        if M > 1:
            samp = sample_assignments(params, trace, hyper.S, rng_train)
        else:
            samp = np.zeros((1, ops.n), dtype=int)
        gz = grad_params_transformed(params, hyper, trace, samp, ops=ops)
        updates = {k: gz[k] for k in ("mu", "eta", "A", "theta")
                   if k not in freeze}
        if "phi" not in freeze:
            updates["phi"] = grad_phi(params, hyper, trace, assignments=samp,
                                      ops=ops)
        for name, g in updates.items():
            if not np.all(np.isfinite(g)):
                raise FitError(f"non-finite gradient for {name} at epoch {epoch}")
            z[name] += adam[name].step(g, lr_t * scales.get(name, 1.0))
        rebuild()
        if "pi" not in freeze and M > 1:
            active = ops.user_counts > 0
            params.pi = params.pi.copy()
            params.pi[active] = params.phi[active]
        for name in ("mu", "eta", "A", "theta", "pi", "phi"):
            if not np.all(np.isfinite(getattr(params, name))):
                raise FitError(f"non-finite {name} at epoch {epoch}")

        rng_eval = np.random.default_rng(eval_seed)  # common random numbers
        est = elbo(params, hyper, trace, S=hyper.s_eval, rng=rng_eval, ops=ops)
        trace_vals[epoch] = est.value
        if callback is not None:
            callback(epoch, params, est)

    converged = False
    if epochs >= 30:
        ma = np.convolve(trace_vals, np.ones(10) / 10.0, mode="valid")
        tail = abs(ma[-1] - ma[-11]) if ma.size > 11 else np.inf
        converged = bool(tail <= 1e-4 * max(1.0, abs(ma[-1])))
    params.validate()
    return FitReport(elbo_trace=trace_vals, params=params,
                     wall_clock=time.perf_counter() - t0, converged=converged,
                     epochs=epochs, seed=seed)
