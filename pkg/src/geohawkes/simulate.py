"""Synthetic trace generation by thinning, with venue snapping.

The generative process follows the model's stated ordering: an event time and
a continuous location proposal are accepted against an upper bound on the
aggregate intensity, then user, community and category are sampled, and the
location is snapped to the nearest venue of the sampled category.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    HyperParams,
    ModelParams,
    Region,
    Trace,
    Venue,
    VenueSet,
    spatial_kernel,
    spatial_peak,
    temporal_kernel,
)

COMMUNITY_GENERATIVE = "generative_order"          # g ~ pi[user], as stated
COMMUNITY_INTENSITY = "intensity_proportional"     # g ~ lambda_{i,g}(t, l)

# temporal kernel below this is treated as dead history in the generator
_KT_CUTOFF = 1e-14


@dataclass
class SimConfig:
    """Configuration of one synthetic run.

    Init descriptors are dicts: ``{"kind": "explicit", "value": arr}`` uses the
    array as-is; the other kinds draw from the run's RNG (see init_params).
    """

    n_events: int
    n_users: int
    n_communities: int
    n_categories: int
    venues: VenueSet
    region: Region
    nu: float = 0.01
    h: object = 1.0                      # scalar or per-user array
    proposal_mode: str = "gaussian"      # "gaussian" (around previous) or "uniform"
    proposal_std: Optional[float] = None  # gaussian mode; None: per-user h
    community_sampling: str = COMMUNITY_GENERATIVE
    safety_factor: float = 1.1
    refresh_after_rejects: int = 64
    seed: int = 0
    mu_init: dict = field(default_factory=lambda: {"kind": "counts", "scale": 0.01})
    a_init: dict = field(default_factory=lambda: {"kind": "column_dirichlet",
                                                  "alpha": 1.0, "scale": 1.0})
    eta_init: dict = field(default_factory=lambda: {"kind": "dirichlet", "alpha": 1.0})
    pi_init: dict = field(default_factory=lambda: {"kind": "dirichlet", "alpha": 1.0})
    theta_init: dict = field(default_factory=lambda: {"kind": "dirichlet", "alpha": 1.0})
    kernel: str = "exponential_distance"

    def __post_init__(self):
        if self.n_events < 0:
            raise ValueError("n_events must be >= 0")
        if self.community_sampling not in (COMMUNITY_GENERATIVE, COMMUNITY_INTENSITY):
            raise ValueError(f"unknown community_sampling {self.community_sampling!r}")
        if self.proposal_mode not in ("gaussian", "uniform"):
            raise ValueError(f"unknown proposal_mode {self.proposal_mode!r}")
        if self.safety_factor < 1.0:
            raise ValueError("safety_factor must be >= 1")
        if len(self.venues) == 0:
            raise ValueError("venue set must be non-empty")
        if np.any(self.venues.categories >= self.n_categories):
            raise ValueError("venue categories must be < n_categories")
        self.venues.validate_in_region(self.region)

    def hyper(self, **overrides) -> HyperParams:
        kw = dict(nu=self.nu, h=self.h, M=self.n_communities,
                  kernel=self.kernel, seed=self.seed)
        kw.update(overrides)
        return HyperParams(**kw)


@dataclass
class SimResult:
    trace: Trace
    params: ModelParams
    completed: bool            # reached the requested n_events
    truncated: bool            # horizon exhausted first (shorter trace)
    n_proposals: int = 0
    n_accepts: int = 0
    max_accept_prob: float = 0.0


def _dirichlet_rows(rng, alpha, n_rows: int, n_cols: int) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    if a.ndim == 0:
        a = np.full(n_cols, float(a))
    if a.shape != (n_cols,):
        raise ValueError("dirichlet alpha has wrong length")
    return rng.dirichlet(a, size=n_rows)


def _init_matrix(rng, desc: dict, shape) -> np.ndarray:
    if desc["kind"] == "explicit":
        value = np.asarray(desc["value"], dtype=float)
        if value.shape != shape:
            raise ValueError(f"explicit init has shape {value.shape}, want {shape}")
        return value.copy()
    if desc["kind"] == "dirichlet":
        return _dirichlet_rows(rng, desc.get("alpha", 1.0), shape[0], shape[1])
    raise ValueError(f"unknown init kind {desc['kind']!r}")


def init_params(config: SimConfig, rng=None) -> ModelParams:
    """Draw generator parameters per the configured init schemes.

    Defaults: mu proportional to per-user check-in counts, A column-normalized
    (Dirichlet columns), pi/eta/theta Dirichlet rows.  phi is initialized at
    the prior pi.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    I, M, V = config.n_users, config.n_communities, config.n_categories

    d = config.mu_init
    if d["kind"] == "explicit":
        mu = np.asarray(d["value"], dtype=float).copy()
        if mu.shape != (I,):
            raise ValueError("explicit mu has wrong shape")
    elif d["kind"] == "counts":
        counts = np.asarray(d.get("counts", np.ones(I)), dtype=float)
        if counts.ndim == 0:
            counts = np.full(I, float(counts))
        mu = d.get("scale", 0.01) * counts
    else:
        raise ValueError(f"unknown mu init kind {d['kind']!r}")

    d = config.a_init
    if d["kind"] == "explicit":
        A = np.asarray(d["value"], dtype=float).copy()
        if A.shape != (I, I):
            raise ValueError("explicit A has wrong shape")
    elif d["kind"] == "column_dirichlet":
        cols = rng.dirichlet(np.full(I, float(d.get("alpha", 1.0))), size=I).T
        A = d.get("scale", 1.0) * cols
    else:
        raise ValueError(f"unknown A init kind {d['kind']!r}")

    d = config.eta_init
    if d["kind"] == "explicit":
        eta = np.asarray(d["value"], dtype=float).reshape(-1).copy()
        if eta.shape != (M,):
            raise ValueError("explicit eta has wrong length")
    else:
        eta = _init_matrix(rng, d, (1, M))[0]
    pi = _init_matrix(rng, config.pi_init, (I, M))
    theta = _init_matrix(rng, config.theta_init, (M, V))
    return ModelParams(mu=mu, eta=eta, A=A, theta=theta, pi=pi, phi=pi.copy())


def _categorical(rng, weights: np.ndarray) -> int:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have positive sum")
    return int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right"))


def sample_user(intensities: np.ndarray, rng) -> int:
    """Categorical draw of a user proportional to per-user intensities."""
    return _categorical(rng, intensities)


def sample_community_and_category(params: ModelParams, user: int, rng):
    """Draw g ~ Categorical(pi[user]) then c ~ Categorical(theta[g])."""
    g = _categorical(rng, params.pi[user])
    c = _categorical(rng, params.theta[g])
    return g, c


def snap_to_venue(proposal_xy, venues: VenueSet, category: Optional[int] = None) -> Venue:
    """Nearest venue to the proposal, ties broken by lowest venue id.

    With ``category`` given, the search is restricted to venues of that
    category, falling back to the global nearest when none exists.
    """
    if len(venues) == 0:
        raise ValueError("venue set is empty")
    xy = np.asarray(proposal_xy, dtype=float)
    ids = np.arange(len(venues))
    if category is not None:
        cand = venues.venues_of_category(int(category))
        if cand.size:
            ids = cand
    d2 = ((venues.xy[ids] - xy) ** 2).sum(axis=1)
    # argmin returns the first (lowest-id) minimizer; ids is ascending
    return venues[int(ids[int(np.argmin(d2))])]


class ThinningBoundError(RuntimeError):
    """The sampled intensity exceeded the thinning upper bound."""


class _ThinningState:
    """History-dependent bookkeeping for the sequential thinning loop."""

    def __init__(self, config: SimConfig, params: ModelParams):
        self.config = config
        self.params = params
        I = config.n_users
        self.h_users = HyperParams(nu=config.nu, h=config.h,
                                   M=config.n_communities).h_for_users(I)
        self.rowsum_A = params.A.sum(axis=1)          # (I,) total outgoing influence
        self.base_density = float(params.mu.sum() * params.eta.sum())
        cap = max(config.n_events, 1)
        self.t_hist = np.empty(cap)
        self.xy_hist = np.empty((cap, 2))
        self.user_hist = np.empty(cap, dtype=int)
        self.g_hist = np.empty(cap, dtype=int)
        self.n = 0
        self.left = 0                                  # dead-history pointer
        self.t_cut = -math.log(_KT_CUTOFF) / config.nu

    def window(self, t: float):
        while self.left < self.n and t - self.t_hist[self.left] > self.t_cut:
            self.left += 1
        return slice(self.left, self.n)

    def bound_density(self, t: float) -> float:
        """Spatial-max of the aggregate intensity at time t (valid for t' >= t)."""
        w = self.window(t)
        if w.start == w.stop:
            return self.base_density
        kt = np.exp(-self.config.nu * (t - self.t_hist[w]))
        peaks = np.array([spatial_peak(h, self.config.kernel)
                          for h in self.h_users[self.user_hist[w]]])
        return self.base_density + float((self.rowsum_A[self.user_hist[w]] * kt * peaks).sum())

    def _window_kernels(self, t: float, xy):
        w = self.window(t)
        if w.start == w.stop:
            return w, None, None
        kt = np.exp(-self.config.nu * (t - self.t_hist[w]))
        d = np.hypot(self.xy_hist[w, 0] - xy[0], self.xy_hist[w, 1] - xy[1])
        hs = self.h_users[self.user_hist[w]]
        if self.config.kernel == "exponential_distance":
            ks = np.exp(-d / (2.0 * hs)) / (2.0 * math.pi * hs)
        else:
            ks = np.exp(-(d * d) / (2.0 * hs * hs)) / (2.0 * math.pi * hs * hs)
        return w, kt, ks

    def total_density(self, t: float, xy) -> float:
        w, kt, ks = self._window_kernels(t, xy)
        if kt is None:
            return self.base_density
        return self.base_density + float(
            (self.rowsum_A[self.user_hist[w]] * kt * ks).sum())

    def user_intensities(self, t: float, xy) -> np.ndarray:
        w, kt, ks = self._window_kernels(t, xy)
        lam = self.params.mu * self.params.eta.sum()
        if kt is None:
            return lam
        s = np.bincount(self.user_hist[w], weights=kt * ks,
                        minlength=self.config.n_users)
        return lam + s @ self.params.A

    def community_intensities(self, t: float, xy, user: int) -> np.ndarray:
        w, kt, ks = self._window_kernels(t, xy)
        lam = self.params.mu[user] * self.params.eta.copy()
        if kt is None:
            return lam
        contrib = self.params.A[self.user_hist[w], user] * kt * ks
        lam += np.bincount(self.g_hist[w], weights=contrib,
                           minlength=self.config.n_communities)
        return lam

    def push(self, t: float, xy, user: int, g: int):
        i = self.n
        self.t_hist[i] = t
        self.xy_hist[i] = xy
        self.user_hist[i] = user
        self.g_hist[i] = g
        self.n += 1


def _propose_location(rng, center, std: float, region: Region):
    """Gaussian proposal around the previous coordinates, truncated to the region."""
    for _ in range(10000):
        xy = center + std * rng.standard_normal(2)
        if region.contains(xy[0], xy[1]):
            return xy
    raise RuntimeError("location proposal failed to land in the region")


def generate_trace(config: SimConfig, params: Optional[ModelParams] = None) -> SimResult:
    """Run the full generative process and return the trace with ground truth.

    Stops at ``n_events`` accepted events or at the region horizon, whichever
    comes first; in the latter case the result is flagged as truncated.
    """
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(config, rng)
    params.validate()
    state = _ThinningState(config, params)
    region = config.region
    area = region.area
    prop_std_cfg = config.proposal_std

    times, vids, users, comms = [], [], [], []
    prev_xy = np.array([(region.x_min + region.x_max) / 2.0,
                        (region.y_min + region.y_max) / 2.0])
    t = 0.0
    n_proposals = 0
    n_accepts = 0
    max_p = 0.0
    bound = config.safety_factor * state.bound_density(t) * area
    rejects_since_refresh = 0

    while n_accepts < config.n_events:
        if bound <= 0:
            break  # zero-intensity model generates nothing
        t = t + rng.exponential(1.0 / bound)
        if t > region.t_end:
            break
        if config.proposal_mode == "uniform":
            xy = np.array([rng.uniform(region.x_min, region.x_max),
                           rng.uniform(region.y_min, region.y_max)])
        else:
            if prop_std_cfg is not None:
                std = prop_std_cfg
            else:
                std = float(np.mean(state.h_users)) if state.n == 0 \
                    else float(state.h_users[state.user_hist[state.n - 1]])
            xy = _propose_location(rng, prev_xy, std, region)
        n_proposals += 1
        p = state.total_density(t, xy) * area / bound
        if p > 1.0 + 1e-9:
            raise ThinningBoundError(
                f"acceptance probability {p:.6f} > 1 at t={t:.6f}")
        max_p = max(max_p, p)
        if rng.random() < p:
            lam_users = state.user_intensities(t, xy)
            user = sample_user(lam_users, rng)
            if config.community_sampling == COMMUNITY_INTENSITY:
                g = _categorical(rng, state.community_intensities(t, xy, user))
                c = _categorical(rng, params.theta[g])
            else:
                g, c = sample_community_and_category(params, user, rng)
            venue = snap_to_venue(xy, config.venues, category=c)
            vxy = np.array([venue.x, venue.y])
            times.append(t)
            vids.append(venue.id)
            users.append(user)
            comms.append(g)
            state.push(t, vxy, user, g)
            prev_xy = vxy
            n_accepts += 1
            bound = config.safety_factor * state.bound_density(t) * area
            rejects_since_refresh = 0
        else:
            rejects_since_refresh += 1
            if rejects_since_refresh >= config.refresh_after_rejects:
                # intensities only decay between events, so the refreshed
                # bound is still valid and only ever tighter
                bound = config.safety_factor * state.bound_density(t) * area
                rejects_since_refresh = 0

    trace = Trace(times, vids, users, config.venues, region,
                  config.n_users, config.n_categories, comms)
    completed = n_accepts >= config.n_events
    return SimResult(trace=trace, params=params, completed=completed,
                     truncated=not completed, n_proposals=n_proposals,
                     n_accepts=n_accepts, max_accept_prob=max_p)
