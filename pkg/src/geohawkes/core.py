"""Domain types and kernel/intensity primitives shared by simulation, inference and prediction.

All types are immutable value objects; every function here is pure and safe to
call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

import numpy as np

# Floor applied inside every log over probabilities/intensities so that
# hard zeros stay finite and testable.
PROB_FLOOR = 1e-12

# Spatial kernel variants.  The default follows the model definition verbatim:
# an unsquared-distance exponential with a 1/(2*pi*h) prefactor, whose plane
# integral is 4h (it is not a normalized density).  "squared_exponential" is a
# proper 2-D Gaussian with bandwidth h (plane integral 1), offered as opt-in.
KERNEL_EXP_DISTANCE = "exponential_distance"
KERNEL_SQ_EXPONENTIAL = "squared_exponential"
SPATIAL_KERNELS = (KERNEL_EXP_DISTANCE, KERNEL_SQ_EXPONENTIAL)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    """Observation window: time horizon [0, t_end] and spatial rectangle."""

    t_end: float
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError(f"t_end must be > 0, got {self.t_end}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("region must have positive extent on both axes")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, x, y) -> bool:
        return bool(
            np.all((x >= self.x_min) & (x <= self.x_max)
                   & (y >= self.y_min) & (y <= self.y_max))
        )


@dataclass(frozen=True)
class Venue:
    """One discrete location: dense id, planar coordinates, category index."""

    id: int
    x: float
    y: float
    category: int


class VenueSet:
    """Dense, id-indexed set of venues with vectorized coordinate access."""

    def __init__(self, xy: np.ndarray, categories: np.ndarray):
        xy = np.asarray(xy, dtype=float)
        categories = np.asarray(categories, dtype=int)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ValueError("xy must have shape (L, 2)")
        if categories.shape != (xy.shape[0],):
            raise ValueError("categories must have shape (L,)")
        if np.any(categories < 0):
            raise ValueError("categories must be non-negative")
        self.xy = xy
        self.categories = categories

    def __len__(self) -> int:
        return self.xy.shape[0]

    def __getitem__(self, vid: int) -> Venue:
        return Venue(int(vid), float(self.xy[vid, 0]), float(self.xy[vid, 1]),
                     int(self.categories[vid]))

    def venues_of_category(self, category: int) -> np.ndarray:
        return np.nonzero(self.categories == category)[0]

    def validate_in_region(self, region: Region):
        if not region.contains(self.xy[:, 0], self.xy[:, 1]):
            raise ValueError("venue coordinates fall outside the region")


@dataclass(frozen=True)
class Event:
    """One check-in: time, venue id, user, category and optional latent community."""

    t: float
    venue: int
    user: int
    category: int
    community: Optional[int] = None


class Trace:
    """An ordered sequence of check-ins over a venue set and region.

    Events are stored as parallel numpy arrays (canonical form); ``events()``
    materializes :class:`Event` objects on demand.  ``communities`` is None for
    real data and an int array for synthetic ground truth.
    """

    def __init__(self, times, venue_ids, users, venues: VenueSet, region: Region,
                 n_users: int, n_categories: int, communities=None):
        self.times = np.asarray(times, dtype=float)
        self.venue_ids = np.asarray(venue_ids, dtype=int)
        self.users = np.asarray(users, dtype=int)
        self.venues = venues
        self.region = region
        self.n_users = int(n_users)
        self.n_categories = int(n_categories)
        self.communities = None if communities is None else np.asarray(communities, dtype=int)
        self._validate()

    def _validate(self):
        n = len(self.times)
        for name, arr in (("venue_ids", self.venue_ids), ("users", self.users)):
            if arr.shape != (n,):
                raise ValueError(f"{name} must match times length")
        if n and np.any(np.diff(self.times) < 0):
            raise ValueError("event times must be non-decreasing")
        if n and (self.times[0] < 0 or self.times[-1] > self.region.t_end):
            raise ValueError("event times must lie in [0, t_end]")
        if n and (self.users.min() < 0 or self.users.max() >= self.n_users):
            raise ValueError("user index out of range")
        if n and (self.venue_ids.min() < 0 or self.venue_ids.max() >= len(self.venues)):
            raise ValueError("venue id out of range")
        if np.any(self.venues.categories >= self.n_categories):
            raise ValueError("venue category out of range")
        self.venues.validate_in_region(self.region)
        if self.communities is not None and self.communities.shape != (n,):
            raise ValueError("communities must match times length")

    # -- derived views -----------------------------------------------------

    @property
    def n_events(self) -> int:
        return len(self.times)

    @property
    def categories(self) -> np.ndarray:
        """Per-event category, copied from each event's venue."""
        return self.venues.categories[self.venue_ids]

    @property
    def xy(self) -> np.ndarray:
        """Per-event coordinates (N, 2), copied from each event's venue."""
        return self.venues.xy[self.venue_ids]

    def events(self) -> Iterator[Event]:
        cats = self.categories
        for n in range(self.n_events):
            g = None if self.communities is None else int(self.communities[n])
            yield Event(float(self.times[n]), int(self.venue_ids[n]),
                        int(self.users[n]), int(cats[n]), g)

    def with_communities(self, communities) -> "Trace":
        return Trace(self.times, self.venue_ids, self.users, self.venues,
                     self.region, self.n_users, self.n_categories, communities)

    def subset(self, idx, t_end: Optional[float] = None) -> "Trace":
        """Trace restricted to the given event indices (order preserved)."""
        region = self.region if t_end is None else replace(self.region, t_end=t_end)
        comm = None if self.communities is None else self.communities[idx]
        return Trace(self.times[idx], self.venue_ids[idx], self.users[idx],
                     self.venues, region, self.n_users, self.n_categories, comm)

    @staticmethod
    def from_events(events: Sequence[Event], venues: VenueSet, region: Region,
                    n_users: int, n_categories: int) -> "Trace":
        times = [e.t for e in events]
        vids = [e.venue for e in events]
        users = [e.user for e in events]
        comms = [e.community for e in events]
        has = [c is not None for c in comms]
        if any(has) and not all(has):
            raise ValueError("either all or no events carry a community label")
        return Trace(times, vids, users, venues, region, n_users, n_categories,
                     comms if all(has) and events else None)


def split_by_time(trace: Trace, fraction: float = 0.8):
    """Split a trace into (train, test) at the given event-count fraction.

    The first ``floor(fraction * N)`` events (by timestamp) form the training
    trace; its observation window is truncated at the last training event.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    n = trace.n_events
    k = int(math.floor(fraction * n))
    if k == 0 or k == n:
        raise ValueError("split leaves an empty side")
    train = trace.subset(np.arange(k), t_end=float(trace.times[k - 1]))
    test = trace.subset(np.arange(k, n))
    return train, test


@dataclass(frozen=True)
class HyperParams:
    """Fixed quantities of the model and optimizer (never learned).

    ``h`` is the per-user spatial bandwidth attached to the *source* event of
    each excitation term; a scalar broadcasts over users.
    """

    nu: float = 0.01
    h: object = 1.0                      # scalar or (I,) array
    theta0: object = 1.0                 # scalar or (V,) Dirichlet parameter
    M: int = 1
    S: int = 10
    epochs: int = 200
    lr: float = 0.05
    lr_scales: dict = field(default_factory=dict)   # per-block multipliers
    s_eval: int = 32
    kernel: str = KERNEL_EXP_DISTANCE
    pair_threshold: float = 0.0          # drop kernel pairs below this value
    quad_nodes: int = 48
    seed: int = 0

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be > 0")
        if np.any(np.asarray(self.h, dtype=float) <= 0):
            raise ValueError("h must be > 0")
        if np.any(np.asarray(self.theta0, dtype=float) <= 0):
            raise ValueError("theta0 must be > 0")
        if self.M < 1 or self.S < 1:
            raise ValueError("M and S must be >= 1")
        if self.kernel not in SPATIAL_KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")

    def h_for_users(self, n_users: int) -> np.ndarray:
        h = np.asarray(self.h, dtype=float)
        if h.ndim == 0:
            return np.full(n_users, float(h))
        if h.shape != (n_users,):
            raise ValueError("per-user h has wrong length")
        return h


def _check_rows_stochastic(name: str, m: np.ndarray, tol: float = 1e-9):
    if np.any(m < 0):
        raise ValueError(f"{name} has negative entries")
    if np.any(np.abs(m.sum(axis=1) - 1.0) > tol):
        raise ValueError(f"rows of {name} must sum to 1 within {tol}")


@dataclass
class ModelParams:
    """All learnable quantities plus the variational posterior phi.

    A is oriented influencer-by-influenced: ``A[k, n]`` is the excitation that
    events of user k add to user n's intensity.
    """

    mu: np.ndarray        # (I,)  base intensities, >= 0
    eta: np.ndarray       # (M,)  community weights, >= 0
    A: np.ndarray         # (I, I) influence matrix, >= 0
    theta: np.ndarray     # (M, V) row-stochastic category distributions
    pi: np.ndarray        # (I, M) row-stochastic community priors
    phi: np.ndarray       # (I, M) row-stochastic variational posteriors

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.pi = np.asarray(self.pi, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.validate()

    def validate(self):
        I, M = self.pi.shape
        if self.mu.shape != (I,) or self.eta.shape != (M,):
            raise ValueError("mu/eta shapes inconsistent with pi")
        if self.A.shape != (I, I):
            raise ValueError("A must be I x I")
        if self.theta.shape[0] != M:
            raise ValueError("theta must have M rows")
        if self.phi.shape != (I, M):
            raise ValueError("phi must match pi's shape")
        for name, arr in (("mu", self.mu), ("eta", self.eta), ("A", self.A)):
            if np.any(arr < 0):
                raise ValueError(f"{name} must be non-negative")
        for name, m in (("theta", self.theta), ("pi", self.pi), ("phi", self.phi)):
            _check_rows_stochastic(name, m)

    @property
    def n_users(self) -> int:
        return self.pi.shape[0]

    @property
    def n_communities(self) -> int:
        return self.pi.shape[1]

    @property
    def n_categories(self) -> int:
        return self.theta.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.mu.copy(), self.eta.copy(), self.A.copy(),
                           self.theta.copy(), self.pi.copy(), self.phi.copy())


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def temporal_kernel(dt, nu: float):
    """Exponential decay exp(-nu * dt); dt may be a scalar or array, dt >= 0."""
    dt = np.asarray(dt, dtype=float)
    if nu <= 0:
        raise ValueError("nu must be > 0")
    if np.any(dt < 0):
        raise ValueError("dt must be >= 0")
    out = np.exp(-nu * dt)
    return float(out) if out.ndim == 0 else out


def spatial_kernel(d, h: float, kind: str = KERNEL_EXP_DISTANCE):
    """Spatial triggering kernel at unsquared distance d >= 0, bandwidth h > 0."""
    d = np.asarray(d, dtype=float)
    if h <= 0:
        raise ValueError("h must be > 0")
    if np.any(d < 0):
        raise ValueError("d must be >= 0")
    if kind == KERNEL_EXP_DISTANCE:
        out = np.exp(-d / (2.0 * h)) / (2.0 * math.pi * h)
    elif kind == KERNEL_SQ_EXPONENTIAL:
        out = np.exp(-(d * d) / (2.0 * h * h)) / (2.0 * math.pi * h * h)
    else:
        raise ValueError(f"unknown kernel {kind!r}")
    return float(out) if out.ndim == 0 else out


def spatial_peak(h: float, kind: str = KERNEL_EXP_DISTANCE) -> float:
    """Maximum of the spatial kernel (attained at d = 0)."""
    return spatial_kernel(0.0, h, kind)


def spatial_plane_mass(h: float, kind: str = KERNEL_EXP_DISTANCE) -> float:
    """Integral of the spatial kernel over the whole plane (4h, resp. 1)."""
    if h <= 0:
        raise ValueError("h must be > 0")
    return 4.0 * h if kind == KERNEL_EXP_DISTANCE else 1.0


def spatial_radial_mass(R, h: float, kind: str = KERNEL_EXP_DISTANCE):
    """Closed form of the radial integral  int_0^R kernel(r) * r dr.

    Multiplying by the subtended angle gives the kernel's mass over a circular
    sector; this is the workhorse of the rectangle quadrature in inference.
    """
    R = np.asarray(R, dtype=float)
    if h <= 0:
        raise ValueError("h must be > 0")
    if kind == KERNEL_EXP_DISTANCE:
        z = R / (2.0 * h)
        with np.errstate(invalid="ignore"):
            tail = np.where(np.isfinite(z), np.exp(-z) * (1.0 + z), 0.0)
        out = (2.0 * h / math.pi) * (1.0 - tail)
    elif kind == KERNEL_SQ_EXPONENTIAL:
        out = (1.0 - np.exp(-(R * R) / (2.0 * h * h))) / (2.0 * math.pi)
    else:
        raise ValueError(f"unknown kernel {kind!r}")
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# intensities
# ---------------------------------------------------------------------------

def _resolve_xy(trace: Trace, where):
    """Accept a venue id or an (x, y) pair and return coordinates."""
    if np.isscalar(where) or isinstance(where, (int, np.integer)):
        return trace.venues.xy[int(where)]
    xy = np.asarray(where, dtype=float)
    if xy.shape != (2,):
        raise ValueError("location must be a venue id or an (x, y) pair")
    return xy


def _history_communities(trace: Trace, history_communities):
    if history_communities is not None:
        hc = np.asarray(history_communities, dtype=int)
        if hc.shape != (trace.n_events,):
            raise ValueError("history_communities must have one entry per event")
        return hc
    if trace.communities is None:
        raise ValueError(
            "trace has no community labels; supply history_communities")
    return trace.communities


def community_intensity(params: ModelParams, hyper: HyperParams, trace: Trace,
                        user: int, community: int, t: float, where,
                        history_communities=None) -> float:
    """Community-specific intensity lambda_{user,community}(t, location).

    Only strictly earlier events contribute, and only those whose community
    label matches ``community``.  ``where`` is a venue id or an (x, y) pair.
    """
    if not 0 <= t <= trace.region.t_end:
        raise ValueError("t must lie in [0, t_end]")
    base = params.mu[user] * params.eta[community]
    n_hist = int(np.searchsorted(trace.times, t, side="left"))
    if n_hist == 0:
        return float(base)
    comm = _history_communities(trace, history_communities)[:n_hist]
    mask = comm == community
    if not np.any(mask):
        return float(base)
    xy = _resolve_xy(trace, where)
    idx = np.nonzero(mask)[0]
    dt = t - trace.times[idx]
    d = np.hypot(*(trace.xy[idx] - xy).T)
    h_users = hyper.h_for_users(trace.n_users)
    ks = np.array([spatial_kernel(di, h_users[u], hyper.kernel)
                   for di, u in zip(d, trace.users[idx])])
    excite = params.A[trace.users[idx], user] * temporal_kernel(dt, hyper.nu) * ks
    return float(base + excite.sum())


def total_intensity(params: ModelParams, hyper: HyperParams, trace: Trace,
                    user: int, t: float, where,
                    history_communities=None) -> float:
    """Total intensity lambda_user(t, location) = sum over communities.

    Computed as the deterministic-order sum of :func:`community_intensity`, so
    the decomposition invariant holds to machine precision.
    """
    return float(sum(
        community_intensity(params, hyper, trace, user, g, t, where,
                            history_communities)
        for g in range(params.n_communities)))


def category_logprob(theta: np.ndarray, community: int, category: int) -> float:
    """log theta[community, category], floored at PROB_FLOOR to stay finite."""
    theta = np.asarray(theta, dtype=float)
    M, V = theta.shape
    if not (0 <= community < M and 0 <= category < V):
        raise IndexError("community or category index out of range")
    return float(np.log(max(theta[community, category], PROB_FLOOR)))
