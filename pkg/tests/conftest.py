import itertools

import numpy as np
import pytest

from geohawkes.core import HyperParams, ModelParams, Region, Trace, VenueSet


def dirichlet_rows(rng, alpha, rows, cols):
    return rng.dirichlet(np.full(cols, alpha), size=rows)


def make_instance(I=2, N=5, M=2, V=3, L=4, T=10.0, seed=0, nu=0.3, h=0.2,
                  a_scale=0.4, **hyper_kw):
    """Small random instance with moderate magnitudes (no probability floors hit)."""
    rng = np.random.default_rng(seed)
    region = Region(T, 0.0, 1.0, 0.0, 1.0)
    venues = VenueSet(rng.uniform(0.05, 0.95, (L, 2)), rng.integers(0, V, L))
    times = np.sort(rng.uniform(0.0, 0.9 * T, N))
    users = rng.integers(0, I, N)
    vids = rng.integers(0, L, N)
    comms = rng.integers(0, M, N)
    trace = Trace(times, vids, users, venues, region, I, V, comms)
    params = ModelParams(
        mu=rng.uniform(0.3, 0.8, I),
        eta=rng.uniform(0.5, 1.5, M),
        A=a_scale * rng.uniform(0.2, 1.0, (I, I)),
        theta=dirichlet_rows(rng, 2.0, M, V),
        pi=dirichlet_rows(rng, 2.0, I, M),
        phi=dirichlet_rows(rng, 2.0, I, M),
    )
    hyper = HyperParams(nu=nu, h=h, M=M, seed=seed, **hyper_kw)
    return trace, params, hyper


def all_assignments(M, N):
    return np.array(list(itertools.product(range(M), repeat=N)), dtype=int)


def assignment_weights(phi, users, assignments):
    """q(g) = prod_n phi[user_n, g_n] for each assignment row."""
    S, N = assignments.shape
    u = np.broadcast_to(users, (S, N))
    return np.prod(phi[u, assignments], axis=1)
