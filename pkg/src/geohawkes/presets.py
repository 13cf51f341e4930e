"""Built-in experiment presets, including the synthetic recovery benchmark.

The ``table2`` preset generates a 100-user, 10-community, 200-category trace
of roughly 9.8k check-ins.  Geometry: each community owns a block of 20
categories whose venues cluster in one spatial district; users belong to one
home community; influence is a sparse set of within-community edges, one per
community, so the branching structure is a forest and the process is stable
at any edge strength.
"""

from __future__ import annotations

import math

import numpy as np

from .core import HyperParams, ModelParams, Region, VenueSet
from .inference import spatial_rect_integral
from .metrics import EmbeddingTable
from .simulate import SimConfig

TABLE2 = {
    "n_users": 100,
    "n_communities": 10,
    "n_categories": 200,
    "venues_per_category": 1,
    "t_end": 60000.0,
    "nu": 0.01,
    "h": 0.04,
    "district_sigma": 0.05,
    "theta_alpha": 0.45,          # within-block Dirichlet concentration
    "base_events_per_user": 65.18,
    "triggers_per_source_event": 5.0,
    "proposal_mode": "uniform",   # exact thinning; locations follow the intensity
    "safety_factor": 1.1,
    "n_events_cap": 12000,
}


def _district_centers(n: int) -> np.ndarray:
    xs = [0.14, 0.38, 0.62, 0.86]
    ys = [0.17, 0.50, 0.83]
    grid = [(x, y) for y in ys for x in xs]
    return np.array(grid[1:n + 1])


def category_labels(V: int):
    width = len(str(V - 1))
    return [f"c{c:0{width}d}" for c in range(V)]


def table2_sim_config(seed: int = 11, **overrides) -> SimConfig:
    """Synthetic benchmark at the reference scale (I=100, M=10, V=200)."""
    p = dict(TABLE2)
    p.update(overrides)
    I, M, V = p["n_users"], p["n_communities"], p["n_categories"]
    per_block = V // M
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))

    region = Region(p["t_end"], 0.0, 1.0, 0.0, 1.0)
    centers = _district_centers(M)
    vpc = p["venues_per_category"]
    L = V * vpc
    xy = np.empty((L, 2))
    vcat = np.empty(L, dtype=int)
    for c in range(V):
        block = c // per_block
        for r in range(vpc):
            j = c * vpc + r
            xy[j] = np.clip(centers[block] + p["district_sigma"]
                            * rng.standard_normal(2), 0.02, 0.98)
            vcat[j] = c
    venues = VenueSet(xy, vcat)

    # one-hot home communities, ten users per community
    pi = np.zeros((I, M))
    pi[np.arange(I), np.arange(I) // (I // M)] = 1.0

    # per-community category blocks
    theta = np.zeros((M, V))
    for m in range(M):
        block = slice(m * per_block, (m + 1) * per_block)
        theta[m, block] = rng.dirichlet(np.full(per_block, p["theta_alpha"]))

    eta = np.full(M, 1.0 / M)
    mu = np.full(I, p["base_events_per_user"] / (p["t_end"] * region.area))

    # influence: one within-community edge, first user -> second user
    A = np.zeros((I, I))
    upc = I // M
    t_mass = 1.0 / p["nu"]
    for m in range(M):
        block_venues = np.nonzero(vcat // per_block == m)[0]
        s_mass = float(np.mean([
            spatial_rect_integral(xy[v], p["h"], region) for v in block_venues]))
        A[m * upc, m * upc + 1] = p["triggers_per_source_event"] / (t_mass * s_mass)

    params = ModelParams(mu=mu, eta=eta, A=A, theta=theta, pi=pi,
                         phi=pi.copy())
    cfg = SimConfig(
        n_events=p["n_events_cap"],
        n_users=I, n_communities=M, n_categories=V,
        venues=venues, region=region, nu=p["nu"], h=p["h"],
        proposal_mode=p["proposal_mode"], safety_factor=p["safety_factor"],
        seed=seed,
        mu_init={"kind": "explicit", "value": mu},
        a_init={"kind": "explicit", "value": A},
        eta_init={"kind": "explicit", "value": eta},
        pi_init={"kind": "explicit", "value": pi},
        theta_init={"kind": "explicit", "value": theta},
    )
    return cfg, params


def table2_hyper(seed: int = 11, **overrides) -> HyperParams:
    kw = dict(nu=TABLE2["nu"], h=TABLE2["h"], M=TABLE2["n_communities"],
              S=10, epochs=250, lr=0.05,
              lr_scales={"A": 4.0, "phi": 3.0},
              s_eval=32, pair_threshold=1e-8, quad_nodes=48, seed=seed)
    kw.update(overrides)
    return HyperParams(**kw)


def synthetic_embeddings(V: int, dim: int = 16, seed: int = 5) -> EmbeddingTable:
    """Deterministic unit-norm embeddings for the synthetic category labels."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    vecs = rng.standard_normal((V, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return EmbeddingTable(category_labels(V), vecs)
