"""Next-location prediction: candidate venue scoring and top-K evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import PROB_FLOOR, HyperParams, ModelParams, Trace


@dataclass
class PredictionResult:
    """Per-test-event rankings and aggregate true-positive counts."""

    ks: tuple
    hits: dict                 # K -> number of test events with true venue in top K
    n_test: int
    true_ranks: np.ndarray     # 1-based rank of the true venue (n_cand + 1 if absent)
    ranked: np.ndarray         # (n_test, max K) top venue ids per event

    def hit_flags(self) -> np.ndarray:
        """(n_test, len(ks)) boolean hit matrix, monotone along the K axis."""
        return self.true_ranks[:, None] <= np.asarray(self.ks)[None, :]


def _score_table(params: ModelParams, use_category: bool):
    """Per-user x per-category mixing tables used by the scoring formula."""
    if use_category:
        u_tab = params.phi @ params.theta          # (I, V)
        base_tab = params.eta @ params.theta       # (V,)
    else:
        V = params.n_categories
        u_tab = np.ones((params.n_users, V))
        base_tab = np.full(V, params.eta.sum())
    return u_tab, base_tab


def score_candidates(params: ModelParams, hyper: HyperParams, history: Trace,
                     user: int, t: float, candidates,
                     use_category: bool = True):
    """Rank candidate venues for one upcoming event of ``user`` at time ``t``.

    Each candidate venue l is scored by log sum_g lambda_{user,g}(t, l) *
    theta[g, category(l)], with the community indicators of history events
    replaced by their phi expectations.  Returns (ranked venue ids, scores in
    that order); ties are broken by the lower venue id.  A user index outside
    the fitted model falls back to the mean base rate with no excitation.
    """
    candidates = np.asarray(candidates, dtype=int)
    if candidates.size == 0:
        raise ValueError("candidate set is empty")
    if history.n_events and t < history.times[-1]:
        raise ValueError("t must not precede the history")
    u_tab, base_tab = _score_table(params, use_category)
    cats = history.venues.categories[candidates]
    if 0 <= user < params.n_users:
        mu_u = params.mu[user]
        a_col = params.A[:, user]
    else:
        mu_u = float(params.mu.mean())
        a_col = None
    scores = mu_u * base_tab[cats]
    if a_col is not None and history.n_events:
        n_hist = int(np.searchsorted(history.times, t, side="left"))
        if n_hist:
            idx = np.arange(n_hist)
            w = a_col[history.users[idx]] * np.exp(-hyper.nu * (t - history.times[idx]))
            keep = w > 1e-15 * max(mu_u, 1e-300)
            idx, w = idx[keep], w[keep]
            if idx.size:
                h_users = hyper.h_for_users(history.n_users)
                hs = h_users[history.users[idx]]
                dx = history.venues.xy[candidates, 0][:, None] - history.xy[idx, 0][None, :]
                dy = history.venues.xy[candidates, 1][:, None] - history.xy[idx, 1][None, :]
                d = np.hypot(dx, dy)
                if hyper.kernel == "exponential_distance":
                    ks = np.exp(-d / (2.0 * hs)) / (2.0 * math.pi * hs)
                else:
                    ks = np.exp(-(d * d) / (2.0 * hs * hs)) / (2.0 * math.pi * hs * hs)
                mix = u_tab[history.users[idx]][:, cats]        # (W, C)
                scores = scores + np.einsum("w,cw,wc->c", w, ks, mix)
    scores = np.log(np.maximum(scores, PROB_FLOOR))
    order = np.lexsort((candidates, -scores))
    return candidates[order], scores[order]


def evaluate_topk(params: ModelParams, hyper: HyperParams, train: Trace,
                  test: Trace, ks: Sequence[int],
                  use_category: bool = True) -> PredictionResult:
    """Top-K hit counts over the test split.

    Candidates are the venues seen in training.  The history for each test
    event consists of all training events plus every earlier test event, from
    any user.
    """
    ks = tuple(sorted(int(k) for k in ks))
    candidates = np.unique(train.venue_ids)
    if not ks or ks[0] < 1:
        raise ValueError("ks must be positive")
    if ks[-1] > candidates.size:
        raise ValueError(f"K={ks[-1]} exceeds the {candidates.size} candidate venues")
    max_k = ks[-1]

    # combined chronological arrays (test events follow the training window)
    all_times = np.concatenate([train.times, test.times])
    all_users = np.concatenate([train.users, test.users])
    all_vids = np.concatenate([train.venue_ids, test.venue_ids])
    venues = train.venues
    all_xy = venues.xy[all_vids]
    h_users = hyper.h_for_users(train.n_users)
    u_tab, base_tab = _score_table(params, use_category)
    cand_cats = venues.categories[candidates]
    cand_xy = venues.xy[candidates]
    base_scores = base_tab[cand_cats]
    nu = hyper.nu
    n0 = train.n_events
    n_test = test.n_events
    pos_of_vid = {int(v): i for i, v in enumerate(candidates)}

    true_ranks = np.empty(n_test, dtype=int)
    ranked = np.empty((n_test, max_k), dtype=int)
    # drop history whose temporal kernel can no longer matter
    kt_floor = 1e-16
    for j in range(n_test):
        gi = n0 + j
        t = all_times[gi]
        end = int(np.searchsorted(all_times, t, side="left"))
        start = int(np.searchsorted(all_times, t + math.log(kt_floor) / nu,
                                    side="left"))
        user = int(all_users[gi])
        if 0 <= user < params.n_users:
            mu_u = params.mu[user]
            scores = mu_u * base_scores.copy()
            if end > start:
                w = params.A[all_users[start:end], user] \
                    * np.exp(-nu * (t - all_times[start:end]))
                keep = np.nonzero(w > kt_floor)[0]
                if keep.size:
                    idx = start + keep
                    wk = w[keep]
                    hs = h_users[all_users[idx]]
                    d = np.hypot(cand_xy[:, 0][:, None] - all_xy[idx, 0][None, :],
                                 cand_xy[:, 1][:, None] - all_xy[idx, 1][None, :])
                    if hyper.kernel == "exponential_distance":
                        ksp = np.exp(-d / (2.0 * hs)) / (2.0 * math.pi * hs)
                    else:
                        ksp = np.exp(-(d * d) / (2.0 * hs * hs)) / (2.0 * math.pi * hs * hs)
                    mix = u_tab[all_users[idx]][:, cand_cats]   # (W, C)
                    scores = scores + np.einsum("w,cw,wc->c", wk, ksp, mix)
        else:
            scores = float(params.mu.mean()) * base_scores.copy()

        true_vid = int(all_vids[gi])
        pos = pos_of_vid.get(true_vid)
        if pos is None:
            true_ranks[j] = candidates.size + 1
        else:
            s = scores[pos]
            true_ranks[j] = 1 + int(np.sum(scores > s)) \
                + int(np.sum((scores == s) & (candidates < true_vid)))
        part = np.argpartition(-scores, min(max_k, scores.size - 1))[:max_k]
        order = part[np.lexsort((candidates[part], -scores[part]))]
        ranked[j] = candidates[order]

    hits = {k: int(np.sum(true_ranks <= k)) for k in ks}
    return PredictionResult(ks=ks, hits=hits, n_test=n_test,
                            true_ranks=true_ranks, ranked=ranked)
