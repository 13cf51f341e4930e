"""Recovery error, community-quality losses and per-event community assignment."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import HyperParams, ModelParams, Trace
from .inference import TraceOps, expected_intensity_matrix

REL_ERR_THRESHOLD = 1e-9


def rel_err(true_matrix, est_matrix, threshold: float = REL_ERR_THRESHOLD) -> float:
    """Mean elementwise relative absolute error over included entries.

    Entries whose true magnitude falls below ``threshold`` are excluded (the
    ratio is undefined at zero).  Works for any equal-shape pair, e.g. the
    influence matrix or the per-user community posteriors.
    """
    t = np.asarray(true_matrix, dtype=float)
    e = np.asarray(est_matrix, dtype=float)
    if t.shape != e.shape:
        raise ValueError("matrices must have equal shapes")
    mask = np.abs(t) >= threshold
    if not np.any(mask):
        raise ValueError("all entries excluded by the magnitude threshold")
    return float(np.mean(np.abs(t[mask] - e[mask]) / np.abs(t[mask])))


class EmbeddingTable:
    """Map from category label to a fixed-dimension real vector."""

    def __init__(self, labels: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or len(labels) != vectors.shape[0]:
            raise ValueError("need one vector per label")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0):
            raise ValueError("embedding vectors must have nonzero norm")
        self.labels = list(labels)
        self.vectors = vectors
        self._index = {lab: i for i, lab in enumerate(self.labels)}
        if len(self._index) != len(self.labels):
            raise ValueError("duplicate embedding labels")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def get(self, label: str) -> Optional[np.ndarray]:
        i = self._index.get(label)
        return None if i is None else self.vectors[i]

    @staticmethod
    def load(path) -> "EmbeddingTable":
        """Plain-text format: one ``label dim_1 ... dim_D`` row per line."""
        labels, rows = [], []
        with open(path) as fh:
            for ln, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                try:
                    vec = [float(x) for x in parts[1:]]
                except ValueError as exc:
                    raise ValueError(f"{path}:{ln}: malformed embedding row") from exc
                if not vec:
                    raise ValueError(f"{path}:{ln}: row has no vector components")
                labels.append(parts[0])
                rows.append(vec)
        if not rows:
            raise ValueError(f"{path}: empty embedding file")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise ValueError(f"{path}: inconsistent embedding dimensions {sorted(widths)}")
        return EmbeddingTable(labels, np.array(rows))

    def save(self, path):
        with open(path, "w") as fh:
            for lab, vec in zip(self.labels, self.vectors):
                fh.write(lab + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def assign_event_community(params: ModelParams, hyper: HyperParams, trace: Trace,
                           event_index: Optional[int] = None, soft: bool = False,
                           ops: Optional[TraceOps] = None):
    """Posterior-responsibility community assignment per event.

    Responsibility of community m for event n is proportional to
    phi[user_n, m] * theta[m, c_n] * lambda-tilde[n, m], with expected history
    indicators.  Hard mode returns the argmax (ties to the lowest index); the
    soft variant returns the normalized responsibility matrix.
    """
    lam = expected_intensity_matrix(params, hyper, trace, ops=ops)
    resp = params.phi[trace.users] * params.theta[:, trace.categories].T * lam
    if soft:
        tot = resp.sum(axis=1, keepdims=True)
        tot[tot == 0] = 1.0
        resp = resp / tot
        return resp if event_index is None else resp[event_index]
    hard = np.argmax(resp, axis=1)
    return hard if event_index is None else int(hard[event_index])


def _category_means(freq_assignments, freq_trace: Trace, embeddings: EmbeddingTable,
                    k_cat: int, category_labels, M: int):
    """Per-community mean embedding of the k_cat most frequent categories."""
    counts = np.zeros((M, freq_trace.n_categories))
    np.add.at(counts, (np.asarray(freq_assignments, dtype=int),
                       freq_trace.categories), 1.0)
    means = [None] * M
    top_cats = [[] for _ in range(M)]
    for m in range(M):
        present = np.nonzero(counts[m] > 0)[0]
        with_emb = [c for c in present if category_labels[c] in embeddings]
        dropped = len(present) - len(with_emb)
        if dropped:
            warnings.warn(f"community {m}: {dropped} categories lack embeddings")
        if not with_emb:
            continue
        # most frequent first; ties broken lexicographically by label
        ordered = sorted(with_emb,
                         key=lambda c: (-counts[m, c], category_labels[c]))
        chosen = ordered[:k_cat]
        top_cats[m] = [category_labels[c] for c in chosen]
        means[m] = np.mean([embeddings.get(category_labels[c]) for c in chosen],
                           axis=0)
    return means, top_cats


def category_loss(assignments, trace: Trace, embeddings: EmbeddingTable,
                  k_cat: int, category_labels: Optional[Sequence[str]] = None,
                  freq_assignments=None, freq_trace: Optional[Trace] = None,
                  n_communities: Optional[int] = None, return_sum: bool = False):
    """Mean cosine-distance between event embeddings and their community mean.

    Community means average the embeddings of each community's ``k_cat`` most
    frequent categories, counted on the frequency data (training split when
    given, else the scored data itself).  Events whose category lacks an
    embedding, or whose community has no frequency events, are dropped with a
    warning and do not count toward the mean.
    """
    assignments = np.asarray(assignments, dtype=int)
    if assignments.shape != (trace.n_events,):
        raise ValueError("assignments must have one entry per event")
    if category_labels is None:
        category_labels = [str(c) for c in range(trace.n_categories)]
    if freq_assignments is None:
        freq_assignments, freq_trace = assignments, trace
    M = int(n_communities) if n_communities is not None \
        else int(max(assignments.max(initial=0), np.max(freq_assignments, initial=0)) + 1)
    means, _ = _category_means(freq_assignments, freq_trace, embeddings,
                               k_cat, category_labels, M)
    total = 0.0
    retained = 0
    dropped = 0
    for n in range(trace.n_events):
        vec = embeddings.get(category_labels[trace.categories[n]])
        mean = means[assignments[n]]
        if vec is None or mean is None:
            dropped += 1
            continue
        cos = float(vec @ mean / (np.linalg.norm(vec) * np.linalg.norm(mean)))
        total += 1.0 - cos
        retained += 1
    if dropped:
        warnings.warn(f"category_loss: dropped {dropped} events without "
                      "embeddings or community means")
    if retained == 0:
        raise ValueError("no events retained for the category loss")
    return total if return_sum else total / retained


def location_loss(assignments, trace: Trace, return_sum: bool = False):
    """Within-community squared distance to the community coordinate centroid.

    Equals the k-means objective with one centroid per community, averaged per
    event (or summed with ``return_sum``).
    """
    assignments = np.asarray(assignments, dtype=int)
    if assignments.shape != (trace.n_events,):
        raise ValueError("assignments must have one entry per event")
    if trace.n_events == 0:
        return 0.0
    xy = trace.xy
    M = int(assignments.max()) + 1
    total = 0.0
    for m in range(M):
        pts = xy[assignments == m]
        if pts.shape[0] == 0:
            continue
        centroid = pts.mean(axis=0)
        total += float(((pts - centroid) ** 2).sum())
    return total if return_sum else total / trace.n_events


@dataclass
class CommunityReport:
    """Per-community metric bundle for one fitted model and dataset."""

    category_losses: dict            # k_cat -> {"mean": float, "sum": float}
    location_loss_mean: float
    location_loss_sum: float
    community_sizes: list
    top_categories: dict             # community -> [labels]

    def to_dict(self) -> dict:
        return {
            "category_losses": {str(k): v for k, v in self.category_losses.items()},
            "location_loss": {"mean": self.location_loss_mean,
                              "sum": self.location_loss_sum},
            "community_sizes": list(map(int, self.community_sizes)),
            "top_categories": {str(k): v for k, v in self.top_categories.items()},
        }


def community_report(params: ModelParams, hyper: HyperParams, train: Trace,
                     test: Trace, embeddings: EmbeddingTable,
                     k_cats: Sequence[int],
                     category_labels: Optional[Sequence[str]] = None,
                     soft: bool = False) -> CommunityReport:
    """Category and location losses of the fitted communities on the test split."""
    if category_labels is None:
        category_labels = [str(c) for c in range(train.n_categories)]
    train_assign = assign_event_community(params, hyper, train)
    test_assign = assign_event_community(params, hyper, test)
    M = params.n_communities
    cat_losses = {}
    top = {}
    for k in k_cats:
        mean = category_loss(test_assign, test, embeddings, k,
                             category_labels=category_labels,
                             freq_assignments=train_assign, freq_trace=train,
                             n_communities=M)
        tot = category_loss(test_assign, test, embeddings, k,
                            category_labels=category_labels,
                            freq_assignments=train_assign, freq_trace=train,
                            n_communities=M, return_sum=True)
        cat_losses[int(k)] = {"mean": mean, "sum": tot}
        if not top:
            _, tops = _category_means(train_assign, train, embeddings,
                                      int(k), category_labels, M)
            top = {m: tops[m] for m in range(M)}
    sizes = np.bincount(test_assign, minlength=M)
    return CommunityReport(
        category_losses=cat_losses,
        location_loss_mean=location_loss(test_assign, test),
        location_loss_sum=location_loss(test_assign, test, return_sum=True),
        community_sizes=sizes.tolist(),
        top_categories=top,
    )
