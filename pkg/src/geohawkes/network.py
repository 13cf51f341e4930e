"""Influence-graph construction, maximum weighted spanning forests and export."""

from __future__ import annotations

import csv
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

Edge = Tuple[int, int, float]


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


@dataclass
class InfluenceGraph:
    """Weighted directed influence graph over users, with optional overlay edges."""

    weights: np.ndarray                       # (I, I), weights[i, j]: i influences j
    overlay: Optional[List[Tuple[int, int]]] = None   # known social edges

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.weights.shape[1]:
            raise ValueError("weights must be a square matrix")
        if np.any(self.weights < 0):
            raise ValueError("edge weights must be non-negative")

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    @staticmethod
    def from_params(params) -> "InfluenceGraph":
        return InfluenceGraph(weights=params.A.copy())


def normalized_symmetric_weights(graph: InfluenceGraph) -> np.ndarray:
    """Undirected weights w(i,j) = max(A_ij, A_ji), scaled to [0, 1], no self-loops."""
    w = np.maximum(graph.weights, graph.weights.T)
    np.fill_diagonal(w, 0.0)
    top = w.max()
    if top > 0:
        w = w / top
    return w


def mwsf(graph: InfluenceGraph, threshold: float) -> List[Edge]:
    """Maximum weighted spanning forest of the thresholded influence graph.

    Weights are symmetrized by max and normalized to [0, 1] by the largest
    entry; edges with weight <= threshold are dropped; Kruskal on descending
    weights (ties by lexicographic node pair) with union-find yields a
    per-component maximum spanning tree.  Returned edges are sorted by node
    pair; an empty forest is valid.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1] after normalization")
    w = normalized_symmetric_weights(graph)
    n = w.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    keep = w[iu, ju] > threshold
    ei, ej, ew = iu[keep], ju[keep], w[iu, ju][keep]
    order = np.lexsort((ej, ei, -ew))
    uf = UnionFind(n)
    forest = [(int(ei[k]), int(ej[k]), float(ew[k]))
              for k in order if uf.union(int(ei[k]), int(ej[k]))]
    forest.sort(key=lambda e: (e[0], e[1]))
    return forest


def forest_is_acyclic(edges: List[Edge], n_nodes: int) -> bool:
    uf = UnionFind(n_nodes)
    return all(uf.union(u, v) for u, v, _ in edges)


def export_graph(edges: List[Edge], n_nodes: int, path, fmt: str = "csv"):
    """Write a forest (or any edge set) as edge-list CSV or GraphML 1.0.

    CSV columns are ``src,dst,weight`` with weights printed to 6 decimals;
    GraphML carries a single double attribute ``weight``.  Node ordering is
    stable (ascending ids).
    """
    path = str(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["src", "dst", "weight"])
            for u, v, w in edges:
                out.writerow([u, v, f"{w:.6f}"])
    elif fmt == "graphml":
        root = ET.Element("graphml", xmlns="http://graphml.graphdrawing.org/xmlns")
        key = ET.SubElement(root, "key", id="d0")
        key.set("for", "edge")
        key.set("attr.name", "weight")
        key.set("attr.type", "double")
        g = ET.SubElement(root, "graph", id="G", edgedefault="undirected")
        for i in range(n_nodes):
            ET.SubElement(g, "node", id=f"n{i}")
        for k, (u, v, w) in enumerate(edges):
            e = ET.SubElement(g, "edge", id=f"e{k}", source=f"n{u}", target=f"n{v}")
            d = ET.SubElement(e, "data", key="d0")
            d.text = f"{w:.6f}"
        tree = ET.ElementTree(root)
        ET.indent(tree)
        tree.write(path, xml_declaration=True, encoding="unicode")
    else:
        raise ValueError(f"unknown export format {fmt!r}")


def read_graph(path, fmt: Optional[str] = None) -> List[Edge]:
    """Re-import an exported edge set (round-trip inverse of export_graph)."""
    path = str(path)
    if fmt is None:
        fmt = "graphml" if path.endswith(".graphml") else "csv"
    edges: List[Edge] = []
    if fmt == "csv":
        with open(path, newline="") as fh:
            for row in list(csv.reader(fh))[1:]:
                if row:
                    edges.append((int(row[0]), int(row[1]), float(row[2])))
    elif fmt == "graphml":
        ns = {"g": "http://graphml.graphdrawing.org/xmlns"}
        root = ET.parse(path).getroot()
        for e in root.iter("{http://graphml.graphdrawing.org/xmlns}edge"):
            u = int(e.get("source")[1:])
            v = int(e.get("target")[1:])
            data = e.find("g:data", ns)
            edges.append((u, v, float(data.text)))
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return edges
