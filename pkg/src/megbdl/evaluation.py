"""Confusion matrices, their probabilistic normalizations, impurities and trees.

Convention: ``C[i, j]`` counts trials whose true region is ``i`` and whose
identified region is ``j``.  Columns of ``P`` are distributions over the true
region given the identification; rows of ``Q`` are distributions over the
identification given the true region.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


def tally(records, phase, n_regions):
    """Confusion matrix of ``phase`` (1 or 2) from trial outcome records."""
    key = f"phase{phase}_winner"
    C = np.zeros((n_regions, n_regions), dtype=np.int64)
    for rec in records:
        i, j = rec["true_region"], rec[key]
        if not (0 <= i < n_regions and 0 <= j < n_regions):
            raise ValueError(f"region index out of range in record {rec}")
        C[i, j] += 1
    return C


def normalize_columns(C):
    """Column-normalized ``P`` and the mask of all-zero columns (left as zero)."""
    C = np.asarray(C, dtype=float)
    s = C.sum(axis=0)
    empty = s == 0
    P = np.divide(C, s, out=np.zeros_like(C), where=~empty)
    return P, empty


def normalize_rows(C):
    C = np.asarray(C, dtype=float)
    s = C.sum(axis=1)
    empty = s == 0
    Q = np.divide(C, s[:, None], out=np.zeros_like(C), where=~empty[:, None])
    return Q, empty


@dataclass
class Impurities:
    mcr: np.ndarray
    gini: np.ndarray
    entropy: np.ndarray
    recall: np.ndarray
    defined: np.ndarray    # False for never-identified regions (values are NaN)


def impurities(P, defined=None):
    """Misclassification rate, Gini index, entropy (natural log) and recall per column."""
    P = np.asarray(P, dtype=float)
    if defined is None:
        defined = P.sum(axis=0) > 0
    diag = np.diag(P)
    mcr = 1.0 - diag
    gini = np.sum(P * (1.0 - P), axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    entropy = -plogp.sum(axis=0)
    recall = diag.copy()
    out = Impurities(mcr, gini, entropy + 0.0, recall, np.asarray(defined, dtype=bool))
    for arr in (out.mcr, out.gini, out.entropy, out.recall):
        arr[~out.defined] = np.nan
    return out


@dataclass
class ConfusionSuite:
    C: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    impurities: Impurities
    never_identified: np.ndarray
    trials_per_region: np.ndarray

    @classmethod
    def from_counts(cls, C):
        C = np.asarray(C, dtype=np.int64)
        P, empty = normalize_columns(C)
        Q, _ = normalize_rows(C)
        return cls(C, P, Q, impurities(P, ~empty), np.flatnonzero(empty), C.sum(axis=1))

    @property
    def total(self):
        return int(self.C.sum())


@dataclass
class IdentificationTree:
    """Star graph rooted at the identified region, edges to the true regions."""

    root: int
    self_loop: float
    edges: list          # (target region, weight), weight > prune threshold
    labels: dict

    def total_weight(self):
        return self.self_loop + sum(w for _, w in self.edges)

    def to_dict(self):
        return {
            "root": self.root,
            "label": self.labels.get(self.root, str(self.root)),
            "self_loop": self.self_loop,
            "edges": [{"to": t, "label": self.labels.get(t, str(t)), "weight": w}
                      for t, w in self.edges],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_dot(self):
        name = lambda k: self.labels.get(k, str(k))
        lines = [f"digraph region_{self.root} {{"]
        lines.append(f'  "{name(self.root)}" [shape=doublecircle];')
        lines.append(f'  "{name(self.root)}" -> "{name(self.root)}" '
                     f'[label="{self.self_loop:.4f}", tooltip="{self.self_loop!r}"];')
        for t, w in self.edges:
            lines.append(f'  "{name(self.root)}" -> "{name(t)}" [label="{w:.4f}", tooltip="{w!r}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def identification_tree(P, j, labels=None, prune=0.0):
    """Tree of column ``j`` of ``P``: self-loop ``P[j, j]``, edges ``j -> i`` for ``P[i, j] > prune``."""
    P = np.asarray(P, dtype=float)
    if not 0 <= j < P.shape[1]:
        raise IndexError(f"region index {j} out of range")
    labels = labels or {}
    col = P[:, j]
    edges = [(int(i), float(col[i])) for i in range(len(col)) if i != j and col[i] > prune]
    return IdentificationTree(int(j), float(col[j]), edges, dict(labels))


def region_labels(n_regions):
    width = len(str(n_regions - 1))
    return {l: f"R{l:0{width}d}" for l in range(n_regions)}


def phase_comparison(suite1, suite2):
    """Per-region (phase I, phase II) pairs of MCR and Gini, for scatter plots."""
    rows = []
    for l in range(len(suite1.C)):
        rows.append({
            "region": l,
            "mcr1": suite1.impurities.mcr[l], "mcr2": suite2.impurities.mcr[l],
            "gini1": suite1.impurities.gini[l], "gini2": suite2.impurities.gini[l],
        })
    return rows
