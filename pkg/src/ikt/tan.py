"""Tree-augmented naive Bayes over the extracted evidence features.

The class node (next-response correctness) is parent of every evidence
node; evidence nodes additionally form a tree chosen to maximize
class-conditional mutual information (maximum spanning tree, built by
minimizing negated weights). Continuous evidence is discretized with
entropy-based recursive binary splits accepted under the minimum
description length criterion; conditional probability tables are
Laplace-smoothed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Discretizer",
    "TanStructure",
    "TanModel",
    "ExplanationRecord",
    "NodeContribution",
    "mdlp_cutpoints",
    "fit_discretizer",
    "conditional_mutual_information",
    "max_spanning_parents",
    "learn_structure",
    "estimate_cpts",
    "fit_tan",
    "predict_proba",
    "predict_many",
    "explain",
    "save_model",
    "load_model",
]


# ---------------------------------------------------------------------------
# supervised discretization

def _entropy2(count1, total):
    """Binary entropy in bits of a label split, vectorized; 0*log0 = 0."""
    count1 = np.asarray(count1, dtype=float)
    total = np.asarray(total, dtype=float)
    p1 = np.divide(count1, total, out=np.zeros_like(count1 + total), where=total > 0)
    p0 = 1.0 - p1
    h = np.zeros_like(p1)
    mask = p1 > 0
    h = h - np.where(mask, p1 * np.log2(np.where(mask, p1, 1.0)), 0.0)
    mask = p0 > 0
    h = h - np.where(mask, p0 * np.log2(np.where(mask, p0, 1.0)), 0.0)
    return h


def _n_classes(count1, total) -> int:
    return int(count1 > 0) + int(count1 < total)


def _mdlp_recurse(v: np.ndarray, y: np.ndarray, lo: int, hi: int, cuts: list) -> None:
    n = hi - lo
    if n < 2:
        return
    seg_v = v[lo:hi]
    seg_y = y[lo:hi]
    cum1 = np.cumsum(seg_y)
    total1 = int(cum1[-1])
    if _n_classes(total1, n) < 2:
        return
    cand = np.nonzero(seg_v[:-1] < seg_v[1:])[0]
    if cand.size == 0:
        return

    n_left = cand + 1
    c1_left = cum1[cand]
    n_right = n - n_left
    c1_right = total1 - c1_left
    ent = float(_entropy2(total1, n))
    ent_left = _entropy2(c1_left, n_left)
    ent_right = _entropy2(c1_right, n_right)
    gains = ent - (n_left * ent_left + n_right * ent_right) / n
    best = int(np.argmax(gains))
    gain = float(gains[best])

    k = 2
    k1 = _n_classes(int(c1_left[best]), int(n_left[best]))
    k2 = _n_classes(int(c1_right[best]), int(n_right[best]))
    delta = math.log2(3 ** k - 2) - (k * ent - k1 * float(ent_left[best])
                                     - k2 * float(ent_right[best]))
    if gain <= (math.log2(n - 1) + delta) / n:
        return

    cut_idx = int(cand[best])
    cuts.append(float((seg_v[cut_idx] + seg_v[cut_idx + 1]) / 2.0))
    _mdlp_recurse(v, y, lo, lo + cut_idx + 1, cuts)
    _mdlp_recurse(v, y, lo + cut_idx + 1, hi, cuts)


def mdlp_cutpoints(values, labels) -> list[float]:
    """Cutpoints for one continuous feature against the binary label.

    Recursive binary partitioning on information gain; a split is kept
    only when the gain beats its description-length cost, so a feature
    carrying no class signal yields no cutpoints at all.
    """
    v = np.asarray(values, dtype=float)
    y = np.asarray(labels, dtype=int)
    order = np.argsort(v, kind="stable")
    cuts: list[float] = []
    _mdlp_recurse(v[order], y[order], 0, len(v), cuts)
    return sorted(cuts)


@dataclass(frozen=True)
class Discretizer:
    """Cutpoints per continuous feature; categorical features untouched.

    n cutpoints define n+1 bins; bin b holds values in
    [cut[b-1], cut[b]), so the bins partition the whole real line.
    """

    cutpoints: dict = field(default_factory=dict)

    def n_bins(self, feature: str) -> int:
        return len(self.cutpoints[feature]) + 1

    def transform_value(self, feature: str, value: float) -> int:
        cuts = self.cutpoints.get(feature)
        if cuts is None:
            return int(value)
        return int(np.searchsorted(cuts, value, side="right"))

    def transform_column(self, feature: str, column: np.ndarray) -> np.ndarray:
        cuts = self.cutpoints.get(feature)
        if cuts is None:
            return np.asarray(column, dtype=int)
        return np.searchsorted(np.asarray(cuts), column, side="right").astype(int)

    def apply(self, columns: dict) -> dict:
        return {name: self.transform_column(name, col) for name, col in columns.items()}


def fit_discretizer(columns: dict, labels, continuous=("mastery",)) -> Discretizer:
    """MDL-based cutpoints for each continuous feature present."""
    cuts = {}
    for name in continuous:
        if name in columns:
            cuts[name] = tuple(mdlp_cutpoints(columns[name], labels))
    return Discretizer(cutpoints=cuts)


# ---------------------------------------------------------------------------
# structure learning

def conditional_mutual_information(a, b, y) -> float:
    """I(a; b | y) from empirical frequencies, natural log.

    The two feature arguments are canonicalized internally so the result
    is exactly symmetric, not merely up to floating-point reordering.
    """
    a_codes = np.unique(np.asarray(a), return_inverse=True)[1].astype(np.int64)
    b_codes = np.unique(np.asarray(b), return_inverse=True)[1].astype(np.int64)
    y_codes = np.unique(np.asarray(y), return_inverse=True)[1].astype(np.int64)
    if a_codes.tobytes() > b_codes.tobytes():
        a_codes, b_codes = b_codes, a_codes

    na = int(a_codes.max()) + 1 if a_codes.size else 0
    nb = int(b_codes.max()) + 1 if b_codes.size else 0
    ny = int(y_codes.max()) + 1 if y_codes.size else 0
    if 0 in (na, nb, ny):
        return 0.0
    n = a_codes.size
    counts = np.bincount((a_codes * nb + b_codes) * ny + y_codes,
                         minlength=na * nb * ny).reshape(na, nb, ny).astype(float)
    n_ay = counts.sum(axis=1)
    n_by = counts.sum(axis=0)
    n_y = counts.sum(axis=(0, 1))

    nz = counts.ravel() > 0
    a_idx, b_idx, y_idx = np.unravel_index(np.nonzero(nz)[0], counts.shape)
    c = counts[a_idx, b_idx, y_idx]
    terms = c / n * np.log(c * n_y[y_idx] / (n_ay[a_idx, y_idx] * n_by[b_idx, y_idx]))
    return float(terms.sum())


@dataclass(frozen=True)
class TanStructure:
    """Evidence tree: every feature has at most one evidence parent; the
    class is an implicit parent of every feature."""

    features: tuple
    parent: dict

    @property
    def root(self) -> str:
        for f in self.features:
            if self.parent[f] is None:
                return f
        raise ValueError("structure has no root")

    def is_tree(self) -> bool:
        roots = [f for f in self.features if self.parent[f] is None]
        if len(roots) != 1:
            return False
        seen = set()
        for f in self.features:
            node, path = f, set()
            while node is not None:
                if node in path:
                    return False
                path.add(node)
                node = self.parent[node]
            seen.add(f)
        return len(seen) == len(self.features)


def max_spanning_parents(weight: np.ndarray) -> list:
    """Parent index per node for the maximum spanning tree of a weight
    matrix, grown from node 0; node 0's parent is None.

    Ties resolve to the lowest-index pair in scan order, so equal
    weights always produce the same tree.
    """
    n = len(weight)
    parent: list = [None] * n
    in_tree = [0]
    remaining = list(range(1, n))
    while remaining:
        best = None
        for i in in_tree:
            for j in remaining:
                if best is None or weight[i, j] > best[0]:
                    best = (weight[i, j], i, j)
        _, i, j = best
        parent[j] = i
        in_tree.append(j)
        remaining.remove(j)
    return parent


def learn_structure(disc_columns: dict, labels) -> TanStructure:
    """Maximum spanning tree over pairwise class-conditional MI.

    Edges point away from the root (the first feature); the class node
    is implicitly parent of everything.
    """
    features = list(disc_columns)
    if len(features) < 2:
        raise ValueError("need at least two evidence features")
    n = len(features)
    y = np.asarray(labels)
    weight = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            w = conditional_mutual_information(disc_columns[features[i]],
                                               disc_columns[features[j]], y)
            weight[i, j] = weight[j, i] = w
    parent_idx = max_spanning_parents(weight)
    parent = {features[j]: (features[i] if i is not None else None)
              for j, i in enumerate(parent_idx)}
    return TanStructure(features=tuple(features), parent=parent)


# ---------------------------------------------------------------------------
# parameters and inference

@dataclass
class TanModel:
    """Fitted classifier: structure, domains, smoothed tables, discretizer.

    ``cpts[f]`` has shape (|domain(f)|, |domain(parent(f))| or 1, 2) and
    every column over the first axis sums to 1. Immutable in use.
    """

    structure: TanStructure
    domains: dict
    class_prior: np.ndarray
    cpts: dict
    discretizer: Discretizer
    alpha: float = 1.0

    @property
    def features(self) -> tuple:
        return self.structure.features


def estimate_cpts(disc_columns: dict, labels, structure: TanStructure,
                  alpha: float = 1.0, discretizer: Discretizer | None = None) -> TanModel:
    """Smoothed conditional probability tables for a fixed structure.

    alpha=0 gives maximum-likelihood frequencies; contexts never seen in
    training fall back to a uniform column either way.
    """
    y = np.asarray(labels, dtype=int)
    n = y.size
    domains = {f: np.unique(np.asarray(disc_columns[f], dtype=int))
               for f in structure.features}
    codes = {f: np.searchsorted(domains[f], np.asarray(disc_columns[f], dtype=int))
             for f in structure.features}

    prior_counts = np.bincount(y, minlength=2).astype(float)
    class_prior = (prior_counts + alpha) / (n + 2.0 * alpha)

    cpts = {}
    for f in structure.features:
        d = len(domains[f])
        p_feat = structure.parent[f]
        p = len(domains[p_feat]) if p_feat is not None else 1
        pcodes = codes[p_feat] if p_feat is not None else np.zeros(n, dtype=int)
        counts = np.bincount((codes[f] * p + pcodes) * 2 + y,
                             minlength=d * p * 2).reshape(d, p, 2).astype(float)
        totals = counts.sum(axis=0, keepdims=True)
        smoothed = counts + alpha
        denom = totals + alpha * d
        with np.errstate(invalid="ignore"):
            cpt = np.where(denom > 0, smoothed / np.where(denom > 0, denom, 1.0), 1.0 / d)
        cpts[f] = cpt
    return TanModel(structure=structure, domains=domains, class_prior=class_prior,
                    cpts=cpts, discretizer=discretizer or Discretizer(), alpha=alpha)


def fit_tan(columns: dict, labels, continuous=("mastery",), alpha: float = 1.0) -> TanModel:
    """Discretize, learn the evidence tree, estimate tables."""
    disc = fit_discretizer(columns, labels, continuous)
    disc_columns = disc.apply(columns)
    structure = learn_structure(disc_columns, labels)
    return estimate_cpts(disc_columns, labels, structure, alpha=alpha, discretizer=disc)


@dataclass(frozen=True)
class NodeContribution:
    feature: str
    value: object
    parent_value: object
    log_ratio: float


@dataclass(frozen=True)
class ExplanationRecord:
    """Additive decomposition of the posterior log-odds.

    prior_log_odds + sum of node log_ratios equals log_odds, and the
    posterior is the logistic transform of log_odds.
    """

    posterior: float
    prior_log_odds: float
    log_odds: float
    contributions: tuple
    flags: tuple


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def _node_terms(model: TanModel, evidence: dict):
    """Per-node (p0, p1) lookups plus out-of-domain flags."""
    disc = model.discretizer
    terms = []
    flags = []
    for f in model.features:
        raw = evidence[f]
        val = disc.transform_value(f, raw) if f in disc.cutpoints else int(raw)
        dom = model.domains[f]
        pos = int(np.searchsorted(dom, val))
        in_dom = pos < len(dom) and dom[pos] == val
        p_feat = model.structure.parent[f]
        if p_feat is not None:
            praw = evidence[p_feat]
            pval = (disc.transform_value(p_feat, praw)
                    if p_feat in disc.cutpoints else int(praw))
            pdom = model.domains[p_feat]
            ppos = int(np.searchsorted(pdom, pval))
            p_in_dom = ppos < len(pdom) and pdom[ppos] == pval
        else:
            pval = None
            ppos = 0
            p_in_dom = True
        if in_dom and p_in_dom:
            p0 = float(model.cpts[f][pos, ppos, 0])
            p1 = float(model.cpts[f][pos, ppos, 1])
        else:
            uniform = 1.0 / len(dom)
            p0 = p1 = uniform
            which = f if not in_dom else p_feat
            bad = raw if not in_dom else evidence[p_feat]
            flag = (f"value {bad!r} for {which} is outside the model domain; "
                    "uniform fallback used")
            if flag not in flags:
                flags.append(flag)
        terms.append((f, val, pval, p0, p1))
    return terms, flags


def predict_proba(model: TanModel, evidence: dict) -> float:
    """Probability the next response is correct, given the evidence tuple."""
    terms, _ = _node_terms(model, evidence)
    log_odds = _log(float(model.class_prior[1])) - _log(float(model.class_prior[0]))
    for _, _, _, p0, p1 in terms:
        log_odds += _log(p1) - _log(p0)
    return _sigmoid(log_odds)


def explain(model: TanModel, evidence: dict) -> ExplanationRecord:
    """Posterior plus each node's exact log-likelihood-ratio contribution."""
    terms, flags = _node_terms(model, evidence)
    prior_lo = _log(float(model.class_prior[1])) - _log(float(model.class_prior[0]))
    contributions = []
    log_odds = prior_lo
    for f, val, pval, p0, p1 in terms:
        ratio = _log(p1) - _log(p0)
        contributions.append(NodeContribution(f, val, pval, ratio))
        log_odds += ratio
    return ExplanationRecord(
        posterior=_sigmoid(log_odds),
        prior_log_odds=prior_lo,
        log_odds=log_odds,
        contributions=tuple(contributions),
        flags=tuple(flags),
    )


def predict_many(model: TanModel, columns: dict) -> np.ndarray:
    """Vectorized predictions for a column batch (same math as
    predict_proba; out-of-domain values likewise fall back to uniform)."""
    disc_columns = {}
    n = None
    for f in model.features:
        col = columns[f]
        disc_columns[f] = (model.discretizer.transform_column(f, col)
                           if f in model.discretizer.cutpoints
                           else np.asarray(col, dtype=int))
        n = len(disc_columns[f])

    codes = {}
    valid = {}
    for f in model.features:
        dom = model.domains[f]
        pos = np.searchsorted(dom, disc_columns[f])
        ok = pos < len(dom)
        pos_clipped = np.minimum(pos, len(dom) - 1)
        ok &= dom[pos_clipped] == disc_columns[f]
        codes[f] = pos_clipped
        valid[f] = ok

    log_odds = np.full(n, math.log(float(model.class_prior[1]))
                       - math.log(float(model.class_prior[0])))
    for f in model.features:
        p_feat = model.structure.parent[f]
        if p_feat is not None:
            pcodes = codes[p_feat]
            ok = valid[f] & valid[p_feat]
        else:
            pcodes = np.zeros(n, dtype=int)
            ok = valid[f]
        p0 = model.cpts[f][codes[f], pcodes, 0]
        p1 = model.cpts[f][codes[f], pcodes, 1]
        ratio = np.where(ok, np.log(p1) - np.log(p0), 0.0)
        log_odds += ratio
    out = np.empty(n)
    pos_mask = log_odds >= 0
    out[pos_mask] = 1.0 / (1.0 + np.exp(-log_odds[pos_mask]))
    e = np.exp(log_odds[~pos_mask])
    out[~pos_mask] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# serialization

_MAGIC = "ikt-tan-model v1"


def save_model(model: TanModel, path: str) -> None:
    """Plain-text, versioned, round-trip exact (floats stored as repr)."""
    lines = [_MAGIC,
             f"alpha = {float(model.alpha)!r}",
             f"class_prior = {float(model.class_prior[0])!r} {float(model.class_prior[1])!r}",
             "features = " + " ".join(model.features)]
    for f in model.features:
        if f in model.discretizer.cutpoints:
            lines.append(f"[cutpoints {f}]")
            cuts = model.discretizer.cutpoints[f]
            if cuts:
                lines.append(" ".join(repr(float(c)) for c in cuts))
    for f in model.features:
        lines.append(f"[domain {f}]")
        lines.append(" ".join(str(int(v)) for v in model.domains[f]))
    lines.append("[tree]")
    for f in model.features:
        p = model.structure.parent[f]
        lines.append(f"{f} {p if p is not None else '-'}")
    for f in model.features:
        lines.append(f"[cpt {f}]")
        cpt = model.cpts[f]
        for vi in range(cpt.shape[0]):
            for pi in range(cpt.shape[1]):
                lines.append(f"{vi} {pi} {float(cpt[vi, pi, 0])!r} {float(cpt[vi, pi, 1])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path: str) -> TanModel:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{path}: not a recognized model file")
    alpha = None
    class_prior = None
    features: list[str] = []
    cutpoints: dict = {}
    domains: dict = {}
    parent: dict = {}
    cpt_rows: dict = {}
    section = None
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            if section.startswith("cpt "):
                cpt_rows[section.split(" ", 1)[1]] = []
            elif section.startswith("cutpoints "):
                # zero-cutpoint features still count as continuous
                cutpoints[section.split(" ", 1)[1]] = ()
            continue
        if section is None:
            key, _, value = line.partition(" = ")
            if key == "alpha":
                alpha = float(value)
            elif key == "class_prior":
                class_prior = np.array([float(v) for v in value.split()])
            elif key == "features":
                features = value.split()
            continue
        if section.startswith("cutpoints "):
            name = section.split(" ", 1)[1]
            cutpoints[name] = tuple(float(v) for v in line.split()) if line.strip() else ()
        elif section.startswith("domain "):
            name = section.split(" ", 1)[1]
            domains[name] = np.array([int(v) for v in line.split()], dtype=int)
        elif section == "tree":
            f, p = line.split()
            parent[f] = None if p == "-" else p
        elif section.startswith("cpt "):
            cpt_rows[section.split(" ", 1)[1]].append(line.split())

    structure = TanStructure(features=tuple(features), parent=parent)
    cpts = {}
    for f in features:
        d = len(domains[f])
        p_feat = parent[f]
        p = len(domains[p_feat]) if p_feat is not None else 1
        cpt = np.zeros((d, p, 2))
        for vi, pi, p0, p1 in cpt_rows[f]:
            cpt[int(vi), int(pi), 0] = float(p0)
            cpt[int(vi), int(pi), 1] = float(p1)
        cpts[f] = cpt
    return TanModel(structure=structure, domains=domains, class_prior=class_prior,
                    cpts=cpts, discretizer=Discretizer(cutpoints=cutpoints), alpha=alpha)
