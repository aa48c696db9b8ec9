"""Two-state skill-mastery tracing and brute-force parameter fitting.

Each skill is modelled independently: a hidden learned/unlearned state
with a one-way learning transition, plus guess and slip noise on the
binary responses. Fitting maximizes response log-likelihood over a full
parameter grid; guess and slip are capped to avoid the well-known
degenerate optima.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BktParams",
    "FitGrid",
    "NoSkillDataError",
    "MasteryTracker",
    "posterior_given_obs",
    "advance",
    "trace_mastery",
    "sequence_log_likelihood",
    "fit_skill",
    "fit_all_skills",
    "mean_params",
    "save_params_table",
    "load_params_table",
]


class NoSkillDataError(Exception):
    """No non-empty response sequence was supplied for a skill."""


@dataclass(frozen=True)
class BktParams:
    """Per-skill probabilities: initial mastery, learning, guess, slip."""

    l0: float
    t: float
    g: float
    s: float


def posterior_given_obs(params: BktParams, prior: float, obs: int) -> float:
    """Belief update after observing one response.

    A zero denominator (the observation has probability zero under the
    model) carries no usable evidence, so the prior is returned unchanged.
    """
    if obs:
        num = prior * (1.0 - params.s)
        den = num + (1.0 - prior) * params.g
    else:
        num = prior * params.s
        den = num + (1.0 - prior) * (1.0 - params.g)
    if den == 0.0:
        return prior
    return num / den


def advance(params: BktParams, posterior: float) -> float:
    """One learning opportunity: unlearned mass transitions with rate t."""
    return posterior + (1.0 - posterior) * params.t


class MasteryTracker:
    """Streaming belief state for one student on one skill.

    Carries the unlearned mass alongside the prior instead of deriving
    it as ``1 - prior``; in long runs of correct answers the prior
    saturates toward 1 and the subtraction would destroy the precision
    of the small complement that later wrong answers depend on. The
    updates are still exactly the posterior-then-advance recurrence.
    """

    __slots__ = ("params", "prior", "coprior")

    def __init__(self, params: BktParams):
        self.params = params
        self.prior = params.l0
        self.coprior = 1.0 - params.l0

    def step_probability(self, obs: int) -> float:
        """P(obs | history) before updating."""
        p = self.params
        if obs:
            return self.prior * (1.0 - p.s) + self.coprior * p.g
        return self.prior * p.s + self.coprior * (1.0 - p.g)

    def update(self, obs: int) -> None:
        p = self.params
        if obs:
            num = self.prior * (1.0 - p.s)
            alt = self.coprior * p.g
        else:
            num = self.prior * p.s
            alt = self.coprior * (1.0 - p.g)
        den = num + alt
        if den == 0.0:
            post, copost = self.prior, self.coprior
        else:
            post = num / den
            copost = alt / den
        self.prior = post + copost * p.t
        self.coprior = copost * (1.0 - p.t)


def trace_mastery(params: BktParams, responses) -> np.ndarray:
    """Mastery prior before each response; entry 0 is l0.

    The prior (not the posterior) is the value available when the
    response it precedes is still unknown, so it is what downstream
    prediction consumes.
    """
    responses = list(responses)
    if not responses:
        raise ValueError("responses must be non-empty")
    trace = np.empty(len(responses))
    state = MasteryTracker(params)
    for i, r in enumerate(responses):
        trace[i] = state.prior
        state.update(r)
    return trace


def sequence_log_likelihood(params: BktParams, responses) -> float:
    """Sum of log P(response | history) along one skill sequence."""
    responses = list(responses)
    if not responses:
        raise ValueError("responses must be non-empty")
    ll = 0.0
    state = MasteryTracker(params)
    for r in responses:
        p = state.step_probability(r)
        ll += math.log(p) if p > 0.0 else -math.inf
        state.update(r)
    return ll


@dataclass(frozen=True)
class FitGrid:
    """Search grid: every parameter in {step, 2*step, ...} up to its cap."""

    step: float = 0.05
    guess_cap: float = 0.30
    slip_cap: float = 0.30

    def _values(self, cap: float) -> np.ndarray:
        n = int(round(cap / self.step))
        return np.round(np.arange(1, n + 1) * self.step, 10)

    @property
    def l0_values(self) -> np.ndarray:
        return self._values(1.0 - self.step)

    @property
    def t_values(self) -> np.ndarray:
        return self._values(1.0 - self.step)

    @property
    def g_values(self) -> np.ndarray:
        return self._values(self.guess_cap)

    @property
    def s_values(self) -> np.ndarray:
        return self._values(self.slip_cap)


def _dedup_sequences(sequences) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """Canonicalize to sorted unique response patterns with multiplicities.

    Sorting makes the fit exactly invariant to input order; grouping
    identical patterns avoids recomputing their likelihood.
    """
    counts: dict[tuple[int, ...], int] = {}
    for seq in sequences:
        pat = tuple(int(r) for r in seq)
        if not pat:
            continue
        counts[pat] = counts.get(pat, 0) + 1
    patterns = sorted(counts)
    return patterns, np.array([counts[p] for p in patterns], dtype=float)


def grid_log_likelihoods(sequences, grid: FitGrid) -> np.ndarray:
    """Total log-likelihood at every grid point.

    Returns an array of shape (|l0|, |t|, |g|, |s|). The forward pass is
    expressed as a chain of 2x2 matrices per (t, g, s) combination; the
    final likelihood is linear in the initial state distribution, so the
    whole l0 axis costs a single extra broadcast.
    """
    patterns, weights = _dedup_sequences(sequences)
    if not patterns:
        raise NoSkillDataError("no non-empty response sequences")

    l0 = grid.l0_values
    tv, gv, sv = np.meshgrid(grid.t_values, grid.g_values, grid.s_values, indexing="ij")
    t = tv.ravel()
    g = gv.ravel()
    s = sv.ravel()
    n_combo = t.size

    # Emission matrices E(r) = diag(P(r|learned), P(r|unlearned)) and
    # combined step matrices M(r) = E(r) @ A with transition
    # A = [[1, t], [0, 1-t]] (columns = source state).
    zeros = np.zeros(n_combo)
    e1 = np.stack([np.stack([1.0 - s, zeros], -1),
                   np.stack([zeros, g], -1)], -2)
    e0 = np.stack([np.stack([s, zeros], -1),
                   np.stack([zeros, 1.0 - g], -1)], -2)
    m1 = np.stack([np.stack([1.0 - s, (1.0 - s) * t], -1),
                   np.stack([zeros, g * (1.0 - t)], -1)], -2)
    m0 = np.stack([np.stack([s, s * t], -1),
                   np.stack([zeros, (1.0 - g) * (1.0 - t)], -1)], -2)

    total = np.zeros((l0.size, n_combo))
    chunk = 256
    for start in range(0, len(patterns), chunk):
        pats = patterns[start:start + chunk]
        w = weights[start:start + chunk]
        n = len(pats)
        max_len = max(len(p) for p in pats)
        resp = np.zeros((n, max_len), dtype=bool)
        valid = np.zeros((n, max_len), dtype=bool)
        for i, p in enumerate(pats):
            resp[i, :len(p)] = p
            valid[i, :len(p)] = True

        prod = np.broadcast_to(np.eye(2), (n_combo, n, 2, 2)).copy()
        logscale = np.zeros((n_combo, n))
        identity = np.eye(2)
        for pos_t in range(max_len):
            pos = m1 if pos_t else e1
            neg = m0 if pos_t else e0
            mats = np.where(resp[None, :, pos_t, None, None],
                            pos[:, None], neg[:, None])
            mats = np.where(valid[None, :, pos_t, None, None], mats, identity)
            prod = mats @ prod
            z = prod.sum(axis=(-2, -1))
            z = np.where(valid[None, :, pos_t], z, 1.0)
            prod /= z[..., None, None]
            logscale += np.log(z)

        from_learned = prod[..., 0, 0] + prod[..., 1, 0]
        from_unlearned = prod[..., 0, 1] + prod[..., 1, 1]
        lw = l0[:, None, None]
        ll = np.log(from_learned[None] * lw + from_unlearned[None] * (1.0 - lw))
        total += ((ll + logscale[None]) * w).sum(axis=-1)

    return total.reshape(l0.size, grid.t_values.size,
                         grid.g_values.size, grid.s_values.size)


def fit_skill(sequences, grid: FitGrid | None = None) -> BktParams:
    """Best grid point by total log-likelihood over all sequences.

    Ties resolve to the lexicographically smallest (l0, t, g, s), which
    also makes the result deterministic and independent of input order.
    """
    grid = grid or FitGrid()
    total = grid_log_likelihoods(sequences, grid)
    flat = int(np.argmax(total))
    i, j, k, m = np.unravel_index(flat, total.shape)
    return BktParams(
        float(grid.l0_values[i]),
        float(grid.t_values[j]),
        float(grid.g_values[k]),
        float(grid.s_values[m]),
    )


def fit_all_skills(sequences_by_skill: dict, grid: FitGrid | None = None) -> dict:
    """Fit every skill that has data; skills without data are omitted."""
    grid = grid or FitGrid()
    fitted = {}
    for skill, seqs in sequences_by_skill.items():
        try:
            fitted[skill] = fit_skill(seqs, grid)
        except NoSkillDataError:
            continue
    return fitted


def mean_params(params_list) -> BktParams:
    """Coordinate-wise unweighted mean; the fallback for unseen skills."""
    params_list = list(params_list)
    if not params_list:
        return BktParams(0.5, 0.1, 0.2, 0.1)
    arr = np.array([[p.l0, p.t, p.g, p.s] for p in params_list])
    m = arr.mean(axis=0)
    return BktParams(float(m[0]), float(m[1]), float(m[2]), float(m[3]))


def save_params_table(params_by_skill: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("skill_id\tl0\tt\tg\ts\n")
        for skill in params_by_skill:
            p = params_by_skill[skill]
            fh.write(f"{skill}\t{p.l0:.6f}\t{p.t:.6f}\t{p.g:.6f}\t{p.s:.6f}\n")


def load_params_table(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("skill_id"):
            raise ValueError(f"{path}: not a skill parameter table")
        for line in fh:
            if not line.strip():
                continue
            skill, l0, t, g, s = line.rstrip("\n").split("\t")
            out[skill] = BktParams(float(l0), float(t), float(g), float(s))
    return out
