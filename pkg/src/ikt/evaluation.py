"""End-to-end cross-validated evaluation of the next-correctness model.

Per fold: skill parameters, ability clusters and the difficulty table
are fitted on training students only, feature rows are built for both
sides, the classifier is trained on the training rows and scored on the
test rows with AUC and RMSE. The ablation runs the three nested feature
sets over identical folds and artifacts.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import ability, bkt, tan
from .dataset import Dataset, FoldSplit, split_folds
from .difficulty import DifficultyTable, build_difficulty_table

__all__ = [
    "ExperimentConfig",
    "FEATURE_SETS",
    "MetricReport",
    "FoldArtifacts",
    "FoldOutput",
    "SingleClassError",
    "auc",
    "rmse",
    "fit_fold_artifacts",
    "build_feature_rows",
    "evaluate_feature_sets",
    "run_cv",
    "run_ablation",
]

FEATURE_SETS = {
    "ikt1": ("skill", "mastery"),
    "ikt2": ("skill", "mastery", "profile"),
    "ikt3": ("skill", "mastery", "profile", "difficulty"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; the defaults are the paper-faithful setup."""

    feature_set: str = "ikt3"
    folds: int = 5
    seed: int = 0
    interval_len: int = 20
    clusters: int = 7
    kmeans_restarts: int = 10
    grid_step: float = 0.05
    guess_cap: float = 0.30
    slip_cap: float = 0.30
    alpha: float = 1.0
    skip_first_interval: bool = False
    workers: int = 1

    def validate(self) -> list[str]:
        errors = []
        if self.feature_set not in FEATURE_SETS:
            errors.append(f"feature_set: must be one of {', '.join(FEATURE_SETS)}, "
                          f"got {self.feature_set!r}")
        if self.folds < 2:
            errors.append(f"folds: must be >= 2, got {self.folds}")
        if self.interval_len < 1:
            errors.append(f"interval_len: must be >= 1, got {self.interval_len}")
        if self.clusters < 1:
            errors.append(f"clusters: must be >= 1, got {self.clusters}")
        if self.kmeans_restarts < 1:
            errors.append(f"kmeans_restarts: must be >= 1, got {self.kmeans_restarts}")
        if not 0.0 < self.grid_step < 0.5:
            errors.append(f"grid_step: must be in (0, 0.5), got {self.grid_step}")
        for name in ("guess_cap", "slip_cap"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                errors.append(f"{name}: must be in (0, 1), got {v}")
        if self.alpha < 0:
            errors.append(f"alpha: must be >= 0, got {self.alpha}")
        if self.workers < 1:
            errors.append(f"workers: must be >= 1, got {self.workers}")
        return errors

    def fit_grid(self) -> bkt.FitGrid:
        return bkt.FitGrid(step=self.grid_step, guess_cap=self.guess_cap,
                           slip_cap=self.slip_cap)


class SingleClassError(Exception):
    """AUC is undefined when only one label class is present."""


def auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative,
    counting ties as one half (rank-sum form of the pairwise count)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("need both classes to compute AUC")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    boundaries = np.nonzero(np.diff(sorted_scores))[0]
    starts = np.concatenate(([0], boundaries + 1))
    ends = np.concatenate((boundaries, [scores.size - 1]))
    avg = (starts + ends) / 2.0 + 1.0
    ranks[order] = np.repeat(avg, ends - starts + 1)
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def rmse(scores, labels) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if scores.size == 0:
        raise ValueError("rmse of empty input")
    return float(np.sqrt(np.mean((scores - labels) ** 2)))


@dataclass
class FoldArtifacts:
    """Everything fitted from one fold's training students."""

    params_by_skill: dict
    fallback: bkt.BktParams
    clusters: ability.ClusterModel
    difficulty: DifficultyTable

    def params_for(self, skill_id) -> bkt.BktParams:
        return self.params_by_skill.get(skill_id, self.fallback)


@dataclass
class FeatureTable:
    """Columnar feature rows for one fold side; one row per interaction."""

    skill: np.ndarray
    mastery: np.ndarray
    profile: np.ndarray
    difficulty: np.ndarray
    label: np.ndarray
    warmup: np.ndarray
    student: list
    position: np.ndarray

    def __len__(self) -> int:
        return self.label.size

    def columns(self, features) -> dict:
        return {f: getattr(self, f) for f in features}


def _kmeans_seed(seed: int, fold_id: int) -> int:
    return seed * 1_000_003 + fold_id + 1


def fit_fold_artifacts(data: Dataset, fold: FoldSplit,
                       config: ExperimentConfig) -> FoldArtifacts:
    """Fit skill parameters, clusters and difficulty on training students.

    Test-fold records are never read. A skill absent from the training
    fold maps to the mean of all fitted parameter vectors.
    """
    train_students = [s for s in data.by_student if s in fold.train_students]
    grid = config.fit_grid()

    sequences_by_skill: dict = {}
    for s in train_students:
        per_skill: dict = {}
        for rec in data.by_student[s]:
            per_skill.setdefault(rec.skill_id, []).append(rec.correct)
        for skill, seq in per_skill.items():
            sequences_by_skill.setdefault(skill, []).append(seq)
    params = bkt.fit_all_skills(sequences_by_skill, grid)
    fallback = bkt.mean_params(params.values())

    vectors = []
    for s in train_students:
        attempts = [(data.skill_index[r.skill_id], r.correct) for r in data.by_student[s]]
        vectors.extend(ability.interval_vectors(attempts, data.n_skills,
                                                config.interval_len))
    k_eff = min(config.clusters, len(vectors))
    if k_eff >= 1:
        clusters = ability.train_clusters(vectors, k=k_eff,
                                          seed=_kmeans_seed(config.seed, fold.fold_id),
                                          restarts=config.kmeans_restarts)
    else:
        # no training student completed an interval; every attempt keeps
        # the initial profile
        clusters = ability.ClusterModel(centroids=np.zeros((0, data.n_skills)))

    table = build_difficulty_table(data.restricted_to(fold.train_students))
    return FoldArtifacts(params_by_skill=params, fallback=fallback,
                         clusters=clusters, difficulty=table)


def _rows_for_students(data: Dataset, students, artifacts: FoldArtifacts,
                       config: ExperimentConfig) -> FeatureTable:
    skill_col, mastery_col, profile_col, difficulty_col = [], [], [], []
    label_col, warmup_col, student_col, position_col = [], [], [], []
    for s in data.by_student:
        if s not in students:
            continue
        recs = data.by_student[s]
        attempts = [(data.skill_index[r.skill_id], r.correct) for r in recs]
        profiles = ability.profile_labels(attempts, artifacts.clusters,
                                          data.n_skills, config.interval_len)
        trackers: dict = {}
        for i, rec in enumerate(recs):
            tracker = trackers.get(rec.skill_id)
            if tracker is None:
                tracker = bkt.MasteryTracker(artifacts.params_for(rec.skill_id))
                trackers[rec.skill_id] = tracker
            skill_col.append(data.skill_index[rec.skill_id])
            mastery_col.append(tracker.prior)
            profile_col.append(profiles[i])
            difficulty_col.append(artifacts.difficulty.lookup(rec.problem_id))
            label_col.append(rec.correct)
            warmup_col.append(i < config.interval_len)
            student_col.append(s)
            position_col.append(i)
            tracker.update(rec.correct)
    return FeatureTable(
        skill=np.array(skill_col, dtype=int),
        mastery=np.array(mastery_col, dtype=float),
        profile=np.array(profile_col, dtype=int),
        difficulty=np.array(difficulty_col, dtype=int),
        label=np.array(label_col, dtype=int),
        warmup=np.array(warmup_col, dtype=bool),
        student=student_col,
        position=np.array(position_col, dtype=int),
    )


def build_feature_rows(data: Dataset, fold: FoldSplit, artifacts: FoldArtifacts,
                       config: ExperimentConfig) -> tuple[FeatureTable, FeatureTable]:
    """One evidence row per interaction, for both sides of the fold.

    Mastery is the tracing prior available before the attempt; the
    profile is the student's current-interval label; difficulty comes
    from the training-fold table (5 when unseen there).
    """
    train = _rows_for_students(data, fold.train_students, artifacts, config)
    test = _rows_for_students(data, fold.test_students, artifacts, config)
    return train, test


@dataclass
class FoldOutput:
    fold_id: int
    artifacts: FoldArtifacts
    models: dict
    scores: dict
    labels: np.ndarray
    test_table: FeatureTable


def _fold_digest(folds) -> str:
    h = hashlib.sha256()
    for f in folds:
        h.update(f"fold{f.fold_id}:".encode())
        h.update(",".join(sorted(f.test_students)).encode())
        h.update(b";")
    return h.hexdigest()


@dataclass
class MetricReport:
    """Per-fold and aggregate ranking/calibration metrics.

    Mean metrics are the arithmetic mean over folds; pooled metrics are
    computed once over all folds' predictions together.
    """

    feature_set: str
    seed: int
    fold_n: list
    fold_auc: list
    fold_rmse: list
    pooled_auc: float
    pooled_rmse: float
    fold_digest: str

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.fold_auc))

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.fold_rmse))

    @property
    def n_total(self) -> int:
        return int(sum(self.fold_n))

    def render_text(self) -> str:
        lines = ["next-correctness evaluation",
                 f"feature set : {self.feature_set}",
                 f"folds       : {len(self.fold_n)}",
                 f"seed        : {self.seed}",
                 "",
                 f"{'fold':<8}{'n':>10}{'auc':>12}{'rmse':>12}"]
        for i, (n, a, r) in enumerate(zip(self.fold_n, self.fold_auc, self.fold_rmse)):
            lines.append(f"{i:<8}{n:>10}{a:>12.6f}{r:>12.6f}")
        lines.append(f"{'mean':<8}{'':>10}{self.mean_auc:>12.6f}{self.mean_rmse:>12.6f}")
        lines.append(f"{'pooled':<8}{self.n_total:>10}{self.pooled_auc:>12.6f}"
                     f"{self.pooled_rmse:>12.6f}")
        return "\n".join(lines) + "\n"

    def render_kv(self) -> str:
        lines = [f"feature_set = {self.feature_set}",
                 f"folds = {len(self.fold_n)}",
                 f"seed = {self.seed}",
                 f"fold_digest = {self.fold_digest}"]
        for i, (n, a, r) in enumerate(zip(self.fold_n, self.fold_auc, self.fold_rmse)):
            lines.append(f"fold{i}.n = {n}")
            lines.append(f"fold{i}.auc = {a!r}")
            lines.append(f"fold{i}.rmse = {r!r}")
        lines.append(f"mean.auc = {self.mean_auc!r}")
        lines.append(f"mean.rmse = {self.mean_rmse!r}")
        lines.append(f"pooled.n = {self.n_total}")
        lines.append(f"pooled.auc = {self.pooled_auc!r}")
        lines.append(f"pooled.rmse = {self.pooled_rmse!r}")
        return "\n".join(lines) + "\n"


def _run_fold(data: Dataset, fold: FoldSplit, config: ExperimentConfig,
              feature_sets) -> FoldOutput:
    artifacts = fit_fold_artifacts(data, fold, config)
    train, test = build_feature_rows(data, fold, artifacts, config)
    keep = ~test.warmup if config.skip_first_interval else np.ones(len(test), dtype=bool)
    models = {}
    scores = {}
    for fs in feature_sets:
        feats = FEATURE_SETS[fs]
        model = tan.fit_tan(train.columns(feats), train.label, alpha=config.alpha)
        models[fs] = model
        scores[fs] = tan.predict_many(model, {f: getattr(test, f)[keep] for f in feats})
    return FoldOutput(fold_id=fold.fold_id, artifacts=artifacts, models=models,
                      scores=scores, labels=test.label[keep], test_table=test)


def _fold_job(args):
    return _run_fold(*args)


def evaluate_feature_sets(data: Dataset, config: ExperimentConfig,
                          feature_sets) -> tuple[dict, list]:
    """Shared driver: one artifact fit per fold, one model per feature set.

    Returns reports keyed by feature set plus the per-fold outputs
    (fitted artifacts, models, scores) for artifact serialization.
    """
    errors = config.validate()
    if errors:
        raise ValueError("; ".join(errors))
    folds = split_folds(data, k=config.folds, seed=config.seed)
    digest = _fold_digest(folds)

    if config.workers > 1:
        jobs = [(data, fold, config, tuple(feature_sets)) for fold in folds]
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(_fold_job, jobs))
    else:
        outputs = [_run_fold(data, fold, config, feature_sets) for fold in folds]
    outputs.sort(key=lambda o: o.fold_id)

    reports = {}
    for fs in feature_sets:
        fold_auc = [auc(o.scores[fs], o.labels) for o in outputs]
        fold_rmse = [rmse(o.scores[fs], o.labels) for o in outputs]
        all_scores = np.concatenate([o.scores[fs] for o in outputs])
        all_labels = np.concatenate([o.labels for o in outputs])
        reports[fs] = MetricReport(
            feature_set=fs,
            seed=config.seed,
            fold_n=[int(o.labels.size) for o in outputs],
            fold_auc=fold_auc,
            fold_rmse=fold_rmse,
            pooled_auc=auc(all_scores, all_labels),
            pooled_rmse=rmse(all_scores, all_labels),
            fold_digest=digest,
        )
    return reports, outputs


def run_cv(data: Dataset, config: ExperimentConfig) -> MetricReport:
    """Cross-validated evaluation of one feature set."""
    reports, _ = evaluate_feature_sets(data, config, [config.feature_set])
    return reports[config.feature_set]


def run_ablation(data: Dataset, config: ExperimentConfig) -> dict:
    """The three nested feature sets over identical folds and seeds."""
    reports, _ = evaluate_feature_sets(data, config, list(FEATURE_SETS))
    return reports


def render_ablation_text(reports: dict) -> str:
    lines = ["feature ablation (identical folds across variants)",
             "",
             f"{'variant':<10}{'mean auc':>12}{'mean rmse':>12}{'pooled auc':>12}{'pooled rmse':>13}"]
    for fs in FEATURE_SETS:
        if fs in reports:
            r = reports[fs]
            lines.append(f"{fs:<10}{r.mean_auc:>12.6f}{r.mean_rmse:>12.6f}"
                         f"{r.pooled_auc:>12.6f}{r.pooled_rmse:>13.6f}")
    return "\n".join(lines) + "\n"
