"""Interpretable knowledge tracing toolkit.

Extracts skill mastery, ability-profile and problem-difficulty features
from student interaction logs and predicts next-problem correctness with
a tree-augmented naive Bayes classifier.
"""

__version__ = "0.1.0"

from . import ability, bkt, dataset, difficulty, evaluation, tan  # noqa: F401
