"""Per-problem difficulty levels from first-attempt success rates.

A problem attempted by at least four distinct students gets
floor(10 * success rate), an integer 0..10; sparser problems and
problems never seen in training default to level 5.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["DifficultyTable", "build_difficulty_table", "save_difficulty_table",
           "load_difficulty_table", "DEFAULT_LEVEL", "MIN_STUDENTS"]

DEFAULT_LEVEL = 5
MIN_STUDENTS = 4


@dataclass(frozen=True)
class DifficultyTable:
    levels: dict = field(default_factory=dict)
    default_level: int = DEFAULT_LEVEL

    def lookup(self, problem_id) -> int:
        return self.levels.get(problem_id, self.default_level)


def build_difficulty_table(train_data) -> DifficultyTable:
    """Difficulty per problem from the training students' first attempts.

    ``train_data`` is a Dataset (already reduced to first attempts, so
    each (student, problem) appears once); integer arithmetic keeps the
    floor exact.
    """
    outcomes: dict = {}
    for rec in train_data.iter_records():
        outcomes.setdefault(rec.problem_id, []).append(rec.correct)
    levels = {}
    for problem, obs in outcomes.items():
        if len(obs) >= MIN_STUDENTS:
            levels[problem] = (10 * sum(obs)) // len(obs)
    return DifficultyTable(levels=levels)


def save_difficulty_table(table: DifficultyTable, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# default\t{table.default_level}\n")
        for problem in table.levels:
            fh.write(f"{problem}\t{table.levels[problem]}\n")


def load_difficulty_table(path: str) -> DifficultyTable:
    levels = {}
    default = DEFAULT_LEVEL
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# default\t"):
                default = int(line.split("\t")[1])
                continue
            problem, level = line.split("\t")
            levels[problem] = int(level)
    return DifficultyTable(levels=levels, default_level=default)
