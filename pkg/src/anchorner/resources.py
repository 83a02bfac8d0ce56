"""Accessors for bundled schedules, word lists and published reference rows."""
from __future__ import annotations

import json
from importlib import resources as importlib_resources

from .corpus import TaskSchedule, build_schedule

DATASETS = ("conll2003", "ontonotes5")


def _load_json(name: str):
    ref = importlib_resources.files("anchorner").joinpath("resources", name)
    return json.loads(ref.read_text(encoding="utf-8"))


def bundled_schedules(dataset: str) -> dict[str, TaskSchedule]:
    if dataset not in DATASETS:
        raise ValueError(f"no bundled schedules for {dataset!r}")
    raw = _load_json(f"schedules_{dataset}.json")
    return {pid: build_schedule(spec, pid) for pid, spec in raw.items()}


def bundled_anchor_words(dataset: str) -> dict[str, list[str]]:
    if dataset not in DATASETS:
        raise ValueError(f"no bundled word lists for {dataset!r}")
    return _load_json(f"anchor_words_{dataset}.json")


def reference_scores(dataset: str = "conll2003") -> dict:
    """Published step scores this implementation's reports compare against."""
    return _load_json(f"reference_scores_{dataset}.json")
