import copy
from datetime import datetime
from typing import Any

import numpy as np

TIMESTAMP_FIELD = "timestamp"


def _current_timestamp():
    return datetime.now().strftime("%Y-%m-%d %H:%M:%S")


def strip_timestamp(report: Any) -> Any:
    """Returns a copy of a report dict without its timestamp fields, at any depth."""
    if hasattr(report, "model_dump"):
        report = report.model_dump()
    report = copy.deepcopy(report)

    def _strip(item):
        if isinstance(item, dict):
            item.pop(TIMESTAMP_FIELD, None)
            for value in item.values():
                _strip(value)
        elif isinstance(item, list):
            for value in item:
                _strip(value)

    _strip(report)
    return report


def derive_seed(seed: int, *keys: int) -> np.random.SeedSequence:
    # Spawn keys make every (seed, keys...) stream independent and reproducible.
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
