import os
import json
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from functools import partial
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
from scipy import stats

from constants import STAGE_IDS, WORKERS_ENV

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def substream(master_seed: int, stage: str, index: int = 0) -> np.random.Generator:
    """Counter-based RNG stream keyed by (stage id, index), independent of scheduling."""
    if stage not in STAGE_IDS:
        raise ValueError(f"Unknown RNG stage: {stage}")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(STAGE_IDS[stage], int(index)))
    return np.random.Generator(np.random.Philox(seq))


def worker_count(workers: Optional[int] = None) -> int:
    """Explicit value, else the environment variable, else 1."""
    if workers is not None:
        return max(1, int(workers))
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("Ignoring invalid %s=%r", WORKERS_ENV, raw)
        return 1


class _WarningBuffer(logging.Handler):
    def __init__(self) -> None:
        super().__init__(level=logging.WARNING)
        self.records: List[Tuple[str, int, str]] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.records.append((record.name, record.levelno, record.getMessage()))


def _run_capturing(func: Callable[[T], R], item: T) -> Tuple[R, List[Tuple[str, int, str]]]:
    """Runs func in a worker process and returns its warnings with the result."""
    root = logging.getLogger()
    saved = root.handlers[:]
    buffer = _WarningBuffer()
    root.handlers = [buffer]
    try:
        return func(item), buffer.records
    finally:
        root.handlers = saved


def parallel_map(func: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """
    Maps func over items, results in input order whatever the worker count.

    Warnings logged inside worker processes are re-logged by the parent in
    input order, so handlers attached there see the same records as a
    single-process run.
    """
    items = list(items)
    n_workers = min(worker_count(workers), max(1, len(items)))
    if n_workers <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        outcomes = list(pool.map(partial(_run_capturing, func), items))
    for _, records in outcomes:
        for name, level, message in records:
            logging.getLogger(name).log(level, "%s", message)
    return [result for result, _ in outcomes]


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_frame(df: pd.DataFrame, path: Path) -> Path:
    """CSV with a one-line header and round-trip float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")
    return path


def write_json(obj: Dict[str, Any], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


@dataclass
class SlopeFit:
    """Least-squares line of log y against log x (or y against x)."""

    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    r_squared: float
    n_points: int

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def as_dict(self) -> Dict[str, float]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "r_squared": self.r_squared,
            "n_points": self.n_points,
        }


def fit_line(x: Sequence[float], y: Sequence[float], confidence: float = 0.95) -> SlopeFit:
    """Ordinary least squares with a Student-t confidence interval on the slope."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError(f"a slope fit needs at least 3 points, got {x.size}")
    res = stats.linregress(x, y)
    q = stats.t.ppf(0.5 + confidence / 2, x.size - 2)
    half = q * res.stderr
    return SlopeFit(float(res.slope), float(res.intercept), float(res.slope - half), float(res.slope + half),
                    float(res.rvalue ** 2), int(x.size))


def loglog_slope(x: Sequence[float], y: Sequence[float], confidence: float = 0.95) -> SlopeFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive values")
    return fit_line(np.log(x), np.log(y), confidence)


def bootstrap_se(values: np.ndarray, statistic: Callable[[np.ndarray], float], rng: np.random.Generator,
                 n_boot: int = 200) -> float:
    """Bootstrap standard error of statistic over the first axis of values."""
    values = np.asarray(values)
    n = values.shape[0]
    if n < 2:
        return float("nan")
    draws = np.empty(n_boot)
    for b in range(n_boot):
        draws[b] = statistic(values[rng.integers(0, n, size=n)])
    return float(np.std(draws, ddof=1))


def mean_and_se(values: Sequence[float]) -> tuple:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float(values.mean()) if values.size else float("nan"), float("nan")
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))
