"""Runtime measurement and quality/speed reporting.

``measure_fps`` times a model runner over a seeded frame sequence: a
fixed number of warmup iterations is excluded, then each run times the
full sequence on a single thread and the mean per-run wall clock yields
the throughput. Reported absolute numbers are hardware-specific; only
relative orderings are meaningful across machines.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "BenchResult",
    "BenchError",
    "measure_fps",
    "pareto_front",
    "report",
    "parse_report",
]


class BenchError(RuntimeError):
    pass


@dataclass
class BenchResult:
    model_id: str
    frames: int
    runs: int
    per_run_ms: list[float]
    fps_mean: float
    fps_std: float
    input_dims: tuple[int, int, int]
    scale: int | None = None


def measure_fps(
    model_runner: Callable[[np.ndarray], object],
    frames: int = 100,
    runs: int = 3,
    warmup: int = 10,
    input_dims: tuple[int, int, int] = (3, 180, 320),
    seed: int = 0,
    model_id: str = "model",
    scale: int | None = None,
) -> BenchResult:
    """Wall-clock throughput over ``runs`` sequential passes of the same
    seeded frame sequence. ``fps_mean`` is frames over the mean per-run
    seconds; ``fps_std`` is the sample std of per-run FPS (0 for one run).
    """
    if frames < 1 or runs < 1:
        raise ValueError(f"frames and runs must be >= 1, got {frames}/{runs}")
    if warmup < 0:
        raise ValueError(f"warmup must be >= 0, got {warmup}")
    rng = np.random.default_rng(seed)
    sequence = [
        rng.uniform(0.0, 1.0, size=input_dims).astype(np.float32) for _ in range(frames)
    ]

    for i in range(warmup):
        frame = sequence[i % frames]
        try:
            model_runner(frame)
        except Exception as exc:
            raise BenchError(f"runner failed during warmup at frame {i % frames}") from exc

    per_run_ms: list[float] = []
    for run in range(runs):
        t0 = time.perf_counter()
        for i, frame in enumerate(sequence):
            try:
                model_runner(frame)
            except Exception as exc:
                raise BenchError(f"runner failed at frame {i} of run {run}") from exc
        per_run_ms.append((time.perf_counter() - t0) * 1000.0)

    seconds = np.array(per_run_ms) / 1000.0
    fps_per_run = frames / seconds
    fps_std = float(np.std(fps_per_run, ddof=1)) if runs > 1 else 0.0
    return BenchResult(
        model_id=model_id,
        frames=frames,
        runs=runs,
        per_run_ms=per_run_ms,
        fps_mean=float(frames / seconds.mean()),
        fps_std=fps_std,
        input_dims=tuple(input_dims),
        scale=scale,
    )


def pareto_front(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Maximal points under (quality up, fps up) dominance, sorted by fps.

    A point is kept iff no other point is >= in both coordinates and
    strictly greater in at least one.
    """
    pts = [(float(q), float(f)) for q, f in points]
    if not pts:
        raise ValueError("pareto_front requires at least one point")
    front = []
    for p in pts:
        dominated = any(
            q[0] >= p[0] and q[1] >= p[1] and (q[0] > p[0] or q[1] > p[1]) for q in pts
        )
        if not dominated:
            front.append(p)
    return sorted(front, key=lambda t: (t[1], t[0]))


def _ci95(scores: Sequence[float]) -> float:
    n = len(scores)
    if n < 2:
        return 0.0
    return 1.96 * float(np.std(scores, ddof=1)) / math.sqrt(n)


def report(
    bench: Sequence[BenchResult],
    metrics: Mapping[str, Mapping[str, Sequence[float]]] | None,
    csv_path,
    json_path=None,
) -> list[dict]:
    """Emit one row per model: metric mean +- 95% CI, then FPS stats.

    Columns are stable: model_id, each metric (sorted) as mean/ci95
    pairs, then fps_mean, fps_std, frames, runs. The optional JSON file
    mirrors the CSV exactly.
    """
    ids = [b.model_id for b in bench]
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise ValueError(f"duplicate model ids in bench results: {sorted(dup)}")
    metrics = metrics or {}
    unknown = set(metrics) - set(ids)
    if unknown:
        raise ValueError(f"metric tables reference unknown model ids: {sorted(unknown)}")
    metric_names = sorted({name for table in metrics.values() for name in table})

    columns = ["model_id"]
    for name in metric_names:
        columns += [f"{name}_mean", f"{name}_ci95"]
    columns += ["fps_mean", "fps_std", "frames", "runs"]

    rows = []
    for b in bench:
        row: dict = {"model_id": b.model_id}
        table = metrics.get(b.model_id, {})
        for name in metric_names:
            scores = list(table.get(name, []))
            row[f"{name}_mean"] = float(np.mean(scores)) if scores else ""
            row[f"{name}_ci95"] = _ci95(scores) if scores else ""
        row["fps_mean"] = b.fps_mean
        row["fps_std"] = b.fps_std
        row["frames"] = b.frames
        row["runs"] = b.runs
        rows.append(row)

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump({"columns": columns, "rows": rows}, fh, indent=2)
            fh.write("\n")
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_report(csv_path) -> list[dict]:
    """Inverse of the CSV side of :func:`report`."""
    rows = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        for raw in reader:
            row: dict = {}
            for col, value in zip(columns, raw):
                if col == "model_id":
                    row[col] = value
                elif value == "":
                    row[col] = ""
                elif col in ("frames", "runs"):
                    row[col] = int(value)
                else:
                    row[col] = float(value)
            rows.append(row)
    return rows
