"""Graph-construction scaling and inference-latency measurements."""

from __future__ import annotations

import csv
import gc
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .graph import GraphSpec, GraphType, build_frame_graph
from .model import DdgnnModel, forward
from .pointcloud import PointFrame

DEFAULT_GRID = (64, 128, 256, 512, 1024, 2048, 4096)
# timings below this many clock ticks are treated as unresolved
MIN_TICKS = 100


@dataclass
class ScalingPoint:
    n_points: int
    median_ns: float
    mean_ns: float
    std_ns: float


@dataclass
class ScalingReport:
    graph_type: str
    params: dict
    grid: list[ScalingPoint]
    slope: float
    slope_ci: tuple[float, float]
    intercept: float
    reps: int
    dropped: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def random_frame(n: int, rng: np.random.Generator, extent: float = 5.0) -> PointFrame:
    return PointFrame.from_array(rng.uniform(0.0, extent, size=(n, 3)))


def fit_loglog(n: Sequence[float], t: Sequence[float]) -> tuple[float, float, tuple[float, float]]:
    """Least-squares slope of log t against log n, with intercept and a 95% CI on the slope."""
    x, y = np.log(np.asarray(n, dtype=float)), np.log(np.asarray(t, dtype=float))
    fit = stats.linregress(x, y)
    if len(x) > 2:
        half = stats.t.ppf(0.975, len(x) - 2) * fit.stderr
    else:
        half = float("inf")
    return float(fit.slope), float(fit.intercept), (float(fit.slope - half), float(fit.slope + half))


def _autorange(build, target_ns: float) -> int:
    """Smallest power-of-two loop count whose total time reaches ``target_ns``."""
    number = 1
    while True:
        start = time.perf_counter_ns()
        for _ in range(number):
            build()
        if time.perf_counter_ns() - start >= target_ns or number >= 1 << 16:
            return number
        number *= 2


def time_construction(spec: GraphSpec, n_grid: Sequence[int] = DEFAULT_GRID, reps: int = 20,
                      seed: int = 0, target_ns: float = 2e6) -> ScalingReport:
    """Time one constructor over a grid of frame sizes and fit the scaling exponent.

    Sizes are visited round-robin within each repetition so slow spells on the
    host hit every size alike. A repetition times a loop of builds long enough
    to reach ``target_ns`` and records the per-build time; the per-size median
    over repetitions feeds the fit. Sizes whose median falls under the clock's
    resolution are dropped and listed in the report.
    """
    grid = [int(n) for n in n_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    if grid[0] < 2:
        raise ValueError("grid sizes must be >= 2 points")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    resolution_ns = time.get_clock_info("perf_counter").resolution * 1e9
    rng = np.random.default_rng(seed)
    frames = {n: random_frame(n, rng) for n in grid}
    numbers = {n: _autorange(lambda f=frames[n]: build_frame_graph(f, spec), target_ns) for n in grid}
    samples: dict[int, list[float]] = {n: [] for n in grid}
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(reps):
            for n in grid:
                f, number = frames[n], numbers[n]
                start = time.perf_counter_ns()
                for _ in range(number):
                    build_frame_graph(f, spec)
                samples[n].append((time.perf_counter_ns() - start) / number)
    finally:
        if gc_was_enabled:
            gc.enable()
    points, dropped = [], []
    for n in grid:
        med = float(np.median(samples[n]))
        if med * numbers[n] < MIN_TICKS * resolution_ns:
            dropped.append(n)
            continue
        points.append(ScalingPoint(n, med, float(np.mean(samples[n])), float(np.std(samples[n]))))
    if len(points) < 2:
        raise RuntimeError("fewer than two grid sizes were measurable")
    slope, intercept, ci = fit_loglog([p.n_points for p in points], [p.median_ns for p in points])
    params = {"k": spec.k} if spec.kind is GraphType.KNN else {"r": spec.r} if spec.kind is GraphType.RADIUS else {}
    return ScalingReport(spec.kind.value, params, points, slope, ci, intercept, reps, dropped)


def count_edges(spec: GraphSpec, n: int, seed: int = 0) -> int:
    frame = random_frame(n, np.random.default_rng(seed))
    return build_frame_graph(frame, spec).num_edges


def expected_edges(kind: GraphType, n: int) -> int | None:
    """Closed-form edge count, or None where it depends on the geometry."""
    kind = GraphType(kind)
    return {
        GraphType.DSTAR: n,
        GraphType.USTAR: 2 * n,
        GraphType.FC: n * (n - 1),
        GraphType.EMPTY: 0,
    }.get(kind)


@dataclass
class LatencyReport:
    samples_ms: list[float]
    mean_ms: float
    p95_ms: float
    warmup: int


def time_inference(model: DdgnnModel, graph_seqs: Sequence, reps: int = 1, warmup: int = 3) -> LatencyReport:
    """Inference-mode, batch-of-one forward latency per sequence (warm-up excluded)."""
    if not graph_seqs:
        raise ValueError("need at least one sequence")
    for gs in list(graph_seqs)[:warmup]:
        forward(model, gs, training=False)
    samples = []
    for _ in range(reps):
        for gs in graph_seqs:
            start = time.perf_counter()
            forward(model, gs, training=False)
            samples.append(1000.0 * (time.perf_counter() - start))
    return LatencyReport(samples, float(np.mean(samples)), float(np.percentile(samples, 95)), warmup)


def write_scaling(reports: Sequence[ScalingReport], json_path=None, csv_path=None, tsv_path=None,
                  config: dict | None = None) -> None:
    if json_path:
        with open(json_path, "w") as fh:
            json.dump({"config": config or {}, "reports": [r.to_dict() for r in reports]}, fh, indent=2)
    rows = [(r.graph_type, p.n_points, p.median_ns, p.mean_ns, p.std_ns, r.slope)
            for r in reports for p in r.grid]
    header = ("graph_type", "n_points", "median_ns", "mean_ns", "std_ns", "slope")
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            if config:
                fh.write(f"# config: {json.dumps(config)}\n")
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    if tsv_path:
        with open(tsv_path, "w") as fh:
            fh.write("# " + "\t".join(header) + "\n")
            for row in rows:
                fh.write("\t".join(str(v) for v in row) + "\n")
