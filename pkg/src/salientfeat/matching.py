"""Nearest-neighbour descriptor matching, reprojection accuracy and a
matching-time benchmark.

Matching works in the dtype of the descriptors it is given: float64 tensors
during tests, the float32 that descriptor files store when benchmarking.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .extraction import KeypointSet
from .geometry import Homography, project_points


@dataclass
class MatchSet:
    indices_a: np.ndarray
    indices_b: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.indices_a)

    @staticmethod
    def empty() -> "MatchSet":
        return MatchSet(np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp),
                        np.zeros(0))


def match_descriptors(da: np.ndarray, db: np.ndarray,
                      policy: str = "mutual_nn") -> MatchSet:
    """Pair rows of da with their closest rows of db by Euclidean distance.

    ``nn`` pairs every a-row with its nearest b-row; ``mutual_nn`` keeps only
    pairs that are each other's nearest. Ties resolve to the lower index.
    """
    if policy not in ("nn", "mutual_nn"):
        raise ValueError(f"unknown matching policy {policy!r}")
    if len(da) == 0 or len(db) == 0:
        return MatchSet.empty()
    if da.shape[1] != db.shape[1]:
        raise ValueError(f"descriptor dimensions disagree: {da.shape[1]} vs "
                         f"{db.shape[1]}")
    na2 = np.square(da).sum(axis=1)
    nb2 = np.square(db).sum(axis=1)
    # work in place on one [na, nb] buffer; per-row/column offsets do not
    # change the argmin selections
    work = da @ db.T
    work *= -2.0
    work += nb2[None, :]
    nn12 = work.argmin(axis=1)
    ia = np.arange(len(da), dtype=np.intp)
    if policy == "mutual_nn":
        work -= nb2[None, :]
        work += na2[:, None]
        nn21 = _argmin_rows(work)
        keep = nn21[nn12] == ia
        ia = ia[keep]
    ib = nn12[ia].astype(np.intp)
    sq = na2[ia] + nb2[ib] - 2.0 * np.einsum("ij,ij->i", da[ia], db[ib])
    return MatchSet(ia, ib, np.sqrt(np.maximum(sq, 0.0)))


def _argmin_rows(work: np.ndarray) -> np.ndarray:
    """argmin over axis 0 via a running row sweep; identical first-index tie
    behaviour, far better cache locality than numpy's column-wise reduction."""
    best = work[0].copy()
    arg = np.zeros(work.shape[1], dtype=np.intp)
    for i in range(1, work.shape[0]):
        row = work[i]
        mask = row < best
        np.copyto(best, row, where=mask)
        arg[mask] = i
    return arg


def match(a: KeypointSet, b: KeypointSet, policy: str = "mutual_nn") -> MatchSet:
    return match_descriptors(a.descriptors, b.descriptors, policy)


# ----------------------------------------------------------------------
# mean matching accuracy
# ----------------------------------------------------------------------
@dataclass
class MMAReport:
    thresholds: tuple[int, ...]
    fractions: list[float]
    n_matches: int
    n_correct: list[int]
    zero_matches: bool = False
    seconds: float | None = None
    notes: dict = field(default_factory=dict)

    def fraction_at(self, threshold: int) -> float:
        return self.fractions[self.thresholds.index(threshold)]

    def to_text(self) -> str:
        lines = [f"# matches\t{self.n_matches}"]
        if self.zero_matches:
            lines.append("# zero_matches\t1")
        if self.seconds is not None:
            lines.append(f"# seconds\t{self.seconds:.6f}")
        for key, value in sorted(self.notes.items()):
            lines.append(f"# {key}\t{value}")
        for t, frac in zip(self.thresholds, self.fractions):
            lines.append(f"{t}\t{frac:.6f}")
        return "\n".join(lines) + "\n"


def mma(matches: MatchSet, a: KeypointSet, b: KeypointSet, h: Homography,
        thresholds=tuple(range(1, 11))) -> MMAReport:
    """Fraction of matches whose a-point, pushed through the ground-truth
    homography, lands within each pixel threshold of its b-point."""
    thresholds = tuple(int(t) for t in thresholds)
    if len(matches) == 0:
        return MMAReport(thresholds, [0.0] * len(thresholds), 0,
                         [0] * len(thresholds), zero_matches=True)
    pa = a.coords()[matches.indices_a]
    pb = b.coords()[matches.indices_b]
    us, vs, finite = project_points(h, pa[:, 0], pa[:, 1])
    err = np.hypot(us - pb[:, 0], vs - pb[:, 1])
    err[~finite] = np.inf
    n_correct = [int((err <= t).sum()) for t in thresholds]
    fractions = [c / len(matches) for c in n_correct]
    assert all(f2 >= f1 for f1, f2 in zip(fractions, fractions[1:])), \
        "accuracy must be monotone in the threshold"
    return MMAReport(thresholds, fractions, len(matches), n_correct)


def average_reports(reports: list[MMAReport]) -> MMAReport:
    """Mean accuracy curve over several image pairs."""
    if not reports:
        raise ValueError("no reports to average")
    thresholds = reports[0].thresholds
    if any(r.thresholds != thresholds for r in reports):
        raise ValueError("reports use different threshold grids")
    fractions = [float(np.mean([r.fractions[i] for r in reports]))
                 for i in range(len(thresholds))]
    return MMAReport(thresholds, fractions,
                     sum(r.n_matches for r in reports),
                     [sum(r.n_correct[i] for r in reports)
                      for i in range(len(thresholds))],
                     zero_matches=any(r.zero_matches for r in reports),
                     notes={"pairs": len(reports)})


def write_report(path, report: MMAReport) -> None:
    with open(path, "w") as f:
        f.write(report.to_text())


def plot_report_pgm(path, report: MMAReport, size: int = 200) -> None:
    """Tiny dependency-free accuracy-vs-threshold curve rendering."""
    from .imageio import write_image

    canvas = np.ones((size, size))
    canvas[-1, :] = 0.0   # x axis
    canvas[:, 0] = 0.0    # y axis
    ts = np.array(report.thresholds, dtype=np.float64)
    xs = (ts - ts.min()) / max(ts.max() - ts.min(), 1) * (size - 1)
    ys = (1.0 - np.array(report.fractions)) * (size - 1)
    for (x0, y0), (x1, y1) in zip(zip(xs, ys), zip(xs[1:], ys[1:])):
        steps = int(max(abs(x1 - x0), abs(y1 - y0))) * 2 + 1
        for t in np.linspace(0.0, 1.0, steps):
            px = int(round(x0 + (x1 - x0) * t))
            py = int(round(y0 + (y1 - y0) * t))
            canvas[min(max(py, 0), size - 1), min(max(px, 0), size - 1)] = 0.0
    write_image(path, canvas[None])


# ----------------------------------------------------------------------
# benchmark
# ----------------------------------------------------------------------
@dataclass
class BenchResult:
    median_seconds: float
    min_seconds: float
    times: list[float]
    count_a: int
    count_b: int
    policy: str
    single_thread: bool

    def to_text(self) -> str:
        return (f"counts\t{self.count_a}\t{self.count_b}\n"
                f"policy\t{self.policy}\n"
                f"single_thread\t{int(self.single_thread)}\n"
                f"median_seconds\t{self.median_seconds:.6f}\n"
                f"min_seconds\t{self.min_seconds:.6f}\n")


def bench_match(a: KeypointSet, b: KeypointSet, repeats: int,
                policy: str = "mutual_nn", single_thread: bool = True) -> BenchResult:
    """Time ``match`` over ``repeats`` runs after one untimed warmup.

    Matching runs single-threaded by default (BLAS pools clamped to one
    thread); pass single_thread=False to benchmark with the ambient pool.
    """
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    if len(a) == 0 or len(b) == 0:
        return BenchResult(0.0, 0.0, [0.0] * repeats, len(a), len(b), policy,
                           single_thread)

    def run_all():
        match(a, b, policy)  # warmup
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            match(a, b, policy)
            times.append(time.perf_counter() - start)
        return times

    if single_thread:
        with threadpool_limits(limits=1):
            times = run_all()
    else:
        times = run_all()
    return BenchResult(float(np.median(times)), float(min(times)), times,
                       len(a), len(b), policy, single_thread)
