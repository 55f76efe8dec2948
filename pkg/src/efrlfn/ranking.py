"""Bradley-Terry fitting of pairwise preferences with bootstrap intervals.

Preference strengths satisfy P(i beats j) = pi_i / (pi_i + pi_j) and are
fitted by the minorize-maximize iteration

    pi_i  <-  W_i / sum_j n_ij / (pi_i + pi_j)

whose log-likelihood is non-decreasing at every step. Scores are
normalized to mean 1. Ties enter as half a win for each side. When some
item has zero total wins the maximum likelihood diverges, so a 0.01
pseudo-count is added to every ordered pair (noted on the result).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PairwiseStudy",
    "RankingResult",
    "filter_responses",
    "fit_bradley_terry",
    "bootstrap_ci",
    "load_responses_csv",
    "write_ranking_csv",
]

CHOICES = ("left", "right", "tie")


@dataclass
class PairwiseStudy:
    """Aggregated pairwise preference counts.

    ``wins[i][j]`` counts (possibly half-weighted) preferences of item i
    over item j; ``ties`` keeps the raw tie counts for reference.
    """

    items: list[str]
    wins: np.ndarray
    ties: np.ndarray

    def __post_init__(self):
        m = len(self.items)
        self.wins = np.asarray(self.wins, dtype=np.float64)
        self.ties = np.asarray(self.ties, dtype=np.float64)
        if self.wins.shape != (m, m) or self.ties.shape != (m, m):
            raise ValueError(f"matrices must be {m}x{m} for {m} items")
        if np.any(np.diag(self.wins) != 0):
            raise ValueError("wins diagonal must be zero")
        if not np.array_equal(self.ties, self.ties.T):
            raise ValueError("tie matrix must be symmetric")
        if np.any(self.wins < 0) or np.any(self.ties < 0):
            raise ValueError("counts must be non-negative")

    @property
    def n_comparisons(self) -> float:
        return float(self.wins.sum())

    def scaled(self, factor: float) -> "PairwiseStudy":
        return PairwiseStudy(list(self.items), self.wins * factor, self.ties * factor)


@dataclass
class RankingResult:
    items: list[str]
    scores: np.ndarray
    n_effective: float
    loglik_trace: list[float] = field(default_factory=list)
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None
    smoothed: bool = False

    def score_of(self, item: str) -> float:
        return float(self.scores[self.items.index(item)])


def filter_responses(responses) -> PairwiseStudy:
    """Aggregate (worker, left, right, choice, verification_pass) records.

    Every response from a worker who failed any verification question is
    dropped; ties contribute half a win to each side.
    """
    parsed = []
    failed_workers = set()
    for idx, rec in enumerate(responses, start=1):
        try:
            worker, left, right, choice, verified = rec
        except (TypeError, ValueError):
            raise ValueError(f"response {idx}: expected 5 fields, got {rec!r}") from None
        if choice not in CHOICES:
            raise ValueError(f"response {idx}: bad choice {choice!r}")
        if left == right:
            raise ValueError(f"response {idx}: pair compares {left!r} to itself")
        if not verified:
            failed_workers.add(worker)
        parsed.append((worker, str(left), str(right), choice))

    kept = [p for p in parsed if p[0] not in failed_workers]
    items = sorted({p[1] for p in kept} | {p[2] for p in kept})
    index = {item: i for i, item in enumerate(items)}
    m = len(items)
    wins = np.zeros((m, m))
    ties = np.zeros((m, m))
    for _, left, right, choice in kept:
        i, j = index[left], index[right]
        if choice == "left":
            wins[i, j] += 1.0
        elif choice == "right":
            wins[j, i] += 1.0
        else:
            wins[i, j] += 0.5
            wins[j, i] += 0.5
            ties[i, j] += 1.0
            ties[j, i] += 1.0
    return PairwiseStudy(items, wins, ties)


def _components(n: np.ndarray) -> list[list[int]]:
    m = n.shape[0]
    seen = [False] * m
    comps = []
    for start in range(m):
        if seen[start]:
            continue
        comp = []
        stack = [start]
        seen[start] = True
        while stack:
            node = stack.pop()
            comp.append(node)
            for nxt in np.flatnonzero(n[node] > 0):
                if not seen[nxt]:
                    seen[nxt] = True
                    stack.append(int(nxt))
        comps.append(sorted(comp))
    return comps


def _loglik(wins: np.ndarray, pi: np.ndarray) -> float:
    i_idx, j_idx = np.nonzero(wins > 0)
    w = wins[i_idx, j_idx]
    return float(np.sum(w * (np.log(pi[i_idx]) - np.log(pi[i_idx] + pi[j_idx]))))


def fit_bradley_terry(
    study: PairwiseStudy,
    max_iter: int = 2000,
    tol: float = 1e-10,
) -> RankingResult:
    """Maximum-likelihood strengths, normalized to mean 1.

    Raises on a disconnected comparison graph (listing its components)
    and if the MM log-likelihood ever decreases beyond rounding noise.
    """
    m = len(study.items)
    if m == 0:
        return RankingResult(items=[], scores=np.empty(0), n_effective=0.0)
    if m == 1:
        return RankingResult(
            items=list(study.items), scores=np.ones(1), n_effective=study.n_comparisons
        )
    wins = study.wins.copy()
    n = wins + wins.T
    comps = _components(n)
    if len(comps) > 1:
        names = [[study.items[i] for i in comp] for comp in comps]
        raise ValueError(f"comparison graph is disconnected: components {names}")

    smoothed = False
    if np.any(wins.sum(axis=1) == 0):
        wins = wins + 0.01 * (1.0 - np.eye(m))
        n = wins + wins.T
        smoothed = True

    w_total = wins.sum(axis=1)
    pi = np.ones(m)
    trace = [_loglik(wins, pi)]
    for _ in range(max_iter):
        denom = np.where(n > 0, n / (pi[:, None] + pi[None, :]), 0.0).sum(axis=1)
        new_pi = w_total / denom
        new_pi /= new_pi.mean()
        ll = _loglik(wins, new_pi)
        if ll < trace[-1] - 1e-9 * (1.0 + abs(trace[-1])):
            raise RuntimeError(
                f"MM iteration decreased the log-likelihood: {trace[-1]} -> {ll}"
            )
        trace.append(ll)
        delta = float(np.max(np.abs(new_pi - pi) / pi))
        pi = new_pi
        if delta < tol:
            break
    return RankingResult(
        items=list(study.items),
        scores=pi,
        n_effective=study.n_comparisons,
        loglik_trace=trace,
        smoothed=smoothed,
    )


def bootstrap_ci(
    study: PairwiseStudy,
    n_boot: int = 1000,
    seed: int = 0,
    max_iter: int = 2000,
    tol: float = 1e-8,
) -> RankingResult:
    """Percentile bootstrap (2.5/97.5) over per-pair binomial resamples.

    Replicates whose refit fails are skipped and counted; a warning is
    emitted when more than 5% are lost. Intervals are widened, if needed,
    to bracket the point estimate so ci_low <= score <= ci_high holds.
    """
    if n_boot < 1:
        raise ValueError(f"n_boot must be >= 1, got {n_boot}")
    result = fit_bradley_terry(study, max_iter=max_iter, tol=tol)
    m = len(study.items)
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    n_matrix = study.wins + study.wins.T

    samples = []
    skipped = 0
    for rep in range(n_boot):
        rng = np.random.default_rng((seed, rep))
        wins = np.zeros((m, m))
        for i, j in pairs:
            total = n_matrix[i, j]
            if total <= 0:
                continue
            trials = max(1, int(round(total)))
            p = float(study.wins[i, j] / total)
            k = rng.binomial(trials, p)
            wins[i, j] = k
            wins[j, i] = trials - k
        try:
            rep_result = fit_bradley_terry(
                PairwiseStudy(list(study.items), wins, np.zeros((m, m))),
                max_iter=max_iter,
                tol=tol,
            )
        except (ValueError, RuntimeError):
            skipped += 1
            continue
        samples.append(rep_result.scores)

    if not samples:
        raise RuntimeError("all bootstrap replicates failed")
    if skipped > 0.05 * n_boot:
        warnings.warn(
            f"bootstrap skipped {skipped}/{n_boot} replicates", RuntimeWarning, stacklevel=2
        )
    stacked = np.stack(samples)
    low = np.percentile(stacked, 2.5, axis=0)
    high = np.percentile(stacked, 97.5, axis=0)
    result.ci_low = np.minimum(low, result.scores)
    result.ci_high = np.maximum(high, result.scores)
    return result


# ---- CSV interchange --------------------------------------------------------------


def load_responses_csv(path):
    """Rows of worker,pair_left,pair_right,choice,verified (verified in {0,1})."""
    responses = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return responses
        if header != ["worker", "pair_left", "pair_right", "choice", "verified"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            worker, left, right, choice, verified = row
            if choice not in CHOICES:
                raise ValueError(f"{path}:{lineno}: bad choice {choice!r}")
            if verified not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: verified must be 0 or 1, got {verified!r}")
            responses.append((worker, left, right, choice, verified == "1"))
    return responses


def write_ranking_csv(result: RankingResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item", "score", "ci_low", "ci_high"])
        for i, item in enumerate(result.items):
            low = "" if result.ci_low is None else repr(float(result.ci_low[i]))
            high = "" if result.ci_high is None else repr(float(result.ci_high[i]))
            writer.writerow([item, repr(float(result.scores[i])), low, high])
