"""Dataset curation: static-intro filtering, feature clustering, splits.

The categorization recipe: z-score the four scalar features (spatial and
temporal information, bitrate, quality score), append a 3-D PCA
projection of the externally supplied embedding vectors, cluster with
k-means, send each cluster's centroid-nearest video to the test set and
split the remainder 10:1 into train and validation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .metrics import luma
from .resample import bicubic_resize
from .validation import check_matrix, check_same_shape

__all__ = [
    "VideoFeatureRecord",
    "scene_static_filter",
    "PCA",
    "KMeans",
    "pca_project",
    "kmeans",
    "categorize",
    "make_pairs",
    "procedural_images",
    "load_records_csv",
    "write_split_csv",
    "DEFAULT_TAU",
]

#: Mean-absolute luma difference below which a frame pair counts as static.
DEFAULT_TAU = 2.0 / 255.0


@dataclass(frozen=True)
class VideoFeatureRecord:
    """Per-video descriptors; quality and embedding come from external models."""

    id: str
    si: float
    ti: float
    bitrate: float
    quality: float
    embedding: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        object.__setattr__(self, "embedding", emb)
        scalars = (self.si, self.ti, self.bitrate, self.quality)
        if not all(math.isfinite(float(s)) for s in scalars) or not np.all(np.isfinite(emb)):
            raise ValueError(f"record {self.id!r} contains non-finite values")


def scene_static_filter(frame1, frame100, frame150, tau: float = DEFAULT_TAU) -> str:
    """Discard iff both later frames sit within ``tau`` mean-abs luma
    difference of the first frame; returns "keep" or "discard"."""
    y1 = luma(frame1)
    y100 = luma(frame100)
    y150 = luma(frame150)
    check_same_shape(y1, y100, "frames 1 and 100")
    check_same_shape(y1, y150, "frames 1 and 150")
    d100 = float(np.mean(np.abs(y100 - y1)))
    d150 = float(np.mean(np.abs(y150 - y1)))
    return "discard" if (d100 < tau and d150 < tau) else "keep"


class PCA(BaseEstimator):
    """Principal components with a deterministic sign convention.

    Columns are centered; components come in descending eigenvalue order
    and each is flipped so its largest-magnitude loading is positive.
    """

    def __init__(self, n_components: int = 3):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_matrix(X)
        n, d = X.shape
        k = self.n_components
        if n < 2:
            raise ValueError(f"PCA needs at least 2 rows, got {n}")
        if not 1 <= k <= min(n - 1, d):
            raise ValueError(
                f"n_components must be in [1, {min(n - 1, d)}], got {k}"
            )
        self.mean_ = X.mean(axis=0)
        xc = X - self.mean_
        cov = xc.T @ xc / (n - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1][:k]
        comps = eigvecs[:, order].T
        for row in comps:
            if row[np.argmax(np.abs(row))] < 0:
                row *= -1.0
        self.components_ = comps
        self.explained_variance_ = np.maximum(eigvals[order], 0.0)
        return self

    def transform(self, X) -> np.ndarray:
        X = check_matrix(X)
        return (X - self.mean_) @ self.components_.T

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X).transform(X)

    def inverse_transform(self, Z) -> np.ndarray:
        Z = check_matrix(Z)
        return Z @ self.components_ + self.mean_


def pca_project(X, k: int) -> np.ndarray:
    """Center and project onto the top-k principal directions."""
    return PCA(n_components=k).fit_transform(X)


class KMeans(BaseEstimator):
    """Lloyd's algorithm with k-means++ seeding.

    Iterates to an assignment fixpoint (or ``max_iter``); an emptied
    cluster is re-seeded to the point farthest from its assigned centroid.
    """

    def __init__(self, n_clusters: int = 20, seed: int = 0, max_iter: int = 300):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter

    def _plus_plus_init(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = X.shape[0]
        centers = np.empty((self.n_clusters, X.shape[1]))
        centers[0] = X[rng.integers(0, n)]
        d2 = np.sum((X - centers[0]) ** 2, axis=1)
        for i in range(1, self.n_clusters):
            total = d2.sum()
            if total <= 0:
                centers[i] = X[rng.integers(0, n)]
                continue
            centers[i] = X[rng.choice(n, p=d2 / total)]
            d2 = np.minimum(d2, np.sum((X - centers[i]) ** 2, axis=1))
        return centers

    def fit(self, X, y=None):
        X = check_matrix(X)
        n = X.shape[0]
        k = self.n_clusters
        if k < 1:
            raise ValueError(f"n_clusters must be >= 1, got {k}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if n < k:
            raise ValueError(f"need at least {k} points for {k} clusters, got {n}")
        rng = np.random.default_rng(self.seed)
        centers = self._plus_plus_init(X, rng)
        labels = np.full(n, -1, dtype=np.intp)
        trace: list[float] = []
        for it in range(self.max_iter):
            d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = d2.argmin(axis=1)
            point_d2 = d2[np.arange(n), new_labels]
            for ci in range(k):
                if not np.any(new_labels == ci):
                    far = int(point_d2.argmax())
                    centers[ci] = X[far]
                    new_labels[far] = ci
                    point_d2[far] = 0.0
            trace.append(float(point_d2.sum()))
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for ci in range(k):
                centers[ci] = X[labels == ci].mean(axis=0)
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        self.cluster_centers_ = centers
        self.labels_ = labels
        self.inertia_ = float(d2[np.arange(n), labels].sum())
        self.inertia_trace_ = trace
        self.n_iter_ = it + 1
        return self

    def predict(self, X) -> np.ndarray:
        X = check_matrix(X)
        d2 = ((X[:, None, :] - self.cluster_centers_[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)


def kmeans(X, k: int, seed: int = 0, max_iter: int = 300):
    est = KMeans(n_clusters=k, seed=seed, max_iter=max_iter).fit(X)
    return est.labels_, est.cluster_centers_


def _zscore_columns(cols: np.ndarray) -> np.ndarray:
    mean = cols.mean(axis=0)
    std = cols.std(axis=0)
    out = np.zeros_like(cols)
    nz = std > 0
    out[:, nz] = (cols[:, nz] - mean[nz]) / std[nz]
    return out


def categorize(
    records: Sequence[VideoFeatureRecord],
    k: int = 20,
    seed: int = 0,
) -> dict[str, str]:
    """Assign every record id to test, train or val.

    Per cluster the centroid-nearest record (ties broken by smallest id)
    becomes test; the rest are shuffled by the seed and split 10:1 with
    validation taking ceil(rest / 11).
    """
    records = list(records)
    if len(records) < k:
        raise ValueError(f"need at least {k} records, got {len(records)}")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("record ids must be unique")

    scalars = np.array([[r.si, r.ti, r.bitrate, r.quality] for r in records])
    embeddings = np.stack([r.embedding for r in records])
    if embeddings.ndim != 2:
        raise ValueError("embeddings must share a common length")
    features = np.hstack([_zscore_columns(scalars), pca_project(embeddings, 3)])

    labels, centers = kmeans(features, k, seed=seed)
    assignment: dict[str, str] = {}
    rest: list[str] = []
    for ci in range(k):
        members = np.flatnonzero(labels == ci)
        dists = np.linalg.norm(features[members] - centers[ci], axis=1)
        best = min(
            zip(dists, (ids[m] for m in members)), key=lambda t: (t[0], t[1])
        )[1]
        assignment[best] = "test"
        rest.extend(ids[m] for m in members if ids[m] != best)

    rest.sort()
    np.random.default_rng((seed, 1)).shuffle(rest)
    n_val = math.ceil(len(rest) / 11)
    for rid in rest[:n_val]:
        assignment[rid] = "val"
    for rid in rest[n_val:]:
        assignment[rid] = "train"
    return assignment


def make_pairs(
    hr_images: Sequence[np.ndarray],
    r: int,
    mode: str = "synthetic",
    lr_images: Sequence[np.ndarray] | None = None,
    ids: Sequence[str] | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """LR/HR pair set: synthetic bicubic downscale or validated real pairs."""
    if mode not in ("synthetic", "real"):
        raise ValueError(f"unknown mode {mode!r}")
    names = list(ids) if ids is not None else [str(i) for i in range(len(hr_images))]
    pairs = []
    if mode == "synthetic":
        for name, hr in zip(names, hr_images):
            _, h, w = hr.shape
            if h % r or w % r:
                raise ValueError(f"pair {name}: hr dims {h}x{w} not divisible by {r}")
            pairs.append((bicubic_resize(hr, h // r, w // r), hr))
        return pairs
    if lr_images is None or len(lr_images) != len(hr_images):
        raise ValueError("real mode requires one lr image per hr image")
    for name, lr, hr in zip(names, lr_images, hr_images):
        if lr.shape[1] * r != hr.shape[1] or lr.shape[2] * r != hr.shape[2]:
            raise ValueError(
                f"pair {name}: lr {lr.shape[1]}x{lr.shape[2]} * {r} "
                f"!= hr {hr.shape[1]}x{hr.shape[2]}"
            )
        pairs.append((lr, hr))
    return pairs


def procedural_images(count: int, size: int = 48, seed: int = 0) -> list[np.ndarray]:
    """Deterministic synthetic RGB images: smooth fields plus step edges.

    Rectangle edges snap to multiples of 4 so decimation at the supported
    scales keeps them crisp in the LR grid; the smooth terms stay below
    the scale-4 Nyquist limit. Needs size >= 8.
    """
    if size < 8:
        raise ValueError(f"procedural images need size >= 8, got {size}")
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    images = []
    for _ in range(count):
        img = np.empty((3, size, size))
        for c in range(3):
            gx, gy = rng.uniform(-1, 1, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            freq = rng.uniform(2.0, 5.0)
            plane = 0.5 + 0.3 * (gx * xs + gy * ys)
            plane += 0.15 * np.sin(freq * np.pi * xs + phase) * np.cos(freq * np.pi * ys)
            img[c] = plane
        for _ in range(8):
            y0 = int(rng.integers(0, size // 4 - 1)) * 4
            x0 = int(rng.integers(0, size // 4 - 1)) * 4
            h = int(rng.integers(1, (size - y0) // 4 + 1)) * 4
            w = int(rng.integers(1, (size - x0) // 4 + 1)) * 4
            img[:, y0 : y0 + h, x0 : x0 + w] += rng.uniform(-0.5, 0.5, size=(3, 1, 1))
        images.append(np.clip(img, 0.0, 1.0))
    return images


# ---- CSV interchange ------------------------------------------------------------


def load_records_csv(path) -> list[VideoFeatureRecord]:
    """Read records from CSV with header id,si,ti,bitrate,quality,e0..e{d-1}."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty records file") from None
        base = ["id", "si", "ti", "bitrate", "quality"]
        if header[: len(base)] != base:
            raise ValueError(f"{path}: header must start with {','.join(base)}")
        dim = len(header) - len(base)
        if [h for h in header[len(base) :]] != [f"e{i}" for i in range(dim)]:
            raise ValueError(f"{path}: embedding columns must be e0..e{dim - 1}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                records.append(
                    VideoFeatureRecord(
                        id=row[0],
                        si=float(row[1]),
                        ti=float(row[2]),
                        bitrate=float(row[3]),
                        quality=float(row[4]),
                        embedding=np.array([float(v) for v in row[5:]]),
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return records


def write_split_csv(assignment: dict[str, str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "split"])
        for rid in sorted(assignment):
            writer.writerow([rid, assignment[rid]])
