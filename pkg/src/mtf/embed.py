"""Embedding-space metrics: pair cosine densities, the in-batch contrastive
loss, and four intrinsic-dimension estimators (lPCA, MOM, TwoNN, FisherS)."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import lambertw

from .analysis import Histogram

EMB1_MAGIC = b"EMB1"


class EmbeddingError(ValueError):
    pass


class BadMagic(EmbeddingError):
    pass


class DimensionMismatch(EmbeddingError):
    pass


class NonFiniteValue(EmbeddingError):
    pass


class ShapeMismatch(EmbeddingError):
    pass


class ZeroNormRow(EmbeddingError):
    pass


class NonPositiveTau(EmbeddingError):
    pass


class DegenerateCovariance(EmbeddingError):
    pass


class TooFewPoints(EmbeddingError):
    pass


class AllDuplicates(EmbeddingError):
    pass


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    rows: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise DimensionMismatch(f"expected a non-empty n x d matrix, got shape {rows.shape}")
        if not np.isfinite(rows).all():
            raise NonFiniteValue("embeddings contain NaN or infinite values")
        if self.labels is not None and len(self.labels) != rows.shape[0]:
            raise DimensionMismatch(f"{len(self.labels)} labels for {rows.shape[0]} rows")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


def write_emb1(path, rows) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    n, d = rows.shape
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC + struct.pack("<II", n, d) + rows.tobytes())


def parse_emb1(data: bytes) -> EmbeddingSet:
    if data[:4] != EMB1_MAGIC:
        raise BadMagic("missing EMB1 magic")
    if len(data) < 12:
        raise DimensionMismatch("truncated EMB1 header")
    n, d = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * n * d
    if len(data) != expected:
        raise DimensionMismatch(f"EMB1 header says {n}x{d} ({expected} bytes), file has {len(data)}")
    rows = np.frombuffer(data, dtype="<f4", offset=12).reshape(n, d)
    return EmbeddingSet(rows.astype(np.float64))


def parse_csv(text: str) -> EmbeddingSet:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header:
        raise DimensionMismatch("CSV has no header row")
    rows = []
    for lineno, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(header):
            raise DimensionMismatch(f"line {lineno}: {len(record)} fields, header has {len(header)}")
        try:
            rows.append([float(x) for x in record])
        except ValueError as exc:
            raise DimensionMismatch(f"line {lineno}: {exc}") from None
    if not rows:
        raise DimensionMismatch("CSV has no data rows")
    return EmbeddingSet(np.array(rows))


def load_embeddings(path) -> EmbeddingSet:
    """Read an EMB1 binary file or a CSV with a header row."""
    data = Path(path).read_bytes()
    if data[:4] == EMB1_MAGIC:
        return parse_emb1(data)
    if str(path).lower().endswith(".csv"):
        return parse_csv(data.decode())
    raise BadMagic(f"{path}: neither EMB1 nor .csv")


# ---- pairwise similarity ---------------------------------------------------

def _unit_rows(e: EmbeddingSet) -> np.ndarray:
    norms = np.linalg.norm(e.rows, axis=1)
    if (norms == 0).any():
        raise ZeroNormRow(f"row {int(np.argmin(norms))} has zero norm")
    return e.rows / norms[:, None]


def _check_pair(z: EmbeddingSet, zbar: EmbeddingSet) -> None:
    if z.rows.shape != zbar.rows.shape:
        raise ShapeMismatch(f"{z.rows.shape} vs {zbar.rows.shape}")


def pair_cosine(z: EmbeddingSet, zbar: EmbeddingSet) -> np.ndarray:
    _check_pair(z, zbar)
    sims = np.einsum("ij,ij->i", _unit_rows(z), _unit_rows(zbar))
    return np.clip(sims, -1.0, 1.0)


def cosine_pair_density(z: EmbeddingSet, zbar: EmbeddingSet, bins: int = 50) -> Histogram:
    """Histogram of row-wise cosine similarities over [-1, 1].

    Bins are half-open ``[lo, hi)`` except the last, which includes 1.
    """
    if bins < 1:
        raise ValueError("bins must be positive")
    counts, edges = np.histogram(pair_cosine(z, zbar), bins=bins, range=(-1.0, 1.0))
    centers = tuple(float(x) for x in (edges[:-1] + edges[1:]) / 2)
    return Histogram("cosine_similarity", centers, tuple(int(c) for c in counts))


@dataclass(frozen=True)
class ContrastiveReport:
    tau: float
    per_example_loss: np.ndarray
    mean_loss: float

    def to_json(self) -> dict:
        return {"tau": self.tau, "mean_loss": self.mean_loss, "per_example_loss": self.per_example_loss.tolist()}


def contrastive_loss(z: EmbeddingSet, zbar: EmbeddingSet, tau: float) -> ContrastiveReport:
    """In-batch softmax cross-entropy over pairwise cosine similarities.

    ``loss_i = -log(exp(s_ii / tau) / sum_j exp(s_ij / tau))`` where
    ``s_ij = cos(z_i, zbar_j)``.
    """
    _check_pair(z, zbar)
    if not tau > 0:
        raise NonPositiveTau(f"temperature must be positive, got {tau}")
    logits = (_unit_rows(z) @ _unit_rows(zbar).T) / tau
    shift = logits.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    # cross-entropy is >= 0 analytically; clip float noise
    losses = np.maximum(lse - np.diag(logits), 0.0)
    return ContrastiveReport(float(tau), losses, float(losses.mean()))


# ---- intrinsic dimension ---------------------------------------------------

def id_lpca(e: EmbeddingSet, alpha: float = 0.05) -> float:
    """Number of covariance eigenvalues above ``alpha`` times the largest."""
    if e.n < 2:
        raise TooFewPoints("PCA needs at least two points")
    centered = e.rows - e.rows.mean(axis=0)
    # eigenvalues of X^T X / (n-1) via singular values, descending
    s = np.linalg.svd(centered, compute_uv=False)
    eig = s**2 / (e.n - 1)
    if eig[0] <= np.finfo(float).eps * max(1.0, float(np.abs(e.rows).max()) ** 2):
        raise DegenerateCovariance("all points coincide")
    return float(np.count_nonzero(eig > alpha * eig[0]))


def _knn(rows: np.ndarray, k: int) -> np.ndarray:
    """Sorted distances to the k nearest other points, shape (n, k)."""
    dist, _ = cKDTree(rows).query(rows, k=k + 1)
    # one zero is the query point itself, wherever ties put it
    return np.sort(dist, axis=1)[:, 1:]


@dataclass
class MomResult:
    dimension: float
    k: int
    excluded: int


def mom(e: EmbeddingSet, k: int = 20) -> MomResult:
    if not 2 <= k < e.n:
        raise TooFewPoints(f"need n > k >= 2, got n={e.n}, k={k}")
    r = _knn(e.rows, k)
    w = r[:, -1]
    m1 = r.mean(axis=1)
    keep = w > m1
    excluded = int(e.n - keep.sum())
    if not keep.any():
        raise AllDuplicates("every neighbourhood has equal distances")
    local = m1[keep] / (w[keep] - m1[keep])
    return MomResult(float(local.mean()), k, excluded)


def id_mom(e: EmbeddingSet, k: int = 20) -> float:
    """Method-of-moments estimate averaged over points."""
    return mom(e, k).dimension


@dataclass
class TwoNNResult:
    dimension: float
    discard_fraction: float
    used: int
    skipped_duplicates: int


def twonn(e: EmbeddingSet, discard_fraction: float = 0.1) -> TwoNNResult:
    if e.n < 3:
        raise TooFewPoints("TwoNN needs at least three points")
    if not 0 <= discard_fraction < 1:
        raise ValueError("discard_fraction must lie in [0, 1)")
    r = _knn(e.rows, 2)
    valid = r[:, 0] > 0
    skipped = int(e.n - valid.sum())
    if not valid.any():
        raise AllDuplicates("every point has a duplicate neighbour")
    log_mu = np.sort(np.log(r[valid, 1] / r[valid, 0]))
    n = log_mu.size
    m = max(1, int(np.floor(n * (1 - discard_fraction))))
    # Pareto(d) likelihood for the m smallest ratios, the rest censored at
    # the largest one kept
    denom = log_mu[:m].sum() + (n - m) * log_mu[m - 1]
    if denom <= 0:
        raise AllDuplicates("all neighbour ratios equal one")
    return TwoNNResult(float(m / denom), discard_fraction, n, skipped)


def id_twonn(e: EmbeddingSet, discard_fraction: float = 0.1) -> float:
    return twonn(e, discard_fraction).dimension


DEFAULT_FISHER_ALPHAS = tuple(np.round(np.arange(0.6, 1.0, 0.02), 2))


@dataclass
class FisherResult:
    dimension: float
    alpha: float
    alphas: np.ndarray
    profile: np.ndarray            # dimension per alpha (nan where all separable)
    inseparability: np.ndarray     # mean fraction of inseparable points per alpha
    separable_fraction: np.ndarray
    kept_components: int


def _fisher_preprocess(rows: np.ndarray, conditional_number: float = 10.0) -> tuple[np.ndarray, int]:
    centered = rows - rows.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[0] <= np.finfo(float).eps * max(1.0, float(np.abs(rows).max())):
        raise DegenerateCovariance("all points coincide")
    keep = s**2 > (s[0] ** 2) / conditional_number
    # whitened principal components
    projected = u[:, keep] * np.sqrt(rows.shape[0] - 1)
    norms = np.linalg.norm(projected, axis=1)
    norms[norms == 0] = 1.0
    return projected / norms[:, None], int(keep.sum())


def fishers(e: EmbeddingSet, alphas: Sequence[float] | None = None, *, chunk: int = 1000) -> FisherResult:
    alphas = np.asarray(DEFAULT_FISHER_ALPHAS if alphas is None else alphas, dtype=float)
    if alphas.ndim != 1 or alphas.size == 0 or (alphas <= 0).any() or (alphas >= 1).any():
        raise ValueError("alphas must be a non-empty list of values in (0, 1)")
    if e.n < 3:
        raise TooFewPoints("FisherS needs at least three points")
    alphas = np.sort(alphas)
    x, kept = _fisher_preprocess(e.rows)
    n = x.shape[0]
    lengths = np.einsum("ij,ij->i", x, x)
    lengths[lengths == 0] = 1.0
    # p[a, i]: fraction of points j != i with <x_i, x_j> / <x_i, x_i> >= alpha_a
    p = np.zeros((alphas.size, n))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        ratio = (x[start:stop] @ x.T) / lengths[start:stop, None]
        ratio[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        ratio.sort(axis=1)
        above = n - np.stack([np.searchsorted(row, alphas, side="left") for row in ratio], axis=1)
        p[:, start:stop] = above / n
    separable = (p == 0).mean(axis=1)
    p_mean = p.mean(axis=1)

    profile = np.full(alphas.size, np.nan)
    for a, (alpha, pm) in enumerate(zip(alphas, p_mean)):
        if pm == 0:
            continue
        a2 = alpha * alpha
        w = np.log(1 - a2)
        val = np.real(lambertw(-w / (2 * np.pi * pm * pm * a2 * (1 - a2)))) / -w
        if np.isfinite(val):
            profile[a] = val
    finite = np.flatnonzero(np.isfinite(profile))
    if finite.size == 0:
        raise TooFewPoints("every point is separable at every alpha; add points or lower alphas")
    # reference alpha: closest to 90% of the largest alpha not fully separable
    target = 0.9 * alphas[finite].max()
    pick = finite[np.argmin(np.abs(alphas[finite] - target))]
    return FisherResult(float(profile[pick]), float(alphas[pick]), alphas, profile, p_mean, separable, kept)


def id_fishers(e: EmbeddingSet, alphas: Sequence[float] | None = None) -> float:
    return fishers(e, alphas).dimension


@dataclass
class IdEstimates:
    lpca: float
    mom: float
    twonn: float
    fishers: float
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"lpca": self.lpca, "mom": self.mom, "twonn": self.twonn, "fishers": self.fishers, "params": self.params}


def estimate_all(
    e: EmbeddingSet,
    *,
    alpha: float = 0.05,
    k: int = 20,
    discard_fraction: float = 0.1,
    fisher_alphas: Sequence[float] | None = None,
) -> IdEstimates:
    """All four estimates, clamped to (0, d]; raw values land in ``params``."""
    k = min(k, e.n - 1)
    m = mom(e, k)
    t = twonn(e, discard_fraction)
    f = fishers(e, fisher_alphas)
    raw = {"lpca": id_lpca(e, alpha), "mom": m.dimension, "twonn": t.dimension, "fishers": f.dimension}
    params = {
        "lpca": {"alpha": alpha},
        "mom": {"k": k, "excluded": m.excluded},
        "twonn": {"discard_fraction": discard_fraction, "skipped_duplicates": t.skipped_duplicates},
        "fishers": {"alphas": [float(a) for a in f.alphas], "alpha": f.alpha, "kept_components": f.kept_components},
        "raw": raw,
        "n": e.n,
        "d": e.d,
    }
    clamp = {key: float(min(max(v, np.finfo(float).tiny), e.d)) for key, v in raw.items()}
    return IdEstimates(params=params, **clamp)
