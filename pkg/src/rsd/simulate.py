"""Synthetic benchmark scenarios: factor-crossed datasets with known
segment structure, plus a 120-point test grid."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .samplers import RngStream
from .state import Dataset

N_BY_DENSITY = {"high": 1155, "low": 563}
TEST_GRID = (12, 10)  # 120 test points
COEF_RANGE = (2.0, 15.0)

# cross-segment separation of blob centers and blob spread per level;
# anchors are kept a bit farther apart than the guaranteed minimum so a
# satellite fallback (below) can never violate it
_MIN_SEP = {"high": 0.35, "low": 0.12}
_ANCHOR_SEP = {"high": 0.40, "low": 0.16}
_BLOB_SD = {"high": 0.05, "low": 0.12}
_CENTER_MARGIN = 0.05
_CLIP_CAP = 10_000


@dataclass
class SimFactors:
    """One cell of the simulation design."""

    K_star: int = 3
    similarity: str = "high"
    density: str = "high"
    p: int = 4
    active: float | int = 1.0      # fraction of nonzero coefficients, or a count
    sigma0_sq: float = 100.0
    seed: int = 0

    @property
    def n(self) -> int:
        return N_BY_DENSITY[self.density]

    @property
    def active_count(self) -> int:
        if isinstance(self.active, (int, np.integer)) and not isinstance(self.active, bool):
            count = int(self.active)
        else:
            count = int(round(self.active * self.p))
        return count

    def validate(self) -> "SimFactors":
        if self.K_star < 1:
            raise ValueError("K_star must be >= 1")
        if self.similarity not in _MIN_SEP:
            raise ValueError("similarity must be 'high' or 'low'")
        if self.density not in N_BY_DENSITY:
            raise ValueError("density must be 'high' or 'low'")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if not 1 <= self.active_count <= self.p:
            raise ValueError("active coefficient count must be in [1, p]")
        if self.sigma0_sq < 0:
            raise ValueError("sigma0_sq must be non-negative")
        return self

    def label(self) -> str:
        act = self.active_count
        return (
            f"K{self.K_star}_sim{self.similarity}_den{self.density}"
            f"_p{self.p}_act{act}"
        )


@dataclass
class SpatialMixture:
    """True location mixture: two blobs per segment."""

    centers: np.ndarray   # (K*, 2, 2) blob centers
    sd: float
    weights: np.ndarray   # (K*, 2) blob point shares

    def map_labels(self, S: np.ndarray) -> np.ndarray:
        """Most likely segment for each location under the mixture
        density (1-based). Diagnostic; far from all blobs this is an
        arbitrary convention."""
        flat_c = self.centers.reshape(-1, 2)
        d2 = ((S[:, None, :] - flat_c[None, :, :]) ** 2).sum(axis=2)
        dens = self.weights.reshape(-1)[None, :] * np.exp(-0.5 * d2 / self.sd**2)
        per_segment = dens.reshape(S.shape[0], -1, 2).sum(axis=2)
        return per_segment.argmax(axis=1) + 1


@dataclass
class SimScenario:
    train: Dataset
    test: Dataset
    true_labels_train: np.ndarray
    true_labels_test: np.ndarray
    true_Beta: np.ndarray
    factors: SimFactors
    mixture: SpatialMixture = field(repr=False, default=None)


def generate_coefficients(p: int, active_count: int, K_star: int, rng: RngStream) -> np.ndarray:
    """Per-segment coefficients: a random active subset gets magnitudes
    uniform in [2, 15] with random signs; the rest are exactly zero."""
    if not 1 <= active_count <= p:
        raise ValueError("active_count must be in [1, p]")
    gen = rng.gen
    beta = np.zeros((K_star, p))
    for k in range(K_star):
        active = gen.choice(p, size=active_count, replace=False)
        magnitude = gen.uniform(*COEF_RANGE, size=active_count)
        sign = np.where(gen.random(active_count) < 0.5, 1.0, -1.0)
        beta[k, active] = sign * magnitude
    return beta


def _even_split(total: int, parts: int) -> np.ndarray:
    base, extra = divmod(total, parts)
    return np.array([base + (1 if i < extra else 0) for i in range(parts)])


def _place_centers(K_star: int, similarity: str, gen: np.random.Generator) -> np.ndarray:
    """Blob centers per segment; cross-segment pairs respect the
    similarity level's minimum separation."""
    lo, hi = _CENTER_MARGIN, 1.0 - _CENTER_MARGIN
    min_sep = _MIN_SEP[similarity]
    anchor_sep = _ANCHOR_SEP[similarity]

    for _ in range(200):
        anchors = []
        ok = True
        for _k in range(K_star):
            for _try in range(500):
                cand = gen.uniform(lo, hi, size=2)
                if all(np.linalg.norm(cand - a) >= anchor_sep for a in anchors):
                    anchors.append(cand)
                    break
            else:
                ok = False
                break
        if ok:
            break
    else:
        raise RuntimeError("could not place segment anchors; separation infeasible")

    centers = np.empty((K_star, 2, 2))
    placed_second: list[tuple[int, np.ndarray]] = []
    for k in range(K_star):
        centers[k, 0] = anchors[k]
        second = None
        for _try in range(500):
            cand = gen.uniform(lo, hi, size=2)
            far_from_anchors = all(
                np.linalg.norm(cand - anchors[j]) >= anchor_sep for j in range(K_star) if j != k
            )
            far_from_seconds = all(
                np.linalg.norm(cand - c) >= min_sep for j, c in placed_second if j != k
            )
            if far_from_anchors and far_from_seconds:
                second = cand
                break
        if second is None:
            # fall back to a satellite of the segment's own anchor; the
            # radius cap of (anchor_sep - min_sep) / 2 guarantees every
            # cross-segment pair, satellite-satellite included, stays at
            # least min_sep apart
            for _try in range(100):
                angle = gen.uniform(0, 2 * np.pi)
                radius = gen.uniform(0.25, 0.5) * (anchor_sep - min_sep)
                cand = anchors[k] + radius * np.array([np.cos(angle), np.sin(angle)])
                if np.all(cand >= lo) and np.all(cand <= hi):
                    second = cand
                    break
            else:
                second = anchors[k].copy()
        centers[k, 1] = second
        placed_second.append((k, second))
    return centers


def generate_locations(factors: SimFactors, rng: RngStream):
    """Training locations, their true labels, and the true mixture."""
    factors.validate()
    gen = rng.gen
    n, K_star = factors.n, factors.K_star
    sd = _BLOB_SD[factors.similarity]
    centers = _place_centers(K_star, factors.similarity, gen)

    seg_counts = _even_split(n, K_star)
    S = np.empty((n, 2))
    labels = np.empty(n, dtype=int)
    weights = np.empty((K_star, 2))
    row = 0
    for k in range(K_star):
        blob_counts = _even_split(seg_counts[k], 2)
        weights[k] = blob_counts / n
        for b in range(2):
            for _ in range(blob_counts[b]):
                for attempt in range(_CLIP_CAP):
                    point = centers[k, b] + sd * gen.standard_normal(2)
                    if np.all(point >= 0.0) and np.all(point <= 1.0):
                        break
                else:
                    raise RuntimeError("location rejection-resampling cap exceeded")
                S[row] = point
                labels[row] = k + 1
                row += 1
    mixture = SpatialMixture(centers=centers, sd=sd, weights=weights)
    return S, labels, mixture


def _test_grid(gen: np.random.Generator) -> np.ndarray:
    """Jittered 12 x 10 grid covering the unit square."""
    nx, ny = TEST_GRID
    xs = (np.arange(nx) + 0.5) / nx
    ys = (np.arange(ny) + 0.5) / ny
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([gx.ravel(), gy.ravel()])
    jitter = gen.uniform(-0.5, 0.5, size=points.shape) / np.array([nx, ny])
    return points + jitter


def _responses(X, beta_rows, counts, sigma0_sq, gen):
    mean = np.einsum("np,np->n", X, beta_rows)
    if sigma0_sq == 0.0:
        return mean
    return mean + gen.standard_normal(X.shape[0]) * np.sqrt(sigma0_sq / counts)


def generate_scenario(factors: SimFactors) -> SimScenario:
    """Full train + 120-point test scenario for one design cell."""
    factors.validate()
    rng = RngStream(factors.seed)
    gen = rng.gen

    true_Beta = generate_coefficients(factors.p, factors.active_count, factors.K_star, rng)
    S_train, labels_train, mixture = generate_locations(factors, rng)

    X_train = gen.standard_normal((factors.n, factors.p))
    counts_train = 15.0 + gen.poisson(20.0, size=factors.n)
    y_train = _responses(X_train, true_Beta[labels_train - 1], counts_train, factors.sigma0_sq, gen)

    S_test = _test_grid(gen)
    # truth for a grid point is the generator blob membership of its
    # nearest training location; this keeps far-from-data test points
    # consistent with proximity-based membership transfer
    d2 = ((S_test[:, None, :] - S_train[None, :, :]) ** 2).sum(axis=2)
    labels_test = labels_train[np.argmin(d2, axis=1)]
    n_test = S_test.shape[0]
    X_test = gen.standard_normal((n_test, factors.p))
    counts_test = 15.0 + gen.poisson(20.0, size=n_test)
    y_test = _responses(X_test, true_Beta[labels_test - 1], counts_test, factors.sigma0_sq, gen)

    names = [f"x{j + 1}" for j in range(factors.p)]
    train = Dataset(y=y_train, X=X_train, S=S_train, counts=counts_train, feature_names=names)
    test = Dataset(y=y_test, X=X_test, S=S_test, counts=counts_test, feature_names=names)
    return SimScenario(
        train=train,
        test=test,
        true_labels_train=labels_train,
        true_labels_test=labels_test,
        true_Beta=true_Beta,
        factors=factors,
        mixture=mixture,
    )


def _cell_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((master_seed, index)).generate_state(1)[0])


def enumerate_factor_grid(master_seed: int = 0) -> list[SimFactors]:
    """The full 2^5 factorial design with per-cell derived seeds."""
    levels = itertools.product((3, 6), ("high", "low"), ("high", "low"), (4, 8), (1.0, 0.5))
    return [
        SimFactors(
            K_star=k, similarity=sim, density=den, p=p, active=act,
            seed=_cell_seed(master_seed, i),
        )
        for i, (k, sim, den, p, act) in enumerate(levels)
    ]


def high_dim_factors(p: int, master_seed: int = 0) -> SimFactors:
    """Extra high-dimensional cells: p in {30, 100} with 10 active
    coefficients under the hardest spatial levels."""
    if p not in (30, 100):
        raise ValueError("high-dimensional presets are defined for p=30 and p=100")
    index = 32 + (0 if p == 30 else 1)
    return SimFactors(
        K_star=6, similarity="low", density="low", p=p, active=10,
        seed=_cell_seed(master_seed, index),
    )
