"""Adaptive per-subcarrier Gaussian-mixture background model.

Each (antenna, subcarrier) amplitude stream is modeled by its own mixture of
K univariate Gaussians with online updates, separating the stationary
channel state of a still posture (background) from perturbations caused by
in-place motion (foreground).

Per incoming value x the model, in order:

1. finds the first component (in fitness order, fitness = w/sigma) with
   ``|x - mu| <= deviation_factor * sigma``;
2. labels x foreground iff it fails that deviation test against every
   component of the background set, the smallest fitness-ordered prefix
   whose cumulative weight reaches the background weight threshold;
3. if nothing matched, replaces the least-fit component with
   ``(mu=x, var=initial_variance, w=1/K)`` and renormalizes the weights;
4. otherwise decays every weight by ``(1 - alpha)``, adds ``alpha`` to the
   first match, renormalizes, and moves the first match with
   ``mu' = (1-rho) mu + rho x`` and ``var' = (1-rho) var + rho (x - mu')^2``
   where ``rho = alpha / w`` uses the renormalized weight.

Components stay sorted by fitness after every update; variances never fall
below ``variance_floor``. Mixtures are lazily seeded from the first observed
value: all K means start at that value with small alternating offsets so the
first match is well defined and a cold start is not all-foreground.
"""

from __future__ import annotations

import enum
from typing import Iterable

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator

_SNAPSHOT_VERSION = 1

# Alternating mean-seed offsets in dBm: 0, +0.1, -0.1, +0.2, -0.2, ...
_SEED_STEP = 0.1


class PixelLabel(enum.Enum):
    BACKGROUND = 0
    FOREGROUND = 1


@njit(cache=True)
def _process_block(x, w, mu, var, seeded, alpha, theta, dev, var_floor, init_var, labels):
    """Run the online update over a (samples, pixels) block in place.

    State arrays are (pixels, K) and kept sorted by fitness descending.
    ``labels`` is a preallocated (samples, pixels) uint8 output,
    1 = foreground.
    """
    n, n_pixels = x.shape
    k = w.shape[1]
    for t in range(n):
        for p in range(n_pixels):
            xv = x[t, p]
            if not seeded[p]:
                for j in range(k):
                    half = (j + 1) // 2
                    off = _SEED_STEP * half if j % 2 == 1 else -_SEED_STEP * half
                    mu[p, j] = xv + off
                    w[p, j] = 1.0 / k
                    var[p, j] = init_var
                seeded[p] = True

            first_match = -1
            for i in range(k):
                if abs(xv - mu[p, i]) <= dev * np.sqrt(var[p, i]):
                    first_match = i
                    break

            # Background set: smallest fitness-ordered prefix with
            # cumulative weight >= theta. Foreground iff outside the
            # deviation band of every component in it.
            cum = 0.0
            foreground = True
            for i in range(k):
                cum += w[p, i]
                if abs(xv - mu[p, i]) <= dev * np.sqrt(var[p, i]):
                    foreground = False
                if cum >= theta:
                    break
            labels[t, p] = 1 if foreground else 0

            if first_match < 0:
                # Replace the least-fit component (sorted order: the last).
                mu[p, k - 1] = xv
                var[p, k - 1] = init_var
                w[p, k - 1] = 1.0 / k
                s = 0.0
                for i in range(k):
                    s += w[p, i]
                for i in range(k):
                    w[p, i] /= s
            else:
                for i in range(k):
                    w[p, i] = (1.0 - alpha) * w[p, i]
                w[p, first_match] += alpha
                s = 0.0
                for i in range(k):
                    s += w[p, i]
                for i in range(k):
                    w[p, i] /= s
                rho = alpha / w[p, first_match]
                m_new = (1.0 - rho) * mu[p, first_match] + rho * xv
                mu[p, first_match] = m_new
                v_new = (1.0 - rho) * var[p, first_match] + rho * (xv - m_new) ** 2
                var[p, first_match] = v_new if v_new > var_floor else var_floor

            # Stable insertion sort by fitness descending; ties keep order.
            for i in range(1, k):
                kw = w[p, i]
                km = mu[p, i]
                kv = var[p, i]
                kf = kw / np.sqrt(kv)
                j = i - 1
                while j >= 0 and w[p, j] / np.sqrt(var[p, j]) < kf:
                    w[p, j + 1] = w[p, j]
                    mu[p, j + 1] = mu[p, j]
                    var[p, j + 1] = var[p, j]
                    j -= 1
                w[p, j + 1] = kw
                mu[p, j + 1] = km
                var[p, j + 1] = kv


class BackgroundModelBank(BaseEstimator):
    """Bank of independent mixtures, one per (antenna, subcarrier) stream.

    Parameters
    ----------
    n_antennas, n_subcarriers : int
        Stream geometry; one mixture is kept per (antenna, subcarrier).
    n_components : int
        Gaussians per mixture (K).
    learning_rate : float
        Online update rate alpha, in (0, 1).
    background_weight_threshold : float
        Cumulative-weight threshold selecting the background prefix, (0, 1].
    deviation_factor : float
        Match/label band half-width in standard deviations.
    variance_floor : float
        Lower clamp for component variances (dBm^2).
    initial_variance : float
        Variance assigned to seeded and replacement components.
    """

    def __init__(
        self,
        n_antennas: int = 3,
        n_subcarriers: int = 30,
        n_components: int = 3,
        learning_rate: float = 0.01,
        background_weight_threshold: float = 0.7,
        deviation_factor: float = 2.5,
        variance_floor: float = 0.05,
        initial_variance: float = 1.5,
    ):
        self.n_antennas = n_antennas
        self.n_subcarriers = n_subcarriers
        self.n_components = n_components
        self.learning_rate = learning_rate
        self.background_weight_threshold = background_weight_threshold
        self.deviation_factor = deviation_factor
        self.variance_floor = variance_floor
        self.initial_variance = initial_variance
        self._validate_params()
        self._allocate()

    def _validate_params(self):
        if self.n_antennas < 1 or self.n_subcarriers < 1:
            raise ValueError("n_antennas and n_subcarriers must be >= 1")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if not 0.0 < self.learning_rate < 1.0:
            raise ValueError("learning_rate must be in (0, 1)")
        if not 0.0 < self.background_weight_threshold <= 1.0:
            raise ValueError("background_weight_threshold must be in (0, 1]")
        if self.deviation_factor <= 0:
            raise ValueError("deviation_factor must be positive")
        if self.variance_floor <= 0 or self.initial_variance <= 0:
            raise ValueError("variances must be positive")

    def _allocate(self):
        p = self.n_antennas * self.n_subcarriers
        k = self.n_components
        self.weights_ = np.zeros((p, k), dtype=np.float64)
        self.means_ = np.zeros((p, k), dtype=np.float64)
        self.variances_ = np.full((p, k), self.initial_variance, dtype=np.float64)
        self.seeded_ = np.zeros(p, dtype=np.bool_)

    def _pixel(self, antenna: int, subcarrier: int) -> int:
        if not 0 <= antenna < self.n_antennas:
            raise ValueError(f"antenna {antenna} out of range")
        if not 0 <= subcarrier < self.n_subcarriers:
            raise ValueError(f"subcarrier {subcarrier} out of range")
        return antenna * self.n_subcarriers + subcarrier

    def process_block(self, values: np.ndarray) -> np.ndarray:
        """Classify and update on a (samples, antennas, subcarriers) block.

        Returns a boolean array of the same shape, True = foreground.
        Values are consumed in sample order; each sample updates the model
        before the next is classified.
        """
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3 or values.shape[1:] != (self.n_antennas, self.n_subcarriers):
            raise ValueError(
                f"expected (n, {self.n_antennas}, {self.n_subcarriers}) block, "
                f"got {values.shape}"
            )
        n = values.shape[0]
        flat = np.ascontiguousarray(values.reshape(n, -1))
        labels = np.zeros(flat.shape, dtype=np.uint8)
        _process_block(
            flat,
            self.weights_,
            self.means_,
            self.variances_,
            self.seeded_,
            self.learning_rate,
            self.background_weight_threshold,
            self.deviation_factor,
            self.variance_floor,
            self.initial_variance,
            labels,
        )
        return labels.reshape(values.shape).astype(bool)

    def classify_and_update(self, antenna: int, subcarrier: int, value: float) -> PixelLabel:
        """Classify one value for one stream and update that mixture."""
        p = self._pixel(antenna, subcarrier)
        x = np.array([[float(value)]], dtype=np.float64)
        labels = np.zeros((1, 1), dtype=np.uint8)
        _process_block(
            x,
            self.weights_[p : p + 1],
            self.means_[p : p + 1],
            self.variances_[p : p + 1],
            self.seeded_[p : p + 1],
            self.learning_rate,
            self.background_weight_threshold,
            self.deviation_factor,
            self.variance_floor,
            self.initial_variance,
            labels,
        )
        return PixelLabel.FOREGROUND if labels[0, 0] else PixelLabel.BACKGROUND

    def pixel_probability(self, antenna: int, subcarrier: int, value: float) -> float:
        """Mixture density at ``value`` (1/dBm) for one stream."""
        p = self._pixel(antenna, subcarrier)
        if not self.seeded_[p]:
            raise RuntimeError("mixture not seeded yet (no samples observed)")
        w = self.weights_[p]
        mu = self.means_[p]
        var = self.variances_[p]
        dens = np.exp(-0.5 * (value - mu) ** 2 / var) / np.sqrt(2.0 * np.pi * var)
        return float(np.sum(w * dens))

    def _background_size(self, w: np.ndarray) -> int:
        cum = 0.0
        for i, wi in enumerate(w):
            cum += wi
            if cum >= self.background_weight_threshold:
                return i + 1
        return len(w)

    def background_estimate(self, antenna: int, subcarrier: int) -> float:
        """Weighted mean of the background components of one stream."""
        p = self._pixel(antenna, subcarrier)
        if not self.seeded_[p]:
            raise RuntimeError("mixture not seeded yet (no samples observed)")
        w = self.weights_[p]
        b = self._background_size(w)
        return float(np.dot(w[:b], self.means_[p][:b]) / np.sum(w[:b]))

    def background_size(self, antenna: int, subcarrier: int) -> int:
        return self._background_size(self.weights_[self._pixel(antenna, subcarrier)])

    def component_view(self, antenna: int, subcarrier: int):
        """(weights, means, variances) of one mixture, fitness-ordered copies."""
        p = self._pixel(antenna, subcarrier)
        return (
            self.weights_[p].copy(),
            self.means_[p].copy(),
            self.variances_[p].copy(),
        )

    def save(self, path) -> None:
        """Snapshot all mixtures; restores losslessly via :meth:`load`."""
        np.savez(
            path,
            snapshot_version=np.int64(_SNAPSHOT_VERSION),
            n_antennas=np.int64(self.n_antennas),
            n_subcarriers=np.int64(self.n_subcarriers),
            n_components=np.int64(self.n_components),
            learning_rate=np.float64(self.learning_rate),
            background_weight_threshold=np.float64(self.background_weight_threshold),
            deviation_factor=np.float64(self.deviation_factor),
            variance_floor=np.float64(self.variance_floor),
            initial_variance=np.float64(self.initial_variance),
            weights=self.weights_,
            means=self.means_,
            variances=self.variances_,
            seeded=self.seeded_,
        )

    @classmethod
    def load(cls, path) -> "BackgroundModelBank":
        with np.load(path) as data:
            version = int(data["snapshot_version"])
            if version != _SNAPSHOT_VERSION:
                raise ValueError(f"unsupported snapshot version {version}")
            bank = cls(
                n_antennas=int(data["n_antennas"]),
                n_subcarriers=int(data["n_subcarriers"]),
                n_components=int(data["n_components"]),
                learning_rate=float(data["learning_rate"]),
                background_weight_threshold=float(data["background_weight_threshold"]),
                deviation_factor=float(data["deviation_factor"]),
                variance_floor=float(data["variance_floor"]),
                initial_variance=float(data["initial_variance"]),
            )
            bank.weights_ = data["weights"].copy()
            bank.means_ = data["means"].copy()
            bank.variances_ = data["variances"].copy()
            bank.seeded_ = data["seeded"].copy()
        return bank


def warm_up_jit() -> None:
    """Force kernel compilation so later calls run at full speed."""
    bank = BackgroundModelBank(n_antennas=1, n_subcarriers=1)
    bank.process_block(np.zeros((2, 1, 1)))
