"""Frequency spectra and smoothed Good-Turing coverage estimates.

For a subset S with cluster multiplicities n_u, the spectrum f_s counts how
many clusters appear exactly s times. The truncated Good-Turing estimate of
types still unseen after t|S| more draws is

    U_gt = - sum_{s=1}^{M} (-t)^s f_s

which explodes for t > 1; the smoothed variant damps each term by
w_s = P(L >= s) with L ~ Binomial(k0, alpha/(t+alpha)) and clamps at zero.
Coverage of S is then Phi(S) = K_seen(S) + U_sgt(S). Natural logarithms are
used wherever logs appear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange

_SMOOTHING_MODES = ("off", "power_law")


@dataclass
class SubsetSpectrum:
    """Cluster multiplicities and their frequency-of-frequencies for a subset."""

    counts: dict[int, int]  # cluster id -> multiplicity in S
    spectrum: dict[int, int]  # s -> f_s
    size: int  # members counted, after noise exclusion
    noise_label: int | None = None

    @property
    def k_seen(self) -> int:
        return len(self.counts)


@dataclass
class SgtConfig:
    """Knobs of the smoothed estimator.

    t is the expansion factor (estimate new types among floor(t*|S|) further
    draws), bin_size the truncation M, offset_alpha the damping offset in
    [1, 2]. k0_override pins the binomial size parameter directly; by
    default k0 = ceil(0.5 * log2(|S| * t^2 / (t+1))), clamped at 0.
    """

    t: float = 5.0
    bin_size: int = 20
    offset_alpha: float = 1.0
    smoothing: str = "off"
    noise_label: int | None = None
    k0_override: int | None = None

    def __post_init__(self) -> None:
        if self.t <= 0:
            raise ValueError(f"t must be > 0, got {self.t}")
        if self.bin_size < 1:
            raise ValueError(f"bin_size must be >= 1, got {self.bin_size}")
        if not 1.0 <= self.offset_alpha <= 2.0:
            raise ValueError(f"offset_alpha must be in [1, 2], got {self.offset_alpha}")
        if self.smoothing not in _SMOOTHING_MODES:
            raise ValueError(f"smoothing must be one of {_SMOOTHING_MODES}")
        if self.k0_override is not None and self.k0_override < 0:
            raise ValueError("k0_override must be >= 0")


def subset_spectrum(
    labels: np.ndarray, subset, noise_label: int | None = None
) -> SubsetSpectrum:
    """Count cluster multiplicities over `subset` (row indices into labels).

    Members carrying noise_label are excluded from all counts. Raises
    IndexOutOfRange for indices outside the pool.
    """
    lab = np.asarray(labels)
    counts: dict[int, int] = {}
    size = 0
    n = lab.shape[0]
    for idx in subset:
        i = int(idx)
        if i < 0 or i >= n:
            raise IndexOutOfRange(f"subset index {i} outside pool of {n} rows")
        value = int(lab[i])
        if noise_label is not None and value == noise_label:
            continue
        counts[value] = counts.get(value, 0) + 1
        size += 1
    spectrum: dict[int, int] = {}
    for c in counts.values():
        spectrum[c] = spectrum.get(c, 0) + 1
    return SubsetSpectrum(counts=counts, spectrum=spectrum, size=size,
                          noise_label=noise_label)


def _freq_of(spectrum) -> dict[int, float]:
    if isinstance(spectrum, SubsetSpectrum):
        return dict(spectrum.spectrum)
    return {int(s): float(f) for s, f in dict(spectrum).items()}


def gt_unseen(spectrum, t: float, bin_size: int = 20) -> float:
    """Unweighted truncated Good-Turing estimate; may be negative."""
    freq = _freq_of(spectrum)
    total = 0.0
    for s in range(1, bin_size + 1):
        f = freq.get(s, 0.0)
        if f:
            total -= (-float(t)) ** s * f
    return total


def k0_for(t: float, sample_size: int) -> int:
    """Binomial size parameter of the damping weights."""
    x = sample_size * t * t / (t + 1.0)
    if x <= 0:
        return 0
    return max(0, math.ceil(0.5 * math.log2(x)))


def sgt_weights(
    t: float,
    offset_alpha: float,
    sample_size: int,
    bin_size: int = 20,
    k0_override: int | None = None,
) -> np.ndarray:
    """Damping weights w_s = P(L >= s), L ~ Binomial(k0, alpha/(t+alpha)).

    Tails are accumulated in log space so large k0 overrides stay stable.
    Weights are non-increasing in s; k0 = 0 gives all zeros.
    """
    if sample_size < 1:
        raise ValueError(f"sample_size must be >= 1, got {sample_size}")
    k0 = k0_for(t, sample_size) if k0_override is None else int(k0_override)
    p0 = offset_alpha / (t + offset_alpha)
    weights = np.zeros(bin_size, dtype=np.float64)
    if k0 == 0 or p0 <= 0.0:
        return weights
    log_p = math.log(p0)
    log_q = math.log1p(-p0) if p0 < 1.0 else -math.inf
    lg_k = math.lgamma(k0 + 1)
    for s in range(1, bin_size + 1):
        if s > k0:
            break
        # P(L >= s) via whichever side of the CDF has fewer terms.
        if k0 - s + 1 <= s:
            tail = 0.0
            for j in range(s, k0 + 1):
                tail += math.exp(
                    lg_k - math.lgamma(j + 1) - math.lgamma(k0 - j + 1)
                    + j * log_p + (k0 - j) * log_q
                )
            weights[s - 1] = min(1.0, tail)
        else:
            head = 0.0
            for j in range(s):
                head += math.exp(
                    lg_k - math.lgamma(j + 1) - math.lgamma(k0 - j + 1)
                    + j * log_p + (k0 - j) * log_q
                )
            weights[s - 1] = min(1.0, max(0.0, 1.0 - head))
    return weights


def smooth_spectrum(spectrum, bin_size: int = 20) -> dict[int, float]:
    """Replace f_s for s = 1..bin_size by a power-law fit of the nonzero bins.

    Fits log f_s = a + b log s by least squares. With fewer than two nonzero
    bins the spectrum is returned unchanged. Non-finite or negative fitted
    values are clamped to zero.
    """
    freq = _freq_of(spectrum)
    fit = _power_law_fit(freq, bin_size)
    if fit is None:
        return freq
    a, b = fit
    out: dict[int, float] = {}
    for s in range(1, bin_size + 1):
        value = math.exp(a + b * math.log(s)) if math.isfinite(a + b) else 0.0
        out[s] = value if math.isfinite(value) and value > 0 else 0.0
    return out


def _power_law_fit(freq: dict[int, float], bin_size: int) -> tuple[float, float] | None:
    points = [(s, f) for s, f in sorted(freq.items()) if f > 0 and 1 <= s <= bin_size]
    if len(points) < 2:
        return None
    xs = np.log([float(s) for s, _ in points])
    ys = np.log([float(f) for _, f in points])
    b, a = np.polyfit(xs, ys, 1)
    return float(a), float(b)


def sgt_unseen(spectrum, cfg: SgtConfig) -> float:
    """Smoothed Good-Turing estimate of unseen clusters; always >= 0."""
    freq = _freq_of(spectrum)
    if isinstance(spectrum, SubsetSpectrum):
        size = spectrum.size
    else:
        size = int(round(sum(s * f for s, f in freq.items())))
    if size <= 0:
        return 0.0
    if cfg.smoothing == "power_law":
        freq = smooth_spectrum(freq, cfg.bin_size)
    weights = sgt_weights(cfg.t, cfg.offset_alpha, size, cfg.bin_size, cfg.k0_override)
    total = 0.0
    for s in range(1, cfg.bin_size + 1):
        f = freq.get(s, 0.0)
        if f and weights[s - 1]:
            total -= (-cfg.t) ** s * weights[s - 1] * f
    if not math.isfinite(total):
        return 0.0
    return float(max(0.0, total))


def coverage_phi(labels: np.ndarray, subset, cfg: SgtConfig) -> tuple[float, int, float]:
    """Coverage Phi(S) = K_seen(S) + U_sgt(S); returns (phi, k_seen, u_hat)."""
    spec = subset_spectrum(labels, subset, cfg.noise_label)
    u_hat = sgt_unseen(spec, cfg)
    return float(spec.k_seen + u_hat), int(spec.k_seen), u_hat


class CoverageTracker:
    """Incrementally maintained spectrum for greedy selection loops.

    Keeps counts and spectrum of the current subset and evaluates the
    coverage gain of adding one item without rebuilding anything. Weight
    vectors are cached per subset size.
    """

    def __init__(self, labels: np.ndarray, cfg: SgtConfig):
        self.labels = np.asarray(labels)
        self.cfg = cfg
        self.counts: dict[int, int] = {}
        self.spectrum: dict[int, int] = {}
        self.size = 0
        self._weights_cache: dict[int, np.ndarray] = {}

    def _unseen(self) -> float:
        if self.size <= 0:
            return 0.0
        freq: dict[int, float] = self.spectrum
        if self.cfg.smoothing == "power_law":
            freq = smooth_spectrum(freq, self.cfg.bin_size)
        weights = self._weights_cache.get(self.size)
        if weights is None:
            weights = sgt_weights(
                self.cfg.t, self.cfg.offset_alpha, self.size,
                self.cfg.bin_size, self.cfg.k0_override,
            )
            self._weights_cache[self.size] = weights
        total = 0.0
        for s in range(1, self.cfg.bin_size + 1):
            f = freq.get(s, 0.0)
            if f and weights[s - 1]:
                total -= (-self.cfg.t) ** s * weights[s - 1] * f
        if not math.isfinite(total):
            return 0.0
        return max(0.0, total)

    def phi(self) -> float:
        return len(self.counts) + self._unseen()

    @property
    def k_seen(self) -> int:
        return len(self.counts)

    def _bump(self, cluster: int) -> None:
        c = self.counts.get(cluster, 0)
        if c:
            self.spectrum[c] -= 1
            if not self.spectrum[c]:
                del self.spectrum[c]
        self.counts[cluster] = c + 1
        self.spectrum[c + 1] = self.spectrum.get(c + 1, 0) + 1
        self.size += 1

    def _unbump(self, cluster: int) -> None:
        c = self.counts[cluster]
        self.spectrum[c] -= 1
        if not self.spectrum[c]:
            del self.spectrum[c]
        if c == 1:
            del self.counts[cluster]
        else:
            self.counts[cluster] = c - 1
            self.spectrum[c - 1] = self.spectrum.get(c - 1, 0) + 1
        self.size -= 1

    def gain_if_added(self, index: int, phi_now: float | None = None) -> float:
        """Phi(S + {i}) - Phi(S)."""
        cluster = int(self.labels[index])
        if self.cfg.noise_label is not None and cluster == self.cfg.noise_label:
            return 0.0
        if phi_now is None:
            phi_now = self.phi()
        self._bump(cluster)
        phi_new = self.phi()
        self._unbump(cluster)
        return phi_new - phi_now

    def add(self, index: int) -> None:
        cluster = int(self.labels[index])
        if self.cfg.noise_label is not None and cluster == self.cfg.noise_label:
            return
        self._bump(cluster)


@dataclass
class CorpusPrior:
    """Per-cluster rarity weights from the corpus-level size spectrum.

    The probability mass of a size-s cluster is p(s) = s*/N with
    s* = (s+1) g_hat(s+1) / g_hat(s) (fallback s* = s when either bin is
    empty); each cluster gets weight 1/(p(n_u) + eps), normalized to mean 1
    over the non-ignored clusters.
    """

    weights: dict[int, float]
    sizes: dict[int, int]
    spectrum: dict[int, int]
    smoothed: dict[int, float]
    s_star: dict[int, float]
    mass: dict[int, float]  # size -> p(size)
    eps: float
    n_examples: int
    noise_label: int | None = None
    _log_weights: dict[int, float] = field(default_factory=dict, repr=False)

    def log_weight(self, cluster: int) -> float:
        lw = self._log_weights.get(cluster)
        if lw is None:
            lw = math.log(self.weights[cluster])
            self._log_weights[cluster] = lw
        return lw


def corpus_prior(
    labels: np.ndarray,
    smoothing: str = "power_law",
    eps: float = 1e-6,
    noise_label: int | None = None,
) -> CorpusPrior:
    """Rarity prior over clusters; smoothing defaults to the power-law fit
    (raw spectrum fallback when it has fewer than two nonzero bins)."""
    if smoothing not in _SMOOTHING_MODES:
        raise ValueError(f"smoothing must be one of {_SMOOTHING_MODES}")
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    lab = np.asarray(labels)
    sizes: dict[int, int] = {}
    for value in lab:
        v = int(value)
        if noise_label is not None and v == noise_label:
            continue
        sizes[v] = sizes.get(v, 0) + 1
    n_examples = sum(sizes.values())
    spectrum: dict[int, int] = {}
    for s in sizes.values():
        spectrum[s] = spectrum.get(s, 0) + 1
    max_size = max(spectrum) if spectrum else 0

    fit = _power_law_fit({s: float(f) for s, f in spectrum.items()}, max_size) \
        if smoothing == "power_law" else None
    smoothed: dict[int, float] = {}
    for s in range(1, max_size + 2):
        if fit is not None:
            value = math.exp(fit[0] + fit[1] * math.log(s))
            smoothed[s] = value if math.isfinite(value) and value > 0 else 0.0
        else:
            smoothed[s] = float(spectrum.get(s, 0))

    s_star: dict[int, float] = {}
    mass: dict[int, float] = {}
    for s in sorted(set(sizes.values())):
        g_s, g_next = smoothed.get(s, 0.0), smoothed.get(s + 1, 0.0)
        star = (s + 1) * g_next / g_s if g_s > 0 and g_next > 0 else float(s)
        s_star[s] = star
        mass[s] = star / n_examples if n_examples else 0.0

    raw = {u: 1.0 / (mass[s] + eps) for u, s in sizes.items()}
    scale = (sum(raw.values()) / len(raw)) if raw else 1.0
    weights = {u: w / scale for u, w in raw.items()}
    return CorpusPrior(
        weights=weights,
        sizes=sizes,
        spectrum=spectrum,
        smoothed=smoothed,
        s_star=s_star,
        mass=mass,
        eps=eps,
        n_examples=n_examples,
        noise_label=noise_label,
    )
