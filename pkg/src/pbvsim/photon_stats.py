"""
Photon-count statistics of the single-shot readout sequence.

A repeat starts in the bright spin state. During the readout window the
spin is optically depumped after an exponential waiting time; photons are
Poisson with the bright rate up to that time plus background. The dark
window continues the same trajectory: only repeats still bright after the
readout contribute signal.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate, stats

from .errors import InvalidInputError, TailMassError

BLOCK_SIZE = 4096


@dataclass(frozen=True)
class SsrConfig:
    init_duration: float = 150e-6
    readout_duration: float = 300e-6
    dark_duration: float = 300e-6
    gaps: float = 10e-6
    n_repeats: int = 10_000
    detected_rate: float = 2e4
    flip_rate_readout: float = 5e3
    background_rate: float = 1e3
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("init_duration", "readout_duration", "dark_duration", "gaps"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        for name in ("detected_rate", "flip_rate_readout", "background_rate"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be nonnegative")
        if self.n_repeats < 1:
            raise InvalidInputError("n_repeats must be positive")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise InvalidInputError("rng_seed must be a 64-bit unsigned integer")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CountHistogram:
    counts: dict
    n_total: int
    mean: float

    @classmethod
    def from_samples(cls, samples) -> "CountHistogram":
        samples = np.asarray(samples, dtype=np.int64)
        if samples.size == 0:
            return cls({}, 0, 0.0)
        values, occ = np.unique(samples, return_counts=True)
        counts = {int(v): int(o) for v, o in zip(values, occ)}
        return cls(counts, int(samples.size), float(samples.mean()))

    @property
    def max_count(self) -> int:
        return max(self.counts) if self.counts else 0

    def as_array(self, n_max=None) -> np.ndarray:
        n_max = self.max_count if n_max is None else n_max
        out = np.zeros(n_max + 1)
        for k, v in self.counts.items():
            if k <= n_max:
                out[k] = v
        return out

    def fraction_below(self, threshold: int) -> float:
        return sum(v for k, v in self.counts.items() if k < threshold) / self.n_total


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent Philox stream ``index`` derived from ``seed``."""
    return np.random.Generator(np.random.Philox(key=seed).jumped(index))


def _simulate_block(cfg: SsrConfig, block: int, n: int):
    rng = substream(cfg.rng_seed, block)
    w_r, w_d = cfg.readout_duration, cfg.dark_duration
    if cfg.flip_rate_readout > 0:
        tau = rng.exponential(1.0 / cfg.flip_rate_readout, size=n)
    else:
        tau = np.full(n, np.inf)
    bright_r = np.minimum(tau, w_r)
    bright_d = np.clip(tau - w_r, 0.0, w_d)
    readout = rng.poisson(cfg.detected_rate * bright_r + cfg.background_rate * w_r)
    dark = rng.poisson(cfg.detected_rate * bright_d + cfg.background_rate * w_d)
    return readout, dark


def simulate_ssr_run(cfg: SsrConfig, workers: int = 1):
    """Monte Carlo readout and dark photon counts, one entry per repeat.

    Repeats are grouped in fixed blocks of ``BLOCK_SIZE``; block ``b`` draws
    from substream ``b`` of the seed, so the output does not depend on
    ``workers``.
    """
    n_blocks = -(-cfg.n_repeats // BLOCK_SIZE)
    sizes = [min(BLOCK_SIZE, cfg.n_repeats - b * BLOCK_SIZE) for b in range(n_blocks)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda b: _simulate_block(cfg, b, sizes[b]), range(n_blocks)))
    else:
        parts = [_simulate_block(cfg, b, sizes[b]) for b in range(n_blocks)]
    readout = np.concatenate([p[0] for p in parts])
    dark = np.concatenate([p[1] for p in parts])
    return readout, dark


def analytic_count_pmf(detected_rate, flip_rate, window, background_rate, n_max):
    """Photon-number distribution of one window by adaptive quadrature.

    ``pmf(n) = int_0^W k e^{-k t} Pois(n; d t + b W) dt
    + e^{-k W} Pois(n; (d + b) W)``.

    Raises
    ------
    TailMassError
        If more than 1e-9 of the probability lies above ``n_max``.
    """
    if window < 0 or n_max < 0:
        raise InvalidInputError("window and n_max must be nonnegative")
    d, k, b, w = detected_rate, flip_rate, background_rate, window
    ns = np.arange(n_max + 1)
    survive = math.exp(-k * w)
    pmf = survive * stats.poisson.pmf(ns, (d + b) * w)
    if k > 0 and w > 0:
        # u = 1 - exp(-k t) maps the flip-time density to a uniform one
        val, err = integrate.quad_vec(
            lambda u: stats.poisson.pmf(ns, -d * math.log1p(-u) / k + b * w),
            0.0, -math.expm1(-k * w), epsabs=1e-12, epsrel=1e-10, norm="max",
        )
        pmf += val
    tail = 1.0 - pmf.sum()
    if tail > 1e-9:
        raise TailMassError(f"tail mass {tail:.3g} above n_max={n_max}; increase n_max")
    return pmf


def analytic_dark_pmf(detected_rate, flip_rate, readout_window, dark_window,
                      background_rate, n_max):
    """Dark-window distribution: background plus repeats still bright."""
    still = math.exp(-flip_rate * readout_window)
    bright = analytic_count_pmf(detected_rate, flip_rate, dark_window, background_rate, n_max)
    bg = stats.poisson.pmf(np.arange(n_max + 1), background_rate * dark_window)
    return (1 - still) * bg + still * bright


def analytic_pmfs(cfg: SsrConfig, n_max: int | None = None):
    """(readout pmf, dark pmf) for ``cfg`` with an automatic support."""
    if n_max is None:
        lam = (cfg.detected_rate + cfg.background_rate) * max(cfg.readout_duration, cfg.dark_duration)
        n_max = int(lam + 12 * math.sqrt(lam + 1) + 30)
    ro = analytic_count_pmf(cfg.detected_rate, cfg.flip_rate_readout,
                            cfg.readout_duration, cfg.background_rate, n_max)
    dk = analytic_dark_pmf(cfg.detected_rate, cfg.flip_rate_readout, cfg.readout_duration,
                           cfg.dark_duration, cfg.background_rate, n_max)
    return ro, dk


def total_variation(hist: CountHistogram, pmf) -> float:
    pmf = np.asarray(pmf, dtype=float)
    n = max(hist.max_count, len(pmf) - 1)
    emp = hist.as_array(n) / hist.n_total
    ref = np.zeros(n + 1)
    ref[: len(pmf)] = pmf
    return 0.5 * float(np.abs(emp - ref).sum())


def classify_fidelity(readout: CountHistogram, dark: CountHistogram, threshold: int):
    """SSR fidelity with bright meaning ``counts >= threshold``.

    Returns
    -------
    f_ssr, e_r, e_d : float
    """
    if readout.n_total == 0 or dark.n_total == 0:
        raise InvalidInputError("histograms must be nonempty")
    e_r = readout.fraction_below(threshold)
    e_d = 1.0 - dark.fraction_below(threshold)
    return 1.0 - 0.5 * (e_r + e_d), e_r, e_d


def pmf_fidelity(readout_pmf, dark_pmf, threshold: int):
    """:func:`classify_fidelity` evaluated on probability mass functions."""
    e_r = float(np.sum(readout_pmf[:threshold]))
    e_d = 1.0 - float(np.sum(dark_pmf[:threshold]))
    return 1.0 - 0.5 * (e_r + e_d), e_r, e_d


def optimal_threshold(readout: CountHistogram, dark: CountHistogram):
    """Threshold in ``[0, max count + 1]`` maximizing the SSR fidelity.

    Ties go to the smallest threshold.
    """
    top = max(readout.max_count, dark.max_count) + 1
    best_t, best_f = 0, -1.0
    for t in range(top + 1):
        f = classify_fidelity(readout, dark, t)[0]
        if f > best_f:
            best_t, best_f = t, f
    return best_t, best_f


def ssr_summary(cfg: SsrConfig, threshold: int = 1, workers: int = 1) -> dict:
    readout, dark = simulate_ssr_run(cfg, workers)
    h_r, h_d = CountHistogram.from_samples(readout), CountHistogram.from_samples(dark)
    f, e_r, e_d = classify_fidelity(h_r, h_d, threshold)
    t_opt, f_opt = optimal_threshold(h_r, h_d)
    return {
        "readout": h_r,
        "dark": h_d,
        "mean_readout": h_r.mean,
        "mean_dark": h_d.mean,
        "threshold": threshold,
        "f_ssr": f,
        "e_r": e_r,
        "e_d": e_d,
        "optimal_threshold": t_opt,
        "optimal_f_ssr": f_opt,
    }
