"""Monte Carlo experiments around ``W = |Tr U|^2`` for Haar ``U`` in U(n).

Random streams: every experiment splits its work into fixed-size chunks and
chunk ``i`` draws from ``default_rng(SeedSequence([seed, i]))``.  Results are
concatenated in chunk order, so output depends on ``seed`` only, never on how
many workers process the chunks.
"""

from __future__ import annotations

import itertools
import json
import math
from bisect import bisect_left
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats as sps

from .stein_core import PairStats, kolmogorov_bound, optimize_delta
from .unitary import DiffusionStep, abs_trace_sq, haar_batch, heat_step, trace_power

SCHEMA_VERSION = 1
DKW_ALPHA = 0.01
MAIN2_MIN_N = 8


class HypothesisError(ValueError):
    """The requested configuration is outside the theorem's hypotheses."""


def main2_bound(n: int) -> float:
    """``2^{9/4} / sqrt(n)``."""
    return 2.0**2.25 / math.sqrt(n)


# --------------------------------------------------------------------------
# streams


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chunk)]))


def map_chunks(fn: Callable, count: int, chunk_size: int, seed: int, workers: int = 1) -> list:
    """Apply ``fn(rng, size)`` to each chunk, results in chunk order."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    sizes = [min(chunk_size, count - s) for s in range(0, count, chunk_size)]
    jobs = [(i, size) for i, size in enumerate(sizes)]

    def run(job):
        i, size = job
        return fn(chunk_rng(seed, i), size)

    if workers <= 1 or len(jobs) == 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))


def _chunk_size_for(n: int, budget: int = 1 << 16) -> int:
    # keeps a chunk's matrix stack around budget * 16 bytes
    return max(16, budget // (n * n))


# --------------------------------------------------------------------------
# samples and Kolmogorov distance


@dataclass(frozen=True)
class SampleBatch:
    values: np.ndarray
    n: int
    seed: int
    count: int

    def __post_init__(self):
        if len(self.values) != self.count:
            raise ValueError("count does not match the number of values")
        if np.any(self.values < 0):
            raise ValueError("W samples must be non-negative")

    def to_csv(self) -> str:
        return "".join(f"{v!r}\n" for v in self.values.tolist())


def sample_w(n: int, count: int, seed: int, workers: int = 1, power: int = 1) -> SampleBatch:
    """``count`` independent draws of ``|Tr U|^2`` (or ``|Tr U^k|^2 / k`` when ``power=k``)."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    if power < 1:
        raise ValueError(f"power must be >= 1, got {power}")

    def chunk(rng, size):
        U = haar_batch(n, size, rng)
        if power == 1:
            return abs_trace_sq(U)
        return np.abs(trace_power(U, power)) ** 2 / power

    vals = np.concatenate(map_chunks(chunk, count, _chunk_size_for(n), seed, workers))
    return SampleBatch(vals, n, seed, count)


def exp_quantile(u):
    """Inverse CDF of Exp(1): ``-log(1 - u)``."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("quantile level must lie in (0, 1)")
    out = -np.log1p(-u)
    return float(out) if out.ndim == 0 else out


def exp_samples(count: int, seed: int) -> np.ndarray:
    """Exp(1) draws by inverse CDF."""
    u = np.random.default_rng(seed).random(count)
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return exp_quantile(u)


def estimate_dk(batch) -> float:
    """Exact sup distance between the empirical CDF of ``batch`` and ``1 - e^{-x}``."""
    x = np.sort(np.asarray(batch.values if isinstance(batch, SampleBatch) else batch, dtype=float))
    N = x.size
    if N == 0:
        raise ValueError("cannot estimate a distance from an empty batch")
    F = -np.expm1(-np.maximum(x, 0.0))
    i = np.arange(1, N + 1)
    return float(max(np.max(np.abs(i / N - F)), np.max(np.abs((i - 1) / N - F))))


def dkw_radius(count: int, alpha: float = DKW_ALPHA) -> float:
    """DKW band half-width: ``sqrt(log(2/alpha) / (2N))``."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * count))


# --------------------------------------------------------------------------
# Haar checks


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf


def haar_moment_check(n: int, count: int, seed: int, workers: int = 1, k_sigma: float = 4.0) -> dict:
    """Sample mean and second moment of ``W`` against the exact values 1 and 2."""
    w = sample_w(n, count, seed, workers).values
    m1, se1 = _mean_se(w)
    m2, se2 = _mean_se(w**2)
    return {
        "mean": m1,
        "mean_se": se1,
        "second_moment": m2,
        "second_moment_se": se2,
        "pass": abs(m1 - 1) <= k_sigma * se1 and abs(m2 - 2) <= k_sigma * se2,
    }


def invariance_check(n: int, count: int, seed: int, alpha: float = 0.01, V: Optional[np.ndarray] = None) -> dict:
    """Two-sample KS test of ``Re Tr(VU)`` against ``Re Tr(U)`` for independent Haar ``U``.

    ``V`` defaults to a fixed non-diagonal unitary (a rotation in the first
    two coordinates composed with a diagonal phase).
    """
    if V is None:
        V = np.eye(n, dtype=complex)
        c, s = math.cos(0.7), math.sin(0.7)
        if n >= 2:
            V[:2, :2] = [[c, -s], [s, c]]
        V = V @ np.diag(np.exp(1j * np.linspace(0.3, 2.1, n)))
    left = np.concatenate(
        map_chunks(lambda rng, k: np.trace(V @ haar_batch(n, k, rng), axis1=-2, axis2=-1).real, count, 4096, seed)
    )
    right = np.concatenate(
        map_chunks(lambda rng, k: np.trace(haar_batch(n, k, rng), axis1=-2, axis2=-1).real, count, 4096, seed + 1)
    )
    res = sps.ks_2samp(left, right)
    m = count
    critical = math.sqrt(-math.log(alpha / 2) * 0.5) * math.sqrt(2 * m / (m * m))
    return {"ks_statistic": float(res.statistic), "p_value": float(res.pvalue), "critical": critical,
            "pass": bool(res.statistic <= critical)}


# --------------------------------------------------------------------------
# exchangeable pairs


def _pair_chunk(n: int, step: DiffusionStep):
    def chunk(rng, size):
        U = haar_batch(n, size, rng)
        w = abs_trace_sq(U)
        w2 = abs_trace_sq(heat_step(U, step, rng))
        return np.stack([w, w2])

    return chunk


def draw_pairs(n: int, t: float, count: int, seed: int, workers: int = 1, substeps: int = 1) -> tuple:
    """``count`` independent exchangeable pairs ``(W, W')``."""
    step = DiffusionStep(t, substeps)
    out = np.concatenate(map_chunks(_pair_chunk(n, step), count, _chunk_size_for(n), seed, workers), axis=1)
    return out[0], out[1]


def diffusion_calibration(n: int, t: float, count: int, seed: int, workers: int = 1) -> dict:
    """First three moments of ``W' - W`` for one diffusion step.

    The drift slope is the least-squares coefficient of ``W' - W`` on
    ``1 - W`` through the origin, weighted by ``1 / (W + n t)``.  The
    conditional variance of ``W' - W`` is ``4ntW`` to first order, with a
    floor of order ``(nt)^2`` where ``W`` is near 0; the weights follow that
    profile.  Plain ``1/W`` weights are unstable because ``E[1/W]`` is
    infinite, and the unweighted fit (also reported) has roughly three times
    the standard error.
    """
    w, w2 = draw_pairs(n, t, count, seed, workers)
    d = w2 - w
    x = 1.0 - w
    wt = 1.0 / (w + n * t)
    slope = float(np.sum(wt * x * d) / np.sum(wt * x * x))
    resid = d - slope * x
    slope_se = float(math.sqrt(np.sum(wt**2 * x**2 * resid**2)) / np.sum(wt * x * x))
    ols = float(x @ d / (x @ x))
    sq, sq_se = _mean_se(d**2)
    cube, cube_se = _mean_se(np.abs(d) ** 3)
    return {
        "t": t,
        "drift_slope": slope,
        "drift_slope_se": slope_se,
        "drift_slope_ols": ols,
        "second_moment": sq,
        "second_moment_se": sq_se,
        "third_abs": cube,
        "third_abs_se": cube_se,
    }


@dataclass(frozen=True)
class EmpiricalPairStats:
    """Monte Carlo estimates of the pair statistics, with standard errors.

    ``a = 2 n t`` is fixed, not estimated.
    """

    n: int
    t: float
    a: float
    t1: float
    mean_gap: float
    third_abs: float
    remainder_abs: float
    t1_se: float
    mean_gap_se: float
    third_abs_se: float
    remainder_abs_se: float
    count: int
    replicas: int

    def to_pair_stats(self) -> PairStats:
        return PairStats(self.a, self.t1, self.mean_gap, self.third_abs, self.remainder_abs)

    def as_dict(self) -> dict:
        return asdict(self)


def empirical_pair_stats(
    n: int,
    t: float,
    count: int,
    seed: int,
    replicas: int = 100,
    workers: int = 1,
    substeps: int = 1,
) -> EmpiricalPairStats:
    """Estimate the statistics entering the Kolmogorov bound.

    For each of ``count`` Haar draws ``U``, ``replicas`` independent diffusion
    steps from the same ``U`` estimate ``E[W' - W | U]`` and
    ``E[(W' - W)^2 | U]``.  Then ``R = E[W' - W | U] + a (W - 1)``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if replicas < 2:
        raise ValueError("need at least 2 inner replicas to estimate conditional moments")
    step = DiffusionStep(t, substeps)
    a = 2.0 * n * t

    def chunk(rng, size):
        U = haar_batch(n, size, rng)
        w = abs_trace_sq(U)
        rep = np.repeat(U, replicas, axis=0)
        d = abs_trace_sq(heat_step(rep, step, rng)).reshape(size, replicas) - w[:, None]
        return np.stack([w, d.mean(axis=1), (d**2).mean(axis=1), (np.abs(d) ** 3).mean(axis=1)])

    size = max(8, _chunk_size_for(n) // replicas)
    w, m1, m2, m3 = np.concatenate(map_chunks(chunk, count, size, seed, workers), axis=1)
    t1, t1_se = _mean_se(np.abs(w - m2 / (2 * a)))
    mw, mw_se = _mean_se(w)
    third, third_se = _mean_se(m3)
    rem, rem_se = _mean_se(np.abs(m1 + a * (w - 1)))
    return EmpiricalPairStats(n, t, a, t1, abs(mw - 1), third, rem, t1_se, mw_se, third_se, rem_se, count, replicas)


# --------------------------------------------------------------------------
# headline check


def t1_limit(n: int, count: int, seed: int, workers: int = 1) -> tuple[float, float]:
    """``lim_{t->0} E|W - E[(W'-W)^2|U]/(2a)|`` with its standard error.

    With the exact conditional second moment the quantity inside is
    ``(p_2 conj(p_1)^2 + conj(p_2) p_1^2) / (2n)``, so only Haar draws are needed.
    """

    def chunk(rng, size):
        U = haar_batch(n, size, rng)
        p1 = np.trace(U, axis1=-2, axis2=-1)
        p2 = trace_power(U, 2)
        return np.abs(2.0 * (p2 * np.conj(p1) ** 2).real) / (2.0 * n)

    return _mean_se(np.concatenate(map_chunks(chunk, count, _chunk_size_for(n), seed, workers)))


def verify_main2(n: int, count: int, seed: int, alpha: float = DKW_ALPHA, workers: int = 1) -> dict:
    """Empirical Kolmogorov distance of ``W`` to Exp(1) against ``2^{9/4}/sqrt(n)``.

    Passes when the empirical distance minus the DKW radius is below the
    bound, i.e. the data do not refute it at level ``alpha``.
    """
    if n < MAIN2_MIN_N:
        raise HypothesisError(f"the bound is stated for n >= {MAIN2_MIN_N}; got n = {n}")
    batch = sample_w(n, count, seed, workers)
    dk = estimate_dk(batch)
    radius = dkw_radius(count, alpha)
    bound = main2_bound(n)
    return {
        "d_k": dk,
        "dkw_radius": radius,
        "alpha": alpha,
        "bound": bound,
        "pass": dk - radius <= bound,
        "batch": batch,
    }


def pair_bound(stats: EmpiricalPairStats, delta: Optional[float] = None) -> dict:
    """Kolmogorov bound from empirical statistics, at ``delta`` or optimized."""
    ps = stats.to_pair_stats()
    if delta is None:
        delta, rep = optimize_delta(ps)
    else:
        rep = kolmogorov_bound(ps, delta)
    return rep.as_dict()


# --------------------------------------------------------------------------
# longest increasing subsequences


def lis_length(perm: Sequence[int]) -> int:
    """Length of the longest increasing subsequence (patience sorting)."""
    piles: list = []
    for x in perm:
        i = bisect_left(piles, x)
        if i == len(piles):
            piles.append(x)
        else:
            piles[i] = x
    return len(piles)


def lis_probability(n_perm: int, l: int) -> float:
    """``P(L_n <= l)`` for a uniform permutation of ``n_perm`` symbols, by enumeration."""
    perms = list(itertools.permutations(range(n_perm)))
    return sum(lis_length(p) <= l for p in perms) / len(perms)


MAX_BRUTE_FORCE = 4


def lis_cross_check(n_perm: int, l: int, count: int, seed: int, workers: int = 1, k_sigma: float = 4.0) -> dict:
    """Compare ``E_{U(l)} |Tr U|^{2 n_perm} / n_perm!`` with enumeration of permutations."""
    if not 1 <= n_perm <= MAX_BRUTE_FORCE:
        raise ValueError(f"n_perm must be between 1 and {MAX_BRUTE_FORCE}")
    if l < 1:
        raise ValueError("l must be >= 1")
    exact = lis_probability(n_perm, l)
    vals = sample_w(l, count, seed, workers).values ** n_perm / math.factorial(n_perm)
    est, se = _mean_se(vals)
    return {
        "n_perm": n_perm,
        "l": l,
        "brute_force": exact,
        "monte_carlo": est,
        "monte_carlo_se": se,
        "pass": abs(est - exact) <= k_sigma * se + 1e-12,
    }


# --------------------------------------------------------------------------
# reports


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def experiment_report(
    experiment: str,
    statistics: dict,
    passed: bool,
    n: Optional[int] = None,
    t: Optional[float] = None,
    count: Optional[int] = None,
    seed: Optional[int] = None,
    bound=None,
) -> str:
    """Deterministic JSON report (sorted keys, no timestamps)."""
    doc = {
        "schema": SCHEMA_VERSION,
        "experiment": experiment,
        "n": n,
        "t": t,
        "count": count,
        "seed": seed,
        "statistics": statistics,
        "bound": bound,
        "pass": bool(passed),
    }
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"
