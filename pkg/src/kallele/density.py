"""Stationary densities, importance pools, scores and the singular composition.

The selected stationary density is the neutral Dirichlet tilted by
``exp(-x' S x)`` and renormalized by the neutral expectation
``E[exp(-X' S X)]``.  That expectation has no usable closed form, so every
quantity that needs it (normalizer, mean homozygosity under selection,
homozygosity CDF, likelihood, scores) is estimated by self-normalized
importance sampling on an immutable ``WeightedPool`` of Dirichlet proposal
draws.  Because one pool serves all selection intensities, the estimated
curves are smooth and exactly monotone in sigma for a fixed seed, which is
what makes the root-finders in the inference layer deterministic and
bracketing-safe.

All weight arithmetic is carried in log space with max-shift before
exponentiation: the tilt exp(-sigma * h) spans hundreds of orders of
magnitude at the intensities this package is asked to explore.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import (
    Homozygosity,
    MutationParams,
    SelectionModel,
    SimplexPoint,
    derive_rng,
    quadratic_form,
)

__all__ = [
    "WeightedPool",
    "EssReport",
    "OptimalComposition",
    "PoolReliabilityWarning",
    "neutral_log_density",
    "build_pool",
    "build_mixture_pool",
    "pool_for_sigma_range",
    "log_normalizer",
    "log_normalizer_se",
    "log_likelihood",
    "g_sigma",
    "g_sigma_se",
    "score_sigma",
    "score_general",
    "cdf_homozygosity",
    "optimal_composition",
    "weighted_quantile",
    "save_pool_jsonl",
    "load_pool_jsonl",
    "DEFAULT_ESS_FLOOR",
    "MIXTURE_SIGMA_THRESHOLD",
    "DEFENSIVE_CONCENTRATIONS",
]

DEFAULT_ESS_FLOOR = 200.0

# Beyond this sigma a single proposal at a = theta/k starves; a defensive
# mixture of concentrations keeps draws in the near-centroid region the
# tilted target concentrates on.
MIXTURE_SIGMA_THRESHOLD = 200.0
DEFENSIVE_CONCENTRATIONS = (2.0, 8.0)
# Below this (negative) sigma the dominant region flips to near-vertex
# populations; a sub-1 concentration supplies them.
NEGATIVE_MIXTURE_THRESHOLD = 30.0
VERTEX_CONCENTRATION = 0.4

_CHUNK = 1 << 14


class PoolReliabilityWarning(UserWarning):
    """A pool-based estimate fell below its effective-sample-size floor."""


@dataclass(frozen=True)
class EssReport:
    """Reliability diagnostic for one importance-weighted estimate.

    ``ess`` is (sum w)^2 / sum w^2, between 1 (one draw dominates) and n
    (uniform weights).
    """

    ess: float
    n: int
    min_weight_fraction: float
    max_weight_fraction: float
    floor: float = DEFAULT_ESS_FLOOR

    @property
    def below_floor(self) -> bool:
        return self.ess < self.floor


@dataclass(frozen=True, eq=False)
class OptimalComposition:
    """Minimizer of the selection quadratic form over the closed simplex.

    This is the composition carrying the strongest possible signal for the
    given selection scheme; the likelihood in the intensity parameters is
    unbounded there.  ``boundary`` flags a minimizer with (numerically) zero
    entries, which lies outside the interior support of the density but is
    still the correct signal-maximizing limit.
    """

    point: np.ndarray
    value: float
    boundary: bool


@dataclass(frozen=True, eq=False)
class WeightedPool:
    """An immutable set of Dirichlet proposal draws with reusable weights.

    Per draw we keep the homozygosity ``h``, the log-frequency sum ``s``
    (the sufficient statistic for reweighting to any symmetric mutation
    rate), the base log-weight ``b`` = log(neutral density / proposal
    density), and the proposal log-density itself.  Draw vectors are kept
    only when requested; scalar-overdominance queries never need them.

    Construction uses fixed-size per-chunk substreams derived from the seed,
    so contents are identical however the chunks are scheduled.  All query
    operations are pure; a pool can be shared freely across threads.
    """

    h: np.ndarray
    s: np.ndarray
    b: np.ndarray
    proposal_log_density: np.ndarray
    draws: np.ndarray | None
    theta: MutationParams
    concentrations: tuple[float, ...]
    component_counts: tuple[int, ...]
    seed: int
    n: int
    k: int
    h_min: float
    h_max: float

    @property
    def proposal_a(self) -> float:
        if len(self.concentrations) != 1:
            raise ValueError("mixture pool has no single proposal concentration")
        return self.concentrations[0]

    def base_log_weights_for(self, theta: MutationParams) -> np.ndarray:
        """Base log-weights targeting another mutation parameter.

        Symmetric targets need only the stored sufficient statistic; general
        per-allele targets need the retained draws.
        """
        if theta == self.theta:
            return self.b
        if theta.k != self.k:
            raise ValueError(f"pool has k={self.k}, target has k={theta.k}")
        if theta.mode == "symmetric":
            a = theta.total / theta.k
            const = gammaln(theta.total) - theta.k * gammaln(a)
            return const + (a - 1.0) * self.s - self.proposal_log_density
        if self.draws is None:
            raise ValueError("general per-allele reweighting requires a pool built with keep_draws=True")
        alphas = theta.alphas()
        const = gammaln(alphas.sum()) - gammaln(alphas).sum()
        return const + np.log(self.draws) @ (alphas - 1.0) - self.proposal_log_density

    def support_margin(self, min_support: int = 10) -> tuple[float, float]:
        """Width of the pool's lowest/highest ``min_support`` homozygosities.

        Estimates inside these fringes hang on a handful of draws; the MLE
        solver classifies them as unbounded rather than reporting a number.
        """
        j = min(max(int(min_support), 1), self.n) - 1
        part = np.partition(self.h, (j, self.n - 1 - j))
        return float(part[j] - self.h_min), float(self.h_max - part[self.n - 1 - j])


def _dirichlet_logconst(alphas: np.ndarray) -> float:
    return float(gammaln(alphas.sum()) - gammaln(alphas).sum())


def neutral_log_density(x: SimplexPoint, theta: MutationParams) -> float:
    """Log of the neutral Dirichlet stationary density at an interior point."""
    if theta.k != x.k:
        raise ValueError(f"mutation parameters have k={theta.k}, data has k={x.k}")
    alphas = theta.alphas()
    logx = np.log(x.as_array())
    return _dirichlet_logconst(alphas) + float((alphas - 1.0) @ logx)


def _draw_component(a: float, count: int, k: int, seed: int, component: int) -> np.ndarray:
    """Dirichlet(a, ..., a) draws in fixed chunks of per-chunk substreams."""
    out = np.empty((count, k), dtype=np.float64)
    pos = 0
    chunk_index = 0
    while pos < count:
        size = min(_CHUNK, count - pos)
        rng = derive_rng(seed, component, chunk_index)
        g = rng.gamma(a, size=(size, k))
        x = g / g.sum(axis=1, keepdims=True)
        # Underflow to an exact zero coordinate is astronomically rare for
        # a >= 0.05 but would poison the log-space bookkeeping; redraw.
        bad = (x <= 0.0).any(axis=1)
        while bad.any():
            g2 = rng.gamma(a, size=(int(bad.sum()), k))
            x[bad] = g2 / g2.sum(axis=1, keepdims=True)
            bad = (x <= 0.0).any(axis=1)
        out[pos : pos + size] = x
        pos += size
        chunk_index += 1
    return out


def _build(
    theta: MutationParams,
    concentrations: tuple[float, ...],
    n: int,
    seed: int,
    keep_draws: bool,
) -> WeightedPool:
    if n < 1:
        raise ValueError("pool size must be at least 1")
    k = theta.k
    m = len(concentrations)
    counts = [n // m + (1 if i < n % m else 0) for i in range(m)]
    hs, ss, plds, blocks = [], [], [], []
    for ci, (a, count) in enumerate(zip(concentrations, counts)):
        if a <= 0:
            raise ValueError("proposal concentrations must be positive")
        if count == 0:
            continue
        x = _draw_component(float(a), count, k, seed, ci)
        hs.append(np.einsum("ij,ij->i", x, x))
        ss.append(np.log(x).sum(axis=1))
        blocks.append(x)
    h = np.concatenate(hs)
    s = np.concatenate(ss)
    draws = np.concatenate(blocks) if keep_draws else None

    if m == 1:
        a = float(concentrations[0])
        pld = _dirichlet_logconst(np.full(k, a)) + (a - 1.0) * s
    else:
        parts = np.empty((m, n), dtype=np.float64)
        for ci, (a, count) in enumerate(zip(concentrations, counts)):
            const = _dirichlet_logconst(np.full(k, float(a)))
            parts[ci] = math.log(count / n) + const + (float(a) - 1.0) * s
        pld = logsumexp(parts, axis=0)

    symmetric_match = (
        m == 1 and theta.mode == "symmetric" and concentrations[0] == theta.total / theta.k
    )
    if symmetric_match:
        b = np.zeros(n, dtype=np.float64)
    elif theta.mode == "symmetric":
        a_t = theta.total / theta.k
        b = gammaln(theta.total) - k * gammaln(a_t) + (a_t - 1.0) * s - pld
    else:
        alphas = theta.alphas()
        logx = np.log(np.concatenate(blocks)) if draws is None else np.log(draws)
        b = _dirichlet_logconst(alphas) + logx @ (alphas - 1.0) - pld
    if not np.all(np.isfinite(b)):
        raise FloatingPointError("non-finite base log-weight in pool construction")

    return WeightedPool(
        h=h,
        s=s,
        b=b,
        proposal_log_density=pld,
        draws=draws,
        theta=theta,
        concentrations=tuple(float(a) for a in concentrations),
        component_counts=tuple(counts),
        seed=int(seed),
        n=int(n),
        k=k,
        h_min=float(h.min()),
        h_max=float(h.max()),
    )


def build_pool(
    theta: MutationParams,
    proposal_a: float | None = None,
    n: int = 100_000,
    seed: int = 0,
    keep_draws: bool = True,
) -> WeightedPool:
    """Build a single-concentration pool.

    The default proposal concentration is the mean per-allele rate, which
    for symmetric mutation makes every base log-weight exactly zero.
    """
    if proposal_a is None:
        proposal_a = theta.total / theta.k
    return _build(theta, (float(proposal_a),), n, seed, keep_draws)


def build_mixture_pool(
    theta: MutationParams,
    concentrations: tuple[float, ...],
    n: int = 100_000,
    seed: int = 0,
    keep_draws: bool = True,
) -> WeightedPool:
    """Build a defensive-mixture pool, combined by mixture importance weighting.

    Draws are split evenly over the concentrations and weighted against the
    full mixture proposal density, so a single pool stays usable across the
    whole intensity range its components jointly cover.
    """
    if len(concentrations) < 1:
        raise ValueError("need at least one concentration")
    return _build(theta, tuple(float(a) for a in concentrations), n, seed, keep_draws)


def pool_for_sigma_range(
    theta: MutationParams,
    n: int,
    seed: int,
    sigma_lo: float = 0.0,
    sigma_hi: float = 0.0,
    keep_draws: bool = False,
) -> WeightedPool:
    """Pool sized to the intensity range a caller intends to query.

    Inside the mixture thresholds a plain pool at a = theta/k suffices.
    Strong heterozygote advantage (large positive sigma) concentrates the
    target near the centroid, so high concentrations are mixed in; strong
    homozygote advantage (sigma well below zero) concentrates it near the
    vertices, which a sub-1 concentration supplies.
    """
    if sigma_lo > sigma_hi:
        raise ValueError("sigma_lo must not exceed sigma_hi")
    base = theta.total / theta.k
    concs = [base]
    if sigma_hi > MIXTURE_SIGMA_THRESHOLD:
        concs.extend(a for a in DEFENSIVE_CONCENTRATIONS if a not in concs)
    if sigma_lo < -NEGATIVE_MIXTURE_THRESHOLD and VERTEX_CONCENTRATION not in concs:
        concs.append(VERTEX_CONCENTRATION)
    if len(concs) == 1:
        return build_pool(theta, base, n, seed, keep_draws)
    return build_mixture_pool(theta, tuple(concs), n, seed, keep_draws)


def _selection_log_weights(pool: WeightedPool, model: SelectionModel, b: np.ndarray | None = None) -> np.ndarray:
    base = pool.b if b is None else b
    if model.mode == "symmetric":
        return base - float(model.sigma) * pool.h
    m = model.matrix_array(pool.k)
    if pool.draws is None:
        raise ValueError("general-matrix queries require a pool built with keep_draws=True")
    q = np.einsum("ij,jl,il->i", pool.draws, m, pool.draws)
    return base - q


def _ess_report(lw: np.ndarray, floor: float) -> EssReport:
    lse = float(logsumexp(lw))
    lse2 = float(logsumexp(2.0 * lw))
    ess = min(max(math.exp(2.0 * lse - lse2), 1.0), float(lw.size))
    return EssReport(
        ess=ess,
        n=lw.size,
        min_weight_fraction=math.exp(float(lw.min()) - lse),
        max_weight_fraction=math.exp(float(lw.max()) - lse),
        floor=floor,
    )


def log_normalizer(
    pool: WeightedPool,
    model: SelectionModel,
    ess_floor: float = DEFAULT_ESS_FLOOR,
) -> tuple[float, EssReport]:
    """Self-normalized estimate of log E[exp(-X' S X)] under the neutral law.

    Exactly zero for sigma = 0.  A report below the ESS floor flags the
    estimate as unreliable without failing.
    """
    lw = _selection_log_weights(pool, model)
    value = float(logsumexp(lw) - logsumexp(pool.b))
    return value, _ess_report(lw, ess_floor)


def log_normalizer_se(pool: WeightedPool, model: SelectionModel) -> float:
    """Delta-method standard error of the log-normalizer estimate."""
    lw = _selection_log_weights(pool, model)
    u = np.exp(lw - lw.max())
    v = np.exp(pool.b - pool.b.max())
    du = u / u.sum() - v / v.sum()
    return float(np.sqrt((du * du).sum()))


def log_likelihood(
    x: SimplexPoint,
    theta: MutationParams,
    model: SelectionModel,
    pool: WeightedPool,
) -> float:
    """Log of the selected stationary density at the observed frequencies.

    The pool may target a different mutation parameter; it is reweighted
    through its base weights.
    """
    if x.k != theta.k or x.k != pool.k:
        raise ValueError("dimension mismatch between data, mutation parameters and pool")
    b = pool.base_log_weights_for(theta)
    lw = _selection_log_weights(pool, model, b=b)
    lz = float(logsumexp(lw) - logsumexp(b))
    return -quadratic_form(x, model) - lz + neutral_log_density(x, theta)


def _normalized_weights(pool: WeightedPool, sigma: float, b: np.ndarray | None = None) -> np.ndarray:
    lw = (pool.b if b is None else b) - float(sigma) * pool.h
    w = np.exp(lw - lw.max())
    return w / w.sum()


def g_sigma(
    pool: WeightedPool,
    sigma: float,
    b: np.ndarray | None = None,
    ess_floor: float | None = None,
) -> float:
    """Mean homozygosity under selection intensity sigma, on a fixed pool.

    For a fixed pool this empirical curve is exactly non-increasing in
    sigma: its derivative is minus a weighted variance.  Pass ``ess_floor``
    to opt into a reliability warning at extreme intensities.
    """
    lw = (pool.b if b is None else b) - float(sigma) * pool.h
    w = np.exp(lw - lw.max())
    if ess_floor is not None:
        ws = w.sum()
        ess = ws * ws / (w * w).sum()
        if ess < ess_floor:
            warnings.warn(
                f"g_sigma at sigma={sigma:g}: ESS {ess:.1f} below floor {ess_floor:g}",
                PoolReliabilityWarning,
                stacklevel=2,
            )
    return float((w @ pool.h) / w.sum())


def g_sigma_se(pool: WeightedPool, sigma: float, b: np.ndarray | None = None) -> float:
    """Delta-method standard error of the g_sigma estimate."""
    w = _normalized_weights(pool, sigma, b)
    g = float(w @ pool.h)
    d = w * (pool.h - g)
    return float(np.sqrt((d * d).sum()))


def score_sigma(
    h: Homozygosity,
    pool: WeightedPool,
    sigma: float,
    b: np.ndarray | None = None,
) -> float:
    """Derivative of the log-likelihood in sigma: -h + E[H | sigma]."""
    return -h.value + g_sigma(pool, sigma, b=b)


def score_general(x: SimplexPoint, pool: WeightedPool, model: SelectionModel) -> np.ndarray:
    """Matrix of log-likelihood derivatives in the intensity entries.

    Entry (i, j) is the pool estimate of E[X_i X_j | S] minus x_i x_j.
    Requires retained draws.
    """
    if pool.draws is None:
        raise ValueError("score_general requires a pool built with keep_draws=True")
    if x.k != pool.k:
        raise ValueError("dimension mismatch")
    lw = _selection_log_weights(pool, model)
    w = np.exp(lw - lw.max())
    w /= w.sum()
    second = (pool.draws * w[:, None]).T @ pool.draws
    v = x.as_array()
    return second - np.outer(v, v)


def cdf_homozygosity(
    pool: WeightedPool,
    sigma: float,
    h: Homozygosity,
    b: np.ndarray | None = None,
) -> float:
    """P(H <= h) under selection intensity sigma, on a fixed pool.

    For fixed h the empirical map sigma -> F is exactly non-decreasing:
    stronger heterozygote advantage pushes homozygosity down.
    """
    w = _normalized_weights(pool, sigma, b)
    return float(w[pool.h <= h.value].sum())


def weighted_quantile(values: np.ndarray, weights: np.ndarray, q) -> np.ndarray:
    """Quantiles of a weighted empirical distribution (left-continuous)."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    cw /= cw[-1]
    qs = np.atleast_1d(np.asarray(q, dtype=np.float64))
    idx = np.searchsorted(cw, qs, side="left")
    return v[np.clip(idx, 0, v.size - 1)]


def _project_to_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the closed probability simplex."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, y.size + 1)
    cond = u + (1.0 - css) / idx > 0
    rho = int(np.nonzero(cond)[0][-1])
    lam = (1.0 - css[rho]) / (rho + 1)
    return np.maximum(y + lam, 0.0)


def optimal_composition(
    model: SelectionModel,
    k: int,
    seed: int = 0,
    n_random_starts: int = 10,
    max_iter: int = 10_000,
    grad_tol: float = 1e-10,
) -> OptimalComposition:
    """Minimize x' S x over the closed simplex by multi-start projected gradient.

    Starts from the centroid, every vertex, and random interior points: the
    quadratic form need not be convex on the simplex for a general symmetric
    matrix, and the centroid is a stationary point of the scalar model in
    both sign regimes.
    """
    m = model.matrix_array(k)
    if model.mode == "matrix" and m.shape[0] != k:
        raise ValueError("matrix dimension does not match k")

    def objective(x: np.ndarray) -> float:
        return float(x @ m @ x)

    scale = float(np.linalg.norm(m, 2))
    t0 = 1.0 if scale == 0.0 else 1.0 / (2.0 * scale)

    starts = [np.full(k, 1.0 / k)]
    starts.extend(np.eye(k))
    rng = derive_rng(seed, 97)
    for _ in range(n_random_starts):
        g = rng.gamma(1.0, size=k)
        starts.append(g / g.sum())

    best_x, best_val = None, math.inf
    for x0 in starts:
        x = x0.astype(np.float64).copy()
        fx = objective(x)
        for _ in range(max_iter):
            grad = 2.0 * (m @ x)
            z = _project_to_simplex(x - t0 * grad)
            step = z - x
            pg_norm = float(np.linalg.norm(step)) / t0
            if pg_norm < grad_tol:
                break
            t = 1.0
            fz = objective(x + step)
            while fz > fx and t > 1e-16:
                t *= 0.5
                fz = objective(x + t * step)
            if fz > fx:
                break
            x = x + t * step
            fx = fz
        if fx < best_val:
            best_val, best_x = fx, x

    boundary = bool(best_x.min() < 1e-9)
    return OptimalComposition(point=best_x, value=best_val, boundary=boundary)


def save_pool_jsonl(pool: WeightedPool, path: str) -> None:
    """Persist a pool to portable JSON lines (header, then one draw per line)."""
    if pool.draws is None:
        raise ValueError("pool was built without draws; persistence requires them")
    header = {
        "kind": "weighted-pool",
        "version": 1,
        "n": pool.n,
        "k": pool.k,
        "seed": pool.seed,
        "theta": {"mode": pool.theta.mode, "thetas": list(pool.theta.thetas), "theta": pool.theta.theta},
        "concentrations": list(pool.concentrations),
        "component_counts": list(pool.component_counts),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for i in range(pool.n):
            row = {
                "x": [float(v) for v in pool.draws[i]],
                "h": float(pool.h[i]),
                "b": float(pool.b[i]),
                "s": float(pool.s[i]),
                "q": float(pool.proposal_log_density[i]),
            }
            fh.write(json.dumps(row) + "\n")


def load_pool_jsonl(path: str) -> WeightedPool:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "weighted-pool":
            raise ValueError(f"{path}: not a weighted-pool file")
        n, k = int(header["n"]), int(header["k"])
        draws = np.empty((n, k), dtype=np.float64)
        h = np.empty(n)
        b = np.empty(n)
        s = np.empty(n)
        pld = np.empty(n)
        for i in range(n):
            row = json.loads(fh.readline())
            draws[i] = row["x"]
            h[i], b[i], s[i], pld[i] = row["h"], row["b"], row["s"], row["q"]
    td = header["theta"]
    if td["mode"] == "symmetric":
        theta = MutationParams.symmetric(td["theta"], k)
    else:
        theta = MutationParams.general(td["thetas"])
    return WeightedPool(
        h=h,
        s=s,
        b=b,
        proposal_log_density=pld,
        draws=draws,
        theta=theta,
        concentrations=tuple(header["concentrations"]),
        component_counts=tuple(header["component_counts"]),
        seed=int(header["seed"]),
        n=n,
        k=k,
        h_min=float(h.min()),
        h_max=float(h.max()),
    )
