"""Experiment drivers: MLE curves, sampling distributions, instability regions.

Each driver regenerates one of the package's reference analyses as a plain
CSV table plus a JSON sidecar carrying the full study specification, so a
replay with the same spec is byte-identical.  Plotting is left to external
tools.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .core import Homozygosity, MutationParams, SimplexPoint, parse_frequencies
from .density import (
    WeightedPool,
    cdf_homozygosity,
    pool_for_sigma_range,
    weighted_quantile,
)
from .inference import (
    BootstrapConfig,
    GSigmaTable,
    MleConfig,
    MleResult,
    PosteriorConfig,
    bootstrap,
    mle_sigma,
    posterior_sample,
    posterior_summary,
    _replicate_mles,
    _subseed,
)
from .sampler import SamplerConfig, _selection_arrays

__all__ = [
    "StudySpec",
    "StudySchemaError",
    "STUDY_KINDS",
    "mle_curve",
    "sampling_distribution",
    "instability_probability",
    "cdf_panel",
    "run_study",
]

STUDY_KINDS = (
    "mle_curve",
    "sampling_dist",
    "bootstrap_hist",
    "cdf_panel",
    "posterior_hist",
    "instability_prob",
)


class StudySchemaError(ValueError):
    def __init__(self, message: str, fields: list[str]):
        super().__init__(message)
        self.fields = fields


@dataclass(frozen=True)
class StudySpec:
    kind: str
    parameters: dict
    seed: int
    out: str

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise StudySchemaError(
                f"unknown study kind {self.kind!r}; expected one of {STUDY_KINDS}", ["kind"]
            )

    @classmethod
    def from_json(cls, path: str) -> "StudySpec":
        with open(path) as fh:
            obj = json.load(fh)
        missing = [f for f in ("kind", "parameters", "seed", "out") if f not in obj]
        if missing:
            raise StudySchemaError(f"study spec missing fields: {missing}", missing)
        return cls(
            kind=str(obj["kind"]),
            parameters=dict(obj["parameters"]),
            seed=int(obj["seed"]),
            out=str(obj["out"]),
        )


def mle_curve(
    k: int,
    theta: float,
    h_grid: list[float],
    pool: WeightedPool,
    config: MleConfig | None = None,
) -> list[dict]:
    """The conditional MLE as a function of observed homozygosity.

    On a shared pool the emitted curve is non-increasing in h, diverging as
    h falls to the 1/k floor.  Grid points at or below 1/k are rejected.
    """
    bad = [hv for hv in h_grid if hv <= 1.0 / k]
    if bad:
        raise ValueError(f"h grid points at or below 1/k={1.0 / k:.6g}: {bad}")
    if list(h_grid) != sorted(h_grid):
        raise ValueError("h grid must be sorted ascending")
    config = config or MleConfig()
    table = GSigmaTable(pool, config.sigma_cap)
    rows = []
    for hv in h_grid:
        res = mle_sigma(Homozygosity(value=float(hv), k=k), pool, config, table)
        rows.append({"h": float(hv), "sigma_hat": res.sigma_hat, "status": res.status})
    return rows


def sampling_distribution(
    theta: float,
    sigma: float,
    k: int,
    n_datasets: int,
    seed: int,
    pool_n: int = 100_000,
    mle_config: MleConfig | None = None,
    sampler_config: SamplerConfig | None = None,
) -> list[MleResult]:
    """Sampling distribution of the conditional MLE at a generator (theta, sigma).

    Simulates populations, re-estimates sigma on each; statuses preserved.
    """
    if n_datasets < 100:
        raise ValueError("need at least 100 simulated datasets")
    mle_config = mle_config or MleConfig()
    params = MutationParams.symmetric(theta, k)
    draws, _ = _selection_arrays(params, sigma, n_datasets, _subseed(seed, 2), sampler_config)
    h_values = np.einsum("ij,ij->i", draws, draws)
    pool = pool_for_sigma_range(
        params, pool_n, _subseed(seed, 1),
        sigma_lo=-mle_config.sigma_cap, sigma_hi=mle_config.sigma_cap,
    )
    table = GSigmaTable(pool, mle_config.sigma_cap)
    return _replicate_mles(h_values, k, pool, mle_config, table)


def instability_probability(
    k: int,
    theta: float,
    sigma_grid: list[float],
    epsilon: float,
    n_per_sigma: int,
    seed: int,
    sampler_config: SamplerConfig | None = None,
) -> list[dict]:
    """Probability of landing in an instability region, by selection regime.

    For each grid intensity, draws populations under heterozygote advantage
    (+sigma) and homozygote advantage (-sigma) and reports the fraction
    falling within epsilon of the respective composition of strongest
    signal: h in (1/k, 1/k + eps) and h in (1 - eps, 1).
    """
    if not (0.0 < epsilon < 1.0 - 1.0 / k):
        raise ValueError(f"epsilon must lie in (0, 1 - 1/k) = (0, {1.0 - 1.0 / k:.6g})")
    if not sigma_grid:
        raise ValueError("sigma grid must be non-empty")
    params = MutationParams.symmetric(theta, k)
    hetero_hi = 1.0 / k + epsilon
    homo_lo = 1.0 - epsilon
    rows = []
    for i, sigma in enumerate(sigma_grid):
        het_draws, het_rep = _selection_arrays(
            params, float(sigma), n_per_sigma, _subseed(seed, 10, i), sampler_config
        )
        hom_draws, hom_rep = _selection_arrays(
            params, -float(sigma), n_per_sigma, _subseed(seed, 11, i), sampler_config
        )
        het_h = np.einsum("ij,ij->i", het_draws, het_draws)
        hom_h = np.einsum("ij,ij->i", hom_draws, hom_draws)
        rows.append(
            {
                "sigma": float(sigma),
                "hetero_hit_fraction": float(((het_h > 1.0 / k) & (het_h < hetero_hi)).mean()),
                "homo_hit_fraction": float(((hom_h > homo_lo) & (hom_h < 1.0)).mean()),
                "n_per_sigma": int(n_per_sigma),
                "hetero_method": het_rep.method,
                "homo_method": hom_rep.method,
            }
        )
    return rows


def cdf_panel(
    h: Homozygosity,
    pool: WeightedPool,
    sigma_values: list[float],
    bins: int = 60,
) -> tuple[list[dict], list[dict]]:
    """Weighted empirical homozygosity distributions at chosen intensities.

    Returns histogram rows and a summary per intensity: the 2.5th/97.5th
    weighted percentiles and the CDF value at the observed h (which sits at
    the nominal tail mass when the intensity is a monotone-CI endpoint).
    """
    edges = np.linspace(1.0 / pool.k, 1.0, bins + 1)
    hist_rows, summary_rows = [], []
    for sigma in sigma_values:
        lw = pool.b - float(sigma) * pool.h
        w = np.exp(lw - lw.max())
        w /= w.sum()
        mass, _ = np.histogram(pool.h, bins=edges, weights=w)
        for j in range(bins):
            hist_rows.append(
                {
                    "sigma": float(sigma),
                    "bin_left": float(edges[j]),
                    "bin_right": float(edges[j + 1]),
                    "mass": float(mass[j]),
                }
            )
        q025, q975 = weighted_quantile(pool.h, w, [0.025, 0.975])
        summary_rows.append(
            {
                "sigma": float(sigma),
                "q025": float(q025),
                "q975": float(q975),
                "F_at_h": cdf_homozygosity(pool, float(sigma), h),
            }
        )
    return hist_rows, summary_rows


def _write_csv(path: str, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in columns) + "\n")


def _require(params: dict, names: list[str], kind: str) -> None:
    missing = [n for n in names if n not in params]
    if missing:
        raise StudySchemaError(f"{kind} study spec missing parameters: {missing}", missing)


def run_study(spec: StudySpec) -> dict:
    """Execute a study spec: compute tables, write CSVs and the JSON sidecar."""
    os.makedirs(spec.out, exist_ok=True)
    p = spec.parameters
    outputs: dict[str, str] = {}

    if spec.kind == "mle_curve":
        _require(p, ["k", "theta"], spec.kind)
        k = int(p["k"])
        grid = p.get("h_grid")
        if grid is None:
            grid = np.linspace(1.0 / k + 0.002, 0.5, int(p.get("grid_points", 100))).tolist()
        if not grid:
            raise StudySchemaError("mle_curve: empty h_grid", ["h_grid"])
        params = MutationParams.symmetric(float(p["theta"]), k)
        pool = pool_for_sigma_range(
            params, int(p.get("pool_n", 100_000)), _subseed(spec.seed, 1),
            sigma_lo=-1e5, sigma_hi=1e5,
        )
        rows = mle_curve(k, float(p["theta"]), list(grid), pool)
        path = os.path.join(spec.out, "mle_curve.csv")
        _write_csv(path, rows, ["h", "sigma_hat", "status"])
        outputs["table"] = path

    elif spec.kind == "sampling_dist":
        _require(p, ["k", "theta", "sigma"], spec.kind)
        results = sampling_distribution(
            float(p["theta"]),
            float(p["sigma"]),
            int(p["k"]),
            int(p.get("n_datasets", 1000)),
            spec.seed,
            pool_n=int(p.get("pool_n", 100_000)),
        )
        rows = [
            {"replicate": i, "sigma_hat": r.sigma_hat, "status": r.status}
            for i, r in enumerate(results)
        ]
        path = os.path.join(spec.out, "sampling_dist.csv")
        _write_csv(path, rows, ["replicate", "sigma_hat", "status"])
        outputs["table"] = path

    elif spec.kind == "bootstrap_hist":
        _require(p, ["k", "theta", "sigma", "m"], spec.kind)
        cfg = BootstrapConfig(
            level=float(p.get("level", 0.95)), pool_n=int(p.get("pool_n", 100_000))
        )
        result = bootstrap(
            float(p["theta"]), float(p["sigma"]), int(p["k"]), int(p["m"]), spec.seed, cfg
        )
        rows = [
            {"replicate": i, "sigma_hat": r.sigma_hat, "status": r.status}
            for i, r in enumerate(result.estimates)
        ]
        path = os.path.join(spec.out, "bootstrap_hist.csv")
        _write_csv(path, rows, ["replicate", "sigma_hat", "status"])
        outputs["table"] = path
        summary_path = os.path.join(spec.out, "bootstrap_summary.json")
        with open(summary_path, "w") as fh:
            json.dump(result.as_dict(), fh, indent=2, sort_keys=True)
        outputs["summary"] = summary_path

    elif spec.kind == "cdf_panel":
        _require(p, ["k", "theta", "h", "sigma_values"], spec.kind)
        k = int(p["k"])
        if not p["sigma_values"]:
            raise StudySchemaError("cdf_panel: empty sigma_values", ["sigma_values"])
        params = MutationParams.symmetric(float(p["theta"]), k)
        sig_values = [float(s) for s in p["sigma_values"]]
        pool = pool_for_sigma_range(
            params, int(p.get("pool_n", 100_000)), _subseed(spec.seed, 1),
            sigma_lo=min(sig_values + [0.0]), sigma_hi=max(sig_values + [0.0]),
        )
        hist_rows, summary_rows = cdf_panel(
            Homozygosity(value=float(p["h"]), k=k),
            pool,
            sig_values,
            bins=int(p.get("bins", 60)),
        )
        path = os.path.join(spec.out, "cdf_panel.csv")
        _write_csv(path, hist_rows, ["sigma", "bin_left", "bin_right", "mass"])
        spath = os.path.join(spec.out, "cdf_panel_summary.csv")
        _write_csv(spath, summary_rows, ["sigma", "q025", "q975", "F_at_h"])
        outputs["table"] = path
        outputs["summary"] = spath

    elif spec.kind == "posterior_hist":
        _require(p, ["data", "chain_length"], spec.kind)
        data = p["data"]
        point = parse_frequencies(data) if isinstance(data, str) else SimplexPoint(
            data, sum_tol=5e-3
        )
        cfg = PosteriorConfig(
            theta_fixed=(float(p["fix_theta"]) if p.get("fix_theta") is not None else None),
            pool_n=int(p.get("pool_n", 100_000)),
        )
        bounds = None
        if "prior_theta" in p and "prior_sigma" in p:
            bounds = (tuple(p["prior_theta"]), tuple(p["prior_sigma"]))
        chain = posterior_sample(point, bounds, int(p["chain_length"]), spec.seed, cfg)
        interval, mode = posterior_summary(chain, float(p.get("level", 0.95)))
        path = os.path.join(spec.out, "posterior_chain.csv")
        chain.to_csv(path)
        outputs["table"] = path
        summary_path = os.path.join(spec.out, "posterior_summary.json")
        with open(summary_path, "w") as fh:
            json.dump(
                {
                    "chain": chain.as_dict(),
                    "credible_interval": interval.as_dict(),
                    "mode": {"theta": mode[0], "sigma": mode[1]},
                },
                fh,
                indent=2,
                sort_keys=True,
            )
        outputs["summary"] = summary_path

    elif spec.kind == "instability_prob":
        _require(p, ["k", "theta", "sigma_grid", "epsilon"], spec.kind)
        grid = list(p["sigma_grid"])
        if not grid:
            raise StudySchemaError("instability_prob: empty sigma_grid", ["sigma_grid"])
        if grid != sorted(grid):
            raise StudySchemaError("instability_prob: sigma_grid must be sorted", ["sigma_grid"])
        rows = instability_probability(
            int(p["k"]),
            float(p["theta"]),
            [float(s) for s in grid],
            float(p["epsilon"]),
            int(p.get("n_per_sigma", 1000)),
            spec.seed,
        )
        path = os.path.join(spec.out, "instability_prob.csv")
        _write_csv(
            path,
            rows,
            [
                "sigma",
                "hetero_hit_fraction",
                "homo_hit_fraction",
                "n_per_sigma",
                "hetero_method",
                "homo_method",
            ],
        )
        outputs["table"] = path

    sidecar = os.path.join(spec.out, f"{spec.kind}_spec.json")
    with open(sidecar, "w") as fh:
        json.dump(asdict(spec), fh, indent=2, sort_keys=True)
    outputs["sidecar"] = sidecar
    return outputs
