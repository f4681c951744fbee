"""Monte Carlo estimates of the asymptotic error probability at rate r.

Outer draws sample the relay-visible gains, inner draws the destination-only
gains given them. Draw ``i`` always uses the streams keyed by ``(seed, i)``,
so every strategy and every rate sees the same channels (coupled samples),
and results do not depend on the number of workers.

Compression noises and the DF strategy choice are optimized on the same inner
sample the conditional outage is estimated on. The reported confidence
interval covers outer-level uncertainty only.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from statistics import NormalDist
from typing import Sequence

import numpy as np

from . import rng as streams
from .channel import (CompressionPolicy, InputPolicy, NetworkTopology, RelayCSI, covariance_from_inputs,
                      input_covariance, sample_gains)
from .covariance import DestinationFactoredTable, EntropyTable, X, Xr, Y
from .rates import (DEFAULT_CORRELATION_GRID, FIXED_MODE, SCS, StrategyAssignment, dest_max_min, df_constraint,
                    policy_inputs, rate_cutset, relay_max_min)

log = logging.getLogger(__name__)

Z95 = NormalDist().inv_cdf(0.975)
_CHUNK_ELEMENTS = 200_000
_MAX_CHUNK = 4096


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OutageEstimate:
    r: float
    epsilon_hat: float
    ci: tuple[float, float]
    n_outer: int
    n_inner: int
    n_singular: int = 0
    rho: float | None = None

    def __post_init__(self):
        lo, hi = self.ci
        if not (0 <= lo <= self.epsilon_hat <= hi <= 1):
            raise ValueError(f"inconsistent estimate {self}")

    @property
    def half_width(self) -> float:
        return (self.ci[1] - self.ci[0]) / 2


@dataclass(frozen=True)
class DecisionRule:
    """How relays pick DF or CF from their channel knowledge."""

    kind: str
    v: StrategyAssignment | None = None
    n_inner: int = 500

    def __post_init__(self):
        if self.kind not in ("fixed", "feasibility", "empirical"):
            raise ValueError(f"unknown decision rule {self.kind!r}")
        if self.kind == "fixed" and self.v is None:
            raise ValueError("a fixed rule needs its CF set")
        if self.kind == "empirical" and self.n_inner < 100:
            raise ValueError("empirical argmin needs n_inner >= 100")

    @classmethod
    def fixed(cls, v: StrategyAssignment) -> "DecisionRule":
        return cls("fixed", v)

    @classmethod
    def feasibility(cls) -> "DecisionRule":
        return cls("feasibility")

    @classmethod
    def empirical(cls, n_inner: int = 500) -> "DecisionRule":
        return cls("empirical", None, n_inner)


@dataclass(frozen=True)
class Settings:
    compression_grid: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)  # x receiver noise
    rho_grid: tuple[float, ...] = (0.0, 0.5, 0.9)
    correlation_grid: tuple[float, ...] = DEFAULT_CORRELATION_GRID
    fast: bool = False
    exhaustive_limit: int = 64
    threads: int = 1
    max_singular_fraction: float = 1e-3

    def __post_init__(self):
        if not self.compression_grid or any(not g > 0 for g in self.compression_grid):
            raise ValueError("compression grid must be nonempty and strictly positive")
        if not self.rho_grid or any(not 0 <= r < 1 for r in self.rho_grid):
            raise ValueError("rho grid values must lie in [0, 1)")


def wilson_interval(p_hat: float, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    denom = 1 + z * z / n
    centre = (p_hat + z * z / (2 * n)) / denom
    half = z * math.sqrt(p_hat * (1 - p_hat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, min(p_hat, centre - half)), min(1.0, max(p_hat, centre + half))


# ---------------------------------------------------------------------------
# conditional outage for one relay-side draw


def _inputs(n: int):
    return [X()] + [Xr(k) for k in range(1, n + 1)]


def _compression_combos(topology: NetworkTopology, v: StrategyAssignment, grid, fast: bool) -> np.ndarray:
    cf = v.cf
    if not cf:
        return np.zeros((1, 0))
    noise = np.array([topology.noise(k) for k in cf])
    if fast:
        return noise[None, :]
    combos = np.array(list(itertools.product(grid, repeat=len(cf))))
    return combos * noise


def _midpoint(grid) -> float:
    return sorted(grid)[(len(grid) - 1) // 2]


def conditional_rates(topology: NetworkTopology, csi: np.ndarray, dest: np.ndarray, v: StrategyAssignment,
                      inputs: InputPolicy, sig: np.ndarray, mode: str = FIXED_MODE) -> np.ndarray:
    """I_CMNNC(V) for relay-side gains ``csi (c, N+1, N+2)`` and destination draws.

    ``dest`` holds the gains into the destination, ``(c, n_inner, N+1)``;
    ``sig`` holds compression variances ``(n_combo, |V|)``. Returns
    ``(c, n_combo, n_inner)``, NaN on numerically singular draws.
    """
    n = topology.n_relays
    scs = mode == SCS and 0 < v.mask < (1 << n) - 1
    k_in = input_covariance(topology, inputs, v.cf, scs)
    cov = covariance_from_inputs(topology, csi[:, None], k_in, v.cf, sig[None], scs, check=False)
    table = DestinationFactoredTable(cov, Y(), _inputs(n), dest, topology.noise_variances[n])
    rate = dest_max_min(table, v)[0]
    if v.df:
        relay = df_constraint(EntropyTable(cov), v, SCS if scs else FIXED_MODE)
        rate = np.minimum(rate, relay[..., None])
    with np.errstate(invalid="ignore"):
        return np.where(np.isnan(rate), np.nan, np.maximum(rate, 0.0))


def _outage_fractions(rates: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Fraction of the last axis with ``rate < r``; output ``(..., n_r)``."""
    return (rates[..., None] < r).mean(axis=-2)


def _best_combo(outage: np.ndarray, mean_rate: np.ndarray) -> np.ndarray:
    """Index of the combo with least outage, then highest mean rate; axis -2 is combos."""
    least = outage.min(axis=-2, keepdims=True)
    score = np.where(outage == least, mean_rate[..., None], -np.inf)
    return score.argmax(axis=-2)


@dataclass
class _Scenario:
    outage: np.ndarray  # (c, n_r) after compression choice
    singular: np.ndarray  # (c,)


class _DrawBatch:
    """A chunk of outer draws with their inner destination draws."""

    def __init__(self, topology: NetworkTopology, settings: Settings, seed: int, indices: Sequence[int],
                 n_inner: int, rates: np.ndarray):
        self.topology = topology
        self.settings = settings
        self.rates = rates
        vis = topology.visibility()
        n = topology.n_relays
        csi, full = [], []
        for i in indices:
            r_side = sample_gains(topology, streams.stream(seed, streams.RELAY_SIDE, i))
            d_side = sample_gains(topology, streams.stream(seed, streams.DESTINATION_SIDE, i), size=max(n_inner, 1))
            csi.append(np.where(vis, r_side, 0))
            full.append(np.where(vis, r_side, d_side))
        self.csi = np.array(csi).reshape((len(indices),) + topology.gain_shape)
        self.full = np.array(full).reshape((len(indices), max(n_inner, 1)) + topology.gain_shape)
        self.dest = self.full[..., :, n + 1]
        self._cache: dict = {}
        self._relay_cache: dict = {}

    def scenario(self, v: StrategyAssignment, inputs: InputPolicy, mode: str) -> _Scenario:
        n = self.topology.n_relays
        scs = mode == SCS and 0 < v.mask < (1 << n) - 1
        rho = inputs.df_correlations
        eff = tuple(rho) if scs else tuple(rho[k - 1] for k in v.df)
        key = (v.mask, eff, scs)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        sig = _compression_combos(self.topology, v, self.settings.compression_grid, self.settings.fast)
        if len(sig) > self.settings.exhaustive_limit:
            out = self._scenario_coordinate(v, inputs, mode)
        else:
            rate = conditional_rates(self.topology, self.csi, self.dest, v, inputs, sig, mode)
            singular = np.isnan(rate).any(axis=(-2, -1))
            rate = np.nan_to_num(rate, nan=0.0)
            frac = _outage_fractions(rate, self.rates)  # (c, combo, n_r)
            pick = _best_combo(frac, rate.mean(axis=-1))  # (c, n_r)
            out = _Scenario(np.take_along_axis(frac, pick[:, None, :], axis=1)[:, 0], singular)
        self._cache[key] = out
        return out

    def _scenario_coordinate(self, v, inputs, mode) -> _Scenario:
        c, n_r = len(self.csi), len(self.rates)
        outage = np.empty((c, n_r))
        singular = np.zeros(c, dtype=bool)
        for i in range(c):
            for j, r in enumerate(self.rates):
                ev = _ComboEvaluator(self.topology, self.csi[i], self.dest[i], v, inputs, mode)
                pol = _coordinate_descent(ev, v, self.topology, self.settings.compression_grid, r)
                val, bad = ev.outage(pol, r)
                outage[i, j] = val
                singular[i] |= bad
        return _Scenario(outage, singular)

    def df_values(self, v: StrategyAssignment, inputs: InputPolicy) -> dict[int, np.ndarray]:
        """DF constraint of each DF relay under ``V`` with matched compression, SCS mode."""
        key = (v.mask, inputs.df_correlations)
        hit = self._relay_cache.get(key)
        if hit is None:
            hit = relay_df_values(self.topology, self.csi, v, inputs)
            self._relay_cache[key] = hit
        return hit


def relay_df_values(topology: NetworkTopology, csi: np.ndarray, v: StrategyAssignment,
                    inputs: InputPolicy) -> dict[int, np.ndarray]:
    n = topology.n_relays
    scs = 0 < v.mask < (1 << n) - 1
    sig = np.array([topology.noise(k) for k in v.cf])
    k_in = input_covariance(topology, inputs, v.cf, scs)
    cov = covariance_from_inputs(topology, csi, k_in, v.cf, sig, scs, check=False)
    tab = EntropyTable(cov)
    return {k: relay_max_min(tab, v, k, SCS if scs else FIXED_MODE)[0] for k in v.df}


def feasibility_fixpoint(df_value, n_relays: int, r: float) -> StrategyAssignment:
    """Grow the CF set from empty, moving every relay that cannot decode at ``r`` to CF."""
    mask = 0
    for _ in range(n_relays + 1):
        v = StrategyAssignment(mask, n_relays)
        vals = df_value(v)
        bad = [k for k in v.df if not vals[k] >= r]
        if not bad:
            return v
        for k in bad:
            mask |= 1 << (k - 1)
    return StrategyAssignment(mask, n_relays)


# ---------------------------------------------------------------------------
# compression optimization for a single relay-side draw


class _ComboEvaluator:
    """Lazily evaluated conditional outage for one relay-side draw."""

    def __init__(self, topology, csi, dest, v, inputs, mode):
        self.args = (topology, csi[None], dest[None], v, inputs)
        self.mode = mode
        self._rates: dict[tuple, np.ndarray] = {}

    def rates(self, values: tuple[float, ...]) -> np.ndarray:
        hit = self._rates.get(values)
        if hit is None:
            topology, csi, dest, v, inputs = self.args
            hit = conditional_rates(topology, csi, dest, v, inputs, np.array([values]), self.mode)[0, 0]
            self._rates[values] = hit
        return hit

    def score(self, values, r) -> tuple[float, float]:
        rate = np.nan_to_num(self.rates(values), nan=0.0)
        return float(np.mean(rate < r)), -float(np.mean(rate))

    def outage(self, policy: CompressionPolicy, r) -> tuple[float, bool]:
        rate = self.rates(tuple(policy.sigma_hat_sq.values()))
        bad = bool(np.isnan(rate).any())
        return float(np.mean(np.nan_to_num(rate, nan=0.0) < r)), bad


def _coordinate_descent(ev: _ComboEvaluator, v: StrategyAssignment, topology, grid, r,
                        sweeps: int = 2) -> CompressionPolicy:
    grid = sorted(grid)
    noise = {k: topology.noise(k) for k in v.cf}
    cur = {k: _midpoint(grid) for k in v.cf}

    def values(choice):
        return tuple(choice[k] * noise[k] for k in v.cf)

    best = ev.score(values(cur), r)
    for _ in range(sweeps):
        for k in v.cf:
            for g in grid:
                trial = {**cur, k: g}
                sc = ev.score(values(trial), r)
                if sc < best:
                    best, cur = sc, trial
    return CompressionPolicy({k: cur[k] * noise[k] for k in v.cf})


def optimize_compression(topology: NetworkTopology, csi: RelayCSI, v: StrategyAssignment, r: float, *,
                         grid: Sequence[float] = Settings.compression_grid, n_inner: int = 500, seed: int = 0,
                         inputs: InputPolicy | None = None, mode: str = FIXED_MODE,
                         method: str = "coordinate") -> CompressionPolicy:
    """Per-draw compression noises minimizing the estimated conditional outage at ``r``.

    ``grid`` holds multiples of each CF relay's receiver noise. ``method`` is
    ``"coordinate"`` (two coordinate sweeps from the grid midpoint) or
    ``"exhaustive"``. Ties in outage go to the higher mean rate. The inner
    draws come from ``seed``, so the result is a function of ``(csi, seed)``.
    """
    if not v.cf:
        return CompressionPolicy({})
    grid = sorted(grid)
    if len(grid) == 1:
        return CompressionPolicy({k: grid[0] * topology.noise(k) for k in v.cf})
    if not np.any(csi.gains):
        return CompressionPolicy({k: _midpoint(grid) * topology.noise(k) for k in v.cf})
    if inputs is None:
        inputs = InputPolicy.independent(topology.n_relays)
    vis = topology.visibility()
    d_side = sample_gains(topology, streams.stream(seed, streams.COMPRESSION, 0), size=n_inner)
    dest = np.where(vis, csi.gains, d_side)[..., :, topology.destination]
    ev = _ComboEvaluator(topology, csi.gains, dest, v, inputs, mode)
    if method == "coordinate":
        return _coordinate_descent(ev, v, topology, grid, r)
    if method != "exhaustive":
        raise ValueError(f"unknown method {method!r}")
    noise = [topology.noise(k) for k in v.cf]
    best = min(itertools.product(grid, repeat=len(v.cf)),
               key=lambda c: ev.score(tuple(g * s for g, s in zip(c, noise)), r))
    return CompressionPolicy({k: g * s for k, g, s in zip(v.cf, best, noise)})


# ---------------------------------------------------------------------------
# strategies and the shared simulation pass


@dataclass(frozen=True)
class Fixed:
    v: StrategyAssignment


@dataclass(frozen=True)
class Selective:
    rule: DecisionRule


@dataclass(frozen=True)
class CutsetBound:
    pass


def _scs_policy(topology, rho):
    n = topology.n_relays
    return InputPolicy.coherent(rho, n, range(1, n + 1))


def _evaluate(spec, batch: _DrawBatch) -> tuple[np.ndarray, np.ndarray]:
    """Conditional outage ``(c, n_rho, n_r)`` and singular flags ``(c,)`` for one strategy."""
    topology, settings = batch.topology, batch.settings
    n = topology.n_relays
    c, n_r = len(batch.csi), len(batch.rates)
    if isinstance(spec, CutsetBound):
        theta = batch.full[:, 0]
        extra = policy_inputs(topology, settings.rho_grid)
        cut = rate_cutset(topology, theta, settings.correlation_grid, extra)
        cut = np.atleast_1d(cut)
        singular = np.isnan(cut)
        return (np.nan_to_num(cut, nan=0.0)[:, None] < batch.rates)[:, None, :].astype(float), singular
    if isinstance(spec, Fixed):
        rhos = settings.rho_grid if spec.v.df else settings.rho_grid[:1]
        outs, singular = [], np.zeros(c, dtype=bool)
        for rho in rhos:
            sc = batch.scenario(spec.v, InputPolicy.coherent(rho, n, spec.v.df), FIXED_MODE)
            outs.append(sc.outage)
            singular |= sc.singular
        return np.stack(outs, axis=1), singular
    rule = spec.rule
    outs, singular = [], np.zeros(c, dtype=bool)
    for rho in settings.rho_grid:
        pol = _scs_policy(topology, rho)
        if rule.kind == "fixed":
            sc = batch.scenario(rule.v, pol, SCS)
            outs.append(sc.outage)
            singular |= sc.singular
            continue
        per_v = {}
        for v in StrategyAssignment.all(n):
            sc = batch.scenario(v, pol, SCS)
            per_v[v.mask] = sc.outage
            singular |= sc.singular
        if rule.kind == "empirical":
            outs.append(np.min(np.stack(list(per_v.values())), axis=0))
            continue
        out = np.empty((c, n_r))
        for i in range(c):
            for j, r in enumerate(batch.rates):
                v = feasibility_fixpoint(lambda v_: {k: x[i] for k, x in batch.df_values(v_, pol).items()}, n, r)
                out[i, j] = per_v[v.mask][i, j]
        outs.append(out)
    return np.stack(outs, axis=1), singular


def _chunk_size(topology: NetworkTopology, n_inner: int, settings: Settings) -> int:
    combos = len(settings.compression_grid) ** topology.n_relays
    combos = min(combos, settings.exhaustive_limit) if not settings.fast else 1
    return int(max(1, min(_MAX_CHUNK, _CHUNK_ELEMENTS // (max(n_inner, 1) * combos))))


def _run_chunk(indices, topology, specs, rates, n_inner, settings, seed):
    batch = _DrawBatch(topology, settings, seed, indices, n_inner, rates)
    results = []
    for spec in specs:
        t0 = time.perf_counter()
        out, singular = _evaluate(spec, batch)
        results.append((out, singular, time.perf_counter() - t0))
    return results


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("RELAYNET_THREADS", "1") or 1)
    return max(1, int(threads))


def simulate(topology: NetworkTopology, specs: Sequence, rates: Sequence[float], n_outer: int, n_inner: int,
             seed: int, settings: Settings = Settings()) -> list[tuple[list[OutageEstimate], float]]:
    """Run every strategy in ``specs`` on one coupled set of draws.

    Returns, per strategy, its estimates over ``rates`` and the seconds spent
    on it. Raises SimulationError when too many draws are numerically singular.
    """
    rates = np.asarray(rates, dtype=float)
    if n_outer < 1 or n_inner < 0:
        raise ValueError("sample counts must be positive")
    if np.any(rates < 0):
        raise ValueError("rates must be >= 0")
    size = _chunk_size(topology, n_inner, settings)
    chunks = [range(a, min(a + size, n_outer)) for a in range(0, n_outer, size)]
    work = partial(_run_chunk, topology=topology, specs=list(specs), rates=rates, n_inner=n_inner,
                   settings=settings, seed=seed)
    threads = resolve_threads(settings.threads)
    if threads > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(ch) for ch in chunks]
    out = []
    for s, spec in enumerate(specs):
        cond = np.concatenate([p[s][0] for p in parts])  # (n_outer, n_rho, n_r)
        singular = np.concatenate([p[s][1] for p in parts])
        seconds = sum(p[s][2] for p in parts)
        n_bad = int(singular.sum())
        if n_bad > settings.max_singular_fraction * n_outer:
            raise SimulationError(f"{n_bad} of {n_outer} draws were numerically singular for {spec}")
        if n_bad:
            log.warning("%s: dropped %d singular draws", spec, n_bad)
        good = cond[~singular]
        means = good.mean(axis=0)  # (n_rho, n_r)
        n_good = len(good)
        rho_grid = _rho_labels(spec, topology, settings)
        ests = []
        for j, r in enumerate(rates):
            pick = int(np.argmin(means[:, j]))
            p = float(means[pick, j])
            ests.append(OutageEstimate(float(r), p, wilson_interval(p, n_good), n_good,
                                       0 if isinstance(spec, CutsetBound) else n_inner, n_bad, rho_grid[pick]))
        out.append((ests, seconds))
    return out


def _rho_labels(spec, topology, settings):
    if isinstance(spec, CutsetBound):
        return [None]
    if isinstance(spec, Fixed) and not spec.v.df:
        return [None]
    return list(settings.rho_grid)


def _unwrap(r, ests):
    return ests[0] if np.ndim(r) == 0 else ests


def outage_fixed(topology: NetworkTopology, v: StrategyAssignment, r, n_outer: int = 2000, n_inner: int = 500,
                 seed: int = 0, settings: Settings = Settings()):
    """Upper bound on the error probability when relays keep the CF set ``V`` for every draw."""
    rates = np.atleast_1d(r)
    ests, _ = simulate(topology, [Fixed(v)], rates, n_outer, n_inner, seed, settings)[0]
    return _unwrap(r, ests)


def outage_scs(topology: NetworkTopology, r, rule: DecisionRule, n_outer: int = 2000, n_inner: int = 500,
               seed: int = 0, settings: Settings = Settings()):
    """Upper bound when relays select DF or CF per draw of their channel knowledge."""
    rates = np.atleast_1d(r)
    ests, _ = simulate(topology, [Selective(rule)], rates, n_outer, n_inner, seed, settings)[0]
    return _unwrap(r, ests)


def outage_lower_bound(topology: NetworkTopology, r, n_outer: int = 2000, seed: int = 0,
                       settings: Settings = Settings()):
    """Lower bound: probability that the cutset bound falls below ``r``."""
    rates = np.atleast_1d(r)
    ests, _ = simulate(topology, [CutsetBound()], rates, n_outer, 0, seed, settings)[0]
    return _unwrap(r, ests)


def decide_strategy(topology: NetworkTopology, csi: RelayCSI, r: float, rule: DecisionRule, seed: int = 0, *,
                    rho: float = 0.0, settings: Settings = Settings()) -> StrategyAssignment:
    """CF set chosen from the relay-side knowledge ``csi`` alone.

    The empirical rule draws its own destination-side sample from ``seed``.
    """
    if not isinstance(csi, RelayCSI):
        raise TypeError("decide_strategy only accepts relay-side channel knowledge")
    n = topology.n_relays
    if rule.kind == "fixed":
        return rule.v
    pol = _scs_policy(topology, rho)
    if rule.kind == "feasibility":
        def df_value(v):
            return {k: float(x) for k, x in relay_df_values(topology, csi.gains, v, pol).items()}
        return feasibility_fixpoint(df_value, n, r)
    scores = [(conditional_outage(topology, csi, v, r, n_inner=rule.n_inner, seed=seed, rho=rho, settings=settings),
               len(v), v.mask, v) for v in StrategyAssignment.all(n)]
    return min(scores, key=lambda s: s[:3])[3]


def conditional_outage(topology: NetworkTopology, csi: RelayCSI, v: StrategyAssignment, r: float, *,
                       n_inner: int = 500, seed: int = 0, rho: float = 0.0,
                       settings: Settings = Settings()) -> float:
    """Estimated P(rate < r | relay-side gains) for CF set ``v`` in selective mode.

    Destination-side gains are ``n_inner`` draws from ``seed``; compression
    noises are chosen on the same draws.
    """
    vis = topology.visibility()
    d_side = sample_gains(topology, streams.stream(seed, streams.DECISION, 0), size=n_inner)
    dest = np.where(vis, csi.gains, d_side)[..., :, topology.destination]
    batch = _SingleDraw(topology, settings, csi.gains, dest, np.array([r]))
    return float(batch.scenario(v, _scs_policy(topology, rho), SCS).outage[0, 0])


class _SingleDraw(_DrawBatch):
    def __init__(self, topology, settings, csi, dest, rates):
        self.topology, self.settings, self.rates = topology, settings, rates
        self.csi = csi[None]
        self.dest = dest[None]
        self._cache, self._relay_cache = {}, {}
