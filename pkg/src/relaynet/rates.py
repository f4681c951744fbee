"""Cooperative mixed noisy-network-coding rates and the cutset bound.

Relays in the CF set ``V`` compress-and-forward, the rest decode-and-forward.
All functions accept either a CovarianceMap or an EntropyTable built on one;
with batched covariances every returned value is an array over the batch.
Inner max-min terms are kept unclamped; only ``i_cmnnc`` clamps its result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .channel import (InputPolicy, NetworkTopology, covariance_from_inputs, input_covariance)
from .covariance import EntropyTable, X, Xdf, Xr, Y, Z, Zhat

MAX_RELAYS = 16
FEASIBILITY_TOL = 1e-12
# rate modes: relays keep one strategy for all draws, or select DF/CF per draw
FIXED_MODE = "fixed"
SCS = "scs"


@dataclass(frozen=True)
class StrategyAssignment:
    """CF relay set ``V`` as a bitmask (bit ``k-1`` set means relay ``k`` uses CF)."""

    mask: int
    n_relays: int

    def __post_init__(self):
        if not 0 <= self.n_relays <= MAX_RELAYS:
            raise ValueError(f"at most {MAX_RELAYS} relays are supported")
        if not 0 <= self.mask < (1 << self.n_relays):
            raise ValueError(f"mask {self.mask:#b} is not a subset of {self.n_relays} relays")

    @classmethod
    def from_cf(cls, cf: Iterable[int], n_relays: int) -> "StrategyAssignment":
        mask = 0
        for k in cf:
            if not 1 <= k <= n_relays:
                raise ValueError(f"relay {k} out of range")
            mask |= 1 << (k - 1)
        return cls(mask, n_relays)

    @classmethod
    def all(cls, n_relays: int) -> list["StrategyAssignment"]:
        return [cls(m, n_relays) for m in range(1 << n_relays)]

    @property
    def cf(self) -> tuple[int, ...]:
        return mask_members(self.mask)

    @property
    def df(self) -> tuple[int, ...]:
        return tuple(k for k in range(1, self.n_relays + 1) if not self.mask >> (k - 1) & 1)

    def __len__(self):
        return len(self.cf)

    def __repr__(self):
        return f"V{{{','.join(map(str, self.cf))}}}"


def mask_members(mask: int) -> tuple[int, ...]:
    out, k = [], 1
    while mask:
        if mask & 1:
            out.append(k)
        mask >>= 1
        k += 1
    return tuple(out)


def submasks(mask: int) -> list[int]:
    """All submasks of ``mask`` in increasing order, the empty set first."""
    out, s = [], mask
    while True:
        out.append(s)
        if s == 0:
            break
        s = (s - 1) & mask
    return out[::-1]


@dataclass
class RateBreakdown:
    rate: np.ndarray
    dest_term: np.ndarray
    dest_argmax: np.ndarray  # mask of the maximizing T
    dest_argmin: np.ndarray  # mask of the minimizing S within it
    relay_terms: dict[int, np.ndarray] = field(default_factory=dict)
    relay_argmax: dict[int, np.ndarray] = field(default_factory=dict)
    relay_argmin: dict[int, np.ndarray] = field(default_factory=dict)
    relay_feasible: dict[int, dict[int, np.ndarray]] = field(default_factory=dict)


def _table(sigma) -> EntropyTable:
    return sigma if isinstance(sigma, EntropyTable) else EntropyTable(sigma)


def _xs(ks) -> set:
    return {Xr(k) for k in ks}


def _zhats(ks) -> set:
    return {Zhat(k) for k in ks}


def _zs(ks) -> set:
    return {Z(k) for k in ks}


def _check_subsets(v: StrategyAssignment, t: int, s: int):
    if t & ~v.mask or s & ~t:
        raise ValueError("need S within T within V")


def _df_conditioning(v: StrategyAssignment, mode: str) -> set:
    """Codewords known at a DF relay: X_{V^c}, or every DF codeword in SCS mode."""
    if mode == SCS:
        return _xs(v.df) | {Xdf(k) for k in v.cf}
    if mode != FIXED_MODE:
        raise ValueError(f"unknown mode {mode!r}")
    return _xs(v.df)


def rate_dest_term(sigma, v: StrategyAssignment, t: int, s: int):
    """Destination constraint R_T(S) for CF subsets given as masks."""
    _check_subsets(v, t, s)
    tab = _table(sigma)
    sm, sc = mask_members(s), mask_members(t & ~s)
    first = tab.mi({X()} | _xs(v.df) | _xs(sm), _zhats(sc) | {Y()}, _xs(sc))
    second = tab.mi(_zs(sm), _zhats(sm), {X()} | _xs(v.df) | _xs(mask_members(t)) | _zhats(sc) | {Y()})
    return first - second


def q_dest(sigma, v: StrategyAssignment, t: int, s: int):
    _check_subsets(v, t, s)
    tab = _table(sigma)
    sm, sc = mask_members(s), mask_members(t & ~s)
    first = tab.mi(_xs(sm), _zhats(sc) | {Y()}, {X()} | _xs(sc) | _xs(v.df))
    second = tab.mi(_zs(sm), _zhats(sm), {X()} | _xs(v.df) | _xs(mask_members(t)) | _zhats(sc) | {Y()})
    return first - second


def rate_relay_term(sigma, v: StrategyAssignment, k: int, t: int, s: int, mode: str = FIXED_MODE):
    """DF relay ``k``'s decoding constraint R^(k)_T(S) with CF help from ``T``."""
    if k not in v.df:
        raise ValueError(f"relay {k} is not a DF relay under {v}")
    _check_subsets(v, t, s)
    tab = _table(sigma)
    d = _df_conditioning(v, mode)
    tm, sm, sc = mask_members(t), mask_members(s), mask_members(t & ~s)
    first = tab.mi({X()}, _zhats(tm) | {Z(k)}, d | _xs(tm))
    second = tab.mi(_xs(sm), {Z(k)}, d | _xs(sc))
    third = tab.mi(_zhats(sm), _zs(sm), d | _xs(tm) | _zhats(sc) | {Z(k)})
    return first + second - third


def q_relay(sigma, v: StrategyAssignment, k: int, t: int, s: int, mode: str = FIXED_MODE):
    if k not in v.df:
        raise ValueError(f"relay {k} is not a DF relay under {v}")
    _check_subsets(v, t, s)
    tab = _table(sigma)
    d = _df_conditioning(v, mode)
    tm, sm, sc = mask_members(t), mask_members(s), mask_members(t & ~s)
    first = tab.mi(_xs(sm), {Z(k)}, d | _xs(sc))
    second = tab.mi(_zhats(sm), _zs(sm), {X()} | d | _xs(tm) | _zhats(sc) | {Z(k)})
    return first - second


def _min_over_s(fn, t):
    best, arg = None, None
    for s in submasks(t):
        val = np.asarray(fn(t, s))
        if best is None:
            best, arg = val, np.zeros(val.shape, dtype=np.int64)
        else:
            better = (val < best) | np.isnan(val)
            best = np.where(better, val, best)
            arg = np.where(better, s, arg)
    return best, arg


def _max_over_t(candidates):
    """candidates: iterable of (t, value, argmin_s, feasible-or-None). NaN (singular) propagates."""
    best = arg_t = arg_s = None
    for t, val, s_arg, ok in candidates:
        if ok is not None:
            val = np.where(ok | np.isnan(val), val, -np.inf)
        if best is None:
            best, arg_t, arg_s = val, np.full(val.shape, t, dtype=np.int64), s_arg
        else:
            val, best = np.broadcast_arrays(val, best)
            better = (val > best) | np.isnan(val)
            best = np.where(better, val, best)
            arg_t = np.where(better, t, arg_t)
            arg_s = np.where(better, s_arg, arg_s)
    return best, arg_t, arg_s


def dest_max_min(sigma, v: StrategyAssignment, restrict_to_upsilon: bool = False):
    """``max_T min_S R_T(S)`` over all ``T`` within ``V`` (or only T in Upsilon(V))."""
    tab = _table(sigma)

    def cands():
        for t in submasks(v.mask):
            val, s_arg = _min_over_s(lambda t_, s_: rate_dest_term(tab, v, t_, s_), t)
            ok = upsilon_member(tab, v, t) if restrict_to_upsilon else None
            yield t, val, s_arg, ok

    return _max_over_t(cands())


def upsilon_member(sigma, v: StrategyAssignment, t: int, k: int | None = None, mode: str = FIXED_MODE):
    """Whether ``T`` lies in Upsilon(V) (destination) or Upsilon_k(V) (relay ``k``)."""
    tab = _table(sigma)
    ok = np.asarray(True)
    for s in submasks(t)[1:]:
        q = q_dest(tab, v, t, s) if k is None else q_relay(tab, v, k, t, s, mode)
        ok = ok & (q >= -FEASIBILITY_TOL)
    return ok


def relay_max_min(sigma, v: StrategyAssignment, k: int, mode: str = FIXED_MODE):
    """``max_{T in Upsilon_k(V)} min_S R^(k)_T(S)`` and the feasibility of each T."""
    tab = _table(sigma)
    feas = {}

    def cands():
        for t in submasks(v.mask):
            ok = upsilon_member(tab, v, t, k, mode)
            feas[t] = ok
            val, s_arg = _min_over_s(lambda t_, s_: rate_relay_term(tab, v, k, t_, s_, mode), t)
            yield t, val, s_arg, (None if t == 0 else ok)

    best, arg_t, arg_s = _max_over_t(cands())
    return best, arg_t, arg_s, feas


def df_constraint(sigma, v: StrategyAssignment, mode: str = FIXED_MODE):
    """``min_k`` of the DF relays' decoding constraints (``+inf`` without DF relays)."""
    tab = _table(sigma)
    out = np.asarray(np.inf)
    for k in v.df:
        out = np.minimum(out, relay_max_min(tab, v, k, mode)[0])
    return out


def i_cmnnc(sigma, v: StrategyAssignment, mode: str = FIXED_MODE) -> RateBreakdown:
    """Rate of cooperative mixed NNC for CF set ``V``, clamped at zero."""
    tab = _table(sigma)
    dest, d_t, d_s = dest_max_min(tab, v)
    out = RateBreakdown(rate=None, dest_term=dest, dest_argmax=d_t, dest_argmin=d_s)
    rate = dest
    for k in v.df:
        val, t_arg, s_arg, feas = relay_max_min(tab, v, k, mode)
        out.relay_terms[k] = val
        out.relay_argmax[k] = t_arg
        out.relay_argmin[k] = s_arg
        out.relay_feasible[k] = feas
        rate = np.minimum(rate, val)
    out.rate = np.maximum(rate, 0.0)
    return out


# ---------------------------------------------------------------------------
# cutset bound

DEFAULT_CORRELATION_GRID = (0.0, 0.25, 0.5, 0.75, 0.95)


def aligned_inputs(topology: NetworkTopology, gains: np.ndarray, magnitude: float) -> np.ndarray:
    """Inputs with common pairwise correlation ``magnitude``, co-phased at the destination."""
    n = topology.n_relays
    p = topology.powers
    h = np.asarray(gains)[..., :, n + 1]
    absh = np.abs(h)
    u = np.where(absh > 0, np.conj(h) / np.where(absh > 0, absh, 1), 1.0)
    r = (1 - magnitude) * np.eye(n + 1) + magnitude * np.ones((n + 1, n + 1))
    amp = np.sqrt(p) * u
    return amp[..., :, None] * r * np.conj(amp)[..., None, :]


def policy_inputs(topology: NetworkTopology, rho_grid: Sequence[float]) -> list[np.ndarray]:
    """Transmitted-input covariances used by the coding strategies for ``rho_grid``.

    Covers every DF set with the source's correlation split over the DF set
    (fixed strategies) or over all relays (selective strategy).
    """
    n = topology.n_relays
    seen, out = set(), []
    for rho in rho_grid:
        for mask in range(1 << n):
            cf = mask_members(mask)
            df = [k for k in range(1, n + 1) if k not in cf]
            for superposed in (df, range(1, n + 1)):
                pol = InputPolicy.coherent(rho, n, superposed)
                rho_eff = tuple(r if k in df else 0.0 for k, r in enumerate(pol.df_correlations, 1))
                if rho_eff not in seen:
                    seen.add(rho_eff)
                    out.append(input_covariance(topology, InputPolicy(rho_eff), ()))
    return out


def cut_values(sigma, n_relays: int) -> dict[int, np.ndarray]:
    """``I(X X_S; Z_{S^c} Y | X_{S^c})`` for every source-side relay set ``S``."""
    tab = _table(sigma)
    full = (1 << n_relays) - 1
    out = {}
    for s in range(full + 1):
        sm, sc = mask_members(s), mask_members(full & ~s)
        out[s] = tab.mi({X()} | _xs(sm), _zs(sc) | {Y()}, _xs(sc))
    return out


def rate_cutset(topology: NetworkTopology, theta, correlation_grid: Sequence[float] = DEFAULT_CORRELATION_GRID,
                extra_inputs: Sequence[np.ndarray] = ()) -> np.ndarray:
    """Cutset bound, maximized over a family of jointly Gaussian inputs.

    The family is the destination-co-phased inputs for each magnitude in
    ``correlation_grid`` plus any ``extra_inputs`` (e.g. a strategy's own
    input law, for a matched comparison).
    """
    gains = np.asarray(theta.gains if hasattr(theta, "gains") else theta, dtype=complex)
    family = [aligned_inputs(topology, gains, m) for m in correlation_grid]
    family += [np.broadcast_to(k, gains.shape[:-2] + k.shape[-2:]) for k in extra_inputs]
    if not family:
        raise ValueError("empty input family")
    k_all = np.stack(np.broadcast_arrays(*family), axis=-3)  # (..., F, n+1, n+1)
    cov = covariance_from_inputs(topology, gains[..., None, :, :], k_all, check=False)
    cuts = cut_values(cov, topology.n_relays)
    worst = np.min(np.stack(list(cuts.values())), axis=0)
    best = np.max(worst, axis=-1)
    return best if best.ndim else float(best)
