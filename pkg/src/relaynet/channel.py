"""Composite Gaussian relay network: topology, fading draws, joint covariance.

Node 0 is the source, nodes ``1..N`` the relays and node ``N+1`` the
destination. Gains are stored as ``gains[..., tx, rx]`` with ``tx`` in
``0..N`` and ``rx`` in ``0..N+1``; entries that are not links stay zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .covariance import CovarianceMap, VariableId, X, Xdf, Xr, Y, Z, Zhat


class ModelError(ValueError):
    """Invalid network description or input/compression policy."""


@dataclass(frozen=True)
class PathLoss:
    """Random distance ``d ~ U(lo, hi)``; the link gain is divided by ``d**exponent``."""

    lo: float = 0.0
    hi: float = 0.1
    exponent: float = 1.0

    def __post_init__(self):
        if not (0 <= self.lo < self.hi):
            raise ModelError(f"path loss needs 0 <= lo < hi, got ({self.lo}, {self.hi})")
        if self.exponent < 0:
            raise ModelError("path loss exponent must be >= 0")


@dataclass(frozen=True)
class GainModel:
    kind: str = "rayleigh"
    variance: float = 1.0
    value: complex = 0j
    path_loss: PathLoss | None = None

    def __post_init__(self):
        if self.kind not in ("rayleigh", "constant"):
            raise ModelError(f"unknown gain kind {self.kind!r}")
        if self.kind == "rayleigh" and not self.variance > 0:
            raise ModelError("Rayleigh variance must be > 0")

    @classmethod
    def rayleigh(cls, variance: float = 1.0, path_loss: PathLoss | None = None) -> "GainModel":
        return cls("rayleigh", variance, 0j, path_loss)

    @classmethod
    def constant(cls, value: complex) -> "GainModel":
        return cls("constant", 1.0, complex(value), None)


def possible_links(n_relays: int) -> list[tuple[int, int]]:
    dest = n_relays + 1
    return [(t, r) for t in range(n_relays + 1) for r in range(1, dest + 1) if t != r]


@dataclass(frozen=True)
class NetworkTopology:
    n_relays: int
    source_power: float
    relay_powers: tuple[float, ...]
    noise_variances: tuple[float, ...]  # relays 1..N, then the destination
    links: Mapping[tuple[int, int], GainModel]
    hidden_from_relays: frozenset[tuple[int, int]] = field(default=None)

    def __post_init__(self):
        n = self.n_relays
        object.__setattr__(self, "relay_powers", tuple(float(p) for p in self.relay_powers))
        object.__setattr__(self, "noise_variances", tuple(float(s) for s in self.noise_variances))
        object.__setattr__(self, "links", dict(self.links))
        if self.hidden_from_relays is None:
            hidden = frozenset(l for l in self.links if l[1] == n + 1)
        else:
            hidden = frozenset(tuple(l) for l in self.hidden_from_relays)
        object.__setattr__(self, "hidden_from_relays", hidden)
        if n < 0:
            raise ModelError("n_relays must be >= 0")
        if not self.source_power > 0:
            raise ModelError("source_power must be > 0")
        if len(self.relay_powers) != n or any(not p > 0 for p in self.relay_powers):
            raise ModelError("relay_powers must hold N positive values")
        if len(self.noise_variances) != n + 1 or any(not s > 0 for s in self.noise_variances):
            raise ModelError("noise_variances must hold N+1 positive values")
        allowed = set(possible_links(n))
        bad = [l for l in self.links if l not in allowed]
        if bad:
            raise ModelError(f"invalid links (self-links or unknown nodes): {bad}")
        if not hidden <= set(self.links):
            raise ModelError("hidden_from_relays must name existing links")
        if any(rx != n + 1 for _, rx in hidden):
            raise ModelError("relays observe every link into a relay; only links into the destination can be hidden")

    @classmethod
    def two_relay(cls, source_power=1.0, relay_power=10.0, fading_variance=1.0, noise_variance=1.0,
                  path_loss: PathLoss | None = PathLoss()) -> "NetworkTopology":
        """Slow-fading two-relay network with random source-to-relay-1 distance."""
        return cls.uniform(2, source_power, relay_power, fading_variance, noise_variance, path_loss)

    @classmethod
    def uniform(cls, n_relays, source_power=1.0, relay_power=10.0, fading_variance=1.0,
                noise_variance=1.0, path_loss: PathLoss | None = PathLoss()) -> "NetworkTopology":
        links = {l: GainModel.rayleigh(fading_variance) for l in possible_links(n_relays)}
        if n_relays >= 1 and path_loss is not None:
            links[(0, 1)] = GainModel.rayleigh(fading_variance, path_loss)
        return cls(n_relays, source_power, (relay_power,) * n_relays,
                   (noise_variance,) * (n_relays + 1), links)

    @property
    def destination(self) -> int:
        return self.n_relays + 1

    @property
    def relays(self) -> tuple[int, ...]:
        return tuple(range(1, self.n_relays + 1))

    @property
    def powers(self) -> np.ndarray:
        return np.array((self.source_power,) + self.relay_powers)

    @property
    def gain_shape(self) -> tuple[int, int]:
        return (self.n_relays + 1, self.n_relays + 2)

    def noise(self, node: int) -> float:
        return self.noise_variances[node - 1]

    def visibility(self) -> np.ndarray:
        """Boolean ``(N+1, N+2)`` mask of links whose gains the relays know."""
        mask = np.zeros(self.gain_shape, dtype=bool)
        for l in self.links:
            mask[l] = l not in self.hidden_from_relays
        return mask

    def hidden_mask(self) -> np.ndarray:
        """Boolean ``(N+1, N+2)`` mask of links only the destination knows."""
        mask = np.zeros(self.gain_shape, dtype=bool)
        for l in self.hidden_from_relays:
            mask[l] = True
        return mask


@dataclass(frozen=True)
class RelayCSI:
    """The part of a draw visible at the relays; hidden gains are zero here."""

    gains: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gains", np.where(self.visible, self.gains, 0))


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of every link gain; absent links are zero."""

    gains: np.ndarray
    visible: np.ndarray
    hidden: np.ndarray

    def relay_side(self) -> RelayCSI:
        return RelayCSI(self.gains, self.visible)

    def with_hidden(self, hidden_gains: np.ndarray) -> "ChannelRealization":
        """Keep the relay-visible gains, take the destination-only ones from ``hidden_gains``."""
        return ChannelRealization(np.where(self.hidden, hidden_gains, self.gains), self.visible, self.hidden)


def sample_gains(topology: NetworkTopology, rng: np.random.Generator, size=()) -> np.ndarray:
    """Draw every link gain once; returns ``size + (N+1, N+2)`` complex."""
    size = (size,) if isinstance(size, int) else tuple(size)
    links = sorted(topology.links)
    normals = rng.standard_normal(size + (len(links), 2))
    lossy = [l for l in links if topology.links[l].path_loss is not None]
    uniforms = rng.random(size + (len(lossy),))
    gains = np.zeros(size + topology.gain_shape, dtype=complex)
    for i, l in enumerate(links):
        m = topology.links[l]
        if m.kind == "rayleigh":
            g = math.sqrt(m.variance / 2) * (normals[..., i, 0] + 1j * normals[..., i, 1])
        else:
            g = np.full(size, m.value, dtype=complex)
        if m.path_loss is not None:
            pl = m.path_loss
            d = pl.lo + (pl.hi - pl.lo) * uniforms[..., lossy.index(l)]
            with np.errstate(divide="ignore", invalid="ignore"):
                g = g / d ** pl.exponent
        gains[..., l[0], l[1]] = g
    return gains


def sample_realization(topology: NetworkTopology, rng: np.random.Generator) -> ChannelRealization:
    return ChannelRealization(sample_gains(topology, rng), topology.visibility(), topology.hidden_mask())


@dataclass(frozen=True)
class InputPolicy:
    """Correlation of the source input with each relay's DF codeword.

    The source is ``X = sum_k c_k X_k^(1) + X'`` with independent DF codewords,
    so the codewords it superimposes on must satisfy ``sum rho_k^2 < 1``.
    """

    df_correlations: tuple[float, ...]

    def __post_init__(self):
        rho = tuple(float(r) for r in self.df_correlations)
        object.__setattr__(self, "df_correlations", rho)
        if any(not 0 <= r < 1 for r in rho):
            raise ModelError("DF correlations must lie in [0, 1)")

    @classmethod
    def independent(cls, n_relays: int) -> "InputPolicy":
        return cls((0.0,) * n_relays)

    @classmethod
    def coherent(cls, rho: float, n_relays: int, superposed: Iterable[int]) -> "InputPolicy":
        """Total correlation ``rho`` split evenly over the ``superposed`` codewords."""
        sup = sorted(set(superposed))
        per = rho / math.sqrt(len(sup)) if sup else 0.0
        return cls(tuple(per if k in sup else 0.0 for k in range(1, n_relays + 1)))


@dataclass(frozen=True)
class CompressionPolicy:
    sigma_hat_sq: Mapping[int, float]

    def __post_init__(self):
        object.__setattr__(self, "sigma_hat_sq", dict(sorted(self.sigma_hat_sq.items())))
        if any(not v > 0 for v in self.sigma_hat_sq.values()):
            raise ModelError("compression noise variances must be > 0")

    @classmethod
    def matched(cls, topology: NetworkTopology, cf: Iterable[int]) -> "CompressionPolicy":
        """Compression noise equal to each relay's receiver noise."""
        return cls({k: topology.noise(k) for k in cf})


def variable_order(n_relays: int, cf: Iterable[int], scs: bool = False) -> list[VariableId]:
    cf = sorted(cf)
    order = [X()] + [Xr(k) for k in range(1, n_relays + 1)]
    if scs:
        order += [Xdf(k) for k in cf]
    order += [Z(k) for k in range(1, n_relays + 1)]
    order += [Zhat(k) for k in cf]
    return order + [Y()]


def input_covariance(topology: NetworkTopology, inputs: InputPolicy, cf: Iterable[int],
                     scs: bool = False) -> np.ndarray:
    """Covariance of ``(X, X_1..X_N[, X^(1)_k for CF k])``.

    Without ``scs`` the source only superimposes on the DF relays' inputs. With
    ``scs`` it superimposes on every relay's DF codeword; CF relays then send an
    independent input and their DF codeword is an extra, unsent variable.
    """
    n = topology.n_relays
    cf = sorted(cf)
    if len(inputs.df_correlations) != n:
        raise ModelError("input policy must give one correlation per relay")
    p = topology.powers
    k = np.diag(np.concatenate([p, p[cf]])) if scs else np.diag(p)
    superposed = range(1, n + 1) if scs else [j for j in range(1, n + 1) if j not in cf]
    rho = inputs.df_correlations
    if sum(rho[j - 1] ** 2 for j in superposed) >= 1:
        raise ModelError("superposed DF correlations must satisfy sum rho^2 < 1")
    for j in superposed:
        col = j if j not in cf else n + 1 + cf.index(j)
        k[0, col] = k[col, 0] = rho[j - 1] * math.sqrt(p[0] * p[j])
    return k


def covariance_from_inputs(topology: NetworkTopology, gains: np.ndarray, k_in: np.ndarray,
                           cf: Iterable[int] = (), sigma_hat_sq=None, scs: bool = False,
                           check: bool = True) -> CovarianceMap:
    """Joint covariance for an explicit (possibly batched) input covariance.

    ``k_in`` covers ``(X, X_1..X_N)`` plus, with ``scs``, the unsent DF
    codewords of the CF relays; ``sigma_hat_sq`` is ``(..., |cf|)``.
    """
    n = topology.n_relays
    cf = sorted(cf)
    m = len(cf)
    gains = np.asarray(gains, dtype=complex)
    k_in = np.asarray(k_in)
    sig = np.zeros((m,)) if sigma_hat_sq is None else np.asarray(sigma_hat_sq, dtype=float)
    if sig.shape[-1:] != (m,):
        raise ModelError("one compression variance per CF relay is required")
    if m and np.any(~(sig > 0)):
        raise ModelError("compression noise variances must be > 0")
    n_u = n + 1 + (m if scs else 0)
    if k_in.shape[-2:] != (n_u, n_u):
        raise ModelError(f"input covariance must be {n_u}x{n_u}")
    batch = np.broadcast_shapes(gains.shape[:-2], k_in.shape[:-2], sig.shape[:-1])
    dim = n_u + n + m + 1
    # w = A u + noise, with u the inputs
    a = np.zeros(batch + (dim, n_u), dtype=complex)
    a[..., np.arange(n_u), np.arange(n_u)] = 1
    tx = gains[..., :, :]  # (..., N+1, N+2)
    for k in range(1, n + 1):
        a[..., n_u + k - 1, : n + 1] = tx[..., :, k]
    for i, k in enumerate(cf):
        a[..., n_u + n + i, : n + 1] = tx[..., :, k]
    a[..., dim - 1, : n + 1] = tx[..., :, n + 1]
    cov = a @ k_in @ np.swapaxes(a.conj(), -1, -2)
    relay_noise = np.array(topology.noise_variances[:n])
    zi = n_u + np.arange(n)
    cov[..., zi, zi] += relay_noise
    for i, k in enumerate(cf):
        zh = n_u + n + i
        cov[..., zh, zh] += relay_noise[k - 1] + sig[..., i]
        cov[..., zh, n_u + k - 1] += relay_noise[k - 1]
        cov[..., n_u + k - 1, zh] += relay_noise[k - 1]
    cov[..., dim - 1, dim - 1] += topology.noise_variances[n]
    order = variable_order(n, cf, scs)
    return CovarianceMap(cov, {v: i for i, v in enumerate(order)}, _check=check)


def assemble_covariance(topology: NetworkTopology, theta, inputs: InputPolicy,
                        compression: CompressionPolicy, cf: Iterable[int], *, scs: bool = False,
                        check: bool = True) -> CovarianceMap:
    """Joint covariance of inputs, relay outputs, compressed outputs and Y.

    ``theta`` is a ChannelRealization, RelayCSI or raw gain array. Compression
    must be defined exactly on the CF set ``cf``.
    """
    cf = sorted(cf)
    if set(compression.sigma_hat_sq) != set(cf):
        raise ModelError(f"compression defined on {sorted(compression.sigma_hat_sq)}, CF relays are {cf}")
    gains = theta.gains if hasattr(theta, "gains") else theta
    k_in = input_covariance(topology, inputs, cf, scs)
    sig = np.array([compression.sigma_hat_sq[k] for k in cf])
    try:
        return covariance_from_inputs(topology, gains, k_in, cf, sig, scs, check=check)
    except ValueError as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(str(exc)) from exc
