"""Circularly symmetric complex Gaussian covariance algebra.

Every entropy and mutual information in the package is evaluated here, in
bits, with the complex convention ``h = log2 det(pi e Sigma)``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

LOG2_PI_E = math.log2(math.pi * math.e)

#: Equilibrated condition number above which a conditioning block is singular.
MAX_CONDITION = 1e14


class SingularConditioning(ArithmeticError):
    """Conditioning block is numerically singular (degenerate channel draw)."""


class NonPositiveDeterminant(ArithmeticError):
    pass


class Kind(enum.Enum):
    SOURCE_INPUT = "X"
    RELAY_INPUT = "Xr"
    DF_CODEWORD = "Xdf"
    RELAY_OUTPUT = "Z"
    COMPRESSED_OUTPUT = "Zhat"
    DEST_OUTPUT = "Y"


_KIND_ORDER = {kind: i for i, kind in enumerate(Kind)}
_RELAY_KINDS = {Kind.RELAY_INPUT, Kind.DF_CODEWORD, Kind.RELAY_OUTPUT, Kind.COMPRESSED_OUTPUT}


@functools.total_ordering
@dataclass(frozen=True)
class VariableId:
    """One scalar signal variable of the network.

    ``DF_CODEWORD`` is the superposition codeword a relay would send under DF;
    it only appears as a separate variable when the relay actually uses CF
    while the source still superimposes on it.
    """

    kind: Kind
    k: int | None = None

    def __post_init__(self):
        if (self.kind in _RELAY_KINDS) != (self.k is not None):
            raise ValueError(f"relay index must be given iff {self.kind} is relay-specific")
        if self.k is not None and self.k < 1:
            raise ValueError("relay indices start at 1")

    def __repr__(self):
        return self.kind.value if self.k is None else f"{self.kind.value}{self.k}"

    def _key(self):
        return _KIND_ORDER[self.kind], self.k or 0

    def __lt__(self, other):
        if not isinstance(other, VariableId):
            return NotImplemented
        return self._key() < other._key()


def X() -> VariableId:
    return VariableId(Kind.SOURCE_INPUT)


def Xr(k: int) -> VariableId:
    return VariableId(Kind.RELAY_INPUT, k)


def Xdf(k: int) -> VariableId:
    return VariableId(Kind.DF_CODEWORD, k)


def Z(k: int) -> VariableId:
    return VariableId(Kind.RELAY_OUTPUT, k)


def Zhat(k: int) -> VariableId:
    return VariableId(Kind.COMPRESSED_OUTPUT, k)


def Y() -> VariableId:
    return VariableId(Kind.DEST_OUTPUT)


@dataclass(frozen=True)
class CovarianceMap:
    """Joint covariance of named variables.

    ``matrix`` may carry leading batch dimensions, ``(..., dim, dim)``; every
    function below then works elementwise over the batch.
    """

    matrix: np.ndarray
    index: Mapping[VariableId, int]
    _check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "index", dict(self.index))
        if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
            raise ValueError(f"covariance must be square, got shape {m.shape}")
        if sorted(self.index.values()) != list(range(m.shape[-1])):
            raise ValueError("index must be a bijection onto 0..dim-1")
        if self._check:
            self.validate()

    @property
    def dim(self) -> int:
        return self.matrix.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.matrix.shape[:-2]

    def validate(self, herm_tol: float = 1e-12, psd_tol: float = 1e-9) -> None:
        m = self.matrix
        scale = np.abs(m).max(axis=(-2, -1), initial=0.0)
        asym = np.abs(m - np.swapaxes(m.conj(), -1, -2)).max(axis=(-2, -1), initial=0.0)
        if np.any(asym > herm_tol * np.maximum(scale, 1e-300)):
            raise ValueError("covariance is not Hermitian")
        eig = np.linalg.eigvalsh(m)
        if np.any(eig[..., 0] < -psd_tol * np.maximum(eig[..., -1], 0.0)):
            raise ValueError("covariance is not positive semidefinite")

    def indices(self, variables: Iterable[VariableId]) -> list[int]:
        try:
            return sorted(self.index[v] for v in variables)
        except KeyError as exc:
            raise KeyError(f"variable {exc.args[0]!r} not in covariance map") from None

    def block(self, rows: Iterable[VariableId], cols: Iterable[VariableId] | None = None) -> np.ndarray:
        r = self.indices(rows)
        c = r if cols is None else self.indices(cols)
        return self.matrix[..., r, :][..., :, c]

    def permuted(self, order: list[VariableId]) -> "CovarianceMap":
        """Same joint law with variables re-indexed in ``order``."""
        idx = [self.index[v] for v in order]
        m = self.matrix[..., idx, :][..., :, idx]
        return CovarianceMap(m, {v: i for i, v in enumerate(order)}, _check=False)


def _as_set(vs) -> frozenset[VariableId]:
    if isinstance(vs, VariableId):
        return frozenset((vs,))
    return frozenset(vs)


def _equilibrated_condition(block: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.abs(np.diagonal(block, axis1=-2, axis2=-1)).real)
    d = np.where(d > 0, d, 1.0)
    eq = block / (d[..., :, None] * d[..., None, :])
    eig = np.linalg.eigvalsh(eq)
    with np.errstate(divide="ignore"):
        return np.where(eig[..., 0] > 0, eig[..., -1] / eig[..., 0], np.inf)


def conditional_covariance(cov: CovarianceMap, a, c=()) -> np.ndarray:
    """Covariance of ``a`` given ``c`` via the Schur complement.

    Raises SingularConditioning when the conditioning block has equilibrated
    condition number above ``MAX_CONDITION``.
    """
    a, c = _as_set(a), _as_set(c)
    if not a:
        raise ValueError("conditioned set must be nonempty")
    if a & c:
        raise ValueError(f"sets overlap: {sorted(a & c)}")
    saa = cov.block(a)
    if not c:
        return saa
    scc = cov.block(c)
    if np.any(_equilibrated_condition(scc) > MAX_CONDITION):
        raise SingularConditioning(f"conditioning on {sorted(c)} is numerically singular")
    sac = cov.block(a, c)
    out = saa - sac @ np.linalg.solve(scc, np.swapaxes(sac.conj(), -1, -2))
    return 0.5 * (out + np.swapaxes(out.conj(), -1, -2))


def conditional_entropy(cov: CovarianceMap, a, c=()) -> np.ndarray | float:
    """h(a | c) in bits."""
    sigma = conditional_covariance(cov, a, c)
    sign, logdet = np.linalg.slogdet(sigma)
    if np.any(sign.real <= 0) or np.any(~np.isfinite(logdet)):
        raise NonPositiveDeterminant(f"conditional covariance of {sorted(_as_set(a))} is not positive definite")
    out = sigma.shape[-1] * LOG2_PI_E + logdet / math.log(2)
    return out if np.ndim(out) else float(out)


def conditional_mi(cov: CovarianceMap, a, b, c=()) -> np.ndarray | float:
    """I(a; b | c) in bits, clamped at zero from below."""
    a, b, c = _as_set(a), _as_set(b), _as_set(c)
    if not a or not b:
        raise ValueError("both arguments of the mutual information must be nonempty")
    if a & b or a & c or b & c:
        raise ValueError("sets must be pairwise disjoint")
    val = conditional_entropy(cov, a, c) - conditional_entropy(cov, a, b | c)
    out = np.maximum(val, 0.0)
    return out if np.ndim(out) else float(out)


class EntropyTable:
    """Memoized joint entropies of one (batched) covariance map.

    Conditional quantities are assembled from cached joint log-determinants,
    ``I(A;B|C) = h(AC) + h(BC) - h(ABC) - h(C)``, so a subset lattice sweep
    factors each joint block exactly once. Numerically singular blocks give
    NaN entries instead of raising; callers decide how to treat those draws.
    Values are not clamped.
    """

    def __init__(self, cov: CovarianceMap):
        self.cov = cov
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def _key(self, vs: frozenset[VariableId]) -> tuple[int, ...]:
        return tuple(self.cov.indices(vs))

    def h(self, vs) -> np.ndarray:
        vs = _as_set(vs)
        if not vs:
            return np.zeros(())
        key = self._key(vs)
        out = self._cache.get(key)
        if out is None:
            out = self._joint_entropy(vs, key)
            self._cache[key] = out
        return out

    def _joint_entropy(self, vs, key) -> np.ndarray:
        return hermitian_entropy(self.cov.matrix[..., key, :][..., :, key])

    def mi(self, a, b, c=()) -> np.ndarray:
        a, b, c = _as_set(a), _as_set(b), _as_set(c)
        if not a or not b:
            return np.zeros(())
        return self.h(a | c) + self.h(b | c) - self.h(a | b | c) - self.h(c)


def hermitian_entropy(block: np.ndarray) -> np.ndarray:
    """Joint entropy (bits) of Hermitian PD blocks ``(..., k, k)``; NaN where singular.

    Uses a Cholesky factorization that always eliminates the variable with the
    largest remaining conditional variance. Link gains span many orders of
    magnitude, and a fixed elimination order then loses up to 1e-9 bits.
    A block is singular when some pivot falls below its own variance / 1e14.
    """
    a = np.array(block, dtype=complex)
    k = a.shape[-1]
    rows = np.arange(k)
    var = np.diagonal(a, axis1=-2, axis2=-1).real.copy()
    active = np.ones(var.shape, dtype=bool)
    logdet = np.zeros(a.shape[:-2])
    ok = np.all(var > 0, axis=-1)
    for _ in range(k):
        d = np.where(active, np.diagonal(a, axis1=-2, axis2=-1).real, -np.inf)
        j = np.argmax(d, axis=-1)[..., None]
        piv = np.take_along_axis(d, j, axis=-1)[..., 0]
        ok &= piv > np.take_along_axis(var, j, axis=-1)[..., 0] / MAX_CONDITION
        piv = np.where(piv > 0, piv, 1.0)
        logdet += np.log2(piv)
        active &= rows != j
        col = np.take_along_axis(a, j[..., None], axis=-1)[..., 0]
        col = np.where(active, col, 0)
        a -= col[..., :, None] * col[..., None, :].conj() / piv[..., None, None]
    return np.where(ok, k * LOG2_PI_E + logdet, np.nan)


class DestinationFactoredTable(EntropyTable):
    """Entropy table for many destination-side draws sharing one relay-side law.

    The destination output ``y = g . inputs + noise`` is the only variable that
    depends on the destination-only gains ``g``. Joint entropies containing it
    split as ``h(W, y) = h(W) + log2(pi e (g Cov(inputs|W) g^H + noise))``,
    so each extra draw costs one quadratic form. ``cov`` holds the relay-side
    law (its ``y`` row is never read). ``dest_gains`` has shape
    ``lead + (n_draws, n_inputs)`` where ``lead`` is a leading prefix of
    ``cov``'s batch shape; entropies come out as ``batch_shape + (n_draws,)``.
    """

    def __init__(self, cov: CovarianceMap, y: VariableId, inputs: list[VariableId],
                 dest_gains: np.ndarray, noise: float):
        super().__init__(cov)
        self.y = y
        self.inputs = list(inputs)
        g = np.asarray(dest_gains, dtype=complex)
        lead = g.shape[:-2]
        if cov.batch_shape[:len(lead)] != lead or g.shape[-1] != len(self.inputs):
            raise ValueError(f"gains of shape {g.shape} do not match covariance batch {cov.batch_shape}")
        self.noise = float(noise)
        self._relay = EntropyTable(cov)
        # q = sum_ij m_ij k_ij with m = g^T conj(g), written as one real product
        m = g[..., :, None] * g[..., None, :].conj()
        m = m.reshape(g.shape[:-1] + (-1,))
        self._m = np.concatenate([m.real, -m.imag], axis=-1)
        self._lead = lead

    def h(self, vs) -> np.ndarray:
        vs = _as_set(vs)
        if self.y not in vs:
            out = self._relay.h(vs)
            return out[..., None] if out.ndim else out
        return super().h(vs)

    def _joint_entropy(self, vs, key) -> np.ndarray:
        rest = vs - {self.y}
        h_rest = self._relay.h(rest)
        k_in = self.cov.block(self.inputs)
        if rest:
            c_rest_in = self.cov.block(rest, self.inputs)
            s_rest = self.cov.block(rest)
            with np.errstate(all="ignore"):
                try:
                    sol = np.linalg.solve(s_rest, c_rest_in)
                except np.linalg.LinAlgError:
                    sol = np.full(c_rest_in.shape, np.nan, dtype=complex)
            k_in = k_in - np.swapaxes(c_rest_in.conj(), -1, -2) @ sol
        q = self._quadratic(k_in)
        q = np.maximum(q, 0.0)
        h_rest = h_rest[..., None] if np.ndim(h_rest) else h_rest
        return h_rest + LOG2_PI_E + np.log2(q + self.noise)

    def _quadratic(self, k_in: np.ndarray) -> np.ndarray:
        """``g_n K g_n^H`` for every draw ``n``, shape ``batch_shape + (n_draws,)``."""
        batch = self.cov.batch_shape
        lead = batch[:len(self._lead)]
        k = np.broadcast_to(k_in, batch + k_in.shape[-2:]).reshape(lead + (-1, k_in.shape[-1] ** 2))
        k = np.concatenate([k.real, k.imag], axis=-1)
        q = self._m @ np.swapaxes(k, -1, -2)  # lead + (n_draws, prod(rest))
        q = np.moveaxis(q, -2, -1)
        return q.reshape(batch + (q.shape[-1],))
