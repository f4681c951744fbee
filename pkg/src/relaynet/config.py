"""Experiment configuration: JSON in, validated dataclasses out."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .channel import NetworkTopology, PathLoss
from .outage import CutsetBound, DecisionRule, Fixed, Selective, Settings
from .rates import DEFAULT_CORRELATION_GRID, StrategyAssignment

DEFAULT_RATE_GRID = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)
MAX_SEED = (1 << 64) - 1


class ConfigError(ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


class ValidationError(ConfigError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class StrategySpec:
    """One curve of the experiment.

    ``kind`` is FullDF, FullCF, Mixed (``df`` lists the DF relays), SCS
    (``rule`` is EmpiricalArgmin, FeasibilityHeuristic or FixedV with ``cf``)
    or CutsetLB.
    """

    kind: str
    df: tuple[int, ...] = ()
    rule: str | None = None
    cf: tuple[int, ...] = ()

    @property
    def label(self) -> str:
        if self.kind == "Mixed":
            return f"Mixed(df={'+'.join(map(str, self.df))})"
        if self.kind == "SCS":
            if self.rule == "FixedV":
                return f"SCS(FixedV=cf{{{'+'.join(map(str, self.cf))}}})"
            return f"SCS({self.rule})"
        return self.kind

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "Mixed":
            out["df"] = list(self.df)
        if self.kind == "SCS":
            out["rule"] = self.rule
            if self.rule == "FixedV":
                out["cf"] = list(self.cf)
        return out

    def resolve(self, n_relays: int, n_inner: int):
        """The estimator spec understood by :func:`relaynet.outage.simulate`."""
        everyone = range(1, n_relays + 1)
        if self.kind == "FullDF":
            return Fixed(StrategyAssignment.from_cf((), n_relays))
        if self.kind == "FullCF":
            return Fixed(StrategyAssignment.from_cf(everyone, n_relays))
        if self.kind == "Mixed":
            return Fixed(StrategyAssignment.from_cf(set(everyone) - set(self.df), n_relays))
        if self.kind == "CutsetLB":
            return CutsetBound()
        if self.rule == "FixedV":
            return Selective(DecisionRule.fixed(StrategyAssignment.from_cf(self.cf, n_relays)))
        if self.rule == "FeasibilityHeuristic":
            return Selective(DecisionRule.feasibility())
        return Selective(DecisionRule.empirical(n_inner))


STRATEGY_KINDS = ("FullDF", "FullCF", "Mixed", "SCS", "CutsetLB")
SCS_RULES = ("EmpiricalArgmin", "FeasibilityHeuristic", "FixedV")


def default_strategies() -> tuple[StrategySpec, ...]:
    return (StrategySpec("FullDF"), StrategySpec("FullCF"), StrategySpec("Mixed", df=(1,)),
            StrategySpec("SCS", rule="EmpiricalArgmin"), StrategySpec("CutsetLB"))


@dataclass(frozen=True)
class ExperimentConfig:
    n_relays: int = 2
    source_power: float = 1.0
    relay_powers: tuple[float, ...] = (10.0, 10.0)
    noise_variances: tuple[float, ...] = (1.0, 1.0, 1.0)
    fading_variance: float = 1.0
    path_loss: PathLoss = PathLoss(0.0, 0.1, 1.0)
    rate_grid: tuple[float, ...] = DEFAULT_RATE_GRID
    strategies: tuple[StrategySpec, ...] = field(default_factory=default_strategies)
    n_outer: int = 2000
    n_inner: int = 500
    compression_grid: tuple[float, ...] = Settings.compression_grid
    rho_grid: tuple[float, ...] = Settings.rho_grid
    correlation_grid: tuple[float, ...] = DEFAULT_CORRELATION_GRID
    seed: int = 0
    output_path: str | None = None
    record_timing: bool = False
    fast: bool = False

    def topology(self) -> NetworkTopology:
        base = NetworkTopology.uniform(self.n_relays, fading_variance=self.fading_variance,
                                       path_loss=self.path_loss)
        return NetworkTopology(self.n_relays, self.source_power, self.relay_powers, self.noise_variances,
                               base.links)

    def settings(self, threads: int | None = None) -> Settings:
        return Settings(compression_grid=self.compression_grid, rho_grid=self.rho_grid,
                        correlation_grid=self.correlation_grid, fast=self.fast, threads=threads or 1)


_KEYS = {f for f in ExperimentConfig.__dataclass_fields__}


def _number(value, name, *, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(name, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ValidationError(name, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _numbers(value, name, *, integer=False) -> tuple:
    if not isinstance(value, list):
        raise ValidationError(name, f"expected a list, got {value!r}")
    return tuple(_number(v, f"{name}[{i}]", integer=integer) for i, v in enumerate(value))


def _per_node(value, name, count) -> tuple[float, ...]:
    vals = (_number(value, name),) * count if not isinstance(value, list) else _numbers(value, name)
    if len(vals) != count:
        raise ValidationError(name, f"expected {count} values, got {len(vals)}")
    return vals


def _strategy(item, i: int, n_relays: int) -> StrategySpec:
    name = f"strategies[{i}]"
    if isinstance(item, str):
        item = {"kind": item}
    if not isinstance(item, dict):
        raise ValidationError(name, f"expected a string or object, got {item!r}")
    extra = set(item) - {"kind", "df", "rule", "cf"}
    if extra:
        raise ValidationError(f"{name}.{sorted(extra)[0]}", "unknown key")
    kind = item.get("kind")
    if kind not in STRATEGY_KINDS:
        raise ValidationError(f"{name}.kind", f"expected one of {STRATEGY_KINDS}, got {kind!r}")

    def relay_set(key, default=()):
        ks = _numbers(item.get(key, list(default)), f"{name}.{key}", integer=True)
        if any(not 1 <= k <= n_relays for k in ks) or len(set(ks)) != len(ks):
            raise ValidationError(f"{name}.{key}", f"relay indices must be distinct in 1..{n_relays}")
        return tuple(sorted(ks))

    allowed = {"Mixed": {"df"}, "SCS": {"rule", "cf"}}.get(kind, set())
    if set(item) - {"kind"} - allowed:
        raise ValidationError(f"{name}.{sorted(set(item) - {'kind'} - allowed)[0]}", f"not valid for {kind}")
    if kind == "Mixed":
        return StrategySpec(kind, df=relay_set("df", (1,) if n_relays else ()))
    if kind != "SCS":
        return StrategySpec(kind)
    rule = item.get("rule", "EmpiricalArgmin")
    if rule not in SCS_RULES:
        raise ValidationError(f"{name}.rule", f"expected one of {SCS_RULES}, got {rule!r}")
    if rule == "FixedV":
        return StrategySpec(kind, rule=rule, cf=relay_set("cf"))
    if "cf" in item:
        raise ValidationError(f"{name}.cf", "only used by FixedV")
    return StrategySpec(kind, rule=rule)


def _load(text: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(data, dict):
        raise ParseError("top level must be a JSON object")
    return data


def parse_config(text: str) -> ExperimentConfig:
    """Validated config from JSON text; missing keys take the two-relay defaults."""
    data = _load(text)
    unknown = sorted(set(data) - _KEYS)
    if unknown:
        raise ParseError("unknown key", field=unknown[0])
    d = ExperimentConfig()
    n = _number(data.get("n_relays", d.n_relays), "n_relays", integer=True)
    if not 0 <= n <= 16:
        raise ValidationError("n_relays", "must lie in 0..16")
    kw: dict[str, Any] = {"n_relays": n}

    kw["source_power"] = _number(data.get("source_power", d.source_power), "source_power")
    if not kw["source_power"] > 0:
        raise ValidationError("source_power", "must be > 0")
    kw["relay_powers"] = _per_node(data.get("relay_powers", 10.0), "relay_powers", n)
    if any(not p > 0 for p in kw["relay_powers"]):
        raise ValidationError("relay_powers", "must be > 0")
    kw["noise_variances"] = _per_node(data.get("noise_variances", 1.0), "noise_variances", n + 1)
    if any(not s > 0 for s in kw["noise_variances"]):
        raise ValidationError("noise_variances", "must be > 0")
    kw["fading_variance"] = _number(data.get("fading_variance", d.fading_variance), "fading_variance")
    if not kw["fading_variance"] > 0:
        raise ValidationError("fading_variance", "must be > 0")

    pl = data.get("path_loss", {})
    if pl is None:
        kw["path_loss"] = None
    else:
        if not isinstance(pl, dict):
            raise ValidationError("path_loss", "expected an object or null")
        extra = set(pl) - {"lo", "hi", "exponent"}
        if extra:
            raise ValidationError(f"path_loss.{sorted(extra)[0]}", "unknown key")
        try:
            kw["path_loss"] = PathLoss(_number(pl.get("lo", 0.0), "path_loss.lo"),
                                       _number(pl.get("hi", 0.1), "path_loss.hi"),
                                       _number(pl.get("exponent", 1.0), "path_loss.exponent"))
        except ValidationError:
            raise
        except ValueError as exc:
            raise ValidationError("path_loss", str(exc)) from None

    grid = _numbers(data.get("rate_grid", list(d.rate_grid)), "rate_grid")
    if not grid:
        raise ValidationError("rate_grid", "must be nonempty")
    if any(r < 0 for r in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("rate_grid", "must be strictly increasing and >= 0")
    kw["rate_grid"] = grid

    strategies = data.get("strategies")
    if strategies is None:
        kw["strategies"] = default_strategies() if n == 2 else tuple(
            s for s in default_strategies() if s.kind != "Mixed")
    else:
        if not isinstance(strategies, list) or not strategies:
            raise ValidationError("strategies", "expected a nonempty list")
        kw["strategies"] = tuple(_strategy(s, i, n) for i, s in enumerate(strategies))
        labels = [s.label for s in kw["strategies"]]
        if len(set(labels)) != len(labels):
            raise ValidationError("strategies", "duplicate strategy")

    kw["n_outer"] = _number(data.get("n_outer", d.n_outer), "n_outer", integer=True)
    if kw["n_outer"] < 100:
        raise ValidationError("n_outer", "must be >= 100")
    kw["n_inner"] = _number(data.get("n_inner", d.n_inner), "n_inner", integer=True)
    if kw["n_inner"] < 1:
        raise ValidationError("n_inner", "must be >= 1")
    if kw["n_inner"] < 100 and any(s.rule == "EmpiricalArgmin" for s in kw["strategies"]):
        raise ValidationError("n_inner", "EmpiricalArgmin needs n_inner >= 100")

    for key in ("compression_grid", "rho_grid", "correlation_grid"):
        vals = _numbers(data.get(key, list(getattr(d, key))), key)
        if not vals:
            raise ValidationError(key, "must be nonempty")
        kw[key] = vals
    if any(not g > 0 for g in kw["compression_grid"]):
        raise ValidationError("compression_grid", "values must be > 0")
    if any(not 0 <= r < 1 for r in kw["rho_grid"]):
        raise ValidationError("rho_grid", "values must lie in [0, 1)")
    if any(not 0 <= r < 1 for r in kw["correlation_grid"]):
        raise ValidationError("correlation_grid", "values must lie in [0, 1)")

    kw["seed"] = _number(data.get("seed", d.seed), "seed", integer=True)
    if not 0 <= kw["seed"] <= MAX_SEED:
        raise ValidationError("seed", "must be a 64-bit unsigned integer")
    out = data.get("output_path", d.output_path)
    if out is not None and not isinstance(out, str):
        raise ValidationError("output_path", "expected a string or null")
    kw["output_path"] = out
    for key in ("record_timing", "fast"):
        val = data.get(key, getattr(d, key))
        if not isinstance(val, bool):
            raise ValidationError(key, "expected true or false")
        kw[key] = val
    return ExperimentConfig(**kw)


def to_json(config: ExperimentConfig) -> dict:
    pl = config.path_loss
    return {
        "n_relays": config.n_relays,
        "source_power": config.source_power,
        "relay_powers": list(config.relay_powers),
        "noise_variances": list(config.noise_variances),
        "fading_variance": config.fading_variance,
        "path_loss": None if pl is None else {"lo": pl.lo, "hi": pl.hi, "exponent": pl.exponent},
        "rate_grid": list(config.rate_grid),
        "strategies": [s.to_json() for s in config.strategies],
        "n_outer": config.n_outer,
        "n_inner": config.n_inner,
        "compression_grid": list(config.compression_grid),
        "rho_grid": list(config.rho_grid),
        "correlation_grid": list(config.correlation_grid),
        "seed": config.seed,
        "output_path": config.output_path,
        "record_timing": config.record_timing,
        "fast": config.fast,
    }


def serialize(config: ExperimentConfig) -> str:
    """Canonical JSON text: every key present, sorted, two-space indent."""
    return json.dumps(to_json(config), indent=2, sort_keys=True) + "\n"
