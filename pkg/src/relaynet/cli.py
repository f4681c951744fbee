"""Command-line experiment driver: JSON config in, CSV of outage curves out."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .channel import ModelError
from .config import MAX_SEED, ConfigError, ExperimentConfig, ValidationError, parse_config
from .outage import SimulationError, resolve_threads, simulate

log = logging.getLogger("relaynet")

HEADER = ("strategy", "r", "epsilon_hat", "ci_lo", "ci_hi", "n_outer", "n_inner", "wall_time_ms")


def _sig9(x: float) -> float:
    return float(f"{x:.9g}")


@dataclass(frozen=True)
class ResultRow:
    """One point of one curve, stored at the precision it is written with."""

    strategy: str
    r: float
    epsilon_hat: float
    ci_lo: float
    ci_hi: float
    n_outer: int
    n_inner: int
    wall_time_ms: float = 0.0

    def __post_init__(self):
        for name in ("r", "epsilon_hat", "ci_lo", "ci_hi", "wall_time_ms"):
            object.__setattr__(self, name, _sig9(float(getattr(self, name))))
        if not 0 <= self.ci_lo <= self.epsilon_hat <= self.ci_hi <= 1:
            raise ValueError(f"row violates CI ordering: {self}")
        if "," in self.strategy or "\n" in self.strategy:
            raise ValueError(f"strategy label {self.strategy!r} is not CSV-safe")

    def cells(self) -> list[str]:
        return [self.strategy, f"{self.r:.9g}", f"{self.epsilon_hat:.9g}", f"{self.ci_lo:.9g}",
                f"{self.ci_hi:.9g}", str(self.n_outer), str(self.n_inner), f"{self.wall_time_ms:.9g}"]


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> list[ResultRow]:
    """Every (strategy, r) row of the experiment, on one coupled set of draws."""
    topology = config.topology()
    specs = [s.resolve(config.n_relays, config.n_inner) for s in config.strategies]
    results = simulate(topology, specs, config.rate_grid, config.n_outer, config.n_inner, config.seed,
                       config.settings(resolve_threads(threads)))
    rows = []
    for strat, (ests, seconds) in zip(config.strategies, results):
        log.info("%s: %.1f ms", strat.label, 1e3 * seconds)
        ms = 1e3 * seconds / len(ests) if config.record_timing else 0.0
        for e in ests:
            rows.append(ResultRow(strat.label, e.r, e.epsilon_hat, e.ci[0], e.ci[1], e.n_outer, e.n_inner, ms))
    return sorted(rows, key=lambda row: (row.strategy, row.r))


def format_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for row in sorted(rows, key=lambda row: (row.strategy, row.r)):
        writer.writerow(row.cells())
    return buf.getvalue()


def emit_csv(rows, path) -> None:
    """Write rows sorted by (strategy, r) with 9 significant digits and LF line endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(rows))


def read_csv(path) -> list[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != HEADER:
            raise ValueError(f"unexpected header {header}")
        return [ResultRow(s, float(r), float(e), float(lo), float(hi), int(no), int(ni), float(ms))
                for s, r, e, lo, hi, no, ni, ms in reader]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relaynet", description="Outage curves of relay coding strategies.")
    p.add_argument("--config", type=Path, help="JSON experiment config (default: built-in two-relay setup)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker processes (default: $RELAYNET_THREADS or 1)")
    p.add_argument("--fast", action="store_true", help="skip compression optimization, use matched noise")
    p.add_argument("--output", type=Path, help="CSV path (default: config output_path, else stdout)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else "{}"
        config = parse_config(text)
        if args.seed is not None:
            config = _with_seed(config, args.seed)
        if args.fast:
            config = dataclasses.replace(config, fast=True)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        threads = args.threads if args.threads is not None else _env_threads()
        rows = run_experiment(config, threads)
        out = args.output or config.output_path
        if out:
            emit_csv(rows, out)
        else:
            sys.stdout.write(format_csv(rows))
    except (ConfigError, ModelError, SimulationError, OSError) as exc:
        print(f"relaynet: error: {exc}", file=sys.stderr)
        return 2
    return 0


def _with_seed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    if not 0 <= seed <= MAX_SEED:
        raise ValidationError("seed", "must be a 64-bit unsigned integer")
    return dataclasses.replace(config, seed=seed)


def _env_threads() -> int:
    raw = os.environ.get("RELAYNET_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"RELAYNET_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("RELAYNET_THREADS must be >= 1")
    return n


if __name__ == "__main__":
    sys.exit(main())
