"""Brute-force and closed-form ground truths for the engines.

Everything here is computed from the defining formulas by plain enumeration:
walk every (initial belief, generator path) pair with the one-step Bayes
filter, accumulate its penalty, and group by where it lands. These functions
deliberately do not import the surface-propagation or expectation engines,
so the two routes to each quantity stay independent.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import inf, log
from typing import Callable, Sequence

import numpy as np

from .errors import CapExceeded, DegenerateObservation
from .hmm import filter_step
from .models import (DR, DYNAMIC, STATIC, GeneratorGrid, SimplexGrid,
                     gamma_at)

ORACLE_CAP_DEFAULT = 10 ** 6


@dataclass(frozen=True)
class OracleReport:
    """One engine-versus-oracle comparison, difference always recorded."""

    quantity: str
    oracle_value: float
    engine_value: float
    instance: str
    abs_diff: float = None  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "abs_diff",
                           abs(self.oracle_value - self.engine_value))


def render_report_csv(reports: Sequence[OracleReport]) -> str:
    lines = ["quantity,oracle_value,engine_value,abs_diff,instance"]
    for r in reports:
        lines.append(",".join([r.quantity, repr(float(r.oracle_value)),
                               repr(float(r.engine_value)),
                               repr(float(r.abs_diff)), r.instance]))
    return "\n".join(lines) + "\n"


def _gen_paths(n_gens: int, n_steps: int, scope: str):
    if scope == STATIC:
        for g in range(n_gens):
            yield (g,) * max(n_steps, 1)
    else:
        yield from itertools.product(range(n_gens), repeat=n_steps)


def _walk_models(prior_beliefs, prior_values, gens: GeneratorGrid, obs,
                 framework: str, scope: str, grid: SimplexGrid | None,
                 cap: int):
    """Every surviving model: (final belief, accumulated raw penalty,
    first generator index). Dead models (zero-probability steps or infinite
    penalty) are skipped."""
    prior_beliefs = np.asarray(prior_beliefs, dtype=np.float64)
    prior_values = np.asarray(prior_values, dtype=np.float64)
    n_steps = len(obs)
    n_models = len(prior_values) * (len(gens) if scope == STATIC
                                    else len(gens) ** n_steps)
    if n_models > cap:
        raise CapExceeded(f"{n_models} models exceed the cap of {cap}")
    gamma_rows = [gamma_at(gens, t, history=tuple(obs[: t - 1]))
                  for t in range(1, n_steps + 1)]
    results = []
    for b0, pen0 in zip(prior_beliefs, prior_values):
        if not np.isfinite(pen0):
            continue
        for path in _gen_paths(len(gens), n_steps, scope):
            penalty = float(pen0)
            if scope == STATIC:
                penalty += float(gens.prior_penalty[path[0]])
            if not np.isfinite(penalty):
                continue
            belief = b0 + 0.0
            dead = False
            for t, y in enumerate(obs, start=1):
                g = path[t - 1]
                gen = gens.candidates[g]
                if scope == DYNAMIC:
                    penalty += float(gamma_rows[t - 1][g])
                    if not np.isfinite(penalty):
                        dead = True
                        break
                mass = float((gen.transition @ belief) @ gen.emission[:, y])
                if mass <= 0.0:
                    dead = True
                    break
                if framework == DR:
                    penalty -= log(mass)
                belief = filter_step(belief, gen, y) + 0.0
                if grid is not None:
                    belief = grid.points[grid.round_to_index(belief)] + 0.0
            if not dead:
                results.append((belief, penalty, path[0] if path else 0))
    return results


def oracle_penalty(prior_beliefs, prior_values, gens: GeneratorGrid,
                   obs: Sequence[int], framework: str, scope: str,
                   grid: SimplexGrid | None = None,
                   cap: int = ORACLE_CAP_DEFAULT) -> dict:
    """Penalty per reachable terminal belief, by direct enumeration.

    Keys are belief bytes (exact tracking) or grid cell indices (when a
    ``grid`` makes the filter re-round after every step); in the static scope
    the key is the (generator index, belief) pair. Values are normalized so
    the global minimum is zero.
    """
    results = _walk_models(prior_beliefs, prior_values, gens, obs, framework,
                           scope, grid, cap)
    table: dict = {}
    for belief, penalty, g in results:
        where = (grid.round_to_index(belief) if grid is not None
                 else belief.tobytes())
        key = (g, where) if scope == STATIC else where
        if key not in table or penalty < table[key]:
            table[key] = penalty
    if not table:
        return table
    floor = min(table.values())
    return {k: v - floor for k, v in table.items()}


def oracle_dr_direct(phi, prior_beliefs, prior_values, gens: GeneratorGrid,
                     obs: Sequence[int], framework: str, scope: str, k: float,
                     k_exp: float = 1.0, grid: SimplexGrid | None = None,
                     cap: int = ORACLE_CAP_DEFAULT) -> float:
    """Worst-case expectation of a terminal-state payoff by raw enumeration.

    Every model contributes its conditional expectation of the payoff minus
    its converted, class-normalized penalty; no surface is ever built.
    """
    phi = np.asarray(phi, dtype=np.float64)
    results = _walk_models(prior_beliefs, prior_values, gens, obs, framework,
                           scope, grid, cap)
    if not results:
        raise DegenerateObservation("every model excludes the observations")
    floor = min(penalty for _, penalty, _ in results)
    best = -inf
    for belief, penalty, _ in results:
        alpha = penalty - floor
        if k_exp == inf:
            rho = 0.0 if alpha <= k else inf
        else:
            rho = (alpha / k) ** k_exp
        best = max(best, float(belief @ phi) - rho)
    return best


def bernoulli_closed_forms(a: float, b: float, obs: Sequence[int],
                           kappa0: Callable[[np.ndarray], np.ndarray]):
    """Closed-form penalty updates for the two-state identity-chain model
    where symbol 0 has probability ``a`` (state 1) or ``b`` (state 2).

    ``kappa0`` maps initial log-odds to initial penalties. Returns two
    vectorized functions of the time-``t`` log-odds: the fixed-prior penalty
    (a pure shift of ``kappa0``) and the data-driven penalty (shift plus
    log-evidence, normalized to minimum zero within each queried batch).
    """
    if not (0 < a < 1 and 0 < b < 1):
        raise ValueError("a and b must lie in (0, 1)")
    n0 = sum(1 for y in obs if y == 0)
    n1 = len(obs) - n0
    shift = n0 * log(a / b) + n1 * log((1 - a) / (1 - b))

    def fixed_prior(ells):
        ells = np.asarray(ells, dtype=np.float64)
        return kappa0(ells - shift)

    def data_driven(ells):
        ells = np.asarray(ells, dtype=np.float64)
        ell0 = ells - shift
        p1 = 1.0 / (1.0 + np.exp(-ell0))
        p2 = 1.0 - p1
        evidence = (p1 * a ** n0 * (1 - a) ** n1
                    + p2 * b ** n0 * (1 - b) ** n1)
        raw = kappa0(ell0) - np.log(evidence)
        finite = raw[np.isfinite(raw)]
        return raw - finite.min()

    return fixed_prior, data_driven
