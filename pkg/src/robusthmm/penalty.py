"""Forward propagation of penalty surfaces over beliefs.

Two representations are maintained:

* grid mode: values live on a fixed :class:`~robusthmm.models.SimplexGrid`;
  each step pushes every (cell, generator) pair through the Bayes update and
  rounds the image to the nearest cell, so the preimage of a cell is exactly
  the set of sources that map into it,
* exact-tree mode: values live on the finite set of exactly reachable
  beliefs, with no rounding; this is the ground truth that grid runs are
  measured against.

In the static-generator setting the surface is indexed by (belief, candidate)
pairs and each candidate's slice evolves on its own; in the dynamic setting
each step additionally minimizes over the candidate choice. The data-driven
("dr") framework subtracts the observation log-likelihood of each step; the
fixed-prior ("up") framework does not. Every emitted surface is renormalized
to minimum zero and the subtracted amount is recorded in the step report.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import log
from typing import Sequence

import numpy as np

from .errors import CapExceeded, InfeasibleSurface
from .models import (DR, DYNAMIC, STATIC, UP, GeneratorGrid, PriorSpec,
                     SimplexGrid, gamma_at, normalize_penalties)

EXACT_CAP_DEFAULT = 10 ** 6


@dataclass(frozen=True, eq=False)
class PenaltySurface:
    """Penalty per grid cell (dynamic-generator scope)."""

    grid: SimplexGrid
    values: np.ndarray
    time: int

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.shape != (len(self.grid),):
            raise ValueError("one value per grid point required")
        _check_normalized(vals)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def infeasible(self) -> bool:
        return not np.isfinite(self.values).any()


@dataclass(frozen=True, eq=False)
class ExtendedPenaltySurface:
    """Penalty per (grid cell, candidate) pair (static-generator scope)."""

    grid: SimplexGrid
    gens: GeneratorGrid
    values: np.ndarray
    time: int

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.shape != (len(self.grid), len(self.gens)):
            raise ValueError("values must be (n_points, n_candidates)")
        _check_normalized(vals)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def infeasible(self) -> bool:
        return not np.isfinite(self.values).any()

    def collapse(self) -> PenaltySurface:
        """Belief penalty obtained by minimizing over the candidate axis."""
        return PenaltySurface(grid=self.grid, values=self.values.min(axis=1),
                              time=self.time)


@dataclass(frozen=True, eq=False)
class ExactSurface:
    """Penalty on exactly tracked beliefs; ``gen_ids`` is present iff the
    generator scope is static (one row per tracked (belief, candidate))."""

    beliefs: np.ndarray
    values: np.ndarray
    gen_ids: np.ndarray | None
    time: int

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.beliefs, dtype=np.float64)) + 0.0
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if b.ndim != 2 or v.shape != (b.shape[0],):
            raise ValueError("beliefs must be (n, N) with one value per row")
        g = self.gen_ids
        if g is not None:
            g = np.ascontiguousarray(np.asarray(g, dtype=np.int64))
            if g.shape != v.shape:
                raise ValueError("one generator id per row required")
            g.flags.writeable = False
        _check_normalized(v)
        b.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "beliefs", b)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "gen_ids", g)

    def __len__(self) -> int:
        return len(self.values)

    def collapse(self) -> "ExactSurface":
        """Minimize over candidates, leaving one row per distinct belief."""
        if self.gen_ids is None:
            return self
        merged: dict[bytes, tuple[np.ndarray, float]] = {}
        for row, val in zip(self.beliefs, self.values):
            key = row.tobytes()
            if key not in merged or val < merged[key][1]:
                merged[key] = (row, float(val))
        beliefs = np.array([bv[0] for bv in merged.values()])
        values = np.array([bv[1] for bv in merged.values()])
        order = _belief_order(beliefs)
        return ExactSurface(beliefs=beliefs[order], values=values[order],
                            gen_ids=None, time=self.time)

    def as_lookup(self) -> dict:
        """Mapping (belief bytes[, gen id]) -> value, for comparisons."""
        if self.gen_ids is None:
            return {b.tobytes(): float(v)
                    for b, v in zip(self.beliefs, self.values)}
        return {(int(g), b.tobytes()): float(v)
                for g, b, v in zip(self.gen_ids, self.beliefs, self.values)}


@dataclass(frozen=True)
class StepReport:
    """Bookkeeping for one forward step: the normalization subtracted, the
    count of unreachable cells, and per-cell argmin provenance."""

    time: int
    m_t: float
    infeasible_cells: int
    argmin_src: np.ndarray
    argmin_gen: np.ndarray


def _check_normalized(values: np.ndarray, atol: float = 1e-12) -> None:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return
    if abs(finite.min()) > atol or np.any(finite < 0):
        raise ValueError("surface is not normalized to minimum zero")


def _belief_order(beliefs: np.ndarray, gen_ids: np.ndarray | None = None):
    keys = [beliefs[:, i] for i in range(beliefs.shape[1] - 1, -1, -1)]
    if gen_ids is not None:
        keys.append(gen_ids)
    return np.lexsort(tuple(keys))


def project(initial, grid: SimplexGrid, time: int = 0) -> PenaltySurface:
    """Evaluate an initial penalty on the grid and normalize to minimum zero.

    ``initial`` is either a callable on belief vectors or an array of values
    aligned with the grid.
    """
    if callable(initial):
        values = np.array([float(initial(p)) for p in grid.points])
    else:
        values = np.asarray(initial, dtype=np.float64)
        if values.shape != (len(grid),):
            raise ValueError("one initial value per grid point required")
    return PenaltySurface(grid=grid, values=normalize_penalties(values),
                          time=time)


def initial_grid_surface(prior: PriorSpec, gens: GeneratorGrid,
                         grid: SimplexGrid):
    """Time-zero surface of the kind matching the prior's generator scope."""
    if prior.generator_mode == DYNAMIC:
        return project(prior.initial_penalty, grid)
    values = prior.initial_penalty[:, None] + gens.prior_penalty[None, :]
    return ExtendedPenaltySurface(grid=grid, gens=gens,
                                  values=normalize_penalties(values), time=0)


def forward_image_step(src, gens: GeneratorGrid,
                       gammas: np.ndarray | None, y: int, framework: str):
    """Push a grid surface one step forward after observing symbol ``y``.

    Returns the updated surface of the same kind and a :class:`StepReport`.
    Generator scope is carried by the surface type: a plain
    :class:`PenaltySurface` minimizes over candidates (``gammas`` required),
    an :class:`ExtendedPenaltySurface` evolves each candidate slice on its
    own (``gammas`` must be omitted).
    """
    if framework not in (UP, DR):
        raise ValueError(f"bad framework {framework!r}")
    if isinstance(src, PenaltySurface):
        if gammas is None:
            raise ValueError("dynamic scope needs per-candidate penalties")
        return _grid_step_dynamic(src, gens, np.asarray(gammas, float), y,
                                  framework)
    if isinstance(src, ExtendedPenaltySurface):
        if gammas is not None:
            raise ValueError("static scope takes no per-step penalties")
        return _grid_step_static(src, y, framework)
    raise TypeError(f"unsupported surface type {type(src).__name__}")


def _gen_images(grid: SimplexGrid, gen, y: int):
    """Bayes images and symbol masses of every grid point under one
    candidate; rows with zero mass are flagged dead."""
    pred = grid.points @ gen.transition.T
    mass = pred @ gen.emission[:, y]
    alive = mass > 0.0
    posts = np.zeros_like(pred)
    posts[alive] = (pred[alive] * gen.emission[None, :, y]) / mass[alive, None]
    return posts, mass, alive


def _reduce_candidates(dest, vals, srcs, gids, n_cells):
    """Deterministic min-reduction per destination cell.

    Candidates are ordered by (destination, value, source, candidate) so the
    winner on ties is always the lowest (source, candidate) pair.
    """
    out = np.full(n_cells, np.inf)
    out_src = np.full(n_cells, -1, dtype=np.int64)
    out_gen = np.full(n_cells, -1, dtype=np.int64)
    if len(dest):
        order = np.lexsort((gids, srcs, vals, dest))
        dest, vals = dest[order], vals[order]
        srcs, gids = srcs[order], gids[order]
        first = np.ones(len(dest), dtype=bool)
        first[1:] = dest[1:] != dest[:-1]
        out[dest[first]] = vals[first]
        out_src[dest[first]] = srcs[first]
        out_gen[dest[first]] = gids[first]
    return out, out_src, out_gen


def _grid_step_dynamic(src: PenaltySurface, gens, gammas, y, framework):
    grid = src.grid
    dest_l, val_l, src_l, gid_l = [], [], [], []
    for g, gen in enumerate(gens.candidates):
        if not np.isfinite(gammas[g]):
            continue
        posts, mass, alive = _gen_images(grid, gen, y)
        usable = alive & np.isfinite(src.values)
        idx = np.nonzero(usable)[0]
        if idx.size == 0:
            continue
        cand = src.values[idx] + gammas[g]
        if framework == DR:
            cand = cand - np.log(mass[idx])
        dest_l.append(np.fromiter((grid.round_to_index(posts[i]) for i in idx),
                                  dtype=np.int64, count=idx.size))
        val_l.append(cand)
        src_l.append(idx)
        gid_l.append(np.full(idx.size, g, dtype=np.int64))
    dest = np.concatenate(dest_l) if dest_l else np.empty(0, dtype=np.int64)
    vals = np.concatenate(val_l) if val_l else np.empty(0)
    srcs = np.concatenate(src_l) if src_l else np.empty(0, dtype=np.int64)
    gids = np.concatenate(gid_l) if gid_l else np.empty(0, dtype=np.int64)
    out, out_src, out_gen = _reduce_candidates(dest, vals, srcs, gids,
                                               len(grid))
    values, m_t = _normalize_step(out, src.time + 1)
    surface = PenaltySurface(grid=grid, values=values, time=src.time + 1)
    report = StepReport(time=src.time + 1, m_t=m_t,
                        infeasible_cells=int(np.isinf(values).sum()),
                        argmin_src=out_src, argmin_gen=out_gen)
    return surface, report


def _grid_step_static(src: ExtendedPenaltySurface, y, framework):
    grid, gens = src.grid, src.gens
    n_cells = len(grid)
    out = np.full((n_cells, len(gens)), np.inf)
    out_src = np.full((n_cells, len(gens)), -1, dtype=np.int64)
    out_gen = np.full((n_cells, len(gens)), -1, dtype=np.int64)
    for g, gen in enumerate(gens.candidates):
        posts, mass, alive = _gen_images(grid, gen, y)
        usable = alive & np.isfinite(src.values[:, g])
        idx = np.nonzero(usable)[0]
        if idx.size == 0:
            continue
        cand = src.values[idx, g]
        if framework == DR:
            cand = cand - np.log(mass[idx])
        dest = np.fromiter((grid.round_to_index(posts[i]) for i in idx),
                           dtype=np.int64, count=idx.size)
        col, col_src, _ = _reduce_candidates(
            dest, cand, idx, np.full(idx.size, g, dtype=np.int64), n_cells)
        out[:, g] = col
        out_src[:, g] = col_src
        out_gen[col_src >= 0, g] = g
    values, m_t = _normalize_step(out, src.time + 1)
    surface = ExtendedPenaltySurface(grid=grid, gens=gens, values=values,
                                     time=src.time + 1)
    report = StepReport(time=src.time + 1, m_t=m_t,
                        infeasible_cells=int(np.isinf(values).sum()),
                        argmin_src=out_src, argmin_gen=out_gen)
    return surface, report


def _normalize_step(values: np.ndarray, time: int):
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise InfeasibleSurface(
            f"observation at step {time} impossible under every model")
    m_t = float(finite.min())
    return values - m_t, m_t


def evolve(prior: PriorSpec, gens: GeneratorGrid, obs: Sequence[int],
           grid: SimplexGrid):
    """Propagate the prior surface through a whole observation sequence.

    Returns the list of surfaces (including time zero) and the per-step
    reports. Surface kind follows the prior's generator scope.
    """
    surface = initial_grid_surface(prior, gens, grid)
    surfaces, reports = [surface], []
    for t, y in enumerate(obs, start=1):
        if prior.generator_mode == DYNAMIC:
            gammas = gamma_at(gens, t, history=tuple(obs[: t - 1]))
        else:
            gammas = None
        surface, report = forward_image_step(surface, gens, gammas, int(y),
                                             prior.framework)
        surfaces.append(surface)
        reports.append(report)
    return surfaces, reports


@dataclass(frozen=True, eq=False)
class ExactPrior:
    """Initial penalty on a finite set of exact beliefs (no grid)."""

    beliefs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.beliefs, dtype=np.float64)) + 0.0
        v = normalize_penalties(np.asarray(self.values, dtype=np.float64))
        if b.ndim != 2 or v.shape != (b.shape[0],):
            raise ValueError("beliefs must be (n, N) with one value per row")
        merged: dict[bytes, int] = {}
        keep_b, keep_v = [], []
        for row, val in zip(b, v):
            key = row.tobytes()
            if key in merged:
                keep_v[merged[key]] = min(keep_v[merged[key]], float(val))
            else:
                merged[key] = len(keep_b)
                keep_b.append(row)
                keep_v.append(float(val))
        b = np.array(keep_b)
        v = np.array(keep_v)
        order = _belief_order(b)
        b, v = b[order], v[order]
        b.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "beliefs", b)
        object.__setattr__(self, "values", v)


def initial_exact_surface(prior: ExactPrior, gens: GeneratorGrid,
                          scope: str) -> ExactSurface:
    if scope == DYNAMIC:
        return ExactSurface(beliefs=prior.beliefs, values=prior.values,
                            gen_ids=None, time=0)
    n, g = len(prior.values), len(gens)
    beliefs = np.repeat(prior.beliefs, g, axis=0)
    gen_ids = np.tile(np.arange(g, dtype=np.int64), n)
    values = (prior.values[:, None] + gens.prior_penalty[None, :]).ravel()
    return ExactSurface(beliefs=beliefs, values=normalize_penalties(values),
                        gen_ids=gen_ids, time=0)


def exact_step(src: ExactSurface, gens: GeneratorGrid,
               gammas: np.ndarray | None, y: int, framework: str,
               cap: int = EXACT_CAP_DEFAULT):
    """One forward step on exactly tracked beliefs (no rounding).

    Beliefs that coincide bit-for-bit are merged by taking the minimal
    penalty; merging early is exact because equal beliefs evolve identically.
    """
    static = src.gen_ids is not None
    if static and gammas is not None:
        raise ValueError("static scope takes no per-step penalties")
    if not static and gammas is None:
        raise ValueError("dynamic scope needs per-candidate penalties")
    n_new = len(src) * (1 if static else len(gens))
    if n_new > cap:
        raise CapExceeded(f"{n_new} tracked beliefs would exceed the cap of {cap}")
    merged: dict = {}
    for r in range(len(src)):
        value = src.values[r]
        if not np.isfinite(value):
            continue
        belief = src.beliefs[r]
        gen_choices = ((int(src.gen_ids[r]),) if static
                       else range(len(gens)))
        for g in gen_choices:
            gen = gens.candidates[g]
            extra = 0.0 if static else float(gammas[g])
            if not np.isfinite(extra):
                continue
            pred = gen.transition @ belief
            weighted = gen.emission[:, y] * pred
            mass = weighted.sum()
            if mass <= 0.0:
                continue
            post = weighted / mass + 0.0
            cand = value + extra
            if framework == DR:
                cand = cand - log(mass)
            key = (g, post.tobytes()) if static else post.tobytes()
            hit = merged.get(key)
            if hit is None or cand < hit[1]:
                merged[key] = (post, cand, r, g)
    if not merged:
        raise InfeasibleSurface(
            f"observation at step {src.time + 1} impossible under every model")
    beliefs = np.array([e[0] for e in merged.values()])
    values = np.array([e[1] for e in merged.values()])
    parents = np.array([e[2] for e in merged.values()], dtype=np.int64)
    gen_ids = np.array([e[3] for e in merged.values()], dtype=np.int64)
    order = _belief_order(beliefs, gen_ids if static else None)
    beliefs, values = beliefs[order], values[order]
    parents, gen_ids = parents[order], gen_ids[order]
    values, m_t = _normalize_step(values, src.time + 1)
    surface = ExactSurface(beliefs=beliefs, values=values,
                           gen_ids=gen_ids if static else None,
                           time=src.time + 1)
    report = StepReport(time=src.time + 1, m_t=m_t, infeasible_cells=0,
                        argmin_src=parents, argmin_gen=gen_ids)
    return surface, report


def evolve_exact_tree(prior: ExactPrior, gens: GeneratorGrid,
                      obs: Sequence[int], framework: str, scope: str,
                      cap: int = EXACT_CAP_DEFAULT):
    """Exact-belief analogue of :func:`evolve`; ground truth for grid runs."""
    if scope not in (STATIC, DYNAMIC):
        raise ValueError(f"bad scope {scope!r}")
    surface = initial_exact_surface(prior, gens, scope)
    surfaces, reports = [surface], []
    for t, y in enumerate(obs, start=1):
        if scope == DYNAMIC:
            gammas = gamma_at(gens, t, history=tuple(obs[: t - 1]))
        else:
            gammas = None
        surface, report = exact_step(surface, gens, gammas, int(y),
                                     framework, cap=cap)
        surfaces.append(surface)
        reports.append(report)
    return surfaces, reports


def _fmt(x: float) -> str:
    return repr(float(x))


def render_surface_csv(surface, report: StepReport | None = None) -> str:
    """CSV text for one surface: integer coordinates, belief coordinates,
    penalty value (``inf`` for excluded cells), and argmin provenance."""
    lines = []
    if isinstance(surface, PenaltySurface):
        n = surface.grid.n_states
        header = ([f"x{i}" for i in range(n)] + [f"p{i}" for i in range(n)]
                  + ["value", "src_point", "src_gen"])
        lines.append(",".join(header))
        src = report.argmin_src if report is not None else None
        gen = report.argmin_gen if report is not None else None
        for i in range(len(surface.grid)):
            row = ([str(int(c)) for c in surface.grid.coords[i]]
                   + [_fmt(p) for p in surface.grid.points[i]]
                   + [_fmt(surface.values[i]),
                      str(int(src[i])) if src is not None else "-1",
                      str(int(gen[i])) if gen is not None else "-1"])
            lines.append(",".join(row))
    elif isinstance(surface, ExtendedPenaltySurface):
        n = surface.grid.n_states
        header = ([f"x{i}" for i in range(n)] + [f"p{i}" for i in range(n)]
                  + ["gen", "value", "src_point", "src_gen"])
        lines.append(",".join(header))
        src = report.argmin_src if report is not None else None
        gen = report.argmin_gen if report is not None else None
        for i in range(len(surface.grid)):
            for g in range(len(surface.gens)):
                row = ([str(int(c)) for c in surface.grid.coords[i]]
                       + [_fmt(p) for p in surface.grid.points[i]]
                       + [str(g), _fmt(surface.values[i, g]),
                          str(int(src[i, g])) if src is not None else "-1",
                          str(int(gen[i, g])) if gen is not None else "-1"])
                lines.append(",".join(row))
    elif isinstance(surface, ExactSurface):
        n = surface.beliefs.shape[1]
        header = ([f"p{i}" for i in range(n)] + ["gen", "value"])
        lines.append(",".join(header))
        for i in range(len(surface)):
            gid = int(surface.gen_ids[i]) if surface.gen_ids is not None else -1
            row = ([_fmt(p) for p in surface.beliefs[i]]
                   + [str(gid), _fmt(surface.values[i])])
            lines.append(",".join(row))
    else:
        raise TypeError(f"unsupported surface type {type(surface).__name__}")
    return "\n".join(lines) + "\n"
