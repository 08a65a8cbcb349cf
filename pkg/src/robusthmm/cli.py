"""Batch front end: validate a JSON run configuration, execute one of the
pipeline subcommands, and write CSV/JSON artifacts.

Subcommands: ``simulate``, ``filter``, ``penalty-evolve``, ``expect``,
``control``, ``oracle-check``. Exit codes: 0 success, 1 oracle-check
mismatch, 2 invalid configuration, 3 infeasible (an observation is impossible
under every admitted model), 4 enumeration cap exceeded.

Artifacts are written atomically (temp file + rename) and are byte-identical
across runs and thread counts for a fixed configuration; the run manifest is
the only file carrying a wall-clock field.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .control import ControlProblem, solve
from .errors import (CapExceeded, ConfigError, DegenerateObservation,
                     InfeasibleSurface)
from .expectation import (StateFunctional, TreeSetup, UncertaintyParams,
                          backward_expectation, bsde_decompose,
                          dr_expectation, history_label, tree_document)
from .hmm import Generator, as_filter_state, filter_step, simulate_path
from .models import (DYNAMIC, GeneratorGrid, PriorSpec, SimplexGrid,
                     parse_framework)
from .oracles import (OracleReport, oracle_dr_direct, oracle_penalty,
                      render_report_csv)
from .penalty import (ExactPrior, evolve, evolve_exact_tree,
                      initial_grid_surface, render_surface_csv)

ENV_THREADS = "ROBUSTHMM_THREADS"
ORACLE_TOL = 1e-9
CONVERGENCE_RESOLUTIONS = (10, 20, 40)
_PHI_DRAWS = 50


# ---------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    """Validated run configuration; one schema for every subcommand."""

    n_states: int
    n_symbols: int
    horizon: int
    grid_resolution: int
    scope: str
    framework: str
    params: UncertaintyParams
    gens: GeneratorGrid
    prior_cfg: dict
    observations: list | None
    simulation: dict | None
    phi: np.ndarray | None
    control: dict | None
    output_dir: str | None
    raw_bytes: bytes

    def prior_values(self, grid: SimplexGrid) -> np.ndarray:
        return build_grid_prior(self.prior_cfg, grid)

    def prior_spec(self, grid: SimplexGrid) -> PriorSpec:
        return PriorSpec(initial_penalty=self.prior_values(grid),
                         generator_mode=self.scope, framework=self.framework)


def _number(value, where: str) -> float:
    if value == "inf":
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number or \"inf\"")
    return float(value)


def _require(cfg: dict, key: str, where: str = "config"):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    if key not in cfg:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return cfg[key]


def _int_field(cfg, key, minimum, where="config") -> int:
    value = _require(cfg, key, where)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: {key} must be an integer")
    if value < minimum:
        raise ConfigError(f"{where}: {key} must be >= {minimum}")
    return value


def _matrix(raw, shape, where) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: not a numeric array") from None
    if arr.shape != shape:
        raise ConfigError(f"{where}: expected shape {shape}, got {arr.shape}")
    return arr


def load_config(path: str) -> RunConfig:
    try:
        raw_bytes = open(path, "rb").read()
        cfg = json.loads(raw_bytes)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")

    n = _int_field(cfg, "n_states", 1)
    d = _int_field(cfg, "n_symbols", 1)
    horizon = _int_field(cfg, "horizon", 0)
    resolution = _int_field(cfg, "grid_resolution", 1)
    try:
        scope, framework = parse_framework(_require(cfg, "framework"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"framework: {exc}") from None

    unc = _require(cfg, "uncertainty")
    try:
        params = UncertaintyParams(k=_number(_require(unc, "k", "uncertainty"),
                                             "uncertainty.k"),
                                   k_exp=_number(unc.get("k_exp", 1.0),
                                                 "uncertainty.k_exp"))
    except ValueError as exc:
        raise ConfigError(f"uncertainty: {exc}") from None

    raw_gens = _require(cfg, "generators")
    if not isinstance(raw_gens, list) or not raw_gens:
        raise ConfigError("generators must be a nonempty list")
    candidates, gammas = [], []
    for i, entry in enumerate(raw_gens):
        where = f"generators[{i}]"
        trans = _matrix(_require(entry, "transition", where), (n, n),
                        f"{where}.transition")
        emit = _matrix(_require(entry, "emission", where), (n, d),
                       f"{where}.emission")
        try:
            candidates.append(Generator(transition=trans, emission=emit))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        gammas.append(_number(entry.get("gamma", 0.0), f"{where}.gamma"))

    control_cfg = cfg.get("control")
    control_penalty = None
    if control_cfg is not None:
        labels = _require(control_cfg, "labels", "control")
        if not isinstance(labels, list) or not labels:
            raise ConfigError("control.labels must be a nonempty list")
        table = _require(control_cfg, "gamma", "control")
        if (not isinstance(table, list) or len(table) != len(labels)
                or any(len(row) != len(candidates) for row in table)):
            raise ConfigError(
                "control.gamma must be one row per control, one entry per generator")
        control_penalty = np.array(
            [[_number(v, "control.gamma") for v in row] for row in table])
        run_table = _matrix(_require(control_cfg, "running_cost", "control"),
                            (horizon, len(labels)), "control.running_cost")
        term = _matrix(_require(control_cfg, "terminal_cost", "control"),
                       (n,), "control.terminal_cost")
        control_cfg = {"labels": [str(x) for x in labels],
                       "running_cost": run_table, "terminal_cost": term}

    try:
        gens = GeneratorGrid(candidates=tuple(candidates),
                             prior_penalty=np.array(gammas),
                             control_penalty=control_penalty)
    except (ValueError, InfeasibleSurface) as exc:
        raise ConfigError(f"generators: {exc}") from None

    prior_cfg = _require(cfg, "prior")
    if not isinstance(prior_cfg, dict) or "shape" not in prior_cfg:
        raise ConfigError("prior must be an object with a 'shape' field")

    observations = cfg.get("observations")
    if observations is not None:
        if (not isinstance(observations, list)
                or any(isinstance(y, bool) or not isinstance(y, int)
                       or not 0 <= y < d for y in observations)):
            raise ConfigError(f"observations must be symbols in [0, {d})")
        if len(observations) != horizon:
            raise ConfigError(
                f"observations lists {len(observations)} symbols but the "
                f"horizon is {horizon}")

    simulation = cfg.get("simulation")
    if simulation is not None:
        where = "simulation"
        trans = _matrix(_require(simulation, "transition", where), (n, n),
                        f"{where}.transition")
        emit = _matrix(_require(simulation, "emission", where), (n, d),
                       f"{where}.emission")
        try:
            model = Generator(transition=trans, emission=emit)
            p0 = as_filter_state(_matrix(_require(simulation, "p0", where),
                                         (n,), f"{where}.p0"))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        seed = _int_field(simulation, "seed", 0, where)
        simulation = {"model": model, "p0": p0, "seed": seed}

    phi = cfg.get("phi")
    if phi is not None:
        phi = _matrix(phi, (n,), "phi")

    out_dir = cfg.get("output_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("output_dir must be a string")

    # validate the default-resolution prior eagerly so bad tables fail fast
    grid = SimplexGrid.build(n, resolution)
    build_grid_prior(prior_cfg, grid)

    return RunConfig(n_states=n, n_symbols=d, horizon=horizon,
                     grid_resolution=resolution, scope=scope,
                     framework=framework, params=params, gens=gens,
                     prior_cfg=prior_cfg, observations=observations,
                     simulation=simulation, phi=phi, control=control_cfg,
                     output_dir=out_dir, raw_bytes=raw_bytes)


def build_grid_prior(prior_cfg: dict, grid: SimplexGrid) -> np.ndarray:
    """Initial penalty values on the grid from a named prior shape."""
    shape = prior_cfg["shape"]
    if shape == "zero":
        return np.zeros(len(grid))
    if shape == "point-mass":
        belief = _matrix(_require(prior_cfg, "belief", "prior"),
                         (grid.n_states,), "prior.belief")
        values = np.full(len(grid), np.inf)
        values[grid.round_to_index(belief)] = 0.0
        return values
    if shape == "abs-log-odds":
        if grid.n_states != 2:
            raise ConfigError("abs-log-odds prior needs exactly two states")
        with np.errstate(divide="ignore"):
            ratio = grid.points[:, 0] / grid.points[:, 1]
            return np.abs(np.where(ratio > 0, np.log(ratio), -np.inf))
    if shape == "table":
        values = _require(prior_cfg, "values", "prior")
        if not isinstance(values, list) or len(values) != len(grid):
            raise ConfigError(
                f"prior.values must list one value per grid point ({len(grid)})")
        return np.array([_number(v, "prior.values") for v in values])
    if shape == "support":
        beliefs = _require(prior_cfg, "beliefs", "prior")
        raw_vals = _require(prior_cfg, "values", "prior")
        if not isinstance(beliefs, list) or len(beliefs) != len(raw_vals):
            raise ConfigError("prior.beliefs and prior.values must align")
        values = np.full(len(grid), np.inf)
        for b, v in zip(beliefs, raw_vals):
            b = _matrix(b, (grid.n_states,), "prior.beliefs")
            try:
                values[grid.exact_index(b)] = _number(v, "prior.values")
            except ValueError:
                raise ConfigError(
                    f"prior support belief {list(b)} is not a grid point "
                    f"at resolution {grid.resolution}") from None
        return values
    raise ConfigError(f"unknown prior shape {shape!r}")


def build_exact_prior(prior_cfg: dict, grid: SimplexGrid) -> ExactPrior:
    """Exact-belief prior: the grid points the prior does not exclude."""
    values = build_grid_prior(prior_cfg, grid)
    finite = np.isfinite(values)
    if not finite.any():
        raise ConfigError("prior excludes every belief")
    return ExactPrior(beliefs=grid.points[finite], values=values[finite])


# ---------------------------------------------------------------------------
# artifact plumbing

def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_atomic(out_dir: str, name: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    final = os.path.join(out_dir, name)
    tmp = os.path.join(out_dir, f".{name}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, final)
    return name


def _write_json(out_dir: str, name: str, doc: dict) -> str:
    text = json.dumps(_sanitize(doc), indent=2, sort_keys=True) + "\n"
    return _write_atomic(out_dir, name, text)


class Run:
    """Collects artifacts and finishes with a manifest."""

    def __init__(self, command: str, cfg: RunConfig, out_dir: str,
                 threads: int):
        self.command = command
        self.cfg = cfg
        self.out_dir = out_dir
        self.pool = ThreadPoolExecutor(max_workers=max(1, threads))
        self.files: list[str] = []
        self.extra: dict = {}
        self.started = time.perf_counter()

    def pmap(self, fn, items):
        return list(self.pool.map(fn, items))

    def add_csv(self, name: str, text: str) -> str:
        self.files.append(_write_atomic(self.out_dir, name, text))
        return name

    def add_json(self, name: str, doc: dict) -> str:
        self.files.append(_write_json(self.out_dir, name, doc))
        return name

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config_sha256": hashlib.sha256(self.cfg.raw_bytes).hexdigest(),
            "package_version": __version__,
            "files": sorted(self.files),
            "wall_time_s": round(time.perf_counter() - self.started, 6),
        }
        manifest.update(self.extra)
        _write_json(self.out_dir, "manifest.json", manifest)
        self.pool.shutdown()


def _fmt(x) -> str:
    return repr(float(x))


def _observations(cfg: RunConfig) -> list[int]:
    if cfg.observations is not None:
        return list(cfg.observations)
    if cfg.simulation is None:
        raise ConfigError("need explicit observations or a simulation block")
    sim = cfg.simulation
    path = simulate_path([sim["model"]] * cfg.horizon, sim["p0"], cfg.horizon,
                         sim["seed"])
    return [int(y) for y in path.observed]


# ---------------------------------------------------------------------------
# subcommands

def _cmd_simulate(run: Run) -> int:
    cfg = run.cfg
    if cfg.simulation is None:
        raise ConfigError("simulate needs a simulation block")
    sim = cfg.simulation
    path = simulate_path([sim["model"]] * cfg.horizon, sim["p0"], cfg.horizon,
                         sim["seed"])
    lines = ["t,hidden,observation", f"0,{int(path.hidden[0])},"]
    for t in range(1, cfg.horizon + 1):
        lines.append(f"{t},{int(path.hidden[t])},{int(path.observed[t - 1])}")
    run.add_csv("path.csv", "\n".join(lines) + "\n")
    run.extra["seed"] = sim["seed"]
    return 0


def _cmd_filter(run: Run) -> int:
    cfg = run.cfg
    if cfg.simulation is None:
        raise ConfigError("filter needs a simulation block naming the model")
    obs = _observations(cfg)
    model, p = cfg.simulation["model"], cfg.simulation["p0"]
    header = ["t", "observation"] + [f"p{i}" for i in range(cfg.n_states)]
    lines = [",".join(header),
             ",".join(["0", ""] + [_fmt(v) for v in p])]
    for t, y in enumerate(obs, start=1):
        p = filter_step(p, model, y)
        lines.append(",".join([str(t), str(y)] + [_fmt(v) for v in p]))
    run.add_csv("filter.csv", "\n".join(lines) + "\n")
    return 0


def _cmd_penalty_evolve(run: Run) -> int:
    cfg = run.cfg
    obs = _observations(cfg)
    grid = SimplexGrid.build(cfg.n_states, cfg.grid_resolution)
    surfaces, reports = evolve(cfg.prior_spec(grid), cfg.gens, obs, grid)
    for t, surface in enumerate(surfaces):
        report = reports[t - 1] if t >= 1 else None
        run.add_csv(f"surface_t{t:03d}.csv",
                    render_surface_csv(surface, report))
    run.extra["m_t"] = [r.m_t for r in reports]
    run.extra["observations"] = obs
    return 0


def _cmd_expect(run: Run) -> int:
    cfg = run.cfg
    if cfg.phi is None:
        raise ConfigError("expect needs a phi field (payoff per state)")
    grid = SimplexGrid.build(cfg.n_states, cfg.grid_resolution)
    setup = TreeSetup(gens=cfg.gens, framework=cfg.framework, scope=cfg.scope,
                      horizon=cfg.horizon,
                      initial_surface=initial_grid_surface(
                          cfg.prior_spec(grid), cfg.gens, grid),
                      params=cfg.params)
    tree = backward_expectation(StateFunctional(values=cfg.phi), setup)
    bsde_decompose(tree, setup)
    surface_files = {}
    for node in tree.nodes:
        name = f"surface_{history_label(node.history)}.csv"
        run.add_csv(name, render_surface_csv(node.surface))
        surface_files[node.index] = name
    run.add_json("tree.json", tree_document(tree, surface_files))
    run.extra["root_value"] = tree.nodes[0].value
    return 0


def _cmd_control(run: Run) -> int:
    cfg = run.cfg
    if cfg.control is None:
        raise ConfigError("control needs a control block")
    grid = SimplexGrid.build(cfg.n_states, cfg.grid_resolution)
    problem = ControlProblem(
        labels=tuple(cfg.control["labels"]), gens=cfg.gens,
        prior=cfg.prior_spec(grid), grid=grid, horizon=cfg.horizon,
        params=cfg.params, running_cost=cfg.control["running_cost"],
        terminal_cost=StateFunctional(values=cfg.control["terminal_cost"]))
    solution = solve(problem)
    state_files = {}
    for sid, surface in enumerate(solution.registry.surfaces):
        name = f"surface_state_{sid:04d}.csv"
        run.add_csv(name, render_surface_csv(surface))
        state_files[sid] = name
    values_doc, policy_doc = {}, {}
    for (history, sid), record in sorted(solution.values.items()):
        key = f"{history_label(history)}|{sid}"
        values_doc[key] = {"value": record.value, "control": record.control,
                           "q_values": record.q_values}
        if record.control is not None:
            policy_doc[key] = {"control": record.control,
                               "label": problem.labels[record.control]}
    run.add_json("values.json", values_doc)
    run.add_json("policy.json", policy_doc)
    run.add_json("states.json", {str(k): v for k, v in state_files.items()})
    run.extra["root_value"] = solution.root_value
    return 0


_FRAMEWORK_LABELS = ("static-up", "dynamic-up", "static-dr", "dynamic-dr")


def _check_one_framework(args):
    """Exact-tree evolution versus enumeration, plus worst-case expectations
    against enumerated models, for one framework label."""
    label, cfg, grid, obs = args
    scope, framework = parse_framework(label)
    exact_prior = build_exact_prior(cfg.prior_cfg, grid)
    surfaces, _ = evolve_exact_tree(exact_prior, cfg.gens, obs, framework,
                                    scope)
    reports = []
    for t in range(len(surfaces)):
        oracle = oracle_penalty(exact_prior.beliefs, exact_prior.values,
                                cfg.gens, obs[:t], framework, scope)
        engine = surfaces[t].as_lookup()
        if set(oracle) != set(engine):
            reports.append(OracleReport(
                quantity=f"{label}/penalty_t{t}", oracle_value=float(len(oracle)),
                engine_value=float(len(engine)), instance="reachable-set"))
            continue
        anchor = max(oracle, key=lambda k: abs(oracle[k] - engine[k])) \
            if oracle else None
        reports.append(OracleReport(
            quantity=f"{label}/penalty_t{t}",
            oracle_value=oracle[anchor] if anchor is not None else 0.0,
            engine_value=engine[anchor] if anchor is not None else 0.0,
            instance=f"sup-over-{len(oracle)}-rows"))
    rng = np.random.Generator(np.random.Philox(key=2026))
    final = surfaces[-1]
    for j in range(_PHI_DRAWS):
        phi = rng.uniform(-1.0, 1.0, size=cfg.n_states)
        engine_val, _ = dr_expectation(phi, final, cfg.params)
        oracle_val = oracle_dr_direct(phi, exact_prior.beliefs,
                                      exact_prior.values, cfg.gens, obs,
                                      framework, scope, k=cfg.params.k,
                                      k_exp=cfg.params.k_exp)
        reports.append(OracleReport(quantity=f"{label}/dr_expectation_{j}",
                                    oracle_value=oracle_val,
                                    engine_value=engine_val,
                                    instance="random-phi"))
    return reports


def _convergence_error(args):
    """Sup-norm gap between a grid run and the exact run, over every step
    and every reachable exact belief."""
    resolution, cfg, obs = args
    grid = SimplexGrid.build(cfg.n_states, resolution)
    prior = PriorSpec(initial_penalty=build_grid_prior(cfg.prior_cfg, grid),
                      generator_mode=DYNAMIC, framework="dr")
    grid_surfaces, _ = evolve(prior, cfg.gens, obs, grid)
    exact_prior = build_exact_prior(cfg.prior_cfg, grid)
    exact_surfaces, _ = evolve_exact_tree(exact_prior, cfg.gens, obs, "dr",
                                          DYNAMIC)
    worst = 0.0
    for g_surf, e_surf in zip(grid_surfaces, exact_surfaces):
        for belief, value in zip(e_surf.beliefs, e_surf.values):
            cell = grid.round_to_index(belief)
            worst = max(worst, abs(float(g_surf.values[cell]) - float(value)))
    return worst


def _cmd_oracle_check(run: Run) -> int:
    cfg = run.cfg
    obs = _observations(cfg)
    grid = SimplexGrid.build(cfg.n_states, cfg.grid_resolution)
    report_batches = run.pmap(_check_one_framework,
                              [(label, cfg, grid, obs)
                               for label in _FRAMEWORK_LABELS])
    reports = [r for batch in report_batches for r in batch]
    errors = run.pmap(_convergence_error,
                      [(m, cfg, obs) for m in CONVERGENCE_RESOLUTIONS])
    run.add_csv("oracle_report.csv", render_report_csv(reports))
    max_diff = max(r.abs_diff for r in reports)
    run.extra["max_abs_diff"] = max_diff
    run.extra["grid_convergence"] = {
        "resolutions": list(CONVERGENCE_RESOLUTIONS),
        "sup_errors": errors,
        "final_error": errors[-1],
    }
    return 0 if max_diff <= ORACLE_TOL else 1


_COMMANDS = {
    "simulate": _cmd_simulate,
    "filter": _cmd_filter,
    "penalty-evolve": _cmd_penalty_evolve,
    "expect": _cmd_expect,
    "control": _cmd_control,
    "oracle-check": _cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robusthmm",
        description="Penalty-surface filtering, expectation, and control "
                    "pipelines for finite hidden Markov chains.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True,
                         help="path to the JSON run configuration")
        cmd.add_argument("--out", default=None,
                         help="output directory (default: config output_dir "
                              "or ./out)")
        cmd.add_argument("--threads", type=int,
                         default=int(os.environ.get(ENV_THREADS, "1")),
                         help=f"worker pool size (default ${ENV_THREADS} or 1)")
        cmd.add_argument("--grid-resolution", type=int, default=None,
                         help="override the configured simplex resolution")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.grid_resolution is not None:
            if args.grid_resolution < 1:
                raise ConfigError("--grid-resolution must be >= 1")
            cfg.grid_resolution = args.grid_resolution
            build_grid_prior(cfg.prior_cfg,
                             SimplexGrid.build(cfg.n_states,
                                               cfg.grid_resolution))
        out_dir = args.out or cfg.output_dir or "out"
        run = Run(args.command, cfg, out_dir, args.threads)
        try:
            code = _COMMANDS[args.command](run)
        except BaseException:
            run.pool.shutdown()
            raise
        run.finish()
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (InfeasibleSurface, DegenerateObservation) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    except CapExceeded as exc:
        print(f"cap exceeded: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
