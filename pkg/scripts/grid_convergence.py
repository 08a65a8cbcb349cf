"""Measure how fast grid-propagated penalty surfaces approach the exact
(ungridded) evolution as the simplex resolution doubles."""

import sys
from pathlib import Path

try:
    import robusthmm  # noqa: F401
except ImportError:
    sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from robusthmm import PriorSpec, SimplexGrid, evolve, evolve_exact_tree
from robusthmm.cli import build_exact_prior, build_grid_prior, load_config

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "oracle_t3.json"


def main() -> None:
    cfg = load_config(str(CONFIG))
    obs = list(cfg.observations)
    base_grid = SimplexGrid.build(cfg.n_states, cfg.grid_resolution)
    exact_prior = build_exact_prior(cfg.prior_cfg, base_grid)
    exact, _ = evolve_exact_tree(exact_prior, cfg.gens, obs, "dr", "dynamic")
    print(f"observations {obs}; "
          f"{len(exact[-1])} exactly reachable beliefs at t={len(obs)}")
    print(f"{'m':>5} {'cells':>6} {'sup error':>12}")
    for m in (10, 20, 40, 80):
        grid = SimplexGrid.build(cfg.n_states, m)
        prior = PriorSpec(initial_penalty=build_grid_prior(cfg.prior_cfg, grid),
                          generator_mode="dynamic", framework="dr")
        surfaces, _ = evolve(prior, cfg.gens, obs, grid)
        worst = 0.0
        for g_surf, e_surf in zip(surfaces, exact):
            for belief, value in zip(e_surf.beliefs, e_surf.values):
                cell = grid.round_to_index(belief)
                worst = max(worst,
                            abs(float(g_surf.values[cell]) - float(value)))
        print(f"{m:>5} {len(grid):>6} {worst:>12.6f}")


if __name__ == "__main__":
    main()
