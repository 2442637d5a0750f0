"""Regenerate the bundled example panel (seed 2024)."""

from pathlib import Path

from staggered_synth.io import write_panel_csv
from staggered_synth.simulate import default_plan, gen_panel, stationary_dgp
import numpy as np

SEED = 2024


def main():
    design, draw = np.random.SeedSequence(SEED).spawn(2)
    dgp = stationary_dgp(N=8, T=120, S=6, rng=np.random.default_rng(design))
    plan = default_plan(8, 6, delta=0.5, offset=1.0)
    panel, _ = gen_panel(dgp, plan, np.random.default_rng(draw))
    out = Path(__file__).resolve().parents[1] / "src" / "staggered_synth" / "data" / "example_panel.csv"
    write_panel_csv(panel, out)
    print(out)


if __name__ == "__main__":
    main()
