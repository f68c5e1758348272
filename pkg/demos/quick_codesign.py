"""Short co-design run on the bundled reference problem.

A reduced outer budget keeps this to a few minutes; the acceptance suite
uses the full budget of 80 evaluations.

    python3 demos/quick_codesign.py [--budget 25] [--objective energy|mass]
"""
import argparse

import numpy as np

from octodesign.designopt import CONSTRAINT_NAMES, DesignProblem, optimize
from octodesign.dynamics import load_mission
from octodesign.sizing import DESIGN_NAMES, load_reference


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--budget", type=int, default=25)
    ap.add_argument("--objective", choices=("energy", "mass"), default="energy")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    problem = DesignProblem(load_reference(), load_mission(), objective=args.objective,
                            outer_budget=args.budget)

    def show(ev):
        print(f"{ev.status:9s} objective={ev.objective:10.4g} x={np.round(ev.x, 3)}", flush=True)

    result = optimize(problem, seed=args.seed, callback=show)
    best = result.best
    print(f"\nbest (feasible={best.feasible}): objective={best.objective:.6g} "
          f"m_total={best.m_total:.3f} kg E_mot={best.E_mot:.0f} J")
    for n, v in zip(DESIGN_NAMES, best.x):
        print(f"  {n:16s} {v:.4f}")
    for n, c in zip(CONSTRAINT_NAMES, best.constraints):
        print(f"  {n:18s} {c:+.4f}{'  active' if abs(c) <= 0.05 else ''}")


if __name__ == "__main__":
    main()
