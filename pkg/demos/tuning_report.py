"""Tune one design and print every requirement per plant model.

    python3 demos/tuning_report.py [--design 1 1 1 1 1 1] [--no-ftc]
"""
import argparse

from octodesign.htune import build_problem, synthesize
from octodesign.sizing import DESIGN_NAMES, PlantDesign, assemble_vehicle, load_reference


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--design", type=float, nargs=6, default=[1.0] * 6, metavar="X")
    ap.add_argument("--no-ftc", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    params = assemble_vehicle(PlantDesign(*args.design), load_reference())
    print(", ".join(f"{n}={v:g}" for n, v in zip(DESIGN_NAMES, args.design)),
          f"-> m_total={params.m_total:.3f} kg")
    result = synthesize(build_problem(params, ftc=not args.no_ftc), seed=args.seed)
    print(f"feasible={result.feasible} converged={result.converged} "
          f"objective={result.objective:.4f} evaluations={result.evaluations}")
    print(f"{'model':18s} {'peak':>8s} {'W1S-1':>8s} {'W2KS-1':>8s} {'decay':>8s} {'damping':>8s}")
    for m in result.per_model:
        print(f"{m['name']:18s} {m['objective']:8.4f} {m['w1s']:8.4f} {m['w2ks']:8.4f} "
              f"{m['decay']:8.3f} {m['damping']:8.3f}")
    for name, value in result.gains.to_dict().items():
        print(f"  {name:9s} {value:9.4f}")


if __name__ == "__main__":
    main()
