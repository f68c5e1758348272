"""Tune the reference octocopter with fault tolerance on, fail rotor 1 in hover and
report the recovery and the steady rotor commands.

    python3 demos/rotor_failure.py [--rotor 1] [--time 3.0] [--csv trace.csv]
"""
import argparse

import numpy as np

from octodesign.dynamics import FaultScenario, MissionProfile, simulate_mission
from octodesign.htune import build_problem, synthesize
from octodesign.sizing import PlantDesign, assemble_vehicle, load_reference


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--rotor", type=int, default=1)
    ap.add_argument("--time", type=float, default=3.0)
    ap.add_argument("--duration", type=float, default=15.0)
    ap.add_argument("--csv", help="write the full trace here")
    args = ap.parse_args()

    params = assemble_vehicle(PlantDesign.reference(), load_reference())
    result = synthesize(build_problem(params, ftc=True), seed=0)
    print(f"tuning: feasible={result.feasible} objective={result.objective:.4f} "
          f"evaluations={result.evaluations}")

    fault = FaultScenario(failed_rotor=args.rotor, fail_time=args.time)
    trace = simulate_mission(params, result.gains, MissionProfile.hover(args.duration), fault)
    print(f"recovery time: {trace.recovery_time():.2f} s after the failure")
    print(f"peak position error: {trace.position_error().max():.3f} m, "
          f"peak attitude error: {np.rad2deg(trace.attitude_error().max()):.2f} deg")
    steady = trace.voltages[trace.time >= trace.time[-1] - 1.0].mean(axis=0)
    for j, u in enumerate(steady, start=1):
        tag = " (failed: command has no effect)" if j == args.rotor else ""
        print(f"  rotor {j}: {u:6.2f} V{tag}")
    if args.csv:
        trace.to_csv(args.csv)


if __name__ == "__main__":
    main()
