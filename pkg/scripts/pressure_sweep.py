"""Sweep the pressure-drop bound and report the attained heat flux.

Looser bounds admit more interface area, so the final heat flux should
increase with the bound.
"""

import argparse

from hxopt.optimizer import run_optimization
from hxopt.problem import build_problem, desk_preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bounds", type=float, nargs="+", default=[1.0, 1.5, 2.0])
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--max-iters", type=int, default=120)
    args = ap.parse_args()

    results = {}
    for p_drop in args.bounds:
        config = desk_preset(
            "parallel", resolution=args.resolution, p_drop=p_drop, maxiter=args.max_iters, alpha_c=25.0
        )
        problem = build_problem(config)
        history = run_optimization(problem, problem.optimizer_config())
        last = history.records[-1]
        results[p_drop] = (last.j, last.g1, last.g2)
        print(f"P_drop={p_drop}: J={last.j:.5f} G1={last.g1:.3f} G2={last.g2:.3f} ({last.iteration} iterations)")

    ordered = sorted(results)
    print("\nheat flux vs bound:")
    for p in ordered:
        print(f"  {p:4.1f}  ->  {results[p][0]:.5f}")


if __name__ == "__main__":
    main()
