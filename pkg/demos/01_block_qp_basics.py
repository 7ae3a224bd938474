"""Build a tiny assignment program by hand and inspect every moving part.

Two targets, three candidate locations each.  Appearance scores say where
each target probably is; a proximity penalty discourages both targets
from claiming the same spot.  The demo walks through the objective, the
gradient, the solve, the duality-gap certificate, and the rounding step,
comparing everything against brute-force enumeration.
"""

import numpy as np
import scipy.sparse as sp

from crowdtrack import (
    BlockLayout,
    LinearCosts,
    brute_force_solve,
    build_problem,
    fw_solve,
    gradient,
    is_feasible,
    laplacianize,
    objective,
    round_solution,
    scores_to_costs,
    uniform_point,
)


def main():
    layout = BlockLayout([3, 3])

    # Candidate 0 and candidate 3 are the same pixel; both targets like it.
    raw_scores = np.array([0.9, 0.6, 0.2,
                           0.8, 0.3, 0.1])
    appearance = scores_to_costs(layout, raw_scores)
    zeros = np.zeros(layout.n_variables)
    linear = LinearCosts(appearance=appearance, motion=zeros,
                         neighbor_motion=zeros)

    similarity = sp.csr_matrix(
        ([1.0, 1.0], ([0, 3], [3, 0])), shape=(6, 6))
    proximity = laplacianize(similarity, mode="repel")
    problem = build_problem(layout, linear, [proximity])

    print("layout:", [int(s) for s in layout.block_sizes],
          "-> total", layout.n_variables)
    x = uniform_point(layout)
    print("uniform start feasible:", is_feasible(layout, x))
    print(f"objective at uniform point: {objective(problem, x):.6f}")
    print("gradient at uniform point:",
          np.array2string(gradient(problem, x), precision=3))
    print()

    result = fw_solve(problem)
    frac = result.fractional
    print(f"solved in {len(result.trace.objective)} iterations, "
          f"converged={result.converged}")
    print("fractional solution:", np.array2string(frac, precision=3))
    print(f"final duality gap: {result.trace.gap[-1]:.2e}")
    print()

    rounded = result.rounded
    print("rounded assignment (candidate index per target):",
          list(rounded.chosen))
    vertex = rounded.as_vector(layout)
    print("rounded point feasible and binary:",
          is_feasible(layout, vertex, binary=True))
    same = round_solution(layout, frac).chosen == rounded.chosen
    print("re-rounding the fractional point agrees:", bool(same))
    print()

    best, best_value = brute_force_solve(problem)
    print("brute force over all 9 assignments:", list(best.chosen),
          f"value {best_value:.6f}")
    print(f"fractional objective {objective(problem, frac):.6f} "
          f"<= integral optimum {best_value:.6f} "
          f"(gap {best_value - objective(problem, frac):.2e})")
    if tuple(rounded.chosen) == tuple(best.chosen):
        print("rounding recovered the exact optimum.  Note the shared "
              "pixel went to target 1: scores are normalized within each "
              "block, and target 1's preference (0.8 vs 0.3) is more "
              "concentrated than target 0's (0.9 vs 0.6), so RELATIVE to "
              "its alternatives target 1 wants the pixel more.")


if __name__ == "__main__":
    main()
