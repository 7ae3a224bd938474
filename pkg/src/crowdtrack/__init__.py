"""Online multi-target crowd tracking via block-simplex quadratic programs.

Per frame, every tracked target gets a block of candidate locations; unary
costs (appearance, motion, neighborhood motion) and pairwise penalties
(spatial proximity, group formation) form a convex quadratic over the
product of simplices, solved by conditional-gradient methods and rounded
to one location per target.
"""

from .qp import (Assignment, BlockLayout, BqpProblem, LinearCosts,
                 QuadraticTerm, build_problem, gradient, is_feasible,
                 laplacianize, normalize_scores, objective, scores_to_costs,
                 uniform_point)
from .instances import synthetic_frame_problem
from .motion import (GroupModel, MotionModel, NeighborSet, TargetState,
                     build_group_model, build_group_mst, build_neighbor_sets,
                     coherent_groups, group_similarity, motion_cost,
                     neighborhood_motion_cost, proximity_similarity)
from .solver import (ActiveSet, SolverConfig, SolverResult, SolverTrace,
                     away_vertex, brute_force_solve, duality_gap, fw_solve,
                     line_search_exact, lmo, round_solution)
from .appearance import (NccTemplate, PatchFeature, RegressorModel,
                         TrainingSet, batch_features, extract_patch_features,
                         fit_template, score_candidates, train_regressor,
                         update_model)
from .sampling import (PruneConfig, SearchRegion, dense_candidates,
                       local_maxima, prune_candidates)
from .scene import (GroundTruth, SceneConfig, generate_scene, load_frames,
                    make_palette, read_ppm, render_frame, save_scene,
                    standard_scene_config, write_ppm)
from .pipeline import (AccuracyCurve, FrameSummary, TrackerConfig, TrackSet,
                       accuracy_curve, bench_solvers, build_frame_problem,
                       identity_swaps, read_bench_csv, track_sequence,
                       write_bench_csv)

__version__ = "0.1.0"
