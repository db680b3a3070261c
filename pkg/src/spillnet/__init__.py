"""Latent spillover networks with an unknown structural break in panel data.

The package estimates, from a balanced N x T panel, the two regime-specific
cross-unit spillover matrices, the location of the single structural break,
and a low-dimensional "private" effect via double machine learning, plus
information-criterion diagnostics for the break type and for latent group
heterogeneity in the private effect.  A Monte Carlo harness replicates the
accompanying simulation designs.
"""

from .break_detect import (BreakEstimate, PenaltyConfig, candidate_grid,
                           estimate_break, preliminary_estimate,
                           refine_breakpoint, write_profile_csv)
from .dml import (CrossFitScores, DmlConfig, DMLFit, cross_fit_delta,
                  cross_fit_scores, full_context, group_deltas, neyman_delta,
                  per_unit_deltas, regime_context, window_context)
from .errors import (BalancedPanelError, DegenerateCovariate,
                     DegenerateResidual, InvalidBreakpoint, ParseError,
                     RankWarning, RegimeTooShort, SpillnetError,
                     TooManyGroups, TrimTooAggressive)
from .lasso import (LambdaSelection, LassoProblem, LassoSolution,
                    default_lambda_grid, lambda_max, post_lasso_refit,
                    regime_adaptive_weights, select_lambda, solve_lasso)
from .model_select import (BreakTypeSpec, FittedSpec, GroupStructure, ICResult,
                           count_parameters, fit_break_spec,
                           information_criterion, sbsa_cluster,
                           select_break_type, select_num_groups)
from .panel import (PanelData, RegimeDesign, SampleSplit, build_regime_design,
                    demean_within, load_csv, split_regimes)
from .simulate import (DgpConfig, GroundTruth, ReplicationOptions,
                       ReplicationReport, config_from_code, gen_dgp,
                       hausdorff_ratio, network_metrics, run_one_replication,
                       run_replications)
from .spillover import (PrivateEffect, SpilloverNetworks,
                        estimate_spillover, estimate_static_network,
                        fit_unit_network_row, network_density,
                        write_edge_list, write_network_csv)

__version__ = "0.1.0"
