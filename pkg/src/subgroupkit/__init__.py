"""subgroupkit: individualized treatment rules from weighted loss minimization,
with resampling-based validation of the resulting subgroup effects."""

from .augmentation import AugmentSpec, build_augmentation
from .data_model import (CodedBinaryTreatment, DataError, Dataset, Outcome,
                         TreatmentVector, code_binary, load_dataset,
                         write_dataset)
from .diagnostics import hommel_adjust, plot_data, summarize_subgroups
from .fitting import (CutpointRule, EffectTable, FitRecipe,
                      FittedSubgroupModel, build_multicat_design,
                      empirical_subgroup_effects, fit_subgroup, parse_cutpoint,
                      predict_benefit, recommend, recommend_from_scores,
                      resolve_cutpoint)
from .losses import (LOSSES, LossSpec, cox_negloglik, custom_loss,
                     estimand_from_score, flip_transform, get_loss,
                     modified_design, weighting_weight)
from .propensity import (ConstantPropensity, LogisticLassoPropensity,
                         MultinomialLassoPropensity, OverlapTable,
                         PluginPropensity, PropensityScores,
                         arm_fraction_propensity, fit_propensity,
                         overlap_summary, plain_logistic_propensity)
from .simulation import (RuleMetrics, Sim3Config, Sim4Config, TruthBundle,
                         evaluate_rule, generate_sim3, generate_sim4)
from .solvers import (Lasso, SolveResult, SolverError, SolveSpec, kkt_residuals,
                      make_folds, penalized_glm_path, solve_penalized_glm,
                      solve_weighted_cox, solve_weighted_hinge, solve_wls)
from .survival import km_curve, rmst
from .validation import (ValidationReport, ValidationSpec,
                         conditional_quantile_report, validate)

__version__ = "0.1.0"
