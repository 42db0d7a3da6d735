"""Boosted model-based trees for additive models with pairwise interactions.

Fit an intercept plus per-variable main effects plus a screened set of
pairwise interaction surfaces, all as sums of small trees whose leaves hold
ridge-regularized linear or spline models. Fitted models can be purified
into hierarchically orthogonal components with importance scores, exported
as grids, and serialized to a canonical JSON file.
"""

from .boosting import StageParams, StageResult, fit_interaction_stage, fit_main_stage
from .data import (
    BinIndex,
    DataError,
    Dataset,
    SplineBasis,
    Task,
    basis_matrix,
    eval_basis,
    load_csv,
    make_bins,
    quantile_knots,
    split_train_valid,
)
from .losses import EPS_HESSIAN, LossGrad, grad_hess, init_offset, mean_loss
from .model import (
    ConfigError,
    FitConfig,
    FittedModel,
    ModelFormatError,
    RoundResult,
    fit_model,
    load_model,
    model_from_dict,
    model_to_dict,
    predict,
    save_model,
    truncate_rounds,
)
from .purify import (
    EffectSet,
    MainEffect,
    PairEffect,
    assemble_raw_effects,
    export_effect_grids,
    importance,
    purify_effects,
    write_importance_csv,
)
from .screening import (
    PairRanking,
    fast_score,
    filter_interactions,
    rank_pairs_fast,
    ranking_to_csv,
)
from .simulate import (
    SimScenario,
    balanced_intercept,
    eval_model_form,
    gen_predictors,
    gen_response,
    make_dataset,
    scenario_splits,
    true_pairs,
)
from .trees import (
    DesignCache,
    GramAccumulator,
    ModelBasedTree,
    NodeModel,
    TreeParams,
    build_grams,
    design_columns,
    grow_tree,
    predict_tree,
    ridge_fit,
    ridge_path,
)

__version__ = "0.1.0"
