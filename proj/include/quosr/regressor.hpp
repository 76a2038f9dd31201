#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "quosr/expr.hpp"
#include "quosr/querynet.hpp"

namespace quosr::reg {

struct Candidate {
    expr::Expr expression;
    expr::Skeleton skeleton;
};

/// Hypothesis bank standing in for a pretrained expression generator: the
/// regressor picks the candidate that best explains the queried data after
/// constant fitting.
struct CandidateBank {
    std::vector<Candidate> entries;

    static CandidateBank from_expressions(std::span<const expr::Expr> exprs,
                                          bool dedupe_skeletons = true);
    int size() const { return static_cast<int>(entries.size()); }
};

struct FitConfig {
    int starts = 6;        // multi-start count for constant fitting
    int max_iters = 80;    // damped gradient-descent iterations per start
    int refit_top = 24;    // how many screened candidates get constant fitting
    int gp_budget = 0;     // extra mutated/crossed candidates to evaluate
    double const_min = -3.0;
    double const_max = 3.0;
    std::uint64_t seed = 0;
};

// Paper metrics. mse_n normalizes the squared error by the L2 norm of the
// elementwise-shifted target vector (epsilon = 1e-5).
double mse_n(std::span<const double> y, std::span<const double> yhat);
double r_squared(std::span<const double> y, std::span<const double> yhat);
double isclose_proportion(std::span<const double> y, std::span<const double> yhat,
                          double rtol = 1e-5, double atol = 1e-8);

/// Least-squares constant fitting on a skeleton by multi-start damped
/// gradient descent. Throws when every start ends non-finite.
expr::Expr fit_constants(const expr::Skeleton& skeleton, const qnet::Dataset& data,
                         const FitConfig& cfg, double* out_sse = nullptr);

struct FitOutcome {
    expr::Expr best;
    double mse = 0.0;    // mse_n of the winner on the fit data
    int fail_count = 0;  // fit points the winner could not evaluate
    int bank_index = -1; // winning bank entry, -1 for a GP variant
};

/// Candidates are ranked by (fail count, mse_n), lexicographically, ties
/// broken by bank order; each entry competes as stored and with refit
/// constants, so the winner is never worse than the best raw bank member.
FitOutcome fit(const qnet::Dataset& data, const CandidateBank& bank, const FitConfig& cfg);

struct ExprEval {
    int expr_id = 0;
    std::string text;
    std::string fitted_text;
    double mse = 0.0;
    double r2 = 0.0;
    double isclose = 0.0;
    bool skeleton_match = false;
    int excluded_points = 0;  // held-out points where the truth failed
};

struct EvalReport {
    std::vector<ExprEval> rows;
    double mean_r2 = 0.0;
    double mean_isclose = 0.0;
    double skeleton_match_rate = 0.0;
    double prop_log_mse_below = 0.0;  // fraction with log(mse_n) < -10
};

struct PipelineConfig {
    int holdout_points = 30;
    double holdout_inner = 3.0;  // evaluation ring [inner, outer] on |x|
    double holdout_outer = 5.0;
    FitConfig fit;
    std::uint64_t eval_seed = 0;
};

struct LabeledDataset {
    qnet::Dataset points;
    std::vector<int> step;  // query step per point, 0 for initial draws
};

/// Fits every expression from its dataset and scores on held-out points
/// drawn outside the query box. The held-out draw depends only on
/// (eval_seed, expression index), never on the dataset method.
EvalReport evaluate_datasets(std::span<const expr::Expr> family,
                             std::span<const LabeledDataset> data, const CandidateBank& bank,
                             const PipelineConfig& cfg);

/// Mean R-squared when fitting only points with step <= k, for k = 0..K.
std::vector<double> per_step_r2(std::span<const expr::Expr> family,
                                std::span<const LabeledDataset> data, const CandidateBank& bank,
                                const PipelineConfig& cfg);

using DatasetProvider = std::function<LabeledDataset(const expr::Expr&, int expr_id)>;

/// End-to-end comparison harness: obtain fit points per expression with the
/// given provider (network rollout or a baseline sampler), fit, score.
EvalReport evaluate_pipeline(std::span<const expr::Expr> family, const DatasetProvider& provider,
                             const CandidateBank& bank, const PipelineConfig& cfg);

}  // namespace quosr::reg
