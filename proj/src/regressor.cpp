#include "quosr/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "quosr/common.hpp"

namespace quosr::reg {

using expr::Expr;
using expr::Skeleton;
using qnet::Dataset;

CandidateBank CandidateBank::from_expressions(std::span<const Expr> exprs,
                                              bool dedupe_skeletons) {
    if (exprs.empty()) throw std::invalid_argument("CandidateBank: empty expression list");
    CandidateBank bank;
    std::set<std::string> seen;
    for (const auto& e : exprs) {
        Skeleton s = expr::skeletonize(e);
        if (dedupe_skeletons && !seen.insert(s.str()).second) continue;
        bank.entries.push_back(Candidate{e, std::move(s)});
    }
    return bank;
}

// ----------------------------------------------------------------- metrics

double mse_n(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size()) throw std::invalid_argument("mse_n: length mismatch");
    if (y.empty()) throw std::invalid_argument("mse_n: empty input");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - yhat[i];
        num += d * d;
        const double shifted = y[i] + 1e-5;
        den += shifted * shifted;
    }
    den = std::sqrt(den);
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return num / den;
}

double r_squared(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size()) throw std::invalid_argument("r_squared: length mismatch");
    if (y.empty()) throw std::invalid_argument("r_squared: empty input");
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        sse += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        sst += (y[i] - mean) * (y[i] - mean);
    }
    if (sst == 0.0) return sse == 0.0 ? 1.0 : 0.0;  // constant target convention
    return std::max(0.0, 1.0 - sse / sst);
}

double isclose_proportion(std::span<const double> y, std::span<const double> yhat, double rtol,
                          double atol) {
    if (y.size() != yhat.size()) throw std::invalid_argument("isclose: length mismatch");
    if (y.empty()) throw std::invalid_argument("isclose: empty input");
    int close = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (std::fabs(y[i] - yhat[i]) <= atol + rtol * std::fabs(y[i])) ++close;
    return static_cast<double>(close) / static_cast<double>(y.size());
}

// --------------------------------------------------------- constant fitting

namespace {

// sum of squared errors; failed evaluations contribute a large flat penalty
double sse_of(const Expr& f, const Dataset& data) {
    double sse = 0.0;
    for (const auto& p : data) {
        auto r = expr::evaluate(f, p.x);
        if (!r.ok()) {
            sse += 1e8;
            continue;
        }
        const double d = r.value - p.y;
        sse += d * d;
    }
    return sse;
}

double sse_at(const Skeleton& skel, std::span<const double> theta, const Dataset& data) {
    return sse_of(expr::instantiate(skel, theta), data);
}

}  // namespace

Expr fit_constants(const Skeleton& skeleton, const Dataset& data, const FitConfig& cfg,
                   double* out_sse) {
    if (data.empty()) throw std::invalid_argument("fit_constants: empty dataset");
    const int h = skeleton.hole_count();
    if (h == 0) {
        Expr e = expr::instantiate(skeleton, {});
        if (out_sse) *out_sse = sse_of(e, data);
        return e;
    }

    Rng rng(mix_seed(cfg.seed, 0xf17));
    std::vector<double> best_theta;
    double best_sse = std::numeric_limits<double>::infinity();

    for (int s = 0; s < std::max(1, cfg.starts); ++s) {
        std::vector<double> theta(static_cast<std::size_t>(h), 1.0);
        if (s > 0)
            for (auto& t : theta) t = rng.uniform(cfg.const_min, cfg.const_max);

        double sse = sse_at(skeleton, theta, data);
        double step = 0.1;
        std::vector<double> grad(static_cast<std::size_t>(h));
        for (int it = 0; it < cfg.max_iters && std::isfinite(sse); ++it) {
            // central differences on each constant
            double gnorm = 0.0;
            for (int j = 0; j < h; ++j) {
                const double keep = theta[static_cast<std::size_t>(j)];
                const double dh = 1e-6 * std::max(1.0, std::fabs(keep));
                theta[static_cast<std::size_t>(j)] = keep + dh;
                const double up = sse_at(skeleton, theta, data);
                theta[static_cast<std::size_t>(j)] = keep - dh;
                const double dn = sse_at(skeleton, theta, data);
                theta[static_cast<std::size_t>(j)] = keep;
                grad[static_cast<std::size_t>(j)] = (up - dn) / (2.0 * dh);
                gnorm += grad[static_cast<std::size_t>(j)] * grad[static_cast<std::size_t>(j)];
            }
            if (gnorm < 1e-24) break;

            // damped step with backtracking
            bool moved = false;
            for (int bt = 0; bt < 30; ++bt) {
                std::vector<double> trial = theta;
                for (int j = 0; j < h; ++j) trial[static_cast<std::size_t>(j)] -= step * grad[static_cast<std::size_t>(j)];
                const double trial_sse = sse_at(skeleton, trial, data);
                if (std::isfinite(trial_sse) && trial_sse < sse) {
                    theta = std::move(trial);
                    const double gain = sse - trial_sse;
                    sse = trial_sse;
                    step *= 1.3;
                    moved = true;
                    if (gain < 1e-14 * (1.0 + sse)) it = cfg.max_iters;  // converged
                    break;
                }
                step *= 0.5;
            }
            if (!moved) break;
        }
        if (std::isfinite(sse) && sse < best_sse) {
            best_sse = sse;
            best_theta = theta;
        }
    }

    if (!std::isfinite(best_sse))
        throw std::runtime_error("fit_constants: every start diverged");
    if (out_sse) *out_sse = best_sse;
    return expr::instantiate(skeleton, best_theta);
}

// --------------------------------------------------------------------- fit

namespace {

struct Scored {
    Expr candidate;
    double mse = std::numeric_limits<double>::infinity();
    int fails = 0;
    int bank_index = -1;

    // ranking: fewer failures first, then lower error, then bank order
    bool better_than(const Scored& o) const {
        if (fails != o.fails) return fails < o.fails;
        if (mse != o.mse) return mse < o.mse;
        return false;
    }
};

Scored score_candidate(const Expr& f, const Dataset& data, int bank_index) {
    Scored s;
    s.candidate = f;
    s.bank_index = bank_index;
    std::vector<double> y, yhat;
    for (const auto& p : data) {
        auto r = expr::evaluate(f, p.x);
        if (!r.ok()) {
            ++s.fails;
            continue;
        }
        y.push_back(p.y);
        yhat.push_back(r.value);
    }
    s.mse = y.empty() ? std::numeric_limits<double>::infinity() : mse_n(y, yhat);
    return s;
}

// small mutation/crossover engine for the optional refinement pass
Expr mutate(const Expr& base, Rng& rng, const FitConfig& cfg) {
    auto consts = expr::constants_of(base);
    if (!consts.empty() && rng.uniform() < 0.7) {
        // jitter one constant
        auto& c = consts[rng.below(consts.size())];
        c += rng.normal() * std::max(0.1, 0.2 * std::fabs(c));
        return expr::instantiate(expr::skeletonize(base), consts);
    }
    expr::GenConfig gc;
    gc.max_depth = 3;
    gc.const_min = cfg.const_min;
    gc.const_max = cfg.const_max;
    Expr graft = expr::random_expr(rng.raw(), base.arity(), gc);
    // splice: base op graft
    const auto op = rng.uniform() < 0.5 ? expr::BinaryOp::Add : expr::BinaryOp::Mul;
    return Expr(expr::make_binary(op, base.root(), graft.root()), base.arity());
}

}  // namespace

FitOutcome fit(const Dataset& data, const CandidateBank& bank, const FitConfig& cfg) {
    if (bank.entries.empty()) throw std::invalid_argument("fit: empty candidate bank");
    if (data.size() < 2) throw std::invalid_argument("fit: need at least 2 data points");

    // screening pass on the stored expressions
    std::vector<Scored> scored;
    scored.reserve(bank.entries.size());
    for (int i = 0; i < bank.size(); ++i)
        scored.push_back(score_candidate(bank.entries[static_cast<std::size_t>(i)].expression, data, i));

    Scored best = scored[0];
    for (const auto& s : scored)
        if (s.better_than(best)) best = s;

    // constant refits for the most promising skeletons
    std::vector<int> idx(scored.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return scored[static_cast<std::size_t>(a)].better_than(scored[static_cast<std::size_t>(b)]);
    });
    const int refits = std::min<int>(cfg.refit_top, static_cast<int>(idx.size()));
    for (int r = 0; r < refits; ++r) {
        const int i = idx[static_cast<std::size_t>(r)];
        const auto& entry = bank.entries[static_cast<std::size_t>(i)];
        if (entry.skeleton.hole_count() == 0) continue;
        FitConfig fc = cfg;
        fc.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(i));
        try {
            Expr refit = fit_constants(entry.skeleton, data, fc);
            Scored s = score_candidate(refit, data, i);
            if (s.better_than(best)) best = s;
        } catch (const std::runtime_error&) {
            // refit diverged; the stored candidate already competed
        }
    }

    // optional refinement over mutated variants
    if (cfg.gp_budget > 0) {
        Rng rng(mix_seed(cfg.seed, 0x6b));
        Scored incumbent = best;
        for (int t = 0; t < cfg.gp_budget; ++t) {
            Expr variant = mutate(incumbent.candidate, rng, cfg);
            if (variant.depth() > 10) continue;
            Scored s = score_candidate(variant, data, -1);
            if (s.better_than(best)) {
                best = s;
                incumbent = s;
            }
        }
    }

    FitOutcome out;
    out.best = best.candidate;
    out.mse = best.mse;
    out.fail_count = best.fails;
    out.bank_index = best.bank_index;
    return out;
}

// ------------------------------------------------------------------- eval

namespace {

// held-out x outside the query box: |coordinate| uniform in [inner, outer]
std::vector<double> holdout_x(Rng& rng, int arity, double inner, double outer) {
    std::vector<double> x(static_cast<std::size_t>(arity));
    for (auto& v : x) {
        const double mag = rng.uniform(inner, outer);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return x;
}

struct Holdout {
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    int excluded = 0;
};

Holdout make_holdout(const Expr& truth, int expr_id, const PipelineConfig& cfg) {
    // seeded only by (eval_seed, expr_id): identical across dataset methods
    Rng rng(mix_seed(cfg.eval_seed, static_cast<std::uint64_t>(expr_id) * 2 + 1));
    Holdout h;
    int made = 0, attempts = 0;
    while (made < cfg.holdout_points && attempts < cfg.holdout_points * 64) {
        ++attempts;
        auto x = holdout_x(rng, truth.arity(), cfg.holdout_inner, cfg.holdout_outer);
        auto r = expr::evaluate(truth, x);
        if (!r.ok()) {
            ++h.excluded;
            continue;
        }
        h.xs.push_back(std::move(x));
        h.ys.push_back(r.value);
        ++made;
    }
    return h;
}

ExprEval eval_one(const Expr& truth, int expr_id, const Dataset& fit_points,
                  const CandidateBank& bank, const PipelineConfig& cfg) {
    ExprEval row;
    row.expr_id = expr_id;
    row.text = truth.str();

    FitConfig fc = cfg.fit;
    fc.seed = mix_seed(cfg.eval_seed, static_cast<std::uint64_t>(expr_id) * 2);
    FitOutcome outcome = fit(fit_points, bank, fc);
    row.fitted_text = outcome.best.str();
    row.skeleton_match =
        expr::skeletonize(outcome.best).str() == expr::skeletonize(truth).str();

    Holdout h = make_holdout(truth, expr_id, cfg);
    row.excluded_points = h.excluded;
    if (h.ys.empty()) {
        // truth failed everywhere outside the box; metrics pinned to worst case
        row.mse = std::numeric_limits<double>::infinity();
        row.r2 = 0.0;
        row.isclose = 0.0;
        return row;
    }
    std::vector<double> yhat(h.ys.size(), 0.0);
    for (std::size_t i = 0; i < h.xs.size(); ++i) {
        auto r = expr::evaluate(outcome.best, h.xs[i]);
        // a candidate failure at a valid point scores as a (bad) zero guess
        yhat[i] = r.ok() ? r.value : 0.0;
    }
    row.mse = mse_n(h.ys, yhat);
    row.r2 = r_squared(h.ys, yhat);
    row.isclose = isclose_proportion(h.ys, yhat);
    return row;
}

void finalize(EvalReport& rep) {
    if (rep.rows.empty()) return;
    const double n = static_cast<double>(rep.rows.size());
    for (const auto& r : rep.rows) {
        rep.mean_r2 += r.r2 / n;
        rep.mean_isclose += r.isclose / n;
        rep.skeleton_match_rate += (r.skeleton_match ? 1.0 : 0.0) / n;
        if (std::isfinite(r.mse) && std::log(std::max(r.mse, 1e-300)) < -10.0)
            rep.prop_log_mse_below += 1.0 / n;
    }
}

}  // namespace

EvalReport evaluate_datasets(std::span<const Expr> family, std::span<const LabeledDataset> data,
                             const CandidateBank& bank, const PipelineConfig& cfg) {
    if (family.size() != data.size())
        throw std::invalid_argument("evaluate_datasets: family/dataset count mismatch");
    EvalReport rep;
    for (std::size_t i = 0; i < family.size(); ++i)
        rep.rows.push_back(eval_one(family[i], static_cast<int>(i), data[i].points, bank, cfg));
    finalize(rep);
    return rep;
}

std::vector<double> per_step_r2(std::span<const Expr> family,
                                std::span<const LabeledDataset> data, const CandidateBank& bank,
                                const PipelineConfig& cfg) {
    if (family.size() != data.size())
        throw std::invalid_argument("per_step_r2: family/dataset count mismatch");
    int max_step = 0;
    for (const auto& d : data)
        for (int s : d.step) max_step = std::max(max_step, s);

    std::vector<double> out;
    for (int k = 0; k <= max_step; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i < family.size(); ++i) {
            Dataset prefix;
            for (std::size_t p = 0; p < data[i].points.size(); ++p)
                if (data[i].step[p] <= k) prefix.push_back(data[i].points[p]);
            ExprEval row = eval_one(family[i], static_cast<int>(i), prefix, bank, cfg);
            mean += row.r2 / static_cast<double>(family.size());
        }
        out.push_back(mean);
    }
    return out;
}

EvalReport evaluate_pipeline(std::span<const Expr> family, const DatasetProvider& provider,
                             const CandidateBank& bank, const PipelineConfig& cfg) {
    std::vector<LabeledDataset> data;
    data.reserve(family.size());
    for (std::size_t i = 0; i < family.size(); ++i)
        data.push_back(provider(family[i], static_cast<int>(i)));
    return evaluate_datasets(family, data, bank, cfg);
}

}  // namespace quosr::reg
