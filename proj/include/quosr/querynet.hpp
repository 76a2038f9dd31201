#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "quosr/autodiff.hpp"
#include "quosr/expr.hpp"
#include "quosr/latent.hpp"

namespace quosr::qnet {

using ad::Mlp;
using ad::Tensor;
using latent::DiagGaussian;
using latent::Intersection;
using latent::Similarity;

struct Point {
    std::vector<double> x;
    double y = 0.0;
};
using Dataset = std::vector<Point>;

enum class Strategy { Qbd, Qbs, Qbp };
Strategy strategy_from_string(const std::string& s);
std::string to_string(Strategy s);

struct NetConfig {
    int latent_dim = 256;
    int hidden_width = 256;
    int hidden_depth = 2;
    ad::Act hidden_act = ad::Act::Relu;
    // small output layers start every similarity near the uniform regime
    double output_init_scale = 0.01;
};

struct QueryConfig {
    int max_steps = 9;        // K
    int points_per_step = 3;  // m, also the number of initial uniform points
    double domain_min = -3.0;
    double domain_max = 3.0;
    Strategy strategy = Strategy::Qbd;
    Intersection intersection = Intersection::Attention;
    Similarity similarity = Similarity::NegKl;
    int retry_limit = 8;  // decoder resamples before the uniform fallback

    void validate() const;
};

/// All learnable weights of the query network. The four core MLPs are always
/// present; the set/point heads exist only when their strategy is selected.
class QueryNetParams {
public:
    QueryNetParams() = default;
    QueryNetParams(int arity, const NetConfig& net, Strategy strategy, int points_per_step,
                   std::uint64_t seed);

    int arity() const { return arity_; }
    int latent_dim() const { return latent_dim_; }
    int qbs_points() const { return qbs_points_; }

    const Mlp& data_net() const { return data_; }
    const Mlp& attention_net() const { return attention_; }
    const Mlp& query_net() const { return query_; }
    const Mlp& inversion_net() const { return inversion_; }
    const Mlp* qbs_head() const { return qbs_ ? &*qbs_ : nullptr; }
    const Mlp* qbp_head() const { return qbp_ ? &*qbp_ : nullptr; }

    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    /// Copies values into the existing parameters; names and shapes must match.
    void load_named(const std::vector<std::pair<std::string, Tensor>>& named);
    void zero_grad() const;

private:
    int arity_ = 1;
    int latent_dim_ = 0;
    int qbs_points_ = 0;
    Mlp data_, attention_, query_, inversion_;
    std::optional<Mlp> qbs_, qbp_;
};

/// A physical system: evaluable at x, empty on a domain failure.
using System = std::function<std::optional<double>(std::span<const double>)>;
System system_from_expr(const expr::Expr& f);

/// One appended batch of points. x may carry graph history (decoded queries
/// keep their gradient path into the next encode); y always enters as data.
struct Block {
    Tensor x;                     // rows x M
    std::vector<double> y;        // raw responses
    Tensor xy;                    // rows x (M+1), y normalized
    std::vector<bool> substituted;
    int step = 0;
};

struct TensorDataset {
    std::vector<Block> blocks;

    int rows() const;
    Tensor stacked_xy() const;
    Dataset to_points() const;
};

Block make_block(const Tensor& x, std::vector<double> y, std::vector<bool> substituted, int step);

/// Eqs-style encoder: per-point Gaussians pooled by the configured
/// intersection into one dataset embedding.
DiagGaussian encode(const QueryNetParams& params, const QueryConfig& cfg,
                    const TensorDataset& data);
DiagGaussian encode(const QueryNetParams& params, const QueryConfig& cfg, const Dataset& data);

/// Differentiable boxing: domain_mid + half_width * tanh(raw), strictly
/// inside the configured box.
Tensor box_queries(const Tensor& raw, const QueryConfig& cfg);

/// Query-by-distribution: emit the query Gaussian, sample m latents, invert
/// each to input space, box.
Tensor decode_qbd(const QueryNetParams& params, const QueryConfig& cfg, const DiagGaussian& emb,
                  int m, std::uint64_t noise_seed);
/// Query-by-set: one deterministic head emits all m points.
Tensor decode_qbs(const QueryNetParams& params, const QueryConfig& cfg, const DiagGaussian& emb,
                  int m);
/// Query-by-point: one deterministic point.
Tensor decode_qbp(const QueryNetParams& params, const QueryConfig& cfg, const DiagGaussian& emb);

/// m uniform points with valid responses; throws if the system keeps failing.
TensorDataset init_dataset(const System& f, const QueryConfig& cfg, int arity, Rng& rng);

/// Decode one batch from emb, query f (resampling failed points up to
/// retry_limit, then uniform fallback), and append the block to data.
void query_step(const QueryNetParams& params, const QueryConfig& cfg, const System& f,
                const DiagGaussian& emb, TensorDataset& data, Rng& rng, int step_index);

struct RolloutRecord {
    Dataset points;
    std::vector<int> step;
    std::vector<bool> substituted;
    int substitutions = 0;
    /// Mean log-variance of the dataset embedding after 0..K query steps;
    /// tracks how the latent uncertainty shrinks as points accumulate.
    std::vector<double> step_mean_log_var;
};

/// Alg-style query loop: m initial uniform points, then K rounds of
/// encode -> decode -> evaluate -> append.
RolloutRecord run_query_loop(const QueryNetParams& params, const System& f,
                             const QueryConfig& cfg, std::uint64_t seed);

/// Baseline samplers used for comparison datasets; x is drawn directly, the
/// network is bypassed. kind is "uniform" or "normal".
RolloutRecord run_baseline_loop(const std::string& kind, const System& f, const QueryConfig& cfg,
                                int arity, std::uint64_t seed);

}  // namespace quosr::qnet
