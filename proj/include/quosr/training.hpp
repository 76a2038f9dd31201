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
#include "quosr/querynet.hpp"

namespace quosr::train {

using latent::DiagGaussian;
using latent::Similarity;

struct TrainConfig {
    int batch_size = 256;
    double learning_rate = 1e-3;
    double temperature = 0.1;
    int max_iterations = 1000;
    int checkpoint_interval = 100;
    std::string representation = "data";  // "data" (siamese) or "expr" (ablation)
    std::uint64_t seed = 0;

    void validate() const;
};

/// Siamese contrastive loss over 2N embeddings arranged so (2i, 2i+1) are
/// positive pairs. For each anchor the denominator runs over the other 2N-1
/// embeddings; the result is averaged over all 2N anchors.
ad::Tensor modified_infonce(std::span<const DiagGaussian> embs, Similarity sim, double tau);

/// Plain InfoNCE between dataset embeddings and expression embeddings:
/// positives (d_i, f_i), denominator over all expressions in the batch.
ad::Tensor standard_infonce(std::span<const DiagGaussian> data_embs,
                            std::span<const DiagGaussian> expr_embs, Similarity sim, double tau);

/// Plain-arithmetic KL between the current values of two embeddings; used
/// for statistics, not for gradients.
double kl_value(const DiagGaussian& p, const DiagGaussian& q);

/// Token-embedding stand-in for a learned expression encoder: mean-pooled
/// token table over the canonical skeleton string, then an MLP into the
/// same 2*latent_dim space as dataset embeddings.
class ExprEncoder {
public:
    ExprEncoder() = default;
    ExprEncoder(int latent_dim, const qnet::NetConfig& net, std::uint64_t seed);

    DiagGaussian encode(const expr::Expr& f) const;

    static const std::vector<std::string>& vocab();
    static std::vector<int> tokenize(const std::string& canonical);

    std::vector<ad::Tensor> parameters() const;
    std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const;

private:
    ad::Tensor table_;  // vocab x embed width
    ad::Mlp mlp_;
};

struct StepKlStats {
    double pos_mean = 0.0;
    double neg_mean = 0.0;
};

struct TraceRow {
    int iteration = 0;
    double loss = 0.0;
    std::vector<StepKlStats> per_step;  // one entry per query step
};

enum class TrainStatus { Ok, Diverged };

struct TrainResult {
    TrainStatus status = TrainStatus::Ok;
    std::string message;
    int iterations_done = 0;
};

/// Owns the query-network parameters and the full training state; a Trainer
/// round-trips through a checkpoint bit-exactly, so interrupted runs resume
/// on the same trajectory.
class Trainer {
public:
    Trainer(std::vector<expr::Expr> family, const qnet::NetConfig& net,
            const qnet::QueryConfig& query, const TrainConfig& train);

    /// Runs iterations until `iteration() == upto`; emits one trace row per
    /// iteration. Divergence (non-finite loss or gradients) stops the run.
    TrainResult run(int upto, const std::function<void(const TraceRow&)>& on_row = {});

    int iteration() const { return iteration_; }
    const qnet::QueryNetParams& params() const { return params_; }
    const ExprEncoder* expr_encoder() const { return expr_enc_ ? &*expr_enc_ : nullptr; }
    const qnet::QueryConfig& query_config() const { return query_; }
    const TrainConfig& train_config() const { return train_; }

    ad::Checkpoint to_checkpoint() const;
    void restore(const ad::Checkpoint& ck);

private:
    std::vector<expr::Expr> family_;
    std::vector<qnet::System> systems_;
    qnet::NetConfig net_;
    qnet::QueryConfig query_;
    TrainConfig train_;
    qnet::QueryNetParams params_;
    std::optional<ExprEncoder> expr_enc_;
    Rng rng_;
    int iteration_ = 0;

    TraceRow run_iteration();
    std::string fingerprint() const;
};

struct KlSeparation {
    double pos_mean = 0.0;
    double neg_mean = 0.0;
};

/// Rolls out two query branches per held-out system and measures the mean
/// KL between positive-pair embeddings vs all cross-system pairs.
KlSeparation kl_separation(const qnet::QueryNetParams& params, const qnet::QueryConfig& cfg,
                           std::span<const expr::Expr> systems, std::uint64_t seed);

}  // namespace quosr::train
