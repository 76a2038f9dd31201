#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "quosr/autodiff.hpp"

namespace quosr::latent {

using ad::Mlp;
using ad::Tensor;

/// log-variances are clamped to this window before any exponentiation
constexpr double kLogVarMin = -10.0;
constexpr double kLogVarMax = 10.0;

/// Diagonal Normal distribution in latent space, stored as mu and log(sigma^2).
/// Both tensors are 1 x d rows and may sit anywhere in a computation graph,
/// so every operation below is differentiable.
struct DiagGaussian {
    Tensor mu;
    Tensor log_var;

    int dim() const { return mu.cols(); }

    static DiagGaussian from_values(std::vector<double> mu_v, std::vector<double> log_var_v);
    /// Splits a 1 x 2d network output into [mu, log_var], clamping log_var.
    static DiagGaussian from_net_output(const Tensor& row);

    /// [mu, log_var] as a single 1 x 2d row
    Tensor params_row() const;
};

/// Response normalization applied before a point enters the data encoder:
/// clip to +-1e4, then arcsinh to tame the dynamic range.
double normalize_response(double y);

DiagGaussian embed_point(const Mlp& data_net, std::span<const double> x, double y);

/// Batched embedding: xy is n x (M+1) rows of [x, normalized y]; the result
/// is the n x 2d matrix of per-point Gaussian parameters (log_var clamped).
Tensor embed_batch(const Mlp& data_net, const Tensor& xy);

enum class Intersection { Attention, Mean, Max };
enum class Similarity { NegKl, Cosine };

Intersection intersection_from_string(const std::string& s);
Similarity similarity_from_string(const std::string& s);
std::string to_string(Intersection i);
std::string to_string(Similarity s);

// Pooled variants consume the n x 2d parameter matrix produced by
// embed_batch; the list variants stack their inputs and defer to them.
DiagGaussian pool_attention(const Tensor& point_params, const Mlp& attention_net);
DiagGaussian pool_mean(const Tensor& point_params);
DiagGaussian pool_max(const Tensor& point_params);
DiagGaussian pool(Intersection kind, const Tensor& point_params, const Mlp* attention_net);

DiagGaussian intersect_attention(std::span<const DiagGaussian> parts, const Mlp& attention_net);
DiagGaussian intersect_mean(std::span<const DiagGaussian> parts);
DiagGaussian intersect_max(std::span<const DiagGaussian> parts);

/// Closed-form KL(p || q) for diagonal Gaussians; scalar tensor, always >= 0.
Tensor kl_divergence(const DiagGaussian& p, const DiagGaussian& q);

/// Cosine of the concatenated [mu, sigma] vectors (sigma, not log variance).
Tensor cosine_similarity(const DiagGaussian& p, const DiagGaussian& q);

/// Similarity used inside contrastive losses: negated KL or cosine.
Tensor similarity(Similarity kind, const DiagGaussian& a, const DiagGaussian& b);

/// m reparameterized samples (m x d): v_i = mu + sigma * eps_i with eps from
/// a fresh seeded stream; gradients flow to mu and log_var.
Tensor sample(const DiagGaussian& g, int m, std::uint64_t noise_seed);

/// Plain cosine of two raw vectors; the numeric core of cosine_similarity.
double cosine_of(std::span<const double> a, std::span<const double> b);

}  // namespace quosr::latent
