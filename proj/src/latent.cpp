#include "quosr/latent.hpp"

#include <cmath>
#include <stdexcept>

namespace quosr::latent {

using namespace quosr::ad;

DiagGaussian DiagGaussian::from_values(std::vector<double> mu_v, std::vector<double> log_var_v) {
    if (mu_v.size() != log_var_v.size())
        throw std::invalid_argument("DiagGaussian: mu/log_var length mismatch");
    if (mu_v.empty()) throw std::invalid_argument("DiagGaussian: empty");
    for (double v : log_var_v)
        if (!std::isfinite(v)) throw std::invalid_argument("DiagGaussian: non-finite log_var");
    const int d = static_cast<int>(mu_v.size());
    return DiagGaussian{Tensor::constant(1, d, std::move(mu_v)),
                        Tensor::constant(1, d, std::move(log_var_v))};
}

DiagGaussian DiagGaussian::from_net_output(const Tensor& row) {
    if (row.rows() != 1 || row.cols() % 2 != 0)
        throw std::invalid_argument("DiagGaussian: network output must be 1 x 2d");
    const int d = row.cols() / 2;
    for (double v : row.values())
        if (!std::isfinite(v)) throw std::runtime_error("DiagGaussian: non-finite network output");
    return DiagGaussian{slice_cols(row, 0, d),
                        clamp(slice_cols(row, d, 2 * d), kLogVarMin, kLogVarMax)};
}

Tensor DiagGaussian::params_row() const {
    return concat_cols(std::vector<Tensor>{mu, log_var});
}

double normalize_response(double y) {
    const double clipped = std::min(1e4, std::max(-1e4, y));
    return std::asinh(clipped);
}

DiagGaussian embed_point(const Mlp& data_net, std::span<const double> x, double y) {
    std::vector<double> in(x.begin(), x.end());
    in.push_back(normalize_response(y));
    for (double v : in)
        if (!std::isfinite(v)) throw std::invalid_argument("embed_point: non-finite input");
    const int width = static_cast<int>(in.size());
    Tensor row = data_net.forward(Tensor::constant(1, width, std::move(in)));
    return DiagGaussian::from_net_output(row);
}

Tensor embed_batch(const Mlp& data_net, const Tensor& xy) {
    Tensor h = data_net.forward(xy);
    if (h.cols() % 2 != 0) throw std::invalid_argument("embed_batch: encoder width must be even");
    for (double v : h.values())
        if (!std::isfinite(v)) throw std::runtime_error("embed_batch: non-finite network output");
    const int d = h.cols() / 2;
    Tensor mu = slice_cols(h, 0, d);
    Tensor lv = clamp(slice_cols(h, d, 2 * d), kLogVarMin, kLogVarMax);
    return concat_cols(std::vector<Tensor>{mu, lv});
}

Intersection intersection_from_string(const std::string& s) {
    if (s == "attention") return Intersection::Attention;
    if (s == "mean") return Intersection::Mean;
    if (s == "max") return Intersection::Max;
    throw std::invalid_argument("unknown intersection '" + s + "'");
}

Similarity similarity_from_string(const std::string& s) {
    if (s == "neg_kl" || s == "kl") return Similarity::NegKl;
    if (s == "cos" || s == "cosine") return Similarity::Cosine;
    throw std::invalid_argument("unknown similarity '" + s + "'");
}

std::string to_string(Intersection i) {
    switch (i) {
        case Intersection::Attention: return "attention";
        case Intersection::Mean: return "mean";
        case Intersection::Max: return "max";
    }
    return "?";
}

std::string to_string(Similarity s) {
    return s == Similarity::NegKl ? "neg_kl" : "cos";
}

namespace {

DiagGaussian split_halves(const Tensor& row) {
    const int d = row.cols() / 2;
    return DiagGaussian{slice_cols(row, 0, d), slice_cols(row, d, 2 * d)};
}

Tensor stack_parts(std::span<const DiagGaussian> parts) {
    if (parts.empty()) throw std::invalid_argument("intersect: empty part list");
    const int d = parts[0].dim();
    std::vector<Tensor> rows;
    rows.reserve(parts.size());
    for (const auto& p : parts) {
        if (p.dim() != d) throw std::invalid_argument("intersect: dimension mismatch");
        rows.push_back(p.params_row());
    }
    return concat_rows(rows);
}

}  // namespace

DiagGaussian pool_attention(const Tensor& point_params, const Mlp& attention_net) {
    if (point_params.rows() < 1) throw std::invalid_argument("pool_attention: empty input");
    Tensor logits = attention_net.forward(point_params);  // n x 1
    if (logits.cols() != 1)
        throw std::invalid_argument("pool_attention: attention net must emit one logit");
    Tensor w = softmax_rows(transpose(logits));  // 1 x n
    return split_halves(matmul(w, point_params));
}

DiagGaussian pool_mean(const Tensor& point_params) {
    if (point_params.rows() < 1) throw std::invalid_argument("pool_mean: empty input");
    const int d = point_params.cols() / 2;
    Tensor mu = mean_rows(slice_cols(point_params, 0, d));
    // mean over variances, then back to log space
    Tensor lv = log_(mean_rows(exp_(slice_cols(point_params, d, 2 * d))));
    return DiagGaussian{mu, lv};
}

DiagGaussian pool_max(const Tensor& point_params) {
    if (point_params.rows() < 1) throw std::invalid_argument("pool_max: empty input");
    const int d = point_params.cols() / 2;
    // log is monotone, so max of variances == exp(max of log-variances)
    return DiagGaussian{max_rows(slice_cols(point_params, 0, d)),
                        max_rows(slice_cols(point_params, d, 2 * d))};
}

DiagGaussian pool(Intersection kind, const Tensor& point_params, const Mlp* attention_net) {
    switch (kind) {
        case Intersection::Attention:
            if (!attention_net)
                throw std::invalid_argument("pool: attention intersection needs a net");
            return pool_attention(point_params, *attention_net);
        case Intersection::Mean: return pool_mean(point_params);
        case Intersection::Max: return pool_max(point_params);
    }
    throw std::logic_error("pool: bad kind");
}

DiagGaussian intersect_attention(std::span<const DiagGaussian> parts, const Mlp& attention_net) {
    return pool_attention(stack_parts(parts), attention_net);
}

DiagGaussian intersect_mean(std::span<const DiagGaussian> parts) {
    return pool_mean(stack_parts(parts));
}

DiagGaussian intersect_max(std::span<const DiagGaussian> parts) {
    return pool_max(stack_parts(parts));
}

Tensor kl_divergence(const DiagGaussian& p, const DiagGaussian& q) {
    // Gaussians built from network outputs arrive with log_var already
    // clamped; hand-built ones pass through untouched so degenerate cases
    // (log_var far below the clamp window) behave exactly.
    if (p.dim() != q.dim()) throw std::invalid_argument("kl_divergence: dimension mismatch");
    const int d = p.dim();
    Tensor half_log_ratio = scale(sum_all(sub(q.log_var, p.log_var)), 0.5);
    Tensor diff = sub(p.mu, q.mu);
    Tensor quad = mul(add(exp_(p.log_var), mul(diff, diff)), exp_(neg(q.log_var)));
    return add_scalar(add(half_log_ratio, scale(sum_all(quad), 0.5)), -0.5 * d);
}

double cosine_of(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine: zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

Tensor cosine_similarity(const DiagGaussian& p, const DiagGaussian& q) {
    if (p.dim() != q.dim()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
    Tensor sp = exp_(scale(p.log_var, 0.5));
    Tensor sq = exp_(scale(q.log_var, 0.5));
    Tensor a = concat_cols(std::vector<Tensor>{p.mu, sp});
    Tensor b = concat_cols(std::vector<Tensor>{q.mu, sq});
    Tensor na = sqrt_(sum_all(mul(a, a)));
    Tensor nb = sqrt_(sum_all(mul(b, b)));
    if (na.value() == 0.0 || nb.value() == 0.0)
        throw std::invalid_argument("cosine_similarity: zero-norm vector");
    return div(sum_all(mul(a, b)), mul(na, nb));
}

Tensor similarity(Similarity kind, const DiagGaussian& a, const DiagGaussian& b) {
    // Eq-level similarity: the loss maximizes this for positive pairs, so the
    // KL variant enters negated.
    if (kind == Similarity::NegKl) return neg(kl_divergence(a, b));
    return cosine_similarity(a, b);
}

Tensor sample(const DiagGaussian& g, int m, std::uint64_t noise_seed) {
    if (m < 1) throw std::invalid_argument("sample: m must be >= 1");
    const int d = g.dim();
    Rng rng(noise_seed);
    std::vector<double> eps(static_cast<std::size_t>(m) * d);
    for (auto& e : eps) e = rng.normal();
    Tensor noise = Tensor::constant(m, d, std::move(eps));
    Tensor sigma = exp_(scale(g.log_var, 0.5));
    return add_rowvec(mul_rowvec(noise, sigma), g.mu);
}

}  // namespace quosr::latent
