#include "quosr/querynet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace quosr::qnet {

using namespace quosr::ad;
using namespace quosr::latent;

Strategy strategy_from_string(const std::string& s) {
    if (s == "qbd") return Strategy::Qbd;
    if (s == "qbs") return Strategy::Qbs;
    if (s == "qbp") return Strategy::Qbp;
    throw std::invalid_argument("unknown strategy '" + s + "'");
}

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::Qbd: return "qbd";
        case Strategy::Qbs: return "qbs";
        case Strategy::Qbp: return "qbp";
    }
    return "?";
}

void QueryConfig::validate() const {
    if (max_steps < 0) throw std::invalid_argument("QueryConfig: max_steps must be >= 0");
    if (points_per_step < 1)
        throw std::invalid_argument("QueryConfig: points_per_step must be >= 1");
    if (!(domain_min < domain_max))
        throw std::invalid_argument("QueryConfig: empty domain box");
    if (retry_limit < 0) throw std::invalid_argument("QueryConfig: retry_limit must be >= 0");
}

QueryNetParams::QueryNetParams(int arity, const NetConfig& net, Strategy strategy,
                               int points_per_step, std::uint64_t seed)
    : arity_(arity), latent_dim_(net.latent_dim) {
    if (arity < 1) throw std::invalid_argument("QueryNetParams: arity must be >= 1");
    if (net.latent_dim < 1) throw std::invalid_argument("QueryNetParams: latent_dim must be >= 1");
    const int d = net.latent_dim;
    MlpConfig mc{net.hidden_width, net.hidden_depth, net.hidden_act, net.output_init_scale};

    Rng r0(mix_seed(seed, 0)), r1(mix_seed(seed, 1)), r2(mix_seed(seed, 2)), r3(mix_seed(seed, 3));
    data_ = Mlp(arity + 1, 2 * d, mc, r0);
    attention_ = Mlp(2 * d, 1, mc, r1);
    query_ = Mlp(2 * d, 2 * d, mc, r2);
    inversion_ = Mlp(d, arity, mc, r3);
    if (strategy == Strategy::Qbs) {
        qbs_points_ = points_per_step;
        Rng r4(mix_seed(seed, 4));
        qbs_.emplace(2 * d, points_per_step * arity, mc, r4);
    } else if (strategy == Strategy::Qbp) {
        Rng r5(mix_seed(seed, 5));
        qbp_.emplace(2 * d, arity, mc, r5);
    }
}

namespace {

void append_named(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                  const Mlp& net) {
    for (auto& [name, t] : net.named_parameters()) out.emplace_back(prefix + "." + name, t);
}

}  // namespace

std::vector<Tensor> QueryNetParams::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor>> QueryNetParams::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    append_named(out, "data", data_);
    append_named(out, "attention", attention_);
    append_named(out, "query", query_);
    append_named(out, "inversion", inversion_);
    if (qbs_) append_named(out, "qbs", *qbs_);
    if (qbp_) append_named(out, "qbp", *qbp_);
    return out;
}

void QueryNetParams::load_named(const std::vector<std::pair<std::string, Tensor>>& named) {
    auto own = named_parameters();
    if (own.size() != named.size())
        throw std::runtime_error("QueryNetParams: checkpoint holds " +
                                 std::to_string(named.size()) + " tensors, expected " +
                                 std::to_string(own.size()));
    for (std::size_t i = 0; i < own.size(); ++i) {
        if (own[i].first != named[i].first)
            throw std::runtime_error("QueryNetParams: tensor name mismatch at index " +
                                     std::to_string(i) + " ('" + named[i].first + "' vs '" +
                                     own[i].first + "')");
        if (own[i].second.rows() != named[i].second.rows() ||
            own[i].second.cols() != named[i].second.cols())
            throw std::runtime_error("QueryNetParams: shape mismatch for '" + own[i].first + "'");
        own[i].second.set_values(named[i].second.values());
    }
}

void QueryNetParams::zero_grad() const {
    for (auto& t : parameters()) t.zero_grad();
}

System system_from_expr(const expr::Expr& f) {
    return [f](std::span<const double> x) -> std::optional<double> {
        auto r = expr::evaluate(f, x);
        if (!r.ok()) return std::nullopt;
        return r.value;
    };
}

// ----------------------------------------------------------------- dataset

int TensorDataset::rows() const {
    int n = 0;
    for (const auto& b : blocks) n += b.x.rows();
    return n;
}

Tensor TensorDataset::stacked_xy() const {
    if (blocks.empty()) throw std::invalid_argument("TensorDataset: empty dataset");
    std::vector<Tensor> parts;
    parts.reserve(blocks.size());
    for (const auto& b : blocks) parts.push_back(b.xy);
    return concat_rows(parts);
}

Dataset TensorDataset::to_points() const {
    Dataset out;
    for (const auto& b : blocks) {
        const int m = b.x.rows(), M = b.x.cols();
        for (int r = 0; r < m; ++r) {
            Point p;
            p.x.resize(static_cast<std::size_t>(M));
            for (int c = 0; c < M; ++c) p.x[static_cast<std::size_t>(c)] = b.x.at(r, c);
            p.y = b.y[static_cast<std::size_t>(r)];
            out.push_back(std::move(p));
        }
    }
    return out;
}

Block make_block(const Tensor& x, std::vector<double> y, std::vector<bool> substituted, int step) {
    if (x.rows() != static_cast<int>(y.size()))
        throw std::invalid_argument("make_block: x rows != y count");
    std::vector<double> ynorm(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!std::isfinite(y[i])) throw std::invalid_argument("make_block: non-finite response");
        ynorm[i] = normalize_response(y[i]);
    }
    Block b;
    b.x = x;
    b.y = std::move(y);
    Tensor ycol = Tensor::constant(x.rows(), 1, std::move(ynorm));
    b.xy = concat_cols(std::vector<Tensor>{x, ycol});
    b.substituted = std::move(substituted);
    b.step = step;
    return b;
}

// ------------------------------------------------------------------ encode

DiagGaussian encode(const QueryNetParams& params, const QueryConfig& cfg,
                    const TensorDataset& data) {
    if (data.blocks.empty()) throw std::invalid_argument("encode: empty dataset");
    Tensor point_params = embed_batch(params.data_net(), data.stacked_xy());
    return pool(cfg.intersection, point_params, &params.attention_net());
}

DiagGaussian encode(const QueryNetParams& params, const QueryConfig& cfg, const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("encode: empty dataset");
    const int M = params.arity();
    std::vector<double> x_flat, y;
    for (const auto& p : data) {
        if (static_cast<int>(p.x.size()) != M)
            throw std::invalid_argument("encode: point arity mismatch");
        x_flat.insert(x_flat.end(), p.x.begin(), p.x.end());
        y.push_back(p.y);
    }
    const int n = static_cast<int>(data.size());
    Tensor x = Tensor::constant(n, M, std::move(x_flat));
    TensorDataset td;
    td.blocks.push_back(make_block(x, std::move(y), std::vector<bool>(static_cast<std::size_t>(n), false), 0));
    return encode(params, cfg, td);
}

// ------------------------------------------------------------------ decode

Tensor box_queries(const Tensor& raw, const QueryConfig& cfg) {
    const double mid = 0.5 * (cfg.domain_min + cfg.domain_max);
    const double half = 0.5 * (cfg.domain_max - cfg.domain_min);
    return add_scalar(scale(tanh_(raw), half), mid);
}

Tensor decode_qbd(const QueryNetParams& params, const QueryConfig& cfg, const DiagGaussian& emb,
                  int m, std::uint64_t noise_seed) {
    if (m < 1) throw std::invalid_argument("decode_qbd: m must be >= 1");
    Tensor q_row = params.query_net().forward(emb.params_row());
    DiagGaussian gq = DiagGaussian::from_net_output(q_row);
    Tensor latents = latent::sample(gq, m, noise_seed);
    return box_queries(params.inversion_net().forward(latents), cfg);
}

Tensor decode_qbs(const QueryNetParams& params, const QueryConfig& cfg, const DiagGaussian& emb,
                  int m) {
    const Mlp* head = params.qbs_head();
    if (!head) throw std::invalid_argument("decode_qbs: params built without a set head");
    if (m != params.qbs_points())
        throw std::invalid_argument("decode_qbs: requested " + std::to_string(m) +
                                    " points, head emits " + std::to_string(params.qbs_points()));
    Tensor flat = head->forward(emb.params_row());  // 1 x m*M
    return box_queries(reshape(flat, m, params.arity()), cfg);
}

Tensor decode_qbp(const QueryNetParams& params, const QueryConfig& cfg, const DiagGaussian& emb) {
    const Mlp* head = params.qbp_head();
    if (!head) throw std::invalid_argument("decode_qbp: params built without a point head");
    return box_queries(head->forward(emb.params_row()), cfg);
}

// -------------------------------------------------------------- query loop

namespace {

constexpr int kUniformDrawCap = 512;

std::vector<double> uniform_x(const QueryConfig& cfg, int arity, Rng& rng) {
    std::vector<double> x(static_cast<std::size_t>(arity));
    for (auto& v : x) v = rng.uniform(cfg.domain_min, cfg.domain_max);
    return x;
}

// uniform draw that the system can answer; the last resort of every path
std::pair<std::vector<double>, double> uniform_valid_point(const System& f,
                                                           const QueryConfig& cfg, int arity,
                                                           Rng& rng) {
    for (int t = 0; t < kUniformDrawCap; ++t) {
        auto x = uniform_x(cfg, arity, rng);
        if (auto y = f(x)) return {std::move(x), *y};
    }
    throw std::runtime_error("query loop: system kept failing on uniform draws");
}

std::vector<double> row_values(const Tensor& t, int r) {
    std::vector<double> out(static_cast<std::size_t>(t.cols()));
    for (int c = 0; c < t.cols(); ++c) out[static_cast<std::size_t>(c)] = t.at(r, c);
    return out;
}

}  // namespace

TensorDataset init_dataset(const System& f, const QueryConfig& cfg, int arity, Rng& rng) {
    const int m = cfg.points_per_step;
    std::vector<double> x_flat, y;
    for (int i = 0; i < m; ++i) {
        auto [x, yv] = uniform_valid_point(f, cfg, arity, rng);
        x_flat.insert(x_flat.end(), x.begin(), x.end());
        y.push_back(yv);
    }
    TensorDataset data;
    data.blocks.push_back(make_block(Tensor::constant(m, arity, std::move(x_flat)), std::move(y),
                                     std::vector<bool>(static_cast<std::size_t>(m), false), 0));
    return data;
}

void query_step(const QueryNetParams& params, const QueryConfig& cfg, const System& f,
                const DiagGaussian& emb, TensorDataset& data, Rng& rng, int step_index) {
    const int m = cfg.strategy == Strategy::Qbp ? 1 : cfg.points_per_step;
    const int M = params.arity();

    Tensor decoded;
    switch (cfg.strategy) {
        case Strategy::Qbd: decoded = decode_qbd(params, cfg, emb, m, rng.raw()); break;
        case Strategy::Qbs: decoded = decode_qbs(params, cfg, emb, m); break;
        case Strategy::Qbp: decoded = decode_qbp(params, cfg, emb); break;
    }

    std::vector<Tensor> rows;
    std::vector<double> y(static_cast<std::size_t>(m));
    std::vector<bool> substituted(static_cast<std::size_t>(m), false);
    for (int i = 0; i < m; ++i) {
        Tensor row = slice_rows(decoded, i, i + 1);
        std::optional<double> resp = f(row_values(row, 0));
        if (!resp && cfg.strategy == Strategy::Qbd) {
            // resample this point from the decoder before giving up on it
            for (int r = 0; r < cfg.retry_limit && !resp; ++r) {
                row = decode_qbd(params, cfg, emb, 1, rng.raw());
                resp = f(row_values(row, 0));
            }
        }
        if (!resp) {
            auto [x, yv] = uniform_valid_point(f, cfg, M, rng);
            row = Tensor::constant(1, M, std::move(x));
            resp = yv;
            substituted[static_cast<std::size_t>(i)] = true;
        }
        rows.push_back(row);
        y[static_cast<std::size_t>(i)] = *resp;
    }
    data.blocks.push_back(
        make_block(concat_rows(rows), std::move(y), std::move(substituted), step_index));
}

namespace {

RolloutRecord record_from(const TensorDataset& data) {
    RolloutRecord rec;
    rec.points = data.to_points();
    for (const auto& b : data.blocks)
        for (std::size_t i = 0; i < b.y.size(); ++i) {
            rec.step.push_back(b.step);
            rec.substituted.push_back(b.substituted[i]);
            if (b.substituted[i]) ++rec.substitutions;
        }
    return rec;
}

}  // namespace

namespace {

double mean_log_var(const DiagGaussian& g) {
    double s = 0.0;
    for (double v : g.log_var.values()) s += v;
    return s / static_cast<double>(g.dim());
}

}  // namespace

RolloutRecord run_query_loop(const QueryNetParams& params, const System& f,
                             const QueryConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    TensorDataset data = init_dataset(f, cfg, params.arity(), rng);
    std::vector<double> variances;
    for (int k = 1; k <= cfg.max_steps; ++k) {
        DiagGaussian emb = encode(params, cfg, data);
        variances.push_back(mean_log_var(emb));
        query_step(params, cfg, f, emb, data, rng, k);
    }
    variances.push_back(mean_log_var(encode(params, cfg, data)));
    RolloutRecord rec = record_from(data);
    rec.step_mean_log_var = std::move(variances);
    return rec;
}

RolloutRecord run_baseline_loop(const std::string& kind, const System& f, const QueryConfig& cfg,
                                int arity, std::uint64_t seed) {
    cfg.validate();
    const bool normal = kind == "normal";
    if (!normal && kind != "uniform")
        throw std::invalid_argument("baseline sampler must be 'uniform' or 'normal'");
    Rng rng(seed);

    auto draw = [&](Rng& r) {
        std::vector<double> x(static_cast<std::size_t>(arity));
        for (auto& v : x) {
            if (normal) {
                v = std::min(cfg.domain_max, std::max(cfg.domain_min, r.normal()));
            } else {
                v = r.uniform(cfg.domain_min, cfg.domain_max);
            }
        }
        return x;
    };

    TensorDataset data;
    const int total_steps = cfg.max_steps + 1;
    for (int k = 0; k < total_steps; ++k) {
        const int m = cfg.points_per_step;
        std::vector<double> x_flat, y;
        for (int i = 0; i < m; ++i) {
            std::vector<double> x;
            std::optional<double> resp;
            for (int t = 0; t < kUniformDrawCap && !resp; ++t) {
                x = draw(rng);
                resp = f(x);
            }
            if (!resp) throw std::runtime_error("baseline loop: system kept failing");
            x_flat.insert(x_flat.end(), x.begin(), x.end());
            y.push_back(*resp);
        }
        data.blocks.push_back(make_block(Tensor::constant(m, arity, std::move(x_flat)),
                                         std::move(y),
                                         std::vector<bool>(static_cast<std::size_t>(m), false), k));
    }
    return record_from(data);
}

}  // namespace quosr::qnet
