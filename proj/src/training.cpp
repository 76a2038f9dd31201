#include "quosr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace quosr::train {

using namespace quosr::ad;
using namespace quosr::latent;
using namespace quosr::qnet;

void TrainConfig::validate() const {
    if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
    if (!(temperature > 0.0)) throw std::invalid_argument("TrainConfig: temperature must be > 0");
    if (learning_rate < 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
    if (max_iterations < 0) throw std::invalid_argument("TrainConfig: max_iterations must be >= 0");
    if (checkpoint_interval < 1)
        throw std::invalid_argument("TrainConfig: checkpoint_interval must be >= 1");
    if (representation != "data" && representation != "expr")
        throw std::invalid_argument("TrainConfig: representation must be 'data' or 'expr'");
}

// ------------------------------------------------------------------ losses

namespace {

Tensor check_finite_sim(Tensor s, std::size_t i, std::size_t k) {
    if (!std::isfinite(s.value()))
        throw std::runtime_error("infonce: non-finite similarity between embeddings " +
                                 std::to_string(i) + " and " + std::to_string(k));
    return s;
}

// log sum exp over a list of scalar tensors, max-shifted for stability
Tensor logsumexp(std::span<const Tensor> terms) {
    double mx = terms[0].value();
    for (const auto& t : terms) mx = std::max(mx, t.value());
    std::vector<Tensor> shifted;
    shifted.reserve(terms.size());
    for (const auto& t : terms) shifted.push_back(exp_(add_scalar(t, -mx)));
    return add_scalar(log_(sum_all(concat_cols(shifted))), mx);
}

}  // namespace

Tensor modified_infonce(std::span<const DiagGaussian> embs, Similarity sim, double tau) {
    const std::size_t n2 = embs.size();
    if (n2 < 4 || n2 % 2 != 0)
        throw std::invalid_argument("modified_infonce: need an even batch of at least 4");
    if (!(tau > 0.0)) throw std::invalid_argument("modified_infonce: tau must be > 0");

    // scaled similarity matrix, diagonal unused
    std::vector<std::vector<Tensor>> s(n2, std::vector<Tensor>(n2));
    for (std::size_t i = 0; i < n2; ++i)
        for (std::size_t k = 0; k < n2; ++k) {
            if (i == k) continue;
            s[i][k] = check_finite_sim(scale(similarity(sim, embs[i], embs[k]), 1.0 / tau), i, k);
        }

    std::vector<Tensor> losses;
    losses.reserve(n2);
    for (std::size_t i = 0; i < n2; ++i) {
        const std::size_t partner = i ^ 1ull;  // (2i, 2i+1) are positive pairs
        std::vector<Tensor> others;
        others.reserve(n2 - 1);
        for (std::size_t k = 0; k < n2; ++k)
            if (k != i) others.push_back(s[i][k]);
        losses.push_back(sub(logsumexp(others), s[i][partner]));
    }
    return scale(sum_all(concat_cols(losses)), 1.0 / static_cast<double>(n2));
}

Tensor standard_infonce(std::span<const DiagGaussian> data_embs,
                        std::span<const DiagGaussian> expr_embs, Similarity sim, double tau) {
    const std::size_t n = data_embs.size();
    if (n < 2) throw std::invalid_argument("standard_infonce: need a batch of at least 2");
    if (expr_embs.size() != n)
        throw std::invalid_argument("standard_infonce: batch size mismatch");
    if (!(tau > 0.0)) throw std::invalid_argument("standard_infonce: tau must be > 0");

    std::vector<Tensor> losses;
    losses.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Tensor> row;
        row.reserve(n);
        for (std::size_t j = 0; j < n; ++j)
            row.push_back(
                check_finite_sim(scale(similarity(sim, data_embs[i], expr_embs[j]), 1.0 / tau), i, j));
        losses.push_back(sub(logsumexp(row), row[i]));
    }
    return scale(sum_all(concat_cols(losses)), 1.0 / static_cast<double>(n));
}

double kl_value(const DiagGaussian& p, const DiagGaussian& q) {
    const auto& mp = p.mu.values();
    const auto& mq = q.mu.values();
    const auto& lp = p.log_var.values();
    const auto& lq = q.log_var.values();
    double out = 0.0;
    for (std::size_t j = 0; j < mp.size(); ++j) {
        const double diff = mp[j] - mq[j];
        out += 0.5 * (lq[j] - lp[j]) + 0.5 * (std::exp(lp[j]) + diff * diff) * std::exp(-lq[j]) - 0.5;
    }
    return out;
}

// ------------------------------------------------------------ expr encoder

namespace {

std::vector<std::string> build_vocab() {
    std::vector<std::string> v{"<C>", "x"};
    for (int i = 0; i < 10; ++i) v.push_back("x" + std::to_string(i));
    for (const char* s : {"sin", "cos", "exp", "log", "sqrt"}) v.push_back(s);
    for (const char* s : {"+", "-", "*", "/", "^", "(", ")"}) v.push_back(s);
    return v;
}

}  // namespace

const std::vector<std::string>& ExprEncoder::vocab() {
    static const std::vector<std::string> v = build_vocab();
    return v;
}

std::vector<int> ExprEncoder::tokenize(const std::string& canonical) {
    const auto& v = vocab();
    auto id_of = [&](const std::string& tok) {
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] == tok) return static_cast<int>(i);
        throw std::invalid_argument("ExprEncoder: unknown token '" + tok + "'");
    };

    std::vector<int> out;
    std::size_t i = 0;
    while (i < canonical.size()) {
        const char c = canonical[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (c == '<') {
            if (canonical.compare(i, 3, "<C>") != 0)
                throw std::invalid_argument("ExprEncoder: malformed placeholder");
            out.push_back(id_of("<C>"));
            i += 3;
        } else if (std::isalpha(static_cast<unsigned char>(c))) {
            std::size_t j = i;
            while (j < canonical.size() && std::isalnum(static_cast<unsigned char>(canonical[j]))) ++j;
            out.push_back(id_of(canonical.substr(i, j - i)));
            i = j;
        } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            // numbers act as constants
            std::size_t j = i;
            while (j < canonical.size() &&
                   (std::isdigit(static_cast<unsigned char>(canonical[j])) || canonical[j] == '.' ||
                    canonical[j] == 'e' || canonical[j] == 'E' ||
                    ((canonical[j] == '+' || canonical[j] == '-') && j > i &&
                     (canonical[j - 1] == 'e' || canonical[j - 1] == 'E'))))
                ++j;
            out.push_back(id_of("<C>"));
            i = j;
        } else {
            out.push_back(id_of(std::string(1, c)));
            ++i;
        }
    }
    if (out.empty()) throw std::invalid_argument("ExprEncoder: empty token stream");
    return out;
}

ExprEncoder::ExprEncoder(int latent_dim, const qnet::NetConfig& net, std::uint64_t seed) {
    const int V = static_cast<int>(vocab().size());
    const int e = net.hidden_width;
    Rng r0(mix_seed(seed, 10));
    std::vector<double> table(static_cast<std::size_t>(V) * e);
    const double limit = std::sqrt(6.0 / (V + e));
    for (auto& v : table) v = r0.uniform(-limit, limit);
    table_ = Tensor::param(V, e, std::move(table));
    MlpConfig mc{net.hidden_width, net.hidden_depth, net.hidden_act, net.output_init_scale};
    Rng r1(mix_seed(seed, 11));
    mlp_ = Mlp(e, 2 * latent_dim, mc, r1);
}

DiagGaussian ExprEncoder::encode(const expr::Expr& f) const {
    const std::string canonical = expr::skeletonize(f).str();
    const auto ids = tokenize(canonical);
    const int V = table_.rows();
    std::vector<double> counts(static_cast<std::size_t>(V), 0.0);
    for (int id : ids) counts[static_cast<std::size_t>(id)] += 1.0 / static_cast<double>(ids.size());
    Tensor pooled = matmul(Tensor::constant(1, V, std::move(counts)), table_);
    return DiagGaussian::from_net_output(mlp_.forward(pooled));
}

std::vector<Tensor> ExprEncoder::parameters() const {
    std::vector<Tensor> out{table_};
    for (auto& p : mlp_.parameters()) out.push_back(p);
    return out;
}

std::vector<std::pair<std::string, Tensor>> ExprEncoder::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("expr.table", table_);
    for (auto& [name, t] : mlp_.named_parameters()) out.emplace_back("expr.mlp." + name, t);
    return out;
}

// ----------------------------------------------------------------- trainer

Trainer::Trainer(std::vector<expr::Expr> family, const qnet::NetConfig& net,
                 const qnet::QueryConfig& query, const TrainConfig& train)
    : family_(std::move(family)), net_(net), query_(query), train_(train),
      rng_(mix_seed(train.seed, 1000)) {
    query_.validate();
    train_.validate();
    if (family_.empty()) throw std::invalid_argument("Trainer: empty expression family");
    if (train_.batch_size > static_cast<int>(family_.size()))
        throw std::invalid_argument("Trainer: batch_size " + std::to_string(train_.batch_size) +
                                    " exceeds family size " + std::to_string(family_.size()));
    const int arity = family_[0].arity();
    for (const auto& f : family_)
        if (f.arity() != arity) throw std::invalid_argument("Trainer: mixed arity in family");
    for (const auto& f : family_) systems_.push_back(system_from_expr(f));
    params_ = QueryNetParams(arity, net_, query_.strategy, query_.points_per_step, train_.seed);
    if (train_.representation == "expr")
        expr_enc_.emplace(net_.latent_dim, net_, train_.seed);
}

std::string Trainer::fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the family text
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= '\n';
        h *= 1099511628211ull;
    };
    for (const auto& f : family_) mix(f.str());
    return std::to_string(h) + ":" + std::to_string(family_.size()) + ":" +
           std::to_string(net_.latent_dim) + ":" + to_string(query_.strategy) + ":" +
           latent::to_string(query_.intersection) + ":" + latent::to_string(query_.similarity) +
           ":" + train_.representation + ":" + std::to_string(query_.max_steps) + ":" +
           std::to_string(query_.points_per_step);
}

TraceRow Trainer::run_iteration() {
    const int B = train_.batch_size;
    const int K = std::max(1, query_.max_steps);
    const bool siamese = train_.representation == "data";

    // batch: seeded shuffle, first B (no within-batch repeats, so negatives
    // really are different systems)
    std::vector<int> order(family_.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i], order[rng_.below(i + 1)]);
    order.resize(static_cast<std::size_t>(B));

    // independent initial conditions per branch
    std::vector<TensorDataset> branch_a, branch_b;
    for (int idx : order) {
        branch_a.push_back(init_dataset(systems_[static_cast<std::size_t>(idx)], query_, params_.arity(), rng_));
        if (siamese)
            branch_b.push_back(init_dataset(systems_[static_cast<std::size_t>(idx)], query_, params_.arity(), rng_));
    }

    std::vector<DiagGaussian> expr_embs;
    if (!siamese)
        for (int idx : order) expr_embs.push_back(expr_enc_->encode(family_[static_cast<std::size_t>(idx)]));

    TraceRow row;
    row.iteration = iteration_ + 1;
    std::vector<Tensor> step_losses;
    for (int k = 1; k <= query_.max_steps || (query_.max_steps == 0 && k == 1); ++k) {
        std::vector<DiagGaussian> embs;
        if (siamese) {
            for (int i = 0; i < B; ++i) {
                embs.push_back(encode(params_, query_, branch_a[static_cast<std::size_t>(i)]));
                embs.push_back(encode(params_, query_, branch_b[static_cast<std::size_t>(i)]));
            }
            step_losses.push_back(modified_infonce(embs, query_.similarity, train_.temperature));
        } else {
            for (int i = 0; i < B; ++i)
                embs.push_back(encode(params_, query_, branch_a[static_cast<std::size_t>(i)]));
            step_losses.push_back(
                standard_infonce(embs, expr_embs, query_.similarity, train_.temperature));
        }

        // positive/negative KL statistics at this step (plain numbers)
        StepKlStats stats;
        int pos_n = 0, neg_n = 0;
        if (siamese) {
            for (int i = 0; i < B; ++i) {
                stats.pos_mean += kl_value(embs[static_cast<std::size_t>(2 * i)], embs[static_cast<std::size_t>(2 * i + 1)]);
                stats.pos_mean += kl_value(embs[static_cast<std::size_t>(2 * i + 1)], embs[static_cast<std::size_t>(2 * i)]);
                pos_n += 2;
            }
            for (std::size_t a = 0; a < embs.size(); ++a)
                for (std::size_t b = 0; b < embs.size(); ++b) {
                    if (a == b || (a ^ 1) == b) continue;
                    stats.neg_mean += kl_value(embs[a], embs[b]);
                    ++neg_n;
                }
        } else {
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < B; ++j) {
                    const double v = kl_value(embs[static_cast<std::size_t>(i)], expr_embs[static_cast<std::size_t>(j)]);
                    if (i == j) {
                        stats.pos_mean += v;
                        ++pos_n;
                    } else {
                        stats.neg_mean += v;
                        ++neg_n;
                    }
                }
        }
        if (pos_n > 0) stats.pos_mean /= pos_n;
        if (neg_n > 0) stats.neg_mean /= neg_n;
        row.per_step.push_back(stats);

        if (k <= query_.max_steps) {
            for (int i = 0; i < B; ++i) {
                query_step(params_, query_, systems_[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])],
                           embs[static_cast<std::size_t>(siamese ? 2 * i : i)], branch_a[static_cast<std::size_t>(i)], rng_, k);
                if (siamese)
                    query_step(params_, query_, systems_[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])],
                               embs[static_cast<std::size_t>(2 * i + 1)], branch_b[static_cast<std::size_t>(i)], rng_, k);
            }
        }
    }

    Tensor loss = scale(sum_all(concat_cols(step_losses)), 1.0 / static_cast<double>(K));
    row.loss = loss.value();
    if (!std::isfinite(row.loss))
        throw SgdError("training: loss diverged to " + format_double(row.loss) + " at iteration " +
                       std::to_string(row.iteration));

    params_.zero_grad();
    if (expr_enc_)
        for (auto& p : expr_enc_->parameters()) p.zero_grad();
    backward(loss);

    if (train_.learning_rate > 0.0) {
        std::vector<Tensor> all = params_.parameters();
        if (expr_enc_)
            for (auto& p : expr_enc_->parameters()) all.push_back(p);
        sgd_step(all, train_.learning_rate);
    }
    return row;
}

TrainResult Trainer::run(int upto, const std::function<void(const TraceRow&)>& on_row) {
    TrainResult res;
    while (iteration_ < upto) {
        TraceRow row;
        try {
            row = run_iteration();
        } catch (const std::runtime_error& e) {
            res.status = TrainStatus::Diverged;
            res.message = e.what();
            return res;
        }
        ++iteration_;
        ++res.iterations_done;
        if (on_row) on_row(row);
    }
    return res;
}

ad::Checkpoint Trainer::to_checkpoint() const {
    ad::Checkpoint ck;
    ck.tensors = params_.named_parameters();
    if (expr_enc_)
        for (auto& nt : expr_enc_->named_parameters()) ck.tensors.push_back(nt);
    ck.meta["iteration"] = std::to_string(iteration_);
    ck.meta["rng"] = rng_.save_state();
    ck.meta["fingerprint"] = fingerprint();
    return ck;
}

void Trainer::restore(const ad::Checkpoint& ck) {
    auto it = ck.meta.find("fingerprint");
    if (it == ck.meta.end() || it->second != fingerprint())
        throw std::runtime_error(
            "Trainer: checkpoint belongs to a different family/configuration");

    std::size_t n_params = params_.named_parameters().size();
    std::vector<std::pair<std::string, Tensor>> core(ck.tensors.begin(),
                                                     ck.tensors.begin() + static_cast<std::ptrdiff_t>(std::min(n_params, ck.tensors.size())));
    params_.load_named(core);
    if (expr_enc_) {
        auto own = expr_enc_->named_parameters();
        if (ck.tensors.size() != n_params + own.size())
            throw std::runtime_error("Trainer: checkpoint tensor count mismatch");
        for (std::size_t i = 0; i < own.size(); ++i) {
            const auto& [name, t] = ck.tensors[n_params + i];
            if (name != own[i].first)
                throw std::runtime_error("Trainer: tensor name mismatch '" + name + "'");
            own[i].second.set_values(t.values());
        }
    } else if (ck.tensors.size() != n_params) {
        throw std::runtime_error("Trainer: checkpoint tensor count mismatch");
    }
    iteration_ = std::stoi(ck.meta.at("iteration"));
    rng_.load_state(ck.meta.at("rng"));
}

KlSeparation kl_separation(const qnet::QueryNetParams& params, const qnet::QueryConfig& cfg,
                           std::span<const expr::Expr> systems, std::uint64_t seed) {
    if (systems.size() < 2)
        throw std::invalid_argument("kl_separation: need at least two systems");
    std::vector<DiagGaussian> a, b;
    for (std::size_t i = 0; i < systems.size(); ++i) {
        System f = system_from_expr(systems[i]);
        RolloutRecord ra = run_query_loop(params, f, cfg, mix_seed(seed, 2 * i));
        RolloutRecord rb = run_query_loop(params, f, cfg, mix_seed(seed, 2 * i + 1));
        a.push_back(encode(params, cfg, ra.points));
        b.push_back(encode(params, cfg, rb.points));
    }
    KlSeparation sep;
    int pos_n = 0, neg_n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sep.pos_mean += kl_value(a[i], b[i]) + kl_value(b[i], a[i]);
        pos_n += 2;
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (i == j) continue;
            sep.neg_mean += kl_value(a[i], b[j]) + kl_value(b[j], a[i]);
            neg_n += 2;
        }
    }
    sep.pos_mean /= pos_n;
    sep.neg_mean /= neg_n;
    return sep;
}

}  // namespace quosr::train
