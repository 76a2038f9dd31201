#include "quosr/mioracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "quosr/common.hpp"

namespace quosr::mi {

namespace {

constexpr double kLog2 = 0.6931471805599453094172321214581766;

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace

void DiscreteFamily::validate() const {
    if (grid_size < 1) throw std::invalid_argument("family: grid_size must be >= 1");
    if (alphabet < 2) throw std::invalid_argument("family: alphabet must be >= 2");
    if (table.empty()) throw std::invalid_argument("family: no functions");
    if (prior.size() != table.size())
        throw std::invalid_argument("family: prior length != function count");
    double mass = 0.0;
    for (double p : prior) {
        if (!(p >= 0.0)) throw std::invalid_argument("family: negative prior entry");
        mass += p;
    }
    if (std::fabs(mass - 1.0) > 1e-9)
        throw std::invalid_argument("family: prior sums to " + format_double(mass) + ", not 1");
    for (const auto& row : table) {
        if (static_cast<int>(row.size()) != grid_size)
            throw std::invalid_argument("family: table row length != grid_size");
        for (int s : row)
            if (s < 0 || s >= alphabet)
                throw std::invalid_argument("family: response symbol out of range");
    }
}

bool DiscreteFamily::is_separable() const {
    std::set<std::vector<int>> rows(table.begin(), table.end());
    return rows.size() == table.size();
}

DiscreteFamily random_separable_family(std::uint64_t seed, int n_functions, int grid_size,
                                       int alphabet, bool uniform_prior) {
    if (static_cast<double>(n_functions) > std::pow(static_cast<double>(alphabet), grid_size))
        throw std::invalid_argument("random_separable_family: alphabet^grid too small");
    for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng(mix_seed(seed, attempt));
        DiscreteFamily fam;
        fam.grid_size = grid_size;
        fam.alphabet = alphabet;
        fam.table.resize(static_cast<std::size_t>(n_functions));
        for (auto& row : fam.table) {
            row.resize(static_cast<std::size_t>(grid_size));
            for (auto& s : row) s = static_cast<int>(rng.below(static_cast<std::uint64_t>(alphabet)));
        }
        if (uniform_prior) {
            fam.prior.assign(static_cast<std::size_t>(n_functions), 1.0 / n_functions);
        } else {
            // gamma(2)-distributed weights keep the prior skew mild
            fam.prior.resize(static_cast<std::size_t>(n_functions));
            double total = 0.0;
            for (auto& p : fam.prior) {
                p = -std::log(1.0 - rng.uniform()) - std::log(1.0 - rng.uniform());
                total += p;
            }
            for (auto& p : fam.prior) p /= total;
        }
        if (fam.is_separable()) {
            fam.validate();
            return fam;
        }
    }
}

double entropy_bits(std::span<const double> prior) {
    double h = 0.0;
    for (double p : prior) h -= xlogx(p);
    return h / kLog2;
}

double entropy_bits(const DiscreteFamily& fam) { return entropy_bits(fam.prior); }

namespace {

// entropy (nats) of the renormalized prior restricted to `members`
double subset_entropy_nats(const DiscreteFamily& fam, std::span<const int> members) {
    double mass = 0.0;
    for (int f : members) mass += fam.prior[static_cast<std::size_t>(f)];
    if (mass <= 0.0) return 0.0;
    double h = 0.0;
    for (int f : members) h -= xlogx(fam.prior[static_cast<std::size_t>(f)] / mass);
    return h;
}

// split members by response symbol at grid point x
std::map<int, std::vector<int>> split_by(const DiscreteFamily& fam, std::span<const int> members,
                                         int x) {
    std::map<int, std::vector<int>> groups;
    for (int f : members) groups[fam.table[static_cast<std::size_t>(f)][static_cast<std::size_t>(x)]].push_back(f);
    return groups;
}

double subset_mass(const DiscreteFamily& fam, std::span<const int> members) {
    double m = 0.0;
    for (int f : members) m += fam.prior[static_cast<std::size_t>(f)];
    return m;
}

}  // namespace

double mutual_information_bits(const DiscreteFamily& fam, std::span<const int> queries) {
    fam.validate();
    for (int q : queries)
        if (q < 0 || q >= fam.grid_size)
            throw std::invalid_argument("mutual_information: query outside grid");

    // group functions by their joint response pattern on the query set
    std::map<std::vector<int>, std::vector<int>> groups;
    for (int f = 0; f < fam.size(); ++f) {
        std::vector<int> pattern;
        pattern.reserve(queries.size());
        for (int q : queries) pattern.push_back(fam.table[static_cast<std::size_t>(f)][static_cast<std::size_t>(q)]);
        groups[pattern].push_back(f);
    }
    double cond = 0.0;  // H(F | D) in nats
    for (const auto& [pattern, members] : groups)
        cond += subset_mass(fam, members) * subset_entropy_nats(fam, members);
    return entropy_bits(fam) - cond / kLog2;
}

// ------------------------------------------------------------------- trees

namespace {

double avg_path_rec(const TreeNode* node, const DiscreteFamily& fam, int depth) {
    if (node->is_leaf()) return depth * subset_mass(fam, node->members);
    double total = 0.0;
    for (const auto& [sym, child] : node->children)
        total += avg_path_rec(child.get(), fam, depth + 1);
    return total;
}

int depth_rec(const TreeNode* node) {
    if (node->is_leaf()) return 0;
    int d = 0;
    for (const auto& [sym, child] : node->children) d = std::max(d, depth_rec(child.get()));
    return 1 + d;
}

}  // namespace

double DecisionTree::average_path(const DiscreteFamily& fam) const {
    if (!root) return 0.0;
    return avg_path_rec(root.get(), fam, 0);
}

int DecisionTree::depth() const { return root ? depth_rec(root.get()) : 0; }

DecisionTree greedy_max_mi_tree(const DiscreteFamily& fam) {
    fam.validate();
    DecisionTree tree;
    tree.complete = true;

    std::function<std::unique_ptr<TreeNode>(std::vector<int>)> expand =
        [&](std::vector<int> members) -> std::unique_ptr<TreeNode> {
        auto node = std::make_unique<TreeNode>();
        if (members.size() <= 1) {
            node->members = std::move(members);
            return node;
        }
        // information gain of x == H(S) - H(S | response at x), nats
        const double h_s = subset_entropy_nats(fam, members);
        double best_gain = 0.0;
        int best_x = -1;
        for (int x = 0; x < fam.grid_size; ++x) {
            auto groups = split_by(fam, members, x);
            if (groups.size() < 2) continue;
            double cond = 0.0;
            const double mass = subset_mass(fam, members);
            for (const auto& [sym, g] : groups)
                cond += (subset_mass(fam, g) / mass) * subset_entropy_nats(fam, g);
            const double gain = h_s - cond;
            if (gain > best_gain + 1e-12) {
                best_gain = gain;
                best_x = x;
            }
        }
        if (best_x < 0) {
            // no query separates this subset: flagged multi-member leaf
            node->members = std::move(members);
            tree.complete = false;
            return node;
        }
        node->query = best_x;
        for (auto& [sym, g] : split_by(fam, members, best_x))
            node->children[sym] = expand(std::move(g));
        return node;
    };

    std::vector<int> all(static_cast<std::size_t>(fam.size()));
    for (int f = 0; f < fam.size(); ++f) all[static_cast<std::size_t>(f)] = f;
    tree.root = expand(std::move(all));
    return tree;
}

namespace {

struct OptimalSolver {
    const DiscreteFamily& fam;
    // mask -> (expected remaining length, best query)
    std::unordered_map<std::uint32_t, std::pair<double, int>> memo;
    bool complete = true;

    std::vector<int> mask_members(std::uint32_t mask) const {
        std::vector<int> out;
        for (int f = 0; f < fam.size(); ++f)
            if (mask & (1u << f)) out.push_back(f);
        return out;
    }

    double solve(std::uint32_t mask) {
        auto it = memo.find(mask);
        if (it != memo.end()) return it->second.first;
        const auto members = mask_members(mask);
        if (members.size() <= 1) {
            memo[mask] = {0.0, -1};
            return 0.0;
        }
        const double mass = subset_mass(fam, members);
        double best = -1.0;
        int best_x = -1;
        for (int x = 0; x < fam.grid_size; ++x) {
            auto groups = split_by(fam, members, x);
            if (groups.size() < 2) continue;  // useless query, never optimal
            double cost = 1.0;
            for (const auto& [sym, g] : groups) {
                std::uint32_t child = 0;
                for (int f : g) child |= (1u << f);
                cost += (subset_mass(fam, g) / mass) * solve(child);
            }
            if (best < 0.0 || cost < best - 1e-12) {
                best = cost;
                best_x = x;
            }
        }
        if (best_x < 0) {
            complete = false;
            memo[mask] = {0.0, -1};
            return 0.0;
        }
        memo[mask] = {best, best_x};
        return best;
    }

    std::unique_ptr<TreeNode> build(std::uint32_t mask) {
        solve(mask);
        const int q = memo.at(mask).second;
        auto node = std::make_unique<TreeNode>();
        auto members = mask_members(mask);
        if (q < 0) {
            node->members = std::move(members);
            return node;
        }
        node->query = q;
        for (auto& [sym, g] : split_by(fam, members, q)) {
            std::uint32_t child = 0;
            for (int f : g) child |= (1u << f);
            node->children[sym] = build(child);
        }
        return node;
    }
};

}  // namespace

DecisionTree optimal_tree(const DiscreteFamily& fam, int depth_bound) {
    fam.validate();
    if (fam.size() > 16 || fam.grid_size > 8)
        throw std::invalid_argument("optimal_tree: bound exceeded (needs n <= 16, g <= 8)");
    OptimalSolver solver{fam, {}, true};
    const std::uint32_t full = fam.size() == 32 ? 0xffffffffu : ((1u << fam.size()) - 1u);
    DecisionTree tree;
    tree.root = solver.build(full);
    tree.complete = solver.complete;
    if (tree.depth() > depth_bound)
        throw std::invalid_argument("optimal_tree: bound exceeded (depth " +
                                    std::to_string(tree.depth()) + " > " +
                                    std::to_string(depth_bound) + ")");
    return tree;
}

double residual_optimal_path(const DiscreteFamily& fam, std::span<const int> queries) {
    fam.validate();
    if (fam.size() > 16 || fam.grid_size > 8)
        throw std::invalid_argument("residual_optimal_path: bound exceeded");
    OptimalSolver solver{fam, {}, true};
    // condition on the joint response pattern, then solve each residual subset
    std::map<std::vector<int>, std::uint32_t> groups;
    for (int f = 0; f < fam.size(); ++f) {
        std::vector<int> pattern;
        for (int q : queries) pattern.push_back(fam.table[static_cast<std::size_t>(f)][static_cast<std::size_t>(q)]);
        groups[pattern] |= (1u << f);
    }
    double total = 0.0;
    for (const auto& [pattern, mask] : groups) {
        const auto members = solver.mask_members(mask);
        total += subset_mass(fam, members) * solver.solve(mask);
    }
    return total;
}

HuffmanReport check_huffman_bound(const DiscreteFamily& fam, const DecisionTree& tree) {
    fam.validate();
    HuffmanReport rep;
    rep.entropy = entropy_bits(fam);
    rep.c = 1.0 / std::log2(static_cast<double>(fam.alphabet));
    rep.avg_path = tree.average_path(fam);
    rep.lower = rep.c * rep.entropy;
    rep.upper = rep.c * rep.entropy + 1.0;
    rep.holds = rep.avg_path >= rep.lower - 1e-9 && rep.avg_path < rep.upper - 1e-12;
    return rep;
}

// ----------------------------------------------------------------- claim 2

void StochasticPolicy::validate(int n_functions) const {
    if (static_cast<int>(cond.size()) != n_functions)
        throw std::invalid_argument("policy: row count != function count");
    const int m = outcomes();
    if (m < 1) throw std::invalid_argument("policy: no outcomes");
    for (const auto& row : cond) {
        if (static_cast<int>(row.size()) != m)
            throw std::invalid_argument("policy: ragged outcome rows");
        double mass = 0.0;
        for (double p : row) {
            if (!(p >= 0.0)) throw std::invalid_argument("policy: negative probability");
            mass += p;
        }
        if (std::fabs(mass - 1.0) > 1e-9)
            throw std::invalid_argument("policy: conditional row sums to " + format_double(mass));
    }
}

StochasticPolicy query_set_policy(const DiscreteFamily& fam,
                                  const std::vector<std::pair<std::vector<int>, double>>& sets) {
    fam.validate();
    double total = 0.0;
    for (const auto& [queries, p] : sets) {
        if (!(p >= 0.0)) throw std::invalid_argument("query_set_policy: negative probability");
        for (int q : queries)
            if (q < 0 || q >= fam.grid_size)
                throw std::invalid_argument("query_set_policy: query outside grid");
        total += p;
    }
    if (std::fabs(total - 1.0) > 1e-9)
        throw std::invalid_argument("query_set_policy: set probabilities sum to " +
                                    format_double(total));

    // outcome blocks: one per set, alphabet^|set| response patterns each
    std::vector<int> block_start;
    int n_outcomes = 0;
    for (const auto& [queries, p] : sets) {
        block_start.push_back(n_outcomes);
        int patterns = 1;
        for (std::size_t i = 0; i < queries.size(); ++i) patterns *= fam.alphabet;
        n_outcomes += patterns;
    }

    StochasticPolicy pol;
    pol.cond.assign(static_cast<std::size_t>(fam.size()),
                    std::vector<double>(static_cast<std::size_t>(n_outcomes), 0.0));
    for (int f = 0; f < fam.size(); ++f) {
        for (std::size_t s = 0; s < sets.size(); ++s) {
            const auto& queries = sets[s].first;
            int code = 0;
            for (int q : queries)
                code = code * fam.alphabet + fam.table[static_cast<std::size_t>(f)][static_cast<std::size_t>(q)];
            pol.cond[static_cast<std::size_t>(f)][static_cast<std::size_t>(block_start[s] + code)] += sets[s].second;
        }
    }
    pol.validate(fam.size());
    return pol;
}

namespace {

std::vector<double> marginal(const DiscreteFamily& fam, const StochasticPolicy& pol) {
    std::vector<double> m(static_cast<std::size_t>(pol.outcomes()), 0.0);
    for (int f = 0; f < fam.size(); ++f)
        for (int o = 0; o < pol.outcomes(); ++o)
            m[static_cast<std::size_t>(o)] += fam.prior[static_cast<std::size_t>(f)] * pol.cond[static_cast<std::size_t>(f)][static_cast<std::size_t>(o)];
    return m;
}

double mi_nats(const DiscreteFamily& fam, const StochasticPolicy& pol,
               std::span<const double> marg) {
    double out = 0.0;
    for (int f = 0; f < fam.size(); ++f)
        for (int o = 0; o < pol.outcomes(); ++o) {
            const double joint = fam.prior[static_cast<std::size_t>(f)] * pol.cond[static_cast<std::size_t>(f)][static_cast<std::size_t>(o)];
            if (joint > 0.0)
                out += joint * std::log(pol.cond[static_cast<std::size_t>(f)][static_cast<std::size_t>(o)] / marg[static_cast<std::size_t>(o)]);
        }
    return out;
}

int sample_index(Rng& rng, std::span<const double> probs) {
    double u = rng.uniform();
    for (std::size_t i = 0; i < probs.size(); ++i) {
        u -= probs[i];
        if (u < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

}  // namespace

Claim2Report check_claim2_chain(const DiscreteFamily& fam, const StochasticPolicy& d_policy,
                                const StochasticPolicy& dprime_policy,
                                const std::vector<std::vector<double>>* sim_table,
                                int contrastive_n, int samples, std::uint64_t seed) {
    fam.validate();
    d_policy.validate(fam.size());
    dprime_policy.validate(fam.size());
    if (contrastive_n < 2) throw std::invalid_argument("claim2: contrastive_n must be >= 2");
    if (samples < 100) throw std::invalid_argument("claim2: need at least 100 samples");

    const int od = d_policy.outcomes();
    const int op = dprime_policy.outcomes();
    const std::vector<double> md = marginal(fam, d_policy);
    const std::vector<double> mp = marginal(fam, dprime_policy);

    // mixture joint q(d, d') = sum_f p(f) P(d|f) P(d'|f)
    std::vector<std::vector<double>> q(static_cast<std::size_t>(od),
                                       std::vector<double>(static_cast<std::size_t>(op), 0.0));
    for (int f = 0; f < fam.size(); ++f)
        for (int d = 0; d < od; ++d) {
            const double pd = fam.prior[static_cast<std::size_t>(f)] * d_policy.cond[static_cast<std::size_t>(f)][static_cast<std::size_t>(d)];
            if (pd == 0.0) continue;
            for (int dp = 0; dp < op; ++dp)
                q[static_cast<std::size_t>(d)][static_cast<std::size_t>(dp)] += pd * dprime_policy.cond[static_cast<std::size_t>(f)][static_cast<std::size_t>(dp)];
        }

    Claim2Report rep;
    for (int d = 0; d < od; ++d)
        for (int dp = 0; dp < op; ++dp) {
            const double v = q[static_cast<std::size_t>(d)][static_cast<std::size_t>(dp)];
            if (v > 0.0) rep.kl_term += v * std::log(v / (md[static_cast<std::size_t>(d)] * mp[static_cast<std::size_t>(dp)]));
        }
    rep.mi_d = mi_nats(fam, d_policy, md);
    rep.mi_dprime = mi_nats(fam, dprime_policy, mp);

    // critic: provided table or the optimal one log(q / (m_d * m_d'))
    auto sim = [&](int d, int dp) -> double {
        if (sim_table) return (*sim_table)[static_cast<std::size_t>(d)][static_cast<std::size_t>(dp)];
        const double v = q[static_cast<std::size_t>(d)][static_cast<std::size_t>(dp)];
        if (v <= 0.0) return -1e9;
        return std::log(v / (md[static_cast<std::size_t>(d)] * mp[static_cast<std::size_t>(dp)]));
    };

    // Monte Carlo estimate of -L'_NCE: positive pair from the mixture joint,
    // the other N-1 partners from the product marginal
    Rng rng(seed);
    double acc = 0.0, acc2 = 0.0;
    std::vector<double> sims(static_cast<std::size_t>(contrastive_n));
    for (int s = 0; s < samples; ++s) {
        const int f = sample_index(rng, fam.prior);
        const int d = sample_index(rng, d_policy.cond[static_cast<std::size_t>(f)]);
        sims[0] = sim(d, sample_index(rng, dprime_policy.cond[static_cast<std::size_t>(f)]));
        for (int j = 1; j < contrastive_n; ++j) sims[static_cast<std::size_t>(j)] = sim(d, sample_index(rng, mp));
        const double mx = *std::max_element(sims.begin(), sims.end());
        double z = 0.0;
        for (double v : sims) z += std::exp(v - mx);
        const double val = sims[0] - (mx + std::log(z) - std::log(static_cast<double>(contrastive_n)));
        acc += val;
        acc2 += val * val;
    }
    rep.neg_lnce = acc / samples;
    const double var = std::max(0.0, acc2 / samples - rep.neg_lnce * rep.neg_lnce);
    rep.neg_lnce_sigma = std::sqrt(var / samples);

    rep.slack_lower = rep.kl_term - rep.neg_lnce;
    rep.slack_upper = std::min(rep.mi_d, rep.mi_dprime) - rep.kl_term;
    rep.holds = rep.neg_lnce - 3.0 * rep.neg_lnce_sigma <= rep.kl_term + 1e-9 &&
                rep.kl_term <= std::min(rep.mi_d, rep.mi_dprime) + 1e-9;
    return rep;
}

// -------------------------------------------------------------------- files

namespace {
constexpr const char* kFamilyHeader = "# quosr-dfamily v1";
}

DiscreteFamily load_family(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("family: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(is, line) || line != kFamilyHeader)
        throw std::runtime_error("family: unknown header/version in '" + path + "'");

    DiscreteFamily fam;
    int n_functions = -1;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "grid") {
            ls >> fam.grid_size;
        } else if (key == "alphabet") {
            ls >> fam.alphabet;
        } else if (key == "functions") {
            ls >> n_functions;
        } else if (key == "prior") {
            double p;
            while (ls >> p) fam.prior.push_back(p);
        } else if (key == "table") {
            std::vector<int> row;
            int s;
            while (ls >> s) row.push_back(s);
            fam.table.push_back(std::move(row));
        } else {
            throw std::runtime_error("family: unknown key '" + key + "' in '" + path + "'");
        }
        if (ls.bad()) throw std::runtime_error("family: malformed line '" + line + "'");
    }
    if (n_functions >= 0 && n_functions != static_cast<int>(fam.table.size()))
        throw std::runtime_error("family: declared " + std::to_string(n_functions) +
                                 " functions, found " + std::to_string(fam.table.size()));
    fam.validate();
    return fam;
}

void save_family(const std::string& path, const DiscreteFamily& fam) {
    fam.validate();
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("family: cannot open '" + path + "' for writing");
    os << kFamilyHeader << "\n";
    os << "grid " << fam.grid_size << "\n";
    os << "alphabet " << fam.alphabet << "\n";
    os << "functions " << fam.size() << "\n";
    os << "prior";
    for (double p : fam.prior) os << ' ' << format_double(p);
    os << "\n";
    for (const auto& row : fam.table) {
        os << "table";
        for (int s : row) os << ' ' << s;
        os << "\n";
    }
    if (!os) throw std::runtime_error("family: write failure on '" + path + "'");
}

}  // namespace quosr::mi
