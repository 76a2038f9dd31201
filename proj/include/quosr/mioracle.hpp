#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace quosr::mi {

/// Finite function family over a finite input grid with responses quantized
/// to symbols 0..alphabet-1, plus a prior over the functions. Everything the
/// brute-force information-theory checks need.
struct DiscreteFamily {
    int grid_size = 0;
    int alphabet = 0;
    std::vector<std::vector<int>> table;  // [function][grid point] -> symbol
    std::vector<double> prior;

    int size() const { return static_cast<int>(table.size()); }
    void validate() const;
    /// true when every pair of functions differs on some grid point
    bool is_separable() const;
};

/// iid-uniform response tables, resampled until separable.
DiscreteFamily random_separable_family(std::uint64_t seed, int n_functions, int grid_size,
                                       int alphabet, bool uniform_prior);

double entropy_bits(std::span<const double> prior);
double entropy_bits(const DiscreteFamily& fam);

/// Exact plug-in I(F; D) in bits for a deterministic query set D (grid
/// indices). I = H(F) - H(F | responses on D), by enumeration.
double mutual_information_bits(const DiscreteFamily& fam, std::span<const int> queries);

struct TreeNode {
    int query = -1;                // -1 marks a leaf
    std::vector<int> members;      // function indices (leaves only)
    std::map<int, std::unique_ptr<TreeNode>> children;  // response symbol -> child
    bool is_leaf() const { return query < 0; }
};

struct DecisionTree {
    std::unique_ptr<TreeNode> root;
    bool complete = true;  // false when some leaf still holds >1 function

    double average_path(const DiscreteFamily& fam) const;
    int depth() const;
};

/// Expands the node whose query maximizes conditional information gain;
/// ties break toward the lowest grid index. Non-separable subsets become
/// flagged multi-member leaves.
DecisionTree greedy_max_mi_tree(const DiscreteFamily& fam);

/// Exhaustive minimum of the prior-weighted average decision path, memoized
/// over function subsets. Feasible for n <= 16, g <= 8; both limits and the
/// depth bound are enforced.
DecisionTree optimal_tree(const DiscreteFamily& fam, int depth_bound);

/// Prior-weighted optimal continuation length after the responses to a
/// fixed query set have been observed.
double residual_optimal_path(const DiscreteFamily& fam, std::span<const int> queries);

struct HuffmanReport {
    double entropy = 0.0;   // H(F) in bits
    double c = 0.0;         // 1 / log2(alphabet)
    double avg_path = 0.0;  // average decision path of the checked tree
    double lower = 0.0;     // c * H
    double upper = 0.0;     // c * H + 1
    bool holds = false;
};

/// Verifies c*H(F) <= L <= < c*H(F) + 1 for the given (optimal) tree, with
/// c = 1/log2(r) because one r-ary response carries log2(r) bits.
HuffmanReport check_huffman_bound(const DiscreteFamily& fam, const DecisionTree& tree);

/// P(outcome | function) table for an enumerable stochastic query policy.
struct StochasticPolicy {
    std::vector<std::vector<double>> cond;  // [function][outcome]

    int outcomes() const { return cond.empty() ? 0 : static_cast<int>(cond[0].size()); }
    void validate(int n_functions) const;
};

/// Nonadaptive policy: draw a query set with the given probability, observe
/// the responses. Outcomes enumerate (set, response pattern).
StochasticPolicy query_set_policy(const DiscreteFamily& fam,
                                  const std::vector<std::pair<std::vector<int>, double>>& sets);

struct Claim2Report {
    double neg_lnce = 0.0;        // Monte Carlo estimate, nats
    double neg_lnce_sigma = 0.0;  // standard error
    double kl_term = 0.0;         // KL(E[P_{D|F} P_{D'|F}] || P_D P_{D'}), nats
    double mi_d = 0.0;            // I(F; D), nats
    double mi_dprime = 0.0;       // I(F; D'), nats
    bool holds = false;
    double slack_lower = 0.0;     // kl_term - neg_lnce
    double slack_upper = 0.0;     // min(mi) - kl_term
};

/// Numerically verifies -L'_NCE <= KL(...) <= min{I(F;D), I(F;D')}. The KL
/// and both mutual informations are exact enumerations; -L'_NCE is a Monte
/// Carlo estimate checked within 3 standard errors. sim_table may be null,
/// in which case the optimal critic log(q/(p*p')) is used.
Claim2Report check_claim2_chain(const DiscreteFamily& fam, const StochasticPolicy& d_policy,
                                const StochasticPolicy& dprime_policy,
                                const std::vector<std::vector<double>>* sim_table,
                                int contrastive_n, int samples, std::uint64_t seed);

DiscreteFamily load_family(const std::string& path);
void save_family(const std::string& path, const DiscreteFamily& fam);

}  // namespace quosr::mi
