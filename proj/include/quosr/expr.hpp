#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace quosr::expr {

enum class UnaryOp { Sin, Cos, Exp, Log, Sqrt, Neg };
enum class BinaryOp { Add, Sub, Mul, Div, Pow };

const char* name(UnaryOp op);

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
    enum class Kind { Const, Var, Hole, Unary, Binary };
    Kind kind = Kind::Const;
    double value = 0.0;  // Const
    int var = 0;         // Var
    UnaryOp uop = UnaryOp::Sin;
    BinaryOp bop = BinaryOp::Add;
    NodePtr a, b;        // Unary uses a only
};

NodePtr make_const(double v);
NodePtr make_var(int index);
NodePtr make_hole();
NodePtr make_unary(UnaryOp op, NodePtr child);
NodePtr make_binary(BinaryOp op, NodePtr left, NodePtr right);

/// Immutable expression tree over variables x0..x{M-1}. Evaluation is pure,
/// so a single Expr may be evaluated from many threads at once.
class Expr {
public:
    Expr() = default;
    Expr(NodePtr root, int arity);

    const NodePtr& root() const { return root_; }
    int arity() const { return arity_; }

    int depth() const;       // a lone leaf has depth 1
    int node_count() const;
    bool has_var() const;
    int hole_count() const;

    /// Canonical text form: minimal parentheses, shortest round-trip floats.
    std::string str() const;

    bool same_tree(const Expr& other) const;

private:
    NodePtr root_;
    int arity_ = 1;
};

/// Expr whose constants have all been replaced by <C> holes.
class Skeleton {
public:
    Skeleton() = default;
    explicit Skeleton(Expr tree);

    const Expr& tree() const { return tree_; }
    std::string str() const { return tree_.str(); }
    int hole_count() const { return tree_.hole_count(); }
    bool same_tree(const Skeleton& other) const { return tree_.same_tree(other.tree_); }

private:
    Expr tree_;
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, std::size_t off)
        : std::runtime_error(msg + " at offset " + std::to_string(off)), offset(off) {}
    std::size_t offset;
};

/// Parses the expression grammar: numbers, x / x0..x{M-1}, + - * / ^,
/// sin cos exp log sqrt, <C> holes, parentheses. Throws ParseError on
/// malformed input and on variables outside the declared arity.
Expr parse(std::string_view text, int arity);

/// Arity inferred as (max variable index + 1), at least 1.
Expr parse(std::string_view text);

struct EvalResult {
    double value = 0.0;
    const Node* failed = nullptr;  // offending node, null on success
    const char* reason = nullptr;
    bool ok() const { return failed == nullptr; }
};

/// Evaluates f at x. Domain problems (log/sqrt of negatives, division by
/// zero, non-real pow, non-finite intermediates) come back as an explicit
/// failure naming the node, never as silent NaN.
EvalResult evaluate(const Expr& f, std::span<const double> x);

Skeleton skeletonize(const Expr& f);

/// Constants of f in depth-first order; instantiate fills holes in the
/// same order.
std::vector<double> constants_of(const Expr& f);
Expr instantiate(const Skeleton& s, std::span<const double> constants);

struct GenConfig {
    int max_depth = 6;
    double const_min = -3.0;
    double const_max = 3.0;
    int const_decimals = 2;
    bool allow_unary = true;
    std::vector<UnaryOp> unary_ops = {UnaryOp::Sin, UnaryOp::Cos, UnaryOp::Exp,
                                      UnaryOp::Log, UnaryOp::Sqrt, UnaryOp::Neg};
    std::vector<BinaryOp> binary_ops = {BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul,
                                        BinaryOp::Div, BinaryOp::Pow};
    bool pow_integer_exponents = true;  // keeps generated powers evaluable
    int pow_max_exponent = 4;
    int max_retries = 64;
};

/// Seed-deterministic random expression with at least one variable and
/// depth <= cfg.max_depth.
Expr random_expr(std::uint64_t seed, int arity, const GenConfig& cfg);

}  // namespace quosr::expr
