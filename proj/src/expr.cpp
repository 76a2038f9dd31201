#include "quosr/expr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>

#include "quosr/common.hpp"

namespace quosr::expr {

const char* name(UnaryOp op) {
    switch (op) {
        case UnaryOp::Sin: return "sin";
        case UnaryOp::Cos: return "cos";
        case UnaryOp::Exp: return "exp";
        case UnaryOp::Log: return "log";
        case UnaryOp::Sqrt: return "sqrt";
        case UnaryOp::Neg: return "neg";
    }
    return "?";
}

NodePtr make_const(double v) {
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Const;
    n->value = v;
    return n;
}

NodePtr make_var(int index) {
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Var;
    n->var = index;
    return n;
}

NodePtr make_hole() {
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Hole;
    return n;
}

NodePtr make_unary(UnaryOp op, NodePtr child) {
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Unary;
    n->uop = op;
    n->a = std::move(child);
    return n;
}

NodePtr make_binary(BinaryOp op, NodePtr left, NodePtr right) {
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Binary;
    n->bop = op;
    n->a = std::move(left);
    n->b = std::move(right);
    return n;
}

namespace {

int max_var_index(const Node* n) {
    switch (n->kind) {
        case Node::Kind::Var: return n->var;
        case Node::Kind::Unary: return max_var_index(n->a.get());
        case Node::Kind::Binary:
            return std::max(max_var_index(n->a.get()), max_var_index(n->b.get()));
        default: return -1;
    }
}

int depth_of(const Node* n) {
    switch (n->kind) {
        case Node::Kind::Unary: return 1 + depth_of(n->a.get());
        case Node::Kind::Binary:
            return 1 + std::max(depth_of(n->a.get()), depth_of(n->b.get()));
        default: return 1;
    }
}

int count_nodes(const Node* n) {
    switch (n->kind) {
        case Node::Kind::Unary: return 1 + count_nodes(n->a.get());
        case Node::Kind::Binary: return 1 + count_nodes(n->a.get()) + count_nodes(n->b.get());
        default: return 1;
    }
}

int count_holes(const Node* n) {
    switch (n->kind) {
        case Node::Kind::Hole: return 1;
        case Node::Kind::Unary: return count_holes(n->a.get());
        case Node::Kind::Binary: return count_holes(n->a.get()) + count_holes(n->b.get());
        default: return 0;
    }
}

bool trees_equal(const Node* a, const Node* b) {
    if (a->kind != b->kind) return false;
    switch (a->kind) {
        case Node::Kind::Const: return a->value == b->value;
        case Node::Kind::Var: return a->var == b->var;
        case Node::Kind::Hole: return true;
        case Node::Kind::Unary:
            return a->uop == b->uop && trees_equal(a->a.get(), b->a.get());
        case Node::Kind::Binary:
            return a->bop == b->bop && trees_equal(a->a.get(), b->a.get()) &&
                   trees_equal(a->b.get(), b->b.get());
    }
    return false;
}

// Print levels: add/sub 1, mul/div 2, unary minus 3, pow 4, atoms 5.
// A negative constant prints with a leading '-', so it behaves like level 3.
int print_level(const Node* n) {
    switch (n->kind) {
        case Node::Kind::Const: return std::signbit(n->value) ? 3 : 5;
        case Node::Kind::Var:
        case Node::Kind::Hole: return 5;
        case Node::Kind::Unary: return n->uop == UnaryOp::Neg ? 3 : 5;
        case Node::Kind::Binary:
            switch (n->bop) {
                case BinaryOp::Add:
                case BinaryOp::Sub: return 1;
                case BinaryOp::Mul:
                case BinaryOp::Div: return 2;
                case BinaryOp::Pow: return 4;
            }
    }
    return 5;
}

void print(const Node* n, int arity, std::string& out);

void print_child(const Node* c, int arity, bool needs_parens, std::string& out) {
    if (needs_parens) {
        out += '(';
        print(c, arity, out);
        out += ')';
    } else {
        print(c, arity, out);
    }
}

void print(const Node* n, int arity, std::string& out) {
    switch (n->kind) {
        case Node::Kind::Const:
            out += format_double(n->value);
            return;
        case Node::Kind::Var:
            if (arity == 1) {
                out += 'x';
            } else {
                out += 'x';
                out += std::to_string(n->var);
            }
            return;
        case Node::Kind::Hole:
            out += "<C>";
            return;
        case Node::Kind::Unary:
            if (n->uop == UnaryOp::Neg) {
                out += '-';
                print_child(n->a.get(), arity, print_level(n->a.get()) < 3, out);
            } else {
                out += name(n->uop);
                out += '(';
                print(n->a.get(), arity, out);
                out += ')';
            }
            return;
        case Node::Kind::Binary: {
            const int lvl = print_level(n);
            const Node* l = n->a.get();
            const Node* r = n->b.get();
            const char* sym = nullptr;
            bool lp = false, rp = false;
            switch (n->bop) {
                case BinaryOp::Add: sym = "+"; lp = print_level(l) < lvl; rp = print_level(r) <= lvl; break;
                case BinaryOp::Sub: sym = "-"; lp = print_level(l) < lvl; rp = print_level(r) <= lvl; break;
                case BinaryOp::Mul: sym = "*"; lp = print_level(l) < lvl; rp = print_level(r) <= lvl; break;
                case BinaryOp::Div: sym = "/"; lp = print_level(l) < lvl; rp = print_level(r) <= lvl; break;
                case BinaryOp::Pow: sym = "^"; lp = print_level(l) <= lvl; rp = print_level(r) < 3; break;
            }
            print_child(l, arity, lp, out);
            out += sym;
            print_child(r, arity, rp, out);
            return;
        }
    }
}

}  // namespace

Expr::Expr(NodePtr root, int arity) : root_(std::move(root)), arity_(arity) {
    if (!root_) throw std::invalid_argument("Expr: null root");
    if (arity_ < 1) throw std::invalid_argument("Expr: arity must be >= 1");
    const int mv = max_var_index(root_.get());
    if (mv >= arity_)
        throw std::invalid_argument("Expr: variable x" + std::to_string(mv) +
                                    " outside arity " + std::to_string(arity_));
}

int Expr::depth() const { return root_ ? depth_of(root_.get()) : 0; }
int Expr::node_count() const { return root_ ? count_nodes(root_.get()) : 0; }
bool Expr::has_var() const { return root_ && max_var_index(root_.get()) >= 0; }
int Expr::hole_count() const { return root_ ? count_holes(root_.get()) : 0; }

std::string Expr::str() const {
    std::string out;
    if (root_) print(root_.get(), arity_, out);
    return out;
}

bool Expr::same_tree(const Expr& other) const {
    if (!root_ || !other.root_) return root_ == other.root_;
    return arity_ == other.arity_ && trees_equal(root_.get(), other.root_.get());
}

namespace {

bool has_const(const Node* n) {
    switch (n->kind) {
        case Node::Kind::Const: return true;
        case Node::Kind::Unary: return has_const(n->a.get());
        case Node::Kind::Binary: return has_const(n->a.get()) || has_const(n->b.get());
        default: return false;
    }
}

}  // namespace

Skeleton::Skeleton(Expr tree) : tree_(std::move(tree)) {
    if (tree_.root() && has_const(tree_.root().get()))
        throw std::invalid_argument("Skeleton: tree still contains constants");
}

// ---------------------------------------------------------------- parser

namespace {

class Parser {
public:
    Parser(std::string_view text, std::optional<int> arity)
        : text_(text), declared_arity_(arity) {}

    Expr run() {
        NodePtr root = parse_expr();
        skip_ws();
        if (pos_ != text_.size()) throw ParseError("unexpected trailing input", pos_);
        const int inferred = max_var_index(root.get()) + 1;
        const int arity = declared_arity_ ? *declared_arity_ : std::max(inferred, 1);
        return Expr(std::move(root), arity);
    }

private:
    std::string_view text_;
    std::optional<int> declared_arity_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool eat(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    std::size_t current() {
        skip_ws();
        return pos_;
    }

    NodePtr parse_expr() {
        NodePtr lhs = parse_term();
        for (;;) {
            if (eat('+')) {
                lhs = make_binary(BinaryOp::Add, std::move(lhs), parse_term());
            } else if (eat('-')) {
                lhs = make_binary(BinaryOp::Sub, std::move(lhs), parse_term());
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_term() {
        NodePtr lhs = parse_unary();
        for (;;) {
            if (eat('*')) {
                lhs = make_binary(BinaryOp::Mul, std::move(lhs), parse_unary());
            } else if (eat('/')) {
                lhs = make_binary(BinaryOp::Div, std::move(lhs), parse_unary());
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_unary() {
        if (eat('-')) {
            NodePtr inner = parse_unary();
            // fold a negated literal into a negative constant
            if (inner->kind == Node::Kind::Const) return make_const(-inner->value);
            return make_unary(UnaryOp::Neg, std::move(inner));
        }
        return parse_power();
    }

    NodePtr parse_power() {
        NodePtr base = parse_atom();
        if (eat('^')) return make_binary(BinaryOp::Pow, std::move(base), parse_unary());
        return base;
    }

    NodePtr parse_atom() {
        skip_ws();
        if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
        const char c = text_[pos_];

        if (c == '(') {
            ++pos_;
            NodePtr inner = parse_expr();
            if (!eat(')')) throw ParseError("unbalanced parenthesis", current());
            return inner;
        }
        if (c == '<') {
            if (text_.substr(pos_, 3) == "<C>") {
                pos_ += 3;
                return make_hole();
            }
            throw ParseError("malformed placeholder", pos_);
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) return parse_ident();
        throw ParseError(std::string("unexpected character '") + c + "'", pos_);
    }

    NodePtr parse_number() {
        double v = 0.0;
        const char* begin = text_.data() + pos_;
        const char* end = text_.data() + text_.size();
        auto res = std::from_chars(begin, end, v);
        if (res.ec != std::errc()) throw ParseError("malformed number", pos_);
        pos_ = static_cast<std::size_t>(res.ptr - text_.data());
        return make_const(v);
    }

    NodePtr parse_ident() {
        const std::size_t start = pos_;
        while (pos_ < text_.size() &&
               std::isalnum(static_cast<unsigned char>(text_[pos_])))
            ++pos_;
        const std::string_view id = text_.substr(start, pos_ - start);

        if (id == "x") return checked_var(0, start);
        if (id.size() > 1 && id[0] == 'x') {
            int idx = 0;
            auto res = std::from_chars(id.data() + 1, id.data() + id.size(), idx);
            if (res.ec == std::errc() && res.ptr == id.data() + id.size())
                return checked_var(idx, start);
        }

        UnaryOp op;
        if (id == "sin") op = UnaryOp::Sin;
        else if (id == "cos") op = UnaryOp::Cos;
        else if (id == "exp") op = UnaryOp::Exp;
        else if (id == "log") op = UnaryOp::Log;
        else if (id == "sqrt") op = UnaryOp::Sqrt;
        else throw ParseError("unknown identifier '" + std::string(id) + "'", start);

        if (!eat('(')) throw ParseError("expected '(' after function name", current());
        NodePtr arg = parse_expr();
        if (!eat(')')) throw ParseError("unbalanced parenthesis", current());
        return make_unary(op, std::move(arg));
    }

    NodePtr checked_var(int idx, std::size_t at) {
        if (declared_arity_ && idx >= *declared_arity_)
            throw ParseError("variable x" + std::to_string(idx) + " outside arity " +
                                 std::to_string(*declared_arity_),
                             at);
        return make_var(idx);
    }
};

}  // namespace

Expr parse(std::string_view text, int arity) { return Parser(text, arity).run(); }
Expr parse(std::string_view text) { return Parser(text, std::nullopt).run(); }

// --------------------------------------------------------------- evaluate

namespace {

struct Evaluator {
    std::span<const double> x;
    EvalResult fail;  // first failure wins

    double visit(const Node* n) {
        if (fail.failed) return 0.0;
        double v = 0.0;
        switch (n->kind) {
            case Node::Kind::Const: v = n->value; break;
            case Node::Kind::Hole:
                return set_fail(n, "unfilled constant placeholder");
            case Node::Kind::Var: v = x[static_cast<std::size_t>(n->var)]; break;
            case Node::Kind::Unary: {
                const double a = visit(n->a.get());
                if (fail.failed) return 0.0;
                switch (n->uop) {
                    case UnaryOp::Sin: v = std::sin(a); break;
                    case UnaryOp::Cos: v = std::cos(a); break;
                    case UnaryOp::Exp: v = std::exp(a); break;
                    case UnaryOp::Log:
                        if (a <= 0.0) return set_fail(n, "log of non-positive value");
                        v = std::log(a);
                        break;
                    case UnaryOp::Sqrt:
                        if (a < 0.0) return set_fail(n, "sqrt of negative value");
                        v = std::sqrt(a);
                        break;
                    case UnaryOp::Neg: v = -a; break;
                }
                break;
            }
            case Node::Kind::Binary: {
                const double a = visit(n->a.get());
                const double b = visit(n->b.get());
                if (fail.failed) return 0.0;
                switch (n->bop) {
                    case BinaryOp::Add: v = a + b; break;
                    case BinaryOp::Sub: v = a - b; break;
                    case BinaryOp::Mul: v = a * b; break;
                    case BinaryOp::Div:
                        if (b == 0.0) return set_fail(n, "division by zero");
                        v = a / b;
                        break;
                    case BinaryOp::Pow:
                        if (a < 0.0 && b != std::floor(b))
                            return set_fail(n, "negative base with non-integer exponent");
                        if (a == 0.0 && b < 0.0)
                            return set_fail(n, "zero base with negative exponent");
                        v = std::pow(a, b);
                        break;
                }
                break;
            }
        }
        if (!std::isfinite(v)) return set_fail(n, "non-finite result");
        return v;
    }

    double set_fail(const Node* n, const char* reason) {
        if (!fail.failed) {
            fail.failed = n;
            fail.reason = reason;
        }
        return 0.0;
    }
};

}  // namespace

EvalResult evaluate(const Expr& f, std::span<const double> x) {
    if (!f.root()) throw std::invalid_argument("evaluate: empty expression");
    if (static_cast<int>(x.size()) < f.arity())
        throw std::invalid_argument("evaluate: input shorter than arity");
    for (double xi : x)
        if (!std::isfinite(xi)) throw std::invalid_argument("evaluate: non-finite input");
    Evaluator ev{x, {}};
    const double v = ev.visit(f.root().get());
    if (ev.fail.failed) return ev.fail;
    return EvalResult{v, nullptr, nullptr};
}

// ------------------------------------------------------------- skeletons

namespace {

NodePtr strip_consts(const Node* n) {
    switch (n->kind) {
        case Node::Kind::Const: return make_hole();
        case Node::Kind::Var: return make_var(n->var);
        case Node::Kind::Hole: return make_hole();
        case Node::Kind::Unary: return make_unary(n->uop, strip_consts(n->a.get()));
        case Node::Kind::Binary:
            return make_binary(n->bop, strip_consts(n->a.get()), strip_consts(n->b.get()));
    }
    return nullptr;
}

void collect_consts(const Node* n, std::vector<double>& out) {
    switch (n->kind) {
        case Node::Kind::Const: out.push_back(n->value); return;
        case Node::Kind::Unary: collect_consts(n->a.get(), out); return;
        case Node::Kind::Binary:
            collect_consts(n->a.get(), out);
            collect_consts(n->b.get(), out);
            return;
        default: return;
    }
}

NodePtr fill_holes(const Node* n, std::span<const double> c, std::size_t& next) {
    switch (n->kind) {
        case Node::Kind::Hole:
            if (next >= c.size()) throw std::invalid_argument("instantiate: too few constants");
            return make_const(c[next++]);
        case Node::Kind::Const: return make_const(n->value);
        case Node::Kind::Var: return make_var(n->var);
        case Node::Kind::Unary: return make_unary(n->uop, fill_holes(n->a.get(), c, next));
        case Node::Kind::Binary: {
            // argument evaluation order is unspecified; sequence explicitly
            NodePtr l = fill_holes(n->a.get(), c, next);
            NodePtr r = fill_holes(n->b.get(), c, next);
            return make_binary(n->bop, std::move(l), std::move(r));
        }
    }
    return nullptr;
}

}  // namespace

Skeleton skeletonize(const Expr& f) {
    return Skeleton(Expr(strip_consts(f.root().get()), f.arity()));
}

std::vector<double> constants_of(const Expr& f) {
    std::vector<double> out;
    if (f.root()) collect_consts(f.root().get(), out);
    return out;
}

Expr instantiate(const Skeleton& s, std::span<const double> constants) {
    if (static_cast<int>(constants.size()) != s.hole_count())
        throw std::invalid_argument("instantiate: constant count mismatch");
    std::size_t next = 0;
    return Expr(fill_holes(s.tree().root().get(), constants, next), s.tree().arity());
}

// -------------------------------------------------------------- generator

namespace {

double quantize(double v, int decimals) {
    const double s = std::pow(10.0, decimals);
    return std::round(v * s) / s;
}

NodePtr gen_node(Rng& rng, int arity, const GenConfig& cfg, int depth_left) {
    const bool unary_ok = cfg.allow_unary && !cfg.unary_ops.empty() && depth_left >= 2;
    const bool binary_ok = !cfg.binary_ops.empty() && depth_left >= 2;

    double p_leaf = 0.30;
    if (!unary_ok && !binary_ok) p_leaf = 1.0;
    const double roll = rng.uniform();

    if (roll < p_leaf || (!unary_ok && !binary_ok)) {
        if (rng.uniform() < 0.5)
            return make_var(static_cast<int>(rng.below(static_cast<std::uint64_t>(arity))));
        return make_const(quantize(rng.uniform(cfg.const_min, cfg.const_max), cfg.const_decimals));
    }

    const bool pick_unary = unary_ok && (!binary_ok || rng.uniform() < 0.35);
    if (pick_unary) {
        const UnaryOp op = cfg.unary_ops[rng.below(cfg.unary_ops.size())];
        NodePtr child = gen_node(rng, arity, cfg, depth_left - 1);
        if (op == UnaryOp::Neg && child->kind == Node::Kind::Const)
            return make_const(-child->value);
        return make_unary(op, std::move(child));
    }

    const BinaryOp op = cfg.binary_ops[rng.below(cfg.binary_ops.size())];
    NodePtr left = gen_node(rng, arity, cfg, depth_left - 1);
    NodePtr right;
    if (op == BinaryOp::Pow && cfg.pow_integer_exponents) {
        const int hi = std::max(2, cfg.pow_max_exponent);
        right = make_const(2.0 + static_cast<double>(rng.below(static_cast<std::uint64_t>(hi - 1))));
    } else {
        right = gen_node(rng, arity, cfg, depth_left - 1);
    }
    return make_binary(op, std::move(left), std::move(right));
}

// Replaces the first leaf (depth-first) with a variable; used as the
// deterministic last resort when retries keep producing constant trees.
NodePtr force_var(const Node* n, int index, bool& done) {
    switch (n->kind) {
        case Node::Kind::Const:
        case Node::Kind::Hole:
            if (!done) {
                done = true;
                return make_var(index);
            }
            return n->kind == Node::Kind::Const ? make_const(n->value) : make_hole();
        case Node::Kind::Var: done = true; return make_var(n->var);
        case Node::Kind::Unary: return make_unary(n->uop, force_var(n->a.get(), index, done));
        case Node::Kind::Binary: {
            NodePtr l = force_var(n->a.get(), index, done);
            NodePtr r = done ? std::shared_ptr<const Node>(n->b)
                             : force_var(n->b.get(), index, done);
            return make_binary(n->bop, std::move(l), std::move(r));
        }
    }
    return nullptr;
}

}  // namespace

Expr random_expr(std::uint64_t seed, int arity, const GenConfig& cfg) {
    if (arity < 1) throw std::invalid_argument("random_expr: arity must be >= 1");
    if (cfg.max_depth < 1) throw std::invalid_argument("random_expr: max_depth must be >= 1");

    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
        NodePtr root = gen_node(rng, arity, cfg, cfg.max_depth);
        Expr candidate(root, arity);
        if (candidate.has_var()) return candidate;
        if (attempt == cfg.max_retries) {
            bool done = false;
            return Expr(force_var(root.get(), 0, done), arity);
        }
    }
    throw std::logic_error("random_expr: unreachable");
}

}  // namespace quosr::expr
