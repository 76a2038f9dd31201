#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "quosr/common.hpp"

namespace quosr::ad {

/// Dense real matrix (rank <= 2; vectors are 1xN or Nx1) participating in a
/// define-by-run computation graph. Copying a Tensor copies a handle, not
/// the data; values are immutable once a node is created.
class Tensor {
public:
    struct Node {
        int rows = 0, cols = 0;
        std::vector<double> val;
        std::vector<double> grad;  // sized lazily during backward
        bool requires_grad = false;
        bool back_ran = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backfn;  // accumulates into parents' grads

        std::size_t size() const { return val.size(); }
        void ensure_grad() {
            if (grad.empty()) grad.assign(val.size(), 0.0);
        }
    };

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor constant(int rows, int cols, std::vector<double> v);
    static Tensor scalar(double v) { return constant(1, 1, {v}); }
    static Tensor zeros(int rows, int cols, bool requires_grad = false);
    static Tensor param(int rows, int cols, std::vector<double> v);

    bool defined() const { return node_ != nullptr; }
    int rows() const { return node_->rows; }
    int cols() const { return node_->cols; }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& values() const { return node_->val; }
    const std::vector<double>& grad() const { return node_->grad; }
    double value() const;  // scalar tensors only
    double at(int r, int c) const { return node_->val[static_cast<std::size_t>(r) * node_->cols + c]; }

    // in-place mutation of the shared node; only meaningful for leaf parameters
    void set_values(std::span<const double> v) const;
    void zero_grad() const { node_->grad.assign(node_->val.size(), 0.0); }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// elementwise, shapes must match
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor max_elem(const Tensor& a, const Tensor& b);

// broadcast a 1xC row vector across all rows of a RxC matrix
Tensor add_rowvec(const Tensor& a, const Tensor& row);
Tensor mul_rowvec(const Tensor& a, const Tensor& row);
Tensor broadcast_rows(const Tensor& row, int rows);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor scale(const Tensor& a, double k);
Tensor add_scalar(const Tensor& a, double k);
Tensor neg(const Tensor& a);

Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor tanh_(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum_all(const Tensor& a);    // -> 1x1
Tensor mean_all(const Tensor& a);   // -> 1x1
Tensor sum_rows(const Tensor& a);   // RxC -> 1xC, sum over rows
Tensor mean_rows(const Tensor& a);  // RxC -> 1xC
Tensor max_rows(const Tensor& a);   // RxC -> 1xC, columnwise max

Tensor softmax_rows(const Tensor& a);  // softmax along each row

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, int c0, int c1);  // [c0, c1)
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor reshape(const Tensor& a, int rows, int cols);

/// Reverse-mode sweep from a scalar loss. Each node is visited exactly once
/// in reverse topological order. Running it twice on the same graph throws.
void backward(const Tensor& loss);

enum class Act { Relu, Tanh, Identity };

Act act_from_string(const std::string& s);
std::string to_string(Act a);

struct MlpConfig {
    int hidden_width = 256;
    int hidden_depth = 2;
    Act hidden_act = Act::Relu;
    /// Scale factor applied to the output layer's init; small values start
    /// the net near zero output, which keeps contrastive losses at their
    /// uniform plateau at initialization.
    double output_init_scale = 1.0;
};

/// Fully connected net: affine layers with elementwise activations.
class Mlp {
public:
    struct Layer {
        Tensor W;  // in x out
        Tensor b;  // 1 x out
        Act act;
    };

    Mlp() = default;
    Mlp(int in_dim, int out_dim, const MlpConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& input) const;

    int in_dim() const { return in_dim_; }
    int out_dim() const { return out_dim_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Tensor> parameters() const;
    /// "0.W", "0.b", "1.W", ... in forward order
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

private:
    int in_dim_ = 0, out_dim_ = 0;
    std::vector<Layer> layers_;
};

/// p <- p - lr * grad for every parameter. A non-finite gradient aborts the
/// whole step before any parameter is touched.
struct SgdError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
void sgd_step(std::span<const Tensor> params, double lr);

// ------------------------------------------------------------- checkpoint

/// Versioned binary checkpoint: named tensors plus opaque metadata strings.
/// Doubles are stored raw, so a save/load cycle is bit-exact.
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace quosr::ad
