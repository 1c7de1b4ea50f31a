#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace glyph::ad {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Long-lived trainable tensor. Forward passes borrow it through
/// Tape::leaf(); backward() accumulates into grad.
template <typename Real>
struct Parameter {
    std::string name;
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;

    Parameter() = default;
    Parameter(std::string name_, Shape shape_);

    int64_t size() const { return static_cast<int64_t>(value.size()); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), Real(0)); }
};

template <typename Real>
class Tape;

/// Lightweight handle to a node on a tape. Copyable; the tape owns storage.
template <typename Real>
class Tensor {
public:
    Tensor() = default;
    bool defined() const { return tape_ != nullptr; }
    const Shape& shape() const;
    const std::vector<Real>& value() const;
    int64_t size() const;
    Real item() const;  // value of a one-element tensor

private:
    friend class Tape<Real>;
    Tensor(Tape<Real>* tape, int32_t id) : tape_(tape), id_(id) {}
    Tape<Real>* tape_ = nullptr;
    int32_t id_ = -1;
};

/// Reverse-mode tape over dense tensors. Values are computed eagerly when an
/// op is recorded; backward() replays the recorded ops in exact reverse
/// order over the ancestors of the loss. Single-threaded by design; distinct
/// tapes are independent.
///
/// Reduction order is fixed everywhere: matmul accumulates in working
/// precision along ascending k, element reductions accumulate in double in
/// ascending index order. Identical inputs therefore give bitwise-identical
/// values and gradients.
template <typename Real>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- node creation -------------------------------------------------
    Tensor<Real> constant(Shape shape, std::vector<Real> data);
    Tensor<Real> scalar(Real v);
    /// Registers a parameter as a leaf node. Repeated calls with the same
    /// parameter return the same node.
    Tensor<Real> leaf(Parameter<Real>& p);

    // ---- forward ops ----------------------------------------------------
    Tensor<Real> matmul(Tensor<Real> a, Tensor<Real> b);
    Tensor<Real> transpose(Tensor<Real> a);
    Tensor<Real> add(Tensor<Real> a, Tensor<Real> b);
    Tensor<Real> sub(Tensor<Real> a, Tensor<Real> b);
    Tensor<Real> mul(Tensor<Real> a, Tensor<Real> b);
    Tensor<Real> div(Tensor<Real> a, Tensor<Real> b);
    Tensor<Real> maximum(Tensor<Real> a, Tensor<Real> b);
    /// alpha * x + beta, with compile-time constants (no gradient for them).
    Tensor<Real> affine(Tensor<Real> a, Real alpha, Real beta);
    Tensor<Real> scale(Tensor<Real> a, Real c) { return affine(a, c, Real(0)); }
    /// Broadcast multiply by a one-element tensor (gradient flows to both).
    Tensor<Real> mul_scalar(Tensor<Real> a, Tensor<Real> s);
    Tensor<Real> abs(Tensor<Real> a);
    Tensor<Real> log(Tensor<Real> a);
    Tensor<Real> acosh(Tensor<Real> a);
    Tensor<Real> gelu(Tensor<Real> a);
    /// Row-wise softmax with max subtraction. 2-D input.
    Tensor<Real> softmax(Tensor<Real> a);
    /// Layer norm over the last axis with learnable affine, eps = 1e-5.
    Tensor<Real> layer_norm(Tensor<Real> x, Tensor<Real> gamma, Tensor<Real> beta);
    /// Gathers rows of a [V,d] table; gradient scatters back.
    Tensor<Real> embedding_lookup(Tensor<Real> table, const std::vector<int32_t>& ids);
    /// Adds a length-n bias vector to every row of a [m,n] matrix.
    Tensor<Real> add_bias(Tensor<Real> x, Tensor<Real> bias);
    Tensor<Real> slice_rows(Tensor<Real> a, int begin, int end);
    Tensor<Real> slice_cols(Tensor<Real> a, int begin, int end);
    Tensor<Real> reshape(Tensor<Real> a, Shape shape);
    Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts);
    Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts);
    Tensor<Real> reduce_sum(Tensor<Real> a);
    Tensor<Real> reduce_mean(Tensor<Real> a);
    /// Euclidean norm of the whole tensor, as a scalar.
    Tensor<Real> l2_norm(Tensor<Real> a);
    /// Divides each row of a [m,d] matrix by its Euclidean norm.
    Tensor<Real> normalize_rows(Tensor<Real> a);
    Tensor<Real> dot(Tensor<Real> a, Tensor<Real> b) { return reduce_sum(mul(a, b)); }

    // ---- backward -------------------------------------------------------
    /// Populates gradients for every node reachable backwards from loss and
    /// flushes leaf gradients into their parameters (accumulating).
    /// loss must be a one-element tensor (NonScalarLoss otherwise).
    void backward(Tensor<Real> loss);

    // ---- introspection ---------------------------------------------------
    size_t node_count() const { return nodes_.size(); }
    const Shape& shape_of(Tensor<Real> t) const;
    const std::vector<Real>& value_of(Tensor<Real> t) const;
    /// Gradient buffer of a node after backward(); empty if unreachable.
    const std::vector<Real>& grad_of(Tensor<Real> t) const;

private:
    struct Node {
        Shape shape;
        std::vector<Real> value;
        std::vector<Real> grad;
        Parameter<Real>* param = nullptr;
        std::vector<int32_t> parents;
        std::function<void()> backprop;
    };

    int32_t emit(Shape shape, std::vector<Real> value, std::vector<int32_t> parents);
    Node& at(int32_t id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& at(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }
    void check_same_tape(Tensor<Real> t) const;

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter<Real>*, int32_t> leaf_ids_;
};

// ---- optimizer -----------------------------------------------------------

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

/// Decoupled-weight-decay Adam with bias correction. First/second moments
/// start at zero; the shared step count increments by one per step().
template <typename Real>
class AdamWState {
public:
    AdamWState(const std::vector<Parameter<Real>*>& params, AdamWConfig config);

    /// One update using each parameter's accumulated grad.
    void step(const std::vector<Parameter<Real>*>& params, double lr);

    int64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return config_; }
    const std::vector<Real>& first_moment(size_t i) const { return m_[i]; }
    const std::vector<Real>& second_moment(size_t i) const { return v_[i]; }

private:
    AdamWConfig config_;
    std::vector<std::vector<Real>> m_, v_;
    std::vector<int64_t> sizes_;
    int64_t t_ = 0;
};

// ---- verification ----------------------------------------------------------

/// Builds a scalar loss over the supplied parameters on a fresh tape.
using LossBuilder = std::function<Tensor<double>(Tape<double>&)>;

/// Compares analytic gradients against central finite differences with step
/// h, at 64-bit precision. Returns the max over coordinates of
/// |analytic - cd| / max(|analytic|, |cd|, 1e-8).
double grad_check(const LossBuilder& loss_builder,
                  const std::vector<Parameter<double>*>& params, double h);

}  // namespace glyph::ad
