#include "glyph/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "glyph/error.hpp"

namespace glyph::ad {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void require(bool cond, const std::string& message) {
    if (!cond) raise(ErrorCode::ShapeMismatch, message);
}

void check_shape_valid(const Shape& shape) {
    require(!shape.empty(), "rank-0 shapes are not supported");
    for (int d : shape) require(d >= 1, "dimensions must be >= 1, got " + shape_str(shape));
}

// C += A(m,k) @ B(k,n); ascending-k accumulation, row-contiguous inner loop.
template <typename Real>
void matmul_accum(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const Real* a_row = a + static_cast<size_t>(i) * k;
        Real* c_row = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const Real av = a_row[p];
            const Real* b_row = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) c_row[j] += av * b_row[j];
        }
    }
}

// dB += A(m,k)^T @ G(m,n) without materializing the transpose.
template <typename Real>
void matmul_accum_at(const Real* a, const Real* g, Real* db, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const Real* a_row = a + static_cast<size_t>(i) * k;
        const Real* g_row = g + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const Real av = a_row[p];
            Real* db_row = db + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) db_row[j] += av * g_row[j];
        }
    }
}

template <typename Real>
std::vector<Real> transpose_copy(const Real* x, int rows, int cols) {
    std::vector<Real> out(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            out[static_cast<size_t>(j) * rows + i] = x[static_cast<size_t>(i) * cols + j];
        }
    }
    return out;
}

constexpr double kLayerNormEps = 1e-5;

}  // namespace

// ---- Parameter -------------------------------------------------------------

template <typename Real>
Parameter<Real>::Parameter(std::string name_, Shape shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
    check_shape_valid(shape);
    value.assign(static_cast<size_t>(ad::numel(shape)), Real(0));
    grad.assign(value.size(), Real(0));
}

// ---- Tensor ----------------------------------------------------------------

template <typename Real>
const Shape& Tensor<Real>::shape() const {
    return tape_->shape_of(*this);
}

template <typename Real>
const std::vector<Real>& Tensor<Real>::value() const {
    return tape_->value_of(*this);
}

template <typename Real>
int64_t Tensor<Real>::size() const {
    return static_cast<int64_t>(value().size());
}

template <typename Real>
Real Tensor<Real>::item() const {
    const auto& v = value();
    if (v.size() != 1) {
        raise(ErrorCode::ShapeMismatch,
              "item() requires a one-element tensor, got " + shape_str(shape()));
    }
    return v[0];
}

// ---- Tape: node management ---------------------------------------------------

template <typename Real>
int32_t Tape<Real>::emit(Shape shape, std::vector<Real> value, std::vector<int32_t> parents) {
    check_shape_valid(shape);
    require(static_cast<int64_t>(value.size()) == ad::numel(shape),
            "data length does not match shape " + shape_str(shape));
    Node node;
    node.shape = std::move(shape);
    node.value = std::move(value);
    node.parents = std::move(parents);
    nodes_.push_back(std::move(node));
    return static_cast<int32_t>(nodes_.size()) - 1;
}

template <typename Real>
void Tape<Real>::check_same_tape(Tensor<Real> t) const {
    if (t.tape_ != this || t.id_ < 0 || t.id_ >= static_cast<int32_t>(nodes_.size())) {
        raise(ErrorCode::ShapeMismatch, "tensor does not belong to this tape");
    }
}

template <typename Real>
Tensor<Real> Tape<Real>::constant(Shape shape, std::vector<Real> data) {
    return Tensor<Real>(this, emit(std::move(shape), std::move(data), {}));
}

template <typename Real>
Tensor<Real> Tape<Real>::scalar(Real v) {
    return constant({1}, {v});
}

template <typename Real>
Tensor<Real> Tape<Real>::leaf(Parameter<Real>& p) {
    auto it = leaf_ids_.find(&p);
    if (it != leaf_ids_.end()) return Tensor<Real>(this, it->second);
    const int32_t id = emit(p.shape, p.value, {});
    at(id).param = &p;
    leaf_ids_.emplace(&p, id);
    return Tensor<Real>(this, id);
}

template <typename Real>
const Shape& Tape<Real>::shape_of(Tensor<Real> t) const {
    check_same_tape(t);
    return at(t.id_).shape;
}

template <typename Real>
const std::vector<Real>& Tape<Real>::value_of(Tensor<Real> t) const {
    check_same_tape(t);
    return at(t.id_).value;
}

template <typename Real>
const std::vector<Real>& Tape<Real>::grad_of(Tensor<Real> t) const {
    check_same_tape(t);
    return at(t.id_).grad;
}

// ---- Tape: ops ---------------------------------------------------------------

template <typename Real>
Tensor<Real> Tape<Real>::matmul(Tensor<Real> a, Tensor<Real> b) {
    check_same_tape(a);
    check_same_tape(b);
    const Shape& sa = at(a.id_).shape;
    const Shape& sb = at(b.id_).shape;
    require(sa.size() == 2 && sb.size() == 2,
            "matmul needs 2-D operands, got " + shape_str(sa) + " x " + shape_str(sb));
    require(sa[1] == sb[0],
            "matmul inner dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
    const int m = sa[0], k = sa[1], n = sb[1];
    std::vector<Real> out(static_cast<size_t>(m) * n, Real(0));
    matmul_accum(at(a.id_).value.data(), at(b.id_).value.data(), out.data(), m, k, n);
    const int32_t id = emit({m, n}, std::move(out), {a.id_, b.id_});
    at(id).backprop = [this, id, ai = a.id_, bi = b.id_, m, k, n]() {
        const std::vector<Real>& g = at(id).grad;
        // dA += G @ B^T
        const std::vector<Real> bt = transpose_copy(at(bi).value.data(), k, n);
        matmul_accum(g.data(), bt.data(), at(ai).grad.data(), m, n, k);
        // dB += A^T @ G
        matmul_accum_at(at(ai).value.data(), g.data(), at(bi).grad.data(), m, k, n);
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::transpose(Tensor<Real> a) {
    check_same_tape(a);
    const Shape& sa = at(a.id_).shape;
    require(sa.size() == 2, "transpose needs a 2-D operand, got " + shape_str(sa));
    const int m = sa[0], n = sa[1];
    const int32_t id =
        emit({n, m}, transpose_copy(at(a.id_).value.data(), m, n), {a.id_});
    at(id).backprop = [this, id, ai = a.id_, m, n]() {
        const std::vector<Real>& g = at(id).grad;
        std::vector<Real>& da = at(ai).grad;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                da[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
            }
        }
    };
    return Tensor<Real>(this, id);
}

namespace {

template <typename Real>
void require_same_shape(const Shape& sa, const Shape& sb, const char* op) {
    require(sa == sb, std::string(op) + " needs equal shapes, got " + shape_str(sa) +
                          " vs " + shape_str(sb));
}

}  // namespace

template <typename Real>
Tensor<Real> Tape<Real>::add(Tensor<Real> a, Tensor<Real> b) {
    check_same_tape(a);
    check_same_tape(b);
    require_same_shape<Real>(at(a.id_).shape, at(b.id_).shape, "add");
    const std::vector<Real>& va = at(a.id_).value;
    const std::vector<Real>& vb = at(b.id_).value;
    std::vector<Real> out(va.size());
    for (size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
    const int32_t id = emit(at(a.id_).shape, std::move(out), {a.id_, b.id_});
    at(id).backprop = [this, id, ai = a.id_, bi = b.id_]() {
        const std::vector<Real>& g = at(id).grad;
        std::vector<Real>& da = at(ai).grad;
        std::vector<Real>& db = at(bi).grad;
        for (size_t i = 0; i < g.size(); ++i) {
            da[i] += g[i];
            db[i] += g[i];
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::sub(Tensor<Real> a, Tensor<Real> b) {
    check_same_tape(a);
    check_same_tape(b);
    require_same_shape<Real>(at(a.id_).shape, at(b.id_).shape, "sub");
    const std::vector<Real>& va = at(a.id_).value;
    const std::vector<Real>& vb = at(b.id_).value;
    std::vector<Real> out(va.size());
    for (size_t i = 0; i < va.size(); ++i) out[i] = va[i] - vb[i];
    const int32_t id = emit(at(a.id_).shape, std::move(out), {a.id_, b.id_});
    at(id).backprop = [this, id, ai = a.id_, bi = b.id_]() {
        const std::vector<Real>& g = at(id).grad;
        std::vector<Real>& da = at(ai).grad;
        std::vector<Real>& db = at(bi).grad;
        for (size_t i = 0; i < g.size(); ++i) {
            da[i] += g[i];
            db[i] -= g[i];
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::mul(Tensor<Real> a, Tensor<Real> b) {
    check_same_tape(a);
    check_same_tape(b);
    require_same_shape<Real>(at(a.id_).shape, at(b.id_).shape, "mul");
    const std::vector<Real>& va = at(a.id_).value;
    const std::vector<Real>& vb = at(b.id_).value;
    std::vector<Real> out(va.size());
    for (size_t i = 0; i < va.size(); ++i) out[i] = va[i] * vb[i];
    const int32_t id = emit(at(a.id_).shape, std::move(out), {a.id_, b.id_});
    at(id).backprop = [this, id, ai = a.id_, bi = b.id_]() {
        const std::vector<Real>& g = at(id).grad;
        const std::vector<Real>& va = at(ai).value;
        const std::vector<Real>& vb = at(bi).value;
        std::vector<Real>& da = at(ai).grad;
        std::vector<Real>& db = at(bi).grad;
        for (size_t i = 0; i < g.size(); ++i) {
            da[i] += g[i] * vb[i];
            db[i] += g[i] * va[i];
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::div(Tensor<Real> a, Tensor<Real> b) {
    check_same_tape(a);
    check_same_tape(b);
    require_same_shape<Real>(at(a.id_).shape, at(b.id_).shape, "div");
    const std::vector<Real>& va = at(a.id_).value;
    const std::vector<Real>& vb = at(b.id_).value;
    std::vector<Real> out(va.size());
    for (size_t i = 0; i < va.size(); ++i) out[i] = va[i] / vb[i];
    const int32_t id = emit(at(a.id_).shape, std::move(out), {a.id_, b.id_});
    at(id).backprop = [this, id, ai = a.id_, bi = b.id_]() {
        const std::vector<Real>& g = at(id).grad;
        const std::vector<Real>& y = at(id).value;
        const std::vector<Real>& vb = at(bi).value;
        std::vector<Real>& da = at(ai).grad;
        std::vector<Real>& db = at(bi).grad;
        for (size_t i = 0; i < g.size(); ++i) {
            da[i] += g[i] / vb[i];
            db[i] -= g[i] * y[i] / vb[i];
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::maximum(Tensor<Real> a, Tensor<Real> b) {
    check_same_tape(a);
    check_same_tape(b);
    require_same_shape<Real>(at(a.id_).shape, at(b.id_).shape, "maximum");
    const std::vector<Real>& va = at(a.id_).value;
    const std::vector<Real>& vb = at(b.id_).value;
    std::vector<Real> out(va.size());
    for (size_t i = 0; i < va.size(); ++i) out[i] = va[i] >= vb[i] ? va[i] : vb[i];
    const int32_t id = emit(at(a.id_).shape, std::move(out), {a.id_, b.id_});
    // Subgradient: ties route to the first operand.
    at(id).backprop = [this, id, ai = a.id_, bi = b.id_]() {
        const std::vector<Real>& g = at(id).grad;
        const std::vector<Real>& va = at(ai).value;
        const std::vector<Real>& vb = at(bi).value;
        std::vector<Real>& da = at(ai).grad;
        std::vector<Real>& db = at(bi).grad;
        for (size_t i = 0; i < g.size(); ++i) {
            if (va[i] >= vb[i]) {
                da[i] += g[i];
            } else {
                db[i] += g[i];
            }
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::affine(Tensor<Real> a, Real alpha, Real beta) {
    check_same_tape(a);
    const std::vector<Real>& va = at(a.id_).value;
    std::vector<Real> out(va.size());
    for (size_t i = 0; i < va.size(); ++i) out[i] = alpha * va[i] + beta;
    const int32_t id = emit(at(a.id_).shape, std::move(out), {a.id_});
    at(id).backprop = [this, id, ai = a.id_, alpha]() {
        const std::vector<Real>& g = at(id).grad;
        std::vector<Real>& da = at(ai).grad;
        for (size_t i = 0; i < g.size(); ++i) da[i] += alpha * g[i];
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::mul_scalar(Tensor<Real> a, Tensor<Real> s) {
    check_same_tape(a);
    check_same_tape(s);
    require(at(s.id_).value.size() == 1,
            "mul_scalar needs a one-element scale, got " + shape_str(at(s.id_).shape));
    const std::vector<Real>& va = at(a.id_).value;
    const Real sv = at(s.id_).value[0];
    std::vector<Real> out(va.size());
    for (size_t i = 0; i < va.size(); ++i) out[i] = sv * va[i];
    const int32_t id = emit(at(a.id_).shape, std::move(out), {a.id_, s.id_});
    at(id).backprop = [this, id, ai = a.id_, si = s.id_]() {
        const std::vector<Real>& g = at(id).grad;
        const std::vector<Real>& va = at(ai).value;
        const Real sv = at(si).value[0];
        std::vector<Real>& da = at(ai).grad;
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) {
            da[i] += sv * g[i];
            acc += static_cast<double>(g[i]) * static_cast<double>(va[i]);
        }
        at(si).grad[0] += static_cast<Real>(acc);
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::abs(Tensor<Real> a) {
    check_same_tape(a);
    const std::vector<Real>& va = at(a.id_).value;
    std::vector<Real> out(va.size());
    for (size_t i = 0; i < va.size(); ++i) out[i] = va[i] < Real(0) ? -va[i] : va[i];
    const int32_t id = emit(at(a.id_).shape, std::move(out), {a.id_});
    // Subgradient 0 at the kink.
    at(id).backprop = [this, id, ai = a.id_]() {
        const std::vector<Real>& g = at(id).grad;
        const std::vector<Real>& va = at(ai).value;
        std::vector<Real>& da = at(ai).grad;
        for (size_t i = 0; i < g.size(); ++i) {
            if (va[i] > Real(0)) {
                da[i] += g[i];
            } else if (va[i] < Real(0)) {
                da[i] -= g[i];
            }
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::log(Tensor<Real> a) {
    check_same_tape(a);
    const std::vector<Real>& va = at(a.id_).value;
    std::vector<Real> out(va.size());
    for (size_t i = 0; i < va.size(); ++i) out[i] = std::log(va[i]);
    const int32_t id = emit(at(a.id_).shape, std::move(out), {a.id_});
    at(id).backprop = [this, id, ai = a.id_]() {
        const std::vector<Real>& g = at(id).grad;
        const std::vector<Real>& va = at(ai).value;
        std::vector<Real>& da = at(ai).grad;
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] / va[i];
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::acosh(Tensor<Real> a) {
    check_same_tape(a);
    const std::vector<Real>& va = at(a.id_).value;
    std::vector<Real> out(va.size());
    // Arguments may round to just below 1 when the two points coincide;
    // clamp so the distance is exactly 0 there.
    for (size_t i = 0; i < va.size(); ++i) {
        out[i] = va[i] <= Real(1) ? Real(0) : std::acosh(va[i]);
    }
    const int32_t id = emit(at(a.id_).shape, std::move(out), {a.id_});
    at(id).backprop = [this, id, ai = a.id_]() {
        const std::vector<Real>& g = at(id).grad;
        const std::vector<Real>& va = at(ai).value;
        std::vector<Real>& da = at(ai).grad;
        for (size_t i = 0; i < g.size(); ++i) {
            const double x = static_cast<double>(va[i]);
            const double denom = std::sqrt(std::max(x * x - 1.0, 1e-12));
            da[i] += static_cast<Real>(static_cast<double>(g[i]) / denom);
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::gelu(Tensor<Real> a) {
    check_same_tape(a);
    const std::vector<Real>& va = at(a.id_).value;
    std::vector<Real> out(va.size());
    for (size_t i = 0; i < va.size(); ++i) {
        const double x = static_cast<double>(va[i]);
        out[i] = static_cast<Real>(0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)));
    }
    const int32_t id = emit(at(a.id_).shape, std::move(out), {a.id_});
    at(id).backprop = [this, id, ai = a.id_]() {
        const std::vector<Real>& g = at(id).grad;
        const std::vector<Real>& va = at(ai).value;
        std::vector<Real>& da = at(ai).grad;
        constexpr double kInvSqrt2Pi = 0.3989422804014327;
        for (size_t i = 0; i < g.size(); ++i) {
            const double x = static_cast<double>(va[i]);
            const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            da[i] += static_cast<Real>(static_cast<double>(g[i]) * (cdf + x * pdf));
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::softmax(Tensor<Real> a) {
    check_same_tape(a);
    const Shape& sa = at(a.id_).shape;
    require(sa.size() == 2, "softmax needs a 2-D operand, got " + shape_str(sa));
    const int rows = sa[0], cols = sa[1];
    const std::vector<Real>& va = at(a.id_).value;
    std::vector<Real> out(va.size());
    for (int r = 0; r < rows; ++r) {
        const Real* x = va.data() + static_cast<size_t>(r) * cols;
        Real* y = out.data() + static_cast<size_t>(r) * cols;
        Real row_max = x[0];
        for (int j = 1; j < cols; ++j) row_max = std::max(row_max, x[j]);
        double denom = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double e = std::exp(static_cast<double>(x[j] - row_max));
            y[j] = static_cast<Real>(e);
            denom += e;
        }
        for (int j = 0; j < cols; ++j) y[j] = static_cast<Real>(y[j] / denom);
    }
    const int32_t id = emit(sa, std::move(out), {a.id_});
    at(id).backprop = [this, id, ai = a.id_, rows, cols]() {
        const std::vector<Real>& g = at(id).grad;
        const std::vector<Real>& y = at(id).value;
        std::vector<Real>& da = at(ai).grad;
        for (int r = 0; r < rows; ++r) {
            const size_t off = static_cast<size_t>(r) * cols;
            double dots = 0.0;
            for (int j = 0; j < cols; ++j) {
                dots += static_cast<double>(g[off + j]) * static_cast<double>(y[off + j]);
            }
            for (int j = 0; j < cols; ++j) {
                da[off + j] += static_cast<Real>(
                    static_cast<double>(y[off + j]) *
                    (static_cast<double>(g[off + j]) - dots));
            }
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::layer_norm(Tensor<Real> x, Tensor<Real> gamma, Tensor<Real> beta) {
    check_same_tape(x);
    check_same_tape(gamma);
    check_same_tape(beta);
    const Shape& sx = at(x.id_).shape;
    require(sx.size() == 2, "layer_norm needs a 2-D operand, got " + shape_str(sx));
    const int rows = sx[0], cols = sx[1];
    require(at(gamma.id_).shape == Shape{cols} && at(beta.id_).shape == Shape{cols},
            "layer_norm affine parameters must have shape [" + std::to_string(cols) + "]");
    const std::vector<Real>& vx = at(x.id_).value;
    const std::vector<Real>& vg = at(gamma.id_).value;
    const std::vector<Real>& vb = at(beta.id_).value;
    std::vector<Real> out(vx.size());
    auto stats = std::make_shared<std::vector<double>>(
        static_cast<size_t>(rows) * 2);  // mean, rstd per row
    for (int r = 0; r < rows; ++r) {
        const Real* row = vx.data() + static_cast<size_t>(r) * cols;
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += row[j];
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= cols;
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        (*stats)[static_cast<size_t>(r) * 2] = mean;
        (*stats)[static_cast<size_t>(r) * 2 + 1] = rstd;
        Real* y = out.data() + static_cast<size_t>(r) * cols;
        for (int j = 0; j < cols; ++j) {
            const double xhat = (row[j] - mean) * rstd;
            y[j] = static_cast<Real>(xhat * vg[j] + vb[j]);
        }
    }
    const int32_t id =
        emit(sx, std::move(out), {x.id_, gamma.id_, beta.id_});
    at(id).backprop = [this, id, xi = x.id_, gi = gamma.id_, bi = beta.id_, rows, cols,
                       stats]() {
        const std::vector<Real>& g = at(id).grad;
        const std::vector<Real>& vx = at(xi).value;
        const std::vector<Real>& vg = at(gi).value;
        std::vector<Real>& dx = at(xi).grad;
        std::vector<Real>& dgamma = at(gi).grad;
        std::vector<Real>& dbeta = at(bi).grad;
        for (int r = 0; r < rows; ++r) {
            const size_t off = static_cast<size_t>(r) * cols;
            const double mean = (*stats)[static_cast<size_t>(r) * 2];
            const double rstd = (*stats)[static_cast<size_t>(r) * 2 + 1];
            double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
            for (int j = 0; j < cols; ++j) {
                const double xhat = (vx[off + j] - mean) * rstd;
                const double dyg = static_cast<double>(g[off + j]) * vg[j];
                sum_dyg += dyg;
                sum_dyg_xhat += dyg * xhat;
                dgamma[j] += static_cast<Real>(static_cast<double>(g[off + j]) * xhat);
                dbeta[j] += g[off + j];
            }
            const double inv_n = 1.0 / cols;
            for (int j = 0; j < cols; ++j) {
                const double xhat = (vx[off + j] - mean) * rstd;
                const double dyg = static_cast<double>(g[off + j]) * vg[j];
                dx[off + j] += static_cast<Real>(
                    rstd * (dyg - inv_n * sum_dyg - xhat * inv_n * sum_dyg_xhat));
            }
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::embedding_lookup(Tensor<Real> table,
                                          const std::vector<int32_t>& ids) {
    check_same_tape(table);
    const Shape& st = at(table.id_).shape;
    require(st.size() == 2, "embedding_lookup needs a 2-D table, got " + shape_str(st));
    require(!ids.empty(), "embedding_lookup needs at least one id");
    const int vocab = st[0], dim = st[1];
    for (int32_t tok : ids) {
        require(tok >= 0 && tok < vocab,
                "token id " + std::to_string(tok) + " outside table of " +
                    std::to_string(vocab) + " rows");
    }
    const std::vector<Real>& vt = at(table.id_).value;
    std::vector<Real> out(ids.size() * static_cast<size_t>(dim));
    for (size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(vt.data() + static_cast<size_t>(ids[i]) * dim, dim,
                    out.data() + i * dim);
    }
    const int32_t id =
        emit({static_cast<int>(ids.size()), dim}, std::move(out), {table.id_});
    at(id).backprop = [this, id, ti = table.id_, ids, dim]() {
        const std::vector<Real>& g = at(id).grad;
        std::vector<Real>& dt = at(ti).grad;
        for (size_t i = 0; i < ids.size(); ++i) {
            Real* row = dt.data() + static_cast<size_t>(ids[i]) * dim;
            const Real* grow = g.data() + i * static_cast<size_t>(dim);
            for (int j = 0; j < dim; ++j) row[j] += grow[j];
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::add_bias(Tensor<Real> x, Tensor<Real> bias) {
    check_same_tape(x);
    check_same_tape(bias);
    const Shape& sx = at(x.id_).shape;
    require(sx.size() == 2, "add_bias needs a 2-D operand, got " + shape_str(sx));
    const int rows = sx[0], cols = sx[1];
    require(at(bias.id_).shape == Shape{cols},
            "bias must have shape [" + std::to_string(cols) + "], got " +
                shape_str(at(bias.id_).shape));
    const std::vector<Real>& vx = at(x.id_).value;
    const std::vector<Real>& vb = at(bias.id_).value;
    std::vector<Real> out(vx.size());
    for (int r = 0; r < rows; ++r) {
        const size_t off = static_cast<size_t>(r) * cols;
        for (int j = 0; j < cols; ++j) out[off + j] = vx[off + j] + vb[j];
    }
    const int32_t id = emit(sx, std::move(out), {x.id_, bias.id_});
    at(id).backprop = [this, id, xi = x.id_, bi = bias.id_, rows, cols]() {
        const std::vector<Real>& g = at(id).grad;
        std::vector<Real>& dx = at(xi).grad;
        std::vector<Real>& db = at(bi).grad;
        for (int r = 0; r < rows; ++r) {
            const size_t off = static_cast<size_t>(r) * cols;
            for (int j = 0; j < cols; ++j) {
                dx[off + j] += g[off + j];
                db[j] += g[off + j];
            }
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::slice_rows(Tensor<Real> a, int begin, int end) {
    check_same_tape(a);
    const Shape& sa = at(a.id_).shape;
    require(sa.size() == 2, "slice_rows needs a 2-D operand, got " + shape_str(sa));
    require(begin >= 0 && end > begin && end <= sa[0],
            "row slice [" + std::to_string(begin) + "," + std::to_string(end) +
                ") outside " + shape_str(sa));
    const int cols = sa[1];
    const std::vector<Real>& va = at(a.id_).value;
    std::vector<Real> out(static_cast<size_t>(end - begin) * cols);
    std::copy_n(va.data() + static_cast<size_t>(begin) * cols, out.size(), out.data());
    const int32_t id = emit({end - begin, cols}, std::move(out), {a.id_});
    at(id).backprop = [this, id, ai = a.id_, begin, cols]() {
        const std::vector<Real>& g = at(id).grad;
        std::vector<Real>& da = at(ai).grad;
        Real* dst = da.data() + static_cast<size_t>(begin) * cols;
        for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::slice_cols(Tensor<Real> a, int begin, int end) {
    check_same_tape(a);
    const Shape& sa = at(a.id_).shape;
    require(sa.size() == 2, "slice_cols needs a 2-D operand, got " + shape_str(sa));
    require(begin >= 0 && end > begin && end <= sa[1],
            "column slice [" + std::to_string(begin) + "," + std::to_string(end) +
                ") outside " + shape_str(sa));
    const int rows = sa[0], cols = sa[1], width = end - begin;
    const std::vector<Real>& va = at(a.id_).value;
    std::vector<Real> out(static_cast<size_t>(rows) * width);
    for (int r = 0; r < rows; ++r) {
        std::copy_n(va.data() + static_cast<size_t>(r) * cols + begin, width,
                    out.data() + static_cast<size_t>(r) * width);
    }
    const int32_t id = emit({rows, width}, std::move(out), {a.id_});
    at(id).backprop = [this, id, ai = a.id_, begin, rows, cols, width]() {
        const std::vector<Real>& g = at(id).grad;
        std::vector<Real>& da = at(ai).grad;
        for (int r = 0; r < rows; ++r) {
            Real* dst = da.data() + static_cast<size_t>(r) * cols + begin;
            const Real* src = g.data() + static_cast<size_t>(r) * width;
            for (int j = 0; j < width; ++j) dst[j] += src[j];
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::reshape(Tensor<Real> a, Shape shape) {
    check_same_tape(a);
    require(ad::numel(shape) == static_cast<int64_t>(at(a.id_).value.size()),
            "reshape from " + shape_str(at(a.id_).shape) + " to " + shape_str(shape) +
                " changes the element count");
    const int32_t id = emit(std::move(shape), at(a.id_).value, {a.id_});
    at(id).backprop = [this, id, ai = a.id_]() {
        const std::vector<Real>& g = at(id).grad;
        std::vector<Real>& da = at(ai).grad;
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::concat_rows(const std::vector<Tensor<Real>>& parts) {
    require(!parts.empty(), "concat_rows needs at least one part");
    int cols = -1, rows = 0;
    std::vector<int32_t> parents;
    for (Tensor<Real> p : parts) {
        check_same_tape(p);
        const Shape& sp = at(p.id_).shape;
        require(sp.size() == 2, "concat_rows needs 2-D parts, got " + shape_str(sp));
        if (cols < 0) cols = sp[1];
        require(sp[1] == cols, "concat_rows parts disagree on column count");
        rows += sp[0];
        parents.push_back(p.id_);
    }
    std::vector<Real> out;
    out.reserve(static_cast<size_t>(rows) * cols);
    for (int32_t pid : parents) {
        const std::vector<Real>& v = at(pid).value;
        out.insert(out.end(), v.begin(), v.end());
    }
    const int32_t id = emit({rows, cols}, std::move(out), parents);
    at(id).backprop = [this, id, parents]() {
        const std::vector<Real>& g = at(id).grad;
        size_t offset = 0;
        for (int32_t pid : parents) {
            std::vector<Real>& dp = at(pid).grad;
            for (size_t i = 0; i < dp.size(); ++i) dp[i] += g[offset + i];
            offset += dp.size();
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::concat_cols(const std::vector<Tensor<Real>>& parts) {
    require(!parts.empty(), "concat_cols needs at least one part");
    int rows = -1, cols = 0;
    std::vector<int32_t> parents;
    std::vector<int> widths;
    for (Tensor<Real> p : parts) {
        check_same_tape(p);
        const Shape& sp = at(p.id_).shape;
        require(sp.size() == 2, "concat_cols needs 2-D parts, got " + shape_str(sp));
        if (rows < 0) rows = sp[0];
        require(sp[0] == rows, "concat_cols parts disagree on row count");
        cols += sp[1];
        widths.push_back(sp[1]);
        parents.push_back(p.id_);
    }
    std::vector<Real> out(static_cast<size_t>(rows) * cols);
    int col_off = 0;
    for (size_t k = 0; k < parents.size(); ++k) {
        const std::vector<Real>& v = at(parents[k]).value;
        for (int r = 0; r < rows; ++r) {
            std::copy_n(v.data() + static_cast<size_t>(r) * widths[k], widths[k],
                        out.data() + static_cast<size_t>(r) * cols + col_off);
        }
        col_off += widths[k];
    }
    const int32_t id = emit({rows, cols}, std::move(out), parents);
    at(id).backprop = [this, id, parents, widths, rows, cols]() {
        const std::vector<Real>& g = at(id).grad;
        int col_off = 0;
        for (size_t k = 0; k < parents.size(); ++k) {
            std::vector<Real>& dp = at(parents[k]).grad;
            for (int r = 0; r < rows; ++r) {
                const Real* src = g.data() + static_cast<size_t>(r) * cols + col_off;
                Real* dst = dp.data() + static_cast<size_t>(r) * widths[k];
                for (int j = 0; j < widths[k]; ++j) dst[j] += src[j];
            }
            col_off += widths[k];
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::reduce_sum(Tensor<Real> a) {
    check_same_tape(a);
    const std::vector<Real>& va = at(a.id_).value;
    double acc = 0.0;
    for (Real v : va) acc += static_cast<double>(v);
    const int32_t id = emit({1}, {static_cast<Real>(acc)}, {a.id_});
    at(id).backprop = [this, id, ai = a.id_]() {
        const Real g = at(id).grad[0];
        std::vector<Real>& da = at(ai).grad;
        for (size_t i = 0; i < da.size(); ++i) da[i] += g;
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::reduce_mean(Tensor<Real> a) {
    check_same_tape(a);
    const std::vector<Real>& va = at(a.id_).value;
    double acc = 0.0;
    for (Real v : va) acc += static_cast<double>(v);
    const double inv_n = 1.0 / static_cast<double>(va.size());
    const int32_t id = emit({1}, {static_cast<Real>(acc * inv_n)}, {a.id_});
    at(id).backprop = [this, id, ai = a.id_, inv_n]() {
        const Real g = static_cast<Real>(static_cast<double>(at(id).grad[0]) * inv_n);
        std::vector<Real>& da = at(ai).grad;
        for (size_t i = 0; i < da.size(); ++i) da[i] += g;
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::l2_norm(Tensor<Real> a) {
    check_same_tape(a);
    const std::vector<Real>& va = at(a.id_).value;
    double acc = 0.0;
    for (Real v : va) acc += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(acc);
    const int32_t id = emit({1}, {static_cast<Real>(norm)}, {a.id_});
    // d||x||/dx = x/||x||; zero vector gets subgradient 0.
    at(id).backprop = [this, id, ai = a.id_, norm]() {
        if (norm == 0.0) return;
        const double g = static_cast<double>(at(id).grad[0]) / norm;
        const std::vector<Real>& va = at(ai).value;
        std::vector<Real>& da = at(ai).grad;
        for (size_t i = 0; i < da.size(); ++i) {
            da[i] += static_cast<Real>(g * static_cast<double>(va[i]));
        }
    };
    return Tensor<Real>(this, id);
}

template <typename Real>
Tensor<Real> Tape<Real>::normalize_rows(Tensor<Real> a) {
    check_same_tape(a);
    const Shape& sa = at(a.id_).shape;
    require(sa.size() == 2, "normalize_rows needs a 2-D operand, got " + shape_str(sa));
    const int rows = sa[0], cols = sa[1];
    const std::vector<Real>& va = at(a.id_).value;
    std::vector<Real> out(va.size());
    auto norms = std::make_shared<std::vector<double>>(rows);
    for (int r = 0; r < rows; ++r) {
        const size_t off = static_cast<size_t>(r) * cols;
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) {
            acc += static_cast<double>(va[off + j]) * static_cast<double>(va[off + j]);
        }
        const double norm = std::sqrt(acc);
        if (norm < 1e-30) {
            raise(ErrorCode::ZeroVector,
                  "normalize_rows: row " + std::to_string(r) + " has zero norm");
        }
        (*norms)[r] = norm;
        for (int j = 0; j < cols; ++j) {
            out[off + j] = static_cast<Real>(static_cast<double>(va[off + j]) / norm);
        }
    }
    const int32_t id = emit(sa, std::move(out), {a.id_});
    at(id).backprop = [this, id, ai = a.id_, rows, cols, norms]() {
        const std::vector<Real>& g = at(id).grad;
        const std::vector<Real>& y = at(id).value;
        std::vector<Real>& da = at(ai).grad;
        for (int r = 0; r < rows; ++r) {
            const size_t off = static_cast<size_t>(r) * cols;
            double gy = 0.0;
            for (int j = 0; j < cols; ++j) {
                gy += static_cast<double>(g[off + j]) * static_cast<double>(y[off + j]);
            }
            const double inv_norm = 1.0 / (*norms)[r];
            for (int j = 0; j < cols; ++j) {
                da[off + j] += static_cast<Real>(
                    (static_cast<double>(g[off + j]) -
                     static_cast<double>(y[off + j]) * gy) *
                    inv_norm);
            }
        }
    };
    return Tensor<Real>(this, id);
}

// ---- Tape: backward ---------------------------------------------------------

template <typename Real>
void Tape<Real>::backward(Tensor<Real> loss) {
    check_same_tape(loss);
    if (at(loss.id_).value.size() != 1) {
        raise(ErrorCode::NonScalarLoss,
              "backward needs a one-element loss, got " + shape_str(at(loss.id_).shape));
    }
    // Mark ancestors of the loss; only they participate in the sweep, so a
    // branch that never reaches the loss contributes exactly nothing.
    std::vector<char> marked(nodes_.size(), 0);
    std::vector<int32_t> stack = {loss.id_};
    marked[static_cast<size_t>(loss.id_)] = 1;
    while (!stack.empty()) {
        const int32_t id = stack.back();
        stack.pop_back();
        for (int32_t parent : at(id).parents) {
            if (!marked[static_cast<size_t>(parent)]) {
                marked[static_cast<size_t>(parent)] = 1;
                stack.push_back(parent);
            }
        }
    }
    for (size_t i = 0; i < nodes_.size(); ++i) {
        if (marked[i]) nodes_[i].grad.assign(nodes_[i].value.size(), Real(0));
    }
    at(loss.id_).grad[0] = Real(1);
    for (int32_t id = loss.id_; id >= 0; --id) {
        if (marked[static_cast<size_t>(id)] && at(id).backprop) at(id).backprop();
    }
    // Flush leaf gradients into their parameters.
    for (const auto& [param, id] : leaf_ids_) {
        if (!marked[static_cast<size_t>(id)]) continue;
        const std::vector<Real>& g = at(id).grad;
        Parameter<Real>* p = at(id).param;
        for (size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
}

// ---- AdamW -------------------------------------------------------------------

template <typename Real>
AdamWState<Real>::AdamWState(const std::vector<Parameter<Real>*>& params,
                             AdamWConfig config)
    : config_(config) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Parameter<Real>* p : params) {
        m_.emplace_back(p->value.size(), Real(0));
        v_.emplace_back(p->value.size(), Real(0));
        sizes_.push_back(p->size());
    }
}

template <typename Real>
void AdamWState<Real>::step(const std::vector<Parameter<Real>*>& params, double lr) {
    if (params.size() != m_.size()) {
        raise(ErrorCode::ShapeMismatch, "optimizer state covers " +
                                            std::to_string(m_.size()) +
                                            " parameters, got " +
                                            std::to_string(params.size()));
    }
    ++t_;
    const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter<Real>& p = *params[pi];
        if (p.size() != sizes_[pi]) {
            raise(ErrorCode::ShapeMismatch,
                  "parameter '" + p.name + "' changed size under the optimizer");
        }
        std::vector<Real>& m = m_[pi];
        std::vector<Real>& v = v_[pi];
        for (size_t i = 0; i < p.value.size(); ++i) {
            const double g = static_cast<double>(p.grad[i]);
            const double mi = config_.beta1 * static_cast<double>(m[i]) +
                              (1.0 - config_.beta1) * g;
            const double vi = config_.beta2 * static_cast<double>(v[i]) +
                              (1.0 - config_.beta2) * g * g;
            m[i] = static_cast<Real>(mi);
            v[i] = static_cast<Real>(vi);
            const double mhat = mi / bias1;
            const double vhat = vi / bias2;
            const double update = mhat / (std::sqrt(vhat) + config_.eps) +
                                  config_.weight_decay * static_cast<double>(p.value[i]);
            p.value[i] = static_cast<Real>(static_cast<double>(p.value[i]) - lr * update);
        }
    }
}

// ---- grad_check ---------------------------------------------------------------

double grad_check(const LossBuilder& loss_builder,
                  const std::vector<Parameter<double>*>& params, double h) {
    for (Parameter<double>* p : params) p->zero_grad();
    {
        Tape<double> tape;
        Tensor<double> loss = loss_builder(tape);
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter<double>* p : params) analytic.push_back(p->grad);

    auto eval = [&]() {
        Tape<double> tape;
        return loss_builder(tape).item();
    };

    double max_rel = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter<double>& p = *params[pi];
        for (size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + h;
            const double plus = eval();
            p.value[i] = saved - h;
            const double minus = eval();
            p.value[i] = saved;
            const double cd = (plus - minus) / (2.0 * h);
            const double a = analytic[pi][i];
            const double rel =
                std::fabs(a - cd) / std::max({std::fabs(a), std::fabs(cd), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

// ---- explicit instantiation ----------------------------------------------------

template struct Parameter<float>;
template struct Parameter<double>;
template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class AdamWState<float>;
template class AdamWState<double>;

}  // namespace glyph::ad
