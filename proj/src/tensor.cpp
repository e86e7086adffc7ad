#include "dasd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <iostream>
#include <unordered_map>
#include <unordered_set>

namespace dasd {

namespace {

std::atomic<std::uint64_t> g_next_node_id{1};

thread_local std::vector<GradTape*> g_tape_stack;

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> data, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    node->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

void check_finite(const std::vector<double>& data, Op op) {
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw NonFinite(std::string("non-finite value produced by ") + op_name(op));
        }
    }
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeMismatch(msg);
}

bool is_vector(const Shape& s) { return s.size() == 1; }
bool is_matrix(const Shape& s) { return s.size() == 2; }

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

const char* op_name(Op op) {
    switch (op) {
        case Op::kMatmul: return "matmul";
        case Op::kTranspose: return "transpose";
        case Op::kReshape: return "reshape";
        case Op::kConcat: return "concat";
        case Op::kRowSelect: return "row_select";
        case Op::kGatherRows: return "gather_rows";
        case Op::kSliceCols: return "slice_cols";
        case Op::kDiagPart: return "diag_part";
        case Op::kAdd: return "add";
        case Op::kMul: return "mul";
        case Op::kNegate: return "negate";
        case Op::kScalarMul: return "scalar_mul";
        case Op::kRelu: return "relu";
        case Op::kSigmoid: return "sigmoid";
        case Op::kLog: return "log";
        case Op::kExp: return "exp";
        case Op::kClamp: return "clamp";
        case Op::kLayerNorm: return "layer_norm";
        case Op::kSoftmax: return "softmax";
        case Op::kL2NormalizeRows: return "l2_normalize_rows";
        case Op::kReduceSum: return "reduce_sum";
        case Op::kMeanPoolMasked: return "mean_pool_masked";
        case Op::kL1Distance: return "l1_distance";
        case Op::kSquaredL2: return "squared_l2";
    }
    return "?";
}

Op op_from_name(const std::string& name) {
    static const std::map<std::string, Op> table = {
        {"matmul", Op::kMatmul},
        {"transpose", Op::kTranspose},
        {"reshape", Op::kReshape},
        {"concat", Op::kConcat},
        {"row_select", Op::kRowSelect},
        {"gather_rows", Op::kGatherRows},
        {"slice_cols", Op::kSliceCols},
        {"diag_part", Op::kDiagPart},
        {"add", Op::kAdd},
        {"mul", Op::kMul},
        {"negate", Op::kNegate},
        {"scalar_mul", Op::kScalarMul},
        {"relu", Op::kRelu},
        {"sigmoid", Op::kSigmoid},
        {"log", Op::kLog},
        {"exp", Op::kExp},
        {"clamp", Op::kClamp},
        {"layer_norm", Op::kLayerNorm},
        {"softmax", Op::kSoftmax},
        {"l2_normalize_rows", Op::kL2NormalizeRows},
        {"reduce_sum", Op::kReduceSum},
        {"mean_pool_masked", Op::kMeanPoolMasked},
        {"l1_distance", Op::kL1Distance},
        {"squared_l2", Op::kSquaredL2},
    };
    auto it = table.find(name);
    if (it == table.end()) throw UnknownPrimitive("unknown primitive: " + name);
    return it->second;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != data.size()) {
        throw ShapeMismatch("tensor data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape));
    }
    for (double v : data) {
        if (!std::isfinite(v)) throw NonFinite("non-finite value in tensor construction");
    }
    return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> data(numel(shape), 0.0);
    return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    if (!std::isfinite(value)) throw NonFinite("non-finite fill value");
    std::vector<double> data(numel(shape), value);
    return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

double Tensor::value() const {
    if (!node_ || node_->data.size() != 1) {
        throw NotScalar("value() requires a single-element tensor");
    }
    return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    return node_->data[r * node_->shape[1] + c];
}

Tensor Tensor::detach() const {
    return Tensor(make_node(node_->shape, node_->data, /*requires_grad=*/false));
}

TapeScope::TapeScope(GradTape& tape) { g_tape_stack.push_back(&tape); }
TapeScope::~TapeScope() { g_tape_stack.pop_back(); }

GradTape* active_tape() { return g_tape_stack.empty() ? nullptr : g_tape_stack.back(); }

namespace {

// C += A * B over row-major buffers, shapes (m x k) @ (k x n).
void matmul_accum(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C += A^T * B, A is (k x m), B is (k x n), C is (m x n).
void matmul_at_accum(const double* a, const double* b, double* c,
                     std::size_t k, std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ap[i];
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C += A * B^T, A is (m x k), B is (n x k), C is (m x n).
void matmul_bt_accum(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

struct MatmulDims {
    std::size_t m, k, n;
    bool a_vec, b_vec;
};

MatmulDims matmul_dims(const Shape& a, const Shape& b) {
    MatmulDims d{};
    d.a_vec = is_vector(a);
    d.b_vec = is_vector(b);
    if (d.a_vec && d.b_vec) {
        require(a[0] == b[0], "matmul: dot-product length mismatch " + shape_str(a) + " vs " + shape_str(b));
        d.m = 1; d.k = a[0]; d.n = 1;
    } else if (d.a_vec) {
        require(is_matrix(b) && a[0] == b[0], "matmul: " + shape_str(a) + " @ " + shape_str(b));
        d.m = 1; d.k = a[0]; d.n = b[1];
    } else if (d.b_vec) {
        require(is_matrix(a) && a[1] == b[0], "matmul: " + shape_str(a) + " @ " + shape_str(b));
        d.m = a[0]; d.k = a[1]; d.n = 1;
    } else {
        require(is_matrix(a) && is_matrix(b) && a[1] == b[0],
                "matmul: " + shape_str(a) + " @ " + shape_str(b));
        d.m = a[0]; d.k = a[1]; d.n = b[1];
    }
    return d;
}

struct RowsCols {
    std::size_t rows, cols;
};

// Interpret 1-D as a single row; used by the row-structured primitives.
RowsCols as_rows(const Shape& s, const char* what) {
    if (is_vector(s)) return {1, s[0]};
    if (is_matrix(s)) return {s[0], s[1]};
    throw ShapeMismatch(std::string(what) + ": expected vector or matrix, got " + shape_str(s));
}

std::vector<double> eval_forward(Op op, std::span<const Tensor> inputs, const Attrs& attrs,
                                 Shape& out_shape) {
    switch (op) {
        case Op::kMatmul: {
            require(inputs.size() == 2, "matmul takes 2 inputs");
            const auto& a = inputs[0];
            const auto& b = inputs[1];
            MatmulDims d = matmul_dims(a.shape(), b.shape());
            std::vector<double> out(d.m * d.n, 0.0);
            matmul_accum(a.data().data(), b.data().data(), out.data(), d.m, d.k, d.n);
            if (d.a_vec && d.b_vec) out_shape = {1};
            else if (d.a_vec) out_shape = {d.n};
            else if (d.b_vec) out_shape = {d.m};
            else out_shape = {d.m, d.n};
            return out;
        }
        case Op::kTranspose: {
            const auto& a = inputs[0];
            require(is_matrix(a.shape()), "transpose expects a matrix");
            std::size_t r = a.shape()[0], c = a.shape()[1];
            std::vector<double> out(r * c);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
            out_shape = {c, r};
            return out;
        }
        case Op::kReshape: {
            const auto& a = inputs[0];
            require(numel(attrs.target_shape) == a.size(),
                    "reshape: cannot view " + shape_str(a.shape()) + " as " +
                        shape_str(attrs.target_shape));
            out_shape = attrs.target_shape;
            return a.data();
        }
        case Op::kConcat: {
            require(!inputs.empty(), "concat needs at least one input");
            if (attrs.axis == 0 && is_vector(inputs[0].shape())) {
                std::size_t total = 0;
                for (const auto& t : inputs) {
                    require(is_vector(t.shape()), "concat: mixed ranks");
                    total += t.shape()[0];
                }
                std::vector<double> out;
                out.reserve(total);
                for (const auto& t : inputs) out.insert(out.end(), t.data().begin(), t.data().end());
                out_shape = {total};
                return out;
            }
            require(attrs.axis == 0 || attrs.axis == 1, "concat: axis must be 0 or 1");
            std::size_t cols = inputs[0].shape().size() == 2 ? inputs[0].shape()[1] : 0;
            require(cols > 0, "concat: matrix inputs expected");
            if (attrs.axis == 0) {
                std::size_t rows = 0;
                for (const auto& t : inputs) {
                    require(is_matrix(t.shape()) && t.shape()[1] == cols, "concat axis 0: column mismatch");
                    rows += t.shape()[0];
                }
                std::vector<double> out;
                out.reserve(rows * cols);
                for (const auto& t : inputs) out.insert(out.end(), t.data().begin(), t.data().end());
                out_shape = {rows, cols};
                return out;
            }
            std::size_t rows = inputs[0].shape()[0];
            std::size_t total_cols = 0;
            for (const auto& t : inputs) {
                require(is_matrix(t.shape()) && t.shape()[0] == rows, "concat axis 1: row mismatch");
                total_cols += t.shape()[1];
            }
            std::vector<double> out(rows * total_cols);
            std::size_t col_off = 0;
            for (const auto& t : inputs) {
                std::size_t c = t.shape()[1];
                for (std::size_t i = 0; i < rows; ++i)
                    std::memcpy(out.data() + i * total_cols + col_off, t.data().data() + i * c,
                                c * sizeof(double));
                col_off += c;
            }
            out_shape = {rows, total_cols};
            return out;
        }
        case Op::kRowSelect: {
            const auto& a = inputs[0];
            require(is_matrix(a.shape()), "row_select expects a matrix");
            require(attrs.index < a.shape()[0], "row_select: row out of range");
            std::size_t c = a.shape()[1];
            std::vector<double> out(a.data().begin() + attrs.index * c,
                                    a.data().begin() + (attrs.index + 1) * c);
            out_shape = {c};
            return out;
        }
        case Op::kGatherRows: {
            const auto& a = inputs[0];
            require(is_matrix(a.shape()), "gather_rows expects a matrix table");
            std::size_t rows = a.shape()[0], c = a.shape()[1];
            std::vector<double> out(attrs.indices.size() * c);
            for (std::size_t i = 0; i < attrs.indices.size(); ++i) {
                std::int32_t idx = attrs.indices[i];
                require(idx >= 0 && static_cast<std::size_t>(idx) < rows,
                        "gather_rows: index out of range");
                std::memcpy(out.data() + i * c, a.data().data() + static_cast<std::size_t>(idx) * c,
                            c * sizeof(double));
            }
            out_shape = {attrs.indices.size(), c};
            return out;
        }
        case Op::kSliceCols: {
            const auto& a = inputs[0];
            require(is_matrix(a.shape()), "slice_cols expects a matrix");
            require(attrs.col_lo < attrs.col_hi && attrs.col_hi <= a.shape()[1],
                    "slice_cols: bad column range");
            std::size_t rows = a.shape()[0], c = a.shape()[1], w = attrs.col_hi - attrs.col_lo;
            std::vector<double> out(rows * w);
            for (std::size_t i = 0; i < rows; ++i)
                std::memcpy(out.data() + i * w, a.data().data() + i * c + attrs.col_lo,
                            w * sizeof(double));
            out_shape = {rows, w};
            return out;
        }
        case Op::kDiagPart: {
            const auto& a = inputs[0];
            require(is_matrix(a.shape()) && a.shape()[0] == a.shape()[1],
                    "diag_part expects a square matrix");
            std::size_t n = a.shape()[0];
            std::vector<double> out(n);
            for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i * n + i];
            out_shape = {n};
            return out;
        }
        case Op::kAdd: {
            const auto& a = inputs[0];
            const auto& b = inputs[1];
            if (a.shape() == b.shape()) {
                std::vector<double> out(a.size());
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
                out_shape = a.shape();
                return out;
            }
            // (rows x d) + (d): bias broadcast over rows.
            require(is_matrix(a.shape()) && is_vector(b.shape()) && a.shape()[1] == b.shape()[0],
                    "add: incompatible shapes " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
            std::size_t rows = a.shape()[0], c = a.shape()[1];
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.data()[i * c + j] + b.data()[j];
            out_shape = a.shape();
            return out;
        }
        case Op::kMul: {
            const auto& a = inputs[0];
            const auto& b = inputs[1];
            if (a.shape() == b.shape()) {
                std::vector<double> out(a.size());
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
                out_shape = a.shape();
                return out;
            }
            require(is_matrix(a.shape()) && is_vector(b.shape()) && a.shape()[1] == b.shape()[0],
                    "mul: incompatible shapes " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
            std::size_t rows = a.shape()[0], c = a.shape()[1];
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.data()[i * c + j] * b.data()[j];
            out_shape = a.shape();
            return out;
        }
        case Op::kNegate: {
            const auto& a = inputs[0];
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = -a.data()[i];
            out_shape = a.shape();
            return out;
        }
        case Op::kScalarMul: {
            const auto& a = inputs[0];
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = attrs.scalar * a.data()[i];
            out_shape = a.shape();
            return out;
        }
        case Op::kRelu: {
            const auto& a = inputs[0];
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
            out_shape = a.shape();
            return out;
        }
        case Op::kSigmoid: {
            const auto& a = inputs[0];
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
            out_shape = a.shape();
            return out;
        }
        case Op::kLog: {
            const auto& a = inputs[0];
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i]);
            out_shape = a.shape();
            return out;
        }
        case Op::kExp: {
            const auto& a = inputs[0];
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
            out_shape = a.shape();
            return out;
        }
        case Op::kClamp: {
            const auto& a = inputs[0];
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = std::min(attrs.hi, std::max(attrs.lo, a.data()[i]));
            out_shape = a.shape();
            return out;
        }
        case Op::kLayerNorm: {
            const auto& a = inputs[0];
            RowsCols rc = as_rows(a.shape(), "layer_norm");
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < rc.rows; ++i) {
                const double* x = a.data().data() + i * rc.cols;
                double mean = 0.0;
                for (std::size_t j = 0; j < rc.cols; ++j) mean += x[j];
                mean /= static_cast<double>(rc.cols);
                double var = 0.0;
                for (std::size_t j = 0; j < rc.cols; ++j) var += (x[j] - mean) * (x[j] - mean);
                var /= static_cast<double>(rc.cols);
                double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
                for (std::size_t j = 0; j < rc.cols; ++j) out[i * rc.cols + j] = (x[j] - mean) * inv;
            }
            out_shape = a.shape();
            return out;
        }
        case Op::kSoftmax: {
            const auto& a = inputs[0];
            RowsCols rc = as_rows(a.shape(), "softmax");
            const auto& mask = attrs.mask;
            require(mask.empty() || mask.size() == rc.cols, "softmax: mask length mismatch");
            std::vector<double> out(a.size(), 0.0);
            for (std::size_t i = 0; i < rc.rows; ++i) {
                const double* x = a.data().data() + i * rc.cols;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < rc.cols; ++j)
                    if (mask.empty() || mask[j]) mx = std::max(mx, x[j]);
                require(std::isfinite(mx) || mask.empty(), "softmax: row fully masked");
                double denom = 0.0;
                for (std::size_t j = 0; j < rc.cols; ++j)
                    if (mask.empty() || mask[j]) denom += std::exp(x[j] - mx);
                for (std::size_t j = 0; j < rc.cols; ++j)
                    if (mask.empty() || mask[j]) out[i * rc.cols + j] = std::exp(x[j] - mx) / denom;
            }
            out_shape = a.shape();
            return out;
        }
        case Op::kL2NormalizeRows: {
            const auto& a = inputs[0];
            RowsCols rc = as_rows(a.shape(), "l2_normalize_rows");
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < rc.rows; ++i) {
                const double* x = a.data().data() + i * rc.cols;
                double sq = 0.0;
                for (std::size_t j = 0; j < rc.cols; ++j) sq += x[j] * x[j];
                if (sq == 0.0) throw ZeroVector("l2_normalize_rows: zero row " + std::to_string(i));
                double inv = 1.0 / std::sqrt(sq);
                for (std::size_t j = 0; j < rc.cols; ++j) out[i * rc.cols + j] = x[j] * inv;
            }
            out_shape = a.shape();
            return out;
        }
        case Op::kReduceSum: {
            const auto& a = inputs[0];
            double s = 0.0;
            for (double v : a.data()) s += v;
            out_shape = {1};
            return {s};
        }
        case Op::kMeanPoolMasked: {
            const auto& a = inputs[0];
            require(is_matrix(a.shape()), "mean_pool_masked expects a matrix");
            std::size_t rows = a.shape()[0], c = a.shape()[1];
            require(attrs.mask.size() == rows, "mean_pool_masked: mask length mismatch");
            std::size_t count = 0;
            for (auto m : attrs.mask) count += m ? 1 : 0;
            require(count > 0, "mean_pool_masked: all rows masked out");
            std::vector<double> out(c, 0.0);
            for (std::size_t i = 0; i < rows; ++i) {
                if (!attrs.mask[i]) continue;
                for (std::size_t j = 0; j < c; ++j) out[j] += a.data()[i * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(count);
            out_shape = {c};
            return out;
        }
        case Op::kL1Distance: {
            const auto& a = inputs[0];
            const auto& b = inputs[1];
            require(a.shape() == b.shape(), "l1_distance: shape mismatch");
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
            out_shape = {1};
            return {s};
        }
        case Op::kSquaredL2: {
            const auto& a = inputs[0];
            const auto& b = inputs[1];
            require(a.shape() == b.shape(), "squared_l2: shape mismatch");
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                double d = a.data()[i] - b.data()[i];
                s += d * d;
            }
            out_shape = {1};
            return {s};
        }
    }
    throw UnknownPrimitive("unhandled primitive id");
}

}  // namespace

Tensor forward_primitive(Op op, std::span<const Tensor> inputs, const Attrs& attrs) {
    for (const auto& t : inputs) {
        if (!t.defined()) throw ShapeMismatch("undefined tensor passed to " + std::string(op_name(op)));
    }
    Shape out_shape;
    std::vector<double> out = eval_forward(op, inputs, attrs, out_shape);
    check_finite(out, op);
    bool needs_grad = false;
    for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
    Tensor result(make_node(std::move(out_shape), std::move(out), needs_grad));
    if (needs_grad) {
        if (GradTape* tape = active_tape()) {
            GradTape::Entry entry;
            entry.op = op;
            entry.attrs = attrs;
            entry.inputs.reserve(inputs.size());
            for (const auto& t : inputs) entry.inputs.push_back(t.node());
            entry.output = result.node();
            tape->record(std::move(entry));
        }
    }
    return result;
}

namespace {

using Buffer = std::vector<double>;
using GradBuffers = std::unordered_map<const TensorNode*, Buffer>;

Buffer& buffer_for(GradBuffers& bufs, const TensorNode* node) {
    auto it = bufs.find(node);
    if (it == bufs.end()) it = bufs.emplace(node, Buffer(node->data.size(), 0.0)).first;
    return it->second;
}

void backward_entry(const GradTape::Entry& e, const Buffer& go, GradBuffers& bufs) {
    auto in = [&](std::size_t i) -> const TensorNode& { return *e.inputs[i]; };
    auto grad_in = [&](std::size_t i) -> Buffer& { return buffer_for(bufs, e.inputs[i].get()); };
    auto wants = [&](std::size_t i) { return e.inputs[i]->requires_grad; };

    switch (e.op) {
        case Op::kMatmul: {
            MatmulDims d = matmul_dims(in(0).shape, in(1).shape);
            if (wants(0)) {
                // dA = dC * B^T
                matmul_bt_accum(go.data(), in(1).data.data(), grad_in(0).data(), d.m, d.n, d.k);
            }
            if (wants(1)) {
                // dB = A^T * dC
                matmul_at_accum(in(0).data.data(), go.data(), grad_in(1).data(), d.m, d.k, d.n);
            }
            break;
        }
        case Op::kTranspose: {
            if (!wants(0)) break;
            std::size_t r = in(0).shape[0], c = in(0).shape[1];
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += go[j * r + i];
            break;
        }
        case Op::kReshape: {
            if (!wants(0)) break;
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
            break;
        }
        case Op::kConcat: {
            if (e.attrs.axis == 0) {
                std::size_t off = 0;
                for (std::size_t t = 0; t < e.inputs.size(); ++t) {
                    std::size_t n = in(t).data.size();
                    if (wants(t)) {
                        Buffer& g = grad_in(t);
                        for (std::size_t i = 0; i < n; ++i) g[i] += go[off + i];
                    }
                    off += n;
                }
            } else {
                std::size_t rows = e.output->shape[0], total_cols = e.output->shape[1];
                std::size_t col_off = 0;
                for (std::size_t t = 0; t < e.inputs.size(); ++t) {
                    std::size_t c = in(t).shape[1];
                    if (wants(t)) {
                        Buffer& g = grad_in(t);
                        for (std::size_t i = 0; i < rows; ++i)
                            for (std::size_t j = 0; j < c; ++j)
                                g[i * c + j] += go[i * total_cols + col_off + j];
                    }
                    col_off += c;
                }
            }
            break;
        }
        case Op::kRowSelect: {
            if (!wants(0)) break;
            std::size_t c = in(0).shape[1];
            Buffer& g = grad_in(0);
            for (std::size_t j = 0; j < c; ++j) g[e.attrs.index * c + j] += go[j];
            break;
        }
        case Op::kGatherRows: {
            if (!wants(0)) break;
            std::size_t c = in(0).shape[1];
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < e.attrs.indices.size(); ++i) {
                auto idx = static_cast<std::size_t>(e.attrs.indices[i]);
                for (std::size_t j = 0; j < c; ++j) g[idx * c + j] += go[i * c + j];
            }
            break;
        }
        case Op::kSliceCols: {
            if (!wants(0)) break;
            std::size_t rows = in(0).shape[0], c = in(0).shape[1];
            std::size_t w = e.attrs.col_hi - e.attrs.col_lo;
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    g[i * c + e.attrs.col_lo + j] += go[i * w + j];
            break;
        }
        case Op::kDiagPart: {
            if (!wants(0)) break;
            std::size_t n = in(0).shape[0];
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < n; ++i) g[i * n + i] += go[i];
            break;
        }
        case Op::kAdd: {
            if (wants(0)) {
                Buffer& g = grad_in(0);
                for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
            }
            if (wants(1)) {
                Buffer& g = grad_in(1);
                if (in(0).shape == in(1).shape) {
                    for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
                } else {
                    std::size_t rows = in(0).shape[0], c = in(0).shape[1];
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < c; ++j) g[j] += go[i * c + j];
                }
            }
            break;
        }
        case Op::kMul: {
            bool broadcast = in(0).shape != in(1).shape;
            std::size_t rows = broadcast ? in(0).shape[0] : 0;
            std::size_t c = broadcast ? in(0).shape[1] : 0;
            if (wants(0)) {
                Buffer& g = grad_in(0);
                if (!broadcast) {
                    for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * in(1).data[i];
                } else {
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += go[i * c + j] * in(1).data[j];
                }
            }
            if (wants(1)) {
                Buffer& g = grad_in(1);
                if (!broadcast) {
                    for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * in(0).data[i];
                } else {
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < c; ++j) g[j] += go[i * c + j] * in(0).data[i * c + j];
                }
            }
            break;
        }
        case Op::kNegate: {
            if (!wants(0)) break;
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < go.size(); ++i) g[i] -= go[i];
            break;
        }
        case Op::kScalarMul: {
            if (!wants(0)) break;
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < go.size(); ++i) g[i] += e.attrs.scalar * go[i];
            break;
        }
        case Op::kRelu: {
            if (!wants(0)) break;
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < go.size(); ++i)
                if (in(0).data[i] > 0.0) g[i] += go[i];
            break;
        }
        case Op::kSigmoid: {
            if (!wants(0)) break;
            Buffer& g = grad_in(0);
            const auto& y = e.output->data;
            for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * y[i] * (1.0 - y[i]);
            break;
        }
        case Op::kLog: {
            if (!wants(0)) break;
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] / in(0).data[i];
            break;
        }
        case Op::kExp: {
            if (!wants(0)) break;
            Buffer& g = grad_in(0);
            const auto& y = e.output->data;
            for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * y[i];
            break;
        }
        case Op::kClamp: {
            if (!wants(0)) break;
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < go.size(); ++i) {
                double x = in(0).data[i];
                if (x > e.attrs.lo && x < e.attrs.hi) g[i] += go[i];
            }
            break;
        }
        case Op::kLayerNorm: {
            if (!wants(0)) break;
            RowsCols rc = as_rows(in(0).shape, "layer_norm");
            Buffer& g = grad_in(0);
            const auto& y = e.output->data;
            const auto& x = in(0).data;
            for (std::size_t i = 0; i < rc.rows; ++i) {
                const double* xr = x.data() + i * rc.cols;
                const double* yr = y.data() + i * rc.cols;
                const double* gr = go.data() + i * rc.cols;
                double mean = 0.0;
                for (std::size_t j = 0; j < rc.cols; ++j) mean += xr[j];
                mean /= static_cast<double>(rc.cols);
                double var = 0.0;
                for (std::size_t j = 0; j < rc.cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
                var /= static_cast<double>(rc.cols);
                double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
                double mean_g = 0.0, mean_gy = 0.0;
                for (std::size_t j = 0; j < rc.cols; ++j) {
                    mean_g += gr[j];
                    mean_gy += gr[j] * yr[j];
                }
                mean_g /= static_cast<double>(rc.cols);
                mean_gy /= static_cast<double>(rc.cols);
                for (std::size_t j = 0; j < rc.cols; ++j)
                    g[i * rc.cols + j] += inv * (gr[j] - mean_g - yr[j] * mean_gy);
            }
            break;
        }
        case Op::kSoftmax: {
            if (!wants(0)) break;
            RowsCols rc = as_rows(in(0).shape, "softmax");
            const auto& mask = e.attrs.mask;
            Buffer& g = grad_in(0);
            const auto& y = e.output->data;
            for (std::size_t i = 0; i < rc.rows; ++i) {
                const double* yr = y.data() + i * rc.cols;
                const double* gr = go.data() + i * rc.cols;
                double dot = 0.0;
                for (std::size_t j = 0; j < rc.cols; ++j)
                    if (mask.empty() || mask[j]) dot += gr[j] * yr[j];
                for (std::size_t j = 0; j < rc.cols; ++j)
                    if (mask.empty() || mask[j]) g[i * rc.cols + j] += yr[j] * (gr[j] - dot);
            }
            break;
        }
        case Op::kL2NormalizeRows: {
            if (!wants(0)) break;
            RowsCols rc = as_rows(in(0).shape, "l2_normalize_rows");
            Buffer& g = grad_in(0);
            const auto& y = e.output->data;
            const auto& x = in(0).data;
            for (std::size_t i = 0; i < rc.rows; ++i) {
                const double* xr = x.data() + i * rc.cols;
                const double* yr = y.data() + i * rc.cols;
                const double* gr = go.data() + i * rc.cols;
                double sq = 0.0;
                for (std::size_t j = 0; j < rc.cols; ++j) sq += xr[j] * xr[j];
                double inv = 1.0 / std::sqrt(sq);
                double dot = 0.0;
                for (std::size_t j = 0; j < rc.cols; ++j) dot += gr[j] * yr[j];
                for (std::size_t j = 0; j < rc.cols; ++j)
                    g[i * rc.cols + j] += inv * (gr[j] - yr[j] * dot);
            }
            break;
        }
        case Op::kReduceSum: {
            if (!wants(0)) break;
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[0];
            break;
        }
        case Op::kMeanPoolMasked: {
            if (!wants(0)) break;
            std::size_t rows = in(0).shape[0], c = in(0).shape[1];
            std::size_t count = 0;
            for (auto m : e.attrs.mask) count += m ? 1 : 0;
            double inv = 1.0 / static_cast<double>(count);
            Buffer& g = grad_in(0);
            for (std::size_t i = 0; i < rows; ++i) {
                if (!e.attrs.mask[i]) continue;
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += go[j] * inv;
            }
            break;
        }
        case Op::kL1Distance: {
            // Subgradient 0 at exact ties.
            for (std::size_t which = 0; which < 2; ++which) {
                if (!wants(which)) continue;
                Buffer& g = grad_in(which);
                double sign_flip = which == 0 ? 1.0 : -1.0;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double d = in(0).data[i] - in(1).data[i];
                    double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    g[i] += sign_flip * s * go[0];
                }
            }
            break;
        }
        case Op::kSquaredL2: {
            for (std::size_t which = 0; which < 2; ++which) {
                if (!wants(which)) continue;
                Buffer& g = grad_in(which);
                double sign_flip = which == 0 ? 2.0 : -2.0;
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] += sign_flip * (in(0).data[i] - in(1).data[i]) * go[0];
            }
            break;
        }
    }
}

}  // namespace

GradMap backward(const Tensor& loss, const GradTape& tape) {
    if (!loss.defined() || loss.size() != 1) {
        throw NotScalar("backward requires a scalar loss");
    }
    GradBuffers bufs;
    bufs.emplace(loss.node().get(), Buffer{1.0});

    std::unordered_set<const TensorNode*> produced;
    produced.reserve(tape.size());
    for (const auto& e : tape.entries()) produced.insert(e.output.get());

    const auto& entries = tape.entries();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        auto found = bufs.find(it->output.get());
        if (found == bufs.end()) continue;  // not on a path to the loss
        backward_entry(*it, found->second, bufs);
    }

    GradMap grads;
    std::size_t reached_leaves = 0;
    for (const auto& e : tape.entries()) {
        for (const auto& input : e.inputs) {
            if (!input->requires_grad || produced.count(input.get())) continue;
            auto found = bufs.find(input.get());
            if (found == bufs.end()) continue;
            if (!input->name.empty() && grads.count(input->name)) continue;  // already collected
            input->grad = found->second;
            ++reached_leaves;
            if (!input->name.empty()) {
                grads.emplace(input->name, Tensor::from_data(input->shape, found->second));
            }
        }
    }
    if (reached_leaves == 0 && !tape.empty()) {
        std::cerr << "[dasd] warning: loss is disconnected from every trainable parameter\n";
    }
    return grads;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Tensor in[] = {a, b};
    return forward_primitive(Op::kMatmul, in);
}

Tensor transpose(const Tensor& a) {
    const Tensor in[] = {a};
    return forward_primitive(Op::kTranspose, in);
}

Tensor reshape(const Tensor& a, Shape shape) {
    Attrs attrs;
    attrs.target_shape = std::move(shape);
    const Tensor in[] = {a};
    return forward_primitive(Op::kReshape, in, attrs);
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    Attrs attrs;
    attrs.axis = axis;
    return forward_primitive(Op::kConcat, parts, attrs);
}

Tensor row_select(const Tensor& a, std::size_t row) {
    Attrs attrs;
    attrs.index = row;
    const Tensor in[] = {a};
    return forward_primitive(Op::kRowSelect, in, attrs);
}

Tensor gather_rows(const Tensor& table, const std::vector<std::int32_t>& indices) {
    Attrs attrs;
    attrs.indices = indices;
    const Tensor in[] = {table};
    return forward_primitive(Op::kGatherRows, in, attrs);
}

Tensor slice_cols(const Tensor& a, std::size_t lo, std::size_t hi) {
    Attrs attrs;
    attrs.col_lo = lo;
    attrs.col_hi = hi;
    const Tensor in[] = {a};
    return forward_primitive(Op::kSliceCols, in, attrs);
}

Tensor diag_part(const Tensor& a) {
    const Tensor in[] = {a};
    return forward_primitive(Op::kDiagPart, in);
}

Tensor add(const Tensor& a, const Tensor& b) {
    const Tensor in[] = {a, b};
    return forward_primitive(Op::kAdd, in);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const Tensor in[] = {a, b};
    return forward_primitive(Op::kMul, in);
}

Tensor negate(const Tensor& a) {
    const Tensor in[] = {a};
    return forward_primitive(Op::kNegate, in);
}

Tensor scalar_mul(const Tensor& a, double c) {
    Attrs attrs;
    attrs.scalar = c;
    const Tensor in[] = {a};
    return forward_primitive(Op::kScalarMul, in, attrs);
}

Tensor relu(const Tensor& a) {
    const Tensor in[] = {a};
    return forward_primitive(Op::kRelu, in);
}

Tensor sigmoid(const Tensor& a) {
    const Tensor in[] = {a};
    return forward_primitive(Op::kSigmoid, in);
}

Tensor log_op(const Tensor& a) {
    const Tensor in[] = {a};
    return forward_primitive(Op::kLog, in);
}

Tensor exp_op(const Tensor& a) {
    const Tensor in[] = {a};
    return forward_primitive(Op::kExp, in);
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    Attrs attrs;
    attrs.lo = lo;
    attrs.hi = hi;
    const Tensor in[] = {a};
    return forward_primitive(Op::kClamp, in, attrs);
}

Tensor layer_norm(const Tensor& a) {
    const Tensor in[] = {a};
    return forward_primitive(Op::kLayerNorm, in);
}

Tensor softmax(const Tensor& a, const std::vector<std::uint8_t>& mask) {
    Attrs attrs;
    attrs.mask = mask;
    const Tensor in[] = {a};
    return forward_primitive(Op::kSoftmax, in, attrs);
}

Tensor l2_normalize_rows(const Tensor& a) {
    const Tensor in[] = {a};
    return forward_primitive(Op::kL2NormalizeRows, in);
}

Tensor reduce_sum(const Tensor& a) {
    const Tensor in[] = {a};
    return forward_primitive(Op::kReduceSum, in);
}

Tensor mean_pool_masked(const Tensor& a, const std::vector<std::uint8_t>& mask) {
    Attrs attrs;
    attrs.mask = mask;
    const Tensor in[] = {a};
    return forward_primitive(Op::kMeanPoolMasked, in, attrs);
}

Tensor l1_distance(const Tensor& a, const Tensor& b) {
    const Tensor in[] = {a, b};
    return forward_primitive(Op::kL1Distance, in);
}

Tensor squared_l2(const Tensor& a, const Tensor& b) {
    const Tensor in[] = {a, b};
    return forward_primitive(Op::kSquaredL2, in);
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, negate(b)); }

Tensor stack_rows(std::span<const Tensor> rows) {
    std::vector<Tensor> as_matrices;
    as_matrices.reserve(rows.size());
    for (const auto& r : rows) {
        if (r.shape().size() != 1) throw ShapeMismatch("stack_rows expects vectors");
        as_matrices.push_back(reshape(r, {1, r.shape()[0]}));
    }
    return concat(as_matrices, 0);
}

Tensor batch_mean(std::span<const Tensor> scalars) {
    if (scalars.empty()) throw ShapeMismatch("batch_mean of empty batch");
    Tensor acc = scalars[0];
    for (std::size_t i = 1; i < scalars.size(); ++i) acc = add(acc, scalars[i]);
    return scalar_mul(acc, 1.0 / static_cast<double>(scalars.size()));
}

}  // namespace dasd
