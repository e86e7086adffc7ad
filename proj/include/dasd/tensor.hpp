#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dasd/errors.hpp"

namespace dasd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Primitive identifiers. forward_primitive dispatches on these; the
// backward pass replays the same ids in reverse over the tape.
enum class Op {
    kMatmul,
    kTranspose,
    kReshape,
    kConcat,
    kRowSelect,
    kGatherRows,
    kSliceCols,
    kDiagPart,
    kAdd,
    kMul,
    kNegate,
    kScalarMul,
    kRelu,
    kSigmoid,
    kLog,
    kExp,
    kClamp,
    kLayerNorm,
    kSoftmax,
    kL2NormalizeRows,
    kReduceSum,
    kMeanPoolMasked,
    kL1Distance,
    kSquaredL2,
};

const char* op_name(Op op);
Op op_from_name(const std::string& name);  // throws UnknownPrimitive

// Attribute bag for primitives that need more than their inputs.
struct Attrs {
    int axis = 0;                       // concat
    std::size_t index = 0;              // row_select
    std::vector<std::int32_t> indices;  // gather_rows
    std::size_t col_lo = 0;             // slice_cols
    std::size_t col_hi = 0;
    double scalar = 0.0;                // scalar_mul
    double lo = 0.0;                    // clamp
    double hi = 0.0;
    Shape target_shape;                 // reshape
    std::vector<std::uint8_t> mask;     // softmax / mean_pool_masked; empty = all valid
};

struct TensorNode {
    Shape shape;
    std::vector<double> data;  // row-major, immutable once built
    bool requires_grad = false;
    std::string name;          // non-empty only for named parameters
    std::uint64_t id = 0;
    // Filled for leaf nodes by the most recent backward() that reached them.
    std::optional<std::vector<double>> grad;
};

class GradTape;

// Value-semantics handle to an immutable node in the computation graph.
class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    const std::vector<double>& data() const { return node_->data; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    std::size_t size() const { return node_->data.size(); }
    std::uint64_t id() const { return node_->id; }
    const std::string& name() const { return node_->name; }
    bool is_scalar() const { return node_ && node_->data.size() == 1; }
    double value() const;  // NotScalar unless single element

    double at(std::size_t i) const { return node_->data[i]; }
    double at(std::size_t r, std::size_t c) const;

    // Leaf copy of the same values; carries no history and no gradient.
    Tensor detach() const;

    // Gradient recorded by the last backward() that visited this leaf.
    const std::optional<std::vector<double>>& grad() const { return node_->grad; }

    void set_name(const std::string& name) { node_->name = name; }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    friend class GradTape;
    friend Tensor forward_primitive(Op, std::span<const Tensor>, const Attrs&);
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
};

using GradMap = std::map<std::string, Tensor>;

// Tape of primitive applications in execution (= topological) order.
// One tape per training step; never shared across threads.
class GradTape {
public:
    struct Entry {
        Op op;
        Attrs attrs;
        std::vector<std::shared_ptr<TensorNode>> inputs;
        std::shared_ptr<TensorNode> output;
    };

    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

    void record(Entry entry) { entries_.push_back(std::move(entry)); }
    void clear() { entries_.clear(); }

private:
    std::vector<Entry> entries_;
};

// RAII activation; tapes nest (an inner tape shadows the outer one, ops
// recorded while it is active do not leak into the suspended tape).
class TapeScope {
public:
    explicit TapeScope(GradTape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
};

GradTape* active_tape();

// Applies one primitive. Output is recorded on the active tape when any
// input requires grad. Identical inputs give bit-identical outputs.
Tensor forward_primitive(Op op, std::span<const Tensor> inputs, const Attrs& attrs = {});

// Reverse pass from a scalar loss over the given tape. Returns gradients
// for every reachable named parameter; also deposits .grad on reachable
// leaf nodes. Gradients accumulate additively across multiple uses.
GradMap backward(const Tensor& loss, const GradTape& tape);

// Ergonomic wrappers around forward_primitive.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor row_select(const Tensor& a, std::size_t row);
Tensor gather_rows(const Tensor& table, const std::vector<std::int32_t>& indices);
Tensor slice_cols(const Tensor& a, std::size_t lo, std::size_t hi);
Tensor diag_part(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor negate(const Tensor& a);
Tensor scalar_mul(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor layer_norm(const Tensor& a);
Tensor softmax(const Tensor& a, const std::vector<std::uint8_t>& mask = {});
Tensor l2_normalize_rows(const Tensor& a);
Tensor reduce_sum(const Tensor& a);
Tensor mean_pool_masked(const Tensor& a, const std::vector<std::uint8_t>& mask);
Tensor l1_distance(const Tensor& a, const Tensor& b);
Tensor squared_l2(const Tensor& a, const Tensor& b);

Tensor sub(const Tensor& a, const Tensor& b);               // add(a, negate(b))
Tensor stack_rows(std::span<const Tensor> rows);            // B vectors -> (B x d)
Tensor batch_mean(std::span<const Tensor> scalars);         // mean of scalar tensors

constexpr double kLayerNormEpsilon = 1e-5;

}  // namespace dasd
