#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "g2l/errors.hpp"

namespace g2l {

class Graph;

enum class Op : uint8_t {
    Leaf,
    MatMul,
    Add,
    Hadamard,
    Concat,
    Stack,
    Slice,
    SumAxis,
    Scale,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softmax,
    EmbedLookup,
    HardOneHot,
};

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense real tensor, row-major, double precision. Non-leaf tensors also act
/// as nodes of the dynamic graph that produced them: they keep parent links
/// and enough op metadata for the reverse pass.
class Tensor {
  public:
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // sized lazily, only when requires_grad
    bool requires_grad = false;

    Op op = Op::Leaf;
    std::vector<TensorPtr> parents;
    int i0 = 0, i1 = 0, i2 = 0;  // axis / start / count / lookup index
    bool squeeze = false;        // Slice: drop the sliced axis
    double scalar = 0.0;         // Scale factor or Log floor
    const Graph* owner = nullptr;

    static TensorPtr leaf(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad = false);
    static TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
    static TensorPtr full(std::vector<int> shape, double value, bool requires_grad = false);
    static TensorPtr scalar_leaf(double value, bool requires_grad = false);

    int numel() const;
    bool is_scalar() const { return numel() == 1; }
    int extent(int axis) const { return shape.at(static_cast<size_t>(axis)); }
    int rank() const { return static_cast<int>(shape.size()); }

    void ensure_grad();
    void zero_grad();
    // Throws NumericError when values (or grad) hold NaN/Inf.
    void check_finite(const std::string& label) const;
};

std::string shape_str(const std::vector<int>& shape);

/// Dynamic computation tape. Primitive methods execute eagerly and record the
/// node; backward() replays the tape in exact reverse insertion order.
/// Single-threaded per instance; independent instances may run concurrently.
class Graph {
  public:
    // When false, recorded nodes never require grad (cheap inference mode).
    bool grad_enabled = true;

    // C = A·B. Accepts {m,k}x{k,n}, {m,k}x{k}, {k}x{k,n} and {k}x{k} (dot,
    // giving a {1} scalar); vector operands behave as one-row/one-column
    // matrices and the unit axis is dropped from the result.
    TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

    // Elementwise with limited broadcasting on the second operand:
    // b of shape {c} against a {r,c} (per-row), or b {1} against anything.
    TensorPtr add(const TensorPtr& a, const TensorPtr& b);
    TensorPtr hadamard(const TensorPtr& a, const TensorPtr& b);

    TensorPtr sub(const TensorPtr& a, const TensorPtr& b) { return add(a, scale(b, -1.0)); }

    TensorPtr concat(const std::vector<TensorPtr>& parts, int axis);
    // Stacks same-shape tensors along a new leading axis.
    TensorPtr stack(const std::vector<TensorPtr>& parts);

    TensorPtr slice(const TensorPtr& t, int axis, int start, int count);
    // Row i of a matrix as a vector.
    TensorPtr row(const TensorPtr& t, int i);
    // Element i of a vector as a {1} scalar.
    TensorPtr element(const TensorPtr& t, int i);

    TensorPtr sum_axis(const TensorPtr& t, int axis);
    TensorPtr sum_all(const TensorPtr& t);

    TensorPtr scale(const TensorPtr& t, double factor);
    TensorPtr tanh(const TensorPtr& t);
    TensorPtr sigmoid(const TensorPtr& t);
    TensorPtr exp(const TensorPtr& t);
    // log(max(x, floor)); the clamp keeps suppressed probability masses and
    // renormalizations of zero vectors finite. Gradient is zero below floor.
    TensorPtr log(const TensorPtr& t, double floor = 1e-10);
    TensorPtr softmax(const TensorPtr& t, int axis);
    TensorPtr embedding(const TensorPtr& table, int index);
    // Forward snaps to an exact one-hot (the argmax of the input, or the
    // given index); backward passes the incoming gradient through unchanged
    // (straight-through).
    TensorPtr hard_one_hot(const TensorPtr& soft, int index = -1);

    /// Seeds d(loss)/d(loss) = 1 and propagates through the tape in reverse
    /// insertion order. Leaf gradients accumulate across calls; intermediate
    /// node gradients are reset at the start of each call.
    void backward(const TensorPtr& loss);

    void clear();
    size_t size() const { return tape_.size(); }

  private:
    std::vector<TensorPtr> tape_;

    TensorPtr make(Op op, std::vector<int> shape, std::vector<TensorPtr> parents);
    void backward_node(Tensor& node);
};

/// Max over components of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
/// where numeric is the central finite difference of f at the given point.
/// Non-scalar outputs of f are summed to a scalar first. f must be
/// deterministic (freeze any noise it draws).
double grad_check(const std::function<TensorPtr(Graph&, const TensorPtr&)>& f,
                  const TensorPtr& point, double eps = 1e-6);

// Flat little-endian serialization: u32 rank, u32 extents, f64 values.
void write_tensor(std::ostream& os, const Tensor& t);
TensorPtr read_tensor(std::istream& is);
void write_u16(std::ostream& os, uint16_t v);
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f64(std::ostream& os, double v);
uint16_t read_u16(std::istream& is);
uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);

}  // namespace g2l
