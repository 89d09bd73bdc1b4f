#include "g2l/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace g2l {

namespace {

int shape_numel(const std::vector<int>& shape) {
    int n = 1;
    for (int e : shape) n *= e;
    return n;
}

void validate_shape(const std::vector<int>& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
    for (int e : shape) {
        if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
}

// outer x extent x inner decomposition around one axis.
struct AxisView {
    int outer, extent, inner;
};

AxisView axis_view(const std::vector<int>& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    AxisView v{1, shape[static_cast<size_t>(axis)], 1};
    for (int d = 0; d < axis; ++d) v.outer *= shape[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(axis) + 1; d < shape.size(); ++d) v.inner *= shape[d];
    return v;
}

enum class Broadcast { None, Row, Scalar };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* prim) {
    if (a.shape == b.shape) return Broadcast::None;
    if (b.numel() == 1) return Broadcast::Scalar;
    if (a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.shape[1]) return Broadcast::Row;
    throw DimensionError(std::string(prim) + ": incompatible shapes " + shape_str(a.shape) +
                         " and " + shape_str(b.shape));
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "{";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "}";
}

TensorPtr Tensor::leaf(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<int>(values.size()))
        throw DimensionError("leaf: " + std::to_string(values.size()) + " values for shape " +
                             shape_str(shape));
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values = std::move(values);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

TensorPtr Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    int n = shape_numel(shape);
    return leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), requires_grad);
}

TensorPtr Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    int n = shape_numel(shape);
    return leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), value), requires_grad);
}

TensorPtr Tensor::scalar_leaf(double value, bool requires_grad) {
    return leaf({1}, {value}, requires_grad);
}

int Tensor::numel() const {
    return shape_numel(shape);
}

void Tensor::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() {
    grad.assign(values.size(), 0.0);
}

void Tensor::check_finite(const std::string& label) const {
    for (double v : values)
        if (!std::isfinite(v)) throw NumericError("non-finite value in " + label);
    for (double v : grad)
        if (!std::isfinite(v)) throw NumericError("non-finite gradient in " + label);
}

TensorPtr Graph::make(Op op, std::vector<int> shape, std::vector<TensorPtr> parents) {
    validate_shape(shape);
    auto t = std::make_shared<Tensor>();
    t->op = op;
    t->shape = std::move(shape);
    t->values.resize(static_cast<size_t>(shape_numel(t->shape)));
    t->parents = std::move(parents);
    t->owner = this;
    if (grad_enabled) {
        for (const auto& p : t->parents) {
            if (p->requires_grad) {
                t->requires_grad = true;
                break;
            }
        }
    }
    tape_.push_back(t);
    return t;
}

TensorPtr Graph::matmul(const TensorPtr& a, const TensorPtr& b) {
    bool a_vec = a->rank() == 1;
    bool b_vec = b->rank() == 1;
    if (a->rank() > 2 || b->rank() > 2)
        throw DimensionError("matmul: rank > 2 unsupported, got " + shape_str(a->shape) + " x " +
                             shape_str(b->shape));
    int m = a_vec ? 1 : a->shape[0];
    int k = a_vec ? a->shape[0] : a->shape[1];
    int kb = b_vec ? b->shape[0] : b->shape[0];
    int n = b_vec ? 1 : b->shape[1];
    if (k != kb)
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a->shape) + " x " +
                             shape_str(b->shape));

    std::vector<int> out_shape;
    if (a_vec && b_vec) out_shape = {1};
    else if (a_vec) out_shape = {n};
    else if (b_vec) out_shape = {m};
    else out_shape = {m, n};

    auto out = make(Op::MatMul, std::move(out_shape), {a, b});
    const double* av = a->values.data();
    const double* bv = b->values.data();
    double* cv = out->values.data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += av[i * k + l] * bv[l * n + j];
            cv[i * n + j] = acc;
        }
    }
    return out;
}

TensorPtr Graph::add(const TensorPtr& a, const TensorPtr& b) {
    Broadcast bc = broadcast_mode(*a, *b, "add");
    auto out = make(Op::Add, a->shape, {a, b});
    size_t n = a->values.size();
    if (bc == Broadcast::None) {
        for (size_t i = 0; i < n; ++i) out->values[i] = a->values[i] + b->values[i];
    } else if (bc == Broadcast::Scalar) {
        double s = b->values[0];
        for (size_t i = 0; i < n; ++i) out->values[i] = a->values[i] + s;
    } else {
        size_t c = b->values.size();
        for (size_t i = 0; i < n; ++i) out->values[i] = a->values[i] + b->values[i % c];
    }
    return out;
}

TensorPtr Graph::hadamard(const TensorPtr& a, const TensorPtr& b) {
    Broadcast bc = broadcast_mode(*a, *b, "hadamard");
    auto out = make(Op::Hadamard, a->shape, {a, b});
    size_t n = a->values.size();
    if (bc == Broadcast::None) {
        for (size_t i = 0; i < n; ++i) out->values[i] = a->values[i] * b->values[i];
    } else if (bc == Broadcast::Scalar) {
        double s = b->values[0];
        for (size_t i = 0; i < n; ++i) out->values[i] = a->values[i] * s;
    } else {
        size_t c = b->values.size();
        for (size_t i = 0; i < n; ++i) out->values[i] = a->values[i] * b->values[i % c];
    }
    return out;
}

TensorPtr Graph::concat(const std::vector<TensorPtr>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const auto& first = parts.front()->shape;
    int total = 0;
    for (const auto& p : parts) {
        if (p->rank() != static_cast<int>(first.size()))
            throw DimensionError("concat: rank mismatch");
        for (int d = 0; d < p->rank(); ++d) {
            if (d != axis && p->shape[static_cast<size_t>(d)] != first[static_cast<size_t>(d)])
                throw DimensionError("concat: extent mismatch off-axis, " + shape_str(p->shape) +
                                     " vs " + shape_str(first));
        }
        total += p->extent(axis);
    }
    std::vector<int> out_shape = first;
    out_shape[static_cast<size_t>(axis)] = total;
    auto out = make(Op::Concat, out_shape, parts);
    out->i0 = axis;

    AxisView ov = axis_view(out->shape, axis);
    int offset = 0;
    for (const auto& p : parts) {
        AxisView pv = axis_view(p->shape, axis);
        for (int o = 0; o < pv.outer; ++o) {
            const double* src = p->values.data() + static_cast<size_t>(o) * pv.extent * pv.inner;
            double* dst = out->values.data() +
                          (static_cast<size_t>(o) * ov.extent + offset) * ov.inner;
            std::memcpy(dst, src, sizeof(double) * static_cast<size_t>(pv.extent) * pv.inner);
        }
        offset += pv.extent;
    }
    return out;
}

TensorPtr Graph::stack(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw ContractError("stack: no inputs");
    const auto& first = parts.front()->shape;
    for (const auto& p : parts)
        if (p->shape != first) throw DimensionError("stack: inputs must share a shape");
    std::vector<int> out_shape;
    out_shape.push_back(static_cast<int>(parts.size()));
    out_shape.insert(out_shape.end(), first.begin(), first.end());
    auto out = make(Op::Stack, std::move(out_shape), parts);
    size_t block = parts.front()->values.size();
    for (size_t p = 0; p < parts.size(); ++p)
        std::memcpy(out->values.data() + p * block, parts[p]->values.data(),
                    sizeof(double) * block);
    return out;
}

TensorPtr Graph::slice(const TensorPtr& t, int axis, int start, int count) {
    AxisView v = axis_view(t->shape, axis);
    if (start < 0 || count < 1 || start + count > v.extent)
        throw DimensionError("slice: range [" + std::to_string(start) + "," +
                             std::to_string(start + count) + ") outside extent " +
                             std::to_string(v.extent));
    std::vector<int> out_shape = t->shape;
    out_shape[static_cast<size_t>(axis)] = count;
    auto out = make(Op::Slice, out_shape, {t});
    out->i0 = axis;
    out->i1 = start;
    out->i2 = count;
    for (int o = 0; o < v.outer; ++o) {
        const double* src =
            t->values.data() + (static_cast<size_t>(o) * v.extent + start) * v.inner;
        double* dst = out->values.data() + static_cast<size_t>(o) * count * v.inner;
        std::memcpy(dst, src, sizeof(double) * static_cast<size_t>(count) * v.inner);
    }
    return out;
}

TensorPtr Graph::row(const TensorPtr& t, int i) {
    if (t->rank() != 2) throw DimensionError("row: expected a matrix, got " + shape_str(t->shape));
    auto out = slice(t, 0, i, 1);
    out->shape = {t->shape[1]};
    out->squeeze = true;
    return out;
}

TensorPtr Graph::element(const TensorPtr& t, int i) {
    if (t->rank() != 1)
        throw DimensionError("element: expected a vector, got " + shape_str(t->shape));
    return slice(t, 0, i, 1);
}

TensorPtr Graph::sum_axis(const TensorPtr& t, int axis) {
    AxisView v = axis_view(t->shape, axis);
    std::vector<int> out_shape;
    for (int d = 0; d < t->rank(); ++d)
        if (d != axis) out_shape.push_back(t->shape[static_cast<size_t>(d)]);
    if (out_shape.empty()) out_shape = {1};
    auto out = make(Op::SumAxis, std::move(out_shape), {t});
    out->i0 = axis;
    for (int o = 0; o < v.outer; ++o) {
        for (int i = 0; i < v.inner; ++i) {
            double acc = 0.0;
            for (int j = 0; j < v.extent; ++j)
                acc += t->values[(static_cast<size_t>(o) * v.extent + j) * v.inner + i];
            out->values[static_cast<size_t>(o) * v.inner + i] = acc;
        }
    }
    return out;
}

TensorPtr Graph::sum_all(const TensorPtr& t) {
    auto out = make(Op::SumAxis, {1}, {t});
    out->i0 = -1;
    double acc = 0.0;
    for (double v : t->values) acc += v;
    out->values[0] = acc;
    return out;
}

TensorPtr Graph::scale(const TensorPtr& t, double factor) {
    auto out = make(Op::Scale, t->shape, {t});
    out->scalar = factor;
    for (size_t i = 0; i < t->values.size(); ++i) out->values[i] = factor * t->values[i];
    return out;
}

TensorPtr Graph::tanh(const TensorPtr& t) {
    auto out = make(Op::Tanh, t->shape, {t});
    for (size_t i = 0; i < t->values.size(); ++i) out->values[i] = std::tanh(t->values[i]);
    return out;
}

TensorPtr Graph::sigmoid(const TensorPtr& t) {
    auto out = make(Op::Sigmoid, t->shape, {t});
    for (size_t i = 0; i < t->values.size(); ++i)
        out->values[i] = 1.0 / (1.0 + std::exp(-t->values[i]));
    return out;
}

TensorPtr Graph::exp(const TensorPtr& t) {
    auto out = make(Op::Exp, t->shape, {t});
    for (size_t i = 0; i < t->values.size(); ++i) out->values[i] = std::exp(t->values[i]);
    return out;
}

TensorPtr Graph::log(const TensorPtr& t, double floor) {
    if (floor <= 0.0) throw ContractError("log: floor must be positive");
    auto out = make(Op::Log, t->shape, {t});
    out->scalar = floor;
    for (size_t i = 0; i < t->values.size(); ++i)
        out->values[i] = std::log(std::max(t->values[i], floor));
    return out;
}

TensorPtr Graph::softmax(const TensorPtr& t, int axis) {
    AxisView v = axis_view(t->shape, axis);
    auto out = make(Op::Softmax, t->shape, {t});
    out->i0 = axis;
    for (int o = 0; o < v.outer; ++o) {
        for (int i = 0; i < v.inner; ++i) {
            auto at = [&](int j) {
                return (static_cast<size_t>(o) * v.extent + j) * v.inner + i;
            };
            double m = t->values[at(0)];
            for (int j = 1; j < v.extent; ++j) m = std::max(m, t->values[at(j)]);
            double sum = 0.0;
            for (int j = 0; j < v.extent; ++j) {
                double e = std::exp(t->values[at(j)] - m);
                out->values[at(j)] = e;
                sum += e;
            }
            for (int j = 0; j < v.extent; ++j) out->values[at(j)] /= sum;
        }
    }
    return out;
}

TensorPtr Graph::embedding(const TensorPtr& table, int index) {
    if (table->rank() != 2)
        throw DimensionError("embedding: table must be a matrix, got " + shape_str(table->shape));
    if (index < 0 || index >= table->shape[0])
        throw VocabError("embedding: index " + std::to_string(index) + " outside table of " +
                         std::to_string(table->shape[0]) + " rows");
    auto out = make(Op::EmbedLookup, {table->shape[1]}, {table});
    out->i0 = index;
    const double* src = table->values.data() + static_cast<size_t>(index) * table->shape[1];
    std::copy(src, src + table->shape[1], out->values.begin());
    return out;
}

TensorPtr Graph::hard_one_hot(const TensorPtr& soft, int index) {
    if (soft->rank() != 1)
        throw DimensionError("hard_one_hot: expected a vector, got " + shape_str(soft->shape));
    size_t best = 0;
    if (index >= 0) {
        if (index >= soft->shape[0]) throw DimensionError("hard_one_hot: index out of range");
        best = static_cast<size_t>(index);
    } else {
        for (size_t i = 1; i < soft->values.size(); ++i)
            if (soft->values[i] > soft->values[best]) best = i;
    }
    auto out = make(Op::HardOneHot, soft->shape, {soft});
    out->i0 = static_cast<int>(best);
    std::fill(out->values.begin(), out->values.end(), 0.0);
    out->values[best] = 1.0;
    return out;
}

void Graph::backward(const TensorPtr& loss) {
    if (!loss || loss->owner != this)
        throw ContractError("backward: loss was not produced by this graph");
    if (!loss->is_scalar())
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss->shape));
    if (!loss->requires_grad)
        throw ContractError("backward: loss does not depend on any differentiable tensor");
    for (auto& n : tape_)
        if (n->requires_grad) n->grad.assign(n->values.size(), 0.0);
    loss->grad[0] = 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        if ((*it)->requires_grad && (*it)->op != Op::Leaf) backward_node(**it);
    }
}

void Graph::backward_node(Tensor& node) {
    auto& ps = node.parents;
    auto want = [](const TensorPtr& p) { return p->requires_grad; };
    for (auto& p : ps)
        if (p->requires_grad) p->ensure_grad();

    switch (node.op) {
        case Op::MatMul: {
            const Tensor& a = *ps[0];
            const Tensor& b = *ps[1];
            bool a_vec = a.rank() == 1;
            bool b_vec = b.rank() == 1;
            int m = a_vec ? 1 : a.shape[0];
            int k = a_vec ? a.shape[0] : a.shape[1];
            int n = b_vec ? 1 : b.shape[1];
            const double* dv = node.grad.data();
            if (want(ps[0])) {
                double* da = ps[0]->grad.data();
                const double* bv = b.values.data();
                for (int i = 0; i < m; ++i)
                    for (int l = 0; l < k; ++l) {
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += dv[i * n + j] * bv[l * n + j];
                        da[i * k + l] += acc;
                    }
            }
            if (want(ps[1])) {
                double* db = ps[1]->grad.data();
                const double* av = a.values.data();
                for (int l = 0; l < k; ++l)
                    for (int j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < m; ++i) acc += av[i * k + l] * dv[i * n + j];
                        db[l * n + j] += acc;
                    }
            }
            break;
        }
        case Op::Add: {
            Broadcast bc = broadcast_mode(*ps[0], *ps[1], "add");
            size_t n = node.values.size();
            if (want(ps[0])) {
                double* da = ps[0]->grad.data();
                for (size_t i = 0; i < n; ++i) da[i] += node.grad[i];
            }
            if (want(ps[1])) {
                double* db = ps[1]->grad.data();
                if (bc == Broadcast::None) {
                    for (size_t i = 0; i < n; ++i) db[i] += node.grad[i];
                } else if (bc == Broadcast::Scalar) {
                    double acc = 0.0;
                    for (size_t i = 0; i < n; ++i) acc += node.grad[i];
                    db[0] += acc;
                } else {
                    size_t c = ps[1]->values.size();
                    for (size_t i = 0; i < n; ++i) db[i % c] += node.grad[i];
                }
            }
            break;
        }
        case Op::Hadamard: {
            Broadcast bc = broadcast_mode(*ps[0], *ps[1], "hadamard");
            size_t n = node.values.size();
            const double* av = ps[0]->values.data();
            const double* bv = ps[1]->values.data();
            if (want(ps[0])) {
                double* da = ps[0]->grad.data();
                if (bc == Broadcast::None)
                    for (size_t i = 0; i < n; ++i) da[i] += node.grad[i] * bv[i];
                else if (bc == Broadcast::Scalar)
                    for (size_t i = 0; i < n; ++i) da[i] += node.grad[i] * bv[0];
                else {
                    size_t c = ps[1]->values.size();
                    for (size_t i = 0; i < n; ++i) da[i] += node.grad[i] * bv[i % c];
                }
            }
            if (want(ps[1])) {
                double* db = ps[1]->grad.data();
                if (bc == Broadcast::None)
                    for (size_t i = 0; i < n; ++i) db[i] += node.grad[i] * av[i];
                else if (bc == Broadcast::Scalar) {
                    double acc = 0.0;
                    for (size_t i = 0; i < n; ++i) acc += node.grad[i] * av[i];
                    db[0] += acc;
                } else {
                    size_t c = ps[1]->values.size();
                    for (size_t i = 0; i < n; ++i) db[i % c] += node.grad[i] * av[i];
                }
            }
            break;
        }
        case Op::Concat: {
            int axis = node.i0;
            AxisView ov = axis_view(node.shape, axis);
            int offset = 0;
            for (auto& p : ps) {
                AxisView pv = axis_view(p->shape, axis);
                if (want(p)) {
                    for (int o = 0; o < pv.outer; ++o) {
                        const double* src = node.grad.data() +
                                            (static_cast<size_t>(o) * ov.extent + offset) * ov.inner;
                        double* dst = p->grad.data() +
                                      static_cast<size_t>(o) * pv.extent * pv.inner;
                        for (int i = 0; i < pv.extent * pv.inner; ++i) dst[i] += src[i];
                    }
                }
                offset += pv.extent;
            }
            break;
        }
        case Op::Stack: {
            size_t block = ps.front()->values.size();
            for (size_t p = 0; p < ps.size(); ++p) {
                if (!want(ps[p])) continue;
                const double* src = node.grad.data() + p * block;
                double* dst = ps[p]->grad.data();
                for (size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
            break;
        }
        case Op::Slice: {
            if (!want(ps[0])) break;
            AxisView v = axis_view(ps[0]->shape, node.i0);
            int start = node.i1, count = node.i2;
            for (int o = 0; o < v.outer; ++o) {
                const double* src = node.grad.data() + static_cast<size_t>(o) * count * v.inner;
                double* dst =
                    ps[0]->grad.data() + (static_cast<size_t>(o) * v.extent + start) * v.inner;
                for (int i = 0; i < count * v.inner; ++i) dst[i] += src[i];
            }
            break;
        }
        case Op::SumAxis: {
            if (!want(ps[0])) break;
            double* dp = ps[0]->grad.data();
            if (node.i0 < 0) {
                double g = node.grad[0];
                for (size_t i = 0; i < ps[0]->values.size(); ++i) dp[i] += g;
            } else {
                AxisView v = axis_view(ps[0]->shape, node.i0);
                for (int o = 0; o < v.outer; ++o)
                    for (int j = 0; j < v.extent; ++j)
                        for (int i = 0; i < v.inner; ++i)
                            dp[(static_cast<size_t>(o) * v.extent + j) * v.inner + i] +=
                                node.grad[static_cast<size_t>(o) * v.inner + i];
            }
            break;
        }
        case Op::Scale: {
            if (!want(ps[0])) break;
            double* dp = ps[0]->grad.data();
            for (size_t i = 0; i < node.grad.size(); ++i) dp[i] += node.scalar * node.grad[i];
            break;
        }
        case Op::Tanh: {
            if (!want(ps[0])) break;
            double* dp = ps[0]->grad.data();
            for (size_t i = 0; i < node.grad.size(); ++i)
                dp[i] += node.grad[i] * (1.0 - node.values[i] * node.values[i]);
            break;
        }
        case Op::Sigmoid: {
            if (!want(ps[0])) break;
            double* dp = ps[0]->grad.data();
            for (size_t i = 0; i < node.grad.size(); ++i)
                dp[i] += node.grad[i] * node.values[i] * (1.0 - node.values[i]);
            break;
        }
        case Op::Exp: {
            if (!want(ps[0])) break;
            double* dp = ps[0]->grad.data();
            for (size_t i = 0; i < node.grad.size(); ++i) dp[i] += node.grad[i] * node.values[i];
            break;
        }
        case Op::Log: {
            if (!want(ps[0])) break;
            double* dp = ps[0]->grad.data();
            const double* x = ps[0]->values.data();
            for (size_t i = 0; i < node.grad.size(); ++i)
                if (x[i] > node.scalar) dp[i] += node.grad[i] / x[i];
            break;
        }
        case Op::Softmax: {
            if (!want(ps[0])) break;
            AxisView v = axis_view(node.shape, node.i0);
            double* dp = ps[0]->grad.data();
            for (int o = 0; o < v.outer; ++o) {
                for (int i = 0; i < v.inner; ++i) {
                    auto at = [&](int j) {
                        return (static_cast<size_t>(o) * v.extent + j) * v.inner + i;
                    };
                    double dot = 0.0;
                    for (int j = 0; j < v.extent; ++j) dot += node.grad[at(j)] * node.values[at(j)];
                    for (int j = 0; j < v.extent; ++j)
                        dp[at(j)] += node.values[at(j)] * (node.grad[at(j)] - dot);
                }
            }
            break;
        }
        case Op::EmbedLookup: {
            if (!want(ps[0])) break;
            int cols = ps[0]->shape[1];
            double* dst = ps[0]->grad.data() + static_cast<size_t>(node.i0) * cols;
            for (int i = 0; i < cols; ++i) dst[i] += node.grad[static_cast<size_t>(i)];
            break;
        }
        case Op::HardOneHot: {
            if (!want(ps[0])) break;
            double* dp = ps[0]->grad.data();
            for (size_t i = 0; i < node.grad.size(); ++i) dp[i] += node.grad[i];
            break;
        }
        case Op::Leaf:
            break;
    }
}

void Graph::clear() {
    tape_.clear();
}

double grad_check(const std::function<TensorPtr(Graph&, const TensorPtr&)>& f,
                  const TensorPtr& point, double eps) {
    point->requires_grad = true;
    point->zero_grad();
    std::vector<double> analytic;
    {
        Graph g;
        auto out = f(g, point);
        if (!out->is_scalar()) out = g.sum_all(out);
        g.backward(out);
        analytic = point->grad;
    }
    auto eval = [&]() {
        Graph g;
        g.grad_enabled = false;
        auto out = f(g, point);
        double acc = 0.0;
        for (double v : out->values) acc += v;
        if (!std::isfinite(acc)) throw NumericError("grad_check: non-finite function value");
        return acc;
    };
    double max_err = 0.0;
    for (size_t i = 0; i < point->values.size(); ++i) {
        double saved = point->values[i];
        point->values[i] = saved + eps;
        double fp = eval();
        point->values[i] = saved - eps;
        double fm = eval();
        point->values[i] = saved;
        double numeric = (fp - fm) / (2.0 * eps);
        double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        max_err = std::max(max_err, std::fabs(analytic[i] - numeric) / denom);
    }
    return max_err;
}

namespace {
void write_bytes_le(std::ostream& os, uint64_t v, int nbytes) {
    char buf[8];
    for (int i = 0; i < nbytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf, nbytes);
}

uint64_t read_bytes_le(std::istream& is, int nbytes) {
    char buf[8];
    is.read(buf, nbytes);
    if (is.gcount() != nbytes) throw ParseError("unexpected end of stream");
    uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i)
        v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
}
}  // namespace

void write_u16(std::ostream& os, uint16_t v) { write_bytes_le(os, v, 2); }
void write_u32(std::ostream& os, uint32_t v) { write_bytes_le(os, v, 4); }
void write_u64(std::ostream& os, uint64_t v) { write_bytes_le(os, v, 8); }
void write_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    write_bytes_le(os, bits, 8);
}
uint16_t read_u16(std::istream& is) { return static_cast<uint16_t>(read_bytes_le(is, 2)); }
uint32_t read_u32(std::istream& is) { return static_cast<uint32_t>(read_bytes_le(is, 4)); }
uint64_t read_u64(std::istream& is) { return read_bytes_le(is, 8); }
double read_f64(std::istream& is) {
    uint64_t bits = read_bytes_le(is, 8);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

void write_tensor(std::ostream& os, const Tensor& t) {
    write_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int e : t.shape) write_u32(os, static_cast<uint32_t>(e));
    for (double v : t.values) write_f64(os, v);
}

TensorPtr read_tensor(std::istream& is) {
    uint32_t rank = read_u32(is);
    if (rank == 0 || rank > 8) throw ParseError("tensor header: bad rank " + std::to_string(rank));
    std::vector<int> shape(rank);
    int64_t n = 1;
    for (auto& e : shape) {
        e = static_cast<int>(read_u32(is));
        if (e <= 0) throw ParseError("tensor header: bad extent");
        n *= e;
        if (n > (int64_t{1} << 32)) throw ParseError("tensor header: implausible size");
    }
    std::vector<double> values(static_cast<size_t>(n));
    for (auto& v : values) v = read_f64(is);
    return Tensor::leaf(std::move(shape), std::move(values));
}

}  // namespace g2l
