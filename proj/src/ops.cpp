#include "pvcd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pvcd {

using detail::Node;

namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (!GradMode::enabled()) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    if (tracking(inputs)) {
        node->requires_grad = true;
        for (const Tensor* t : inputs) {
            // Undefined optional inputs keep their slot so backward indices stay fixed.
            node->inputs.push_back(t->defined() ? t->node() : std::make_shared<Node>());
        }
        node->backward_fn = std::move(backward);
    }
    return Tensor(std::move(node));
}

Tensor make_result(Shape shape, std::vector<double> value, const char* op, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    bool track = false;
    if (GradMode::enabled()) {
        for (const auto& t : inputs) track = track || t.requires_grad();
    }
    if (track) {
        node->requires_grad = true;
        for (const auto& t : inputs) node->inputs.push_back(t.node());
        node->backward_fn = std::move(backward);
    }
    return Tensor(std::move(node));
}

// Returns the gradient buffer of input `i` or nullptr when it needs none.
double* input_grad(Node& self, std::size_t i) {
    Node& in = *self.inputs[i];
    if (!in.requires_grad) return nullptr;
    return in.ensure_grad().data();
}

// ---------------------------------------------------------------------------
// Broadcasting

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// For every flat index of `out`, the flat index into a tensor of shape `in`
// that broadcasts onto it.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
    const std::size_t rank = out.size();
    const std::size_t offset = rank - in.size();
    std::vector<std::size_t> stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t i = rank; i-- > offset;) {
        const std::size_t d = in[i - offset];
        stride[i] = d == 1 ? 0 : s;
        s *= d;
    }
    const std::size_t n = shape_numel(out);
    std::vector<std::size_t> index(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t flat = 0;
    for (std::size_t i = 0; i < n; ++i) {
        index[i] = flat;
        for (std::size_t d = rank; d-- > 0;) {
            ++counter[d];
            flat += stride[d];
            if (counter[d] < out[d]) break;
            flat -= stride[d] * counter[d];
            counter[d] = 0;
        }
    }
    return index;
}

bool is_trailing(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

// Index plan shared between forward and backward of a broadcast binary op.
struct BroadcastPlan {
    Shape out;
    std::size_t na = 0, nb = 0;
    // Empty when the cheap modulo mapping applies.
    std::vector<std::size_t> ia, ib;

    std::size_t a_index(std::size_t i) const { return ia.empty() ? i % na : ia[i]; }
    std::size_t b_index(std::size_t i) const { return ib.empty() ? i % nb : ib[i]; }
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    plan.out = broadcast_shape(a, b);
    plan.na = shape_numel(a);
    plan.nb = shape_numel(b);
    if (!is_trailing(a, plan.out)) plan.ia = broadcast_index(a, plan.out);
    if (!is_trailing(b, plan.out)) plan.ib = broadcast_index(b, plan.out);
    return plan;
}

template <class Fwd, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
    const std::size_t n = shape_numel(plan->out);
    std::vector<double> out(n);
    const auto av = a.data();
    const auto bv = b.data();
    if (plan->ia.empty() && plan->ib.empty() && plan->na == n && plan->nb == n) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[plan->a_index(i)], bv[plan->b_index(i)]);
    }
    return make_result(plan->out, std::move(out), name, {&a, &b}, [plan, da, db](Node& self) {
        const auto& x = self.inputs[0]->value;
        const auto& y = self.inputs[1]->value;
        double* ga = input_grad(self, 0);
        double* gb = input_grad(self, 1);
        const auto& g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t ai = plan->a_index(i);
            const std::size_t bi = plan->b_index(i);
            if (ga) ga[ai] += g[i] * da(x[ai], y[bi]);
            if (gb) gb[bi] += g[i] * db(x[ai], y[bi]);
        }
    });
}

template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    return make_result(a.shape(), std::move(out), name, {&a}, [deriv](Node& self) {
        const auto& x = self.inputs[0]->value;
        double* ga = input_grad(self, 0);
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * deriv(x[i], self.value[i]);
    });
}

// ---------------------------------------------------------------------------
// GEMM kernels on row-major buffers

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// A[m,k] += G[m,n] B[k,n]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* g, const double* b, double* a) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            arow[p] += acc;
        }
    }
}

// B[k,n] += A[m,k]^T G[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* g, double* b) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
    }
}

// Per-batch flat offsets (in units of whole matrices) of each matmul operand.
struct BatchMap {
    std::vector<std::size_t> a_batch, b_batch;
};

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
    return unary_op(
        a, "scale", [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary_op(
        a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary_op(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
    return unary_op(
        a, "gelu",
        [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
        [](double x, double) {
            const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
    const auto av = a.data();
    const double total = std::accumulate(av.begin(), av.end(), 0.0);
    return make_result({1}, {total}, "sum", {&a}, [](Node& self) {
        double* ga = input_grad(self, 0);
        const double g = self.grad[0];
        for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) ga[i] += g;
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum(const Tensor& a, int axis, bool keepdim) {
    const std::size_t ax = normalize_axis(axis, a.rank());
    const Shape& s = a.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[ax];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != ax) out_shape.push_back(s[i]);
        else if (keepdim) out_shape.push_back(1);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    const auto av = a.data();
    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
            const double* src = av.data() + (o * len + l) * inner;
            double* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    return make_result(std::move(out_shape), std::move(out), "sum_axis", {&a}, [outer, inner, len](Node& self) {
        double* ga = input_grad(self, 0);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t l = 0; l < len; ++l) {
                double* dst = ga + (o * len + l) * inner;
                const double* src = self.grad.data() + o * inner;
                for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Matrix products

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    if (b.dim(-2) != k) {
        throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const Shape a_lead(a.shape().begin(), a.shape().end() - 2);
    const Shape b_lead(b.shape().begin(), b.shape().end() - 2);
    const Shape lead = broadcast_shape(a_lead, b_lead);
    const std::size_t batches = shape_numel(lead);

    auto map = std::make_shared<BatchMap>();
    map->a_batch = broadcast_index(a_lead.empty() ? Shape{1} : a_lead, lead.empty() ? Shape{1} : lead);
    map->b_batch = broadcast_index(b_lead.empty() ? Shape{1} : b_lead, lead.empty() ? Shape{1} : lead);

    Shape out_shape = lead;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<double> out(batches * m * n, 0.0);
    const double* av = a.data().data();
    const double* bv = b.data().data();
    if (b_lead.empty() || shape_numel(b_lead) == 1) {
        // b is shared by every batch: fold batches into rows.
        if (a_lead.size() == lead.size() && shape_numel(a_lead) == batches) {
            gemm_nn(batches * m, k, n, av, bv, out.data());
        } else {
            for (std::size_t t = 0; t < batches; ++t) {
                gemm_nn(m, k, n, av + map->a_batch[t] * m * k, bv, out.data() + t * m * n);
            }
        }
    } else {
        for (std::size_t t = 0; t < batches; ++t) {
            gemm_nn(m, k, n, av + map->a_batch[t] * m * k, bv + map->b_batch[t] * k * n, out.data() + t * m * n);
        }
    }
    return make_result(std::move(out_shape), std::move(out), "matmul", {&a, &b}, [map, m, k, n, batches](Node& self) {
        const double* x = self.inputs[0]->value.data();
        const double* y = self.inputs[1]->value.data();
        double* ga = input_grad(self, 0);
        double* gb = input_grad(self, 1);
        const double* g = self.grad.data();
        for (std::size_t t = 0; t < batches; ++t) {
            const std::size_t ao = map->a_batch[t] * m * k;
            const std::size_t bo = map->b_batch[t] * k * n;
            if (ga) gemm_nt(m, k, n, g + t * m * n, y + bo, ga + ao);
            if (gb) gemm_tn(m, k, n, x + ao, g + t * m * n, gb + bo);
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || x.dim(-1) != weight.dim(0)) {
        throw ShapeError("linear shape mismatch: input " + shape_str(x.shape()) + " weight " +
                         shape_str(weight.shape()));
    }
    const std::size_t in = weight.dim(0), out_dim = weight.dim(1);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
        throw ShapeError("linear bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
    }
    const std::size_t rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    std::vector<double> out(rows * out_dim, 0.0);
    gemm_nn(rows, in, out_dim, x.data().data(), weight.data().data(), out.data());
    if (bias.defined()) {
        const auto bv = bias.data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bv[j];
        }
    }
    return make_result(std::move(out_shape), std::move(out), "linear", {&x, &weight, &bias},
                       [rows, in, out_dim](Node& self) {
                           const double* xv = self.inputs[0]->value.data();
                           const double* wv = self.inputs[1]->value.data();
                           const double* g = self.grad.data();
                           if (double* gx = input_grad(self, 0)) gemm_nt(rows, in, out_dim, g, wv, gx);
                           if (double* gw = input_grad(self, 1)) gemm_tn(rows, in, out_dim, xv, g, gw);
                           if (double* gbias = input_grad(self, 2)) {
                               for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t j = 0; j < out_dim; ++j) gbias[j] += g[r * out_dim + j];
                               }
                           }
                       });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    return make_result(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()), "reshape", {&a},
                       [](Node& self) {
                           double* ga = input_grad(self, 0);
                           for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
                       });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
    const Shape& s = a.shape();
    if (order.size() != s.size()) throw ShapeError("permute order rank mismatch for " + shape_str(s));
    std::vector<bool> seen(s.size(), false);
    for (auto o : order) {
        if (o >= s.size() || seen[o]) throw ShapeError("permute order is not a permutation");
        seen[o] = true;
    }
    std::vector<std::size_t> in_stride(s.size());
    std::size_t st = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        in_stride[i] = st;
        st *= s[i];
    }
    Shape out_shape(s.size());
    std::vector<std::size_t> stride(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        out_shape[i] = s[order[i]];
        stride[i] = in_stride[order[i]];
    }
    const std::size_t n = a.numel();
    auto index = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> counter(s.size(), 0);
    std::size_t flat = 0;
    for (std::size_t i = 0; i < n; ++i) {
        (*index)[i] = flat;
        for (std::size_t d = s.size(); d-- > 0;) {
            ++counter[d];
            flat += stride[d];
            if (counter[d] < out_shape[d]) break;
            flat -= stride[d] * counter[d];
            counter[d] = 0;
        }
    }
    const auto av = a.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = av[(*index)[i]];
    return make_result(std::move(out_shape), std::move(out), "permute", {&a}, [index](Node& self) {
        double* ga = input_grad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[(*index)[i]] += self.grad[i];
    });
}

Tensor transpose(const Tensor& a, int axis0, int axis1) {
    std::vector<std::size_t> order(a.rank());
    std::iota(order.begin(), order.end(), 0);
    std::swap(order[normalize_axis(axis0, a.rank())], order[normalize_axis(axis1, a.rank())]);
    return permute(a, order);
}

Tensor expand(const Tensor& a, Shape shape) {
    if (broadcast_shape(a.shape(), shape) != shape) {
        throw ShapeError("cannot expand " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    auto index = std::make_shared<std::vector<std::size_t>>(broadcast_index(a.shape(), shape));
    const auto av = a.data();
    std::vector<double> out(index->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[(*index)[i]];
    return make_result(std::move(shape), std::move(out), "expand", {&a}, [index](Node& self) {
        double* ga = input_grad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[(*index)[i]] += self.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const std::size_t ax = normalize_axis(axis, parts[0].rank());
    Shape out_shape = parts[0].shape();
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == out_shape.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == parts[0].shape()[i];
        if (!ok) {
            throw ShapeError("concat shape mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(s));
        }
        out_shape[ax] += s[ax];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= out_shape[i];
    for (std::size_t i = ax + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
    auto widths = std::make_shared<std::vector<std::size_t>>();
    for (const auto& p : parts) widths->push_back(p.shape()[ax] * inner);
    const std::size_t row = out_shape[ax] * inner;
    std::vector<double> out(outer * row);
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto pv = parts[k].data();
        const std::size_t w = (*widths)[k];
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy(pv.begin() + o * w, pv.begin() + (o + 1) * w, out.begin() + o * row + col);
        }
        col += w;
    }
    return make_result(std::move(out_shape), std::move(out), "concat", parts, [widths, outer, row](Node& self) {
        std::size_t c = 0;
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            const std::size_t w = (*widths)[k];
            if (double* g = input_grad(self, k)) {
                for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t j = 0; j < w; ++j) g[o * w + j] += self.grad[o * row + c + j];
                }
            }
            c += w;
        }
    });
}

Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length) {
    const std::size_t ax = normalize_axis(axis, a.rank());
    const Shape& s = a.shape();
    if (length == 0 || start + length > s[ax]) {
        throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis of size " + std::to_string(s[ax]));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    Shape out_shape = s;
    out_shape[ax] = length;
    const std::size_t row = s[ax] * inner;
    const std::size_t w = length * inner;
    const std::size_t off = start * inner;
    const auto av = a.data();
    std::vector<double> out(outer * w);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy(av.begin() + o * row + off, av.begin() + o * row + off + w, out.begin() + o * w);
    }
    return make_result(std::move(out_shape), std::move(out), "slice", {&a}, [outer, row, w, off](Node& self) {
        double* ga = input_grad(self, 0);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t j = 0; j < w; ++j) ga[o * row + off + j] += self.grad[o * w + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

struct AxisLayout {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& s, std::size_t ax) {
    AxisLayout l;
    for (std::size_t i = 0; i < ax; ++i) l.outer *= s[i];
    l.len = s[ax];
    for (std::size_t i = ax + 1; i < s.size(); ++i) l.inner *= s[i];
    return l;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    const auto l = axis_layout(a.shape(), normalize_axis(axis, a.rank()));
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            const std::size_t base = o * l.len * l.inner + i;
            double mx = av[base];
            for (std::size_t k = 1; k < l.len; ++k) mx = std::max(mx, av[base + k * l.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < l.len; ++k) {
                const double e = std::exp(av[base + k * l.inner] - mx);
                out[base + k * l.inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < l.len; ++k) out[base + k * l.inner] /= z;
        }
    }
    return make_result(a.shape(), std::move(out), "softmax", {&a}, [l](Node& self) {
        double* ga = input_grad(self, 0);
        const auto& y = self.value;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < l.outer; ++o) {
            for (std::size_t i = 0; i < l.inner; ++i) {
                const std::size_t base = o * l.len * l.inner + i;
                double dot = 0.0;
                for (std::size_t k = 0; k < l.len; ++k) dot += g[base + k * l.inner] * y[base + k * l.inner];
                for (std::size_t k = 0; k < l.len; ++k) {
                    const std::size_t idx = base + k * l.inner;
                    ga[idx] += y[idx] * (g[idx] - dot);
                }
            }
        }
    });
}

Tensor log_softmax(const Tensor& a, int axis) {
    const auto l = axis_layout(a.shape(), normalize_axis(axis, a.rank()));
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            const std::size_t base = o * l.len * l.inner + i;
            double mx = av[base];
            for (std::size_t k = 1; k < l.len; ++k) mx = std::max(mx, av[base + k * l.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < l.len; ++k) z += std::exp(av[base + k * l.inner] - mx);
            const double lse = mx + std::log(z);
            for (std::size_t k = 0; k < l.len; ++k) out[base + k * l.inner] = av[base + k * l.inner] - lse;
        }
    }
    return make_result(a.shape(), std::move(out), "log_softmax", {&a}, [l](Node& self) {
        double* ga = input_grad(self, 0);
        const auto& y = self.value;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < l.outer; ++o) {
            for (std::size_t i = 0; i < l.inner; ++i) {
                const std::size_t base = o * l.len * l.inner + i;
                double total = 0.0;
                for (std::size_t k = 0; k < l.len; ++k) total += g[base + k * l.inner];
                for (std::size_t k = 0; k < l.len; ++k) {
                    const std::size_t idx = base + k * l.inner;
                    ga[idx] += g[idx] - std::exp(y[idx]) * total;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Normalization

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t d = x.dim(-1);
    if (gamma.numel() != d || beta.numel() != d) {
        throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " vs gamma " + shape_str(gamma.shape()) +
                         " / beta " + shape_str(beta.shape()));
    }
    const std::size_t rows = x.numel() / d;
    const auto xv = x.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mu) * rs;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return make_result(x.shape(), std::move(out), "layer_norm", {&x, &gamma, &beta},
                       [xhat, rstd, rows, d](Node& self) {
                           const auto& g = self.grad;
                           const auto& gam = self.inputs[1]->value;
                           double* gx = input_grad(self, 0);
                           double* ggam = input_grad(self, 1);
                           double* gbet = input_grad(self, 2);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* h = xhat->data() + r * d;
                               const double* gr = g.data() + r * d;
                               if (ggam || gbet) {
                                   for (std::size_t j = 0; j < d; ++j) {
                                       if (ggam) ggam[j] += gr[j] * h[j];
                                       if (gbet) gbet[j] += gr[j];
                                   }
                               }
                               if (gx) {
                                   double m1 = 0.0, m2 = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double dh = gr[j] * gam[j];
                                       m1 += dh;
                                       m2 += dh * h[j];
                                   }
                                   m1 /= static_cast<double>(d);
                                   m2 /= static_cast<double>(d);
                                   const double rs = (*rstd)[r];
                                   for (std::size_t j = 0; j < d; ++j) {
                                       gx[r * d + j] += rs * (gr[j] * gam[j] - m1 - h[j] * m2);
                                   }
                               }
                           }
                       });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() != 3) throw ShapeError("group_norm expects [C,H,W], got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0);
    if (gamma.numel() != c || beta.numel() != c) {
        throw ShapeError("group_norm: input " + shape_str(x.shape()) + " vs gamma " + shape_str(gamma.shape()));
    }
    const std::size_t plane = x.dim(1) * x.dim(2);
    const std::size_t n = x.numel();
    const auto xv = x.data();
    double mu = 0.0;
    for (double v : xv) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xv) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    auto xhat = std::make_shared<std::vector<double>>(n);
    std::vector<double> out(n);
    const auto gv = gamma.data();
    const auto bv = beta.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t idx = ch * plane + i;
            const double h = (xv[idx] - mu) * rs;
            (*xhat)[idx] = h;
            out[idx] = h * gv[ch] + bv[ch];
        }
    }
    return make_result(x.shape(), std::move(out), "group_norm", {&x, &gamma, &beta},
                       [xhat, rs, c, plane](Node& self) {
                           const auto& g = self.grad;
                           const auto& gam = self.inputs[1]->value;
                           const auto& h = *xhat;
                           const std::size_t total = c * plane;
                           double* gx = input_grad(self, 0);
                           double* ggam = input_grad(self, 1);
                           double* gbet = input_grad(self, 2);
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t ch = 0; ch < c; ++ch) {
                               for (std::size_t i = 0; i < plane; ++i) {
                                   const std::size_t idx = ch * plane + i;
                                   if (ggam) ggam[ch] += g[idx] * h[idx];
                                   if (gbet) gbet[ch] += g[idx];
                                   const double dh = g[idx] * gam[ch];
                                   m1 += dh;
                                   m2 += dh * h[idx];
                               }
                           }
                           if (!gx) return;
                           m1 /= static_cast<double>(total);
                           m2 /= static_cast<double>(total);
                           for (std::size_t ch = 0; ch < c; ++ch) {
                               for (std::size_t i = 0; i < plane; ++i) {
                                   const std::size_t idx = ch * plane + i;
                                   gx[idx] += rs * (g[idx] * gam[ch] - m1 - h[idx] * m2);
                               }
                           }
                       });
}

// ---------------------------------------------------------------------------
// Spatial ops

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t pad) {
    if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0) || weight.dim(2) != weight.dim(3)) {
        throw ShapeError("conv2d shape mismatch: input " + shape_str(x.shape()) + " weight " +
                         shape_str(weight.shape()));
    }
    const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t cout = weight.dim(0), k = weight.dim(2);
    if (h + 2 * pad < k || w + 2 * pad < k) throw ShapeError("conv2d kernel larger than padded input");
    if (bias.defined() && bias.numel() != cout) {
        throw ShapeError("conv2d bias " + shape_str(bias.shape()) + " vs " + std::to_string(cout) + " outputs");
    }
    const std::size_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;

    // Visits every (output row, input row, output col range) contributing to tap (ky,kx).
    auto for_tap = [=](std::size_t ky, std::size_t kx, auto&& fn) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - static_cast<std::ptrdiff_t>(pad);
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
        const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
        const std::ptrdiff_t x1s = static_cast<std::ptrdiff_t>(w) - dx;
        const std::size_t x1 = std::min<std::size_t>(wo, x1s < 0 ? 0 : static_cast<std::size_t>(x1s));
        if (x0 >= x1) return;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) + dy;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            fn(oy, static_cast<std::size_t>(iy), x0, x1, dx);
        }
    };

    const double* xv = x.data().data();
    const double* wv = weight.data().data();
    std::vector<double> out(cout * ho * wo, 0.0);
    for (std::size_t co = 0; co < cout; ++co) {
        double* op = out.data() + co * ho * wo;
        if (bias.defined()) std::fill(op, op + ho * wo, bias.data()[co]);
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* ip = xv + ci * h * w;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const double wt = wv[((co * cin + ci) * k + ky) * k + kx];
                    for_tap(ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t a, std::size_t b, std::ptrdiff_t dx) {
                        double* orow = op + oy * wo;
                        const double* irow = ip + iy * w + dx;
                        for (std::size_t ox = a; ox < b; ++ox) orow[ox] += wt * irow[ox];
                    });
                }
            }
        }
    }
    return make_result({cout, ho, wo}, std::move(out), "conv2d", {&x, &weight, &bias},
                       [=](Node& self) {
                           const double* xin = self.inputs[0]->value.data();
                           const double* wt = self.inputs[1]->value.data();
                           const double* g = self.grad.data();
                           double* gx = input_grad(self, 0);
                           double* gw = input_grad(self, 1);
                           double* gb = input_grad(self, 2);
                           for (std::size_t co = 0; co < cout; ++co) {
                               const double* gp = g + co * ho * wo;
                               if (gb) {
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < ho * wo; ++i) acc += gp[i];
                                   gb[co] += acc;
                               }
                               for (std::size_t ci = 0; ci < cin; ++ci) {
                                   const double* ip = xin + ci * h * w;
                                   double* gip = gx ? gx + ci * h * w : nullptr;
                                   for (std::size_t ky = 0; ky < k; ++ky) {
                                       for (std::size_t kx = 0; kx < k; ++kx) {
                                           const std::size_t widx = ((co * cin + ci) * k + ky) * k + kx;
                                           const double wv2 = wt[widx];
                                           double acc = 0.0;
                                           for_tap(ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t a, std::size_t b,
                                                               std::ptrdiff_t dx) {
                                               const double* grow = gp + oy * wo;
                                               const double* irow = ip + iy * w + dx;
                                               if (gw) {
                                                   for (std::size_t ox = a; ox < b; ++ox) acc += grow[ox] * irow[ox];
                                               }
                                               if (gip) {
                                                   double* girow = gip + iy * w + dx;
                                                   for (std::size_t ox = a; ox < b; ++ox) girow[ox] += wv2 * grow[ox];
                                               }
                                           });
                                           if (gw) gw[widx] += acc;
                                       }
                                   }
                               }
                           }
                       });
}

namespace {

struct Tap {
    std::size_t i0, i1;
    double frac;  // weight of i1
};

// align_corners=false source sampling for a 2x upscale of an axis of length n.
std::vector<Tap> upsample_taps(std::size_t n) {
    std::vector<Tap> taps(2 * n);
    for (std::size_t o = 0; o < 2 * n; ++o) {
        double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
        if (src < 0.0) src = 0.0;
        const auto i0 = static_cast<std::size_t>(src);
        const std::size_t i1 = std::min(i0 + 1, n - 1);
        taps[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace

Tensor upsample_bilinear2x(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("upsample expects [C,h,w], got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto ty = std::make_shared<std::vector<Tap>>(upsample_taps(h));
    auto tx = std::make_shared<std::vector<Tap>>(upsample_taps(w));
    const std::size_t ho = 2 * h, wo = 2 * w;
    const double* xv = x.data().data();
    std::vector<double> out(c * ho * wo);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* ip = xv + ch * h * w;
        double* op = out.data() + ch * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            const Tap& a = (*ty)[oy];
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const Tap& b = (*tx)[ox];
                const double top = ip[a.i0 * w + b.i0] * (1.0 - b.frac) + ip[a.i0 * w + b.i1] * b.frac;
                const double bot = ip[a.i1 * w + b.i0] * (1.0 - b.frac) + ip[a.i1 * w + b.i1] * b.frac;
                op[oy * wo + ox] = top * (1.0 - a.frac) + bot * a.frac;
            }
        }
    }
    return make_result({c, ho, wo}, std::move(out), "upsample_bilinear2x", {&x}, [=](Node& self) {
        double* gx = input_grad(self, 0);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double* gp = gx + ch * h * w;
            const double* g = self.grad.data() + ch * ho * wo;
            for (std::size_t oy = 0; oy < ho; ++oy) {
                const Tap& a = (*ty)[oy];
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    const Tap& b = (*tx)[ox];
                    const double v = g[oy * wo + ox];
                    gp[a.i0 * w + b.i0] += v * (1.0 - a.frac) * (1.0 - b.frac);
                    gp[a.i0 * w + b.i1] += v * (1.0 - a.frac) * b.frac;
                    gp[a.i1 * w + b.i0] += v * a.frac * (1.0 - b.frac);
                    gp[a.i1 * w + b.i1] += v * a.frac * b.frac;
                }
            }
        }
    });
}

}  // namespace pvcd
