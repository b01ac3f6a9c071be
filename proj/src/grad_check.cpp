#include "pvcd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "pvcd/decoder.hpp"
#include "pvcd/fusion.hpp"
#include "pvcd/loss.hpp"
#include "pvcd/model.hpp"
#include "pvcd/ops.hpp"

namespace pvcd {

double grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs, double eps, std::size_t max_coords) {
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (!in.defined()) throw std::invalid_argument("grad_check: undefined input");
        leaves.push_back(Tensor::from(in.shape(), std::vector<double>(in.data().begin(), in.data().end()), true));
    }

    Tensor out = f(leaves);
    if (out.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
    out.backward();

    double worst = 0.0;
    NoGradGuard no_grad;
    for (auto& leaf : leaves) {
        const std::size_t n = leaf.numel();
        std::vector<double> analytic(n, 0.0);
        if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

        const std::size_t count = (max_coords == 0 || max_coords >= n) ? n : max_coords;
        for (std::size_t j = 0; j < count; ++j) {
            const std::size_t i = count == n ? j : j * n / count;
            auto values = leaf.mutable_data();
            const double original = values[i];
            values[i] = original + eps;
            const double plus = f(leaves).item();
            values[i] = original - eps;
            const double minus = f(leaves).item();
            values[i] = original;

            const double numeric = (plus - minus) / (2.0 * eps);
            const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
            const double err = std::abs(analytic[i] - numeric) / denom;
            if (!std::isfinite(err)) return std::numeric_limits<double>::infinity();
            worst = std::max(worst, err);
        }
    }
    return worst;
}

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v));
}

// Contracts `t` against fixed pseudo-random weights so every output element
// contributes to the scalar with a distinct coefficient.
Tensor probe(const Tensor& t, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sum(mul(t, random_tensor(t.shape(), rng)));
}

void perturb_all(ParameterStore& store, double std, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, std);
    for (Parameter* p : store.all()) {
        for (double& v : p->values()) v = to_storage(v + noise(rng));
    }
}

std::vector<Tensor> snapshot(const std::vector<const Parameter*>& params) {
    std::vector<Tensor> out;
    for (const Parameter* p : params) {
        out.push_back(Tensor::from(p->shape(), std::vector<double>(p->values().begin(), p->values().end())));
    }
    return out;
}

void bind_all(Graph& g, const std::vector<const Parameter*>& params, const std::vector<Tensor>& leaves,
              std::size_t offset = 0) {
    for (std::size_t i = 0; i < params.size(); ++i) g.bind(*params[i], leaves[offset + i]);
}

class Suite {
public:
    explicit Suite(std::uint64_t seed) : seed_(seed), rng_(seed) {}

    void add(std::string name, const ScalarFunction& f, const std::vector<Tensor>& inputs, double eps = 1e-5,
             std::size_t max_coords = 0) {
        cases_.push_back({std::move(name), grad_check(f, inputs, eps, max_coords)});
    }

    Tensor rand(Shape shape, double lo = -1.0, double hi = 1.0) { return random_tensor(std::move(shape), rng_, lo, hi); }
    std::uint64_t seed() const { return seed_; }
    std::vector<GradCheckCase> take() { return std::move(cases_); }

private:
    std::uint64_t seed_;
    std::mt19937_64 rng_;
    std::vector<GradCheckCase> cases_;
};

void op_cases(Suite& s) {
    const std::uint64_t k = s.seed() + 101;
    const auto unary = [&](std::string name, auto op, Tensor x) {
        s.add(std::move(name), [=](const std::vector<Tensor>& in) { return probe(op(in[0]), k); }, {x});
    };
    const auto binary = [&](std::string name, auto op, Tensor a, Tensor b) {
        s.add(std::move(name), [=](const std::vector<Tensor>& in) { return probe(op(in[0], in[1]), k); }, {a, b});
    };

    binary("add", [](auto a, auto b) { return add(a, b); }, s.rand({3, 4}), s.rand({3, 4}));
    binary("add_broadcast", [](auto a, auto b) { return add(a, b); }, s.rand({2, 3, 4}), s.rand({4}));
    binary("sub_broadcast", [](auto a, auto b) { return sub(a, b); }, s.rand({2, 1, 4}), s.rand({3, 1}));
    binary("mul_broadcast", [](auto a, auto b) { return mul(a, b); }, s.rand({2, 3, 4}), s.rand({3, 4}));
    binary("div", [](auto a, auto b) { return div(a, b); }, s.rand({3, 4}), s.rand({3, 4}, 0.5, 2.0));
    unary("scale", [](auto a) { return scale(a, -1.7); }, s.rand({5}));
    unary("add_scalar", [](auto a) { return add_scalar(a, 0.3); }, s.rand({5}));
    unary("neg", [](auto a) { return neg(a); }, s.rand({5}));
    unary("exp", [](auto a) { return exp(a); }, s.rand({2, 3}));
    unary("log", [](auto a) { return log(a); }, s.rand({2, 3}, 0.2, 3.0));
    unary("gelu", [](auto a) { return gelu(a); }, s.rand({4, 5}, -3.0, 3.0));
    unary("sum", [](auto a) { return scale(sum(a), 1.3); }, s.rand({2, 3}));
    unary("mean", [](auto a) { return scale(mean(a), 1.3); }, s.rand({2, 3}));
    unary("sum_axis", [](auto a) { return sum(a, 1); }, s.rand({2, 3, 4}));
    unary("sum_axis_keepdim", [](auto a) { return sum(a, -1, true); }, s.rand({2, 3, 4}));
    binary("matmul", [](auto a, auto b) { return matmul(a, b); }, s.rand({3, 4}), s.rand({4, 2}));
    binary("matmul_batched", [](auto a, auto b) { return matmul(a, b); }, s.rand({2, 3, 4}), s.rand({4, 5}));
    binary("matmul_broadcast", [](auto a, auto b) { return matmul(a, b); }, s.rand({2, 1, 3, 4}),
           s.rand({3, 4, 2}));
    s.add("linear",
          [=](const std::vector<Tensor>& in) { return probe(linear(in[0], in[1], in[2]), k); },
          {s.rand({2, 3, 4}), s.rand({4, 5}), s.rand({5})});
    unary("reshape", [](auto a) { return reshape(a, {6, 2}); }, s.rand({3, 4}));
    unary("permute", [](auto a) { return permute(a, {2, 0, 1}); }, s.rand({2, 3, 4}));
    unary("transpose", [](auto a) { return transpose(a, 0, -1); }, s.rand({2, 3, 4}));
    unary("expand", [](auto a) { return expand(a, {3, 2, 4}); }, s.rand({2, 1}));
    binary("concat", [](auto a, auto b) { return concat({a, b, a}, 1); }, s.rand({2, 3}), s.rand({2, 1}));
    unary("slice", [](auto a) { return slice(a, 1, 1, 2); }, s.rand({2, 4, 3}));
    unary("softmax", [](auto a) { return softmax(a, -1); }, s.rand({3, 5}, -2.0, 2.0));
    unary("softmax_axis0", [](auto a) { return softmax(a, 0); }, s.rand({3, 5}, -2.0, 2.0));
    unary("log_softmax", [](auto a) { return log_softmax(a, 1); }, s.rand({2, 4, 3}, -2.0, 2.0));
    s.add("layer_norm",
          [=](const std::vector<Tensor>& in) { return probe(layer_norm(in[0], in[1], in[2]), k); },
          {s.rand({3, 6}), s.rand({6}, 0.5, 1.5), s.rand({6})});
    s.add("group_norm",
          [=](const std::vector<Tensor>& in) { return probe(group_norm(in[0], in[1], in[2]), k); },
          {s.rand({3, 4, 4}), s.rand({3}, 0.5, 1.5), s.rand({3})});
    s.add("conv2d_3x3",
          [=](const std::vector<Tensor>& in) { return probe(conv2d(in[0], in[1], in[2], 1), k); },
          {s.rand({2, 5, 4}), s.rand({3, 2, 3, 3}), s.rand({3})});
    s.add("conv2d_1x1",
          [=](const std::vector<Tensor>& in) { return probe(conv2d(in[0], in[1], in[2], 0), k); },
          {s.rand({3, 4, 4}), s.rand({2, 3, 1, 1}), s.rand({2})});
    unary("upsample_bilinear2x", [](auto a) { return upsample_bilinear2x(a); }, s.rand({2, 3, 4}));
    unary("upsample_bilinear2x_1x1", [](auto a) { return upsample_bilinear2x(a); }, s.rand({2, 1, 1}));
}

// Checks gradients w.r.t. an input tensor and every parameter in `store`.
void component_case(Suite& s, std::string name, ParameterStore& store, const Tensor& input,
                    const std::function<Tensor(Graph&, const Tensor&)>& fn, std::size_t max_coords = 0) {
    std::vector<const Parameter*> params;
    for (const Parameter* p : store.all()) params.push_back(p);
    std::vector<Tensor> inputs{input};
    for (auto& t : snapshot(params)) inputs.push_back(t);
    const std::uint64_t k = s.seed() + 202;
    s.add(std::move(name),
          [=](const std::vector<Tensor>& in) {
              Graph g;
              bind_all(g, params, in, 1);
              return probe(fn(g, in[0]), k);
          },
          inputs, 1e-5, max_coords);
}

void layer_cases(Suite& s) {
    ViTConfig vit;
    vit.image_size = 8;
    vit.patch_size = 4;
    vit.depth = 1;
    vit.dim = 8;
    vit.heads = 2;
    vit.mlp_ratio = 2;
    const Tensor z = s.rand({5, 8});

    {
        ParameterStore store;
        const auto bb = register_backbone(store, vit, s.seed());
        perturb_all(store, 0.1, s.seed() + 1);
        component_case(s, "attention", store, z,
                       [&bb, vit](Graph& g, const Tensor& x) { return attention(g, x, bb.layers[0].attn, vit.heads); });
    }
    const std::pair<const char*, PeftMethod> hooks[] = {
        {"layer_plain", PeftMethod::full},
        {"layer_adapter", PeftMethod::adapter},
        {"layer_lora", PeftMethod::lora},
        {"layer_ia3", PeftMethod::ia3},
        {"layer_prefix", PeftMethod::prefix},
    };
    for (const auto& [name, method] : hooks) {
        ParameterStore store;
        const auto bb = register_backbone(store, vit, s.seed());
        PeftConfig pc;
        pc.method = method;
        pc.r = 2;
        pc.rank = 2;
        pc.prefix_count = 3;
        const auto peft = register_peft(store, vit, pc, s.seed());
        perturb_all(store, 0.1, s.seed() + 2);
        component_case(s, name, store, z, [&bb, &peft, vit](Graph& g, const Tensor& x) {
            return transformer_layer(g, x, bb.layers[0], vit.heads, &peft[0]);
        });
    }
    {
        ParameterStore store;
        const auto mca = register_fusion(store, 8, 2, 2, s.seed());
        perturb_all(store, 0.1, s.seed() + 3);
        component_case(s, "fuse", store, s.rand({2, 4, 8}),
                       [&mca](Graph& g, const Tensor& f) { return fuse(g, f, 2, 2, mca); });
    }
    {
        ParameterStore store;
        const auto dec = register_decoder(store, 8, 4, s.seed());
        perturb_all(store, 0.1, s.seed() + 4);
        component_case(s, "decode", store, s.rand({8, 2, 2}),
                       [&dec](Graph& g, const Tensor& f) { return decode(g, f, dec); }, 24);
    }
    {
        Mask target(2, 2);
        target.data = {1, 0, 0, 1};
        s.add("focal_jaccard_loss", [target](const std::vector<Tensor>& in) { return focal_jaccard_loss(in[0], target); },
              {s.rand({2, 2, 2}, -2.0, 2.0)});
        Mask empty(2, 2);
        s.add("focal_jaccard_loss_empty_target",
              [empty](const std::vector<Tensor>& in) { return focal_jaccard_loss(in[0], empty); },
              {s.rand({2, 2, 2}, -2.0, 2.0)});
    }
}

// Whole model on the desk-scale config: gradients of the training loss with
// respect to the trainable parameters and the input frames.
void model_cases(Suite& s) {
    const PeftMethod methods[] = {PeftMethod::adapter, PeftMethod::lora,         PeftMethod::ia3,
                                  PeftMethod::prefix,  PeftMethod::linear_probe, PeftMethod::full};
    Mask target(32, 32);
    for (std::size_t y = 8; y < 20; ++y)
        for (std::size_t x = 4; x < 22; ++x) target.at(y, x) = 1;

    for (PeftMethod method : methods) {
        PeftConfig pc;
        pc.method = method;
        auto model = build_model(ViTConfig::tiny(32), pc, 2, s.seed());
        perturb_all(model.parameters(), 0.1, s.seed() + 5);

        std::vector<const Parameter*> params;
        for (const Parameter* p : model.parameters().trainable()) params.push_back(p);
        std::vector<Tensor> inputs{s.rand({2, 3, 32, 32}, 0.0, 1.0)};
        for (auto& t : snapshot(params)) inputs.push_back(t);

        const ChangeDetector* m = &model;
        s.add("model_" + std::string(to_string(method)),
              [m, params, target](const std::vector<Tensor>& in) {
                  Graph g;
                  bind_all(g, params, in, 1);
                  return focal_jaccard_loss(m->forward(g, in[0]), target);
              },
              inputs, 1e-5, 6);
    }
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed) {
    Suite s(seed);
    op_cases(s);
    layer_cases(s);
    model_cases(s);
    return s.take();
}

}  // namespace pvcd
