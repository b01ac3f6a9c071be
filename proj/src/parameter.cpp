#include "pvcd/parameter.hpp"

#include <random>

namespace pvcd {

Parameter::Parameter(std::string name, Shape shape, bool frozen)
    : name_(std::move(name)), shape_(std::move(shape)), values_(shape_numel(shape_), 0.0), frozen_(frozen) {}

Parameter& ParameterStore::add(std::string name, Shape shape, bool frozen) {
    if (by_name_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    for (auto d : shape) {
        if (d == 0) throw ShapeError("parameter " + name + " has a zero dimension " + shape_str(shape));
    }
    auto p = std::make_unique<Parameter>(name, std::move(shape), frozen);
    Parameter* raw = p.get();
    params_.push_back(std::move(p));
    by_name_.emplace(std::move(name), raw);
    return *raw;
}

Parameter* ParameterStore::find(std::string_view name) {
    auto it = by_name_.find(std::string(name));
    return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    return it == by_name_.end() ? nullptr : it->second;
}

Parameter& ParameterStore::at(std::string_view name) {
    if (Parameter* p = find(name)) return *p;
    throw std::out_of_range("unknown parameter: " + std::string(name));
}

const Parameter& ParameterStore::at(std::string_view name) const {
    if (const Parameter* p = find(name)) return *p;
    throw std::out_of_range("unknown parameter: " + std::string(name));
}

std::vector<Parameter*> ParameterStore::all() {
    std::vector<Parameter*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
    std::vector<const Parameter*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<Parameter*> ParameterStore::trainable() {
    std::vector<Parameter*> out;
    for (auto& p : params_) {
        if (!p->frozen()) out.push_back(p.get());
    }
    return out;
}

std::vector<const Parameter*> ParameterStore::trainable() const {
    std::vector<const Parameter*> out;
    for (const auto& p : params_) {
        if (!p->frozen()) out.push_back(p.get());
    }
    return out;
}

void ParameterStore::set_frozen_prefix(std::string_view prefix, bool frozen) {
    for (auto& p : params_) {
        if (p->name().starts_with(prefix)) p->set_frozen(frozen);
    }
}

std::uint64_t parameter_seed(std::uint64_t seed, std::string_view name) {
    // FNV-1a over the name, mixed with the run seed through splitmix64.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (h | 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void init_constant(Parameter& p, double value) {
    for (double& v : p.values()) v = to_storage(value);
}

void init_trunc_normal(Parameter& p, double std, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std);
    for (double& v : p.values()) {
        double x = dist(rng);
        while (std::abs(x) > 2.0 * std) x = dist(rng);
        v = to_storage(x);
    }
}

void init_normal(Parameter& p, double std, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std);
    for (double& v : p.values()) v = to_storage(dist(rng));
}

std::size_t AttentionTrace::score_count(std::string_view site_prefix) const {
    std::size_t n = 0;
    for (const auto& r : records) {
        if (r.site.starts_with(site_prefix)) n += r.weights.numel();
    }
    return n;
}

Tensor Graph::use(const Parameter& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    const bool track = !p.frozen() && GradMode::enabled();
    Tensor leaf = Tensor::from(p.shape(), std::vector<double>(p.values().begin(), p.values().end()), track);
    bound_.emplace(&p, leaf);
    return leaf;
}

void Graph::bind(const Parameter& p, Tensor leaf) {
    if (leaf.shape() != p.shape()) {
        throw ShapeError("binding " + p.name() + ": expected " + shape_str(p.shape()) + ", got " +
                         shape_str(leaf.shape()));
    }
    bound_[&p] = std::move(leaf);
}

std::span<const double> Graph::grad(const Parameter& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return {};
    return it->second.grad();
}

void Graph::record_attention(std::string_view site, const Tensor& weights) {
    if (trace_) trace_->records.push_back({std::string(site), weights.detach()});
}

}  // namespace pvcd
