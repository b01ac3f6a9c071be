#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pvcd/tensor.hpp"

namespace pvcd {

/// Learnable values are kept at 32-bit precision (so checkpoints round-trip
/// bit-exactly) while all arithmetic runs in 64-bit.
inline double to_storage(double v) { return static_cast<double>(static_cast<float>(v)); }

class Parameter {
public:
    Parameter(std::string name, Shape shape, bool frozen);

    const std::string& name() const { return name_; }
    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return values_.size(); }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    bool frozen() const { return frozen_; }
    void set_frozen(bool frozen) { frozen_ = frozen; }

private:
    std::string name_;
    Shape shape_;
    std::vector<double> values_;
    bool frozen_;
};

/// Ordered registry of uniquely named parameters. Parameters live on the
/// heap, so pointers handed out stay valid when the store is moved.
class ParameterStore {
public:
    Parameter& add(std::string name, Shape shape, bool frozen = false);

    Parameter* find(std::string_view name);
    const Parameter* find(std::string_view name) const;
    Parameter& at(std::string_view name);
    const Parameter& at(std::string_view name) const;

    std::size_t size() const { return params_.size(); }

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::vector<Parameter*> trainable();
    std::vector<const Parameter*> trainable() const;

    /// Marks every parameter whose name starts with `prefix`.
    void set_frozen_prefix(std::string_view prefix, bool frozen);

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, Parameter*> by_name_;
};

// -- initialization ---------------------------------------------------------

/// Per-parameter RNG seed so a tensor's initial values depend only on the
/// run seed and its name, not on which other modules exist.
std::uint64_t parameter_seed(std::uint64_t seed, std::string_view name);

void init_constant(Parameter& p, double value);
/// Normal(0, std) resampled outside +/-2 std.
void init_trunc_normal(Parameter& p, double std, std::uint64_t seed);
void init_normal(Parameter& p, double std, std::uint64_t seed);

// -- per-pass binding -------------------------------------------------------

struct AttentionRecord {
    std::string site;
    Tensor weights;  // detached attention probabilities
};

/// Collects attention probabilities and the number of scores computed.
struct AttentionTrace {
    std::vector<AttentionRecord> records;
    std::size_t score_count(std::string_view site_prefix = {}) const;
};

/// One forward/backward pass. Binds each Parameter to a leaf tensor the
/// first time it is used; leaves of trainable parameters track gradients.
/// Graphs are confined to one thread; parameters are only read.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Tensor use(const Parameter& p);
    /// Substitutes an explicit leaf for `p` (used by gradient checks).
    void bind(const Parameter& p, Tensor leaf);

    /// Gradient accumulated for `p`, empty if it received none.
    std::span<const double> grad(const Parameter& p) const;

    void set_trace(AttentionTrace* trace) { trace_ = trace; }
    void record_attention(std::string_view site, const Tensor& weights);

private:
    std::unordered_map<const Parameter*, Tensor> bound_;
    AttentionTrace* trace_ = nullptr;
};

}  // namespace pvcd
