#include "pvcd/weight_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

namespace pvcd {

namespace {

constexpr char kMagic[4] = {'P', 'V', 'C', 'D'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((u >> (8 * i)) & 0xFFu));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        need(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            u |= static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw WeightFileError("weight file truncated at byte " + std::to_string(pos_));
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const std::vector<WeightEntry>& entries) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(out, kWeightFileVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (shape_numel(e.shape) != e.values.size()) {
            throw WeightFileError("entry " + e.name + ": shape " + shape_str(e.shape) + " vs " +
                                  std::to_string(e.values.size()) + " values");
        }
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) put_le<std::uint64_t>(out, d);
        for (float v : e.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

std::vector<WeightEntry> decode_weights(const std::vector<std::uint8_t>& bytes) {
    Reader in(bytes);
    if (in.str(4) != std::string(kMagic, 4)) throw WeightFileError("not a weight file (bad magic)");
    const auto version = in.get<std::uint32_t>();
    if (version != kWeightFileVersion) {
        throw WeightFileError("unsupported weight file version " + std::to_string(version));
    }
    const auto count = in.get<std::uint32_t>();
    std::vector<WeightEntry> entries;
    std::unordered_set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        WeightEntry e;
        e.name = in.str(in.get<std::uint32_t>());
        if (!seen.insert(e.name).second) throw WeightFileError("duplicate entry " + e.name);
        const auto rank = in.get<std::uint32_t>();
        for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
        const std::size_t n = shape_numel(e.shape);
        e.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) e.values[k] = std::bit_cast<float>(in.get<std::uint32_t>());
        entries.push_back(std::move(e));
    }
    if (!in.done()) throw WeightFileError("trailing bytes after last weight entry");
    return entries;
}

void write_weight_file(const std::filesystem::path& path, const std::vector<WeightEntry>& entries) {
    const auto bytes = encode_weights(entries);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw WeightFileError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw WeightFileError("failed writing " + path.string());
}

std::vector<WeightEntry> read_weight_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WeightFileError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_weights(bytes);
}

std::vector<WeightEntry> export_weights(const ParameterStore& store, const ParameterFilter& select) {
    std::vector<WeightEntry> out;
    for (const Parameter* p : store.all()) {
        if (select && !select(*p)) continue;
        WeightEntry e{p->name(), p->shape(), {}};
        e.values.reserve(p->numel());
        for (double v : p->values()) e.values.push_back(static_cast<float>(v));
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<WeightEntry> export_trainable(const ParameterStore& store) {
    return export_weights(store, [](const Parameter& p) { return !p.frozen(); });
}

LoadReport load_weights(const std::vector<WeightEntry>& entries, ParameterStore& store,
                        const ParameterFilter& select) {
    std::unordered_map<std::string, const WeightEntry*> by_name;
    for (const auto& e : entries) by_name.emplace(e.name, &e);
    // Validate everything before touching any parameter.
    std::vector<std::pair<Parameter*, const WeightEntry*>> plan;
    for (Parameter* p : store.all()) {
        if (select && !select(*p)) continue;
        auto it = by_name.find(p->name());
        if (it == by_name.end()) throw WeightFileError("missing parameter " + p->name());
        if (it->second->shape != p->shape()) {
            throw WeightFileError("shape mismatch for " + p->name() + ": expected " + shape_str(p->shape()) +
                                  ", file has " + shape_str(it->second->shape));
        }
        plan.emplace_back(p, it->second);
    }
    LoadReport report;
    for (auto [p, e] : plan) {
        auto dst = p->values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(e->values[i]);
        ++report.loaded;
    }
    for (const auto& e : entries) {
        const Parameter* p = store.find(e.name);
        if (!p || (select && !select(*p))) report.warnings.push_back("unused entry " + e.name);
    }
    return report;
}

LoadReport load_backbone_weights(const std::vector<WeightEntry>& entries, ParameterStore& store) {
    return load_weights(entries, store, [](const Parameter& p) { return p.name().starts_with("backbone."); });
}

LoadReport load_checkpoint(const std::vector<WeightEntry>& entries, ParameterStore& store) {
    return load_weights(entries, store, [](const Parameter& p) { return !p.frozen(); });
}

}  // namespace pvcd
