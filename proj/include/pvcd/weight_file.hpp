#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "pvcd/parameter.hpp"

namespace pvcd {

// On-disk layout (all integers little-endian):
//   "PVCD" | version u32 | entry count u32
//   per entry: name length u32 | UTF-8 name | rank u32 | dims u64 x rank | float32 x numel
inline constexpr std::uint32_t kWeightFileVersion = 1;

struct WeightEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

class WeightFileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_weights(const std::vector<WeightEntry>& entries);
std::vector<WeightEntry> decode_weights(const std::vector<std::uint8_t>& bytes);

void write_weight_file(const std::filesystem::path& path, const std::vector<WeightEntry>& entries);
std::vector<WeightEntry> read_weight_file(const std::filesystem::path& path);

using ParameterFilter = std::function<bool(const Parameter&)>;

/// Snapshot of the selected parameters, in registry order.
std::vector<WeightEntry> export_weights(const ParameterStore& store, const ParameterFilter& select = {});
/// Only trainable parameters: the PEFT checkpoint form.
std::vector<WeightEntry> export_trainable(const ParameterStore& store);

struct LoadReport {
    std::size_t loaded = 0;
    std::vector<std::string> warnings;  // unknown names in the file
};

/// Overwrites every selected parameter from `entries`. Every selected name
/// must be present with a matching shape; frozen flags are left alone.
LoadReport load_weights(const std::vector<WeightEntry>& entries, ParameterStore& store,
                        const ParameterFilter& select = {});

/// Loads `backbone.*` parameters (e.g. converted pretrained weights).
LoadReport load_backbone_weights(const std::vector<WeightEntry>& entries, ParameterStore& store);
/// Loads a trainable-only checkpoint.
LoadReport load_checkpoint(const std::vector<WeightEntry>& entries, ParameterStore& store);

}  // namespace pvcd
