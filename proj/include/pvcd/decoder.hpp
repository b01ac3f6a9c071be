#pragma once

#include <cstdint>
#include <vector>

#include "pvcd/layers.hpp"

namespace pvcd {

struct DecoderStage {
    Parameter* conv_weight = nullptr;  // [C_out, C_in, 3, 3]
    Parameter* conv_bias = nullptr;    // [C_out]
    NormParams norm;
};

/// log2(P) stages of conv3x3 -> norm -> GELU -> 2x bilinear, then a 1x1
/// classifier to two logits. Channels halve per stage with a floor of 16.
struct DecoderParams {
    std::vector<DecoderStage> stages;
    Parameter* classifier_weight = nullptr;  // [2, C, 1, 1]
    Parameter* classifier_bias = nullptr;    // [2]
};

/// Throws std::invalid_argument unless `patch_size` is a power of two.
DecoderParams register_decoder(ParameterStore& store, std::size_t in_channels, std::size_t patch_size,
                               std::uint64_t seed);

/// [D, H/P, W/P] change feature -> [2, H, W] logits.
Tensor decode(Graph& g, const Tensor& feature, const DecoderParams& params);

}  // namespace pvcd
