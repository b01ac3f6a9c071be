#include "pvcd/decoder.hpp"

#include <algorithm>
#include <string>

#include "pvcd/ops.hpp"

namespace pvcd {

namespace {
constexpr std::size_t kMinChannels = 16;
}

DecoderParams register_decoder(ParameterStore& store, std::size_t in_channels, std::size_t patch_size,
                               std::uint64_t seed) {
    if (patch_size == 0 || (patch_size & (patch_size - 1)) != 0) {
        throw std::invalid_argument("decoder needs a power-of-two patch size, got " + std::to_string(patch_size));
    }
    DecoderParams p;
    std::size_t channels = in_channels;
    for (std::size_t i = 0; (std::size_t{1} << i) < patch_size; ++i) {
        const std::string base = "decoder.stage" + std::to_string(i);
        const std::size_t out = std::max(channels / 2, kMinChannels);
        DecoderStage stage;
        stage.conv_weight = &store.add(base + ".conv.weight", {out, channels, 3, 3});
        init_trunc_normal(*stage.conv_weight, 0.02, parameter_seed(seed, stage.conv_weight->name()));
        stage.conv_bias = &store.add(base + ".conv.bias", {out});
        init_constant(*stage.conv_bias, 0.0);
        stage.norm = register_norm(store, base + ".norm", out);
        p.stages.push_back(stage);
        channels = out;
    }
    p.classifier_weight = &store.add("decoder.classifier.weight", {2, channels, 1, 1});
    init_trunc_normal(*p.classifier_weight, 0.02, parameter_seed(seed, p.classifier_weight->name()));
    p.classifier_bias = &store.add("decoder.classifier.bias", {2});
    init_constant(*p.classifier_bias, 0.0);
    return p;
}

Tensor decode(Graph& g, const Tensor& feature, const DecoderParams& params) {
    Tensor x = feature;
    for (const auto& stage : params.stages) {
        x = conv2d(x, g.use(*stage.conv_weight), g.use(*stage.conv_bias), 1);
        x = gelu(group_norm(x, g.use(*stage.norm.gamma), g.use(*stage.norm.beta)));
        x = upsample_bilinear2x(x);
    }
    return conv2d(x, g.use(*params.classifier_weight), g.use(*params.classifier_bias), 0);
}

}  // namespace pvcd
