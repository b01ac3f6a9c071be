#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace pvcd {

class NetpbmError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 8-bit interleaved raster: 3 channels for PPM, 1 for PGM.
struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::uint16_t maxval = 255;
    std::vector<std::uint8_t> data;  // row-major, channels interleaved
};

/// Parses binary P6 (PPM) or P5 (PGM) with maxval <= 255; header comments allowed.
Raster decode_netpbm(const std::vector<std::uint8_t>& bytes);
Raster read_netpbm(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_netpbm(const Raster& raster);
/// Writes P6 for 3 channels and P5 for 1 channel.
void write_netpbm(const std::filesystem::path& path, const Raster& raster);

}  // namespace pvcd
