#include "pvcd/netpbm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

namespace pvcd {

namespace {

class HeaderReader {
public:
    explicit HeaderReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::size_t number(const char* what) {
        skip_space_and_comments();
        std::size_t value = 0;
        std::size_t digits = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_++] - '0');
            if (++digits > 9) throw NetpbmError(std::string("netpbm: ") + what + " is too large");
        }
        if (digits == 0) throw NetpbmError(std::string("netpbm: expected ") + what);
        return value;
    }

    // Exactly one whitespace byte separates the header from the raster.
    std::size_t raster_start() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw NetpbmError("netpbm: malformed header end");
        return pos_ + 1;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 2;  // past the magic number
};

}  // namespace

Raster decode_netpbm(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
        throw NetpbmError("netpbm: only binary P6/P5 files are supported");
    }
    Raster r;
    r.channels = bytes[1] == '6' ? 3 : 1;
    HeaderReader header(bytes);
    r.width = header.number("width");
    r.height = header.number("height");
    const std::size_t maxval = header.number("maxval");
    if (r.width == 0 || r.height == 0) throw NetpbmError("netpbm: empty image");
    if (maxval == 0 || maxval > 255) throw NetpbmError("netpbm: maxval " + std::to_string(maxval) + " unsupported");
    r.maxval = static_cast<std::uint16_t>(maxval);
    const std::size_t start = header.raster_start();
    const std::size_t size = r.width * r.height * r.channels;
    if (bytes.size() < start + size) throw NetpbmError("netpbm: truncated raster");
    r.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                  bytes.begin() + static_cast<std::ptrdiff_t>(start + size));
    return r;
}

Raster read_netpbm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NetpbmError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_netpbm(bytes);
    } catch (const NetpbmError& e) {
        throw NetpbmError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_netpbm(const Raster& raster) {
    if (raster.channels != 1 && raster.channels != 3) throw NetpbmError("netpbm: need 1 or 3 channels");
    if (raster.data.size() != raster.width * raster.height * raster.channels) {
        throw NetpbmError("netpbm: raster size does not match its dimensions");
    }
    const std::string header = std::string(raster.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(raster.width) +
                               " " + std::to_string(raster.height) + "\n" + std::to_string(raster.maxval) + "\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), raster.data.begin(), raster.data.end());
    return out;
}

void write_netpbm(const std::filesystem::path& path, const Raster& raster) {
    const auto bytes = encode_netpbm(raster);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw NetpbmError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw NetpbmError("write failed for " + path.string());
}

}  // namespace pvcd
