#include "pvcd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "pvcd/netpbm.hpp"

namespace pvcd {

namespace fs = std::filesystem;
using json = nlohmann::json;

// -- disk I/O -----------------------------------------------------------------

std::vector<std::string> DatasetManifest::ids_in(const std::string& split) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (splits[i] == split) out.push_back(ids[i]);
    }
    return out;
}

void write_manifest(const DatasetManifest& manifest) {
    if (manifest.ids.size() != manifest.splits.size()) throw DatasetError("manifest ids and splits differ in length");
    json samples = json::array();
    for (std::size_t i = 0; i < manifest.ids.size(); ++i) {
        samples.push_back({{"id", manifest.ids[i]}, {"split", manifest.splits[i]}});
    }
    std::ofstream out(manifest.root / "manifest.json", std::ios::trunc);
    if (!out) throw DatasetError("cannot write manifest under " + manifest.root.string());
    out << json{{"samples", samples}}.dump(2) << "\n";
}

DatasetManifest read_manifest(const fs::path& root) {
    DatasetManifest m;
    m.root = root;
    const fs::path file = root / "manifest.json";
    if (fs::exists(file)) {
        std::ifstream in(file);
        json doc;
        try {
            doc = json::parse(in);
            for (const auto& s : doc.at("samples")) {
                m.ids.push_back(s.at("id").get<std::string>());
                m.splits.push_back(s.at("split").get<std::string>());
            }
        } catch (const json::exception& e) {
            throw DatasetError(file.string() + ": " + e.what());
        }
        return m;
    }
    if (!fs::is_directory(root / "A")) throw DatasetError("no manifest.json and no A/ directory under " + root.string());
    for (const auto& entry : fs::directory_iterator(root / "A")) {
        if (entry.path().extension() == ".ppm") m.ids.push_back(entry.path().stem().string());
    }
    std::sort(m.ids.begin(), m.ids.end());
    m.splits.assign(m.ids.size(), "train");
    return m;
}

namespace {

Tensor raster_to_tensor(const Raster& r) {
    std::vector<double> v(3 * r.width * r.height);
    const std::size_t plane = r.width * r.height;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) v[c * plane + i] = r.data[i * 3 + c] / static_cast<double>(r.maxval);
    }
    return Tensor::from({3, r.height, r.width}, std::move(v));
}

Raster tensor_to_raster(const Tensor& t) {
    Raster r;
    r.channels = 3;
    r.height = t.dim(1);
    r.width = t.dim(2);
    const std::size_t plane = r.width * r.height;
    r.data.resize(plane * 3);
    const auto v = t.data();
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) r.data[i * 3 + c] = quantize(v[c * plane + i]);
    }
    return r;
}

}  // namespace

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

ChangeSample load_sample(const fs::path& root, const std::string& id) {
    const fs::path a = root / "A" / (id + ".ppm");
    const fs::path b = root / "B" / (id + ".ppm");
    const fs::path label = root / "label" / (id + ".pgm");
    for (const auto& p : {a, b, label}) {
        if (!fs::exists(p)) throw DatasetError("sample " + id + ": missing " + p.string());
    }
    const Raster ra = read_netpbm(a), rb = read_netpbm(b), rl = read_netpbm(label);
    if (ra.channels != 3 || rb.channels != 3) throw DatasetError("sample " + id + ": frames must be PPM (P6)");
    if (rl.channels != 1) throw DatasetError("sample " + id + ": label must be PGM (P5)");
    if (ra.width != rb.width || ra.height != rb.height || ra.width != rl.width || ra.height != rl.height) {
        throw DatasetError("sample " + id + ": dimension mismatch between A (" + std::to_string(ra.width) + "x" +
                           std::to_string(ra.height) + "), B (" + std::to_string(rb.width) + "x" +
                           std::to_string(rb.height) + ") and label (" + std::to_string(rl.width) + "x" +
                           std::to_string(rl.height) + ")");
    }
    ChangeSample s;
    s.id = id;
    s.image_a = raster_to_tensor(ra);
    s.image_b = raster_to_tensor(rb);
    s.mask = Mask(rl.height, rl.width);
    for (std::size_t i = 0; i < rl.data.size(); ++i) s.mask.data[i] = rl.data[i] != 0 ? 1 : 0;
    return s;
}

std::vector<ChangeSample> load_dataset(const fs::path& root, const std::optional<std::string>& split) {
    const DatasetManifest m = read_manifest(root);
    std::vector<ChangeSample> out;
    for (std::size_t i = 0; i < m.ids.size(); ++i) {
        if (!split || m.splits[i] == *split) out.push_back(load_sample(root, m.ids[i]));
    }
    return out;
}

void save_sample(const fs::path& root, const ChangeSample& sample) {
    for (const char* sub : {"A", "B", "label"}) fs::create_directories(root / sub);
    write_netpbm(root / "A" / (sample.id + ".ppm"), tensor_to_raster(sample.image_a));
    write_netpbm(root / "B" / (sample.id + ".ppm"), tensor_to_raster(sample.image_b));
    Raster label;
    label.channels = 1;
    label.width = sample.mask.width;
    label.height = sample.mask.height;
    label.data.resize(sample.mask.data.size());
    for (std::size_t i = 0; i < label.data.size(); ++i) label.data[i] = sample.mask.data[i] ? 255 : 0;
    write_netpbm(root / "label" / (sample.id + ".pgm"), label);
}

// -- synthetic scenes ----------------------------------------------------------------

bool SceneShape::covers(int px, int py) const {
    if (px < x || py < y || px >= x + w || py >= y + h) return false;
    if (kind == ShapeKind::rectangle) return true;
    const double r = w / 2.0;
    const double dx = px + 0.5 - (x + r), dy = py + 0.5 - (y + r);
    return dx * dx + dy * dy <= r * r;
}

std::array<double, 3> Background::at(int x, int y) const {
    const double t = amplitude * std::sin(freq_x * x + phase_x) * std::sin(freq_y * y + phase_y);
    return {base[0] + t, base[1] + t, base[2] + t};
}

std::vector<std::uint32_t> label_map(const Scene& scene, std::size_t size) {
    std::vector<std::uint32_t> labels(size * size, 0);
    for (const auto& s : scene.shapes) {
        for (int y = std::max(s.y, 0); y < std::min<int>(s.y + s.h, static_cast<int>(size)); ++y) {
            for (int x = std::max(s.x, 0); x < std::min<int>(s.x + s.w, static_cast<int>(size)); ++x) {
                if (s.covers(x, y)) labels[y * size + x] = s.id;
            }
        }
    }
    return labels;
}

Mask change_mask(const Scene& before, const Scene& after, std::size_t size) {
    const auto a = label_map(before, size), b = label_map(after, size);
    Mask m(size, size);
    for (std::size_t i = 0; i < a.size(); ++i) m.data[i] = a[i] != b[i] ? 1 : 0;
    return m;
}

Tensor render(const Scene& scene, std::size_t size) {
    const std::size_t plane = size * size;
    std::vector<double> v(3 * plane);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const auto c = scene.background.at(static_cast<int>(x), static_cast<int>(y));
            for (std::size_t k = 0; k < 3; ++k) v[k * plane + y * size + x] = c[k];
        }
    }
    for (const auto& s : scene.shapes) {
        for (int y = std::max(s.y, 0); y < std::min<int>(s.y + s.h, static_cast<int>(size)); ++y) {
            for (int x = std::max(s.x, 0); x < std::min<int>(s.x + s.w, static_cast<int>(size)); ++x) {
                if (!s.covers(x, y)) continue;
                for (std::size_t k = 0; k < 3; ++k) v[k * plane + y * size + x] = s.color[k];
            }
        }
    }
    return Tensor::from({3, size, size}, std::move(v));
}

void SynthSpec::validate() const {
    if (count == 0) throw std::invalid_argument("synth: count must be positive");
    if (test_count >= count) throw std::invalid_argument("synth: test_count must leave training samples");
    if (kinds.empty()) throw std::invalid_argument("synth: no shape kinds");
    if (min_shapes > max_shapes) throw std::invalid_argument("synth: min_shapes > max_shapes");
    if (min_size == 0 || min_size > max_size || max_size > image_size) {
        throw std::invalid_argument("synth: shape sizes must satisfy 0 < min_size <= max_size <= image_size");
    }
    if (change_probability < 0.0 || change_probability > 1.0 || recolor_probability < 0.0 ||
        recolor_probability > 1.0) {
        throw std::invalid_argument("synth: probabilities must lie in [0,1]");
    }
    if (noise < 0.0) throw std::invalid_argument("synth: noise must be non-negative");
}

namespace {

constexpr int kGap = 2;              // minimum spacing between shapes
constexpr int kPlacementTries = 64;  // per shape, before giving up
constexpr double kMinContrast = 0.35;
constexpr double kBackgroundLow = 0.15, kBackgroundHigh = 0.4, kBackgroundTint = 0.05;
constexpr double kShapeLow = 0.55;  // per channel

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t index, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

bool separated(const SceneShape& a, const SceneShape& b) {
    return a.x + a.w + kGap <= b.x || b.x + b.w + kGap <= a.x || a.y + a.h + kGap <= b.y || b.y + b.h + kGap <= a.y;
}

std::array<double, 3> contrasting_color(const std::array<double, 3>& avoid, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(kShapeLow, 1.0);
    for (;;) {
        std::array<double, 3> c{u(rng), u(rng), u(rng)};
        double diff = 0.0;
        for (std::size_t k = 0; k < 3; ++k) diff = std::max(diff, std::abs(c[k] - avoid[k]));
        if (diff >= kMinContrast) return c;
    }
}

// Places a new shape clear of `others`; nullopt when the frame is too crowded.
std::optional<SceneShape> place_shape(const SynthSpec& spec, const Background& bg, const std::vector<SceneShape>& others,
                                      std::uint32_t id, std::mt19937_64& rng) {
    const std::vector<ShapeKind> kinds(spec.kinds.begin(), spec.kinds.end());
    std::uniform_int_distribution<std::size_t> kind_dist(0, kinds.size() - 1);
    std::uniform_int_distribution<int> size_dist(static_cast<int>(spec.min_size), static_cast<int>(spec.max_size));
    const int n = static_cast<int>(spec.image_size);
    for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
        SceneShape s;
        s.id = id;
        s.kind = kinds[kind_dist(rng)];
        s.w = size_dist(rng);
        s.h = s.kind == ShapeKind::disc ? s.w : size_dist(rng);
        s.x = std::uniform_int_distribution<int>(0, n - s.w)(rng);
        s.y = std::uniform_int_distribution<int>(0, n - s.h)(rng);
        s.color = contrasting_color(bg.base, rng);
        if (std::all_of(others.begin(), others.end(), [&](const SceneShape& o) { return separated(s, o); })) return s;
    }
    return std::nullopt;
}

Tensor add_noise(const Tensor& clean, double sigma, std::mt19937_64& rng) {
    std::vector<double> v(clean.data().begin(), clean.data().end());
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& x : v) x = std::clamp(x + (sigma > 0.0 ? noise(rng) : 0.0), 0.0, 1.0);
    return Tensor::from(clean.shape(), std::move(v));
}

}  // namespace

std::pair<Scene, Scene> synth_scenes(const SynthSpec& spec, std::size_t index) {
    spec.validate();
    auto rng = sample_rng(spec.seed, index, 0);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    Scene a;
    auto& bg = a.background;
    // Dark, nearly grey terrain; shapes are drawn from the bright half of the cube.
    const double grey = kBackgroundLow + (kBackgroundHigh - kBackgroundLow) * u(rng);
    for (double& c : bg.base) c = grey + kBackgroundTint * u(rng);
    bg.amplitude = 0.05 + 0.1 * u(rng);
    bg.freq_x = 0.1 + 0.3 * u(rng);
    bg.freq_y = 0.1 + 0.3 * u(rng);
    bg.phase_x = 2.0 * std::numbers::pi * u(rng);
    bg.phase_y = 2.0 * std::numbers::pi * u(rng);

    std::uint32_t next_id = 1;
    const std::size_t shapes =
        std::uniform_int_distribution<std::size_t>(spec.min_shapes, spec.max_shapes)(rng);
    for (std::size_t i = 0; i < shapes; ++i) {
        if (auto s = place_shape(spec, bg, a.shapes, next_id, rng)) {
            a.shapes.push_back(*s);
            ++next_id;
        }
    }

    const std::uint32_t first_new_id = next_id;
    Scene b = a;
    if (u(rng) < spec.change_probability) {
        const int edits = std::uniform_int_distribution<int>(1, 2)(rng);
        for (int e = 0; e < edits; ++e) {
            const bool remove = !b.shapes.empty() && u(rng) < 0.5;
            if (remove) {
                const auto victim = std::uniform_int_distribution<std::size_t>(0, b.shapes.size() - 1)(rng);
                b.shapes.erase(b.shapes.begin() + static_cast<std::ptrdiff_t>(victim));
            } else if (auto s = place_shape(spec, bg, b.shapes, next_id, rng)) {
                b.shapes.push_back(*s);
                ++next_id;
            }
        }
    }
    if (u(rng) < spec.recolor_probability) {
        std::vector<std::size_t> kept;
        for (std::size_t i = 0; i < b.shapes.size(); ++i) {
            if (b.shapes[i].id < first_new_id) kept.push_back(i);
        }
        if (!kept.empty()) {
            auto& s = b.shapes[kept[std::uniform_int_distribution<std::size_t>(0, kept.size() - 1)(rng)]];
            s.color = contrasting_color(bg.base, rng);
        }
    }
    return {std::move(a), std::move(b)};
}

std::string synth_id(std::size_t index) {
    std::ostringstream os;
    os << "s" << std::setw(5) << std::setfill('0') << index;
    return os.str();
}

ChangeSample synth_sample(const SynthSpec& spec, std::size_t index) {
    const auto [a, b] = synth_scenes(spec, index);
    auto noise_a = sample_rng(spec.seed, index, 1);
    auto noise_b = sample_rng(spec.seed, index, 2);
    ChangeSample s;
    s.id = synth_id(index);
    s.image_a = add_noise(render(a, spec.image_size), spec.noise, noise_a);
    s.image_b = add_noise(render(b, spec.image_size), spec.noise, noise_b);
    s.mask = change_mask(a, b, spec.image_size);
    return s;
}

DatasetManifest generate_synthetic(const SynthSpec& spec, const fs::path& root) {
    spec.validate();
    fs::create_directories(root);
    DatasetManifest m;
    m.root = root;
    for (std::size_t i = 0; i < spec.count; ++i) {
        const ChangeSample s = synth_sample(spec, i);
        save_sample(root, s);
        m.ids.push_back(s.id);
        m.splits.push_back(i + spec.test_count >= spec.count ? "test" : "train");
    }
    write_manifest(m);
    return m;
}

// -- augmentation ------------------------------------------------------------------------

AugmentDecision draw_augment(std::size_t height, std::size_t width, std::size_t crop, std::mt19937_64& rng) {
    if (crop == 0 || crop > height || crop > width) {
        throw DatasetError("crop size " + std::to_string(crop) + " does not fit a " + std::to_string(height) + "x" +
                           std::to_string(width) + " sample");
    }
    AugmentDecision d;
    d.crop = crop;
    d.top = std::uniform_int_distribution<std::size_t>(0, height - crop)(rng);
    d.left = std::uniform_int_distribution<std::size_t>(0, width - crop)(rng);
    d.hflip = std::bernoulli_distribution(0.5)(rng);
    d.vflip = std::bernoulli_distribution(0.5)(rng);
    return d;
}

namespace {

// Source index in the original frame for output pixel (y, x).
std::size_t source_index(const AugmentDecision& d, std::size_t width, std::size_t y, std::size_t x) {
    const std::size_t sy = d.top + (d.vflip ? d.crop - 1 - y : y);
    const std::size_t sx = d.left + (d.hflip ? d.crop - 1 - x : x);
    return sy * width + sx;
}

Tensor transform_image(const Tensor& img, const AugmentDecision& d) {
    const std::size_t h = img.dim(1), w = img.dim(2), n = d.crop;
    const auto src = img.data();
    std::vector<double> out(3 * n * n);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) out[(c * n + y) * n + x] = src[c * h * w + source_index(d, w, y, x)];
        }
    }
    return Tensor::from({3, n, n}, std::move(out));
}

}  // namespace

ChangeSample apply_augment(const ChangeSample& sample, const AugmentDecision& d) {
    if (d.top + d.crop > sample.height() || d.left + d.crop > sample.width() || d.crop == 0) {
        throw DatasetError("augment window out of bounds for sample " + sample.id);
    }
    ChangeSample out;
    out.id = sample.id;
    out.image_a = transform_image(sample.image_a, d);
    out.image_b = transform_image(sample.image_b, d);
    out.mask = Mask(d.crop, d.crop);
    for (std::size_t y = 0; y < d.crop; ++y) {
        for (std::size_t x = 0; x < d.crop; ++x) out.mask.at(y, x) = sample.mask.data[source_index(d, sample.width(), y, x)];
    }
    return out;
}

ChangeSample augment(const ChangeSample& sample, std::size_t crop, std::mt19937_64& rng) {
    return apply_augment(sample, draw_augment(sample.height(), sample.width(), crop, rng));
}

// -- splitting ------------------------------------------------------------------------------

SplitResult split_dataset(const std::vector<std::string>& ids, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0,1)");
    const std::size_t n = ids.size();
    if (n < 2) throw DatasetError("cannot split fewer than 2 samples");
    std::vector<std::string> order = ids;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto val = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))), 1,
                                             n - 1);
    SplitResult r;
    r.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val));
    r.train.assign(order.begin() + static_cast<std::ptrdiff_t>(val), order.end());
    return r;
}

}  // namespace pvcd
