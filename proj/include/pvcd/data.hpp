#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pvcd/metrics.hpp"
#include "pvcd/tensor.hpp"

namespace pvcd {

/// Two co-registered frames ([3,H,W], values in [0,1]) and their change mask.
struct ChangeSample {
    std::string id;
    Tensor image_a;
    Tensor image_b;
    Mask mask;

    std::size_t height() const { return mask.height; }
    std::size_t width() const { return mask.width; }
};

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// -- on-disk layout ------------------------------------------------------------
//   root/A/<id>.ppm, root/B/<id>.ppm, root/label/<id>.pgm, root/manifest.json

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<std::string> ids;
    std::vector<std::string> splits;  // parallel to ids: "train", "val" or "test"

    std::vector<std::string> ids_in(const std::string& split) const;
};

void write_manifest(const DatasetManifest& manifest);
/// Reads root/manifest.json, or lists root/A/*.ppm (all tagged "train") when
/// there is no manifest.
DatasetManifest read_manifest(const std::filesystem::path& root);

ChangeSample load_sample(const std::filesystem::path& root, const std::string& id);
/// Loads every sample, or only those tagged `split`. Masks are binarized
/// (any nonzero value is a change).
std::vector<ChangeSample> load_dataset(const std::filesystem::path& root, const std::optional<std::string>& split = {});
void save_sample(const std::filesystem::path& root, const ChangeSample& sample);

/// 8-bit quantization used on disk: round(clamp(v, 0, 1) * 255).
std::uint8_t quantize(double v);

// -- synthetic scenes ------------------------------------------------------------

enum class ShapeKind { rectangle, disc };

struct SceneShape {
    std::uint32_t id = 0;  // identity survives recoloring
    ShapeKind kind = ShapeKind::rectangle;
    int x = 0, y = 0;  // top-left of the bounding box
    int w = 1, h = 1;  // discs use a w x w box
    std::array<double, 3> color{};

    bool covers(int px, int py) const;
};

struct Background {
    std::array<double, 3> base{0.5, 0.5, 0.5};
    double amplitude = 0.0;
    double freq_x = 0.0, freq_y = 0.0, phase_x = 0.0, phase_y = 0.0;

    std::array<double, 3> at(int x, int y) const;
};

/// Shapes in drawing order; later shapes paint over earlier ones.
struct Scene {
    Background background;
    std::vector<SceneShape> shapes;
};

/// Id of the topmost shape per pixel (0 = background).
std::vector<std::uint32_t> label_map(const Scene& scene, std::size_t size);
/// Pixels whose covering shape differs between the two scenes. Recoloring a
/// shape keeps its id and therefore is not a change.
Mask change_mask(const Scene& before, const Scene& after, std::size_t size);
/// Renders a noise-free [3,size,size] frame.
Tensor render(const Scene& scene, std::size_t size);

struct SynthSpec {
    std::size_t count = 250;       // total samples
    std::size_t test_count = 50;   // the last `test_count` ids are tagged "test"
    std::size_t image_size = 64;
    std::set<ShapeKind> kinds{ShapeKind::rectangle, ShapeKind::disc};
    std::size_t min_shapes = 1, max_shapes = 4;  // per frame A
    std::size_t min_size = 12, max_size = 28;    // bounding box side in pixels
    double change_probability = 0.75;            // per sample: some shapes added or removed
    double recolor_probability = 0.2;            // per sample: one kept shape changes color
    double noise = 0.05;                         // Gaussian sigma, per frame and pixel
    std::uint64_t seed = 0;

    void validate() const;
};

/// Bitemporal scene pair for sample `index`; a pure function of (spec, index).
std::pair<Scene, Scene> synth_scenes(const SynthSpec& spec, std::size_t index);
/// In-memory sample (before 8-bit quantization) for `index`.
ChangeSample synth_sample(const SynthSpec& spec, std::size_t index);
std::string synth_id(std::size_t index);
/// Writes the whole dataset plus manifest under `root`.
DatasetManifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& root);

// -- augmentation -------------------------------------------------------------------

struct AugmentDecision {
    std::size_t top = 0, left = 0, crop = 0;
    bool hflip = false, vflip = false;
};

/// Throws DatasetError if `crop` exceeds the frame.
AugmentDecision draw_augment(std::size_t height, std::size_t width, std::size_t crop, std::mt19937_64& rng);
/// Crops, then flips; the same transform is applied to both frames and the mask.
ChangeSample apply_augment(const ChangeSample& sample, const AugmentDecision& decision);
ChangeSample augment(const ChangeSample& sample, std::size_t crop, std::mt19937_64& rng);

// -- splitting --------------------------------------------------------------------------

struct SplitResult {
    std::vector<std::string> train;
    std::vector<std::string> val;
};

/// Seeded shuffle, then |val| = round(ratio * n) clamped to [1, n-1].
SplitResult split_dataset(const std::vector<std::string>& ids, double ratio, std::uint64_t seed);

}  // namespace pvcd
