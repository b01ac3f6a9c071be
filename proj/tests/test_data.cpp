#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "pvcd/data.hpp"
#include "pvcd/netpbm.hpp"
#include "test_util.hpp"

using namespace pvcd;
using pvcd::testing::random_tensor;
using pvcd::testing::scratch_dir;
using pvcd::testing::values;

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

SynthSpec small_spec(std::uint64_t seed = 4) {
    SynthSpec s;
    s.count = 6;
    s.test_count = 2;
    s.image_size = 32;
    s.min_size = 6;
    s.max_size = 12;
    s.seed = seed;
    return s;
}

ChangeSample numbered_sample(std::size_t h, std::size_t w) {
    ChangeSample s;
    s.id = "n";
    std::vector<double> a(3 * h * w), b(3 * h * w);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(i), b[i] = -static_cast<double>(i);
    s.image_a = Tensor::from({3, h, w}, a);
    s.image_b = Tensor::from({3, h, w}, b);
    s.mask = Mask(h, w);
    for (std::size_t i = 0; i < h * w; ++i) s.mask.data[i] = (i * 7) % 3 == 0;
    return s;
}

}  // namespace

// -- netpbm -----------------------------------------------------------------

TEST(Netpbm, RoundTripPpmAndPgm) {
    Raster rgb{3, 2, 3, 255, {}};
    for (int i = 0; i < 18; ++i) rgb.data.push_back(static_cast<std::uint8_t>(i * 14));
    const Raster back = decode_netpbm(encode_netpbm(rgb));
    EXPECT_EQ(back.width, 3u);
    EXPECT_EQ(back.height, 2u);
    EXPECT_EQ(back.channels, 3u);
    EXPECT_EQ(back.data, rgb.data);

    Raster grey{2, 2, 1, 255, {0, 255, 7, 1}};
    const auto path = scratch_dir("netpbm") / "g.pgm";
    write_netpbm(path, grey);
    EXPECT_EQ(read_netpbm(path).data, grey.data);
    const auto bytes = file_bytes(path);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 2), "P5");
}

TEST(Netpbm, HeaderCommentsAndMaxval) {
    const std::string text = "P5\n# made by hand\n2 1\n# depth\n15\n";
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    bytes.push_back(3);
    bytes.push_back(15);
    const Raster r = decode_netpbm(bytes);
    EXPECT_EQ(r.maxval, 15);
    EXPECT_EQ(r.data, (std::vector<std::uint8_t>{3, 15}));
}

TEST(Netpbm, RejectsMalformedFiles) {
    const auto make = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
    EXPECT_THROW(decode_netpbm(make("P3\n1 1\n255\n0 0 0")), NetpbmError);
    EXPECT_THROW(decode_netpbm(make("P6\n2 2\n255\n\x01\x02")), NetpbmError);
    EXPECT_THROW(decode_netpbm(make("P5\n1 1\n65535\n\x01\x02")), NetpbmError);
    EXPECT_THROW(decode_netpbm(make("P5\n0 1\n255\n")), NetpbmError);
    EXPECT_THROW(read_netpbm("/nonexistent/file.ppm"), NetpbmError);
}

// -- synthetic generator ----------------------------------------------------

TEST(Synth, SamplesArePureFunctionsOfSpecAndIndex) {
    const SynthSpec spec = small_spec();
    const ChangeSample a = synth_sample(spec, 3), b = synth_sample(spec, 3);
    EXPECT_EQ(values(a.image_a), values(b.image_a));
    EXPECT_EQ(values(a.image_b), values(b.image_b));
    EXPECT_EQ(a.mask, b.mask);
    EXPECT_EQ(a.id, "s00003");
    const ChangeSample other = synth_sample(small_spec(5), 3);
    EXPECT_NE(values(a.image_a), values(other.image_a));
}

TEST(Synth, RegenerationIsByteIdentical) {
    const SynthSpec spec = small_spec();
    const auto d1 = scratch_dir("synth1"), d2 = scratch_dir("synth2");
    const DatasetManifest m = generate_synthetic(spec, d1);
    generate_synthetic(spec, d2);
    EXPECT_EQ(m.ids_in("train").size(), 4u);
    EXPECT_EQ(m.ids_in("test"), (std::vector<std::string>{"s00004", "s00005"}));
    for (const auto& id : m.ids) {
        EXPECT_EQ(file_bytes(d1 / "A" / (id + ".ppm")), file_bytes(d2 / "A" / (id + ".ppm")));
        EXPECT_EQ(file_bytes(d1 / "B" / (id + ".ppm")), file_bytes(d2 / "B" / (id + ".ppm")));
        EXPECT_EQ(file_bytes(d1 / "label" / (id + ".pgm")), file_bytes(d2 / "label" / (id + ".pgm")));
    }
    EXPECT_EQ(file_bytes(d1 / "manifest.json"), file_bytes(d2 / "manifest.json"));
}

TEST(Synth, NoChangeProbabilityGivesEmptyMasks) {
    SynthSpec spec = small_spec();
    spec.change_probability = 0.0;
    spec.recolor_probability = 1.0;  // recoloring alone is not a change
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(synth_sample(spec, i).mask.count(), 0u) << i;
}

TEST(Synth, MaskMatchesSceneDifference) {
    const SynthSpec spec = small_spec();
    std::size_t changed = 0;
    for (std::size_t i = 0; i < 20; ++i) {
        const auto [before, after] = synth_scenes(spec, i);
        const auto la = label_map(before, 32), lb = label_map(after, 32);
        const Mask m = synth_sample(spec, i).mask;
        for (std::size_t p = 0; p < la.size(); ++p) EXPECT_EQ(m.data[p], la[p] != lb[p]) << i;
        changed += m.count() > 0;
    }
    EXPECT_GT(changed, 5u);
}

TEST(Synth, SingleAddedSquare) {
    Scene before;
    Scene after = before;
    SceneShape sq;
    sq.id = 1;
    sq.x = 2, sq.y = 3, sq.w = 4, sq.h = 4;
    sq.color = {1.0, 0.0, 0.0};
    after.shapes.push_back(sq);
    const Mask m = change_mask(before, after, 10);
    EXPECT_EQ(m.count(), 16u);
    for (std::size_t y = 0; y < 10; ++y)
        for (std::size_t x = 0; x < 10; ++x) EXPECT_EQ(m.at(y, x), x >= 2 && x < 6 && y >= 3 && y < 7);
    const Tensor img = render(after, 10);
    EXPECT_EQ(img.at({0, 4, 3}), 1.0);
    EXPECT_EQ(img.at({1, 4, 3}), 0.0);
    EXPECT_EQ(img.at({0, 0, 0}), 0.5);  // flat default background
}

TEST(Synth, RecolorIsNotAChange) {
    Scene before;
    SceneShape disc;
    disc.id = 1;
    disc.kind = ShapeKind::disc;
    disc.x = 1, disc.y = 1, disc.w = disc.h = 6;
    before.shapes.push_back(disc);
    Scene after = before;
    after.shapes[0].color = {0.9, 0.9, 0.1};
    EXPECT_EQ(change_mask(before, after, 8).count(), 0u);
    EXPECT_TRUE(disc.covers(4, 4));
    EXPECT_FALSE(disc.covers(1, 1));  // bounding-box corner lies outside the disc
}

TEST(Synth, SpecValidation) {
    SynthSpec s = small_spec();
    s.test_count = s.count;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = small_spec();
    s.max_size = 40;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = small_spec();
    s.change_probability = 1.5;
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

// -- loader -----------------------------------------------------------------

TEST(Loader, RoundTripWithinQuantization) {
    const auto root = scratch_dir("loader");
    const ChangeSample s = synth_sample(small_spec(), 1);
    save_sample(root, s);
    const ChangeSample back = load_sample(root, s.id);
    EXPECT_EQ(back.mask, s.mask);
    for (std::size_t i = 0; i < s.image_a.numel(); ++i) {
        EXPECT_LE(std::abs(back.image_a.data()[i] - s.image_a.data()[i]), 0.5 / 255.0 + 1e-12);
        EXPECT_EQ(quantize(back.image_b.data()[i]), quantize(s.image_b.data()[i]));
    }
    // no manifest: every A/*.ppm is a training sample
    const DatasetManifest m = read_manifest(root);
    EXPECT_EQ(m.ids, (std::vector<std::string>{s.id}));
    EXPECT_EQ(m.splits, (std::vector<std::string>{"train"}));
}

TEST(Loader, ErrorsNameTheSample) {
    const auto root = scratch_dir("loader_err");
    ChangeSample s = synth_sample(small_spec(), 0);
    s.id = "tile_17";
    save_sample(root, s);
    fs::remove(root / "B" / "tile_17.ppm");
    try {
        load_sample(root, "tile_17");
        FAIL() << "expected DatasetError";
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("tile_17"), std::string::npos);
    }
    write_netpbm(root / "B" / "tile_17.ppm", Raster{8, 8, 3, 255, std::vector<std::uint8_t>(192)});
    try {
        load_sample(root, "tile_17");
        FAIL() << "expected DatasetError";
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("tile_17"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("dimension"), std::string::npos);
    }
}

TEST(Loader, NonzeroLabelsAreChanges) {
    const auto root = scratch_dir("loader_bin");
    ChangeSample s = synth_sample(small_spec(), 2);
    save_sample(root, s);
    Raster label{32, 32, 1, 255, std::vector<std::uint8_t>(32 * 32, 0)};
    label.data[5] = 255;
    label.data[6] = 1;
    write_netpbm(root / "label" / (s.id + ".pgm"), label);
    const Mask m = load_sample(root, s.id).mask;
    EXPECT_EQ(m.count(), 2u);
    EXPECT_EQ(m.data[5], 1);
    EXPECT_EQ(m.data[6], 1);
}

TEST(Loader, SplitTagsFilterTheDataset) {
    const auto root = scratch_dir("loader_split");
    generate_synthetic(small_spec(), root);
    EXPECT_EQ(load_dataset(root).size(), 6u);
    EXPECT_EQ(load_dataset(root, "train").size(), 4u);
    EXPECT_EQ(load_dataset(root, "test").size(), 2u);
    EXPECT_TRUE(load_dataset(root, "val").empty());
}

// -- augmentation -----------------------------------------------------------

TEST(Augment, FlipsAreInvolutions) {
    const ChangeSample s = numbered_sample(5, 5);
    for (int flips = 0; flips < 4; ++flips) {
        const AugmentDecision d{0, 0, 5, (flips & 1) != 0, (flips & 2) != 0};
        const ChangeSample twice = apply_augment(apply_augment(s, d), d);
        EXPECT_EQ(values(twice.image_a), values(s.image_a));
        EXPECT_EQ(values(twice.image_b), values(s.image_b));
        EXPECT_EQ(twice.mask, s.mask);
    }
}

TEST(Augment, FullCropWithoutFlipsIsIdentity) {
    const ChangeSample s = numbered_sample(4, 6);
    const ChangeSample out = apply_augment(s, AugmentDecision{0, 1, 4, false, false});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(out.image_a.at({c, y, x}), s.image_a.at({c, y, x + 1}));
}

TEST(Augment, SameTransformForFramesAndMask) {
    const ChangeSample s = numbered_sample(6, 6);
    const AugmentDecision d{1, 2, 4, true, true};
    const ChangeSample out = apply_augment(s, d);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
            const std::size_t sy = 1 + 3 - y, sx = 2 + 3 - x;
            EXPECT_EQ(out.image_a.at({2, y, x}), s.image_a.at({2, sy, sx}));
            EXPECT_EQ(out.image_b.at({0, y, x}), s.image_b.at({0, sy, sx}));
            EXPECT_EQ(out.mask.at(y, x), s.mask.at(sy, sx));
        }
}

TEST(Augment, DrawnWindowsStayInside) {
    std::mt19937_64 rng(3);
    std::set<std::size_t> tops;
    for (int i = 0; i < 200; ++i) {
        const AugmentDecision d = draw_augment(10, 12, 8, rng);
        EXPECT_LE(d.top + d.crop, 10u);
        EXPECT_LE(d.left + d.crop, 12u);
        tops.insert(d.top);
    }
    EXPECT_EQ(tops.size(), 3u);
    EXPECT_THROW(draw_augment(10, 12, 11, rng), DatasetError);
    EXPECT_THROW(draw_augment(10, 12, 0, rng), DatasetError);
}

// -- split ------------------------------------------------------------------

TEST(Split, SizesDisjointAndDeterministic) {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
    const SplitResult a = split_dataset(ids, 0.2, 7), b = split_dataset(ids, 0.2, 7);
    EXPECT_EQ(a.train.size(), 8u);
    EXPECT_EQ(a.val.size(), 2u);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.val, b.val);
    std::set<std::string> all(a.train.begin(), a.train.end());
    all.insert(a.val.begin(), a.val.end());
    EXPECT_EQ(all.size(), 10u);
}

TEST(Split, ClampsToNonEmptySides) {
    EXPECT_EQ(split_dataset({"a", "b", "c"}, 0.01, 0).val.size(), 1u);
    EXPECT_EQ(split_dataset({"a", "b", "c"}, 0.99, 0).train.size(), 1u);
    EXPECT_THROW(split_dataset({"a"}, 0.5, 0), DatasetError);
    EXPECT_THROW(split_dataset({"a", "b"}, 1.0, 0), std::invalid_argument);
}
