// Copyright 2026 The PEPL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Procedural fine-grained image dataset.
//
// Classes are grouped into families. Every image of a family carries the same
// large coarse shape over the same background distribution; the class inside
// a family is told apart only by a small marker (its pattern and the image
// zone it sits in). A rectangle cut out of one image therefore often holds
// the whole class cue, or none of it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "pepl/rng.hpp"
#include "pepl/tensor.hpp"

namespace pepl {

struct SyntheticSpec {
    std::size_t num_classes = 10;
    std::size_t per_class = 100;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t num_families = 5;
    std::size_t marker_min = 5;
    std::size_t marker_max = 7;
    double noise = 0.12;
    double marker_contrast = 0.7;
    std::uint64_t seed = 7;

    std::size_t channels() const { return 3; }
    std::size_t classes_per_family() const { return (num_classes + num_families - 1) / num_families; }
    std::size_t family_of(std::size_t cls) const { return cls % num_families; }
    std::size_t member_of(std::size_t cls) const { return cls / num_families; }
    /// Marker pattern id; distinct within a family (the only within-family cue).
    std::size_t marker_type_of(std::size_t cls) const { return member_of(cls); }
    /// One of four corner zones, shared by a whole family.
    std::size_t zone_of(std::size_t cls) const { return family_of(cls) % 4; }

    void validate() const {
        require(num_classes >= 2, "need at least 2 classes");
        require(per_class >= 1, "need at least one image per class");
        require(num_families >= 1 && num_families <= num_classes, "families must be in [1, num_classes]");
        require(classes_per_family() <= 4, "at most 4 classes per family (4 marker patterns)");
        require(marker_min >= 3 && marker_min <= marker_max, "marker size range must be >= 3 and ordered");
        require(marker_max <= height / 2 && marker_max <= width / 2, "marker size exceeds the image size");
        require(static_cast<double>(marker_max * marker_max) <= 0.1 * static_cast<double>(height * width),
                "marker box would exceed 10% of the image area");
        require(noise >= 0.0 && noise <= 0.5, "noise level must lie in [0, 0.5]");
        require(marker_contrast > 0.0 && marker_contrast <= 1.0, "marker contrast must lie in (0, 1]");
    }

    bool operator==(const SyntheticSpec&) const = default;
};

struct Box {
    std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open
    std::size_t area() const { return (y1 - y0) * (x1 - x0); }
    bool operator==(const Box&) const = default;
};

struct Dataset {
    SyntheticSpec spec;
    std::size_t count = 0;
    std::vector<std::uint8_t> pixels;  // [count x 3 x H x W]
    std::vector<int> labels;
    std::vector<Box> marker_boxes;

    std::size_t image_size() const { return spec.channels() * spec.height * spec.width; }
    std::size_t num_classes() const { return spec.num_classes; }

    /// Image scaled to [-0.5, 0.5].
    Planes<float> image(std::size_t i) const {
        Planes<float> p(spec.channels(), spec.height, spec.width);
        const std::uint8_t* src = pixels.data() + i * image_size();
        for (std::size_t k = 0; k < p.data.size(); ++k) p.data[k] = static_cast<float>(src[k]) / 255.0f - 0.5f;
        return p;
    }

    bool operator==(const Dataset&) const = default;
};

namespace detail {

struct Rgb {
    double r, g, b;
};

inline Rgb family_background(std::size_t family) {
    static constexpr std::array<Rgb, 8> kBg{{{0.20, 0.25, 0.30},
                                             {0.30, 0.22, 0.18},
                                             {0.18, 0.28, 0.20},
                                             {0.27, 0.20, 0.30},
                                             {0.25, 0.25, 0.22},
                                             {0.15, 0.20, 0.32},
                                             {0.32, 0.28, 0.16},
                                             {0.22, 0.30, 0.28}}};
    return kBg[family % kBg.size()];
}

inline Rgb family_shape_color(std::size_t family) {
    static constexpr std::array<Rgb, 8> kFg{{{0.75, 0.45, 0.30},
                                             {0.35, 0.60, 0.75},
                                             {0.70, 0.70, 0.35},
                                             {0.45, 0.75, 0.45},
                                             {0.70, 0.40, 0.65},
                                             {0.55, 0.55, 0.75},
                                             {0.40, 0.70, 0.65},
                                             {0.75, 0.60, 0.50}}};
    return kFg[family % kFg.size()];
}

/// Coarse family shape membership test; (dy, dx) relative to centre, r = radius.
inline bool inside_shape(std::size_t family, double dy, double dx, double r) {
    const double ady = std::abs(dy), adx = std::abs(dx);
    switch (family % 5) {
        case 0: return dy * dy + dx * dx <= r * r;                         // disk
        case 1: return ady <= 0.8 * r && adx <= 0.8 * r;                   // square
        case 2: return dy <= 0.7 * r && dy >= -r && adx <= 0.5 * (dy + r); // triangle
        case 3: return ady + adx <= r;                                     // diamond
        default: {                                                         // ring
            const double d2 = dy * dy + dx * dx;
            return d2 <= r * r && d2 >= 0.3 * r * r;
        }
    }
}

/// Marker pattern membership on an s x s cell; (y, x) in [0, s).
inline bool marker_pixel(std::size_t type, std::size_t y, std::size_t x, std::size_t s) {
    const std::size_t mid = s / 2;
    // The first two patterns have (almost) equal mass, so pixel means cannot separate them.
    switch (type % 4) {
        case 0: return y == mid || x == mid;                              // plus
        case 1: return y == x || y + x + 1 == s;                          // cross
        case 2: return y == 0 || x == 0 || y + 1 == s || x + 1 == s;      // hollow frame
        default: return true;                                             // solid block
    }
}

}  // namespace detail

/// Deterministic for a fixed spec (including the seed).
inline Dataset generate(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t H = spec.height, W = spec.width, C = 3;
    Dataset ds;
    ds.spec = spec;
    ds.count = spec.num_classes * spec.per_class;
    ds.pixels.resize(ds.count * C * H * W);
    ds.labels.resize(ds.count);
    ds.marker_boxes.resize(ds.count);

    Rng rng = derive_rng(spec.seed, {stream::kDataGen});
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<double> img(C * H * W);
    for (std::size_t k = 0; k < ds.count; ++k) {
        const std::size_t cls = k % spec.num_classes;
        const std::size_t fam = spec.family_of(cls);
        ds.labels[k] = static_cast<int>(cls);

        const auto bg = detail::family_background(fam);
        const auto fg = detail::family_shape_color(fam);
        const double jitter = 0.08 * (u01(rng) - 0.5);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                img[(0 * H + y) * W + x] = bg.r + jitter;
                img[(1 * H + y) * W + x] = bg.g + jitter;
                img[(2 * H + y) * W + x] = bg.b + jitter;
            }

        const double cy = 0.5 * static_cast<double>(H) + (u01(rng) - 0.5) * 0.2 * static_cast<double>(H);
        const double cx = 0.5 * static_cast<double>(W) + (u01(rng) - 0.5) * 0.2 * static_cast<double>(W);
        const double r = (0.26 + 0.08 * u01(rng)) * static_cast<double>(std::min(H, W));
        const double shade = 0.85 + 0.3 * u01(rng);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                if (detail::inside_shape(fam, static_cast<double>(y) + 0.5 - cy, static_cast<double>(x) + 0.5 - cx, r)) {
                    img[(0 * H + y) * W + x] = fg.r * shade;
                    img[(1 * H + y) * W + x] = fg.g * shade;
                    img[(2 * H + y) * W + x] = fg.b * shade;
                }

        // Marker: pattern and corner zone depend on the class.
        std::uniform_int_distribution<std::size_t> size_d(spec.marker_min, spec.marker_max);
        const std::size_t s = size_d(rng);
        const std::size_t zone = spec.zone_of(cls);
        const std::size_t half_h = H / 2, half_w = W / 2;
        const std::size_t zy = (zone / 2) * half_h, zx = (zone % 2) * half_w;
        std::uniform_int_distribution<std::size_t> oy(1, half_h - s - 1), ox(1, half_w - s - 1);
        const std::size_t my = zy + oy(rng), mx = zx + ox(rng);
        const double mark = spec.marker_contrast * (0.9 + 0.2 * u01(rng));
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x)
                if (detail::marker_pixel(spec.marker_type_of(cls), y, x, s))
                    for (std::size_t ch = 0; ch < C; ++ch) {
                        double& v = img[(ch * H + my + y) * W + mx + x];
                        v = std::min(1.0, v + mark);
                    }
        ds.marker_boxes[k] = Box{my, mx, my + s, mx + s};

        std::uint8_t* dst = ds.pixels.data() + k * C * H * W;
        for (std::size_t p = 0; p < img.size(); ++p) {
            const double v = std::clamp(img[p] + spec.noise * gauss(rng), 0.0, 1.0);
            dst[p] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
    return ds;
}

struct SplitSpec {
    double label_fraction = 0.1;
    double test_fraction = 0.2;
    bool stratified = true;
    std::uint64_t seed = 7;

    void validate() const {
        require(label_fraction > 0.0 && label_fraction <= 1.0, "label fraction must lie in (0, 1]");
        require(test_fraction >= 0.0 && test_fraction < 1.0, "test fraction must lie in [0, 1)");
    }
};

struct Splits {
    std::vector<std::size_t> labeled, unlabeled, test;
    bool operator==(const Splits&) const = default;
};

/// Stratified by default. The test part depends only on the test fraction and
/// seed, so changing the label fraction keeps the same test set.
inline Splits split(const Dataset& ds, const SplitSpec& spec) {
    spec.validate();
    Rng rng = derive_rng(spec.seed, {stream::kSplit});
    Splits out;

    if (!spec.stratified) {
        std::vector<std::size_t> ids(ds.count);
        std::iota(ids.begin(), ids.end(), std::size_t{0});
        std::shuffle(ids.begin(), ids.end(), rng);
        const auto n_test = static_cast<std::size_t>(std::lround(spec.test_fraction * static_cast<double>(ds.count)));
        const std::size_t n_train = ds.count - n_test;
        const auto n_lab = static_cast<std::size_t>(std::lround(spec.label_fraction * static_cast<double>(n_train)));
        require(n_lab >= 1, "label fraction leaves no labeled samples");
        out.test.assign(ids.begin(), ids.begin() + static_cast<long>(n_test));
        out.labeled.assign(ids.begin() + static_cast<long>(n_test), ids.begin() + static_cast<long>(n_test + n_lab));
        out.unlabeled.assign(ids.begin() + static_cast<long>(n_test + n_lab), ids.end());
    } else {
        const std::size_t C = ds.num_classes();
        std::vector<std::vector<std::size_t>> by_class(C);
        for (std::size_t i = 0; i < ds.count; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
        for (auto& ids : by_class) std::shuffle(ids.begin(), ids.end(), rng);

        std::vector<std::size_t> n_test(C), n_train(C);
        std::size_t total_train = 0;
        for (std::size_t c = 0; c < C; ++c) {
            n_test[c] = static_cast<std::size_t>(std::lround(spec.test_fraction * static_cast<double>(by_class[c].size())));
            n_train[c] = by_class[c].size() - n_test[c];
            total_train += n_train[c];
        }
        // Largest-remainder allocation keeps per-class counts within one of each other.
        const auto target = static_cast<std::size_t>(std::lround(spec.label_fraction * static_cast<double>(total_train)));
        std::vector<std::size_t> n_lab(C);
        std::vector<std::pair<double, std::size_t>> rem;
        std::size_t assigned = 0;
        for (std::size_t c = 0; c < C; ++c) {
            const double exact = spec.label_fraction * static_cast<double>(n_train[c]);
            n_lab[c] = static_cast<std::size_t>(std::floor(exact));
            assigned += n_lab[c];
            rem.emplace_back(exact - std::floor(exact), c);
        }
        std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
        for (std::size_t k = 0; assigned < target && k < rem.size(); ++k, ++assigned) ++n_lab[rem[k].second];
        for (std::size_t c = 0; c < C; ++c) {
            require(n_lab[c] >= 1, "stratified split leaves class " + std::to_string(c) + " without labeled samples");
            const auto& ids = by_class[c];
            out.test.insert(out.test.end(), ids.begin(), ids.begin() + static_cast<long>(n_test[c]));
            out.labeled.insert(out.labeled.end(), ids.begin() + static_cast<long>(n_test[c]),
                               ids.begin() + static_cast<long>(n_test[c] + n_lab[c]));
            out.unlabeled.insert(out.unlabeled.end(), ids.begin() + static_cast<long>(n_test[c] + n_lab[c]), ids.end());
        }
    }
    std::sort(out.labeled.begin(), out.labeled.end());
    std::sort(out.unlabeled.begin(), out.unlabeled.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

/// Weak augmentation: random horizontal flip and a translation of up to
/// `max_shift` pixels with zero padding (pad-and-crop).
template <typename T, typename R>
Planes<T> weak_augment(const Planes<T>& in, R& rng, int max_shift = 2) {
    std::bernoulli_distribution flip(0.5);
    std::uniform_int_distribution<int> shift(-max_shift, max_shift);
    const bool f = flip(rng);
    const int dy = shift(rng), dx = shift(rng);
    Planes<T> out(in.c, in.h, in.w, T{});
    const int H = static_cast<int>(in.h), W = static_cast<int>(in.w);
    for (std::size_t ch = 0; ch < in.c; ++ch)
        for (int y = 0; y < H; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= H) continue;
            for (int x = 0; x < W; ++x) {
                int sx = x + dx;
                if (sx < 0 || sx >= W) continue;
                if (f) sx = W - 1 - sx;
                out.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                    in.at(ch, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
        }
    return out;
}

// ---- container ---------------------------------------------------------------

inline nlohmann::json to_json(const SyntheticSpec& s) {
    return {{"num_classes", s.num_classes}, {"per_class", s.per_class},   {"height", s.height},
            {"width", s.width},             {"num_families", s.num_families}, {"marker_min", s.marker_min},
            {"marker_max", s.marker_max},   {"noise", s.noise},           {"marker_contrast", s.marker_contrast},
            {"seed", s.seed}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.num_classes = j.at("num_classes").get<std::size_t>();
    s.per_class = j.at("per_class").get<std::size_t>();
    s.height = j.at("height").get<std::size_t>();
    s.width = j.at("width").get<std::size_t>();
    s.num_families = j.at("num_families").get<std::size_t>();
    s.marker_min = j.at("marker_min").get<std::size_t>();
    s.marker_max = j.at("marker_max").get<std::size_t>();
    s.noise = j.at("noise").get<double>();
    s.marker_contrast = j.at("marker_contrast").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

inline std::string class_name(const SyntheticSpec& s, std::size_t cls) {
    static constexpr std::array<const char*, 4> kPattern{"plus", "cross", "frame", "block"};
    static constexpr std::array<const char*, 4> kZone{"tl", "tr", "bl", "br"};
    return "fam" + std::to_string(s.family_of(cls)) + "_" + kPattern[s.marker_type_of(cls) % 4] + "_" +
           kZone[s.zone_of(cls)];
}

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kImagesName = "images.bin";

/// Writes `manifest.json` (spec, class names, counts, labels, marker boxes,
/// split membership) and `images.bin` (uint8, [N x 3 x H x W]).
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds, const Splits& splits,
                         const SplitSpec& split_spec) {
    std::filesystem::create_directories(dir);
    nlohmann::json m;
    m["format"] = "pepl-synthetic-v1";
    m["spec"] = to_json(ds.spec);
    m["count"] = ds.count;
    m["image_shape"] = {3, ds.spec.height, ds.spec.width};
    std::vector<std::string> names;
    std::vector<std::size_t> counts(ds.num_classes(), 0);
    for (std::size_t c = 0; c < ds.num_classes(); ++c) names.push_back(class_name(ds.spec, c));
    for (int y : ds.labels) ++counts[static_cast<std::size_t>(y)];
    m["class_names"] = names;
    m["class_counts"] = counts;
    m["labels"] = ds.labels;
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : ds.marker_boxes) boxes.push_back({b.y0, b.x0, b.y1, b.x1});
    m["marker_boxes"] = boxes;
    m["split"] = {{"label_fraction", split_spec.label_fraction},
                  {"test_fraction", split_spec.test_fraction},
                  {"stratified", split_spec.stratified},
                  {"seed", split_spec.seed},
                  {"labeled", splits.labeled},
                  {"unlabeled", splits.unlabeled},
                  {"test", splits.test}};
    std::ofstream(dir / kManifestName) << m.dump(1) << '\n';
    std::ofstream blob(dir / kImagesName, std::ios::binary);
    blob.write(reinterpret_cast<const char*>(ds.pixels.data()), static_cast<std::streamsize>(ds.pixels.size()));
    require(static_cast<bool>(blob), "failed writing " + (dir / kImagesName).string());
}

struct LoadedDataset {
    Dataset data;
    Splits splits;
    SplitSpec split_spec;
};

inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / kManifestName);
    require(static_cast<bool>(in), "no dataset manifest at " + (dir / kManifestName).string());
    nlohmann::json m;
    in >> m;
    LoadedDataset out;
    out.data.spec = synthetic_spec_from_json(m.at("spec"));
    out.data.count = m.at("count").get<std::size_t>();
    out.data.labels = m.at("labels").get<std::vector<int>>();
    for (const auto& b : m.at("marker_boxes"))
        out.data.marker_boxes.push_back(Box{b[0].get<std::size_t>(), b[1].get<std::size_t>(), b[2].get<std::size_t>(),
                                            b[3].get<std::size_t>()});
    const auto& s = m.at("split");
    out.split_spec.label_fraction = s.at("label_fraction").get<double>();
    out.split_spec.test_fraction = s.at("test_fraction").get<double>();
    out.split_spec.stratified = s.at("stratified").get<bool>();
    out.split_spec.seed = s.at("seed").get<std::uint64_t>();
    out.splits.labeled = s.at("labeled").get<std::vector<std::size_t>>();
    out.splits.unlabeled = s.at("unlabeled").get<std::vector<std::size_t>>();
    out.splits.test = s.at("test").get<std::vector<std::size_t>>();

    out.data.pixels.resize(out.data.count * out.data.image_size());
    std::ifstream blob(dir / kImagesName, std::ios::binary);
    require(static_cast<bool>(blob), "missing image blob in " + dir.string());
    blob.read(reinterpret_cast<char*>(out.data.pixels.data()), static_cast<std::streamsize>(out.data.pixels.size()));
    require(blob.gcount() == static_cast<std::streamsize>(out.data.pixels.size()), "image blob is truncated");
    require(out.data.labels.size() == out.data.count && out.data.marker_boxes.size() == out.data.count,
            "manifest label/box count does not match image count");
    return out;
}

}  // namespace pepl
