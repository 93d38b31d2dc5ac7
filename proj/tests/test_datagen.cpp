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
#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>
#include <tuple>

#include <unistd.h>

#include "pepl/datagen.hpp"

namespace pepl {
namespace {

const Dataset& default_dataset() {
    static const Dataset ds = generate(SyntheticSpec{});
    return ds;
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("pepl_datagen_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    return p;
}

TEST(Generate, Counts) {
    const auto& ds = default_dataset();
    EXPECT_EQ(ds.count, 1000u);
    EXPECT_EQ(ds.pixels.size(), 1000u * 3 * 32 * 32);
    std::map<int, int> per_class;
    std::map<std::size_t, int> per_family;
    for (int y : ds.labels) {
        ++per_class[y];
        ++per_family[ds.spec.family_of(static_cast<std::size_t>(y))];
    }
    ASSERT_EQ(per_class.size(), 10u);
    for (auto [c, n] : per_class) EXPECT_EQ(n, 100) << c;
    ASSERT_EQ(per_family.size(), 5u);
    for (auto [f, n] : per_family) EXPECT_EQ(n, 200) << f;
}

TEST(Generate, DeterministicForSeed) {
    EXPECT_EQ(generate(SyntheticSpec{}), default_dataset());
    SyntheticSpec other;
    other.seed = 8;
    EXPECT_NE(generate(other).pixels, default_dataset().pixels);
}

TEST(Generate, ClassTriplesAreDistinct) {
    SyntheticSpec s;
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
    std::set<std::string> names;
    for (std::size_t c = 0; c < s.num_classes; ++c) {
        seen.insert({s.family_of(c), s.marker_type_of(c), s.zone_of(c)});
        names.insert(class_name(s, c));
    }
    EXPECT_EQ(seen.size(), s.num_classes);
    EXPECT_EQ(names.size(), s.num_classes);
}

TEST(Generate, MarkerBoxesAreSmallAndInside) {
    const auto& ds = default_dataset();
    for (std::size_t i = 0; i < ds.count; ++i) {
        const auto& b = ds.marker_boxes[i];
        ASSERT_LT(b.y0, b.y1);
        ASSERT_LT(b.x0, b.x1);
        ASSERT_LE(b.y1, 32u);
        ASSERT_LE(b.x1, 32u);
        EXPECT_LE(static_cast<double>(b.area()), 0.1 * 32 * 32);
        // the marker sits in its class's corner zone
        const auto zone = ds.spec.zone_of(static_cast<std::size_t>(ds.labels[i]));
        EXPECT_EQ(b.y0 / 16, zone / 2);
        EXPECT_EQ((b.y1 - 1) / 16, zone / 2);
        EXPECT_EQ(b.x0 / 16, zone % 2);
        EXPECT_EQ((b.x1 - 1) / 16, zone % 2);
    }
}

TEST(Generate, RejectsOversizedMarkers) {
    SyntheticSpec s;
    s.marker_max = 11;  // 121 px > 10% of 1024
    EXPECT_THROW(generate(s), Error);
    s = SyntheticSpec{};
    s.height = s.width = 8;
    EXPECT_THROW(generate(s), Error);
    s = SyntheticSpec{};
    s.num_families = 2;  // 5 classes per family
    EXPECT_THROW(generate(s), Error);
}

// Nearest class centroid on raw pixels: the coarse family is easy, the marker is not.
TEST(Generate, RawPixelCentroidsOnlySeeFamilies) {
    const auto& ds = default_dataset();
    const auto sp = split(ds, SplitSpec{});
    const std::size_t D = ds.image_size();
    std::vector<std::vector<double>> centroid(10, std::vector<double>(D, 0.0));
    std::vector<int> n(10, 0);
    for (std::size_t i : sp.unlabeled) {  // plenty of samples per class for stable centroids
        const auto c = static_cast<std::size_t>(ds.labels[i]);
        for (std::size_t p = 0; p < D; ++p) centroid[c][p] += ds.pixels[i * D + p];
        ++n[c];
    }
    for (std::size_t c = 0; c < 10; ++c)
        for (auto& v : centroid[c]) v /= n[c];
    std::size_t hit = 0, fam_hit = 0;
    for (std::size_t i : sp.test) {
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t c = 0; c < 10; ++c) {
            double d = 0.0;
            for (std::size_t p = 0; p < D; ++p) {
                const double e = ds.pixels[i * D + p] - centroid[c][p];
                d += e * e;
            }
            if (d < best_d) best_d = d, best = c;
        }
        hit += static_cast<int>(best) == ds.labels[i];
        fam_hit += ds.spec.family_of(best) == ds.spec.family_of(static_cast<std::size_t>(ds.labels[i]));
    }
    const double acc = static_cast<double>(hit) / sp.test.size();
    const double fam_acc = static_cast<double>(fam_hit) / sp.test.size();
    EXPECT_GT(fam_acc, 0.95);
    EXPECT_LT(acc, 0.5 * fam_acc + 0.15);  // family-level guessing plus a small margin
}

TEST(Split, DeskSizes) {
    const auto sp = split(default_dataset(), SplitSpec{});
    EXPECT_EQ(sp.labeled.size(), 80u);
    EXPECT_EQ(sp.unlabeled.size(), 720u);
    EXPECT_EQ(sp.test.size(), 200u);
}

TEST(Split, PartitionAndDeterminism) {
    const auto& ds = default_dataset();
    for (double f : {0.1, 0.2, 0.3, 0.37}) {
        SplitSpec s;
        s.label_fraction = f;
        const auto sp = split(ds, s);
        EXPECT_EQ(sp, split(ds, s));
        std::set<std::size_t> all;
        for (const auto* part : {&sp.labeled, &sp.unlabeled, &sp.test}) all.insert(part->begin(), part->end());
        EXPECT_EQ(all.size(), ds.count);
        EXPECT_EQ(sp.labeled.size() + sp.unlabeled.size() + sp.test.size(), ds.count);
    }
}

TEST(Split, StratifiedWithinOne) {
    const auto& ds = default_dataset();
    for (double f : {0.1, 0.2, 0.3, 0.37, 0.05}) {
        SplitSpec s;
        s.label_fraction = f;
        const auto sp = split(ds, s);
        std::vector<int> count(10, 0);
        for (auto i : sp.labeled) ++count[static_cast<std::size_t>(ds.labels[i])];
        const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
        EXPECT_LE(*hi - *lo, 1) << f;
        EXPECT_GE(*lo, 1);
    }
}

TEST(Split, TestSetIndependentOfLabelFraction) {
    SplitSpec a, b;
    b.label_fraction = 0.3;
    EXPECT_EQ(split(default_dataset(), a).test, split(default_dataset(), b).test);
}

TEST(Split, FullLabelsLeaveNoUnlabeled) {
    SplitSpec s;
    s.label_fraction = 1.0;
    const auto sp = split(default_dataset(), s);
    EXPECT_TRUE(sp.unlabeled.empty());
    EXPECT_EQ(sp.labeled.size(), 800u);
}

TEST(Split, TooFewLabelsIsAnError) {
    SyntheticSpec small;
    small.per_class = 5;
    SplitSpec s;
    s.label_fraction = 0.1;
    EXPECT_THROW(split(generate(small), s), Error);
    s.label_fraction = 0.0;
    EXPECT_THROW(split(default_dataset(), s), Error);
}

TEST(WeakAugment, ShapePreservingAndDeterministic) {
    const auto img = default_dataset().image(3);
    Rng r1(5), r2(5);
    const auto a = weak_augment(img, r1), b = weak_augment(img, r2);
    EXPECT_EQ(a.data, b.data);
    EXPECT_EQ(a.c, img.c);
    EXPECT_EQ(a.h, img.h);
    // zero shift and no flip is the identity
    Planes<float> ramp(1, 4, 4);
    for (std::size_t k = 0; k < 16; ++k) ramp.data[k] = static_cast<float>(k);
    Rng r3(0);
    bool saw_identity = false, saw_flip = false;
    for (int t = 0; t < 200; ++t) {
        const auto o = weak_augment(ramp, r3, 0);
        saw_identity |= o.data == ramp.data;
        saw_flip |= o.at(0, 0, 0) == 3.0f && o.at(0, 0, 3) == 0.0f;
    }
    EXPECT_TRUE(saw_identity);
    EXPECT_TRUE(saw_flip);
}

TEST(Container, RoundTrip) {
    SyntheticSpec s;
    s.per_class = 10;
    const auto ds = generate(s);
    SplitSpec ss;
    ss.label_fraction = 0.25;
    const auto sp = split(ds, ss);
    const auto dir = scratch_dir("roundtrip");
    save_dataset(dir, ds, sp, ss);
    EXPECT_TRUE(std::filesystem::exists(dir / kManifestName));
    const auto back = load_dataset(dir);
    EXPECT_EQ(back.data, ds);
    EXPECT_EQ(back.splits, sp);
    EXPECT_EQ(back.split_spec.label_fraction, 0.25);
    std::filesystem::remove_all(dir);
}

TEST(Container, MissingOrTruncated) {
    const auto dir = scratch_dir("broken");
    EXPECT_THROW(load_dataset(dir), Error);
    SyntheticSpec s;
    s.per_class = 10;
    const auto ds = generate(s);
    SplitSpec sp;
    sp.label_fraction = 0.5;
    save_dataset(dir, ds, split(ds, sp), sp);
    std::filesystem::resize_file(dir / kImagesName, 100);
    EXPECT_THROW(load_dataset(dir), Error);
    std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace pepl
