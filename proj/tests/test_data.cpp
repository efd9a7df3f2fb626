#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "df2am/errors.hpp"
#include "df2am/sampling.hpp"
#include "df2am/synthdata.hpp"

using namespace df2am;

namespace {

DatasetIndex toy_index(std::size_t ids, std::size_t per) {
    DatasetIndex idx;
    std::size_t next = 0;
    for (std::size_t i = 0; i < ids; ++i) {
        idx.rgb.emplace_back();
        idx.ir.emplace_back();
        for (std::size_t j = 0; j < per; ++j) idx.rgb.back().push_back(next++);
        for (std::size_t j = 0; j < per; ++j) idx.ir.back().push_back(next++);
    }
    return idx;
}

SynthConfig small_synth() {
    SynthConfig c;
    c.identity_count = 10;
    c.samples_per_identity = 4;
    return c;
}

}  // namespace

TEST_CASE("sample_batch composition and ordering") {
    const DatasetIndex idx = toy_index(12, 6);
    Rng rng(1);
    const Batch b = sample_batch(idx, BatchSpec{8, 4}, rng);
    CHECK(b.samples.size() == 64);
    const auto rl = b.rgb_labels(), il = b.ir_labels();
    CHECK(rl == il);
    CHECK(std::set<std::size_t>(rl.begin(), rl.end()).size() == 8);
    for (std::size_t i = 0; i < 32; ++i) {
        CHECK(b.modality[i] == Modality::RGB);
        CHECK(b.modality[32 + i] == Modality::IR);
        CHECK(rl[i] == rl[(i / 4) * 4]);
        const auto& pool = idx.rgb[rl[i]];
        CHECK(std::find(pool.begin(), pool.end(), b.samples[i]) != pool.end());
    }
    // Without replacement when there are enough samples.
    for (std::size_t g = 0; g < 16; ++g) {
        std::set<std::size_t> s(b.samples.begin() + g * 4, b.samples.begin() + g * 4 + 4);
        CHECK(s.size() == 4);
    }
}

TEST_CASE("pigeonhole: two identities appear in every batch") {
    const DatasetIndex idx = toy_index(2, 3);
    Rng rng(2);
    for (int i = 0; i < 10; ++i) {
        const auto l = sample_batch(idx, BatchSpec{2, 2}, rng).rgb_labels();
        CHECK(std::set<std::size_t>(l.begin(), l.end()) == std::set<std::size_t>{0, 1});
    }
}

TEST_CASE("scarce identity falls back to sampling with replacement") {
    DatasetIndex idx = toy_index(2, 4);
    idx.rgb[0].resize(3);
    Rng rng(3);
    const Batch b = draw_batch(idx, BatchSpec{2, 4}, {0, 1}, rng);
    std::map<std::size_t, int> counts;
    for (std::size_t i = 0; i < 4; ++i) counts[b.samples[i]]++;
    CHECK(counts.size() == 3);
    int total = 0;
    for (auto& [id, n] : counts) {
        CHECK(id < 3);
        total += n;
    }
    CHECK(total == 4);
}

TEST_CASE("sampler errors and determinism") {
    const DatasetIndex idx = toy_index(3, 4);
    Rng rng(4);
    CHECK_THROWS_AS(sample_batch(idx, BatchSpec{4, 2}, rng), ConfigError);
    CHECK_THROWS_AS(BatchSpec({1, 4}).validate(), ConfigError);
    CHECK_THROWS_AS(BatchSpec({4, 1}).validate(), ConfigError);
    Rng a(5), b(5);
    for (int i = 0; i < 5; ++i) CHECK(sample_batch(idx, BatchSpec{2, 2}, a).samples == sample_batch(idx, BatchSpec{2, 2}, b).samples);
}

TEST_CASE("epoch sampler covers every identity") {
    const DatasetIndex idx = toy_index(27, 5);
    EpochSampler s(idx, BatchSpec{8, 4}, 6);
    CHECK(s.batches_per_epoch() == 4);
    for (int e = 0; e < 3; ++e) {
        const auto batches = s.next_epoch();
        CHECK(batches.size() == 4);
        std::set<std::size_t> seen;
        for (const auto& b : batches) {
            const auto l = b.rgb_labels();
            CHECK(std::set<std::size_t>(l.begin(), l.end()).size() == 8);
            seen.insert(l.begin(), l.end());
        }
        CHECK(seen.size() == 27);
    }
}

TEST_CASE("synthetic data is deterministic") {
    const Dataset a = generate(small_synth()), b = generate(small_synth());
    CHECK(a.samples == b.samples);
    SynthConfig other = small_synth();
    other.seed = 8;
    CHECK_FALSE(generate(other).samples == a.samples);
}

TEST_CASE("degenerate rendering gives identical images per identity") {
    SynthConfig c = small_synth();
    c.noise_std = 0;
    c.occlusion_prob = 0;
    c.modality_gap = 0;
    const Dataset d = generate(c);
    for (std::size_t i = 0; i < c.identity_count; ++i) {
        const Array& ref = d.samples[d.index.rgb[i][0]].image;
        for (auto s : d.index.rgb[i]) CHECK(d.samples[s].image == ref);
        for (auto s : d.index.ir[i]) CHECK(d.samples[s].image == ref);
    }
}

TEST_CASE("full occlusion zeroes the bottom half") {
    SynthConfig c = small_synth();
    c.occlusion_prob = 1.0;
    c.occlusion_fraction = 0.5;
    const Dataset d = generate(c);
    for (const auto& s : d.samples) {
        CHECK(s.occluded);
        for (std::size_t ch = 0; ch < c.channels; ++ch)
            for (std::size_t h = c.height / 2; h < c.height; ++h)
                for (std::size_t w = 0; w < c.width; ++w) CHECK(s.image[(ch * c.height + h) * c.width + w] == 0.0);
    }
}

TEST_CASE("nearest centroid on raw images degrades with noise") {
    auto accuracy = [](double noise) {
        SynthConfig c = small_synth();
        c.modality_gap = 0;
        c.occlusion_prob = 0;
        c.noise_std = noise;
        const Dataset d = generate(c);
        const std::size_t dim = d.samples[0].image.size();
        std::vector<std::vector<double>> centroids(c.identity_count, std::vector<double>(dim, 0.0));
        for (std::size_t i = 0; i < c.identity_count; ++i)
            for (auto s : d.index.rgb[i])
                for (std::size_t k = 0; k < dim; ++k) centroids[i][k] += d.samples[s].image[k] / c.samples_per_identity;
        std::size_t right = 0, total = 0;
        for (std::size_t i = 0; i < c.identity_count; ++i)
            for (auto s : d.index.ir[i]) {
                std::size_t best = 0;
                double best_d = 1e300;
                for (std::size_t j = 0; j < c.identity_count; ++j) {
                    double dd = 0;
                    for (std::size_t k = 0; k < dim; ++k) dd += std::pow(d.samples[s].image[k] - centroids[j][k], 2);
                    if (dd < best_d) best_d = dd, best = j;
                }
                right += best == i;
                ++total;
            }
        return static_cast<double>(right) / static_cast<double>(total);
    };
    CHECK(accuracy(1e-6) == 1.0);
    CHECK(accuracy(20.0) < 0.5);
}

TEST_CASE("identity-disjoint split") {
    const Dataset d = generate(small_synth());
    const Split s = split(d, 0.5, 3);
    CHECK(s.train.identities.size() == 5);
    CHECK(s.test.identities.size() == 5);
    std::set<std::size_t> tr(s.train.identities.begin(), s.train.identities.end());
    for (auto i : s.test.identities) CHECK(tr.count(i) == 0);
    CHECK(s.retrieval.query_modality == Modality::IR);
    for (auto q : s.retrieval.query) CHECK(d.samples[q].modality == Modality::IR);
    for (auto g : s.retrieval.gallery) CHECK(d.samples[g].modality == Modality::RGB);

    const Split r = split(d, 0.5, 3, Direction::RgbToIr);
    CHECK(r.retrieval.query_modality == Modality::RGB);
    CHECK(r.retrieval.query.size() == s.retrieval.gallery.size());
    CHECK(r.retrieval.gallery.size() == s.retrieval.query.size());
    CHECK_THROWS_AS(split(d, 0.95, 3), ConfigError);
}

TEST_CASE("dataset file round trip and corruption") {
    const Dataset d = generate(small_synth());
    save_dataset(d, "roundtrip.df2amds");
    const Dataset back = load_dataset("roundtrip.df2amds");
    CHECK(back.samples == d.samples);
    CHECK(back.config == d.config);
    {
        std::ofstream os("broken.df2amds", std::ios::binary);
        os << "not a dataset";
    }
    CHECK_THROWS_AS(load_dataset("broken.df2amds"), IoError);
    CHECK_THROWS_AS(load_dataset("missing.df2amds"), IoError);
}
