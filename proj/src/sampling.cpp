#include "df2am/sampling.hpp"

#include <algorithm>
#include <numeric>

#include "df2am/errors.hpp"

namespace df2am {

void DatasetIndex::validate() const {
    if (rgb.size() != ir.size()) throw ConfigError("dataset index: modality identity counts differ");
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        if (rgb[i].empty() || ir[i].empty()) {
            throw ConfigError("dataset index: identity " + std::to_string(i) + " lacks samples in a modality");
        }
    }
}

void BatchSpec::validate() const {
    if (identities < 2) throw ConfigError("batch: N* must be at least 2");
    if (per_identity < 2) throw ConfigError("batch: M* must be at least 2");
}

namespace {

std::vector<std::size_t> half(const std::vector<std::size_t>& v, bool first) {
    const std::size_t k = v.size() / 2;
    return first ? std::vector<std::size_t>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k))
                 : std::vector<std::size_t>(v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
}

void draw_from(const std::vector<std::size_t>& pool, std::size_t count, Rng& rng, std::vector<std::size_t>& out) {
    // Scarce pools: every sample once in shuffled order, the shortfall drawn with replacement.
    std::vector<std::size_t> copy = pool;
    const std::size_t distinct = std::min(count, copy.size());
    for (std::size_t i = 0; i < distinct; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(copy.size() - i));
        std::swap(copy[i], copy[j]);
        out.push_back(copy[i]);
    }
    for (std::size_t i = distinct; i < count; ++i) out.push_back(pool[static_cast<std::size_t>(rng.below(pool.size()))]);
}

// k distinct identities from [0, n) excluding `taken`.
std::vector<std::size_t> choose_identities(std::size_t n, std::size_t k, const std::vector<std::size_t>& taken,
                                           Rng& rng) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < n; ++i)
        if (std::find(taken.begin(), taken.end(), i) == taken.end()) pool.push_back(i);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

}  // namespace

std::vector<std::size_t> Batch::rgb_samples() const { return half(samples, true); }
std::vector<std::size_t> Batch::ir_samples() const { return half(samples, false); }
std::vector<std::size_t> Batch::rgb_labels() const { return half(labels, true); }
std::vector<std::size_t> Batch::ir_labels() const { return half(labels, false); }

Batch draw_batch(const DatasetIndex& index, const BatchSpec& spec, const std::vector<std::size_t>& identities,
                 Rng& rng) {
    spec.validate();
    if (identities.size() != spec.identities) {
        throw ConfigError("draw_batch: expected " + std::to_string(spec.identities) + " identities");
    }
    Batch b;
    std::vector<std::size_t> rgb, ir;
    for (auto id : identities) {
        if (id >= index.identity_count()) throw LabelError("draw_batch: identity " + std::to_string(id) + " out of range");
        draw_from(index.rgb[id], spec.per_identity, rng, rgb);
    }
    for (auto id : identities) draw_from(index.ir[id], spec.per_identity, rng, ir);
    for (auto s : rgb) {
        b.samples.push_back(s);
        b.modality.push_back(Modality::RGB);
    }
    for (auto s : ir) {
        b.samples.push_back(s);
        b.modality.push_back(Modality::IR);
    }
    for (int pass = 0; pass < 2; ++pass)
        for (auto id : identities)
            for (std::size_t m = 0; m < spec.per_identity; ++m) b.labels.push_back(id);
    return b;
}

Batch sample_batch(const DatasetIndex& index, const BatchSpec& spec, Rng& rng) {
    spec.validate();
    if (index.identity_count() < spec.identities) {
        throw ConfigError("sample_batch: dataset has " + std::to_string(index.identity_count()) +
                          " identities, fewer than N*=" + std::to_string(spec.identities));
    }
    auto ids = choose_identities(index.identity_count(), spec.identities, {}, rng);
    return draw_batch(index, spec, ids, rng);
}

EpochSampler::EpochSampler(const DatasetIndex& index, BatchSpec spec, std::uint64_t seed)
    : index_(&index), spec_(spec), rng_(seed) {
    spec_.validate();
    index.validate();
    if (index.identity_count() < spec_.identities) {
        throw ConfigError("sampler: dataset has " + std::to_string(index.identity_count()) +
                          " identities, fewer than N*=" + std::to_string(spec_.identities));
    }
}

std::size_t EpochSampler::batches_per_epoch() const {
    return (index_->identity_count() + spec_.identities - 1) / spec_.identities;
}

std::vector<Batch> EpochSampler::next_epoch() {
    const std::size_t n = index_->identity_count();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng_.shuffle(order);
    std::vector<Batch> out;
    for (std::size_t start = 0; start < n; start += spec_.identities) {
        const std::size_t end = std::min(n, start + spec_.identities);
        std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(end));
        if (chunk.size() < spec_.identities) {
            auto extra = choose_identities(n, spec_.identities - chunk.size(), chunk, rng_);
            chunk.insert(chunk.end(), extra.begin(), extra.end());
        }
        out.push_back(draw_batch(*index_, spec_, chunk, rng_));
    }
    return out;
}

}  // namespace df2am
