#pragma once

#include <cstddef>
#include <vector>

#include "df2am/backbone.hpp"
#include "df2am/rng.hpp"

namespace df2am {

// Per identity, the sample ids available in each modality. Identities are 0..N-1.
struct DatasetIndex {
    std::vector<std::vector<std::size_t>> rgb;
    std::vector<std::vector<std::size_t>> ir;

    std::size_t identity_count() const { return rgb.size(); }
    // Throws ConfigError unless every identity has at least one sample per modality.
    void validate() const;
};

struct BatchSpec {
    std::size_t identities = 8;    // N*
    std::size_t per_identity = 4;  // M*, per modality

    std::size_t k() const { return identities * per_identity; }
    std::size_t batch_size() const { return 2 * k(); }
    // Throws ConfigError unless N* >= 2 and M* >= 2.
    void validate() const;
};

// K RGB samples followed by K IR samples; each block grouped by identity in the same order.
struct Batch {
    std::vector<std::size_t> samples;
    std::vector<std::size_t> labels;
    std::vector<Modality> modality;

    std::size_t k() const { return samples.size() / 2; }
    std::vector<std::size_t> rgb_samples() const;
    std::vector<std::size_t> ir_samples() const;
    std::vector<std::size_t> rgb_labels() const;
    std::vector<std::size_t> ir_labels() const;
};

// Draws M* RGB and M* IR samples for each of the given identities, without replacement
// when an identity has at least M* samples in that modality and with replacement otherwise.
Batch draw_batch(const DatasetIndex& index, const BatchSpec& spec, const std::vector<std::size_t>& identities,
                 Rng& rng);

// N* distinct identities chosen uniformly without replacement, then draw_batch.
Batch sample_batch(const DatasetIndex& index, const BatchSpec& spec, Rng& rng);

// Epoch iteration: identities are shuffled once per epoch and consumed in chunks of N*;
// a short final chunk is padded with distinct random identities not already in it.
class EpochSampler {
public:
    EpochSampler(const DatasetIndex& index, BatchSpec spec, std::uint64_t seed);

    std::size_t batches_per_epoch() const;
    // Batches of the next epoch, in order.
    std::vector<Batch> next_epoch();

private:
    const DatasetIndex* index_;
    BatchSpec spec_;
    Rng rng_;
};

}  // namespace df2am
