#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "df2am/array.hpp"
#include "df2am/backbone.hpp"
#include "df2am/sampling.hpp"

namespace df2am {

// Synthetic two-modality person data.
//
// Identity i owns a latent z_i ~ N(0, I_d). Row h of an image is a fixed linear
// projection A_h z of the sample latent, so identity information is band-local.
// IR images pass through (I + g R) channel mixing plus g * b, with g the modality gap
// strength and R, b fixed. Gaussian pixel noise is added, then with probability
// occlusion_prob the bottom occlusion_fraction of rows is zeroed.
//
// RNG streams: everything derives from `seed` through Rng::derive, and sample s uses
// its own stream, so output does not depend on generation order.
struct SynthConfig {
    std::size_t identity_count = 50;
    std::size_t samples_per_identity = 20;  // per modality
    std::size_t channels = 3;
    std::size_t height = 16;
    std::size_t width = 8;
    std::size_t latent_dim = 16;
    double modality_gap = 1.0;
    double noise_std = 0.3;
    double occlusion_prob = 0.3;
    double occlusion_fraction = 0.5;
    std::uint64_t seed = 7;

    void validate() const;
    Shape image_shape() const { return {channels, height, width}; }

    friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

struct SynthSample {
    Array image;
    std::size_t identity = 0;
    Modality modality = Modality::RGB;
    bool occluded = false;

    friend bool operator==(const SynthSample&, const SynthSample&) = default;
};

struct Dataset {
    SynthConfig config;
    std::vector<SynthSample> samples;
    DatasetIndex index;

    // Images of the given sample ids stacked to [n, C, H, W].
    Array stack(const std::vector<std::size_t>& ids) const;
};

Dataset generate(const SynthConfig& config);

// Identities subset with local labels 0..n-1; identities[local] is the dataset identity.
struct IdentitySubset {
    DatasetIndex index;
    std::vector<std::size_t> identities;
};

enum class Direction { IrToRgb, RgbToIr };

// Query/gallery roles for a set of identities. Labels are dataset identities.
struct RetrievalSet {
    Modality query_modality = Modality::IR;
    std::vector<std::size_t> query;
    std::vector<std::size_t> query_labels;
    std::vector<std::size_t> gallery;
    std::vector<std::size_t> gallery_labels;
};

RetrievalSet make_retrieval_set(const Dataset& data, const IdentitySubset& subset, Direction direction);

struct Split {
    IdentitySubset train;
    IdentitySubset test;
    RetrievalSet retrieval;
};

// Identity-disjoint split: round(train_fraction * N) shuffled identities train, the rest test.
// Throws ConfigError when either side would have fewer than two identities.
Split split(const Dataset& data, double train_fraction, std::uint64_t seed, Direction direction = Direction::IrToRgb);

// Identity-disjoint split of an existing subset (used to carve validation identities).
std::pair<IdentitySubset, IdentitySubset> split_subset(const IdentitySubset& subset, double first_fraction,
                                                       std::uint64_t seed);

// Single-file dataset container: magic, JSON header with the config, binary little-endian body.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace df2am
