#include "df2am/synthdata.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "df2am/config_io.hpp"
#include "df2am/errors.hpp"
#include "df2am/rng.hpp"

namespace df2am {

void SynthConfig::validate() const {
    if (identity_count == 0 || samples_per_identity == 0 || channels == 0 || height == 0 || width == 0 ||
        latent_dim == 0) {
        throw ConfigError("synth: counts and extents must be positive");
    }
    if (!(modality_gap >= 0) || !std::isfinite(modality_gap)) throw ConfigError("synth: modality_gap must be >= 0");
    if (!(noise_std >= 0) || !std::isfinite(noise_std)) throw ConfigError("synth: noise_std must be >= 0");
    if (!(occlusion_prob >= 0 && occlusion_prob <= 1)) throw ConfigError("synth: occlusion_prob must be in [0, 1]");
    if (!(occlusion_fraction > 0 && occlusion_fraction < 1)) {
        throw ConfigError("synth: occlusion_fraction must be in (0, 1)");
    }
}

Array Dataset::stack(const std::vector<std::size_t>& ids) const {
    const Shape img = config.image_shape();
    const std::size_t sz = shape_size(img);
    Array out({ids.size(), img[0], img[1], img[2]});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const Array& src = samples.at(ids[i]).image;
        std::copy(src.values().begin(), src.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * sz));
    }
    return out;
}

namespace {

enum Stream : std::uint64_t { kProjection = 1, kModality = 2, kLatent = 3, kSampleBase = 1000 };

struct Renderer {
    const SynthConfig& cfg;
    // Row projections: rows[h] is [(C * W) x d].
    std::vector<Array> rows;
    Array mixing;  // [C, C], the R in (I + g R)
    Array bias;    // [C, H, W]

    explicit Renderer(const SynthConfig& c) : cfg(c) {
        Rng rng(Rng::derive(cfg.seed, kProjection));
        const double s = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
        for (std::size_t h = 0; h < cfg.height; ++h) {
            Array a({cfg.channels * cfg.width, cfg.latent_dim});
            for (auto& v : a.values()) v = s * rng.normal();
            rows.push_back(std::move(a));
        }
        Rng mrng(Rng::derive(cfg.seed, kModality));
        mixing = Array({cfg.channels, cfg.channels});
        for (auto& v : mixing.values()) v = mrng.normal() / std::sqrt(static_cast<double>(cfg.channels));
        bias = Array(cfg.image_shape());
        for (auto& v : bias.values()) v = mrng.normal();
    }

    Array clean(const std::vector<double>& z) const {
        Array img(cfg.image_shape());
        for (std::size_t h = 0; h < cfg.height; ++h) {
            const Array& a = rows[h];
            for (std::size_t c = 0; c < cfg.channels; ++c)
                for (std::size_t w = 0; w < cfg.width; ++w) {
                    const std::size_t r = c * cfg.width + w;
                    double v = 0.0;
                    for (std::size_t j = 0; j < cfg.latent_dim; ++j) v += a.at(r, j) * z[j];
                    img[(c * cfg.height + h) * cfg.width + w] = v;
                }
        }
        return img;
    }

    Array to_ir(const Array& rgb) const {
        const double g = cfg.modality_gap;
        Array out(rgb.shape());
        const std::size_t hw = cfg.height * cfg.width;
        for (std::size_t c = 0; c < cfg.channels; ++c)
            for (std::size_t q = 0; q < hw; ++q) {
                double v = rgb[c * hw + q];
                for (std::size_t c2 = 0; c2 < cfg.channels; ++c2) v += g * mixing.at(c, c2) * rgb[c2 * hw + q];
                out[c * hw + q] = v + g * bias[c * hw + q];
            }
        return out;
    }
};

}  // namespace

Dataset generate(const SynthConfig& config) {
    config.validate();
    Dataset data;
    data.config = config;
    Renderer render(config);

    Rng lrng(Rng::derive(config.seed, kLatent));
    std::vector<std::vector<double>> latents(config.identity_count, std::vector<double>(config.latent_dim));
    for (auto& z : latents)
        for (auto& v : z) v = lrng.normal();

    const std::size_t n = config.identity_count;
    const std::size_t per = config.samples_per_identity;
    data.index.rgb.assign(n, {});
    data.index.ir.assign(n, {});
    const std::size_t occluded_rows =
        static_cast<std::size_t>(std::llround(config.occlusion_fraction * static_cast<double>(config.height)));

    // Sample ids: identity-major, RGB block then IR block per identity.
    for (std::size_t id = 0; id < n; ++id) {
        const Array base = render.clean(latents[id]);
        for (Modality m : {Modality::RGB, Modality::IR}) {
            const Array clean = m == Modality::RGB ? base : render.to_ir(base);
            for (std::size_t s = 0; s < per; ++s) {
                const std::size_t sid = data.samples.size();
                Rng rng(Rng::derive(config.seed, kSampleBase + sid));
                SynthSample sample;
                sample.identity = id;
                sample.modality = m;
                sample.image = clean;
                for (auto& v : sample.image.values()) v += config.noise_std * rng.normal();
                sample.occluded = rng.bernoulli(config.occlusion_prob);
                if (sample.occluded) {
                    for (std::size_t c = 0; c < config.channels; ++c)
                        for (std::size_t h = config.height - occluded_rows; h < config.height; ++h)
                            for (std::size_t w = 0; w < config.width; ++w)
                                sample.image[(c * config.height + h) * config.width + w] = 0.0;
                }
                (m == Modality::RGB ? data.index.rgb : data.index.ir)[id].push_back(sid);
                data.samples.push_back(std::move(sample));
            }
        }
    }
    return data;
}

// ---- splits -----------------------------------------------------------------

namespace {

IdentitySubset make_subset(const DatasetIndex& index, const std::vector<std::size_t>& local_ids,
                           const std::vector<std::size_t>& parent_identities) {
    IdentitySubset s;
    for (auto local : local_ids) {
        s.index.rgb.push_back(index.rgb[local]);
        s.index.ir.push_back(index.ir[local]);
        s.identities.push_back(parent_identities[local]);
    }
    return s;
}

std::pair<IdentitySubset, IdentitySubset> split_index(const DatasetIndex& index,
                                                      const std::vector<std::size_t>& identities, double fraction,
                                                      std::uint64_t seed) {
    if (!(fraction > 0 && fraction < 1)) throw ConfigError("split: fraction must be in (0, 1)");
    const std::size_t n = index.identity_count();
    const auto first = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (first < 2 || n - first < 2) {
        throw ConfigError("split: " + std::to_string(n) + " identities with fraction " + std::to_string(fraction) +
                          " leaves fewer than two identities on one side");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<std::size_t> a(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first));
    std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(first), order.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return {make_subset(index, a, identities), make_subset(index, b, identities)};
}

}  // namespace

RetrievalSet make_retrieval_set(const Dataset& data, const IdentitySubset& subset, Direction direction) {
    RetrievalSet r;
    r.query_modality = direction == Direction::IrToRgb ? Modality::IR : Modality::RGB;
    for (std::size_t local = 0; local < subset.identities.size(); ++local) {
        const auto& q = direction == Direction::IrToRgb ? subset.index.ir[local] : subset.index.rgb[local];
        const auto& g = direction == Direction::IrToRgb ? subset.index.rgb[local] : subset.index.ir[local];
        for (auto s : q) {
            r.query.push_back(s);
            r.query_labels.push_back(data.samples.at(s).identity);
        }
        for (auto s : g) {
            r.gallery.push_back(s);
            r.gallery_labels.push_back(data.samples.at(s).identity);
        }
    }
    return r;
}

Split split(const Dataset& data, double train_fraction, std::uint64_t seed, Direction direction) {
    std::vector<std::size_t> ids(data.index.identity_count());
    std::iota(ids.begin(), ids.end(), 0);
    auto [train, test] = split_index(data.index, ids, train_fraction, seed);
    Split s{std::move(train), std::move(test), {}};
    s.retrieval = make_retrieval_set(data, s.test, direction);
    return s;
}

std::pair<IdentitySubset, IdentitySubset> split_subset(const IdentitySubset& subset, double first_fraction,
                                                       std::uint64_t seed) {
    return split_index(subset.index, subset.identities, first_fraction, seed);
}

// ---- file container ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'F', '2', 'A', 'M', 'D', 'S', '\n'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("dataset file truncated: " + path);
    return v;
}

void require_little_endian() {
    if constexpr (std::endian::native != std::endian::little) {
        throw IoError("dataset files are little-endian; big-endian hosts are not supported");
    }
}

}  // namespace

void save_dataset(const Dataset& data, const std::string& path) {
    require_little_endian();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    const std::string header = synth_config_to_json(data.config).dump();
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kVersion);
    put<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    put<std::uint64_t>(os, data.samples.size());
    for (const auto& s : data.samples) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(s.identity));
        put<std::uint8_t>(os, s.modality == Modality::RGB ? 0 : 1);
        put<std::uint8_t>(os, s.occluded ? 1 : 0);
        os.write(reinterpret_cast<const char*>(s.image.data().data()),
                 static_cast<std::streamsize>(s.image.size() * sizeof(double)));
    }
    if (!os) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    require_little_endian();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open dataset: " + path);
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw IoError("not a dataset file: " + path);
    }
    const auto version = get<std::uint32_t>(is, path);
    if (version != kVersion) throw IoError("unsupported dataset version " + std::to_string(version) + ": " + path);
    const auto header_len = get<std::uint64_t>(is, path);
    if (header_len > (1u << 20)) throw IoError("dataset header too large: " + path);
    std::string header(header_len, '\0');
    if (!is.read(header.data(), static_cast<std::streamsize>(header_len))) throw IoError("dataset file truncated: " + path);

    Dataset data;
    try {
        data.config = synth_config_from_json(nlohmann::json::parse(header));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed dataset header in " + path + ": " + e.what());
    }
    data.config.validate();
    const auto count = get<std::uint64_t>(is, path);
    const Shape shape = data.config.image_shape();
    const std::size_t n = data.config.identity_count;
    data.index.rgb.assign(n, {});
    data.index.ir.assign(n, {});
    for (std::uint64_t i = 0; i < count; ++i) {
        SynthSample s;
        s.identity = get<std::uint32_t>(is, path);
        s.modality = get<std::uint8_t>(is, path) == 0 ? Modality::RGB : Modality::IR;
        s.occluded = get<std::uint8_t>(is, path) != 0;
        if (s.identity >= n) throw IoError("dataset sample identity out of range: " + path);
        s.image = Array(shape);
        if (!is.read(reinterpret_cast<char*>(s.image.data().data()),
                     static_cast<std::streamsize>(s.image.size() * sizeof(double)))) {
            throw IoError("dataset file truncated: " + path);
        }
        (s.modality == Modality::RGB ? data.index.rgb : data.index.ir)[s.identity].push_back(data.samples.size());
        data.samples.push_back(std::move(s));
    }
    data.index.validate();
    return data;
}

}  // namespace df2am
