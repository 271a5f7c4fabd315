#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "physgen/core/array2.hpp"
#include "physgen/core/io.hpp"
#include "physgen/core/rng.hpp"

// Disordered closed-cell foam generation: scatter seeds, build the two-nearest
// distance field, threshold the boundary detector d2 - d1 into a wall skeleton,
// soften it with a Gaussian, and binarize to a target volume fraction.

namespace physgen::foam {

struct FoamSpec {
    int height_px = 64;
    int width_px = 64;
    double cell_diameter_px = 10.0;
    double initial_wall_thickness_px = 2.0; // not fixed by the source material; configurable
    double roundness_factor = 0.1;
    double target_volume_fraction = 0.5;
    uint64_t rng_seed = 0;

    void validate() const {
        if (height_px <= 0 || height_px != width_px)
            throw std::invalid_argument("FoamSpec: require square positive image (H = W > 0)");
        if (!(target_volume_fraction > 0.0 && target_volume_fraction < 1.0))
            throw std::invalid_argument("FoamSpec: volume fraction must lie in (0,1)");
        if (cell_diameter_px < 2.0)
            throw std::invalid_argument("FoamSpec: cell diameter must be >= 2 px");
        if (!(roundness_factor > 0.0))
            throw std::invalid_argument("FoamSpec: roundness factor must be positive");
        if (!(initial_wall_thickness_px > 0.0))
            throw std::invalid_argument("FoamSpec: wall thickness must be positive");
    }

    int seed_count() const {
        double n = static_cast<double>(height_px) / cell_diameter_px;
        return static_cast<int>(std::floor(n * n));
    }
};

struct FoamImage {
    Array2 pixels;
    double volume_fraction = 0.0;

    static FoamImage from_pixels(Array2 px) {
        FoamImage img;
        img.volume_fraction = px.mean();
        img.pixels = std::move(px);
        return img;
    }
};

struct DistanceField {
    Array2 d1; // nearest seed distance, px
    Array2 d2; // second-nearest seed distance, px
};

struct Point2 {
    double x, y;
};

// N = floor((H/d_cell)^2) seeds uniform over the domain; pixel centers live at
// (col + 0.5, row + 0.5), so seeds are drawn in [0, W) x [0, H) directly.
inline std::vector<Point2> scatter_seeds(const FoamSpec& spec) {
    spec.validate();
    int n = spec.seed_count();
    if (n < 2)
        throw std::invalid_argument("degenerate tessellation: need at least 2 seeds, got " +
                                    std::to_string(n));
    RngStream rng(spec.rng_seed, /*stream=*/0);
    std::vector<Point2> pts(n);
    for (auto& p : pts) {
        p.x = rng.uniform(0.0, spec.width_px);
        p.y = rng.uniform(0.0, spec.height_px);
    }
    return pts;
}

// Exact two-nearest distances by direct scan. At 64x64 with O(100) seeds this
// is faster than building any spatial index, and it doubles as its own oracle.
inline DistanceField nearest_two(const std::vector<Point2>& seeds, const FoamSpec& spec) {
    if (seeds.size() < 2) throw std::invalid_argument("nearest_two: need at least 2 seeds");
    DistanceField df{Array2(spec.height_px, spec.width_px), Array2(spec.height_px, spec.width_px)};
    for (int r = 0; r < spec.height_px; ++r) {
        double py = r + 0.5;
        for (int c = 0; c < spec.width_px; ++c) {
            double px = c + 0.5;
            double best1 = std::numeric_limits<double>::infinity();
            double best2 = best1;
            for (const auto& s : seeds) {
                double dx = s.x - px, dy = s.y - py;
                double d2 = dx * dx + dy * dy;
                if (d2 < best1) {
                    best2 = best1;
                    best1 = d2;
                } else if (d2 < best2) {
                    best2 = d2;
                }
            }
            df.d1(r, c) = std::sqrt(best1);
            df.d2(r, c) = std::sqrt(best2);
        }
    }
    return df;
}

// Wall skeleton: strict inequality, so t_init = 0 marks nothing.
inline Array2 skeletonize(const DistanceField& df, double t_init) {
    Array2 mask(df.d1.rows(), df.d1.cols());
    for (size_t i = 0; i < mask.size(); ++i)
        mask[i] = (df.d2[i] - df.d1[i] < t_init) ? 1.0 : 0.0;
    return mask;
}

namespace detail {

// Sampled Gaussian kernel, truncated at 3 sigma and normalized.
inline std::vector<double> gaussian_kernel(double sigma) {
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
        k[i + radius] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

// 1D convolution along rows with edge-mirrored (symmetric) padding; mirroring
// folds kernel mass back into the domain, so the total is conserved exactly.
inline void convolve_rows(const Array2& in, Array2& out, const std::vector<double>& k) {
    int radius = (static_cast<int>(k.size()) - 1) / 2;
    int n = in.cols();
    for (int r = 0; r < in.rows(); ++r) {
        for (int c = 0; c < n; ++c) {
            double acc = 0.0;
            for (int j = -radius; j <= radius; ++j) {
                int idx = c + j;
                while (idx < 0 || idx >= n) {
                    if (idx < 0) idx = -idx - 1;
                    if (idx >= n) idx = 2 * n - 1 - idx;
                }
                acc += k[j + radius] * in(r, idx);
            }
            out(r, c) = acc;
        }
    }
}

inline Array2 transpose(const Array2& a) {
    Array2 t(a.cols(), a.rows());
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    return t;
}

} // namespace detail

// Separable Gaussian blur with sigma = roundness * d_cell.
inline Array2 smooth(const Array2& mask, const FoamSpec& spec) {
    double sigma = spec.roundness_factor * spec.cell_diameter_px;
    if (!(sigma > 0.0)) throw std::invalid_argument("smooth: sigma must be positive");
    auto k = detail::gaussian_kernel(sigma);
    Array2 tmp(mask.rows(), mask.cols());
    detail::convolve_rows(mask, tmp, k);
    Array2 tmpT = detail::transpose(tmp);
    Array2 outT(tmpT.rows(), tmpT.cols());
    detail::convolve_rows(tmpT, outT, k);
    return detail::transpose(outT);
}

// Exact order-statistic threshold: the round(phi * H * W) largest pixels become
// solid; ties are broken by row-major index so the result is deterministic.
inline FoamImage binarize_to_fraction(const Array2& field, double phi) {
    if (!(phi > 0.0 && phi < 1.0))
        throw std::invalid_argument("binarize_to_fraction: phi must lie in (0,1)");
    const size_t n = field.size();
    long k = std::lround(phi * static_cast<double>(n));
    if (field.max() == field.min()) {
        if (k != 0 && k != static_cast<long>(n))
            throw std::runtime_error("cannot meet fraction: constant input field");
    }
    std::vector<uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        if (field[a] != field[b]) return field[a] > field[b];
        return a < b;
    });
    Array2 out(field.rows(), field.cols(), 0.0);
    for (long i = 0; i < k; ++i) out[order[i]] = 1.0;
    return FoamImage::from_pixels(std::move(out));
}

inline FoamImage generate(const FoamSpec& spec) {
    auto seeds = scatter_seeds(spec);
    auto df = nearest_two(seeds, spec);
    auto mask = skeletonize(df, spec.initial_wall_thickness_px);
    auto soft = smooth(mask, spec);
    return binarize_to_fraction(soft, spec.target_volume_fraction);
}

// ---------------------------------------------------------------------------
// Dataset container: magic, version, count, per-image spec records, then
// row-major 8-bit images (0 = void, 255 = solid).
// ---------------------------------------------------------------------------

struct DatasetRecord {
    FoamSpec spec;
    double achieved_fraction = 0.0;
};

struct Dataset {
    std::vector<DatasetRecord> records;
    std::vector<Array2> images;

    static constexpr const char* kMagic = "PGFOAM1\n";

    void save(const std::string& path) const {
        io::atomic_write(path, [this](std::ostream& os) {
            os.write(kMagic, 8);
            io::put<uint32_t>(os, 1); // format version
            io::put<uint64_t>(os, images.size());
            for (const auto& rec : records) {
                io::put<uint32_t>(os, static_cast<uint32_t>(rec.spec.height_px));
                io::put<uint32_t>(os, static_cast<uint32_t>(rec.spec.width_px));
                io::put<double>(os, rec.spec.cell_diameter_px);
                io::put<double>(os, rec.spec.initial_wall_thickness_px);
                io::put<double>(os, rec.spec.roundness_factor);
                io::put<double>(os, rec.spec.target_volume_fraction);
                io::put<uint64_t>(os, rec.spec.rng_seed);
                io::put<double>(os, rec.achieved_fraction);
            }
            for (const auto& img : images) {
                std::vector<uint8_t> bytes(img.size());
                for (size_t i = 0; i < img.size(); ++i)
                    bytes[i] = img[i] >= 0.5 ? 255 : 0;
                os.write(reinterpret_cast<const char*>(bytes.data()),
                         static_cast<std::streamsize>(bytes.size()));
            }
        });
    }

    static Dataset load(const std::string& path) {
        auto bytes = io::read_all(path);
        std::string text(bytes.begin(), bytes.end());
        std::istringstream is(text);
        io::expect_magic(is, kMagic, "dataset " + path);
        uint32_t version = io::get<uint32_t>(is);
        if (version != 1) throw std::runtime_error("dataset " + path + ": unsupported version");
        uint64_t count = io::get<uint64_t>(is);
        Dataset ds;
        ds.records.resize(count);
        for (auto& rec : ds.records) {
            rec.spec.height_px = static_cast<int>(io::get<uint32_t>(is));
            rec.spec.width_px = static_cast<int>(io::get<uint32_t>(is));
            rec.spec.cell_diameter_px = io::get<double>(is);
            rec.spec.initial_wall_thickness_px = io::get<double>(is);
            rec.spec.roundness_factor = io::get<double>(is);
            rec.spec.target_volume_fraction = io::get<double>(is);
            rec.spec.rng_seed = io::get<uint64_t>(is);
            rec.achieved_fraction = io::get<double>(is);
        }
        ds.images.reserve(count);
        for (uint64_t i = 0; i < count; ++i) {
            const auto& spec = ds.records[i].spec;
            Array2 img(spec.height_px, spec.width_px);
            for (size_t p = 0; p < img.size(); ++p) {
                char b;
                is.read(&b, 1);
                if (!is) throw std::runtime_error("dataset " + path + ": truncated image data");
                img[p] = static_cast<uint8_t>(b) >= 128 ? 1.0 : 0.0;
            }
            ds.images.push_back(std::move(img));
        }
        return ds;
    }
};

struct DatasetParams {
    int count = 64;
    int image_px = 64;
    double d_cell_min = 6.0;
    double d_cell_max = 20.0;
    double phi_min = 0.3;
    double phi_max = 0.8;
    double t_init = 2.0;
    double roundness = 0.1;
    uint64_t seed = 0;
};

// Per-image RNG keys derive from (dataset seed, index), so images are
// independent of generation order.
inline Dataset generate_dataset(const DatasetParams& p) {
    if (p.count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
    Dataset ds;
    ds.records.reserve(p.count);
    ds.images.reserve(p.count);
    for (int i = 0; i < p.count; ++i) {
        RngStream param_rng(mix_seed(p.seed, 0x70617261), static_cast<uint64_t>(i));
        FoamSpec spec;
        spec.height_px = spec.width_px = p.image_px;
        spec.cell_diameter_px = param_rng.uniform(p.d_cell_min, p.d_cell_max);
        spec.target_volume_fraction = param_rng.uniform(p.phi_min, p.phi_max);
        spec.initial_wall_thickness_px = p.t_init;
        spec.roundness_factor = p.roundness;
        spec.rng_seed = mix_seed(p.seed, static_cast<uint64_t>(i));
        FoamImage img = generate(spec);
        ds.records.push_back({spec, img.volume_fraction});
        ds.images.push_back(std::move(img.pixels));
    }
    return ds;
}

} // namespace physgen::foam
