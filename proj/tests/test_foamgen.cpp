#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "physgen/foam/foamgen.hpp"
#include "support/oracles.hpp"

using namespace physgen;
using namespace physgen::foam;

static FoamSpec make_spec(int h = 64, double dcell = 8.0, double phi = 0.5, uint64_t seed = 42) {
    FoamSpec s;
    s.height_px = s.width_px = h;
    s.cell_diameter_px = dcell;
    s.target_volume_fraction = phi;
    s.rng_seed = seed;
    return s;
}

TEST_CASE("seed count follows (H/d_cell)^2") {
    CHECK(make_spec(64, 8.0).seed_count() == 64);
    CHECK(make_spec(64, 20.0).seed_count() == 10); // floor(3.2^2)
    CHECK(scatter_seeds(make_spec(64, 8.0)).size() == 64);
}

TEST_CASE("degenerate tessellation rejected") {
    auto spec = make_spec(64, 64.0); // N = 1
    CHECK_THROWS_WITH(scatter_seeds(spec), Catch::Matchers::ContainsSubstring("degenerate"));
}

TEST_CASE("seeds are deterministic and in-domain") {
    auto a = scatter_seeds(make_spec());
    auto b = scatter_seeds(make_spec());
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x == b[i].x);
        CHECK(a[i].y == b[i].y);
        CHECK(a[i].x >= 0.0);
        CHECK(a[i].x < 64.0);
        CHECK(a[i].y >= 0.0);
        CHECK(a[i].y < 64.0);
    }
    auto c = scatter_seeds(make_spec(64, 8.0, 0.5, 43));
    CHECK(a[0].x != c[0].x);
}

TEST_CASE("nearest_two: symmetric pair and coincident seed") {
    auto spec = make_spec();
    std::vector<Point2> seeds = {{16.5, 32.5}, {48.5, 32.5}};
    auto df = nearest_two(seeds, spec);
    // pixel (row 32, col 32) has center (32.5, 32.5), equidistant to both
    CHECK(df.d1(32, 32) == Catch::Approx(16.0).margin(1e-12));
    CHECK(df.d2(32, 32) == Catch::Approx(16.0).margin(1e-12));
    // pixel (32, 16) center (16.5, 32.5) coincides with the first seed
    CHECK(df.d1(32, 16) == 0.0);
}

TEST_CASE("nearest_two matches brute-force oracle on random instance") {
    auto spec = make_spec(32, 10.0, 0.5, 7);
    RngStream rng(99, 0);
    std::vector<Point2> seeds;
    std::vector<std::pair<double, double>> oracle_seeds;
    for (int i = 0; i < 10; ++i) {
        double x = rng.uniform(0.0, 32.0), y = rng.uniform(0.0, 32.0);
        seeds.push_back({x, y});
        oracle_seeds.emplace_back(x, y);
    }
    auto df = nearest_two(seeds, spec);
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) {
            auto [d1, d2] = oracles::two_nearest(c + 0.5, r + 0.5, oracle_seeds);
            REQUIRE(df.d1(r, c) == d1);
            REQUIRE(df.d2(r, c) == d2);
            REQUIRE(df.d2(r, c) >= df.d1(r, c));
        }
}

TEST_CASE("skeletonize thresholds the boundary detector strictly") {
    auto spec = make_spec();
    std::vector<Point2> seeds = {{16.5, 32.5}, {48.5, 32.5}};
    auto df = nearest_two(seeds, spec);
    auto mask = skeletonize(df, 2.0);
    CHECK(mask(32, 32) == 1.0); // midline: delta d = 0
    CHECK(mask(32, 4) == 0.0);  // deep inside a cell
    auto empty = skeletonize(df, 0.0);
    for (size_t i = 0; i < empty.size(); ++i) REQUIRE(empty[i] == 0.0);
}

TEST_CASE("skeleton mass is monotone in wall thickness") {
    auto spec = make_spec(48, 9.0, 0.5, 11);
    auto df = nearest_two(scatter_seeds(spec), spec);
    double prev = -1.0;
    for (double t : {0.5, 1.0, 2.0, 3.0, 5.0}) {
        auto mask = skeletonize(df, t);
        double mass = mask.sum();
        CHECK(mass >= prev);
        prev = mass;
        // smoothing preserves that mass, so the pre-binarization field is
        // monotone in t_init as well
        auto soft = smooth(mask, spec);
        CHECK(oracles::rel_err(soft.sum(), mass, 1e-9) < 1e-6);
    }
}

TEST_CASE("smooth: constant field is a fixed point and mass is conserved") {
    auto spec = make_spec();
    Array2 ones(32, 32, 1.0);
    auto out = smooth(ones, spec);
    for (size_t i = 0; i < out.size(); ++i) REQUIRE(out[i] == Catch::Approx(1.0).margin(1e-12));

    RngStream rng(5, 0);
    Array2 noise(32, 32);
    for (auto& v : noise.raw()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    auto blurred = smooth(noise, spec);
    CHECK(oracles::rel_err(blurred.sum(), noise.sum()) < 1e-6);
    CHECK(blurred.min() >= 0.0);
    CHECK(blurred.max() <= 1.0 + 1e-12);
}

TEST_CASE("smooth: single pixel reproduces the separable kernel center weight") {
    // alpha = 0.1, d_cell = 10 -> sigma = 1.0
    auto spec = make_spec(33, 10.0);
    spec.roundness_factor = 0.1;
    Array2 impulse(33, 33, 0.0);
    impulse(16, 16) = 1.0;
    auto out = smooth(impulse, spec);
    auto k = oracles::gaussian_kernel(1.0);
    double center = k[k.size() / 2];
    CHECK(out(16, 16) == Catch::Approx(center * center).epsilon(1e-10));
}

TEST_CASE("binarize_to_fraction: ramp field order statistics") {
    Array2 ramp(64, 64);
    for (size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i);
    auto img = binarize_to_fraction(ramp, 0.5);
    double solid = img.pixels.sum();
    CHECK(solid == 2048.0);
    CHECK(img.volume_fraction == Catch::Approx(0.5).margin(1.0 / 4096));
    // top half by value must be the solid half
    CHECK(img.pixels[4095] == 1.0);
    CHECK(img.pixels[0] == 0.0);

    auto img3 = binarize_to_fraction(ramp, 0.3);
    CHECK(std::abs(img3.volume_fraction - 0.3) <= 1.0 / 4096);
}

TEST_CASE("binarize_to_fraction: constant field cannot meet fraction") {
    Array2 flat(16, 16, 0.7);
    CHECK_THROWS_WITH(binarize_to_fraction(flat, 0.5),
                      Catch::Matchers::ContainsSubstring("cannot meet fraction"));
}

TEST_CASE("pipeline output is binary and deterministic") {
    auto spec = make_spec(64, 10.0, 0.45, 123);
    auto a = generate(spec);
    auto b = generate(spec);
    REQUIRE(a.pixels.size() == b.pixels.size());
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        REQUIRE(a.pixels[i] == b.pixels[i]);
        REQUIRE((a.pixels[i] == 0.0 || a.pixels[i] == 1.0));
    }
    CHECK(std::abs(a.volume_fraction - 0.45) < 0.01);
    CHECK(a.volume_fraction == Catch::Approx(a.pixels.mean()).margin(1e-12));
}

TEST_CASE("volume fraction sweep over the generation range") {
    for (double phi : {0.3, 0.45, 0.6, 0.8}) {
        auto img = generate(make_spec(64, 8.0, phi, 9));
        CHECK(std::abs(img.volume_fraction - phi) <= 1.0 / 4096 + 1e-12);
    }
}

TEST_CASE("dataset round-trips bit-exactly") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "physgen_test_ds";
    fs::create_directories(dir);
    auto path = (dir / "one.foam").string();

    DatasetParams p;
    p.count = 1;
    p.seed = 77;
    auto ds = generate_dataset(p);
    ds.save(path);
    auto back = Dataset::load(path);
    REQUIRE(back.images.size() == 1);
    REQUIRE(back.records.size() == 1);
    CHECK(back.records[0].spec.rng_seed == ds.records[0].spec.rng_seed);
    CHECK(back.records[0].achieved_fraction == ds.records[0].achieved_fraction);
    for (size_t i = 0; i < ds.images[0].size(); ++i)
        REQUIRE(back.images[0][i] == ds.images[0][i]);
    fs::remove_all(dir);
}

TEST_CASE("desk-scale dataset: reloaded fractions match records") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "physgen_test_ds64";
    fs::create_directories(dir);
    auto path = (dir / "desk.foam").string();

    DatasetParams p;
    p.count = 64;
    p.seed = 2024;
    generate_dataset(p).save(path);
    auto ds = Dataset::load(path);
    REQUIRE(ds.images.size() == 64);
    for (size_t i = 0; i < ds.images.size(); ++i) {
        double mean = ds.images[i].mean();
        CHECK(std::abs(mean - ds.records[i].achieved_fraction) <= 1e-12);
        CHECK(std::abs(mean - ds.records[i].spec.target_volume_fraction) <= 1.0 / 4096 + 1e-12);
    }
    fs::remove_all(dir);
}
