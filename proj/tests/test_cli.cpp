#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "physgen/cli/pipeline.hpp"

using namespace physgen;
using namespace physgen::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& f = "") const { return (path / f).string(); }
};

nn::ScoreNetConfig tiny_net() {
    nn::ScoreNetConfig nc;
    nc.image_size = 16;
    nc.base_widths = {4, 8};
    nc.resblocks_per_level = 1;
    nc.attention_levels = {2};
    nc.attention_heads = 2;
    nc.groupnorm_groups = 4;
    nc.time_embed_dim = 8;
    return nc;
}

std::string write_tiny_checkpoint(const std::string& path) {
    nn::Checkpoint ck;
    ck.config = tiny_net();
    nn::UNetT<float> net(ck.config, 7);
    ck.parameters.assign(net.params().flat().begin(), net.params().flat().end());
    ck.epoch = 0;
    ck.save(path);
    return path;
}

} // namespace

TEST_CASE("ini parsing and unknown keys are named") {
    auto ini = Ini::parse("[meta]\nstage = gen-data\n# comment\n[foamgen]\ncount = 8\n");
    CHECK(ini.get("meta.stage", std::string()) == "gen-data");
    CHECK(ini.get("foamgen.count", 0) == 8);
    CHECK_NOTHROW(ExperimentConfig::from_ini(ini));

    auto bad = Ini::parse("[foamgen]\ncuont = 8\n");
    CHECK_THROWS_WITH(ExperimentConfig::from_ini(bad),
                      Catch::Matchers::ContainsSubstring("foamgen.cuont"));

    auto badschema = Ini::parse("[meta]\nschema_version = 9\n");
    CHECK_THROWS_WITH(ExperimentConfig::from_ini(badschema),
                      Catch::Matchers::ContainsSubstring("schema_version"));
}

TEST_CASE("gen-data stage produces images and a manifest") {
    TempDir dir("physgen_cli_gen");
    ExperimentConfig cfg;
    cfg.stage = "gen-data";
    cfg.foamgen.count = 4;
    cfg.foamgen.seed = 11;
    StagePaths paths;
    paths.run_dir = dir.str();
    paths.out = dir.str("ds.foam");
    paths.png_dir = dir.str("pngs");
    auto manifest = run_pipeline(cfg, paths);
    CHECK(manifest.metrics.at("count") == 4.0);
    auto ds = foam::Dataset::load(paths.out);
    CHECK(ds.images.size() == 4);
    int pngs = 0;
    for (auto& e : fs::directory_iterator(dir.str("pngs"))) {
        ++pngs;
        (void)e;
    }
    CHECK(pngs == 4);
    CHECK(fs::exists(dir.str("manifest.ini")));
    CHECK_FALSE(fs::exists(dir.str(".lock"))); // released after the run
}

TEST_CASE("manifest round-trips") {
    TempDir dir("physgen_cli_manifest");
    RunManifest m;
    m.stage = "train";
    m.config_hash = 1234567;
    m.seeds["training"] = 42;
    m.trace_files = {"a.csv", "b.png"};
    m.metrics["final_loss"] = 0.125;
    auto path = dir.str("manifest.ini");
    m.save(path);
    auto back = RunManifest::load(path);
    CHECK(back.stage == m.stage);
    CHECK(back.config_hash == m.config_hash);
    CHECK(back.seeds == m.seeds);
    CHECK(back.trace_files == m.trace_files);
    CHECK(back.metrics == m.metrics);
    CHECK(back.code_version == kCodeVersion);
}

TEST_CASE("run directory lock is exclusive") {
    TempDir dir("physgen_cli_lock");
    {
        RunLock lock(dir.path);
        CHECK_THROWS_WITH(RunLock(dir.path), Catch::Matchers::ContainsSubstring("locked"));
    }
    CHECK_NOTHROW(RunLock(dir.path)); // released on destruction
}

TEST_CASE("guide stage re-runs reproduce the metrics exactly") {
    TempDir dir("physgen_cli_guide");
    auto ckpt = write_tiny_checkpoint(dir.str("net.ckpt"));
    ExperimentConfig cfg;
    cfg.stage = "guide";
    cfg.objective = "keff";
    cfg.keff_target = 20.0;
    cfg.sampler.steps = 6;
    cfg.sampler.rng_seed = 5;
    auto run = [&](const std::string& sub) {
        StagePaths paths;
        paths.run_dir = dir.str(sub);
        paths.checkpoint = ckpt;
        paths.out_dir = dir.str(sub + "/out");
        return run_pipeline(cfg, paths);
    };
    auto a = run("a");
    auto b = run("b");
    REQUIRE(a.metrics.count("final_objective") == 1);
    CHECK(a.metrics.at("final_objective") == b.metrics.at("final_objective"));
    CHECK(a.metrics.at("final_phi") == b.metrics.at("final_phi"));
    CHECK(a.config_hash == b.config_hash);
    CHECK(fs::exists(dir.str("a/out/trace.csv")));
    CHECK(fs::exists(dir.str("a/out/final.png")));
    CHECK(fs::exists(dir.str("a/out/raw.png")));
}

TEST_CASE("simulate stages run from a dataset image") {
    TempDir dir("physgen_cli_sim");
    // tiny dataset with one 16x16 image
    foam::DatasetParams dp;
    dp.count = 1;
    dp.image_px = 16;
    dp.d_cell_min = dp.d_cell_max = 5.0;
    dp.phi_min = dp.phi_max = 0.6;
    dp.seed = 3;
    foam::generate_dataset(dp).save(dir.str("one.foam"));

    ExperimentConfig cfg;
    cfg.stage = "simulate-heat";
    StagePaths paths;
    paths.run_dir = dir.str("heat");
    paths.image = dir.str("one.foam");
    paths.out = dir.str("heat/temps.csv");
    auto m = run_pipeline(cfg, paths);
    CHECK(m.metrics.at("k_eff") > 1.0);
    CHECK(m.metrics.at("k_eff") < 100.0);
    CHECK(fs::exists(dir.str("heat/temps.csv")));
    CHECK(fs::exists(dir.str("heat/temps.png")));

    ExperimentConfig cfg2;
    cfg2.stage = "simulate-compress";
    cfg2.mpm.n_grid = 16 + 12;
    cfg2.mpm.padding = 6;
    cfg2.mpm.foam_size = 0.015;
    cfg2.mpm.compression_velocity = 0.5;
    cfg2.mpm.dt = 0.5 * cfg2.mpm.dt_bound();
    cfg2.mpm.max_displacement = 0.0002;
    cfg2.mpm.curve_points = 10;
    StagePaths p2;
    p2.run_dir = dir.str("mpm");
    p2.image = dir.str("one.foam");
    p2.out = dir.str("mpm/curve.csv");
    auto m2 = run_pipeline(cfg2, p2);
    CHECK(m2.metrics.at("final_load_N") > 0.0);

    ExperimentConfig cfg3;
    cfg3.stage = "simulate-fracture";
    cfg3.fracture.mesh_n = 16;
    cfg3.fracture.length_scale = 0.07;
    cfg3.fracture.load_steps = 4;
    cfg3.fracture.total_displacement = 0.002;
    StagePaths p3;
    p3.run_dir = dir.str("frac");
    p3.image = dir.str("one.foam");
    p3.out = dir.str("frac/curve.csv");
    p3.fields_out = true;
    auto m3 = run_pipeline(cfg3, p3);
    CHECK(m3.metrics.at("absorbed_energy_J") > 0.0);
    CHECK(fs::exists(dir.str("frac/zeta/zeta_001.png")));
}

TEST_CASE("verify suites report passing checks") {
    for (const std::string suite : {"schedules", "bounds"}) {
        auto results = verify_suite(suite);
        REQUIRE_FALSE(results.empty());
        for (const auto& r : results) {
            INFO(suite << ": " << r.name << " = " << r.value);
            CHECK(r.pass);
        }
    }
    CHECK_THROWS(verify_suite("nonsense"));
}
