// physgen: foam dataset generation, diffusion-model training, unconditional
// and physics-guided sampling, and the standalone differentiable solvers.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "physgen/cli/pipeline.hpp"

using namespace physgen;
namespace fs = std::filesystem;

namespace {

std::string default_run_dir(const std::string& explicit_dir, const std::string& stage,
                            const std::string& anchor) {
    if (!explicit_dir.empty()) return explicit_dir;
    if (const char* root = std::getenv("PHYSGEN_RUN_ROOT"))
        return (fs::path(root) / stage).string();
    fs::path a(anchor.empty() ? "." : anchor);
    if (a.has_parent_path() && !a.parent_path().empty()) return a.parent_path().string();
    return ".";
}

cli::ExperimentConfig config_from(const std::string& config_path, const std::string& stage) {
    cli::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = cli::ExperimentConfig::from_ini(cli::Ini::load(config_path));
    cfg.stage = stage;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"physgen: inverse design of disordered foams with physics-guided diffusion"};
    app.require_subcommand(1);

    std::string config_path, run_dir;
    app.add_option("--config", config_path, "experiment configuration file (ini)");
    app.add_option("--run-dir", run_dir, "run directory (manifest + lock)");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a foam training dataset");
    int gd_count = 64;
    double gd_dmin = 6, gd_dmax = 20, gd_pmin = 0.3, gd_pmax = 0.8;
    uint64_t gd_seed = 0;
    std::string gd_out = "dataset.foam", gd_png;
    gen->add_option("--count", gd_count, "number of images");
    gen->add_option("--d-cell-min", gd_dmin, "minimum cell diameter, px");
    gen->add_option("--d-cell-max", gd_dmax, "maximum cell diameter, px");
    gen->add_option("--phi-min", gd_pmin, "minimum volume fraction");
    gen->add_option("--phi-max", gd_pmax, "maximum volume fraction");
    gen->add_option("--seed", gd_seed, "dataset seed");
    gen->add_option("--out", gd_out, "output dataset file")->required();
    gen->add_option("--png-dir", gd_png, "export images as PNG into this directory");

    // train
    auto* train = app.add_subcommand("train", "train the noise-prediction network");
    std::string tr_data, tr_out = "model.ckpt", tr_resume;
    train->add_option("--data", tr_data, "training dataset")->required();
    train->add_option("--out", tr_out, "checkpoint output path")->required();
    train->add_option("--resume", tr_resume, "resume from this checkpoint");

    // sample
    auto* sample = app.add_subcommand("sample", "draw unconditional samples");
    std::string sm_ckpt, sm_dir = "samples";
    int sm_count = 4, sm_steps = 50;
    uint64_t sm_seed = 0;
    sample->add_option("--ckpt", sm_ckpt, "model checkpoint")->required();
    sample->add_option("--count", sm_count, "number of samples");
    sample->add_option("--steps", sm_steps, "reverse-SDE steps");
    sample->add_option("--seed", sm_seed, "sampler seed");
    sample->add_option("--out-dir", sm_dir, "output directory");

    // guide
    auto* guide = app.add_subcommand("guide", "physics-guided sampling");
    std::string gu_ckpt, gu_objective = "keff", gu_mode = "detached", gu_dir = "guided";
    std::string gu_target_curve;
    double gu_target = 30.0;
    int gu_steps = 50, gu_stride = 1;
    uint64_t gu_seed = 0;
    guide->add_option("--ckpt", gu_ckpt, "model checkpoint")->required();
    guide->add_option("--objective", gu_objective, "keff | curve | energy");
    guide->add_option("--target", gu_target, "target value (k_eff or volume fraction)");
    guide->add_option("--target-curve", gu_target_curve, "CSV of target loads (curve objective)");
    guide->add_option("--steps", gu_steps, "reverse-SDE steps");
    guide->add_option("--stride", gu_stride, "solver evaluation stride");
    guide->add_option("--mode", gu_mode, "detached | chained");
    guide->add_option("--seed", gu_seed, "sampler seed");
    guide->add_option("--out-dir", gu_dir, "output directory");

    // simulate-heat
    auto* sheat = app.add_subcommand("simulate-heat", "steady heat conduction on an image");
    std::string sh_image, sh_out = "temps.csv";
    double sh_ksolid = 100.0, sh_kgas = 1.0;
    sheat->add_option("--image", sh_image, "foam image (.png or .foam)")->required();
    sheat->add_option("--k-solid", sh_ksolid, "solid conductivity");
    sheat->add_option("--k-gas", sh_kgas, "gas conductivity");
    sheat->add_option("--out", sh_out, "temperature CSV output");

    // simulate-compress
    auto* scomp = app.add_subcommand("simulate-compress", "viscoelastic compression (MLS-MPM)");
    std::string sc_image, sc_out = "curve.csv";
    scomp->add_option("--image", sc_image, "foam image (.png or .foam)")->required();
    scomp->add_option("--out", sc_out, "load-displacement CSV output");

    // simulate-fracture
    auto* sfrac = app.add_subcommand("simulate-fracture", "phase-field fracture under compression");
    std::string sf_image, sf_out = "curve.csv";
    bool sf_fields = false;
    sfrac->add_option("--image", sf_image, "foam image (.png or .foam)")->required();
    sfrac->add_option("--out", sf_out, "load-displacement CSV output");
    sfrac->add_flag("--fields-out", sf_fields, "export the phase field per load step");

    // verify
    auto* verify = app.add_subcommand("verify", "run an invariant suite");
    std::string vf_suite;
    verify->add_option("suite", vf_suite, "gradients | conservation | bounds | schedules")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) {
            bool ok = cli::print_report(cli::verify_suite(vf_suite));
            return ok ? 0 : 1;
        }
        cli::StagePaths paths;
        cli::ExperimentConfig cfg;
        if (gen->parsed()) {
            cfg = config_from(config_path, "gen-data");
            if (gen->count("--count")) cfg.foamgen.count = gd_count;
            if (gen->count("--d-cell-min")) cfg.foamgen.d_cell_min = gd_dmin;
            if (gen->count("--d-cell-max")) cfg.foamgen.d_cell_max = gd_dmax;
            if (gen->count("--phi-min")) cfg.foamgen.phi_min = gd_pmin;
            if (gen->count("--phi-max")) cfg.foamgen.phi_max = gd_pmax;
            if (gen->count("--seed")) cfg.foamgen.seed = gd_seed;
            paths.out = gd_out;
            paths.png_dir = gd_png;
        } else if (train->parsed()) {
            cfg = config_from(config_path, "train");
            paths.data = tr_data;
            paths.out = tr_out;
            paths.resume = tr_resume;
        } else if (sample->parsed()) {
            cfg = config_from(config_path, "sample");
            if (sample->count("--steps")) cfg.sampler.steps = sm_steps;
            if (sample->count("--seed")) cfg.sampler.rng_seed = sm_seed;
            paths.checkpoint = sm_ckpt;
            paths.count = sm_count;
            paths.out_dir = sm_dir;
        } else if (guide->parsed()) {
            cfg = config_from(config_path, "guide");
            if (guide->count("--objective")) cfg.objective = gu_objective;
            if (guide->count("--steps")) cfg.sampler.steps = gu_steps;
            if (guide->count("--seed")) cfg.sampler.rng_seed = gu_seed;
            if (guide->count("--stride")) cfg.eval_stride = gu_stride;
            if (guide->count("--mode"))
                cfg.mode = gu_mode == "chained" ? guidance::GradientMode::chained
                                                : guidance::GradientMode::detached;
            if (guide->count("--target")) {
                cfg.keff_target = gu_target;
                cfg.phi_target = gu_target;
            }
            paths.checkpoint = gu_ckpt;
            paths.target_curve = gu_target_curve;
            paths.out_dir = gu_dir;
        } else if (sheat->parsed()) {
            cfg = config_from(config_path, "simulate-heat");
            if (sheat->count("--k-solid")) cfg.heat.k_solid = sh_ksolid;
            if (sheat->count("--k-gas")) cfg.heat.k_gas = sh_kgas;
            paths.image = sh_image;
            paths.out = sh_out;
        } else if (scomp->parsed()) {
            cfg = config_from(config_path, "simulate-compress");
            paths.image = sc_image;
            paths.out = sc_out;
        } else if (sfrac->parsed()) {
            cfg = config_from(config_path, "simulate-fracture");
            paths.image = sf_image;
            paths.out = sf_out;
            paths.fields_out = sf_fields;
        }
        std::string anchor = !paths.out.empty() ? paths.out : paths.out_dir;
        paths.run_dir = default_run_dir(run_dir, cfg.stage, anchor);
        cli::run_pipeline(cfg, paths);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "physgen: " << e.what() << "\n";
        return 1;
    }
}
