#pragma once

#include <filesystem>
#include <iostream>

#include "physgen/cli/config.hpp"
#include "physgen/cli/manifest.hpp"
#include "physgen/core/alloc.hpp"
#include "physgen/core/png.hpp"
#include "physgen/guidance/objectives.hpp"

// Stage orchestration: every CLI subcommand builds an ExperimentConfig plus
// file paths and funnels through run_pipeline, which executes the stage,
// writes traces and images atomically and leaves a manifest in the run
// directory.

namespace physgen::cli {

struct StagePaths {
    std::string run_dir;
    std::string data;         // dataset file
    std::string checkpoint;   // model checkpoint
    std::string resume;       // optional resume checkpoint
    std::string image;        // input image (.png or .foam)
    std::string target_curve; // CSV with target loads
    std::string out;          // primary output file
    std::string out_dir;      // output directory for multi-file stages
    std::string png_dir;      // optional PNG export directory
    bool fields_out = false;  // export phase-field snapshots
    int count = 1;            // samples to generate
};

inline Array2 load_image(const std::string& path) {
    namespace fs = std::filesystem;
    if (path.empty()) throw std::runtime_error("no input image given");
    if (fs::path(path).extension() == ".foam") {
        auto ds = foam::Dataset::load(path);
        if (ds.images.empty()) throw std::runtime_error("dataset is empty: " + path);
        return ds.images[0];
    }
    return png::read_field(path);
}

inline std::vector<double> load_curve_csv(const std::string& path, int expected_points) {
    auto bytes = io::read_all(path);
    std::string text(bytes.begin(), bytes.end());
    std::istringstream is(text);
    std::string line;
    std::vector<double> loads;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (!line.empty() && !(std::isdigit(line[0]) || line[0] == '-' || line[0] == '+'))
            continue; // header
        auto comma = line.rfind(',');
        loads.push_back(std::stod(comma == std::string::npos ? line : line.substr(comma + 1)));
    }
    if (static_cast<int>(loads.size()) != expected_points)
        throw std::runtime_error("target curve " + path + " has " +
                                 std::to_string(loads.size()) + " points, expected " +
                                 std::to_string(expected_points));
    return loads;
}

inline std::string config_fingerprint(const ExperimentConfig& c) {
    std::ostringstream os;
    os << c.stage << "|" << c.foamgen.count << "," << c.foamgen.seed << "|"
       << c.network.image_size << "," << c.network.base_widths.size() << "|"
       << c.training.epochs << "," << c.training.rng_seed << "|" << c.sampler.steps << ","
       << c.sampler.rng_seed << "|" << c.objective << "," << c.keff_target << ","
       << c.phi_target;
    return os.str();
}

// --------------------------------------------------------------------------
// Stages
// --------------------------------------------------------------------------

inline RunManifest run_pipeline(const ExperimentConfig& cfg, const StagePaths& paths) {
    namespace fs = std::filesystem;
    tune_allocator();
    if (cfg.stage.empty()) throw std::runtime_error("config: meta.stage is required");
    fs::path run_dir = paths.run_dir.empty() ? fs::path(".") : fs::path(paths.run_dir);
    RunLock lock(run_dir);
    RunManifest manifest;
    manifest.stage = cfg.stage;
    manifest.config_hash = fnv1a(config_fingerprint(cfg));

    auto emit_image = [&](const std::string& path, const Array2& img) {
        png::write_field(path, img);
        manifest.trace_files.push_back(path);
    };

    if (cfg.stage == "gen-data") {
        manifest.seeds["dataset"] = cfg.foamgen.seed;
        auto ds = foam::generate_dataset(cfg.foamgen);
        ds.save(paths.out);
        manifest.trace_files.push_back(paths.out);
        if (!paths.png_dir.empty()) {
            fs::create_directories(paths.png_dir);
            for (size_t i = 0; i < ds.images.size(); ++i) {
                char name[64];
                std::snprintf(name, sizeof(name), "foam_%04zu.png", i);
                emit_image((fs::path(paths.png_dir) / name).string(), ds.images[i]);
            }
        }
        double mean_phi = 0;
        for (const auto& r : ds.records) mean_phi += r.achieved_fraction / ds.records.size();
        manifest.metrics["count"] = static_cast<double>(ds.images.size());
        manifest.metrics["mean_volume_fraction"] = mean_phi;
    } else if (cfg.stage == "train") {
        manifest.seeds["training"] = cfg.training.rng_seed;
        auto ds = foam::Dataset::load(paths.data);
        std::optional<nn::Checkpoint> resume;
        if (!paths.resume.empty()) resume = nn::Checkpoint::load(paths.resume);
        io::CsvWriter trace({"epoch", "mean_loss"});
        double last_loss = 0;
        auto ck = nn::train(ds, cfg.training, cfg.network, paths.out,
                            resume ? &*resume : nullptr, [&](const nn::EpochStats& s) {
                                trace.add_row({std::to_string(s.epoch), io::fmt(s.mean_loss)});
                                last_loss = s.mean_loss;
                                if (s.epoch % 10 == 0)
                                    std::cerr << "epoch " << s.epoch << " loss " << s.mean_loss
                                              << "\n";
                            });
        ck.save(paths.out);
        auto trace_path = (run_dir / "train_loss.csv").string();
        trace.save(trace_path);
        manifest.trace_files.push_back(trace_path);
        manifest.trace_files.push_back(paths.out);
        manifest.metrics["final_loss"] = last_loss;
        manifest.metrics["epochs"] = ck.epoch;
    } else if (cfg.stage == "sample") {
        manifest.seeds["sampler"] = cfg.sampler.rng_seed;
        auto ck = nn::Checkpoint::load(paths.checkpoint);
        auto net = ck.instantiate<float>();
        auto eps_fn = [&](const Array2& x, double t) { return net->predict_noise(x, t); };
        auto images = sde::sample_unconditional(eps_fn, ck.config.image_size, cfg.sampler,
                                                paths.count);
        fs::create_directories(paths.out_dir);
        io::CsvWriter csv({"filename", "volume_fraction"});
        double mean_phi = 0;
        for (size_t i = 0; i < images.size(); ++i) {
            Array2 binary = guidance::project(guidance::rescale01(images[i]), cfg.final_eta);
            char name[64];
            std::snprintf(name, sizeof(name), "sample_%04zu.png", i);
            auto path = (fs::path(paths.out_dir) / name).string();
            emit_image(path, binary);
            double phi = binary.mean();
            mean_phi += phi / images.size();
            csv.add_row({name, io::fmt(phi)});
        }
        auto csv_path = (fs::path(paths.out_dir) / "manifest.csv").string();
        csv.save(csv_path);
        manifest.trace_files.push_back(csv_path);
        manifest.metrics["count"] = static_cast<double>(images.size());
        manifest.metrics["mean_volume_fraction"] = mean_phi;
    } else if (cfg.stage == "guide") {
        manifest.seeds["sampler"] = cfg.sampler.rng_seed;
        auto ck = nn::Checkpoint::load(paths.checkpoint);
        auto net = ck.instantiate<float>();
        guidance::NetNoiseModel<float> model(*net);
        std::unique_ptr<guidance::PhysicsObjective> objective;
        if (cfg.objective == "keff") {
            objective = std::make_unique<guidance::KeffObjective>(cfg.keff_target, cfg.heat);
        } else if (cfg.objective == "curve") {
            mpm::CurveTarget target;
            target.load_n = load_curve_csv(paths.target_curve, cfg.mpm.curve_points);
            objective = std::make_unique<guidance::CurveObjective>(target, cfg.mpm);
        } else if (cfg.objective == "energy") {
            objective = std::make_unique<guidance::EnergyVolumeObjective>(
                cfg.phi_target, cfg.fracture, cfg.energy_m, cfg.volume_weight);
        } else {
            throw std::runtime_error("config: unknown objective '" + cfg.objective + "'");
        }
        guidance::GuidedConfig gc;
        gc.sampler = cfg.sampler;
        gc.mode = cfg.mode;
        gc.norm = cfg.norm;
        gc.eval_stride = cfg.eval_stride;
        gc.final_eta = cfg.final_eta;
        fs::create_directories(paths.out_dir);
        auto result = guidance::guided_sample(model, *objective, ck.config.image_size, gc);
        io::CsvWriter trace({"step", "t", "loss", "phi", "objective_value", "guided",
                             "solver_failed"});
        for (const auto& tr : result.trace)
            trace.add_row({std::to_string(tr.step), io::fmt(tr.t), io::fmt(tr.loss),
                           io::fmt(tr.phi), io::fmt(tr.objective_value),
                           tr.guided ? "1" : "0", tr.solver_failed ? "1" : "0"});
        auto trace_path = (fs::path(paths.out_dir) / "trace.csv").string();
        trace.save(trace_path);
        manifest.trace_files.push_back(trace_path);
        emit_image((fs::path(paths.out_dir) / "final.png").string(), result.image);
        emit_image((fs::path(paths.out_dir) / "raw.png").string(), result.raw);
        manifest.metrics["final_phi"] = result.image.mean();
        for (auto it = result.trace.rbegin(); it != result.trace.rend(); ++it)
            if (it->guided) {
                manifest.metrics["final_objective"] = it->objective_value;
                manifest.metrics["final_loss"] = it->loss;
                break;
            }
    } else if (cfg.stage == "simulate-heat") {
        Array2 image = load_image(paths.image);
        Array2 k = heat::conductivity_from_image(image, cfg.heat);
        heat::HeatSolver solver(k, cfg.heat);
        double keff = solver.effective_k(k);
        io::CsvWriter csv([&] {
            std::vector<std::string> header;
            for (int c = 0; c < solver.temperature().nodal.cols(); ++c)
                header.push_back("c" + std::to_string(c));
            return header;
        }());
        for (int r = 0; r < solver.temperature().nodal.rows(); ++r) {
            std::vector<std::string> row;
            for (int c = 0; c < solver.temperature().nodal.cols(); ++c)
                row.push_back(io::fmt(solver.temperature().nodal(r, c)));
            csv.add_row(row);
        }
        csv.save(paths.out);
        manifest.trace_files.push_back(paths.out);
        auto png_path = fs::path(paths.out).replace_extension(".png").string();
        png::write_field(png_path, solver.temperature().nodal,
                         std::min(cfg.heat.t_top, cfg.heat.t_bottom),
                         std::max(cfg.heat.t_top, cfg.heat.t_bottom));
        manifest.trace_files.push_back(png_path);
        manifest.metrics["k_eff"] = keff;
        std::cout << "k_eff = " << keff << " W/(m K)\n";
    } else if (cfg.stage == "simulate-compress") {
        Array2 image = load_image(paths.image);
        auto res = mpm::simulate_compression(image, cfg.mpm);
        io::CsvWriter csv({"displacement_mm", "load_N"});
        for (size_t i = 0; i < res.curve.load_n.size(); ++i)
            csv.add_row({io::fmt(res.curve.displacement_mm[i]), io::fmt(res.curve.load_n[i])});
        csv.save(paths.out);
        manifest.trace_files.push_back(paths.out);
        manifest.metrics["steps"] = res.steps;
        manifest.metrics["final_load_N"] = res.curve.load_n.back();
        std::cout << "final load " << res.curve.load_n.back() << " N over "
                  << res.curve.displacement_mm.back() << " mm\n";
    } else if (cfg.stage == "simulate-fracture") {
        Array2 image = load_image(paths.image);
        Array2 modulus = fracture::modulus_from_image(image, cfg.fracture);
        fracture::FractureSolver solver(modulus, cfg.fracture);
        auto fr = solver.solve();
        io::CsvWriter csv({"displacement_mm", "load_kN"});
        for (const auto& st : fr.states)
            csv.add_row({io::fmt(st.displacement), io::fmt(st.load)});
        csv.save(paths.out);
        manifest.trace_files.push_back(paths.out);
        if (paths.fields_out) {
            fs::path dir = fs::path(paths.out).parent_path() / "zeta";
            fs::create_directories(dir);
            int nn = cfg.fracture.mesh_n + 1;
            for (size_t n = 0; n < fr.states.size(); ++n) {
                Array2 z(nn, nn);
                // nodal field, image convention (row 0 at the top wall)
                for (int r = 0; r < nn; ++r)
                    for (int c = 0; c < nn; ++c)
                        z(r, c) = fr.states[n].zeta[(nn - 1 - r) * nn + c];
                char name[64];
                std::snprintf(name, sizeof(name), "zeta_%03zu.png", n + 1);
                emit_image((dir / name).string(), z);
            }
        }
        manifest.metrics["absorbed_energy_J"] = fr.absorbed_energy;
        std::cout << "absorbed energy " << fr.absorbed_energy << " J\n";
    } else {
        throw std::runtime_error("config: unknown stage '" + cfg.stage + "'");
    }

    manifest.save((run_dir / "manifest.ini").string());
    return manifest;
}

// --------------------------------------------------------------------------
// Verification suites
// --------------------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool pass = false;
    double value = 0.0;
    std::string detail;
};

inline std::vector<CheckResult> verify_suite(const std::string& suite) {
    std::vector<CheckResult> out;
    auto check = [&](const std::string& name, bool pass, double value,
                     const std::string& detail) {
        out.push_back({name, pass, value, detail});
    };
    if (suite == "schedules") {
        sde::NoiseSchedule ns;
        double max_dev = 0;
        for (int i = 0; i <= 1000; ++i) {
            double t = i / 1000.0;
            max_dev = std::max(max_dev, std::abs(ns.alpha_bar(t) * std::exp(10 * t * t) - 1.0));
        }
        check("alpha_bar closed-form identity (1001-point grid)", max_dev <= 1e-12, max_dev,
              "max |alpha_bar exp(10 t^2) - 1|");
        check("sigma(0) = 0", ns.sigma(0.0) == 0.0, ns.sigma(0.0), "");
        check("alpha_bar(0) = 1", ns.alpha_bar(0.0) == 1.0, ns.alpha_bar(0.0), "");
        guidance::GuidanceSchedule gs;
        check("projection sharpness range", gs.eta(1.0) == 5.0 && gs.eta(0.0) == 10.0,
              gs.eta(0.0), "eta(1) = 5, eta(0) = 10");
        check("guidance intensity endpoints", gs.scale(1.0) == 0.0 && gs.scale(0.0) == 50.0,
              gs.scale(0.0), "s(1) = 0, s(0) = 50");
    } else if (suite == "gradients") {
        RngStream rng(100, 0);
        heat::ThermalProblem prob;
        Array2 k(8, 8);
        for (auto& v : k.raw()) v = std::exp(rng.uniform(0.0, std::log(100.0)));
        auto res = heat::effective_conductivity_with_gradient(k, prob);
        double max_rel = 0;
        for (size_t i = 0; i < k.size(); ++i) {
            double h = 1e-4 * k[i];
            Array2 kp = k, km = k;
            kp[i] += h;
            km[i] -= h;
            double fd = (heat::effective_conductivity(kp, prob) -
                         heat::effective_conductivity(km, prob)) /
                        (2 * h);
            max_rel = std::max(max_rel, std::abs(fd - res.grad[i]) /
                                            std::max(std::abs(fd), 1e-12));
        }
        check("heat adjoint vs finite differences (8x8)", max_rel <= 1e-5, max_rel,
              "max relative error over all elements");
        double max_proj = 0;
        for (int i = 0; i < 50; ++i) {
            double eta = std::exp(rng.uniform(0.0, std::log(100.0)));
            double x = 0.5 + rng.uniform(-3.0, 3.0) / eta;
            double h = 3e-5 / eta;
            double fd =
                (guidance::project_value(x + h, eta) - guidance::project_value(x - h, eta)) /
                (2 * h);
            max_proj = std::max(max_proj, std::abs(fd - guidance::project_derivative(x, eta)) /
                                              std::max(std::abs(fd), 1e-12));
        }
        check("projection derivative vs finite differences", max_proj <= 1e-8, max_proj,
              "50 random (x, eta) pairs");
    } else if (suite == "conservation") {
        mpm::MpmConfig cfg;
        cfg.n_grid = 36;
        cfg.padding = 10;
        cfg.foam_size = 0.03;
        cfg.compression_velocity = 0.5;
        cfg.dt = 0.8 * cfg.dt_bound();
        cfg.shear_prony = {};
        cfg.max_displacement = 0.009;
        Array2 img(16, 16, 1.0);
        mpm::Simulator sim(cfg);
        sim.seed_from_image(img);
        double m_total = sim.particles().count * sim.particles().particle_mass;
        int steps = static_cast<int>(
            std::ceil(cfg.max_displacement / (cfg.compression_velocity * cfg.dt)));
        double W = 0, max_mass_err = 0;
        for (int n = 0; n < steps; ++n) {
            auto r = sim.step_full(n);
            W += r.plate_work;
            max_mass_err =
                std::max(max_mass_err, std::abs(sim.total_grid_mass() - m_total) / m_total);
        }
        check("grid mass equals particle mass every step", max_mass_err <= 1e-10, max_mass_err,
              std::to_string(steps) + " steps");
        double imbalance =
            std::abs(W - sim.elastic_energy() - sim.kinetic_energy()) / std::max(W, 1e-30);
        check("hyperelastic compression energy balance", imbalance <= 0.02, imbalance,
              "|W - E_el - E_kin| / W at 30% strain");
        // free-body momentum conservation
        mpm::MpmConfig fcfg = cfg;
        fcfg.compression_velocity = 0.0;
        mpm::Simulator free_sim(fcfg);
        free_sim.particles().resize(64, 1, 0);
        free_sim.particles().particle_mass = 1e-4;
        free_sim.particles().area0 = cfg.dx() * cfg.dx() / 4;
        for (int j = 0; j < 8; ++j)
            for (int i = 0; i < 8; ++i) {
                int p = j * 8 + i;
                free_sim.particles().px[p] = 0.035 + i * cfg.dx() / 2;
                free_sim.particles().py[p] = 0.036 + j * cfg.dx() / 2;
                free_sim.particles().vx[p] = 0.2;
                free_sim.particles().vy[p] = 0.05;
            }
        auto [mx0, my0] = free_sim.total_particle_momentum();
        double max_mom = 0;
        for (int n = 0; n < 100; ++n) {
            free_sim.step(n);
            auto [mx, my] = free_sim.total_particle_momentum();
            max_mom = std::max({max_mom, std::abs(mx - mx0) / std::abs(mx0),
                                std::abs(my - my0) / std::abs(my0)});
        }
        check("free-body momentum conservation", max_mom <= 1e-10, max_mom, "100 steps");
    } else if (suite == "bounds") {
        heat::ThermalProblem prob;
        RngStream rng(200, 0);
        double worst_margin = 1.0;
        bool ok = true;
        for (int trial = 0; trial < 20; ++trial) {
            foam::FoamSpec sp;
            sp.height_px = sp.width_px = 32;
            sp.cell_diameter_px = rng.uniform(5.0, 12.0);
            sp.target_volume_fraction = rng.uniform(0.3, 0.8);
            sp.rng_seed = 3000 + trial;
            auto img = foam::generate(sp);
            Array2 k = heat::conductivity_from_image(img.pixels, prob);
            heat::HeatSolver solver(k, prob);
            double keff = solver.effective_k(k);
            double phi = img.volume_fraction;
            double harmonic = 1.0 / (phi / prob.k_solid + (1 - phi) / prob.k_gas);
            double arithmetic = phi * prob.k_solid + (1 - phi) * prob.k_gas;
            ok = ok && keff >= harmonic * 0.99 && keff <= arithmetic * 1.01;
            worst_margin = std::min({worst_margin, keff / harmonic, arithmetic / keff});
            ok = ok && solver.temperature().nodal.min() >= prob.t_bottom - 1e-9 &&
                 solver.temperature().nodal.max() <= prob.t_top + 1e-9;
        }
        check("Wiener bounds and maximum principle (20 random foams)", ok, worst_margin,
              "worst bound margin");
    } else {
        throw std::runtime_error("verify: unknown suite '" + suite +
                                 "' (use gradients, conservation, bounds or schedules)");
    }
    return out;
}

inline bool print_report(const std::vector<CheckResult>& results) {
    bool all = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "[pass] " : "[FAIL] ") << r.name << ": " << io::fmt(r.value);
        if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
        std::cout << "\n";
        all = all && r.pass;
    }
    return all;
}

} // namespace physgen::cli
