#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>

#include "physgen/core/io.hpp"
#include "physgen/foam/foamgen.hpp"
#include "physgen/guidance/guidance.hpp"
#include "physgen/nn/train.hpp"
#include "physgen/solvers/fracture.hpp"
#include "physgen/solvers/heat.hpp"
#include "physgen/solvers/mpm.hpp"

// Flat, sectioned key-value experiment configuration with an explicit schema
// version. Unknown keys are hard errors that name the offending entry.

namespace physgen::cli {

class Ini {
public:
    static Ini parse(const std::string& text) {
        Ini ini;
        std::istringstream is(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto semi = line.find(';');
            if (semi != std::string::npos) line.erase(semi);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw std::runtime_error("config line " + std::to_string(lineno) +
                                             ": malformed section header");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            ini.values_[section + "." + key] = value;
        }
        return ini;
    }

    static Ini load(const std::string& path) {
        auto bytes = io::read_all(path);
        return parse(std::string(bytes.begin(), bytes.end()));
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    double get(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stod(it->second);
    }
    int get(const std::string& key, int fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stoi(it->second);
    }
    uint64_t get(const std::string& key, uint64_t fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stoull(it->second);
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

    // every key must belong to the known set; unknown keys are named
    void check_known(const std::set<std::string>& known) const {
        for (const auto& [key, value] : values_)
            if (!known.count(key))
                throw std::runtime_error("config: unknown key '" + key + "'");
    }

private:
    static std::string trim(const std::string& s) {
        auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

// Typed experiment configuration covering every stage.
struct ExperimentConfig {
    int schema_version = 1;
    std::string stage; // gen-data | train | sample | guide | simulate-heat | ...

    foam::DatasetParams foamgen;
    nn::ScoreNetConfig network;
    nn::TrainConfig training;
    sde::SamplerConfig sampler;

    // guidance
    std::string objective = "keff"; // keff | curve | energy
    guidance::GradientMode mode = guidance::GradientMode::detached;
    guidance::NormMode norm = guidance::NormMode::rms;
    int eval_stride = 1;
    double final_eta = 100.0;
    double keff_target = 30.0;
    double phi_target = 0.45;
    double energy_m = 5e-5;
    double volume_weight = 2.0;

    heat::ThermalProblem heat;
    mpm::MpmConfig mpm;
    fracture::FractureProblem fracture;

    static const std::set<std::string>& known_keys() {
        static const std::set<std::string> keys = {
            "meta.schema_version", "meta.stage",
            "foamgen.count", "foamgen.image_px", "foamgen.d_cell_min", "foamgen.d_cell_max",
            "foamgen.phi_min", "foamgen.phi_max", "foamgen.t_init", "foamgen.roundness",
            "foamgen.seed",
            "network.image_size", "network.in_channels", "network.base_widths",
            "network.resblocks_per_level", "network.attention_levels", "network.attention_heads",
            "network.groupnorm_groups", "network.time_embed_dim",
            "training.batch_size", "training.learning_rate", "training.epochs",
            "training.rng_seed", "training.checkpoint_every", "training.use_ema",
            "training.ema_decay",
            "sampler.steps", "sampler.rng_seed",
            "guidance.objective", "guidance.mode", "guidance.norm", "guidance.eval_stride",
            "guidance.final_eta", "guidance.keff_target", "guidance.phi_target",
            "guidance.energy_m", "guidance.volume_weight",
            "heat.k_solid", "heat.k_gas", "heat.t_top", "heat.t_bottom",
            "mpm.n_grid", "mpm.padding", "mpm.n_ppc", "mpm.dt", "mpm.density", "mpm.youngs",
            "mpm.poisson", "mpm.compression_velocity", "mpm.foam_size", "mpm.pad_rows",
            "mpm.friction", "mpm.dbar_min", "mpm.out_of_plane_depth", "mpm.max_displacement",
            "mpm.curve_points", "mpm.no_slip", "mpm.shear_g_ratio", "mpm.shear_tau",
            "fracture.e_solid", "fracture.e_void", "fracture.poisson", "fracture.g_c",
            "fracture.length_scale", "fracture.total_displacement", "fracture.load_steps",
            "fracture.mesh_n", "fracture.stagger_tol",
        };
        return keys;
    }

    static ExperimentConfig from_ini(const Ini& ini) {
        ini.check_known(known_keys());
        ExperimentConfig c;
        c.schema_version = ini.get("meta.schema_version", 1);
        if (c.schema_version != 1)
            throw std::runtime_error("config: unsupported schema_version " +
                                     std::to_string(c.schema_version));
        c.stage = ini.get("meta.stage", std::string(""));

        c.foamgen.count = ini.get("foamgen.count", c.foamgen.count);
        c.foamgen.image_px = ini.get("foamgen.image_px", c.foamgen.image_px);
        c.foamgen.d_cell_min = ini.get("foamgen.d_cell_min", c.foamgen.d_cell_min);
        c.foamgen.d_cell_max = ini.get("foamgen.d_cell_max", c.foamgen.d_cell_max);
        c.foamgen.phi_min = ini.get("foamgen.phi_min", c.foamgen.phi_min);
        c.foamgen.phi_max = ini.get("foamgen.phi_max", c.foamgen.phi_max);
        c.foamgen.t_init = ini.get("foamgen.t_init", c.foamgen.t_init);
        c.foamgen.roundness = ini.get("foamgen.roundness", c.foamgen.roundness);
        c.foamgen.seed = ini.get("foamgen.seed", c.foamgen.seed);

        c.network.image_size = ini.get("network.image_size", c.network.image_size);
        c.network.in_channels = ini.get("network.in_channels", c.network.in_channels);
        if (ini.has("network.base_widths"))
            c.network.base_widths = parse_int_list(ini.get("network.base_widths", std::string()));
        c.network.resblocks_per_level =
            ini.get("network.resblocks_per_level", c.network.resblocks_per_level);
        if (ini.has("network.attention_levels")) {
            auto lv = parse_int_list(ini.get("network.attention_levels", std::string()));
            c.network.attention_levels = std::set<int>(lv.begin(), lv.end());
        }
        c.network.attention_heads = ini.get("network.attention_heads", c.network.attention_heads);
        c.network.groupnorm_groups = ini.get("network.groupnorm_groups", c.network.groupnorm_groups);
        c.network.time_embed_dim = ini.get("network.time_embed_dim", c.network.time_embed_dim);

        c.training.batch_size = ini.get("training.batch_size", c.training.batch_size);
        c.training.learning_rate = ini.get("training.learning_rate", c.training.learning_rate);
        c.training.epochs = ini.get("training.epochs", c.training.epochs);
        c.training.rng_seed = ini.get("training.rng_seed", c.training.rng_seed);
        c.training.checkpoint_every = ini.get("training.checkpoint_every", c.training.checkpoint_every);
        c.training.use_ema = ini.get("training.use_ema", c.training.use_ema ? 1 : 0) != 0;
        c.training.ema_decay = ini.get("training.ema_decay", c.training.ema_decay);

        c.sampler.steps = ini.get("sampler.steps", c.sampler.steps);
        c.sampler.rng_seed = ini.get("sampler.rng_seed", c.sampler.rng_seed);

        c.objective = ini.get("guidance.objective", c.objective);
        std::string mode = ini.get("guidance.mode", std::string("detached"));
        if (mode == "detached")
            c.mode = guidance::GradientMode::detached;
        else if (mode == "chained")
            c.mode = guidance::GradientMode::chained;
        else
            throw std::runtime_error("config: guidance.mode must be detached or chained");
        std::string norm = ini.get("guidance.norm", std::string("rms"));
        if (norm == "rms")
            c.norm = guidance::NormMode::rms;
        else if (norm == "l2")
            c.norm = guidance::NormMode::l2;
        else if (norm == "none")
            c.norm = guidance::NormMode::none;
        else
            throw std::runtime_error("config: guidance.norm must be rms, l2 or none");
        c.eval_stride = ini.get("guidance.eval_stride", c.eval_stride);
        c.final_eta = ini.get("guidance.final_eta", c.final_eta);
        c.keff_target = ini.get("guidance.keff_target", c.keff_target);
        c.phi_target = ini.get("guidance.phi_target", c.phi_target);
        c.energy_m = ini.get("guidance.energy_m", c.energy_m);
        c.volume_weight = ini.get("guidance.volume_weight", c.volume_weight);

        c.heat.k_solid = ini.get("heat.k_solid", c.heat.k_solid);
        c.heat.k_gas = ini.get("heat.k_gas", c.heat.k_gas);
        c.heat.t_top = ini.get("heat.t_top", c.heat.t_top);
        c.heat.t_bottom = ini.get("heat.t_bottom", c.heat.t_bottom);

        c.mpm.n_grid = ini.get("mpm.n_grid", c.mpm.n_grid);
        c.mpm.padding = ini.get("mpm.padding", c.mpm.padding);
        c.mpm.n_ppc = ini.get("mpm.n_ppc", c.mpm.n_ppc);
        c.mpm.dt = ini.get("mpm.dt", c.mpm.dt);
        c.mpm.density = ini.get("mpm.density", c.mpm.density);
        c.mpm.youngs = ini.get("mpm.youngs", c.mpm.youngs);
        c.mpm.poisson = ini.get("mpm.poisson", c.mpm.poisson);
        c.mpm.compression_velocity =
            ini.get("mpm.compression_velocity", c.mpm.compression_velocity);
        c.mpm.foam_size = ini.get("mpm.foam_size", c.mpm.foam_size);
        c.mpm.pad_rows = ini.get("mpm.pad_rows", c.mpm.pad_rows);
        c.mpm.friction = ini.get("mpm.friction", c.mpm.friction);
        c.mpm.dbar_min = ini.get("mpm.dbar_min", c.mpm.dbar_min);
        c.mpm.out_of_plane_depth = ini.get("mpm.out_of_plane_depth", c.mpm.out_of_plane_depth);
        c.mpm.max_displacement = ini.get("mpm.max_displacement", c.mpm.max_displacement);
        c.mpm.curve_points = ini.get("mpm.curve_points", c.mpm.curve_points);
        c.mpm.no_slip = ini.get("mpm.no_slip", c.mpm.no_slip ? 1 : 0) != 0;
        if (ini.has("mpm.shear_g_ratio") || ini.has("mpm.shear_tau")) {
            double ratio = ini.get("mpm.shear_g_ratio", 0.25);
            double tau = ini.get("mpm.shear_tau", 0.5);
            c.mpm.shear_prony = ratio > 0 ? std::vector<mpm::PronyBranch>{{ratio, tau}}
                                          : std::vector<mpm::PronyBranch>{};
        }

        c.fracture.e_solid = ini.get("fracture.e_solid", c.fracture.e_solid);
        c.fracture.e_void = ini.get("fracture.e_void", c.fracture.e_void);
        c.fracture.poisson = ini.get("fracture.poisson", c.fracture.poisson);
        c.fracture.g_c = ini.get("fracture.g_c", c.fracture.g_c);
        c.fracture.length_scale = ini.get("fracture.length_scale", c.fracture.length_scale);
        c.fracture.total_displacement =
            ini.get("fracture.total_displacement", c.fracture.total_displacement);
        c.fracture.load_steps = ini.get("fracture.load_steps", c.fracture.load_steps);
        c.fracture.mesh_n = ini.get("fracture.mesh_n", c.fracture.mesh_n);
        c.fracture.stagger_tol = ini.get("fracture.stagger_tol", c.fracture.stagger_tol);

        // validate module invariants up front
        c.network.validate();
        c.training.validate();
        c.sampler.validate();
        c.mpm.validate();
        c.fracture.validate();
        c.heat.validate();
        if (!(c.foamgen.phi_min > 0 && c.foamgen.phi_max < 1 &&
              c.foamgen.phi_min <= c.foamgen.phi_max))
            throw std::runtime_error("config: foamgen volume-fraction range invalid");
        return c;
    }

    static std::vector<int> parse_int_list(const std::string& s) {
        std::vector<int> out;
        std::istringstream is(s);
        std::string tok;
        while (std::getline(is, tok, ','))
            if (!tok.empty()) out.push_back(std::stoi(tok));
        return out;
    }
};

} // namespace physgen::cli
