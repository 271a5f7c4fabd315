#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "physgen/core/io.hpp"

// Run manifests: config hash, code version, seeds, trace paths and final
// metrics; written atomically into the run directory. A lock file makes one
// process the owner of one run directory.

namespace physgen::cli {

inline constexpr const char* kCodeVersion = "physgen 1.0.0";

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

struct RunManifest {
    std::string stage;
    uint64_t config_hash = 0;
    std::string code_version = kCodeVersion;
    std::map<std::string, uint64_t> seeds;
    std::vector<std::string> trace_files;
    std::map<std::string, double> metrics;

    void save(const std::string& path) const {
        io::atomic_write(path, [this](std::ostream& os) {
            os << "[manifest]\n";
            os << "stage = " << stage << "\n";
            os << "config_hash = " << config_hash << "\n";
            os << "code_version = " << code_version << "\n";
            os << "[seeds]\n";
            for (const auto& [k, v] : seeds) os << k << " = " << v << "\n";
            os << "[traces]\n";
            for (size_t i = 0; i < trace_files.size(); ++i)
                os << "file" << i << " = " << trace_files[i] << "\n";
            os << "[metrics]\n";
            for (const auto& [k, v] : metrics) os << k << " = " << io::fmt(v) << "\n";
        });
    }

    static RunManifest load(const std::string& path) {
        auto bytes = io::read_all(path);
        std::string text(bytes.begin(), bytes.end());
        RunManifest m;
        m.code_version.clear();
        std::istringstream is(text);
        std::string line, section;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            if (line.front() == '[') {
                section = line.substr(1, line.find(']') - 1);
                continue;
            }
            auto eq = line.find(" = ");
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq), value = line.substr(eq + 3);
            if (section == "manifest") {
                if (key == "stage") m.stage = value;
                if (key == "config_hash") m.config_hash = std::stoull(value);
                if (key == "code_version") m.code_version = value;
            } else if (section == "seeds") {
                m.seeds[key] = std::stoull(value);
            } else if (section == "traces") {
                m.trace_files.push_back(value);
            } else if (section == "metrics") {
                m.metrics[key] = std::stod(value);
            }
        }
        return m;
    }
};

// Exclusive ownership of a run directory for the lifetime of the guard.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
        std::filesystem::create_directories(dir);
        FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f)
            throw std::runtime_error("run directory is locked by another process: " +
                                     dir.string());
        std::fputs(kCodeVersion, f);
        std::fclose(f);
    }
    ~RunLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

} // namespace physgen::cli
