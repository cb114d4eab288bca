#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>

#include "hslf/calib.hpp"
#include "hslf/oxy.hpp"
#include "hslf/pipeline.hpp"
#include "hslf/sim.hpp"

namespace fixture {

inline const hslf::calib::CalibrationSet& calibration(const std::string& profile) {
    static const auto s5 = hslf::calib::synthesize_default_calibration(hslf::calib::s5_profile(),
                                                                       hslf::calib::default_calibration_distances());
    static const auto x20 = hslf::calib::synthesize_default_calibration(hslf::calib::x20_profile(),
                                                                        hslf::calib::default_calibration_distances());
    return profile == "x20" ? x20 : s5;
}

inline const hslf::oxy::ReferenceLibrary& library() {
    static const auto lib = hslf::oxy::build_synthetic_library(hslf::oxy::kDefaultLevels, hslf::oxy::library_grid());
    return lib;
}

/// Simulator plus a processor configured with the scene's gauze roi.
struct Rig {
    hslf::sim::Simulator sim;
    hslf::pipeline::PipelineConfig config;

    hslf::pipeline::Processor processor() const {
        return hslf::pipeline::Processor(sim.calibration(), sim.library(), config);
    }
};

inline Rig make_rig(const std::string& profile, const std::string& phantom,
                    std::optional<hslf::sim::SimOptions> options = {}) {
    const auto& c = calibration(profile);
    auto opts = options ? *options : hslf::sim::default_sim_options(c.profile);
    Rig rig{hslf::sim::Simulator(c, hslf::sim::builtin_phantom(phantom), library(), opts), {}};
    rig.config.profile = profile;
    rig.config.working_distance_cm = opts.working_distance_cm;
    if (const auto roi = rig.sim.white_roi())
        rig.config.roi = hslf::reflect::RegionOfInterest{*roi, 0};
    return rig;
}

/// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("hslf_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

} // namespace fixture
