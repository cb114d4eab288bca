#include "hslf/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "hslf/error.hpp"

namespace hslf::pipeline {

using nlohmann::json;

namespace {

constexpr std::string_view kModeNames[] = {"rgb", "overlay", "composite", "so2", "similarity"};

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0, Clock::time_point t1) {
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

} // namespace

std::string_view to_string(OverlayMode mode) { return kModeNames[static_cast<int>(mode)]; }

OverlayMode overlay_mode_from(std::string_view name) {
    for (int i = 0; i < 5; ++i)
        if (kModeNames[i] == name)
            return static_cast<OverlayMode>(i);
    throw usage_error("unknown overlay mode '" + std::string(name) + "'");
}

void validate(const PipelineConfig& cfg, const calib::CameraProfile* profile) {
    if (!(cfg.working_distance_cm > 0.0))
        throw usage_error("working distance must be positive");
    if (!(cfg.gauze_reflectance_factor > 0.0 && cfg.gauze_reflectance_factor <= 1.0))
        throw usage_error("gauze reflectance factor must lie in (0, 1]");
    oxy::validate_threshold(cfg.sam_threshold);
    oxy::Colormap::by_name(cfg.colormap);
    if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0))
        throw usage_error("alpha must lie in [0, 1]");
    if (!(cfg.target_fps > 0.0))
        throw usage_error("target fps must be positive");
    if (cfg.queue_capacity < 1)
        throw usage_error("queue capacity must be at least 1");
    if (cfg.min_valid_bands < 1)
        throw usage_error("min valid bands must be at least 1");
    if (cfg.dark_floor_dn < 0)
        throw usage_error("dark floor must not be negative");
    if (!(cfg.epsilon_white >= 0.0))
        throw usage_error("white floor must not be negative");
    if (!(cfg.white_max_age_s > 0.0))
        throw usage_error("white reference max age must be positive");
    if (profile) {
        if (profile->name != cfg.profile)
            throw usage_error("config profile '" + cfg.profile + "' does not match camera '" + profile->name + "'");
        if (cfg.target_fps > profile->max_fps)
            throw usage_error("target fps exceeds the profile's maximum of " + std::to_string(profile->max_fps));
        if (cfg.roi)
            reflect::validate(*cfg.roi, profile->subimage_width, profile->subimage_height);
    }
}

std::string serialize_config(const PipelineConfig& cfg) {
    json j;
    j["profile"] = cfg.profile;
    j["working_distance_cm"] = cfg.working_distance_cm;
    if (cfg.roi) {
        const Rect& r = cfg.roi->rect;
        j["roi"] = {{"rect", {r.x, r.y, r.width, r.height}}, {"frame_id", cfg.roi->frame_id}};
    } else {
        j["roi"] = nullptr;
    }
    j["gauze_reflectance_factor"] = cfg.gauze_reflectance_factor;
    j["library"] = cfg.library;
    j["sam_threshold"] = cfg.sam_threshold;
    j["colormap"] = cfg.colormap;
    j["alpha"] = cfg.alpha;
    j["overlay_mode"] = to_string(cfg.overlay_mode);
    j["target_fps"] = cfg.target_fps;
    j["queue_capacity"] = cfg.queue_capacity;
    j["min_valid_bands"] = cfg.min_valid_bands;
    j["dark_floor_dn"] = cfg.dark_floor_dn;
    j["epsilon_white"] = cfg.epsilon_white;
    j["white_max_age_s"] = cfg.white_max_age_s;
    return j.dump();
}

PipelineConfig parse_config(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw data_error(std::string("config: ") + e.what());
    }
    if (!j.is_object())
        throw data_error("config: expected an object");
    PipelineConfig c;
    try {
        c.profile = j.value("profile", c.profile);
        c.working_distance_cm = j.value("working_distance_cm", c.working_distance_cm);
        if (j.contains("roi") && !j["roi"].is_null()) {
            const auto& r = j["roi"].at("rect");
            if (!r.is_array() || r.size() != 4)
                throw data_error("config: roi.rect must be [x, y, width, height]");
            reflect::RegionOfInterest roi;
            roi.rect = Rect{r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()};
            roi.frame_id = j["roi"].value("frame_id", std::uint64_t{0});
            c.roi = roi;
        }
        c.gauze_reflectance_factor = j.value("gauze_reflectance_factor", c.gauze_reflectance_factor);
        c.library = j.value("library", c.library);
        c.sam_threshold = j.value("sam_threshold", c.sam_threshold);
        c.colormap = j.value("colormap", c.colormap);
        c.alpha = j.value("alpha", c.alpha);
        c.overlay_mode = overlay_mode_from(j.value("overlay_mode", std::string(to_string(c.overlay_mode))));
        c.target_fps = j.value("target_fps", c.target_fps);
        c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
        c.min_valid_bands = j.value("min_valid_bands", c.min_valid_bands);
        c.dark_floor_dn = j.value("dark_floor_dn", c.dark_floor_dn);
        c.epsilon_white = j.value("epsilon_white", c.epsilon_white);
        c.white_max_age_s = j.value("white_max_age_s", c.white_max_age_s);
    } catch (const json::exception& e) {
        throw data_error(std::string("config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------

namespace {

bool white_matches(const reflect::WhiteReference& w, const PipelineConfig& cfg) {
    return cfg.roi && w.roi == *cfg.roi && w.gauze_reflectance_factor == cfg.gauze_reflectance_factor;
}

double saturation_fraction(const cube::RawSensorFrame& frame, const calib::MicrolensLayout& layout) {
    const std::uint16_t sat = static_cast<std::uint16_t>(frame.saturation_dn());
    std::uint64_t hits = 0, total = 0;
    for (const Rect& r : layout.lenses) {
        for (int y = r.y; y < r.y + r.height; ++y) {
            const std::uint16_t* p = frame.pixels.data() + static_cast<std::size_t>(y) * frame.width + r.x;
            for (int x = 0; x < r.width; ++x)
                hits += p[x] == sat;
        }
        total += static_cast<std::uint64_t>(r.area());
    }
    return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

So2Summary summarize(const oxy::Classification& c, const oxy::TissueMask& mask, std::size_t levels) {
    So2Summary s;
    s.histogram.assign(levels, 0);
    double so2 = 0.0, angle = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask.data[i])
            continue;
        const int k = c.so2.index.data[i];
        if (k >= 0 && static_cast<std::size_t>(k) < levels)
            ++s.histogram[static_cast<std::size_t>(k)];
        so2 += c.so2.so2.data[i];
        angle += c.similarity.angle.data[i];
        ++s.tissue_pixels;
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.mean_so2 = s.tissue_pixels ? so2 / static_cast<double>(s.tissue_pixels) : nan;
    s.mean_angle = s.tissue_pixels ? angle / static_cast<double>(s.tissue_pixels) : nan;
    return s;
}

RgbaImage opaque(const RgbImage& img) {
    RgbaImage out(img.width, img.height);
    for (std::size_t i = 0; i < img.size(); ++i)
        out.data[i] = {img.data[i].r, img.data[i].g, img.data[i].b, 255};
    return out;
}

} // namespace

RgbaImage display_image(const ProcessedFrame& f, OverlayMode mode, const oxy::Colormap& cmap) {
    switch (mode) {
    case OverlayMode::rgb:
        return opaque(f.rgb);
    case OverlayMode::overlay:
        if (f.overlay.size())
            return f.overlay;
        return RgbaImage(f.rgb.width, f.rgb.height);
    case OverlayMode::composite:
        return opaque(f.composite.size() ? f.composite : f.rgb);
    case OverlayMode::so2:
    case OverlayMode::similarity: {
        const auto& src = mode == OverlayMode::so2 ? f.classification.so2.so2 : f.classification.similarity.angle;
        RgbaImage out(f.rgb.width, f.rgb.height, Rgba8{0, 0, 0, 255});
        if (src.size() != out.size())
            return out;
        const oxy::Colormap gray = oxy::Colormap::by_name("gray");
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double v = src.data[i];
            if (std::isnan(v))
                continue;
            // similarity: bright where the match is close
            const Rgb8 c = mode == OverlayMode::so2 ? cmap(v) : gray(1.0 - v / (std::numbers::pi / 2));
            out.data[i] = {c.r, c.g, c.b, 255};
        }
        return out;
    }
    }
    return opaque(f.rgb);
}

ProcessedFrame process_frame(const cube::RawSensorFrame& frame, const PipelineConfig& cfg, PipelineState& state) {
    const auto t0 = Clock::now();
    ProcessedFrame out;
    out.frame_id = frame.frame_id;
    out.timestamp_ms = frame.timestamp_ms;
    out.config = cfg;
    auto& ws = state.workspace;
    double reflectance_ms = 0.0, rgb_ms = 0.0, correlation_ms = 0.0, image_ms = 0.0;

    try {
        if (!state.calibration || !state.library)
            throw internal_error("pipeline state is missing calibration or library");
        const auto& resolved = *state.calibration;
        const auto& grid = resolved.profile.band_grid;
        if (frame.width != resolved.profile.sensor_width || frame.height != resolved.profile.sensor_height)
            throw data_error("frame " + std::to_string(frame.frame_id) + " is " + std::to_string(frame.width) + "x" +
                             std::to_string(frame.height) + ", sensor is " +
                             std::to_string(resolved.profile.sensor_width) + "x" +
                             std::to_string(resolved.profile.sensor_height));

        auto t = Clock::now();
        cube::ExtractOptions extract;
        extract.dark_floor_dn = cfg.dark_floor_dn;
        cube::extract_raw_cube(frame, resolved.layout, extract, ws.raw);
        cube::warp_cube(ws.raw, resolved, ws.transformed);
        cube::resample_uniform(ws.transformed, resolved, grid, ws.uniform);
        reflectance_ms += ms_since(t, Clock::now());

        if (cfg.roi && (!state.white || !white_matches(*state.white, cfg))) {
            reflect::WhiteOptions wo;
            wo.gauze_reflectance_factor = cfg.gauze_reflectance_factor;
            wo.epsilon_white = cfg.epsilon_white;
            auto white = std::make_shared<reflect::WhiteReference>(
                reflect::extract_white_reference(ws.uniform, *cfg.roi, wo));
            white->frame_id = frame.frame_id;
            white->timestamp_ms = frame.timestamp_ms;
            state.white = std::move(white);
            out.white_updated = true;
        }

        if (!state.white) {
            out.uncalibrated = true;
            out.warnings.emplace_back("uncalibrated");
            // without a white reference the RGB view shows the raw uniform cube scaled to [0, 1]
            t = Clock::now();
            const float scale = 1.0f / static_cast<float>(frame.saturation_dn());
            for (float& v : ws.uniform.values())
                v *= scale;
            out.rgb = oxy::render_rgb(ws.uniform);
            rgb_ms += ms_since(t, Clock::now());
        } else {
            t = Clock::now();
            reflect::normalize_reflectance_in_place(ws.uniform, *state.white);
            reflectance_ms += ms_since(t, Clock::now());

            t = Clock::now();
            out.rgb = oxy::render_rgb(ws.uniform);
            rgb_ms += ms_since(t, Clock::now());

            t = Clock::now();
            oxy::ClassifyOptions co;
            co.min_valid_bands = cfg.min_valid_bands;
            out.classification = oxy::classify_so2(ws.uniform, *state.library, co);
            correlation_ms += ms_since(t, Clock::now());

            t = Clock::now();
            out.mask = oxy::build_tissue_mask(out.classification.similarity, cfg.sam_threshold, cfg.min_valid_bands);
            out.overlay = oxy::colorize(out.classification.so2, out.mask, oxy::Colormap::by_name(cfg.colormap), cfg.alpha);
            out.composite = oxy::composite(out.rgb, out.overlay);
            image_ms += ms_since(t, Clock::now());

            out.summary = summarize(out.classification, out.mask, static_cast<std::size_t>(state.library->entries()));
            if (state.white->is_stale(frame.timestamp_ms, cfg.white_max_age_s))
                out.warnings.emplace_back("stale white reference");
        }
        if (resolved.extrapolated)
            out.warnings.emplace_back("extrapolated working distance");
        out.saturation_fraction = saturation_fraction(frame, resolved.layout);
        if (out.saturation_fraction > 0.01)
            out.warnings.emplace_back("saturation " + std::to_string(out.saturation_fraction * 100.0) + "%");
        out.display = display_image(out, cfg.overlay_mode, oxy::Colormap::by_name(cfg.colormap));
    } catch (const std::exception& e) {
        out.failed = true;
        out.error = e.what();
    }

    out.timings.reflectance_cube_ms = reflectance_ms;
    out.timings.rgb_image_ms = rgb_ms;
    out.timings.oxy_correlation_ms = correlation_ms;
    out.timings.oxy_image_ms = image_ms;
    out.timings.total_ms = ms_since(t0, Clock::now());
    out.timings.overhead_ms =
        std::max(0.0, out.timings.total_ms - (reflectance_ms + rgb_ms + correlation_ms + image_ms));
    return out;
}

// ---------------------------------------------------------------------------

Processor::Processor(calib::CalibrationSet calibration, oxy::ReferenceLibrary library, PipelineConfig cfg)
    : calibration_(std::move(calibration)), library_(std::move(library)), cfg_(std::move(cfg)) {
    calib::validate(calibration_);
    oxy::validate(library_);
    validate(cfg_, &calibration_.profile);
    state_.calibration = std::make_shared<const calib::ResolvedCalibration>(
        calib::calibration_at_distance(calibration_, cfg_.working_distance_cm));
    state_.library = std::make_shared<const oxy::PreparedLibrary>(
        library_, calibration_.profile.band_grid.wavelengths(), cfg_.min_valid_bands);
}

void Processor::configure(const PipelineConfig& cfg) {
    validate(cfg, &calibration_.profile);
    if (cfg.working_distance_cm != cfg_.working_distance_cm) {
        state_.calibration = std::make_shared<const calib::ResolvedCalibration>(
            calib::calibration_at_distance(calibration_, cfg.working_distance_cm));
        state_.white.reset();
    }
    if (cfg.min_valid_bands != cfg_.min_valid_bands)
        state_.library = std::make_shared<const oxy::PreparedLibrary>(
            library_, calibration_.profile.band_grid.wavelengths(), cfg.min_valid_bands);
    if (cfg.dark_floor_dn != cfg_.dark_floor_dn || cfg.epsilon_white != cfg_.epsilon_white)
        state_.white.reset();
    cfg_ = cfg;
}

} // namespace hslf::pipeline
