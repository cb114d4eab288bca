#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "hslf/error.hpp"
#include "hslf/sim.hpp"

namespace hslf::sim {

using nlohmann::json;

Rect NormRect::to_pixels(int width, int height) const {
    const int x0 = static_cast<int>(std::lround(x * width));
    const int y0 = static_cast<int>(std::lround(y * height));
    const int x1 = static_cast<int>(std::lround((x + w) * width));
    const int y1 = static_cast<int>(std::lround((y + h) * height));
    return {x0, y0, x1 - x0, y1 - y0};
}

namespace {

bool unit(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

const char* shape_name(PhantomRegion::Shape s) {
    switch (s) {
    case PhantomRegion::Shape::rect: return "rect";
    case PhantomRegion::Shape::wedge: return "wedge";
    case PhantomRegion::Shape::split: return "split";
    }
    return "rect";
}

} // namespace

void validate(const ScenePhantom& p) {
    if (p.background == "tissue" || !p.materials.count(p.background))
        throw data_error("phantom: background material '" + p.background + "' is not defined");
    for (const auto& [name, m] : p.materials) {
        if (name == "tissue")
            throw data_error("phantom: 'tissue' is reserved and cannot name a material");
        if (m.base < 0.0 || m.peak < 0.0 || (m.kind == Material::Kind::gaussian && !(m.sigma_nm > 0.0)))
            throw data_error("phantom: material '" + name + "' has invalid parameters");
    }
    for (std::size_t i = 0; i < p.regions.size(); ++i) {
        const auto& r = p.regions[i];
        const std::string path = "phantom: regions[" + std::to_string(i) + "]";
        if (!unit(r.rect.x) || !unit(r.rect.y) || !(r.rect.w > 0) || !(r.rect.h > 0) || r.rect.x + r.rect.w > 1.0 + 1e-12 ||
            r.rect.y + r.rect.h > 1.0 + 1e-12)
            throw data_error(path + ".rect must lie within the unit square");
        switch (r.shape) {
        case PhantomRegion::Shape::rect:
            if (r.material != "tissue" && !p.materials.count(r.material))
                throw data_error(path + ".material '" + r.material + "' is not defined");
            if (r.material == "tissue" && !unit(r.so2))
                throw data_error(path + ".so2 outside [0, 1]");
            break;
        case PhantomRegion::Shape::wedge:
            if (!unit(r.so2_from) || !unit(r.so2_to))
                throw data_error(path + " so2 range outside [0, 1]");
            if (r.steps < 1)
                throw data_error(path + ".steps must be positive");
            break;
        case PhantomRegion::Shape::split:
            if (!unit(r.so2_left) || !unit(r.so2_right))
                throw data_error(path + " so2 values outside [0, 1]");
            if (!std::isfinite(r.boundary) || !std::isfinite(r.drift_per_frame))
                throw data_error(path + " boundary must be finite");
            break;
        }
    }
}

ScenePhantom parse_phantom(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw data_error(std::string("phantom: malformed JSON: ") + e.what());
    }
    ScenePhantom p;
    try {
        p.name = j.value("name", std::string{});
        p.background = j.at("background").get<std::string>();
        for (const auto& [name, m] : j.at("materials").items()) {
            Material mat;
            const auto type = m.at("type").get<std::string>();
            if (type == "flat") {
                mat.kind = Material::Kind::flat;
                mat.base = m.at("reflectance").get<double>();
            } else if (type == "gaussian") {
                mat.kind = Material::Kind::gaussian;
                mat.base = m.at("base").get<double>();
                mat.peak = m.at("peak").get<double>();
                mat.center_nm = m.at("center_nm").get<double>();
                mat.sigma_nm = m.at("sigma_nm").get<double>();
            } else {
                throw data_error("phantom: material '" + name + "' has unknown type '" + type + "'");
            }
            p.materials[name] = mat;
        }
        for (const auto& r : j.at("regions")) {
            PhantomRegion reg;
            const auto shape = r.at("shape").get<std::string>();
            const auto rc = r.at("rect").get<std::vector<double>>();
            if (rc.size() != 4)
                throw data_error("phantom: rect needs [x, y, w, h]");
            reg.rect = {rc[0], rc[1], rc[2], rc[3]};
            if (shape == "rect") {
                reg.shape = PhantomRegion::Shape::rect;
                reg.material = r.at("material").get<std::string>();
                if (reg.material == "tissue")
                    reg.so2 = r.at("so2").get<double>();
            } else if (shape == "wedge") {
                reg.shape = PhantomRegion::Shape::wedge;
                reg.so2_from = r.at("so2_from").get<double>();
                reg.so2_to = r.at("so2_to").get<double>();
                reg.steps = r.at("steps").get<int>();
            } else if (shape == "split") {
                reg.shape = PhantomRegion::Shape::split;
                reg.so2_left = r.at("so2_left").get<double>();
                reg.so2_right = r.at("so2_right").get<double>();
                reg.boundary = r.at("boundary").get<double>();
                reg.drift_per_frame = r.value("drift_per_frame", 0.0);
            } else {
                throw data_error("phantom: unknown region shape '" + shape + "'");
            }
            p.regions.push_back(reg);
        }
    } catch (const json::exception& e) {
        throw data_error(std::string("phantom: ") + e.what());
    }
    validate(p);
    return p;
}

std::string serialize_phantom(const ScenePhantom& p) {
    json j;
    j["name"] = p.name;
    j["background"] = p.background;
    json mats = json::object();
    for (const auto& [name, m] : p.materials) {
        if (m.kind == Material::Kind::flat)
            mats[name] = {{"type", "flat"}, {"reflectance", m.base}};
        else
            mats[name] = {{"type", "gaussian"}, {"base", m.base}, {"peak", m.peak}, {"center_nm", m.center_nm},
                          {"sigma_nm", m.sigma_nm}};
    }
    j["materials"] = std::move(mats);
    json regions = json::array();
    for (const auto& r : p.regions) {
        json o = {{"shape", shape_name(r.shape)}, {"rect", {r.rect.x, r.rect.y, r.rect.w, r.rect.h}}};
        switch (r.shape) {
        case PhantomRegion::Shape::rect:
            o["material"] = r.material;
            if (r.material == "tissue")
                o["so2"] = r.so2;
            break;
        case PhantomRegion::Shape::wedge:
            o["so2_from"] = r.so2_from;
            o["so2_to"] = r.so2_to;
            o["steps"] = r.steps;
            break;
        case PhantomRegion::Shape::split:
            o["so2_left"] = r.so2_left;
            o["so2_right"] = r.so2_right;
            o["boundary"] = r.boundary;
            o["drift_per_frame"] = r.drift_per_frame;
            break;
        }
        regions.push_back(std::move(o));
    }
    j["regions"] = std::move(regions);
    return j.dump(2) + "\n";
}

ScenePhantom load_phantom(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw data_error("phantom: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_phantom(ss.str());
}

void save_phantom(const ScenePhantom& p, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw data_error("phantom: cannot write " + path.string());
    out << serialize_phantom(p);
    if (!out)
        throw data_error("phantom: write failed for " + path.string());
}

namespace {

std::map<std::string, Material> desk_materials() {
    Material table{Material::Kind::flat, 0.35, 0, 0, 1};
    Material gauze{Material::Kind::flat, 1.0, 0, 0, 1};
    Material glove{Material::Kind::gaussian, 0.05, 0.6, 460.0, 30.0};
    return {{"table", table}, {"gauze", gauze}, {"glove", glove}};
}

PhantomRegion gauze_patch() {
    PhantomRegion g;
    g.shape = PhantomRegion::Shape::rect;
    g.rect = {0.05, 0.05, 0.2, 0.2};
    g.material = "gauze";
    return g;
}

} // namespace

ScenePhantom builtin_phantom(std::string_view name) {
    ScenePhantom p;
    p.name = std::string(name);
    p.background = "table";
    p.materials = desk_materials();
    p.regions.push_back(gauze_patch());
    if (name == "wedge") {
        PhantomRegion w;
        w.shape = PhantomRegion::Shape::wedge;
        w.rect = {0.05, 0.35, 0.9, 0.55};
        w.so2_from = 0.0;
        w.so2_to = 1.0;
        w.steps = 36;
        p.regions.push_back(w);
    } else if (name == "resection") {
        PhantomRegion s;
        s.shape = PhantomRegion::Shape::split;
        s.rect = {0.1, 0.35, 0.8, 0.55};
        s.so2_left = 31.0 / 35.0;
        s.so2_right = 9.0 / 35.0;
        s.boundary = 0.6;
        s.drift_per_frame = -0.01;
        p.regions.push_back(s);
    } else if (name == "props") {
        PhantomRegion t;
        t.shape = PhantomRegion::Shape::rect;
        t.rect = {0.3, 0.3, 0.35, 0.45};
        t.material = "tissue";
        t.so2 = 25.0 / 35.0;
        p.regions.push_back(t);
        PhantomRegion t2 = t;
        t2.rect = {0.35, 0.8, 0.25, 0.12};
        t2.so2 = 12.0 / 35.0;
        p.regions.push_back(t2);
        PhantomRegion glove;
        glove.shape = PhantomRegion::Shape::rect;
        glove.rect = {0.72, 0.45, 0.2, 0.35};
        glove.material = "glove";
        p.regions.push_back(glove);
    } else {
        throw usage_error("unknown phantom '" + std::string(name) + "' (expected wedge, resection or props)");
    }
    validate(p);
    return p;
}

std::vector<std::string> builtin_phantom_names() { return {"wedge", "resection", "props"}; }

PhantomFrame evaluate_phantom(const ScenePhantom& p, int width, int height, std::uint64_t frame_index) {
    PhantomFrame f;
    f.so2 = Raster<double>(width, height, std::numeric_limits<double>::quiet_NaN());
    for (const auto& [name, m] : p.materials)
        f.material_names.push_back(name);
    auto material_index = [&](const std::string& name) {
        return static_cast<std::int16_t>(
            std::find(f.material_names.begin(), f.material_names.end(), name) - f.material_names.begin());
    };
    f.material = Raster<std::int16_t>(width, height, material_index(p.background));

    for (const auto& r : p.regions) {
        const Rect px = r.rect.to_pixels(width, height);
        const int x0 = std::clamp(px.x, 0, width), x1 = std::clamp(px.x + px.width, 0, width);
        const int y0 = std::clamp(px.y, 0, height), y1 = std::clamp(px.y + px.height, 0, height);
        if (x1 <= x0 || y1 <= y0)
            continue;
        const int rw = x1 - x0;
        int column = 0;
        if (r.shape == PhantomRegion::Shape::split) {
            const double pos = r.boundary + r.drift_per_frame * static_cast<double>(frame_index);
            column = x0 + static_cast<int>(std::lround(std::clamp(pos, 0.0, 1.0) * rw));
            f.boundaries.push_back({Rect{x0, y0, rw, y1 - y0}, column, r.so2_left, r.so2_right});
        }
        const bool tissue = r.shape != PhantomRegion::Shape::rect || r.material == "tissue";
        const std::int16_t mat = tissue ? std::int16_t{-1} : material_index(r.material);
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                f.material.at(x, y) = mat;
                double s = std::numeric_limits<double>::quiet_NaN();
                switch (r.shape) {
                case PhantomRegion::Shape::rect:
                    if (tissue)
                        s = r.so2;
                    break;
                case PhantomRegion::Shape::wedge: {
                    const int k = static_cast<int>(static_cast<long long>(x - x0) * r.steps / rw);
                    s = r.steps == 1 ? r.so2_from : r.so2_from + (r.so2_to - r.so2_from) * k / (r.steps - 1);
                    break;
                }
                case PhantomRegion::Shape::split:
                    s = x < column ? r.so2_left : r.so2_right;
                    break;
                }
                f.so2.at(x, y) = s;
            }
        }
    }
    return f;
}

std::optional<Rect> gauze_roi(const ScenePhantom& p, int width, int height, int margin) {
    for (const auto& r : p.regions) {
        if (r.shape != PhantomRegion::Shape::rect || r.material != "gauze")
            continue;
        Rect px = r.rect.to_pixels(width, height);
        px.x += margin;
        px.y += margin;
        px.width -= 2 * margin;
        px.height -= 2 * margin;
        if (px.width <= 0 || px.height <= 0)
            return std::nullopt;
        return px;
    }
    return std::nullopt;
}

} // namespace hslf::sim

namespace hslf::sim {

RecoveryScore score_recovery(const PhantomFrame& truth, const oxy::SO2Map& map, const oxy::ReferenceLibrary& lib) {
    if (truth.so2.width != map.index.width || truth.so2.height != map.index.height)
        throw usage_error("score_recovery: map and truth sizes differ");
    RecoveryScore score;
    for (int y = 0; y < truth.so2.height; ++y)
        for (int x = 0; x < truth.so2.width; ++x) {
            if (!truth.tissue(x, y))
                continue;
            ++score.tissue_pixels;
            if (map.index.at(x, y) == nearest_level(lib, truth.so2.at(x, y)))
                ++score.correct;
        }
    score.accuracy = score.tissue_pixels ? static_cast<double>(score.correct) / score.tissue_pixels : 1.0;

    for (const auto& b : truth.boundaries) {
        std::vector<int> columns;
        const int x0 = b.region.x, x1 = b.region.x + b.region.width;
        for (int y = b.region.y; y < b.region.y + b.region.height; ++y) {
            // label: +1 closer to the left value, -1 closer to the right, 0 unclassified
            std::vector<int> label(static_cast<std::size_t>(x1 - x0), 0);
            for (int x = x0; x < x1; ++x) {
                const double v = map.so2.at(x, y);
                if (std::isnan(v))
                    continue;
                const int l = std::abs(v - b.so2_left) <= std::abs(v - b.so2_right) ? 1 : -1;
                label[static_cast<std::size_t>(x - x0)] = l;
            }
            // errors(c) = right labels left of c + left labels at or right of c
            int left_after = 0;
            for (int l : label)
                left_after += l > 0;
            int right_before = 0, best = left_after, best_c = x0;
            for (int x = x0; x < x1; ++x) {
                const int l = label[static_cast<std::size_t>(x - x0)];
                right_before += l < 0;
                left_after -= l > 0;
                if (right_before + left_after < best) {
                    best = right_before + left_after;
                    best_c = x + 1;
                }
            }
            columns.push_back(best_c);
        }
        if (columns.empty()) {
            score.boundary_error_px.push_back(std::numeric_limits<double>::infinity());
            continue;
        }
        std::nth_element(columns.begin(), columns.begin() + columns.size() / 2, columns.end());
        score.boundary_error_px.push_back(std::abs(columns[columns.size() / 2] - b.column));
    }
    return score;
}

} // namespace hslf::sim
