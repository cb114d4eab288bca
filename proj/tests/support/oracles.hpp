#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <vector>

#include "hslf/calib.hpp"
#include "hslf/cube.hpp"
#include "hslf/oxy.hpp"

namespace oracle {

/// Direct transcription of the spectral angle over flagged bands.
inline double sam(const std::vector<double>& a, const std::vector<double>& b, const std::vector<std::uint8_t>& valid) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!valid[i])
            continue;
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    double c = dot / std::sqrt(na * nb);
    c = std::min(1.0, std::max(-1.0, c));
    return std::acos(c);
}

/// Library values looked up by exact wavelength match, without any resampling.
struct GridLibrary {
    std::vector<double> levels;
    std::vector<std::vector<double>> spectra;   ///< [entry][band]
    std::vector<std::uint8_t> band_valid;
};

inline GridLibrary lookup_on_grid(const hslf::oxy::ReferenceLibrary& lib, const std::vector<double>& grid) {
    GridLibrary g;
    g.band_valid.assign(grid.size(), 0);
    for (const auto& e : lib.entries) {
        g.levels.push_back(e.so2);
        g.spectra.emplace_back(grid.size(), 0.0);
    }
    for (std::size_t b = 0; b < grid.size(); ++b) {
        for (std::size_t k = 0; k < lib.wavelengths_nm.size(); ++k) {
            if (lib.wavelengths_nm[k] == grid[b]) {
                g.band_valid[b] = 1;
                for (std::size_t e = 0; e < lib.entries.size(); ++e)
                    g.spectra[e][b] = lib.entries[e].reflectance[k];
            }
        }
    }
    return g;
}

/// Per pixel: every entry's angle over the bands valid in both pixel and
/// library, smallest angle wins, first entry on ties. -1 when unclassified.
inline std::vector<int> classify(const hslf::cube::SpectralCube& cube, const GridLibrary& lib, int min_valid_bands) {
    const int w = cube.width(), h = cube.height(), nb = cube.planes();
    std::vector<int> out(static_cast<std::size_t>(w) * h, -1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::vector<double> p(static_cast<std::size_t>(nb));
            std::vector<std::uint8_t> valid(static_cast<std::size_t>(nb));
            int count = 0;
            double na = 0;
            for (int b = 0; b < nb; ++b) {
                p[b] = cube.value(b, x, y);
                valid[b] = cube.valid(b, x, y) && lib.band_valid[b];
                if (valid[b]) {
                    ++count;
                    na += p[b] * p[b];
                }
            }
            if (count < min_valid_bands || na == 0)
                continue;
            int best = -1;
            double best_angle = std::numeric_limits<double>::infinity();
            for (std::size_t e = 0; e < lib.spectra.size(); ++e) {
                const double a = sam(p, lib.spectra[e], valid);
                if (a < best_angle) {
                    best_angle = a;
                    best = static_cast<int>(e);
                }
            }
            out[static_cast<std::size_t>(y) * w + x] = best;
        }
    return out;
}

/// Linear interpolation of (wavelength, value) samples onto band centres; a
/// band needs two valid samples around it no further apart than twice its
/// local spacing, or a sample exactly on it.
struct Interpolated {
    std::vector<double> values;
    std::vector<std::uint8_t> valid;
};

inline Interpolated interpolate(std::vector<std::pair<double, double>> samples, const std::vector<double>& grid) {
    std::sort(samples.begin(), samples.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    Interpolated r{std::vector<double>(grid.size(), 0.0), std::vector<std::uint8_t>(grid.size(), 0)};
    const std::size_t n = grid.size();
    for (std::size_t b = 0; b < n; ++b) {
        const double lb = grid[b];
        double spacing;
        if (b == 0)
            spacing = grid[1] - grid[0];
        else if (b == n - 1)
            spacing = grid[n - 1] - grid[n - 2];
        else
            spacing = (grid[b + 1] - grid[b - 1]) / 2;
        bool exact = false;
        for (const auto& s : samples)
            if (s.first == lb) {
                r.values[b] = s.second;
                r.valid[b] = 1;
                exact = true;
                break;
            }
        if (exact)
            continue;
        const std::pair<double, double>* lo = nullptr;
        const std::pair<double, double>* hi = nullptr;
        for (const auto& s : samples) {
            if (s.first < lb)
                lo = &s;
            else if (s.first > lb && !hi)
                hi = &s;
        }
        if (!lo || !hi || hi->first - lo->first > 2 * spacing)
            continue;
        const double t = (lb - lo->first) / (hi->first - lo->first);
        r.values[b] = lo->second + t * (hi->second - lo->second);
        r.valid[b] = 1;
    }
    return r;
}

/// Discrete-event model of a drop-oldest queue feeding one server with a
/// fixed service time. Arrivals at i * period; items still queued at the end
/// are served.
struct QueueOutcome {
    std::uint64_t served = 0;
    std::uint64_t dropped = 0;
    double max_age = 0;   ///< arrival to completion
};

inline QueueOutcome drop_oldest_queue(std::uint64_t arrivals, double period, double service, std::size_t capacity) {
    QueueOutcome out;
    std::deque<double> queue;   // arrival times
    double busy_until = 0;
    bool busy = false;
    double in_service_arrival = 0;
    std::uint64_t next = 0;
    while (next < arrivals || !queue.empty() || busy) {
        const double t_arrival = next < arrivals ? next * period : std::numeric_limits<double>::infinity();
        const double t_done = busy ? busy_until : std::numeric_limits<double>::infinity();
        if (t_done <= t_arrival) {
            busy = false;
            ++out.served;
            out.max_age = std::max(out.max_age, t_done - in_service_arrival);
            if (!queue.empty()) {
                in_service_arrival = queue.front();
                queue.pop_front();
                busy = true;
                busy_until = t_done + service;
            }
        } else {
            ++next;
            if (!busy) {
                in_service_arrival = t_arrival;
                busy = true;
                busy_until = t_arrival + service;
            } else {
                if (queue.size() == capacity) {
                    queue.pop_front();
                    ++out.dropped;
                }
                queue.push_back(t_arrival);
            }
        }
    }
    return out;
}

/// Random spectrum with entries in [lo, hi).
inline std::vector<double> random_spectrum(std::mt19937_64& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v)
        x = u(rng);
    return v;
}

} // namespace oracle
