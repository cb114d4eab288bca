#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include "hslf/error.hpp"
#include "hslf/pipeline.hpp"
#include "oracles.hpp"

using namespace hslf;
using namespace hslf::pipeline;
using Clock = std::chrono::steady_clock;

namespace {

std::unique_ptr<FrameSource> tiny_source(double fps, std::optional<std::uint64_t> count) {
    return make_vector_source({cube::RawSensorFrame(4, 4)}, fps, count);
}

/// Sleeps for `service_ms` per frame and records how long each call took.
struct SlowProcessor {
    double service_ms;
    std::mutex mutex;
    std::vector<double> durations;

    std::optional<ProcessedFrame> operator()(const cube::RawSensorFrame& f) {
        const auto t0 = Clock::now();
        std::this_thread::sleep_until(t0 + std::chrono::duration<double, std::milli>(service_ms));
        ProcessedFrame out;
        out.frame_id = f.frame_id;
        std::lock_guard lock(mutex);
        durations.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
        return out;
    }

    double mean() {
        std::lock_guard lock(mutex);
        double s = 0;
        for (double d : durations)
            s += d;
        return s / static_cast<double>(durations.size());
    }
    double max() {
        std::lock_guard lock(mutex);
        return *std::max_element(durations.begin(), durations.end());
    }
};

} // namespace

TEST_CASE("queue model oracle sanity") {
    const auto fast = oracle::drop_oldest_queue(30, 100, 10, 2);
    CHECK(fast.dropped == 0);
    CHECK(fast.served == 30);
    CHECK(fast.max_age == 10);
    const auto slow = oracle::drop_oldest_queue(3, 1, 10, 1);
    CHECK(slow.served == 2);
    CHECK(slow.dropped == 1);
}

TEST_CASE("a fast-enough processor drops nothing") {
    auto src = tiny_source(20, 30);
    SlowProcessor proc{10.0, {}, {}};
    std::vector<std::uint64_t> ids;
    const auto stats = run_stream(
        *src, [&](const cube::RawSensorFrame& f) { return proc(f); },
        {[&](const std::shared_ptr<const ProcessedFrame>& p) { ids.push_back(p->frame_id); }}, {});
    CHECK(stats.frames_in == 30);
    CHECK(stats.frames_dropped == 0);
    CHECK(stats.frames_processed == 30);
    CHECK(stats.frames_published == 30);
    CHECK(stats.frames_left == 0);
    CHECK(ids.size() == 30);
    CHECK(std::is_sorted(ids.begin(), ids.end()));
}

TEST_CASE("drops follow the drop-oldest queue model") {
    const std::uint64_t frames = 90;
    const double fps = 15.0;
    const int capacity = 2;
    auto src = tiny_source(fps, frames);
    SlowProcessor proc{170.0, {}, {}};
    std::vector<std::uint64_t> ids;
    const auto stats = run_stream(
        *src, [&](const cube::RawSensorFrame& f) { return proc(f); },
        {[&](const std::shared_ptr<const ProcessedFrame>& p) { ids.push_back(p->frame_id); }}, {},
        StreamOptions{capacity});

    const auto model = oracle::drop_oldest_queue(frames, 1000.0 / fps, proc.mean(), capacity);
    CHECK(stats.frames_in == frames);
    CHECK(stats.frames_dropped + stats.frames_processed == frames);
    CHECK(std::abs(double(stats.frames_dropped) - double(model.dropped)) <= 0.05 * double(model.dropped));
    CHECK(stats.max_frame_age_ms <= (capacity + 1) * proc.max() + 20.0);
    CHECK(std::adjacent_find(ids.begin(), ids.end(), std::greater_equal<>()) == ids.end());
}

TEST_CASE("stop completes the frame in processing") {
    auto src = tiny_source(15, std::nullopt);
    SlowProcessor proc{300.0, {}, {}};
    std::stop_source stop;
    std::jthread stopper([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(450));
        stop.request_stop();
    });
    const auto t0 = Clock::now();
    const auto stats = run_stream(*src, [&](const cube::RawSensorFrame& f) { return proc(f); }, {}, stop.get_token());
    const double elapsed = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    CHECK(stats.frames_processed == 2);
    CHECK(stats.frames_published == 2);
    CHECK(elapsed < 450 + 300 + 150);
}

TEST_CASE("skipped and failed frames are counted") {
    auto src = tiny_source(0, 10);
    std::vector<std::shared_ptr<const ProcessedFrame>> got;
    const auto stats = run_stream(
        *src,
        [](const cube::RawSensorFrame& f) -> std::optional<ProcessedFrame> {
            if (f.frame_id % 3 == 0)
                return std::nullopt;
            if (f.frame_id % 3 == 1)
                throw data_error("broken");
            ProcessedFrame p;
            p.frame_id = f.frame_id;
            return p;
        },
        {[&](const std::shared_ptr<const ProcessedFrame>& p) { got.push_back(p); }}, {}, StreamOptions{16});
    CHECK(stats.frames_in == 10);
    CHECK(stats.frames_skipped == 4);
    CHECK(stats.frames_failed == 3);
    CHECK(stats.frames_processed == 3);
    CHECK(stats.frames_published <= 6);
    for (const auto& p : got)
        if (p->failed)
            CHECK(p->error == "broken");
    CHECK_THROWS_AS(run_stream(*src, {}, {}, {}, StreamOptions{0}), Error);
}

TEST_CASE("vector source renumbers and paces") {
    std::vector<cube::RawSensorFrame> frames(2, cube::RawSensorFrame(2, 2));
    frames[1].pixels[0] = 7;
    auto src = make_vector_source(frames, 50, 5);
    const auto t0 = Clock::now();
    for (std::uint64_t i = 0; i < 5; ++i) {
        auto f = src->next();
        REQUIRE(f);
        CHECK(f->frame_id == i);
        CHECK(f->timestamp_ms == doctest::Approx(i * 20.0));
        CHECK(f->pixels[0] == (i % 2 ? 7 : 0));
    }
    CHECK_FALSE(src->next());
    const double elapsed = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    CHECK(elapsed >= 79.0);
    CHECK_THROWS_AS(make_vector_source({}, 1), Error);
}

TEST_CASE("switchable source keeps ids increasing across switches") {
    SwitchableSource s(tiny_source(0, 3));
    std::vector<std::uint64_t> ids;
    for (int i = 0; i < 2; ++i)
        ids.push_back(s.next()->frame_id);
    const auto next_id = s.select(tiny_source(0, 2));
    CHECK(next_id == 2);
    ids.push_back(s.next()->frame_id);
    ids.push_back(s.next()->frame_id);
    CHECK_FALSE(s.next());
    CHECK(ids == std::vector<std::uint64_t>{0, 1, 2, 3});

    SwitchableSource closed(tiny_source(0, std::nullopt));
    closed.close();
    CHECK_FALSE(closed.next());
}
