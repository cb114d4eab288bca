#include <algorithm>
#include <condition_variable>
#include <deque>
#include <thread>

#include "hslf/error.hpp"
#include "hslf/pipeline.hpp"

namespace hslf::pipeline {

using Clock = std::chrono::steady_clock;

PacedSource::PacedSource(std::string name, Generator generator, double fps, std::optional<std::uint64_t> count)
    : name_(std::move(name)), generator_(std::move(generator)), fps_(fps), count_(count) {}

std::optional<cube::RawSensorFrame> PacedSource::next() {
    if (count_ && index_ >= *count_)
        return std::nullopt;
    if (index_ == 0)
        start_ = Clock::now();
    if (fps_ > 0.0)
        std::this_thread::sleep_until(start_ + std::chrono::duration_cast<Clock::duration>(
                                                   std::chrono::duration<double>(static_cast<double>(index_) / fps_)));
    auto frame = generator_(index_);
    if (frame)
        ++index_;
    return frame;
}

std::unique_ptr<FrameSource> make_vector_source(std::vector<cube::RawSensorFrame> frames, double fps,
                                                std::optional<std::uint64_t> count) {
    if (frames.empty())
        throw usage_error("vector source needs at least one frame");
    auto shared = std::make_shared<const std::vector<cube::RawSensorFrame>>(std::move(frames));
    auto gen = [shared, fps](std::uint64_t i) -> std::optional<cube::RawSensorFrame> {
        cube::RawSensorFrame f = (*shared)[i % shared->size()];
        f.frame_id = i;
        f.timestamp_ms = fps > 0.0 ? static_cast<double>(i) * 1000.0 / fps : static_cast<double>(i);
        return f;
    };
    return std::make_unique<PacedSource>("frames", std::move(gen), fps, count);
}

SwitchableSource::SwitchableSource(std::unique_ptr<FrameSource> initial)
    : current_(std::move(initial)), start_(Clock::now()) {}

std::optional<cube::RawSensorFrame> SwitchableSource::next() {
    for (;;) {
        FrameSource* src;
        std::uint64_t generation;
        {
            std::lock_guard lock(mutex_);
            if (closed_)
                return std::nullopt;
            if (pending_) {
                current_ = std::move(pending_);
                pending_.reset();
            }
            src = current_.get();
            generation = generation_;
        }
        auto frame = src->next();
        std::lock_guard lock(mutex_);
        if (closed_)
            return std::nullopt;
        if (generation != generation_)
            continue;   // a switch was requested while the old source was producing
        if (!frame)
            return std::nullopt;
        frame->frame_id = next_id_++;
        frame->timestamp_ms = std::chrono::duration<double, std::milli>(Clock::now() - start_).count();
        return frame;
    }
}

std::string SwitchableSource::name() const {
    std::lock_guard lock(mutex_);
    return pending_ ? pending_->name() : current_->name();
}

std::uint64_t SwitchableSource::select(std::unique_ptr<FrameSource> source) {
    std::lock_guard lock(mutex_);
    pending_ = std::move(source);
    ++generation_;
    return next_id_;
}

void SwitchableSource::close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
}

// ---------------------------------------------------------------------------

StreamStats StreamCounters::snapshot() const {
    StreamStats s;
    s.frames_in = in.load();
    s.frames_processed = processed.load();
    s.frames_skipped = skipped.load();
    s.frames_dropped = dropped.load();
    s.frames_failed = failed.load();
    s.frames_published = published.load();
    s.max_frame_age_ms = max_age_ms.load();
    s.last_frame_age_ms = last_age_ms.load();
    return s;
}

namespace {

struct Captured {
    cube::RawSensorFrame frame;
    Clock::time_point at;
};

class DropOldestQueue {
public:
    explicit DropOldestQueue(std::size_t capacity) : capacity_(capacity) {}

    /// Returns the number of frames evicted to make room.
    std::size_t push(Captured item) {
        std::lock_guard lock(mutex_);
        std::size_t evicted = 0;
        while (items_.size() >= capacity_) {
            items_.pop_front();
            ++evicted;
        }
        items_.push_back(std::move(item));
        ready_.notify_one();
        return evicted;
    }

    std::optional<Captured> pop(std::stop_token stop) {
        std::unique_lock lock(mutex_);
        ready_.wait(lock, stop, [&] { return !items_.empty() || closed_; });
        if (items_.empty() || stop.stop_requested())
            return std::nullopt;
        Captured item = std::move(items_.front());
        items_.pop_front();
        return item;
    }

    void close() {
        std::lock_guard lock(mutex_);
        closed_ = true;
        ready_.notify_all();
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return items_.size();
    }

private:
    mutable std::mutex mutex_;
    std::condition_variable_any ready_;
    std::deque<Captured> items_;
    std::size_t capacity_;
    bool closed_ = false;
};

struct Published {
    std::shared_ptr<const ProcessedFrame> frame;
    Clock::time_point captured;
};

class Mailbox {
public:
    void put(Published p) {
        std::lock_guard lock(mutex_);
        slot_ = std::move(p);
        ready_.notify_one();
    }

    std::optional<Published> take() {
        std::unique_lock lock(mutex_);
        ready_.wait(lock, [&] { return slot_.has_value() || closed_; });
        if (!slot_)
            return std::nullopt;
        auto p = std::move(slot_);
        slot_.reset();
        return p;
    }

    void close() {
        std::lock_guard lock(mutex_);
        closed_ = true;
        ready_.notify_all();
    }

private:
    std::mutex mutex_;
    std::condition_variable ready_;
    std::optional<Published> slot_;
    bool closed_ = false;
};

void raise_max(std::atomic<double>& a, double v) {
    double cur = a.load();
    while (v > cur && !a.compare_exchange_weak(cur, v)) {
    }
}

} // namespace

StreamStats run_stream(FrameSource& source, const FrameProcessor& process, const std::vector<FrameSink>& sinks,
                       std::stop_token stop, const StreamOptions& options, StreamCounters* external) {
    if (options.queue_capacity < 1)
        throw usage_error("queue capacity must be at least 1");
    StreamCounters local;
    StreamCounters& c = external ? *external : local;
    DropOldestQueue queue(static_cast<std::size_t>(options.queue_capacity));
    Mailbox mailbox;
    const auto t0 = Clock::now();

    std::jthread capture([&](std::stop_token) {
        while (!stop.stop_requested()) {
            auto frame = source.next();
            if (!frame)
                break;
            ++c.in;
            c.dropped += queue.push(Captured{std::move(*frame), Clock::now()});
        }
        queue.close();
    });

    std::jthread publish([&](std::stop_token) {
        while (auto p = mailbox.take()) {
            for (const auto& sink : sinks)
                sink(p->frame);
            const double age = std::chrono::duration<double, std::milli>(Clock::now() - p->captured).count();
            c.last_age_ms = age;
            raise_max(c.max_age_ms, age);
            ++c.published;
        }
    });

    while (auto item = queue.pop(stop)) {
        std::optional<ProcessedFrame> result;
        try {
            result = process(item->frame);
        } catch (const std::exception& e) {
            result.emplace();
            result->frame_id = item->frame.frame_id;
            result->failed = true;
            result->error = e.what();
        }
        if (!result) {
            ++c.skipped;
            continue;
        }
        if (result->failed)
            ++c.failed;
        else
            ++c.processed;
        mailbox.put(Published{std::make_shared<const ProcessedFrame>(std::move(*result)), item->at});
    }

    // the capture thread may be blocked inside the source; it exits on its own
    // once the source returns, so a stop only has to reach the queue
    queue.close();
    capture.join();
    mailbox.close();
    publish.join();

    StreamStats s = c.snapshot();
    s.frames_left = queue.size();
    s.elapsed_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    return s;
}

// ---------------------------------------------------------------------------

void TimingWindow::add(const StageTimings& t) {
    std::lock_guard lock(mutex_);
    if (samples_.size() < capacity_) {
        samples_.push_back(t);
    } else {
        samples_[next_] = t;
        next_ = (next_ + 1) % capacity_;
    }
}

std::size_t TimingWindow::size() const {
    std::lock_guard lock(mutex_);
    return samples_.size();
}

namespace {

double median_of(std::vector<double> v) {
    if (v.empty())
        return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

} // namespace

StageTimings TimingWindow::median() const {
    std::lock_guard lock(mutex_);
    auto field = [&](double StageTimings::*m) {
        std::vector<double> v;
        v.reserve(samples_.size());
        for (const auto& s : samples_)
            v.push_back(s.*m);
        return median_of(std::move(v));
    };
    StageTimings t;
    t.reflectance_cube_ms = field(&StageTimings::reflectance_cube_ms);
    t.rgb_image_ms = field(&StageTimings::rgb_image_ms);
    t.oxy_correlation_ms = field(&StageTimings::oxy_correlation_ms);
    t.oxy_image_ms = field(&StageTimings::oxy_image_ms);
    t.overhead_ms = field(&StageTimings::overhead_ms);
    t.total_ms = field(&StageTimings::total_ms);
    return t;
}

} // namespace hslf::pipeline
