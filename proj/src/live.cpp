#include <cmath>

#include <json.hpp>

#include "hslf/error.hpp"
#include "hslf/service.hpp"

namespace hslf::service {

using nlohmann::json;

LivePipeline::LivePipeline(pipeline::Processor processor, std::unique_ptr<pipeline::FrameSource> source,
                           SourceFactory factory)
    : processor_(std::move(processor)), source_(std::move(source)), factory_(std::move(factory)),
      config_(processor_.config()) {}

LivePipeline::~LivePipeline() { stop(); }

void LivePipeline::start() {
    std::lock_guard lock(mutex_);
    if (running_)
        return;
    running_ = true;
    thread_ = std::jthread([this](std::stop_token stop) {
        pipeline::StreamOptions options;
        options.queue_capacity = processor_.config().queue_capacity;
        pipeline::FrameProcessor proc = [this](const cube::RawSensorFrame& f) { return step(f); };
        pipeline::FrameSink sink = [this](const std::shared_ptr<const pipeline::ProcessedFrame>& f) { publish(f); };
        pipeline::run_stream(source_, proc, {sink}, stop, options, &counters_);
        std::lock_guard lock(mutex_);
        running_ = false;
    });
}

void LivePipeline::stop() {
    std::jthread t;
    {
        std::lock_guard lock(mutex_);
        t = std::move(thread_);
    }
    if (t.joinable()) {
        t.request_stop();
        t.join();
    }
}

bool LivePipeline::running() const {
    std::lock_guard lock(mutex_);
    return running_;
}

namespace {

/// Throws a usage error when the command carries an invalid parameter.
void check(const Command& c, const calib::CameraProfile& profile) {
    if (const auto* roi = std::get_if<SetRoi>(&c)) {
        reflect::validate(reflect::RegionOfInterest{roi->rect, 0}, profile.subimage_width, profile.subimage_height);
    } else if (const auto* d = std::get_if<SetWorkingDistance>(&c)) {
        if (!(d->cm > 0.0) || !std::isfinite(d->cm))
            throw usage_error("working distance must be positive");
    } else if (const auto* t = std::get_if<SetThreshold>(&c)) {
        oxy::validate_threshold(t->rad);
    } else if (const auto* m = std::get_if<SetColormap>(&c)) {
        oxy::Colormap::by_name(m->name);
        if (!(m->alpha >= 0.0 && m->alpha <= 1.0))
            throw usage_error("alpha must lie in [0, 1]");
    }
}

} // namespace

void LivePipeline::submit(const ControlMessage& message, ReplySink reply) {
    if (std::holds_alternative<RequestStats>(message.command)) {
        reply(stats_json());
        return;
    }
    Pending p{message, std::move(reply), nullptr};
    try {
        check(message.command, processor_.calibration().profile);
        if (const auto* s = std::get_if<SelectSource>(&message.command)) {
            if (!factory_)
                throw usage_error("source selection is not available");
            p.source = factory_(*s);
        }
    } catch (const std::exception& e) {
        p.reply(nack_json(message.id, e.what()));
        return;
    }
    std::lock_guard lock(mutex_);
    commands_.push_back(std::move(p));
}

void LivePipeline::apply(Pending& p, std::uint64_t frame_id, pipeline::PipelineConfig& cfg) {
    const Command& c = p.message.command;
    pipeline::PipelineConfig next = cfg;
    if (const auto* roi = std::get_if<SetRoi>(&c))
        next.roi = reflect::RegionOfInterest{roi->rect, frame_id};
    else if (const auto* d = std::get_if<SetWorkingDistance>(&c))
        next.working_distance_cm = d->cm;
    else if (const auto* t = std::get_if<SetThreshold>(&c))
        next.sam_threshold = t->rad;
    else if (const auto* m = std::get_if<SetColormap>(&c)) {
        next.colormap = m->name;
        next.alpha = m->alpha;
    } else if (const auto* o = std::get_if<SetOverlayMode>(&c))
        next.overlay_mode = o->mode;

    if (std::holds_alternative<SelectSource>(c)) {
        const std::string name = p.source->name();
        const std::uint64_t first = source_.select(std::move(p.source));
        {
            std::lock_guard lock(mutex_);
            reset_white_at_ = first;
        }
        p.reply(ack_json(p.message.id, first));
        broadcast(event_json("source_changed", first, name));
        return;
    }
    try {
        pipeline::validate(next, &processor_.calibration().profile);
    } catch (const std::exception& e) {
        p.reply(nack_json(p.message.id, e.what()));
        return;
    }
    cfg = std::move(next);
    p.reply(ack_json(p.message.id, frame_id));
}

std::optional<pipeline::ProcessedFrame> LivePipeline::step(const cube::RawSensorFrame& frame) {
    std::deque<Pending> batch;
    bool paused;
    {
        std::lock_guard lock(mutex_);
        batch.swap(commands_);
        paused = paused_;
    }

    pipeline::PipelineConfig cfg = processor_.config();
    for (auto& p : batch) {
        const Command& c = p.message.command;
        if (std::holds_alternative<Pause>(c)) {
            paused = true;
            {
                std::lock_guard lock(mutex_);
                paused_ = true;
            }
            p.reply(ack_json(p.message.id, frame.frame_id));
        } else if (std::holds_alternative<Resume>(c)) {
            paused = false;
            std::deque<Pending> held;
            {
                std::lock_guard lock(mutex_);
                paused_ = false;
                held.swap(deferred_);
            }
            p.reply(ack_json(p.message.id, frame.frame_id));
            for (auto& d : held)
                apply(d, frame.frame_id, cfg);
        } else if (paused) {
            std::lock_guard lock(mutex_);
            deferred_.push_back(std::move(p));
        } else {
            apply(p, frame.frame_id, cfg);
        }
    }
    if (!(cfg == processor_.config()))
        processor_.configure(cfg);

    bool reset = false;
    {
        std::lock_guard lock(mutex_);
        paused_ = paused;
        config_ = processor_.config();
        if (reset_white_at_ && frame.frame_id >= *reset_white_at_) {
            reset = true;
            reset_white_at_.reset();
        }
    }
    if (reset)
        processor_.reset_white();
    if (paused)
        return std::nullopt;

    pipeline::ProcessedFrame out = processor_.process(frame);
    if (!out.failed)
        timings_.add(out.timings);
    if (out.white_updated)
        broadcast(event_json("white_reference_updated", out.frame_id));
    return out;
}

void LivePipeline::broadcast(const std::string& text) {
    std::vector<EventSink> sinks;
    {
        std::lock_guard lock(mutex_);
        for (const auto& [token, s] : subscribers_)
            if (s.second)
                sinks.push_back(s.second);
    }
    for (const auto& s : sinks)
        s(text);
}

void LivePipeline::publish(const std::shared_ptr<const pipeline::ProcessedFrame>& frame) {
    std::vector<pipeline::FrameSink> sinks;
    {
        std::lock_guard lock(mutex_);
        for (const auto& [token, s] : subscribers_)
            if (s.first)
                sinks.push_back(s.first);
    }
    for (const auto& s : sinks)
        s(frame);
}

LivePipeline::Token LivePipeline::subscribe(pipeline::FrameSink frames, EventSink events) {
    std::lock_guard lock(mutex_);
    const Token t = next_token_++;
    subscribers_.emplace(t, std::make_pair(std::move(frames), std::move(events)));
    return t;
}

void LivePipeline::unsubscribe(Token token) {
    std::lock_guard lock(mutex_);
    subscribers_.erase(token);
}

std::size_t LivePipeline::subscribers() const {
    std::lock_guard lock(mutex_);
    return subscribers_.size();
}

pipeline::StreamStats LivePipeline::stats() const { return counters_.snapshot(); }

pipeline::PipelineConfig LivePipeline::config() const {
    std::lock_guard lock(mutex_);
    return config_;
}

bool LivePipeline::paused() const {
    std::lock_guard lock(mutex_);
    return paused_;
}

std::string LivePipeline::source_name() const { return source_.name(); }

std::string LivePipeline::stats_json() const {
    const auto s = stats();
    const auto t = timings_.median();
    json j = {{"type", "stats"},
              {"frames_in", s.frames_in},
              {"frames_out", s.frames_processed},
              {"frames_dropped", s.frames_dropped},
              {"frames_failed", s.frames_failed},
              {"frames_skipped", s.frames_skipped},
              {"frames_published", s.frames_published},
              {"max_frame_age_ms", s.max_frame_age_ms},
              {"timings_median",
               {{"reflectance_cube_ms", t.reflectance_cube_ms},
                {"rgb_image_ms", t.rgb_image_ms},
                {"oxy_correlation_ms", t.oxy_correlation_ms},
                {"oxy_image_ms", t.oxy_image_ms},
                {"overhead_ms", t.overhead_ms},
                {"total_ms", t.total_ms}}},
              {"timing_samples", timings_.size()},
              {"config", json::parse(pipeline::serialize_config(config()))},
              {"paused", paused()},
              {"source", source_name()},
              {"subscribers", subscribers()}};
    return j.dump();
}

} // namespace hslf::service
