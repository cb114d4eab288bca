#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "hslf/pipeline.hpp"

/// Live pipeline handle and its WebSocket endpoint for operator consoles.
namespace hslf::service {

// ---------------------------------------------------------------------------
// Control messages (client to server, JSON text frames)

struct SetRoi {
    Rect rect;
};
struct SetWorkingDistance {
    double cm = 0.0;
};
struct SetThreshold {
    double rad = 0.0;
};
struct SetColormap {
    std::string name;
    double alpha = oxy::kDefaultAlpha;
};
struct SetOverlayMode {
    pipeline::OverlayMode mode = pipeline::OverlayMode::composite;
};
struct Pause {};
struct Resume {};
/// Exactly one of scenario (a built-in phantom name) or recording (an id
/// resolved by the server) is set.
struct SelectSource {
    std::string scenario;
    std::string recording;
};
struct RequestStats {};

using Command = std::variant<SetRoi, SetWorkingDistance, SetThreshold, SetColormap, SetOverlayMode, Pause, Resume,
                             SelectSource, RequestStats>;

struct ControlMessage {
    std::uint64_t id = 0;
    Command command;
};

/// Throws a usage error describing what is malformed; `id_out` receives the
/// message id whenever one could be read.
ControlMessage parse_control(std::string_view json_text, std::optional<std::uint64_t>* id_out = nullptr);
std::string serialize_control(const ControlMessage& message);
std::string_view command_type(const Command& command);

// ---------------------------------------------------------------------------
// Server messages (JSON text frames; frame images follow as binary frames)

std::string ack_json(std::uint64_t id, std::uint64_t frame_id);
std::string nack_json(std::optional<std::uint64_t> id, std::string_view reason);
std::string event_json(std::string_view event, std::uint64_t frame_id, std::string_view detail = {});

enum class Encoding : std::uint16_t { png = 0, rgba = 1 };

std::string_view to_string(Encoding e);
/// "png" or "rgba"; throws a usage error otherwise.
Encoding encoding_from(std::string_view name);

/// Fixed 32-byte little-endian header preceding every binary image payload.
struct FrameHeader {
    std::uint16_t version = 0x0100;
    Encoding encoding = Encoding::png;
    std::uint64_t frame_id = 0;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t payload_length = 0;
    std::uint32_t reserved = 0;

    bool operator==(const FrameHeader&) const = default;
};

constexpr std::size_t kFrameHeaderSize = 32;

std::array<std::uint8_t, kFrameHeaderSize> encode_header(const FrameHeader& header);
/// Throws a data error on short input, bad magic or an unknown major version.
FrameHeader decode_header(std::span<const std::uint8_t> bytes);

/// JSON text message announcing the binary frame that follows.
std::string frame_json(const pipeline::ProcessedFrame& frame, Encoding encoding);

// ---------------------------------------------------------------------------
// Live pipeline

/// Builds a frame source for a SelectSource request; throws a usage error for unknown names.
using SourceFactory = std::function<std::unique_ptr<pipeline::FrameSource>(const SelectSource&)>;

/// Replies addressed to the sender of one control message.
using ReplySink = std::function<void(const std::string& json_text)>;
/// Broadcast events (white reference updated, source changed).
using EventSink = std::function<void(const std::string& json_text)>;

/// A running stream (capture, processing, publication) steered by control
/// messages. Commands queue up and are applied together at the next frame
/// boundary; each is acknowledged with the first frame id it affects. While
/// paused, frames are discarded and every command except Pause, Resume and
/// RequestStats waits for Resume.
class LivePipeline {
public:
    LivePipeline(pipeline::Processor processor, std::unique_ptr<pipeline::FrameSource> source, SourceFactory factory);
    ~LivePipeline();
    LivePipeline(const LivePipeline&) = delete;
    LivePipeline& operator=(const LivePipeline&) = delete;

    void start();
    /// Stops the stream; the frame in processing completes. Idempotent.
    void stop();
    bool running() const;

    /// Validates the message and either replies with a Nack right away or
    /// queues it; RequestStats is answered immediately.
    void submit(const ControlMessage& message, ReplySink reply);

    using Token = std::uint64_t;
    Token subscribe(pipeline::FrameSink frames, EventSink events);
    void unsubscribe(Token token);
    std::size_t subscribers() const;

    pipeline::StreamStats stats() const;
    pipeline::PipelineConfig config() const;
    bool paused() const;
    std::string source_name() const;
    std::string stats_json() const;

private:
    struct Pending {
        ControlMessage message;
        ReplySink reply;
        std::unique_ptr<pipeline::FrameSource> source;   ///< built at submit for SelectSource
    };

    std::optional<pipeline::ProcessedFrame> step(const cube::RawSensorFrame& frame);
    void apply(Pending& p, std::uint64_t frame_id, pipeline::PipelineConfig& cfg);
    void broadcast(const std::string& text);
    void publish(const std::shared_ptr<const pipeline::ProcessedFrame>& frame);

    pipeline::Processor processor_;
    pipeline::SwitchableSource source_;
    SourceFactory factory_;
    pipeline::StreamCounters counters_;
    pipeline::TimingWindow timings_;

    mutable std::mutex mutex_;   // guards everything below
    std::deque<Pending> commands_;
    std::deque<Pending> deferred_;
    pipeline::PipelineConfig config_;
    bool paused_ = false;
    std::optional<std::uint64_t> reset_white_at_;
    std::map<Token, std::pair<pipeline::FrameSink, EventSink>> subscribers_;
    Token next_token_ = 1;
    std::jthread thread_;
    bool running_ = false;
};

// ---------------------------------------------------------------------------
// Server

struct ServerOptions {
    std::string address = "127.0.0.1";
    unsigned short port = 0;          ///< 0 picks a free port
    std::filesystem::path static_dir; ///< served over plain HTTP when set
    Encoding default_encoding = Encoding::png;
};

/// WebSocket endpoint at /stream (query `encoding=png|rgba`) plus GET /stats.
/// Each connection receives the newest frame when its previous send has
/// completed, so a slow viewer skips frames without holding up the pipeline.
class Server {
public:
    Server(LivePipeline& pipeline, ServerOptions options);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and starts serving; returns the bound port.
    unsigned short start();
    void stop();
    std::size_t connections() const;

    struct Impl;

private:
    std::unique_ptr<Impl> impl_;
};

} // namespace hslf::service
