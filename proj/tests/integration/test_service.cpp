#include <doctest.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "fixtures.hpp"
#include "hslf/error.hpp"
#include "hslf/io.hpp"
#include "hslf/service.hpp"

using namespace hslf;
using namespace hslf::service;
using nlohmann::json;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using Clock = std::chrono::steady_clock;

namespace {

struct Message {
    bool binary = false;
    std::string data;
    Clock::time_point at;
};

/// Blocking WebSocket viewer with a background reader.
class Viewer {
public:
    Viewer(unsigned short port, const std::string& target, double delay_ms = 0, int rcvbuf = 0)
        : ws_(ioc_), delay_ms_(delay_ms) {
        auto& sock = beast::get_lowest_layer(ws_);
        sock.open(tcp::v4());
        if (rcvbuf > 0)
            sock.set_option(net::socket_base::receive_buffer_size(rcvbuf));
        sock.connect(tcp::endpoint(net::ip::make_address("127.0.0.1"), port));
        ws_.handshake("127.0.0.1", target);
        reader_ = std::thread([this] { read_loop(); });
    }

    ~Viewer() {
        beast::error_code ec;
        beast::get_lowest_layer(ws_).shutdown(tcp::socket::shutdown_both, ec);
        if (reader_.joinable())
            reader_.join();
        beast::get_lowest_layer(ws_).close(ec);
    }

    void send(const std::string& text) {
        ws_.text(true);
        ws_.write(net::buffer(text));
    }
    void send_binary(const std::string& bytes) {
        ws_.binary(true);
        ws_.write(net::buffer(bytes));
    }

    template <typename Pred>
    bool wait(Pred pred, double seconds = 30) {
        std::unique_lock lock(mutex_);
        return cv_.wait_for(lock, std::chrono::duration<double>(seconds), [&] { return pred(messages_); });
    }

    std::vector<Message> messages() {
        std::lock_guard lock(mutex_);
        return {messages_.begin(), messages_.end()};
    }

    std::vector<json> texts() {
        std::vector<json> out;
        for (const auto& m : messages())
            if (!m.binary)
                out.push_back(json::parse(m.data));
        return out;
    }

    std::vector<std::uint64_t> frame_ids() {
        std::vector<std::uint64_t> ids;
        for (const auto& j : texts())
            if (j["type"] == "frame")
                ids.push_back(j["frame_id"]);
        return ids;
    }

    bool closed() const { return closed_; }
    websocket::close_reason close_reason() const { return reason_; }

private:
    void read_loop() {
        for (;;) {
            beast::flat_buffer buf;
            beast::error_code ec;
            ws_.read(buf, ec);
            if (ec) {
                reason_ = ws_.reason();
                closed_ = true;
                cv_.notify_all();
                return;
            }
            Message m{!ws_.got_text(), beast::buffers_to_string(buf.data()), Clock::now()};
            const bool binary = m.binary;
            {
                std::lock_guard lock(mutex_);
                messages_.push_back(std::move(m));
            }
            cv_.notify_all();
            if (binary && delay_ms_ > 0)
                std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay_ms_));
        }
    }

    net::io_context ioc_;
    websocket::stream<tcp::socket> ws_;
    double delay_ms_;
    std::thread reader_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<Message> messages_;
    std::atomic<bool> closed_{false};
    websocket::close_reason reason_;
};

http::response<http::string_body> http_get(unsigned short port, const std::string& target) {
    net::io_context ioc;
    tcp::socket sock(ioc);
    sock.connect(tcp::endpoint(net::ip::make_address("127.0.0.1"), port));
    http::request<http::empty_body> req(http::verb::get, target, 11);
    req.set(http::field::host, "127.0.0.1");
    http::write(sock, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(sock, buf, res);
    return res;
}

/// Live props scene behind a server on an ephemeral port.
struct Rig {
    std::unique_ptr<LivePipeline> live;
    std::unique_ptr<Server> server;
    unsigned short port = 0;
    Rect gauze;

    explicit Rig(bool with_roi, double fps = 15) {
        auto rig = fixture::make_rig("s5", "props");
        gauze = *rig.sim.white_roi();
        if (!with_roi)
            rig.config.roi.reset();
        std::vector<cube::RawSensorFrame> raw{rig.sim.frame(0), rig.sim.frame(1)};
        auto factory = [raw](const SelectSource& s) -> std::unique_ptr<pipeline::FrameSource> {
            if (s.scenario != "props")
                throw usage_error("unknown scenario '" + s.scenario + "'");
            return pipeline::make_vector_source(raw, 15);
        };
        live = std::make_unique<LivePipeline>(rig.processor(), pipeline::make_vector_source(raw, fps), factory);
        server = std::make_unique<Server>(*live, ServerOptions{});
        port = server->start();
        live->start();
    }
    ~Rig() {
        server->stop();
        live->stop();
    }
};

std::size_t count_type(const std::deque<Message>& ms, const std::string& type) {
    std::size_t n = 0;
    for (const auto& m : ms)
        if (!m.binary && json::parse(m.data)["type"] == type)
            ++n;
    return n;
}

} // namespace

TEST_CASE("out of range threshold is refused") {
    Rig rig(true);
    Viewer v(rig.port, "/stream");
    v.send(R"({"id": 7, "type": "set_threshold", "rad": -1})");
    REQUIRE(v.wait([](const auto& ms) { return count_type(ms, "nack") == 1; }));
    for (const auto& j : v.texts())
        if (j["type"] == "nack") {
            CHECK(j["id"] == 7);
            CHECK(j["reason"] == "threshold out of range");
        }
}

TEST_CASE("roi over the gauze yields ack, white event, then classified frames") {
    Rig rig(false);
    Viewer v(rig.port, "/stream");
    REQUIRE(v.wait([](const auto& ms) { return count_type(ms, "frame") >= 1; }));
    const auto g = rig.gauze;
    v.send(json{{"id", 1}, {"type", "set_roi"}, {"rect", {g.x, g.y, g.width, g.height}}}.dump());
    REQUIRE(v.wait([](const auto& ms) {
        bool ack = false;
        for (const auto& m : ms) {
            if (m.binary)
                continue;
            const auto j = json::parse(m.data);
            ack |= j["type"] == "ack";
            if (ack && j["type"] == "frame" && j["uncalibrated"] == false)
                return true;
        }
        return false;
    }));
    const auto texts = v.texts();
    std::size_t ack_at = texts.size(), event_at = texts.size();
    std::uint64_t ack_frame = 0;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (texts[i]["type"] == "ack") {
            ack_at = i;
            ack_frame = texts[i]["frame_id"];
        }
        if (texts[i]["type"] == "event" && texts[i]["event"] == "white_reference_updated" && event_at == texts.size())
            event_at = i;
    }
    REQUIRE(ack_at < texts.size());
    REQUIRE(event_at < texts.size());
    CHECK(ack_at < event_at);
    CHECK(texts[event_at]["frame_id"] == ack_frame);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (texts[i]["type"] != "frame")
            continue;
        const std::uint64_t id = texts[i]["frame_id"];
        if (id < ack_frame)
            CHECK(texts[i]["uncalibrated"] == true);
        else {
            CHECK(i > event_at);
            CHECK(texts[i]["uncalibrated"] == false);
            CHECK(texts[i]["tissue_pixels"].get<std::uint64_t>() > 0);
        }
    }
}

TEST_CASE("each control message gets exactly one reply") {
    Rig rig(true);
    Viewer v(rig.port, "/stream");
    const std::vector<std::string> msgs{
        R"({"id": 1, "type": "set_threshold", "rad": 0.2})",
        R"({"id": 2, "type": "set_threshold", "rad": 9})",
        R"({"id": 3, "type": "set_colormap", "name": "gray", "alpha": 0.4})",
        R"({"id": 4, "type": "set_colormap", "name": "plaid"})",
        R"({"id": 5, "type": "set_overlay_mode", "mode": "so2"})",
        R"({"id": 6, "type": "set_working_distance", "cm": 60})",
        R"({"id": 7, "type": "request_stats"})",
        R"({"id": 8, "type": "dance"})",
        R"({"id": 9, "type": "set_roi", "rect": [0, 0, 2, 2]})",
        R"({"id": 10, "type": "pause"})",
        R"({"id": 11, "type": "resume"})",
        R"({"id": 12, "type": "select_source", "scenario": "props"})",
        R"({"id": 13, "type": "select_source", "scenario": "mars"})",
    };
    for (const auto& m : msgs)
        v.send(m);
    v.send("not json");
    auto replies = [](const std::deque<Message>& ms) {
        return count_type(ms, "ack") + count_type(ms, "nack") + count_type(ms, "stats");
    };
    REQUIRE(v.wait([&](const auto& ms) { return replies(ms) >= msgs.size() + 1; }));
    std::this_thread::sleep_for(std::chrono::milliseconds(800));
    std::map<std::string, int> per_id;
    for (const auto& j : v.texts())
        if (j["type"] == "ack" || j["type"] == "nack" || j["type"] == "stats")
            ++per_id[j.contains("id") ? j["id"].dump() : "stats"];
    for (int id = 1; id <= 13; ++id) {
        if (id == 7)
            continue;
        CHECK_MESSAGE(per_id[std::to_string(id)] == 1, "id ", id);
    }
    CHECK(per_id["stats"] == 1);
    CHECK(per_id["null"] == 1);
    std::map<int, std::string> kind;
    for (const auto& j : v.texts())
        if ((j["type"] == "ack" || j["type"] == "nack") && j["id"].is_number())
            kind[j["id"].get<int>()] = j["type"];
    for (int id : {1, 3, 5, 6, 10, 11, 12})
        CHECK(kind[id] == "ack");
    for (int id : {2, 4, 8, 9, 13})
        CHECK(kind[id] == "nack");
}

TEST_CASE("control changes apply atomically at a frame boundary") {
    Rig rig(true);
    Viewer v(rig.port, "/stream");
    REQUIRE(v.wait([](const auto& ms) { return count_type(ms, "frame") >= 1; }));
    v.send(R"({"id": 1, "type": "set_colormap", "name": "gray", "alpha": 0.3})");
    v.send(R"({"id": 2, "type": "set_overlay_mode", "mode": "similarity"})");
    REQUIRE(v.wait([](const auto& ms) { return count_type(ms, "ack") == 2; }));
    std::uint64_t last_ack = 0;
    for (const auto& j : v.texts())
        if (j["type"] == "ack")
            last_ack = std::max<std::uint64_t>(last_ack, j["frame_id"]);
    REQUIRE(v.wait([&](const auto& ms) {
        for (const auto& m : ms)
            if (!m.binary) {
                const auto j = json::parse(m.data);
                if (j["type"] == "frame" && j["frame_id"] > last_ack)
                    return true;
            }
        return false;
    }));
    for (const auto& j : v.texts()) {
        if (j["type"] != "frame")
            continue;
        const bool gray = j["colormap"] == "gray";
        if (j["frame_id"].get<std::uint64_t>() >= last_ack) {
            CHECK(gray);
            CHECK(j["mode"] == "similarity");
        }
        if (!gray)
            CHECK(j["mode"] != "similarity");
    }
}

TEST_CASE("binary payloads carry the frame header") {
    Rig rig(true);
    for (const std::string enc : {"png", "rgba"}) {
        Viewer v(rig.port, "/stream?encoding=" + enc);
        REQUIRE(v.wait([](const auto& ms) {
            return std::count_if(ms.begin(), ms.end(), [](const Message& m) { return m.binary; }) >= 2;
        }));
        const auto ms = v.messages();
        for (std::size_t i = 0; i + 1 < ms.size(); ++i) {
            if (!ms[i + 1].binary)
                continue;
            REQUIRE_FALSE(ms[i].binary);
            const auto j = json::parse(ms[i].data);
            REQUIRE(j["type"] == "frame");
            const auto& b = ms[i + 1].data;
            const auto h = decode_header(std::span(reinterpret_cast<const std::uint8_t*>(b.data()), b.size()));
            CHECK(h.frame_id == j["frame_id"]);
            CHECK(h.width == 290);
            CHECK(h.height == 275);
            CHECK(h.payload_length == b.size() - kFrameHeaderSize);
            CHECK(to_string(h.encoding) == enc);
            CHECK(j["encoding"] == enc);
            if (enc == "rgba") {
                CHECK(h.payload_length == 290u * 275u * 4u);
            } else {
                const auto img = io::decode_png(
                    std::span(reinterpret_cast<const std::uint8_t*>(b.data()) + kFrameHeaderSize, h.payload_length));
                CHECK(img.width == 290);
                CHECK(img.height == 275);
            }
        }
    }
}

TEST_CASE("a slow viewer gets an increasing subsequence without holding others up") {
    Rig rig(true);
    Viewer fast(rig.port, "/stream?encoding=rgba");
    Viewer slow(rig.port, "/stream?encoding=rgba", 700, 4096);
    std::this_thread::sleep_for(std::chrono::seconds(6));
    const auto f = fast.frame_ids();
    const auto s = slow.frame_ids();
    REQUIRE(f.size() >= 10);
    REQUIRE(s.size() >= 2);
    CHECK(std::adjacent_find(f.begin(), f.end(), std::greater_equal<>()) == f.end());
    CHECK(std::adjacent_find(s.begin(), s.end(), std::greater_equal<>()) == s.end());
    CHECK(s.size() < f.size());
    const auto stats = rig.live->stats();
    CHECK(f.size() + 2 >= stats.frames_published - 2);
}

TEST_CASE("fan-out does not slow the pipeline") {
    auto rate = [](std::size_t viewers) {
        Rig rig(true);
        std::vector<std::unique_ptr<Viewer>> vs;
        for (std::size_t i = 0; i < viewers; ++i)
            vs.push_back(std::make_unique<Viewer>(rig.port, i % 2 ? "/stream?encoding=rgba" : "/stream"));
        std::this_thread::sleep_for(std::chrono::seconds(2));
        const auto a = rig.live->stats().frames_processed;
        const auto t0 = Clock::now();
        std::this_thread::sleep_for(std::chrono::seconds(8));
        const auto b = rig.live->stats().frames_processed;
        return double(b - a) / std::chrono::duration<double>(Clock::now() - t0).count();
    };
    const double base = rate(0);
    const double loaded = rate(4);
    MESSAGE("fps with 0 viewers ", base, ", with 4 viewers ", loaded);
    CHECK(loaded >= 0.9 * base);
}

TEST_CASE("binary control frames close the connection") {
    Rig rig(true);
    Viewer v(rig.port, "/stream");
    v.send_binary("\x01\x02");
    REQUIRE(v.wait([&](const auto&) { return v.closed(); }));
    CHECK(v.close_reason().code == websocket::close_code::policy_error);
}

TEST_CASE("http endpoints") {
    Rig rig(true);
    Viewer v(rig.port, "/stream");
    REQUIRE(v.wait([](const auto& ms) { return count_type(ms, "frame") >= 1; }));
    const auto stats = http_get(rig.port, "/stats");
    CHECK(stats.result() == http::status::ok);
    const auto j = json::parse(stats.body());
    CHECK(j["type"] == "stats");
    CHECK(j["subscribers"] == 1);
    CHECK(j["frames_in"].get<std::uint64_t>() >= 1);
    CHECK(j["config"]["profile"] == "s5");
    CHECK(rig.server->connections() == 1);
    CHECK(http_get(rig.port, "/nothing").result() == http::status::not_found);
    CHECK(http_get(rig.port, "/stream").result() != http::status::ok);
    CHECK_THROWS(Viewer(rig.port, "/stream?encoding=jpeg"));
    CHECK_THROWS(Viewer(rig.port, "/elsewhere"));
}
