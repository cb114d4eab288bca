#include "hslf/service.hpp"

#include <atomic>
#include <fstream>
#include <set>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "hslf/error.hpp"
#include "hslf/io.hpp"

namespace hslf::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

/// Lets pipeline threads post into the io context only while it is alive.
struct Gate {
    std::mutex mutex;
    bool open = true;

    template <typename Executor, typename Fn>
    void post(const Executor& ex, Fn&& fn) {
        std::lock_guard lock(mutex);
        if (open)
            net::post(ex, std::forward<Fn>(fn));
    }
    void close() {
        std::lock_guard lock(mutex);
        open = false;
    }
};

struct Target {
    std::string path;
    std::map<std::string, std::string> query;
};

Target split_target(std::string_view target) {
    Target t;
    const auto q = target.find('?');
    t.path = std::string(target.substr(0, q));
    if (q == std::string_view::npos)
        return t;
    std::string_view rest = target.substr(q + 1);
    while (!rest.empty()) {
        const auto amp = rest.find('&');
        const std::string_view pair = rest.substr(0, amp);
        const auto eq = pair.find('=');
        if (eq == std::string_view::npos)
            t.query[std::string(pair)] = "";
        else
            t.query[std::string(pair.substr(0, eq))] = std::string(pair.substr(eq + 1));
        if (amp == std::string_view::npos)
            break;
        rest = rest.substr(amp + 1);
    }
    return t;
}

std::string_view mime_type(const std::filesystem::path& p) {
    const std::string ext = p.extension().string();
    if (ext == ".html" || ext == ".htm")
        return "text/html";
    if (ext == ".js" || ext == ".mjs")
        return "application/javascript";
    if (ext == ".css")
        return "text/css";
    if (ext == ".json")
        return "application/json";
    if (ext == ".png")
        return "image/png";
    if (ext == ".svg")
        return "image/svg+xml";
    return "application/octet-stream";
}

} // namespace

class WsSession;

struct Server::Impl {
    Impl(LivePipeline& p, ServerOptions o) : pipeline(p), options(std::move(o)) {}

    LivePipeline& pipeline;
    ServerOptions options;
    net::io_context ioc;
    std::optional<tcp::acceptor> acceptor;
    std::thread thread;
    std::shared_ptr<Gate> gate = std::make_shared<Gate>();
    std::atomic<std::size_t> connections{0};

    std::mutex tokens_mutex;
    std::set<LivePipeline::Token> tokens;

    /// Header plus payload of the latest frame per encoding, shared by all sessions.
    std::mutex cache_mutex;
    std::uint64_t cache_id[2] = {~0ull, ~0ull};
    std::shared_ptr<const std::string> cache_payload[2];

    std::shared_ptr<const std::string> binary(const pipeline::ProcessedFrame& f, Encoding enc) {
        const int slot = static_cast<int>(enc);
        {
            std::lock_guard lock(cache_mutex);
            if (cache_id[slot] == f.frame_id && cache_payload[slot])
                return cache_payload[slot];
        }
        io::Bytes body;
        if (enc == Encoding::png) {
            body = io::encode_png(f.display);
        } else {
            const auto* p = reinterpret_cast<const std::uint8_t*>(f.display.data.data());
            body.assign(p, p + f.display.data.size() * sizeof(Rgba8));
        }
        FrameHeader h;
        h.encoding = enc;
        h.frame_id = f.frame_id;
        h.width = static_cast<std::uint32_t>(f.display.width);
        h.height = static_cast<std::uint32_t>(f.display.height);
        h.payload_length = static_cast<std::uint32_t>(body.size());
        const auto head = encode_header(h);
        auto msg = std::make_shared<std::string>();
        msg->reserve(head.size() + body.size());
        msg->append(reinterpret_cast<const char*>(head.data()), head.size());
        msg->append(reinterpret_cast<const char*>(body.data()), body.size());
        std::lock_guard lock(cache_mutex);
        cache_id[slot] = f.frame_id;
        cache_payload[slot] = msg;
        return msg;
    }

    void accept();
};

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket socket, Server::Impl& server, Encoding encoding)
        : ws_(std::move(socket)), server_(server), encoding_(encoding) {}

    ~WsSession() {
        if (token_) {
            server_.pipeline.unsubscribe(token_);
            std::lock_guard lock(server_.tokens_mutex);
            server_.tokens.erase(token_);
            --server_.connections;
        }
    }

    void run(http::request<http::string_body> req) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
    }

private:
    void on_accept(beast::error_code ec) {
        if (ec)
            return;
        std::weak_ptr<WsSession> weak = shared_from_this();
        auto gate = server_.gate;
        auto ex = ws_.get_executor();
        pipeline::FrameSink frames = [weak, gate, ex](const std::shared_ptr<const pipeline::ProcessedFrame>& f) {
            if (weak.expired())
                return;
            gate->post(ex, [weak, f] {
                if (auto s = weak.lock())
                    s->offer_frame(f);
            });
        };
        EventSink events = [weak, gate, ex](const std::string& text) {
            if (weak.expired())
                return;
            gate->post(ex, [weak, text] {
                if (auto s = weak.lock())
                    s->enqueue_text(text);
            });
        };
        token_ = server_.pipeline.subscribe(std::move(frames), std::move(events));
        {
            std::lock_guard lock(server_.tokens_mutex);
            server_.tokens.insert(token_);
        }
        ++server_.connections;
        do_read();
    }

    void do_read() { ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this())); }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec) {
            closed_ = true;
            return;
        }
        if (!ws_.got_text()) {
            closed_ = true;
            close_pending_ = true;
            if (!writing_)
                close_now();
            return;
        }
        const std::string msg = beast::buffers_to_string(buffer_.data());
        buffer_.consume(buffer_.size());
        handle(msg);
        do_read();
    }

    void handle(const std::string& text) {
        std::optional<std::uint64_t> id;
        ControlMessage m;
        try {
            m = parse_control(text, &id);
        } catch (const std::exception& e) {
            enqueue_text(nack_json(id, e.what()));
            return;
        }
        std::weak_ptr<WsSession> weak = shared_from_this();
        auto gate = server_.gate;
        auto ex = ws_.get_executor();
        server_.pipeline.submit(m, [weak, gate, ex](const std::string& reply) {
            gate->post(ex, [weak, reply] {
                if (auto s = weak.lock())
                    s->enqueue_text(reply);
            });
        });
    }

    void enqueue_text(std::string text) {
        texts_.push_back(std::move(text));
        pump();
    }

    void offer_frame(const std::shared_ptr<const pipeline::ProcessedFrame>& f) {
        if (sent_any_ && f->frame_id <= last_sent_)
            return;
        pending_ = f;
        pump();
    }

    void pump() {
        if (writing_ || closed_)
            return;
        if (!texts_.empty()) {
            current_text_ = std::move(texts_.front());
            texts_.pop_front();
            writing_ = true;
            ws_.text(true);
            ws_.async_write(net::buffer(current_text_),
                            beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
            return;
        }
        if (!pending_)
            return;
        auto f = std::move(pending_);
        pending_.reset();
        last_sent_ = f->frame_id;
        sent_any_ = true;
        const bool has_image = !f->failed && f->display.size() > 0;
        current_text_ = frame_json(*f, encoding_);
        current_binary_ = has_image ? server_.binary(*f, encoding_) : nullptr;
        writing_ = true;
        ws_.text(true);
        ws_.async_write(net::buffer(current_text_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec)
                return self->fail();
            if (!self->current_binary_)
                return self->on_write(ec, 0);
            self->ws_.binary(true);
            self->ws_.async_write(net::buffer(*self->current_binary_),
                                  beast::bind_front_handler(&WsSession::on_write, self));
        });
    }

    void on_write(beast::error_code ec, std::size_t) {
        writing_ = false;
        current_binary_.reset();
        if (ec)
            return fail();
        if (close_pending_)
            return close_now();
        pump();
    }

    void close_now() {
        close_pending_ = false;
        ws_.async_close(websocket::close_reason(websocket::close_code::policy_error, "binary frames not accepted"),
                        [self = shared_from_this()](beast::error_code) {});
    }

    void fail() { closed_ = true; }

    websocket::stream<beast::tcp_stream> ws_;
    Server::Impl& server_;
    Encoding encoding_;
    beast::flat_buffer buffer_;
    std::deque<std::string> texts_;
    std::shared_ptr<const pipeline::ProcessedFrame> pending_;
    std::string current_text_;
    std::shared_ptr<const std::string> current_binary_;
    std::uint64_t last_sent_ = 0;
    bool sent_any_ = false;
    bool writing_ = false;
    bool closed_ = false;
    bool close_pending_ = false;
    LivePipeline::Token token_ = 0;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket socket, Server::Impl& server) : stream_(std::move(socket)), server_(server) {}

    void run() {
        stream_.expires_after(std::chrono::seconds(30));
        http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
    }

private:
    void on_read(beast::error_code ec, std::size_t) {
        if (ec)
            return;
        const Target target = split_target(std::string_view(req_.target().data(), req_.target().size()));
        if (websocket::is_upgrade(req_)) {
            if (target.path != "/stream")
                return respond(http::status::not_found, "text/plain", "no websocket endpoint at " + target.path + "\n");
            Encoding enc = server_.options.default_encoding;
            if (auto it = target.query.find("encoding"); it != target.query.end()) {
                try {
                    enc = encoding_from(it->second);
                } catch (const std::exception& e) {
                    return respond(http::status::bad_request, "text/plain", std::string(e.what()) + "\n");
                }
            }
            stream_.expires_never();
            std::make_shared<WsSession>(stream_.release_socket(), server_, enc)->run(std::move(req_));
            return;
        }
        if (req_.method() != http::verb::get)
            return respond(http::status::method_not_allowed, "text/plain", "only GET is supported\n");
        if (target.path == "/stats")
            return respond(http::status::ok, "application/json", server_.pipeline.stats_json());
        if (!server_.options.static_dir.empty()) {
            std::string rel = target.path == "/" ? "index.html" : target.path.substr(1);
            if (rel.find("..") == std::string::npos) {
                const auto file = server_.options.static_dir / rel;
                std::ifstream in(file, std::ios::binary);
                if (in) {
                    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
                    return respond(http::status::ok, mime_type(file), std::move(body));
                }
            }
        }
        respond(http::status::not_found, "text/plain", "not found\n");
    }

    void respond(http::status status, std::string_view type, std::string body) {
        auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
        res->set(http::field::content_type, beast::string_view(type.data(), type.size()));
        res->set(http::field::access_control_allow_origin, "*");
        res->keep_alive(false);
        res->body() = std::move(body);
        res->prepare_payload();
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
            beast::error_code ignored;
            self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        });
    }

    beast::tcp_stream stream_;
    Server::Impl& server_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
};

void Server::Impl::accept() {
    acceptor->async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
        if (ec)
            return;
        std::make_shared<HttpSession>(std::move(socket), *this)->run();
        accept();
    });
}

Server::Server(LivePipeline& pipeline, ServerOptions options)
    : impl_(std::make_unique<Impl>(pipeline, std::move(options))) {}

Server::~Server() { stop(); }

unsigned short Server::start() {
    if (impl_->acceptor)
        return impl_->acceptor->local_endpoint().port();
    beast::error_code ec;
    const auto address = net::ip::make_address(impl_->options.address, ec);
    if (ec)
        throw usage_error("invalid bind address '" + impl_->options.address + "'");
    tcp::endpoint endpoint(address, impl_->options.port);
    impl_->acceptor.emplace(impl_->ioc);
    impl_->acceptor->open(endpoint.protocol(), ec);
    if (!ec)
        impl_->acceptor->set_option(net::socket_base::reuse_address(true), ec);
    if (!ec)
        impl_->acceptor->bind(endpoint, ec);
    if (!ec)
        impl_->acceptor->listen(net::socket_base::max_listen_connections, ec);
    if (ec) {
        impl_->acceptor.reset();
        throw data_error("cannot listen on " + impl_->options.address + ":" + std::to_string(impl_->options.port) +
                         ": " + ec.message());
    }
    impl_->accept();
    impl_->thread = std::thread([this] { impl_->ioc.run(); });
    return impl_->acceptor->local_endpoint().port();
}

void Server::stop() {
    if (!impl_->thread.joinable())
        return;
    impl_->gate->close();
    std::set<LivePipeline::Token> tokens;
    {
        std::lock_guard lock(impl_->tokens_mutex);
        tokens.swap(impl_->tokens);
    }
    for (auto t : tokens)
        impl_->pipeline.unsubscribe(t);
    net::post(impl_->ioc, [this] {
        beast::error_code ignored;
        impl_->acceptor->close(ignored);
    });
    impl_->ioc.stop();
    impl_->thread.join();
}

std::size_t Server::connections() const { return impl_->connections.load(); }

} // namespace hslf::service
