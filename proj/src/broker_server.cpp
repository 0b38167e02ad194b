#include "ctxchan/broker_server.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <vector>

namespace ctxchan {

namespace {

constexpr std::size_t kMaxLineBytes = 64 * 1024;

}  // namespace

UnixSeconds system_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

struct BrokerServer::Connection {
    int id = 0;
    net::Fd fd;
    std::string in;
    std::string out;
    std::optional<std::string> provider_id;
    bool closing = false;

    std::string consumer_id() const { return "conn-" + std::to_string(id); }
};

BrokerServer::BrokerServer(BrokerServerOptions options)
    : options_(std::move(options)), broker_(options_.broker, options_.events) {}

BrokerServer::~BrokerServer() { stop(); }

void BrokerServer::start() {
    net::Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0));
    if (!fd) throw net::NetError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(options_.listen.port);
    if (::inet_pton(AF_INET, options_.listen.host.c_str(), &addr.sin_addr) != 1)
        throw net::NetError("listen address must be a dotted IPv4 address: " + options_.listen.host);
    if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        if (errno == EADDRINUSE) throw AddressInUse("address in use: " + options_.listen.to_string());
        throw net::NetError("bind " + options_.listen.to_string() + ": " + std::strerror(errno));
    }
    if (::listen(fd.get(), 64) != 0) throw net::NetError(std::string("listen: ") + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    bound_ = {options_.listen.host, ntohs(addr.sin_port)};

    int pipefd[2];
    if (::pipe2(pipefd, O_NONBLOCK | O_CLOEXEC) != 0)
        throw net::NetError(std::string("pipe: ") + std::strerror(errno));
    wake_read_ = net::Fd(pipefd[0]);
    wake_write_ = net::Fd(pipefd[1]);
    listener_ = std::move(fd);
    running_ = true;
    thread_ = std::thread([this] { run(); });
}

void BrokerServer::stop() {
    if (!thread_.joinable()) return;
    running_ = false;
    const char b = 1;
    [[maybe_unused]] auto n = ::write(wake_write_.get(), &b, 1);
    thread_.join();
    connections_.clear();
    listener_.reset();
}

void BrokerServer::queue(int conn_id, std::string_view line) {
    auto it = connections_.find(conn_id);
    if (it == connections_.end() || it->second->closing) return;
    it->second->out.append(line);
}

bool BrokerServer::flush(Connection& c) {
    while (!c.out.empty()) {
        const ssize_t n = ::send(c.fd.get(), c.out.data(), c.out.size(), MSG_NOSIGNAL);
        if (n > 0) {
            c.out.erase(0, static_cast<std::size_t>(n));
        } else if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
            return true;
        } else if (n < 0 && errno == EINTR) {
            continue;
        } else {
            return false;
        }
    }
    return true;
}

void BrokerServer::close_connection(int conn_id) {
    auto it = connections_.find(conn_id);
    if (it == connections_.end()) return;
    if (it->second->provider_id) broker_.detach_link(*it->second->provider_id);
    broker_.unsubscribe_all(it->second->consumer_id());
    connections_.erase(it);
}

void BrokerServer::handle_line(Connection& c, std::string_view line) {
    const UnixSeconds now = options_.clock();
    const int id = c.id;
    auto reply = [&](std::string_view s) { queue(id, s); };
    auto sink = [this, id](std::string_view s) {
        auto it = connections_.find(id);
        if (it == connections_.end() || it->second->closing) return false;
        it->second->out.append(s);
        return true;
    };

    if (line == "PING") {
        reply(wire::encode_reply(wire::BrokerReply::pong()));
        return;
    }
    if (line == "PONG") {
        if (c.provider_id) broker_.handle_pong(*c.provider_id, now);
        return;
    }
    if (line.starts_with("SUB|") || line.starts_with("QRY|")) {
        auto req = wire::decode_consumer_request(line);
        if (!req) {
            reply(wire::encode_reply(wire::BrokerReply::nack("bad consumer request")));
            return;
        }
        CacheKey key{req->entity, req->scope};
        if (req->verb == wire::ConsumerRequest::Verb::Subscribe) {
            broker_.subscribe(c.consumer_id(), key, sink);
            reply(wire::encode_reply(wire::BrokerReply::ack()));
        } else {
            auto result = broker_.query(key, now);
            reply(result.entry ? std::string_view(result.entry->line) : wire::kMissLine);
        }
        return;
    }

    wire::ContextMessage m;
    try {
        m = wire::decode_message(line);
    } catch (const wire::ProtocolError& e) {
        reply(wire::encode_reply(wire::BrokerReply::nack(std::string("parse error: ") + e.what())));
        return;
    }
    if (m.flag == wire::Flag::Advertisement) {
        auto r = broker_.handle_advertisement(m, now, sink);
        if (r.kind == wire::BrokerReply::Kind::Ack) c.provider_id = m.provider_id;
        reply(wire::encode_reply(r));
    } else {
        std::string raw(line);
        raw += '\n';
        auto r = broker_.handle_update(m, now, raw);
        reply(wire::encode_reply(r));
    }
}

void BrokerServer::run() {
    UnixSeconds last_sweep = options_.clock();
    std::vector<pollfd> fds;
    std::vector<int> ids;
    while (running_) {
        fds.clear();
        ids.clear();
        fds.push_back({listener_.get(), POLLIN, 0});
        fds.push_back({wake_read_.get(), POLLIN, 0});
        for (const auto& [id, c] : connections_) {
            short events = POLLIN;
            if (!c->out.empty()) events |= POLLOUT;
            fds.push_back({c->fd.get(), events, 0});
            ids.push_back(id);
        }
        const int rc = ::poll(fds.data(), fds.size(), 20);
        if (rc < 0 && errno != EINTR) break;

        if (fds[0].revents & POLLIN) {
            for (;;) {
                int cfd = ::accept4(listener_.get(), nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
                if (cfd < 0) break;
                int one = 1;
                ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                auto conn = std::make_unique<Connection>();
                conn->id = next_conn_id_++;
                conn->fd = net::Fd(cfd);
                connections_.emplace(conn->id, std::move(conn));
            }
        }

        std::vector<int> dead;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto it = connections_.find(ids[i]);
            if (it == connections_.end()) continue;
            Connection& c = *it->second;
            const short re = fds[i + 2].revents;
            if (re & (POLLIN | POLLHUP | POLLERR)) {
                char buf[4096];
                for (;;) {
                    const ssize_t n = ::recv(c.fd.get(), buf, sizeof buf, 0);
                    if (n > 0) {
                        c.in.append(buf, static_cast<std::size_t>(n));
                        continue;
                    }
                    if (n == 0 || (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR))
                        c.closing = true;
                    break;
                }
                std::size_t nl;
                while (!c.closing && (nl = c.in.find('\n')) != std::string::npos) {
                    std::string line = c.in.substr(0, nl);
                    c.in.erase(0, nl + 1);
                    if (!line.empty() && line.back() == '\r') line.pop_back();
                    handle_line(c, line);
                }
                if (c.in.size() > kMaxLineBytes) c.closing = true;
            }
            if (c.closing) dead.push_back(c.id);
        }
        for (auto& [id, c] : connections_)
            if (!c->closing && !flush(*c)) dead.push_back(id);
        for (int id : dead) close_connection(id);

        const UnixSeconds now = options_.clock();
        if (now - last_sweep >= options_.sweep_interval_s) {
            broker_.sweep_stale(now);
            last_sweep = now;
        }
        if (fds[1].revents & POLLIN) {
            char drain[64];
            while (::read(wake_read_.get(), drain, sizeof drain) > 0) {
            }
        }
    }
    for (auto& [id, c] : connections_) flush(*c);
}

}  // namespace ctxchan
