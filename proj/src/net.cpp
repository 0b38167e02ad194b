#include "ctxchan/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <algorithm>
#include <cstring>
#include <memory>

namespace ctxchan::net {

Endpoint parse_endpoint(std::string_view s) {
    const auto colon = s.rfind(':');
    if (colon == std::string_view::npos || colon == 0)
        throw std::invalid_argument("expected host:port, got '" + std::string(s) + "'");
    unsigned port = 0;
    const auto digits = s.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || port > 65535)
        throw std::invalid_argument("bad port in '" + std::string(s) + "'");
    return {std::string(s.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

Fd::~Fd() { reset(); }

Fd& Fd::operator=(Fd&& o) noexcept {
    if (this != &o) {
        reset();
        fd_ = o.release();
    }
    return *this;
}

void Fd::reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
}

LineConnection LineConnection::connect(const Endpoint& ep, std::chrono::milliseconds timeout) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(ep.port);
    if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0)
        throw NetError("cannot resolve " + ep.host + ": " + ::gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);

    Fd fd(::socket(res->ai_family, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0));
    if (!fd) throw NetError(std::string("socket: ") + std::strerror(errno));
    if (::connect(fd.get(), res->ai_addr, res->ai_addrlen) != 0) {
        if (errno != EINPROGRESS) throw NetError("connect " + ep.to_string() + ": " + std::strerror(errno));
        pollfd p{fd.get(), POLLOUT, 0};
        if (::poll(&p, 1, static_cast<int>(timeout.count())) <= 0)
            throw NetError("connect " + ep.to_string() + ": timed out");
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) throw NetError("connect " + ep.to_string() + ": " + std::strerror(err));
    }
    int one = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return LineConnection(std::move(fd));
}

void LineConnection::send(std::string_view line) {
    while (!line.empty()) {
        const ssize_t n = ::send(fd_.get(), line.data(), line.size(), MSG_NOSIGNAL);
        if (n > 0) {
            line.remove_prefix(static_cast<std::size_t>(n));
            continue;
        }
        if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
            pollfd p{fd_.get(), POLLOUT, 0};
            ::poll(&p, 1, 1000);
            continue;
        }
        if (n < 0 && errno == EINTR) continue;
        throw ConnectionClosed(std::string("send: ") + std::strerror(errno));
    }
}

bool LineConnection::has_buffered_line() const noexcept {
    return buffer_.find('\n') != std::string::npos;
}

std::optional<std::string> LineConnection::read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return line;
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        pollfd p{fd_.get(), POLLIN, 0};
        const int rc = ::poll(&p, 1, static_cast<int>(std::max<long long>(0, left.count())));
        if (rc < 0 && errno == EINTR) continue;
        if (rc <= 0) return std::nullopt;
        char buf[4096];
        const ssize_t n = ::recv(fd_.get(), buf, sizeof buf, 0);
        if (n == 0) throw ConnectionClosed("peer closed connection");
        if (n < 0) {
            if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
            throw ConnectionClosed(std::string("recv: ") + std::strerror(errno));
        }
        buffer_.append(buf, static_cast<std::size_t>(n));
    }
}

}  // namespace ctxchan::net
