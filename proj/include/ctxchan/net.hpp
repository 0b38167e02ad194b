#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ctxchan::net {

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Peer closed the connection.
class ConnectionClosed : public NetError {
public:
    using NetError::NetError;
};

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 7471;

    std::string to_string() const { return host + ":" + std::to_string(port); }
    friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

/// Parses "host:port". Throws std::invalid_argument.
Endpoint parse_endpoint(std::string_view s);

/// Owning file descriptor.
class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) noexcept : fd_(fd) {}
    ~Fd();
    Fd(Fd&& o) noexcept : fd_(o.release()) {}
    Fd& operator=(Fd&& o) noexcept;
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;

    int get() const noexcept { return fd_; }
    int release() noexcept {
        int fd = fd_;
        fd_ = -1;
        return fd;
    }
    explicit operator bool() const noexcept { return fd_ >= 0; }
    void reset() noexcept;

private:
    int fd_ = -1;
};

/// Blocking TCP client speaking newline-framed lines.
class LineConnection {
public:
    /// Throws NetError if the peer cannot be reached within `timeout`.
    static LineConnection connect(const Endpoint& ep, std::chrono::milliseconds timeout);

    void send(std::string_view line);
    /// Next line without its terminator; nullopt on timeout. Throws ConnectionClosed on EOF.
    std::optional<std::string> read_line(std::chrono::milliseconds timeout);
    bool has_buffered_line() const noexcept;

private:
    explicit LineConnection(Fd fd) : fd_(std::move(fd)) {}

    Fd fd_;
    std::string buffer_;
};

}  // namespace ctxchan::net
