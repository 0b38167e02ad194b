#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>

#include "ctxchan/broker.hpp"
#include "ctxchan/net.hpp"

namespace ctxchan {

using ClockFn = std::function<UnixSeconds()>;

UnixSeconds system_now();

class AddressInUse : public net::NetError {
public:
    using net::NetError::NetError;
};

struct BrokerServerOptions {
    net::Endpoint listen{};  // port 0 picks an ephemeral port
    UnixSeconds sweep_interval_s = 1;
    BrokerConfig broker{};
    ClockFn clock = system_now;
    EventSink events{};
};

/// TCP front end for Broker: a single-threaded poll loop over all client connections.
///
/// Recognized lines: CTX1 messages (replied ACK/NACK), PING (PONG), PONG (availability answer
/// from a provider), SUB|type|id|scope (ACK/NACK, then pushed 'U' lines), and
/// QRY|type|id|scope (a 'U' line or MISS).
class BrokerServer {
public:
    explicit BrokerServer(BrokerServerOptions options);
    ~BrokerServer();

    BrokerServer(const BrokerServer&) = delete;
    BrokerServer& operator=(const BrokerServer&) = delete;

    /// Binds and starts the event loop thread. Throws AddressInUse or net::NetError.
    void start();
    void stop();

    /// Bound address (valid after start()).
    net::Endpoint endpoint() const { return bound_; }
    Broker& broker() noexcept { return broker_; }
    const Broker& broker() const noexcept { return broker_; }

private:
    struct Connection;

    void run();
    void handle_line(Connection& c, std::string_view line);
    void queue(int conn_id, std::string_view line);
    bool flush(Connection& c);
    void close_connection(int conn_id);

    BrokerServerOptions options_;
    Broker broker_;
    net::Fd listener_;
    net::Fd wake_read_;
    net::Fd wake_write_;
    net::Endpoint bound_;
    std::thread thread_;
    std::atomic<bool> running_{false};
    std::map<int, std::unique_ptr<Connection>> connections_;
    int next_conn_id_ = 1;
};

}  // namespace ctxchan
