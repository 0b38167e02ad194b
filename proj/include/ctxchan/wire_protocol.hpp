#pragma once

// Line-oriented string protocol spoken between providers, the broker and consumers.
//
//   CTX1|<flag>|<provider>|<entity type>|<entity id>|<scope>|<ts begin>|<ts end>|<payload>\n
//
// flag 'A' registers a provider (advertisement), flag 'U' carries a context update.
// Interference payloads are '/'-separated:
//
//   <security>/<recommendation MHz>/<switch>/<power dBm>/<pos x>/<pos y>

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ctxchan/core_model.hpp"

namespace ctxchan::wire {

inline constexpr std::string_view kHeader = "CTX1";
inline constexpr std::size_t kMessageFields = 9;
inline constexpr std::size_t kPayloadFields = 6;

enum class ErrorKind {
    InvalidField,   // encoding: a field violates the message invariants
    FieldCount,
    BadHeader,
    UnknownFlag,
    BadTimestamp,
    TimestampOrder,
    BadPayload,
};

class ProtocolError : public std::runtime_error {
public:
    ProtocolError(ErrorKind kind, int field, const std::string& what)
        : std::runtime_error(what), kind_(kind), field_(field) {}

    ErrorKind kind() const noexcept { return kind_; }
    /// Zero-based index of the offending field, -1 if not field-specific.
    int field() const noexcept { return field_; }

private:
    ErrorKind kind_;
    int field_;
};

enum class Flag : char { Advertisement = 'A', Update = 'U' };

struct ContextMessage {
    std::string header{kHeader};
    Flag flag = Flag::Update;
    std::string provider_id;
    std::string entity_type;
    std::string entity_id;
    std::string scope;
    UnixSeconds ts_begin = 0;
    UnixSeconds ts_end = 0;
    std::string payload;

    friend bool operator==(const ContextMessage&, const ContextMessage&) = default;
};

/// Throws ProtocolError(InvalidField) naming the first offending field.
void validate(const ContextMessage& m);

std::string encode_message(const ContextMessage& m);
/// Accepts an optional trailing "\n" or "\r\n".
ContextMessage decode_message(std::string_view line);

std::string encode_payload(const InterferencePayload& p);
InterferencePayload decode_payload(std::string_view s);

/// Shortest round-trip fixed-point rendering with at least one fractional digit.
std::string format_decimal(double v);
std::optional<double> parse_decimal(std::string_view s);
std::optional<long long> parse_integer(std::string_view s);

struct BrokerReply {
    enum class Kind { Ack, Nack, Pong };
    Kind kind = Kind::Ack;
    std::optional<std::string> reason;  // NACK only

    static BrokerReply ack() { return {Kind::Ack, std::nullopt}; }
    static BrokerReply nack(std::string reason) { return {Kind::Nack, std::move(reason)}; }
    static BrokerReply pong() { return {Kind::Pong, std::nullopt}; }

    friend bool operator==(const BrokerReply&, const BrokerReply&) = default;
};

std::string encode_reply(const BrokerReply& r);
/// nullopt if the line is not an ACK, NACK or PONG. A bare "NACK" decodes with an empty reason.
std::optional<BrokerReply> decode_reply(std::string_view line);

std::string ping();
inline constexpr std::string_view kMissLine = "MISS\n";

/// Consumer verbs: "SUB|type|id|scope" and "QRY|type|id|scope".
struct ConsumerRequest {
    enum class Verb { Subscribe, Query };
    Verb verb;
    EntityRef entity;
    std::string scope;
};

std::string encode_consumer_request(const ConsumerRequest& r);
std::optional<ConsumerRequest> decode_consumer_request(std::string_view line);

/// Splits on `delim`, keeping empty fields.
std::vector<std::string_view> split(std::string_view s, char delim);
std::string_view strip_line_ending(std::string_view line) noexcept;

}  // namespace ctxchan::wire
