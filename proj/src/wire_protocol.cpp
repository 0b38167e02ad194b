#include "ctxchan/wire_protocol.hpp"

#include <charconv>
#include <cmath>

namespace ctxchan::wire {

namespace {

constexpr const char* kFieldNames[kMessageFields] = {
    "header", "flag", "provider id", "entity type", "entity id",
    "scope",  "timestamp begin", "timestamp end", "payload"};

bool clean(std::string_view s) noexcept { return s.find_first_of("|\n\r") == std::string_view::npos; }

void require_field(bool ok, int field, const std::string& why) {
    if (!ok)
        throw ProtocolError(ErrorKind::InvalidField, field,
                            std::string(kFieldNames[field]) + ": " + why);
}

int parse_flag_digit(std::string_view s, int field) {
    if (s == "0") return 0;
    if (s == "1") return 1;
    throw ProtocolError(ErrorKind::BadPayload, field,
                        "payload field " + std::to_string(field) + " must be 0 or 1");
}

}  // namespace

std::vector<std::string_view> split(std::string_view s, char delim) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(delim, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string_view strip_line_ending(std::string_view line) noexcept {
    if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

std::string format_decimal(double v) {
    char buf[400];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    if (ec != std::errc{}) throw std::logic_error("decimal formatting failed");
    std::string out(buf, end);
    if (out.find('.') == std::string::npos) out += ".0";
    return out;
}

std::optional<double> parse_decimal(std::string_view s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<long long> parse_integer(std::string_view s) {
    if (s.empty()) return std::nullopt;
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

void validate(const ContextMessage& m) {
    require_field(!m.header.empty() && clean(m.header), 0, "empty or contains a delimiter");
    require_field(m.flag == Flag::Advertisement || m.flag == Flag::Update, 1, "must be 'A' or 'U'");
    require_field(!m.provider_id.empty() && clean(m.provider_id), 2, "empty or contains a delimiter");
    require_field(!m.entity_type.empty() && clean(m.entity_type), 3, "empty or contains a delimiter");
    require_field(!m.entity_id.empty() && clean(m.entity_id), 4, "empty or contains a delimiter");
    require_field(clean(m.scope), 5, "contains a delimiter");
    require_field(m.ts_begin <= m.ts_end, 6, "begin after end");
    require_field(clean(m.payload), 8, "contains a delimiter");
}

std::string encode_message(const ContextMessage& m) {
    validate(m);
    std::string out;
    out.reserve(64 + m.payload.size());
    out += m.header;
    out += '|';
    out += static_cast<char>(m.flag);
    for (const std::string* f : {&m.provider_id, &m.entity_type, &m.entity_id, &m.scope}) {
        out += '|';
        out += *f;
    }
    out += '|';
    out += std::to_string(m.ts_begin);
    out += '|';
    out += std::to_string(m.ts_end);
    out += '|';
    out += m.payload;
    out += '\n';
    return out;
}

ContextMessage decode_message(std::string_view line) {
    line = strip_line_ending(line);
    if (line.find('\n') != std::string_view::npos)
        throw ProtocolError(ErrorKind::FieldCount, -1, "embedded newline");
    const auto fields = split(line, '|');
    if (fields.size() != kMessageFields)
        throw ProtocolError(ErrorKind::FieldCount, static_cast<int>(fields.size()),
                            "expected 9 fields, got " + std::to_string(fields.size()));
    if (fields[0] != kHeader)
        throw ProtocolError(ErrorKind::BadHeader, 0, "unknown header '" + std::string(fields[0]) + "'");
    if (fields[1] != "A" && fields[1] != "U")
        throw ProtocolError(ErrorKind::UnknownFlag, 1, "unknown flag '" + std::string(fields[1]) + "'");
    const auto begin = parse_integer(fields[6]);
    if (!begin) throw ProtocolError(ErrorKind::BadTimestamp, 6, "timestamp begin is not an integer");
    const auto end = parse_integer(fields[7]);
    if (!end) throw ProtocolError(ErrorKind::BadTimestamp, 7, "timestamp end is not an integer");
    if (*begin > *end) throw ProtocolError(ErrorKind::TimestampOrder, 6, "timestamp begin after end");
    for (int i : {2, 3, 4})
        if (fields[i].empty())
            throw ProtocolError(ErrorKind::InvalidField, i, std::string(kFieldNames[i]) + " is empty");
    if (fields[0].find('\r') != std::string_view::npos)
        throw ProtocolError(ErrorKind::InvalidField, 0, "carriage return in header");

    ContextMessage m;
    m.header = std::string(fields[0]);
    m.flag = static_cast<Flag>(fields[1][0]);
    m.provider_id = std::string(fields[2]);
    m.entity_type = std::string(fields[3]);
    m.entity_id = std::string(fields[4]);
    m.scope = std::string(fields[5]);
    m.ts_begin = *begin;
    m.ts_end = *end;
    m.payload = std::string(fields[8]);
    return m;
}

std::string encode_payload(const InterferencePayload& p) {
    auto bad = [](const char* what) { return ProtocolError(ErrorKind::BadPayload, -1, what); };
    if (p.security_flag != 0 && p.security_flag != 1) throw bad("security flag must be 0 or 1");
    if (p.channel_switch != 0 && p.channel_switch != 1) throw bad("channel switch must be 0 or 1");
    for (double v : {p.interference_power_dbm, p.pos_x, p.pos_y})
        if (!std::isfinite(v)) throw bad("non-finite decimal in payload");
    std::string out;
    out += std::to_string(p.security_flag);
    out += '/';
    out += std::to_string(p.channel_recommendation_mhz);
    out += '/';
    out += std::to_string(p.channel_switch);
    out += '/';
    out += format_decimal(p.interference_power_dbm);
    out += '/';
    out += format_decimal(p.pos_x);
    out += '/';
    out += format_decimal(p.pos_y);
    return out;
}

InterferencePayload decode_payload(std::string_view s) {
    const auto f = split(s, '/');
    if (f.size() != kPayloadFields)
        throw ProtocolError(ErrorKind::BadPayload, -1,
                            "expected 6 payload fields, got " + std::to_string(f.size()));
    InterferencePayload p;
    p.security_flag = parse_flag_digit(f[0], 0);
    const auto mhz = parse_integer(f[1]);
    if (!mhz) throw ProtocolError(ErrorKind::BadPayload, 1, "channel recommendation is not an integer");
    p.channel_recommendation_mhz = static_cast<int>(*mhz);
    p.channel_switch = parse_flag_digit(f[2], 2);
    double* targets[] = {&p.interference_power_dbm, &p.pos_x, &p.pos_y};
    for (int i = 0; i < 3; ++i) {
        const auto v = parse_decimal(f[3 + i]);
        if (!v)
            throw ProtocolError(ErrorKind::BadPayload, 3 + i,
                                "payload field " + std::to_string(3 + i) + " is not a decimal");
        *targets[i] = *v;
    }
    return p;
}

std::string encode_reply(const BrokerReply& r) {
    switch (r.kind) {
        case BrokerReply::Kind::Ack: return "ACK\n";
        case BrokerReply::Kind::Pong: return "PONG\n";
        case BrokerReply::Kind::Nack: {
            std::string reason = r.reason.value_or("");
            for (char& c : reason)
                if (c == '\n' || c == '\r' || c == '|') c = ' ';
            return "NACK|" + reason + "\n";
        }
    }
    return "NACK\n";
}

std::optional<BrokerReply> decode_reply(std::string_view line) {
    line = strip_line_ending(line);
    if (line == "ACK") return BrokerReply::ack();
    if (line == "PONG") return BrokerReply::pong();
    if (line == "NACK") return BrokerReply::nack("");
    if (line.starts_with("NACK|")) return BrokerReply::nack(std::string(line.substr(5)));
    return std::nullopt;
}

std::string ping() { return "PING\n"; }

std::string encode_consumer_request(const ConsumerRequest& r) {
    std::string out = r.verb == ConsumerRequest::Verb::Subscribe ? "SUB|" : "QRY|";
    out += r.entity.type();
    out += '|';
    out += r.entity.id();
    out += '|';
    out += r.scope;
    out += '\n';
    return out;
}

std::optional<ConsumerRequest> decode_consumer_request(std::string_view line) {
    const auto f = split(strip_line_ending(line), '|');
    if (f.size() != 4 || f[3].empty() || has_reserved_delimiter(f[3])) return std::nullopt;
    ConsumerRequest::Verb verb;
    if (f[0] == "SUB")
        verb = ConsumerRequest::Verb::Subscribe;
    else if (f[0] == "QRY")
        verb = ConsumerRequest::Verb::Query;
    else
        return std::nullopt;
    try {
        return ConsumerRequest{verb, EntityRef{std::string(f[1]), std::string(f[2])}, std::string(f[3])};
    } catch (const DomainError&) {
        return std::nullopt;
    }
}

}  // namespace ctxchan::wire
