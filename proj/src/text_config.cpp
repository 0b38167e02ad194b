#include "ctxchan/text_config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ctxchan {

std::string_view trim(std::string_view s) noexcept {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

void for_each_content_line(std::string_view text,
                           const std::function<void(std::string_view, int)>& fn) {
    int lineno = 0;
    while (!text.empty() || lineno == 0) {
        ++lineno;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (!line.empty()) fn(line, lineno);
        if (text.empty()) break;
    }
}

std::pair<std::string_view, std::string_view> split_key_value(std::string_view line) {
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) return {trim(line), {}};
    return {trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool parse_bool(std::string_view s, bool& out) noexcept {
    if (s == "1" || s == "true" || s == "yes" || s == "on") {
        out = true;
        return true;
    }
    if (s == "0" || s == "false" || s == "no" || s == "off") {
        out = false;
        return true;
    }
    return false;
}

}  // namespace ctxchan
