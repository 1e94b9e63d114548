#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "edgeimpute/error.hpp"

namespace edgeimpute
{

// `key = value` lines; '#' starts a comment, blank lines are skipped.
// Keys keep their file order so snapshots can be written back verbatim.
class KeyValues
{
  public:
    static KeyValues parse(std::string_view text, std::string_view origin = "<text>")
    {
        KeyValues kv;
        std::size_t line_no = 0;
        std::size_t pos = 0;
        while (pos <= text.size())
        {
            const std::size_t eol = text.find('\n', pos);
            std::string_view line = text.substr(pos, eol == std::string_view::npos ? text.npos : eol - pos);
            pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
            ++line_no;

            if (const auto hash = line.find('#'); hash != std::string_view::npos)
                line = line.substr(0, hash);
            line = trim(line);
            if (line.empty())
                continue;
            const auto eq = line.find('=');
            if (eq == std::string_view::npos)
                throw Error(ErrorCode::config, std::string(origin) + ":" + std::to_string(line_no) +
                                                   ": expected 'key = value'");
            const std::string key(trim(line.substr(0, eq)));
            const std::string value(trim(line.substr(eq + 1)));
            if (key.empty())
                throw Error(ErrorCode::config, std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
            if (kv.index_.count(key))
                throw Error(ErrorCode::config,
                            std::string(origin) + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
            kv.index_[key] = kv.entries_.size();
            kv.entries_.emplace_back(key, value);
        }
        return kv;
    }

    static KeyValues load(const std::string& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw Error(ErrorCode::io, "cannot open '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path);
    }

    bool has(const std::string& key) const { return index_.count(key) != 0; }

    std::optional<std::string> get(const std::string& key) const
    {
        auto it = index_.find(key);
        if (it == index_.end())
            return std::nullopt;
        return entries_[it->second].second;
    }

    std::string require(const std::string& key) const
    {
        auto v = get(key);
        if (!v)
            throw Error(ErrorCode::config, "missing required key '" + key + "'");
        return *v;
    }

    void set(const std::string& key, std::string value)
    {
        auto it = index_.find(key);
        if (it != index_.end())
        {
            entries_[it->second].second = std::move(value);
            return;
        }
        index_[key] = entries_.size();
        entries_.emplace_back(key, std::move(value));
    }

    // Entries under `prefix.`, with the prefix stripped.
    KeyValues scoped(const std::string& prefix) const
    {
        KeyValues out;
        const std::string p = prefix + ".";
        for (const auto& [k, v] : entries_)
            if (k.rfind(p, 0) == 0)
                out.set(k.substr(p.size()), v);
        return out;
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }

    std::string to_string(const std::string& prefix = {}) const
    {
        std::string out;
        for (const auto& [k, v] : entries_)
            out += (prefix.empty() ? k : prefix + "." + k) + " = " + v + "\n";
        return out;
    }

    static std::string_view trim(std::string_view s)
    {
        const auto first = s.find_first_not_of(" \t\r");
        if (first == std::string_view::npos)
            return {};
        const auto last = s.find_last_not_of(" \t\r");
        return s.substr(first, last - first + 1);
    }

  private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::map<std::string, std::size_t> index_;
};

inline std::vector<std::string> split_list(std::string_view s, char sep = ',')
{
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true)
    {
        const auto next = s.find(sep, pos);
        out.emplace_back(KeyValues::trim(s.substr(pos, next == std::string_view::npos ? s.npos : next - pos)));
        if (next == std::string_view::npos)
            break;
        pos = next + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s)
{
    s = KeyValues::trim(s);
    if (!s.empty() && s.front() == '+')
        s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        return std::nullopt;
    return v;
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s)
{
    s = KeyValues::trim(s);
    if (!s.empty() && s.front() == '+')
        s.remove_prefix(1);
    Int v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        return std::nullopt;
    return v;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ec == std::errc{} ? ptr : buf);
}

} // namespace edgeimpute
