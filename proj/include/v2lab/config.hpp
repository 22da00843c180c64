#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace v2lab {

/// Flat `key=value` configuration. Lines starting with '#' and blank lines
/// are ignored; keys and values are trimmed. Serialization is sorted so the
/// canonical text (and its hash) is stable.
class KeyValueConfig {
   public:
    static KeyValueConfig parse_string(const std::string& text);
    static KeyValueConfig parse_file(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    /// Throws std::invalid_argument naming the first key not in `allowed`.
    void require_known_keys(const std::set<std::string>& allowed) const;

    std::string canonical_text() const;
    std::uint64_t hash() const;  // FNV-1a over canonical_text()

    const std::map<std::string, std::string>& values() const { return values_; }

   private:
    std::map<std::string, std::string> values_;
};

std::uint64_t fnv1a64(const std::string& text);

}  // namespace v2lab
