#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace clir {

/// One recognised "section.key" setting.
struct ConfigKey {
    std::string name;
    std::string default_value;  ///< empty means unset
    std::string help;
};

/// Every key the toolkit understands, in a fixed order.
const std::vector<ConfigKey>& config_schema();

/// Flat "section.key = value" settings over the schema defaults.
///
/// Text format: one assignment per line, '#' starts a comment, blank lines are ignored.
/// Unknown keys and malformed lines are usage errors.
class Config {
  public:
    /// All schema keys at their defaults.
    Config();

    static Config parse(std::string_view text, const std::string& source = "<memory>");
    static Config load(const std::string& path);

    /// Applies every assignment of `text` on top of the current values.
    void merge(std::string_view text, const std::string& source);
    void set(const std::string& key, const std::string& value);
    /// "key=value" form used by --set.
    void set_assignment(const std::string& assignment);

    [[nodiscard]] bool has(const std::string& key) const;  ///< set to a non-empty value
    [[nodiscard]] const std::string& raw(const std::string& key) const;

    // Typed access; a bad value is a UsageError naming the key. `require` fails on empty values.
    [[nodiscard]] const std::string& require(const std::string& key) const;
    [[nodiscard]] std::string get_string(const std::string& key) const { return raw(key); }
    [[nodiscard]] double get_double(const std::string& key) const;
    [[nodiscard]] std::size_t get_size(const std::string& key) const;
    [[nodiscard]] std::uint64_t get_u64(const std::string& key) const;
    [[nodiscard]] bool get_bool(const std::string& key) const;
    [[nodiscard]] std::vector<std::size_t> get_size_list(const std::string& key) const;
    [[nodiscard]] std::vector<std::string> get_list(const std::string& key) const;
    [[nodiscard]] std::optional<double> get_optional_double(const std::string& key) const;

    /// All keys in schema order as "key = value" lines; re-parsing yields the same config.
    [[nodiscard]] std::string format() const;
    [[nodiscard]] nlohmann::ordered_json to_json() const;

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace clir
