#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace handdiff {

// Key-value run configuration. Every key must be pre-registered; unknown
// keys in files or overrides are hard errors so typos cannot silently fall
// back to defaults.
class Config {
  public:
    struct KeySpec {
        std::string name;
        std::string default_value;
        std::string doc;
    };

    Config();  // all registered keys at their defaults

    static const std::vector<KeySpec>& registry();

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);  // throws ConfigError on unknown key

    const std::string& get(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // canonical sorted key=value dump, one per line
    std::string dump() const;
    uint64_t hash() const;  // FNV-1a 64 over dump()

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace handdiff
