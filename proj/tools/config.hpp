#pragma once

// Pipeline configuration: key=value text or a flat JSON object. Every value
// remembers where it came from so that type errors point at the file.

#include "condex/io.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace condex::cli {

struct ConfigValue {
  std::string text;
  int line = 0;
  int column = 0;
};

class Config {
 public:
  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "locations",          "observations",        "output_dir",         "seed",
        "workers",            "threshold_quantile",  "b_model",            "residual_variant",
        "delta_grid",         "anchors",             "deform_measure",     "coordinates",
        "v_quantiles",        "nsims",               "subset",             "bootstrap_replicates",
        "bootstrap_block",    "explore_quantile",    "explore_site",       "refit_min_exceedances",
        "kendall_samples",    "diagnose_site",       "diagnose_pairs",     "fit_max_evaluations",
        "model",              "export_draws",        "simulate_sites"};
    return keys;
  }

  static Config parse_text(const std::string& text, const std::string& source) {
    Config c;
    c.source_ = source;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto first = line.find_first_not_of(" \t");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw io::ParseError(source, lineno, static_cast<int>(first) + 1, "expected key = value");
      std::string key = trim(line.substr(first, eq - first));
      const auto vstart = line.find_first_not_of(" \t", eq + 1);
      std::string value = vstart == std::string::npos ? "" : trim(line.substr(vstart));
      const int vcol = vstart == std::string::npos ? static_cast<int>(eq) + 2 : static_cast<int>(vstart) + 1;
      c.set(key, {value, lineno, vcol}, static_cast<int>(first) + 1);
    }
    return c;
  }

  static Config parse_json(const std::string& text, const std::string& source) {
    Config c;
    c.source_ = source;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      const auto [l, col] = position(text, e.byte ? e.byte - 1 : 0);
      throw io::ParseError(source, l, col, "invalid JSON");
    }
    if (!j.is_object()) throw io::ParseError(source, 1, 1, "configuration must be a JSON object");
    for (const auto& [key, v] : j.items()) {
      const auto at = text.find("\"" + key + "\"");
      const auto [l, col] = at == std::string::npos ? std::pair{0, 0} : position(text, at);
      std::string s;
      if (v.is_string()) {
        s = v.get<std::string>();
      } else if (v.is_array()) {
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + (v[i].is_string() ? v[i].get<std::string>() : v[i].dump());
      } else {
        s = v.dump();
      }
      c.set(key, {s, l, col}, col);
    }
    return c;
  }

  static Config load(const std::string& path) {
    const auto text = io::read_text(path);
    Config c = path.ends_with(".json") ? parse_json(text, path) : parse_text(text, path);
    c.base_dir_ = std::filesystem::absolute(path).parent_path();
    return c;
  }

  /// Applies a command-line override `key=value`.
  void override_with(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw io::ParseError("--set", 0, 1, "expected key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), {trim(kv.substr(eq + 1)), 0, static_cast<int>(eq) + 2}, 1, true);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& def) const { return has(key) ? values_.at(key).text : def; }

  std::string required(const std::string& key) const {
    if (!has(key)) throw io::ParseError(source_, 0, 0, "missing required key '" + key + "'");
    return values_.at(key).text;
  }

  double num(const std::string& key, double def) const {
    if (!has(key)) return def;
    double v;
    const auto& cv = values_.at(key);
    if (!io::parse_double(cv.text, v)) fail(cv, "'" + key + "' must be a number");
    return v;
  }

  long long integer(const std::string& key, long long def) const {
    if (!has(key)) return def;
    const auto& cv = values_.at(key);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(cv.text, &used);
      if (used != cv.text.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      fail(cv, "'" + key + "' must be an integer");
    }
  }

  std::uint64_t seed() const {
    const auto v = integer("seed", -1);
    if (!has("seed")) throw io::ParseError(source_, 0, 0, "missing required key 'seed' (no default seed is used)");
    if (v < 0) fail(values_.at("seed"), "'seed' must be a non-negative integer");
    return static_cast<std::uint64_t>(v);
  }

  bool flag(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const auto& cv = values_.at(key);
    if (cv.text == "true" || cv.text == "1" || cv.text == "yes") return true;
    if (cv.text == "false" || cv.text == "0" || cv.text == "no") return false;
    fail(cv, "'" + key + "' must be true or false");
  }

  std::vector<double> numbers(const std::string& key, const std::vector<double>& def) const {
    if (!has(key)) return def;
    std::vector<double> out;
    const auto& cv = values_.at(key);
    for (const auto& part : split(cv.text)) {
      double v;
      if (!io::parse_double(part, v)) fail(cv, "'" + key + "' must be a comma-separated list of numbers");
      out.push_back(v);
    }
    return out;
  }

  std::vector<std::string> list(const std::string& key) const {
    return has(key) ? split(values_.at(key).text) : std::vector<std::string>{};
  }

  /// Path resolved against the configuration file's directory.
  std::filesystem::path path(const std::string& key, const std::string& def = "") const {
    const std::string p = has(key) ? values_.at(key).text : def;
    if (p.empty()) throw io::ParseError(source_, 0, 0, "missing required key '" + key + "'");
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base_dir_ / fp;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    if (has(key)) fail(values_.at(key), what);
    throw io::ParseError(source_, 0, 0, what);
  }

  /// Canonical text used for hashing: sorted key=value lines.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v.text + "\n";
    return out;
  }

  const std::string& source() const { return source_; }

 private:
  [[noreturn]] void fail(const ConfigValue& cv, const std::string& what) const {
    throw io::ParseError(cv.line ? source_ : std::string("--set"), cv.line, cv.column, what);
  }

  void set(const std::string& key, ConfigValue v, int key_column, bool allow_repeat = false) {
    if (!known_keys().count(key)) throw io::ParseError(v.line ? source_ : "--set", v.line, key_column, "unknown key '" + key + "'");
    if (!allow_repeat && values_.count(key)) throw io::ParseError(source_, v.line, key_column, "duplicated key '" + key + "'");
    values_[key] = std::move(v);
  }

  static std::pair<int, int> position(const std::string& text, std::size_t offset) {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    return {line, col};
  }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
      cur = trim(cur);
      if (!cur.empty()) out.push_back(cur);
    }
    return out;
  }

  std::map<std::string, ConfigValue> values_;
  std::string source_ = "<config>";
  std::filesystem::path base_dir_ = ".";
};

}  // namespace condex::cli
