#pragma once

#include <cctype>
#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "leafgraph/binary_io.hpp"
#include "leafgraph/dataset.hpp"
#include "leafgraph/error.hpp"
#include "leafgraph/image.hpp"
#include "leafgraph/model.hpp"

namespace leafgraph {

// Parses the TOML subset used for pipeline configs:
//
//   # comment
//   seed = 7
//   [model]
//   arch = "sequential"
//   hidden_dims = [64, 64]
//   l2_normalize = false
//
// Values are strings (double-quoted, \" \\ \n \t escapes), integers, reals, booleans,
// or single-line arrays of those. Keys are returned flattened as "table.key".
class TomlParser {
 public:
  explicit TomlParser(std::string_view text) : text_(text) {}

  nlohmann::ordered_json parse() {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    std::string table;
    while (pos_ < text_.size()) {
      ++line_;
      const std::size_t eol = std::min(text_.find('\n', pos_), text_.size());
      std::string_view line = text_.substr(pos_, eol - pos_);
      pos_ = eol + 1;
      col_ = 0;
      cur_ = line;
      skip_ws();
      if (at_end() || peek() == '#') continue;
      if (peek() == '[') {
        ++col_;
        skip_ws();
        table = parse_key();
        skip_ws();
        expect(']');
      } else {
        const std::size_t key_col = col_;
        std::string key = parse_key();
        skip_ws();
        expect('=');
        skip_ws();
        const std::string full = table.empty() ? key : table + "." + key;
        if (out.contains(full)) {
          col_ = key_col;
          fail("duplicate key '" + full + "'");
        }
        out[full] = parse_value();
      }
      skip_ws();
      if (!at_end() && peek() != '#') fail("unexpected trailing text");
    }
    return out;
  }

 private:
  bool at_end() const { return col_ >= cur_.size(); }
  char peek() const { return cur_[col_]; }
  void skip_ws() {
    while (!at_end() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) ++col_;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config line " + std::to_string(line_) + ", column " + std::to_string(col_ + 1) + ": " + what);
  }
  void expect(char c) {
    if (at_end() || peek() != c) fail(std::string("expected '") + c + "'");
    ++col_;
  }

  std::string parse_key() {
    std::string key;
    while (!at_end()) {
      const char c = peek();
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.') {
        key += c;
        ++col_;
      } else {
        break;
      }
    }
    if (key.empty()) fail("expected a key");
    return key;
  }

  nlohmann::ordered_json parse_value() {
    if (at_end()) fail("missing value");
    const char c = peek();
    if (c == '"') return parse_string();
    if (c == '[') {
      ++col_;
      auto arr = nlohmann::ordered_json::array();
      skip_ws();
      if (!at_end() && peek() == ']') {
        ++col_;
        return arr;
      }
      while (true) {
        skip_ws();
        arr.push_back(parse_value());
        skip_ws();
        if (!at_end() && peek() == ',') {
          ++col_;
          skip_ws();
          if (!at_end() && peek() == ']') {
            ++col_;
            return arr;
          }
          continue;
        }
        expect(']');
        return arr;
      }
    }
    std::string word;
    while (!at_end() && peek() != ',' && peek() != ']' && peek() != '#' && peek() != ' ' && peek() != '\t' &&
           peek() != '\r') {
      word += peek();
      ++col_;
    }
    if (word == "true") return true;
    if (word == "false") return false;
    std::string digits;
    for (char d : word)
      if (d != '_') digits += d;
    if (digits.empty()) fail("missing value");
    const bool integral = digits.find_first_of(".eE") == std::string::npos && digits != "inf" && digits != "nan";
    char* end = nullptr;
    if (integral) {
      errno = 0;
      const long long v = std::strtoll(digits.c_str(), &end, 10);
      if (end == digits.c_str() + digits.size() && errno == 0) {
        if (v >= 0) return static_cast<std::uint64_t>(v);
        return static_cast<std::int64_t>(v);
      }
      errno = 0;
      const unsigned long long u = std::strtoull(digits.c_str(), &end, 10);
      if (end == digits.c_str() + digits.size() && errno == 0 && digits[0] != '-') return static_cast<std::uint64_t>(u);
    }
    const double d = std::strtod(digits.c_str(), &end);
    if (end != digits.c_str() + digits.size()) fail("invalid value '" + word + "'");
    return d;
  }

  std::string parse_string() {
    ++col_;
    std::string s;
    while (true) {
      if (at_end()) fail("unterminated string");
      char c = peek();
      ++col_;
      if (c == '"') return s;
      if (c == '\\') {
        if (at_end()) fail("unterminated escape");
        const char e = peek();
        ++col_;
        switch (e) {
          case 'n': s += '\n'; break;
          case 't': s += '\t'; break;
          case '"': s += '"'; break;
          case '\\': s += '\\'; break;
          default: fail(std::string("unknown escape '\\") + e + "'");
        }
      } else {
        s += c;
      }
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
  std::string_view cur_;
  std::size_t col_ = 0;
};

inline nlohmann::ordered_json parse_toml(std::string_view text) { return TomlParser(text).parse(); }

struct PipelinePaths {
  std::filesystem::path manifest;
  std::filesystem::path features;
  std::filesystem::path images;
  std::filesystem::path graph;
  std::filesystem::path checkpoint;
  std::filesystem::path out{"out"};
};

struct ServiceOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;
  unsigned threads = 8;
};

struct PipelineConfig {
  ModelConfig model;
  PipelinePaths paths;
  SplitFractions split;
  AugmentSpec augment;
  bool augment_enabled = false;
  ServiceOptions service;
  std::optional<std::uint64_t> seed;  // unresolved until resolve_seed()

  // Explicit seed (file or flag) wins; otherwise LEAFGRAPH_SEED; otherwise 0.
  std::uint64_t resolve_seed() {
    if (!seed) {
      seed = 0;
      if (const char* env = std::getenv("LEAFGRAPH_SEED"); env && *env) {
        char* end = nullptr;
        errno = 0;
        const auto v = std::strtoull(env, &end, 10);
        if (*end != '\0' || errno != 0) throw ConfigError("LEAFGRAPH_SEED is not an unsigned integer");
        seed = v;
      }
    }
    model.seed = *seed;
    return *seed;
  }

  // Applies flattened "table.key" values; unknown keys are rejected.
  void apply(const nlohmann::ordered_json& flat) {
    for (const auto& [key, value] : flat.items()) {
      try {
        apply_one(key, value);
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
      }
    }
  }

  void load_file(const std::filesystem::path& path) { apply(parse_toml(read_file_text(path))); }

  void validate() const {
    model.validate();
    split.validate();
    augment.validate();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed.value_or(model.seed);
    j["paths"] = {{"manifest", paths.manifest.string()}, {"features", paths.features.string()},
                  {"images", paths.images.string()},     {"graph", paths.graph.string()},
                  {"checkpoint", paths.checkpoint.string()}, {"out", paths.out.string()}};
    auto m = leafgraph::to_json(model);
    m.erase("seed");
    m.erase("theta");
    m.erase("min_degree");
    j["model"] = m;
    j["graph"] = {{"theta", model.theta}, {"min_degree", model.min_degree}};
    j["split"] = {{"train", split.train}, {"val", split.val}, {"test", split.test}};
    j["augment"] = {{"enabled", augment_enabled},
                    {"max_rotation_deg", augment.max_rotation_deg},
                    {"horizontal_flip", augment.horizontal_flip},
                    {"max_shift_frac", augment.max_shift_frac},
                    {"max_zoom_frac", augment.max_zoom_frac}};
    j["service"] = {{"host", service.host}, {"port", service.port}, {"threads", service.threads}};
    return j;
  }

  // Same content as to_json(), in the config file syntax, so it can be fed back in.
  std::string to_toml() const {
    std::string out;
    const auto j = to_json();
    for (const auto& [table, body] : j.items()) {
      if (!body.is_object()) {
        out += table + " = " + body.dump() + "\n";
        continue;
      }
      out += "\n[" + table + "]\n";
      for (const auto& [k, v] : body.items()) {
        auto val = v;
        if (val.is_number_float()) val = round_sig9(val.get<double>());
        out += k + " = " + val.dump() + "\n";
      }
    }
    return out;
  }

  // Writes effective_config.toml into the output directory.
  void echo(const std::filesystem::path& dir) const { write_file_text(dir / "effective_config.toml", to_toml()); }

 private:
  void apply_one(const std::string& key, const nlohmann::ordered_json& v) {
    auto size = [&] {
      if (!v.is_number_unsigned()) throw ConfigError("config key '" + key + "' must be a non-negative integer");
      return v.get<std::size_t>();
    };
    auto real = [&] {
      if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
      return v.get<double>();
    };
    auto sizes = [&] {
      std::vector<std::size_t> out;
      if (!v.is_array()) throw ConfigError("config key '" + key + "' must be an array");
      for (const auto& e : v) {
        if (!e.is_number_unsigned()) throw ConfigError("config key '" + key + "' must hold non-negative integers");
        out.push_back(e.get<std::size_t>());
      }
      return out;
    };
    if (key == "seed") seed = v.get<std::uint64_t>();
    else if (key == "paths.manifest") paths.manifest = v.get<std::string>();
    else if (key == "paths.features") paths.features = v.get<std::string>();
    else if (key == "paths.images") paths.images = v.get<std::string>();
    else if (key == "paths.graph") paths.graph = v.get<std::string>();
    else if (key == "paths.checkpoint") paths.checkpoint = v.get<std::string>();
    else if (key == "paths.out") paths.out = v.get<std::string>();
    else if (key == "model.arch") model.arch = parse_arch(v.get<std::string>());
    else if (key == "model.hidden_dims") model.hidden_dims = sizes();
    else if (key == "model.aggregator") model.aggregator = parse_aggregator(v.get<std::string>());
    else if (key == "model.dropout") model.dropout = real();
    else if (key == "model.lr") model.lr = real();
    else if (key == "model.batch_size") model.batch_size = size();
    else if (key == "model.epochs") model.epochs = size();
    else if (key == "model.fan_outs") model.fan_outs = sizes();
    else if (key == "model.use_bias") model.use_bias = v.get<bool>();
    else if (key == "model.l2_normalize") model.l2_normalize = v.get<bool>();
    else if (key == "graph.theta") model.theta = real();
    else if (key == "graph.min_degree") model.min_degree = size();
    else if (key == "split.train") split.train = real();
    else if (key == "split.val") split.val = real();
    else if (key == "split.test") split.test = real();
    else if (key == "augment.enabled") augment_enabled = v.get<bool>();
    else if (key == "augment.max_rotation_deg") augment.max_rotation_deg = real();
    else if (key == "augment.horizontal_flip") augment.horizontal_flip = v.get<bool>();
    else if (key == "augment.max_shift_frac") augment.max_shift_frac = real();
    else if (key == "augment.max_zoom_frac") augment.max_zoom_frac = real();
    else if (key == "service.host") service.host = v.get<std::string>();
    else if (key == "service.port") {
      const auto p = size();
      if (p > 65535) throw ConfigError("service.port out of range");
      service.port = static_cast<std::uint16_t>(p);
    } else if (key == "service.threads") service.threads = static_cast<unsigned>(size());
    else throw ConfigError("unknown config key '" + key + "'");
  }
};

}  // namespace leafgraph
