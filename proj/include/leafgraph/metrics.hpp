#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "leafgraph/error.hpp"

namespace leafgraph {

// counts[t][p]: rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;
  std::vector<std::string> class_table;

  std::uint64_t at(std::size_t t, std::size_t p) const { return counts[t * k + p]; }
  std::uint64_t& at(std::size_t t, std::size_t p) { return counts[t * k + p]; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

inline ConfusionMatrix confusion(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                                 std::size_t k, std::vector<std::string> class_table = {}) {
  if (preds.size() != truth.size()) {
    throw ShapeError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(truth.size()) + " labels");
  }
  ConfusionMatrix cm{k, std::vector<std::uint64_t>(k * k, 0), std::move(class_table)};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= k || truth[i] >= k) throw RangeError("confusion: class index out of range");
    ++cm.at(truth[i], preds[i]);
  }
  return cm;
}

enum class Averaging { weighted, macro };

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Averaging averaging = Averaging::weighted;
  std::vector<ClassMetrics> per_class;
};

// Undefined per-class ratios (zero denominators) count as 0.
inline Metrics metrics(const ConfusionMatrix& cm, Averaging averaging = Averaging::weighted) {
  const std::uint64_t n = cm.total();
  if (cm.k == 0 || n == 0) throw ConfigError("metrics: empty confusion matrix");
  Metrics m;
  m.averaging = averaging;
  std::uint64_t trace = 0;
  for (std::size_t c = 0; c < cm.k; ++c) {
    std::uint64_t tp = cm.at(c, c), row = 0, col = 0;
    for (std::size_t j = 0; j < cm.k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    trace += tp;
    ClassMetrics pc;
    pc.support = row;
    pc.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    pc.recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    pc.f1 = (pc.precision + pc.recall) > 0.0 ? 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall) : 0.0;
    m.per_class.push_back(pc);
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(n);
  if (averaging == Averaging::weighted) {
    // support_k * recall_k == TP_k, so weighted recall reduces to trace / N.
    double p = 0.0, f = 0.0;
    for (const auto& pc : m.per_class) {
      p += static_cast<double>(pc.support) * pc.precision;
      f += static_cast<double>(pc.support) * pc.f1;
    }
    m.precision = p / static_cast<double>(n);
    m.f1 = f / static_cast<double>(n);
    m.recall = static_cast<double>(trace) / static_cast<double>(n);
  } else {
    double p = 0.0, r = 0.0, f = 0.0;
    for (const auto& pc : m.per_class) {
      p += pc.precision;
      r += pc.recall;
      f += pc.f1;
    }
    const auto k = static_cast<double>(cm.k);
    m.precision = p / k;
    m.recall = r / k;
    m.f1 = f / k;
  }
  return m;
}

// Rounds to 9 significant digits so serialized numbers are stable.
inline double round_sig9(double v) {
  if (!std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline nlohmann::ordered_json metrics_json(const Metrics& m, const std::vector<std::string>& class_table = {}) {
  nlohmann::ordered_json j;
  j["averaging"] = m.averaging == Averaging::weighted ? "weighted" : "macro";
  j["accuracy"] = round_sig9(m.accuracy);
  j["precision"] = round_sig9(m.precision);
  j["recall"] = round_sig9(m.recall);
  j["f1"] = round_sig9(m.f1);
  auto& pc = j["per_class"] = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    nlohmann::ordered_json row;
    row["class"] = c < class_table.size() ? class_table[c] : std::to_string(c);
    row["precision"] = round_sig9(m.per_class[c].precision);
    row["recall"] = round_sig9(m.per_class[c].recall);
    row["f1"] = round_sig9(m.per_class[c].f1);
    row["support"] = m.per_class[c].support;
    pc.push_back(std::move(row));
  }
  return j;
}

inline std::string metrics_table(const Metrics& m, const std::vector<std::string>& class_table = {}) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %8s\n", "class", "precision", "recall", "f1", "support");
  out += line;
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const auto& pc = m.per_class[c];
    const std::string name = c < class_table.size() ? class_table[c] : std::to_string(c);
    std::snprintf(line, sizeof line, "%-16s %10.4f %10.4f %10.4f %8llu\n", name.c_str(), pc.precision, pc.recall,
                  pc.f1, static_cast<unsigned long long>(pc.support));
    out += line;
  }
  std::snprintf(line, sizeof line, "%-16s %10.4f %10.4f %10.4f\n",
                m.averaging == Averaging::weighted ? "weighted avg" : "macro avg", m.precision, m.recall, m.f1);
  out += line;
  std::snprintf(line, sizeof line, "%-16s %10.4f\n", "accuracy", m.accuracy);
  out += line;
  return out;
}

}  // namespace leafgraph
