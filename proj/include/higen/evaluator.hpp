#pragma once

// Scoring and analysis over parsed predictions: micro/macro F1 on
// (example, label) pairs, per-class scores, frequency-binned long-tail
// breakdowns and the invalid-path rate.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "higen/errors.hpp"
#include "higen/taxonomy.hpp"

namespace higen {

struct PredictionRecord {
  std::string id;
  LabelSet gold;       // ancestor-closed
  LabelSet predicted;  // may be empty
  ParseDiagnostics diagnostics;
};

struct ClassScore {
  int tp = 0, fp = 0, fn = 0;
  bool in_gold = false;

  double precision() const { return tp + fp == 0 ? 0.0 : double(tp) / (tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : double(tp) / (tp + fn); }
  double f1() const {
    double p = precision(), r = recall();
    return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
  }
};

struct BinScore {
  int bin = 0;
  int n_classes = 0;
  double micro_f1 = 0;
  double macro_f1 = 0;
};

struct ScoreReport {
  double micro_precision = 0;
  double micro_recall = 0;
  double micro_f1 = 0;
  double macro_f1 = 0;
  std::map<std::string, ClassScore> per_class;
  double invalid_path_rate = 0;
  std::vector<BinScore> long_tail;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["micro_precision"] = micro_precision;
    j["micro_recall"] = micro_recall;
    j["micro_f1"] = micro_f1;
    j["macro_f1"] = macro_f1;
    j["invalid_path_rate"] = invalid_path_rate;
    nlohmann::json pc = nlohmann::json::object();
    for (const auto& [id, s] : per_class)
      pc[id] = {{"tp", s.tp}, {"fp", s.fp}, {"fn", s.fn}, {"f1", s.f1()}};
    j["per_class"] = pc;
    if (!long_tail.empty()) {
      j["long_tail"] = nlohmann::json::array();
      for (const auto& b : long_tail)
        j["long_tail"].push_back({{"bin", b.bin},
                                  {"classes", b.n_classes},
                                  {"micro_f1", b.micro_f1},
                                  {"macro_f1", b.macro_f1}});
    }
    return j;
  }

  std::string to_table(const std::string& dataset_name) const {
    std::ostringstream out;
    out << std::left << std::setw(16) << "Dataset" << std::right << std::setw(10)
        << "Micro-F1" << std::setw(10) << "Macro-F1" << '\n';
    out << std::left << std::setw(16) << dataset_name << std::right << std::fixed
        << std::setprecision(4) << std::setw(10) << micro_f1 << std::setw(10)
        << macro_f1 << '\n';
    if (!long_tail.empty()) {
      out << '\n'
          << std::left << std::setw(6) << "Bin" << std::setw(10) << "Classes"
          << std::right << std::setw(10) << "Micro-F1" << std::setw(10)
          << "Macro-F1" << '\n';
      for (const auto& b : long_tail) {
        out << std::left << std::setw(6) << b.bin << std::setw(10) << b.n_classes
            << std::right << std::setw(10) << b.micro_f1 << std::setw(10)
            << b.macro_f1 << '\n';
      }
    }
    return out.str();
  }
};

// Micro scores pool TP/FP/FN over all (example, label) pairs. Macro-F1
// averages per-class F1 over the classes present in gold; classes that are
// only ever predicted contribute false positives to micro but are excluded
// from the macro universe.
inline ScoreReport micro_macro_f1(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw EmptyRecords("cannot score an empty record set");
  ScoreReport report;
  long tp = 0, fp = 0, fn = 0;
  int repaired = 0;
  for (const auto& r : records) {
    if (!r.diagnostics.clean()) ++repaired;
    for (const auto& id : r.gold.ids) {
      auto& cs = report.per_class[id];
      cs.in_gold = true;
      if (r.predicted.contains(id)) {
        ++cs.tp;
        ++tp;
      } else {
        ++cs.fn;
        ++fn;
      }
    }
    for (const auto& id : r.predicted.ids) {
      if (!r.gold.contains(id)) {
        ++report.per_class[id].fp;
        ++fp;
      }
    }
  }
  report.micro_precision = tp + fp == 0 ? 0.0 : double(tp) / (tp + fp);
  report.micro_recall = tp + fn == 0 ? 0.0 : double(tp) / (tp + fn);
  report.micro_f1 = report.micro_precision + report.micro_recall == 0
                        ? 0.0
                        : 2 * report.micro_precision * report.micro_recall /
                              (report.micro_precision + report.micro_recall);
  double macro_sum = 0;
  int macro_n = 0;
  for (const auto& [id, cs] : report.per_class) {
    if (!cs.in_gold) continue;
    macro_sum += cs.f1();
    ++macro_n;
  }
  report.macro_f1 = macro_n == 0 ? 0.0 : macro_sum / macro_n;
  report.invalid_path_rate =
      static_cast<double>(repaired) / static_cast<double>(records.size());
  return report;
}

// Fraction of examples whose raw generation required any repair.
inline double invalid_path_rate(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw EmptyRecords("cannot score an empty record set");
  int repaired = 0;
  for (const auto& r : records)
    if (!r.diagnostics.clean()) ++repaired;
  return static_cast<double>(repaired) / static_cast<double>(records.size());
}

// Classes are binned by their frequency in `frequencies` (normally the
// test-set gold counts): bin = clamp(frequency, 1, 5). Bins partition the
// evaluated classes; per-bin micro pools the pairs of that bin's classes and
// per-bin macro averages class F1 over the bin's gold-present classes.
inline std::vector<BinScore> long_tail_report(
    const std::vector<PredictionRecord>& records,
    const std::map<std::string, int>& frequencies) {
  ScoreReport base = micro_macro_f1(records);
  auto bin_of = [&](const std::string& id) {
    auto it = frequencies.find(id);
    int f = it == frequencies.end() ? 0 : it->second;
    return std::clamp(f, 1, 5);
  };
  std::vector<BinScore> bins(5);
  for (int b = 0; b < 5; ++b) bins[b].bin = b + 1;
  std::vector<long> tp(5, 0), fp(5, 0), fn(5, 0);
  std::vector<double> macro_sum(5, 0);
  std::vector<int> macro_n(5, 0);
  for (const auto& [id, cs] : base.per_class) {
    int b = bin_of(id) - 1;
    ++bins[b].n_classes;
    tp[b] += cs.tp;
    fp[b] += cs.fp;
    fn[b] += cs.fn;
    if (cs.in_gold) {
      macro_sum[b] += cs.f1();
      ++macro_n[b];
    }
  }
  for (int b = 0; b < 5; ++b) {
    double p = tp[b] + fp[b] == 0 ? 0.0 : double(tp[b]) / (tp[b] + fp[b]);
    double r = tp[b] + fn[b] == 0 ? 0.0 : double(tp[b]) / (tp[b] + fn[b]);
    bins[b].micro_f1 = p + r == 0 ? 0.0 : 2 * p * r / (p + r);
    bins[b].macro_f1 = macro_n[b] == 0 ? 0.0 : macro_sum[b] / macro_n[b];
  }
  return bins;
}

// Gold-label class frequencies of a record set, the usual binning input.
inline std::map<std::string, int> gold_frequencies(
    const std::vector<PredictionRecord>& records) {
  std::map<std::string, int> freq;
  for (const auto& r : records)
    for (const auto& id : r.gold.ids) ++freq[id];
  return freq;
}

}  // namespace higen
