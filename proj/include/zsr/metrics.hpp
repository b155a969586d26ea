#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "zsr/errors.hpp"
#include "zsr/retrieval.hpp"

namespace zsr {

// How AP@K is normalized.
enum class ApNormalization {
  kRetrievedRelevant,  // relevant items found within the top K
  kMinTotalRelevantK,  // min(relevant items in the gallery, K)
};

inline double precision_at_k(std::span<const std::uint8_t> relevance, std::size_t k) {
  if (relevance.empty()) throw ValidationError("precision_at_k: empty relevance list");
  if (k == 0) throw ValidationError("precision_at_k: K must be >= 1");
  const std::size_t n = std::min(k, relevance.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += relevance[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(n);
}

// Mean of precision@r over relevant ranks r <= K. `total_relevant` is only
// read for kMinTotalRelevantK.
inline double average_precision_at_k(std::span<const std::uint8_t> relevance, std::size_t k,
                                     ApNormalization norm = ApNormalization::kRetrievedRelevant,
                                     std::size_t total_relevant = 0) {
  if (relevance.empty()) throw ValidationError("average_precision_at_k: empty relevance list");
  if (k == 0) throw ValidationError("average_precision_at_k: K must be >= 1");
  const std::size_t n = std::min(k, relevance.size());
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!relevance[i]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  const std::size_t denom =
      norm == ApNormalization::kRetrievedRelevant ? hits : std::min(total_relevant, k);
  return denom == 0 ? 0.0 : sum / static_cast<double>(denom);
}

struct QueryScore {
  std::uint32_t query_index = 0;
  double ap = 0.0;
  double precision = 0.0;
};

struct EvalReport {
  std::size_t k = 0;  // after clamping to the gallery size
  std::vector<QueryScore> per_query;
  double mean_ap = 0.0;
  double mean_precision = 0.0;
  std::size_t query_count = 0;
  std::size_t gallery_size = 0;
};

// `query_labels[q]` is the label of query index q; `gallery_labels[g]` the
// label of gallery index g. Both must use one shared label space. A negative
// gallery label marks a row that is not part of the evaluated gallery.
inline EvalReport evaluate(const std::vector<RankedList>& rankings,
                           std::span<const std::int64_t> query_labels,
                           std::span<const std::int64_t> gallery_labels, std::size_t k,
                           ApNormalization norm = ApNormalization::kRetrievedRelevant) {
  if (k == 0) throw ValidationError("evaluate: K must be >= 1");
  EvalReport report;
  report.gallery_size = static_cast<std::size_t>(std::count_if(
      gallery_labels.begin(), gallery_labels.end(), [](std::int64_t l) { return l >= 0; }));
  if (report.gallery_size == 0) throw ValidationError("evaluate: empty gallery");
  report.k = std::min(k, report.gallery_size);
  report.query_count = rankings.size();
  std::vector<std::uint8_t> relevance;
  for (const auto& list : rankings) {
    if (list.query_index >= query_labels.size()) {
      throw IndexError("evaluate: query index " + std::to_string(list.query_index) +
                       " has no label");
    }
    const auto label = query_labels[list.query_index];
    relevance.clear();
    for (const auto& e : list.entries) {
      if (e.gallery_index >= gallery_labels.size()) {
        throw IndexError("evaluate: gallery index " + std::to_string(e.gallery_index) +
                         " has no label");
      }
      relevance.push_back(gallery_labels[e.gallery_index] == label ? 1 : 0);
    }
    QueryScore s;
    s.query_index = list.query_index;
    if (!relevance.empty()) {
      const auto total = static_cast<std::size_t>(
          std::count(gallery_labels.begin(), gallery_labels.end(), label));
      s.precision = precision_at_k(relevance, report.k);
      s.ap = average_precision_at_k(relevance, report.k, norm, total);
    }
    report.per_query.push_back(s);
  }
  if (!report.per_query.empty()) {
    double ap = 0.0, p = 0.0;
    for (const auto& s : report.per_query) {
      ap += s.ap;
      p += s.precision;
    }
    report.mean_ap = ap / static_cast<double>(report.per_query.size());
    report.mean_precision = p / static_cast<double>(report.per_query.size());
  }
  return report;
}

inline std::string format_report_table(const EvalReport& r) {
  char line[160];
  std::string out;
  std::snprintf(line, sizeof(line), "%-14s %12zu\n", "queries", r.query_count);
  out += line;
  std::snprintf(line, sizeof(line), "%-14s %12zu\n", "gallery", r.gallery_size);
  out += line;
  std::snprintf(line, sizeof(line), "%-14s %12zu\n", "K", r.k);
  out += line;
  const std::string map_label = "mAP@" + std::to_string(r.k);
  const std::string p_label = "P@" + std::to_string(r.k);
  std::snprintf(line, sizeof(line), "%-14s %12.6f\n", map_label.c_str(), r.mean_ap);
  out += line;
  std::snprintf(line, sizeof(line), "%-14s %12.6f\n", p_label.c_str(), r.mean_precision);
  out += line;
  return out;
}

inline std::string format_report_csv(const EvalReport& r) {
  std::string out = "query_index,ap,p_at_k\n";
  char line[96];
  for (const auto& s : r.per_query) {
    std::snprintf(line, sizeof(line), "%u,%.9f,%.9f\n", s.query_index, s.ap, s.precision);
    out += line;
  }
  return out;
}

}  // namespace zsr
