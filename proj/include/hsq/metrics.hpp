#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hsq/errors.hpp"

namespace hsq {

// Rank AUC in the Mann-Whitney form: the probability that a random positive
// outscores a random negative, ties counting half. Midranks keep every
// intermediate a half-integer, so the result is exactly the pairwise count.
inline double rank_auc(const std::vector<double>& scores,
                       const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw ContractViolation("rank_auc: " + std::to_string(scores.size()) +
                            " scores vs " + std::to_string(labels.size()) +
                            " labels");
  }
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (const int l : labels) {
    if (l != 0 && l != 1) {
      throw ContractViolation("rank_auc: labels must be 0 or 1, got " +
                              std::to_string(l));
    }
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ContractViolation("rank_auc: needs both classes, got " +
                            std::to_string(n_pos) + " positives of " +
                            std::to_string(n));
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  double pos_rank_sum = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j share the midrank; the average of consecutive integers
    // is a half-integer, exact in double.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) pos_rank_sum += midrank;
    }
    i = j;
  }
  const double u = pos_rank_sum -
                   0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Threshold classification summary. Ratios whose denominator is empty are
// absent rather than zero or NaN.
struct ConfusionMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0;
  std::optional<double> precision, recall, f1;
};

inline ConfusionMetrics confusion_metrics(const std::vector<double>& scores,
                                          const std::vector<int>& labels,
                                          double threshold = 0.5) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ContractViolation("confusion_metrics: need matching nonempty inputs");
  }
  ConfusionMetrics m;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = labels[i] == 1;
    if (predicted && actual) ++m.tp;
    if (predicted && !actual) ++m.fp;
    if (!predicted && !actual) ++m.tn;
    if (!predicted && actual) ++m.fn;
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(scores.size());
  if (m.tp + m.fp > 0) {
    m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  }
  if (m.tp + m.fn > 0) {
    m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  }
  if (m.precision && m.recall && *m.precision + *m.recall > 0) {
    m.f1 = 2 * *m.precision * *m.recall / (*m.precision + *m.recall);
  }
  return m;
}

struct ScoreRow {
  std::string id;
  std::string group;
  double score = 0;
  int label = 0;
};

enum class GroupRule { max_score, mean_score };

// Collapses item rows into one row per group (first-appearance order), the
// group's score being the max or mean of its members. Groups mixing labels
// have no single truth value and are rejected.
inline std::vector<ScoreRow> aggregate_by_group(const std::vector<ScoreRow>& rows,
                                                GroupRule rule = GroupRule::max_score) {
  std::vector<ScoreRow> out;
  std::vector<std::size_t> member_count;
  for (const auto& row : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const ScoreRow& g) {
      return g.group == row.group;
    });
    if (it == out.end()) {
      out.push_back(ScoreRow{row.group, row.group, row.score, row.label});
      member_count.push_back(1);
      continue;
    }
    if (it->label != row.label) {
      throw ContractViolation("group '" + row.group + "' mixes labels");
    }
    const std::size_t gi = static_cast<std::size_t>(it - out.begin());
    if (rule == GroupRule::max_score) {
      it->score = std::max(it->score, row.score);
    } else {
      it->score += row.score;
    }
    ++member_count[gi];
  }
  if (rule == GroupRule::mean_score) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].score /= static_cast<double>(member_count[i]);
    }
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

inline constexpr const char* kScoresCsvHeader = "id,group,score,label";

// Strict reader for the scores table. Header must match exactly; every data
// line carries four fields; labels are 0 or 1. Blank lines are ignored and
// a trailing carriage return is tolerated.
inline std::vector<ScoreRow> read_scores_csv(std::istream& is, const std::string& ctx) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> IoError {
    return IoError(IoErrorKind::malformed,
                   ctx + " line " + std::to_string(line_no) + ": " + what);
  };
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };

  if (!next_line()) {
    ++line_no;
    throw fail("empty file, expected header '" + std::string(kScoresCsvHeader) + "'");
  }
  if (line != kScoresCsvHeader) {
    throw fail("bad header '" + line + "', expected '" + kScoresCsvHeader + "'");
  }

  std::vector<ScoreRow> rows;
  while (next_line()) {
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 4) {
      throw fail("expected 4 fields, got " + std::to_string(fields.size()));
    }
    ScoreRow row;
    row.id = fields[0];
    row.group = fields[1];
    if (row.id.empty() || row.group.empty()) throw fail("empty id or group");
    std::size_t used = 0;
    try {
      row.score = std::stod(fields[2], &used);
    } catch (const std::exception&) {
      throw fail("bad score '" + fields[2] + "'");
    }
    if (used != fields[2].size()) throw fail("bad score '" + fields[2] + "'");
    if (fields[3] == "0") {
      row.label = 0;
    } else if (fields[3] == "1") {
      row.label = 1;
    } else {
      throw fail("bad label '" + fields[3] + "', expected 0 or 1");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<ScoreRow> read_scores_csv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    throw IoError(IoErrorKind::file_access, "cannot open for reading: " + path);
  }
  return read_scores_csv(is, path);
}

}  // namespace hsq
