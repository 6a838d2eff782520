#pragma once

// Classification metrics, significance testing and rater agreement.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace argpersona {

using nlohmann::json;

// Prediction slot for "no usable answer"; counts against recall, never as a
// false positive of any class.
inline constexpr std::size_t kAbstain = std::numeric_limits<std::size_t>::max();

class DegenerateSampleError : public Error {
 public:
  using Error::Error;
};

class UndefinedKappaError : public Error {
 public:
  using Error::Error;
};

struct ConfusionMatrix {
  std::size_t labels = 0;
  // cells[gold][pred]; column `labels` holds abstentions
  std::vector<std::vector<std::size_t>> cells;

  explicit ConfusionMatrix(std::size_t n = 0) : labels(n), cells(n, std::vector<std::size_t>(n + 1, 0)) {}

  void add(std::size_t gold, std::size_t pred) {
    if (gold >= labels) throw ContractError("gold label index out of range");
    if (pred != kAbstain && pred >= labels) throw ContractError("predicted label index out of range");
    cells[gold][pred == kAbstain ? labels : pred]++;
  }

  void merge(const ConfusionMatrix& other) {
    for (std::size_t g = 0; g < labels; ++g)
      for (std::size_t p = 0; p <= labels; ++p) cells[g][p] += other.cells[g][p];
  }

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : cells)
      for (auto c : row) t += c;
    return t;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& golds,
                                 std::size_t n_labels) {
  if (predictions.size() != golds.size())
    throw ContractError("predictions and golds differ in length (" + std::to_string(predictions.size()) + " vs " +
                        std::to_string(golds.size()) + ")");
  ConfusionMatrix cm(n_labels);
  for (std::size_t i = 0; i < golds.size(); ++i) cm.add(golds[i], predictions[i]);
  return cm;
}

struct ClassScore {
  double precision = 0.0;  // percent
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;    // gold count
  std::size_t predicted = 0;  // predicted count
  bool precision_undefined = false;
  bool recall_undefined = false;
};

struct Prf {
  double precision = 0.0;  // percent, unrounded
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<ClassScore> per_class;
  bool zero_division = false;
};

// Unweighted mean over the full label set. An undefined precision or recall
// (empty denominator) contributes 0 and sets `zero_division`.
inline Prf macro_prf(const ConfusionMatrix& cm) {
  Prf out;
  const std::size_t n = cm.labels;
  out.per_class.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    auto& s = out.per_class[c];
    const std::size_t tp = cm.cells[c][c];
    for (std::size_t p = 0; p <= n; ++p) s.support += cm.cells[c][p];
    for (std::size_t g = 0; g < n; ++g) s.predicted += cm.cells[g][c];
    s.precision_undefined = s.predicted == 0;
    s.recall_undefined = s.support == 0;
    const double p = s.predicted ? static_cast<double>(tp) / static_cast<double>(s.predicted) : 0.0;
    const double r = s.support ? static_cast<double>(tp) / static_cast<double>(s.support) : 0.0;
    s.precision = 100.0 * p;
    s.recall = 100.0 * r;
    s.f1 = p + r > 0.0 ? 100.0 * 2.0 * p * r / (p + r) : 0.0;
    out.zero_division = out.zero_division || s.precision_undefined || s.recall_undefined;
    out.precision += s.precision;
    out.recall += s.recall;
    out.f1 += s.f1;
  }
  if (n > 0) {
    out.precision /= static_cast<double>(n);
    out.recall /= static_cast<double>(n);
    out.f1 /= static_cast<double>(n);
  }
  return out;
}

inline Prf macro_prf(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& golds,
                     std::size_t n_labels) {
  if (golds.empty()) throw ContractError("macro_prf needs at least one instance");
  return macro_prf(confusion(predictions, golds, n_labels));
}

inline double accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& golds) {
  if (predictions.size() != golds.size()) throw ContractError("predictions and golds differ in length");
  if (golds.empty()) throw ContractError("accuracy needs at least one instance");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) correct += predictions[i] == golds[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(golds.size());
}

// ---------------------------------------------------------------------------
// Context-length buckets
// ---------------------------------------------------------------------------

struct ScoredRecord {
  std::size_t prediction = kAbstain;
  std::size_t gold = 0;
  std::size_t context_length = 0;
};

struct BucketScore {
  double f1 = 0.0;
  std::size_t count = 0;
  ConfusionMatrix confusion;
};

// Keyed by exact context length; lengths >= `cap` share the bucket `cap`.
// Empty buckets are absent.
inline std::map<std::size_t, BucketScore> bucket_by_context_length(const std::vector<ScoredRecord>& records,
                                                                   std::size_t n_labels, std::size_t cap = 10) {
  std::map<std::size_t, BucketScore> buckets;
  for (const auto& r : records) {
    const std::size_t key = std::min(r.context_length, cap);
    auto [it, inserted] = buckets.try_emplace(key, BucketScore{0.0, 0, ConfusionMatrix(n_labels)});
    it->second.confusion.add(r.gold, r.prediction);
    it->second.count++;
  }
  for (auto& [_, b] : buckets) b.f1 = macro_prf(b.confusion).f1;
  return buckets;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct MetricsReport {
  std::vector<std::string> labels;
  double precision = 0.0;  // percent, two decimals
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  std::vector<ClassScore> per_class;
  std::size_t instances = 0;
  bool zero_division = false;
  std::size_t bucket_cap = 10;
  std::map<std::size_t, BucketScore> buckets;
  std::optional<double> abstain_rate;
};

inline MetricsReport make_report(const std::vector<ScoredRecord>& records, const std::vector<std::string>& labels,
                                 std::size_t bucket_cap = 10, bool track_abstain = false) {
  if (records.empty()) throw ContractError("cannot build a metrics report from zero records");
  std::vector<std::size_t> preds, golds;
  std::size_t abstained = 0;
  for (const auto& r : records) {
    preds.push_back(r.prediction);
    golds.push_back(r.gold);
    abstained += r.prediction == kAbstain;
  }
  const auto prf = macro_prf(preds, golds, labels.size());
  MetricsReport rep;
  rep.labels = labels;
  rep.precision = round2(prf.precision);
  rep.recall = round2(prf.recall);
  rep.f1 = round2(prf.f1);
  rep.accuracy = round2(accuracy(preds, golds));
  rep.per_class = prf.per_class;
  for (auto& c : rep.per_class) {
    c.precision = round2(c.precision);
    c.recall = round2(c.recall);
    c.f1 = round2(c.f1);
  }
  rep.instances = records.size();
  rep.zero_division = prf.zero_division;
  rep.bucket_cap = bucket_cap;
  rep.buckets = bucket_by_context_length(records, labels.size(), bucket_cap);
  for (auto& [_, b] : rep.buckets) b.f1 = round2(b.f1);
  if (track_abstain)
    rep.abstain_rate = round2(100.0 * static_cast<double>(abstained) / static_cast<double>(records.size()));
  return rep;
}

inline json to_json(const MetricsReport& r) {
  json j;
  j["instances"] = r.instances;
  j["macro"] = {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
  j["accuracy"] = r.accuracy;
  j["zero_division"] = r.zero_division;
  json per = json::object();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& s = r.per_class[c];
    per[r.labels[c]] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
                        {"support", s.support},     {"predicted", s.predicted}};
  }
  j["per_class"] = per;
  json buckets = json::object();
  for (const auto& [len, b] : r.buckets) {
    const std::string key = len >= r.bucket_cap ? ">=" + std::to_string(r.bucket_cap) : std::to_string(len);
    buckets[key] = {{"f1", b.f1}, {"count", b.count}};
  }
  j["context_length_buckets"] = buckets;
  if (r.abstain_rate) j["abstain_rate"] = *r.abstain_rate;
  return j;
}

// ---------------------------------------------------------------------------
// Paired t-test
// ---------------------------------------------------------------------------

namespace detail {

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm,
                               double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 50);
}

}  // namespace detail

inline double student_t_pdf(double x, double dof) {
  const double log_norm = std::lgamma((dof + 1.0) / 2.0) - std::lgamma(dof / 2.0) - 0.5 * std::log(dof * M_PI);
  return std::exp(log_norm - (dof + 1.0) / 2.0 * std::log1p(x * x / dof));
}

// P(|T| >= |t|) by integrating the density over [0, |t|].
inline double student_t_two_sided_p(double t, double dof) {
  const double x = std::abs(t);
  if (x == 0.0) return 1.0;
  // Substituting x = tan(u) keeps the integrand bounded for large |t|.
  const auto integrand = [dof](double u) {
    const double c = std::cos(u);
    return student_t_pdf(std::tan(u), dof) / (c * c);
  };
  const double mass = detail::integrate(integrand, 0.0, std::atan(x), 1e-10);
  return std::clamp(1.0 - 2.0 * mass, 0.0, 1.0);
}

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  std::size_t dof = 0;
};

inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractError("paired samples differ in length");
  if (a.size() < 2) throw ContractError("paired t-test needs at least two pairs");
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  if (sd == 0.0) throw DegenerateSampleError("paired differences have zero variance");
  TTestResult r;
  r.t = mean / (sd / std::sqrt(n));
  r.dof = a.size() - 1;
  r.p = student_t_two_sided_p(r.t, static_cast<double>(r.dof));
  return r;
}

// ---------------------------------------------------------------------------
// Rater agreement
// ---------------------------------------------------------------------------

// items x raters; each cell is a category code.
struct RatingMatrix {
  std::vector<std::vector<int>> ratings;

  std::size_t items() const noexcept { return ratings.size(); }
  std::size_t raters() const { return ratings.empty() ? 0 : ratings.front().size(); }

  std::vector<int> categories() const {
    std::vector<int> cats;
    for (const auto& row : ratings)
      for (int v : row) cats.push_back(v);
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    return cats;
  }

  void validate() const {
    if (ratings.empty()) throw ContractError("rating matrix has no items");
    for (const auto& row : ratings)
      if (row.size() != raters()) throw ContractError("every item needs the same number of ratings");
  }
};

inline double fleiss_kappa(const RatingMatrix& m) {
  m.validate();
  const auto cats = m.categories();
  const auto n = static_cast<double>(m.raters());
  const auto N = static_cast<double>(m.items());
  if (m.raters() < 2) throw ContractError("fleiss kappa needs at least two raters");
  std::vector<double> col(cats.size(), 0.0);
  double p_bar = 0.0;
  for (const auto& row : m.ratings) {
    double agree = 0.0;
    for (std::size_t c = 0; c < cats.size(); ++c) {
      const auto k = static_cast<double>(std::count(row.begin(), row.end(), cats[c]));
      col[c] += k;
      agree += k * (k - 1.0);
    }
    p_bar += agree / (n * (n - 1.0));
  }
  p_bar /= N;
  double p_e = 0.0;
  for (double c : col) {
    const double p = c / (N * n);
    p_e += p * p;
  }
  if (std::abs(1.0 - p_e) < 1e-12) throw UndefinedKappaError("expected agreement is 1; kappa is undefined");
  return (p_bar - p_e) / (1.0 - p_e);
}

// Mean over items of (agreeing rater pairs / all rater pairs).
inline double pairwise_agreement(const RatingMatrix& m) {
  m.validate();
  const std::size_t r = m.raters();
  if (r < 2) throw ContractError("pairwise agreement needs at least two raters");
  const double pairs = static_cast<double>(r * (r - 1) / 2);
  double sum = 0.0;
  for (const auto& row : m.ratings) {
    std::size_t agree = 0;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = i + 1; j < r; ++j) agree += row[i] == row[j];
    sum += static_cast<double>(agree) / pairs;
  }
  return sum / static_cast<double>(m.items());
}

// Modal category; nullopt when two or more categories share the top count.
inline std::optional<int> majority_vote(const std::vector<int>& row) {
  std::map<int, std::size_t> counts;
  for (int v : row) counts[v]++;
  std::optional<int> best;
  std::size_t best_count = 0;
  bool tie = false;
  for (const auto& [cat, c] : counts) {
    if (c > best_count) {
      best = cat;
      best_count = c;
      tie = false;
    } else if (c == best_count) {
      tie = true;
    }
  }
  if (tie) return std::nullopt;
  return best;
}

// ---------------------------------------------------------------------------
// Ratings CSV
// ---------------------------------------------------------------------------

namespace detail {

// Comma-separated fields; double quotes group and "" escapes a quote.
inline std::vector<std::string> csv_fields(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw ParseError("unterminated quote", 0);
  for (auto& f : out) f = std::string(trim(f));
  return out;
}

}  // namespace detail

// One matrix per aspect; items sorted by id, each row in annotator-id order.
// Every item of an aspect must carry the same number of ratings.
inline std::map<std::string, RatingMatrix> parse_ratings_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("ratings file is empty", 1);
  const auto header = detail::csv_fields(lines[0]);
  const std::vector<std::string> expected{"item_id", "annotator_id", "aspect", "score"};
  if (header != expected) throw ParseError("ratings header must be item_id,annotator_id,aspect,score", 1);
  std::map<std::string, std::map<std::string, std::map<std::string, int>>> cells;  // aspect -> item -> annotator
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    std::vector<std::string> f;
    try {
      f = detail::csv_fields(lines[i]);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), i + 1);
    }
    if (f.size() != 4) throw ParseError("expected 4 fields, got " + std::to_string(f.size()), i + 1);
    int score = 0;
    try {
      std::size_t used = 0;
      score = std::stoi(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ParseError("score '" + f[3] + "' is not an integer", i + 1);
    }
    if (!cells[f[2]][f[0]].emplace(f[1], score).second)
      throw ParseError("duplicate rating for item '" + f[0] + "' by '" + f[1] + "'", i + 1);
  }
  std::map<std::string, RatingMatrix> out;
  for (const auto& [aspect, items] : cells) {
    RatingMatrix m;
    for (const auto& [item, by_annotator] : items) {
      std::vector<int> row;
      for (const auto& [_, v] : by_annotator) row.push_back(v);
      if (!m.ratings.empty() && row.size() != m.ratings.front().size())
        throw ContractError("aspect '" + aspect + "': item '" + item + "' has " + std::to_string(row.size()) +
                            " ratings, expected " + std::to_string(m.ratings.front().size()));
      m.ratings.push_back(std::move(row));
    }
    out.emplace(aspect, std::move(m));
  }
  return out;
}

inline std::map<std::string, RatingMatrix> load_ratings_csv(const std::filesystem::path& path) {
  return parse_ratings_csv(read_file(path));
}

}  // namespace argpersona
