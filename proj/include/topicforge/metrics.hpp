#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "topicforge/corpus.hpp"
#include "topicforge/error.hpp"
#include "topicforge/io.hpp"
#include "topicforge/matrix.hpp"

namespace topicforge {

struct TopicRef {
  std::int32_t sample_id = 0;
  std::int32_t topic_index = 0;

  friend bool operator==(const TopicRef&, const TopicRef&) = default;
};

// Interpretation bands used by the reporting layer.
inline constexpr double kNpmiIncoherentMax = 0.0;      // at or below: incoherent
inline constexpr double kNpmiHighlyCoherentMin = 0.5;  // at or above: highly coherent
inline constexpr double kCdHighlySimilarMax = 0.1;     // at or below: highly similar
inline constexpr double kCdHighlyDissimilarMin = 0.5;  // at or above: highly dissimilar
inline constexpr double kLowCredibilityMax = 0.5;      // at or below: rarely recurs
inline constexpr double kRhatAcceptableMax = 1.1;      // below: acceptable convergence

inline double vector_norm(std::span<const double> u) {
  double s = 0.0;
  for (double x : u) s += x * x;
  return std::sqrt(s);
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  require(u.size() == v.size(), Errc::ConfigError, "cosine: dimension mismatch");
  const double nu = vector_norm(u);
  const double nv = vector_norm(v);
  require(nu > 0.0 && nv > 0.0, Errc::DegenerateVector, "cosine: zero vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
  return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

inline double cosine_distance(std::span<const double> u, std::span<const double> v) {
  return 1.0 - cosine_similarity(u, v);
}

// ---------------------------------------------------------------------------
// NPMI over document-level co-occurrence probabilities. A never-co-occurring
// pair gets a pseudo joint count (default 1e-12 * D) so the score stays finite
// and lands at the -1 end after clamping.

inline double npmi_pair(std::int32_t i, std::int32_t j, const CoocStats& stats,
                        double eps_count = -1.0) {
  require(i >= 0 && i < stats.n_products() && j >= 0 && j < stats.n_products(),
          Errc::ConfigError, "npmi: product id out of range");
  require(i != j, Errc::ConfigError, "npmi: identical products");
  require(stats.D > 0, Errc::EmptyCorpus, "npmi: empty statistics");
  require(stats.df[i] > 0 && stats.df[j] > 0, Errc::UnseenProduct,
          "npmi: product never observed");
  const double D = static_cast<double>(stats.D);
  const double p_i = static_cast<double>(stats.df[i]) / D;
  const double p_j = static_cast<double>(stats.df[j]) / D;
  const auto joint = static_cast<double>(stats.pair_count(i, j));
  // Always co-occurring pair: P(i,j) = P(i) = P(j), the upper bound exactly.
  if (joint == D || (stats.pair_count(i, j) == stats.df[i] && stats.df[i] == stats.df[j]))
    return 1.0;
  const double eps = eps_count < 0.0 ? 1e-12 * D : eps_count;
  const double p_ij = std::max(joint, eps) / D;
  const double pmi = std::log(p_ij / (p_i * p_j));
  const double npmi = pmi / (-std::log(p_ij));
  return std::clamp(npmi, -1.0, 1.0);
}

/// Indices of the n largest entries, probability descending, id ascending on ties.
inline std::vector<std::int32_t> top_indices(std::span<const double> values, std::int32_t n) {
  std::vector<std::int32_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto cmp = [&](std::int32_t a, std::int32_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return a < b;
  };
  const std::size_t keep = std::min<std::size_t>(n, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(), cmp);
  idx.resize(keep);
  return idx;
}

/// Mean NPMI over all pairs of the top_n most probable products.
inline double topic_coherence(std::span<const double> topic, const CoocStats& stats,
                              std::int32_t top_n = 15) {
  require(top_n >= 2, Errc::ConfigError, "coherence: top_n must be >= 2");
  std::int64_t nonzero = 0;
  for (double p : topic)
    if (p > 0.0) ++nonzero;
  require(nonzero >= 2, Errc::DegenerateTopic, "coherence: fewer than 2 products with mass");
  const auto top = top_indices(topic, top_n);
  double sum = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t a = 0; a < top.size(); ++a) {
    for (std::size_t b = a + 1; b < top.size(); ++b) {
      sum += npmi_pair(top[a], top[b], stats);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

/// Minimum cosine distance from topic i to the other topics of the same draw.
inline double topic_distinctiveness(std::int32_t i, const Matrix& sample) {
  require(sample.rows() >= 2, Errc::UndefinedMetric,
          "distinctiveness: undefined for a single-topic sample");
  require(i >= 0 && static_cast<std::size_t>(i) < sample.rows(), Errc::ConfigError,
          "distinctiveness: topic index out of range");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < sample.rows(); ++j) {
    if (static_cast<std::int32_t>(j) == i) continue;
    best = std::min(best, cosine_distance(sample.row(i), sample.row(j)));
  }
  return best;
}

/// Average over the other draws of the best cosine match for this topic.
inline double topic_credibility(TopicRef t, const std::vector<Matrix>& samples) {
  require(samples.size() >= 2, Errc::UndefinedMetric,
          "credibility: undefined with a single sample");
  require(t.sample_id >= 0 && static_cast<std::size_t>(t.sample_id) < samples.size(),
          Errc::ConfigError, "credibility: sample id out of range");
  const Matrix& own = samples[t.sample_id];
  require(t.topic_index >= 0 && static_cast<std::size_t>(t.topic_index) < own.rows(),
          Errc::ConfigError, "credibility: topic index out of range");
  const auto topic = own.row(t.topic_index);
  double sum = 0.0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (static_cast<std::int32_t>(s) == t.sample_id) continue;
    double best = 0.0;
    for (std::size_t j = 0; j < samples[s].rows(); ++j)
      best = std::max(best, cosine_similarity(topic, samples[s].row(j)));
    sum += best;
  }
  return sum / static_cast<double>(samples.size() - 1);
}

// ---------------------------------------------------------------------------
// Greedy one-to-one alignment: repeatedly take the globally best unmatched
// pair by cosine similarity until one side runs out. Ties resolve to the
// lowest (a, b) index pair.

struct AlignedPair {
  std::int32_t a = 0;
  std::int32_t b = 0;
  double cs = 0.0;
};

inline std::vector<AlignedPair> greedy_align_cs(const Matrix& cs) {
  const std::size_t ka = cs.rows(), kb = cs.cols();
  std::vector<bool> used_a(ka, false), used_b(kb, false);
  std::vector<AlignedPair> matches;
  const std::size_t rounds = std::min(ka, kb);
  for (std::size_t r = 0; r < rounds; ++r) {
    std::int32_t best_i = -1, best_j = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < ka; ++i) {
      if (used_a[i]) continue;
      for (std::size_t j = 0; j < kb; ++j) {
        if (used_b[j]) continue;
        if (cs(i, j) > best) {
          best = cs(i, j);
          best_i = static_cast<std::int32_t>(i);
          best_j = static_cast<std::int32_t>(j);
        }
      }
    }
    used_a[best_i] = used_b[best_j] = true;
    matches.push_back({best_i, best_j, best});
  }
  return matches;
}

inline std::vector<AlignedPair> greedy_align(const Matrix& a, const Matrix& b) {
  require(a.rows() >= 1 && b.rows() >= 1, Errc::EmptyInput, "greedy_align: empty sample");
  Matrix cs(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) cs(i, j) = cosine_similarity(a.row(i), b.row(j));
  return greedy_align_cs(cs);
}

// ---------------------------------------------------------------------------
// Gelman-Rubin potential scale reduction on m traces. Traces are truncated to
// the shortest common length.

inline double rhat(const std::vector<std::vector<double>>& traces) {
  require(traces.size() >= 2, Errc::ConfigError, "rhat: need at least 2 chains");
  std::size_t n = traces[0].size();
  for (const auto& t : traces) n = std::min(n, t.size());
  require(n >= 2, Errc::ConfigError, "rhat: need at least 2 points per chain");
  const double m = static_cast<double>(traces.size());
  const double nd = static_cast<double>(n);

  std::vector<double> means;
  double w = 0.0;
  for (const auto& t : traces) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += t[i];
    mean /= nd;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (t[i] - mean) * (t[i] - mean);
    var /= (nd - 1.0);
    means.push_back(mean);
    w += var;
  }
  w /= m;
  require(w > 0.0, Errc::DegenerateTrace, "rhat: zero within-chain variance");

  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= m;
  double b_over_n = 0.0;
  for (double mu : means) b_over_n += (mu - grand) * (mu - grand);
  b_over_n /= (m - 1.0);

  const double var_hat = (nd - 1.0) / nd * w + b_over_n;
  return std::sqrt(var_hat / w);
}

// ---------------------------------------------------------------------------
// Per-topic quality report in the shape used by the result tables: NPMI,
// minimum cosine distance, credibility per topic, plus model perplexity.

inline double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Standard error of the mean; zero for a single observation.
inline double se_of(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  const double mu = mean_of(xs);
  double var = 0.0;
  for (double x : xs) var += (x - mu) * (x - mu);
  var /= static_cast<double>(n - 1);
  return std::sqrt(var / static_cast<double>(n));
}

struct EvalReport {
  std::int32_t n_topics = 0;
  std::vector<double> npmi;         // per topic
  std::vector<double> cd_min;       // empty when undefined (single topic)
  std::vector<double> credibility;  // empty when no reference draws exist
  double perplexity = std::numeric_limits<double>::quiet_NaN();
  double perplexity_se = std::numeric_limits<double>::quiet_NaN();

  std::optional<double> npmi_mean() const {
    return npmi.empty() ? std::nullopt : std::optional(mean_of(npmi));
  }
  std::optional<double> cd_min_mean() const {
    return cd_min.empty() ? std::nullopt : std::optional(mean_of(cd_min));
  }
  std::optional<double> credibility_mean() const {
    return credibility.empty() ? std::nullopt : std::optional(mean_of(credibility));
  }
};

/// Topic-level quality of one posterior draw against the pool of draws.
inline EvalReport evaluate_sample(std::int32_t sample_id, const std::vector<Matrix>& samples,
                                  const CoocStats& stats, std::int32_t top_n = 15) {
  require(sample_id >= 0 && static_cast<std::size_t>(sample_id) < samples.size(),
          Errc::ConfigError, "evaluate_sample: sample id out of range");
  const Matrix& phi = samples[sample_id];
  EvalReport report;
  report.n_topics = static_cast<std::int32_t>(phi.rows());
  for (std::size_t i = 0; i < phi.rows(); ++i) {
    report.npmi.push_back(topic_coherence(phi.row(i), stats, top_n));
    if (phi.rows() >= 2)
      report.cd_min.push_back(topic_distinctiveness(static_cast<std::int32_t>(i), phi));
    if (samples.size() >= 2)
      report.credibility.push_back(
          topic_credibility({sample_id, static_cast<std::int32_t>(i)}, samples));
  }
  return report;
}

/// Topic counts falling into the interpretation bands.
inline json band_counts(const EvalReport& report) {
  json j;
  if (!report.npmi.empty()) {
    std::int64_t incoherent = 0, highly_coherent = 0;
    for (double x : report.npmi) {
      if (x <= kNpmiIncoherentMax) ++incoherent;
      if (x >= kNpmiHighlyCoherentMin) ++highly_coherent;
    }
    j["npmi_incoherent"] = incoherent;
    j["npmi_highly_coherent"] = highly_coherent;
  }
  if (!report.credibility.empty()) {
    std::int64_t low = 0;
    for (double x : report.credibility)
      if (x <= kLowCredibilityMax) ++low;
    j["credibility_low"] = low;
  }
  return j;
}

inline void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::string out = "topic_index,npmi,cd_min,credibility\n";
  for (std::int32_t i = 0; i < report.n_topics; ++i) {
    out += std::to_string(i);
    out += ',' + format_g9(report.npmi[i]);
    out += ',';
    out += report.cd_min.empty() ? "nan" : format_g9(report.cd_min[i]);
    out += ',';
    out += report.credibility.empty() ? "nan" : format_g9(report.credibility[i]);
    out += '\n';
  }
  write_text_file(path, out);
}

}  // namespace topicforge
