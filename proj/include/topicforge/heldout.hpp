#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "topicforge/corpus.hpp"
#include "topicforge/error.hpp"
#include "topicforge/io.hpp"
#include "topicforge/matrix.hpp"
#include "topicforge/rng.hpp"

namespace topicforge {

struct HeldoutConfig {
  std::int32_t particles = 30;
  std::uint64_t seed = 0;
  bool resample_previous = true;

  void validate() const {
    require(particles >= 1, Errc::ConfigError, "heldout: particles must be >= 1");
  }
};

struct LtrDocStats {
  double loglik = 0.0;
  std::vector<double> position_mean;  // mean over particles of the per-token predictive
  std::vector<double> position_var;   // particle variance of the same
  std::int32_t particles = 0;

  /// Monte-Carlo standard error of loglik (delta method, positions independent).
  double mc_se() const {
    double s = 0.0;
    for (std::size_t n = 0; n < position_mean.size(); ++n) {
      const double m = position_mean[n];
      if (m > 0.0 && particles > 0)
        s += position_var[n] / (m * m * static_cast<double>(particles));
    }
    return std::sqrt(s);
  }
};

namespace detail {

inline void check_model(const Matrix& phi, std::span<const double> alpha) {
  require(phi.rows() >= 1, Errc::ModelError, "heldout: empty topic matrix");
  require(alpha.size() == phi.rows(), Errc::ModelError, "heldout: alpha/K mismatch");
  for (double a : alpha) require(a > 0.0, Errc::ModelError, "heldout: alpha entries must be > 0");
  require(phi.row_stochastic(1e-6), Errc::ModelError, "heldout: phi rows are not normalized");
}

inline void check_doc(std::span<const std::int32_t> doc, const Matrix& phi) {
  for (std::int32_t w : doc) {
    require(w >= 0 && static_cast<std::size_t>(w) < phi.cols(), Errc::OovError,
            "heldout: token outside the vocabulary");
  }
}

// Left-to-right sequential estimator (particle form). Each particle walks the
// document once; before scoring position n it optionally resamples the topic
// of every earlier position from its running doc-topic counts, then
// accumulates the predictive probability of token n and samples its topic.
inline LtrDocStats left_to_right_unchecked(std::span<const std::int32_t> doc, const Matrix& phi,
                                           std::span<const double> alpha,
                                           const HeldoutConfig& cfg, SplitMix64 rng) {
  const auto K = static_cast<std::int32_t>(phi.rows());
  const std::size_t len = doc.size();
  LtrDocStats stats;
  stats.particles = cfg.particles;
  stats.position_mean.assign(len, 0.0);
  stats.position_var.assign(len, 0.0);
  if (len == 0) return stats;

  double alpha_sum = 0.0;
  for (double a : alpha) alpha_sum += a;

  if (K == 1) {
    // The mixture collapses; the estimator is exact for any particle count.
    for (std::size_t n = 0; n < len; ++n) {
      const double p = phi(0, doc[n]);
      stats.position_mean[n] = p;
      stats.loglik += std::log(p);
    }
    return stats;
  }

  std::vector<double> sum_p(len, 0.0), sum_p2(len, 0.0);
  std::vector<std::int32_t> assign(len, 0);
  std::vector<std::int32_t> counts(K, 0);
  std::vector<double> weights(K);

  for (std::int32_t r = 0; r < cfg.particles; ++r) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t n = 0; n < len; ++n) {
      if (cfg.resample_previous) {
        for (std::size_t p = 0; p < n; ++p) {
          const std::int32_t old_k = assign[p];
          --counts[old_k];
          const std::int32_t w = doc[p];
          for (std::int32_t k = 0; k < K; ++k)
            weights[k] = (counts[k] + alpha[k]) * phi(k, w);
          const auto new_k = static_cast<std::int32_t>(rng.next_discrete(weights));
          assign[p] = new_k;
          ++counts[new_k];
        }
      }
      const std::int32_t w = doc[n];
      double pred = 0.0;
      for (std::int32_t k = 0; k < K; ++k) {
        weights[k] = (counts[k] + alpha[k]) * phi(k, w);
        pred += weights[k];
      }
      pred /= (static_cast<double>(n) + alpha_sum);
      sum_p[n] += pred;
      sum_p2[n] += pred * pred;
      const auto k_n = static_cast<std::int32_t>(rng.next_discrete(weights));
      assign[n] = k_n;
      ++counts[k_n];
    }
  }

  const double R = cfg.particles;
  for (std::size_t n = 0; n < len; ++n) {
    const double mean = sum_p[n] / R;
    stats.position_mean[n] = mean;
    stats.position_var[n] = R > 1 ? std::max(0.0, (sum_p2[n] - R * mean * mean) / (R - 1)) : 0.0;
    stats.loglik += std::log(mean);
  }
  return stats;
}

}  // namespace detail

inline LtrDocStats left_to_right_doc_stats(std::span<const std::int32_t> doc, const Matrix& phi,
                                           std::span<const double> alpha,
                                           const HeldoutConfig& cfg) {
  cfg.validate();
  detail::check_model(phi, alpha);
  detail::check_doc(doc, phi);
  return detail::left_to_right_unchecked(doc, phi, alpha, cfg, SplitMix64(cfg.seed));
}

/// Document log-likelihood in nats under fixed topics, left-to-right estimate.
inline double left_to_right_doc(std::span<const std::int32_t> doc, const Matrix& phi,
                                std::span<const double> alpha, const HeldoutConfig& cfg) {
  return left_to_right_doc_stats(doc, phi, alpha, cfg).loglik;
}

// ---------------------------------------------------------------------------
// Exact marginal by enumerating topic sequences with Polya weights:
// p(z_0=k) = alpha_k / alpha_sum, p(z_n=k | z_<n) = (alpha_k + c_k) / (alpha_sum + n).
// Test oracle for small documents; guarded at K^len <= 1e6.

inline double exact_doc_loglik(std::span<const std::int32_t> doc, const Matrix& phi,
                               std::span<const double> alpha) {
  detail::check_model(phi, alpha);
  detail::check_doc(doc, phi);
  const auto K = static_cast<std::int32_t>(phi.rows());
  const std::size_t len = doc.size();
  if (len == 0) return 0.0;
  double states = 1.0;
  for (std::size_t n = 0; n < len; ++n) {
    states *= K;
    require(states <= 1e6, Errc::Intractable, "exact_doc_loglik: K^len exceeds 1e6");
  }
  double alpha_sum = 0.0;
  for (double a : alpha) alpha_sum += a;

  std::vector<std::int32_t> seq(len, 0);
  std::vector<std::int32_t> counts(K, 0);
  double total = 0.0;
  // Depth-first over assignments, carrying the running prefix probability.
  std::vector<double> prefix(len + 1, 1.0);
  std::size_t n = 0;
  for (;;) {
    if (prefix[n] > 0.0 && n < len) {
      const std::int32_t k = seq[n];
      const double p_z = (alpha[k] + counts[k]) / (alpha_sum + static_cast<double>(n));
      prefix[n + 1] = prefix[n] * p_z * phi(k, doc[n]);
      ++counts[k];
      ++n;
      if (n < len) {
        seq[n] = 0;
        continue;
      }
    }
    if (n == len) total += prefix[n];
    // Backtrack to the next unexplored branch.
    for (;;) {
      if (n == 0) return std::log(total);
      --n;
      --counts[seq[n]];
      if (++seq[n] < K) break;
    }
  }
}

// ---------------------------------------------------------------------------
// Perplexity in the report's units: negative held-out log-likelihood per
// token, in nats. Each document is seeded from (seed, content hash), so
// neither evaluation order, parallel scheduling, nor the position of a
// document within the corpus can change its estimate.

inline std::uint64_t doc_seed(std::uint64_t base, std::span<const std::int32_t> doc) {
  const std::string_view bytes(reinterpret_cast<const char*>(doc.data()),
                               doc.size() * sizeof(std::int32_t));
  return mix_seed(base, fnv1a64(bytes));
}

struct PerplexityResult {
  double perplexity = 0.0;
  double se = 0.0;  // ratio-estimator standard error over documents
  std::int64_t tokens = 0;
  std::vector<double> doc_loglik;
};

inline PerplexityResult perplexity(const Corpus& test, const Matrix& phi,
                                   std::span<const double> alpha, const HeldoutConfig& cfg,
                                   int jobs = 1) {
  cfg.validate();
  require(!test.docs.empty(), Errc::EmptyCorpus, "perplexity: empty test corpus");
  detail::check_model(phi, alpha);
  require(static_cast<std::size_t>(test.V) <= phi.cols(), Errc::ModelError,
          "perplexity: corpus vocabulary exceeds model");

  const std::int64_t D = test.n_docs();
  PerplexityResult result;
  result.doc_loglik.assign(D, 0.0);

  const auto eval_range = [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t d = lo; d < hi; ++d) {
      detail::check_doc(test.docs[d], phi);
      SplitMix64 rng(doc_seed(cfg.seed, test.docs[d]));
      result.doc_loglik[d] =
          detail::left_to_right_unchecked(test.docs[d], phi, alpha, cfg, rng).loglik;
    }
  };
  if (jobs <= 1 || D < 2) {
    eval_range(0, D);
  } else {
    const int workers = static_cast<int>(std::min<std::int64_t>(jobs, D));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::atomic<std::int64_t> next{0};
    const std::int64_t block = std::max<std::int64_t>(1, D / (4 * workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::int64_t lo = next.fetch_add(block);
          if (lo >= D) return;
          eval_range(lo, std::min(D, lo + block));
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  // Totals accumulate over sorted per-document values so the result is
  // bit-identical under any permutation of the test documents.
  std::vector<std::pair<double, std::int64_t>> per_doc(D);
  for (std::int64_t d = 0; d < D; ++d)
    per_doc[d] = {result.doc_loglik[d], static_cast<std::int64_t>(test.docs[d].size())};
  std::sort(per_doc.begin(), per_doc.end());

  double total_ll = 0.0;
  for (const auto& [ll, _] : per_doc) total_ll += ll;
  result.tokens = test.N;
  result.perplexity = -total_ll / static_cast<double>(test.N);

  // Ratio-estimator variance: documents as sampling units, tokens as weights.
  if (D >= 2) {
    double ss = 0.0;
    for (const auto& [ll, n_d] : per_doc) {
      const double resid = -ll - result.perplexity * static_cast<double>(n_d);
      ss += resid * resid;
    }
    const double Dd = static_cast<double>(D);
    result.se = std::sqrt(ss * Dd / (Dd - 1.0)) / static_cast<double>(test.N);
  }
  return result;
}

}  // namespace topicforge
