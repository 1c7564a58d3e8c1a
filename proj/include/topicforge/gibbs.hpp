#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "topicforge/corpus.hpp"
#include "topicforge/error.hpp"
#include "topicforge/io.hpp"
#include "topicforge/matrix.hpp"
#include "topicforge/rng.hpp"

namespace topicforge {

struct HyperParams {
  std::int32_t K = 0;
  std::vector<double> alpha;  // K entries
  std::vector<double> beta;   // V entries
  double alpha_sum = 0.0;
  double beta_sum = 0.0;

  static HyperParams symmetric(std::int32_t K, std::int32_t V, double alpha_sum = 3.0,
                               double beta_v = 0.01) {
    require(K >= 1, Errc::ConfigError, "hyperparams: K must be >= 1");
    require(V >= 1, Errc::ConfigError, "hyperparams: V must be >= 1");
    require(alpha_sum > 0.0 && beta_v > 0.0, Errc::ConfigError,
            "hyperparams: concentrations must be positive");
    HyperParams hp;
    hp.K = K;
    hp.alpha.assign(K, alpha_sum / K);
    hp.beta.assign(V, beta_v);
    hp.alpha_sum = alpha_sum;
    hp.beta_sum = beta_v * V;
    return hp;
  }

  void validate(std::int32_t V) const {
    require(K >= 1, Errc::ConfigError, "hyperparams: K must be >= 1");
    require(static_cast<std::int32_t>(alpha.size()) == K, Errc::ConfigError,
            "hyperparams: alpha must have K entries");
    require(static_cast<std::int32_t>(beta.size()) == V, Errc::ConfigError,
            "hyperparams: beta must have V entries");
    for (double a : alpha) require(a > 0.0, Errc::ConfigError, "hyperparams: alpha <= 0");
    for (double b : beta) require(b > 0.0, Errc::ConfigError, "hyperparams: beta <= 0");
  }
};

// Topic assignments plus the count matrices that make the collapsed
// conditional cheap. word_topic is stored word-major so the K weights for one
// token sit contiguously.
struct SamplerState {
  std::int32_t K = 0;
  std::int32_t V = 0;
  std::vector<std::int32_t> words;       // flat tokens, doc-major
  std::vector<std::size_t> doc_offset;   // D+1 prefix offsets into words/z
  std::vector<std::int32_t> z;           // per-token topic assignment
  std::vector<std::int32_t> word_topic;  // V*K, [v*K + k] = N_{k,v}
  std::vector<std::int32_t> doc_topic;   // D*K, [d*K + k] = N_{d,k}
  std::vector<std::int32_t> topic_total; // K, N_k
  std::vector<std::int32_t> doc_total;   // D, N_d
  SplitMix64 rng;
  std::int64_t iteration = 0;

  std::int64_t n_docs() const noexcept {
    return static_cast<std::int64_t>(doc_total.size());
  }
  std::int64_t n_tokens() const noexcept { return static_cast<std::int64_t>(words.size()); }

  std::int32_t n_kv(std::int32_t k, std::int32_t v) const noexcept {
    return word_topic[static_cast<std::size_t>(v) * K + k];
  }
  std::int32_t n_dk(std::int64_t d, std::int32_t k) const noexcept {
    return doc_topic[static_cast<std::size_t>(d) * K + k];
  }
  std::int32_t n_k(std::int32_t k) const noexcept { return topic_total[k]; }
  std::int32_t n_d(std::int64_t d) const noexcept { return doc_total[d]; }

  std::span<const std::int32_t> doc_words(std::int64_t d) const noexcept {
    return {words.data() + doc_offset[d], doc_offset[d + 1] - doc_offset[d]};
  }
  std::span<const std::int32_t> doc_z(std::int64_t d) const noexcept {
    return {z.data() + doc_offset[d], doc_offset[d + 1] - doc_offset[d]};
  }
};

struct PosteriorSample {
  Matrix phi;                   // K x V
  std::optional<Matrix> theta;  // D x K when recorded
  std::vector<double> alpha;
  std::int32_t chain_id = 0;
  std::int64_t iteration = 0;
};

struct ChainConfig {
  std::int64_t iterations = 50000;
  std::int64_t burn_in = 30000;
  std::int64_t lag = 5000;
  std::int32_t chains = 4;
  std::uint64_t seed = 0;
  std::int64_t loglik_every = 10;
  bool store_theta = false;

  void validate() const {
    require(iterations >= 1, Errc::ConfigError, "chain config: iterations must be >= 1");
    require(burn_in >= 0 && burn_in < iterations, Errc::ConfigError,
            "chain config: burn_in must be in [0, iterations)");
    require(lag >= 1, Errc::ConfigError, "chain config: lag must be >= 1");
    require((iterations - burn_in) / lag >= 1, Errc::ConfigError,
            "chain config: window too short to record a post-burn-in sample");
    require(chains >= 1, Errc::ConfigError, "chain config: chains must be >= 1");
    require(loglik_every >= 1, Errc::ConfigError, "chain config: loglik_every must be >= 1");
  }
};

struct TracePoint {
  std::int64_t iteration = 0;
  double loglik = 0.0;
};

struct ChainResult {
  std::int32_t chain_id = 0;
  std::vector<PosteriorSample> samples;
  std::vector<TracePoint> trace;
};

// ---------------------------------------------------------------------------

inline SamplerState init_state(const Corpus& corpus, const HyperParams& hp, std::uint64_t seed) {
  require(!corpus.docs.empty(), Errc::EmptyCorpus, "init_state: empty corpus");
  require(hp.K >= 1, Errc::ConfigError, "init_state: K must be >= 1");
  hp.validate(corpus.V);

  SamplerState st;
  st.K = hp.K;
  st.V = corpus.V;
  st.rng = SplitMix64(seed);
  const std::int64_t D = corpus.n_docs();
  st.doc_offset.resize(D + 1);
  st.doc_offset[0] = 0;
  for (std::int64_t d = 0; d < D; ++d)
    st.doc_offset[d + 1] = st.doc_offset[d] + corpus.docs[d].size();
  st.words.reserve(corpus.N);
  for (const auto& doc : corpus.docs) st.words.insert(st.words.end(), doc.begin(), doc.end());

  st.z.resize(st.words.size());
  st.word_topic.assign(static_cast<std::size_t>(st.V) * st.K, 0);
  st.doc_topic.assign(static_cast<std::size_t>(D) * st.K, 0);
  st.topic_total.assign(st.K, 0);
  st.doc_total.assign(D, 0);

  for (std::int64_t d = 0; d < D; ++d) {
    for (std::size_t i = st.doc_offset[d]; i < st.doc_offset[d + 1]; ++i) {
      const auto k = static_cast<std::int32_t>(st.rng.next_below(st.K));
      const std::int32_t v = st.words[i];
      st.z[i] = k;
      ++st.word_topic[static_cast<std::size_t>(v) * st.K + k];
      ++st.doc_topic[static_cast<std::size_t>(d) * st.K + k];
      ++st.topic_total[k];
      ++st.doc_total[d];
    }
  }
  return st;
}

// Unnormalized collapsed conditional for token i of document d. The counts
// must already exclude the token's current assignment; the document
// denominator is constant in k and omitted.
inline std::vector<double> full_conditional(const SamplerState& st, const HyperParams& hp,
                                            std::int64_t d, std::size_t i) {
  require(d >= 0 && d < st.n_docs(), Errc::ConfigError, "full_conditional: bad document index");
  require(i < st.doc_offset[d + 1] - st.doc_offset[d], Errc::ConfigError,
          "full_conditional: bad token index");
  const std::int32_t v = st.words[st.doc_offset[d] + i];
  std::vector<double> weights(st.K);
  const std::int32_t* wt = st.word_topic.data() + static_cast<std::size_t>(v) * st.K;
  const std::int32_t* dt = st.doc_topic.data() + static_cast<std::size_t>(d) * st.K;
  for (std::int32_t k = 0; k < st.K; ++k) {
    require(wt[k] >= 0 && dt[k] >= 0 && st.topic_total[k] >= 0, Errc::StateCorruption,
            "full_conditional: negative count");
    weights[k] = (wt[k] + hp.beta[v]) / (st.topic_total[k] + hp.beta_sum) * (dt[k] + hp.alpha[k]);
  }
  return weights;
}

// One full pass over all tokens in document-then-position order.
inline void gibbs_sweep(SamplerState& st, const HyperParams& hp) {
  std::vector<double> weights(st.K);
  const std::int32_t K = st.K;
  for (std::int64_t d = 0; d < st.n_docs(); ++d) {
    std::int32_t* dt = st.doc_topic.data() + static_cast<std::size_t>(d) * K;
    for (std::size_t i = st.doc_offset[d]; i < st.doc_offset[d + 1]; ++i) {
      const std::int32_t v = st.words[i];
      const std::int32_t old_k = st.z[i];
      std::int32_t* wt = st.word_topic.data() + static_cast<std::size_t>(v) * K;
      --wt[old_k];
      --st.topic_total[old_k];
      --dt[old_k];
      if (wt[old_k] < 0 || st.topic_total[old_k] < 0 || dt[old_k] < 0)
        fail(Errc::StateCorruption, "gibbs_sweep: negative count after decrement");
      double total = 0.0;
      for (std::int32_t k = 0; k < K; ++k) {
        const double w =
            (wt[k] + hp.beta[v]) / (st.topic_total[k] + hp.beta_sum) * (dt[k] + hp.alpha[k]);
        weights[k] = w;
        total += w;
      }
      const double u = st.rng.next_double() * total;
      std::int32_t new_k = K - 1;
      double acc = 0.0;
      for (std::int32_t k = 0; k + 1 < K; ++k) {
        acc += weights[k];
        if (u < acc) {
          new_k = k;
          break;
        }
      }
      st.z[i] = new_k;
      ++wt[new_k];
      ++st.topic_total[new_k];
      ++dt[new_k];
    }
  }
  ++st.iteration;
}

inline Matrix estimate_phi(const SamplerState& st, const HyperParams& hp) {
  Matrix phi(st.K, st.V);
  for (std::int32_t k = 0; k < st.K; ++k) {
    const double denom = st.topic_total[k] + hp.beta_sum;
    for (std::int32_t v = 0; v < st.V; ++v)
      phi(k, v) = (st.word_topic[static_cast<std::size_t>(v) * st.K + k] + hp.beta[v]) / denom;
  }
  return phi;
}

inline Matrix estimate_theta(const SamplerState& st, const HyperParams& hp) {
  const std::int64_t D = st.n_docs();
  Matrix theta(D, st.K);
  for (std::int64_t d = 0; d < D; ++d) {
    const double denom = st.doc_total[d] + hp.alpha_sum;
    for (std::int32_t k = 0; k < st.K; ++k)
      theta(d, k) = (st.doc_topic[static_cast<std::size_t>(d) * st.K + k] + hp.alpha[k]) / denom;
  }
  return theta;
}

/// log p(w, z | alpha, beta) in collapsed form; zero-count cells contribute
/// nothing and are skipped.
inline double collapsed_loglik(const SamplerState& st, const HyperParams& hp) {
  double ll = 0.0;
  double lg_alpha = 0.0;
  for (double a : hp.alpha) lg_alpha += std::lgamma(a);
  const double lg_alpha_sum = std::lgamma(hp.alpha_sum);
  for (std::int64_t d = 0; d < st.n_docs(); ++d) {
    ll += lg_alpha_sum - lg_alpha - std::lgamma(st.doc_total[d] + hp.alpha_sum);
    for (std::int32_t k = 0; k < st.K; ++k) {
      const std::int32_t c = st.doc_topic[static_cast<std::size_t>(d) * st.K + k];
      if (c > 0) ll += std::lgamma(c + hp.alpha[k]);
      else ll += std::lgamma(hp.alpha[k]);
    }
  }
  double lg_beta = 0.0;
  for (double b : hp.beta) lg_beta += std::lgamma(b);
  const double lg_beta_sum = std::lgamma(hp.beta_sum);
  for (std::int32_t k = 0; k < st.K; ++k) {
    ll += lg_beta_sum - lg_beta - std::lgamma(st.topic_total[k] + hp.beta_sum);
    double acc = lg_beta;
    for (std::int32_t v = 0; v < st.V; ++v) {
      const std::int32_t c = st.word_topic[static_cast<std::size_t>(v) * st.K + k];
      if (c > 0) acc += std::lgamma(c + hp.beta[v]) - std::lgamma(hp.beta[v]);
    }
    ll += acc;
  }
  return ll;
}

// ---------------------------------------------------------------------------
// Chain orchestration. Samples are recorded at burn_in, burn_in+lag, ...,
// iterations (inclusive); the trace is recorded at every loglik_every-th
// iteration starting from 0. Chain seed = base seed XOR chain id.

inline ChainResult run_chain(const Corpus& corpus, const HyperParams& hp, const ChainConfig& cfg,
                             std::int32_t chain_id) {
  cfg.validate();
  ChainResult result;
  result.chain_id = chain_id;
  SamplerState st = init_state(corpus, hp, cfg.seed ^ static_cast<std::uint64_t>(chain_id));
  for (std::int64_t t = 0;; ++t) {
    if (t % cfg.loglik_every == 0)
      result.trace.push_back({t, collapsed_loglik(st, hp)});
    if (t >= cfg.burn_in && (t - cfg.burn_in) % cfg.lag == 0) {
      PosteriorSample sample;
      sample.phi = estimate_phi(st, hp);
      if (cfg.store_theta) sample.theta = estimate_theta(st, hp);
      sample.alpha = hp.alpha;
      sample.chain_id = chain_id;
      sample.iteration = t;
      result.samples.push_back(std::move(sample));
    }
    if (t == cfg.iterations) break;
    gibbs_sweep(st, hp);
  }
  return result;
}

inline std::vector<ChainResult> run_chains(const Corpus& corpus, const HyperParams& hp,
                                           const ChainConfig& cfg, int jobs = 1) {
  cfg.validate();
  std::vector<ChainResult> results(cfg.chains);
  if (jobs <= 1 || cfg.chains == 1) {
    for (std::int32_t c = 0; c < cfg.chains; ++c) results[c] = run_chain(corpus, hp, cfg, c);
    return results;
  }
  std::atomic<std::int32_t> next{0};
  const int workers = std::min<int>(jobs, cfg.chains);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::int32_t c = next.fetch_add(1);
        if (c >= cfg.chains) return;
        results[c] = run_chain(corpus, hp, cfg, c);
      }
    });
  }
  for (auto& t : pool) t.join();
  return results;
}

// ---------------------------------------------------------------------------
// Run directory layout: samples/s<chain>_<iteration>.csv with a .json sidecar,
// trace_c<chain>.csv per chain.

inline std::string sample_stem(std::int32_t chain_id, std::int64_t iteration) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "s%03d_%09lld", chain_id, static_cast<long long>(iteration));
  return buf;
}

inline void save_sample(const std::filesystem::path& dir, const PosteriorSample& sample,
                        const HyperParams& hp, std::uint64_t seed) {
  const std::string stem = sample_stem(sample.chain_id, sample.iteration);
  write_text_file(dir / (stem + ".csv"), matrix_to_csv(sample.phi));
  json side;
  side["chain_id"] = sample.chain_id;
  side["iteration"] = sample.iteration;
  side["alpha"] = sample.alpha;
  side["beta"] = hp.beta;
  side["seed"] = seed;
  write_json_file(dir / (stem + ".json"), side);
  if (sample.theta) write_text_file(dir / (stem + "_theta.csv"), matrix_to_csv(*sample.theta));
}

inline void save_trace(const std::filesystem::path& path, const std::vector<TracePoint>& trace) {
  std::string out = "iteration,loglik\n";
  for (const auto& p : trace)
    out += std::to_string(p.iteration) + "," + format_g9(p.loglik) + "\n";
  write_text_file(path, out);
}

inline void save_run(const std::filesystem::path& run_dir, const std::vector<ChainResult>& chains,
                     const HyperParams& hp, const ChainConfig& cfg) {
  std::filesystem::create_directories(run_dir / "samples");
  for (const auto& chain : chains) {
    for (const auto& sample : chain.samples) save_sample(run_dir / "samples", sample, hp, cfg.seed);
    save_trace(run_dir / ("trace_c" + std::to_string(chain.chain_id) + ".csv"), chain.trace);
  }
}

inline std::vector<PosteriorSample> load_samples(const std::filesystem::path& run_dir) {
  const auto dir = run_dir / "samples";
  require(std::filesystem::is_directory(dir), Errc::IoError,
          "load_samples: missing directory " + dir.string());
  std::vector<std::filesystem::path> sidecars;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") sidecars.push_back(entry.path());
  }
  std::sort(sidecars.begin(), sidecars.end());
  require(!sidecars.empty(), Errc::EmptyInput, "load_samples: no samples in " + dir.string());
  std::vector<PosteriorSample> samples;
  for (const auto& sc : sidecars) {
    const json side = load_json_file(sc);
    PosteriorSample s;
    s.chain_id = side.at("chain_id").get<std::int32_t>();
    s.iteration = side.at("iteration").get<std::int64_t>();
    s.alpha = side.at("alpha").get<std::vector<double>>();
    auto csv = sc;
    csv.replace_extension(".csv");
    s.phi = matrix_from_csv(csv);
    samples.push_back(std::move(s));
  }
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) {
    return std::tie(a.chain_id, a.iteration) < std::tie(b.chain_id, b.iteration);
  });
  return samples;
}

inline std::vector<std::vector<TracePoint>> load_traces(const std::filesystem::path& run_dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("trace_c", 0) == 0 && entry.path().extension() == ".csv")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), Errc::EmptyInput, "load_traces: no trace files in " + run_dir.string());
  std::vector<std::vector<TracePoint>> traces;
  for (const auto& f : files) {
    const auto lines = read_lines(f);
    require(!lines.empty() && lines[0] == "iteration,loglik", Errc::FormatError,
            "trace csv: bad header in " + f.string());
    std::vector<TracePoint> trace;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto fields = split_csv_line(lines[i]);
      require(fields.size() == 2, Errc::FormatError, "trace csv: bad row in " + f.string());
      trace.push_back({parse_int(fields[0], "trace iteration"),
                       parse_double(fields[1], "trace loglik")});
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

}  // namespace topicforge
