#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <queue>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "topicforge/corpus.hpp"
#include "topicforge/error.hpp"
#include "topicforge/gibbs.hpp"
#include "topicforge/heldout.hpp"
#include "topicforge/io.hpp"
#include "topicforge/matrix.hpp"
#include "topicforge/metrics.hpp"

namespace topicforge {

struct PoolEntry {
  TopicRef ref;
  std::vector<double> topic;  // normalized V-vector
};

struct TopicPool {
  std::vector<PoolEntry> entries;  // sample-major, topic order preserved
  std::int32_t S = 0;
  std::int32_t K_per_sample = 0;
  std::int32_t V = 0;
};

/// Flattens posterior draws into a bag of topics with provenance.
inline TopicPool pool_topics(const std::vector<PosteriorSample>& samples) {
  require(!samples.empty(), Errc::EmptyInput, "pool_topics: no samples");
  TopicPool pool;
  pool.S = static_cast<std::int32_t>(samples.size());
  pool.K_per_sample = static_cast<std::int32_t>(samples.front().phi.rows());
  pool.V = static_cast<std::int32_t>(samples.front().phi.cols());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const Matrix& phi = samples[s].phi;
    require(static_cast<std::int32_t>(phi.cols()) == pool.V, Errc::ConfigError,
            "pool_topics: vocabulary size differs across samples");
    for (std::size_t k = 0; k < phi.rows(); ++k) {
      PoolEntry e;
      e.ref = {static_cast<std::int32_t>(s), static_cast<std::int32_t>(k)};
      e.topic.assign(phi.row(k).begin(), phi.row(k).end());
      pool.entries.push_back(std::move(e));
    }
  }
  return pool;
}

struct TopicCluster {
  std::vector<std::int32_t> members;  // pool entry ids, ascending
  std::vector<TopicRef> refs;         // provenance of the members
  std::vector<double> centroid;       // arithmetic mean of member topics
  std::int32_t size = 0;              // recurrence
};

enum class ClusterMode { Constrained, WithinSample };

inline const char* cluster_mode_name(ClusterMode m) {
  return m == ClusterMode::Constrained ? "constrained" : "within-sample";
}

struct ClusteredModel {
  std::vector<TopicCluster> clusters;
  double threshold = 0.0;
  std::int32_t min_size = 1;
  ClusterMode mode = ClusterMode::Constrained;
  std::int32_t S = 0;
  std::int32_t V = 0;

  std::int32_t n_clusters() const noexcept { return static_cast<std::int32_t>(clusters.size()); }

  Matrix centroid_matrix() const {
    require(!clusters.empty(), Errc::EmptyModel, "clustered model has no clusters");
    Matrix m(clusters.size(), V);
    for (std::size_t c = 0; c < clusters.size(); ++c)
      for (std::int32_t v = 0; v < V; ++v) m(c, v) = clusters[c].centroid[v];
    return m;
  }
};

/// Arithmetic mean of the member topics; a mean of stochastic vectors, so it
/// is itself stochastic up to rounding.
inline std::vector<double> clustered_topic(const TopicPool& pool,
                                           const std::vector<std::int32_t>& members) {
  require(!members.empty(), Errc::EmptyInput, "clustered_topic: empty cluster");
  std::vector<double> centroid(pool.V, 0.0);
  for (std::int32_t e : members)
    for (std::int32_t v = 0; v < pool.V; ++v) centroid[v] += pool.entries[e].topic[v];
  for (double& x : centroid) x /= static_cast<double>(members.size());
  return centroid;
}

namespace detail {

// Pairwise cosine distances over pool entries, parallel over rows.
inline std::vector<double> pairwise_cd(const TopicPool& pool, int jobs) {
  const std::size_t P = pool.entries.size();
  std::vector<double> norm(P);
  for (std::size_t i = 0; i < P; ++i) {
    norm[i] = vector_norm(pool.entries[i].topic);
    require(norm[i] > 0.0, Errc::DegenerateVector, "ahc: zero topic vector");
  }
  std::vector<double> dist(P * (P - 1) / 2);
  const auto at = [P](std::size_t i, std::size_t j) {
    // packed upper triangle, i < j
    return i * (2 * P - i - 1) / 2 + (j - i - 1);
  };
  const auto fill_rows = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& u = pool.entries[i].topic;
      for (std::size_t j = i + 1; j < P; ++j) {
        const auto& v = pool.entries[j].topic;
        double dot = 0.0;
        for (std::size_t x = 0; x < u.size(); ++x) dot += u[x] * v[x];
        dist[at(i, j)] = 1.0 - dot / (norm[i] * norm[j]);
      }
    }
  };
  if (jobs <= 1 || P < 64) {
    fill_rows(0, P);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool_threads;
    const int workers = std::min<int>(jobs, static_cast<int>(P));
    for (int w = 0; w < workers; ++w) {
      pool_threads.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(8);
          if (i >= P) return;
          fill_rows(i, std::min(P, i + 8));
        }
      });
    }
    for (auto& t : pool_threads) t.join();
  }
  return dist;
}

}  // namespace detail

// Agglomerative clustering with average linkage (mean pairwise cosine
// distance, maintained by the Lance-Williams update). Only pairs strictly
// below the threshold merge, and in constrained mode only clusters whose
// sample sets are disjoint are eligible. Eligibility is re-checked as
// clusters grow; ties resolve to the lowest (cluster id, cluster id) pair,
// where a merged cluster keeps the smaller id.
inline std::vector<TopicCluster> constrained_ahc(const TopicPool& pool, double threshold,
                                                 bool allow_within_sample = false, int jobs = 1) {
  require(threshold >= 0.0 && threshold <= 1.0, Errc::ConfigError,
          "ahc: threshold must lie in [0,1]");
  const std::size_t P = pool.entries.size();
  require(P >= 1, Errc::EmptyInput, "ahc: empty pool");

  struct Slot {
    bool active = true;
    std::int32_t size = 1;
    std::uint32_t gen = 0;
    std::vector<std::int32_t> members;
    std::vector<std::uint8_t> sample_mask;
  };
  std::vector<Slot> slots(P);
  for (std::size_t i = 0; i < P; ++i) {
    slots[i].members = {static_cast<std::int32_t>(i)};
    slots[i].sample_mask.assign(pool.S, 0);
    slots[i].sample_mask[pool.entries[i].ref.sample_id] = 1;
  }

  const auto disjoint = [&](const Slot& a, const Slot& b) {
    for (std::int32_t s = 0; s < pool.S; ++s)
      if (a.sample_mask[s] && b.sample_mask[s]) return false;
    return true;
  };
  const auto eligible = [&](std::size_t i, std::size_t j) {
    return allow_within_sample || disjoint(slots[i], slots[j]);
  };

  std::vector<double> dist;
  const auto at = [P](std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return i * (2 * P - i - 1) / 2 + (j - i - 1);
  };

  using Cand = std::tuple<double, std::uint32_t, std::uint32_t, std::uint32_t, std::uint32_t>;
  std::priority_queue<Cand, std::vector<Cand>, std::greater<>> queue;

  if (P >= 2 && threshold > 0.0) {
    dist = detail::pairwise_cd(pool, jobs);
    for (std::size_t i = 0; i < P; ++i) {
      for (std::size_t j = i + 1; j < P; ++j) {
        const double d = dist[at(i, j)];
        if (d < threshold && eligible(i, j))
          queue.emplace(d, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), 0, 0);
      }
    }
  }

  while (!queue.empty()) {
    const auto [d, a, b, gen_a, gen_b] = queue.top();
    queue.pop();
    if (!slots[a].active || !slots[b].active) continue;
    if (slots[a].gen != gen_a || slots[b].gen != gen_b) continue;
    require(d < threshold, Errc::StateCorruption, "ahc: merge at or above threshold");
    if (!allow_within_sample)
      require(disjoint(slots[a], slots[b]), Errc::StateCorruption,
              "ahc: constrained merge with overlapping samples");

    Slot& keep = slots[a];
    Slot& gone = slots[b];
    const double size_a = keep.size;
    const double size_b = gone.size;
    keep.members.insert(keep.members.end(), gone.members.begin(), gone.members.end());
    for (std::int32_t s = 0; s < pool.S; ++s)
      keep.sample_mask[s] = keep.sample_mask[s] | gone.sample_mask[s];
    keep.size += gone.size;
    keep.gen += 1;
    gone.active = false;

    for (std::size_t x = 0; x < P; ++x) {
      if (x == a || !slots[x].active) continue;
      const double d_new = (size_a * dist[at(a, x)] + size_b * dist[at(b, x)]) / (size_a + size_b);
      dist[at(a, x)] = d_new;
      if (d_new < threshold && eligible(a, x)) {
        const std::uint32_t lo = std::min<std::uint32_t>(a, static_cast<std::uint32_t>(x));
        const std::uint32_t hi = std::max<std::uint32_t>(a, static_cast<std::uint32_t>(x));
        queue.emplace(d_new, lo, hi, slots[lo].gen, slots[hi].gen);
      }
    }
  }

  std::vector<TopicCluster> clusters;
  for (std::size_t i = 0; i < P; ++i) {
    if (!slots[i].active) continue;
    TopicCluster c;
    c.members = slots[i].members;
    std::sort(c.members.begin(), c.members.end());
    for (std::int32_t e : c.members) c.refs.push_back(pool.entries[e].ref);
    c.centroid = clustered_topic(pool, c.members);
    c.size = static_cast<std::int32_t>(c.members.size());
    clusters.push_back(std::move(c));
  }
  return clusters;
}

/// Keeps clusters whose recurrence is at least min_size.
inline ClusteredModel filter_clusters(const std::vector<TopicCluster>& clusters,
                                      std::int32_t min_size, double threshold, ClusterMode mode,
                                      std::int32_t S, std::int32_t V) {
  require(min_size >= 1, Errc::ConfigError, "filter_clusters: min_size must be >= 1");
  ClusteredModel model;
  model.threshold = threshold;
  model.min_size = min_size;
  model.mode = mode;
  model.S = S;
  model.V = V;
  for (const auto& c : clusters)
    if (c.size >= min_size) model.clusters.push_back(c);
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation of a clustered model: perplexity with the centroids as topics
// under a symmetric prior sharing the training alpha_sum, coherence and
// distinctiveness on the centroids, credibility against an independently
// replicated clustering.

inline EvalReport evaluate_model(const ClusteredModel& model, const Corpus& test,
                                 const CoocStats& stats, const ClusteredModel& replication,
                                 double alpha_sum, const HeldoutConfig& heldout_cfg,
                                 std::int32_t top_n = 15, int jobs = 1) {
  require(!model.clusters.empty(), Errc::EmptyModel, "evaluate_model: no clusters survive");
  const Matrix centroids = model.centroid_matrix();
  const auto K = static_cast<std::int32_t>(centroids.rows());

  EvalReport report;
  report.n_topics = K;

  const std::vector<double> alpha(K, alpha_sum / K);
  const PerplexityResult px = perplexity(test, centroids, alpha, heldout_cfg, jobs);
  report.perplexity = px.perplexity;
  report.perplexity_se = px.se;

  for (std::int32_t i = 0; i < K; ++i) {
    report.npmi.push_back(topic_coherence(centroids.row(i), stats, top_n));
    if (K >= 2) report.cd_min.push_back(topic_distinctiveness(i, centroids));
  }
  if (!replication.clusters.empty()) {
    const Matrix ref = replication.centroid_matrix();
    for (std::int32_t i = 0; i < K; ++i) {
      double best = 0.0;
      for (std::size_t j = 0; j < ref.rows(); ++j)
        best = std::max(best, cosine_similarity(centroids.row(i), ref.row(j)));
      report.credibility.push_back(best);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Threshold x min-size sweep. Clustering runs once per threshold (on both the
// primary and the replication pool); each min_size then filters and evaluates.

struct SweepCell {
  double threshold = 0.0;
  std::int32_t min_size = 1;
  std::int32_t n_clusters = 0;
  EvalReport report;  // n_topics == 0 when the cell is empty
};

struct SweepReport {
  std::vector<double> thresholds;
  std::vector<std::int32_t> min_sizes;
  std::vector<SweepCell> cells;  // threshold-major, min_size-minor
};

inline SweepReport sweep(const TopicPool& pool, const TopicPool& replication_pool,
                         const std::vector<double>& thresholds,
                         const std::vector<std::int32_t>& min_sizes, const Corpus& test,
                         const CoocStats& stats, double alpha_sum,
                         const HeldoutConfig& heldout_cfg, ClusterMode mode,
                         std::int32_t top_n = 15, int jobs = 1) {
  require(!thresholds.empty() && !min_sizes.empty(), Errc::ConfigError, "sweep: empty grid");
  require(std::is_sorted(thresholds.begin(), thresholds.end()), Errc::ConfigError,
          "sweep: thresholds must ascend");
  const bool within = mode == ClusterMode::WithinSample;

  SweepReport report;
  report.thresholds = thresholds;
  report.min_sizes = min_sizes;
  for (double threshold : thresholds) {
    const auto clusters = constrained_ahc(pool, threshold, within, jobs);
    const auto rep_clusters = constrained_ahc(replication_pool, threshold, within, jobs);
    for (std::int32_t min_size : min_sizes) {
      SweepCell cell;
      cell.threshold = threshold;
      cell.min_size = min_size;
      const ClusteredModel model =
          filter_clusters(clusters, min_size, threshold, mode, pool.S, pool.V);
      const ClusteredModel rep = filter_clusters(rep_clusters, min_size, threshold, mode,
                                                 replication_pool.S, replication_pool.V);
      cell.n_clusters = model.n_clusters();
      if (!model.clusters.empty())
        cell.report = evaluate_model(model, test, stats, rep, alpha_sum, heldout_cfg, top_n, jobs);
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

// Long-format CSV, one row per (threshold, min_size, metric):
// threshold,min_size,metric,mean,stderr,n_clusters
inline void write_sweep_csv(const std::filesystem::path& path, const SweepReport& report) {
  std::string out = "threshold,min_size,metric,mean,stderr,n_clusters\n";
  const auto row = [&](const SweepCell& cell, const char* metric, std::optional<double> mean,
                       double se) {
    out += format_g9(cell.threshold);
    out += ',' + std::to_string(cell.min_size);
    out += ',';
    out += metric;
    out += ',';
    out += mean ? format_g9(*mean) : "nan";
    out += ',';
    out += mean ? format_g9(se) : "nan";
    out += ',' + std::to_string(cell.n_clusters) + '\n';
  };
  for (const auto& cell : report.cells) {
    const EvalReport& r = cell.report;
    const bool has = cell.n_clusters > 0;
    row(cell, "perplexity",
        has ? std::optional(r.perplexity) : std::nullopt, r.perplexity_se);
    row(cell, "npmi", has ? r.npmi_mean() : std::nullopt, se_of(r.npmi));
    row(cell, "cd_min", has ? r.cd_min_mean() : std::nullopt, se_of(r.cd_min));
    row(cell, "credibility", has ? r.credibility_mean() : std::nullopt, se_of(r.credibility));
  }
  write_text_file(path, out);
}

struct SweepRow {
  double threshold = 0.0;
  std::int32_t min_size = 0;
  std::string metric;
  double mean = 0.0;
  double stderr_ = 0.0;
  std::int32_t n_clusters = 0;
};

inline std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  require(!lines.empty() && lines[0] == "threshold,min_size,metric,mean,stderr,n_clusters",
          Errc::FormatError, "sweep csv: bad header in " + path.string());
  std::vector<SweepRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_csv_line(lines[i]);
    require(f.size() == 6, Errc::FormatError, "sweep csv: bad row in " + path.string());
    SweepRow r;
    r.threshold = parse_double(f[0], "sweep threshold");
    r.min_size = static_cast<std::int32_t>(parse_int(f[1], "sweep min_size"));
    r.metric = f[2];
    r.mean = parse_double(f[3], "sweep mean");
    r.stderr_ = parse_double(f[4], "sweep stderr");
    r.n_clusters = static_cast<std::int32_t>(parse_int(f[5], "sweep n_clusters"));
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Clustered model on disk: centroid matrix CSV plus a JSON manifest with the
// clustering parameters and per-cluster member provenance.

inline void save_clustered_model(const std::filesystem::path& dir, const ClusteredModel& model,
                                 const std::vector<PosteriorSample>& samples) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["threshold"] = model.threshold;
  manifest["min_size"] = model.min_size;
  manifest["mode"] = cluster_mode_name(model.mode);
  manifest["S"] = model.S;
  manifest["V"] = model.V;
  json clusters = json::array();
  for (const auto& c : model.clusters) {
    json jc;
    jc["size"] = c.size;
    json members = json::array();
    for (const auto& ref : c.refs) {
      json m;
      m["sample_id"] = ref.sample_id;
      m["topic_index"] = ref.topic_index;
      if (static_cast<std::size_t>(ref.sample_id) < samples.size()) {
        m["chain_id"] = samples[ref.sample_id].chain_id;
        m["iteration"] = samples[ref.sample_id].iteration;
      }
      members.push_back(std::move(m));
    }
    jc["members"] = std::move(members);
    clusters.push_back(std::move(jc));
  }
  manifest["clusters"] = std::move(clusters);
  write_json_file(dir / "model.json", manifest);
  if (!model.clusters.empty())
    write_text_file(dir / "centroids.csv", matrix_to_csv(model.centroid_matrix()));
}

inline ClusteredModel load_clustered_model(const std::filesystem::path& dir) {
  const json manifest = load_json_file(dir / "model.json");
  ClusteredModel model;
  model.threshold = manifest.at("threshold").get<double>();
  model.min_size = manifest.at("min_size").get<std::int32_t>();
  model.mode = manifest.at("mode").get<std::string>() == "within-sample"
                   ? ClusterMode::WithinSample
                   : ClusterMode::Constrained;
  model.S = manifest.at("S").get<std::int32_t>();
  model.V = manifest.at("V").get<std::int32_t>();
  const auto& clusters = manifest.at("clusters");
  if (clusters.empty()) return model;
  const Matrix centroids = matrix_from_csv(dir / "centroids.csv");
  require(centroids.rows() == clusters.size(), Errc::FormatError,
          "clustered model: centroid count disagrees with manifest");
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    TopicCluster tc;
    tc.size = clusters[c].at("size").get<std::int32_t>();
    for (const auto& m : clusters[c].at("members")) {
      tc.refs.push_back({m.at("sample_id").get<std::int32_t>(),
                         m.at("topic_index").get<std::int32_t>()});
    }
    tc.centroid.assign(centroids.row(c).begin(), centroids.row(c).end());
    model.clusters.push_back(std::move(tc));
  }
  return model;
}

}  // namespace topicforge
