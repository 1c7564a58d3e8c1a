#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "topicforge/error.hpp"
#include "topicforge/io.hpp"
#include "topicforge/matrix.hpp"
#include "topicforge/rng.hpp"

namespace topicforge {

struct RawBasket {
  std::string id;
  std::vector<std::string> products;
};

struct Vocabulary {
  std::vector<std::string> labels;                       // id -> label, dense 0..V-1
  std::unordered_map<std::string, std::int32_t> index;   // label -> id
  std::vector<std::int64_t> frequency;                   // id -> document frequency

  std::int32_t size() const noexcept { return static_cast<std::int32_t>(labels.size()); }

  std::int32_t lookup(const std::string& label) const {
    auto it = index.find(label);
    return it == index.end() ? -1 : it->second;
  }
};

struct Corpus {
  std::vector<std::vector<std::int32_t>> docs;  // de-duplicated product ids
  std::vector<std::string> doc_ids;
  std::int32_t V = 0;
  std::int64_t N = 0;  // total token count
  std::int32_t min_basket_size = 3;

  std::int64_t n_docs() const noexcept { return static_cast<std::int64_t>(docs.size()); }

  void validate() const {
    require(docs.size() == doc_ids.size(), Errc::FormatError, "corpus: docs/doc_ids mismatch");
    std::int64_t total = 0;
    for (const auto& doc : docs) {
      require(static_cast<std::int32_t>(doc.size()) >= min_basket_size, Errc::FormatError,
              "corpus: document below min basket size");
      std::unordered_set<std::int32_t> seen;
      for (std::int32_t id : doc) {
        require(id >= 0 && id < V, Errc::FormatError, "corpus: product id out of range");
        require(seen.insert(id).second, Errc::FormatError, "corpus: duplicate id within doc");
      }
      total += static_cast<std::int64_t>(doc.size());
    }
    require(total == N, Errc::FormatError, "corpus: stale token count");
  }
};

struct CoocStats {
  std::int64_t D = 0;
  std::vector<std::int64_t> df;                           // per product document frequency
  std::unordered_map<std::uint64_t, std::int64_t> pair_df;  // packed unordered pair -> joint df

  static std::uint64_t pair_key(std::int32_t i, std::int32_t j) noexcept {
    if (i > j) std::swap(i, j);
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)) << 32) |
           static_cast<std::uint32_t>(j);
  }

  std::int64_t pair_count(std::int32_t i, std::int32_t j) const {
    auto it = pair_df.find(pair_key(i, j));
    return it == pair_df.end() ? 0 : it->second;
  }

  std::int32_t n_products() const noexcept { return static_cast<std::int32_t>(df.size()); }
};

struct SyntheticTruth {
  Matrix phi_true;                 // K x V, row-stochastic
  std::vector<double> alpha_true;  // K positive entries
  std::uint64_t seed = 0;
};

struct IngestStats {
  std::int64_t kept = 0;
  std::int64_t dropped_small = 0;
  std::int64_t tokens_dropped_oov = 0;
};

struct IngestResult {
  Corpus corpus;
  IngestStats stats;
};

// ---------------------------------------------------------------------------
// JSON-lines basket input: one object per line, {"id": str, "products": [str]}.

inline std::vector<RawBasket> parse_baskets_jsonl(const std::vector<std::string>& lines) {
  std::vector<RawBasket> baskets;
  baskets.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = "line " + std::to_string(i + 1);
    json j;
    try {
      j = json::parse(lines[i]);
    } catch (const json::parse_error& e) {
      fail(Errc::RecordError, where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("products") ||
        !j["id"].is_string() || !j["products"].is_array()) {
      fail(Errc::RecordError, where + ": expected {\"id\": str, \"products\": [str,...]}");
    }
    RawBasket b;
    b.id = j["id"].get<std::string>();
    for (const auto& p : j["products"]) {
      if (!p.is_string()) fail(Errc::RecordError, where + ": non-string product");
      b.products.push_back(p.get<std::string>());
    }
    baskets.push_back(std::move(b));
  }
  return baskets;
}

inline std::vector<RawBasket> read_baskets_jsonl(const std::filesystem::path& path) {
  return parse_baskets_jsonl(read_lines(path));
}

// ---------------------------------------------------------------------------
// Vocabulary selection: top max_size labels by document frequency, ties by
// lexicographic label order; ids assigned in that same order.

inline Vocabulary build_vocabulary(const std::vector<RawBasket>& raw, std::size_t max_size) {
  require(!raw.empty(), Errc::EmptyInput, "build_vocabulary: no baskets");
  require(max_size >= 1, Errc::ConfigError, "build_vocabulary: max_size must be >= 1");

  std::map<std::string, std::int64_t> df;  // ordered map keeps the tie-break stable
  std::unordered_set<std::string> seen;
  for (const auto& basket : raw) {
    seen.clear();
    for (const auto& label : basket.products) {
      if (seen.insert(label).second) ++df[label];
    }
  }
  require(!df.empty(), Errc::EmptyInput, "build_vocabulary: no products in stream");

  std::vector<std::pair<std::string, std::int64_t>> ranked(df.begin(), df.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_size) ranked.resize(max_size);

  Vocabulary vocab;
  vocab.labels.reserve(ranked.size());
  vocab.frequency.reserve(ranked.size());
  for (std::size_t id = 0; id < ranked.size(); ++id) {
    vocab.labels.push_back(ranked[id].first);
    vocab.frequency.push_back(ranked[id].second);
    vocab.index.emplace(ranked[id].first, static_cast<std::int32_t>(id));
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// Ingestion: drop out-of-vocabulary labels, collapse duplicates to one token
// (first occurrence wins), then drop baskets that fall below min_basket_size.

inline IngestResult ingest_baskets(const std::vector<RawBasket>& raw, const Vocabulary& vocab,
                                   std::int32_t min_basket_size = 3) {
  require(min_basket_size >= 1, Errc::ConfigError, "ingest: min_basket_size must be >= 1");
  require(vocab.size() > 0, Errc::ConfigError, "ingest: empty vocabulary");

  IngestResult result;
  Corpus& corpus = result.corpus;
  corpus.V = vocab.size();
  corpus.min_basket_size = min_basket_size;

  std::unordered_set<std::int32_t> seen;
  for (const auto& basket : raw) {
    seen.clear();
    std::vector<std::int32_t> doc;
    for (const auto& label : basket.products) {
      const std::int32_t id = vocab.lookup(label);
      if (id < 0) {
        ++result.stats.tokens_dropped_oov;
        continue;
      }
      if (seen.insert(id).second) doc.push_back(id);
    }
    if (static_cast<std::int32_t>(doc.size()) < min_basket_size) {
      ++result.stats.dropped_small;
      continue;
    }
    corpus.N += static_cast<std::int64_t>(doc.size());
    corpus.docs.push_back(std::move(doc));
    corpus.doc_ids.push_back(basket.id);
    ++result.stats.kept;
  }
  require(!corpus.docs.empty(), Errc::EmptyCorpus, "ingest: every basket was dropped");
  return result;
}

/// Renders a corpus back to label baskets (used by the idempotence property).
inline std::vector<RawBasket> render_baskets(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<RawBasket> out;
  out.reserve(corpus.docs.size());
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    RawBasket b;
    b.id = corpus.doc_ids[d];
    for (std::int32_t id : corpus.docs[d]) b.products.push_back(vocab.labels[id]);
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Train/test split: shuffle doc indices with the given seed, round(D*fraction)
// docs become the test part, original document order is preserved within parts.

inline std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double test_fraction,
                                              std::uint64_t seed) {
  const std::int64_t D = corpus.n_docs();
  require(D >= 2, Errc::SplitError, "split: need at least 2 documents");
  require(test_fraction > 0.0 && test_fraction < 1.0, Errc::SplitError,
          "split: fraction must be in (0,1)");
  const std::int64_t n_test = std::llround(static_cast<double>(D) * test_fraction);
  require(n_test >= 1 && n_test < D, Errc::SplitError, "split: fraction yields an empty part");

  std::vector<std::int64_t> order(D);
  for (std::int64_t i = 0; i < D; ++i) order[i] = i;
  SplitMix64 rng(seed);
  for (std::int64_t i = D - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[i], order[j]);
  }
  std::vector<bool> is_test(D, false);
  for (std::int64_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  Corpus train, test;
  train.V = test.V = corpus.V;
  train.min_basket_size = test.min_basket_size = corpus.min_basket_size;
  for (std::int64_t d = 0; d < D; ++d) {
    Corpus& part = is_test[d] ? test : train;
    part.docs.push_back(corpus.docs[d]);
    part.doc_ids.push_back(corpus.doc_ids[d]);
    part.N += static_cast<std::int64_t>(corpus.docs[d].size());
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Document-level co-occurrence counts feeding the coherence metric.

inline CoocStats cooccurrence_stats(const Corpus& corpus) {
  require(!corpus.docs.empty(), Errc::EmptyCorpus, "cooccurrence_stats: empty corpus");
  CoocStats stats;
  stats.D = corpus.n_docs();
  stats.df.assign(corpus.V, 0);
  for (const auto& doc : corpus.docs) {
    for (std::int32_t v : doc) ++stats.df[v];
    for (std::size_t a = 0; a < doc.size(); ++a) {
      for (std::size_t b = a + 1; b < doc.size(); ++b) {
        ++stats.pair_df[CoocStats::pair_key(doc[a], doc[b])];
      }
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Synthetic corpora with planted topics.

struct DocLenSpec {
  std::int32_t min_len = 5;
  std::int32_t max_len = 5;  // uniform inclusive; min==max means fixed length
};

struct PhiSpec {
  enum class Kind { Explicit, Blocks, RandomDirichlet };
  Kind kind = Kind::Blocks;
  Matrix rows;                  // Explicit only
  double concentration = 1.0;   // RandomDirichlet only

  static PhiSpec explicit_rows(Matrix m) { return {Kind::Explicit, std::move(m), 0.0}; }
  static PhiSpec blocks() { return {Kind::Blocks, {}, 0.0}; }
  static PhiSpec random_dirichlet(double concentration) {
    return {Kind::RandomDirichlet, {}, concentration};
  }
};

struct SynthConfig {
  std::int32_t K = 1;
  std::int32_t V = 1;
  std::int64_t D = 1;
  DocLenSpec doc_len;
  std::vector<double> alpha_true;  // K positive entries
  PhiSpec phi;
  std::uint64_t seed = 0;
  std::int32_t min_basket_size = 3;
};

struct SyntheticResult {
  Corpus corpus;
  SyntheticTruth truth;
};

namespace detail {

inline Matrix build_planted_phi(const SynthConfig& cfg, SplitMix64& rng) {
  const auto K = static_cast<std::size_t>(cfg.K);
  const auto V = static_cast<std::size_t>(cfg.V);
  switch (cfg.phi.kind) {
    case PhiSpec::Kind::Explicit: {
      const Matrix& given = cfg.phi.rows;
      require(given.rows() == K && given.cols() == V, Errc::SpecError,
              "phi spec: matrix shape does not match K x V");
      Matrix phi(K, V);
      for (std::size_t k = 0; k < K; ++k) {
        double sum = 0.0;
        for (std::size_t v = 0; v < V; ++v) {
          require(given(k, v) >= 0.0, Errc::SpecError, "phi spec: negative entry");
          sum += given(k, v);
        }
        require(sum > 0.0, Errc::SpecError, "phi spec: row not normalizable");
        for (std::size_t v = 0; v < V; ++v) phi(k, v) = given(k, v) / sum;
      }
      return phi;
    }
    case PhiSpec::Kind::Blocks: {
      // K disjoint contiguous supports covering 0..V-1, uniform within each.
      require(V >= K, Errc::SpecError, "phi spec: blocks need V >= K");
      Matrix phi(K, V, 0.0);
      const std::size_t base = V / K;
      const std::size_t extra = V % K;
      std::size_t start = 0;
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t width = base + (k < extra ? 1 : 0);
        for (std::size_t v = start; v < start + width; ++v)
          phi(k, v) = 1.0 / static_cast<double>(width);
        start += width;
      }
      return phi;
    }
    case PhiSpec::Kind::RandomDirichlet: {
      require(cfg.phi.concentration > 0.0, Errc::SpecError,
              "phi spec: concentration must be positive");
      Matrix phi(K, V);
      std::vector<double> conc(V, cfg.phi.concentration);
      for (std::size_t k = 0; k < K; ++k) rng.next_dirichlet(conc, phi.row(k));
      return phi;
    }
  }
  fail(Errc::SpecError, "phi spec: unknown kind");
}

}  // namespace detail

// Draws theta ~ Dirichlet(alpha_true), tokens via z ~ Mult(theta),
// w ~ Mult(phi_z), then collapses duplicates the same way ingestion does.
// A document that falls below min_basket_size after collapsing is redrawn.
inline SyntheticResult generate_synthetic(const SynthConfig& cfg) {
  require(cfg.K >= 1 && cfg.V >= 1 && cfg.D >= 1, Errc::ConfigError,
          "synthetic: K, V, D must all be >= 1");
  require(static_cast<std::int32_t>(cfg.alpha_true.size()) == cfg.K, Errc::ConfigError,
          "synthetic: alpha_true must have K entries");
  for (double a : cfg.alpha_true)
    require(a > 0.0, Errc::ConfigError, "synthetic: alpha_true entries must be positive");
  require(cfg.doc_len.min_len >= cfg.min_basket_size, Errc::ConfigError,
          "synthetic: doc_len min below min basket size");
  require(cfg.doc_len.max_len >= cfg.doc_len.min_len, Errc::ConfigError,
          "synthetic: doc_len range inverted");

  SplitMix64 rng(cfg.seed);
  SyntheticResult result;
  result.truth.phi_true = detail::build_planted_phi(cfg, rng);
  result.truth.alpha_true = cfg.alpha_true;
  result.truth.seed = cfg.seed;

  Corpus& corpus = result.corpus;
  corpus.V = cfg.V;
  corpus.min_basket_size = cfg.min_basket_size;

  const Matrix& phi = result.truth.phi_true;
  std::vector<double> theta(cfg.K);
  std::vector<std::int32_t> doc;
  const std::int32_t span = cfg.doc_len.max_len - cfg.doc_len.min_len + 1;

  for (std::int64_t d = 0; d < cfg.D; ++d) {
    bool accepted = false;
    for (int attempt = 0; attempt < 1000 && !accepted; ++attempt) {
      rng.next_dirichlet(cfg.alpha_true, theta);
      const std::int32_t len =
          cfg.doc_len.min_len + static_cast<std::int32_t>(rng.next_below(span));
      doc.clear();
      for (std::int32_t t = 0; t < len; ++t) {
        const auto z = rng.next_discrete(theta);
        const auto w = static_cast<std::int32_t>(rng.next_discrete(phi.row(z)));
        if (std::find(doc.begin(), doc.end(), w) == doc.end()) doc.push_back(w);
      }
      accepted = static_cast<std::int32_t>(doc.size()) >= cfg.min_basket_size;
    }
    require(accepted, Errc::SpecError,
            "synthetic: could not draw a document meeting min basket size");
    corpus.N += static_cast<std::int64_t>(doc.size());
    corpus.docs.push_back(doc);
    corpus.doc_ids.push_back("synth-" + std::to_string(d));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Disk formats.
//
// Corpus file: first line is a JSON header {"V","D","N","vocab"}, followed by
// one JSON line per document {"id","tokens"}.

inline void write_corpus(const std::filesystem::path& path, const Corpus& corpus,
                         const Vocabulary& vocab) {
  require(vocab.size() == corpus.V, Errc::FormatError, "write_corpus: vocab size mismatch");
  std::string out;
  json header;
  header["V"] = corpus.V;
  header["D"] = corpus.n_docs();
  header["N"] = corpus.N;
  header["min_basket_size"] = corpus.min_basket_size;
  header["vocab"] = vocab.labels;
  out += header.dump();
  out += '\n';
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    json doc;
    doc["id"] = corpus.doc_ids[d];
    doc["tokens"] = corpus.docs[d];
    out += doc.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

struct CorpusFile {
  Corpus corpus;
  Vocabulary vocab;  // frequency recounted from the stored documents
};

inline CorpusFile read_corpus(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  require(!lines.empty(), Errc::FormatError, "read_corpus: empty file " + path.string());
  CorpusFile out;
  json header;
  try {
    header = json::parse(lines[0]);
  } catch (const json::parse_error& e) {
    fail(Errc::RecordError, path.string() + " line 1: " + e.what());
  }
  out.corpus.V = header.at("V").get<std::int32_t>();
  out.corpus.min_basket_size = header.value("min_basket_size", 1);
  const auto labels = header.at("vocab").get<std::vector<std::string>>();
  require(static_cast<std::int32_t>(labels.size()) == out.corpus.V, Errc::FormatError,
          "read_corpus: vocab length disagrees with V");
  out.vocab.labels = labels;
  for (std::size_t i = 0; i < labels.size(); ++i)
    out.vocab.index.emplace(labels[i], static_cast<std::int32_t>(i));

  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    json doc;
    try {
      doc = json::parse(lines[i]);
    } catch (const json::parse_error& e) {
      fail(Errc::RecordError, path.string() + " line " + std::to_string(i + 1) + ": " + e.what());
    }
    out.corpus.doc_ids.push_back(doc.at("id").get<std::string>());
    out.corpus.docs.push_back(doc.at("tokens").get<std::vector<std::int32_t>>());
    out.corpus.N += static_cast<std::int64_t>(out.corpus.docs.back().size());
  }
  require(out.corpus.n_docs() == header.at("D").get<std::int64_t>(), Errc::FormatError,
          "read_corpus: D disagrees with document lines");
  require(out.corpus.N == header.at("N").get<std::int64_t>(), Errc::FormatError,
          "read_corpus: N disagrees with token count");

  out.vocab.frequency.assign(out.corpus.V, 0);
  for (const auto& doc : out.corpus.docs)
    for (std::int32_t v : doc) ++out.vocab.frequency[v];
  return out;
}

// Co-occurrence cache: "D,<count>", a "v,df" section, then a sorted
// "i,j,pair_df" section.
inline void write_cooc_csv(const std::filesystem::path& path, const CoocStats& stats) {
  std::string out;
  out += "D," + std::to_string(stats.D) + "\n";
  out += "v,df\n";
  for (std::size_t v = 0; v < stats.df.size(); ++v)
    out += std::to_string(v) + "," + std::to_string(stats.df[v]) + "\n";
  out += "i,j,pair_df\n";
  std::vector<std::uint64_t> keys;
  keys.reserve(stats.pair_df.size());
  for (const auto& [k, _] : stats.pair_df) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (std::uint64_t k : keys) {
    out += std::to_string(k >> 32) + "," + std::to_string(k & 0xFFFFFFFFULL) + "," +
           std::to_string(stats.pair_df.at(k)) + "\n";
  }
  write_text_file(path, out);
}

inline CoocStats read_cooc_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  require(lines.size() >= 2 && lines[0].rfind("D,", 0) == 0, Errc::FormatError,
          "cooc csv: missing D header in " + path.string());
  CoocStats stats;
  stats.D = parse_int(lines[0].substr(2), "cooc D");
  require(lines[1] == "v,df", Errc::FormatError, "cooc csv: missing v,df header");
  std::size_t i = 2;
  for (; i < lines.size() && lines[i] != "i,j,pair_df"; ++i) {
    const auto f = split_csv_line(lines[i]);
    require(f.size() == 2, Errc::FormatError, "cooc csv: bad df row");
    const auto v = parse_int(f[0], "cooc v");
    require(v == static_cast<std::int64_t>(stats.df.size()), Errc::FormatError,
            "cooc csv: df rows out of order");
    stats.df.push_back(parse_int(f[1], "cooc df"));
  }
  require(i < lines.size(), Errc::FormatError, "cooc csv: missing pair section");
  for (++i; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_csv_line(lines[i]);
    require(f.size() == 3, Errc::FormatError, "cooc csv: bad pair row");
    const auto a = static_cast<std::int32_t>(parse_int(f[0], "cooc i"));
    const auto b = static_cast<std::int32_t>(parse_int(f[1], "cooc j"));
    stats.pair_df[CoocStats::pair_key(a, b)] = parse_int(f[2], "cooc pair_df");
  }
  return stats;
}

}  // namespace topicforge
