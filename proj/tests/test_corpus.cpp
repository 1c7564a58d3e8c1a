#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "topicforge/corpus.hpp"
#include "topicforge/rng.hpp"

using namespace topicforge;
namespace fs = std::filesystem;

namespace {

RawBasket basket(std::string id, std::vector<std::string> products) {
  return {std::move(id), std::move(products)};
}

fs::path temp_dir() {
  static int counter = 0;
  const auto dir = fs::temp_directory_path() /
                   ("tf_corpus_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

Corpus make_corpus(std::vector<std::vector<std::int32_t>> docs, std::int32_t V,
                   std::int32_t min_size = 1) {
  Corpus c;
  c.V = V;
  c.min_basket_size = min_size;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    c.N += static_cast<std::int64_t>(docs[d].size());
    c.doc_ids.push_back("d" + std::to_string(d));
  }
  c.docs = std::move(docs);
  return c;
}

auto has_code(Errc code) {
  return Catch::Matchers::Predicate<Error>(
      [code](const Error& e) { return e.code() == code; });
}

}  // namespace

TEST_CASE("splitmix64 generator") {
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next() == b.next());

  SplitMix64 g(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = g.next_double();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(g.next_below(13) < 13);
  }

  std::vector<double> alpha{0.5, 2.0, 1.0};
  std::vector<double> draw(3);
  double mean0 = 0.0;
  for (int i = 0; i < 2000; ++i) {
    g.next_dirichlet(alpha, draw);
    double sum = 0.0;
    for (double x : draw) {
      REQUIRE(x >= 0.0);
      sum += x;
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    mean0 += draw[0];
  }
  REQUIRE(mean0 / 2000 == Catch::Approx(0.5 / 3.5).margin(0.01));  // E[x0] = 0.5/3.5

  std::vector<double> w{1.0, 3.0, 0.0, 6.0};
  std::vector<int> hits(4, 0);
  for (int i = 0; i < 20000; ++i) ++hits[g.next_discrete(w)];
  REQUIRE(hits[2] == 0);
  REQUIRE(hits[0] / 20000.0 == Catch::Approx(0.1).margin(0.01));
  REQUIRE(hits[3] / 20000.0 == Catch::Approx(0.6).margin(0.015));
}

TEST_CASE("build_vocabulary ranks by document frequency") {
  std::vector<RawBasket> raw;
  for (int i = 0; i < 5; ++i) raw.push_back(basket("x", {"a"}));
  for (int i = 0; i < 3; ++i) raw.push_back(basket("y", {"b"}));
  raw.push_back(basket("z", {"c"}));

  const auto vocab = build_vocabulary(raw, 2);
  REQUIRE(vocab.labels == std::vector<std::string>{"a", "b"});
  REQUIRE(vocab.frequency == std::vector<std::int64_t>{5, 3});
  REQUIRE(vocab.lookup("c") == -1);
}

TEST_CASE("build_vocabulary breaks frequency ties lexicographically") {
  std::vector<RawBasket> raw;
  for (int i = 0; i < 5; ++i) raw.push_back(basket("x", {"b", "a"}));
  const auto vocab = build_vocabulary(raw, 1);
  REQUIRE(vocab.labels == std::vector<std::string>{"a"});
}

TEST_CASE("build_vocabulary caps at max_size") {
  std::vector<RawBasket> raw;
  for (int i = 0; i < 12000; ++i) raw.push_back(basket("b", {"label" + std::to_string(i)}));
  const auto vocab = build_vocabulary(raw, 10000);
  REQUIRE(vocab.size() == 10000);
}

TEST_CASE("build_vocabulary counts a basket once per label") {
  const auto vocab = build_vocabulary({basket("b", {"a", "a", "a"})}, 5);
  REQUIRE(vocab.frequency == std::vector<std::int64_t>{1});
}

TEST_CASE("build_vocabulary rejects empty input") {
  REQUIRE_THROWS_MATCHES(build_vocabulary({}, 5), Error, has_code(Errc::EmptyInput));
}

TEST_CASE("ingest collapses duplicates to one token") {
  const auto vocab = build_vocabulary({basket("b", {"banana"})}, 5);
  const auto result =
      ingest_baskets({basket("b", {"banana", "banana", "banana", "banana", "banana"})}, vocab, 1);
  REQUIRE(result.corpus.docs == std::vector<std::vector<std::int32_t>>{{0}});
  REQUIRE(result.corpus.N == 1);
}

TEST_CASE("ingest drops baskets below the minimum size") {
  const auto raw =
      std::vector<RawBasket>{basket("small", {"a", "b"}), basket("ok", {"a", "b", "c"})};
  const auto vocab = build_vocabulary(raw, 10);
  const auto result = ingest_baskets(raw, vocab, 3);
  REQUIRE(result.stats.kept == 1);
  REQUIRE(result.stats.dropped_small == 1);
  REQUIRE(result.corpus.doc_ids == std::vector<std::string>{"ok"});
}

TEST_CASE("ingest drops out-of-vocabulary labels before the size check") {
  const auto vocab = build_vocabulary({basket("v", {"a", "b", "c"})}, 3);
  const auto result = ingest_baskets({basket("d", {"a", "b", "c", "zzz"})}, vocab, 3);
  REQUIRE(result.corpus.docs == std::vector<std::vector<std::int32_t>>{{0, 1, 2}});
  REQUIRE(result.stats.tokens_dropped_oov == 1);
}

TEST_CASE("ingest reports EmptyCorpus when everything is dropped") {
  const auto vocab = build_vocabulary({basket("v", {"a"})}, 1);
  REQUIRE_THROWS_MATCHES(ingest_baskets({basket("d", {"a"})}, vocab, 3), Error,
                         has_code(Errc::EmptyCorpus));
}

TEST_CASE("ingestion is idempotent") {
  SplitMix64 rng(101);
  std::vector<RawBasket> raw;
  for (int d = 0; d < 60; ++d) {
    RawBasket b;
    b.id = "r" + std::to_string(d);
    const int len = 3 + static_cast<int>(rng.next_below(8));
    for (int i = 0; i < len; ++i) b.products.push_back("p" + std::to_string(rng.next_below(25)));
    raw.push_back(std::move(b));
  }
  const auto vocab = build_vocabulary(raw, 20);
  const auto first = ingest_baskets(raw, vocab, 3);
  const auto again = ingest_baskets(render_baskets(first.corpus, vocab), vocab, 3);
  REQUIRE(again.corpus.docs == first.corpus.docs);
  REQUIRE(again.corpus.doc_ids == first.corpus.doc_ids);
  REQUIRE(again.stats.dropped_small == 0);
  REQUIRE(again.stats.tokens_dropped_oov == 0);
}

TEST_CASE("basket JSONL parsing carries line numbers on malformed records") {
  const std::vector<std::string> lines = {
      R"({"id":"a","products":["x","y"]})",
      R"(not json at all)",
  };
  try {
    parse_baskets_jsonl(lines);
    FAIL("expected RecordError");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::RecordError);
    REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
  }

  const std::vector<std::string> bad_shape = {R"({"id":"a"})"};
  REQUIRE_THROWS_MATCHES(parse_baskets_jsonl(bad_shape), Error, has_code(Errc::RecordError));
}

TEST_CASE("split_corpus produces a deterministic disjoint partition") {
  std::vector<std::vector<std::int32_t>> docs;
  for (int d = 0; d < 100; ++d) docs.push_back({d % 7, 7 + d % 5, 12});
  const auto corpus = make_corpus(std::move(docs), 20, 3);

  const auto [train, test] = split_corpus(corpus, 0.1, 7);
  REQUIRE(train.n_docs() == 90);
  REQUIRE(test.n_docs() == 10);

  const auto [train2, test2] = split_corpus(corpus, 0.1, 7);
  REQUIRE(train2.docs == train.docs);
  REQUIRE(test2.doc_ids == test.doc_ids);

  std::set<std::string> ids(train.doc_ids.begin(), train.doc_ids.end());
  for (const auto& id : test.doc_ids) REQUIRE(ids.insert(id).second);
  REQUIRE(ids.size() == 100);

  const auto [t3, t4] = split_corpus(corpus, 0.1, 8);
  REQUIRE(t4.doc_ids != test.doc_ids);  // seed matters
}

TEST_CASE("split_corpus reproduces the 36000/3600 shape") {
  std::vector<std::vector<std::int32_t>> docs(39600, {0, 1, 2});
  const auto corpus = make_corpus(std::move(docs), 3, 3);
  const auto [train, test] = split_corpus(corpus, 3600.0 / 39600.0, 1);
  REQUIRE(train.n_docs() == 36000);
  REQUIRE(test.n_docs() == 3600);
}

TEST_CASE("split_corpus boundary cases") {
  const auto two = make_corpus({{0}, {1}}, 2, 1);
  const auto [a, b] = split_corpus(two, 0.5, 3);
  REQUIRE(a.n_docs() == 1);
  REQUIRE(b.n_docs() == 1);

  REQUIRE_THROWS_MATCHES(split_corpus(two, 0.1, 3), Error, has_code(Errc::SplitError));
}

TEST_CASE("cooccurrence stats match a hand count") {
  // docs {a,b},{a,b},{a,c},{b,c} with a=0, b=1, c=2
  const auto corpus = make_corpus({{0, 1}, {0, 1}, {0, 2}, {1, 2}}, 3, 2);
  const auto stats = cooccurrence_stats(corpus);
  REQUIRE(stats.D == 4);
  REQUIRE(stats.df == std::vector<std::int64_t>{3, 3, 2});
  REQUIRE(stats.pair_count(0, 1) == 2);
  REQUIRE(stats.pair_count(1, 0) == 2);  // symmetric access
  REQUIRE(stats.pair_count(0, 2) == 1);
  REQUIRE(stats.pair_count(1, 2) == 1);
}

TEST_CASE("cooccurrence stats single-document and disjoint cases") {
  const auto one = cooccurrence_stats(make_corpus({{0, 1, 2}}, 3, 3));
  REQUIRE(one.D == 1);
  REQUIRE(one.pair_count(0, 1) == 1);
  REQUIRE(one.pair_count(0, 2) == 1);
  REQUIRE(one.pair_count(1, 2) == 1);

  const auto disjoint = cooccurrence_stats(make_corpus({{0}, {1}}, 2, 1));
  REQUIRE(disjoint.pair_count(0, 1) == 0);
}

TEST_CASE("cooccurrence bounds hold on random corpora") {
  SplitMix64 rng(55);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<std::vector<std::int32_t>> docs;
    for (int d = 0; d < 40; ++d) {
      std::set<std::int32_t> doc;
      const int len = 1 + static_cast<int>(rng.next_below(6));
      for (int i = 0; i < len; ++i) doc.insert(static_cast<std::int32_t>(rng.next_below(12)));
      docs.emplace_back(doc.begin(), doc.end());
    }
    const auto stats = cooccurrence_stats(make_corpus(std::move(docs), 12, 1));
    for (std::int32_t i = 0; i < 12; ++i) {
      REQUIRE(stats.df[i] <= stats.D);
      for (std::int32_t j = i + 1; j < 12; ++j) {
        REQUIRE(stats.pair_count(i, j) >= 0);
        REQUIRE(stats.pair_count(i, j) <= std::min(stats.df[i], stats.df[j]));
      }
    }
  }
}

TEST_CASE("synthetic single-topic corpus tracks the planted unigram") {
  // Single-token documents so duplicate collapsing cannot bias frequencies.
  SynthConfig cfg;
  cfg.K = 1;
  cfg.V = 6;
  cfg.D = 30000;
  cfg.doc_len = {1, 1};
  cfg.min_basket_size = 1;
  cfg.alpha_true = {1.0};
  cfg.phi = PhiSpec::explicit_rows(Matrix::from_rows({{4, 3, 2, 2, 2, 1}}));
  cfg.seed = 9;
  const auto result = generate_synthetic(cfg);

  std::vector<double> freq(cfg.V, 0.0);
  for (const auto& doc : result.corpus.docs)
    for (auto w : doc) freq[w] += 1.0;
  for (auto& f : freq) f /= static_cast<double>(result.corpus.N);
  for (int v = 0; v < cfg.V; ++v)
    REQUIRE(freq[v] == Catch::Approx(result.truth.phi_true(0, v)).margin(0.01));
}

TEST_CASE("synthetic tokens stay inside the planted supports") {
  SynthConfig cfg;
  cfg.K = 2;
  cfg.V = 6;
  cfg.D = 300;
  cfg.doc_len = {3, 4};
  cfg.alpha_true = {1.0, 1.0};
  cfg.phi =
      PhiSpec::explicit_rows(Matrix::from_rows({{0.5, 0.5, 0, 0, 0, 0}, {0, 0, 0.5, 0.5, 0, 0}}));
  cfg.seed = 4;
  const auto result = generate_synthetic(cfg);
  for (const auto& doc : result.corpus.docs)
    for (auto w : doc) REQUIRE(w < 4);
}

TEST_CASE("synthetic block topics yield quarter frequencies by symmetry") {
  SynthConfig cfg;
  cfg.K = 2;
  cfg.V = 4;
  cfg.D = 5000;
  cfg.doc_len = {3, 3};
  cfg.alpha_true = {1.0, 1.0};
  cfg.phi = PhiSpec::explicit_rows(Matrix::from_rows({{0.5, 0.5, 0, 0}, {0, 0, 0.5, 0.5}}));
  cfg.seed = 12;
  const auto result = generate_synthetic(cfg);
  std::vector<double> freq(4, 0.0);
  for (const auto& doc : result.corpus.docs)
    for (auto w : doc) freq[w] += 1.0;
  for (int v = 0; v < 4; ++v)
    REQUIRE(freq[v] / result.corpus.N == Catch::Approx(0.25).margin(0.01));
}

TEST_CASE("synthetic corpora are reproducible and respect the min size") {
  SynthConfig cfg;
  cfg.K = 3;
  cfg.V = 30;
  cfg.D = 200;
  cfg.doc_len = {3, 9};
  cfg.alpha_true = {0.5, 0.5, 0.5};
  cfg.phi = PhiSpec::blocks();
  cfg.seed = 77;
  const auto a = generate_synthetic(cfg);
  const auto b = generate_synthetic(cfg);
  REQUIRE(a.corpus.docs == b.corpus.docs);
  REQUIRE(a.truth.phi_true == b.truth.phi_true);
  a.corpus.validate();
  REQUIRE(a.truth.phi_true.row_stochastic(1e-9));
}

TEST_CASE("synthetic rejects non-normalizable phi rows") {
  SynthConfig cfg;
  cfg.K = 1;
  cfg.V = 3;
  cfg.D = 2;
  cfg.doc_len = {3, 3};
  cfg.alpha_true = {1.0};
  cfg.phi = PhiSpec::explicit_rows(Matrix::from_rows({{0.0, 0.0, 0.0}}));
  REQUIRE_THROWS_MATCHES(generate_synthetic(cfg), Error, has_code(Errc::SpecError));
}

TEST_CASE("corpus file round trip") {
  const auto dir = temp_dir();
  const auto raw =
      std::vector<RawBasket>{basket("b1", {"a", "b", "c"}), basket("b2", {"c", "d", "a"})};
  const auto vocab = build_vocabulary(raw, 10);
  const auto result = ingest_baskets(raw, vocab, 3);

  write_corpus(dir / "corpus.json", result.corpus, vocab);
  const auto loaded = read_corpus(dir / "corpus.json");
  REQUIRE(loaded.corpus.docs == result.corpus.docs);
  REQUIRE(loaded.corpus.doc_ids == result.corpus.doc_ids);
  REQUIRE(loaded.corpus.V == result.corpus.V);
  REQUIRE(loaded.corpus.N == result.corpus.N);
  REQUIRE(loaded.vocab.labels == vocab.labels);
  fs::remove_all(dir);
}

TEST_CASE("cooccurrence cache round trip") {
  const auto dir = temp_dir();
  const auto stats = cooccurrence_stats(make_corpus({{0, 1}, {0, 1}, {0, 2}, {1, 2}}, 3, 2));
  write_cooc_csv(dir / "cooc.csv", stats);
  const auto loaded = read_cooc_csv(dir / "cooc.csv");
  REQUIRE(loaded.D == stats.D);
  REQUIRE(loaded.df == stats.df);
  REQUIRE(loaded.pair_df == stats.pair_df);
  fs::remove_all(dir);
}
