#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <unistd.h>
#include <vector>

#include "topicforge/corpus.hpp"
#include "topicforge/gibbs.hpp"

using namespace topicforge;
namespace fs = std::filesystem;

namespace {

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

Corpus random_corpus(std::int32_t V, int docs, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::vector<std::int32_t>> out;
  for (int d = 0; d < docs; ++d) {
    std::vector<std::int32_t> doc;
    for (std::int32_t v = 0; v < V; ++v)
      if (rng.next_double() < 0.4) doc.push_back(v);
    if (doc.empty()) doc.push_back(static_cast<std::int32_t>(rng.next_below(V)));
    out.push_back(std::move(doc));
  }
  return make_corpus(std::move(out), V, 1);
}

// Brute recount of all count matrices from the raw assignments.
void require_counts_match(const SamplerState& st) {
  std::vector<std::int32_t> wt(st.word_topic.size(), 0);
  std::vector<std::int32_t> dt(st.doc_topic.size(), 0);
  std::vector<std::int32_t> tt(st.K, 0);
  std::vector<std::int32_t> dl(st.doc_total.size(), 0);
  for (std::int64_t d = 0; d < st.n_docs(); ++d) {
    for (std::size_t i = st.doc_offset[d]; i < st.doc_offset[d + 1]; ++i) {
      const auto k = st.z[i];
      REQUIRE(k >= 0);
      REQUIRE(k < st.K);
      ++wt[static_cast<std::size_t>(st.words[i]) * st.K + k];
      ++dt[static_cast<std::size_t>(d) * st.K + k];
      ++tt[k];
      ++dl[d];
    }
  }
  REQUIRE(wt == st.word_topic);
  REQUIRE(dt == st.doc_topic);
  REQUIRE(tt == st.topic_total);
  REQUIRE(dl == st.doc_total);
}

}  // namespace

TEST_CASE("hyperparameters reject a zero topic count") {
  REQUIRE_THROWS_MATCHES(HyperParams::symmetric(0, 3), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::ConfigError; }));
  const auto corpus = make_corpus({{0, 1}}, 2);
  HyperParams hp;
  hp.K = 0;
  REQUIRE_THROWS_AS(init_state(corpus, hp, 1), Error);
}

TEST_CASE("init_state with a single topic assigns everything to it") {
  const auto corpus = make_corpus({{0, 1, 2}, {1, 2}}, 3);
  const auto hp = HyperParams::symmetric(1, 3);
  const auto st = init_state(corpus, hp, 5);
  for (auto k : st.z) REQUIRE(k == 0);
  REQUIRE(st.topic_total[0] == corpus.N);
}

TEST_CASE("init_state is deterministic and count-consistent") {
  const auto corpus = random_corpus(10, 25, 2);
  REQUIRE(corpus.N >= 100);
  const auto hp = HyperParams::symmetric(4, 10);
  const auto a = init_state(corpus, hp, 123);
  const auto b = init_state(corpus, hp, 123);
  REQUIRE(a.z == b.z);

  require_counts_match(a);
  REQUIRE(std::accumulate(a.topic_total.begin(), a.topic_total.end(), std::int64_t{0}) ==
          corpus.N);
}

TEST_CASE("full_conditional matches the hand-evaluated weights") {
  // K=2, V=3, beta_v=0.1, alpha_k=0.5; token word v=0 in doc 0, counts
  // already exclude the token.
  SamplerState st;
  st.K = 2;
  st.V = 3;
  st.words = {0};
  st.doc_offset = {0, 1};
  st.z = {0};
  st.word_topic = {2, 0, 1, 2, 2, 1};  // v-major: v0 -> (2,0)
  st.doc_topic = {1, 1};
  st.topic_total = {5, 3};
  st.doc_total = {2};

  HyperParams hp;
  hp.K = 2;
  hp.alpha = {0.5, 0.5};
  hp.beta = {0.1, 0.1, 0.1};
  hp.alpha_sum = 1.0;
  hp.beta_sum = 0.3;

  const auto w = full_conditional(st, hp, 0, 0);
  REQUIRE(w[0] == Catch::Approx((2 + 0.1) / (5 + 0.3) * (1 + 0.5)).epsilon(1e-12));
  REQUIRE(w[1] == Catch::Approx((0 + 0.1) / (3 + 0.3) * (1 + 0.5)).epsilon(1e-12));
  const double p0 = w[0] / (w[0] + w[1]);
  REQUIRE(p0 == Catch::Approx(0.9290).margin(5e-5));
  REQUIRE(1.0 - p0 == Catch::Approx(0.0710).margin(5e-5));
}

TEST_CASE("full_conditional degenerate and symmetric cases") {
  const auto corpus = make_corpus({{0, 1}}, 2);
  const auto hp1 = HyperParams::symmetric(1, 2);
  auto st1 = init_state(corpus, hp1, 1);
  --st1.word_topic[0 * 1 + 0];
  --st1.topic_total[0];
  --st1.doc_topic[0];
  const auto w1 = full_conditional(st1, hp1, 0, 0);
  REQUIRE(w1.size() == 1);
  REQUIRE(w1[0] / w1[0] == 1.0);

  // All counts equal across topics -> uniform conditional.
  SamplerState st;
  st.K = 3;
  st.V = 2;
  st.words = {0};
  st.doc_offset = {0, 1};
  st.z = {0};
  st.word_topic = {4, 4, 4, 2, 2, 2};
  st.doc_topic = {1, 1, 1};
  st.topic_total = {6, 6, 6};
  st.doc_total = {3};
  const auto hp = HyperParams::symmetric(3, 2, 1.5, 0.2);
  const auto w = full_conditional(st, hp, 0, 0);
  REQUIRE(w[0] == Catch::Approx(w[1]).epsilon(1e-15));
  REQUIRE(w[1] == Catch::Approx(w[2]).epsilon(1e-15));
}

TEST_CASE("full_conditional detects corrupted counts") {
  SamplerState st;
  st.K = 1;
  st.V = 1;
  st.words = {0};
  st.doc_offset = {0, 1};
  st.z = {0};
  st.word_topic = {-1};
  st.doc_topic = {0};
  st.topic_total = {0};
  st.doc_total = {1};
  const auto hp = HyperParams::symmetric(1, 1);
  REQUIRE_THROWS_MATCHES(full_conditional(st, hp, 0, 0), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.code() == Errc::StateCorruption;
                         }));
}

TEST_CASE("gibbs_sweep with one topic changes nothing but the clock") {
  const auto corpus = make_corpus({{0, 1, 2}, {2, 3}}, 4);
  const auto hp = HyperParams::symmetric(1, 4);
  auto st = init_state(corpus, hp, 3);
  const auto z_before = st.z;
  gibbs_sweep(st, hp);
  REQUIRE(st.z == z_before);
  REQUIRE(st.iteration == 1);
}

TEST_CASE("counts recount exactly after every sweep") {
  const auto corpus = random_corpus(12, 30, 77);
  const auto hp = HyperParams::symmetric(3, 12);
  auto st = init_state(corpus, hp, 9);
  for (int sweep = 0; sweep < 25; ++sweep) {
    gibbs_sweep(st, hp);
    require_counts_match(st);
  }
  REQUIRE(st.iteration == 25);
}

TEST_CASE("sweeps are deterministic for a fixed seed") {
  const auto corpus = random_corpus(8, 20, 5);
  const auto hp = HyperParams::symmetric(2, 8);
  auto a = init_state(corpus, hp, 31);
  auto b = init_state(corpus, hp, 31);
  for (int i = 0; i < 10; ++i) {
    gibbs_sweep(a, hp);
    gibbs_sweep(b, hp);
  }
  REQUIRE(a.z == b.z);
  REQUIRE(a.rng.state() == b.rng.state());
}

TEST_CASE("estimate_phi matches hand arithmetic") {
  SamplerState st;
  st.K = 1;
  st.V = 3;
  st.word_topic = {2, 3, 5};
  st.topic_total = {10};
  st.doc_topic = {};
  st.doc_total = {};

  HyperParams hp;
  hp.K = 1;
  hp.alpha = {1.0};
  hp.beta = {0.1, 0.1, 0.1};
  hp.alpha_sum = 1.0;
  hp.beta_sum = 0.3;

  const auto phi = estimate_phi(st, hp);
  REQUIRE(phi(0, 0) == Catch::Approx(2.1 / 10.3).epsilon(1e-12));
  REQUIRE(phi(0, 1) == Catch::Approx(3.1 / 10.3).epsilon(1e-12));
  REQUIRE(phi(0, 2) == Catch::Approx(5.1 / 10.3).epsilon(1e-12));
  REQUIRE(phi(0, 0) == Catch::Approx(0.2039).margin(5e-5));
  REQUIRE(phi(0, 1) == Catch::Approx(0.3010).margin(5e-5));
  REQUIRE(phi(0, 2) == Catch::Approx(0.4951).margin(5e-5));
}

TEST_CASE("estimate_phi prior-only and small-beta limits") {
  SamplerState st;
  st.K = 2;
  st.V = 4;
  st.word_topic.assign(8, 0);
  st.topic_total = {0, 0};

  auto hp = HyperParams::symmetric(2, 4, 3.0, 0.01);
  const auto uniform = estimate_phi(st, hp);
  for (int v = 0; v < 4; ++v) REQUIRE(uniform(0, v) == Catch::Approx(0.25).epsilon(1e-12));

  st.word_topic = {3, 0, 1, 0, 0, 0, 4, 0};  // topic 0 counts: v0=3, v1=1, v3=4
  st.topic_total = {8, 0};
  hp = HyperParams::symmetric(2, 4, 3.0, 1e-13);
  const auto empirical = estimate_phi(st, hp);
  REQUIRE(empirical(0, 0) == Catch::Approx(3.0 / 8.0).epsilon(1e-9));
  REQUIRE(empirical(0, 1) == Catch::Approx(1.0 / 8.0).epsilon(1e-9));
  REQUIRE(empirical(0, 3) == Catch::Approx(4.0 / 8.0).epsilon(1e-9));
}

TEST_CASE("estimate_theta matches hand arithmetic") {
  SamplerState st;
  st.K = 2;
  st.V = 1;
  st.doc_topic = {4, 0};
  st.doc_total = {4};
  st.word_topic = {4, 0};
  st.topic_total = {4, 0};

  HyperParams hp;
  hp.K = 2;
  hp.alpha = {1.5, 1.5};
  hp.beta = {0.1};
  hp.alpha_sum = 3.0;
  hp.beta_sum = 0.1;

  const auto theta = estimate_theta(st, hp);
  REQUIRE(theta(0, 0) == Catch::Approx(5.5 / 7.0).epsilon(1e-12));
  REQUIRE(theta(0, 1) == Catch::Approx(1.5 / 7.0).epsilon(1e-12));

  // A document with no tokens falls back to the prior.
  st.doc_topic = {0, 0};
  st.doc_total = {0};
  const auto prior = estimate_theta(st, hp);
  REQUIRE(prior(0, 0) == Catch::Approx(0.5).epsilon(1e-12));

  const auto corpus = make_corpus({{0}}, 1);
  const auto hp1 = HyperParams::symmetric(1, 1);
  const auto st1 = init_state(corpus, hp1, 0);
  REQUIRE(estimate_theta(st1, hp1)(0, 0) == 1.0);
}

TEST_CASE("phi and theta rows are stochastic after sampling") {
  const auto corpus = random_corpus(15, 40, 8);
  const auto hp = HyperParams::symmetric(4, 15);
  auto st = init_state(corpus, hp, 2);
  for (int i = 0; i < 5; ++i) gibbs_sweep(st, hp);
  REQUIRE(estimate_phi(st, hp).row_stochastic(1e-9));
  REQUIRE(estimate_theta(st, hp).row_stochastic(1e-9));
}

TEST_CASE("collapsed_loglik base cases") {
  // No documents: empty product.
  SamplerState empty;
  empty.K = 2;
  empty.V = 3;
  empty.word_topic.assign(6, 0);
  empty.topic_total = {0, 0};
  const auto hp_empty = HyperParams::symmetric(2, 3, 1.0, 0.5);
  REQUIRE(collapsed_loglik(empty, hp_empty) == 0.0);

  // One token, K=1, V=2, beta=0.5: log(beta_w / beta_sum).
  const auto corpus = make_corpus({{0}}, 2);
  const auto hp = HyperParams::symmetric(1, 2, 1.0, 0.5);
  const auto st = init_state(corpus, hp, 0);
  REQUIRE(collapsed_loglik(st, hp) == Catch::Approx(std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("collapsed_loglik is invariant under topic relabeling") {
  const auto corpus = random_corpus(9, 15, 44);
  const auto hp = HyperParams::symmetric(2, 9);
  auto st = init_state(corpus, hp, 6);
  for (int i = 0; i < 3; ++i) gibbs_sweep(st, hp);
  const double before = collapsed_loglik(st, hp);

  // Swap topic labels 0 and 1 everywhere. With K=2 the per-row sums are two
  // commutative additions, so the value is bit-identical.
  SamplerState swapped = st;
  for (auto& k : swapped.z) k = 1 - k;
  for (std::int32_t v = 0; v < st.V; ++v)
    std::swap(swapped.word_topic[v * 2], swapped.word_topic[v * 2 + 1]);
  for (std::int64_t d = 0; d < st.n_docs(); ++d)
    std::swap(swapped.doc_topic[d * 2], swapped.doc_topic[d * 2 + 1]);
  std::swap(swapped.topic_total[0], swapped.topic_total[1]);
  REQUIRE(collapsed_loglik(swapped, hp) == before);

  // K=4 permutation agrees to rounding.
  const auto hp4 = HyperParams::symmetric(4, 9);
  auto st4 = init_state(corpus, hp4, 6);
  gibbs_sweep(st4, hp4);
  const double base4 = collapsed_loglik(st4, hp4);
  SamplerState rot = st4;
  const auto perm = std::vector<std::int32_t>{2, 3, 1, 0};
  for (auto& k : rot.z) k = perm[k];
  std::fill(rot.word_topic.begin(), rot.word_topic.end(), 0);
  std::fill(rot.doc_topic.begin(), rot.doc_topic.end(), 0);
  std::fill(rot.topic_total.begin(), rot.topic_total.end(), 0);
  for (std::int64_t d = 0; d < rot.n_docs(); ++d) {
    for (std::size_t i = rot.doc_offset[d]; i < rot.doc_offset[d + 1]; ++i) {
      ++rot.word_topic[static_cast<std::size_t>(rot.words[i]) * 4 + rot.z[i]];
      ++rot.doc_topic[static_cast<std::size_t>(d) * 4 + rot.z[i]];
      ++rot.topic_total[rot.z[i]];
    }
  }
  REQUIRE(collapsed_loglik(rot, hp4) == Catch::Approx(base4).margin(1e-9));
}

TEST_CASE("run_chain records samples on the inclusive burn-in grid") {
  const auto corpus = random_corpus(6, 10, 21);
  const auto hp = HyperParams::symmetric(2, 6);

  ChainConfig cfg;
  cfg.iterations = 50;
  cfg.burn_in = 30;
  cfg.lag = 5;
  cfg.chains = 1;
  cfg.seed = 4;
  cfg.loglik_every = 10;
  const auto r = run_chain(corpus, hp, cfg, 0);
  REQUIRE(r.samples.size() == 5);
  std::vector<std::int64_t> recorded;
  for (const auto& s : r.samples) recorded.push_back(s.iteration);
  REQUIRE(recorded == std::vector<std::int64_t>{30, 35, 40, 45, 50});
  REQUIRE(r.trace.size() == 6);  // iterations 0,10,...,50
  REQUIRE(r.trace.front().iteration == 0);
  REQUIRE(r.trace.back().iteration == 50);

  ChainConfig tight;
  tight.iterations = 3;
  tight.burn_in = 0;
  tight.lag = 1;
  tight.chains = 1;
  tight.seed = 4;
  REQUIRE(run_chain(corpus, hp, tight, 0).samples.size() == 4);
}

TEST_CASE("chain id salts the seed") {
  const auto corpus = random_corpus(6, 10, 22);
  const auto hp = HyperParams::symmetric(2, 6);
  ChainConfig cfg;
  cfg.iterations = 20;
  cfg.burn_in = 10;
  cfg.lag = 10;
  cfg.chains = 2;
  cfg.seed = 9;
  const auto a = run_chain(corpus, hp, cfg, 0);
  const auto b = run_chain(corpus, hp, cfg, 1);
  REQUIRE(a.trace.size() == b.trace.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.trace.size(); ++i)
    if (a.trace[i].loglik != b.trace[i].loglik) any_diff = true;
  REQUIRE(any_diff);

  const auto a2 = run_chain(corpus, hp, cfg, 0);
  REQUIRE(a2.samples.size() == a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    REQUIRE(a2.samples[i].phi == a.samples[i].phi);
}

TEST_CASE("parallel chains equal sequential chains") {
  const auto corpus = random_corpus(6, 12, 23);
  const auto hp = HyperParams::symmetric(2, 6);
  ChainConfig cfg;
  cfg.iterations = 15;
  cfg.burn_in = 5;
  cfg.lag = 5;
  cfg.chains = 3;
  cfg.seed = 10;
  const auto seq = run_chains(corpus, hp, cfg, 1);
  const auto par = run_chains(corpus, hp, cfg, 3);
  REQUIRE(seq.size() == par.size());
  for (std::size_t c = 0; c < seq.size(); ++c) {
    REQUIRE(seq[c].chain_id == par[c].chain_id);
    REQUIRE(seq[c].samples.size() == par[c].samples.size());
    for (std::size_t s = 0; s < seq[c].samples.size(); ++s)
      REQUIRE(seq[c].samples[s].phi == par[c].samples[s].phi);
  }
}

TEST_CASE("default chain config records 5 samples per chain, 20 across 4 chains") {
  ChainConfig cfg;
  cfg.validate();
  REQUIRE(cfg.iterations == 50000);
  REQUIRE(cfg.burn_in == 30000);
  REQUIRE(cfg.lag == 5000);
  REQUIRE(cfg.chains == 4);
  REQUIRE(cfg.loglik_every == 10);
  std::int64_t recorded = 0;
  for (std::int64_t t = 0; t <= cfg.iterations; ++t)
    if (t >= cfg.burn_in && (t - cfg.burn_in) % cfg.lag == 0) ++recorded;
  REQUIRE(recorded == 5);
  REQUIRE(recorded * cfg.chains == 20);
}

TEST_CASE("chain config validation") {
  ChainConfig bad;
  bad.burn_in = 60000;  // >= iterations
  REQUIRE_THROWS_MATCHES(bad.validate(), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::ConfigError; }));
  ChainConfig no_window;
  no_window.iterations = 10;
  no_window.burn_in = 8;
  no_window.lag = 5;
  REQUIRE_THROWS_AS(no_window.validate(), Error);
}

TEST_CASE("sampled posterior approaches the enumerated posterior") {
  // 3 docs x 2 tokens, V=3, K=2: 64 assignment configurations. A reduced-load
  // version of the acceptance check.
  const auto corpus = make_corpus({{0, 1}, {1, 2}, {0, 2}}, 3, 2);
  HyperParams hp;
  hp.K = 2;
  hp.alpha = {0.5, 0.5};
  hp.beta = {0.5, 0.5, 0.5};
  hp.alpha_sum = 1.0;
  hp.beta_sum = 1.5;

  // Exact posterior over configurations via Polya products, coded from the
  // count definitions rather than through collapsed_loglik.
  std::vector<double> exact(64);
  double total = 0.0;
  for (int code = 0; code < 64; ++code) {
    int z[6];
    for (int t = 0; t < 6; ++t) z[t] = (code >> t) & 1;
    const int words[6] = {0, 1, 1, 2, 0, 2};
    const int docs[6] = {0, 0, 1, 1, 2, 2};
    double n_kv[2][3] = {};
    double n_dk[3][2] = {};
    double n_k[2] = {};
    for (int t = 0; t < 6; ++t) {
      n_kv[z[t]][words[t]] += 1;
      n_dk[docs[t]][z[t]] += 1;
      n_k[z[t]] += 1;
    }
    double lg = 0.0;
    for (int d = 0; d < 3; ++d) {
      lg += std::lgamma(1.0) - std::lgamma(2.0 + 1.0);
      for (int k = 0; k < 2; ++k) lg += std::lgamma(n_dk[d][k] + 0.5) - std::lgamma(0.5);
    }
    for (int k = 0; k < 2; ++k) {
      lg += std::lgamma(1.5) - std::lgamma(n_k[k] + 1.5);
      for (int v = 0; v < 3; ++v) lg += std::lgamma(n_kv[k][v] + 0.5) - std::lgamma(0.5);
    }
    exact[code] = std::exp(lg);
    total += exact[code];
  }
  for (auto& p : exact) p /= total;

  auto st = init_state(corpus, hp, 1234);
  for (int i = 0; i < 2000; ++i) gibbs_sweep(st, hp);
  std::vector<double> counts(64, 0.0);
  const int sweeps = 60000;
  for (int i = 0; i < sweeps; ++i) {
    gibbs_sweep(st, hp);
    int code = 0;
    for (int t = 0; t < 6; ++t) code |= st.z[t] << t;
    counts[code] += 1.0;
  }
  double tv = 0.0;
  for (int c = 0; c < 64; ++c) tv += std::fabs(counts[c] / sweeps - exact[c]);
  tv /= 2.0;
  REQUIRE(tv < 0.05);
}

TEST_CASE("run directory save and load round trip") {
  const auto dir = fs::temp_directory_path() /
                   ("tf_gibbs_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  const auto corpus = random_corpus(6, 10, 3);
  const auto hp = HyperParams::symmetric(2, 6);
  ChainConfig cfg;
  cfg.iterations = 12;
  cfg.burn_in = 6;
  cfg.lag = 3;
  cfg.chains = 2;
  cfg.seed = 77;
  cfg.store_theta = true;
  const auto chains = run_chains(corpus, hp, cfg, 1);
  save_run(dir, chains, hp, cfg);

  const auto samples = load_samples(dir);
  REQUIRE(samples.size() == 6);
  REQUIRE(samples.front().chain_id == 0);
  REQUIRE(samples.front().iteration == 6);
  REQUIRE(samples.front().alpha == hp.alpha);
  for (std::size_t i = 0; i < samples.front().phi.rows(); ++i)
    REQUIRE(samples.front().phi.row_stochastic(1e-6));

  const auto traces = load_traces(dir);
  REQUIRE(traces.size() == 2);
  REQUIRE(traces[0].size() == chains[0].trace.size());
  REQUIRE(traces[0][1].iteration == chains[0].trace[1].iteration);
  fs::remove_all(dir);
}
