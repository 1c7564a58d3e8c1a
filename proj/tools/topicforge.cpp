#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "topicforge/cli.hpp"
#include "topicforge/corpus.hpp"
#include "topicforge/gibbs.hpp"
#include "topicforge/heldout.hpp"
#include "topicforge/io.hpp"
#include "topicforge/metrics.hpp"
#include "topicforge/summary.hpp"
#include "topicforge/version.hpp"

namespace tf = topicforge;
namespace fs = std::filesystem;

namespace {

// Flat key=value config support. CLI11's own config hook is not processed
// for subcommand-attached options, so the file is expanded into synthetic
// "--key=value" arguments instead, skipping keys already present on the
// command line. Flags win over the file; the file wins over environment
// defaults.
std::vector<std::string> expand_config_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;
  tf::require(fs::exists(config_path), tf::Errc::ConfigError,
              "config file not found: " + config_path);
  for (const auto& raw_line : tf::read_lines(config_path)) {
    std::string line = raw_line;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto begin = line.find_first_not_of(" \t");
    if (begin == std::string::npos) continue;
    const auto end = line.find_last_not_of(" \t");
    line = line.substr(begin, end - begin + 1);
    const auto eq = line.find('=');
    tf::require(eq != std::string::npos && eq > 0, tf::Errc::ConfigError,
                "config line is not key=value: '" + raw_line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "config") continue;
    const std::string flag = "--" + key;
    bool present = false;
    for (const auto& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) {
        present = true;
        break;
      }
    }
    if (!present) args.push_back(flag + "=" + value);
  }
  return args;
}

tf::DocLenSpec parse_doc_len(const std::string& spec) {
  const auto colon = spec.find(':');
  tf::DocLenSpec out;
  if (colon == std::string::npos) {
    out.min_len = out.max_len = static_cast<std::int32_t>(tf::parse_int(spec, "doc-len"));
  } else {
    out.min_len = static_cast<std::int32_t>(tf::parse_int(spec.substr(0, colon), "doc-len lo"));
    out.max_len = static_cast<std::int32_t>(tf::parse_int(spec.substr(colon + 1), "doc-len hi"));
  }
  return out;
}

std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }

// Co-occurrence stats from either a cached CSV or a training corpus.
tf::CoocStats load_stats(const std::string& cooc_path, const std::string& train_path) {
  if (!cooc_path.empty()) return tf::read_cooc_csv(cooc_path);
  tf::require(!train_path.empty(), tf::Errc::ConfigError,
              "need --cooc or --train for coherence statistics");
  return tf::cooccurrence_stats(tf::read_corpus(train_path).corpus);
}

struct IngestOpts {
  std::string baskets, out;
  std::size_t vocab_size = 10000;
  std::int32_t min_basket = 3;
  double test_fraction = 0.0;
  std::uint64_t seed = 0;
  bool cooc = false;
};

void run_ingest(const IngestOpts& o) {
  const auto raw = tf::read_baskets_jsonl(o.baskets);
  const auto vocab = tf::build_vocabulary(raw, o.vocab_size);
  const auto result = tf::ingest_baskets(raw, vocab, o.min_basket);
  fs::create_directories(o.out);

  std::vector<std::string> outputs = {"corpus.json"};
  tf::write_corpus(fs::path(o.out) / "corpus.json", result.corpus, vocab);
  const tf::Corpus* stats_corpus = &result.corpus;
  tf::Corpus train, test;
  if (o.test_fraction > 0.0) {
    std::tie(train, test) = tf::split_corpus(result.corpus, o.test_fraction, o.seed);
    tf::write_corpus(fs::path(o.out) / "train.json", train, vocab);
    tf::write_corpus(fs::path(o.out) / "test.json", test, vocab);
    outputs.push_back("train.json");
    outputs.push_back("test.json");
    stats_corpus = &train;
  }
  if (o.cooc) {
    tf::write_cooc_csv(fs::path(o.out) / "cooc.csv", tf::cooccurrence_stats(*stats_corpus));
    outputs.push_back("cooc.csv");
  }
  tf::json stats;
  stats["kept"] = result.stats.kept;
  stats["dropped_small"] = result.stats.dropped_small;
  stats["tokens_dropped_oov"] = result.stats.tokens_dropped_oov;
  tf::write_json_file(fs::path(o.out) / "stats.json", stats);
  outputs.push_back("stats.json");

  std::map<std::string, std::string> cfg = {
      {"baskets", o.baskets},
      {"vocab-size", std::to_string(o.vocab_size)},
      {"min-basket", std::to_string(o.min_basket)},
      {"test-fraction", tf::format_g9(o.test_fraction)},
      {"seed", fmt_u64(o.seed)},
      {"cooc", o.cooc ? "true" : "false"},
  };
  tf::write_manifest(o.out, "ingest", cfg, {{"baskets", o.baskets, tf::file_digest(o.baskets)}},
                     outputs);
  std::cout << "ingest: kept " << result.stats.kept << " baskets, dropped "
            << result.stats.dropped_small << " below min size, dropped "
            << result.stats.tokens_dropped_oov << " out-of-vocabulary tokens, V="
            << vocab.size() << "\n";
}

struct SynthOpts {
  std::string out;
  std::int32_t topics = 0;
  std::int32_t vocab = 0;
  std::int64_t docs = 0;
  std::string doc_len = "5:15";
  double alpha_true = 0.4;
  std::string phi = "blocks";
  double phi_concentration = 1.0;
  std::string phi_file;
  std::int32_t min_basket = 3;
  double test_fraction = 0.0;
  std::uint64_t seed = 0;
  bool cooc = false;
};

void run_synth(const SynthOpts& o) {
  tf::SynthConfig cfg;
  cfg.K = o.topics;
  cfg.V = o.vocab;
  cfg.D = o.docs;
  cfg.doc_len = parse_doc_len(o.doc_len);
  cfg.alpha_true.assign(o.topics, o.alpha_true);
  cfg.seed = o.seed;
  cfg.min_basket_size = o.min_basket;
  if (!o.phi_file.empty()) {
    cfg.phi = tf::PhiSpec::explicit_rows(tf::matrix_from_csv(o.phi_file));
  } else if (o.phi == "blocks") {
    cfg.phi = tf::PhiSpec::blocks();
  } else if (o.phi == "random") {
    cfg.phi = tf::PhiSpec::random_dirichlet(o.phi_concentration);
  } else {
    tf::fail(tf::Errc::ConfigError, "unknown --phi kind '" + o.phi + "'");
  }

  const auto result = tf::generate_synthetic(cfg);
  tf::Vocabulary vocab;
  for (std::int32_t v = 0; v < o.vocab; ++v) {
    vocab.labels.push_back("p" + std::to_string(v));
    vocab.index.emplace(vocab.labels.back(), v);
    vocab.frequency.push_back(1);
  }

  fs::create_directories(o.out);
  std::vector<std::string> outputs = {"corpus.json", "truth_phi.csv", "truth.json"};
  tf::write_corpus(fs::path(o.out) / "corpus.json", result.corpus, vocab);
  tf::write_text_file(fs::path(o.out) / "truth_phi.csv", tf::matrix_to_csv(result.truth.phi_true));
  tf::json truth;
  truth["alpha_true"] = result.truth.alpha_true;
  truth["seed"] = result.truth.seed;
  truth["K"] = o.topics;
  truth["V"] = o.vocab;
  tf::write_json_file(fs::path(o.out) / "truth.json", truth);

  const tf::Corpus* stats_corpus = &result.corpus;
  tf::Corpus train, test;
  if (o.test_fraction > 0.0) {
    std::tie(train, test) = tf::split_corpus(result.corpus, o.test_fraction, o.seed);
    tf::write_corpus(fs::path(o.out) / "train.json", train, vocab);
    tf::write_corpus(fs::path(o.out) / "test.json", test, vocab);
    outputs.push_back("train.json");
    outputs.push_back("test.json");
    stats_corpus = &train;
  }
  if (o.cooc) {
    tf::write_cooc_csv(fs::path(o.out) / "cooc.csv", tf::cooccurrence_stats(*stats_corpus));
    outputs.push_back("cooc.csv");
  }

  std::map<std::string, std::string> cfgmap = {
      {"topics", std::to_string(o.topics)},
      {"vocab", std::to_string(o.vocab)},
      {"docs", std::to_string(o.docs)},
      {"doc-len", o.doc_len},
      {"alpha-true", tf::format_g9(o.alpha_true)},
      {"phi", o.phi_file.empty() ? o.phi : o.phi_file},
      {"phi-concentration", tf::format_g9(o.phi_concentration)},
      {"min-basket", std::to_string(o.min_basket)},
      {"test-fraction", tf::format_g9(o.test_fraction)},
      {"seed", fmt_u64(o.seed)},
      {"cooc", o.cooc ? "true" : "false"},
  };
  tf::write_manifest(o.out, "synth", cfgmap, {}, outputs);
  std::cout << "synth: " << result.corpus.n_docs() << " documents, N=" << result.corpus.N
            << ", V=" << o.vocab << "\n";
}

struct TrainOpts {
  std::string corpus, out;
  std::int32_t topics = 0;
  tf::ChainConfig chain;
  double alpha_sum = 3.0;
  double beta = 0.01;
  bool theta = false;
  int jobs = 1;
};

void run_train(const TrainOpts& o) {
  const auto file = tf::read_corpus(o.corpus);
  const auto hp = tf::HyperParams::symmetric(o.topics, file.corpus.V, o.alpha_sum, o.beta);
  tf::ChainConfig cfg = o.chain;
  cfg.store_theta = o.theta;
  cfg.validate();

  const auto results = tf::run_chains(file.corpus, hp, cfg, o.jobs);
  tf::save_run(o.out, results, hp, cfg);

  std::vector<std::string> outputs = {"samples/"};
  for (const auto& r : results) outputs.push_back("trace_c" + std::to_string(r.chain_id) + ".csv");

  std::map<std::string, std::string> cfgmap = {
      {"corpus", o.corpus},
      {"topics", std::to_string(o.topics)},
      {"chains", std::to_string(cfg.chains)},
      {"iterations", std::to_string(cfg.iterations)},
      {"burn-in", std::to_string(cfg.burn_in)},
      {"lag", std::to_string(cfg.lag)},
      {"loglik-every", std::to_string(cfg.loglik_every)},
      {"alpha-sum", tf::format_g9(o.alpha_sum)},
      {"beta", tf::format_g9(o.beta)},
      {"seed", fmt_u64(cfg.seed)},
      {"theta", o.theta ? "true" : "false"},
  };
  tf::write_manifest(o.out, "train", cfgmap, {{"corpus", o.corpus, tf::file_digest(o.corpus)}},
                     outputs);
  std::size_t n_samples = 0;
  for (const auto& r : results) n_samples += r.samples.size();
  std::cout << "train: " << cfg.chains << " chains, " << n_samples << " samples recorded in "
            << o.out << "\n";
}

struct EvaluateOpts {
  std::string samples, test, train, cooc, out;
  tf::HeldoutConfig heldout;
  std::int32_t top_n = 15;
  int jobs = 1;
};

void run_evaluate(const EvaluateOpts& o) {
  const auto samples = tf::load_samples(o.samples);
  const auto test = tf::read_corpus(o.test).corpus;
  const auto stats = load_stats(o.cooc, o.train);
  fs::create_directories(o.out);

  std::vector<tf::Matrix> matrices;
  matrices.reserve(samples.size());
  for (const auto& s : samples) matrices.push_back(s.phi);

  std::vector<std::string> outputs;
  std::vector<double> perp_per_sample;
  std::vector<double> npmi_all, cd_all, cred_all;
  std::vector<double> npmi_means, cd_means, cred_means;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    auto report = tf::evaluate_sample(static_cast<std::int32_t>(s), matrices, stats, o.top_n);
    const auto px = tf::perplexity(test, samples[s].phi, samples[s].alpha, o.heldout, o.jobs);
    report.perplexity = px.perplexity;
    report.perplexity_se = px.se;
    perp_per_sample.push_back(px.perplexity);

    const std::string tag = tf::sample_stem(samples[s].chain_id, samples[s].iteration);
    tf::write_report_csv(fs::path(o.out) / ("topics_" + tag + ".csv"), report);
    outputs.push_back("topics_" + tag + ".csv");
    std::string heldout_csv = "doc_id,tokens,loglik\n";
    for (std::size_t d = 0; d < test.docs.size(); ++d) {
      heldout_csv += test.doc_ids[d] + "," + std::to_string(test.docs[d].size()) + "," +
                     tf::format_g9(px.doc_loglik[d]) + "\n";
    }
    tf::write_text_file(fs::path(o.out) / ("heldout_" + tag + ".csv"), heldout_csv);
    outputs.push_back("heldout_" + tag + ".csv");

    npmi_all.insert(npmi_all.end(), report.npmi.begin(), report.npmi.end());
    cd_all.insert(cd_all.end(), report.cd_min.begin(), report.cd_min.end());
    cred_all.insert(cred_all.end(), report.credibility.begin(), report.credibility.end());
    if (!report.npmi.empty()) npmi_means.push_back(tf::mean_of(report.npmi));
    if (!report.cd_min.empty()) cd_means.push_back(tf::mean_of(report.cd_min));
    if (!report.credibility.empty()) cred_means.push_back(tf::mean_of(report.credibility));
  }

  const auto block = [](const std::vector<double>& pooled, const std::vector<double>& means) {
    tf::json j;
    if (!pooled.empty()) {
      j["mean"] = tf::mean_of(pooled);
      j["se_topics"] = tf::se_of(pooled);
    }
    if (!means.empty()) {
      j["per_sample_mean"] = means;
      j["se_samples"] = tf::se_of(means);
    }
    return j;
  };
  tf::json agg;
  agg["model"] = "lda-samples";
  agg["n_samples"] = samples.size();
  agg["topics"] = matrices.front().rows();
  agg["particles"] = o.heldout.particles;
  agg["seed"] = o.heldout.seed;
  agg["top_n"] = o.top_n;
  tf::json perp;
  perp["per_sample"] = perp_per_sample;
  perp["mean"] = tf::mean_of(perp_per_sample);
  perp["se_samples"] = tf::se_of(perp_per_sample);
  agg["perplexity"] = std::move(perp);
  agg["npmi"] = block(npmi_all, npmi_means);
  agg["cd_min"] = block(cd_all, cd_means);
  agg["credibility"] = block(cred_all, cred_means);
  tf::EvalReport pooled;
  pooled.npmi = npmi_all;
  pooled.credibility = cred_all;
  agg["bands"] = tf::band_counts(pooled);
  tf::write_json_file(fs::path(o.out) / "aggregate.json", agg);
  outputs.push_back("aggregate.json");

  std::map<std::string, std::string> cfgmap = {
      {"samples", o.samples},
      {"test", o.test},
      {"train", o.train},
      {"cooc", o.cooc},
      {"particles", std::to_string(o.heldout.particles)},
      {"resample", o.heldout.resample_previous ? "true" : "false"},
      {"seed", fmt_u64(o.heldout.seed)},
      {"top-n", std::to_string(o.top_n)},
  };
  std::vector<tf::ManifestInput> inputs = {{"test", o.test, tf::file_digest(o.test)}};
  if (!o.train.empty()) inputs.push_back({"train", o.train, tf::file_digest(o.train)});
  if (!o.cooc.empty()) inputs.push_back({"cooc", o.cooc, tf::file_digest(o.cooc)});
  tf::write_manifest(o.out, "evaluate", cfgmap, inputs, outputs);

  std::cout << "evaluate: " << samples.size() << " samples; perplexity "
            << tf::format_g9(tf::mean_of(perp_per_sample)) << " +- "
            << tf::format_g9(tf::se_of(perp_per_sample));
  if (!npmi_all.empty())
    std::cout << "; npmi " << tf::format_g9(tf::mean_of(npmi_all));
  if (!cd_all.empty()) std::cout << "; cd_min " << tf::format_g9(tf::mean_of(cd_all));
  if (!cred_all.empty()) std::cout << "; credibility " << tf::format_g9(tf::mean_of(cred_all));
  std::cout << "\n";
}

struct ClusterOpts {
  std::string samples, replication, test, train, cooc, out;
  double threshold = 0.35;
  std::int32_t min_size = 1;
  bool within_sample = false;
  double alpha_sum = 3.0;
  tf::HeldoutConfig heldout;
  std::int32_t top_n = 15;
  int jobs = 1;
};

void run_cluster(const ClusterOpts& o) {
  const auto samples = tf::load_samples(o.samples);
  const auto pool = tf::pool_topics(samples);
  const auto mode = o.within_sample ? tf::ClusterMode::WithinSample : tf::ClusterMode::Constrained;
  const auto clusters = tf::constrained_ahc(pool, o.threshold, o.within_sample, o.jobs);
  const auto model =
      tf::filter_clusters(clusters, o.min_size, o.threshold, mode, pool.S, pool.V);
  tf::save_clustered_model(o.out, model, samples);
  std::vector<std::string> outputs = {"model.json", "centroids.csv"};

  if (model.clusters.empty())
    std::cout << "cluster: EmptyModel — no cluster reaches min_size " << o.min_size << "\n";
  else
    std::cout << "cluster: " << model.n_clusters() << " clustered topics (from "
              << pool.entries.size() << " pooled) at threshold " << tf::format_g9(o.threshold)
              << ", min_size " << o.min_size << "\n";

  if (!o.replication.empty() && !o.test.empty()) {
    const auto rep_samples = tf::load_samples(o.replication);
    const auto rep_pool = tf::pool_topics(rep_samples);
    const auto rep_clusters = tf::constrained_ahc(rep_pool, o.threshold, o.within_sample, o.jobs);
    const auto rep_model = tf::filter_clusters(rep_clusters, o.min_size, o.threshold, mode,
                                               rep_pool.S, rep_pool.V);
    tf::save_clustered_model(fs::path(o.out) / "replication", rep_model, rep_samples);
    const auto test = tf::read_corpus(o.test).corpus;
    const auto stats = load_stats(o.cooc, o.train);
    const auto report =
        tf::evaluate_model(model, test, stats, rep_model, o.alpha_sum, o.heldout, o.top_n, o.jobs);
    tf::write_report_csv(fs::path(o.out) / "report.csv", report);
    tf::json jr;
    jr["n_clusters"] = model.n_clusters();
    jr["perplexity"] = report.perplexity;
    jr["perplexity_se"] = report.perplexity_se;
    if (auto m = report.npmi_mean()) {
      jr["npmi_mean"] = *m;
      jr["npmi_se"] = tf::se_of(report.npmi);
    }
    if (auto m = report.cd_min_mean()) {
      jr["cd_min_mean"] = *m;
      jr["cd_min_se"] = tf::se_of(report.cd_min);
    }
    if (auto m = report.credibility_mean()) {
      jr["credibility_mean"] = *m;
      jr["credibility_se"] = tf::se_of(report.credibility);
    }
    jr["bands"] = tf::band_counts(report);
    tf::write_json_file(fs::path(o.out) / "report.json", jr);
    outputs.push_back("report.csv");
    outputs.push_back("report.json");
    std::cout << "cluster: perplexity " << tf::format_g9(report.perplexity) << " +- "
              << tf::format_g9(report.perplexity_se) << "\n";
  }

  std::map<std::string, std::string> cfgmap = {
      {"samples", o.samples},
      {"replication", o.replication},
      {"test", o.test},
      {"train", o.train},
      {"cooc", o.cooc},
      {"threshold", tf::format_g9(o.threshold)},
      {"min-size", std::to_string(o.min_size)},
      {"within-sample", o.within_sample ? "true" : "false"},
      {"alpha-sum", tf::format_g9(o.alpha_sum)},
      {"particles", std::to_string(o.heldout.particles)},
      {"resample", o.heldout.resample_previous ? "true" : "false"},
      {"seed", fmt_u64(o.heldout.seed)},
      {"top-n", std::to_string(o.top_n)},
  };
  tf::write_manifest(o.out, "cluster", cfgmap, {}, outputs);
}

struct SweepOpts {
  std::string samples, replication, test, train, cooc, out;
  std::string thresholds = "0:0.55:0.05";
  std::string min_sizes = "1,5,10,20";
  bool within_sample = false;
  double alpha_sum = 3.0;
  tf::HeldoutConfig heldout;
  std::int32_t top_n = 15;
  int jobs = 1;
};

void run_sweep(const SweepOpts& o) {
  const auto pool = tf::pool_topics(tf::load_samples(o.samples));
  const auto rep_pool = tf::pool_topics(tf::load_samples(o.replication));
  const auto test = tf::read_corpus(o.test).corpus;
  const auto stats = load_stats(o.cooc, o.train);
  const auto mode = o.within_sample ? tf::ClusterMode::WithinSample : tf::ClusterMode::Constrained;

  const auto report =
      tf::sweep(pool, rep_pool, tf::parse_threshold_spec(o.thresholds),
                tf::parse_int_list(o.min_sizes), test, stats, o.alpha_sum, o.heldout, mode,
                o.top_n, o.jobs);
  fs::create_directories(o.out);
  tf::write_sweep_csv(fs::path(o.out) / "sweep.csv", report);

  std::map<std::string, std::string> cfgmap = {
      {"samples", o.samples},
      {"replication", o.replication},
      {"test", o.test},
      {"train", o.train},
      {"cooc", o.cooc},
      {"thresholds", o.thresholds},
      {"min-sizes", o.min_sizes},
      {"within-sample", o.within_sample ? "true" : "false"},
      {"alpha-sum", tf::format_g9(o.alpha_sum)},
      {"particles", std::to_string(o.heldout.particles)},
      {"resample", o.heldout.resample_previous ? "true" : "false"},
      {"seed", fmt_u64(o.heldout.seed)},
      {"top-n", std::to_string(o.top_n)},
  };
  tf::write_manifest(o.out, "sweep", cfgmap, {{"test", o.test, tf::file_digest(o.test)}},
                     {"sweep.csv"});
  std::cout << "sweep: " << report.cells.size() << " cells written to "
            << (fs::path(o.out) / "sweep.csv").string() << "\n";
}

struct ReportOpts {
  std::string sweep, model, sample_csv, corpus, out;
  std::int32_t top_n = 15;
  bool svg = false;
};

void run_report(const ReportOpts& o) {
  fs::create_directories(o.out);
  std::vector<std::string> outputs;
  const char* metrics[] = {"perplexity", "npmi", "cd_min", "credibility"};

  if (!o.sweep.empty()) {
    const auto rows = tf::read_sweep_csv(o.sweep);
    std::vector<double> thresholds;
    std::vector<std::int32_t> sizes;
    for (const auto& r : rows) {
      if (std::find(thresholds.begin(), thresholds.end(), r.threshold) == thresholds.end())
        thresholds.push_back(r.threshold);
      if (std::find(sizes.begin(), sizes.end(), r.min_size) == sizes.end())
        sizes.push_back(r.min_size);
    }
    std::sort(thresholds.begin(), thresholds.end());
    std::sort(sizes.begin(), sizes.end());
    for (const char* metric : metrics) {
      std::string csv = "threshold";
      for (auto s : sizes) csv += ",min_size_" + std::to_string(s);
      csv += '\n';
      for (double t : thresholds) {
        csv += tf::format_g9(t);
        for (auto s : sizes) {
          csv += ',';
          bool found = false;
          for (const auto& r : rows) {
            if (r.metric == metric && r.threshold == t && r.min_size == s) {
              csv += tf::format_g9(r.mean);
              found = true;
              break;
            }
          }
          if (!found) csv += "nan";
        }
        csv += '\n';
      }
      const std::string name = std::string("sweep_") + metric + ".csv";
      tf::write_text_file(fs::path(o.out) / name, csv);
      outputs.push_back(name);
      if (o.svg) {
        const std::string svg_name = std::string("sweep_") + metric + ".svg";
        tf::write_text_file(fs::path(o.out) / svg_name, tf::render_sweep_svg(rows, metric));
        outputs.push_back(svg_name);
      }
    }
  }

  if (!o.model.empty() || !o.sample_csv.empty()) {
    tf::require(!o.corpus.empty(), tf::Errc::ConfigError,
                "report: --corpus is required for topic cards");
    const auto vocab = tf::read_corpus(o.corpus).vocab;
    std::vector<tf::TopicCard> cards;
    if (!o.model.empty()) {
      const auto model = tf::load_clustered_model(o.model);
      tf::require(!model.clusters.empty(), tf::Errc::EmptyModel, "report: model has no clusters");
      std::vector<std::int32_t> sizes;
      for (const auto& c : model.clusters) sizes.push_back(c.size);
      cards = tf::make_topic_cards(model.centroid_matrix(), vocab.labels, o.top_n, &sizes,
                                   model.S);
    } else {
      cards = tf::make_topic_cards(tf::matrix_from_csv(o.sample_csv), vocab.labels, o.top_n);
    }
    tf::write_text_file(fs::path(o.out) / "cards.txt", tf::render_cards_text(cards));
    tf::write_json_file(fs::path(o.out) / "cards.json", tf::render_cards_json(cards));
    outputs.push_back("cards.txt");
    outputs.push_back("cards.json");
  }

  tf::require(!outputs.empty(), tf::Errc::ConfigError,
              "report: nothing to do (pass --sweep and/or --model/--sample-csv)");
  std::map<std::string, std::string> cfgmap = {
      {"sweep", o.sweep},     {"model", o.model}, {"sample-csv", o.sample_csv},
      {"corpus", o.corpus},   {"top-n", std::to_string(o.top_n)},
      {"svg", o.svg ? "true" : "false"},
  };
  tf::write_manifest(o.out, "report", cfgmap, {}, outputs);
  std::cout << "report: wrote " << outputs.size() << " files to " << o.out << "\n";
}

struct DiagOpts {
  std::string traces, out;
  std::int64_t burn_in = -1;
  double threshold = tf::kRhatAcceptableMax;
};

void run_diag(const DiagOpts& o) {
  const auto traces = tf::load_traces(o.traces);
  std::int64_t burn_in = o.burn_in;
  if (burn_in < 0) {
    burn_in = 0;
    const auto manifest_path = fs::path(o.traces) / "manifest.json";
    if (fs::exists(manifest_path)) {
      const auto manifest = tf::load_json_file(manifest_path);
      if (manifest.contains("config") && manifest["config"].contains("burn-in"))
        burn_in = tf::parse_int(manifest["config"]["burn-in"].get<std::string>(), "burn-in");
    }
  }
  std::vector<std::vector<double>> series;
  for (const auto& trace : traces) {
    std::vector<double> v;
    for (const auto& p : trace)
      if (p.iteration >= burn_in) v.push_back(p.loglik);
    series.push_back(std::move(v));
  }
  const double r = tf::rhat(series);
  const bool pass = r < o.threshold;
  std::cout << "diag: chains=" << series.size() << " burn_in=" << burn_in
            << " rhat=" << tf::format_g9(r) << " -> " << (pass ? "PASS" : "FAIL")
            << " (threshold " << tf::format_g9(o.threshold) << ")\n";

  const std::string out = o.out.empty() ? (fs::path(o.traces) / "diag").string() : o.out;
  fs::create_directories(out);
  tf::json j;
  j["chains"] = series.size();
  j["burn_in"] = burn_in;
  j["rhat"] = r;
  j["pass"] = pass;
  j["threshold"] = o.threshold;
  tf::write_json_file(fs::path(out) / "diag.json", j);
  std::map<std::string, std::string> cfgmap = {
      {"traces", o.traces},
      {"burn-in", std::to_string(burn_in)},
      {"threshold", tf::format_g9(o.threshold)},
  };
  tf::write_manifest(out, "diag", cfgmap, {}, {"diag.json"});
}

void add_heldout_flags(CLI::App* cmd, tf::HeldoutConfig& cfg) {
  cmd->add_option("--particles", cfg.particles, "left-to-right particles")->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "random seed")
      ->envname("TOPICFORGE_SEED")
      ->capture_default_str();
  cmd->add_flag("--resample,!--no-resample", cfg.resample_previous,
                "resample earlier positions before scoring (default on)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"topic models for transaction baskets: collapsed Gibbs LDA, evaluation, and "
               "posterior-summary clustering"};
  app.set_version_flag("--version", TOPICFORGE_VERSION);
  app.require_subcommand(1);

  std::string config_file;
  IngestOpts ingest;
  auto* c_ingest = app.add_subcommand("ingest", "build a corpus from JSON-lines baskets");
  c_ingest->add_option("--config", config_file, "flat key=value configuration file");
  c_ingest->add_option("--baskets", ingest.baskets, "JSON-lines basket file")->required();
  c_ingest->add_option("--out", ingest.out, "output directory")->required();
  c_ingest->add_option("--vocab-size", ingest.vocab_size, "vocabulary cap")
      ->capture_default_str();
  c_ingest->add_option("--min-basket", ingest.min_basket, "minimum basket size")
      ->capture_default_str();
  c_ingest->add_option("--test-fraction", ingest.test_fraction, "held-out fraction (0 = none)")
      ->capture_default_str();
  c_ingest->add_option("--seed", ingest.seed, "split seed")
      ->envname("TOPICFORGE_SEED")
      ->capture_default_str();
  c_ingest->add_flag("--cooc", ingest.cooc, "also write co-occurrence cache");
  c_ingest->callback([&] { run_ingest(ingest); });

  SynthOpts synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic corpus with planted topics");
  c_synth->add_option("--config", config_file, "flat key=value configuration file");
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--topics", synth.topics, "planted topic count")->required();
  c_synth->add_option("--vocab", synth.vocab, "vocabulary size")->required();
  c_synth->add_option("--docs", synth.docs, "document count")->required();
  c_synth->add_option("--doc-len", synth.doc_len, "token draws per doc, lo:hi")
      ->capture_default_str();
  c_synth->add_option("--alpha-true", synth.alpha_true, "symmetric generator alpha")
      ->capture_default_str();
  c_synth->add_option("--phi", synth.phi, "planted topics: blocks|random")->capture_default_str();
  c_synth->add_option("--phi-concentration", synth.phi_concentration,
                      "Dirichlet concentration for --phi random")
      ->capture_default_str();
  c_synth->add_option("--phi-file", synth.phi_file, "explicit phi matrix CSV");
  c_synth->add_option("--min-basket", synth.min_basket, "minimum basket size")
      ->capture_default_str();
  c_synth->add_option("--test-fraction", synth.test_fraction, "held-out fraction (0 = none)")
      ->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "generator seed")
      ->envname("TOPICFORGE_SEED")
      ->capture_default_str();
  c_synth->add_flag("--cooc", synth.cooc, "also write co-occurrence cache");
  c_synth->callback([&] { run_synth(synth); });

  TrainOpts train;
  auto* c_train = app.add_subcommand("train", "run collapsed Gibbs chains and record samples");
  c_train->add_option("--config", config_file, "flat key=value configuration file");
  c_train->add_option("--corpus", train.corpus, "training corpus")->required();
  c_train->add_option("--out", train.out, "run directory")->required();
  c_train->add_option("--topics", train.topics, "number of topics")->required();
  c_train->add_option("--chains", train.chain.chains, "chain count")->capture_default_str();
  c_train->add_option("--iterations", train.chain.iterations, "sweeps per chain")
      ->capture_default_str();
  c_train->add_option("--burn-in", train.chain.burn_in, "burn-in sweeps")->capture_default_str();
  c_train->add_option("--lag", train.chain.lag, "recording lag")->capture_default_str();
  c_train->add_option("--loglik-every", train.chain.loglik_every, "trace cadence")
      ->capture_default_str();
  c_train->add_option("--alpha-sum", train.alpha_sum, "total alpha mass")->capture_default_str();
  c_train->add_option("--beta", train.beta, "per-product beta")->capture_default_str();
  c_train->add_option("--seed", train.chain.seed, "base seed (chain seed = seed XOR chain id)")
      ->envname("TOPICFORGE_SEED")
      ->capture_default_str();
  c_train->add_flag("--theta", train.theta, "also record theta matrices");
  c_train->add_option("--jobs", train.jobs, "parallel chains")->capture_default_str();
  c_train->callback([&] { run_train(train); });

  EvaluateOpts evaluate;
  auto* c_eval = app.add_subcommand("evaluate", "score recorded samples on held-out data");
  c_eval->add_option("--config", config_file, "flat key=value configuration file");
  c_eval->add_option("--samples", evaluate.samples, "run directory")->required();
  c_eval->add_option("--test", evaluate.test, "held-out corpus")->required();
  c_eval->add_option("--train", evaluate.train, "training corpus for co-occurrence");
  c_eval->add_option("--cooc", evaluate.cooc, "co-occurrence cache CSV");
  c_eval->add_option("--out", evaluate.out, "output directory")->required();
  c_eval->add_option("--top-n", evaluate.top_n, "products per topic for coherence")
      ->capture_default_str();
  c_eval->add_option("--jobs", evaluate.jobs, "parallel documents")->capture_default_str();
  add_heldout_flags(c_eval, evaluate.heldout);
  c_eval->callback([&] { run_evaluate(evaluate); });

  ClusterOpts cluster;
  auto* c_cluster = app.add_subcommand("cluster", "cluster pooled topics into recurrent topics");
  c_cluster->add_option("--config", config_file, "flat key=value configuration file");
  c_cluster->add_option("--samples", cluster.samples, "run directory")->required();
  c_cluster->add_option("--replication", cluster.replication,
                        "independent run directory for credibility");
  c_cluster->add_option("--test", cluster.test, "held-out corpus (enables evaluation)");
  c_cluster->add_option("--train", cluster.train, "training corpus for co-occurrence");
  c_cluster->add_option("--cooc", cluster.cooc, "co-occurrence cache CSV");
  c_cluster->add_option("--out", cluster.out, "output directory")->required();
  c_cluster->add_option("--threshold", cluster.threshold, "cosine-distance merge threshold")
      ->capture_default_str();
  c_cluster->add_option("--min-size", cluster.min_size, "minimum recurrence")
      ->capture_default_str();
  c_cluster->add_flag("--within-sample", cluster.within_sample,
                      "allow merging topics from the same sample");
  c_cluster->add_option("--alpha-sum", cluster.alpha_sum, "alpha mass for clustered perplexity")
      ->capture_default_str();
  c_cluster->add_option("--top-n", cluster.top_n, "products per topic for coherence")
      ->capture_default_str();
  c_cluster->add_option("--jobs", cluster.jobs, "parallel workers")->capture_default_str();
  add_heldout_flags(c_cluster, cluster.heldout);
  c_cluster->callback([&] { run_cluster(cluster); });

  SweepOpts sweep;
  auto* c_sweep = app.add_subcommand("sweep", "evaluate the threshold x min-size grid");
  c_sweep->add_option("--config", config_file, "flat key=value configuration file");
  c_sweep->add_option("--samples", sweep.samples, "run directory")->required();
  c_sweep->add_option("--replication", sweep.replication, "independent run directory")
      ->required();
  c_sweep->add_option("--test", sweep.test, "held-out corpus")->required();
  c_sweep->add_option("--train", sweep.train, "training corpus for co-occurrence");
  c_sweep->add_option("--cooc", sweep.cooc, "co-occurrence cache CSV");
  c_sweep->add_option("--out", sweep.out, "output directory")->required();
  c_sweep->add_option("--thresholds", sweep.thresholds, "lo:hi:step grid")->capture_default_str();
  c_sweep->add_option("--min-sizes", sweep.min_sizes, "comma list of minimum sizes")
      ->capture_default_str();
  c_sweep->add_flag("--within-sample", sweep.within_sample,
                    "allow merging topics from the same sample");
  c_sweep->add_option("--alpha-sum", sweep.alpha_sum, "alpha mass for clustered perplexity")
      ->capture_default_str();
  c_sweep->add_option("--top-n", sweep.top_n, "products per topic for coherence")
      ->capture_default_str();
  c_sweep->add_option("--jobs", sweep.jobs, "parallel workers")->capture_default_str();
  add_heldout_flags(c_sweep, sweep.heldout);
  c_sweep->callback([&] { run_sweep(sweep); });

  ReportOpts report;
  auto* c_report = app.add_subcommand("report", "render sweep tables and topic cards");
  c_report->add_option("--config", config_file, "flat key=value configuration file");
  c_report->add_option("--sweep", report.sweep, "sweep.csv to pivot");
  c_report->add_option("--model", report.model, "clustered model directory");
  c_report->add_option("--sample-csv", report.sample_csv, "posterior sample phi CSV");
  c_report->add_option("--corpus", report.corpus, "corpus file providing product labels");
  c_report->add_option("--out", report.out, "output directory")->required();
  c_report->add_option("--top-n", report.top_n, "products per card")->capture_default_str();
  c_report->add_flag("--svg", report.svg, "also render SVG charts");
  c_report->callback([&] { run_report(report); });

  DiagOpts diag;
  auto* c_diag = app.add_subcommand("diag", "Gelman-Rubin diagnostics on loglik traces");
  c_diag->add_option("--config", config_file, "flat key=value configuration file");
  c_diag->add_option("--traces", diag.traces, "run directory with trace_c*.csv")->required();
  c_diag->add_option("--burn-in", diag.burn_in,
                     "discard iterations below this (default: run manifest)");
  c_diag->add_option("--threshold", diag.threshold, "acceptance threshold")
      ->capture_default_str();
  c_diag->add_option("--out", diag.out, "output directory (default: <traces>/diag)");
  c_diag->callback([&] { run_diag(diag); });

  try {
    auto args = expand_config_args(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << TOPICFORGE_VERSION << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  } catch (const tf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return (e.code() == tf::Errc::ConfigError || e.code() == tf::Errc::SpecError) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
