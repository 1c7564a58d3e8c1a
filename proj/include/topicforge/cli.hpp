#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "topicforge/corpus.hpp"
#include "topicforge/error.hpp"
#include "topicforge/io.hpp"
#include "topicforge/matrix.hpp"
#include "topicforge/metrics.hpp"
#include "topicforge/summary.hpp"
#include "topicforge/version.hpp"

namespace topicforge {

/// "lo:hi:step" inclusive grid, e.g. "0:0.55:0.05".
inline std::vector<double> parse_threshold_spec(const std::string& spec) {
  const auto parts = split_csv_line(spec);
  std::vector<std::string> fields;
  {
    std::size_t start = 0;
    for (std::size_t i = 0; i <= spec.size(); ++i) {
      if (i == spec.size() || spec[i] == ':') {
        fields.push_back(spec.substr(start, i - start));
        start = i + 1;
      }
    }
  }
  require(fields.size() == 3, Errc::ConfigError,
          "threshold spec must be lo:hi:step, got '" + spec + "'");
  const double lo = parse_double(fields[0], "threshold lo");
  const double hi = parse_double(fields[1], "threshold hi");
  const double step = parse_double(fields[2], "threshold step");
  require(step > 0.0 && hi >= lo, Errc::ConfigError, "threshold spec: bad range");
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double v = lo + i * step;
    if (v > hi + 1e-12) break;
    out.push_back(std::min(v, hi));
  }
  return out;
}

inline std::vector<std::int32_t> parse_int_list(const std::string& spec) {
  std::vector<std::int32_t> out;
  for (const auto& f : split_csv_line(spec))
    out.push_back(static_cast<std::int32_t>(parse_int(f, "int list")));
  require(!out.empty(), Errc::ConfigError, "empty integer list");
  return out;
}

// ---------------------------------------------------------------------------
// Run manifests: resolved configuration, input digests, produced artifacts.
// Re-running the recorded command with resolved.cfg reproduces the directory
// byte for byte, so no timestamps or host data belong here.

struct ManifestInput {
  std::string name;
  std::string path;
  std::string digest;
};

inline void write_manifest(const std::filesystem::path& dir, const std::string& command,
                           const std::map<std::string, std::string>& config,
                           const std::vector<ManifestInput>& inputs,
                           const std::vector<std::string>& outputs) {
  json m;
  m["tool"] = "topicforge";
  m["version"] = TOPICFORGE_VERSION;
  m["command"] = command;
  json cfg = json::object();
  for (const auto& [k, v] : config) cfg[k] = v;
  m["config"] = std::move(cfg);
  json ins = json::array();
  for (const auto& in : inputs) {
    json j;
    j["name"] = in.name;
    j["path"] = in.path;
    j["digest"] = in.digest;
    ins.push_back(std::move(j));
  }
  m["inputs"] = std::move(ins);
  m["outputs"] = outputs;
  write_json_file(dir / "manifest.json", m);

  std::string flat;
  for (const auto& [k, v] : config) flat += k + "=" + v + "\n";
  write_text_file(dir / "resolved.cfg", flat);
}

// ---------------------------------------------------------------------------
// Topic cards: the top products of each topic with probabilities, plus the
// recurrence ratio for clustered topics.

struct TopicCard {
  std::string title;
  std::optional<std::string> recurrence;  // "size/S" for clustered topics
  std::vector<std::pair<std::string, double>> products;  // probability descending
};

inline std::vector<TopicCard> make_topic_cards(const Matrix& topics,
                                               const std::vector<std::string>& labels,
                                               std::int32_t top_n = 15,
                                               const std::vector<std::int32_t>* sizes = nullptr,
                                               std::int32_t S = 0) {
  require(labels.size() >= topics.cols(), Errc::ConfigError,
          "topic cards: vocabulary smaller than V");
  std::vector<TopicCard> cards;
  for (std::size_t t = 0; t < topics.rows(); ++t) {
    TopicCard card;
    card.title = "topic " + std::to_string(t);
    if (sizes != nullptr)
      card.recurrence = std::to_string((*sizes)[t]) + "/" + std::to_string(S);
    for (std::int32_t v : top_indices(topics.row(t), top_n))
      card.products.emplace_back(labels[v], topics(t, v));
    cards.push_back(std::move(card));
  }
  return cards;
}

inline std::string render_cards_text(const std::vector<TopicCard>& cards) {
  std::string out;
  for (const auto& card : cards) {
    out += card.title;
    if (card.recurrence) out += "  (recurrence " + *card.recurrence + ")";
    out += '\n';
    for (const auto& [label, p] : card.products)
      out += "  " + format_g9(p) + "  " + label + "\n";
    out += '\n';
  }
  return out;
}

inline json render_cards_json(const std::vector<TopicCard>& cards) {
  json arr = json::array();
  for (const auto& card : cards) {
    json jc;
    jc["title"] = card.title;
    if (card.recurrence) jc["recurrence"] = *card.recurrence;
    json products = json::array();
    for (const auto& [label, p] : card.products) {
      json jp;
      jp["label"] = label;
      jp["probability"] = p;
      products.push_back(std::move(jp));
    }
    jc["products"] = std::move(products);
    arr.push_back(std::move(jc));
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Minimal SVG line charts for the sweep tables: one polyline per min_size.

inline std::string render_sweep_svg(const std::vector<SweepRow>& rows, const std::string& metric) {
  std::vector<SweepRow> pts;
  for (const auto& r : rows)
    if (r.metric == metric && !std::isnan(r.mean)) pts.push_back(r);
  require(!pts.empty(), Errc::EmptyInput, "svg: no finite points for metric " + metric);

  std::vector<std::int32_t> series;
  double x_lo = pts[0].threshold, x_hi = pts[0].threshold;
  double y_lo = pts[0].mean, y_hi = pts[0].mean;
  for (const auto& p : pts) {
    if (std::find(series.begin(), series.end(), p.min_size) == series.end())
      series.push_back(p.min_size);
    x_lo = std::min(x_lo, p.threshold);
    x_hi = std::max(x_hi, p.threshold);
    y_lo = std::min(y_lo, p.mean);
    y_hi = std::max(y_hi, p.mean);
  }
  std::sort(series.begin(), series.end());
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi == y_lo) y_hi = y_lo + 1.0;

  const double W = 640, H = 420, ml = 70, mr = 20, mt = 30, mb = 50;
  const auto sx = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * (W - ml - mr); };
  const auto sy = [&](double y) { return H - mb - (y - y_lo) / (y_hi - y_lo) * (H - mt - mb); };
  const char* palette[] = {"#1b6ca8", "#d1495b", "#66a182", "#edae49", "#8d5a97", "#404e5c"};

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
         "viewBox=\"0 0 640 420\">\n";
  svg += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">" + metric + "</text>\n";
  svg += "<line x1=\"" + format_g9(ml) + "\" y1=\"" + format_g9(H - mb) + "\" x2=\"" +
         format_g9(W - mr) + "\" y2=\"" + format_g9(H - mb) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + format_g9(ml) + "\" y1=\"" + format_g9(mt) + "\" x2=\"" + format_g9(ml) +
         "\" y2=\"" + format_g9(H - mb) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = x_lo + (x_hi - x_lo) * i / 4.0;
    const double y = y_lo + (y_hi - y_lo) * i / 4.0;
    svg += "<text x=\"" + format_g9(sx(x)) + "\" y=\"" + format_g9(H - mb + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
           format_g9(x) + "</text>\n";
    svg += "<text x=\"" + format_g9(ml - 8) + "\" y=\"" + format_g9(sy(y) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + format_g9(y) +
           "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    std::string points;
    for (const auto& p : pts) {
      if (p.min_size != series[s]) continue;
      points += format_g9(sx(p.threshold)) + "," + format_g9(sy(p.mean)) + " ";
    }
    const char* color = palette[s % 6];
    svg += "<polyline fill=\"none\" stroke=\"";
    svg += color;
    svg += "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    svg += "<text x=\"" + format_g9(W - mr - 4) + "\" y=\"" +
           format_g9(mt + 16.0 * static_cast<double>(s) + 12) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"";
    svg += color;
    svg += "\">min_size " + std::to_string(series[s]) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace topicforge
