#include "merob/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"
#include "merob/annotations.hpp"
#include "merob/container.hpp"
#include "merob/errors.hpp"

namespace merob {

using json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kCols = kEmotionNames.size();

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::vector<double> per_clip_abs_error(std::span<const double> pred, std::span<const double> truth) {
  return mae_per_row(pred, truth, kCols);
}

SeedMetrics seed_metrics(const SeedPredictions& p) {
  SeedMetrics m;
  m.seed = p.seed;
  m.clean_mae = mae(p.clean, p.truth);
  const auto cc = avg_correlation(p.clean, p.truth, kCols);
  m.clean_corr = cc.value;
  m.constant_columns = cc.excluded_columns;
  if (!p.adversarial.empty()) {
    m.attacked = true;
    m.adv_mae = mae(p.adversarial, p.truth);
    m.adv_corr = avg_correlation(p.adversarial, p.truth, kCols).value;
    m.delta_mae = m.adv_mae - m.clean_mae;
    double acc = 0.0;
    std::size_t n = 0;
    for (double s : p.snr_db) {
      if (std::isfinite(s)) {
        acc += s;
        ++n;
      }
    }
    if (n) m.snr_db = acc / static_cast<double>(n);
  }
  return m;
}

template <typename F>
MeanStd over_seeds(const std::vector<SeedMetrics>& s, F field) {
  std::vector<double> v;
  for (const auto& m : s) v.push_back(field(m));
  return mean_std(v);
}

json mean_std_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

const RunPredictions* find_pred(std::span<const RunPredictions> runs, std::string_view name) {
  for (const auto& r : runs) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

std::string display_name(const std::string& run) {
  // a2b2e -> A2B2E, aa2b2e -> aA2B2E
  std::string out = run;
  const bool adv = run.size() > 1 && run[0] == 'a' && run[1] == 'a';
  for (std::size_t i = adv ? 1 : 0; i < out.size(); ++i) {
    out[i] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[i])));
  }
  return out;
}

}  // namespace

RunReport compute_report(std::span<const RunPredictions> runs, const std::string& config_digest) {
  RunReport rep;
  rep.config_digest = config_digest;
  for (const auto& run : runs) {
    if (run.seeds.empty()) {
      rep.gaps.push_back(run.name + ": no trained seeds");
      continue;
    }
    RunSummary s;
    s.name = run.name;
    std::vector<double> deltas, adv, snr;
    for (const auto& p : run.seeds) {
      const auto m = seed_metrics(p);
      if (!m.attacked) {
        rep.gaps.push_back(run.name + " seed " + std::to_string(p.seed) + ": not attacked");
      } else {
        deltas.push_back(m.delta_mae);
        adv.push_back(m.adv_mae);
        if (m.snr_db) snr.push_back(*m.snr_db);
      }
      s.seeds.push_back(m);
    }
    s.clean_corr = over_seeds(s.seeds, [](const SeedMetrics& m) { return m.clean_corr; });
    s.clean_mae = over_seeds(s.seeds, [](const SeedMetrics& m) { return m.clean_mae; });
    if (!deltas.empty()) {
      s.adv_mae = mean_std(adv);
      s.delta_mae = mean_std(deltas);
      s.delta_mae_box = box_stats(deltas);
    }
    if (!snr.empty()) s.snr_db = mean_std(snr);
    rep.runs.push_back(std::move(s));
  }

  const std::pair<const char*, const char*> planned[] = {{"a2e", "a2m2e"}, {"a2b2e", "a2m2e"}};
  for (const auto& [a, b] : planned) {
    const auto* ra = find_pred(runs, a);
    const auto* rb = find_pred(runs, b);
    if (!ra || !rb) continue;
    std::map<std::pair<std::uint64_t, std::string>, double> err_b;
    for (const auto& p : rb->seeds) {
      if (p.adversarial.empty()) continue;
      const auto e = per_clip_abs_error(p.adversarial, p.truth);
      for (std::size_t i = 0; i < e.size(); ++i) err_b[{p.seed, p.clip_ids[i]}] = e[i];
    }
    std::vector<double> d;
    for (const auto& p : ra->seeds) {
      if (p.adversarial.empty()) continue;
      const auto e = per_clip_abs_error(p.adversarial, p.truth);
      for (std::size_t i = 0; i < e.size(); ++i) {
        const auto it = err_b.find({p.seed, p.clip_ids[i]});
        if (it != err_b.end()) d.push_back(e[i] - it->second);
      }
    }
    if (d.size() < 2) {
      rep.gaps.push_back(std::string("t-test ") + a + " vs " + b + ": fewer than two paired clips");
      continue;
    }
    rep.ttests.push_back({a, b, d.size(), paired_ttest(d, kReportAlpha, std::size(planned))});
  }
  return rep;
}

std::string report_json(const RunReport& r) {
  json j;
  j["config_digest"] = r.config_digest;
  j["emotions"] = json::array();
  for (auto e : kEmotionNames) j["emotions"].push_back(std::string(e));
  j["runs"] = json::array();
  for (const auto& s : r.runs) {
    json rj;
    rj["name"] = s.name;
    rj["seeds"] = json::array();
    for (const auto& m : s.seeds) {
      json sj;
      sj["seed"] = m.seed;
      sj["clean_mae"] = m.clean_mae;
      sj["clean_avg_corr"] = m.clean_corr;
      if (!m.constant_columns.empty()) sj["constant_columns"] = m.constant_columns;
      if (m.attacked) {
        sj["adv_mae"] = m.adv_mae;
        sj["adv_avg_corr"] = m.adv_corr;
        sj["delta_mae"] = m.delta_mae;
        sj["snr_db"] = m.snr_db ? json(*m.snr_db) : json(nullptr);
      }
      rj["seeds"].push_back(std::move(sj));
    }
    json agg;
    agg["clean_avg_corr"] = mean_std_json(s.clean_corr);
    agg["clean_mae"] = mean_std_json(s.clean_mae);
    if (s.adv_mae) agg["adv_mae"] = mean_std_json(*s.adv_mae);
    if (s.delta_mae) agg["delta_mae"] = mean_std_json(*s.delta_mae);
    if (s.snr_db) agg["snr_db"] = mean_std_json(*s.snr_db);
    rj["aggregate"] = agg;
    if (s.delta_mae_box) {
      const auto& b = *s.delta_mae_box;
      rj["delta_mae_box"] = {{"n", b.n},
                             {"median", b.median},
                             {"q1", b.q1},
                             {"q3", b.q3},
                             {"whisker_low", b.whisker_low},
                             {"whisker_high", b.whisker_high},
                             {"outliers", b.outliers}};
    }
    j["runs"].push_back(std::move(rj));
  }
  j["ttests"] = json::array();
  for (const auto& t : r.ttests) {
    const auto& x = t.result;
    j["ttests"].push_back({{"a", t.a},
                           {"b", t.b},
                           {"n_pairs", t.n_pairs},
                           {"t", std::isfinite(x.t) ? json(x.t) : json(x.t > 0 ? "inf" : "-inf")},
                           {"df", x.df},
                           {"p", x.p},
                           {"mean_diff", x.mean_diff},
                           {"threshold", x.threshold},
                           {"significant", x.significant},
                           {"degenerate", x.degenerate}});
  }
  j["gaps"] = r.gaps;
  return j.dump(2) + "\n";
}

std::string table1_markdown(const RunReport& r) {
  std::ostringstream os;
  os << "| Model | avg. corr. | MAE | MAE (attacked) | dMAE | SNR [dB] |\n";
  os << "|---|---|---|---|---|---|\n";
  auto pm = [](const std::optional<MeanStd>& m, const char* f) {
    if (!m) return std::string("n/a");
    return fmt(f, m->mean) + " ± " + fmt(f, m->std);
  };
  for (const auto& s : r.runs) {
    os << "| " << display_name(s.name) << " | " << pm(s.clean_corr, "%.3f") << " | "
       << pm(s.clean_mae, "%.4f") << " | " << pm(s.adv_mae, "%.4f") << " | " << pm(s.delta_mae, "%.4f")
       << " | " << pm(s.snr_db, "%.1f") << " |\n";
  }
  if (!r.ttests.empty()) {
    os << "\n| Comparison | t | df | p | significant (p < " << fmt("%.4g", r.ttests[0].result.threshold)
       << ") |\n|---|---|---|---|---|\n";
    for (const auto& t : r.ttests) {
      os << "| " << display_name(t.a) << " vs " << display_name(t.b) << " | " << fmt("%.3f", t.result.t)
         << " | " << t.result.df << " | " << fmt("%.3g", t.result.p) << " | "
         << (t.result.significant ? "yes" : "no") << " |\n";
    }
  }
  if (!r.gaps.empty()) {
    os << "\nGaps:\n\n";
    for (const auto& g : r.gaps) os << "- " << g << "\n";
  }
  return os.str();
}

namespace {

struct Axis {
  double lo, hi;
  double px_lo, px_hi;  // pixel range (px_lo maps lo)
  double map(double v) const { return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo); }
};

std::string svg_header(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%g", w) + "\" height=\"" +
         fmt("%g", h) + "\" viewBox=\"0 0 " + fmt("%g", w) + " " + fmt("%g", h) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" "
         "fill=\"white\"/>\n";
}

std::string line(double x1, double y1, double x2, double y2, const char* extra = "stroke=\"black\"") {
  return "<line x1=\"" + fmt("%.2f", x1) + "\" y1=\"" + fmt("%.2f", y1) + "\" x2=\"" + fmt("%.2f", x2) +
         "\" y2=\"" + fmt("%.2f", y2) + "\" " + extra + "/>\n";
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle") {
  return "<text x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", y) + "\" text-anchor=\"" + anchor +
         "\">" + s + "</text>\n";
}

}  // namespace

std::string delta_mae_box_svg(const RunReport& r) {
  std::vector<const RunSummary*> boxed;
  for (const auto& s : r.runs) {
    if (s.delta_mae_box) boxed.push_back(&s);
  }
  const double slot = 90.0, left = 70.0, top = 30.0, plot_h = 260.0;
  const double width = left + slot * static_cast<double>(std::max<std::size_t>(boxed.size(), 1)) + 20.0;
  const double height = top + plot_h + 50.0;
  std::string out = svg_header(width, height);
  out += text(width / 2, 18, "dMAE after attack (lower is more robust)");
  if (boxed.empty()) {
    out += text(width / 2, top + plot_h / 2, "no attacked runs");
    return out + "</svg>\n";
  }
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto* s : boxed) {
    const auto& b = *s->delta_mae_box;
    double mn = b.whisker_low, mx = b.whisker_high;
    for (double o : b.outliers) {
      mn = std::min(mn, o);
      mx = std::max(mx, o);
    }
    lo = first ? mn : std::min(lo, mn);
    hi = first ? mx : std::max(hi, mx);
    first = false;
  }
  const double pad = std::max((hi - lo) * 0.1, 1e-6);
  lo -= pad;
  hi += pad;
  const Axis y{lo, hi, top + plot_h, top};
  out += line(left, top, left, top + plot_h);
  out += line(left, top + plot_h, width - 20, top + plot_h);
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    out += line(left - 4, y.map(v), left, y.map(v));
    out += text(left - 6, y.map(v) + 4, fmt("%.4f", v), "end");
  }
  for (std::size_t i = 0; i < boxed.size(); ++i) {
    const auto& b = *boxed[i]->delta_mae_box;
    const double cx = left + slot * (static_cast<double>(i) + 0.5);
    const double hw = 22.0;
    out += line(cx, y.map(b.whisker_low), cx, y.map(b.q1));
    out += line(cx, y.map(b.q3), cx, y.map(b.whisker_high));
    out += line(cx - hw / 2, y.map(b.whisker_low), cx + hw / 2, y.map(b.whisker_low));
    out += line(cx - hw / 2, y.map(b.whisker_high), cx + hw / 2, y.map(b.whisker_high));
    out += "<rect x=\"" + fmt("%.2f", cx - hw) + "\" y=\"" + fmt("%.2f", y.map(b.q3)) + "\" width=\"" +
           fmt("%.2f", 2 * hw) + "\" height=\"" + fmt("%.2f", std::max(y.map(b.q1) - y.map(b.q3), 0.5)) +
           "\" fill=\"#cfe0f3\" stroke=\"black\"/>\n";
    out += line(cx - hw, y.map(b.median), cx + hw, y.map(b.median), "stroke=\"#c0392b\" stroke-width=\"2\"");
    for (double o : b.outliers) {
      out += "<circle cx=\"" + fmt("%.2f", cx) + "\" cy=\"" + fmt("%.2f", y.map(o)) +
             "\" r=\"3\" fill=\"none\" stroke=\"black\"/>\n";
    }
    out += text(cx, top + plot_h + 18, display_name(boxed[i]->name));
  }
  return out + "</svg>\n";
}

std::string scatter_svg(std::span<const RunPredictions> runs, std::size_t emotion) {
  if (emotion >= kCols) throw UsageError("scatter_svg: emotion index out of range");
  const double panel = 220.0, margin = 40.0;
  const std::size_t n = std::max<std::size_t>(runs.size(), 1);
  const double width = margin + static_cast<double>(n) * (panel + margin);
  const double height = panel + 2.5 * margin;
  std::string out = svg_header(width, height);
  out += text(width / 2, 16, std::string(kEmotionNames[emotion]) + ": truth vs prediction (x clean, o attacked)");
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const double x0 = margin + static_cast<double>(r) * (panel + margin), y0 = 1.5 * margin;
    const Axis ax{0.0, 1.0, x0, x0 + panel};
    const Axis ay{0.0, 1.0, y0 + panel, y0};
    out += "<rect x=\"" + fmt("%.2f", x0) + "\" y=\"" + fmt("%.2f", y0) + "\" width=\"" + fmt("%g", panel) +
           "\" height=\"" + fmt("%g", panel) + "\" fill=\"none\" stroke=\"black\"/>\n";
    out += line(ax.map(0), ay.map(0), ax.map(1), ay.map(1), "stroke=\"#999\" stroke-dasharray=\"4 3\"");
    out += text(x0 + panel / 2, y0 - 6, display_name(runs[r].name));
    out += text(x0 + panel / 2, y0 + panel + 16, "truth");
    if (runs[r].seeds.empty()) continue;
    const auto& p = runs[r].seeds.front();
    const std::size_t rows = p.clip_ids.size();
    for (std::size_t i = 0; i < rows; ++i) {
      const double t = p.truth[i * kCols + emotion];
      const double c = std::clamp(p.clean[i * kCols + emotion], -0.05, 1.05);
      const double px = ax.map(t), py = ay.map(c);
      out += line(px - 3, py - 3, px + 3, py + 3, "stroke=\"#1f77b4\"");
      out += line(px - 3, py + 3, px + 3, py - 3, "stroke=\"#1f77b4\"");
      if (!p.adversarial.empty()) {
        const double a = std::clamp(p.adversarial[i * kCols + emotion], -0.05, 1.05);
        out += "<circle cx=\"" + fmt("%.2f", px) + "\" cy=\"" + fmt("%.2f", ay.map(a)) +
               "\" r=\"3\" fill=\"none\" stroke=\"#d62728\"/>\n";
      }
    }
  }
  return out + "</svg>\n";
}

std::string predictions_csv(const SeedPredictions& p) {
  std::ostringstream os;
  os << "clip_id";
  for (const char* prefix : {"truth_", "clean_", "adv_"}) {
    for (auto e : kEmotionNames) os << ',' << prefix << e;
  }
  os << '\n';
  for (std::size_t i = 0; i < p.clip_ids.size(); ++i) {
    os << p.clip_ids[i];
    for (const auto* m : {&p.truth, &p.clean, &p.adversarial}) {
      for (std::size_t c = 0; c < kCols; ++c) {
        os << ',';
        if (!m->empty()) os << fmt("%.17g", (*m)[i * kCols + c]);
      }
    }
    os << '\n';
  }
  return os.str();
}

SeedPredictions parse_predictions_csv(const std::string& text) {
  SeedPredictions p;
  std::istringstream in(text);
  std::string line_s;
  if (!std::getline(in, line_s)) throw FormatError("predictions CSV is empty");
  const std::size_t expected = 1 + 3 * kCols;
  bool any_adv = false, any_missing = false;
  std::size_t lineno = 1;
  while (std::getline(in, line_s)) {
    ++lineno;
    if (line_s.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line_s);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line_s.back() == ',') cells.emplace_back();
    if (cells.size() != expected) {
      throw FormatError("predictions CSV line " + std::to_string(lineno) + " has " +
                        std::to_string(cells.size()) + " cells, expected " + std::to_string(expected));
    }
    p.clip_ids.push_back(cells[0]);
    for (std::size_t k = 0; k < 3 * kCols; ++k) {
      const auto& s = cells[1 + k];
      auto& dst = k < kCols ? p.truth : (k < 2 * kCols ? p.clean : p.adversarial);
      if (s.empty()) {
        if (k < 2 * kCols) throw FormatError("predictions CSV line " + std::to_string(lineno) + " has an empty cell");
        any_missing = true;
        continue;
      }
      if (k >= 2 * kCols) any_adv = true;
      try {
        dst.push_back(std::stod(s));
      } catch (const std::exception&) {
        throw FormatError("predictions CSV line " + std::to_string(lineno) + ": bad number '" + s + "'");
      }
    }
  }
  if (any_adv && any_missing) throw FormatError("predictions CSV has partially missing attacked values");
  return p;
}

void write_report_bundle(const RunReport& r, std::span<const RunPredictions> runs,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::string& name, const std::string& body) {
    write_bytes(dir / name, std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
  };
  put("report.json", report_json(r));
  put("table1.md", table1_markdown(r));
  put("delta_mae_box.svg", delta_mae_box_svg(r));
  for (std::size_t e = 0; e < kCols; ++e) {
    put("scatter_" + std::string(kEmotionNames[e]) + ".svg", scatter_svg(runs, e));
  }
  for (const auto& run : runs) {
    for (const auto& p : run.seeds) {
      put("predictions_" + run.name + "_" + std::to_string(p.seed) + ".csv", predictions_csv(p));
    }
  }
}

}  // namespace merob
