#include "patchdef/report.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "patchdef/dataset.hpp"

namespace patchdef {

using json = nlohmann::ordered_json;

namespace {

std::string now_string() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct PerSample {
  std::string name;
  int label = -1, predicted = -1;
  std::optional<double> ssim_v, psnr_v, iou_v;
};

}  // namespace

DefenseReport build_report(const VictimClassifier& victim,
                           const std::vector<ReportCondition>& conditions,
                           const std::filesystem::path& out_dir, uint64_t seed,
                           const std::string& config_hash,
                           const std::filesystem::path& records_path) {
  namespace fs = std::filesystem;
  DefenseReport report;
  report.seed = seed;
  report.config_hash = config_hash;
  report.timestamp = now_string();
  fs::create_directories(out_dir);
  std::ofstream samples_log(out_dir / "per_sample.ndjson", std::ios::trunc);

  for (const auto& cond : conditions) {
    ReportRow row;
    row.name = cond.name;
    if (!fs::exists(cond.images_root / cond.split)) {
      row.present = false;
      row.note = "missing dataset: " + (cond.images_root / cond.split).string();
      report.rows.push_back(std::move(row));
      continue;
    }
    auto refs = list_split(cond.images_root, cond.split);
    if (refs.empty()) {
      row.present = false;
      row.note = "empty split: " + (cond.images_root / cond.split).string();
      report.rows.push_back(std::move(row));
      continue;
    }
    const bool want_quality = !cond.reference_root.empty();
    const bool want_iou = !cond.gt_mask_root.empty();
    int correct = 0;
    double ssim_sum = 0, psnr_sum = 0, iou_sum = 0;
    int quality_n = 0, iou_n = 0;
    constexpr size_t kChunk = 32;
    for (size_t off = 0; off < refs.size(); off += kChunk) {
      const size_t end = std::min(refs.size(), off + kChunk);
      std::vector<Image> images;
      std::vector<PerSample> ps(end - off);
      for (size_t i = off; i < end; ++i) {
        auto s = load_sample(refs[i]);
        ps[i - off].name = cond.name + "/" + std::to_string(refs[i].label) + "/" + refs[i].name;
        ps[i - off].label = refs[i].label;
        images.push_back(std::move(s.image));
      }
      std::vector<const Image*> ptrs;
      for (const auto& im : images) ptrs.push_back(&im);
      auto probs = victim.forward_batch(ptrs);
      for (size_t i = off; i < end; ++i) {
        const auto& p = probs[i - off];
        ps[i - off].predicted =
            static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        if (ps[i - off].predicted == refs[i].label) ++correct;
        if (want_quality) {
          const fs::path ref_path = cond.reference_root / cond.split /
                                    std::to_string(refs[i].label) / (refs[i].name + ".png");
          if (fs::exists(ref_path)) {
            Image ref = load_png(ref_path);
            ps[i - off].ssim_v = ssim(images[i - off], ref);
            ps[i - off].psnr_v = psnr(images[i - off], ref);
            ssim_sum += *ps[i - off].ssim_v;
            psnr_sum += *ps[i - off].psnr_v;
            ++quality_n;
          }
        }
        if (want_iou && refs[i].mask_path) {
          const fs::path gt_path = cond.gt_mask_root / cond.split /
                                   std::to_string(refs[i].label) /
                                   (refs[i].name + ".mask.png");
          if (fs::exists(gt_path)) {
            Mask pred = load_mask_png(*refs[i].mask_path);
            Mask gt = load_mask_png(gt_path);
            ps[i - off].iou_v = mask_iou(pred, gt);
            iou_sum += *ps[i - off].iou_v;
            ++iou_n;
          }
        }
        json j;
        j["condition"] = cond.name;
        j["sample"] = ps[i - off].name;
        j["label"] = ps[i - off].label;
        j["predicted"] = ps[i - off].predicted;
        if (ps[i - off].ssim_v) j["ssim"] = *ps[i - off].ssim_v;
        if (ps[i - off].psnr_v) j["psnr"] = *ps[i - off].psnr_v;
        if (ps[i - off].iou_v) j["iou"] = *ps[i - off].iou_v;
        samples_log << j.dump() << "\n";
      }
    }
    row.present = true;
    row.count = static_cast<int>(refs.size());
    row.accuracy = static_cast<double>(correct) / static_cast<double>(refs.size());
    if (quality_n > 0) {
      row.mean_ssim = ssim_sum / quality_n;
      row.mean_psnr = psnr_sum / quality_n;
    }
    if (iou_n > 0) row.mean_iou = iou_sum / iou_n;
    report.rows.push_back(std::move(row));
  }
  samples_log.close();

  std::ofstream(out_dir / "report.json") << render_report_json(report);
  std::ofstream(out_dir / "report.txt") << render_report_text(report);

  // quality comparison plot across present conditions
  {
    PlotSeries acc{"top1", {}, {}}, ss{"ssim", {}, {}};
    double xi = 0;
    for (const auto& r : report.rows) {
      if (!r.present) continue;
      acc.x.push_back(xi);
      acc.y.push_back(r.accuracy);
      if (r.mean_ssim) {
        ss.x.push_back(xi);
        ss.y.push_back(*r.mean_ssim);
      }
      xi += 1;
    }
    std::vector<PlotSeries> series{acc};
    if (!ss.x.empty()) series.push_back(ss);
    std::ofstream(out_dir / "quality.svg")
        << render_line_plot_svg(series, "per-condition accuracy / ssim", "condition index",
                                "value");
  }

  if (!records_path.empty() && std::filesystem::exists(records_path)) {
    PlotSeries curve{"val defended top1", {}, {}};
    std::ifstream is(records_path);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || j.value("kind", "") != "val") continue;
      curve.x.push_back(j.value("epoch", 0));
      curve.y.push_back(j.value("val_defended_acc", 0.0));
    }
    if (!curve.x.empty())
      std::ofstream(out_dir / "accuracy_vs_epoch.svg")
          << render_line_plot_svg({curve}, "defended validation accuracy", "epoch", "top1");
  }
  return report;
}

std::string render_report_json(const DefenseReport& report) {
  json j;
  j["timestamp"] = report.timestamp;
  j["seed"] = report.seed;
  j["config_hash"] = report.config_hash;
  j["metadata"] = {{"ssim_window", 11}, {"ssim_sigma", 1.5},
                   {"ssim_c1", 0.0001}, {"ssim_c2", 0.0009},
                   {"psnr_cap", 100.0}, {"quality_reference", "clean original"}};
  json rows = json::array();
  for (const auto& r : report.rows) {
    json row;
    row["condition"] = r.name;
    row["present"] = r.present;
    if (!r.present) {
      row["note"] = r.note;
    } else {
      row["count"] = r.count;
      row["top1_accuracy"] = r.accuracy;
      if (r.mean_ssim) row["mean_ssim"] = *r.mean_ssim;
      if (r.mean_psnr) row["mean_psnr"] = *r.mean_psnr;
      if (r.mean_iou) row["mean_iou"] = *r.mean_iou;
    }
    rows.push_back(std::move(row));
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

std::string render_report_text(const DefenseReport& report) {
  std::ostringstream os;
  os << "condition                 |  count |  top1  |  ssim  |  psnr  |  iou\n";
  os << "--------------------------+--------+--------+--------+--------+-------\n";
  char buf[256];
  for (const auto& r : report.rows) {
    if (!r.present) {
      std::snprintf(buf, sizeof(buf), "%-26s| absent: %s\n", r.name.c_str(), r.note.c_str());
      os << buf;
      continue;
    }
    auto opt = [](const std::optional<double>& v, const char* fmt) {
      char b[32];
      if (!v) return std::string("   -  ");
      std::snprintf(b, sizeof(b), fmt, *v);
      return std::string(b);
    };
    std::snprintf(buf, sizeof(buf), "%-26s| %6d | %.4f | %s | %s | %s\n", r.name.c_str(), r.count,
                  r.accuracy, opt(r.mean_ssim, "%.4f").c_str(), opt(r.mean_psnr, "%6.2f").c_str(),
                  opt(r.mean_iou, "%.4f").c_str());
    os << buf;
  }
  return os.str();
}

std::string render_line_plot_svg(const std::vector<PlotSeries>& series, const std::string& title,
                                 const std::string& x_label, const std::string& y_label) {
  constexpr int W = 640, H = 420, ML = 60, MR = 20, MT = 40, MB = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
  auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
     << "</text>\n";
  os << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
     << H - MB << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << x_label << "</text>\n";
  os << "<text x=\"16\" y=\"" << H / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 "
     << H / 2 << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
  char num[64];
  for (int k = 0; k <= 4; ++k) {
    const double yv = ymin + (ymax - ymin) * k / 4.0;
    std::snprintf(num, sizeof(num), "%.3g", yv);
    os << "<text x=\"" << ML - 6 << "\" y=\"" << py(yv) + 4
       << "\" text-anchor=\"end\" font-size=\"10\">" << num << "</text>\n";
    const double xv = xmin + (xmax - xmin) * k / 4.0;
    std::snprintf(num, sizeof(num), "%.3g", xv);
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - MB + 16
       << "\" text-anchor=\"middle\" font-size=\"10\">" << num << "</text>\n";
  }
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    os << "<polyline fill=\"none\" stroke=\"" << colors[si % 4] << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) os << px(s.x[i]) << "," << py(s.y[i]) << " ";
    os << "\"/>\n";
    os << "<text x=\"" << W - MR - 4 << "\" y=\"" << MT + 16 * (si + 1)
       << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << colors[si % 4] << "\">" << s.label
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace patchdef
