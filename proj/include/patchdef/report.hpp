#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchdef/metrics.hpp"
#include "patchdef/victim.hpp"

namespace patchdef {

/// One evaluation condition: a dataset to classify, plus optional clean
/// references (image quality) and ground-truth masks (localization quality).
struct ReportCondition {
  std::string name;
  std::filesystem::path images_root;
  std::string split = "test";
  std::filesystem::path reference_root;  // empty: no SSIM/PSNR column
  std::filesystem::path gt_mask_root;    // empty: no IoU column
};

struct ReportRow {
  std::string name;
  bool present = false;
  std::string note;  // why the condition is absent
  int count = 0;
  double accuracy = 0.0;
  std::optional<double> mean_ssim, mean_psnr, mean_iou;
};

struct DefenseReport {
  std::vector<ReportRow> rows;
  std::string config_hash;
  uint64_t seed = 0;
  std::string timestamp;  // excluded from reproducibility comparisons
};

/// Evaluates every condition (never silently skipping a missing one), writes
/// report.json / report.txt / per_sample.ndjson and the SVG plots, and returns
/// the in-memory report. A training records file adds the accuracy-vs-epoch
/// plot.
DefenseReport build_report(const VictimClassifier& victim,
                           const std::vector<ReportCondition>& conditions,
                           const std::filesystem::path& out_dir, uint64_t seed,
                           const std::string& config_hash,
                           const std::filesystem::path& records_path = {});

std::string render_report_text(const DefenseReport& report);
std::string render_report_json(const DefenseReport& report);

/// Minimal SVG line plot (one polyline per series).
struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};
std::string render_line_plot_svg(const std::vector<PlotSeries>& series, const std::string& title,
                                 const std::string& x_label, const std::string& y_label);

}  // namespace patchdef
