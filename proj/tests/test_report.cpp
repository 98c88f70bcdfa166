#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "patchdef/dataset.hpp"
#include "patchdef/report.hpp"
#include "patchdef/synth.hpp"

using namespace patchdef;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string strip_timestamp(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream out;
  std::string line;
  while (std::getline(is, line))
    if (line.find("\"timestamp\"") == std::string::npos) out << line << "\n";
  return out.str();
}

struct ReportFixture {
  fs::path root = fs::temp_directory_path() / "pd_report_fx";
  ConvNetVictim victim{32, 3, 404};
  ReportFixture() {
    fs::remove_all(root);
    SynthConfig cfg;
    cfg.image_size = 32;
    cfg.num_classes = 3;
    cfg.train_per_class = 2;
    cfg.val_per_class = 1;
    cfg.test_per_class = 3;
    cfg.seed = 11;
    generate_synthetic(cfg, root / "clean");
    // a "processed" twin set with masks, slightly perturbed images
    auto refs = list_split(root / "clean", "test");
    for (const auto& r : refs) {
      Image img = load_png(r.image_path);
      for (auto& v : img.px) v = std::min(1.0f, v + 0.01f);
      const auto dir = root / "processed" / "test" / std::to_string(r.label);
      save_png(dir / (r.name + ".png"), img);
      Mask m(32, 32);
      for (int i = 4; i < 10; ++i)
        for (int j = 4; j < 10; ++j) m.at(i, j) = 1.0f;
      save_mask_png(dir / (r.name + ".mask.png"), m);
      save_mask_png(root / "clean" / "test" / std::to_string(r.label) / (r.name + ".mask.png"),
                    m);
    }
  }
  ~ReportFixture() { fs::remove_all(root); }

  std::vector<ReportCondition> conditions() const {
    ReportCondition clean{"clean", root / "clean", "test", {}, {}};
    ReportCondition processed{"processed", root / "processed", "test", root / "clean",
                              root / "clean"};
    ReportCondition missing{"missing", root / "nowhere", "test", {}, {}};
    return {clean, processed, missing};
  }
};

}  // namespace

TEST_CASE_FIXTURE(ReportFixture, "report: rows, absence marking, totals, reproducibility") {
  const fs::path out_a = root / "report_a";
  const fs::path out_b = root / "report_b";
  DefenseReport rep = build_report(victim, conditions(), out_a, 7, "deadbeef");

  SUBCASE("all conditions present in order; missing one is marked absent") {
    REQUIRE(rep.rows.size() == 3);
    CHECK(rep.rows[0].present);
    CHECK(rep.rows[1].present);
    CHECK(!rep.rows[2].present);
    CHECK(rep.rows[2].note.find("nowhere") != std::string::npos);
    CHECK(rep.rows[1].mean_ssim.has_value());
    CHECK(rep.rows[1].mean_iou.has_value());
    CHECK(*rep.rows[1].mean_iou == 1.0);  // identical masks
    CHECK(!rep.rows[0].mean_ssim.has_value());
  }
  SUBCASE("artifacts exist: json, text, per-sample log, quality plot") {
    CHECK(fs::exists(out_a / "report.json"));
    CHECK(fs::exists(out_a / "report.txt"));
    CHECK(fs::exists(out_a / "per_sample.ndjson"));
    CHECK(fs::exists(out_a / "quality.svg"));
  }
  SUBCASE("report totals match recomputation from the per-sample log") {
    std::ifstream is(out_a / "per_sample.ndjson");
    std::string line;
    int n = 0, correct = 0;
    double ssim_sum = 0;
    int ssim_n = 0;
    while (std::getline(is, line)) {
      json j = json::parse(line);
      if (j["condition"] != "processed") continue;
      ++n;
      if (j["predicted"].get<int>() == j["label"].get<int>()) ++correct;
      if (j.contains("ssim")) {
        ssim_sum += j["ssim"].get<double>();
        ++ssim_n;
      }
    }
    REQUIRE(n == rep.rows[1].count);
    CHECK(rep.rows[1].accuracy == doctest::Approx(double(correct) / n).epsilon(1e-12));
    CHECK(*rep.rows[1].mean_ssim == doctest::Approx(ssim_sum / ssim_n).epsilon(1e-9));
  }
  SUBCASE("identical inputs give identical bytes apart from the timestamp") {
    build_report(victim, conditions(), out_b, 7, "deadbeef");
    CHECK(strip_timestamp(out_a / "report.json") == strip_timestamp(out_b / "report.json"));
    std::ifstream pa(out_a / "per_sample.ndjson"), pb(out_b / "per_sample.ndjson");
    std::string sa((std::istreambuf_iterator<char>(pa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(pb)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
  }
}

TEST_CASE_FIXTURE(ReportFixture, "zero conditions give an empty report with a valid header") {
  DefenseReport rep = build_report(victim, {}, root / "report_empty", 3, "cafe");
  CHECK(rep.rows.empty());
  CHECK(fs::exists(root / "report_empty" / "report.json"));
  std::ifstream is(root / "report_empty" / "report.json");
  json j = json::parse(is);
  CHECK(j["seed"] == 3);
  CHECK(j["config_hash"] == "cafe");
  CHECK(j["rows"].is_array());
  CHECK(j["rows"].empty());
}

TEST_CASE("line plot renders valid SVG with the series") {
  PlotSeries s{"acc", {1, 2, 3}, {0.1, 0.5, 0.9}};
  const std::string svg = render_line_plot_svg({s}, "curve", "epoch", "top1");
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("acc") != std::string::npos);
  CHECK(svg.rfind("</svg>\n") == svg.size() - 7);
}
