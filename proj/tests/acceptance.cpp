#include <malloc.h>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "criteria.hpp"
#include "json.hpp"
#include "pyrhead/geometry.hpp"

namespace {

using Clock = std::chrono::steady_clock;
using Json = nlohmann::json;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Run {
  int code;
  std::string out;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "pyrhead");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = pyrhead::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cerr << err.str();
  return {code, out.str()};
}

int failures = 0;

void report(const char* name, bool ok, const std::string& detail) {
  std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

}  // namespace

int main() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  {
    const auto t0 = Clock::now();
    const auto g = criteria::gate_reduction(100, 64, 11);
    const double t = since(t0);
    report("gate-reduction", g.worst() < 1e-6 && t < 30.0,
           fmt("graph %.2e attention %.2e transformer %.2e, %.1f s", g.graph, g.attention, g.transformer, t));
  }

  Run grad1{};
  {
    const auto t0 = Clock::now();
    grad1 = cli({"gradcheck", "--threads", "1"});
    const double t = since(t0);
    double worst = 0.0;
    std::size_t groups = 0;
    if (grad1.code == 0 || grad1.code == 1) {
      const Json j = Json::parse(grad1.out);
      for (const auto& g : j.at("groups")) {
        worst = std::max(worst, g["max_rel_error"].get<double>());
        ++groups;
      }
    }
    report("gradient-suite", grad1.code == 0 && worst < 1e-4 && t < 120.0,
           fmt("%.0f groups, max rel error %.2e, %.1f s", static_cast<double>(groups), worst, t));
  }

  {
    const double gap = criteria::soft_hard_max_gap(1e-4, 10000);
    report("soft-hard-consistency", gap < 1e-3, fmt("max gap %.2e at tau 1e-4", gap));
  }

  {
    const double err = criteria::geometry_max_error(1000, 12);
    const pyrhead::Box3D box{{0, 0, 0}, {4, 2, 1.5}, 0.3};
    std::size_t n = 0;
    for (const auto& level : pyrhead::PyramidConfig::standard().levels) n += pyrhead::pyramid_grid_points(box, level).size();
    report("geometry-oracle", err < 1e-12 && n == 409,
           fmt("max error %.2e, pyramid points %.0f", err, static_cast<double>(n)));
  }

  {
    const auto t0 = Clock::now();
    const std::size_t bad = criteria::spatial_mismatches(100, 100000, 20, 13);
    report("spatial-exactness", bad == 0, fmt("%.0f mismatching queries of 6000, %.1f s", static_cast<double>(bad), since(t0)));
  }

  std::string train_seed0;
  {
    bool ok = true;
    std::string detail;
    for (int seed = 0; seed < 5; ++seed) {
      const auto t0 = Clock::now();
      const std::string sd = std::to_string(seed);
      const Run p = cli({"train-toy", "--seed", sd, "--threads", "1"});
      const Run b = cli({"train-toy", "--seed", sd, "--threads", "1", "--baseline"});
      const double t = since(t0);
      if (p.code != 0 || b.code != 0) {
        ok = false;
        detail += " seed " + sd + ": run failed;";
        continue;
      }
      if (seed == 0) train_seed0 = p.out;
      const Json jp = Json::parse(p.out), jb = Json::parse(b.out);
      const double ratio = jp["loss_ratio"], shift = jp["max_radius_shift"];
      const double margin = jp["eval"]["accuracy"].get<double>() - jb["eval"]["accuracy"].get<double>();
      const bool s_ok = ratio < 0.5 && margin >= 0.05 && shift > 1e-3 && t < 600.0;
      ok = ok && s_ok;
      detail += fmt(" [%.0f: ratio %.2f margin %.3f", seed, ratio, margin) + fmt(" shift %.2e %.0f s]", shift, t);
    }
    report("toy-training", ok, detail);
  }

  {
    const Run grad4 = cli({"gradcheck", "--threads", "4"});
    const Run train4 = cli({"train-toy", "--seed", "0", "--threads", "4"});
    const bool g_same = !grad1.out.empty() && grad1.out == grad4.out;
    const bool t_same = !train_seed0.empty() && train_seed0 == train4.out;
    report("determinism", g_same && t_same,
           std::string("gradcheck ") + (g_same ? "identical" : "differs") + ", train-toy " +
               (t_same ? "identical" : "differs"));
  }

  {
    const Run b = cli({"bench", "--points", "100000", "--queries", "4096", "--radius", "2.4", "--rois", "1"});
    const double q = b.code == 0 ? Json::parse(b.out)["ball_query"]["query_seconds"].get<double>() : 1e9;
    report("microbenchmark", q < 1.0, fmt("4096 queries on 1e5 points in %.3f s", q));
  }

  return failures == 0 ? 0 : 1;
}
