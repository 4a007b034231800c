#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pyrhead/errors.hpp"
#include "pyrhead/gradcheck.hpp"
#include "pyrhead/head.hpp"
#include "pyrhead/io.hpp"
#include "pyrhead/parallel.hpp"
#include "pyrhead/synth.hpp"

namespace pyrhead::cli {
namespace {

using io::Json;

struct Shared {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "json";
  std::size_t threads = 0;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string num_str(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<double> parse_list(const std::string& text, std::size_t n, const std::string& flag) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    const char* b = item.data();
    const char* e = b + item.size();
    while (b < e && *b == ' ') ++b;
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e) throw UsageError(flag + ": '" + item + "' is not a number");
    vals.push_back(v);
  }
  if (vals.size() != n) {
    throw UsageError(flag + " expects " + std::to_string(n) + " comma-separated values, got " +
                     std::to_string(vals.size()));
  }
  return vals;
}

Box3D parse_box(const std::string& text) {
  const auto v = parse_list(text, 7, "--box");
  Box3D b{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}, v[6]};
  b.validate();
  return b;
}

GridSpec parse_grid(const std::string& text) {
  const auto v = parse_list(text, 3, "--grid");
  for (double x : v) {
    if (!(x >= 1.0) || x != std::floor(x)) throw UsageError("--grid entries must be positive integers");
  }
  return {static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2])};
}

HeadConfig head_config(const Shared& s, HeadConfig fallback) {
  if (s.config.empty()) return fallback;
  return io::load_head_config(s.config);
}

// --out file or the given stream
void emit(const Shared& s, std::ostream& out, const std::string& text) {
  if (s.out.empty()) {
    out << text;
  } else {
    io::write_text_file(s.out, text);
  }
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json vec_json(Vec3 p) { return Json::array({p.x, p.y, p.z}); }

std::string csv_row(std::initializer_list<std::string> cells) {
  std::string row;
  for (const auto& c : cells) {
    if (!row.empty()) row += ',';
    row += c;
  }
  return row + "\n";
}

void add_shared(CLI::App* sub, Shared& s, std::uint64_t default_seed) {
  s.seed = default_seed;
  sub->add_option("--config", s.config, "Head config JSON");
  sub->add_option("--seed", s.seed, "Random seed")->capture_default_str();
  sub->add_option("--out", s.out, "Write results to this file instead of stdout");
  sub->add_option("--format", s.format, "Output format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  sub->add_option("--threads", s.threads, "Worker threads (default: PYRHEAD_THREADS or 1)");
}

// ---- gridgen

struct GridgenArgs {
  std::string box;
  std::string grid;
};

int gridgen(const Shared& s, const GridgenArgs& a, std::ostream& out) {
  const Box3D box = parse_box(a.box);
  std::vector<std::vector<Vec3>> levels;
  if (!a.grid.empty()) {
    levels.push_back(grid_points(box, parse_grid(a.grid)));
  } else {
    const HeadConfig cfg = head_config(s, HeadConfig::standard());
    for (const auto& lc : cfg.pyramid.levels) levels.push_back(pyramid_grid_points(box, lc));
  }
  std::size_t total = 0;
  for (const auto& l : levels) total += l.size();
  if (s.format == "csv") {
    std::string text = "level,x,y,z\n";
    for (std::size_t l = 0; l < levels.size(); ++l) {
      for (const Vec3& p : levels[l]) text += csv_row({std::to_string(l), num_str(p.x), num_str(p.y), num_str(p.z)});
    }
    emit(s, out, text);
    return kExitOk;
  }
  Json j;
  j["count"] = total;
  j["levels"] = Json::array();
  for (const auto& l : levels) {
    Json pts = Json::array();
    for (const Vec3& p : l) pts.push_back(vec_json(p));
    j["levels"].push_back(pts);
  }
  emit(s, out, dump(j));
  return kExitOk;
}

// ---- attend

struct AttendArgs {
  std::string op;
  std::string points;
  std::string scene;
  std::string box;
  std::string grid = "4,4,4";
  double radius = 0.8;
  std::size_t max_neighbors = 16;
  std::string gates;
  double tau = 0.01;
  std::size_t d_model = 64;
  std::size_t heads = 4;
};

int attend(const Shared& s, const AttendArgs& a, std::ostream& out) {
  if (!a.gates.empty() && a.op != "unified" && a.op != "darp") {
    throw UsageError("--gates only applies to --op unified or darp");
  }
  PointSet ps;
  std::optional<Box3D> box;
  if (!a.points.empty() && !a.scene.empty()) throw UsageError("give either --points or --scene");
  if (!a.points.empty()) {
    const bool is_json = a.points.size() >= 5 && a.points.substr(a.points.size() - 5) == ".json";
    ps = is_json ? io::point_set_from_json(io::parse_json(io::read_text_file(a.points), a.points))
                 : io::load_point_set(a.points);
  } else {
    Scene sc;
    if (!a.scene.empty()) {
      sc = io::load_scene(a.scene);
    } else {
      SceneConfig cfg;
      cfg.seed = s.seed;
      sc = generate_scene(cfg);
    }
    ps = sc.points;
    if (!sc.proposals.empty()) box = sc.proposals.front();
  }
  if (!a.box.empty()) box = parse_box(a.box);
  if (!box) throw UsageError("--box is required when the fixture has no proposals");
  if (!(a.radius > 0.0)) throw UsageError("--radius must be positive");

  const std::vector<Vec3> grid = grid_points(*box, parse_grid(a.grid));
  const SpatialIndex idx(ps, std::max(a.radius, 0.1));
  const std::size_t d = ps.feature_dim();
  num::ParameterSet params;
  num::Rng rng(s.seed);
  num::Tape tape(&params);
  num::Var f;
  if (a.op == "pool") {
    const num::Mlp mlp = num::Mlp::create(params, "pool", {d + 3, a.d_model, a.d_model}, rng);
    f = pool_feature(tape, gather_neighbors(ps, idx, grid, a.radius, a.max_neighbors), mlp);
  } else {
    const AttentionParams ap = AttentionParams::create(params, "attention", d, a.d_model, a.heads, rng);
    std::optional<GateOverride> gates;
    if (!a.gates.empty()) {
      const auto g = parse_list(a.gates, 4, "--gates");
      gates = GateOverride{g[0], g[1], g[2], g[3]};
      gates->validate();
    }
    if (a.op == "darp") {
      if (!(a.tau > 0.0)) throw UsageError("--tau must be positive");
      const NeighborBatch nb = gather_neighbors(ps, idx, grid, extended_radius(a.radius, a.tau), a.max_neighbors);
      f = roi_grid_attention_darp(tape, nb, ap, tape.constant(num::Tensor::vector({a.radius})), a.tau, gates);
    } else {
      const NeighborBatch nb = gather_neighbors(ps, idx, grid, a.radius, a.max_neighbors);
      if (a.op == "graph") f = graph_feature(tape, nb, ap);
      else if (a.op == "attention") f = attention_feature(tape, nb, ap);
      else if (a.op == "transformer") f = point_transformer_feature(tape, nb, ap);
      else f = roi_grid_attention(tape, nb, ap, gates);
    }
  }
  const num::Tensor& v = f.value();
  if (s.format == "csv") {
    std::string text;
    for (std::size_t r = 0; r < v.rows(); ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) text += (c ? "," : "") + num_str(v.at(r, c));
      text += "\n";
    }
    emit(s, out, text);
    return kExitOk;
  }
  Json j;
  j["op"] = a.op;
  j["rows"] = v.rows();
  j["cols"] = v.cols();
  Json rows = Json::array();
  for (std::size_t r = 0; r < v.rows(); ++r) {
    const auto row = v.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["f_grid"] = rows;
  emit(s, out, dump(j));
  return kExitOk;
}

// ---- gradcheck

int gradcheck(const Shared& s, GradCheckOptions o, std::ostream& out) {
  o.seed = s.seed;
  const auto groups = run_gradcheck(o);
  bool ok = true;
  for (const auto& g : groups) ok = ok && g.passed(o.tolerance);
  if (s.format == "csv") {
    std::string text = "group,max_rel_error,entries,retried,passed\n";
    for (const auto& g : groups) {
      text += csv_row({g.name, num_str(g.max_rel_error), std::to_string(g.entries), std::to_string(g.retried),
                       g.passed(o.tolerance) ? "1" : "0"});
    }
    emit(s, out, text);
  } else {
    Json j;
    j["seed"] = s.seed;
    j["h"] = o.h;
    j["tolerance"] = o.tolerance;
    j["passed"] = ok;
    j["groups"] = Json::array();
    for (const auto& g : groups) {
      j["groups"].push_back({{"name", g.name},
                             {"max_rel_error", g.max_rel_error},
                             {"entries", g.entries},
                             {"retried", g.retried},
                             {"passed", g.passed(o.tolerance)}});
    }
    emit(s, out, dump(j));
  }
  return ok ? kExitOk : kExitCheckFailed;
}

// ---- train-toy

struct TrainArgs {
  TrainConfig train;
  std::size_t train_scenes = 200;
  std::size_t eval_scenes = 50;
  bool baseline = false;
  std::string checkpoint;
};

Json eval_json(const EvalResult& e) {
  Json j{{"rois", e.rois},         {"accuracy", e.accuracy}, {"base_rate", e.base_rate},
         {"positives", e.positives}, {"mean_iou", e.mean_iou}, {"recall", e.recall}};
  j["buckets"] = Json::array();
  for (std::size_t b = 0; b < kSparsityBuckets; ++b) {
    const auto& s = e.buckets[b];
    j["buckets"].push_back({{"bucket", sparsity_bucket_label(b)},
                            {"rois", s.rois},
                            {"accuracy", s.accuracy},
                            {"positives", s.positives},
                            {"mean_iou", s.mean_iou}});
  }
  return j;
}

int train(const Shared& s, TrainArgs a, std::ostream& out) {
  if (a.train.steps == 0) throw UsageError("--steps must be at least 1");
  if (a.train_scenes == 0) throw UsageError("--train-scenes must be at least 1");
  const std::size_t threads = resolve_threads(s.threads);
  const HeadConfig cfg = head_config(s, a.baseline ? HeadConfig::single_level_baseline() : HeadConfig::standard());
  ToyTaskConfig task;
  task.seed = s.seed;
  task.train_scenes = a.train_scenes;
  task.eval_scenes = a.eval_scenes;
  const ToyData data = generate_toy_data(task, threads);
  PyramidHead head(cfg, s.seed);
  a.train.seed = s.seed;
  a.train.threads = threads;
  const TrainResult r = train_toy(head, data.train, a.train);
  std::optional<EvalResult> ev;
  if (!data.eval.empty()) ev = evaluate(head, data.eval, 0.7, threads);
  if (!a.checkpoint.empty()) io::save_checkpoint(a.checkpoint, head.params());

  if (s.format == "csv") {
    std::string text = "step,tau,loss,grad_norm,radius_grad_norm";
    const std::size_t levels = r.steps.empty() ? 0 : r.steps.front().radii.size();
    for (std::size_t l = 0; l < levels; ++l) text += ",r" + std::to_string(l);
    text += "\n";
    for (const auto& st : r.steps) {
      text += std::to_string(st.step) + "," + num_str(st.tau) + "," + num_str(st.loss) + "," + num_str(st.grad_norm) +
              "," + num_str(st.radius_grad_norm);
      for (double rv : st.radii) text += "," + num_str(rv);
      text += "\n";
    }
    emit(s, out, text);
    return kExitOk;
  }
  Json j;
  j["schema_version"] = kHeadConfigSchemaVersion;
  j["variant"] = cfg.darp.enabled ? "pyramid" : "fixed-radius";
  j["seed"] = s.seed;
  j["steps"] = a.train.steps;
  j["batch"] = a.train.batch;
  j["lr"] = a.train.lr;
  j["momentum"] = a.train.momentum;
  j["clip_norm"] = a.train.clip_norm;
  j["radius_lr_scale"] = a.train.radius_lr_scale;
  j["train_scenes"] = a.train_scenes;
  j["eval_scenes"] = a.eval_scenes;
  j["initial_loss"] = r.initial_loss;
  j["final_loss"] = r.final_loss;
  j["loss_ratio"] = r.initial_loss > 0.0 ? r.final_loss / r.initial_loss : 0.0;
  j["initial_radii"] = r.initial_radii;
  j["final_radii"] = r.final_radii;
  j["max_radius_shift"] = r.max_radius_shift;
  j["eval"] = ev ? eval_json(*ev) : Json(nullptr);
  Json traj = Json::array();
  for (const auto& st : r.steps) {
    traj.push_back({{"step", st.step},
                    {"tau", st.tau},
                    {"loss", st.loss},
                    {"grad_norm", st.grad_norm},
                    {"radius_grad_norm", st.radius_grad_norm},
                    {"radii", st.radii}});
  }
  j["trajectory"] = traj;
  emit(s, out, dump(j));
  return kExitOk;
}

// ---- stats

struct StatsArgs {
  std::size_t scenes = 20;
  std::vector<std::string> load;
  std::string save;
};

int stats(const Shared& s, const StatsArgs& a, std::ostream& out) {
  const HeadConfig cfg = head_config(s, HeadConfig::standard());
  std::vector<Scene> scenes;
  if (!a.load.empty()) {
    for (const auto& p : a.load) scenes.push_back(io::load_scene(p));
  } else {
    const std::size_t threads = resolve_threads(s.threads);
    scenes.resize(a.scenes);
    parallel_for(a.scenes, threads, [&](std::size_t i) {
      SceneConfig sc;
      sc.seed = s.seed * 1000003ULL + i;
      scenes[i] = generate_scene(sc);
    });
  }
  if (!a.save.empty()) {
    for (std::size_t i = 0; i < scenes.size(); ++i) io::save_scene(a.save + std::to_string(i), scenes[i]);
  }
  const auto rows = sparsity_stats(scenes, cfg.pyramid);
  if (s.format == "csv") {
    emit(s, out, sparsity_csv(rows));
    return kExitOk;
  }
  Json j = Json::array();
  for (const auto& r : rows) j.push_back({{"bucket", r.bucket}, {"interior", r.interior}, {"gathered", r.gathered}});
  emit(s, out, dump(j));
  return kExitOk;
}

// ---- bench

struct BenchArgs {
  std::size_t points = 100000;
  std::size_t queries = 4096;
  double radius = 2.4;
  std::size_t rois = 4;
  double max_query_seconds = 0.0;
};

int bench(const Shared& s, const BenchArgs& a, std::ostream& out) {
  using Clock = std::chrono::steady_clock;
  auto seconds = [](Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); };
  if (!(a.radius > 0.0)) throw UsageError("--radius must be positive");
  num::Rng rng(s.seed);
  std::uniform_real_distribution<double> uxy(0.0, 40.0);
  std::uniform_real_distribution<double> uz(0.0, 4.0);
  std::vector<Vec3> pts(a.points);
  for (auto& p : pts) p = {uxy(rng), uxy(rng), uz(rng)};
  std::vector<Vec3> centers(a.queries);
  for (auto& c : centers) c = {uxy(rng), uxy(rng), uz(rng)};

  auto t0 = Clock::now();
  const SpatialIndex idx(pts, a.radius);
  const double build = seconds(t0);
  std::size_t found = 0;
  t0 = Clock::now();
  for (const Vec3& c : centers) found += idx.ball_query(c, a.radius).size();
  const double query = seconds(t0);

  SceneConfig sc;
  sc.seed = s.seed;
  const PreparedScene scene = prepare(generate_scene(sc));
  const HeadConfig cfg = head_config(s, HeadConfig::standard());
  const PyramidHead head(cfg, s.seed);
  const std::size_t n = std::min(a.rois, scene.scene.proposals.size());
  std::size_t gathered = 0;
  t0 = Clock::now();
  for (std::size_t i = 0; i < n; ++i) {
    num::Tape tape(&head.params());
    gathered += head.forward(tape, scene.scene.proposals[i], scene.scene.points, scene.index, cfg.darp.schedule.eval()).gathered;
  }
  const double fwd = n ? seconds(t0) / static_cast<double>(n) : 0.0;

  const bool ok = a.max_query_seconds <= 0.0 || query < a.max_query_seconds;
  if (s.format == "csv") {
    std::string text = "benchmark,size,seconds\n";
    text += csv_row({"index_build", std::to_string(a.points), num_str(build)});
    text += csv_row({"ball_query", std::to_string(a.queries), num_str(query)});
    text += csv_row({"head_forward_per_roi", std::to_string(n), num_str(fwd)});
    emit(s, out, text);
  } else {
    Json j;
    j["ball_query"] = {{"points", a.points}, {"queries", a.queries}, {"radius", a.radius},
                       {"build_seconds", build}, {"query_seconds", query}, {"neighbors", found}};
    j["head_forward"] = {{"rois", n}, {"seconds_per_roi", fwd}, {"gathered_rows", gathered}};
    j["passed"] = ok;
    emit(s, out, dump(j));
  }
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const std::string schema = "config schema version " + std::to_string(kHeadConfigSchemaVersion);
  CLI::App app{"Pyramid RoI head toolkit (" + schema + ")", "pyrhead"};
  app.require_subcommand(1);
  app.footer(schema);

  Shared sg, sa, sc, st, ss, sb;
  GridgenArgs ga;
  AttendArgs aa;
  GradCheckOptions go;
  TrainArgs ta;
  StatsArgs sta;
  BenchArgs ba;

  auto* g = app.add_subcommand("gridgen", "Print pyramid RoI-grid points for a box (" + schema + ")");
  g->footer(schema);
  add_shared(g, sg, 0);
  g->add_option("--box", ga.box, "Box as corner x,y,z,W,L,H,yaw")->required();
  g->add_option("--grid", ga.grid, "Single grid Nw,Nl,Nh instead of the configured pyramid");

  auto* a = app.add_subcommand("attend", "Run one aggregation operator on a scene fixture and print f_grid (" + schema + ")");
  a->footer(schema);
  add_shared(a, sa, 0);
  a->add_option("--op", aa.op, "Operator")
      ->required()
      ->check(CLI::IsMember({"pool", "graph", "attention", "transformer", "unified", "darp"}));
  a->add_option("--points", aa.points, "Point set fixture (.pset or .json)");
  a->add_option("--scene", aa.scene, "Scene prefix (<prefix>.pset + <prefix>.json)");
  a->add_option("--box", aa.box, "RoI as corner x,y,z,W,L,H,yaw (default: first proposal)");
  a->add_option("--grid", aa.grid, "Grid Nw,Nl,Nh")->capture_default_str();
  a->add_option("--radius", aa.radius, "Ball-query radius")->capture_default_str();
  a->add_option("--max-neighbors", aa.max_neighbors, "Neighbors kept per grid point")->capture_default_str();
  a->add_option("--gates", aa.gates, "Fixed gates q,k,qk,v for unified/darp");
  a->add_option("--tau", aa.tau, "Soft-radius temperature for darp")->capture_default_str();
  a->add_option("--d-model", aa.d_model, "Operator width")->capture_default_str();
  a->add_option("--heads", aa.heads, "Attention heads")->capture_default_str();

  auto* c = app.add_subcommand("gradcheck", "Compare reverse-mode gradients with central differences (" + schema + ")");
  c->footer(schema);
  add_shared(c, sc, 1);
  c->add_option("--step", go.h, "Finite-difference step")->capture_default_str();
  c->add_option("--tolerance", go.tolerance, "Maximum relative error")->capture_default_str();
  c->add_option("--head-samples", go.head_samples, "Entries probed per head tensor")->capture_default_str();

  auto* t = app.add_subcommand("train-toy", "Train the head on the synthetic task and write metrics (" + schema + ")");
  t->footer(schema);
  add_shared(t, st, 0);
  t->add_option("--steps", ta.train.steps, "Gradient steps")->capture_default_str();
  t->add_option("--batch", ta.train.batch, "RoIs per step")->capture_default_str();
  t->add_option("--lr", ta.train.lr, "Learning rate")->capture_default_str();
  t->add_option("--momentum", ta.train.momentum, "Momentum")->capture_default_str();
  t->add_option("--clip-norm", ta.train.clip_norm, "Gradient-norm cap, 0 disables")->capture_default_str();
  t->add_option("--radius-lr-scale", ta.train.radius_lr_scale, "Learning-rate multiplier of the radius head")
      ->capture_default_str();
  t->add_option("--train-scenes", ta.train_scenes, "Training scenes")->capture_default_str();
  t->add_option("--eval-scenes", ta.eval_scenes, "Held-out scenes, 0 skips evaluation")->capture_default_str();
  t->add_flag("--baseline", ta.baseline, "Fixed-radius single-level head");
  t->add_option("--checkpoint", ta.checkpoint, "Save trained parameters here");

  auto* s = app.add_subcommand("stats", "Object-point and gathered-point histograms (" + schema + ")");
  s->footer(schema);
  ss.format = "csv";
  add_shared(s, ss, 0);
  s->add_option("--scenes", sta.scenes, "Number of generated scenes")->capture_default_str();
  s->add_option("--scene", sta.load, "Load this scene prefix instead of generating (repeatable)");
  s->add_option("--save", sta.save, "Save the scenes as <prefix><i>.pset/.json");

  auto* b = app.add_subcommand("bench", "Time ball queries and the head forward pass (" + schema + ")");
  b->footer(schema);
  add_shared(b, sb, 0);
  b->add_option("--points", ba.points, "Indexed points")->capture_default_str();
  b->add_option("--queries", ba.queries, "Query centers")->capture_default_str();
  b->add_option("--radius", ba.radius, "Query radius")->capture_default_str();
  b->add_option("--rois", ba.rois, "RoIs for the forward timing")->capture_default_str();
  b->add_option("--max-query-seconds", ba.max_query_seconds, "Fail when the queries take longer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (g->parsed()) return gridgen(sg, ga, out);
    if (a->parsed()) return attend(sa, aa, out);
    if (c->parsed()) return gradcheck(sc, go, out);
    if (t->parsed()) return train(st, ta, out);
    if (s->parsed()) return stats(ss, sta, out);
    if (b->parsed()) return bench(sb, ba, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitUsage;
}

}  // namespace pyrhead::cli
