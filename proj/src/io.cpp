#include "pyrhead/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pyrhead/errors.hpp"

namespace pyrhead::io {

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <class T>
T take(std::istream& is, const char* what) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) throw FormatError(std::string("truncated stream while reading ") + what);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw FormatError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T field(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T required(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing key '" + key + "'");
  return field<T>(j, key, T{}, where);
}

Json vec_json(Vec3 v) { return Json::array({v.x, v.y, v.z}); }

Vec3 vec_from(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw FormatError(where + ": expected an array of 3 numbers");
  try {
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "' for reading");
  return is;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  return os;
}

}  // namespace

Json parse_json(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t upto = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    if (const auto p = msg.find("syntax error"); p != std::string::npos) msg = msg.substr(p);
    throw FormatError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os = open_out(path);
  os << text;
  if (!os) throw FormatError("failed writing '" + path + "'");
}

Json to_json(const Box3D& b) { return {{"corner", vec_json(b.corner)}, {"extents", vec_json(b.extents)}, {"yaw", b.yaw}}; }

Box3D box_from_json(const Json& j) {
  check_keys(j, {"corner", "extents", "yaw"}, "box");
  if (!j.contains("corner") || !j.contains("extents")) throw FormatError("box: needs corner and extents");
  Box3D b;
  b.corner = vec_from(j.at("corner"), "box.corner");
  b.extents = vec_from(j.at("extents"), "box.extents");
  b.yaw = field<double>(j, "yaw", 0.0, "box");
  b.validate();
  return b;
}

Json to_json(const PyramidConfig& cfg) {
  Json levels = Json::array();
  const AnchorMode anchor = cfg.levels.empty() ? AnchorMode::center : cfg.levels.front().anchor;
  for (const auto& l : cfg.levels) {
    Json lj = {{"grid", {l.grid.nw, l.grid.nl, l.grid.nh}},
               {"ratios", vec_json(l.ratios)},
               {"max_neighbors", l.max_neighbors},
               {"r_pre", l.r_pre}};
    if (l.anchor != anchor) lj["anchor_mode"] = to_string(l.anchor);
    levels.push_back(std::move(lj));
  }
  return {{"anchor_mode", to_string(anchor)}, {"levels", std::move(levels)}};
}

PyramidConfig pyramid_config_from_json(const Json& j) {
  check_keys(j, {"anchor_mode", "levels"}, "pyramid");
  PyramidConfig cfg;
  const auto anchor_name = field<std::string>(j, "anchor_mode", "center", "pyramid");
  AnchorMode anchor;
  try {
    anchor = anchor_mode_from_string(anchor_name);
  } catch (const Error& e) {
    throw FormatError(std::string("pyramid.anchor_mode: ") + e.what());
  }
  if (!j.contains("levels")) return PyramidConfig::standard(anchor);
  const Json& levels = j.at("levels");
  if (!levels.is_array() || levels.empty()) throw FormatError("pyramid.levels: expected a non-empty array");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const std::string where = "pyramid.levels[" + std::to_string(i) + "]";
    const Json& lj = levels[i];
    check_keys(lj, {"grid", "ratios", "max_neighbors", "r_pre", "anchor_mode"}, where);
    PyramidLevelConfig l;
    const auto grid = required<std::vector<std::size_t>>(lj, "grid", where);
    if (grid.size() != 3) throw FormatError(where + ".grid: expected 3 counts");
    l.grid = {grid[0], grid[1], grid[2]};
    if (lj.contains("ratios")) l.ratios = vec_from(lj.at("ratios"), where + ".ratios");
    l.max_neighbors = field<std::size_t>(lj, "max_neighbors", l.max_neighbors, where);
    l.r_pre = field<double>(lj, "r_pre", l.r_pre, where);
    l.anchor = lj.contains("anchor_mode") ? anchor_mode_from_string(field<std::string>(lj, "anchor_mode", "", where))
                                          : anchor;
    cfg.levels.push_back(l);
  }
  try {
    cfg.validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string("pyramid: ") + e.what());
  }
  return cfg;
}

Json to_json(const HeadConfig& cfg) {
  Json att = {{"d_model", cfg.attention.d_model}, {"heads", cfg.attention.heads}};
  if (cfg.attention.gates) {
    const GateOverride& g = *cfg.attention.gates;
    att["gates"] = {g.q, g.k, g.qk, g.v};
  } else {
    att["gates"] = nullptr;
  }
  const DarpConfig& d = cfg.darp;
  Json darp = {{"enabled", d.enabled},
               {"context_radii", {d.context_radii[0], d.context_radii[1]}},
               {"context_hidden", d.context_hidden},
               {"sphere_width", d.sphere_width},
               {"radius_hidden", d.radius_hidden},
               {"r_min", d.r_min},
               {"tau_start", d.schedule.tau_start},
               {"tau_end", d.schedule.tau_end},
               {"total_steps", d.schedule.total_steps}};
  return {{"schema_version", cfg.schema_version},
          {"pyramid", to_json(cfg.pyramid)},
          {"d_in", cfg.d_in},
          {"attention", std::move(att)},
          {"darp", std::move(darp)},
          {"level_width", cfg.level_width},
          {"fusion_widths", cfg.fusion_widths},
          {"loss",
           {{"cls_weight", cfg.loss.cls_weight},
            {"reg_weight", cfg.loss.reg_weight},
            {"positive_iou", cfg.loss.positive_iou}}}};
}

HeadConfig head_config_from_json(const Json& j) {
  check_keys(j, {"schema_version", "pyramid", "d_in", "attention", "darp", "level_width", "fusion_widths", "loss"},
             "head");
  HeadConfig cfg = HeadConfig::standard();
  cfg.schema_version = field<int>(j, "schema_version", kHeadConfigSchemaVersion, "head");
  if (cfg.schema_version != kHeadConfigSchemaVersion) {
    throw FormatError("head.schema_version: expected " + std::to_string(kHeadConfigSchemaVersion) + ", got " +
                      std::to_string(cfg.schema_version));
  }
  if (j.contains("pyramid")) cfg.pyramid = pyramid_config_from_json(j.at("pyramid"));
  cfg.d_in = field<std::size_t>(j, "d_in", cfg.d_in, "head");
  if (j.contains("attention")) {
    const Json& a = j.at("attention");
    check_keys(a, {"d_model", "heads", "gates"}, "head.attention");
    cfg.attention.d_model = field<std::size_t>(a, "d_model", cfg.attention.d_model, "head.attention");
    cfg.attention.heads = field<std::size_t>(a, "heads", cfg.attention.heads, "head.attention");
    if (a.contains("gates") && !a.at("gates").is_null()) {
      const auto g = field<std::vector<double>>(a, "gates", {}, "head.attention");
      if (g.size() != 4) throw FormatError("head.attention.gates: expected [q, k, qk, v]");
      cfg.attention.gates = GateOverride{g[0], g[1], g[2], g[3]};
    }
  }
  if (j.contains("darp")) {
    const Json& dj = j.at("darp");
    const std::string w = "head.darp";
    check_keys(dj,
               {"enabled", "context_radii", "context_hidden", "sphere_width", "radius_hidden", "r_min", "tau_start",
                "tau_end", "total_steps"},
               w);
    DarpConfig& d = cfg.darp;
    d.enabled = field<bool>(dj, "enabled", d.enabled, w);
    if (dj.contains("context_radii")) {
      const auto r = field<std::vector<double>>(dj, "context_radii", {}, w);
      if (r.size() != 2) throw FormatError(w + ".context_radii: expected two radii");
      d.context_radii = {r[0], r[1]};
    }
    d.context_hidden = field<std::size_t>(dj, "context_hidden", d.context_hidden, w);
    d.sphere_width = field<std::size_t>(dj, "sphere_width", d.sphere_width, w);
    d.radius_hidden = field<std::size_t>(dj, "radius_hidden", d.radius_hidden, w);
    d.r_min = field<double>(dj, "r_min", d.r_min, w);
    d.schedule.tau_start = field<double>(dj, "tau_start", d.schedule.tau_start, w);
    d.schedule.tau_end = field<double>(dj, "tau_end", d.schedule.tau_end, w);
    d.schedule.total_steps = field<std::size_t>(dj, "total_steps", d.schedule.total_steps, w);
  }
  cfg.level_width = field<std::size_t>(j, "level_width", cfg.level_width, "head");
  cfg.fusion_widths = field<std::vector<std::size_t>>(j, "fusion_widths", cfg.fusion_widths, "head");
  if (j.contains("loss")) {
    const Json& l = j.at("loss");
    check_keys(l, {"cls_weight", "reg_weight", "positive_iou"}, "head.loss");
    cfg.loss.cls_weight = field<double>(l, "cls_weight", cfg.loss.cls_weight, "head.loss");
    cfg.loss.reg_weight = field<double>(l, "reg_weight", cfg.loss.reg_weight, "head.loss");
    cfg.loss.positive_iou = field<double>(l, "positive_iou", cfg.loss.positive_iou, "head.loss");
  }
  try {
    cfg.validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string("head: ") + e.what());
  }
  return cfg;
}

HeadConfig load_head_config(const std::string& path) {
  return head_config_from_json(parse_json(read_text_file(path), path));
}

void write_point_set(std::ostream& os, const PointSet& ps) {
  ps.validate();
  os.write("PSET", 4);
  const std::size_t d = ps.empty() ? ps.feats.cols() : ps.feature_dim();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ps.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (const Vec3& p : ps.coords) {
    put<float>(os, static_cast<float>(p.x));
    put<float>(os, static_cast<float>(p.y));
    put<float>(os, static_cast<float>(p.z));
  }
  for (double v : ps.feats.data()) put<float>(os, static_cast<float>(v));
  if (!os) throw FormatError("failed writing point set");
}

PointSet read_point_set(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "PSET", 4) != 0) throw FormatError("not a PSET point set");
  const auto n = take<std::uint32_t>(is, "point count");
  const auto d = take<std::uint32_t>(is, "feature width");
  std::vector<Vec3> coords(n);
  for (auto& p : coords) {
    p.x = take<float>(is, "coordinates");
    p.y = take<float>(is, "coordinates");
    p.z = take<float>(is, "coordinates");
  }
  num::Tensor feats({n, d});
  for (double& v : feats.data()) v = take<float>(is, "features");
  PointSet ps(std::move(coords), std::move(feats));
  ps.validate();
  return ps;
}

void save_point_set(const std::string& path, const PointSet& ps) {
  std::ofstream os = open_out(path);
  write_point_set(os, ps);
}

PointSet load_point_set(const std::string& path) {
  std::ifstream is = open_in(path);
  return read_point_set(is);
}

Json to_json(const PointSet& ps) {
  Json coords = Json::array();
  Json feats = Json::array();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    coords.push_back(vec_json(ps.coords[i]));
    const auto f = ps.feature(static_cast<PointId>(i));
    feats.push_back(std::vector<double>(f.begin(), f.end()));
  }
  return {{"coords", std::move(coords)}, {"feats", std::move(feats)}};
}

PointSet point_set_from_json(const Json& j) {
  check_keys(j, {"coords", "feats"}, "points");
  if (!j.contains("coords") || !j.at("coords").is_array()) throw FormatError("points.coords: expected an array");
  const Json& cj = j.at("coords");
  std::vector<Vec3> coords;
  for (std::size_t i = 0; i < cj.size(); ++i) coords.push_back(vec_from(cj[i], "points.coords[" + std::to_string(i) + "]"));
  const auto rows = field<std::vector<std::vector<double>>>(j, "feats", {}, "points");
  if (rows.size() != coords.size()) throw FormatError("points: feats and coords differ in length");
  const std::size_t d = rows.empty() ? 0 : rows.front().size();
  num::Tensor feats({coords.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw FormatError("points.feats: ragged feature rows");
    std::copy(rows[i].begin(), rows[i].end(), feats.row(i).begin());
  }
  PointSet ps(std::move(coords), std::move(feats));
  ps.validate();
  return ps;
}

void write_checkpoint(std::ostream& os, const num::ParameterSet& params) {
  os.write("PYRHCKPT", 8);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t dim : p.value.shape()) put<std::uint64_t>(os, dim);
    for (double v : p.value.data()) put<double>(os, v);
  }
  if (!os) throw FormatError("failed writing checkpoint");
}

void read_checkpoint(std::istream& is, num::ParameterSet& params) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "PYRHCKPT", 8) != 0) throw FormatError("not a checkpoint");
  const auto version = take<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = take<std::uint32_t>(is, "tensor count");
  if (count != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                      std::to_string(params.size()));
  }
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = take<std::uint32_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("truncated stream while reading tensor name");
    const auto rank = take<std::uint32_t>(is, "rank");
    num::Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(take<std::uint64_t>(is, "dims"));
    const auto slot = params.find(name);
    if (!slot) throw FormatError("checkpoint tensor '" + name + "' is not a model parameter");
    num::Tensor& dst = params[*slot].value;
    if (dst.shape() != shape) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + num::shape_string(shape) + ", model expects " +
                        num::shape_string(dst.shape()));
    }
    for (double& v : dst.data()) v = take<double>(is, "tensor data");
  }
}

void save_checkpoint(const std::string& path, const num::ParameterSet& params) {
  std::ofstream os = open_out(path);
  write_checkpoint(os, params);
}

void load_checkpoint(const std::string& path, num::ParameterSet& params) {
  std::ifstream is = open_in(path);
  read_checkpoint(is, params);
}

Json scene_sidecar(const Scene& s) {
  Json objects = Json::array();
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    Json o = to_json(s.objects[i]);
    if (i < s.object_points.size()) o["points"] = s.object_points[i];
    objects.push_back(std::move(o));
  }
  Json proposals = Json::array();
  for (std::size_t i = 0; i < s.proposals.size(); ++i) {
    Json p = {{"box", to_json(s.proposals[i])}, {"kind", to_string(s.kinds[i])}};
    p["target"] = s.targets[i].has_object ? to_json(s.targets[i].box) : Json(nullptr);
    proposals.push_back(std::move(p));
  }
  return {{"objects", std::move(objects)}, {"proposals", std::move(proposals)}};
}

void save_scene(const std::string& prefix, const Scene& s) {
  save_point_set(prefix + ".pset", s.points);
  write_text_file(prefix + ".json", scene_sidecar(s).dump(2) + "\n");
}

Scene load_scene(const std::string& prefix) {
  Scene s;
  s.points = load_point_set(prefix + ".pset");
  const Json j = parse_json(read_text_file(prefix + ".json"), prefix + ".json");
  check_keys(j, {"objects", "proposals"}, "scene");
  for (const Json& o : j.value("objects", Json::array())) {
    Json box = o;
    if (box.contains("points")) {
      s.object_points.push_back(box.at("points").get<std::size_t>());
      box.erase("points");
    }
    s.objects.push_back(box_from_json(box));
  }
  for (const Json& p : j.value("proposals", Json::array())) {
    check_keys(p, {"box", "kind", "target"}, "scene.proposals[]");
    s.proposals.push_back(box_from_json(p.at("box")));
    const std::string kind = p.value("kind", "background");
    s.kinds.push_back(kind == "object" ? ProposalKind::object
                                       : kind == "distractor" ? ProposalKind::distractor : ProposalKind::background);
    if (p.contains("target") && !p.at("target").is_null()) {
      s.targets.push_back({true, box_from_json(p.at("target"))});
    } else {
      s.targets.push_back({false, {}});
    }
  }
  return s;
}

}  // namespace pyrhead::io
