#include "pyrhead/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pyrhead/errors.hpp"
#include "pyrhead/parallel.hpp"

namespace pyrhead {

using num::Rng;
using num::Tape;
using num::Tensor;

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::size_t log_uniform_count(Rng& rng, std::size_t lo, std::size_t hi) {
  if (lo == hi) return lo;
  const double u = uniform(rng, std::log(static_cast<double>(lo)), std::log(static_cast<double>(hi) + 1.0));
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(std::exp(u))), lo, hi);
}

// Surface points on the sensor-facing side faces and the top face (when
// the sensor looks down on it). Noise pushes points inward only, so every
// sample stays inside the closed box.
void sample_shell(const Box3D& box, std::size_t n, Vec3 sensor, double noise, Rng& rng, std::vector<Vec3>& out) {
  struct Face {
    int axis;
    int side;
    double area;
  };
  const Vec3 e = box.extents;
  std::vector<Face> faces;
  for (int axis = 0; axis < 3; ++axis) {
    for (int side : {-1, 1}) {
      if (axis == 2 && side < 0) continue;  // never sample the ground face
      Vec3 local = e * 0.5;
      local[axis] += side * 0.5 * e[axis];
      const Vec3 fc = box.to_world(box.corner + local);
      Vec3 normal_c{};
      normal_c[axis] = side;
      const Vec3 tip = box.to_world(box.corner + local + normal_c);
      if (dot(tip - fc, sensor - fc) <= 0.0) continue;
      const double area = e[(axis + 1) % 3] * e[(axis + 2) % 3];
      faces.push_back({axis, side, area});
    }
  }
  if (faces.empty()) faces.push_back({2, 1, e.x * e.y});
  double total = 0.0;
  for (const auto& f : faces) total += f.area;
  std::normal_distribution<double> gauss(0.0, noise > 0.0 ? noise : 1.0);
  for (std::size_t s = 0; s < n; ++s) {
    double pick = uniform(rng, 0.0, total);
    std::size_t fi = 0;
    while (fi + 1 < faces.size() && pick > faces[fi].area) pick -= faces[fi++].area;
    const Face& f = faces[fi];
    Vec3 local;
    for (int a = 0; a < 3; ++a) local[a] = uniform(rng, 0.0, e[a]);
    const double inward = noise > 0.0 ? std::min(std::abs(gauss(rng)), e[f.axis]) : 0.0;
    local[f.axis] = f.side > 0 ? e[f.axis] - inward : inward;
    out.push_back(box.to_world(box.corner + local));
  }
}

Box3D jitter_box(const Box3D& b, const JitterConfig& j, Rng& rng) {
  const Vec3 c = b.center() + Vec3{uniform(rng, -j.center, j.center), uniform(rng, -j.center, j.center),
                                   uniform(rng, -j.center, j.center)};
  const Vec3 e{b.extents.x * uniform(rng, j.scale_lo, j.scale_hi), b.extents.y * uniform(rng, j.scale_lo, j.scale_hi),
               b.extents.z * uniform(rng, j.scale_lo, j.scale_hi)};
  return Box3D::from_center(c, e, wrap_angle(b.yaw + uniform(rng, -j.yaw, j.yaw)));
}

Box3D random_car(Rng& rng, double cx, double cy) {
  const Vec3 ext{uniform(rng, 1.6, 2.0), uniform(rng, 3.6, 4.6), uniform(rng, 1.4, 1.7)};
  const double yaw = wrap_angle(uniform(rng, -M_PI, M_PI));
  return Box3D::from_center({cx, cy, 0.5 * ext.z}, ext, yaw);
}

}  // namespace

std::string to_string(ProposalKind k) {
  switch (k) {
    case ProposalKind::object: return "object";
    case ProposalKind::distractor: return "distractor";
    case ProposalKind::background: return "background";
  }
  return "unknown";
}

void SceneConfig::validate() const {
  if (!(extent > 0.0)) throw ParameterError("scene extent must be positive");
  if (min_points > max_points) throw ParameterError("min_points must not exceed max_points");
  if (min_points < 1 && !allow_empty_objects) throw ParameterError("min_points must be >= 1");
  if (clutter_density < 0.0 || noise < 0.0) throw ParameterError("clutter density and noise must be non-negative");
  if (!(jitter.scale_lo > 0.0 && jitter.scale_hi >= jitter.scale_lo)) throw ParameterError("bad jitter scale range");
}

Scene generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Scene scene;
  std::vector<Vec3> coords;
  const Vec3 sensor{0.0, 0.0, cfg.sensor_height};
  const std::size_t placed = cfg.num_objects + cfg.num_distractors;
  const double margin = std::min(6.0, 0.25 * cfg.extent);
  const double half = 0.5 * cfg.extent - margin;

  // greedy placement, restarted when it paints itself into a corner
  std::vector<Vec3> centers;
  for (int round = 0; round < 200 && centers.size() < placed; ++round) {
    centers.clear();
    for (std::size_t o = 0; o < placed; ++o) {
      bool ok = false;
      for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        const Vec3 c{uniform(rng, -half, half), uniform(rng, -half, half), 0.0};
        if (std::hypot(c.x, c.y) < 4.0) continue;
        ok = std::all_of(centers.begin(), centers.end(),
                         [&](Vec3 q) { return std::hypot(c.x - q.x, c.y - q.y) >= 10.0; });
        if (ok) centers.push_back(c);
      }
      if (!ok) break;
    }
  }
  if (centers.size() < placed) throw ParameterError("scene too crowded to place every object");

  std::vector<Box3D> distractors;
  for (std::size_t o = 0; o < placed; ++o) {
    const Box3D box = random_car(rng, centers[o].x, centers[o].y);
    const std::size_t n = log_uniform_count(rng, cfg.min_points, cfg.max_points);
    sample_shell(box, n, sensor, cfg.noise, rng, coords);
    if (o < cfg.num_objects) {
      scene.objects.push_back(box);
      scene.object_points.push_back(n);
      continue;
    }
    distractors.push_back(box);
    // slab beside one long face
    const double side = rng() % 2 == 0 ? -1.0 : 1.0;
    const double gap = uniform(rng, 1.5, 3.0);
    const Vec3 slab_ext{0.3, uniform(rng, 2.5, 4.0), uniform(rng, 2.2, 3.0)};
    Vec3 local = box.extents * 0.5;
    local.x += side * (0.5 * box.extents.x + gap + 0.5 * slab_ext.x);
    local.y += uniform(rng, -0.5, 0.5);
    Vec3 slab_center = box.to_world(box.corner + local);
    slab_center.z = 0.5 * slab_ext.z;
    const Box3D slab = Box3D::from_center(slab_center, slab_ext, box.yaw);
    const auto slab_n = static_cast<std::size_t>(uniform(rng, 80.0, 200.0));
    sample_shell(slab, slab_n, sensor, cfg.noise, rng, coords);
  }

  const auto clutter_n = static_cast<std::size_t>(std::round(cfg.clutter_density * cfg.extent * cfg.extent));
  for (std::size_t i = 0; i < clutter_n; ++i) {
    const double h = 0.5 * cfg.extent;
    coords.push_back({uniform(rng, -h, h), uniform(rng, -h, h), uniform(rng, 0.0, cfg.clutter_height)});
  }

  for (std::size_t o = 0; o < scene.objects.size(); ++o) {
    for (std::size_t k = 0; k < cfg.proposals_per_object; ++k) {
      scene.proposals.push_back(jitter_box(scene.objects[o], cfg.jitter, rng));
      scene.targets.push_back({true, scene.objects[o]});
      scene.kinds.push_back(ProposalKind::object);
    }
  }
  for (const Box3D& d : distractors) {
    for (std::size_t k = 0; k < cfg.proposals_per_object; ++k) {
      scene.proposals.push_back(jitter_box(d, cfg.jitter, rng));
      scene.targets.push_back({false, {}});
      scene.kinds.push_back(ProposalKind::distractor);
    }
  }
  for (std::size_t b = 0; b < cfg.background_proposals; ++b) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const double h = 0.5 * cfg.extent - 3.0;
      const double x = uniform(rng, -h, h);
      const double y = uniform(rng, -h, h);
      if (!std::all_of(centers.begin(), centers.end(), [&](Vec3 q) { return std::hypot(x - q.x, y - q.y) >= 7.0; })) {
        continue;
      }
      scene.proposals.push_back(random_car(rng, x, y));
      scene.targets.push_back({false, {}});
      scene.kinds.push_back(ProposalKind::background);
      break;
    }
  }

  Tensor feats = point_features(coords);
  scene.points = PointSet(std::move(coords), std::move(feats));
  return scene;
}

Tensor point_features(std::span<const Vec3> coords) {
  Tensor out({coords.size(), kPointFeatureWidth});
  if (coords.empty()) return out;
  const SpatialIndex idx(coords, 0.8);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Vec3 p = coords[i];
    std::size_t n02 = 0, n04 = 0, n08 = 0, above = 0;
    Vec3 sum{};
    for (const Neighbor& nb : idx.ball_query(p, 0.8)) {
      if (nb.id == i) continue;
      ++n08;
      if (nb.distance <= 0.4) ++n04;
      if (nb.distance <= 0.2) ++n02;
      const Vec3 q = coords[nb.id];
      sum = sum + (q - p);
      if (q.z > p.z) ++above;
    }
    auto row = out.row(i);
    row[0] = std::log1p(static_cast<double>(n02));
    row[1] = std::log1p(static_cast<double>(n04));
    row[2] = std::log1p(static_cast<double>(n08));
    row[3] = 0.5 * p.z;
    if (n08 > 0) {
      const double inv = 1.0 / static_cast<double>(n08);
      row[4] = sum.x * inv;
      row[5] = sum.y * inv;
      row[6] = sum.z * inv;
      row[7] = static_cast<double>(above) * inv;
    }
  }
  return out;
}

std::size_t interior_count(const PointSet& ps, const SpatialIndex& idx, const Box3D& box) {
  if (ps.empty()) return 0;
  std::size_t n = 0;
  for (const Neighbor& nb : idx.ball_query(box.center(), box.half_diagonal() * (1.0 + 1e-9) + 1e-12)) {
    if (box.contains(ps.coords[nb.id])) ++n;
  }
  return n;
}

std::size_t gathered_count(const PointSet& /*ps*/, const SpatialIndex& idx, const Box3D& roi, const PyramidConfig& cfg) {
  std::size_t n = 0;
  for (const auto& level : cfg.levels) {
    for (const Vec3& g : pyramid_grid_points(roi, level)) n += idx.ball_query(g, level.r_pre, level.max_neighbors).size();
  }
  return n;
}

std::size_t sparsity_bucket(std::size_t count) {
  if (count < 10) return 0;
  if (count < 50) return 1;
  if (count < 100) return 2;
  if (count < 500) return 3;
  return 4;
}

std::string sparsity_bucket_label(std::size_t bucket) {
  static const char* labels[kSparsityBuckets] = {"0-10", "10-50", "50-100", "100-500", "500+"};
  return labels[std::min(bucket, kSparsityBuckets - 1)];
}

std::vector<SparsityRow> sparsity_stats(std::span<const Scene> scenes, const PyramidConfig& cfg) {
  std::vector<SparsityRow> rows;
  if (scenes.empty()) return rows;
  for (std::size_t b = 0; b < kSparsityBuckets; ++b) rows.push_back({sparsity_bucket_label(b), 0, 0});
  for (const Scene& s : scenes) {
    const SpatialIndex idx(s.points, kIndexCell);
    for (const Box3D& box : s.objects) {
      rows[sparsity_bucket(interior_count(s.points, idx, box))].interior++;
      rows[sparsity_bucket(gathered_count(s.points, idx, box, cfg))].gathered++;
    }
  }
  return rows;
}

std::string sparsity_csv(std::span<const SparsityRow> rows) {
  std::ostringstream os;
  os << "bucket,interior,gathered\n";
  for (const auto& r : rows) os << r.bucket << ',' << r.interior << ',' << r.gathered << '\n';
  return os.str();
}

PreparedScene prepare(Scene scene) {
  PreparedScene p{std::move(scene), {}};
  p.index = SpatialIndex(p.scene.points, kIndexCell);
  return p;
}

ToyData generate_toy_data(const ToyTaskConfig& cfg, std::size_t threads) {
  ToyData data;
  const std::size_t total = cfg.train_scenes + cfg.eval_scenes;
  std::vector<PreparedScene> all(total);
  parallel_for(total, threads, [&](std::size_t i) {
    SceneConfig sc = cfg.scene;
    sc.seed = cfg.seed * 1000003ULL + i;
    all[i] = prepare(generate_scene(sc));
  });
  data.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + cfg.train_scenes));
  data.eval.assign(std::make_move_iterator(all.begin() + cfg.train_scenes), std::make_move_iterator(all.end()));
  return data;
}

namespace {

struct RoiRef {
  std::size_t scene;
  std::size_t proposal;
};

struct BatchResult {
  double loss = 0.0;
  num::Gradients grads;
  std::vector<double> radii;  // per level mean
};

BatchResult run_batch(const PyramidHead& head, std::span<const PreparedScene> scenes, std::span<const RoiRef> refs,
                      double tau, bool with_grads, std::size_t threads) {
  const std::size_t n = refs.size();
  std::vector<double> losses(n, 0.0);
  std::vector<num::Gradients> grads(with_grads ? n : 0);
  std::vector<std::vector<double>> radii(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const PreparedScene& ps = scenes[refs[i].scene];
    const Box3D& roi = ps.scene.proposals[refs[i].proposal];
    Tape tape(&head.params());
    const RoiOutput out = head.forward(tape, roi, ps.scene.points, ps.index, tau);
    const num::Var l = roi_loss(tape, out, roi, ps.scene.targets[refs[i].proposal], head.config().loss, n);
    losses[i] = l.value()[0];
    radii[i] = out.radius_values;
    if (with_grads) {
      tape.backward(l);
      grads[i] = tape.parameter_grads();
    }
  });
  BatchResult r;
  if (with_grads) r.grads = num::zero_gradients(head.params());
  for (std::size_t i = 0; i < n; ++i) {
    r.loss += losses[i];
    if (with_grads) {
      for (std::size_t s = 0; s < r.grads.size(); ++s) r.grads[s] += grads[i][s];
    }
    if (r.radii.empty()) r.radii.assign(radii[i].size(), 0.0);
    for (std::size_t l = 0; l < radii[i].size(); ++l) r.radii[l] += radii[i][l] / static_cast<double>(n);
  }
  return r;
}

}  // namespace

TrainResult train_toy(PyramidHead& head, std::span<const PreparedScene> scenes, const TrainConfig& cfg) {
  if (cfg.steps == 0) throw ParameterError("train_toy needs at least one step");
  if (cfg.batch == 0) throw ParameterError("batch size must be positive");
  if (cfg.lr < 0.0 || cfg.momentum < 0.0 || cfg.momentum >= 1.0 || cfg.clip_norm < 0.0 || cfg.radius_lr_scale < 0.0) {
    throw ParameterError("bad optimizer settings");
  }
  std::vector<RoiRef> pool;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (std::size_t p = 0; p < scenes[s].scene.proposals.size(); ++p) pool.push_back({s, p});
  }
  if (pool.empty()) throw ParameterError("no proposals to train on");
  const std::size_t threads = resolve_threads(cfg.threads);

  Rng rng(cfg.seed);
  std::vector<RoiRef> monitor = pool;
  std::shuffle(monitor.begin(), monitor.end(), rng);
  monitor.resize(std::min(cfg.monitor_rois, monitor.size()));

  const HeadConfig& hc = head.config();
  TemperatureSchedule sched = hc.darp.schedule;
  sched.total_steps = cfg.steps;
  const double tau_eval = sched.eval();

  TrainResult result;
  {
    const BatchResult m = run_batch(head, scenes, monitor, tau_eval, false, threads);
    result.initial_loss = m.loss;
    result.initial_radii = m.radii;
  }

  std::vector<bool> radius_slot(head.params().size(), false);
  for (std::size_t s = 0; s < head.params().size(); ++s) {
    radius_slot[s] = head.params()[s].name.rfind("darp.radius", 0) == 0;
  }

  num::Gradients velocity = num::zero_gradients(head.params());
  std::vector<RoiRef> order = pool;
  std::size_t cursor = order.size();
  std::vector<RoiRef> batch;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    batch.clear();
    while (batch.size() < cfg.batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    const double tau = sched.at(step);
    BatchResult br = run_batch(head, scenes, batch, tau, true, threads);
    if (!std::isfinite(br.loss)) {
      throw NumericError("training diverged: non-finite loss at step " + std::to_string(step));
    }
    StepRecord rec;
    rec.step = step;
    rec.tau = tau;
    rec.loss = br.loss;
    rec.grad_norm = num::gradient_norm(br.grads);
    double rg = 0.0;
    for (std::size_t s = 0; s < br.grads.size(); ++s) {
      if (!radius_slot[s]) continue;
      for (double g : br.grads[s].data()) rg += g * g;
    }
    rec.radius_grad_norm = std::sqrt(rg);
    rec.radii = br.radii;
    if (!std::isfinite(rec.grad_norm)) {
      throw NumericError("training diverged: non-finite gradient at step " + std::to_string(step));
    }
    // the radius head and the rest are clipped separately: radius gradients
    // spike as tau shrinks and would otherwise stall every other update
    const double rest_norm = std::sqrt(std::max(0.0, rec.grad_norm * rec.grad_norm - rg));
    auto clip_factor = [&](double norm) {
      return cfg.clip_norm > 0.0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
    };
    const double clip_rest = clip_factor(rest_norm);
    const double clip_radius = clip_factor(rec.radius_grad_norm);
    for (std::size_t s = 0; s < velocity.size(); ++s) {
      auto& v = velocity[s].storage();
      auto& p = head.params()[s].value.storage();
      const auto g = br.grads[s].data();
      const double lr = radius_slot[s] ? cfg.lr * cfg.radius_lr_scale : cfg.lr;
      const double clip = radius_slot[s] ? clip_radius : clip_rest;
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = cfg.momentum * v[k] + clip * g[k];
        p[k] -= lr * v[k];
      }
    }
    result.steps.push_back(std::move(rec));
  }

  const BatchResult m = run_batch(head, scenes, monitor, tau_eval, false, threads);
  if (!std::isfinite(m.loss)) throw NumericError("training diverged: non-finite monitor loss");
  result.final_loss = m.loss;
  result.final_radii = m.radii;
  for (std::size_t l = 0; l < result.final_radii.size(); ++l) {
    result.max_radius_shift =
        std::max(result.max_radius_shift, std::abs(result.final_radii[l] - hc.pyramid.levels[l].r_pre));
  }
  return result;
}

EvalResult evaluate(const PyramidHead& head, std::span<const PreparedScene> scenes, double iou_threshold,
                    std::size_t threads) {
  std::vector<RoiRef> refs;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (std::size_t p = 0; p < scenes[s].scene.proposals.size(); ++p) refs.push_back({s, p});
  }
  struct Row {
    int label = 0;
    int pred = 0;
    double iou = 0.0;
    std::size_t bucket = 0;
  };
  std::vector<Row> rows(refs.size());
  const double tau = head.config().darp.schedule.eval();
  parallel_for(refs.size(), resolve_threads(threads), [&](std::size_t i) {
    const PreparedScene& ps = scenes[refs[i].scene];
    const Box3D& roi = ps.scene.proposals[refs[i].proposal];
    const Target& t = ps.scene.targets[refs[i].proposal];
    Tape tape(&head.params());
    const RoiOutput out = head.forward(tape, roi, ps.scene.points, ps.index, tau);
    const Detection det = refine(roi, out);
    Row& r = rows[i];
    r.label = classification_label(roi, t, head.config().loss.positive_iou);
    r.pred = det.score >= 0.5 ? 1 : 0;
    if (r.label == 1) r.iou = derotated_iou(det.box, t.box);
    r.bucket = sparsity_bucket(interior_count(ps.scene.points, ps.index, t.has_object ? t.box : roi));
  });

  EvalResult e;
  e.rois = rows.size();
  std::size_t correct = 0, hits = 0;
  double iou_sum = 0.0;
  std::array<std::size_t, kSparsityBuckets> bucket_correct{};
  std::array<double, kSparsityBuckets> bucket_iou{};
  for (const Row& r : rows) {
    BucketStats& b = e.buckets[r.bucket];
    b.rois++;
    if (r.pred == r.label) {
      ++correct;
      bucket_correct[r.bucket]++;
    }
    if (r.label == 1) {
      e.positives++;
      b.positives++;
      iou_sum += r.iou;
      bucket_iou[r.bucket] += r.iou;
      if (r.iou >= iou_threshold) ++hits;
    }
  }
  if (e.rois > 0) {
    e.accuracy = static_cast<double>(correct) / static_cast<double>(e.rois);
    e.base_rate = static_cast<double>(e.positives) / static_cast<double>(e.rois);
  }
  if (e.positives > 0) {
    e.mean_iou = iou_sum / static_cast<double>(e.positives);
    e.recall = static_cast<double>(hits) / static_cast<double>(e.positives);
  }
  for (std::size_t b = 0; b < kSparsityBuckets; ++b) {
    BucketStats& s = e.buckets[b];
    if (s.rois > 0) s.accuracy = static_cast<double>(bucket_correct[b]) / static_cast<double>(s.rois);
    if (s.positives > 0) s.mean_iou = bucket_iou[b] / static_cast<double>(s.positives);
  }
  return e;
}

}  // namespace pyrhead
