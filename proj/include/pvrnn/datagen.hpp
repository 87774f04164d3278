// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic visuo-proprioceptive task data. A two-link planar arm in the
// unit square performs one of two tasks at one of three surface heights:
//
//   R  reach -> hold -> lift a rigid bar (carries a load while lifting);
//      low variability between sequences.
//   W  reach -> oscillatory wipe with a towel strip -> release;
//      large jitter in timing, amplitude, frequency and phase.
//
// Each step yields proprioception (two joint angles, two load-dependent
// joint-moment surrogates) and a grayscale view rendered at the highest
// resolution and box-filtered down to the lower ones.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pvrnn/error.hpp"
#include "pvrnn/free_energy.hpp"
#include "pvrnn/hash.hpp"
#include "pvrnn/rng.hpp"
#include "pvrnn/topology.hpp"

namespace pvrnn {

enum class Task : int { Reposition = 0, Wipe = 1 };

inline std::string task_name(Task t) { return t == Task::Reposition ? "R" : "W"; }
inline Task parse_task(const std::string& s) {
  if (s == "R") return Task::Reposition;
  if (s == "W") return Task::Wipe;
  throw ConfigError("unknown task '" + s + "' (expected R or W)");
}

inline constexpr double kDataMin = -0.9;
inline constexpr double kDataMax = 0.9;

struct TaskJitter {
  double timing = 0.0;      ///< phase-boundary shift, fraction of the sequence
  double position = 0.0;    ///< start/end pose offset (canvas units)
  double amplitude = 0.0;   ///< relative amplitude jitter of the main motion
  double frequency = 0.0;   ///< absolute jitter in wipe cycles
  double phase = 0.0;       ///< wipe phase jitter (radians)
};

struct WorldSpec {
  int length = 80;
  std::vector<int> resolutions{4, 8, 16};
  std::array<double, 2> base{0.12, 0.10};
  std::array<double, 2> links{0.46, 0.40};
  /// Surface-height offsets of the three conditions.
  std::array<double, 3> heights{-0.06, 0.0, 0.06};
  double surface_y = 0.38;
  double arm_width = 0.05;
  double object_width = 0.05;
  double arm_intensity = 1.0;
  double object_intensity = 0.5;
  double load = 1.0;
  TaskJitter reposition{0.02, 0.01, 0.03, 0.0, 0.0};
  TaskJitter wipe{0.08, 0.04, 0.25, 0.5, std::numbers::pi};

  int highest() const { return resolutions.back(); }

  void validate() const {
    if (resolutions.empty()) throw ConfigError("world: no resolutions");
    for (std::size_t i = 0; i < resolutions.size(); ++i) {
      if (resolutions[i] <= 0) throw ConfigError("world: resolutions must be positive");
      if (i > 0 && resolutions[i] <= resolutions[i - 1]) throw ConfigError("world: resolutions must be strictly increasing");
      if (highest() % resolutions[i] != 0)
        throw ConfigError("world: resolution " + std::to_string(resolutions[i]) + " does not divide " +
                          std::to_string(highest()));
    }
    if (length < 12) throw ConfigError("world: sequence length " + std::to_string(length) + " too short for three phases");
    if (links[0] <= 0.0 || links[1] <= 0.0) throw ConfigError("world: link lengths must be positive");
  }

  /// Hash of every field, recorded as dataset provenance.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](double v) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = splitmix64(h ^ bits);
    };
    mix(length);
    for (int r : resolutions) mix(r);
    for (double v : base) mix(v);
    for (double v : links) mix(v);
    for (double v : heights) mix(v);
    for (double v : {surface_y, arm_width, object_width, arm_intensity, object_intensity, load}) mix(v);
    for (const auto& j : {reposition, wipe})
      for (double v : {j.timing, j.position, j.amplitude, j.frequency, j.phase}) mix(v);
    return h;
  }
};

/// Network topology whose sensory sizes match a world spec.
inline NetworkTopology topology_for(const WorldSpec& spec, NetworkTopology base = NetworkTopology::desk()) {
  base.vision.resolutions = spec.resolutions;
  base.vision.channels = 1;
  base.proprio_dims = 4;
  return base;
}

// ---------------------------------------------------------------------------
// Scene and rendering

struct Point {
  double x = 0.0, y = 0.0;
};

struct Segment {
  Point a, b;
};

/// Arm pose and object geometry of one step.
struct Scene {
  double q1 = 0.0, q2 = 0.0;  ///< joint angles (rad)
  std::vector<Segment> object;
  bool arm_visible = true;
};

inline std::array<Point, 3> arm_points(const WorldSpec& w, double q1, double q2) {
  const Point p0{w.base[0], w.base[1]};
  const Point p1{p0.x + w.links[0] * std::cos(q1), p0.y + w.links[0] * std::sin(q1)};
  const Point p2{p1.x + w.links[1] * std::cos(q1 + q2), p1.y + w.links[1] * std::sin(q1 + q2)};
  return {p0, p1, p2};
}

inline double segment_distance(const Point& p, const Segment& s) {
  const double vx = s.b.x - s.a.x, vy = s.b.y - s.a.y;
  const double wx = p.x - s.a.x, wy = p.y - s.a.y;
  const double len2 = vx * vx + vy * vy;
  const double u = len2 > 0.0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
  const double dx = wx - u * vx, dy = wy - u * vy;
  return std::sqrt(dx * dx + dy * dy);
}

/// Anti-aliased coverage of a stroke of width `width` at pixel centre `p`:
/// linear ramp over one pixel around the stroke edge.
inline double stroke_coverage(const Point& p, const std::vector<Segment>& segs, double width, double pixel) {
  double dmin = 1e9;
  for (const auto& s : segs) dmin = std::min(dmin, segment_distance(p, s));
  return std::clamp(0.5 + (0.5 * width - dmin) / pixel, 0.0, 1.0);
}

/// Renders the scene at `res` x `res` with intensities in [0, 1]; the arm is
/// composited over the object. Row 0 is the top of the canvas.
inline Eigen::MatrixXd render_raw(const Scene& scene, const WorldSpec& w, int res) {
  Eigen::MatrixXd img = Eigen::MatrixXd::Zero(res, res);
  const double pixel = 1.0 / res;
  std::vector<Segment> arm;
  if (scene.arm_visible) {
    const auto pts = arm_points(w, scene.q1, scene.q2);
    arm = {{pts[0], pts[1]}, {pts[1], pts[2]}};
  }
  for (int r = 0; r < res; ++r) {
    for (int c = 0; c < res; ++c) {
      const Point p{(c + 0.5) * pixel, 1.0 - (r + 0.5) * pixel};
      const double obj = scene.object.empty() ? 0.0 : stroke_coverage(p, scene.object, w.object_width, pixel);
      const double a = arm.empty() ? 0.0 : stroke_coverage(p, arm, w.arm_width, pixel);
      const double under = obj * w.object_intensity;
      img(r, c) = a * w.arm_intensity + (1.0 - a) * under;
    }
  }
  return img;
}

/// Exact box-filter downsample by an integer factor.
inline Eigen::MatrixXd box_downsample(const Eigen::MatrixXd& img, int res) {
  const int hi = static_cast<int>(img.rows());
  if (res <= 0 || hi % res != 0) throw ConfigError("box_downsample: " + std::to_string(res) + " does not divide " + std::to_string(hi));
  const int f = hi / res;
  Eigen::MatrixXd out(res, res);
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c) out(r, c) = img.block(r * f, c * f, f, f).sum() / static_cast<double>(f * f);
  return out;
}

/// Linear map of intensities [0, 1] onto [-0.9, 0.9].
inline double intensity_to_signal(double v) { return kDataMin + (kDataMax - kDataMin) * v; }

/// Pixel vector of the scene at resolution `res` (row-major, normalized).
/// Lower resolutions are box filters of the highest resolution in `spec`.
inline Eigen::VectorXd render_views(const Scene& scene, const WorldSpec& spec, int res) {
  const Eigen::MatrixXd hi = render_raw(scene, spec, spec.highest());
  const Eigen::MatrixXd img = res == spec.highest() ? hi : box_downsample(hi, res);
  Eigen::VectorXd out(res * res);
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c) out[r * res + c] = intensity_to_signal(img(r, c));
  return out;
}

/// All resolution groups concatenated low to high.
inline Eigen::VectorXd render_all(const Scene& scene, const WorldSpec& spec) {
  const Eigen::MatrixXd hi = render_raw(scene, spec, spec.highest());
  int dims = 0;
  for (int r : spec.resolutions) dims += r * r;
  Eigen::VectorXd out(dims);
  int off = 0;
  for (int res : spec.resolutions) {
    const Eigen::MatrixXd img = res == spec.highest() ? hi : box_downsample(hi, res);
    for (int r = 0; r < res; ++r)
      for (int c = 0; c < res; ++c) out[off + r * res + c] = intensity_to_signal(img(r, c));
    off += res * res;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

struct ScalingRecord {
  Eigen::VectorXd min;
  Eigen::VectorXd max;
};

/// Per-dimension affine map of `raw` (dims x steps) onto [-0.9, 0.9].
inline Eigen::MatrixXd normalize(const Eigen::MatrixXd& raw, const ScalingRecord& s) {
  if (s.min.size() != raw.rows() || s.max.size() != raw.rows()) throw ShapeError("normalize: scaling record size mismatch");
  for (Eigen::Index i = 0; i < raw.rows(); ++i)
    if (!(s.max[i] > s.min[i]))
      throw ValidationError("normalize: dimension " + std::to_string(i) + " is degenerate (max == min)");
  const Eigen::ArrayXd span = (s.max - s.min).array();
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c)
    out.col(c) = (kDataMin + (kDataMax - kDataMin) * ((raw.col(c).array() - s.min.array()) / span)).matrix();
  return out;
}

inline Eigen::MatrixXd denormalize(const Eigen::MatrixXd& norm, const ScalingRecord& s) {
  if (s.min.size() != norm.rows()) throw ShapeError("denormalize: scaling record size mismatch");
  const Eigen::ArrayXd span = (s.max - s.min).array();
  Eigen::MatrixXd out(norm.rows(), norm.cols());
  for (Eigen::Index c = 0; c < norm.cols(); ++c)
    out.col(c) = (s.min.array() + (norm.col(c).array() - kDataMin) / (kDataMax - kDataMin) * span).matrix();
  return out;
}

/// Min/max per row over a set of series; throws naming a constant dimension.
inline ScalingRecord fit_scaling(const std::vector<Eigen::MatrixXd>& series) {
  if (series.empty()) throw ValidationError("fit_scaling: no series");
  ScalingRecord s;
  s.min = series.front().rowwise().minCoeff();
  s.max = series.front().rowwise().maxCoeff();
  for (const auto& m : series) {
    s.min = s.min.cwiseMin(m.rowwise().minCoeff());
    s.max = s.max.cwiseMax(m.rowwise().maxCoeff());
  }
  for (Eigen::Index i = 0; i < s.min.size(); ++i)
    if (!(s.max[i] > s.min[i]))
      throw ValidationError("fit_scaling: dimension " + std::to_string(i) + " is constant");
  return s;
}

// ---------------------------------------------------------------------------
// Sequences

struct Sequence {
  int id = 0;
  Task task = Task::Reposition;
  int condition = 0;
  Eigen::MatrixXd proprio;  ///< proprio_dims x T, normalized
  Eigen::MatrixXd vision;   ///< vision dims x T, normalized
  int length() const { return static_cast<int>(vision.cols()); }
  Observations observations() const { return {vision, proprio}; }
};

struct SequenceBatch {
  WorldSpec spec;
  std::uint64_t seed = 0;
  ScalingRecord proprio_scaling;
  std::vector<Sequence> sequences;

  std::size_t size() const { return sequences.size(); }
  std::vector<Sequence> select(Task task) const {
    std::vector<Sequence> out;
    for (const auto& s : sequences)
      if (s.task == task) out.push_back(s);
    return out;
  }
};

/// Requested sequence count per task and condition.
struct TaskCounts {
  std::array<std::array<int, 3>, 2> per_condition{};  ///< [task][condition]

  static TaskCounts uniform(int per_cell_r, int per_cell_w) {
    TaskCounts c;
    c.per_condition[0] = {per_cell_r, per_cell_r, per_cell_r};
    c.per_condition[1] = {per_cell_w, per_cell_w, per_cell_w};
    return c;
  }
  /// `n` sequences of a task spread round-robin over the three conditions.
  static std::array<int, 3> spread(int n) {
    return {n / 3 + (n % 3 > 0 ? 1 : 0), n / 3 + (n % 3 > 1 ? 1 : 0), n / 3};
  }
  static TaskCounts totals(int r, int w) {
    TaskCounts c;
    c.per_condition[0] = spread(r);
    c.per_condition[1] = spread(w);
    return c;
  }
  int total() const {
    int n = 0;
    for (const auto& t : per_condition)
      for (int v : t) n += v;
    return n;
  }
};

namespace detail {

inline double ease(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return 0.5 - 0.5 * std::cos(std::numbers::pi * u);
}

inline Point lerp(const Point& a, const Point& b, double u) { return {a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u}; }

/// Elbow-up inverse kinematics; targets beyond reach are pulled inside.
inline std::pair<double, double> inverse_kinematics(const WorldSpec& w, Point target) {
  const double l1 = w.links[0], l2 = w.links[1];
  double dx = target.x - w.base[0], dy = target.y - w.base[1];
  double r = std::sqrt(dx * dx + dy * dy);
  const double rmax = (l1 + l2) * 0.999, rmin = std::abs(l1 - l2) * 1.001 + 1e-6;
  if (r > rmax || r < rmin) {
    const double s = std::clamp(r, rmin, rmax) / std::max(r, 1e-12);
    dx *= s;
    dy *= s;
    r = std::sqrt(dx * dx + dy * dy);
  }
  const double c2 = std::clamp((r * r - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double q2 = -std::acos(c2);
  const double q1 = std::atan2(dy, dx) - std::atan2(l2 * std::sin(q2), l1 + l2 * std::cos(q2));
  return {q1, q2};
}

/// Gravity-moment proxy at both joints with an optional load at the effector.
inline std::array<double, 2> joint_moments(const WorldSpec& w, double q1, double q2, double load) {
  const auto pts = arm_points(w, q1, q2);
  const double bx = w.base[0];
  const double m1 = 1.0, m2 = 0.8;
  const double c1x = 0.5 * (pts[0].x + pts[1].x), c2x = 0.5 * (pts[1].x + pts[2].x);
  const double tau1 = m1 * (c1x - bx) + m2 * (c2x - bx) + load * (pts[2].x - bx);
  const double tau2 = m2 * (c2x - pts[1].x) + load * (pts[2].x - pts[1].x);
  return {tau1, tau2};
}

struct RawSequence {
  Eigen::MatrixXd proprio;  // 4 x T, raw units
  Eigen::MatrixXd vision;   // dims x T, already normalized
};

inline RawSequence simulate(const WorldSpec& w, Task task, int condition, Rng& rng, bool zero_jitter) {
  const int T = w.length;
  const TaskJitter j = zero_jitter ? TaskJitter{} : (task == Task::Reposition ? w.reposition : w.wipe);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  const double y_surf = w.surface_y + w.heights.at(static_cast<std::size_t>(condition));

  RawSequence out;
  out.proprio.resize(4, T);
  int dims = 0;
  for (int r : w.resolutions) dims += r * r;
  out.vision.resize(dims, T);

  const Point start{0.30 + j.position * sym(rng), 0.72 + j.position * sym(rng)};
  std::vector<Point> eff(static_cast<std::size_t>(T));
  std::vector<double> load(static_cast<std::size_t>(T), 0.0);
  std::vector<std::vector<Segment>> objects(static_cast<std::size_t>(T));

  if (task == Task::Reposition) {
    const double b1 = 0.30 + j.timing * sym(rng), b2 = 0.50 + j.timing * sym(rng);
    const Point grasp{0.62 + j.position * sym(rng), y_surf};
    const double lift = 0.24 * (1.0 + j.amplitude * sym(rng));
    const Point top{grasp.x - 0.08, grasp.y + lift};
    const double tilt_max = 0.25 * (1.0 + j.amplitude * sym(rng));
    const double half = 0.14;
    for (int t = 0; t < T; ++t) {
      const double u = static_cast<double>(t) / (T - 1);
      Point e;
      double tilt = 0.0;
      if (u < b1) {
        e = lerp(start, grasp, ease(u / b1));
      } else if (u < b2) {
        e = grasp;
        load[static_cast<std::size_t>(t)] = 0.5 * w.load * ease((u - b1) / (b2 - b1));
      } else {
        const double v = ease((u - b2) / (1.0 - b2));
        e = lerp(grasp, top, v);
        tilt = tilt_max * v;
        load[static_cast<std::size_t>(t)] = w.load * (0.5 + 0.5 * v);
      }
      eff[static_cast<std::size_t>(t)] = e;
      // Bar gripped at its centre, tilting as it is lifted.
      const Point c{u < b2 ? grasp.x : e.x, u < b2 ? grasp.y : e.y};
      objects[static_cast<std::size_t>(t)] = {
          {{c.x - half * std::cos(tilt), c.y - half * std::sin(tilt)}, {c.x + half * std::cos(tilt), c.y + half * std::sin(tilt)}}};
    }
  } else {
    const double b1 = 0.25 + j.timing * sym(rng), b2 = 0.80 + j.timing * sym(rng);
    const double centre = 0.60 + j.position * sym(rng);
    const double amp = 0.12 * (1.0 + j.amplitude * sym(rng));
    const double cycles = 2.0 + j.frequency * sym(rng);
    const double phase = j.phase * sym(rng);
    const Point contact0{centre + amp * std::sin(phase), y_surf};
    const Point end{0.36 + j.position * sym(rng), 0.70 + j.position * sym(rng)};
    const double half = 0.10;
    Point towel = contact0;
    for (int t = 0; t < T; ++t) {
      const double u = static_cast<double>(t) / (T - 1);
      Point e;
      if (u < b1) {
        e = lerp(start, contact0, ease(u / b1));
      } else if (u < b2) {
        const double v = (u - b1) / (b2 - b1);
        e = {centre + amp * std::sin(phase + 2.0 * std::numbers::pi * cycles * v), y_surf};
        towel = e;
      } else {
        e = lerp(towel, end, ease((u - b2) / (1.0 - b2)));
      }
      eff[static_cast<std::size_t>(t)] = e;
      // Flexible strip: the free ends lag behind the hand while wiping.
      const double sag = (u >= b1 && u < b2) ? 0.03 * std::sin(2.0 * std::numbers::pi * cycles * (u - b1) / (b2 - b1) + phase) : 0.0;
      objects[static_cast<std::size_t>(t)] = {{{towel.x - half, towel.y - 0.01 + sag}, {towel.x, towel.y}},
                                               {{towel.x, towel.y}, {towel.x + half, towel.y - 0.01 - sag}}};
    }
  }

  for (int t = 0; t < T; ++t) {
    const auto [q1, q2] = inverse_kinematics(w, eff[static_cast<std::size_t>(t)]);
    const auto tau = joint_moments(w, q1, q2, load[static_cast<std::size_t>(t)]);
    out.proprio.col(t) << q1, q2, tau[0], tau[1];
    Scene sc;
    sc.q1 = q1;
    sc.q2 = q2;
    sc.object = objects[static_cast<std::size_t>(t)];
    out.vision.col(t) = render_all(sc, w);
  }
  return out;
}

}  // namespace detail

struct GenerateOptions {
  bool zero_jitter = false;
  int first_id = 0;
};

/// Deterministic from (spec, counts, seed). Proprioception is scaled with
/// min/max over the whole batch; vision uses the fixed intensity map.
inline SequenceBatch generate(const WorldSpec& spec, const TaskCounts& counts, std::uint64_t seed,
                              const GenerateOptions& opts = {}) {
  spec.validate();
  for (const auto& t : counts.per_condition)
    for (int v : t)
      if (v < 0) throw ConfigError("generate: counts must be >= 0");
  SequenceBatch batch;
  batch.spec = spec;
  batch.seed = seed;
  std::vector<detail::RawSequence> raws;
  int id = opts.first_id;
  for (int task = 0; task < 2; ++task) {
    for (int cond = 0; cond < 3; ++cond) {
      for (int k = 0; k < counts.per_condition[task][cond]; ++k) {
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(Stream::DataGen), static_cast<std::uint64_t>(task),
                                  static_cast<std::uint64_t>(cond), static_cast<std::uint64_t>(k)});
        raws.push_back(detail::simulate(spec, static_cast<Task>(task), cond, rng, opts.zero_jitter));
        Sequence s;
        s.id = id++;
        s.task = static_cast<Task>(task);
        s.condition = cond;
        batch.sequences.push_back(std::move(s));
      }
    }
  }
  if (raws.empty()) return batch;
  std::vector<Eigen::MatrixXd> proprio;
  for (const auto& r : raws) proprio.push_back(r.proprio);
  batch.proprio_scaling = fit_scaling(proprio);
  for (std::size_t i = 0; i < raws.size(); ++i) {
    batch.sequences[i].proprio = normalize(raws[i].proprio, batch.proprio_scaling);
    batch.sequences[i].vision = raws[i].vision;
  }
  return batch;
}

/// Content hash of the sequences (ids, labels and values).
inline std::uint64_t dataset_hash(const std::vector<Sequence>& seqs) {
  Fnv1a h;
  for (const auto& s : seqs) {
    h.update_value(s.id);
    h.update_value(static_cast<int>(s.task));
    h.update_value(s.condition);
    for (const auto* m : {&s.proprio, &s.vision}) {
      h.update_value(m->rows());
      h.update_value(m->cols());
      h.update_doubles(m->data(), static_cast<std::size_t>(m->size()));
    }
  }
  return h.digest();
}

/// Mean over steps and dimensions of the across-sequence variance.
inline double cross_sequence_variance(const std::vector<Sequence>& seqs) {
  if (seqs.size() < 2) return 0.0;
  const auto T = seqs.front().length();
  const auto rows = seqs.front().vision.rows() + seqs.front().proprio.rows();
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(rows, T), sq = Eigen::MatrixXd::Zero(rows, T);
  for (const auto& s : seqs) {
    Eigen::MatrixXd x(rows, T);
    x << s.proprio, s.vision;
    mean += x;
    sq += x.cwiseProduct(x);
  }
  const double n = static_cast<double>(seqs.size());
  mean /= n;
  const Eigen::MatrixXd var = (sq / n - mean.cwiseProduct(mean)) * (n / (n - 1.0));
  return var.mean();
}

}  // namespace pvrnn
