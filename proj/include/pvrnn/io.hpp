// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats.
//
// Checkpoint / dataset container:
//   magic (8 bytes) | u32 version | u64 header length | JSON header |
//   f64 payload (little-endian) | u64 FNV-1a of all preceding bytes
// Integers are little-endian. The header lists every tensor with its shape
// in payload order.

#pragma once

#include <json.hpp>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pvrnn/checkpoint.hpp"
#include "pvrnn/config.hpp"
#include "pvrnn/datagen.hpp"
#include "pvrnn/error.hpp"
#include "pvrnn/hash.hpp"
#include "pvrnn/infer.hpp"
#include "pvrnn/train.hpp"

namespace pvrnn {

inline constexpr char kCheckpointMagic[8] = {'P', 'V', 'R', 'N', 'N', 'C', 'K', '\0'};
inline constexpr char kDatasetMagic[8] = {'P', 'V', 'R', 'N', 'N', 'D', 'S', '\0'};
inline constexpr char kTrialsMagic[8] = {'P', 'V', 'R', 'N', 'N', 'T', 'R', '\0'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kTrialsVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void f64s(const double* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      raw(p, n * sizeof(double));
    } else {
      for (std::size_t i = 0; i < n; ++i) f64(p[i]);
    }
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const char* p, std::size_t n, std::string what) : p_(p), n_(n), what_(std::move(what)) {}
  void need(std::size_t k) const {
    if (pos_ + k > n_) throw FormatError(what_ + ": truncated file");
  }
  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string str(std::size_t k) {
    need(k);
    std::string s(p_ + pos_, k);
    pos_ += k;
    return s;
  }
  void f64s(double* out, std::size_t n) {
    need(n * sizeof(double));
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out, p_ + pos_, n * sizeof(double));
      pos_ += n * sizeof(double);
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<double>(le<std::uint64_t>());
    }
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return buf;
}

/// Writes to a temporary sibling and renames it into place.
inline void write_file(const std::filesystem::path& path, const void* data, std::size_t n) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) { write_file(path, text.data(), text.size()); }

inline std::uint64_t hash_bytes(const char* p, std::size_t n) {
  Fnv1a h;
  h.update(p, n);
  return h.digest();
}

/// Frames header + payload with magic, version and trailing hash.
inline std::vector<char> frame(const char (&magic)[8], std::uint32_t version, const std::string& header,
                               const ByteWriter& payload) {
  ByteWriter w;
  w.raw(magic, 8);
  w.le(version);
  w.le(static_cast<std::uint64_t>(header.size()));
  w.raw(header.data(), header.size());
  w.raw(payload.bytes().data(), payload.bytes().size());
  std::vector<char> out = w.bytes();
  const std::uint64_t h = hash_bytes(out.data(), out.size());
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((h >> (8 * i)) & 0xFF));
  return out;
}

struct Unframed {
  std::uint32_t version = 0;
  json header;
  std::size_t payload_offset = 0;
  std::size_t payload_size = 0;
};

/// Validates magic, version (before anything else is trusted), hash and
/// header; returns the payload location.
inline Unframed unframe(const std::vector<char>& buf, const char (&magic)[8], std::uint32_t version,
                        const std::string& kind, const std::string& path) {
  if (buf.size() < 8 || std::memcmp(buf.data(), magic, 8) != 0) throw FormatError(path + ": not a " + kind + " file");
  ByteReader r(buf.data(), buf.size(), path);
  r.str(8);
  Unframed u;
  u.version = r.le<std::uint32_t>();
  if (u.version != version)
    throw FormatError(path + ": unsupported " + kind + " version " + std::to_string(u.version) + " (expected " +
                      std::to_string(version) + ")");
  const auto hlen = r.le<std::uint64_t>();
  if (buf.size() < 8 + 4 + 8 + 8 || hlen > buf.size()) throw FormatError(path + ": truncated file");
  const std::size_t body = buf.size() - 8;
  if (20 + hlen > body) throw FormatError(path + ": truncated file");
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[body + i])) << (8 * i);
  if (hash_bytes(buf.data(), body) != stored) throw FormatError(path + ": content hash mismatch (corrupted or truncated)");
  try {
    u.header = json::parse(r.str(hlen));
  } catch (const json::parse_error&) {
    throw FormatError(path + ": malformed header");
  }
  u.payload_offset = r.pos();
  u.payload_size = body - r.pos();
  return u;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Checkpoints

inline std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
  json h;
  h["format"] = "pvrnn-checkpoint";
  h["topology"] = to_json(ck.topology);
  h["provenance"] = {{"config", ck.provenance.config},
                     {"seed", ck.provenance.seed},
                     {"dataset_hash", hex64(ck.provenance.dataset_hash)},
                     {"iterations", ck.provenance.iterations}};
  json tensors = json::array();
  detail::ByteWriter payload;
  bool finite = true;
  ck.params.for_each([&](const std::string& name, const auto& t, bool trainable) {
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"trainable", trainable}});
    finite = finite && t.allFinite();
    payload.f64s(t.data(), static_cast<std::size_t>(t.size()));
  });
  json adaptive = json::array();
  for (const auto& a : ck.adaptive) {
    finite = finite && a.all_finite();
    adaptive.push_back({{"sequence_id", a.sequence_id}, {"first_step", a.first_step}, {"length", a.length()}});
    for (int m = 0; m < kNumModules; ++m) {
      payload.f64s(a.mu[m].data(), static_cast<std::size_t>(a.mu[m].size()));
      payload.f64s(a.sigma[m].data(), static_cast<std::size_t>(a.sigma[m].size()));
    }
  }
  if (!finite) throw NumericError("refusing to save a checkpoint with non-finite values");
  h["tensors"] = tensors;
  h["adaptive"] = adaptive;
  h["parameters_hash"] = hex64(hash_parameters(ck.params));
  return detail::frame(kCheckpointMagic, static_cast<std::uint32_t>(ck.version), h.dump(), payload);
}

inline Checkpoint deserialize_checkpoint(const std::vector<char>& buf, const std::string& path = "checkpoint",
                                         const NetworkTopology* expected = nullptr) {
  const auto u = detail::unframe(buf, kCheckpointMagic, kCheckpointVersion, "checkpoint", path);
  Checkpoint ck;
  ck.version = static_cast<int>(u.version);
  detail::ByteReader r(buf.data() + u.payload_offset, u.payload_size, path);
  try {
    ck.topology = topology_from_json(u.header.at("topology"));
    if (expected != nullptr && !(*expected == ck.topology))
      throw ConfigError(path + ": checkpoint topology is incompatible with the configured network");
    const auto& p = u.header.at("provenance");
    ck.provenance.config = p.at("config").get<std::string>();
    ck.provenance.seed = p.at("seed").get<std::uint64_t>();
    ck.provenance.dataset_hash = std::stoull(p.at("dataset_hash").get<std::string>(), nullptr, 16);
    ck.provenance.iterations = p.at("iterations").get<int>();
    ck.params = zero_parameters(ck.topology);
    const auto& tensors = u.header.at("tensors");
    std::size_t i = 0;
    ck.params.for_each([&](const std::string& name, auto& t, bool) {
      if (i >= tensors.size()) throw ShapeError(path + ": tensor " + name + " missing from header");
      const auto& d = tensors[i++];
      const auto hname = d.at("name").get<std::string>();
      if (hname != name) throw ShapeError(path + ": expected tensor " + name + ", header has " + hname);
      const auto rows = d.at("rows").get<long long>(), cols = d.at("cols").get<long long>();
      if (rows != t.rows() || cols != t.cols())
        throw ShapeError(path + ": tensor " + name + " declared " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", topology implies " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
      r.f64s(t.data(), static_cast<std::size_t>(t.size()));
    });
    if (i != tensors.size()) throw ShapeError(path + ": header lists " + std::to_string(tensors.size() - i) + " unexpected tensors");
    for (const auto& a : u.header.at("adaptive")) {
      const int len = a.at("length").get<int>();
      if (len < 0) throw ShapeError(path + ": negative adaptive length");
      AdaptivePosterior ap = AdaptivePosterior::zeros(ck.topology, len, a.at("first_step").get<int>(), a.at("sequence_id").get<int>());
      for (int m = 0; m < kNumModules; ++m) {
        r.f64s(ap.mu[m].data(), static_cast<std::size_t>(ap.mu[m].size()));
        r.f64s(ap.sigma[m].data(), static_cast<std::size_t>(ap.sigma[m].size()));
      }
      ck.adaptive.push_back(std::move(ap));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": malformed header (" + e.what() + ")");
  } catch (const FormatError& e) {
    throw ShapeError(std::string(e.what()) + " (payload shorter than the header declares)");
  }
  if (r.remaining() != 0) throw ShapeError(path + ": payload longer than the header declares");
  if (u.header.contains("parameters_hash") &&
      u.header["parameters_hash"].get<std::string>() != hex64(hash_parameters(ck.params)))
    throw FormatError(path + ": parameter hash mismatch");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ck);
  detail::write_file(path, bytes.data(), bytes.size());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkTopology* expected = nullptr) {
  return deserialize_checkpoint(detail::read_file(path), path.string(), expected);
}

// ---------------------------------------------------------------------------
// Dataset container

inline std::vector<char> serialize_dataset(const SequenceBatch& b) {
  json h;
  h["format"] = "pvrnn-dataset";
  h["world"] = to_json(b.spec);
  h["world_hash"] = hex64(b.spec.hash());
  h["seed"] = b.seed;
  h["layout"] = "per step: proprio dims then vision dims, f64 little-endian";
  json scaling = {{"min", std::vector<double>(b.proprio_scaling.min.data(), b.proprio_scaling.min.data() + b.proprio_scaling.min.size())},
                  {"max", std::vector<double>(b.proprio_scaling.max.data(), b.proprio_scaling.max.data() + b.proprio_scaling.max.size())}};
  h["proprio_scaling"] = scaling;
  json seqs = json::array();
  detail::ByteWriter payload;
  for (const auto& s : b.sequences) {
    seqs.push_back({{"id", s.id},
                    {"task", task_name(s.task)},
                    {"condition", s.condition},
                    {"length", s.length()},
                    {"proprio_dims", s.proprio.rows()},
                    {"vision_dims", s.vision.rows()}});
    for (int t = 0; t < s.length(); ++t) {
      payload.f64s(s.proprio.col(t).data(), static_cast<std::size_t>(s.proprio.rows()));
      payload.f64s(s.vision.col(t).data(), static_cast<std::size_t>(s.vision.rows()));
    }
  }
  h["sequences"] = seqs;
  h["content_hash"] = hex64(dataset_hash(b.sequences));
  return detail::frame(kDatasetMagic, kDatasetVersion, h.dump(), payload);
}

inline SequenceBatch deserialize_dataset(const std::vector<char>& buf, const std::string& path = "dataset") {
  const auto u = detail::unframe(buf, kDatasetMagic, kDatasetVersion, "dataset", path);
  SequenceBatch b;
  detail::ByteReader r(buf.data() + u.payload_offset, u.payload_size, path);
  try {
    b.spec = world_from_json(u.header.at("world"));
    b.seed = u.header.at("seed").get<std::uint64_t>();
    const auto mn = u.header.at("proprio_scaling").at("min").get<std::vector<double>>();
    const auto mx = u.header.at("proprio_scaling").at("max").get<std::vector<double>>();
    b.proprio_scaling.min = Eigen::Map<const Eigen::VectorXd>(mn.data(), static_cast<Eigen::Index>(mn.size()));
    b.proprio_scaling.max = Eigen::Map<const Eigen::VectorXd>(mx.data(), static_cast<Eigen::Index>(mx.size()));
    for (const auto& d : u.header.at("sequences")) {
      Sequence s;
      s.id = d.at("id").get<int>();
      s.task = parse_task(d.at("task").get<std::string>());
      s.condition = d.at("condition").get<int>();
      const int T = d.at("length").get<int>();
      const int pd = d.at("proprio_dims").get<int>(), vd = d.at("vision_dims").get<int>();
      if (T < 0 || pd < 0 || vd < 0) throw ShapeError(path + ": negative shape for sequence " + std::to_string(s.id));
      s.proprio.resize(pd, T);
      s.vision.resize(vd, T);
      for (int t = 0; t < T; ++t) {
        r.f64s(s.proprio.col(t).data(), static_cast<std::size_t>(pd));
        r.f64s(s.vision.col(t).data(), static_cast<std::size_t>(vd));
      }
      b.sequences.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": malformed header (" + e.what() + ")");
  } catch (const FormatError& e) {
    throw ShapeError(std::string(e.what()) + " (payload shorter than the header declares)");
  }
  if (r.remaining() != 0) throw ShapeError(path + ": payload longer than the header declares");
  if (u.header.contains("content_hash") && u.header["content_hash"].get<std::string>() != hex64(dataset_hash(b.sequences)))
    throw FormatError(path + ": dataset content hash mismatch");
  return b;
}

inline void save_dataset(const SequenceBatch& b, const std::filesystem::path& path) {
  const auto bytes = serialize_dataset(b);
  detail::write_file(path, bytes.data(), bytes.size());
}

inline SequenceBatch load_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Trial replay records (posteriors and eps; enough to regenerate any pass)

inline std::vector<char> serialize_trials(const TrialSet& ts, const Checkpoint& ck) {
  json h;
  h["format"] = "pvrnn-trials";
  h["parameters_hash"] = hex64(hash_parameters(ck.params));
  json list = json::array();
  detail::ByteWriter payload;
  for (const auto& l : ts.trials) {
    list.push_back({{"sequence_id", l.sequence_id},
                    {"task", task_name(l.task)},
                    {"condition", l.condition},
                    {"trial", l.trial},
                    {"mask", l.mask_label},
                    {"length", l.posterior.length()}});
    for (int m = 0; m < kNumModules; ++m) {
      if (l.noise.eps[m].cols() != l.posterior.length()) throw ShapeError("trial eps record does not cover the posterior");
      payload.f64s(l.posterior.mu[m].data(), static_cast<std::size_t>(l.posterior.mu[m].size()));
      payload.f64s(l.posterior.sigma[m].data(), static_cast<std::size_t>(l.posterior.sigma[m].size()));
      payload.f64s(l.noise.eps[m].data(), static_cast<std::size_t>(l.noise.eps[m].size()));
    }
  }
  h["trials"] = list;
  return detail::frame(kTrialsMagic, kTrialsVersion, h.dump(), payload);
}

/// Step results are not stored; only what a replay needs.
inline TrialSet deserialize_trials(const std::vector<char>& buf, const Checkpoint& ck, const std::string& path = "trials") {
  const auto u = detail::unframe(buf, kTrialsMagic, kTrialsVersion, "trial record", path);
  TrialSet ts;
  detail::ByteReader r(buf.data() + u.payload_offset, u.payload_size, path);
  try {
    if (u.header.at("parameters_hash").get<std::string>() != hex64(hash_parameters(ck.params)))
      throw ConfigError(path + ": trials were recorded with a different checkpoint");
    for (const auto& d : u.header.at("trials")) {
      TrialLog l;
      l.sequence_id = d.at("sequence_id").get<int>();
      l.task = parse_task(d.at("task").get<std::string>());
      l.condition = d.at("condition").get<int>();
      l.trial = d.at("trial").get<int>();
      l.mask_label = d.at("mask").get<std::string>();
      const int T = d.at("length").get<int>();
      if (T < 0) throw ShapeError(path + ": negative trial length");
      l.posterior = AdaptivePosterior::zeros(ck.topology, T, 1, l.sequence_id);
      for (int m = 0; m < kNumModules; ++m) {
        l.noise.eps[m].resize(ck.topology.module(m).z_size, T);
        r.f64s(l.posterior.mu[m].data(), static_cast<std::size_t>(l.posterior.mu[m].size()));
        r.f64s(l.posterior.sigma[m].data(), static_cast<std::size_t>(l.posterior.sigma[m].size()));
        r.f64s(l.noise.eps[m].data(), static_cast<std::size_t>(l.noise.eps[m].size()));
      }
      ts.trials.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": malformed header (" + e.what() + ")");
  } catch (const FormatError& e) {
    throw ShapeError(std::string(e.what()) + " (payload shorter than the header declares)");
  }
  if (r.remaining() != 0) throw ShapeError(path + ": payload longer than the header declares");
  return ts;
}

inline void save_trials(const TrialSet& ts, const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize_trials(ts, ck);
  detail::write_file(path, bytes.data(), bytes.size());
}

inline TrialSet load_trials(const std::filesystem::path& path, const Checkpoint& ck) {
  return deserialize_trials(detail::read_file(path), ck, path.string());
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest round-trip representation.
inline std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> columns) : cols_(std::move(columns)) {
    for (std::size_t i = 0; i < cols_.size(); ++i) out_ << (i ? "," : "") << cols_[i];
    out_ << "\n";
  }
  template <class... Ts>
  void row(const Ts&... vs) {
    if (sizeof...(vs) != cols_.size()) throw ShapeError("csv row has wrong number of fields");
    std::size_t i = 0;
    ((out_ << (i++ ? "," : "") << cell(vs)), ...);
    out_ << "\n";
  }
  std::string str() const { return out_.str(); }
  void save(const std::filesystem::path& p) const { detail::write_text(p, out_.str()); }

 private:
  static std::string cell(double v) { return fmt(v); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  template <class I>
    requires std::is_integral_v<I>
  static std::string cell(I v) {
    return std::to_string(v);
  }
  std::vector<std::string> cols_;
  std::ostringstream out_;
};

inline std::string loss_history_csv(const std::vector<LossRecord>& h) {
  CsvWriter w({"iteration", "total", "accuracy.extero", "accuracy.proprio", "complexity.Exe", "complexity.Mul",
               "complexity.Ext", "complexity.Pro"});
  for (const auto& r : h)
    w.row(r.iteration, r.terms.total, r.terms.accuracy_extero, r.terms.accuracy_proprio, r.terms.complexity[0],
          r.terms.complexity[1], r.terms.complexity[2], r.terms.complexity[3]);
  return w.str();
}

/// One row per step, module and latent unit.
inline std::string trial_latents_csv(const TrialLog& log) {
  CsvWriter w({"step", "module", "latent", "mu_p", "sigma_p", "mu_q", "sigma_q"});
  for (const auto& s : log.steps)
    for (int m = 0; m < kNumModules; ++m)
      for (Eigen::Index i = 0; i < s.mu_p[m].size(); ++i)
        w.row(s.t, std::string(kModuleNames[m]), static_cast<long>(i), s.mu_p[m][i], s.sigma_p[m][i], s.mu_q[m][i],
              s.sigma_q[m][i]);
  return w.str();
}

/// One row per step and modality (vision resolution groups reported as
/// "vision<res>").
inline std::string trial_errors_csv(const TrialLog& log, const NetworkTopology& topo) {
  CsvWriter w({"step", "modality", "prediction_error"});
  for (const auto& s : log.steps) {
    w.row(s.t, std::string("vision"), s.error_extero);
    for (std::size_t g = 0; g < s.error_groups.size(); ++g)
      w.row(s.t, "vision" + std::to_string(topo.vision.resolutions[g]), s.error_groups[g]);
    w.row(s.t, std::string("proprio"), s.error_proprio);
  }
  return w.str();
}

inline std::string dataset_csv(const SequenceBatch& b) {
  CsvWriter w({"sequence", "task", "condition", "step", "kind", "dim", "value"});
  for (const auto& s : b.sequences)
    for (int t = 0; t < s.length(); ++t) {
      for (Eigen::Index i = 0; i < s.proprio.rows(); ++i)
        w.row(s.id, task_name(s.task), s.condition, t + 1, std::string("proprio"), static_cast<long>(i), s.proprio(i, t));
      for (Eigen::Index i = 0; i < s.vision.rows(); ++i)
        w.row(s.id, task_name(s.task), s.condition, t + 1, std::string("vision"), static_cast<long>(i), s.vision(i, t));
    }
  return w.str();
}

// ---------------------------------------------------------------------------
// Graymaps

enum class FrameScale {
  Signal,  ///< [-0.9, 0.9] -> [0, 255]
  Map,     ///< [0, scale] -> [0, 255]
};

/// Grayscale frame as a binary P5 file with a ".txt" sidecar describing the
/// intensity mapping. `pixels` is row-major, side x side.
inline void export_frame(const Eigen::VectorXd& pixels, int side, const std::filesystem::path& path,
                         FrameScale mode = FrameScale::Signal, double scale = 1.0) {
  if (side <= 0 || pixels.size() != static_cast<Eigen::Index>(side) * side)
    throw ShapeError("export_frame: " + std::to_string(pixels.size()) + " pixels do not form a " + std::to_string(side) +
                     "x" + std::to_string(side) + " frame");
  if (mode == FrameScale::Map && !(scale > 0.0)) scale = 1.0;
  std::string data = "P5 " + std::to_string(side) + " " + std::to_string(side) + " 255\n";
  for (Eigen::Index i = 0; i < pixels.size(); ++i) {
    const double u = mode == FrameScale::Signal ? (pixels[i] - kDataMin) / (kDataMax - kDataMin) : pixels[i] / scale;
    data.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0))));
  }
  detail::write_text(path, data);
  std::string side_note = mode == FrameScale::Signal
                              ? "value = -0.9 + 1.8 * gray / 255 (gray 0 is the empty background)\n"
                              : "value = " + fmt(scale) + " * gray / 255 (per-figure maximum scaling)\n";
  detail::write_text(path.string() + ".txt", side_note);
}

struct Graymap {
  int width = 0, height = 0, maxval = 0;
  std::vector<unsigned char> pixels;
};

inline Graymap read_pgm(const std::filesystem::path& path) {
  const auto buf = detail::read_file(path);
  std::string s(buf.begin(), buf.end());
  std::istringstream in(s);
  std::string magic;
  Graymap g;
  in >> magic >> g.width >> g.height >> g.maxval;
  if (magic != "P5" || !in || g.width <= 0 || g.height <= 0) throw FormatError(path.string() + ": not a P5 graymap");
  in.get();
  const auto off = static_cast<std::size_t>(in.tellg());
  const std::size_t n = static_cast<std::size_t>(g.width) * static_cast<std::size_t>(g.height);
  if (buf.size() < off + n) throw FormatError(path.string() + ": truncated graymap");
  g.pixels.assign(buf.begin() + static_cast<long>(off), buf.begin() + static_cast<long>(off + n));
  return g;
}

// ---------------------------------------------------------------------------
// Run manifests

inline std::uint64_t hash_file(const std::filesystem::path& p) {
  const auto buf = detail::read_file(p);
  return detail::hash_bytes(buf.data(), buf.size());
}

/// Records a command's effective configuration and the content hash of
/// every input and output file. The timestamp lives only here.
class Manifest {
 public:
  explicit Manifest(std::string command) { j_["command"] = std::move(command); }
  void set(const std::string& key, json v) { j_[key] = std::move(v); }
  void input(const std::filesystem::path& p) { j_["inputs"].push_back({{"path", p.string()}, {"hash", hex64(hash_file(p))}}); }
  void output(const std::filesystem::path& p, const std::filesystem::path& root) {
    j_["outputs"].push_back({{"path", std::filesystem::relative(p, root).string()}, {"hash", hex64(hash_file(p))}});
  }
  void save(const std::filesystem::path& path) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    j_["timestamp"] = stamp;
    detail::write_text(path, j_.dump(2) + "\n");
  }
  const json& data() const { return j_; }

 private:
  json j_;
};

}  // namespace pvrnn
