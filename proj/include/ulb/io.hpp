#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ulb/accountant.hpp"
#include "ulb/difficulty.hpp"
#include "ulb/eval.hpp"
#include "ulb/landscape.hpp"
#include "ulb/model.hpp"
#include "ulb/trainer.hpp"
#include "ulb/unlearner.hpp"

namespace ulb {

// Shortest decimal string that round-trips the exact double.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32le(std::istream& in, const std::string& what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated " + what);
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

inline std::uint64_t get_u64le(std::istream& in, const std::string& what) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated " + what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::string f64le_bytes(const double* data, std::size_t count) {
  std::string out;
  out.reserve(count * 8);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &data[i], 8);
    put_u64le(out, bits);
  }
  return out;
}

inline std::vector<double> f64le_parse(const std::string& bytes) {
  if (bytes.size() % 8 != 0) throw std::runtime_error("binary: payload not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 7; k >= 0; --k) {
      bits = (bits << 8) | static_cast<unsigned char>(bytes[i * 8 + k]);
    }
    std::memcpy(&out[i], &bits, 8);
  }
  return out;
}

}  // namespace detail

inline std::string spec_signature(const ModelSpec& spec) {
  std::string s = "mlp:";
  for (std::size_t i = 0; i < spec.layer_widths.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(spec.layer_widths[i]);
  }
  s += (spec.activation == Activation::kRelu) ? ":relu" : ":tanh";
  return s;
}

constexpr std::uint32_t kCheckpointVersion = 1;

// Checkpoint file: "UNLB" magic, format version, model-spec digest, step
// index, parameter count, little-endian f64 payload, CRC32 of the payload.
inline void write_checkpoint(const std::string& path, const ModelSpec& spec,
                             const ParamVector& params, std::uint64_t step) {
  std::string body;
  body.reserve(28 + params.size() * 8 + 4);
  body += "UNLB";
  detail::put_u32le(body, kCheckpointVersion);
  detail::put_u64le(body, fnv1a64(spec_signature(spec)));
  detail::put_u64le(body, step);
  detail::put_u64le(body, params.size());
  const std::string payload = detail::f64le_bytes(params.data(), params.size());
  body += payload;
  detail::put_u32le(body, crc32(reinterpret_cast<const unsigned char*>(payload.data()),
                                payload.size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct CheckpointData {
  ParamVector params;
  std::uint64_t step = 0;
};

inline CheckpointData read_checkpoint(const std::string& path, const ModelSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "UNLB") {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = detail::get_u32le(in, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  }
  const std::uint64_t digest = detail::get_u64le(in, "spec digest");
  if (digest != fnv1a64(spec_signature(spec))) {
    throw std::runtime_error("checkpoint: model spec digest mismatch in " + path);
  }
  CheckpointData data;
  data.step = detail::get_u64le(in, "step");
  const std::uint64_t count = detail::get_u64le(in, "param count");
  if (count != param_count(spec)) {
    throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
  }
  std::string payload(count * 8, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!in) throw std::runtime_error("checkpoint: truncated payload in " + path);
  const std::uint32_t stored_crc = detail::get_u32le(in, "checksum");
  const std::uint32_t actual_crc =
      crc32(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());
  if (stored_crc != actual_crc) {
    throw std::runtime_error("checkpoint: checksum mismatch in " + path);
  }
  data.params = detail::f64le_parse(payload);
  return data;
}

inline void write_f64_matrix(const std::string& path, const std::vector<double>& values) {
  const std::string bytes = detail::f64le_bytes(values.data(), values.size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<double> read_f64_matrix(const std::string& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::vector<double> values = detail::f64le_parse(ss.str());
  if (values.size() != expected) {
    throw std::runtime_error("unexpected element count in " + path);
  }
  return values;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

// CSV: id, loss, alpha, sigma, p, T
inline void save_privacy_table(const std::string& path, const PrivacyLossTable& table) {
  std::ostringstream out;
  out << "id,loss,alpha,sigma,p,T\n";
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    out << table.ids[i] << ',' << fmt_double(table.losses[i]) << ','
        << fmt_double(table.config.alpha) << ',' << fmt_double(table.config.sigma) << ','
        << table.config.resolved_p() << ',' << table.config.total_steps << '\n';
  }
  write_text(path, out.str());
}

// CSV: id, score, metric, higher_is_harder
inline void save_scores(const std::string& path, const ScoreVector& sv) {
  std::ostringstream out;
  out << "id,score,metric,higher_is_harder\n";
  for (std::size_t i = 0; i < sv.ids.size(); ++i) {
    out << sv.ids[i] << ',' << fmt_double(sv.scores[i]) << ',' << sv.metric << ','
        << (sv.higher_is_harder ? 1 : 0) << '\n';
  }
  write_text(path, out.str());
}

inline ScoreVector load_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  ScoreVector sv;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id_s, score_s, metric, flag_s;
    std::getline(ss, id_s, ',');
    std::getline(ss, score_s, ',');
    std::getline(ss, metric, ',');
    std::getline(ss, flag_s, ',');
    sv.ids.push_back(std::stoll(id_s));
    sv.scores.push_back(std::stod(score_s));
    sv.metric = metric;
    sv.higher_is_harder = flag_s == "1";
  }
  return sv;
}

// CSV: step, metric, value
inline void save_run_csv(const std::string& path, const UnlearnRun& run) {
  std::ostringstream out;
  out << "step,metric,value\n";
  for (std::size_t m = 0; m < run.metric_names.size(); ++m) {
    for (std::size_t i = 0; i < run.eval_steps.size(); ++i) {
      out << run.eval_steps[i] << ',' << run.metric_names[m] << ','
          << fmt_double(run.series[m][i]) << '\n';
    }
  }
  write_text(path, out.str());
}

// CSV: alpha, loss
inline void save_barrier_csv(const std::string& path, const BarrierProfile& prof) {
  std::ostringstream out;
  out << "alpha,loss\n";
  for (std::size_t i = 0; i < prof.alphas.size(); ++i) {
    out << fmt_double(prof.alphas[i]) << ',' << fmt_double(prof.losses[i]) << '\n';
  }
  write_text(path, out.str());
}

// Binary poison record: ids then noise rows, everything little-endian.
inline void save_poison_record(const std::string& path, const PoisonRecord& record) {
  std::string body;
  body += "UPSN";
  detail::put_u32le(body, 1);
  detail::put_u64le(body, record.ids.size());
  detail::put_u32le(body, static_cast<std::uint32_t>(record.d));
  std::uint64_t sig_bits;
  std::memcpy(&sig_bits, &record.sigma_sq, 8);
  detail::put_u64le(body, sig_bits);
  for (std::int64_t id : record.ids) {
    detail::put_u64le(body, static_cast<std::uint64_t>(id));
  }
  body += detail::f64le_bytes(record.noise.data(), record.noise.size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
}

inline PoisonRecord load_poison_record(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "UPSN") throw std::runtime_error("poison: bad magic");
  if (detail::get_u32le(in, "version") != 1) throw std::runtime_error("poison: bad version");
  PoisonRecord record;
  const std::uint64_t count = detail::get_u64le(in, "count");
  record.d = static_cast<int>(detail::get_u32le(in, "dim"));
  const std::uint64_t sig_bits = detail::get_u64le(in, "sigma");
  std::memcpy(&record.sigma_sq, &sig_bits, 8);
  record.ids.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    record.ids[i] = static_cast<std::int64_t>(detail::get_u64le(in, "id"));
  }
  std::string payload(count * record.d * 8, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!in) throw std::runtime_error("poison: truncated noise payload");
  record.noise = detail::f64le_parse(payload);
  return record;
}

}  // namespace ulb
