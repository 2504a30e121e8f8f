#include "spectrum/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "spectrum/error.hpp"
#include "spectrum/random.hpp"

namespace spectrum::data {
namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'S', 'P', 'C', 'T'};

std::string kind_name(signal::SampleKind k) {
  return k == signal::SampleKind::genuine ? "genuine" : "skilled";
}

signal::SampleKind parse_kind(const std::string& s) {
  if (s == "genuine") return signal::SampleKind::genuine;
  if (s == "skilled") return signal::SampleKind::skilled_forgery;
  throw Error("unknown kind '" + s + "' (expected genuine or skilled)");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw Error("unknown split '" + s + "' (expected train or test)");
}

template <typename T>
T field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw Error(std::string("missing field '") + key + "'");
  try {
    return it->template get<T>();
  } catch (const json::exception&) {
    throw Error(std::string("field '") + key + "' has the wrong type");
  }
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Runs `parse` on every non-blank line, prefixing errors with the line number.
template <typename F>
void for_each_line(std::istream& in, std::string_view source, F&& parse) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      parse(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(std::string(source) + ":" + std::to_string(number) + ": malformed JSON: " + e.what());
    } catch (const Error& e) {
      throw Error(std::string(source) + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  [[nodiscard]] const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string_view source) : data_(data), source_(source) {}
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw Error("checkpoint " + std::string(source_) + ": truncated while reading " + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  [[nodiscard]] std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::string_view source_;
  std::size_t pos_ = 0;
};

double clamp_frequency(double f, const SyntheticConfig& c) {
  return std::clamp(f, 0.5 * c.min_frequency, 2.0 * c.max_frequency);
}

SyntheticWriterParams perturb(const SyntheticWriterParams& base, double sigma,
                              const SyntheticConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  SyntheticWriterParams p = base;
  for (auto* axis : {&p.x, &p.y}) {
    for (auto& s : *axis) {
      s.amplitude *= 1.0 + sigma * n(rng);
      s.frequency = clamp_frequency(s.frequency * (1.0 + sigma * n(rng)), c);
      s.phase += sigma * std::numbers::pi * n(rng);
    }
  }
  p.pressure_offset *= 1.0 + sigma * n(rng);
  p.pressure_amplitude *= 1.0 + sigma * n(rng);
  p.pressure_frequency = clamp_frequency(p.pressure_frequency * (1.0 + sigma * n(rng)), c);
  p.pressure_phase += sigma * std::numbers::pi * n(rng);
  return p;
}

double trajectory(const std::vector<Sinusoid>& parts, double seconds) {
  double v = 0.0;
  for (const auto& s : parts)
    v += s.amplitude * std::sin(2.0 * std::numbers::pi * s.frequency * seconds + s.phase);
  return v;
}

}  // namespace

std::string_view split_name(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unassigned";
}

std::vector<signal::RawTrace> Dataset::subset(Split s) const {
  bool any_assigned = false;
  for (const auto& [writer, sp] : split) any_assigned |= sp != Split::unassigned;
  if (!any_assigned) return samples;
  std::vector<signal::RawTrace> out;
  for (const auto& t : samples) {
    const auto it = split.find(t.writer_id);
    if (it != split.end() && it->second == s) out.push_back(t);
  }
  return out;
}

std::vector<std::string> Dataset::writers() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& t : samples)
    if (seen.insert(t.writer_id).second) out.push_back(t.writer_id);
  return out;
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    try {
      signal::validate(samples[i]);
    } catch (const Error& e) {
      throw Error("sample " + std::to_string(i) + ": " + e.what());
    }
  }
}

Dataset parse_dataset(std::istream& in, std::string_view source) {
  Dataset ds;
  std::map<std::string, std::set<Split>> seen_splits;
  for_each_line(in, source, [&](const json& j) {
    if (!j.is_object()) throw Error("expected a JSON object");
    signal::RawTrace t;
    t.writer_id = field<std::string>(j, "writer_id");
    t.session = field<int>(j, "session");
    t.kind = parse_kind(field<std::string>(j, "kind"));
    t.source_hz = field<double>(j, "hz");
    const auto points = field<std::vector<std::vector<double>>>(j, "points");
    for (const auto& p : points) {
      if (p.size() != 4) throw Error("each point must be [x, y, p, t]");
      t.points.push_back({p[0], p[1], p[2], p[3]});
    }
    signal::validate(t);
    if (j.contains("split")) {
      const Split s = parse_split(field<std::string>(j, "split"));
      seen_splits[t.writer_id].insert(s);
      ds.split[t.writer_id] = s;
    }
    ds.samples.push_back(std::move(t));
  });
  std::string overlapping;
  for (const auto& [writer, splits] : seen_splits)
    if (splits.size() > 1) overlapping += (overlapping.empty() ? "" : ", ") + writer;
  if (!overlapping.empty()) {
    throw Error(std::string(source) + ": writers assigned to both train and test: " + overlapping);
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset '" + path.string() + "'");
  return parse_dataset(in, path.string());
}

void write_dataset(const Dataset& dataset, std::ostream& out) {
  for (const auto& t : dataset.samples) {
    json j;
    j["writer_id"] = t.writer_id;
    j["session"] = t.session;
    j["kind"] = kind_name(t.kind);
    j["hz"] = t.source_hz;
    const auto it = dataset.split.find(t.writer_id);
    if (it != dataset.split.end() && it->second != Split::unassigned) {
      j["split"] = std::string(split_name(it->second));
    }
    json points = json::array();
    for (const auto& p : t.points) points.push_back({p.x, p.y, p.p, p.t});
    j["points"] = std::move(points);
    out << j.dump() << '\n';
  }
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ostringstream buf;
  write_dataset(dataset, buf);
  write_file(path, buf.str());
}

void write_features(std::span<const FeatureRecord> records, std::ostream& out) {
  for (const auto& r : records) {
    json j;
    j["writer_id"] = r.writer_id;
    j["session"] = r.session;
    j["kind"] = kind_name(r.kind);
    j["hz"] = r.hz;
    j["channels"] = r.channels;
    json rows = json::array();
    for (std::size_t i = 0; i < r.features.length(); ++i) {
      const auto row = r.features.values.row(i);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["values"] = std::move(rows);
    out << j.dump() << '\n';
  }
}

std::vector<FeatureRecord> parse_features(std::istream& in, std::string_view source) {
  std::vector<FeatureRecord> out;
  for_each_line(in, source, [&](const json& j) {
    FeatureRecord r;
    r.writer_id = field<std::string>(j, "writer_id");
    r.session = field<int>(j, "session");
    r.kind = parse_kind(field<std::string>(j, "kind"));
    r.hz = field<double>(j, "hz");
    r.channels = field<std::vector<std::string>>(j, "channels");
    const auto rows = field<std::vector<std::vector<double>>>(j, "values");
    Matrix m(rows.size(), r.channels.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != r.channels.size()) {
        throw Error("row " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                    " values for " + std::to_string(r.channels.size()) + " channels");
      }
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    r.features.values = std::move(m);
    out.push_back(std::move(r));
  });
  return out;
}

void write_checkpoint(const net::ModelParams& params, std::ostream& out) {
  const auto& c = params.config;
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.channels));
  w.u32(static_cast<std::uint32_t>(c.width));
  w.u32(static_cast<std::uint32_t>(c.embed_dim));
  w.u32(static_cast<std::uint32_t>(c.heads));
  w.u32(c.gate == net::GateKind::sigmoid ? 0U : 1U);
  w.u32(static_cast<std::uint32_t>(c.scales.size()));
  for (std::size_t l : c.scales) w.u32(static_cast<std::uint32_t>(l));
  w.u64(params.arrays.count());
  for (const auto& m : params.arrays.values) {
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) w.f64(v);
  }
  out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
  if (!out) throw Error("failed to write checkpoint");
}

net::ModelParams read_checkpoint(std::istream& in, std::string_view source) {
  const std::string data{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  ByteReader r(data, source);
  if (r.take(4, "magic") != std::string_view(kMagic, 4)) {
    throw Error("checkpoint " + std::string(source) + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw Error("checkpoint " + std::string(source) + ": format version " + std::to_string(version) +
                " is not supported (this build reads version " +
                std::to_string(kCheckpointVersion) + ")");
  }
  net::ModelConfig c;
  c.channels = r.u32("config");
  c.width = r.u32("config");
  c.embed_dim = r.u32("config");
  c.heads = r.u32("config");
  const std::uint32_t gate = r.u32("config");
  if (gate > 1) throw Error("checkpoint " + std::string(source) + ": unknown gate kind");
  c.gate = gate == 0 ? net::GateKind::sigmoid : net::GateKind::softmax;
  const std::uint32_t n_scales = r.u32("config");
  r.need(4ULL * n_scales, "config");
  c.scales.clear();
  for (std::uint32_t i = 0; i < n_scales; ++i) c.scales.push_back(r.u32("config"));
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error("checkpoint " + std::string(source) + ": " + e.what());
  }

  const auto layout = net::parameter_layout(c);
  const std::uint64_t count = r.u64("array count");
  if (count != layout.size()) {
    throw Error("checkpoint " + std::string(source) + ": holds " + std::to_string(count) +
                " arrays, config implies " + std::to_string(layout.size()));
  }
  net::ModelParams params{c, {}};
  for (const auto& [name, shape] : layout) {
    const std::uint32_t rows = r.u32("array header");
    const std::uint32_t cols = r.u32("array header");
    if (rows != shape.first || cols != shape.second) {
      throw Error("checkpoint " + std::string(source) + ": array '" + name + "' is " +
                  std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                  std::to_string(shape.first) + "x" + std::to_string(shape.second));
    }
    r.need(8ULL * rows * cols, name.c_str());
    Matrix m(rows, cols);
    for (double& v : m.values()) v = r.f64(name.c_str());
    params.arrays.add(name, std::move(m));
  }
  if (r.remaining() != 0) {
    throw Error("checkpoint " + std::string(source) + ": " + std::to_string(r.remaining()) +
                " trailing bytes");
  }
  return params;
}

void save_checkpoint(const net::ModelParams& params, const std::filesystem::path& path) {
  std::ostringstream buf(std::ios::binary);
  write_checkpoint(params, buf);
  write_file(path, buf.str());
}

net::ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::istringstream in(read_all(path), std::ios::binary);
  return read_checkpoint(in, path.string());
}

void require_compatible(const net::ModelConfig& expected, const net::ModelConfig& actual) {
  std::string diff;
  auto check = [&](const char* name, auto a, auto b) {
    if (a != b) {
      std::ostringstream s;
      s << name << " " << b << " vs expected " << a;
      diff += (diff.empty() ? "" : "; ") + s.str();
    }
  };
  check("channels", expected.channels, actual.channels);
  check("width", expected.width, actual.width);
  check("embed_dim", expected.embed_dim, actual.embed_dim);
  check("heads", expected.heads, actual.heads);
  check("gate", static_cast<int>(expected.gate), static_cast<int>(actual.gate));
  if (expected.scales != actual.scales) diff += std::string(diff.empty() ? "" : "; ") + "scales differ";
  if (!diff.empty()) throw Error("model config mismatch: " + diff);
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed to write '" + path.string() + "'");
}

void SyntheticWriterParams::validate(double duration_jitter) const {
  if (sigma_genuine < 0.0 || sigma_forgery < 0.0) throw Error("synthetic: sigmas must be non-negative");
  if (sigma_forgery != 0.0 && !(sigma_forgery > sigma_genuine)) {
    throw Error("synthetic: sigma_forgery must exceed sigma_genuine");
  }
  if (!(duration > 0.0) || !(rate_hz > 0.0)) throw Error("synthetic: duration and rate must be positive");
  const double nyquist = rate_hz / 2.0;
  const double speedup = 1.0 / (1.0 - duration_jitter);
  auto check = [&](double f) {
    if (!(f * speedup < nyquist)) {
      throw Error("synthetic: frequency " + std::to_string(f) + " Hz reaches the Nyquist limit " +
                  std::to_string(nyquist) + " Hz");
    }
  };
  for (const auto* axis : {&x, &y})
    for (const auto& s : *axis) check(s.frequency);
  check(pressure_frequency);
}

void SyntheticConfig::validate() const {
  if (writers < 2) throw Error("synthetic: need at least 2 writers");
  if (test_writers >= writers) throw Error("synthetic: test_writers must be below writers");
  if (genuine == 0) throw Error("synthetic: need at least one genuine sample per writer");
  if (components == 0) throw Error("synthetic: need at least one sinusoid component");
  if (!(min_frequency > 0.0) || !(max_frequency >= min_frequency)) {
    throw Error("synthetic: need 0 < min_frequency <= max_frequency");
  }
  if (!(duration_jitter >= 0.0 && duration_jitter < 1.0)) {
    throw Error("synthetic: duration_jitter must lie in [0, 1)");
  }
  if (!(warp >= 0.0 && warp < 1.0)) throw Error("synthetic: warp must lie in [0, 1)");
  if (point_noise < 0.0) throw Error("synthetic: point_noise must be non-negative");
  SyntheticWriterParams probe;
  probe.x = {{1.0, 2.0 * max_frequency, 0.0}};
  probe.sigma_genuine = sigma_genuine;
  probe.sigma_forgery = sigma_forgery;
  probe.duration = duration;
  probe.rate_hz = rate_hz;
  probe.pressure_frequency = min_frequency;
  probe.validate(duration_jitter);
}

SyntheticWriterParams draw_writer(const SyntheticConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(0.2, 1.0);
  std::uniform_real_distribution<double> freq(c.min_frequency, c.max_frequency);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  SyntheticWriterParams p;
  for (auto* axis : {&p.x, &p.y})
    for (std::size_t k = 0; k < c.components; ++k) axis->push_back({amp(rng), freq(rng), phase(rng)});
  p.pressure_offset = std::uniform_real_distribution<double>(0.2, 0.6)(rng);
  p.pressure_amplitude = std::uniform_real_distribution<double>(0.3, 0.7)(rng);
  p.pressure_frequency = std::uniform_real_distribution<double>(0.3, 1.5)(rng);
  p.pressure_phase = phase(rng);
  p.sigma_genuine = c.sigma_genuine;
  p.sigma_forgery = c.sigma_forgery;
  p.duration = c.duration;
  p.rate_hz = c.rate_hz;
  return p;
}

signal::RawTrace render_sample(const SyntheticWriterParams& base, double sigma,
                               const SyntheticConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const SyntheticWriterParams p = perturb(base, sigma, c, rng);
  const double length =
      base.duration * (1.0 + std::uniform_real_distribution<double>(-c.duration_jitter,
                                                                     c.duration_jitter)(rng));
  const double alpha = std::uniform_real_distribution<double>(-c.warp, c.warp)(rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto count = static_cast<std::size_t>(std::floor(length * base.rate_hz + 1e-9)) + 1;

  signal::RawTrace t;
  t.source_hz = base.rate_hz;
  t.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double seconds = static_cast<double>(i) / base.rate_hz;
    const double s = std::min(1.0, seconds / length);
    const double warped = s + alpha * std::sin(2.0 * std::numbers::pi * s) / (2.0 * std::numbers::pi);
    const double u = warped * base.duration;
    const double pressure =
        p.pressure_offset +
        p.pressure_amplitude *
            std::sin(2.0 * std::numbers::pi * p.pressure_frequency * u + p.pressure_phase);
    t.points.push_back({trajectory(p.x, u) + c.point_noise * noise(rng),
                        trajectory(p.y, u) + c.point_noise * noise(rng), std::max(0.0, pressure),
                        seconds});
  }
  return t;
}

Dataset generate_synthetic(const SyntheticConfig& c, std::uint64_t seed) {
  c.validate();
  Dataset ds;
  const std::size_t width = std::to_string(c.writers - 1).size();
  for (std::size_t w = 0; w < c.writers; ++w) {
    std::string id = std::to_string(w);
    id = "w" + std::string(std::max<std::size_t>(width, 3) - id.size(), '0') + id;
    const std::uint64_t writer_seed = mix_seed(seed, w);
    const SyntheticWriterParams base = draw_writer(c, mix_seed(writer_seed, 0));
    base.validate(c.duration_jitter);
    std::uint64_t stream = 1;
    for (std::size_t g = 0; g < c.genuine; ++g) {
      signal::RawTrace t = render_sample(base, c.sigma_genuine, c, mix_seed(writer_seed, stream++));
      t.writer_id = id;
      t.kind = signal::SampleKind::genuine;
      ds.samples.push_back(std::move(t));
    }
    for (std::size_t f = 0; f < c.skilled; ++f) {
      std::mt19937_64 forger_rng(mix_seed(writer_seed, stream++));
      const SyntheticWriterParams forger = perturb(base, c.sigma_forgery, c, forger_rng);
      signal::RawTrace t = render_sample(forger, c.sigma_genuine, c, mix_seed(writer_seed, stream++));
      t.writer_id = id;
      t.kind = signal::SampleKind::skilled_forgery;
      ds.samples.push_back(std::move(t));
    }
    if (c.test_writers > 0) {
      ds.split[id] = w + c.test_writers >= c.writers ? Split::test : Split::train;
    }
  }
  return ds;
}

}  // namespace spectrum::data
