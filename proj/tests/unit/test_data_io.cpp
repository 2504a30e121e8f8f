#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "spectrum/alignment.hpp"
#include "spectrum/data_io.hpp"
#include "spectrum/error.hpp"
#include "spectrum/random.hpp"

using namespace spectrum;
using namespace spectrum::data;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::string serialize(const Dataset& d) {
  std::ostringstream out;
  write_dataset(d, out);
  return out.str();
}

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in, "mem");
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "spectrum_data_io_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

net::ModelConfig small_model() {
  net::ModelConfig c;
  c.width = 8;
  c.embed_dim = 8;
  c.scales = {4, 8};
  c.heads = 2;
  return c;
}

double mean_dtw(const std::vector<signal::FeatureSequence>& a,
                const std::vector<signal::FeatureSequence>& b, bool skip_diagonal) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (skip_diagonal && i == j) continue;
      total += align::dtw(a[i].values, b[j].values);
      ++n;
    }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("dataset parsing") {
  CHECK(parse("").samples.empty());
  CHECK(parse("\n  \n").samples.empty());

  const Dataset d = parse(
      R"({"writer_id":"a","session":2,"kind":"genuine","hz":100,"points":[[0,0,0.5,0],[1,1,0.4,0.01]]})"
      "\n"
      R"({"writer_id":"b","session":0,"kind":"skilled","hz":200,"points":[[0,1,0,0]],"split":"test"})"
      "\n");
  REQUIRE(d.samples.size() == 2);
  CHECK(d.samples[0].writer_id == "a");
  CHECK(d.samples[0].session == 2);
  CHECK(d.samples[0].points[1].y == 1.0);
  CHECK(d.samples[1].kind == signal::SampleKind::skilled_forgery);
  CHECK(d.samples[1].source_hz == 200.0);
  CHECK(d.split.at("b") == Split::test);
  CHECK(d.split.count("a") == 0);
  CHECK(d.writers() == std::vector<std::string>{"a", "b"});
}

TEST_CASE("dataset errors name the line") {
  const std::string good =
      R"({"writer_id":"a","session":0,"kind":"genuine","hz":100,"points":[[0,0,0,0],[1,1,0,0.01]]})";
  const std::string decreasing =
      R"({"writer_id":"a","session":0,"kind":"genuine","hz":100,"points":[[0,0,0,0.02],[1,1,0,0.01]]})";
  CHECK(error_of([&] { parse(good + "\n\n" + decreasing + "\n"); }).rfind("mem:3:", 0) == 0);
  CHECK(error_of([&] { parse(good + "\n{broken\n"); }).rfind("mem:2:", 0) == 0);
  CHECK(error_of([&] { parse(R"({"writer_id":"a"})"); }).find("missing field") != std::string::npos);
  CHECK(error_of([&] {
          parse(R"({"writer_id":"a","session":0,"kind":"forged","hz":1,"points":[[0,0,0,0]]})");
        }).find("unknown kind") != std::string::npos);
  CHECK(error_of([&] {
          parse(R"({"writer_id":"a","session":0,"kind":"genuine","hz":1,"points":[[0,0,0]]})");
        }).find("[x, y, p, t]") != std::string::npos);
  CHECK(error_of([&] {
          parse(R"({"writer_id":"a","session":0,"kind":"genuine","hz":1,"points":[[0,0,-1,0]]})");
        }).rfind("mem:1:", 0) == 0);
  CHECK_FALSE(error_of([&] {
                parse(R"({"writer_id":"a","session":0,"kind":"genuine","hz":1,"points":[]})");
              }).empty());
}

TEST_CASE("overlapping splits are rejected") {
  const std::string a_train =
      R"({"writer_id":"a","session":0,"kind":"genuine","hz":1,"points":[[0,0,0,0]],"split":"train"})";
  const std::string a_test =
      R"({"writer_id":"a","session":0,"kind":"genuine","hz":1,"points":[[0,0,0,0]],"split":"test"})";
  const std::string msg = error_of([&] { parse(a_train + "\n" + a_test + "\n"); });
  CHECK(msg.find("both train and test") != std::string::npos);
  CHECK(msg.find("a") != std::string::npos);
}

TEST_CASE("dataset round trip") {
  SyntheticConfig c;
  c.writers = 4;
  c.test_writers = 1;
  c.genuine = 2;
  c.skilled = 1;
  const Dataset d = generate_synthetic(c, 5);
  const std::string text = serialize(d);
  const Dataset back = parse(text);
  CHECK(back == d);
  CHECK(serialize(back) == text);

  const auto path = scratch("round_trip.jsonl");
  save_dataset(d, path);
  CHECK(load_dataset(path) == d);
  CHECK_THROWS_AS(load_dataset(scratch("missing.jsonl")), Error);
}

TEST_CASE("subsets follow the split map") {
  SyntheticConfig c;
  c.writers = 5;
  c.test_writers = 2;
  c.genuine = 2;
  c.skilled = 1;
  const Dataset d = generate_synthetic(c, 6);
  const auto train = d.subset(Split::train);
  const auto test = d.subset(Split::test);
  CHECK(train.size() == 9);
  CHECK(test.size() == 6);
  std::set<std::string> train_writers, test_writers;
  for (const auto& t : train) train_writers.insert(t.writer_id);
  for (const auto& t : test) test_writers.insert(t.writer_id);
  CHECK(test_writers == std::set<std::string>{"w003", "w004"});
  for (const auto& w : train_writers) CHECK(test_writers.count(w) == 0);

  Dataset unassigned = d;
  unassigned.split.clear();
  CHECK(unassigned.subset(Split::train).size() == d.samples.size());
  CHECK(unassigned.subset(Split::test).size() == d.samples.size());
}

TEST_CASE("feature records round trip") {
  std::mt19937_64 rng(7);
  std::vector<FeatureRecord> records{
      {"w1", 0, signal::SampleKind::genuine, 100.0, {"a", "b", "c"}, {oracle::random_matrix(5, 3, rng)}},
      {"w2", 3, signal::SampleKind::skilled_forgery, 100.0, {"a", "b", "c"}, {oracle::random_matrix(2, 3, rng)}},
  };
  std::ostringstream out;
  write_features(records, out);
  std::istringstream in(out.str());
  const auto back = parse_features(in);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].writer_id == records[i].writer_id);
    CHECK(back[i].session == records[i].session);
    CHECK(back[i].kind == records[i].kind);
    CHECK(back[i].channels == records[i].channels);
    CHECK(back[i].features.values == records[i].features.values);
  }
}

TEST_CASE("checkpoint round trip is bit identical") {
  net::ModelConfig config = small_model();
  config.gate = net::GateKind::softmax;
  const auto params = net::init_params(config, 8);
  std::ostringstream out;
  write_checkpoint(params, out);
  const std::string bytes = out.str();
  CHECK(bytes.substr(0, 4) == "SPCT");
  std::istringstream in(bytes);
  const auto back = read_checkpoint(in);
  CHECK(back.config == params.config);
  CHECK(back.arrays.names == params.arrays.names);
  CHECK(back.arrays.values == params.arrays.values);

  const auto path = scratch("model.spct");
  save_checkpoint(params, path);
  CHECK(load_checkpoint(path).arrays.values == params.arrays.values);
}

TEST_CASE("checkpoint errors") {
  const auto params = net::init_params(small_model(), 9);
  std::ostringstream out;
  write_checkpoint(params, out);
  const std::string bytes = out.str();
  auto read = [](const std::string& b) {
    std::istringstream in(b);
    return read_checkpoint(in, "ckpt");
  };

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{6}, std::size_t{40},
                          bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(read(bytes.substr(0, cut)), Error);
  }
  CHECK(error_of([&] { read(bytes.substr(0, bytes.size() - 8)); }).find("truncated") !=
        std::string::npos);
  CHECK(error_of([&] { read("XXXX" + bytes.substr(4)); }).find("bad magic") != std::string::npos);

  std::string future = bytes;
  future[4] = 7;
  const std::string msg = error_of([&] { read(future); });
  CHECK(msg.find("7") != std::string::npos);
  CHECK(msg.find("version 1") != std::string::npos);

  CHECK(error_of([&] { read(bytes + "x"); }).find("trailing") != std::string::npos);

  net::ModelConfig other = small_model();
  other.width = 16;
  other.heads = 4;
  CHECK_NOTHROW(require_compatible(small_model(), small_model()));
  CHECK(error_of([&] { require_compatible(small_model(), other); }).find("width") !=
        std::string::npos);
}

TEST_CASE("write_file replaces the whole file") {
  const auto path = scratch("out.txt");
  write_file(path, "first version, longer");
  write_file(path, "second");
  std::ifstream in(path);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(s == "second");
  CHECK_THROWS_AS(write_file(scratch("no_such_dir") / "x" / "y.txt", "z"), Error);
}

TEST_CASE("generator determinism and shape") {
  SyntheticConfig c;
  c.writers = 6;
  c.genuine = 3;
  c.skilled = 2;
  const Dataset a = generate_synthetic(c, 42);
  CHECK(serialize(a) == serialize(generate_synthetic(c, 42)));
  CHECK(serialize(a) != serialize(generate_synthetic(c, 43)));
  CHECK(a.samples.size() == 6 * 5);
  CHECK(a.writers().front() == "w000");
  CHECK(a.split.empty());
  CHECK_NOTHROW(a.validate());
  for (const auto& t : a.samples) {
    const double seconds = t.points.back().t;
    CHECK(seconds >= c.duration * (1.0 - c.duration_jitter) - 0.011);
    CHECK(seconds <= c.duration * (1.0 + c.duration_jitter) + 1e-9);
    for (const auto& p : t.points) CHECK(p.p >= 0.0);
  }
}

TEST_CASE("writers draw independent parameters") {
  SyntheticConfig c;
  std::set<double> frequencies;
  for (std::uint64_t w = 0; w < 20; ++w) {
    const auto p = draw_writer(c, mix_seed(11, w));
    REQUIRE(p.x.size() == c.components);
    for (const auto& s : p.x) {
      CHECK(s.frequency >= c.min_frequency);
      CHECK(s.frequency <= c.max_frequency);
      CHECK(s.amplitude >= 0.2);
      CHECK(s.amplitude <= 1.0);
      frequencies.insert(s.frequency);
    }
  }
  CHECK(frequencies.size() == 20 * c.components);
}

TEST_CASE("generator validation") {
  SyntheticConfig c;
  c.sigma_forgery = c.sigma_genuine;
  CHECK_THROWS_AS(generate_synthetic(c, 1), Error);
  c = {};
  c.sigma_forgery = 0.0;
  CHECK_NOTHROW(c.validate());
  c = {};
  c.max_frequency = 30.0;  // doubled by the forgery clamp, past 50 Hz Nyquist
  CHECK(error_of([&] { generate_synthetic(c, 1); }).find("Nyquist") != std::string::npos);
  c = {};
  c.writers = 1;
  CHECK_THROWS_AS(generate_synthetic(c, 1), Error);
  c = {};
  c.test_writers = c.writers;
  CHECK_THROWS_AS(generate_synthetic(c, 1), Error);
}

TEST_CASE("forgeries without perturbation are rendered like genuines") {
  SyntheticConfig c;
  c.sigma_forgery = 0.0;
  c.writers = 2;
  c.genuine = 1;
  c.skilled = 1;
  const Dataset d = generate_synthetic(c, 3);
  // Writer 0 draws its genuine from stream 1 and its forger from streams 2 and 3.
  const std::uint64_t writer_seed = mix_seed(3, 0);
  const auto base = draw_writer(c, mix_seed(writer_seed, 0));
  CHECK(render_sample(base, c.sigma_genuine, c, mix_seed(writer_seed, 1)).points ==
        d.samples[0].points);
  CHECK(render_sample(base, c.sigma_genuine, c, mix_seed(writer_seed, 3)).points ==
        d.samples[1].points);
}

TEST_CASE("default generator separates genuines from skilled forgeries on raw features") {
  SyntheticConfig c;
  c.writers = 3;
  const Dataset d = generate_synthetic(c, 42);
  for (const auto& writer : d.writers()) {
    std::vector<signal::FeatureSequence> genuine, skilled;
    for (const auto& t : d.samples) {
      if (t.writer_id != writer) continue;
      (t.kind == signal::SampleKind::genuine ? genuine : skilled).push_back(signal::preprocess(t));
    }
    CHECK(mean_dtw(genuine, genuine, true) < mean_dtw(genuine, skilled, false));
  }
}
