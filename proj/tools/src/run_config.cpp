#include "run_config.hpp"

#include <fstream>
#include <iterator>
#include <set>
#include <string>

#include "json.hpp"
#include "spectrum/error.hpp"

namespace spectrum::cli {
namespace {

using json = nlohmann::json;

// Reads the keys of one JSON object, rejecting any key nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(path_ + " must be a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw Error(path_ + "." + key + " has the wrong type");
    }
  }

  [[nodiscard]] const json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  [[nodiscard]] const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw Error("unknown config key " + path_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(const json& j, net::ModelConfig& m) {
  Section s(j, "model");
  s.read("width", m.width);
  s.read("embed_dim", m.embed_dim);
  s.read("scales", m.scales);
  s.read("heads", m.heads);
  std::string gate = m.gate == net::GateKind::sigmoid ? "sigmoid" : "softmax";
  s.read("gate", gate);
  if (gate == "sigmoid") {
    m.gate = net::GateKind::sigmoid;
  } else if (gate == "softmax") {
    m.gate = net::GateKind::softmax;
  } else {
    throw Error("model.gate must be \"sigmoid\" or \"softmax\"");
  }
  s.finish();
}

void read_train(const json& j, train::TrainConfig& t) {
  Section s(j, "train");
  s.read("epochs", t.epochs);
  s.read("lr_start", t.lr_start);
  s.read("lr_end", t.lr_end);
  s.read("weight_decay", t.weight_decay);
  s.read("beta1", t.beta1);
  s.read("beta2", t.beta2);
  s.read("adam_eps", t.adam_eps);
  s.read("lambda", t.lambda);
  s.read("gamma", t.gamma);
  s.read("margin", t.margin);
  if (const json* b = s.child("batch")) {
    Section batch(*b, "train.batch");
    batch.read("writers", t.batch.writers);
    batch.read("genuine", t.batch.genuine);
    batch.read("skilled", t.batch.skilled);
    batch.read("random", t.batch.random);
    batch.finish();
  }
  s.finish();
}

void read_preprocess(const json& j, signal::PreprocessOptions& p) {
  Section s(j, "preprocess");
  s.read("target_hz", p.target_hz);
  s.read("include_log_speed", p.features.include_log_speed);
  s.finish();
}

}  // namespace

RunConfig parse_run_config(std::string_view text, std::string_view source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string(source) + ": malformed JSON: " + e.what());
  }
  RunConfig c;
  try {
    Section top(root, "config");
    if (const json* m = top.child("model")) read_model(*m, c.model);
    if (const json* t = top.child("train")) read_train(*t, c.train);
    if (const json* p = top.child("preprocess")) read_preprocess(*p, c.preprocess);
    top.finish();
    if (!(c.preprocess.target_hz > 0.0)) throw Error("preprocess.target_hz must be positive");
    c.model.channels = c.preprocess.features.channel_count();
    c.model.validate();
    c.train.validate();
  } catch (const Error& e) {
    throw Error(std::string(source) + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config '" + path.string() + "'");
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_run_config(text, path.string());
}

}  // namespace spectrum::cli
