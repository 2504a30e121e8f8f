#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "run_config.hpp"
#include "spectrum/data_io.hpp"
#include "spectrum/error.hpp"
#include "spectrum/spectral_core.hpp"
#include "spectrum/training.hpp"
#include "spectrum/verification.hpp"

namespace fs = std::filesystem;
using namespace spectrum;

namespace {

constexpr int kUsageError = 2;
constexpr int kPipelineError = 1;

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void require_parent_dir(const fs::path& out) {
  const fs::path parent = out.parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw Error("output directory '" + parent.string() + "' does not exist");
  }
}

signal::PreprocessOptions options_for(const net::ModelConfig& config, double hz) {
  signal::PreprocessOptions o;
  o.target_hz = hz;
  o.features.include_log_speed = config.channels == signal::kFullChannelCount;
  return o;
}

std::vector<std::string> channel_names(std::size_t count) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < count; ++c)
    names.emplace_back(signal::channel_name(static_cast<signal::Channel>(c)));
  return names;
}

std::vector<signal::FeatureSequence> features_of(const std::vector<signal::RawTrace>& traces,
                                                 const signal::PreprocessOptions& o) {
  std::vector<signal::FeatureSequence> out;
  out.reserve(traces.size());
  for (const auto& t : traces) out.push_back(signal::preprocess(t, o));
  return out;
}

struct GenSynthArgs {
  data::SyntheticConfig config;
  std::uint64_t seed = 0;
  std::string out;
};

int gen_synth(const GenSynthArgs& a) {
  require_parent_dir(a.out);
  const data::Dataset d = data::generate_synthetic(a.config, a.seed);
  std::ostringstream text;
  data::write_dataset(d, text);
  data::write_file(a.out, text.str());
  std::cout << "wrote " << d.samples.size() << " samples from " << a.config.writers
            << " writers to " << a.out << '\n';
  return 0;
}

struct PreprocessArgs {
  std::string in, out;
  double hz = 120.0;
  bool no_log_speed = false;
};

int preprocess(const PreprocessArgs& a) {
  require_parent_dir(a.out);
  if (!(a.hz > 0.0)) throw Error("--hz must be positive");
  const data::Dataset d = data::load_dataset(a.in);
  signal::PreprocessOptions o;
  o.target_hz = a.hz;
  o.features.include_log_speed = !a.no_log_speed;
  const auto names = channel_names(o.features.channel_count());
  std::vector<data::FeatureRecord> records;
  for (const auto& t : d.samples)
    records.push_back({t.writer_id, t.session, t.kind, a.hz, names, signal::preprocess(t, o)});
  std::ostringstream text;
  data::write_features(records, text);
  data::write_file(a.out, text.str());
  std::cout << "wrote " << records.size() << " feature sequences to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string data, config, out, loss_log, epoch_dir;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

int train_command(const TrainArgs& a) {
  cli::RunConfig rc = a.config.empty() ? cli::RunConfig{} : cli::load_run_config(a.config);
  rc.model.channels = rc.preprocess.features.channel_count();
  rc.train.threads = a.threads;
  rc.model.validate();
  rc.train.validate();
  const fs::path loss_path = a.loss_log.empty() ? fs::path(a.out + ".loss.csv") : fs::path(a.loss_log);
  require_parent_dir(a.out);
  require_parent_dir(loss_path);
  if (!a.epoch_dir.empty() && !fs::is_directory(a.epoch_dir)) {
    throw Error("epoch directory '" + a.epoch_dir + "' does not exist");
  }

  const data::Dataset d = data::load_dataset(a.data);
  const auto traces = d.subset(data::Split::train);
  if (traces.empty()) throw Error("no training samples in '" + a.data + "'");
  const auto samples = train::prepare_samples(traces, rc.preprocess);

  std::ostringstream log;
  const auto start = std::chrono::steady_clock::now();
  train::TrainHooks hooks;
  hooks.loss_log = &log;
  std::size_t epoch_steps = train::steps_per_epoch(samples, rc.train.batch);
  hooks.on_epoch = [&](std::size_t epoch, const net::ModelParams& params) {
    data::save_checkpoint(params, a.out);
    if (!a.epoch_dir.empty()) {
      std::ostringstream name;
      name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".spct";
      data::save_checkpoint(params, fs::path(a.epoch_dir) / name.str());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "epoch " << epoch << '/' << rc.train.epochs << "  steps " << epoch * epoch_steps
              << "  elapsed " << fixed(secs, 1) << " s" << std::endl;
  };
  const train::TrainResult r = train::train(samples, rc.model, rc.train, a.seed, hooks);
  data::write_file(loss_path, log.str());
  const auto means = r.epoch_means();
  std::cout << "trained " << r.params.parameter_count() << " parameters for " << r.history.size()
            << " steps; final epoch mean loss " << fixed(means.back(), 6) << '\n'
            << "checkpoint " << a.out << ", loss log " << loss_path.string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string data, ckpt, protocol = "4v1-skilled", report, scores, distance = "squared";
  double hz = 120.0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

int eval_command(const EvalArgs& a) {
  const verify::Protocol protocol = verify::Protocol::parse(a.protocol);
  verify::ProtocolOptions options;
  options.seed = a.seed;
  if (a.distance == "euclidean") {
    options.frequency_distance = verify::FrequencyDistance::euclidean;
  } else if (a.distance != "squared") {
    throw Error("--frequency-distance must be squared or euclidean");
  }
  const fs::path stem = fs::path(a.ckpt);
  const fs::path report_path =
      a.report.empty() ? fs::path(stem.string() + "." + protocol.tag() + ".json") : fs::path(a.report);
  const fs::path scores_path = a.scores.empty()
                                   ? fs::path(stem.string() + "." + protocol.tag() + ".scores.csv")
                                   : fs::path(a.scores);
  require_parent_dir(report_path);
  require_parent_dir(scores_path);

  const net::ModelParams params = data::load_checkpoint(a.ckpt);
  const data::Dataset d = data::load_dataset(a.data);
  const auto traces = d.subset(data::Split::test);
  if (traces.empty()) throw Error("no test samples in '" + a.data + "'");
  const auto features = features_of(traces, options_for(params.config, a.hz));
  net::GateSummary gates;
  const auto embeddings = verify::embed_all(features, params, a.threads, &gates);
  std::vector<verify::EmbeddedSample> samples;
  for (std::size_t i = 0; i < traces.size(); ++i)
    samples.push_back({traces[i].writer_id, traces[i].kind, embeddings[i]});
  const verify::ProtocolResult r = verify::run_protocol(samples, protocol, options);

  const double gate = gates.mean();
  std::ostringstream report, scores;
  verify::write_report_json(r.report, report, &gate);
  verify::write_scores_csv(r.trials, scores);
  data::write_file(report_path, report.str());
  data::write_file(scores_path, scores.str());

  for (const auto& w : r.report.excluded_writers)
    std::cerr << "warning: writer " << w << " excluded from " << protocol.tag() << '\n';
  std::cout << "EER_g " << fixed(r.report.eer_global, 2) << " EER_l " << fixed(r.report.eer_local, 2)
            << '\n'
            << "temporal-only EER_g " << fixed(r.report.eer_global_temporal, 2) << " EER_l "
            << fixed(r.report.eer_local_temporal, 2) << '\n'
            << "gate mean " << fixed(gate, 4) << " (temporal " << fixed(100.0 * gate, 1)
            << "%, frequency " << fixed(100.0 * (1.0 - gate), 1) << "%)\n"
            << "trials " << r.report.genuine_trials << " genuine, " << r.report.forgery_trials
            << " forgery over " << r.report.writers << " writers\n";
  return 0;
}

struct SpectrogramArgs {
  std::string in, channel = "a", out, window_kind = "hann";
  std::size_t sample = 0, window = 64, hop = 16;
  double hz = 120.0;
};

int spectrogram_command(const SpectrogramArgs& a) {
  spectral::WindowKind kind;
  if (a.window_kind == "hann") {
    kind = spectral::WindowKind::hann;
  } else if (a.window_kind == "rectangular") {
    kind = spectral::WindowKind::rectangular;
  } else {
    throw Error("--window-kind must be hann or rectangular");
  }
  const std::size_t channel = signal::channel_index(a.channel);
  require_parent_dir(a.out);
  const data::Dataset d = data::load_dataset(a.in);
  if (a.sample >= d.samples.size()) {
    throw Error("--sample " + std::to_string(a.sample) + " is out of range (" +
                std::to_string(d.samples.size()) + " samples)");
  }
  signal::PreprocessOptions o;
  o.target_hz = a.hz;
  const auto f = signal::preprocess(d.samples[a.sample], o);
  std::vector<double> column(f.length());
  for (std::size_t t = 0; t < f.length(); ++t) column[t] = f.values(t, channel);
  const Matrix s = spectral::stft_spectrogram(column, a.window, a.hop, kind);
  std::ostringstream bytes;
  if (fs::path(a.out).extension() == ".csv") {
    spectral::write_csv(s, bytes);
  } else {
    spectral::write_pgm(s, bytes);
  }
  data::write_file(a.out, bytes.str());
  std::cout << "wrote " << s.rows() << " frames x " << s.cols() << " bins for channel "
            << a.channel << " of " << d.samples[a.sample].writer_id << " to " << a.out << '\n';
  return 0;
}

struct VerifyArgs {
  std::string templates, query, ckpt, writer;
  std::size_t query_index = 0;
  double threshold = 0.0, hz = 120.0;
};

int verify_command(const VerifyArgs& a) {
  const net::ModelParams params = data::load_checkpoint(a.ckpt);
  const auto o = options_for(params.config, a.hz);
  const data::Dataset t = data::load_dataset(a.templates);
  const data::Dataset q = data::load_dataset(a.query);
  if (t.samples.empty()) throw Error("no templates in '" + a.templates + "'");
  if (a.query_index >= q.samples.size()) throw Error("no query sample at the requested index");
  std::vector<net::Embeddings> templates;
  for (const auto& s : t.samples) {
    if (!a.writer.empty() && (s.writer_id != a.writer || s.kind != signal::SampleKind::genuine)) continue;
    templates.push_back(net::embed(signal::preprocess(s, o), params));
  }
  if (templates.empty()) throw Error("no genuine templates for writer '" + a.writer + "'");
  const net::Embeddings query = net::embed(signal::preprocess(q.samples[a.query_index], o), params);
  const verify::ScoreQuadruple s = verify::score_query(templates, query);
  const double stat = verify::mdv_statistic(s);
  std::cout << (verify::mdv_decide(s, a.threshold) ? "accept" : "reject") << " statistic "
            << fixed(stat, 6) << " threshold " << a.threshold << '\n'
            << "scores t_min " << fixed(s.t_min, 6) << " t_avg " << fixed(s.t_avg, 6) << " f_min "
            << fixed(s.f_min, 6) << " f_avg " << fixed(s.f_avg, 6) << '\n';
  return 0;
}

struct BenchArgs {
  std::string ckpt, data;
  std::size_t repeat = 1, limit = 0;
  double hz = 120.0;
};

int bench_command(const BenchArgs& a) {
  if (a.repeat == 0) throw Error("--repeat must be positive");
  const net::ModelParams params = data::load_checkpoint(a.ckpt);
  const data::Dataset d = data::load_dataset(a.data);
  auto features = features_of(d.samples, options_for(params.config, a.hz));
  if (a.limit > 0 && features.size() > a.limit) features.resize(a.limit);
  if (features.empty()) throw Error("no samples in '" + a.data + "'");
  double length = 0.0;
  for (const auto& f : features) length += static_cast<double>(f.length());
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t r = 0; r < a.repeat; ++r)
    for (const auto& f : features) (void)net::embed(f, params);
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  const double n = static_cast<double>(features.size() * a.repeat);
  std::cout << "parameters " << params.parameter_count() << '\n'
            << "inference " << fixed(ms / n, 3) << " ms/sample over " << features.size()
            << " samples x " << a.repeat << " (mean length "
            << fixed(length / static_cast<double>(features.size()), 1) << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online handwriting verification: data generation, training and evaluation"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Worker threads for training and embedding")
      ->check(CLI::PositiveNumber);

  GenSynthArgs gen;
  auto* g = app.add_subcommand("gen-synth", "Generate a synthetic multi-writer dataset");
  g->add_option("--writers", gen.config.writers, "Number of writers")->default_val(30);
  g->add_option("--test-writers", gen.config.test_writers, "Writers marked as test (the last ones)");
  g->add_option("--genuine", gen.config.genuine, "Genuine samples per writer")->default_val(10);
  g->add_option("--skilled", gen.config.skilled, "Skilled forgeries per writer")->default_val(10);
  g->add_option("--sigma-genuine", gen.config.sigma_genuine, "Genuine jitter")->default_val(0.03);
  g->add_option("--sigma-forgery", gen.config.sigma_forgery, "Forger perturbation")->default_val(0.3);
  g->add_option("--duration", gen.config.duration, "Nominal duration in seconds")->default_val(2.0);
  g->add_option("--rate", gen.config.rate_hz, "Sampling rate in Hz")->default_val(100.0);
  g->add_option("--seed", gen.seed, "Random seed")->required();
  g->add_option("--out", gen.out, "Output JSON-lines dataset")->required();

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Convert raw traces to standardized time functions");
  p->add_option("--in", pre.in, "Input dataset")->required();
  p->add_option("--hz", pre.hz, "Resampling rate")->default_val(120.0);
  p->add_option("--out", pre.out, "Output JSON-lines features")->required();
  p->add_flag("--no-log-speed", pre.no_log_speed, "Emit 14 channels without log speed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on the train split");
  t->add_option("--data", tr.data, "Dataset")->required();
  t->add_option("--config", tr.config, "JSON config");
  t->add_option("--seed", tr.seed, "Random seed")->default_val(0);
  t->add_option("--out", tr.out, "Checkpoint path, rewritten after every epoch")->required();
  t->add_option("--loss-log", tr.loss_log, "Loss CSV (default: <out>.loss.csv)");
  t->add_option("--epoch-dir", tr.epoch_dir, "Directory that keeps one checkpoint per epoch");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  e->add_option("--data", ev.data, "Dataset")->required();
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--protocol", ev.protocol, "{4,3,2,1}v1-{skilled,random}")->default_val("4v1-skilled");
  e->add_option("--report", ev.report, "EER report JSON (default: <ckpt>.<protocol>.json)");
  e->add_option("--scores", ev.scores, "Score CSV (default: <ckpt>.<protocol>.scores.csv)");
  e->add_option("--hz", ev.hz, "Resampling rate")->default_val(120.0);
  e->add_option("--seed", ev.seed, "Seed for random-forgery subsampling")->default_val(0);
  e->add_option("--frequency-distance", ev.distance, "squared or euclidean")->default_val("squared");

  SpectrogramArgs sp;
  auto* s = app.add_subcommand("spectrogram", "Write the STFT magnitude of one channel");
  s->add_option("--in", sp.in, "Dataset")->required();
  s->add_option("--sample", sp.sample, "Sample index in the dataset")->default_val(0);
  s->add_option("--channel", sp.channel, "Channel short name (a, p, v, ...)")->default_val("a");
  s->add_option("--window", sp.window, "Window length")->default_val(64);
  s->add_option("--hop", sp.hop, "Hop length")->default_val(16);
  s->add_option("--window-kind", sp.window_kind, "hann or rectangular")->default_val("hann");
  s->add_option("--hz", sp.hz, "Resampling rate")->default_val(120.0);
  s->add_option("--out", sp.out, "Output .pgm image or .csv table")->required();

  VerifyArgs vf;
  auto* v = app.add_subcommand("verify", "Accept or reject one query against templates");
  v->add_option("--templates", vf.templates, "Dataset of template samples")->required();
  v->add_option("--query", vf.query, "Dataset holding the query")->required();
  v->add_option("--writer", vf.writer, "Use only this writer's genuine samples as templates");
  v->add_option("--query-index", vf.query_index, "Index of the query sample")->default_val(0);
  v->add_option("--ckpt", vf.ckpt, "Checkpoint")->required();
  v->add_option("--threshold", vf.threshold, "Decision threshold")->required();
  v->add_option("--hz", vf.hz, "Resampling rate")->default_val(120.0);

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "Measure inference time per sample");
  b->add_option("--ckpt", bn.ckpt, "Checkpoint")->required();
  b->add_option("--data", bn.data, "Dataset")->required();
  b->add_option("--repeat", bn.repeat, "Passes over the data")->default_val(1);
  b->add_option("--limit", bn.limit, "Use at most this many samples (0 = all)")->default_val(0);
  b->add_option("--hz", bn.hz, "Resampling rate")->default_val(120.0);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*g) return gen_synth(gen);
    if (*p) return preprocess(pre);
    if (*t) {
      tr.threads = threads;
      return train_command(tr);
    }
    if (*e) {
      ev.threads = threads;
      return eval_command(ev);
    }
    if (*s) return spectrogram_command(sp);
    if (*v) return verify_command(vf);
    if (*b) return bench_command(bn);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kPipelineError;
  }
  return kUsageError;
}
