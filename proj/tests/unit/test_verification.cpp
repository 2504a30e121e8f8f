#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "spectrum/alignment.hpp"
#include "spectrum/error.hpp"
#include "spectrum/verification.hpp"

using namespace spectrum;
using namespace spectrum::verify;

namespace {

net::Embeddings embedding(Matrix temporal, std::vector<double> frequency) {
  return {std::move(temporal), std::move(frequency), 0.0};
}

/// Single-row temporal features whose pairwise dtw is the squared difference.
net::Embeddings point(double t, std::vector<double> f = {0.0}) {
  return embedding(Matrix::from_rows({{t}}), std::move(f));
}

std::vector<double> shifted(std::vector<double> v, double scale, double offset) {
  for (double& x : v) x = scale * x + offset;
  return v;
}

}  // namespace

TEST_CASE("template norm") {
  const Matrix a = Matrix::from_rows({{0.0}});
  CHECK(template_norm(std::vector<Matrix>{a}) == 1.0);
  CHECK(template_norm(std::vector<Matrix>{a, a}) == kNormFloor);
  // Pairwise squared distances 2, 4 and 6.
  const Matrix x = Matrix::from_rows({{0.0, 0.0}});
  const Matrix y = Matrix::from_rows({{std::sqrt(2.0), 0.0}});
  const Matrix z = Matrix::from_rows({{std::sqrt(2.0), 2.0}});
  CHECK(align::dtw(x, y) == doctest::Approx(2.0));
  CHECK(align::dtw(y, z) == doctest::Approx(4.0));
  CHECK(align::dtw(x, z) == doctest::Approx(6.0));
  CHECK(template_norm(std::vector<Matrix>{x, y, z}) == doctest::Approx(4.0));
  CHECK_THROWS_AS(template_norm(std::vector<Matrix>{}), Error);
}

TEST_CASE("score quadruple examples") {
  const auto t = point(1.0, {0.5, -1.0});
  const std::vector<net::Embeddings> one{t};
  CHECK(score_query(one, t) == ScoreQuadruple{0, 0, 0, 0});

  // d_T = 4, d_F = 2 against a single template.
  const std::vector<net::Embeddings> single{point(0.0, {0.0, 0.0})};
  CHECK(score_query(single, point(2.0, {1.0, 1.0})) == ScoreQuadruple{4, 4, 2, 2});

  // d_T in {1, 3}, d_F in {2, 2}, norm 4.
  const auto a = embedding(Matrix::from_rows({{1.0}}), {1.0, 1.0});
  const std::vector<net::Embeddings> two{embedding(Matrix::from_rows({{0.0}}), {0.0, 0.0}),
                                         embedding(Matrix::from_rows({{1.0 - std::sqrt(3.0)}}),
                                                   {0.0, 0.0})};
  const ScoreQuadruple q = score_query(two, a, 4.0);
  CHECK(q.t_min == doctest::Approx(0.5));
  CHECK(q.t_avg == doctest::Approx(1.0));
  CHECK(q.f_min == doctest::Approx(1.0));
  CHECK(q.f_avg == doctest::Approx(1.0));

  // The plain Euclidean option takes the root before normalising.
  const ScoreQuadruple e = score_query(single, point(2.0, {1.0, 1.0}), FrequencyDistance::euclidean);
  CHECK(e.f_min == doctest::Approx(std::sqrt(2.0)));

  CHECK_THROWS_AS(score_query(std::vector<net::Embeddings>{}, t), Error);
  CHECK_THROWS_AS(score_query(one, point(1.0, {0.0}), 1.0), Error);
}

TEST_CASE("score quadruple ordering on random data") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<net::Embeddings> templates;
    for (int k = 0; k < 4; ++k)
      templates.push_back(embedding(oracle::random_matrix(5 + k, 3, rng), {1.0 * k, 0.5}));
    const auto q = score_query(templates, embedding(oracle::random_matrix(6, 3, rng), {0.2, 0.1}));
    CHECK(q.t_min <= q.t_avg);
    CHECK(q.f_min <= q.f_avg);
    CHECK(std::isfinite(q.t_avg));
  }
}

TEST_CASE("MDV decision examples") {
  CHECK(mdv_statistic({1, 1, 0, 0}) == 2.0);
  CHECK(mdv_decide({1, 1, 0, 0}, 2.01));
  CHECK_FALSE(mdv_decide({1, 1, 0, 0}, 2.0));
  CHECK(mdv_decide({0, 0, 0, 0}, 0.001));
  CHECK_FALSE(mdv_decide({10, 10, 10, 10}, 15.0));
  CHECK(mdv_statistic({10, 10, 10, 10}) == doctest::Approx(20.0).epsilon(1e-3));

  CHECK(temporal_only_decide({1, 1, 5, 5}, 2.5));
  CHECK_FALSE(temporal_only_decide({1, 1, 5, 5}, 2.0));
  CHECK(temporal_statistic({1, 3, 0, 0}) == 4.0);
  CHECK(mdv_statistic({1, 3, 0, 0}) == 3.0);
  for (double t : {0.0, 0.7, 3.0}) CHECK(mdv_statistic({t, t, 0, 0}) == temporal_statistic({t, t, 0, 0}));
}

TEST_CASE("accept set grows with the threshold") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 8.0);
  std::vector<ScoreQuadruple> qs;
  for (int i = 0; i < 200; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    qs.push_back({std::min(a, b), std::max(a, b), std::min(c, d), std::max(c, d)});
  }
  const ThresholdGrid grid;
  std::vector<bool> accepted(qs.size(), false);
  for (std::size_t i = 0; i < grid.points(); i += 7) {
    for (std::size_t k = 0; k < qs.size(); ++k) {
      const bool now = mdv_decide(qs[k], grid.at(i));
      CHECK((!accepted[k] || now));
      accepted[k] = now;
    }
  }
}

TEST_CASE("threshold grid") {
  const ThresholdGrid g;
  CHECK(g.points() == 5001);
  CHECK(g.at(5000) == doctest::Approx(50.0));
  CHECK(g.covering(10.0).c_max == 50.0);
  const ThresholdGrid wide = g.covering(73.456);
  CHECK(wide.c_max > 73.456);
  CHECK(wide.c_max < 73.456 + 0.0100001);
  CHECK(wide.step == 0.01);
  const ThresholdGrid flat{0, 1, 0};
  CHECK_THROWS_AS((void)flat.points(), Error);
}

TEST_CASE("sweep_eer examples") {
  const std::vector<double> g1{1, 2}, f1{3, 4};
  const auto s1 = sweep_eer(g1, f1);
  CHECK(s1.eer == 0.0);
  CHECK(s1.threshold > 2.0);
  CHECK(s1.threshold <= 3.0);

  const std::vector<double> same{1, 2, 3};
  CHECK(sweep_eer(same, same).eer == doctest::Approx(50.0));

  const std::vector<double> g3{1, 2, 3, 4}, f3{3, 4, 5, 6};
  const auto s3 = sweep_eer(g3, f3);
  CHECK(s3.eer == doctest::Approx(25.0));
  CHECK(s3.threshold > 3.0);
  CHECK(s3.threshold <= 4.0 + 1e-9);
  CHECK(s3.far == doctest::Approx(0.25));
  CHECK(s3.frr == doctest::Approx(0.25));

  const std::vector<double> empty;
  CHECK_THROWS_AS(sweep_eer(empty, f1), Error);
  CHECK_THROWS_AS(sweep_eer(g1, empty), Error);
}

TEST_CASE("sweep_eer agrees with a brute-force ROC") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::normal_distribution<double> gen(6.0, 2.0), forg(9.0 + trial % 4, 2.5);
    std::vector<double> g, f;
    for (int i = 0; i < 40 + trial; ++i) g.push_back(std::max(0.0, gen(rng)));
    for (int i = 0; i < 50; ++i) f.push_back(std::max(0.0, forg(rng)));
    const auto grid_result = sweep_eer(g, f);
    const auto exact = oracle::brute_force_eer(g, f);
    const double slack = oracle::cell_mass(g, f, grid_result.threshold, 0.01) + 1e-9;
    CHECK(std::abs(grid_result.eer - exact.eer) <= std::max(slack, 1e-9));
  }
}

TEST_CASE("sweep_eer is stable under a shared positive affine map") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<double> g, f;
  for (int i = 0; i < 30; ++i) g.push_back(std::round(u(rng) * 10.0) / 10.0);
  for (int i = 0; i < 30; ++i) f.push_back(std::round((u(rng) + 3.0) * 10.0) / 10.0);
  // Values sit on a 0.1 lattice, so an exact grid with step 0.05 sees every ROC point.
  const ThresholdGrid base{0.0, 20.0, 0.05};
  const auto before = sweep_eer(g, f, base);
  const double k = 2.0, b = 4.0;
  const ThresholdGrid mapped{k * base.c_min + b, k * base.c_max + b, k * base.step};
  const auto after = sweep_eer(shifted(g, k, b), shifted(f, k, b), mapped);
  CHECK(after.eer == doctest::Approx(before.eer));
  CHECK(after.threshold == doctest::Approx(k * before.threshold + b));
}

TEST_CASE("local EER") {
  const std::vector<WriterStatistics> separable{{"a", {1, 2}, {5, 6}}, {"b", {0.5}, {0.7}}};
  CHECK(local_eer(separable).eer == 0.0);
  CHECK(local_eer(separable).writers_used == 2);

  const std::vector<WriterStatistics> mixed{{"a", {1, 2, 3}, {1, 2, 3}}, {"b", {1}, {2}}};
  CHECK(local_eer(mixed).eer == doctest::Approx(25.0));

  const std::vector<WriterStatistics> single{{"a", {1, 2, 3, 4}, {3, 4, 5, 6}}};
  const std::vector<double> g{1, 2, 3, 4}, f{3, 4, 5, 6};
  CHECK(local_eer(single).eer == sweep_eer(g, f).eer);

  const std::vector<WriterStatistics> partial{{"a", {1}, {2}}, {"b", {1}, {}}};
  const auto l = local_eer(partial);
  CHECK(l.writers_used == 1);
  CHECK(l.excluded == std::vector<std::string>{"b"});
  CHECK(std::isnan(local_eer(std::vector<WriterStatistics>{{"b", {1}, {}}}).eer));
}

TEST_CASE("protocol tags") {
  for (const char* tag : {"4v1-skilled", "3v1-random", "2v1-skilled", "1v1-random"})
    CHECK(Protocol::parse(tag).tag() == tag);
  CHECK(Protocol::parse("3v1-random").templates == 3);
  CHECK(Protocol::parse("3v1-random").forgery == ForgeryKind::random);
  for (const char* bad : {"5v1-skilled", "0v1-skilled", "4v2-skilled", "4v1-forged", "", "4v1"})
    CHECK_THROWS_AS(Protocol::parse(bad), Error);
}

namespace {

/// Writers whose genuine embeddings sit near their own centre and whose
/// forgeries sit `gap` further away.
std::vector<EmbeddedSample> clustered(std::size_t writers, std::size_t genuine,
                                      std::size_t skilled, double gap, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.05);
  std::vector<EmbeddedSample> out;
  for (std::size_t w = 0; w < writers; ++w) {
    const std::string id = "w" + std::to_string(w);
    const double centre = 10.0 * static_cast<double>(w);
    for (std::size_t i = 0; i < genuine; ++i)
      out.push_back({id, signal::SampleKind::genuine,
                     embedding(Matrix::from_rows({{centre + n(rng)}, {centre + n(rng)}}), {n(rng)})});
    for (std::size_t i = 0; i < skilled; ++i)
      out.push_back({id, signal::SampleKind::skilled_forgery,
                     embedding(Matrix::from_rows({{centre + gap + n(rng)}, {centre + gap}}),
                               {1.0 + n(rng)})});
  }
  return out;
}

}  // namespace

TEST_CASE("protocol on separable data gives zero EER") {
  const auto samples = clustered(5, 8, 6, 1.0, 5);
  for (const char* tag : {"4v1-skilled", "1v1-skilled", "4v1-random", "2v1-random"}) {
    const auto r = run_protocol(samples, Protocol::parse(tag));
    CHECK(r.report.protocol == tag);
    CHECK(r.report.eer_global == 0.0);
    CHECK(r.report.eer_local == 0.0);
    CHECK(r.report.writers == 5);
  }
  const auto r = run_protocol(samples, Protocol::parse("4v1-skilled"));
  CHECK(r.report.genuine_trials == 5 * 4);
  CHECK(r.report.forgery_trials == 5 * 6);
  CHECK(r.trials.size() == 50);
  const auto rr = run_protocol(samples, Protocol::parse("4v1-random"));
  CHECK(rr.report.forgery_trials == 5 * 4 * 8);
}

TEST_CASE("protocol on constant embeddings gives 50 percent") {
  std::vector<EmbeddedSample> samples;
  for (int w = 0; w < 3; ++w)
    for (int i = 0; i < 10; ++i)
      samples.push_back({"w" + std::to_string(w),
                         i < 6 ? signal::SampleKind::genuine : signal::SampleKind::skilled_forgery,
                         point(1.0, {0.0})});
  const auto r = run_protocol(samples, Protocol::parse("4v1-skilled"));
  CHECK(std::abs(r.report.eer_global - 50.0) <= 0.5);
  CHECK(std::abs(r.report.eer_local - 50.0) <= 0.5);
}

TEST_CASE("one-template protocol uses a unit norm") {
  std::vector<EmbeddedSample> samples{
      {"a", signal::SampleKind::genuine, point(0.0)},
      {"a", signal::SampleKind::genuine, point(2.0)},
      {"a", signal::SampleKind::skilled_forgery, point(3.0)},
  };
  const auto r = run_protocol(samples, Protocol::parse("1v1-skilled"));
  REQUIRE(r.trials.size() == 2);
  CHECK(r.trials[0].statistic_temporal == 8.0);  // dtw 4, norm 1, min + avg
  CHECK(r.trials[1].statistic_temporal == 18.0);
}

TEST_CASE("writers without enough genuines are excluded") {
  auto samples = clustered(3, 8, 4, 1.0, 6);
  samples.push_back({"short", signal::SampleKind::genuine, point(0.0)});
  samples.push_back({"short", signal::SampleKind::skilled_forgery, point(1.0)});
  const auto r = run_protocol(samples, Protocol::parse("4v1-skilled"));
  CHECK(r.report.writers == 3);
  CHECK(r.report.excluded_writers == std::vector<std::string>{"short"});

  std::vector<EmbeddedSample> only_genuine{{"a", signal::SampleKind::genuine, point(0.0)},
                                           {"a", signal::SampleKind::genuine, point(1.0)}};
  CHECK_THROWS_AS(run_protocol(only_genuine, Protocol::parse("1v1-skilled")), Error);
}

TEST_CASE("random negatives are capped reproducibly") {
  const auto samples = clustered(12, 10, 1, 1.0, 7);
  ProtocolOptions options;
  options.max_random_negatives = 25;
  options.seed = 3;
  const auto a = run_protocol(samples, Protocol::parse("4v1-random"), options);
  CHECK(a.report.forgery_trials == 12 * 25);
  const auto b = run_protocol(samples, Protocol::parse("4v1-random"), options);
  REQUIRE(a.trials.size() == b.trials.size());
  for (std::size_t i = 0; i < a.trials.size(); ++i)
    CHECK(a.trials[i].statistic_mdv == b.trials[i].statistic_mdv);
  for (const auto& t : a.trials)
    if (t.kind == TrialKind::random) CHECK(t.statistic_temporal > 0.0);
}

TEST_CASE("report and score writers") {
  const auto r = run_protocol(clustered(3, 6, 3, 1.0, 8), Protocol::parse("4v1-skilled"));
  std::ostringstream json;
  const double gate = 0.625;
  write_report_json(r.report, json, &gate);
  const auto parsed = nlohmann::json::parse(json.str());
  CHECK(parsed["protocol"] == "4v1-skilled");
  CHECK(parsed["eer_global"] == 0.0);
  CHECK(parsed["genuine_trials"] == 6);
  CHECK(parsed["gate_mean"] == 0.625);

  EERReport nan_report;
  nan_report.eer_local = std::nan("");
  std::ostringstream nan_json;
  write_report_json(nan_report, nan_json);
  CHECK(nlohmann::json::parse(nan_json.str())["eer_local"].is_null());

  std::ostringstream csv;
  write_scores_csv(r.trials, csv);
  std::istringstream lines(csv.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == "writer_id,trial_kind,statistic_mdv,statistic_temporal");
  std::size_t rows = 0;
  for (std::string line; std::getline(lines, line);) ++rows;
  CHECK(rows == r.trials.size());
}

TEST_CASE("embed_all is order preserving and thread independent") {
  net::ModelConfig config;
  config.width = 8;
  config.embed_dim = 8;
  config.scales = {4};
  config.heads = 2;
  const auto params = net::init_params(config, 1);
  std::mt19937_64 rng(9);
  std::vector<signal::FeatureSequence> features;
  for (std::size_t len : {24, 30, 41, 25}) features.push_back({oracle::random_matrix(len, 15, rng)});
  net::GateSummary g1, g3;
  const auto one = embed_all(features, params, 1, &g1);
  const auto three = embed_all(features, params, 3, &g3);
  REQUIRE(one.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(one[i].temporal == three[i].temporal);
    CHECK(one[i].temporal.rows() == net::temporal_length(features[i].length()));
  }
  CHECK(g1.count == g3.count);
  CHECK(g1.sum == doctest::Approx(g3.sum));
}
