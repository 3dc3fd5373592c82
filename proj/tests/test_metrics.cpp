#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vfm/error.hpp"
#include "vfm/metrics.hpp"

using namespace vfm;

TEST_CASE("roc_auc examples") {
  CHECK(roc_auc(std::vector{0.9, 0.8, 0.2, 0.1}, std::vector{1, 1, 0, 0}) == 1.0);
  CHECK(roc_auc(std::vector{0.5, 0.5}, std::vector{1, 0}) == 0.5);
  CHECK_THROWS_AS(roc_auc(std::vector{0.1, 0.2}, std::vector{1, 1}), Error);
}

TEST_CASE("roc_auc and AP match brute force, including ties") {
  Rng rng(99);
  for (int t = 0; t < 300; ++t) {
    const auto c = oracle::random_case(rng, 2 + rng.below(199), t % 2 == 0);
    CHECK(roc_auc(c.scores, c.labels) == oracle::auc(c.scores, c.labels));
    CHECK(std::abs(pr_curve_and_ap(c.scores, c.labels).ap -
                   oracle::average_precision(c.scores, c.labels)) <= 1e-12);
  }
}

TEST_CASE("roc_auc invariances") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    auto c = oracle::random_case(rng, 60, t % 2 == 0);
    const double a = roc_auc(c.scores, c.labels);
    std::vector<double> mono, neg;
    for (double s : c.scores) {
      mono.push_back(std::exp(3.0 * s) - 7.0);
      neg.push_back(-s);
    }
    CHECK(roc_auc(mono, c.labels) == a);
    CHECK(roc_auc(neg, c.labels) == doctest::Approx(1.0 - a).epsilon(1e-15));
  }
}

TEST_CASE("average precision edge cases") {
  CHECK(pr_curve_and_ap(std::vector{0.9, 0.8, 0.1}, std::vector{1, 1, 0}).ap == 1.0);
  // all scores equal: single threshold, precision = prevalence
  CHECK(pr_curve_and_ap(std::vector{0.3, 0.3, 0.3, 0.3, 0.3}, std::vector{1, 0, 0, 1, 0}).ap ==
        doctest::Approx(0.4));
  CHECK_THROWS_AS(pr_curve_and_ap(std::vector{0.3, 0.2}, std::vector{0, 0}), Error);
  const auto pr = pr_curve_and_ap(std::vector{0.9, 0.7, 0.5, 0.3}, std::vector{1, 0, 1, 0});
  for (std::size_t i = 1; i < pr.curve.size(); ++i) CHECK(pr.curve[i].x >= pr.curve[i - 1].x);
}

TEST_CASE("roc curve is monotone and ends at (1,1)") {
  const auto c = roc_curve(std::vector{0.9, 0.8, 0.8, 0.2, 0.1}, std::vector{1, 0, 1, 0, 1});
  CHECK(c.front().x == 0.0);
  CHECK(c.back().x == 1.0);
  CHECK(c.back().y == 1.0);
  for (std::size_t i = 1; i < c.size(); ++i) {
    CHECK(c[i].x >= c[i - 1].x);
    CHECK(c[i].y >= c[i - 1].y);
  }
}

TEST_CASE("f1 conventions") {
  CHECK(f1(std::vector{1, 0, 1}, std::vector{1, 0, 1}) == 1.0);
  const auto s = f1_stats(std::vector{1, 1, 1, 1}, std::vector{1, 0, 1, 0});
  CHECK(s.precision == 0.5);
  CHECK(s.recall == 1.0);
  CHECK(s.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(f1(std::vector{0, 0}, std::vector{0, 0}) == 0.0);
  CHECK(macro_f1(std::vector{0, 1, 2}, std::vector{0, 1, 2}, 3) == 1.0);
}

TEST_CASE("confusion matrix") {
  const auto m = confusion_matrix(std::vector{1, 0, 0}, std::vector{1, 1, 0}, 2);
  CHECK(m == std::vector<std::vector<long long>>{{1, 0}, {1, 1}});
  const auto d = confusion_matrix(std::vector{0, 1, 2, 2}, std::vector{0, 1, 2, 2}, 3);
  long long total = 0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      total += d[i][j];
      if (i != j) CHECK(d[i][j] == 0);
    }
  }
  CHECK(total == 4);
  CHECK_THROWS_AS(confusion_matrix(std::vector{3}, std::vector{0}, 3), Error);
}

TEST_CASE("dice") {
  Mask a(10, 20), b(10, 20);
  for (int x = 0; x < 10; ++x) {
    for (int y = 0; y < 10; ++y) a.at(y, x) = 1;  // 100 px
  }
  for (int x = 5; x < 15; ++x) {
    for (int y = 0; y < 10; ++y) b.at(y, x) = 1;  // 100 px, 50 overlap
  }
  CHECK(dice(a, b, 1) == 0.5);
  CHECK(dice(a, b, 1) == dice(b, a, 1));
  CHECK(dice(a, a, 1) == 1.0);
  Mask empty(10, 20);
  CHECK(dice(empty, empty, 1) == 1.0);
  Mask c(10, 20);
  for (int x = 15; x < 20; ++x) c.at(0, x) = 1;
  CHECK(dice(a, c, 1) == 0.0);
  CHECK_THROWS_AS(dice(a, Mask(3, 3), 1), Error);
}

TEST_CASE("landmark error") {
  LandmarkSet t{{Point2{3, 4}, Point2{10, 10}, Point2{0, 0}}};
  LandmarkSet p{{Point2{0, 0}, Point2{10, 10}, Point2{0, 0}}};
  const auto e = landmark_error(p, t);
  CHECK(e.per_point[0] == 5.0);
  CHECK(e.per_point[1] == 0.0);
  CHECK(landmark_error(t, t).mean == 0.0);
  LandmarkSet a{{Point2{2, 0}, Point2{2, 0}, Point2{2, 0}}};
  LandmarkSet b{{Point2{4, 0}, Point2{4, 0}, Point2{4, 0}}};
  LandmarkSet o{};
  std::vector<LandmarkSet> preds{a, b}, truths{o, o};
  CHECK(landmark_error(preds, truths).mean == 3.0);
  CHECK_THROWS_AS(landmark_error(std::vector<LandmarkSet>{a}, truths), Error);
}

TEST_CASE("biomarker accuracy") {
  BiomarkerPanel truth;
  truth.values = {{"A", 10.0}, {"B", -4.0}};
  CHECK(biomarker_accuracy(truth, truth).mean == 1.0);
  BiomarkerPanel scaled = truth;
  for (auto& [_, v] : scaled.values) v *= 1.3;
  CHECK(biomarker_accuracy(scaled, truth).mean == 0.0);

  std::vector<BiomarkerPanel> preds(4), truths(4);
  const double offsets[] = {0.5, 1.9, -1.5, 2.5};  // |err| <= 2 for 3 of 4
  for (int i = 0; i < 4; ++i) {
    truths[i].values = {{"A", 10.0}};
    preds[i].values = {{"A", 10.0 + offsets[i]}};
  }
  CHECK(biomarker_accuracy(preds, truths).per_biomarker.at("A") == 0.75);

  BiomarkerPanel zero, near;
  zero.values = {{"A", 0.0}};
  near.values = {{"A", 0.1}};
  CHECK(biomarker_accuracy(near, zero, 0.2, 0.2).mean == 1.0);
  CHECK(biomarker_accuracy(near, zero, 0.2, 0.05).mean == 0.0);
  BiomarkerPanel other;
  other.values = {{"Z", 0.0}};
  CHECK_THROWS_AS(biomarker_accuracy(other, zero), Error);
}

TEST_CASE("bootstrap ci") {
  const std::vector<double> data(40, 2.5);
  auto mean_metric = [&](std::span<const std::size_t> idx) {
    double s = 0.0;
    for (auto i : idx) s += data[i];
    return s / static_cast<double>(idx.size());
  };
  const auto c = bootstrap_ci(mean_metric, data.size(), 200, 0.95, 3);
  CHECK(c.lo == doctest::Approx(2.5));
  CHECK(c.hi == doctest::Approx(2.5));
  CHECK(c.point == doctest::Approx(2.5));

  Rng rng(8);
  std::vector<double> noisy(50);
  for (double& v : noisy) v = rng.normal();
  auto m2 = [&](std::span<const std::size_t> idx) {
    double s = 0.0;
    for (auto i : idx) s += noisy[i];
    return s / static_cast<double>(idx.size());
  };
  const auto a = bootstrap_ci(m2, noisy.size(), 300, 0.9, 17);
  const auto b = bootstrap_ci(m2, noisy.size(), 300, 0.9, 17);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  CHECK(a.lo < a.point);
  CHECK(a.point < a.hi);
  CHECK_FALSE(a.inverted);
  CHECK_THROWS_AS(bootstrap_ci(m2, 1), Error);
}

TEST_CASE("turing score") {
  std::vector<TuringResponse> all_right{{"r1", true, true}, {"r1", false, false}};
  CHECK(turing_score(all_right).mean == 1.0);

  std::vector<TuringResponse> r;
  auto add = [&](const std::string& id, int correct, int total) {
    for (int i = 0; i < total; ++i) r.push_back({id, i % 2 == 0, i < correct ? i % 2 == 0 : i % 2 != 0});
  };
  add("a", 4, 10);
  add("b", 5, 10);
  add("c", 6, 10);
  const auto s = turing_score(r);
  CHECK(s.per_rater.at("a") == doctest::Approx(0.4));
  CHECK(s.mean == doctest::Approx(0.5));
  CHECK(s.stddev == doctest::Approx(std::sqrt(0.02 / 3.0)));
  CHECK_THROWS_AS(turing_score(std::vector<TuringResponse>{}), Error);
}

TEST_CASE("metric report json round trip and schema") {
  MetricReport r;
  r.task = "classify";
  r.metrics = {{"auc", 0.9}};
  r.curves["roc"] = {{0, 0}, {0.5, 0.8}, {1, 1}};
  r.ci["auc"] = {0.8, 0.9, 0.95, 0.95, false, 100};
  r.n = 12;
  r.seed = 4;
  r.config_digest = "abc";
  r.mode = "ovr";
  r.confusion["classes"] = {{3, 1}, {0, 4}};
  const auto j = r.to_json();
  validate_report_json(j);
  const auto back = MetricReport::from_json(j);
  CHECK(back.to_json() == j);
  auto bad = j;
  bad["metrics"]["auc"] = "high";
  CHECK_THROWS_AS(validate_report_json(bad), Error);
  bad = j;
  bad.erase("config_digest");
  CHECK_THROWS_AS(validate_report_json(bad), Error);
  bad = j;
  bad["confusion"]["classes"][0] = {1};
  CHECK_THROWS_AS(validate_report_json(bad), Error);
}
