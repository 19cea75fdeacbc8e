#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "ulb/difficulty.hpp"

using namespace ulb;

namespace {

// Minimal trajectory carrying only the logs the proxies read.
Trajectory fake_trajectory(std::vector<std::vector<double>> grad_rows,
                           std::vector<std::vector<double>> conf_rows) {
  Trajectory traj;
  traj.n_examples = static_cast<int>(grad_rows[0].size());
  for (std::size_t i = 0; i < grad_rows.size(); ++i) {
    traj.checkpoint_steps.push_back(static_cast<long>(i + 1));
    traj.grad_norm_log.insert(traj.grad_norm_log.end(), grad_rows[i].begin(), grad_rows[i].end());
    traj.confidence_log.insert(traj.confidence_log.end(), conf_rows[i].begin(),
                               conf_rows[i].end());
  }
  traj.total_steps = static_cast<long>(grad_rows.size());
  for (int e = 0; e < traj.n_examples; ++e) traj.example_ids.push_back(e);
  return traj;
}

ScoreVector make_scores(std::vector<double> scores, bool higher_is_harder = true) {
  ScoreVector sv;
  sv.scores = std::move(scores);
  sv.ids.resize(sv.scores.size());
  std::iota(sv.ids.begin(), sv.ids.end(), 0);
  sv.metric = "test";
  sv.higher_is_harder = higher_is_harder;
  return sv;
}

}  // namespace

TEST_CASE("gradient-norm proxies") {
  SECTION("single checkpoint collapses mid = end = average") {
    const Trajectory traj = fake_trajectory({{1.0, 3.0, 2.0}}, {{0.5, 0.5, 0.5}});
    const ScoreVector mid = proxy_grad_norm(traj, GradNormProxy::kMid);
    const ScoreVector end = proxy_grad_norm(traj, GradNormProxy::kEnd);
    const ScoreVector avg = proxy_grad_norm(traj, GradNormProxy::kAverage);
    CHECK(mid.scores == end.scores);
    CHECK(mid.scores == avg.scores);
    CHECK(mid.higher_is_harder);
  }

  SECTION("average of a two-checkpoint log") {
    const Trajectory traj = fake_trajectory({{1.0, 0.2}, {3.0, 0.2}}, {{0.2, 1.0}, {0.8, 1.0}});
    const ScoreVector avg = proxy_grad_norm(traj, GradNormProxy::kAverage);
    CHECK(avg.scores[0] == Catch::Approx(2.0).epsilon(1e-15));
    CHECK(avg.scores[1] == Catch::Approx(0.2).epsilon(1e-15));
  }

  SECTION("mid is the floor(N/2) checkpoint") {
    const Trajectory traj =
        fake_trajectory({{1.0}, {2.0}, {3.0}, {4.0}, {5.0}}, {{0.1}, {0.1}, {0.1}, {0.1}, {0.1}});
    CHECK(proxy_grad_norm(traj, GradNormProxy::kMid).scores[0] == 3.0);  // index 2 of 5
    CHECK(proxy_grad_norm(traj, GradNormProxy::kEnd).scores[0] == 5.0);
  }
}

TEST_CASE("C-proxy averages true-class confidence and flips orientation") {
  const Trajectory traj = fake_trajectory({{1.0, 1.0}, {1.0, 1.0}}, {{0.2, 1.0}, {0.8, 1.0}});
  const ScoreVector c = proxy_c(traj);
  CHECK_FALSE(c.higher_is_harder);
  CHECK(c.scores[0] == Catch::Approx(0.5).epsilon(1e-15));
  CHECK(c.scores[1] == Catch::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("EL2N hand values") {
  const ModelSpec spec{{2, 2}, Activation::kRelu};
  Dataset ds;
  ds.n = 2;
  ds.d = 2;
  ds.features = {1.0, 0.0, 1.0, 0.0};
  ds.labels = {0, 1};
  ds.ids = {0, 1};

  SECTION("uniform prediction on 2 classes scores sqrt(1/2)") {
    const ParamVector zeros(param_count(spec), 0.0);
    const ScoreVector sv = proxy_el2n(spec, zeros, ds);
    CHECK(sv.scores[0] == Catch::Approx(std::sqrt(0.5)).epsilon(1e-12));
    CHECK(sv.higher_is_harder);
  }

  SECTION("confident predictions: 0 when right, sqrt(2) when wrong") {
    const ParamVector w = {80.0, 0.0, -80.0, 0.0, 0.0, 0.0};  // class 0 with confidence ~1
    const ScoreVector sv = proxy_el2n(spec, w, ds);
    CHECK(sv.scores[0] == Catch::Approx(0.0).margin(1e-9));
    CHECK(sv.scores[1] == Catch::Approx(std::sqrt(2.0)).margin(1e-9));
  }
}

TEST_CASE("stratified forget sets") {
  SECTION("windows follow the quartile construction") {
    std::vector<double> scores(10000);
    std::iota(scores.begin(), scores.end(), 0.0);
    const ScoreVector sv = make_scores(scores);
    const std::vector<ForgetSplit> splits = stratified_forget_sets(sv, 1000);
    REQUIRE(splits.size() == 5);
    const std::vector<std::pair<int, int>> expect = {
        {0, 1000}, {2000, 3000}, {4500, 5500}, {7000, 8000}, {9000, 10000}};
    for (int s = 0; s < 5; ++s) {
      REQUIRE(splits[s].forget_ids.size() == 1000);
      std::vector<std::int64_t> sorted = splits[s].forget_ids;
      std::sort(sorted.begin(), sorted.end());
      CHECK(sorted.front() == expect[s].first);
      CHECK(sorted.back() == expect[s].second - 1);
      CHECK(splits[s].retain_ids.size() == 9000);
    }
    CHECK(splits[0].label == "bottom");
    CHECK(splits[2].label == "q2");
    CHECK(splits[4].label == "top");

    SECTION("windows are pairwise disjoint and means increase") {
      std::vector<std::int64_t> all;
      double prev_mean = -1.0;
      for (const ForgetSplit& s : splits) {
        all.insert(all.end(), s.forget_ids.begin(), s.forget_ids.end());
        CHECK(s.mean_score > prev_mean);
        prev_mean = s.mean_score;
      }
      std::sort(all.begin(), all.end());
      CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
    }
  }

  SECTION("low-confidence examples land in the top split when flipped") {
    std::vector<double> conf(100);
    for (int i = 0; i < 100; ++i) conf[i] = 1.0 - i * 0.01;  // id 99 least confident
    const ScoreVector sv = make_scores(conf, /*higher_is_harder=*/false);
    const std::vector<ForgetSplit> splits = stratified_forget_sets(sv, 10);
    const std::vector<std::int64_t>& top = splits[4].forget_ids;
    CHECK(std::find(top.begin(), top.end(), 99) != top.end());
    CHECK(std::find(top.begin(), top.end(), 0) == top.end());
  }

  SECTION("overlapping windows are rejected") {
    const ScoreVector sv = make_scores(std::vector<double>(20, 1.0));
    CHECK_THROWS_AS(stratified_forget_sets(sv, 4), std::invalid_argument);
  }
}

TEST_CASE("top-k forget set") {
  SECTION("k = n takes everything") {
    const ScoreVector sv = make_scores({3.0, 1.0, 2.0});
    const ForgetSplit split = top_k_forget_set(sv, 3);
    CHECK(split.forget_ids.size() == 3);
    CHECK(split.retain_ids.empty());
  }

  SECTION("hardest k under each orientation") {
    const ScoreVector harder = make_scores({1.0, 2.0, 3.0, 4.0, 5.0});
    ForgetSplit split = top_k_forget_set(harder, 3);
    std::sort(split.forget_ids.begin(), split.forget_ids.end());
    CHECK(split.forget_ids == std::vector<std::int64_t>{2, 3, 4});

    const ScoreVector easier = make_scores({1.0, 2.0, 3.0, 4.0, 5.0}, false);
    split = top_k_forget_set(easier, 3);
    std::sort(split.forget_ids.begin(), split.forget_ids.end());
    CHECK(split.forget_ids == std::vector<std::int64_t>{0, 1, 2});
  }

  SECTION("ties break by id") {
    const ScoreVector sv = make_scores({1.0, 1.0, 1.0, 1.0});
    ForgetSplit split = top_k_forget_set(sv, 2);
    std::sort(split.forget_ids.begin(), split.forget_ids.end());
    CHECK(split.forget_ids == std::vector<std::int64_t>{2, 3});
  }
}

TEST_CASE("spearman") {
  SECTION("identical and reversed rankings") {
    const std::vector<double> x = {0.1, 0.5, 0.9, 2.0, 7.0};
    std::vector<double> y = x;
    CHECK(spearman(x, y) == Catch::Approx(1.0).epsilon(1e-12));
    for (double& v : y) v = -v;
    CHECK(spearman(x, y) == Catch::Approx(-1.0).epsilon(1e-12));
  }

  SECTION("tie-averaged hand case") {
    // x = (1,2,2,3) -> ranks (1, 2.5, 2.5, 4); y = (1,3,2,4) -> ranks (1,3,2,4).
    // Independent oracle: Pearson of those rank vectors.
    const std::vector<double> rx = {1.0, 2.5, 2.5, 4.0};
    const std::vector<double> ry = {1.0, 3.0, 2.0, 4.0};
    const double oracle = pearson(rx, ry);
    CHECK(spearman({1, 2, 2, 3}, {1, 3, 2, 4}) == Catch::Approx(oracle).epsilon(1e-12));
    CHECK(oracle == Catch::Approx(std::sqrt(0.9)).epsilon(1e-12));
  }

  SECTION("invariant under strictly increasing transforms") {
    Rng rng(4);
    std::vector<double> x(50), y(50);
    for (int i = 0; i < 50; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal();
    }
    const double base = spearman(x, y);
    std::vector<double> xt(50), yt(50);
    for (int i = 0; i < 50; ++i) {
      xt[i] = std::exp(x[i]);
      yt[i] = y[i] * 3.0 + 11.0;
    }
    CHECK(spearman(xt, yt) == Catch::Approx(base).epsilon(1e-12));
  }

  SECTION("zero rank variance is an error") {
    CHECK_THROWS_AS(spearman({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}), std::invalid_argument);
  }

  SECTION("ScoreVector overload aligns by id") {
    ScoreVector a = make_scores({1.0, 2.0, 3.0});
    ScoreVector b;
    b.ids = {2, 0, 1};
    b.scores = {30.0, 10.0, 20.0};
    CHECK(spearman(a, b) == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("bin_means") {
  std::vector<double> x(12), y(12);
  for (int i = 0; i < 12; ++i) {
    x[i] = i;
    y[i] = 2.0 * i;
  }
  const auto bins = bin_means(x, y, 3);
  REQUIRE(bins.size() == 3);
  CHECK(bins[0].first == Catch::Approx(1.5));   // mean of 0..3
  CHECK(bins[0].second == Catch::Approx(3.0));
  CHECK(bins[2].first == Catch::Approx(9.5));
  CHECK(bins[2].second == Catch::Approx(19.0));
}
