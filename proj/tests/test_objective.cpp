#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cablevae/error.hpp"
#include "cablevae/objective.hpp"
#include "cablevae/rng.hpp"

using namespace cablevae;
using namespace cablevae::objective;
using autodiff::Graph;
using autodiff::NodeId;

namespace {

constexpr double kTol = 1e-9;

Tensor col(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::matrix(n, 1, std::move(v));
}

// Independent oracle: direct evaluation of the closed forms.
double oracle_nll(const std::vector<double>& x, const std::vector<double>& xhat, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += 0.5 * std::log(2.0 * std::numbers::pi) + 0.5 * (x[i] - xhat[i]) * (x[i] - xhat[i]);
  }
  return s / double(n);
}

}  // namespace

TEST_SUITE("objective") {
  TEST_CASE("continuous_nll examples") {
    CHECK(std::abs(continuous_nll(col({0.3}), col({0.3})) - 0.918938533) < kTol);
    CHECK(std::abs(continuous_nll(col({0.0}), col({1.0})) - 1.418938533) < kTol);
    CHECK(std::abs(continuous_nll(col({0.0, 0.0}), col({1.0, 2.0})) - 2.168938533) < kTol);
    CHECK_THROWS_AS(continuous_nll(col({0.0, 1.0}), col({1.0})), ShapeError);
  }

  TEST_CASE("categorical_ce examples") {
    CHECK(std::abs(categorical_ce({{2}}, {Tensor({1, 4})}) - std::log(4.0)) < kTol);
    CHECK(std::abs(categorical_ce({{2}}, {Tensor({1, 4})}) - 1.386294361) < kTol);
    CHECK(categorical_ce({{1}}, {Tensor::matrix(1, 3, {-800.0, 800.0, -800.0})}) == 0.0);
    CHECK(std::abs(categorical_ce({{0}, {3}}, {Tensor({1, 2}), Tensor({1, 5})}) - 2.302585093) < kTol);
    CHECK_THROWS(categorical_ce({{4}}, {Tensor({1, 4})}));
  }

  TEST_CASE("kl_divergence examples") {
    CHECK(kl_divergence(Tensor({1, 1}), Tensor({1, 1})) == 0.0);
    CHECK(std::abs(kl_divergence(col({1.0}), col({0.0})) - 0.5) < kTol);
    CHECK(std::abs(kl_divergence(col({0.0}), col({std::log(4.0)})) - 0.806852819) < kTol);
  }

  TEST_CASE("total_loss examples") {
    const LossWeights table{0.07127, 0.0275};
    CHECK(std::abs(combine(table, 2.0, 1.0, 0.5) - 1.085020) < kTol);
    CHECK(combine({1.0, 0.3}, 2.0, 5.0, 4.0) == doctest::Approx(2.0 + 1.2).epsilon(1e-15));

    const Tensor x = col({0.5, -1.0});
    const Tensor xhat = col({0.0, 1.0});
    const std::vector<std::vector<std::size_t>> cats{{0, 1}};
    const std::vector<Tensor> logits{Tensor::matrix(2, 2, {0.3, -0.2, 1.0, 2.0})};
    const LossBreakdown a = total_loss({0.4, 0.0}, x, cats, xhat, logits, col({0.0, 0.0}), col({0.0, 0.0}));
    const LossBreakdown b = total_loss({0.4, 0.0}, x, cats, xhat, logits, col({3.0, -1.0}), col({1.0, -2.0}));
    CHECK(a.total == b.total);
    CHECK(b.kl > 0.0);
  }

  TEST_CASE("weights are validated") {
    CHECK_THROWS_AS(LossWeights({1.5, 0.0}).validate(), ConfigError);
    CHECK_THROWS_AS(LossWeights({0.5, -1.0}).validate(), ConfigError);
    CHECK_THROWS_AS(LossWeights({0.5, std::nan("")}).validate(), ConfigError);
    CHECK_NOTHROW(LossWeights({0.0, 0.0}).validate());
  }

  TEST_CASE("plain and graph routes agree with an independent oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 1 + rng.index(6);
      Tensor x({n, 2}), xhat({n, 2}), mu({n, 3}), logvar({n, 3});
      Tensor l1({n, 3}), l2({n, 4});
      Tensor t1({n}), t2({n});
      std::vector<std::vector<std::size_t>> cats(2, std::vector<std::size_t>(n));
      for (auto* t : {&x, &xhat, &mu, &logvar, &l1, &l2}) {
        for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = rng.normal();
      }
      for (std::size_t i = 0; i < n; ++i) {
        cats[0][i] = rng.index(3);
        cats[1][i] = rng.index(4);
        t1[i] = double(cats[0][i]);
        t2[i] = double(cats[1][i]);
      }
      const LossWeights w{rng.uniform(), rng.uniform()};
      const LossBreakdown plain = total_loss(w, x, cats, xhat, {l1, l2}, mu, logvar);

      std::vector<double> xv(x.values().begin(), x.values().end());
      std::vector<double> hv(xhat.values().begin(), xhat.values().end());
      CHECK(std::abs(plain.cont - oracle_nll(xv, hv, n)) < kTol);
      double kl = 0.0;
      for (std::size_t i = 0; i < mu.size(); ++i) kl += 0.5 * (mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i]);
      CHECK(std::abs(plain.kl - kl / double(n)) < kTol);

      Graph g;
      NodeId gx = g.input("x"), gh = g.input("xhat"), gmu = g.input("mu"), glv = g.input("logvar");
      NodeId gl1 = g.input("l1"), gl2 = g.input("l2"), gt1 = g.input("t1"), gt2 = g.input("t2");
      NodeId cont = add_continuous_nll(g, gx, gh);
      NodeId cat = add_categorical_ce(g, {{gl1, gt1}, {gl2, gt2}});
      NodeId kln = add_kl_divergence(g, gmu, glv);
      NodeId total = add_total(g, w, cont, cat, kln);
      autodiff::Bindings in{{"x", x}, {"xhat", xhat}, {"mu", mu}, {"logvar", logvar},
                            {"l1", l1}, {"l2", l2}, {"t1", t1}, {"t2", t2}};
      CHECK(autodiff::evaluate(g, {}, in, cont).item() == plain.cont);
      CHECK(autodiff::evaluate(g, {}, in, cat).item() == plain.cat);
      CHECK(autodiff::evaluate(g, {}, in, kln).item() == plain.kl);
      CHECK(autodiff::evaluate(g, {}, in, total).item() == plain.total);
    }
  }

  TEST_CASE("kl is non-negative over 1000 random draws") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
      const Tensor mu = col({rng.normal(0.0, 3.0), rng.normal(0.0, 3.0)});
      const Tensor lv = col({rng.normal(0.0, 3.0), rng.normal(0.0, 3.0)});
      CHECK(kl_divergence(mu, lv) >= 0.0);
    }
  }

  TEST_CASE("continuous_nll gradient vanishes at predictions equal to targets") {
    Graph g;
    NodeId t = g.input("t");
    NodeId p = g.parameter("p", {3, 2});
    NodeId loss = add_continuous_nll(g, t, p);
    const Tensor target = Tensor::matrix(3, 2, {0.1, -2.0, 3.5, 0.0, 1.0, -0.7});
    auto at_min = autodiff::gradients(g, {{"p", target}}, {{"t", target}}, loss);
    for (double v : at_min.gradients.at("p").values()) CHECK(v == 0.0);
    Tensor off = target;
    off[2] += 0.5;
    auto away = autodiff::gradients(g, {{"p", off}}, {{"t", target}}, loss);
    CHECK(away.gradients.at("p")[2] == doctest::Approx(0.5 / 3.0));
    CHECK(away.value > at_min.value);
  }

  TEST_CASE("categorical_ce decreases as the target logit grows") {
    Rng rng(2);
    Tensor logits = Tensor::matrix(1, 4, {0.2, -0.3, 0.9, 0.1});
    double previous = categorical_ce({{1}}, {logits});
    for (int step = 0; step < 50; ++step) {
      logits[1] += 0.25;
      const double now = categorical_ce({{1}}, {logits});
      CHECK(now < previous);
      previous = now;
    }
  }

  TEST_CASE("total is affine in each component") {
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
      const LossWeights w{rng.uniform(), 2.0 * rng.uniform()};
      const double c = rng.normal(), k = rng.normal(), l = rng.uniform();
      const double base = combine(w, c, k, l);
      CHECK(combine(w, c + 1.0, k, l) - base == doctest::Approx(w.alpha).epsilon(1e-9));
      CHECK(combine(w, c, k + 1.0, l) - base == doctest::Approx(1.0 - w.alpha).epsilon(1e-9));
      CHECK(combine(w, c, k, l + 1.0) - base == doctest::Approx(w.beta).epsilon(1e-9));
    }
  }
}
