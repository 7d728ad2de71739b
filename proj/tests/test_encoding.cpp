#include <doctest.h>

#include "cordgt/encoding.hpp"
#include "oracles.hpp"

using namespace cordgt;

TEST_CASE("enc(0): sines 0, cosines 1") {
  EncConfig cfg;
  cfg.d = 8;
  const Eigen::VectorXd v = enc(0.0, cfg);
  REQUIRE(v.size() == 16);
  for (int i = 0; i < 8; ++i) {
    CHECK(v[2 * i] == doctest::Approx(0.0));
    CHECK(v[2 * i + 1] == doctest::Approx(1.0));
  }
}

TEST_CASE("enc pairs sit on the unit circle") {
  EncConfig cfg;
  cfg.d = 6;
  for (const double x : {0.01, 0.5, 3.7, 11.0}) {
    const Eigen::VectorXd v = enc(x, cfg);
    for (int i = 0; i < cfg.d; ++i)
      CHECK(v[2 * i] * v[2 * i] + v[2 * i + 1] * v[2 * i + 1] ==
            doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("enc(1) with d=1 hits the amplified angle") {
  EncConfig cfg;
  cfg.d = 1;
  const Eigen::VectorXd v = enc(1.0, cfg);
  // sin(10000), cos(10000) evaluated independently in high precision
  CHECK(v[0] == doctest::Approx(-0.30561438888825215).epsilon(1e-10));
  CHECK(v[1] == doctest::Approx(-0.9521553682590148).epsilon(1e-10));
}

TEST_CASE("enc rejects non-finite input") {
  EncConfig cfg;
  CHECK_THROWS_AS(enc(std::nan(""), cfg), NumericError);
}

TEST_CASE("sentinel stays separable from finite TD values") {
  EncConfig cfg;
  cfg.d = 50;
  TdParams td;  // alpha 1, beta 10 -> sentinel 11
  const Eigen::VectorXd sentinel = enc(td.td_sentinel(), cfg);
  double min_gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1000; ++i) {
    const double finite_td = (td.alpha + td.beta) * i / 1000.0;
    if (finite_td >= td.td_sentinel()) break;
    min_gap = std::min(min_gap, (enc(finite_td, cfg) - sentinel).norm());
  }
  CHECK(min_gap > 0.0);
}

TEST_CASE("stpe_u: width, purity, zero-weight degenerate case") {
  EncConfig cfg;  // paper defaults: d_td = d_sd = 100
  ParamSet<double> params;
  const StpeParams sp = add_stpe_params(params, cfg);
  params.init_values(11);

  Tape<double> t;
  Var a = stpe_u(t, 0.6, 2.0, params, sp, cfg);
  CHECK(t.val(a).rows() == 1);
  CHECK(t.val(a).cols() == 200);  // d_td + d_sd

  Var b = stpe_u(t, 0.6, 2.0, params, sp, cfg);
  CHECK((t.val(a) - t.val(b)).norm() == 0.0);  // purity

  // zero weights: output is the (zero) bias regardless of input
  ParamSet<double> zeros;
  const StpeParams spz = add_stpe_params(zeros, cfg);
  Tape<double> tz;
  Var z1 = stpe_u(tz, 0.1, 1.0, zeros, spz, cfg);
  Var z2 = stpe_u(tz, 9.9, 4.0, zeros, spz, cfg);
  CHECK(tz.val(z1).norm() == 0.0);
  CHECK((tz.val(z1) - tz.val(z2)).norm() == 0.0);
}

TEST_CASE("stpe_u gradients match finite differences") {
  EncConfig cfg;
  cfg.d = 4;
  cfg.d_td = 6;
  cfg.d_sd = 5;
  ParamSet<double> params;
  const StpeParams sp = add_stpe_params(params, cfg);
  params.init_values(23);

  const auto build = [&](Tape<double>& t) {
    Var out = stpe_u_rows(t, params, sp, cfg, {0.37, 1.4}, {1.0, 3.0});
    Rng rng(99);
    Eigen::MatrixXd r(1, 2), c(11, 1);
    for (int i = 0; i < 2; ++i) r(0, i) = rng.uniform(-1, 1);
    for (int i = 0; i < 11; ++i) c(i, 0) = rng.uniform(-1, 1);
    return matmul(t, matmul(t, t.constant(r), out), t.constant(c));
  };
  GradSet<double> grads(params);
  {
    Tape<double> t;
    t.backward(build(t));
    t.for_each_param_grad([&](int pi, const Mat<double>& g) { grads.add(pi, g); });
  }
  std::vector<int> which;
  for (int i = 0; i < static_cast<int>(params.count()); ++i) which.push_back(i);
  const auto eval = [&]() {
    Tape<double> t;
    return t.val(build(t))(0, 0);
  };
  const auto rep = oracles::finite_diff_check(params, grads, eval,
                                              oracles::all_coords(params, which));
  CHECK(rep.max_rel_err <= 1e-3);
}

TEST_CASE("stpe_c: sentinel case analysis for the target itself") {
  EncConfig cfg;
  cfg.d = 3;
  cfg.d_td = 4;
  cfg.d_sd = 4;
  ParamSet<double> params;
  const StpeParams sp = add_stpe_params(params, cfg);
  params.init_values(31);
  TdParams td;
  td.sd_inf = 5;

  ContextualSet ctx_u;
  ctx_u.root = 1;
  ctx_u.t_pred = 50.0;
  ctx_u.tokens = {{1, 50.0, 0, 0, -1, false}, {2, 10.0, 1, 0, 0, false}};
  ContextualSet ctx_v;
  ctx_v.root = 3;
  ctx_v.t_pred = 50.0;
  ctx_v.tokens = {{3, 50.0, 0, 0, -1, false}};  // u absent from C(v)

  InteractionHistory hist;
  std::vector<Event> committed = {{1, 3, 20.0}};  // u-v history: (1, 20)
  hist.commit(committed);

  Tape<double> t;
  const ContextualToken& u_token = ctx_u.tokens[0];
  Var c = stpe_c(t, u_token, ctx_u, ctx_v, hist, params, sp, cfg, td);

  // manual composition: toward u the token is the root (TD=0, SD=0); toward v
  // it has the committed record and is absent from C(v) (SD = sd_inf)
  const double td_v =
      temporal_distance(hist.lookup(1, 3), false, 50.0, td);
  Var manual = add(t, stpe_u(t, 0.0, 0.0, params, sp, cfg),
                   stpe_u(t, td_v, static_cast<double>(td.sd_inf), params, sp,
                          cfg));
  CHECK((t.val(c) - t.val(manual)).norm() == doctest::Approx(0.0));
}

TEST_CASE("stpe_c is symmetric in the target pair") {
  EncConfig cfg;
  cfg.d = 3;
  cfg.d_td = 4;
  cfg.d_sd = 4;
  ParamSet<double> params;
  const StpeParams sp = add_stpe_params(params, cfg);
  params.init_values(37);
  TdParams td;

  ContextualSet ctx_u, ctx_v;
  ctx_u.root = 0;
  ctx_u.t_pred = 30.0;
  ctx_u.tokens = {{0, 30.0, 0, 0, -1, false}, {5, 7.0, 1, 0, 0, false}};
  ctx_v.root = 2;
  ctx_v.t_pred = 30.0;
  ctx_v.tokens = {{2, 30.0, 0, 0, -1, false}, {5, 4.0, 1, 0, 1, false}};
  InteractionHistory hist;
  std::vector<Event> committed = {{5, 0, 3.0}, {5, 2, 11.0}};
  hist.commit(committed);

  const ContextualToken probe = ctx_u.tokens[1];
  Tape<double> t;
  Var ab = stpe_c(t, probe, ctx_u, ctx_v, hist, params, sp, cfg, td);
  Var ba = stpe_c(t, probe, ctx_v, ctx_u, hist, params, sp, cfg, td);
  CHECK((t.val(ab) - t.val(ba)).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("distance-channel ablations shrink the output width") {
  EncConfig cfg;
  ParamSet<double> params;
  const StpeParams sp = add_stpe_params(params, cfg);
  params.init_values(3);
  Tape<double> t;
  Var td_only =
      stpe_u_rows(t, params, sp, cfg, {0.5}, {1.0}, true, false);
  Var sd_only =
      stpe_u_rows(t, params, sp, cfg, {0.5}, {1.0}, false, true);
  CHECK(t.val(td_only).cols() == cfg.d_td);
  CHECK(t.val(sd_only).cols() == cfg.d_sd);
  CHECK_THROWS_AS(stpe_u_rows(t, params, sp, cfg, {0.5}, {1.0}, false, false),
                  NumericError);
}
