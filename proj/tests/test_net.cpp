#include "doctest.h"

#include <cmath>
#include <vector>

#include "mmrl/net.hpp"

using namespace mmrl;

namespace {

// Test-side reference forward pass, written independently of the library
// implementation. Also reports the smallest |pre-activation| seen on hidden
// layers so relu tests can avoid sampling points next to a kink.
Vec reference_forward(const NetSpec& spec, const Vec& params, const Vec& input,
                      double* min_abs_preact = nullptr) {
  const auto views = layer_views(spec);
  Vec act = input;
  double min_z = 1e300;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const auto& v = views[l];
    Vec next(v.out, 0.0);
    for (int o = 0; o < v.out; ++o) {
      double z = params[v.b_off + o];
      for (int i = 0; i < v.in; ++i) {
        z += params[v.w_off + static_cast<std::size_t>(o) * v.in + i] * act[i];
      }
      if (l + 1 < spec.layer_count()) {
        min_z = std::min(min_z, std::fabs(z));
        next[o] = spec.activation == Activation::kRelu ? std::max(z, 0.0)
                                                       : std::tanh(z);
      } else {
        next[o] = z;
      }
    }
    act = next;
  }
  if (min_abs_preact != nullptr) *min_abs_preact = min_z;
  return act;
}

Vec random_input(int n, Rng& rng) {
  Vec x(n);
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace

TEST_CASE("forward: zero parameters give zero output") {
  const NetSpec spec = NetSpec::mlp(3, {4}, 2, Activation::kRelu);
  const Vec params(spec.param_count(), 0.0);
  Rng rng(7);
  const Vec out = forward(spec, params, random_input(3, rng));
  for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("forward: identity-initialized linear layer returns its input") {
  NetSpec spec;
  spec.widths = {3, 3};
  const auto views = layer_views(spec);
  Vec params(spec.param_count(), 0.0);
  for (int i = 0; i < 3; ++i) params[views[0].w_off + i * 3 + i] = 1.0;
  const Vec x = {0.25, -1.5, 3.0};
  const Vec out = forward(spec, params, x);
  for (int i = 0; i < 3; ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("forward: two-layer relu net matches manual matrix arithmetic") {
  // widths 2 -> 2 -> 1, relu hidden. W0 = [[1, 2], [-1, 1]], b0 = [0.5, -0.25],
  // W1 = [[2, 3]], b1 = [1].
  NetSpec spec = NetSpec::mlp(2, {2}, 1, Activation::kRelu);
  Vec params = {1.0, 2.0, -1.0, 1.0, 0.5, -0.25, 2.0, 3.0, 1.0};
  const Vec x = {1.0, -1.0};
  // Hidden pre-activations: [1*1 + 2*(-1) + 0.5, -1*1 + 1*(-1) - 0.25]
  //                       = [-0.5, -2.25] -> relu -> [0, 0].
  // Output: 2*0 + 3*0 + 1 = 1.
  Vec out = forward(spec, params, x);
  CHECK(out.size() == 1);
  CHECK(out[0] == doctest::Approx(1.0));

  const Vec x2 = {1.0, 0.25};
  // Hidden: [1 + 0.5 + 0.5, -1 + 0.25 - 0.25] = [2, -1] -> relu -> [2, 0].
  // Output: 2*2 + 0 + 1 = 5.
  out = forward(spec, params, x2);
  CHECK(out[0] == doctest::Approx(5.0));
  CHECK(out[0] == doctest::Approx(reference_forward(spec, params, x2)[0]));
}

TEST_CASE("forward: deterministic for fixed parameters") {
  const NetSpec spec = NetSpec::mlp(4, {8, 8}, 3, Activation::kTanh);
  Rng rng(11);
  const Vec params = init_params(spec, rng);
  const Vec x = random_input(4, rng);
  const Vec a = forward(spec, params, x);
  const Vec b = forward(spec, params, x);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("forward: dimension mismatch raises a configuration error") {
  const NetSpec spec = NetSpec::mlp(4, {8}, 3, Activation::kRelu);
  Rng rng(1);
  const Vec params = init_params(spec, rng);
  CHECK_THROWS_AS(forward(spec, params, Vec(5, 0.0)), ConfigError);
  CHECK_THROWS_AS(forward(spec, Vec(3, 0.0), Vec(4, 0.0)), ConfigError);
}

TEST_CASE("backward: zero output gradient gives zero gradients") {
  const NetSpec spec = NetSpec::mlp(3, {5}, 2, Activation::kTanh);
  Rng rng(3);
  const Vec params = init_params(spec, rng);
  const Gradients g =
      backward(spec, params, random_input(3, rng), Vec(2, 0.0));
  for (double v : g.param_grad) CHECK(v == 0.0);
  for (double v : g.input_grad) CHECK(v == 0.0);
}

TEST_CASE("backward: pure linear layer input gradient is W^T * output_grad") {
  NetSpec spec;
  spec.widths = {2, 3};
  Rng rng(5);
  const Vec params = init_params(spec, rng);
  const Vec og = {0.5, -1.0, 2.0};
  const Gradients g = backward(spec, params, {0.3, 0.7}, og);
  const auto v = layer_views(spec)[0];
  for (int i = 0; i < 2; ++i) {
    double expect = 0.0;
    for (int o = 0; o < 3; ++o) {
      expect += params[v.w_off + static_cast<std::size_t>(o) * 2 + i] * og[o];
    }
    CHECK(g.input_grad[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("backward: matches central finite differences on random 3-layer nets") {
  int tested = 0;
  for (std::uint64_t seed = 0; tested < 5 && seed < 50; ++seed) {
    const Activation act = seed % 2 == 0 ? Activation::kRelu : Activation::kTanh;
    const NetSpec spec = NetSpec::mlp(3, {6, 5}, 2, act);
    Rng rng(seed * 977 + 13);
    const Vec params = init_params(spec, rng);
    const Vec x = random_input(3, rng);
    double min_z = 0.0;
    reference_forward(spec, params, x, &min_z);
    if (act == Activation::kRelu && min_z < 1e-3) continue;  // kink too close
    const auto report = finite_diff_check(spec, params, x, 1e-4);
    CHECK(report.ok);
    CHECK(report.max_rel_err < 1e-4);
    ++tested;
  }
  CHECK(tested == 5);
}

TEST_CASE("property: gradient exactness over >=20 random nets") {
  int tested = 0;
  for (std::uint64_t seed = 100; tested < 20 && seed < 400; ++seed) {
    Rng shape_rng(seed);
    const Activation act =
        shape_rng.uniform01() < 0.5 ? Activation::kRelu : Activation::kTanh;
    std::vector<int> hidden;
    const int depth = 1 + static_cast<int>(shape_rng.uniform_int(3));
    for (int d = 0; d < depth; ++d) {
      hidden.push_back(2 + static_cast<int>(shape_rng.uniform_int(7)));
    }
    const int in = 1 + static_cast<int>(shape_rng.uniform_int(5));
    const int out = 1 + static_cast<int>(shape_rng.uniform_int(4));
    const NetSpec spec = NetSpec::mlp(in, hidden, out, act);
    Rng rng(seed);
    const Vec params = init_params(spec, rng);
    const Vec x = random_input(in, rng);
    double min_z = 0.0;
    reference_forward(spec, params, x, &min_z);
    if (act == Activation::kRelu && min_z < 1e-3) continue;
    const auto report = finite_diff_check(spec, params, x, 1e-4);
    CHECK(report.max_rel_err < 1e-4);
    ++tested;
  }
  CHECK(tested == 20);
}

TEST_CASE("batched forward and backward agree with per-sample calls") {
  const NetSpec spec = NetSpec::mlp(3, {7}, 4, Activation::kTanh);
  Rng rng(21);
  const Vec params = init_params(spec, rng);
  const int n = 5;
  Vec inputs, out_grads;
  for (int r = 0; r < n; ++r) {
    for (int i = 0; i < 3; ++i) inputs.push_back(rng.uniform(-1, 1));
    for (int o = 0; o < 4; ++o) out_grads.push_back(rng.uniform(-1, 1));
  }
  BatchTrace trace;
  Vec outputs;
  forward_batch(spec, params, inputs, n, outputs, &trace);
  Vec batch_pgrad(spec.param_count(), 0.0);
  Vec batch_igrad;
  backward_batch(spec, params, trace, out_grads, batch_pgrad, &batch_igrad);

  Vec sum_pgrad(spec.param_count(), 0.0);
  for (int r = 0; r < n; ++r) {
    const Vec x(inputs.begin() + r * 3, inputs.begin() + (r + 1) * 3);
    const Vec og(out_grads.begin() + r * 4, out_grads.begin() + (r + 1) * 4);
    const Vec y = forward(spec, params, x);
    for (int o = 0; o < 4; ++o) {
      CHECK(outputs[r * 4 + o] == doctest::Approx(y[o]).epsilon(1e-12));
    }
    const Gradients g = backward(spec, params, x, og);
    for (std::size_t i = 0; i < sum_pgrad.size(); ++i) sum_pgrad[i] += g.param_grad[i];
    for (int i = 0; i < 3; ++i) {
      CHECK(batch_igrad[r * 3 + i] == doctest::Approx(g.input_grad[i]).epsilon(1e-9));
    }
  }
  for (std::size_t i = 0; i < sum_pgrad.size(); ++i) {
    CHECK(batch_pgrad[i] == doctest::Approx(sum_pgrad[i]).epsilon(1e-9));
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Vec params = {1.0, -2.0, 3.0};
  AdamState st = AdamState::make(3, 3e-4);
  adam_step(params, Vec(3, 0.0), st);
  CHECK(params[0] == 1.0);
  CHECK(params[1] == -2.0);
  CHECK(params[2] == 3.0);
  CHECK(st.step == 1);
}

TEST_CASE("adam: moves opposite the sign of a constant gradient") {
  Vec params = {0.0};
  AdamState st = AdamState::make(1, 1e-3);
  for (int i = 0; i < 50; ++i) adam_step(params, {2.5}, st);
  CHECK(params[0] < 0.0);
  Vec params2 = {0.0};
  AdamState st2 = AdamState::make(1, 1e-3);
  for (int i = 0; i < 50; ++i) adam_step(params2, {-2.5}, st2);
  CHECK(params2[0] > 0.0);
}

TEST_CASE("adam: first step matches the hand-evaluated update formulas") {
  AdamState st = AdamState::make(1, 3e-4);
  Vec params = {0.0};
  adam_step(params, {1.0}, st);
  // t=1: m = 0.1, v = 0.001; m_hat = 1, v_hat = 1;
  // delta = -lr * 1 / (1 + eps).
  const double expect = -3e-4 * 1.0 / (1.0 + st.eps);
  CHECK(params[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(std::fabs(params[0] + 3e-4) < 1e-10);
}

TEST_CASE("clip_global_norm") {
  SUBCASE("below the limit is untouched") {
    Vec g = {0.3, 0.4};  // norm 0.5
    clip_global_norm(g, 1.0);
    CHECK(g[0] == 0.3);
    CHECK(g[1] == 0.4);
  }
  SUBCASE("3-4-5 triangle scales to the unit sphere") {
    Vec g = {3.0, 4.0};
    clip_global_norm(g, 1.0);
    CHECK(g[0] == doctest::Approx(0.6));
    CHECK(g[1] == doctest::Approx(0.8));
  }
  SUBCASE("random vectors end within the limit, and clipping is idempotent") {
    Rng rng(31);
    for (int trial = 0; trial < 25; ++trial) {
      Vec g(10);
      for (double& v : g) v = rng.uniform(-4.0, 4.0);
      clip_global_norm(g, 1.0);
      CHECK(l2_norm(g) <= 1.0 + 1e-12);
      const Vec once = g;
      clip_global_norm(g, 1.0);
      for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == once[i]);
    }
  }
}

TEST_CASE("finite_diff_check: three random smooth nets stay under 1e-4") {
  for (std::uint64_t seed : {1001ull, 2002ull, 3003ull}) {
    const NetSpec spec = NetSpec::mlp(4, {10, 10}, 3, Activation::kTanh);
    Rng rng(seed);
    const Vec params = init_params(spec, rng);
    const Vec x = random_input(4, rng);
    const auto report = finite_diff_check(spec, params, x, 1e-4);
    CHECK(report.ok);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("init_params: bounded by sqrt(1/fan_in) per layer") {
  const NetSpec spec = NetSpec::mlp(9, {4}, 2, Activation::kRelu);
  Rng rng(77);
  const Vec params = init_params(spec, rng);
  const auto views = layer_views(spec);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double bound = k < views[1].w_off ? std::sqrt(1.0 / 9) : std::sqrt(1.0 / 4);
    CHECK(std::fabs(params[k]) <= bound);
  }
}
