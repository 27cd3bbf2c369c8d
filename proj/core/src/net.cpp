#include "mmrl/net.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmrl/parallel.hpp"

namespace mmrl {

namespace {

inline double activate(double z, Activation act) {
  return act == Activation::kRelu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// Derivative expressed through the activation value itself.
inline double activate_grad(double a, Activation act) {
  return act == Activation::kRelu ? (a > 0.0 ? 1.0 : 0.0) : 1.0 - a * a;
}

}  // namespace

std::size_t NetSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    n += static_cast<std::size_t>(widths[l]) * widths[l + 1] + widths[l + 1];
  }
  return n;
}

void NetSpec::validate() const {
  if (widths.size() < 2) {
    throw ConfigError("NetSpec needs at least an input and an output layer");
  }
  for (int w : widths) {
    if (w < 1) throw ConfigError("NetSpec widths must be >= 1");
  }
}

NetSpec NetSpec::mlp(int in, const std::vector<int>& hidden, int out,
                     Activation act) {
  NetSpec spec;
  spec.widths.reserve(hidden.size() + 2);
  spec.widths.push_back(in);
  spec.widths.insert(spec.widths.end(), hidden.begin(), hidden.end());
  spec.widths.push_back(out);
  spec.activation = act;
  spec.validate();
  return spec;
}

std::vector<LayerView> layer_views(const NetSpec& spec) {
  std::vector<LayerView> views;
  views.reserve(spec.layer_count());
  std::size_t off = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    LayerView v;
    v.in = spec.widths[l];
    v.out = spec.widths[l + 1];
    v.w_off = off;
    v.b_off = off + static_cast<std::size_t>(v.in) * v.out;
    off = v.b_off + v.out;
    views.push_back(v);
  }
  return views;
}

Vec init_params(const NetSpec& spec, Rng& rng) {
  spec.validate();
  Vec params(spec.param_count());
  std::size_t off = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    const double bound = std::sqrt(1.0 / in);
    const std::size_t count = static_cast<std::size_t>(in) * out + out;
    for (std::size_t k = 0; k < count; ++k) {
      params[off + k] = rng.uniform(-bound, bound);
    }
    off += count;
  }
  return params;
}

Vec forward(const NetSpec& spec, const Vec& params, const Vec& input) {
  Vec out;
  forward_batch(spec, params, input, 1, out);
  return out;
}

void forward_batch(const NetSpec& spec, const Vec& params, const Vec& inputs,
                   int n, Vec& outputs, BatchTrace* trace) {
  spec.validate();
  if (params.size() != spec.param_count()) {
    throw ConfigError("parameter vector length does not match NetSpec");
  }
  if (inputs.size() != static_cast<std::size_t>(n) * spec.input_dim()) {
    throw ConfigError("input length does not match NetSpec input width");
  }
  const auto views = layer_views(spec);
  const int layers = spec.layer_count();

  if (trace != nullptr) {
    trace->n = n;
    trace->acts.assign(spec.widths.size(), Vec{});
    trace->acts[0] = inputs;
  }

  Vec cur = inputs;
  Vec next;
  for (int l = 0; l < layers; ++l) {
    const LayerView& v = views[l];
    const bool last = (l == layers - 1);
    next.assign(static_cast<std::size_t>(n) * v.out, 0.0);
    const double* W = params.data() + v.w_off;
    const double* b = params.data() + v.b_off;
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t r = lo; r < hi; ++r) {
        const double* x = cur.data() + r * v.in;
        double* y = next.data() + r * v.out;
        for (int o = 0; o < v.out; ++o) {
          const double* w = W + static_cast<std::size_t>(o) * v.in;
          double z = b[o];
          for (int i = 0; i < v.in; ++i) z += w[i] * x[i];
          y[o] = last ? z : activate(z, spec.activation);
        }
      }
    });
    if (trace != nullptr) trace->acts[l + 1] = next;
    cur.swap(next);
  }
  outputs = std::move(cur);
}

Gradients backward(const NetSpec& spec, const Vec& params, const Vec& input,
                   const Vec& output_grad) {
  BatchTrace trace;
  Vec out;
  forward_batch(spec, params, input, 1, out, &trace);
  Gradients g;
  g.param_grad.assign(spec.param_count(), 0.0);
  Vec input_grads;
  input_grads.assign(input.size(), 0.0);
  backward_batch(spec, params, trace, output_grad, g.param_grad, &input_grads);
  g.input_grad = std::move(input_grads);
  return g;
}

void backward_batch(const NetSpec& spec, const Vec& params,
                    const BatchTrace& trace, const Vec& output_grads,
                    Vec& param_grad, Vec* input_grads) {
  spec.validate();
  const int n = trace.n;
  if (output_grads.size() != static_cast<std::size_t>(n) * spec.output_dim()) {
    throw ConfigError("output_grad length does not match NetSpec output width");
  }
  if (param_grad.size() != spec.param_count()) {
    throw ConfigError("param_grad length does not match NetSpec");
  }
  const auto views = layer_views(spec);
  const int layers = spec.layer_count();

  Vec delta = output_grads;
  Vec prev_delta;
  for (int l = layers - 1; l >= 0; --l) {
    const LayerView& v = views[l];
    const Vec& acts_in = trace.acts[l];
    const double* W = params.data() + v.w_off;
    double* Wg = param_grad.data() + v.w_off;
    double* bg = param_grad.data() + v.b_off;

    for (int r = 0; r < n; ++r) {
      const double* x = acts_in.data() + static_cast<std::size_t>(r) * v.in;
      const double* d = delta.data() + static_cast<std::size_t>(r) * v.out;
      for (int o = 0; o < v.out; ++o) {
        const double dv = d[o];
        if (!std::isfinite(dv)) {
          throw NumericError("non-finite gradient at layer " +
                             std::to_string(l));
        }
        double* wrow = Wg + static_cast<std::size_t>(o) * v.in;
        for (int i = 0; i < v.in; ++i) wrow[i] += dv * x[i];
        bg[o] += dv;
      }
    }

    const bool need_input = (l > 0) || (input_grads != nullptr);
    if (!need_input) continue;
    prev_delta.assign(static_cast<std::size_t>(n) * v.in, 0.0);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t r = lo; r < hi; ++r) {
        const double* d = delta.data() + r * v.out;
        double* pd = prev_delta.data() + r * v.in;
        for (int o = 0; o < v.out; ++o) {
          const double dv = d[o];
          const double* w = W + static_cast<std::size_t>(o) * v.in;
          for (int i = 0; i < v.in; ++i) pd[i] += dv * w[i];
        }
        if (l > 0) {
          const double* a = trace.acts[l].data() + r * v.in;
          for (int i = 0; i < v.in; ++i) {
            pd[i] *= activate_grad(a[i], spec.activation);
          }
        }
      }
    });
    if (l == 0) {
      *input_grads = prev_delta;
    }
    delta.swap(prev_delta);
  }
}

AdamState AdamState::make(std::size_t n, double lr) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.lr = lr;
  return s;
}

void adam_step(Vec& params, const Vec& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ConfigError("adam_step length mismatch");
  }
  if (!all_finite(grads)) throw NumericError("non-finite gradient in adam_step");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double mh = state.m[i] / bc1;
    const double vh = state.v[i] / bc2;
    params[i] -= state.lr * mh / (std::sqrt(vh) + state.eps);
  }
}

void clip_global_norm(Vec& grads, double max_norm) {
  if (max_norm <= 0.0) throw ConfigError("clip_global_norm needs max_norm > 0");
  const double norm = l2_norm(grads);
  // The relative slack keeps the operation exactly idempotent: a clipped
  // vector re-measures within one ulp of max_norm and must not rescale again.
  if (norm > max_norm * (1.0 + 1e-12)) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
}

FiniteDiffReport finite_diff_check(const NetSpec& spec, const Vec& params,
                                   const Vec& input, double tolerance,
                                   double step) {
  if (tolerance <= 0.0) throw ConfigError("finite_diff_check tolerance must be > 0");
  const Vec ones(spec.output_dim(), 1.0);
  const Gradients analytic = backward(spec, params, input, ones);

  auto scalar = [&](const Vec& p, const Vec& x) {
    const Vec out = forward(spec, p, x);
    double s = 0.0;
    for (double v : out) s += v;
    return s;
  };
  auto rel_err = [](double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
    return std::fabs(a - b) / denom;
  };

  FiniteDiffReport report;
  Vec p = params;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + step;
    const double hi = scalar(p, input);
    p[i] = keep - step;
    const double lo = scalar(p, input);
    p[i] = keep;
    const double err = rel_err((hi - lo) / (2.0 * step), analytic.param_grad[i]);
    if (err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst_index = i;
      report.worst_is_param = true;
    }
  }
  Vec x = input;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double hi = scalar(params, x);
    x[i] = keep - step;
    const double lo = scalar(params, x);
    x[i] = keep;
    const double err = rel_err((hi - lo) / (2.0 * step), analytic.input_grad[i]);
    if (err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst_index = i;
      report.worst_is_param = false;
    }
  }
  report.ok = report.max_rel_err <= tolerance;
  return report;
}

}  // namespace mmrl
