#pragma once

#include <cstddef>
#include <vector>

#include "mmrl/common.hpp"
#include "mmrl/rng.hpp"

namespace mmrl {

enum class Activation { kRelu, kTanh };

// Fully-connected network shape. Hidden layers apply `activation`; the
// output layer is linear.
struct NetSpec {
  std::vector<int> widths;  // [input, hidden..., output], at least 2 entries
  Activation activation = Activation::kRelu;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  int layer_count() const { return static_cast<int>(widths.size()) - 1; }
  std::size_t param_count() const;
  void validate() const;

  static NetSpec mlp(int in, const std::vector<int>& hidden, int out,
                     Activation act);
};

// Slice of the flat parameter vector owned by one layer: row-major weights
// [out x in] followed by the bias [out].
struct LayerView {
  std::size_t w_off = 0, b_off = 0;
  int in = 0, out = 0;
};
std::vector<LayerView> layer_views(const NetSpec& spec);

// Per-layer uniform init on +-sqrt(1/fan_in).
Vec init_params(const NetSpec& spec, Rng& rng);

Vec forward(const NetSpec& spec, const Vec& params, const Vec& input);

// Activations recorded by a batched forward pass; acts[l] holds n rows of
// width widths[l], acts[0] being the inputs and acts.back() the outputs.
struct BatchTrace {
  int n = 0;
  std::vector<Vec> acts;
};

void forward_batch(const NetSpec& spec, const Vec& params, const Vec& inputs,
                   int n, Vec& outputs, BatchTrace* trace = nullptr);

struct Gradients {
  Vec param_grad;
  Vec input_grad;
};

// Exact gradients of <output, output_grad> with respect to parameters and
// input.
Gradients backward(const NetSpec& spec, const Vec& params, const Vec& input,
                   const Vec& output_grad);

// Accumulates the batch-summed parameter gradient of <outputs, output_grads>
// into param_grad (which must be pre-sized and may carry prior content);
// optionally emits per-row input gradients.
void backward_batch(const NetSpec& spec, const Vec& params,
                    const BatchTrace& trace, const Vec& output_grads,
                    Vec& param_grad, Vec* input_grads = nullptr);

struct AdamState {
  Vec m, v;
  long step = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState make(std::size_t n, double lr);
};

// One Adam update with bias correction, applied in place.
void adam_step(Vec& params, const Vec& grads, AdamState& state);

// Scales grads to max_norm when their global L2 norm exceeds it.
void clip_global_norm(Vec& grads, double max_norm);

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  bool worst_is_param = true;
  bool ok = false;
};

// Compares backward() against central finite differences of the scalar
// sum(output) over every parameter and input coordinate.
FiniteDiffReport finite_diff_check(const NetSpec& spec, const Vec& params,
                                   const Vec& input, double tolerance,
                                   double step = 1e-5);

}  // namespace mmrl
