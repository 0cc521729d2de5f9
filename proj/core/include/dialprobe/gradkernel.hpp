#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "dialprobe/errors.hpp"
#include "dialprobe/rng.hpp"

namespace dialprobe::gk {

// Persistent tensor storage (parameters, optimizer buffers). Row-major.
template <class S>
struct Buffer {
  int rows = 0;
  int cols = 0;
  std::vector<S> v;
  std::vector<S> g;

  Buffer() = default;
  Buffer(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, S(0)),
                         g(static_cast<std::size_t>(r) * c, S(0)) {}
  std::size_t size() const { return v.size(); }
  void zero_grad() { std::fill(g.begin(), g.end(), S(0)); }
};

struct Shape {
  int rows = 0;
  int cols = 0;
};

// Reverse-mode tape over 2-D tensors (a vector is 1xN or Nx1; a scalar 1x1;
// batched sequences are handled as lists of per-step matrices). Ops append
// nodes in execution order; backward() zeroes every gradient buffer, seeds
// d(loss) = 1 and replays the nodes in exact reverse order, accumulating
// gradients across fan-out. A tape belongs to one training step; call reset()
// (or destroy it) before the next.
template <class S>
class Tape {
 public:
  using H = std::int32_t;  // tensor handle

  // check_finite: validate that every op output is finite (checking mode).
  explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf over external storage; backward accumulates into buf.g.
  H leaf(Buffer<S>& buf);
  // Tape-owned leaves.
  H constant(int rows, int cols, const S* data);
  H constant_fill(int rows, int cols, S value);

  H matmul(H a, H b);     // [m,k] x [k,n]
  H matmul_nt(H a, H b);  // [m,k] x [n,k]^T
  H add(H a, H b);
  H sub(H a, H b);
  H add_rowvec(H a, H row);     // broadcast [1,n] over rows
  H mul(H a, H b);              // elementwise
  H mul_colvec(H a, H col);     // broadcast [m,1] over columns
  H scale(H a, S k);
  H sigmoid(H a);
  H tanh(H a);
  H relu(H a);
  H softmax_rows(H a);
  H embed(H table, const std::vector<int>& ids);  // -> [ids.size(), table.cols]
  H concat_cols(const std::vector<H>& xs);
  H slice_cols(H a, int c0, int c1);
  H slice_rows(H a, int r0, int r1);
  H sum_all(H a);   // -> [1,1]
  H mean_all(H a);  // -> [1,1]
  // out[b,:] = sum_j weights[b,j] * mats[j][b,:]; the attention combiner.
  H weighted_sum(const std::vector<H>& mats, H weights);
  // Row-wise layer norm with learned gain/bias ([1,n] each).
  H layer_norm(H a, H gain, H bias, S eps = S(1e-5));
  // Summed categorical negative log-likelihood over rows; rows whose target
  // equals ignore_index contribute nothing. Fused stable log-softmax.
  H cross_entropy(H logits, const std::vector<int>& targets, int ignore_index = -1);
  // Summed element-wise binary cross-entropy on logits against 0/1 targets
  // (stable softplus form).
  H bce_logits(H logits, const std::vector<S>& targets);

  Shape shape(H h) const { return {slot(h).rows, slot(h).cols}; }
  const S* values(H h) const { return slot(h).v; }
  const S* grads(H h) const { return slot(h).g; }
  S scalar(H h) const;
  std::vector<S> read(H h) const;

  void backward(H loss_handle);
  void reset();
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Slot {
    int rows = 0;
    int cols = 0;
    S* v = nullptr;
    S* g = nullptr;
    Buffer<S>* external = nullptr;
  };

  const Slot& slot(H h) const { return slots_[static_cast<std::size_t>(h)]; }
  Slot& slot(H h) { return slots_[static_cast<std::size_t>(h)]; }
  H new_slot(int rows, int cols);
  void push_node(std::function<void()> back) { nodes_.push_back(std::move(back)); }
  void check(H h, const char* op) const;
  [[noreturn]] void dim_error(const char* op, std::initializer_list<H> hs) const;

  std::vector<Slot> slots_;
  std::deque<std::vector<S>> arena_;  // owned value/grad storage, pointer-stable
  std::vector<std::function<void()>> nodes_;
  bool check_finite_ = false;
  bool ran_forward_ = false;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

// --- optimizer ------------------------------------------------------------

// Bias-corrected Adam state for one parameter buffer.
template <class S>
struct AdamState {
  std::vector<S> m;
  std::vector<S> v;
  std::int64_t step = 0;
};

template <class S>
void adam_step(Buffer<S>& param, AdamState<S>& state, S lr, S beta1 = S(0.9),
               S beta2 = S(0.999), S eps = S(1e-8));

// Optional global-norm gradient clip across a parameter group; returns the
// pre-clip norm. max_norm <= 0 disables.
template <class S>
double clip_global_norm(std::vector<Buffer<S>*>& params, double max_norm);

// --- initialization -------------------------------------------------------

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
template <class S>
void init_dense(Buffer<S>& w, int fan_in, Rng& rng);
// normal(0, 0.1)
template <class S>
void init_embedding(Buffer<S>& w, Rng& rng);

// --- finite-difference checking --------------------------------------------

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central finite differences against analytic gradients on a random
// subsample of at least min_sample elements (all of them if fewer exist).
// `loss` recomputes the objective from current parameter values; `grads`
// runs forward+backward, leaving analytic gradients in the buffers.
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& grads,
                           const std::vector<std::pair<std::string, Buffer<double>*>>& params,
                           double eps, double tolerance, Rng& rng,
                           std::size_t min_sample = 200);

}  // namespace dialprobe::gk
