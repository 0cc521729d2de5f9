#include "dialprobe/gradkernel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dialprobe::gk {

namespace {

// C (+)= A * B with A [m,k], B [k,n].
template <class S>
void gemm_nn(int m, int k, int n, const S* a, const S* b, S* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, S(0));
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<std::size_t>(i) * k;
    S* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      S ap = ai[p];
      const S* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += ap * bp[j];
    }
  }
}

// C (+)= A * B^T with A [m,k], B [n,k].
template <class S>
void gemm_nt(int m, int k, int n, const S* a, const S* b, S* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<std::size_t>(i) * k;
    S* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S* bj = b + static_cast<std::size_t>(j) * k;
      S acc = accumulate ? ci[j] : S(0);
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

// C (+)= A^T * B with A [m,k], B [m,n]; C is [k,n].
template <class S>
void gemm_tn(int m, int k, int n, const S* a, const S* b, S* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(k) * n, S(0));
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<std::size_t>(i) * k;
    const S* bi = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      S ap = ai[p];
      S* cp = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += ap * bi[j];
    }
  }
}

std::string shape_str(int r, int c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

}  // namespace

template <class S>
typename Tape<S>::H Tape<S>::new_slot(int rows, int cols) {
  std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  arena_.emplace_back(n, S(0));
  S* v = arena_.back().data();
  arena_.emplace_back(n, S(0));
  S* g = arena_.back().data();
  slots_.push_back(Slot{rows, cols, v, g, nullptr});
  return static_cast<H>(slots_.size() - 1);
}

template <class S>
void Tape<S>::check(H h, const char* op) const {
  if (h < 0 || static_cast<std::size_t>(h) >= slots_.size())
    throw StateError(std::string(op) + ": invalid tensor handle");
  if (check_finite_) {
    const Slot& s = slots_[static_cast<std::size_t>(h)];
    std::size_t n = static_cast<std::size_t>(s.rows) * s.cols;
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite(static_cast<double>(s.v[i])))
        throw StateError(std::string(op) + ": non-finite value in operand");
  }
}

template <class S>
void Tape<S>::dim_error(const char* op, std::initializer_list<H> hs) const {
  std::ostringstream ss;
  ss << op << ": incompatible shapes";
  for (H h : hs) {
    const Slot& s = slots_[static_cast<std::size_t>(h)];
    ss << " " << shape_str(s.rows, s.cols);
  }
  throw DimensionError(ss.str());
}

template <class S>
typename Tape<S>::H Tape<S>::leaf(Buffer<S>& buf) {
  slots_.push_back(Slot{buf.rows, buf.cols, buf.v.data(), buf.g.data(), &buf});
  return static_cast<H>(slots_.size() - 1);
}

template <class S>
typename Tape<S>::H Tape<S>::constant(int rows, int cols, const S* data) {
  H h = new_slot(rows, cols);
  std::copy(data, data + static_cast<std::size_t>(rows) * cols, slot(h).v);
  return h;
}

template <class S>
typename Tape<S>::H Tape<S>::constant_fill(int rows, int cols, S value) {
  H h = new_slot(rows, cols);
  std::fill(slot(h).v, slot(h).v + static_cast<std::size_t>(rows) * cols, value);
  return h;
}

template <class S>
typename Tape<S>::H Tape<S>::matmul(H a, H b) {
  check(a, "matmul");
  check(b, "matmul");
  Slot sa = slot(a);
  Slot sb = slot(b);
  if (sa.cols != sb.rows) dim_error("matmul", {a, b});
  H out = new_slot(sa.rows, sb.cols);
  gemm_nn(sa.rows, sa.cols, sb.cols, sa.v, sb.v, slot(out).v, false);
  check(out, "matmul");
  push_node([this, a, b, out] {
    Slot& A = slot(a);
    Slot& B = slot(b);
    Slot& O = slot(out);
    gemm_nt(A.rows, B.cols, A.cols, O.g, B.v, A.g, true);  // dA += dC B^T
    gemm_tn(A.rows, A.cols, B.cols, A.v, O.g, B.g, true);  // dB += A^T dC
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::matmul_nt(H a, H b) {
  check(a, "matmul_nt");
  check(b, "matmul_nt");
  Slot sa = slot(a);
  Slot sb = slot(b);
  if (sa.cols != sb.cols) dim_error("matmul_nt", {a, b});
  H out = new_slot(sa.rows, sb.rows);
  gemm_nt(sa.rows, sa.cols, sb.rows, sa.v, sb.v, slot(out).v, false);
  check(out, "matmul_nt");
  push_node([this, a, b, out] {
    Slot& A = slot(a);
    Slot& B = slot(b);
    Slot& O = slot(out);
    gemm_nn(A.rows, O.cols, A.cols, O.g, B.v, A.g, true);  // dA += dC B
    gemm_tn(A.rows, O.cols, A.cols, O.g, A.v, B.g, true);  // dB += dC^T A
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::add(H a, H b) {
  check(a, "add");
  check(b, "add");
  Slot sa = slot(a);
  Slot sb = slot(b);
  if (sa.rows != sb.rows || sa.cols != sb.cols) dim_error("add", {a, b});
  H out = new_slot(sa.rows, sa.cols);
  std::size_t n = static_cast<std::size_t>(sa.rows) * sa.cols;
  for (std::size_t i = 0; i < n; ++i) slot(out).v[i] = sa.v[i] + sb.v[i];
  push_node([this, a, b, out, n] {
    for (std::size_t i = 0; i < n; ++i) {
      slot(a).g[i] += slot(out).g[i];
      slot(b).g[i] += slot(out).g[i];
    }
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::sub(H a, H b) {
  check(a, "sub");
  check(b, "sub");
  Slot sa = slot(a);
  Slot sb = slot(b);
  if (sa.rows != sb.rows || sa.cols != sb.cols) dim_error("sub", {a, b});
  H out = new_slot(sa.rows, sa.cols);
  std::size_t n = static_cast<std::size_t>(sa.rows) * sa.cols;
  for (std::size_t i = 0; i < n; ++i) slot(out).v[i] = sa.v[i] - sb.v[i];
  push_node([this, a, b, out, n] {
    for (std::size_t i = 0; i < n; ++i) {
      slot(a).g[i] += slot(out).g[i];
      slot(b).g[i] -= slot(out).g[i];
    }
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::add_rowvec(H a, H row) {
  check(a, "add_rowvec");
  check(row, "add_rowvec");
  Slot sa = slot(a);
  Slot sr = slot(row);
  if (sr.rows != 1 || sr.cols != sa.cols) dim_error("add_rowvec", {a, row});
  H out = new_slot(sa.rows, sa.cols);
  for (int i = 0; i < sa.rows; ++i)
    for (int j = 0; j < sa.cols; ++j)
      slot(out).v[static_cast<std::size_t>(i) * sa.cols + j] =
          sa.v[static_cast<std::size_t>(i) * sa.cols + j] + sr.v[j];
  push_node([this, a, row, out] {
    Slot& A = slot(a);
    Slot& R = slot(row);
    Slot& O = slot(out);
    std::size_t n = static_cast<std::size_t>(A.rows) * A.cols;
    for (std::size_t i = 0; i < n; ++i) A.g[i] += O.g[i];
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < A.cols; ++j) R.g[j] += O.g[static_cast<std::size_t>(i) * A.cols + j];
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::mul(H a, H b) {
  check(a, "mul");
  check(b, "mul");
  Slot sa = slot(a);
  Slot sb = slot(b);
  if (sa.rows != sb.rows || sa.cols != sb.cols) dim_error("mul", {a, b});
  H out = new_slot(sa.rows, sa.cols);
  std::size_t n = static_cast<std::size_t>(sa.rows) * sa.cols;
  for (std::size_t i = 0; i < n; ++i) slot(out).v[i] = sa.v[i] * sb.v[i];
  push_node([this, a, b, out, n] {
    Slot& A = slot(a);
    Slot& B = slot(b);
    Slot& O = slot(out);
    for (std::size_t i = 0; i < n; ++i) {
      A.g[i] += O.g[i] * B.v[i];
      B.g[i] += O.g[i] * A.v[i];
    }
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::mul_colvec(H a, H col) {
  check(a, "mul_colvec");
  check(col, "mul_colvec");
  Slot sa = slot(a);
  Slot sc = slot(col);
  if (sc.cols != 1 || sc.rows != sa.rows) dim_error("mul_colvec", {a, col});
  H out = new_slot(sa.rows, sa.cols);
  for (int i = 0; i < sa.rows; ++i) {
    S c = sc.v[i];
    for (int j = 0; j < sa.cols; ++j)
      slot(out).v[static_cast<std::size_t>(i) * sa.cols + j] =
          sa.v[static_cast<std::size_t>(i) * sa.cols + j] * c;
  }
  push_node([this, a, col, out] {
    Slot& A = slot(a);
    Slot& C = slot(col);
    Slot& O = slot(out);
    for (int i = 0; i < A.rows; ++i) {
      S c = C.v[i];
      S acc = S(0);
      const std::size_t base = static_cast<std::size_t>(i) * A.cols;
      for (int j = 0; j < A.cols; ++j) {
        A.g[base + j] += O.g[base + j] * c;
        acc += O.g[base + j] * A.v[base + j];
      }
      C.g[i] += acc;
    }
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::scale(H a, S k) {
  check(a, "scale");
  Slot sa = slot(a);
  H out = new_slot(sa.rows, sa.cols);
  std::size_t n = static_cast<std::size_t>(sa.rows) * sa.cols;
  for (std::size_t i = 0; i < n; ++i) slot(out).v[i] = sa.v[i] * k;
  push_node([this, a, out, k, n] {
    for (std::size_t i = 0; i < n; ++i) slot(a).g[i] += slot(out).g[i] * k;
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::sigmoid(H a) {
  check(a, "sigmoid");
  Slot sa = slot(a);
  H out = new_slot(sa.rows, sa.cols);
  std::size_t n = static_cast<std::size_t>(sa.rows) * sa.cols;
  for (std::size_t i = 0; i < n; ++i)
    slot(out).v[i] = S(1) / (S(1) + std::exp(-sa.v[i]));
  check(out, "sigmoid");
  push_node([this, a, out, n] {
    Slot& A = slot(a);
    Slot& O = slot(out);
    for (std::size_t i = 0; i < n; ++i) A.g[i] += O.g[i] * O.v[i] * (S(1) - O.v[i]);
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::tanh(H a) {
  check(a, "tanh");
  Slot sa = slot(a);
  H out = new_slot(sa.rows, sa.cols);
  std::size_t n = static_cast<std::size_t>(sa.rows) * sa.cols;
  for (std::size_t i = 0; i < n; ++i) slot(out).v[i] = std::tanh(sa.v[i]);
  check(out, "tanh");
  push_node([this, a, out, n] {
    Slot& A = slot(a);
    Slot& O = slot(out);
    for (std::size_t i = 0; i < n; ++i) A.g[i] += O.g[i] * (S(1) - O.v[i] * O.v[i]);
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::relu(H a) {
  check(a, "relu");
  Slot sa = slot(a);
  H out = new_slot(sa.rows, sa.cols);
  std::size_t n = static_cast<std::size_t>(sa.rows) * sa.cols;
  for (std::size_t i = 0; i < n; ++i) slot(out).v[i] = sa.v[i] > S(0) ? sa.v[i] : S(0);
  push_node([this, a, out, n] {
    Slot& A = slot(a);
    Slot& O = slot(out);
    for (std::size_t i = 0; i < n; ++i)
      if (O.v[i] > S(0)) A.g[i] += O.g[i];
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::softmax_rows(H a) {
  check(a, "softmax");
  Slot sa = slot(a);
  H out = new_slot(sa.rows, sa.cols);
  for (int i = 0; i < sa.rows; ++i) {
    const S* x = sa.v + static_cast<std::size_t>(i) * sa.cols;
    S* y = slot(out).v + static_cast<std::size_t>(i) * sa.cols;
    S mx = x[0];
    for (int j = 1; j < sa.cols; ++j) mx = std::max(mx, x[j]);
    S sum = S(0);
    for (int j = 0; j < sa.cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < sa.cols; ++j) y[j] /= sum;
  }
  check(out, "softmax");
  push_node([this, a, out] {
    Slot& A = slot(a);
    Slot& O = slot(out);
    for (int i = 0; i < A.rows; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * A.cols;
      S dot = S(0);
      for (int j = 0; j < A.cols; ++j) dot += O.g[base + j] * O.v[base + j];
      for (int j = 0; j < A.cols; ++j)
        A.g[base + j] += O.v[base + j] * (O.g[base + j] - dot);
    }
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::embed(H table, const std::vector<int>& ids) {
  check(table, "embed");
  Slot st = slot(table);
  for (int id : ids)
    if (id < 0 || id >= st.rows)
      throw IndexError("embed: id " + std::to_string(id) + " out of range for table with " +
                       std::to_string(st.rows) + " rows");
  H out = new_slot(static_cast<int>(ids.size()), st.cols);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(st.v + static_cast<std::size_t>(ids[i]) * st.cols,
              st.v + static_cast<std::size_t>(ids[i] + 1) * st.cols,
              slot(out).v + i * static_cast<std::size_t>(st.cols));
  push_node([this, table, out, ids] {
    Slot& T = slot(table);
    Slot& O = slot(out);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      S* tg = T.g + static_cast<std::size_t>(ids[i]) * T.cols;
      const S* og = O.g + i * static_cast<std::size_t>(T.cols);
      for (int j = 0; j < T.cols; ++j) tg[j] += og[j];
    }
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::concat_cols(const std::vector<H>& xs) {
  if (xs.empty()) throw StateError("concat_cols: empty input list");
  int rows = slot(xs[0]).rows;
  int cols = 0;
  for (H x : xs) {
    check(x, "concat_cols");
    if (slot(x).rows != rows) dim_error("concat_cols", {xs[0], x});
    cols += slot(x).cols;
  }
  H out = new_slot(rows, cols);
  int offset = 0;
  for (H x : xs) {
    Slot& sx = slot(x);
    for (int i = 0; i < rows; ++i)
      std::copy(sx.v + static_cast<std::size_t>(i) * sx.cols,
                sx.v + static_cast<std::size_t>(i + 1) * sx.cols,
                slot(out).v + static_cast<std::size_t>(i) * cols + offset);
    offset += sx.cols;
  }
  push_node([this, xs, out, rows, cols] {
    Slot& O = slot(out);
    int off = 0;
    for (H x : xs) {
      Slot& X = slot(x);
      for (int i = 0; i < rows; ++i) {
        const S* og = O.g + static_cast<std::size_t>(i) * cols + off;
        S* xg = X.g + static_cast<std::size_t>(i) * X.cols;
        for (int j = 0; j < X.cols; ++j) xg[j] += og[j];
      }
      off += X.cols;
    }
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::slice_cols(H a, int c0, int c1) {
  check(a, "slice_cols");
  Slot sa = slot(a);
  if (c0 < 0 || c1 > sa.cols || c0 >= c1) dim_error("slice_cols", {a});
  int cols = c1 - c0;
  H out = new_slot(sa.rows, cols);
  for (int i = 0; i < sa.rows; ++i)
    std::copy(sa.v + static_cast<std::size_t>(i) * sa.cols + c0,
              sa.v + static_cast<std::size_t>(i) * sa.cols + c1,
              slot(out).v + static_cast<std::size_t>(i) * cols);
  push_node([this, a, out, c0, cols] {
    Slot& A = slot(a);
    Slot& O = slot(out);
    for (int i = 0; i < A.rows; ++i) {
      S* ag = A.g + static_cast<std::size_t>(i) * A.cols + c0;
      const S* og = O.g + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) ag[j] += og[j];
    }
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::slice_rows(H a, int r0, int r1) {
  check(a, "slice_rows");
  Slot sa = slot(a);
  if (r0 < 0 || r1 > sa.rows || r0 >= r1) dim_error("slice_rows", {a});
  int rows = r1 - r0;
  H out = new_slot(rows, sa.cols);
  std::copy(sa.v + static_cast<std::size_t>(r0) * sa.cols,
            sa.v + static_cast<std::size_t>(r1) * sa.cols, slot(out).v);
  push_node([this, a, out, r0, rows] {
    Slot& A = slot(a);
    Slot& O = slot(out);
    std::size_t n = static_cast<std::size_t>(rows) * A.cols;
    S* ag = A.g + static_cast<std::size_t>(r0) * A.cols;
    for (std::size_t i = 0; i < n; ++i) ag[i] += O.g[i];
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::sum_all(H a) {
  check(a, "sum");
  Slot sa = slot(a);
  H out = new_slot(1, 1);
  std::size_t n = static_cast<std::size_t>(sa.rows) * sa.cols;
  S acc = S(0);
  for (std::size_t i = 0; i < n; ++i) acc += sa.v[i];
  slot(out).v[0] = acc;
  push_node([this, a, out, n] {
    S g = slot(out).g[0];
    for (std::size_t i = 0; i < n; ++i) slot(a).g[i] += g;
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::mean_all(H a) {
  check(a, "mean");
  Slot sa = slot(a);
  H out = new_slot(1, 1);
  std::size_t n = static_cast<std::size_t>(sa.rows) * sa.cols;
  S acc = S(0);
  for (std::size_t i = 0; i < n; ++i) acc += sa.v[i];
  slot(out).v[0] = acc / static_cast<S>(n);
  push_node([this, a, out, n] {
    S g = slot(out).g[0] / static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i) slot(a).g[i] += g;
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::weighted_sum(const std::vector<H>& mats, H weights) {
  if (mats.empty()) throw StateError("weighted_sum: empty input list");
  check(weights, "weighted_sum");
  Slot sw = slot(weights);
  int rows = slot(mats[0]).rows;
  int cols = slot(mats[0]).cols;
  if (sw.rows != rows || sw.cols != static_cast<int>(mats.size()))
    dim_error("weighted_sum", {mats[0], weights});
  for (H m : mats) {
    check(m, "weighted_sum");
    if (slot(m).rows != rows || slot(m).cols != cols) dim_error("weighted_sum", {mats[0], m});
  }
  H out = new_slot(rows, cols);
  for (std::size_t j = 0; j < mats.size(); ++j) {
    Slot& M = slot(mats[j]);
    for (int i = 0; i < rows; ++i) {
      S w = sw.v[static_cast<std::size_t>(i) * sw.cols + j];
      const S* mv = M.v + static_cast<std::size_t>(i) * cols;
      S* ov = slot(out).v + static_cast<std::size_t>(i) * cols;
      for (int jj = 0; jj < cols; ++jj) ov[jj] += w * mv[jj];
    }
  }
  push_node([this, mats, weights, out, rows, cols] {
    Slot& W = slot(weights);
    Slot& O = slot(out);
    for (std::size_t j = 0; j < mats.size(); ++j) {
      Slot& M = slot(mats[j]);
      for (int i = 0; i < rows; ++i) {
        const std::size_t mbase = static_cast<std::size_t>(i) * cols;
        S w = W.v[static_cast<std::size_t>(i) * W.cols + j];
        S dot = S(0);
        for (int jj = 0; jj < cols; ++jj) {
          M.g[mbase + jj] += w * O.g[mbase + jj];
          dot += M.v[mbase + jj] * O.g[mbase + jj];
        }
        W.g[static_cast<std::size_t>(i) * W.cols + j] += dot;
      }
    }
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::layer_norm(H a, H gain, H bias, S eps) {
  check(a, "layer_norm");
  check(gain, "layer_norm");
  check(bias, "layer_norm");
  Slot sa = slot(a);
  Slot sg = slot(gain);
  Slot sb = slot(bias);
  if (sg.rows != 1 || sg.cols != sa.cols || sb.rows != 1 || sb.cols != sa.cols)
    dim_error("layer_norm", {a, gain, bias});
  H out = new_slot(sa.rows, sa.cols);
  std::vector<S> inv_std(static_cast<std::size_t>(sa.rows));
  std::vector<S> mean(static_cast<std::size_t>(sa.rows));
  int n = sa.cols;
  for (int i = 0; i < sa.rows; ++i) {
    const S* x = sa.v + static_cast<std::size_t>(i) * n;
    S mu = S(0);
    for (int j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<S>(n);
    S var = S(0);
    for (int j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<S>(n);
    S is = S(1) / std::sqrt(var + eps);
    mean[static_cast<std::size_t>(i)] = mu;
    inv_std[static_cast<std::size_t>(i)] = is;
    S* y = slot(out).v + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) y[j] = sg.v[j] * (x[j] - mu) * is + sb.v[j];
  }
  check(out, "layer_norm");
  push_node([this, a, gain, bias, out, mean, inv_std, n] {
    Slot& A = slot(a);
    Slot& G = slot(gain);
    Slot& B = slot(bias);
    Slot& O = slot(out);
    for (int i = 0; i < A.rows; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * n;
      S mu = mean[static_cast<std::size_t>(i)];
      S is = inv_std[static_cast<std::size_t>(i)];
      // dxhat = dy * gain; accumulate the two row sums the chain rule needs
      S sum_dxhat = S(0);
      S sum_dxhat_xhat = S(0);
      for (int j = 0; j < n; ++j) {
        S xhat = (A.v[base + j] - mu) * is;
        S dxhat = O.g[base + j] * G.v[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        G.g[j] += O.g[base + j] * xhat;
        B.g[j] += O.g[base + j];
      }
      for (int j = 0; j < n; ++j) {
        S xhat = (A.v[base + j] - mu) * is;
        S dxhat = O.g[base + j] * G.v[j];
        A.g[base + j] +=
            is * (dxhat - sum_dxhat / static_cast<S>(n) - xhat * sum_dxhat_xhat / static_cast<S>(n));
      }
    }
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::cross_entropy(H logits, const std::vector<int>& targets,
                                           int ignore_index) {
  check(logits, "cross_entropy");
  Slot sl = slot(logits);
  if (static_cast<int>(targets.size()) != sl.rows)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(sl.rows, sl.cols));
  for (int t : targets)
    if (t != ignore_index && (t < 0 || t >= sl.cols))
      throw IndexError("cross_entropy: target " + std::to_string(t) +
                       " out of range for vocabulary of " + std::to_string(sl.cols));

  H out = new_slot(1, 1);
  std::vector<S> probs(static_cast<std::size_t>(sl.rows) * sl.cols);
  S loss = S(0);
  for (int i = 0; i < sl.rows; ++i) {
    const S* x = sl.v + static_cast<std::size_t>(i) * sl.cols;
    S* p = probs.data() + static_cast<std::size_t>(i) * sl.cols;
    S mx = x[0];
    for (int j = 1; j < sl.cols; ++j) mx = std::max(mx, x[j]);
    S sum = S(0);
    for (int j = 0; j < sl.cols; ++j) {
      p[j] = std::exp(x[j] - mx);
      sum += p[j];
    }
    for (int j = 0; j < sl.cols; ++j) p[j] /= sum;
    if (targets[static_cast<std::size_t>(i)] == ignore_index) continue;
    S lse = mx + std::log(sum);
    loss += lse - x[targets[static_cast<std::size_t>(i)]];
  }
  slot(out).v[0] = loss;
  check(out, "cross_entropy");
  push_node([this, logits, out, targets, ignore_index, probs = std::move(probs)] {
    Slot& L = slot(logits);
    S g = slot(out).g[0];
    for (int i = 0; i < L.rows; ++i) {
      int t = targets[static_cast<std::size_t>(i)];
      if (t == ignore_index) continue;
      const std::size_t base = static_cast<std::size_t>(i) * L.cols;
      for (int j = 0; j < L.cols; ++j) L.g[base + j] += g * probs[base + j];
      L.g[base + static_cast<std::size_t>(t)] -= g;
    }
  });
  return out;
}

template <class S>
typename Tape<S>::H Tape<S>::bce_logits(H logits, const std::vector<S>& targets) {
  check(logits, "bce_logits");
  Slot sl = slot(logits);
  std::size_t n = static_cast<std::size_t>(sl.rows) * sl.cols;
  if (targets.size() != n)
    throw DimensionError("bce_logits: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(sl.rows, sl.cols));
  H out = new_slot(1, 1);
  S loss = S(0);
  for (std::size_t i = 0; i < n; ++i) {
    S z = sl.v[i];
    // softplus(z) - t*z, computed stably
    loss += std::max(z, S(0)) + std::log1p(std::exp(-std::abs(z))) - targets[i] * z;
  }
  slot(out).v[0] = loss;
  check(out, "bce_logits");
  push_node([this, logits, out, targets, n] {
    Slot& L = slot(logits);
    S g = slot(out).g[0];
    for (std::size_t i = 0; i < n; ++i) {
      S sig = S(1) / (S(1) + std::exp(-L.v[i]));
      L.g[i] += g * (sig - targets[i]);
    }
  });
  return out;
}

template <class S>
S Tape<S>::scalar(H h) const {
  const Slot& s = slot(h);
  if (s.rows != 1 || s.cols != 1)
    throw DimensionError("scalar: tensor is " + shape_str(s.rows, s.cols));
  return s.v[0];
}

template <class S>
std::vector<S> Tape<S>::read(H h) const {
  const Slot& s = slot(h);
  return std::vector<S>(s.v, s.v + static_cast<std::size_t>(s.rows) * s.cols);
}

template <class S>
void Tape<S>::backward(H loss_handle) {
  if (nodes_.empty()) throw StateError("backward: no forward pass recorded on this tape");
  const Slot& ls = slot(loss_handle);
  if (ls.rows != 1 || ls.cols != 1)
    throw DimensionError("backward: loss must be 1x1, got " + shape_str(ls.rows, ls.cols));
  // gradient buffers start from zero on every backward pass
  for (Slot& s : slots_)
    std::fill(s.g, s.g + static_cast<std::size_t>(s.rows) * s.cols, S(0));
  slot(loss_handle).g[0] = S(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

template <class S>
void Tape<S>::reset() {
  slots_.clear();
  arena_.clear();
  nodes_.clear();
}

// --- optimizer --------------------------------------------------------------

template <class S>
void adam_step(Buffer<S>& param, AdamState<S>& state, S lr, S beta1, S beta2, S eps) {
  std::size_t n = param.size();
  if (state.m.size() != n) {
    state.m.assign(n, S(0));
    state.v.assign(n, S(0));
    state.step = 0;
  }
  ++state.step;
  S bc1 = S(1) - std::pow(beta1, static_cast<S>(state.step));
  S bc2 = S(1) - std::pow(beta2, static_cast<S>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    S g = param.g[i];
    state.m[i] = beta1 * state.m[i] + (S(1) - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (S(1) - beta2) * g * g;
    S mhat = state.m[i] / bc1;
    S vhat = state.v[i] / bc2;
    param.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <class S>
double clip_global_norm(std::vector<Buffer<S>*>& params, double max_norm) {
  double sq = 0.0;
  for (Buffer<S>* p : params)
    for (S g : p->g) sq += static_cast<double>(g) * static_cast<double>(g);
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    S k = static_cast<S>(max_norm / norm);
    for (Buffer<S>* p : params)
      for (S& g : p->g) g *= k;
  }
  return norm;
}

// --- initialization -----------------------------------------------------

template <class S>
void init_dense(Buffer<S>& w, int fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
  for (S& x : w.v) x = static_cast<S>(rng.uniform(-bound, bound));
}

template <class S>
void init_embedding(Buffer<S>& w, Rng& rng) {
  for (S& x : w.v) x = static_cast<S>(rng.normal() * 0.1);
}

// --- finite-difference checking ----------------------------------------

GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& grads,
                           const std::vector<std::pair<std::string, Buffer<double>*>>& params,
                           double eps, double tolerance, Rng& rng, std::size_t min_sample) {
  grads();
  // snapshot the analytic gradients before loss() re-runs anything
  std::vector<std::vector<double>> analytic;
  std::size_t total = 0;
  for (const auto& [name, buf] : params) {
    analytic.push_back(buf->g);
    total += buf->size();
  }

  std::vector<std::pair<std::size_t, std::size_t>> picks;  // (param, element)
  if (total <= min_sample) {
    for (std::size_t p = 0; p < params.size(); ++p)
      for (std::size_t i = 0; i < params[p].second->size(); ++i) picks.emplace_back(p, i);
  } else {
    std::vector<std::size_t> offsets(params.size() + 1, 0);
    for (std::size_t p = 0; p < params.size(); ++p)
      offsets[p + 1] = offsets[p] + params[p].second->size();
    for (std::size_t flat : rng.sample_without_replacement(total, min_sample)) {
      std::size_t p = 0;
      while (flat >= offsets[p + 1]) ++p;
      picks.emplace_back(p, flat - offsets[p]);
    }
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  report.checked = picks.size();
  for (const auto& [p, i] : picks) {
    Buffer<double>& buf = *params[p].second;
    double saved = buf.v[i];
    buf.v[i] = saved + eps;
    double up = loss();
    buf.v[i] = saved - eps;
    double down = loss();
    buf.v[i] = saved;
    double numeric = (up - down) / (2.0 * eps);
    double a = analytic[p][i];
    // The denominator floor keeps finite-difference roundoff on near-zero
    // gradients from reading as relative error.
    double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = params[p].first;
      report.worst_index = i;
    }
  }
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

// --- explicit instantiations ----------------------------------------------

template class Tape<float>;
template class Tape<double>;
template void adam_step<float>(Buffer<float>&, AdamState<float>&, float, float, float, float);
template void adam_step<double>(Buffer<double>&, AdamState<double>&, double, double, double,
                                double);
template double clip_global_norm<float>(std::vector<Buffer<float>*>&, double);
template double clip_global_norm<double>(std::vector<Buffer<double>*>&, double);
template void init_dense<float>(Buffer<float>&, int, Rng&);
template void init_dense<double>(Buffer<double>&, int, Rng&);
template void init_embedding<float>(Buffer<float>&, Rng&);
template void init_embedding<double>(Buffer<double>&, Rng&);

}  // namespace dialprobe::gk
