#include "dialprobe/probeclf.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "dialprobe/errors.hpp"
#include "dialprobe/io.hpp"

namespace dialprobe {

const char* classifier_kind_name(ClassifierKind kind) {
  return kind == ClassifierKind::LogReg ? "logreg" : "mlp";
}

// --- dataset assembly ---------------------------------------------------

namespace {

std::map<std::pair<std::string, int>, const RepresentationRecord*> index_cache(
    const ReprCache& cache) {
  std::map<std::pair<std::string, int>, const RepresentationRecord*> index;
  for (const auto& rec : cache.records) index[{rec.dialogue_id, rec.turn_index}] = &rec;
  return index;
}

}  // namespace

ProbeDataset build_probe_dataset(ProbeTask task, const ReprCache& train_cache,
                                 const std::vector<ProbeLabelRecord>& train_records,
                                 const ReprCache& valid_cache,
                                 const std::vector<ProbeLabelRecord>& valid_records,
                                 const LabelSpace& space) {
  ProbeDataset ds;
  ds.task = task;
  ds.kind = task_kind(task);
  ds.feature_dim = train_cache.dim;
  ds.num_classes = space.size();
  if (valid_cache.dim != train_cache.dim)
    throw IntegrityError("train/valid representation caches disagree on dimension");

  auto fill = [&](const ReprCache& cache, const std::vector<ProbeLabelRecord>& records,
                  std::vector<float>& features, std::vector<int>& labels,
                  std::vector<std::vector<int>>& sets, int& count, bool is_valid) {
    auto index = index_cache(cache);
    for (const auto& rec : records) {
      if (rec.task != task) continue;
      auto it = index.find({rec.dialogue_id, rec.turn_index});
      if (it == index.end()) continue;  // no representation for this context
      if (ds.kind == TaskKind::LabelSet) {
        int to_other = 0;
        int dropped = 0;
        auto mapped = space.map_set(rec.label.labels, &to_other, &dropped);
        if (is_valid) {
          ds.valid_unseen_to_other += to_other;
          ds.valid_unseen_dropped += dropped;
        }
        sets.push_back(std::move(mapped));
      } else {
        std::string name = ds.kind == TaskKind::Count ? std::to_string(rec.label.count)
                                                      : rec.label.categorical;
        auto idx = space.map_categorical(name);
        if (!idx) {
          if (is_valid) ++ds.valid_unseen_dropped;
          continue;
        }
        if (is_valid && !space.index_of(name)) ++ds.valid_unseen_to_other;
        labels.push_back(*idx);
      }
      features.insert(features.end(), it->second->vec.begin(), it->second->vec.end());
      ++count;
    }
  };

  fill(train_cache, train_records, ds.train_features, ds.train_labels, ds.train_sets, ds.n_train,
       false);
  fill(valid_cache, valid_records, ds.valid_features, ds.valid_labels, ds.valid_sets, ds.n_valid,
       true);
  return ds;
}

// --- L-BFGS minimizer ---------------------------------------------------

namespace {

using ObjectiveFn = std::function<double(const std::vector<double>&, std::vector<double>&)>;

struct MinimizeResult {
  int iterations = 0;
  double objective = 0.0;
  double grad_inf_norm = 0.0;
};

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Limited-memory BFGS with Armijo backtracking; every accepted step strictly
// decreases the objective.
MinimizeResult lbfgs_minimize(const ObjectiveFn& fn, std::vector<double>& x, int max_iter,
                              double tol, int memory = 10) {
  const double c1 = 1e-4;
  std::size_t n = x.size();
  std::vector<double> grad(n), new_grad(n);
  double f = fn(x, grad);
  std::vector<std::vector<double>> s_hist, y_hist;
  std::vector<double> rho_hist;

  MinimizeResult result{0, f, inf_norm(grad)};
  for (int iter = 0; iter < max_iter; ++iter) {
    if (result.grad_inf_norm <= tol) break;

    // two-loop recursion
    std::vector<double> d(grad);
    std::vector<double> alpha(s_hist.size());
    for (std::size_t i = s_hist.size(); i-- > 0;) {
      alpha[i] = rho_hist[i] * dot(s_hist[i], d);
      for (std::size_t j = 0; j < n; ++j) d[j] -= alpha[i] * y_hist[i][j];
    }
    if (!s_hist.empty()) {
      double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
      for (double& v : d) v *= gamma;
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      double beta = rho_hist[i] * dot(y_hist[i], d);
      for (std::size_t j = 0; j < n; ++j) d[j] += (alpha[i] - beta) * s_hist[i][j];
    }
    for (double& v : d) v = -v;

    double slope = dot(grad, d);
    if (slope >= 0) {  // not a descent direction; restart from steepest descent
      for (std::size_t j = 0; j < n; ++j) d[j] = -grad[j];
      slope = -dot(grad, grad);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    double step = s_hist.empty() ? std::min(1.0, 1.0 / std::max(1.0, inf_norm(grad))) : 1.0;
    std::vector<double> x_new(n);
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      for (std::size_t j = 0; j < n; ++j) x_new[j] = x[j] + step * d[j];
      f_new = fn(x_new, new_grad);
      if (std::isfinite(f_new) && f_new <= f + c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no further progress possible at machine precision

    std::vector<double> s(n), y(n);
    for (std::size_t j = 0; j < n; ++j) {
      s[j] = x_new[j] - x[j];
      y[j] = new_grad[j] - grad[j];
    }
    double sy = dot(s, y);
    if (sy > 1e-12) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }
    x = std::move(x_new);
    x_new.assign(n, 0.0);
    grad = new_grad;
    f = f_new;
    result.iterations = iter + 1;
    result.objective = f;
    result.grad_inf_norm = inf_norm(grad);
  }
  return result;
}

// Sum-NLL multinomial softmax objective with (1/(2C)) ||W||^2, bias free.
// x layout: W (classes x dim) row-major, then bias (classes).
ObjectiveFn multinomial_objective(const std::vector<float>& features, const std::vector<int>& labels,
                                  int n, int dim, int classes, double c_reg) {
  return [=, &features, &labels](const std::vector<double>& x, std::vector<double>& grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const double* w = x.data();
    const double* b = x.data() + static_cast<std::size_t>(classes) * dim;
    double* gw = grad.data();
    double* gb = grad.data() + static_cast<std::size_t>(classes) * dim;

    double nll = 0.0;
    std::vector<double> z(static_cast<std::size_t>(classes));
    for (int i = 0; i < n; ++i) {
      const float* xi = features.data() + static_cast<std::size_t>(i) * dim;
      for (int c = 0; c < classes; ++c) {
        const double* wc = w + static_cast<std::size_t>(c) * dim;
        double acc = b[c];
        for (int d = 0; d < dim; ++d) acc += wc[d] * xi[d];
        z[static_cast<std::size_t>(c)] = acc;
      }
      double mx = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
      }
      int y = labels[static_cast<std::size_t>(i)];
      nll += mx + std::log(sum) - std::log(z[static_cast<std::size_t>(y)] ) - mx;
      for (int c = 0; c < classes; ++c) {
        double p = z[static_cast<std::size_t>(c)] / sum;
        double delta = p - (c == y ? 1.0 : 0.0);
        gb[c] += delta;
        double* gwc = gw + static_cast<std::size_t>(c) * dim;
        for (int d = 0; d < dim; ++d) gwc[d] += delta * xi[d];
      }
    }
    double reg = 0.0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(classes) * dim; ++i) {
      reg += x[i] * x[i];
      grad[i] += x[i] / c_reg;
    }
    return nll + 0.5 * reg / c_reg;
  };
}

// Binary logistic objective for one one-vs-rest label. x = w (dim), bias.
ObjectiveFn binary_objective(const std::vector<float>& features, const std::vector<char>& positive,
                             int n, int dim, double c_reg) {
  return [=, &features, &positive](const std::vector<double>& x, std::vector<double>& grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const double* w = x.data();
    double b = x[static_cast<std::size_t>(dim)];
    double nll = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* xi = features.data() + static_cast<std::size_t>(i) * dim;
      double z = b;
      for (int d = 0; d < dim; ++d) z += w[d] * xi[d];
      double t = positive[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      nll += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - t * z;
      double delta = 1.0 / (1.0 + std::exp(-z)) - t;
      grad[static_cast<std::size_t>(dim)] += delta;
      for (int d = 0; d < dim; ++d) grad[static_cast<std::size_t>(d)] += delta * xi[d];
    }
    double reg = 0.0;
    for (int d = 0; d < dim; ++d) {
      reg += x[static_cast<std::size_t>(d)] * x[static_cast<std::size_t>(d)];
      grad[static_cast<std::size_t>(d)] += x[static_cast<std::size_t>(d)] / c_reg;
    }
    return nll + 0.5 * reg / c_reg;
  };
}

}  // namespace

ProbeClassifier train_logreg(const ProbeDataset& dataset, const LogRegOptions& options) {
  ProbeClassifier clf;
  clf.kind = ClassifierKind::LogReg;
  clf.task_kind = dataset.kind;
  clf.feature_dim = dataset.feature_dim;
  clf.num_classes = dataset.num_classes;
  if (dataset.n_train == 0) throw StateError("train_logreg: empty training split");

  int dim = dataset.feature_dim;
  int classes = dataset.num_classes;

  if (dataset.kind != TaskKind::LabelSet) {
    std::set<int> distinct(dataset.train_labels.begin(), dataset.train_labels.end());
    if (distinct.size() < 2) {
      clf.degenerate = true;
      clf.constant_class = *distinct.begin();
      clf.linear.assign(static_cast<std::size_t>(classes) * dim + classes, 0.0);
      return clf;
    }
    std::vector<double> x(static_cast<std::size_t>(classes) * dim + classes, 0.0);
    auto result = lbfgs_minimize(
        multinomial_objective(dataset.train_features, dataset.train_labels, dataset.n_train, dim,
                              classes, options.c),
        x, options.max_iter, options.tol);
    clf.linear = std::move(x);
    clf.iterations = result.iterations;
    clf.final_objective = result.objective;
    clf.final_grad_norm = result.grad_inf_norm;
    return clf;
  }

  // one-vs-rest binary regressions, 0.5 decision threshold
  clf.linear.assign(static_cast<std::size_t>(classes) * (dim + 1), 0.0);
  int total_iters = 0;
  double worst_grad = 0.0;
  double obj_sum = 0.0;
  for (int label = 0; label < classes; ++label) {
    std::vector<char> positive(static_cast<std::size_t>(dataset.n_train), 0);
    int positives = 0;
    for (int i = 0; i < dataset.n_train; ++i) {
      bool in = std::binary_search(dataset.train_sets[static_cast<std::size_t>(i)].begin(),
                                   dataset.train_sets[static_cast<std::size_t>(i)].end(), label);
      positive[static_cast<std::size_t>(i)] = in ? 1 : 0;
      positives += in ? 1 : 0;
    }
    double* out = clf.linear.data() + static_cast<std::size_t>(label) * (dim + 1);
    if (positives == 0 || positives == dataset.n_train) {
      // constant decision for a label with no contrast in the training split
      out[dim] = positives == 0 ? -30.0 : 30.0;
      continue;
    }
    std::vector<double> x(static_cast<std::size_t>(dim) + 1, 0.0);
    auto result = lbfgs_minimize(
        binary_objective(dataset.train_features, positive, dataset.n_train, dim, options.c), x,
        options.max_iter, options.tol);
    std::copy(x.begin(), x.end(), out);
    total_iters = std::max(total_iters, result.iterations);
    worst_grad = std::max(worst_grad, result.grad_inf_norm);
    obj_sum += result.objective;
  }
  clf.iterations = total_iters;
  clf.final_grad_norm = worst_grad;
  clf.final_objective = obj_sum;
  return clf;
}

// --- MLP ----------------------------------------------------------------

ProbeClassifier train_mlp(const ProbeDataset& dataset, const MlpOptions& options) {
  if (options.hidden <= 0) throw ConfigError("mlp hidden units must be positive");
  ProbeClassifier clf;
  clf.kind = ClassifierKind::Mlp;
  clf.task_kind = dataset.kind;
  clf.feature_dim = dataset.feature_dim;
  clf.num_classes = dataset.num_classes;
  clf.hidden = options.hidden;
  if (dataset.n_train == 0) throw StateError("train_mlp: empty training split");

  bool multilabel = dataset.kind == TaskKind::LabelSet;
  if (!multilabel) {
    std::set<int> distinct(dataset.train_labels.begin(), dataset.train_labels.end());
    if (distinct.size() < 2) {
      clf.degenerate = true;
      clf.constant_class = *distinct.begin();
      return clf;
    }
  }

  int dim = dataset.feature_dim;
  int classes = dataset.num_classes;
  int hidden = options.hidden;

  gk::Buffer<float> w1(dim, hidden), b1(1, hidden), w2(hidden, classes), b2(1, classes);
  Rng rng(options.seed);
  gk::init_dense(w1, dim, rng);
  gk::init_dense(w2, hidden, rng);
  std::vector<gk::Buffer<float>*> params = {&w1, &b1, &w2, &b2};
  std::vector<gk::AdamState<float>> adam(params.size());

  std::vector<std::size_t> order(static_cast<std::size_t>(dataset.n_train));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= options.max_iter; ++epoch) {
    Rng shuffle_rng = Rng::for_stream(options.seed, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(options.batch_size)) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      int b = static_cast<int>(end - start);
      std::vector<float> xbuf(static_cast<std::size_t>(b) * dim);
      std::vector<int> ybuf;
      std::vector<float> ysets;
      for (std::size_t i = start; i < end; ++i) {
        const float* src = dataset.train_features.data() + order[i] * static_cast<std::size_t>(dim);
        std::copy(src, src + dim, xbuf.begin() + (i - start) * static_cast<std::size_t>(dim));
        if (multilabel) {
          std::vector<float> row(static_cast<std::size_t>(classes), 0.0f);
          for (int label : dataset.train_sets[order[i]]) row[static_cast<std::size_t>(label)] = 1.0f;
          ysets.insert(ysets.end(), row.begin(), row.end());
        } else {
          ybuf.push_back(dataset.train_labels[order[i]]);
        }
      }
      gk::TapeF tape;
      auto x = tape.constant(b, dim, xbuf.data());
      auto h = tape.relu(tape.add_rowvec(tape.matmul(x, tape.leaf(w1)), tape.leaf(b1)));
      auto logits = tape.add_rowvec(tape.matmul(h, tape.leaf(w2)), tape.leaf(b2));
      auto loss = multilabel ? tape.bce_logits(logits, ysets) : tape.cross_entropy(logits, ybuf);
      tape.backward(loss);
      for (std::size_t p = 0; p < params.size(); ++p)
        gk::adam_step(*params[p], adam[p], static_cast<float>(options.learning_rate));
    }
  }
  clf.iterations = options.max_iter;
  clf.mlp.reserve(w1.size() + b1.size() + w2.size() + b2.size());
  for (auto* p : params) clf.mlp.insert(clf.mlp.end(), p->v.begin(), p->v.end());
  return clf;
}

// --- prediction -----------------------------------------------------------

namespace {

// Raw per-class scores for one feature row.
void classifier_scores(const ProbeClassifier& clf, const float* xi, std::vector<double>& z) {
  int dim = clf.feature_dim;
  int classes = clf.num_classes;
  z.assign(static_cast<std::size_t>(classes), 0.0);
  if (clf.kind == ClassifierKind::LogReg) {
    if (clf.task_kind == TaskKind::LabelSet) {
      for (int c = 0; c < classes; ++c) {
        const double* w = clf.linear.data() + static_cast<std::size_t>(c) * (dim + 1);
        double acc = w[dim];
        for (int d = 0; d < dim; ++d) acc += w[d] * xi[d];
        z[static_cast<std::size_t>(c)] = acc;
      }
    } else {
      const double* w = clf.linear.data();
      const double* b = clf.linear.data() + static_cast<std::size_t>(classes) * dim;
      for (int c = 0; c < classes; ++c) {
        double acc = b[c];
        const double* wc = w + static_cast<std::size_t>(c) * dim;
        for (int d = 0; d < dim; ++d) acc += wc[d] * xi[d];
        z[static_cast<std::size_t>(c)] = acc;
      }
    }
    return;
  }
  // mlp
  int hidden = clf.hidden;
  const float* w1 = clf.mlp.data();
  const float* b1 = w1 + static_cast<std::size_t>(dim) * hidden;
  const float* w2 = b1 + hidden;
  const float* b2 = w2 + static_cast<std::size_t>(hidden) * classes;
  std::vector<double> h(static_cast<std::size_t>(hidden));
  for (int j = 0; j < hidden; ++j) {
    double acc = b1[j];
    for (int d = 0; d < dim; ++d) acc += w1[static_cast<std::size_t>(d) * hidden + j] * xi[d];
    h[static_cast<std::size_t>(j)] = acc > 0 ? acc : 0.0;
  }
  for (int c = 0; c < classes; ++c) {
    double acc = b2[c];
    for (int j = 0; j < hidden; ++j) acc += w2[static_cast<std::size_t>(j) * classes + c] * h[static_cast<std::size_t>(j)];
    z[static_cast<std::size_t>(c)] = acc;
  }
}

}  // namespace

std::vector<int> ProbeClassifier::predict_single(const std::vector<float>& features, int n) const {
  std::vector<int> out(static_cast<std::size_t>(n));
  if (degenerate) {
    std::fill(out.begin(), out.end(), constant_class);
    return out;
  }
  std::vector<double> z;
  for (int i = 0; i < n; ++i) {
    classifier_scores(*this, features.data() + static_cast<std::size_t>(i) * feature_dim, z);
    out[static_cast<std::size_t>(i)] =
        static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

std::vector<std::vector<int>> ProbeClassifier::predict_sets(const std::vector<float>& features,
                                                            int n, int none_index) const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
  std::vector<double> z;
  for (int i = 0; i < n; ++i) {
    classifier_scores(*this, features.data() + static_cast<std::size_t>(i) * feature_dim, z);
    std::vector<int>& set = out[static_cast<std::size_t>(i)];
    for (int c = 0; c < num_classes; ++c)
      if (z[static_cast<std::size_t>(c)] >= 0.0) set.push_back(c);  // sigmoid >= 0.5
    if (set.empty() && none_index >= 0) set.push_back(none_index);
  }
  return out;
}

ProbeResult evaluate(const ProbeClassifier& clf, const ProbeDataset& dataset,
                     const LabelSpace& space) {
  if (clf.feature_dim != dataset.feature_dim)
    throw IntegrityError("classifier/dataset feature dimension mismatch");
  if (dataset.n_valid == 0) throw StateError("evaluate: empty validation split");

  ProbeResult result;
  std::map<int, std::int64_t> counts;
  if (dataset.kind == TaskKind::LabelSet) {
    int none_index = space.index_of(kNoneLabel).value_or(-1);
    auto preds = clf.predict_sets(dataset.valid_features, dataset.n_valid, none_index);
    result.report = micro_f1_sets(preds, dataset.valid_sets);
    for (const auto& gold : dataset.valid_sets)
      for (int label : gold) ++counts[label];
  } else {
    auto preds = clf.predict_single(dataset.valid_features, dataset.n_valid);
    result.report = micro_f1_single(preds, dataset.valid_labels);
    for (int label : dataset.valid_labels) ++counts[label];
  }
  result.class_counts.assign(counts.begin(), counts.end());
  return result;
}

// --- suite --------------------------------------------------------------

std::vector<ProbeResultRow> run_probe_suite(
    std::vector<ProbeSuiteInput> inputs, const std::vector<ProbeTask>& tasks,
    const std::vector<ProbeLabelRecord>& train_records,
    const std::vector<ProbeLabelRecord>& valid_records,
    const std::map<ProbeTask, LabelSpace>& spaces, const ProbeSuiteOptions& options) {
  std::sort(inputs.begin(), inputs.end(), [](const ProbeSuiteInput& a, const ProbeSuiteInput& b) {
    return std::make_tuple(a.dataset, a.model, a.stage.sort_rank(), a.seed) <
           std::make_tuple(b.dataset, b.model, b.stage.sort_rank(), b.seed);
  });

  struct Cell {
    const ProbeSuiteInput* input;
    ProbeTask task;
    ClassifierKind classifier;
  };
  std::vector<Cell> cells;
  for (const auto& input : inputs) {
    if (!input.train_cache || !input.valid_cache) continue;  // absent cell
    for (ProbeTask task : tasks)
      for (ClassifierKind kind : options.classifiers) cells.push_back({&input, task, kind});
  }

  std::vector<std::optional<ProbeResultRow>> slots(cells.size());

  auto run_cell = [&](const Cell& cell, std::optional<ProbeResultRow>& slot) {
    auto space_it = spaces.find(cell.task);
    if (space_it == spaces.end()) return;
    ProbeDataset ds = build_probe_dataset(cell.task, *cell.input->train_cache, train_records,
                                          *cell.input->valid_cache, valid_records,
                                          space_it->second);
    if (ds.n_train == 0 || ds.n_valid == 0) return;  // task skipped everywhere
    MlpOptions mlp_opts = options.mlp;
    mlp_opts.seed = options.mlp.seed ^ cell.input->seed;
    ProbeClassifier clf = cell.classifier == ClassifierKind::LogReg
                              ? train_logreg(ds, options.logreg)
                              : train_mlp(ds, mlp_opts);
    ProbeResult res = evaluate(clf, ds, space_it->second);
    ProbeResultRow row;
    row.dataset = cell.input->dataset;
    row.task = task_name(cell.task);
    row.model = cell.input->model;
    row.stage = cell.input->stage.tag();
    row.seed = std::to_string(cell.input->seed);
    row.classifier = classifier_kind_name(cell.classifier);
    row.f1 = res.report.f1;
    row.precision = res.report.precision;
    row.recall = res.report.recall;
    row.n_train = ds.n_train;
    row.n_valid = ds.n_valid;
    row.iterations = clf.iterations;
    slot = std::move(row);
  };

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        run_cell(cells[i], slots[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<ProbeResultRow> rows;
  for (auto& slot : slots)
    if (slot) rows.push_back(std::move(*slot));

  // aggregate over seeds per (dataset, task, model, stage, classifier)
  std::map<std::tuple<std::string, std::string, std::string, std::string, std::string>,
           std::vector<const ProbeResultRow*>>
      groups;
  for (const auto& row : rows)
    groups[{row.dataset, row.task, row.model, row.stage, row.classifier}].push_back(&row);

  std::vector<ProbeResultRow> aggregates;
  for (const auto& [key, members] : groups) {
    ProbeResultRow agg = *members.front();
    agg.seed = "agg";
    double mean = 0.0;
    double mean_p = 0.0;
    double mean_r = 0.0;
    double iters = 0.0;
    for (const auto* m : members) {
      mean += m->f1;
      mean_p += m->precision;
      mean_r += m->recall;
      iters += m->iterations;
    }
    std::size_t n = members.size();
    mean /= static_cast<double>(n);
    mean_p /= static_cast<double>(n);
    mean_r /= static_cast<double>(n);
    double var = 0.0;
    for (const auto* m : members) var += (m->f1 - mean) * (m->f1 - mean);
    agg.f1 = mean;
    agg.precision = mean_p;
    agg.recall = mean_r;
    agg.iterations = static_cast<int>(iters / static_cast<double>(n));
    agg.f1_std = std::sqrt(var / static_cast<double>(n));  // population std over seeds
    aggregates.push_back(std::move(agg));
  }
  rows.insert(rows.end(), aggregates.begin(), aggregates.end());

  auto stage_rank = [](const std::string& tag) {
    auto stage = Stage::from_tag(tag);
    return stage ? stage->sort_rank() : 0;
  };
  std::sort(rows.begin(), rows.end(), [&](const ProbeResultRow& a, const ProbeResultRow& b) {
    auto ka = std::tie(a.dataset, a.task, a.model);
    auto kb = std::tie(b.dataset, b.task, b.model);
    if (ka != kb) return ka < kb;
    if (stage_rank(a.stage) != stage_rank(b.stage)) return stage_rank(a.stage) < stage_rank(b.stage);
    if (a.classifier != b.classifier) return a.classifier < b.classifier;
    bool agg_a = a.seed == "agg";
    bool agg_b = b.seed == "agg";
    if (agg_a != agg_b) return agg_b;  // per-seed rows before the aggregate
    return a.seed < b.seed;
  });
  return rows;
}

void write_probe_results(const std::filesystem::path& path,
                         const std::vector<ProbeResultRow>& rows,
                         const std::string& config_hash) {
  std::string out;
  if (!config_hash.empty()) out += "# config_hash=" + config_hash + "\n";
  out += "dataset,task,model,stage,seed,classifier,f1,precision,recall,n_train,n_valid,"
         "iterations,f1_std\n";
  for (const auto& row : rows) {
    out += row.dataset + ',' + row.task + ',' + row.model + ',' + row.stage + ',' + row.seed +
           ',' + row.classifier + ',';
    out += io::fmt_double(row.f1, 6) + ',' + io::fmt_double(row.precision, 6) + ',' +
           io::fmt_double(row.recall, 6) + ',';
    out += std::to_string(row.n_train) + ',' + std::to_string(row.n_valid) + ',' +
           std::to_string(row.iterations) + ',';
    if (row.f1_std >= 0.0) out += io::fmt_double(row.f1_std, 6);
    out += '\n';
  }
  io::atomic_write(path, out);
}

std::vector<ProbeResultRow> read_probe_results(const std::filesystem::path& path) {
  auto lines = io::read_lines(path);
  std::vector<ProbeResultRow> rows;
  bool header_seen = false;
  for (const auto& line : lines) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    auto fields = io::split_csv_line(line);
    if (fields.size() < 13) throw ParseError("bad probe results row: " + line);
    ProbeResultRow row;
    row.dataset = fields[0];
    row.task = fields[1];
    row.model = fields[2];
    row.stage = fields[3];
    row.seed = fields[4];
    row.classifier = fields[5];
    row.f1 = std::stod(fields[6]);
    row.precision = std::stod(fields[7]);
    row.recall = std::stod(fields[8]);
    row.n_train = std::stoi(fields[9]);
    row.n_valid = std::stoi(fields[10]);
    row.iterations = std::stoi(fields[11]);
    row.f1_std = fields[12].empty() ? -1.0 : std::stod(fields[12]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dialprobe
