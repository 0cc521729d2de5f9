#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dialprobe/models.hpp"
#include "dialprobe/probelab.hpp"
#include "dialprobe/textmetrics.hpp"

namespace dialprobe {

// Aligned features and mapped labels for one probe task; the train/valid
// split mirrors the corpus split.
struct ProbeDataset {
  ProbeTask task = ProbeTask::UtteranceLoc;
  TaskKind kind = TaskKind::Categorical;
  int feature_dim = 0;
  int num_classes = 0;
  int n_train = 0;
  int n_valid = 0;
  std::vector<float> train_features;  // n_train x feature_dim, row-major
  std::vector<float> valid_features;
  std::vector<int> train_labels;  // single-label tasks
  std::vector<int> valid_labels;
  std::vector<std::vector<int>> train_sets;  // label-set tasks
  std::vector<std::vector<int>> valid_sets;
  int valid_unseen_to_other = 0;  // validation labels absent from the space
  int valid_unseen_dropped = 0;
};

// Joins a representation cache with the task's label records by
// (dialogue id, turn index); records without a cached vector are skipped.
ProbeDataset build_probe_dataset(ProbeTask task, const ReprCache& train_cache,
                                 const std::vector<ProbeLabelRecord>& train_records,
                                 const ReprCache& valid_cache,
                                 const std::vector<ProbeLabelRecord>& valid_records,
                                 const LabelSpace& space);

enum class ClassifierKind { LogReg, Mlp };
const char* classifier_kind_name(ClassifierKind kind);

struct LogRegOptions {
  double c = 1.0;  // inverse regularization strength; penalty (1/(2C))||W||^2
  int max_iter = 250;
  double tol = 1e-4;  // stop when max|grad| <= tol
};

struct MlpOptions {
  int hidden = 100;
  int max_iter = 250;  // epochs
  double learning_rate = 1e-3;
  int batch_size = 64;
  std::uint64_t seed = 1;
};

struct ProbeClassifier {
  ClassifierKind kind = ClassifierKind::LogReg;
  TaskKind task_kind = TaskKind::Categorical;
  int feature_dim = 0;
  int num_classes = 0;
  int hidden = 0;  // mlp only

  // logreg single-label: W (C x D) then bias (C)
  // logreg label-set: per class, w (D) then bias (1)
  std::vector<double> linear;
  // mlp: W1 (D x H), b1 (H), W2 (H x C), b2 (C)
  std::vector<float> mlp;

  int iterations = 0;
  double final_objective = 0.0;
  double final_grad_norm = 0.0;
  bool degenerate = false;     // single-class training labels
  int constant_class = -1;     // what the degenerate classifier predicts

  std::vector<int> predict_single(const std::vector<float>& features, int n) const;
  std::vector<std::vector<int>> predict_sets(const std::vector<float>& features, int n,
                                             int none_index) const;
};

// Multinomial softmax regression (single-label) or independent one-vs-rest
// binary regressions (label-set), minimizing sum-NLL + (1/(2C))||W||^2 with
// unpenalized bias, zero init, L-BFGS with backtracking line search.
ProbeClassifier train_logreg(const ProbeDataset& dataset, const LogRegOptions& options = {});

// One hidden ReLU layer; softmax output for single-label tasks, per-label
// sigmoid outputs for label-set tasks. Adam over seeded mini-batches.
ProbeClassifier train_mlp(const ProbeDataset& dataset, const MlpOptions& options = {});

struct ProbeResult {
  F1Report report;
  std::vector<std::pair<int, std::int64_t>> class_counts;  // gold class -> count (audit)
};

// Micro-F1 of the classifier on the validation split.
ProbeResult evaluate(const ProbeClassifier& clf, const ProbeDataset& dataset,
                     const LabelSpace& space);

// --- suite --------------------------------------------------------------

struct ProbeSuiteInput {
  std::string dataset;
  std::string model;  // architecture name
  Stage stage;
  std::uint64_t seed = 0;
  const ReprCache* train_cache = nullptr;
  const ReprCache* valid_cache = nullptr;
};

struct ProbeResultRow {
  std::string dataset;
  std::string task;
  std::string model;
  std::string stage;       // stage tag
  std::string seed;        // seed number, or "agg" for aggregate rows
  std::string classifier;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  int n_train = 0;
  int n_valid = 0;
  int iterations = 0;
  double f1_std = -1.0;  // population std over seeds; aggregate rows only
};

struct ProbeSuiteOptions {
  std::vector<ClassifierKind> classifiers = {ClassifierKind::LogReg};
  LogRegOptions logreg;
  MlpOptions mlp;
  int jobs = 1;
};

// One row per (task, model, stage, seed, classifier) cell plus one aggregate
// row per (task, model, stage, classifier) carrying mean and population std
// over seeds. A missing cache leaves its cells absent; the suite continues.
// Output order is canonical, independent of input order.
std::vector<ProbeResultRow> run_probe_suite(
    std::vector<ProbeSuiteInput> inputs, const std::vector<ProbeTask>& tasks,
    const std::vector<ProbeLabelRecord>& train_records,
    const std::vector<ProbeLabelRecord>& valid_records,
    const std::map<ProbeTask, LabelSpace>& spaces, const ProbeSuiteOptions& options);

// CSV: dataset,task,model,stage,seed,classifier,f1,precision,recall,
//      n_train,n_valid,iterations,f1_std
void write_probe_results(const std::filesystem::path& path,
                         const std::vector<ProbeResultRow>& rows,
                         const std::string& config_hash = "");
std::vector<ProbeResultRow> read_probe_results(const std::filesystem::path& path);

}  // namespace dialprobe
