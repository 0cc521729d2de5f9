#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dialprobe/probeclf.hpp"

namespace dialprobe {

struct PcaProjection {
  int n = 0;
  std::vector<double> points;      // n x 2, row-major
  std::vector<double> component1;  // unit length, largest-|entry| positive
  std::vector<double> component2;
  double variance_ratio1 = 0.0;
  double variance_ratio2 = 0.0;
  double range_x = 0.0;  // max - min per projected axis
  double range_y = 0.0;
  std::vector<double> mean;  // column means of the input
};

// Mean-centers the n x d matrix and projects onto the top-2 principal
// directions (eigenvectors of the sample covariance). Sign convention: each
// component's largest-magnitude entry is positive. `name` labels errors.
PcaProjection pca2(const std::vector<double>& matrix, int n, int d,
                   const std::string& name = "matrix");

PcaProjection pca2_cache(const ReprCache& cache, const std::string& name);

// Ratio of mean per-axis projected ranges of A over B.
double manifold_ratio(const PcaProjection& a, const PcaProjection& b);

// --- difficulty bucketing -------------------------------------------------

enum class Difficulty { Easy, Medium, Hard };
const char* difficulty_name(Difficulty d);

struct TaskBucket {
  std::string task;
  double avg_untrained_f1 = 0.0;  // over the recurrent family, stored in [0,1]
  Difficulty bucket = Difficulty::Hard;
};

struct BucketScore {
  double mean = 0.0;  // [0,1]
  double stddev = 0.0;  // sample std across the bucket's tasks
  int tasks = 0;
};

struct DifficultyTable {
  std::string report_stage;
  std::vector<TaskBucket> tasks;                              // task order of first appearance
  std::map<std::string, std::map<Difficulty, BucketScore>> per_model;
  std::vector<std::string> warnings;                          // tasks excluded and why
};

// Buckets each task by the recurrent family's average Untrained F1
// (easy > .50, medium (.25, .50], hard otherwise), then aggregates each
// model's per-seed-mean F1 at `report_stage` within each bucket.
DifficultyTable bucket_difficulty(const std::vector<ProbeResultRow>& rows,
                                  const std::vector<std::string>& seq2seq_models,
                                  const std::string& report_stage = "bestbleu");

// CSV matching the aggregate-table shape plus a per-task bucket listing.
std::string difficulty_to_csv(const DifficultyTable& table);
std::string buckets_to_csv(const DifficultyTable& table);

// --- per-epoch evolution ----------------------------------------------------

struct EvolutionPoint {
  std::string task;
  std::string model;
  int epoch = 0;  // 0 = untrained
  double f1_mean = 0.0;
  double f1_std = 0.0;
  int seeds = 0;
};

// Seed-averaged series over Untrained (epoch 0) and Epoch(n) rows, ordered by
// (task, model, epoch).
std::vector<EvolutionPoint> evolution_curves(const std::vector<ProbeResultRow>& rows);
std::string evolution_to_csv(const std::vector<EvolutionPoint>& series);

// --- bootstrap tie study ------------------------------------------------

struct Annotation {
  std::string response_id;
  std::string choice;  // "a", "b" or "tie"
};

// CSV with a `response_id,choice` header; choice is case-insensitive.
std::vector<Annotation> read_annotations(const std::filesystem::path& path);

struct BootstrapOptions {
  bool with_replacement = false;  // responses drawn with replacement inside a set
  bool majority_vote = false;     // count per-response majority instead of pooled judgments
};

struct TieDistribution {
  int n_sets = 0;
  int set_size = 0;
  std::uint64_t seed = 0;
  std::vector<double> fractions;  // one per resample
  double mean = 0.0;
  double stddev = 0.0;
  double max = 0.0;
};

// Draws n_sets sets of set_size responses (without replacement inside a set
// by default) and reports the tie fraction of each set's pooled annotations.
// Resample i uses the stream derived from (seed, i), so results are identical
// across thread counts.
TieDistribution bootstrap_ties(const std::vector<Annotation>& annotations, int n_sets,
                               int set_size, std::uint64_t seed,
                               const BootstrapOptions& options = {});

// Histogram CSV (bin_lo, bin_hi, count) over [0, 1] and a summary JSON.
std::string ties_histogram_csv(const TieDistribution& dist, int bins = 100);
std::string ties_summary_json(const TieDistribution& dist);

}  // namespace dialprobe
