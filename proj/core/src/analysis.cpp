#include "dialprobe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "dialprobe/errors.hpp"
#include "dialprobe/io.hpp"
#include "dialprobe/rng.hpp"

namespace dialprobe {

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
// eigenvalues descending with matching eigenvector columns.
void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& eigenvalues,
                  std::vector<double>& eigenvectors) {
  eigenvectors.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) eigenvectors[static_cast<std::size_t>(i) * n + i] = 1.0;

  auto at = [&](std::vector<double>& m, int i, int j) -> double& {
    return m[static_cast<std::size_t>(i) * n + j];
  };

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(a, i, j) * at(a, i, j);
    if (off < 1e-24) break;

    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        double apq = at(a, p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = at(a, k, p);
          double akq = at(a, k, q);
          at(a, k, p) = c * akp - s * akq;
          at(a, k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = at(a, p, k);
          double aqk = at(a, q, k);
          at(a, p, k) = c * apk - s * aqk;
          at(a, q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = at(eigenvectors, k, p);
          double vkq = at(eigenvectors, k, q);
          at(eigenvectors, k, p) = c * vkp - s * vkq;
          at(eigenvectors, k, q) = s * vkp + c * vkq;
        }
      }
  }

  // order by eigenvalue descending
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    return at(a, i, i) > at(a, j, j);
  });
  eigenvalues.resize(static_cast<std::size_t>(n));
  std::vector<double> sorted_vecs(static_cast<std::size_t>(n) * n);
  for (int rank = 0; rank < n; ++rank) {
    int src = order[static_cast<std::size_t>(rank)];
    eigenvalues[static_cast<std::size_t>(rank)] = at(a, src, src);
    for (int k = 0; k < n; ++k)
      sorted_vecs[static_cast<std::size_t>(k) * n + rank] = at(eigenvectors, k, src);
  }
  eigenvectors = std::move(sorted_vecs);
}

// Largest-magnitude entry positive; ties resolved by the first such entry.
void apply_sign_convention(std::vector<double>& v) {
  std::size_t arg = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (std::abs(v[i]) > best) {
      best = std::abs(v[i]);
      arg = i;
    }
  if (v[arg] < 0)
    for (double& x : v) x = -x;
}

}  // namespace

PcaProjection pca2(const std::vector<double>& matrix, int n, int d, const std::string& name) {
  if (n < 3) throw StateError("pca2(" + name + "): need at least 3 points, got " + std::to_string(n));
  if (d < 2) throw StateError("pca2(" + name + "): need dimension >= 2, got " + std::to_string(d));
  for (double x : matrix)
    if (!std::isfinite(x)) throw StateError("pca2(" + name + "): non-finite input");

  PcaProjection proj;
  proj.n = n;
  proj.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      proj.mean[static_cast<std::size_t>(j)] += matrix[static_cast<std::size_t>(i) * d + j];
  for (double& m : proj.mean) m /= static_cast<double>(n);

  // sample covariance of the centered data
  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  std::vector<double> centered(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      centered[static_cast<std::size_t>(i) * d + j] =
          matrix[static_cast<std::size_t>(i) * d + j] - proj.mean[static_cast<std::size_t>(j)];
  for (int i = 0; i < n; ++i) {
    const double* row = centered.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j)
      for (int k = j; k < d; ++k) cov[static_cast<std::size_t>(j) * d + k] += row[j] * row[k];
  }
  for (int j = 0; j < d; ++j)
    for (int k = j; k < d; ++k) {
      double v = cov[static_cast<std::size_t>(j) * d + k] / static_cast<double>(n - 1);
      cov[static_cast<std::size_t>(j) * d + k] = v;
      cov[static_cast<std::size_t>(k) * d + j] = v;
    }

  double trace = 0.0;
  for (int j = 0; j < d; ++j) trace += cov[static_cast<std::size_t>(j) * d + j];
  if (trace <= 0.0)
    throw StateError("pca2(" + name + "): all points identical (rank-0 data)");

  std::vector<double> eigenvalues;
  std::vector<double> eigenvectors;
  jacobi_eigen(cov, d, eigenvalues, eigenvectors);

  proj.component1.resize(static_cast<std::size_t>(d));
  proj.component2.resize(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) {
    proj.component1[static_cast<std::size_t>(k)] = eigenvectors[static_cast<std::size_t>(k) * d + 0];
    proj.component2[static_cast<std::size_t>(k)] = eigenvectors[static_cast<std::size_t>(k) * d + 1];
  }
  apply_sign_convention(proj.component1);
  apply_sign_convention(proj.component2);
  proj.variance_ratio1 = std::max(0.0, eigenvalues[0]) / trace;
  proj.variance_ratio2 = std::max(0.0, eigenvalues[1]) / trace;

  proj.points.resize(static_cast<std::size_t>(n) * 2);
  double min_x = 0.0, max_x = 0.0, min_y = 0.0, max_y = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = centered.data() + static_cast<std::size_t>(i) * d;
    double x = 0.0, y = 0.0;
    for (int j = 0; j < d; ++j) {
      x += row[j] * proj.component1[static_cast<std::size_t>(j)];
      y += row[j] * proj.component2[static_cast<std::size_t>(j)];
    }
    proj.points[static_cast<std::size_t>(i) * 2] = x;
    proj.points[static_cast<std::size_t>(i) * 2 + 1] = y;
    if (i == 0 || x < min_x) min_x = x;
    if (i == 0 || x > max_x) max_x = x;
    if (i == 0 || y < min_y) min_y = y;
    if (i == 0 || y > max_y) max_y = y;
  }
  proj.range_x = max_x - min_x;
  proj.range_y = max_y - min_y;
  return proj;
}

PcaProjection pca2_cache(const ReprCache& cache, const std::string& name) {
  int n = static_cast<int>(cache.records.size());
  int d = cache.dim;
  std::vector<double> matrix(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      matrix[static_cast<std::size_t>(i) * d + j] =
          static_cast<double>(cache.records[static_cast<std::size_t>(i)].vec[static_cast<std::size_t>(j)]);
  return pca2(matrix, n, d, name);
}

double manifold_ratio(const PcaProjection& a, const PcaProjection& b) {
  double denom = 0.5 * (b.range_x + b.range_y);
  if (denom <= 0.0) throw StateError("manifold_ratio: degenerate reference projection");
  return 0.5 * (a.range_x + a.range_y) / denom;
}

// --- difficulty bucketing -----------------------------------------------

const char* difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Medium: return "medium";
    case Difficulty::Hard: return "hard";
  }
  return "?";
}

namespace {

Difficulty bucket_of(double avg) {
  if (avg > 0.50) return Difficulty::Easy;
  if (avg > 0.25) return Difficulty::Medium;
  return Difficulty::Hard;
}

// Seed-mean F1 per (task, model, stage); prefers the suite's aggregate rows
// and falls back to averaging per-seed rows.
std::map<std::tuple<std::string, std::string, std::string>, double> seed_means(
    const std::vector<ProbeResultRow>& rows) {
  std::map<std::tuple<std::string, std::string, std::string>, double> agg;
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<double, int>> sums;
  for (const auto& row : rows) {
    auto key = std::make_tuple(row.task, row.model, row.stage);
    if (row.seed == "agg") {
      agg[key] = row.f1;
    } else {
      auto& [sum, count] = sums[key];
      sum += row.f1;
      ++count;
    }
  }
  for (const auto& [key, sc] : sums)
    if (!agg.count(key)) agg[key] = sc.first / sc.second;
  return agg;
}

}  // namespace

DifficultyTable bucket_difficulty(const std::vector<ProbeResultRow>& rows,
                                  const std::vector<std::string>& seq2seq_models,
                                  const std::string& report_stage) {
  DifficultyTable table;
  table.report_stage = report_stage;
  auto means = seed_means(rows);

  // stable task order: first appearance in the rows
  std::vector<std::string> tasks;
  std::set<std::string> seen_tasks;
  std::set<std::string> models;
  for (const auto& row : rows) {
    if (seen_tasks.insert(row.task).second) tasks.push_back(row.task);
    models.insert(row.model);
  }

  std::map<std::string, Difficulty> task_bucket;
  for (const auto& task : tasks) {
    double sum = 0.0;
    int have = 0;
    for (const auto& model : seq2seq_models) {
      auto it = means.find({task, model, "untrained"});
      if (it == means.end()) continue;
      sum += it->second;
      ++have;
    }
    if (have < static_cast<int>(seq2seq_models.size())) {
      table.warnings.push_back("task " + task + " missing Untrained cells for " +
                               std::to_string(static_cast<int>(seq2seq_models.size()) - have) +
                               " model(s); excluded");
      continue;
    }
    TaskBucket tb;
    tb.task = task;
    tb.avg_untrained_f1 = sum / static_cast<double>(have);
    tb.bucket = bucket_of(tb.avg_untrained_f1);
    task_bucket[task] = tb.bucket;
    table.tasks.push_back(std::move(tb));
  }

  for (const auto& model : models) {
    std::map<Difficulty, std::vector<double>> values;
    for (const auto& tb : table.tasks) {
      auto it = means.find({tb.task, model, report_stage});
      if (it == means.end()) continue;
      values[tb.bucket].push_back(it->second);
    }
    for (const auto& [bucket, vals] : values) {
      BucketScore score;
      score.tasks = static_cast<int>(vals.size());
      for (double v : vals) score.mean += v;
      score.mean /= static_cast<double>(vals.size());
      if (vals.size() > 1) {
        double var = 0.0;
        for (double v : vals) var += (v - score.mean) * (v - score.mean);
        score.stddev = std::sqrt(var / static_cast<double>(vals.size() - 1));
      }
      table.per_model[model][bucket] = score;
    }
  }
  return table;
}

std::string difficulty_to_csv(const DifficultyTable& table) {
  std::string out = "# report_stage=" + table.report_stage + " (values x100, std across tasks)\n";
  out += "model,easy_mean,easy_std,medium_mean,medium_std,hard_mean,hard_std\n";
  for (const auto& [model, buckets] : table.per_model) {
    out += model;
    for (Difficulty d : {Difficulty::Easy, Difficulty::Medium, Difficulty::Hard}) {
      auto it = buckets.find(d);
      if (it == buckets.end()) {
        out += ",,";
      } else {
        out += ',' + io::fmt_double(100.0 * it->second.mean, 2) + ',' +
               io::fmt_double(100.0 * it->second.stddev, 2);
      }
    }
    out += '\n';
  }
  return out;
}

std::string buckets_to_csv(const DifficultyTable& table) {
  std::string out = "task,avg_untrained_f1,bucket\n";
  for (const auto& tb : table.tasks)
    out += tb.task + ',' + io::fmt_double(tb.avg_untrained_f1, 6) + ',' +
           difficulty_name(tb.bucket) + '\n';
  return out;
}

// --- per-epoch evolution ------------------------------------------------

std::vector<EvolutionPoint> evolution_curves(const std::vector<ProbeResultRow>& rows) {
  // (task, model, epoch) -> per-seed f1 values
  std::map<std::tuple<std::string, std::string, int>, std::vector<double>> series;
  for (const auto& row : rows) {
    if (row.seed == "agg") continue;
    auto stage = Stage::from_tag(row.stage);
    if (!stage) continue;
    int epoch = -1;
    if (stage->kind == Stage::Kind::Untrained) epoch = 0;
    if (stage->kind == Stage::Kind::Epoch) epoch = stage->epoch_index;
    if (epoch < 0) continue;
    series[{row.task, row.model, epoch}].push_back(row.f1);
  }
  std::vector<EvolutionPoint> out;
  for (const auto& [key, values] : series) {
    EvolutionPoint p;
    p.task = std::get<0>(key);
    p.model = std::get<1>(key);
    p.epoch = std::get<2>(key);
    p.seeds = static_cast<int>(values.size());
    for (double v : values) p.f1_mean += v;
    p.f1_mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - p.f1_mean) * (v - p.f1_mean);
    p.f1_std = std::sqrt(var / static_cast<double>(values.size()));
    out.push_back(std::move(p));
  }
  return out;  // map order == (task, model, epoch) ascending
}

std::string evolution_to_csv(const std::vector<EvolutionPoint>& series) {
  std::string out = "task,model,epoch,f1_mean,f1_std,seeds\n";
  for (const auto& p : series)
    out += p.task + ',' + p.model + ',' + std::to_string(p.epoch) + ',' +
           io::fmt_double(p.f1_mean, 6) + ',' + io::fmt_double(p.f1_std, 6) + ',' +
           std::to_string(p.seeds) + '\n';
  return out;
}

// --- bootstrap tie study ------------------------------------------------

std::vector<Annotation> read_annotations(const std::filesystem::path& path) {
  auto lines = io::read_lines(path);
  std::vector<Annotation> annotations;
  bool header_seen = false;
  std::size_t lineno = 0;
  for (const auto& line : lines) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    auto fields = io::split_csv_line(line);
    if (fields.size() < 2) throw ParseError("bad annotation row at line " + std::to_string(lineno));
    Annotation a;
    a.response_id = fields[0];
    a.choice = fields[1];
    std::transform(a.choice.begin(), a.choice.end(), a.choice.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (a.choice != "a" && a.choice != "b" && a.choice != "tie")
      throw ParseError("annotation choice must be A, B or Tie (line " + std::to_string(lineno) +
                       ")");
    annotations.push_back(std::move(a));
  }
  return annotations;
}

TieDistribution bootstrap_ties(const std::vector<Annotation>& annotations, int n_sets,
                               int set_size, std::uint64_t seed,
                               const BootstrapOptions& options) {
  // group annotations by response, in first-appearance order
  std::vector<std::vector<char>> responses;  // 1 = tie
  {
    auto is_tie = [](const std::string& choice) {
      if (choice.size() != 3) return false;
      return std::tolower(static_cast<unsigned char>(choice[0])) == 't' &&
             std::tolower(static_cast<unsigned char>(choice[1])) == 'i' &&
             std::tolower(static_cast<unsigned char>(choice[2])) == 'e';
    };
    std::map<std::string, std::size_t> index;
    for (const auto& a : annotations) {
      auto [it, inserted] = index.emplace(a.response_id, responses.size());
      if (inserted) responses.emplace_back();
      responses[it->second].push_back(is_tie(a.choice) ? 1 : 0);
    }
  }
  std::size_t population = responses.size();
  if (population == 0) throw StateError("bootstrap_ties: no annotations");
  if (!options.with_replacement && static_cast<std::size_t>(set_size) > population)
    throw StateError("bootstrap_ties: set_size " + std::to_string(set_size) +
                     " exceeds the " + std::to_string(population) + " collected responses");

  TieDistribution dist;
  dist.n_sets = n_sets;
  dist.set_size = set_size;
  dist.seed = seed;
  dist.fractions.resize(static_cast<std::size_t>(n_sets));

  for (int rs = 0; rs < n_sets; ++rs) {
    Rng rng = Rng::for_stream(seed, static_cast<std::uint64_t>(rs));
    std::int64_t ties = 0;
    std::int64_t total = 0;
    auto tally = [&](std::size_t response) {
      const auto& votes = responses[response];
      if (options.majority_vote) {
        int tie_votes = 0;
        for (char v : votes) tie_votes += v;
        // a response counts as a tie when at least half its judgments are ties
        ties += 2 * tie_votes >= static_cast<int>(votes.size()) ? 1 : 0;
        total += 1;
      } else {
        for (char v : votes) ties += v;
        total += static_cast<std::int64_t>(votes.size());
      }
    };
    if (options.with_replacement) {
      for (int k = 0; k < set_size; ++k)
        tally(static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(population) - 1)));
    } else {
      for (std::size_t idx :
           rng.sample_without_replacement(population, static_cast<std::size_t>(set_size)))
        tally(idx);
    }
    dist.fractions[static_cast<std::size_t>(rs)] =
        total > 0 ? static_cast<double>(ties) / static_cast<double>(total) : 0.0;
  }

  for (double f : dist.fractions) {
    dist.mean += f;
    dist.max = std::max(dist.max, f);
  }
  dist.mean /= static_cast<double>(n_sets);
  double var = 0.0;
  for (double f : dist.fractions) var += (f - dist.mean) * (f - dist.mean);
  dist.stddev = std::sqrt(var / static_cast<double>(n_sets));
  return dist;
}

std::string ties_histogram_csv(const TieDistribution& dist, int bins) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(bins), 0);
  for (double f : dist.fractions) {
    int bin = std::min(bins - 1, static_cast<int>(f * bins));
    ++counts[static_cast<std::size_t>(bin)];
  }
  std::string out = "bin_lo,bin_hi,count\n";
  for (int b = 0; b < bins; ++b)
    out += io::fmt_double(static_cast<double>(b) / bins, 4) + ',' +
           io::fmt_double(static_cast<double>(b + 1) / bins, 4) + ',' +
           std::to_string(counts[static_cast<std::size_t>(b)]) + '\n';
  return out;
}

std::string ties_summary_json(const TieDistribution& dist) {
  nlohmann::json j;
  j["mean"] = dist.mean;
  j["std"] = dist.stddev;
  j["max"] = dist.max;
  j["n_sets"] = dist.n_sets;
  j["set_size"] = dist.set_size;
  j["seed"] = dist.seed;
  return j.dump(2) + "\n";
}

}  // namespace dialprobe
