#include <doctest.h>

#include <cmath>

#include "dialprobe/errors.hpp"
#include "test_util.hpp"
#include "dialprobe/probeclf.hpp"
#include "dialprobe/rng.hpp"

using namespace dialprobe;

namespace {

// Direct dataset construction for classifier-level tests.
ProbeDataset make_single(const std::vector<std::vector<float>>& train_x,
                         const std::vector<int>& train_y,
                         const std::vector<std::vector<float>>& valid_x,
                         const std::vector<int>& valid_y, int classes) {
  ProbeDataset ds;
  ds.task = ProbeTask::RecentTopic;
  ds.kind = TaskKind::Categorical;
  ds.feature_dim = static_cast<int>(train_x[0].size());
  ds.num_classes = classes;
  ds.n_train = static_cast<int>(train_x.size());
  ds.n_valid = static_cast<int>(valid_x.size());
  for (const auto& row : train_x)
    ds.train_features.insert(ds.train_features.end(), row.begin(), row.end());
  for (const auto& row : valid_x)
    ds.valid_features.insert(ds.valid_features.end(), row.begin(), row.end());
  ds.train_labels = train_y;
  ds.valid_labels = valid_y;
  return ds;
}

LabelSpace two_class_space() { return LabelSpace({"neg", "pos"}); }

ProbeDataset separable_1d(int per_class, double scale = 1.0) {
  std::vector<std::vector<float>> xs;
  std::vector<int> ys;
  Rng rng(8);
  for (int i = 0; i < per_class; ++i) {
    xs.push_back({static_cast<float>(scale * (-1.0 - 0.1 * rng.uniform()))});
    ys.push_back(0);
    xs.push_back({static_cast<float>(scale * (1.0 + 0.1 * rng.uniform()))});
    ys.push_back(1);
  }
  std::vector<std::vector<float>> vx(xs.begin(), xs.begin() + 20);
  std::vector<int> vy(ys.begin(), ys.begin() + 20);
  return make_single(xs, ys, vx, vy, 2);
}

}  // namespace

TEST_CASE("logreg separates a linearly separable problem") {
  auto ds = separable_1d(50);
  auto clf = train_logreg(ds);
  CHECK_FALSE(clf.degenerate);
  CHECK(clf.iterations > 0);
  auto result = evaluate(clf, ds, two_class_space());
  CHECK(result.report.f1 == doctest::Approx(1.0));

  // positive feature scaling never changes the separability outcome
  auto scaled = separable_1d(50, 25.0);
  auto scaled_clf = train_logreg(scaled);
  CHECK(evaluate(scaled_clf, scaled, two_class_space()).report.f1 == doctest::Approx(1.0));
}

TEST_CASE("logreg objective starts at N ln C and decreases") {
  auto ds = separable_1d(40);
  LogRegOptions frozen;
  frozen.max_iter = 0;
  auto zero_iter = train_logreg(ds, frozen);
  // zero-initialized multinomial model predicts uniform probabilities
  CHECK(zero_iter.final_objective ==
        doctest::Approx(ds.n_train * std::log(2.0)).epsilon(1e-9));

  auto trained = train_logreg(ds);
  CHECK(trained.final_objective < zero_iter.final_objective);
  CHECK(trained.final_grad_norm >= 0.0);
}

TEST_CASE("degenerate single-class training labels") {
  auto ds = separable_1d(10);
  std::fill(ds.train_labels.begin(), ds.train_labels.end(), 1);
  std::fill(ds.valid_labels.begin(), ds.valid_labels.end(), 1);
  auto clf = train_logreg(ds);
  CHECK(clf.degenerate);
  CHECK(clf.constant_class == 1);
  CHECK(evaluate(clf, ds, two_class_space()).report.f1 == doctest::Approx(1.0));
}

TEST_CASE("logreg chance band on random features") {
  // Monte-Carlo oracle: the chance-level micro-F1 of 4 balanced classes with
  // standard-normal features stays inside the documented band.
  Rng rng(123);
  auto draw_dataset = [&](std::uint64_t seed) {
    Rng local(seed);
    std::vector<std::vector<float>> xs;
    std::vector<int> ys;
    for (int i = 0; i < 400; ++i) {
      std::vector<float> row(8);
      for (auto& v : row) v = static_cast<float>(local.normal());
      xs.push_back(std::move(row));
      ys.push_back(i % 4);
    }
    std::vector<std::vector<float>> vx(xs.begin() + 300, xs.end());
    std::vector<int> vy(ys.begin() + 300, ys.end());
    std::vector<std::vector<float>> tx(xs.begin(), xs.begin() + 300);
    std::vector<int> ty(ys.begin(), ys.begin() + 300);
    return make_single(tx, ty, vx, vy, 4);
  };

  double sum = 0.0;
  const int resamples = 24;
  LabelSpace space({"a", "b", "c", "d"});
  for (int r = 0; r < resamples; ++r) {
    auto ds = draw_dataset(1000 + static_cast<std::uint64_t>(r));
    auto clf = train_logreg(ds);
    double f1 = evaluate(clf, ds, space).report.f1;
    CHECK(f1 >= 0.10);
    CHECK(f1 <= 0.45);
    sum += f1;
  }
  double mean = sum / resamples;
  CHECK(mean >= 0.15);
  CHECK(mean <= 0.40);
}

TEST_CASE("one-vs-rest label sets") {
  // two informative dimensions, one label each, plus NONE for neither
  Rng rng(5);
  ProbeDataset ds;
  ds.task = ProbeTask::RecentSlots;
  ds.kind = TaskKind::LabelSet;
  ds.feature_dim = 2;
  ds.num_classes = 3;  // NONE, left, right
  auto add = [&](bool train, float a, float b, std::vector<int> gold) {
    auto& feats = train ? ds.train_features : ds.valid_features;
    auto& sets = train ? ds.train_sets : ds.valid_sets;
    feats.push_back(a + static_cast<float>(rng.uniform() * 0.1));
    feats.push_back(b + static_cast<float>(rng.uniform() * 0.1));
    sets.push_back(std::move(gold));
    (train ? ds.n_train : ds.n_valid)++;
  };
  for (int i = 0; i < 40; ++i) {
    add(true, 2.0f, 0.0f, {1});
    add(true, 0.0f, 2.0f, {2});
    add(true, 2.0f, 2.0f, {1, 2});
    add(true, -2.0f, -2.0f, {0});
  }
  for (int i = 0; i < 8; ++i) {
    add(false, 2.0f, 0.0f, {1});
    add(false, 0.0f, 2.0f, {2});
    add(false, 2.0f, 2.0f, {1, 2});
    add(false, -2.0f, -2.0f, {0});
  }
  LabelSpace space({kNoneLabel, "left", "right"});
  auto clf = train_logreg(ds);
  auto result = evaluate(clf, ds, space);
  CHECK(result.report.f1 > 0.95);
}

TEST_CASE("mlp solves xor where logreg cannot") {
  Rng rng(31);
  ProbeDataset ds;
  ds.task = ProbeTask::RecentTopic;
  ds.kind = TaskKind::Categorical;
  ds.feature_dim = 2;
  ds.num_classes = 2;
  auto add = [&](bool train, float sx, float sy) {
    float x = sx * 1.0f + static_cast<float>(rng.normal() * 0.05);
    float y = sy * 1.0f + static_cast<float>(rng.normal() * 0.05);
    int label = (sx > 0) == (sy > 0) ? 0 : 1;
    auto& feats = train ? ds.train_features : ds.valid_features;
    auto& labels = train ? ds.train_labels : ds.valid_labels;
    feats.push_back(x);
    feats.push_back(y);
    labels.push_back(label);
    (train ? ds.n_train : ds.n_valid)++;
  };
  for (int i = 0; i < 50; ++i)
    for (float sx : {-1.0f, 1.0f})
      for (float sy : {-1.0f, 1.0f}) add(i < 40, sx, sy);

  LabelSpace space({"same", "diff"});
  MlpOptions mlp_opts;
  mlp_opts.hidden = 16;
  mlp_opts.max_iter = 120;
  auto mlp = train_mlp(ds, mlp_opts);
  CHECK(evaluate(mlp, ds, space).report.f1 >= 0.95);

  auto logreg = train_logreg(ds);
  CHECK(evaluate(logreg, ds, space).report.f1 <= 0.75);

  MlpOptions bad;
  bad.hidden = 0;
  CHECK_THROWS_AS(train_mlp(ds, bad), ConfigError);
}

TEST_CASE("mlp handles linearly separable data") {
  auto ds = separable_1d(40);
  MlpOptions opts;
  opts.hidden = 8;
  opts.max_iter = 80;
  auto clf = train_mlp(ds, opts);
  CHECK(evaluate(clf, ds, two_class_space()).report.f1 == doctest::Approx(1.0));
}

TEST_CASE("evaluate guards") {
  auto ds = separable_1d(10);
  auto clf = train_logreg(ds);
  ProbeDataset empty_valid = ds;
  empty_valid.n_valid = 0;
  empty_valid.valid_features.clear();
  empty_valid.valid_labels.clear();
  CHECK_THROWS_AS(evaluate(clf, empty_valid, two_class_space()), StateError);

  ProbeDataset wrong_dim = ds;
  wrong_dim.feature_dim = 5;
  CHECK_THROWS_AS(evaluate(clf, wrong_dim, two_class_space()), IntegrityError);

  // memorizing classifier evaluated on its own training split
  ProbeDataset self = ds;
  self.valid_features = ds.train_features;
  self.valid_labels = ds.train_labels;
  self.n_valid = ds.n_train;
  CHECK(evaluate(clf, self, two_class_space()).report.f1 == doctest::Approx(1.0));
}

namespace {

// A toy suite setup: representations linearly encode the label for one task
// and pure noise for the other.
struct SuiteFixture {
  std::vector<ProbeLabelRecord> train_records;
  std::vector<ProbeLabelRecord> valid_records;
  std::map<ProbeTask, LabelSpace> spaces;
  ReprCache train_cache;
  ReprCache valid_cache;

  SuiteFixture() {
    Rng rng(77);
    train_cache.dim = 4;
    valid_cache.dim = 4;
    auto fill = [&](ReprCache& cache, std::vector<ProbeLabelRecord>& records, int count,
                    const std::string& prefix) {
      for (int i = 0; i < count; ++i) {
        RepresentationRecord rec;
        rec.dialogue_id = prefix + std::to_string(i);
        rec.turn_index = 0;
        int cls = i % 3;
        rec.vec = {static_cast<float>(cls == 0), static_cast<float>(cls == 1),
                   static_cast<float>(cls == 2), static_cast<float>(rng.normal())};
        cache.records.push_back(rec);
        records.push_back({rec.dialogue_id, 0, ProbeTask::RecentTopic,
                           LabelValue::make_categorical(std::string(1, static_cast<char>('a' + cls)))});
        records.push_back({rec.dialogue_id, 0, ProbeTask::NumAllInfo,
                           LabelValue::make_count(static_cast<int>(rng.uniform_int(0, 2)))});
      }
    };
    fill(train_cache, train_records, 60, "tr");
    fill(valid_cache, valid_records, 24, "va");
    DeriveConfig dc;
    dc.count_cap = 10;
    spaces = build_label_spaces(train_records, dc, {});
  }
};

}  // namespace

TEST_CASE("run_probe_suite shapes, determinism and order invariance") {
  SuiteFixture fx;
  // 1 model x 3 stages x 2 seeds
  std::vector<ProbeSuiteInput> inputs;
  for (const Stage& stage : {Stage::untrained(), Stage::best_bleu(), Stage::last_epoch()})
    for (std::uint64_t seed : {1ULL, 2ULL})
      inputs.push_back({"synthetic", "lstm", stage, seed, &fx.train_cache, &fx.valid_cache});

  ProbeSuiteOptions options;
  std::vector<ProbeTask> tasks = {ProbeTask::RecentTopic, ProbeTask::NumAllInfo};
  auto rows = run_probe_suite(inputs, tasks, fx.train_records, fx.valid_records, fx.spaces,
                              options);
  // 2 tasks x 3 stages x 2 seeds = 12 result rows + 6 aggregates
  int per_seed = 0, agg = 0;
  for (const auto& row : rows) (row.seed == "agg" ? agg : per_seed)++;
  CHECK(per_seed == 12);
  CHECK(agg == 6);

  // identical seeds produce identical duplicate rows
  for (const auto& row : rows) {
    if (row.seed != "1") continue;
    for (const auto& other : rows)
      if (other.seed == "2" && other.task == row.task && other.stage == row.stage)
        CHECK(other.f1 == doctest::Approx(row.f1));
  }

  // the suite output does not depend on input order
  std::vector<ProbeSuiteInput> shuffled = {inputs[3], inputs[0], inputs[5],
                                           inputs[2], inputs[4], inputs[1]};
  auto rows2 = run_probe_suite(shuffled, tasks, fx.train_records, fx.valid_records, fx.spaces,
                               options);
  REQUIRE(rows2.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows2[i].task == rows[i].task);
    CHECK(rows2[i].stage == rows[i].stage);
    CHECK(rows2[i].seed == rows[i].seed);
    CHECK(rows2[i].f1 == doctest::Approx(rows[i].f1));
  }

  // the encoded task is solvable, the noise task is not
  for (const auto& row : rows)
    if (row.task == "RecentTopic" && row.seed == "agg") CHECK(row.f1 == doctest::Approx(1.0));

  // parallel execution returns the same table
  ProbeSuiteOptions parallel = options;
  parallel.jobs = 3;
  auto rows3 = run_probe_suite(inputs, tasks, fx.train_records, fx.valid_records, fx.spaces,
                               parallel);
  REQUIRE(rows3.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows3[i].f1 == doctest::Approx(rows[i].f1));

  // missing cache: the cell is absent, the suite continues
  std::vector<ProbeSuiteInput> with_missing = inputs;
  with_missing[0].train_cache = nullptr;
  auto rows4 = run_probe_suite(with_missing, tasks, fx.train_records, fx.valid_records, fx.spaces,
                               options);
  CHECK(rows4.size() < rows.size());
}

TEST_CASE("probe results csv round trip") {
  SuiteFixture fx;
  std::vector<ProbeSuiteInput> inputs = {
      {"synthetic", "lstm", Stage::untrained(), 1, &fx.train_cache, &fx.valid_cache}};
  auto rows = run_probe_suite(inputs, {ProbeTask::RecentTopic}, fx.train_records,
                              fx.valid_records, fx.spaces, {});
  testutil::TempDir dir("probe_csv");
  write_probe_results(dir.path / "results.csv", rows, "cafe");
  auto back = read_probe_results(dir.path / "results.csv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].task == rows[i].task);
    CHECK(back[i].f1 == doctest::Approx(rows[i].f1));
    CHECK(back[i].n_train == rows[i].n_train);
  }
}
