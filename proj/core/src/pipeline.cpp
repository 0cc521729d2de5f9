#include "dialprobe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "dialprobe/analysis.hpp"
#include "dialprobe/errors.hpp"
#include "dialprobe/io.hpp"
#include "dialprobe/models.hpp"
#include "dialprobe/multiwoz.hpp"
#include "dialprobe/personachat.hpp"
#include "dialprobe/probeclf.hpp"
#include "dialprobe/probelab.hpp"
#include "dialprobe/synthetic.hpp"

namespace dialprobe {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Paths {
  fs::path run;
  fs::path corpus;
  fs::path labels;
  fs::path ckpts;
  fs::path reprs;
  fs::path probes;
  fs::path analysis;
  fs::path report;

  explicit Paths(const RunConfig& cfg) {
    run = run_dir(cfg);
    corpus = run / "corpus";
    labels = run / "labels";
    ckpts = run / "ckpts";
    reprs = run / "reprs";
    probes = run / "probes";
    analysis = run / "analysis";
    report = run / "report";
  }
};

void write_provenance(const fs::path& dir, const RunConfig& cfg, const std::string& command) {
  json j;
  j["command"] = command;
  j["config_hash"] = config_hash(cfg);
  io::atomic_write(dir / "provenance.json", j.dump(2) + "\n");
}

void echo_config(const RunConfig& cfg) {
  Paths paths(cfg);
  io::atomic_write(paths.run / "config.json", config_to_json(cfg));
}

void require(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw MissingArtifactError(path.string(), producer);
}

CorpusFlavor corpus_flavor(const RunConfig& cfg, const std::vector<NormalizedDialogue>& train) {
  if (cfg.data_format == "personachat") return CorpusFlavor::ChitChat;
  if (cfg.data_format == "multiwoz" || cfg.data_format == "synthetic")
    return CorpusFlavor::GoalOriented;
  // ndf: infer from content
  for (const auto& d : train)
    for (const auto& turn : d.turns) {
      if (!turn.events.empty() || !turn.acts.empty()) return CorpusFlavor::GoalOriented;
      if (!turn.persona.empty()) return CorpusFlavor::ChitChat;
    }
  return CorpusFlavor::GoalOriented;
}

DeriveConfig derive_config(const RunConfig& cfg, const Vocabulary* vocab, CorpusFlavor flavor) {
  DeriveConfig dc;
  dc.utterance_loc_buckets = cfg.utterance_loc_buckets;
  dc.utterance_loc_equal_mass = cfg.utterance_loc_equal_mass;
  dc.count_cap = cfg.count_cap;
  dc.repeat_lookback_all = cfg.repeat_lookback_all;
  dc.wordcont_from_target = cfg.wordcont_from_target;
  if (flavor == CorpusFlavor::ChitChat && vocab) {
    std::int64_t lo = cfg.wordcont_freq_lo;
    std::int64_t hi = cfg.wordcont_freq_hi;
    if (cfg.wordcont_auto_scale) {
      double scale = static_cast<double>(vocab->total_token_count()) /
                     static_cast<double>(cfg.wordcont_ref_tokens);
      lo = std::max<std::int64_t>(2, std::llround(static_cast<double>(lo) * scale));
      hi = std::max<std::int64_t>(lo, std::llround(static_cast<double>(hi) * scale));
    }
    dc.mid_freq_words = build_mid_freq_words(*vocab, lo, hi, cfg.wordcont_max_words);
  }
  return dc;
}

std::vector<Stage> stages_to_probe(const RunConfig& cfg) {
  std::vector<Stage> stages;
  for (const auto& tag : cfg.probe_stages) {
    auto stage = Stage::from_tag(tag);
    if (!stage) throw ConfigError("unknown probe stage \"" + tag + "\"");
    stages.push_back(*stage);
  }
  if (cfg.probe_epoch_series) {
    int step = cfg.snapshot_every > 0 ? cfg.snapshot_every : 1;
    for (int e = step; e <= cfg.epochs; e += step) stages.push_back(Stage::epoch(e));
  }
  std::sort(stages.begin(), stages.end(),
            [](const Stage& a, const Stage& b) { return a.sort_rank() < b.sort_rank(); });
  stages.erase(std::unique(stages.begin(), stages.end()), stages.end());
  return stages;
}

std::vector<ModelKind> model_kinds(const RunConfig& cfg) {
  std::vector<ModelKind> kinds;
  for (const auto& name : cfg.models) {
    auto kind = model_kind_from_name(name);
    if (!kind) throw ConfigError("unknown model kind \"" + name + "\"");
    kinds.push_back(*kind);
  }
  return kinds;
}

ModelConfig model_config(const RunConfig& cfg, ModelKind kind, int vocab_size,
                         std::uint64_t seed) {
  ModelConfig mc;
  mc.kind = kind;
  mc.vocab_size = vocab_size;
  mc.embedding_dim = kind == ModelKind::Transformer ? cfg.hidden_dim : cfg.embedding_dim;
  mc.hidden_dim = cfg.hidden_dim;
  mc.num_layers = kind == ModelKind::Transformer ? std::max(2, cfg.num_layers * 2) : cfg.num_layers;
  mc.num_heads = cfg.num_heads;
  mc.ffn_dim = cfg.ffn_dim;
  mc.context_window = cfg.context_window;
  mc.seed = seed;
  mc.transformer_pool_last = cfg.transformer_pool_last;
  return mc;
}

std::string ckpt_name(const std::string& model, std::uint64_t seed, const Stage& stage) {
  return model + "_s" + std::to_string(seed) + "_" + stage.tag() + ".ckpt";
}

std::string repr_name(const std::string& model, std::uint64_t seed, const Stage& stage,
                      const std::string& split) {
  return model + "_s" + std::to_string(seed) + "_" + stage.tag() + "_" + split + ".repr";
}

// Deterministic thread pool over an indexed work list.
void parallel_for(int jobs, std::size_t count, const std::function<void(std::size_t)>& work) {
  jobs = std::max(1, jobs);
  if (jobs == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto body = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        work(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < std::min<std::size_t>(static_cast<std::size_t>(jobs), count); ++j)
    pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<NormalizedDialogue> sorted_by_id(std::vector<NormalizedDialogue> dialogues) {
  std::sort(dialogues.begin(), dialogues.end(),
            [](const NormalizedDialogue& a, const NormalizedDialogue& b) { return a.id < b.id; });
  return dialogues;
}

}  // namespace

fs::path run_dir(const RunConfig& cfg) {
  return fs::path(cfg.out_dir) / config_hash(cfg);
}

// --- ingest -----------------------------------------------------------------

void cmd_ingest(const RunConfig& cfg) {
  Paths paths(cfg);
  echo_config(cfg);

  std::vector<NormalizedDialogue> train, valid;
  std::vector<std::string> warnings;

  if (cfg.data_format == "synthetic") {
    SyntheticSpec spec;
    spec.topics = cfg.synth_topics;
    spec.slots_per_topic = cfg.synth_slots_per_topic;
    spec.values_per_slot = cfg.synth_values_per_slot;
    spec.dialogues = cfg.synth_dialogues;
    spec.min_turns = cfg.synth_min_turns;
    spec.max_turns = cfg.synth_max_turns;
    spec.repeat_prob = cfg.synth_repeat_prob;
    spec.seed = cfg.synth_seed;
    spec.count_cap = cfg.count_cap;
    spec.repeat_lookback_all = cfg.repeat_lookback_all;
    SyntheticCorpus corpus = generate_synthetic(spec);

    std::size_t n_valid = static_cast<std::size_t>(
        std::lround(cfg.synth_valid_fraction * static_cast<double>(corpus.dialogues.size())));
    n_valid = std::min(n_valid, corpus.dialogues.size() > 1 ? corpus.dialogues.size() - 1 : 0);
    std::size_t n_train = corpus.dialogues.size() - n_valid;
    train.assign(corpus.dialogues.begin(),
                 corpus.dialogues.begin() + static_cast<std::ptrdiff_t>(n_train));
    valid.assign(corpus.dialogues.begin() + static_cast<std::ptrdiff_t>(n_train),
                 corpus.dialogues.end());
    write_label_records(paths.corpus / "ground_truth_labels.jsonl", corpus.labels);
    if (cfg.synth_annotations > 0)
      write_tie_annotations(paths.corpus / "annotations.csv", cfg.synth_annotations, 3,
                            cfg.synth_tie_prob, cfg.synth_seed);
  } else if (cfg.data_format == "multiwoz" || cfg.data_format == "personachat") {
    if (cfg.train_path.empty() || cfg.valid_path.empty())
      throw ConfigError("train_path and valid_path are required for raw corpus ingestion");
    auto parse = [&](const std::string& path) {
      std::string raw = io::read_file(path);
      return cfg.data_format == "multiwoz" ? parse_multiwoz(raw) : parse_personachat(raw);
    };
    ParseResult train_result = parse(cfg.train_path);
    ParseResult valid_result = parse(cfg.valid_path);
    train = std::move(train_result.dialogues);
    valid = std::move(valid_result.dialogues);
    warnings = std::move(train_result.warnings);
    warnings.insert(warnings.end(), valid_result.warnings.begin(), valid_result.warnings.end());
  } else if (cfg.data_format == "ndf") {
    if (cfg.train_path.empty() || cfg.valid_path.empty())
      throw ConfigError("train_path and valid_path are required for ndf ingestion");
    train = read_ndf_file(cfg.train_path);
    valid = read_ndf_file(cfg.valid_path);
  } else {
    throw ConfigError("unknown data_format \"" + cfg.data_format + "\"");
  }

  write_ndf_file(paths.corpus / "train.ndf", sorted_by_id(std::move(train)));
  write_ndf_file(paths.corpus / "valid.ndf", sorted_by_id(std::move(valid)));
  if (!warnings.empty()) {
    std::string out;
    for (const auto& w : warnings) out += w + "\n";
    io::atomic_write(paths.corpus / "ingest_warnings.txt", out);
  }
  write_provenance(paths.corpus, cfg, "ingest");
}

// --- derive ---------------------------------------------------------------

void cmd_derive(const RunConfig& cfg) {
  Paths paths(cfg);
  require(paths.corpus / "train.ndf", "ingest");
  require(paths.corpus / "valid.ndf", "ingest");
  auto train = read_ndf_file(paths.corpus / "train.ndf");
  auto valid = read_ndf_file(paths.corpus / "valid.ndf");

  CorpusFlavor flavor = corpus_flavor(cfg, train);
  Vocabulary vocab = build_vocabulary(train, cfg.vocab_cap);
  DeriveConfig dc = derive_config(cfg, &vocab, flavor);
  TrainStats stats = compute_train_stats(train, dc);

  std::vector<ProbeLabelRecord> train_records, valid_records;
  for (const auto& d : train) {
    auto records = derive_records(d, flavor, stats, dc, cfg.context_window);
    train_records.insert(train_records.end(), records.begin(), records.end());
  }
  for (const auto& d : valid) {
    auto records = derive_records(d, flavor, stats, dc, cfg.context_window);
    valid_records.insert(valid_records.end(), records.begin(), records.end());
  }

  LabelSpaceConfig space_cfg;
  space_cfg.value_space_cap = cfg.value_space_cap;
  auto spaces = build_label_spaces(train_records, dc, space_cfg);

  write_label_records(paths.labels / "train_labels.jsonl", train_records);
  write_label_records(paths.labels / "valid_labels.jsonl", valid_records);
  write_label_spaces(paths.labels / "label_space.json", spaces);

  auto audits = audit_distribution(train_records);
  io::atomic_write(paths.labels / "audit.csv",
                   "# config_hash=" + config_hash(cfg) + "\n" + audit_to_csv(audits));

  // unseen-validation-label accounting per task (OTHER vs dropped policy)
  json summary = json::object();
  for (const auto& audit : audits) {
    json entry;
    entry["records"] = audit.records;
    entry["distinct_labels"] = audit.label_counts.size();
    entry["entropy_bits"] = audit.entropy_bits;
    entry["majority_share"] = audit.majority_share;
    summary[audit.task] = std::move(entry);
  }
  std::map<std::string, std::pair<int, int>> unseen;  // task -> (to_other, dropped)
  for (const auto& rec : valid_records) {
    auto it = spaces.find(rec.task);
    if (it == spaces.end()) continue;
    auto& [to_other, dropped] = unseen[task_name(rec.task)];
    if (rec.label.kind == TaskKind::LabelSet) {
      it->second.map_set(rec.label.labels, &to_other, &dropped);
    } else {
      std::string name = rec.label.kind == TaskKind::Count ? std::to_string(rec.label.count)
                                                           : rec.label.categorical;
      if (!it->second.index_of(name)) {
        if (it->second.has_other())
          ++to_other;
        else
          ++dropped;
      }
    }
  }
  for (auto& [task, counts] : unseen) {
    if (!summary.contains(task)) summary[task] = json::object();
    summary[task]["valid_unseen_to_other"] = counts.first;
    summary[task]["valid_unseen_dropped"] = counts.second;
  }
  json audit_json;
  audit_json["policy"] =
      "unseen validation labels map to OTHER when the space has one (categorical and capped "
      "value tasks) and are dropped from label sets otherwise";
  audit_json["tasks"] = std::move(summary);
  io::atomic_write(paths.labels / "audit_summary.json", audit_json.dump(2) + "\n");
  write_provenance(paths.labels, cfg, "derive");
}

// --- train ------------------------------------------------------------------

void cmd_train(const RunConfig& cfg) {
  Paths paths(cfg);
  require(paths.corpus / "train.ndf", "ingest");
  require(paths.corpus / "valid.ndf", "ingest");
  auto train = read_ndf_file(paths.corpus / "train.ndf");
  auto valid = read_ndf_file(paths.corpus / "valid.ndf");
  Vocabulary vocab = build_vocabulary(train, cfg.vocab_cap);

  TrainOptions options;
  options.epochs = cfg.epochs;
  options.learning_rate = cfg.learning_rate;
  options.batch_size = cfg.batch_size;
  options.grad_clip = cfg.grad_clip;
  options.max_decode_len = cfg.max_decode_len;
  options.snapshot_every = cfg.snapshot_every;

  struct Job {
    ModelKind kind;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (ModelKind kind : model_kinds(cfg))
    for (std::uint64_t seed : cfg.seeds) jobs.push_back({kind, seed});

  std::string hash = config_hash(cfg);
  parallel_for(cfg.jobs, jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    std::string name = model_kind_name(job.kind);
    Model model(model_config(cfg, job.kind, vocab.size(), job.seed));
    auto save = [&](const Checkpoint& ckpt) {
      save_checkpoint(paths.ckpts / ckpt_name(name, job.seed, ckpt.stage), ckpt, hash);
    };
    TrainResult result = train_model(model, train, valid, vocab, options, save);
    write_metrics_log(paths.ckpts / (name + "_s" + std::to_string(job.seed) + "_metrics.csv"),
                      result, hash);
  });
  write_provenance(paths.ckpts, cfg, "train");
}

// --- encode ---------------------------------------------------------------

void cmd_encode(const RunConfig& cfg) {
  Paths paths(cfg);
  require(paths.corpus / "train.ndf", "ingest");
  auto train = read_ndf_file(paths.corpus / "train.ndf");
  auto valid = read_ndf_file(paths.corpus / "valid.ndf");
  Vocabulary vocab = build_vocabulary(train, cfg.vocab_cap);

  struct Job {
    std::string model;
    std::uint64_t seed;
    Stage stage;
  };
  std::vector<Job> jobs;
  for (ModelKind kind : model_kinds(cfg))
    for (std::uint64_t seed : cfg.seeds)
      for (const Stage& stage : stages_to_probe(cfg))
        jobs.push_back({model_kind_name(kind), seed, stage});

  for (const auto& job : jobs)
    require(paths.ckpts / ckpt_name(job.model, job.seed, job.stage), "train");

  parallel_for(cfg.jobs, jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    Checkpoint ckpt = load_checkpoint(paths.ckpts / ckpt_name(job.model, job.seed, job.stage));
    Model model = model_from_checkpoint(ckpt);
    write_repr_cache(paths.reprs / repr_name(job.model, job.seed, job.stage, "train"),
                     export_representations(model, train, vocab));
    write_repr_cache(paths.reprs / repr_name(job.model, job.seed, job.stage, "valid"),
                     export_representations(model, valid, vocab));
  });
  write_provenance(paths.reprs, cfg, "encode");
}

// --- probe ------------------------------------------------------------------

void cmd_probe(const RunConfig& cfg) {
  Paths paths(cfg);
  require(paths.labels / "train_labels.jsonl", "derive");
  require(paths.labels / "label_space.json", "derive");
  if (!fs::exists(paths.reprs) || fs::is_empty(paths.reprs))
    throw MissingArtifactError((paths.reprs).string(), "encode");

  auto train_records = read_label_records(paths.labels / "train_labels.jsonl");
  auto valid_records = read_label_records(paths.labels / "valid_labels.jsonl");
  auto spaces = read_label_spaces(paths.labels / "label_space.json");

  std::vector<ProbeTask> tasks;
  if (cfg.tasks.empty()) {
    for (const auto& [task, space] : spaces) tasks.push_back(task);
  } else {
    for (const auto& name : cfg.tasks) {
      auto task = task_from_name(name);
      if (!task) throw ConfigError("unknown probe task \"" + name + "\"");
      tasks.push_back(*task);
    }
  }

  // caches stay alive for the duration of the suite
  std::vector<std::unique_ptr<ReprCache>> owned;
  std::vector<ProbeSuiteInput> inputs;
  std::string dataset = cfg.data_format;
  for (ModelKind kind : model_kinds(cfg))
    for (std::uint64_t seed : cfg.seeds)
      for (const Stage& stage : stages_to_probe(cfg)) {
        std::string name = model_kind_name(kind);
        fs::path train_path = paths.reprs / repr_name(name, seed, stage, "train");
        fs::path valid_path = paths.reprs / repr_name(name, seed, stage, "valid");
        if (!fs::exists(train_path) || !fs::exists(valid_path)) continue;  // absent cell
        owned.push_back(std::make_unique<ReprCache>(read_repr_cache(train_path)));
        const ReprCache* train_cache = owned.back().get();
        owned.push_back(std::make_unique<ReprCache>(read_repr_cache(valid_path)));
        const ReprCache* valid_cache = owned.back().get();
        inputs.push_back({dataset, name, stage, seed, train_cache, valid_cache});
      }

  ProbeSuiteOptions options;
  options.classifiers.clear();
  for (const auto& name : cfg.classifiers) {
    if (name == "logreg")
      options.classifiers.push_back(ClassifierKind::LogReg);
    else if (name == "mlp")
      options.classifiers.push_back(ClassifierKind::Mlp);
    else
      throw ConfigError("unknown classifier \"" + name + "\"");
  }
  options.logreg.c = cfg.logreg_c;
  options.logreg.max_iter = cfg.probe_max_iter;
  options.logreg.tol = cfg.probe_tol;
  options.mlp.hidden = cfg.mlp_hidden;
  options.mlp.max_iter = cfg.probe_max_iter;
  options.mlp.learning_rate = cfg.mlp_learning_rate;
  options.mlp.batch_size = cfg.mlp_batch_size;
  options.jobs = cfg.jobs;

  auto rows = run_probe_suite(inputs, tasks, train_records, valid_records, spaces, options);
  write_probe_results(paths.probes / "results.csv", rows, config_hash(cfg));
  write_provenance(paths.probes, cfg, "probe");
}

// --- analyze ----------------------------------------------------------------

void cmd_analyze(const RunConfig& cfg) {
  Paths paths(cfg);
  require(paths.probes / "results.csv", "probe");
  auto rows = read_probe_results(paths.probes / "results.csv");
  std::string hash = config_hash(cfg);

  // difficulty bucketing over the recurrent family present in the results
  std::vector<std::string> family;
  for (const char* name : {"lstm", "lstm_attn", "bilstm_attn", "hred"})
    for (const auto& m : cfg.models)
      if (m == name) family.push_back(name);
  DifficultyTable table = bucket_difficulty(rows, family, cfg.bucket_stage);
  io::atomic_write(paths.analysis / "difficulty.csv",
                   "# config_hash=" + hash + "\n" + difficulty_to_csv(table));
  io::atomic_write(paths.analysis / "buckets.csv",
                   "# config_hash=" + hash + "\n" + buckets_to_csv(table));
  if (!table.warnings.empty()) {
    std::string out;
    for (const auto& w : table.warnings) out += w + "\n";
    io::atomic_write(paths.analysis / "bucket_warnings.txt", out);
  }

  auto series = evolution_curves(rows);
  io::atomic_write(paths.analysis / "evolution.csv",
                   "# config_hash=" + hash + "\n" + evolution_to_csv(series));

  // PCA plot data for the first seed's validation caches, with a probe-label
  // color key
  std::map<std::pair<std::string, int>, std::string> colors;
  if (fs::exists(paths.labels / "valid_labels.jsonl")) {
    auto color_task = task_from_name(cfg.pca_color_task);
    if (color_task) {
      for (const auto& rec : read_label_records(paths.labels / "valid_labels.jsonl")) {
        if (rec.task != *color_task) continue;
        std::string value = rec.label.kind == TaskKind::Count
                                ? std::to_string(rec.label.count)
                                : rec.label.kind == TaskKind::Categorical
                                      ? rec.label.categorical
                                      : (rec.label.labels.empty() ? kNoneLabel
                                                                  : rec.label.labels.front());
        colors[{rec.dialogue_id, rec.turn_index}] = value;
      }
    }
  }
  std::uint64_t first_seed = cfg.seeds.empty() ? 1 : cfg.seeds.front();
  std::map<std::string, std::map<std::string, PcaProjection>> projections;  // model -> stage tag
  for (ModelKind kind : model_kinds(cfg)) {
    std::string name = model_kind_name(kind);
    for (const Stage& stage : stages_to_probe(cfg)) {
      if (stage.kind == Stage::Kind::Epoch) continue;  // plot the named stages only
      fs::path cache_path = paths.reprs / repr_name(name, first_seed, stage, "valid");
      if (!fs::exists(cache_path)) continue;
      ReprCache cache = read_repr_cache(cache_path);
      if (cfg.pca_sample > 0 && static_cast<int>(cache.records.size()) > cfg.pca_sample) {
        Rng rng = Rng::for_stream(first_seed, 0x9CA);
        auto picks = rng.sample_without_replacement(cache.records.size(),
                                                    static_cast<std::size_t>(cfg.pca_sample));
        std::sort(picks.begin(), picks.end());
        ReprCache sampled;
        sampled.dim = cache.dim;
        for (std::size_t idx : picks) sampled.records.push_back(cache.records[idx]);
        cache = std::move(sampled);
      }
      if (cache.records.size() < 3) continue;
      PcaProjection proj = pca2_cache(cache, name + "/" + stage.tag());
      std::string out = "# config_hash=" + hash + "\n";
      out += "# variance_ratio1=" + io::fmt_double(proj.variance_ratio1, 6) +
             " variance_ratio2=" + io::fmt_double(proj.variance_ratio2, 6) + "\n";
      out += "dialogue_id,turn_index,x,y,color\n";
      for (std::size_t i = 0; i < cache.records.size(); ++i) {
        const auto& rec = cache.records[i];
        auto color_it = colors.find({rec.dialogue_id, rec.turn_index});
        out += rec.dialogue_id + ',' + std::to_string(rec.turn_index) + ',' +
               io::fmt_double(proj.points[i * 2], 6) + ',' +
               io::fmt_double(proj.points[i * 2 + 1], 6) + ',' +
               (color_it == colors.end() ? std::string() : color_it->second) + '\n';
      }
      io::atomic_write(paths.analysis / ("pca_" + name + "_" + stage.tag() + ".csv"), out);
      projections[name][stage.tag()] = std::move(proj);
    }
  }

  // manifold-extent observations: every model's untrained spread against the
  // first recurrent reference, and each model against its own last epoch
  std::string manifold = "cache_a,cache_b,ratio\n";
  std::string reference;
  for (const auto& m : cfg.models)
    if (m != "transformer" && projections.count(m) && projections[m].count("untrained")) {
      reference = m;
      break;
    }
  for (const auto& [model, stages] : projections) {
    auto untrained = stages.find("untrained");
    if (untrained == stages.end()) continue;
    if (!reference.empty() && model != reference) {
      manifold += model + "/untrained," + reference + "/untrained," +
                  io::fmt_double(manifold_ratio(untrained->second,
                                                projections[reference]["untrained"]),
                                 4) +
                  '\n';
    }
    auto last = stages.find("lastepoch");
    if (last != stages.end())
      manifold += model + "/untrained," + model + "/lastepoch," +
                  io::fmt_double(manifold_ratio(untrained->second, last->second), 4) + '\n';
  }
  io::atomic_write(paths.analysis / "manifold.csv", manifold);

  // bootstrap tie study when annotations are available
  fs::path annotations_path = cfg.annotations_path.empty()
                                  ? paths.corpus / "annotations.csv"
                                  : fs::path(cfg.annotations_path);
  if (fs::exists(annotations_path)) {
    auto annotations = read_annotations(annotations_path);
    BootstrapOptions opts;
    opts.with_replacement = cfg.bootstrap_with_replacement;
    opts.majority_vote = cfg.bootstrap_majority_vote;
    TieDistribution dist = bootstrap_ties(annotations, cfg.bootstrap_sets, cfg.bootstrap_set_size,
                                          cfg.bootstrap_seed, opts);
    io::atomic_write(paths.analysis / "ties_hist.csv",
                     "# config_hash=" + hash + "\n" + ties_histogram_csv(dist));
    io::atomic_write(paths.analysis / "ties_summary.json", ties_summary_json(dist));
  }
  write_provenance(paths.analysis, cfg, "analyze");
}

// --- report -----------------------------------------------------------------

namespace {

std::string pct(double f1) { return io::fmt_double(100.0 * f1, 2); }

}  // namespace

void cmd_report(const RunConfig& cfg) {
  Paths paths(cfg);
  require(paths.probes / "results.csv", "probe");
  auto rows = read_probe_results(paths.probes / "results.csv");

  std::string md = "# Dialogue probe evaluation report\n\n";
  md += "Run `" + config_hash(cfg) + "` on dataset format `" + cfg.data_format + "`.\n\n";

  // model selection table from the training metrics logs
  md += "## Validation BLEU-2 (best epoch per seed)\n\n";
  md += "| model | BLEU-2 (mean +/- std over seeds) |\n|---|---|\n";
  for (const auto& model : cfg.models) {
    std::vector<double> best;
    for (std::uint64_t seed : cfg.seeds) {
      fs::path log = paths.ckpts / (model + "_s" + std::to_string(seed) + "_metrics.csv");
      if (!fs::exists(log)) continue;
      double top = 0.0;
      bool header = false;
      for (const auto& line : io::read_lines(log)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
          header = true;
          continue;
        }
        auto fields = io::split_csv_line(line);
        if (fields.size() >= 3 && fields[0] != "0" && !fields[2].empty())
          top = std::max(top, std::stod(fields[2]));
      }
      best.push_back(top);
    }
    if (best.empty()) continue;
    double mean = 0.0;
    for (double b : best) mean += b;
    mean /= static_cast<double>(best.size());
    double var = 0.0;
    for (double b : best) var += (b - mean) * (b - mean);
    md += "| " + model + " | " + io::fmt_double(mean, 2) + " +/- " +
          io::fmt_double(std::sqrt(var / static_cast<double>(best.size())), 2) + " |\n";
  }
  md += "\n";

  // probe result grid: tasks as columns, model x stage rows, seed aggregates
  std::vector<std::string> tasks;
  std::set<std::string> seen;
  for (const auto& row : rows)
    if (seen.insert(row.task).second) tasks.push_back(row.task);
  std::map<std::tuple<std::string, std::string, std::string, std::string>,
           std::pair<double, double>>
      agg;  // (model, stage, classifier, task) -> (mean, std)
  std::set<std::pair<std::string, std::string>> model_stages;
  std::set<std::string> classifiers;
  for (const auto& row : rows) {
    if (row.seed != "agg") continue;
    agg[{row.model, row.stage, row.classifier, row.task}] = {row.f1, row.f1_std};
    model_stages.insert({row.model, row.stage});
    classifiers.insert(row.classifier);
  }
  for (const auto& classifier : classifiers) {
    md += "## Probe micro-F1 (" + classifier + ", x100, mean +/- std over seeds)\n\n";
    md += "| model / stage |";
    for (const auto& task : tasks) md += " " + task + " |";
    md += "\n|---|";
    for (std::size_t i = 0; i < tasks.size(); ++i) md += "---|";
    md += "\n";
    for (const auto& model : cfg.models) {
      for (const Stage& stage : stages_to_probe(cfg)) {
        if (stage.kind == Stage::Kind::Epoch) continue;
        if (!model_stages.count({model, stage.tag()})) continue;
        md += "| " + model + " " + stage.display() + " |";
        for (const auto& task : tasks) {
          auto it = agg.find({model, stage.tag(), classifier, task});
          if (it == agg.end()) {
            md += " - |";
          } else {
            md += " " + pct(it->second.first) + " +/- " + pct(it->second.second) + " |";
          }
        }
        md += "\n";
      }
    }
    md += "\n";
  }

  // difficulty aggregates
  if (fs::exists(paths.analysis / "difficulty.csv")) {
    md += "## Aggregate scores by task difficulty (stage: " + cfg.bucket_stage + ")\n\n";
    md += "| model | easy | medium | hard |\n|---|---|---|---|\n";
    bool header = false;
    for (const auto& line : io::read_lines(paths.analysis / "difficulty.csv")) {
      if (line.empty() || line[0] == '#') continue;
      if (!header) {
        header = true;
        continue;
      }
      auto fields = io::split_csv_line(line);
      if (fields.size() < 7) continue;
      auto cell = [&](std::size_t i) {
        return fields[i].empty() ? std::string("-") : fields[i] + " +/- " + fields[i + 1];
      };
      md += "| " + fields[0] + " | " + cell(1) + " | " + cell(3) + " | " + cell(5) + " |\n";
    }
    md += "\n";
    if (fs::exists(paths.analysis / "buckets.csv")) {
      md += "Task buckets (by average untrained F1 of the recurrent family):\n\n";
      bool bucket_header = false;
      for (const auto& line : io::read_lines(paths.analysis / "buckets.csv")) {
        if (line.empty() || line[0] == '#') continue;
        if (!bucket_header) {
          bucket_header = true;
          continue;
        }
        auto fields = io::split_csv_line(line);
        if (fields.size() >= 3)
          md += "- " + fields[0] + ": " + fields[2] + " (avg untrained F1 " +
                io::fmt_double(100.0 * std::stod(fields[1]), 2) + ")\n";
      }
      md += "\n";
    }
  }

  if (fs::exists(paths.analysis / "manifold.csv")) {
    md += "## Manifold extent observations (mean PCA axis-range ratios)\n\n";
    bool header = false;
    for (const auto& line : io::read_lines(paths.analysis / "manifold.csv")) {
      if (line.empty() || line[0] == '#') continue;
      if (!header) {
        header = true;
        continue;
      }
      auto fields = io::split_csv_line(line);
      if (fields.size() >= 3)
        md += "- " + fields[0] + " vs " + fields[1] + ": " + fields[2] + "x\n";
    }
    md += "\n";
  }

  if (fs::exists(paths.analysis / "ties_summary.json")) {
    json ties = json::parse(io::read_file(paths.analysis / "ties_summary.json"));
    md += "## Human-judgment tie bootstrap\n\n";
    md += "Over " + std::to_string(ties.at("n_sets").get<int>()) + " resampled sets of " +
          std::to_string(ties.at("set_size").get<int>()) + " responses, the tie fraction is " +
          io::fmt_double(ties.at("mean").get<double>(), 4) + " +/- " +
          io::fmt_double(ties.at("std").get<double>(), 4) + " (max " +
          io::fmt_double(ties.at("max").get<double>(), 4) + ").\n\n";
  }

  io::atomic_write(paths.report / "report.md", md);
  write_provenance(paths.report, cfg, "report");
}

void run_all(const RunConfig& cfg) {
  cmd_ingest(cfg);
  cmd_derive(cfg);
  cmd_train(cfg);
  cmd_encode(cfg);
  cmd_probe(cfg);
  cmd_analyze(cfg);
  cmd_report(cfg);
}

}  // namespace dialprobe
