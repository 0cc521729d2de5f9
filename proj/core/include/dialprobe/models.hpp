#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dialprobe/corpus.hpp"
#include "dialprobe/gradkernel.hpp"
#include "dialprobe/vocab.hpp"

namespace dialprobe {

enum class ModelKind { Lstm, LstmAttn, BilstmAttn, Hred, Transformer };

const char* model_kind_name(ModelKind kind);
std::optional<ModelKind> model_kind_from_name(const std::string& name);
bool is_recurrent(ModelKind kind);

struct ModelConfig {
  ModelKind kind = ModelKind::Lstm;
  int vocab_size = 0;
  int embedding_dim = 32;
  int hidden_dim = 64;
  int num_layers = 2;        // recurrent stacks; transformer total layers (floor(L/2) encode)
  int num_heads = 2;         // transformer only
  int ffn_dim = 0;           // transformer feed-forward width; 0 -> 4 * hidden_dim
  int context_window = 100;
  std::uint64_t seed = 1;
  bool transformer_pool_last = false;  // probe vector: mean over tokens (default) or last token

  // Recurrent: embedding 128 / hidden 256 / 2 layers. Transformer: 512 wide,
  // 2 heads, 4 layers split half for encoding.
  static ModelConfig paper_scale(ModelKind kind, int vocab_size, std::uint64_t seed = 1);
  // Small dims for laptop-scale runs: embedding 32, hidden 64.
  static ModelConfig desk_scale(ModelKind kind, int vocab_size, std::uint64_t seed = 1);

  int transformer_encoder_layers() const { return num_layers / 2; }
  int transformer_ffn_dim() const { return ffn_dim > 0 ? ffn_dim : 4 * hidden_dim; }

  bool operator==(const ModelConfig&) const = default;
};

// Checkpoint staging: Untrained (before any update), per-epoch snapshots,
// BestBLEU (highest validation BLEU-2 epoch), LastEpoch (final).
struct Stage {
  enum class Kind { Untrained, Epoch, BestBleu, LastEpoch };
  Kind kind = Kind::Untrained;
  int epoch_index = 0;  // Epoch only

  static Stage untrained() { return {Kind::Untrained, 0}; }
  static Stage epoch(int n) { return {Kind::Epoch, n}; }
  static Stage best_bleu() { return {Kind::BestBleu, 0}; }
  static Stage last_epoch() { return {Kind::LastEpoch, 0}; }

  std::string tag() const;      // file-safe: untrained / epoch3 / bestbleu / lastepoch
  std::string display() const;  // Untrained / Epoch 3 / BestBLEU / LastEpoch
  int sort_rank() const;        // untrained, epochs ascending, bestbleu, lastepoch
  static std::optional<Stage> from_tag(const std::string& tag);

  bool operator==(const Stage&) const = default;
};

struct Checkpoint {
  ModelConfig config;
  Stage stage;
  std::uint64_t seed = 0;
  double valid_bleu = 0.0;
  std::vector<std::pair<std::string, gk::Buffer<float>>> params;
};

// Header JSON (config, stage, seed, BLEU, named offset table) followed by a
// little-endian float32 parameter blob; versioned magic bytes.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                     const std::string& config_hash = "");
Checkpoint load_checkpoint(const std::filesystem::path& path);

// One training/inference example already mapped to vocabulary ids.
struct EncodedExample {
  std::vector<int> context_ids;
  std::vector<int> utterance_offsets;  // for the hierarchical encoder
  std::vector<int> target_ids;         // without EOS; training appends it
};

// All five architectures behind one interface, templated on the scalar so the
// same graph code runs in float32 (training) and float64 (gradient checking).
template <class S>
class Net {
 public:
  explicit Net(const ModelConfig& cfg);  // seeded deterministic initialization

  const ModelConfig& config() const { return cfg_; }
  std::vector<std::pair<std::string, gk::Buffer<S>>>& params() { return params_; }
  gk::Buffer<S>& param(const std::string& name);
  std::size_t parameter_count() const;

  // The probed encoder vector for one context; empty contexts encode BOS.
  std::vector<S> encode(const std::vector<int>& context_ids,
                        const std::vector<int>& utterance_offsets);

  // Teacher-forced summed token loss over the batch, built on `tape`.
  // Returns the loss handle and the number of real (non-pad) target tokens.
  // attention_rows, when given, receives every decode-step attention
  // distribution over encoder positions (attention architectures only).
  std::pair<typename gk::Tape<S>::H, int> batch_loss(
      gk::Tape<S>& tape, const std::vector<EncodedExample>& batch,
      std::vector<std::vector<S>>* attention_rows = nullptr);

  // Deterministic argmax decoding from BOS until EOS or max_len tokens.
  std::vector<int> decode_greedy(const std::vector<int>& context_ids,
                                 const std::vector<int>& utterance_offsets, int max_len);

 private:
  ModelConfig cfg_;
  std::vector<std::pair<std::string, gk::Buffer<S>>> params_;
  gk::Buffer<S>& add_param(const std::string& name, int rows, int cols);
  void build();
};

using Model = Net<float>;

Model model_from_checkpoint(const Checkpoint& ckpt);
Checkpoint make_checkpoint(Model& model, Stage stage, double valid_bleu);

// --- training ---------------------------------------------------------------

struct TrainOptions {
  int epochs = 5;
  double learning_rate = 4e-3;
  int batch_size = 32;
  double grad_clip = 0.0;  // global-norm clip; <= 0 disables
  int max_decode_len = 30;
  int snapshot_every = 1;  // per-epoch checkpoint cadence; 0 disables epoch snapshots
};

struct EpochMetrics {
  int epoch = 0;           // 0 = untrained evaluation row
  double train_loss = 0.0;  // mean per-token NLL; NaN for the epoch-0 row
  double valid_bleu2 = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> log;
  int best_epoch = 0;
  double best_bleu = 0.0;
  bool diverged = false;
  int diverged_epoch = -1;
};

// Saves Untrained before the first step, Epoch(n) snapshots, BestBLEU and
// LastEpoch through `save`. Batches are shuffled each epoch with the model
// seed. Divergence (non-finite loss) aborts the epoch loop; the checkpoints
// saved so far are kept and the result is flagged.
TrainResult train_model(Model& model, const std::vector<NormalizedDialogue>& train_corpus,
                        const std::vector<NormalizedDialogue>& valid_corpus,
                        const Vocabulary& vocab, const TrainOptions& options,
                        const std::function<void(const Checkpoint&)>& save);

// Greedy validation BLEU-2 of the model over the corpus contexts.
double validation_bleu2(Model& model, const std::vector<NormalizedDialogue>& corpus,
                        const Vocabulary& vocab, int max_decode_len = 30);

EncodedExample encode_example(const ContextTarget& ct, const Vocabulary& vocab);

// --- representation caches ---------------------------------------------

struct RepresentationRecord {
  std::string dialogue_id;
  int turn_index = 0;
  std::vector<float> vec;
};

struct ReprCache {
  int dim = 0;
  std::vector<RepresentationRecord> records;
};

// One record per context, ordered by (dialogue id, turn index) to match the
// label files.
ReprCache export_representations(Model& model, const std::vector<NormalizedDialogue>& corpus,
                                 const Vocabulary& vocab);

// Binary format: magic, version, dim, count header + per record a
// length-prefixed UTF-8 id, a u32 turn index and dim little-endian float32s.
void write_repr_cache(const std::filesystem::path& path, const ReprCache& cache);
ReprCache read_repr_cache(const std::filesystem::path& path);

// CSV (epoch, train_loss, valid_bleu2); '#' comment lines carry provenance.
void write_metrics_log(const std::filesystem::path& path, const TrainResult& result,
                       const std::string& config_hash = "");

}  // namespace dialprobe
