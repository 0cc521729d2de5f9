#include "dialprobe/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "dialprobe/errors.hpp"
#include "dialprobe/textmetrics.hpp"

namespace dialprobe {

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Lstm: return "lstm";
    case ModelKind::LstmAttn: return "lstm_attn";
    case ModelKind::BilstmAttn: return "bilstm_attn";
    case ModelKind::Hred: return "hred";
    case ModelKind::Transformer: return "transformer";
  }
  return "?";
}

std::optional<ModelKind> model_kind_from_name(const std::string& name) {
  for (ModelKind k : {ModelKind::Lstm, ModelKind::LstmAttn, ModelKind::BilstmAttn,
                      ModelKind::Hred, ModelKind::Transformer})
    if (name == model_kind_name(k)) return k;
  return std::nullopt;
}

bool is_recurrent(ModelKind kind) { return kind != ModelKind::Transformer; }

ModelConfig ModelConfig::paper_scale(ModelKind kind, int vocab_size, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.vocab_size = vocab_size;
  cfg.seed = seed;
  if (kind == ModelKind::Transformer) {
    cfg.embedding_dim = 512;
    cfg.hidden_dim = 512;
    cfg.num_layers = 4;
    cfg.num_heads = 2;
  } else {
    cfg.embedding_dim = 128;
    cfg.hidden_dim = 256;
    cfg.num_layers = 2;
  }
  return cfg;
}

ModelConfig ModelConfig::desk_scale(ModelKind kind, int vocab_size, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.vocab_size = vocab_size;
  cfg.seed = seed;
  cfg.embedding_dim = kind == ModelKind::Transformer ? 64 : 32;
  cfg.hidden_dim = 64;
  cfg.num_layers = kind == ModelKind::Transformer ? 4 : 2;
  cfg.num_heads = 2;
  return cfg;
}

std::string Stage::tag() const {
  switch (kind) {
    case Kind::Untrained: return "untrained";
    case Kind::Epoch: return "epoch" + std::to_string(epoch_index);
    case Kind::BestBleu: return "bestbleu";
    case Kind::LastEpoch: return "lastepoch";
  }
  return "?";
}

std::string Stage::display() const {
  switch (kind) {
    case Kind::Untrained: return "Untrained";
    case Kind::Epoch: return "Epoch " + std::to_string(epoch_index);
    case Kind::BestBleu: return "BestBLEU";
    case Kind::LastEpoch: return "LastEpoch";
  }
  return "?";
}

int Stage::sort_rank() const {
  switch (kind) {
    case Kind::Untrained: return 0;
    case Kind::Epoch: return 1 + epoch_index;
    case Kind::BestBleu: return 1 << 20;
    case Kind::LastEpoch: return (1 << 20) + 1;
  }
  return 0;
}

std::optional<Stage> Stage::from_tag(const std::string& tag) {
  if (tag == "untrained") return untrained();
  if (tag == "bestbleu") return best_bleu();
  if (tag == "lastepoch") return last_epoch();
  if (tag.rfind("epoch", 0) == 0) {
    try {
      return epoch(std::stoi(tag.substr(5)));
    } catch (...) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

// --- Net --------------------------------------------------------------------

template <class S>
gk::Buffer<S>& Net<S>::add_param(const std::string& name, int rows, int cols) {
  params_.emplace_back(name, gk::Buffer<S>(rows, cols));
  return params_.back().second;
}

template <class S>
gk::Buffer<S>& Net<S>::param(const std::string& name) {
  for (auto& [n, buf] : params_)
    if (n == name) return buf;
  throw StateError("unknown parameter " + name);
}

template <class S>
std::size_t Net<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, buf] : params_) n += buf.size();
  return n;
}

template <class S>
Net<S>::Net(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg_.vocab_size < Vocabulary::kNumSpecials)
    throw ConfigError("vocab_size must cover the reserved specials");
  if (cfg_.hidden_dim <= 0 || cfg_.embedding_dim <= 0 || cfg_.num_layers <= 0)
    throw ConfigError("model dimensions must be positive");
  if (cfg_.kind == ModelKind::Transformer) {
    if (cfg_.embedding_dim != cfg_.hidden_dim)
      throw ConfigError("transformer requires embedding_dim == hidden_dim");
    if (cfg_.hidden_dim % cfg_.num_heads != 0)
      throw ConfigError("transformer hidden_dim must divide by num_heads");
    if (cfg_.transformer_encoder_layers() < 1)
      throw ConfigError("transformer needs at least 2 layers to split for encoding");
  }
  build();
}

namespace {

// Registration helpers; initialization happens afterwards in registration
// order from a single seeded stream, so (config, seed) fully determines every
// parameter byte.
template <class S>
void add_lstm_stack(std::vector<std::pair<std::string, gk::Buffer<S>>>& params,
                    const std::string& prefix, int layers, int input_dim, int hidden) {
  for (int l = 0; l < layers; ++l) {
    int in = l == 0 ? input_dim : hidden;
    params.emplace_back(prefix + ".l" + std::to_string(l) + ".w_ih",
                        gk::Buffer<S>(in, 4 * hidden));
    params.emplace_back(prefix + ".l" + std::to_string(l) + ".w_hh",
                        gk::Buffer<S>(hidden, 4 * hidden));
    params.emplace_back(prefix + ".l" + std::to_string(l) + ".b", gk::Buffer<S>(1, 4 * hidden));
  }
}

template <class S>
void add_attention(std::vector<std::pair<std::string, gk::Buffer<S>>>& params, int hidden) {
  params.emplace_back("attn.w_s", gk::Buffer<S>(hidden, hidden));
  params.emplace_back("attn.w_h", gk::Buffer<S>(hidden, hidden));
  params.emplace_back("attn.v", gk::Buffer<S>(hidden, 1));
}

template <class S>
void add_transformer_block(std::vector<std::pair<std::string, gk::Buffer<S>>>& params,
                           const std::string& prefix, int hidden) {
  for (const char* p : {"wq", "wk", "wv", "wo"})
    params.emplace_back(prefix + "." + p, gk::Buffer<S>(hidden, hidden));
  for (const char* p : {"bq", "bk", "bv", "bo"})
    params.emplace_back(prefix + "." + p, gk::Buffer<S>(1, hidden));
}

template <class S>
void add_layer_norm(std::vector<std::pair<std::string, gk::Buffer<S>>>& params,
                    const std::string& prefix, int hidden) {
  params.emplace_back(prefix + ".g", gk::Buffer<S>(1, hidden));
  params.emplace_back(prefix + ".b", gk::Buffer<S>(1, hidden));
}

bool is_layer_norm_gain(const std::string& name) {
  return name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0 &&
         name.find("ln") != std::string::npos;
}

bool is_embedding(const std::string& name) { return name.find("embed") != std::string::npos; }

}  // namespace

template <class S>
void Net<S>::build() {
  int e = cfg_.embedding_dim;
  int h = cfg_.hidden_dim;
  int v = cfg_.vocab_size;

  params_.emplace_back("enc_embed", gk::Buffer<S>(v, e));
  params_.emplace_back("dec_embed", gk::Buffer<S>(v, e));

  switch (cfg_.kind) {
    case ModelKind::Lstm:
      add_lstm_stack(params_, "enc", cfg_.num_layers, e, h);
      add_lstm_stack(params_, "dec", cfg_.num_layers, e, h);
      break;
    case ModelKind::LstmAttn:
      add_lstm_stack(params_, "enc", cfg_.num_layers, e, h);
      add_lstm_stack(params_, "dec", cfg_.num_layers, e + h, h);
      add_attention(params_, h);
      break;
    case ModelKind::BilstmAttn:
      add_lstm_stack(params_, "encf", cfg_.num_layers, e, h);
      add_lstm_stack(params_, "encb", cfg_.num_layers, e, h);
      add_lstm_stack(params_, "dec", cfg_.num_layers, e + h, h);
      add_attention(params_, h);
      break;
    case ModelKind::Hred:
      add_lstm_stack(params_, "sent", cfg_.num_layers, e, h);
      add_lstm_stack(params_, "ctx", cfg_.num_layers, h, h);
      add_lstm_stack(params_, "dec", cfg_.num_layers, e + h, h);
      add_attention(params_, h);
      break;
    case ModelKind::Transformer: {
      int enc_layers = cfg_.transformer_encoder_layers();
      int dec_layers = cfg_.num_layers - enc_layers;
      int f = cfg_.transformer_ffn_dim();
      for (int l = 0; l < enc_layers; ++l) {
        std::string p = "enc.l" + std::to_string(l);
        add_layer_norm(params_, p + ".ln1", h);
        add_transformer_block(params_, p + ".self", h);
        add_layer_norm(params_, p + ".ln2", h);
        params_.emplace_back(p + ".w1", gk::Buffer<S>(h, f));
        params_.emplace_back(p + ".b1", gk::Buffer<S>(1, f));
        params_.emplace_back(p + ".w2", gk::Buffer<S>(f, h));
        params_.emplace_back(p + ".b2", gk::Buffer<S>(1, h));
      }
      add_layer_norm(params_, "enc.ln", h);
      for (int l = 0; l < dec_layers; ++l) {
        std::string p = "dec.l" + std::to_string(l);
        add_layer_norm(params_, p + ".ln1", h);
        add_transformer_block(params_, p + ".self", h);
        add_layer_norm(params_, p + ".ln2", h);
        add_transformer_block(params_, p + ".cross", h);
        add_layer_norm(params_, p + ".ln3", h);
        params_.emplace_back(p + ".w1", gk::Buffer<S>(h, f));
        params_.emplace_back(p + ".b1", gk::Buffer<S>(1, f));
        params_.emplace_back(p + ".w2", gk::Buffer<S>(f, h));
        params_.emplace_back(p + ".b2", gk::Buffer<S>(1, h));
      }
      add_layer_norm(params_, "dec.ln", h);
      break;
    }
  }

  params_.emplace_back("out_w", gk::Buffer<S>(h, v));
  params_.emplace_back("out_b", gk::Buffer<S>(1, v));

  Rng rng(cfg_.seed);
  for (auto& [name, buf] : params_) {
    if (is_embedding(name)) {
      gk::init_embedding(buf, rng);
    } else if (is_layer_norm_gain(name)) {
      std::fill(buf.v.begin(), buf.v.end(), S(1));
    } else if (buf.rows == 1) {
      // biases start at zero; LSTM forget gates get the +1 stabilizer
      std::fill(buf.v.begin(), buf.v.end(), S(0));
      if (name.ends_with(".b") && buf.cols == 4 * cfg_.hidden_dim &&
          name.find("ln") == std::string::npos && name.find("attn") == std::string::npos) {
        for (int j = cfg_.hidden_dim; j < 2 * cfg_.hidden_dim; ++j) buf.v[static_cast<std::size_t>(j)] = S(1);
      }
    } else {
      gk::init_dense(buf, buf.rows, rng);
    }
  }
}

// --- forward graphs ----------------------------------------------------

namespace {

template <class S>
struct Binder {
  gk::Tape<S>& tape;
  Net<S>& net;
  std::map<std::string, typename gk::Tape<S>::H> bound;

  typename gk::Tape<S>::H operator()(const std::string& name) {
    auto it = bound.find(name);
    if (it != bound.end()) return it->second;
    auto h = tape.leaf(net.param(name));
    bound.emplace(name, h);
    return h;
  }
};

template <class S>
struct StackState {
  std::vector<typename gk::Tape<S>::H> h;
  std::vector<typename gk::Tape<S>::H> c;
};

// One cell update for a whole stack; x is [B, input_dim]. mask (optional
// [B,1] constant of 0/1) freezes finished rows so final states are exact for
// right-padded batches. Returns the new top-layer hidden state.
template <class S>
typename gk::Tape<S>::H stack_step(gk::Tape<S>& t, Binder<S>& bind, const std::string& prefix,
                                   int layers, int hidden, typename gk::Tape<S>::H x,
                                   StackState<S>& state, typename gk::Tape<S>::H mask,
                                   typename gk::Tape<S>::H inv_mask) {
  using H = typename gk::Tape<S>::H;
  H input = x;
  for (int l = 0; l < layers; ++l) {
    std::string p = prefix + ".l" + std::to_string(l);
    H gates = t.add_rowvec(
        t.add(t.matmul(input, bind(p + ".w_ih")), t.matmul(state.h[static_cast<std::size_t>(l)], bind(p + ".w_hh"))),
        bind(p + ".b"));
    H gi = t.sigmoid(t.slice_cols(gates, 0, hidden));
    H gf = t.sigmoid(t.slice_cols(gates, hidden, 2 * hidden));
    H gg = t.tanh(t.slice_cols(gates, 2 * hidden, 3 * hidden));
    H go = t.sigmoid(t.slice_cols(gates, 3 * hidden, 4 * hidden));
    H c_new = t.add(t.mul(gf, state.c[static_cast<std::size_t>(l)]), t.mul(gi, gg));
    H h_new = t.mul(go, t.tanh(c_new));
    if (mask >= 0) {
      c_new = t.add(t.mul_colvec(c_new, mask),
                    t.mul_colvec(state.c[static_cast<std::size_t>(l)], inv_mask));
      h_new = t.add(t.mul_colvec(h_new, mask),
                    t.mul_colvec(state.h[static_cast<std::size_t>(l)], inv_mask));
    }
    state.c[static_cast<std::size_t>(l)] = c_new;
    state.h[static_cast<std::size_t>(l)] = h_new;
    input = h_new;
  }
  return state.h.back();
}

template <class S>
StackState<S> zero_state(gk::Tape<S>& t, int layers, int batch, int hidden) {
  StackState<S> state;
  for (int l = 0; l < layers; ++l) {
    state.h.push_back(t.constant_fill(batch, hidden, S(0)));
    state.c.push_back(t.constant_fill(batch, hidden, S(0)));
  }
  return state;
}

struct PaddedBatch {
  int batch = 0;
  int enc_len = 0;
  int dec_len = 0;
  std::vector<std::vector<int>> enc_ids;     // [enc_len][batch]
  std::vector<std::vector<int>> dec_in;      // [dec_len][batch]
  std::vector<std::vector<int>> dec_target;  // [dec_len][batch], PAD = ignore
  std::vector<int> lengths;                  // true encoder lengths
  bool uniform_length = true;
  int real_tokens = 0;
};

PaddedBatch pad_batch(const std::vector<EncodedExample>& batch) {
  PaddedBatch out;
  out.batch = static_cast<int>(batch.size());
  for (const auto& ex : batch) {
    int len = static_cast<int>(ex.context_ids.empty() ? 1 : ex.context_ids.size());
    out.lengths.push_back(len);
    out.enc_len = std::max(out.enc_len, len);
    out.dec_len = std::max(out.dec_len, static_cast<int>(ex.target_ids.size()) + 1);  // +EOS
  }
  for (int len : out.lengths) out.uniform_length &= len == out.lengths[0];

  out.enc_ids.assign(static_cast<std::size_t>(out.enc_len),
                     std::vector<int>(static_cast<std::size_t>(out.batch), Vocabulary::kPad));
  out.dec_in.assign(static_cast<std::size_t>(out.dec_len),
                    std::vector<int>(static_cast<std::size_t>(out.batch), Vocabulary::kPad));
  out.dec_target.assign(static_cast<std::size_t>(out.dec_len),
                        std::vector<int>(static_cast<std::size_t>(out.batch), Vocabulary::kPad));
  for (int b = 0; b < out.batch; ++b) {
    const auto& ex = batch[static_cast<std::size_t>(b)];
    if (ex.context_ids.empty()) {
      out.enc_ids[0][static_cast<std::size_t>(b)] = Vocabulary::kBos;
    } else {
      for (std::size_t t = 0; t < ex.context_ids.size(); ++t)
        out.enc_ids[t][static_cast<std::size_t>(b)] = ex.context_ids[t];
    }
    out.dec_in[0][static_cast<std::size_t>(b)] = Vocabulary::kBos;
    for (std::size_t t = 0; t < ex.target_ids.size(); ++t) {
      out.dec_target[t][static_cast<std::size_t>(b)] = ex.target_ids[t];
      if (t + 1 < static_cast<std::size_t>(out.dec_len))
        out.dec_in[t + 1][static_cast<std::size_t>(b)] = ex.target_ids[t];
    }
    out.dec_target[ex.target_ids.size()][static_cast<std::size_t>(b)] = Vocabulary::kEos;
    out.real_tokens += static_cast<int>(ex.target_ids.size()) + 1;
  }
  return out;
}

template <class S>
struct EncoderRun {
  std::vector<typename gk::Tape<S>::H> step_states;  // top layer per step, [B,H]
  StackState<S> final_state;
  typename gk::Tape<S>::H attn_bias = -1;  // [B,T] 0 / -1e9 for padded positions
};

// Shared unidirectional LSTM encoder over a padded batch. `reverse` runs the
// steps back-to-front (padded tail first, which the masks keep frozen at the
// zero state until each row's real suffix begins).
template <class S>
EncoderRun<S> run_lstm_encoder(gk::Tape<S>& t, Binder<S>& bind, const std::string& prefix,
                               const ModelConfig& cfg, const PaddedBatch& pb, bool reverse) {
  using H = typename gk::Tape<S>::H;
  EncoderRun<S> run;
  run.final_state = zero_state(t, cfg.num_layers, pb.batch, cfg.hidden_dim);
  run.step_states.resize(static_cast<std::size_t>(pb.enc_len));
  H embed_tbl = bind("enc_embed");

  std::vector<S> mask_row(static_cast<std::size_t>(pb.batch));
  for (int step = 0; step < pb.enc_len; ++step) {
    int tpos = reverse ? pb.enc_len - 1 - step : step;
    H x = t.embed(embed_tbl, pb.enc_ids[static_cast<std::size_t>(tpos)]);
    H mask = -1;
    H inv_mask = -1;
    if (!pb.uniform_length) {
      for (int b = 0; b < pb.batch; ++b)
        mask_row[static_cast<std::size_t>(b)] =
            tpos < pb.lengths[static_cast<std::size_t>(b)] ? S(1) : S(0);
      mask = t.constant(pb.batch, 1, mask_row.data());
      for (auto& m : mask_row) m = S(1) - m;
      inv_mask = t.constant(pb.batch, 1, mask_row.data());
    }
    H top = stack_step(t, bind, prefix, cfg.num_layers, cfg.hidden_dim, x, run.final_state, mask,
                       inv_mask);
    run.step_states[static_cast<std::size_t>(tpos)] = top;
  }

  if (!pb.uniform_length) {
    std::vector<S> bias(static_cast<std::size_t>(pb.batch) * pb.enc_len, S(0));
    for (int b = 0; b < pb.batch; ++b)
      for (int tt = pb.lengths[static_cast<std::size_t>(b)]; tt < pb.enc_len; ++tt)
        bias[static_cast<std::size_t>(b) * pb.enc_len + tt] = S(-1e9);
    run.attn_bias = t.constant(pb.batch, pb.enc_len, bias.data());
  }
  return run;
}

// Additive attention: alpha = softmax(v^T tanh(W_s s + W_h h_j)), context =
// sum_j alpha_j h_j.
template <class S>
typename gk::Tape<S>::H attention_context(
    gk::Tape<S>& t, Binder<S>& bind, typename gk::Tape<S>::H s_prev,
    const std::vector<typename gk::Tape<S>::H>& enc_states,
    const std::vector<typename gk::Tape<S>::H>& enc_proj, typename gk::Tape<S>::H attn_bias,
    std::type_identity_t<std::vector<std::vector<S>>>* attention_rows) {
  using H = typename gk::Tape<S>::H;
  H query = t.matmul(s_prev, bind("attn.w_s"));
  std::vector<H> scores;
  scores.reserve(enc_states.size());
  for (std::size_t j = 0; j < enc_states.size(); ++j)
    scores.push_back(t.matmul(t.tanh(t.add(query, enc_proj[j])), bind("attn.v")));
  H score_mat = t.concat_cols(scores);
  if (attn_bias >= 0) score_mat = t.add(score_mat, attn_bias);
  H alpha = t.softmax_rows(score_mat);
  if (attention_rows) {
    auto vals = t.read(alpha);
    auto shape = t.shape(alpha);
    for (int b = 0; b < shape.rows; ++b)
      attention_rows->emplace_back(vals.begin() + static_cast<std::size_t>(b) * shape.cols,
                                   vals.begin() + static_cast<std::size_t>(b + 1) * shape.cols);
  }
  return t.weighted_sum(enc_states, alpha);
}

struct DecodeSetup {
  bool use_attention = false;
};

// The decoder's hidden states start from the encoder's final hidden states;
// cell states start at zero, so everything the decoder learns from the
// context flows through the probed hidden vector.
template <class S>
StackState<S> decoder_init(gk::Tape<S>& t, const StackState<S>& encoder_final, int batch,
                           int hidden) {
  StackState<S> init;
  init.h = encoder_final.h;
  for (std::size_t l = 0; l < encoder_final.c.size(); ++l)
    init.c.push_back(t.constant_fill(batch, hidden, S(0)));
  return init;
}

// Teacher-forced decoder shared by the recurrent architectures; returns the
// summed masked NLL handle.
template <class S>
typename gk::Tape<S>::H run_decoder(gk::Tape<S>& t, Binder<S>& bind, const ModelConfig& cfg,
                                    const PaddedBatch& pb, StackState<S> state,
                                    const EncoderRun<S>* enc, DecodeSetup setup,
                                    std::vector<std::vector<S>>* attention_rows) {
  using H = typename gk::Tape<S>::H;
  H embed_tbl = bind("dec_embed");
  H out_w = bind("out_w");
  H out_b = bind("out_b");

  std::vector<H> enc_proj;
  if (setup.use_attention) {
    enc_proj.reserve(enc->step_states.size());
    for (H hs : enc->step_states) enc_proj.push_back(t.matmul(hs, bind("attn.w_h")));
  }

  H loss = t.constant_fill(1, 1, S(0));
  for (int step = 0; step < pb.dec_len; ++step) {
    H x = t.embed(embed_tbl, pb.dec_in[static_cast<std::size_t>(step)]);
    H input = x;
    if (setup.use_attention) {
      H ctx = attention_context(t, bind, state.h.back(), enc->step_states, enc_proj,
                                enc->attn_bias, attention_rows);
      input = t.concat_cols({x, ctx});
    }
    H top = stack_step(t, bind, "dec", cfg.num_layers, cfg.hidden_dim, input, state, -1, -1);
    H logits = t.add_rowvec(t.matmul(top, out_w), out_b);
    loss = t.add(loss, t.cross_entropy(logits, pb.dec_target[static_cast<std::size_t>(step)],
                                       Vocabulary::kPad));
  }
  return loss;
}

// --- transformer (per example) ---------------------------------------------

template <class S>
std::vector<S> sinusoidal_encoding(int positions, int dim) {
  std::vector<S> pe(static_cast<std::size_t>(positions) * dim);
  for (int pos = 0; pos < positions; ++pos)
    for (int i = 0; i < dim; ++i) {
      double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / dim);
      pe[static_cast<std::size_t>(pos) * dim + i] =
          static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

template <class S>
typename gk::Tape<S>::H multi_head_attention(gk::Tape<S>& t, Binder<S>& bind,
                                             const std::string& prefix, int heads, int hidden,
                                             typename gk::Tape<S>::H x_q,
                                             typename gk::Tape<S>::H x_kv, bool causal) {
  using H = typename gk::Tape<S>::H;
  H q = t.add_rowvec(t.matmul(x_q, bind(prefix + ".wq")), bind(prefix + ".bq"));
  H k = t.add_rowvec(t.matmul(x_kv, bind(prefix + ".wk")), bind(prefix + ".bk"));
  H v = t.add_rowvec(t.matmul(x_kv, bind(prefix + ".wv")), bind(prefix + ".bv"));
  int dh = hidden / heads;
  int q_len = t.shape(x_q).rows;
  int kv_len = t.shape(x_kv).rows;

  H causal_bias = -1;
  if (causal) {
    std::vector<S> bias(static_cast<std::size_t>(q_len) * kv_len, S(0));
    for (int i = 0; i < q_len; ++i)
      for (int j = i + 1; j < kv_len; ++j)
        bias[static_cast<std::size_t>(i) * kv_len + j] = S(-1e9);
    causal_bias = t.constant(q_len, kv_len, bias.data());
  }

  std::vector<H> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int head = 0; head < heads; ++head) {
    H qh = t.slice_cols(q, head * dh, (head + 1) * dh);
    H kh = t.slice_cols(k, head * dh, (head + 1) * dh);
    H vh = t.slice_cols(v, head * dh, (head + 1) * dh);
    H scores = t.scale(t.matmul_nt(qh, kh), S(1.0 / std::sqrt(static_cast<double>(dh))));
    if (causal_bias >= 0) scores = t.add(scores, causal_bias);
    head_outputs.push_back(t.matmul(t.softmax_rows(scores), vh));
  }
  H merged = t.concat_cols(head_outputs);
  return t.add_rowvec(t.matmul(merged, bind(prefix + ".wo")), bind(prefix + ".bo"));
}

template <class S>
typename gk::Tape<S>::H ffn_block(gk::Tape<S>& t, Binder<S>& bind, const std::string& prefix,
                                  typename gk::Tape<S>::H x) {
  using H = typename gk::Tape<S>::H;
  H a = t.relu(t.add_rowvec(t.matmul(x, bind(prefix + ".w1")), bind(prefix + ".b1")));
  return t.add_rowvec(t.matmul(a, bind(prefix + ".w2")), bind(prefix + ".b2"));
}

template <class S>
typename gk::Tape<S>::H ln(gk::Tape<S>& t, Binder<S>& bind, const std::string& prefix,
                           typename gk::Tape<S>::H x) {
  return t.layer_norm(x, bind(prefix + ".g"), bind(prefix + ".b"));
}

template <class S>
typename gk::Tape<S>::H transformer_embed(gk::Tape<S>& t, Binder<S>& bind, const char* table,
                                          const std::vector<int>& ids, const ModelConfig& cfg) {
  using H = typename gk::Tape<S>::H;
  int len = static_cast<int>(ids.size());
  H x = t.scale(t.embed(bind(table), ids), S(std::sqrt(static_cast<double>(cfg.hidden_dim))));
  auto pe = sinusoidal_encoding<S>(len, cfg.hidden_dim);
  return t.add(x, t.constant(len, cfg.hidden_dim, pe.data()));
}

// Pre-norm residual stack; returns the normalized final encoder states [T,H].
template <class S>
typename gk::Tape<S>::H transformer_encode_graph(gk::Tape<S>& t, Binder<S>& bind,
                                                 const ModelConfig& cfg,
                                                 const std::vector<int>& ids) {
  using H = typename gk::Tape<S>::H;
  H x = transformer_embed(t, bind, "enc_embed", ids, cfg);
  for (int l = 0; l < cfg.transformer_encoder_layers(); ++l) {
    std::string p = "enc.l" + std::to_string(l);
    H xn = ln(t, bind, p + ".ln1", x);
    x = t.add(x, multi_head_attention(t, bind, p + ".self", cfg.num_heads, cfg.hidden_dim, xn, xn,
                                      false));
    x = t.add(x, ffn_block(t, bind, p, ln(t, bind, p + ".ln2", x)));
  }
  return ln(t, bind, "enc.ln", x);
}

template <class S>
typename gk::Tape<S>::H transformer_decode_logits(gk::Tape<S>& t, Binder<S>& bind,
                                                  const ModelConfig& cfg,
                                                  typename gk::Tape<S>::H enc_out,
                                                  const std::vector<int>& dec_in_ids) {
  using H = typename gk::Tape<S>::H;
  int dec_layers = cfg.num_layers - cfg.transformer_encoder_layers();
  H y = transformer_embed(t, bind, "dec_embed", dec_in_ids, cfg);
  for (int l = 0; l < dec_layers; ++l) {
    std::string p = "dec.l" + std::to_string(l);
    H yn = ln(t, bind, p + ".ln1", y);
    y = t.add(y, multi_head_attention(t, bind, p + ".self", cfg.num_heads, cfg.hidden_dim, yn, yn,
                                      true));
    y = t.add(y, multi_head_attention(t, bind, p + ".cross", cfg.num_heads, cfg.hidden_dim,
                                      ln(t, bind, p + ".ln2", y), enc_out, false));
    y = t.add(y, ffn_block(t, bind, p, ln(t, bind, p + ".ln3", y)));
  }
  y = ln(t, bind, "dec.ln", y);
  return t.add_rowvec(t.matmul(y, bind("out_w")), bind("out_b"));
}

// --- HRED (per example) ------------------------------------------------

// Utterance token ranges inside the (possibly truncated) context window.
std::vector<std::pair<int, int>> utterance_spans(const std::vector<int>& ids,
                                                 const std::vector<int>& offsets) {
  std::vector<std::pair<int, int>> spans;
  int n = static_cast<int>(ids.size());
  for (std::size_t u = 0; u < offsets.size(); ++u) {
    int start = offsets[u];
    int end = u + 1 < offsets.size() ? offsets[u + 1] : n;
    if (end > start) spans.emplace_back(start, end);
  }
  if (spans.empty() && n > 0) spans.emplace_back(0, n);
  return spans;
}

// Sentence encoder over each utterance feeding the context encoder; returns
// per-utterance context-encoder states plus the final stack state.
template <class S>
EncoderRun<S> run_hred_encoder(gk::Tape<S>& t, Binder<S>& bind, const ModelConfig& cfg,
                               const std::vector<int>& ids, const std::vector<int>& offsets) {
  using H = typename gk::Tape<S>::H;
  std::vector<int> safe_ids = ids.empty() ? std::vector<int>{Vocabulary::kBos} : ids;
  auto spans = utterance_spans(safe_ids, offsets.empty() ? std::vector<int>{0} : offsets);

  H embed_tbl = bind("enc_embed");
  std::vector<H> utterance_vecs;
  for (auto [start, end] : spans) {
    StackState<S> state = zero_state(t, cfg.num_layers, 1, cfg.hidden_dim);
    H top = -1;
    for (int pos = start; pos < end; ++pos) {
      H x = t.embed(embed_tbl, {safe_ids[static_cast<std::size_t>(pos)]});
      top = stack_step(t, bind, "sent", cfg.num_layers, cfg.hidden_dim, x, state, -1, -1);
    }
    utterance_vecs.push_back(top);
  }

  EncoderRun<S> run;
  run.final_state = zero_state(t, cfg.num_layers, 1, cfg.hidden_dim);
  for (H u : utterance_vecs) {
    H top = stack_step(t, bind, "ctx", cfg.num_layers, cfg.hidden_dim, u, run.final_state, -1, -1);
    run.step_states.push_back(top);
  }
  return run;
}

}  // namespace

// --- Net public methods -------------------------------------------------

template <class S>
std::pair<typename gk::Tape<S>::H, int> Net<S>::batch_loss(
    gk::Tape<S>& tape, const std::vector<EncodedExample>& batch,
    std::vector<std::vector<S>>* attention_rows) {
  using H = typename gk::Tape<S>::H;
  if (batch.empty()) throw StateError("batch_loss: empty batch");
  Binder<S> bind{tape, *this, {}};

  switch (cfg_.kind) {
    case ModelKind::Lstm:
    case ModelKind::LstmAttn: {
      PaddedBatch pb = pad_batch(batch);
      EncoderRun<S> enc = run_lstm_encoder(tape, bind, "enc", cfg_, pb, false);
      DecodeSetup setup{cfg_.kind == ModelKind::LstmAttn};
      H loss = run_decoder(tape, bind, cfg_, pb,
                           decoder_init(tape, enc.final_state, pb.batch, cfg_.hidden_dim), &enc,
                           setup, attention_rows);
      return {loss, pb.real_tokens};
    }
    case ModelKind::BilstmAttn: {
      PaddedBatch pb = pad_batch(batch);
      EncoderRun<S> fwd = run_lstm_encoder(tape, bind, "encf", cfg_, pb, false);
      EncoderRun<S> bwd = run_lstm_encoder(tape, bind, "encb", cfg_, pb, true);
      EncoderRun<S> merged;
      merged.attn_bias = fwd.attn_bias;
      for (std::size_t j = 0; j < fwd.step_states.size(); ++j)
        merged.step_states.push_back(tape.add(fwd.step_states[j], bwd.step_states[j]));
      StackState<S> summed;
      for (int l = 0; l < cfg_.num_layers; ++l) {
        summed.h.push_back(tape.add(fwd.final_state.h[static_cast<std::size_t>(l)],
                                    bwd.final_state.h[static_cast<std::size_t>(l)]));
        summed.c.push_back(fwd.final_state.c[static_cast<std::size_t>(l)]);  // unused by init
      }
      H loss = run_decoder(tape, bind, cfg_, pb,
                           decoder_init(tape, summed, pb.batch, cfg_.hidden_dim), &merged,
                           DecodeSetup{true}, attention_rows);
      return {loss, pb.real_tokens};
    }
    case ModelKind::Hred: {
      H total = tape.constant_fill(1, 1, S(0));
      int tokens = 0;
      for (const auto& ex : batch) {
        EncoderRun<S> enc = run_hred_encoder(tape, bind, cfg_, ex.context_ids,
                                             ex.utterance_offsets);
        std::vector<EncodedExample> one = {ex};
        PaddedBatch pb = pad_batch(one);
        H loss = run_decoder(tape, bind, cfg_, pb,
                             decoder_init(tape, enc.final_state, 1, cfg_.hidden_dim), &enc,
                             DecodeSetup{true}, attention_rows);
        total = tape.add(total, loss);
        tokens += pb.real_tokens;
      }
      return {total, tokens};
    }
    case ModelKind::Transformer: {
      H total = tape.constant_fill(1, 1, S(0));
      int tokens = 0;
      for (const auto& ex : batch) {
        std::vector<int> enc_ids =
            ex.context_ids.empty() ? std::vector<int>{Vocabulary::kBos} : ex.context_ids;
        std::vector<int> dec_in = {Vocabulary::kBos};
        dec_in.insert(dec_in.end(), ex.target_ids.begin(), ex.target_ids.end());
        std::vector<int> targets = ex.target_ids;
        targets.push_back(Vocabulary::kEos);
        H enc_out = transformer_encode_graph(tape, bind, cfg_, enc_ids);
        H logits = transformer_decode_logits(tape, bind, cfg_, enc_out, dec_in);
        total = tape.add(total, tape.cross_entropy(logits, targets, Vocabulary::kPad));
        tokens += static_cast<int>(targets.size());
      }
      return {total, tokens};
    }
  }
  throw StateError("batch_loss: unknown model kind");
}

template <class S>
std::vector<S> Net<S>::encode(const std::vector<int>& context_ids,
                              const std::vector<int>& utterance_offsets) {
  gk::Tape<S> tape;
  Binder<S> bind{tape, *this, {}};
  using H = typename gk::Tape<S>::H;

  std::vector<int> ids = context_ids.empty() ? std::vector<int>{Vocabulary::kBos} : context_ids;
  EncodedExample ex;
  ex.context_ids = ids;
  std::vector<EncodedExample> one = {ex};

  switch (cfg_.kind) {
    case ModelKind::Lstm:
    case ModelKind::LstmAttn: {
      PaddedBatch pb = pad_batch(one);
      EncoderRun<S> enc = run_lstm_encoder(tape, bind, "enc", cfg_, pb, false);
      return tape.read(enc.final_state.h.back());
    }
    case ModelKind::BilstmAttn: {
      PaddedBatch pb = pad_batch(one);
      EncoderRun<S> fwd = run_lstm_encoder(tape, bind, "encf", cfg_, pb, false);
      EncoderRun<S> bwd = run_lstm_encoder(tape, bind, "encb", cfg_, pb, true);
      return tape.read(tape.add(fwd.final_state.h.back(), bwd.final_state.h.back()));
    }
    case ModelKind::Hred: {
      EncoderRun<S> enc = run_hred_encoder(tape, bind, cfg_, ids, utterance_offsets);
      return tape.read(enc.final_state.h.back());
    }
    case ModelKind::Transformer: {
      H enc_out = transformer_encode_graph(tape, bind, cfg_, ids);
      auto shape = tape.shape(enc_out);
      if (cfg_.transformer_pool_last)
        return tape.read(tape.slice_rows(enc_out, shape.rows - 1, shape.rows));
      return tape.read(tape.scale(
          tape.matmul(tape.constant_fill(1, shape.rows, S(1)), enc_out),
          S(1.0 / static_cast<double>(shape.rows))));
    }
  }
  throw StateError("encode: unknown model kind");
}

template <class S>
std::vector<int> Net<S>::decode_greedy(const std::vector<int>& context_ids,
                                       const std::vector<int>& utterance_offsets, int max_len) {
  using H = typename gk::Tape<S>::H;
  std::vector<int> out;
  if (max_len <= 0) return out;

  if (cfg_.kind == ModelKind::Transformer) {
    std::vector<int> enc_ids =
        context_ids.empty() ? std::vector<int>{Vocabulary::kBos} : context_ids;
    std::vector<int> dec_in = {Vocabulary::kBos};
    for (int step = 0; step < max_len; ++step) {
      gk::Tape<S> tape;
      Binder<S> bind{tape, *this, {}};
      H enc_out = transformer_encode_graph(tape, bind, cfg_, enc_ids);
      H logits = transformer_decode_logits(tape, bind, cfg_, enc_out, dec_in);
      auto shape = tape.shape(logits);
      auto row = tape.read(tape.slice_rows(logits, shape.rows - 1, shape.rows));
      int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == Vocabulary::kEos) break;
      out.push_back(best);
      dec_in.push_back(best);
    }
    return out;
  }

  gk::Tape<S> tape;
  Binder<S> bind{tape, *this, {}};
  EncodedExample ex;
  ex.context_ids = context_ids;
  ex.utterance_offsets = utterance_offsets;
  std::vector<EncodedExample> one = {ex};
  PaddedBatch pb = pad_batch(one);

  EncoderRun<S> enc;
  StackState<S> state;
  if (cfg_.kind == ModelKind::Hred) {
    enc = run_hred_encoder(tape, bind, cfg_, context_ids, utterance_offsets);
    state = decoder_init(tape, enc.final_state, 1, cfg_.hidden_dim);
  } else if (cfg_.kind == ModelKind::BilstmAttn) {
    EncoderRun<S> fwd = run_lstm_encoder(tape, bind, "encf", cfg_, pb, false);
    EncoderRun<S> bwd = run_lstm_encoder(tape, bind, "encb", cfg_, pb, true);
    for (std::size_t j = 0; j < fwd.step_states.size(); ++j)
      enc.step_states.push_back(tape.add(fwd.step_states[j], bwd.step_states[j]));
    StackState<S> summed;
    for (int l = 0; l < cfg_.num_layers; ++l) {
      summed.h.push_back(tape.add(fwd.final_state.h[static_cast<std::size_t>(l)],
                                  bwd.final_state.h[static_cast<std::size_t>(l)]));
      summed.c.push_back(fwd.final_state.c[static_cast<std::size_t>(l)]);
    }
    state = decoder_init(tape, summed, 1, cfg_.hidden_dim);
  } else {
    enc = run_lstm_encoder(tape, bind, "enc", cfg_, pb, false);
    state = decoder_init(tape, enc.final_state, 1, cfg_.hidden_dim);
  }

  bool attention = cfg_.kind != ModelKind::Lstm;
  std::vector<H> enc_proj;
  if (attention)
    for (H hs : enc.step_states) enc_proj.push_back(tape.matmul(hs, bind("attn.w_h")));

  H embed_tbl = bind("dec_embed");
  H out_w = bind("out_w");
  H out_b = bind("out_b");
  int prev = Vocabulary::kBos;
  for (int step = 0; step < max_len; ++step) {
    H x = tape.embed(embed_tbl, {prev});
    H input = x;
    if (attention) {
      H ctx = attention_context(tape, bind, state.h.back(), enc.step_states, enc_proj, -1,
                                nullptr);
      input = tape.concat_cols({x, ctx});
    }
    H top = stack_step(tape, bind, "dec", cfg_.num_layers, cfg_.hidden_dim, input, state, -1, -1);
    auto row = tape.read(tape.add_rowvec(tape.matmul(top, out_w), out_b));
    int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == Vocabulary::kEos) break;
    out.push_back(best);
    prev = best;
  }
  return out;
}

template class Net<float>;
template class Net<double>;

// --- checkpoint conversions ---------------------------------------------

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model(ckpt.config);
  auto& params = model.params();
  if (params.size() != ckpt.params.size())
    throw IntegrityError("checkpoint parameter table does not match architecture");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, src] = ckpt.params[i];
    auto& [expect_name, dst] = params[i];
    if (name != expect_name || src.rows != dst.rows || src.cols != dst.cols)
      throw IntegrityError("checkpoint parameter " + name + " does not match " + expect_name);
    dst.v = src.v;
  }
  return model;
}

Checkpoint make_checkpoint(Model& model, Stage stage, double valid_bleu) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.stage = stage;
  ckpt.seed = model.config().seed;
  ckpt.valid_bleu = valid_bleu;
  for (auto& [name, buf] : model.params()) {
    gk::Buffer<float> copy(buf.rows, buf.cols);
    copy.v = buf.v;
    ckpt.params.emplace_back(name, std::move(copy));
  }
  return ckpt;
}

// --- training ---------------------------------------------------------------

EncodedExample encode_example(const ContextTarget& ct, const Vocabulary& vocab) {
  EncodedExample ex;
  ex.context_ids = vocab.encode(ct.context.tokens);
  ex.utterance_offsets = ct.context.utterance_offsets;
  ex.target_ids = vocab.encode(ct.target);
  return ex;
}

namespace {

std::vector<ContextTarget> corpus_contexts(const std::vector<NormalizedDialogue>& corpus,
                                           int window) {
  std::vector<ContextTarget> out;
  for (const auto& d : corpus) {
    auto cts = make_contexts(d, window);
    out.insert(out.end(), cts.begin(), cts.end());
  }
  return out;
}

}  // namespace

double validation_bleu2(Model& model, const std::vector<NormalizedDialogue>& corpus,
                        const Vocabulary& vocab, int max_decode_len) {
  auto contexts = corpus_contexts(corpus, model.config().context_window);
  if (contexts.empty()) return 0.0;
  std::vector<TokenSeq> candidates;
  std::vector<TokenSeq> references;
  for (const auto& ct : contexts) {
    EncodedExample ex = encode_example(ct, vocab);
    auto ids = model.decode_greedy(ex.context_ids, ex.utterance_offsets, max_decode_len);
    candidates.push_back(vocab.decode(ids));
    references.push_back(ct.target);
  }
  return bleu2(candidates, references).score;
}

TrainResult train_model(Model& model, const std::vector<NormalizedDialogue>& train_corpus,
                        const std::vector<NormalizedDialogue>& valid_corpus,
                        const Vocabulary& vocab, const TrainOptions& options,
                        const std::function<void(const Checkpoint&)>& save) {
  if (train_corpus.empty() || valid_corpus.empty())
    throw ConfigError("training requires non-empty train and validation corpora");
  auto train_contexts = corpus_contexts(train_corpus, model.config().context_window);
  if (train_contexts.empty()) throw ConfigError("training corpus yields no contexts");

  std::vector<EncodedExample> examples;
  examples.reserve(train_contexts.size());
  for (const auto& ct : train_contexts) examples.push_back(encode_example(ct, vocab));

  TrainResult result;
  double bleu0 = validation_bleu2(model, valid_corpus, vocab, options.max_decode_len);
  result.log.push_back({0, std::numeric_limits<double>::quiet_NaN(), bleu0});
  save(make_checkpoint(model, Stage::untrained(), bleu0));

  // in-memory copy of the best-BLEU parameters (starts as the untrained set)
  auto snapshot_params = [&] {
    std::vector<std::vector<float>> copy;
    for (auto& [name, buf] : model.params()) copy.push_back(buf.v);
    return copy;
  };
  std::vector<std::vector<float>> best_params = snapshot_params();
  result.best_epoch = 0;
  result.best_bleu = bleu0;
  bool any_epoch_scored = false;

  std::vector<gk::AdamState<float>> adam(model.params().size());
  std::vector<gk::Buffer<float>*> param_ptrs;
  for (auto& [name, buf] : model.params()) param_ptrs.push_back(&buf);

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= options.epochs && !result.diverged; ++epoch) {
    Rng shuffle_rng = Rng::for_stream(model.config().seed, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::int64_t token_sum = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(options.batch_size)) {
      std::vector<EncodedExample> batch;
      for (std::size_t i = start;
           i < order.size() && i < start + static_cast<std::size_t>(options.batch_size); ++i)
        batch.push_back(examples[order[i]]);

      gk::TapeF tape;
      auto [loss, tokens] = model.batch_loss(tape, batch);
      float loss_value = tape.scalar(loss);
      if (!std::isfinite(loss_value)) {
        result.diverged = true;
        result.diverged_epoch = epoch;
        break;
      }
      tape.backward(loss);
      if (options.grad_clip > 0.0) gk::clip_global_norm(param_ptrs, options.grad_clip);
      for (std::size_t p = 0; p < param_ptrs.size(); ++p)
        gk::adam_step(*param_ptrs[p], adam[p], static_cast<float>(options.learning_rate));
      loss_sum += static_cast<double>(loss_value);
      token_sum += tokens;
    }
    if (result.diverged) break;

    double train_loss = token_sum > 0 ? loss_sum / static_cast<double>(token_sum) : 0.0;
    double bleu = validation_bleu2(model, valid_corpus, vocab, options.max_decode_len);
    result.log.push_back({epoch, train_loss, bleu});

    if (options.snapshot_every > 0 && epoch % options.snapshot_every == 0)
      save(make_checkpoint(model, Stage::epoch(epoch), bleu));

    if (!any_epoch_scored || bleu > result.best_bleu) {
      any_epoch_scored = true;
      result.best_bleu = bleu;
      result.best_epoch = epoch;
      best_params = snapshot_params();
    }
  }

  double last_bleu = result.log.back().valid_bleu2;
  save(make_checkpoint(model, Stage::last_epoch(), last_bleu));

  // BestBLEU materializes from the stored copy without disturbing the model
  Checkpoint best = make_checkpoint(model, Stage::best_bleu(), result.best_bleu);
  for (std::size_t i = 0; i < best.params.size(); ++i) best.params[i].second.v = best_params[i];
  save(best);
  return result;
}

// --- representation caches ----------------------------------------------

ReprCache export_representations(Model& model, const std::vector<NormalizedDialogue>& corpus,
                                 const Vocabulary& vocab) {
  auto contexts = corpus_contexts(corpus, model.config().context_window);
  std::sort(contexts.begin(), contexts.end(), [](const ContextTarget& a, const ContextTarget& b) {
    if (a.context.dialogue_id != b.context.dialogue_id)
      return a.context.dialogue_id < b.context.dialogue_id;
    return a.context.turn_index < b.context.turn_index;
  });

  ReprCache cache;
  cache.dim = model.config().hidden_dim;
  for (const auto& ct : contexts) {
    EncodedExample ex = encode_example(ct, vocab);
    RepresentationRecord rec;
    rec.dialogue_id = ct.context.dialogue_id;
    rec.turn_index = ct.context.turn_index;
    rec.vec = model.encode(ex.context_ids, ex.utterance_offsets);
    if (static_cast<int>(rec.vec.size()) != cache.dim)
      throw IntegrityError("representation dimension mismatch for " + rec.dialogue_id);
    cache.records.push_back(std::move(rec));
  }
  return cache;
}

}  // namespace dialprobe
