#include <cmath>
#include <cstring>

#include <json.hpp>

#include "dialprobe/errors.hpp"
#include "dialprobe/io.hpp"
#include "dialprobe/models.hpp"

namespace dialprobe {

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'P', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCacheMagic[4] = {'D', 'P', 'R', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

json config_to_json(const ModelConfig& cfg) {
  json j;
  j["kind"] = model_kind_name(cfg.kind);
  j["vocab_size"] = cfg.vocab_size;
  j["embedding_dim"] = cfg.embedding_dim;
  j["hidden_dim"] = cfg.hidden_dim;
  j["num_layers"] = cfg.num_layers;
  j["num_heads"] = cfg.num_heads;
  j["ffn_dim"] = cfg.ffn_dim;
  j["context_window"] = cfg.context_window;
  j["seed"] = cfg.seed;
  j["transformer_pool_last"] = cfg.transformer_pool_last;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  auto kind = model_kind_from_name(j.at("kind").get<std::string>());
  if (!kind) throw IntegrityError("checkpoint names unknown model kind");
  cfg.kind = *kind;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.embedding_dim = j.at("embedding_dim").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.num_layers = j.at("num_layers").get<int>();
  cfg.num_heads = j.at("num_heads").get<int>();
  cfg.ffn_dim = j.at("ffn_dim").get<int>();
  cfg.context_window = j.at("context_window").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.transformer_pool_last = j.at("transformer_pool_last").get<bool>();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                     const std::string& config_hash) {
  json header;
  header["config"] = config_to_json(ckpt.config);
  header["stage"] = ckpt.stage.tag();
  header["seed"] = ckpt.seed;
  header["valid_bleu"] = ckpt.valid_bleu;
  if (!config_hash.empty()) header["config_hash"] = config_hash;
  json index = json::array();
  std::size_t offset = 0;
  for (const auto& [name, buf] : ckpt.params) {
    index.push_back({{"name", name}, {"rows", buf.rows}, {"cols", buf.cols}, {"offset", offset}});
    offset += buf.size();
  }
  header["params"] = std::move(index);

  std::string out;
  out.append(kCheckpointMagic, 4);
  io::put_u32(out, kCheckpointVersion);
  std::string header_str = header.dump();
  io::put_u32(out, static_cast<std::uint32_t>(header_str.size()));
  out += header_str;
  for (const auto& [name, buf] : ckpt.params)
    for (float v : buf.v) io::put_f32(out, v);
  io::atomic_write(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string data = io::read_file(path);
  if (data.size() < 12 || std::memcmp(data.data(), kCheckpointMagic, 4) != 0)
    throw IntegrityError(path.string() + " is not a checkpoint file");
  std::uint32_t version = io::get_u32(data.data() + 4);
  if (version != kCheckpointVersion)
    throw IntegrityError(path.string() + ": unsupported checkpoint version " +
                         std::to_string(version));
  std::uint32_t header_len = io::get_u32(data.data() + 8);
  if (data.size() < 12 + header_len) throw IntegrityError(path.string() + ": truncated header");
  json header = json::parse(data.substr(12, header_len));

  Checkpoint ckpt;
  ckpt.config = config_from_json(header.at("config"));
  auto stage = Stage::from_tag(header.at("stage").get<std::string>());
  if (!stage) throw IntegrityError(path.string() + ": unknown stage tag");
  ckpt.stage = *stage;
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.valid_bleu = header.at("valid_bleu").get<double>();

  const char* blob = data.data() + 12 + header_len;
  std::size_t blob_floats = (data.size() - 12 - header_len) / 4;
  for (const auto& entry : header.at("params")) {
    std::string name = entry.at("name").get<std::string>();
    int rows = entry.at("rows").get<int>();
    int cols = entry.at("cols").get<int>();
    std::size_t offset = entry.at("offset").get<std::size_t>();
    gk::Buffer<float> buf(rows, cols);
    if (offset + buf.size() > blob_floats)
      throw IntegrityError(path.string() + ": parameter blob truncated at " + name);
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf.v[i] = io::get_f32(blob + (offset + i) * 4);
    ckpt.params.emplace_back(std::move(name), std::move(buf));
  }
  return ckpt;
}

void write_repr_cache(const std::filesystem::path& path, const ReprCache& cache) {
  std::string out;
  out.append(kCacheMagic, 4);
  io::put_u32(out, kCacheVersion);
  io::put_u32(out, static_cast<std::uint32_t>(cache.dim));
  io::put_u32(out, static_cast<std::uint32_t>(cache.records.size()));
  for (const auto& rec : cache.records) {
    if (static_cast<int>(rec.vec.size()) != cache.dim)
      throw IntegrityError("representation record dimension mismatch for " + rec.dialogue_id);
    io::put_u32(out, static_cast<std::uint32_t>(rec.dialogue_id.size()));
    out += rec.dialogue_id;
    io::put_u32(out, static_cast<std::uint32_t>(rec.turn_index));
    for (float v : rec.vec) io::put_f32(out, v);
  }
  io::atomic_write(path, out);
}

ReprCache read_repr_cache(const std::filesystem::path& path) {
  std::string data = io::read_file(path);
  if (data.size() < 16 || std::memcmp(data.data(), kCacheMagic, 4) != 0)
    throw IntegrityError(path.string() + " is not a representation cache");
  std::uint32_t version = io::get_u32(data.data() + 4);
  if (version != kCacheVersion)
    throw IntegrityError(path.string() + ": unsupported cache version");
  ReprCache cache;
  cache.dim = static_cast<int>(io::get_u32(data.data() + 8));
  std::uint32_t count = io::get_u32(data.data() + 12);
  std::size_t pos = 16;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (pos + 4 > data.size()) throw IntegrityError(path.string() + ": truncated record");
    std::uint32_t id_len = io::get_u32(data.data() + pos);
    pos += 4;
    if (pos + id_len + 4 + static_cast<std::size_t>(cache.dim) * 4 > data.size())
      throw IntegrityError(path.string() + ": truncated record");
    RepresentationRecord rec;
    rec.dialogue_id = data.substr(pos, id_len);
    pos += id_len;
    rec.turn_index = static_cast<int>(io::get_u32(data.data() + pos));
    pos += 4;
    rec.vec.resize(static_cast<std::size_t>(cache.dim));
    for (int d = 0; d < cache.dim; ++d) {
      rec.vec[static_cast<std::size_t>(d)] = io::get_f32(data.data() + pos);
      pos += 4;
    }
    cache.records.push_back(std::move(rec));
  }
  return cache;
}

void write_metrics_log(const std::filesystem::path& path, const TrainResult& result,
                       const std::string& config_hash) {
  std::string out;
  if (!config_hash.empty()) out += "# config_hash=" + config_hash + "\n";
  if (result.diverged)
    out += "# diverged_at_epoch=" + std::to_string(result.diverged_epoch) + "\n";
  out += "epoch,train_loss,valid_bleu2\n";
  for (const auto& row : result.log) {
    out += std::to_string(row.epoch);
    out += ',';
    if (!std::isnan(row.train_loss)) out += io::fmt_double(row.train_loss, 6);
    out += ',';
    out += io::fmt_double(row.valid_bleu2, 4);
    out += '\n';
  }
  io::atomic_write(path, out);
}

}  // namespace dialprobe
