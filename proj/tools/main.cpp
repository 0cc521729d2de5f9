#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dialprobe/errors.hpp"
#include "dialprobe/pipeline.hpp"
#include "dialprobe/runconfig.hpp"

namespace {

using dialprobe::RunConfig;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string in_path;
  std::string out_dir;
  std::int64_t seed = -1;
  int jobs = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--set", args.overrides, "config override key=value (repeatable)");
  cmd->add_option("--in", args.in_path, "input path (train_path shorthand)");
  cmd->add_option("--out", args.out_dir, "output base directory");
  cmd->add_option("--seed", args.seed, "single training seed (replaces the seeds list)");
  cmd->add_option("--jobs", args.jobs, "max parallel independent runs");
}

RunConfig resolve(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = dialprobe::parse_config_file(args.config_path);
  dialprobe::apply_overrides(cfg, args.overrides);
  if (!args.in_path.empty()) cfg.train_path = args.in_path;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(args.seed)};
  if (args.jobs > 0) cfg.jobs = args.jobs;
  return cfg;
}

int fail(const std::string& type, const std::exception& e, const char* missing = nullptr,
         const char* producer = nullptr) {
  nlohmann::json j;
  j["error"] = type;
  j["message"] = e.what();
  if (missing) j["missing"] = missing;
  if (producer) j["producer"] = producer;
  std::cout << j.dump() << std::endl;
  return 1;
}

int run_command(const std::function<void(const RunConfig&)>& command, const CommonArgs& args) {
  try {
    RunConfig cfg = resolve(args);
    command(cfg);
    return 0;
  } catch (const dialprobe::MissingArtifactError& e) {
    return fail("missing_artifact", e, e.path().c_str(), e.producer().c_str());
  } catch (const dialprobe::ConfigError& e) {
    return fail("config", e);
  } catch (const dialprobe::ParseError& e) {
    return fail("parse", e);
  } catch (const std::exception& e) {
    return fail("internal", e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dialprobe: probe-task evaluation for generative dialogue models"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    void (*fn)(const RunConfig&);
  };
  const std::vector<Sub> subs = {
      {"synth", "generate the synthetic corpus, labels and annotations", nullptr},
      {"ingest", "parse raw corpora into the normalized dialogue format", dialprobe::cmd_ingest},
      {"derive", "derive probe-task labels and the distribution audit", dialprobe::cmd_derive},
      {"train", "train the configured models and save staged checkpoints", dialprobe::cmd_train},
      {"encode", "export encoder representation caches per checkpoint", dialprobe::cmd_encode},
      {"probe", "train probe classifiers and write the results table", dialprobe::cmd_probe},
      {"analyze", "difficulty buckets, PCA projections, evolution curves, bootstrap",
       dialprobe::cmd_analyze},
      {"report", "assemble the human-readable run report", dialprobe::cmd_report},
      {"run", "run every stage in order", dialprobe::run_all},
  };

  std::vector<CommonArgs> args(subs.size());
  std::vector<CLI::App*> cmds;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    CLI::App* cmd = app.add_subcommand(subs[i].name, subs[i].help);
    add_common(cmd, args[i]);
    cmds.push_back(cmd);
  }

  CLI11_PARSE(app, argc, argv);

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!cmds[i]->parsed()) continue;
    if (std::string(subs[i].name) == "synth") {
      // synth is synthetic-format ingestion under another name
      return run_command(
          [](const RunConfig& cfg) {
            RunConfig synth_cfg = cfg;
            synth_cfg.data_format = "synthetic";
            dialprobe::cmd_ingest(synth_cfg);
          },
          args[i]);
    }
    return run_command(subs[i].fn, args[i]);
  }
  return 0;
}
