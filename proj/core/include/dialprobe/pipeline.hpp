#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dialprobe/runconfig.hpp"

namespace dialprobe {

// Stage layout under out_dir/<config-hash>/: corpus, labels, ckpts, reprs,
// probes, analysis, report. Each stage reads only from earlier directories
// and every command is independently re-runnable.
std::filesystem::path run_dir(const RunConfig& cfg);

void cmd_ingest(const RunConfig& cfg);
void cmd_derive(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_encode(const RunConfig& cfg);
void cmd_probe(const RunConfig& cfg);
void cmd_analyze(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg);

// All stages in order.
void run_all(const RunConfig& cfg);

}  // namespace dialprobe
