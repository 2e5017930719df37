#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "handdiff/config.hpp"

namespace handdiff {

// CLI operations as library entry points. Each writes its artifacts plus a
// provenance file under the output directory and throws Config/Io/Numerical
// errors which the binary maps to exit codes 2/3/4.

struct CommandContext {
    Config config;
    std::string out_dir = ".";
    int jobs = 1;

    // per-command inputs
    std::string corpus_path;    // refine/eval/train: corpus file or directory
    std::string weights_path;   // refine: denoiser weights
    std::string pred_path;      // eval: prediction corpus
    std::string gt_path;        // eval: ground-truth corpus
    std::string pred_column = "clean";  // eval: which pred-corpus column to score
    std::string scenario;       // export-mesh: scenario name
};

void cmd_synth(const CommandContext& ctx);
void cmd_train_diffusion(const CommandContext& ctx);
void cmd_train_fusion(const CommandContext& ctx);
void cmd_refine(const CommandContext& ctx);
void cmd_eval(const CommandContext& ctx);
void cmd_export_mesh(const CommandContext& ctx);
int cmd_selftest(const CommandContext& ctx);  // returns failed check count

// deterministic index-parallel helper: results identical for any job count
void parallel_for_indexed(int64_t count, int jobs, const std::function<void(int64_t)>& fn);

uint64_t file_checksum(const std::string& path);

}  // namespace handdiff
