#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "handdiff/commands.hpp"
#include "handdiff/error.hpp"

using namespace handdiff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

void apply_common(CommandContext* ctx, const std::string& config_file,
                  const std::vector<std::string>& sets, int64_t seed_override, bool has_seed,
                  const std::string& seed_key) {
    if (!config_file.empty()) ctx->config.load_file(config_file);
    for (const std::string& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        ctx->config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (has_seed) ctx->config.set(seed_key, std::to_string(seed_override));
}

std::string config_keys_help() {
    std::string out = "Config keys (set via --config file or --set key=value):\n";
    for (const auto& k : Config::registry())
        out += "  " + k.name + " (default " + k.default_value + "): " + k.doc + "\n";
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"handdiff: two-hand interaction synthesis, diffusion refinement and evaluation"};
    app.footer(config_keys_help());
    app.require_subcommand(1);

    CommandContext ctx;
    std::string config_file;
    std::vector<std::string> sets;
    int64_t seed = 0;
    bool run_all_selftests = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "key = value config file");
        sub->add_option("--set", sets, "override a config key, key=value")->take_all();
        sub->add_option("--out", ctx.out_dir, "output directory")->capture_default_str();
        sub->add_option("--jobs", ctx.jobs, "worker count; results are identical for any value")
            ->capture_default_str();
    };

    CLI::App* synth = app.add_subcommand("synth", "generate the clean/penetrated corpus splits");
    add_common(synth);
    CLI::Option* synth_seed = synth->add_option("--seed", seed, "shorthand for --set synth.seed=N");

    CLI::App* train_d = app.add_subcommand("train-diffusion", "train the conditional denoiser");
    add_common(train_d);
    train_d->add_option("--corpus", ctx.corpus_path, "directory holding corpus_train/val.txt")->required();

    CLI::App* train_f = app.add_subcommand("train-fusion", "distill the prior-token student encoder");
    add_common(train_f);
    train_f->add_option("--corpus", ctx.corpus_path, "directory holding corpus_train.txt")->required();

    CLI::App* refine = app.add_subcommand("refine", "gate and refine a penetrated corpus");
    add_common(refine);
    refine->add_option("--corpus", ctx.corpus_path, "corpus file with condition states")->required();
    refine->add_option("--weights", ctx.weights_path, "denoiser weights file")->required();

    CLI::App* eval = app.add_subcommand("eval", "score a prediction corpus against ground truth");
    add_common(eval);
    eval->add_option("--pred", ctx.pred_path, "prediction corpus file")->required();
    eval->add_option("--gt", ctx.gt_path, "ground-truth corpus file")->required();
    eval->add_option("--column", ctx.pred_column, "pred column to score: clean | penetrated")
        ->capture_default_str();

    CLI::App* export_mesh = app.add_subcommand("export-mesh", "write scenario hand meshes as OBJ");
    add_common(export_mesh);
    export_mesh->add_option("--scenario", ctx.scenario, "scenario name (clasp cross pinch prayer free)")
        ->required();

    CLI::App* selftest = app.add_subcommand("selftest", "run the built-in oracle checks");
    add_common(selftest);
    selftest->add_flag("--all", run_all_selftests, "reserved; the full suite runs under ctest");

    CLI11_PARSE(app, argc, argv);

    try {
        apply_common(&ctx, config_file, sets, seed, synth_seed->count() > 0, "synth.seed");
        if (synth->parsed()) cmd_synth(ctx);
        if (train_d->parsed()) cmd_train_diffusion(ctx);
        if (train_f->parsed()) cmd_train_fusion(ctx);
        if (refine->parsed()) cmd_refine(ctx);
        if (eval->parsed()) cmd_eval(ctx);
        if (export_mesh->parsed()) cmd_export_mesh(ctx);
        if (selftest->parsed()) {
            (void)run_all_selftests;
            if (cmd_selftest(ctx) != 0) {
                std::fprintf(stderr, "error: [numeric] selftest failures\n");
                return kExitNumeric;
            }
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: [config] %s\n", e.what());
        return kExitConfig;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: [io] %s\n", e.what());
        return kExitIo;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: [numeric] %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: [numeric] %s\n", e.what());
        return kExitNumeric;
    }
    return kExitOk;
}
