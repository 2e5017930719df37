#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "handdiff/geom.hpp"
#include "handdiff/pipeline.hpp"
#include "handdiff/rng.hpp"

namespace handdiff {

// Procedural interaction corpus: scenario templates jittered into clean
// two-hand poses, then noised until penetration occurs, persisted as
// line-delimited text with a trailing checksum.

enum class Scenario : uint8_t { Clasp, Cross, Pinch, Prayer, Free };
constexpr int kNumScenarios = 5;

const char* scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

struct ScenarioLibrary {
    std::map<Scenario, TwoHandState> templates;
};

TwoHandState load_scenario_file(const std::string& path);
void write_scenario_file(const std::string& path, const std::string& name, const TwoHandState& s);
ScenarioLibrary load_scenarios(const std::string& dir);

struct SynthConfig {
    double jitter_pose_rad = 0.06;   // clean-pose jitter bound, uniform
    double jitter_trans_mm = 3.0;
    double jitter_shape = 0.04;
    double pose_sigma_rad = 0.08;    // perturbation noise, gaussian
    double trans_sigma_mm = 3.0;
    GateConfig gate;
};

// scenario template + bounded jitter, rejection-resampled until the pose is
// penetration free; throws NumericalError after 100 rejections
TwoHandState sample_clean_pose(Rng& rng, const TwoHandState& scenario_template,
                               const SynthConfig& cfg);

// fresh noise on a copy of `clean` until penetration occurs; throws
// NumericalError after 200 attempts
TwoHandState perturb_until_penetration(const TwoHandState& clean, Rng& rng, const SynthConfig& cfg);

struct CorpusRecord {
    int64_t id = 0;
    Scenario scenario = Scenario::Clasp;
    uint64_t seed = 0;
    TwoHandState clean;
    TwoHandState penetrated;
    double penetration_depth_mm = 0.0;
};

// deterministic per-record generation: seed = corpus_seed XOR id, scenario
// cycles by id; the penetrated state must trigger the inference gate
CorpusRecord make_record(int64_t id, uint64_t corpus_seed, const ScenarioLibrary& lib,
                         const SynthConfig& cfg);

void write_corpus(const std::vector<CorpusRecord>& records, const std::string& path,
                  uint64_t config_hash);
std::vector<CorpusRecord> read_corpus(const std::string& path, uint64_t* config_hash_out = nullptr);

}  // namespace handdiff
