#include "handdiff/synth.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "handdiff/error.hpp"

namespace handdiff {

const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::Clasp: return "clasp";
        case Scenario::Cross: return "cross";
        case Scenario::Pinch: return "pinch";
        case Scenario::Prayer: return "prayer";
        case Scenario::Free: return "free";
    }
    return "unknown";
}

Scenario scenario_from_name(const std::string& name) {
    for (int i = 0; i < kNumScenarios; ++i)
        if (name == scenario_name(static_cast<Scenario>(i))) return static_cast<Scenario>(i);
    throw ConfigError("unknown scenario '" + name + "'");
}

namespace {

std::string format_values(const double* v, size_t n) {
    std::string out;
    char buf[40];
    for (size_t i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof(buf), i + 1 == n ? "%.17g" : "%.17g ", v[i]);
        out += buf;
    }
    return out;
}

std::vector<double> parse_values(const std::string& s, size_t expect, const std::string& what) {
    std::istringstream is(s);
    std::vector<double> out;
    double v;
    while (is >> v) out.push_back(v);
    if (out.size() != expect)
        throw IoError("expected " + std::to_string(expect) + " values for " + what + ", got " +
                      std::to_string(out.size()));
    return out;
}

}  // namespace

void write_scenario_file(const std::string& path, const std::string& name, const TwoHandState& s) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open scenario file for writing: " + path);
    out << "# handdiff scenario v1\n";
    out << "name = " << name << "\n";
    out << "left.pose = " << format_values(s.left.pose.data(), kPoseDim) << "\n";
    out << "left.shape = " << format_values(s.left.shape.data(), kShapeDim) << "\n";
    const double lroot[3] = {s.left.root_translation.x, s.left.root_translation.y, s.left.root_translation.z};
    out << "left.root = " << format_values(lroot, 3) << "\n";
    out << "right.pose = " << format_values(s.right.pose.data(), kPoseDim) << "\n";
    out << "right.shape = " << format_values(s.right.shape.data(), kShapeDim) << "\n";
    const double rroot[3] = {s.right.root_translation.x, s.right.root_translation.y, s.right.root_translation.z};
    out << "right.root = " << format_values(rroot, 3) << "\n";
}

TwoHandState load_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scenario file: " + path);
    TwoHandState s;
    s.left.chirality = Chirality::Left;
    s.right.chirality = Chirality::Right;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto strip = [](std::string t) {
            const auto b = t.find_first_not_of(" \t\r");
            const auto e = t.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : t.substr(b, e - b + 1);
        };
        const std::string key = strip(line.substr(0, eq));
        const std::string val = strip(line.substr(eq + 1));
        if (key == "name") continue;
        HandParams* hand = nullptr;
        std::string field;
        if (key.rfind("left.", 0) == 0) {
            hand = &s.left;
            field = key.substr(5);
        } else if (key.rfind("right.", 0) == 0) {
            hand = &s.right;
            field = key.substr(6);
        } else {
            throw IoError("unknown scenario key '" + key + "' in " + path);
        }
        if (field == "pose") {
            const auto v = parse_values(val, kPoseDim, key);
            std::copy(v.begin(), v.end(), hand->pose.begin());
        } else if (field == "shape") {
            const auto v = parse_values(val, kShapeDim, key);
            std::copy(v.begin(), v.end(), hand->shape.begin());
        } else if (field == "root") {
            const auto v = parse_values(val, 3, key);
            hand->root_translation = {v[0], v[1], v[2]};
        } else {
            throw IoError("unknown scenario key '" + key + "' in " + path);
        }
    }
    s.sync_relative_translation();
    validate(s.left);
    validate(s.right);
    return s;
}

ScenarioLibrary load_scenarios(const std::string& dir) {
    ScenarioLibrary lib;
    for (int i = 0; i < kNumScenarios; ++i) {
        const Scenario sc = static_cast<Scenario>(i);
        lib.templates[sc] = load_scenario_file(dir + "/" + scenario_name(sc) + ".params");
    }
    return lib;
}

namespace {

bool state_penetrates(const TwoHandState& s, const TessellationConfig& tess) {
    const HandTemplate& tmpl = shared_hand_template(tess);
    const HandMesh lm = skin(s.left, hand_tree(), tmpl);
    const HandMesh rm = skin(s.right, hand_tree(), tmpl);
    return meshes_penetrate(lm, rm);
}

}  // namespace

TwoHandState sample_clean_pose(Rng& rng, const TwoHandState& scenario_template,
                               const SynthConfig& cfg) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        TwoHandState s = scenario_template;
        for (HandParams* hand : {&s.left, &s.right}) {
            for (double& p : hand->pose) p += rng.uniform(-cfg.jitter_pose_rad, cfg.jitter_pose_rad);
            for (double& m : hand->shape) {
                m += rng.uniform(-cfg.jitter_shape, cfg.jitter_shape);
                m = std::min(2.0, std::max(0.5, m));
            }
            canonicalize_pose(*hand);
        }
        s.right.root_translation += Vec3{rng.uniform(-cfg.jitter_trans_mm, cfg.jitter_trans_mm),
                                         rng.uniform(-cfg.jitter_trans_mm, cfg.jitter_trans_mm),
                                         rng.uniform(-cfg.jitter_trans_mm, cfg.jitter_trans_mm)};
        s.sync_relative_translation();
        if (!state_penetrates(s, cfg.gate.tess)) return s;
    }
    throw NumericalError("sample_clean_pose: no penetration-free pose in 100 attempts");
}

TwoHandState perturb_until_penetration(const TwoHandState& clean, Rng& rng, const SynthConfig& cfg) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        TwoHandState s = clean;
        for (HandParams* hand : {&s.left, &s.right}) {
            for (double& p : hand->pose) p += rng.gaussian() * cfg.pose_sigma_rad;
            canonicalize_pose(*hand);
        }
        s.right.root_translation += Vec3{rng.gaussian() * cfg.trans_sigma_mm,
                                         rng.gaussian() * cfg.trans_sigma_mm,
                                         rng.gaussian() * cfg.trans_sigma_mm};
        s.sync_relative_translation();
        if (state_penetrates(s, cfg.gate.tess)) return s;
    }
    throw NumericalError("perturb_until_penetration: no penetration in 200 attempts");
}

CorpusRecord make_record(int64_t id, uint64_t corpus_seed, const ScenarioLibrary& lib,
                         const SynthConfig& cfg) {
    CorpusRecord rec;
    rec.id = id;
    rec.scenario = static_cast<Scenario>(id % kNumScenarios);
    rec.seed = corpus_seed ^ static_cast<uint64_t>(id);
    Rng rng(rec.seed);
    rec.clean = sample_clean_pose(rng, lib.templates.at(rec.scenario), cfg);
    for (int attempt = 0;; ++attempt) {
        rec.penetrated = perturb_until_penetration(rec.clean, rng, cfg);
        const GateDecision d = gate(rec.penetrated, cfg.gate);
        if (d.refine) {
            rec.penetration_depth_mm = d.penetration_depth_mm;
            return rec;
        }
        if (attempt >= 50)
            throw NumericalError("make_record: penetrated state never triggers the gate");
    }
}

void write_corpus(const std::vector<CorpusRecord>& records, const std::string& path,
                  uint64_t config_hash) {
    std::string body;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "# handdiff-corpus v1 config=%016" PRIx64 "\n", config_hash);
    body += buf;
    for (const CorpusRecord& r : records) {
        std::snprintf(buf, sizeof(buf), "%" PRId64 " %s %" PRIu64 " ", r.id, scenario_name(r.scenario), r.seed);
        body += buf;
        const auto clean = flatten_state(r.clean);
        const auto pen = flatten_state(r.penetrated);
        body += format_values(clean.data(), kStateDim);
        body += " ";
        body += format_values(pen.data(), kStateDim);
        std::snprintf(buf, sizeof(buf), " %.17g\n", r.penetration_depth_mm);
        body += buf;
    }
    Fnv1a h;
    h.update(body.data(), body.size());
    std::snprintf(buf, sizeof(buf), "# checksum %016" PRIx64 "\n", h.digest());
    body += buf;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open corpus file for writing: " + path);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw IoError("short write to corpus file: " + path);
}

std::vector<CorpusRecord> read_corpus(const std::string& path, uint64_t* config_hash_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file: " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    const auto tail = content.rfind("# checksum ");
    if (tail == std::string::npos) throw IoError("corpus file missing checksum line: " + path);
    uint64_t stored = 0;
    if (std::sscanf(content.c_str() + tail, "# checksum %" SCNx64, &stored) != 1)
        throw IoError("corpus file malformed checksum line: " + path);
    Fnv1a h;
    h.update(content.data(), tail);
    if (h.digest() != stored) throw IoError("corpus checksum failure: " + path);

    std::istringstream is(content.substr(0, tail));
    std::string header;
    std::getline(is, header);
    uint64_t config_hash = 0;
    if (std::sscanf(header.c_str(), "# handdiff-corpus v1 config=%" SCNx64, &config_hash) != 1)
        throw IoError("corpus file version mismatch: " + path);
    if (config_hash_out) *config_hash_out = config_hash;

    std::vector<CorpusRecord> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        CorpusRecord r;
        std::string scenario;
        if (!(ls >> r.id >> scenario >> r.seed)) throw IoError("corpus record malformed: " + path);
        r.scenario = scenario_from_name(scenario);
        std::array<double, kStateDim> clean{}, pen{};
        for (double& v : clean)
            if (!(ls >> v)) throw IoError("corpus record truncated: " + path);
        for (double& v : pen)
            if (!(ls >> v)) throw IoError("corpus record truncated: " + path);
        if (!(ls >> r.penetration_depth_mm)) throw IoError("corpus record truncated: " + path);
        r.clean = unflatten_state(clean);
        r.penetrated = unflatten_state(pen);
        records.push_back(r);
    }
    return records;
}

}  // namespace handdiff
