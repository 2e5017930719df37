#include "handdiff/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "handdiff/error.hpp"
#include "handdiff/rng.hpp"

namespace handdiff {

const std::vector<Config::KeySpec>& Config::registry() {
    static const std::vector<KeySpec> keys = {
        {"mesh.capsule_u", "8", "capsule tessellation, segments around the bone axis"},
        {"mesh.capsule_v", "6", "capsule tessellation, rings along the bone axis"},

        {"render.resolution", "64", "raster grid resolution in pixels (square)"},
        {"render.fit_margin", "0.9", "fraction of the window the two-hand bounding box fills"},

        {"collision.d_threshold_mm", "4", "distance threshold for collision candidate pairs"},
        {"collision.cos_theta_threshold", "-0.5", "normal-cosine threshold (facing test)"},
        {"collision.rho_mm", "5", "GMoF saturation scale"},
        {"collision.gmof_form", "standard", "standard | as_printed (epsilon-guarded variant)"},

        {"diffusion.T", "1000", "noising steps in the cosine schedule"},
        {"diffusion.ddim_steps", "50", "DDIM steps at inference"},
        {"diffusion.lambda", "0.05", "collision-guidance step size, normalized units"},
        {"diffusion.n_grad_iters", "3", "guidance gradient iterations per DDIM step"},
        {"diffusion.seed", "7", "seed for sampling noise at inference"},

        {"synth.seed", "7", "corpus master seed; record i uses seed XOR i"},
        {"synth.train_records", "5000", "training split size"},
        {"synth.val_records", "500", "validation split size"},
        {"synth.test_records", "200", "test split size"},
        {"synth.scenario_dir", "assets/scenarios", "directory with scenario parameter files"},
        {"synth.pose_sigma_rad", "0.08", "pose noise scale when perturbing toward penetration"},
        {"synth.trans_sigma_mm", "3", "relative-translation noise scale when perturbing"},
        {"synth.jitter_pose_rad", "0.06", "per-joint jitter bound around scenario templates"},
        {"synth.jitter_trans_mm", "3", "translation jitter bound around scenario templates"},

        {"train.steps", "1500", "diffusion training steps"},
        {"train.batch", "16", "diffusion training batch size"},
        {"train.lr", "1e-4", "Adam learning rate"},
        {"train.weight_decay", "0", "decoupled weight decay (0 = plain Adam)"},
        {"train.seed", "11", "seed for init, timestep draws and noise during training"},
        {"train.log_every", "20", "loss-curve sampling stride"},

        {"fusion.steps", "2000", "distillation steps"},
        {"fusion.batch", "8", "distillation batch size"},
        {"fusion.lr", "1e-3", "distillation Adam learning rate"},
        {"fusion.seed", "13", "seed for teacher init, student init and batch draws"},
        {"fusion.samples", "100", "distillation corpus size"},
        {"fusion.image_tokens", "49", "image token count l"},
        {"fusion.d_model", "128", "integration width d"},
        {"fusion.prior_tokens", "16", "prior token count l_p"},
        {"fusion.prior_dim", "64", "prior token width d_p"},
    };
    return keys;
}

Config::Config() {
    for (const auto& k : registry()) values_[k.name] = k.default_value;
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
}

void Config::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.resize(hash_pos);
        auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
}

const std::string& Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

int64_t Config::get_int(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const long long r = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "' is not an integer: '" + v + "'");
    return r;
}

double Config::get_double(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const double r = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "' is not a number: '" + v + "'");
    return r;
}

bool Config::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' is not a bool: '" + v + "'");
}

std::string Config::dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    return os.str();
}

uint64_t Config::hash() const {
    const std::string d = dump();
    Fnv1a h;
    h.update(d.data(), d.size());
    return h.digest();
}

}  // namespace handdiff
