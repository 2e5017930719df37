#include "handdiff/commands.hpp"

#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "handdiff/diffusion.hpp"
#include "handdiff/error.hpp"
#include "handdiff/fusion.hpp"
#include "handdiff/metrics.hpp"
#include "handdiff/pipeline.hpp"
#include "handdiff/synth.hpp"

#ifndef HANDDIFF_GIT_DESCRIBE
#define HANDDIFF_GIT_DESCRIBE "unknown"
#endif

namespace handdiff {

namespace fs = std::filesystem;

void parallel_for_indexed(int64_t count, int jobs, const std::function<void(int64_t)>& fn) {
    if (jobs <= 1 || count <= 1) {
        for (int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    std::vector<std::thread> workers;
    std::exception_ptr error;
    std::mutex error_mu;
    const int n_workers = static_cast<int>(std::min<int64_t>(jobs, count));
    workers.reserve(static_cast<size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w)
        workers.emplace_back([&]() {
            for (;;) {
                const int64_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);
}

uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file for checksum: " + path);
    Fnv1a h;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) h.update(buf, static_cast<size_t>(in.gcount()));
    return h.digest();
}

namespace {

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

CollisionConfig collision_config_from(const Config& cfg) {
    CollisionConfig c;
    c.d_threshold_mm = cfg.get_double("collision.d_threshold_mm");
    c.cos_theta_threshold = cfg.get_double("collision.cos_theta_threshold");
    c.rho_mm = cfg.get_double("collision.rho_mm");
    const std::string form = cfg.get("collision.gmof_form");
    if (form == "standard")
        c.gmof_form = CollisionConfig::GmofForm::Standard;
    else if (form == "as_printed")
        c.gmof_form = CollisionConfig::GmofForm::AsPrinted;
    else
        throw ConfigError("collision.gmof_form must be 'standard' or 'as_printed'");
    c.validate();
    return c;
}

TessellationConfig tess_config_from(const Config& cfg) {
    TessellationConfig t;
    t.capsule_u = static_cast<int>(cfg.get_int("mesh.capsule_u"));
    t.capsule_v = static_cast<int>(cfg.get_int("mesh.capsule_v"));
    return t;
}

GateConfig gate_config_from(const Config& cfg) {
    GateConfig g;
    g.resolution = static_cast<int>(cfg.get_int("render.resolution"));
    g.fit_margin = cfg.get_double("render.fit_margin");
    g.collision = collision_config_from(cfg);
    g.tess = tess_config_from(cfg);
    return g;
}

SynthConfig synth_config_from(const Config& cfg) {
    SynthConfig s;
    s.jitter_pose_rad = cfg.get_double("synth.jitter_pose_rad");
    s.jitter_trans_mm = cfg.get_double("synth.jitter_trans_mm");
    s.pose_sigma_rad = cfg.get_double("synth.pose_sigma_rad");
    s.trans_sigma_mm = cfg.get_double("synth.trans_sigma_mm");
    s.gate = gate_config_from(cfg);
    return s;
}

GuidanceConfig guidance_config_from(const Config& cfg) {
    GuidanceConfig g;
    g.lambda = cfg.get_double("diffusion.lambda");
    g.n_grad_iters = static_cast<int>(cfg.get_int("diffusion.n_grad_iters"));
    g.ddim_steps = static_cast<int>(cfg.get_int("diffusion.ddim_steps"));
    g.seed = static_cast<uint64_t>(cfg.get_int("diffusion.seed"));
    return g;
}

struct Provenance {
    std::string command;
    const CommandContext* ctx;
    std::vector<std::pair<std::string, uint64_t>> inputs, outputs;

    void add_input(const std::string& path) { inputs.emplace_back(path, file_checksum(path)); }
    void add_output(const std::string& path) { outputs.emplace_back(path, file_checksum(path)); }

    void write() const {
        const std::string path = ctx->out_dir + "/provenance_" + command + ".txt";
        std::ofstream out(path);
        if (!out) throw IoError("cannot write provenance file: " + path);
        char buf[64];
        out << "# handdiff provenance v1\n";
        out << "command = " << command << "\n";
        out << "git = " << HANDDIFF_GIT_DESCRIBE << "\n";
        std::snprintf(buf, sizeof(buf), "%016" PRIx64, ctx->config.hash());
        out << "config_hash = " << buf << "\n";
        out << "jobs = " << ctx->jobs << "\n";
        out << "# config\n" << ctx->config.dump();
        out << "# inputs\n";
        for (const auto& [p, c] : inputs) {
            std::snprintf(buf, sizeof(buf), "%016" PRIx64, c);
            out << p << " " << buf << "\n";
        }
        out << "# outputs\n";
        for (const auto& [p, c] : outputs) {
            std::snprintf(buf, sizeof(buf), "%016" PRIx64, c);
            out << p << " " << buf << "\n";
        }
    }
};

void write_loss_curve(const std::string& path, const std::vector<std::pair<int, double>>& points) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write loss curve: " + path);
    char buf[64];
    for (const auto& [step, loss] : points) {
        std::snprintf(buf, sizeof(buf), "%d %.17g\n", step, loss);
        out << buf;
    }
}

std::vector<CorpusRecord> read_corpus_checked(const std::string& path) {
    std::vector<CorpusRecord> recs = read_corpus(path);
    if (recs.empty()) throw IoError("corpus is empty: " + path);
    return recs;
}

std::vector<StateVec> encode_states(const std::vector<CorpusRecord>& recs, bool penetrated,
                                    const StateNormalization& norm) {
    std::vector<StateVec> out;
    out.reserve(recs.size());
    for (const auto& r : recs)
        out.push_back(norm.encode(flatten_state(penetrated ? r.penetrated : r.clean)));
    return out;
}

}  // namespace

void cmd_synth(const CommandContext& ctx) {
    ensure_out_dir(ctx.out_dir);
    const Config& cfg = ctx.config;
    const SynthConfig synth_cfg = synth_config_from(cfg);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("synth.seed"));
    const int64_t n_train = cfg.get_int("synth.train_records");
    const int64_t n_val = cfg.get_int("synth.val_records");
    const int64_t n_test = cfg.get_int("synth.test_records");
    if (n_train < 0 || n_val < 0 || n_test <= 0) throw ConfigError("synth record counts must be positive");

    const ScenarioLibrary lib = load_scenarios(cfg.get("synth.scenario_dir"));

    const int64_t total = n_train + n_val + n_test;
    std::vector<CorpusRecord> records(static_cast<size_t>(total));
    parallel_for_indexed(total, ctx.jobs,
                         [&](int64_t i) { records[static_cast<size_t>(i)] = make_record(i, seed, lib, synth_cfg); });

    Provenance prov{"synth", &ctx, {}, {}};
    const uint64_t chash = cfg.hash();
    auto write_split = [&](const char* name, int64_t begin, int64_t end) {
        const std::string path = ctx.out_dir + std::string("/corpus_") + name + ".txt";
        write_corpus({records.begin() + begin, records.begin() + end}, path, chash);
        prov.add_output(path);
    };
    write_split("train", 0, n_train);
    write_split("val", n_train, n_train + n_val);
    write_split("test", n_train + n_val, total);
    prov.write();
}

void cmd_train_diffusion(const CommandContext& ctx) {
    ensure_out_dir(ctx.out_dir);
    const Config& cfg = ctx.config;
    if (ctx.corpus_path.empty()) throw ConfigError("train-diffusion requires --corpus <dir>");

    const std::string train_path = ctx.corpus_path + "/corpus_train.txt";
    const std::string val_path = ctx.corpus_path + "/corpus_val.txt";
    const std::vector<CorpusRecord> train = read_corpus_checked(train_path);
    const std::vector<CorpusRecord> val = read_corpus_checked(val_path);

    std::vector<StateVec> clean_raw;
    clean_raw.reserve(train.size());
    for (const auto& r : train) clean_raw.push_back(flatten_state(r.clean));
    const StateNormalization norm = fit_normalization(clean_raw);

    const std::vector<StateVec> x0 = encode_states(train, false, norm);
    const std::vector<StateVec> cond = encode_states(train, true, norm);

    const int T = static_cast<int>(cfg.get_int("diffusion.T"));
    const NoiseSchedule schedule = cosine_schedule(T);

    Denoiser denoiser(DenoiserConfig{}, static_cast<uint64_t>(cfg.get_int("train.seed")));
    DiffusionTrainConfig tc;
    tc.steps = static_cast<int>(cfg.get_int("train.steps"));
    tc.batch = static_cast<int>(cfg.get_int("train.batch"));
    tc.lr = cfg.get_double("train.lr");
    tc.weight_decay = cfg.get_double("train.weight_decay");
    tc.seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
    tc.log_every = static_cast<int>(cfg.get_int("train.log_every"));
    const TrainCurve curve = train_diffusion(denoiser, x0, cond, schedule, tc);

    // held-out loss on the validation split, one deterministic pass
    const std::vector<StateVec> vx0 = encode_states(val, false, norm);
    const std::vector<StateVec> vcond = encode_states(val, true, norm);
    Rng vrng(static_cast<uint64_t>(cfg.get_int("train.seed")) ^ 0x76616cULL);
    double val_loss = 0.0;
    for (size_t i = 0; i < vx0.size(); ++i) {
        const int t = 1 + static_cast<int>(vrng.uniform_index(static_cast<uint64_t>(T)));
        StateVec noise;
        for (double& v : noise) v = vrng.gaussian();
        const StateVec x_t = q_sample(vx0[i], t, noise, schedule);
        const StateVec pred = denoiser.predict(x_t, t, vcond[i]);
        double err = 0.0;
        for (int d = 0; d < kStateDim; ++d) err += (pred[static_cast<size_t>(d)] - vx0[i][static_cast<size_t>(d)]) * (pred[static_cast<size_t>(d)] - vx0[i][static_cast<size_t>(d)]);
        val_loss += err / kStateDim / static_cast<double>(vx0.size());
    }

    const std::string weights_path = ctx.out_dir + "/denoiser.weights";
    denoiser.save(weights_path, norm, T);
    const std::string curve_path = ctx.out_dir + "/train_diffusion_loss.txt";
    write_loss_curve(curve_path, curve.points);

    Provenance prov{"train-diffusion", &ctx, {}, {}};
    prov.add_input(train_path);
    prov.add_input(val_path);
    prov.add_output(weights_path);
    prov.add_output(curve_path);
    {
        const std::string summary = ctx.out_dir + "/train_diffusion_summary.txt";
        std::ofstream out(summary);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "final_train_loss = %.17g\nval_loss = %.17g\n",
                      curve.final_loss, val_loss);
        out << buf;
        out.close();
        prov.add_output(summary);
    }
    prov.write();
}

void cmd_train_fusion(const CommandContext& ctx) {
    ensure_out_dir(ctx.out_dir);
    const Config& cfg = ctx.config;
    if (ctx.corpus_path.empty()) throw ConfigError("train-fusion requires --corpus <dir>");
    const std::string train_path = ctx.corpus_path + "/corpus_train.txt";
    const std::vector<CorpusRecord> train = read_corpus_checked(train_path);

    const int64_t samples = std::min<int64_t>(cfg.get_int("fusion.samples"), static_cast<int64_t>(train.size()));
    if (samples < 1) throw ConfigError("fusion.samples must be >= 1");
    const GateConfig gate_cfg = gate_config_from(cfg);
    const KinematicTree& tree = hand_tree();
    const HandTemplate& tmpl = shared_hand_template(gate_cfg.tess);

    // render prior grids for the clean states
    std::vector<PriorGrids> grids(static_cast<size_t>(samples));
    parallel_for_indexed(samples, ctx.jobs, [&](int64_t i) {
        const TwoHandState& s = train[static_cast<size_t>(i)].clean;
        const HandMesh lm = skin(s.left, tree, tmpl);
        const HandMesh rm = skin(s.right, tree, tmpl);
        const Camera cam = canonical_camera({&lm, &rm}, gate_cfg.resolution, gate_cfg.fit_margin);
        const PriorMaps maps = render_priors(lm, forward_kinematics(s.left, tree).keypoints, rm,
                                             forward_kinematics(s.right, tree).keypoints, cam);
        grids[static_cast<size_t>(i)] = make_prior_grids(maps);
    });

    const uint64_t fusion_seed = static_cast<uint64_t>(cfg.get_int("fusion.seed"));
    PriorNetConfig teacher_cfg;
    teacher_cfg.grid = gate_cfg.resolution;
    teacher_cfg.token_dim = static_cast<int>(cfg.get_int("fusion.prior_dim"));
    teacher_cfg.patch = gate_cfg.resolution / static_cast<int>(std::lround(std::sqrt(
                            static_cast<double>(cfg.get_int("fusion.prior_tokens")))));
    const PriorTokenNet teacher(teacher_cfg, fusion_seed);

    std::vector<std::array<Tensor, 3>> teacher_tokens(static_cast<size_t>(samples));
    parallel_for_indexed(samples, ctx.jobs,
                         [&](int64_t i) { teacher_tokens[static_cast<size_t>(i)] = teacher.forward(grids[static_cast<size_t>(i)]); });

    PriorNetConfig student_cfg = teacher_cfg;
    student_cfg.joint = true;
    student_cfg.layers = 2;
    PriorTokenNet student(student_cfg, fusion_seed + 1);

    AdamConfig acfg;
    acfg.lr = cfg.get_double("fusion.lr");
    Adam adam(acfg);
    Rng rng(fusion_seed + 2);
    const int steps = static_cast<int>(cfg.get_int("fusion.steps"));
    const int batch = static_cast<int>(cfg.get_int("fusion.batch"));

    std::vector<std::pair<int, double>> curve;
    std::vector<PriorGrids> bg;
    std::vector<std::array<Tensor, 3>> bt;
    for (int step = 0; step < steps; ++step) {
        bg.clear();
        bt.clear();
        for (int b = 0; b < batch; ++b) {
            const size_t idx = rng.uniform_index(static_cast<uint64_t>(samples));
            bg.push_back(grids[idx]);
            bt.push_back(teacher_tokens[idx]);
        }
        const double loss = student.distill_batch(bg, bt, adam);
        if (step % 10 == 0 || step + 1 == steps) curve.emplace_back(step, loss);
    }

    const std::string teacher_path = ctx.out_dir + "/fusion_teacher.weights";
    const std::string student_path = ctx.out_dir + "/fusion_student.weights";
    const std::string curve_path = ctx.out_dir + "/fusion_distill_loss.txt";
    const std::string manifest_path = ctx.out_dir + "/fusion_manifest.txt";
    teacher.save(teacher_path);
    student.save(student_path);
    write_loss_curve(curve_path, curve);
    {
        std::ofstream out(manifest_path);
        if (!out) throw IoError("cannot write fusion manifest: " + manifest_path);
        out << "# fusion corpus rows: record_id content_hash\n";
        char buf[64];
        for (int64_t i = 0; i < samples; ++i) {
            std::snprintf(buf, sizeof(buf), "%" PRId64 " %016" PRIx64 "\n", train[static_cast<size_t>(i)].id,
                          prior_grids_content_hash(grids[static_cast<size_t>(i)]));
            out << buf;
        }
    }

    Provenance prov{"train-fusion", &ctx, {}, {}};
    prov.add_input(train_path);
    prov.add_output(teacher_path);
    prov.add_output(student_path);
    prov.add_output(curve_path);
    prov.add_output(manifest_path);
    prov.write();
}

void cmd_refine(const CommandContext& ctx) {
    ensure_out_dir(ctx.out_dir);
    const Config& cfg = ctx.config;
    if (ctx.corpus_path.empty()) throw ConfigError("refine requires --corpus <file>");
    if (ctx.weights_path.empty()) throw ConfigError("refine requires --weights <file>");

    const std::vector<CorpusRecord> records = read_corpus_checked(ctx.corpus_path);
    DenoiserSnapshot snap = Denoiser::load(ctx.weights_path);
    const int T = static_cast<int>(cfg.get_int("diffusion.T"));
    if (snap.schedule_T != T)
        throw ConfigError("diffusion.T does not match the trained schedule in " + ctx.weights_path);
    const NoiseSchedule schedule = cosine_schedule(T);
    const GateConfig gate_cfg = gate_config_from(cfg);
    const GuidanceConfig guidance_base = guidance_config_from(cfg);
    const HandTemplate& tmpl = shared_hand_template(gate_cfg.tess);

    std::vector<CorpusRecord> refined(records.size());
    std::vector<RefineResult> results(records.size());
    parallel_for_indexed(static_cast<int64_t>(records.size()), ctx.jobs, [&](int64_t i) {
        const CorpusRecord& rec = records[static_cast<size_t>(i)];
        GuidanceConfig guidance = guidance_base;
        guidance.seed = guidance_base.seed ^ static_cast<uint64_t>(rec.id);
        RefineResult rr = refine(rec.penetrated, snap.denoiser, snap.norm, schedule, guidance, gate_cfg);

        CorpusRecord out;
        out.id = rec.id;
        out.scenario = rec.scenario;
        out.seed = rec.seed;
        out.clean = rr.state;          // refined estimate
        out.penetrated = rec.penetrated;  // the condition it came from
        const HandMesh lm = skin(rr.state.left, hand_tree(), tmpl);
        const HandMesh rm = skin(rr.state.right, hand_tree(), tmpl);
        out.penetration_depth_mm = penetration_depth(lm, rm);
        refined[static_cast<size_t>(i)] = std::move(out);
        results[static_cast<size_t>(i)] = std::move(rr);
    });

    const std::string out_path = ctx.out_dir + "/refined.txt";
    write_corpus(refined, out_path, cfg.hash());

    const std::string log_path = ctx.out_dir + "/refine_log.txt";
    {
        std::ofstream out(log_path);
        if (!out) throw IoError("cannot write refine log: " + log_path);
        char buf[160];
        for (size_t i = 0; i < results.size(); ++i) {
            const RefineResult& rr = results[i];
            std::snprintf(buf, sizeof(buf),
                          "record %" PRId64 " iou=%.6f depth=%.6f pairs=%d refined=%d skipped_iters=%d\n",
                          records[i].id, rr.gate.iou, rr.gate.penetration_depth_mm,
                          rr.gate.collision_pairs, rr.refined ? 1 : 0, rr.log.skipped_grad_iters);
            out << buf;
            for (size_t s = 0; s < rr.log.timesteps.size(); ++s) {
                std::snprintf(buf, sizeof(buf), "  t=%d collision_loss %.9g -> %.9g\n",
                              rr.log.timesteps[s], rr.log.collision_loss_before[s],
                              rr.log.collision_loss_after[s]);
                out << buf;
            }
        }
    }

    Provenance prov{"refine", &ctx, {}, {}};
    prov.add_input(ctx.corpus_path);
    prov.add_input(ctx.weights_path);
    prov.add_output(out_path);
    prov.add_output(log_path);
    prov.write();
}

void cmd_eval(const CommandContext& ctx) {
    ensure_out_dir(ctx.out_dir);
    if (ctx.pred_path.empty() || ctx.gt_path.empty())
        throw ConfigError("eval requires --pred <corpus> and --gt <corpus>");
    if (ctx.pred_column != "clean" && ctx.pred_column != "penetrated")
        throw ConfigError("eval --column must be 'clean' or 'penetrated'");

    const std::vector<CorpusRecord> pred = read_corpus_checked(ctx.pred_path);
    const std::vector<CorpusRecord> gt = read_corpus_checked(ctx.gt_path);
    if (pred.size() != gt.size()) throw IoError("eval: pred and gt corpora differ in record count");
    for (size_t i = 0; i < pred.size(); ++i)
        if (pred[i].id != gt[i].id) throw IoError("eval: record id mismatch between corpora");

    std::vector<TwoHandState> pred_states, gt_states;
    pred_states.reserve(pred.size());
    gt_states.reserve(gt.size());
    for (size_t i = 0; i < pred.size(); ++i) {
        pred_states.push_back(ctx.pred_column == "clean" ? pred[i].clean : pred[i].penetrated);
        gt_states.push_back(gt[i].clean);
    }

    const GateConfig gate_cfg = gate_config_from(ctx.config);
    const MetricReport report = evaluate_states(pred_states, gt_states, gate_cfg);

    const std::string table_path = ctx.out_dir + "/metric_report.txt";
    const std::string kv_path = ctx.out_dir + "/metric_report.kv";
    {
        std::ofstream out(table_path);
        if (!out) throw IoError("cannot write metric report: " + table_path);
        out << format_report_table(report);
    }
    {
        std::ofstream out(kv_path);
        if (!out) throw IoError("cannot write metric report: " + kv_path);
        out << format_report_kv(report);
    }

    Provenance prov{"eval", &ctx, {}, {}};
    prov.add_input(ctx.pred_path);
    prov.add_input(ctx.gt_path);
    prov.add_output(table_path);
    prov.add_output(kv_path);
    prov.write();
}

void cmd_export_mesh(const CommandContext& ctx) {
    ensure_out_dir(ctx.out_dir);
    const Config& cfg = ctx.config;
    if (ctx.scenario.empty()) throw ConfigError("export-mesh requires --scenario <name>");
    const TwoHandState s =
        load_scenario_file(cfg.get("synth.scenario_dir") + "/" + ctx.scenario + ".params");
    const HandTemplate& tmpl = shared_hand_template(tess_config_from(cfg));

    Provenance prov{"export-mesh", &ctx, {}, {}};
    for (const auto& [name, hand] : {std::pair<const char*, const HandParams*>{"left", &s.left},
                                     std::pair<const char*, const HandParams*>{"right", &s.right}}) {
        const HandMesh mesh = skin(*hand, hand_tree(), tmpl);
        const std::string path = ctx.out_dir + "/" + ctx.scenario + "_" + name + ".obj";
        std::ofstream out(path);
        if (!out) throw IoError("cannot write OBJ: " + path);
        write_obj(mesh, out);
        out.close();
        prov.add_output(path);
    }
    prov.write();
}

int cmd_selftest(const CommandContext& ctx) {
    int failures = 0;
    auto check = [&](const char* name, bool ok) {
        std::printf("%s %s\n", ok ? "PASS" : "FAIL", name);
        if (!ok) ++failures;
    };

    const CollisionConfig ccfg = collision_config_from(ctx.config);
    const double rho = ccfg.rho_mm;
    check("gmof zero", gmof(0.0, rho) == 0.0);
    check("gmof midpoint", gmof(rho * rho, rho) == rho * rho / 2.0);
    check("gmof saturation", rho * rho - gmof(1e6 * rho * rho, rho) < 1e-5 * rho * rho);
    check("gmof slope at zero", gmof_derivative(0.0, rho) == 1.0);

    const NoiseSchedule s = cosine_schedule(1000);
    bool monotone = s.alpha_bar[0] == 1.0 && s.alpha_bar[1000] <= 1e-3;
    for (int t = 1; t <= 1000 && monotone; ++t) monotone = s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t) - 1];
    check("cosine schedule endpoints and monotonicity", monotone);

    // grid vs brute-force collision detection on jittered interlocked hands
    {
        const HandTemplate& tmpl = shared_hand_template(tess_config_from(ctx.config));
        bool equal = true;
        Rng rng(99);
        for (int trial = 0; trial < 5; ++trial) {
            HandParams l, r;
            l.chirality = Chirality::Left;
            r.chirality = Chirality::Right;
            for (int j = 1; j < kNumJoints; ++j) {
                l.set_joint_rotation(j, {rng.uniform(-0.3, 0.3), 0, 0});
                r.set_joint_rotation(j, {rng.uniform(-0.3, 0.3), 0, 0});
            }
            l.set_joint_rotation(0, {0, -1.5707963267948966, 0});
            r.set_joint_rotation(0, {0, 1.5707963267948966, 0});
            r.root_translation = {rng.uniform(45, 65), rng.uniform(-8, 8), rng.uniform(-8, 8)};
            const HandMesh lm = skin(l, hand_tree(), tmpl);
            const HandMesh rm = skin(r, hand_tree(), tmpl);
            const CollisionSet a = detect_collisions(lm, rm, ccfg, DetectPath::Grid);
            const CollisionSet b = detect_collisions(lm, rm, ccfg, DetectPath::Brute);
            if (a.pairs.size() != b.pairs.size()) {
                equal = false;
                break;
            }
            for (size_t k = 0; k < a.pairs.size(); ++k)
                if (a.pairs[k].i != b.pairs[k].i || a.pairs[k].j != b.pairs[k].j ||
                    a.pairs[k].distance_sq != b.pairs[k].distance_sq)
                    equal = false;
        }
        check("grid equals brute-force detection", equal);
    }

    // adam bias-corrected first step
    {
        ParamStore store;
        Param* p = store.add("p", {1, 1});
        p->value.data[0] = 1.0;
        p->grad.data[0] = 0.5;
        AdamConfig acfg;
        acfg.lr = 1e-2;
        Adam adam(acfg);
        adam.step(store);
        const double expect = 1.0 - 1e-2 * 0.5 / (0.5 + 1e-8);
        check("adam first-step value", p->value.data[0] == expect);
    }

    return failures;
}

}  // namespace handdiff
