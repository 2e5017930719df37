#include "handdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "handdiff/error.hpp"

namespace handdiff {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kStdFloor = 1e-6;
constexpr int kPoseTokens = 2 * kNumJoints;      // 32
constexpr int kStateTokens = kPoseTokens + 3;    // + L shape, R shape, rel
constexpr int kTotalTokens = 2 * kStateTokens + 1;  // + timestep token
}  // namespace

NoiseSchedule cosine_schedule(int T) {
    if (T < 2) throw ConfigError("cosine_schedule: T must be >= 2");
    NoiseSchedule s;
    s.T = T;
    s.alpha_bar.resize(static_cast<size_t>(T) + 1);
    const double offset = 0.008;
    auto f = [&](double t) {
        const double v = std::cos((t / T + offset) / (1.0 + offset) * kPi / 2.0);
        return v * v;
    };
    const double f0 = f(0.0);
    s.alpha_bar[0] = 1.0;
    double prev_f = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double ft = f(static_cast<double>(t)) / f0;
        double beta = 1.0 - ft / prev_f;
        if (beta > 0.999) beta = 0.999;
        s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t) - 1] * (1.0 - beta);
        prev_f = ft;
    }
    return s;
}

StateVec q_sample(const StateVec& x0, int t, const StateVec& noise, const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.T) throw NumericalError("q_sample: t out of range");
    const double ab = schedule.alpha_bar[static_cast<size_t>(t)];
    const double signal = std::sqrt(ab);
    const double sigma = std::sqrt(1.0 - ab);
    StateVec out;
    for (int i = 0; i < kStateDim; ++i) out[static_cast<size_t>(i)] = signal * x0[static_cast<size_t>(i)] + sigma * noise[static_cast<size_t>(i)];
    return out;
}

StateVec StateNormalization::encode(const StateVec& raw) const {
    StateVec out;
    for (int i = 0; i < kStateDim; ++i) out[static_cast<size_t>(i)] = (raw[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)]) / stddev[static_cast<size_t>(i)];
    return out;
}

StateVec StateNormalization::decode(const StateVec& normalized) const {
    StateVec out;
    for (int i = 0; i < kStateDim; ++i) out[static_cast<size_t>(i)] = normalized[static_cast<size_t>(i)] * stddev[static_cast<size_t>(i)] + mean[static_cast<size_t>(i)];
    return out;
}

StateNormalization fit_normalization(std::span<const StateVec> samples) {
    if (samples.empty()) throw NumericalError("fit_normalization: empty sample set");
    StateNormalization n;
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (const StateVec& s : samples)
        for (int i = 0; i < kStateDim; ++i) n.mean[static_cast<size_t>(i)] += s[static_cast<size_t>(i)];
    for (int i = 0; i < kStateDim; ++i) n.mean[static_cast<size_t>(i)] *= inv;
    for (const StateVec& s : samples)
        for (int i = 0; i < kStateDim; ++i) {
            const double d = s[static_cast<size_t>(i)] - n.mean[static_cast<size_t>(i)];
            n.stddev[static_cast<size_t>(i)] += d * d;
        }
    for (int i = 0; i < kStateDim; ++i)
        n.stddev[static_cast<size_t>(i)] = std::max(std::sqrt(n.stddev[static_cast<size_t>(i)] * inv), kStdFloor);
    return n;
}

// token packing --------------------------------------------------------------

namespace {

// pose rows [32,3]: left joints then right joints
Tensor pack_pose(const StateVec& v) {
    Tensor t = Tensor::zeros({kPoseTokens, 3});
    for (int j = 0; j < kNumJoints; ++j)
        for (int c = 0; c < 3; ++c) {
            t.data[static_cast<size_t>(j * 3 + c)] = v[static_cast<size_t>(j * 3 + c)];
            t.data[static_cast<size_t>((kNumJoints + j) * 3 + c)] = v[static_cast<size_t>(53 + j * 3 + c)];
        }
    return t;
}

Tensor pack_shape(const StateVec& v) {
    Tensor t = Tensor::zeros({2, kShapeDim});
    for (int c = 0; c < kShapeDim; ++c) {
        t.data[static_cast<size_t>(c)] = v[static_cast<size_t>(48 + c)];
        t.data[static_cast<size_t>(kShapeDim + c)] = v[static_cast<size_t>(101 + c)];
    }
    return t;
}

Tensor pack_rel(const StateVec& v) { return Tensor::row({v[106], v[107], v[108]}); }

void unpack_tokens(const Tensor& pose, const Tensor& shape, const Tensor& rel, StateVec* out) {
    for (int j = 0; j < kNumJoints; ++j)
        for (int c = 0; c < 3; ++c) {
            (*out)[static_cast<size_t>(j * 3 + c)] = pose.data[static_cast<size_t>(j * 3 + c)];
            (*out)[static_cast<size_t>(53 + j * 3 + c)] = pose.data[static_cast<size_t>((kNumJoints + j) * 3 + c)];
        }
    for (int c = 0; c < kShapeDim; ++c) {
        (*out)[static_cast<size_t>(48 + c)] = shape.data[static_cast<size_t>(c)];
        (*out)[static_cast<size_t>(101 + c)] = shape.data[static_cast<size_t>(kShapeDim + c)];
    }
    for (int c = 0; c < 3; ++c) (*out)[static_cast<size_t>(106 + c)] = rel.data[static_cast<size_t>(c)];
}

Tensor time_features(int t, int freqs) {
    Tensor f = Tensor::zeros({1, 2 * freqs});
    for (int k = 0; k < freqs; ++k) {
        const double w = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(freqs));
        f.data[static_cast<size_t>(2 * k)] = std::sin(w * static_cast<double>(t));
        f.data[static_cast<size_t>(2 * k + 1)] = std::cos(w * static_cast<double>(t));
    }
    return f;
}

}  // namespace

Denoiser::Denoiser(const DenoiserConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    const int64_t d = cfg.d_model;
    pose_embed_ = Affine::create(store_, "embed.pose", 3, d, rng);
    shape_embed_ = Affine::create(store_, "embed.shape", kShapeDim, d, rng);
    rel_embed_ = Affine::create(store_, "embed.rel", 3, d, rng);
    cond_pose_embed_ = Affine::create(store_, "embed.cond_pose", 3, d, rng);
    cond_shape_embed_ = Affine::create(store_, "embed.cond_shape", kShapeDim, d, rng);
    cond_rel_embed_ = Affine::create(store_, "embed.cond_rel", 3, d, rng);
    time_mlp1_ = Affine::create(store_, "time.mlp1", 2 * cfg.time_freqs, d, rng);
    time_mlp2_ = Affine::create(store_, "time.mlp2", d, d, rng);
    // unit-scale positions: attention routing between mirrored state and
    // condition tokens is position-driven and must be learnable quickly
    pos_embed_ = store_.add_gaussian("embed.pos", {kTotalTokens, d}, rng, 1.0);
    encoder_ = TransformerEncoder::create(store_, "encoder", d, cfg.heads, cfg.layers, rng);
    out_ln_ = LayerNorm::create(store_, "out.ln", d);
    pose_out_ = Affine::create(store_, "out.pose", d, 3, rng);
    shape_out_ = Affine::create(store_, "out.shape", d, kShapeDim, rng);
    rel_out_ = Affine::create(store_, "out.rel", d, 3, rng);
    // zero-initialized heads: the untrained model predicts zero, so the
    // initial loss equals the data second moment
    for (Affine* head : {&pose_out_, &shape_out_, &rel_out_})
        for (double& v : head->w->value.data) v = 0.0;
}

void Denoiser::build(Graph& g, const StateVec& x_t, int t, const StateVec& cond,
                     std::array<Graph::Id, 3>* pred_parts) const {
    const auto pose_tokens = pose_embed_.apply(g, g.leaf(pack_pose(x_t)));
    const auto shape_tokens = shape_embed_.apply(g, g.leaf(pack_shape(x_t)));
    const auto rel_token = rel_embed_.apply(g, g.leaf(pack_rel(x_t)));
    const auto time_token =
        time_mlp2_.apply(g, g.gelu(time_mlp1_.apply(g, g.leaf(time_features(t, cfg_.time_freqs)))));
    const auto c_pose = cond_pose_embed_.apply(g, g.leaf(pack_pose(cond)));
    const auto c_shape = cond_shape_embed_.apply(g, g.leaf(pack_shape(cond)));
    const auto c_rel = cond_rel_embed_.apply(g, g.leaf(pack_rel(cond)));

    auto tokens = g.concat_rows({pose_tokens, shape_tokens, rel_token, time_token, c_pose, c_shape, c_rel});
    tokens = g.add(tokens, g.param(pos_embed_));
    auto out = encoder_.apply(g, tokens);
    out = out_ln_.apply(g, out);

    const auto pose_pred = pose_out_.apply(g, g.slice_rows(out, 0, kPoseTokens));
    const auto shape_pred = shape_out_.apply(g, g.slice_rows(out, kPoseTokens, kPoseTokens + 2));
    const auto rel_pred = rel_out_.apply(g, g.slice_rows(out, kPoseTokens + 2, kPoseTokens + 3));
    *pred_parts = {pose_pred, shape_pred, rel_pred};
}

StateVec Denoiser::predict(const StateVec& x_t, int t, const StateVec& cond) const {
    Graph g;
    std::array<Graph::Id, 3> parts{};
    build(g, x_t, t, cond, &parts);
    StateVec out{};
    unpack_tokens(g.value(parts[0]), g.value(parts[1]), g.value(parts[2]), &out);
    return out;
}

double Denoiser::train_batch(std::span<const StateVec> x0, std::span<const StateVec> cond,
                             std::span<const int> t, std::span<const StateVec> noise,
                             const NoiseSchedule& schedule, Adam& adam) {
    if (x0.size() != cond.size() || x0.size() != t.size() || x0.size() != noise.size() || x0.empty())
        throw NumericalError("train_batch: inconsistent batch arrays");
    const double inv_batch = 1.0 / static_cast<double>(x0.size());
    double mean_loss = 0.0;
    for (size_t s = 0; s < x0.size(); ++s) {
        const StateVec x_t = q_sample(x0[s], t[s], noise[s], schedule);
        Graph g;
        std::array<Graph::Id, 3> parts{};
        build(g, x_t, t[s], cond[s], &parts);
        const auto pose_tgt = g.leaf(pack_pose(x0[s]));
        const auto shape_tgt = g.leaf(pack_shape(x0[s]));
        const auto rel_tgt = g.leaf(pack_rel(x0[s]));
        auto loss = g.add(g.sum_squares(g.sub(parts[0], pose_tgt)),
                          g.add(g.sum_squares(g.sub(parts[1], shape_tgt)),
                                g.sum_squares(g.sub(parts[2], rel_tgt))));
        loss = g.scale(loss, 1.0 / static_cast<double>(kStateDim));
        const double lv = g.value(loss).data[0];
        if (!std::isfinite(lv)) throw NumericalError("train_batch: non-finite loss");
        mean_loss += lv * inv_batch;
        g.backward(loss, inv_batch);  // fixed-order gradient accumulation
    }
    adam.step(store_);
    return mean_loss;
}

void Denoiser::save(const std::string& path, const StateNormalization& norm, int schedule_T) const {
    Tensor mean = Tensor::zeros({1, kStateDim});
    Tensor stddev = Tensor::zeros({1, kStateDim});
    for (int i = 0; i < kStateDim; ++i) {
        mean.data[static_cast<size_t>(i)] = norm.mean[static_cast<size_t>(i)];
        stddev.data[static_cast<size_t>(i)] = norm.stddev[static_cast<size_t>(i)];
    }
    const Tensor meta = Tensor::row({static_cast<double>(cfg_.d_model), static_cast<double>(cfg_.heads),
                                     static_cast<double>(cfg_.layers), static_cast<double>(cfg_.time_freqs),
                                     static_cast<double>(schedule_T)});
    save_param_store(path, store_, {{"norm.mean", &mean}, {"norm.std", &stddev}, {"meta.config", &meta}});
}

DenoiserSnapshot Denoiser::load(const std::string& path) {
    // probe the meta entry first to build the right architecture
    DenoiserConfig cfg;
    int schedule_T = 0;
    StateNormalization norm;
    {
        ParamStore probe;
        const auto extras = load_param_store(path, probe);
        bool have_meta = false, have_mean = false, have_std = false;
        for (const auto& [name, tensor] : extras) {
            if (name == "meta.config" && tensor.numel() == 5) {
                cfg.d_model = static_cast<int>(tensor.data[0]);
                cfg.heads = static_cast<int>(tensor.data[1]);
                cfg.layers = static_cast<int>(tensor.data[2]);
                cfg.time_freqs = static_cast<int>(tensor.data[3]);
                schedule_T = static_cast<int>(tensor.data[4]);
                have_meta = true;
            } else if (name == "norm.mean" && tensor.numel() == kStateDim) {
                for (int i = 0; i < kStateDim; ++i) norm.mean[static_cast<size_t>(i)] = tensor.data[static_cast<size_t>(i)];
                have_mean = true;
            } else if (name == "norm.std" && tensor.numel() == kStateDim) {
                for (int i = 0; i < kStateDim; ++i) norm.stddev[static_cast<size_t>(i)] = tensor.data[static_cast<size_t>(i)];
                have_std = true;
            }
        }
        if (!have_meta || !have_mean || !have_std)
            throw IoError("denoiser weights missing meta/normalization entries: " + path);
    }
    DenoiserSnapshot loaded{Denoiser(cfg, 0), norm, schedule_T};
    const auto leftover = load_param_store(path, loaded.denoiser.store_);
    (void)leftover;
    return loaded;
}

// sampling --------------------------------------------------------------------

namespace {

std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw ConfigError("ddim_steps must be in [1, T]");
    std::vector<int> tau;
    tau.reserve(static_cast<size_t>(steps) + 1);
    for (int i = steps; i >= 1; --i)
        tau.push_back(static_cast<int>(std::llround(static_cast<double>(i) * T / steps)));
    tau.push_back(0);
    return tau;
}

bool all_finite(const StateVec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

TwoHandState guided_sample(const TwoHandState& condition, const DenoiseFn& denoise,
                           const StateNormalization& norm, const NoiseSchedule& schedule,
                           const GuidanceConfig& guidance, const CollisionConfig& collision_cfg,
                           const TessellationConfig& tess, GuidedSampleLog* log) {
    const Vec3 anchor = condition.left.root_translation;
    const HandTemplate& tmpl = shared_hand_template(tess);
    const HandMesh cond_left = skin(condition.left, hand_tree(), tmpl);
    const HandMesh cond_right = skin(condition.right, hand_tree(), tmpl);

    Rng rng(guidance.seed);
    StateVec x;
    for (double& v : x) v = rng.gaussian();

    const auto tau = ddim_timesteps(schedule.T, guidance.ddim_steps);
    for (size_t i = 0; i + 1 < tau.size(); ++i) {
        const int t = tau[i];
        const int t_prev = tau[i + 1];

        StateVec xhat0 = denoise(x, t);
        if (!all_finite(xhat0)) throw NumericalError("guided_sample: denoiser output non-finite");

        if (log) log->timesteps.push_back(t);
        if (guidance.lambda != 0.0 && guidance.n_grad_iters > 0) {
            // pair membership is detected once per step and frozen across the
            // inner iterations; distances stay live
            const TwoHandState decoded = unflatten_state(norm.decode(xhat0), anchor);
            const GuidanceSets sets =
                detect_guidance_sets(decoded, cond_left, cond_right, collision_cfg, tess);
            for (int it = 0; it < guidance.n_grad_iters; ++it) {
                const TwoHandState refined = unflatten_state(norm.decode(xhat0), anchor);
                const CollisionLossGrad cg =
                    frozen_guidance_grad(refined, sets, cond_left, cond_right, collision_cfg, tess);
                if (log && it == 0) log->collision_loss_before.push_back(cg.loss);
                bool finite = true;
                for (double v : cg.grad)
                    if (!std::isfinite(v)) finite = false;
                if (!finite) {
                    if (log) ++log->skipped_grad_iters;
                    continue;  // skip this guidance iteration, keep sampling
                }
                // chain through decode: d/d(normalized) = stddev * d/d(raw)
                for (int d = 0; d < kStateDim; ++d)
                    xhat0[static_cast<size_t>(d)] -= guidance.lambda * cg.grad[static_cast<size_t>(d)] * norm.stddev[static_cast<size_t>(d)];
            }
            if (log) {
                const TwoHandState refined = unflatten_state(norm.decode(xhat0), anchor);
                log->collision_loss_after.push_back(
                    frozen_guidance_loss(refined, sets, cond_left, cond_right, collision_cfg, tess));
            }
        } else if (log) {
            log->collision_loss_before.push_back(-1.0);
            log->collision_loss_after.push_back(-1.0);
        }

        // deterministic DDIM transition
        const double ab_t = schedule.alpha_bar[static_cast<size_t>(t)];
        const double ab_prev = schedule.alpha_bar[static_cast<size_t>(t_prev)];
        const double sig_t = std::sqrt(1.0 - ab_t);
        const double sqrt_ab_t = std::sqrt(ab_t);
        const double sqrt_ab_prev = std::sqrt(ab_prev);
        const double sig_prev = std::sqrt(1.0 - ab_prev);
        for (int d = 0; d < kStateDim; ++d) {
            const double eps_hat = (x[static_cast<size_t>(d)] - sqrt_ab_t * xhat0[static_cast<size_t>(d)]) / sig_t;
            x[static_cast<size_t>(d)] = sqrt_ab_prev * xhat0[static_cast<size_t>(d)] + sig_prev * eps_hat;
        }
    }

    TwoHandState out = unflatten_state(norm.decode(x), anchor);
    canonicalize_pose(out.left);
    canonicalize_pose(out.right);
    return out;
}

TwoHandState guided_sample(const TwoHandState& condition, const Denoiser& denoiser,
                           const StateNormalization& norm, const NoiseSchedule& schedule,
                           const GuidanceConfig& guidance, const CollisionConfig& collision_cfg,
                           const TessellationConfig& tess, GuidedSampleLog* log) {
    const StateVec cond_encoded = norm.encode(flatten_state(condition));
    return guided_sample(
        condition,
        [&](const StateVec& x_t, int t) { return denoiser.predict(x_t, t, cond_encoded); }, norm,
        schedule, guidance, collision_cfg, tess, log);
}

TrainCurve train_diffusion(Denoiser& denoiser, std::span<const StateVec> x0,
                           std::span<const StateVec> cond, const NoiseSchedule& schedule,
                           const DiffusionTrainConfig& cfg) {
    if (x0.size() != cond.size() || x0.empty())
        throw NumericalError("train_diffusion: corpus arrays mismatch");
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    acfg.weight_decay = cfg.weight_decay;
    Adam adam(acfg);
    Rng rng(cfg.seed);

    TrainCurve curve;
    std::vector<StateVec> bx, bc, bn;
    std::vector<int> bt;
    for (int step = 0; step < cfg.steps; ++step) {
        bx.clear();
        bc.clear();
        bn.clear();
        bt.clear();
        for (int s = 0; s < cfg.batch; ++s) {
            const size_t idx = rng.uniform_index(x0.size());
            bx.push_back(x0[idx]);
            bc.push_back(cond[idx]);
            bt.push_back(1 + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(schedule.T))));
            StateVec noise;
            for (double& v : noise) v = rng.gaussian();
            bn.push_back(noise);
        }
        const double loss = denoiser.train_batch(bx, bc, bt, bn, schedule, adam);
        if (step % cfg.log_every == 0 || step + 1 == cfg.steps)
            curve.points.emplace_back(step, loss);
        curve.final_loss = loss;
    }
    return curve;
}

}  // namespace handdiff
