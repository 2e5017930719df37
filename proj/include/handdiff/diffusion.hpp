#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "handdiff/collision.hpp"
#include "handdiff/geom.hpp"
#include "handdiff/nn.hpp"

namespace handdiff {

// Conditional two-hand diffusion: cosine schedule, clean-sample-prediction
// training, deterministic DDIM sampling with collision-gradient guidance.

using StateVec = std::array<double, kStateDim>;

struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha_bar;  // T+1 cumulative coefficients, alpha_bar[0] = 1
};

// Nichol-Dhariwal cosine schedule with the published beta clip at 0.999
NoiseSchedule cosine_schedule(int T);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise, t in [1, T]
StateVec q_sample(const StateVec& x0, int t, const StateVec& noise, const NoiseSchedule& schedule);

// per-dimension standardization fitted on the training corpus
struct StateNormalization {
    StateVec mean{};
    StateVec stddev{};  // floored at 1e-6

    StateVec encode(const StateVec& raw) const;
    StateVec decode(const StateVec& normalized) const;
};

StateNormalization fit_normalization(std::span<const StateVec> samples);

struct DenoiserConfig {
    int d_model = 128;
    int heads = 4;
    int layers = 4;
    int time_freqs = 64;  // sinusoidal feature pairs for the timestep MLP
};

struct DenoiserSnapshot;

// token layout: 16 pose tokens per hand, one shape token per hand, one
// relative-translation token, one timestep token, and condition tokens
// mirroring the state tokens
class Denoiser {
  public:
    Denoiser(const DenoiserConfig& cfg, uint64_t init_seed);

    // predicts the clean sample in normalized coordinates
    StateVec predict(const StateVec& x_t, int t, const StateVec& cond) const;

    // one gradient-accumulation pass over the batch followed by an Adam step;
    // returns the mean per-dimension squared error
    double train_batch(std::span<const StateVec> x0, std::span<const StateVec> cond,
                       std::span<const int> t, std::span<const StateVec> noise,
                       const NoiseSchedule& schedule, Adam& adam);

    void save(const std::string& path, const StateNormalization& norm, int schedule_T) const;
    static DenoiserSnapshot load(const std::string& path);

    ParamStore& params() { return store_; }
    const DenoiserConfig& config() const { return cfg_; }

  private:
    void build(Graph& g, const StateVec& x_t, int t, const StateVec& cond,
               std::array<Graph::Id, 3>* pred_parts) const;

    DenoiserConfig cfg_;
    ParamStore store_;
    Affine pose_embed_, shape_embed_, rel_embed_;
    Affine cond_pose_embed_, cond_shape_embed_, cond_rel_embed_;
    Affine time_mlp1_, time_mlp2_;
    Param* pos_embed_ = nullptr;
    TransformerEncoder encoder_;
    LayerNorm out_ln_;
    Affine pose_out_, shape_out_, rel_out_;
};

struct DenoiserSnapshot {
    Denoiser denoiser;
    StateNormalization norm;
    int schedule_T = 0;
};

struct GuidanceConfig {
    double lambda = 0.05;   // step size in normalized units
    int n_grad_iters = 3;
    int ddim_steps = 50;
    uint64_t seed = 7;
};

struct GuidedSampleLog {
    std::vector<int> timesteps;
    std::vector<double> collision_loss_before;  // per DDIM step, before guidance
    std::vector<double> collision_loss_after;
    int skipped_grad_iters = 0;
};

using DenoiseFn = std::function<StateVec(const StateVec& x_t, int t)>;

// DDIM (eta = 0) over a strided subsequence with per-step collision-gradient
// adjustment of the clean estimate; deterministic given the seed
TwoHandState guided_sample(const TwoHandState& condition, const DenoiseFn& denoise,
                           const StateNormalization& norm, const NoiseSchedule& schedule,
                           const GuidanceConfig& guidance, const CollisionConfig& collision_cfg,
                           const TessellationConfig& tess = {}, GuidedSampleLog* log = nullptr);

TwoHandState guided_sample(const TwoHandState& condition, const Denoiser& denoiser,
                           const StateNormalization& norm, const NoiseSchedule& schedule,
                           const GuidanceConfig& guidance, const CollisionConfig& collision_cfg,
                           const TessellationConfig& tess = {}, GuidedSampleLog* log = nullptr);

struct DiffusionTrainConfig {
    int steps = 2400;
    int batch = 16;
    double lr = 1e-4;
    double weight_decay = 0.0;
    uint64_t seed = 11;
    int log_every = 20;
};

struct TrainCurve {
    std::vector<std::pair<int, double>> points;  // (step, loss)
    double final_loss = 0.0;
};

// x0/cond already normalized; samples batches uniformly with the seeded rng
TrainCurve train_diffusion(Denoiser& denoiser, std::span<const StateVec> x0,
                           std::span<const StateVec> cond, const NoiseSchedule& schedule,
                           const DiffusionTrainConfig& cfg);

}  // namespace handdiff
