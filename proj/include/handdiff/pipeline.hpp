#pragma once

#include <cstdint>

#include "handdiff/collision.hpp"
#include "handdiff/diffusion.hpp"
#include "handdiff/geom.hpp"
#include "handdiff/render.hpp"

namespace handdiff {

// Stage-2 inference gate and per-sample orchestration: decide whether to
// refine, run guided diffusion when warranted, pass through bit-exactly
// otherwise.

struct GateConfig {
    int resolution = 64;
    double fit_margin = 0.9;
    CollisionConfig collision;
    TessellationConfig tess;
};

struct GateDecision {
    double iou = 0.0;
    double penetration_depth_mm = 0.0;
    int collision_pairs = 0;
    bool penetrating = false;
    bool refine = false;  // iou > 0 and penetrating
};

GateDecision gate(const TwoHandState& state, const GateConfig& cfg);

struct RefineResult {
    TwoHandState state;
    GateDecision gate;
    bool refined = false;
    GuidedSampleLog log;
};

// gated refinement: returns the input unchanged (bit-exact) when the gate
// does not trigger, otherwise the guided-diffusion sample
RefineResult refine(const TwoHandState& state, const Denoiser& denoiser,
                    const StateNormalization& norm, const NoiseSchedule& schedule,
                    const GuidanceConfig& guidance, const GateConfig& gate_cfg);

}  // namespace handdiff
