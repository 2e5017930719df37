#include "handdiff/pipeline.hpp"

namespace handdiff {

GateDecision gate(const TwoHandState& state, const GateConfig& cfg) {
    const KinematicTree& tree = hand_tree();
    const HandTemplate& tmpl = shared_hand_template(cfg.tess);
    const HandMesh lm = skin(state.left, tree, tmpl);
    const HandMesh rm = skin(state.right, tree, tmpl);

    const Camera cam = canonical_camera({&lm, &rm}, cfg.resolution, cfg.fit_margin);
    const RasterOut left = rasterize(lm, cam);
    const RasterOut right = rasterize(rm, cam);

    GateDecision d;
    d.iou = silhouette_iou(left.silhouette, right.silhouette);
    d.penetration_depth_mm = penetration_depth(lm, rm);
    d.collision_pairs = static_cast<int>(detect_collisions(lm, rm, cfg.collision).pairs.size());
    d.penetrating = d.penetration_depth_mm > 0.0;
    d.refine = d.iou > 0.0 && d.penetrating;
    return d;
}

RefineResult refine(const TwoHandState& state, const Denoiser& denoiser,
                    const StateNormalization& norm, const NoiseSchedule& schedule,
                    const GuidanceConfig& guidance, const GateConfig& gate_cfg) {
    RefineResult r;
    r.gate = gate(state, gate_cfg);
    if (!r.gate.refine) {
        r.state = state;  // pass-through, no re-encoding
        r.refined = false;
        return r;
    }
    r.state = guided_sample(state, denoiser, norm, schedule, guidance, gate_cfg.collision,
                            gate_cfg.tess, &r.log);
    r.refined = true;
    return r;
}

}  // namespace handdiff
