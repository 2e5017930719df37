#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "handdiff/geom.hpp"
#include "handdiff/pipeline.hpp"
#include "handdiff/vec3.hpp"

namespace handdiff {

// Pose/mesh error metrics in millimeters plus penetration statistics.

struct MetricReport {
    double mpjpe = 0.0;
    double mpvpe = 0.0;
    double mrrpe = 0.0;
    double pa_mpjpe = 0.0;
    double pa_mpvpe = 0.0;
    double mpjpe_xy = 0.0;
    double mpjpe_z = 0.0;
    double mpvpe_xy = 0.0;
    double mpvpe_z = 0.0;
    double penetration_depth_mean = 0.0;
    double collision_pair_count_mean = 0.0;
    int64_t sample_count = 0;
};

// mean Euclidean error after translating both sets so point `root_index`
// sits at the origin
double root_aligned_mean_error(std::span<const Vec3> pred, std::span<const Vec3> gt,
                               int root_index = 0);

double mpjpe(std::span<const Vec3> pred_keypoints, std::span<const Vec3> gt_keypoints);

// vertices aligned by the wrist origins passed alongside
double mpvpe(std::span<const Vec3> pred_vertices, std::span<const Vec3> gt_vertices,
             const Vec3& pred_root, const Vec3& gt_root);

// error of the right-root-relative-to-left-root translation vector
double mrrpe(const TwoHandState& pred, const TwoHandState& gt);

struct SimilarityTransform {
    Mat3 rotation = Mat3::identity();  // det +1
    double scale = 1.0;
    Vec3 translation;
};

// optimal similarity aligning pred onto gt (rotation, uniform scale,
// translation); throws NumericalError for degenerate point sets
SimilarityTransform procrustes_align(std::span<const Vec3> pred, std::span<const Vec3> gt);

double pa_error(std::span<const Vec3> pred, std::span<const Vec3> gt);
inline double pa_mpjpe(std::span<const Vec3> pred, std::span<const Vec3> gt) { return pa_error(pred, gt); }
inline double pa_mpvpe(std::span<const Vec3> pred, std::span<const Vec3> gt) { return pa_error(pred, gt); }

// root-aligned error decomposed into the canonical camera plane (xy) and
// view axis (z) components; per point, xy^2 + z^2 equals the full squared
// error exactly
struct XyZSplit {
    double xy = 0.0;
    double z = 0.0;
};
XyZSplit xy_z_split(std::span<const Vec3> pred, std::span<const Vec3> gt, int root_index = 0);

// full report over matched state lists; per-hand metrics average over
// 2 * sample_count hands, penetration statistics come from the predictions
MetricReport evaluate_states(std::span<const TwoHandState> pred, std::span<const TwoHandState> gt,
                             const GateConfig& gate_cfg);

std::string format_report_table(const MetricReport& r);
std::string format_report_kv(const MetricReport& r);

}  // namespace handdiff
