#include "handdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "handdiff/collision.hpp"
#include "handdiff/error.hpp"

namespace handdiff {

double root_aligned_mean_error(std::span<const Vec3> pred, std::span<const Vec3> gt,
                               int root_index) {
    if (pred.size() != gt.size() || pred.empty())
        throw NumericalError("root_aligned_mean_error: point count mismatch");
    const Vec3 pr = pred[static_cast<size_t>(root_index)];
    const Vec3 gr = gt[static_cast<size_t>(root_index)];
    double sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) sum += ((pred[i] - pr) - (gt[i] - gr)).norm();
    return sum / static_cast<double>(pred.size());
}

double mpjpe(std::span<const Vec3> pred_keypoints, std::span<const Vec3> gt_keypoints) {
    if (pred_keypoints.size() != kNumKeypoints || gt_keypoints.size() != kNumKeypoints)
        throw NumericalError("mpjpe: expected 21 keypoints");
    return root_aligned_mean_error(pred_keypoints, gt_keypoints, 0);
}

double mpvpe(std::span<const Vec3> pred_vertices, std::span<const Vec3> gt_vertices,
             const Vec3& pred_root, const Vec3& gt_root) {
    if (pred_vertices.size() != gt_vertices.size() || pred_vertices.empty())
        throw NumericalError("mpvpe: vertex count mismatch");
    double sum = 0.0;
    for (size_t i = 0; i < pred_vertices.size(); ++i)
        sum += ((pred_vertices[i] - pred_root) - (gt_vertices[i] - gt_root)).norm();
    return sum / static_cast<double>(pred_vertices.size());
}

double mrrpe(const TwoHandState& pred, const TwoHandState& gt) {
    const Vec3 pred_rel = pred.right.root_translation - pred.left.root_translation;
    const Vec3 gt_rel = gt.right.root_translation - gt.left.root_translation;
    return (pred_rel - gt_rel).norm();
}

namespace {

// eigen-decomposition of a symmetric 3x3 by cyclic Jacobi rotations
void jacobi_eigen(const Mat3& m, Mat3* vectors, double eig[3]) {
    Mat3 a = m;
    Mat3 v = Mat3::identity();
    for (int sweep = 0; sweep < 32; ++sweep) {
        double off = std::abs(a(0, 1)) + std::abs(a(0, 2)) + std::abs(a(1, 2));
        if (off < 1e-15) break;
        for (int p = 0; p < 2; ++p)
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                Mat3 rot = Mat3::identity();
                rot(p, p) = c;
                rot(q, q) = c;
                rot(p, q) = s;
                rot(q, p) = -s;
                a = rot.transposed() * a * rot;
                v = v * rot;
            }
    }
    // sort eigenvalues descending, permuting columns of v
    int order[3] = {0, 1, 2};
    const double d[3] = {a(0, 0), a(1, 1), a(2, 2)};
    std::sort(order, order + 3, [&](int x, int y) { return d[x] > d[y]; });
    Mat3 sorted;
    for (int c = 0; c < 3; ++c) {
        eig[c] = d[order[c]];
        for (int r = 0; r < 3; ++r) sorted(r, c) = v(r, order[c]);
    }
    *vectors = sorted;
}

Vec3 mat_col(const Mat3& m, int c) { return {m(0, c), m(1, c), m(2, c)}; }

void set_col(Mat3* m, int c, const Vec3& v) {
    (*m)(0, c) = v.x;
    (*m)(1, c) = v.y;
    (*m)(2, c) = v.z;
}

}  // namespace

SimilarityTransform procrustes_align(std::span<const Vec3> pred, std::span<const Vec3> gt) {
    if (pred.size() != gt.size() || pred.size() < 3)
        throw NumericalError("procrustes_align: need matched sets of at least 3 points");
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    Vec3 pm{}, gm{};
    for (size_t i = 0; i < pred.size(); ++i) {
        pm += pred[i];
        gm += gt[i];
    }
    pm *= inv_n;
    gm *= inv_n;

    Mat3 cov = Mat3::zero();  // sum of (g - gm)(p - pm)^T
    double pred_var = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const Vec3 p = pred[i] - pm;
        const Vec3 g = gt[i] - gm;
        cov += outer(g, p);
        pred_var += p.squared_norm();
    }
    cov = cov * inv_n;
    pred_var *= inv_n;
    if (pred_var < 1e-12)
        throw NumericalError("procrustes_align: degenerate (coincident) prediction points");

    // SVD cov = U S V^T via the eigensystem of cov^T cov
    Mat3 vmat;
    double eig[3];
    jacobi_eigen(cov.transposed() * cov, &vmat, eig);
    double sigma[3];
    for (int i = 0; i < 3; ++i) sigma[i] = std::sqrt(std::max(eig[i], 0.0));

    Mat3 umat = Mat3::zero();
    for (int c = 0; c < 3; ++c) {
        Vec3 u = cov * mat_col(vmat, c);
        if (sigma[c] > 1e-12 * sigma[0]) {
            u *= 1.0 / sigma[c];
        } else {
            u = normalized(cross(mat_col(umat, 0), mat_col(umat, 1)));
            if (u.norm() == 0.0) u = {0, 0, 1};
        }
        set_col(&umat, c, u);
    }

    const double d = (umat * vmat.transposed()).det() >= 0.0 ? 1.0 : -1.0;
    Mat3 s_fix = Mat3::identity();
    s_fix(2, 2) = d;

    SimilarityTransform out;
    out.rotation = umat * s_fix * vmat.transposed();
    out.scale = (sigma[0] + sigma[1] + d * sigma[2]) / pred_var;
    out.translation = gm - out.rotation * pm * out.scale;
    return out;
}

double pa_error(std::span<const Vec3> pred, std::span<const Vec3> gt) {
    const SimilarityTransform t = procrustes_align(pred, gt);
    double sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i)
        sum += (t.rotation * pred[i] * t.scale + t.translation - gt[i]).norm();
    return sum / static_cast<double>(pred.size());
}

XyZSplit xy_z_split(std::span<const Vec3> pred, std::span<const Vec3> gt, int root_index) {
    if (pred.size() != gt.size() || pred.empty()) throw NumericalError("xy_z_split: count mismatch");
    // canonical camera axes: the view plane is spanned by x and y, the view
    // axis is z
    const Vec3 pr = pred[static_cast<size_t>(root_index)];
    const Vec3 gr = gt[static_cast<size_t>(root_index)];
    XyZSplit out;
    for (size_t i = 0; i < pred.size(); ++i) {
        const Vec3 e = (pred[i] - pr) - (gt[i] - gr);
        out.xy += std::sqrt(e.x * e.x + e.y * e.y);
        out.z += std::abs(e.z);
    }
    out.xy /= static_cast<double>(pred.size());
    out.z /= static_cast<double>(pred.size());
    return out;
}

MetricReport evaluate_states(std::span<const TwoHandState> pred, std::span<const TwoHandState> gt,
                             const GateConfig& gate_cfg) {
    if (pred.size() != gt.size() || pred.empty())
        throw NumericalError("evaluate_states: state count mismatch");
    const KinematicTree& tree = hand_tree();
    const HandTemplate& tmpl = shared_hand_template(gate_cfg.tess);

    MetricReport r;
    r.sample_count = static_cast<int64_t>(pred.size());
    const double inv_hands = 1.0 / static_cast<double>(2 * pred.size());
    const double inv_states = 1.0 / static_cast<double>(pred.size());

    for (size_t s = 0; s < pred.size(); ++s) {
        r.mrrpe += mrrpe(pred[s], gt[s]) * inv_states;

        const HandParams* pred_hands[2] = {&pred[s].left, &pred[s].right};
        const HandParams* gt_hands[2] = {&gt[s].left, &gt[s].right};
        HandMesh pred_meshes[2], gt_meshes[2];
        for (int h = 0; h < 2; ++h) {
            const FkResult pf = forward_kinematics(*pred_hands[h], tree);
            const FkResult gf = forward_kinematics(*gt_hands[h], tree);
            r.mpjpe += mpjpe(pf.keypoints, gf.keypoints) * inv_hands;
            r.pa_mpjpe += pa_error(pf.keypoints, gf.keypoints) * inv_hands;
            const XyZSplit js = xy_z_split(pf.keypoints, gf.keypoints);
            r.mpjpe_xy += js.xy * inv_hands;
            r.mpjpe_z += js.z * inv_hands;

            pred_meshes[h] = skin(*pred_hands[h], tree, tmpl);
            gt_meshes[h] = skin(*gt_hands[h], tree, tmpl);
            r.mpvpe += mpvpe(pred_meshes[h].vertices, gt_meshes[h].vertices,
                             pred_hands[h]->root_translation, gt_hands[h]->root_translation) *
                       inv_hands;
            r.pa_mpvpe += pa_error(pred_meshes[h].vertices, gt_meshes[h].vertices) * inv_hands;
            // vertex splits align on the wrist origin, matching mpvpe
            const Vec3 pr = pred_hands[h]->root_translation, gr = gt_hands[h]->root_translation;
            double xy = 0.0, z = 0.0;
            for (size_t i = 0; i < pred_meshes[h].vertices.size(); ++i) {
                const Vec3 e = (pred_meshes[h].vertices[i] - pr) - (gt_meshes[h].vertices[i] - gr);
                xy += std::sqrt(e.x * e.x + e.y * e.y);
                z += std::abs(e.z);
            }
            r.mpvpe_xy += xy / static_cast<double>(pred_meshes[h].vertices.size()) * inv_hands;
            r.mpvpe_z += z / static_cast<double>(pred_meshes[h].vertices.size()) * inv_hands;
        }

        r.penetration_depth_mean += penetration_depth(pred_meshes[0], pred_meshes[1]) * inv_states;
        r.collision_pair_count_mean +=
            static_cast<double>(detect_collisions(pred_meshes[0], pred_meshes[1], gate_cfg.collision).pairs.size()) *
            inv_states;
    }
    return r;
}

std::string format_report_table(const MetricReport& r) {
    char buf[640];
    std::snprintf(buf, sizeof(buf),
                  "metric                     value\n"
                  "-------------------------  ----------\n"
                  "mpjpe_mm                   %10.4f\n"
                  "mpvpe_mm                   %10.4f\n"
                  "mrrpe_mm                   %10.4f\n"
                  "pa_mpjpe_mm                %10.4f\n"
                  "pa_mpvpe_mm                %10.4f\n"
                  "mpjpe_xy_mm                %10.4f\n"
                  "mpjpe_z_mm                 %10.4f\n"
                  "mpvpe_xy_mm                %10.4f\n"
                  "mpvpe_z_mm                 %10.4f\n"
                  "penetration_depth_mean_mm  %10.4f\n"
                  "collision_pair_count_mean  %10.4f\n"
                  "sample_count               %10lld\n",
                  r.mpjpe, r.mpvpe, r.mrrpe, r.pa_mpjpe, r.pa_mpvpe, r.mpjpe_xy, r.mpjpe_z,
                  r.mpvpe_xy, r.mpvpe_z, r.penetration_depth_mean, r.collision_pair_count_mean,
                  static_cast<long long>(r.sample_count));
    return buf;
}

std::string format_report_kv(const MetricReport& r) {
    std::ostringstream os;
    char buf[64];
    auto put = [&](const char* key, double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << key << " = " << buf << "\n";
    };
    put("mpjpe_mm", r.mpjpe);
    put("mpvpe_mm", r.mpvpe);
    put("mrrpe_mm", r.mrrpe);
    put("pa_mpjpe_mm", r.pa_mpjpe);
    put("pa_mpvpe_mm", r.pa_mpvpe);
    put("mpjpe_xy_mm", r.mpjpe_xy);
    put("mpjpe_z_mm", r.mpjpe_z);
    put("mpvpe_xy_mm", r.mpvpe_xy);
    put("mpvpe_z_mm", r.mpvpe_z);
    put("penetration_depth_mean_mm", r.penetration_depth_mean);
    put("collision_pair_count_mean", r.collision_pair_count_mean);
    os << "sample_count = " << r.sample_count << "\n";
    return os.str();
}

}  // namespace handdiff
