#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "handdiff/metrics.hpp"
#include "handdiff/rng.hpp"

using namespace handdiff;

namespace {

std::vector<Vec3> random_points(Rng& rng, size_t n, double scale = 50.0) {
    std::vector<Vec3> out(n);
    for (Vec3& p : out) p = {rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-scale, scale)};
    return out;
}

std::array<Vec3, kNumKeypoints> keypoints_of(const HandParams& p) {
    return forward_kinematics(p, hand_tree()).keypoints;
}

}  // namespace

TEST_CASE("mpjpe unit values") {
    Rng rng(1);
    HandParams p;
    for (int j = 1; j < kNumJoints; ++j) p.set_joint_rotation(j, {rng.uniform(-0.5, 0.5), 0, 0});
    const auto kp = keypoints_of(p);

    SUBCASE("identical inputs give zero") { CHECK(mpjpe(kp, kp) == 0.0); }

    SUBCASE("a uniform offset is absorbed by root alignment") {
        auto moved = kp;
        for (Vec3& v : moved) v += Vec3{7.5, -3.0, 11.0};
        CHECK(mpjpe(moved, kp) == doctest::Approx(0.0).epsilon(1e-12));
    }

    SUBCASE("one displaced non-root joint averages to 3/21") {
        auto moved = kp;
        moved[8] += Vec3{0, 0, 3.0};
        CHECK(mpjpe(moved, kp) == doctest::Approx(3.0 / 21.0).epsilon(1e-12));
    }

    SUBCASE("count mismatch throws") {
        std::vector<Vec3> bad(kp.begin(), kp.end() - 1);
        CHECK_THROWS(mpjpe(bad, kp));
    }
}

TEST_CASE("mrrpe unit values") {
    HandParams l, r;
    l.chirality = Chirality::Left;
    r.chirality = Chirality::Right;
    r.root_translation = {100, 0, 0};
    const TwoHandState gt = make_two_hand_state(l, r);

    SUBCASE("identical relative translations give zero") { CHECK(mrrpe(gt, gt) == 0.0); }

    SUBCASE("a (3,4,0) offset gives 5") {
        TwoHandState pred = gt;
        pred.right.root_translation += Vec3{3, 4, 0};
        pred.sync_relative_translation();
        CHECK(mrrpe(pred, gt) == doctest::Approx(5.0).epsilon(1e-15));
    }
}

TEST_CASE("procrustes alignment recovers similarity transforms exactly") {
    Rng rng(2);
    const auto gt = random_points(rng, 21);

    const Mat3 rot = axis_angle_to_matrix({0.4, -0.8, 0.3});
    const double scale = 1.37;
    const Vec3 t{12, -7, 31};
    // pred = inverse similarity of gt, so aligning pred back onto gt is exact
    std::vector<Vec3> pred(gt.size());
    for (size_t i = 0; i < gt.size(); ++i) pred[i] = rot.transposed() * ((gt[i] - t) * (1.0 / scale));

    CHECK(pa_mpjpe(pred, gt) < 1e-9);

    SUBCASE("one perturbed mesh vertex: positive error, optimal in the aligned objective") {
        // alignment optimality is a least-squares statement; the mean-of-norms
        // metric can grow when a single concentrated error gets redistributed,
        // so the optimality check compares sums of squares
        HandParams p;
        const HandMesh mesh = skin(p, hand_tree(), shared_hand_template({}));
        auto noisy = mesh.vertices;
        noisy[137] += Vec3{2, -1, 2};
        CHECK(pa_mpvpe(noisy, mesh.vertices) > 0.0);
        double unaligned_sq = 0.0;
        for (size_t i = 0; i < noisy.size(); ++i)
            unaligned_sq += (noisy[i] - mesh.vertices[i]).squared_norm();
        const SimilarityTransform t = procrustes_align(noisy, mesh.vertices);
        double aligned_sq = 0.0;
        for (size_t i = 0; i < noisy.size(); ++i)
            aligned_sq += (t.rotation * noisy[i] * t.scale + t.translation - mesh.vertices[i]).squared_norm();
        CHECK(aligned_sq <= unaligned_sq + 1e-12);
        CHECK(aligned_sq < unaligned_sq);
    }

    SUBCASE("reflections are not absorbed (det +1 constraint)") {
        std::vector<Vec3> mirrored(gt.size());
        for (size_t i = 0; i < gt.size(); ++i) mirrored[i] = mirror_x(gt[i]);
        CHECK(pa_mpjpe(mirrored, gt) > 1.0);
    }

    SUBCASE("degenerate coincident sets throw") {
        const std::vector<Vec3> flat(21, Vec3{1, 2, 3});
        CHECK_THROWS(procrustes_align(flat, gt));
    }
}

TEST_CASE("pa_mpjpe <= mpjpe on random pairs and similarity invariance") {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto gt = random_points(rng, 21);
        auto pred = gt;
        for (Vec3& p : pred)
            p += Vec3{rng.gaussian() * 2, rng.gaussian() * 2, rng.gaussian() * 2};
        CHECK(pa_mpjpe(pred, gt) <= root_aligned_mean_error(pred, gt) + 1e-9);
    }

    // invariance of pa_mpjpe under a similarity applied to pred alone
    const auto gt = random_points(rng, 21);
    auto pred = gt;
    for (Vec3& p : pred) p += Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    const double base = pa_mpjpe(pred, gt);
    const Mat3 rot = axis_angle_to_matrix({-0.3, 0.9, 0.5});
    for (Vec3& p : pred) p = rot * p * 0.73 + Vec3{5, 6, 7};
    CHECK(std::abs(pa_mpjpe(pred, gt) - base) < 1e-9);
}

TEST_CASE("xy/z split unit values and exact decomposition") {
    std::vector<Vec3> gt(4, Vec3{});
    gt[1] = {10, 0, 0};
    gt[2] = {0, 10, 0};
    gt[3] = {0, 0, 10};

    SUBCASE("3-4-12 decomposes to xy 5, z 12") {
        auto pred = gt;
        pred[2] += Vec3{3, 4, 12};
        const XyZSplit s = xy_z_split(pred, gt);
        CHECK(s.xy == doctest::Approx(5.0 / 4.0).epsilon(1e-15));
        CHECK(s.z == doctest::Approx(12.0 / 4.0).epsilon(1e-15));
        // full error is 13 on that joint
        CHECK(root_aligned_mean_error(pred, gt) == doctest::Approx(13.0 / 4.0).epsilon(1e-15));
    }

    SUBCASE("errors purely along the view axis have zero xy") {
        auto pred = gt;
        pred[1] += Vec3{0, 0, -7};
        pred[3] += Vec3{0, 0, 2};
        CHECK(xy_z_split(pred, gt).xy == 0.0);
    }

    SUBCASE("per-point xy^2 + z^2 equals the squared error") {
        Rng rng(5);
        for (int n = 0; n < 100; ++n) {
            const Vec3 e{rng.gaussian(), rng.gaussian(), rng.gaussian()};
            const double xy_sq = e.x * e.x + e.y * e.y;
            const double z_sq = e.z * e.z;
            CHECK(std::abs(xy_sq + z_sq - e.squared_norm()) < 1e-12);
        }
    }
}

TEST_CASE("all metrics are invariant under a simultaneous rigid motion") {
    Rng rng(7);
    HandParams l, r;
    l.chirality = Chirality::Left;
    r.chirality = Chirality::Right;
    for (int j = 1; j < kNumJoints; ++j) {
        l.set_joint_rotation(j, {rng.uniform(-0.4, 0.4), 0, 0});
        r.set_joint_rotation(j, {rng.uniform(-0.4, 0.4), 0, 0});
    }
    r.root_translation = {150, 10, -20};
    const TwoHandState gt = make_two_hand_state(l, r);
    TwoHandState pred = gt;
    for (int j = 1; j < kNumJoints; ++j) {
        Vec3 aa = pred.right.joint_rotation(j);
        aa.x += rng.gaussian() * 0.05;
        pred.right.set_joint_rotation(j, aa);
    }

    const auto kp_pred = keypoints_of(pred.right);
    const auto kp_gt = keypoints_of(gt.right);
    const double base_mpjpe = mpjpe(kp_pred, kp_gt);
    const double base_pa = pa_mpjpe(kp_pred, kp_gt);

    // same rigid motion applied to both pred and gt keypoints
    const Mat3 rot = axis_angle_to_matrix({0.2, 0.5, -0.4});
    const Vec3 t{40, -60, 75};
    std::vector<Vec3> kp_pred_m(kNumKeypoints), kp_gt_m(kNumKeypoints);
    for (int i = 0; i < kNumKeypoints; ++i) {
        kp_pred_m[i] = rot * kp_pred[i] + t;
        kp_gt_m[i] = rot * kp_gt[i] + t;
    }
    CHECK(mpjpe(kp_pred_m, kp_gt_m) == doctest::Approx(base_mpjpe).epsilon(1e-9));
    CHECK(pa_mpjpe(kp_pred_m, kp_gt_m) == doctest::Approx(base_pa).epsilon(1e-9));
}

TEST_CASE("evaluate_states: self comparison is all zeros with penetration stats attached") {
    Rng rng(11);
    HandParams l, r;
    l.chirality = Chirality::Left;
    r.chirality = Chirality::Right;
    r.root_translation = {250, 0, 0};
    const TwoHandState s = make_two_hand_state(l, r);
    const std::vector<TwoHandState> states{s, s};

    GateConfig gate_cfg;
    const MetricReport rep = evaluate_states(states, states, gate_cfg);
    CHECK(rep.mpjpe == 0.0);
    CHECK(rep.mpvpe == 0.0);
    CHECK(rep.mrrpe == 0.0);
    CHECK(rep.pa_mpjpe < 1e-9);
    CHECK(rep.mpjpe_xy == 0.0);
    CHECK(rep.mpjpe_z == 0.0);
    CHECK(rep.penetration_depth_mean == 0.0);
    CHECK(rep.sample_count == 2);

    const std::string table = format_report_table(rep);
    CHECK(table.find("mpjpe_mm") != std::string::npos);
    const std::string kv = format_report_kv(rep);
    CHECK(kv.find("mrrpe_mm = 0") != std::string::npos);
}
