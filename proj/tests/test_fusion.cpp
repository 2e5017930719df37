#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "handdiff/fusion.hpp"
#include "handdiff/geom.hpp"
#include "handdiff/rng.hpp"

using namespace handdiff;

namespace {

constexpr double kPi = 3.14159265358979323846;

Tensor random_tokens(int64_t rows, int64_t cols, Rng& rng) {
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = rng.gaussian();
    return t;
}

PriorGrids render_state_grids(const TwoHandState& s) {
    const KinematicTree& tree = hand_tree();
    const HandTemplate& tmpl = shared_hand_template({});
    const HandMesh lm = skin(s.left, tree, tmpl);
    const HandMesh rm = skin(s.right, tree, tmpl);
    const Camera cam = canonical_camera({&lm, &rm}, 64, 0.9);
    const PriorMaps maps = render_priors(lm, forward_kinematics(s.left, tree).keypoints, rm,
                                         forward_kinematics(s.right, tree).keypoints, cam);
    return make_prior_grids(maps);
}

TwoHandState posed_state(Rng& rng) {
    HandParams l, r;
    l.chirality = Chirality::Left;
    r.chirality = Chirality::Right;
    for (int j = 1; j < kNumJoints; ++j) {
        l.set_joint_rotation(j, {rng.uniform(-0.3, 0.5), 0, 0});
        r.set_joint_rotation(j, {rng.uniform(-0.3, 0.5), 0, 0});
    }
    r.set_joint_rotation(0, {0, kPi, 0});
    r.root_translation = {rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(60, 120)};
    return make_two_hand_state(l, r);
}

}  // namespace

TEST_CASE("fuse_priors: equal inputs, permutation invariance, zero input") {
    Rng rng(1);
    ParamStore store;
    Affine proj = Affine::create(store, "proj", 16, 24, rng);

    const Tensor f = random_tokens(6, 16, rng);
    SUBCASE("equal priors reduce to proj(F)") {
        const Tensor fused = fuse_priors(f, f, f, proj);
        Graph g;
        const Tensor direct = g.value(proj.apply(g, g.leaf(f)));
        REQUIRE(fused.data.size() == direct.data.size());
        for (size_t i = 0; i < fused.data.size(); ++i)
            CHECK(fused.data[i] == doctest::Approx(direct.data[i]).epsilon(1e-12));
    }

    SUBCASE("every permutation of the priors fuses identically, bit for bit") {
        const Tensor a = random_tokens(6, 16, rng);
        const Tensor b = random_tokens(6, 16, rng);
        const Tensor c = random_tokens(6, 16, rng);
        const Tensor ref = fuse_priors(a, b, c, proj);
        for (const auto& [x, y, z] : {std::array<const Tensor*, 3>{&a, &c, &b},
                                      std::array<const Tensor*, 3>{&b, &a, &c},
                                      std::array<const Tensor*, 3>{&b, &c, &a},
                                      std::array<const Tensor*, 3>{&c, &a, &b},
                                      std::array<const Tensor*, 3>{&c, &b, &a}}) {
            const Tensor got = fuse_priors(*x, *y, *z, proj);
            for (size_t i = 0; i < ref.data.size(); ++i) CHECK(got.data[i] == ref.data[i]);
        }
    }

    SUBCASE("all-zero priors broadcast the projection bias") {
        for (double& v : proj.b->value.data) v = 0.25;
        const Tensor zero = Tensor::zeros({6, 16});
        const Tensor fused = fuse_priors(zero, zero, zero, proj);
        for (double v : fused.data) CHECK(v == 0.25);
    }

    SUBCASE("shape mismatch throws") {
        const Tensor bad = Tensor::zeros({5, 16});
        CHECK_THROWS(fuse_priors(f, bad, f, proj));
    }
}

TEST_CASE("integrate: residual identity, truncation contract, cross-token gradient flow") {
    Rng rng(2);
    ParamStore store;
    TransformerEncoder enc = TransformerEncoder::create(store, "enc", 24, 2, 2, rng);

    SUBCASE("identity-initialized encoder returns F_i for the first l tokens") {
        for (Param* p : store.all())
            if (p->name.find(".attn.wo") != std::string::npos ||
                p->name.find(".attn.bo") != std::string::npos ||
                p->name.find(".ff2.") != std::string::npos)
                for (double& v : p->value.data) v = 0.0;
        const Tensor fi = random_tokens(7, 24, rng);
        const Tensor fa = random_tokens(3, 24, rng);
        const Tensor out = integrate(fi, fa, enc, 7);
        REQUIRE(out.data.size() == fi.data.size());
        for (size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] == fi.data[i]);
    }

    SUBCASE("output token count is l for random shape configurations") {
        for (int n = 0; n < 10; ++n) {
            const int l = 1 + static_cast<int>(rng.uniform_index(12));
            const int lp = 1 + static_cast<int>(rng.uniform_index(9));
            const Tensor fi = random_tokens(l, 24, rng);
            const Tensor fa = random_tokens(lp, 24, rng);
            const Tensor out = integrate(fi, fa, enc, l);
            CHECK(out.rows() == l);
            CHECK(out.cols() == 24);
        }
    }

    SUBCASE("information flows from F_a into the integrated tokens") {
        ParamStore probe;
        Param* fa = probe.add("fa", {3, 24});
        Rng r2(33);
        for (double& v : fa->value.data) v = r2.gaussian();
        const Tensor fi = random_tokens(7, 24, rng);
        Graph g;
        const auto out = integrate(g, g.leaf(fi), g.param(fa), enc, 7);
        g.backward(g.sum_squares(out));
        double norm = 0.0;
        for (double v : fa->grad.data) norm += v * v;
        CHECK(norm > 1e-12);
    }
}

TEST_CASE("prior grids: merged mask, depth normalization, content hash") {
    Rng rng(3);
    const TwoHandState s = posed_state(rng);
    const PriorGrids grids = render_state_grids(s);
    CHECK(grids[0].width == 64);

    // silhouette channel is binary and nonempty
    int on = 0;
    for (double v : grids[1].data) {
        CHECK((v == 0.0 || v == 1.0));
        on += v != 0.0;
    }
    CHECK(on > 0);
    // depth channel is 0 on empty pixels, in (0, 1] elsewhere
    for (size_t i = 0; i < grids[2].data.size(); ++i) {
        if (grids[1].data[i] == 0.0) continue;
        CHECK(grids[2].data[i] > 0.0);
        CHECK(grids[2].data[i] <= 1.0);
    }

    const uint64_t h1 = prior_grids_content_hash(grids);
    CHECK(h1 == prior_grids_content_hash(grids));
    const TwoHandState s2 = posed_state(rng);
    CHECK(h1 != prior_grids_content_hash(render_state_grids(s2)));
}

TEST_CASE("distillation: mirror student reaches exactly zero, untrained loss matches variance") {
    Rng rng(4);
    PriorNetConfig tcfg;  // separate branches, 1 layer
    PriorTokenNet teacher(tcfg, 101);

    std::vector<PriorGrids> grids;
    for (int i = 0; i < 4; ++i) grids.push_back(render_state_grids(posed_state(rng)));
    std::vector<std::array<Tensor, 3>> teacher_tokens;
    for (const auto& g : grids) teacher_tokens.push_back(teacher.forward(g));

    SUBCASE("student preloaded with teacher weights gives zero loss") {
        PriorTokenNet student(tcfg, 999);
        student.copy_weights_from(teacher);
        AdamConfig acfg;
        acfg.lr = 0.0;
        Adam adam(acfg);
        const double loss = student.distill_batch(grids, teacher_tokens, adam);
        CHECK(loss == 0.0);
    }

    SUBCASE("untrained joint student starts at the teacher-token second moment") {
        PriorNetConfig scfg = tcfg;
        scfg.joint = true;
        scfg.layers = 2;
        PriorTokenNet student(scfg, 555);
        AdamConfig acfg;
        acfg.lr = 0.0;
        Adam adam(acfg);
        const double loss = student.distill_batch(grids, teacher_tokens, adam);
        double second_moment = 0.0;
        int64_t count = 0;
        for (const auto& tt : teacher_tokens)
            for (const auto& t : tt) {
                for (double v : t.data) second_moment += v * v;
                count += t.numel();
            }
        second_moment /= static_cast<double>(count);
        CHECK(std::abs(loss - second_moment) <= 0.5 * second_moment);
    }

    SUBCASE("a short distillation run reduces the loss") {
        PriorNetConfig scfg = tcfg;
        scfg.joint = true;
        scfg.layers = 2;
        PriorTokenNet student(scfg, 777);
        AdamConfig acfg;
        acfg.lr = 1e-3;
        Adam adam(acfg);
        const double first = student.distill_batch(grids, teacher_tokens, adam);
        double last = first;
        for (int step = 0; step < 60; ++step) last = student.distill_batch(grids, teacher_tokens, adam);
        CHECK(last < 0.5 * first);
    }
}

TEST_CASE("prior net weights round-trip") {
    PriorNetConfig cfg;
    cfg.joint = true;
    PriorTokenNet a(cfg, 11);
    const std::string path = "/tmp/handdiff_test_fusion.bin";
    a.save(path);
    PriorTokenNet b(cfg, 22);
    b.load(path);
    Rng rng(5);
    const PriorGrids grids = render_state_grids(posed_state(rng));
    const auto ta = a.forward(grids);
    const auto tb = b.forward(grids);
    for (int m = 0; m < 3; ++m)
        for (size_t i = 0; i < ta[m].data.size(); ++i) CHECK(ta[m].data[i] == tb[m].data[i]);
    std::remove(path.c_str());
}
