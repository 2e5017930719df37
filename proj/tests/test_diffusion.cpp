#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "handdiff/diffusion.hpp"
#include "handdiff/rng.hpp"

using namespace handdiff;

namespace {

constexpr double kPi = 3.14159265358979323846;

StateVec random_state_vec(Rng& rng, double scale = 1.0) {
    StateVec v;
    for (double& x : v) x = rng.gaussian() * scale;
    return v;
}

TwoHandState clasped_state(Rng& rng, double gap_x_mm) {
    HandParams l, r;
    l.chirality = Chirality::Left;
    r.chirality = Chirality::Right;
    for (int j = 1; j < kNumJoints; ++j) {
        l.set_joint_rotation(j, {rng.uniform(-0.2, 0.3), rng.uniform(-0.05, 0.05), 0});
        r.set_joint_rotation(j, {rng.uniform(-0.2, 0.3), rng.uniform(-0.05, 0.05), 0});
    }
    // palms face each other across x; the flip is split across both hands so
    // every joint stays away from the canonical axis-angle boundary at pi
    l.set_joint_rotation(0, {0, -kPi / 2, 0});
    r.set_joint_rotation(0, {0, kPi / 2, 0});
    r.root_translation = {gap_x_mm, rng.uniform(-6, 6), rng.uniform(-6, 6)};
    return make_two_hand_state(l, r);
}

}  // namespace

TEST_CASE("cosine schedule endpoints, monotonicity, and closed form") {
    const NoiseSchedule s = cosine_schedule(1000);
    CHECK(s.alpha_bar.size() == 1001);
    CHECK(s.alpha_bar[0] == 1.0);
    CHECK(s.alpha_bar[0] >= 0.999);
    CHECK(s.alpha_bar[1000] <= 1e-3);
    for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    for (double ab : s.alpha_bar) {
        CHECK(ab > 0.0);
        CHECK(ab <= 1.0);
    }

    // independent closed-form evaluation with the published beta clip
    auto f = [](double t) {
        const double c = std::cos((t / 1000.0 + 0.008) / 1.008 * (kPi / 2.0));
        return c * c;
    };
    double expect = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        const double beta = std::min(1.0 - (f(t) / f(0)) / (f(t - 1.0) / f(0)), 0.999);
        expect *= 1.0 - beta;
        if (t == 500)
            CHECK(s.alpha_bar[500] == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(s.alpha_bar[1000] == doctest::Approx(expect).epsilon(1e-12));

    CHECK_THROWS(cosine_schedule(1));
}

TEST_CASE("q_sample deterministic branches and range checks") {
    const NoiseSchedule s = cosine_schedule(100);
    Rng rng(5);
    const StateVec x0 = random_state_vec(rng);
    const StateVec zero{};

    const StateVec xt = q_sample(x0, 37, zero, s);
    const double sab = std::sqrt(s.alpha_bar[37]);
    for (int i = 0; i < kStateDim; ++i) CHECK(xt[i] == sab * x0[i]);

    // a schedule holding alpha_bar[1] = 1 reproduces x0 exactly
    NoiseSchedule flat;
    flat.T = 1;
    flat.alpha_bar = {1.0, 1.0};
    const StateVec noise = random_state_vec(rng);
    const StateVec same = q_sample(x0, 1, noise, flat);
    for (int i = 0; i < kStateDim; ++i) CHECK(same[i] == x0[i]);

    CHECK_THROWS(q_sample(x0, 0, zero, s));
    CHECK_THROWS(q_sample(x0, 101, zero, s));
}

TEST_CASE("q_sample Monte-Carlo variance matches 1 - alpha_bar") {
    const NoiseSchedule s = cosine_schedule(1000);
    const int t = 400;
    Rng rng(99);
    const StateVec x0 = random_state_vec(rng);
    const double sab = std::sqrt(s.alpha_bar[t]);

    // pool residual variance across draws and dimensions
    const int draws = 100000 / kStateDim + 1;
    double sum = 0.0, sum_sq = 0.0;
    int64_t count = 0;
    for (int d = 0; d < draws; ++d) {
        const StateVec noise = random_state_vec(rng);
        const StateVec xt = q_sample(x0, t, noise, s);
        for (int i = 0; i < kStateDim; ++i) {
            const double r = xt[i] - sab * x0[i];
            sum += r;
            sum_sq += r * r;
            ++count;
        }
    }
    const double var = sum_sq / count - (sum / count) * (sum / count);
    CHECK(std::abs(var - (1.0 - s.alpha_bar[t])) < 0.02 * (1.0 - s.alpha_bar[t]));
}

TEST_CASE("normalization round-trips to 1e-12") {
    Rng rng(7);
    std::vector<StateVec> samples;
    for (int i = 0; i < 50; ++i) samples.push_back(random_state_vec(rng, 3.0));
    const StateNormalization norm = fit_normalization(samples);
    for (int i = 0; i < 10; ++i) {
        const StateVec v = random_state_vec(rng, 2.0);
        const StateVec back = norm.decode(norm.encode(v));
        for (int d = 0; d < kStateDim; ++d) CHECK(std::abs(back[d] - v[d]) < 1e-12);
    }
}

TEST_CASE("train_batch returns exactly zero for a perfect predictor") {
    DenoiserConfig cfg;
    cfg.d_model = 32;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.time_freqs = 8;
    Denoiser den(cfg, 1);
    // zero the output heads: the prediction is identically zero
    for (Param* p : den.params().all())
        if (p->name.rfind("out.", 0) == 0)
            for (double& v : p->value.data) v = 0.0;

    const NoiseSchedule s = cosine_schedule(100);
    AdamConfig acfg;
    acfg.lr = 0.0;  // keep weights untouched
    Adam adam(acfg);
    const StateVec zero{};
    const std::vector<StateVec> x0(4, zero), cond(4, zero);
    std::vector<StateVec> noises;
    Rng rng(3);
    for (int i = 0; i < 4; ++i) noises.push_back(random_state_vec(rng));
    const std::vector<int> ts = {1, 20, 50, 99};
    const double loss = den.train_batch(x0, cond, ts, noises, s, adam);
    CHECK(loss == 0.0);
}

TEST_CASE("untrained loss sits near the standardized second moment") {
    DenoiserConfig cfg;
    cfg.d_model = 32;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.time_freqs = 8;
    Denoiser den(cfg, 2);
    const NoiseSchedule s = cosine_schedule(1000);
    AdamConfig acfg;
    acfg.lr = 0.0;
    Adam adam(acfg);

    Rng rng(11);
    std::vector<StateVec> x0, cond, noises;
    std::vector<int> ts;
    for (int i = 0; i < 64; ++i) {
        x0.push_back(random_state_vec(rng));  // standardized data
        cond.push_back(x0.back());
        noises.push_back(random_state_vec(rng));
        ts.push_back(1 + static_cast<int>(rng.uniform_index(1000)));
    }
    const double loss = den.train_batch(x0, cond, ts, noises, s, adam);
    CHECK(loss > 0.5);
    CHECK(loss < 1.5);
}

TEST_CASE("overfit smoke test: 500 steps on 10 samples") {
    DenoiserConfig cfg;
    cfg.d_model = 64;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.time_freqs = 16;
    Denoiser den(cfg, 3);
    const NoiseSchedule s = cosine_schedule(1000);

    Rng rng(13);
    std::vector<StateVec> x0, cond;
    for (int i = 0; i < 10; ++i) {
        // conditions carry the answer; the model must learn to read them
        x0.push_back(random_state_vec(rng));
        cond.push_back(x0.back());
    }
    DiffusionTrainConfig tc;
    tc.steps = 500;
    tc.batch = 10;
    tc.lr = 3e-3;
    tc.seed = 17;
    const TrainCurve curve = train_diffusion(den, x0, cond, s, tc);
    CHECK(curve.final_loss < 1e-3);
    CHECK(curve.points.front().second > curve.final_loss);
}

TEST_CASE("guided sampling: oracle denoiser fixed point and zero-lambda equivalence") {
    Rng rng(23);
    // a clean separated state: no collision gradient anywhere
    HandParams l, r;
    l.chirality = Chirality::Left;
    r.chirality = Chirality::Right;
    r.root_translation = {320, 0, 0};
    const TwoHandState clean = make_two_hand_state(l, r);

    std::vector<StateVec> fit;
    for (int i = 0; i < 32; ++i) {
        StateVec v = flatten_state(clean);
        for (double& x : v) x += rng.gaussian() * 0.05;
        fit.push_back(v);
    }
    const StateNormalization norm = fit_normalization(fit);
    const NoiseSchedule schedule = cosine_schedule(1000);
    const StateVec x0_norm = norm.encode(flatten_state(clean));

    const DenoiseFn oracle = [&](const StateVec&, int) { return x0_norm; };

    GuidanceConfig g;
    g.ddim_steps = 10;
    g.lambda = 0.05;
    g.seed = 7;
    CollisionConfig ccfg;

    SUBCASE("fixed point of DDIM with the exact clean estimate") {
        const TwoHandState out = guided_sample(clean, oracle, norm, schedule, g, ccfg);
        const auto vout = flatten_state(out);
        const auto vref = flatten_state(clean);
        for (int d = 0; d < kStateDim; ++d) CHECK(std::abs(vout[d] - vref[d]) < 1e-6);
    }

    SUBCASE("lambda = 0 matches an independent unguided DDIM loop bit-for-bit") {
        GuidanceConfig g0 = g;
        g0.lambda = 0.0;
        // denoiser with some state dependence so the trajectory is nontrivial
        const DenoiseFn affine_fn = [&](const StateVec& x_t, int t) {
            StateVec out;
            for (int d = 0; d < kStateDim; ++d)
                out[d] = 0.9 * x0_norm[d] + 0.1 * std::tanh(x_t[d]) + 1e-4 * t;
            return out;
        };
        const TwoHandState lib = guided_sample(clean, affine_fn, norm, schedule, g0, ccfg);

        // independent reference implementation of strided DDIM, eta = 0
        Rng noise_rng(g0.seed);
        StateVec x;
        for (double& v : x) v = noise_rng.gaussian();
        for (int i = 10; i >= 1; --i) {
            const int t = i * 100;
            const int t_prev = (i - 1) * 100;
            const StateVec xhat0 = affine_fn(x, t);
            const double ab_t = schedule.alpha_bar[t];
            const double ab_p = schedule.alpha_bar[t_prev];
            for (int d = 0; d < kStateDim; ++d) {
                const double eps = (x[d] - std::sqrt(ab_t) * xhat0[d]) / std::sqrt(1.0 - ab_t);
                x[d] = std::sqrt(ab_p) * xhat0[d] + std::sqrt(1.0 - ab_p) * eps;
            }
        }
        TwoHandState ref = unflatten_state(norm.decode(x), clean.left.root_translation);
        canonicalize_pose(ref.left);
        canonicalize_pose(ref.right);

        const auto va = flatten_state(lib), vb = flatten_state(ref);
        for (int d = 0; d < kStateDim; ++d) CHECK(va[d] == vb[d]);
    }

    SUBCASE("same seed, same condition: byte-identical outputs") {
        const TwoHandState a = guided_sample(clean, oracle, norm, schedule, g, ccfg);
        const TwoHandState b = guided_sample(clean, oracle, norm, schedule, g, ccfg);
        const auto va = flatten_state(a), vb = flatten_state(b);
        for (int d = 0; d < kStateDim; ++d) CHECK(va[d] == vb[d]);
    }
}

TEST_CASE("1-D Gaussian toy: DDIM with the analytic posterior denoiser preserves moments") {
    const NoiseSchedule s = cosine_schedule(1000);
    const double sigma0_sq = 2.0;
    const int runs = 100000;
    // 200 strided steps: the DDIM discretization bias on this toy is
    // O(1/steps) and measured at ~1.3% here, inside the 3% budget
    const int steps = 200;

    Rng rng(31);
    double sum = 0.0, sum_sq = 0.0;
    for (int r = 0; r < runs; ++r) {
        double x = rng.gaussian();  // terminal marginal is N(0,1) to high accuracy
        for (int i = steps; i >= 1; --i) {
            const int t = i * (1000 / steps);
            const int t_prev = (i - 1) * (1000 / steps);
            const double ab = s.alpha_bar[t];
            const double ab_p = s.alpha_bar[t_prev];
            // E[x0 | x_t] for a zero-mean Gaussian prior
            const double xhat0 = std::sqrt(ab) * sigma0_sq * x / (ab * sigma0_sq + 1.0 - ab);
            const double eps = (x - std::sqrt(ab) * xhat0) / std::sqrt(1.0 - ab);
            x = std::sqrt(ab_p) * xhat0 + std::sqrt(1.0 - ab_p) * eps;
        }
        sum += x;
        sum_sq += x * x;
    }
    const double mean = sum / runs;
    const double var = sum_sq / runs - mean * mean;
    CHECK(std::abs(mean) < 0.03 * std::sqrt(sigma0_sq));
    CHECK(std::abs(var - sigma0_sq) < 0.03 * sigma0_sq);
}

TEST_CASE("guidance inner loop never increases the collision loss at the stable step size") {
    Rng rng(41);
    CollisionConfig ccfg;
    const HandTemplate& tmpl = shared_hand_template({});
    // recorded stable step size in normalized units (the default guidance
    // step); the frozen-set objective descends monotonically here
    const double stable_lambda = 0.05;

    // mildly penetrated states, matching how the corpus perturbs clean poses
    std::vector<TwoHandState> states;
    while (states.size() < 100) {
        TwoHandState base = clasped_state(rng, rng.uniform(60, 75));
        {
            const HandMesh lm = skin(base.left, hand_tree(), tmpl);
            const HandMesh rm = skin(base.right, hand_tree(), tmpl);
            if (penetration_depth(lm, rm) > 0.0) continue;
        }
        for (int att = 0; att < 200; ++att) {
            TwoHandState t = base;
            for (int j = 0; j < kNumJoints; ++j)
                for (auto* h : {&t.left, &t.right}) {
                    Vec3 aa = h->joint_rotation(j);
                    aa += Vec3{rng.gaussian() * 0.08, rng.gaussian() * 0.08, rng.gaussian() * 0.08};
                    h->set_joint_rotation(j, canonical_axis_angle(aa));
                }
            t.right.root_translation += Vec3{rng.gaussian() * 3, rng.gaussian() * 3, rng.gaussian() * 3};
            t.sync_relative_translation();
            const HandMesh lm = skin(t.left, hand_tree(), tmpl);
            const HandMesh rm = skin(t.right, hand_tree(), tmpl);
            if (penetration_depth(lm, rm) > 0.0) {
                states.push_back(t);
                break;
            }
        }
    }

    std::vector<StateVec> fit;
    for (const auto& s : states) fit.push_back(flatten_state(s));
    const StateNormalization norm = fit_normalization(fit);

    int checked_steps = 0;
    for (const TwoHandState& cond : states) {
        const HandMesh cl = skin(cond.left, hand_tree(), tmpl);
        const HandMesh cr = skin(cond.right, hand_tree(), tmpl);
        StateVec xhat = norm.encode(flatten_state(cond));
        const GuidanceSets sets = detect_guidance_sets(cond, cl, cr, ccfg);
        double prev = frozen_guidance_loss(
            unflatten_state(norm.decode(xhat), cond.left.root_translation), sets, cl, cr, ccfg);
        if (prev <= 0.0) continue;  // penetration without facing pairs
        for (int it = 0; it < 3; ++it) {
            ++checked_steps;
            const TwoHandState refined = unflatten_state(norm.decode(xhat), cond.left.root_translation);
            const CollisionLossGrad cg = frozen_guidance_grad(refined, sets, cl, cr, ccfg);
            for (int d = 0; d < kStateDim; ++d) xhat[d] -= stable_lambda * cg.grad[d] * norm.stddev[d];
            const double now = frozen_guidance_loss(
                unflatten_state(norm.decode(xhat), cond.left.root_translation), sets, cl, cr, ccfg);
            CHECK(now <= prev + 1e-9);
            prev = now;
        }
    }
    CHECK(checked_steps >= 100);
}

TEST_CASE("denoiser save/load round-trip preserves predictions") {
    DenoiserConfig cfg;
    cfg.d_model = 32;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.time_freqs = 8;
    Denoiser den(cfg, 55);
    Rng rng(56);
    StateNormalization norm;
    for (int i = 0; i < kStateDim; ++i) {
        norm.mean[i] = rng.gaussian();
        norm.stddev[i] = 1.0 + rng.uniform();
    }

    const std::string path = "/tmp/handdiff_test_denoiser.bin";
    den.save(path, norm, 1000);
    auto loaded = Denoiser::load(path);
    CHECK(loaded.schedule_T == 1000);
    for (int i = 0; i < kStateDim; ++i) {
        CHECK(loaded.norm.mean[i] == norm.mean[i]);
        CHECK(loaded.norm.stddev[i] == norm.stddev[i]);
    }

    const StateVec x = random_state_vec(rng);
    const StateVec c = random_state_vec(rng);
    const StateVec a = den.predict(x, 500, c);
    const StateVec b = loaded.denoiser.predict(x, 500, c);
    for (int d = 0; d < kStateDim; ++d) CHECK(a[d] == b[d]);
    std::remove(path.c_str());
}
