#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "handdiff/geom.hpp"

namespace handdiff {

// Interpenetration detection with the hybrid distance-orientation criterion,
// the saturating collision loss, its analytic parameter gradient, and the
// penetration-depth metric.

struct CollisionConfig {
    double d_threshold_mm = 4.0;
    double cos_theta_threshold = -0.5;  // cos 120 deg
    double rho_mm = 5.0;
    enum class GmofForm : uint8_t { Standard, AsPrinted } gmof_form = GmofForm::Standard;

    void validate() const;
};

struct CollisionPair {
    int i = 0;  // vertex in mesh A
    int j = 0;  // vertex in mesh B
    double distance_sq = 0.0;  // mm^2
    double normal_cos = 0.0;
};

struct CollisionSet {
    std::vector<CollisionPair> pairs;  // sorted lexicographically by (i, j)
};

enum class DetectPath : uint8_t { Grid, Brute };

// pairs with distance_sq < d_threshold^2 and normal_cos < cos_theta_threshold;
// both paths produce bit-identical sets
CollisionSet detect_collisions(const HandMesh& a, const HandMesh& b, const CollisionConfig& cfg,
                               DetectPath path = DetectPath::Grid);

// Geman-McClure penalty rho^2 x / (x + rho^2) on the squared distance x;
// bounded by rho^2, slope 1 at x = 0
double gmof(double distance_sq, double rho);
double gmof_derivative(double distance_sq, double rho);

// the epsilon-guarded x / (x - rho) variant, selectable via config only
double gmof_as_printed(double distance_sq, double rho);
double gmof_as_printed_derivative(double distance_sq, double rho);

double gmof_value(const CollisionConfig& cfg, double distance_sq);
double gmof_value_derivative(const CollisionConfig& cfg, double distance_sq);

// saturating proximity penalty rho^2 - gmof = rho^4 / (x + rho^2): the
// guidance objective; decreasing in distance, so descending it separates
// the hands and retained pairs can only leave the set
double gmof_repulsion(double distance_sq, double rho);
double gmof_repulsion_derivative(double distance_sq, double rho);

double guidance_kernel_value(const CollisionConfig& cfg, double distance_sq);
double guidance_kernel_derivative(const CollisionConfig& cfg, double distance_sq);

// sum of gmof over the collision set between the two skinned hands
double collision_loss(const TwoHandState& state, const CollisionConfig& cfg,
                      const TessellationConfig& tess = {});

struct CollisionLossGrad {
    double loss = 0.0;
    std::array<double, kStateDim> grad{};  // d loss / d flattened state
};

// analytic gradient through gmof -> vertices -> skinning -> parameters;
// the collision set is frozen while differentiating
CollisionLossGrad collision_loss_grad(const TwoHandState& state, const CollisionConfig& cfg,
                                      const TessellationConfig& tess = {});

// guidance objective: the repulsive kernel summed over refined-left vs
// refined-right pairs plus each refined hand against the opposite fixed
// condition mesh; gradients flow only through the refined state
struct GuidanceSets {
    CollisionSet left_right;   // refined left vs refined right
    CollisionSet left_cond;    // refined left vs condition right
    CollisionSet right_cond;   // refined right vs condition left
    size_t total_pairs() const {
        return left_right.pairs.size() + left_cond.pairs.size() + right_cond.pairs.size();
    }
};

GuidanceSets detect_guidance_sets(const TwoHandState& refined, const HandMesh& cond_left,
                                  const HandMesh& cond_right, const CollisionConfig& cfg,
                                  const TessellationConfig& tess = {});

// pair membership frozen, distances live: a smooth objective the inner
// gradient iterations can descend monotonically
CollisionLossGrad frozen_guidance_grad(const TwoHandState& refined, const GuidanceSets& sets,
                                       const HandMesh& cond_left, const HandMesh& cond_right,
                                       const CollisionConfig& cfg, const TessellationConfig& tess = {});

double frozen_guidance_loss(const TwoHandState& refined, const GuidanceSets& sets,
                            const HandMesh& cond_left, const HandMesh& cond_right,
                            const CollisionConfig& cfg, const TessellationConfig& tess = {});

// max depth a vertex of one mesh sits inside the other, nearest-vertex
// approximation with a local face-plane inside test; 0 when disjoint
double penetration_depth(const HandMesh& a, const HandMesh& b);

// same classification, stops at the first interior vertex
bool meshes_penetrate(const HandMesh& a, const HandMesh& b);

}  // namespace handdiff
