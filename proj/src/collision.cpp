#include "handdiff/collision.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "handdiff/error.hpp"

namespace handdiff {

void CollisionConfig::validate() const {
    if (!(d_threshold_mm > 0.0)) throw ConfigError("collision.d_threshold_mm must be > 0");
    if (!(rho_mm > 0.0)) throw ConfigError("collision.rho_mm must be > 0");
    if (!(cos_theta_threshold >= -1.0 && cos_theta_threshold <= 1.0))
        throw ConfigError("collision.cos_theta_threshold must be in [-1, 1]");
}

namespace {

// dense uniform grid over the vertex bounding box with CSR buckets; bucket
// contents keep ascending vertex order
class VertexGrid {
  public:
    VertexGrid(const std::vector<Vec3>& verts, double cell) : verts_(verts), cell_(cell) {
        if (verts.empty()) return;
        for (const Vec3& v : verts) {
            lo_[0] = std::min(lo_[0], coord(v.x));
            lo_[1] = std::min(lo_[1], coord(v.y));
            lo_[2] = std::min(lo_[2], coord(v.z));
            hi_[0] = std::max(hi_[0], coord(v.x));
            hi_[1] = std::max(hi_[1], coord(v.y));
            hi_[2] = std::max(hi_[2], coord(v.z));
        }
        for (int a = 0; a < 3; ++a) dims_[a] = hi_[a] - lo_[a] + 1;
        const size_t n_cells = static_cast<size_t>(dims_[0]) * static_cast<size_t>(dims_[1]) * static_cast<size_t>(dims_[2]);
        offsets_.assign(n_cells + 1, 0);
        for (const Vec3& v : verts) ++offsets_[cell_index(coord(v.x), coord(v.y), coord(v.z)) + 1];
        for (size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];
        items_.resize(verts.size());
        std::vector<int> cursor(offsets_.begin(), offsets_.end() - 1);
        for (int i = 0; i < static_cast<int>(verts.size()); ++i) {
            const Vec3& v = verts[static_cast<size_t>(i)];
            items_[static_cast<size_t>(cursor[cell_index(coord(v.x), coord(v.y), coord(v.z))]++)] = i;
        }
    }

    template <typename Fn>
    void for_neighbors(const Vec3& p, Fn&& fn) const {
        if (verts_.empty()) return;
        const int cx = coord(p.x), cy = coord(p.y), cz = coord(p.z);
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) visit_cell(cx + dx, cy + dy, cz + dz, fn);
    }

    // nearest vertex by expanding Chebyshev shells, seeded at the first shell
    // that can touch the occupied box
    int nearest(const Vec3& p) const {
        if (verts_.empty()) return -1;
        const int c[3] = {coord(p.x), coord(p.y), coord(p.z)};
        int start = 0, last = 0;
        for (int a = 0; a < 3; ++a) {
            start = std::max({start, lo_[a] - c[a], c[a] - hi_[a]});
            last = std::max({last, std::abs(c[a] - lo_[a]), std::abs(c[a] - hi_[a])});
        }
        int best = -1;
        double best_sq = 1e300;
        auto visit = [&](int dx, int dy, int dz) {
            visit_cell(c[0] + dx, c[1] + dy, c[2] + dz, [&](int j) {
                const double d = (verts_[static_cast<size_t>(j)] - p).squared_norm();
                if (d < best_sq || (d == best_sq && j < best)) {
                    best_sq = d;
                    best = j;
                }
            });
        };
        for (int ring = start; ring <= last; ++ring) {
            if (ring == 0) {
                visit(0, 0, 0);
            } else {
                for (int dx = -ring; dx <= ring; ++dx)
                    for (int dy = -ring; dy <= ring; ++dy) {
                        visit(dx, dy, -ring);
                        visit(dx, dy, ring);
                    }
                for (int dx = -ring; dx <= ring; ++dx)
                    for (int dz = -ring + 1; dz <= ring - 1; ++dz) {
                        visit(dx, -ring, dz);
                        visit(dx, ring, dz);
                    }
                for (int dy = -ring + 1; dy <= ring - 1; ++dy)
                    for (int dz = -ring + 1; dz <= ring - 1; ++dz) {
                        visit(-ring, dy, dz);
                        visit(ring, dy, dz);
                    }
            }
            // anything beyond this shell is at least ring*cell away
            const double lower = static_cast<double>(ring) * cell_;
            if (best >= 0 && best_sq <= lower * lower) return best;
        }
        return best;
    }

  private:
    int coord(double v) const { return static_cast<int>(std::floor(v / cell_)); }
    size_t cell_index(int x, int y, int z) const {
        return (static_cast<size_t>(x - lo_[0]) * static_cast<size_t>(dims_[1]) + static_cast<size_t>(y - lo_[1])) * static_cast<size_t>(dims_[2]) +
               static_cast<size_t>(z - lo_[2]);
    }
    template <typename Fn>
    void visit_cell(int x, int y, int z, Fn&& fn) const {
        if (x < lo_[0] || x > hi_[0] || y < lo_[1] || y > hi_[1] || z < lo_[2] || z > hi_[2]) return;
        const size_t ci = cell_index(x, y, z);
        for (int k = offsets_[ci]; k < offsets_[ci + 1]; ++k) fn(items_[static_cast<size_t>(k)]);
    }

    const std::vector<Vec3>& verts_;
    double cell_;
    int lo_[3] = {1 << 30, 1 << 30, 1 << 30};
    int hi_[3] = {-(1 << 30), -(1 << 30), -(1 << 30)};
    int dims_[3] = {0, 0, 0};
    std::vector<int> offsets_;
    std::vector<int> items_;
};

bool pair_passes(const HandMesh& a, const HandMesh& b, int i, int j, const CollisionConfig& cfg,
                 double thr_sq, CollisionPair& out) {
    const double d_sq = (a.vertices[static_cast<size_t>(i)] - b.vertices[static_cast<size_t>(j)]).squared_norm();
    if (!(d_sq < thr_sq)) return false;
    const double nc = dot(a.vertex_normals[static_cast<size_t>(i)], b.vertex_normals[static_cast<size_t>(j)]);
    if (!(nc < cfg.cos_theta_threshold)) return false;
    out = {i, j, d_sq, nc};
    return true;
}

}  // namespace

CollisionSet detect_collisions(const HandMesh& a, const HandMesh& b, const CollisionConfig& cfg,
                               DetectPath path) {
    cfg.validate();
    const double thr_sq = cfg.d_threshold_mm * cfg.d_threshold_mm;
    CollisionSet set;
    CollisionPair p;

    if (path == DetectPath::Brute) {
        for (int i = 0; i < static_cast<int>(a.vertices.size()); ++i)
            for (int j = 0; j < static_cast<int>(b.vertices.size()); ++j)
                if (pair_passes(a, b, i, j, cfg, thr_sq, p)) set.pairs.push_back(p);
    } else {
        const VertexGrid grid(b.vertices, cfg.d_threshold_mm);
        for (int i = 0; i < static_cast<int>(a.vertices.size()); ++i)
            grid.for_neighbors(a.vertices[static_cast<size_t>(i)], [&](int j) {
                if (pair_passes(a, b, i, j, cfg, thr_sq, p)) set.pairs.push_back(p);
            });
    }
    std::sort(set.pairs.begin(), set.pairs.end(),
              [](const CollisionPair& x, const CollisionPair& y) {
                  return x.i != y.i ? x.i < y.i : x.j < y.j;
              });
    return set;
}

double gmof(double distance_sq, double rho) {
    const double rho_sq = rho * rho;
    return rho_sq * distance_sq / (distance_sq + rho_sq);
}

double gmof_derivative(double distance_sq, double rho) {
    const double rho_sq = rho * rho;
    const double denom = distance_sq + rho_sq;
    return rho_sq * rho_sq / (denom * denom);
}

namespace {
constexpr double kPrintedGuard = 1e-9;

double guarded_denom(double distance_sq, double rho) {
    double denom = distance_sq - rho;
    if (std::abs(denom) < kPrintedGuard) denom = denom >= 0.0 ? kPrintedGuard : -kPrintedGuard;
    return denom;
}
}  // namespace

double gmof_as_printed(double distance_sq, double rho) {
    return distance_sq / guarded_denom(distance_sq, rho);
}

double gmof_as_printed_derivative(double distance_sq, double rho) {
    const double denom = guarded_denom(distance_sq, rho);
    return -rho / (denom * denom);
}

double gmof_value(const CollisionConfig& cfg, double distance_sq) {
    return cfg.gmof_form == CollisionConfig::GmofForm::Standard ? gmof(distance_sq, cfg.rho_mm)
                                                                : gmof_as_printed(distance_sq, cfg.rho_mm);
}

double gmof_value_derivative(const CollisionConfig& cfg, double distance_sq) {
    return cfg.gmof_form == CollisionConfig::GmofForm::Standard
               ? gmof_derivative(distance_sq, cfg.rho_mm)
               : gmof_as_printed_derivative(distance_sq, cfg.rho_mm);
}

double gmof_repulsion(double distance_sq, double rho) {
    const double rho_sq = rho * rho;
    return rho_sq * rho_sq / (distance_sq + rho_sq);
}

double gmof_repulsion_derivative(double distance_sq, double rho) {
    return -gmof_derivative(distance_sq, rho);
}

double guidance_kernel_value(const CollisionConfig& cfg, double distance_sq) {
    // the as-printed form is already decreasing in distance
    return cfg.gmof_form == CollisionConfig::GmofForm::Standard
               ? gmof_repulsion(distance_sq, cfg.rho_mm)
               : gmof_as_printed(distance_sq, cfg.rho_mm);
}

double guidance_kernel_derivative(const CollisionConfig& cfg, double distance_sq) {
    return cfg.gmof_form == CollisionConfig::GmofForm::Standard
               ? gmof_repulsion_derivative(distance_sq, cfg.rho_mm)
               : gmof_as_printed_derivative(distance_sq, cfg.rho_mm);
}

namespace {

double set_loss(const CollisionSet& set, const CollisionConfig& cfg) {
    double loss = 0.0;
    for (const CollisionPair& p : set.pairs) loss += gmof_value(cfg, p.distance_sq);
    return loss;
}

// accumulate dL/dvertex on both meshes for one detected set; `kernel_grad`
// maps pair distance_sq to the scalar kernel derivative
template <typename KernelGrad>
void accumulate_pair_grads(const CollisionSet& set, const HandMesh& a, const HandMesh& b,
                           KernelGrad&& kernel_grad, std::vector<Vec3>* grad_a,
                           std::vector<Vec3>* grad_b) {
    for (const CollisionPair& p : set.pairs) {
        const double w = kernel_grad(p.distance_sq);
        const Vec3 diff = a.vertices[static_cast<size_t>(p.i)] - b.vertices[static_cast<size_t>(p.j)];
        const Vec3 g = diff * (2.0 * w);
        if (grad_a) (*grad_a)[static_cast<size_t>(p.i)] += g;
        if (grad_b) (*grad_b)[static_cast<size_t>(p.j)] -= g;
    }
}

std::vector<std::pair<int, Vec3>> dense_to_sparse(const std::vector<Vec3>& g) {
    std::vector<std::pair<int, Vec3>> out;
    for (int i = 0; i < static_cast<int>(g.size()); ++i) {
        const Vec3& v = g[static_cast<size_t>(i)];
        if (v.x != 0.0 || v.y != 0.0 || v.z != 0.0) out.emplace_back(i, v);
    }
    return out;
}

// map per-hand parameter grads into the flattened layout; the left root is
// pinned at the state anchor, relative translation moves the right root only
void assemble_state_grad(const HandParamGrad& left, const HandParamGrad& right,
                         std::array<double, kStateDim>* out) {
    for (int i = 0; i < kPoseDim; ++i) (*out)[static_cast<size_t>(i)] += left.pose[static_cast<size_t>(i)];
    for (int i = 0; i < kShapeDim; ++i) (*out)[static_cast<size_t>(kPoseDim + i)] += left.shape[static_cast<size_t>(i)];
    const int r0 = kPoseDim + kShapeDim;
    for (int i = 0; i < kPoseDim; ++i) (*out)[static_cast<size_t>(r0 + i)] += right.pose[static_cast<size_t>(i)];
    for (int i = 0; i < kShapeDim; ++i) (*out)[static_cast<size_t>(r0 + kPoseDim + i)] += right.shape[static_cast<size_t>(i)];
    (*out)[106] += right.root_translation.x;
    (*out)[107] += right.root_translation.y;
    (*out)[108] += right.root_translation.z;
}

}  // namespace

double collision_loss(const TwoHandState& state, const CollisionConfig& cfg,
                      const TessellationConfig& tess) {
    const HandTemplate& tmpl = shared_hand_template(tess);
    const HandMesh lm = skin(state.left, hand_tree(), tmpl);
    const HandMesh rm = skin(state.right, hand_tree(), tmpl);
    return set_loss(detect_collisions(lm, rm, cfg), cfg);
}

CollisionLossGrad collision_loss_grad(const TwoHandState& state, const CollisionConfig& cfg,
                                      const TessellationConfig& tess) {
    const KinematicTree& tree = hand_tree();
    const HandTemplate& tmpl = shared_hand_template(tess);
    const HandMesh lm = skin(state.left, tree, tmpl);
    const HandMesh rm = skin(state.right, tree, tmpl);

    const CollisionSet set = detect_collisions(lm, rm, cfg);
    std::vector<Vec3> grad_l(lm.vertices.size()), grad_r(rm.vertices.size());
    auto kernel = [&](double d_sq) { return gmof_value_derivative(cfg, d_sq); };
    accumulate_pair_grads(set, lm, rm, kernel, &grad_l, &grad_r);

    CollisionLossGrad out;
    out.loss = set_loss(set, cfg);
    const auto sparse_l = dense_to_sparse(grad_l);
    const auto sparse_r = dense_to_sparse(grad_r);
    const FkResult fk_l = forward_kinematics(state.left, tree);
    const FkResult fk_r = forward_kinematics(state.right, tree);
    const HandParamGrad gl = skin_backward(state.left, tree, tmpl, fk_l, sparse_l);
    const HandParamGrad gr = skin_backward(state.right, tree, tmpl, fk_r, sparse_r);
    assemble_state_grad(gl, gr, &out.grad);
    return out;
}

GuidanceSets detect_guidance_sets(const TwoHandState& refined, const HandMesh& cond_left,
                                  const HandMesh& cond_right, const CollisionConfig& cfg,
                                  const TessellationConfig& tess) {
    const HandTemplate& tmpl = shared_hand_template(tess);
    const HandMesh lm = skin(refined.left, hand_tree(), tmpl);
    const HandMesh rm = skin(refined.right, hand_tree(), tmpl);
    GuidanceSets sets;
    sets.left_right = detect_collisions(lm, rm, cfg);
    sets.left_cond = detect_collisions(lm, cond_right, cfg);
    sets.right_cond = detect_collisions(rm, cond_left, cfg);
    return sets;
}

namespace {

// recompute kernel values over frozen pair memberships at the current meshes
double frozen_set_loss(const CollisionSet& set, const HandMesh& a, const HandMesh& b,
                       const CollisionConfig& cfg) {
    double loss = 0.0;
    for (const CollisionPair& p : set.pairs) {
        const double d_sq = (a.vertices[static_cast<size_t>(p.i)] - b.vertices[static_cast<size_t>(p.j)]).squared_norm();
        loss += guidance_kernel_value(cfg, d_sq);
    }
    return loss;
}

template <typename Kernel>
void frozen_pair_grads(const CollisionSet& set, const HandMesh& a, const HandMesh& b,
                       Kernel&& kernel_grad, std::vector<Vec3>* grad_a, std::vector<Vec3>* grad_b) {
    for (const CollisionPair& p : set.pairs) {
        const Vec3 diff = a.vertices[static_cast<size_t>(p.i)] - b.vertices[static_cast<size_t>(p.j)];
        const double w = kernel_grad(diff.squared_norm());
        const Vec3 g = diff * (2.0 * w);
        if (grad_a) (*grad_a)[static_cast<size_t>(p.i)] += g;
        if (grad_b) (*grad_b)[static_cast<size_t>(p.j)] -= g;
    }
}

}  // namespace

double frozen_guidance_loss(const TwoHandState& refined, const GuidanceSets& sets,
                            const HandMesh& cond_left, const HandMesh& cond_right,
                            const CollisionConfig& cfg, const TessellationConfig& tess) {
    const HandTemplate& tmpl = shared_hand_template(tess);
    const HandMesh lm = skin(refined.left, hand_tree(), tmpl);
    const HandMesh rm = skin(refined.right, hand_tree(), tmpl);
    return frozen_set_loss(sets.left_right, lm, rm, cfg) +
           frozen_set_loss(sets.left_cond, lm, cond_right, cfg) +
           frozen_set_loss(sets.right_cond, rm, cond_left, cfg);
}

CollisionLossGrad frozen_guidance_grad(const TwoHandState& refined, const GuidanceSets& sets,
                                       const HandMesh& cond_left, const HandMesh& cond_right,
                                       const CollisionConfig& cfg, const TessellationConfig& tess) {
    const KinematicTree& tree = hand_tree();
    const HandTemplate& tmpl = shared_hand_template(tess);
    const HandMesh lm = skin(refined.left, tree, tmpl);
    const HandMesh rm = skin(refined.right, tree, tmpl);

    std::vector<Vec3> grad_l(lm.vertices.size()), grad_r(rm.vertices.size());
    auto kernel = [&](double d_sq) { return guidance_kernel_derivative(cfg, d_sq); };
    frozen_pair_grads(sets.left_right, lm, rm, kernel, &grad_l, &grad_r);
    frozen_pair_grads(sets.left_cond, lm, cond_right, kernel, &grad_l, nullptr);
    frozen_pair_grads(sets.right_cond, rm, cond_left, kernel, &grad_r, nullptr);

    CollisionLossGrad out;
    out.loss = frozen_set_loss(sets.left_right, lm, rm, cfg) +
               frozen_set_loss(sets.left_cond, lm, cond_right, cfg) +
               frozen_set_loss(sets.right_cond, rm, cond_left, cfg);
    const auto sparse_l = dense_to_sparse(grad_l);
    const auto sparse_r = dense_to_sparse(grad_r);
    const FkResult fk_l = forward_kinematics(refined.left, tree);
    const FkResult fk_r = forward_kinematics(refined.right, tree);
    const HandParamGrad gl = skin_backward(refined.left, tree, tmpl, fk_l, sparse_l);
    const HandParamGrad gr = skin_backward(refined.right, tree, tmpl, fk_r, sparse_r);
    assemble_state_grad(gl, gr, &out.grad);
    return out;
}

namespace {

// one-sided penetration: max nearest-vertex distance over vertices of A
// classified inside B. Inside means behind every face plane incident to the
// nearest vertex; the single nearest-plane test misclassifies points
// hovering in concave gaps between fingers.
double penetration_one_sided(const HandMesh& a, const HandMesh& b, const VertexGrid& b_grid,
                             const std::vector<std::vector<int>>& b_incident,
                             const std::vector<Vec3>& b_face_normals,
                             const std::vector<Vec3>& b_face_centroids, bool first_hit_only) {
    double depth = 0.0;
    for (const Vec3& p : a.vertices) {
        const int nv = b_grid.nearest(p);
        if (nv < 0) continue;
        const double dist = (p - b.vertices[static_cast<size_t>(nv)]).norm();
        if (dist <= depth) continue;  // cannot improve the max
        bool inside = !b_incident[static_cast<size_t>(nv)].empty();
        for (int f : b_incident[static_cast<size_t>(nv)]) {
            if (dot(p - b_face_centroids[static_cast<size_t>(f)], b_face_normals[static_cast<size_t>(f)]) >= 0.0) {
                inside = false;
                break;
            }
        }
        if (inside) {
            depth = dist;
            if (first_hit_only) return depth;
        }
    }
    return depth;
}

struct MeshSurface {
    std::vector<std::vector<int>> incident;
    std::vector<Vec3> face_normals;
    std::vector<Vec3> face_centroids;

    explicit MeshSurface(const HandMesh& m) {
        incident.resize(m.vertices.size());
        face_normals.reserve(m.faces.size());
        face_centroids.reserve(m.faces.size());
        for (int f = 0; f < static_cast<int>(m.faces.size()); ++f) {
            const auto& fv = m.faces[static_cast<size_t>(f)];
            const Vec3& va = m.vertices[static_cast<size_t>(fv[0])];
            const Vec3& vb = m.vertices[static_cast<size_t>(fv[1])];
            const Vec3& vc = m.vertices[static_cast<size_t>(fv[2])];
            face_normals.push_back(normalized(cross(vb - va, vc - va)));
            face_centroids.push_back((va + vb + vc) * (1.0 / 3.0));
            for (int k = 0; k < 3; ++k) incident[static_cast<size_t>(fv[static_cast<size_t>(k)])].push_back(f);
        }
    }
};

}  // namespace

double penetration_depth(const HandMesh& a, const HandMesh& b) {
    if (a.vertices.empty() || b.vertices.empty()) return 0.0;
    const MeshSurface sa(a), sb(b);
    // cell sized to typical capsule edge spacing
    const VertexGrid ga(a.vertices, 8.0), gb(b.vertices, 8.0);
    const double d_ab = penetration_one_sided(a, b, gb, sb.incident, sb.face_normals, sb.face_centroids, false);
    const double d_ba = penetration_one_sided(b, a, ga, sa.incident, sa.face_normals, sa.face_centroids, false);
    return std::max(d_ab, d_ba);
}

bool meshes_penetrate(const HandMesh& a, const HandMesh& b) {
    if (a.vertices.empty() || b.vertices.empty()) return false;
    const MeshSurface sb(b);
    const VertexGrid gb(b.vertices, 8.0);
    if (penetration_one_sided(a, b, gb, sb.incident, sb.face_normals, sb.face_centroids, true) > 0.0)
        return true;
    const MeshSurface sa(a);
    const VertexGrid ga(a.vertices, 8.0);
    return penetration_one_sided(b, a, ga, sa.incident, sa.face_normals, sa.face_centroids, true) > 0.0;
}

}  // namespace handdiff
