#include "handdiff/geom.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <ostream>

#include "handdiff/error.hpp"

namespace handdiff {

namespace {

constexpr double kPi = 3.14159265358979323846;

// series switch-over for Rodrigues terms and their derivatives
constexpr double kSmallAngle = 1e-4;

// conjugation by diag(-1,1,1): entries with exactly one row/col index 0 flip
Mat3 conjugate_x(const Mat3& r) {
    Mat3 out = r;
    out(0, 1) = -r(0, 1);
    out(0, 2) = -r(0, 2);
    out(1, 0) = -r(1, 0);
    out(2, 0) = -r(2, 0);
    return out;
}

Vec3 mirror_aa(const Vec3& aa) { return {aa.x, -aa.y, -aa.z}; }

}  // namespace

Mat3 axis_angle_to_matrix(const Vec3& aa) {
    const double theta_sq = aa.squared_norm();
    const double theta = std::sqrt(theta_sq);
    double c1, c2;  // sin(t)/t, (1-cos(t))/t^2
    if (theta < kSmallAngle) {
        c1 = 1.0 - theta_sq / 6.0;
        c2 = 0.5 - theta_sq / 24.0;
    } else {
        c1 = std::sin(theta) / theta;
        c2 = (1.0 - std::cos(theta)) / theta_sq;
    }
    const Mat3 k = skew(aa);
    Mat3 r = Mat3::identity();
    r += k * c1;
    r += (k * k) * c2;
    return r;
}

std::array<Mat3, 3> axis_angle_to_matrix_jacobian(const Vec3& aa) {
    std::array<Mat3, 3> d;
    const double theta_sq = aa.squared_norm();
    const Vec3 e[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    if (theta_sq < kSmallAngle * kSmallAngle) {
        // dR/da_i of I + [a]x + [a]x^2/2, exact to O(theta^2)
        const Mat3 ka = skew(aa);
        for (int i = 0; i < 3; ++i) {
            const Mat3 ki = skew(e[i]);
            d[static_cast<size_t>(i)] = ki + (ki * ka + ka * ki) * 0.5;
        }
        return d;
    }
    const Mat3 r = axis_angle_to_matrix(aa);
    for (int i = 0; i < 3; ++i) {
        // compact exponential-coordinates derivative:
        // dR/da_i = (a_i [a]x + [a x ((I - R) e_i)]x) / |a|^2 * R
        const Vec3 col{e[i].x - r(0, i), e[i].y - r(1, i), e[i].z - r(2, i)};  // (I - R) e_i
        const Mat3 num = skew(aa) * aa[i] + skew(cross(aa, col));
        d[static_cast<size_t>(i)] = (num * (1.0 / theta_sq)) * r;
    }
    return d;
}

Vec3 canonical_axis_angle(const Vec3& aa) {
    double theta = aa.norm();
    if (theta < kPi) return aa;
    const Vec3 axis = aa * (1.0 / theta);
    theta = std::fmod(theta, 2.0 * kPi);
    if (theta > kPi) theta -= 2.0 * kPi;  // -> (-pi, pi]
    if (theta == kPi) {
        // boundary representative: first nonzero axis component positive
        Vec3 v = axis * kPi;
        if (v.x < 0 || (v.x == 0 && (v.y < 0 || (v.y == 0 && v.z < 0)))) v = -v;
        return v;
    }
    return axis * theta;
}

void canonicalize_pose(HandParams& params) {
    for (int j = 0; j < kNumJoints; ++j)
        params.set_joint_rotation(j, canonical_axis_angle(params.joint_rotation(j)));
}

void validate(const HandParams& params) {
    for (double v : params.pose)
        if (!std::isfinite(v)) throw NumericalError("hand pose contains a non-finite value");
    for (int j = 0; j < kNumJoints; ++j) {
        if (params.joint_rotation(j).norm() > kPi)
            throw NumericalError("axis-angle norm above pi; canonicalize first");
    }
    for (double s : params.shape)
        if (!(s >= 0.5 && s <= 2.0)) throw NumericalError("shape multiplier outside [0.5, 2]");
    for (double v : {params.root_translation.x, params.root_translation.y, params.root_translation.z})
        if (!std::isfinite(v)) throw NumericalError("root translation non-finite");
}

namespace {

struct FingerSpec {
    Vec3 mcp_wide, mcp_long, mcp_thick;  // palm placement, per multiplier
    Vec3 seg[3];                         // proximal, middle, distal (incl. tip), * finger_len
    double radius[3];                    // bone radii, * finger_rad
};

KinematicTree build_tree() {
    KinematicTree t{};
    // thumb, index, middle, ring, pinky
    const FingerSpec fingers[kNumFingers] = {
        {{-33, 0, 0}, {0, 18, 0}, {0, 0, -6},
         {{-22, 27, 0}, {-17, 21, 0}, {-12, 15, 0}},
         {11.0, 9.5, 8.0}},
        {{-21, 0, 0}, {0, 82, 0}, {0, 0, 0},
         {{0, 42, 0}, {0, 26, 0}, {0, 23, 0}},
         {9.0, 8.0, 7.0}},
        {{0, 0, 0}, {0, 86, 0}, {0, 0, 0},
         {{0, 46, 0}, {0, 29, 0}, {0, 25, 0}},
         {9.0, 8.0, 7.0}},
        {{19.5, 0, 0}, {0, 81, 0}, {0, 0, 0},
         {{0, 43, 0}, {0, 27, 0}, {0, 23, 0}},
         {8.5, 7.5, 6.5}},
        {{37, 0, 0}, {0, 72, 0}, {0, 0, 0},
         {{0, 34, 0}, {0, 21, 0}, {0, 19, 0}},
         {7.5, 6.5, 6.0}},
    };

    t.parent[0] = -1;
    // palm capsule
    t.bone_tip[0] = {0, 75, 0};
    t.bone_tip_axis[0] = kShapePalmLen;
    t.bone_radius[0] = 27.0;
    t.bone_radius_axis[0] = kShapePalmThick;

    for (int f = 0; f < kNumFingers; ++f) {
        const FingerSpec& fs = fingers[f];
        const int mcp = 1 + f * 3, pip = mcp + 1, dip = mcp + 2;
        t.parent[mcp] = 0;
        t.parent[pip] = mcp;
        t.parent[dip] = pip;
        t.offset_coeff[mcp][kShapePalmWidth] = fs.mcp_wide;
        t.offset_coeff[mcp][kShapePalmLen] = fs.mcp_long;
        t.offset_coeff[mcp][kShapePalmThick] = fs.mcp_thick;
        t.offset_coeff[pip][kShapeFingerLen] = fs.seg[0];
        t.offset_coeff[dip][kShapeFingerLen] = fs.seg[1];
        for (int b = 0; b < 3; ++b) {
            const int j = mcp + b;
            t.bone_tip[j] = fs.seg[b];
            t.bone_tip_axis[j] = kShapeFingerLen;
            t.bone_radius[j] = fs.radius[b];
            t.bone_radius_axis[j] = kShapeFingerRad;
        }
        t.fingertip_joint[f] = dip;
    }
    return t;
}

}  // namespace

const KinematicTree& hand_tree() {
    static const KinematicTree tree = build_tree();
    return tree;
}

HandTemplate build_hand_template(const KinematicTree& tree, const TessellationConfig& tess) {
    if (tess.capsule_u < 3 || tess.capsule_v < 2)
        throw ConfigError("capsule tessellation requires u >= 3, v >= 2");
    HandTemplate tmpl;
    tmpl.tess = tess;
    const int u_count = tess.capsule_u, v_count = tess.capsule_v;

    for (int j = 0; j < kNumJoints; ++j) {
        const Vec3 tip = tree.bone_tip[j];
        const int tip_axis = tree.bone_tip_axis[j];
        const double radius = tree.bone_radius[j];
        const int rad_axis = tree.bone_radius_axis[j];
        const Vec3 dir = normalized(tip);
        Vec3 ref = std::abs(dir.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
        const Vec3 e1 = normalized(cross(dir, ref));
        const Vec3 e2 = cross(dir, e1);

        const int base = static_cast<int>(tmpl.verts.size());
        auto push = [&](const Vec3& axis_part, const Vec3& radial_dir) {
            TemplateVertex tv;
            tv.bone = j;
            tv.axis_vec = axis_part;
            tv.axis_mult = tip_axis;
            tv.radial_vec = radial_dir * radius;
            tv.radial_mult = rad_axis;
            tmpl.verts.push_back(tv);
        };

        push({}, -dir);  // bottom pole
        for (int i = 1; i <= v_count; ++i) {
            const double phi = -kPi / 2.0 + kPi * static_cast<double>(i) / (v_count + 1);
            const Vec3 axis_part = phi < 0.0 ? Vec3{} : tip;
            for (int k = 0; k < u_count; ++k) {
                const double th = 2.0 * kPi * static_cast<double>(k) / u_count;
                const Vec3 rd = (e1 * std::cos(th) + e2 * std::sin(th)) * std::cos(phi) + dir * std::sin(phi);
                push(axis_part, rd);
            }
        }
        push(tip, dir);  // top pole

        auto ring = [&](int i, int k) { return base + 1 + (i - 1) * u_count + (k % u_count); };
        const int top = base + 1 + v_count * u_count;

        auto rest_pos = [&](int idx) {
            const TemplateVertex& tv = tmpl.verts[static_cast<size_t>(idx)];
            return tv.axis_vec + tv.radial_vec;
        };
        auto add_face = [&](int a, int b, int c) {
            // enforce outward winding against the capsule axis
            const Vec3 pa = rest_pos(a), pb = rest_pos(b), pc = rest_pos(c);
            const Vec3 n = cross(pb - pa, pc - pa);
            const Vec3 centroid = (pa + pb + pc) * (1.0 / 3.0);
            const double axis_len = tip.norm();
            const double tproj =
                axis_len > 0.0 ? std::clamp(dot(centroid, tip) / (axis_len * axis_len), 0.0, 1.0) : 0.0;
            const Vec3 outward = centroid - tip * tproj;
            if (dot(n, outward) < 0.0)
                tmpl.faces.push_back({a, c, b});
            else
                tmpl.faces.push_back({a, b, c});
        };

        for (int k = 0; k < u_count; ++k) add_face(base, ring(1, k), ring(1, k + 1));
        for (int i = 1; i < v_count; ++i)
            for (int k = 0; k < u_count; ++k) {
                add_face(ring(i, k), ring(i, k + 1), ring(i + 1, k + 1));
                add_face(ring(i, k), ring(i + 1, k + 1), ring(i + 1, k));
            }
        for (int k = 0; k < u_count; ++k) add_face(top, ring(v_count, k + 1), ring(v_count, k));
    }
    return tmpl;
}

const HandTemplate& shared_hand_template(const TessellationConfig& tess) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, HandTemplate> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(tess.capsule_u, tess.capsule_v);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, build_hand_template(hand_tree(), tess)).first;
    return it->second;
}

FkResult forward_kinematics(const HandParams& params, const KinematicTree& tree) {
    const bool left = params.chirality == Chirality::Left;
    FkResult fk;
    for (int j = 0; j < kNumJoints; ++j) {
        Mat3 rot = axis_angle_to_matrix(params.joint_rotation(j));
        if (left) rot = conjugate_x(rot);
        if (j == 0) {
            fk.world_rot[0] = rot;
            fk.world_org[0] = params.root_translation;
        } else {
            const int p = tree.parent[j];
            Vec3 off = tree.rest_offset(j, params.shape);
            if (left) off = mirror_x(off);
            fk.world_rot[j] = fk.world_rot[static_cast<size_t>(p)] * rot;
            fk.world_org[j] = fk.world_org[static_cast<size_t>(p)] + fk.world_rot[static_cast<size_t>(p)] * off;
        }
    }
    for (int j = 0; j < kNumJoints; ++j) fk.keypoints[j] = fk.world_org[j];
    for (int f = 0; f < kNumFingers; ++f) {
        const int dip = tree.fingertip_joint[f];
        Vec3 tip = tree.bone_tip[dip] * params.shape[static_cast<size_t>(tree.bone_tip_axis[dip])];
        if (left) tip = mirror_x(tip);
        fk.keypoints[kNumJoints + f] = fk.world_org[static_cast<size_t>(dip)] + fk.world_rot[static_cast<size_t>(dip)] * tip;
    }
    return fk;
}

void compute_vertex_normals(HandMesh& mesh) {
    mesh.vertex_normals.assign(mesh.vertices.size(), Vec3{});
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices[static_cast<size_t>(f[0])];
        const Vec3& b = mesh.vertices[static_cast<size_t>(f[1])];
        const Vec3& c = mesh.vertices[static_cast<size_t>(f[2])];
        const Vec3 n = cross(b - a, c - a);  // area-weighted
        mesh.vertex_normals[static_cast<size_t>(f[0])] += n;
        mesh.vertex_normals[static_cast<size_t>(f[1])] += n;
        mesh.vertex_normals[static_cast<size_t>(f[2])] += n;
    }
    for (auto& n : mesh.vertex_normals) n = normalized(n);
}

HandMesh skin(const HandParams& params, const KinematicTree& tree, const HandTemplate& tmpl) {
    const bool left = params.chirality == Chirality::Left;
    const FkResult fk = forward_kinematics(params, tree);

    HandMesh mesh;
    mesh.vertices.resize(tmpl.verts.size());
    mesh.bone_assignment.resize(tmpl.verts.size());
    for (size_t i = 0; i < tmpl.verts.size(); ++i) {
        const TemplateVertex& tv = tmpl.verts[i];
        Vec3 local = tv.axis_vec * params.shape[static_cast<size_t>(tv.axis_mult)] +
                     tv.radial_vec * params.shape[static_cast<size_t>(tv.radial_mult)];
        if (left) local = mirror_x(local);
        mesh.vertices[i] = fk.world_rot[static_cast<size_t>(tv.bone)] * local + fk.world_org[static_cast<size_t>(tv.bone)];
        mesh.bone_assignment[i] = tv.bone;
    }
    mesh.faces = tmpl.faces;
    if (left) {
        for (auto& f : mesh.faces) std::swap(f[1], f[2]);  // mirroring flips winding
    }
    compute_vertex_normals(mesh);
    return mesh;
}

HandParamGrad skin_backward(const HandParams& params, const KinematicTree& tree,
                            const HandTemplate& tmpl, const FkResult& fk,
                            std::span<const std::pair<int, Vec3>> vert_grads) {
    const bool left = params.chirality == Chirality::Left;
    HandParamGrad grad;

    std::array<Vec3, kNumJoints> org_bar{};
    std::array<Mat3, kNumJoints> rot_bar{};

    // vertex -> bone world transform and template-local position
    for (const auto& [vi, g] : vert_grads) {
        const TemplateVertex& tv = tmpl.verts[static_cast<size_t>(vi)];
        const int b = tv.bone;
        Vec3 local = tv.axis_vec * params.shape[static_cast<size_t>(tv.axis_mult)] +
                     tv.radial_vec * params.shape[static_cast<size_t>(tv.radial_mult)];
        Vec3 axis_vec = tv.axis_vec, radial_vec = tv.radial_vec;
        if (left) {
            local = mirror_x(local);
            axis_vec = mirror_x(axis_vec);
            radial_vec = mirror_x(radial_vec);
        }
        org_bar[static_cast<size_t>(b)] += g;
        rot_bar[static_cast<size_t>(b)] += outer(g, local);
        const Vec3 q = fk.world_rot[static_cast<size_t>(b)].transposed() * g;  // dL/d(local)
        grad.shape[static_cast<size_t>(tv.axis_mult)] += dot(q, axis_vec);
        grad.shape[static_cast<size_t>(tv.radial_mult)] += dot(q, radial_vec);
    }

    // tree recursion, children before parents (parent index < child index)
    for (int j = kNumJoints - 1; j >= 0; --j) {
        // local rotation gradient
        Mat3 local_rot = axis_angle_to_matrix(params.joint_rotation(j));
        if (left) local_rot = conjugate_x(local_rot);

        Mat3 local_rot_bar;
        if (j == 0) {
            local_rot_bar = rot_bar[0];
            grad.root_translation += org_bar[0];
        } else {
            const int p = tree.parent[j];
            const Mat3& parent_rot = fk.world_rot[static_cast<size_t>(p)];
            Vec3 off = tree.rest_offset(j, params.shape);
            if (left) off = mirror_x(off);

            // o_j = o_p + R_p off ; R_j = R_p Rot_j
            org_bar[static_cast<size_t>(p)] += org_bar[static_cast<size_t>(j)];
            rot_bar[static_cast<size_t>(p)] += outer(org_bar[static_cast<size_t>(j)], off);
            rot_bar[static_cast<size_t>(p)] += rot_bar[static_cast<size_t>(j)] * local_rot.transposed();
            local_rot_bar = parent_rot.transposed() * rot_bar[static_cast<size_t>(j)];

            const Vec3 off_bar = parent_rot.transposed() * org_bar[static_cast<size_t>(j)];
            for (int k = 0; k < kShapeDim; ++k) {
                Vec3 coeff = tree.offset_coeff[static_cast<size_t>(j)][static_cast<size_t>(k)];
                if (left) coeff = mirror_x(coeff);
                grad.shape[static_cast<size_t>(k)] += dot(off_bar, coeff);
            }
        }

        const auto jac = axis_angle_to_matrix_jacobian(params.joint_rotation(j));
        for (int i = 0; i < 3; ++i) {
            Mat3 d = jac[static_cast<size_t>(i)];
            if (left) d = conjugate_x(d);
            grad.pose[static_cast<size_t>(j * 3 + i)] = frobenius_dot(local_rot_bar, d);
        }
    }
    return grad;
}

HandParams mirror_params(const HandParams& params) {
    HandParams out = params;
    out.chirality = params.chirality == Chirality::Left ? Chirality::Right : Chirality::Left;
    for (int j = 0; j < kNumJoints; ++j) out.set_joint_rotation(j, mirror_aa(params.joint_rotation(j)));
    out.root_translation = mirror_x(params.root_translation);
    return out;
}

TwoHandState make_two_hand_state(const HandParams& left, const HandParams& right) {
    TwoHandState s;
    s.left = left;
    s.right = right;
    s.left.chirality = Chirality::Left;
    s.right.chirality = Chirality::Right;
    s.sync_relative_translation();
    return s;
}

std::array<double, kStateDim> flatten_state(const TwoHandState& s) {
    std::array<double, kStateDim> v{};
    int at = 0;
    for (double p : s.left.pose) v[static_cast<size_t>(at++)] = p;
    for (double p : s.left.shape) v[static_cast<size_t>(at++)] = p;
    for (double p : s.right.pose) v[static_cast<size_t>(at++)] = p;
    for (double p : s.right.shape) v[static_cast<size_t>(at++)] = p;
    v[106] = s.relative_translation.x;
    v[107] = s.relative_translation.y;
    v[108] = s.relative_translation.z;
    return v;
}

TwoHandState unflatten_state(const std::array<double, kStateDim>& v, const Vec3& left_root) {
    TwoHandState s;
    s.left.chirality = Chirality::Left;
    s.right.chirality = Chirality::Right;
    int at = 0;
    for (double& p : s.left.pose) p = v[static_cast<size_t>(at++)];
    for (double& p : s.left.shape) p = v[static_cast<size_t>(at++)];
    for (double& p : s.right.pose) p = v[static_cast<size_t>(at++)];
    for (double& p : s.right.shape) p = v[static_cast<size_t>(at++)];
    s.relative_translation = {v[106], v[107], v[108]};
    s.left.root_translation = left_root;
    s.right.root_translation = left_root + s.relative_translation;
    return s;
}

void write_obj(const HandMesh& mesh, std::ostream& os) {
    char buf[128];
    for (const Vec3& v : mesh.vertices) {
        std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x, v.y, v.z);
        os << buf;
    }
    for (const auto& f : mesh.faces) {
        std::snprintf(buf, sizeof(buf), "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
        os << buf;
    }
}

}  // namespace handdiff
