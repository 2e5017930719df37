#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "handdiff/vec3.hpp"

namespace handdiff {

// Procedural two-hand model: a 16-joint kinematic tree per hand (wrist +
// MCP/PIP/DIP per finger), five interpretable shape multipliers, one-hot
// linear blend skinning over per-bone capsules. Millimeters throughout.

constexpr int kNumJoints = 16;
constexpr int kNumFingers = 5;
constexpr int kNumKeypoints = 21;  // 16 joint origins + 5 fingertips
constexpr int kPoseDim = kNumJoints * 3;
constexpr int kShapeDim = 5;
// flattened two-hand vector: [left pose 48, left shape 5, right pose 48,
// right shape 5, relative translation 3]
constexpr int kStateDim = 2 * (kPoseDim + kShapeDim) + 3;

enum class Chirality : uint8_t { Left, Right };

// shape multiplier slots
enum ShapeAxis : int {
    kShapeFingerLen = 0,
    kShapeFingerRad = 1,
    kShapePalmWidth = 2,
    kShapePalmLen = 3,
    kShapePalmThick = 4,
};

struct HandParams {
    Chirality chirality = Chirality::Right;
    std::array<double, kPoseDim> pose{};          // axis-angle radians, joint 0 = global
    std::array<double, kShapeDim> shape{1, 1, 1, 1, 1};
    Vec3 root_translation{};                      // mm

    Vec3 joint_rotation(int j) const { return {pose[j * 3 + 0], pose[j * 3 + 1], pose[j * 3 + 2]}; }
    void set_joint_rotation(int j, const Vec3& aa) {
        pose[j * 3 + 0] = aa.x;
        pose[j * 3 + 1] = aa.y;
        pose[j * 3 + 2] = aa.z;
    }
};

struct TessellationConfig {
    int capsule_u = 8;
    int capsule_v = 6;
};

struct KinematicTree {
    std::array<int, kNumJoints> parent{};
    // rest offset of joint j from its parent, linear in the shape multipliers:
    // offset_j(shape) = sum_k shape[k] * offset_coeff[j][k]
    std::array<std::array<Vec3, kShapeDim>, kNumJoints> offset_coeff{};
    // bone capsule of joint j runs from the joint origin to bone_tip in the
    // joint's local frame; tip and radius each scale with one multiplier
    std::array<Vec3, kNumJoints> bone_tip{};
    std::array<int, kNumJoints> bone_tip_axis{};
    std::array<double, kNumJoints> bone_radius{};
    std::array<int, kNumJoints> bone_radius_axis{};
    // fingertip keypoints coincide with the distal bones' tips
    std::array<int, kNumFingers> fingertip_joint{};

    Vec3 rest_offset(int j, const std::array<double, kShapeDim>& shape) const {
        Vec3 o;
        for (int k = 0; k < kShapeDim; ++k) o += offset_coeff[j][static_cast<size_t>(k)] * shape[static_cast<size_t>(k)];
        return o;
    }
};

// the built-in right-hand template rig
const KinematicTree& hand_tree();

struct HandMesh {
    std::vector<Vec3> vertices;                 // mm
    std::vector<std::array<int, 3>> faces;      // CCW from outside
    std::vector<Vec3> vertex_normals;           // unit
    std::vector<int> bone_assignment;           // one-hot LBS weights
};

// per-vertex capsule geometry, linear in two shape multipliers:
// local(shape) = shape[axis_mult] * axis_vec + shape[radial_mult] * radial_vec
struct TemplateVertex {
    int bone = 0;
    Vec3 axis_vec;
    int axis_mult = 0;
    Vec3 radial_vec;
    int radial_mult = 0;
};

struct HandTemplate {
    TessellationConfig tess;
    std::vector<TemplateVertex> verts;
    std::vector<std::array<int, 3>> faces;  // outward winding for a right hand
};

HandTemplate build_hand_template(const KinematicTree& tree, const TessellationConfig& tess);

// process-wide cache keyed on tessellation; templates are immutable
const HandTemplate& shared_hand_template(const TessellationConfig& tess);

struct FkResult {
    std::array<Mat3, kNumJoints> world_rot;
    std::array<Vec3, kNumJoints> world_org;
    std::array<Vec3, kNumKeypoints> keypoints;
};

// Rodrigues' formula; the zero vector maps to the identity.
Mat3 axis_angle_to_matrix(const Vec3& aa);

// d(axis_angle_to_matrix)/d(aa_i) for i = 0..2
std::array<Mat3, 3> axis_angle_to_matrix_jacobian(const Vec3& aa);

// canonical representative with norm < pi (norm exactly pi keeps the sign
// making its first nonzero component positive)
Vec3 canonical_axis_angle(const Vec3& aa);

void canonicalize_pose(HandParams& params);

// throws NumericalError when invariants are violated (non-finite pose,
// shape outside [0.5, 2], axis-angle norm above pi)
void validate(const HandParams& params);

FkResult forward_kinematics(const HandParams& params, const KinematicTree& tree);

HandMesh skin(const HandParams& params, const KinematicTree& tree, const HandTemplate& tmpl);

// area-weighted vertex normals from the current faces
void compute_vertex_normals(HandMesh& mesh);

struct HandParamGrad {
    std::array<double, kPoseDim> pose{};
    std::array<double, kShapeDim> shape{};
    Vec3 root_translation{};
};

// reverse-mode gradient of a scalar through skinning: vert_grads holds
// (vertex index, dL/dvertex) pairs; positions only, normals are not
// differentiated
HandParamGrad skin_backward(const HandParams& params, const KinematicTree& tree,
                            const HandTemplate& tmpl, const FkResult& fk,
                            std::span<const std::pair<int, Vec3>> vert_grads);

// chirality flip: mirrored pose/root, mirror(mirror(p)) == p
HandParams mirror_params(const HandParams& params);

struct TwoHandState {
    HandParams left;
    HandParams right;
    Vec3 relative_translation;  // right root - left root, mm

    void sync_relative_translation() {
        relative_translation = right.root_translation - left.root_translation;
    }
};

TwoHandState make_two_hand_state(const HandParams& left, const HandParams& right);

// flattening drops the absolute left root; decode re-anchors it
std::array<double, kStateDim> flatten_state(const TwoHandState& s);
TwoHandState unflatten_state(const std::array<double, kStateDim>& v, const Vec3& left_root = {});

void write_obj(const HandMesh& mesh, std::ostream& os);

}  // namespace handdiff
