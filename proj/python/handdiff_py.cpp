#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <vector>

#include "handdiff/collision.hpp"
#include "handdiff/diffusion.hpp"
#include "handdiff/geom.hpp"
#include "handdiff/metrics.hpp"
#include "handdiff/pipeline.hpp"
#include "handdiff/render.hpp"
#include "handdiff/synth.hpp"

namespace py = pybind11;
using namespace handdiff;

namespace {

Vec3 to_vec3(const std::array<double, 3>& v) { return {v[0], v[1], v[2]}; }
std::array<double, 3> from_vec3(const Vec3& v) { return {v.x, v.y, v.z}; }

std::vector<std::array<double, 3>> points_out(const std::array<Vec3, kNumKeypoints>& pts) {
    std::vector<std::array<double, 3>> out;
    out.reserve(pts.size());
    for (const Vec3& p : pts) out.push_back(from_vec3(p));
    return out;
}

std::vector<Vec3> points_in(const std::vector<std::array<double, 3>>& pts) {
    std::vector<Vec3> out;
    out.reserve(pts.size());
    for (const auto& p : pts) out.push_back(to_vec3(p));
    return out;
}

}  // namespace

PYBIND11_MODULE(_handdiff, m) {
    m.doc() = "two-hand interaction engine: procedural hand model, collision "
              "detection, diffusion refinement and pose metrics";

    py::enum_<Chirality>(m, "Chirality")
        .value("LEFT", Chirality::Left)
        .value("RIGHT", Chirality::Right);

    py::class_<HandParams>(m, "HandParams")
        .def(py::init<>())
        .def_readwrite("chirality", &HandParams::chirality)
        .def_property(
            "pose", [](const HandParams& p) { return std::vector<double>(p.pose.begin(), p.pose.end()); },
            [](HandParams& p, const std::vector<double>& v) {
                if (v.size() != kPoseDim) throw py::value_error("pose must have 48 values");
                std::copy(v.begin(), v.end(), p.pose.begin());
            })
        .def_property(
            "shape", [](const HandParams& p) { return std::vector<double>(p.shape.begin(), p.shape.end()); },
            [](HandParams& p, const std::vector<double>& v) {
                if (v.size() != kShapeDim) throw py::value_error("shape must have 5 values");
                std::copy(v.begin(), v.end(), p.shape.begin());
            })
        .def_property(
            "root_translation", [](const HandParams& p) { return from_vec3(p.root_translation); },
            [](HandParams& p, const std::array<double, 3>& v) { p.root_translation = to_vec3(v); });

    py::class_<TwoHandState>(m, "TwoHandState")
        .def(py::init<>())
        .def_readwrite("left", &TwoHandState::left)
        .def_readwrite("right", &TwoHandState::right)
        .def_property(
            "relative_translation",
            [](const TwoHandState& s) { return from_vec3(s.relative_translation); },
            [](TwoHandState& s, const std::array<double, 3>& v) { s.relative_translation = to_vec3(v); })
        .def("sync_relative_translation", &TwoHandState::sync_relative_translation);

    m.def("make_two_hand_state", &make_two_hand_state, py::arg("left"), py::arg("right"));
    m.def("mirror_params", &mirror_params, py::arg("params"));
    m.def("flatten_state", [](const TwoHandState& s) {
        const auto v = flatten_state(s);
        return std::vector<double>(v.begin(), v.end());
    });

    m.def("axis_angle_to_matrix", [](const std::array<double, 3>& aa) {
        const Mat3 r = axis_angle_to_matrix(to_vec3(aa));
        std::array<std::array<double, 3>, 3> out;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) out[i][j] = r(i, j);
        return out;
    });
    m.def("canonical_axis_angle",
          [](const std::array<double, 3>& aa) { return from_vec3(canonical_axis_angle(to_vec3(aa))); });

    py::class_<HandMesh>(m, "HandMesh")
        .def_property_readonly("vertices",
                               [](const HandMesh& msh) {
                                   std::vector<std::array<double, 3>> out;
                                   for (const Vec3& v : msh.vertices) out.push_back(from_vec3(v));
                                   return out;
                               })
        .def_property_readonly("faces", [](const HandMesh& msh) { return msh.faces; })
        .def_property_readonly("vertex_normals",
                               [](const HandMesh& msh) {
                                   std::vector<std::array<double, 3>> out;
                                   for (const Vec3& v : msh.vertex_normals) out.push_back(from_vec3(v));
                                   return out;
                               })
        .def_property_readonly("bone_assignment", [](const HandMesh& msh) { return msh.bone_assignment; });

    m.def(
        "forward_kinematics",
        [](const HandParams& p) { return points_out(forward_kinematics(p, hand_tree()).keypoints); },
        "21 keypoints (16 joint origins + 5 fingertips) in millimeters");
    m.def(
        "skin",
        [](const HandParams& p, int capsule_u, int capsule_v) {
            return skin(p, hand_tree(), shared_hand_template({capsule_u, capsule_v}));
        },
        py::arg("params"), py::arg("capsule_u") = 8, py::arg("capsule_v") = 6);

    py::class_<CollisionConfig>(m, "CollisionConfig")
        .def(py::init<>())
        .def_readwrite("d_threshold_mm", &CollisionConfig::d_threshold_mm)
        .def_readwrite("cos_theta_threshold", &CollisionConfig::cos_theta_threshold)
        .def_readwrite("rho_mm", &CollisionConfig::rho_mm);

    py::class_<CollisionPair>(m, "CollisionPair")
        .def_readonly("i", &CollisionPair::i)
        .def_readonly("j", &CollisionPair::j)
        .def_readonly("distance_sq", &CollisionPair::distance_sq)
        .def_readonly("normal_cos", &CollisionPair::normal_cos);

    m.def(
        "detect_collisions",
        [](const HandMesh& a, const HandMesh& b, const CollisionConfig& cfg, bool brute) {
            return detect_collisions(a, b, cfg, brute ? DetectPath::Brute : DetectPath::Grid).pairs;
        },
        py::arg("mesh_a"), py::arg("mesh_b"), py::arg("config") = CollisionConfig{},
        py::arg("brute_force") = false);

    m.def("gmof", &gmof, py::arg("distance_sq"), py::arg("rho"));
    m.def("gmof_derivative", &gmof_derivative, py::arg("distance_sq"), py::arg("rho"));
    m.def(
        "collision_loss",
        [](const TwoHandState& s, const CollisionConfig& cfg) { return collision_loss(s, cfg); },
        py::arg("state"), py::arg("config") = CollisionConfig{});
    m.def(
        "collision_loss_grad",
        [](const TwoHandState& s, const CollisionConfig& cfg) {
            const auto g = collision_loss_grad(s, cfg);
            return py::make_tuple(g.loss, std::vector<double>(g.grad.begin(), g.grad.end()));
        },
        py::arg("state"), py::arg("config") = CollisionConfig{});
    m.def("penetration_depth", &penetration_depth, py::arg("mesh_a"), py::arg("mesh_b"));

    m.def("cosine_schedule", [](int T) {
        const NoiseSchedule s = cosine_schedule(T);
        return s.alpha_bar;
    });

    m.def("mpjpe", [](const std::vector<std::array<double, 3>>& pred,
                      const std::vector<std::array<double, 3>>& gt) {
        return mpjpe(points_in(pred), points_in(gt));
    });
    m.def("pa_mpjpe", [](const std::vector<std::array<double, 3>>& pred,
                         const std::vector<std::array<double, 3>>& gt) {
        return pa_mpjpe(points_in(pred), points_in(gt));
    });
    m.def("mrrpe", &mrrpe, py::arg("pred"), py::arg("gt"));

    py::class_<GateDecision>(m, "GateDecision")
        .def_readonly("iou", &GateDecision::iou)
        .def_readonly("penetration_depth_mm", &GateDecision::penetration_depth_mm)
        .def_readonly("collision_pairs", &GateDecision::collision_pairs)
        .def_readonly("penetrating", &GateDecision::penetrating)
        .def_readonly("refine", &GateDecision::refine);

    m.def(
        "gate", [](const TwoHandState& s) { return gate(s, GateConfig{}); },
        "silhouette-IoU and penetration check for the refinement gate");

    m.def("load_scenario_file", &load_scenario_file, py::arg("path"));

    m.attr("STATE_DIM") = kStateDim;
    m.attr("NUM_KEYPOINTS") = kNumKeypoints;
    m.attr("NUM_JOINTS") = kNumJoints;
}
