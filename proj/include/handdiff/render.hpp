#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <vector>

#include "handdiff/geom.hpp"
#include "handdiff/vec3.hpp"

namespace handdiff {

// Orthographic rasterizer for the 2D priors (keypoints, silhouette, depth)
// and the silhouette IoU consumed by the inference gate. Pixel-center
// sampling, no anti-aliasing.

template <typename T>
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(w) * static_cast<size_t>(h), fill) {}

    T& at(int x, int y) { return data[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)]; }
    const T& at(int x, int y) const {
        return data[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)];
    }
};

using MaskGrid = Grid<uint8_t>;
using DepthGrid = Grid<double>;

constexpr double kEmptyDepth = std::numeric_limits<double>::infinity();

struct Camera {
    Vec3 basis_u{1, 0, 0};        // view-plane basis, unit
    Vec3 basis_v{0, 1, 0};
    Vec3 view_dir{0, 0, -1};      // unit; depth increases along it
    Vec3 center{};                // world point mapping to the window center
    double width_mm = 256.0;
    double height_mm = 256.0;
    int res_x = 64;
    int res_y = 64;
};

// world -> raster pixels; points outside the window keep out-of-range values
Vec2 project_point(const Camera& cam, const Vec3& p);
double view_depth(const Camera& cam, const Vec3& p);
std::array<Vec2, kNumKeypoints> project_keypoints(const std::array<Vec3, kNumKeypoints>& kps,
                                                  const Camera& cam);

struct RasterOut {
    MaskGrid silhouette;
    DepthGrid depth;  // +inf where empty
};

RasterOut rasterize(const HandMesh& mesh, const Camera& cam);

double silhouette_iou(const MaskGrid& a, const MaskGrid& b);

MaskGrid mask_union(const MaskGrid& a, const MaskGrid& b);
DepthGrid depth_min(const DepthGrid& a, const DepthGrid& b);

// canonical camera: looks down -z, square window fitted so the combined
// vertex bounding box fills fit_margin of it
Camera canonical_camera(const std::vector<const HandMesh*>& meshes, int resolution,
                        double fit_margin);

struct PriorMaps {
    std::array<Vec2, kNumKeypoints> keypoints_left{};
    std::array<Vec2, kNumKeypoints> keypoints_right{};
    MaskGrid silhouette_left, silhouette_right;
    DepthGrid depth_left, depth_right;
};

PriorMaps render_priors(const HandMesh& left, const std::array<Vec3, kNumKeypoints>& kp_left,
                        const HandMesh& right, const std::array<Vec3, kNumKeypoints>& kp_right,
                        const Camera& cam);

// binary PGM (P5); depth is quantized to 16 bit over its finite range,
// stated in the comment line
void write_pgm(const MaskGrid& mask, std::ostream& os);
void write_pgm(const DepthGrid& depth, std::ostream& os);

}  // namespace handdiff
