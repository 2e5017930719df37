#include "handdiff/render.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "handdiff/error.hpp"

namespace handdiff {

Vec2 project_point(const Camera& cam, const Vec3& p) {
    const Vec3 rel = p - cam.center;
    const double u = dot(rel, cam.basis_u);
    const double v = dot(rel, cam.basis_v);
    return {(u / cam.width_mm + 0.5) * cam.res_x, (v / cam.height_mm + 0.5) * cam.res_y};
}

double view_depth(const Camera& cam, const Vec3& p) { return dot(p - cam.center, cam.view_dir); }

std::array<Vec2, kNumKeypoints> project_keypoints(const std::array<Vec3, kNumKeypoints>& kps,
                                                  const Camera& cam) {
    std::array<Vec2, kNumKeypoints> out;
    for (int i = 0; i < kNumKeypoints; ++i) out[static_cast<size_t>(i)] = project_point(cam, kps[static_cast<size_t>(i)]);
    return out;
}

RasterOut rasterize(const HandMesh& mesh, const Camera& cam) {
    RasterOut out;
    out.silhouette = MaskGrid(cam.res_x, cam.res_y, 0);
    out.depth = DepthGrid(cam.res_x, cam.res_y, kEmptyDepth);

    for (const auto& f : mesh.faces) {
        const Vec3& a3 = mesh.vertices[static_cast<size_t>(f[0])];
        const Vec3& b3 = mesh.vertices[static_cast<size_t>(f[1])];
        const Vec3& c3 = mesh.vertices[static_cast<size_t>(f[2])];
        const Vec2 a = project_point(cam, a3);
        const Vec2 b = project_point(cam, b3);
        const Vec2 c = project_point(cam, c3);
        const double za = view_depth(cam, a3), zb = view_depth(cam, b3), zc = view_depth(cam, c3);

        const double area2 = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
        if (area2 == 0.0) continue;  // degenerate in screen space

        const double xmin = std::min({a.x, b.x, c.x}), xmax = std::max({a.x, b.x, c.x});
        const double ymin = std::min({a.y, b.y, c.y}), ymax = std::max({a.y, b.y, c.y});
        const int x0 = std::max(0, static_cast<int>(std::floor(xmin - 0.5)));
        const int x1 = std::min(cam.res_x - 1, static_cast<int>(std::ceil(xmax)));
        const int y0 = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
        const int y1 = std::min(cam.res_y - 1, static_cast<int>(std::ceil(ymax)));

        for (int y = y0; y <= y1; ++y) {
            const double py = y + 0.5;
            for (int x = x0; x <= x1; ++x) {
                const double px = x + 0.5;
                const double w0 = (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
                const double w1 = (c.x - b.x) * (py - b.y) - (c.y - b.y) * (px - b.x);
                const double w2 = (a.x - c.x) * (py - c.y) - (a.y - c.y) * (px - c.x);
                const bool inside = (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0) ||
                                    (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
                if (!inside) continue;
                // barycentric depth; w1 weights vertex a, w2 weights b, w0 weights c
                const double z = (w1 * za + w2 * zb + w0 * zc) / area2;
                out.silhouette.at(x, y) = 1;
                if (z < out.depth.at(x, y)) out.depth.at(x, y) = z;
            }
        }
    }
    return out;
}

double silhouette_iou(const MaskGrid& a, const MaskGrid& b) {
    if (a.width != b.width || a.height != b.height)
        throw NumericalError("silhouette_iou: grid shape mismatch");
    long long inter = 0, uni = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const bool pa = a.data[i] != 0, pb = b.data[i] != 0;
        inter += (pa && pb) ? 1 : 0;
        uni += (pa || pb) ? 1 : 0;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

MaskGrid mask_union(const MaskGrid& a, const MaskGrid& b) {
    if (a.width != b.width || a.height != b.height)
        throw NumericalError("mask_union: grid shape mismatch");
    MaskGrid out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = (a.data[i] || b.data[i]) ? 1 : 0;
    return out;
}

DepthGrid depth_min(const DepthGrid& a, const DepthGrid& b) {
    if (a.width != b.width || a.height != b.height)
        throw NumericalError("depth_min: grid shape mismatch");
    DepthGrid out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::min(a.data[i], b.data[i]);
    return out;
}

Camera canonical_camera(const std::vector<const HandMesh*>& meshes, int resolution,
                        double fit_margin) {
    if (resolution < 8) throw ConfigError("raster resolution must be >= 8");
    Camera cam;
    cam.res_x = cam.res_y = resolution;

    Vec3 lo{1e30, 1e30, 1e30}, hi{-1e30, -1e30, -1e30};
    bool any = false;
    for (const HandMesh* m : meshes) {
        for (const Vec3& v : m->vertices) {
            any = true;
            lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
            hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
        }
    }
    if (!any) return cam;

    cam.center = (lo + hi) * 0.5;
    const double extent = std::max({hi.x - lo.x, hi.y - lo.y, 1.0});
    cam.width_mm = cam.height_mm = extent / fit_margin;
    return cam;
}

PriorMaps render_priors(const HandMesh& left, const std::array<Vec3, kNumKeypoints>& kp_left,
                        const HandMesh& right, const std::array<Vec3, kNumKeypoints>& kp_right,
                        const Camera& cam) {
    PriorMaps pm;
    pm.keypoints_left = project_keypoints(kp_left, cam);
    pm.keypoints_right = project_keypoints(kp_right, cam);
    RasterOut l = rasterize(left, cam);
    RasterOut r = rasterize(right, cam);
    pm.silhouette_left = std::move(l.silhouette);
    pm.depth_left = std::move(l.depth);
    pm.silhouette_right = std::move(r.silhouette);
    pm.depth_right = std::move(r.depth);
    return pm;
}

void write_pgm(const MaskGrid& mask, std::ostream& os) {
    os << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    for (uint8_t v : mask.data) os.put(v ? static_cast<char>(255) : 0);
}

void write_pgm(const DepthGrid& depth, std::ostream& os) {
    double lo = 0.0, hi = 1.0;
    bool any = false;
    for (double d : depth.data) {
        if (!std::isfinite(d)) continue;
        if (!any) {
            lo = hi = d;
            any = true;
        } else {
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
    }
    if (hi <= lo) hi = lo + 1.0;
    char comment[96];
    std::snprintf(comment, sizeof(comment), "# depth_mm range %.17g %.17g\n", lo, hi);
    os << "P5\n" << comment << depth.width << " " << depth.height << "\n65535\n";
    for (double d : depth.data) {
        // empty pixels map to full white, beyond the finite range
        uint16_t q = 65535;
        if (std::isfinite(d)) {
            const double t = (d - lo) / (hi - lo);
            q = static_cast<uint16_t>(std::lround(t * 65534.0));
        }
        os.put(static_cast<char>(q >> 8));
        os.put(static_cast<char>(q & 0xff));
    }
}

}  // namespace handdiff
