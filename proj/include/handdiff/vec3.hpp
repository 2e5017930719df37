#pragma once

#include <array>
#include <cmath>

namespace handdiff {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    Vec3& operator-=(const Vec3& o) {
        x -= o.x;
        y -= o.y;
        z -= o.z;
        return *this;
    }
    Vec3& operator*=(double s) {
        x *= s;
        y *= s;
        z *= s;
        return *this;
    }

    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    double squared_norm() const { return x * x + y * y + z * z; }
    double norm() const { return std::sqrt(squared_norm()); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline Vec3 normalized(const Vec3& v) {
    const double n = v.norm();
    return n > 0.0 ? v * (1.0 / n) : Vec3{};
}

// mirror across the x = 0 plane
inline Vec3 mirror_x(const Vec3& v) { return {-v.x, v.y, v.z}; }

// 3x3 matrix, row-major
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        return r;
    }
    static Mat3 zero() { return Mat3{}; }

    double& operator()(int r, int c) { return m[static_cast<size_t>(r) * 3 + c]; }
    double operator()(int r, int c) const { return m[static_cast<size_t>(r) * 3 + c]; }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[static_cast<size_t>(i)] = m[static_cast<size_t>(i)] + o.m[static_cast<size_t>(i)];
        return r;
    }
    Mat3& operator+=(const Mat3& o) {
        for (int i = 0; i < 9; ++i) m[static_cast<size_t>(i)] += o.m[static_cast<size_t>(i)];
        return *this;
    }
    Mat3 operator*(double s) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[static_cast<size_t>(i)] = m[static_cast<size_t>(i)] * s;
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
};

// outer product a * b^T
inline Mat3 outer(const Vec3& a, const Vec3& b) {
    Mat3 r;
    r.m = {a.x * b.x, a.x * b.y, a.x * b.z, a.y * b.x, a.y * b.y,
           a.y * b.z, a.z * b.x, a.z * b.y, a.z * b.z};
    return r;
}

// cross-product matrix [v]x such that [v]x * w == cross(v, w)
inline Mat3 skew(const Vec3& v) {
    Mat3 r;
    r.m = {0, -v.z, v.y, v.z, 0, -v.x, -v.y, v.x, 0};
    return r;
}

inline double frobenius_dot(const Mat3& a, const Mat3& b) {
    double s = 0.0;
    for (int i = 0; i < 9; ++i) s += a.m[static_cast<size_t>(i)] * b.m[static_cast<size_t>(i)];
    return s;
}

}  // namespace handdiff
