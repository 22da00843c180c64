#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace v2lab {

enum class Frame { PatchGrid, ImagePixels, Canonical };

struct Point2D {
    double x = 0.0;
    double y = 0.0;
    Frame frame = Frame::ImagePixels;
};

using PointSet = std::vector<Point2D>;

/// Affine map p' = [a b; c d] p + [tx ty], row-major 2x3.
struct Affine2 {
    double a = 1.0, b = 0.0, tx = 0.0;
    double c = 0.0, d = 1.0, ty = 0.0;

    static Affine2 identity() { return {}; }

    static Affine2 translation(double dx, double dy) {
        Affine2 t;
        t.tx = dx;
        t.ty = dy;
        return t;
    }

    Point2D apply(const Point2D& p) const {
        return {a * p.x + b * p.y + tx, c * p.x + d * p.y + ty, p.frame};
    }

    void apply_xy(double x, double y, double& ox, double& oy) const {
        ox = a * x + b * y + tx;
        oy = c * x + d * y + ty;
    }

    double det() const { return a * d - b * c; }

    Affine2 inverse() const {
        const double dt = det();
        if (std::abs(dt) < 1e-300) {
            throw std::invalid_argument("Affine2::inverse: singular transform");
        }
        Affine2 inv;
        inv.a = d / dt;
        inv.b = -b / dt;
        inv.c = -c / dt;
        inv.d = a / dt;
        inv.tx = -(inv.a * tx + inv.b * ty);
        inv.ty = -(inv.c * tx + inv.d * ty);
        return inv;
    }

    /// this ∘ other: apply other first, then this.
    Affine2 compose(const Affine2& o) const {
        Affine2 r;
        r.a = a * o.a + b * o.c;
        r.b = a * o.b + b * o.d;
        r.c = c * o.a + d * o.c;
        r.d = c * o.b + d * o.d;
        r.tx = a * o.tx + b * o.ty + tx;
        r.ty = c * o.tx + d * o.ty + ty;
        return r;
    }
};

}  // namespace v2lab
