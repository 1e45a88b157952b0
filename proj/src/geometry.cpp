#include "refinery/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "refinery/error.hpp"

namespace refinery {

namespace {

constexpr double kClipTolerance = 1e-9;

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

Point segment_line_intersection(const Point& p, const Point& q, const Point& a, const Point& b) {
    // Intersection of segment pq with the infinite line through ab.
    const double dp = cross(a, b, p);
    const double dq = cross(a, b, q);
    const double t = dp / (dp - dq);
    return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

}  // namespace

double GraspRectangle::area() const { return shoelace_area(corners); }

Point GraspRectangle::centroid() const {
    Point c;
    for (const auto& p : corners) {
        c.x += p.x;
        c.y += p.y;
    }
    return {c.x / 4.0, c.y / 4.0};
}

double canonical_angle(double radians) {
    if (radians > -kHalfPi && radians <= kHalfPi) return radians;
    double t = std::fmod(radians + kHalfPi, std::numbers::pi);
    if (t <= 0.0) t += std::numbers::pi;
    return t - kHalfPi;
}

void validate_pose(const GraspPose& g) {
    const bool finite = std::isfinite(g.center_x) && std::isfinite(g.center_y) &&
                        std::isfinite(g.angle) && std::isfinite(g.opening) &&
                        std::isfinite(g.jaw_size);
    if (!finite) throw Error(ErrorKind::invalid_grasp, "grasp has a non-finite field");
    if (g.opening <= 0.0 || g.jaw_size <= 0.0) {
        throw Error(ErrorKind::invalid_grasp,
                    "grasp extents must be positive (opening=" + std::to_string(g.opening) +
                        ", jaw_size=" + std::to_string(g.jaw_size) + ")");
    }
}

GraspRectangle rect_from_grasp(const GraspPose& g) {
    validate_pose(g);
    const double c = std::cos(g.angle);
    const double s = std::sin(g.angle);
    const double hu = g.opening / 2.0;
    const double hv = g.jaw_size / 2.0;
    // u = (c, s) along the opening, v = (-s, c) across it.
    const Point du{hu * c, hu * s};
    const Point dv{-hv * s, hv * c};
    const double x = g.center_x;
    const double y = g.center_y;
    return GraspRectangle{{{
        {x - du.x - dv.x, y - du.y - dv.y},
        {x + du.x - dv.x, y + du.y - dv.y},
        {x + du.x + dv.x, y + du.y + dv.y},
        {x - du.x + dv.x, y - du.y + dv.y},
    }}};
}

double shoelace_area(std::span<const Point> polygon) {
    const std::size_t n = polygon.size();
    if (n < 3) return 0.0;
    double twice = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = polygon[i];
        const Point& q = polygon[(i + 1) % n];
        twice += p.x * q.y - q.x * p.y;
    }
    return twice / 2.0;
}

std::vector<Point> clip_convex(std::span<const Point> subject, std::span<const Point> clip) {
    std::vector<Point> output(subject.begin(), subject.end());
    const std::size_t m = clip.size();
    for (std::size_t e = 0; e < m && !output.empty(); ++e) {
        const Point& a = clip[e];
        const Point& b = clip[(e + 1) % m];
        std::vector<Point> input;
        input.swap(output);
        const std::size_t n = input.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Point& cur = input[i];
            const Point& prev = input[(i + n - 1) % n];
            const bool cur_in = cross(a, b, cur) >= -kClipTolerance;
            const bool prev_in = cross(a, b, prev) >= -kClipTolerance;
            if (cur_in) {
                if (!prev_in) output.push_back(segment_line_intersection(prev, cur, a, b));
                output.push_back(cur);
            } else if (prev_in) {
                output.push_back(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    return output;
}

double intersection_area(const GraspRectangle& a, const GraspRectangle& b) {
    const auto poly = clip_convex(a.corners, b.corners);
    return std::max(0.0, shoelace_area(poly));
}

double iou(const GraspRectangle& a, const GraspRectangle& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

double angle_distance(double a, double b) {
    const double d = std::fmod(std::fabs(a - b), std::numbers::pi);
    return std::min(d, std::numbers::pi - d);
}

IouMatch max_iou(const GraspPose& pred, std::span<const GraspPose> gts) {
    if (gts.empty()) throw Error(ErrorKind::empty_ground_truth, "max_iou: no ground-truth grasps");
    const auto pr = rect_from_grasp(pred);
    IouMatch best;
    best.best_iou = -1.0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        const double v = iou(pr, rect_from_grasp(gts[i]));
        if (v > best.best_iou) {
            best.best_iou = v;
            best.best_index = i;
        }
    }
    return best;
}

bool grasp_success(const GraspPose& pred, std::span<const GraspPose> gts,
                   const SuccessCriterion& criterion) {
    if (gts.empty()) {
        throw Error(ErrorKind::empty_ground_truth, "grasp_success: no ground-truth grasps");
    }
    const auto pr = rect_from_grasp(pred);
    return std::any_of(gts.begin(), gts.end(), [&](const GraspPose& gt) {
        return iou(pr, rect_from_grasp(gt)) >= criterion.iou_min &&
               angle_distance(pred.angle, gt.angle) <= criterion.angle_max;
    });
}

}  // namespace refinery
