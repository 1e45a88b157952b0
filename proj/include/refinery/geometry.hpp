#pragma once

#include <array>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace refinery {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// One parallel-jaw grasp in image coordinates (x right, y down).
///
/// `angle` is in radians, counter-clockwise from +x, and π-periodic; the
/// canonical range is (−π/2, π/2]. `opening` is the jaw separation measured
/// along the grasp axis, `jaw_size` the jaw footprint across it.
struct GraspPose {
    double center_x = 0.0;
    double center_y = 0.0;
    double angle = 0.0;
    double opening = 0.0;
    double jaw_size = 0.0;

    bool operator==(const GraspPose&) const = default;
};

/// Oriented rectangle with corners in positive shoelace order.
struct GraspRectangle {
    std::array<Point, 4> corners;

    double area() const;
    Point centroid() const;
};

inline constexpr double kHalfPi = std::numbers::pi / 2.0;

constexpr double degrees_to_radians(double deg) { return deg * std::numbers::pi / 180.0; }
constexpr double radians_to_degrees(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Folds an angle onto (−π/2, π/2]. Values already in range are returned unchanged.
double canonical_angle(double radians);

/// Throws Error(invalid_grasp) for non-finite fields or non-positive extents.
void validate_pose(const GraspPose& g);

GraspRectangle rect_from_grasp(const GraspPose& g);

/// Signed shoelace area; positive for the corner order produced by rect_from_grasp.
double shoelace_area(std::span<const Point> polygon);

/// Sutherland–Hodgman clip of `subject` against a convex, positively oriented `clip`.
std::vector<Point> clip_convex(std::span<const Point> subject, std::span<const Point> clip);

double intersection_area(const GraspRectangle& a, const GraspRectangle& b);
double iou(const GraspRectangle& a, const GraspRectangle& b);

/// Distance on the π-periodic circle, in [0, π/2].
double angle_distance(double a, double b);

struct IouMatch {
    double best_iou = 0.0;
    std::size_t best_index = 0;
};

/// Best IOU of `pred` over `gts`; ties go to the lowest index.
IouMatch max_iou(const GraspPose& pred, std::span<const GraspPose> gts);

struct SuccessCriterion {
    double iou_min = 0.25;
    double angle_max = degrees_to_radians(30.0);
};

/// Rectangle metric: some gt with iou >= iou_min and angle distance <= angle_max.
bool grasp_success(const GraspPose& pred, std::span<const GraspPose> gts,
                   const SuccessCriterion& criterion = {});

}  // namespace refinery
