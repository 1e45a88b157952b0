#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "refinery/geometry.hpp"

namespace refinery {

/// Row-major H×W grid of doubles.
class Plane {
public:
    Plane() = default;
    Plane(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    bool operator==(const Plane&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Dense grasp representation: center confidence, cos 2θ, sin 2θ and the
/// opening normalized by `width_scale`.
struct HeatmapSet {
    Plane quality;
    Plane cos2;
    Plane sin2;
    Plane width;

    HeatmapSet() = default;
    HeatmapSet(std::size_t rows, std::size_t cols)
        : quality(rows, cols), cos2(rows, cols), sin2(rows, cols), width(rows, cols) {}

    std::size_t rows() const { return quality.rows(); }
    std::size_t cols() const { return quality.cols(); }
    bool consistent() const;

    bool operator==(const HeatmapSet&) const = default;
};

inline constexpr double kDefaultWidthScale = 150.0;

struct EncodeOptions {
    double width_scale = kDefaultWidthScale;
    // Painted center region, as fractions of opening (along the axis) and jaw size (across).
    double region_length_fraction = 1.0 / 3.0;
    double region_width_fraction = 1.0 / 2.0;
};

/// Cells painted for one grasp: the oriented center region, or the single
/// cell containing the center when the region covers no cell centers.
std::vector<std::pair<std::size_t, std::size_t>> painted_cells(const GraspPose& g, std::size_t rows,
                                                               std::size_t cols,
                                                               const EncodeOptions& opts = {});

HeatmapSet encode(std::span<const GraspPose> annotations, std::size_t rows, std::size_t cols,
                  const EncodeOptions& opts = {});

double recover_angle(double c, double s);

struct DecodeOptions {
    double width_scale = kDefaultWidthScale;
    double jaw_size = 20.0;
    double quality_floor = 0.1;
    bool smooth = false;
};

struct DecodedGrasp {
    GraspPose pose;
    double quality = 0.0;
};

/// Local maxima of the quality map, ranked by quality (ties: row-major index).
std::vector<DecodedGrasp> decode(const HeatmapSet& maps, std::size_t top_k,
                                 const DecodeOptions& opts = {});

struct LossBreakdown {
    double l_center = 0.0;
    double l_cos = 0.0;
    double l_sin = 0.0;
    double l_width = 0.0;
    double l_overall = 0.0;
};

LossBreakdown loss(const HeatmapSet& pred, const HeatmapSet& target);

/// Binary fixture layout: one JSON header line {"h","w","width_scale"}, then
/// four little-endian float32 planes (quality, cos2, sin2, width), row-major.
void write_heatmaps(const HeatmapSet& maps, double width_scale, const std::filesystem::path& file);
HeatmapSet read_heatmaps(const std::filesystem::path& file, double* width_scale = nullptr);

}  // namespace refinery
