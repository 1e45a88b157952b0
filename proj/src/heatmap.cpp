#include "refinery/heatmap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "refinery/error.hpp"

namespace refinery {

bool HeatmapSet::consistent() const {
    const auto same = [&](const Plane& p) { return p.rows() == rows() && p.cols() == cols(); };
    return same(cos2) && same(sin2) && same(width);
}

std::vector<std::pair<std::size_t, std::size_t>> painted_cells(const GraspPose& g, std::size_t rows,
                                                               std::size_t cols,
                                                               const EncodeOptions& opts) {
    const double half_len = g.opening * opts.region_length_fraction / 2.0;
    const double half_wid = g.jaw_size * opts.region_width_fraction / 2.0;
    const double ux = std::cos(g.angle);
    const double uy = std::sin(g.angle);
    const double reach = std::hypot(half_len, half_wid);

    const auto lo = [](double v) { return static_cast<long>(std::floor(v)); };
    const auto hi = [](double v) { return static_cast<long>(std::ceil(v)); };
    const long r0 = std::max(0L, lo(g.center_y - reach));
    const long r1 = std::min(static_cast<long>(rows) - 1, hi(g.center_y + reach));
    const long c0 = std::max(0L, lo(g.center_x - reach));
    const long c1 = std::min(static_cast<long>(cols) - 1, hi(g.center_x + reach));

    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (long r = r0; r <= r1; ++r) {
        for (long c = c0; c <= c1; ++c) {
            const double dx = static_cast<double>(c) - g.center_x;
            const double dy = static_cast<double>(r) - g.center_y;
            const double along = dx * ux + dy * uy;
            const double across = -dx * uy + dy * ux;
            if (std::fabs(along) <= half_len && std::fabs(across) <= half_wid) {
                cells.emplace_back(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            }
        }
    }
    if (cells.empty()) {
        const auto r = static_cast<std::size_t>(std::clamp(std::lround(g.center_y), 0L,
                                                           static_cast<long>(rows) - 1));
        const auto c = static_cast<std::size_t>(std::clamp(std::lround(g.center_x), 0L,
                                                           static_cast<long>(cols) - 1));
        cells.emplace_back(r, c);
    }
    return cells;
}

HeatmapSet encode(std::span<const GraspPose> annotations, std::size_t rows, std::size_t cols,
                  const EncodeOptions& opts) {
    if (rows == 0 || cols == 0) throw Error(ErrorKind::encode, "encode: dimensions must be positive");
    if (!(opts.width_scale > 0.0)) throw Error(ErrorKind::encode, "encode: width_scale must be positive");
    HeatmapSet maps(rows, cols);
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const GraspPose& g = annotations[i];
        validate_pose(g);
        if (!(g.center_x >= 0.0 && g.center_x < static_cast<double>(cols) && g.center_y >= 0.0 &&
              g.center_y < static_cast<double>(rows))) {
            throw Error(ErrorKind::encode, "encode: grasp #" + std::to_string(i) + " center (" +
                                               std::to_string(g.center_x) + ", " +
                                               std::to_string(g.center_y) + ") outside the grid");
        }
        const double c2 = std::cos(2.0 * g.angle);
        const double s2 = std::sin(2.0 * g.angle);
        const double w = std::min(g.opening, opts.width_scale) / opts.width_scale;
        for (const auto& [r, c] : painted_cells(g, rows, cols, opts)) {
            maps.quality.at(r, c) = 1.0;
            maps.cos2.at(r, c) = c2;
            maps.sin2.at(r, c) = s2;
            maps.width.at(r, c) = w;
        }
    }
    return maps;
}

double recover_angle(double c, double s) {
    if (c == 0.0 && s == 0.0) {
        throw Error(ErrorKind::undefined_angle, "recover_angle: cos and sin terms are both zero");
    }
    return canonical_angle(std::atan2(s, c) / 2.0);
}

namespace {

Plane box_smooth(const Plane& p) {
    Plane out(p.rows(), p.cols());
    const long rows = static_cast<long>(p.rows());
    const long cols = static_cast<long>(p.cols());
    for (long r = 0; r < rows; ++r) {
        for (long c = 0; c < cols; ++c) {
            double sum = 0.0;
            int n = 0;
            for (long dr = -1; dr <= 1; ++dr) {
                for (long dc = -1; dc <= 1; ++dc) {
                    const long rr = r + dr;
                    const long cc = c + dc;
                    if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
                    sum += p.at(rr, cc);
                    ++n;
                }
            }
            out.at(r, c) = sum / n;
        }
    }
    return out;
}

}  // namespace

std::vector<DecodedGrasp> decode(const HeatmapSet& maps, std::size_t top_k, const DecodeOptions& opts) {
    if (top_k == 0) throw Error(ErrorKind::contract, "decode: top_k must be at least 1");
    if (!maps.consistent()) throw Error(ErrorKind::shape, "decode: planes differ in size");

    const Plane quality = opts.smooth ? box_smooth(maps.quality) : maps.quality;
    const long rows = static_cast<long>(quality.rows());
    const long cols = static_cast<long>(quality.cols());

    struct Peak {
        double q;
        std::size_t index;
    };
    std::vector<Peak> peaks;
    for (long r = 0; r < rows; ++r) {
        for (long c = 0; c < cols; ++c) {
            const double q = quality.at(r, c);
            if (!(q >= opts.quality_floor) || q <= 0.0) continue;
            const std::size_t idx = static_cast<std::size_t>(r * cols + c);
            bool is_peak = true;
            for (long dr = -1; dr <= 1 && is_peak; ++dr) {
                for (long dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const long rr = r + dr;
                    const long cc = c + dc;
                    if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
                    const double nq = quality.at(rr, cc);
                    const bool earlier = static_cast<std::size_t>(rr * cols + cc) < idx;
                    // Plateaus resolve to their first cell in row-major order.
                    if (earlier ? nq >= q : nq > q) {
                        is_peak = false;
                        break;
                    }
                }
            }
            if (is_peak) peaks.push_back({q, idx});
        }
    }
    std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        if (a.q != b.q) return a.q > b.q;
        return a.index < b.index;
    });

    std::vector<DecodedGrasp> out;
    for (const auto& p : peaks) {
        if (out.size() == top_k) break;
        const std::size_t r = p.index / static_cast<std::size_t>(cols);
        const std::size_t c = p.index % static_cast<std::size_t>(cols);
        const double cv = maps.cos2.at(r, c);
        const double sv = maps.sin2.at(r, c);
        const double w = maps.width.at(r, c) * opts.width_scale;
        if ((cv == 0.0 && sv == 0.0) || !(w > 0.0)) continue;
        GraspPose pose{static_cast<double>(c), static_cast<double>(r), recover_angle(cv, sv), w,
                       opts.jaw_size};
        out.push_back({pose, p.q});
    }
    return out;
}

LossBreakdown loss(const HeatmapSet& pred, const HeatmapSet& target) {
    if (!pred.consistent() || !target.consistent() || pred.rows() != target.rows() ||
        pred.cols() != target.cols()) {
        throw Error(ErrorKind::shape, "loss: prediction and target dimensions differ");
    }
    const auto mse = [](const Plane& a, const Plane& b) {
        const auto av = a.values();
        const auto bv = b.values();
        if (av.empty()) return 0.0;
        double sum = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double d = av[i] - bv[i];
            sum += d * d;
        }
        return sum / static_cast<double>(av.size());
    };
    LossBreakdown l;
    l.l_center = mse(pred.quality, target.quality);
    l.l_cos = mse(pred.cos2, target.cos2);
    l.l_sin = mse(pred.sin2, target.sin2);
    l.l_width = mse(pred.width, target.width);
    l.l_overall = l.l_center + l.l_cos + l.l_sin + l.l_width;
    return l;
}

namespace {

void put_f32(std::ofstream& out, double v) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

double get_f32(std::ifstream& in) {
    std::uint32_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

void write_heatmaps(const HeatmapSet& maps, double width_scale, const std::filesystem::path& file) {
    if (!maps.consistent()) throw Error(ErrorKind::shape, "write_heatmaps: planes differ in size");
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + file.string());
    const nlohmann::json header = {{"h", maps.rows()}, {"w", maps.cols()}, {"width_scale", width_scale}};
    out << header.dump() << '\n';
    for (const Plane* p : {&maps.quality, &maps.cos2, &maps.sin2, &maps.width}) {
        for (double v : p->values()) put_f32(out, v);
    }
    if (!out) throw Error(ErrorKind::io, "short write to " + file.string());
}

HeatmapSet read_heatmaps(const std::filesystem::path& file, double* width_scale) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot read " + file.string());
    std::string line;
    std::getline(in, line);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, "heatmap header: " + std::string(e.what()));
    }
    const auto rows = header.at("h").get<std::size_t>();
    const auto cols = header.at("w").get<std::size_t>();
    if (width_scale) *width_scale = header.at("width_scale").get<double>();
    HeatmapSet maps(rows, cols);
    for (Plane* p : {&maps.quality, &maps.cos2, &maps.sin2, &maps.width}) {
        for (double& v : p->values()) v = get_f32(in);
    }
    if (!in) throw Error(ErrorKind::io, "truncated heatmap payload in " + file.string());
    return maps;
}

}  // namespace refinery
