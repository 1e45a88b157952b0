#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "refinery/dataset.hpp"

namespace refinery::fixture {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("refinery-" + tag + "-" + std::to_string(rd()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

/// PNG signature plus an IHDR chunk; enough for header-only dimension reads.
inline void write_png_stub(const fs::path& file, std::uint32_t width, std::uint32_t height) {
    std::ofstream out(file, std::ios::binary);
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    out.write(reinterpret_cast<const char*>(sig), 8);
    const auto be32 = [&](std::uint32_t v) {
        const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    be32(13);
    out.write("IHDR", 4);
    be32(width);
    be32(height);
    const unsigned char rest[5] = {8, 2, 0, 0, 0};
    out.write(reinterpret_cast<const char*>(rest), 5);
    be32(0);
}

inline void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    out << text;
}

inline void write_scene(const fs::path& dir, const std::string& id, const std::vector<std::string>& lines,
                        std::uint32_t width = 1024, std::uint32_t height = 1024) {
    write_png_stub(dir / (id + "_RGB.png"), width, height);
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    write_text(dir / (id + "_grasps.txt"), text);
}

/// Three scenes with 5, 2 and 7 grasps.
inline void write_three_scene_fixture(const fs::path& dir) {
    write_scene(dir, "scene_a", {"100.0;50.0;0.0;20.0;10.0", "120.5;60.25;30.0;25.0;12.0",
                                 "140;70;-45;30;10", "160;80;89.5;22;9", "180;90;-89.5;18;8"});
    write_scene(dir, "scene_b", {"300;300;10;40;20", "320;310;170;35;15"});
    write_scene(dir, "scene_c", {"400;400;0;20;10", "410;400;5;20;10", "420;400;10;20;10",
                                 "430;400;15;20;10", "440;400;20;20;10", "450;400;25;20;10",
                                 "460;400;90;20;10"});
}

}  // namespace refinery::fixture
