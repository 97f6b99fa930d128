#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pipetteloc {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline double euclidean(const Vec2& a, const Vec2& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

enum class Domain { invivo_like, exvivo_like };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

// Dense grayscale grid with intensities in [0,1], row-major.
struct ImageGrid {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    ImageGrid() = default;
    ImageGrid(int h, int w, double fill = 0.0)
        : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

    double& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
    size_t size() const { return values.size(); }
    bool same_shape(const ImageGrid& o) const { return height == o.height && width == o.width; }
};

struct LabeledScene {
    ImageGrid image;
    std::vector<Vec2> tips;   // continuous pixel coordinates, (x, y)
    Domain domain = Domain::invivo_like;
    double um_per_pixel = 1.0;
    std::string id;
};

}  // namespace pipetteloc
