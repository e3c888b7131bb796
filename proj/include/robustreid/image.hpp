#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "robustreid/errors.hpp"

namespace robustreid {

// 3-channel float image, CHW layout, values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;  // size 3*height*width

    Image() = default;
    Image(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<size_t>(3) * h * w, fill) {}

    size_t size() const { return data.size(); }
    double& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }

    void clamp01() {
        for (double& v : data) v = std::clamp(v, 0.0, 1.0);
    }

    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

inline double linf_distance(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("linf_distance: image shapes differ");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace robustreid
