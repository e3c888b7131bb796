#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "robustreid/errors.hpp"
#include "robustreid/image.hpp"

namespace robustreid {

// 8-bit RGB on disk; values quantized to 1/255 steps.
inline void write_image(const Image& img, const std::string& path) {
    cv::Mat mat(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            auto to8 = [&](int c) {
                double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                return static_cast<uint8_t>(std::lround(v * 255.0));
            };
            // OpenCV stores BGR
            mat.at<cv::Vec3b>(y, x) = cv::Vec3b(to8(2), to8(1), to8(0));
        }
    }
    if (!cv::imwrite(path, mat)) throw IOFailure("failed to write image: " + path);
}

inline Image read_image(const std::string& path) {
    cv::Mat mat = cv::imread(path, cv::IMREAD_COLOR);
    if (mat.empty()) throw IOFailure("failed to read image: " + path);
    Image img(mat.rows, mat.cols);
    for (int y = 0; y < mat.rows; ++y) {
        for (int x = 0; x < mat.cols; ++x) {
            cv::Vec3b px = mat.at<cv::Vec3b>(y, x);
            img.at(0, y, x) = px[2] / 255.0;
            img.at(1, y, x) = px[1] / 255.0;
            img.at(2, y, x) = px[0] / 255.0;
        }
    }
    return img;
}

// Accepts "8/255" (the notation used in attack configs) or a plain decimal.
inline double parse_fraction(const std::string& s) {
    auto slash = s.find('/');
    try {
        if (slash == std::string::npos) return std::stod(s);
        double num = std::stod(s.substr(0, slash));
        double den = std::stod(s.substr(slash + 1));
        if (den == 0.0) throw InvalidSpec("fraction with zero denominator: " + s);
        return num / den;
    } catch (const std::invalid_argument&) {
        throw InvalidSpec("cannot parse number: " + s);
    }
}

struct CsvWriter {
    std::ofstream out;
    explicit CsvWriter(const std::string& path) : out(path) {
        if (!out) throw IOFailure("cannot open for writing: " + path);
    }
    void row(const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) out << ',';
            out << cells[i];
        }
        out << '\n';
    }
};

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOFailure("cannot open for writing: " + path);
    out << text;
}

// FNV-1a, used for dataset manifests and checkpoint comparisons.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t hash_file(const std::string& path) {
    std::string bytes = read_text_file(path);
    return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace robustreid
