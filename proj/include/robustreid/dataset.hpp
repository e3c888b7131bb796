#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "robustreid/errors.hpp"
#include "robustreid/image.hpp"
#include "robustreid/io.hpp"
#include "robustreid/rng.hpp"

namespace robustreid {

constexpr int kDistractorId = -1;

struct Sample {
    Image image;
    int identity = 0;  // raw label; -1 marks a distractor
    int camera = 0;    // raw camera id
    bool is_pseudo = false;
    std::string source;  // originating path, empty for in-memory samples
};

enum class Split { train, query, gallery };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::query: return "query";
        default: return "gallery";
    }
}

inline Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "query") return Split::query;
    if (s == "gallery") return Split::gallery;
    throw InvalidSpec("unknown split: " + s);
}

// Immutable after construction; registries map raw labels to contiguous
// class indices 0..k-1 in ascending raw-label order.
struct ReIDDataset {
    std::vector<Sample> samples;
    std::map<int, int> identities;  // raw identity -> class index
    std::map<int, int> cameras;     // raw camera -> index
    Split split = Split::train;

    int num_identities() const { return static_cast<int>(identities.size()); }
    int num_cameras() const { return static_cast<int>(cameras.size()); }

    int class_of(int raw_identity) const {
        auto it = identities.find(raw_identity);
        if (it == identities.end()) throw UnknownIdentity("identity not in registry: " + std::to_string(raw_identity));
        return it->second;
    }

    void rebuild_registries() {
        identities.clear();
        cameras.clear();
        std::set<int> ids, cams;
        for (const auto& s : samples) {
            ids.insert(s.identity);
            cams.insert(s.camera);
        }
        int k = 0;
        for (int id : ids) identities[id] = k++;
        int c = 0;
        for (int cam : cams) cameras[cam] = c++;
    }
};

struct IdentityStats {
    struct Dominant {
        int camera = 0;
        double proportion = 0.0;
    };
    std::map<int, int> per_id_count;                        // identity -> n_i
    std::map<std::pair<int, int>, int> per_id_camera_count; // (identity, camera) -> n_{i,c}
    std::map<int, Dominant> dominant_camera;                // ties broken by smallest camera id
};

// Filename grammar: ^(-?\d+)_c(\d+).*\.(jpg|jpeg|png)$
// Group 1 identity, group 2 camera; a free segment containing "_p" marks a
// pseudo sample ("0003_c2_p000001.png").
struct ParsedName {
    int identity = 0;
    int camera = 0;
    bool is_pseudo = false;
    bool is_distractor = false;
};

inline ParsedName parse_sample_name(const std::string& filename) {
    static const std::regex re(R"(^(-?\d+)_c(\d+)(.*)\.(jpg|jpeg|png)$)");
    std::smatch m;
    if (!std::regex_match(filename, m, re))
        throw MalformedName("filename does not match <id>_c<cam>_*.<ext>: " + filename);
    ParsedName p;
    p.identity = std::stoi(m[1].str());
    p.camera = std::stoi(m[2].str());
    p.is_pseudo = m[3].str().find("_p") != std::string::npos;
    p.is_distractor = p.identity == kDistractorId;
    return p;
}

inline bool has_image_extension(const std::string& filename) {
    auto dot = filename.rfind('.');
    if (dot == std::string::npos) return false;
    std::string ext = filename.substr(dot + 1);
    return ext == "jpg" || ext == "jpeg" || ext == "png";
}

// Loads <root>/<split>/ flat image files. Distractors (id -1) are excluded
// from the train split and retained in query/gallery. Non-image files are
// ignored; image files violating the grammar raise MalformedName.
inline ReIDDataset load_dataset(const std::string& root, Split split) {
    namespace fs = std::filesystem;
    fs::path dir = fs::path(root) / split_name(split);
    if (!fs::is_directory(dir)) throw IOFailure("not a directory: " + dir.string());

    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        if (has_image_extension(name)) names.push_back(name);
    }
    std::sort(names.begin(), names.end());

    ReIDDataset ds;
    ds.split = split;
    for (const std::string& name : names) {
        ParsedName p;
        try {
            p = parse_sample_name(name);
        } catch (const MalformedName& e) {
            throw MalformedName(std::string(e.what()) + " (in " + dir.string() + ")");
        }
        if (split == Split::train && p.is_distractor) continue;
        Sample s;
        s.image = read_image((dir / name).string());
        s.identity = p.identity;
        s.camera = p.camera;
        s.is_pseudo = p.is_pseudo;
        s.source = (dir / name).string();
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw EmptyDataset("no usable samples in " + dir.string());
    ds.rebuild_registries();
    return ds;
}

inline IdentityStats identity_stats(const ReIDDataset& ds) {
    if (ds.samples.empty()) throw EmptyDataset("identity_stats on empty dataset");
    IdentityStats st;
    for (const auto& s : ds.samples) {
        st.per_id_count[s.identity]++;
        st.per_id_camera_count[{s.identity, s.camera}]++;
    }
    for (const auto& [id, n] : st.per_id_count) {
        IdentityStats::Dominant best;
        bool first = true;
        for (const auto& [key, cnt] : st.per_id_camera_count) {
            if (key.first != id) continue;
            double prop = static_cast<double>(cnt) / n;
            // argmax with smallest-camera-id tie break; map iteration is ascending
            if (first || prop > best.proportion) {
                best.camera = key.second;
                best.proportion = prop;
                first = false;
            }
        }
        st.dominant_camera[id] = best;
    }
    return st;
}

// P distinct identities, K samples each; identities without K samples are
// topped up with replacement. Output order shuffled. Deterministic in rng.
inline std::vector<Sample> sample_pk_batch(const ReIDDataset& ds, int p, int k, Rng& rng) {
    if (ds.num_identities() < p)
        throw InsufficientIdentities("need " + std::to_string(p) + " identities, have " +
                                     std::to_string(ds.num_identities()));
    std::map<int, std::vector<size_t>> by_id;
    for (size_t i = 0; i < ds.samples.size(); ++i) by_id[ds.samples[i].identity].push_back(i);

    std::vector<int> ids;
    for (const auto& [id, _] : by_id) ids.push_back(id);
    rng.shuffle(ids);
    ids.resize(p);

    std::vector<size_t> chosen;
    for (int id : ids) {
        std::vector<size_t> pool = by_id[id];
        rng.shuffle(pool);
        for (int j = 0; j < k; ++j) {
            if (j < static_cast<int>(pool.size()))
                chosen.push_back(pool[j]);
            else
                chosen.push_back(pool[rng.index(pool.size())]);
        }
    }
    rng.shuffle(chosen);
    std::vector<Sample> batch;
    batch.reserve(chosen.size());
    for (size_t i : chosen) batch.push_back(ds.samples[i]);
    return batch;
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale datasets.
//
// Each identity renders as a deterministic appearance (three body-band colors
// plus a stripe pattern); each camera applies a fixed tint and shift; each
// sample adds a small jitter and pixel noise. Identity is learnable, camera
// is a confound.
// ---------------------------------------------------------------------------

struct SynthSpec {
    int num_ids = 20;
    int cameras = 4;
    int height = 32;
    int width = 16;
    double noise = 0.02;
    double camera_skew = 0.0;        // >0: each id lands on a home camera with this probability
    double contrast = 1.0;           // inter-identity palette spread, in (0,1]
    std::vector<int> per_id_counts;  // resolved per-identity counts, size num_ids
    uint64_t appearance_seed = 0;    // shared across splits so ids look alike everywhere

    void validate() const {
        if (num_ids < 2) throw InvalidSpec("synthetic spec needs >= 2 identities");
        if (cameras < 2) throw InvalidSpec("synthetic spec needs >= 2 cameras");
        if (height < 2 || width < 1) throw InvalidSpec("synthetic spec image size too small");
        if (noise < 0) throw InvalidSpec("negative noise level");
        if (camera_skew < 0 || camera_skew >= 1) throw InvalidSpec("camera_skew must be in [0,1)");
        if (contrast <= 0 || contrast > 1) throw InvalidSpec("contrast must be in (0,1]");
        if (static_cast<int>(per_id_counts.size()) != num_ids)
            throw InvalidSpec("per_id_counts must have one entry per identity");
        for (int c : per_id_counts)
            if (c < 1) throw InvalidSpec("per-identity count must be >= 1");
    }
};

// Parses {num_ids, cameras, height, width, noise, per_id | per_id_counts |
// profile:{low_count, high_count, low_fraction}}.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    s.num_ids = j.value("num_ids", 20);
    s.cameras = j.value("cameras", 4);
    s.height = j.value("height", 32);
    s.width = j.value("width", 16);
    s.noise = j.value("noise", 0.02);
    s.camera_skew = j.value("camera_skew", 0.0);
    s.contrast = j.value("contrast", 1.0);
    s.appearance_seed = j.value("appearance_seed", 0ULL);
    if (j.contains("per_id_counts")) {
        s.per_id_counts = j.at("per_id_counts").get<std::vector<int>>();
    } else if (j.contains("profile")) {
        const auto& p = j.at("profile");
        int low = p.at("low_count").get<int>();
        int high = p.at("high_count").get<int>();
        double frac = p.value("low_fraction", 0.5);
        int n_low = static_cast<int>(std::lround(frac * s.num_ids));
        for (int i = 0; i < s.num_ids; ++i) s.per_id_counts.push_back(i < n_low ? low : high);
    } else {
        int per_id = j.value("per_id", 16);
        s.per_id_counts.assign(s.num_ids, per_id);
    }
    s.validate();
    return s;
}

// Fixed per-camera nuisance: per-channel gains, brightness offset, and a
// horizontal shift, all derived from the camera id alone so that the same
// camera looks the same in every split and run.
inline void apply_camera_nuisance(Image& img, int camera) {
    uint64_t h = splitmix64(0x9d7f3a2c ^ static_cast<uint64_t>(camera) * 0x2545f491);
    auto unit = [&](int k) {
        return static_cast<double>(splitmix64(h + k) >> 11) * 0x1.0p-53;
    };
    double gain[3] = {0.78 + 0.44 * unit(1), 0.78 + 0.44 * unit(2), 0.78 + 0.44 * unit(3)};
    double offset = -0.06 + 0.12 * unit(4);
    int shift = static_cast<int>(splitmix64(h + 5) % 3) - 1;  // -1, 0, +1 columns

    Image out(img.height, img.width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                int sx = std::clamp(x - shift, 0, img.width - 1);
                out.at(c, y, x) = img.at(c, y, sx) * gain[c] + offset;
            }
    out.clamp01();
    img = std::move(out);
}

namespace detail {

inline Image render_identity_appearance(const SynthSpec& spec, int raw_id) {
    Rng rng(splitmix64(spec.appearance_seed) ^ splitmix64(0x7b11c3d5 + raw_id));
    Image img(spec.height, spec.width);
    double lo = 0.5 - 0.42 * spec.contrast;
    double hi = 0.5 + 0.42 * spec.contrast;
    double band[3][3];
    for (auto& b : band)
        for (double& v : b) v = rng.uniform(lo, hi);
    int stripe_period = 2 + static_cast<int>(rng.index(3));
    int stripe_phase = static_cast<int>(rng.index(stripe_period));
    double stripe_color[3];
    for (double& v : stripe_color) v = rng.uniform(lo, hi);
    double stripe_mix = rng.uniform(0.25, 0.6);

    int head_end = spec.height / 4;
    int torso_end = (spec.height * 5) / 8;
    for (int y = 0; y < spec.height; ++y) {
        int b = y < head_end ? 0 : (y < torso_end ? 1 : 2);
        bool stripe = ((y + stripe_phase) % stripe_period) == 0;
        for (int x = 0; x < spec.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = band[b][c];
                if (stripe) v = (1.0 - stripe_mix) * v + stripe_mix * stripe_color[c];
                img.at(c, y, x) = v;
            }
    }
    return img;
}

inline void apply_sample_jitter(Image& img, double noise, Rng& rng) {
    int dy = static_cast<int>(rng.index(3)) - 1;
    int dx = static_cast<int>(rng.index(3)) - 1;
    if (dy != 0 || dx != 0) {
        Image out(img.height, img.width);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x) {
                    int sy = std::clamp(y - dy, 0, img.height - 1);
                    int sx = std::clamp(x - dx, 0, img.width - 1);
                    out.at(c, y, x) = img.at(c, sy, sx);
                }
        img = std::move(out);
    }
    if (noise > 0)
        for (double& v : img.data) v += rng.normal(0.0, noise);
    img.clamp01();
}

}  // namespace detail

// Pure function of (spec, rng). Raw identities are 1..num_ids. With
// camera_skew == 0 cameras are assigned cyclically with a random per-identity
// offset, so every identity with >= 2 samples spans >= 2 cameras; with
// camera_skew > 0 each identity draws a home camera that captures it with
// that probability (the homogeneity pathology).
inline ReIDDataset make_synthetic(const SynthSpec& spec, Rng& rng) {
    spec.validate();
    ReIDDataset ds;
    for (int i = 0; i < spec.num_ids; ++i) {
        int raw_id = i + 1;
        Image base = detail::render_identity_appearance(spec, raw_id);
        int cam_offset = static_cast<int>(rng.index(spec.cameras));
        for (int j = 0; j < spec.per_id_counts[i]; ++j) {
            Sample s;
            s.identity = raw_id;
            if (spec.camera_skew > 0 && j > 0) {
                if (rng.uniform01() < spec.camera_skew)
                    s.camera = 1 + cam_offset;  // home camera
                else
                    s.camera = 1 + (cam_offset + 1 + static_cast<int>(rng.index(spec.cameras - 1))) % spec.cameras;
            } else {
                s.camera = 1 + (cam_offset + j) % spec.cameras;
            }
            s.image = base;
            apply_camera_nuisance(s.image, s.camera);
            detail::apply_sample_jitter(s.image, spec.noise, rng);
            ds.samples.push_back(std::move(s));
        }
    }
    ds.rebuild_registries();
    return ds;
}

// Writes <root>/<split>/ per the filename grammar; pseudo samples get a "_p"
// free segment. Returns the written filenames in order.
inline std::vector<std::string> save_dataset(const ReIDDataset& ds, const std::string& root) {
    namespace fs = std::filesystem;
    fs::path dir = fs::path(root) / split_name(ds.split);
    fs::create_directories(dir);
    std::vector<std::string> names;
    std::map<int, int> counter;
    for (const auto& s : ds.samples) {
        int seq = counter[s.identity]++;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%04d_c%d_%s%06d.png", s.identity, s.camera,
                      s.is_pseudo ? "p" : "", seq);
        fs::path file = dir / buf;
        write_image(s.image, file.string());
        names.push_back(buf);
    }
    return names;
}

}  // namespace robustreid
