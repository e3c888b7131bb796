#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "robustreid/dataset.hpp"
#include "robustreid/errors.hpp"
#include "robustreid/rng.hpp"

namespace robustreid {

struct BalanceConfig {
    int delta1 = 0;       // inter-ID count threshold; 0 resolves to the rounded mean of n_i
    double delta2 = 0.5;  // dominant-camera proportion threshold

    void validate() const {
        if (delta1 < 0) throw InvalidSpec("delta1 must be >= 1 (or 0 for rounded-mean default)");
        if (!(0.0 < delta2 && delta2 < 1.0)) throw InvalidSpec("delta2 must be in (0,1)");
    }

    int resolve_delta1(const IdentityStats& st) const {
        if (delta1 > 0) return delta1;
        double mean = 0.0;
        for (const auto& [id, n] : st.per_id_count) mean += n;
        mean /= static_cast<double>(st.per_id_count.size());
        return std::max(1, static_cast<int>(std::floor(mean + 0.5)));
    }
};

struct GeneratorRequest {
    int identity = 0;  // raw identity label
    int camera = 0;    // raw camera id
    int count = 0;

    void validate() const {
        if (count < 1) throw InvalidSpec("generator request count must be >= 1");
    }
};

// Pseudo-sample source standing in for the ID-conditional diffusion model. A
// diffusion-backed implementation can drop in behind this interface.
class PseudoSampleGenerator {
public:
    virtual ~PseudoSampleGenerator() = default;
    // Exactly req.count samples with is_pseudo=true and the requested
    // identity and camera; deterministic under the rng.
    virtual std::vector<Sample> generate(const GeneratorRequest& req, Rng& rng) = 0;
};

// Default generator: random shift/flip/color-jitter over the identity's real
// samples, plus the target camera's nuisance transform when the dataset is a
// synthetic one (pass apply_camera_nuisance), jitter only otherwise.
class AugmentationGenerator : public PseudoSampleGenerator {
public:
    using CameraTransform = std::function<void(Image&, int camera)>;

    AugmentationGenerator(const ReIDDataset& source, CameraTransform camera_transform = nullptr)
        : camera_transform_(std::move(camera_transform)) {
        for (size_t i = 0; i < source.samples.size(); ++i)
            by_id_[source.samples[i].identity].push_back(&source.samples[i]);
    }

    std::vector<Sample> generate(const GeneratorRequest& req, Rng& rng) override {
        req.validate();
        auto it = by_id_.find(req.identity);
        if (it == by_id_.end())
            throw UnknownIdentity("generator: identity " + std::to_string(req.identity) +
                                  " not in the source dataset");
        const std::vector<const Sample*>& pool = it->second;

        std::vector<Sample> out;
        out.reserve(req.count);
        for (int j = 0; j < req.count; ++j) {
            const Sample& base = *pool[rng.index(pool.size())];
            Sample s;
            s.identity = req.identity;
            s.camera = req.camera;
            s.is_pseudo = true;
            s.image = augment(base.image, rng);
            if (camera_transform_) camera_transform_(s.image, req.camera);
            if (s.image.data.empty()) throw GenerationFailed("generator produced an empty image");
            out.push_back(std::move(s));
        }
        return out;
    }

private:
    static Image augment(const Image& src, Rng& rng) {
        Image img(src.height, src.width);
        int dy = static_cast<int>(rng.index(5)) - 2;
        int dx = static_cast<int>(rng.index(3)) - 1;
        bool flip = rng.uniform01() < 0.5;
        double gain[3], offset[3];
        for (int c = 0; c < 3; ++c) {
            gain[c] = rng.uniform(0.85, 1.15);
            offset[c] = rng.uniform(-0.05, 0.05);
        }
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < src.height; ++y)
                for (int x = 0; x < src.width; ++x) {
                    int sx = flip ? src.width - 1 - x : x;
                    int sy = std::clamp(y - dy, 0, src.height - 1);
                    sx = std::clamp(sx - dx, 0, src.width - 1);
                    img.at(c, y, x) = src.at(c, sy, sx) * gain[c] + offset[c];
                }
        img.clamp01();
        return img;
    }

    std::map<int, std::vector<const Sample*>> by_id_;
    CameraTransform camera_transform_;
};

// Inter-ID balancing: every identity with n_i < delta1 receives exactly
// delta1 - n_i pseudo samples; cameras drawn uniformly from the identity's
// observed cameras. Real samples are never touched.
inline ReIDDataset balance_inter_id(const ReIDDataset& ds, const BalanceConfig& cfg,
                                    PseudoSampleGenerator& gen, Rng& rng) {
    cfg.validate();
    if (ds.samples.empty()) throw EmptyDataset("balance_inter_id on empty dataset");
    IdentityStats st = identity_stats(ds);
    int delta1 = cfg.resolve_delta1(st);

    ReIDDataset out = ds;
    for (const auto& [id, n] : st.per_id_count) {
        if (n >= delta1) continue;
        std::vector<int> cams;
        for (const auto& [key, cnt] : st.per_id_camera_count)
            if (key.first == id) cams.push_back(key.second);
        for (int j = 0; j < delta1 - n; ++j) {
            GeneratorRequest req{id, cams[rng.index(cams.size())], 1};
            std::vector<Sample> pseudo = gen.generate(req, rng);
            out.samples.insert(out.samples.end(), pseudo.begin(), pseudo.end());
        }
    }
    out.rebuild_registries();
    return out;
}

// Intra-ID diversification: identities whose dominant-camera proportion
// exceeds delta2 receive pseudo samples for every other camera in the
// dataset's camera set; per-camera count is round-half-up(n_i / |C|) with a
// floor of 1, computed from statistics frozen at call start.
inline ReIDDataset diversify_intra_id(const ReIDDataset& ds, const BalanceConfig& cfg,
                                      PseudoSampleGenerator& gen, Rng& rng) {
    cfg.validate();
    if (ds.samples.empty()) throw EmptyDataset("diversify_intra_id on empty dataset");
    if (ds.num_cameras() < 2) return ds;  // degenerate single-camera dataset: no-op

    IdentityStats st = identity_stats(ds);
    int n_cameras = ds.num_cameras();

    ReIDDataset out = ds;
    for (const auto& [id, dom] : st.dominant_camera) {
        if (dom.proportion <= cfg.delta2) continue;
        int n_i = st.per_id_count.at(id);
        int per_camera =
            std::max(1, static_cast<int>(std::floor(static_cast<double>(n_i) / n_cameras + 0.5)));
        for (const auto& [cam, idx] : ds.cameras) {
            if (cam == dom.camera) continue;
            GeneratorRequest req{id, cam, per_camera};
            std::vector<Sample> pseudo = gen.generate(req, rng);
            out.samples.insert(out.samples.end(), pseudo.begin(), pseudo.end());
        }
    }
    out.rebuild_registries();
    return out;
}

struct BalanceRow {
    int identity = 0;
    int before = 0;
    int after = 0;
    double dominant_before = 0.0;
    double dominant_after = 0.0;
    bool diversified = false;
};

struct BalanceReport {
    std::vector<BalanceRow> rows;
    int delta1_used = 0;
    double delta2_used = 0.0;
};

// Eq. 1 then Eq. 2, in that order.
inline ReIDDataset balance(const ReIDDataset& ds, const BalanceConfig& cfg,
                           PseudoSampleGenerator& gen, Rng& rng,
                           BalanceReport* report = nullptr) {
    IdentityStats before = identity_stats(ds);
    ReIDDataset filled = balance_inter_id(ds, cfg, gen, rng);
    IdentityStats mid = identity_stats(filled);
    ReIDDataset out = diversify_intra_id(filled, cfg, gen, rng);
    if (report) {
        IdentityStats after = identity_stats(out);
        report->delta1_used = cfg.resolve_delta1(before);
        report->delta2_used = cfg.delta2;
        for (const auto& [id, n] : before.per_id_count) {
            BalanceRow row;
            row.identity = id;
            row.before = n;
            row.after = after.per_id_count.at(id);
            row.dominant_before = mid.dominant_camera.at(id).proportion;
            row.dominant_after = after.dominant_camera.at(id).proportion;
            row.diversified = mid.dominant_camera.at(id).proportion > cfg.delta2 &&
                              filled.num_cameras() >= 2;
            report->rows.push_back(row);
        }
    }
    return out;
}

inline void write_balance_csv(const BalanceReport& report, const std::string& path) {
    CsvWriter csv(path);
    csv.row({"identity", "count_before", "count_after", "dominant_before", "dominant_after",
             "diversified"});
    for (const auto& r : report.rows)
        csv.row({std::to_string(r.identity), std::to_string(r.before), std::to_string(r.after),
                 std::to_string(r.dominant_before), std::to_string(r.dominant_after),
                 r.diversified ? "1" : "0"});
}

}  // namespace robustreid
