#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "robustreid/attacks.hpp"
#include "robustreid/dataset.hpp"
#include "robustreid/errors.hpp"
#include "robustreid/io.hpp"
#include "robustreid/model.hpp"

namespace robustreid {

struct EvalReport {
    double map = 0.0;
    std::vector<double> cmc;          // rank-r accuracy, non-decreasing
    std::map<int, double> per_id_ap;  // query identity -> mean AP
    double per_id_mean = 0.0;
    double per_id_std = 0.0;  // population standard deviation
    std::optional<nlohmann::json> attack;  // AttackSpec metadata when attacked
    std::string protocol = "same-id-same-camera gallery entries excluded";

    nlohmann::json to_json() const {
        nlohmann::json per_id = nlohmann::json::object();
        for (const auto& [id, ap] : per_id_ap) per_id[std::to_string(id)] = ap;
        nlohmann::json j = {{"map", map},
                            {"cmc", cmc},
                            {"per_id_ap", per_id},
                            {"per_id_mean", per_id_mean},
                            {"per_id_std", per_id_std},
                            {"protocol", protocol}};
        j["attack"] = attack ? *attack : nlohmann::json();
        return j;
    }

    // "mAP/Rank-1" percentages with 2 decimals, the table format.
    std::string summary_line() const {
        char buf[64];
        double r1 = cmc.empty() ? 0.0 : cmc.front();
        std::snprintf(buf, sizeof(buf), "%.2f/%.2f", 100.0 * map, 100.0 * r1);
        return buf;
    }
};

// Retrieval uses the encoder alone; the classifier never participates.
inline FeatureBatch extract_features(const ModelBundle& bundle,
                                     const std::vector<Sample>& samples) {
    std::vector<Image> imgs;
    imgs.reserve(samples.size());
    for (const auto& s : samples) imgs.push_back(s.image);
    FeatureBatch fb = encode(bundle, imgs);
    for (const auto& s : samples) {
        fb.identities.push_back(s.identity);
        fb.cameras.push_back(s.camera);
    }
    return fb;
}

// Mean over relevant ranks r of (relevant in top-r) / r.
inline double average_precision(const std::vector<bool>& ranked_relevance) {
    int relevant = 0;
    double sum = 0.0;
    for (size_t r = 0; r < ranked_relevance.size(); ++r) {
        if (!ranked_relevance[r]) continue;
        ++relevant;
        sum += static_cast<double>(relevant) / static_cast<double>(r + 1);
    }
    if (relevant == 0) throw NoRelevant("average_precision: no relevant item in ranking");
    return sum / relevant;
}

// Euclidean ranking; gallery entries sharing both identity and camera with
// the query are excluded from that query's ranking; distractors (id -1) stay
// as permanent negatives. Queries with no relevant gallery entry are invalid
// and excluded from every aggregate.
inline EvalReport compute_map_cmc(const FeatureBatch& query, const FeatureBatch& gallery) {
    if (gallery.rows == 0) throw NoValidQuery("compute_map_cmc: empty gallery");
    if (query.identities.empty() || gallery.identities.empty())
        throw MissingContext("compute_map_cmc: feature batches need identity labels");
    if (query.dim != gallery.dim) throw ShapeMismatch("compute_map_cmc: feature dims differ");

    EvalReport rep;
    std::map<int, std::pair<double, int>> per_id_acc;  // id -> (sum AP, count)
    std::vector<int> cmc_hits;
    int valid_queries = 0;
    double map_sum = 0.0;

    for (int q = 0; q < query.rows; ++q) {
        int q_id = query.identities[q];
        int q_cam = query.cameras.empty() ? -1 : query.cameras[q];

        std::vector<std::pair<double, int>> ranked;  // (distance, gallery index)
        ranked.reserve(gallery.rows);
        for (int g = 0; g < gallery.rows; ++g) {
            bool same_id = gallery.identities[g] == q_id;
            bool same_cam = !gallery.cameras.empty() && q_cam >= 0 && gallery.cameras[g] == q_cam;
            if (same_id && same_cam) continue;  // junk under the standard protocol
            ranked.emplace_back(euclidean(query.row(q), gallery.row(g), query.dim), g);
        }
        std::sort(ranked.begin(), ranked.end());  // ties fall back to gallery index

        double ap_sum = 0.0;
        int relevant = 0, first_hit = -1;
        for (size_t r = 0; r < ranked.size(); ++r) {
            bool rel = q_id != kDistractorId && gallery.identities[ranked[r].second] == q_id;
            if (!rel) continue;
            ++relevant;
            ap_sum += static_cast<double>(relevant) / static_cast<double>(r + 1);
            if (first_hit < 0) first_hit = static_cast<int>(r);
        }
        if (relevant == 0) continue;  // invalid query

        double ap = ap_sum / relevant;
        ++valid_queries;
        map_sum += ap;
        auto& [sum, count] = per_id_acc[q_id];
        sum += ap;
        count += 1;
        if (static_cast<size_t>(first_hit) >= cmc_hits.size()) cmc_hits.resize(first_hit + 1, 0);
        cmc_hits[first_hit] += 1;
    }

    if (valid_queries == 0)
        throw NoValidQuery("no query has a same-identity, different-camera gallery match");

    rep.map = map_sum / valid_queries;
    rep.cmc.resize(cmc_hits.size());
    int cum = 0;
    for (size_t r = 0; r < cmc_hits.size(); ++r) {
        cum += cmc_hits[r];
        rep.cmc[r] = static_cast<double>(cum) / valid_queries;
    }
    double mean = 0.0;
    for (const auto& [id, sc] : per_id_acc) rep.per_id_ap[id] = sc.first / sc.second;
    for (const auto& [id, ap] : rep.per_id_ap) mean += ap;
    mean /= static_cast<double>(rep.per_id_ap.size());
    double var = 0.0;
    for (const auto& [id, ap] : rep.per_id_ap) var += (ap - mean) * (ap - mean);
    var /= static_cast<double>(rep.per_id_ap.size());
    rep.per_id_mean = mean;
    rep.per_id_std = std::sqrt(var);
    return rep;
}

// White-box robustness: adversarial queries against the evaluated model,
// clean gallery. The attack context pools query and gallery features so
// farthest-negative search always has negatives available.
inline EvalReport robust_eval(const ModelBundle& bundle, const std::vector<Sample>& query,
                              const std::vector<Sample>& gallery, const AttackSpec& spec,
                              Rng& rng, const ModelBundle* attack_source = nullptr) {
    spec.validate();
    const ModelBundle& source = attack_source ? *attack_source : bundle;

    FeatureBatch gallery_feats = extract_features(bundle, gallery);

    std::vector<Sample> pool = query;
    pool.insert(pool.end(), gallery.begin(), gallery.end());
    AttackContext ctx = make_attack_context(source, query, pool);

    std::vector<Image> q_imgs;
    q_imgs.reserve(query.size());
    for (const auto& s : query) q_imgs.push_back(s.image);
    std::vector<Image> adv = pgd_metric_attack(source, q_imgs, ctx, spec, rng);

    std::vector<Sample> adv_query = query;
    for (size_t i = 0; i < adv_query.size(); ++i) adv_query[i].image = std::move(adv[i]);

    FeatureBatch query_feats = extract_features(bundle, adv_query);
    EvalReport rep = compute_map_cmc(query_feats, gallery_feats);
    rep.attack = spec.to_json();
    return rep;
}

// Black-box transfer: adversarial queries generated against the source
// model, evaluated on the target.
inline EvalReport transfer_eval(const ModelBundle& source, const ModelBundle& target,
                                const std::vector<Sample>& query,
                                const std::vector<Sample>& gallery, const AttackSpec& spec,
                                Rng& rng) {
    EvalReport rep = robust_eval(target, query, gallery, spec, rng, &source);
    if (rep.attack) (*rep.attack)["transfer"] = true;
    return rep;
}

struct BiasStats {
    double mean = 0.0;
    double std_dev = 0.0;
    std::vector<int> histogram;  // fixed [0,1] bins
    double bin_width = 0.1;
};

inline BiasStats bias_stats(const EvalReport& report, int bins = 10) {
    if (report.per_id_ap.empty()) throw NoValidQuery("bias_stats: empty per-identity APs");
    BiasStats b;
    b.mean = report.per_id_mean;
    b.std_dev = report.per_id_std;
    b.bin_width = 1.0 / bins;
    b.histogram.assign(bins, 0);
    for (const auto& [id, ap] : report.per_id_ap) {
        int bin = std::min(bins - 1, static_cast<int>(ap / b.bin_width));
        b.histogram[std::max(0, bin)] += 1;
    }
    return b;
}

inline void write_per_id_csv(const EvalReport& report, const std::string& path) {
    CsvWriter csv(path);
    csv.row({"identity", "ap"});
    for (const auto& [id, ap] : report.per_id_ap)
        csv.row({std::to_string(id), std::to_string(ap)});
}

inline void write_features_csv(const FeatureBatch& fb, const std::string& path) {
    CsvWriter csv(path);
    std::vector<std::string> header = {"identity", "camera"};
    for (int c = 0; c < fb.dim; ++c) header.push_back("f" + std::to_string(c));
    csv.row(header);
    for (int r = 0; r < fb.rows; ++r) {
        std::vector<std::string> row = {std::to_string(fb.identities.empty() ? 0 : fb.identities[r]),
                                        std::to_string(fb.cameras.empty() ? 0 : fb.cameras[r])};
        for (int c = 0; c < fb.dim; ++c) row.push_back(std::to_string(fb.row(r)[c]));
        csv.row(row);
    }
}

}  // namespace robustreid
