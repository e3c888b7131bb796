#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "robustreid/errors.hpp"
#include "robustreid/meta_trainer.hpp"
#include "robustreid/model.hpp"

namespace robustreid {

// Checkpoint archive: 8-byte magic "RRCKPT01", a little-endian u64 JSON
// length, the JSON header (architecture, epoch, optimizer step counters,
// array directory), then the raw little-endian float64 arrays in directory
// order. Everything needed for a bit-exact resume lives here.
inline constexpr char kCheckpointMagic[8] = {'R', 'R', 'C', 'K', 'P', 'T', '0', '1'};

namespace detail {

inline void write_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& in, size_t n) {
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw IOFailure("checkpoint truncated while reading arrays");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const TrainState& state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOFailure("cannot write checkpoint: " + path);

    std::vector<std::pair<std::string, const std::vector<double>*>> arrays = {
        {"encoder", &state.bundle.encoder_params},
        {"classifier", &state.bundle.classifier_params},
        {"discriminator", &state.bundle.discriminator_params},
        {"adam_g_m", &state.adam_g.m},
        {"adam_g_v", &state.adam_g.v},
        {"adam_d_m", &state.adam_d.m},
        {"adam_d_v", &state.adam_d.v},
    };
    nlohmann::json dir = nlohmann::json::array();
    for (const auto& [name, vec] : arrays) dir.push_back({{"name", name}, {"len", vec->size()}});

    nlohmann::json cm = nlohmann::json::object();
    for (const auto& [raw, idx] : state.class_map) cm[std::to_string(raw)] = idx;

    nlohmann::json header = {{"arch", state.bundle.arch.to_json()},
                             {"epoch", state.epoch},
                             {"adam_g_t", state.adam_g.t},
                             {"adam_d_t", state.adam_d.t},
                             {"class_map", cm},
                             {"arrays", dir}};
    std::string js = header.dump();

    out.write(kCheckpointMagic, 8);
    detail::write_u64(out, js.size());
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    for (const auto& [name, vec] : arrays) detail::write_doubles(out, *vec);
    if (!out) throw IOFailure("checkpoint write failed: " + path);
}

inline TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IOFailure("not a checkpoint (bad magic): " + path);
    uint64_t js_len = detail::read_u64(in);
    std::string js(js_len, '\0');
    in.read(js.data(), static_cast<std::streamsize>(js_len));
    if (!in) throw IOFailure("checkpoint truncated: " + path);
    nlohmann::json header = nlohmann::json::parse(js);

    TrainState st;
    st.bundle.arch = ArchSpec::from_json(header.at("arch"));
    st.epoch = header.at("epoch").get<int>();
    st.adam_g.t = header.at("adam_g_t").get<long>();
    st.adam_d.t = header.at("adam_d_t").get<long>();
    for (const auto& [raw, idx] : header.at("class_map").items())
        st.class_map[std::stoi(raw)] = idx.get<int>();

    std::map<std::string, std::vector<double>> arrays;
    for (const auto& entry : header.at("arrays")) {
        std::string name = entry.at("name").get<std::string>();
        size_t len = entry.at("len").get<size_t>();
        arrays[name] = detail::read_doubles(in, len);
    }
    auto take = [&](const char* name) {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw IOFailure(std::string("checkpoint missing array: ") + name);
        return std::move(it->second);
    };
    st.bundle.encoder_params = take("encoder");
    st.bundle.classifier_params = take("classifier");
    st.bundle.discriminator_params = take("discriminator");
    st.adam_g.m = take("adam_g_m");
    st.adam_g.v = take("adam_g_v");
    st.adam_d.m = take("adam_d_m");
    st.adam_d.v = take("adam_d_v");
    return st;
}

}  // namespace robustreid
