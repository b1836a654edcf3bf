#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcse/training.hpp"

namespace dcse {

// Binary checkpoint container: magic + version, a JSON config echo, the live
// weight tensors (name, shape, little-endian float32), the EMA shadow in the
// same order, the RNG state, and the epoch counter.

namespace detail {

constexpr char     kCkptMagic[8] = {'D', 'C', 'S', 'E', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion  = 1;

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint: truncated read");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

inline float read_f32(std::istream& is) {
    const uint32_t u = read_u32(is);
    float          v;
    std::memcpy(&v, &u, 4);
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const uint32_t n = read_u32(is);
    std::string    s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw IoError("checkpoint: truncated string");
    return s;
}

inline void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_string(os, name);
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape) write_u32(os, static_cast<uint32_t>(d));
    for (double v : t.data) write_f32(os, static_cast<float>(v));
}

inline Tensor read_tensor_into(std::istream& is, const std::string& expect_name,
                               const std::vector<int>& expect_shape) {
    const std::string name = read_string(is);
    if (name != expect_name)
        throw VersionError("checkpoint: tensor order mismatch, expected " + expect_name +
                           ", found " + name);
    const uint32_t   rank = read_u32(is);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    if (shape != expect_shape)
        throw VersionError("checkpoint: shape mismatch for " + expect_name);
    Tensor t(shape);
    for (auto& v : t.data) v = static_cast<double>(read_f32(is));
    return t;
}

inline nlohmann::json stft_to_json(const StftConfig& c) {
    return {{"frame_length", c.frame_length},
            {"hop_length", c.hop_length},
            {"window", c.window == Window::Hann ? "hann" : "rect"},
            {"compression_exponent", c.compression_exponent},
            {"compression_scale", c.compression_scale},
            {"center", c.center}};
}

inline StftConfig stft_from_json(const nlohmann::json& j) {
    StftConfig c;
    c.frame_length          = j.at("frame_length").get<int>();
    c.hop_length            = j.at("hop_length").get<int>();
    c.window                = j.at("window").get<std::string>() == "rect" ? Window::Rect
                                                                          : Window::Hann;
    c.compression_exponent  = j.at("compression_exponent").get<double>();
    c.compression_scale     = j.at("compression_scale").get<double>();
    c.center                = j.at("center").get<bool>();
    return c;
}

inline nlohmann::json sde_to_json(const SdeConfig& c) {
    return {{"gamma", c.gamma},
            {"sigma_min", c.sigma_min},
            {"sigma_max", c.sigma_max},
            {"t_eps", c.t_eps},
            {"n_steps", c.n_steps}};
}

inline SdeConfig sde_from_json(const nlohmann::json& j) {
    SdeConfig c;
    c.gamma     = j.at("gamma").get<double>();
    c.sigma_min = j.at("sigma_min").get<double>();
    c.sigma_max = j.at("sigma_max").get<double>();
    c.t_eps     = j.at("t_eps").get<double>();
    c.n_steps   = j.at("n_steps").get<int>();
    return c;
}

inline nlohmann::json net_to_json(const ScoreNetConfig& c) {
    return {{"in_channels", c.in_channels},
            {"out_channels", c.out_channels},
            {"base_channels", c.base_channels},
            {"channel_mults", c.channel_mults},
            {"blocks_per_res", c.blocks_per_res},
            {"embed_dim", c.embed_dim},
            {"injection", injection_mode_name(c.injection)}};
}

inline ScoreNetConfig net_from_json(const nlohmann::json& j) {
    ScoreNetConfig c;
    c.in_channels    = j.at("in_channels").get<int>();
    c.out_channels   = j.at("out_channels").get<int>();
    c.base_channels  = j.at("base_channels").get<int>();
    c.channel_mults  = j.at("channel_mults").get<std::vector<int>>();
    c.blocks_per_res = j.at("blocks_per_res").get<int>();
    c.embed_dim      = j.at("embed_dim").get<int>();
    c.injection      = injection_mode_from_name(j.at("injection").get<std::string>());
    return c;
}

inline nlohmann::json enc_to_json(const EncoderConfig& c) {
    return {{"d_mel", c.d_mel},
            {"d_w", c.d_w},
            {"d_h", c.d_h},
            {"d_b", c.d_b},
            {"d_out", c.d_out},
            {"frame_length", c.frame_length},
            {"hop_length", c.hop_length},
            {"log_floor", c.log_floor},
            {"cfg_dropout_p", c.cfg_dropout_p}};
}

inline EncoderConfig enc_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.d_mel         = j.at("d_mel").get<int>();
    c.d_w           = j.at("d_w").get<int>();
    c.d_h           = j.at("d_h").get<int>();
    c.d_b           = j.at("d_b").get<int>();
    c.d_out         = j.at("d_out").get<int>();
    c.frame_length  = j.at("frame_length").get<int>();
    c.hop_length    = j.at("hop_length").get<int>();
    c.log_floor     = j.at("log_floor").get<double>();
    c.cfg_dropout_p = j.at("cfg_dropout_p").get<double>();
    return c;
}

inline nlohmann::json train_to_json(const TrainConfig& c) {
    return {{"lambda", c.lambda},
            {"learning_rate", c.learning_rate},
            {"ema_decay", c.ema_decay},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"injection", injection_mode_name(c.injection)},
            {"cfg_p", c.cfg_p},
            {"adaptive_weights", c.adaptive_weights}};
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lambda           = j.at("lambda").get<double>();
    c.learning_rate    = j.at("learning_rate").get<double>();
    c.ema_decay        = j.at("ema_decay").get<double>();
    c.epochs           = j.at("epochs").get<int>();
    c.batch_size       = j.at("batch_size").get<int>();
    c.seed             = j.at("seed").get<uint64_t>();
    c.injection        = injection_mode_from_name(j.at("injection").get<std::string>());
    c.cfg_p            = j.at("cfg_p").get<double>();
    c.adaptive_weights = j.at("adaptive_weights").get<bool>();
    return c;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, Model& model, const Ema& ema,
                            const TrainConfig& tcfg, const Rng& rng, int epoch) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);

    os.write(detail::kCkptMagic, 8);
    detail::write_u32(os, detail::kCkptVersion);

    nlohmann::json cfg;
    cfg["net"]     = detail::net_to_json(model.net_cfg);
    cfg["encoder"] = detail::enc_to_json(model.enc_cfg);
    cfg["stft"]    = detail::stft_to_json(model.stft_cfg);
    cfg["sde"]     = detail::sde_to_json(model.sde_cfg);
    cfg["train"]   = detail::train_to_json(tcfg);
    detail::write_string(os, cfg.dump());

    auto params = model.params();
    if (ema.shadow().size() != params.size())
        throw LengthError("checkpoint: ema/parameter count mismatch");

    detail::write_u32(os, static_cast<uint32_t>(params.size()));
    for (auto* p : params) detail::write_tensor(os, p->name, p->value);
    for (size_t i = 0; i < params.size(); ++i)
        detail::write_tensor(os, params[i]->name, ema.shadow()[i]);

    detail::write_string(os, rng.save_state());
    detail::write_u32(os, static_cast<uint32_t>(epoch));
    if (!os) throw IoError("checkpoint write failed: " + path);
}

struct LoadedCheckpoint {
    std::unique_ptr<Model> model;
    Ema                    ema;
    TrainConfig            train;
    Rng                    rng;
    int                    epoch = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);

    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw VersionError("not a checkpoint file: " + path);
    const uint32_t version = detail::read_u32(is);
    if (version != detail::kCkptVersion)
        throw VersionError("unsupported checkpoint version " + std::to_string(version));

    const nlohmann::json cfg = nlohmann::json::parse(detail::read_string(is));

    LoadedCheckpoint out;
    out.train = detail::train_from_json(cfg.at("train"));
    out.model = std::make_unique<Model>(
        detail::net_from_json(cfg.at("net")), detail::enc_from_json(cfg.at("encoder")),
        detail::stft_from_json(cfg.at("stft")), detail::sde_from_json(cfg.at("sde")),
        /*init_seed=*/0);

    auto           params = out.model->params();
    const uint32_t count  = detail::read_u32(is);
    if (count != params.size())
        throw VersionError("checkpoint: parameter count mismatch");

    for (auto* p : params) p->value = detail::read_tensor_into(is, p->name, p->value.shape);

    out.ema = Ema(params, out.train.ema_decay);
    for (size_t i = 0; i < params.size(); ++i)
        out.ema.shadow()[i] = detail::read_tensor_into(is, params[i]->name,
                                                       params[i]->value.shape);

    out.rng.load_state(detail::read_string(is));
    out.epoch = static_cast<int>(detail::read_u32(is));
    return out;
}

}  // namespace dcse
