#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "dcse/checkpoint.hpp"
#include "dcse/config_io.hpp"
#include "dcse/noise.hpp"
#include "dcse/training.hpp"

using namespace dcse;

namespace {

StftConfig tiny_stft() {
    StftConfig c;
    c.frame_length = 126;  // 64 bins
    c.hop_length   = 63;
    return c;
}

ScoreNetConfig tiny_net() {
    ScoreNetConfig c;
    c.base_channels  = 4;
    c.channel_mults  = {1};
    c.blocks_per_res = 2;
    c.embed_dim      = 16;
    return c;
}

EncoderConfig tiny_enc() {
    EncoderConfig c;
    c.d_mel = 10;
    c.d_w   = 8;
    c.d_h   = 8;
    c.d_b   = 4;
    c.d_out = 16;
    return c;
}

SdeConfig tiny_sde() { return {}; }

Waveform toy_clean(double seconds, uint64_t seed) {
    Rng      rng(seed);
    Waveform w;
    w.sample_rate = 16000;
    const size_t n = static_cast<size_t>(seconds * 16000.0);
    w.samples.resize(n);
    const double f0 = rng.uniform(100.0, 250.0);
    for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / 16000.0;
        double       v = std::sin(2.0 * kPi * f0 * t) + 0.4 * std::sin(2.0 * kPi * 2.0 * f0 * t);
        w.samples[i]   = 0.25 * v * (0.6 + 0.4 * std::sin(2.0 * kPi * 4.0 * t)) +
                       0.005 * rng.normal();
    }
    return w;
}

// noisy + clipped item without the expensive room simulation
TrainItem toy_item(const std::string& id, uint64_t seed, const StftConfig& scfg,
                   const EncoderConfig& ecfg, double seconds = 0.3) {
    Waveform clean = toy_clean(seconds, seed);
    const int nc   = static_cast<int>(derive_seed(seed, 77) % 10);
    Waveform noise = make_noise(nc, clean.size() + 800, 16000, derive_seed(seed, 78));
    auto     mix   = mix_at_snr(clean, noise, 10.0, derive_seed(seed, 79));
    Waveform deg   = soft_clip(mix.mixture, 3.0);

    DegradationLabel lab;
    lab.category    = Category::NoiseDistort;
    lab.noise_class = nc;
    lab.snr_db      = 10.0;
    lab.clip_alpha  = 3.0;
    return make_train_item(id, clean, deg, lab, scfg, ecfg);
}

struct Rig {
    Model                  model;
    Adam                   opt;
    Ema                    ema;
    Rng                    rng;
    std::vector<TrainItem> items;

    Rig(const TrainConfig& tc, uint64_t model_seed, int n_items)
        : model([&] {
              auto nc      = tiny_net();
              nc.injection = tc.injection;
              return Model(nc, tiny_enc(), tiny_stft(), tiny_sde(), model_seed);
          }()),
          rng(tc.seed) {
        Model& m = model;
        opt      = Adam(m.params(), tc.learning_rate);
        ema      = Ema(m.params(), tc.ema_decay);
        for (int i = 0; i < n_items; ++i)
            items.push_back(toy_item("it" + std::to_string(i),
                                     derive_seed(500, static_cast<uint64_t>(i)), m.stft_cfg,
                                     m.enc_cfg));
    }

    std::vector<const TrainItem*> batch(size_t lo, size_t hi) {
        std::vector<const TrainItem*> b;
        for (size_t i = lo; i < hi && i < items.size(); ++i) b.push_back(&items[i]);
        return b;
    }
};

Model make_rig_model(InjectionMode mode, uint64_t seed) {
    auto nc      = tiny_net();
    nc.injection = mode;
    return Model(nc, tiny_enc(), tiny_stft(), tiny_sde(), seed);
}

}  // namespace

TEST_CASE("loss combination follows the weighted-sum contract", "[training]") {
    SECTION("published weighting arithmetic") {
        auto b = total_loss(1.0, 2.0, 3.0, 4.0, 0.3);
        REQUIRE(b.total == Catch::Approx(3.7).margin(1e-12));
        REQUIRE(b.total ==
                Catch::Approx(b.score + b.lambda * (b.noise_ce + b.reverb_mse + b.distort_mse))
                    .epsilon(1e-9));
    }

    SECTION("lambda zero reduces to the score loss") {
        auto b = total_loss(0.42, 9.0, 9.0, 9.0, 0.0);
        REQUIRE(b.total == 0.42);
    }

    SECTION("all zero stays zero") { REQUIRE(total_loss(0, 0, 0, 0, 0.3).total == 0.0); }

    SECTION("non-finite components are named") {
        REQUIRE_THROWS_WITH(total_loss(std::nan(""), 0, 0, 0, 0.3),
                            Catch::Matchers::ContainsSubstring("score"));
        REQUIRE_THROWS_WITH(total_loss(0, 0, -1.0, 0, 0.3),
                            Catch::Matchers::ContainsSubstring("reverb_mse"));
        REQUIRE_THROWS_AS(total_loss(0, 0, 0, 0, -0.1), NumericError);
    }
}

TEST_CASE("ema follows the geometric recurrence", "[training]") {
    SECTION("decay zero copies the current value") {
        Tensor s = Tensor::full({3}, 5.0), c = Tensor::full({3}, -2.0);
        ema_update(s, c, 0.0);
        for (double v : s.data) REQUIRE(v == -2.0);
    }

    SECTION("constant input converges geometrically") {
        const double s0 = 4.0, cval = 1.0, d = 0.9;
        Tensor       s = Tensor::full({1}, s0), c = Tensor::full({1}, cval);
        for (int k = 1; k <= 17; ++k) {
            ema_update(s, c, d);
            REQUIRE(s.data[0] ==
                    Catch::Approx(cval + std::pow(d, k) * (s0 - cval)).margin(1e-12));
        }
    }

    SECTION("random sequence matches the scalar recurrence oracle") {
        Rng    rng(3);
        double oracle = 0.7;
        Tensor s      = Tensor::full({1}, 0.7);
        for (int k = 0; k < 50; ++k) {
            const double x = rng.normal();
            Tensor       c = Tensor::full({1}, x);
            ema_update(s, c, 0.999);
            oracle = 0.999 * oracle + 0.001 * x;
            REQUIRE(s.data[0] == Catch::Approx(oracle).margin(1e-12));
        }
    }

    SECTION("shape mismatch is rejected") {
        Tensor s = Tensor::zeros({2}), c = Tensor::zeros({3});
        REQUIRE_THROWS_AS(ema_update(s, c, 0.5), LengthError);
    }
}

TEST_CASE("adam matches a scalar recurrence oracle", "[training]") {
    Param p("p", Tensor::full({1}, 2.0));
    std::vector<Param*> ps{&p};
    Adam                opt(ps, 0.01);

    double m = 0.0, v = 0.0, x = 2.0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.01;
    for (int k = 1; k <= 25; ++k) {
        const double g = 2.0 * x;  // d/dx of x^2, evaluated at the oracle iterate
        p.zero_grad();
        p.grad.data[0] = 2.0 * p.value.data[0];
        opt.step(ps);

        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, k));
        const double vh = v / (1 - std::pow(b2, k));
        x -= lr * mh / (std::sqrt(vh) + eps);
        REQUIRE(p.value.data[0] == Catch::Approx(x).margin(1e-12));
    }
    REQUIRE(std::abs(p.value.data[0]) < 2.0);
}

TEST_CASE("train steps are bitwise deterministic", "[training]") {
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.seed          = 9;

    auto run = [&] {
        Rig rig(tc, 42, 4);
        std::vector<LossBreakdown> hist;
        for (int s = 0; s < 10; ++s)
            hist.push_back(train_step(rig.model, rig.batch(0, 4), tc, rig.opt, rig.ema, rig.rng));
        return hist;
    };

    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].score == b[i].score);
        REQUIRE(a[i].noise_ce == b[i].noise_ce);
        REQUIRE(a[i].reverb_mse == b[i].reverb_mse);
        REQUIRE(a[i].distort_mse == b[i].distort_mse);
        REQUIRE(a[i].total == b[i].total);
        REQUIRE(std::isfinite(a[i].total));
    }
}

TEST_CASE("gradient routing per injection mode and lambda", "[training]") {
    SECTION("lambda zero freezes pure-head parameters but reaches the branch maps") {
        TrainConfig tc;
        tc.lambda        = 0.0;
        tc.learning_rate = 1e-3;
        tc.seed          = 11;
        Rig rig(tc, 13, 2);

        std::vector<Tensor> head_init;
        for (auto* p : rig.model.params())
            if (p->name.rfind("enc.noise.", 0) == 0 || p->name.rfind("enc.t60.", 0) == 0 ||
                p->name.rfind("enc.dist.", 0) == 0)
                head_init.push_back(p->value);

        // zero-initialized output layers gate the gradient path: the head conv
        // goes live after step 1, block conv2 after step 2, the fusion output
        // after step 3, so the branch maps first see gradient at step 4
        for (int s = 0; s < 6; ++s)
            train_step(rig.model, rig.batch(0, 2), tc, rig.opt, rig.ema, rig.rng);

        size_t idx = 0;
        double wk_grad = 0.0, fuse_grad = 0.0;
        for (auto* p : rig.model.params()) {
            if (p->name.rfind("enc.noise.", 0) == 0 || p->name.rfind("enc.t60.", 0) == 0 ||
                p->name.rfind("enc.dist.", 0) == 0) {
                const Tensor& init = head_init[idx++];
                REQUIRE(std::memcmp(p->value.data.data(), init.data.data(),
                                    init.data.size() * sizeof(double)) == 0);
            }
            for (double g : p->grad.data) {
                if (p->name.rfind("enc.w_", 0) == 0) wk_grad += std::abs(g);
                if (p->name.rfind("enc.fuse", 0) == 0) fuse_grad += std::abs(g);
            }
        }
        REQUIRE(idx == head_init.size());
        // score loss alone drives the conditioning path in layer-wise mode
        REQUIRE(wk_grad > 0.0);
        REQUIRE(fuse_grad > 0.0);
    }

    SECTION("no-encoder training leaves every encoder parameter ungradiented") {
        TrainConfig tc;
        tc.injection     = InjectionMode::NoEncoder;
        tc.learning_rate = 1e-3;
        tc.seed          = 12;
        Rig rig(tc, 14, 2);

        auto b = train_step(rig.model, rig.batch(0, 2), tc, rig.opt, rig.ema, rig.rng);
        REQUIRE(b.noise_ce == 0.0);
        REQUIRE(b.reverb_mse == 0.0);
        REQUIRE(b.total == b.score);
        for (auto* p : rig.model.params())
            if (p->name.rfind("enc.", 0) == 0)
                for (double g : p->grad.data) REQUIRE(g == 0.0);
    }

    SECTION("mismatched injection modes are rejected") {
        TrainConfig tc;
        tc.seed = 15;
        Rig rig(tc, 16, 1);
        TrainConfig other = tc;
        other.injection   = InjectionMode::NoEncoder;
        Rng r(0);
        REQUIRE_THROWS_AS(
            train_step(rig.model, rig.batch(0, 1), other, rig.opt, rig.ema, rig.rng),
            ConfigError);
    }
}

TEST_CASE("ema shadow stays finite and decay zero tracks exactly", "[training]") {
    TrainConfig tc;
    tc.ema_decay     = 0.0;
    tc.learning_rate = 1e-3;
    tc.seed          = 21;
    Rig rig(tc, 22, 2);

    for (int s = 0; s < 4; ++s)
        train_step(rig.model, rig.batch(0, 2), tc, rig.opt, rig.ema, rig.rng);

    auto   params = rig.model.params();
    size_t i      = 0;
    for (auto* p : params) {
        const Tensor& sh = rig.ema.shadow()[i++];
        REQUIRE(std::memcmp(sh.data.data(), p->value.data.data(),
                            sh.data.size() * sizeof(double)) == 0);
        for (double v : sh.data) REQUIRE(std::isfinite(v));
    }
}

TEST_CASE("epoch loop batching, logging, and determinism", "[training]") {
    TrainConfig tc;
    tc.epochs        = 2;
    tc.batch_size    = 3;
    tc.learning_rate = 1e-3;
    tc.seed          = 31;

    auto run = [&](std::ostream* log) {
        Rig rig(tc, 33, 7);
        return train_loop(rig.model, rig.items, tc, rig.opt, rig.ema, rig.rng, log);
    };

    std::ostringstream log;
    auto               r1 = run(&log);
    // 7 items, batch 3 -> 3 batches per epoch, 2 epochs
    REQUIRE(r1.steps == 6);
    REQUIRE(r1.history.size() == 6);

    int lines = 0;
    std::istringstream is(log.str());
    std::string        line;
    while (std::getline(is, line)) {
        auto j = nlohmann::json::parse(line);
        REQUIRE(j.at("step").get<int>() == lines + 1);
        REQUIRE(j.contains("score"));
        REQUIRE(j.contains("noise_ce"));
        REQUIRE(j.contains("reverb_mse"));
        REQUIRE(j.contains("distort_mse"));
        REQUIRE(j.contains("total"));
        REQUIRE(j.at("lr").get<double>() == Catch::Approx(1e-3));
        ++lines;
    }
    REQUIRE(lines == 6);

    auto r2 = run(nullptr);
    for (size_t i = 0; i < r1.history.size(); ++i)
        REQUIRE(r1.history[i].total == r2.history[i].total);
}

TEST_CASE("checkpoints round-trip weights, ema, rng, and configs", "[training]") {
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.seed          = 41;
    Rig rig(tc, 43, 2);
    for (int s = 0; s < 2; ++s)
        train_step(rig.model, rig.batch(0, 2), tc, rig.opt, rig.ema, rig.rng);

    const std::string path = "ckpt_roundtrip.bin";
    save_checkpoint(path, rig.model, rig.ema, tc, rig.rng, 7);
    auto loaded = load_checkpoint(path);

    SECTION("config echo survives") {
        REQUIRE(loaded.epoch == 7);
        REQUIRE(loaded.train.learning_rate == tc.learning_rate);
        REQUIRE(loaded.train.seed == tc.seed);
        REQUIRE(loaded.model->net_cfg.base_channels == rig.model.net_cfg.base_channels);
        REQUIRE(loaded.model->net_cfg.injection == rig.model.net_cfg.injection);
        REQUIRE(loaded.model->enc_cfg.d_out == rig.model.enc_cfg.d_out);
        REQUIRE(loaded.model->stft_cfg.frame_length == rig.model.stft_cfg.frame_length);
        REQUIRE(loaded.model->sde_cfg.gamma == rig.model.sde_cfg.gamma);
    }

    SECTION("weights and shadow match to f32 precision") {
        auto a = rig.model.params();
        auto b = loaded.model->params();
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i]->name == b[i]->name);
            for (size_t j = 0; j < a[i]->value.numel(); ++j) {
                const double x = a[i]->value.data[j], y = b[i]->value.data[j];
                REQUIRE(std::abs(x - y) <= 1e-6 * std::max(1.0, std::abs(x)));
            }
            const Tensor& sa = rig.ema.shadow()[i];
            const Tensor& sb = loaded.ema.shadow()[i];
            for (size_t j = 0; j < sa.numel(); ++j)
                REQUIRE(std::abs(sa.data[j] - sb.data[j]) <=
                        1e-6 * std::max(1.0, std::abs(sa.data[j])));
        }
    }

    SECTION("rng state resumes the identical stream") {
        Rng cont = rig.rng;
        for (int i = 0; i < 16; ++i) REQUIRE(cont.next_u64() == loaded.rng.next_u64());
    }

    SECTION("corrupted magic is a version error") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XX", 2);
        f.close();
        REQUIRE_THROWS_AS(load_checkpoint(path), VersionError);
    }

    SECTION("truncation is an io error") {
        std::ifstream in(path, std::ios::binary);
        std::string   all((std::istreambuf_iterator<char>(in)), {});
        in.close();
        std::ofstream out("ckpt_trunc.bin", std::ios::binary);
        out.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
        out.close();
        REQUIRE_THROWS_AS(load_checkpoint("ckpt_trunc.bin"), IoError);
        std::remove("ckpt_trunc.bin");
    }

    std::remove(path.c_str());
}

TEST_CASE("train configs parse from json and toml alike", "[training]") {
    SECTION("json with every field") {
        auto c = parse_train_config_json(R"({
            "lambda": 0.5, "learning_rate": 0.002, "ema_decay": 0.99,
            "epochs": 3, "batch_size": 4, "seed": 123,
            "injection": "input_addition", "cfg_p": 0.2, "adaptive_weights": true
        })");
        REQUIRE(c.lambda == 0.5);
        REQUIRE(c.learning_rate == 0.002);
        REQUIRE(c.ema_decay == 0.99);
        REQUIRE(c.epochs == 3);
        REQUIRE(c.batch_size == 4);
        REQUIRE(c.seed == 123);
        REQUIRE(c.injection == InjectionMode::InputAddition);
        REQUIRE(c.cfg_p == 0.2);
        REQUIRE(c.adaptive_weights);
    }

    SECTION("partial json keeps defaults") {
        auto c = parse_train_config_json(R"({"epochs": 5})");
        REQUIRE(c.epochs == 5);
        REQUIRE(c.lambda == 0.3);
        REQUIRE(c.learning_rate == 1e-4);
        REQUIRE(c.ema_decay == 0.999);
        REQUIRE(c.cfg_p == 0.1);
        REQUIRE(c.injection == InjectionMode::LayerWise);
    }

    SECTION("toml mirrors json") {
        auto c = parse_train_config_toml(
            "# toy run\n"
            "lambda = 0.5\n"
            "learning_rate = 0.002\n"
            "ema_decay = 0.99\n"
            "epochs = 3\n"
            "batch_size = 4   # small\n"
            "seed = 123\n"
            "injection = \"input_addition\"\n"
            "cfg_p = 0.2\n"
            "adaptive_weights = true\n");
        REQUIRE(c.lambda == 0.5);
        REQUIRE(c.epochs == 3);
        REQUIRE(c.seed == 123);
        REQUIRE(c.injection == InjectionMode::InputAddition);
        REQUIRE(c.adaptive_weights);
    }

    SECTION("unknown keys and invalid values are rejected") {
        REQUIRE_THROWS_AS(parse_train_config_json(R"({"lr": 0.1})"), ConfigError);
        REQUIRE_THROWS_AS(parse_train_config_toml("epochs = banana\n"), ConfigError);
        REQUIRE_THROWS_AS(parse_train_config_json(R"({"epochs": 0})"), ConfigError);
        REQUIRE_THROWS_AS(parse_train_config_json("not json"), ConfigError);
        REQUIRE_THROWS_AS(parse_train_config_toml("epochs 3\n"), ConfigError);
    }

    SECTION("file loading sniffs the format") {
        {
            std::ofstream f("cfg_probe.json");
            f << R"({"epochs": 9})";
        }
        {
            std::ofstream f("cfg_probe.toml");
            f << "epochs = 8\n";
        }
        REQUIRE(load_train_config("cfg_probe.json").epochs == 9);
        REQUIRE(load_train_config("cfg_probe.toml").epochs == 8);
        std::remove("cfg_probe.json");
        std::remove("cfg_probe.toml");
    }
}

TEST_CASE("a fixed batch overfits", "[training][slow]") {
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.seed          = 51;
    Rig rig(tc, 52, 8);

    std::vector<double> score_hist;
    for (int s = 0; s < 500; ++s) {
        auto b = train_step(rig.model, rig.batch(0, 8), tc, rig.opt, rig.ema, rig.rng);
        score_hist.push_back(b.score);
    }

    auto mean_range = [&](size_t lo, size_t hi) {
        double acc = 0.0;
        for (size_t i = lo; i < hi; ++i) acc += score_hist[i];
        return acc / static_cast<double>(hi - lo);
    };
    const double early = mean_range(0, 10);
    const double late  = mean_range(score_hist.size() - 10, score_hist.size());
    INFO("score loss early " << early << " late " << late);
    REQUIRE(late < 0.5 * early);
}
