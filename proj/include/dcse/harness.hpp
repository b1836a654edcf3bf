#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dcse/checkpoint.hpp"
#include "dcse/degrade.hpp"
#include "dcse/metrics.hpp"
#include "dcse/training.hpp"
#include "dcse/wave.hpp"

namespace dcse {

// ===========================================================================
// synthetic clean source
// ===========================================================================

// Speech-like test signal: a pitch-glided harmonic complex shaped by three
// formant resonators under a syllabic amplitude envelope. Not speech, but it
// has the pitch, spectral-envelope, and modulation structure the rest of the
// pipeline cares about, with zero external data dependencies.
struct CleanSynthConfig {
    int    sample_rate    = 16000;
    double duration_lo_s  = 1.0;
    double duration_hi_s  = 1.6;
    double f0_lo_hz       = 80.0;
    double f0_hi_hz       = 300.0;
    double syllable_lo_hz = 2.0;
    double syllable_hi_hz = 6.0;
    int    max_harmonics  = 30;
    // inter-phrase pauses; without them the syllabic envelope never drops far
    // enough for room decay tails to be observable in the degraded audio
    double phrase_lo_s = 0.20;
    double phrase_hi_s = 0.40;
    double pause_lo_s  = 0.25;
    double pause_hi_s  = 0.40;
    double pause_level = 0.008;

    void validate() const {
        if (sample_rate < 8000) throw ConfigError("synth: formant ranges assume >= 8 kHz");
        if (!(duration_lo_s >= 0.5)) throw ConfigError("synth: duration must be >= 0.5 s");
        if (!(duration_hi_s >= duration_lo_s)) throw ConfigError("synth: duration range inverted");
        if (!(f0_lo_hz > 0.0 && f0_hi_hz >= f0_lo_hz)) throw ConfigError("synth: bad pitch range");
        if (!(f0_hi_hz < 0.45 * sample_rate)) throw ConfigError("synth: pitch too high for rate");
        if (!(syllable_lo_hz > 0.0 && syllable_hi_hz >= syllable_lo_hz))
            throw ConfigError("synth: bad syllable-rate range");
        if (max_harmonics < 1) throw ConfigError("synth: need at least one harmonic");
        if (!(phrase_lo_s > 0.0 && phrase_hi_s >= phrase_lo_s))
            throw ConfigError("synth: bad phrase-length range");
        if (!(pause_lo_s > 0.0 && pause_hi_s >= pause_lo_s))
            throw ConfigError("synth: bad pause-length range");
        if (!(pause_level >= 0.0 && pause_level < 1.0))
            throw ConfigError("synth: pause level must be in [0, 1)");
    }
};

namespace detail {

// unity-ish-peak two-pole resonator, applied in place
inline void resonate(std::vector<double>& x, double fc_hz, double bw_hz, int rate) {
    const double r  = std::exp(-kPi * bw_hz / rate);
    const double th = 2.0 * kPi * fc_hz / rate;
    const double a1 = 2.0 * r * std::cos(th);
    const double a2 = -r * r;
    const double g  = 1.0 - r;
    double       y1 = 0.0, y2 = 0.0;
    for (auto& v : x) {
        const double y = g * v + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        v  = y;
    }
}

}  // namespace detail

inline Waveform synth_clean(const CleanSynthConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng          rng(seed);
    const int    sr  = cfg.sample_rate;
    const double dur = rng.uniform(cfg.duration_lo_s, cfg.duration_hi_s);
    const size_t n   = static_cast<size_t>(std::llround(dur * sr));

    // glide endpoints drawn log-uniformly; phi(t) counts cycles of the glide
    const double f_a = std::exp(rng.uniform(std::log(cfg.f0_lo_hz), std::log(cfg.f0_hi_hz)));
    const double f_b = std::exp(rng.uniform(std::log(cfg.f0_lo_hz), std::log(cfg.f0_hi_hz)));
    const double lr  = std::log(f_b / f_a);
    const int    K   = std::max(
        1, std::min(cfg.max_harmonics, static_cast<int>(0.45 * sr / std::max(f_a, f_b))));
    std::vector<double> phase_off(static_cast<size_t>(K));
    for (auto& p : phase_off) p = rng.uniform(0.0, 2.0 * kPi);

    std::vector<double> src(n);
    for (size_t i = 0; i < n; ++i) {
        const double t   = static_cast<double>(i) / sr;
        const double phi = std::abs(lr) < 1e-9 ? f_a * t
                                               : f_a * dur / lr * (std::exp(lr * t / dur) - 1.0);
        double v = 0.0;
        for (int k = 1; k <= K; ++k)
            v += std::sin(2.0 * kPi * k * phi + phase_off[static_cast<size_t>(k - 1)]) / k;
        src[i] = v;
    }

    const double f1 = rng.uniform(300.0, 900.0), b1 = rng.uniform(60.0, 140.0);
    const double f2 = rng.uniform(1000.0, 2200.0), b2 = rng.uniform(80.0, 180.0);
    const double f3 = rng.uniform(2300.0, 3400.0), b3 = rng.uniform(100.0, 220.0);
    std::vector<double> r1 = src, r2 = src, r3 = src;
    detail::resonate(r1, f1, b1, sr);
    detail::resonate(r2, f2, b2, sr);
    detail::resonate(r3, f3, b3, sr);

    const double syl = rng.uniform(cfg.syllable_lo_hz, cfg.syllable_hi_hz);
    const double psi = rng.uniform(0.0, 2.0 * kPi);

    // alternating phrase/pause gate, starting voiced; pauses drop to a low
    // floor (not zero) with raised-cosine edges so transitions stay click-free
    std::vector<double> gate(n, 1.0);
    {
        const auto seg_len = [&](double lo, double hi) {
            return static_cast<size_t>(
                std::max<long long>(1, std::llround(rng.uniform(lo, hi) * sr)));
        };
        size_t pos    = 0;
        bool   voiced = true;
        while (pos < n) {
            const size_t len = voiced ? seg_len(cfg.phrase_lo_s, cfg.phrase_hi_s)
                                      : seg_len(cfg.pause_lo_s, cfg.pause_hi_s);
            const size_t end = std::min(n, pos + len);
            if (!voiced) {
                const size_t eb = std::min<size_t>(
                    (end - pos) / 2, static_cast<size_t>(std::llround(0.015 * sr)));
                for (size_t j = pos; j < end; ++j) {
                    const size_t din = std::min(j - pos, end - 1 - j);
                    double       w   = 0.0;
                    if (din < eb)
                        w = 0.5 + 0.5 * std::cos(kPi * static_cast<double>(din + 1) /
                                                 static_cast<double>(eb + 1));
                    gate[j] = cfg.pause_level + (1.0 - cfg.pause_level) * w;
                }
            }
            pos    = end;
            voiced = !voiced;
        }
    }

    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double u = 0.5 - 0.5 * std::cos(2.0 * kPi * syl * t + psi);
        const double e = 0.25 + 0.75 * std::pow(u, 1.5);
        out[i] = gate[i] * e * (r1[i] + 0.6 * r2[i] + 0.35 * r3[i] + 0.05 * src[i]);
    }
    const size_t ramp = std::min(n / 2, static_cast<size_t>(sr / 100));
    for (size_t i = 0; i < ramp; ++i) {
        const double w = static_cast<double>(i + 1) / static_cast<double>(ramp + 1);
        out[i] *= w;
        out[n - 1 - i] *= w;
    }
    double peak = 0.0;
    for (double v : out) peak = std::max(peak, std::abs(v));
    if (!(peak > 0.0)) throw NumericError("synth produced a silent signal");
    for (auto& v : out) v *= 0.5 / peak;
    return Waveform{std::move(out), sr};
}

// ===========================================================================
// corpus manifest
// ===========================================================================

// One JSON object per line with keys {id, clean_path, degraded_path, rir_path,
// category, noise_class, snr_db, t60_s, alpha, seed}. Paths are relative to
// the manifest's directory; stage fields are null when the stage is inactive,
// and rir_path is null for dry items.
struct ManifestEntry {
    std::string      id;
    std::string      clean_path, degraded_path;
    std::string      rir_path;  // empty when the item has no reverb
    DegradationLabel label;
    uint64_t         seed = 0;
};

inline nlohmann::json manifest_entry_json(const ManifestEntry& e) {
    nlohmann::json j;
    j["id"]            = e.id;
    j["clean_path"]    = e.clean_path;
    j["degraded_path"] = e.degraded_path;
    j["rir_path"]      = e.rir_path.empty() ? nlohmann::json() : nlohmann::json(e.rir_path);
    j["category"]      = category_name(e.label.category);
    j["noise_class"]   = e.label.noise_class;
    j["snr_db"]        = e.label.snr_db ? nlohmann::json(*e.label.snr_db) : nlohmann::json();
    j["t60_s"]         = e.label.t60_s ? nlohmann::json(*e.label.t60_s) : nlohmann::json();
    j["alpha"]         = e.label.clip_alpha ? nlohmann::json(*e.label.clip_alpha) : nlohmann::json();
    j["seed"]          = e.seed;
    return j;
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
    try {
        ManifestEntry e;
        e.id             = j.at("id").get<std::string>();
        e.clean_path     = j.at("clean_path").get<std::string>();
        e.degraded_path  = j.at("degraded_path").get<std::string>();
        if (j.contains("rir_path") && !j.at("rir_path").is_null())
            e.rir_path = j.at("rir_path").get<std::string>();
        e.label.category    = category_from_name(j.at("category").get<std::string>());
        e.label.noise_class = j.at("noise_class").get<int>();
        if (!j.at("snr_db").is_null()) e.label.snr_db = j.at("snr_db").get<double>();
        if (!j.at("t60_s").is_null()) e.label.t60_s = j.at("t60_s").get<double>();
        if (!j.at("alpha").is_null()) e.label.clip_alpha = j.at("alpha").get<double>();
        e.seed = j.at("seed").get<uint64_t>();
        e.label.validate();
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("bad manifest entry: ") + ex.what());
    }
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    for (const auto& e : entries) os << manifest_entry_json(e).dump() << '\n';
    if (!os) throw IoError("write failed: " + path);
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::vector<ManifestEntry> out;
    std::string                line;
    size_t                     ln = 0;
    while (std::getline(is, line)) {
        ++ln;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& ex) {
            throw ConfigError("manifest line " + std::to_string(ln) + ": " + ex.what());
        }
        out.push_back(manifest_entry_from_json(j));
    }
    if (out.empty()) throw ConfigError("empty manifest: " + path);
    return out;
}

inline uint64_t file_checksum(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return fnv1a64(buf.data(), buf.size());
}

// ===========================================================================
// corpus build
// ===========================================================================

struct CorpusConfig {
    int              per_category = 3;
    uint64_t         seed         = 0;
    std::string      clean_dir;  // empty -> synthesize clean sources
    CleanSynthConfig synth;
    int              threads = 1;

    void validate() const {
        if (per_category < 1) throw ConfigError("corpus: per_category must be >= 1");
        if (threads < 1) throw ConfigError("corpus: threads must be >= 1");
        synth.validate();
    }
};

inline std::string corpus_item_id(Category cat, int index) {
    std::string tok = category_name(cat);
    for (auto& c : tok)
        if (c == '+') c = '_';
    char buf[16];
    std::snprintf(buf, sizeof buf, "_%03d", index);
    return tok + buf;
}

// Synthesizes (or reads) clean sources, degrades one per (category, index)
// pair with seeds derived from cfg.seed, writes float32 WAV triples plus
// manifest.jsonl under out_dir. Item work is index-parallel; files are
// written serially in manifest order, so the output is byte-identical for a
// given seed regardless of thread count.
inline std::vector<ManifestEntry> build_corpus(const CorpusConfig& cfg,
                                               const std::string&  out_dir) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "clean", ec);
    fs::create_directories(fs::path(out_dir) / "degraded", ec);
    fs::create_directories(fs::path(out_dir) / "rir", ec);
    if (!fs::is_directory(fs::path(out_dir) / "clean"))
        throw IoError("cannot create corpus directory: " + out_dir);

    std::vector<std::string> clean_files;
    if (!cfg.clean_dir.empty()) {
        for (const auto& de : fs::directory_iterator(cfg.clean_dir))
            if (de.path().extension() == ".wav") clean_files.push_back(de.path().string());
        std::sort(clean_files.begin(), clean_files.end());
        if (clean_files.empty())
            throw ConfigError("no .wav files in clean dir: " + cfg.clean_dir);
    }

    const size_t total = static_cast<size_t>(kNumCategories) * cfg.per_category;
    struct Made {
        Waveform     clean;
        DegradedItem deg;
    };
    std::vector<Made> made(total);

    auto make_one = [&](size_t idx) {
        const Category cat       = static_cast<Category>(idx / cfg.per_category);
        const uint64_t item_seed = derive_seed(cfg.seed, idx);
        Waveform       clean =
            clean_files.empty()
                      ? synth_clean(cfg.synth, derive_seed(item_seed, 100))
                      : read_wav(clean_files[idx % clean_files.size()], cfg.synth.sample_rate);
        made[idx].deg   = compose_degradation(clean, cat, derive_seed(item_seed, 200));
        made[idx].clean = std::move(clean);
    };

    const int T = std::min<int>(cfg.threads, static_cast<int>(total));
    if (T <= 1) {
        for (size_t i = 0; i < total; ++i) make_one(i);
    } else {
        std::vector<std::exception_ptr> errs(static_cast<size_t>(T));
        std::vector<std::thread>        pool;
        for (int t = 0; t < T; ++t)
            pool.emplace_back([&, t] {
                try {
                    for (size_t i = static_cast<size_t>(t); i < total; i += static_cast<size_t>(T))
                        make_one(i);
                } catch (...) {
                    errs[static_cast<size_t>(t)] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (auto& e : errs)
            if (e) std::rethrow_exception(e);
    }

    std::vector<ManifestEntry> entries;
    entries.reserve(total);
    for (size_t idx = 0; idx < total; ++idx) {
        const Category cat = static_cast<Category>(idx / cfg.per_category);
        ManifestEntry  e;
        e.id            = corpus_item_id(cat, static_cast<int>(idx % cfg.per_category));
        e.seed          = derive_seed(cfg.seed, idx);
        e.label         = made[idx].deg.label;
        e.clean_path    = "clean/" + e.id + ".wav";
        e.degraded_path = "degraded/" + e.id + ".wav";
        write_wav((fs::path(out_dir) / e.clean_path).string(), made[idx].clean);
        write_wav((fs::path(out_dir) / e.degraded_path).string(), made[idx].deg.degraded);
        if (made[idx].deg.rir) {
            e.rir_path = "rir/" + e.id + ".wav";
            write_wav((fs::path(out_dir) / e.rir_path).string(), made[idx].deg.rir->taps);
        }
        entries.push_back(std::move(e));
    }
    write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), entries);
    return entries;
}

// ===========================================================================
// train/test split and corpus loading
// ===========================================================================

// Deterministic 10%-expected test split keyed only on the item id, so the
// split survives re-synthesis and is shared by every experiment on a corpus.
inline bool is_test_id(const std::string& id) { return fnv1a64(id) % 10 == 0; }

enum class SplitFilter { All, Train, Test };

struct CorpusItem {
    ManifestEntry entry;
    Waveform      clean, degraded;
};

inline std::vector<CorpusItem> load_corpus_items(const std::string& manifest_path,
                                                 SplitFilter        split = SplitFilter::All) {
    namespace fs = std::filesystem;
    auto           entries = read_manifest(manifest_path);
    const fs::path dir     = fs::path(manifest_path).parent_path();
    std::vector<CorpusItem> out;
    for (auto& e : entries) {
        const bool test = is_test_id(e.id);
        if (split == SplitFilter::Train && test) continue;
        if (split == SplitFilter::Test && !test) continue;
        CorpusItem it;
        it.clean    = read_wav((dir / e.clean_path).string());
        it.degraded = read_wav((dir / e.degraded_path).string());
        if (it.clean.size() != it.degraded.size())
            throw LengthError("corpus item length mismatch: " + e.id);
        it.entry = std::move(e);
        out.push_back(std::move(it));
    }
    if (out.empty()) throw ConfigError("no items selected from manifest: " + manifest_path);
    return out;
}

// ===========================================================================
// experiment variants
// ===========================================================================

// Training-time variants retrain the backbone; inference-time variants reuse
// the layerwise checkpoint of the same seed and only change how conditioning
// is supplied at sampling time.
enum class Variant {
    LayerWise            = 0,
    InputAddition        = 1,
    NoEncoder            = 2,
    ZeroConditioningEval = 3,
    LambdaZero           = 4,
    AdaptiveWeights      = 5,
    UniformWeights       = 6,
};
constexpr int kNumVariants = 7;

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::LayerWise: return "layerwise";
        case Variant::InputAddition: return "input_addition";
        case Variant::NoEncoder: return "no_encoder";
        case Variant::ZeroConditioningEval: return "zero_conditioning_eval";
        case Variant::LambdaZero: return "lambda_zero";
        case Variant::AdaptiveWeights: return "adaptive_weights";
        case Variant::UniformWeights: return "uniform_weights";
    }
    throw RangeError("unknown variant");
}

inline Variant variant_from_name(const std::string& s) {
    for (int v = 0; v < kNumVariants; ++v)
        if (s == variant_name(static_cast<Variant>(v))) return static_cast<Variant>(v);
    throw ConfigError("unknown variant: " + s);
}

inline bool variant_trains(Variant v) {
    return v == Variant::LayerWise || v == Variant::InputAddition || v == Variant::NoEncoder ||
           v == Variant::LambdaZero;
}

inline InjectionMode variant_injection(Variant v) {
    switch (v) {
        case Variant::InputAddition: return InjectionMode::InputAddition;
        case Variant::NoEncoder: return InjectionMode::NoEncoder;
        default: return InjectionMode::LayerWise;
    }
}

// how conditioning is produced at sampling time
enum class CondMode { Standard, Zero, Adaptive };

inline CondMode variant_cond_mode(Variant v) {
    if (v == Variant::ZeroConditioningEval) return CondMode::Zero;
    if (v == Variant::AdaptiveWeights) return CondMode::Adaptive;
    return CondMode::Standard;
}

enum class SamplerKind { Pc, Ode };

inline const char* sampler_kind_name(SamplerKind k) {
    return k == SamplerKind::Pc ? "pc" : "ode";
}

inline SamplerKind sampler_kind_from_name(const std::string& s) {
    if (s == "pc") return SamplerKind::Pc;
    if (s == "ode") return SamplerKind::Ode;
    throw ConfigError("unknown sampler: " + s);
}

struct SamplerConfig {
    SamplerKind kind        = SamplerKind::Pc;
    int         n_steps     = 30;
    int         n_corrector = 1;
    double      snr_r       = 0.5;

    void validate() const {
        if (n_steps < 1) throw ConfigError("sampler: n_steps must be >= 1");
        if (n_corrector < 0) throw ConfigError("sampler: n_corrector must be >= 0");
        if (!(snr_r > 0.0)) throw ConfigError("sampler: snr_r must be positive");
    }
};

// ===========================================================================
// enhancement
// ===========================================================================

// Reverse-diffuse one utterance: STFT, conditioning bundle (no dropout),
// reverse sampler in the compressed spectral domain, inverse STFT. The output
// has exactly the input's length. `noise_seed` fixes the prior draw and any
// corrector noise, so the ODE sampler is fully deterministic.
inline Waveform enhance(Model& model, const Waveform& degraded, const SamplerConfig& sc,
                        uint64_t noise_seed, CondMode cond_mode = CondMode::Standard) {
    sc.validate();
    degraded.validate();

    auto       spec   = stft(degraded, model.stft_cfg);
    const int  frames = spec.frames, bins = spec.bins;
    const bool wants_cond = model.uses_encoder();

    Tensor c_extra;
    if (wants_cond) {
        if (cond_mode == CondMode::Zero) {
            c_extra = Tensor::zeros({model.net_cfg.embed_dim});
        } else {
            auto bundle = model.encoder.encode(degraded);
            if (cond_mode == CondMode::Adaptive) {
                const auto w = adaptive_weights(bundle.head);
                c_extra = model.encoder.fuse(bundle.c_noise, bundle.c_reverb, bundle.c_distort, w);
            } else {
                c_extra = bundle.c_extra;
            }
        }
    } else if (cond_mode != CondMode::Standard) {
        throw ConfigError("conditioning override requires an encoder-conditioned checkpoint");
    }

    SdeConfig sdec = model.sde_cfg;
    sdec.n_steps   = sc.n_steps;

    ScoreFn score = [&](const Grid& xg, double tt) {
        ad::Tape tp(false);
        ad::Val  in = tp.input(stack_observation(xg, spec.data, frames, bins));
        ad::Val  cv;
        if (wants_cond) cv = tp.input(c_extra);
        ad::Val out = model.net.forward(tp, in, tt, cv);
        return tensor_to_grid(tp.val(out));
    };

    Rng  rng(noise_seed);
    Grid x0 = sc.kind == SamplerKind::Pc
                  ? sde::pc_sample(sdec, spec.data, score, rng, sc.n_corrector, sc.snr_r)
                  : sde::ode_sample(sdec, spec.data, score, rng);
    spec.data = std::move(x0);
    return istft(spec);
}

// swap the EMA shadow into the live weights of a loaded checkpoint
inline void use_ema_weights(LoadedCheckpoint& ck) {
    auto ps = ck.model->params();
    ck.ema.copy_to(ps);
}

// ===========================================================================
// evaluation
// ===========================================================================

// Score an estimate for every corpus item. The estimator is called once per
// item with (item, manifest index); records land at their item's index, so
// results are independent of thread count, and aggregation stays a
// deterministic fold in manifest order.
inline std::vector<MetricRecord> score_records(
    const std::vector<CorpusItem>&                                items,
    const std::function<Waveform(const CorpusItem&, size_t)>&     estimate,
    int                                                           threads = 1) {
    if (items.empty()) throw LengthError("no items to evaluate");
    std::vector<MetricRecord> recs(items.size());
    auto                      work = [&](size_t start, size_t stride) {
        for (size_t i = start; i < items.size(); i += stride) {
            const Waveform est = estimate(items[i], i);
            recs[i] = MetricRecord{items[i].entry.id, items[i].entry.label.category,
                                                     si_sdr(items[i].clean, est), estoi(items[i].clean, est)};
        }
    };
    const int T = std::clamp<int>(threads, 1, static_cast<int>(items.size()));
    if (T <= 1) {
        work(0, 1);
    } else {
        std::vector<std::exception_ptr> errs(static_cast<size_t>(T));
        std::vector<std::thread>        pool;
        for (int t = 0; t < T; ++t)
            pool.emplace_back([&, t] {
                try {
                    work(static_cast<size_t>(t), static_cast<size_t>(T));
                } catch (...) {
                    errs[static_cast<size_t>(t)] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (auto& e : errs)
            if (e) std::rethrow_exception(e);
    }
    return recs;
}

struct EvalConfig {
    SamplerConfig sampler;
    CondMode      cond    = CondMode::Standard;
    uint64_t      seed    = 0;
    int           threads = 1;
};

struct EvalOutput {
    std::vector<MetricRecord> records;
    MetricReport              report;
};

inline EvalOutput evaluate_items(Model& model, const std::vector<CorpusItem>& items,
                                 const EvalConfig& ec) {
    ec.sampler.validate();
    auto recs = score_records(
        items,
        [&](const CorpusItem& it, size_t i) {
            return enhance(model, it.degraded, ec.sampler, derive_seed(ec.seed, i), ec.cond);
        },
        ec.threads);
    EvalOutput out;
    out.report  = aggregate_report(recs);
    out.records = std::move(recs);
    return out;
}

// metrics of the unprocessed degraded inputs (the "before" column)
inline EvalOutput evaluate_passthrough(const std::vector<CorpusItem>& items, int threads = 1) {
    auto recs = score_records(
        items, [](const CorpusItem& it, size_t) { return it.degraded; }, threads);
    EvalOutput out;
    out.report  = aggregate_report(recs);
    out.records = std::move(recs);
    return out;
}

// ===========================================================================
// encoder-head report
// ===========================================================================

struct HeadReportRow {
    std::string id;
    Category    category = Category::NoiseOnly;
    int         true_class = 0, pred_class = 0;
    double      true_t60 = 0.0, pred_t60 = 0.0;                  // seconds; 0 when dry
    double      true_distortion = 0.0, pred_distortion = 0.0;    // normalized intensity
};

// a regression prediction counts as "distortion detected" above this value
constexpr double kDistortionDetectThreshold = 0.05;

inline std::optional<double> pearson_r(const std::vector<double>& x,
                                       const std::vector<double>& y) {
    if (x.size() != y.size()) throw LengthError("pearson_r: length mismatch");
    const size_t n = x.size();
    if (n < 2) return std::nullopt;
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct HeadSummary {
    size_t                   n = 0;
    double                   acc11            = 0.0;  // 11-way noise class, all items
    double                   noise_binary_acc = 0.0;  // noise present vs absent, all items
    size_t                   reverb_n  = 0;           // items with a reverberation label
    std::optional<double>    t60_r;                   // over reverberant items
    double                   t60_mae = 0.0;           // over reverberant items
    size_t                   distort_n = 0;           // items with a distortion label
    std::optional<double>    distortion_r;            // over distorted items
    double                   distortion_binary_acc = 0.0;  // detected vs labeled, all items
    std::vector<std::string> diagnostics;
};

inline HeadSummary summarize_head_rows(const std::vector<HeadReportRow>& rows) {
    if (rows.empty()) throw LengthError("head report: no rows");
    HeadSummary s;
    s.n = rows.size();
    size_t              class_hits = 0, binary_hits = 0, detect_hits = 0;
    std::vector<double> t60_true, t60_pred, dis_true, dis_pred;
    for (const auto& r : rows) {
        if (r.pred_class == r.true_class) ++class_hits;
        const bool true_noisy = r.true_class != kNoNoiseClass;
        const bool pred_noisy = r.pred_class != kNoNoiseClass;
        if (true_noisy == pred_noisy) ++binary_hits;
        if (category_has_reverb(r.category)) {
            t60_true.push_back(r.true_t60);
            t60_pred.push_back(r.pred_t60);
            s.t60_mae += std::abs(r.pred_t60 - r.true_t60);
        }
        if (category_has_distortion(r.category)) {
            dis_true.push_back(r.true_distortion);
            dis_pred.push_back(r.pred_distortion);
        }
        const bool true_dist = category_has_distortion(r.category);
        const bool pred_dist = r.pred_distortion > kDistortionDetectThreshold;
        if (true_dist == pred_dist) ++detect_hits;
    }
    s.acc11            = static_cast<double>(class_hits) / static_cast<double>(s.n);
    s.noise_binary_acc = static_cast<double>(binary_hits) / static_cast<double>(s.n);
    s.reverb_n         = t60_true.size();
    if (!t60_true.empty()) s.t60_mae /= static_cast<double>(t60_true.size());
    s.t60_r = t60_true.empty() ? std::nullopt : pearson_r(t60_true, t60_pred);
    if (!s.t60_r && !t60_true.empty())
        s.diagnostics.push_back("t60 correlation undefined: constant predictions or labels");
    if (t60_true.empty()) s.diagnostics.push_back("no reverberant items in the split");
    s.distort_n    = dis_true.size();
    s.distortion_r = dis_true.empty() ? std::nullopt : pearson_r(dis_true, dis_pred);
    if (!s.distortion_r && !dis_true.empty())
        s.diagnostics.push_back("distortion correlation undefined: constant predictions or labels");
    if (dis_true.empty()) s.diagnostics.push_back("no distorted items in the split");
    s.distortion_binary_acc = static_cast<double>(detect_hits) / static_cast<double>(s.n);
    return s;
}

// Per-item head predictions for a conditioned checkpoint. The encoder only
// receives gradient when it participates in training, so this is rejected for
// no-encoder models rather than reporting an untrained encoder's output.
inline std::vector<HeadReportRow> head_report_rows(Model&                         model,
                                                   const std::vector<CorpusItem>& items) {
    if (!model.uses_encoder())
        throw ConfigError("head report requires an encoder-conditioned checkpoint");
    if (items.empty()) throw LengthError("head report: no items");
    std::vector<HeadReportRow> rows;
    rows.reserve(items.size());
    for (const auto& it : items) {
        const auto    bundle = model.encoder.encode(it.degraded);
        HeadReportRow r;
        r.id         = it.entry.id;
        r.category   = it.entry.label.category;
        r.true_class = it.entry.label.noise_class;
        r.pred_class = static_cast<int>(
            std::max_element(bundle.head.noise_logits.data.begin(),
                             bundle.head.noise_logits.data.end()) -
            bundle.head.noise_logits.data.begin());
        r.true_t60        = t60_target(it.entry.label);
        r.pred_t60        = bundle.head.t60_pred;
        r.true_distortion = distortion_target(it.entry.label);
        r.pred_distortion = bundle.head.distort_pred;
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void write_head_report_csv(std::ostream& os, const std::vector<HeadReportRow>& rows) {
    os << "id,category,true_noise_class,pred_noise_class,true_t60_s,pred_t60_s,"
          "true_distortion,pred_distortion\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f", r.true_t60, r.pred_t60,
                      r.true_distortion, r.pred_distortion);
        os << r.id << ',' << category_name(r.category) << ',' << r.true_class << ','
           << r.pred_class << ',' << buf << '\n';
    }
}

inline nlohmann::json head_summary_json(const HeadSummary& s) {
    nlohmann::json j;
    j["n"]                     = s.n;
    j["noise_class_accuracy"]  = s.acc11;
    j["noise_binary_accuracy"] = s.noise_binary_acc;
    j["reverb_n"]              = s.reverb_n;
    j["t60_pearson_r"]         = s.t60_r ? nlohmann::json(*s.t60_r) : nlohmann::json();
    j["t60_mae_s"]             = s.t60_mae;
    j["distortion_n"]          = s.distort_n;
    j["distortion_pearson_r"] =
        s.distortion_r ? nlohmann::json(*s.distortion_r) : nlohmann::json();
    j["distortion_binary_accuracy"] = s.distortion_binary_acc;
    j["diagnostics"]                = s.diagnostics;
    return j;
}

inline void render_head_summary(std::ostream& os, const HeadSummary& s) {
    char buf[128];
    os << "encoder head summary over " << s.n << " items\n";
    std::snprintf(buf, sizeof buf, "  noise class accuracy (11-way): %.4f\n", s.acc11);
    os << buf;
    std::snprintf(buf, sizeof buf, "  noise detection accuracy:      %.4f\n",
                  s.noise_binary_acc);
    os << buf;
    if (s.t60_r)
        std::snprintf(buf, sizeof buf, "  t60 pearson r (n=%zu):          %.4f  mae %.4f s\n",
                      s.reverb_n, *s.t60_r, s.t60_mae);
    else
        std::snprintf(buf, sizeof buf, "  t60 pearson r (n=%zu):          null\n", s.reverb_n);
    os << buf;
    if (s.distortion_r)
        std::snprintf(buf, sizeof buf, "  distortion pearson r (n=%zu):   %.4f\n", s.distort_n,
                      *s.distortion_r);
    else
        std::snprintf(buf, sizeof buf, "  distortion pearson r (n=%zu):   null\n", s.distort_n);
    os << buf;
    std::snprintf(buf, sizeof buf, "  distortion detection accuracy: %.4f\n",
                  s.distortion_binary_acc);
    os << buf;
    for (const auto& d : s.diagnostics) os << "  note: " << d << "\n";
}

// ===========================================================================
// training driver
// ===========================================================================

// Epoch loop over a corpus with per-batch spectrogram/feature construction,
// so corpora never need to be resident as tensors. Shuffling draws from `rng`
// (Fisher-Yates), making the whole run a pure function of its seeds.
struct FitResult {
    int           steps = 0;
    LossBreakdown last{};
};

inline FitResult fit_model(Model& model, const std::vector<const CorpusItem*>& train_items,
                           const TrainConfig& tc, Adam& opt, Ema& ema, Rng& rng,
                           std::ostream* jsonl = nullptr) {
    tc.validate();
    if (train_items.empty()) throw LengthError("fit_model: no training items");
    FitResult           res;
    std::vector<size_t> order(train_items.size());
    std::iota(order.begin(), order.end(), size_t{0});
    const size_t bs = static_cast<size_t>(tc.batch_size);
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_index(i)]);
        for (size_t start = 0; start < order.size(); start += bs) {
            const size_t           end = std::min(order.size(), start + bs);
            std::vector<TrainItem> batch;
            batch.reserve(end - start);
            for (size_t k = start; k < end; ++k) {
                const CorpusItem& ci = *train_items[order[k]];
                batch.push_back(make_train_item(ci.entry.id, ci.clean, ci.degraded,
                                                ci.entry.label, model.stft_cfg, model.enc_cfg));
            }
            std::vector<const TrainItem*> ptrs;
            ptrs.reserve(batch.size());
            for (const auto& b : batch) ptrs.push_back(&b);
            res.last = train_step(model, ptrs, tc, opt, ema, rng);
            ++res.steps;
            if (jsonl) log_step_jsonl(*jsonl, res.steps, epoch, res.last, opt.lr());
        }
    }
    return res;
}

// ===========================================================================
// ablation matrix
// ===========================================================================

struct AblationConfig {
    std::vector<Variant>  variants{Variant::LayerWise, Variant::InputAddition,
                                   Variant::NoEncoder};
    std::vector<uint64_t> seeds{1};
    std::string           manifest_path;
    std::string           out_dir;
    TrainConfig           train;  // injection and lambda are overridden per variant
    ScoreNetConfig        net;
    EncoderConfig         enc;
    StftConfig            stft_cfg;
    SdeConfig             sde;
    SamplerConfig         sampler;
    uint64_t              eval_seed    = 0x5eed;
    int                   eval_threads = 1;

    void validate() const {
        if (variants.empty()) throw ConfigError("ablation: no variants");
        if (seeds.empty()) throw ConfigError("ablation: no seeds");
        for (size_t i = 0; i < variants.size(); ++i)
            for (size_t j = i + 1; j < variants.size(); ++j)
                if (variants[i] == variants[j])
                    throw ConfigError(std::string("duplicate variant: ") +
                                      variant_name(variants[i]));
        for (size_t i = 0; i < seeds.size(); ++i)
            for (size_t j = i + 1; j < seeds.size(); ++j)
                if (seeds[i] == seeds[j])
                    throw ConfigError("duplicate seed: " + std::to_string(seeds[i]));
        const bool has_layerwise =
            std::find(variants.begin(), variants.end(), Variant::LayerWise) != variants.end();
        for (Variant v : variants)
            if (!variant_trains(v) && !has_layerwise)
                throw ConfigError(std::string(variant_name(v)) +
                                  " evaluates a layerwise checkpoint; add layerwise to the run");
        if (manifest_path.empty()) throw ConfigError("ablation: manifest_path required");
        if (out_dir.empty()) throw ConfigError("ablation: out_dir required");
        if (eval_threads < 1) throw ConfigError("ablation: eval_threads must be >= 1");
        train.validate();
        net.validate();
        enc.validate();
        stft_cfg.validate();
        sde.validate();
        sampler.validate();
    }
};

struct AblationCell {
    Variant             variant = Variant::LayerWise;
    uint64_t            seed    = 0;
    bool                ok      = false;
    std::string         note;
    int                 train_steps = 0;
    double              final_total = 0.0;
    MetricReport        report;                   // valid iff ok
    std::vector<double> item_si_sdr, item_estoi;  // test items, manifest order
};

struct PairwiseEntry {
    Variant     a = Variant::LayerWise, b = Variant::LayerWise;
    size_t      n = 0;       // finite pairs entering the test
    TTestResult si_sdr{0.0, 1.0};
    TTestResult estoi{0.0, 1.0};
};

struct ResultsTable {
    std::string                manifest_path;
    uint64_t                   manifest_checksum = 0;
    size_t                     n_train = 0, n_test = 0;
    MetricReport               input_report;  // degraded-vs-clean baseline on the test split
    std::vector<double>        input_si_sdr;
    std::vector<AblationCell>  cells;
    std::vector<PairwiseEntry> pairs;

    const AblationCell* find(Variant v, uint64_t seed) const {
        for (const auto& c : cells)
            if (c.variant == v && c.seed == seed) return &c;
        return nullptr;
    }

    // every configured (variant, seed) appears exactly once
    void validate_complete(const std::vector<Variant>&  variants,
                           const std::vector<uint64_t>& seeds) const {
        if (cells.size() != variants.size() * seeds.size())
            throw ConfigError("results table incomplete");
        for (Variant v : variants)
            for (uint64_t s : seeds) {
                size_t hits = 0;
                for (const auto& c : cells)
                    if (c.variant == v && c.seed == s) ++hits;
                if (hits != 1)
                    throw ConfigError("results table must contain each (variant, seed) once");
            }
    }

    // mean of the per-seed overall means, over cells that trained/evaluated
    std::optional<double> mean_si_sdr(Variant v) const {
        double acc = 0.0;
        size_t n   = 0;
        for (const auto& c : cells)
            if (c.variant == v && c.ok) {
                acc += c.report.overall.mean_si_sdr;
                ++n;
            }
        if (n == 0) return std::nullopt;
        return acc / static_cast<double>(n);
    }
    std::optional<double> mean_estoi(Variant v) const {
        double acc = 0.0;
        size_t n   = 0;
        for (const auto& c : cells)
            if (c.variant == v && c.ok) {
                acc += c.report.overall.mean_estoi;
                ++n;
            }
        if (n == 0) return std::nullopt;
        return acc / static_cast<double>(n);
    }
};

inline std::string ablation_checkpoint_path(const std::string& out_dir, Variant v,
                                            uint64_t seed) {
    return (std::filesystem::path(out_dir) /
            (std::string(variant_name(v)) + "_s" + std::to_string(seed) + ".ckpt"))
        .string();
}

// Train every training-time variant per seed on the shared corpus, then
// evaluate every variant on the shared test split. All variants see the same
// manifest (checksummed), the same test items, and per-item sampler seeds that
// depend only on (eval_seed, train seed, item index) — never on the variant —
// so comparisons are paired. Divergence is recorded in the cell, not fatal.
inline ResultsTable run_ablation(const AblationConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (!fs::is_directory(cfg.out_dir)) throw IoError("cannot create out dir: " + cfg.out_dir);

    ResultsTable table;
    table.manifest_path     = cfg.manifest_path;
    table.manifest_checksum = file_checksum(cfg.manifest_path);

    auto                    all = load_corpus_items(cfg.manifest_path, SplitFilter::All);
    std::vector<CorpusItem> train_set, test_set;
    for (auto& it : all)
        (is_test_id(it.entry.id) ? test_set : train_set).push_back(std::move(it));
    if (train_set.empty() || test_set.empty())
        throw ConfigError("ablation requires non-empty train and test splits");
    table.n_train = train_set.size();
    table.n_test  = test_set.size();

    auto baseline      = evaluate_passthrough(test_set, cfg.eval_threads);
    table.input_report = std::move(baseline.report);
    for (const auto& r : table.input_report.records) table.input_si_sdr.push_back(r.si_sdr_db);

    std::vector<const CorpusItem*> train_ptrs;
    train_ptrs.reserve(train_set.size());
    for (const auto& it : train_set) train_ptrs.push_back(&it);

    for (Variant v : cfg.variants) {
        if (!variant_trains(v)) continue;
        for (uint64_t s : cfg.seeds) {
            AblationCell cell;
            cell.variant = v;
            cell.seed    = s;

            TrainConfig tc = cfg.train;
            tc.seed        = s;
            tc.injection   = variant_injection(v);
            if (v == Variant::LambdaZero) tc.lambda = 0.0;
            ScoreNetConfig nc = cfg.net;
            nc.injection      = tc.injection;

            Model model(nc, cfg.enc, cfg.stft_cfg, cfg.sde, derive_seed(s, 1));
            Adam  opt(model.params(), tc.learning_rate);
            Ema   ema(model.params(), tc.ema_decay);
            Rng   rng(derive_seed(s, 2));

            const std::string tag =
                std::string(variant_name(v)) + "_s" + std::to_string(s);
            std::ofstream log((fs::path(cfg.out_dir) / (tag + ".log.jsonl")).string());
            try {
                auto fit = fit_model(model, train_ptrs, tc, opt, ema, rng,
                                     log ? &log : nullptr);
                cell.train_steps = fit.steps;
                cell.final_total = fit.last.total;
                cell.ok          = true;
            } catch (const NumericError& e) {
                cell.ok   = false;
                cell.note = e.what();
            }
            if (cell.ok) {
                save_checkpoint(ablation_checkpoint_path(cfg.out_dir, v, s), model, ema, tc,
                                rng, tc.epochs);
                ema.copy_to(model.params());
                EvalConfig evc;
                evc.sampler = cfg.sampler;
                evc.cond    = CondMode::Standard;
                evc.seed    = derive_seed(cfg.eval_seed, s);
                evc.threads = cfg.eval_threads;
                auto out    = evaluate_items(model, test_set, evc);
                for (const auto& r : out.records) {
                    cell.item_si_sdr.push_back(r.si_sdr_db);
                    cell.item_estoi.push_back(r.estoi);
                }
                cell.report = std::move(out.report);
            }
            table.cells.push_back(std::move(cell));
        }
    }

    for (Variant v : cfg.variants) {
        if (variant_trains(v)) continue;
        for (uint64_t s : cfg.seeds) {
            AblationCell cell;
            cell.variant   = v;
            cell.seed      = s;
            const auto* lw = table.find(Variant::LayerWise, s);
            if (lw == nullptr || !lw->ok) {
                cell.note = "layerwise checkpoint unavailable for seed " + std::to_string(s);
            } else {
                auto ck = load_checkpoint(
                    ablation_checkpoint_path(cfg.out_dir, Variant::LayerWise, s));
                use_ema_weights(ck);
                EvalConfig evc;
                evc.sampler = cfg.sampler;
                evc.cond    = variant_cond_mode(v);
                evc.seed    = derive_seed(cfg.eval_seed, s);
                evc.threads = cfg.eval_threads;
                auto out    = evaluate_items(*ck.model, test_set, evc);
                for (const auto& r : out.records) {
                    cell.item_si_sdr.push_back(r.si_sdr_db);
                    cell.item_estoi.push_back(r.estoi);
                }
                cell.report = std::move(out.report);
                cell.ok     = true;
            }
            table.cells.push_back(std::move(cell));
        }
    }

    // rebuild in configured (variant, seed) order for stable rendering
    {
        std::vector<AblationCell> ordered;
        ordered.reserve(table.cells.size());
        for (Variant v : cfg.variants)
            for (uint64_t s : cfg.seeds)
                for (auto& c : table.cells)
                    if (c.variant == v && c.seed == s) ordered.push_back(std::move(c));
        table.cells = std::move(ordered);
    }

    for (size_t i = 0; i < cfg.variants.size(); ++i) {
        for (size_t j = i + 1; j < cfg.variants.size(); ++j) {
            PairwiseEntry pe;
            pe.a = cfg.variants[i];
            pe.b = cfg.variants[j];
            std::vector<double> fa, fb, ga, gb;
            for (uint64_t s : cfg.seeds) {
                const auto* ca = table.find(pe.a, s);
                const auto* cb = table.find(pe.b, s);
                if (ca == nullptr || cb == nullptr || !ca->ok || !cb->ok) continue;
                for (size_t k = 0; k < ca->item_si_sdr.size(); ++k) {
                    if (std::isfinite(ca->item_si_sdr[k]) && std::isfinite(cb->item_si_sdr[k])) {
                        fa.push_back(ca->item_si_sdr[k]);
                        fb.push_back(cb->item_si_sdr[k]);
                    }
                    ga.push_back(ca->item_estoi[k]);
                    gb.push_back(cb->item_estoi[k]);
                }
            }
            pe.n = fa.size();
            if (fa.size() >= 2) pe.si_sdr = paired_t_test(fa, fb);
            if (ga.size() >= 2) pe.estoi = paired_t_test(ga, gb);
            table.pairs.push_back(pe);
        }
    }

    table.validate_complete(cfg.variants, cfg.seeds);
    return table;
}

// ===========================================================================
// rendering
// ===========================================================================

namespace detail {

inline std::string fmt_num(double v, int prec) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

inline std::string pad_left(std::string s, size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
}

inline std::string pad_right(std::string s, size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

}  // namespace detail

inline void render_results_table(std::ostream& os, const ResultsTable& t) {
    using detail::fmt_num;
    using detail::pad_left;
    using detail::pad_right;
    char hex[24];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(t.manifest_checksum));
    os << "corpus: " << t.manifest_path << "\n";
    os << "manifest checksum: " << hex << "   train/test: " << t.n_train << "/" << t.n_test
       << "\n";
    os << "input (degraded) baseline: SI-SDR "
       << fmt_num(t.input_report.overall.mean_si_sdr, 2) << " dB   ESTOI "
       << fmt_num(t.input_report.overall.mean_estoi, 3) << "\n\n";

    os << pad_right("variant", 24) << pad_left("seed", 6) << pad_left("SI-SDR dB", 11)
       << pad_left("vs input", 10) << pad_left("ESTOI", 9) << pad_left("n", 5) << "  note\n";
    for (const auto& c : t.cells) {
        os << pad_right(variant_name(c.variant), 24) << pad_left(std::to_string(c.seed), 6);
        if (c.ok) {
            const double d = c.report.overall.mean_si_sdr - t.input_report.overall.mean_si_sdr;
            os << pad_left(fmt_num(c.report.overall.mean_si_sdr, 2), 11)
               << pad_left((d >= 0 ? "+" : "") + fmt_num(d, 2), 10)
               << pad_left(fmt_num(c.report.overall.mean_estoi, 3), 9)
               << pad_left(std::to_string(c.report.overall.count), 5);
        } else {
            os << pad_left("-", 11) << pad_left("-", 10) << pad_left("-", 9)
               << pad_left("0", 5);
        }
        if (!c.note.empty()) os << "  " << c.note;
        os << "\n";
    }

    os << "\nper-category mean SI-SDR dB / ESTOI "
          "(N=noise NR=noise+reverb ND=noise+distort NRD=noise+reverb+distort R=reverb "
          "D=distort):\n";
    os << pad_right("variant", 24) << pad_left("seed", 6);
    for (const char* h : {"N", "NR", "ND", "NRD", "R", "D"}) os << pad_left(h, 13);
    os << "\n";
    for (const auto& c : t.cells) {
        os << pad_right(variant_name(c.variant), 24) << pad_left(std::to_string(c.seed), 6);
        for (int cat = 0; cat < kNumCategories; ++cat) {
            const auto it =
                c.ok ? c.report.per_category.find(static_cast<Category>(cat))
                     : c.report.per_category.end();
            if (!c.ok || it == c.report.per_category.end()) {
                os << pad_left("-", 13);
            } else {
                os << pad_left(fmt_num(it->second.mean_si_sdr, 1) + "/" +
                                   fmt_num(it->second.mean_estoi, 2),
                               13);
            }
        }
        os << "\n";
    }

    os << "\npaired t-tests on per-item SI-SDR (t > 0 favors the first variant):\n";
    if (t.pairs.empty()) os << "  (single variant; nothing to compare)\n";
    for (const auto& p : t.pairs) {
        os << "  " << pad_right(std::string(variant_name(p.a)) + " vs " + variant_name(p.b),
                                48);
        if (p.n >= 2) {
            os << "t=" << fmt_num(p.si_sdr.t, 3) << "  p=" << fmt_num(p.si_sdr.p, 4)
               << "  n=" << p.n;
        } else {
            os << "insufficient paired data (n=" << p.n << ")";
        }
        os << "\n";
    }
}

inline void write_results_csv(std::ostream& os, const ResultsTable& t) {
    os << "variant,seed,category,count,mean_si_sdr_db,std_si_sdr_db,mean_estoi,std_estoi,"
          "infinite_sdr,note\n";
    char buf[160];
    auto agg_row = [&](const std::string& variant, uint64_t seed, const std::string& cat,
                       const MetricAggregate& a, const std::string& note) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g", a.mean_si_sdr, a.std_si_sdr,
                      a.mean_estoi, a.std_estoi);
        std::string safe_note = note;
        for (auto& ch : safe_note)
            if (ch == ',' || ch == '\n') ch = ';';
        os << variant << ',' << seed << ',' << cat << ',' << a.count << ',' << buf << ','
           << a.infinite_sdr << ',' << safe_note << '\n';
    };
    for (const auto& [cat, agg] : t.input_report.per_category)
        agg_row("input", 0, category_name(cat), agg, "");
    agg_row("input", 0, "overall", t.input_report.overall, "");
    for (const auto& c : t.cells) {
        if (!c.ok) {
            std::string safe_note = c.note;
            for (auto& ch : safe_note)
                if (ch == ',' || ch == '\n') ch = ';';
            os << variant_name(c.variant) << ',' << c.seed << ",overall,0,,,,,," << safe_note
               << '\n';
            continue;
        }
        for (const auto& [cat, agg] : c.report.per_category)
            agg_row(variant_name(c.variant), c.seed, category_name(cat), agg, "");
        agg_row(variant_name(c.variant), c.seed, "overall", c.report.overall, c.note);
    }
}

}  // namespace dcse
