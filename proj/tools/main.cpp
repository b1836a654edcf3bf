// Command-line front end: corpus synthesis, training, enhancement, metric
// reports, the variant ablation matrix, and the encoder-head report.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "dcse/config_io.hpp"
#include "dcse/harness.hpp"

namespace fs = std::filesystem;
using namespace dcse;

namespace {

// model-size presets; "desk" is the library default scale, "tiny" matches the
// fast configuration used by the test suite
struct Preset {
    ScoreNetConfig net;
    EncoderConfig  enc;
    StftConfig     stft;
    SdeConfig      sde;
};

Preset make_preset(const std::string& name) {
    if (name == "desk") return {};
    if (name == "tiny") {
        Preset p;
        p.stft.frame_length  = 126;
        p.stft.hop_length    = 63;
        p.net.base_channels  = 4;
        p.net.channel_mults  = {1};
        p.net.blocks_per_res = 2;
        p.net.embed_dim      = 16;
        p.enc.d_mel          = 10;
        p.enc.d_w            = 8;
        p.enc.d_h            = 8;
        p.enc.d_b            = 4;
        p.enc.d_out          = 16;
        return p;
    }
    throw ConfigError("unknown preset: " + name + " (expected desk or tiny)");
}

SplitFilter split_from_name(const std::string& s) {
    if (s == "all") return SplitFilter::All;
    if (s == "train") return SplitFilter::Train;
    if (s == "test") return SplitFilter::Test;
    throw ConfigError("unknown split: " + s + " (expected all, train, or test)");
}

CondMode cond_from_name(const std::string& s) {
    if (s == "standard") return CondMode::Standard;
    if (s == "zero") return CondMode::Zero;
    if (s == "adaptive") return CondMode::Adaptive;
    throw ConfigError("unknown conditioning mode: " + s);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream        ss(s);
    std::string              tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir)) throw IoError("cannot create directory: " + dir);
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p);
    if (!os) throw IoError("cannot open for write: " + p.string());
    return os;
}

// shared knobs for the subcommands that train models
struct TrainFlags {
    std::string preset = "desk";
    std::string config;  // TrainConfig file (json or toml)
    int         epochs = -1;
    int         batch  = -1;
    double      lr     = -1.0;
    double      lambda = -1.0;
    std::string injection;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--preset", preset, "model size preset: desk or tiny");
        cmd->add_option("--config", config, "training config file (.json or .toml)");
        cmd->add_option("--epochs", epochs, "override: training epochs");
        cmd->add_option("--batch-size", batch, "override: batch size");
        cmd->add_option("--lr", lr, "override: learning rate");
        cmd->add_option("--lambda", lambda, "override: auxiliary loss weight");
        cmd->add_option("--injection", injection,
                        "override: layerwise, input_addition, no_encoder, zero_conditioning");
    }

    TrainConfig resolve(uint64_t seed) const {
        TrainConfig tc = config.empty() ? TrainConfig{} : load_train_config(config);
        if (epochs >= 0) tc.epochs = epochs;
        if (batch >= 0) tc.batch_size = batch;
        if (lr >= 0.0) tc.learning_rate = lr;
        if (lambda >= 0.0) tc.lambda = lambda;
        if (!injection.empty()) tc.injection = injection_mode_from_name(injection);
        tc.seed = seed;
        tc.validate();
        return tc;
    }
};

struct SamplerFlags {
    std::string kind        = "pc";
    int         steps       = 30;
    int         corrector   = 1;
    double      snr_r       = 0.5;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--sampler", kind, "reverse sampler: pc or ode");
        cmd->add_option("--steps", steps, "reverse diffusion steps");
        cmd->add_option("--corrector", corrector, "corrector iterations per step (pc only)");
        cmd->add_option("--snr-r", snr_r, "corrector step-size ratio (pc only)");
    }

    SamplerConfig resolve() const {
        SamplerConfig sc;
        sc.kind        = sampler_kind_from_name(kind);
        sc.n_steps     = steps;
        sc.n_corrector = corrector;
        sc.snr_r       = snr_r;
        sc.validate();
        return sc;
    }
};

int cmd_degrade(const std::string& out_dir, uint64_t seed, int per_category,
                const std::string& clean_dir, double dur_lo, double dur_hi, int threads) {
    CorpusConfig cfg;
    cfg.per_category        = per_category;
    cfg.seed                = seed;
    cfg.clean_dir           = clean_dir;
    cfg.threads             = threads;
    cfg.synth.duration_lo_s = dur_lo;
    cfg.synth.duration_hi_s = dur_hi;
    const auto entries = build_corpus(cfg, out_dir);
    size_t     test_n  = 0;
    for (const auto& e : entries) test_n += is_test_id(e.id) ? 1 : 0;
    std::printf("wrote %zu items (%zu train / %zu test) under %s\n", entries.size(),
                entries.size() - test_n, test_n, out_dir.c_str());
    std::printf("manifest: %s\n", (fs::path(out_dir) / "manifest.jsonl").string().c_str());
    return 0;
}

int cmd_train(const std::string& manifest, const std::string& out_dir, uint64_t seed,
              const TrainFlags& tf) {
    ensure_dir(out_dir);
    const Preset      ps = make_preset(tf.preset);
    const TrainConfig tc = tf.resolve(seed);

    ScoreNetConfig nc = ps.net;
    nc.injection      = tc.injection;

    auto items = load_corpus_items(manifest, SplitFilter::Train);
    std::vector<const CorpusItem*> ptrs;
    ptrs.reserve(items.size());
    for (const auto& it : items) ptrs.push_back(&it);

    Model model(nc, ps.enc, ps.stft, ps.sde, derive_seed(seed, 1));
    Adam  opt(model.params(), tc.learning_rate);
    Ema   ema(model.params(), tc.ema_decay);
    Rng   rng(derive_seed(seed, 2));

    auto log = open_out(fs::path(out_dir) / "train.log.jsonl");
    std::printf("training %s on %zu items, %d epochs, batch %d\n",
                injection_mode_name(tc.injection), items.size(), tc.epochs, tc.batch_size);
    const auto res = fit_model(model, ptrs, tc, opt, ema, rng, &log);

    const std::string ckpt = (fs::path(out_dir) / "model.ckpt").string();
    save_checkpoint(ckpt, model, ema, tc, rng, tc.epochs);
    std::printf("%d steps, final loss %.6f (score %.6f)\n", res.steps, res.last.total,
                res.last.score);
    std::printf("checkpoint: %s\n", ckpt.c_str());
    return 0;
}

int cmd_enhance(const std::string& ckpt_path, const std::string& in_wav,
                const std::string& out_wav, const std::string& manifest,
                const std::string& out_dir, const std::string& split_name, uint64_t seed,
                const SamplerFlags& sf, const std::string& cond_name, bool raw_weights,
                int threads) {
    auto ck = load_checkpoint(ckpt_path);
    if (!raw_weights) use_ema_weights(ck);
    const SamplerConfig sc   = sf.resolve();
    const CondMode      cond = cond_from_name(cond_name);

    if (!in_wav.empty()) {
        if (out_wav.empty()) throw ConfigError("--out is required with --in");
        const Waveform x = read_wav(in_wav);
        const Waveform y = enhance(*ck.model, x, sc, seed, cond);
        write_wav(out_wav, y);
        std::printf("%s -> %s (%zu samples @ %d Hz)\n", in_wav.c_str(), out_wav.c_str(),
                    y.size(), y.sample_rate);
        return 0;
    }

    if (manifest.empty() || out_dir.empty())
        throw ConfigError("enhance needs either --in/--out or --manifest/--out-dir");
    ensure_dir(out_dir);
    const auto items = load_corpus_items(manifest, split_from_name(split_name));

    const int T = std::clamp<int>(threads, 1, static_cast<int>(items.size()));
    std::vector<std::exception_ptr> errs(static_cast<size_t>(T));
    auto                            work = [&](size_t start, size_t stride) {
        for (size_t i = start; i < items.size(); i += stride) {
            const Waveform y =
                enhance(*ck.model, items[i].degraded, sc, derive_seed(seed, i), cond);
            write_wav((fs::path(out_dir) / (items[i].entry.id + ".wav")).string(), y);
        }
    };
    if (T <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
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
    std::printf("enhanced %zu items into %s\n", items.size(), out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& manifest, const std::string& enhanced_dir,
             const std::string& out_dir, const std::string& split_name, int threads) {
    ensure_dir(out_dir);
    const auto items = load_corpus_items(manifest, split_from_name(split_name));
    const auto recs  = score_records(
        items,
        [&](const CorpusItem& it, size_t) {
            return read_wav((fs::path(enhanced_dir) / (it.entry.id + ".wav")).string());
        },
        threads);
    const auto rep = aggregate_report(recs);

    {
        auto csv = open_out(fs::path(out_dir) / "report.csv");
        write_report_csv(csv, rep);
    }
    {
        auto js = open_out(fs::path(out_dir) / "report.json");
        write_report_json(js, rep);
    }
    std::printf("%d items: SI-SDR %.2f dB (sd %.2f, %d inf), ESTOI %.3f (sd %.3f)\n",
                rep.overall.count, rep.overall.mean_si_sdr, rep.overall.std_si_sdr,
                rep.overall.infinite_sdr, rep.overall.mean_estoi, rep.overall.std_estoi);
    for (const auto& [cat, agg] : rep.per_category)
        std::printf("  %-22s SI-SDR %.2f dB, ESTOI %.3f (n=%d)\n", category_name(cat),
                    agg.mean_si_sdr, agg.mean_estoi, agg.count);
    std::printf("reports: %s/report.{csv,json}\n", out_dir.c_str());
    return 0;
}

int cmd_ablate(const std::string& manifest, const std::string& out_dir, uint64_t seed,
               const std::string& variants_csv, const std::string& seeds_csv,
               const TrainFlags& tf, const SamplerFlags& sf, int eval_threads) {
    ensure_dir(out_dir);
    const Preset ps = make_preset(tf.preset);

    AblationConfig cfg;
    cfg.variants.clear();
    for (const auto& v : split_csv(variants_csv)) cfg.variants.push_back(variant_from_name(v));
    cfg.seeds.clear();
    if (seeds_csv.empty()) {
        cfg.seeds.push_back(seed);
    } else {
        for (const auto& s : split_csv(seeds_csv)) cfg.seeds.push_back(std::stoull(s));
    }
    cfg.manifest_path = manifest;
    cfg.out_dir       = out_dir;
    cfg.train         = tf.resolve(seed);
    cfg.net           = ps.net;
    cfg.enc           = ps.enc;
    cfg.stft_cfg      = ps.stft;
    cfg.sde           = ps.sde;
    cfg.sampler       = sf.resolve();
    cfg.eval_seed     = derive_seed(seed, 9001);
    cfg.eval_threads  = eval_threads;

    const ResultsTable table = run_ablation(cfg);

    render_results_table(std::cout, table);
    {
        auto txt = open_out(fs::path(out_dir) / "results.txt");
        render_results_table(txt, table);
    }
    {
        auto csv = open_out(fs::path(out_dir) / "results.csv");
        write_results_csv(csv, table);
    }

    // soft directional summary (reported, not enforced)
    const auto lw = table.mean_si_sdr(Variant::LayerWise);
    const auto ia = table.mean_si_sdr(Variant::InputAddition);
    if (lw && ia)
        std::printf("\nsoft check: layerwise %.2f dB %s input_addition %.2f dB\n", *lw,
                    *lw >= *ia ? ">=" : "<", *ia);
    const auto zc = table.mean_si_sdr(Variant::ZeroConditioningEval);
    if (lw && zc)
        std::printf("soft check: zero conditioning %.2f dB %s layerwise %.2f dB\n", *zc,
                    *zc <= *lw ? "<=" : ">", *lw);

    int divergent = 0;
    for (const auto& c : table.cells)
        if (!c.ok) {
            std::printf("note: %s seed %llu did not complete: %s\n", variant_name(c.variant),
                        static_cast<unsigned long long>(c.seed), c.note.c_str());
            ++divergent;
        }
    std::printf("results: %s/results.{txt,csv}\n", out_dir.c_str());
    return divergent == static_cast<int>(table.cells.size()) ? 1 : 0;
}

int cmd_head_report(const std::string& ckpt_path, const std::string& manifest,
                    const std::string& out_dir, const std::string& split_name,
                    bool raw_weights) {
    ensure_dir(out_dir);
    auto ck = load_checkpoint(ckpt_path);
    if (!raw_weights) use_ema_weights(ck);
    const auto items = load_corpus_items(manifest, split_from_name(split_name));
    const auto rows  = head_report_rows(*ck.model, items);
    const auto summ  = summarize_head_rows(rows);

    {
        auto csv = open_out(fs::path(out_dir) / "head_report.csv");
        write_head_report_csv(csv, rows);
    }
    {
        auto js = open_out(fs::path(out_dir) / "head_summary.json");
        js << head_summary_json(summ).dump(2) << "\n";
    }
    render_head_summary(std::cout, summ);
    std::printf("report: %s/head_report.csv\n", out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"degradation-conditioned diffusion speech enhancement"};
    app.require_subcommand(1);

    uint64_t    seed = 0;
    std::string out_dir;
    app.add_option("--seed", seed, "global random seed")->capture_default_str();
    app.add_option("--out-dir", out_dir, "output directory");
    app.fallthrough();

    // degrade
    auto* deg          = app.add_subcommand("degrade", "synthesize a degraded corpus");
    int   per_category = 3;
    std::string clean_dir;
    double      dur_lo = 1.0, dur_hi = 1.6;
    int         threads = 1;
    deg->add_option("--per-category", per_category, "items per degradation category");
    deg->add_option("--clean-dir", clean_dir, "use real clean WAVs instead of synthesis");
    deg->add_option("--duration-lo", dur_lo, "min clean duration, seconds");
    deg->add_option("--duration-hi", dur_hi, "max clean duration, seconds");
    deg->add_option("--threads", threads, "synthesis worker threads");

    // train
    auto*       tr = app.add_subcommand("train", "train a model on a corpus");
    std::string tr_manifest;
    TrainFlags  tf;
    tr->add_option("--manifest", tr_manifest, "corpus manifest")->required();
    tf.add_to(tr);

    // enhance
    auto*       en = app.add_subcommand("enhance", "run the reverse sampler on audio");
    std::string en_ckpt, en_in, en_out, en_manifest, en_split = "test", en_cond = "standard";
    SamplerFlags sf_en;
    bool         en_raw     = false;
    int          en_threads = 1;
    en->add_option("--checkpoint", en_ckpt, "trained checkpoint")->required();
    en->add_option("--in", en_in, "input WAV (single-file mode)");
    en->add_option("--out", en_out, "output WAV (single-file mode)");
    en->add_option("--manifest", en_manifest, "corpus manifest (batch mode)");
    en->add_option("--split", en_split, "batch mode split: all, train, test");
    en->add_option("--cond", en_cond, "conditioning: standard, zero, adaptive");
    en->add_flag("--raw-weights", en_raw, "use live weights instead of the EMA shadow");
    en->add_option("--threads", en_threads, "batch mode worker threads");
    sf_en.add_to(en);

    // eval
    auto*       ev = app.add_subcommand("eval", "score enhanced audio against the corpus");
    std::string ev_manifest, ev_dir, ev_split = "test";
    int         ev_threads = 1;
    ev->add_option("--manifest", ev_manifest, "corpus manifest")->required();
    ev->add_option("--enhanced-dir", ev_dir, "directory of <id>.wav estimates")->required();
    ev->add_option("--split", ev_split, "split: all, train, test");
    ev->add_option("--threads", ev_threads, "worker threads");

    // ablate
    auto*       ab = app.add_subcommand("ablate", "train and compare conditioning variants");
    std::string ab_manifest, ab_variants = "layerwise,input_addition,no_encoder",
                             ab_seeds;
    TrainFlags   tf_ab;
    SamplerFlags sf_ab;
    int          ab_threads = 1;
    ab->add_option("--manifest", ab_manifest, "corpus manifest")->required();
    ab->add_option("--variants", ab_variants, "comma-separated variant list");
    ab->add_option("--seeds", ab_seeds, "comma-separated training seeds");
    ab->add_option("--eval-threads", ab_threads, "evaluation worker threads");
    tf_ab.add_to(ab);
    sf_ab.add_to(ab);

    // head-report
    auto*       hr = app.add_subcommand("head-report", "encoder head predictions vs labels");
    std::string hr_ckpt, hr_manifest, hr_split = "test";
    bool        hr_raw = false;
    hr->add_option("--checkpoint", hr_ckpt, "trained checkpoint")->required();
    hr->add_option("--manifest", hr_manifest, "corpus manifest")->required();
    hr->add_option("--split", hr_split, "split: all, train, test");
    hr->add_flag("--raw-weights", hr_raw, "use live weights instead of the EMA shadow");

    CLI11_PARSE(app, argc, argv);

    try {
        if (deg->parsed()) {
            if (out_dir.empty()) throw ConfigError("degrade requires --out-dir");
            return cmd_degrade(out_dir, seed, per_category, clean_dir, dur_lo, dur_hi,
                               threads);
        }
        if (tr->parsed()) {
            if (out_dir.empty()) throw ConfigError("train requires --out-dir");
            return cmd_train(tr_manifest, out_dir, seed, tf);
        }
        if (en->parsed())
            return cmd_enhance(en_ckpt, en_in, en_out, en_manifest, out_dir, en_split, seed,
                               sf_en, en_cond, en_raw, en_threads);
        if (ev->parsed()) {
            if (out_dir.empty()) throw ConfigError("eval requires --out-dir");
            return cmd_eval(ev_manifest, ev_dir, out_dir, ev_split, ev_threads);
        }
        if (ab->parsed()) {
            if (out_dir.empty()) throw ConfigError("ablate requires --out-dir");
            return cmd_ablate(ab_manifest, out_dir, seed, ab_variants, ab_seeds, tf_ab,
                              sf_ab, ab_threads);
        }
        if (hr->parsed()) {
            if (out_dir.empty()) throw ConfigError("head-report requires --out-dir");
            return cmd_head_report(hr_ckpt, hr_manifest, out_dir, hr_split, hr_raw);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
