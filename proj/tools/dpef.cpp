// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

// dpef command line: train, eval, augment, visualize-selection, ablate.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dpef/dpef.hpp"

namespace fs = std::filesystem;
using namespace dpef;

namespace {

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides,
                         std::optional<std::uint64_t> seed) {
    RunConfig cfg = path.empty() ? RunConfig::toy() : load_config(path);
    for (const auto& o : overrides) cfg = apply_override(cfg, o);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::vector<fs::path> png_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
        if (e.is_regular_file() && ext == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// "synthetic:<count>" or a directory of RGBA PNGs.
std::vector<MaskEntry> resolve_mask_bank(const std::string& source, std::uint64_t seed) {
    const std::string prefix = "synthetic";
    if (source.rfind(prefix, 0) == 0) {
        std::size_t count = 200;
        if (source.size() > prefix.size()) {
            if (source[prefix.size()] != ':') throw ConfigError("mask bank must be a directory or synthetic:<count>");
            count = std::stoul(source.substr(prefix.size() + 1));
        }
        return synth_masks(seed ^ 0xB4A5CULL, count);
    }
    return load_mask_bank(source);
}

void print_metrics(const RunOutcome& r) {
    std::printf("Rank-1 %.4f  Rank-5 %.4f  Rank-10 %.4f  mAP %.4f  (%zu queries, %zu skipped)\n", r.metrics.rank(1),
                r.metrics.rank(5), r.metrics.rank(10), r.metrics.map, r.metrics.evaluated, r.metrics.skipped);
    if (r.selection) {
        std::printf("selection precision %.4f vs random %.4f  (mean k %.1f over %zu images)\n", r.selection->precision,
                    r.selection->random_precision, r.selection->mean_k, r.selection->images);
    }
}

fs::path config_beside(const std::string& checkpoint, const std::string& config) {
    if (!config.empty()) return config;
    const auto guess = fs::path(checkpoint).parent_path() / "config.json";
    if (!fs::exists(guess)) throw ConfigError("no --config given and no config.json next to " + checkpoint);
    return guess;
}

int cmd_train(const std::string& config, const std::string& out_dir, std::optional<std::uint64_t> seed,
              const std::vector<std::string>& overrides) {
    const auto cfg = resolve_config(config, overrides, seed);
    const fs::path out(out_dir);
    fs::create_directories(out);
    write_json(out / "config.json", nlohmann::json(cfg));

    const auto data = load_dataset(cfg);
    std::vector<MaskEntry> masks;
    if (cfg.train.augmentation == Augmentation::roa || cfg.train.augmentation == Augmentation::cut_paste) {
        masks = make_mask_bank(cfg);
    }
    Trainer trainer(cfg, data, std::move(masks));
    LossLog log(out / "loss.csv");
    std::printf("%zu train / %zu query / %zu gallery images, %zu identities, %zu steps\n", data.train.size(),
                data.query.size(), data.gallery.size(), data.num_ids, trainer.total_steps());
    try {
        trainer.run([&](const StepReport& r) {
            log.write(r);
            if ((r.step + 1) % trainer.steps_per_epoch() == 0) {
                std::printf("epoch %3zu  lr %.2e  L_con %.4f  L_cls %.4f  L %.4f\n", r.epoch + 1, r.lr, r.loss.l_con,
                            r.loss.l_cls, r.loss.l_total);
                std::fflush(stdout);
            }
        });
    } catch (const NonFiniteError& e) {
        trainer.save(out / "nonfinite_dump.ckpt");
        std::fprintf(stderr, "error: %s; state dumped to %s\n", e.what(), (out / "nonfinite_dump.ckpt").c_str());
        return 3;
    }
    trainer.save(out / "model.ckpt");
    const auto report = assess(trainer.model(), data, cfg.seed);
    write_json(out / "metrics.json", to_json_report(report));
    print_metrics(report);
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config, bool pre_dpsm, const std::string& out) {
    auto cfg = load_config(config_beside(checkpoint, config).string());
    if (pre_dpsm) cfg.eval.use_pre_dpsm_features = true;
    const auto model = model_from_checkpoint(cfg, read_checkpoint(checkpoint));
    const auto report = assess(model, load_dataset(cfg), cfg.seed);
    print_metrics(report);
    if (!out.empty()) write_json(out, to_json_report(report));
    return 0;
}

int cmd_augment(const std::string& in, const std::string& bank_spec, const std::string& out_dir, std::uint64_t seed,
                const std::string& method, bool preview) {
    const auto files = png_files(in);
    std::vector<MaskEntry> bank;
    if (method != "re") bank = resolve_mask_bank(bank_spec, seed);
    fs::create_directories(out_dir);
    const RoaParams params;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const Image src = read_png(files[i]).rgb;
        Rng rng = make_rng(seed, {0xA06, i});
        Image dst;
        if (method == "roa") {
            dst = roa(src, bank, params, rng).image;
        } else if (method == "cutpaste") {
            dst = cut_paste(src, bank, params, rng).image;
        } else {
            RandomEraseParams re;
            re.probability = 1.0;
            dst = random_erase(src, rng, re).image;
        }
        const auto stem = files[i].stem().string();
        write_png(fs::path(out_dir) / (stem + ".png"), dst);
        if (preview) write_png(fs::path(out_dir) / (stem + "_preview.png"), hstack({src, dst}));
    }
    std::printf("%zu images written to %s\n", files.size(), out_dir.c_str());
    return 0;
}

int cmd_visualize(const std::string& checkpoint, const std::string& config, const std::string& images,
                  const std::string& out_dir) {
    const auto cfg = load_config(config_beside(checkpoint, config).string());
    const auto model = model_from_checkpoint(cfg, read_checkpoint(checkpoint));
    fs::create_directories(out_dir);
    Tape<float>::Pause no_record;
    for (const auto& f : png_files(images)) {
        Image img = read_png(f).rgb;
        if (img.height != cfg.encoder.image_h || img.width != cfg.encoder.image_w) {
            img = resize_bilinear(img, cfg.encoder.image_h, cfg.encoder.image_w);
        }
        const auto sel = model.forward(img).selection;
        const auto overlay = render_selection(img, sel.selected, cfg.encoder.patch);
        write_png(fs::path(out_dir) / (f.stem().string() + "_selection.png"), hstack({img, overlay}));
        std::printf("%s  k=%zu of %zu  proxy=%zu\n", f.filename().c_str(), sel.k, cfg.encoder.num_patches(),
                    sel.proxy_index);
    }
    return 0;
}

struct Summary {
    double mean = 0, sd = 0;
};

Summary summarize(const std::vector<double>& v) {
    Summary s;
    for (double x : v) s.mean += x;
    s.mean /= double(v.size());
    for (double x : v) s.sd += (x - s.mean) * (x - s.mean);
    s.sd = v.size() > 1 ? std::sqrt(s.sd / double(v.size() - 1)) : 0.0;
    return s;
}

int cmd_ablate(const std::string& configs, std::size_t seeds, const std::vector<std::string>& overrides,
               const std::string& out) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(configs))
        if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("no *.json configs in " + configs);

    std::string table = "| config | Rank-1 | mAP | selection precision | random precision | mean k |\n"
                        "|---|---|---|---|---|---|\n";
    for (const auto& f : files) {
        std::vector<double> r1, map, prec, rnd, k;
        for (std::size_t s = 0; s < seeds; ++s) {
            const auto cfg = resolve_config(f.string(), overrides, s);
            const auto r = run_experiment(cfg);
            std::fprintf(stderr, "%s seed %zu: Rank-1 %.4f mAP %.4f (%.0f s)\n", f.stem().c_str(), s, r.metrics.rank(1),
                         r.metrics.map, r.seconds);
            r1.push_back(r.metrics.rank(1));
            map.push_back(r.metrics.map);
            if (r.selection) {
                prec.push_back(r.selection->precision);
                rnd.push_back(r.selection->random_precision);
                k.push_back(r.selection->mean_k);
            }
        }
        auto cell = [](const std::vector<double>& v) {
            if (v.empty()) return std::string("-");
            const auto s = summarize(v);
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.3f ± %.3f", s.mean, s.sd);
            return std::string(buf);
        };
        char kbuf[32];
        std::snprintf(kbuf, sizeof kbuf, "%.1f", k.empty() ? 0.0 : summarize(k).mean);
        table += "| " + f.stem().string() + " | " + cell(r1) + " | " + cell(map) + " | " + cell(prec) + " | " +
                 cell(rnd) + " | " + (k.empty() ? "-" : kbuf) + " |\n";
    }
    std::cout << table;
    if (!out.empty()) std::ofstream(out) << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Occluded person re-identification with dynamic patch selection"};
    app.require_subcommand(1);

    std::string config, out, checkpoint, images, in, bank = "synthetic:200", method = "roa", configs, table_out;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::uint64_t aug_seed = 0;
    std::size_t seeds = 3;
    bool pre_dpsm = false, preview = false;

    auto* train = app.add_subcommand("train", "Train a model and evaluate it");
    train->add_option("--config", config, "JSON config (defaults to the toy setup)")->check(CLI::ExistingFile);
    train->add_option("--out", out, "Output directory")->required();
    train->add_option("--seed", seed, "Overrides the config seed");
    train->add_option("--set", overrides, "Override a field, e.g. train.epochs=10");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--config", config, "JSON config (defaults to config.json beside the checkpoint)");
    eval->add_flag("--pre-dpsm", pre_dpsm, "Use features pooled before token selection");
    eval->add_option("--out", out, "Write metrics JSON here");

    auto* augment = app.add_subcommand("augment", "Apply occlusion augmentation to a folder of PNGs");
    augment->add_option("--in", in, "Input directory")->required();
    augment->add_option("--mask-bank", bank, "Directory of RGBA PNGs or synthetic:<count>");
    augment->add_option("--out", out, "Output directory")->required();
    augment->add_option("--seed", aug_seed, "Random seed");
    augment->add_option("--method", method, "roa, re or cutpaste")
        ->check(CLI::IsMember({"roa", "re", "cutpaste"}));
    augment->add_flag("--preview", preview, "Also write side-by-side before/after images");

    auto* vis = app.add_subcommand("visualize-selection", "Overlay selected patch tokens on images");
    vis->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    vis->add_option("--config", config, "JSON config (defaults to config.json beside the checkpoint)");
    vis->add_option("--images", images, "Directory of PNGs")->required();
    vis->add_option("--out", out, "Output directory")->required();

    auto* ablate = app.add_subcommand("ablate", "Train every config in a directory over several seeds");
    ablate->add_option("--configs", configs, "Directory of JSON configs")->required()->check(CLI::ExistingDirectory);
    ablate->add_option("--seeds", seeds, "Seeds per config")->check(CLI::PositiveNumber);
    ablate->add_option("--set", overrides, "Override a field in every config");
    ablate->add_option("--out", table_out, "Also write the markdown table here");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train) return cmd_train(config, out, seed, overrides);
        if (*eval) return cmd_eval(checkpoint, config, pre_dpsm, out);
        if (*augment) return cmd_augment(in, bank, out, aug_seed, method, preview);
        if (*vis) return cmd_visualize(checkpoint, config, images, out);
        if (*ablate) return cmd_ablate(configs, seeds, overrides, table_out);
    } catch (const dpef::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
