// Command-line front end: data generation, training, evaluation, decoding,
// attention-mask ablation and the gradient checker.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "g2l/data.hpp"
#include "g2l/errors.hpp"
#include "g2l/model.hpp"
#include "g2l/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct FileConfig {
    g2l::ModelConfig model = g2l::ModelConfig::desk_defaults();
    g2l::TrainConfig train;
    g2l::DatasetSpec data;
};

FileConfig load_config(const std::string& path) {
    FileConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream is(path);
    if (!is) throw g2l::ConfigError("config file not found: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw g2l::ParseError("bad config file " + path + ": " + e.what());
    }
    if (j.contains("model")) from_json(j.at("model"), cfg.model);
    if (j.contains("train")) from_json(j.at("train"), cfg.train);
    if (j.contains("data")) {
        const auto& d = j.at("data");
        auto& s = cfg.data;
        s.n_samples = d.value("n_samples", s.n_samples);
        s.frames = d.value("frames", s.frames);
        s.frame_dim = d.value("frame_dim", s.frame_dim);
        s.clip_dim = d.value("clip_dim", s.clip_dim);
        s.region_dim = d.value("region_dim", s.region_dim);
        s.regions_per_frame = d.value("regions_per_frame", s.regions_per_frame);
        s.sparse_stride = d.value("sparse_stride", s.sparse_stride);
        s.n_subjects = d.value("n_subjects", s.n_subjects);
        s.n_actions = d.value("n_actions", s.n_actions);
        s.n_objects = d.value("n_objects", s.n_objects);
        s.n_distractors = d.value("n_distractors", s.n_distractors);
        s.noise_std = d.value("noise_std", s.noise_std);
        s.n_signal_frames = d.value("n_signal_frames", s.n_signal_frames);
        s.seed = d.value("seed", s.seed);
        s.train_ratio = d.value("train_ratio", s.train_ratio);
        s.val_ratio = d.value("val_ratio", s.val_ratio);
        s.test_ratio = d.value("test_ratio", s.test_ratio);
    }
    return cfg;
}

// Accepts canonical names plus the keyframe presets g2l_1f / g2l_2f / g2l_3f.
void apply_variant(g2l::ModelConfig& cfg, const std::string& name) {
    if (name.size() == 6 && name.rfind("g2l_", 0) == 0 && name.back() == 'f' &&
        name[4] >= '1' && name[4] <= '9') {
        cfg.variant = g2l::Variant::G2L;
        cfg.sampler.top_k = name[4] - '0';
        return;
    }
    cfg.variant = g2l::variant_from_name(name);
}

std::string caption_text(const g2l::Vocabulary& vocab, const std::vector<int>& tokens) {
    std::string out;
    for (int t : tokens) {
        if (!out.empty()) out += " ";
        out += (t >= 0 && t < vocab.size()) ? vocab.tokens[static_cast<size_t>(t)] : "<bad>";
    }
    return out;
}

std::vector<int> strip_reserved(const std::vector<int>& caption) {
    std::vector<int> out;
    for (int t : caption)
        if (t != g2l::Vocabulary::kBos && t != g2l::Vocabulary::kEos && t != g2l::Vocabulary::kPad)
            out.push_back(t);
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"global-to-local attention captioner on synthetic sequences"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_path, vocab_path, checkpoint_path, variant, module;
    uint64_t seed = 0;
    bool seed_set = false;
    int workers = 1, epochs = 0, n_print = 5, beam = 0;
    std::string ratios_arg = "0,0.25,0.5,0.75,1.0";

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "random seed")->each([&](const std::string&) {
            seed_set = true;
        });
    };

    auto* gen = app.add_subcommand("generate-data", "write train/val/test files and a vocabulary");
    gen->add_option("--config", config_path, "JSON config file");
    gen->add_option("--out", out_dir, "output directory")->required();
    add_seed(gen);
    int gen_samples = 0;
    gen->add_option("--samples", gen_samples, "total sample count");

    auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
    tr->add_option("--config", config_path, "JSON config file");
    tr->add_option("--data", data_path, "dataset directory from generate-data")->required();
    tr->add_option("--out", out_dir, "output directory for checkpoint/logs")->required();
    tr->add_option("--variant", variant, "global_base | global_aligned | g2l_[123]f | g2l_no_gumbel");
    tr->add_option("--workers", workers, "worker threads");
    tr->add_option("--epochs", epochs, "override epoch count");
    add_seed(tr);

    auto* ev = app.add_subcommand("eval", "print a metric report for a checkpoint");
    ev->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    ev->add_option("--data", data_path, "dataset file (.g2ld)")->required();
    ev->add_option("--beam", beam, "beam width override");

    auto* sa = app.add_subcommand("sample", "print decoded captions next to references");
    sa->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    sa->add_option("--data", data_path, "dataset file (.g2ld)")->required();
    sa->add_option("--vocab", vocab_path, "vocabulary JSON")->required();
    sa->add_option("-n", n_print, "number of samples to print");

    auto* ab = app.add_subcommand("ablate-mask", "attention mask ablation curve");
    ab->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    ab->add_option("--data", data_path, "dataset file (.g2ld)")->required();
    ab->add_option("--module", module, "2d | 3d | al | local")->required();
    ab->add_option("--ratios", ratios_arg, "comma-separated mask ratios");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference suite on the micro config");
    add_seed(gc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (gen->parsed()) {
        FileConfig cfg = load_config(config_path);
        if (seed_set) cfg.data.seed = seed;
        if (gen_samples > 0) cfg.data.n_samples = gen_samples;
        cfg.data.validate();
        fs::create_directories(out_dir);
        auto all = g2l::generate_dataset(cfg.data);
        g2l::Dataset train, val, test;
        g2l::split_dataset(all, train, val, test);
        g2l::save_dataset(out_dir + "/train.g2ld", train);
        g2l::save_dataset(out_dir + "/val.g2ld", val);
        g2l::save_dataset(out_dir + "/test.g2ld", test);
        g2l::build_vocabulary(cfg.data).save(out_dir + "/vocab.json");
        std::cout << "wrote " << train.samples.size() << "/" << val.samples.size() << "/"
                  << test.samples.size() << " samples to " << out_dir << "\n";
        return 0;
    }

    if (tr->parsed()) {
        FileConfig cfg = load_config(config_path);
        std::string train_file = data_path + "/train.g2ld";
        std::string val_file = data_path + "/val.g2ld";
        std::string vocab_file = data_path + "/vocab.json";
        for (const auto& f : {train_file, val_file, vocab_file})
            if (!fs::exists(f)) throw g2l::ConfigError("missing dataset file: " + f);
        auto train_data = g2l::load_dataset(train_file);
        auto val_data = g2l::load_dataset(val_file);
        auto vocab = g2l::Vocabulary::load(vocab_file);

        cfg.model.adopt(train_data.spec, vocab);
        if (!variant.empty()) apply_variant(cfg.model, variant);
        if (seed_set) cfg.train.seed = seed;
        if (epochs > 0) cfg.train.epochs = epochs;
        cfg.train.workers = workers;
        cfg.model.validate();
        cfg.train.validate();

        fs::create_directories(out_dir);
        std::ofstream log(out_dir + "/log.jsonl");
        auto result = g2l::train(cfg.model, cfg.train, train_data, val_data, &log,
                                 out_dir + "/best.g2lc");
        json report = result.final_report;
        report["best_epoch"] = result.best_epoch;
        report["parameters"] = result.params.total_parameters();
        std::ofstream(out_dir + "/report.json") << report.dump(2) << "\n";
        std::cout << report.dump(2) << "\n";
        return 0;
    }

    if (ev->parsed() || sa->parsed() || ab->parsed()) {
        if (!fs::exists(checkpoint_path))
            throw g2l::ConfigError("missing checkpoint: " + checkpoint_path);
        if (!fs::exists(data_path)) throw g2l::ConfigError("missing dataset file: " + data_path);
        auto [cfg, params] = g2l::load_checkpoint(checkpoint_path);
        auto data = g2l::load_dataset(data_path);

        if (ev->parsed()) {
            auto report = g2l::evaluate(params, cfg, data, beam);
            json j = report;
            std::cout << j.dump(2) << "\n";
            return 0;
        }
        if (sa->parsed()) {
            auto vocab = g2l::Vocabulary::load(vocab_path);
            int count = std::min<int>(n_print, static_cast<int>(data.samples.size()));
            for (int i = 0; i < count; ++i) {
                const auto& s = data.samples[static_cast<size_t>(i)];
                auto decoded = g2l::beam_search(params, cfg, s, cfg.beam_width, cfg.max_decode_len);
                std::cout << "ref: " << caption_text(vocab, strip_reserved(s.caption)) << "\n"
                          << "out: " << caption_text(vocab, decoded) << "\n\n";
            }
            return 0;
        }
        std::vector<double> ratios;
        std::stringstream ss(ratios_arg);
        std::string item;
        while (std::getline(ss, item, ',')) ratios.push_back(std::stod(item));
        auto curve = g2l::mask_ablation(params, cfg, data, g2l::att_module_from_name(module), ratios);
        json j = json::array();
        for (auto [r, rel] : curve) j.push_back({{"ratio", r}, {"relative_bleu4", rel}});
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (gc->parsed()) {
        auto res = g2l::run_gradient_suite(seed_set ? seed : 42);
        std::cout << "max relative error: " << res.max_rel_err << " (" << res.seconds << " s)\n";
        for (const auto& [name, err] : res.group_errors)
            if (err > 1e-5) std::cout << "  " << name << ": " << err << "\n";
        return res.max_rel_err < 1e-4 ? 0 : 1;
    }
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const g2l::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const g2l::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
