#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "capbias/dataset.hpp"
#include "capbias/metrics.hpp"
#include "capbias/saliency.hpp"
#include "capbias/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace capbias;

namespace {

constexpr const char* kToolVersion = "0.1.0";

uint64_t file_fnv(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string bytes = ss.str();
    return fnv1a64(bytes.data(), bytes.size());
}

// <out>/manifest.json holds the latest run per command
void update_manifest(const fs::path& out_root, const std::string& command, json run) {
    json manifest;
    fs::path path = out_root / "manifest.json";
    if (fs::exists(path)) {
        std::ifstream f(path);
        try {
            f >> manifest;
        } catch (...) {
            manifest = json::object();
        }
    }
    if (!manifest.contains("runs")) manifest["runs"] = json::object();
    run["command"] = command;
    run["tool_version"] = kToolVersion;
    manifest["runs"][command] = std::move(run);
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << manifest.dump(2) << "\n";
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
};

Split split_from_flag(const std::string& s) {
    if (s == "bias") return Split::TestBias;
    if (s == "balanced") return Split::TestBalanced;
    if (s == "train") return Split::Train;
    throw InvalidInput("unknown split flag '" + s + "'");
}

int run_gen_data(const std::string& out, uint64_t seed, int n, double woman_fraction,
                 double occlusion_prob, double mention_prob, bool multiword, double glyph_contrast,
                 double pixel_noise, int balanced_per_gender, int test_bias_n, int train_n,
                 bool include_discards) {
    Timer timer;
    BiasConfig config;
    config.seed = seed;
    config.woman_fraction = woman_fraction;
    config.evidence_occlusion_prob = occlusion_prob;
    config.annotator_mention_prob = mention_prob;
    config.multiword_gender_sets = multiword;
    config.glyph_contrast = glyph_contrast;
    config.pixel_noise = pixel_noise;
    config.validate();

    Corpus corpus = generate_corpus(config, n);
    SplitSpec spec;
    spec.balanced_per_gender = balanced_per_gender;
    spec.test_bias_size = test_bias_n;
    spec.train_size = train_n;
    spec.include_discards = include_discards;
    Rng split_rng(seed ^ 0x5eedf00dabcd1234ull);
    make_splits(corpus, spec, split_rng);
    if (!include_discards) {
        std::vector<SceneRecord> kept;
        for (auto& rec : corpus.records)
            if (rec.split != Split::Discard) kept.push_back(std::move(rec));
        corpus.records = std::move(kept);
    }

    fs::path data_dir = fs::path(out) / "data";
    fs::create_directories(data_dir);
    save_dataset(corpus, data_dir.string());
    uint64_t checksum = dataset_checksum(data_dir.string());

    std::map<std::string, long> split_counts;
    for (const auto& rec : corpus.records) ++split_counts[to_string(rec.split)];

    json run{{"config_hash", to_hex(fnv1a64(config.serialize()))},
             {"dataset_checksum", to_hex(checksum)},
             {"outputs", {"data"}},
             {"n_records", corpus.records.size()},
             {"split_counts", split_counts},
             {"wall_clock_ms", timer.ms()}};
    update_manifest(out, "gen-data", std::move(run));
    std::cout << "dataset " << data_dir.string() << "\nchecksum " << to_hex(checksum) << "\n";
    for (const auto& [name, count] : split_counts) std::cout << name << " " << count << "\n";
    return 0;
}

ExperimentConfig build_config(CLI::App* cmd, const std::string& config_file, const std::string& variant,
                              uint64_t seed, int iters, int warmup, double lr, double clip_norm,
                              int batch, double alpha, double beta, double mu, double upweight_factor,
                              const std::string& masked_pass, const std::string& data,
                              const std::string& dataset_checksum) {
    ExperimentConfig cfg;
    if (!config_file.empty()) {
        std::ifstream f(config_file);
        if (!f) throw IoError("cannot read config file " + config_file);
        std::stringstream ss;
        ss << f.rdbuf();
        cfg = ExperimentConfig::deserialize(ss.str());
    }
    // flags override config-file values
    auto passed = [cmd](const std::string& name) {
        const CLI::Option* opt = cmd->get_option_no_throw(name);
        return opt != nullptr && opt->count() > 0;
    };
    if (passed("--variant")) cfg.variant = variant_from_string(variant);
    if (passed("--seed")) cfg.seed = seed;
    if (passed("--iters")) cfg.opt.iterations = iters;
    if (passed("--warmup")) cfg.opt.warmup_iterations = warmup;
    if (passed("--clip")) cfg.opt.clip_norm = clip_norm;
    if (passed("--lr")) cfg.opt.learning_rate = lr;
    if (passed("--batch")) cfg.opt.batch_size = batch;
    if (passed("--alpha")) cfg.weights.alpha = alpha;
    if (passed("--beta")) cfg.weights.beta = beta;
    if (passed("--mu")) cfg.weights.mu = mu;
    if (passed("--upweight-factor")) cfg.weights.upweight_factor = upweight_factor;
    if (passed("--masked-pass")) {
        if (masked_pass == "auto")
            cfg.masked_pass.reset();
        else
            cfg.masked_pass = masked_pass == "on";
    }
    if (passed("--data")) cfg.dataset_path = data;
    if (passed("--dataset-checksum")) cfg.expected_dataset_checksum = dataset_checksum;
    if (cfg.dataset_path.empty()) throw InvalidInput("--data (or dataset_path in the config) is required");
    return cfg;
}

// returns the verified checksum hex
std::string verify_dataset_checksum(const ExperimentConfig& cfg) {
    uint64_t actual = dataset_checksum(cfg.dataset_path);
    std::string hex = to_hex(actual);
    if (!cfg.expected_dataset_checksum.empty() && cfg.expected_dataset_checksum != hex)
        throw InvalidInput("dataset checksum mismatch: expected " + cfg.expected_dataset_checksum +
                           ", found " + hex + "; refusing to run");
    return hex;
}

int run_train(ExperimentConfig cfg, const std::string& out) {
    Timer timer;
    std::string checksum_hex = verify_dataset_checksum(cfg);
    Corpus corpus = load_dataset(cfg.dataset_path);

    fs::path ckpt_dir = fs::path(out) / "checkpoints";
    fs::create_directories(ckpt_dir);
    cfg.normalize();
    std::string name = to_string(cfg.variant);
    cfg.checkpoint_path = (ckpt_dir / (name + ".ckpt")).string();
    cfg.log_path = (ckpt_dir / (name + ".log.jsonl")).string();

    TrainResult result = train(corpus, cfg);
    json run{{"config_hash", to_hex(cfg.config_hash())},
             {"dataset_checksum", checksum_hex},
             {"checkpoints", {{name, to_hex(file_fnv(cfg.checkpoint_path))}}},
             {"outputs", {"checkpoints/" + name + ".ckpt", "checkpoints/" + name + ".log.jsonl"}},
             {"wall_clock_ms", timer.ms()}};
    update_manifest(out, "train", std::move(run));

    if (result.diverged) {
        std::cerr << "training diverged; last finite checkpoint retained at " << cfg.checkpoint_path << "\n";
        return 1;
    }
    const auto& last = result.log.back();
    std::cout << name << " done: total " << last.bundle.total << ", ce/token " << last.ce_per_token
              << ", checkpoint " << cfg.checkpoint_path << "\n";
    return 0;
}

int run_suite_cmd(ExperimentConfig base, const std::string& out) {
    Timer timer;
    std::string checksum_hex = verify_dataset_checksum(base);
    Corpus corpus = load_dataset(base.dataset_path);

    fs::path ckpt_dir = fs::path(out) / "checkpoints";
    fs::create_directories(ckpt_dir);
    SuiteResult suite = run_suite(corpus, base, ckpt_dir.string(), ckpt_dir.string());

    json checkpoints = json::object();
    json outputs = json::array();
    for (const auto& [variant, path] : suite.checkpoints) {
        checkpoints[to_string(variant)] = to_hex(file_fnv(path));
        outputs.push_back("checkpoints/" + to_string(variant) + ".ckpt");
        outputs.push_back("checkpoints/" + to_string(variant) + ".jsonl");
    }
    json failures = json::object();
    for (const auto& [variant, msg] : suite.failures) failures[to_string(variant)] = msg;
    json run{{"config_hash", to_hex(base.config_hash())},
             {"dataset_checksum", checksum_hex},
             {"checkpoints", checkpoints},
             {"failures", failures},
             {"outputs", outputs},
             {"wall_clock_ms", timer.ms()}};
    update_manifest(out, "suite", std::move(run));

    for (const auto& [variant, result] : suite.results)
        std::cout << to_string(variant) << ": final total "
                  << (result.log.empty() ? 0.0 : result.log.back().bundle.total)
                  << (result.diverged ? " (diverged)" : "") << "\n";
    for (const auto& [variant, msg] : suite.failures)
        std::cerr << to_string(variant) << " failed: " << msg << "\n";
    return suite.failures.empty() ? 0 : 1;
}

void write_csv(const fs::path& path, const std::vector<std::vector<std::string>>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) f << ",";
            f << row[i];
        }
        f << "\n";
    }
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(6);
    ss << v;
    return ss.str();
}

int run_eval(const std::string& data, const std::string& out, const std::string& split_flag,
             const std::vector<std::string>& variant_names, bool with_pointing) {
    Timer timer;
    Corpus corpus = load_dataset(data);
    std::string checksum_hex = to_hex(dataset_checksum(data));
    fs::path ckpt_dir = fs::path(out) / "checkpoints";
    fs::path reports_dir = fs::path(out) / "reports";
    fs::create_directories(reports_dir);

    std::vector<std::string> names = variant_names;
    if (names.empty())
        for (Variant v : all_variants()) names.push_back(to_string(v));
    std::vector<Split> splits;
    if (split_flag == "both")
        splits = {Split::TestBias, Split::TestBalanced};
    else
        splits = {split_from_flag(split_flag)};

    json eval_cfg{{"split", split_flag}, {"variants", names}, {"pointing", with_pointing}};
    std::string config_hash = to_hex(fnv1a64(eval_cfg.dump()));

    std::vector<std::string> missing;
    json outputs = json::array();
    std::map<std::string, std::map<std::string, MetricsReport>> all_reports;  // variant -> split -> report

    for (const auto& name : names) {
        fs::path ckpt = ckpt_dir / (name + ".ckpt");
        if (!fs::exists(ckpt)) {
            missing.push_back(name);
            std::cerr << "missing checkpoint: " << ckpt.string() << "\n";
            continue;
        }
        ModelParams params = load_checkpoint(ckpt.string(), corpus.vocab.hash());
        std::string ckpt_id = to_hex(file_fnv(ckpt));
        for (Split split : splits) {
            MetricsReport report = evaluate_model(params, corpus, split);
            report.variant = name;
            report.dataset_checksum = checksum_hex;
            report.checkpoint_id = ckpt_id;
            report.config_hash = config_hash;
            if (with_pointing) {
                auto records = corpus.split_records(split);
                for (SaliencyMethod method : {SaliencyMethod::GradCam, SaliencyMethod::Occlusion}) {
                    PointingSuiteResult pr = pointing_suite(params, records, corpus.vocab, method);
                    report.pointing[to_string(method)] = {
                        {"woman", pr.woman.accuracy()}, {"man", pr.man.accuracy()},
                        {"all", pr.all.accuracy()},     {"hits", static_cast<double>(pr.all.hits)},
                        {"misses", static_cast<double>(pr.all.misses)}};
                }
            }
            std::string file = name + "_" + to_string(split) + ".json";
            std::ofstream f(reports_dir / file);
            f << report.serialize() << "\n";
            outputs.push_back("reports/" + file);
            all_reports[name][to_string(split)] = std::move(report);
        }
    }

    for (Split split : splits) {
        std::string sname = to_string(split);
        std::vector<std::vector<std::string>> t1{{"variant", "error", "ratio_delta"}};
        std::vector<std::vector<std::string>> t2{{"variant", "woman_correct", "woman_incorrect",
                                                  "woman_other", "man_correct", "man_incorrect",
                                                  "man_other", "outcome_divergence"}};
        std::vector<std::vector<std::string>> t3{{"variant", "method", "woman", "man", "all"}};
        std::vector<std::vector<std::string>> cmp{{"variant", "error", "ratio_delta", "outcome_divergence",
                                                   "masked_ratio", "pointing_gradcam", "pointing_occlusion"}};
        for (const auto& name : names) {
            auto it = all_reports.find(name);
            if (it == all_reports.end() || !it->second.count(sname)) continue;
            const MetricsReport& r = it->second.at(sname);
            t1.push_back({name, fmt(r.error), r.ratio.defined ? fmt(r.ratio.value) : "undefined"});
            t2.push_back({name, fmt(r.outcome.woman.correct), fmt(r.outcome.woman.incorrect),
                          fmt(r.outcome.woman.other), fmt(r.outcome.man.correct),
                          fmt(r.outcome.man.incorrect), fmt(r.outcome.man.other), fmt(r.divergence)});
            for (const auto& [method, row] : r.pointing)
                t3.push_back({name, method, fmt(row.at("woman")), fmt(row.at("man")), fmt(row.at("all"))});
            cmp.push_back({name, fmt(r.error), r.ratio.defined ? fmt(r.ratio.value) : "undefined",
                           fmt(r.divergence), r.masked.defined ? fmt(r.masked.value) : "undefined",
                           r.pointing.count("gradcam") ? fmt(r.pointing.at("gradcam").at("all")) : "",
                           r.pointing.count("occlusion") ? fmt(r.pointing.at("occlusion").at("all")) : ""});
        }
        write_csv(reports_dir / ("table1_" + sname + ".csv"), t1);
        write_csv(reports_dir / ("table2_" + sname + ".csv"), t2);
        write_csv(reports_dir / ("table3_" + sname + ".csv"), t3);
        write_csv(reports_dir / ("comparison_" + sname + ".csv"), cmp);
        for (const char* base : {"table1_", "table2_", "table3_", "comparison_"})
            outputs.push_back("reports/" + std::string(base) + sname + ".csv");
    }

    json run{{"config_hash", config_hash},
             {"dataset_checksum", checksum_hex},
             {"missing_checkpoints", missing},
             {"outputs", outputs},
             {"wall_clock_ms", timer.ms()}};
    update_manifest(out, "eval", std::move(run));
    return missing.empty() ? 0 : 1;
}

int run_saliency(const std::string& data, const std::string& out, const std::string& method_str,
                 const std::string& variant_name, int record_id, bool all_gendered,
                 const std::string& split_flag) {
    Timer timer;
    SaliencyMethod method = saliency_method_from_string(method_str);
    Corpus corpus = load_dataset(data);
    fs::path ckpt = fs::path(out) / "checkpoints" / (variant_name + ".ckpt");
    if (!fs::exists(ckpt)) throw IoError("missing checkpoint: " + ckpt.string());
    ModelParams params = load_checkpoint(ckpt.string(), corpus.vocab.hash());

    fs::path heatmaps_dir = fs::path(out) / "heatmaps";
    fs::path reports_dir = fs::path(out) / "reports";
    json outputs = json::array();

    if (!all_gendered) {
        const SceneRecord* rec = nullptr;
        for (const auto& r : corpus.records)
            if (r.id == record_id) rec = &r;
        if (!rec) throw InvalidInput("record id not found: " + std::to_string(record_id));
        const std::vector<int>* caption = nullptr;
        int position = 0;
        for (const auto& cap : rec->captions) {
            for (size_t i = 1; i < cap.size() && !caption; ++i)
                if (corpus.vocab.is_gendered(cap[i])) {
                    caption = &cap;
                    position = static_cast<int>(i);
                }
            if (caption) break;
        }
        if (!caption) throw InvalidInput("record " + std::to_string(record_id) + " has no gendered caption");
        ImageF img = rec->image.to_float();
        SaliencyMap map = method == SaliencyMethod::Occlusion
                              ? occlusion_saliency(params, img, *caption, position, corpus.vocab)
                              : grad_cam(params, img, *caption, position, corpus.vocab);
        fs::create_directories(heatmaps_dir);
        std::string stem = variant_name + "_" + method_str + "_" + std::to_string(record_id);
        write_heatmap_overlay((heatmaps_dir / (stem + ".png")).string(), rec->image, map);
        write_grid_csv((heatmaps_dir / (stem + ".csv")).string(), map);
        outputs.push_back("heatmaps/" + stem + ".png");
        outputs.push_back("heatmaps/" + stem + ".csv");
        std::cout << "wrote " << (heatmaps_dir / (stem + ".png")).string() << "\n";
    } else {
        Split split = split_from_flag(split_flag);
        auto records = corpus.split_records(split);
        PointingSuiteResult pr = pointing_suite(params, records, corpus.vocab, method);
        fs::create_directories(reports_dir);
        std::string file = "pointing_" + variant_name + "_" + method_str + "_" + to_string(split) + ".csv";
        write_csv(reports_dir / file,
                  {{"gender", "hits", "misses", "accuracy"},
                   {"woman", std::to_string(pr.woman.hits), std::to_string(pr.woman.misses), fmt(pr.woman.accuracy())},
                   {"man", std::to_string(pr.man.hits), std::to_string(pr.man.misses), fmt(pr.man.accuracy())},
                   {"all", std::to_string(pr.all.hits), std::to_string(pr.all.misses), fmt(pr.all.accuracy())}});
        outputs.push_back("reports/" + file);
        std::cout << "pointing " << variant_name << " " << method_str << " all " << fmt(pr.all.accuracy())
                  << " (woman " << fmt(pr.woman.accuracy()) << ", man " << fmt(pr.man.accuracy()) << ")\n";
    }

    json cfg{{"method", method_str}, {"variant", variant_name}, {"record", record_id},
             {"all_gendered", all_gendered}, {"split", split_flag}};
    json run{{"config_hash", to_hex(fnv1a64(cfg.dump()))},
             {"dataset_checksum", to_hex(dataset_checksum(data))},
             {"outputs", outputs},
             {"wall_clock_ms", timer.ms()}};
    update_manifest(out, "saliency", std::move(run));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic captioning bias laboratory"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic biased caption dataset");
    std::string gen_out;
    uint64_t gen_seed = 0;
    int gen_n = 0;
    double woman_fraction = 0.25, occlusion_prob = 0.10, mention_prob = 0.90;
    double glyph_contrast = 0.32, pixel_noise = 0.02;
    bool multiword = false, include_discards = false;
    int balanced_per_gender = 500, test_bias_n = 1000, train_n = -1;
    gen->add_option("--out", gen_out, "output root directory")->required();
    gen->add_option("--n", gen_n, "number of scenes to generate")->required();
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--woman-fraction", woman_fraction, "P(scene gender = woman)");
    gen->add_option("--occlusion-prob", occlusion_prob, "P(gender evidence occluded)");
    gen->add_option("--mention-prob", mention_prob, "P(annotator mentions visible gender)");
    gen->add_flag("--multiword", multiword, "use multi-word gender sets");
    gen->add_option("--glyph-contrast", glyph_contrast, "evidence glyph contrast");
    gen->add_option("--pixel-noise", pixel_noise, "gaussian pixel noise sigma");
    gen->add_option("--balanced-per-gender", balanced_per_gender, "records per gender in test-balanced");
    gen->add_option("--test-bias-n", test_bias_n, "records in test-bias");
    gen->add_option("--train-n", train_n, "records in train (-1: all remaining)");
    gen->add_flag("--include-discards", include_discards, "keep discard-labeled records in the dataset");

    // shared train/suite options
    std::string config_file, variant_name = "baseline_ft", data_path, masked_pass = "auto";
    std::string dataset_checksum_hex, train_out;
    uint64_t seed = 0;
    int iters = 3000, batch = 8, warmup = 500;
    double clip_norm = 25.0;
    double lr = 0.08, alpha = 1.0, beta = 10.0, mu = 1.0, upweight_factor = 10.0;
    auto add_train_opts = [&](CLI::App* cmd, bool with_variant) {
        cmd->add_option("--out", train_out, "output root directory")->required();
        cmd->add_option("--data", data_path, "dataset directory");
        cmd->add_option("--config", config_file, "experiment config JSON file");
        if (with_variant)
            cmd->add_option("--variant", variant_name, "model variant")
                ->check(CLI::IsMember({"baseline_ft", "balanced", "upweight", "equalizer_wo_acl",
                                       "equalizer_wo_conf", "equalizer"}));
        cmd->add_option("--seed", seed, "training seed");
        cmd->add_option("--iters", iters, "SGD iterations");
        cmd->add_option("--warmup", warmup, "correctness-only warmup iterations");
        cmd->add_option("--lr", lr, "SGD step size");
        cmd->add_option("--clip", clip_norm, "gradient norm cap (0 disables)");
        cmd->add_option("--batch", batch, "batch size");
        cmd->add_option("--alpha", alpha, "correctness loss weight");
        cmd->add_option("--beta", beta, "appearance confusion loss weight");
        cmd->add_option("--mu", mu, "confident loss weight");
        cmd->add_option("--upweight-factor", upweight_factor, "upweight variant factor");
        cmd->add_option("--masked-pass", masked_pass, "masked image stream: auto|on|off")
            ->check(CLI::IsMember({"auto", "on", "off"}));
        cmd->add_option("--dataset-checksum", dataset_checksum_hex, "refuse to run unless the dataset matches");
    };
    auto* train_cmd = app.add_subcommand("train", "train one model variant");
    add_train_opts(train_cmd, true);
    auto* suite_cmd = app.add_subcommand("suite", "train all six model variants");
    add_train_opts(suite_cmd, false);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints and emit reports");
    std::string eval_data, eval_out, eval_split = "both";
    std::vector<std::string> eval_variants;
    bool eval_no_pointing = false;
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--out", eval_out, "output root directory")->required();
    eval_cmd->add_option("--split", eval_split, "bias|balanced|both")
        ->check(CLI::IsMember({"bias", "balanced", "both"}));
    eval_cmd->add_option("--variants", eval_variants, "variants to evaluate (default: all)");
    eval_cmd->add_flag("--no-pointing", eval_no_pointing, "skip the pointing game evaluation");

    // saliency
    auto* sal_cmd = app.add_subcommand("saliency", "emit heatmaps or pointing summaries");
    std::string sal_data, sal_out, sal_method, sal_variant = "equalizer", sal_split = "balanced";
    int sal_record = -1;
    bool sal_all = false;
    sal_cmd->add_option("--data", sal_data, "dataset directory")->required();
    sal_cmd->add_option("--out", sal_out, "output root directory")->required();
    sal_cmd->add_option("--method", sal_method, "occlusion|gradcam")
        ->required()
        ->check(CLI::IsMember({"occlusion", "gradcam"}));
    sal_cmd->add_option("--variant", sal_variant, "checkpoint variant");
    sal_cmd->add_option("--record", sal_record, "record id for a single heatmap");
    sal_cmd->add_flag("--all-gendered", sal_all, "pointing summary over all gendered records");
    sal_cmd->add_option("--split", sal_split, "split for --all-gendered")
        ->check(CLI::IsMember({"bias", "balanced", "train"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return run_gen_data(gen_out, gen_seed, gen_n, woman_fraction, occlusion_prob, mention_prob,
                                multiword, glyph_contrast, pixel_noise, balanced_per_gender, test_bias_n,
                                train_n, include_discards);
        if (train_cmd->parsed()) {
            ExperimentConfig cfg = build_config(train_cmd, config_file, variant_name, seed, iters,
                                                warmup, lr, clip_norm, batch, alpha, beta, mu,
                                                upweight_factor, masked_pass, data_path,
                                                dataset_checksum_hex);
            return run_train(std::move(cfg), train_out);
        }
        if (suite_cmd->parsed()) {
            ExperimentConfig cfg = build_config(suite_cmd, config_file, variant_name, seed, iters,
                                                warmup, lr, clip_norm, batch, alpha, beta, mu,
                                                upweight_factor, masked_pass, data_path,
                                                dataset_checksum_hex);
            return run_suite_cmd(std::move(cfg), train_out);
        }
        if (eval_cmd->parsed())
            return run_eval(eval_data, eval_out, eval_split, eval_variants, !eval_no_pointing);
        if (sal_cmd->parsed()) {
            if (!sal_all && sal_record < 0)
                throw InvalidInput("saliency: pass --record <id> or --all-gendered");
            return run_saliency(sal_data, sal_out, sal_method, sal_variant, sal_record, sal_all, sal_split);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
