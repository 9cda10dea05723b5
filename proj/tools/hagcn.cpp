// hagcn: graph inspection, dataset indexing and splitting, training,
// evaluation and prediction for the hand-keypoint AGCN.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hagcn/checkpoint.hpp"
#include "hagcn/hand_graph.hpp"
#include "hagcn/keypoints.hpp"
#include "hagcn/metrics.hpp"
#include "hagcn/pipeline.hpp"
#include "hagcn/run_config.hpp"

namespace fs = std::filesystem;
using namespace hagcn;

namespace {

void write_file(const fs::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
    if (!out) throw ValidationError("failed writing " + path.string());
}

fs::path output_dir(const std::string& out) {
    if (out.empty()) throw ValidationError("--out is required");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw ValidationError("cannot create output directory " + out);
    return out;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------
// graph inspect

std::string edges_csv(const std::vector<Edge>& edges, const char* header) {
    std::string out = std::string(header) + "\n";
    for (const auto& [a, b] : edges) out += std::to_string(a) + "," + std::to_string(b) + "\n";
    return out;
}

std::string slice_csv(const AdjacencyStack& a, std::size_t k) {
    std::string out;
    for (std::size_t i = 0; i < kVertexCount; ++i) {
        for (std::size_t j = 0; j < kVertexCount; ++j) {
            if (j) out += ',';
            out += detail::format_double(a(i, j, k));
        }
        out += '\n';
    }
    return out;
}

int cmd_graph_inspect(bool no_supplementary, const std::string& out) {
    const auto g = build_topology();
    const auto adj = build_adjacency(g, !no_supplementary);
    const std::size_t supp = no_supplementary ? 0 : g.supp_neighbor_edges.size() + g.supp_bend_edges.size();
    std::cout << "vertices=" << kVertexCount << " natural=" << g.natural_edges.size() << " supplementary=" << supp
              << "\n";
    if (!out.empty()) {
        const auto dir = output_dir(out);
        write_file(dir / "edges_natural.csv", edges_csv(g.natural_edges, "child,parent"));
        write_file(dir / "edges_neighbor.csv",
                   edges_csv(no_supplementary ? std::vector<Edge>{} : g.supp_neighbor_edges, "tip,target"));
        write_file(dir / "edges_bend.csv",
                   edges_csv(no_supplementary ? std::vector<Edge>{} : g.supp_bend_edges, "tip,target"));
        write_file(dir / "adjacency_self.csv", slice_csv(adj, 0));
        write_file(dir / "adjacency_inward.csv", slice_csv(adj, 1));
        write_file(dir / "adjacency_outward.csv", slice_csv(adj, 2));
    }
    return 0;
}

// ---------------------------------------------------------------------------
// index / split

void print_summary(const DatasetManifest& m) {
    const auto counts = m.counts_per_class();
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& [_, n] : counts) {
        lo = std::min(lo, n);
        hi = std::max(hi, n);
    }
    if (counts.empty()) lo = 0;
    std::cout << "classes=" << m.classes.size() << " videos=" << m.entries.size() << " clips/class=[" << lo << ","
              << hi << "]\n";
}

int cmd_index(const std::string& root, const std::string& out) {
    const auto m = build_manifest(root);
    write_file(output_dir(out) / "manifest.csv", manifest_to_csv(m));
    print_summary(m);
    return 0;
}

DatasetManifest read_manifest(const std::string& path) {
    if (path.empty()) throw ValidationError("--manifest is required");
    return manifest_from_csv(read_text_file(path));
}

int cmd_split(const std::string& manifest, double fraction, std::uint64_t seed, const std::string& out) {
    const auto m = read_manifest(manifest);
    const auto [train, test] = stratified_split(m, fraction, seed);
    write_file(output_dir(out) / "manifest.csv", manifest_to_csv(merge_split(train, test)));
    print_summary(m);
    std::cout << "train=" << train.entries.size() << " test=" << test.entries.size() << "\n";
    return 0;
}

// Entries of the requested split; a manifest without split labels is used whole.
DatasetManifest select_split(const DatasetManifest& m, const std::string& split) {
    const bool labelled = std::any_of(m.entries.begin(), m.entries.end(), [](const auto& e) { return !e.split.empty(); });
    if (split == "all" || !labelled) return m;
    auto sub = m.filtered(split);
    if (sub.entries.empty()) throw ValidationError("manifest has no '" + split + "' entries");
    return sub;
}

// ---------------------------------------------------------------------------
// preprocess

int cmd_preprocess(const RunConfig& cfg, const std::string& split) {
    const auto m = select_split(read_manifest(cfg.manifest), split);
    const auto dir = output_dir(cfg.out);
    std::string csv = "video_id,label,split,frames,detected\n";
    std::vector<std::string> problems;
    for (const auto& e : m.entries) {
        try {
            const auto seq = read_sequence_file(e.path);
            encode_sequence(seq, cfg.preprocess);
            csv += detail::csv_field(e.video_id) + "," + detail::csv_field(e.label) + "," + e.split + "," +
                   std::to_string(seq.frames.size()) + "," + std::to_string(seq.detected_count()) + "\n";
        } catch (const ValidationError& err) {
            problems.push_back(e.path + ": " + err.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = std::to_string(problems.size()) + " sequence(s) failed preprocessing:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ValidationError(msg);
    }
    write_file(dir / "preprocess.csv", csv);
    write_file(dir / "config.echo", cfg.echo());
    std::cout << "sequences=" << m.entries.size() << " T=" << cfg.preprocess.time_steps << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

template <typename T>
void train_streams(const RunConfig& cfg, const DatasetManifest& m, const fs::path& dir) {
    const auto samples = load_samples(m, m.classes, cfg.preprocess);
    const auto streams = cfg.streams();
    for (const auto stream : streams) {
        const std::string tag = streams.size() == 1 ? "" : "." + to_string(stream);
        std::cout << "stream=" << to_string(stream) << " samples=" << samples.size()
                  << " classes=" << m.classes.size() << "\n";
        auto result = train<T>(samples, m.classes, cfg.preprocess.time_steps, cfg.train, stream, {},
                               [](const EpochLog& e) {
                                   std::cout << "epoch " << e.epoch << " step " << e.step << " loss "
                                             << fmt("%.6f", e.loss) << " train_acc " << fmt("%.4f", e.train_acc)
                                             << std::endl;
                                   return true;
                               });
        save_checkpoint(result.model, dir / ("model" + tag + ".agcn"));
        write_file(dir / ("epochs" + tag + ".csv"), epochs_to_csv(result.epochs));
    }
}

int cmd_train(const RunConfig& cfg) {
    cfg.preprocess.validate();
    cfg.train.validate();
    const auto dir = output_dir(cfg.out);
    write_file(dir / "config.echo", cfg.echo());
    const auto m = select_split(read_manifest(cfg.manifest), "train");
    if (cfg.train.precision == 64) {
        train_streams<double>(cfg, m, dir);
    } else {
        train_streams<float>(cfg, m, dir);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// eval / predict

template <typename T>
std::vector<AgcnModel<T>> load_models(const std::vector<std::string>& paths) {
    if (paths.empty() || paths.size() > 2) throw ValidationError("pass one or two --model checkpoints");
    std::vector<AgcnModel<T>> models;
    for (const auto& p : paths) models.push_back(load_checkpoint<T>(p));
    if (models.size() == 2 && models[0].classes() != models[1].classes())
        throw ClassMismatchError("models " + paths[0] + " and " + paths[1] + " were trained on different class lists");
    return models;
}

template <typename T>
std::vector<AgcnModel<T>*> pointers(std::vector<AgcnModel<T>>& models) {
    std::vector<AgcnModel<T>*> out;
    for (auto& m : models) out.push_back(&m);
    return out;
}

template <typename T>
int run_eval(const RunConfig& cfg, const std::vector<std::string>& model_paths, const std::string& split) {
    auto models = load_models<T>(model_paths);
    const auto m = select_split(read_manifest(cfg.manifest), split);
    const auto dir = output_dir(cfg.out);
    write_file(dir / "config.echo", cfg.echo());
    const auto samples = load_samples(m, models.front().classes(), cfg.preprocess);
    const std::size_t TT = cfg.preprocess.time_steps;
    if (models.size() == 2) {
        for (auto& model : models) {
            const auto r = evaluate<T>({&model}, samples, TT);
            write_file(dir / ("report." + to_string(model.stream()) + ".csv"), report_to_csv(r));
            std::cout << "stream=" << to_string(model.stream()) << " accuracy=" << fmt("%.4f", r.accuracy)
                      << " macro_f1=" << fmt("%.4f", r.macro_f1) << "\n";
        }
    }
    const auto report = evaluate<T>(pointers(models), samples, TT);
    write_file(dir / "report.csv", report_to_csv(report));
    std::cout << report_table(report);
    std::cout << (models.size() == 2 ? "fused" : "stream=" + to_string(models.front().stream()))
              << " accuracy=" << fmt("%.4f", report.accuracy) << " macro_f1=" << fmt("%.4f", report.macro_f1)
              << "\n";
    return 0;
}

template <typename T>
int run_predict(const RunConfig& cfg, const std::vector<std::string>& model_paths, const std::string& sequence,
                std::size_t top) {
    auto models = load_models<T>(model_paths);
    const auto seq = read_sequence_file(sequence);
    const std::vector<EncodedSample> sample{{seq.video_id, 0, encode_sequence(seq, cfg.preprocess)}};
    const auto probs = predict_probabilities<T>(pointers(models), sample, cfg.preprocess.time_steps);
    const auto& classes = models.front().classes();
    std::vector<std::size_t> order(classes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return probs[a] > probs[b]; });
    std::cout << "video_id=" << seq.video_id << "\n";
    for (std::size_t i = 0; i < std::min(top, order.size()); ++i)
        std::cout << i + 1 << " " << classes[order[i]] << " " << fmt("%.6f", static_cast<double>(probs[order[i]]))
                  << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Option plumbing

struct ConfigOptions {
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
};

std::string flag_for(const std::string& key) { return key == "T" ? "-T,--time-steps" : "--" + key; }

const std::map<std::string, std::string> kKeyHelp{
    {"manifest", "manifest.csv (video_id,label,path,split)"},
    {"out", "Run directory for artifacts"},
    {"stream", "joint, bone or both"},
    {"T", "Frames per sample after resampling"},
    {"missing", "Undetected frames: interpolate or zero-fill"},
    {"resample", "uniform-index or pad-repeat-last"},
    {"epochs", "Training epochs"},
    {"batch", "Mini-batch size"},
    {"lr", "SGD learning rate"},
    {"momentum", "SGD momentum"},
    {"seed", "Initialisation and shuffling seed"},
    {"precision", "Float width, 32 or 64"},
};

void add_config_options(CLI::App& cmd, ConfigOptions& co, const std::vector<std::string>& keys) {
    const RunConfig defaults;
    cmd.add_option("--config", co.config_file, "key=value config file; flags override it");
    for (const auto& k : keys) {
        co.values[k] = defaults.get(k);
        co.options[k] = cmd.add_option(flag_for(k), co.values[k], kKeyHelp.at(k) + " [key " + k + "]")->capture_default_str();
    }
}

RunConfig resolve_config(const ConfigOptions& co) {
    RunConfig cfg;
    if (!co.config_file.empty()) apply_config_text(cfg, read_text_file(co.config_file));
    for (const auto& [k, opt] : co.options)
        if (opt->count() > 0) cfg.set(k, co.values.at(k));
    return cfg;
}

const std::vector<std::string> kPreprocessKeys{"T", "missing", "resample", "precision"};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hand-keypoint sign recognition with a two-stream adaptive graph convolutional network"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    auto* graph = app.add_subcommand("graph", "Hand graph utilities");
    graph->require_subcommand(1);
    auto* inspect = graph->add_subcommand("inspect", "Print edge counts; with --out, dump edge lists and adjacency");
    bool no_supp = false;
    std::string graph_out;
    inspect->add_flag("--no-supplementary", no_supp, "Leave out the supplementary fingertip edges");
    inspect->add_option("--out", graph_out, "Directory for CSV dumps");

    auto* index = app.add_subcommand("index", "Scan a dataset root into manifest.csv");
    std::string root, index_out;
    index->add_option("--root", root, "Directory with one subdirectory of JSON documents per class")->required();
    index->add_option("--out", index_out, "Output directory")->required();

    auto* split = app.add_subcommand("split", "Stratified train/test split of a manifest");
    std::string split_manifest, split_out;
    double fraction = 0.2;
    std::uint64_t split_seed = 7;
    split->add_option("--manifest", split_manifest, "Input manifest.csv")->required();
    split->add_option("--fraction", fraction, "Test fraction per class");
    split->add_option("--seed", split_seed, "Split seed");
    split->add_option("--out", split_out, "Output directory")->required();

    std::vector<std::string> all_keys = RunConfig::keys();
    std::vector<std::string> io_keys{"manifest", "out"};
    std::vector<std::string> eval_keys = io_keys;
    eval_keys.insert(eval_keys.end(), kPreprocessKeys.begin(), kPreprocessKeys.end());

    auto* pre = app.add_subcommand("preprocess", "Validate and encode every sequence of a manifest");
    ConfigOptions pre_opts;
    std::string pre_split = "all";
    add_config_options(*pre, pre_opts, eval_keys);
    pre->add_option("--split", pre_split, "train, test or all");

    auto* tr = app.add_subcommand("train", "Train one or both streams");
    ConfigOptions train_opts;
    add_config_options(*tr, train_opts, all_keys);

    auto* ev = app.add_subcommand("eval", "Evaluate one model or a fused pair on a manifest");
    ConfigOptions eval_opts;
    std::vector<std::string> eval_models;
    std::string eval_split = "test";
    add_config_options(*ev, eval_opts, eval_keys);
    ev->add_option("--model", eval_models, "Checkpoint(s); two are fused")->required()->expected(1, 2);
    ev->add_option("--split", eval_split, "train, test or all");

    auto* pr = app.add_subcommand("predict", "Top classes for one sequence");
    ConfigOptions pred_opts;
    std::vector<std::string> pred_models;
    std::string sequence;
    std::size_t top = 5;
    add_config_options(*pr, pred_opts, kPreprocessKeys);
    pr->add_option("--model", pred_models, "Checkpoint(s); two are fused")->required()->expected(1, 2);
    pr->add_option("--sequence", sequence, "Interchange JSON document")->required();
    pr->add_option("--top", top, "Number of classes to print");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
    }

    try {
        if (*inspect) return cmd_graph_inspect(no_supp, graph_out);
        if (*index) return cmd_index(root, index_out);
        if (*split) return cmd_split(split_manifest, fraction, split_seed, split_out);
        if (*pre) return cmd_preprocess(resolve_config(pre_opts), pre_split);
        if (*tr) return cmd_train(resolve_config(train_opts));
        if (*ev) {
            const auto cfg = resolve_config(eval_opts);
            return cfg.train.precision == 64 ? run_eval<double>(cfg, eval_models, eval_split)
                                             : run_eval<float>(cfg, eval_models, eval_split);
        }
        if (*pr) {
            const auto cfg = resolve_config(pred_opts);
            return cfg.train.precision == 64 ? run_predict<double>(cfg, pred_models, sequence, top)
                                             : run_predict<float>(cfg, pred_models, sequence, top);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::validation);
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::validation);
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::checkpoint);
    } catch (const ClassMismatchError& e) {
        std::cerr << "class mismatch: " << e.what() << "\n";
        return static_cast<int>(ExitCode::class_mismatch);
    } catch (const NumericalError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return static_cast<int>(ExitCode::divergence);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::usage);
    }
    return static_cast<int>(ExitCode::usage);
}
