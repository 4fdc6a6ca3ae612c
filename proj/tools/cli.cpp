#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "crowd/checkpoint.hpp"
#include "crowd/data.hpp"
#include "crowd/density.hpp"
#include "crowd/eval.hpp"
#include "crowd/model.hpp"
#include "crowd/parallel.hpp"
#include "crowd/serialize.hpp"
#include "crowd/train.hpp"

namespace crowd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------ config json

json to_json(const ModelSpec& s) { return spec_to_json(s); }

json to_json(const KernelSpec& k) {
    return {{"mode", to_string(k.mode)},       {"fixed_window", k.fixed_window},
            {"fixed_sigma", k.fixed_sigma},    {"beta", k.beta},
            {"k_neighbors", k.k_neighbors},    {"sigma_floor", k.sigma_floor}};
}

json to_json(const TrainConfig& t) {
    return {{"learning_rate", t.learning_rate},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"batch_size", t.batch_size},
            {"iterations", t.iterations},
            {"crop", {t.crop_height, t.crop_width}},
            {"flip_probability", t.flip_probability},
            {"lr_step", t.lr_step},
            {"lr_gamma", t.lr_gamma},
            {"checkpoint_every", t.checkpoint_every}};
}

json to_json(const SynthConfig& s) {
    return {{"train_count", s.train_count}, {"test_count", s.test_count},
            {"width", s.width},             {"height", s.height},
            {"min_heads", s.min_heads},     {"max_heads", s.max_heads},
            {"head_radius", s.head_radius}, {"noise", s.noise}};
}

struct Settings {
    std::uint64_t seed = 1;
    ModelSpec model;
    KernelSpec kernel;
    TrainConfig train;
    SynthConfig synth;
};

template <typename V>
bool take(const json& j, const char* key, V& dst) {
    if (!j.contains(key)) return false;
    dst = j.at(key).get<V>();
    return true;
}

void apply_section(const json& j, Settings& s, const std::string& section) {
    std::size_t used = 0;
    auto any = [&](bool b) { used += b ? 1 : 0; };
    const bool all = section.empty();
    if (all || section == "model") {
        std::string arch;
        if (take(j, "arch", arch)) {
            s.model.arch = arch_from_string(arch);
            ++used;
        }
        any(take(j, "channels", s.model.channels));
        any(take(j, "recursion_depth", s.model.recursion_depth));
    }
    if (all || section == "kernel") {
        std::string mode;
        if (take(j, "mode", mode)) {
            s.kernel.mode = kernel_mode_from_string(mode);
            ++used;
        }
        any(take(j, "fixed_window", s.kernel.fixed_window));
        any(take(j, "fixed_sigma", s.kernel.fixed_sigma));
        any(take(j, "beta", s.kernel.beta));
        any(take(j, "k_neighbors", s.kernel.k_neighbors));
        any(take(j, "sigma_floor", s.kernel.sigma_floor));
    }
    if (all || section == "train") {
        any(take(j, "learning_rate", s.train.learning_rate));
        any(take(j, "momentum", s.train.momentum));
        any(take(j, "weight_decay", s.train.weight_decay));
        any(take(j, "batch_size", s.train.batch_size));
        any(take(j, "iterations", s.train.iterations));
        if (j.contains("crop")) {
            const auto c = j.at("crop").get<std::vector<std::size_t>>();
            if (c.size() != 2) throw UsageError("config: crop must be [height, width]");
            s.train.crop_height = c[0];
            s.train.crop_width = c[1];
            ++used;
        }
        any(take(j, "flip_probability", s.train.flip_probability));
        any(take(j, "lr_step", s.train.lr_step));
        any(take(j, "lr_gamma", s.train.lr_gamma));
        any(take(j, "checkpoint_every", s.train.checkpoint_every));
    }
    if (all || section == "synth") {
        any(take(j, "train_count", s.synth.train_count));
        any(take(j, "test_count", s.synth.test_count));
        any(take(j, "width", s.synth.width));
        any(take(j, "height", s.synth.height));
        any(take(j, "min_heads", s.synth.min_heads));
        any(take(j, "max_heads", s.synth.max_heads));
        any(take(j, "head_radius", s.synth.head_radius));
        any(take(j, "noise", s.synth.noise));
    }
    if (all) {
        any(take(j, "seed", s.seed));
        for (const char* sec : {"model", "kernel", "train", "synth"}) {
            if (j.contains(sec)) ++used;
        }
    }
    if (used != j.size()) {
        std::string unknown;
        for (const auto& [k, v] : j.items()) unknown += " " + k;
        throw UsageError("config: unrecognized keys in " +
                         (section.empty() ? std::string("top level") : section) + " among:" +
                         unknown);
    }
}

void apply_config_file(const fs::path& path, Settings& s) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("config " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw UsageError("config " + path.string() + ": expected a JSON object");
    apply_section(j, s, "");
    for (const char* sec : {"model", "kernel", "train", "synth"}) {
        if (j.contains(sec)) apply_section(j.at(sec), s, sec);
    }
}

std::optional<std::string> find_config_arg(const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
        if (args[i].starts_with("--config=")) return args[i].substr(9);
    }
    return std::nullopt;
}

// -------------------------------------------------------------- helpers

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw UsageError(std::string("missing ") + what + ": " + p.string());
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

struct Context {
    std::vector<std::string> args;
    std::ostream& out;
    std::ostream& err;
    bool json_output = false;
    bool deterministic = false;
    Settings settings;

    json provenance(const std::string& command, const json& config) const {
        return {{"tool", "drcount"},
                {"version", kVersion},
                {"command", command},
                {"args", args},
                {"config", config},
                {"seed", settings.seed},
                {"deterministic", deterministic}};
    }

    void announce(const std::string& command, const json& config) const {
        err << "drcount " << command << " config: " << config.dump() << '\n';
    }
};

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

std::vector<Sample> load_or_die(const fs::path& manifest_path, LoadOptions opts,
                                std::vector<SkippedEntry>* skipped) {
    require_file(manifest_path, "manifest");
    DatasetManifest manifest;
    try {
        manifest = read_manifest(manifest_path);
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
    auto decoder = default_decoder();
    LoadResult r = load_dataset(manifest, *decoder, opts);
    if (skipped != nullptr) *skipped = std::move(r.skipped);
    return std::move(r.samples);
}

// ------------------------------------------------------------- commands

struct DensityArgs {
    std::vector<std::string> annotations;
    std::string manifest;
    std::string out_dir;
    std::string mode;
    std::size_t scale = 1;
    bool preview = false;
};

int cmd_density(Context& ctx, const DensityArgs& a) {
    KernelSpec spec = ctx.settings.kernel;
    if (!a.mode.empty()) spec.mode = kernel_mode_from_string(a.mode);
    spec.validate();
    if (a.scale != 1 && a.scale != 4) throw UsageError("density: --scale must be 1 or 4");
    const json config = {{"kernel", to_json(spec)}, {"scale", a.scale}, {"out", a.out_dir}};
    ctx.announce("density", config);

    std::vector<fs::path> files(a.annotations.begin(), a.annotations.end());
    if (!a.manifest.empty()) {
        require_file(a.manifest, "manifest");
        const DatasetManifest m = read_manifest(a.manifest);
        for (std::size_t i = 0; i < m.entries.size(); ++i) files.push_back(m.annotation_path(i));
    }
    if (files.empty()) throw UsageError("density: give --annotations or --manifest");
    for (const auto& f : files) require_file(f, "annotation");

    fs::create_directories(a.out_dir);
    json summary = json::array();
    for (const auto& f : files) {
        const Annotation ann = load_annotation(f);
        DensityMap map = generate_density(ann.points, spec);
        if (a.scale != 1) map = downsample_sum(map, a.scale);
        const std::string id = f.stem().string();
        save_tensor(fs::path(a.out_dir) / (id + ".drt4"), map.to_tensor());
        if (a.preview) {
            Image8 img{map.width, map.height, 1, std::vector<std::uint8_t>(map.grid.size())};
            const float peak = *std::max_element(map.grid.begin(), map.grid.end());
            for (std::size_t i = 0; i < map.grid.size(); ++i) {
                img.pixels[i] = peak > 0.0f ? static_cast<std::uint8_t>(
                                                  std::lround(255.0f * map.grid[i] / peak))
                                            : 0;
            }
            write_netpbm(fs::path(a.out_dir) / (id + ".pgm"), img);
        }
        summary.push_back({{"id", id}, {"heads", ann.points.count()}, {"sum", map.sum()}});
        if (!ctx.json_output) {
            ctx.out << id << " heads=" << ann.points.count() << " sum=" << format_double(map.sum())
                    << '\n';
        }
    }
    write_json_file(fs::path(a.out_dir) / "provenance.json", ctx.provenance("density", config));
    if (ctx.json_output) ctx.out << json{{"maps", summary}}.dump() << '\n';
    return kExitOk;
}

struct TrainArgs {
    std::string manifest;
    std::string out_dir;
    std::string arch;
    std::string mode;
};

int cmd_train(Context& ctx, const TrainArgs& a) {
    Settings& s = ctx.settings;
    if (!a.arch.empty()) s.model.arch = arch_from_string(a.arch);
    if (!a.mode.empty()) s.kernel.mode = kernel_mode_from_string(a.mode);
    s.train.seed = s.seed;
    s.model.validate();
    s.kernel.validate();
    s.train.validate();
    const json config = {{"model", to_json(s.model)},
                         {"kernel", to_json(s.kernel)},
                         {"train", to_json(s.train)},
                         {"seed", s.seed},
                         {"manifest", a.manifest},
                         {"out", a.out_dir}};
    ctx.announce("train", config);

    const Dataset data = load_or_die(a.manifest, {}, nullptr);
    if (data.empty()) throw UsageError("train: manifest lists no images");
    fs::create_directories(a.out_dir);
    const fs::path out_dir(a.out_dir);

    Model<float> model = Model<float>::build(s.model, s.seed);
    TrainHooks hooks;
    hooks.on_iteration = [&](std::size_t it, double loss) {
        if ((it + 1) % 50 == 0 || it + 1 == s.train.iterations) {
            ctx.err << "iteration " << it + 1 << " loss " << format_double(loss) << '\n';
        }
    };
    hooks.on_checkpoint = [&](std::size_t it, const Model<float>& m) {
        std::ostringstream name;
        name << "iter_" << std::setw(6) << std::setfill('0') << it << ".drck";
        save_checkpoint(out_dir / name.str(), m, s.seed,
                        {{"iteration", it}, {"train", to_json(s.train)},
                         {"kernel", to_json(s.kernel)}});
    };
    const TrainResult result = train(model, data, s.train, s.kernel, hooks);

    std::ofstream csv(out_dir / "loss.csv", std::ios::trunc);
    csv << "iteration,loss\n";
    for (std::size_t i = 0; i < result.losses.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, result.losses[i]);
        csv << buf;
    }
    csv.close();
    save_checkpoint(out_dir / "final.drck", model, s.seed,
                    {{"iteration", s.train.iterations},
                     {"train", to_json(s.train)},
                     {"kernel", to_json(s.kernel)}});
    write_json_file(out_dir / "provenance.json", ctx.provenance("train", config));

    const json summary = {{"iterations", result.losses.size()},
                          {"final_loss", result.losses.back()},
                          {"checkpoint", (out_dir / "final.drck").string()}};
    if (ctx.json_output) {
        ctx.out << summary.dump() << '\n';
    } else {
        ctx.out << "trained " << to_string(s.model.arch) << " for " << result.losses.size()
                << " iterations, final loss " << format_double(result.losses.back()) << '\n'
                << "checkpoint: " << (out_dir / "final.drck").string() << '\n';
    }
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::string out;
};

int cmd_eval(Context& ctx, const EvalArgs& a) {
    require_file(a.checkpoint, "checkpoint");
    const json config = {{"checkpoint", a.checkpoint}, {"manifest", a.manifest}, {"out", a.out}};
    ctx.announce("eval", config);
    Checkpoint ck = load_checkpoint(a.checkpoint);
    std::vector<SkippedEntry> skipped;
    const Dataset data = load_or_die(a.manifest, {true}, &skipped);
    if (data.empty()) throw std::runtime_error("eval: no readable images in " + a.manifest);
    const MetricsReport report = evaluate(ck.model, data, skipped);
    const json j = report.to_json();
    if (!a.out.empty()) {
        write_json_file(a.out, j);
        write_json_file(a.out + ".provenance.json", ctx.provenance("eval", config));
    }
    if (ctx.json_output || a.out.empty()) {
        ctx.out << j.dump() << '\n';
    } else {
        ctx.out << "n=" << report.n << " mae=" << format_double(report.mae)
                << " mse(root)=" << format_double(report.mse) << " skipped=" << report.skipped.size()
                << '\n';
    }
    return kExitOk;
}

struct CountArgs {
    std::string checkpoint;
    std::vector<std::string> images;
    std::string manifest;
};

int cmd_count(Context& ctx, const CountArgs& a) {
    require_file(a.checkpoint, "checkpoint");
    const json config = {{"checkpoint", a.checkpoint}, {"images", a.images}, {"manifest", a.manifest}};
    ctx.announce("count", config);
    Checkpoint ck = load_checkpoint(a.checkpoint);

    std::vector<Sample> samples;
    if (!a.manifest.empty()) samples = load_or_die(a.manifest, {}, nullptr);
    auto decoder = default_decoder();
    for (const auto& p : a.images) {
        require_file(p, "image");
        samples.push_back({fs::path(p).stem().string(), image_to_tensor(decoder->decode(p)), {}});
    }
    if (samples.empty()) throw UsageError("count: give --images or --manifest");

    json rows = json::array();
    for (const Sample& s : samples) {
        const CropResult c = crop_to_multiple(s, 4);
        const double count = count_from_values(ck.model.infer(c.sample.image).values());
        rows.push_back({{"id", s.id}, {"count", count}});
        if (!ctx.json_output) ctx.out << s.id << ' ' << format_double(count) << '\n';
    }
    if (ctx.json_output) ctx.out << json{{"counts", rows}}.dump() << '\n';
    return kExitOk;
}

int cmd_params(Context& ctx) {
    const ModelSpec base = ctx.settings.model;
    const json config = {{"channels", base.channels}, {"recursion_depth", base.recursion_depth}};
    ctx.announce("params", config);
    json rows = json::array();
    if (!ctx.json_output) {
        ctx.out << std::left << std::setw(11) << "arch" << std::right << std::setw(14)
                << "conv_weights" << std::setw(15) << "all_learnable" << std::setw(10) << "PARAMS"
                << std::setw(8) << "convs" << '\n';
    }
    for (Arch arch : all_archs()) {
        ModelSpec spec = base;
        spec.arch = arch;
        const Model<float> m = Model<float>::build(spec, 0);
        std::size_t convs = 0;
        m.infer(Tensor4({1, 3, 4, 4}), &convs);
        const std::size_t w = m.count_parameters(CountMode::conv_weights);
        const std::size_t all = m.count_parameters(CountMode::all_learnable);
        char millions[32];
        std::snprintf(millions, sizeof millions, "%.3fM", static_cast<double>(w) / 1e6);
        rows.push_back({{"arch", to_string(arch)},
                        {"conv_weights", w},
                        {"all_learnable", all},
                        {"params", millions},
                        {"conv_applications", convs}});
        if (!ctx.json_output) {
            ctx.out << std::left << std::setw(11) << to_string(arch) << std::right << std::setw(14)
                    << w << std::setw(15) << all << std::setw(10) << millions << std::setw(8)
                    << convs << '\n';
        }
    }
    if (ctx.json_output) ctx.out << json{{"architectures", rows}}.dump() << '\n';
    return kExitOk;
}

int cmd_synth(Context& ctx, const std::string& out_dir) {
    SynthConfig cfg = ctx.settings.synth;
    cfg.seed = ctx.settings.seed;
    cfg.validate();
    const json config = {{"synth", to_json(cfg)}, {"seed", cfg.seed}, {"out", out_dir}};
    ctx.announce("synth", config);
    const SynthManifests m = synth_generate(cfg, out_dir);
    write_json_file(fs::path(out_dir) / "provenance.json", ctx.provenance("synth", config));
    if (ctx.json_output) {
        ctx.out << json{{"train", m.train.string()}, {"test", m.test.string()}}.dump() << '\n';
    } else {
        ctx.out << "train manifest: " << m.train.string() << "\ntest manifest: " << m.test.string()
                << '\n';
    }
    return kExitOk;
}

struct KfoldArgs {
    std::string manifest;
    std::string out_dir;
    std::size_t k = 5;
    std::optional<std::size_t> fold;
};

int cmd_kfold(Context& ctx, const KfoldArgs& a) {
    require_file(a.manifest, "manifest");
    const json config = {{"manifest", a.manifest},
                         {"k", a.k},
                         {"fold", a.fold ? json(*a.fold) : json(nullptr)},
                         {"seed", ctx.settings.seed},
                         {"out", a.out_dir}};
    ctx.announce("kfold", config);
    DatasetManifest m;
    try {
        m = read_manifest(a.manifest);
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
    std::vector<std::string> ids;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        ids.push_back(m.id(i));
        index[m.id(i)] = i;
    }
    if (a.k < 2 || a.k > ids.size()) {
        throw UsageError("kfold: k must be in [2, " + std::to_string(ids.size()) + "]");
    }
    if (a.fold && *a.fold >= a.k) throw UsageError("kfold: --fold must be below --k");

    fs::create_directories(a.out_dir);
    json folds = json::array();
    for (std::size_t f = 0; f < a.k; ++f) {
        if (a.fold && *a.fold != f) continue;
        const FoldSplit split = kfold(ids, a.k, f, ctx.settings.seed);
        for (const auto& [name, list] : {std::pair{"train", &split.train}, std::pair{"test", &split.test}}) {
            DatasetManifest out;
            out.root = m.root;
            for (const auto& id : *list) out.entries.push_back(m.entries[index.at(id)]);
            write_manifest(fs::path(a.out_dir) / ("fold" + std::to_string(f) + "_" + name + ".csv"),
                           out);
        }
        folds.push_back({{"fold", f}, {"train", split.train.size()}, {"test", split.test.size()},
                         {"test_ids", split.test}});
        if (!ctx.json_output) {
            ctx.out << "fold " << f << ": train=" << split.train.size()
                    << " test=" << split.test.size() << '\n';
        }
    }
    write_json_file(fs::path(a.out_dir) / "provenance.json", ctx.provenance("kfold", config));
    if (ctx.json_output) ctx.out << json{{"folds", folds}}.dump() << '\n';
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Context ctx{args, out, err, false, false, Settings{}};
    Settings& s = ctx.settings;

    try {
        if (auto cfg = find_config_arg(args)) apply_config_file(*cfg, s);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: config: " << e.what() << '\n';
        return kExitUsage;
    }

    CLI::App app{"Density-map crowd counting with weight-shared residual networks", "drcount"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON file overriding defaults (flags win)");
    app.add_option("--seed", s.seed, "Seed for initialization, sampling and synthesis");
    app.add_flag("--deterministic", ctx.deterministic, "Force sequential kernels");
    app.add_flag("--json", ctx.json_output, "Machine-readable JSON on stdout");
    app.set_version_flag("--version", kVersion);

    auto add_kernel_options = [&](CLI::App* sub, std::string& mode) {
        sub->add_option("--mode", mode, "Kernel mode: fixed | adaptive");
        sub->add_option("--window", s.kernel.fixed_window, "Fixed kernel window (odd, px)");
        sub->add_option("--sigma", s.kernel.fixed_sigma, "Fixed kernel sigma (px)");
        sub->add_option("--beta", s.kernel.beta, "Adaptive sigma = beta * mean kNN distance");
        sub->add_option("--k", s.kernel.k_neighbors, "Neighbours for the adaptive kernel");
    };

    DensityArgs density;
    auto* density_cmd = app.add_subcommand("density", "Generate ground-truth density maps");
    density_cmd->add_option("--annotations", density.annotations, "Annotation JSON files");
    density_cmd->add_option("--manifest", density.manifest, "Manifest whose annotations to use");
    density_cmd->add_option("--out", density.out_dir, "Output directory")->required();
    density_cmd->add_option("--scale", density.scale, "Sum-pool factor (1 or 4)");
    density_cmd->add_flag("--preview", density.preview, "Also write grayscale PGM previews");
    add_kernel_options(density_cmd, density.mode);

    TrainArgs train_args;
    std::vector<std::size_t> crop;
    auto* train_cmd = app.add_subcommand("train", "Train a model with momentum SGD");
    train_cmd->add_option("--manifest", train_args.manifest, "Training manifest")->required();
    train_cmd->add_option("--out", train_args.out_dir, "Output directory")->required();
    train_cmd->add_option("--arch", train_args.arch,
                          "resnet14 | resnet20 | resnet26 | r_resnet | dr_resnet");
    train_cmd->add_option("--channels", s.model.channels, "Feature channels");
    train_cmd->add_option("--recursion-depth", s.model.recursion_depth, "Recursive applications");
    train_cmd->add_option("--iterations", s.train.iterations, "SGD iterations");
    train_cmd->add_option("--batch-size", s.train.batch_size, "Images per batch");
    train_cmd->add_option("--crop", crop, "Crop height and width")->expected(2);
    train_cmd->add_option("--lr", s.train.learning_rate, "Learning rate");
    train_cmd->add_option("--momentum", s.train.momentum, "Momentum");
    train_cmd->add_option("--weight-decay", s.train.weight_decay, "Weight decay");
    train_cmd->add_option("--flip-probability", s.train.flip_probability, "Horizontal flip rate");
    train_cmd->add_option("--lr-step", s.train.lr_step, "Decay period (0 = fixed rate)");
    train_cmd->add_option("--lr-gamma", s.train.lr_gamma, "Decay factor per period");
    train_cmd->add_option("--checkpoint-every", s.train.checkpoint_every,
                          "Checkpoint period in iterations (0 = final only)");
    add_kernel_options(train_cmd, train_args.mode);

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Report MAE and root-mean-square count error");
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "DRCK checkpoint")->required();
    eval_cmd->add_option("--manifest", eval_args.manifest, "Test manifest")->required();
    eval_cmd->add_option("--out", eval_args.out, "Report JSON path (stdout when omitted)");

    CountArgs count_args;
    auto* count_cmd = app.add_subcommand("count", "Print estimated counts per image");
    count_cmd->add_option("--checkpoint", count_args.checkpoint, "DRCK checkpoint")->required();
    count_cmd->add_option("--images", count_args.images, "Image files");
    count_cmd->add_option("--manifest", count_args.manifest, "Manifest of images");

    auto* params_cmd = app.add_subcommand("params", "Parameter counts for every architecture");
    params_cmd->add_option("--channels", s.model.channels, "Feature channels");
    params_cmd->add_option("--recursion-depth", s.model.recursion_depth, "Recursive applications");

    std::string synth_out;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset");
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--train-count", s.synth.train_count, "Training images");
    synth_cmd->add_option("--test-count", s.synth.test_count, "Test images");
    synth_cmd->add_option("--width", s.synth.width, "Image width");
    synth_cmd->add_option("--height", s.synth.height, "Image height");
    synth_cmd->add_option("--min-heads", s.synth.min_heads, "Fewest heads per image");
    synth_cmd->add_option("--max-heads", s.synth.max_heads, "Most heads per image (<= 64)");
    synth_cmd->add_option("--head-radius", s.synth.head_radius, "Disc radius (px)");
    synth_cmd->add_option("--noise", s.synth.noise, "Gaussian noise sigma");

    KfoldArgs kfold_args;
    std::size_t fold = 0;
    auto* kfold_cmd = app.add_subcommand("kfold", "Split a manifest into k folds");
    kfold_cmd->add_option("--manifest", kfold_args.manifest, "Manifest to split")->required();
    kfold_cmd->add_option("--out", kfold_args.out_dir, "Output directory")->required();
    kfold_cmd->add_option("--k", kfold_args.k, "Number of folds");
    auto* fold_opt = kfold_cmd->add_option("--fold", fold, "Only write this fold");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    parallel::set_deterministic(ctx.deterministic);
    try {
        if (!crop.empty()) {
            s.train.crop_height = crop[0];
            s.train.crop_width = crop[1];
        }
        if (fold_opt->count() > 0) kfold_args.fold = fold;

        if (*density_cmd) return cmd_density(ctx, density);
        if (*train_cmd) return cmd_train(ctx, train_args);
        if (*eval_cmd) return cmd_eval(ctx, eval_args);
        if (*count_cmd) return cmd_count(ctx, count_args);
        if (*params_cmd) return cmd_params(ctx);
        if (*synth_cmd) return cmd_synth(ctx, synth_out);
        if (*kfold_cmd) return cmd_kfold(ctx, kfold_args);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace crowd::cli
