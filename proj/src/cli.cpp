#include "rfstyle/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "rfstyle/error.hpp"
#include "rfstyle/fixtures.hpp"
#include "rfstyle/io.hpp"
#include "rfstyle/maskgen.hpp"
#include "rfstyle/stylize.hpp"

namespace rfstyle {

namespace {

using json = nlohmann::json;

constexpr const char* kSemanticFeature = "semantic-pixel";

std::string stem_of(std::size_t i) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%03zu", i);
    return buf;
}

void write_lines(const fs::path& path, const std::vector<json>& lines) {
    std::string text;
    for (const auto& l : lines) text += l.dump() + "\n";
    write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<double> parse_numbers(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw Error(ErrorCode::Configuration, std::string("cannot parse ") + what + " '" + text + "'");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
    std::string bundle, grid_out, log;
    int steps = 2000;
    std::uint64_t seed = 0;
    std::string dims = "24";
    int sh_degree = 1;
    double density_step = 0.5;
    double sh_step = 5e-2;
};

int cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
    const Bundle bundle = load_bundle(a.bundle);
    const auto d = parse_numbers(a.dims, "--dims");
    if (d.size() != 1 && d.size() != 3) throw Error(ErrorCode::Configuration, "--dims takes n or nx,ny,nz");
    const std::array<int, 3> dims = d.size() == 1 ? std::array<int, 3>{int(d[0]), int(d[0]), int(d[0])}
                                                  : std::array<int, 3>{int(d[0]), int(d[1]), int(d[2])};
    if (!bundle.cameras.bbox_min || !bundle.cameras.bbox_max)
        spdlog::warn("cameras.json has no bbox; using [-1, 1]^3");
    const Vec3 bmin = bundle.cameras.bbox_min.value_or(Vec3::Constant(-1.0));
    const Vec3 bmax = bundle.cameras.bbox_max.value_or(Vec3::Constant(1.0));

    PretrainSettings s;
    s.steps = a.steps;
    s.density_step = a.density_step;
    s.sh_step = a.sh_step;
    s.render.background = bundle.cameras.background;
    std::vector<json> log;
    VoxelGrid init = random_init_grid(dims, bmin, bmax, a.sh_degree, a.seed);
    PretrainResult r = pretrain(std::move(init), bundle.views, s,
                                [&](int step, double loss) { log.push_back({{"step", step}, {"loss", loss}}); });
    const double mse = photometric_mse(r.grid, bundle.views, s.render);
    log.push_back({{"final_mse", mse}, {"psnr", psnr_from_mse(mse)}, {"steps_run", r.steps_run}});
    save_checkpoint(a.grid_out, r.grid);
    write_lines(a.log.empty() ? fs::path(a.grid_out) / "pretrain_log.jsonl" : fs::path(a.log), log);
    out << log.back().dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct StylizeArgs {
    std::string bundle, grid_in, task, grid_out;
    std::optional<std::string> mode;
    std::optional<double> alpha, lambda, lambda_tv, step_size;
    std::optional<int> steps, views_per_step;
    std::optional<std::uint64_t> seed;
    bool no_preserve = false;
    bool no_color_transfer = false;
};

int cmd_stylize(const StylizeArgs& a, std::ostream& out) {
    const Bundle bundle = load_bundle(a.bundle);
    TaskSpec task = load_task(a.task, bundle);
    if (a.mode) task.mode = parse_task_mode(*a.mode);
    if (a.alpha) task.loss.alpha = *a.alpha;
    if (a.lambda) task.loss.lambda = *a.lambda;
    if (a.lambda_tv) task.loss.lambda_tv = *a.lambda_tv;
    if (a.step_size) task.optimizer.step_size = *a.step_size;
    if (a.steps) task.optimizer.steps = *a.steps;
    if (a.views_per_step) task.optimizer.views_per_step = *a.views_per_step;
    if (a.seed) task.optimizer.seed = *a.seed;
    if (a.no_preserve) task.loss.preserve_term = false;
    if (a.no_color_transfer) task.optimizer.color_transfer = false;
    task.validate();
    for (int label : bundle_labels(bundle)) task.binding(label);

    VoxelGrid grid = load_checkpoint(a.grid_in);
    if (!grid.density_frozen()) {
        spdlog::warn("input grid density was not frozen; freezing it");
        grid.freeze_density();
    }
    const std::vector<View> views = prepare_views(bundle.views, task);
    const fs::path root(a.grid_out);
    for (std::size_t i = 0; i < views.size(); ++i)
        write_png_rgb(root / "preview" / ("before_" + stem_of(i) + ".png"),
                      render_view(grid, views[i].camera, task.render).image);

    std::vector<json> log;
    FinetuneResult r = finetune(std::move(grid), views, task, [&](int step, const LossReport& rep) {
        json j = rep.to_json();
        j["step"] = step;
        log.push_back(std::move(j));
    });
    save_checkpoint(root, r.grid);
    write_lines(root / "train_log.jsonl", log);
    for (std::size_t i = 0; i < views.size(); ++i)
        write_png_rgb(root / "preview" / ("after_" + stem_of(i) + ".png"),
                      render_view(r.grid, views[i].camera, task.render).image);
    json summary{{"mode", to_string(task.mode)}, {"steps", r.state.step}};
    if (!log.empty()) {
        summary["initial_total"] = log.front()["total"];
        summary["final_total"] = log.back()["total"];
    }
    out << summary.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_render(const std::string& grid_in, const std::string& cameras, const std::string& out_dir,
               std::optional<double> background, std::ostream& out) {
    const VoxelGrid grid = load_checkpoint(grid_in);
    const CameraSet set = read_cameras(cameras);
    RenderOptions opts;
    opts.background = background ? Vec3::Constant(*background) : set.background;
    for (std::size_t i = 0; i < set.cameras.size(); ++i)
        write_png_rgb(fs::path(out_dir) / (stem_of(i) + ".png"), render_view(grid, set.cameras[i], opts).image);
    out << json{{"rendered", set.cameras.size()}}.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct MaskArgs {
    std::string bundle, out, embeddings;
    std::vector<std::string> pixels;
    double threshold = kDefaultQueryThreshold;
    std::string feature = kSemanticFeature;
};

int cmd_mask(const MaskArgs& a, std::ostream& out) {
    const Bundle bundle = load_bundle(a.bundle);
    if (a.pixels.empty() == a.embeddings.empty())
        throw Error(ErrorCode::Configuration, "give either --pixel queries or --embeddings");
    const auto table = load_feature_table(bundle, a.feature, FeatureSpace::Semantic);
    const fs::path out_dir = a.out.empty() ? fs::path(a.bundle) / "masks" : fs::path(a.out);

    std::vector<QueryVector> queries;
    std::optional<LabelEmbeddingSet> embeddings;
    if (!a.embeddings.empty()) {
        embeddings = read_embeddings(a.embeddings);
        embeddings->validate(table->begin()->second.channels);
    }
    for (const auto& text : a.pixels) {
        const auto v = parse_numbers(text, "--pixel");
        if (v.size() != 3 && v.size() != 4) throw Error(ErrorCode::Configuration, "--pixel takes x,y,view[,label]");
        const int x = int(v[0]), y = int(v[1]), vi = int(v[2]);
        if (vi < 0 || vi >= int(bundle.views.size())) throw Error(ErrorCode::OutOfBounds, "--pixel view out of range");
        const View& view = bundle.views[vi];
        if (x < 0 || y < 0 || x >= view.gt_image.width || y >= view.gt_image.height)
            throw Error(ErrorCode::OutOfBounds, "--pixel outside the image");
        const FeatureMap& sem = table->at(view.name);
        const int fx = (x * 2 + 1) * sem.width / (2 * view.gt_image.width);
        const int fy = (y * 2 + 1) * sem.height / (2 * view.gt_image.height);
        const auto f = sem.vec(std::size_t(fy) * sem.width + fx);
        queries.push_back({std::vector<double>(f.begin(), f.end()), v.size() == 4 ? int(v[3]) : 1});
    }

    json counts = json::array();
    for (const View& view : bundle.views) {
        const FeatureMap& sem = table->at(view.name);
        const LabelMask m = embeddings ? mask_from_embeddings(sem, *embeddings)
                                       : mask_from_query_vectors(sem, queries, a.threshold);
        const LabelMask full = downsample_mask(m, view.gt_image.height, view.gt_image.width);
        write_png_mask(out_dir / (view.name + ".png"), full);
        json c = json::object();
        for (int l = 0; l <= full.max_label(); ++l)
            if (full.count(l) > 0) c[std::to_string(l)] = full.count(l);
        counts.push_back(c);
    }
    out << json{{"masks", bundle.views.size()}, {"label_counts", counts}}.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_audit(const std::string& grid_in, const std::string& bundle_path, const std::string& task_path,
              const std::string& point, std::ostream& out) {
    const auto p = parse_numbers(point, "--point");
    if (p.size() != 3) throw Error(ErrorCode::Configuration, "--point takes x,y,z");
    const Bundle bundle = load_bundle(bundle_path);
    const TaskSpec task = load_task(task_path, bundle);
    VoxelGrid grid = load_checkpoint(grid_in);
    if (!grid.density_frozen()) grid.freeze_density();
    const std::vector<View> views = prepare_views(bundle.views, task);
    const AuditReport rep = gradient_audit(grid, views, task, Vec3(p[0], p[1], p[2]));
    out << rep.to_json().dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

void write_task_example(const fs::path& path) {
    json j{{"mode", "object-select"},
           {"alpha", 0.5},
           {"lambda", 1e-3},
           {"lambda_tv", 1.0},
           {"preserve_term", true},
           {"labels", json::array({json{{"label", 0}, {"preserve", true}}, json{{"label", 1}, {"style", "styles/stripes.png"}}})},
           {"optimizer", {{"step_size", 1e-2}, {"steps", 100}, {"views_per_step", 0}, {"seed", 0}, {"color_transfer", true}}},
           {"texture_extractor", {{"kind", "random-conv"}, {"seed", 0}, {"kernels", 16}, {"stride", 2}, {"rectify", true}}},
           {"semantic_extractor", {{"kind", "precomputed"}, {"name", kSemanticFeature}}}};
    write_json(path, j);
}

int cmd_fixture(const std::string& kind, std::uint64_t seed, const std::string& out_dir, std::ostream& out) {
    const fs::path root(out_dir);
    Scene scene = [&] {
        if (kind == "box") return build_scene(box_scene_spec(seed));
        if (kind == "occlusion") return build_occlusion_scene(true).scene;
        throw Error(ErrorCode::Configuration, "unknown fixture kind " + kind);
    }();
    const auto views = scene.views();
    CameraSet set;
    set.bbox_min = scene.grid.bbox_min();
    set.bbox_max = scene.grid.bbox_max();
    set.background = scene.render.background;
    save_bundle(root, views, set);

    const Extractor semantic = fixture_semantic_extractor();
    const Extractor texture = Extractor::random_conv_bank(0);
    for (const View& v : views) save_feature(root, v.name, kSemanticFeature, extract(semantic, v.gt_image));

    const std::pair<StyleKind, const char*> styles[] = {
        {StyleKind::Stripes, "stripes"}, {StyleKind::Dots, "dots"}, {StyleKind::TwoRegion, "two_region"}};
    for (const auto& [k, name] : styles) {
        const StyleImage s = build_style_image(k, seed, texture);
        write_png_rgb(root / "styles" / (std::string(name) + ".png"), s.image);
        if (k == StyleKind::TwoRegion) write_png_mask(root / "styles" / "two_region_mask.png", s.mask);
        const Image stored = read_png_rgb(root / "styles" / (std::string(name) + ".png"));
        write_ctns(root / "styles" / (std::string(name) + "." + kSemanticFeature + ".ctns"),
                   feature_to_tensor(extract(semantic, stored)));
    }

    save_checkpoint(root / "gt_grid", scene.grid);
    write_task_example(root / "task.json");
    out << json{{"views", views.size()}, {"out", root.string()}}.dump() << "\n";
    return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Voxel radiance-field training and masked style transfer"};
    app.require_subcommand(1);

    PretrainArgs pa;
    auto* pretrain_cmd = app.add_subcommand("pretrain", "Fit a voxel grid to a view bundle");
    pretrain_cmd->add_option("bundle", pa.bundle)->required();
    pretrain_cmd->add_option("grid_out", pa.grid_out)->required();
    pretrain_cmd->add_option("--steps", pa.steps);
    pretrain_cmd->add_option("--seed", pa.seed);
    pretrain_cmd->add_option("--dims", pa.dims, "n or nx,ny,nz");
    pretrain_cmd->add_option("--sh-degree", pa.sh_degree);
    pretrain_cmd->add_option("--density-step", pa.density_step);
    pretrain_cmd->add_option("--sh-step", pa.sh_step);
    pretrain_cmd->add_option("--log", pa.log, "default: <grid_out>/pretrain_log.jsonl");

    StylizeArgs sa;
    auto* stylize_cmd = app.add_subcommand("stylize", "Stylize a pretrained grid per task.json");
    stylize_cmd->add_option("bundle", sa.bundle)->required();
    stylize_cmd->add_option("grid_in", sa.grid_in)->required();
    stylize_cmd->add_option("task", sa.task)->required();
    stylize_cmd->add_option("grid_out", sa.grid_out)->required();
    stylize_cmd->add_option("--mode", sa.mode);
    stylize_cmd->add_option("--alpha", sa.alpha);
    stylize_cmd->add_option("--lambda", sa.lambda);
    stylize_cmd->add_option("--lambda-tv", sa.lambda_tv);
    stylize_cmd->add_option("--steps", sa.steps);
    stylize_cmd->add_option("--seed", sa.seed);
    stylize_cmd->add_option("--step-size", sa.step_size);
    stylize_cmd->add_option("--views-per-step", sa.views_per_step);
    stylize_cmd->add_flag("--no-preserve", sa.no_preserve);
    stylize_cmd->add_flag("--no-color-transfer", sa.no_color_transfer);

    std::string r_grid, r_cameras, r_out;
    std::optional<double> r_background;
    auto* render_cmd = app.add_subcommand("render", "Render a checkpoint from cameras.json");
    render_cmd->add_option("grid_in", r_grid)->required();
    render_cmd->add_option("cameras", r_cameras)->required();
    render_cmd->add_option("out_dir", r_out)->required();
    render_cmd->add_option("--background", r_background);

    MaskArgs ma;
    auto* mask_cmd = app.add_subcommand("mask", "Label masks from semantic features");
    mask_cmd->add_option("bundle", ma.bundle)->required();
    mask_cmd->add_option("--pixel", ma.pixels, "x,y,view[,label]; repeatable");
    mask_cmd->add_option("--embeddings", ma.embeddings);
    mask_cmd->add_option("--threshold", ma.threshold);
    mask_cmd->add_option("--feature", ma.feature);
    mask_cmd->add_option("--out", ma.out, "default: <bundle>/masks");

    std::string a_grid, a_bundle, a_task, a_point;
    auto* audit_cmd = app.add_subcommand("audit", "Per-view gradient contributions at a point");
    audit_cmd->add_option("grid_in", a_grid)->required();
    audit_cmd->add_option("bundle", a_bundle)->required();
    audit_cmd->add_option("task", a_task)->required();
    audit_cmd->add_option("--point", a_point, "x,y,z")->required();

    std::string f_kind = "box", f_out;
    std::uint64_t f_seed = 0;
    auto* fixture_cmd = app.add_subcommand("fixture", "Export a synthetic scene as a view bundle");
    fixture_cmd->add_option("--kind", f_kind, "box | occlusion");
    fixture_cmd->add_option("--seed", f_seed);
    fixture_cmd->add_option("--out", f_out)->required();

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*pretrain_cmd) return cmd_pretrain(pa, out);
        if (*stylize_cmd) return cmd_stylize(sa, out);
        if (*render_cmd) return cmd_render(r_grid, r_cameras, r_out, r_background, out);
        if (*mask_cmd) return cmd_mask(ma, out);
        if (*audit_cmd) return cmd_audit(a_grid, a_bundle, a_task, a_point, out);
        if (*fixture_cmd) return cmd_fixture(f_kind, f_seed, f_out, out);
    } catch (const Error& e) {
        err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
        return e.code() == ErrorCode::Divergence ? 3 : 2;
    } catch (const fs::filesystem_error& e) {
        err << "error (io): " << e.what() << "\n";
        return 2;
    }
    return 2;
}

}  // namespace rfstyle
