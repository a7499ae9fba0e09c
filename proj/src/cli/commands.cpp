#include <algorithm>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "skeldiff/ad/checkpoint.hpp"
#include "skeldiff/cli/app.hpp"
#include "skeldiff/cli/experiment.hpp"
#include "skeldiff/cli/run_config.hpp"
#include "skeldiff/error.hpp"
#include "skeldiff/metrics.hpp"
#include "skeldiff/models/train.hpp"
#include "skeldiff/sampler.hpp"

namespace skeldiff::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Model loading

struct LoadedDenoiser {
    std::unique_ptr<models::Denoiser> model;
    NoiseSchedule sched;
    NormParams norm;
    std::size_t joints = 0;
    int num_classes = 0;
};

struct LoadedClassifier {
    std::unique_ptr<models::STTrans> model;
    NormParams norm;
    std::size_t joints = 0;
};

void expect_kind(const ad::Checkpoint& ck, const std::string& kind, const std::string& path) {
    if (ck.meta.value("kind", "") != kind) fail(ErrorCategory::format, path + ": not a " + kind + " checkpoint");
}

LoadedDenoiser load_denoiser(const std::string& path) {
    const ad::Checkpoint ck = ad::load_checkpoint(path);
    expect_kind(ck, "denoiser", path);
    LoadedDenoiser out;
    try {
        out.model = std::make_unique<models::Denoiser>(ck.meta.at("config").get<models::DenoiserConfig>(), 0);
        out.sched = make_schedule(parse_schedule_kind(ck.meta.at("schedule").at("kind").get<std::string>()),
                                  ck.meta.at("schedule").at("steps").get<int>());
        out.norm = norm_from_json(ck.meta.at("norm"));
        out.joints = ck.meta.at("num_joints").get<std::size_t>();
        out.num_classes = ck.meta.at("num_classes").get<int>();
    } catch (const json::exception& e) {
        fail(ErrorCategory::format, path + ": bad checkpoint metadata: " + e.what());
    }
    out.model->params().load(ck);
    out.model->params().freeze();
    return out;
}

LoadedClassifier load_classifier(const std::string& path) {
    const ad::Checkpoint ck = ad::load_checkpoint(path);
    expect_kind(ck, "classifier", path);
    LoadedClassifier out;
    try {
        out.model = std::make_unique<models::STTrans>(ck.meta.at("config").get<models::STTransConfig>(), 0);
        out.norm = norm_from_json(ck.meta.at("norm"));
        out.joints = ck.meta.at("num_joints").get<std::size_t>();
    } catch (const json::exception& e) {
        fail(ErrorCategory::format, path + ": bad checkpoint metadata: " + e.what());
    }
    out.model->params().load(ck);
    out.model->params().freeze();
    return out;
}

NormParams norm_for(const json& cfg, const Dataset& ds) {
    const auto path = get<std::string>(cfg, "norm");
    if (!path.empty()) return norm_from_json(read_json(path));
    return fit_norm_params(ds.items);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    f << text;
    if (!f) fail(ErrorCategory::io, "cannot write " + path.string());
}

std::string loss_csv(const std::vector<models::LossRow>& rows) {
    std::ostringstream out;
    out << "step,loss,lr\n";
    for (const auto& r : rows) out << r.step << ',' << fmt(r.loss, 8) << ',' << fmt(r.lr, 8) << '\n';
    return out.str();
}

// Guide used when the scale is zero and no classifier is given; never called.
class NoGuide final : public Guide {
public:
    ad::Tensor grad_log_prob(const ad::Tensor&, std::span<const std::size_t>) const override {
        fail(ErrorCategory::config, "guidance scale is nonzero but no classifier was given");
    }
};

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_toy(RunContext& ctx, const json& cfg) {
    ToyGenConfig tc;
    tc.num_classes = get<int>(cfg, "num_classes");
    tc.samples_per_class = get<int>(cfg, "samples_per_class");
    tc.num_joints = static_cast<std::size_t>(get<int>(cfg, "num_joints"));
    tc.num_frames = tc.num_joints;
    tc.noise_std = get<double>(cfg, "noise_std");
    tc.seed = get<std::uint64_t>(cfg, "seed");
    const Dataset ds = gen_toy(tc);
    std::vector<std::string> warnings;
    const NormParams norm = fit_norm_params(ds.items, &warnings);
    for (const auto& w : warnings) ctx.log("warning: " + w);
    save_jsonl(ds, ctx.path("dataset.jsonl"));
    write_json(ctx.path("norm.json"), norm_to_json(norm));
    ctx.log("generated " + std::to_string(ds.size()) + " sequences, " + std::to_string(ds.num_classes) + " classes");
}

void cmd_split(RunContext& ctx, const json& cfg) {
    const Dataset ds = load_jsonl(get_path(cfg, "data"));
    const auto subjects = get<std::vector<int>>(cfg, "eval_subjects");
    const auto [train, eval] = split_by_subject(ds, std::set<int>(subjects.begin(), subjects.end()));
    save_jsonl(train, ctx.path("train.jsonl"));
    save_jsonl(eval, ctx.path("eval.jsonl"));
    ctx.log("train " + std::to_string(train.size()) + " eval " + std::to_string(eval.size()));
}

void cmd_train_denoiser(RunContext& ctx, const json& cfg) {
    const Dataset ds = load_jsonl(get_path(cfg, "data"));
    const NormParams norm = norm_for(cfg, ds);
    const auto mcfg = get<json>(cfg, "model").get<models::DenoiserConfig>();
    const auto tcfg = get<json>(cfg, "train").get<models::TrainConfig>();
    const NoiseSchedule sched =
        make_schedule(parse_schedule_kind(get<std::string>(cfg, "schedule/kind")), get<int>(cfg, "schedule/steps"));
    models::Denoiser model(mcfg, derive_seed(tcfg.seed, 1));
    const json meta{{"kind", "denoiser"},
                    {"config", mcfg},
                    {"schedule", {{"kind", schedule_kind_name(sched.kind)}, {"steps", sched.steps}}},
                    {"norm", norm_to_json(norm)},
                    {"num_joints", ds.num_joints},
                    {"num_classes", ds.num_classes},
                    {"train", tcfg}};
    ctx.log("denoiser parameters: " + std::to_string(model.params().count()));
    models::TrainHooks hooks;
    hooks.on_log = [&](const models::LossRow& r) { ctx.log("step " + std::to_string(r.step) + " loss " + fmt(r.loss, 6)); };
    hooks.on_checkpoint = [&](int step) {
        ad::save_checkpoint(ctx.path("denoiser_step" + std::to_string(step) + ".ckpt"), model.params().to_checkpoint(meta));
    };
    const auto rows = models::train_denoiser(model, models::images_tensor(ds, norm), sched, tcfg, hooks);
    write_text(ctx.path("loss.csv"), loss_csv(rows));
    ad::save_checkpoint(ctx.path("denoiser.ckpt"), model.params().to_checkpoint(meta));
}

void cmd_train_classifier(RunContext& ctx, const json& cfg) {
    const Dataset ds = load_jsonl(get_path(cfg, "data"));
    const NormParams norm = norm_for(cfg, ds);
    auto mcfg = get<json>(cfg, "model").get<models::STTransConfig>();
    if (mcfg.num_classes == 0) mcfg.num_classes = ds.num_classes;
    if (mcfg.num_classes != ds.num_classes)
        fail(ErrorCategory::config, "model.num_classes " + std::to_string(mcfg.num_classes) + " does not match the dataset's " +
                                        std::to_string(ds.num_classes));
    const auto tcfg = get<json>(cfg, "train").get<models::TrainConfig>();
    Dataset eval;
    if (const auto p = get<std::string>(cfg, "eval_data"); !p.empty()) eval = load_jsonl(p);

    models::STTrans model(mcfg, derive_seed(tcfg.seed, 1));
    const json meta{{"kind", "classifier"}, {"config", mcfg}, {"norm", norm_to_json(norm)}, {"num_joints", ds.num_joints},
                    {"train", tcfg}};
    std::vector<models::LossRow> rows;
    models::TrainHooks hooks;
    hooks.on_log = [&](const models::LossRow& r) { rows.push_back(r); };
    hooks.on_epoch = [&](const models::EpochRecord& e) {
        ctx.log("epoch " + std::to_string(e.epoch) + " loss " + fmt(e.mean_loss, 6) + " train_acc " + fmt(e.train_accuracy, 4) +
                (e.eval_accuracy >= 0.0 ? " eval_acc " + fmt(e.eval_accuracy, 4) : std::string()));
    };
    hooks.on_checkpoint = [&](int step) {
        ad::save_checkpoint(ctx.path("classifier_step" + std::to_string(step) + ".ckpt"), model.params().to_checkpoint(meta));
    };
    const ad::Tensor eval_images = eval.size() ? models::images_tensor(eval, norm) : ad::Tensor({0});
    const auto epochs = models::train_classifier(model, models::images_tensor(ds, norm), models::labels_of(ds), eval_images,
                                                 models::labels_of(eval), tcfg, hooks);
    std::ostringstream ep;
    ep << "epoch,train_accuracy,eval_accuracy,mean_loss\n";
    for (const auto& e : epochs)
        ep << e.epoch << ',' << fmt(e.train_accuracy, 6) << ',' << fmt(e.eval_accuracy, 6) << ',' << fmt(e.mean_loss, 8) << '\n';
    write_text(ctx.path("epochs.csv"), ep.str());
    write_text(ctx.path("loss.csv"), loss_csv(rows));
    ad::save_checkpoint(ctx.path("classifier.ckpt"), model.params().to_checkpoint(meta));
}

GuidanceConfig guidance_of(const json& cfg) { return get<json>(cfg, "guidance").get<GuidanceConfig>(); }

// Shared by sample and generate: loads the models and runs generate_dataset.
Dataset run_generation(RunContext& ctx, const json& cfg, std::vector<int> counts, const GuidanceConfig& g) {
    const LoadedDenoiser den = load_denoiser(get_path(cfg, "denoiser"));
    if (const int steps = get<int>(cfg, "steps"); steps != 0 && steps != den.sched.steps)
        fail(ErrorCategory::config, "steps " + std::to_string(steps) + " does not match the denoiser's schedule (" +
                                        std::to_string(den.sched.steps) + " steps)");
    LoadedClassifier cls;
    const auto cls_path = get<std::string>(cfg, "classifier");
    if (!cls_path.empty()) {
        cls = load_classifier(cls_path);
        if (cls.model->config().num_classes != den.num_classes || cls.joints != den.joints)
            fail(ErrorCategory::config, "classifier and denoiser were trained on different class or joint counts");
    } else if (g.scale != 0.0) {
        fail(ErrorCategory::config, "a classifier checkpoint is required when the guidance scale is nonzero");
    }
    if (counts.size() > static_cast<std::size_t>(den.num_classes))
        fail(ErrorCategory::config, "more class counts than the model's " + std::to_string(den.num_classes) + " classes");
    counts.resize(static_cast<std::size_t>(den.num_classes), 0);

    const models::Denoiser& model = *den.model;
    const EpsModel eps = [&model](const ad::Tensor& x, int t) { return model.predict(x, t); };
    NoGuide none;
    std::unique_ptr<ClassifierGuide> guide;
    if (cls.model) guide = std::make_unique<ClassifierGuide>(*cls.model);
    const ImageMeta meta = centered_meta(den.joints, den.norm, den.joints);
    GenerationReport report;
    Dataset ds = generate_dataset(eps, guide ? static_cast<const Guide&>(*guide) : none, counts, den.sched, g, meta, &report);
    ds.topology.clear();
    for (const auto& id : report.flagged) ctx.log("flagged out-of-range sample " + id);
    write_json(ctx.path("generation.json"), {{"flagged", report.flagged}, {"counts", counts}, {"guidance", g}});
    return ds;
}

void cmd_sample(RunContext& ctx, const json& cfg) {
    const int label = get<int>(cfg, "label");
    const int count = get<int>(cfg, "count");
    if (label < 0 || count < 0) fail(ErrorCategory::config, "label and count must be >= 0");
    std::vector<int> counts(static_cast<std::size_t>(label) + 1, 0);
    counts.back() = count;
    const Dataset ds = run_generation(ctx, cfg, counts, guidance_of(cfg));
    save_jsonl(ds, ctx.path("samples.jsonl"));
    if (get<bool>(cfg, "dump_images")) {
        const LoadedDenoiser den = load_denoiser(get_path(cfg, "denoiser"));
        for (const auto& seq : ds.items) save_image(ctx.path(seq.seq_id + ".img"), encode(seq, den.norm));
    }
    ctx.log("sampled " + std::to_string(ds.size()) + " sequences of class " + std::to_string(label));
}

void cmd_generate(RunContext& ctx, const json& cfg) {
    auto counts = get<std::vector<int>>(cfg, "counts");
    const int per_class = get<int>(cfg, "count");
    if (counts.empty()) {
        const LoadedDenoiser den = load_denoiser(get_path(cfg, "denoiser"));
        counts.assign(static_cast<std::size_t>(den.num_classes), per_class);
    }
    const Dataset ds = run_generation(ctx, cfg, counts, guidance_of(cfg));
    save_jsonl(ds, ctx.path("synthetic.jsonl"));
    ctx.log("generated " + std::to_string(ds.size()) + " sequences");
}

void cmd_evaluate(RunContext& ctx, const json& cfg) {
    const LoadedClassifier cls = load_classifier(get_path(cfg, "classifier"));
    const Dataset real = load_jsonl(get_path(cfg, "real"));
    const Dataset synth = load_jsonl(get_path(cfg, "synth"));
    const auto n_pairs = static_cast<std::size_t>(get<int>(cfg, "n_pairs"));
    const auto seed = get<std::uint64_t>(cfg, "seed");

    FeatureSet fr = extract_features(*cls.model, real, cls.norm);
    FeatureSet fsyn = extract_features(*cls.model, synth, cls.norm);
    if (get<bool>(cfg, "l2_normalize")) {
        l2_normalize(fr);
        l2_normalize(fsyn);
    }
    const double fid_value = fid(fit_stats(fsyn), fit_stats(fr));
    const double acc = recognition_accuracy(*cls.model, synth, cls.norm);
    const double odiv = overall_diversity(fsyn, fr, n_pairs, seed);
    const PerActionDiversity pa = per_action_diversity(fsyn, fr, real.num_classes, n_pairs, derive_seed(seed, 1));
    const json report{{"fid", fid_value},
                      {"accuracy", acc},
                      {"overall_diversity", odiv},
                      {"per_action_diversity", pa.per_class},
                      {"per_action_diversity_mean", pa.mean},
                      {"config", cfg},
                      {"seeds", {{"pairs", seed}, {"per_action", derive_seed(seed, 1)}}}};
    write_json(ctx.path("report.json"), report);
    std::ostringstream csv;
    csv << "metric,value\n"
        << "fid," << fmt(fid_value, 8) << "\naccuracy," << fmt(acc, 6) << "\noverall_diversity," << fmt(odiv, 8)
        << "\nper_action_diversity_mean," << fmt(pa.mean, 8) << '\n';
    write_text(ctx.path("report.csv"), csv.str());
    ctx.log("fid " + fmt(fid_value, 6) + " accuracy " + fmt(acc, 4) + " overall_diversity " + fmt(odiv, 6) +
            " per_action_diversity " + fmt(pa.mean, 6));
}

void cmd_augment(RunContext& ctx, const json& cfg) {
    const Dataset real = load_jsonl(get_path(cfg, "real"));
    const Dataset synth = load_jsonl(get_path(cfg, "synth"));
    const Dataset eval = load_jsonl(get_path(cfg, "eval"));
    AugmentConfig ac;
    ac.mode = parse_mix_mode(get<std::string>(cfg, "mode"));
    ac.proportions = get<std::vector<double>>(cfg, "proportions");
    ac.trials = get<int>(cfg, "trials");
    ac.seed = get<std::uint64_t>(cfg, "seed");
    ac.model = get<json>(cfg, "model").get<models::STTransConfig>();
    if (ac.model.num_classes == 0) ac.model.num_classes = real.num_classes;
    ac.train = get<json>(cfg, "train").get<models::TrainConfig>();
    const auto cells = run_augment_experiment(real, synth, eval, norm_for(cfg, real), ac, [&](const std::string& s) { ctx.log(s); });
    write_json(ctx.path("report.json"), {{"mode", mix_mode_name(ac.mode)}, {"cells", augment_report_json(cells)}, {"config", cfg}});
    write_text(ctx.path("report.csv"), augment_report_csv(cells));
    for (const auto& c : cells)
        ctx.log("p=" + fmt(c.proportion, 3) + " mean=" + fmt(c.summary.mean, 4) + " +/- " + fmt(c.summary.half_width, 4));
}

void cmd_schedule(RunContext& ctx, const json& cfg) {
    const NoiseSchedule s = make_schedule(parse_schedule_kind(get<std::string>(cfg, "kind")), get<int>(cfg, "steps"));
    std::ofstream f(ctx.path("schedule.csv"), std::ios::trunc);
    write_schedule_csv(f, s);
    if (!f) fail(ErrorCategory::io, "cannot write schedule.csv");
    ctx.log("alpha_bar_T " + fmt(s.alpha_bar(s.steps), 12));
}

// ---------------------------------------------------------------------------
// Flag plumbing: every flag overrides one key of the resolved configuration.

enum class Kind { text, integer, number, integers, numbers, boolean, negation };  // negation stores false

struct FlagSpec {
    std::string flag;
    std::string key;
    Kind kind;
    std::string help;
};

struct CommandSpec {
    std::string name;
    std::string help;
    json defaults;
    std::vector<FlagSpec> flags;
    void (*run)(RunContext&, const json&);
};

json train_defaults(double lr, int batch, int iterations) {
    models::TrainConfig t;
    t.lr = lr;
    t.batch_size = batch;
    t.iterations = iterations;
    t.log_every = 10;
    return t;
}

std::vector<FlagSpec> train_flags() {
    return {{"--lr", "train/lr", Kind::number, "learning rate"},
            {"--batch-size", "train/batch_size", Kind::integer, "batch size"},
            {"--iterations", "train/iterations", Kind::integer, "optimizer steps"},
            {"--seed", "train/seed", Kind::integer, "training seed"},
            {"--checkpoint-every", "train/checkpoint_every", Kind::integer, "intermediate checkpoint period (0 = off)"},
            {"--log-every", "train/log_every", Kind::integer, "loss log period"}};
}

std::vector<FlagSpec> guidance_flags() {
    return {{"--scale", "guidance/scale", Kind::number, "guidance scale s"},
            {"--sigma", "guidance/sigma", Kind::text, "reverse variance: beta | beta_tilde"},
            {"--sign", "guidance/sign", Kind::text, "gradient sign: corrected | paper"},
            {"--scaling", "guidance/scaling", Kind::text, "gradient scaling: variance | stddev"},
            {"--seed", "guidance/seed", Kind::integer, "sampling seed"},
            {"--batch", "guidance/batch", Kind::integer, "chains per batch"},
            {"--clip-x0", "guidance/clip_x0", Kind::number, "clamp for the clean-image estimate (0 disables)"},
            {"--keep-padding", "guidance/mask_padding", Kind::negation, "do not zero the clean estimate outside the content block"},
            {"--steps", "steps", Kind::integer, "diffusion steps (must match the denoiser; 0 = use it)"}};
}

std::vector<CommandSpec> command_table() {
    std::vector<CommandSpec> cmds;
    cmds.push_back({"gen-toy", "Generate the procedural toy action corpus",
                    {{"out", ""}, {"num_classes", 4}, {"samples_per_class", 100}, {"num_joints", 16}, {"noise_std", 0.01}, {"seed", 0}},
                    {{"--num-classes", "num_classes", Kind::integer, "number of action classes (2..8)"},
                     {"--samples-per-class", "samples_per_class", Kind::integer, "sequences per class"},
                     {"--num-joints", "num_joints", Kind::integer, "joints (= frames), 16..32"},
                     {"--noise-std", "noise_std", Kind::number, "coordinate noise std"},
                     {"--seed", "seed", Kind::integer, "generator seed"}},
                    cmd_gen_toy});
    cmds.push_back({"split", "Cross-subject split of a dataset",
                    {{"data", ""}, {"out", ""}, {"eval_subjects", {8, 9}}},
                    {{"--data", "data", Kind::text, "input dataset (JSONL)"},
                     {"--eval-subjects", "eval_subjects", Kind::integers, "subject ids held out for evaluation"}},
                    cmd_split});
    {
        std::vector<FlagSpec> f{{"--data", "data", Kind::text, "training dataset (JSONL)"},
                                {"--norm", "norm", Kind::text, "normalization parameters (JSON); fitted when empty"},
                                {"--schedule", "schedule/kind", Kind::text, "noise schedule: linear | cosine"},
                                {"--steps", "schedule/steps", Kind::integer, "diffusion steps T"},
                                {"--base-channels", "model/base_channels", Kind::integer, "U-Net base channels"},
                                {"--res-blocks", "model/res_blocks", Kind::integer, "residual blocks per resolution"}};
        for (auto& t : train_flags()) f.push_back(t);
        cmds.push_back({"train-denoiser", "Train the noise-prediction network",
                        {{"data", ""},
                         {"norm", ""},
                         {"out", ""},
                         {"model", models::DenoiserConfig{}},
                         {"schedule", {{"kind", "cosine"}, {"steps", 200}}},
                         {"train", train_defaults(1e-4, 32, 1000)}},
                        f, cmd_train_denoiser});
    }
    {
        std::vector<FlagSpec> f{{"--data", "data", Kind::text, "training dataset (JSONL)"},
                                {"--eval-data", "eval_data", Kind::text, "evaluation dataset (JSONL), optional"},
                                {"--norm", "norm", Kind::text, "normalization parameters (JSON); fitted when empty"},
                                {"--embed-dim", "model/embed_dim", Kind::integer, "token width"},
                                {"--depth", "model/depth", Kind::integer, "attention blocks"},
                                {"--heads", "model/heads", Kind::integer, "attention heads"},
                                {"--patch-size", "model/patch_size", Kind::integer, "patch edge in pixels"}};
        for (auto& t : train_flags()) f.push_back(t);
        models::STTransConfig m;
        m.num_classes = 0;
        cmds.push_back({"train-classifier", "Train the patch-attention classifier on clean images",
                        {{"data", ""}, {"eval_data", ""}, {"norm", ""}, {"out", ""}, {"model", m}, {"train", train_defaults(1e-4, 32, 1000)}},
                        f, cmd_train_classifier});
    }
    {
        std::vector<FlagSpec> f{{"--denoiser", "denoiser", Kind::text, "denoiser checkpoint"},
                                {"--classifier", "classifier", Kind::text, "classifier checkpoint (optional at scale 0)"},
                                {"--label", "label", Kind::integer, "target class"},
                                {"--count", "count", Kind::integer, "number of samples"},
                                {"--dump-images", "dump_images", Kind::boolean, "also write raw skeleton images"}};
        for (auto& g : guidance_flags()) f.push_back(g);
        cmds.push_back({"sample", "Guided sampling of one class",
                        {{"denoiser", ""}, {"classifier", ""}, {"out", ""}, {"label", 0}, {"count", 1}, {"steps", 0},
                         {"dump_images", false}, {"guidance", GuidanceConfig{}}},
                        f, cmd_sample});
    }
    {
        std::vector<FlagSpec> f{{"--denoiser", "denoiser", Kind::text, "denoiser checkpoint"},
                                {"--classifier", "classifier", Kind::text, "classifier checkpoint (optional at scale 0)"},
                                {"--counts", "counts", Kind::integers, "samples per class, in class order"},
                                {"--count", "count", Kind::integer, "samples for every class when --counts is absent"}};
        for (auto& g : guidance_flags()) f.push_back(g);
        cmds.push_back({"generate", "Generate a synthetic dataset",
                        {{"denoiser", ""}, {"classifier", ""}, {"out", ""}, {"counts", json::array()}, {"count", 10}, {"steps", 0},
                         {"guidance", GuidanceConfig{}}},
                        f, cmd_generate});
    }
    cmds.push_back({"evaluate", "FID, recognition accuracy and diversity of a synthetic set",
                    {{"classifier", ""}, {"real", ""}, {"synth", ""}, {"out", ""}, {"n_pairs", 200}, {"seed", 0}, {"l2_normalize", false}},
                    {{"--classifier", "classifier", Kind::text, "feature extractor / recognizer checkpoint"},
                     {"--real", "real", Kind::text, "real dataset (JSONL)"},
                     {"--synth", "synth", Kind::text, "synthetic dataset (JSONL)"},
                     {"--n-pairs", "n_pairs", Kind::integer, "sampled pairs for the diversity metrics"},
                     {"--seed", "seed", Kind::integer, "pair sampling seed"},
                     {"--l2-normalize", "l2_normalize", Kind::boolean, "scale features to unit length before the metrics"}},
                    cmd_evaluate});
    {
        std::vector<FlagSpec> f{{"--real", "real", Kind::text, "real training dataset (JSONL)"},
                                {"--synth", "synth", Kind::text, "synthetic pool (JSONL)"},
                                {"--eval", "eval", Kind::text, "evaluation dataset (JSONL)"},
                                {"--norm", "norm", Kind::text, "normalization parameters (JSON); fitted on real when empty"},
                                {"--mode", "mode", Kind::text, "replace | add"},
                                {"--proportions", "proportions", Kind::numbers, "synthetic proportions"},
                                {"--trials", "trials", Kind::integer, "trials per proportion"},
                                {"--experiment-seed", "seed", Kind::integer, "experiment seed"},
                                {"--embed-dim", "model/embed_dim", Kind::integer, "classifier token width"},
                                {"--depth", "model/depth", Kind::integer, "classifier attention blocks"},
                                {"--heads", "model/heads", Kind::integer, "classifier attention heads"}};
        for (auto& t : train_flags()) f.push_back(t);
        models::STTransConfig m;
        m.num_classes = 0;
        cmds.push_back({"augment-experiment", "Replacement / incremental augmentation study",
                        {{"real", ""}, {"synth", ""}, {"eval", ""}, {"norm", ""}, {"out", ""}, {"mode", "add"},
                         {"proportions", {0.0, 0.2, 0.4}}, {"trials", 5}, {"seed", 0}, {"model", m},
                         {"train", train_defaults(1e-4, 32, 1000)}},
                        f, cmd_augment});
    }
    cmds.push_back({"schedule", "Write a noise schedule as CSV",
                    {{"out", ""}, {"kind", "cosine"}, {"steps", 200}},
                    {{"--kind", "kind", Kind::text, "linear | cosine"}, {"--steps", "steps", Kind::integer, "diffusion steps T"}},
                    cmd_schedule});
    return cmds;
}

json convert(const FlagSpec& f, const std::vector<std::string>& raw) {
    auto bad = [&](const std::string& v) -> json {
        fail(ErrorCategory::config, "invalid value '" + v + "' for " + f.flag);
    };
    auto to_int = [&](const std::string& v) -> json {
        std::size_t used = 0;
        long long x = 0;
        try {
            x = std::stoll(v, &used);
        } catch (const std::exception&) {
            return bad(v);
        }
        if (used != v.size()) return bad(v);
        return x;
    };
    auto to_num = [&](const std::string& v) -> json {
        std::size_t used = 0;
        double x = 0;
        try {
            x = std::stod(v, &used);
        } catch (const std::exception&) {
            return bad(v);
        }
        if (used != v.size()) return bad(v);
        return x;
    };
    switch (f.kind) {
        case Kind::text: return raw.back();
        case Kind::integer: return to_int(raw.back());
        case Kind::number: return to_num(raw.back());
        case Kind::boolean: return true;
        case Kind::negation: return false;
        case Kind::integers:
        case Kind::numbers: {
            json arr = json::array();
            for (const auto& v : raw) arr.push_back(f.kind == Kind::integers ? to_int(v) : to_num(v));
            return arr;
        }
    }
    return nullptr;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    const auto table = command_table();
    CLI::App app{"Diffusion-based skeleton action augmentation", "skeldiff"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    struct Bound {
        CLI::App* sub;
        std::string config_path;
        std::string out_dir;
        std::vector<std::vector<std::string>> raw;
        std::vector<CLI::Option*> opts;
    };
    std::vector<Bound> bound(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        auto& b = bound[i];
        b.sub = app.add_subcommand(table[i].name, table[i].help);
        b.sub->add_option("--config", b.config_path, "JSON configuration file; flags override it");
        b.sub->add_option("--out", b.out_dir, "output directory");
        b.raw.resize(table[i].flags.size());
        for (std::size_t k = 0; k < table[i].flags.size(); ++k) {
            const auto& f = table[i].flags[k];
            CLI::Option* o = nullptr;
            if (f.kind == Kind::boolean || f.kind == Kind::negation) {
                o = b.sub->add_flag(f.flag, f.help);
            } else {
                o = b.sub->add_option(f.flag, b.raw[k], f.help);
                if (f.kind == Kind::integers || f.kind == Kind::numbers)
                    o->delimiter(',')->expected(1, -1);
                else
                    o->expected(1);
            }
            b.opts.push_back(o);
        }
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code != 0) err << "error: config: command line: " << e.what() << '\n';
        return code;
    }

    try {
        for (std::size_t i = 0; i < table.size(); ++i) {
            auto& b = bound[i];
            if (!b.sub->parsed()) continue;
            const auto& spec = table[i];
            json cfg = spec.defaults;
            if (!b.config_path.empty()) {
                json file = read_json(b.config_path);
                if (!file.is_object()) fail(ErrorCategory::config, b.config_path + ": configuration must be a JSON object");
                file.erase("command");
                file.erase("version");
                cfg.merge_patch(file);
            }
            for (std::size_t k = 0; k < spec.flags.size(); ++k)
                if (b.opts[k]->count() > 0) cfg[json::json_pointer("/" + spec.flags[k].key)] = convert(spec.flags[k], b.raw[k]);
            if (!b.out_dir.empty()) cfg["out"] = b.out_dir;
            RunContext ctx(get_path(cfg, "out"), spec.name, cfg, out);
            spec.run(ctx, cfg);
            return 0;
        }
    } catch (const Error& e) {
        err << "error: " << category_name(e.category()) << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: internal: " << e.what() << '\n';
        return 3;
    }
    return 1;
}

}  // namespace skeldiff::cli
