#include "skeldiff/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "skeldiff/error.hpp"
#include "skeldiff/rng.hpp"

namespace skeldiff {

std::string provenance_name(Provenance p) {
    switch (p) {
        case Provenance::real: return "real";
        case Provenance::synthetic: return "synthetic";
        case Provenance::mixed: return "mixed";
    }
    return "real";
}

Provenance parse_provenance(const std::string& s) {
    if (s == "real") return Provenance::real;
    if (s == "synthetic") return Provenance::synthetic;
    if (s == "mixed") return Provenance::mixed;
    fail(ErrorCategory::format, "unknown provenance '" + s + "'");
}

void Dataset::validate() const {
    if (num_classes < 1) fail(ErrorCategory::invalid_argument, "dataset: num_classes must be >= 1");
    for (const auto& [p, c] : topology) {
        if (p < 0 || c < 0 || static_cast<std::size_t>(p) >= num_joints || static_cast<std::size_t>(c) >= num_joints)
            fail(ErrorCategory::invalid_argument, "dataset: topology edge (" + std::to_string(p) + ", " + std::to_string(c) +
                                                      ") references a missing joint");
    }
    for (const auto& it : items) {
        if (it.label < 0 || it.label >= num_classes)
            fail(ErrorCategory::invalid_argument, "dataset: item '" + it.seq_id + "' label " + std::to_string(it.label) +
                                                      " outside 0.." + std::to_string(num_classes - 1));
        if (it.num_joints != num_joints)
            fail(ErrorCategory::invalid_argument, "dataset: item '" + it.seq_id + "' has " + std::to_string(it.num_joints) +
                                                      " joints, dataset has " + std::to_string(num_joints));
        if (it.num_frames < 1 || it.coords.size() != it.num_frames * it.num_joints * 3)
            fail(ErrorCategory::shape, "dataset: item '" + it.seq_id + "' coordinate count mismatch");
    }
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
    for (const auto& it : items) ++counts.at(static_cast<std::size_t>(it.label));
    return counts;
}

std::vector<std::size_t> class_indices(const Dataset& ds, int label) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.items.size(); ++i)
        if (ds.items[i].label == label) out.push_back(i);
    return out;
}

// ---------------------------------------------------------------------------
// Toy generator

namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;

constexpr std::size_t kBaseJoints = 16;

// Parent of each base joint (-1 for the pelvis) and rest position in meters.
constexpr int kParent[kBaseJoints] = {-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 11, 0, 13, 14};
constexpr Vec3 kRest[kBaseJoints] = {
    {0.0, 1.00, 0.0},    {0.0, 1.25, 0.0},    {0.0, 1.50, 0.0},    {0.0, 1.68, 0.0},
    {-0.18, 1.45, 0.0},  {-0.18, 1.17, 0.0},  {-0.18, 0.92, 0.0},  {0.18, 1.45, 0.0},
    {0.18, 1.17, 0.0},   {0.18, 0.92, 0.0},   {-0.10, 0.95, 0.0},  {-0.10, 0.52, 0.0},
    {-0.10, 0.08, 0.0},  {0.10, 0.95, 0.0},   {0.10, 0.52, 0.0},   {0.10, 0.08, 0.0},
};

enum Joint { pelvis = 0, spine = 1, neck = 2, l_shoulder = 4, l_elbow = 5, r_shoulder = 7, r_elbow = 8,
             l_hip = 10, l_knee = 11, r_hip = 13, r_knee = 14 };

Mat3 identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 rot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {1, 0, 0, 0, c, -s, 0, s, c};
}
Mat3 rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {c, 0, s, 0, 1, 0, -s, 0, c};
}
Mat3 rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {c, -s, 0, s, c, 0, 0, 0, 1};
}

Mat3 matmul3(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return r;
}

Vec3 rotate(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

struct Pose {
    std::array<Mat3, kBaseJoints> local;
    Vec3 root_shift{0.0, 0.0, 0.0};
    Pose() { local.fill(identity()); }
};

// Per-sample variation shared by all classes.
struct SampleStyle {
    double amplitude;
    double phase;
    double speed;
    double body_scale;
    double yaw;
    Vec3 root;
    double cycles;
};

// Smooth bump on [0, 1]: 0 at both ends, 1 in the middle.
double bump(double u) {
    u = std::clamp(u, 0.0, 1.0);
    return std::sin(std::numbers::pi * u);
}

void animate(int cls, double tau, const SampleStyle& s, Pose& p) {
    const double u = std::clamp((tau - s.phase) * s.speed, 0.0, 1.0);
    const double b = bump(u);
    const double a = s.amplitude;
    switch (cls) {
        case 0:  // raise_arm: right arm swings forward and up
            p.local[r_shoulder] = rot_x(-2.4 * a * b);
            break;
        case 1:  // kick: right leg swings forward, knee snaps
            p.local[r_hip] = rot_x(-1.3 * a * b);
            p.local[r_knee] = rot_x(0.9 * a * std::pow(std::sin(std::numbers::pi * u), 2) * (1.0 - u));
            break;
        case 2: {  // wave: right arm abducted, forearm oscillates
            const double lift = std::min(1.0, 2.5 * b);
            p.local[r_shoulder] = rot_z(2.5 * a * lift);
            p.local[r_elbow] = rot_z(0.7 * a * lift * std::sin(2.0 * std::numbers::pi * s.cycles * u));
            break;
        }
        case 3:  // squat: hips and knees flex, pelvis lowers, trunk leans
            p.local[l_hip] = rot_x(-1.2 * a * b);
            p.local[r_hip] = rot_x(-1.2 * a * b);
            p.local[l_knee] = rot_x(2.0 * a * b);
            p.local[r_knee] = rot_x(2.0 * a * b);
            p.local[spine] = rot_x(0.35 * a * b);
            p.root_shift = {0.0, -0.38 * a * b, 0.0};
            break;
        case 4:  // jump: crouch then vertical lift with arms up
            p.local[l_knee] = rot_x(0.9 * a * std::pow(std::sin(2.0 * std::numbers::pi * u), 2));
            p.local[r_knee] = rot_x(0.9 * a * std::pow(std::sin(2.0 * std::numbers::pi * u), 2));
            p.local[l_shoulder] = rot_x(-1.0 * a * b);
            p.local[r_shoulder] = rot_x(-1.0 * a * b);
            p.root_shift = {0.0, 0.35 * a * b * b, 0.0};
            break;
        case 5:  // bow: trunk flexes forward
            p.local[spine] = rot_x(1.1 * a * b);
            p.local[neck] = rot_x(0.3 * a * b);
            break;
        case 6:  // punch: right arm extends forward from a guard
            p.local[r_shoulder] = rot_x(-1.5 * a * (0.4 + 0.6 * b));
            p.local[r_elbow] = rot_x(-1.6 * a * (1.0 - b));
            break;
        case 7: {  // side_step: lateral pelvis translation with leg abduction
            const double step = 0.5 - 0.5 * std::cos(std::numbers::pi * u);
            p.root_shift = {0.35 * a * step, 0.0, 0.0};
            p.local[r_hip] = rot_z(0.35 * a * b);
            p.local[l_hip] = rot_z(-0.15 * a * b);
            break;
        }
        default:
            break;
    }
}

std::array<Vec3, kBaseJoints> forward_kinematics(const Pose& p, const SampleStyle& s) {
    std::array<Vec3, kBaseJoints> pos{};
    std::array<Mat3, kBaseJoints> world{};
    for (std::size_t j = 0; j < kBaseJoints; ++j) {
        const int par = kParent[j];
        if (par < 0) {
            world[j] = p.local[j];
            pos[j] = {kRest[j][0] * s.body_scale, kRest[j][1] * s.body_scale, kRest[j][2] * s.body_scale};
            for (int a = 0; a < 3; ++a) pos[j][a] += p.root_shift[a];
        } else {
            const auto pj = static_cast<std::size_t>(par);
            world[j] = matmul3(world[pj], p.local[j]);
            Vec3 off;
            for (int a = 0; a < 3; ++a) off[a] = (kRest[j][a] - kRest[pj][a]) * s.body_scale;
            const Vec3 r = rotate(world[pj], off);
            for (int a = 0; a < 3; ++a) pos[j][a] = pos[pj][a] + r[a];
        }
    }
    const Mat3 heading = rot_y(s.yaw);
    for (auto& v : pos) {
        v = rotate(heading, v);
        for (int a = 0; a < 3; ++a) v[a] += s.root[a];
    }
    return pos;
}

// Joints beyond the base 16 are markers at the midpoint of base edges,
// cycling through the edge list.
std::vector<std::pair<int, int>> base_edges() {
    std::vector<std::pair<int, int>> e;
    for (std::size_t j = 1; j < kBaseJoints; ++j) e.emplace_back(kParent[j], static_cast<int>(j));
    return e;
}

}  // namespace

const std::vector<std::string>& toy_class_names() {
    static const std::vector<std::string> names{"raise_arm", "kick", "wave", "squat",
                                                "jump", "bow", "punch", "side_step"};
    return names;
}

Dataset gen_toy(const ToyGenConfig& cfg) {
    const int max_classes = static_cast<int>(toy_class_names().size());
    if (cfg.num_classes < 2 || cfg.num_classes > max_classes)
        fail(ErrorCategory::config, "gen_toy: num_classes must be in 2.." + std::to_string(max_classes));
    if (cfg.samples_per_class < 0) fail(ErrorCategory::config, "gen_toy: samples_per_class must be >= 0");
    if (cfg.num_joints < kBaseJoints || cfg.num_joints > kImageSize)
        fail(ErrorCategory::config, "gen_toy: num_joints must be in 16..32");
    if (cfg.num_frames != cfg.num_joints) fail(ErrorCategory::config, "gen_toy: num_frames must equal num_joints");
    if (!(cfg.noise_std >= 0.0)) fail(ErrorCategory::config, "gen_toy: noise_std must be >= 0");

    Dataset ds;
    ds.num_classes = cfg.num_classes;
    ds.num_joints = cfg.num_joints;
    ds.provenance = Provenance::real;
    const auto edges = base_edges();
    ds.topology = edges;
    for (std::size_t m = kBaseJoints; m < cfg.num_joints; ++m)
        ds.topology.emplace_back(edges[(m - kBaseJoints) % edges.size()].first, static_cast<int>(m));

    Rng rng(cfg.seed);
    int serial = 0;
    for (int cls = 0; cls < cfg.num_classes; ++cls) {
        for (int i = 0; i < cfg.samples_per_class; ++i, ++serial) {
            SampleStyle s;
            s.amplitude = 0.7 + 0.6 * rng.uniform();
            s.phase = 0.15 * (2.0 * rng.uniform() - 1.0);
            s.speed = 0.9 + 0.2 * rng.uniform();
            s.body_scale = 0.9 + 0.2 * rng.uniform();
            s.yaw = 0.3 * (2.0 * rng.uniform() - 1.0);
            s.root = {0.05 * rng.normal(), 0.0, 0.05 * rng.normal()};
            s.cycles = 2.0 + rng.uniform();

            JointSequence seq(cfg.num_frames, cfg.num_joints);
            seq.label = cls;
            seq.subject_id = serial % 10;
            seq.seq_id = toy_class_names()[static_cast<std::size_t>(cls)] + "_" + std::to_string(i);
            for (std::size_t t = 0; t < cfg.num_frames; ++t) {
                const double tau = cfg.num_frames > 1 ? static_cast<double>(t) / static_cast<double>(cfg.num_frames - 1) : 0.0;
                Pose pose;
                animate(cls, tau, s, pose);
                const auto pos = forward_kinematics(pose, s);
                for (std::size_t j = 0; j < cfg.num_joints; ++j) {
                    Vec3 v;
                    if (j < kBaseJoints) {
                        v = pos[j];
                    } else {
                        const auto& [pa, ch] = edges[(j - kBaseJoints) % edges.size()];
                        for (int a = 0; a < 3; ++a) v[a] = 0.5 * (pos[static_cast<std::size_t>(pa)][a] + pos[static_cast<std::size_t>(ch)][a]);
                    }
                    for (std::size_t a = 0; a < 3; ++a) seq.at(t, j, a) = v[a] + cfg.noise_std * rng.normal();
                }
            }
            ds.items.push_back(std::move(seq));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// JSONL

void save_jsonl(const Dataset& ds, const std::filesystem::path& path) {
    ds.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCategory::io, "cannot open dataset for writing: " + path.string());
    nlohmann::json header{{"format", "skeldiff-dataset"},
                          {"num_classes", ds.num_classes},
                          {"num_joints", ds.num_joints},
                          {"topology", ds.topology},
                          {"provenance", provenance_name(ds.provenance)}};
    out << header.dump() << '\n';
    for (const auto& it : ds.items) {
        nlohmann::json j{{"seq_id", it.seq_id},
                         {"label", it.label},
                         {"subject_id", it.subject_id},
                         {"num_frames", it.num_frames},
                         {"num_joints", it.num_joints},
                         {"coords", it.coords}};
        out << j.dump() << '\n';
    }
    if (!out) fail(ErrorCategory::io, "failed writing dataset: " + path.string());
}

Dataset load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCategory::io, "cannot open dataset: " + path.string());
    const std::string where = path.string();
    std::string line;
    std::size_t lineno = 0;
    Dataset ds;
    auto parse_line = [&](const std::string& s) {
        try {
            return nlohmann::json::parse(s);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCategory::format, where + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
        }
    };
    if (!std::getline(in, line)) fail(ErrorCategory::format, where + ": missing header line");
    ++lineno;
    {
        const auto h = parse_line(line);
        try {
            if (h.value("format", "") != "skeldiff-dataset") fail(ErrorCategory::format, where + ":1: not a skeldiff dataset header");
            ds.num_classes = h.at("num_classes").get<int>();
            ds.num_joints = h.at("num_joints").get<std::size_t>();
            ds.topology = h.at("topology").get<std::vector<std::pair<int, int>>>();
            ds.provenance = parse_provenance(h.at("provenance").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCategory::format, where + ":1: bad header: " + e.what());
        }
    }
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto j = parse_line(line);
        JointSequence seq;
        try {
            seq.seq_id = j.at("seq_id").get<std::string>();
            seq.label = j.at("label").get<int>();
            seq.subject_id = j.at("subject_id").get<int>();
            seq.num_frames = j.at("num_frames").get<std::size_t>();
            seq.num_joints = j.at("num_joints").get<std::size_t>();
            seq.coords = j.at("coords").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCategory::format, where + ":" + std::to_string(lineno) + ": bad item: " + e.what());
        }
        if (seq.coords.size() != seq.num_frames * seq.num_joints * 3)
            fail(ErrorCategory::format, where + ":" + std::to_string(lineno) + ": coords has " + std::to_string(seq.coords.size()) +
                                            " values, expected num_frames*num_joints*3 = " +
                                            std::to_string(seq.num_frames * seq.num_joints * 3));
        ds.items.push_back(std::move(seq));
    }
    try {
        ds.validate();
    } catch (const Error& e) {
        fail(ErrorCategory::format, where + ": " + e.what());
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splits and mixers

std::pair<Dataset, Dataset> split_by_subject(const Dataset& ds, const std::set<int>& eval_subjects) {
    if (eval_subjects.empty()) fail(ErrorCategory::invalid_argument, "split_by_subject: eval subject set is empty");
    Dataset train = ds, eval = ds;
    train.items.clear();
    eval.items.clear();
    for (const auto& it : ds.items) (eval_subjects.count(it.subject_id) ? eval : train).items.push_back(it);
    if (train.items.empty()) fail(ErrorCategory::invalid_argument, "split_by_subject: every subject is in the eval set; train split would be empty");
    return {std::move(train), std::move(eval)};
}

namespace {

void check_mix_inputs(const Dataset& real, const Dataset& synth, double p, const char* op) {
    if (real.num_classes != synth.num_classes)
        fail(ErrorCategory::invalid_argument, std::string(op) + ": class count mismatch (" + std::to_string(real.num_classes) +
                                                  " vs " + std::to_string(synth.num_classes) + ")");
    if (real.num_joints != synth.num_joints)
        fail(ErrorCategory::invalid_argument, std::string(op) + ": joint count mismatch");
    if (!(p >= 0.0) || !std::isfinite(p)) fail(ErrorCategory::invalid_argument, std::string(op) + ": proportion must be finite and >= 0");
}

std::size_t rounded_share(double p, std::size_t n) {
    return static_cast<std::size_t>(std::llround(p * static_cast<double>(n)));
}

// First k entries of a seeded Fisher-Yates shuffle of `pool`.
std::vector<std::size_t> choose(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.index(pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

std::vector<std::size_t> pick_synthetic(const Dataset& synth, int label, std::size_t k, Rng& rng, const char* op) {
    auto pool = class_indices(synth, label);
    if (pool.size() < k)
        fail(ErrorCategory::invalid_argument, std::string(op) + ": synthetic pool for class " + std::to_string(label) + " has " +
                                                  std::to_string(pool.size()) + " items, " + std::to_string(k) + " required");
    return choose(std::move(pool), k, rng);
}

}  // namespace

Dataset mix_replace(const Dataset& real, const Dataset& synth, double p, std::uint64_t seed) {
    check_mix_inputs(real, synth, p, "mix_replace");
    if (p > 1.0) fail(ErrorCategory::invalid_argument, "mix_replace: proportion must be <= 1");
    Dataset out = real;
    bool mixed = false;
    for (int c = 0; c < real.num_classes; ++c) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c), 1));
        const auto idx = class_indices(real, c);
        const std::size_t k = rounded_share(p, idx.size());
        if (k == 0) continue;
        const auto removed = choose(idx, k, rng);
        const auto added = pick_synthetic(synth, c, k, rng, "mix_replace");
        for (std::size_t i = 0; i < k; ++i) out.items[removed[i]] = synth.items[added[i]];
        mixed = true;
    }
    if (mixed) out.provenance = Provenance::mixed;
    return out;
}

Dataset mix_add(const Dataset& real, const Dataset& synth, double p, std::uint64_t seed) {
    check_mix_inputs(real, synth, p, "mix_add");
    Dataset out = real;
    bool mixed = false;
    for (int c = 0; c < real.num_classes; ++c) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c), 2));
        const std::size_t k = rounded_share(p, class_indices(real, c).size());
        if (k == 0) continue;
        for (std::size_t i : pick_synthetic(synth, c, k, rng, "mix_add")) out.items.push_back(synth.items[i]);
        mixed = true;
    }
    if (mixed) out.provenance = Provenance::mixed;
    return out;
}

}  // namespace skeldiff
