#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "skeldiff/dataset.hpp"
#include "skeldiff/error.hpp"

using namespace skeldiff;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "skeldiff_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Largest displacement from frame 0 over the joints of a chain.
double peak_displacement(const JointSequence& s, const int (&chain)[3]) {
    double best = 0.0;
    for (int j : chain)
        for (std::size_t t = 1; t < s.num_frames; ++t) {
            double d2 = 0.0;
            for (std::size_t a = 0; a < 3; ++a) {
                const double d = s.at(t, static_cast<std::size_t>(j), a) - s.at(0, static_cast<std::size_t>(j), a);
                d2 += d * d;
            }
            best = std::max(best, std::sqrt(d2));
        }
    return best;
}

Dataset toy(int k, int per_class, std::uint64_t seed = 1) {
    ToyGenConfig c;
    c.num_classes = k;
    c.samples_per_class = per_class;
    c.seed = seed;
    return gen_toy(c);
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("gen_toy produces the requested counts and shapes") {
    const Dataset ds = toy(4, 10);
    CHECK(ds.size() == 40);
    CHECK(ds.class_counts() == std::vector<std::size_t>{10, 10, 10, 10});
    for (const auto& it : ds.items) {
        CHECK(it.num_frames == 16);
        CHECK(it.num_joints == 16);
        CHECK(it.coords.size() == 16 * 16 * 3);
    }
    CHECK_NOTHROW(ds.validate());
}

TEST_CASE("gen_toy is deterministic and seed-sensitive") {
    CHECK(toy(4, 5, 7) == toy(4, 5, 7));
    CHECK_FALSE(toy(4, 5, 7) == toy(4, 5, 8));
}

TEST_CASE("gen_toy supports more joints via edge markers") {
    ToyGenConfig c;
    c.num_joints = c.num_frames = 24;
    c.samples_per_class = 2;
    const Dataset ds = gen_toy(c);
    CHECK(ds.num_joints == 24);
    CHECK_NOTHROW(ds.validate());
    c.num_frames = 20;
    CHECK_THROWS_AS(gen_toy(c), Error);
    c.num_joints = c.num_frames = 8;
    CHECK_THROWS_AS(gen_toy(c), Error);
    c = ToyGenConfig{};
    c.num_classes = 1;
    CHECK_THROWS_AS(gen_toy(c), Error);
}

TEST_CASE("kick moves the leg chain more than the arm chain") {
    const Dataset ds = toy(4, 200, 3);
    int wins = 0, total = 0;
    for (const auto& it : ds.items) {
        if (it.label != 1) continue;
        ++total;
        const double leg = peak_displacement(it, ToyChains::right_leg);
        const double arm = std::max(peak_displacement(it, ToyChains::right_arm), peak_displacement(it, ToyChains::left_arm));
        wins += leg > arm;
    }
    CHECK(total == 200);
    CHECK(static_cast<double>(wins) / total >= 0.95);
}

TEST_CASE("subjects are assigned round-robin over ten ids") {
    const Dataset ds = toy(4, 25);
    std::vector<int> per_subject(10, 0);
    for (const auto& it : ds.items) ++per_subject.at(static_cast<std::size_t>(it.subject_id));
    for (int n : per_subject) CHECK(n == 10);
}

TEST_CASE("jsonl round-trip is exact, including an empty dataset") {
    const Dataset ds = toy(3, 4);
    const auto path = temp_file("roundtrip.jsonl");
    save_jsonl(ds, path);
    CHECK(load_jsonl(path) == ds);
    const auto path2 = temp_file("roundtrip2.jsonl");
    save_jsonl(load_jsonl(path), path2);
    CHECK(slurp(path) == slurp(path2));

    Dataset empty = ds;
    empty.items.clear();
    save_jsonl(empty, path);
    const Dataset back = load_jsonl(path);
    CHECK(back.size() == 0);
    CHECK(back.num_classes == 3);
}

TEST_CASE("load_jsonl reports the failing line") {
    const Dataset ds = toy(2, 2);
    const auto path = temp_file("bad.jsonl");
    save_jsonl(ds, path);
    std::string text = slurp(path);
    // Drop the last coordinate of the third line (second item).
    std::vector<std::string> lines;
    std::stringstream ss(text);
    for (std::string l; std::getline(ss, l);) lines.push_back(l);
    auto& l = lines[2];
    const auto end = l.find(']', l.find("\"coords\""));
    const auto comma = l.rfind(',', end);
    l.erase(comma, end - comma);
    std::ofstream(path, std::ios::trunc) << lines[0] << '\n' << lines[1] << '\n' << lines[2] << '\n';
    try {
        load_jsonl(path);
        FAIL("expected a format error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::format);
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    std::ofstream(path, std::ios::trunc) << "{\"format\":\"other\"}\n";
    CHECK_THROWS_AS(load_jsonl(path), Error);
    CHECK_THROWS_AS(load_jsonl(temp_file("does_not_exist.jsonl")), Error);
}

TEST_CASE("split_by_subject partitions the dataset") {
    const Dataset ds = toy(4, 25);
    const auto [train, eval] = split_by_subject(ds, {0, 1, 2, 3, 4});
    CHECK(train.size() + eval.size() == ds.size());
    CHECK(train.size() == 50);
    for (const auto& it : eval.items) CHECK(it.subject_id < 5);
    for (const auto& it : train.items) CHECK(it.subject_id >= 5);
    CHECK_THROWS_AS(split_by_subject(ds, {}), Error);
    CHECK_THROWS_AS(split_by_subject(ds, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}), Error);
}

TEST_CASE("mix_replace keeps size and class balance") {
    const Dataset real = toy(4, 25, 1);
    Dataset synth = toy(4, 25, 2);
    synth.provenance = Provenance::synthetic;
    CHECK(mix_replace(real, synth, 0.0, 5) == real);
    const Dataset m = mix_replace(real, synth, 0.2, 5);
    CHECK(m.size() == 100);
    CHECK(m.class_counts() == real.class_counts());
    CHECK(m.provenance == Provenance::mixed);
    std::size_t from_synth = 0;
    for (const auto& it : m.items)
        for (const auto& s : synth.items) from_synth += it == s;
    CHECK(from_synth == 20);
    for (std::uint64_t seed = 0; seed < 50; ++seed) CHECK(mix_replace(real, synth, 0.37, seed).class_counts() == real.class_counts());
    CHECK_THROWS_AS(mix_replace(real, synth, 1.5, 0), Error);
}

TEST_CASE("mix_add appends and leaves real items untouched") {
    const Dataset real = toy(4, 25, 1);
    const Dataset synth = toy(4, 25, 2);
    CHECK(mix_add(real, synth, 0.0, 1) == real);
    const Dataset m = mix_add(real, synth, 0.5, 1);
    CHECK(m.size() == 152);  // 4 classes x llround(12.5)
    for (std::size_t i = 0; i < real.size(); ++i) CHECK(m.items[i] == real.items[i]);
    CHECK(m.class_counts() == std::vector<std::size_t>{38, 38, 38, 38});
}

TEST_CASE("mixers name the class whose synthetic pool is too small") {
    const Dataset real = toy(4, 25, 1);
    Dataset synth = toy(4, 25, 2);
    std::erase_if(synth.items, [](const JointSequence& s) { return s.label == 2 && s.seq_id != "wave_0"; });
    try {
        mix_add(real, synth, 0.5, 1);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("class 2") != std::string::npos);
    }
    Dataset other = synth;
    other.num_classes = 5;
    CHECK_THROWS_AS(mix_replace(real, other, 0.1, 1), Error);
}

}  // TEST_SUITE
