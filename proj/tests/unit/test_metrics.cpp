#include <doctest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "skeldiff/error.hpp"
#include "skeldiff/metrics.hpp"
#include "skeldiff/models/train.hpp"

using namespace skeldiff;

namespace {

FeatureSet random_set(std::size_t n, std::size_t d, Rng& rng, int classes = 1, double shift = 0.0) {
    FeatureSet fs;
    fs.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        fs.labels.push_back(static_cast<int>(i % static_cast<std::size_t>(classes)));
        for (std::size_t j = 0; j < d; ++j) fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal() + shift;
    }
    return fs;
}

FeatureSet constant_set(std::size_t n, const Eigen::VectorXd& v, int label = 0) {
    FeatureSet fs;
    fs.features = v.transpose().replicate(static_cast<Eigen::Index>(n), 1);
    fs.labels.assign(n, label);
    return fs;
}

FeatureStats gaussian(std::vector<double> mean, std::vector<double> var) {
    FeatureStats s;
    s.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.cov = Eigen::Map<Eigen::VectorXd>(var.data(), static_cast<Eigen::Index>(var.size())).asDiagonal();
    s.n = 10;
    return s;
}

// Random symmetric positive definite d x d matrix.
Eigen::MatrixXd random_spd(std::size_t d, Rng& rng) {
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    return a * a.transpose() / static_cast<double>(d) + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

models::STTransConfig tiny_classifier() {
    models::STTransConfig c;
    c.embed_dim = 16;
    c.depth = 1;
    c.heads = 2;
    return c;
}

Dataset toy(int per_class, std::uint64_t seed) {
    ToyGenConfig c;
    c.samples_per_class = per_class;
    c.seed = seed;
    return gen_toy(c);
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("fit_stats: two points, constants, textbook formula") {
    FeatureSet two;
    two.features.resize(2, 3);
    two.features << 1, 2, 3, 3, -2, 4;
    two.labels = {0, 0};
    const auto s = fit_stats(two);
    const Eigen::Vector3d a(1, 2, 3), b(3, -2, 4);
    CHECK((s.mean - (a + b) / 2).norm() < 1e-15);
    CHECK((s.cov - (a - b) * (a - b).transpose() / 2).norm() < 1e-14);
    CHECK(s.n == 2);

    CHECK(fit_stats(constant_set(5, Eigen::Vector3d(1, 2, 3))).cov.norm() == 0.0);

    Rng rng(1);
    const auto fs = random_set(50, 6, rng);
    const auto st = fit_stats(fs);
    for (Eigen::Index i = 0; i < 6; ++i) {
        double m = 0;
        for (Eigen::Index r = 0; r < 50; ++r) m += fs.features(r, i);
        m /= 50;
        CHECK(std::abs(st.mean(i) - m) < 1e-12);
    }
    for (Eigen::Index i = 0; i < 6; ++i)
        for (Eigen::Index j = 0; j < 6; ++j) {
            double c = 0;
            for (Eigen::Index r = 0; r < 50; ++r) c += (fs.features(r, i) - st.mean(i)) * (fs.features(r, j) - st.mean(j));
            CHECK(std::abs(st.cov(i, j) - c / 49) < 1e-10);
            CHECK(st.cov(i, j) == st.cov(j, i));
        }
    CHECK_THROWS_AS(fit_stats(constant_set(1, Eigen::Vector3d(1, 2, 3))), Error);
}

TEST_CASE("fid closed forms") {
    CHECK(fid(gaussian({0}, {1}), gaussian({1}, {1})) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fid(gaussian({0}, {1}), gaussian({0}, {4})) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t d = 1 + rng.index(12);
        std::vector<double> m1(d), m2(d), v1(d), v2(d);
        double expect = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            m1[i] = rng.normal();
            m2[i] = rng.normal();
            v1[i] = std::exp(rng.normal());
            v2[i] = std::exp(rng.normal());
            expect += (m1[i] - m2[i]) * (m1[i] - m2[i]) + std::pow(std::sqrt(v1[i]) - std::sqrt(v2[i]), 2);
        }
        CHECK(std::abs(fid(gaussian(m1, v1), gaussian(m2, v2)) - expect) <= 1e-8);
    }
}

TEST_CASE("fid identities and symmetry on full covariances") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t d = 2 + rng.index(15);
        FeatureStats a, b;
        a.cov = random_spd(d, rng);
        b.cov = random_spd(d, rng);
        a.mean = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(d), [&] { return rng.normal(); });
        b.mean = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(d), [&] { return rng.normal(); });
        a.n = b.n = 100;
        CHECK(fid(a, a) <= 1e-10);
        CHECK(std::abs(fid(a, b) - fid(b, a)) <= 1e-8);
        CHECK(fid(a, b) >= 0.0);
        FeatureStats shifted = a;
        const Eigen::VectorXd v = b.mean - a.mean;
        shifted.mean += v;
        CHECK(fid(a, shifted) == doctest::Approx(v.squaredNorm()).epsilon(1e-9));

        // Commuting covariances: trace term reduces to sum (sqrt(l_a) - sqrt(l_b))^2 in a shared eigenbasis.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.cov);
        Eigen::VectorXd lb = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(d), [&] { return std::exp(rng.normal()); });
        FeatureStats c = a;
        c.cov = es.eigenvectors() * lb.asDiagonal() * es.eigenvectors().transpose();
        const double expect = (es.eigenvalues().cwiseSqrt() - lb.cwiseSqrt()).squaredNorm();
        CHECK(std::abs(fid(a, c) - expect) <= 1e-8);
    }
}

TEST_CASE("fid rejects mismatched dimensions and invalid covariances") {
    CHECK_THROWS_AS(fid(gaussian({0, 1}, {1, 1}), gaussian({0}, {1})), Error);
    auto bad = gaussian({0, 0}, {1, -0.5});
    CHECK_THROWS_AS(fid(bad, gaussian({0, 0}, {1, 1})), Error);
    // Rounding-level negative eigenvalues are tolerated.
    auto tiny = gaussian({0, 0}, {1, -1e-12});
    CHECK(fid(tiny, tiny) >= 0.0);
}

TEST_CASE("overall diversity: constants and the exhaustive oracle") {
    const Eigen::Vector3d v(1, 2, 2);
    CHECK(overall_diversity(constant_set(1, v), constant_set(1, v), 200, 1) == 0.0);
    CHECK(overall_diversity(constant_set(4, v), constant_set(6, Eigen::Vector3d::Zero()), 200, 1) == doctest::Approx(3.0).epsilon(1e-14));

    Rng rng(4);
    const auto s = random_set(30, 5, rng), r = random_set(40, 5, rng, 1, 0.5);
    const double exact = overall_diversity_exhaustive(s, r);
    double brute = 0.0;
    for (Eigen::Index i = 0; i < 30; ++i)
        for (Eigen::Index j = 0; j < 40; ++j) brute += (s.features.row(i) - r.features.row(j)).norm();
    CHECK(exact == doctest::Approx(brute / 1200).epsilon(1e-12));
    CHECK(std::abs(overall_diversity(s, r, 200000, 7) - exact) < 0.01 * exact);
    CHECK(overall_diversity(s, r, 200, 7) == overall_diversity(s, r, 200, 7));

    // Duplicating both sets leaves the exhaustive mean unchanged.
    FeatureSet s2 = s, r2 = r;
    s2.features = Eigen::MatrixXd(60, 5);
    s2.features << s.features, s.features;
    s2.labels.insert(s2.labels.end(), s.labels.begin(), s.labels.end());
    CHECK(overall_diversity_exhaustive(s2, r2) == doctest::Approx(exact).epsilon(1e-12));

    CHECK_THROWS_AS(overall_diversity(FeatureSet{}, r, 10, 1), Error);
    CHECK_THROWS_AS(overall_diversity_exhaustive(s, FeatureSet{}), Error);
}

TEST_CASE("per-action diversity") {
    Rng rng(5);
    const auto s = random_set(60, 4, rng, 3), r = random_set(45, 4, rng, 3, 1.0);
    const auto exact = per_action_diversity(s, r, 3, 0, 1);
    REQUIRE(exact.per_class.size() == 3);
    double mean = 0.0;
    for (int c = 0; c < 3; ++c) {
        const auto sc = s.subset(c), rc = r.subset(c);
        double brute = 0.0;
        for (Eigen::Index i = 0; i < sc.features.rows(); ++i)
            for (Eigen::Index j = 0; j < rc.features.rows(); ++j) brute += (sc.features.row(i) - rc.features.row(j)).norm();
        brute /= static_cast<double>(sc.features.rows() * rc.features.rows());
        CHECK(exact.per_class[static_cast<std::size_t>(c)] == doctest::Approx(brute).epsilon(1e-12));
        mean += brute / 3;
    }
    CHECK(exact.mean == doctest::Approx(mean).epsilon(1e-12));
    const auto sampled = per_action_diversity(s, r, 3, 100000, 2);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(sampled.per_class[c] - exact.per_class[c]) < 0.01 * exact.per_class[c]);

    const Eigen::Vector2d v(0.5, -1);
    const auto z = per_action_diversity(constant_set(3, v, 0), constant_set(2, v, 0), 1, 50, 3);
    CHECK(z.per_class == std::vector<double>{0.0});

    const auto one_s = random_set(20, 3, rng), one_r = random_set(20, 3, rng);
    CHECK(per_action_diversity(one_s, one_r, 1, 0, 1).per_class[0] == doctest::Approx(overall_diversity_exhaustive(one_s, one_r)));

    try {
        per_action_diversity(s, r, 4, 0, 1);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("class 3") != std::string::npos);
    }
}

TEST_CASE("features, probe separability and accuracy on toy data") {
    const Dataset train = toy(40, 21), eval = toy(25, 22);
    const NormParams norm = fit_norm_params(train.items);
    models::STTrans m(tiny_classifier(), 23);

    // Random-weight model on a balanced set sits at chance.
    {
        models::STTrans r(tiny_classifier(), 24);
        Rng rng(25);
        r.params().find("head.w").mutable_data() = testing::random_tensor(r.params().find("head.w").shape(), rng, 1.0);
        const Dataset big = toy(100, 26);
        const double acc = recognition_accuracy(r, big, norm);
        CHECK(std::abs(acc - 0.25) <= 3.0 * std::sqrt(0.25 * 0.75 / 400));
    }

    models::TrainConfig tc;
    tc.iterations = 300;
    tc.batch_size = 16;
    tc.lr = 1e-3;
    tc.seed = 27;
    const auto xt = models::images_tensor(train, norm);
    const auto yt = models::labels_of(train);
    models::train_classifier(m, xt, yt, ad::Tensor({0}), {}, tc);

    const auto fs = extract_features(m, eval, norm);
    CHECK(fs.size() == eval.size());
    CHECK(fs.features.cols() == 16);
    CHECK(extract_features(m, eval, norm).features == fs.features);

    // Least-squares linear probe on classes 0 vs 1: fit on even rows, test on odd rows.
    std::vector<Eigen::Index> fit_rows, test_rows;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(fs.size()); ++i)
        if (fs.labels[static_cast<std::size_t>(i)] < 2) (i % 2 == 0 ? fit_rows : test_rows).push_back(i);
    auto design = [&](const std::vector<Eigen::Index>& rows) {
        Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), 17);
        for (std::size_t k = 0; k < rows.size(); ++k) a.row(static_cast<Eigen::Index>(k)) << fs.features.row(rows[k]), 1.0;
        return a;
    };
    Eigen::VectorXd target(static_cast<Eigen::Index>(fit_rows.size()));
    for (std::size_t k = 0; k < fit_rows.size(); ++k) target(static_cast<Eigen::Index>(k)) = fs.labels[static_cast<std::size_t>(fit_rows[k])] ? 1.0 : -1.0;
    const Eigen::MatrixXd a = design(fit_rows);
    const Eigen::VectorXd w = (a.transpose() * a + 1e-6 * Eigen::MatrixXd::Identity(17, 17)).ldlt().solve(a.transpose() * target);
    const Eigen::VectorXd pred = design(test_rows) * w;
    int correct = 0;
    for (std::size_t k = 0; k < test_rows.size(); ++k)
        correct += (pred(static_cast<Eigen::Index>(k)) > 0) == (fs.labels[static_cast<std::size_t>(test_rows[k])] == 1);
    const double probe = static_cast<double>(correct) / static_cast<double>(test_rows.size());
    MESSAGE("probe accuracy " << probe);
    CHECK(probe >= 0.95);

    // Training subset that the model fits perfectly scores 1.0.
    Dataset fitted = train;
    const auto pred_train = models::argmax_rows(models::predict_logits(m, xt));
    std::erase_if(fitted.items, [&, i = std::size_t{0}](const JointSequence& s) mutable {
        return pred_train[i++] != static_cast<std::size_t>(s.label);
    });
    CHECK(fitted.size() > 0);
    CHECK(recognition_accuracy(m, fitted, norm) == 1.0);

    Dataset empty = eval;
    empty.items.clear();
    CHECK_THROWS_AS(recognition_accuracy(m, empty, norm), Error);
    Dataset wrong = toy(5, 1);
    ToyGenConfig five;
    five.num_classes = 5;
    five.samples_per_class = 2;
    CHECK_THROWS_AS(extract_features(m, gen_toy(five), norm), Error);
}

TEST_CASE("l2_normalize gives unit rows and leaves zero rows alone") {
    FeatureSet fs;
    fs.features.resize(3, 2);
    fs.features << 3, 4, 0, 0, -1e-3, 0;
    fs.labels = {0, 1, 0};
    l2_normalize(fs);
    CHECK(fs.features(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(fs.features(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(fs.features(1, 0) == 0.0);
    CHECK(fs.features(1, 1) == 0.0);
    CHECK(fs.features(2, 0) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(fs.labels == std::vector<int>{0, 1, 0});
}

}  // TEST_SUITE
