#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "msrg/diagnostics.hpp"
#include "msrg/errors.hpp"
#include "msrg/rng.hpp"

using namespace msrg;
namespace fs = std::filesystem;

namespace {

Tensor random_feats(int64_t n, int64_t k, Rng& rng, double lo = -2, double hi = 2) {
    Tensor t({n, k});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

}  // namespace

TEST_CASE("representation_bias: hand value, identity, homogeneity") {
    const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    const Tensor b = Tensor::matrix(2, 2, {1, 1, 3, 3});
    // (1/k)(1/n) * sum |a-b| = (1/2)(1/2)(0+1+0+1) = 0.5
    CHECK(representation_bias(a, b) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(representation_bias(a, a) == 0.0);

    // scaling both inputs scales the bias
    Tensor a3 = a, b3 = b;
    for (int64_t i = 0; i < a3.size(); ++i) {
        a3[i] *= -3.0f;
        b3[i] *= -3.0f;
    }
    CHECK(representation_bias(a3, b3) == doctest::Approx(1.5).epsilon(1e-6));

    CHECK_THROWS_AS(representation_bias(a, Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6})),
                    DimensionError);
}

TEST_CASE("representation_bias is a scaled L1 metric") {
    Rng rng(81);
    for (int rep = 0; rep < 50; ++rep) {
        const int64_t n = 1 + rng.uniform_int(6), k = 1 + rng.uniform_int(6);
        const Tensor x = random_feats(n, k, rng);
        const Tensor y = random_feats(n, k, rng);
        const Tensor z = random_feats(n, k, rng);
        const double dxy = representation_bias(x, y);
        const double dyx = representation_bias(y, x);
        const double dxz = representation_bias(x, z);
        const double dzy = representation_bias(z, y);
        CHECK(dxy >= 0.0);
        CHECK(dxy == doctest::Approx(dyx).epsilon(1e-12));
        CHECK(dxy <= dxz + dzy + 1e-9);  // triangle inequality
    }
}

TEST_CASE("bias_report: zero for identical models, deterministic, surgery-aware") {
    Rng rng(82);
    EncoderSpec spec;
    spec.input_dim = 6;
    spec.hidden_dim = 8;
    spec.feature_dim = 4;
    spec.layers = 2;
    const ParameterMap enc = init_encoder(spec, rng);
    std::vector<Tensor> inputs = {random_feats(10, 6, rng), random_feats(10, 6, rng)};

    const BiasReport zero = bias_report(enc, {&enc, &enc}, nullptr, inputs, "avg", 3);
    CHECK(zero.mean == 0.0);
    for (const auto& pt : zero.per_task) {
        CHECK(pt.d == 0.0);
        CHECK(pt.n == 10);
        CHECK(pt.k == 4);
    }

    ParameterMap other = enc;
    for (size_t i = 0; i < other.size(); ++i) {
        for (int64_t e = 0; e < other.tensor(i).size(); ++e) {
            other.tensor(i)[e] += static_cast<float>(rng.uniform(-0.2, 0.2));
        }
    }
    const BiasReport r1 = bias_report(enc, {&other, &other}, nullptr, inputs, "avg", 3);
    const BiasReport r2 = bias_report(enc, {&other, &other}, nullptr, inputs, "avg", 3);
    CHECK(r1.mean > 0.0);
    CHECK(r1.mean == r2.mean);

    const std::string json = r1.to_json();
    for (const char* key : {"\"method\"", "\"surgery\"", "\"seed\"", "\"per_task\"", "\"mean\"",
                            "\"task\"", "\"d\"", "\"n\"", "\"k\""}) {
        CHECK(json.find(key) != std::string::npos);
    }
}

TEST_CASE("project_2d: 2-d inputs are rotated, distances preserved") {
    Rng rng(83);
    const Tensor a = random_feats(12, 2, rng);
    const Tensor b = random_feats(12, 2, rng);
    const Projection2D proj = project_2d(a, b);

    auto dist = [](const Tensor& m, int64_t i, int64_t j) {
        const double dx = m.at(i, 0) - m.at(j, 0);
        const double dy = m.at(i, 1) - m.at(j, 1);
        return std::sqrt(dx * dx + dy * dy);
    };
    for (int64_t i = 0; i < 12; ++i) {
        for (int64_t j = i + 1; j < 12; ++j) {
            CHECK(dist(a, i, j) == doctest::Approx(dist(proj.merged_xy, i, j)).epsilon(1e-4));
        }
    }
}

TEST_CASE("project_2d: identical clouds coincide after projection") {
    Rng rng(84);
    const Tensor a = random_feats(9, 5, rng);
    const Projection2D proj = project_2d(a, a);
    for (int64_t i = 0; i < proj.merged_xy.size(); ++i) {
        CHECK(proj.merged_xy[i] == proj.individual_xy[i]);
    }
}

TEST_CASE("project_2d: component variances are ordered") {
    Rng rng(85);
    // anisotropic cloud: wide in one direction
    Tensor a({40, 4});
    for (int64_t i = 0; i < 40; ++i) {
        a.at(i, 0) = static_cast<float>(rng.uniform(-5, 5));
        a.at(i, 1) = static_cast<float>(rng.uniform(-1, 1));
        a.at(i, 2) = static_cast<float>(rng.uniform(-0.3, 0.3));
        a.at(i, 3) = static_cast<float>(rng.uniform(-0.1, 0.1));
    }
    const Tensor b = random_feats(40, 4, rng, -0.5, 0.5);
    const Projection2D proj = project_2d(a, b);
    auto var = [&](const Tensor& m, int64_t col) {
        double mean = 0.0;
        for (int64_t i = 0; i < m.rows(); ++i) mean += m.at(i, col);
        mean /= static_cast<double>(m.rows());
        double acc = 0.0;
        for (int64_t i = 0; i < m.rows(); ++i) {
            acc += (m.at(i, col) - mean) * (m.at(i, col) - mean);
        }
        return acc;
    };
    const double v1 = var(proj.merged_xy, 0) + var(proj.individual_xy, 0);
    const double v2 = var(proj.merged_xy, 1) + var(proj.individual_xy, 1);
    CHECK(v1 >= v2);
}

TEST_CASE("project_2d rejects degenerate input") {
    const Tensor same = Tensor::full({5, 3}, 1.25f);
    CHECK_THROWS_AS(project_2d(same, same), DegenerateInputError);
    Rng rng(86);
    CHECK_THROWS_AS(project_2d(random_feats(1, 4, rng), random_feats(1, 4, rng)), UsageError);
}

TEST_CASE("projection CSV has the documented schema") {
    Rng rng(87);
    const Projection2D proj = project_2d(random_feats(4, 3, rng), random_feats(4, 3, rng));
    const std::string path = (fs::temp_directory_path() / "msrg_proj.csv").string();
    export_projection_csv({proj, proj}, path);
    std::ifstream is(path);
    std::string header;
    std::getline(is, header);
    CHECK(header == "task,source,x,y");
    int merged_rows = 0, individual_rows = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (line.find(",merged,") != std::string::npos) ++merged_rows;
        if (line.find(",individual,") != std::string::npos) ++individual_rows;
    }
    CHECK(merged_rows == 8);  // 2 tasks x 4 samples
    CHECK(individual_rows == 8);
    fs::remove(path);
}
