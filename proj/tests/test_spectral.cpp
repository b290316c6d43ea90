#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "branchlens/rng.hpp"
#include "branchlens/spectral.hpp"
#include "oracles.hpp"

using namespace branchlens;
using namespace branchlens::spectral;

namespace {

ActivationMatrix matrix_of(const std::vector<std::vector<double>>& rows) {
    ActivationMatrix m;
    m.component = {"B0", Role::HSGAL1};
    m.rows = rows.size();
    m.cols = rows[0].size();
    for (const auto& r : rows) m.values.insert(m.values.end(), r.begin(), r.end());
    return m;
}

double frob(const SquareMatrix& c) {
    double s = 0.0;
    for (double v : c.a) s += v * v;
    return std::sqrt(s);
}

double trace(const SquareMatrix& c) {
    double s = 0.0;
    for (std::size_t i = 0; i < c.n; ++i) s += c.at(i, i);
    return s;
}

}  // namespace

// ==================== center ====================

TEST_CASE("centering a constant matrix yields zeros") {
    ActivationMatrix m = matrix_of({{5.0, 5.0, 5.0}, {5.0, 5.0, 5.0}});
    ActivationMatrix c = center(m);
    for (double v : c.values) CHECK(v == 0.0);
    CHECK(c.rows == 2);
    CHECK(c.cols == 3);
}

TEST_CASE("centering hand cases") {
    ActivationMatrix one = center(matrix_of({{1.0, 3.0}}));
    CHECK(one.values == std::vector<double>{-1.0, 1.0});

    ActivationMatrix two = center(matrix_of({{1.0, 3.0}, {2.0, 2.0}}));
    CHECK(two.values == std::vector<double>{-1.0, 1.0, 0.0, 0.0});
}

TEST_CASE("centered rows have mean zero for random input") {
    Rng rng(11);
    ActivationMatrix m = oracles::random_activation(rng, {"B0", Role::HSGAL1}, 7, 23, 3.0);
    ActivationMatrix c = center(m);
    for (std::size_t r = 0; r < c.rows; ++r) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c.cols; ++j) mean += c.at(r, j);
        mean /= static_cast<double>(c.cols);
        CHECK(std::fabs(mean) <= 1e-12);
    }
}

// ==================== covariance ====================

TEST_CASE("covariance hand case with N-1 divisor") {
    SquareMatrix c = covariance(matrix_of({{-1.0, 1.0}, {0.0, 0.0}}));
    REQUIRE(c.n == 2);
    CHECK(c.at(0, 0) == 2.0);
    CHECK(c.at(0, 1) == 0.0);
    CHECK(c.at(1, 0) == 0.0);
    CHECK(c.at(1, 1) == 0.0);
}

TEST_CASE("covariance of a zero matrix is zero") {
    SquareMatrix c = covariance(matrix_of({{0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}}));
    REQUIRE(c.n == 3);
    for (double v : c.a) CHECK(v == 0.0);
}

TEST_CASE("single observation is degenerate") {
    try {
        covariance(matrix_of({{1.0}, {2.0}}));
        FAIL("expected DegenerateSampleCount");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateSampleCount);
    }
}

TEST_CASE("covariance is exactly symmetric on random data") {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        ActivationMatrix m =
            center(oracles::random_activation(rng, {"B0", Role::HSGAL1}, 9, 17, 2.0));
        SquareMatrix c = covariance(m);
        for (std::size_t i = 0; i < c.n; ++i)
            for (std::size_t j = 0; j < c.n; ++j)
                CHECK(c.at(i, j) == c.at(j, i));  // bitwise, not approximate
    }
}

// ==================== eig_sym ====================

TEST_CASE("eigenvalues of identity and diagonal matrices") {
    SquareMatrix id;
    id.n = 3;
    id.a = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    EigenDecomposition e = eig_sym(id);
    CHECK(e.eigenvalues == std::vector<double>{1.0, 1.0, 1.0});

    SquareMatrix d;
    d.n = 3;
    d.a = {3, 0, 0, 0, 1, 0, 0, 0, 2};
    EigenDecomposition ed = eig_sym(d);
    CHECK(ed.eigenvalues == std::vector<double>{3.0, 2.0, 1.0});
}

TEST_CASE("two by two hand eigenvalues") {
    SquareMatrix c;
    c.n = 2;
    c.a = {2, 1, 1, 2};
    EigenDecomposition e = eig_sym(c);
    REQUIRE(e.eigenvalues.size() == 2);
    CHECK(std::fabs(e.eigenvalues[0] - 3.0) <= 1e-12);
    CHECK(std::fabs(e.eigenvalues[1] - 1.0) <= 1e-12);
}

TEST_CASE("asymmetric input is rejected") {
    SquareMatrix c;
    c.n = 2;
    c.a = {1.0, 2.0, 0.5, 1.0};
    try {
        eig_sym(c);
        FAIL("expected NotSymmetric");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NotSymmetric);
    }
}

TEST_CASE("trace preservation, residuals and orthonormality on random matrices") {
    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t n = 2 + rng.below(20);
        SquareMatrix c = oracles::random_symmetric(rng, n, 1.0 + 4.0 * rng.uniform());
        EigenDecomposition e = eig_sym(c);

        // Sum of eigenvalues equals the trace.
        double sum = 0.0;
        for (double v : e.eigenvalues) sum += v;
        CHECK(std::fabs(sum - trace(c)) <= 1e-9 * std::max(1.0, std::fabs(trace(c))));

        // Descending order.
        CHECK(std::is_sorted(e.eigenvalues.rbegin(), e.eigenvalues.rend()));

        // Residual ||C v - lambda v|| per pair, relative to ||C||_F.
        double fnorm = frob(c);
        for (std::size_t k = 0; k < n; ++k) {
            double resid = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double cv = 0.0;
                for (std::size_t j = 0; j < n; ++j) cv += c.at(i, j) * e.vec(j, k);
                double r = cv - e.eigenvalues[k] * e.vec(i, k);
                resid += r * r;
            }
            CHECK(std::sqrt(resid) <= 1e-8 * std::max(1.0, fnorm));
        }

        // Columns are orthonormal.
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a; b < n; ++b) {
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += e.vec(i, a) * e.vec(i, b);
                CHECK(std::fabs(dot - (a == b ? 1.0 : 0.0)) <= 1e-8);
            }
    }
}

TEST_CASE("identical input gives identical decomposition") {
    Rng rng(14);
    SquareMatrix c = oracles::random_symmetric(rng, 12);
    EigenDecomposition a = eig_sym(c);
    EigenDecomposition b = eig_sym(c);
    CHECK(a.eigenvalues == b.eigenvalues);
    CHECK(a.eigenvectors == b.eigenvectors);
}

// ==================== signature ====================

TEST_CASE("signature hand case pads with zeros") {
    SpectralSignature s = signature(matrix_of({{1.0, 3.0}, {2.0, 2.0}}), 3);
    REQUIRE(s.values.size() == 3);
    CHECK(std::fabs(s.values[0] - 2.0) <= 1e-12);
    CHECK(s.values[1] == 0.0);
    CHECK(s.values[2] == 0.0);
    CHECK(s.k == 3);
}

TEST_CASE("constant matrix has an all-zero signature") {
    SpectralSignature s = signature(matrix_of({{4, 4, 4}, {4, 4, 4}}), 5);
    CHECK(s.values == std::vector<double>(5, 0.0));
}

TEST_CASE("signature of random data is non-increasing and non-negative") {
    Rng rng(15);
    ActivationMatrix m = oracles::random_activation(rng, {"B0", Role::HSGAL1}, 64, 100);
    SpectralSignature s = signature(m, 10);
    REQUIRE(s.values.size() == 10);
    CHECK(std::is_sorted(s.values.rbegin(), s.values.rend()));
    for (double v : s.values) CHECK(v >= 0.0);
}

TEST_CASE("covariance eigenvalues are PSD up to round-off") {
    Rng rng(16);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t rows = 2 + rng.below(24);
        std::size_t cols = 2 + rng.below(24);
        ActivationMatrix m = oracles::random_activation(rng, {"B0", Role::HSGAL1}, rows, cols,
                                                        0.5 + 3.0 * rng.uniform());
        SpectralSignature s = signature(m, static_cast<int>(rows));
        double top = std::max(1.0, s.values.empty() ? 1.0 : s.values[0]);
        for (double v : s.values) CHECK(v >= -1e-10 * top);
    }
}

TEST_CASE("signature scales quadratically with the data") {
    Rng rng(17);
    ActivationMatrix m = oracles::random_activation(rng, {"B0", Role::HSGAL1}, 8, 30);
    double c = 3.25;
    ActivationMatrix scaled = m;
    for (auto& v : scaled.values) v *= c;

    SpectralSignature base = signature(m, 8);
    SpectralSignature got = signature(scaled, 8);
    for (std::size_t i = 0; i < base.values.size(); ++i) {
        double want = c * c * base.values[i];
        CHECK(std::fabs(got.values[i] - want) <= 1e-9 * std::max(1.0, std::fabs(want)));
    }
}

TEST_CASE("signature ignores observation order") {
    Rng rng(18);
    ActivationMatrix m = oracles::random_activation(rng, {"B0", Role::HSGAL1}, 6, 15);
    ActivationMatrix shuffled = m;
    // Reverse the columns: same observations, different order.
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t j = 0; j < m.cols; ++j)
            shuffled.at(r, j) = m.at(r, m.cols - 1 - j);

    SpectralSignature a = signature(m, 6);
    SpectralSignature b = signature(shuffled, 6);
    for (std::size_t i = 0; i < a.values.size(); ++i)
        CHECK(std::fabs(a.values[i] - b.values[i]) <= 1e-9 * std::max(1.0, a.values[i]));
}

// ==================== meta_vector ====================

TEST_CASE("meta vector concatenates in layout order") {
    Layout layout;
    layout.components = {{"B0", Role::HSGAL1}, {"B1", Role::GLOBAL}};
    layout.axes = {CovarianceAxis::TEMPORAL, CovarianceAxis::TEMPORAL};
    layout.blocks = {"B0", "B1"};

    std::map<ComponentId, SpectralSignature> sigs;
    sigs[layout.components[0]] = {layout.components[0], 2, {1.0, 2.0}};
    sigs[layout.components[1]] = {layout.components[1], 2, {3.0, 4.0}};

    MetaFeatureVector v = meta_vector(sigs, layout);
    CHECK(v.values == std::vector<double>{1.0, 2.0, 3.0, 4.0});
}

TEST_CASE("canonical layout with k=10 gives a 140-feature vector") {
    Layout layout = canonical_layout();
    Rng rng(19);
    std::map<ComponentId, SpectralSignature> sigs;
    for (const auto& c : layout.components) {
        SpectralSignature s{c, 10, {}};
        for (int i = 0; i < 10; ++i) s.values.push_back(rng.uniform());
        std::sort(s.values.rbegin(), s.values.rend());
        sigs[c] = s;
    }
    CHECK(meta_vector(sigs, layout).values.size() == 140);
}

TEST_CASE("meta vector rejects gaps and mixed k") {
    Layout layout;
    layout.components = {{"B0", Role::HSGAL1}, {"B1", Role::GLOBAL}};
    layout.axes = {CovarianceAxis::TEMPORAL, CovarianceAxis::TEMPORAL};
    layout.blocks = {"B0", "B1"};

    std::map<ComponentId, SpectralSignature> sigs;
    sigs[layout.components[0]] = {layout.components[0], 2, {1.0, 2.0}};
    try {
        meta_vector(sigs, layout);
        FAIL("expected MissingComponent");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingComponent);
    }

    sigs[layout.components[1]] = {layout.components[1], 3, {3.0, 4.0, 5.0}};
    try {
        meta_vector(sigs, layout);
        FAIL("expected InconsistentK");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InconsistentK);
    }
}
