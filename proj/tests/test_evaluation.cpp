#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "branchlens/evaluation.hpp"
#include "branchlens/rng.hpp"
#include "oracles.hpp"
#include "reference_rows.hpp"

using namespace branchlens;
using namespace branchlens::eval;

// ==================== eer ====================

TEST_CASE("eer hand cases") {
    // Perfectly separated.
    CHECK(eer({{0.1, 0.2}, {0.8, 0.9}}).eer == 0.0);

    // Indistinguishable multisets.
    EERResult same = eer({{0.3, 0.5, 0.7}, {0.3, 0.5, 0.7}});
    CHECK(std::fabs(same.eer - 0.5) <= 1e-12);

    // Overlapping hand case: the two step functions cross at exactly 1/3.
    EERResult mixed = eer({{0.1, 0.2, 0.6}, {0.4, 0.7, 0.8}});
    CHECK(std::fabs(mixed.eer - 1.0 / 3.0) <= 1e-12);
}

TEST_CASE("eer rejects empty inputs") {
    try {
        eer({{}, {0.5}});
        FAIL("expected EmptyScores");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyScores);
    }
    try {
        eer({{0.5}, {}});
        FAIL("expected EmptyScores");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyScores);
    }
}

TEST_CASE("eer matches the dense sweep oracle on random score sets") {
    Rng rng(400);
    for (int trial = 0; trial < 120; ++trial) {
        std::size_t nb = 1 + rng.below(200);
        std::size_t ns = 1 + rng.below(200);
        ScoreSet s;
        double sep = 2.0 * rng.uniform();  // from hopeless to decent
        for (std::size_t i = 0; i < nb; ++i) s.bona.push_back(rng.normal());
        for (std::size_t i = 0; i < ns; ++i) s.spoof.push_back(sep + rng.normal());
        // Quantized scores exercise repeated-threshold handling too.
        if (trial % 3 == 0)
            for (auto* v : {&s.bona, &s.spoof})
                for (double& x : *v) x = std::round(4.0 * x) / 4.0;

        double got = eer(s).eer;
        double want = oracles::sweep_eer(s.bona, s.spoof);
        CHECK(std::fabs(got - want) <= 1e-9);
    }
}

TEST_CASE("eer is invariant under strictly increasing transforms") {
    Rng rng(401);
    ScoreSet s;
    for (int i = 0; i < 60; ++i) s.bona.push_back(rng.normal());
    for (int i = 0; i < 80; ++i) s.spoof.push_back(0.8 + rng.normal());
    double base = eer(s).eer;

    ScoreSet warped;
    auto warp = [](double x) { return std::exp(0.7 * x) + 3.0 * x; };  // strictly increasing
    for (double v : s.bona) warped.bona.push_back(warp(v));
    for (double v : s.spoof) warped.spoof.push_back(warp(v));
    CHECK(std::fabs(eer(warped).eer - base) <= 1e-9);
}

TEST_CASE("the crossing threshold equalizes both rates") {
    Rng rng(402);
    ScoreSet s;
    for (int i = 0; i < 50; ++i) s.bona.push_back(rng.normal());
    for (int i = 0; i < 50; ++i) s.spoof.push_back(1.0 + rng.normal());
    EERResult r = eer(s);
    CHECK(r.eer >= 0.0);
    CHECK(r.eer <= 0.5 + 1e-12);
    // The reported threshold must sit inside the pooled score range.
    double lo = *std::min_element(s.bona.begin(), s.bona.end());
    double hi = *std::max_element(s.spoof.begin(), s.spoof.end());
    CHECK(r.threshold >= std::min(lo, hi) - 1.0);
    CHECK(r.threshold <= std::max(lo, hi) + 1.0);
}

// ==================== pearson / spearman ====================

TEST_CASE("pearson hand cases") {
    std::vector<double> xs = {1, 2, 3, 4, 5};
    std::vector<double> linear, anti;
    for (double x : xs) {
        linear.push_back(2.0 * x + 1.0);
        anti.push_back(-x);
    }
    CHECK(std::fabs(pearson(xs, linear) - 1.0) <= 1e-12);
    CHECK(std::fabs(pearson(xs, anti) + 1.0) <= 1e-12);

    double r = pearson({1, 2, 3}, {1, 2, 4});
    CHECK(std::fabs(r - 0.9820) <= 5e-5);
}

TEST_CASE("pearson rejects degenerate input") {
    try {
        pearson({1, 2}, {1, 2, 3});
        FAIL("expected LengthMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::LengthMismatch);
    }
    try {
        pearson({2, 2, 2}, {1, 2, 3});
        FAIL("expected ZeroVariance");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ZeroVariance);
    }
}

TEST_CASE("spearman is 1 for monotone and -1 for decreasing transforms") {
    Rng rng(403);
    std::vector<double> xs;
    for (int i = 0; i < 40; ++i) xs.push_back(rng.normal());
    std::vector<double> up, down;
    for (double x : xs) {
        up.push_back(std::atan(x) + 0.001 * x);
        down.push_back(-std::exp(0.3 * x));
    }
    CHECK(std::fabs(spearman(xs, up) - 1.0) <= 1e-12);
    CHECK(std::fabs(spearman(xs, down) + 1.0) <= 1e-12);
}

TEST_CASE("spearman equals rank-then-pearson on tied data") {
    Rng rng(404);
    for (int trial = 0; trial < 60; ++trial) {
        std::size_t n = 5 + rng.below(40);
        std::vector<double> xs(n), ys(n);
        for (std::size_t i = 0; i < n; ++i) {
            xs[i] = static_cast<double>(rng.below(6));  // plenty of ties
            ys[i] = static_cast<double>(rng.below(6)) + 0.5 * rng.normal();
        }
        auto distinct = [](const std::vector<double>& v) {
            for (std::size_t i = 1; i < v.size(); ++i)
                if (v[i] != v[0]) return true;
            return false;
        };
        if (!distinct(xs) || !distinct(ys)) continue;
        // Ranks can still be constant-free; the oracle mirrors the same
        // average-rank convention, so values must agree exactly.
        double want = oracles::spearman_ref(xs, ys);
        CHECK(std::fabs(spearman(xs, ys) - want) <= 1e-12);
    }
}

// ==================== f1_macro ====================

TEST_CASE("macro F1 hand cases") {
    std::vector<std::string> actual = {"A", "A", "B", "B"};
    CHECK(f1_macro(actual, actual) == 1.0);

    CHECK(f1_macro({"B", "B", "A", "A"}, {"A", "A", "B", "B"}) == 0.0);

    double macro = f1_macro({"A", "B", "B", "B"}, {"A", "A", "B", "B"});
    CHECK(std::fabs(macro - (2.0 / 3.0 + 4.0 / 5.0) / 2.0) <= 1e-12);
    CHECK(std::fabs(macro - 0.7333) <= 5e-5);
}

TEST_CASE("macro F1 uses the union label set") {
    // "C" never occurs in actual; its F1 is 0 and still averaged in.
    double macro = f1_macro({"C", "B"}, {"A", "B"});
    CHECK(std::fabs(macro - (0.0 + 1.0 + 0.0) / 3.0) <= 1e-12);
}

TEST_CASE("macro F1 rejects bad input") {
    try {
        f1_macro({"A"}, {"A", "B"});
        FAIL("expected LengthMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::LengthMismatch);
    }
    try {
        f1_macro({}, {});
        FAIL("expected EmptyInput");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyInput);
    }
}

TEST_CASE("macro F1 matches the confusion-matrix oracle on random labels") {
    Rng rng(405);
    std::vector<std::string> alphabet = {"A07", "A08", "A09", "bonafide"};
    for (int trial = 0; trial < 60; ++trial) {
        std::size_t n = 2 + rng.below(60);
        std::vector<std::string> pred(n), act(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = alphabet[rng.below(alphabet.size())];
            act[i] = alphabet[rng.below(alphabet.size())];
        }
        CHECK(std::fabs(f1_macro(pred, act) - oracles::f1_macro_ref(pred, act)) <= 1e-12);
    }
}

// ==================== classify_archetype ====================

TEST_CASE("archetype quadrant hand cases") {
    CHECK(classify_archetype(0.05, 22.85) == Archetype::EFFECTIVE_SPECIALIZATION);
    CHECK(classify_archetype(28.61, 24.24) == Archetype::FLAWED_SPECIALIZATION);
    CHECK(classify_archetype(0.74, 19.82) == Archetype::EFFECTIVE_CONSENSUS);
    CHECK(classify_archetype(5.0, 15.0) == Archetype::INEFFECTIVE_CONSENSUS);
    CHECK(classify_archetype(5.0, 25.0) == Archetype::INEFFECTIVE_SPECIALIZATION);
    CHECK(classify_archetype(50.0, 10.0) == Archetype::INEFFECTIVE_CONSENSUS);

    // Boundary semantics: eer = 1 is the mid band, share = 20 specializes.
    CHECK(classify_archetype(1.0, 20.0) == Archetype::INEFFECTIVE_SPECIALIZATION);
    CHECK(classify_archetype(0.999, 20.0) == Archetype::EFFECTIVE_SPECIALIZATION);
    CHECK(classify_archetype(10.0, 19.9) == Archetype::INEFFECTIVE_CONSENSUS);
    CHECK(classify_archetype(10.001, 20.0) == Archetype::FLAWED_SPECIALIZATION);
}

TEST_CASE("archetype rule reproduces the reference strategy table on 12 of 13 rows") {
    std::size_t matches = 0;
    for (const auto& row : refrows::strategy_rows()) {
        Archetype got = classify_archetype(row.eer_pct, row.share1);
        if (row.attack == refrows::kQuadrantException) {
            // Documented mismatch: the rule puts A10 in the flawed quadrant.
            CHECK(got == Archetype::FLAWED_SPECIALIZATION);
            CHECK(row.expected == Archetype::INEFFECTIVE_SPECIALIZATION);
            continue;
        }
        if (got == row.expected) ++matches;
        CHECK(got == row.expected);
    }
    CHECK(matches == refrows::strategy_rows().size() - 1);
}

TEST_CASE("archetype inputs are range-checked") {
    auto expect_oor = [](double e, double s) {
        try {
            classify_archetype(e, s);
            FAIL("expected OutOfRange for (" << e << ", " << s << ")");
        } catch (const Error& err) {
            CHECK(err.code() == ErrorCode::OutOfRange);
        }
    };
    expect_oor(-0.1, 50.0);
    expect_oor(100.1, 50.0);
    expect_oor(5.0, 0.0);    // share bounds are exclusive
    expect_oor(5.0, 100.0);
    CHECK_NOTHROW(classify_archetype(0.0, 0.001));
    CHECK_NOTHROW(classify_archetype(100.0, 99.999));
}

TEST_CASE("custom thresholds shift the quadrants") {
    ArchetypeThresholds t;
    t.eer_low = 2.0;
    t.eer_high = 20.0;
    t.share = 30.0;
    CHECK(classify_archetype(1.5, 35.0, t) == Archetype::EFFECTIVE_SPECIALIZATION);
    CHECK(classify_archetype(15.0, 25.0, t) == Archetype::INEFFECTIVE_CONSENSUS);
    CHECK(classify_archetype(25.0, 35.0, t) == Archetype::FLAWED_SPECIALIZATION);

    ArchetypeThresholds bad;
    bad.eer_low = 10.0;
    bad.eer_high = 1.0;  // inverted
    try {
        classify_archetype(5.0, 25.0, bad);
        FAIL("expected InvalidConfig");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidConfig);
    }
}

// ==================== group_stats ====================

TEST_CASE("group stats hand cases") {
    std::vector<std::pair<Archetype, double>> vals = {
        {Archetype::EFFECTIVE_CONSENSUS, 10.0}, {Archetype::EFFECTIVE_CONSENSUS, 20.0}};
    std::vector<GroupStats> out = group_stats(vals);
    REQUIRE(out.size() == 1);
    CHECK(out[0].mean == 15.0);
    CHECK(std::fabs(out[0].stddev - 7.0711) <= 5e-5);
    CHECK(std::fabs(out[0].variance - 50.0) <= 1e-12);
    CHECK(out[0].count == 2);
    CHECK(std::fabs(out[0].variance - out[0].stddev * out[0].stddev) <= 1e-12);
}

TEST_CASE("singleton groups have zero spread") {
    std::vector<GroupStats> out = group_stats({{Archetype::FLAWED_SPECIALIZATION, 5.0}});
    REQUIRE(out.size() == 1);
    CHECK(out[0].mean == 5.0);
    CHECK(out[0].stddev == 0.0);
    CHECK(out[0].variance == 0.0);
    CHECK(out[0].count == 1);
}

TEST_CASE("group counts partition the records") {
    std::vector<std::pair<Archetype, double>> vals = {
        {Archetype::EFFECTIVE_CONSENSUS, 18.0},
        {Archetype::EFFECTIVE_SPECIALIZATION, 23.0},
        {Archetype::EFFECTIVE_SPECIALIZATION, 26.0},
        {Archetype::INEFFECTIVE_CONSENSUS, 19.0},
        {Archetype::EFFECTIVE_CONSENSUS, 19.5},
    };
    std::vector<GroupStats> out = group_stats(vals);
    std::size_t total = 0;
    for (const auto& g : out) total += g.count;
    CHECK(total == vals.size());
    CHECK(out.size() == 3);

    // No records means no groups, not an error.
    CHECK(group_stats({}).empty());
}

TEST_CASE("archetype names are stable identifiers") {
    CHECK(std::string(archetype_name(Archetype::EFFECTIVE_SPECIALIZATION)) ==
          "EFFECTIVE_SPECIALIZATION");
    CHECK(std::string(archetype_name(Archetype::FLAWED_SPECIALIZATION)) ==
          "FLAWED_SPECIALIZATION");
}
