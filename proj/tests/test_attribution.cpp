#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "branchlens/attribution.hpp"
#include "branchlens/rng.hpp"
#include "oracles.hpp"

using namespace branchlens;
using namespace branchlens::attribution;

namespace {

Layout two_block_layout() {
    Layout layout;
    layout.components = {{"B0", Role::HSGAL1}, {"B0", Role::POOL}, {"GAT_S", Role::GLOBAL}};
    layout.axes.assign(3, CovarianceAxis::TEMPORAL);
    layout.blocks = {"B0", "GAT_S"};
    return layout;
}

shap::ShapAttribution sample_attr(std::vector<double> phi) {
    shap::ShapAttribution a;
    a.sample_id = "s";
    a.class_index = 0;
    a.phi = std::move(phi);
    a.base_value = 0.0;
    return a;
}

ComponentAttribution comp(const std::string& block, Role role, double mean) {
    ComponentAttribution c;
    c.attack = "A07";
    c.component = {block, role};
    c.mean_phi = mean;
    c.n = 10;
    return c;
}

std::vector<ConfidenceScore> score_list(const std::vector<double>& values) {
    std::vector<ConfidenceScore> out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        ConfidenceScore s;
        s.attack = "A07";
        s.block = "B" + std::to_string(i);
        s.value = values[i];
        out.push_back(s);
    }
    return out;
}

std::vector<std::string> block_names(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("B" + std::to_string(i));
    return out;
}

}  // namespace

// ==================== component_phi ====================

TEST_CASE("component phi sums each component's feature window") {
    Layout layout = two_block_layout();
    // k = 3: component 0 owns features 0..2, component 1 owns 3..5, etc.
    std::vector<shap::ShapAttribution> attrs = {
        sample_attr({0.1, 0.2, -0.05, 1.0, 1.0, 1.0, 0.5, 0.0, 0.0})};
    std::vector<ComponentAttribution> out = component_phi(attrs, layout, "A07", 3);
    REQUIRE(out.size() == 3);
    CHECK(std::fabs(out[0].mean_phi - 0.25) <= 1e-15);
    CHECK(std::fabs(out[1].mean_phi - 3.0) <= 1e-15);
    CHECK(std::fabs(out[2].mean_phi - 0.5) <= 1e-15);
    CHECK(out[0].n == 1);
    CHECK(out[0].ci_half_width == 0.0);  // singleton: no interval
    CHECK(out[0].attack == "A07");
}

TEST_CASE("component phi averages across samples") {
    Layout layout = two_block_layout();
    std::vector<shap::ShapAttribution> attrs = {
        sample_attr({0.2, 0, 0, 0, 0, 0, 0, 0, 0}),
        sample_attr({0.4, 0, 0, 0, 0, 0, 0, 0, 0})};
    std::vector<ComponentAttribution> out = component_phi(attrs, layout, "A07", 3);
    CHECK(std::fabs(out[0].mean_phi - 0.3) <= 1e-15);
    CHECK(out[0].n == 2);
    CHECK(out[0].ci_half_width > 0.0);
}

TEST_CASE("component phi rejects empty and misshapen input") {
    Layout layout = two_block_layout();
    try {
        component_phi({}, layout, "A99", 3);
        FAIL("expected NoSamplesForAttack");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoSamplesForAttack);
    }
    try {
        component_phi({sample_attr({1.0, 2.0})}, layout, "A07", 3);
        FAIL("expected LayoutMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::LayoutMismatch);
    }
}

// ==================== branch_sum ====================

TEST_CASE("branch sum adds component means") {
    std::vector<ComponentAttribution> comps = {
        comp("B2", Role::HSGAL1, 1.2), comp("B2", Role::HSGAL2, 1.1), comp("B2", Role::POOL, 1.05)};
    BranchAttribution b = branch_sum(comps, "B2");
    CHECK(std::fabs(b.phi_sum - 3.35) <= 1e-12);
    CHECK(b.block == "B2");

    std::vector<ComponentAttribution> zeros = {
        comp("B0", Role::HSGAL1, 0.0), comp("B0", Role::HSGAL2, 0.0)};
    CHECK(branch_sum(zeros, "B0").phi_sum == 0.0);

    std::vector<ComponentAttribution> single = {comp("GAT_S", Role::GLOBAL, 1.5)};
    CHECK(branch_sum(single, "GAT_S").phi_sum == 1.5);

    try {
        branch_sum(single, "B9");
        FAIL("expected EmptyBlock");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyBlock);
    }
}

// ==================== confidence ====================

TEST_CASE("confidence hand cases") {
    std::vector<ComponentAttribution> flat = {
        comp("B0", Role::HSGAL1, 0.5), comp("B0", Role::HSGAL2, 0.5), comp("B0", Role::POOL, 0.5)};
    ConfidenceScore c = confidence(flat, Penalty::LINEAR);
    CHECK(c.value == 1.5);  // sigma = 0
    CHECK(c.sigma == 0.0);

    std::vector<ComponentAttribution> split = {
        comp("B0", Role::HSGAL1, 1.0), comp("B0", Role::HSGAL2, 0.0)};
    // population sigma of {1, 0} is 0.5
    ConfidenceScore lin = confidence(split, Penalty::LINEAR);
    CHECK(std::fabs(lin.value - 1.0 / 1.5) <= 1e-12);
    CHECK(std::fabs(lin.value - 0.6667) <= 5e-5);
    CHECK(std::fabs(lin.sigma - 0.5) <= 1e-15);

    ConfidenceScore expo = confidence(split, Penalty::EXPONENTIAL);
    CHECK(std::fabs(expo.value - 1.0 / std::exp(0.5)) <= 1e-12);
    CHECK(std::fabs(expo.value - 0.6065) <= 5e-5);

    ConfidenceScore quad = confidence(split, Penalty::QUADRATIC);
    CHECK(std::fabs(quad.value - 1.0 / 1.25) <= 1e-12);

    ConfidenceScore none = confidence(split, Penalty::NONE);
    CHECK(none.value == 1.0);
}

TEST_CASE("confidence refuses mixed blocks") {
    std::vector<ComponentAttribution> mixed = {
        comp("B0", Role::HSGAL1, 1.0), comp("B1", Role::HSGAL1, 2.0)};
    try {
        confidence(mixed, Penalty::LINEAR);
        FAIL("expected LayoutMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::LayoutMismatch);
    }
}

TEST_CASE("penalty collapse and ordering over a sigma sweep") {
    Rng rng(300);
    for (int trial = 0; trial < 200; ++trial) {
        double mean = 4.0 * rng.uniform() - 2.0;
        double sigma = 2.5 * rng.uniform();  // covers sigma < 1 and > 1
        // Two components with means mean +/- sigma give population std sigma.
        std::vector<ComponentAttribution> comps = {
            comp("B0", Role::HSGAL1, mean + sigma), comp("B0", Role::HSGAL2, mean - sigma)};

        double lin = confidence(comps, Penalty::LINEAR).value;
        double quad = confidence(comps, Penalty::QUADRATIC).value;
        double expo = confidence(comps, Penalty::EXPONENTIAL).value;
        double none = confidence(comps, Penalty::NONE).value;

        if (sigma == 0.0) {
            CHECK(lin == none);
            CHECK(quad == none);
            CHECK(expo == none);
        } else {
            CHECK(expo <= lin + 1e-15);        // e^s >= 1+s
            CHECK(none >= lin - 1e-15);
            if (sigma < 1.0) CHECK(quad >= lin - 1e-15);
            if (sigma > 1.0) CHECK(quad <= lin + 1e-15);
        }
    }
}

TEST_CASE("penalty names round-trip and reject junk") {
    for (Penalty p : {Penalty::LINEAR, Penalty::QUADRATIC, Penalty::EXPONENTIAL, Penalty::NONE})
        CHECK(parse_penalty(penalty_name(p)) == p);
    CHECK_THROWS_AS(parse_penalty("CUBIC"), Error);
}

// ==================== shares ====================

TEST_CASE("share hand cases") {
    std::vector<std::string> blocks = block_names(6);

    ShareVector equal = shares(score_list({1.0, 1.0, 1.0, 1.0, 1.0, 1.0}), blocks);
    for (double s : equal.shares) CHECK(std::fabs(s - 1.0 / 6.0) <= 1e-15);

    ShareVector skew = shares(score_list({std::log(2.0), 0, 0, 0, 0, 0}), blocks);
    CHECK(std::fabs(skew.shares[0] - 2.0 / 7.0) <= 1e-12);
    for (std::size_t i = 1; i < 6; ++i) CHECK(std::fabs(skew.shares[i] - 1.0 / 7.0) <= 1e-12);
}

TEST_CASE("paired shares follow the confidence gap") {
    // Two dominant branches whose C scores differ by 0.04 have a share
    // ratio of e^0.04, independent of the other branches.
    std::vector<std::string> blocks = block_names(6);
    ShareVector v = shares(score_list({2.30, 2.26, 1.1, 0.9, 0.4, 0.2}), blocks);
    CHECK(std::fabs(v.shares[0] / v.shares[1] - std::exp(0.04)) <= 1e-12);
}

TEST_CASE("shares normalize, stay positive, and preserve order") {
    Rng rng(301);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 2 + rng.below(7);
        std::vector<double> values;
        for (std::size_t i = 0; i < n; ++i) values.push_back(40.0 * rng.uniform() - 20.0);
        ShareVector v = shares(score_list(values), block_names(n));

        double sum = std::accumulate(v.shares.begin(), v.shares.end(), 0.0);
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
        for (double s : v.shares) CHECK(s > 0.0);

        std::size_t arg_score = std::distance(
            values.begin(), std::max_element(values.begin(), values.end()));
        std::size_t arg_share = std::distance(
            v.shares.begin(), std::max_element(v.shares.begin(), v.shares.end()));
        CHECK(arg_score == arg_share);
    }
}

TEST_CASE("raising one confidence raises exactly its share") {
    std::vector<std::string> blocks = block_names(4);
    std::vector<double> base = {1.0, 0.5, 0.2, -0.3};
    ShareVector before = shares(score_list(base), blocks);
    base[2] += 0.6;
    ShareVector after = shares(score_list(base), blocks);
    CHECK(after.shares[2] > before.shares[2]);
    for (std::size_t i : {0u, 1u, 3u}) CHECK(after.shares[i] < before.shares[i]);
}

// ==================== kendall_tau ====================

TEST_CASE("kendall hand cases") {
    CHECK(kendall_tau({1, 2, 3, 4}, {1, 2, 3, 4}) == 1.0);
    CHECK(kendall_tau({1, 2, 3, 4}, {4, 3, 2, 1}) == -1.0);
    double tau = kendall_tau({1, 2, 3, 4}, {1, 3, 2, 4});
    CHECK(std::fabs(tau - 4.0 / 6.0) <= 1e-12);
    CHECK(std::fabs(tau - 0.6667) <= 5e-5);
}

TEST_CASE("kendall rejects bad input") {
    try {
        kendall_tau({1, 2}, {1, 2, 3});
        FAIL("expected LengthMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::LengthMismatch);
    }
    try {
        kendall_tau({1}, {1});
        FAIL("expected DegenerateLength");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateLength);
    }
    try {
        kendall_tau({3, 3, 3}, {1, 2, 3});
        FAIL("expected ZeroVariance");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ZeroVariance);
    }
}

TEST_CASE("kendall matches the pair-counting oracle on permutations") {
    std::vector<double> a = {1, 2, 3, 4, 5, 6};
    std::vector<double> b = a;
    std::sort(b.begin(), b.end());
    do {
        double got = kendall_tau(a, b);
        double want = oracles::kendall_ref(a, b);
        CHECK(std::fabs(got - want) <= 1e-12);
    } while (std::next_permutation(b.begin(), b.end()));
}

TEST_CASE("kendall handles ties like the tau-b oracle") {
    Rng rng(302);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 3 + rng.below(10);
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<double>(rng.below(4));  // heavy ties
            b[i] = static_cast<double>(rng.below(4));
        }
        // Skip degenerate all-tied draws; those are a typed error.
        auto distinct = [](const std::vector<double>& v) {
            for (std::size_t i = 1; i < v.size(); ++i)
                if (v[i] != v[0]) return true;
            return false;
        };
        if (!distinct(a) || !distinct(b)) continue;
        double got = kendall_tau(a, b);
        CHECK(std::fabs(got - oracles::kendall_ref(a, b)) <= 1e-12);
    }
}

// ==================== mean_ci ====================

TEST_CASE("mean interval hand case") {
    SummaryStats s = mean_ci({1, 2, 3, 4}, 0.05);
    CHECK(s.mean == 2.5);
    CHECK(std::fabs(s.stddev - 1.2910) <= 5e-5);
    CHECK(std::fabs(s.se - 0.6455) <= 5e-5);
    CHECK(std::fabs(s.ci_half_width - 1.2654) <= 1e-3);
    CHECK(s.n == 4);

    SummaryStats flat = mean_ci({2, 2, 2}, 0.05);
    CHECK(flat.ci_half_width == 0.0);

    try {
        mean_ci({1.0}, 0.05);
        FAIL("expected InsufficientSamples");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InsufficientSamples);
    }
}

TEST_CASE("z quantiles cover exactly the three standard levels") {
    CHECK(z_for_alpha(0.10) == 1.645);
    CHECK(z_for_alpha(0.05) == 1.96);
    CHECK(z_for_alpha(0.01) == 2.576);
    CHECK_THROWS_AS(z_for_alpha(0.20), Error);
}

TEST_CASE("interval width follows the closed form at any n") {
    Rng rng(303);
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t n = 2 + rng.below(200);
        std::vector<double> values(n);
        for (auto& v : values) v = 10.0 * rng.normal();

        SummaryStats s = mean_ci(values, 0.01);
        // Closed-form oracle recomputation.
        double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
        double acc = 0.0;
        for (double v : values) acc += (v - mean) * (v - mean);
        double sd = std::sqrt(acc / static_cast<double>(n - 1));
        double want = 2.576 * sd / std::sqrt(static_cast<double>(n));
        CHECK(std::fabs(s.ci_half_width - want) <= 1e-12);

        // SE halves when n quadruples at fixed stddev: check the 1/sqrt(n)
        // law directly from the recorded fields.
        CHECK(std::fabs(s.se - s.stddev / std::sqrt(static_cast<double>(n))) <= 1e-15);
    }
}
