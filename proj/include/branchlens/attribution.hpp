#pragma once

// Aggregates per-feature Shapley values into component and branch scores:
// mean phi per component, branch sums, variance-penalized confidence, and
// softmax shares across blocks. Also the small stats helpers those need.

#include <string>
#include <vector>

#include "branchlens/dataio.hpp"
#include "branchlens/treeshap.hpp"

namespace branchlens::attribution {

struct ComponentAttribution {
    std::string attack;
    ComponentId component;
    double mean_phi = 0.0;
    std::size_t n = 0;          // samples aggregated
    double ci_half_width = 0.0; // 0 when n == 1
};

struct BranchAttribution {
    std::string attack;
    std::string block;
    double phi_sum = 0.0;
    // Combined from component half-widths as sqrt(sum of squares); callers
    // with per-sample data may replace it with a direct interval.
    double ci_half_width = 0.0;
};

enum class Penalty { LINEAR, QUADRATIC, EXPONENTIAL, NONE };
const char* penalty_name(Penalty p);
Penalty parse_penalty(const std::string& name);

struct ConfidenceScore {
    std::string attack;
    std::string block;
    Penalty penalty = Penalty::LINEAR;
    double value = 0.0;  // >= 0
    double sigma = 0.0;  // population std-dev of the block's component means
};

struct ShareVector {
    std::string attack;
    std::vector<std::string> blocks;
    std::vector<double> shares;  // sums to 1
};

struct SummaryStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample (n-1)
    double se = 0.0;
    double ci_half_width = 0.0;
    std::size_t n = 0;
    double alpha = 0.05;
};

// Mean phi per component: each component owns k consecutive features in
// layout order, and a component's phi on one sample is the sum of its k
// feature attributions. attrs must be the attack's samples.
std::vector<ComponentAttribution> component_phi(const std::vector<shap::ShapAttribution>& attrs,
                                                const Layout& layout,
                                                const std::string& attack,
                                                int k,
                                                double alpha = 0.05);

BranchAttribution branch_sum(const std::vector<ComponentAttribution>& components,
                             const std::string& block);

// C_b: |sum of component means| shrunk by the dispersion penalty.
//   LINEAR      |Phi| / (1 + sigma)
//   QUADRATIC   |Phi| / (1 + sigma^2)
//   EXPONENTIAL |Phi| / exp(sigma)
//   NONE        |Phi|
ConfidenceScore confidence(const std::vector<ComponentAttribution>& components,
                           Penalty penalty);

// Softmax over block confidence values, in the given block order.
ShareVector shares(const std::vector<ConfidenceScore>& scores,
                   const std::vector<std::string>& blocks);

// Kendall tau-b between two equal-length value vectors (tie-corrected).
double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

// Normal-approximation mean interval: half-width z(alpha) * s / sqrt(n),
// alpha one of {0.10, 0.05, 0.01}.
SummaryStats mean_ci(const std::vector<double>& values, double alpha);

double z_for_alpha(double alpha);

}  // namespace branchlens::attribution
