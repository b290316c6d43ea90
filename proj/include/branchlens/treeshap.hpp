#pragma once

// Exact Shapley attributions for tree ensembles under the path-dependent
// cover game: features outside the coalition follow each split in proportion
// to training covers, features inside follow x. shap_values computes the
// Shapley values of that game in polynomial time; brute_force_shap evaluates
// the same game over all 2^F coalitions as an independent oracle.

#include <string>
#include <vector>

#include "branchlens/gbdt.hpp"

namespace branchlens::shap {

struct ShapAttribution {
    std::string sample_id;       // filled by callers that track samples
    int class_index = 0;
    std::vector<double> phi;     // per feature
    double base_value = 0.0;     // expected margin under the cover game
};

// Exact and fast: per root-leaf path, groups repeated features and applies
// the closed-form Shapley weight of a multilinear coalition game.
ShapAttribution shap_values(const gbdt::TreeEnsemble& ensemble,
                            const std::vector<double>& x,
                            int class_index);

// Exponential-time oracle; requires feature_count <= 20.
ShapAttribution brute_force_shap(const gbdt::TreeEnsemble& ensemble,
                                 const std::vector<double>& x,
                                 int class_index);

}  // namespace branchlens::shap
