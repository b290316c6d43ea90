#pragma once

// Multiclass gradient boosting with oblivious (symmetric) trees: every level
// of a tree applies one shared (feature, threshold) split, so a depth-d tree
// has 2^d vector-valued leaves. Split search runs on per-feature quantile
// histograms with Newton gain; training is bit-reproducible for any
// worker_parallelism because per-feature work is independent and the final
// reduction is a fixed-order scan.

#include <cstdint>
#include <string>
#include <vector>

#include "branchlens/errors.hpp"

namespace branchlens::gbdt {

struct TrainConfig {
    int iterations = 1000;
    double learning_rate = 0.03;
    int depth = 6;              // <= 16
    double l2_leaf_reg = 3.0;
    int bins = 255;             // quantile histogram bins, in [2, 65535]
    std::uint64_t seed = 0;     // reserved; training is deterministic
    int worker_parallelism = 8;
    int early_stopping_rounds = 0;  // 0 disables; stops when train loss stalls
};

struct LevelSplit {
    int feature = 0;
    double threshold = 0.0;  // goes right when x[feature] > threshold
};

struct TreeLeaf {
    std::vector<double> values;  // per class, already scaled by learning_rate
    std::uint64_t cover = 0;     // training rows routed here
};

struct ObliviousTree {
    std::vector<LevelSplit> level_splits;  // level 0 = most significant leaf bit
    std::vector<TreeLeaf> leaves;          // size 2^level_splits.size()

    std::size_t leaf_index(const std::vector<double>& x) const {
        std::size_t idx = 0;
        for (const auto& s : level_splits)
            idx = (idx << 1) | (x[static_cast<std::size_t>(s.feature)] > s.threshold ? 1u : 0u);
        return idx;
    }
};

struct TreeEnsemble {
    std::vector<std::string> classes;        // sorted, unique
    std::vector<double> base_scores;         // per-class log frequency
    std::vector<std::vector<double>> bin_edges;  // per feature, ascending
    std::vector<ObliviousTree> trees;
    std::size_t feature_count = 0;
    std::vector<double> train_loss;  // log-loss after 0..T trees; not serialized

    int class_index(const std::string& label) const {
        for (std::size_t i = 0; i < classes.size(); ++i)
            if (classes[i] == label) return static_cast<int>(i);
        return -1;
    }
};

TreeEnsemble fit(const std::vector<std::vector<double>>& features,
                 const std::vector<std::string>& labels,
                 const TrainConfig& config);

// Raw class margins: base_scores plus the leaf values along x's path.
std::vector<double> predict_raw(const TreeEnsemble& ensemble, const std::vector<double>& x);

// Softmax of predict_raw; strictly positive, sums to 1.
std::vector<double> predict_proba(const TreeEnsemble& ensemble, const std::vector<double>& x);

std::string to_json(const TreeEnsemble& ensemble);
TreeEnsemble from_json(const std::string& text);
void save_model(const TreeEnsemble& ensemble, const std::string& path);
TreeEnsemble load_model(const std::string& path);

// Softmax with max-subtraction; shared by predict_proba and training.
std::vector<double> softmax(const std::vector<double>& margins);

}  // namespace branchlens::gbdt
