#include "branchlens/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

using nlohmann::json;
using nlohmann::ordered_json;

namespace branchlens::gbdt {

static void validate_config(const TrainConfig& cfg) {
    if (cfg.iterations < 1)
        throw Error(ErrorCode::InvalidConfig, "iterations must be >= 1");
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate))
        throw Error(ErrorCode::InvalidConfig, "learning_rate must be positive");
    if (cfg.depth < 1 || cfg.depth > 16)
        throw Error(ErrorCode::InvalidConfig, "depth must be in [1, 16]");
    if (cfg.l2_leaf_reg < 0.0 || !std::isfinite(cfg.l2_leaf_reg))
        throw Error(ErrorCode::InvalidConfig, "l2_leaf_reg must be >= 0");
    if (cfg.bins < 2 || cfg.bins > 65535)
        throw Error(ErrorCode::InvalidConfig, "bins must be in [2, 65535]");
    if (cfg.worker_parallelism < 1)
        throw Error(ErrorCode::InvalidConfig, "worker_parallelism must be >= 1");
    if (cfg.early_stopping_rounds < 0)
        throw Error(ErrorCode::InvalidConfig, "early_stopping_rounds must be >= 0");
}

std::vector<double> softmax(const std::vector<double>& margins) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double m : margins) hi = std::max(hi, m);
    std::vector<double> p(margins.size());
    double z = 0.0;
    for (std::size_t c = 0; c < margins.size(); ++c) {
        p[c] = std::exp(margins[c] - hi);
        z += p[c];
    }
    for (double& v : p) {
        v /= z;
        if (v < 1e-300) v = 1e-300;  // keep probabilities strictly positive
    }
    double s = 0.0;
    for (double v : p) s += v;
    for (double& v : p) v /= s;
    return p;
}

// Quantile bin boundaries; splits test x > edge, so each edge is a midpoint
// between two adjacent distinct values.
static std::vector<double> quantile_edges(std::vector<double> vals, int bins) {
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    std::vector<double> edges;
    if (vals.size() < 2) return edges;
    if (vals.size() <= static_cast<std::size_t>(bins)) {
        for (std::size_t i = 0; i + 1 < vals.size(); ++i)
            edges.push_back(vals[i] + 0.5 * (vals[i + 1] - vals[i]));
        return edges;
    }
    for (int b = 1; b < bins; ++b) {
        std::size_t idx = static_cast<std::size_t>(
            static_cast<double>(b) * static_cast<double>(vals.size()) / bins);
        idx = std::min(std::max<std::size_t>(idx, 1), vals.size() - 1);
        double edge = vals[idx - 1] + 0.5 * (vals[idx] - vals[idx - 1]);
        if (edges.empty() || edge > edges.back()) edges.push_back(edge);
    }
    return edges;
}

static double leaf_score(double g, double h, double lambda) {
    double denom = h + lambda;
    return denom > 0.0 ? g * g / denom : 0.0;
}

TreeEnsemble fit(const std::vector<std::vector<double>>& features,
                 const std::vector<std::string>& labels,
                 const TrainConfig& config) {
    validate_config(config);
    const std::size_t n = features.size();
    if (n == 0) throw Error(ErrorCode::EmptyDataset, "no training rows");
    if (labels.size() != n)
        throw Error(ErrorCode::DimensionMismatch, "labels do not match feature rows");
    const std::size_t F = features[0].size();
    if (F == 0) throw Error(ErrorCode::DimensionMismatch, "rows must have at least one feature");
    for (std::size_t r = 0; r < n; ++r) {
        if (features[r].size() != F)
            throw Error(ErrorCode::DimensionMismatch,
                        "row " + std::to_string(r) + " has " + std::to_string(features[r].size()) +
                            " features, expected " + std::to_string(F));
        for (double v : features[r])
            if (!std::isfinite(v))
                throw Error(ErrorCode::NonFiniteFeature,
                            "non-finite feature in row " + std::to_string(r));
    }

    TreeEnsemble model;
    {
        std::set<std::string> uniq(labels.begin(), labels.end());
        if (uniq.size() < 2)
            throw Error(ErrorCode::SingleClassDataset, "training needs at least 2 classes");
        model.classes.assign(uniq.begin(), uniq.end());
    }
    const std::size_t K = model.classes.size();
    model.feature_count = F;

    std::vector<int> y(n);
    std::vector<std::size_t> class_count(K, 0);
    for (std::size_t r = 0; r < n; ++r) {
        int c = model.class_index(labels[r]);
        y[r] = c;
        ++class_count[static_cast<std::size_t>(c)];
    }
    model.base_scores.resize(K);
    for (std::size_t c = 0; c < K; ++c)
        model.base_scores[c] =
            std::log(static_cast<double>(class_count[c]) / static_cast<double>(n));

    model.bin_edges.resize(F);
    {
        std::vector<double> col(n);
        for (std::size_t f = 0; f < F; ++f) {
            for (std::size_t r = 0; r < n; ++r) col[r] = features[r][f];
            model.bin_edges[f] = quantile_edges(col, config.bins);
        }
    }

    // Bin codes: code = number of edges strictly below x, so code > e exactly
    // when x > edges[e]. Prediction on raw values agrees bit-for-bit.
    std::vector<std::uint16_t> codes(n * F);
    std::size_t max_bins = 1;
    for (std::size_t f = 0; f < F; ++f) {
        const auto& edges = model.bin_edges[f];
        max_bins = std::max(max_bins, edges.size() + 1);
        for (std::size_t r = 0; r < n; ++r) {
            auto it = std::lower_bound(edges.begin(), edges.end(), features[r][f]);
            codes[r * F + f] = static_cast<std::uint16_t>(it - edges.begin());
        }
    }

    std::vector<double> margins(n * K);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < K; ++c) margins[r * K + c] = model.base_scores[c];

    std::vector<double> grad(n * K), hess(n * K);
    std::vector<std::uint32_t> nodeof(n);
    const double lambda = config.l2_leaf_reg;
    const double lr = config.learning_rate;

    auto log_loss = [&]() {
        double total = 0.0;
        std::vector<double> row(K);
        for (std::size_t r = 0; r < n; ++r) {
            std::copy_n(&margins[r * K], K, row.begin());
            std::vector<double> p = softmax(row);
            total -= std::log(std::max(p[static_cast<std::size_t>(y[r])], 1e-300));
        }
        return total / static_cast<double>(n);
    };
    model.train_loss.push_back(log_loss());

    struct Candidate {
        double gain = -std::numeric_limits<double>::infinity();
        int edge = -1;
    };

    double best_loss = model.train_loss.back();
    int stall = 0;

    for (int iter = 0; iter < config.iterations; ++iter) {
        // Gradients/hessians of softmax cross-entropy at current margins.
        std::vector<double> row(K);
        for (std::size_t r = 0; r < n; ++r) {
            std::copy_n(&margins[r * K], K, row.begin());
            std::vector<double> p = softmax(row);
            for (std::size_t c = 0; c < K; ++c) {
                double pc = p[c];
                grad[r * K + c] = pc - (static_cast<int>(c) == y[r] ? 1.0 : 0.0);
                hess[r * K + c] = pc * (1.0 - pc);
            }
        }

        std::fill(nodeof.begin(), nodeof.end(), 0u);
        ObliviousTree tree;

        for (int level = 0; level < config.depth; ++level) {
            const std::size_t n_nodes = 1ull << level;

            std::vector<double> node_g(n_nodes * K, 0.0), node_h(n_nodes * K, 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                double* ng = &node_g[nodeof[r] * K];
                double* nh = &node_h[nodeof[r] * K];
                const double* gr = &grad[r * K];
                const double* hr = &hess[r * K];
                for (std::size_t c = 0; c < K; ++c) {
                    ng[c] += gr[c];
                    nh[c] += hr[c];
                }
            }
            std::vector<Candidate> per_feature(F);
            const int n_threads =
                std::max(1, std::min<int>(config.worker_parallelism, static_cast<int>(F)));
            auto feature_worker = [&](int t) {
                // Per-thread histogram, zeroed lazily during the scan pass.
                std::vector<double> hist_g(n_nodes * max_bins * K, 0.0);
                std::vector<double> hist_h(n_nodes * max_bins * K, 0.0);
                std::vector<double> gl(K), hl(K);
                for (std::size_t f = t; f < F; f += static_cast<std::size_t>(n_threads)) {
                    const std::size_t n_edges = model.bin_edges[f].size();
                    if (n_edges == 0) continue;
                    const std::size_t nb = n_edges + 1;
                    for (std::size_t r = 0; r < n; ++r) {
                        std::size_t slot = (nodeof[r] * nb + codes[r * F + f]) * K;
                        const double* gr = &grad[r * K];
                        const double* hr = &hess[r * K];
                        for (std::size_t c = 0; c < K; ++c) {
                            hist_g[slot + c] += gr[c];
                            hist_h[slot + c] += hr[c];
                        }
                    }
                    Candidate best;
                    std::vector<double> gains(n_edges, 0.0);
                    for (std::size_t node = 0; node < n_nodes; ++node) {
                        std::fill(gl.begin(), gl.end(), 0.0);
                        std::fill(hl.begin(), hl.end(), 0.0);
                        const double* ng = &node_g[node * K];
                        const double* nh = &node_h[node * K];
                        double node_base = 0.0;
                        for (std::size_t c = 0; c < K; ++c)
                            node_base += leaf_score(ng[c], nh[c], lambda);
                        for (std::size_t b = 0; b < nb; ++b) {
                            std::size_t slot = (node * nb + b) * K;
                            for (std::size_t c = 0; c < K; ++c) {
                                gl[c] += hist_g[slot + c];
                                hl[c] += hist_h[slot + c];
                                hist_g[slot + c] = 0.0;  // ready for the next feature
                                hist_h[slot + c] = 0.0;
                            }
                            if (b >= n_edges) continue;
                            double s = 0.0;
                            for (std::size_t c = 0; c < K; ++c)
                                s += leaf_score(gl[c], hl[c], lambda) +
                                     leaf_score(ng[c] - gl[c], nh[c] - hl[c], lambda);
                            gains[b] += s - node_base;
                        }
                    }
                    for (std::size_t b = 0; b < n_edges; ++b) {
                        if (gains[b] > best.gain) {
                            best.gain = gains[b];
                            best.edge = static_cast<int>(b);
                        }
                    }
                    per_feature[f] = best;
                }
            };
            if (n_threads == 1) {
                feature_worker(0);
            } else {
                std::vector<std::thread> pool;
                for (int t = 0; t < n_threads; ++t) pool.emplace_back(feature_worker, t);
                for (auto& th : pool) th.join();
            }

            // Fixed-order reduction: ties go to the lowest feature index, then
            // the lowest threshold.
            int best_f = -1;
            Candidate best;
            for (std::size_t f = 0; f < F; ++f) {
                if (per_feature[f].edge >= 0 && per_feature[f].gain > best.gain) {
                    best = per_feature[f];
                    best_f = static_cast<int>(f);
                }
            }
            if (best_f < 0) break;  // no splittable feature left; shallower tree

            LevelSplit split{best_f, model.bin_edges[static_cast<std::size_t>(best_f)]
                                         [static_cast<std::size_t>(best.edge)]};
            tree.level_splits.push_back(split);
            for (std::size_t r = 0; r < n; ++r) {
                bool right = codes[r * F + static_cast<std::size_t>(best_f)] >
                             static_cast<std::uint16_t>(best.edge);
                nodeof[r] = (nodeof[r] << 1) | (right ? 1u : 0u);
            }
        }

        const std::size_t n_leaves = 1ull << tree.level_splits.size();
        std::vector<double> leaf_g(n_leaves * K, 0.0), leaf_h(n_leaves * K, 0.0);
        std::vector<std::uint64_t> leaf_cover(n_leaves, 0);
        for (std::size_t r = 0; r < n; ++r) {
            double* g = &leaf_g[nodeof[r] * K];
            double* h = &leaf_h[nodeof[r] * K];
            const double* gr = &grad[r * K];
            const double* hr = &hess[r * K];
            for (std::size_t c = 0; c < K; ++c) {
                g[c] += gr[c];
                h[c] += hr[c];
            }
            ++leaf_cover[nodeof[r]];
        }
        tree.leaves.resize(n_leaves);
        for (std::size_t l = 0; l < n_leaves; ++l) {
            tree.leaves[l].cover = leaf_cover[l];
            tree.leaves[l].values.assign(K, 0.0);
            if (leaf_cover[l] == 0) continue;
            for (std::size_t c = 0; c < K; ++c) {
                double denom = leaf_h[l * K + c] + lambda;
                tree.leaves[l].values[c] = denom > 0.0 ? -lr * leaf_g[l * K + c] / denom : 0.0;
            }
        }

        for (std::size_t r = 0; r < n; ++r) {
            const auto& leaf = tree.leaves[nodeof[r]];
            for (std::size_t c = 0; c < K; ++c) margins[r * K + c] += leaf.values[c];
        }
        model.trees.push_back(std::move(tree));
        model.train_loss.push_back(log_loss());

        if (config.early_stopping_rounds > 0) {
            if (model.train_loss.back() < best_loss) {
                best_loss = model.train_loss.back();
                stall = 0;
            } else if (++stall >= config.early_stopping_rounds) {
                break;
            }
        }
    }
    return model;
}

std::vector<double> predict_raw(const TreeEnsemble& ensemble, const std::vector<double>& x) {
    if (x.size() != ensemble.feature_count)
        throw Error(ErrorCode::DimensionMismatch,
                    "expected " + std::to_string(ensemble.feature_count) + " features, got " +
                        std::to_string(x.size()));
    std::vector<double> margins = ensemble.base_scores;
    for (const auto& tree : ensemble.trees) {
        const auto& leaf = tree.leaves[tree.leaf_index(x)];
        for (std::size_t c = 0; c < margins.size(); ++c) margins[c] += leaf.values[c];
    }
    return margins;
}

std::vector<double> predict_proba(const TreeEnsemble& ensemble, const std::vector<double>& x) {
    return softmax(predict_raw(ensemble, x));
}

// ==================== persistence ====================

std::string to_json(const TreeEnsemble& ensemble) {
    ordered_json doc;
    doc["format_version"] = 1;
    doc["classes"] = ensemble.classes;
    doc["base_scores"] = ensemble.base_scores;
    doc["feature_count"] = ensemble.feature_count;
    doc["bin_edges"] = ensemble.bin_edges;
    doc["trees"] = ordered_json::array();
    for (const auto& tree : ensemble.trees) {
        ordered_json jt;
        jt["level_splits"] = ordered_json::array();
        for (const auto& s : tree.level_splits)
            jt["level_splits"].push_back({{"feature", s.feature}, {"threshold", s.threshold}});
        jt["leaves"] = ordered_json::array();
        for (const auto& leaf : tree.leaves)
            jt["leaves"].push_back({{"values", leaf.values}, {"cover", leaf.cover}});
        doc["trees"].push_back(jt);
    }
    return doc.dump(1);
}

TreeEnsemble from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::SchemaViolation, std::string("model is not valid JSON: ") + e.what());
    }
    try {
        if (doc.at("format_version").get<int>() != 1)
            throw Error(ErrorCode::SchemaViolation, "unsupported model format_version");
        TreeEnsemble m;
        m.classes = doc.at("classes").get<std::vector<std::string>>();
        m.base_scores = doc.at("base_scores").get<std::vector<double>>();
        m.feature_count = doc.at("feature_count").get<std::size_t>();
        m.bin_edges = doc.at("bin_edges").get<std::vector<std::vector<double>>>();
        if (m.classes.size() < 2 || m.base_scores.size() != m.classes.size())
            throw Error(ErrorCode::SchemaViolation, "model class metadata inconsistent");
        for (const auto& jt : doc.at("trees")) {
            ObliviousTree tree;
            for (const auto& js : jt.at("level_splits")) {
                LevelSplit s;
                s.feature = js.at("feature").get<int>();
                s.threshold = js.at("threshold").get<double>();
                if (s.feature < 0 || static_cast<std::size_t>(s.feature) >= m.feature_count)
                    throw Error(ErrorCode::SchemaViolation, "split feature out of range");
                tree.level_splits.push_back(s);
            }
            for (const auto& jl : jt.at("leaves")) {
                TreeLeaf leaf;
                leaf.values = jl.at("values").get<std::vector<double>>();
                leaf.cover = jl.at("cover").get<std::uint64_t>();
                if (leaf.values.size() != m.classes.size())
                    throw Error(ErrorCode::SchemaViolation, "leaf values do not match classes");
                tree.leaves.push_back(std::move(leaf));
            }
            if (tree.leaves.size() != (1ull << tree.level_splits.size()))
                throw Error(ErrorCode::SchemaViolation, "leaf count does not match depth");
            m.trees.push_back(std::move(tree));
        }
        return m;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaViolation, std::string("model JSON malformed: ") + e.what());
    }
}

void save_model(const TreeEnsemble& ensemble, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open '" + path + "' for writing");
    out << to_json(ensemble) << "\n";
    if (!out) throw Error(ErrorCode::IoFailure, "short write to '" + path + "'");
}

TreeEnsemble load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open model '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

}  // namespace branchlens::gbdt
