#include "branchlens/treeshap.hpp"

#include <cmath>

namespace branchlens::shap {

namespace {

// Shapley weight for a coalition of size s among u players: s!(u-1-s)!/u!,
// computed as 1/(u*C(u-1,s)) to stay exact in doubles for u <= 16.
std::vector<double> shapley_weights(std::size_t u) {
    std::vector<double> w(u);
    double binom = 1.0;  // C(u-1, s)
    for (std::size_t s = 0; s < u; ++s) {
        w[s] = 1.0 / (static_cast<double>(u) * binom);
        binom = binom * static_cast<double>(u - 1 - s) / static_cast<double>(s + 1);
    }
    return w;
}

// One unique feature on the current root-leaf path. pi multiplies the
// indicator factors (feature present: does x pass every split?), zeta the
// cover fractions (feature absent).
struct PathFactor {
    int feature;
    double pi;
    double zeta;
};

struct TreeWalk {
    const gbdt::ObliviousTree* tree;
    const std::vector<double>* x;
    int class_index;
    std::vector<std::uint64_t> cover_prefix;  // prefix sums over leaf covers
    std::vector<PathFactor> path;
    std::vector<double>* phi;
    double base = 0.0;

    double cover(std::size_t level, std::size_t j) const {
        std::size_t width = tree->leaves.size() >> level;
        return static_cast<double>(cover_prefix[(j + 1) * width] - cover_prefix[j * width]);
    }

    void contribute(std::size_t leaf) {
        double value = tree->leaves[leaf].values[static_cast<std::size_t>(class_index)];
        double zeta_all = 1.0;
        for (const auto& e : path) zeta_all *= e.zeta;
        base += zeta_all * value;
        if (value == 0.0 || path.empty()) return;

        const std::size_t u = path.size();
        std::vector<double> w = shapley_weights(u);
        std::vector<double> coef(u, 0.0);
        for (std::size_t j = 0; j < u; ++j) {
            // coef[s] = total weight of picking exactly s of the other
            // features as present: coefficients of prod_{t!=j} (zeta + pi*z).
            coef.assign(u, 0.0);
            coef[0] = 1.0;
            std::size_t deg = 0;
            for (std::size_t t = 0; t < u; ++t) {
                if (t == j) continue;
                // Degree grows to deg + 1, so the update must reach that slot.
                for (std::size_t s = deg + 2; s-- > 0;) {
                    double keep = coef[s];
                    coef[s] = keep * path[t].zeta + (s > 0 ? coef[s - 1] * path[t].pi : 0.0);
                }
                ++deg;
            }
            double weight = 0.0;
            for (std::size_t s = 0; s < u; ++s) weight += coef[s] * w[s];
            (*phi)[static_cast<std::size_t>(path[j].feature)] +=
                (path[j].pi - path[j].zeta) * weight * value;
        }
    }

    void walk(std::size_t level, std::size_t j) {
        if (level == tree->level_splits.size()) {
            contribute(j);
            return;
        }
        const auto& split = tree->level_splits[level];
        double node_cover = cover(level, j);
        bool goes_right = (*x)[static_cast<std::size_t>(split.feature)] > split.threshold;
        for (int side = 0; side < 2; ++side) {
            std::size_t child = j * 2 + static_cast<std::size_t>(side);
            double pi = (side == (goes_right ? 1 : 0)) ? 1.0 : 0.0;
            double zeta = node_cover > 0.0 ? cover(level + 1, child) / node_cover : 0.0;

            int existing = -1;
            for (std::size_t e = 0; e < path.size(); ++e)
                if (path[e].feature == split.feature) existing = static_cast<int>(e);
            if (existing >= 0) {
                // Index, not a reference: deeper levels may push_back and
                // reallocate the path while this frame is suspended.
                const std::size_t e = static_cast<std::size_t>(existing);
                const PathFactor saved = path[e];
                path[e].pi *= pi;
                path[e].zeta *= zeta;
                if (path[e].pi != 0.0 || path[e].zeta != 0.0) walk(level + 1, child);
                path[e] = saved;
            } else {
                path.push_back({split.feature, pi, zeta});
                if (pi != 0.0 || zeta != 0.0) walk(level + 1, child);
                path.pop_back();
            }
        }
    }
};

void check_inputs(const gbdt::TreeEnsemble& ensemble, const std::vector<double>& x,
                  int class_index) {
    if (x.size() != ensemble.feature_count)
        throw Error(ErrorCode::DimensionMismatch,
                    "expected " + std::to_string(ensemble.feature_count) + " features, got " +
                        std::to_string(x.size()));
    if (class_index < 0 || static_cast<std::size_t>(class_index) >= ensemble.classes.size())
        throw Error(ErrorCode::OutOfRange, "class index " + std::to_string(class_index) +
                                               " outside model classes");
}

std::vector<std::uint64_t> cover_prefix_for(const gbdt::ObliviousTree& tree) {
    std::vector<std::uint64_t> prefix(tree.leaves.size() + 1, 0);
    for (std::size_t l = 0; l < tree.leaves.size(); ++l)
        prefix[l + 1] = prefix[l] + tree.leaves[l].cover;
    if (prefix.back() == 0)
        throw Error(ErrorCode::MissingCovers, "tree has no recorded leaf covers");
    return prefix;
}

}  // namespace

ShapAttribution shap_values(const gbdt::TreeEnsemble& ensemble,
                            const std::vector<double>& x,
                            int class_index) {
    check_inputs(ensemble, x, class_index);

    ShapAttribution out;
    out.class_index = class_index;
    out.phi.assign(ensemble.feature_count, 0.0);
    out.base_value = ensemble.base_scores[static_cast<std::size_t>(class_index)];

    for (const auto& tree : ensemble.trees) {
        TreeWalk walk_state;
        walk_state.tree = &tree;
        walk_state.x = &x;
        walk_state.class_index = class_index;
        walk_state.cover_prefix = cover_prefix_for(tree);
        walk_state.phi = &out.phi;
        walk_state.walk(0, 0);
        out.base_value += walk_state.base;
    }
    return out;
}

namespace {

// Path-dependent game value for one tree: coalition features follow x,
// the rest split by cover fractions.
double game_value(const gbdt::ObliviousTree& tree,
                  const std::vector<std::uint64_t>& prefix,
                  const std::vector<double>& x, int class_index,
                  std::uint32_t mask, std::size_t level, std::size_t j) {
    if (level == tree.level_splits.size())
        return tree.leaves[j].values[static_cast<std::size_t>(class_index)];
    const auto& split = tree.level_splits[level];
    std::size_t left = j * 2, right = j * 2 + 1;
    if (mask & (1u << split.feature)) {
        bool goes_right = x[static_cast<std::size_t>(split.feature)] > split.threshold;
        return game_value(tree, prefix, x, class_index, mask, level + 1,
                          goes_right ? right : left);
    }
    std::size_t width = tree.leaves.size() >> level;
    double node_cover =
        static_cast<double>(prefix[(j + 1) * width] - prefix[j * width]);
    if (node_cover <= 0.0) return 0.0;
    std::size_t cw = width / 2;
    double cl = static_cast<double>(prefix[(left + 1) * cw] - prefix[left * cw]);
    double cr = static_cast<double>(prefix[(right + 1) * cw] - prefix[right * cw]);
    return (cl / node_cover) *
               game_value(tree, prefix, x, class_index, mask, level + 1, left) +
           (cr / node_cover) *
               game_value(tree, prefix, x, class_index, mask, level + 1, right);
}

}  // namespace

ShapAttribution brute_force_shap(const gbdt::TreeEnsemble& ensemble,
                                 const std::vector<double>& x,
                                 int class_index) {
    check_inputs(ensemble, x, class_index);
    const std::size_t F = ensemble.feature_count;
    if (F > 20)
        throw Error(ErrorCode::TooManyFeatures,
                    "brute force supports at most 20 features, got " + std::to_string(F));

    std::vector<std::vector<std::uint64_t>> prefixes;
    prefixes.reserve(ensemble.trees.size());
    for (const auto& tree : ensemble.trees) prefixes.push_back(cover_prefix_for(tree));

    const std::uint32_t n_masks = 1u << F;
    std::vector<double> v(n_masks, 0.0);
    for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
        double total = ensemble.base_scores[static_cast<std::size_t>(class_index)];
        for (std::size_t t = 0; t < ensemble.trees.size(); ++t)
            total += game_value(ensemble.trees[t], prefixes[t], x, class_index, mask, 0, 0);
        v[mask] = total;
    }

    std::vector<double> w = shapley_weights(F);
    ShapAttribution out;
    out.class_index = class_index;
    out.phi.assign(F, 0.0);
    out.base_value = v[0];
    for (std::size_t f = 0; f < F; ++f) {
        std::uint32_t bit = 1u << f;
        double phi = 0.0;
        for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
            if (mask & bit) continue;
            std::size_t s = static_cast<std::size_t>(__builtin_popcount(mask));
            phi += w[s] * (v[mask | bit] - v[mask]);
        }
        out.phi[f] = phi;
    }
    return out;
}

}  // namespace branchlens::shap
