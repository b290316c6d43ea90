#include "branchlens/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace branchlens::eval {

EERResult eer(const ScoreSet& scores) {
    if (scores.bona.empty() || scores.spoof.empty())
        throw Error(ErrorCode::EmptyScores, "eer needs both bona fide and spoof scores");
    for (double v : scores.bona)
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "non-finite bona score");
    for (double v : scores.spoof)
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "non-finite spoof score");

    std::vector<double> bona = scores.bona;
    std::vector<double> spoof = scores.spoof;
    std::sort(bona.begin(), bona.end());
    std::sort(spoof.begin(), spoof.end());

    std::vector<double> thresholds;
    thresholds.reserve(bona.size() + spoof.size());
    thresholds.insert(thresholds.end(), bona.begin(), bona.end());
    thresholds.insert(thresholds.end(), spoof.begin(), spoof.end());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    const double nb = static_cast<double>(bona.size());
    const double ns = static_cast<double>(spoof.size());
    auto frr_at = [&](double t) {
        // fraction of bona fide scores rejected: score >= t
        auto it = std::lower_bound(bona.begin(), bona.end(), t);
        return static_cast<double>(bona.end() - it) / nb;
    };
    auto far_at = [&](double t) {
        // fraction of spoof scores accepted: score < t
        auto it = std::lower_bound(spoof.begin(), spoof.end(), t);
        return static_cast<double>(it - spoof.begin()) / ns;
    };

    // Operating points at every pooled threshold plus a virtual end point
    // above the maximum (FAR 1, FRR 0); the first point is always (0, 1).
    double prev_t = thresholds.front(), prev_far = far_at(prev_t), prev_frr = frr_at(prev_t);
    if (prev_far >= prev_frr)
        return {prev_far, prev_t};  // degenerate: crossing at the first point
    const std::size_t n_pts = thresholds.size() + 1;
    for (std::size_t i = 1; i < n_pts; ++i) {
        double t, far, frr;
        if (i < thresholds.size()) {
            t = thresholds[i];
            far = far_at(t);
            frr = frr_at(t);
        } else {
            t = thresholds.back() + 1.0;
            far = 1.0;
            frr = 0.0;
        }
        if (far >= frr) {
            if (far == frr) return {far, t};
            double denom = (far - prev_far) + (prev_frr - frr);
            double alpha = (prev_frr - prev_far) / denom;
            double value = prev_far + alpha * (far - prev_far);
            return {value, prev_t + alpha * (t - prev_t)};
        }
        prev_t = t;
        prev_far = far;
        prev_frr = frr;
    }
    // Unreachable: the virtual end point always satisfies far >= frr.
    throw Error(ErrorCode::OutOfRange, "eer crossing not found");
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw Error(ErrorCode::LengthMismatch, "pearson needs equal-length vectors");
    const std::size_t n = xs.size();
    if (n < 2) throw Error(ErrorCode::DegenerateLength, "pearson needs at least 2 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) { mx += xs[i]; my += ys[i]; }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw Error(ErrorCode::ZeroVariance, "pearson undefined for a constant vector");
    return sxy / std::sqrt(sxx * syy);
}

static std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw Error(ErrorCode::LengthMismatch, "spearman needs equal-length vectors");
    if (xs.size() < 2) throw Error(ErrorCode::DegenerateLength, "spearman needs at least 2 points");
    return pearson(average_ranks(xs), average_ranks(ys));
}

double f1_macro(const std::vector<std::string>& predicted,
                const std::vector<std::string>& actual) {
    if (predicted.size() != actual.size())
        throw Error(ErrorCode::LengthMismatch, "f1_macro needs aligned label vectors");
    if (predicted.empty()) throw Error(ErrorCode::EmptyInput, "f1_macro needs at least one label");

    std::set<std::string> universe(predicted.begin(), predicted.end());
    universe.insert(actual.begin(), actual.end());

    double total = 0.0;
    for (const auto& cls : universe) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            bool p = predicted[i] == cls;
            bool a = actual[i] == cls;
            if (p && a) ++tp;
            else if (p) ++fp;
            else if (a) ++fn;
        }
        double denom = static_cast<double>(2 * tp + fp + fn);
        total += denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    }
    return total / static_cast<double>(universe.size());
}

const char* archetype_name(Archetype a) {
    switch (a) {
        case Archetype::EFFECTIVE_SPECIALIZATION: return "EFFECTIVE_SPECIALIZATION";
        case Archetype::EFFECTIVE_CONSENSUS: return "EFFECTIVE_CONSENSUS";
        case Archetype::INEFFECTIVE_SPECIALIZATION: return "INEFFECTIVE_SPECIALIZATION";
        case Archetype::INEFFECTIVE_CONSENSUS: return "INEFFECTIVE_CONSENSUS";
        case Archetype::FLAWED_SPECIALIZATION: return "FLAWED_SPECIALIZATION";
    }
    return "?";
}

Archetype classify_archetype(double eer_pct, double share_pct, const ArchetypeThresholds& t) {
    if (!(t.eer_low > 0.0) || !(t.eer_high > t.eer_low) || !(t.share > 0.0) || !(t.share < 100.0))
        throw Error(ErrorCode::InvalidConfig, "archetype thresholds out of order");
    if (!std::isfinite(eer_pct) || eer_pct < 0.0 || eer_pct > 100.0)
        throw Error(ErrorCode::OutOfRange, "eer percent must be in [0, 100]");
    if (!std::isfinite(share_pct) || share_pct <= 0.0 || share_pct >= 100.0)
        throw Error(ErrorCode::OutOfRange, "share percent must be in (0, 100)");

    bool specialized = share_pct >= t.share;
    if (eer_pct < t.eer_low)
        return specialized ? Archetype::EFFECTIVE_SPECIALIZATION : Archetype::EFFECTIVE_CONSENSUS;
    if (eer_pct <= t.eer_high)
        return specialized ? Archetype::INEFFECTIVE_SPECIALIZATION : Archetype::INEFFECTIVE_CONSENSUS;
    return specialized ? Archetype::FLAWED_SPECIALIZATION : Archetype::INEFFECTIVE_CONSENSUS;
}

std::vector<GroupStats> group_stats(const std::vector<std::pair<Archetype, double>>& values) {
    std::map<Archetype, std::vector<double>> groups;
    for (const auto& [label, v] : values) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "group_stats value not finite");
        groups[label].push_back(v);
    }
    std::vector<GroupStats> out;
    for (const auto& [label, vs] : groups) {
        GroupStats g;
        g.label = label;
        g.count = vs.size();
        for (double v : vs) g.mean += v;
        g.mean /= static_cast<double>(vs.size());
        if (vs.size() > 1) {
            double acc = 0.0;
            for (double v : vs) acc += (v - g.mean) * (v - g.mean);
            g.variance = acc / static_cast<double>(vs.size() - 1);
            g.stddev = std::sqrt(g.variance);
        }
        out.push_back(g);
    }
    return out;
}

}  // namespace branchlens::eval
