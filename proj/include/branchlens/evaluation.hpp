#pragma once

// Detector-quality metrics and the strategy archetype rule. Scores follow
// the spoof-positive convention: higher score means more spoof-like, so a
// threshold theta rejects bona fide samples scoring >= theta and misses
// spoof samples scoring < theta.

#include <string>
#include <vector>

#include "branchlens/errors.hpp"

namespace branchlens::eval {

struct ScoreSet {
    std::vector<double> bona;
    std::vector<double> spoof;
};

struct EERResult {
    double eer = 0.0;       // fraction, typically in [0, 0.5]
    double threshold = 0.0; // interpolated crossing point
};

// Equal error rate: FRR(t) = frac(bona >= t), FAR(t) = frac(spoof < t); the
// value at the linearly interpolated crossing of the two step functions.
EERResult eer(const ScoreSet& scores);

double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

// Pearson on average ranks (ties share their rank mean).
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// Macro F1 over the union of predicted and actual label sets; a class with
// an undefined F1 (no predictions and no actuals after filtering) counts 0.
double f1_macro(const std::vector<std::string>& predicted,
                const std::vector<std::string>& actual);

enum class Archetype {
    EFFECTIVE_SPECIALIZATION,
    EFFECTIVE_CONSENSUS,
    INEFFECTIVE_SPECIALIZATION,
    INEFFECTIVE_CONSENSUS,
    FLAWED_SPECIALIZATION,
};
const char* archetype_name(Archetype a);

struct ArchetypeThresholds {
    double eer_low = 1.0;    // percent; below is "effective"
    double eer_high = 10.0;  // percent; above is "flawed"
    double share = 20.0;     // percent; at or above is "specialization"
};

// Quadrant rule over (EER %, dominant share %). Mid-band consensus and
// high-EER consensus both map to INEFFECTIVE_CONSENSUS.
Archetype classify_archetype(double eer_pct, double share_pct,
                             const ArchetypeThresholds& t = {});

struct GroupStats {
    Archetype label;
    double mean = 0.0;
    double stddev = 0.0;   // sample; 0 for singleton groups
    double variance = 0.0;
    std::size_t count = 0;
};

// Per-archetype stats of a metric, ordered by enum value; only labels that
// occur appear.
std::vector<GroupStats> group_stats(const std::vector<std::pair<Archetype, double>>& values);

}  // namespace branchlens::eval
