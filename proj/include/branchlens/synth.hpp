#pragma once

// Synthetic datasets with planted attribution structure. Per class, a fixed
// random orthonormal direction set is embedded in the activation covariance:
//   EXPERT(b)    scales those directions by (1 + signal_strength) in every
//                component of block b
//   CONSENSUS    scales them by (1 + signal_strength / 4) in all components
//   CONFLICT(b)  scales block b's non-POOL components up by
//                (1 + signal_strength) and its POOL component down by
//                1 / (1 + signal_strength)
// Classes absent from strategy_map must be labeled "bonafide" and get plain
// noise. Detector scores are planted as class-conditional Gaussians.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "branchlens/dataio.hpp"

namespace branchlens::synth {

enum class StrategyKind { EXPERT, CONSENSUS, CONFLICT };
const char* strategy_kind_name(StrategyKind k);
StrategyKind parse_strategy_kind(const std::string& name);

struct Strategy {
    StrategyKind kind = StrategyKind::CONSENSUS;
    std::string block;  // required for EXPERT and CONFLICT
};

struct SynthConfig {
    Layout layout;                       // default-constructed -> canonical
    std::vector<std::string> classes;
    std::map<std::string, Strategy> strategy_map;
    std::size_t rows_d = 12;             // activation channels per component
    std::size_t cols_n = 20;             // observations per component
    std::size_t samples_per_class = 50;  // >= 2
    double signal_strength = 4.0;        // >= 0
    double noise_scale = 1.0;            // > 0
    int k = 10;                          // plants ceil(k/2) directions
    std::uint64_t seed = 0;
    // Detector score planting: bona ~ N(0, score_std), class c ~
    // N(separation, score_std) with a per-class override map.
    double score_separation = 4.0;
    double score_std = 1.0;
    std::map<std::string, double> score_separation_override;
};

// Deterministic for a fixed config; distinct seeds give distinct tensors.
MemorySource generate(const SynthConfig& config);

SynthConfig config_from_json(const std::string& text);
std::string config_to_json(const SynthConfig& config);

}  // namespace branchlens::synth
