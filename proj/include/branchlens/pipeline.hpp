#pragma once

// End-to-end orchestration: activation tensors -> spectral meta-features ->
// boosted meta-classifier -> per-sample Shapley attributions -> per-attack
// branch reports, plus the two ablations and the strategy-matrix figure.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "branchlens/attribution.hpp"
#include "branchlens/dataio.hpp"
#include "branchlens/evaluation.hpp"
#include "branchlens/gbdt.hpp"
#include "branchlens/treeshap.hpp"

namespace branchlens::pipeline {

struct PipelineConfig {
    std::string dataset;  // manifest path; ignored when a source is passed in
    int k = 10;
    gbdt::TrainConfig train;
    std::vector<attribution::Penalty> penalties = {
        attribution::Penalty::LINEAR, attribution::Penalty::QUADRATIC,
        attribution::Penalty::EXPONENTIAL, attribution::Penalty::NONE};
    eval::ArchetypeThresholds archetype;
    double alpha = 0.05;
    std::string out;  // output directory; empty keeps everything in memory
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string scores;  // optional score CSV: sample_id,score
    bool use_model_scores = false;  // spoof score = 1 - P(bonafide)
};

PipelineConfig config_from_json(const std::string& text);
std::string config_to_json(const PipelineConfig& config);
PipelineConfig load_config(const std::string& path);

struct FeatureTable {
    std::vector<std::string> sample_ids;
    std::vector<std::string> labels;
    std::vector<std::vector<double>> rows;  // |components| * k each
};

// Signatures for every sample and component, concatenated in layout order.
// CROSS_SAMPLE components pool same-class samples as columns and share the
// group signature. jobs parallelizes over samples with fixed result slots.
FeatureTable extract_meta_features(const ActivationSource& source, int k, int jobs);

struct BlockReport {
    std::string block;
    double phi = 0.0;
    double phi_ci = 0.0;
    double sigma = 0.0;                            // under the mean component phis
    std::map<attribution::Penalty, double> confidence;
    double share_pct = 0.0;                        // primary-penalty softmax share
    double share_ci_pct = 0.0;
};

struct StrategyRecord {
    std::string attack;
    std::size_t n_samples = 0;
    double eer = 0.0;     // fraction
    double eer_ci = 0.0;  // bootstrap half-width, fraction
    std::vector<BlockReport> blocks;  // layout block order
    std::string dominant_block;
    double dominant_share_pct = 0.0;
    eval::Archetype archetype = eval::Archetype::INEFFECTIVE_CONSENSUS;
};

struct PipelineResult {
    std::vector<std::string> classes;
    std::vector<std::string> blocks;      // layout block order
    std::vector<StrategyRecord> records;  // one per attack, dataset class order
    std::optional<double> pearson_share_eer;
    std::optional<double> spearman_share_eer;
    std::vector<eval::GroupStats> share_by_archetype;
    gbdt::TreeEnsemble model;
    FeatureTable features;
    std::vector<shap::ShapAttribution> attributions;  // own-class, per sample
};

// Full run; when config.out is non-empty also writes table1.csv,
// table3_phi.csv, table4_shares.csv, strategy_matrix.svg/.csv, summary.json,
// model.json and shap_values.csv into it.
PipelineResult run_pipeline(const PipelineConfig& config, const ActivationSource& source);
PipelineResult run_pipeline(const PipelineConfig& config);  // loads config.dataset

struct EigAblationPoint {
    int k = 0;
    double f1 = 0.0;             // held-out macro F1, stratified 80/20 split
    std::uint64_t memory_bytes = 0;  // n_samples * |components| * k * 8
    double retention_pct = 0.0;  // 100 * f1 / max f1 over the sweep
    double savings_pct = 0.0;    // 100 * (1 - k / max k)
};

std::vector<EigAblationPoint> ablate_eigencount(const PipelineConfig& config,
                                                const ActivationSource& source,
                                                const std::vector<int>& ks);

struct PenaltyAblation {
    std::vector<std::string> attacks;
    std::vector<attribution::Penalty> penalties;  // all four, fixed order
    // dominant[a][p]: dominant block of attack a under penalty p
    std::vector<std::vector<std::string>> dominant;
    // Kendall tau of each penalty's concatenated per-attack block ranking
    // against LINEAR's.
    std::vector<double> tau_vs_linear;
};

PenaltyAblation ablate_penalty(const PipelineConfig& config, const ActivationSource& source);

void emit_strategy_matrix(const std::vector<StrategyRecord>& records,
                          const eval::ArchetypeThresholds& thresholds,
                          const std::string& svg_path,
                          const std::string& csv_path);

// Individual report emitters; run_pipeline calls all of them when out is
// set, and the CLI subcommands call their own slice. All numeric fields are
// shortest-round-trip formatted, so outputs are byte-stable.
void write_table1_csv(const PipelineResult& result, attribution::Penalty primary,
                      const std::string& path);
void write_phi_csv(const PipelineResult& result, const std::string& path);
void write_shares_csv(const PipelineResult& result, attribution::Penalty primary,
                      const std::string& path);
void write_features_csv(const FeatureTable& features, const std::string& path);
void write_shap_csv(const std::vector<shap::ShapAttribution>& attributions,
                    const std::vector<std::string>& classes, const std::string& path);
void write_summary_json(const PipelineResult& result, const PipelineConfig& config,
                        const std::string& path);
void write_eig_ablation_csv(const std::vector<EigAblationPoint>& points,
                            const std::string& path);
void write_penalty_ablation_csv(const PenaltyAblation& ablation, const std::string& path);

// Average ranks (1-based, ties averaged) of the block confidence values for
// one attack; exposed for the penalty ablation and its tests.
std::vector<double> block_ranks(const std::vector<double>& confidences);

}  // namespace branchlens::pipeline
