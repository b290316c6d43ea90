#include "branchlens/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "branchlens/csv.hpp"
#include "branchlens/parallel.hpp"
#include "branchlens/rng.hpp"
#include "branchlens/spectral.hpp"
#include "json.hpp"

namespace branchlens::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ==================== config ====================

static void check_config(const PipelineConfig& c) {
    if (c.k < 1) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
    if (c.jobs < 1) throw Error(ErrorCode::InvalidConfig, "jobs must be >= 1");
    if (c.penalties.empty())
        throw Error(ErrorCode::InvalidConfig, "need at least one penalty; the first is primary");
    attribution::z_for_alpha(c.alpha);
    if (!(c.archetype.eer_low > 0.0) || !(c.archetype.eer_high > c.archetype.eer_low) ||
        !(c.archetype.share > 0.0) || !(c.archetype.share < 100.0))
        throw Error(ErrorCode::InvalidConfig, "archetype thresholds must satisfy 0 < low < high and 0 < share < 100");
}

static void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                                const char* where) {
    for (const auto& item : j.items())
        if (!known.count(item.key()))
            throw Error(ErrorCode::InvalidConfig,
                        std::string("unknown ") + where + " key '" + item.key() + "'");
}

PipelineConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("bad pipeline config JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "pipeline config must be a JSON object");
    reject_unknown_keys(j, {"dataset", "k", "train", "penalties", "archetype", "alpha", "out",
                            "seed", "jobs", "scores", "use_model_scores"},
                        "config");

    PipelineConfig c;
    try {
        if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
        if (j.contains("k")) c.k = j.at("k").get<int>();
        if (j.contains("train")) {
            const json& t = j.at("train");
            reject_unknown_keys(t, {"iterations", "learning_rate", "depth", "l2_leaf_reg", "bins",
                                    "seed", "worker_parallelism", "early_stopping_rounds"},
                                "train");
            if (t.contains("iterations")) c.train.iterations = t.at("iterations").get<int>();
            if (t.contains("learning_rate")) c.train.learning_rate = t.at("learning_rate").get<double>();
            if (t.contains("depth")) c.train.depth = t.at("depth").get<int>();
            if (t.contains("l2_leaf_reg")) c.train.l2_leaf_reg = t.at("l2_leaf_reg").get<double>();
            if (t.contains("bins")) c.train.bins = t.at("bins").get<int>();
            if (t.contains("seed")) c.train.seed = t.at("seed").get<std::uint64_t>();
            if (t.contains("worker_parallelism"))
                c.train.worker_parallelism = t.at("worker_parallelism").get<int>();
            if (t.contains("early_stopping_rounds"))
                c.train.early_stopping_rounds = t.at("early_stopping_rounds").get<int>();
        }
        if (j.contains("penalties")) {
            c.penalties.clear();
            for (const auto& p : j.at("penalties"))
                c.penalties.push_back(attribution::parse_penalty(p.get<std::string>()));
        }
        if (j.contains("archetype")) {
            const json& a = j.at("archetype");
            reject_unknown_keys(a, {"eer_low", "eer_high", "share"}, "archetype");
            if (a.contains("eer_low")) c.archetype.eer_low = a.at("eer_low").get<double>();
            if (a.contains("eer_high")) c.archetype.eer_high = a.at("eer_high").get<double>();
            if (a.contains("share")) c.archetype.share = a.at("share").get<double>();
        }
        if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
        if (j.contains("out")) c.out = j.at("out").get<std::string>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("jobs")) c.jobs = j.at("jobs").get<int>();
        if (j.contains("scores")) c.scores = j.at("scores").get<std::string>();
        if (j.contains("use_model_scores")) c.use_model_scores = j.at("use_model_scores").get<bool>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("bad pipeline config field: ") + e.what());
    }
    check_config(c);
    return c;
}

std::string config_to_json(const PipelineConfig& config) {
    ordered_json j;
    j["dataset"] = config.dataset;
    j["k"] = config.k;
    j["train"] = {{"iterations", config.train.iterations},
                  {"learning_rate", config.train.learning_rate},
                  {"depth", config.train.depth},
                  {"l2_leaf_reg", config.train.l2_leaf_reg},
                  {"bins", config.train.bins},
                  {"seed", config.train.seed},
                  {"worker_parallelism", config.train.worker_parallelism},
                  {"early_stopping_rounds", config.train.early_stopping_rounds}};
    ordered_json pens = ordered_json::array();
    for (auto p : config.penalties) pens.push_back(attribution::penalty_name(p));
    j["penalties"] = pens;
    j["archetype"] = {{"eer_low", config.archetype.eer_low},
                      {"eer_high", config.archetype.eer_high},
                      {"share", config.archetype.share}};
    j["alpha"] = config.alpha;
    j["out"] = config.out;
    j["seed"] = config.seed;
    j["jobs"] = config.jobs;
    j["scores"] = config.scores;
    j["use_model_scores"] = config.use_model_scores;
    return j.dump(2) + "\n";
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open config '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return config_from_json(buf.str());
}

// ==================== feature extraction ====================

FeatureTable extract_meta_features(const ActivationSource& source, int k, int jobs) {
    if (k < 1) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
    if (jobs < 1) throw Error(ErrorCode::InvalidConfig, "jobs must be >= 1");
    const Layout& layout = source.layout();
    const auto& samples = source.samples();
    if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "activation source has no samples");

    const std::size_t n = samples.size();
    const std::size_t n_comp = layout.components.size();
    const std::size_t kk = static_cast<std::size_t>(k);

    FeatureTable table;
    table.sample_ids.reserve(n);
    table.labels.reserve(n);
    for (const auto& s : samples) {
        table.sample_ids.push_back(s.sample_id);
        table.labels.push_back(s.class_label);
    }
    table.rows.assign(n, std::vector<double>(n_comp * kk, 0.0));

    std::vector<std::size_t> temporal, cross;
    for (std::size_t ci = 0; ci < n_comp; ++ci)
        (layout.axes[ci] == CovarianceAxis::TEMPORAL ? temporal : cross).push_back(ci);

    // Per-utterance components: one signature per (sample, component).
    parallel_for(n, jobs, [&](std::size_t i) {
        for (std::size_t ci : temporal) {
            ActivationMatrix m = source.fetch(samples[i].sample_id, layout.components[ci]);
            spectral::SpectralSignature sig = spectral::signature(m, k);
            std::copy(sig.values.begin(), sig.values.end(), table.rows[i].begin() + ci * kk);
        }
    });

    // Cross-sample components: per-utterance columns are too few to be
    // meaningful, so all same-class samples pool their observations and the
    // group signature is assigned to every member.
    if (!cross.empty()) {
        std::map<std::string, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < n; ++i) by_class[samples[i].class_label].push_back(i);
        std::vector<std::pair<const std::vector<std::size_t>*, std::size_t>> tasks;
        for (const auto& group : by_class)
            for (std::size_t ci : cross) tasks.emplace_back(&group.second, ci);

        parallel_for(tasks.size(), jobs, [&](std::size_t t) {
            const std::vector<std::size_t>& members = *tasks[t].first;
            const std::size_t ci = tasks[t].second;
            const ComponentId& comp = layout.components[ci];

            std::vector<ActivationMatrix> mats;
            mats.reserve(members.size());
            std::size_t rows = 0, total_cols = 0;
            for (std::size_t i : members) {
                mats.push_back(source.fetch(samples[i].sample_id, comp));
                if (rows == 0) rows = mats.back().rows;
                else if (mats.back().rows != rows)
                    throw Error(ErrorCode::DimensionMismatch,
                                "component " + comp.str() + " has mixed row counts within class '" +
                                    samples[members.front()].class_label + "'");
                total_cols += mats.back().cols;
            }

            ActivationMatrix pooled;
            pooled.component = comp;
            pooled.rows = rows;
            pooled.cols = total_cols;
            pooled.values.resize(rows * total_cols);
            std::size_t col0 = 0;
            for (const auto& m : mats) {
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy(m.values.begin() + static_cast<std::ptrdiff_t>(r * m.cols),
                              m.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * m.cols),
                              pooled.values.begin() + static_cast<std::ptrdiff_t>(r * total_cols + col0));
                col0 += m.cols;
            }

            spectral::SpectralSignature sig = spectral::signature(pooled, k);
            for (std::size_t i : members)
                std::copy(sig.values.begin(), sig.values.end(), table.rows[i].begin() + ci * kk);
        });
    }
    return table;
}

// ==================== shared per-run state ====================

namespace {
struct Core {
    FeatureTable features;
    gbdt::TreeEnsemble model;
    std::vector<shap::ShapAttribution> attributions;  // own-class, dataset order
    std::vector<std::string> classes;
    std::vector<std::string> attacks;  // classes minus "bonafide"
    std::map<std::string, std::vector<std::size_t>> by_class;
};
}  // namespace

static Core build_core(const PipelineConfig& config, const ActivationSource& source) {
    check_config(config);
    Core core;
    core.features = extract_meta_features(source, config.k, config.jobs);
    core.model = gbdt::fit(core.features.rows, core.features.labels, config.train);

    const std::size_t n = core.features.rows.size();
    core.attributions.resize(n);
    parallel_for(n, config.jobs, [&](std::size_t i) {
        int cls = core.model.class_index(core.features.labels[i]);
        core.attributions[i] = shap::shap_values(core.model, core.features.rows[i], cls);
        core.attributions[i].sample_id = core.features.sample_ids[i];
    });

    core.classes = core.model.classes;
    for (const auto& c : core.classes)
        if (c != "bonafide") core.attacks.push_back(c);
    for (std::size_t i = 0; i < n; ++i) core.by_class[core.features.labels[i]].push_back(i);
    return core;
}

// ==================== scores & EER ====================

static std::vector<double> resolve_scores(const PipelineConfig& config,
                                          const ActivationSource& source,
                                          const FeatureTable& features,
                                          const gbdt::TreeEnsemble& model) {
    const auto& samples = source.samples();
    std::vector<double> scores(samples.size(), 0.0);

    if (config.use_model_scores) {
        int bona = model.class_index("bonafide");
        if (bona < 0)
            throw Error(ErrorCode::InvalidConfig, "use_model_scores requires a 'bonafide' class");
        for (std::size_t i = 0; i < samples.size(); ++i)
            scores[i] = 1.0 - gbdt::predict_proba(model, features.rows[i])[static_cast<std::size_t>(bona)];
        return scores;
    }

    if (!config.scores.empty()) {
        csv::Table t = csv::read_table(config.scores);
        int idc = t.column("sample_id");
        int sc = t.column("score");
        std::map<std::string, double> by_id;
        for (const auto& row : t.rows) {
            double v = csv::parse_double(row[static_cast<std::size_t>(sc)]);
            if (!std::isfinite(v))
                throw Error(ErrorCode::NonFiniteValue, "non-finite score for sample '" +
                                                           row[static_cast<std::size_t>(idc)] + "'");
            if (!by_id.emplace(row[static_cast<std::size_t>(idc)], v).second)
                throw Error(ErrorCode::DuplicateSampleId,
                            "duplicate score row for sample '" + row[static_cast<std::size_t>(idc)] + "'");
        }
        for (std::size_t i = 0; i < samples.size(); ++i) {
            auto it = by_id.find(samples[i].sample_id);
            if (it == by_id.end())
                throw Error(ErrorCode::NotFound,
                            "score file has no row for sample '" + samples[i].sample_id + "'");
            scores[i] = it->second;
        }
        return scores;
    }

    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!samples[i].detector_score)
            throw Error(ErrorCode::EmptyScores, "sample '" + samples[i].sample_id +
                                                    "' has no detector score; pass a score file or "
                                                    "enable use_model_scores");
        scores[i] = *samples[i].detector_score;
    }
    return scores;
}

static std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Half-width of a normal-approximation bootstrap interval: z times the
// standard deviation of B = 200 resampled EER replicates.
static double bootstrap_eer_ci(const std::vector<double>& bona, const std::vector<double>& spoof,
                               double z, std::uint64_t seed) {
    constexpr int kReplicates = 200;
    Rng rng(seed);
    eval::ScoreSet draw;
    draw.bona.resize(bona.size());
    draw.spoof.resize(spoof.size());
    std::vector<double> reps(kReplicates);
    for (int r = 0; r < kReplicates; ++r) {
        for (double& v : draw.bona) v = bona[rng.below(bona.size())];
        for (double& v : draw.spoof) v = spoof[rng.below(spoof.size())];
        reps[static_cast<std::size_t>(r)] = eval::eer(draw).eer;
    }
    double mean = std::accumulate(reps.begin(), reps.end(), 0.0) / kReplicates;
    double acc = 0.0;
    for (double v : reps) acc += (v - mean) * (v - mean);
    return z * std::sqrt(acc / (kReplicates - 1));
}

// ==================== per-attack aggregation ====================

static double apply_penalty(double phi_abs, double sigma, attribution::Penalty p) {
    switch (p) {
        case attribution::Penalty::LINEAR: return phi_abs / (1.0 + sigma);
        case attribution::Penalty::QUADRATIC: return phi_abs / (1.0 + sigma * sigma);
        case attribution::Penalty::EXPONENTIAL: return phi_abs / std::exp(sigma);
        case attribution::Penalty::NONE: return phi_abs;
    }
    return phi_abs;
}

static std::vector<attribution::ConfidenceScore> block_confidences(
    const std::vector<attribution::ComponentAttribution>& comps, const Layout& layout,
    attribution::Penalty p) {
    std::vector<attribution::ConfidenceScore> out;
    out.reserve(layout.blocks.size());
    for (const auto& block : layout.blocks) {
        std::vector<attribution::ComponentAttribution> members;
        for (const auto& c : comps)
            if (c.component.block == block) members.push_back(c);
        out.push_back(attribution::confidence(members, p));
    }
    return out;
}

std::vector<double> block_ranks(const std::vector<double>& confidences) {
    const std::size_t n = confidences.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return confidences[a] < confidences[b]; });
    std::vector<double> ranks(n, 0.0);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && confidences[order[j + 1]] == confidences[order[i]]) ++j;
        double avg = static_cast<double>(i + j + 2) / 2.0;  // mean of 1-based positions i+1..j+1
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

// Sum of each component's k attributions for one sample.
static std::vector<double> component_sums(const shap::ShapAttribution& a, std::size_t n_comp,
                                          std::size_t k) {
    std::vector<double> cs(n_comp, 0.0);
    for (std::size_t ci = 0; ci < n_comp; ++ci)
        for (std::size_t i = 0; i < k; ++i) cs[ci] += a.phi[ci * k + i];
    return cs;
}

static void write_reports(const PipelineResult& result, const PipelineConfig& config);

PipelineResult run_pipeline(const PipelineConfig& config, const ActivationSource& source) {
    Core core = build_core(config, source);
    const Layout& layout = source.layout();
    const double z = attribution::z_for_alpha(config.alpha);
    const attribution::Penalty primary = config.penalties.front();
    const std::size_t n_comp = layout.components.size();
    const std::size_t n_blocks = layout.blocks.size();
    const std::size_t kk = static_cast<std::size_t>(config.k);

    PipelineResult result;
    result.classes = core.classes;
    result.blocks = layout.blocks;

    std::vector<double> scores = resolve_scores(config, source, core.features, core.model);
    auto bona_it = core.by_class.find("bonafide");
    if (bona_it == core.by_class.end())
        throw Error(ErrorCode::EmptyScores, "EER needs a 'bonafide' class in the dataset");
    std::vector<double> bona_scores;
    bona_scores.reserve(bona_it->second.size());
    for (std::size_t i : bona_it->second) bona_scores.push_back(scores[i]);

    std::vector<std::vector<int>> block_comps;
    block_comps.reserve(n_blocks);
    for (const auto& block : layout.blocks) block_comps.push_back(layout.components_of_block(block));

    for (const auto& attack : core.attacks) {
        const auto& members = core.by_class.at(attack);
        std::vector<shap::ShapAttribution> attrs;
        attrs.reserve(members.size());
        for (std::size_t i : members) attrs.push_back(core.attributions[i]);
        auto comps = attribution::component_phi(attrs, layout, attack, config.k, config.alpha);

        // Per-sample block sums and shares feed the interval columns; the
        // reported point values come from the aggregated component means.
        std::vector<std::vector<double>> block_phi_samples(n_blocks,
                                                           std::vector<double>(attrs.size()));
        std::vector<std::vector<double>> share_samples(n_blocks, std::vector<double>(attrs.size()));
        for (std::size_t s = 0; s < attrs.size(); ++s) {
            std::vector<double> cs = component_sums(attrs[s], n_comp, kk);
            std::vector<double> conf(n_blocks, 0.0);
            for (std::size_t b = 0; b < n_blocks; ++b) {
                double sum = 0.0;
                for (int ci : block_comps[b]) sum += cs[static_cast<std::size_t>(ci)];
                block_phi_samples[b][s] = sum;
                double mean = sum / static_cast<double>(block_comps[b].size());
                double var = 0.0;
                for (int ci : block_comps[b]) {
                    double d = cs[static_cast<std::size_t>(ci)] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(block_comps[b].size());
                conf[b] = apply_penalty(std::abs(sum), std::sqrt(var), primary);
            }
            std::vector<double> sh = gbdt::softmax(conf);
            for (std::size_t b = 0; b < n_blocks; ++b) share_samples[b][s] = 100.0 * sh[b];
        }

        std::map<attribution::Penalty, std::vector<attribution::ConfidenceScore>> conf_by_penalty;
        for (auto p : config.penalties) conf_by_penalty.emplace(p, block_confidences(comps, layout, p));
        const auto& conf_primary = conf_by_penalty.at(primary);
        attribution::ShareVector share_vec = attribution::shares(conf_primary, layout.blocks);

        StrategyRecord rec;
        rec.attack = attack;
        rec.n_samples = members.size();
        for (std::size_t b = 0; b < n_blocks; ++b) {
            BlockReport br;
            br.block = layout.blocks[b];
            br.phi = attribution::branch_sum(comps, br.block).phi_sum;
            br.phi_ci = attrs.size() >= 2
                            ? attribution::mean_ci(block_phi_samples[b], config.alpha).ci_half_width
                            : 0.0;
            br.sigma = conf_primary[b].sigma;
            for (const auto& entry : conf_by_penalty) br.confidence[entry.first] = entry.second[b].value;
            br.share_pct = 100.0 * share_vec.shares[b];
            br.share_ci_pct = attrs.size() >= 2
                                  ? attribution::mean_ci(share_samples[b], config.alpha).ci_half_width
                                  : 0.0;
            rec.blocks.push_back(std::move(br));
        }

        std::size_t dom = 0;
        for (std::size_t b = 1; b < n_blocks; ++b)
            if (share_vec.shares[b] > share_vec.shares[dom]) dom = b;
        rec.dominant_block = layout.blocks[dom];
        rec.dominant_share_pct = 100.0 * share_vec.shares[dom];

        eval::ScoreSet set;
        set.bona = bona_scores;
        for (std::size_t i : members) set.spoof.push_back(scores[i]);
        rec.eer = eval::eer(set).eer;
        rec.eer_ci = bootstrap_eer_ci(set.bona, set.spoof, z, mix_seed(config.seed, fnv1a(attack)));

        rec.archetype = eval::classify_archetype(100.0 * rec.eer, rec.dominant_share_pct, config.archetype);
        result.records.push_back(std::move(rec));
    }

    if (result.records.size() >= 2) {
        std::vector<double> xs, ys;
        for (const auto& rec : result.records) {
            xs.push_back(rec.dominant_share_pct);
            ys.push_back(100.0 * rec.eer);
        }
        try {
            result.pearson_share_eer = eval::pearson(xs, ys);
        } catch (const Error&) {
        }
        try {
            result.spearman_share_eer = eval::spearman(xs, ys);
        } catch (const Error&) {
        }
    }

    std::vector<std::pair<eval::Archetype, double>> grouped;
    for (const auto& rec : result.records) grouped.emplace_back(rec.archetype, rec.dominant_share_pct);
    result.share_by_archetype = eval::group_stats(grouped);

    result.model = std::move(core.model);
    result.features = std::move(core.features);
    result.attributions = std::move(core.attributions);

    if (!config.out.empty()) write_reports(result, config);
    return result;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
    if (config.dataset.empty())
        throw Error(ErrorCode::InvalidConfig, "config.dataset must point at a manifest");
    ManifestSource source(load_manifest(config.dataset));
    return run_pipeline(config, source);
}

// ==================== reports ====================

static void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw Error(ErrorCode::IoFailure, "short write to '" + path + "'");
}

void write_table1_csv(const PipelineResult& result, attribution::Penalty primary,
                      const std::string& path) {
    auto fd = [](double v) { return csv::format_double(v); };
    csv::Table t1;
    t1.header = {"attack",         "n_samples", "eer_pct",      "eer_ci_pct",
                 "dominant_block", "share_pct", "share_ci_pct", "sigma",
                 "confidence",     "archetype"};
    for (const auto& rec : result.records) {
        const BlockReport* dom = nullptr;
        for (const auto& br : rec.blocks)
            if (br.block == rec.dominant_block) dom = &br;
        if (!dom) throw Error(ErrorCode::LayoutMismatch, "dominant block missing from record");
        t1.rows.push_back({rec.attack, std::to_string(rec.n_samples), fd(100.0 * rec.eer),
                           fd(100.0 * rec.eer_ci), rec.dominant_block, fd(dom->share_pct),
                           fd(dom->share_ci_pct), fd(dom->sigma), fd(dom->confidence.at(primary)),
                           eval::archetype_name(rec.archetype)});
    }
    csv::write_table(t1, path);
}

void write_phi_csv(const PipelineResult& result, const std::string& path) {
    auto fd = [](double v) { return csv::format_double(v); };
    csv::Table t3;
    t3.header = {"attack", "block", "phi", "ci_half_width"};
    for (const auto& rec : result.records)
        for (const auto& br : rec.blocks)
            t3.rows.push_back({rec.attack, br.block, fd(br.phi), fd(br.phi_ci)});
    csv::write_table(t3, path);
}

void write_shares_csv(const PipelineResult& result, attribution::Penalty primary,
                      const std::string& path) {
    auto fd = [](double v) { return csv::format_double(v); };
    csv::Table t4;
    t4.header = {"attack", "block", "share_pct", "share_ci_pct", "confidence", "sigma"};
    for (const auto& rec : result.records)
        for (const auto& br : rec.blocks)
            t4.rows.push_back({rec.attack, br.block, fd(br.share_pct), fd(br.share_ci_pct),
                               fd(br.confidence.at(primary)), fd(br.sigma)});
    csv::write_table(t4, path);
}

void write_features_csv(const FeatureTable& features, const std::string& path) {
    auto fd = [](double v) { return csv::format_double(v); };
    csv::Table feats;
    feats.header = {"sample_id", "label"};
    const std::size_t width = features.rows.empty() ? 0 : features.rows.front().size();
    for (std::size_t f = 0; f < width; ++f) feats.header.push_back("f" + std::to_string(f));
    for (std::size_t i = 0; i < features.rows.size(); ++i) {
        csv::Row row = {features.sample_ids[i], features.labels[i]};
        for (double v : features.rows[i]) row.push_back(fd(v));
        feats.rows.push_back(std::move(row));
    }
    csv::write_table(feats, path);
}

void write_shap_csv(const std::vector<shap::ShapAttribution>& attributions,
                    const std::vector<std::string>& classes, const std::string& path) {
    auto fd = [](double v) { return csv::format_double(v); };
    csv::Table sh;
    sh.header = {"sample_id", "class", "feature", "value"};
    for (const auto& a : attributions) {
        const std::string& cls = classes[static_cast<std::size_t>(a.class_index)];
        sh.rows.push_back({a.sample_id, cls, "base", fd(a.base_value)});
        for (std::size_t f = 0; f < a.phi.size(); ++f)
            sh.rows.push_back({a.sample_id, cls, std::to_string(f), fd(a.phi[f])});
    }
    csv::write_table(sh, path);
}

void write_summary_json(const PipelineResult& result, const PipelineConfig& config,
                        const std::string& path) {
    const attribution::Penalty primary = config.penalties.front();
    ordered_json summary;
    summary["classes"] = result.classes;
    summary["k"] = config.k;
    summary["alpha"] = config.alpha;
    ordered_json pens = ordered_json::array();
    for (auto p : config.penalties) pens.push_back(attribution::penalty_name(p));
    summary["penalties"] = pens;
    summary["primary_penalty"] = attribution::penalty_name(primary);
    summary["seed"] = config.seed;
    summary["blocks"] = result.blocks;
    ordered_json recs = ordered_json::array();
    for (const auto& rec : result.records) {
        ordered_json r;
        r["attack"] = rec.attack;
        r["n_samples"] = rec.n_samples;
        r["eer"] = rec.eer;
        r["eer_ci"] = rec.eer_ci;
        r["dominant_block"] = rec.dominant_block;
        r["dominant_share_pct"] = rec.dominant_share_pct;
        r["archetype"] = eval::archetype_name(rec.archetype);
        ordered_json blocks = ordered_json::array();
        for (const auto& br : rec.blocks) {
            ordered_json b;
            b["block"] = br.block;
            b["phi"] = br.phi;
            b["phi_ci"] = br.phi_ci;
            b["sigma"] = br.sigma;
            ordered_json conf;
            for (const auto& entry : br.confidence)
                conf[attribution::penalty_name(entry.first)] = entry.second;
            b["confidence"] = conf;
            b["share_pct"] = br.share_pct;
            b["share_ci_pct"] = br.share_ci_pct;
            blocks.push_back(std::move(b));
        }
        r["blocks"] = std::move(blocks);
        recs.push_back(std::move(r));
    }
    summary["records"] = std::move(recs);
    summary["pearson_share_eer"] =
        result.pearson_share_eer ? ordered_json(*result.pearson_share_eer) : ordered_json(nullptr);
    summary["spearman_share_eer"] =
        result.spearman_share_eer ? ordered_json(*result.spearman_share_eer) : ordered_json(nullptr);
    ordered_json groups = ordered_json::array();
    for (const auto& g : result.share_by_archetype) {
        ordered_json gj;
        gj["archetype"] = eval::archetype_name(g.label);
        gj["mean"] = g.mean;
        gj["stddev"] = g.stddev;
        gj["variance"] = g.variance;
        gj["count"] = g.count;
        groups.push_back(std::move(gj));
    }
    summary["dominant_share_by_archetype"] = std::move(groups);
    write_text(path, summary.dump(2) + "\n");
}

static void write_reports(const PipelineResult& result, const PipelineConfig& config) {
    fs::create_directories(config.out);
    const fs::path dir(config.out);
    const attribution::Penalty primary = config.penalties.front();
    write_table1_csv(result, primary, (dir / "table1.csv").string());
    write_phi_csv(result, (dir / "table3_phi.csv").string());
    write_shares_csv(result, primary, (dir / "table4_shares.csv").string());
    emit_strategy_matrix(result.records, config.archetype, (dir / "strategy_matrix.svg").string(),
                         (dir / "strategy_matrix.csv").string());
    write_features_csv(result.features, (dir / "features.csv").string());
    write_shap_csv(result.attributions, result.classes, (dir / "shap_values.csv").string());
    gbdt::save_model(result.model, (dir / "model.json").string());
    write_summary_json(result, config, (dir / "summary.json").string());
}

// ==================== ablations ====================

std::vector<EigAblationPoint> ablate_eigencount(const PipelineConfig& config,
                                                const ActivationSource& source,
                                                const std::vector<int>& ks) {
    check_config(config);
    if (ks.empty()) throw Error(ErrorCode::InvalidConfig, "eigencount sweep needs at least one k");
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] < 1) throw Error(ErrorCode::InvalidConfig, "every swept k must be >= 1");
        if (i > 0 && ks[i] <= ks[i - 1])
            throw Error(ErrorCode::InvalidConfig, "swept ks must be strictly ascending");
    }

    const int kmax = ks.back();
    const std::size_t kmax_sz = static_cast<std::size_t>(kmax);
    FeatureTable features = extract_meta_features(source, kmax, config.jobs);
    const Layout& layout = source.layout();
    const std::size_t n = features.rows.size();
    const std::size_t n_comp = layout.components.size();

    // Deterministic stratified 80/20 split (at least one held-out per class).
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[features.labels[i]].push_back(i);
    Rng rng(mix_seed(config.seed, 0x5EED5EEDull));
    std::vector<std::size_t> train_idx, test_idx;
    for (const auto& group : by_class) {
        const auto& members = group.second;
        if (members.size() < 2)
            throw Error(ErrorCode::InsufficientSamples,
                        "class '" + group.first + "' needs >= 2 samples for a held-out split");
        std::vector<std::size_t> shuffled = members;
        for (std::size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
        std::size_t n_test = std::max<std::size_t>(1, members.size() / 5);
        test_idx.insert(test_idx.end(), shuffled.begin(),
                        shuffled.begin() + static_cast<std::ptrdiff_t>(n_test));
        train_idx.insert(train_idx.end(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_test),
                         shuffled.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    std::vector<EigAblationPoint> points;
    for (int k : ks) {
        const std::size_t kk = static_cast<std::size_t>(k);
        // Signatures are descending eigenvalues, so the k-feature view is a
        // prefix of each component's kmax-feature slice.
        auto slice = [&](std::size_t i) {
            std::vector<double> row(n_comp * kk);
            for (std::size_t ci = 0; ci < n_comp; ++ci)
                std::copy(features.rows[i].begin() + static_cast<std::ptrdiff_t>(ci * kmax_sz),
                          features.rows[i].begin() + static_cast<std::ptrdiff_t>(ci * kmax_sz + kk),
                          row.begin() + static_cast<std::ptrdiff_t>(ci * kk));
            return row;
        };

        std::vector<std::vector<double>> xtr;
        std::vector<std::string> ytr;
        xtr.reserve(train_idx.size());
        ytr.reserve(train_idx.size());
        for (std::size_t i : train_idx) {
            xtr.push_back(slice(i));
            ytr.push_back(features.labels[i]);
        }
        gbdt::TreeEnsemble model = gbdt::fit(xtr, ytr, config.train);

        std::vector<std::string> pred, actual;
        pred.reserve(test_idx.size());
        actual.reserve(test_idx.size());
        for (std::size_t i : test_idx) {
            std::vector<double> p = gbdt::predict_proba(model, slice(i));
            std::size_t best = 0;
            for (std::size_t c = 1; c < p.size(); ++c)
                if (p[c] > p[best]) best = c;
            pred.push_back(model.classes[best]);
            actual.push_back(features.labels[i]);
        }

        EigAblationPoint pt;
        pt.k = k;
        pt.f1 = eval::f1_macro(pred, actual);
        pt.memory_bytes = static_cast<std::uint64_t>(n) * n_comp * kk * 8u;
        points.push_back(pt);
    }

    double best_f1 = 0.0;
    for (const auto& pt : points) best_f1 = std::max(best_f1, pt.f1);
    for (auto& pt : points) {
        pt.retention_pct = best_f1 > 0.0 ? 100.0 * pt.f1 / best_f1 : 0.0;
        pt.savings_pct = 100.0 * (1.0 - static_cast<double>(pt.k) / static_cast<double>(kmax));
    }
    return points;
}

PenaltyAblation ablate_penalty(const PipelineConfig& config, const ActivationSource& source) {
    Core core = build_core(config, source);
    const Layout& layout = source.layout();
    if (core.attacks.empty())
        throw Error(ErrorCode::NoSamplesForAttack, "dataset has no attack classes");

    PenaltyAblation ab;
    ab.attacks = core.attacks;
    ab.penalties = {attribution::Penalty::LINEAR, attribution::Penalty::QUADRATIC,
                    attribution::Penalty::EXPONENTIAL, attribution::Penalty::NONE};
    ab.dominant.assign(ab.attacks.size(), std::vector<std::string>(ab.penalties.size()));

    std::vector<std::vector<double>> concat(ab.penalties.size());
    for (std::size_t ai = 0; ai < ab.attacks.size(); ++ai) {
        const auto& members = core.by_class.at(ab.attacks[ai]);
        std::vector<shap::ShapAttribution> attrs;
        attrs.reserve(members.size());
        for (std::size_t i : members) attrs.push_back(core.attributions[i]);
        auto comps =
            attribution::component_phi(attrs, layout, ab.attacks[ai], config.k, config.alpha);

        for (std::size_t pi = 0; pi < ab.penalties.size(); ++pi) {
            auto conf = block_confidences(comps, layout, ab.penalties[pi]);
            std::vector<double> values(conf.size());
            for (std::size_t b = 0; b < conf.size(); ++b) values[b] = conf[b].value;
            std::size_t best = 0;
            for (std::size_t b = 1; b < values.size(); ++b)
                if (values[b] > values[best]) best = b;
            ab.dominant[ai][pi] = layout.blocks[best];
            std::vector<double> ranks = block_ranks(values);
            concat[pi].insert(concat[pi].end(), ranks.begin(), ranks.end());
        }
    }

    ab.tau_vs_linear.resize(ab.penalties.size(), 1.0);
    for (std::size_t pi = 0; pi < ab.penalties.size(); ++pi) {
        if (concat[pi] == concat[0]) {
            ab.tau_vs_linear[pi] = 1.0;  // identical rankings, ties included
            continue;
        }
        ab.tau_vs_linear[pi] = attribution::kendall_tau(concat[pi], concat[0]);
    }
    return ab;
}

void write_eig_ablation_csv(const std::vector<EigAblationPoint>& points, const std::string& path) {
    csv::Table t;
    t.header = {"k", "macro_f1", "memory_bytes", "retention_pct", "savings_pct"};
    for (const auto& pt : points)
        t.rows.push_back({std::to_string(pt.k), csv::format_double(pt.f1),
                          std::to_string(pt.memory_bytes), csv::format_double(pt.retention_pct),
                          csv::format_double(pt.savings_pct)});
    csv::write_table(t, path);
}

void write_penalty_ablation_csv(const PenaltyAblation& ablation, const std::string& path) {
    csv::Table t;
    t.header = {"attack", "penalty", "dominant_block", "tau_vs_linear"};
    for (std::size_t ai = 0; ai < ablation.attacks.size(); ++ai)
        for (std::size_t pi = 0; pi < ablation.penalties.size(); ++pi)
            t.rows.push_back({ablation.attacks[ai], attribution::penalty_name(ablation.penalties[pi]),
                              ablation.dominant[ai][pi],
                              csv::format_double(ablation.tau_vs_linear[pi])});
    csv::write_table(t, path);
}

// ==================== strategy matrix figure ====================

static std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

static const char* archetype_color(eval::Archetype a) {
    switch (a) {
        case eval::Archetype::EFFECTIVE_SPECIALIZATION: return "#2e7d32";
        case eval::Archetype::EFFECTIVE_CONSENSUS: return "#1565c0";
        case eval::Archetype::INEFFECTIVE_SPECIALIZATION: return "#ef6c00";
        case eval::Archetype::INEFFECTIVE_CONSENSUS: return "#6d4c41";
        case eval::Archetype::FLAWED_SPECIALIZATION: return "#c62828";
    }
    return "#000000";
}

void emit_strategy_matrix(const std::vector<StrategyRecord>& records,
                          const eval::ArchetypeThresholds& thresholds,
                          const std::string& svg_path, const std::string& csv_path) {
    if (!csv_path.empty()) {
        csv::Table t;
        t.header = {"attack", "eer_pct", "dominant_share_pct", "archetype"};
        for (const auto& rec : records)
            t.rows.push_back({rec.attack, csv::format_double(100.0 * rec.eer),
                              csv::format_double(rec.dominant_share_pct),
                              eval::archetype_name(rec.archetype)});
        csv::write_table(t, csv_path);
    }
    if (svg_path.empty()) return;

    const double width = 760.0, height = 520.0;
    const double left = 70.0, right = 180.0, top = 40.0, bottom = 60.0;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;

    double max_share = thresholds.share, max_eer = thresholds.eer_high;
    for (const auto& rec : records) {
        max_share = std::max(max_share, rec.dominant_share_pct);
        max_eer = std::max(max_eer, 100.0 * rec.eer);
    }
    const double x_max = std::max(30.0, 1.15 * max_share);
    const double y_max = std::max(15.0, 1.15 * max_eer);

    auto xpix = [&](double v) { return left + v / x_max * plot_w; };
    auto ypix = [&](double v) { return top + plot_h - v / y_max * plot_h; };
    auto f2 = [](double v) { return csv::format_fixed(v, 2); };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"520\" "
         "viewBox=\"0 0 760 520\" font-family=\"sans-serif\">\n";
    s += "<rect x=\"0\" y=\"0\" width=\"760\" height=\"520\" fill=\"#ffffff\"/>\n";

    // axes
    s += "<line x1=\"" + f2(left) + "\" y1=\"" + f2(top + plot_h) + "\" x2=\"" +
         f2(left + plot_w) + "\" y2=\"" + f2(top + plot_h) +
         "\" stroke=\"#202020\" stroke-width=\"1\"/>\n";
    s += "<line x1=\"" + f2(left) + "\" y1=\"" + f2(top) + "\" x2=\"" + f2(left) + "\" y2=\"" +
         f2(top + plot_h) + "\" stroke=\"#202020\" stroke-width=\"1\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        double xv = x_max * i / 5.0;
        double yv = y_max * i / 5.0;
        s += "<line x1=\"" + f2(xpix(xv)) + "\" y1=\"" + f2(top + plot_h) + "\" x2=\"" +
             f2(xpix(xv)) + "\" y2=\"" + f2(top + plot_h + 5.0) + "\" stroke=\"#202020\"/>\n";
        s += "<text x=\"" + f2(xpix(xv)) + "\" y=\"" + f2(top + plot_h + 20.0) +
             "\" font-size=\"11\" fill=\"#202020\" text-anchor=\"middle\">" + f2(xv) + "</text>\n";
        s += "<line x1=\"" + f2(left - 5.0) + "\" y1=\"" + f2(ypix(yv)) + "\" x2=\"" + f2(left) +
             "\" y2=\"" + f2(ypix(yv)) + "\" stroke=\"#202020\"/>\n";
        s += "<text x=\"" + f2(left - 8.0) + "\" y=\"" + f2(ypix(yv) + 4.0) +
             "\" font-size=\"11\" fill=\"#202020\" text-anchor=\"end\">" + f2(yv) + "</text>\n";
    }
    s += "<text x=\"" + f2(left + plot_w / 2.0) + "\" y=\"" + f2(height - 15.0) +
         "\" font-size=\"13\" fill=\"#202020\" text-anchor=\"middle\">dominant branch share "
         "(%)</text>\n";
    s += "<text x=\"18\" y=\"" + f2(top + plot_h / 2.0) +
         "\" font-size=\"13\" fill=\"#202020\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
         f2(top + plot_h / 2.0) + ")\">EER (%)</text>\n";

    // threshold guides
    s += "<line class=\"guide-share\" x1=\"" + f2(xpix(thresholds.share)) + "\" y1=\"" +
         f2(top) + "\" x2=\"" + f2(xpix(thresholds.share)) + "\" y2=\"" + f2(top + plot_h) +
         "\" stroke=\"#888888\" stroke-dasharray=\"6,4\"/>\n";
    s += "<line class=\"guide-eer-low\" x1=\"" + f2(left) + "\" y1=\"" +
         f2(ypix(thresholds.eer_low)) + "\" x2=\"" + f2(left + plot_w) + "\" y2=\"" +
         f2(ypix(thresholds.eer_low)) + "\" stroke=\"#888888\" stroke-dasharray=\"2,4\"/>\n";
    s += "<line class=\"guide-eer-high\" x1=\"" + f2(left) + "\" y1=\"" +
         f2(ypix(thresholds.eer_high)) + "\" x2=\"" + f2(left + plot_w) + "\" y2=\"" +
         f2(ypix(thresholds.eer_high)) + "\" stroke=\"#888888\" stroke-dasharray=\"2,4\"/>\n";

    // legend
    const eval::Archetype all[] = {
        eval::Archetype::EFFECTIVE_SPECIALIZATION, eval::Archetype::EFFECTIVE_CONSENSUS,
        eval::Archetype::INEFFECTIVE_SPECIALIZATION, eval::Archetype::INEFFECTIVE_CONSENSUS,
        eval::Archetype::FLAWED_SPECIALIZATION};
    for (int i = 0; i < 5; ++i) {
        double ly = top + 12.0 + 18.0 * i;
        s += "<rect x=\"" + f2(width - right + 14.0) + "\" y=\"" + f2(ly - 9.0) +
             "\" width=\"10\" height=\"10\" fill=\"" + archetype_color(all[i]) + "\"/>\n";
        s += "<text x=\"" + f2(width - right + 30.0) + "\" y=\"" + f2(ly) +
             "\" font-size=\"11\" fill=\"#202020\">" + eval::archetype_name(all[i]) + "</text>\n";
    }

    // points
    for (const auto& rec : records) {
        double px = xpix(rec.dominant_share_pct);
        double py = ypix(100.0 * rec.eer);
        s += "<circle cx=\"" + f2(px) + "\" cy=\"" + f2(py) + "\" r=\"5\" fill=\"" +
             archetype_color(rec.archetype) + "\"/>\n";
        s += "<text x=\"" + f2(px + 7.0) + "\" y=\"" + f2(py - 7.0) +
             "\" font-size=\"11\" fill=\"#202020\">" + xml_escape(rec.attack) + "</text>\n";
    }
    s += "</svg>\n";
    write_text(svg_path, s);
}

}  // namespace branchlens::pipeline
