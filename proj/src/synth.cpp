#include "branchlens/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "branchlens/rng.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace branchlens::synth {

const char* strategy_kind_name(StrategyKind k) {
    switch (k) {
        case StrategyKind::EXPERT: return "EXPERT";
        case StrategyKind::CONSENSUS: return "CONSENSUS";
        case StrategyKind::CONFLICT: return "CONFLICT";
    }
    return "?";
}

StrategyKind parse_strategy_kind(const std::string& name) {
    if (name == "EXPERT") return StrategyKind::EXPERT;
    if (name == "CONSENSUS") return StrategyKind::CONSENSUS;
    if (name == "CONFLICT") return StrategyKind::CONFLICT;
    throw Error(ErrorCode::InvalidConfig, "unknown strategy kind '" + name + "'");
}

static void validate(const SynthConfig& cfg, const Layout& layout) {
    if (cfg.classes.empty()) throw Error(ErrorCode::InvalidConfig, "classes must be non-empty");
    std::set<std::string> seen;
    for (const auto& c : cfg.classes)
        if (c.empty() || !seen.insert(c).second)
            throw Error(ErrorCode::InvalidConfig, "class labels must be unique and non-empty");
    if (cfg.samples_per_class < 2)
        throw Error(ErrorCode::InvalidConfig, "samples_per_class must be >= 2");
    if (cfg.rows_d < 1 || cfg.cols_n < 2)
        throw Error(ErrorCode::InvalidConfig, "need rows_d >= 1 and cols_n >= 2");
    if (cfg.signal_strength < 0.0 || !std::isfinite(cfg.signal_strength))
        throw Error(ErrorCode::InvalidConfig, "signal_strength must be >= 0");
    if (!(cfg.noise_scale > 0.0) || !std::isfinite(cfg.noise_scale))
        throw Error(ErrorCode::InvalidConfig, "noise_scale must be > 0");
    if (cfg.k < 1) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
    if (!(cfg.score_std > 0.0))
        throw Error(ErrorCode::InvalidConfig, "score_std must be > 0");

    for (const auto& [cls, strat] : cfg.strategy_map) {
        if (!seen.count(cls))
            throw Error(ErrorCode::InvalidConfig, "strategy for unknown class '" + cls + "'");
        if (strat.kind != StrategyKind::CONSENSUS && !layout.has_block(strat.block))
            throw Error(ErrorCode::InvalidConfig,
                        "strategy for '" + cls + "' names unknown block '" + strat.block + "'");
    }
    for (const auto& c : cfg.classes)
        if (c != "bonafide" && !cfg.strategy_map.count(c))
            throw Error(ErrorCode::InvalidConfig,
                        "non-bonafide class '" + c + "' needs a strategy");
}

// Gram-Schmidt over Gaussian draws; columns of the result are orthonormal.
static std::vector<double> random_orthonormal(std::size_t d, std::size_t m, Rng& rng) {
    std::vector<double> q(d * m, 0.0);  // column-major: q[i + d*j]
    for (std::size_t j = 0; j < m; ++j) {
        for (int attempt = 0; attempt < 64; ++attempt) {
            for (std::size_t i = 0; i < d; ++i) q[i + d * j] = rng.normal();
            for (std::size_t p = 0; p < j; ++p) {
                double dot = 0.0;
                for (std::size_t i = 0; i < d; ++i) dot += q[i + d * j] * q[i + d * p];
                for (std::size_t i = 0; i < d; ++i) q[i + d * j] -= dot * q[i + d * p];
            }
            double norm = 0.0;
            for (std::size_t i = 0; i < d; ++i) norm += q[i + d * j] * q[i + d * j];
            norm = std::sqrt(norm);
            if (norm > 1e-8) {
                for (std::size_t i = 0; i < d; ++i) q[i + d * j] /= norm;
                break;
            }
        }
    }
    return q;
}

// Covariance scale applied to the planted directions for one component.
static double direction_scale(const Strategy* strat, const ComponentId& comp, double s) {
    if (!strat) return 1.0;
    switch (strat->kind) {
        case StrategyKind::CONSENSUS:
            return 1.0 + s / 4.0;
        case StrategyKind::EXPERT:
            return comp.block == strat->block ? 1.0 + s : 1.0;
        case StrategyKind::CONFLICT:
            if (comp.block != strat->block) return 1.0;
            return comp.role == Role::POOL ? 1.0 / (1.0 + s) : 1.0 + s;
    }
    return 1.0;
}

MemorySource generate(const SynthConfig& config) {
    Layout layout = config.layout;
    if (layout.components.empty()) layout = canonical_layout();
    validate(config, layout);

    const std::size_t d = config.rows_d;
    const std::size_t n = config.cols_n;
    const std::size_t m = std::min<std::size_t>((static_cast<std::size_t>(config.k) + 1) / 2, d);

    std::vector<SampleRecord> samples;
    int digits = 1;
    for (std::size_t v = config.samples_per_class; v >= 10; v /= 10) ++digits;
    for (std::size_t ci = 0; ci < config.classes.size(); ++ci) {
        const std::string& cls = config.classes[ci];
        for (std::size_t s = 0; s < config.samples_per_class; ++s) {
            std::string num = std::to_string(s);
            num.insert(0, static_cast<std::size_t>(digits) - std::min<std::size_t>(num.size(), digits), '0');
            SampleRecord rec;
            rec.sample_id = cls + "_" + num;
            rec.class_label = cls;
            double sep = 0.0;
            if (cls != "bonafide") {
                auto it = config.score_separation_override.find(cls);
                sep = it != config.score_separation_override.end() ? it->second
                                                                   : config.score_separation;
            }
            Rng score_rng(mix_seed(mix_seed(config.seed, 0xC0DE + ci), s));
            rec.detector_score = sep + config.score_std * score_rng.normal();
            samples.push_back(std::move(rec));
        }
    }

    MemorySource source(layout, std::move(samples));

    for (std::size_t ci = 0; ci < config.classes.size(); ++ci) {
        const std::string& cls = config.classes[ci];
        const Strategy* strat = nullptr;
        auto it = config.strategy_map.find(cls);
        if (it != config.strategy_map.end()) strat = &it->second;

        Rng dir_rng(mix_seed(config.seed, 0xD1A0 + ci));
        std::vector<double> q = random_orthonormal(d, m, dir_rng);

        for (std::size_t s = 0; s < config.samples_per_class; ++s) {
            const std::string& sample_id = source.samples()[ci * config.samples_per_class + s].sample_id;
            for (std::size_t comp_i = 0; comp_i < layout.components.size(); ++comp_i) {
                const ComponentId& comp = layout.components[comp_i];
                double alpha = direction_scale(strat, comp, config.signal_strength);
                // X = noise * (G + (sqrt(alpha) - 1) Q Q^T G): column covariance
                // noise^2 (I + (alpha - 1) Q Q^T), eigenvalues alpha * noise^2
                // along the planted directions.
                double boost = std::sqrt(alpha) - 1.0;

                Rng rng(mix_seed(mix_seed(mix_seed(config.seed, 1 + ci), s), comp_i));
                ActivationMatrix mat;
                mat.component = comp;
                mat.rows = d;
                mat.cols = n;
                mat.values.resize(d * n);
                for (double& v : mat.values) v = rng.normal();

                if (boost != 0.0) {
                    // proj = Q^T G (m x n), then G += boost * Q proj
                    std::vector<double> proj(m * n, 0.0);
                    for (std::size_t j = 0; j < m; ++j)
                        for (std::size_t i = 0; i < d; ++i) {
                            double qij = q[i + d * j];
                            const double* row = &mat.values[i * n];
                            double* prow = &proj[j * n];
                            for (std::size_t t = 0; t < n; ++t) prow[t] += qij * row[t];
                        }
                    for (std::size_t i = 0; i < d; ++i)
                        for (std::size_t j = 0; j < m; ++j) {
                            double w = boost * q[i + d * j];
                            double* row = &mat.values[i * n];
                            const double* prow = &proj[j * n];
                            for (std::size_t t = 0; t < n; ++t) row[t] += w * prow[t];
                        }
                }
                if (config.noise_scale != 1.0)
                    for (double& v : mat.values) v *= config.noise_scale;
                source.put(sample_id, comp, std::move(mat));
            }
        }
    }
    return source;
}

// ==================== config JSON ====================

SynthConfig config_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("synth config is not valid JSON: ") + e.what());
    }
    try {
        SynthConfig cfg;
        cfg.classes = doc.at("classes").get<std::vector<std::string>>();
        if (doc.contains("strategy_map")) {
            for (const auto& [cls, js] : doc.at("strategy_map").items()) {
                Strategy strat;
                strat.kind = parse_strategy_kind(js.at("kind").get<std::string>());
                if (js.contains("block")) strat.block = js.at("block").get<std::string>();
                cfg.strategy_map[cls] = strat;
            }
        }
        if (doc.contains("rows_d")) cfg.rows_d = doc.at("rows_d").get<std::size_t>();
        if (doc.contains("cols_n")) cfg.cols_n = doc.at("cols_n").get<std::size_t>();
        if (doc.contains("samples_per_class"))
            cfg.samples_per_class = doc.at("samples_per_class").get<std::size_t>();
        if (doc.contains("signal_strength"))
            cfg.signal_strength = doc.at("signal_strength").get<double>();
        if (doc.contains("noise_scale")) cfg.noise_scale = doc.at("noise_scale").get<double>();
        if (doc.contains("k")) cfg.k = doc.at("k").get<int>();
        if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();
        if (doc.contains("score_separation"))
            cfg.score_separation = doc.at("score_separation").get<double>();
        if (doc.contains("score_std")) cfg.score_std = doc.at("score_std").get<double>();
        if (doc.contains("score_separation_override"))
            for (const auto& [cls, v] : doc.at("score_separation_override").items())
                cfg.score_separation_override[cls] = v.get<double>();
        return cfg;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("synth config malformed: ") + e.what());
    }
}

std::string config_to_json(const SynthConfig& config) {
    ordered_json doc;
    doc["classes"] = config.classes;
    ordered_json jmap = ordered_json::object();
    for (const auto& [cls, strat] : config.strategy_map) {
        ordered_json js;
        js["kind"] = strategy_kind_name(strat.kind);
        if (!strat.block.empty()) js["block"] = strat.block;
        jmap[cls] = js;
    }
    doc["strategy_map"] = jmap;
    doc["rows_d"] = config.rows_d;
    doc["cols_n"] = config.cols_n;
    doc["samples_per_class"] = config.samples_per_class;
    doc["signal_strength"] = config.signal_strength;
    doc["noise_scale"] = config.noise_scale;
    doc["k"] = config.k;
    doc["seed"] = config.seed;
    doc["score_separation"] = config.score_separation;
    doc["score_std"] = config.score_std;
    if (!config.score_separation_override.empty()) {
        ordered_json jo = ordered_json::object();
        for (const auto& [cls, v] : config.score_separation_override) jo[cls] = v;
        doc["score_separation_override"] = jo;
    }
    return doc.dump(2);
}

}  // namespace branchlens::synth
