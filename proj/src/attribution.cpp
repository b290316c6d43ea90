#include "branchlens/attribution.hpp"

#include <algorithm>
#include <cmath>

namespace branchlens::attribution {

const char* penalty_name(Penalty p) {
    switch (p) {
        case Penalty::LINEAR: return "LINEAR";
        case Penalty::QUADRATIC: return "QUADRATIC";
        case Penalty::EXPONENTIAL: return "EXPONENTIAL";
        case Penalty::NONE: return "NONE";
    }
    return "?";
}

Penalty parse_penalty(const std::string& name) {
    if (name == "LINEAR") return Penalty::LINEAR;
    if (name == "QUADRATIC") return Penalty::QUADRATIC;
    if (name == "EXPONENTIAL") return Penalty::EXPONENTIAL;
    if (name == "NONE") return Penalty::NONE;
    throw Error(ErrorCode::InvalidConfig, "unknown penalty '" + name + "'");
}

double z_for_alpha(double alpha) {
    if (alpha == 0.10) return 1.645;
    if (alpha == 0.05) return 1.96;
    if (alpha == 0.01) return 2.576;
    throw Error(ErrorCode::InvalidConfig, "alpha must be one of 0.10, 0.05, 0.01");
}

SummaryStats mean_ci(const std::vector<double>& values, double alpha) {
    double z = z_for_alpha(alpha);
    if (values.size() < 2)
        throw Error(ErrorCode::InsufficientSamples, "mean_ci needs at least 2 values");
    SummaryStats s;
    s.n = values.size();
    s.alpha = alpha;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(s.n);
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(s.n - 1));
    s.se = s.stddev / std::sqrt(static_cast<double>(s.n));
    s.ci_half_width = z * s.se;
    return s;
}

std::vector<ComponentAttribution> component_phi(const std::vector<shap::ShapAttribution>& attrs,
                                                const Layout& layout,
                                                const std::string& attack,
                                                int k,
                                                double alpha) {
    if (attrs.empty())
        throw Error(ErrorCode::NoSamplesForAttack, "no attributions for attack '" + attack + "'");
    if (k < 1) throw Error(ErrorCode::InvalidConfig, "component_phi needs k >= 1");
    const std::size_t n_comp = layout.components.size();
    const std::size_t expect = n_comp * static_cast<std::size_t>(k);
    for (const auto& a : attrs)
        if (a.phi.size() != expect)
            throw Error(ErrorCode::LayoutMismatch,
                        "attribution has " + std::to_string(a.phi.size()) + " features, layout expects " +
                            std::to_string(expect));

    std::vector<ComponentAttribution> out(n_comp);
    std::vector<double> per_sample(attrs.size());
    for (std::size_t ci = 0; ci < n_comp; ++ci) {
        for (std::size_t s = 0; s < attrs.size(); ++s) {
            double sum = 0.0;
            const double* phi = &attrs[s].phi[ci * static_cast<std::size_t>(k)];
            for (int i = 0; i < k; ++i) sum += phi[i];
            per_sample[s] = sum;
        }
        ComponentAttribution& comp = out[ci];
        comp.attack = attack;
        comp.component = layout.components[ci];
        comp.n = attrs.size();
        if (attrs.size() == 1) {
            comp.mean_phi = per_sample[0];
            comp.ci_half_width = 0.0;
        } else {
            SummaryStats st = mean_ci(per_sample, alpha);
            comp.mean_phi = st.mean;
            comp.ci_half_width = st.ci_half_width;
        }
    }
    return out;
}

static std::vector<const ComponentAttribution*> block_members(
    const std::vector<ComponentAttribution>& components, const std::string& block) {
    std::vector<const ComponentAttribution*> out;
    for (const auto& c : components)
        if (c.component.block == block) out.push_back(&c);
    if (out.empty())
        throw Error(ErrorCode::EmptyBlock, "block '" + block + "' has no components");
    return out;
}

BranchAttribution branch_sum(const std::vector<ComponentAttribution>& components,
                             const std::string& block) {
    auto members = block_members(components, block);
    BranchAttribution b;
    b.attack = members.front()->attack;
    b.block = block;
    double ci_sq = 0.0;
    for (const auto* c : members) {
        b.phi_sum += c->mean_phi;
        ci_sq += c->ci_half_width * c->ci_half_width;
    }
    b.ci_half_width = std::sqrt(ci_sq);
    return b;
}

ConfidenceScore confidence(const std::vector<ComponentAttribution>& components,
                           Penalty penalty) {
    auto members = block_members(components, components.empty() ? "" : components.front().component.block);
    // All inputs must belong to one block; callers slice per block.
    for (const auto& c : components)
        if (c.component.block != members.front()->component.block)
            throw Error(ErrorCode::LayoutMismatch, "confidence inputs span multiple blocks");

    double mean = 0.0;
    for (const auto* c : members) mean += c->mean_phi;
    double phi_sum = mean;
    mean /= static_cast<double>(members.size());
    double var = 0.0;
    for (const auto* c : members) var += (c->mean_phi - mean) * (c->mean_phi - mean);
    var /= static_cast<double>(members.size());  // population variance
    double sigma = std::sqrt(var);

    ConfidenceScore score;
    score.attack = members.front()->attack;
    score.block = members.front()->component.block;
    score.penalty = penalty;
    score.sigma = sigma;
    double numer = std::abs(phi_sum);
    switch (penalty) {
        case Penalty::LINEAR: score.value = numer / (1.0 + sigma); break;
        case Penalty::QUADRATIC: score.value = numer / (1.0 + sigma * sigma); break;
        case Penalty::EXPONENTIAL: score.value = numer / std::exp(sigma); break;
        case Penalty::NONE: score.value = numer; break;
    }
    return score;
}

ShareVector shares(const std::vector<ConfidenceScore>& scores,
                   const std::vector<std::string>& blocks) {
    if (scores.empty()) throw Error(ErrorCode::EmptyInput, "shares needs at least one score");
    ShareVector out;
    out.attack = scores.front().attack;
    out.blocks = blocks;
    std::vector<double> c(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const ConfidenceScore* found = nullptr;
        for (const auto& s : scores)
            if (s.block == blocks[i]) { found = &s; break; }
        if (!found)
            throw Error(ErrorCode::EmptyBlock, "no confidence score for block '" + blocks[i] + "'");
        c[i] = found->value;
    }
    double hi = *std::max_element(c.begin(), c.end());
    double z = 0.0;
    out.shares.resize(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        out.shares[i] = std::exp(c[i] - hi);
        z += out.shares[i];
    }
    for (double& s : out.shares) s /= z;
    return out;
}

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw Error(ErrorCode::LengthMismatch, "kendall_tau needs equal-length vectors");
    const std::size_t n = a.size();
    if (n < 2) throw Error(ErrorCode::DegenerateLength, "kendall_tau needs at least 2 items");

    // tau-b: concordant minus discordant over the geometric mean of pair
    // counts excluding ties in each coordinate.
    long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double da = a[i] - a[j];
            double db = b[i] - b[j];
            if (da == 0.0 && db == 0.0) continue;
            if (da == 0.0) { ++ties_a; continue; }
            if (db == 0.0) { ++ties_b; continue; }
            if ((da > 0.0) == (db > 0.0)) ++concordant;
            else ++discordant;
        }
    }
    double denom_a = static_cast<double>(concordant + discordant + ties_a);
    double denom_b = static_cast<double>(concordant + discordant + ties_b);
    if (denom_a == 0.0 || denom_b == 0.0)
        throw Error(ErrorCode::ZeroVariance, "kendall_tau undefined when one ranking is all ties");
    return static_cast<double>(concordant - discordant) / std::sqrt(denom_a * denom_b);
}

}  // namespace branchlens::attribution
