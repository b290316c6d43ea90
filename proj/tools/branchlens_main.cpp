// branchlens CLI: drives the full pipeline and its pieces from config files.
//
// Subcommands: synth, extract, train, shap, aggregate, classify, run,
// report, ablate-eig, ablate-penalty. Exit codes: 0 success, 2 config
// error, 3 data error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "branchlens/csv.hpp"
#include "branchlens/dataio.hpp"
#include "branchlens/errors.hpp"
#include "branchlens/gbdt.hpp"
#include "branchlens/parallel.hpp"
#include "branchlens/pipeline.hpp"
#include "branchlens/synth.hpp"
#include "branchlens/treeshap.hpp"

namespace fs = std::filesystem;
using namespace branchlens;

namespace {

struct CommonFlags {
    std::string config;
    int jobs = 1;
    std::uint64_t seed = 0;
    std::string out;
    std::string scores;
    int k = 10;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "pipeline config JSON")->required();
    cmd->add_option("--jobs", f.jobs, "worker threads");
    cmd->add_option("--seed", f.seed, "seed override");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--scores", f.scores, "detector score CSV (sample_id,label,score)");
    cmd->add_option("--k", f.k, "eigenvalues kept per component");
}

pipeline::PipelineConfig make_config(const CLI::App* cmd, const CommonFlags& f) {
    pipeline::PipelineConfig cfg = pipeline::load_config(f.config);
    if (cmd->count("--jobs")) cfg.jobs = f.jobs;
    if (cmd->count("--seed")) cfg.seed = f.seed;
    if (cmd->count("--out")) cfg.out = f.out;
    if (cmd->count("--scores")) cfg.scores = f.scores;
    if (cmd->count("--k")) cfg.k = f.k;
    return cfg;
}

fs::path need_out_dir(const pipeline::PipelineConfig& cfg) {
    if (cfg.out.empty())
        throw Error(ErrorCode::InvalidConfig, "an output directory is required (--out)");
    fs::create_directories(cfg.out);
    return fs::path(cfg.out);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

ManifestSource open_dataset(const pipeline::PipelineConfig& cfg) {
    if (cfg.dataset.empty())
        throw Error(ErrorCode::InvalidConfig, "config must name a dataset manifest");
    return ManifestSource(load_manifest(cfg.dataset));
}

std::string fixed2(double v) { return csv::format_fixed(v, 2); }

int dispatch(CLI::App& app) {
    // synth
    if (CLI::App* cmd = app.get_subcommand("synth"); cmd->parsed()) {
        std::string config_path = cmd->get_option("--config")->as<std::string>();
        std::string out = cmd->get_option("--out")->as<std::string>();
        synth::SynthConfig scfg = synth::config_from_json(read_file(config_path));
        if (cmd->count("--seed")) scfg.seed = cmd->get_option("--seed")->as<std::uint64_t>();
        if (out.empty()) throw Error(ErrorCode::InvalidConfig, "synth needs --out");
        MemorySource source = synth::generate(scfg);
        persist_dataset(source, out);
        std::cout << "wrote " << source.samples().size() << " samples ("
                  << source.layout().components.size() << " components each) to " << out << "\n";
        return 0;
    }

    CLI::App* active = nullptr;
    for (CLI::App* cmd : app.get_subcommands()) active = cmd;
    CommonFlags f;
    f.config = active->get_option("--config")->as<std::string>();
    f.jobs = active->count("--jobs") ? active->get_option("--jobs")->as<int>() : 0;
    f.seed = active->count("--seed") ? active->get_option("--seed")->as<std::uint64_t>() : 0;
    f.out = active->count("--out") ? active->get_option("--out")->as<std::string>() : "";
    f.scores = active->count("--scores") ? active->get_option("--scores")->as<std::string>() : "";
    f.k = active->count("--k") ? active->get_option("--k")->as<int>() : 0;
    pipeline::PipelineConfig cfg = make_config(active, f);
    const std::string& name = active->get_name();

    if (name == "extract") {
        fs::path dir = need_out_dir(cfg);
        ManifestSource source = open_dataset(cfg);
        pipeline::FeatureTable features =
            pipeline::extract_meta_features(source, cfg.k, cfg.jobs);
        pipeline::write_features_csv(features, (dir / "features.csv").string());
        std::cout << "wrote " << features.rows.size() << " feature rows to "
                  << (dir / "features.csv").string() << "\n";
        return 0;
    }

    if (name == "train") {
        fs::path dir = need_out_dir(cfg);
        ManifestSource source = open_dataset(cfg);
        pipeline::FeatureTable features =
            pipeline::extract_meta_features(source, cfg.k, cfg.jobs);
        gbdt::TreeEnsemble model = gbdt::fit(features.rows, features.labels, cfg.train);
        gbdt::save_model(model, (dir / "model.json").string());
        csv::Table loss;
        loss.header = {"trees", "log_loss"};
        for (std::size_t i = 0; i < model.train_loss.size(); ++i)
            loss.rows.push_back({std::to_string(i), csv::format_double(model.train_loss[i])});
        csv::write_table(loss, (dir / "train_loss.csv").string());
        std::cout << "trained " << model.trees.size() << " trees on " << features.rows.size()
                  << " samples; final log-loss " << csv::format_double(model.train_loss.back())
                  << "\n";
        return 0;
    }

    if (name == "shap") {
        fs::path dir = need_out_dir(cfg);
        ManifestSource source = open_dataset(cfg);
        pipeline::FeatureTable features =
            pipeline::extract_meta_features(source, cfg.k, cfg.jobs);
        gbdt::TreeEnsemble model = gbdt::fit(features.rows, features.labels, cfg.train);
        std::vector<shap::ShapAttribution> attrs(features.rows.size());
        parallel_for(features.rows.size(), cfg.jobs, [&](std::size_t i) {
            int cls = model.class_index(features.labels[i]);
            attrs[i] = shap::shap_values(model, features.rows[i], cls);
            attrs[i].sample_id = features.sample_ids[i];
        });
        pipeline::write_shap_csv(attrs, model.classes, (dir / "shap_values.csv").string());
        std::cout << "wrote attributions for " << attrs.size() << " samples to "
                  << (dir / "shap_values.csv").string() << "\n";
        return 0;
    }

    if (name == "ablate-eig") {
        fs::path dir = need_out_dir(cfg);
        ManifestSource source = open_dataset(cfg);
        std::vector<int> ks = active->get_option("--ks")->as<std::vector<int>>();
        if (ks.empty()) ks = {2, 5, 10, 20, 35};
        auto points = pipeline::ablate_eigencount(cfg, source, ks);
        pipeline::write_eig_ablation_csv(points, (dir / "eig_ablation.csv").string());
        for (const auto& pt : points)
            std::cout << "k=" << pt.k << " f1=" << fixed2(pt.f1)
                      << " retention=" << fixed2(pt.retention_pct) << "%"
                      << " savings=" << fixed2(pt.savings_pct) << "%\n";
        return 0;
    }

    if (name == "ablate-penalty") {
        fs::path dir = need_out_dir(cfg);
        ManifestSource source = open_dataset(cfg);
        pipeline::PenaltyAblation ab = pipeline::ablate_penalty(cfg, source);
        pipeline::write_penalty_ablation_csv(ab, (dir / "penalty_ablation.csv").string());
        for (std::size_t pi = 0; pi < ab.penalties.size(); ++pi)
            std::cout << attribution::penalty_name(ab.penalties[pi])
                      << " tau_vs_linear=" << csv::format_double(ab.tau_vs_linear[pi]) << "\n";
        return 0;
    }

    // The remaining subcommands share one full pipeline pass; run writes the
    // complete report set itself, the others write their slice.
    fs::path dir = need_out_dir(cfg);
    pipeline::PipelineConfig pass = cfg;
    if (name != "run") pass.out.clear();
    ManifestSource source = open_dataset(cfg);
    pipeline::PipelineResult result = pipeline::run_pipeline(pass, source);

    if (name == "aggregate") {
        pipeline::write_phi_csv(result, (dir / "table3_phi.csv").string());
        pipeline::write_shares_csv(result, cfg.penalties.front(),
                                   (dir / "table4_shares.csv").string());
    } else if (name == "classify") {
        pipeline::write_table1_csv(result, cfg.penalties.front(), (dir / "table1.csv").string());
    } else if (name == "report") {
        pipeline::emit_strategy_matrix(result.records, cfg.archetype,
                                       (dir / "strategy_matrix.svg").string(),
                                       (dir / "strategy_matrix.csv").string());
        pipeline::write_summary_json(result, cfg, (dir / "summary.json").string());
    }

    for (const auto& rec : result.records)
        std::cout << rec.attack << ": eer=" << fixed2(100.0 * rec.eer) << "% dominant="
                  << rec.dominant_block << " share=" << fixed2(rec.dominant_share_pct) << "% "
                  << eval::archetype_name(rec.archetype) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spectral branch-attribution toolkit"};
    app.require_subcommand(1);

    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a planted synthetic dataset");
    CommonFlags synth_flags;
    synth_cmd->add_option("--config", synth_flags.config, "synth config JSON")->required();
    synth_cmd->add_option("--out", synth_flags.out, "dataset output directory");
    synth_cmd->add_option("--seed", synth_flags.seed, "seed override");

    static CommonFlags flags[9];
    const char* names[] = {"extract", "train",      "shap",          "aggregate", "classify",
                           "run",     "report",     "ablate-eig",    "ablate-penalty"};
    const char* helps[] = {"write per-sample meta-features",
                           "train the meta-classifier",
                           "write per-sample attributions",
                           "write per-block attribution tables",
                           "write the per-attack strategy table",
                           "full pipeline with all reports",
                           "write the strategy matrix and summary",
                           "sweep eigenvalue counts",
                           "compare dispersion penalties"};
    std::vector<int> ks;
    for (int i = 0; i < 9; ++i) {
        CLI::App* cmd = app.add_subcommand(names[i], helps[i]);
        add_common(cmd, flags[i]);
        if (std::string(names[i]) == "ablate-eig")
            cmd->add_option("--ks", ks, "eigenvalue counts to sweep")->delimiter(',');
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        return dispatch(app);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";  // what() already carries the code name
        return is_config_error(e.code()) ? 2 : 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
