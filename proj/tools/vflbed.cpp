// Command-line front end: run experiments, sweep one axis, validate configs,
// re-emit reports, and generate the synthetic census-style corpus.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vflbed/income_synth.hpp"
#include "vflbed/report.hpp"
#include "vflbed/runner.hpp"

namespace {

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        const std::size_t comma = csv.find(',', pos);
        const std::string tok = csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
        if (tok.empty()) throw vflbed::ConfigError("--values: empty element");
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            throw vflbed::ConfigError("--values: '" + tok + "' is not a number");
        }
        if (used != tok.size()) throw vflbed::ConfigError("--values: '" + tok + "' is not a number");
        out.push_back(v);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"vflbed: deterministic split-learning attack/defense testbed"};
    app.require_subcommand(1);

    std::string config_path, out_dir, axis, values_csv, in_path;
    std::vector<std::uint64_t> seed_override;

    CLI::App* run = app.add_subcommand("run", "run one experiment config");
    run->add_option("--config", config_path, "experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "directory for report.json/report.csv");
    run->add_option("--seed", seed_override, "override the config's seed list");

    CLI::App* sweep = app.add_subcommand("sweep", "vary one axis over a value list");
    sweep->add_option("--config", config_path, "experiment config (JSON)")->required();
    sweep->add_option("--axis", axis, "axis name (e.g. filter_ratio, dpsgd_sigma)")->required();
    sweep->add_option("--values", values_csv, "comma-separated values")->required();
    sweep->add_option("--out", out_dir, "directory for sweep.json/sweep.csv");
    sweep->add_option("--seed", seed_override, "override the config's seed list");

    CLI::App* validate = app.add_subcommand("validate", "parse a config, print it resolved");
    validate->add_option("--config", config_path, "experiment config (JSON)")->required();

    CLI::App* report = app.add_subcommand("report", "re-emit CSV/JSON from a stored report");
    report->add_option("--in", in_path, "report.json or sweep.json")->required();
    report->add_option("--out", out_dir, "output directory")->required();

    std::string gen_out = "income.csv";
    vflbed::IncomeSynthConfig gen_cfg;
    CLI::App* gen = app.add_subcommand("gen-income", "write the synthetic census-style CSV");
    gen->add_option("--out", gen_out, "output CSV path");
    gen->add_option("--rows", gen_cfg.clean_rows, "rows that survive '?' filtering");
    gen->add_option("--seed", gen_cfg.seed, "generator seed");
    gen->add_option("--missing-rate", gen_cfg.missing_rate, "fraction of rows given '?' fields");

    std::string cache_out;
    CLI::App* cache = app.add_subcommand("cache", "preprocess a dataset and store it re-loadable");
    cache->add_option("--config", config_path, "experiment config (JSON)")->required();
    cache->add_option("--out", cache_out, "output envelope path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            vflbed::ExperimentConfig cfg = vflbed::load_config(config_path);
            if (!seed_override.empty()) cfg.seeds = seed_override;
            const vflbed::ExperimentReport rep = vflbed::run_experiment(cfg);
            if (!out_dir.empty()) {
                vflbed::write_report_files(rep, out_dir);
                std::cerr << "[vflbed] wrote " << out_dir << "/report.{json,csv}\n";
            } else {
                std::cout << vflbed::report_json(rep).dump(2) << "\n";
            }
        } else if (sweep->parsed()) {
            vflbed::ExperimentConfig cfg = vflbed::load_config(config_path);
            if (!seed_override.empty()) cfg.seeds = seed_override;
            const vflbed::SweepReport rep = vflbed::run_sweep(cfg, axis, parse_values(values_csv));
            if (!out_dir.empty()) {
                vflbed::write_sweep_files(rep, out_dir);
                std::cerr << "[vflbed] wrote " << out_dir << "/sweep.{json,csv}\n";
            } else {
                std::cout << vflbed::sweep_json(rep).dump(2) << "\n";
            }
        } else if (validate->parsed()) {
            const vflbed::ExperimentConfig cfg = vflbed::load_config(config_path);
            std::cout << vflbed::resolved_config(cfg).dump(2) << "\n";
            std::cerr << "[vflbed] config ok, hash " << vflbed::config_hash(cfg) << "\n";
        } else if (report->parsed()) {
            std::ifstream f(in_path);
            if (!f) throw vflbed::IoError("cannot open '" + in_path + "'");
            vflbed::json j;
            f >> j;
            if (j.contains("axis"))
                vflbed::write_sweep_files(vflbed::sweep_from_json(j), out_dir);
            else
                vflbed::write_report_files(vflbed::report_from_json(j), out_dir);
            std::cerr << "[vflbed] re-emitted report under " << out_dir << "\n";
        } else if (gen->parsed()) {
            vflbed::generate_income_csv(gen_out, gen_cfg);
            std::cerr << "[vflbed] wrote " << gen_out << "\n";
        } else if (cache->parsed()) {
            const vflbed::ExperimentConfig cfg = vflbed::load_config(config_path);
            const vflbed::PreparedData pd = vflbed::prepare_data(cfg);
            vflbed::save_dataset_cache(cache_out, pd.data);
            std::cerr << "[vflbed] cached " << pd.data.train.size() << "+" << pd.data.test.size()
                      << " rows to " << cache_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
