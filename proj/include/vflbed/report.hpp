#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "vflbed/runner.hpp"

namespace vflbed {

namespace detail {

/// Fixed decimal-free formatting: shortest %.17g-compatible form at 12
/// significant digits. Deterministic for identical doubles; NA prints empty.
inline std::string fmt_num(double v) {
    if (!std::isfinite(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
}

inline std::string fmt_count(long long v) { return v < 0 ? std::string() : std::to_string(v); }

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
    return out;
}

inline json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline json count_or_null(long long v) { return v >= 0 ? json(v) : json(nullptr); }

inline double json_num(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return kNA;
    return j.at(key).get<double>();
}

inline long long json_count(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return -1;
    return j.at(key).get<long long>();
}

} // namespace detail

/// The numeric report columns, in their fixed emission order.
struct NumericColumn {
    const char* name;
    std::function<double(const RunResult&)> get;
};

inline const std::vector<NumericColumn>& numeric_columns() {
    static const std::vector<NumericColumn> cols = {
        {"mta", [](const RunResult& r) { return r.mta; }},
        {"f1", [](const RunResult& r) { return r.f1; }},
        {"accuracy", [](const RunResult& r) { return r.accuracy; }},
        {"clean_mta", [](const RunResult& r) { return r.clean_mta; }},
        {"asr", [](const RunResult& r) { return r.asr; }},
        {"lia_precision", [](const RunResult& r) { return r.lia_precision; }},
        {"selected", [](const RunResult& r) { return r.selected_count < 0 ? kNA : double(r.selected_count); }},
        {"poisoned", [](const RunResult& r) { return r.poisoned_total < 0 ? kNA : double(r.poisoned_total); }},
        {"train_loss", [](const RunResult& r) { return r.final_train_loss; }},
        {"saliency_ratio", [](const RunResult& r) { return r.saliency_final(); }},
        {"ssl_loss_start", [](const RunResult& r) { return r.ssl_initial_loss; }},
        {"ssl_loss_end", [](const RunResult& r) { return r.ssl_final_loss; }},
        {"pca_pop_mean", [](const RunResult& r) { return r.has_anomaly ? r.pca.pop_mean : kNA; }},
        {"pca_pop_std", [](const RunResult& r) { return r.has_anomaly ? r.pca.pop_std : kNA; }},
        {"pca_suspect_mean", [](const RunResult& r) { return r.has_anomaly ? r.pca.suspect_mean : kNA; }},
        {"pca_suspect_max", [](const RunResult& r) { return r.has_anomaly ? r.pca.suspect_max : kNA; }},
        {"mahal_pop_mean", [](const RunResult& r) { return r.has_anomaly ? r.mahal.pop_mean : kNA; }},
        {"mahal_pop_std", [](const RunResult& r) { return r.has_anomaly ? r.mahal.pop_std : kNA; }},
        {"mahal_suspect_mean",
         [](const RunResult& r) { return r.has_anomaly ? r.mahal.suspect_mean : kNA; }},
        {"mahal_suspect_max", [](const RunResult& r) { return r.has_anomaly ? r.mahal.suspect_max : kNA; }},
        {"abl_flagged", [](const RunResult& r) { return r.abl_flagged < 0 ? kNA : double(r.abl_flagged); }},
        {"abl_overlap", [](const RunResult& r) { return r.abl_overlap < 0 ? kNA : double(r.abl_overlap); }},
        {"mae_flag_rate", [](const RunResult& r) { return r.mae_flag_rate; }},
    };
    return cols;
}

/// Column-wise mean and population standard deviation over finite values of
/// non-failed rows.
struct Aggregate {
    std::vector<double> mean, stdev;  // parallel to numeric_columns()
    std::size_t seeds_ok = 0, seeds_failed = 0;
};

inline Aggregate aggregate_rows(const std::vector<RunResult>& rows) {
    const auto& cols = numeric_columns();
    Aggregate agg;
    agg.mean.assign(cols.size(), kNA);
    agg.stdev.assign(cols.size(), kNA);
    for (const RunResult& r : rows)
        (r.status == "ok" ? agg.seeds_ok : agg.seeds_failed) += 1;
    for (std::size_t ci = 0; ci < cols.size(); ++ci) {
        double sum = 0.0;
        std::size_t cnt = 0;
        for (const RunResult& r : rows) {
            if (r.status != "ok") continue;
            const double v = cols[ci].get(r);
            if (std::isfinite(v)) {
                sum += v;
                ++cnt;
            }
        }
        if (cnt == 0) continue;
        const double mean = sum / static_cast<double>(cnt);
        double sq = 0.0;
        for (const RunResult& r : rows) {
            if (r.status != "ok") continue;
            const double v = cols[ci].get(r);
            if (std::isfinite(v)) sq += (v - mean) * (v - mean);
        }
        agg.mean[ci] = mean;
        agg.stdev[ci] = std::sqrt(sq / static_cast<double>(cnt));
    }
    return agg;
}

inline json row_to_json(const RunResult& r) {
    using detail::count_or_null;
    using detail::num_or_null;
    json j;
    j["seed"] = r.seed;
    j["status"] = r.status;
    j["error"] = r.error;
    j["mode"] = r.mode;
    j["mta"] = num_or_null(r.mta);
    j["f1"] = num_or_null(r.f1);
    j["accuracy"] = num_or_null(r.accuracy);
    j["clean_mta"] = num_or_null(r.clean_mta);
    j["asr"] = num_or_null(r.asr);
    j["lia_precision"] = num_or_null(r.lia_precision);
    j["selected"] = count_or_null(r.selected_count);
    j["poisoned"] = count_or_null(r.poisoned_total);
    j["train_loss"] = num_or_null(r.final_train_loss);
    j["epoch_losses"] = r.epoch_losses;
    json sal = json::array();
    for (double v : r.saliency) sal.push_back(num_or_null(v));
    j["saliency"] = sal;
    j["ssl_loss_start"] = num_or_null(r.ssl_initial_loss);
    j["ssl_loss_end"] = num_or_null(r.ssl_final_loss);
    j["has_anomaly"] = r.has_anomaly;
    if (r.has_anomaly) {
        j["pca"] = {{"pop_mean", r.pca.pop_mean},
                    {"pop_std", r.pca.pop_std},
                    {"suspect_mean", r.pca.suspect_mean},
                    {"suspect_max", r.pca.suspect_max},
                    {"suspect_count", r.pca.suspect_count}};
        j["mahal"] = {{"pop_mean", r.mahal.pop_mean},
                      {"pop_std", r.mahal.pop_std},
                      {"suspect_mean", r.mahal.suspect_mean},
                      {"suspect_max", r.mahal.suspect_max},
                      {"suspect_count", r.mahal.suspect_count}};
    }
    j["abl_flagged"] = count_or_null(r.abl_flagged);
    j["abl_overlap"] = count_or_null(r.abl_overlap);
    j["mae_flag_rate"] = num_or_null(r.mae_flag_rate);
    return j;
}

inline RunResult row_from_json(const json& j) {
    using detail::json_count;
    using detail::json_num;
    RunResult r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.status = j.at("status").get<std::string>();
    r.error = j.value("error", std::string());
    r.mode = j.value("mode", std::string("none"));
    r.mta = json_num(j, "mta");
    r.f1 = json_num(j, "f1");
    r.accuracy = json_num(j, "accuracy");
    r.clean_mta = json_num(j, "clean_mta");
    r.asr = json_num(j, "asr");
    r.lia_precision = json_num(j, "lia_precision");
    r.selected_count = json_count(j, "selected");
    r.poisoned_total = json_count(j, "poisoned");
    r.final_train_loss = json_num(j, "train_loss");
    if (j.contains("epoch_losses")) r.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
    if (j.contains("saliency"))
        for (const json& v : j.at("saliency")) r.saliency.push_back(v.is_null() ? kNA : v.get<double>());
    r.ssl_initial_loss = json_num(j, "ssl_loss_start");
    r.ssl_final_loss = json_num(j, "ssl_loss_end");
    r.has_anomaly = j.value("has_anomaly", false);
    if (r.has_anomaly) {
        const json& p = j.at("pca");
        r.pca = {p.at("pop_mean").get<double>(), p.at("pop_std").get<double>(),
                 p.at("suspect_mean").get<double>(), p.at("suspect_max").get<double>(),
                 p.at("suspect_count").get<std::size_t>()};
        const json& m = j.at("mahal");
        r.mahal = {m.at("pop_mean").get<double>(), m.at("pop_std").get<double>(),
                   m.at("suspect_mean").get<double>(), m.at("suspect_max").get<double>(),
                   m.at("suspect_count").get<std::size_t>()};
    }
    r.abl_flagged = json_count(j, "abl_flagged");
    r.abl_overlap = json_count(j, "abl_overlap");
    r.mae_flag_rate = json_num(j, "mae_flag_rate");
    return r;
}

inline std::string csv_header(const std::string& prefix = "") {
    std::string out = prefix + "seed,status,mode";
    for (const auto& c : numeric_columns()) {
        out += ',';
        out += c.name;
    }
    out += ",error\n";
    return out;
}

inline std::string csv_row(const RunResult& r, const std::string& prefix = "") {
    std::string out = prefix + std::to_string(r.seed) + "," + r.status + "," + r.mode;
    for (const auto& c : numeric_columns()) out += "," + detail::fmt_num(c.get(r));
    out += "," + detail::csv_escape(r.error) + "\n";
    return out;
}

inline std::string csv_aggregate_rows(const std::vector<RunResult>& rows, const std::string& prefix,
                                      const std::string& mode) {
    const Aggregate agg = aggregate_rows(rows);
    std::string out;
    for (const char* which : {"mean", "std"}) {
        out += prefix + which + ",aggregate," + mode;
        const std::vector<double>& vals = std::string(which) == "mean" ? agg.mean : agg.stdev;
        for (double v : vals) out += "," + detail::fmt_num(v);
        out += ",\n";
    }
    return out;
}

inline std::string report_csv(const ExperimentReport& rep) {
    std::string out = csv_header();
    for (const RunResult& r : rep.rows) out += csv_row(r);
    const std::string mode = rep.rows.empty() ? "none" : rep.rows.front().mode;
    out += csv_aggregate_rows(rep.rows, "", mode);
    return out;
}

inline json report_json(const ExperimentReport& rep) {
    json j;
    j["config"] = rep.config;
    j["config_hash"] = rep.config_hash;
    j["rows"] = json::array();
    for (const RunResult& r : rep.rows) j["rows"].push_back(row_to_json(r));
    const Aggregate agg = aggregate_rows(rep.rows);
    json mean, stdev;
    const auto& cols = numeric_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) {
        mean[cols[i].name] = detail::num_or_null(agg.mean[i]);
        stdev[cols[i].name] = detail::num_or_null(agg.stdev[i]);
    }
    j["aggregate"] = {{"mean", mean},
                      {"std", stdev},
                      {"seeds_ok", agg.seeds_ok},
                      {"seeds_failed", agg.seeds_failed}};
    return j;
}

inline ExperimentReport report_from_json(const json& j) {
    ExperimentReport rep;
    rep.config = j.at("config");
    rep.config_hash = j.at("config_hash").get<std::string>();
    for (const json& r : j.at("rows")) rep.rows.push_back(row_from_json(r));
    return rep;
}

inline std::string sweep_csv(const SweepReport& sweep) {
    std::string out = csv_header("axis,value,");
    for (const SweepPoint& p : sweep.points) {
        const std::string prefix = sweep.axis + "," + detail::fmt_num(p.value) + ",";
        for (const RunResult& r : p.report.rows) out += csv_row(r, prefix);
        const std::string mode = p.report.rows.empty() ? "none" : p.report.rows.front().mode;
        out += csv_aggregate_rows(p.report.rows, prefix, mode);
    }
    return out;
}

inline json sweep_json(const SweepReport& sweep) {
    json j;
    j["axis"] = sweep.axis;
    j["points"] = json::array();
    for (const SweepPoint& p : sweep.points)
        j["points"].push_back(json{{"value", p.value}, {"report", report_json(p.report)}});
    return j;
}

inline SweepReport sweep_from_json(const json& j) {
    SweepReport sweep;
    sweep.axis = j.at("axis").get<std::string>();
    for (const json& p : j.at("points")) {
        SweepPoint sp;
        sp.value = p.at("value").get<double>();
        sp.report = report_from_json(p.at("report"));
        sweep.points.push_back(std::move(sp));
    }
    return sweep;
}

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write '" + path + "'");
    f << text;
    if (!f) throw IoError("short write to '" + path + "'");
}

} // namespace detail

/// report.json + report.csv under `dir`. Content is a pure function of the
/// report, so a rerun of the same config produces identical bytes.
inline void write_report_files(const ExperimentReport& rep, const std::string& dir) {
    std::filesystem::create_directories(dir);
    detail::write_text_file(dir + "/report.json", report_json(rep).dump(2) + "\n");
    detail::write_text_file(dir + "/report.csv", report_csv(rep));
}

inline void write_sweep_files(const SweepReport& sweep, const std::string& dir) {
    std::filesystem::create_directories(dir);
    detail::write_text_file(dir + "/sweep.json", sweep_json(sweep).dump(2) + "\n");
    detail::write_text_file(dir + "/sweep.csv", sweep_csv(sweep));
}

} // namespace vflbed
