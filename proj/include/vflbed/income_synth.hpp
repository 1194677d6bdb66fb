#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vflbed/errors.hpp"
#include "vflbed/income.hpp"
#include "vflbed/rng.hpp"

namespace vflbed {

/// Deterministic census-schema corpus generator. The real survey download is
/// not bundled, so experiments run against this stand-in by default: same
/// columns, same vocabularies, same missing-value convention ("?"), a label
/// produced by a noisy logistic model over the demographic fields, and a
/// positive rate near the real corpus's ~25%. `clean_rows` counts rows without
/// missing markers; dirty rows are interspersed so the drop path is exercised.
/// The default 45222 clean rows reproduce the canonical 36178/9044 split.
struct IncomeSynthConfig {
    std::uint64_t seed = 20240116;
    std::size_t clean_rows = 45222;
    double missing_rate = 0.048;
};

namespace detail {

inline std::size_t pick_weighted(Rng& rng, const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        u -= weights[i];
        if (u < 0.0) return i;
    }
    return weights.size() - 1;
}

} // namespace detail

inline void generate_income_csv(const std::string& path, const IncomeSynthConfig& cfg = {}) {
    namespace sc = income_schema;
    if (cfg.clean_rows < 10) throw ConfigError("generate_income_csv: clean_rows too small");
    if (cfg.missing_rate < 0.0 || cfg.missing_rate >= 1.0)
        throw ConfigError("generate_income_csv: missing_rate out of [0,1)");

    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    for (std::size_t i = 0; i < sc::kColumns.size(); ++i)
        f << sc::kColumns[i] << (i + 1 < sc::kColumns.size() ? "," : "\n");

    Rng rng = Rng(cfg.seed).stream("income-synth");

    // Marginals loosely shaped like the real survey; rare categories floored
    // so standardized indicator columns stay on a sane scale.
    const std::vector<double> w_workclass = {0.737, 0.083, 0.037, 0.031, 0.069, 0.042, 0.004, 0.004};
    const std::vector<double> w_education = {0.164, 0.223, 0.036, 0.325, 0.017, 0.033, 0.042, 0.016,
                                             0.020, 0.013, 0.054, 0.005, 0.028, 0.012, 0.010, 0.004};
    const std::vector<double> w_race = {0.855, 0.031, 0.010, 0.008, 0.096};
    const std::vector<double> w_occ_skilled = {0.09, 0.06, 0.04, 0.13, 0.26, 0.28, 0.01, 0.02,
                                               0.07, 0.01, 0.02, 0.005, 0.03, 0.005};
    const std::vector<double> w_occ_manual = {0.02, 0.18, 0.15, 0.11, 0.06, 0.04, 0.08, 0.10,
                                              0.13, 0.04, 0.08, 0.01, 0.02, 0.005};
    const std::vector<double> w_marital_young = {0.18, 0.05, 0.70, 0.03, 0.005, 0.025, 0.01};
    const std::vector<double> w_marital_older = {0.55, 0.18, 0.14, 0.04, 0.04, 0.02, 0.01};
    std::vector<double> w_country(sc::kNativeCountry.size(), 0.07 / 39.0);
    w_country[0] = 0.91;   // United-States
    w_country[20] = 0.02;  // Mexico

    // education -> years-of-education mapping (fixed, mirrors the survey).
    const std::vector<int> edu_years = {13, 10, 7, 9, 15, 12, 11, 5, 4, 8, 14, 2, 6, 16, 3, 1};

    const std::vector<double> occ_bonus = {0.39, 0.07, -0.78, 0.33, 0.91, 0.78, -0.52,
                                           -0.33, -0.13, -0.46, 0.00, -0.91, 0.26, 0.00};
    const std::vector<double> work_bonus = {0.0, -0.10, 0.50, 0.30, 0.05, 0.0, -2.0, -3.0};

    std::size_t emitted_clean = 0;
    while (emitted_clean < cfg.clean_rows) {
        const int age = std::clamp(static_cast<int>(std::lround(rng.normal(38.5, 13.6))), 17, 90);
        const std::size_t workclass = detail::pick_weighted(rng, w_workclass);
        const long fnlwgt = std::clamp(std::lround(std::exp(rng.normal(11.9, 0.5))), 13000L, 1400000L);
        const std::size_t education = detail::pick_weighted(rng, w_education);
        const int edu_num = edu_years[education];
        const std::size_t marital =
            detail::pick_weighted(rng, age < 30 ? w_marital_young : w_marital_older);
        const bool married = (marital == 0 || marital == 6);
        // A small contrarian segment (manual-work graduates, desk-job
        // dropouts, odd schedules) keeps the population from collapsing
        // into a handful of tight archetypes.
        const bool irregular = rng.uniform() < 0.04;
        const std::size_t occupation = detail::pick_weighted(
            rng, (edu_num >= 12) != irregular ? w_occ_skilled : w_occ_manual);
        const std::size_t sex = rng.uniform() < 0.67 ? 1 : 0;  // Male = index 1
        std::size_t relationship;
        if (married) {
            relationship = sex == 1 ? 2 : 0;  // Husband / Wife
        } else {
            const std::vector<double> w_rel = {0.0, 0.25, 0.0, 0.55, 0.05, 0.15};
            relationship = detail::pick_weighted(rng, w_rel);
        }
        const std::size_t race = detail::pick_weighted(rng, w_race);
        long cap_gain = 0;
        if (rng.uniform() >= 0.916)
            cap_gain = std::clamp(std::lround(std::exp(rng.normal(8.1, 1.2))), 114L, 99999L);
        long cap_loss = 0;
        if (rng.uniform() >= 0.953)
            cap_loss = std::clamp(std::lround(rng.normal(1870.0, 320.0)), 155L, 4356L);
        // Weekly hours are multimodal like the survey: a dominant spike at
        // exactly 40 plus part-time, moderate-overtime and extreme lobes.
        int hours;
        if (irregular) {
            hours = 5 + static_cast<int>(rng.uniform() * 90.0);
        } else {
            const double u = rng.uniform();
            if (u < 0.45)
                hours = 40;
            else if (u < 0.63)
                hours = static_cast<int>(std::lround(rng.normal(44.0, 4.0)));
            else if (u < 0.78)
                hours = static_cast<int>(std::lround(rng.normal(25.0, 6.0)));
            else if (u < 0.95)
                hours = static_cast<int>(std::lround(rng.normal(52.0, 5.0)));
            else
                hours = static_cast<int>(std::lround(rng.normal(65.0, 9.0)));
            if (edu_num >= 13 && rng.uniform() < 0.5) hours += 5;
        }
        hours = std::clamp(hours, 1, 99);
        const std::size_t country = detail::pick_weighted(rng, w_country);

        // Noisy logistic ground truth for the income label.  Marriage is the
        // heaviest single term, mirroring the survey where relationship
        // status separates earners far more sharply than any other column.
        double z = -9.0;
        z += 0.27 * edu_num;
        z += 0.045 * std::min(age, 60);
        z += 0.030 * hours;
        if (married) z += 2.3;
        if (sex == 1) z += 0.35;
        if (cap_gain > 5000) z += 2.0;
        if (cap_loss > 1500) z += 0.6;
        z += occ_bonus[occupation];
        z += work_bonus[workclass];
        // The slope sets how much Bernoulli noise blurs the score near the
        // boundary; the shift re-centres so about a quarter of rows land
        // positive.  Tuned together so a two-tower MLP trained for ten
        // epochs reaches a mid-0.6s F1 rather than saturating or stalling.
        const double slope = 1.6;
        const double shift = 0.0;
        const bool positive = rng.uniform() < 1.0 / (1.0 + std::exp(-slope * (z - shift)));

        std::string workclass_s = sc::kWorkclass[workclass];
        std::string occupation_s = sc::kOccupation[occupation];
        std::string country_s = sc::kNativeCountry[country];
        const bool dirty = rng.uniform() < cfg.missing_rate;
        if (dirty) {
            if (rng.uniform() < 0.75) {
                workclass_s = "?";
                occupation_s = "?";
            } else {
                country_s = "?";
            }
        } else {
            ++emitted_clean;
        }

        f << age << ',' << workclass_s << ',' << fnlwgt << ',' << sc::kEducation[education] << ','
          << edu_num << ',' << sc::kMaritalStatus[marital] << ',' << occupation_s << ','
          << sc::kRelationship[relationship] << ',' << sc::kRace[race] << ',' << sc::kSex[sex] << ','
          << cap_gain << ',' << cap_loss << ',' << hours << ',' << country_s << ','
          << (positive ? ">50K" : "<=50K") << '\n';
    }
    if (!f) throw IoError("write failed for '" + path + "'");
}

} // namespace vflbed
