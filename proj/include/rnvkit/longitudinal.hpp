#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnvkit/volume.hpp"

namespace rnvkit {

struct TimepointRecord {
    double visit_time_months = 0.0;
    double membrane_area_mm2 = 0.0;
    double vessel_area_mm2 = 0.0;
    double vessel_density = 0.0; ///< vessel px inside the membrane / membrane px
};

/// Areas and vessel density for one visit. Vessel area counts every vessel
/// pixel; density counts only vessel pixels inside the membrane.
inline TimepointRecord quantify_timepoint(const LesionMask& membrane, const ImageU8& vessels, const Spacing& spacing,
                                          double visit_time_months = 0.0)
{
    require_same_shape(membrane.mask, vessels, "quantify_timepoint");
    std::int64_t m = 0, v = 0, inside = 0;
    for (std::size_t i = 0; i < vessels.size(); ++i) {
        const bool in_m = membrane.mask.data()[i] != 0, in_v = vessels.data()[i] != 0;
        m += in_m;
        v += in_v;
        inside += in_m && in_v;
    }
    const double px = pixel_area_mm2(spacing);
    TimepointRecord r;
    r.visit_time_months = visit_time_months;
    r.membrane_area_mm2 = static_cast<double>(m) * px;
    r.vessel_area_mm2 = static_cast<double>(v) * px;
    r.vessel_density = m > 0 ? static_cast<double>(inside) / static_cast<double>(m) : 0.0;
    return r;
}

struct ProgressionRow {
    TimepointRecord record;
    double delta_area_mm2 = 0.0;         ///< membrane area minus baseline
    double delta_vessel_area_mm2 = 0.0;
    double delta_density = 0.0;
    double rate_mm2_per_month = 0.0;     ///< membrane area change over the preceding interval; 0 at baseline
};

/// Per-visit values, deltas against the first visit, and interval growth rates.
inline std::vector<ProgressionRow> progression_series(const std::vector<TimepointRecord>& visits)
{
    if (visits.size() < 2) throw ConfigError("progression_series: need at least two visits");
    for (std::size_t i = 1; i < visits.size(); ++i)
        if (!(visits[i].visit_time_months > visits[i - 1].visit_time_months))
            throw ConfigError("progression_series: visit times must be strictly increasing");
    std::vector<ProgressionRow> out;
    const auto& base = visits.front();
    for (std::size_t i = 0; i < visits.size(); ++i) {
        ProgressionRow r;
        r.record = visits[i];
        r.delta_area_mm2 = visits[i].membrane_area_mm2 - base.membrane_area_mm2;
        r.delta_vessel_area_mm2 = visits[i].vessel_area_mm2 - base.vessel_area_mm2;
        r.delta_density = visits[i].vessel_density - base.vessel_density;
        if (i > 0)
            r.rate_mm2_per_month = (visits[i].membrane_area_mm2 - visits[i - 1].membrane_area_mm2) /
                                   (visits[i].visit_time_months - visits[i - 1].visit_time_months);
        out.push_back(r);
    }
    return out;
}

inline std::string progression_csv(const std::vector<ProgressionRow>& rows)
{
    std::string out = "visit_time_months,membrane_area_mm2,vessel_area_mm2,vessel_density,delta_area_mm2,rate_mm2_per_month\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.record.visit_time_months,
                      r.record.membrane_area_mm2, r.record.vessel_area_mm2, r.record.vessel_density, r.delta_area_mm2,
                      r.rate_mm2_per_month);
        out += buf;
    }
    return out;
}

inline nlohmann::json progression_json(const std::vector<ProgressionRow>& rows)
{
    nlohmann::json visits = nlohmann::json::array();
    for (const auto& r : rows)
        visits.push_back({{"visit_time_months", r.record.visit_time_months},
                          {"membrane_area_mm2", r.record.membrane_area_mm2},
                          {"vessel_area_mm2", r.record.vessel_area_mm2},
                          {"vessel_density", r.record.vessel_density},
                          {"delta_area_mm2", r.delta_area_mm2},
                          {"delta_vessel_area_mm2", r.delta_vessel_area_mm2},
                          {"delta_density", r.delta_density},
                          {"rate_mm2_per_month", r.rate_mm2_per_month}});
    return {{"visits", visits}};
}

} // namespace rnvkit
