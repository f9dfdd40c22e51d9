#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "coursepilot/eval.hpp"

namespace coursepilot::report {

/// 0.88 -> "88.0%"
std::string format_percent(double fraction);

/// {per_case: [...], per_topic: {...}, overall: {...}, errors: [...]}
nlohmann::json to_json(const eval::MetricReport& report);
eval::MetricReport from_json(const nlohmann::json& j);

void save_report(const eval::MetricReport& report, const std::filesystem::path& path);
eval::MetricReport load_report(const std::filesystem::path& path);

/// Header `case_id,topic,correctness,context_recall,faithfulness`, one row per
/// case, then an `overall` row with an empty topic when any case succeeded.
std::string render_csv(const eval::MetricReport& report);

/// Overall scores, a per-topic correctness breakdown, per-case rows and errors.
std::string render_markdown(const eval::MetricReport& report);

}  // namespace coursepilot::report
