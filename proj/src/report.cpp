#include "coursepilot/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "coursepilot/error.hpp"

namespace coursepilot::report {

using nlohmann::json;

std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", fraction * 100.0);
    return buf;
}

namespace {

json means_json(const eval::MetricMeans& m) {
    json j{{"n", m.n}};
    if (m.n == 0) return j;
    j["s_cos"] = m.s_cos;
    j["factual_f"] = m.factual_f;
    j["correctness"] = m.correctness;
    j["context_recall"] = m.context_recall;
    j["faithfulness"] = m.faithfulness;
    return j;
}

eval::MetricMeans means_from(const json& j) {
    eval::MetricMeans m;
    m.n = j.at("n").get<std::size_t>();
    if (m.n == 0) return m;
    m.s_cos = j.at("s_cos").get<double>();
    m.factual_f = j.at("factual_f").get<double>();
    m.correctness = j.at("correctness").get<double>();
    m.context_recall = j.at("context_recall").get<double>();
    m.faithfulness = j.at("faithfulness").get<double>();
    return m;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string md_cell(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += "\\|";
        else if (c == '\n' || c == '\r') out += ' ';
        else out += c;
    }
    return out;
}

}  // namespace

json to_json(const eval::MetricReport& report) {
    json cases = json::array();
    for (const auto& row : report.per_case) {
        const auto& m = row.metrics;
        json c{{"case_id", row.test_case.case_id},
               {"topic", row.test_case.topic},
               {"question", row.test_case.question},
               {"ground_truth", row.test_case.ground_truth},
               {"answer", row.answer},
               {"retrieved_section_ids", row.retrieved_section_ids},
               {"s_cos", m.s_cos},
               {"factual_f", m.factual_f},
               {"correctness", m.correctness},
               {"context_recall", m.context_recall},
               {"faithfulness", m.faithfulness},
               {"factual_counts", {{"tp", m.factual_counts.tp}, {"fp", m.factual_counts.fp}, {"fn", m.factual_counts.fn}}},
               {"recall_counts",
                {{"attributable", m.recall_counts.attributable}, {"total_sentences", m.recall_counts.total_sentences}}},
               {"faith_counts",
                {{"inferable", m.faith_counts.inferable}, {"total_claims", m.faith_counts.total_claims}}}};
        if (row.test_case.reference_context) c["reference_context"] = *row.test_case.reference_context;
        cases.push_back(std::move(c));
    }
    json topics = json::object();
    for (const auto& [topic, means] : report.per_topic) topics[topic] = means_json(means);
    json errors = json::array();
    for (const auto& e : report.errors) errors.push_back({{"case_id", e.case_id}, {"topic", e.topic}, {"error", e.error}});
    return json{{"per_case", cases}, {"per_topic", topics}, {"overall", means_json(report.overall)}, {"errors", errors}};
}

eval::MetricReport from_json(const json& j) {
    try {
        eval::MetricReport report;
        for (const auto& c : j.at("per_case")) {
            eval::CaseRow row;
            row.test_case.case_id = c.at("case_id").get<std::string>();
            row.test_case.topic = c.at("topic").get<std::string>();
            row.test_case.question = c.value("question", std::string());
            row.test_case.ground_truth = c.value("ground_truth", std::string());
            if (c.contains("reference_context")) row.test_case.reference_context = c["reference_context"].get<std::string>();
            row.answer = c.value("answer", std::string());
            row.retrieved_section_ids = c.value("retrieved_section_ids", std::vector<std::string>{});
            auto& m = row.metrics;
            m.s_cos = c.at("s_cos").get<double>();
            m.factual_f = c.at("factual_f").get<double>();
            m.correctness = c.at("correctness").get<double>();
            m.context_recall = c.at("context_recall").get<double>();
            m.faithfulness = c.at("faithfulness").get<double>();
            const auto& fc = c.at("factual_counts");
            m.factual_counts = {fc.at("tp").get<std::size_t>(), fc.at("fp").get<std::size_t>(),
                                fc.at("fn").get<std::size_t>()};
            const auto& rc = c.at("recall_counts");
            m.recall_counts = {rc.at("attributable").get<std::size_t>(), rc.at("total_sentences").get<std::size_t>()};
            const auto& fa = c.at("faith_counts");
            m.faith_counts = {fa.at("inferable").get<std::size_t>(), fa.at("total_claims").get<std::size_t>()};
            report.per_case.push_back(std::move(row));
        }
        for (const auto& [topic, means] : j.at("per_topic").items()) report.per_topic[topic] = means_from(means);
        report.overall = means_from(j.at("overall"));
        for (const auto& e : j.at("errors")) {
            report.errors.push_back(
                {e.at("case_id").get<std::string>(), e.value("topic", std::string()), e.at("error").get<std::string>()});
        }
        return report;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::PreconditionViolation, std::string("malformed report: ") + e.what());
    }
}

void save_report(const eval::MetricReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write report " + path.string());
    out << to_json(report).dump(2) << "\n";
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

eval::MetricReport load_report(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open report " + path.string());
    const auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::PreconditionViolation, "report is not valid JSON: " + path.string());
    return from_json(j);
}

std::string render_csv(const eval::MetricReport& report) {
    std::ostringstream out;
    out << "case_id,topic,correctness,context_recall,faithfulness\n";
    for (const auto& row : report.per_case) {
        const auto& m = row.metrics;
        out << csv_field(row.test_case.case_id) << ',' << csv_field(row.test_case.topic) << ','
            << format_percent(m.correctness) << ',' << format_percent(m.context_recall) << ','
            << format_percent(m.faithfulness) << '\n';
    }
    if (report.overall.n > 0) {
        const auto& m = report.overall;
        out << "overall,," << format_percent(m.correctness) << ',' << format_percent(m.context_recall) << ','
            << format_percent(m.faithfulness) << '\n';
    }
    return out.str();
}

std::string render_markdown(const eval::MetricReport& report) {
    std::ostringstream out;
    out << "# Evaluation report\n\n";
    out << "## Overall (" << report.overall.n << " case" << (report.overall.n == 1 ? "" : "s") << ")\n\n";
    out << "| Metric | Score |\n|---|---|\n";
    if (report.overall.n > 0) {
        out << "| Correctness | " << format_percent(report.overall.correctness) << " |\n";
        out << "| Context recall | " << format_percent(report.overall.context_recall) << " |\n";
        out << "| Faithfulness | " << format_percent(report.overall.faithfulness) << " |\n";
    }

    out << "\n## Correctness by topic\n\n";
    out << "| Topic | Cases | Correctness | Context recall | Faithfulness |\n|---|---|---|---|---|\n";
    for (const auto& [topic, m] : report.per_topic) {
        out << "| " << md_cell(topic) << " | " << m.n << " | " << format_percent(m.correctness) << " | "
            << format_percent(m.context_recall) << " | " << format_percent(m.faithfulness) << " |\n";
    }

    out << "\n## Cases\n\n";
    out << "| Case | Topic | Correctness | Context recall | Faithfulness |\n|---|---|---|---|---|\n";
    for (const auto& row : report.per_case) {
        const auto& m = row.metrics;
        out << "| " << md_cell(row.test_case.case_id) << " | " << md_cell(row.test_case.topic) << " | "
            << format_percent(m.correctness) << " | " << format_percent(m.context_recall) << " | "
            << format_percent(m.faithfulness) << " |\n";
    }

    if (!report.errors.empty()) {
        out << "\n## Errors\n\n";
        for (const auto& e : report.errors) out << "- " << md_cell(e.case_id) << ": " << md_cell(e.error) << "\n";
    }
    return out.str();
}

}  // namespace coursepilot::report
