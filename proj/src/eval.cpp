#include "coursepilot/eval.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <regex>
#include <set>
#include <thread>

#include <unicode/unistr.h>

#include "coursepilot/error.hpp"
#include "coursepilot/text.hpp"

namespace coursepilot::eval {

using nlohmann::json;

void MetricConfig::validate() const {
    if (!(w_cos >= 0.0) || !(w_f >= 0.0) || !(w_cos + w_f > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "metric weights must be non-negative with a positive sum");
    }
}

std::string DeterministicJudge::normalize(std::string_view text) {
    auto u = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    u.foldCase();
    std::string folded;
    u.toUTF8String(folded);
    return text::collapse_whitespace(folded);
}

std::vector<std::string> DeterministicJudge::split_statements(std::string_view text) const {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i < text.size() && text[i] != '.' && text[i] != '?' && text[i] != '!') continue;
        const auto piece = text::trim(text.substr(start, i - start));
        if (!piece.empty()) out.emplace_back(piece);
        start = i + 1;
    }
    return out;
}

bool DeterministicJudge::statement_supported(std::string_view statement, std::string_view reference) const {
    const auto s = normalize(statement);
    if (s.empty()) return false;
    return normalize(reference).find(s) != std::string::npos;
}

std::unique_ptr<Judge> deterministic_judge() { return std::make_unique<DeterministicJudge>(); }

namespace {

std::string fill(std::string tmpl, std::string_view key, std::string_view value) {
    const std::string placeholder = "{" + std::string(key) + "}";
    for (auto pos = tmpl.find(placeholder); pos != std::string::npos;
         pos = tmpl.find(placeholder, pos + value.size())) {
        tmpl.replace(pos, placeholder.size(), value);
    }
    return tmpl;
}

// The outermost {...} in a reply, tolerating prose or code fences around it.
std::optional<json> extract_object(const std::string& reply) {
    const auto open = reply.find('{');
    const auto close = reply.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) return std::nullopt;
    auto parsed = json::parse(reply.substr(open, close - open + 1), nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) return std::nullopt;
    return parsed;
}

}  // namespace

json LlmJudge::query(const std::string& prompt, std::string_view key) const {
    const std::vector<chat::ChatMessage> messages{{"user", prompt}};
    std::string last;
    for (int attempt = 0; attempt < 2; ++attempt) {
        last = generator_->complete(messages);
        if (auto obj = extract_object(last); obj && obj->contains(key)) return (*obj)[std::string(key)];
    }
    throw Error(ErrorCode::JudgeParseError, "judge reply lacks \"" + std::string(key) + "\": " + last);
}

std::vector<std::string> LlmJudge::split_statements(std::string_view text) const {
    const auto value = query(fill(prompts_.split_template, "text", text), "statements");
    if (!value.is_array()) throw Error(ErrorCode::JudgeParseError, "\"statements\" is not an array");
    std::vector<std::string> out;
    for (const auto& item : value) {
        if (!item.is_string()) throw Error(ErrorCode::JudgeParseError, "non-string statement");
        const auto s = text::trim(item.get<std::string>());
        if (!s.empty()) out.emplace_back(s);
    }
    return out;
}

bool LlmJudge::statement_supported(std::string_view statement, std::string_view reference) const {
    auto prompt = fill(prompts_.support_template, "reference", reference);
    prompt = fill(std::move(prompt), "statement", statement);
    const auto value = query(prompt, "supported");
    if (!value.is_boolean()) throw Error(ErrorCode::JudgeParseError, "\"supported\" is not a boolean");
    return value.get<bool>();
}

std::unique_ptr<Judge> llm_judge(std::shared_ptr<chat::Generator> generator, JudgePromptSet prompts) {
    return std::make_unique<LlmJudge>(std::move(generator), std::move(prompts));
}

double factual_f_score(const FactualCounts& c) {
    if (c.tp + c.fp + c.fn == 0) throw Error(ErrorCode::NoStatements, "no statements to compare");
    const double tp = static_cast<double>(c.tp);
    return tp / (tp + 0.5 * static_cast<double>(c.fp + c.fn));
}

double answer_correctness(double s_cos, double f, const MetricConfig& cfg) {
    cfg.validate();
    if (!(f >= 0.0 && f <= 1.0)) throw Error(ErrorCode::PreconditionViolation, "factual score outside [0, 1]");
    return (cfg.w_cos * s_cos + cfg.w_f * f) / (cfg.w_cos + cfg.w_f);
}

FactualCounts classify_statements(std::string_view answer, std::string_view ground_truth, const Judge& judge) {
    FactualCounts c;
    for (const auto& s : judge.split_statements(answer)) {
        (judge.statement_supported(s, ground_truth) ? c.tp : c.fp) += 1;
    }
    for (const auto& s : judge.split_statements(ground_truth)) {
        if (!judge.statement_supported(s, answer)) ++c.fn;
    }
    return c;
}

RecallResult context_recall(std::string_view ground_truth, std::string_view retrieved_context, const Judge& judge) {
    if (text::trim(ground_truth).empty()) throw Error(ErrorCode::PreconditionViolation, "empty ground truth");
    const auto sentences = judge.split_statements(ground_truth);
    if (sentences.empty()) throw Error(ErrorCode::NoSentences, "ground truth has no sentences");
    RecallResult r;
    r.counts.total_sentences = sentences.size();
    for (const auto& s : sentences) {
        if (judge.statement_supported(s, retrieved_context)) ++r.counts.attributable;
    }
    r.value = static_cast<double>(r.counts.attributable) / static_cast<double>(r.counts.total_sentences);
    return r;
}

FaithResult faithfulness(std::string_view answer, std::string_view retrieved_context, const Judge& judge) {
    if (text::trim(answer).empty()) throw Error(ErrorCode::PreconditionViolation, "empty answer");
    const auto claims = judge.split_statements(answer);
    if (claims.empty()) throw Error(ErrorCode::NoClaims, "answer has no claims");
    FaithResult r;
    r.counts.total_claims = claims.size();
    for (const auto& c : claims) {
        if (judge.statement_supported(c, retrieved_context)) ++r.counts.inferable;
    }
    r.value = static_cast<double>(r.counts.inferable) / static_cast<double>(r.counts.total_claims);
    return r;
}

std::string strip_markers(std::string_view answer) {
    static const std::regex marker(R"(\[(SOURCE|HISTORY): [^\]\n]*\])");
    return std::regex_replace(std::string(answer), marker, "");
}

CaseMetrics evaluate_case(const CaseRun& run, const embed::Embedder& embedder, const Judge& judge,
                          const MetricConfig& cfg) {
    cfg.validate();
    const auto& gt = run.test_case.ground_truth;
    if (text::trim(run.answer).empty()) throw Error(ErrorCode::PreconditionViolation, "empty answer");
    if (text::trim(gt).empty()) throw Error(ErrorCode::PreconditionViolation, "empty ground truth");
    const auto answer = strip_markers(run.answer);
    if (text::trim(answer).empty()) throw Error(ErrorCode::NoClaims, "answer holds only citation markers");

    CaseMetrics m;
    const auto vectors = embedder.embed({gt, answer});
    m.s_cos = embed::cosine_similarity(vectors[0], vectors[1]);
    m.factual_counts = classify_statements(answer, gt, judge);
    m.factual_f = factual_f_score(m.factual_counts);
    m.correctness = answer_correctness(m.s_cos, m.factual_f, cfg);
    const auto recall = context_recall(gt, run.retrieved_context, judge);
    m.context_recall = recall.value;
    m.recall_counts = recall.counts;
    const auto faith = faithfulness(answer, run.retrieved_context, judge);
    m.faithfulness = faith.value;
    m.faith_counts = faith.counts;
    return m;
}

namespace {

struct MeanAccumulator {
    MetricMeans sums;

    void add(const CaseMetrics& m) {
        ++sums.n;
        sums.s_cos += m.s_cos;
        sums.factual_f += m.factual_f;
        sums.correctness += m.correctness;
        sums.context_recall += m.context_recall;
        sums.faithfulness += m.faithfulness;
    }

    MetricMeans means() const {
        MetricMeans out = sums;
        if (out.n == 0) return out;
        const double n = static_cast<double>(out.n);
        out.s_cos /= n;
        out.factual_f /= n;
        out.correctness /= n;
        out.context_recall /= n;
        out.faithfulness /= n;
        return out;
    }
};

}  // namespace

MetricReport aggregate(std::vector<CaseRow> rows, std::vector<ErrorRow> errors) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const CaseRow& a, const CaseRow& b) { return a.test_case.case_id < b.test_case.case_id; });
    std::stable_sort(errors.begin(), errors.end(),
                     [](const ErrorRow& a, const ErrorRow& b) { return a.case_id < b.case_id; });
    MeanAccumulator overall;
    std::map<std::string, MeanAccumulator> topics;
    for (const auto& row : rows) {
        overall.add(row.metrics);
        topics[row.test_case.topic].add(row.metrics);
    }
    MetricReport report;
    report.per_case = std::move(rows);
    report.errors = std::move(errors);
    report.overall = overall.means();
    for (const auto& [topic, acc] : topics) report.per_topic[topic] = acc.means();
    return report;
}

Answerer engine_answerer(const chat::Engine& engine) {
    return [&engine](const TestCase& tc) {
        const auto result = engine.ask_fresh(tc.question);
        CaseRun run;
        run.test_case = tc;
        run.answer = result.turn.text;
        run.retrieved_section_ids = result.turn.retrieved_section_ids;
        std::vector<std::string> bodies;
        for (const auto& s : result.retrieval.sections) bodies.push_back(s.body);
        run.retrieved_context = text::join(bodies, "\n\n");
        return run;
    };
}

MetricReport run_testset(const std::vector<TestCase>& cases, const Answerer& answer, const embed::Embedder& embedder,
                         const Judge& judge, const MetricConfig& cfg, std::size_t parallelism) {
    if (cases.empty()) throw Error(ErrorCode::EmptyTestset, "no test cases");
    cfg.validate();

    std::vector<std::optional<CaseRow>> rows(cases.size());
    std::vector<std::optional<ErrorRow>> failures(cases.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (auto i = next.fetch_add(1); i < cases.size(); i = next.fetch_add(1)) {
            const auto& tc = cases[i];
            try {
                auto run = answer(tc);
                run.test_case = tc;
                auto metrics = evaluate_case(run, embedder, judge, cfg);
                rows[i] = CaseRow{tc, std::move(run.answer), std::move(run.retrieved_section_ids), metrics};
            } catch (const std::exception& e) {
                failures[i] = ErrorRow{tc.case_id, tc.topic, e.what()};
            }
        }
    };

    const auto workers = std::clamp<std::size_t>(parallelism, 1, cases.size());
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    pool.clear();

    std::vector<CaseRow> ok;
    std::vector<ErrorRow> errs;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        if (rows[i]) ok.push_back(std::move(*rows[i]));
        if (failures[i]) errs.push_back(std::move(*failures[i]));
    }
    return aggregate(std::move(ok), std::move(errs));
}

std::vector<TestCase> parse_testset(std::istream& in, const std::vector<std::string>& taxonomy) {
    std::vector<TestCase> cases;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        const auto where = "testset line " + std::to_string(line_no);
        const auto obj = json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) throw Error(ErrorCode::PreconditionViolation, where + ": not a JSON object");
        TestCase tc;
        try {
            tc.case_id = obj.at("case_id").is_string() ? obj.at("case_id").get<std::string>()
                                                       : obj.at("case_id").dump();
            tc.question = obj.at("question").get<std::string>();
            tc.ground_truth = obj.at("ground_truth").get<std::string>();
            if (obj.contains("topic") && obj["topic"].is_string()) tc.topic = obj["topic"].get<std::string>();
            if (obj.contains("reference_context") && obj["reference_context"].is_string()) {
                tc.reference_context = obj["reference_context"].get<std::string>();
            }
        } catch (const json::exception& e) {
            throw Error(ErrorCode::PreconditionViolation, where + ": " + e.what());
        }
        if (text::trim(tc.question).empty() || text::trim(tc.ground_truth).empty()) {
            throw Error(ErrorCode::PreconditionViolation, where + ": question and ground_truth must be non-empty");
        }
        if (text::trim(tc.topic).empty() ||
            (!taxonomy.empty() && std::find(taxonomy.begin(), taxonomy.end(), tc.topic) == taxonomy.end())) {
            tc.topic = std::string(kOtherTopic);
        }
        if (!seen.insert(tc.case_id).second) {
            throw Error(ErrorCode::PreconditionViolation, where + ": duplicate case_id " + tc.case_id);
        }
        cases.push_back(std::move(tc));
    }
    return cases;
}

std::vector<TestCase> load_testset(const std::filesystem::path& path, const std::vector<std::string>& taxonomy) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open test set " + path.string());
    return parse_testset(in, taxonomy);
}

}  // namespace coursepilot::eval
