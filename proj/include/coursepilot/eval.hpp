#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coursepilot/chat.hpp"
#include "coursepilot/embed.hpp"

namespace coursepilot::eval {

inline constexpr std::string_view kOtherTopic = "Others";

struct TestCase {
    std::string case_id;
    std::string question;
    std::string ground_truth;
    std::string topic = std::string(kOtherTopic);
    std::optional<std::string> reference_context;
};

struct CaseRun {
    TestCase test_case;
    std::string answer;
    std::string retrieved_context;  // selected section bodies joined by blank lines
    std::vector<std::string> retrieved_section_ids;
};

struct FactualCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    friend bool operator==(const FactualCounts&, const FactualCounts&) = default;
};

struct RecallCounts {
    std::size_t attributable = 0;
    std::size_t total_sentences = 0;

    friend bool operator==(const RecallCounts&, const RecallCounts&) = default;
};

struct FaithCounts {
    std::size_t inferable = 0;
    std::size_t total_claims = 0;

    friend bool operator==(const FaithCounts&, const FaithCounts&) = default;
};

struct MetricConfig {
    double w_cos = 0.25;
    double w_f = 0.75;

    void validate() const;
};

struct CaseMetrics {
    double s_cos = 0.0;
    double factual_f = 0.0;
    double correctness = 0.0;
    double context_recall = 0.0;
    double faithfulness = 0.0;
    FactualCounts factual_counts;
    RecallCounts recall_counts;
    FaithCounts faith_counts;
};

/// Splits text into statements and decides whether a statement is supported
/// by a reference text. Implementations must be safe to call concurrently.
class Judge {
public:
    virtual ~Judge() = default;
    virtual std::vector<std::string> split_statements(std::string_view text) const = 0;
    virtual bool statement_supported(std::string_view statement, std::string_view reference) const = 0;
};

/// Sentence split on [.?!] with trimming; support is substring containment
/// after case folding and whitespace collapsing.
class DeterministicJudge final : public Judge {
public:
    std::vector<std::string> split_statements(std::string_view text) const override;
    bool statement_supported(std::string_view statement, std::string_view reference) const override;

    /// Case-folded, whitespace-collapsed form used for containment.
    static std::string normalize(std::string_view text);
};

std::unique_ptr<Judge> deterministic_judge();

/// Prompt templates for the LLM judge. Placeholders: {text}, {statement}, {reference}.
struct JudgePromptSet {
    std::string split_template =
        "Break the following text into a list of short, self-contained factual statements. "
        "Reply with JSON only, exactly in the form {\"statements\": [\"...\", \"...\"]}.\n\nText:\n{text}";
    std::string support_template =
        "Decide whether the statement can be inferred from the reference text alone. "
        "Reply with JSON only, exactly {\"supported\": true} or {\"supported\": false}.\n\n"
        "Reference:\n{reference}\n\nStatement:\n{statement}";
};

/// Judge backed by a chat generator that must answer in strict JSON. A
/// malformed reply is retried once, then JudgeParseError is thrown.
class LlmJudge final : public Judge {
public:
    LlmJudge(std::shared_ptr<chat::Generator> generator, JudgePromptSet prompts = {})
        : generator_(std::move(generator)), prompts_(std::move(prompts)) {}

    std::vector<std::string> split_statements(std::string_view text) const override;
    bool statement_supported(std::string_view statement, std::string_view reference) const override;

private:
    nlohmann::json query(const std::string& prompt, std::string_view key) const;

    std::shared_ptr<chat::Generator> generator_;
    JudgePromptSet prompts_;
};

std::unique_ptr<Judge> llm_judge(std::shared_ptr<chat::Generator> generator, JudgePromptSet prompts = {});

/// tp / (tp + 0.5 (fp + fn)); throws NoStatements when all counts are zero.
double factual_f_score(const FactualCounts& counts);

/// (w_cos * s_cos + w_f * f) / (w_cos + w_f)
double answer_correctness(double s_cos, double f, const MetricConfig& cfg = {});

/// Answer statements supported by the ground truth are TP, the rest FP;
/// ground-truth statements not supported by the answer are FN.
FactualCounts classify_statements(std::string_view answer, std::string_view ground_truth, const Judge& judge);

struct RecallResult {
    double value = 0.0;
    RecallCounts counts;
};

struct FaithResult {
    double value = 0.0;
    FaithCounts counts;
};

/// Fraction of ground-truth sentences supported by the retrieved context.
RecallResult context_recall(std::string_view ground_truth, std::string_view retrieved_context, const Judge& judge);

/// Fraction of answer claims supported by the retrieved context.
FaithResult faithfulness(std::string_view answer, std::string_view retrieved_context, const Judge& judge);

/// Removes "[SOURCE: ...]" and "[HISTORY: ...]" citation markers.
std::string strip_markers(std::string_view answer);

CaseMetrics evaluate_case(const CaseRun& run, const embed::Embedder& embedder, const Judge& judge,
                          const MetricConfig& cfg = {});

struct CaseRow {
    TestCase test_case;
    std::string answer;
    std::vector<std::string> retrieved_section_ids;
    CaseMetrics metrics;
};

struct ErrorRow {
    std::string case_id;
    std::string topic;
    std::string error;
};

struct MetricMeans {
    std::size_t n = 0;
    double s_cos = 0.0;
    double factual_f = 0.0;
    double correctness = 0.0;
    double context_recall = 0.0;
    double faithfulness = 0.0;
};

struct MetricReport {
    std::vector<CaseRow> per_case;  // sorted by case_id
    std::map<std::string, MetricMeans> per_topic;
    MetricMeans overall;
    std::vector<ErrorRow> errors;  // sorted by case_id
};

/// Sorts rows by case_id and folds the means in that order, so the result
/// does not depend on the order cases finished in.
MetricReport aggregate(std::vector<CaseRow> rows, std::vector<ErrorRow> errors);

using Answerer = std::function<CaseRun(const TestCase&)>;

/// Answers each case in a fresh session of `engine`.
Answerer engine_answerer(const chat::Engine& engine);

/// Answers and evaluates every case with up to `parallelism` workers. A case
/// that throws becomes an error row. Throws EmptyTestset for no cases.
MetricReport run_testset(const std::vector<TestCase>& cases, const Answerer& answer, const embed::Embedder& embedder,
                         const Judge& judge, const MetricConfig& cfg = {}, std::size_t parallelism = 4);

/// JSONL, one {case_id, question, ground_truth, topic, reference_context?} per
/// line. Topics outside a non-empty taxonomy become "Others".
std::vector<TestCase> parse_testset(std::istream& in, const std::vector<std::string>& taxonomy = {});
std::vector<TestCase> load_testset(const std::filesystem::path& path, const std::vector<std::string>& taxonomy = {});

}  // namespace coursepilot::eval
