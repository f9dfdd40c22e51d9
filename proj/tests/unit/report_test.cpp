#include <gtest/gtest.h>

#include <cmath>

#include "coursepilot/chat.hpp"
#include "coursepilot/error.hpp"
#include "coursepilot/eval.hpp"
#include "coursepilot/ingest.hpp"
#include "coursepilot/report.hpp"
#include "fixtures.hpp"

namespace coursepilot::report {
namespace {

using testing::data_dir;
using testing::read_file;

eval::CaseRow row(std::string id, std::string topic, double correctness, double recall = 1.0, double faith = 1.0) {
    eval::CaseRow r;
    r.test_case.case_id = std::move(id);
    r.test_case.topic = std::move(topic);
    r.metrics.correctness = correctness;
    r.metrics.context_recall = recall;
    r.metrics.faithfulness = faith;
    return r;
}

// Numbers compare with a tolerance, everything else exactly.
void expect_json_near(const nlohmann::json& a, const nlohmann::json& b, const std::string& path = "$") {
    if (a.is_number_float() || b.is_number_float()) {
        ASSERT_TRUE(a.is_number() && b.is_number()) << path;
        EXPECT_NEAR(a.get<double>(), b.get<double>(), 1e-12) << path;
        return;
    }
    ASSERT_EQ(a.type(), b.type()) << path;
    if (a.is_object()) {
        ASSERT_EQ(a.size(), b.size()) << path;
        for (const auto& [k, v] : a.items()) {
            ASSERT_TRUE(b.contains(k)) << path << "." << k;
            expect_json_near(v, b.at(k), path + "." + k);
        }
    } else if (a.is_array()) {
        ASSERT_EQ(a.size(), b.size()) << path;
        for (std::size_t i = 0; i < a.size(); ++i) expect_json_near(a[i], b[i], path + "[" + std::to_string(i) + "]");
    } else {
        EXPECT_EQ(a, b) << path;
    }
}

TEST(FormatPercentTest, OneDecimal) {
    EXPECT_EQ(format_percent(0.88), "88.0%");
    EXPECT_EQ(format_percent(0.782), "78.2%");
    EXPECT_EQ(format_percent(0.996), "99.6%");
    EXPECT_EQ(format_percent(0.666), "66.6%");
    EXPECT_EQ(format_percent(1.0), "100.0%");
    EXPECT_EQ(format_percent(0.0), "0.0%");
}

TEST(RenderTest, MeanOfNinetyAndEightySixShowsEightyEight) {
    const auto report = eval::aggregate({row("q1", "Wireless Security", 0.9), row("q2", "Wireless Security", 0.86)}, {});
    const auto csv = render_csv(report);
    EXPECT_EQ(csv,
              "case_id,topic,correctness,context_recall,faithfulness\n"
              "q1,Wireless Security,90.0%,100.0%,100.0%\n"
              "q2,Wireless Security,86.0%,100.0%,100.0%\n"
              "overall,,88.0%,100.0%,100.0%\n");
    const auto md = render_markdown(report);
    EXPECT_NE(md.find("| Correctness | 88.0% |"), std::string::npos);
    EXPECT_NE(md.find("| Wireless Security | 2 | 88.0% |"), std::string::npos);
}

TEST(RenderTest, CsvQuotesAwkwardFields) {
    const auto report = eval::aggregate({row("a,b", "Topic \"x\"", 0.5)}, {});
    EXPECT_NE(render_csv(report).find("\"a,b\",\"Topic \"\"x\"\"\",50.0%"), std::string::npos);
}

TEST(RenderTest, ErrorsListedAndEmptyOverallOmitted) {
    const auto report = eval::aggregate({}, {{"c9", "T", "judge failed"}});
    EXPECT_EQ(render_csv(report), "case_id,topic,correctness,context_recall,faithfulness\n");
    const auto md = render_markdown(report);
    EXPECT_NE(md.find("## Overall (0 cases)"), std::string::npos);
    EXPECT_NE(md.find("- c9: judge failed"), std::string::npos);
}

TEST(ReportJsonTest, RoundTrip) {
    auto r1 = row("q1", "A", 0.9, 0.5, 0.25);
    r1.metrics.factual_counts = {3, 1, 1};
    r1.metrics.recall_counts = {1, 2};
    r1.metrics.faith_counts = {1, 4};
    r1.test_case.reference_context = "ref";
    r1.retrieved_section_ids = {"s:1"};
    const auto report = eval::aggregate({r1, row("q2", "B", 0.1)}, {{"q3", "A", "boom"}});
    testing::TempDir dir;
    save_report(report, dir / "r.json");
    const auto back = load_report(dir / "r.json");
    EXPECT_EQ(to_json(back), to_json(report));
    EXPECT_EQ(back.per_case[0].metrics.factual_counts, (eval::FactualCounts{3, 1, 1}));
    EXPECT_EQ(back.errors.size(), 1u);
    EXPECT_FALSE(to_json(eval::aggregate({}, {}))["overall"].contains("correctness"));
}

TEST(ReportJsonTest, MalformedIsRejected) {
    try {
        from_json(nlohmann::json{{"per_case", 3}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::PreconditionViolation);
    }
}

// Three cases answered by the mock generator over data/course, scored with the
// deterministic judge. Retrieval, counts and cosines were checked by hand
// against a bag-of-words oracle before the file was frozen.
TEST(GoldenReportTest, EndToEndMatchesFrozenReport) {
    testing::TempDir dir;
    testing::write_course_fixture(dir.path());
    const auto ingested = ingest::ingest_directory(dir.path());
    const embed::Embedder embedder(embed::EmbedderSpec{});
    kb::BuildOptions options;
    options.created_at = 0;
    chat::Engine engine(std::make_shared<chat::MockEchoGenerator>(), chat::GeneratorSpec{}, kb::RetrievalConfig{});
    engine.swap_kb(std::make_shared<const kb::KnowledgeBase>(
        kb::build_kb(ingested.sections, embedder, kb::RetrievalConfig{}, options)));

    const auto cases = eval::load_testset(data_dir() / "testset3.jsonl");
    const auto report =
        eval::run_testset(cases, eval::engine_answerer(engine), embedder, eval::DeterministicJudge{}, {}, 3);
    const auto golden = nlohmann::json::parse(read_file(data_dir() / "golden_report3.json"));
    expect_json_near(to_json(report), golden);

    // t1: answer and ground truth share 9 of their count-vector dot product,
    // norms sqrt(17) and sqrt(15); tp=1, fp=1, fn=1.
    const double s1 = 9.0 / std::sqrt(255.0);
    EXPECT_NEAR(report.per_case[0].metrics.s_cos, s1, 1e-12);
    EXPECT_NEAR(report.per_case[0].metrics.correctness, 0.25 * s1 + 0.75 * 0.5, 1e-12);
    // t3: dot product 11, both squared norms 16.
    EXPECT_NEAR(report.per_case[2].metrics.s_cos, 0.6875, 1e-12);
    EXPECT_NEAR(report.overall.context_recall, (1.0 + 1.0 + 0.5) / 3.0, 1e-12);

    EXPECT_EQ(render_csv(report), read_file(data_dir() / "golden_report3.csv"));
    EXPECT_EQ(render_markdown(report), read_file(data_dir() / "golden_report3.md"));
}

}  // namespace
}  // namespace coursepilot::report
