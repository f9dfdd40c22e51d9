#include <gtest/gtest.h>

#include <condition_variable>
#include <future>

#include <httplib.h>

#include "coursepilot/error.hpp"
#include "coursepilot/service.hpp"
#include "fixtures.hpp"

namespace coursepilot::service {
namespace {

using nlohmann::json;
using testing::TempDir;

class ServiceTest : public ::testing::Test {
protected:
    void SetUp() override {
        course_ = dir_ / "course";
        testing::write_course_fixture(course_);
        cfg_.kb_path = dir_ / "course.kb";
        cfg_.feedback_path = dir_ / "feedback.jsonl";
        cfg_.worker_threads = 8;
    }

    void start(std::shared_ptr<chat::Generator> generator = nullptr, chat::ProviderFactory providers = {}) {
        service_ = std::make_unique<Service>(cfg_, std::move(generator), std::move(providers));
        port_ = service_->start("127.0.0.1", 0);
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
        client_->set_read_timeout(30, 0);
    }

    httplib::Result post(const std::string& path, const json& body, const httplib::Headers& headers = {}) {
        return client_->Post(path, headers, body.dump(), "application/json");
    }

    json post_ok(const std::string& path, const json& body) {
        auto res = post(path, body);
        EXPECT_TRUE(res);
        if (!res) return {};
        EXPECT_EQ(res->status, 200) << res->body;
        return json::parse(res->body);
    }

    json get_ok(const std::string& path) {
        auto res = client_->Get(path);
        EXPECT_TRUE(res);
        if (!res) return {};
        EXPECT_EQ(res->status, 200) << res->body;
        return json::parse(res->body);
    }

    void ingest() { post_ok("/v1/ingest", {{"input_dir", course_.string()}}); }

    TempDir dir_;
    std::filesystem::path course_;
    EngineConfig cfg_;
    std::unique_ptr<Service> service_;
    std::unique_ptr<httplib::Client> client_;
    int port_ = 0;
};

TEST_F(ServiceTest, HealthBeforeIngestIsNoKb) {
    start();
    EXPECT_EQ(get_ok("/v1/health"), (json{{"status", "no_kb"}}));
}

TEST_F(ServiceTest, IngestThenHealth) {
    start();
    const auto r = post_ok("/v1/ingest", {{"input_dir", course_.string()}});
    EXPECT_EQ(r["section_count"], 6);
    EXPECT_EQ(r["document_count"], 2);
    const auto health = get_ok("/v1/health");
    EXPECT_EQ(health["status"], "ok");
    EXPECT_EQ(health["kb_id"], r["kb_id"]);
    EXPECT_EQ(health["section_count"], 6);
    EXPECT_TRUE(std::filesystem::exists(cfg_.kb_path));
}

TEST_F(ServiceTest, ExistingKbIsLoadedAtStartup) {
    start();
    ingest();
    service_.reset();
    start();
    EXPECT_EQ(get_ok("/v1/health")["status"], "ok");
}

TEST_F(ServiceTest, SessionMessageReturnsSources) {
    start();
    ingest();
    const auto id = post_ok("/v1/sessions", json::object())["session_id"].get<std::string>();
    const auto turn = post_ok("/v1/sessions/" + id + "/messages", {{"text", "What is covered in week 1?"}});
    EXPECT_EQ(turn["role"], "assistant");
    EXPECT_EQ(turn["session_id"], id);
    EXPECT_EQ(turn["turn_index"], 1);
    ASSERT_TRUE(turn["sources"].is_array());
    ASSERT_FALSE(turn["sources"].empty());
    const auto& first = turn["sources"][0];
    EXPECT_TRUE(first.contains("section_id"));
    EXPECT_TRUE(first["header_path"].is_array());
    EXPECT_TRUE(first["similarity"].is_number());
    EXPECT_EQ(first["rank"], 1);
    std::vector<std::string> source_ids;
    for (const auto& s : turn["sources"]) source_ids.push_back(s["section_id"]);
    EXPECT_EQ(turn["retrieved_section_ids"].get<std::vector<std::string>>(), source_ids);

    const auto session = get_ok("/v1/sessions/" + id);
    EXPECT_EQ(session["turns"].size(), 2u);
    EXPECT_EQ(session["turns"][0]["text"], "What is covered in week 1?");

    const auto section = get_ok("/v1/kb/sections/" + source_ids[0]);
    EXPECT_EQ(section["section_id"], source_ids[0]);
    EXPECT_FALSE(section["body"].get<std::string>().empty());
}

TEST_F(ServiceTest, UnknownIdsAre404) {
    start();
    ingest();
    auto res = post("/v1/sessions/nope/messages", {{"text", "hi"}});
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
    EXPECT_EQ(json::parse(res->body)["error"]["code"], "NotFound");
    EXPECT_EQ(client_->Get("/v1/sessions/nope")->status, 404);
    EXPECT_EQ(client_->Get("/v1/kb/sections/nope.md:9")->status, 404);
}

TEST_F(ServiceTest, MalformedBodiesAre400) {
    start();
    ingest();
    const auto id = post_ok("/v1/sessions", json::object())["session_id"].get<std::string>();
    auto res = client_->Post("/v1/sessions/" + id + "/messages", "{not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(post("/v1/sessions/" + id + "/messages", {{"text", ""}})->status, 400);
    EXPECT_EQ(post("/v1/ingest", {{"input_dir", (dir_ / "missing").string()}})->status, 400);
    EXPECT_EQ(post("/v1/feedback", {{"session_id", id}, {"question_category", "helpfulness"}, {"rating", 6}})->status,
              400);
    EXPECT_EQ(post("/v1/feedback", {{"session_id", id}, {"question_category", "mood"}, {"rating", 3}})->status, 400);
}

TEST_F(ServiceTest, MessageWithoutKbIs503) {
    start();
    const auto id = post_ok("/v1/sessions", json::object())["session_id"].get<std::string>();
    EXPECT_EQ(post("/v1/sessions/" + id + "/messages", {{"text", "hi"}})->status, 503);
}

TEST_F(ServiceTest, ProviderOutageIs503AndSessionUnchanged) {
    start(std::make_shared<testing::FailingGenerator>());
    ingest();
    const auto id = post_ok("/v1/sessions", json::object())["session_id"].get<std::string>();
    auto res = post("/v1/sessions/" + id + "/messages", {{"text", "Schedule"}});
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 503);
    EXPECT_EQ(json::parse(res->body)["error"]["code"], "RetriableProviderError");
    EXPECT_TRUE(get_ok("/v1/sessions/" + id)["turns"].empty());
}

TEST_F(ServiceTest, AuthTokenGuardsPosts) {
    cfg_.auth_token = "s3cret";
    start();
    EXPECT_EQ(post("/v1/sessions", json::object())->status, 401);
    EXPECT_EQ(post("/v1/sessions", json::object(), {{"Authorization", "Bearer wrong"}})->status, 401);
    EXPECT_EQ(post("/v1/sessions", json::object(), {{"Authorization", "Bearer s3cret"}})->status, 200);
    EXPECT_EQ(client_->Get("/v1/health")->status, 200);
}

TEST_F(ServiceTest, FeedbackSummary) {
    start();
    for (int r : {5, 5, 4, 5, 4, 5}) {
        post_ok("/v1/feedback", {{"session_id", "s"}, {"question_category", "helpfulness"}, {"rating", r}});
    }
    post_ok("/v1/feedback", {{"session_id", "s"}, {"question_category", "accuracy"}, {"rating", 3}, {"comment", "ok"}});
    const auto summary = get_ok("/v1/feedback/summary");
    EXPECT_EQ(summary["helpfulness"]["counts"], (json{{"4", 2}, {"5", 4}}));
    EXPECT_EQ(summary["helpfulness"]["total"], 6);
    EXPECT_NEAR(summary["helpfulness"]["mean"].get<double>(), 4.666667, 1e-6);
    EXPECT_EQ(summary["accuracy"]["mean"], 3.0);
    EXPECT_FALSE(summary["performance"].contains("mean"));
    EXPECT_EQ(summary["performance"]["total"], 0);

    // The log survives a restart.
    service_.reset();
    start();
    EXPECT_EQ(get_ok("/v1/feedback/summary")["helpfulness"]["total"], 6);
}

TEST_F(ServiceTest, EvalEndpointMatchesGoldenReport) {
    start();
    ingest();
    const auto report = post_ok("/v1/eval", {{"testset_path", (testing::data_dir() / "testset3.jsonl").string()}});
    const auto golden = json::parse(testing::read_file(testing::data_dir() / "golden_report3.json"));
    ASSERT_EQ(report["per_case"].size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(report["per_case"][i]["case_id"], golden["per_case"][i]["case_id"]);
        EXPECT_NEAR(report["per_case"][i]["correctness"].get<double>(),
                    golden["per_case"][i]["correctness"].get<double>(), 1e-12);
    }
    EXPECT_NEAR(report["overall"]["correctness"].get<double>(), golden["overall"]["correctness"].get<double>(), 1e-12);
    EXPECT_EQ(post("/v1/eval", {{"testset_path", "/nonexistent.jsonl"}})->status, 400);
    EXPECT_EQ(post("/v1/eval", {{"testset_path", (testing::data_dir() / "testset3.jsonl").string()}, {"judge", "x"}})
                  ->status,
              400);
}

// Blocks inside embed_batch until released, so an ingest can be held open.
class GateProvider final : public embed::EmbeddingProvider {
public:
    explicit GateProvider(std::shared_future<void> gate) : inner_(1024), gate_(std::move(gate)) {}
    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override {
        gate_.wait();
        return inner_.embed_batch(texts);
    }

private:
    embed::ReferenceHashProvider inner_;
    std::shared_future<void> gate_;
};

TEST_F(ServiceTest, ConcurrentIngestIs409) {
    std::promise<void> release;
    std::shared_future<void> gate = release.get_future().share();
    std::atomic<int> provider_calls{0};
    start(nullptr, [&](const embed::EmbedderSpec&) -> std::shared_ptr<embed::EmbeddingProvider> {
        ++provider_calls;
        return std::make_shared<GateProvider>(gate);
    });
    auto first = std::async(std::launch::async, [&] {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(30, 0);
        return c.Post("/v1/ingest", json{{"input_dir", course_.string()}}.dump(), "application/json");
    });
    while (provider_calls.load() == 0) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    auto second = post("/v1/ingest", {{"input_dir", course_.string()}});
    ASSERT_TRUE(second);
    EXPECT_EQ(second->status, 409);
    release.set_value();
    auto done = first.get();
    ASSERT_TRUE(done);
    EXPECT_EQ(done->status, 200);
    EXPECT_EQ(post("/v1/ingest", {{"input_dir", course_.string()}})->status, 200);
}

TEST_F(ServiceTest, SessionsSnapshotWrittenOnStop) {
    cfg_.sessions_snapshot_path = dir_ / "sessions.jsonl";
    start();
    ingest();
    const auto id = post_ok("/v1/sessions", json::object())["session_id"].get<std::string>();
    post_ok("/v1/sessions/" + id + "/messages", {{"text", "Schedule"}});
    service_->stop();
    const auto snapshot = json::parse(testing::read_file(*cfg_.sessions_snapshot_path));
    EXPECT_EQ(snapshot["session_id"], id);
    EXPECT_EQ(snapshot["turns"].size(), 2u);
}

TEST_F(ServiceTest, CorsPreflight) {
    start();
    auto res = client_->Options("/v1/sessions");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 204);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST_F(ServiceTest, SecondInstanceCannotShareThePort) {
    start();
    Service other(cfg_);
    try {
        other.start("127.0.0.1", port_);
        FAIL() << "second bind succeeded";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Io);
    }
}

TEST(FeedbackSummaryTest, CountsAndMean) {
    std::vector<FeedbackEntry> entries;
    for (int r : {5, 5, 5, 5, 4, 4}) entries.push_back({"s", FeedbackCategory::Helpfulness, r});
    const auto summary = feedback_summary(entries);
    const auto& h = summary.at(FeedbackCategory::Helpfulness);
    EXPECT_EQ(h.counts, (std::map<int, std::size_t>{{4, 2}, {5, 4}}));
    ASSERT_TRUE(h.mean.has_value());
    EXPECT_NEAR(*h.mean, 28.0 / 6.0, 1e-15);
    EXPECT_FALSE(summary.at(FeedbackCategory::Accuracy).mean.has_value());
    EXPECT_TRUE(feedback_summary({}).at(FeedbackCategory::Performance).counts.empty());
}

TEST(FeedbackEntryTest, RatingBounds) {
    for (int r = 1; r <= 5; ++r) {
        EXPECT_EQ(feedback_from_json({{"session_id", "s"}, {"question_category", "accuracy"}, {"rating", r}}).rating, r);
    }
    for (const json& bad : {json(0), json(6), json(4.5), json("5")}) {
        try {
            feedback_from_json({{"session_id", "s"}, {"question_category", "accuracy"}, {"rating", bad}});
            ADD_FAILURE() << bad;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::PreconditionViolation);
        }
    }
}

}  // namespace
}  // namespace coursepilot::service
