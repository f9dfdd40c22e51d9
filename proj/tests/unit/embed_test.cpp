#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "coursepilot/embed.hpp"
#include "coursepilot/error.hpp"
#include "fixtures.hpp"

namespace coursepilot::embed {
namespace {

using testing::MockHttpServer;

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no coursepilot::Error thrown";
    return ErrorCode::Io;
}

TEST(CosineTest, Examples) {
    const std::vector<double> v{0.3, -1.2, 4.0};
    EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-12);
    EXPECT_EQ(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
    // 0.70710678 to eight places; the exact value is 1/sqrt(2).
    EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 1}, std::vector<double>{1, 0}), 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(CosineTest, Errors) {
    EXPECT_EQ(code_of([] { cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}); }),
              ErrorCode::DegenerateVector);
    EXPECT_EQ(code_of([] { cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}); }),
              ErrorCode::DimsMismatch);
}

TEST(CosineTest, RandomPairsStayInRangeAndAreSymmetric) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> gauss;
    std::uniform_int_distribution<std::size_t> dims(1, 32);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = dims(rng);
        std::vector<double> a(n), b(n);
        for (auto& x : a) x = gauss(rng);
        for (auto& x : b) x = gauss(rng);
        const double ab = cosine_similarity(a, b);
        EXPECT_GE(ab, -1.0);
        EXPECT_LE(ab, 1.0);
        EXPECT_NEAR(ab, cosine_similarity(b, a), 1e-12);
    }
}

TEST(ReferenceEmbedTest, DeterministicUnitVectors) {
    const auto a = reference_embed("x", 64);
    const auto b = reference_embed("x", 64);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.dims(), 64u);
    double norm = 0;
    for (double x : a.values) norm += x * x;
    EXPECT_NEAR(norm, 1.0, 1e-12);
    EXPECT_NEAR(cosine_similarity(reference_embed("alpha beta", 1024), reference_embed("alpha beta", 1024)), 1.0,
                1e-12);
}

TEST(ReferenceEmbedTest, BlankTextIsPrecondition) {
    EXPECT_EQ(code_of([] { reference_embed("", 64); }), ErrorCode::PreconditionViolation);
    EXPECT_EQ(code_of([] { reference_embed("  \n", 64); }), ErrorCode::PreconditionViolation);
}

TEST(ReferenceEmbedTest, CaseAndPunctuationInsensitive) {
    EXPECT_EQ(reference_embed("Alpha, BETA!", 256).values, reference_embed("alpha beta", 256).values);
}

TEST(ReferenceEmbedTest, PunctuationOnlyTextStillEmbeds) {
    const auto v = reference_embed("?!", 64);
    double norm = 0;
    for (double x : v.values) norm += x * x;
    EXPECT_NEAR(norm, 1.0, 1e-12);
}

// Without bucket collisions the reference embedder reproduces the cosine of
// token count vectors: shared tokens give exactly the bag-of-words value.
TEST(ReferenceEmbedTest, MatchesBagOfWordsCosine) {
    EXPECT_NEAR(cosine_similarity(reference_embed("alpha beta", 1024), reference_embed("alpha gamma", 1024)), 0.5,
                1e-12);
    EXPECT_NEAR(cosine_similarity(reference_embed("alpha beta", 1024), reference_embed("delta epsilon", 1024)), 0.0,
                1e-12);
    EXPECT_GT(cosine_similarity(reference_embed("wireless security", 1024),
                                reference_embed("security of wireless networks", 1024)),
              0.0);
}

TEST(EmbedderTest, IdenticalTextsGiveIdenticalVectors) {
    const auto out = embed_texts(EmbedderSpec{}, {"abc", "abc"});
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0], out[1]);
    EXPECT_EQ(out[0].model_id, "reference-hash-v1");
    EXPECT_EQ(out[0].dims(), 1024u);
}

TEST(EmbedderTest, EmptyTextIsPrecondition) {
    EXPECT_EQ(code_of([] { embed_texts(EmbedderSpec{}, {""}); }), ErrorCode::PreconditionViolation);
}

TEST(EmbedderTest, NormalizesProviderOutput) {
    EmbedderSpec spec;
    spec.dims = 2;
    Embedder embedder(spec, std::make_shared<testing::FixedEmbeddingProvider>(std::vector<double>{3, 4}));
    const auto v = embedder.embed_one("anything");
    EXPECT_NEAR(v.values[0], 0.6, 1e-15);
    EXPECT_NEAR(v.values[1], 0.8, 1e-15);
}

TEST(EmbedderTest, ZeroAndWrongDimsFromProviderAreContractErrors) {
    EmbedderSpec spec;
    spec.dims = 2;
    Embedder zero(spec, std::make_shared<testing::FixedEmbeddingProvider>(std::vector<double>{0, 0}));
    EXPECT_EQ(code_of([&] { zero.embed_one("x"); }), ErrorCode::ProviderContractError);
    Embedder wrong(spec, std::make_shared<testing::FixedEmbeddingProvider>(std::vector<double>{1, 0, 0}));
    EXPECT_EQ(code_of([&] { wrong.embed_one("x"); }), ErrorCode::ProviderContractError);
}

TEST(EmbedderTest, BatchesAreOrderPreserving) {
    EmbedderSpec spec;
    spec.dims = 64;
    spec.batch_size = 3;
    std::vector<std::string> texts;
    for (int i = 0; i < 10; ++i) texts.push_back("token" + std::to_string(i));
    const auto out = Embedder(spec).embed(texts);
    ASSERT_EQ(out.size(), texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) EXPECT_EQ(out[i].values, reference_embed(texts[i], 64).values);
}

TEST(EmbedderTest, OverlongTextIsTruncated) {
    EmbedderSpec spec;
    spec.dims = 64;
    spec.max_context_tokens = 2;  // 8 code points
    Embedder embedder(spec);
    EXPECT_EQ(embedder.embed_one("abcdefgh and more words").values, reference_embed("abcdefgh", 64).values);
}

TEST(EmbedderSpecTest, ValidateAndJsonRoundTrip) {
    EmbedderSpec spec;
    spec.dims = 0;
    EXPECT_EQ(code_of([&] { spec.validate(); }), ErrorCode::InvalidConfig);
    EmbedderSpec remote;
    remote.provider_kind = EmbedderKind::RemoteHttp;
    EXPECT_EQ(code_of([&] { remote.validate(); }), ErrorCode::InvalidConfig);  // no endpoint
    remote.endpoint = "http://localhost:1";
    remote.model_id = "nomic-embed-text";
    remote.dims = 768;
    remote.validate();
    nlohmann::json j = remote;
    const auto back = j.get<EmbedderSpec>();
    EXPECT_EQ(back.provider_kind, EmbedderKind::RemoteHttp);
    EXPECT_EQ(back.endpoint, remote.endpoint);
    EXPECT_EQ(back.model_id, "nomic-embed-text");
    EXPECT_EQ(back.dims, 768u);
}

EmbedderSpec remote_spec(const std::string& url, std::size_t dims) {
    EmbedderSpec spec;
    spec.provider_kind = EmbedderKind::RemoteHttp;
    spec.endpoint = url;
    spec.model_id = "m";
    spec.dims = dims;
    spec.retry.base_delay = std::chrono::milliseconds(1);
    spec.retry.timeout = std::chrono::milliseconds(300);
    return spec;
}

nlohmann::json embeddings_reply(std::size_t count, std::size_t dims) {
    nlohmann::json data = nlohmann::json::array();
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<double> v(dims, 0.0);
        v[i % dims] = 2.0;
        data.push_back({{"index", i}, {"embedding", v}});
    }
    return {{"data", data}};
}

TEST(HttpEmbeddingTest, ParsesOpenAiShape) {
    nlohmann::json seen;
    MockHttpServer server([&](httplib::Server& s) {
        s.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
            seen = nlohmann::json::parse(req.body);
            res.set_content(embeddings_reply(seen["input"].size(), 4).dump(), "application/json");
        });
    });
    Embedder embedder(remote_spec(server.url(), 4));
    const auto out = embedder.embed({"a", "b"});
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].values, (std::vector<double>{1, 0, 0, 0}));
    EXPECT_EQ(out[1].values, (std::vector<double>{0, 1, 0, 0}));
    EXPECT_EQ(seen["model"], "m");
    EXPECT_EQ(seen["input"], nlohmann::json::array({"a", "b"}));
}

TEST(HttpEmbeddingTest, DimsMismatchIsContractError) {
    MockHttpServer server([](httplib::Server& s) {
        s.Post("/v1/embeddings", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(embeddings_reply(1, 1023).dump(), "application/json");
        });
    });
    Embedder embedder(remote_spec(server.url(), 1024));
    EXPECT_EQ(code_of([&] { embedder.embed_one("x"); }), ErrorCode::ProviderContractError);
}

TEST(HttpEmbeddingTest, UnreachableIsRetriable) {
    // Grab a free port, then close it so nothing is listening.
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    Embedder embedder(remote_spec("http://127.0.0.1:" + std::to_string(port), 4));
    EXPECT_EQ(code_of([&] { embedder.embed_one("x"); }), ErrorCode::RetriableProviderError);
}

TEST(HttpEmbeddingTest, ServerErrorsAreRetriedThenSucceed) {
    std::atomic<int> calls{0};
    MockHttpServer server([&](httplib::Server& s) {
        s.Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
            if (++calls < 3) {
                res.status = 503;
                return;
            }
            res.set_content(embeddings_reply(1, 4).dump(), "application/json");
        });
    });
    Embedder embedder(remote_spec(server.url(), 4));
    EXPECT_EQ(embedder.embed_one("x").values, (std::vector<double>{1, 0, 0, 0}));
    EXPECT_EQ(calls.load(), 3);
}

TEST(HttpEmbeddingTest, ClientErrorIsNotRetried) {
    std::atomic<int> calls{0};
    MockHttpServer server([&](httplib::Server& s) {
        s.Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
            ++calls;
            res.status = 400;
        });
    });
    Embedder embedder(remote_spec(server.url(), 4));
    EXPECT_EQ(code_of([&] { embedder.embed_one("x"); }), ErrorCode::ProviderContractError);
    EXPECT_EQ(calls.load(), 1);
}

}  // namespace
}  // namespace coursepilot::embed
