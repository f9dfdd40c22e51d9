#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "coursepilot/http.hpp"

namespace coursepilot::embed {

struct EmbeddingVector {
    std::vector<double> values;
    std::string model_id;

    std::size_t dims() const noexcept { return values.size(); }

    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

enum class EmbedderKind { RemoteHttp, ReferenceHash };

struct EmbedderSpec {
    EmbedderKind provider_kind = EmbedderKind::ReferenceHash;
    std::optional<std::string> endpoint;
    std::string model_id = "reference-hash-v1";
    std::size_t dims = 1024;
    std::size_t max_context_tokens = 8192;
    std::size_t batch_size = 32;
    http::RetryPolicy retry;

    /// Throws InvalidConfig when an invariant is broken.
    void validate() const;
};

void to_json(nlohmann::json& j, const EmbedderSpec& spec);
void from_json(const nlohmann::json& j, EmbedderSpec& spec);

/// (a.b) / (|a| |b|), clamped to [-1, 1].
/// Throws DimsMismatch for unequal lengths and DegenerateVector for a zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

/// Seed of the reference embedder's token hash. Changing it changes every
/// frozen similarity value in the test suite.
inline constexpr std::uint64_t kReferenceSeed = 0x5EED'C0C5'E9A7'0001ULL;

/// Deterministic feature-hashing embedder used in place of a real model:
/// lower-cased alphanumeric tokens are hashed into `dims` signed buckets and
/// the result is L2-normalized. Throws PreconditionViolation on blank text.
EmbeddingVector reference_embed(std::string_view text, std::size_t dims, std::uint64_t seed = kReferenceSeed);

/// Backend returning raw (possibly unnormalized) vectors, one per input text.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) = 0;
};

class ReferenceHashProvider final : public EmbeddingProvider {
public:
    explicit ReferenceHashProvider(std::size_t dims) : dims_(dims) {}
    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override;

private:
    std::size_t dims_;
};

/// OpenAI-compatible POST {endpoint}/v1/embeddings.
class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HttpEmbeddingProvider(EmbedderSpec spec) : spec_(std::move(spec)) {}
    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override;

private:
    EmbedderSpec spec_;
};

std::unique_ptr<EmbeddingProvider> make_provider(const EmbedderSpec& spec);

/// Spec-checked, normalizing front end over a provider. Safe to share
/// between threads when the provider is.
class Embedder {
public:
    explicit Embedder(EmbedderSpec spec);
    Embedder(EmbedderSpec spec, std::shared_ptr<EmbeddingProvider> provider);

    /// One unit vector per text, order preserved. Texts over the context
    /// limit are truncated with a warning; batches hold spec.batch_size texts.
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) const;
    EmbeddingVector embed_one(const std::string& text) const;

    const EmbedderSpec& spec() const noexcept { return spec_; }

private:
    EmbedderSpec spec_;
    std::shared_ptr<EmbeddingProvider> provider_;
};

std::vector<EmbeddingVector> embed_texts(const EmbedderSpec& spec, const std::vector<std::string>& texts);

}  // namespace coursepilot::embed
