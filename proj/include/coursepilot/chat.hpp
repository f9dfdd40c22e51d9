#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "coursepilot/embed.hpp"
#include "coursepilot/http.hpp"
#include "coursepilot/kb.hpp"

namespace coursepilot::chat {

using ingest::Section;

inline constexpr std::string_view kFallbackAnswer = "No course material matched this question.";

inline constexpr std::string_view kSystemPreamble =
    "You are a teaching assistant for this course. Answer the student's question using only the course "
    "material in the SOURCE blocks below, and cite each source you use with its [SOURCE: ...] marker. "
    "If the material does not contain the answer, say that it does not.";

enum class GeneratorKind { RemoteHttp, MockEcho };

struct GeneratorSpec {
    GeneratorKind provider_kind = GeneratorKind::MockEcho;
    std::optional<std::string> endpoint;
    std::string model_id = "mock-echo";
    std::size_t max_context_tokens = 32768;
    double temperature = 0.2;
    std::size_t max_answer_tokens = 1024;
    http::RetryPolicy retry;

    void validate() const;
    std::size_t prompt_budget() const noexcept { return max_context_tokens - max_answer_tokens; }
};

void to_json(nlohmann::json& j, const GeneratorSpec& spec);
void from_json(const nlohmann::json& j, GeneratorSpec& spec);

enum class Role { User, Assistant };

std::string_view to_string(Role role) noexcept;

struct Turn {
    Role role = Role::User;
    std::string text;
    std::vector<std::string> retrieved_section_ids;  // assistant turns only
    std::int64_t created_at = 0;                     // unix milliseconds
};

struct ChatSession {
    std::string session_id;
    std::string kb_id;
    std::vector<Turn> turns;
};

void to_json(nlohmann::json& j, const Turn& turn);
void to_json(nlohmann::json& j, const ChatSession& session);

struct ContextBlock {
    std::string section_id;
    std::string source_label;  // header path joined with " > "
    std::string body;
};

/// "[SOURCE: <label>]\n<body>"
std::string render_block(const ContextBlock& block);
std::string source_marker(std::string_view label);

struct PromptBundle {
    std::string system_preamble;
    std::vector<ContextBlock> context_blocks;  // rank order
    std::vector<Turn> history_window;          // oldest first
    std::string user_question;
    std::size_t approx_token_count = 0;
    std::size_t token_budget = 0;
    std::vector<std::string> dropped_section_ids;
    std::size_t dropped_history_turns = 0;
};

/// Builds the prompt for `question`: preamble, retrieved sections in rank
/// order, the last `history_k` turns and the question. Over budget, the
/// lowest-ranked context goes first, then the oldest history. Throws
/// QuestionTooLong when preamble plus question alone exceed the budget.
PromptBundle assemble_prompt(const ChatSession& session, const std::string& question,
                             const std::vector<Section>& retrieved, const GeneratorSpec& gen,
                             std::size_t history_k = 4);

struct ChatMessage {
    std::string role;
    std::string content;
};

/// System message (preamble + sources), history turns, then the question.
std::vector<ChatMessage> to_messages(const PromptBundle& bundle);

class Generator {
public:
    virtual ~Generator() = default;
    virtual std::string generate(const PromptBundle& bundle) = 0;
    /// Free-form completion, used by the LLM judge.
    virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

/// Deterministic stand-in: the first sentence of every context block, each
/// tagged with its source marker, preceded by a [HISTORY: ...] marker naming
/// the previous question when the prompt carries history.
class MockEchoGenerator final : public Generator {
public:
    std::string generate(const PromptBundle& bundle) override;
    std::string complete(const std::vector<ChatMessage>& messages) override;
};

/// OpenAI-compatible POST {endpoint}/v1/chat/completions.
class HttpGenerator final : public Generator {
public:
    explicit HttpGenerator(GeneratorSpec spec) : spec_(std::move(spec)) {}
    std::string generate(const PromptBundle& bundle) override;
    std::string complete(const std::vector<ChatMessage>& messages) override;

private:
    GeneratorSpec spec_;
};

std::unique_ptr<Generator> make_generator(const GeneratorSpec& spec);

/// First sentence (through its terminator) of whitespace-collapsed text.
std::string first_sentence(std::string_view text);

/// Calls the generator, or returns kFallbackAnswer when the bundle has no
/// context. Throws EmptyAnswer on a blank completion.
std::string generate_answer(Generator& generator, const PromptBundle& bundle);

struct AskResult {
    Turn turn;  // the assistant turn that was appended
    kb::Retrieval retrieval;
    PromptBundle bundle;
};

/// retrieve -> assemble_prompt -> generate_answer, then appends the user and
/// assistant turns together. On any error the session is left untouched.
AskResult ask(ChatSession& session, const std::string& question, const kb::KnowledgeBase& kb,
              const kb::RetrievalConfig& cfg, const embed::Embedder& embedder, Generator& generator,
              const GeneratorSpec& gen, std::size_t history_k = 4);

using ProviderFactory = std::function<std::shared_ptr<embed::EmbeddingProvider>(const embed::EmbedderSpec&)>;

/// Long-lived question answering handle. The knowledge base can be swapped
/// while asks are running; each ask sees one complete snapshot.
class Engine {
public:
    Engine(std::shared_ptr<Generator> generator, GeneratorSpec gen, kb::RetrievalConfig retrieval,
           std::size_t history_k = 4, ProviderFactory providers = {});

    void swap_kb(std::shared_ptr<const kb::KnowledgeBase> kb);
    std::shared_ptr<const kb::KnowledgeBase> kb() const;

    /// Throws EmptyKB when no knowledge base is loaded.
    AskResult ask(ChatSession& session, const std::string& question) const;

    /// One-shot ask in a fresh session.
    AskResult ask_fresh(const std::string& question) const;

    const GeneratorSpec& generator_spec() const noexcept { return gen_; }
    const kb::RetrievalConfig& retrieval_config() const noexcept { return retrieval_; }
    Generator& generator() const noexcept { return *generator_; }

private:
    struct Snapshot {
        std::shared_ptr<const kb::KnowledgeBase> kb;
        std::shared_ptr<const embed::Embedder> embedder;
    };
    std::shared_ptr<const Snapshot> snapshot() const;

    std::shared_ptr<Generator> generator_;
    GeneratorSpec gen_;
    kb::RetrievalConfig retrieval_;
    std::size_t history_k_;
    ProviderFactory providers_;
    mutable std::mutex mu_;
    std::shared_ptr<const Snapshot> current_;
};

/// In-memory sessions. Operations on one session are serialized; different
/// sessions proceed in parallel.
class SessionRegistry {
public:
    std::string create(std::string kb_id);

    /// Runs fn(ChatSession&) under that session's lock. Throws NotFound.
    template <typename Fn>
    auto with_session(const std::string& id, Fn&& fn) {
        auto entry = find(id);
        std::lock_guard lock(entry->mu);
        return fn(entry->session);
    }

    std::optional<ChatSession> snapshot(const std::string& id) const;
    std::vector<ChatSession> all() const;
    std::size_t size() const;

private:
    struct Entry {
        std::mutex mu;
        ChatSession session;
    };
    std::shared_ptr<Entry> find(const std::string& id) const;

    mutable std::mutex mu_;
    std::unordered_map<std::string, std::shared_ptr<Entry>> sessions_;
};

std::int64_t now_millis();

}  // namespace coursepilot::chat
