#include "coursepilot/chat.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>

#include "coursepilot/error.hpp"
#include "coursepilot/text.hpp"

namespace coursepilot::chat {

using nlohmann::json;

void GeneratorSpec::validate() const {
    if (provider_kind == GeneratorKind::RemoteHttp && (!endpoint || endpoint->empty())) {
        throw Error(ErrorCode::InvalidConfig, "remote_http generator requires an endpoint");
    }
    if (max_context_tokens == 0 || max_answer_tokens == 0) {
        throw Error(ErrorCode::InvalidConfig, "generator token limits must be positive");
    }
    if (max_answer_tokens >= max_context_tokens) {
        throw Error(ErrorCode::InvalidConfig, "max_answer_tokens leaves no room for the prompt");
    }
    if (!(temperature >= 0.0)) throw Error(ErrorCode::InvalidConfig, "temperature must be >= 0");
}

void to_json(json& j, const GeneratorSpec& spec) {
    j = json{{"provider_kind", spec.provider_kind == GeneratorKind::RemoteHttp ? "remote_http" : "mock_echo"},
             {"model_id", spec.model_id},
             {"max_context_tokens", spec.max_context_tokens},
             {"temperature", spec.temperature},
             {"max_answer_tokens", spec.max_answer_tokens}};
    if (spec.endpoint) j["endpoint"] = *spec.endpoint;
}

void from_json(const json& j, GeneratorSpec& spec) {
    const auto kind = j.value("provider_kind", std::string("mock_echo"));
    if (kind == "remote_http") {
        spec.provider_kind = GeneratorKind::RemoteHttp;
    } else if (kind == "mock_echo") {
        spec.provider_kind = GeneratorKind::MockEcho;
    } else {
        throw Error(ErrorCode::InvalidConfig, "unknown generator provider_kind: " + kind);
    }
    if (j.contains("endpoint") && !j["endpoint"].is_null()) spec.endpoint = j["endpoint"].get<std::string>();
    spec.model_id = j.value("model_id", spec.model_id);
    spec.max_context_tokens = j.value("max_context_tokens", spec.max_context_tokens);
    spec.temperature = j.value("temperature", spec.temperature);
    spec.max_answer_tokens = j.value("max_answer_tokens", spec.max_answer_tokens);
    if (j.contains("retries")) spec.retry.max_retries = j["retries"].get<int>();
    if (j.contains("timeout_ms")) spec.retry.timeout = std::chrono::milliseconds(j["timeout_ms"].get<long>());
}

std::string_view to_string(Role role) noexcept { return role == Role::User ? "user" : "assistant"; }

void to_json(json& j, const Turn& turn) {
    j = json{{"role", to_string(turn.role)}, {"text", turn.text}, {"created_at", turn.created_at}};
    if (turn.role == Role::Assistant) j["retrieved_section_ids"] = turn.retrieved_section_ids;
}

void to_json(json& j, const ChatSession& session) {
    j = json{{"session_id", session.session_id}, {"kb_id", session.kb_id}, {"turns", session.turns}};
}

std::string source_marker(std::string_view label) { return "[SOURCE: " + std::string(label) + "]"; }

std::string render_block(const ContextBlock& block) { return source_marker(block.source_label) + "\n" + block.body; }

namespace {

std::size_t turn_tokens(const Turn& t) {
    return text::approx_tokens(std::string(to_string(t.role)) + ": " + t.text);
}

std::size_t bundle_tokens(const PromptBundle& b) {
    auto total = text::approx_tokens(b.system_preamble) + text::approx_tokens(b.user_question);
    for (const auto& block : b.context_blocks) total += text::approx_tokens(render_block(block));
    for (const auto& t : b.history_window) total += turn_tokens(t);
    return total;
}

}  // namespace

PromptBundle assemble_prompt(const ChatSession& session, const std::string& question,
                             const std::vector<Section>& retrieved, const GeneratorSpec& gen, std::size_t history_k) {
    gen.validate();
    if (text::trim(question).empty()) throw Error(ErrorCode::PreconditionViolation, "empty question");

    PromptBundle b;
    b.system_preamble = std::string(kSystemPreamble);
    b.user_question = question;
    b.token_budget = gen.prompt_budget();
    if (bundle_tokens(b) > b.token_budget) {
        throw Error(ErrorCode::QuestionTooLong, "question needs ~" + std::to_string(bundle_tokens(b)) +
                                                    " tokens, budget is " + std::to_string(b.token_budget));
    }

    for (const auto& s : retrieved) b.context_blocks.push_back({s.id, ingest::header_label(s), s.body});
    const auto keep = std::min(history_k, session.turns.size());
    b.history_window.assign(session.turns.end() - static_cast<std::ptrdiff_t>(keep), session.turns.end());

    auto total = bundle_tokens(b);
    while (total > b.token_budget && !b.context_blocks.empty()) {
        total -= text::approx_tokens(render_block(b.context_blocks.back()));
        b.dropped_section_ids.insert(b.dropped_section_ids.begin(), b.context_blocks.back().section_id);
        b.context_blocks.pop_back();
    }
    while (total > b.token_budget && !b.history_window.empty()) {
        total -= turn_tokens(b.history_window.front());
        b.history_window.erase(b.history_window.begin());
        ++b.dropped_history_turns;
    }
    b.approx_token_count = total;
    return b;
}

std::vector<ChatMessage> to_messages(const PromptBundle& bundle) {
    std::string system = bundle.system_preamble;
    for (const auto& block : bundle.context_blocks) system += "\n\n" + render_block(block);
    std::vector<ChatMessage> messages{{"system", std::move(system)}};
    for (const auto& t : bundle.history_window) messages.push_back({std::string(to_string(t.role)), t.text});
    messages.push_back({"user", bundle.user_question});
    return messages;
}

std::string first_sentence(std::string_view text) {
    const auto collapsed = text::collapse_whitespace(text);
    for (std::size_t i = 0; i < collapsed.size(); ++i) {
        const char c = collapsed[i];
        if ((c == '.' || c == '?' || c == '!') && (i + 1 == collapsed.size() || collapsed[i + 1] == ' ')) {
            return collapsed.substr(0, i + 1);
        }
    }
    return collapsed;
}

std::string MockEchoGenerator::generate(const PromptBundle& bundle) {
    std::vector<std::string> lines;
    for (auto it = bundle.history_window.rbegin(); it != bundle.history_window.rend(); ++it) {
        if (it->role == Role::User) {
            lines.push_back("[HISTORY: " + text::collapse_whitespace(it->text) + "]");
            break;
        }
    }
    for (const auto& block : bundle.context_blocks) {
        lines.push_back(source_marker(block.source_label) + " " + first_sentence(block.body));
    }
    return text::join(lines, "\n");
}

std::string MockEchoGenerator::complete(const std::vector<ChatMessage>& messages) {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == "user") return first_sentence(it->content);
    }
    return {};
}

std::string HttpGenerator::generate(const PromptBundle& bundle) { return complete(to_messages(bundle)); }

std::string HttpGenerator::complete(const std::vector<ChatMessage>& messages) {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    const json request{{"model", spec_.model_id},
                       {"messages", msgs},
                       {"temperature", spec_.temperature},
                       {"max_tokens", spec_.max_answer_tokens}};
    const auto response = http::post_json(*spec_.endpoint, "/v1/chat/completions", request, spec_.retry);
    try {
        const auto& content = response.at("choices").at(0).at("message").at("content");
        return content.is_null() ? std::string() : content.get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ProviderContractError, std::string("malformed chat completion: ") + e.what());
    }
}

std::unique_ptr<Generator> make_generator(const GeneratorSpec& spec) {
    spec.validate();
    if (spec.provider_kind == GeneratorKind::RemoteHttp) return std::make_unique<HttpGenerator>(spec);
    return std::make_unique<MockEchoGenerator>();
}

std::string generate_answer(Generator& generator, const PromptBundle& bundle) {
    if (bundle.context_blocks.empty()) return std::string(kFallbackAnswer);
    auto answer = generator.generate(bundle);
    if (text::trim(answer).empty()) throw Error(ErrorCode::EmptyAnswer, "generator returned an empty answer");
    return answer;
}

std::int64_t now_millis() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

AskResult ask(ChatSession& session, const std::string& question, const kb::KnowledgeBase& kb,
              const kb::RetrievalConfig& cfg, const embed::Embedder& embedder, Generator& generator,
              const GeneratorSpec& gen, std::size_t history_k) {
    AskResult result;
    result.retrieval = kb::retrieve(kb, question, cfg, embedder);
    result.bundle = assemble_prompt(session, question, result.retrieval.sections, gen, history_k);
    const auto answer = generate_answer(generator, result.bundle);

    Turn user{Role::User, question, {}, now_millis()};
    result.turn = Turn{Role::Assistant, answer, {}, now_millis()};
    for (const auto& r : result.retrieval.results) result.turn.retrieved_section_ids.push_back(r.section_id);

    session.turns.reserve(session.turns.size() + 2);
    session.turns.push_back(std::move(user));
    session.turns.push_back(result.turn);
    return result;
}

Engine::Engine(std::shared_ptr<Generator> generator, GeneratorSpec gen, kb::RetrievalConfig retrieval,
               std::size_t history_k, ProviderFactory providers)
    : generator_(std::move(generator)),
      gen_(std::move(gen)),
      retrieval_(retrieval),
      history_k_(history_k),
      providers_(std::move(providers)) {
    gen_.validate();
    retrieval_.validate();
    if (!providers_) {
        providers_ = [](const embed::EmbedderSpec& spec) -> std::shared_ptr<embed::EmbeddingProvider> {
            return embed::make_provider(spec);
        };
    }
}

void Engine::swap_kb(std::shared_ptr<const kb::KnowledgeBase> kb) {
    std::shared_ptr<const Snapshot> next;
    if (kb) {
        auto embedder = std::make_shared<const embed::Embedder>(kb->embedder, providers_(kb->embedder));
        next = std::make_shared<const Snapshot>(Snapshot{std::move(kb), std::move(embedder)});
    }
    std::lock_guard lock(mu_);
    current_ = std::move(next);
}

std::shared_ptr<const Engine::Snapshot> Engine::snapshot() const {
    std::lock_guard lock(mu_);
    return current_;
}

std::shared_ptr<const kb::KnowledgeBase> Engine::kb() const {
    auto snap = snapshot();
    return snap ? snap->kb : nullptr;
}

AskResult Engine::ask(ChatSession& session, const std::string& question) const {
    const auto snap = snapshot();
    if (!snap) throw Error(ErrorCode::EmptyKB, "no knowledge base loaded");
    return chat::ask(session, question, *snap->kb, retrieval_, *snap->embedder, *generator_, gen_, history_k_);
}

AskResult Engine::ask_fresh(const std::string& question) const {
    ChatSession session;
    return ask(session, question);
}

namespace {

std::string random_session_id() {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng()),
                  static_cast<unsigned long long>(rng()));
    return buf;
}

}  // namespace

std::string SessionRegistry::create(std::string kb_id) {
    auto entry = std::make_shared<Entry>();
    entry->session.kb_id = std::move(kb_id);
    std::lock_guard lock(mu_);
    std::string id;
    do {
        id = random_session_id();
    } while (sessions_.count(id));
    entry->session.session_id = id;
    sessions_.emplace(id, std::move(entry));
    return id;
}

std::shared_ptr<SessionRegistry::Entry> SessionRegistry::find(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "unknown session " + id);
    return it->second;
}

std::optional<ChatSession> SessionRegistry::snapshot(const std::string& id) const {
    std::shared_ptr<Entry> entry;
    {
        std::lock_guard lock(mu_);
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) return std::nullopt;
        entry = it->second;
    }
    std::lock_guard lock(entry->mu);
    return entry->session;
}

std::vector<ChatSession> SessionRegistry::all() const {
    std::vector<std::shared_ptr<Entry>> entries;
    {
        std::lock_guard lock(mu_);
        for (const auto& [id, e] : sessions_) entries.push_back(e);
    }
    std::vector<ChatSession> out;
    for (const auto& e : entries) {
        std::lock_guard lock(e->mu);
        out.push_back(e->session);
    }
    std::sort(out.begin(), out.end(),
              [](const ChatSession& a, const ChatSession& b) { return a.session_id < b.session_id; });
    return out;
}

std::size_t SessionRegistry::size() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
}

}  // namespace coursepilot::chat
