#include "coursepilot/service.hpp"

#include <fstream>

#include <httplib.h>

#include "coursepilot/error.hpp"
#include "coursepilot/eval.hpp"
#include "coursepilot/ingest.hpp"
#include "coursepilot/kb.hpp"
#include "coursepilot/log.hpp"
#include "coursepilot/report.hpp"
#include "coursepilot/text.hpp"

namespace coursepilot::service {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(FeedbackCategory c) noexcept {
    switch (c) {
        case FeedbackCategory::Helpfulness: return "helpfulness";
        case FeedbackCategory::Accuracy: return "accuracy";
        case FeedbackCategory::Performance: return "performance";
    }
    return "helpfulness";
}

std::optional<FeedbackCategory> parse_category(std::string_view name) noexcept {
    for (auto c : kAllCategories) {
        if (to_string(c) == name) return c;
    }
    return std::nullopt;
}

json to_json(const FeedbackEntry& e) {
    json j{{"session_id", e.session_id},
           {"question_category", to_string(e.question_category)},
           {"rating", e.rating},
           {"created_at", e.created_at}};
    if (e.comment) j["comment"] = *e.comment;
    return j;
}

FeedbackEntry feedback_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::PreconditionViolation, "feedback must be a JSON object");
    FeedbackEntry e;
    if (!j.contains("session_id") || !j["session_id"].is_string() || j["session_id"].get<std::string>().empty()) {
        throw Error(ErrorCode::PreconditionViolation, "feedback needs a session_id");
    }
    e.session_id = j["session_id"].get<std::string>();
    const auto category = j.contains("question_category") && j["question_category"].is_string()
                              ? parse_category(j["question_category"].get<std::string>())
                              : std::nullopt;
    if (!category) throw Error(ErrorCode::PreconditionViolation, "question_category must be helpfulness|accuracy|performance");
    e.question_category = *category;
    if (!j.contains("rating") || !j["rating"].is_number_integer()) {
        throw Error(ErrorCode::PreconditionViolation, "rating must be an integer");
    }
    const auto rating = j["rating"].get<long long>();
    if (rating < 1 || rating > 5) throw Error(ErrorCode::PreconditionViolation, "rating must be in 1..5");
    e.rating = static_cast<int>(rating);
    if (j.contains("comment") && j["comment"].is_string()) e.comment = j["comment"].get<std::string>();
    e.created_at = j.value("created_at", std::int64_t{0});
    return e;
}

std::map<FeedbackCategory, CategorySummary> feedback_summary(const std::vector<FeedbackEntry>& entries) {
    std::map<FeedbackCategory, CategorySummary> out;
    for (auto c : kAllCategories) out[c];
    for (const auto& e : entries) ++out[e.question_category].counts[e.rating];
    for (auto& [category, summary] : out) {
        std::size_t n = 0;
        std::size_t weighted = 0;
        for (const auto& [rating, count] : summary.counts) {
            n += count;
            weighted += static_cast<std::size_t>(rating) * count;
        }
        if (n > 0) summary.mean = static_cast<double>(weighted) / static_cast<double>(n);
    }
    return out;
}

json summary_to_json(const std::map<FeedbackCategory, CategorySummary>& summary) {
    json out = json::object();
    for (const auto& [category, s] : summary) {
        json counts = json::object();
        std::size_t total = 0;
        for (const auto& [rating, n] : s.counts) {
            counts[std::to_string(rating)] = n;
            total += n;
        }
        json entry{{"counts", counts}, {"total", total}};
        if (s.mean) entry["mean"] = *s.mean;
        out[std::string(to_string(category))] = entry;
    }
    return out;
}

FeedbackStore::FeedbackStore(std::optional<fs::path> path) : path_(std::move(path)) {
    if (!path_) return;
    std::ifstream in(*path_);
    std::string line;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        const auto j = json::parse(line, nullptr, false);
        try {
            entries_.push_back(feedback_from_json(j));
        } catch (const Error& e) {
            log().warn("skipping feedback line in {}: {}", path_->string(), e.what());
        }
    }
}

void FeedbackStore::append(FeedbackEntry entry) {
    std::lock_guard lock(mu_);
    if (path_) {
        std::ofstream out(*path_, std::ios::app);
        out << to_json(entry).dump() << "\n";
        out.flush();
        if (!out) throw Error(ErrorCode::Io, "cannot append feedback to " + path_->string());
    }
    entries_.push_back(std::move(entry));
}

std::vector<FeedbackEntry> FeedbackStore::entries() const {
    std::lock_guard lock(mu_);
    return entries_;
}

namespace {

int status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::NotFound: return 404;
        case ErrorCode::Conflict: return 409;
        case ErrorCode::RetriableProviderError:
        case ErrorCode::EmptyKB: return 503;
        case ErrorCode::PreconditionViolation:
        case ErrorCode::QuestionTooLong:
        case ErrorCode::InvalidConfig:
        case ErrorCode::EmptyCorpus:
        case ErrorCode::EmptyTestset:
        case ErrorCode::Io: return 400;
        default: return 500;
    }
}

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
    reply(res, status, json{{"error", {{"code", code}, {"message", message}}}});
}

json parse_body(const httplib::Request& req) {
    auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) {
        throw Error(ErrorCode::PreconditionViolation, "request body must be a JSON object");
    }
    return body;
}

std::string require_string(const json& body, const char* key) {
    if (!body.contains(key) || !body[key].is_string() || text::trim(body[key].get<std::string>()).empty()) {
        throw Error(ErrorCode::PreconditionViolation, std::string("missing string field \"") + key + "\"");
    }
    return body[key].get<std::string>();
}

std::pair<std::string, int> split_host_port(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::InvalidConfig, "listen_addr must be host:port");
    return {addr.substr(0, colon), std::stoi(addr.substr(colon + 1))};
}

}  // namespace

Service::Service(EngineConfig cfg, std::shared_ptr<chat::Generator> generator, chat::ProviderFactory providers)
    : cfg_(std::move(cfg)),
      generator_(generator ? std::move(generator) : std::shared_ptr<chat::Generator>(chat::make_generator(cfg_.generator))),
      providers_(std::move(providers)),
      feedback_(cfg_.feedback_path) {
    cfg_.validate();
    engine_ = std::make_unique<chat::Engine>(generator_, cfg_.generator, cfg_.retrieval, cfg_.history_k, providers_);
    std::error_code ec;
    if (fs::exists(cfg_.kb_path, ec)) {
        engine_->swap_kb(std::make_shared<const kb::KnowledgeBase>(kb::load_kb(cfg_.kb_path)));
        log().info("loaded knowledge base {} ({} sections)", engine_->kb()->kb_id, engine_->kb()->sections.size());
    }
    server_ = std::make_unique<httplib::Server>();
    const auto threads = cfg_.worker_threads;
    server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    // SO_REUSEADDR only: a second instance on the same port must fail to bind.
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    install_routes();
}

Service::~Service() { stop(); }

void Service::install_routes() {
    auto& svr = *server_;

    svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Headers", "Content-Type, Authorization"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    svr.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    svr.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
        if (!cfg_.auth_token || req.method != "POST") return httplib::Server::HandlerResponse::Unhandled;
        if (req.get_header_value("Authorization") == "Bearer " + *cfg_.auth_token) {
            return httplib::Server::HandlerResponse::Unhandled;
        }
        reply_error(res, 401, "Unauthorized", "missing or invalid bearer token");
        return httplib::Server::HandlerResponse::Handled;
    });

    svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            reply_error(res, status_for(e.code()), to_string(e.code()), e.what());
        } catch (const std::exception& e) {
            reply_error(res, 500, "Internal", e.what());
        } catch (...) {
            reply_error(res, 500, "Internal", "unknown error");
        }
    });

    svr.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
        const auto kb = engine_->kb();
        if (!kb) return reply(res, 200, json{{"status", "no_kb"}});
        reply(res, 200, json{{"status", "ok"}, {"kb_id", kb->kb_id}, {"section_count", kb->sections.size()}});
    });

    svr.Post("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) {
        const auto kb = engine_->kb();
        const auto id = sessions_.create(kb ? kb->kb_id : std::string());
        reply(res, 200, json{{"session_id", id}});
    });

    svr.Get(R"(/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const auto session = sessions_.snapshot(req.matches[1]);
        if (!session) return reply_error(res, 404, "NotFound", "unknown session");
        reply(res, 200, json(*session));
    });

    svr.Post(R"(/v1/sessions/([^/]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!sessions_.snapshot(id)) return reply_error(res, 404, "NotFound", "unknown session");
        const auto body = parse_body(req);
        const auto question = require_string(body, "text");
        auto [result, index] = sessions_.with_session(id, [&](chat::ChatSession& s) {
            auto r = engine_->ask(s, question);
            return std::make_pair(std::move(r), s.turns.size() - 1);
        });
        json out = result.turn;
        out["session_id"] = id;
        out["turn_index"] = index;
        json sources = json::array();
        for (std::size_t i = 0; i < result.retrieval.results.size(); ++i) {
            const auto& r = result.retrieval.results[i];
            sources.push_back({{"section_id", r.section_id},
                               {"header_path", result.retrieval.sections[i].header_path},
                               {"similarity", r.similarity},
                               {"probability", r.probability},
                               {"rank", r.rank}});
        }
        out["sources"] = sources;
        reply(res, 200, out);
    });

    svr.Get(R"(/v1/kb/sections/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
        const auto kb = engine_->kb();
        const auto* section = kb ? kb->find_section(req.matches[1].str()) : nullptr;
        if (!section) return reply_error(res, 404, "NotFound", "unknown section");
        reply(res, 200, json{{"section_id", section->id},
                             {"doc_id", section->doc_id},
                             {"header_path", section->header_path},
                             {"body", section->body}});
    });

    svr.Post("/v1/ingest", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        const fs::path input_dir = require_string(body, "input_dir");
        bool expected = false;
        if (!ingest_running_.compare_exchange_strong(expected, true)) {
            return reply_error(res, 409, "Conflict", "an ingest is already running");
        }
        struct Release {
            std::atomic<bool>& flag;
            ~Release() { flag = false; }
        } release{ingest_running_};

        auto retrieval = cfg_.retrieval;
        if (body.contains("embed_target")) retrieval.embed_target = kb::parse_embed_target(body["embed_target"].get<std::string>());
        auto ingested = ingest::ingest_directory(input_dir, cfg_.chunk_rules);
        const embed::Embedder embedder(cfg_.embedder, providers_ ? providers_(cfg_.embedder) : embed::make_provider(cfg_.embedder));
        auto built = std::make_shared<const kb::KnowledgeBase>(kb::build_kb(std::move(ingested.sections), embedder, retrieval));
        kb::save_kb(*built, cfg_.kb_path);
        engine_->swap_kb(built);

        json errors = json::array();
        for (const auto& e : ingested.errors) errors.push_back({{"path", e.path}, {"message", e.message}});
        reply(res, 200, json{{"kb_id", built->kb_id},
                             {"section_count", built->sections.size()},
                             {"document_count", ingested.document_count},
                             {"errors", errors}});
    });

    svr.Post("/v1/eval", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        const auto cases = eval::load_testset(require_string(body, "testset_path"), cfg_.topic_taxonomy);
        const auto kb = engine_->kb();
        if (!kb) throw Error(ErrorCode::EmptyKB, "no knowledge base loaded");
        const embed::Embedder embedder(kb->embedder, providers_ ? providers_(kb->embedder) : embed::make_provider(kb->embedder));
        const auto judge_kind = body.value("judge", std::string("deterministic"));
        std::unique_ptr<eval::Judge> judge;
        if (judge_kind == "deterministic") {
            judge = eval::deterministic_judge();
        } else if (judge_kind == "llm") {
            judge = eval::llm_judge(generator_);
        } else {
            throw Error(ErrorCode::PreconditionViolation, "judge must be deterministic|llm");
        }
        const auto parallel = body.value("parallel", cfg_.eval_parallelism);
        const auto result = eval::run_testset(cases, eval::engine_answerer(*engine_), embedder, *judge, cfg_.metrics,
                                              std::max<std::size_t>(1, parallel));
        reply(res, 200, report::to_json(result));
    });

    svr.Post("/v1/feedback", [this](const httplib::Request& req, httplib::Response& res) {
        auto entry = feedback_from_json(parse_body(req));
        entry.created_at = chat::now_millis();
        feedback_.append(entry);
        reply(res, 200, to_json(entry));
    });

    svr.Get("/v1/feedback/summary", [this](const httplib::Request&, httplib::Response& res) {
        reply(res, 200, summary_to_json(feedback_summary(feedback_.entries())));
    });

    if (cfg_.static_dir && !svr.set_mount_point("/", cfg_.static_dir->string())) {
        log().warn("static_dir {} is not a directory; UI route disabled", cfg_.static_dir->string());
    }
}

int Service::start(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void Service::run() {
    const auto [host, port] = split_host_port(cfg_.listen_addr);
    log().info("listening on {}:{}", host, port);
    if (!server_->listen(host, port) && !stopped_) {
        throw Error(ErrorCode::Io, "cannot listen on " + cfg_.listen_addr);
    }
}

void Service::stop() {
    if (stopped_.exchange(true)) return;
    server_->stop();
    if (thread_.joinable()) thread_.join();
    write_sessions_snapshot();
}

void Service::write_sessions_snapshot() const {
    if (!cfg_.sessions_snapshot_path) return;
    std::ofstream out(*cfg_.sessions_snapshot_path, std::ios::trunc);
    for (const auto& s : sessions_.all()) out << json(s).dump() << "\n";
    if (!out) log().warn("cannot write sessions snapshot to {}", cfg_.sessions_snapshot_path->string());
}

}  // namespace coursepilot::service
