#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "coursepilot/chat.hpp"
#include "coursepilot/config.hpp"

namespace httplib {
class Server;
}

namespace coursepilot::service {

enum class FeedbackCategory { Helpfulness, Accuracy, Performance };

std::string_view to_string(FeedbackCategory c) noexcept;
std::optional<FeedbackCategory> parse_category(std::string_view name) noexcept;

inline constexpr FeedbackCategory kAllCategories[] = {FeedbackCategory::Helpfulness, FeedbackCategory::Accuracy,
                                                      FeedbackCategory::Performance};

struct FeedbackEntry {
    std::string session_id;
    FeedbackCategory question_category = FeedbackCategory::Helpfulness;
    int rating = 0;  // Likert 1..5
    std::optional<std::string> comment;
    std::int64_t created_at = 0;
};

nlohmann::json to_json(const FeedbackEntry& entry);
/// Throws PreconditionViolation for unknown categories or ratings outside 1..5.
FeedbackEntry feedback_from_json(const nlohmann::json& j);

struct CategorySummary {
    std::map<int, std::size_t> counts;  // rating -> n, only ratings seen
    std::optional<double> mean;         // absent when no entries
};

std::map<FeedbackCategory, CategorySummary> feedback_summary(const std::vector<FeedbackEntry>& entries);
nlohmann::json summary_to_json(const std::map<FeedbackCategory, CategorySummary>& summary);

/// Append-only JSONL feedback log with a single serialized writer.
class FeedbackStore {
public:
    explicit FeedbackStore(std::optional<std::filesystem::path> path);

    void append(FeedbackEntry entry);
    std::vector<FeedbackEntry> entries() const;

private:
    std::optional<std::filesystem::path> path_;
    mutable std::mutex mu_;
    std::vector<FeedbackEntry> entries_;
};

/// JSON-over-HTTP front end: sessions, messages, ingest, eval, sections,
/// feedback and health, all under /v1.
class Service {
public:
    explicit Service(EngineConfig cfg, std::shared_ptr<chat::Generator> generator = nullptr,
                     chat::ProviderFactory providers = {});
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds host:port (port 0 picks a free one) and serves on a background
    /// thread. Returns the bound port.
    int start(const std::string& host, int port);
    /// Binds cfg.listen_addr and serves on the calling thread until stop().
    void run();
    /// Stops serving and writes the sessions snapshot when configured.
    void stop();

    chat::Engine& engine() noexcept { return *engine_; }
    chat::SessionRegistry& sessions() noexcept { return sessions_; }
    const EngineConfig& config() const noexcept { return cfg_; }

private:
    void install_routes();
    void write_sessions_snapshot() const;

    EngineConfig cfg_;
    std::shared_ptr<chat::Generator> generator_;
    chat::ProviderFactory providers_;
    std::unique_ptr<chat::Engine> engine_;
    chat::SessionRegistry sessions_;
    FeedbackStore feedback_;
    std::atomic<bool> ingest_running_{false};
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    std::atomic<bool> stopped_{false};
};

}  // namespace coursepilot::service
