#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coursepilot/chat.hpp"
#include "coursepilot/embed.hpp"
#include "coursepilot/eval.hpp"
#include "coursepilot/ingest.hpp"
#include "coursepilot/kb.hpp"

namespace coursepilot {

struct EngineConfig {
    std::filesystem::path kb_path = "course.kb";
    embed::EmbedderSpec embedder;
    chat::GeneratorSpec generator;
    kb::RetrievalConfig retrieval;
    eval::MetricConfig metrics;
    std::string listen_addr = "127.0.0.1:8080";
    std::optional<std::string> auth_token;
    std::optional<std::filesystem::path> feedback_path;
    std::optional<std::filesystem::path> sessions_snapshot_path;
    std::optional<std::filesystem::path> static_dir;
    ingest::ChunkRules chunk_rules;
    std::vector<std::string> topic_taxonomy;
    std::size_t history_k = 4;
    std::size_t eval_parallelism = 4;
    std::size_t worker_threads = 64;

    void validate() const;
};

nlohmann::json config_to_json(const EngineConfig& cfg);

/// Missing keys keep their defaults. Relative paths resolve against `base_dir`.
EngineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Environment lookup through getenv.
std::optional<std::string> process_env(const std::string& name);

/// Overrides every config key from COURSEPILOT_<KEY PATH>, nested keys joined
/// by '_' and upper-cased (COURSEPILOT_GENERATOR_ENDPOINT, COURSEPILOT_RETRIEVAL_P).
void apply_env_overrides(nlohmann::json& j, const EnvLookup& env);

/// Defaults <- config file (if given) <- environment.
EngineConfig load_config(const std::optional<std::filesystem::path>& path, const EnvLookup& env = process_env);

}  // namespace coursepilot
