#include "coursepilot/config.hpp"

#include <cstdlib>
#include <fstream>

#include "coursepilot/error.hpp"

namespace coursepilot {

using nlohmann::json;
namespace fs = std::filesystem;

void EngineConfig::validate() const {
    embedder.validate();
    generator.validate();
    retrieval.validate();
    metrics.validate();
    if (listen_addr.find(':') == std::string::npos) {
        throw Error(ErrorCode::InvalidConfig, "listen_addr must be host:port");
    }
    if (eval_parallelism == 0 || worker_threads == 0) {
        throw Error(ErrorCode::InvalidConfig, "eval_parallelism and worker_threads must be positive");
    }
}

namespace {

json optional_path(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

fs::path resolve(const fs::path& p, const fs::path& base) {
    return p.is_relative() && !base.empty() ? base / p : p;
}

json with_optional_keys(json j, std::initializer_list<const char*> keys) {
    for (const auto* k : keys) {
        if (!j.contains(k)) j[k] = nullptr;
    }
    return j;
}

}  // namespace

json config_to_json(const EngineConfig& cfg) {
    json kind_rules = json::array();
    for (const auto& r : cfg.chunk_rules.kind_rules) kind_rules.push_back({{"glob", r.glob}, {"kind", r.kind}});
    json embedder = with_optional_keys(json(cfg.embedder), {"endpoint"});
    embedder["batch_size"] = cfg.embedder.batch_size;
    embedder["retries"] = cfg.embedder.retry.max_retries;
    embedder["timeout_ms"] = cfg.embedder.retry.timeout.count();
    json generator = with_optional_keys(json(cfg.generator), {"endpoint"});
    generator["retries"] = cfg.generator.retry.max_retries;
    generator["timeout_ms"] = cfg.generator.retry.timeout.count();
    return json{
        {"kb_path", cfg.kb_path.string()},
        {"embedder", embedder},
        {"generator", generator},
        {"retrieval", cfg.retrieval},
        {"metrics", {{"w_cos", cfg.metrics.w_cos}, {"w_f", cfg.metrics.w_f}}},
        {"listen_addr", cfg.listen_addr},
        {"auth_token", cfg.auth_token ? json(*cfg.auth_token) : json(nullptr)},
        {"feedback_path", optional_path(cfg.feedback_path)},
        {"sessions_snapshot_path", optional_path(cfg.sessions_snapshot_path)},
        {"static_dir", optional_path(cfg.static_dir)},
        {"ingest",
         {{"header_patterns", cfg.chunk_rules.header_patterns},
          {"title_fallback", cfg.chunk_rules.title_fallback},
          {"include_globs", cfg.chunk_rules.include_globs},
          {"kind_rules", kind_rules},
          {"default_kind", cfg.chunk_rules.default_kind}}},
        {"topic_taxonomy", cfg.topic_taxonomy},
        {"history_k", cfg.history_k},
        {"eval_parallelism", cfg.eval_parallelism},
        {"worker_threads", cfg.worker_threads},
    };
}

EngineConfig config_from_json(const json& j, const fs::path& base_dir) {
    EngineConfig cfg;
    try {
        auto opt_string = [&](const char* key) -> std::optional<std::string> {
            if (!j.contains(key) || j[key].is_null()) return std::nullopt;
            return j[key].get<std::string>();
        };
        if (j.contains("kb_path")) cfg.kb_path = resolve(j["kb_path"].get<std::string>(), base_dir);
        if (j.contains("embedder")) cfg.embedder = j["embedder"].get<embed::EmbedderSpec>();
        if (j.contains("generator")) cfg.generator = j["generator"].get<chat::GeneratorSpec>();
        if (j.contains("retrieval")) cfg.retrieval = j["retrieval"].get<kb::RetrievalConfig>();
        if (j.contains("metrics")) {
            cfg.metrics.w_cos = j["metrics"].value("w_cos", cfg.metrics.w_cos);
            cfg.metrics.w_f = j["metrics"].value("w_f", cfg.metrics.w_f);
        }
        cfg.listen_addr = j.value("listen_addr", cfg.listen_addr);
        cfg.auth_token = opt_string("auth_token");
        if (auto p = opt_string("feedback_path")) cfg.feedback_path = resolve(*p, base_dir);
        if (auto p = opt_string("sessions_snapshot_path")) cfg.sessions_snapshot_path = resolve(*p, base_dir);
        if (auto p = opt_string("static_dir")) cfg.static_dir = resolve(*p, base_dir);
        if (j.contains("ingest")) {
            const auto& in = j["ingest"];
            auto& rules = cfg.chunk_rules;
            rules.header_patterns = in.value("header_patterns", rules.header_patterns);
            rules.title_fallback = in.value("title_fallback", rules.title_fallback);
            rules.include_globs = in.value("include_globs", rules.include_globs);
            rules.default_kind = in.value("default_kind", rules.default_kind);
            if (in.contains("kind_rules")) {
                rules.kind_rules.clear();
                for (const auto& r : in["kind_rules"]) {
                    rules.kind_rules.push_back({r.at("glob").get<std::string>(), r.at("kind").get<std::string>()});
                }
            }
        }
        cfg.topic_taxonomy = j.value("topic_taxonomy", cfg.topic_taxonomy);
        cfg.history_k = j.value("history_k", cfg.history_k);
        cfg.eval_parallelism = j.value("eval_parallelism", cfg.eval_parallelism);
        cfg.worker_threads = j.value("worker_threads", cfg.worker_threads);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, e.what());
    }
    cfg.validate();
    return cfg;
}

std::optional<std::string> process_env(const std::string& name) {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
}

namespace {

std::string env_name(const std::string& path) {
    std::string out = "COURSEPILOT_";
    for (char c : path) out += (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c;
    return out;
}

json parse_env_value(const json& current, const std::string& name, const std::string& raw) {
    if (current.is_string() || current.is_null()) return raw;
    auto parsed = json::parse(raw, nullptr, false);
    const bool compatible = !parsed.is_discarded() &&
                            ((current.is_number() && parsed.is_number()) || (current.is_boolean() && parsed.is_boolean()) ||
                             (current.is_array() && parsed.is_array()) || (current.is_object() && parsed.is_object()));
    if (!compatible) throw Error(ErrorCode::InvalidConfig, name + " has the wrong type: " + raw);
    return parsed;
}

void apply_env(json& node, const std::string& path, const EnvLookup& env) {
    if (node.is_object()) {
        for (auto& [key, child] : node.items()) apply_env(child, path.empty() ? key : path + "_" + key, env);
    }
    const auto name = env_name(path);
    if (path.empty()) return;
    if (auto value = env(name)) node = parse_env_value(node, name, *value);
}

}  // namespace

void apply_env_overrides(json& j, const EnvLookup& env) { apply_env(j, "", env); }

EngineConfig load_config(const std::optional<fs::path>& path, const EnvLookup& env) {
    auto merged = config_to_json(EngineConfig{});
    fs::path base;
    if (path) {
        std::ifstream in(*path);
        if (!in) throw Error(ErrorCode::Io, "cannot open config " + path->string());
        const auto file = json::parse(in, nullptr, false);
        if (file.is_discarded() || !file.is_object()) {
            throw Error(ErrorCode::InvalidConfig, "config is not a JSON object: " + path->string());
        }
        merged.merge_patch(file);
        base = path->parent_path();
    }
    // merge_patch deletes null members; restore optional keys so env can set them.
    for (const auto* k : {"auth_token", "feedback_path", "sessions_snapshot_path", "static_dir"}) {
        if (!merged.contains(k)) merged[k] = nullptr;
    }
    for (const auto* section : {"embedder", "generator"}) {
        if (!merged[section].contains("endpoint")) merged[section]["endpoint"] = nullptr;
    }
    apply_env_overrides(merged, env);
    return config_from_json(merged, base);
}

}  // namespace coursepilot
