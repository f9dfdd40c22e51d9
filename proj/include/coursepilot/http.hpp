#pragma once

#include <chrono>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace coursepilot::http {

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_delay{250};
    std::chrono::milliseconds timeout{30000};
};

/// POSTs `body` as JSON to endpoint + path and returns the parsed response.
/// Connection failures, timeouts, 429 and 5xx are retried with exponential
/// backoff and end in RetriableProviderError; other non-2xx statuses and
/// unparseable bodies raise ProviderContractError.
nlohmann::json post_json(const std::string& endpoint, const std::string& path, const nlohmann::json& body,
                         const RetryPolicy& retry, const std::optional<std::string>& bearer_token = std::nullopt);

}  // namespace coursepilot::http
