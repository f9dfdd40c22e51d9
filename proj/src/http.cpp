#include "coursepilot/http.hpp"

#include <thread>

#include <httplib.h>

#include "coursepilot/error.hpp"
#include "coursepilot/log.hpp"

namespace coursepilot::http {

namespace {

struct SplitUrl {
    std::string scheme_host_port;
    std::string prefix;
};

SplitUrl split_url(const std::string& endpoint) {
    const auto scheme_end = endpoint.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto slash = endpoint.find('/', host_start);
    if (slash == std::string::npos) return {endpoint, ""};
    auto prefix = endpoint.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {endpoint.substr(0, slash), prefix};
}

}  // namespace

nlohmann::json post_json(const std::string& endpoint, const std::string& path, const nlohmann::json& body,
                         const RetryPolicy& retry, const std::optional<std::string>& bearer_token) {
    const auto url = split_url(endpoint);
    const auto payload = body.dump();
    const auto target = url.prefix + path;
    const auto timeout_s = std::chrono::duration_cast<std::chrono::seconds>(retry.timeout);
    const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(retry.timeout - timeout_s);

    std::string last_failure;
    for (int attempt = 0; attempt <= retry.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(retry.base_delay * (1 << (attempt - 1)));
        }
        httplib::Client client(url.scheme_host_port);
        client.set_connection_timeout(timeout_s.count(), timeout_us.count());
        client.set_read_timeout(timeout_s.count(), timeout_us.count());
        client.set_write_timeout(timeout_s.count(), timeout_us.count());
        httplib::Headers headers;
        if (bearer_token) headers.emplace("Authorization", "Bearer " + *bearer_token);

        auto res = client.Post(target, headers, payload, "application/json");
        if (!res) {
            last_failure = httplib::to_string(res.error());
        } else if (res->status == 429 || res->status >= 500) {
            last_failure = "HTTP " + std::to_string(res->status);
        } else if (res->status < 200 || res->status >= 300) {
            throw Error(ErrorCode::ProviderContractError,
                        endpoint + target + " returned HTTP " + std::to_string(res->status));
        } else {
            auto parsed = nlohmann::json::parse(res->body, nullptr, false);
            if (parsed.is_discarded()) {
                throw Error(ErrorCode::ProviderContractError, endpoint + target + " returned non-JSON body");
            }
            return parsed;
        }
        log().warn("POST {}{} failed (attempt {}/{}): {}", endpoint, target, attempt + 1, retry.max_retries + 1,
                   last_failure);
    }
    throw Error(ErrorCode::RetriableProviderError, endpoint + target + ": " + last_failure);
}

}  // namespace coursepilot::http
