#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>

#include "coursepilot/chat.hpp"
#include "coursepilot/embed.hpp"
#include "coursepilot/ingest.hpp"

namespace coursepilot::testing {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

void write_file(const fs::path& path, std::string_view content);
std::string read_file(const fs::path& path);
fs::path data_dir();

/// Copies data/course (syllabus.md, week1.md) into `dir`.
void write_course_fixture(const fs::path& dir);

ingest::Section make_section(std::string id, std::vector<std::string> header_path, std::string body);

/// Replies from a queue (the last reply repeats once the queue is drained)
/// and records every prompt it was given.
class ScriptedGenerator final : public chat::Generator {
public:
    explicit ScriptedGenerator(std::vector<std::string> replies) : replies_(replies.begin(), replies.end()) {}

    std::string generate(const chat::PromptBundle& bundle) override;
    std::string complete(const std::vector<chat::ChatMessage>& messages) override;
    std::size_t calls() const;

private:
    std::string next();

    mutable std::mutex mu_;
    std::deque<std::string> replies_;
    std::size_t calls_ = 0;
};

class FailingGenerator final : public chat::Generator {
public:
    std::string generate(const chat::PromptBundle&) override;
    std::string complete(const std::vector<chat::ChatMessage>&) override;
};

/// Returns pre-baked raw vectors regardless of input.
class FixedEmbeddingProvider final : public embed::EmbeddingProvider {
public:
    explicit FixedEmbeddingProvider(std::vector<double> vector) : vector_(std::move(vector)) {}
    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override;

private:
    std::vector<double> vector_;
};

/// httplib server on a free loopback port, running on its own thread.
class MockHttpServer {
public:
    explicit MockHttpServer(const std::function<void(httplib::Server&)>& routes);
    ~MockHttpServer();

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int port() const noexcept { return port_; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace coursepilot::testing
