#include "fixtures.hpp"

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "coursepilot/error.hpp"

namespace coursepilot::testing {

TempDir::TempDir() {
    std::random_device rd;
    const auto base = fs::temp_directory_path();
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto candidate = base / ("coursepilot-test-" + std::to_string(rd()) + std::to_string(rd()));
        if (fs::create_directory(candidate)) {
            path_ = candidate;
            return;
        }
    }
    throw std::runtime_error("cannot create temp dir");
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

void write_file(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path data_dir() { return COURSEPILOT_TEST_DATA; }

void write_course_fixture(const fs::path& dir) {
    fs::create_directories(dir);
    for (const auto* name : {"syllabus.md", "week1.md"}) {
        fs::copy_file(data_dir() / "course" / name, dir / name, fs::copy_options::overwrite_existing);
    }
}

ingest::Section make_section(std::string id, std::vector<std::string> header_path, std::string body) {
    ingest::Section s;
    s.doc_id = "doc.md";
    s.id = std::move(id);
    s.header_path = std::move(header_path);
    s.approx_token_count = (body.size() + 3) / 4;
    s.body = std::move(body);
    return s;
}

std::string ScriptedGenerator::next() {
    std::lock_guard lock(mu_);
    ++calls_;
    if (replies_.empty()) return {};
    auto reply = replies_.front();
    if (replies_.size() > 1) replies_.pop_front();
    return reply;
}

std::string ScriptedGenerator::generate(const chat::PromptBundle&) { return next(); }

std::string ScriptedGenerator::complete(const std::vector<chat::ChatMessage>&) { return next(); }

std::size_t ScriptedGenerator::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

std::string FailingGenerator::generate(const chat::PromptBundle&) {
    throw Error(ErrorCode::RetriableProviderError, "scripted outage");
}

std::string FailingGenerator::complete(const std::vector<chat::ChatMessage>&) {
    throw Error(ErrorCode::RetriableProviderError, "scripted outage");
}

std::vector<std::vector<double>> FixedEmbeddingProvider::embed_batch(const std::vector<std::string>& texts) {
    return std::vector<std::vector<double>>(texts.size(), vector_);
}

MockHttpServer::MockHttpServer(const std::function<void(httplib::Server&)>& routes) {
    routes(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ < 0) throw std::runtime_error("mock server cannot bind");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
}

MockHttpServer::~MockHttpServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace coursepilot::testing
