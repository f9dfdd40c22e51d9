#include "coursepilot/cli.hpp"

#include <pthread.h>

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "coursepilot/chat.hpp"
#include "coursepilot/config.hpp"
#include "coursepilot/error.hpp"
#include "coursepilot/eval.hpp"
#include "coursepilot/ingest.hpp"
#include "coursepilot/kb.hpp"
#include "coursepilot/report.hpp"
#include "coursepilot/service.hpp"
#include "coursepilot/text.hpp"

namespace coursepilot::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config;
    std::string input;
    std::string kb;
    std::string embed_target;
    std::string question;
    bool json_output = false;
    std::string testset;
    std::string out_path;
    std::string judge = "deterministic";
    std::size_t parallel = 0;
    std::string in_path;
    std::string format;
};

EngineConfig engine_config(const Options& o) {
    return load_config(o.config.empty() ? std::nullopt : std::optional<fs::path>(o.config));
}

std::string format_similarity(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
}

void print_answer(std::ostream& out, const chat::AskResult& r) {
    out << r.turn.text << "\n\nSources:\n";
    for (std::size_t i = 0; i < r.retrieval.results.size(); ++i) {
        const auto& res = r.retrieval.results[i];
        out << "  " << res.rank << ". " << res.section_id << "  " << ingest::header_label(r.retrieval.sections[i])
            << "  (similarity " << format_similarity(res.similarity) << ")\n";
    }
}

json answer_json(const std::string& question, const chat::AskResult& r) {
    json sources = json::array();
    for (std::size_t i = 0; i < r.retrieval.results.size(); ++i) {
        const auto& res = r.retrieval.results[i];
        sources.push_back({{"section_id", res.section_id},
                           {"header_path", r.retrieval.sections[i].header_path},
                           {"similarity", res.similarity},
                           {"probability", res.probability},
                           {"rank", res.rank}});
    }
    return json{{"question", question},
                {"answer", r.turn.text},
                {"retrieved_section_ids", r.turn.retrieved_section_ids},
                {"sources", sources}};
}

std::unique_ptr<chat::Engine> open_engine(const EngineConfig& cfg, const fs::path& kb_path,
                                          std::shared_ptr<chat::Generator> generator) {
    auto engine = std::make_unique<chat::Engine>(std::move(generator), cfg.generator, cfg.retrieval, cfg.history_k);
    engine->swap_kb(std::make_shared<const kb::KnowledgeBase>(kb::load_kb(kb_path)));
    return engine;
}

int run_ingest(const Options& o, std::ostream& out, std::ostream& err) {
    auto cfg = engine_config(o);
    if (!o.embed_target.empty()) cfg.retrieval.embed_target = kb::parse_embed_target(o.embed_target);
    auto ingested = ingest::ingest_directory(o.input, cfg.chunk_rules);
    for (const auto& e : ingested.errors) err << "warning: skipped " << e.path << ": " << e.message << "\n";
    const embed::Embedder embedder(cfg.embedder);
    const auto built = kb::build_kb(std::move(ingested.sections), embedder, cfg.retrieval);
    kb::save_kb(built, o.kb);
    out << "Indexed " << built.sections.size() << " sections from " << ingested.document_count << " documents into "
        << o.kb << " (" << built.kb_id << ")\n";
    return kExitOk;
}

int run_ask(const Options& o, std::ostream& out) {
    const auto cfg = engine_config(o);
    const auto engine = open_engine(cfg, o.kb, chat::make_generator(cfg.generator));
    const auto result = engine->ask_fresh(o.question);
    if (o.json_output) {
        out << answer_json(o.question, result).dump(2) << "\n";
    } else {
        print_answer(out, result);
    }
    return kExitOk;
}

int run_chat(const Options& o, std::istream& in, std::ostream& out, std::ostream& err) {
    const auto cfg = engine_config(o);
    const auto engine = open_engine(cfg, o.kb, chat::make_generator(cfg.generator));
    chat::ChatSession session;
    session.kb_id = engine->kb()->kb_id;
    std::string line;
    out << "> " << std::flush;
    while (std::getline(in, line)) {
        const auto question = std::string(text::trim(line));
        if (question == "/quit" || question == "/exit") break;
        if (!question.empty()) {
            try {
                print_answer(out, engine->ask(session, question));
            } catch (const Error& e) {
                err << "error: " << e.what() << "\n";
            }
        }
        out << "\n> " << std::flush;
    }
    out << "\n";
    return kExitOk;
}

int run_eval(const Options& o, std::ostream& out) {
    const auto cfg = engine_config(o);
    std::shared_ptr<chat::Generator> generator = chat::make_generator(cfg.generator);
    const auto engine = open_engine(cfg, o.kb, generator);
    const auto cases = eval::load_testset(o.testset, cfg.topic_taxonomy);
    const embed::Embedder embedder(engine->kb()->embedder);
    std::unique_ptr<eval::Judge> judge;
    if (o.judge == "llm") {
        judge = eval::llm_judge(generator);
    } else {
        judge = eval::deterministic_judge();
    }
    const auto parallel = o.parallel ? o.parallel : cfg.eval_parallelism;
    const auto result =
        eval::run_testset(cases, eval::engine_answerer(*engine), embedder, *judge, cfg.metrics, parallel);
    report::save_report(result, o.out_path);
    out << "Evaluated " << result.per_case.size() << " of " << cases.size() << " cases (" << result.errors.size()
        << " errors)\n";
    if (result.overall.n > 0) {
        out << "Correctness: " << report::format_percent(result.overall.correctness) << "\n"
            << "Context recall: " << report::format_percent(result.overall.context_recall) << "\n"
            << "Faithfulness: " << report::format_percent(result.overall.faithfulness) << "\n";
    }
    out << "Report written to " << o.out_path << "\n";
    return kExitOk;
}

int run_report(const Options& o, std::ostream& out) {
    const auto loaded = report::load_report(o.in_path);
    const auto rendered = o.format == "csv" ? report::render_csv(loaded) : report::render_markdown(loaded);
    if (o.out_path.empty()) {
        out << rendered;
    } else {
        std::ofstream file(o.out_path, std::ios::binary | std::ios::trunc);
        if (!file) throw Error(ErrorCode::Io, "cannot write " + o.out_path);
        file << rendered;
    }
    return kExitOk;
}

int run_serve(const Options& o) {
    // Route SIGINT/SIGTERM to a waiter thread; every thread created after
    // this point inherits the blocked mask.
    sigset_t stop_signals;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

    service::Service svc(engine_config(o));
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&stop_signals, &sig);
        svc.stop();
    });
    try {
        svc.run();
    } catch (...) {
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
        throw;
    }
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"Course assistant: build knowledge bases, answer questions, evaluate answers, serve the API",
                 "coursepilot"};
    app.require_subcommand(1);
    Options o;

    auto* ingest_cmd = app.add_subcommand("ingest", "Build a knowledge base from a directory of course material");
    ingest_cmd->add_option("--input", o.input, "Directory of .md/.txt files")->required();
    ingest_cmd->add_option("--kb", o.kb, "Knowledge base file to write")->required();
    ingest_cmd->add_option("--embed-target", o.embed_target, "What to embed per section")
        ->check(CLI::IsMember({"header", "header+body", "header_only", "header_plus_body_prefix"}));
    ingest_cmd->add_option("--config", o.config, "Engine config file");

    auto* ask_cmd = app.add_subcommand("ask", "Answer one question");
    ask_cmd->add_option("--kb", o.kb, "Knowledge base file")->required();
    ask_cmd->add_option("question", o.question, "Question text")->required();
    ask_cmd->add_flag("--json", o.json_output, "Print the answer as JSON");
    ask_cmd->add_option("--config", o.config, "Engine config file");

    auto* chat_cmd = app.add_subcommand("chat", "Interactive session with history (/quit to leave)");
    chat_cmd->add_option("--kb", o.kb, "Knowledge base file")->required();
    chat_cmd->add_option("--config", o.config, "Engine config file");

    auto* eval_cmd = app.add_subcommand("eval", "Run a JSONL test set and write a metric report");
    eval_cmd->add_option("--kb", o.kb, "Knowledge base file")->required();
    eval_cmd->add_option("--testset", o.testset, "JSONL test set")->required();
    eval_cmd->add_option("--out", o.out_path, "Report JSON to write")->required();
    eval_cmd->add_option("--judge", o.judge, "Statement judge")->check(CLI::IsMember({"deterministic", "llm"}));
    eval_cmd->add_option("--parallel", o.parallel, "Concurrent cases")->check(CLI::PositiveNumber);
    eval_cmd->add_option("--config", o.config, "Engine config file");

    auto* report_cmd = app.add_subcommand("report", "Render a report as CSV or Markdown");
    report_cmd->add_option("--in", o.in_path, "Report JSON")->required();
    report_cmd->add_option("--format", o.format, "csv or md")->required()->check(CLI::IsMember({"csv", "md"}));
    report_cmd->add_option("--out", o.out_path, "Write to a file instead of stdout");

    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
    serve_cmd->add_option("--config", o.config, "Engine config file")->required();

    std::vector<std::string> argv_storage{"coursepilot"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_storage) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (app.got_subcommand(ingest_cmd)) return run_ingest(o, out, err);
        if (app.got_subcommand(ask_cmd)) return run_ask(o, out);
        if (app.got_subcommand(chat_cmd)) return run_chat(o, in, out, err);
        if (app.got_subcommand(eval_cmd)) return run_eval(o, out);
        if (app.got_subcommand(report_cmd)) return run_report(o, out);
        if (app.got_subcommand(serve_cmd)) return run_serve(o);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    err << app.help();
    return kExitUsage;
}

}  // namespace coursepilot::cli
