#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "steerlab/error.hpp"
#include "steerlab/judge.hpp"

#include <httplib.h>
#include <json.hpp>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <thread>

using namespace steerlab;
using nlohmann::json;

namespace {

// Local stand-in for a judge service.
class StubServer {
public:
    StubServer() {
        server_.Post("/echo", [this](const httplib::Request& req, httplib::Response& res) {
            {
                std::lock_guard lock(mu_);
                last_auth_ = req.get_header_value("Authorization");
                last_body_ = req.body;
            }
            const auto body = json::parse(req.body);
            const std::string text = body.at("text");
            std::string label = "neither";
            if (text.find(body.at("target").get<std::string>()) != std::string::npos) label = "target";
            if (text.find(body.at("opposite").get<std::string>()) != std::string::npos) label = "opposite";
            res.set_content(json{{"label", label}}.dump(), "application/json");
        });
        server_.Post("/garbage", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("<html>oops</html>", "text/html");
        });
        server_.Post("/wrong-label", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"label":"maybe"})", "application/json");
        });
        server_.Post("/no-label", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"verdict":"target"})", "application/json");
        });
        server_.Post("/error", [](const httplib::Request&, httplib::Response& res) {
            res.status = 500;
            res.set_content("{}", "application/json");
        });
        server_.Post("/slow", [](const httplib::Request&, httplib::Response& res) {
            std::this_thread::sleep_for(std::chrono::milliseconds(1500));
            res.set_content(R"({"label":"target"})", "application/json");
        });
        server_.Post("/counted", [this](const httplib::Request&, httplib::Response& res) {
            const int now = ++in_flight_;
            int seen = peak_.load();
            while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(40));
            --in_flight_;
            res.set_content(R"({"label":"opposite"})", "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }
    std::string last_auth() {
        std::lock_guard lock(mu_);
        return last_auth_;
    }
    std::string last_body() {
        std::lock_guard lock(mu_);
        return last_body_;
    }
    int peak() const { return peak_.load(); }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::mutex mu_;
    std::string last_auth_;
    std::string last_body_;
    std::atomic<int> in_flight_{0};
    std::atomic<int> peak_{0};
};

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::invalid_argument;
}

RemoteJudgeConfig config_for(const std::string& url, double timeout = 5.0) {
    RemoteJudgeConfig c;
    c.url = url;
    c.token = "secret-token";
    c.timeout_seconds = timeout;
    return c;
}

} // namespace

TEST_CASE("echo endpoint") {
    StubServer stub;
    const auto cfg = config_for(stub.url("/echo"));
    CHECK(judge_remote("import torch", "pt_tf", "torch", "tensorflow", cfg).label == Label::target);
    CHECK(stub.last_auth() == "Bearer secret-token");
    const auto sent = json::parse(stub.last_body());
    CHECK(sent == json{{"task", "pt_tf"}, {"target", "torch"}, {"opposite", "tensorflow"}, {"text", "import torch"}});
    CHECK(judge_remote("import tensorflow", "pt_tf", "torch", "tensorflow", cfg).label == Label::opposite);
    const auto empty = judge_remote("  ", "pt_tf", "torch", "tensorflow", cfg);
    CHECK(empty.label == Label::neither);
    CHECK(empty.truncated);
}

TEST_CASE("non-conforming payloads are protocol errors") {
    StubServer stub;
    for (const char* path : {"/garbage", "/wrong-label", "/no-label", "/error", "/missing"}) {
        CAPTURE(path);
        CHECK(code_of([&] { judge_remote("x", "t", "a", "b", config_for(stub.url(path))); }) ==
              ErrorCode::remote_protocol);
    }
}

TEST_CASE("slow endpoint times out within the budget") {
    StubServer stub;
    const auto started = std::chrono::steady_clock::now();
    CHECK(code_of([&] { judge_remote("x", "t", "a", "b", config_for(stub.url("/slow"), 0.3)); }) ==
          ErrorCode::remote_timeout);
    CHECK(std::chrono::steady_clock::now() - started < std::chrono::milliseconds(1400));
}

TEST_CASE("closed port is unreachable") {
    // Bind without listening, note the port, close: connections are refused.
    int port = 0;
    {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        REQUIRE(fd >= 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
        socklen_t len = sizeof addr;
        REQUIRE(::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0);
        port = ntohs(addr.sin_port);
        ::close(fd);
    }
    CHECK(code_of([&] {
              judge_remote("x", "t", "a", "b", config_for("http://127.0.0.1:" + std::to_string(port) + "/j", 2.0));
          }) == ErrorCode::remote_unreachable);
}

TEST_CASE("configuration errors") {
    CHECK(code_of([] { judge_remote("x", "t", "a", "b", config_for("")); }) == ErrorCode::invalid_argument);
    CHECK(code_of([] { judge_remote("x", "t", "a", "b", config_for("https://example.com/j")); }) ==
          ErrorCode::invalid_argument);
    CHECK(code_of([] { judge_remote("x", "t", "a", "b", config_for("http://host:notaport/j")); }) ==
          ErrorCode::invalid_argument);
}

TEST_CASE("environment configuration") {
    setenv("STEERLAB_JUDGE_URL", "http://127.0.0.1:9/judge", 1);
    setenv("STEERLAB_JUDGE_TOKEN", "abc", 1);
    const auto cfg = RemoteJudgeConfig::from_env();
    CHECK(cfg.url == "http://127.0.0.1:9/judge");
    CHECK(cfg.token == "abc");
    CHECK(cfg.timeout_seconds == 30.0);
    CHECK(cfg.max_in_flight == 4u);
    unsetenv("STEERLAB_JUDGE_URL");
    unsetenv("STEERLAB_JUDGE_TOKEN");
}

TEST_CASE("batches respect the in-flight bound and keep order") {
    StubServer stub;
    auto cfg = config_for(stub.url("/counted"));
    cfg.max_in_flight = 2;
    const RemoteJudge judge(cfg, "t", "a", "b");
    std::vector<GenerationRecord> recs(8);
    for (auto& r : recs) {
        r.output_text = "b";
        r.output_ids = std::vector<TokenId>(20, 5);
    }
    const auto verdicts = judge.judge_batch(recs);
    REQUIRE(verdicts.size() == 8u);
    for (const auto& v : verdicts) {
        CHECK(v.label == Label::opposite);
        CHECK(v.degenerate);
    }
    CHECK(stub.peak() <= 2);
    CHECK(stub.peak() >= 1);
}
