#include "steerlab/error.hpp"
#include "steerlab/judge.hpp"
#include "steerlab/parallel.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdlib>

namespace steerlab {

using nlohmann::json;

namespace {

struct Endpoint {
    std::string host;
    int port = 80;
    std::string path = "/";
};

Endpoint parse_url(const std::string& url) {
    constexpr std::string_view scheme = "http://";
    if (url.rfind(scheme, 0) != 0) {
        throw Error(ErrorCode::invalid_argument, "judge endpoint must be an http:// URL, got '" + url + "'");
    }
    Endpoint ep;
    std::string rest = url.substr(scheme.size());
    const auto slash = rest.find('/');
    if (slash != std::string::npos) {
        ep.path = rest.substr(slash);
        rest = rest.substr(0, slash);
    }
    const auto colon = rest.rfind(':');
    if (colon != std::string::npos) {
        try {
            std::size_t used = 0;
            ep.port = std::stoi(rest.substr(colon + 1), &used);
            if (used != rest.size() - colon - 1 || ep.port <= 0 || ep.port > 65535) throw std::invalid_argument("port");
        } catch (const std::exception&) {
            throw Error(ErrorCode::invalid_argument, "judge endpoint has an invalid port: '" + url + "'");
        }
        rest = rest.substr(0, colon);
    }
    if (rest.empty()) throw Error(ErrorCode::invalid_argument, "judge endpoint has no host: '" + url + "'");
    ep.host = rest;
    return ep;
}

} // namespace

RemoteJudgeConfig RemoteJudgeConfig::from_env() {
    RemoteJudgeConfig cfg;
    if (const char* url = std::getenv("STEERLAB_JUDGE_URL")) cfg.url = url;
    if (const char* token = std::getenv("STEERLAB_JUDGE_TOKEN")) cfg.token = token;
    return cfg;
}

Verdict judge_remote(std::string_view text, std::string_view task, std::string_view target,
                     std::string_view opposite, const RemoteJudgeConfig& config) {
    if (config.url.empty()) {
        throw Error(ErrorCode::invalid_argument, "no judge endpoint configured (set STEERLAB_JUDGE_URL)");
    }
    if (!(config.timeout_seconds > 0.0)) throw Error(ErrorCode::invalid_argument, "judge timeout must be positive");
    const Endpoint ep = parse_url(config.url);

    httplib::Client client(ep.host, ep.port);
    const auto budget = std::chrono::duration<double>(config.timeout_seconds);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(budget);
    client.set_connection_timeout(micros);
    client.set_read_timeout(micros);
    client.set_write_timeout(micros);
    if (!config.token.empty()) client.set_bearer_token_auth(config.token);

    const json payload = {{"task", task}, {"target", target}, {"opposite", opposite}, {"text", text}};
    const auto started = std::chrono::steady_clock::now();
    auto result = client.Post(ep.path, payload.dump(), "application/json");
    const auto elapsed = std::chrono::steady_clock::now() - started;

    if (!result) {
        const auto err = result.error();
        const bool out_of_time = err == httplib::Error::ConnectionTimeout ||
                                 (err == httplib::Error::Read && elapsed >= budget * 0.9);
        if (out_of_time) {
            throw Error(ErrorCode::remote_timeout, "judge endpoint " + config.url + " did not answer within " +
                                                       std::to_string(config.timeout_seconds) + " s");
        }
        if (err == httplib::Error::Connection) {
            throw Error(ErrorCode::remote_unreachable, "judge endpoint " + config.url + " is unreachable");
        }
        throw Error(ErrorCode::remote_unreachable,
                    "request to judge endpoint " + config.url + " failed: " + httplib::to_string(err));
    }
    if (result->status != 200) {
        throw Error(ErrorCode::remote_protocol,
                    "judge endpoint answered HTTP " + std::to_string(result->status));
    }

    json body;
    try {
        body = json::parse(result->body);
    } catch (const json::parse_error&) {
        throw Error(ErrorCode::remote_protocol, "judge response is not JSON");
    }
    if (!body.is_object() || !body.contains("label") || !body["label"].is_string()) {
        throw Error(ErrorCode::remote_protocol, "judge response lacks a string 'label'");
    }
    Verdict v;
    try {
        v.label = label_from_string(body["label"].get<std::string>());
    } catch (const Error& e) {
        throw Error(ErrorCode::remote_protocol, std::string("judge response: ") + e.what());
    }
    v.truncated = text.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
    return v;
}

RemoteJudge::RemoteJudge(RemoteJudgeConfig config, std::string task, std::string target, std::string opposite,
                         DegeneracyConfig degeneracy)
    : config_(std::move(config)),
      task_(std::move(task)),
      target_(std::move(target)),
      opposite_(std::move(opposite)),
      degeneracy_(degeneracy) {}

Verdict RemoteJudge::judge(const GenerationRecord& record) const {
    Verdict v = judge_remote(record.output_text, task_, target_, opposite_, config_);
    score_degeneracy(v, record.output_ids, degeneracy_);
    return v;
}

std::vector<Verdict> RemoteJudge::judge_batch(std::span<const GenerationRecord> records) const {
    std::vector<Verdict> out(records.size());
    parallel_for(records.size(), std::max<std::size_t>(config_.max_in_flight, 1),
                 [&](std::size_t i) { out[i] = judge(records[i]); });
    return out;
}

} // namespace steerlab
