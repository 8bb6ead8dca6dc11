#include "veriloop/remote_verifier.hpp"

#include <cmath>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace veriloop::remote {

using nlohmann::json;

RemoteVerdict parse_verdict(const std::string& body) {
    json j = json::parse(body, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded())
        throw RemoteError(RemoteError::Kind::protocol, "verdict is not valid JSON", body);
    if (!j.is_object())
        throw RemoteError(RemoteError::Kind::protocol, "verdict is not a JSON object", body);

    auto require = [&](const char* key) -> const json& {
        auto it = j.find(key);
        if (it == j.end())
            throw RemoteError(RemoteError::Kind::protocol,
                              std::string("verdict missing key \"") + key + "\"", body);
        return *it;
    };

    const json& passed = require("passed");
    const json& score = require("average score");
    const json& reflection = require("reflection");
    const json& issues = require("issues");
    const json& must_fix = require("must_fix");

    if (!passed.is_boolean())
        throw RemoteError(RemoteError::Kind::protocol, "\"passed\" must be a boolean", body);
    if (!score.is_number())
        throw RemoteError(RemoteError::Kind::protocol, "\"average score\" must be a number",
                          body);
    if (!reflection.is_string() || !issues.is_string() || !must_fix.is_string())
        throw RemoteError(RemoteError::Kind::protocol,
                          "\"reflection\", \"issues\" and \"must_fix\" must be strings", body);

    RemoteVerdict v;
    v.passed = passed.get<bool>();
    v.average_score = score.get<double>();
    v.reflection = reflection.get<std::string>();
    v.issues = issues.get<std::string>();
    v.must_fix = must_fix.get<std::string>();

    if (!std::isfinite(v.average_score) || v.average_score < 0.0 || v.average_score > 1.0)
        throw RemoteError(RemoteError::Kind::protocol,
                          "\"average score\" must lie in [0, 1]", body);
    // Judge contract: a pass verdict requires an average score above 0.95.
    if (v.passed && !(v.average_score > 0.95))
        throw RemoteError(RemoteError::Kind::rejected,
                          "verdict rejected: passed=true with average score <= 0.95", body);
    return v;
}

RemoteVerdict verify_remote(const RemoteEndpoint& endpoint, const std::string& prompt,
                            const std::string& generation,
                            const std::vector<std::string>& conditions) {
    json req;
    req["prompt"] = prompt;
    req["generation"] = generation;
    req["conditions"] = conditions;

    httplib::Client client(endpoint.host, endpoint.port);
    client.set_connection_timeout(0, endpoint.timeout_ms * 1000);
    client.set_read_timeout(0, endpoint.timeout_ms * 1000);
    client.set_write_timeout(0, endpoint.timeout_ms * 1000);

    httplib::Result res = client.Post(endpoint.path, req.dump(), "application/json");
    if (!res)
        throw RemoteError(RemoteError::Kind::transport,
                          "transport failure contacting " + endpoint.host + ":" +
                              std::to_string(endpoint.port) + " (" +
                              httplib::to_string(res.error()) + ")");
    if (res->status != 200)
        throw RemoteError(RemoteError::Kind::protocol,
                          "unexpected HTTP status " + std::to_string(res->status), res->body);
    return parse_verdict(res->body);
}

}  // namespace veriloop::remote
