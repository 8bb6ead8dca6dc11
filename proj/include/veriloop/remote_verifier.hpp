#pragma once
// Client for an external judge service. The wire protocol is a single JSON
// POST:
//
//   request:  { "prompt": string, "generation": string,
//               "conditions": [string, ...] }
//   response: { "passed": boolean, "average score": number in [0,1],
//               "reflection": string, "issues": string, "must_fix": string }
//
// Note the literal space in the "average score" key. Responses claiming
// passed=true with average score <= 0.95 violate the judge contract and are
// rejected client-side.

#include <stdexcept>
#include <string>
#include <vector>

namespace veriloop::remote {

struct RemoteVerdict {
    bool passed = false;
    double average_score = 0.0;
    std::string reflection;
    std::string issues;
    std::string must_fix;
};

struct RemoteError : std::runtime_error {
    enum class Kind {
        transport,  // connection/timeout problems; retryable
        protocol,   // response arrived but is not a valid verdict
        rejected,   // well-formed verdict that violates the judge contract
    };

    RemoteError(Kind k, const std::string& message, std::string raw_body = {})
        : std::runtime_error(message), kind(k), raw(std::move(raw_body)) {}

    bool retryable() const { return kind == Kind::transport; }

    Kind kind;
    std::string raw;  // raw response body, for protocol errors
};

struct RemoteEndpoint {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string path = "/verify";
    int timeout_ms = 5000;
};

// Sends one verification request and returns the parsed verdict. Throws
// RemoteError on transport failure, malformed responses, or contract
// violations.
RemoteVerdict verify_remote(const RemoteEndpoint& endpoint, const std::string& prompt,
                            const std::string& generation,
                            const std::vector<std::string>& conditions);

// Parses and validates a response body; exposed separately so the protocol
// rules are testable without a live server.
RemoteVerdict parse_verdict(const std::string& body);

}  // namespace veriloop::remote
