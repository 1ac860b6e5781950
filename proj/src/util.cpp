#include "forge/util.hpp"

#include "forge/error.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <fstream>
#include <random>
#include <sstream>

namespace forge {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::UnknownBackend: return "UnknownBackend";
        case ErrorCode::DuplicateBackend: return "DuplicateBackend";
        case ErrorCode::TranscriptExhausted: return "TranscriptExhausted";
        case ErrorCode::PredicateMismatch: return "PredicateMismatch";
        case ErrorCode::ConcurrentConsumption: return "ConcurrentConsumption";
        case ErrorCode::InvalidTranscript: return "InvalidTranscript";
        case ErrorCode::DuplicateAgentName: return "DuplicateAgentName";
        case ErrorCode::UnresolvableTool: return "UnresolvableTool";
        case ErrorCode::InvalidModel: return "InvalidModel";
        case ErrorCode::InvalidSpec: return "InvalidSpec";
        case ErrorCode::AgentNotFound: return "AgentNotFound";
        case ErrorCode::SubAgentError: return "SubAgentError";
        case ErrorCode::MemberFailed: return "MemberFailed";
        case ErrorCode::BoardClosed: return "BoardClosed";
        case ErrorCode::NotBoardMember: return "NotBoardMember";
        case ErrorCode::UnknownBoard: return "UnknownBoard";
        case ErrorCode::StepLimitExceeded: return "StepLimitExceeded";
        case ErrorCode::MalformedRegistry: return "MalformedRegistry";
        case ErrorCode::UnknownCategory: return "UnknownCategory";
        case ErrorCode::UnknownTool: return "UnknownTool";
        case ErrorCode::InvalidManifest: return "InvalidManifest";
        case ErrorCode::DuplicateTool: return "DuplicateTool";
        case ErrorCode::OutOfScope: return "OutOfScope";
        case ErrorCode::ArgValidation: return "ArgValidation";
        case ErrorCode::UnknownEnvironment: return "UnknownEnvironment";
        case ErrorCode::DriverUnavailable: return "DriverUnavailable";
        case ErrorCode::SetupFailed: return "SetupFailed";
        case ErrorCode::SandboxDead: return "SandboxDead";
        case ErrorCode::UnknownHandle: return "UnknownHandle";
        case ErrorCode::NotFinished: return "NotFinished";
        case ErrorCode::Busy: return "Busy";
        case ErrorCode::UnknownSnapshot: return "UnknownSnapshot";
        case ErrorCode::InvalidParent: return "InvalidParent";
        case ErrorCode::RunClosed: return "RunClosed";
        case ErrorCode::NothingToSummarize: return "NothingToSummarize";
        case ErrorCode::UnknownRun: return "UnknownRun";
        case ErrorCode::NoRawAttachment: return "NoRawAttachment";
        case ErrorCode::MalformedPattern: return "MalformedPattern";
        case ErrorCode::EmptyLabel: return "EmptyLabel";
        case ErrorCode::ProviderFailure: return "ProviderFailure";
        case ErrorCode::UnknownNode: return "UnknownNode";
        case ErrorCode::UnknownNodeType: return "UnknownNodeType";
        case ErrorCode::DuplicateEdge: return "DuplicateEdge";
        case ErrorCode::InvalidQuery: return "InvalidQuery";
        case ErrorCode::RoutingFailure: return "RoutingFailure";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
    SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest.data());
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(digest.size() * 2);
    for (unsigned char b : digest) {
        out.push_back(kHex[b >> 4]);
        out.push_back(kHex[b & 0xf]);
    }
    return out;
}

std::string base64_encode(std::string_view data) {
    std::string out(4 * ((data.size() + 2) / 3), '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(data.data()),
                            static_cast<int>(data.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string base64_decode(std::string_view text) {
    if (text.empty()) return {};
    if (text.size() % 4 != 0) throw Error(ErrorCode::ParseError, "base64 length not a multiple of 4");
    std::string out(3 * text.size() / 4, '\0');
    int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(text.data()),
                            static_cast<int>(text.size()));
    if (n < 0) throw Error(ErrorCode::ParseError, "invalid base64");
    // EVP_DecodeBlock keeps the padding bytes as zeros.
    std::size_t pad = 0;
    if (text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

std::string random_token() {
    static thread_local std::mt19937_64 gen{std::random_device{}()};
    std::ostringstream os;
    os << std::hex;
    for (int i = 0; i < 2; ++i) {
        std::uint64_t v = gen();
        for (int k = 15; k >= 0; --k) os << ((v >> (k * 4)) & 0xf);
    }
    return os.str();
}

std::int64_t monotonic_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool contains_ci(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) return true;
    return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

std::string utf8_prefix(std::string_view s, std::size_t limit) {
    if (s.size() <= limit) return std::string(s);
    std::size_t cut = limit;
    while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
    return std::string(s.substr(0, cut));
}

std::string shell_quote(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out.push_back(c);
    }
    out.push_back('\'');
    return out;
}

std::string dump_lossy(const json& j, int indent) {
    return j.dump(indent, ' ', false, json::error_handler_t::replace);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    fs::path tmp = path;
    tmp += ".tmp-" + random_token().substr(0, 8);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::Io, "short write on " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorCode::Io, "cannot rename into " + path.string());
    }
}

bool is_identifier(std::string_view s) {
    if (s.empty() || s.size() > 128) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_' || c == '-' || c == '.';
    });
}

}  // namespace forge
