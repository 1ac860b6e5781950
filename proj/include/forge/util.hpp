#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace forge {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string sha256_hex(std::string_view data);
std::string base64_encode(std::string_view data);
std::string base64_decode(std::string_view text);

// 128-bit hex token from the system entropy source.
std::string random_token();

// Milliseconds on the steady clock.
std::int64_t monotonic_ms();

std::string to_lower(std::string_view s);
bool contains_ci(std::string_view haystack, std::string_view needle);

// Cuts |s| to at most |limit| bytes without splitting a UTF-8 sequence.
std::string utf8_prefix(std::string_view s, std::size_t limit);

std::string shell_quote(std::string_view s);

// Serializes |j| tolerating invalid UTF-8 in string values.
std::string dump_lossy(const json& j, int indent = -1);

std::string read_file(const fs::path& path);
void write_file_atomic(const fs::path& path, std::string_view bytes);

bool is_identifier(std::string_view s);

}  // namespace forge
