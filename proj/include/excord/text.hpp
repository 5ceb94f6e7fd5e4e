#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace excord::text {

// A token with its [begin, end) byte range in the source string.
struct Token {
    std::string text;
    std::size_t begin = 0;
    std::size_t end = 0;

    bool operator==(const Token&) const = default;
};

// Whitespace split, with every ASCII punctuation character emitted as its own
// token. Bytes >= 0x80 are treated as word characters so UTF-8 stays intact.
std::vector<Token> tokenize(std::string_view input);

std::vector<std::string> token_strings(std::string_view input);

std::string ascii_lower(std::string_view input);

bool starts_upper(std::string_view word);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 1469598103934665603ULL);

std::string hex64(std::uint64_t value);

// Converts a code-point offset (as produced by Python-based corpora) to a byte
// offset into the UTF-8 string. Offsets past the end clamp to size().
std::size_t codepoint_to_byte_offset(std::string_view utf8, std::size_t codepoint_offset);

std::size_t codepoint_length(std::string_view utf8);

}  // namespace excord::text
