#include "excord/text.hpp"

#include <cctype>
#include <cstdio>

namespace excord::text {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

}  // namespace

std::vector<Token> tokenize(std::string_view input) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    while (i < input.size()) {
        const auto c = static_cast<unsigned char>(input[i]);
        if (is_space(c)) {
            ++i;
            continue;
        }
        if (is_punct(c)) {
            tokens.push_back({std::string(1, input[i]), i, i + 1});
            ++i;
            continue;
        }
        const std::size_t begin = i;
        while (i < input.size()) {
            const auto d = static_cast<unsigned char>(input[i]);
            if (is_space(d) || is_punct(d)) {
                break;
            }
            ++i;
        }
        tokens.push_back({std::string(input.substr(begin, i - begin)), begin, i});
    }
    return tokens;
}

std::vector<std::string> token_strings(std::string_view input) {
    std::vector<std::string> out;
    for (auto& token : tokenize(input)) {
        out.push_back(std::move(token.text));
    }
    return out;
}

std::string ascii_lower(std::string_view input) {
    std::string out(input);
    for (auto& ch : out) {
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    return out;
}

bool starts_upper(std::string_view word) {
    return !word.empty() && std::isupper(static_cast<unsigned char>(word.front())) != 0;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t hash = seed;
    for (const char ch : bytes) {
        hash ^= static_cast<unsigned char>(ch);
        hash *= 1099511628211ULL;
    }
    return hash;
}

std::string hex64(std::uint64_t value) {
    char buffer[17];
    std::snprintf(buffer, sizeof buffer, "%016llx", static_cast<unsigned long long>(value));
    return buffer;
}

std::size_t codepoint_to_byte_offset(std::string_view utf8, std::size_t codepoint_offset) {
    std::size_t seen = 0;
    for (std::size_t i = 0; i < utf8.size(); ++i) {
        const auto c = static_cast<unsigned char>(utf8[i]);
        if ((c & 0xC0) == 0x80) {
            continue;
        }
        if (seen == codepoint_offset) {
            return i;
        }
        ++seen;
    }
    return utf8.size();
}

std::size_t codepoint_length(std::string_view utf8) {
    std::size_t count = 0;
    for (const char ch : utf8) {
        if ((static_cast<unsigned char>(ch) & 0xC0) != 0x80) {
            ++count;
        }
    }
    return count;
}

}  // namespace excord::text
