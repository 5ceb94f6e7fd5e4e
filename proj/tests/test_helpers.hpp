#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#ifndef EXCORD_FIXTURES
#error "EXCORD_FIXTURES must point at tests/fixtures"
#endif

namespace testing {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(EXCORD_FIXTURES) / name; }

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("excord-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
