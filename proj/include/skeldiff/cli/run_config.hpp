#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "skeldiff/codec.hpp"

namespace skeldiff::cli {

inline constexpr const char* kVersion = "skeldiff 0.1.0";

/// Output directory of one command run. Creating it writes config.json
/// (the fully resolved configuration plus version stamp); log lines go to
/// log.txt and the console. Nothing time-dependent is recorded.
class RunContext {
public:
    RunContext(std::filesystem::path out_dir, const std::string& command, nlohmann::json resolved, std::ostream& console);

    void log(const std::string& line);
    std::filesystem::path path(const std::string& name) const { return dir_ / name; }
    const nlohmann::json& config() const { return config_; }

private:
    std::filesystem::path dir_;
    nlohmann::json config_;
    std::ostream& console_;
};

/// Value at a '/'-separated key path, with a config error naming the key
/// when it is missing or has the wrong type.
template <typename T>
T get(const nlohmann::json& cfg, const std::string& key);
std::string get_path(const nlohmann::json& cfg, const std::string& key);  // non-empty string

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

nlohmann::json norm_to_json(const NormParams& p);
NormParams norm_from_json(const nlohmann::json& j);

/// Fixed-precision number formatting for logs and CSV files.
std::string fmt(double v, int precision = 6);

}  // namespace skeldiff::cli
