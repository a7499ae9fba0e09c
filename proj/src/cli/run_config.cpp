#include "skeldiff/cli/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#include "skeldiff/error.hpp"

namespace skeldiff::cli {

RunContext::RunContext(std::filesystem::path out_dir, const std::string& command, nlohmann::json resolved,
                       std::ostream& console)
    : dir_(std::move(out_dir)), config_(std::move(resolved)), console_(console) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) fail(ErrorCategory::io, "cannot create output directory " + dir_.string() + ": " + ec.message());
    nlohmann::json stamped = config_;
    stamped["command"] = command;
    stamped["version"] = kVersion;
    write_json(path("config.json"), stamped);
    std::ofstream(path("log.txt"), std::ios::trunc);
}

void RunContext::log(const std::string& line) {
    std::ofstream f(path("log.txt"), std::ios::app);
    f << line << '\n';
    if (!f) fail(ErrorCategory::io, "cannot append to " + path("log.txt").string());
    console_ << line << '\n';
}

namespace {

const nlohmann::json& at_key(const nlohmann::json& cfg, const std::string& key) {
    const nlohmann::json::json_pointer ptr("/" + key);
    if (!cfg.contains(ptr)) fail(ErrorCategory::config, "missing config key '" + key + "'");
    return cfg.at(ptr);
}

}  // namespace

template <typename T>
T get(const nlohmann::json& cfg, const std::string& key) {
    const auto& v = at_key(cfg, key);
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCategory::config, "config key '" + key + "' has the wrong type: " + v.dump());
    }
}

template int get<int>(const nlohmann::json&, const std::string&);
template double get<double>(const nlohmann::json&, const std::string&);
template bool get<bool>(const nlohmann::json&, const std::string&);
template std::uint64_t get<std::uint64_t>(const nlohmann::json&, const std::string&);
template std::string get<std::string>(const nlohmann::json&, const std::string&);
template std::vector<int> get<std::vector<int>>(const nlohmann::json&, const std::string&);
template std::vector<double> get<std::vector<double>>(const nlohmann::json&, const std::string&);
template nlohmann::json get<nlohmann::json>(const nlohmann::json&, const std::string&);

std::string get_path(const nlohmann::json& cfg, const std::string& key) {
    auto s = get<std::string>(cfg, key);
    if (s.empty()) fail(ErrorCategory::config, "config key '" + key + "' must name a file or directory");
    return s;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream f(path, std::ios::trunc);
    f << j.dump(2) << '\n';
    if (!f) fail(ErrorCategory::io, "cannot write " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorCategory::io, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCategory::format, path.string() + ": " + e.what());
    }
}

nlohmann::json norm_to_json(const NormParams& p) { return {{"offset", p.offset}, {"scale", p.scale}}; }

NormParams norm_from_json(const nlohmann::json& j) {
    NormParams p;
    try {
        p.offset = j.at("offset").get<std::array<double, 3>>();
        p.scale = j.at("scale").get<std::array<double, 3>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCategory::format, std::string("bad normalization parameters: ") + e.what());
    }
    for (double s : p.scale)
        if (!(s > 0.0)) fail(ErrorCategory::format, "normalization scale must be positive");
    return p;
}

std::string fmt(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

}  // namespace skeldiff::cli
