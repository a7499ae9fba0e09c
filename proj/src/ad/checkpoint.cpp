#include "skeldiff/ad/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "skeldiff/error.hpp"

namespace skeldiff::ad {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr const char* kFormat = "skeldiff-params";
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json manifest;
    manifest["format"] = kFormat;
    manifest["version"] = 1;
    manifest["meta"] = ckpt.meta;
    manifest["tensors"] = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        manifest["tensors"].push_back(
            {{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}, {"count", t.tensor.size()}});
        offset += t.tensor.size();
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCategory::io, "cannot open checkpoint for writing: " + path.string());
    out << manifest.dump() << '\n';
    for (const auto& t : ckpt.tensors) {
        out.write(reinterpret_cast<const char*>(t.tensor.data()),
                  static_cast<std::streamsize>(t.tensor.size() * sizeof(double)));
    }
    if (!out) fail(ErrorCategory::io, "failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCategory::io, "cannot open checkpoint: " + path.string());
    std::string header;
    if (!std::getline(in, header)) fail(ErrorCategory::format, "checkpoint missing manifest line: " + path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCategory::format, "checkpoint manifest is not valid JSON: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != kFormat) fail(ErrorCategory::format, "not a skeldiff checkpoint: " + path.string());
    Checkpoint ckpt;
    ckpt.meta = manifest.value("meta", nlohmann::json::object());
    std::size_t expected_offset = 0;
    for (const auto& entry : manifest.at("tensors")) {
        NamedTensor nt;
        nt.name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        const auto count = entry.at("count").get<std::size_t>();
        if (count != numel(shape) || entry.at("offset").get<std::size_t>() != expected_offset) {
            fail(ErrorCategory::format, "checkpoint entry '" + nt.name + "' has inconsistent shape/offset");
        }
        std::vector<double> buf(count);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) fail(ErrorCategory::format, "checkpoint truncated while reading '" + nt.name + "'");
        nt.tensor = Tensor(std::move(shape), std::move(buf));
        ckpt.tensors.push_back(std::move(nt));
        expected_offset += count;
    }
    return ckpt;
}

}  // namespace skeldiff::ad
