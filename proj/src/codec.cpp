#include "skeldiff/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "skeldiff/error.hpp"

namespace skeldiff {

namespace {

void check_sequence(const JointSequence& seq) {
    if (seq.num_frames == 0 || seq.num_joints == 0)
        fail(ErrorCategory::invalid_argument, "joint sequence '" + seq.seq_id + "' is empty");
    if (seq.coords.size() != seq.num_frames * seq.num_joints * 3)
        fail(ErrorCategory::shape, "joint sequence '" + seq.seq_id + "' has " + std::to_string(seq.coords.size()) +
                                       " coordinates, expected " + std::to_string(seq.num_frames * seq.num_joints * 3));
}

}  // namespace

NormParams fit_norm_params(std::span<const JointSequence> dataset, std::vector<std::string>* warnings) {
    if (dataset.empty()) fail(ErrorCategory::invalid_argument, "fit_norm_params: empty dataset");
    std::array<double, 3> lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    for (const auto& seq : dataset) {
        check_sequence(seq);
        for (std::size_t i = 0; i < seq.coords.size(); ++i) {
            const double v = seq.coords[i];
            if (!std::isfinite(v)) fail(ErrorCategory::numeric, "fit_norm_params: non-finite coordinate in '" + seq.seq_id + "'");
            const std::size_t a = i % 3;
            lo[a] = std::min(lo[a], v);
            hi[a] = std::max(hi[a], v);
        }
    }
    NormParams p;
    for (std::size_t a = 0; a < 3; ++a) {
        p.offset[a] = 0.5 * (lo[a] + hi[a]);
        const double half = 0.5 * (hi[a] - lo[a]);
        if (half < kMinScale) {
            p.scale[a] = kMinScale;
            if (warnings) warnings->push_back("fit_norm_params: axis " + std::to_string(a) + " has zero range; scale floored to 1e-9");
        } else {
            p.scale[a] = half;
        }
    }
    return p;
}

JointSequence resample_time(const JointSequence& seq, std::size_t target_frames) {
    check_sequence(seq);
    if (target_frames < 2) fail(ErrorCategory::invalid_argument, "resample_time: target length must be >= 2");
    if (seq.num_frames == target_frames) return seq;
    JointSequence out = seq;
    out.num_frames = target_frames;
    out.coords.assign(target_frames * seq.num_joints * 3, 0.0);
    const std::size_t row = seq.num_joints * 3;
    if (seq.num_frames == 1) {
        for (std::size_t t = 0; t < target_frames; ++t) std::copy_n(seq.coords.begin(), row, out.coords.begin() + t * row);
        return out;
    }
    const double span = static_cast<double>(seq.num_frames - 1);
    for (std::size_t t = 0; t < target_frames; ++t) {
        const double u = static_cast<double>(t) * span / static_cast<double>(target_frames - 1);
        std::size_t i0 = static_cast<std::size_t>(std::floor(u));
        i0 = std::min(i0, seq.num_frames - 2);
        const double f = u - static_cast<double>(i0);
        const double* a = seq.coords.data() + i0 * row;
        const double* b = a + row;
        double* o = out.coords.data() + t * row;
        for (std::size_t k = 0; k < row; ++k) o[k] = (1.0 - f) * a[k] + f * b[k];
    }
    return out;
}

ImageMeta centered_meta(std::size_t joints, const NormParams& norm, std::size_t original_length) {
    if (joints == 0 || joints > kImageSize)
        fail(ErrorCategory::invalid_argument, "skeleton image holds 1.." + std::to_string(kImageSize) + " joints, got " +
                                                  std::to_string(joints));
    ImageMeta m;
    m.joints = joints;
    m.frames = joints;
    m.row0 = (kImageSize - joints) / 2;
    m.col0 = (kImageSize - joints) / 2;
    m.norm = norm;
    m.original_length = original_length;
    return m;
}

SkeletonImage encode(const JointSequence& seq, const NormParams& params) {
    check_sequence(seq);
    if (seq.num_joints > kImageSize)
        fail(ErrorCategory::invalid_argument, "encode: " + std::to_string(seq.num_joints) + " joints exceed image size " +
                                                  std::to_string(kImageSize));
    if (seq.num_frames != seq.num_joints)
        fail(ErrorCategory::invalid_argument, "encode: sequence must be resampled to T = J (" + std::to_string(seq.num_joints) +
                                                  "), got " + std::to_string(seq.num_frames) + " frames");
    for (double s : params.scale)
        if (!(s > 0.0)) fail(ErrorCategory::invalid_argument, "encode: normalization scale must be positive");
    SkeletonImage img;
    img.pixels.assign(kImageSize * kImageSize * 3, 0.0);
    img.meta = centered_meta(seq.num_joints, params, seq.num_frames);
    for (std::size_t j = 0; j < seq.num_joints; ++j)
        for (std::size_t t = 0; t < seq.num_frames; ++t)
            for (std::size_t a = 0; a < 3; ++a)
                img.at(img.meta.row0 + j, img.meta.col0 + t, a) = (seq.at(t, j, a) - params.offset[a]) / params.scale[a];
    return img;
}

JointSequence decode(const SkeletonImage& img) {
    const ImageMeta& m = img.meta;
    if (img.pixels.size() != img.height * img.width * 3)
        fail(ErrorCategory::format, "decode: pixel buffer size does not match " + std::to_string(img.height) + "x" +
                                        std::to_string(img.width) + "x3");
    if (m.joints == 0 || m.frames == 0 || m.row0 + m.joints > img.height || m.col0 + m.frames > img.width)
        fail(ErrorCategory::format, "decode: content block lies outside the image");
    JointSequence seq(m.frames, m.joints);
    for (std::size_t j = 0; j < m.joints; ++j)
        for (std::size_t t = 0; t < m.frames; ++t)
            for (std::size_t a = 0; a < 3; ++a)
                seq.at(t, j, a) = img.at(m.row0 + j, m.col0 + t, a) * m.norm.scale[a] + m.norm.offset[a];
    return seq;
}

std::vector<double> to_chw(const SkeletonImage& img) {
    const std::size_t hw = img.height * img.width;
    std::vector<double> out(3 * hw);
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < 3; ++c) out[c * hw + p] = img.pixels[p * 3 + c];
    return out;
}

SkeletonImage from_chw(std::span<const double> chw, const ImageMeta& meta) {
    const std::size_t hw = kImageSize * kImageSize;
    if (chw.size() != 3 * hw) fail(ErrorCategory::shape, "from_chw: expected 3x32x32 buffer");
    SkeletonImage img;
    img.meta = meta;
    img.pixels.assign(hw * 3, 0.0);
    for (std::size_t r = meta.row0; r < meta.row0 + meta.joints; ++r)
        for (std::size_t c = meta.col0; c < meta.col0 + meta.frames; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = chw[ch * hw + r * kImageSize + c];
    return img;
}

static_assert(std::endian::native == std::endian::little, "image I/O assumes a little-endian host");

void write_image(std::ostream& out, const SkeletonImage& img) {
    const ImageMeta& m = img.meta;
    nlohmann::json h{{"format", "skeldiff-image"},
                     {"height", img.height},
                     {"width", img.width},
                     {"channels", 3},
                     {"row0", m.row0},
                     {"col0", m.col0},
                     {"joints", m.joints},
                     {"frames", m.frames},
                     {"offset", m.norm.offset},
                     {"scale", m.norm.scale},
                     {"original_length", m.original_length}};
    out << h.dump() << '\n';
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
    if (!out) fail(ErrorCategory::io, "write_image: stream error");
}

SkeletonImage read_image(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCategory::format, "read_image: missing header line");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(line);
        SkeletonImage img;
        img.height = h.at("height").get<std::size_t>();
        img.width = h.at("width").get<std::size_t>();
        if (h.at("channels").get<std::size_t>() != 3) fail(ErrorCategory::format, "read_image: expected 3 channels");
        img.meta.row0 = h.at("row0").get<std::size_t>();
        img.meta.col0 = h.at("col0").get<std::size_t>();
        img.meta.joints = h.at("joints").get<std::size_t>();
        img.meta.frames = h.at("frames").get<std::size_t>();
        img.meta.norm.offset = h.at("offset").get<std::array<double, 3>>();
        img.meta.norm.scale = h.at("scale").get<std::array<double, 3>>();
        img.meta.original_length = h.at("original_length").get<std::size_t>();
        img.pixels.resize(img.height * img.width * 3);
        in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
        if (!in) fail(ErrorCategory::format, "read_image: pixel buffer truncated");
        return img;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCategory::format, std::string("read_image: bad header: ") + e.what());
    }
}

void save_image(const std::filesystem::path& path, const SkeletonImage& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCategory::io, "cannot open " + path.string());
    write_image(out, img);
}

SkeletonImage load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCategory::io, "cannot open " + path.string());
    return read_image(in);
}

}  // namespace skeldiff
