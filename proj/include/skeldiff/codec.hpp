#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace skeldiff {

/// A skeleton action clip: `num_frames` x `num_joints` x 3 coordinates
/// (meters), stored frame-major.
struct JointSequence {
    std::size_t num_frames = 0;
    std::size_t num_joints = 0;
    std::vector<double> coords;
    int label = 0;
    int subject_id = 0;
    std::string seq_id;

    JointSequence() = default;
    JointSequence(std::size_t frames, std::size_t joints)
        : num_frames(frames), num_joints(joints), coords(frames * joints * 3, 0.0) {}

    double& at(std::size_t t, std::size_t j, std::size_t axis) { return coords[(t * num_joints + j) * 3 + axis]; }
    double at(std::size_t t, std::size_t j, std::size_t axis) const { return coords[(t * num_joints + j) * 3 + axis]; }

    bool operator==(const JointSequence&) const = default;
};

/// Per-axis affine map: normalized = (coord - offset) / scale.
struct NormParams {
    std::array<double, 3> offset{0.0, 0.0, 0.0};
    std::array<double, 3> scale{1.0, 1.0, 1.0};

    bool operator==(const NormParams&) const = default;
};

inline constexpr std::size_t kImageSize = 32;
inline constexpr double kMinScale = 1e-9;

struct ImageMeta {
    std::size_t row0 = 0;   // first content row (joint 0)
    std::size_t col0 = 0;   // first content column (frame 0)
    std::size_t joints = 0; // content rows
    std::size_t frames = 0; // content columns
    NormParams norm;
    std::size_t original_length = 0;

    bool operator==(const ImageMeta&) const = default;
};

/// Square real-valued image; pixels are (row, col, channel) row-major with
/// rows indexing joints, columns indexing time and channels indexing axes.
struct SkeletonImage {
    std::size_t height = kImageSize;
    std::size_t width = kImageSize;
    std::vector<double> pixels;
    ImageMeta meta;

    double& at(std::size_t r, std::size_t c, std::size_t ch) { return pixels[(r * width + c) * 3 + ch]; }
    double at(std::size_t r, std::size_t c, std::size_t ch) const { return pixels[(r * width + c) * 3 + ch]; }

    bool operator==(const SkeletonImage&) const = default;
};

/// Midpoint/half-range per axis over every coordinate of the dataset.
/// Degenerate axes get scale kMinScale and a message appended to `warnings`.
NormParams fit_norm_params(std::span<const JointSequence> dataset, std::vector<std::string>* warnings = nullptr);

/// Linear per-joint resampling to `target_frames` uniformly spaced points
/// spanning the original clip. Endpoints are preserved exactly.
JointSequence resample_time(const JointSequence& seq, std::size_t target_frames);

/// Content placement for a J x J block inside the fixed image.
ImageMeta centered_meta(std::size_t joints, const NormParams& norm, std::size_t original_length);

SkeletonImage encode(const JointSequence& seq, const NormParams& params);
JointSequence decode(const SkeletonImage& img);

/// Image buffer in channel-major (3, H, W) order, the layout the networks use.
std::vector<double> to_chw(const SkeletonImage& img);
/// Inverse of to_chw; padding outside the content block is zeroed.
SkeletonImage from_chw(std::span<const double> chw, const ImageMeta& meta);

// Serialization: one JSON header line carrying the metadata, followed by
// the little-endian float64 pixel buffer in (row, col, channel) order.
void write_image(std::ostream& out, const SkeletonImage& img);
SkeletonImage read_image(std::istream& in);
void save_image(const std::filesystem::path& path, const SkeletonImage& img);
SkeletonImage load_image(const std::filesystem::path& path);

}  // namespace skeldiff
