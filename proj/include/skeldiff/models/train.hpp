#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "skeldiff/ad/tensor.hpp"
#include "skeldiff/dataset.hpp"
#include "skeldiff/diffusion.hpp"
#include "skeldiff/models/denoiser.hpp"
#include "skeldiff/models/st_trans.hpp"

namespace skeldiff::models {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    int batch_size = 32;
    int iterations = 1000;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // 0 disables intermediate checkpoints
    int log_every = 1;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossRow {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    double train_accuracy = 0.0;  // running accuracy over the epoch's batches
    double eval_accuracy = -1.0;  // -1 when no eval set was given
    double mean_loss = 0.0;
};

struct TrainHooks {
    std::function<void(const LossRow&)> on_log;
    std::function<void(int step)> on_checkpoint;
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Encodes every item (resampled to J frames) into a (N, 3, 32, 32) tensor.
ad::Tensor images_tensor(const Dataset& ds, const NormParams& norm);
std::vector<std::size_t> labels_of(const Dataset& ds);
/// Rows of a batch-major tensor.
ad::Tensor gather(const ad::Tensor& x, std::span<const std::size_t> rows);

/// Noise-prediction training: t ~ U{1..T}, eps ~ N(0, I), minimize
/// mse(eps, eps_theta(q_sample(x0, t, eps), t)). Returns the logged losses.
std::vector<LossRow> train_denoiser(Denoiser& model, const ad::Tensor& images, const NoiseSchedule& sched,
                                    const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Cross-entropy training on clean images with one shuffled pass per epoch.
/// `eval_images` may be empty (shape {0}).
std::vector<EpochRecord> train_classifier(STTrans& model, const ad::Tensor& images, std::span<const std::size_t> labels,
                                          const ad::Tensor& eval_images, std::span<const std::size_t> eval_labels,
                                          const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Logits for every image, evaluated in chunks without graph recording.
ad::Tensor predict_logits(const STTrans& model, const ad::Tensor& images, std::size_t chunk = 64);
/// Argmax per row; ties go to the lowest class index.
std::vector<std::size_t> argmax_rows(const ad::Tensor& logits);

}  // namespace skeldiff::models
